#pragma once

#include <filesystem>

#include "panoseg/panoptic_label.hpp"

namespace panoseg {

/// On-disk panoptic prediction: a PNG whose RGB pixels encode the segment
/// id as id = R + 256 G + 65536 B (0 = void), plus a JSON segment table.
void save_panoptic(const PanopticLabel& label, const std::filesystem::path& png_path,
                   const std::filesystem::path& json_path);

PanopticLabel load_panoptic(const std::filesystem::path& png_path,
                            const std::filesystem::path& json_path);

/// Colorized visualization. Categories get a fixed palette hue (things
/// bright, stuff muted), instances of one category vary in brightness,
/// void renders black.
void render_panoptic(const PanopticLabel& label, const std::filesystem::path& png_path);

}  // namespace panoseg
