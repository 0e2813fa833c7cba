#pragma once

#include <filesystem>
#include <vector>

#include "panoseg/data_synth.hpp"

namespace panoseg {

/// Binary run-length encoding: run lengths of alternating values starting
/// with a zero-run, row-major. rle_decode is its inverse.
std::vector<std::int64_t> rle_encode(const std::vector<std::uint8_t>& mask);
std::vector<std::uint8_t> rle_decode(const std::vector<std::int64_t>& runs, std::int64_t size);

/// One sample on disk: sample_NNNNNN.json (annotations, RLE masks, the
/// stuff map as (value, run) pairs) plus sample_NNNNNN.bin holding the raw
/// 3*H*W image bytes. Round-trips bit-exactly.
void save_sample(const PanopticSample& sample, const std::filesystem::path& dir, int index);
PanopticSample load_sample(const std::filesystem::path& dir, int index);

std::filesystem::path sample_json_path(const std::filesystem::path& dir, int index);

/// index.json enumerating the directory's samples.
void save_index(const std::filesystem::path& dir, int count, const DataConfig& cfg,
                std::uint64_t seed);
int load_index_count(const std::filesystem::path& dir);

}  // namespace panoseg
