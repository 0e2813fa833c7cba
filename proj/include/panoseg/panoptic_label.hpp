#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "panoseg/common.hpp"

namespace panoseg {

enum class SegmentKind { Thing, Stuff };

inline const char* kind_name(SegmentKind k) {
    return k == SegmentKind::Thing ? "thing" : "stuff";
}

struct Segment {
    int id = 0;  // nonzero
    int category = 0;
    SegmentKind kind = SegmentKind::Thing;
    std::int64_t area = 0;
    double score = 1.0;
};

/// Final panoptic output: a per-pixel segment-id map (0 = void) plus one
/// table row per id. Ids partition the nonzero pixels.
struct PanopticLabel {
    int height = 0;
    int width = 0;
    std::vector<std::int32_t> id_map;  // H*W
    std::vector<Segment> segments;

    const Segment* find(int id) const {
        for (const Segment& s : segments)
            if (s.id == id) return &s;
        return nullptr;
    }

    /// Checks the id-map/table consistency invariants; throws DataError.
    void validate() const;
};

}  // namespace panoseg
