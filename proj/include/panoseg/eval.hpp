#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "panoseg/panoptic_label.hpp"

namespace panoseg {

/// |a and b| / |a or b| over binary masks; 0 when both are empty.
double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

struct CategoryStats {
    double iou_sum = 0.0;
    int tp = 0;
    int fp = 0;
    int fn = 0;

    CategoryStats& operator+=(const CategoryStats& o) {
        iou_sum += o.iou_sum;
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

/// (kind, category) -> matching stats. Keys use SegmentKind's integer value.
using CategoryKey = std::pair<int, int>;

struct MatchedPair {
    int pred_id;
    int gt_id;
    double iou;
};

struct MatchResult {
    std::map<CategoryKey, CategoryStats> stats;
    std::vector<MatchedPair> pairs;
    std::vector<int> unmatched_pred;
    std::vector<int> unmatched_gt;
};

/// Segment matching at IoU > 0.5 within each category. Pixels void in the
/// ground truth are excluded from the union, and predictions mostly covering
/// ground-truth void are discarded rather than counted as false positives.
MatchResult match_segments(const PanopticLabel& pred, const PanopticLabel& gt);

struct CategoryPQ {
    double pq = 0.0, sq = 0.0, rq = 0.0;
    CategoryStats stats;
};

struct PQResult {
    std::map<CategoryKey, CategoryPQ> per_category;
    double pq = 0.0, sq = 0.0, rq = 0.0;
    double pq_things = 0.0, pq_stuff = 0.0;
    int n_categories = 0, n_things = 0, n_stuff = 0;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

/// Accumulates match stats over an image set and finalizes PQ = SQ x RQ per
/// category plus means over the categories present.
class PQAccumulator {
public:
    void add(const MatchResult& m);
    void add(const PanopticLabel& pred, const PanopticLabel& gt) { add(match_segments(pred, gt)); }
    PQResult result() const;

private:
    std::map<CategoryKey, CategoryStats> stats_;
};

}  // namespace panoseg
