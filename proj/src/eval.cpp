#include "panoseg/eval.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace panoseg {

void PanopticLabel::validate() const {
    if (static_cast<std::int64_t>(id_map.size()) != static_cast<std::int64_t>(height) * width)
        throw DataError("panoptic label: id map size does not match extents");
    std::unordered_map<int, std::int64_t> areas;
    for (std::int32_t id : id_map)
        if (id != 0) ++areas[id];
    std::unordered_set<int> seen;
    for (const Segment& s : segments) {
        if (s.id == 0) throw DataError("panoptic label: segment id 0 is reserved for void");
        if (!seen.insert(s.id).second)
            throw DataError("panoptic label: duplicate segment id " + std::to_string(s.id));
        auto it = areas.find(s.id);
        if (it == areas.end())
            throw DataError("panoptic label: segment " + std::to_string(s.id) +
                            " has no pixels in the id map");
        if (it->second != s.area)
            throw DataError("panoptic label: segment " + std::to_string(s.id) + " area " +
                            std::to_string(s.area) + " != painted " + std::to_string(it->second));
    }
    if (areas.size() != segments.size())
        throw DataError("panoptic label: id map contains ids missing from the segment table");
}

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    require(a.size() == b.size(), "mask_iou: size mismatch");
    std::int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool av = a[i] != 0, bv = b[i] != 0;
        inter += av && bv;
        uni += av || bv;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

MatchResult match_segments(const PanopticLabel& pred, const PanopticLabel& gt) {
    require(pred.height == gt.height && pred.width == gt.width,
            "match_segments: label extents differ");
    pred.validate();
    gt.validate();

    std::unordered_map<int, const Segment*> pred_seg, gt_seg;
    for (const Segment& s : pred.segments) pred_seg[s.id] = &s;
    for (const Segment& s : gt.segments) gt_seg[s.id] = &s;

    // intersections of every (pred, gt) id pair, gt void included as id 0
    std::unordered_map<std::int64_t, std::int64_t> inter;
    for (size_t i = 0; i < pred.id_map.size(); ++i) {
        const std::int64_t key =
            (static_cast<std::int64_t>(pred.id_map[i]) << 32) | static_cast<std::uint32_t>(gt.id_map[i]);
        ++inter[key];
    }
    auto intersection = [&](int pid, int gid) {
        auto it = inter.find((static_cast<std::int64_t>(pid) << 32) | static_cast<std::uint32_t>(gid));
        return it == inter.end() ? std::int64_t(0) : it->second;
    };

    MatchResult out;
    std::unordered_set<int> matched_pred, matched_gt;
    for (const Segment& g : gt.segments) {
        for (const Segment& p : pred.segments) {
            if (p.kind != g.kind || p.category != g.category) continue;
            const std::int64_t i = intersection(p.id, g.id);
            if (i == 0) continue;
            // union excludes pred pixels that fall on gt void
            const std::int64_t void_overlap = intersection(p.id, 0);
            const std::int64_t uni = p.area + g.area - i - void_overlap;
            const double iou = uni > 0 ? static_cast<double>(i) / static_cast<double>(uni) : 0.0;
            if (iou > 0.5) {
                // the > 0.5 rule makes the match unique on both sides
                require(matched_pred.insert(p.id).second && matched_gt.insert(g.id).second,
                        "match_segments: non-unique match despite IoU > 0.5");
                CategoryStats& s = out.stats[{static_cast<int>(g.kind), g.category}];
                s.iou_sum += iou;
                s.tp += 1;
                out.pairs.push_back({p.id, g.id, iou});
            }
        }
    }
    for (const Segment& g : gt.segments) {
        if (matched_gt.count(g.id)) continue;
        out.stats[{static_cast<int>(g.kind), g.category}].fn += 1;
        out.unmatched_gt.push_back(g.id);
    }
    for (const Segment& p : pred.segments) {
        if (matched_pred.count(p.id)) continue;
        // discard predictions that mostly cover ground-truth void
        if (intersection(p.id, 0) * 2 > p.area) continue;
        out.stats[{static_cast<int>(p.kind), p.category}].fp += 1;
        out.unmatched_pred.push_back(p.id);
    }
    return out;
}

void PQAccumulator::add(const MatchResult& m) {
    for (const auto& [key, stats] : m.stats) stats_[key] += stats;
}

PQResult PQAccumulator::result() const {
    PQResult out;
    double pq_sum = 0.0, sq_sum = 0.0, rq_sum = 0.0, pq_th = 0.0, pq_st = 0.0;
    for (const auto& [key, stats] : stats_) {
        if (stats.tp == 0 && stats.fp == 0 && stats.fn == 0) continue;
        CategoryPQ c;
        c.stats = stats;
        const double denom = stats.tp + 0.5 * stats.fp + 0.5 * stats.fn;
        if (denom > 0.0) {
            c.pq = stats.iou_sum / denom;
            c.rq = stats.tp / denom;
            c.sq = stats.tp > 0 ? stats.iou_sum / stats.tp : 0.0;
        }
        out.per_category[key] = c;
        pq_sum += c.pq;
        sq_sum += c.sq;
        rq_sum += c.rq;
        ++out.n_categories;
        if (key.first == static_cast<int>(SegmentKind::Thing)) {
            pq_th += c.pq;
            ++out.n_things;
        } else {
            pq_st += c.pq;
            ++out.n_stuff;
        }
    }
    if (out.n_categories > 0) {
        out.pq = pq_sum / out.n_categories;
        out.sq = sq_sum / out.n_categories;
        out.rq = rq_sum / out.n_categories;
    }
    if (out.n_things > 0) out.pq_things = pq_th / out.n_things;
    if (out.n_stuff > 0) out.pq_stuff = pq_st / out.n_stuff;
    return out;
}

nlohmann::json PQResult::to_json() const {
    nlohmann::json j;
    j["pq"] = pq;
    j["sq"] = sq;
    j["rq"] = rq;
    j["pq_things"] = pq_things;
    j["pq_stuff"] = pq_stuff;
    j["n_categories"] = n_categories;
    nlohmann::json cats = nlohmann::json::array();
    for (const auto& [key, c] : per_category) {
        nlohmann::json e;
        e["kind"] = key.first == static_cast<int>(SegmentKind::Thing) ? "thing" : "stuff";
        e["category"] = key.second;
        e["pq"] = c.pq;
        e["sq"] = c.sq;
        e["rq"] = c.rq;
        e["iou_sum"] = c.stats.iou_sum;
        e["tp"] = c.stats.tp;
        e["fp"] = c.stats.fp;
        e["fn"] = c.stats.fn;
        cats.push_back(e);
    }
    j["categories"] = cats;
    return j;
}

std::string PQResult::to_csv() const {
    std::ostringstream os;
    os << "kind,category,pq,sq,rq,tp,fp,fn\n";
    for (const auto& [key, c] : per_category)
        os << (key.first == static_cast<int>(SegmentKind::Thing) ? "thing" : "stuff") << ','
           << key.second << ',' << c.pq << ',' << c.sq << ',' << c.rq << ',' << c.stats.tp << ','
           << c.stats.fp << ',' << c.stats.fn << '\n';
    return os.str();
}

}  // namespace panoseg
