#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "panoseg/data_synth.hpp"
#include "panoseg/model.hpp"
#include "panoseg/panoptic_label.hpp"

namespace panoseg {

struct InferConfig {
    double thing_score_thresh = 0.05;
    double stuff_score_thresh = 0.4;
    int pool_k = 3;
    double fuse_thres = 0.90;
    bool class_aware = true;
    int keep_top = 100;
    double bin_thresh = 0.4;
    double overlap_thresh = 0.5;
    int stuff_min_area = 64;
    std::string merge_mode = "heuristic";  // heuristic | argmax

    void validate() const {
        if (pool_k < 1 || pool_k % 2 == 0) throw ConfigError("infer: pool_k must be odd");
        if (fuse_thres < -1.0) throw ConfigError("infer: fuse_thres below -1 is meaningless");
        if (bin_thresh <= 0.0 || bin_thresh >= 1.0)
            throw ConfigError("infer: bin_thresh must lie in (0,1)");
        if (keep_top < 1 || stuff_min_area < 0 || overlap_thresh < 0.0 || overlap_thresh > 1.0)
            throw ConfigError("infer: bad keep_top/stuff_min_area/overlap_thresh");
        if (merge_mode != "heuristic" && merge_mode != "argmax")
            throw ConfigError("infer: merge_mode must be heuristic or argmax");
    }
};

template <typename T>
struct Candidate {
    SegmentKind kind;
    int category;
    int stage;
    int x, y;              // stage coordinates
    double score;          // position-head value at (category, y, x)
    std::vector<T> kernel; // kernel-head column at (y, x)
};

template <typename T>
struct FusedKernel {
    SegmentKind kind;
    int category;
    double score;           // founder's score (things) or member mean (stuff)
    int members;
    std::vector<T> kernel;  // arithmetic mean of member kernels
    std::array<int, 4> tie; // founder (category, stage, y, x), deterministic order key
};

template <typename T>
std::vector<T> kernel_at(const Tensor<T>& g, int x, int y) {
    const int c = g.dim(0), h = g.dim(1), w = g.dim(2);
    std::vector<T> out(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch)
        out[static_cast<size_t>(ch)] = g.data()[(static_cast<size_t>(ch) * h + y) * w + x];
    return out;
}

/// Peak-point candidates: positions whose value survives same-size max
/// pooling (ties keep every plateau pixel) and exceeds the threshold.
template <typename T>
std::vector<Candidate<T>> extract_thing_candidates(const std::vector<StageOutput<T>>& stages,
                                                   int pool_k, double score_thresh) {
    NoGradGuard no_grad;
    std::vector<Candidate<T>> out;
    for (const StageOutput<T>& so : stages) {
        Tensor<T> pooled = max_pool2d(so.l_th, pool_k);
        const int c = so.l_th.dim(0), h = so.l_th.dim(1), w = so.l_th.dim(2);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const T v = so.l_th.at(ch, y, x);
                    if (v == pooled.at(ch, y, x) && static_cast<double>(v) > score_thresh)
                        out.push_back({SegmentKind::Thing, ch, so.stage, x, y,
                                       static_cast<double>(v), kernel_at(so.g, x, y)});
                }
    }
    return out;
}

/// Stuff candidates: one per position whose channel argmax clears the
/// threshold (ties pick the lowest category).
template <typename T>
std::vector<Candidate<T>> extract_stuff_candidates(const std::vector<StageOutput<T>>& stages,
                                                   double score_thresh) {
    std::vector<Candidate<T>> out;
    for (const StageOutput<T>& so : stages) {
        const int c = so.l_st.dim(0), h = so.l_st.dim(1), w = so.l_st.dim(2);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int best = 0;
                for (int ch = 1; ch < c; ++ch)
                    if (so.l_st.at(ch, y, x) > so.l_st.at(best, y, x)) best = ch;
                const double v = static_cast<double>(so.l_st.at(best, y, x));
                if (v > score_thresh)
                    out.push_back({SegmentKind::Stuff, best, so.stage, x, y, v,
                                   kernel_at(so.g, x, y)});
            }
    }
    return out;
}

template <typename T>
double cosine_similarity(const std::vector<T>& a, const std::vector<T>& b) {
    require(a.size() == b.size(), "cosine_similarity: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Average-clustering of candidate kernels. Things greedily join the first
/// cluster (in founding order) whose running mean is cosine-similar above
/// `thres` (and category-matched when class_aware); visiting order is score
/// descending. Stuff candidates of one category always form one cluster.
template <typename T>
std::vector<FusedKernel<T>> fuse_kernels(const std::vector<Candidate<T>>& cands, double thres,
                                         bool class_aware) {
    struct Cluster {
        SegmentKind kind;
        int category;
        double score_sum;
        double founder_score;
        int members;
        std::vector<double> kernel_sum;
        std::array<int, 4> tie;
    };

    std::vector<const Candidate<T>*> things;
    std::map<int, std::vector<const Candidate<T>*>> stuff;
    for (const Candidate<T>& c : cands) {
        if (c.kind == SegmentKind::Thing)
            things.push_back(&c);
        else
            stuff[c.category].push_back(&c);
    }
    std::sort(things.begin(), things.end(), [](const Candidate<T>* a, const Candidate<T>* b) {
        if (a->score != b->score) return a->score > b->score;
        return std::tie(a->category, a->stage, a->y, a->x) <
               std::tie(b->category, b->stage, b->y, b->x);
    });

    std::vector<Cluster> clusters;
    std::vector<T> mean_buf;
    for (const Candidate<T>* c : things) {
        bool joined = false;
        for (Cluster& cl : clusters) {
            if (class_aware && cl.category != c->category) continue;
            mean_buf.assign(cl.kernel_sum.size(), T(0));
            for (size_t i = 0; i < mean_buf.size(); ++i)
                mean_buf[i] = static_cast<T>(cl.kernel_sum[i] / cl.members);
            if (cosine_similarity(mean_buf, c->kernel) >= thres) {
                for (size_t i = 0; i < cl.kernel_sum.size(); ++i)
                    cl.kernel_sum[i] += static_cast<double>(c->kernel[i]);
                ++cl.members;
                cl.score_sum += c->score;
                joined = true;
                break;
            }
        }
        if (!joined) {
            Cluster cl;
            cl.kind = SegmentKind::Thing;
            cl.category = c->category;
            cl.score_sum = c->score;
            cl.founder_score = c->score;
            cl.members = 1;
            cl.kernel_sum.assign(c->kernel.begin(), c->kernel.end());
            cl.tie = {c->category, c->stage, c->y, c->x};
            clusters.push_back(std::move(cl));
        }
    }
    for (auto& [category, members] : stuff) {
        Cluster cl;
        cl.kind = SegmentKind::Stuff;
        cl.category = category;
        cl.score_sum = 0.0;
        cl.members = 0;
        cl.kernel_sum.assign(members.front()->kernel.size(), 0.0);
        cl.tie = {category, members.front()->stage, members.front()->y, members.front()->x};
        for (const Candidate<T>* c : members) {
            for (size_t i = 0; i < cl.kernel_sum.size(); ++i)
                cl.kernel_sum[i] += static_cast<double>(c->kernel[i]);
            cl.score_sum += c->score;
            ++cl.members;
        }
        cl.founder_score = cl.score_sum / cl.members;
        clusters.push_back(std::move(cl));
    }

    std::vector<FusedKernel<T>> out;
    for (const Cluster& cl : clusters) {
        FusedKernel<T> f;
        f.kind = cl.kind;
        f.category = cl.category;
        f.members = cl.members;
        f.score = cl.kind == SegmentKind::Thing ? cl.founder_score : cl.score_sum / cl.members;
        f.kernel.resize(cl.kernel_sum.size());
        for (size_t i = 0; i < f.kernel.size(); ++i)
            f.kernel[i] = static_cast<T>(cl.kernel_sum[i] / cl.members);
        f.tie = cl.tie;
        out.push_back(std::move(f));
    }
    return out;
}

/// Soft masks for a batch of fused kernels: each is the 1x1 convolution of
/// the encoded feature followed by sigmoid. Output [n, H/4, W/4].
template <typename T>
Tensor<T> generate_masks(const std::vector<FusedKernel<T>>& kernels, const Tensor<T>& f_e) {
    NoGradGuard no_grad;
    const int ce = f_e.dim(0), h = f_e.dim(1), w = f_e.dim(2);
    const int n = static_cast<int>(kernels.size());
    Tensor<T> k = Tensor<T>::zeros({std::max(n, 1), ce});
    for (int i = 0; i < n; ++i) {
        require(static_cast<int>(kernels[static_cast<size_t>(i)].kernel.size()) == ce,
                "generate_masks: kernel length does not match feature channels");
        std::copy(kernels[static_cast<size_t>(i)].kernel.begin(),
                  kernels[static_cast<size_t>(i)].kernel.end(),
                  k.mutable_data() + static_cast<size_t>(i) * ce);
    }
    Tensor<T> masks = sigmoid(matmul(k, reshape(f_e, {ce, h * w})));
    return reshape(masks, {std::max(n, 1), h, w});
}

/// SOLO-style score adjustment: multiply by the mean soft value over the
/// binarized foreground; empty foreground zeroes the score.
template <typename T>
double rescore(double score, const T* mask, std::int64_t n, double bin_thresh) {
    double sum = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (static_cast<double>(mask[i]) >= bin_thresh) {
            sum += static_cast<double>(mask[i]);
            ++count;
        }
    }
    return count == 0 ? 0.0 : score * (sum / static_cast<double>(count));
}

/// One prediction entering the panoptic assembly: a full-resolution soft
/// mask with its class, score, and deterministic order key.
template <typename T>
struct MaskPrediction {
    SegmentKind kind;
    int category;
    double score;
    std::array<int, 4> tie;
    std::vector<T> soft;  // H*W
};

namespace detail {

template <typename T>
std::vector<const MaskPrediction<T>*> sorted_preds(const std::vector<MaskPrediction<T>>& preds,
                                                   SegmentKind kind) {
    std::vector<const MaskPrediction<T>*> out;
    for (const auto& p : preds)
        if (p.kind == kind) out.push_back(&p);
    std::sort(out.begin(), out.end(), [](const MaskPrediction<T>* a, const MaskPrediction<T>* b) {
        if (a->score != b->score) return a->score > b->score;
        return a->tie < b->tie;
    });
    return out;
}

}  // namespace detail

/// Non-overlapping panoptic assembly. Heuristic mode assigns binarized
/// thing masks in score order (dropping instances whose surviving fraction
/// falls below overlap_thresh), then paints stuff into free pixels subject
/// to the area floor. Argmax mode gives each pixel to the highest soft
/// value at or above bin_thresh, then applies the stuff area floor.
template <typename T>
PanopticLabel panoptic_merge(const std::vector<MaskPrediction<T>>& preds, int h, int w,
                             const std::string& mode, double bin_thresh, double overlap_thresh,
                             int stuff_min_area) {
    PanopticLabel label;
    label.height = h;
    label.width = w;
    label.id_map.assign(static_cast<size_t>(h) * w, 0);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (const auto& p : preds)
        require(static_cast<std::int64_t>(p.soft.size()) == hw,
                "panoptic_merge: mask size mismatch");

    auto things = detail::sorted_preds(preds, SegmentKind::Thing);
    auto stuff = detail::sorted_preds(preds, SegmentKind::Stuff);

    int next_id = 1;
    if (mode == "heuristic") {
        for (const MaskPrediction<T>* p : things) {
            std::int64_t total = 0, surviving = 0;
            for (std::int64_t i = 0; i < hw; ++i) {
                if (static_cast<double>(p->soft[static_cast<size_t>(i)]) < bin_thresh) continue;
                ++total;
                if (label.id_map[static_cast<size_t>(i)] == 0) ++surviving;
            }
            if (total == 0 ||
                static_cast<double>(surviving) < overlap_thresh * static_cast<double>(total))
                continue;
            const int id = next_id++;
            for (std::int64_t i = 0; i < hw; ++i)
                if (static_cast<double>(p->soft[static_cast<size_t>(i)]) >= bin_thresh &&
                    label.id_map[static_cast<size_t>(i)] == 0)
                    label.id_map[static_cast<size_t>(i)] = id;
            label.segments.push_back({id, p->category, SegmentKind::Thing, surviving, p->score});
        }
        for (const MaskPrediction<T>* p : stuff) {
            std::int64_t area = 0;
            for (std::int64_t i = 0; i < hw; ++i)
                if (static_cast<double>(p->soft[static_cast<size_t>(i)]) >= bin_thresh &&
                    label.id_map[static_cast<size_t>(i)] == 0)
                    ++area;
            if (area < stuff_min_area) continue;
            const int id = next_id++;
            for (std::int64_t i = 0; i < hw; ++i)
                if (static_cast<double>(p->soft[static_cast<size_t>(i)]) >= bin_thresh &&
                    label.id_map[static_cast<size_t>(i)] == 0)
                    label.id_map[static_cast<size_t>(i)] = id;
            label.segments.push_back({id, p->category, SegmentKind::Stuff, area, p->score});
        }
    } else if (mode == "argmax") {
        // fixed visit order: things by score then stuff by score
        std::vector<const MaskPrediction<T>*> ordered = things;
        ordered.insert(ordered.end(), stuff.begin(), stuff.end());
        std::vector<int> assignment(static_cast<size_t>(hw), -1);
        for (std::int64_t i = 0; i < hw; ++i) {
            double best = bin_thresh;
            for (size_t p = 0; p < ordered.size(); ++p) {
                const double v = static_cast<double>(ordered[p]->soft[static_cast<size_t>(i)]);
                if (v > best) {
                    best = v;
                    assignment[static_cast<size_t>(i)] = static_cast<int>(p);
                }
            }
        }
        std::vector<std::int64_t> areas(ordered.size(), 0);
        for (std::int64_t i = 0; i < hw; ++i)
            if (assignment[static_cast<size_t>(i)] >= 0)
                ++areas[static_cast<size_t>(assignment[static_cast<size_t>(i)])];
        std::vector<int> id_of(ordered.size(), 0);
        for (size_t p = 0; p < ordered.size(); ++p) {
            if (areas[p] == 0) continue;
            if (ordered[p]->kind == SegmentKind::Stuff && areas[p] < stuff_min_area) continue;
            id_of[p] = next_id++;
            label.segments.push_back(
                {id_of[p], ordered[p]->category, ordered[p]->kind, areas[p], ordered[p]->score});
        }
        for (std::int64_t i = 0; i < hw; ++i) {
            const int p = assignment[static_cast<size_t>(i)];
            if (p >= 0) label.id_map[static_cast<size_t>(i)] = id_of[static_cast<size_t>(p)];
        }
    } else {
        throw ConfigError("panoptic_merge: unknown mode " + mode);
    }
    return label;
}

/// Candidate substitution for upper-bound analysis: ground-truth positions
/// (and optionally classes) replace the detected ones; kernels still come
/// from the predicted kernel map. use_gt_class implies use_gt_position.
template <typename T>
std::vector<Candidate<T>> oracle_candidates(const ModelOutputs<T>& outputs,
                                            const Targets<T>& targets,
                                            const std::vector<InstanceAnnotation>& things,
                                            bool use_gt_position, bool use_gt_class,
                                            const InferConfig& cfg) {
    if (use_gt_class) use_gt_position = true;
    if (!use_gt_position) {
        auto cands = extract_thing_candidates(outputs.stages, cfg.pool_k, cfg.thing_score_thresh);
        auto st = extract_stuff_candidates(outputs.stages, cfg.stuff_score_thresh);
        cands.insert(cands.end(), st.begin(), st.end());
        return cands;
    }
    std::vector<Candidate<T>> out;
    for (size_t s = 0; s < targets.stages.size(); ++s) {
        const StageTargets<T>& st = targets.stages[s];
        const StageOutput<T>& so = outputs.stages[s];
        for (const AssignedThing& at : st.things) {
            int category = things[static_cast<size_t>(at.instance)].category;
            if (!use_gt_class) {
                int best = 0;
                for (int c = 1; c < so.l_th.dim(0); ++c)
                    if (so.l_th.at(c, at.cy, at.cx) > so.l_th.at(best, at.cy, at.cx)) best = c;
                category = best;
            }
            out.push_back({SegmentKind::Thing, category, static_cast<int>(s), at.cx, at.cy,
                           static_cast<double>(so.l_th.at(category, at.cy, at.cx)),
                           kernel_at(so.g, at.cx, at.cy)});
        }
        for (int y = 0; y < st.h; ++y)
            for (int x = 0; x < st.w; ++x) {
                int category = st.stuff_index[static_cast<size_t>(y) * st.w + x];
                if (!use_gt_class) {
                    int best = 0;
                    for (int c = 1; c < so.l_st.dim(0); ++c)
                        if (so.l_st.at(c, y, x) > so.l_st.at(best, y, x)) best = c;
                    category = best;
                }
                out.push_back({SegmentKind::Stuff, category, static_cast<int>(s), x, y,
                               static_cast<double>(so.l_st.at(category, y, x)),
                               kernel_at(so.g, x, y)});
            }
    }
    return out;
}

template <typename T>
struct InferenceResult {
    PanopticLabel label;
    std::vector<FusedKernel<T>> kept;  // post keep_top, things then stuff
};

/// The full generate-kernel-then-segment pipeline on one image's outputs.
/// Masks are produced at encoder resolution, rescored there, upsampled to
/// (h, w) bilinearly and assembled without overlap.
template <typename T>
InferenceResult<T> run_inference(const ModelOutputs<T>& outputs, int h, int w,
                                 const InferConfig& cfg,
                                 const std::vector<Candidate<T>>* candidates_override = nullptr) {
    cfg.validate();
    NoGradGuard no_grad;

    std::vector<Candidate<T>> cands;
    if (candidates_override) {
        cands = *candidates_override;
    } else {
        cands = extract_thing_candidates(outputs.stages, cfg.pool_k, cfg.thing_score_thresh);
        auto st = extract_stuff_candidates(outputs.stages, cfg.stuff_score_thresh);
        cands.insert(cands.end(), st.begin(), st.end());
    }

    std::vector<FusedKernel<T>> fused = fuse_kernels(cands, cfg.fuse_thres, cfg.class_aware);

    // top-scoring thing kernels survive the cut; every stuff kernel does
    InferenceResult<T> result;
    int things_kept = 0;
    for (const FusedKernel<T>& f : fused)
        if (f.kind == SegmentKind::Thing && things_kept < cfg.keep_top) {
            result.kept.push_back(f);
            ++things_kept;
        }
    for (const FusedKernel<T>& f : fused)
        if (f.kind == SegmentKind::Stuff) result.kept.push_back(f);

    Tensor<T> masks = generate_masks(result.kept, outputs.f_e);
    const int mh = masks.dim(1), mw = masks.dim(2);

    std::vector<MaskPrediction<T>> preds;
    for (size_t i = 0; i < result.kept.size(); ++i) {
        const FusedKernel<T>& f = result.kept[i];
        const T* mask = masks.data() + static_cast<std::int64_t>(i) * mh * mw;
        double score = f.score;
        if (f.kind == SegmentKind::Thing)
            score = rescore(score, mask, static_cast<std::int64_t>(mh) * mw, cfg.bin_thresh);
        Tensor<T> quarter = Tensor<T>::from({1, mh, mw}, std::vector<T>(mask, mask + mh * mw));
        Tensor<T> full = bilinear_resize(quarter, h, w);
        preds.push_back({f.kind, f.category, score, f.tie,
                         std::vector<T>(full.data(), full.data() + full.numel())});
    }
    result.label = panoptic_merge(preds, h, w, cfg.merge_mode, cfg.bin_thresh,
                                  cfg.overlap_thresh, cfg.stuff_min_area);
    return result;
}

}  // namespace panoseg
