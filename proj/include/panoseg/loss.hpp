#pragma once

#include <algorithm>
#include <tuple>
#include <vector>

#include "panoseg/data_synth.hpp"
#include "panoseg/model.hpp"
#include "panoseg/tensor.hpp"

namespace panoseg {

struct LossConfig {
    double lambda_pos = 1.0;
    double lambda_seg = 3.0;
    int k_points = 7;
    double focal_alpha = 2.0;
    double focal_beta = 4.0;
    double eps = 1e-6;

    void validate() const {
        if (lambda_pos < 0 || lambda_seg < 0 || k_points < 1 || focal_alpha <= 0 ||
            focal_beta <= 0 || eps <= 0)
            throw ConfigError("loss: all settings must be positive (k_points >= 1)");
    }
};

/// Penalty-reduced pixelwise focal loss for gaussian-soft heatmaps:
/// -(1-l)^alpha log l at y == 1, -(1-y)^beta l^alpha log(1-l) elsewhere,
/// summed and divided by `normalizer`.
template <typename T>
Tensor<T> focal_heatmap_loss(const Tensor<T>& l, const Tensor<T>& y, double alpha, double beta,
                             double normalizer, double eps = 1e-6) {
    detail::check_same_shape(l, y, "focal_heatmap_loss");
    require(normalizer > 0, "focal_heatmap_loss: normalizer must be positive");
    Tensor<T> pos_mask = Tensor<T>::zeros(y.shape());
    Tensor<T> neg_w = Tensor<T>::zeros(y.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        const T yv = y.data()[i];
        if (yv >= T(1)) {
            pos_mask.mutable_data()[i] = T(1);
        } else {
            neg_w.mutable_data()[i] = std::pow(T(1) - yv, static_cast<T>(beta));
        }
    }
    Tensor<T> lc = clamp(l, static_cast<T>(eps), static_cast<T>(1.0 - eps));
    Tensor<T> one_minus = rsub_scalar(T(1), lc);
    Tensor<T> pos_term = mul(pos_mask, mul(pow_scalar(one_minus, static_cast<T>(alpha)), log(lc)));
    Tensor<T> neg_term = mul(neg_w, mul(pow_scalar(lc, static_cast<T>(alpha)), log(one_minus)));
    return mul_scalar(sum(add(pos_term, neg_term)), static_cast<T>(-1.0 / normalizer));
}

/// Dice loss with squared denominators:
/// 1 - (2 sum(p y) + eps) / (sum(p^2) + sum(y^2) + eps).
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& p, const Tensor<T>& y, double eps = 1e-6) {
    detail::check_same_shape(p, y, "dice_loss");
    Tensor<T> num = add_scalar(mul_scalar(sum(mul(p, y)), T(2)), static_cast<T>(eps));
    Tensor<T> den = add_scalar(add(sum(mul(p, p)), sum(mul(y, y))), static_cast<T>(eps));
    return rsub_scalar(T(1), div(num, den));
}

/// Score-weighted dice over k predictions of one target, w_k = s_k / sum s.
/// All-zero scores fall back to uniform weights (reported via the flag).
template <typename T>
Tensor<T> weighted_dice(const std::vector<Tensor<T>>& preds, const std::vector<Tensor<T>>& scores,
                        const Tensor<T>& y, double eps = 1e-6, bool* zero_fallback = nullptr) {
    require(!preds.empty() && preds.size() == scores.size(),
            "weighted_dice: preds and scores must be non-empty and aligned");
    bool all_zero = true;
    for (const auto& s : scores)
        if (s.item() != T(0)) all_zero = false;
    if (zero_fallback) *zero_fallback = all_zero;

    Tensor<T> total;
    if (all_zero) {
        const T w = T(1) / static_cast<T>(preds.size());
        for (const auto& p : preds) {
            Tensor<T> term = mul_scalar(dice_loss(p, y, eps), w);
            total = total.defined() ? add(total, term) : term;
        }
        return total;
    }
    Tensor<T> score_sum;
    for (const auto& s : scores) score_sum = score_sum.defined() ? add(score_sum, s) : s;
    for (size_t k = 0; k < preds.size(); ++k) {
        Tensor<T> term = mul(div(scores[k], score_sum), dice_loss(preds[k], y, eps));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

/// One training entry of the segmentation loss: an (instance, stage) pair
/// for things, a (category, stage) pair for stuff. Positions index the
/// stage-resolution maps.
struct ThingEntry {
    int instance;
    int stage;
    int category;
    std::vector<std::pair<int, int>> positions;  // (x, y), top scores first
};

struct StuffEntry {
    int category;
    int stage;
    std::vector<std::pair<int, int>> positions;  // every pixel of the class
};

struct SampleSelection {
    std::vector<ThingEntry> things;
    std::vector<StuffEntry> stuff;
    int empty_thing_regions = 0;  // assigned instances with no region pixels
    int empty_stuff_regions = 0;  // (class, stage) pairs absent at stage res
};

/// Top-k predicted positions inside one instance's region (the rendered
/// gaussian window). Ties break on (y, x) so selection is deterministic.
template <typename T>
std::vector<std::pair<int, int>> topk_region_positions(const Tensor<T>& l_th, int category,
                                                       int cx, int cy, int radius, int k) {
    const int h = l_th.dim(1), w = l_th.dim(2);
    struct Scored {
        T v;
        int y, x;
    };
    std::vector<Scored> region;
    for (int y = std::max(0, cy - radius); y <= std::min(h - 1, cy + radius); ++y)
        for (int x = std::max(0, cx - radius); x <= std::min(w - 1, cx + radius); ++x)
            region.push_back({l_th.at(category, y, x), y, x});
    std::sort(region.begin(), region.end(), [](const Scored& a, const Scored& b) {
        if (a.v != b.v) return a.v > b.v;
        return std::tie(a.y, a.x) < std::tie(b.y, b.x);
    });
    std::vector<std::pair<int, int>> out;
    const int take = std::min<int>(k, static_cast<int>(region.size()));
    for (int i = 0; i < take; ++i) out.emplace_back(region[static_cast<size_t>(i)].x,
                                                    region[static_cast<size_t>(i)].y);
    return out;
}

/// The discrete half of the training loss: which positions represent each
/// instance and each stuff class. Recomputed every step from the current
/// heatmaps; the loss itself is smooth given a fixed selection.
template <typename T>
SampleSelection select_positives(const ModelOutputs<T>& outputs, const Targets<T>& targets,
                                 const std::vector<InstanceAnnotation>& things, int n_stuff,
                                 int k) {
    SampleSelection sel;
    for (size_t s = 0; s < targets.stages.size(); ++s) {
        const StageTargets<T>& st = targets.stages[s];
        const StageOutput<T>& so = outputs.stages[s];
        for (const AssignedThing& at : st.things) {
            const int category = things[static_cast<size_t>(at.instance)].category;
            auto positions = topk_region_positions(so.l_th, category, at.cx, at.cy, at.radius, k);
            if (positions.empty()) {
                ++sel.empty_thing_regions;
                continue;
            }
            sel.things.push_back({at.instance, static_cast<int>(s), category, positions});
        }
        for (int c = 0; c < n_stuff; ++c) {
            std::vector<std::pair<int, int>> positions;
            for (int y = 0; y < st.h; ++y)
                for (int x = 0; x < st.w; ++x)
                    if (st.stuff_index[static_cast<size_t>(y) * st.w + x] == c)
                        positions.emplace_back(x, y);
            if (positions.empty()) {
                ++sel.empty_stuff_regions;
                continue;
            }
            sel.stuff.push_back({c, static_cast<int>(s), positions});
        }
    }
    return sel;
}

template <typename T>
Tensor<T> binary_mask_tensor(const std::vector<std::uint8_t>& mask, int h, int w) {
    std::vector<T> vals(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) vals[i] = mask[i] ? T(1) : T(0);
    return Tensor<T>::from({h * w}, std::move(vals));
}

struct LossBreakdown {
    double pos_thing = 0.0;
    double pos_stuff = 0.0;
    double seg = 0.0;
    double total = 0.0;
    int thing_entries = 0;
    int stuff_entries = 0;
    int skipped_empty_targets = 0;
};

/// Total training objective: the per-stage position losses plus the
/// weighted segmentation loss averaged over all kernel entries.
template <typename T>
std::pair<Tensor<T>, LossBreakdown> total_loss(const ModelOutputs<T>& outputs,
                                               const Targets<T>& targets,
                                               const std::vector<InstanceAnnotation>& things,
                                               const LossConfig& cfg,
                                               const SampleSelection& selection) {
    cfg.validate();
    LossBreakdown bd;

    Tensor<T> pos_th, pos_st;
    for (size_t s = 0; s < targets.stages.size(); ++s) {
        const StageTargets<T>& st = targets.stages[s];
        const StageOutput<T>& so = outputs.stages[s];
        const int n_thing = st.center_heatmap.dim(0);
        Tensor<T> th = focal_heatmap_loss(so.l_th, st.center_heatmap, cfg.focal_alpha,
                                          cfg.focal_beta, double(n_thing), cfg.eps);
        Tensor<T> stt = focal_heatmap_loss(so.l_st, st.stuff_soft, cfg.focal_alpha,
                                           cfg.focal_beta, double(st.h) * st.w, cfg.eps);
        pos_th = pos_th.defined() ? add(pos_th, th) : th;
        pos_st = pos_st.defined() ? add(pos_st, stt) : stt;
    }
    Tensor<T> l_pos = add(pos_th, pos_st);

    // segmentation entries at encoder resolution
    const int seg_hw = targets.seg_h * targets.seg_w;
    Tensor<T> fe_flat = reshape(outputs.f_e, {outputs.f_e.dim(0), seg_hw});
    Tensor<T> seg_sum;
    int entries = 0;
    auto add_entry = [&](Tensor<T> wd) {
        seg_sum = seg_sum.defined() ? add(seg_sum, wd) : wd;
        ++entries;
    };

    for (const ThingEntry& e : selection.things) {
        const auto& target_mask = targets.thing_seg[static_cast<size_t>(e.instance)];
        if (std::all_of(target_mask.begin(), target_mask.end(),
                        [](std::uint8_t v) { return v == 0; })) {
            ++bd.skipped_empty_targets;
            continue;
        }
        const StageOutput<T>& so = outputs.stages[static_cast<size_t>(e.stage)];
        Tensor<T> kernels = gather_vectors(so.g, e.positions);  // [k, C_e]
        Tensor<T> masks = sigmoid(matmul(kernels, fe_flat));    // [k, seg_hw]
        Tensor<T> class_scores = gather_vectors(so.l_th, e.positions);
        Tensor<T> y = binary_mask_tensor<T>(target_mask, targets.seg_h, targets.seg_w);
        std::vector<Tensor<T>> preds, scores;
        for (size_t k = 0; k < e.positions.size(); ++k) {
            preds.push_back(reshape(select_row(masks, static_cast<int>(k)), {seg_hw}));
            scores.push_back(select_item(class_scores, static_cast<int>(k), e.category));
        }
        add_entry(weighted_dice(preds, scores, y, cfg.eps));
        ++bd.thing_entries;
    }

    for (const StuffEntry& e : selection.stuff) {
        const auto& target_mask = targets.stuff_seg[static_cast<size_t>(e.category)];
        if (std::all_of(target_mask.begin(), target_mask.end(),
                        [](std::uint8_t v) { return v == 0; })) {
            ++bd.skipped_empty_targets;
            continue;
        }
        const StageOutput<T>& so = outputs.stages[static_cast<size_t>(e.stage)];
        Tensor<T> kernels = gather_vectors(so.g, e.positions);  // [m, C_e]
        // average-cluster the class's kernels into one before segmentation
        Tensor<T> ones = Tensor<T>::full({1, static_cast<int>(e.positions.size())},
                                         T(1) / static_cast<T>(e.positions.size()));
        Tensor<T> mean_kernel = matmul(ones, kernels);          // [1, C_e]
        Tensor<T> mask = sigmoid(matmul(mean_kernel, fe_flat)); // [1, seg_hw]
        Tensor<T> y = binary_mask_tensor<T>(target_mask, targets.seg_h, targets.seg_w);
        add_entry(dice_loss(reshape(mask, {seg_hw}), y, cfg.eps));
        ++bd.stuff_entries;
    }

    Tensor<T> l_seg = entries > 0 ? mul_scalar(seg_sum, T(1) / static_cast<T>(entries))
                                  : Tensor<T>::scalar(T(0));
    Tensor<T> total = add(mul_scalar(l_pos, static_cast<T>(cfg.lambda_pos)),
                          mul_scalar(l_seg, static_cast<T>(cfg.lambda_seg)));

    bd.pos_thing = static_cast<double>(pos_th.item());
    bd.pos_stuff = static_cast<double>(pos_st.item());
    bd.seg = static_cast<double>(l_seg.item());
    bd.total = static_cast<double>(total.item());
    return {total, bd};
}

/// Convenience overload that performs the selection itself.
template <typename T>
std::pair<Tensor<T>, LossBreakdown> total_loss(const ModelOutputs<T>& outputs,
                                               const Targets<T>& targets,
                                               const std::vector<InstanceAnnotation>& things,
                                               int n_stuff, const LossConfig& cfg) {
    return total_loss(outputs, targets, things, cfg,
                      select_positives(outputs, targets, things, n_stuff, cfg.k_points));
}

}  // namespace panoseg
