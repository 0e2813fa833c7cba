#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "panoseg/nn_ops.hpp"
#include "panoseg/panoptic_label.hpp"
#include "panoseg/rng.hpp"
#include "panoseg/tensor.hpp"

namespace panoseg {

struct DataConfig {
    int height = 64;
    int width = 64;
    int n_thing = 3;   // shape families: disc, rectangle, triangle (cycled beyond 3)
    int n_stuff = 2;   // horizontal bands, top to bottom
    int min_things = 2;
    int max_things = 4;
    int min_size = 14;  // shape extent range in pixels
    int max_size = 28;
    double noise_std = 0.02;
    int max_attempts = 50;
};

struct InstanceAnnotation {
    int category = 0;
    std::vector<std::uint8_t> mask;  // H*W, visible region after occlusion
    double center_x = 0.0;           // mass center of mask pixels (x = column)
    double center_y = 0.0;
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // tight bbox, inclusive

    int bbox_w() const { return x1 - x0 + 1; }
    int bbox_h() const { return y1 - y0 + 1; }
    double scale() const { return static_cast<double>(std::max(bbox_w(), bbox_h())); }
};

struct PanopticSample {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> image;      // 3*H*W channel-major, 0..255
    std::vector<InstanceAnnotation> things;
    std::vector<std::uint8_t> stuff_map;  // H*W, values in [0, n_stuff)
    std::uint64_t seed = 0;
};

/// Deterministic synthetic scene: textured stuff bands below textured
/// geometric things, occlusion resolved by draw order.
PanopticSample generate_sample(std::uint64_t seed, const DataConfig& cfg);

/// Mirror left-right; annotations are recomputed.
PanopticSample flip_horizontal(const PanopticSample& sample);

/// Largest center displacement (per the three standard corner-displacement
/// cases) that keeps IoU with an h x w box at or above min_overlap.
double gaussian_radius(double box_h, double box_w, double min_overlap);

/// Reference panoptic encoding of a sample: visible stuff regions plus one
/// segment per thing instance.
PanopticLabel ground_truth_label(const PanopticSample& sample);

/// One pyramid stage: its stride and the instance-scale interval assigned
/// to it (inclusive bounds, intervals may overlap).
struct StageSpec {
    int stride;
    double scale_lo;
    double scale_hi;
};

/// Indices of every stage whose scale interval contains `scale`; if none
/// does, the nearest interval's stage. `fell_outside` reports the latter.
std::vector<int> assign_stage(double scale, const std::vector<StageSpec>& stages,
                              bool* fell_outside = nullptr);

/// Nearest-neighbor downsample (center sampling) of an H x W byte map.
std::vector<std::uint8_t> nearest_downsample(const std::vector<std::uint8_t>& map, int h, int w,
                                             int out_h, int out_w);

struct AssignedThing {
    int instance;  // index into PanopticSample::things
    int cx, cy;    // quantized center in stage coordinates
    int radius;    // gaussian window half-extent in stage coordinates
};

template <typename T>
struct StageTargets {
    int stage = 0;
    int stride = 0;
    int h = 0, w = 0;
    Tensor<T> center_heatmap;              // [N_th, H_i, W_i], exact 1 at centers
    Tensor<T> stuff_soft;                  // [N_st, H_i, W_i], channel-sum 1
    std::vector<AssignedThing> things;
    std::vector<std::uint8_t> stuff_index; // H_i*W_i nearest-downsampled class map
};

template <typename T>
struct Targets {
    std::vector<StageTargets<T>> stages;
    int seg_h = 0, seg_w = 0;                          // encoder resolution
    std::vector<std::vector<std::uint8_t>> thing_seg;  // per instance
    std::vector<std::vector<std::uint8_t>> stuff_seg;  // per stuff class
    int skipped_centers = 0;      // centers that fell outside a stage
    int out_of_range_scales = 0;  // scales outside every interval
};

namespace detail {

inline double gaussian_sigma(int radius) { return (2.0 * radius + 1.0) / 3.0; }

}  // namespace detail

/// Object-center heatmaps for one stage. Per instance the window is the
/// (2r+1)^2 box around the quantized center clipped to the stage, sigma is
/// (2r+1)/3, overlaps combine by max and the center pixel is set to 1.
template <typename T>
Tensor<T> render_center_heatmap(const std::vector<AssignedThing>& things,
                                const std::vector<InstanceAnnotation>& annotations, int n_thing,
                                int h, int w) {
    Tensor<T> out = Tensor<T>::zeros({n_thing, h, w});
    T* po = out.mutable_data();
    for (const AssignedThing& at : things) {
        const int c = annotations[static_cast<size_t>(at.instance)].category;
        const double sigma = detail::gaussian_sigma(at.radius);
        const double denom = 2.0 * sigma * sigma;
        T* plane = po + static_cast<size_t>(c) * h * w;
        for (int y = std::max(0, at.cy - at.radius); y <= std::min(h - 1, at.cy + at.radius); ++y)
            for (int x = std::max(0, at.cx - at.radius); x <= std::min(w - 1, at.cx + at.radius);
                 ++x) {
                const double d2 = double(x - at.cx) * (x - at.cx) + double(y - at.cy) * (y - at.cy);
                const T v = static_cast<T>(std::exp(-d2 / denom));
                plane[y * w + x] = std::max(plane[y * w + x], v);
            }
        plane[at.cy * w + at.cx] = T(1);
    }
    return out;
}

/// Soft one-hot stuff target: bilinear image of the one-hot label field,
/// renormalized per pixel so the channel sum is exactly one.
template <typename T>
Tensor<T> render_stuff_target(const std::vector<std::uint8_t>& stuff_map, int h, int w,
                              int n_stuff, int out_h, int out_w) {
    NoGradGuard no_grad;
    Tensor<T> one_hot = Tensor<T>::zeros({n_stuff, h, w});
    T* ph = one_hot.mutable_data();
    for (int i = 0; i < h * w; ++i)
        ph[static_cast<size_t>(stuff_map[static_cast<size_t>(i)]) * h * w + i] = T(1);
    Tensor<T> soft = bilinear_resize(one_hot, out_h, out_w);
    T* ps = soft.mutable_data();
    for (int i = 0; i < out_h * out_w; ++i) {
        T s = T(0);
        for (int c = 0; c < n_stuff; ++c) s += ps[static_cast<size_t>(c) * out_h * out_w + i];
        for (int c = 0; c < n_stuff; ++c) ps[static_cast<size_t>(c) * out_h * out_w + i] /= s;
    }
    return soft;
}

/// Full per-stage training targets plus the encoder-resolution segmentation
/// masks. Pure function of (sample, stages, n_thing, n_stuff).
template <typename T>
Targets<T> build_targets(const PanopticSample& sample, const std::vector<StageSpec>& stages,
                         int n_thing, int n_stuff) {
    Targets<T> out;
    const int h = sample.height, w = sample.width;

    // stage assignment by instance scale
    std::vector<std::vector<AssignedThing>> per_stage(stages.size());
    for (size_t i = 0; i < sample.things.size(); ++i) {
        const InstanceAnnotation& inst = sample.things[i];
        bool outside = false;
        for (int s : assign_stage(inst.scale(), stages, &outside)) {
            const int stride = stages[static_cast<size_t>(s)].stride;
            const int sh = h / stride, sw = w / stride;
            const int cx = static_cast<int>(std::floor(inst.center_x / stride));
            const int cy = static_cast<int>(std::floor(inst.center_y / stride));
            if (cx < 0 || cx >= sw || cy < 0 || cy >= sh) {
                ++out.skipped_centers;
                continue;
            }
            const double r = gaussian_radius(double(inst.bbox_h()) / stride,
                                             double(inst.bbox_w()) / stride, 0.7);
            const int radius = std::max(1, static_cast<int>(std::floor(r)));
            per_stage[static_cast<size_t>(s)].push_back(
                {static_cast<int>(i), cx, cy, radius});
        }
        if (outside) ++out.out_of_range_scales;
    }

    for (size_t s = 0; s < stages.size(); ++s) {
        StageTargets<T> st;
        st.stage = static_cast<int>(s);
        st.stride = stages[s].stride;
        st.h = h / st.stride;
        st.w = w / st.stride;
        st.things = std::move(per_stage[s]);
        st.center_heatmap =
            render_center_heatmap<T>(st.things, sample.things, n_thing, st.h, st.w);
        st.stuff_soft = render_stuff_target<T>(sample.stuff_map, h, w, n_stuff, st.h, st.w);
        st.stuff_index = nearest_downsample(sample.stuff_map, h, w, st.h, st.w);
        out.stages.push_back(std::move(st));
    }

    out.seg_h = h / 4;
    out.seg_w = w / 4;
    for (const InstanceAnnotation& inst : sample.things)
        out.thing_seg.push_back(nearest_downsample(inst.mask, h, w, out.seg_h, out.seg_w));
    for (int c = 0; c < n_stuff; ++c) {
        std::vector<std::uint8_t> cls(static_cast<size_t>(h) * w);
        for (size_t i = 0; i < cls.size(); ++i) cls[i] = sample.stuff_map[i] == c ? 1 : 0;
        out.stuff_seg.push_back(nearest_downsample(cls, h, w, out.seg_h, out.seg_w));
    }
    return out;
}

/// Image bytes as a [3,H,W] tensor in [0,1].
template <typename T>
Tensor<T> image_tensor(const PanopticSample& sample) {
    std::vector<T> vals(sample.image.size());
    for (size_t i = 0; i < vals.size(); ++i)
        vals[i] = static_cast<T>(sample.image[i]) / T(255);
    return Tensor<T>::from({3, sample.height, sample.width}, std::move(vals));
}

}  // namespace panoseg
