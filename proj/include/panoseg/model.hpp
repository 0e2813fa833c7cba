#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "panoseg/nn_ops.hpp"
#include "panoseg/params.hpp"
#include "panoseg/rng.hpp"

namespace panoseg {

struct ModelConfig {
    int n_thing = 3;
    int n_stuff = 2;
    int c_backbone = 32;  // trunk width
    int c_mid = 32;       // head conv width
    int c_e = 64;         // kernel / encoded-feature channels
    int conv_num = 3;     // stacked 3x3 convs per head and in the encoder
    std::vector<int> stage_strides = {8, 16, 32};
    int encoder_stride = 4;
    bool coord_kernel = true;   // coordinate channels into the kernel head
    bool coord_encoder = true;  // coordinate channels into the feature encoder
    // per-stage instance-scale intervals for target assignment
    std::vector<std::array<double, 2>> scale_ranges = {{1, 32}, {16, 64}, {32, 2048}};

    void validate() const {
        if (n_thing < 1 || n_stuff < 1 || c_backbone < 1 || c_mid < 1 || c_e < 1 || conv_num < 1)
            throw ConfigError("model: channel and depth settings must be positive");
        if (encoder_stride != 4) throw ConfigError("model: encoder stride is fixed at 4");
        if (stage_strides.empty()) throw ConfigError("model: at least one stage required");
        if (scale_ranges.size() != stage_strides.size())
            throw ConfigError("model: scale_ranges must match stage_strides");
        int prev = 0;
        for (int s : stage_strides) {
            if (s <= prev) throw ConfigError("model: stage strides must be strictly increasing");
            int q = s;
            while (q > encoder_stride && q % 2 == 0) q /= 2;
            if (q != encoder_stride)
                throw ConfigError("model: stage stride " + std::to_string(s) +
                                  " is not a power-of-two multiple of the encoder stride");
            prev = s;
        }
    }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

inline nlohmann::json ModelConfig::to_json() const {
    nlohmann::json j;
    j["n_thing"] = n_thing;
    j["n_stuff"] = n_stuff;
    j["c_backbone"] = c_backbone;
    j["c_mid"] = c_mid;
    j["c_e"] = c_e;
    j["conv_num"] = conv_num;
    j["stage_strides"] = stage_strides;
    j["encoder_stride"] = encoder_stride;
    j["coord_kernel"] = coord_kernel;
    j["coord_encoder"] = coord_encoder;
    nlohmann::json ranges = nlohmann::json::array();
    for (const auto& r : scale_ranges) ranges.push_back({r[0], r[1]});
    j["scale_ranges"] = ranges;
    return j;
}

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.n_thing = j.at("n_thing").get<int>();
    cfg.n_stuff = j.at("n_stuff").get<int>();
    cfg.c_backbone = j.at("c_backbone").get<int>();
    cfg.c_mid = j.at("c_mid").get<int>();
    cfg.c_e = j.at("c_e").get<int>();
    cfg.conv_num = j.at("conv_num").get<int>();
    cfg.stage_strides = j.at("stage_strides").get<std::vector<int>>();
    cfg.encoder_stride = j.at("encoder_stride").get<int>();
    cfg.coord_kernel = j.at("coord_kernel").get<bool>();
    cfg.coord_encoder = j.at("coord_encoder").get<bool>();
    cfg.scale_ranges.clear();
    for (const auto& r : j.at("scale_ranges"))
        cfg.scale_ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    cfg.validate();
    return cfg;
}

template <typename T>
struct StageOutput {
    int stage = 0;
    int stride = 0;
    Tensor<T> l_th;  // [N_th, H_i, W_i], sigmoid
    Tensor<T> l_st;  // [N_st, H_i, W_i], sigmoid
    Tensor<T> g;     // [C_e, H_i, W_i], unbounded
};

template <typename T>
struct ModelOutputs {
    std::vector<StageOutput<T>> stages;
    Tensor<T> f_h;  // [C_e, H/4, W/4] high-resolution feature
    Tensor<T> f_e;  // [C_e, H/4, W/4] encoded feature
};

namespace detail {

struct ConvLayerSpec {
    std::string name;
    int cin, cout, k, stride;
    bool gn_relu;
};

/// Largest divisor of c not exceeding 8; the per-layer GroupNorm group count.
inline int gn_groups(int c) {
    for (int g = std::min(8, c); g >= 1; --g)
        if (c % g == 0) return g;
    return 1;
}

inline std::vector<ConvLayerSpec> layer_specs(const ModelConfig& cfg) {
    std::vector<ConvLayerSpec> specs;
    specs.push_back({"backbone.stem0", 3, cfg.c_backbone, 3, 2, true});
    specs.push_back({"backbone.stem1", cfg.c_backbone, cfg.c_backbone, 3, 2, true});
    const int max_stride = cfg.stage_strides.back();
    int level = 0;
    for (int s = cfg.encoder_stride * 2; s <= max_stride; s *= 2, ++level)
        specs.push_back({"backbone.down" + std::to_string(level), cfg.c_backbone, cfg.c_backbone,
                         3, 2, true});
    for (size_t i = 0; i < cfg.stage_strides.size(); ++i)
        specs.push_back({"fh.proj" + std::to_string(i), cfg.c_backbone, cfg.c_e, 1, 1, false});
    for (int j = 0; j < cfg.conv_num; ++j)
        specs.push_back({"pos.conv" + std::to_string(j), j == 0 ? cfg.c_backbone : cfg.c_mid,
                         cfg.c_mid, 3, 1, true});
    specs.push_back({"pos.out", cfg.c_mid, cfg.n_thing + cfg.n_stuff, 1, 1, false});
    for (int j = 0; j < cfg.conv_num; ++j) {
        const int cin = j == 0 ? cfg.c_backbone + (cfg.coord_kernel ? 2 : 0) : cfg.c_mid;
        specs.push_back({"kernel.conv" + std::to_string(j), cin, cfg.c_mid, 3, 1, true});
    }
    specs.push_back({"kernel.out", cfg.c_mid, cfg.c_e, 1, 1, false});
    for (int j = 0; j < cfg.conv_num; ++j) {
        const int cin = j == 0 ? cfg.c_e + (cfg.coord_encoder ? 2 : 0) : cfg.c_e;
        specs.push_back({"encoder.conv" + std::to_string(j), cin, cfg.c_e, 3, 1, true});
    }
    specs.push_back({"encoder.out", cfg.c_e, cfg.c_e, 1, 1, false});
    return specs;
}

}  // namespace detail

/// Total trainable scalars implied by a config: for every conv layer
/// cout*cin*k*k + cout, plus 2*cout where the layer carries GroupNorm.
inline std::int64_t expected_param_count(const ModelConfig& cfg) {
    std::int64_t n = 0;
    for (const auto& s : detail::layer_specs(cfg)) {
        n += static_cast<std::int64_t>(s.cout) * s.cin * s.k * s.k + s.cout;
        if (s.gn_relu) n += 2 * static_cast<std::int64_t>(s.cout);
    }
    return n;
}

/// The fully convolutional network: a strided conv trunk standing in for a
/// feature pyramid, the stage-shared position and kernel heads, the summed
/// high-resolution feature, and the coordinate-aware feature encoder.
template <typename T>
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(seed);
        for (const auto& spec : detail::layer_specs(cfg_)) {
            const double bound = 1.0 / std::sqrt(double(spec.cin) * spec.k * spec.k);
            Tensor<T> w = Tensor<T>::zeros({spec.cout, spec.cin, spec.k, spec.k});
            for (std::int64_t i = 0; i < w.numel(); ++i)
                w.mutable_data()[i] = static_cast<T>(rng.uniform(-bound, bound));
            params_.add(spec.name + ".weight", std::move(w));
            Tensor<T> b = Tensor<T>::zeros({spec.cout});
            if (spec.name == "pos.out") {
                // thing channels start at prior probability 0.01 so the
                // focal loss sees near-empty heatmaps at step 0
                const T prior_bias = static_cast<T>(-std::log((1.0 - 0.01) / 0.01));
                for (int c = 0; c < cfg_.n_thing; ++c) b.mutable_data()[c] = prior_bias;
            }
            params_.add(spec.name + ".bias", std::move(b));
            if (spec.gn_relu) {
                params_.add(spec.name + ".gn.gamma", Tensor<T>::full({spec.cout}, T(1)));
                params_.add(spec.name + ".gn.beta", Tensor<T>::zeros({spec.cout}));
            }
        }
    }

    Model(ModelConfig cfg, ParamSet<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
        cfg_.validate();
        for (const auto& spec : detail::layer_specs(cfg_)) {
            const Shape want{spec.cout, spec.cin, spec.k, spec.k};
            require(params_.get(spec.name + ".weight").shape() == want,
                    "checkpoint does not match model config at " + spec.name);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }

    ModelOutputs<T> forward(const Tensor<T>& image) const {
        require(image.shape().size() == 3 && image.dim(0) == 3,
                "model: image must be [3,H,W], got " + shape_str(image.shape()));
        const int h = image.dim(1), w = image.dim(2);
        const int max_stride = cfg_.stage_strides.back();
        require(h % max_stride == 0 && w % max_stride == 0,
                "model: image extents " + shape_str(image.shape()) +
                    " must be divisible by stride " + std::to_string(max_stride));

        ModelOutputs<T> out;
        Tensor<T> x = conv_block(image, "backbone.stem0", 2);
        x = conv_block(x, "backbone.stem1", 2);

        // trunk features at every power-of-two stride from 4 upward
        std::vector<Tensor<T>> trunk{x};
        std::vector<int> trunk_strides{cfg_.encoder_stride};
        int level = 0;
        for (int s = cfg_.encoder_stride * 2; s <= max_stride; s *= 2, ++level) {
            trunk.push_back(conv_block(trunk.back(), "backbone.down" + std::to_string(level), 2));
            trunk_strides.push_back(s);
        }

        // high-resolution feature: per-stage 1x1 projections, upsampled and summed
        Tensor<T> f_h;
        for (size_t i = 0; i < cfg_.stage_strides.size(); ++i) {
            const Tensor<T>& xi = stage_feature(trunk, trunk_strides, cfg_.stage_strides[i]);
            Tensor<T> p = conv_plain(xi, "fh.proj" + std::to_string(i), 1);
            p = bilinear_resize(p, h / cfg_.encoder_stride, w / cfg_.encoder_stride);
            f_h = f_h.defined() ? add(f_h, p) : p;
        }
        out.f_h = f_h;

        for (size_t i = 0; i < cfg_.stage_strides.size(); ++i) {
            const Tensor<T>& xi = stage_feature(trunk, trunk_strides, cfg_.stage_strides[i]);
            StageOutput<T> so;
            so.stage = static_cast<int>(i);
            so.stride = cfg_.stage_strides[i];

            Tensor<T> p = xi;
            for (int j = 0; j < cfg_.conv_num; ++j)
                p = conv_block(p, "pos.conv" + std::to_string(j), 1);
            p = conv_plain(p, "pos.out", 1);
            so.l_th = sigmoid(slice_channels(p, 0, cfg_.n_thing));
            so.l_st = sigmoid(slice_channels(p, cfg_.n_thing, cfg_.n_thing + cfg_.n_stuff));

            Tensor<T> k = cfg_.coord_kernel
                              ? concat_channels(xi, coord_channels<T>(xi.dim(1), xi.dim(2)))
                              : xi;
            for (int j = 0; j < cfg_.conv_num; ++j)
                k = conv_block(k, "kernel.conv" + std::to_string(j), 1);
            so.g = conv_plain(k, "kernel.out", 1);
            out.stages.push_back(std::move(so));
        }

        Tensor<T> e = cfg_.coord_encoder
                          ? concat_channels(f_h, coord_channels<T>(f_h.dim(1), f_h.dim(2)))
                          : f_h;
        for (int j = 0; j < cfg_.conv_num; ++j)
            e = conv_block(e, "encoder.conv" + std::to_string(j), 1);
        out.f_e = conv_plain(e, "encoder.out", 1);
        return out;
    }

private:
    const Tensor<T>& stage_feature(const std::vector<Tensor<T>>& trunk,
                                   const std::vector<int>& strides, int stride) const {
        for (size_t i = 0; i < strides.size(); ++i)
            if (strides[i] == stride) return trunk[i];
        throw ShapeError("model: no trunk feature at stride " + std::to_string(stride));
    }

    Tensor<T> conv_plain(const Tensor<T>& x, const std::string& name, int stride) const {
        const Tensor<T>& w = params_.get(name + ".weight");
        return conv2d(x, w, params_.get(name + ".bias"), stride, (w.dim(2) - 1) / 2);
    }

    Tensor<T> conv_block(const Tensor<T>& x, const std::string& name, int stride) const {
        Tensor<T> y = conv_plain(x, name, stride);
        y = group_norm(y, detail::gn_groups(y.dim(0)), params_.get(name + ".gn.gamma"),
                       params_.get(name + ".gn.beta"));
        return relu(y);
    }

    ModelConfig cfg_;
    ParamSet<T> params_;
};

}  // namespace panoseg
