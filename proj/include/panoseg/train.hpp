#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>

#include "panoseg/eval.hpp"
#include "panoseg/inference.hpp"
#include "panoseg/loss.hpp"
#include "panoseg/model.hpp"

namespace panoseg {

struct TrainConfig {
    double base_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double power = 0.9;
    int total_iters = 5000;
    int batch_size = 8;  // samples accumulated per optimizer step
    std::uint64_t seed = 1;
    int eval_every = 500;  // 0 disables periodic evaluation
    int eval_count = 8;
    std::uint64_t eval_seed = 9000;
    bool flip = true;

    void validate() const {
        if (total_iters < 1 || base_lr <= 0 || batch_size < 1 || power < 0 || momentum < 0 ||
            weight_decay < 0 || eval_every < 0 || eval_count < 0)
            throw ConfigError("train: invalid settings");
    }
};

/// Poly schedule: base_lr * (1 - iter/total_iters)^power.
inline double poly_lr(int iter, const TrainConfig& cfg) {
    require(iter >= 0 && iter < cfg.total_iters, "poly_lr: iter out of range");
    return cfg.base_lr *
           std::pow(1.0 - static_cast<double>(iter) / cfg.total_iters, cfg.power);
}

/// SGD with momentum and decoupled-into-gradient weight decay:
/// v <- momentum v + grad + wd p;  p <- p - lr v. Gradients are cleared.
template <typename T>
void sgd_step(ParamSet<T>& params, ParamSet<T>& velocities, double lr, const TrainConfig& cfg) {
    for (auto& [name, p] : params) {
        require(!p.grad().empty(), "sgd_step: parameter " + name + " has no gradient");
        Tensor<T>& v = velocities.get(name);
        T* pv = v.mutable_data();
        T* pp = p.mutable_data();
        const auto& g = p.grad();
        const T m = static_cast<T>(cfg.momentum);
        const T wd = static_cast<T>(cfg.weight_decay);
        const T step = static_cast<T>(lr);
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            pv[i] = m * pv[i] + g[static_cast<size_t>(i)] + wd * pp[i];
            pp[i] -= step * pv[i];
        }
        p.zero_grad();
    }
}

template <typename T>
ParamSet<T> zero_like(const ParamSet<T>& params) {
    ParamSet<T> out;
    for (const auto& [name, p] : params) out.add(name, Tensor<T>::zeros(p.shape()));
    return out;
}

/// Deterministic sample stream: either fresh synthetic scenes per index or
/// a fixed set cycled in reshuffled order, with optional horizontal flip.
class SampleStream {
public:
    SampleStream(DataConfig cfg, std::uint64_t seed, bool flip)
        : data_cfg_(std::move(cfg)), base_seed_(seed), rng_(Rng::derive(seed, 0x5eed)),
          flip_(flip) {}

    SampleStream(std::vector<PanopticSample> fixed, std::uint64_t seed, bool flip)
        : fixed_(std::move(fixed)), base_seed_(seed), rng_(Rng::derive(seed, 0x5eed)),
          flip_(flip) {
        require(!fixed_.empty(), "sample stream: empty fixed dataset");
    }

    PanopticSample next() {
        PanopticSample s;
        if (fixed_.empty()) {
            s = generate_sample(Rng::derive(base_seed_, counter_++), data_cfg_);
        } else {
            if (cursor_ >= order_.size()) reshuffle();
            s = fixed_[order_[cursor_++]];
        }
        if (flip_ && rng_.bernoulli(0.5)) s = flip_horizontal(s);
        return s;
    }

private:
    void reshuffle() {
        order_.resize(fixed_.size());
        std::iota(order_.begin(), order_.end(), size_t(0));
        for (size_t i = order_.size(); i > 1; --i)
            std::swap(order_[i - 1], order_[static_cast<size_t>(rng_.uniform_int(
                                         0, static_cast<int>(i) - 1))]);
        cursor_ = 0;
    }

    DataConfig data_cfg_;
    std::vector<PanopticSample> fixed_;
    std::vector<size_t> order_;
    size_t cursor_ = 0;
    std::uint64_t base_seed_ = 0;
    std::uint64_t counter_ = 0;
    Rng rng_;
    bool flip_;
};

/// Panoptic quality of a model over a sample set.
template <typename T>
PQResult evaluate_pq(const Model<T>& model, const std::vector<PanopticSample>& samples,
                     const std::vector<StageSpec>& stages, const InferConfig& infer_cfg,
                     bool oracle_position = false, bool oracle_class = false) {
    NoGradGuard no_grad;
    PQAccumulator acc;
    for (const PanopticSample& sample : samples) {
        ModelOutputs<T> outputs = model.forward(image_tensor<T>(sample));
        InferenceResult<T> inf;
        if (oracle_position || oracle_class) {
            Targets<T> targets = build_targets<T>(sample, stages, model.config().n_thing,
                                                  model.config().n_stuff);
            auto cands = oracle_candidates(outputs, targets, sample.things, oracle_position,
                                           oracle_class, infer_cfg);
            inf = run_inference(outputs, sample.height, sample.width, infer_cfg, &cands);
        } else {
            inf = run_inference(outputs, sample.height, sample.width, infer_cfg);
        }
        acc.add(inf.label, ground_truth_label(sample));
    }
    return acc.result();
}

struct StepRecord {
    int step = 0;
    double lr = 0.0;
    LossBreakdown loss;
};

struct TrainHooks {
    // called after every optimizer step with the averaged breakdown
    std::function<void(const StepRecord&)> on_step;
    // called after each periodic evaluation
    std::function<void(int step, const PQResult&)> on_eval;
};

template <typename T>
struct TrainState {
    Model<T> model;
    ParamSet<T> velocities;
    int next_iter = 0;
    double best_pq = -1.0;
};

inline std::vector<StageSpec> stage_specs(const ModelConfig& cfg) {
    std::vector<StageSpec> out;
    for (size_t i = 0; i < cfg.stage_strides.size(); ++i)
        out.push_back({cfg.stage_strides[i], cfg.scale_ranges[i][0], cfg.scale_ranges[i][1]});
    return out;
}

/// The accumulated-batch training loop. Throws NumericError on a non-finite
/// loss after handing the offending breakdown to on_step.
template <typename T>
void train_loop(TrainState<T>& state, SampleStream& stream, const TrainConfig& cfg,
                const LossConfig& loss_cfg, const InferConfig& infer_cfg,
                const std::vector<PanopticSample>& eval_samples, const TrainHooks& hooks) {
    cfg.validate();
    loss_cfg.validate();
    const std::vector<StageSpec> stages = stage_specs(state.model.config());
    state.model.params().zero_grads();

    for (int iter = state.next_iter; iter < cfg.total_iters; ++iter) {
        const double lr = poly_lr(iter, cfg);
        StepRecord rec;
        rec.step = iter;
        rec.lr = lr;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const PanopticSample sample = stream.next();
            Targets<T> targets = build_targets<T>(sample, stages, state.model.config().n_thing,
                                                  state.model.config().n_stuff);
            ModelOutputs<T> outputs = state.model.forward(image_tensor<T>(sample));
            auto [loss, bd] = total_loss(outputs, targets, sample.things,
                                         state.model.config().n_stuff, loss_cfg);
            rec.loss.pos_thing += bd.pos_thing / cfg.batch_size;
            rec.loss.pos_stuff += bd.pos_stuff / cfg.batch_size;
            rec.loss.seg += bd.seg / cfg.batch_size;
            rec.loss.total += bd.total / cfg.batch_size;
            rec.loss.thing_entries += bd.thing_entries;
            rec.loss.stuff_entries += bd.stuff_entries;
            if (!std::isfinite(bd.total)) {
                if (hooks.on_step) hooks.on_step(rec);
                throw NumericError("training aborted: non-finite loss at step " +
                                   std::to_string(iter));
            }
            backward(mul_scalar(loss, static_cast<T>(1.0 / cfg.batch_size)));
        }
        sgd_step(state.model.params(), state.velocities, lr, cfg);
        state.next_iter = iter + 1;
        if (hooks.on_step) hooks.on_step(rec);

        if (cfg.eval_every > 0 && !eval_samples.empty() &&
            ((iter + 1) % cfg.eval_every == 0 || iter + 1 == cfg.total_iters)) {
            PQResult pq = evaluate_pq(state.model, eval_samples, stages, infer_cfg);
            if (hooks.on_eval) hooks.on_eval(iter + 1, pq);
            state.best_pq = std::max(state.best_pq, pq.pq);
        }
    }
}

/// Checkpoint = ParamSet files plus a config/progress header; optimizer
/// velocities ride along as a sibling pair so training resumes faithfully.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const std::string& stem,
                     const TrainState<T>& state, const TrainConfig& train_cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json extra;
    extra["model_config"] = state.model.config().to_json();
    extra["next_iter"] = state.next_iter;
    extra["best_pq"] = state.best_pq;
    extra["total_iters"] = train_cfg.total_iters;
    state.model.params().save(dir / (stem + ".json"), dir / (stem + ".bin"), extra);
    state.velocities.save(dir / (stem + ".opt.json"), dir / (stem + ".opt.bin"));
}

template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& dir, const std::string& stem) {
    namespace fs = std::filesystem;
    nlohmann::json extra;
    ParamSet<T> params = ParamSet<T>::load(dir / (stem + ".json"), dir / (stem + ".bin"), &extra);
    ModelConfig cfg = ModelConfig::from_json(extra.at("model_config"));
    TrainState<T> state{Model<T>(cfg, std::move(params)), ParamSet<T>{}, 0, -1.0};
    state.next_iter = extra.value("next_iter", 0);
    state.best_pq = extra.value("best_pq", -1.0);
    const fs::path opt_json = dir / (stem + ".opt.json");
    if (fs::exists(opt_json))
        state.velocities = ParamSet<T>::load(opt_json, dir / (stem + ".opt.bin"));
    else
        state.velocities = zero_like(state.model.params());
    return state;
}

}  // namespace panoseg
