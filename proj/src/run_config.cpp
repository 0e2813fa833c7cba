#include "panoseg/run_config.hpp"

#include <fstream>
#include <set>

namespace panoseg {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + key + "' in " + where);
}

template <typename V>
void read(const nlohmann::json& j, const char* key, V& into) {
    if (j.contains(key)) into = j.at(key).get<V>();
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["precision"] = precision;
    j["data"] = {{"height", data.height},
                 {"width", data.width},
                 {"n_thing", data.n_thing},
                 {"n_stuff", data.n_stuff},
                 {"min_things", data.min_things},
                 {"max_things", data.max_things},
                 {"min_size", data.min_size},
                 {"max_size", data.max_size},
                 {"noise_std", data.noise_std},
                 {"max_attempts", data.max_attempts}};
    j["model"] = model.to_json();
    j["loss"] = {{"lambda_pos", loss.lambda_pos}, {"lambda_seg", loss.lambda_seg},
                 {"k_points", loss.k_points},     {"focal_alpha", loss.focal_alpha},
                 {"focal_beta", loss.focal_beta}, {"eps", loss.eps}};
    j["train"] = {{"base_lr", train.base_lr},
                  {"momentum", train.momentum},
                  {"weight_decay", train.weight_decay},
                  {"power", train.power},
                  {"total_iters", train.total_iters},
                  {"batch_size", train.batch_size},
                  {"seed", train.seed},
                  {"eval_every", train.eval_every},
                  {"eval_count", train.eval_count},
                  {"eval_seed", train.eval_seed},
                  {"flip", train.flip}};
    j["infer"] = {{"thing_score_thresh", infer.thing_score_thresh},
                  {"stuff_score_thresh", infer.stuff_score_thresh},
                  {"pool_k", infer.pool_k},
                  {"fuse_thres", infer.fuse_thres},
                  {"class_aware", infer.class_aware},
                  {"keep_top", infer.keep_top},
                  {"bin_thresh", infer.bin_thresh},
                  {"overlap_thresh", infer.overlap_thresh},
                  {"stuff_min_area", infer.stuff_min_area},
                  {"merge_mode", infer.merge_mode}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig cfg;
    check_keys(j, {"precision", "data", "model", "loss", "train", "infer"}, "top level");
    read(j, "precision", cfg.precision);

    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d,
                   {"height", "width", "n_thing", "n_stuff", "min_things", "max_things",
                    "min_size", "max_size", "noise_std", "max_attempts"},
                   "data");
        read(d, "height", cfg.data.height);
        read(d, "width", cfg.data.width);
        read(d, "n_thing", cfg.data.n_thing);
        read(d, "n_stuff", cfg.data.n_stuff);
        read(d, "min_things", cfg.data.min_things);
        read(d, "max_things", cfg.data.max_things);
        read(d, "min_size", cfg.data.min_size);
        read(d, "max_size", cfg.data.max_size);
        read(d, "noise_std", cfg.data.noise_std);
        read(d, "max_attempts", cfg.data.max_attempts);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m,
                   {"n_thing", "n_stuff", "c_backbone", "c_mid", "c_e", "conv_num",
                    "stage_strides", "encoder_stride", "coord_kernel", "coord_encoder",
                    "scale_ranges"},
                   "model");
        read(m, "n_thing", cfg.model.n_thing);
        read(m, "n_stuff", cfg.model.n_stuff);
        read(m, "c_backbone", cfg.model.c_backbone);
        read(m, "c_mid", cfg.model.c_mid);
        read(m, "c_e", cfg.model.c_e);
        read(m, "conv_num", cfg.model.conv_num);
        read(m, "stage_strides", cfg.model.stage_strides);
        read(m, "encoder_stride", cfg.model.encoder_stride);
        read(m, "coord_kernel", cfg.model.coord_kernel);
        read(m, "coord_encoder", cfg.model.coord_encoder);
        if (m.contains("scale_ranges")) {
            cfg.model.scale_ranges.clear();
            for (const auto& r : m.at("scale_ranges"))
                cfg.model.scale_ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
        }
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        check_keys(l, {"lambda_pos", "lambda_seg", "k_points", "focal_alpha", "focal_beta", "eps"},
                   "loss");
        read(l, "lambda_pos", cfg.loss.lambda_pos);
        read(l, "lambda_seg", cfg.loss.lambda_seg);
        read(l, "k_points", cfg.loss.k_points);
        read(l, "focal_alpha", cfg.loss.focal_alpha);
        read(l, "focal_beta", cfg.loss.focal_beta);
        read(l, "eps", cfg.loss.eps);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t,
                   {"base_lr", "momentum", "weight_decay", "power", "total_iters", "batch_size",
                    "seed", "eval_every", "eval_count", "eval_seed", "flip"},
                   "train");
        read(t, "base_lr", cfg.train.base_lr);
        read(t, "momentum", cfg.train.momentum);
        read(t, "weight_decay", cfg.train.weight_decay);
        read(t, "power", cfg.train.power);
        read(t, "total_iters", cfg.train.total_iters);
        read(t, "batch_size", cfg.train.batch_size);
        read(t, "seed", cfg.train.seed);
        read(t, "eval_every", cfg.train.eval_every);
        read(t, "eval_count", cfg.train.eval_count);
        read(t, "eval_seed", cfg.train.eval_seed);
        read(t, "flip", cfg.train.flip);
    }
    if (j.contains("infer")) {
        const auto& i = j.at("infer");
        check_keys(i,
                   {"thing_score_thresh", "stuff_score_thresh", "pool_k", "fuse_thres",
                    "class_aware", "keep_top", "bin_thresh", "overlap_thresh", "stuff_min_area",
                    "merge_mode"},
                   "infer");
        read(i, "thing_score_thresh", cfg.infer.thing_score_thresh);
        read(i, "stuff_score_thresh", cfg.infer.stuff_score_thresh);
        read(i, "pool_k", cfg.infer.pool_k);
        read(i, "fuse_thres", cfg.infer.fuse_thres);
        read(i, "class_aware", cfg.infer.class_aware);
        read(i, "keep_top", cfg.infer.keep_top);
        read(i, "bin_thresh", cfg.infer.bin_thresh);
        read(i, "overlap_thresh", cfg.infer.overlap_thresh);
        read(i, "stuff_min_area", cfg.infer.stuff_min_area);
        read(i, "merge_mode", cfg.infer.merge_mode);
    }
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    if (precision != "float32" && precision != "float64")
        throw ConfigError("config: precision must be float32 or float64");
    if (model.n_thing != data.n_thing || model.n_stuff != data.n_stuff)
        throw ConfigError("config: model and data class counts disagree");
    model.validate();
    loss.validate();
    train.validate();
    infer.validate();
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
    nlohmann::json j = nlohmann::json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config: cannot read " + path.string());
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config: " + path.string() + ": " + e.what());
        }
    }
    for (const std::string& ov : overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: override '" + ov + "' is not key.path=value");
        const std::string keypath = ov.substr(0, eq);
        const std::string value = ov.substr(eq + 1);
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(value);
        } catch (const nlohmann::json::exception&) {
            parsed = value;  // bare strings stay strings
        }
        nlohmann::json* node = &j;
        size_t start = 0;
        while (true) {
            const size_t dot = keypath.find('.', start);
            const std::string key = keypath.substr(start, dot - start);
            if (key.empty()) throw ConfigError("config: bad override path '" + keypath + "'");
            if (dot == std::string::npos) {
                (*node)[key] = parsed;
                break;
            }
            node = &(*node)[key];
            start = dot + 1;
        }
    }
    return RunConfig::from_json(j);
}

void write_config_snapshot(const RunConfig& cfg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "config.json", std::ios::trunc);
    if (!out) throw ConfigError("config: cannot write snapshot into " + dir.string());
    out << cfg.to_json().dump(2) << '\n';
}

}  // namespace panoseg
