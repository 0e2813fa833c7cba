#include "panoseg/sample_io.hpp"

#include <fstream>

#include <json.hpp>

namespace panoseg {

std::vector<std::int64_t> rle_encode(const std::vector<std::uint8_t>& mask) {
    std::vector<std::int64_t> runs;
    std::uint8_t current = 0;
    std::int64_t run = 0;
    for (std::uint8_t v : mask) {
        const std::uint8_t bit = v ? 1 : 0;
        if (bit == current) {
            ++run;
        } else {
            runs.push_back(run);
            current = bit;
            run = 1;
        }
    }
    runs.push_back(run);
    return runs;
}

std::vector<std::uint8_t> rle_decode(const std::vector<std::int64_t>& runs, std::int64_t size) {
    std::vector<std::uint8_t> mask;
    mask.reserve(static_cast<size_t>(size));
    std::uint8_t current = 0;
    for (std::int64_t run : runs) {
        if (run < 0) throw DataError("rle_decode: negative run length");
        mask.insert(mask.end(), static_cast<size_t>(run), current);
        current = current ? 0 : 1;
    }
    if (static_cast<std::int64_t>(mask.size()) != size)
        throw DataError("rle_decode: runs sum to " + std::to_string(mask.size()) +
                        ", expected " + std::to_string(size));
    return mask;
}

namespace {

std::string sample_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%06d", index);
    return buf;
}

}  // namespace

std::filesystem::path sample_json_path(const std::filesystem::path& dir, int index) {
    return dir / (sample_stem(index) + ".json");
}

void save_sample(const PanopticSample& sample, const std::filesystem::path& dir, int index) {
    nlohmann::json j;
    j["format"] = "panoseg-sample-v1";
    j["seed"] = sample.seed;
    j["height"] = sample.height;
    j["width"] = sample.width;
    j["image_file"] = sample_stem(index) + ".bin";

    nlohmann::json things = nlohmann::json::array();
    for (const InstanceAnnotation& inst : sample.things) {
        nlohmann::json e;
        e["category"] = inst.category;
        e["mass_center"] = {inst.center_x, inst.center_y};
        e["bbox"] = {inst.x0, inst.y0, inst.x1, inst.y1};
        e["mask_rle"] = rle_encode(inst.mask);
        things.push_back(e);
    }
    j["things"] = things;

    // stuff map as (value, run) pairs
    nlohmann::json stuff_runs = nlohmann::json::array();
    size_t i = 0;
    while (i < sample.stuff_map.size()) {
        size_t end = i;
        while (end < sample.stuff_map.size() && sample.stuff_map[end] == sample.stuff_map[i])
            ++end;
        stuff_runs.push_back({static_cast<int>(sample.stuff_map[i]), end - i});
        i = end;
    }
    j["stuff_runs"] = stuff_runs;

    std::ofstream js(sample_json_path(dir, index), std::ios::trunc);
    if (!js) throw DataError("save_sample: cannot write into " + dir.string());
    js << j.dump() << '\n';

    std::ofstream bin(dir / (sample_stem(index) + ".bin"), std::ios::binary | std::ios::trunc);
    bin.write(reinterpret_cast<const char*>(sample.image.data()),
              static_cast<std::streamsize>(sample.image.size()));
    if (!bin) throw DataError("save_sample: cannot write image buffer");
}

PanopticSample load_sample(const std::filesystem::path& dir, int index) {
    std::ifstream js(sample_json_path(dir, index));
    if (!js) throw DataError("load_sample: missing " + sample_json_path(dir, index).string());
    nlohmann::json j = nlohmann::json::parse(js);
    if (j.value("format", "") != "panoseg-sample-v1")
        throw DataError("load_sample: not a panoseg-sample-v1 file");

    PanopticSample sample;
    sample.seed = j.at("seed").get<std::uint64_t>();
    sample.height = j.at("height").get<int>();
    sample.width = j.at("width").get<int>();
    const std::int64_t hw = static_cast<std::int64_t>(sample.height) * sample.width;

    for (const auto& e : j.at("things")) {
        InstanceAnnotation inst;
        inst.category = e.at("category").get<int>();
        inst.center_x = e.at("mass_center").at(0).get<double>();
        inst.center_y = e.at("mass_center").at(1).get<double>();
        inst.x0 = e.at("bbox").at(0).get<int>();
        inst.y0 = e.at("bbox").at(1).get<int>();
        inst.x1 = e.at("bbox").at(2).get<int>();
        inst.y1 = e.at("bbox").at(3).get<int>();
        inst.mask = rle_decode(e.at("mask_rle").get<std::vector<std::int64_t>>(), hw);
        sample.things.push_back(std::move(inst));
    }

    sample.stuff_map.reserve(static_cast<size_t>(hw));
    for (const auto& run : j.at("stuff_runs"))
        sample.stuff_map.insert(sample.stuff_map.end(), run.at(1).get<size_t>(),
                                static_cast<std::uint8_t>(run.at(0).get<int>()));
    if (static_cast<std::int64_t>(sample.stuff_map.size()) != hw)
        throw DataError("load_sample: stuff runs do not cover the image");

    std::ifstream bin(dir / j.at("image_file").get<std::string>(), std::ios::binary);
    if (!bin) throw DataError("load_sample: missing image buffer for sample");
    sample.image.resize(static_cast<size_t>(3) * hw);
    bin.read(reinterpret_cast<char*>(sample.image.data()),
             static_cast<std::streamsize>(sample.image.size()));
    if (!bin) throw DataError("load_sample: truncated image buffer");
    return sample;
}

void save_index(const std::filesystem::path& dir, int count, const DataConfig& cfg,
                std::uint64_t seed) {
    nlohmann::json j;
    j["format"] = "panoseg-index-v1";
    j["count"] = count;
    j["seed"] = seed;
    j["data"] = {{"height", cfg.height},       {"width", cfg.width},
                 {"n_thing", cfg.n_thing},     {"n_stuff", cfg.n_stuff},
                 {"min_things", cfg.min_things}, {"max_things", cfg.max_things},
                 {"min_size", cfg.min_size},   {"max_size", cfg.max_size},
                 {"noise_std", cfg.noise_std}, {"max_attempts", cfg.max_attempts}};
    std::ofstream out(dir / "index.json", std::ios::trunc);
    if (!out) throw DataError("save_index: cannot write into " + dir.string());
    out << j.dump(2) << '\n';
}

int load_index_count(const std::filesystem::path& dir) {
    std::ifstream in(dir / "index.json");
    if (!in) throw DataError("load_index: missing " + (dir / "index.json").string());
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("format", "") != "panoseg-index-v1")
        throw DataError("load_index: not a panoseg-index-v1 file");
    return j.at("count").get<int>();
}

}  // namespace panoseg
