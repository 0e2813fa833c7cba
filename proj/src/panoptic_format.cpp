#include "panoseg/panoptic_io.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "panoseg/png_io.hpp"

namespace panoseg {

void save_panoptic(const PanopticLabel& label, const std::filesystem::path& png_path,
                   const std::filesystem::path& json_path) {
    label.validate();
    RgbImage img;
    img.width = label.width;
    img.height = label.height;
    img.pixels.resize(static_cast<size_t>(3) * label.width * label.height);
    for (size_t i = 0; i < label.id_map.size(); ++i) {
        const std::int32_t id = label.id_map[i];
        require(id >= 0 && id < (1 << 24), "save_panoptic: id out of 24-bit range");
        img.pixels[3 * i + 0] = static_cast<std::uint8_t>(id & 0xff);
        img.pixels[3 * i + 1] = static_cast<std::uint8_t>((id >> 8) & 0xff);
        img.pixels[3 * i + 2] = static_cast<std::uint8_t>((id >> 16) & 0xff);
    }
    write_png(png_path, img);

    nlohmann::json j;
    j["format"] = "panoseg-panoptic-v1";
    j["height"] = label.height;
    j["width"] = label.width;
    nlohmann::json segs = nlohmann::json::array();
    for (const Segment& s : label.segments) {
        nlohmann::json e;
        e["id"] = s.id;
        e["category"] = s.category;
        e["kind"] = kind_name(s.kind);
        e["area"] = s.area;
        e["score"] = s.score;
        segs.push_back(e);
    }
    j["segments"] = segs;
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw DataError("save_panoptic: cannot write " + json_path.string());
    out << j.dump(2) << '\n';
}

PanopticLabel load_panoptic(const std::filesystem::path& png_path,
                            const std::filesystem::path& json_path) {
    RgbImage img = read_png(png_path);
    PanopticLabel label;
    label.width = img.width;
    label.height = img.height;
    label.id_map.resize(static_cast<size_t>(img.width) * img.height);
    for (size_t i = 0; i < label.id_map.size(); ++i)
        label.id_map[i] = static_cast<std::int32_t>(img.pixels[3 * i + 0]) |
                          (static_cast<std::int32_t>(img.pixels[3 * i + 1]) << 8) |
                          (static_cast<std::int32_t>(img.pixels[3 * i + 2]) << 16);

    std::ifstream in(json_path);
    if (!in) throw DataError("load_panoptic: cannot read " + json_path.string());
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("format", "") != "panoseg-panoptic-v1")
        throw DataError(json_path.string() + ": not a panoseg-panoptic-v1 table");
    for (const auto& e : j.at("segments")) {
        Segment s;
        s.id = e.at("id").get<int>();
        s.category = e.at("category").get<int>();
        const std::string kind = e.at("kind").get<std::string>();
        if (kind != "thing" && kind != "stuff")
            throw DataError(json_path.string() + ": bad segment kind " + kind);
        s.kind = kind == "thing" ? SegmentKind::Thing : SegmentKind::Stuff;
        s.area = e.at("area").get<std::int64_t>();
        s.score = e.at("score").get<double>();
        label.segments.push_back(s);
    }
    label.validate();
    return label;
}

namespace {

struct Rgb8 {
    std::uint8_t r, g, b;
};

Rgb8 hsv(double h, double s, double v) {
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    auto q = [m](double t) { return static_cast<std::uint8_t>(std::lround((t + m) * 255.0)); };
    return {q(r), q(g), q(b)};
}

Rgb8 palette(SegmentKind kind, int category, int instance_ordinal) {
    const double hue = std::fmod(137.50776405 * (category + (kind == SegmentKind::Stuff ? 37 : 0)),
                                 360.0);
    const double sat = kind == SegmentKind::Thing ? 0.85 : 0.45;
    const double val = kind == SegmentKind::Thing
                           ? 0.95 - 0.13 * (instance_ordinal % 4)
                           : 0.55;
    return hsv(hue, sat, val);
}

}  // namespace

void render_panoptic(const PanopticLabel& label, const std::filesystem::path& png_path) {
    label.validate();
    RgbImage img;
    img.width = label.width;
    img.height = label.height;
    img.pixels.assign(static_cast<size_t>(3) * label.width * label.height, 0);

    std::map<int, Rgb8> colors;
    std::map<int, int> ordinal_by_category;
    for (const Segment& s : label.segments) {
        const int ordinal = ordinal_by_category[s.category]++;
        colors[s.id] = palette(s.kind, s.category, ordinal);
    }
    for (size_t i = 0; i < label.id_map.size(); ++i) {
        const std::int32_t id = label.id_map[i];
        if (id == 0) continue;  // void stays black
        const Rgb8 c = colors.at(id);
        img.pixels[3 * i + 0] = c.r;
        img.pixels[3 * i + 1] = c.g;
        img.pixels[3 * i + 2] = c.b;
    }
    write_png(png_path, img);
}

}  // namespace panoseg
