#include "panoseg/data_synth.hpp"

#include <algorithm>
#include <cmath>

namespace panoseg {

namespace {

struct Rgb {
    double r, g, b;
};

// Fixed palettes keyed by category index. Things are bright and saturated,
// stuff darker; indices beyond the base palette rotate the hue.
Rgb thing_color(int category) {
    static const Rgb base[] = {{0.86, 0.24, 0.22}, {0.25, 0.42, 0.88}, {0.92, 0.83, 0.25}};
    if (category < 3) return base[category];
    const double t = 0.38196601125 * (category + 1);
    const double hue = 6.0 * (t - std::floor(t));
    const int i = static_cast<int>(hue);
    const double f = hue - i;
    switch (i % 6) {
        case 0: return {0.9, 0.3 + 0.5 * f, 0.25};
        case 1: return {0.9 - 0.5 * f, 0.85, 0.25};
        case 2: return {0.3, 0.85, 0.3 + 0.5 * f};
        case 3: return {0.3, 0.85 - 0.5 * f, 0.85};
        case 4: return {0.3 + 0.5 * f, 0.35, 0.88};
        default: return {0.88, 0.3, 0.85 - 0.5 * f};
    }
}

Rgb stuff_color(int category) {
    static const Rgb base[] = {{0.16, 0.42, 0.20}, {0.36, 0.36, 0.52}, {0.48, 0.38, 0.22},
                               {0.20, 0.44, 0.48}};
    if (category < 4) return base[category];
    Rgb c = thing_color(category + 7);
    return {0.4 * c.r, 0.4 * c.g, 0.4 * c.b};
}

enum class Family { Disc, Rect, Triangle };

Family family_of(int category) {
    switch (category % 3) {
        case 0: return Family::Disc;
        case 1: return Family::Rect;
        default: return Family::Triangle;
    }
}

// Rasterize one shape into a fresh mask; returns false if it would not fit.
bool rasterize(Family family, double cx, double cy, double extent_x, double extent_y, int h,
               int w, std::vector<std::uint8_t>& mask) {
    mask.assign(static_cast<size_t>(h) * w, 0);
    const int x0 = static_cast<int>(std::floor(cx - extent_x / 2));
    const int x1 = static_cast<int>(std::ceil(cx + extent_x / 2));
    const int y0 = static_cast<int>(std::floor(cy - extent_y / 2));
    const int y1 = static_cast<int>(std::ceil(cy + extent_y / 2));
    if (x0 < 0 || y0 < 0 || x1 >= w || y1 >= h) return false;
    bool any = false;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double px = x + 0.5 - cx;
            const double py = y + 0.5 - cy;
            bool inside = false;
            switch (family) {
                case Family::Disc: {
                    const double rx = extent_x / 2, ry = extent_y / 2;
                    inside = (px * px) / (rx * rx) + (py * py) / (ry * ry) <= 1.0;
                    break;
                }
                case Family::Rect:
                    inside = std::abs(px) <= extent_x / 2 && std::abs(py) <= extent_y / 2;
                    break;
                case Family::Triangle: {
                    // isoceles, apex up: y spans [-ey/2, ey/2], width grows linearly
                    const double t = (py + extent_y / 2) / extent_y;
                    inside = t >= 0.0 && t <= 1.0 && std::abs(px) <= t * extent_x / 2;
                    break;
                }
            }
            if (inside) {
                mask[static_cast<size_t>(y) * w + x] = 1;
                any = true;
            }
        }
    return any;
}

void finalize_annotation(InstanceAnnotation& inst, int h, int w) {
    std::int64_t sx = 0, sy = 0, n = 0;
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (inst.mask[static_cast<size_t>(y) * w + x]) {
                sx += x;
                sy += y;
                ++n;
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
    inst.center_x = static_cast<double>(sx) / static_cast<double>(n);
    inst.center_y = static_cast<double>(sy) / static_cast<double>(n);
    inst.x0 = x0;
    inst.y0 = y0;
    inst.x1 = x1;
    inst.y1 = y1;
}

}  // namespace

double gaussian_radius(double box_h, double box_w, double min_overlap) {
    const double h = box_h, w = box_w, o = min_overlap;
    // case 1: box shifted diagonally; overlap (w-r)(h-r) against union 2wh - overlap
    const double b1 = h + w;
    const double c1 = w * h * (1 - o) / (1 + o);
    const double r1 = (b1 - std::sqrt(std::max(0.0, b1 * b1 - 4 * c1))) / 2;
    // case 2: box shrunk on both sides; (w-2r)(h-2r) / (wh) >= o
    const double b2 = h + w;
    const double c2 = (1 - o) * w * h;
    const double r2 = (b2 - std::sqrt(std::max(0.0, b2 * b2 - 4 * c2))) / 4;
    // case 3: box grown on both sides; wh / ((w+2r)(h+2r)) >= o
    const double b3 = o * (h + w);
    const double c3 = (o - 1) * w * h;
    const double r3 = (-b3 + std::sqrt(std::max(0.0, b3 * b3 - 4 * o * c3))) / (4 * o);
    return std::max(0.0, std::min({r1, r2, r3}));
}

std::vector<int> assign_stage(double scale, const std::vector<StageSpec>& stages,
                              bool* fell_outside) {
    std::vector<int> out;
    for (size_t i = 0; i < stages.size(); ++i)
        if (scale >= stages[i].scale_lo && scale <= stages[i].scale_hi)
            out.push_back(static_cast<int>(i));
    if (fell_outside) *fell_outside = out.empty();
    if (out.empty()) {
        size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < stages.size(); ++i) {
            const double d = scale < stages[i].scale_lo ? stages[i].scale_lo - scale
                                                        : scale - stages[i].scale_hi;
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        out.push_back(static_cast<int>(best));
    }
    return out;
}

std::vector<std::uint8_t> nearest_downsample(const std::vector<std::uint8_t>& map, int h, int w,
                                             int out_h, int out_w) {
    std::vector<std::uint8_t> out(static_cast<size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / out_h));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / out_w));
            out[static_cast<size_t>(y) * out_w + x] = map[static_cast<size_t>(sy) * w + sx];
        }
    }
    return out;
}

PanopticSample generate_sample(std::uint64_t seed, const DataConfig& cfg) {
    if (cfg.height < 8 || cfg.width < 8 || cfg.n_thing < 1 || cfg.n_stuff < 1 ||
        cfg.min_things < 0 || cfg.max_things < cfg.min_things || cfg.min_size < 2 ||
        cfg.max_size < cfg.min_size)
        throw ConfigError("generate_sample: invalid DataConfig");

    Rng rng(seed);
    const int h = cfg.height, w = cfg.width;
    PanopticSample sample;
    sample.height = h;
    sample.width = w;
    sample.seed = seed;

    // stuff bands: jittered equal split, every class present
    sample.stuff_map.assign(static_cast<size_t>(h) * w, 0);
    std::vector<int> bounds(static_cast<size_t>(cfg.n_stuff) + 1, 0);
    bounds.back() = h;
    const double band = static_cast<double>(h) / cfg.n_stuff;
    for (int i = 1; i < cfg.n_stuff; ++i) {
        const double jitter = rng.uniform(-band / 4, band / 4);
        bounds[static_cast<size_t>(i)] = static_cast<int>(std::round(band * i + jitter));
        bounds[static_cast<size_t>(i)] =
            std::clamp(bounds[static_cast<size_t>(i)], bounds[static_cast<size_t>(i - 1)] + 2,
                       h - 2 * (cfg.n_stuff - i));
    }
    for (int c = 0; c < cfg.n_stuff; ++c)
        for (int y = bounds[static_cast<size_t>(c)]; y < bounds[static_cast<size_t>(c) + 1]; ++y)
            for (int x = 0; x < w; ++x)
                sample.stuff_map[static_cast<size_t>(y) * w + x] = static_cast<std::uint8_t>(c);

    // background texture
    std::vector<double> img(3 * static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int c = sample.stuff_map[static_cast<size_t>(y) * w + x];
            const Rgb col = stuff_color(c);
            const double tex = 0.04 * std::sin(2.0 * 3.14159265358979 * (x + 3.0 * c) / 7.0) +
                               0.03 * std::sin(2.0 * 3.14159265358979 * (y + 5.0 * c) / 11.0);
            const size_t i = static_cast<size_t>(y) * w + x;
            img[i] = col.r + tex;
            img[static_cast<size_t>(h) * w + i] = col.g + tex;
            img[2 * static_cast<size_t>(h) * w + i] = col.b + tex;
        }

    // things: placement with bounded occlusion, draw order resolves overlap
    const int n_shapes = rng.uniform_int(cfg.min_things, cfg.max_things);
    std::vector<std::int16_t> owner(static_cast<size_t>(h) * w, -1);
    std::vector<int> categories;
    std::vector<double> brightness;
    std::vector<std::vector<std::uint8_t>> full_masks;
    std::vector<std::uint8_t> cand;
    for (int k = 0; k < n_shapes; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
            const int category = rng.uniform_int(0, cfg.n_thing - 1);
            const double extent = rng.uniform(cfg.min_size, cfg.max_size);
            const double aspect = rng.uniform(0.65, 1.0);
            double ex = extent, ey = extent * aspect;
            if (rng.bernoulli(0.5)) std::swap(ex, ey);
            if (ex + 2 > w || ey + 2 > h) {
                if (cfg.min_size + 2 > std::min(h, w))
                    throw DataError("generate_sample: configured shapes cannot fit the image");
                continue;
            }
            const double cx = rng.uniform(ex / 2 + 1, w - ex / 2 - 1);
            const double cy = rng.uniform(ey / 2 + 1, h - ey / 2 - 1);
            if (!rasterize(family_of(category), cx, cy, ex, ey, h, w, cand)) continue;

            // limit mutual occlusion so every instance keeps most of its area
            std::int64_t cand_area = 0, overlap = 0;
            for (size_t i = 0; i < cand.size(); ++i) {
                cand_area += cand[i];
                overlap += cand[i] && owner[i] >= 0;
            }
            if (overlap * 10 > cand_area * 3) continue;
            bool hurts_earlier = false;
            for (size_t e = 0; e < full_masks.size() && !hurts_earlier; ++e) {
                std::int64_t earlier_area = 0, cut = 0;
                for (size_t i = 0; i < cand.size(); ++i) {
                    earlier_area += full_masks[e][i];
                    cut += full_masks[e][i] && cand[i];
                }
                if (cut * 10 > earlier_area * 4) hurts_earlier = true;
            }
            if (hurts_earlier) continue;

            for (size_t i = 0; i < cand.size(); ++i)
                if (cand[i]) owner[i] = static_cast<std::int16_t>(full_masks.size());
            full_masks.push_back(cand);
            categories.push_back(category);
            brightness.push_back(1.0 + rng.uniform(-0.08, 0.08));
            placed = true;
        }
    }

    // visible masks from the owner map; drop slivers
    for (size_t idx = 0; idx < full_masks.size(); ++idx) {
        InstanceAnnotation inst;
        inst.category = categories[idx];
        inst.mask.assign(static_cast<size_t>(h) * w, 0);
        std::int64_t area = 0;
        for (size_t i = 0; i < inst.mask.size(); ++i)
            if (owner[i] == static_cast<std::int16_t>(idx)) {
                inst.mask[i] = 1;
                ++area;
            }
        if (area < 8) continue;
        finalize_annotation(inst, h, w);
        const Rgb col = thing_color(inst.category);
        const double gain = brightness[idx];
        for (int y = inst.y0; y <= inst.y1; ++y)
            for (int x = inst.x0; x <= inst.x1; ++x) {
                const size_t i = static_cast<size_t>(y) * w + x;
                if (!inst.mask[i]) continue;
                img[i] = col.r * gain;
                img[static_cast<size_t>(h) * w + i] = col.g * gain;
                img[2 * static_cast<size_t>(h) * w + i] = col.b * gain;
            }
        sample.things.push_back(std::move(inst));
    }

    // pixel noise, clamp, quantize
    sample.image.resize(img.size());
    for (size_t i = 0; i < img.size(); ++i) {
        const double v = std::clamp(img[i] + cfg.noise_std * rng.normal(), 0.0, 1.0);
        sample.image[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return sample;
}

PanopticSample flip_horizontal(const PanopticSample& sample) {
    const int h = sample.height, w = sample.width;
    PanopticSample out;
    out.height = h;
    out.width = w;
    out.seed = sample.seed;
    out.image.resize(sample.image.size());
    out.stuff_map.resize(sample.stuff_map.size());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.image[(static_cast<size_t>(c) * h + y) * w + x] =
                    sample.image[(static_cast<size_t>(c) * h + y) * w + (w - 1 - x)];
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.stuff_map[static_cast<size_t>(y) * w + x] =
                sample.stuff_map[static_cast<size_t>(y) * w + (w - 1 - x)];
    for (const InstanceAnnotation& inst : sample.things) {
        InstanceAnnotation flipped;
        flipped.category = inst.category;
        flipped.mask.assign(inst.mask.size(), 0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                flipped.mask[static_cast<size_t>(y) * w + x] =
                    inst.mask[static_cast<size_t>(y) * w + (w - 1 - x)];
        finalize_annotation(flipped, h, w);
        out.things.push_back(std::move(flipped));
    }
    return out;
}

PanopticLabel ground_truth_label(const PanopticSample& sample) {
    const int h = sample.height, w = sample.width;
    PanopticLabel label;
    label.height = h;
    label.width = w;
    label.id_map.assign(static_cast<size_t>(h) * w, 0);

    int n_stuff = 0;
    for (std::uint8_t v : sample.stuff_map) n_stuff = std::max(n_stuff, static_cast<int>(v) + 1);

    std::vector<std::int64_t> stuff_area(static_cast<size_t>(n_stuff), 0);
    for (size_t i = 0; i < sample.stuff_map.size(); ++i) {
        label.id_map[i] = 1 + sample.stuff_map[i];
        ++stuff_area[sample.stuff_map[i]];
    }
    for (size_t t = 0; t < sample.things.size(); ++t) {
        const InstanceAnnotation& inst = sample.things[t];
        const int id = 1 + n_stuff + static_cast<int>(t);
        std::int64_t area = 0;
        for (size_t i = 0; i < inst.mask.size(); ++i)
            if (inst.mask[i]) {
                --stuff_area[static_cast<size_t>(label.id_map[i]) - 1];
                label.id_map[i] = id;
                ++area;
            }
        label.segments.push_back({id, inst.category, SegmentKind::Thing, area, 1.0});
    }
    for (int c = 0; c < n_stuff; ++c) {
        if (stuff_area[static_cast<size_t>(c)] == 0) {
            for (auto& v : label.id_map)
                if (v == 1 + c) v = 0;  // fully occluded class leaves no segment
            continue;
        }
        label.segments.push_back(
            {1 + c, c, SegmentKind::Stuff, stuff_area[static_cast<size_t>(c)], 1.0});
    }
    std::sort(label.segments.begin(), label.segments.end(),
              [](const Segment& a, const Segment& b) { return a.id < b.id; });
    return label;
}

}  // namespace panoseg
