#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "panoseg/nn_ops.hpp"
#include "panoseg/params.hpp"
#include "panoseg/rng.hpp"
#include "panoseg/tensor.hpp"
#include "test_util.hpp"

#include <filesystem>

using namespace panoseg;
using testutil::random_tensor;

namespace {

// Independent quadruple-loop convolution, kept free of any implementation
// details of the real op.
template <typename T>
std::vector<T> conv_oracle(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b,
                           int stride, int pad) {
    const int ci = in.dim(0), h = in.dim(1), ww = in.dim(2);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (ww + 2 * pad - kw) / stride + 1;
    std::vector<T> out(static_cast<size_t>(co) * oh * ow);
    for (int c = 0; c < co; ++c)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T acc = b.data()[c];
                for (int ic = 0; ic < ci; ++ic)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int iy = oy * stride + ky - pad;
                            const int ix = ox * stride + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
                            acc += in.at(ic, iy, ix) * w.data()[((c * ci + ic) * kh + ky) * kw + kx];
                        }
                out[(static_cast<size_t>(c) * oh + oy) * ow + ox] = acc;
            }
    return out;
}

// Sampling-formula resize oracle (align-corners-false, border replication).
template <typename T>
std::vector<T> resize_oracle(const Tensor<T>& in, int oh, int ow) {
    const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
    std::vector<T> out(static_cast<size_t>(c) * oh * ow);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const double sy = (y + 0.5) * double(h) / oh - 0.5;
                const double sx = (x + 0.5) * double(w) / ow - 0.5;
                int y0 = static_cast<int>(std::floor(sy));
                int x0 = static_cast<int>(std::floor(sx));
                double fy = sy - y0, fx = sx - x0;
                if (y0 < 0) { y0 = 0; fy = 0.0; }
                if (y0 > h - 1) { y0 = h - 1; fy = 0.0; }
                if (x0 < 0) { x0 = 0; fx = 0.0; }
                if (x0 > w - 1) { x0 = w - 1; fx = 0.0; }
                const int y1 = std::min(y0 + 1, h - 1);
                const int x1 = std::min(x0 + 1, w - 1);
                const double v = (1 - fy) * ((1 - fx) * in.at(ch, y0, x0) + fx * in.at(ch, y0, x1)) +
                                 fy * ((1 - fx) * in.at(ch, y1, x0) + fx * in.at(ch, y1, x1));
                out[(static_cast<size_t>(ch) * oh + y) * ow + x] = static_cast<T>(v);
            }
    return out;
}

template <typename T>
std::vector<T> max_pool_oracle(const Tensor<T>& in, int k) {
    const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
    const int r = (k - 1) / 2;
    std::vector<T> out(static_cast<size_t>(c) * h * w);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                T best = -std::numeric_limits<T>::infinity();
                for (int yy = y - r; yy <= y + r; ++yy)
                    for (int xx = x - r; xx <= x + r; ++xx) {
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        best = std::max(best, in.at(ch, yy, xx));
                    }
                out[(static_cast<size_t>(ch) * h + y) * w + x] = best;
            }
    return out;
}

}  // namespace

TEST_CASE("conv2d identity 1x1 kernel") {
    Rng rng(7);
    auto in = random_tensor<double>({3, 5, 4}, rng);
    auto w = Tensor<double>::zeros({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w.mutable_data()[c * 3 + c] = 1.0;
    auto b = Tensor<double>::zeros({3});
    auto out = conv2d(in, w, b, 1, 0);
    REQUIRE(out.shape() == Shape{3, 5, 4});
    for (std::int64_t i = 0; i < in.numel(); ++i)
        CHECK(out.data()[i] == doctest::Approx(in.data()[i]).epsilon(1e-12));
}

TEST_CASE("conv2d all-ones 3x3 on ramp equals neighborhood sums") {
    std::vector<double> ramp(16);
    for (int i = 0; i < 16; ++i) ramp[static_cast<size_t>(i)] = i;
    auto in = Tensor<double>::from({1, 4, 4}, ramp);
    auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    auto b = Tensor<double>::zeros({1});
    auto out = conv2d(in, w, b, 1, 1);
    auto expect = conv_oracle(in, w, b, 1, 1);
    for (int i = 0; i < 16; ++i)
        CHECK(out.data()[i] == doctest::Approx(expect[static_cast<size_t>(i)]).epsilon(1e-12));
    // spot value: interior pixel (1,1) sums the 9-neighborhood of the ramp
    CHECK(out.at(0, 1, 1) == doctest::Approx(0 + 1 + 2 + 4 + 5 + 6 + 8 + 9 + 10));
}

TEST_CASE("conv2d 1x1 equals per-pixel matrix multiply") {
    Rng rng(11);
    auto in = random_tensor<double>({4, 6, 5}, rng);
    auto w = random_tensor<double>({3, 4, 1, 1}, rng);
    auto b = random_tensor<double>({3}, rng);
    auto out = conv2d(in, w, b, 1, 0);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 5; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = b.data()[c];
                for (int ic = 0; ic < 4; ++ic) acc += w.data()[c * 4 + ic] * in.at(ic, y, x);
                CHECK(out.at(c, y, x) == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("conv2d randomized against loop oracle, strides 1 and 2") {
    Rng rng(13);
    for (int rep = 0; rep < 30; ++rep) {
        const int ci = rng.uniform_int(1, 4), co = rng.uniform_int(1, 4);
        const int h = rng.uniform_int(3, 16), w = rng.uniform_int(3, 16);
        const int k = rng.bernoulli(0.5) ? 1 : 3;
        const int stride = rng.bernoulli(0.5) ? 1 : 2;
        const int pad = (k - 1) / 2;
        auto in = random_tensor<double>({ci, h, w}, rng);
        auto wt = random_tensor<double>({co, ci, k, k}, rng);
        auto b = random_tensor<double>({co}, rng);
        auto out = conv2d(in, wt, b, stride, pad);
        auto expect = conv_oracle(in, wt, b, stride, pad);
        REQUIRE(out.numel() == static_cast<std::int64_t>(expect.size()));
        for (std::int64_t i = 0; i < out.numel(); ++i)
            CHECK(std::abs(out.data()[i] - expect[static_cast<size_t>(i)]) < 1e-6);
    }
}

TEST_CASE("conv2d rejects channel mismatch with diagnostic") {
    auto in = Tensor<double>::zeros({3, 4, 4});
    auto w = Tensor<double>::zeros({2, 4, 3, 3});
    auto b = Tensor<double>::zeros({2});
    CHECK_THROWS_WITH_AS(conv2d(in, w, b, 1, 1),
                         doctest::Contains("channels"), ShapeError);
}

TEST_CASE("bilinear_resize identity and constant") {
    Rng rng(3);
    auto in = random_tensor<double>({2, 7, 9}, rng);
    auto same = bilinear_resize(in, 7, 9);
    for (std::int64_t i = 0; i < in.numel(); ++i)
        CHECK(std::abs(same.data()[i] - in.data()[i]) < 1e-6);

    auto constant = Tensor<double>::full({1, 3, 3}, 0.75);
    for (auto [oh, ow] : {std::pair{1, 1}, {2, 5}, {8, 8}, {13, 4}}) {
        auto out = bilinear_resize(constant, oh, ow);
        for (std::int64_t i = 0; i < out.numel(); ++i)
            CHECK(out.data()[i] == doctest::Approx(0.75).epsilon(1e-12));
    }
}

TEST_CASE("bilinear_resize 2x2 to 4x4 matches sampling oracle") {
    auto in = Tensor<double>::from({1, 2, 2}, {0, 1, 2, 3});
    auto out = bilinear_resize(in, 4, 4);
    auto expect = resize_oracle(in, 4, 4);
    for (std::int64_t i = 0; i < out.numel(); ++i)
        CHECK(out.data()[i] == doctest::Approx(expect[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("bilinear_resize randomized against oracle") {
    Rng rng(29);
    for (int rep = 0; rep < 30; ++rep) {
        const int c = rng.uniform_int(1, 4);
        const int h = rng.uniform_int(1, 16), w = rng.uniform_int(1, 16);
        const int oh = rng.uniform_int(1, 20), ow = rng.uniform_int(1, 20);
        auto in = random_tensor<double>({c, h, w}, rng);
        auto out = bilinear_resize(in, oh, ow);
        auto expect = resize_oracle(in, oh, ow);
        for (std::int64_t i = 0; i < out.numel(); ++i)
            CHECK(std::abs(out.data()[i] - expect[static_cast<size_t>(i)]) < 1e-6);
    }
}

TEST_CASE("max_pool2d identity, plateau, oracle") {
    auto single = Tensor<double>::zeros({1, 7, 7});
    single.mutable_data()[3 * 7 + 3] = 2.5;
    auto k1 = max_pool2d(single, 1);
    for (std::int64_t i = 0; i < single.numel(); ++i)
        CHECK(k1.data()[i] == single.data()[i]);

    auto k3 = max_pool2d(single, 3);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 7; ++x) {
            const bool inside = std::abs(y - 3) <= 1 && std::abs(x - 3) <= 1;
            CHECK(k3.at(0, y, x) == (inside ? 2.5 : 0.0));
        }

    Rng rng(41);
    for (int rep = 0; rep < 30; ++rep) {
        auto in = random_tensor<double>({2, 8, 8}, rng);
        const int k = rng.bernoulli(0.5) ? 3 : 5;
        auto out = max_pool2d(in, k);
        auto expect = max_pool_oracle(in, k);
        for (std::int64_t i = 0; i < out.numel(); ++i)
            CHECK(out.data()[i] == expect[static_cast<size_t>(i)]);
    }
    CHECK_THROWS_AS(max_pool2d(single, 2), ShapeError);
}

TEST_CASE("group_norm constant input and moment identities") {
    auto gamma = Tensor<double>::full({4}, 1.0);
    auto beta = Tensor<double>::zeros({4});
    auto constant = Tensor<double>::full({4, 3, 3}, 5.0);
    auto out = group_norm(constant, 2, gamma, beta);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out.data()[i]) < 1e-9);

    Rng rng(5);
    auto in = random_tensor<double>({4, 6, 6}, rng);
    auto normd = group_norm(in, 2, gamma, beta);
    for (int g = 0; g < 2; ++g) {
        double mean = 0.0, var = 0.0;
        const int m = 2 * 6 * 6;
        for (int i = 0; i < m; ++i) mean += normd.data()[g * m + i];
        mean /= m;
        for (int i = 0; i < m; ++i) {
            const double d = normd.data()[g * m + i] - mean;
            var += d * d;
        }
        var /= m;
        CHECK(std::abs(mean) < 1e-4);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
    CHECK_THROWS_AS(group_norm(in, 3, gamma, beta), ShapeError);
}

TEST_CASE("group_norm with groups == C matches per-channel oracle") {
    Rng rng(17);
    auto in = random_tensor<double>({3, 5, 5}, rng);
    auto gamma = random_tensor<double>({3}, rng, 0.5, 1.5);
    auto beta = random_tensor<double>({3}, rng);
    auto out = group_norm(in, 3, gamma, beta);
    const double eps = 1e-5;
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < 25; ++i) mean += in.data()[c * 25 + i];
        mean /= 25;
        for (int i = 0; i < 25; ++i) {
            const double d = in.data()[c * 25 + i] - mean;
            var += d * d;
        }
        var /= 25;
        for (int i = 0; i < 25; ++i) {
            const double expect =
                gamma.data()[c] * (in.data()[c * 25 + i] - mean) / std::sqrt(var + eps) +
                beta.data()[c];
            CHECK(out.data()[c * 25 + i] == doctest::Approx(expect).epsilon(1e-9));
        }
    }
}

TEST_CASE("backward: sum gradient is all-ones and accumulates") {
    auto w = Tensor<double>::from({4}, {1, 2, 3, 4});
    w.set_requires_grad(true);
    backward(sum(w));
    for (int i = 0; i < 4; ++i) CHECK(w.grad()[static_cast<size_t>(i)] == 1.0);
    backward(sum(mul_scalar(w, 2.0)));
    for (int i = 0; i < 4; ++i) CHECK(w.grad()[static_cast<size_t>(i)] == 3.0);
    w.zero_grad();
    backward(sum(w));
    for (int i = 0; i < 4; ++i) CHECK(w.grad()[static_cast<size_t>(i)] == 1.0);
    CHECK_THROWS_AS(backward(w), ShapeError);
}

TEST_CASE("finite differences: elementwise op chain (double)") {
    Rng rng(23);
    auto a = random_tensor<double>({2, 3, 3}, rng, 0.2, 0.8);
    auto b = random_tensor<double>({2, 3, 3}, rng, 0.3, 0.9);
    auto fwd = [&]() {
        auto x = mul(sigmoid(a), add(b, mul_scalar(a, 0.5)));
        auto y = add(pow_scalar(clamp(x, -0.9, 0.9), 2.0), relu(sub(x, b)));
        auto z = div(y, add_scalar(pow_scalar(b, 2.0), 1.0));
        return sum(add(panoseg::log(add_scalar(rsub_scalar(1.2, sigmoid(z)), 0.3)), z));
    };
    auto res = testutil::check_gradients<double>({a, b}, fwd);
    CHECK(res.max_rel_err < 1e-5);
    CHECK(res.checked == 36);
}

TEST_CASE("finite differences: conv2d (double, strides 1 and 2)") {
    Rng rng(31);
    for (int stride : {1, 2}) {
        auto in = random_tensor<double>({2, 6, 5}, rng);
        auto w = random_tensor<double>({3, 2, 3, 3}, rng);
        auto b = random_tensor<double>({3}, rng);
        auto fwd = [&]() { return sum(sigmoid(conv2d(in, w, b, stride, 1))); };
        auto res = testutil::check_gradients<double>({in, w, b}, fwd);
        CHECK(res.max_rel_err < 1e-5);
    }
}

TEST_CASE("finite differences: conv2d single precision, step 1e-3") {
    Rng rng(37);
    auto in = random_tensor<float>({1, 3, 3}, rng, -0.5, 0.5);
    auto w = random_tensor<float>({1, 1, 3, 3}, rng, -0.5, 0.5);
    auto b = random_tensor<float>({1}, rng, -0.1, 0.1);
    auto fwd = [&]() { return sum(conv2d(in, w, b, 1, 1)); };
    auto res = testutil::check_gradients<float>({in, w, b}, fwd, 1e-3, 1e-2);
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("finite differences: bilinear_resize, group_norm, max_pool, matmul, gather") {
    Rng rng(43);
    SUBCASE("resize") {
        auto in = random_tensor<double>({2, 5, 4}, rng);
        auto fwd = [&]() { return sum(sigmoid(bilinear_resize(in, 9, 7))); };
        CHECK(testutil::check_gradients<double>({in}, fwd).max_rel_err < 1e-5);
    }
    SUBCASE("group_norm") {
        auto in = random_tensor<double>({4, 4, 4}, rng);
        auto gamma = random_tensor<double>({4}, rng, 0.5, 1.5);
        auto beta = random_tensor<double>({4}, rng);
        auto fwd = [&]() { return sum(sigmoid(group_norm(in, 2, gamma, beta))); };
        CHECK(testutil::check_gradients<double>({in, gamma, beta}, fwd).max_rel_err < 1e-5);
    }
    SUBCASE("max_pool") {
        // well-separated values keep FD away from argmax ties
        std::vector<double> vals(36);
        std::vector<int> perm(36);
        for (int i = 0; i < 36; ++i) perm[static_cast<size_t>(i)] = i;
        for (int i = 35; i > 0; --i) std::swap(perm[static_cast<size_t>(i)],
                                               perm[static_cast<size_t>(rng.uniform_int(0, i))]);
        for (int i = 0; i < 36; ++i) vals[static_cast<size_t>(i)] = perm[static_cast<size_t>(i)] * 0.1;
        auto in = Tensor<double>::from({1, 6, 6}, vals);
        auto fwd = [&]() { return sum(pow_scalar(add_scalar(max_pool2d(in, 3), 4.0), 2.0)); };
        CHECK(testutil::check_gradients<double>({in}, fwd).max_rel_err < 1e-5);
    }
    SUBCASE("matmul") {
        auto a = random_tensor<double>({3, 4}, rng);
        auto b = random_tensor<double>({4, 5}, rng);
        auto fwd = [&]() { return sum(sigmoid(matmul(a, b))); };
        CHECK(testutil::check_gradients<double>({a, b}, fwd).max_rel_err < 1e-5);
    }
    SUBCASE("gather and concat and slice") {
        auto m = random_tensor<double>({3, 4, 4}, rng);
        auto n = random_tensor<double>({2, 4, 4}, rng);
        std::vector<std::pair<int, int>> xy{{0, 0}, {3, 2}, {1, 3}, {3, 2}};
        auto fwd = [&]() {
            auto cat = concat_channels(m, n);
            auto sl = slice_channels(cat, 1, 4);
            auto g = gather_vectors(sl, xy);
            return sum(mul(g, sigmoid(g)));
        };
        CHECK(testutil::check_gradients<double>({m, n}, fwd).max_rel_err < 1e-5);
    }
}

TEST_CASE("determinism: identical seeds give bit-identical op outputs") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        auto in = random_tensor<float>({3, 12, 12}, rng);
        auto w = random_tensor<float>({4, 3, 3, 3}, rng);
        auto b = random_tensor<float>({4}, rng);
        auto gamma = Tensor<float>::full({4}, 1.0f);
        auto beta = Tensor<float>::zeros({4});
        auto out = sigmoid(group_norm(conv2d(in, w, b, 2, 1), 2, gamma, beta));
        return std::vector<float>(out.data(), out.data() + out.numel());
    };
    auto a = run(99), b = run(99), c = run(100);
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("all forward ops keep finite inputs finite") {
    Rng rng(53);
    auto in = random_tensor<double>({4, 8, 8}, rng, -3.0, 3.0);
    auto w = random_tensor<double>({4, 4, 3, 3}, rng, -2.0, 2.0);
    auto b = random_tensor<double>({4}, rng);
    auto gamma = Tensor<double>::full({4}, 1.0);
    auto beta = Tensor<double>::zeros({4});
    auto x = conv2d(in, w, b, 1, 1);
    x = group_norm(x, 4, gamma, beta);
    x = relu(x);
    x = bilinear_resize(x, 17, 3);
    x = max_pool2d(x, 3);
    x = sigmoid(x);
    CHECK(x.all_finite());
}

TEST_CASE("param set: serialization round-trips bit-exactly") {
    Rng rng(61);
    ParamSet<float> params;
    params.add("head.conv0.weight", random_tensor<float>({4, 3, 3, 3}, rng));
    params.add("head.conv0.bias", random_tensor<float>({4}, rng));
    params.add("alpha", random_tensor<float>({1}, rng));

    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "panoseg_test_params";
    fs::create_directories(dir);
    params.save(dir / "p.json", dir / "p.bin", {{"note", 1}});

    nlohmann::json extra;
    auto loaded = ParamSet<float>::load(dir / "p.json", dir / "p.bin", &extra);
    CHECK(extra.at("note") == 1);
    REQUIRE(loaded.size() == params.size());
    for (const auto& [name, t] : params) {
        const auto& l = loaded.get(name);
        REQUIRE(l.shape() == t.shape());
        CHECK(std::memcmp(l.data(), t.data(), sizeof(float) * static_cast<size_t>(t.numel())) == 0);
    }

    // save -> load -> save must produce identical bytes
    const fs::path dir2 = dir / "again";
    fs::create_directories(dir2);
    loaded.save(dir2 / "p.json", dir2 / "p.bin", {{"note", 1}});
    auto slurp = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir / "p.bin") == slurp(dir2 / "p.bin"));
    CHECK(slurp(dir / "p.json") == slurp(dir2 / "p.json"));
    fs::remove_all(dir);
}

TEST_CASE("param order is lexicographic and names unique") {
    ParamSet<double> params;
    params.add("b", Tensor<double>::zeros({1}));
    params.add("a.x", Tensor<double>::zeros({1}));
    params.add("a.y", Tensor<double>::zeros({1}));
    std::vector<std::string> names;
    for (const auto& [name, t] : params) names.push_back(name);
    CHECK(names == std::vector<std::string>{"a.x", "a.y", "b"});
    CHECK_THROWS_AS(params.add("b", Tensor<double>::zeros({1})), ShapeError);
}
