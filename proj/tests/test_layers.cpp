#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "cmar/layers.hpp"

using namespace cmar;
using Catch::Approx;

namespace {

FeatureMap random_map(int c, int nx, int ny, int nz, uint64_t seed) {
    FeatureMap m(c, nx, ny, nz);
    Rng rng(seed);
    for (double& v : m.v) v = rng.uniform(-1.0, 1.0);
    return m;
}

Tensor random_tensor(std::vector<int> ext, uint64_t seed) {
    Tensor t(std::move(ext));
    Rng rng(seed);
    for (double& v : t.v) v = rng.uniform(-1.0, 1.0);
    return t;
}

double relative_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

TEST_CASE("conv3d with a delta kernel is the identity") {
    const FeatureMap in = random_map(2, 4, 5, 3, 1);
    Tensor w({2, 2, 3, 3, 3});
    // kernel k: out channel k copies in channel k (center tap 1)
    w.v[(((0 * 2 + 0) * 3 + 1) * 3 + 1) * 3 + 1] = 1.0;
    w.v[(((1 * 2 + 1) * 3 + 1) * 3 + 1) * 3 + 1] = 1.0;
    const Tensor b({2});
    const FeatureMap out = nn::conv3d(in, w, b);
    for (size_t i = 0; i < in.v.size(); ++i) REQUIRE(out.v[i] == in.v[i]);
}

TEST_CASE("all-ones kernel on a constant input sums the interior window") {
    FeatureMap in(1, 4, 4, 4);
    for (double& v : in.v) v = 1.0;
    Tensor w({1, 1, 3, 3, 3});
    for (double& v : w.v) v = 1.0;
    const Tensor b({1});
    const FeatureMap out = nn::conv3d(in, w, b);
    CHECK(out.at(0, 1, 1, 1) == 27.0);
    CHECK(out.at(0, 2, 2, 2) == 27.0);
    CHECK(out.at(0, 0, 0, 0) == 8.0); // corner sees a 2x2x2 window
}

TEST_CASE("conv3d rejects channel mismatches") {
    const FeatureMap in = random_map(3, 4, 4, 4, 2);
    const Tensor w = random_tensor({2, 2, 3, 3, 3}, 3);
    const Tensor b = random_tensor({2}, 4);
    CHECK_THROWS_AS(nn::conv3d(in, w, b), ShapeError);
}

TEST_CASE("conv3d backward matches finite differences") {
    const FeatureMap in = random_map(2, 4, 4, 4, 10);
    const Tensor w = random_tensor({3, 2, 3, 3, 3}, 11);
    const Tensor b = random_tensor({3}, 12);
    FeatureMap upstream = random_map(3, 4, 4, 4, 13);

    const auto g = nn::conv3d_backward(in, w, upstream);
    auto loss = [&](const FeatureMap& x, const Tensor& wt, const Tensor& bt) {
        const FeatureMap out = nn::conv3d(x, wt, bt);
        return dot(out.v, upstream.v);
    };
    const double h = 1e-5;
    double max_rel = 0.0;
    for (size_t i = 0; i < in.v.size(); i += 7) {
        FeatureMap p = in, m = in;
        p.v[i] += h;
        m.v[i] -= h;
        max_rel = std::max(max_rel,
                           relative_err(g.d_input.v[i], (loss(p, w, b) - loss(m, w, b)) / (2 * h)));
    }
    for (size_t i = 0; i < w.v.size(); i += 11) {
        Tensor p = w, m = w;
        p.v[i] += h;
        m.v[i] -= h;
        max_rel = std::max(max_rel,
                           relative_err(g.d_w.v[i], (loss(in, p, b) - loss(in, m, b)) / (2 * h)));
    }
    for (size_t i = 0; i < b.v.size(); ++i) {
        Tensor p = b, m = b;
        p.v[i] += h;
        m.v[i] -= h;
        max_rel = std::max(max_rel,
                           relative_err(g.d_b.v[i], (loss(in, w, p) - loss(in, w, m)) / (2 * h)));
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("conv3d input backward is the adjoint of the forward map") {
    const FeatureMap x = random_map(2, 4, 4, 4, 20);
    const Tensor w = random_tensor({3, 2, 3, 3, 3}, 21);
    const Tensor b0({3});
    const FeatureMap y = random_map(3, 4, 4, 4, 22);
    const FeatureMap ax = nn::conv3d(x, w, b0);
    const auto g = nn::conv3d_backward(x, w, y);
    const double lhs = dot(ax.v, y.v);
    const double rhs = dot(x.v, g.d_input.v);
    CHECK(relative_err(lhs, rhs) < 1e-8);
}

TEST_CASE("maxpool takes the window maximum") {
    FeatureMap in(1, 2, 2, 2);
    for (int i = 0; i < 8; ++i) in.v[i] = double(i);
    const auto r = nn::maxpool3d(in);
    REQUIRE(r.out.v.size() == 1);
    CHECK(r.out.v[0] == 7.0);
    CHECK(r.argmax[0] == 7);
}

TEST_CASE("maxpool ties go to the lowest linear index") {
    FeatureMap in(1, 2, 2, 2);
    for (double& v : in.v) v = 3.0;
    const auto r = nn::maxpool3d(in);
    CHECK(r.argmax[0] == 0);
    FeatureMap up(1, 1, 1, 1);
    up.v[0] = 2.5;
    const FeatureMap d = nn::maxpool3d_backward(up, r.argmax, 2, 2, 2);
    CHECK(d.v[0] == 2.5);
    for (int i = 1; i < 8; ++i) CHECK(d.v[i] == 0.0);
}

TEST_CASE("maxpool rejects odd extents") {
    const FeatureMap in = random_map(1, 3, 4, 4, 30);
    CHECK_THROWS_AS(nn::maxpool3d(in), ShapeError);
}

TEST_CASE("maxpool backward conserves gradient mass and matches finite differences") {
    const FeatureMap in = random_map(2, 4, 4, 4, 31);
    const auto r = nn::maxpool3d(in);
    const FeatureMap upstream = random_map(2, 2, 2, 2, 32);
    const FeatureMap d = nn::maxpool3d_backward(upstream, r.argmax, 4, 4, 4);

    double up_sum = 0.0, routed = 0.0;
    for (double v : upstream.v) up_sum += v;
    for (double v : d.v) routed += v;
    CHECK(routed == Approx(up_sum).margin(1e-12));

    auto loss = [&](const FeatureMap& x) {
        return dot(nn::maxpool3d(x).out.v, upstream.v);
    };
    const double h = 1e-6;
    double max_rel = 0.0;
    for (size_t i = 0; i < in.v.size(); i += 5) {
        FeatureMap p = in, m = in;
        p.v[i] += h;
        m.v[i] -= h;
        max_rel = std::max(max_rel, relative_err(d.v[i], (loss(p) - loss(m)) / (2 * h)));
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("tconv3d stamps a 2x2x2 block per input voxel") {
    FeatureMap in(1, 2, 2, 2);
    in.at(0, 1, 0, 1) = 1.0;
    Tensor w({1, 1, 2, 2, 2});
    for (double& v : w.v) v = 1.0;
    const Tensor b({1});
    const FeatureMap out = nn::tconv3d(in, w, b);
    REQUIRE(out.nx == 4);
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                const bool inside = (x >= 2 && x < 4) && (y < 2) && (z >= 2 && z < 4);
                CHECK(out.at(0, x, y, z) == (inside ? 1.0 : 0.0));
            }
}

TEST_CASE("tconv3d is the adjoint of a stride-2 conv with the same kernel") {
    const Tensor w = random_tensor({3, 2, 2, 2, 2}, 41);
    const Tensor b0({2});
    const FeatureMap x = random_map(3, 2, 2, 2, 42);  // small side
    const FeatureMap y = random_map(2, 4, 4, 4, 43);  // large side
    // <conv(y), x> = <y, tconv(x)> with conv: large -> small
    // conv_k2s2 maps the 2-channel large map to 3-channel? No: weights are
    // [in=3, out=2]; tconv: 3ch small -> 2ch large; its adjoint maps 2ch
    // large -> 3ch small.
    const FeatureMap t = nn::tconv3d(x, w, b0);
    const auto g = nn::tconv3d_backward(x, w, y);
    const double lhs = dot(t.v, y.v);
    const double rhs = dot(x.v, g.d_input.v);
    CHECK(relative_err(lhs, rhs) < 1e-8);

    // and d_input equals the explicit stride-2 convolution of y
    FeatureMap conv_small(3, 2, 2, 2);
    {
        // conv oracle with swapped roles: out channel = ic of w
        for (int ic = 0; ic < 3; ++ic)
            for (int z = 0; z < 2; ++z)
                for (int y2 = 0; y2 < 2; ++y2)
                    for (int x2 = 0; x2 < 2; ++x2) {
                        double acc = 0.0;
                        for (int oc = 0; oc < 2; ++oc)
                            for (int kz = 0; kz < 2; ++kz)
                                for (int ky = 0; ky < 2; ++ky)
                                    for (int kx = 0; kx < 2; ++kx)
                                        acc += y.at(oc, 2 * x2 + kx, 2 * y2 + ky, 2 * z + kz) *
                                               w.v[nn::tconv_w_index(ic, 2, oc, kx, ky, kz)];
                        conv_small.at(ic, x2, y2, z) = acc;
                    }
    }
    for (size_t i = 0; i < conv_small.v.size(); ++i)
        CHECK(relative_err(conv_small.v[i], g.d_input.v[i]) < 1e-12);
}

TEST_CASE("tconv3d backward matches finite differences") {
    const FeatureMap in = random_map(2, 2, 2, 2, 50);
    const Tensor w = random_tensor({2, 3, 2, 2, 2}, 51);
    const Tensor b = random_tensor({3}, 52);
    const FeatureMap upstream = random_map(3, 4, 4, 4, 53);

    const auto g = nn::tconv3d_backward(in, w, upstream);
    auto loss = [&](const FeatureMap& x, const Tensor& wt, const Tensor& bt) {
        return dot(nn::tconv3d(x, wt, bt).v, upstream.v);
    };
    const double h = 1e-5;
    double max_rel = 0.0;
    for (size_t i = 0; i < in.v.size(); ++i) {
        FeatureMap p = in, m = in;
        p.v[i] += h;
        m.v[i] -= h;
        max_rel = std::max(max_rel,
                           relative_err(g.d_input.v[i], (loss(p, w, b) - loss(m, w, b)) / (2 * h)));
    }
    for (size_t i = 0; i < w.v.size(); ++i) {
        Tensor p = w, m = w;
        p.v[i] += h;
        m.v[i] -= h;
        max_rel = std::max(max_rel,
                           relative_err(g.d_w.v[i], (loss(in, p, b) - loss(in, m, b)) / (2 * h)));
    }
    for (size_t i = 0; i < b.v.size(); ++i) {
        Tensor p = b, m = b;
        p.v[i] += h;
        m.v[i] -= h;
        max_rel = std::max(max_rel,
                           relative_err(g.d_b.v[i], (loss(in, w, p) - loss(in, w, m)) / (2 * h)));
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("fully connected identity and bias behave as affine maps") {
    Tensor w({3, 3});
    w.v = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    Tensor b({3});
    const std::vector<double> x{0.3, -0.7, 2.0};
    const auto y = nn::fully_connected(x, w, b);
    for (int i = 0; i < 3; ++i) CHECK(y[size_t(i)] == x[size_t(i)]);

    Tensor w0({2, 3});
    Tensor b0({2});
    b0.v = {4.0, -1.5};
    const auto y2 = nn::fully_connected(x, w0, b0);
    CHECK(y2[0] == 4.0);
    CHECK(y2[1] == -1.5);

    CHECK_THROWS_AS(nn::fully_connected({1.0, 2.0}, w, b), ShapeError);
}

TEST_CASE("fully connected backward matches finite differences") {
    const Tensor w = random_tensor({4, 6}, 61);
    const Tensor b = random_tensor({4}, 62);
    std::vector<double> x(6);
    Rng rng(63);
    for (double& v : x) v = rng.uniform(-1, 1);
    std::vector<double> upstream(4);
    for (double& v : upstream) v = rng.uniform(-1, 1);

    const auto g = nn::fully_connected_backward(x, w, upstream);
    auto loss = [&](const std::vector<double>& xv, const Tensor& wt, const Tensor& bt) {
        return dot(nn::fully_connected(xv, wt, bt), upstream);
    };
    const double h = 1e-5;
    double max_rel = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        auto p = x, m = x;
        p[i] += h;
        m[i] -= h;
        max_rel = std::max(max_rel, relative_err(g.d_x[i], (loss(p, w, b) - loss(m, w, b)) / (2 * h)));
    }
    for (size_t i = 0; i < w.v.size(); ++i) {
        Tensor p = w, m = w;
        p.v[i] += h;
        m.v[i] -= h;
        max_rel = std::max(max_rel, relative_err(g.d_w.v[i], (loss(x, p, b) - loss(x, m, b)) / (2 * h)));
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("activations follow their definitions and the zero convention") {
    CHECK(nn::leaky_relu({-2.0}, 0.2)[0] == Approx(-0.4));
    CHECK(nn::relu({-3.0})[0] == 0.0);
    CHECK(nn::relu({3.0})[0] == 3.0);
    // derivative at exactly zero is the positive-side value
    CHECK(nn::leaky_relu_backward({0.0}, {1.0}, 0.2)[0] == 1.0);
    CHECK(nn::relu_backward({0.0}, {1.0})[0] == 1.0);
    CHECK(nn::leaky_relu_backward({-1.0}, {1.0}, 0.2)[0] == Approx(0.2));
}

TEST_CASE("channel concat stacks and splits exactly") {
    const FeatureMap a = random_map(4, 3, 3, 3, 70);
    const FeatureMap b = random_map(8, 3, 3, 3, 71);
    const FeatureMap cat = nn::concat_channels(a, b);
    REQUIRE(cat.channels == 12);
    FeatureMap da, db;
    nn::split_channels_grad(cat, 4, da, db);
    for (size_t i = 0; i < a.v.size(); ++i) REQUIRE(da.v[i] == a.v[i]);
    for (size_t i = 0; i < b.v.size(); ++i) REQUIRE(db.v[i] == b.v[i]);

    const FeatureMap wrong = random_map(2, 4, 3, 3, 72);
    CHECK_THROWS_AS(nn::concat_channels(a, wrong), ShapeError);
}

TEST_CASE("adam reproduces the worked single update") {
    Tensor p({1});
    p.v[0] = 1.0;
    Tensor g({1});
    g.v[0] = 2.0; // gradient of x^2 at x=1
    nn::AdamState state;
    state.beta1 = 0.5;
    state.beta2 = 0.9;
    nn::adam_init(state, {p});
    std::vector<Tensor*> params{&p};
    std::vector<const Tensor*> grads{&g};
    std::vector<std::string> names{"x"};
    nn::adam_step(params, grads, names, state, 0.1);
    CHECK(state.t == 1);
    CHECK(p.v[0] == Approx(0.9).margin(1e-6));
}

TEST_CASE("zero gradient leaves parameters unchanged but advances the step") {
    Tensor p({3});
    p.v = {1.0, -2.0, 0.5};
    Tensor g({3});
    nn::AdamState state;
    nn::adam_init(state, {p});
    std::vector<Tensor*> params{&p};
    std::vector<const Tensor*> grads{&g};
    std::vector<std::string> names{"p"};
    nn::adam_step(params, grads, names, state, 0.1);
    CHECK(state.t == 1);
    CHECK(p.v[0] == 1.0);
    CHECK(p.v[1] == -2.0);
    CHECK(p.v[2] == 0.5);
}

TEST_CASE("adam drives x^2 toward zero in 200 steps") {
    Tensor p({1});
    p.v[0] = 1.0;
    nn::AdamState state;
    state.beta1 = 0.5;
    state.beta2 = 0.9;
    nn::adam_init(state, {p});
    std::vector<Tensor*> params{&p};
    std::vector<std::string> names{"x"};
    for (int i = 0; i < 200; ++i) {
        Tensor g({1});
        g.v[0] = 2.0 * p.v[0];
        std::vector<const Tensor*> grads{&g};
        nn::adam_step(params, grads, names, state, 0.1);
    }
    CHECK(std::abs(p.v[0]) < 1e-2);
}

TEST_CASE("non-finite gradients fault with the parameter name") {
    Tensor p({1});
    Tensor g({1});
    g.v[0] = std::numeric_limits<double>::infinity();
    nn::AdamState state;
    nn::adam_init(state, {p});
    std::vector<Tensor*> params{&p};
    std::vector<const Tensor*> grads{&g};
    std::vector<std::string> names{"enc1.conv.w"};
    try {
        nn::adam_step(params, grads, names, state, 0.1);
        FAIL("expected TrainingFault");
    } catch (const TrainingFault& e) {
        CHECK(std::string(e.what()).find("enc1.conv.w") != std::string::npos);
    }
}

TEST_CASE("learning rate ramps linearly between the endpoints") {
    CHECK(nn::lr_schedule(0, 1000) == Approx(1e-4));
    CHECK(nn::lr_schedule(1000, 1000) == Approx(5e-5));
    CHECK(nn::lr_schedule(500, 1000) == Approx(7.5e-5));
    CHECK_THROWS_AS(nn::lr_schedule(-1, 10), ConfigError);
    CHECK_THROWS_AS(nn::lr_schedule(11, 10), ConfigError);
}

TEST_CASE("layer forwards are deterministic") {
    const FeatureMap in = random_map(2, 4, 4, 4, 80);
    const Tensor w = random_tensor({3, 2, 3, 3, 3}, 81);
    const Tensor b = random_tensor({3}, 82);
    const FeatureMap a = nn::conv3d(in, w, b);
    const FeatureMap c = nn::conv3d(in, w, b);
    for (size_t i = 0; i < a.v.size(); ++i) REQUIRE(a.v[i] == c.v[i]);
}
