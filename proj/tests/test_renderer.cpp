#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmar/renderer.hpp"

using namespace cmar;
using Catch::Approx;

namespace {

VoxelGrid random_grid(int n, uint64_t seed) {
    VoxelGrid g = VoxelGrid::centered(n, n, n, 1.0);
    Rng rng(seed);
    for (double& v : g.values) v = rng.uniform();
    return g;
}

Camera test_camera(int size, double az, double el, double dist, double diag) {
    Camera cam;
    cam.position = {dist * std::cos(el) * std::cos(az), dist * std::cos(el) * std::sin(az),
                    dist * std::sin(el)};
    cam.look_at = {0, 0, 0};
    cam.up = {0, 0, 1};
    cam.vertical_fov = 2.0 * std::atan(1.1 * 0.5 * diag / dist);
    cam.width = size;
    cam.height = size;
    return cam;
}

double relative_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

} // namespace

TEST_CASE("view set places cameras on the azimuth ring") {
    const ViewSet views = render::make_view_set(8, 7.0, 30.0 * kPi / 180.0, 64, 7.84);
    REQUIRE(views.size() == 8);
    const auto& c0 = views.cameras[0];
    CHECK(c0.position[0] == Approx(7.0 * std::cos(kPi / 6.0)).epsilon(1e-12)); // 6.0622
    CHECK(c0.position[1] == Approx(0.0).margin(1e-12));
    CHECK(c0.position[2] == Approx(3.5).epsilon(1e-12));
    for (int k = 0; k < 8; ++k) {
        const double az = 2.0 * kPi * k / 8.0;
        CHECK(views.cameras[k].position[0] == Approx(7.0 * std::cos(kPi / 6.0) * std::cos(az)).margin(1e-9));
        CHECK(views.cameras[k].position[1] == Approx(7.0 * std::cos(kPi / 6.0) * std::sin(az)).margin(1e-9));
    }
    CHECK(render::make_view_set(1, 5.0, 0.0, 16, 3.0).size() == 1);
}

TEST_CASE("center pixel ray of an odd image is the principal ray") {
    Camera cam = test_camera(5, 0.4, 0.3, 6.0, 3.0);
    std::array<double, 3> lo{-1, -1, -1}, hi{1, 1, 1};
    const Ray ray = render::generate_ray(cam, 2, 2, lo, hi);
    const auto f = render::vec::normalized(render::vec::sub(cam.look_at, cam.position));
    for (int a = 0; a < 3; ++a) CHECK(ray.direction[a] == Approx(f[a]).margin(1e-12));
    const double norm = std::sqrt(render::vec::dot(ray.direction, ray.direction));
    CHECK(std::abs(norm - 1.0) < 1e-12);
}

TEST_CASE("camera on +x looking at the origin fires along -x") {
    Camera cam;
    cam.position = {5, 0, 0};
    cam.look_at = {0, 0, 0};
    cam.up = {0, 0, 1};
    cam.vertical_fov = 0.8;
    cam.width = cam.height = 3;
    std::array<double, 3> lo{-1, -1, -1}, hi{1, 1, 1};
    const Ray ray = render::generate_ray(cam, 1, 1, lo, hi);
    CHECK(ray.direction[0] == Approx(-1.0).margin(1e-12));
    CHECK(ray.direction[1] == Approx(0.0).margin(1e-12));
    CHECK(ray.direction[2] == Approx(0.0).margin(1e-12));
    CHECK_FALSE(ray.miss);
    CHECK(ray.t_near < ray.t_far);
}

TEST_CASE("rays that point away from the box are misses and render 0") {
    Camera cam;
    cam.position = {5, 0, 0};
    cam.look_at = {10, 0, 0}; // facing away
    cam.up = {0, 0, 1};
    cam.vertical_fov = 0.6;
    cam.width = cam.height = 4;
    VoxelGrid g = VoxelGrid::centered(8, 8, 8, 0.25);
    for (double& v : g.values) v = 1.0;
    const Image img = render::render(g, cam, 16);
    for (double p : img.pixels) CHECK(p == 0.0);
}

TEST_CASE("pixel index out of range is an error") {
    Camera cam = test_camera(4, 0, 0, 5, 2.0);
    std::array<double, 3> lo{-1, -1, -1}, hi{1, 1, 1};
    CHECK_THROWS_AS(render::generate_ray(cam, 4, 0, lo, hi), UsageError);
    CHECK_THROWS_AS(render::generate_ray(cam, 0, -1, lo, hi), UsageError);
}

TEST_CASE("composite of zero densities is zero") {
    RaySamples s;
    s.sigma = {0.0, 0.0, 0.0};
    s.delta = {0.1, 0.1, 0.1};
    CHECK(render::composite(s) == 0.0);
}

TEST_CASE("composite matches the closed form on the worked example") {
    RaySamples s;
    s.sigma = {0.5, 1.0};
    s.delta = {0.2, 0.3};
    CHECK(render::composite(s) == Approx(1.0 - std::exp(-0.4)).epsilon(1e-12)); // 0.329680
    CHECK(render::composite(s) == Approx(0.32967995396436073).epsilon(1e-12));
}

TEST_CASE("optical depth of ln 2 composites to one half") {
    RaySamples s;
    s.sigma = {std::log(2.0) / 0.6, std::log(2.0) / 0.6};
    s.delta = {0.3, 0.3};
    CHECK(render::composite(s) == Approx(0.5).epsilon(1e-12));
}

TEST_CASE("composite rejects negative densities") {
    RaySamples s;
    s.sigma = {0.5, -0.1};
    s.delta = {0.1, 0.1};
    CHECK_THROWS_AS(render::composite(s), DomainError);
}

TEST_CASE("stepwise compositing equals the closed form and is permutation invariant") {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + int(rng.uniform_int(30));
        RaySamples s;
        const double step = rng.uniform(0.01, 0.5);
        for (int i = 0; i < n; ++i) {
            s.sigma.push_back(rng.uniform(0.0, 3.0));
            s.delta.push_back(step);
        }
        double tau = 0.0;
        for (int i = 0; i < n; ++i) tau += s.sigma[i] * s.delta[i];
        const double closed = 1.0 - std::exp(-tau);
        const double stepwise = render::composite(s);
        REQUIRE(relative_err(stepwise, closed) < 1e-12);

        RaySamples shuffled = s;
        for (int i = n - 1; i > 0; --i)
            std::swap(shuffled.sigma[size_t(i)], shuffled.sigma[rng.uniform_int(uint64_t(i + 1))]);
        REQUIRE(relative_err(render::composite(shuffled), stepwise) < 1e-12);
    }
}

TEST_CASE("composite is monotone in every density") {
    Rng rng(23);
    RaySamples s;
    for (int i = 0; i < 8; ++i) {
        s.sigma.push_back(rng.uniform(0.0, 2.0));
        s.delta.push_back(0.2);
    }
    const double base = render::composite(s);
    for (int i = 0; i < 8; ++i) {
        RaySamples bumped = s;
        bumped.sigma[size_t(i)] += 0.1;
        CHECK(render::composite(bumped) >= base);
    }
}

TEST_CASE("composite backward matches the worked partial derivative") {
    RaySamples s;
    s.sigma = {0.5, 1.0};
    s.delta = {0.2, 0.3};
    const auto d = render::composite_backward(s);
    REQUIRE(d.size() == 2);
    CHECK(d[0] == Approx(0.2 * std::exp(-0.4)).epsilon(1e-12)); // 0.134064
    CHECK(d[0] == Approx(0.13406400920712788).epsilon(1e-12));
    CHECK(d[1] == Approx(0.3 * std::exp(-0.4)).epsilon(1e-12));
}

TEST_CASE("rendering an all-zero grid yields an all-zero image") {
    const VoxelGrid g = VoxelGrid::centered(8, 8, 8, 0.5);
    const Camera cam = test_camera(16, 0.2, 0.4, 10.0, 8.0 * 0.5 * std::sqrt(3.0));
    const Image img = render::render(g, cam, 32);
    for (double p : img.pixels) CHECK(p == 0.0);
}

TEST_CASE("rendered pixels stay in the unit interval") {
    const VoxelGrid g = random_grid(8, 3);
    const Camera cam = test_camera(12, 0.7, 0.3, 20.0, 14.0);
    const Image img = render::render(g, cam, 24);
    for (double p : img.pixels) {
        CHECK(p >= 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("solid box renders its analytic silhouette") {
    // box of very high density in the middle of a desk-sized grid
    VoxelGrid g = VoxelGrid::centered(32, 32, 64, 0.1);
    const int x0 = 8, x1 = 23, y0 = 8, y1 = 23, z0 = 16, z1 = 47;
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) g.at(x, y, z) = 1e4;

    const double diag = 0.1 * std::sqrt(32.0 * 32 + 32 * 32 + 64 * 64);
    const Camera cam = test_camera(64, 0.0, 0.0, 7.0, diag);

    // support of the trilinear field: one cell beyond the occupied centers
    std::array<double, 3> lo, hi;
    lo = {g.origin[0] + (x0 - 1) * g.spacing, g.origin[1] + (y0 - 1) * g.spacing,
          g.origin[2] + (z0 - 1) * g.spacing};
    hi = {g.origin[0] + (x1 + 1) * g.spacing, g.origin[1] + (y1 + 1) * g.spacing,
          g.origin[2] + (z1 + 1) * g.spacing};

    const Image img = render::render(g, cam, render::auto_sample_count(g));
    std::array<double, 3> scene_lo, scene_hi;
    g.bounds(scene_lo, scene_hi);
    int agree = 0;
    for (int i = 0; i < cam.height; ++i) {
        for (int j = 0; j < cam.width; ++j) {
            const Ray ray = render::generate_ray(cam, i, j, scene_lo, scene_hi);
            double tn, tf;
            const bool in_box =
                !ray.miss && render::intersect_aabb(ray.origin, ray.direction, lo, hi, tn, tf);
            const bool lit = img.at(i, j) >= 0.5;
            if (lit == in_box) ++agree;
        }
    }
    CHECK(double(agree) / (cam.width * cam.height) >= 0.99);
}

TEST_CASE("doubling the sample count barely changes a smooth render") {
    VoxelGrid g = VoxelGrid::centered(16, 16, 16, 0.2);
    const auto c = g.grid_center();
    for (int z = 0; z < 16; ++z)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                const auto p = g.cell_center(x, y, z);
                const double r2 = (p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]) +
                                  (p[2] - c[2]) * (p[2] - c[2]);
                g.at(x, y, z) = 0.8 * std::exp(-r2 / 0.5);
            }
    const Camera cam = test_camera(16, 0.3, 0.25, 9.0, 16 * 0.2 * std::sqrt(3.0));
    const Image a = render::render(g, cam, 256);
    const Image b = render::render(g, cam, 512);
    for (size_t i = 0; i < a.pixels.size(); ++i) CHECK(std::abs(a.pixels[i] - b.pixels[i]) < 1e-3);
}

TEST_CASE("zero upstream gradient gives a zero density gradient") {
    const VoxelGrid g = random_grid(8, 9);
    const Camera cam = test_camera(4, 0.5, 0.4, 16.0, 14.0);
    const Image zero(4, 4);
    const VoxelGrid grad = render::render_backward(g, cam, 16, zero);
    for (double v : grad.values) CHECK(v == 0.0);
}

TEST_CASE("render backward matches central finite differences") {
    Rng rng(2024);
    for (int trial = 0; trial < 5; ++trial) {
        VoxelGrid g = random_grid(8, 1000 + trial);
        const Camera cam =
            test_camera(4, rng.uniform(0, 2 * kPi), rng.uniform(0.1, 0.9), 16.0, 14.0);
        const int n_samples = 16;
        Image weights(4, 4);
        for (double& w : weights.pixels) w = rng.uniform(0.5, 1.5);

        const VoxelGrid grad = render::render_backward(g, cam, n_samples, weights);

        auto loss = [&](const VoxelGrid& grid) {
            const Image img = render::render(grid, cam, n_samples);
            double s = 0.0;
            for (size_t i = 0; i < img.pixels.size(); ++i) s += weights.pixels[i] * img.pixels[i];
            return s;
        };
        const double h = 1e-3;
        double max_rel = 0.0;
        for (size_t i = 0; i < g.values.size(); ++i) {
            VoxelGrid plus = g, minus = g;
            plus.values[i] += h;
            minus.values[i] = std::max(0.0, minus.values[i] - h);
            const double denom = plus.values[i] - minus.values[i];
            const double fd = (loss(plus) - loss(minus)) / denom;
            max_rel = std::max(max_rel, relative_err(grad.values[i], fd));
        }
        CHECK(max_rel < 1e-4);
    }
}

TEST_CASE("render backward rejects mismatched upstream dims") {
    const VoxelGrid g = random_grid(8, 4);
    const Camera cam = test_camera(4, 0.1, 0.2, 16.0, 14.0);
    const Image wrong(5, 4);
    CHECK_THROWS_AS(render::render_backward(g, cam, 16, wrong), ShapeError);
}

TEST_CASE("renderer rejects negative densities") {
    VoxelGrid g = random_grid(8, 6);
    g.values[10] = -0.5;
    const Camera cam = test_camera(4, 0.1, 0.2, 16.0, 14.0);
    CHECK_THROWS_AS(render::render(g, cam, 16), DomainError);
}
