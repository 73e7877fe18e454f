#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "cmar/loss_metrics.hpp"

using namespace cmar;
using Catch::Approx;

namespace {

ViewPair make_pair(double gt, double rendered) {
    ViewPair p;
    p.gt = Image(1, 1);
    p.rendered = Image(1, 1);
    p.gt.pixels[0] = gt;
    p.rendered.pixels[0] = rendered;
    return p;
}

VoxelGrid const_grid(int n, double v) {
    VoxelGrid g = VoxelGrid::centered(n, n, n, 1.0);
    for (double& x : g.values) x = v;
    return g;
}

} // namespace

TEST_CASE("huber quadratic branch: error 0.5 at gamma 0.7") {
    const auto r = metrics::huber_image_loss(make_pair(1.0, 0.5), 0.7);
    CHECK(r.loss == Approx(0.125));
    CHECK(r.d_rendered.pixels[0] == Approx(-0.5));
}

TEST_CASE("huber linear branch: error 1.0 at gamma 0.7") {
    const auto r = metrics::huber_image_loss(make_pair(1.0, 0.0), 0.7);
    CHECK(r.loss == Approx(0.455));
    CHECK(r.d_rendered.pixels[0] == Approx(-0.7));
}

TEST_CASE("huber of a perfect rendering is zero with zero gradient") {
    const auto r = metrics::huber_image_loss(make_pair(1.0, 1.0), 0.7);
    CHECK(r.loss == 0.0);
    CHECK(r.d_rendered.pixels[0] == 0.0);
}

TEST_CASE("huber gradient is continuous across the branch point") {
    const double g = 0.7;
    const auto below = metrics::huber_image_loss(make_pair(1.0, 1.0 - (g - 1e-9)), g);
    const auto above = metrics::huber_image_loss(make_pair(1.0, 1.0 - (g + 1e-9)), g);
    CHECK(std::abs(below.d_rendered.pixels[0] + g) < 1e-6);
    CHECK(std::abs(above.d_rendered.pixels[0] + g) < 1e-6);
}

TEST_CASE("huber validates gamma and mask binarity") {
    CHECK_THROWS_AS(metrics::huber_image_loss(make_pair(1.0, 0.5), 0.0), ConfigError);
    CHECK_THROWS_AS(metrics::huber_image_loss(make_pair(1.0, 0.5), -1.0), ConfigError);
    CHECK_THROWS_AS(metrics::huber_image_loss(make_pair(0.6, 0.5), 0.7), InvalidDataError);
}

TEST_CASE("total loss averages the views and is order free") {
    std::vector<ViewPair> pairs{make_pair(1.0, 0.5), make_pair(1.0, 0.0)};
    const double total = metrics::total_loss(pairs, 0.7);
    CHECK(total == Approx(0.5 * (0.125 + 0.455)));
    std::swap(pairs[0], pairs[1]);
    CHECK(metrics::total_loss(pairs, 0.7) == Approx(total));
    CHECK(metrics::total_loss({make_pair(1.0, 0.5)}, 0.7) == Approx(0.125));
    CHECK_THROWS_AS(metrics::total_loss({}, 0.7), ConfigError);
}

TEST_CASE("psnr follows the log law with the 99 dB cap") {
    const VoxelGrid gt = const_grid(8, 0.0);
    VoxelGrid pred = const_grid(8, 0.1); // MSE 0.01
    CHECK(metrics::psnr(pred, gt) == Approx(20.0).margin(1e-9));
    CHECK(metrics::psnr(gt, gt) == 99.0);
    CHECK(metrics::psnr(const_grid(8, 1.0), gt) == Approx(0.0).margin(1e-12));
    CHECK_THROWS_AS(metrics::psnr(const_grid(4, 0.0), gt), ShapeError);
}

TEST_CASE("ssim is 1 on identical volumes") {
    VoxelGrid g = const_grid(10, 0.0);
    Rng rng(3);
    for (double& v : g.values) v = rng.uniform();
    CHECK(metrics::ssim(g, g) == Approx(1.0).margin(1e-9));
}

TEST_CASE("ssim of constant 0 against constant 1 hits the closed form") {
    const VoxelGrid a = const_grid(9, 0.0);
    const VoxelGrid b = const_grid(9, 1.0);
    const double c1 = 1e-4;
    CHECK(metrics::ssim(a, b) == Approx(c1 / (1.0 + c1)).margin(1e-9)); // 9.999e-5
}

TEST_CASE("ssim is symmetric") {
    VoxelGrid a = const_grid(9, 0.0), b = const_grid(9, 0.0);
    Rng rng(5);
    for (double& v : a.values) v = rng.uniform();
    for (double& v : b.values) v = rng.uniform();
    CHECK(std::abs(metrics::ssim(a, b) - metrics::ssim(b, a)) < 1e-12);
}

TEST_CASE("ssim rejects volumes smaller than the window") {
    const VoxelGrid small = const_grid(6, 0.5);
    CHECK_THROWS_AS(metrics::ssim(small, small), ConfigError);
}

TEST_CASE("iou covers identity, disjoint, and partial overlap") {
    VoxelGrid a = const_grid(4, 0.0), b = const_grid(4, 0.0);
    for (int i = 0; i < 10; ++i) a.values[size_t(i)] = 1.0;
    CHECK(metrics::iou(a, a) == 1.0);

    for (int i = 10; i < 20; ++i) b.values[size_t(i)] = 1.0;
    CHECK(metrics::iou(a, b) == 0.0);

    VoxelGrid c = const_grid(4, 0.0);
    for (int i = 5; i < 15; ++i) c.values[size_t(i)] = 1.0; // overlap 5, union 15
    CHECK(metrics::iou(a, c) == Approx(1.0 / 3.0));

    const VoxelGrid empty = const_grid(4, 0.0);
    CHECK(metrics::iou(empty, empty) == 1.0); // empty union
}

TEST_CASE("iou is invariant to monotone rescaling that preserves the threshold split") {
    VoxelGrid a = const_grid(4, 0.0), gt = const_grid(4, 0.0);
    Rng rng(9);
    for (double& v : a.values) v = rng.uniform();
    for (size_t i = 0; i < gt.values.size(); i += 3) gt.values[i] = 1.0;
    const double base = metrics::iou(a, gt);
    VoxelGrid scaled = a;
    // monotone map keeping the 0.5 split: v -> 0.5 + 0.5*tanh(4*(v-0.5))
    for (double& v : scaled.values) v = 0.5 + 0.5 * std::tanh(4.0 * (v - 0.5));
    CHECK(metrics::iou(scaled, gt) == base);
}

TEST_CASE("cross entropy at the clamp boundaries") {
    VoxelGrid gt = const_grid(4, 0.0);
    for (size_t i = 0; i < gt.values.size(); i += 2) gt.values[i] = 1.0;
    CHECK(metrics::cross_entropy(gt, gt) < 1e-6);

    const VoxelGrid half = const_grid(4, 0.5);
    CHECK(metrics::cross_entropy(half, gt) == Approx(std::log(2.0)).margin(1e-12));

    VoxelGrid inverted = gt;
    for (double& v : inverted.values) v = 1.0 - v;
    CHECK(metrics::cross_entropy(inverted, gt) == Approx(std::log(1e7)).epsilon(1e-6)); // 16.118

    const VoxelGrid not_binary = const_grid(4, 0.3);
    CHECK_THROWS_AS(metrics::cross_entropy(half, not_binary), InvalidDataError);
}

TEST_CASE("metric csv rows append with a single header") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "cmar_metrics_test.csv").string();
    std::error_code ec;
    fs::remove(path, ec);
    MetricReport r;
    r.psnr = 20.0;
    r.ssim = 0.5;
    r.iou = 0.25;
    r.ce = 0.1;
    metrics::append_csv_row(path, "s1", 8, 30.0, r);
    metrics::append_csv_row(path, "s2", 8, 30.0, r);
    std::FILE* f = std::fopen(path.c_str(), "rb");
    REQUIRE(f != nullptr);
    char buf[256];
    int headers = 0, rows = 0;
    while (std::fgets(buf, sizeof buf, f)) {
        if (std::strncmp(buf, "sample_id", 9) == 0)
            ++headers;
        else
            ++rows;
    }
    std::fclose(f);
    CHECK(headers == 1);
    CHECK(rows == 2);
    fs::remove(path, ec);
}
