#pragma once

// Per-view Huber loss with its image-space gradient, the multi-view average,
// and full-reference volume metrics (PSNR, SSIM, IoU, cross-entropy).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "cmar/core.hpp"
#include "cmar/image2d.hpp"
#include "cmar/voxel.hpp"

namespace cmar {

struct ViewPair {
    Image gt;       // binary mask, values in {0,1}
    Image rendered; // values in [0,1)
    int view_index = 0;
};

struct MetricReport {
    double psnr = 0.0; // dB
    double ssim = 0.0;
    double iou = 0.0;
    double ce = 0.0;
};

namespace metrics {

struct HuberResult {
    double loss = 0.0;
    Image d_rendered; // dL/dI_r, already divided by the pixel count
};

// Mean per-pixel Huber of (I_g - I_r): quadratic within gamma, linear beyond.
inline HuberResult huber_image_loss(const ViewPair& pair, double gamma) {
    if (!(gamma > 0.0)) throw ConfigError("huber_image_loss: gamma must be positive");
    if (!pair.gt.same_dims(pair.rendered))
        throw ShapeError("huber_image_loss: mask and rendered image dims differ");
    for (double g : pair.gt.pixels)
        if (g != 0.0 && g != 1.0)
            throw InvalidDataError("huber_image_loss: ground-truth mask is not binary");

    HuberResult r;
    r.d_rendered = Image(pair.rendered.width, pair.rendered.height);
    const double inv_n = 1.0 / double(pair.rendered.pixels.size());
    double total = 0.0;
    for (size_t i = 0; i < pair.rendered.pixels.size(); ++i) {
        const double e = pair.gt.pixels[i] - pair.rendered.pixels[i];
        const double ae = std::abs(e);
        if (ae <= gamma) {
            total += 0.5 * e * e;
            r.d_rendered.pixels[i] = -e * inv_n;
        } else {
            total += gamma * ae - 0.5 * gamma * gamma;
            r.d_rendered.pixels[i] = (e > 0.0 ? -gamma : gamma) * inv_n;
        }
    }
    r.loss = total * inv_n;
    return r;
}

// Arithmetic mean of the per-view Huber losses.
inline double total_loss(const std::vector<ViewPair>& pairs, double gamma) {
    if (pairs.empty()) throw ConfigError("total_loss: need at least one view");
    double s = 0.0;
    for (const auto& p : pairs) s += huber_image_loss(p, gamma).loss;
    return s / double(pairs.size());
}

inline void check_same_dims(const VoxelGrid& a, const VoxelGrid& b, const char* who) {
    if (!a.same_dims(b)) throw ShapeError(std::string(who) + ": volume dims mismatch");
}

// 10*log10(1/MSE) with unit peak; exact equality capped at 99 dB.
inline double psnr(const VoxelGrid& pred, const VoxelGrid& gt) {
    check_same_dims(pred, gt, "psnr");
    double mse = 0.0;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const double d = pred.values[i] - gt.values[i];
        mse += d * d;
    }
    mse /= double(pred.values.size());
    if (mse == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

// 3D SSIM with a 7^3 Gaussian window (sigma 1.5), evaluated at every
// position where the window fits; C1 = (0.01)^2, C2 = (0.03)^2 for unit range.
inline double ssim(const VoxelGrid& pred, const VoxelGrid& gt) {
    check_same_dims(pred, gt, "ssim");
    constexpr int kWin = 7, kHalf = 3;
    if (pred.nx < kWin || pred.ny < kWin || pred.nz < kWin)
        throw ConfigError("ssim: volume smaller than the 7^3 window");

    double w1d[kWin];
    double wsum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - kHalf;
        w1d[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        wsum += w1d[i];
    }
    for (double& w : w1d) w /= wsum;

    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int px = pred.nx - kWin + 1, py = pred.ny - kWin + 1, pz = pred.nz - kWin + 1;
    double acc = 0.0;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) reduction(+ : acc)
#endif
    for (int z0 = 0; z0 < pz; ++z0) {
        for (int y0 = 0; y0 < py; ++y0) {
            for (int x0 = 0; x0 < px; ++x0) {
                double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                for (int dz = 0; dz < kWin; ++dz)
                    for (int dy = 0; dy < kWin; ++dy)
                        for (int dx = 0; dx < kWin; ++dx) {
                            const double w = w1d[dx] * w1d[dy] * w1d[dz];
                            const double a = pred.at(x0 + dx, y0 + dy, z0 + dz);
                            const double b = gt.at(x0 + dx, y0 + dy, z0 + dz);
                            mx += w * a;
                            my += w * b;
                            mxx += w * a * a;
                            myy += w * b * b;
                            mxy += w * a * b;
                        }
                const double vx = mxx - mx * mx;
                const double vy = myy - my * my;
                const double cxy = mxy - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    return acc / (double(px) * py * pz);
}

// Intersection over union of both volumes binarized at the threshold.
// An empty union counts as perfect agreement.
inline double iou(const VoxelGrid& pred, const VoxelGrid& gt, double threshold = 0.5) {
    check_same_dims(pred, gt, "iou");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const bool a = pred.values[i] >= threshold;
        const bool b = gt.values[i] >= threshold;
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return double(inter) / double(uni);
}

// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
inline double cross_entropy(const VoxelGrid& pred, const VoxelGrid& gt) {
    check_same_dims(pred, gt, "cross_entropy");
    constexpr double kClamp = 1e-7;
    double acc = 0.0;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const double g = gt.values[i];
        if (g != 0.0 && g != 1.0)
            throw InvalidDataError("cross_entropy: ground truth is not binary");
        const double p = std::clamp(pred.values[i], kClamp, 1.0 - kClamp);
        acc -= g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
    }
    return acc / double(pred.values.size());
}

inline MetricReport evaluate_all(const VoxelGrid& pred, const VoxelGrid& gt) {
    MetricReport r;
    r.psnr = psnr(pred, gt);
    r.ssim = ssim(pred, gt);
    r.iou = iou(pred, gt);
    r.ce = cross_entropy(pred, gt);
    return r;
}

// Appends one report row, writing the header first when the file is new.
inline void append_csv_row(const std::string& path, const std::string& sample_id, int aspects,
                           double snr_db, const MetricReport& r) {
    bool need_header = true;
    if (std::FILE* probe = std::fopen(path.c_str(), "rb")) {
        std::fseek(probe, 0, SEEK_END);
        need_header = std::ftell(probe) == 0;
        std::fclose(probe);
    }
    std::unique_ptr<std::FILE, img::FileCloser> f(std::fopen(path.c_str(), "ab"));
    if (!f) throw IoError("cannot open for append: " + path);
    if (need_header) std::fprintf(f.get(), "sample_id,aspects,snr_db,psnr,ssim,iou,ce\n");
    std::fprintf(f.get(), "%s,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", sample_id.c_str(), aspects,
                 snr_db, r.psnr, r.ssim, r.iou, r.ce);
}

} // namespace metrics
} // namespace cmar
