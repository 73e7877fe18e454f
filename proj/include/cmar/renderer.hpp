#pragma once

// Differentiable emission-absorption volume renderer with a constant unit
// color term. Pixels composite equidistant density samples along pinhole
// rays clipped to the scene box; the backward pass returns the exact
// analytic loss gradient with respect to the voxel densities.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cmar/core.hpp"
#include "cmar/image2d.hpp"
#include "cmar/voxel.hpp"

namespace cmar {

struct Camera {
    std::array<double, 3> position{0, 0, 0};
    std::array<double, 3> look_at{0, 0, 0};
    std::array<double, 3> up{0, 0, 1};
    double vertical_fov = 1.0; // radians
    int width = 1, height = 1;
};

struct Ray {
    std::array<double, 3> origin{0, 0, 0};
    std::array<double, 3> direction{0, 0, 1}; // unit
    double t_near = 0.0, t_far = 0.0;
    bool miss = true;
};

struct RaySamples {
    std::vector<double> t;     // sample depths (equidistant when built by sample_ray)
    std::vector<double> sigma; // sampled densities
    std::vector<double> delta; // per-sample step
    std::vector<voxel::TrilinearFootprint> footprints;
};

struct ViewSet {
    std::vector<Camera> cameras;
    size_t size() const { return cameras.size(); }
};

namespace render {

namespace vec {
inline std::array<double, 3> sub(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double dot(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm(const std::array<double, 3>& a) { return std::sqrt(dot(a, a)); }
inline std::array<double, 3> normalized(const std::array<double, 3>& a) {
    const double n = norm(a);
    if (n == 0.0) throw DomainError("cannot normalize zero vector");
    return {a[0] / n, a[1] / n, a[2] / n};
}
} // namespace vec

inline void validate(const Camera& cam) {
    if (cam.position == cam.look_at) throw ConfigError("camera: position equals look_at");
    if (!(cam.vertical_fov > 0.0) || !(cam.vertical_fov < kPi))
        throw ConfigError("camera: vertical fov must be in (0, pi)");
    if (cam.width < 1 || cam.height < 1) throw ConfigError("camera: image dims must be >= 1");
}

// Cameras on a ring: azimuths 2*pi*k/count at a common elevation and
// distance from the world origin (the scene center), looking inward,
// up = world z. The field of view frames a scene of the given diagonal
// with a 10% margin.
inline ViewSet make_view_set(int count, double distance, double elevation, int image_size,
                             double scene_diagonal) {
    if (count < 1) throw ConfigError("make_view_set: count must be >= 1");
    if (!(distance > 0.0)) throw ConfigError("make_view_set: distance must be positive");
    if (image_size < 1) throw ConfigError("make_view_set: image size must be >= 1");
    ViewSet views;
    views.cameras.reserve(count);
    const double fov = 2.0 * std::atan(1.1 * 0.5 * scene_diagonal / distance);
    for (int k = 0; k < count; ++k) {
        const double az = 2.0 * kPi * k / double(count);
        Camera cam;
        cam.position = {distance * std::cos(elevation) * std::cos(az),
                        distance * std::cos(elevation) * std::sin(az),
                        distance * std::sin(elevation)};
        cam.look_at = {0, 0, 0};
        cam.up = {0, 0, 1};
        cam.vertical_fov = fov;
        cam.width = image_size;
        cam.height = image_size;
        validate(cam);
        views.cameras.push_back(cam);
    }
    return views;
}

// Orthonormal camera frame; falls back to an x-axis up when the viewing
// direction is parallel to the configured up.
struct CameraFrame {
    std::array<double, 3> forward, right, cam_up;
    double tan_half_fov, aspect;
};

inline CameraFrame camera_frame(const Camera& cam) {
    CameraFrame f;
    f.forward = vec::normalized(vec::sub(cam.look_at, cam.position));
    auto r = vec::cross(f.forward, cam.up);
    if (vec::norm(r) < 1e-12) r = vec::cross(f.forward, std::array<double, 3>{1, 0, 0});
    f.right = vec::normalized(r);
    f.cam_up = vec::cross(f.right, f.forward);
    f.tan_half_fov = std::tan(0.5 * cam.vertical_fov);
    f.aspect = double(cam.width) / double(cam.height);
    return f;
}

// Slab-method ray/AABB intersection. On a hit, tn/tf bracket the in-box
// segment with tn clamped to 0.
inline bool intersect_aabb(const std::array<double, 3>& origin,
                           const std::array<double, 3>& direction,
                           const std::array<double, 3>& lo, const std::array<double, 3>& hi,
                           double& tn, double& tf) {
    tn = 0.0;
    tf = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (direction[a] == 0.0) {
            if (origin[a] < lo[a] || origin[a] > hi[a]) return false;
            continue;
        }
        double t1 = (lo[a] - origin[a]) / direction[a];
        double t2 = (hi[a] - origin[a]) / direction[a];
        if (t1 > t2) std::swap(t1, t2);
        tn = std::max(tn, t1);
        tf = std::min(tf, t2);
        if (tn >= tf) return false;
    }
    return tf > 0.0;
}

// Pinhole ray through the center of pixel (row i, col j), clipped to the
// scene box [box_lo, box_hi].
inline Ray generate_ray(const Camera& cam, int i, int j, const std::array<double, 3>& box_lo,
                        const std::array<double, 3>& box_hi) {
    if (i < 0 || i >= cam.height || j < 0 || j >= cam.width)
        throw UsageError("generate_ray: pixel index out of range");
    const CameraFrame f = camera_frame(cam);
    const double ndc_x = (2.0 * (j + 0.5) / cam.width - 1.0) * f.tan_half_fov * f.aspect;
    const double ndc_y = (1.0 - 2.0 * (i + 0.5) / cam.height) * f.tan_half_fov;
    Ray ray;
    ray.origin = cam.position;
    ray.direction = vec::normalized({f.forward[0] + ndc_x * f.right[0] + ndc_y * f.cam_up[0],
                                     f.forward[1] + ndc_x * f.right[1] + ndc_y * f.cam_up[1],
                                     f.forward[2] + ndc_x * f.right[2] + ndc_y * f.cam_up[2]});
    double tn, tf;
    ray.miss = !intersect_aabb(ray.origin, ray.direction, box_lo, box_hi, tn, tf);
    if (!ray.miss) {
        ray.t_near = tn;
        ray.t_far = tf;
    }
    return ray;
}

inline std::array<double, 3> point_at(const Ray& ray, double t) {
    return {ray.origin[0] + t * ray.direction[0], ray.origin[1] + t * ray.direction[1],
            ray.origin[2] + t * ray.direction[2]};
}

// Equidistant midpoint samples of the density grid along the ray segment.
inline RaySamples sample_ray(const VoxelGrid& grid, const Ray& ray, int n_samples) {
    if (n_samples < 2) throw ConfigError("sample_ray: need at least 2 samples");
    RaySamples s;
    if (ray.miss) return s;
    const double step = (ray.t_far - ray.t_near) / double(n_samples);
    s.t.resize(n_samples);
    s.sigma.resize(n_samples);
    s.delta.assign(n_samples, step);
    s.footprints.resize(n_samples);
    for (int k = 0; k < n_samples; ++k) {
        s.t[k] = ray.t_near + (k + 0.5) * step;
        s.footprints[k] = voxel::trilinear_footprint(grid, point_at(ray, s.t[k]));
        double acc = 0.0;
        for (int m = 0; m < s.footprints[k].count; ++m)
            acc += s.footprints[k].w[m] * grid.values[s.footprints[k].idx[m]];
        s.sigma[k] = acc;
    }
    return s;
}

// Stepwise front-to-back compositing with unit color:
//   C = sum_i T_i * (1 - exp(-sigma_i * delta_i)),  T_i = exp(-sum_{j<i} sigma_j * delta_j).
// Algebraically C = 1 - exp(-sum_i sigma_i * delta_i).
inline double composite(const RaySamples& samples) {
    if (samples.delta.size() != samples.sigma.size())
        throw ShapeError("composite: sigma/delta length mismatch");
    double total = 0.0;
    double transmittance = 1.0;
    for (size_t k = 0; k < samples.sigma.size(); ++k) {
        if (samples.sigma[k] < 0.0) throw DomainError("composite: negative density");
        if (!(samples.delta[k] > 0.0)) throw DomainError("composite: non-positive step");
        const double absorb = std::exp(-samples.sigma[k] * samples.delta[k]);
        total += transmittance * (1.0 - absorb);
        transmittance *= absorb;
    }
    return total;
}

// dC/dsigma_i for the constant-color composite: delta_i * exp(-sum sigma*delta).
inline std::vector<double> composite_backward(const RaySamples& samples) {
    if (samples.delta.size() != samples.sigma.size())
        throw ShapeError("composite_backward: sigma/delta length mismatch");
    double tau = 0.0;
    for (size_t k = 0; k < samples.sigma.size(); ++k) {
        if (samples.sigma[k] < 0.0) throw DomainError("composite_backward: negative density");
        tau += samples.sigma[k] * samples.delta[k];
    }
    const double attenuation = std::exp(-tau);
    std::vector<double> d(samples.sigma.size());
    for (size_t k = 0; k < d.size(); ++k) d[k] = samples.delta[k] * attenuation;
    return d;
}

inline int auto_sample_count(const VoxelGrid& grid) {
    const double diag =
        std::sqrt(double(grid.nx) * grid.nx + double(grid.ny) * grid.ny + double(grid.nz) * grid.nz);
    return std::max(2, 2 * int(std::ceil(diag)));
}

namespace detail {

// Optical depth along a ray: sum of sampled densities times the step.
// Density nonnegativity is validated by the caller before parallel work.
inline double optical_depth(const VoxelGrid& grid, const Ray& ray, int n_samples, double delta) {
    double tau = 0.0;
    for (int k = 0; k < n_samples; ++k)
        tau += voxel::trilinear_sample(grid, point_at(ray, ray.t_near + (k + 0.5) * delta)) * delta;
    return tau;
}

inline void require_nonnegative(const VoxelGrid& grid, const char* who) {
    for (double v : grid.values)
        if (v < 0.0) throw DomainError(std::string(who) + ": negative density");
}

} // namespace detail

// Renders one view. Pixel = 1 - exp(-sum sigma*delta) over the ray's in-box
// segment; missed rays render 0. Matches composite() on the same samples.
inline Image render(const VoxelGrid& grid, const Camera& cam, int n_samples) {
    if (n_samples < 2) throw ConfigError("render: need at least 2 samples");
    validate(cam);
    detail::require_nonnegative(grid, "render");
    std::array<double, 3> lo, hi;
    grid.bounds(lo, hi);
    Image image(cam.width, cam.height);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < cam.height; ++i) {
        for (int j = 0; j < cam.width; ++j) {
            const Ray ray = generate_ray(cam, i, j, lo, hi);
            if (ray.miss) {
                image.at(i, j) = 0.0;
                continue;
            }
            const double delta = (ray.t_far - ray.t_near) / double(n_samples);
            image.at(i, j) = -std::expm1(-detail::optical_depth(grid, ray, n_samples, delta));
        }
    }
    return image;
}

// Analytic gradient of a scalar loss with respect to the voxel densities:
//   dL/dv = sum_rays sum_samples dL/dC * delta * exp(-tau_ray) * w_tap(v).
// Sampling matches render() exactly. Accumulation order is fixed (ray-major,
// then sample, then tap) regardless of thread count: the grid is split into
// a fixed set of z-slabs and each slab scans the rays independently.
inline VoxelGrid render_backward(const VoxelGrid& grid, const Camera& cam, int n_samples,
                                 const Image& dL_dI) {
    if (n_samples < 2) throw ConfigError("render_backward: need at least 2 samples");
    validate(cam);
    if (dL_dI.width != cam.width || dL_dI.height != cam.height)
        throw ShapeError("render_backward: upstream image dims do not match camera");
    detail::require_nonnegative(grid, "render_backward");

    std::array<double, 3> lo, hi;
    grid.bounds(lo, hi);

    // Per-ray scale factor dL/dC * delta * exp(-tau); 0 for misses.
    const size_t n_rays = size_t(cam.width) * cam.height;
    std::vector<double> scale(n_rays, 0.0);
    std::vector<double> deltas(n_rays, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < cam.height; ++i) {
        for (int j = 0; j < cam.width; ++j) {
            const Ray ray = generate_ray(cam, i, j, lo, hi);
            if (ray.miss) continue;
            const double delta = (ray.t_far - ray.t_near) / double(n_samples);
            const double tau = detail::optical_depth(grid, ray, n_samples, delta);
            const size_t pix = size_t(i) * cam.width + j;
            deltas[pix] = delta;
            scale[pix] = dL_dI.at(i, j) * delta * std::exp(-tau);
        }
    }

    VoxelGrid grad(grid.nx, grid.ny, grid.nz, grid.spacing, grid.origin);
    const int n_slabs = std::max(1, std::min(16, grid.nz));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (int slab = 0; slab < n_slabs; ++slab) {
        const int z_lo = slab * grid.nz / n_slabs;
        const int z_hi = (slab + 1) * grid.nz / n_slabs - 1; // inclusive
        for (int i = 0; i < cam.height; ++i) {
            for (int j = 0; j < cam.width; ++j) {
                const size_t pix = size_t(i) * cam.width + j;
                const double s = scale[pix];
                if (s == 0.0) continue;
                const Ray ray = generate_ray(cam, i, j, lo, hi);
                if (ray.miss) continue;
                for (int k = 0; k < n_samples; ++k) {
                    const auto p = point_at(ray, ray.t_near + (k + 0.5) * deltas[pix]);
                    int i0[3];
                    double f[3];
                    if (!voxel::trilinear_locate(grid, p, i0, f)) continue;
                    if (i0[2] + 1 < z_lo || i0[2] > z_hi) continue;
                    for (int dz = 0; dz < 2; ++dz) {
                        const int z = i0[2] + dz;
                        if (z < z_lo || z > z_hi || z < 0 || z >= grid.nz) continue;
                        const double wz = dz ? f[2] : 1.0 - f[2];
                        if (wz == 0.0) continue;
                        for (int dy = 0; dy < 2; ++dy) {
                            const int y = i0[1] + dy;
                            if (y < 0 || y >= grid.ny) continue;
                            const double wy = dy ? f[1] : 1.0 - f[1];
                            if (wy == 0.0) continue;
                            for (int dx = 0; dx < 2; ++dx) {
                                const int x = i0[0] + dx;
                                if (x < 0 || x >= grid.nx) continue;
                                const double wx = dx ? f[0] : 1.0 - f[0];
                                if (wx == 0.0) continue;
                                grad.at(x, y, z) += s * wz * wy * wx;
                            }
                        }
                    }
                }
            }
        }
    }
    return grad;
}

} // namespace render
} // namespace cmar
