#pragma once

// Far-field point-scatterer imaging chain: phase-history simulation over
// azimuth/elevation apertures, complex noise injection, polar-to-Cartesian
// k-space gridding, centered inverse DFT, and non-coherent aspect
// integration. The scene phase center is the world origin; grids produced
// here are centered on it.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "cmar/core.hpp"
#include "cmar/voxel.hpp"

namespace cmar {

struct ScattererSet {
    std::vector<std::array<double, 3>> points; // meters, world frame
    std::vector<double> amplitudes;

    size_t size() const { return points.size(); }
};

struct AspectSpec {
    double azimuth_center = 0.0;  // radians
    double azimuth_extent = 0.0;  // radians
    int azimuth_samples = 0;
    std::vector<double> elevations; // radians, one per baseline
    double freq_center = 0.0;     // Hz
    double bandwidth = 0.0;       // Hz
    int freq_samples = 0;

    size_t sample_count() const {
        return size_t(freq_samples) * azimuth_samples * elevations.size();
    }
    double mean_elevation() const {
        double s = 0.0;
        for (double e : elevations) s += e;
        return s / double(elevations.size());
    }
};

// Complex frequency-domain samples, indexed (freq fastest, then azimuth,
// then elevation): samples[(ie*azimuth_samples + ia)*freq_samples + if].
struct PhaseHistory {
    AspectSpec aspect;
    std::vector<std::complex<double>> samples;
};

// Cartesian k-space cube aligned with the scene lattice. Cell g holds the
// spectrum near k = center_k + (g - n/2)*delta_k per axis.
struct KSpaceCube {
    int nx = 0, ny = 0, nz = 0;
    double scene_spacing = 0.0;
    std::array<double, 3> center_k{0, 0, 0};
    std::array<double, 3> delta_k{0, 0, 0};
    std::vector<std::complex<double>> values;
    std::vector<double> weights; // accumulated gridding weights per cell

    size_t index(int x, int y, int z) const { return (size_t(z) * ny + y) * nx + x; }
};

// Complex spatial image on the scene voxel lattice.
struct SubAspectImage {
    int nx = 0, ny = 0, nz = 0;
    double spacing = 0.0;
    std::array<double, 3> origin{0, 0, 0};
    std::vector<std::complex<double>> values;

    size_t index(int x, int y, int z) const { return (size_t(z) * ny + y) * nx + x; }
};

namespace imaging {

// Radar look direction for azimuth theta, elevation phi.
inline std::array<double, 3> look_direction(double theta, double phi) {
    return {std::cos(phi) * std::cos(theta), std::cos(phi) * std::sin(theta), std::sin(phi)};
}

inline void validate(const AspectSpec& a) {
    if (!(a.azimuth_extent > 0.0)) throw ConfigError("aspect: azimuth extent must be positive");
    if (a.azimuth_samples < 2) throw ConfigError("aspect: need at least 2 azimuth samples");
    if (a.freq_samples < 2) throw ConfigError("aspect: need at least 2 frequency samples");
    if (a.elevations.empty()) throw ConfigError("aspect: need at least 1 elevation baseline");
    if (!(a.bandwidth > 0.0) || !(a.bandwidth < 2.0 * a.freq_center))
        throw ConfigError("aspect: bandwidth must be in (0, 2*freq_center)");
}

// sample(f, theta, phi) = sum_i a_i * exp(-j * 4*pi*f/c * dot(u(theta,phi), x_i)).
// The frequency sweep is evaluated with an incremental phasor per
// (direction, scatterer) pair; drift over a sweep is O(n_freq * eps).
inline PhaseHistory simulate_phase_history(const ScattererSet& scatterers,
                                           const AspectSpec& aspect) {
    validate(aspect);
    if (scatterers.points.empty())
        throw EmptySceneError("simulate_phase_history: empty scatterer set");

    PhaseHistory ph;
    ph.aspect = aspect;
    ph.samples.assign(aspect.sample_count(), {0.0, 0.0});

    const int n_f = aspect.freq_samples;
    const int n_az = aspect.azimuth_samples;
    const int n_el = int(aspect.elevations.size());
    const double f_lo = aspect.freq_center - 0.5 * aspect.bandwidth;
    const double df = aspect.bandwidth / double(n_f - 1);
    const double az_lo = aspect.azimuth_center - 0.5 * aspect.azimuth_extent;
    const double daz = aspect.azimuth_extent / double(n_az - 1);
    const double wave_scale = 4.0 * kPi / kSpeedOfLight;

#ifdef _OPENMP
#pragma omp parallel for schedule(static) collapse(2)
#endif
    for (int ie = 0; ie < n_el; ++ie) {
        for (int ia = 0; ia < n_az; ++ia) {
            const auto u = look_direction(az_lo + ia * daz, aspect.elevations[ie]);
            std::complex<double>* slice = ph.samples.data() + (size_t(ie) * n_az + ia) * n_f;
            for (size_t s = 0; s < scatterers.size(); ++s) {
                const auto& p = scatterers.points[s];
                const double d = u[0] * p[0] + u[1] * p[1] + u[2] * p[2];
                const std::complex<double> base =
                    scatterers.amplitudes[s] *
                    std::complex<double>(std::cos(wave_scale * f_lo * d),
                                         -std::sin(wave_scale * f_lo * d));
                const std::complex<double> step(std::cos(wave_scale * df * d),
                                                -std::sin(wave_scale * df * d));
                std::complex<double> w = base;
                for (int k = 0; k < n_f; ++k) {
                    slice[k] += w;
                    w *= step;
                }
            }
        }
    }
    return ph;
}

// Adds circular complex Gaussian noise at the given SNR (dB) relative to the
// mean sample power. snr_db = +inf returns the input unchanged.
inline PhaseHistory add_noise(const PhaseHistory& ph, double snr_db, uint64_t seed) {
    for (const auto& s : ph.samples)
        if (!std::isfinite(s.real()) || !std::isfinite(s.imag()))
            throw InvalidDataError("add_noise: non-finite phase-history sample");
    if (std::isinf(snr_db) && snr_db > 0) return ph;

    double power = 0.0;
    for (const auto& s : ph.samples) power += std::norm(s);
    power /= double(ph.samples.size());
    const double noise_power = power / std::pow(10.0, snr_db / 10.0);
    const double sigma = std::sqrt(0.5 * noise_power);

    PhaseHistory out = ph;
    Rng rng(derive_seed(seed, 0x6e6f6973ULL)); // "nois"
    for (auto& s : out.samples)
        s += std::complex<double>(sigma * rng.gaussian(), sigma * rng.gaussian());
    return out;
}

// Scatters each polar sample onto its 8 neighboring cells of a Cartesian
// k-lattice matched to the scene grid: delta_k = 2*pi/(n*spacing) per axis,
// box centered on the aspect's carrier k-vector.
inline KSpaceCube form_kspace_grid(const PhaseHistory& ph, int nx, int ny, int nz,
                                   double scene_spacing) {
    validate(ph.aspect);
    if (nx < 2 || ny < 2 || nz < 2) throw ConfigError("form_kspace_grid: dims must be >= 2");
    if (!(scene_spacing > 0.0)) throw ConfigError("form_kspace_grid: spacing must be positive");

    KSpaceCube cube;
    cube.nx = nx;
    cube.ny = ny;
    cube.nz = nz;
    cube.scene_spacing = scene_spacing;
    const int n[3] = {nx, ny, nz};
    for (int a = 0; a < 3; ++a) cube.delta_k[a] = 2.0 * kPi / (n[a] * scene_spacing);
    const double k_carrier = 4.0 * kPi * ph.aspect.freq_center / kSpeedOfLight;
    const auto u_center =
        look_direction(ph.aspect.azimuth_center, ph.aspect.mean_elevation());
    for (int a = 0; a < 3; ++a) cube.center_k[a] = k_carrier * u_center[a];

    cube.values.assign(size_t(nx) * ny * nz, {0.0, 0.0});
    cube.weights.assign(cube.values.size(), 0.0);

    const int n_f = ph.aspect.freq_samples;
    const int n_az = ph.aspect.azimuth_samples;
    const int n_el = int(ph.aspect.elevations.size());
    const double f_lo = ph.aspect.freq_center - 0.5 * ph.aspect.bandwidth;
    const double df = ph.aspect.bandwidth / double(n_f - 1);
    const double az_lo = ph.aspect.azimuth_center - 0.5 * ph.aspect.azimuth_extent;
    const double daz = ph.aspect.azimuth_extent / double(n_az - 1);
    const double wave_scale = 4.0 * kPi / kSpeedOfLight;

    for (int ie = 0; ie < n_el; ++ie) {
        for (int ia = 0; ia < n_az; ++ia) {
            const auto u = look_direction(az_lo + ia * daz, ph.aspect.elevations[ie]);
            for (int k = 0; k < n_f; ++k) {
                const double kmag = wave_scale * (f_lo + k * df);
                double t[3];
                int i0[3];
                double frac[3];
                for (int a = 0; a < 3; ++a) {
                    t[a] = (kmag * u[a] - cube.center_k[a]) / cube.delta_k[a] + 0.5 * n[a];
                    if (t[a] < 0.0 || t[a] > double(n[a] - 1))
                        throw OutOfBandError(
                            "form_kspace_grid: sample (freq=" + std::to_string(k) +
                            ", az=" + std::to_string(ia) + ", el=" + std::to_string(ie) +
                            ") falls outside the k-box on axis " + std::to_string(a));
                    const double fl = std::floor(t[a]);
                    i0[a] = std::min(int(fl), n[a] - 2);
                    frac[a] = t[a] - i0[a];
                }
                const std::complex<double> v =
                    ph.samples[(size_t(ie) * n_az + ia) * n_f + k];
                for (int dz = 0; dz < 2; ++dz) {
                    const double wz = dz ? frac[2] : 1.0 - frac[2];
                    for (int dy = 0; dy < 2; ++dy) {
                        const double wy = dy ? frac[1] : 1.0 - frac[1];
                        for (int dx = 0; dx < 2; ++dx) {
                            const double w = wz * wy * (dx ? frac[0] : 1.0 - frac[0]);
                            if (w == 0.0) continue;
                            const size_t idx = cube.index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
                            cube.values[idx] += w * v;
                            cube.weights[idx] += w;
                        }
                    }
                }
            }
        }
    }
    return cube;
}

// Divides each filled cell by its accumulated gridding weight.
inline void apply_density_compensation(KSpaceCube& cube) {
    for (size_t i = 0; i < cube.values.size(); ++i)
        if (cube.weights[i] > 0.0) cube.values[i] /= cube.weights[i];
}

// Applies a separable Hann taper across the filled extent of each axis.
inline void apply_hann_window(KSpaceCube& cube) {
    const int n[3] = {cube.nx, cube.ny, cube.nz};
    std::array<std::vector<double>, 3> w;
    for (int a = 0; a < 3; ++a) {
        w[a].assign(n[a], 0.0);
        for (int i = 0; i < n[a]; ++i)
            w[a][i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / double(n[a] - 1));
    }
    for (int z = 0; z < cube.nz; ++z)
        for (int y = 0; y < cube.ny; ++y)
            for (int x = 0; x < cube.nx; ++x)
                cube.values[cube.index(x, y, z)] *= w[0][x] * w[1][y] * w[2][z];
}

namespace detail {

// Dense centered DFT factor for one axis: E[g*n + u] = exp(j*2*pi*(g - n/2)*(u - (n-1)/2)/n).
inline std::vector<std::complex<double>> centered_dft_factor(int n) {
    std::vector<std::complex<double>> e(size_t(n) * n);
    for (int g = 0; g < n; ++g) {
        for (int u = 0; u < n; ++u) {
            const double phase = 2.0 * kPi * (g - 0.5 * n) * (u - 0.5 * (n - 1)) / double(n);
            e[size_t(g) * n + u] = {std::cos(phase), std::sin(phase)};
        }
    }
    return e;
}

} // namespace detail

// Centered 3D inverse DFT of the k-cube, evaluated on the scene lattice
// relative to the grid center (the carrier offset is removed, which leaves
// magnitudes unchanged). Output is the complex image, scaled by 1/(nx*ny*nz).
inline SubAspectImage subaspect_image(const KSpaceCube& cube) {
    const int nx = cube.nx, ny = cube.ny, nz = cube.nz;
    SubAspectImage img;
    img.nx = nx;
    img.ny = ny;
    img.nz = nz;
    img.spacing = cube.scene_spacing;
    img.origin = {-0.5 * (nx - 1) * img.spacing, -0.5 * (ny - 1) * img.spacing,
                  -0.5 * (nz - 1) * img.spacing};

    const auto ex = detail::centered_dft_factor(nx);
    const auto ey = detail::centered_dft_factor(ny);
    const auto ez = detail::centered_dft_factor(nz);

    // axis x: values[gx,gy,gz] -> a[ux,gy,gz]
    std::vector<std::complex<double>> a(cube.values.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int gz = 0; gz < nz; ++gz) {
        for (int gy = 0; gy < ny; ++gy) {
            const std::complex<double>* row = cube.values.data() + (size_t(gz) * ny + gy) * nx;
            std::complex<double>* out = a.data() + (size_t(gz) * ny + gy) * nx;
            for (int ux = 0; ux < nx; ++ux) {
                std::complex<double> acc{0.0, 0.0};
                for (int gx = 0; gx < nx; ++gx) acc += row[gx] * ex[size_t(gx) * nx + ux];
                out[ux] = acc;
            }
        }
    }
    // axis y: a[ux,gy,gz] -> b[ux,uy,gz]
    std::vector<std::complex<double>> b(cube.values.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int gz = 0; gz < nz; ++gz) {
        for (int ux = 0; ux < nx; ++ux) {
            for (int uy = 0; uy < ny; ++uy) {
                std::complex<double> acc{0.0, 0.0};
                for (int gy = 0; gy < ny; ++gy)
                    acc += a[(size_t(gz) * ny + gy) * nx + ux] * ey[size_t(gy) * ny + uy];
                b[(size_t(gz) * ny + uy) * nx + ux] = acc;
            }
        }
    }
    // axis z: b[ux,uy,gz] -> img[ux,uy,uz]
    img.values.assign(cube.values.size(), {0.0, 0.0});
    const double scale = 1.0 / double(size_t(nx) * ny * nz);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) collapse(2)
#endif
    for (int uy = 0; uy < ny; ++uy) {
        for (int ux = 0; ux < nx; ++ux) {
            for (int uz = 0; uz < nz; ++uz) {
                std::complex<double> acc{0.0, 0.0};
                for (int gz = 0; gz < nz; ++gz)
                    acc += b[(size_t(gz) * ny + uy) * nx + ux] * ez[size_t(gz) * nz + uz];
                img.values[(size_t(uz) * ny + uy) * nx + ux] = acc * scale;
            }
        }
    }
    return img;
}

enum class IntegrationMode { Sum, Max };

// Per-voxel magnitude, then elementwise sum or max across aspects, then
// normalization to [0, 1].
inline VoxelGrid integrate_aspects(const std::vector<SubAspectImage>& images,
                                   IntegrationMode mode) {
    if (images.empty()) throw ConfigError("integrate_aspects: need at least one image");
    const auto& first = images.front();
    for (const auto& im : images)
        if (im.nx != first.nx || im.ny != first.ny || im.nz != first.nz)
            throw ShapeError("integrate_aspects: sub-aspect image dims mismatch");

    VoxelGrid out(first.nx, first.ny, first.nz, first.spacing, first.origin);
    const size_t n = out.cell_count();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < (long long)n; ++i) {
        double acc = 0.0;
        for (const auto& im : images) {
            const double m = std::abs(im.values[size_t(i)]);
            acc = (mode == IntegrationMode::Sum) ? acc + m : std::max(acc, m);
        }
        out.values[size_t(i)] = acc;
    }
    return voxel::normalize(out);
}

// ---------------------------------------------------------------------------
// Aspect wheel helpers.

struct RadarParams {
    double freq_center = 9.6e9;   // Hz
    double bandwidth = 1.049e9;   // Hz
    int freq_samples = 64;
    int azimuth_samples = 24;
    int wheel_aspects = 72;       // contiguous sectors covering 360 degrees
    double aspect_extent = 2.0 * kPi / 72.0;
    std::vector<double> elevations; // radians
};

inline AspectSpec make_aspect(const RadarParams& radar, int index) {
    if (index < 0 || index >= radar.wheel_aspects)
        throw ConfigError("make_aspect: index out of range");
    AspectSpec a;
    a.azimuth_center = (index + 0.5) * 2.0 * kPi / double(radar.wheel_aspects);
    a.azimuth_extent = radar.aspect_extent;
    a.azimuth_samples = radar.azimuth_samples;
    a.elevations = radar.elevations;
    a.freq_center = radar.freq_center;
    a.bandwidth = radar.bandwidth;
    a.freq_samples = radar.freq_samples;
    return a;
}

// k uniformly spaced elevations across [lo, hi].
inline std::vector<double> elevation_baselines(double lo, double hi, int count) {
    if (count < 1) throw ConfigError("elevation_baselines: count must be >= 1");
    std::vector<double> e(count);
    if (count == 1) {
        e[0] = 0.5 * (lo + hi);
    } else {
        for (int i = 0; i < count; ++i) e[i] = lo + (hi - lo) * i / double(count - 1);
    }
    return e;
}

// Uniform draw of `count` distinct aspect indices from the wheel.
inline std::vector<int> choose_sparse_aspects(int wheel, int count, uint64_t seed) {
    if (count < 1 || count > wheel) throw ConfigError("choose_sparse_aspects: bad count");
    std::vector<int> pool(wheel);
    for (int i = 0; i < wheel; ++i) pool[i] = i;
    Rng rng(derive_seed(seed, 0x61737065ULL)); // "aspe"
    std::vector<int> picked(count);
    for (int i = 0; i < count; ++i) {
        const int j = i + int(rng.uniform_int(uint64_t(wheel - i)));
        std::swap(pool[i], pool[j]);
        picked[i] = pool[i];
    }
    return picked;
}

} // namespace imaging
} // namespace cmar
