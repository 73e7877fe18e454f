#pragma once

// Voxel grid data model: normalization, trilinear sampling, geometric
// augmentation (isotropic scale / yaw / translation), and the ".vxl" file
// format.
//
// Layout is x-fastest everywhere: value(x,y,z) = values[(z*ny + y)*nx + x].
// `origin` is the world position of the center of cell (0,0,0).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "cmar/core.hpp"

namespace cmar {

struct VoxelGrid {
    int nx = 0, ny = 0, nz = 0;
    double spacing = 1.0;
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    std::vector<double> values;

    VoxelGrid() = default;
    VoxelGrid(int nx_, int ny_, int nz_, double spacing_, std::array<double, 3> origin_)
        : nx(nx_), ny(ny_), nz(nz_), origin(origin_), values(size_t(nx_) * ny_ * nz_, 0.0) {
        spacing = spacing_;
    }

    // Grid whose center coincides with the world origin.
    static VoxelGrid centered(int nx, int ny, int nz, double spacing) {
        std::array<double, 3> org{-0.5 * (nx - 1) * spacing, -0.5 * (ny - 1) * spacing,
                                  -0.5 * (nz - 1) * spacing};
        return VoxelGrid(nx, ny, nz, spacing, org);
    }

    size_t cell_count() const { return size_t(nx) * ny * nz; }
    size_t index(int x, int y, int z) const { return (size_t(z) * ny + y) * nx + x; }
    double& at(int x, int y, int z) { return values[index(x, y, z)]; }
    double at(int x, int y, int z) const { return values[index(x, y, z)]; }

    std::array<double, 3> cell_center(int x, int y, int z) const {
        return {origin[0] + x * spacing, origin[1] + y * spacing, origin[2] + z * spacing};
    }

    std::array<double, 3> grid_center() const {
        return {origin[0] + 0.5 * (nx - 1) * spacing, origin[1] + 0.5 * (ny - 1) * spacing,
                origin[2] + 0.5 * (nz - 1) * spacing};
    }

    // Physical box spanned by the cells (half a cell beyond the outer centers).
    void bounds(std::array<double, 3>& lo, std::array<double, 3>& hi) const {
        const int n[3] = {nx, ny, nz};
        for (int a = 0; a < 3; ++a) {
            lo[a] = origin[a] - 0.5 * spacing;
            hi[a] = origin[a] + (n[a] - 0.5) * spacing;
        }
    }

    bool same_dims(const VoxelGrid& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double max_value() const {
        double m = 0.0;
        for (double v : values) m = std::max(m, v);
        return m;
    }
};

struct AffineParams {
    double scale = 1.0;      // isotropic, about the grid center
    double rotation_z = 0.0; // radians, yaw about the vertical axis through the grid center
    std::array<double, 3> translation{0.0, 0.0, 0.0}; // meters

    bool is_identity() const {
        return scale == 1.0 && rotation_z == 0.0 && translation[0] == 0.0 &&
               translation[1] == 0.0 && translation[2] == 0.0;
    }
};

namespace voxel {

// Scale values so the maximum becomes 1. All-zero grids pass through.
inline VoxelGrid normalize(const VoxelGrid& grid) {
    for (double v : grid.values)
        if (!std::isfinite(v)) throw InvalidDataError("normalize: non-finite voxel value");
    VoxelGrid out = grid;
    const double m = grid.max_value();
    if (m > 0.0) {
        for (double& v : out.values) v /= m;
    }
    return out;
}

// Locates the 8-cell neighborhood of a world point. Returns false when the
// point is too far outside for any tap to land on the lattice. Coordinates
// within 1e-9 cells of the lattice are snapped so lattice-aligned resampling
// (identity, 90-degree yaw, whole-cell shifts) is exact.
inline bool trilinear_locate(const VoxelGrid& grid, const std::array<double, 3>& point,
                             int i0[3], double f[3]) {
    const int n[3] = {grid.nx, grid.ny, grid.nz};
    for (int a = 0; a < 3; ++a) {
        double g = (point[a] - grid.origin[a]) / grid.spacing;
        const double r = std::round(g);
        if (std::abs(g - r) < 1e-9) g = r;
        if (g <= -1.0 || g >= double(n[a])) return false;
        const double fl = std::floor(g);
        i0[a] = int(fl);
        f[a] = g - fl;
    }
    return true;
}

// The in-range taps of a trilinear sample: voxel linear indices and weights.
struct TrilinearFootprint {
    int count = 0;
    size_t idx[8];
    double w[8];
};

inline TrilinearFootprint trilinear_footprint(const VoxelGrid& grid,
                                              const std::array<double, 3>& point) {
    TrilinearFootprint fp;
    int i0[3];
    double f[3];
    if (!trilinear_locate(grid, point, i0, f)) return fp;
    const int n[3] = {grid.nx, grid.ny, grid.nz};
    for (int dz = 0; dz < 2; ++dz) {
        const int z = i0[2] + dz;
        if (z < 0 || z >= n[2]) continue;
        const double wz = dz ? f[2] : 1.0 - f[2];
        if (wz == 0.0) continue;
        for (int dy = 0; dy < 2; ++dy) {
            const int y = i0[1] + dy;
            if (y < 0 || y >= n[1]) continue;
            const double wy = dy ? f[1] : 1.0 - f[1];
            if (wy == 0.0) continue;
            for (int dx = 0; dx < 2; ++dx) {
                const int x = i0[0] + dx;
                if (x < 0 || x >= n[0]) continue;
                const double wx = dx ? f[0] : 1.0 - f[0];
                if (wx == 0.0) continue;
                fp.idx[fp.count] = grid.index(x, y, z);
                fp.w[fp.count] = wz * wy * wx;
                ++fp.count;
            }
        }
    }
    return fp;
}

// Trilinear interpolation at a world point with an implicit zero border:
// taps outside the lattice contribute 0, so the field decays continuously
// to 0 within one cell of the outer centers and is 0 beyond.
inline double trilinear_sample(const VoxelGrid& grid, const std::array<double, 3>& point) {
    const TrilinearFootprint fp = trilinear_footprint(grid, point);
    double acc = 0.0;
    for (int k = 0; k < fp.count; ++k) acc += fp.w[k] * grid.values[fp.idx[k]];
    return acc;
}

// Resample under the map p -> center + s*Rz*(p - center) + t, output-driven:
// each output cell samples the input at the inverse-transformed point.
inline VoxelGrid affine_transform(const VoxelGrid& grid, const AffineParams& params) {
    if (!(params.scale > 0.0)) throw ConfigError("affine_transform: scale must be positive");
    VoxelGrid out = grid;
    if (params.is_identity()) return out;

    const auto c = grid.grid_center();
    const double cos_r = std::cos(params.rotation_z);
    const double sin_r = std::sin(params.rotation_z);
    const double inv_s = 1.0 / params.scale;

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int z = 0; z < grid.nz; ++z) {
        for (int y = 0; y < grid.ny; ++y) {
            for (int x = 0; x < grid.nx; ++x) {
                const auto p = grid.cell_center(x, y, z);
                const double qx = (p[0] - c[0] - params.translation[0]) * inv_s;
                const double qy = (p[1] - c[1] - params.translation[1]) * inv_s;
                const double qz = (p[2] - c[2] - params.translation[2]) * inv_s;
                // inverse yaw
                const std::array<double, 3> src{c[0] + cos_r * qx + sin_r * qy,
                                                c[1] - sin_r * qx + cos_r * qy, c[2] + qz};
                out.at(x, y, z) = trilinear_sample(grid, src);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// ".vxl" binary format: "CMVX", u32 version, u32 nx/ny/nz, f32 spacing,
// f32 origin[3], then nx*ny*nz f32 values, little-endian, x-fastest.

constexpr uint32_t kVxlVersion = 1;

namespace detail {

inline void write_u32(std::FILE* f, uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                          (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
    if (std::fwrite(b, 1, 4, f) != 4) throw IoError("short write");
}

inline uint32_t read_u32(std::FILE* f, const std::string& what) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw FormatError("truncated file reading " + what);
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

inline void write_f32(std::FILE* f, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(f, u);
}

inline float read_f32(std::FILE* f, const std::string& what) {
    const uint32_t u = read_u32(f, what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

} // namespace detail

inline void save_vxl(const VoxelGrid& grid, const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open for writing: " + path);
    if (std::fwrite("CMVX", 1, 4, f.get()) != 4) throw IoError("short write: " + path);
    detail::write_u32(f.get(), kVxlVersion);
    detail::write_u32(f.get(), uint32_t(grid.nx));
    detail::write_u32(f.get(), uint32_t(grid.ny));
    detail::write_u32(f.get(), uint32_t(grid.nz));
    detail::write_f32(f.get(), float(grid.spacing));
    for (int a = 0; a < 3; ++a) detail::write_f32(f.get(), float(grid.origin[a]));
    for (double v : grid.values) detail::write_f32(f.get(), float(v));
}

inline VoxelGrid load_vxl(const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "CMVX", 4) != 0)
        throw FormatError("bad magic in " + path + " (expected CMVX)");
    const uint32_t version = detail::read_u32(f.get(), "version");
    if (version != kVxlVersion)
        throw FormatError("unsupported .vxl version " + std::to_string(version) + " in " + path);
    const uint32_t nx = detail::read_u32(f.get(), "nx");
    const uint32_t ny = detail::read_u32(f.get(), "ny");
    const uint32_t nz = detail::read_u32(f.get(), "nz");
    if (nx == 0 || ny == 0 || nz == 0 || size_t(nx) * ny * nz > (size_t(1) << 31))
        throw FormatError("implausible dims in " + path);
    const float spacing = detail::read_f32(f.get(), "spacing");
    if (!(spacing > 0.0f)) throw FormatError("non-positive spacing in " + path);
    std::array<double, 3> origin{};
    for (int a = 0; a < 3; ++a) origin[a] = detail::read_f32(f.get(), "origin");
    VoxelGrid grid(int(nx), int(ny), int(nz), spacing, origin);
    for (size_t i = 0; i < grid.values.size(); ++i)
        grid.values[i] = detail::read_f32(f.get(), "values");
    return grid;
}

// Quantize through f32 so in-memory values match a save/load round-trip.
inline void quantize_f32(VoxelGrid& grid) {
    for (double& v : grid.values) v = double(float(v));
}

} // namespace voxel
} // namespace cmar
