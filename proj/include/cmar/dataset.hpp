#pragma once

// Paired training data: procedural vehicle occupancy models, surface
// scatterer extraction, sparse-aspect radar volume formation, multi-view
// ground-truth mask rendering, and the on-disk sample layout
// (<id>/sar.vxl, <id>/gt.vxl, <id>/mask_<k>.pgm, <id>/meta.txt).

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cmar/core.hpp"
#include "cmar/image2d.hpp"
#include "cmar/imaging.hpp"
#include "cmar/renderer.hpp"
#include "cmar/voxel.hpp"

namespace cmar {

enum class VehicleKind { Sedan, Suv, Pickup, Jeep, Van };

inline const char* to_string(VehicleKind k) {
    switch (k) {
        case VehicleKind::Sedan: return "sedan";
        case VehicleKind::Suv: return "suv";
        case VehicleKind::Pickup: return "pickup";
        case VehicleKind::Jeep: return "jeep";
        case VehicleKind::Van: return "van";
    }
    return "sedan";
}

inline VehicleKind vehicle_kind_from(const std::string& s) {
    if (s == "sedan") return VehicleKind::Sedan;
    if (s == "suv") return VehicleKind::Suv;
    if (s == "pickup") return VehicleKind::Pickup;
    if (s == "jeep") return VehicleKind::Jeep;
    if (s == "van") return VehicleKind::Van;
    throw ConfigError("unknown vehicle kind: " + s);
}

// All lengths in meters. The vehicle stands on z=0 in its local frame and is
// mirror-symmetric in y.
struct VehicleDims {
    double body_l, body_w, body_h;
    double clearance;                          // gap under the body floor
    double cabin_l, cabin_w, cabin_h, cabin_x; // cabin box on top of the body
    double wheel_r, wheel_w;
    double bed_x0, bed_depth, bed_wall; // open cargo bed (pickup); bed_depth 0 = none
};

inline VehicleDims vehicle_dims(VehicleKind kind) {
    switch (kind) {
        case VehicleKind::Sedan:
            return {2.45, 1.15, 0.55, 0.18, 1.25, 1.00, 0.42, -0.15, 0.22, 0.16, 0, 0, 0};
        case VehicleKind::Suv:
            return {2.45, 1.25, 0.75, 0.22, 1.55, 1.10, 0.50, -0.10, 0.26, 0.18, 0, 0, 0};
        case VehicleKind::Pickup:
            return {2.50, 1.20, 0.62, 0.22, 0.90, 1.05, 0.50, -0.60, 0.24, 0.16, 0.05, 0.40, 0.09};
        case VehicleKind::Jeep:
            return {2.20, 1.30, 0.78, 0.26, 1.25, 1.15, 0.45, 0.00, 0.30, 0.20, 0, 0, 0};
        case VehicleKind::Van:
            return {2.45, 1.30, 1.05, 0.18, 0, 0, 0, 0, 0.22, 0.16, 0, 0, 0};
    }
    return vehicle_dims(VehicleKind::Sedan);
}

namespace data {

// Point-in-solid test in the vehicle's local frame (ground plane z=0).
inline bool vehicle_contains(const VehicleDims& d, double px, double py, double pz) {
    const double body_lo = d.clearance, body_hi = d.clearance + d.body_h;
    // cargo bed cavity carved into the top of the body
    if (d.bed_depth > 0.0 && px >= d.bed_x0 + d.bed_wall && px <= 0.5 * d.body_l - d.bed_wall &&
        std::abs(py) <= 0.5 * d.body_w - d.bed_wall && pz >= body_hi - d.bed_depth && pz <= body_hi)
        return false;
    if (std::abs(px) <= 0.5 * d.body_l && std::abs(py) <= 0.5 * d.body_w && pz >= body_lo &&
        pz <= body_hi)
        return true;
    if (d.cabin_h > 0.0 && std::abs(px - d.cabin_x) <= 0.5 * d.cabin_l &&
        std::abs(py) <= 0.5 * d.cabin_w && pz >= body_hi && pz <= body_hi + d.cabin_h)
        return true;
    // four wheel cylinders, axes along y
    const double wx = 0.5 * d.body_l - d.wheel_r - 0.15;
    const double wy = 0.5 * d.body_w - 0.5 * d.wheel_w;
    for (int sx = -1; sx <= 1; sx += 2) {
        for (int sy = -1; sy <= 1; sy += 2) {
            const double dx = px - sx * wx;
            const double dz = pz - d.wheel_r;
            if (dx * dx + dz * dz <= d.wheel_r * d.wheel_r &&
                std::abs(py - sy * wy) <= 0.5 * d.wheel_w)
                return true;
        }
    }
    return false;
}

inline double vehicle_height(const VehicleDims& d) {
    return d.clearance + d.body_h + d.cabin_h;
}

// Voxelized occupancy ({0,1}) of the vehicle, centered in a grid whose
// center is the world origin.
inline VoxelGrid make_vehicle(VehicleKind kind, int nx, int ny, int nz, double spacing) {
    const VehicleDims d = vehicle_dims(kind);
    const double h = vehicle_height(d);
    if (d.body_l > nx * spacing || d.body_w + 0.0 > ny * spacing || h > nz * spacing)
        throw ConfigError("make_vehicle: model does not fit the grid");

    VoxelGrid occ = VoxelGrid::centered(nx, ny, nz, spacing);
    const double z_shift = -0.5 * h; // vertical mid-height sits at the grid center
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                const auto p = occ.cell_center(x, y, z);
                occ.at(x, y, z) =
                    vehicle_contains(d, p[0], p[1], p[2] - z_shift) ? 1.0 : 0.0;
            }
        }
    }
    return occ;
}

// Occupied cells with at least one empty 6-neighbor (outside counts empty),
// uniformly subsampled to max_points, unit amplitudes, at voxel centers.
inline ScattererSet scatterers_from_occupancy(const VoxelGrid& occ, int max_points,
                                              uint64_t seed) {
    std::vector<std::array<int, 3>> surface;
    auto occupied = [&](int x, int y, int z) {
        if (x < 0 || y < 0 || z < 0 || x >= occ.nx || y >= occ.ny || z >= occ.nz) return false;
        return occ.at(x, y, z) >= 0.5;
    };
    for (int z = 0; z < occ.nz; ++z)
        for (int y = 0; y < occ.ny; ++y)
            for (int x = 0; x < occ.nx; ++x) {
                if (!occupied(x, y, z)) continue;
                if (!occupied(x - 1, y, z) || !occupied(x + 1, y, z) || !occupied(x, y - 1, z) ||
                    !occupied(x, y + 1, z) || !occupied(x, y, z - 1) || !occupied(x, y, z + 1))
                    surface.push_back({x, y, z});
            }
    if (surface.empty()) throw EmptySceneError("scatterers_from_occupancy: empty occupancy");

    if (max_points > 0 && int(surface.size()) > max_points) {
        Rng rng(derive_seed(seed, 0x73636174ULL)); // "scat"
        for (int i = 0; i < max_points; ++i) {
            const size_t j = i + rng.uniform_int(surface.size() - i);
            std::swap(surface[i], surface[j]);
        }
        surface.resize(max_points);
    }

    ScattererSet s;
    s.points.reserve(surface.size());
    s.amplitudes.assign(surface.size(), 1.0);
    for (const auto& c : surface) s.points.push_back(occ.cell_center(c[0], c[1], c[2]));
    return s;
}

constexpr double kMaskDensityGain = 1e3; // per meter; saturates any occupied ray

// Binary silhouettes of the occupancy from every view.
inline std::vector<Image> render_gt_masks(const VoxelGrid& occ, const ViewSet& views) {
    for (double v : occ.values)
        if (v != 0.0 && v != 1.0)
            throw InvalidDataError("render_gt_masks: occupancy is not binary");
    VoxelGrid sigma = occ;
    for (double& v : sigma.values) v *= kMaskDensityGain;
    const int n_samples = render::auto_sample_count(occ);
    std::vector<Image> masks;
    masks.reserve(views.size());
    for (const auto& cam : views.cameras) {
        Image m = render::render(sigma, cam, n_samples);
        for (double& p : m.pixels) p = p >= 0.5 ? 1.0 : 0.0;
        masks.push_back(std::move(m));
    }
    return masks;
}

struct SampleMeta {
    VehicleKind kind = VehicleKind::Sedan;
    AffineParams aug;
    std::vector<int> aspects;
    double snr_db = 0.0;
    uint64_t seed = 0;
};

struct TrainSample {
    VoxelGrid sar;          // normalized sparse-aspect radar volume
    VoxelGrid gt_occupancy; // binary
    std::vector<Image> gt_masks;
    SampleMeta meta;
};

struct SceneParams {
    int nx = 32, ny = 32, nz = 64;
    double spacing = 0.1;
};

// Full sample assembly: augment the model, extract scatterers, image the
// chosen sparse aspects, and render the masks from the same occupancy.
inline TrainSample build_sample(VehicleKind kind, const AffineParams& aug, int n_aspects,
                                double snr_db, const ViewSet& views,
                                const imaging::RadarParams& radar, const SceneParams& scene,
                                uint64_t seed, int max_scatterers = 512) {
    TrainSample sample;
    sample.meta.kind = kind;
    sample.meta.aug = aug;
    sample.meta.snr_db = snr_db;
    sample.meta.seed = seed;

    const VoxelGrid base = make_vehicle(kind, scene.nx, scene.ny, scene.nz, scene.spacing);
    VoxelGrid occ = voxel::affine_transform(base, aug);
    for (double& v : occ.values) v = v >= 0.5 ? 1.0 : 0.0; // re-binarize after resampling
    sample.gt_occupancy = std::move(occ);

    const ScattererSet scats =
        scatterers_from_occupancy(sample.gt_occupancy, max_scatterers, derive_seed(seed, 1));
    sample.meta.aspects =
        imaging::choose_sparse_aspects(radar.wheel_aspects, n_aspects, derive_seed(seed, 2));

    std::vector<SubAspectImage> images;
    images.reserve(sample.meta.aspects.size());
    for (size_t i = 0; i < sample.meta.aspects.size(); ++i) {
        const AspectSpec spec = imaging::make_aspect(radar, sample.meta.aspects[i]);
        PhaseHistory ph = imaging::simulate_phase_history(scats, spec);
        ph = imaging::add_noise(ph, snr_db, derive_seed(seed, 100 + i));
        const KSpaceCube cube =
            imaging::form_kspace_grid(ph, scene.nx, scene.ny, scene.nz, scene.spacing);
        images.push_back(imaging::subaspect_image(cube));
    }
    sample.sar = imaging::integrate_aspects(images, imaging::IntegrationMode::Sum);
    voxel::quantize_f32(sample.sar); // in-memory values match the .vxl round-trip

    sample.gt_masks = render_gt_masks(sample.gt_occupancy, views);
    return sample;
}

// ---------------------------------------------------------------------------
// Disk layout. Writes go to a temporary directory that is renamed into
// place, so readers never observe a partial sample.

namespace detail {

inline void write_meta(const SampleMeta& meta, const std::string& path) {
    std::unique_ptr<std::FILE, img::FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open for writing: " + path);
    std::fprintf(f.get(), "kind=%s\n", to_string(meta.kind));
    std::fprintf(f.get(), "scale=%.17g\n", meta.aug.scale);
    std::fprintf(f.get(), "rot_deg=%.17g\n", meta.aug.rotation_z * 180.0 / kPi);
    std::fprintf(f.get(), "tx=%.17g\n", meta.aug.translation[0]);
    std::fprintf(f.get(), "ty=%.17g\n", meta.aug.translation[1]);
    std::fprintf(f.get(), "tz=%.17g\n", meta.aug.translation[2]);
    std::string aspects;
    for (size_t i = 0; i < meta.aspects.size(); ++i) {
        if (i) aspects += ',';
        aspects += std::to_string(meta.aspects[i]);
    }
    std::fprintf(f.get(), "aspects=%s\n", aspects.c_str());
    std::fprintf(f.get(), "snr_db=%.17g\n", meta.snr_db);
    std::fprintf(f.get(), "seed=%llu\n", (unsigned long long)meta.seed);
}

inline std::map<std::string, std::string> read_kv(const std::string& path) {
    std::unique_ptr<std::FILE, img::FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open: " + path);
    std::map<std::string, std::string> kv;
    char line[4096];
    while (std::fgets(line, sizeof line, f.get())) {
        std::string s(line);
        while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw FormatError("bad key=value line in " + path);
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return kv;
}

} // namespace detail

inline void save_sample(const TrainSample& sample, const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path final_dir(dir);
    const fs::path tmp_dir(dir + ".tmp");
    std::error_code ec;
    fs::remove_all(tmp_dir, ec);
    fs::create_directories(tmp_dir);
    voxel::save_vxl(sample.sar, (tmp_dir / "sar.vxl").string());
    voxel::save_vxl(sample.gt_occupancy, (tmp_dir / "gt.vxl").string());
    for (size_t k = 0; k < sample.gt_masks.size(); ++k)
        img::save_pgm(sample.gt_masks[k], (tmp_dir / ("mask_" + std::to_string(k) + ".pgm")).string());
    detail::write_meta(sample.meta, (tmp_dir / "meta.txt").string());
    fs::remove_all(final_dir, ec);
    fs::rename(tmp_dir, final_dir);
}

inline TrainSample load_sample(const std::string& dir, int view_count) {
    namespace fs = std::filesystem;
    TrainSample sample;
    sample.sar = voxel::load_vxl((fs::path(dir) / "sar.vxl").string());
    sample.gt_occupancy = voxel::load_vxl((fs::path(dir) / "gt.vxl").string());
    if (!sample.sar.same_dims(sample.gt_occupancy))
        throw FormatError("sample " + dir + ": sar/gt dims mismatch");
    for (int k = 0; k < view_count; ++k) {
        Image m = img::load_pgm((fs::path(dir) / ("mask_" + std::to_string(k) + ".pgm")).string());
        for (double& p : m.pixels) {
            if (p != 0.0 && p != 1.0) throw FormatError("sample " + dir + ": mask is not binary");
        }
        sample.gt_masks.push_back(std::move(m));
    }
    const auto kv = detail::read_kv((fs::path(dir) / "meta.txt").string());
    auto need = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError("sample " + dir + ": meta.txt missing key " + key);
        return it->second;
    };
    sample.meta.kind = vehicle_kind_from(need("kind"));
    sample.meta.aug.scale = std::stod(need("scale"));
    sample.meta.aug.rotation_z = std::stod(need("rot_deg")) * kPi / 180.0;
    sample.meta.aug.translation = {std::stod(need("tx")), std::stod(need("ty")),
                                   std::stod(need("tz"))};
    const std::string aspects = need("aspects");
    size_t pos = 0;
    while (pos < aspects.size()) {
        size_t comma = aspects.find(',', pos);
        if (comma == std::string::npos) comma = aspects.size();
        sample.meta.aspects.push_back(std::stoi(aspects.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    sample.meta.snr_db = std::stod(need("snr_db"));
    sample.meta.seed = std::stoull(need("seed"));
    return sample;
}

} // namespace data
} // namespace cmar
