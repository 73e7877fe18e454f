#pragma once

// Run configuration: profile defaults, the plain-text "key = value" config
// format with [section] headers and # comments, strict validation (unknown
// keys are rejected with their line number), and derived helpers.

#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "cmar/cmarnet.hpp"
#include "cmar/core.hpp"
#include "cmar/dataset.hpp"
#include "cmar/imaging.hpp"
#include "cmar/renderer.hpp"

namespace cmar {

enum class Profile { Desk, Paper };

struct RunConfig {
    // [scene]
    data::SceneParams scene;

    // [radar]
    double freq_center_hz = 9.6e9;
    double bandwidth_hz = 1.049e9;
    int freq_samples = 64;
    int azimuth_samples = 24;
    int wheel_aspects = 72;
    double aspect_extent_deg = 5.0;
    double elevation_min_deg = 43.0;
    double elevation_max_deg = 47.0;
    int elevation_count = 24;

    // [render]
    int views = 8;
    int image_size = 64;
    double distance_m = 7.0;
    double elevation_deg = 30.0;
    int n_samples = 0; // 0 = two samples per cell of the grid diagonal
    double opacity_gain = 5.0;

    // [net]
    int base_channels = 8;
    int latent_dim = 0; // 0 = derived from the bottleneck
    int prp_hidden = 0;
    int num_stages = 4;
    bool prp_enabled = true;

    // [train]
    double gamma = 0.7;
    double lr_start = 1e-4;
    double lr_end = 5e-5;
    double beta1 = 0.5;
    double beta2 = 0.9;
    int epochs = 500;
    long long max_steps = 0; // 0 = epochs * dataset size
    uint64_t seed = 1;

    // [data]
    int samples_per_kind = 8;
    std::vector<VehicleKind> kinds{VehicleKind::Sedan, VehicleKind::Suv, VehicleKind::Pickup};
    int n_aspects = 8;
    double snr_db = 30.0;
    int max_scatterers = 512;
    double scale_min = 0.8;
    double scale_max = 1.2;
    double translate_frac = 0.1;
    bool augment = true;
};

namespace config {

inline RunConfig defaults(Profile profile) {
    RunConfig c;
    if (profile == Profile::Paper) {
        c.scene = {64, 64, 128, 0.05};
        c.bandwidth_hz = 2.098e9;
        c.freq_samples = 128;
        c.elevation_min_deg = 44.25;
        c.elevation_max_deg = 46.0;
        c.elevation_count = 8;
        c.image_size = 256;
        c.base_channels = 16;
    }
    return c;
}

inline Profile profile_from(const std::string& s) {
    if (s == "desk") return Profile::Desk;
    if (s == "paper") return Profile::Paper;
    throw UsageError("unknown profile: " + s + " (expected desk|paper)");
}

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& v, const std::string& key, int line) {
    try {
        size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(line) + ": bad numeric value for " +
                          key + ": '" + v + "'");
    }
}

inline long long parse_int(const std::string& v, const std::string& key, int line) {
    try {
        size_t used = 0;
        const long long d = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(line) + ": bad integer value for " +
                          key + ": '" + v + "'");
    }
}

inline bool parse_bool(const std::string& v, const std::string& key, int line) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config line " + std::to_string(line) + ": bad boolean value for " + key +
                      ": '" + v + "' (expected true|false)");
}

} // namespace detail

inline void validate(const RunConfig& c) {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (c.scene.nx < 4 || c.scene.ny < 4 || c.scene.nz < 4) fail("scene dims must be >= 4");
    if (!(c.scene.spacing > 0.0)) fail("scene.spacing must be positive");
    if (!(c.freq_center_hz > 0.0)) fail("radar.freq_center_hz must be positive");
    if (!(c.bandwidth_hz > 0.0) || c.bandwidth_hz >= 2.0 * c.freq_center_hz)
        fail("radar.bandwidth_hz must be in (0, 2*freq_center)");
    if (c.freq_samples < 2) fail("radar.freq_samples must be >= 2");
    if (c.azimuth_samples < 2) fail("radar.azimuth_samples must be >= 2");
    if (c.wheel_aspects < 1) fail("radar.wheel_aspects must be >= 1");
    if (!(c.aspect_extent_deg > 0.0)) fail("radar.aspect_extent_deg must be positive");
    if (c.elevation_count < 1) fail("radar.elevation_count must be >= 1");
    if (c.elevation_min_deg > c.elevation_max_deg) fail("radar elevation range is inverted");
    if (c.views < 1) fail("render.views must be >= 1");
    if (c.image_size < 1) fail("render.image_size must be >= 1");
    if (!(c.distance_m > 0.0)) fail("render.distance_m must be positive");
    if (c.n_samples < 0) fail("render.n_samples must be >= 0");
    if (!(c.opacity_gain > 0.0)) fail("render.opacity_gain must be positive");
    if (c.base_channels < 1) fail("net.base_channels must be >= 1");
    if (c.num_stages < 1 || c.num_stages > 6) fail("net.num_stages must be in [1,6]");
    if (c.latent_dim < 0 || c.prp_hidden < 0) fail("net latent/hidden must be >= 0");
    if (!(c.gamma > 0.0)) fail("train.gamma must be positive");
    if (!(c.lr_start > 0.0) || !(c.lr_end > 0.0)) fail("train learning rates must be positive");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) fail("train.beta1 must be in [0,1)");
    if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) fail("train.beta2 must be in [0,1)");
    if (c.epochs < 0) fail("train.epochs must be >= 0");
    if (c.max_steps < 0) fail("train.max_steps must be >= 0");
    if (c.samples_per_kind < 0) fail("data.samples_per_kind must be >= 0");
    if (c.kinds.empty()) fail("data.kinds must list at least one vehicle kind");
    if (c.n_aspects < 1 || c.n_aspects > c.wheel_aspects)
        fail("data.n_aspects must be in [1, wheel_aspects]");
    if (c.max_scatterers < 1) fail("data.max_scatterers must be >= 1");
    if (!(c.scale_min >= 0.5 && c.scale_max <= 2.0 && c.scale_min <= c.scale_max))
        fail("data scale range must satisfy 0.5 <= min <= max <= 2.0");
    if (!(c.translate_frac >= 0.0 && c.translate_frac <= 0.5))
        fail("data.translate_frac must be in [0, 0.5]");
    const int div = 1 << c.num_stages;
    if (c.scene.nx % div || c.scene.ny % div || c.scene.nz % div)
        fail("scene dims must be divisible by " + std::to_string(div) + " (net.num_stages = " +
             std::to_string(c.num_stages) + ")");
}

// Applies "key = value" assignments from a config file on top of `c`.
inline void load_file(RunConfig& c, const std::string& path) {
    std::unique_ptr<std::FILE, img::FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open config: " + path);

    std::string section;
    char buf[4096];
    int line_no = 0;
    while (std::fgets(buf, sizeof buf, f.get())) {
        ++line_no;
        std::string line(buf);
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
            section = line.substr(1, line.size() - 2);
            static const std::set<std::string> known{"scene", "radar", "render", "net",
                                                     "train", "data"};
            if (!known.count(section))
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        const std::string full = section + "." + key;
        const int ln = line_no;

        auto d = [&] { return detail::parse_double(value, full, ln); };
        auto i = [&] { return int(detail::parse_int(value, full, ln)); };
        auto b = [&] { return detail::parse_bool(value, full, ln); };

        if (full == "scene.nx") c.scene.nx = i();
        else if (full == "scene.ny") c.scene.ny = i();
        else if (full == "scene.nz") c.scene.nz = i();
        else if (full == "scene.spacing") c.scene.spacing = d();
        else if (full == "radar.freq_center_hz") c.freq_center_hz = d();
        else if (full == "radar.bandwidth_hz") c.bandwidth_hz = d();
        else if (full == "radar.freq_samples") c.freq_samples = i();
        else if (full == "radar.azimuth_samples") c.azimuth_samples = i();
        else if (full == "radar.wheel_aspects") c.wheel_aspects = i();
        else if (full == "radar.aspect_extent_deg") c.aspect_extent_deg = d();
        else if (full == "radar.elevation_min_deg") c.elevation_min_deg = d();
        else if (full == "radar.elevation_max_deg") c.elevation_max_deg = d();
        else if (full == "radar.elevation_count") c.elevation_count = i();
        else if (full == "render.views") c.views = i();
        else if (full == "render.image_size") c.image_size = i();
        else if (full == "render.distance_m") c.distance_m = d();
        else if (full == "render.elevation_deg") c.elevation_deg = d();
        else if (full == "render.n_samples") c.n_samples = i();
        else if (full == "render.opacity_gain") c.opacity_gain = d();
        else if (full == "net.base_channels") c.base_channels = i();
        else if (full == "net.latent_dim") c.latent_dim = i();
        else if (full == "net.prp_hidden") c.prp_hidden = i();
        else if (full == "net.num_stages") c.num_stages = i();
        else if (full == "net.prp_enabled") c.prp_enabled = b();
        else if (full == "train.gamma") c.gamma = d();
        else if (full == "train.lr_start") c.lr_start = d();
        else if (full == "train.lr_end") c.lr_end = d();
        else if (full == "train.beta1") c.beta1 = d();
        else if (full == "train.beta2") c.beta2 = d();
        else if (full == "train.epochs") c.epochs = i();
        else if (full == "train.max_steps") c.max_steps = detail::parse_int(value, full, ln);
        else if (full == "train.seed") c.seed = uint64_t(detail::parse_int(value, full, ln));
        else if (full == "data.samples_per_kind") c.samples_per_kind = i();
        else if (full == "data.kinds") {
            c.kinds.clear();
            size_t pos = 0;
            while (pos < value.size()) {
                size_t comma = value.find(',', pos);
                if (comma == std::string::npos) comma = value.size();
                const std::string kind = detail::trim(value.substr(pos, comma - pos));
                if (!kind.empty()) {
                    try {
                        c.kinds.push_back(vehicle_kind_from(kind));
                    } catch (const ConfigError&) {
                        throw ConfigError("config line " + std::to_string(ln) +
                                          ": unknown vehicle kind '" + kind + "'");
                    }
                }
                pos = comma + 1;
            }
        } else if (full == "data.n_aspects") c.n_aspects = i();
        else if (full == "data.snr_db") c.snr_db = d();
        else if (full == "data.max_scatterers") c.max_scatterers = i();
        else if (full == "data.scale_min") c.scale_min = d();
        else if (full == "data.scale_max") c.scale_max = d();
        else if (full == "data.translate_frac") c.translate_frac = d();
        else if (full == "data.augment") c.augment = b();
        else
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" +
                              full + "'");
    }
    validate(c);
}

// ---------------------------------------------------------------------------
// Derived objects.

inline imaging::RadarParams radar_params(const RunConfig& c) {
    imaging::RadarParams r;
    r.freq_center = c.freq_center_hz;
    r.bandwidth = c.bandwidth_hz;
    r.freq_samples = c.freq_samples;
    r.azimuth_samples = c.azimuth_samples;
    r.wheel_aspects = c.wheel_aspects;
    r.aspect_extent = c.aspect_extent_deg * kPi / 180.0;
    r.elevations = imaging::elevation_baselines(c.elevation_min_deg * kPi / 180.0,
                                                c.elevation_max_deg * kPi / 180.0,
                                                c.elevation_count);
    return r;
}

inline double scene_diagonal(const RunConfig& c) {
    const double x = c.scene.nx * c.scene.spacing;
    const double y = c.scene.ny * c.scene.spacing;
    const double z = c.scene.nz * c.scene.spacing;
    return std::sqrt(x * x + y * y + z * z);
}

inline ViewSet view_set(const RunConfig& c) {
    return render::make_view_set(c.views, c.distance_m, c.elevation_deg * kPi / 180.0,
                                 c.image_size, scene_diagonal(c));
}

inline int sample_count(const RunConfig& c) {
    if (c.n_samples > 0) return c.n_samples;
    const double diag = std::sqrt(double(c.scene.nx) * c.scene.nx +
                                  double(c.scene.ny) * c.scene.ny +
                                  double(c.scene.nz) * c.scene.nz);
    return std::max(2, 2 * int(std::ceil(diag)));
}

inline NetConfig net_config(const RunConfig& c) {
    NetConfig n;
    n.nx = c.scene.nx;
    n.ny = c.scene.ny;
    n.nz = c.scene.nz;
    n.base_channels = c.base_channels;
    n.latent_dim = c.latent_dim;
    n.prp_hidden = c.prp_hidden;
    n.num_stages = c.num_stages;
    n.prp_enabled = c.prp_enabled;
    n.opacity_gain = c.opacity_gain;
    return n;
}

} // namespace config
} // namespace cmar
