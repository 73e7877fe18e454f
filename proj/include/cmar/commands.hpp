#pragma once

// Command implementations behind the CLI subcommands. Kept separate from the
// argv layer so tests can drive the exact same code paths.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cmar/cmarnet.hpp"
#include "cmar/config.hpp"
#include "cmar/core.hpp"
#include "cmar/dataset.hpp"
#include "cmar/loss_metrics.hpp"
#include "cmar/renderer.hpp"
#include "cmar/voxel.hpp"

namespace cmar {
namespace cli {

// Exit codes, one per error family.
enum ExitCode {
    kExitOk = 0,
    kExitFailure = 1,
    kExitUsage = 2,
    kExitConfig = 3,
    kExitIo = 4,
    kExitShape = 5,
    kExitTrainingFault = 6,
    kExitData = 7,
};

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e)) return kExitUsage;
    if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
    if (dynamic_cast<const IoError*>(&e)) return kExitIo;
    if (dynamic_cast<const ShapeError*>(&e)) return kExitShape;
    if (dynamic_cast<const TrainingFault*>(&e)) return kExitTrainingFault;
    if (dynamic_cast<const InvalidDataError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
        dynamic_cast<const EmptySceneError*>(&e) || dynamic_cast<const OutOfBandError*>(&e))
        return kExitData;
    return kExitFailure;
}

// ---------------------------------------------------------------------------
// simulate

inline AffineParams draw_augmentation(const RunConfig& cfg, uint64_t sample_seed) {
    AffineParams aug;
    if (!cfg.augment) return aug;
    Rng rng(derive_seed(sample_seed, 0x617567ULL)); // "aug"
    aug.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    aug.rotation_z = rng.uniform(0.0, 2.0 * kPi);
    aug.translation = {
        rng.uniform(-cfg.translate_frac, cfg.translate_frac) * cfg.scene.nx * cfg.scene.spacing,
        rng.uniform(-cfg.translate_frac, cfg.translate_frac) * cfg.scene.ny * cfg.scene.spacing,
        rng.uniform(-cfg.translate_frac, cfg.translate_frac) * cfg.scene.nz * cfg.scene.spacing};
    return aug;
}

// Writes samples_per_kind samples for each configured kind plus a manifest
// of ids. Fully determined by (config, seed).
inline std::vector<std::string> cmd_simulate(const RunConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw IoError("cannot create output directory: " + out_dir);

    const ViewSet views = config::view_set(cfg);
    const imaging::RadarParams radar = config::radar_params(cfg);

    std::vector<std::string> ids;
    int global_index = 0;
    for (const VehicleKind kind : cfg.kinds) {
        for (int i = 0; i < cfg.samples_per_kind; ++i, ++global_index) {
            char id[64];
            std::snprintf(id, sizeof id, "%s_%03d", to_string(kind), i);
            const uint64_t sample_seed = derive_seed(cfg.seed, uint64_t(global_index));
            const AffineParams aug = draw_augmentation(cfg, sample_seed);
            const data::TrainSample sample =
                data::build_sample(kind, aug, cfg.n_aspects, cfg.snr_db, views, radar, cfg.scene,
                                   sample_seed, cfg.max_scatterers);
            data::save_sample(sample, (fs::path(out_dir) / id).string());
            ids.push_back(id);
            CMAR_LOG_INFO("simulate: wrote %s", id);
        }
    }

    const std::string manifest = (fs::path(out_dir) / "manifest.txt").string();
    std::unique_ptr<std::FILE, img::FileCloser> f(std::fopen(manifest.c_str(), "wb"));
    if (!f) throw IoError("cannot open for writing: " + manifest);
    std::fprintf(f.get(), "# id kind seed\n");
    for (size_t k = 0; k < ids.size(); ++k) {
        const uint64_t s = derive_seed(cfg.seed, uint64_t(k));
        const std::string kind = ids[k].substr(0, ids[k].find('_'));
        std::fprintf(f.get(), "%s %s %llu\n", ids[k].c_str(), kind.c_str(),
                     (unsigned long long)s);
    }
    return ids;
}

inline std::vector<std::string> read_manifest(const std::string& data_dir) {
    namespace fs = std::filesystem;
    const std::string manifest = (fs::path(data_dir) / "manifest.txt").string();
    std::unique_ptr<std::FILE, img::FileCloser> f(std::fopen(manifest.c_str(), "rb"));
    if (!f) throw IoError("cannot open dataset manifest: " + manifest);
    std::vector<std::string> ids;
    char buf[512];
    while (std::fgets(buf, sizeof buf, f.get())) {
        std::string line(buf);
        while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        ids.push_back(line.substr(0, line.find(' ')));
    }
    return ids;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string resume_path; // checkpoint to continue from
};

struct TrainResult {
    double first_loss = 0.0;
    double last_loss = 0.0;
    double best_loss = 0.0;
    int64_t steps_run = 0;
    std::string model_path, best_path, checkpoint_path, loss_log_path;
};

inline std::string replace_extension(const std::string& path, const std::string& suffix) {
    namespace fs = std::filesystem;
    fs::path p(path);
    p.replace_extension();
    return p.string() + suffix;
}

// Batch-1 training over the dataset in manifest order, linear lr ramp,
// final/best/checkpoint outputs and a (step, lr, loss) CSV log.
inline TrainResult cmd_train(const RunConfig& cfg, const std::string& data_dir,
                             const std::string& out_model, const TrainOptions& opt = {}) {
    namespace fs = std::filesystem;
    const std::vector<std::string> ids = read_manifest(data_dir);
    if (ids.empty()) throw ConfigError("train: dataset manifest lists no samples");

    std::vector<data::TrainSample> samples;
    samples.reserve(ids.size());
    for (const auto& id : ids)
        samples.push_back(data::load_sample((fs::path(data_dir) / id).string(), cfg.views));

    const ViewSet views = config::view_set(cfg);
    const int n_render = config::sample_count(cfg);

    ParameterSet params;
    nn::AdamState state;
    if (!opt.resume_path.empty()) {
        net::Checkpoint ck = net::load_checkpoint(opt.resume_path);
        params = std::move(ck.params);
        state = std::move(ck.state);
    } else {
        params = net::build(config::net_config(cfg), cfg.seed);
        nn::adam_init(state, params.tensors);
    }
    state.beta1 = cfg.beta1;
    state.beta2 = cfg.beta2;

    const int64_t total_steps =
        cfg.max_steps > 0 ? cfg.max_steps : int64_t(cfg.epochs) * int64_t(samples.size());

    TrainResult result;
    result.model_path = out_model;
    result.best_path = replace_extension(out_model, "_best.cmn");
    result.checkpoint_path = replace_extension(out_model, "_ckpt.cmn");
    result.loss_log_path = replace_extension(out_model, "_loss.csv");

    std::unique_ptr<std::FILE, img::FileCloser> log(
        std::fopen(result.loss_log_path.c_str(), opt.resume_path.empty() ? "wb" : "ab"));
    if (!log) throw IoError("cannot open for writing: " + result.loss_log_path);
    if (opt.resume_path.empty()) std::fprintf(log.get(), "step,lr,loss\n");

    ParameterSet best_params = params;
    result.best_loss = std::numeric_limits<double>::infinity();

    while (state.t < total_steps) {
        const data::TrainSample& sample = samples[size_t(state.t % int64_t(samples.size()))];
        const double lr = nn::lr_schedule(state.t, total_steps, cfg.lr_start, cfg.lr_end);
        const double loss = net::train_step(params, state, sample.sar, sample.gt_masks, views,
                                            cfg.gamma, lr, n_render);
        std::fprintf(log.get(), "%lld,%.17g,%.17g\n", (long long)state.t, lr, loss);
        if (result.steps_run == 0) result.first_loss = loss;
        if (loss < result.best_loss) {
            result.best_loss = loss;
            best_params = params;
        }
        result.last_loss = loss;
        ++result.steps_run;
        if (state.t % 50 == 0)
            CMAR_LOG_INFO("train: step %lld/%lld loss %.6f", (long long)state.t,
                          (long long)total_steps, loss);
    }

    net::save_model(params, out_model);
    net::save_model(best_params, result.best_path);
    net::save_checkpoint(params, state, result.checkpoint_path);
    return result;
}

// ---------------------------------------------------------------------------
// infer / render / eval / interp

inline void cmd_infer(const std::string& model_path, const std::string& in_vxl,
                      const std::string& out_vxl) {
    const ParameterSet params = net::load_model(model_path);
    const VoxelGrid input = voxel::load_vxl(in_vxl);
    const net::ForwardResult fwd = net::forward(params, input);
    voxel::save_vxl(fwd.density, out_vxl);
}

struct RenderView {
    double azimuth_deg = 0.0;
    double elevation_deg = 30.0;
    double distance_m = 7.0;
    int image_size = 64;
    double gain = 1.0;
};

inline void cmd_render(const std::string& in_vxl, const RenderView& view,
                       const std::string& out_pgm) {
    const VoxelGrid grid = voxel::load_vxl(in_vxl);
    VoxelGrid sigma = grid;
    if (view.gain != 1.0)
        for (double& v : sigma.values) v *= view.gain;

    const auto center = grid.grid_center();
    const double az = view.azimuth_deg * kPi / 180.0;
    const double el = view.elevation_deg * kPi / 180.0;
    const double ext_x = grid.nx * grid.spacing, ext_y = grid.ny * grid.spacing,
                 ext_z = grid.nz * grid.spacing;
    const double diag = std::sqrt(ext_x * ext_x + ext_y * ext_y + ext_z * ext_z);

    Camera cam;
    cam.position = {center[0] + view.distance_m * std::cos(el) * std::cos(az),
                    center[1] + view.distance_m * std::cos(el) * std::sin(az),
                    center[2] + view.distance_m * std::sin(el)};
    cam.look_at = center;
    cam.up = {0, 0, 1};
    cam.vertical_fov = 2.0 * std::atan(1.1 * 0.5 * diag / view.distance_m);
    cam.width = view.image_size;
    cam.height = view.image_size;

    const Image image = render::render(sigma, cam, render::auto_sample_count(grid));
    img::save_pgm(image, out_pgm);
}

inline MetricReport cmd_eval(const std::string& pred_vxl, const std::string& gt_vxl,
                             const std::string& out_csv) {
    const VoxelGrid pred = voxel::load_vxl(pred_vxl);
    const VoxelGrid gt = voxel::load_vxl(gt_vxl);
    const MetricReport report = metrics::evaluate_all(pred, gt);
    const std::string id = std::filesystem::path(pred_vxl).stem().string();
    metrics::append_csv_row(out_csv, id, -1, std::nan(""), report);
    return report;
}

// K evenly spaced latent blends between two inputs; each step writes the
// decoded volume and one rendered view.
inline void cmd_interp(const std::string& model_path, const std::string& a_vxl,
                       const std::string& b_vxl, int steps, const std::string& out_dir) {
    if (steps < 2) throw UsageError("interp: steps must be >= 2");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw IoError("cannot create output directory: " + out_dir);

    const ParameterSet params = net::load_model(model_path);
    const VoxelGrid a = voxel::load_vxl(a_vxl);
    const VoxelGrid b = voxel::load_vxl(b_vxl);
    for (int i = 0; i < steps; ++i) {
        const double alpha = double(i) / double(steps - 1);
        const VoxelGrid vol = net::interpolate(params, a, b, alpha);
        char name[64];
        std::snprintf(name, sizeof name, "interp_%03d", i);
        const std::string vxl_path = (fs::path(out_dir) / (std::string(name) + ".vxl")).string();
        voxel::save_vxl(vol, vxl_path);
        RenderView view;
        view.gain = params.config.opacity_gain;
        cmd_render(vxl_path, view, (fs::path(out_dir) / (std::string(name) + ".pgm")).string());
    }
}

} // namespace cli
} // namespace cmar
