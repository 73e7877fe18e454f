// cmar: dataset simulation, training, inference, rendering, evaluation and
// latent interpolation for the radar-volume reconstruction pipeline.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "cmar/commands.hpp"

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string profile = "desk";
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
};

cmar::RunConfig make_config(const GlobalArgs& g) {
    cmar::RunConfig cfg = cmar::config::defaults(cmar::config::profile_from(g.profile));
    if (!g.config_path.empty()) cmar::config::load_file(cfg, g.config_path);
    if (g.seed_set) cfg.seed = g.seed;
    cmar::config::validate(cfg);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-modal sparse radar volume reconstruction"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "config file (key = value sections)");
    app.add_option("--profile", g.profile, "parameter profile: desk|paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    auto* seed_opt = app.add_option("--seed", g.seed, "global random seed");
    app.add_option("--threads", g.threads, "worker thread cap (0 = library default)");

    auto* sim = app.add_subcommand("simulate", "generate a training dataset");
    std::string sim_out;
    int sim_count = -1;
    sim->add_option("--out", sim_out, "output dataset directory")->required();
    sim->add_option("-n,--samples-per-kind", sim_count, "override data.samples_per_kind");
    bool sim_no_aug = false;
    sim->add_flag("--no-aug", sim_no_aug, "disable geometric augmentation");

    auto* train = app.add_subcommand("train", "train a model on a dataset");
    std::string train_data, train_out, train_resume;
    int train_epochs = -1;
    long long train_steps = -1;
    bool no_prp = false, train_no_aug = false;
    train->add_option("--data", train_data, "dataset directory (with manifest.txt)")->required();
    train->add_option("--out", train_out, "output model path (.cmn)")->required();
    train->add_option("--epochs", train_epochs, "override train.epochs");
    train->add_option("--steps", train_steps, "cap the total number of steps");
    train->add_option("--resume", train_resume, "checkpoint (.cmn) to continue from");
    train->add_flag("--no-prp", no_prp, "ablation: identity bottleneck");
    train->add_flag("--no-aug", train_no_aug, "ablation marker (dataset-level flag)");

    auto* infer = app.add_subcommand("infer", "reconstruct a volume with a trained model");
    std::string infer_model, infer_in, infer_out;
    infer->add_option("--model", infer_model, "model path (.cmn)")->required();
    infer->add_option("--in", infer_in, "input volume (.vxl)")->required();
    infer->add_option("--out", infer_out, "output volume (.vxl)")->required();

    auto* rend = app.add_subcommand("render", "render one view of a volume to PGM");
    std::string rend_in, rend_out;
    cmar::cli::RenderView view;
    rend->add_option("--in", rend_in, "input volume (.vxl)")->required();
    rend->add_option("--out", rend_out, "output image (.pgm)")->required();
    rend->add_option("--az", view.azimuth_deg, "azimuth, degrees");
    rend->add_option("--el", view.elevation_deg, "elevation, degrees");
    rend->add_option("--dist", view.distance_m, "camera distance, meters");
    rend->add_option("--size", view.image_size, "image size, pixels");
    rend->add_option("--gain", view.gain, "density gain before compositing");

    auto* eval = app.add_subcommand("eval", "full-reference metrics against ground truth");
    std::string eval_pred, eval_gt, eval_out;
    eval->add_option("--pred", eval_pred, "predicted volume (.vxl)")->required();
    eval->add_option("--gt", eval_gt, "ground-truth volume (.vxl)")->required();
    eval->add_option("--out", eval_out, "metrics CSV to append to")->required();

    auto* interp = app.add_subcommand("interp", "latent-space interpolation between two inputs");
    std::string it_model, it_a, it_b, it_out;
    int it_steps = 0;
    interp->add_option("--model", it_model, "model path (.cmn)")->required();
    interp->add_option("--a", it_a, "first input volume (.vxl)")->required();
    interp->add_option("--b", it_b, "second input volume (.vxl)")->required();
    interp->add_option("--steps", it_steps, "number of interpolation steps (>= 2)")->required();
    interp->add_option("--out", it_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? cmar::cli::kExitOk : cmar::cli::kExitUsage;
    }

    try {
        g.seed_set = seed_opt->count() > 0;
        cmar::set_thread_count(g.threads);

        if (sim->parsed()) {
            cmar::RunConfig cfg = make_config(g);
            if (sim_count >= 0) cfg.samples_per_kind = sim_count;
            if (sim_no_aug) cfg.augment = false;
            cmar::config::validate(cfg);
            const auto ids = cmar::cli::cmd_simulate(cfg, sim_out);
            std::printf("simulate: %zu samples -> %s\n", ids.size(), sim_out.c_str());
        } else if (train->parsed()) {
            cmar::RunConfig cfg = make_config(g);
            if (train_epochs >= 0) cfg.epochs = train_epochs;
            if (train_steps >= 0) cfg.max_steps = train_steps;
            if (no_prp) cfg.prp_enabled = false;
            if (train_no_aug) cfg.augment = false;
            cmar::config::validate(cfg);
            cmar::cli::TrainOptions opt;
            opt.resume_path = train_resume;
            const auto r = cmar::cli::cmd_train(cfg, train_data, train_out, opt);
            std::printf("train: %lld steps, first loss %.6g, last loss %.6g, best %.6g\n",
                        (long long)r.steps_run, r.first_loss, r.last_loss, r.best_loss);
            std::printf("train: model %s\n", r.model_path.c_str());
        } else if (infer->parsed()) {
            cmar::cli::cmd_infer(infer_model, infer_in, infer_out);
            std::printf("infer: %s -> %s\n", infer_in.c_str(), infer_out.c_str());
        } else if (rend->parsed()) {
            cmar::cli::cmd_render(rend_in, view, rend_out);
            std::printf("render: %s -> %s\n", rend_in.c_str(), rend_out.c_str());
        } else if (eval->parsed()) {
            const auto r = cmar::cli::cmd_eval(eval_pred, eval_gt, eval_out);
            std::printf("eval: psnr %.4f ssim %.6f iou %.6f ce %.6g\n", r.psnr, r.ssim, r.iou,
                        r.ce);
        } else if (interp->parsed()) {
            cmar::cli::cmd_interp(it_model, it_a, it_b, it_steps, it_out);
            std::printf("interp: %d steps -> %s\n", it_steps, it_out.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return cmar::cli::exit_code_for(e);
    }
    return cmar::cli::kExitOk;
}
