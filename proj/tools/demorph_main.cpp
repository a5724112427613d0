#include <optional>
#include <string>

#include <CLI11.hpp>

#include "demorph/cli.hpp"
#include "demorph/tensor.hpp"

using demorph::cli::RunConfig;

namespace {

// Options land in optionals first so precedence is explicit:
// defaults < profile < config file < flags.
struct Overrides {
    std::optional<std::string> config_path, profile, mode, data_dir, checkpoint, report_dir;
    std::optional<uint64_t> seed;
    std::optional<int> epochs, n_ids, n_morphs, img_size, batch_size, checkpoint_every;
    std::optional<double> lr;
    bool force = false;
    bool resume = false;
};

void add_common(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--config", ov.config_path, "key=value config file");
    cmd->add_option("--profile", ov.profile, "built-in profile: smoke or standard");
    cmd->add_option("--seed", ov.seed, "master seed");
    cmd->add_option("--data-dir", ov.data_dir, "dataset directory");
    cmd->add_option("--checkpoint", ov.checkpoint, "checkpoint path");
    cmd->add_option("--report-dir", ov.report_dir, "report output directory");
    cmd->add_option("--mode", ov.mode, "inference mode: direct or iterative");
    cmd->add_option("--epochs", ov.epochs, "training epochs");
    cmd->add_option("--lr", ov.lr, "Adam learning rate");
    cmd->add_option("--n-ids", ov.n_ids, "number of synthetic identities");
    cmd->add_option("--n-morphs", ov.n_morphs, "number of morph pairs");
    cmd->add_option("--img-size", ov.img_size, "image extent (16, 32 or 64)");
    cmd->add_option("--batch-size", ov.batch_size, "training batch size");
    cmd->add_option("--checkpoint-every", ov.checkpoint_every, "checkpoint interval in epochs");
    cmd->add_flag("--force", ov.force, "overwrite non-empty output directories");
}

RunConfig resolve(const Overrides& ov) {
    RunConfig cfg;
    if (ov.profile) demorph::cli::apply_profile(cfg, *ov.profile);
    if (ov.config_path) demorph::cli::apply_config_file(cfg, *ov.config_path);
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.mode) cfg.mode = *ov.mode;
    if (ov.data_dir) cfg.data_dir = *ov.data_dir;
    if (ov.checkpoint) cfg.checkpoint = *ov.checkpoint;
    if (ov.report_dir) cfg.report_dir = *ov.report_dir;
    if (ov.epochs) cfg.epochs = *ov.epochs;
    if (ov.lr) cfg.lr = *ov.lr;
    if (ov.n_ids) cfg.n_ids = *ov.n_ids;
    if (ov.n_morphs) cfg.n_morphs = *ov.n_morphs;
    if (ov.img_size) cfg.img_size = *ov.img_size;
    if (ov.batch_size) cfg.batch_size = *ov.batch_size;
    if (ov.checkpoint_every) cfg.checkpoint_every = *ov.checkpoint_every;
    cfg.force = ov.force;
    cfg.resume = ov.resume;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reference-free face de-morphing on synthetic data"};
    app.require_subcommand(1);

    Overrides ov;
    std::string demorph_input;

    CLI::App* gen = app.add_subcommand("gen-data", "render identities, build morphs, write dataset");
    add_common(gen, ov);
    CLI::App* train = app.add_subcommand("train", "train the branched de-morpher");
    add_common(train, ov);
    train->add_flag("--resume", ov.resume, "continue from an existing checkpoint");
    CLI::App* dem = app.add_subcommand("demorph", "decompose one image into two outputs");
    add_common(dem, ov);
    dem->add_option("input", demorph_input, "input PGM image")->required();
    CLI::App* eval = app.add_subcommand("eval", "run the evaluation protocol on the test split");
    add_common(eval, ov);
    CLI::App* plot = app.add_subcommand("plot", "regenerate SVG plots from report CSVs");
    add_common(plot, ov);

    CLI11_PARSE(app, argc, argv);

    RunConfig cfg;
    try {
        cfg = resolve(ov);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return demorph::cli::kExitValidation;
    }

    if (gen->parsed()) return demorph::cli::cmd_gen_data(cfg);
    if (train->parsed()) return demorph::cli::cmd_train(cfg);
    if (dem->parsed()) return demorph::cli::cmd_demorph(cfg, demorph_input);
    if (eval->parsed()) return demorph::cli::cmd_eval(cfg);
    if (plot->parsed()) return demorph::cli::cmd_plot(cfg);
    return demorph::cli::kExitValidation;
}
