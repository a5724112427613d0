#pragma once

#include <cstdint>
#include <string>

namespace demorph::cli {

// Resolved run configuration. Defaults reproduce the published constants
// (T = 300, linear beta 1e-4..0.02, lr 1e-3, 300 epochs, 80/20 split);
// profiles and config files override, CLI flags override those.
struct RunConfig {
    // training
    int T = 300;
    int epochs = 300;
    double lr = 1e-3;
    int batch_size = 16;
    int img_size = 32;
    uint64_t seed = 0;
    int time_embed_dim = 64;
    int n_stages = 3;
    int base_width = 32;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    // dataset
    int n_ids = 64;
    int n_morphs = 160;
    double blend = 0.5;
    double warp_strength = 0.15;
    // comparator calibration
    int calib_pairs = 1000;
    double target_fmr = 0.05;
    // paths
    std::string data_dir = "data";
    std::string checkpoint = "checkpoint.sdmf";
    std::string report_dir = "reports";
    // behavior
    std::string mode = "direct";  // direct|iterative
    bool force = false;
    bool resume = false;
    int checkpoint_every = 25;
    std::string profile;  // "", "smoke", "standard"
};

// Exit codes shared by every command.
constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCheckpoint = 4;

void apply_profile(RunConfig& cfg, const std::string& profile);
// Flat key=value file, '#' comments; unknown keys are validation errors.
void apply_config_file(RunConfig& cfg, const std::string& path);
std::string serialize_config(const RunConfig& cfg);
void write_resolved_config(const RunConfig& cfg, const std::string& path);

int cmd_gen_data(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_demorph(const RunConfig& cfg, const std::string& input_path);
int cmd_eval(const RunConfig& cfg);
int cmd_plot(const RunConfig& cfg);

}  // namespace demorph::cli
