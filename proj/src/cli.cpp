#include "demorph/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "demorph/evalkit.hpp"
#include "demorph/morphops.hpp"
#include "demorph/schedule.hpp"
#include "demorph/unet.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace demorph::cli {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

net::TrainConfig to_train_config(const RunConfig& cfg) {
    net::TrainConfig t;
    t.T = cfg.T;
    t.epochs = cfg.epochs;
    t.lr = cfg.lr;
    t.batch_size = cfg.batch_size;
    t.img_size = cfg.img_size;
    t.seed = cfg.seed;
    t.time_embed_dim = cfg.time_embed_dim;
    t.n_stages = cfg.n_stages;
    t.base_width = cfg.base_width;
    return t;
}

int report_error(const std::exception& e, int code) {
    std::cerr << "error: " << e.what() << "\n";
    return code;
}

// Shared wrapper so every command maps exceptions to exit codes the same way.
template <typename Fn>
int run_command(Fn&& fn) {
    try {
        return fn();
    } catch (const CheckpointError& e) {
        return report_error(e, kExitCheckpoint);
    } catch (const NumericError& e) {
        return report_error(e, kExitNumeric);
    } catch (const std::out_of_range& e) {
        return report_error(e, kExitValidation);
    } catch (const std::exception& e) {  // ConfigError, ShapeError, IoError, parse errors
        return report_error(e, kExitValidation);
    }
}

std::string checkpoint_sidecar(const RunConfig& cfg, const char* suffix) {
    return cfg.checkpoint + suffix;
}

}  // namespace

void apply_profile(RunConfig& cfg, const std::string& profile) {
    if (profile.empty()) return;
    if (profile == "smoke") {
        cfg.img_size = 16;
        cfg.n_ids = 24;
        cfg.n_morphs = 60;
        cfg.epochs = 10;
        cfg.calib_pairs = 300;
    } else if (profile == "standard") {
        cfg.img_size = 32;
        cfg.n_ids = 64;
        cfg.n_morphs = 160;
        cfg.epochs = 120;
        cfg.calib_pairs = 1000;
    } else {
        throw ConfigError("unknown profile '" + profile + "' (expected smoke or standard)");
    }
    cfg.profile = profile;
}

namespace {

// One row per key keeps serialization and parsing in lockstep.
template <typename Cfg, typename Fn>
void for_each_key(Cfg& cfg, Fn&& fn) {
    fn("T", cfg.T);
    fn("epochs", cfg.epochs);
    fn("lr", cfg.lr);
    fn("batch_size", cfg.batch_size);
    fn("img_size", cfg.img_size);
    fn("seed", cfg.seed);
    fn("time_embed_dim", cfg.time_embed_dim);
    fn("n_stages", cfg.n_stages);
    fn("base_width", cfg.base_width);
    fn("beta_start", cfg.beta_start);
    fn("beta_end", cfg.beta_end);
    fn("n_ids", cfg.n_ids);
    fn("n_morphs", cfg.n_morphs);
    fn("blend", cfg.blend);
    fn("warp_strength", cfg.warp_strength);
    fn("calib_pairs", cfg.calib_pairs);
    fn("target_fmr", cfg.target_fmr);
    fn("data_dir", cfg.data_dir);
    fn("checkpoint", cfg.checkpoint);
    fn("report_dir", cfg.report_dir);
    fn("mode", cfg.mode);
    fn("checkpoint_every", cfg.checkpoint_every);
}

void assign_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    bool found = false;
    auto parse_into = [&](auto& field) {
        using T = std::decay_t<decltype(field)>;
        std::istringstream ss(value);
        T v{};
        if constexpr (std::is_same_v<T, std::string>) {
            v = value;
        } else {
            if (!(ss >> v)) throw ConfigError("config: bad value '" + value + "' for key " + key);
        }
        field = v;
    };
    for_each_key(cfg, [&](const char* k, auto& field) {
        if (key == k) {
            parse_into(field);
            found = true;
        }
    });
    if (!found) throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto strip = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string stripped = strip(line);
        if (stripped.empty()) continue;
        auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key=value at " + path + ":" +
                              std::to_string(lineno));
        assign_key(cfg, strip(stripped.substr(0, eq)), strip(stripped.substr(eq + 1)));
    }
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "# resolved run configuration\n";
    if (!cfg.profile.empty()) os << "# profile = " << cfg.profile << "\n";
    for_each_key(const_cast<RunConfig&>(cfg), [&](const char* k, auto& field) {
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, double>)
            os << k << " = " << fmt(field) << "\n";
        else
            os << k << " = " << field << "\n";
    });
    return os.str();
}

void write_resolved_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("config: cannot write " + path);
    os << serialize_config(cfg);
}

int cmd_gen_data(const RunConfig& cfg) {
    return run_command([&]() {
        if (fs::exists(cfg.data_dir) && !fs::is_empty(cfg.data_dir) && !cfg.force) {
            std::cerr << "error: data_dir '" << cfg.data_dir
                      << "' is not empty (use --force to overwrite)\n";
            return kExitValidation;
        }
        auto manifest = morphops::make_dataset(cfg.n_ids, cfg.n_morphs, cfg.img_size, cfg.seed,
                                               cfg.blend, cfg.warp_strength);
        morphops::save_dataset(manifest, cfg.data_dir);
        write_resolved_config(cfg, (fs::path(cfg.data_dir) / "run_config.txt").string());

        int test_morphs = 0;
        for (const auto& s : manifest.test) test_morphs += s.is_morph ? 1 : 0;
        std::cout << "wrote " << cfg.data_dir << ": " << manifest.train.size()
                  << " train morphs, " << test_morphs << " test morphs, "
                  << manifest.test.size() - static_cast<size_t>(test_morphs)
                  << " test bona fides\n";
        std::cout << "manifest hash " << std::hex
                  << morphops::fnv1a64(morphops::manifest_json(manifest)) << std::dec << "\n";
        return kExitOk;
    });
}

int cmd_train(const RunConfig& cfg) {
    return run_command([&]() {
        auto manifest = morphops::load_dataset(cfg.data_dir);
        auto sched = build_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
        net::TrainConfig tc = to_train_config(cfg);

        net::BranchedUNetParams params = net::BranchedUNetParams::init(tc.unet(), mix_seed(cfg.seed, 0x9A12));
        AdamState adam;
        adam.lr = cfg.lr;
        int start_epoch = 0;

        if (cfg.resume && fs::exists(cfg.checkpoint)) {
            net::Checkpoint ck = net::load_checkpoint(cfg.checkpoint);
            if (ck.cfg.img_size != cfg.img_size || ck.cfg.T != cfg.T ||
                ck.cfg.n_stages != cfg.n_stages || ck.cfg.base_width != cfg.base_width ||
                ck.cfg.time_embed_dim != cfg.time_embed_dim || ck.cfg.seed != cfg.seed)
                throw CheckpointError("resume: checkpoint config does not match run config");
            params = std::move(ck.params);
            adam = std::move(ck.adam);
            start_epoch = ck.epoch;
            std::cout << "resuming from epoch " << start_epoch << "\n";
        }

        std::string loss_csv = checkpoint_sidecar(cfg, ".loss.csv");
        {
            std::ofstream os(loss_csv, start_epoch > 0 ? std::ios::app : std::ios::trunc);
            if (!os) throw IoError("train: cannot write " + loss_csv);
            if (start_epoch == 0) os << "epoch,mean_loss,pairing_flip_rate,n_batches\n";
        }

        if (fs::path(cfg.checkpoint).has_parent_path())
            fs::create_directories(fs::path(cfg.checkpoint).parent_path());

        for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
            // per-epoch stream keyed by (seed, epoch) so resume is exact
            Rng rng(mix_seed(cfg.seed, 0xE9, static_cast<uint64_t>(epoch)));
            net::EpochStats stats;
            try {
                stats = net::train_epoch(params, manifest, sched, tc, adam, rng);
            } catch (const NumericError& e) {
                std::cerr << "error: " << e.what() << " at epoch " << epoch
                          << "; last checkpoint retained\n";
                return kExitNumeric;
            }
            {
                std::ofstream os(loss_csv, std::ios::app);
                os << epoch << "," << fmt(stats.mean_loss) << "," << fmt(stats.pairing_flip_rate)
                   << "," << stats.n_batches << "\n";
            }
            std::cout << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss "
                      << stats.mean_loss << " flip_rate " << stats.pairing_flip_rate << "\n";
            if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)
                net::save_checkpoint(params, adam, tc, epoch + 1, cfg.checkpoint);
        }
        write_resolved_config(cfg, checkpoint_sidecar(cfg, ".run_config.txt"));
        std::cout << "checkpoint written to " << cfg.checkpoint << "\n";
        return kExitOk;
    });
}

int cmd_demorph(const RunConfig& cfg, const std::string& input_path) {
    return run_command([&]() {
        net::Checkpoint ck = net::load_checkpoint(cfg.checkpoint);
        Tensor x = morphops::read_pgm(input_path);
        net::DemorphOutput out;
        if (cfg.mode == "direct") {
            out = net::demorph_direct(ck.params, x);
        } else if (cfg.mode == "iterative") {
            auto sched = build_linear_schedule(ck.cfg.T, cfg.beta_start, cfg.beta_end);
            out = net::demorph_iterative(ck.params, x, sched, cfg.seed);
        } else {
            throw ConfigError("mode must be direct or iterative, got '" + cfg.mode + "'");
        }
        double disagreement = 1.0 - morphops::compare(out.o1, out.o2, 0).score;

        fs::path in(input_path);
        fs::path stem = in.parent_path() / in.stem();
        std::string o1_path = stem.string() + "_o1.pgm";
        std::string o2_path = stem.string() + "_o2.pgm";
        std::string meta_path = stem.string() + "_demorph.json";
        morphops::write_pgm(out.o1, o1_path);
        morphops::write_pgm(out.o2, o2_path);

        ordered_json j;
        j["input"] = input_path;
        j["mode"] = cfg.mode;
        j["disagreement"] = disagreement;
        j["o1"] = o1_path;
        j["o2"] = o2_path;
        j["checkpoint"] = cfg.checkpoint;
        j["checkpoint_epoch"] = ck.epoch;
        std::ofstream os(meta_path);
        if (!os) throw IoError("demorph: cannot write " + meta_path);
        os << j.dump(2) << "\n";
        std::cout << "wrote " << o1_path << ", " << o2_path << ", " << meta_path
                  << " (disagreement " << disagreement << ")\n";
        return kExitOk;
    });
}

int cmd_eval(const RunConfig& cfg) {
    return run_command([&]() {
        net::Checkpoint ck = net::load_checkpoint(cfg.checkpoint);
        auto manifest = morphops::load_dataset(cfg.data_dir);
        if (manifest.test.empty()) throw ConfigError("eval: empty test split");
        if (manifest.img_size != ck.cfg.img_size)
            throw CheckpointError("eval: dataset img_size does not match checkpoint");

        auto sched = build_linear_schedule(ck.cfg.T, cfg.beta_start, cfg.beta_end);
        bool iterative = cfg.mode == "iterative";
        if (!iterative && cfg.mode != "direct")
            throw ConfigError("mode must be direct or iterative, got '" + cfg.mode + "'");

        // score every test sample (eval-mode inference is pure, so this
        // fans out safely)
        int n_test = static_cast<int>(manifest.test.size());
        std::vector<std::pair<net::DemorphOutput, morphops::MorphSample>> outputs(
            static_cast<size_t>(n_test));
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < n_test; ++i) {
            const auto& s = manifest.test[static_cast<size_t>(i)];
            net::DemorphOutput out =
                iterative ? net::demorph_iterative(ck.params, s.x, sched,
                                                   mix_seed(cfg.seed, 0xDE, static_cast<uint64_t>(i)))
                          : net::demorph_direct(ck.params, s.x);
            outputs[static_cast<size_t>(i)] = {std::move(out), s};
        }

        auto calib = morphops::calibrate_comparator(cfg.calib_pairs, cfg.img_size,
                                                    mix_seed(cfg.seed, 0xCA11), cfg.target_fmr);

        std::vector<std::pair<net::DemorphOutput, morphops::MorphSample>> morph_outputs;
        for (const auto& p : outputs)
            if (p.second.is_morph) morph_outputs.push_back(p);
        auto restoration = evalkit::restoration_accuracy(morph_outputs, calib.tau);
        auto hists = evalkit::similarity_histograms(outputs);

        // disagreement scores; EER threshold from the even-indexed
        // calibration slice (stratified per class), rates from the rest
        std::vector<std::pair<double, bool>> all_scores, calib_slice;
        std::vector<std::pair<double, bool>> eval_slice;
        int idx_morph = 0, idx_bona = 0;
        for (const auto& [out, s] : outputs) {
            double disagreement = 1.0 - morphops::compare(out.o1, out.o2, 0).score;
            all_scores.emplace_back(disagreement, s.is_morph);
            int& idx = s.is_morph ? idx_morph : idx_bona;
            (idx % 2 == 0 ? calib_slice : eval_slice).emplace_back(disagreement, s.is_morph);
            ++idx;
        }
        auto has_both = [](const std::vector<std::pair<double, bool>>& v) {
            bool a = false, b = false;
            for (auto [s, m] : v) (m ? a : b) = true;
            return a && b;
        };
        if (!has_both(calib_slice) || !has_both(eval_slice)) {
            // degenerate split on tiny test sets: calibrate and report on all
            calib_slice = all_scores;
            eval_slice = all_scores;
        }
        double tau_mad = evalkit::eer_threshold(evalkit::roc_det_points(calib_slice, 101));
        std::vector<std::pair<bool, bool>> decisions;
        for (auto [s, is_morph] : eval_slice) decisions.emplace_back(s > tau_mad, is_morph);
        auto mad = evalkit::mad_metrics(decisions, tau_mad);
        auto curve = evalkit::roc_det_points(all_scores, 101);

        auto files = evalkit::export_report(restoration, hists, mad, curve, cfg.report_dir);
        write_resolved_config(cfg, (fs::path(cfg.report_dir) / "run_config.txt").string());
        files.push_back((fs::path(cfg.report_dir) / "run_config.txt").string());

        // replication check numbers (bona fide subset)
        double frac_above = 0.0;
        if (!hists.bonafide_scores[2].empty()) {
            int above = 0;
            for (double s : hists.bonafide_scores[2]) above += s > calib.genuine_median ? 1 : 0;
            frac_above = static_cast<double>(above) /
                         static_cast<double>(hists.bonafide_scores[2].size());
        }

        ordered_json j;
        j["restoration"] = {{"acc_subject1", restoration.acc_subject1},
                            {"acc_subject2", restoration.acc_subject2},
                            {"n_samples", restoration.n_samples},
                            {"tau", calib.tau}};
        j["comparator"] = {{"tau", calib.tau},
                           {"genuine_median", calib.genuine_median},
                           {"realized_fmr", calib.realized_fmr}};
        j["mad"] = {{"apcer", mad.apcer},
                    {"bpcer", mad.bpcer},
                    {"acer", mad.acer},
                    {"threshold", mad.threshold},
                    {"n_attack", mad.n_attack},
                    {"n_bonafide", mad.n_bonafide}};
        j["roc"] = {{"auc", curve.auc}};
        j["replication"] = {{"frac_bonafide_o1o2_above_genuine_median", frac_above}};
        if (!hists.morph_scores[2].empty()) {
            j["medians_morph"] = {{"o1_o2", evalkit::median(hists.morph_scores[2])},
                                  {"o1_i1", evalkit::median(hists.morph_scores[3])},
                                  {"o2_i2", evalkit::median(hists.morph_scores[4])}};
        }
        j["mode"] = cfg.mode;
        j["files"] = files;
        std::string summary_path = (fs::path(cfg.report_dir) / "run_summary.json").string();
        {
            std::ofstream os(summary_path);
            if (!os) throw IoError("eval: cannot write " + summary_path);
            os << j.dump(2) << "\n";
        }

        std::printf("restoration accuracy   subject 1   subject 2   (tau %.4f)\n", calib.tau);
        std::printf("                       %6.2f%%     %6.2f%%     n=%d\n",
                    100.0 * restoration.acc_subject1, 100.0 * restoration.acc_subject2,
                    restoration.n_samples);
        std::printf("MAD                    APCER       BPCER       ACER\n");
        std::printf("                       %6.2f%%     %6.2f%%     %6.2f%%   (tau_mad %.4f, AUC %.4f)\n",
                    100.0 * mad.apcer, 100.0 * mad.bpcer, 100.0 * mad.acer, tau_mad, curve.auc);
        std::printf("reports in %s\n", cfg.report_dir.c_str());
        return kExitOk;
    });
}

int cmd_plot(const RunConfig& cfg) {
    return run_command([&]() {
        std::string csv = (fs::path(cfg.report_dir) / "curves.csv").string();
        auto curve = evalkit::parse_curves_csv(csv);
        std::string roc = (fs::path(cfg.report_dir) / "roc.svg").string();
        std::string det = (fs::path(cfg.report_dir) / "det.svg").string();
        evalkit::export_curve_svg(curve, evalkit::CurveKind::roc, roc);
        evalkit::export_curve_svg(curve, evalkit::CurveKind::det, det);
        std::cout << "wrote " << roc << " and " << det << "\n";
        return kExitOk;
    });
}

}  // namespace demorph::cli
