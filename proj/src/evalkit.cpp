#include "demorph/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace demorph::evalkit {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void open_out(std::ofstream& os, const std::string& path) {
    os.open(path);
    if (!os) throw IoError("export: cannot open " + path);
}

double compute_auc(const std::vector<double>& apcer, const std::vector<double>& bpcer) {
    // ROC: TPR = 1-APCER over FPR = BPCER, trapezoid in FPR order
    std::vector<std::pair<double, double>> pts;
    pts.reserve(apcer.size());
    for (size_t i = 0; i < apcer.size(); ++i) pts.emplace_back(bpcer[i], 1.0 - apcer[i]);
    std::sort(pts.begin(), pts.end());
    double auc = 0.0;
    for (size_t i = 1; i < pts.size(); ++i)
        auc += (pts[i].first - pts[i - 1].first) * 0.5 * (pts[i].second + pts[i - 1].second);
    return auc;
}

}  // namespace

RestorationReport restoration_accuracy(
    const std::vector<std::pair<net::DemorphOutput, morphops::MorphSample>>& outputs, double tau) {
    RestorationReport rep;
    rep.n_samples = static_cast<int>(outputs.size());
    if (outputs.empty()) return rep;  // defined stays false, accuracies undefined
    rep.defined = true;

    int hits1 = 0, hits2 = 0;
    int id = 0;
    for (const auto& [out, sample] : outputs) {
        if (!sample.is_morph)
            throw ConfigError("restoration_accuracy: sample " + std::to_string(id) +
                              " is not a morph");
        PerSampleRestoration row;
        row.sample_id = id++;
        row.s_o1_i1 = morphops::compare(out.o1, sample.i1, tau).score;
        row.s_o1_i2 = morphops::compare(out.o1, sample.i2, tau).score;
        row.s_o2_i1 = morphops::compare(out.o2, sample.i1, tau).score;
        row.s_o2_i2 = morphops::compare(out.o2, sample.i2, tau).score;
        bool direct = row.s_o1_i1 + row.s_o2_i2 >= row.s_o1_i2 + row.s_o2_i1;
        row.pairing = direct ? net::Pairing::direct : net::Pairing::swapped;
        // subject k's output must match I_k and reject the other bona fide
        double a11 = direct ? row.s_o1_i1 : row.s_o2_i1;  // assigned-to-I1 vs I1
        double a12 = direct ? row.s_o1_i2 : row.s_o2_i2;  // assigned-to-I1 vs I2
        double a22 = direct ? row.s_o2_i2 : row.s_o1_i2;
        double a21 = direct ? row.s_o2_i1 : row.s_o1_i1;
        row.restored1 = a11 > tau && !(a12 > tau);
        row.restored2 = a22 > tau && !(a21 > tau);
        hits1 += row.restored1 ? 1 : 0;
        hits2 += row.restored2 ? 1 : 0;
        rep.rows.push_back(row);
    }
    rep.acc_subject1 = static_cast<double>(hits1) / rep.n_samples;
    rep.acc_subject2 = static_cast<double>(hits2) / rep.n_samples;
    return rep;
}

SimilarityHistograms similarity_histograms(
    const std::vector<std::pair<net::DemorphOutput, morphops::MorphSample>>& outputs, int n_bins) {
    if (n_bins < 1) throw ConfigError("similarity_histograms: n_bins must be positive");
    SimilarityHistograms h;
    h.n_bins = n_bins;
    for (const auto& [out, sample] : outputs) {
        auto& dst = sample.is_morph ? h.morph_scores : h.bonafide_scores;
        double s_o1_i1 = morphops::compare(out.o1, sample.i1, 0).score;
        double s_o1_i2 = morphops::compare(out.o1, sample.i2, 0).score;
        double s_o2_i1 = morphops::compare(out.o2, sample.i1, 0).score;
        double s_o2_i2 = morphops::compare(out.o2, sample.i2, 0).score;
        bool direct = s_o1_i1 + s_o2_i2 >= s_o1_i2 + s_o2_i1;
        dst[0].push_back(morphops::compare(sample.x, out.o1, 0).score);
        dst[1].push_back(morphops::compare(sample.x, out.o2, 0).score);
        dst[2].push_back(morphops::compare(out.o1, out.o2, 0).score);
        dst[3].push_back(direct ? s_o1_i1 : s_o2_i1);
        dst[4].push_back(direct ? s_o2_i2 : s_o1_i2);
    }
    return h;
}

std::vector<int> histogram(const std::vector<double>& scores, int n_bins) {
    std::vector<int> counts(static_cast<size_t>(n_bins), 0);
    for (double s : scores) {
        int b = static_cast<int>(std::floor(s * n_bins));
        b = std::clamp(b, 0, n_bins - 1);
        counts[static_cast<size_t>(b)] += 1;
    }
    return counts;
}

double median(std::vector<double> values) {
    if (values.empty()) throw ConfigError("median: empty sample");
    std::sort(values.begin(), values.end());
    size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

MadDecision mad_classify(net::BranchedUNetParams& params, const Tensor& x, double tau_mad) {
    net::DemorphOutput out = net::demorph_direct(params, x);
    double disagreement = 1.0 - morphops::compare(out.o1, out.o2, 0).score;
    return MadDecision{disagreement > tau_mad, disagreement};
}

MadReport mad_metrics(const std::vector<std::pair<bool, bool>>& decisions, double threshold) {
    MadReport r;
    r.threshold = threshold;
    int missed_attacks = 0, flagged_bonafide = 0;
    for (auto [is_attack, is_morph] : decisions) {
        if (is_morph) {
            r.n_attack += 1;
            missed_attacks += is_attack ? 0 : 1;
        } else {
            r.n_bonafide += 1;
            flagged_bonafide += is_attack ? 1 : 0;
        }
    }
    if (r.n_attack == 0) throw ConfigError("mad_metrics: no attack (morph) samples present");
    if (r.n_bonafide == 0) throw ConfigError("mad_metrics: no bona fide samples present");
    r.apcer = static_cast<double>(missed_attacks) / r.n_attack;
    r.bpcer = static_cast<double>(flagged_bonafide) / r.n_bonafide;
    r.acer = 0.5 * (r.apcer + r.bpcer);
    return r;
}

CurvePoints roc_det_points(const std::vector<std::pair<double, bool>>& scored, int n_thresholds) {
    if (n_thresholds < 2) throw ConfigError("roc_det_points: need at least 2 thresholds");
    int n_attack = 0, n_bonafide = 0;
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (auto [s, is_morph] : scored) {
        (is_morph ? n_attack : n_bonafide) += 1;
        lo = first ? s : std::min(lo, s);
        hi = first ? s : std::max(hi, s);
        first = false;
    }
    if (n_attack == 0) throw ConfigError("roc_det_points: no attack (morph) samples present");
    if (n_bonafide == 0) throw ConfigError("roc_det_points: no bona fide samples present");

    double pad = 1e-9 + (hi - lo) * 1e-3;
    lo -= pad;
    hi += pad;

    CurvePoints c;
    c.thresholds.resize(static_cast<size_t>(n_thresholds));
    c.apcer.resize(static_cast<size_t>(n_thresholds));
    c.bpcer.resize(static_cast<size_t>(n_thresholds));
    for (int i = 0; i < n_thresholds; ++i) {
        double tau = lo + (hi - lo) * static_cast<double>(i) / (n_thresholds - 1);
        int missed = 0, flagged = 0;
        for (auto [s, is_morph] : scored) {
            bool attack_call = s > tau;
            if (is_morph && !attack_call) ++missed;
            if (!is_morph && attack_call) ++flagged;
        }
        c.thresholds[static_cast<size_t>(i)] = tau;
        c.apcer[static_cast<size_t>(i)] = static_cast<double>(missed) / n_attack;
        c.bpcer[static_cast<size_t>(i)] = static_cast<double>(flagged) / n_bonafide;
    }
    c.auc = compute_auc(c.apcer, c.bpcer);
    return c;
}

double eer_threshold(const CurvePoints& curve) {
    if (curve.thresholds.empty()) throw ConfigError("eer_threshold: empty curve");
    size_t best = 0;
    double best_gap = std::abs(curve.apcer[0] - curve.bpcer[0]);
    for (size_t i = 1; i < curve.thresholds.size(); ++i) {
        double gap = std::abs(curve.apcer[i] - curve.bpcer[i]);
        if (gap < best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    return curve.thresholds[best];
}

void export_curves_csv(const CurvePoints& curve, const std::string& path) {
    std::ofstream os;
    open_out(os, path);
    os << "threshold,apcer,bpcer\n";
    for (size_t i = 0; i < curve.thresholds.size(); ++i)
        os << fmt(curve.thresholds[i]) << "," << fmt(curve.apcer[i]) << "," << fmt(curve.bpcer[i])
           << "\n";
    if (!os) throw IoError("export_curves_csv: short write to " + path);
}

CurvePoints parse_curves_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("parse_curves_csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "threshold,apcer,bpcer")
        throw IoError("parse_curves_csv: bad header in " + path);
    CurvePoints c;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string a, b, d;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, d))
            throw IoError("parse_curves_csv: malformed row in " + path);
        c.thresholds.push_back(std::strtod(a.c_str(), nullptr));
        c.apcer.push_back(std::strtod(b.c_str(), nullptr));
        c.bpcer.push_back(std::strtod(d.c_str(), nullptr));
    }
    if (c.thresholds.empty()) throw IoError("parse_curves_csv: no data rows in " + path);
    c.auc = compute_auc(c.apcer, c.bpcer);
    return c;
}

void export_restoration_csv(const RestorationReport& report, const std::string& path) {
    std::ofstream os;
    open_out(os, path);
    os << "sample_id,score_o1_i1,score_o1_i2,score_o2_i1,score_o2_i2,pairing,restored1,restored2\n";
    for (const auto& r : report.rows)
        os << r.sample_id << "," << fmt(r.s_o1_i1) << "," << fmt(r.s_o1_i2) << "," << fmt(r.s_o2_i1)
           << "," << fmt(r.s_o2_i2) << ","
           << (r.pairing == net::Pairing::direct ? "direct" : "swapped") << ","
           << (r.restored1 ? 1 : 0) << "," << (r.restored2 ? 1 : 0) << "\n";
    if (!os) throw IoError("export_restoration_csv: short write to " + path);
}

void export_histograms_csv(const SimilarityHistograms& hists, const std::string& path) {
    std::ofstream os;
    open_out(os, path);
    os << "subset,family,bin_lo,bin_hi,count\n";
    auto emit = [&](const char* subset, const std::array<std::vector<double>, 5>& fams) {
        for (size_t f = 0; f < fams.size(); ++f) {
            auto counts = histogram(fams[f], hists.n_bins);
            for (int b = 0; b < hists.n_bins; ++b)
                os << subset << "," << SimilarityHistograms::family_names[f] << ","
                   << fmt(static_cast<double>(b) / hists.n_bins) << ","
                   << fmt(static_cast<double>(b + 1) / hists.n_bins) << ","
                   << counts[static_cast<size_t>(b)] << "\n";
        }
    };
    emit("morph", hists.morph_scores);
    emit("bonafide", hists.bonafide_scores);
    if (!os) throw IoError("export_histograms_csv: short write to " + path);
}

void export_curve_svg(const CurvePoints& curve, CurveKind kind, const std::string& path) {
    // 800x600 canvas, unit square plot area with margins
    constexpr double W = 800, H = 600, ML = 70, MR = 30, MT = 40, MB = 60;
    double pw = W - ML - MR, ph = H - MT - MB;
    auto sx = [&](double x) { return ML + x * pw; };
    auto sy = [&](double y) { return H - MB - y * ph; };
    char buf[128];

    std::ofstream os;
    open_out(os, path);
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 600\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>\n";

    const char* title = kind == CurveKind::roc ? "ROC" : "DET";
    const char* xlabel = kind == CurveKind::roc ? "BPCER (false positive rate)" : "APCER";
    const char* ylabel = kind == CurveKind::roc ? "1 - APCER (true positive rate)" : "BPCER";

    // axes, ticks, grid
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.6g\" y1=\"%.6g\" x2=\"%.6g\" y2=\"%.6g\" stroke=\"black\"/>\n",
                  sx(0.0), sy(0.0), sx(1.0), sy(0.0));
    os << buf;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.6g\" y1=\"%.6g\" x2=\"%.6g\" y2=\"%.6g\" stroke=\"black\"/>\n",
                  sx(0.0), sy(0.0), sx(0.0), sy(1.0));
    os << buf;
    for (int i = 0; i <= 5; ++i) {
        double v = static_cast<double>(i) / 5.0;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.6g\" y1=\"%.6g\" x2=\"%.6g\" y2=\"%.6g\" stroke=\"#cccccc\"/>\n",
                      sx(v), sy(0.0), sx(v), sy(1.0));
        os << buf;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.6g\" y1=\"%.6g\" x2=\"%.6g\" y2=\"%.6g\" stroke=\"#cccccc\"/>\n",
                      sx(0.0), sy(v), sx(1.0), sy(v));
        os << buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.6g\" y=\"%.6g\" font-size=\"14\" text-anchor=\"middle\">%.1f</text>\n",
                      sx(v), sy(0.0) + 20.0, v);
        os << buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.6g\" y=\"%.6g\" font-size=\"14\" text-anchor=\"end\">%.1f</text>\n",
                      sx(0.0) - 8.0, sy(v) + 5.0, v);
        os << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.6g\" y=\"%.6g\" font-size=\"16\" text-anchor=\"middle\">%s</text>\n",
                  sx(0.5), H - 15.0, xlabel);
    os << buf;
    std::snprintf(
        buf, sizeof buf,
        "<text x=\"%.6g\" y=\"%.6g\" font-size=\"16\" text-anchor=\"middle\" "
        "transform=\"rotate(-90 %.6g %.6g)\">%s</text>\n",
        18.0, sy(0.5), 18.0, sy(0.5), ylabel);
    os << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.6g\" y=\"25\" font-size=\"18\" text-anchor=\"middle\">%s (AUC %.4f)"
                  "</text>\n",
                  sx(0.5), title, curve.auc);
    os << buf;

    os << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < curve.thresholds.size(); ++i) {
        double x = kind == CurveKind::roc ? curve.bpcer[i] : curve.apcer[i];
        double y = kind == CurveKind::roc ? 1.0 - curve.apcer[i] : curve.bpcer[i];
        std::snprintf(buf, sizeof buf, "%.6g,%.6g ", sx(x), sy(y));
        os << buf;
    }
    os << "\"/>\n</svg>\n";
    if (!os) throw IoError("export_curve_svg: short write to " + path);
}

std::vector<std::string> export_report(const RestorationReport& restoration,
                                       const SimilarityHistograms& hists, const MadReport& mad,
                                       const CurvePoints& curve, const std::string& dir) {
    fs::create_directories(dir);
    std::vector<std::string> files;
    auto at = [&](const char* name) {
        files.push_back((fs::path(dir) / name).string());
        return files.back();
    };
    export_restoration_csv(restoration, at("restoration.csv"));
    export_histograms_csv(hists, at("histograms.csv"));
    export_curves_csv(curve, at("curves.csv"));
    export_curve_svg(curve, CurveKind::roc, at("roc.svg"));
    export_curve_svg(curve, CurveKind::det, at("det.svg"));
    {
        std::ofstream os;
        open_out(os, at("mad.csv"));
        os << "threshold,apcer,bpcer,acer,n_attack,n_bonafide\n";
        os << fmt(mad.threshold) << "," << fmt(mad.apcer) << "," << fmt(mad.bpcer) << ","
           << fmt(mad.acer) << "," << mad.n_attack << "," << mad.n_bonafide << "\n";
    }
    return files;
}

}  // namespace demorph::evalkit
