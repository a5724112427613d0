#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "demorph/morphops.hpp"
#include "demorph/unet.hpp"

namespace demorph::evalkit {

struct PerSampleRestoration {
    int sample_id = 0;
    double s_o1_i1 = 0, s_o1_i2 = 0, s_o2_i1 = 0, s_o2_i2 = 0;
    net::Pairing pairing = net::Pairing::direct;
    bool restored1 = false, restored2 = false;  // subject 1 / subject 2
};

struct RestorationReport {
    double acc_subject1 = 0.0, acc_subject2 = 0.0;
    int n_samples = 0;
    bool defined = false;  // false when the input list is empty
    std::vector<PerSampleRestoration> rows;
};

// Outputs are assigned to bona fides by the higher-total-score pairing; an
// output counts as restored iff it matches its assigned bona fide and does
// NOT match the other one. All samples must be morphs.
RestorationReport restoration_accuracy(
    const std::vector<std::pair<net::DemorphOutput, morphops::MorphSample>>& outputs, double tau);

// Score families: 0 (X,O1), 1 (X,O2), 2 (O1,O2), 3 (O1,I1), 4 (O2,I2),
// with outputs assigned to bona fides by the restoration pairing for the
// last two. Collected separately for morph and bona fide samples.
struct SimilarityHistograms {
    int n_bins = 20;
    std::array<std::vector<double>, 5> morph_scores, bonafide_scores;
    static constexpr std::array<const char*, 5> family_names{"x_o1", "x_o2", "o1_o2", "o1_i1",
                                                             "o2_i2"};
};
SimilarityHistograms similarity_histograms(
    const std::vector<std::pair<net::DemorphOutput, morphops::MorphSample>>& outputs,
    int n_bins = 20);

// Bin counts over [0,1]; out-of-range scores land in the edge bins.
std::vector<int> histogram(const std::vector<double>& scores, int n_bins);
double median(std::vector<double> values);

struct MadDecision {
    bool is_attack = false;
    double disagreement = 0.0;  // 1 - compare(O1,O2).score
};
// Reference-free attack call: the de-morpher's two outputs disagreeing
// flags the input as a morph.
MadDecision mad_classify(net::BranchedUNetParams& params, const Tensor& x, double tau_mad);

struct MadReport {
    double apcer = 0.0;  // attacks classified bona fide
    double bpcer = 0.0;  // bona fides classified attack
    double acer = 0.0;
    double threshold = 0.0;
    int n_attack = 0;
    int n_bonafide = 0;
};
// decisions: (is_attack decision, true is_morph label)
MadReport mad_metrics(const std::vector<std::pair<bool, bool>>& decisions, double threshold);

struct CurvePoints {
    std::vector<double> thresholds;  // ascending
    std::vector<double> apcer, bpcer;
    double auc = 0.0;  // trapezoid over (1-APCER) vs BPCER
};
// Sweeps n_thresholds evenly over the observed disagreement range (padded so
// both trivial operating points appear). scored: (disagreement, is_morph).
CurvePoints roc_det_points(const std::vector<std::pair<double, bool>>& scored, int n_thresholds);

// Threshold of the emitted point closest to APCER == BPCER.
double eer_threshold(const CurvePoints& curve);

// CSV/SVG emission; all byte-deterministic for fixed input.
void export_curves_csv(const CurvePoints& curve, const std::string& path);
CurvePoints parse_curves_csv(const std::string& path);
void export_restoration_csv(const RestorationReport& report, const std::string& path);
void export_histograms_csv(const SimilarityHistograms& hists, const std::string& path);

enum class CurveKind { roc, det };
void export_curve_svg(const CurvePoints& curve, CurveKind kind, const std::string& path);

// Writes the full report set into dir and returns the file paths written.
std::vector<std::string> export_report(const RestorationReport& restoration,
                                       const SimilarityHistograms& hists, const MadReport& mad,
                                       const CurvePoints& curve, const std::string& dir);

}  // namespace demorph::evalkit
