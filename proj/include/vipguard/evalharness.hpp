#pragma once

// Detection metrics (AUC, EER, ACC), the image degradation suite, and
// dataset scoring for personalized and one-shot evaluation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vipguard/model.hpp"
#include "vipguard/world.hpp"

namespace vipguard::evalharness {

struct ScoredSample {
  std::string sample_id;
  bool positive = false;  // real image of the protected identity
  double score = 0.0;     // p_yes
  std::string generator;  // natural | swap | synthesis
  std::string identity;
};

/// Mann-Whitney statistic; ties count one half. Needs both classes.
double compute_auc(const std::vector<ScoredSample>& samples);
double compute_auc(const std::vector<double>& positives, const std::vector<double>& negatives);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Sweeps thresholds over the observed scores (plus one above the maximum);
/// FAR(t) = share of negatives >= t, FRR(t) = share of positives < t. The
/// crossing is interpolated linearly between adjacent sweep points.
EerResult compute_eer(const std::vector<ScoredSample>& samples);
EerResult compute_eer(const std::vector<double>& positives, const std::vector<double>& negatives);

/// Share of samples with (score >= threshold) == positive.
double compute_acc(const std::vector<ScoredSample>& samples, double threshold = 0.5);

// ---- degradations ---------------------------------------------------------

enum class DegradationKind { gaussian_noise_ycbcr, gaussian_blur, jpeg };

struct DegradationSpec {
  DegradationKind kind = DegradationKind::gaussian_noise_ycbcr;
  int level = 1;
  double noise_sigma = 0.0;
  int kernel = 0;
  double blur_sigma = 0.0;
  int quality = 0;

  /// Parameters for kind at level 1..3; throws on anything else.
  static DegradationSpec make(DegradationKind kind, int level);
  /// "noise:2", "blur:1", "jpeg:3" (long kind names accepted too).
  static DegradationSpec parse(std::string_view text);
  std::string tag() const;
};

std::string_view to_string(DegradationKind kind);
/// Every (kind, level) pair, kind-major.
std::vector<DegradationSpec> degradation_registry();

/// Normalized 1-D Gaussian taps.
std::vector<double> gaussian_kernel(int size, double sigma);

/// BT.601 full-range conversions on one pixel.
void rgb_to_ycbcr(double r, double g, double b, double& y, double& cb, double& cr);
void ycbcr_to_rgb(double y, double cb, double cr, double& r, double& g, double& b);

/// Deterministic for a fixed seed (only noise consumes it).
Image degrade(const Image& image, const DegradationSpec& spec, std::uint64_t seed);

// ---- scoring --------------------------------------------------------------

struct QuerySpec {
  model::QueryKind kind = model::QueryKind::vip;
  const model::Mat* vip = nullptr;
  const Image* reference = nullptr;
  bool use_fused = true;
};

/// One p_yes per sample in input order; no explanation decoding.
std::vector<ScoredSample> score_dataset(const model::Model& model, const std::vector<const world::WorldSample*>& samples,
                                        const QuerySpec& query,
                                        const std::optional<DegradationSpec>& degradation = std::nullopt,
                                        std::uint64_t degrade_seed = 0);

/// Real and forged test images of one protected identity.
std::vector<const world::WorldSample*> vip_test_set(const world::World& world, const std::string& identity);

struct GeneratorMetrics {
  std::string generator;
  double auc = 0.0;
  double eer = 0.0;
  double acc = 0.0;
  int positives = 0;
  int negatives = 0;
};

struct Metrics {
  std::vector<GeneratorMetrics> per_generator;  // swap, synthesis (those present)
  double mean_auc = 0.0;                        // average over generators
  double mean_eer = 0.0;
  double mean_acc = 0.0;
  double pooled_auc = 0.0;  // all negatives together
};

/// Positives are shared by every generator's comparison.
Metrics summarize(const std::vector<ScoredSample>& scored);

/// Stage-2 model with one reference image. The reference's nuisance seed
/// must differ from every test seed.
Metrics one_shot_evaluate(const model::Model& model, const world::WorldSample& reference,
                          const std::vector<const world::WorldSample*>& tests,
                          std::vector<ScoredSample>* scored = nullptr);

// ---- reports --------------------------------------------------------------

struct MetricRow {
  std::string suite;
  std::string variant;
  std::string identity;
  std::string generator;
  std::string metric;
  double value = 0.0;
};

void append_rows(std::vector<MetricRow>& rows, const std::string& suite, const std::string& variant,
                 const std::string& identity, const Metrics& metrics);
void write_report_jsonl(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
/// Fixed-width table keyed by (variant, identity, generator, metric).
std::string format_table(const std::vector<MetricRow>& rows);

}  // namespace vipguard::evalharness
