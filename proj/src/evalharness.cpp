#include "vipguard/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vipguard/image_io.hpp"

namespace vipguard::evalharness {

using world::WorldSample;

namespace {

void split_scores(const std::vector<ScoredSample>& samples, std::vector<double>& pos, std::vector<double>& neg) {
  for (const auto& s : samples) (s.positive ? pos : neg).push_back(s.score);
}

void require_both(const std::vector<double>& pos, const std::vector<double>& neg) {
  require(!pos.empty() && !neg.empty(), ErrorKind::insufficient_data,
          "metric needs at least one positive and one negative (got " + std::to_string(pos.size()) + "/" +
              std::to_string(neg.size()) + ")");
}

}  // namespace

double compute_auc(const std::vector<double>& positives, const std::vector<double>& negatives) {
  require_both(positives, negatives);
  // Rank-sum form: sort the negatives once, count below/equal per positive.
  std::vector<double> neg = negatives;
  std::sort(neg.begin(), neg.end());
  double concordant = 0;
  for (double p : positives) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
    concordant += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return concordant / (static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

double compute_auc(const std::vector<ScoredSample>& samples) {
  std::vector<double> pos, neg;
  split_scores(samples, pos, neg);
  return compute_auc(pos, neg);
}

EerResult compute_eer(const std::vector<double>& positives, const std::vector<double>& negatives) {
  require_both(positives, negatives);
  std::vector<double> thresholds = positives;
  thresholds.insert(thresholds.end(), negatives.begin(), negatives.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(thresholds.back() + 1.0);  // accepts nothing: FAR 0, FRR 1

  auto far = [&](double t) {
    return static_cast<double>(std::count_if(negatives.begin(), negatives.end(), [t](double s) { return s >= t; })) /
           static_cast<double>(negatives.size());
  };
  auto frr = [&](double t) {
    return static_cast<double>(std::count_if(positives.begin(), positives.end(), [t](double s) { return s < t; })) /
           static_cast<double>(positives.size());
  };
  // FAR is non-increasing and FRR non-decreasing in t, so d = FAR - FRR
  // crosses zero exactly once along the sweep.
  double prev_t = thresholds.front();
  double prev_far = far(prev_t), prev_frr = frr(prev_t);
  if (prev_far - prev_frr <= 0) return {0.5 * (prev_far + prev_frr), prev_t};
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    const double t = thresholds[i];
    const double fa = far(t), fr = frr(t);
    const double d = fa - fr;
    if (d <= 0) {
      const double d0 = prev_far - prev_frr;
      const double w = d0 / (d0 - d);  // in (0, 1]
      const double eer = (prev_far + w * (fa - prev_far) + prev_frr + w * (fr - prev_frr)) / 2.0;
      return {eer, prev_t + w * (t - prev_t)};
    }
    prev_t = t;
    prev_far = fa;
    prev_frr = fr;
  }
  return {0.5 * (prev_far + prev_frr), prev_t};
}

EerResult compute_eer(const std::vector<ScoredSample>& samples) {
  std::vector<double> pos, neg;
  split_scores(samples, pos, neg);
  return compute_eer(pos, neg);
}

double compute_acc(const std::vector<ScoredSample>& samples, double threshold) {
  require(!samples.empty(), ErrorKind::insufficient_data, "accuracy of an empty sample set");
  std::size_t correct = 0;
  for (const auto& s : samples) correct += ((s.score >= threshold) == s.positive) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// ---- degradations ---------------------------------------------------------

std::string_view to_string(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::gaussian_noise_ycbcr: return "gaussian_noise_ycbcr";
    case DegradationKind::gaussian_blur: return "gaussian_blur";
    case DegradationKind::jpeg: return "jpeg";
  }
  return "?";
}

DegradationSpec DegradationSpec::make(DegradationKind kind, int level) {
  require(level >= 1 && level <= 3, ErrorKind::invalid_argument,
          "degradation level must be 1, 2 or 3 (got " + std::to_string(level) + ")");
  DegradationSpec s;
  s.kind = kind;
  s.level = level;
  const auto i = static_cast<std::size_t>(level - 1);
  switch (kind) {
    case DegradationKind::gaussian_noise_ycbcr: s.noise_sigma = std::array<double, 3>{8, 11, 18}[i]; break;
    case DegradationKind::gaussian_blur:
      s.kernel = std::array<int, 3>{7, 13, 21}[i];
      s.blur_sigma = std::array<double, 3>{1, 2, 3}[i];
      break;
    case DegradationKind::jpeg: s.quality = std::array<int, 3>{90, 60, 30}[i]; break;
  }
  return s;
}

DegradationSpec DegradationSpec::parse(std::string_view text) {
  const auto colon = text.find(':');
  require(colon != std::string_view::npos, ErrorKind::invalid_argument,
          "degradation must look like kind:level, got '" + std::string(text) + "'");
  const std::string kind(text.substr(0, colon));
  const std::string level(text.substr(colon + 1));
  DegradationKind k;
  if (kind == "noise" || kind == "gaussian_noise_ycbcr")
    k = DegradationKind::gaussian_noise_ycbcr;
  else if (kind == "blur" || kind == "gaussian_blur")
    k = DegradationKind::gaussian_blur;
  else if (kind == "jpeg")
    k = DegradationKind::jpeg;
  else
    fail(ErrorKind::invalid_argument, "unknown degradation kind '" + kind + "'");
  require(level.size() == 1 && level[0] >= '0' && level[0] <= '9', ErrorKind::invalid_argument,
          "unknown degradation level '" + level + "'");
  return make(k, level[0] - '0');
}

std::string DegradationSpec::tag() const {
  const char* k = kind == DegradationKind::gaussian_noise_ycbcr ? "noise"
                  : kind == DegradationKind::gaussian_blur     ? "blur"
                                                               : "jpeg";
  return std::string(k) + ":" + std::to_string(level);
}

std::vector<DegradationSpec> degradation_registry() {
  std::vector<DegradationSpec> out;
  for (auto k : {DegradationKind::gaussian_noise_ycbcr, DegradationKind::gaussian_blur, DegradationKind::jpeg})
    for (int level = 1; level <= 3; ++level) out.push_back(DegradationSpec::make(k, level));
  return out;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  require(size >= 1 && size % 2 == 1 && sigma > 0, ErrorKind::invalid_argument, "bad Gaussian kernel");
  std::vector<double> k(static_cast<std::size_t>(size));
  const int r = size / 2;
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2 * sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

void rgb_to_ycbcr(double r, double g, double b, double& y, double& cb, double& cr) {
  y = 0.299 * r + 0.587 * g + 0.114 * b;
  cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
  cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
}

void ycbcr_to_rgb(double y, double cb, double cr, double& r, double& g, double& b) {
  r = y + 1.402 * (cr - 128.0);
  g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0);
  b = y + 1.772 * (cb - 128.0);
}

namespace {

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

Image blur(const Image& img, int size, double sigma) {
  const auto k = gaussian_kernel(size, sigma);
  const int r = size / 2;
  std::vector<double> tmp(img.data.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * img.at(y, reflect101(x + i, img.width), c);
        tmp[img.index(y, x, c)] = acc;
      }
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] * tmp[img.index(reflect101(y + i, img.height), x, c)];
        out.at(y, x, c) = clamp_u8(acc);
      }
  return out;
}

Image ycbcr_noise(const Image& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double Y, cb, cr, r, g, b;
      rgb_to_ycbcr(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), Y, cb, cr);
      Y += normal(rng);
      cb += normal(rng);
      cr += normal(rng);
      ycbcr_to_rgb(Y, cb, cr, r, g, b);
      out.at(y, x, 0) = clamp_u8(r);
      out.at(y, x, 1) = clamp_u8(g);
      out.at(y, x, 2) = clamp_u8(b);
    }
  return out;
}

}  // namespace

Image degrade(const Image& image, const DegradationSpec& spec, std::uint64_t seed) {
  require(!image.empty(), ErrorKind::invalid_argument, "cannot degrade an empty image");
  require(spec.level >= 1 && spec.level <= 3, ErrorKind::invalid_argument, "degradation level must be 1, 2 or 3");
  switch (spec.kind) {
    case DegradationKind::gaussian_noise_ycbcr: return ycbcr_noise(image, spec.noise_sigma, seed);
    case DegradationKind::gaussian_blur: return blur(image, spec.kernel, spec.blur_sigma);
    case DegradationKind::jpeg: return image_io::decode_jpeg(image_io::encode_jpeg(image, spec.quality));
  }
  fail(ErrorKind::invalid_argument, "unknown degradation kind");
}

// ---- scoring --------------------------------------------------------------

std::vector<ScoredSample> score_dataset(const model::Model& model, const std::vector<const WorldSample*>& samples,
                                        const QuerySpec& query, const std::optional<DegradationSpec>& degradation,
                                        std::uint64_t degrade_seed) {
  if (query.kind == model::QueryKind::vip)
    require(query.vip != nullptr, ErrorKind::missing_prerequisite, "personalized scoring needs a VIP token");
  if (query.kind == model::QueryKind::reference)
    require(query.reference != nullptr, ErrorKind::missing_prerequisite, "one-shot scoring needs a reference image");
  std::vector<ScoredSample> out;
  out.reserve(samples.size());
  for (const auto* s : samples) {
    ScoredSample r;
    r.sample_id = s->sample_id;
    r.positive = s->label == synthworld::Label::real;
    r.generator = std::string(synthworld::to_string(s->generator));
    r.identity = s->identity_tag;
    if (degradation) {
      const Image img = degrade(s->image, *degradation, derive_seed(degrade_seed, s->sample_id));
      r.score = model.verdict_probability(img, query.kind, query.reference, query.vip, query.use_fused);
    } else {
      r.score = model.verdict_probability(s->image, query.kind, query.reference, query.vip, query.use_fused);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<const WorldSample*> vip_test_set(const world::World& world, const std::string& identity) {
  std::vector<const WorldSample*> out;
  for (const auto& s : world.samples())
    if (s.identity_tag == identity && s.split == world::Split::test) out.push_back(&s);
  require(!out.empty(), ErrorKind::insufficient_data, "identity " + identity + " has no test images");
  return out;
}

Metrics summarize(const std::vector<ScoredSample>& scored) {
  Metrics m;
  std::vector<ScoredSample> positives;
  std::map<std::string, std::vector<ScoredSample>> negatives;
  for (const auto& s : scored) {
    if (s.positive)
      positives.push_back(s);
    else
      negatives[s.generator].push_back(s);
  }
  for (const std::string g : {"swap", "synthesis"}) {
    const auto it = negatives.find(g);
    if (it == negatives.end()) continue;
    auto subset = positives;
    subset.insert(subset.end(), it->second.begin(), it->second.end());
    GeneratorMetrics gm;
    gm.generator = g;
    gm.auc = compute_auc(subset);
    gm.eer = compute_eer(subset).eer;
    gm.acc = compute_acc(subset);
    gm.positives = static_cast<int>(positives.size());
    gm.negatives = static_cast<int>(it->second.size());
    m.per_generator.push_back(gm);
  }
  require(!m.per_generator.empty(), ErrorKind::insufficient_data, "no forged samples to evaluate against");
  for (const auto& g : m.per_generator) {
    m.mean_auc += g.auc;
    m.mean_eer += g.eer;
    m.mean_acc += g.acc;
  }
  const double n = static_cast<double>(m.per_generator.size());
  m.mean_auc /= n;
  m.mean_eer /= n;
  m.mean_acc /= n;
  m.pooled_auc = compute_auc(scored);
  return m;
}

Metrics one_shot_evaluate(const model::Model& model, const WorldSample& reference,
                          const std::vector<const WorldSample*>& tests, std::vector<ScoredSample>* scored) {
  require(reference.label == synthworld::Label::real, ErrorKind::invalid_argument, "one-shot reference must be real");
  for (const auto* t : tests)
    require(t->nuisance_seed != reference.nuisance_seed, ErrorKind::invalid_argument,
            "one-shot reference " + reference.sample_id + " shares its nuisance seed with test sample " +
                t->sample_id);
  QuerySpec q;
  q.kind = model::QueryKind::reference;
  q.reference = &reference.image;
  auto s = score_dataset(model, tests, q);
  Metrics m = summarize(s);
  if (scored) *scored = std::move(s);
  return m;
}

// ---- reports --------------------------------------------------------------

void append_rows(std::vector<MetricRow>& rows, const std::string& suite, const std::string& variant,
                 const std::string& identity, const Metrics& m) {
  for (const auto& g : m.per_generator) {
    rows.push_back({suite, variant, identity, g.generator, "auc", g.auc});
    rows.push_back({suite, variant, identity, g.generator, "eer", g.eer});
    rows.push_back({suite, variant, identity, g.generator, "acc", g.acc});
  }
  rows.push_back({suite, variant, identity, "mean", "auc", m.mean_auc});
  rows.push_back({suite, variant, identity, "mean", "eer", m.mean_eer});
  rows.push_back({suite, variant, identity, "mean", "acc", m.mean_acc});
}

void write_report_jsonl(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  for (const auto& r : rows)
    out << nlohmann::json{{"suite", r.suite},         {"variant", r.variant}, {"identity", r.identity},
                          {"generator", r.generator}, {"metric", r.metric},   {"value", r.value}}
               .dump()
        << "\n";
}

std::string format_table(const std::vector<MetricRow>& rows) {
  std::size_t wv = 7, wi = 8, wg = 9;
  for (const auto& r : rows) {
    wv = std::max(wv, r.variant.size());
    wi = std::max(wi, r.identity.size());
    wg = std::max(wg, r.generator.size());
  }
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s  %-*s  %-*s  %-6s  %s\n", static_cast<int>(wv), "variant",
                static_cast<int>(wi), "identity", static_cast<int>(wg), "generator", "metric", "value");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %-*s  %-*s  %-6s  %.4f\n", static_cast<int>(wv), r.variant.c_str(),
                  static_cast<int>(wi), r.identity.c_str(), static_cast<int>(wg), r.generator.c_str(),
                  r.metric.c_str(), r.value);
    os << buf;
  }
  return os.str();
}

}  // namespace vipguard::evalharness
