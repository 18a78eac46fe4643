#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. None of these call the code paths they check.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "vipguard/datagen.hpp"
#include "vipguard/model.hpp"
#include "vipguard/synthworld.hpp"
#include "vipguard/train.hpp"

namespace oracle {

using vipguard::model::Mat;

/// All-pairs concordance; ties count one half.
inline double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double hits = 0;
  for (double p : pos)
    for (double n : neg) hits += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return hits / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

/// Floor every part; whatever is left over goes to positives.
struct Counts {
  long long positive, different, forgery;
};
inline Counts split_by_ratio(long long total, long long a, long long b, long long c) {
  const long long sum = a + b + c;
  Counts out{0, (total * b) / sum, (total * c) / sum};
  out.positive = total - out.different - out.forgery;
  return out;
}

/// Grounding violations of one annotation against the attribute maps it was
/// written from: a phrase whose attribute is absent from either map, a
/// "differs : X versus Y" clause whose values disagree with the maps, or a
/// "match" claim over differing attributes.
inline int grounding_violations(const std::string& annotation, const vipguard::datagen::AttributeMap& ref,
                                const vipguard::datagen::AttributeMap& test) {
  int bad = 0;
  for (const auto& a : vipguard::synthworld::attribute_catalog()) {
    const std::string phrase(a.phrase);
    std::size_t pos = annotation.find(phrase);
    if (pos == std::string::npos) continue;
    if (!ref.count(a.id) || !test.count(a.id)) ++bad;
    const std::string head = "the " + phrase + " differs : ";
    for (pos = annotation.find(head); pos != std::string::npos; pos = annotation.find(head, pos + 1)) {
      const std::size_t start = pos + head.size();
      const std::size_t end = annotation.find(" .", start);
      const std::string clause = annotation.substr(start, end - start);
      const std::size_t v = clause.find(" versus ");
      if (v == std::string::npos || !ref.count(a.id) || !test.count(a.id)) {
        ++bad;
        continue;
      }
      if (clause.substr(0, v) != ref.at(a.id) || clause.substr(v + 8) != test.at(a.id) ||
          ref.at(a.id) == test.at(a.id))
        ++bad;
    }
  }
  if (annotation.find("all listed attributes match") != std::string::npos)
    for (const auto& [attr, value] : ref)
      if (test.count(attr) && test.at(attr) != value) ++bad;
  return bad;
}

/// Category by counting thresholds at or below the score.
inline int bucket(double score, const std::vector<double>& thresholds) {
  int k = 0;
  for (double t : thresholds) k += score >= t;
  return k;
}

/// Reads the 16 latent components back out of the laid-out geometry.
inline std::vector<double> invert_geometry(const vipguard::synthworld::FaceGeometry& g,
                                           const vipguard::synthworld::NuisanceParams& n) {
  const double squash = std::cos(n.yaw * 3.14159265358979323846 / 180.0);
  const double dy = 0.025 * n.pitch / 15.0;
  std::vector<double> c(16);
  c[0] = (g.face_rx / squash - 0.30) / 0.07;
  c[1] = (g.face_exponent - 2.6) / 0.9;
  c[2] = (g.eye_rx / squash - 0.065) / 0.035;
  c[3] = (g.eye_ry - 0.036) / 0.020;
  c[4] = (g.pouch_strength - 0.50) / 0.45;
  c[5] = (g.pouch_ry - 0.032) / 0.022;
  c[6] = (g.nose_half_width / squash - 0.065) / 0.045;
  c[7] = (g.nose_bottom - dy - 0.61) / 0.075;
  c[8] = (g.upper_lip - 0.036) / 0.030;
  c[9] = (g.lower_lip - 0.038) / 0.028;
  c[10] = (g.brow_thickness - 0.028) / 0.020;
  c[11] = (g.brow_strength - 0.55) / 0.40;
  c[12] = (g.mark_radius - 0.030) / 0.020;
  c[13] = (g.mark_strength - 0.55) / 0.45;
  c[14] = (g.glabella_length - 0.095) / 0.070;
  c[15] = (g.glabella_strength - 0.55) / 0.45;
  return c;
}

struct AttentionStats {
  double max_row_sum_error = 0;
  double max_permutation_error = 0;
  int hull_violations = 0;
};

/// Random Q, K, V (with K/V row counts and widths drawn per instance).
inline AttentionStats attention_properties(int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> rows(1, 12), width(1, 16);
  std::normal_distribution<double> normal(0.0, 2.0);
  AttentionStats s;
  for (int t = 0; t < instances; ++t) {
    const int nq = rows(rng), nk = rows(rng), d = width(rng);
    Mat q(nq, d), k(nk, d), v(nk, d);
    for (Mat* m : {&q, &k, &v})
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = normal(rng);
    Mat w;
    const Mat out = vipguard::model::cross_attention(q, k, v, &w);
    for (int i = 0; i < nq; ++i) s.max_row_sum_error = std::max(s.max_row_sum_error, std::abs(w.row(i).sum() - 1.0));
    for (int j = 0; j < d; ++j) {
      const double lo = v.col(j).minCoeff(), hi = v.col(j).maxCoeff();
      for (int i = 0; i < nq; ++i)
        if (out(i, j) < lo - 1e-12 || out(i, j) > hi + 1e-12) ++s.hull_violations;
    }
    std::vector<int> perm(nk);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat kp(nk, d), vp(nk, d);
    for (int i = 0; i < nk; ++i) {
      kp.row(i) = k.row(perm[i]);
      vp.row(i) = v.row(perm[i]);
    }
    const Mat outp = vipguard::model::cross_attention(q, kp, vp);
    s.max_permutation_error = std::max(s.max_permutation_error, (out - outp).cwiseAbs().maxCoeff());
  }
  return s;
}

struct GradientReport {
  double worst = 0;
  std::string worst_name;
  int checked = 0;
};

/// Central differences of the mean batch loss against the analytic gradient
/// for mu (when the batch uses a VIP token) and every trainable parameter.
/// Relative error is |fd - an| / max(|fd|, |an|, 1e-6).
inline GradientReport gradient_check(vipguard::model::Model& m, const std::vector<vipguard::model::DecodeInput>& batch,
                                     Mat* mu, int samples_per_param = 40, double h = 1e-5) {
  Mat mu_grad;
  if (mu) mu_grad = Mat::Zero(mu->rows(), mu->cols());
  vipguard::train::batch_gradient(m, batch, 0, mu ? &mu_grad : nullptr);
  auto loss = [&] {
    double total = 0;
    for (const auto& b : batch)
      for (double lp : m.decode_logprobs(b)) total -= lp;
    return total / static_cast<double>(batch.size());
  };
  GradientReport rep;
  auto check = [&](const std::string& name, Mat& value, const Mat& grad) {
    const Eigen::Index stride = std::max<Eigen::Index>(1, value.size() / samples_per_param);
    for (Eigen::Index i = 0; i < value.size(); i += stride) {
      const double orig = value.data()[i];
      value.data()[i] = orig + h;
      const double up = loss();
      value.data()[i] = orig - h;
      const double down = loss();
      value.data()[i] = orig;
      const double fd = (up - down) / (2 * h), an = grad.data()[i];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      ++rep.checked;
      if (rel > rep.worst) {
        rep.worst = rel;
        rep.worst_name = name;
      }
    }
  };
  if (mu) check("mu", *mu, mu_grad);
  for (auto& p : m.params().all())
    if (p.trainable) {
      const Mat g = p.grad;
      check(p.name, p.value, g);
    }
  return rep;
}

/// A small model with nonzero adapters and perturbed cross-attention so every
/// path carries gradient.
inline vipguard::model::Model small_model(std::uint64_t seed = 3) {
  vipguard::model::ModelConfig cfg;
  cfg.image_size = 32;
  cfg.patch = 16;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.ff = 32;
  cfg.lora_rank = 4;
  cfg.lora_alpha = 8;
  cfg.max_text = 192;
  cfg.seed = seed;
  cfg.head_init_std = 0.5;
  vipguard::model::Model m(cfg, vipguard::datagen::build_vocabulary());
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (auto& p : m.params().all()) {
    const bool perturb = p.name.find("lora_b") != std::string::npos || p.name.rfind("xattn.", 0) == 0;
    if (perturb)
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += normal(rng);
  }
  return m;
}

}  // namespace oracle
