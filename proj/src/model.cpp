#include "vipguard/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "vipguard/image_io.hpp"

namespace vipguard::model {

namespace {

constexpr double kLnEps = 1e-5;
constexpr int kTypeQuery = 0, kTypeImage = 1, kTypeFused = 2, kTypeText = 3;

Mat random_normal(int rows, int cols, double std, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std);
  Mat m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

// Row-wise layer norm without affine terms.
void ln_forward(const Mat& x, Mat& y, Vec& rstd) {
  y.resize(x.rows(), x.cols());
  rstd.resize(x.rows());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).sum() / n;
    const double var = (x.row(i).array() - mean).square().sum() / n;
    rstd(i) = 1.0 / std::sqrt(var + kLnEps);
    y.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
}

Mat ln_backward(const Mat& dy, const Mat& y, const Vec& rstd) {
  Mat dx(dy.rows(), dy.cols());
  const double n = static_cast<double>(dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mdy = dy.row(i).sum() / n;
    const double mdyy = dy.row(i).dot(y.row(i)) / n;
    dx.row(i) = rstd(i) * (dy.row(i).array() - mdy - y.row(i).array() * mdyy);
  }
  return dx;
}

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluK * (u + kGeluC * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluK * (u + kGeluC * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * u * u);
}

// Row softmax over the first `limit(i)` columns; the rest are zero.
void softmax_rows(Mat& s, bool causal) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Eigen::Index n = causal ? i + 1 : s.cols();
    const double m = s.row(i).head(n).maxCoeff();
    double z = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      s(i, j) = std::exp(s(i, j) - m);
      z += s(i, j);
    }
    s.row(i).head(n) /= z;
    if (n < s.cols()) s.row(i).tail(s.cols() - n).setZero();
  }
}

// dS from dP for P = softmax(S) row-wise.
Mat softmax_backward(const Mat& p, const Mat& dp) {
  Mat ds = p.cwiseProduct(dp);
  const Vec row = ds.rowwise().sum();
  ds -= p.cwiseProduct(row.replicate(1, p.cols()));
  return ds;
}

}  // namespace

void ModelConfig::validate() const {
  require(patch > 0 && image_size >= patch && image_size % patch == 0, ErrorKind::invalid_argument,
          "image_size must be a positive multiple of patch");
  require(width > 0 && heads > 0 && width % heads == 0, ErrorKind::invalid_argument,
          "width must be divisible by heads");
  require(layers >= 1 && ff >= 1 && lora_rank >= 1 && max_text >= 8, ErrorKind::invalid_argument,
          "bad decoder shape");
}

std::string_view to_string(ParamRole role) { return role == ParamRole::base ? "base" : "adapter"; }

// ---- parameter store ------------------------------------------------------

Param& ParamStore::add(std::string name, ParamRole role, std::string group, Mat value) {
  require(!index_.count(name), ErrorKind::invalid_argument, "duplicate parameter " + name);
  index_[name] = params_.size();
  Param p;
  p.name = std::move(name);
  p.role = role;
  p.group = std::move(group);
  p.grad = Mat::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::get(const std::string& name) {
  const auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::invalid_argument, "unknown parameter " + name);
  return params_[it->second];
}

const Param& ParamStore::get(const std::string& name) const {
  const auto* p = find(name);
  require(p != nullptr, ErrorKind::invalid_argument, "unknown parameter " + name);
  return *p;
}

const Param* ParamStore::find(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

void ParamStore::set_trainable(const std::function<bool(const Param&)>& predicate) {
  for (auto& p : params_) p.trainable = predicate(p);
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& p : params_)
    if (p.trainable) out.push_back(p.name);
  return out;
}

std::uint64_t ParamStore::checksum(const std::function<bool(const Param&)>& predicate) const {
  std::uint64_t h = fnv1a("params");
  for (const auto& p : params_) {
    if (!predicate(p)) continue;
    h = fnv1a(p.name, h);
    h = fnv1a_bytes(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double), h);
  }
  return h;
}

std::uint64_t ParamStore::frozen_checksum() const {
  return checksum([](const Param& p) { return !p.trainable; });
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

// ---- free functions -------------------------------------------------------

VIPToken init_vip_token(int n, int d, std::uint64_t seed, double std) {
  require(n > 0 && d > 0, ErrorKind::invalid_argument, "VIP token shape must be positive");
  return {"", random_normal(n, d, std, derive_seed(seed, "vip-token"))};
}

Mat cross_attention(const Mat& q, const Mat& k, const Mat& v, Mat* weights) {
  require(q.cols() == k.cols() && k.cols() == v.cols(), ErrorKind::invalid_argument,
          "cross attention width mismatch");
  require(k.rows() == v.rows() && k.rows() > 0 && q.rows() > 0, ErrorKind::invalid_argument,
          "cross attention needs matching, nonempty key and value rows");
  Mat s = (q * k.transpose()) / std::sqrt(static_cast<double>(q.cols()));
  softmax_rows(s, false);
  Mat out = s * v;
  if (weights) *weights = std::move(s);
  return out;
}

std::pair<double, double> yes_no_probability(double logit_yes, double logit_no) {
  require(std::isfinite(logit_yes) && std::isfinite(logit_no), ErrorKind::numerical, "non-finite verdict logits");
  const double p_yes = 1.0 / (1.0 + std::exp(logit_no - logit_yes));
  return {p_yes, 1.0 - p_yes};
}

std::vector<std::string> adapted_weights(const ModelConfig& config) {
  std::vector<std::string> out = {"enc.patch"};
  for (int l = 0; l < config.layers; ++l)
    for (const char* w : {"wq", "wk", "wv", "wo", "w1", "w2"}) out.push_back("dec.l" + std::to_string(l) + "." + w);
  return out;
}

// ---- model ----------------------------------------------------------------

Model::Model(const ModelConfig& config, text::Vocabulary vocab) : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  require(vocab_.size() > 0, ErrorKind::invalid_argument, "empty vocabulary");
  for (auto t : {text::kBos, text::kEos, text::kAnswer, text::kExplain, text::kYes, text::kNo})
    require(vocab_.contains(t), ErrorKind::invalid_argument, "vocabulary lacks " + std::string(t));
  const int d = config_.width, P = config_.patch_dim(), r = config_.lora_rank, V = vocab_.size();
  const auto seed = config_.seed;
  auto normal = [&](const std::string& name, int rows, int cols, double std) {
    return random_normal(rows, cols, std, derive_seed(seed, name));
  };
  auto adapter = [&](const std::string& base, const std::string& group, int out, int in) {
    params_.add(base + ".lora_a", ParamRole::adapter, group, normal(base + ".lora_a", r, in, 1.0 / std::sqrt(in)));
    params_.add(base + ".lora_b", ParamRole::adapter, group, Mat::Zero(out, r));
  };

  params_.add("enc.patch", ParamRole::base, "encoder", normal("enc.patch", d, P, 1.0 / std::sqrt(P)));
  adapter("enc.patch", "encoder", d, P);
  params_.add("enc.pos", ParamRole::base, "encoder", normal("enc.pos", config_.max_tokens(), d, 0.5));

  params_.add("dec.tok", ParamRole::base, "decoder", normal("dec.tok", V, d, 1.0));
  params_.add("dec.pos", ParamRole::base, "decoder", normal("dec.pos", config_.max_text, d, 0.5));
  params_.add("dec.type", ParamRole::base, "decoder", normal("dec.type", 4, d, 0.5));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l) + ".";
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      params_.add(p + w, ParamRole::base, "decoder", normal(p + w, d, d, 1.0 / std::sqrt(d)));
      adapter(p + w, "decoder", d, d);
    }
    params_.add(p + "w1", ParamRole::base, "decoder", normal(p + "w1", config_.ff, d, 1.0 / std::sqrt(d)));
    adapter(p + "w1", "decoder", config_.ff, d);
    params_.add(p + "b1", ParamRole::base, "decoder", Mat::Zero(config_.ff, 1));
    params_.add(p + "w2", ParamRole::base, "decoder", normal(p + "w2", d, config_.ff, 1.0 / std::sqrt(config_.ff)));
    adapter(p + "w2", "decoder", d, config_.ff);
    params_.add(p + "b2", ParamRole::base, "decoder", Mat::Zero(d, 1));
  }
  params_.add("head.w", ParamRole::base, "head",
              config_.zero_head ? Mat::Zero(V, d) : normal("head.w", V, d, config_.head_init_std));
  params_.add("head.b", ParamRole::base, "head", Mat::Zero(V, 1));
  for (const char* w : {"xattn.wq", "xattn.wk", "xattn.wv"})
    params_.add(w, ParamRole::base, "cross_attention",
                (std::string_view(w) == "xattn.wv" ? -1.0 : 1.0) * Mat::Identity(d, d));
}

Mat Model::effective(const std::string& base) const {
  const auto& w = params_.get(base).value;
  const auto* a = params_.find(base + ".lora_a");
  if (!a) return w;
  const auto& b = params_.get(base + ".lora_b").value;
  if (b.isZero(0.0)) return w;  // zero-initialized adapter leaves the base untouched
  return w + (config_.lora_alpha / config_.lora_rank) * b * a->value;
}

void Model::accumulate_weight_grad(const std::string& base, const Mat& dw) {
  auto& w = params_.get(base);
  if (w.trainable) w.grad += dw;
  auto* a = params_.find(base + ".lora_a");
  if (!a) return;
  auto& pa = params_.get(base + ".lora_a");
  auto& pb = params_.get(base + ".lora_b");
  const double s = config_.lora_alpha / config_.lora_rank;
  if (pb.trainable) pb.grad += s * dw * pa.value.transpose();
  if (pa.trainable) pa.grad += s * pb.value.transpose() * dw;
}

namespace {

struct EncodeCache {
  Mat patches;  // T x P normalized pixels
};

struct LayerCache {
  Mat x, xn, q, k, v, o, x1, x1n, u, a;
  Vec rstd1, rstd2;
  std::vector<Mat> probs;
};

bool needs_grad(const ParamStore& ps, const std::string& base) {
  if (ps.get(base).trainable) return true;
  const auto* a = ps.find(base + ".lora_a");
  const auto* b = ps.find(base + ".lora_b");
  return (a && a->trainable) || (b && b->trainable);
}

}  // namespace

struct Model::Cache {
  EncodeCache img, ref;
  Mat f_img, query;  // query block rows (reference tokens or VIP token)
  Mat cq, ck, cv, cprobs, g;
  int q_rows = 0, t_rows = 0, g_rows = 0, s_rows = 0;
  std::map<std::string, Mat> weff;
  std::vector<LayerCache> layers;
  Mat x_final, fn;
  Vec rstd_final;
  std::vector<Eigen::Index> target_rows;
  std::vector<int> target_ids;
  Mat target_probs;  // softmax at target rows
};

namespace {

Mat patchify(const Image& input, const ModelConfig& cfg, std::vector<int>& pos_index) {
  require(input.width > 0 && input.height > 0 &&
              input.data.size() == static_cast<std::size_t>(input.width) * input.height * 3,
          ErrorKind::invalid_argument, "malformed image buffer");
  Image img = input;
  const int side = std::max(img.width, img.height);
  if (side > cfg.image_size) {
    const double scale = static_cast<double>(cfg.image_size) / side;
    img = image_io::resize(img, std::max(1, static_cast<int>(std::lround(img.width * scale))),
                           std::max(1, static_cast<int>(std::lround(img.height * scale))));
  }
  require(img.width % cfg.patch == 0 && img.height % cfg.patch == 0, ErrorKind::invalid_argument,
          "image " + std::to_string(img.width) + "x" + std::to_string(img.height) + " is not divisible by patch " +
              std::to_string(cfg.patch));
  double mean = 0, sq = 0;
  for (auto v : img.data) mean += v;
  mean /= static_cast<double>(img.data.size());
  for (auto v : img.data) sq += (v - mean) * (v - mean);
  const double sd = std::max(1.0, std::sqrt(sq / static_cast<double>(img.data.size())));
  const int gw = img.width / cfg.patch, gh = img.height / cfg.patch;
  Mat patches(gw * gh, cfg.patch_dim());
  pos_index.assign(static_cast<std::size_t>(gw * gh), 0);
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c) {
      const int row = r * gw + c;
      pos_index[static_cast<std::size_t>(row)] = r * cfg.grid() + c;
      int k = 0;
      for (int y = 0; y < cfg.patch; ++y)
        for (int x = 0; x < cfg.patch; ++x)
          for (int ch = 0; ch < 3; ++ch)
            patches(row, k++) = (img.at(r * cfg.patch + y, c * cfg.patch + x, ch) - mean) / sd;
    }
  return patches;
}

}  // namespace

Mat Model::encode_image(const Image& image) const {
  std::vector<int> pos;
  const Mat patches = patchify(image, config_, pos);
  Mat f = patches * effective("enc.patch").transpose();
  const auto& pe = params_.get("enc.pos").value;
  for (Eigen::Index i = 0; i < f.rows(); ++i) f.row(i) += pe.row(pos[static_cast<std::size_t>(i)]);
  return f;
}

Mat Model::fuse(const Mat& query_repr, const Mat& f_img) const {
  require(query_repr.cols() == config_.width && f_img.cols() == config_.width, ErrorKind::invalid_argument,
          "fuse inputs must have model width");
  return cross_attention(query_repr * params_.get("xattn.wq").value.transpose(),
                         f_img * params_.get("xattn.wk").value.transpose(),
                         f_img * params_.get("xattn.wv").value.transpose());
}

double Model::run(const DecodeInput& in, Cache& c, bool want_logprobs, std::vector<double>* logprobs,
                  Vec* last_logits) const {
  const int d = config_.width, H = config_.heads, dh = d / H;
  require(in.image != nullptr, ErrorKind::invalid_argument, "decode needs an input image");
  require(!in.tokens.empty(), ErrorKind::invalid_argument, "empty token sequence");
  require(static_cast<int>(in.tokens.size()) <= config_.max_text, ErrorKind::invalid_argument,
          "token sequence longer than max_text");
  require(in.targets.empty() || in.targets.size() == in.tokens.size(), ErrorKind::invalid_argument,
          "target mask length mismatch");
  for (int t : in.tokens)
    require(t >= 0 && t < vocab_.size(), ErrorKind::invalid_argument, "unknown token id " + std::to_string(t));

  for (const auto& name : adapted_weights(config_)) c.weff[name] = effective(name);

  std::vector<int> pos;
  c.img.patches = patchify(*in.image, config_, pos);
  c.f_img = c.img.patches * c.weff["enc.patch"].transpose();
  const auto& pe = params_.get("enc.pos").value;
  for (Eigen::Index i = 0; i < c.f_img.rows(); ++i) c.f_img.row(i) += pe.row(pos[static_cast<std::size_t>(i)]);

  c.q_rows = 0;
  if (in.query == QueryKind::reference) {
    require(in.reference != nullptr, ErrorKind::invalid_argument, "reference query without a reference image");
    std::vector<int> rpos;
    c.ref.patches = patchify(*in.reference, config_, rpos);
    c.query = c.ref.patches * c.weff["enc.patch"].transpose();
    for (Eigen::Index i = 0; i < c.query.rows(); ++i) c.query.row(i) += pe.row(rpos[static_cast<std::size_t>(i)]);
  } else if (in.query == QueryKind::vip) {
    require(in.vip != nullptr && in.vip->rows() > 0 && in.vip->cols() == d, ErrorKind::invalid_argument,
            "VIP token missing or of the wrong width");
    c.query = *in.vip;
  }
  if (in.query != QueryKind::none) c.q_rows = static_cast<int>(c.query.rows());
  c.t_rows = static_cast<int>(c.f_img.rows());
  c.g_rows = 0;
  if (in.query != QueryKind::none && in.use_fused) {
    c.cq = c.query * params_.get("xattn.wq").value.transpose();
    c.ck = c.f_img * params_.get("xattn.wk").value.transpose();
    c.cv = c.f_img * params_.get("xattn.wv").value.transpose();
    c.g = cross_attention(c.cq, c.ck, c.cv, &c.cprobs);
    c.g_rows = static_cast<int>(c.g.rows());
  }
  c.s_rows = static_cast<int>(in.tokens.size());
  const int ctx = c.q_rows + c.t_rows + c.g_rows;
  const int L = ctx + c.s_rows;

  const auto& type = params_.get("dec.type").value;
  const auto& tok = params_.get("dec.tok").value;
  const auto& tpos = params_.get("dec.pos").value;
  Mat x(L, d);
  int row = 0;
  for (int i = 0; i < c.q_rows; ++i, ++row) x.row(row) = c.query.row(i) + type.row(kTypeQuery);
  for (int i = 0; i < c.t_rows; ++i, ++row) x.row(row) = c.f_img.row(i) + type.row(kTypeImage);
  // Fused rows carry their query row as a residual, so each row starts out as
  // the query minus its attended image content (xattn.wv = -I at init).
  for (int i = 0; i < c.g_rows; ++i, ++row) x.row(row) = c.query.row(i) + c.g.row(i) + type.row(kTypeFused);
  for (int i = 0; i < c.s_rows; ++i, ++row)
    x.row(row) = tok.row(in.tokens[static_cast<std::size_t>(i)]) + tpos.row(i) + type.row(kTypeText);

  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  c.layers.assign(static_cast<std::size_t>(config_.layers), {});
  for (int l = 0; l < config_.layers; ++l) {
    auto& lc = c.layers[static_cast<std::size_t>(l)];
    const std::string p = "dec.l" + std::to_string(l) + ".";
    lc.x = x;
    ln_forward(x, lc.xn, lc.rstd1);
    lc.q = lc.xn * c.weff[p + "wq"].transpose();
    lc.k = lc.xn * c.weff[p + "wk"].transpose();
    lc.v = lc.xn * c.weff[p + "wv"].transpose();
    lc.o.resize(L, d);
    lc.probs.resize(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
      Mat s = lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose() * inv;
      softmax_rows(s, true);
      lc.o.middleCols(h * dh, dh) = s * lc.v.middleCols(h * dh, dh);
      lc.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    lc.x1 = x + lc.o * c.weff[p + "wo"].transpose();
    ln_forward(lc.x1, lc.x1n, lc.rstd2);
    lc.u = lc.x1n * c.weff[p + "w1"].transpose();
    lc.u.rowwise() += params_.get(p + "b1").value.col(0).transpose();
    lc.a = lc.u.unaryExpr([](double v) { return gelu(v); });
    x = lc.x1 + lc.a * c.weff[p + "w2"].transpose();
    x.rowwise() += params_.get(p + "b2").value.col(0).transpose();
  }
  c.x_final = x;
  ln_forward(x, c.fn, c.rstd_final);

  const auto& hw = params_.get("head.w").value;
  const auto& hb = params_.get("head.b").value;
  if (last_logits) *last_logits = hw * c.fn.row(L - 1).transpose() + hb.col(0);

  c.target_rows.clear();
  c.target_ids.clear();
  double loss = 0;
  if (!want_logprobs) return loss;
  for (int t = 1; t < c.s_rows; ++t) {
    if (in.targets.empty() || !in.targets[static_cast<std::size_t>(t)]) continue;
    c.target_rows.push_back(ctx + t - 1);
    c.target_ids.push_back(in.tokens[static_cast<std::size_t>(t)]);
  }
  require(in.targets.empty() || in.targets[0] == 0, ErrorKind::invalid_argument, "first token cannot be a target");
  c.target_probs.resize(static_cast<Eigen::Index>(c.target_rows.size()), vocab_.size());
  for (std::size_t i = 0; i < c.target_rows.size(); ++i) {
    Vec logits = hw * c.fn.row(c.target_rows[i]).transpose() + hb.col(0);
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    const double lp = logits(c.target_ids[i]) - lse;
    if (logprobs) logprobs->push_back(lp);
    loss -= lp;
    c.target_probs.row(static_cast<Eigen::Index>(i)) = (logits.array() - lse).exp().transpose();
  }
  return loss;
}

void Model::backward(const DecodeInput& in, Cache& c, double scale, Mat* vip_grad) {
  const int d = config_.width, H = config_.heads, dh = d / H;
  const int ctx = c.q_rows + c.t_rows + c.g_rows;
  const int L = ctx + c.s_rows;
  auto& hw = params_.get("head.w");
  auto& hb = params_.get("head.b");

  Mat dfn = Mat::Zero(L, d);
  for (std::size_t i = 0; i < c.target_rows.size(); ++i) {
    Vec dlogits = scale * c.target_probs.row(static_cast<Eigen::Index>(i)).transpose();
    dlogits(c.target_ids[i]) -= scale;
    const auto r = c.target_rows[i];
    if (hw.trainable) hw.grad += dlogits * c.fn.row(r);
    if (hb.trainable) hb.grad.col(0) += dlogits;
    dfn.row(r) += (hw.value.transpose() * dlogits).transpose();
  }
  Mat dx = ln_backward(dfn, c.fn, c.rstd_final);

  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = config_.layers - 1; l >= 0; --l) {
    auto& lc = c.layers[static_cast<std::size_t>(l)];
    const std::string p = "dec.l" + std::to_string(l) + ".";
    // Feed-forward branch.
    const Mat& dz = dx;
    if (needs_grad(params_, p + "w2")) accumulate_weight_grad(p + "w2", dz.transpose() * lc.a);
    Mat du = (dz * c.weff[p + "w2"]).cwiseProduct(lc.u.unaryExpr([](double v) { return gelu_grad(v); }));
    if (needs_grad(params_, p + "w1")) accumulate_weight_grad(p + "w1", du.transpose() * lc.x1n);
    Mat dx1 = dx + ln_backward(du * c.weff[p + "w1"], lc.x1n, lc.rstd2);
    // Attention branch.
    if (needs_grad(params_, p + "wo")) accumulate_weight_grad(p + "wo", dx1.transpose() * lc.o);
    const Mat d_o = dx1 * c.weff[p + "wo"];
    Mat dq(L, d), dk(L, d), dv(L, d);
    for (int h = 0; h < H; ++h) {
      const Mat& pr = lc.probs[static_cast<std::size_t>(h)];
      const auto doh = d_o.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh) = pr.transpose() * doh;
      const Mat ds = softmax_backward(pr, doh * lc.v.middleCols(h * dh, dh).transpose()) * inv;
      dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh);
    }
    if (needs_grad(params_, p + "wq")) accumulate_weight_grad(p + "wq", dq.transpose() * lc.xn);
    if (needs_grad(params_, p + "wk")) accumulate_weight_grad(p + "wk", dk.transpose() * lc.xn);
    if (needs_grad(params_, p + "wv")) accumulate_weight_grad(p + "wv", dv.transpose() * lc.xn);
    const Mat dxn = dq * c.weff[p + "wq"] + dk * c.weff[p + "wk"] + dv * c.weff[p + "wv"];
    dx = dx1 + ln_backward(dxn, lc.xn, lc.rstd1);
  }

  // Context rows: [query | image | fused | text].
  Mat dquery = c.q_rows ? Mat(dx.topRows(c.q_rows)) : Mat();
  Mat dfimg = dx.middleRows(c.q_rows, c.t_rows);
  if (c.g_rows) {
    const Mat dg = dx.middleRows(c.q_rows + c.t_rows, c.g_rows);
    auto& wq = params_.get("xattn.wq");
    auto& wk = params_.get("xattn.wk");
    auto& wv = params_.get("xattn.wv");
    const double sc = 1.0 / std::sqrt(static_cast<double>(d));
    const Mat dcv = c.cprobs.transpose() * dg;
    const Mat ds = softmax_backward(c.cprobs, dg * c.cv.transpose()) * sc;
    const Mat dcq = ds * c.ck;
    const Mat dck = ds.transpose() * c.cq;
    if (wq.trainable) wq.grad += dcq.transpose() * c.query;
    if (wk.trainable) wk.grad += dck.transpose() * c.f_img;
    if (wv.trainable) wv.grad += dcv.transpose() * c.f_img;
    dquery += dcq * wq.value;
    dquery += dg;
    dfimg += dck * wk.value + dcv * wv.value;
  }
  if (in.query == QueryKind::vip && vip_grad) {
    require(vip_grad->rows() == dquery.rows() && vip_grad->cols() == dquery.cols(), ErrorKind::invalid_argument,
            "VIP gradient buffer has the wrong shape");
    *vip_grad += dquery;
  }
  if (needs_grad(params_, "enc.patch")) {
    Mat dwp = dfimg.transpose() * c.img.patches;
    if (in.query == QueryKind::reference) dwp += dquery.transpose() * c.ref.patches;
    accumulate_weight_grad("enc.patch", dwp);
  }
}

std::vector<double> Model::decode_logprobs(const DecodeInput& input) const {
  require(!input.targets.empty() && std::any_of(input.targets.begin(), input.targets.end(), [](auto v) { return v; }),
          ErrorKind::invalid_argument, "decode_logprobs needs at least one target position");
  Cache c;
  std::vector<double> out;
  run(input, c, true, &out, nullptr);
  return out;
}

double Model::accumulate_gradients(const DecodeInput& input, double scale, Mat* vip_grad) {
  require(!input.targets.empty() && std::any_of(input.targets.begin(), input.targets.end(), [](auto v) { return v; }),
          ErrorKind::invalid_argument, "loss mask is empty");
  Cache c;
  const double loss = run(input, c, true, nullptr, nullptr);
  backward(input, c, scale, vip_grad);
  return loss;
}

Vec Model::next_token_logits(const DecodeInput& input) const {
  Cache c;
  Vec logits;
  run(input, c, false, nullptr, &logits);
  return logits;
}

std::vector<int> Model::verdict_prompt() const {
  std::vector<int> ids = {vocab_.id(text::kBos)};
  for (int t : vocab_.encode(text::kVerdictQuestion)) ids.push_back(t);
  ids.push_back(vocab_.id(text::kAnswer));
  return ids;
}

double Model::verdict_probability(const Image& image, QueryKind query, const Image* reference, const Mat* vip,
                                  bool use_fused) const {
  DecodeInput in;
  in.image = &image;
  in.query = query;
  in.reference = reference;
  in.vip = vip;
  in.use_fused = use_fused;
  in.tokens = verdict_prompt();
  const Vec logits = next_token_logits(in);
  return yes_no_probability(logits(vocab_.id(text::kYes)), logits(vocab_.id(text::kNo))).first;
}

Detection Model::detect(const Image& image, QueryKind query, const Image* reference, const Mat* vip, bool explain,
                        int max_tokens) const {
  Detection det;
  det.p_yes = verdict_probability(image, query, reference, vip);
  det.yes = verdict_is_yes(det.p_yes);
  if (!explain) return det;
  DecodeInput in;
  in.image = &image;
  in.query = query;
  in.reference = reference;
  in.vip = vip;
  in.tokens = verdict_prompt();
  in.tokens.push_back(vocab_.id(det.yes ? text::kYes : text::kNo));
  in.tokens.push_back(vocab_.id(text::kExplain));
  const int eos = vocab_.id(text::kEos);
  std::vector<int> generated;
  while (static_cast<int>(generated.size()) < max_tokens && static_cast<int>(in.tokens.size()) < config_.max_text) {
    const Vec logits = next_token_logits(in);
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    if (static_cast<int>(best) == eos) break;
    generated.push_back(static_cast<int>(best));
    in.tokens.push_back(static_cast<int>(best));
  }
  det.explanation = vocab_.decode(generated);
  return det;
}

}  // namespace vipguard::model
