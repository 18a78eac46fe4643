#include "vipguard/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

namespace vipguard::train {

using model::DecodeInput;
using model::Mat;
using model::Model;
using model::QueryKind;

std::string_view to_string(Schedule schedule) { return schedule == Schedule::cosine ? "cosine" : "constant"; }

Schedule parse_schedule(std::string_view text) {
  if (text == "cosine") return Schedule::cosine;
  if (text == "constant") return Schedule::constant;
  fail(ErrorKind::invalid_argument, "unknown schedule '" + std::string(text) + "'");
}

StageConfig StageConfig::defaults(int stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case 1: c.epochs = 2, c.effective_batch = 72, c.learning_rate = 3e-5; break;
    case 2: c.epochs = 1, c.effective_batch = 72, c.learning_rate = 3e-5; break;
    case 3: c.epochs = 1, c.effective_batch = 8, c.learning_rate = 1.0; break;
    default: fail(ErrorKind::invalid_argument, "stage must be 1, 2 or 3");
  }
  return c;
}

void StageConfig::validate() const {
  require(stage >= 1 && stage <= 3, ErrorKind::invalid_argument, "stage must be 1, 2 or 3");
  require(epochs >= 0, ErrorKind::invalid_argument, "epochs must be non-negative");
  require(effective_batch >= 1, ErrorKind::invalid_argument, "effective batch must be positive");
  require(micro_batch >= 0, ErrorKind::invalid_argument, "micro batch must be non-negative");
  require(learning_rate > 0 && std::isfinite(learning_rate), ErrorKind::invalid_argument,
          "learning rate must be positive");
  require(max_steps >= 0, ErrorKind::invalid_argument, "max_steps must be non-negative");
}

double scheduled_lr(const StageConfig& cfg, int step, int total) {
  if (cfg.schedule == Schedule::constant || total <= 0) return cfg.learning_rate;
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total));
}

// ---- sequences ------------------------------------------------------------

namespace {

void append(Sequence& s, const std::vector<int>& ids, bool target) {
  for (int id : ids) {
    s.tokens.push_back(id);
    s.targets.push_back(target ? 1 : 0);
  }
}

}  // namespace

Sequence stage1_sequence(const text::Vocabulary& vocab, const datagen::VQASample& sample) {
  Sequence s;
  append(s, {vocab.id(text::kBos)}, false);
  append(s, vocab.encode(sample.question), false);
  append(s, {vocab.id(text::kAnswer)}, false);
  append(s, vocab.encode(sample.answer), true);
  append(s, {vocab.id(text::kEos)}, true);
  return s;
}

Sequence pair_sequence(const text::Vocabulary& vocab, const datagen::FacePairRecord& record, bool annotation_free) {
  require(record.verdict == text::kYes || record.verdict == text::kNo, ErrorKind::format,
          "pair verdict must be Yes or No");
  Sequence s;
  append(s, {vocab.id(text::kBos)}, false);
  append(s, vocab.encode(text::kVerdictQuestion), false);
  append(s, {vocab.id(text::kAnswer)}, false);
  append(s, {vocab.id(record.verdict)}, true);
  if (annotation_free) return s;
  append(s, {vocab.id(text::kExplain)}, false);
  append(s, vocab.encode(record.annotation), true);
  append(s, {vocab.id(text::kEos)}, true);
  return s;
}

std::vector<Sequence> pair_sequences(const text::Vocabulary& vocab, const datagen::FacePairRecord& record,
                                     bool annotation_free) {
  std::vector<Sequence> out;
  if (!annotation_free) out.push_back(pair_sequence(vocab, record, false));
  out.push_back(pair_sequence(vocab, record, true));
  return out;
}

double sequence_loss(const std::vector<double>& logprobs, const std::vector<std::uint8_t>& mask) {
  require(logprobs.size() == mask.size(), ErrorKind::invalid_argument, "logprob/mask length mismatch");
  double loss = 0;
  bool any = false;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      loss -= logprobs[i];
      any = true;
    }
  require(any, ErrorKind::invalid_argument, "loss mask selects no tokens");
  return loss;
}

double autoregressive_loss(const std::vector<std::vector<double>>& logprobs,
                           const std::vector<std::vector<std::uint8_t>>& masks) {
  require(!logprobs.empty() && logprobs.size() == masks.size(), ErrorKind::invalid_argument,
          "batch of logprobs and masks must be nonempty and aligned");
  double total = 0;
  for (std::size_t i = 0; i < logprobs.size(); ++i) total += sequence_loss(logprobs[i], masks[i]);
  return total / static_cast<double>(logprobs.size());
}

// ---- parameter scoping ----------------------------------------------------

bool trainable_in_stage(const model::Param& p, int stage) {
  switch (stage) {
    case 1: return p.role == model::ParamRole::adapter || p.group == "head";
    case 2: return p.role == model::ParamRole::adapter || p.group == "head" || p.group == "cross_attention";
    default: return false;
  }
}

void scope_parameters(model::ParamStore& params, int stage) {
  params.set_trainable([stage](const model::Param& p) { return trainable_in_stage(p, stage); });
}

// ---- optimizer loop -------------------------------------------------------

namespace {

struct AdamSlot {
  Mat m, v;
};

class Adam {
 public:
  Adam(const StageConfig& cfg) : cfg_(cfg) {}

  void update(Mat& value, const Mat& grad, AdamSlot& slot, double lr) const {
    if (slot.m.size() == 0) {
      slot.m = Mat::Zero(value.rows(), value.cols());
      slot.v = Mat::Zero(value.rows(), value.cols());
    }
    slot.m = cfg_.beta1 * slot.m + (1 - cfg_.beta1) * grad;
    slot.v = cfg_.beta2 * slot.v + (1 - cfg_.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1 - std::pow(cfg_.beta1, t_), c2 = 1 - std::pow(cfg_.beta2, t_);
    value.array() -= lr * (slot.m.array() / c1) / ((slot.v.array() / c2).sqrt() + cfg_.eps);
  }
  void tick() { ++t_; }

 private:
  const StageConfig& cfg_;
  int t_ = 0;
};

int total_steps(const StageConfig& cfg, std::size_t n) {
  const int per_epoch = static_cast<int>((n + static_cast<std::size_t>(cfg.effective_batch) - 1) /
                                         static_cast<std::size_t>(cfg.effective_batch));
  const int steps = cfg.epochs * per_epoch;
  return cfg.max_steps > 0 ? std::min(steps, cfg.max_steps) : steps;
}

// Batch order for one epoch; fixed by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "epoch-order", static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::vector<std::size_t>> schedule_batches(std::size_t n, const StageConfig& cfg) {
  std::vector<std::vector<std::size_t>> batches;
  const int total = total_steps(cfg, n);
  for (int epoch = 0; static_cast<int>(batches.size()) < total; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    for (std::size_t i = 0; i < n && static_cast<int>(batches.size()) < total;
         i += static_cast<std::size_t>(cfg.effective_batch)) {
      const auto end = std::min(n, i + static_cast<std::size_t>(cfg.effective_batch));
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return batches;
}

// Mean-loss gradient over `batch`, accumulated micro-batch by micro-batch.
double accumulate_batch(Model& model, const std::vector<const DecodeInput*>& batch, int micro, Mat* vip_grad) {
  auto& params = model.params();
  params.zero_grad();
  const auto n = batch.size();
  const std::size_t step = micro > 0 ? static_cast<std::size_t>(micro) : n;
  if (step >= n) {
    double loss = 0;
    for (const auto* in : batch) loss += model.accumulate_gradients(*in, 1.0 / static_cast<double>(n), vip_grad);
    return loss / static_cast<double>(n);
  }
  // Each micro-batch produces its own mean gradient, weighted by its share.
  std::vector<Mat> acc;
  for (const auto& p : params.all()) acc.push_back(p.trainable ? Mat::Zero(p.value.rows(), p.value.cols()) : Mat());
  Mat vip_acc;
  if (vip_grad) vip_acc = Mat::Zero(vip_grad->rows(), vip_grad->cols());
  double loss = 0;
  for (std::size_t i = 0; i < n; i += step) {
    const auto end = std::min(n, i + step);
    const double m = static_cast<double>(end - i);
    params.zero_grad();
    Mat vg;
    if (vip_grad) vg = Mat::Zero(vip_grad->rows(), vip_grad->cols());
    double micro_loss = 0;
    for (std::size_t j = i; j < end; ++j) micro_loss += model.accumulate_gradients(*batch[j], 1.0 / m, vip_grad ? &vg : nullptr);
    const double w = m / static_cast<double>(n);
    for (std::size_t k = 0; k < acc.size(); ++k)
      if (params.all()[k].trainable) acc[k] += w * params.all()[k].grad;
    if (vip_grad) vip_acc += w * vg;
    loss += micro_loss;
  }
  for (std::size_t k = 0; k < acc.size(); ++k)
    if (params.all()[k].trainable) params.all()[k].grad = acc[k];
  if (vip_grad) *vip_grad += vip_acc;
  return loss / static_cast<double>(n);
}

TrainState run_backbone_stage(Model& model, const std::vector<DecodeInput>& examples, const StageConfig& cfg,
                              const StepCallback& on_step) {
  cfg.validate();
  require(!examples.empty(), ErrorKind::insufficient_data, "training corpus is empty");
  scope_parameters(model.params(), cfg.stage);
  TrainState state;
  state.trainable = model.params().trainable_names();
  state.frozen_checksum = model.params().frozen_checksum();
  state.used_lr = cfg.learning_rate;

  const auto batches = schedule_batches(examples.size(), cfg);
  const int total = static_cast<int>(batches.size());
  Adam adam(cfg);
  std::vector<AdamSlot> slots(model.params().all().size());
  for (int s = 0; s < total; ++s) {
    std::vector<const DecodeInput*> batch;
    for (auto i : batches[static_cast<std::size_t>(s)]) batch.push_back(&examples[i]);
    const double loss = accumulate_batch(model, batch, cfg.micro_batch, nullptr);
    require(std::isfinite(loss), ErrorKind::numerical, "stage " + std::to_string(cfg.stage) + " loss diverged");
    adam.tick();
    const double lr = scheduled_lr(cfg, s, total);
    auto& all = model.params().all();
    for (std::size_t k = 0; k < all.size(); ++k)
      if (all[k].trainable) adam.update(all[k].value, all[k].grad, slots[k], lr);
    state.step = s + 1;
    state.loss_history.emplace_back(s, loss);
    if (on_step) on_step(s + 1, total, loss);
  }
  model.params().zero_grad();
  require(model.params().frozen_checksum() == state.frozen_checksum, ErrorKind::numerical,
          "frozen parameters changed during stage " + std::to_string(cfg.stage));
  return state;
}

const Image& image_of(const world::World& world, const std::string& id) {
  const auto& s = world.at(id);
  require(!s.image.empty(), ErrorKind::missing_prerequisite, "sample " + id + " has no pixels loaded");
  return s.image;
}

}  // namespace

void batch_gradient(Model& model, const std::vector<DecodeInput>& batch, int micro_batch, Mat* vip_grad) {
  std::vector<const DecodeInput*> ptrs;
  for (const auto& b : batch) ptrs.push_back(&b);
  accumulate_batch(model, ptrs, micro_batch, vip_grad);
}

TrainState train_stage1(Model& model, const std::vector<datagen::VQASample>& corpus, const world::World& world,
                        const StageConfig& cfg, const StepCallback& on_step) {
  require(cfg.stage == 1, ErrorKind::invalid_argument, "stage-1 training needs a stage-1 config");
  require(!corpus.empty(), ErrorKind::insufficient_data, "attribute VQA corpus is empty");
  std::vector<DecodeInput> examples;
  examples.reserve(corpus.size());
  for (const auto& s : corpus) {
    require(s.image_refs.size() == 1, ErrorKind::format, "attribute VQA samples reference exactly one image");
    const auto seq = stage1_sequence(model.vocab(), s);
    DecodeInput in;
    in.image = &image_of(world, s.image_refs[0]);
    in.tokens = seq.tokens;
    in.targets = seq.targets;
    examples.push_back(std::move(in));
  }
  return run_backbone_stage(model, examples, cfg, on_step);
}

TrainState train_stage2(Model& model, const std::vector<datagen::FacePairRecord>& corpus, const world::World& world,
                        const StageConfig& cfg, const StepCallback& on_step) {
  require(cfg.stage == 2, ErrorKind::invalid_argument, "stage-2 training needs a stage-2 config");
  require(!corpus.empty(), ErrorKind::insufficient_data, "face pair corpus is empty");
  std::vector<DecodeInput> examples;
  examples.reserve(2 * corpus.size());
  for (const auto& r : corpus) {
    for (auto& seq : pair_sequences(model.vocab(), r, false)) {
      DecodeInput in;
      in.image = &image_of(world, r.test_id);
      in.query = QueryKind::reference;
      in.reference = &image_of(world, r.ref_id);
      in.tokens = std::move(seq.tokens);
      in.targets = std::move(seq.targets);
      examples.push_back(std::move(in));
    }
  }
  return run_backbone_stage(model, examples, cfg, on_step);
}

model::VIPToken train_stage3(Model& model, const std::vector<datagen::FacePairRecord>& corpus,
                             const world::World& world, const StageConfig& cfg, const Stage3Options& options,
                             TrainState* state_out, const StepCallback& on_step) {
  require(cfg.stage == 3, ErrorKind::invalid_argument, "stage-3 training needs a stage-3 config");
  cfg.validate();
  int positives = 0;
  std::vector<std::string> refs;
  for (const auto& r : corpus) {
    if (r.pair_type == datagen::PairType::pos_same_id) ++positives;
    refs.push_back(r.ref_id);
  }
  std::sort(refs.begin(), refs.end());
  refs.erase(std::unique(refs.begin(), refs.end()), refs.end());
  require(refs.size() >= 2 && positives > 0, ErrorKind::insufficient_data,
          "stage 3 needs at least 2 real VIP images (got " + std::to_string(refs.size()) + ")");

  model::VIPToken token = model::init_vip_token(options.tokens, model.config().width,
                                                derive_seed(cfg.seed, "vip-init:" + options.identity_tag),
                                                options.init_std);
  token.identity_tag = options.identity_tag;

  scope_parameters(model.params(), 3);
  TrainState state;
  state.frozen_checksum = model.params().frozen_checksum();
  state.trainable = {"vip.mu"};

  std::vector<DecodeInput> examples;
  for (const auto& r : corpus) {
    for (auto& seq : pair_sequences(model.vocab(), r, options.annotation_free)) {
      DecodeInput in;
      in.image = &image_of(world, r.test_id);
      in.query = QueryKind::vip;
      in.vip = &token.mu;
      in.tokens = std::move(seq.tokens);
      in.targets = std::move(seq.targets);
      examples.push_back(std::move(in));
    }
  }

  const Mat init = token.mu;
  const auto batches = schedule_batches(examples.size(), cfg);
  const int total = static_cast<int>(batches.size());
  double lr_base = cfg.learning_rate;
  for (int attempt = 0; attempt < 2; ++attempt) {
    token.mu = init;
    state.loss_history.clear();
    state.step = 0;
    StageConfig run_cfg = cfg;
    run_cfg.learning_rate = lr_base;
    Adam adam(run_cfg);
    AdamSlot slot;
    bool diverged = false;
    for (int s = 0; s < total; ++s) {
      std::vector<const DecodeInput*> batch;
      for (auto i : batches[static_cast<std::size_t>(s)]) batch.push_back(&examples[i]);
      Mat grad = Mat::Zero(token.mu.rows(), token.mu.cols());
      const double loss = accumulate_batch(model, batch, cfg.micro_batch, &grad);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        diverged = true;
        break;
      }
      adam.tick();
      adam.update(token.mu, grad, slot, scheduled_lr(run_cfg, s, total));
      if (!token.mu.allFinite()) {
        diverged = true;
        break;
      }
      state.step = s + 1;
      state.loss_history.emplace_back(s, loss);
      if (on_step) on_step(s + 1, total, loss);
    }
    state.used_lr = lr_base;
    if (!diverged) break;
    require(attempt == 0, ErrorKind::numerical, "stage 3 diverged even at the fallback learning rate");
    state.diverged = true;
    lr_base = cfg.fallback_lr;
  }
  model.params().zero_grad();
  require(model.params().frozen_checksum() == state.frozen_checksum, ErrorKind::numerical,
          "backbone parameters changed during stage 3");
  if (state_out) *state_out = state;
  return token;
}

void write_loss_history(const std::filesystem::path& path, const TrainState& state) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  for (const auto& [step, loss] : state.loss_history) out << nlohmann::json{{"step", step}, {"loss", loss}}.dump() << "\n";
}

}  // namespace vipguard::train
