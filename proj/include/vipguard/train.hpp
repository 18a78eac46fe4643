#pragma once

// Three-stage training: attribute VQA (adapters + head), general face pairs
// (+ cross-attention), and per-identity VIP token fitting with everything
// else frozen.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vipguard/datagen.hpp"
#include "vipguard/model.hpp"
#include "vipguard/world.hpp"

namespace vipguard::train {

enum class Schedule { cosine, constant };
std::string_view to_string(Schedule schedule);
Schedule parse_schedule(std::string_view text);

struct StageConfig {
  int stage = 1;
  int epochs = 2;
  int effective_batch = 72;
  int micro_batch = 0;  // 0 = whole effective batch at once
  double learning_rate = 3e-5;
  Schedule schedule = Schedule::cosine;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double fallback_lr = 0.1;  // stage 3 retry after divergence
  int max_steps = 0;         // 0 = epochs * ceil(N / batch)

  static StageConfig defaults(int stage);
  void validate() const;
};

/// lr * 0.5 * (1 + cos(pi * step / total)) for cosine, lr otherwise.
double scheduled_lr(const StageConfig& cfg, int step, int total);

struct TrainState {
  int step = 0;
  std::vector<std::pair<int, double>> loss_history;  // (step, mean loss)
  std::vector<std::string> trainable;
  std::uint64_t frozen_checksum = 0;
  bool diverged = false;  // stage 3 fell back to cfg.fallback_lr
  double used_lr = 0.0;
};

struct Sequence {
  std::vector<int> tokens;
  std::vector<std::uint8_t> targets;
};

/// <bos> question <answer> answer <eos>; targets = answer tokens + <eos>.
Sequence stage1_sequence(const text::Vocabulary& vocab, const datagen::VQASample& sample);
/// <bos> verdict-question <answer> verdict [<explain> annotation <eos>];
/// targets = verdict (+ annotation + <eos>).
Sequence pair_sequence(const text::Vocabulary& vocab, const datagen::FacePairRecord& record, bool annotation_free);
/// Training sequences for one pair: the explained form (unless
/// annotation_free) followed by the answer-only form used at evaluation.
std::vector<Sequence> pair_sequences(const text::Vocabulary& vocab, const datagen::FacePairRecord& record,
                                     bool annotation_free);

/// -sum of masked logprobs for one sequence; throws on an empty mask.
double sequence_loss(const std::vector<double>& logprobs, const std::vector<std::uint8_t>& mask);
/// Mean of sequence_loss over a batch.
double autoregressive_loss(const std::vector<std::vector<double>>& logprobs,
                           const std::vector<std::vector<std::uint8_t>>& masks);

/// Names trainable in each stage of the backbone (stage 3 trains only mu).
bool trainable_in_stage(const model::Param& p, int stage);
void scope_parameters(model::ParamStore& params, int stage);

using StepCallback = std::function<void(int step, int total, double loss)>;

TrainState train_stage1(model::Model& model, const std::vector<datagen::VQASample>& corpus,
                        const world::World& world, const StageConfig& cfg, const StepCallback& on_step = {});

TrainState train_stage2(model::Model& model, const std::vector<datagen::FacePairRecord>& corpus,
                        const world::World& world, const StageConfig& cfg, const StepCallback& on_step = {});

struct Stage3Options {
  std::string identity_tag;
  int tokens = 32;
  bool annotation_free = false;
  double init_std = 0.02;
};

model::VIPToken train_stage3(model::Model& model, const std::vector<datagen::FacePairRecord>& corpus,
                             const world::World& world, const StageConfig& cfg, const Stage3Options& options,
                             TrainState* state = nullptr, const StepCallback& on_step = {});

/// Runs one optimizer-free pass returning the gradient of the mean batch loss
/// (for accumulation checks). Grad of trainable params ends in Param::grad.
void batch_gradient(model::Model& model, const std::vector<model::DecodeInput>& batch, int micro_batch,
                    model::Mat* vip_grad = nullptr);

void write_loss_history(const std::filesystem::path& path, const TrainState& state);

}  // namespace vipguard::train
