#pragma once

// Toy multimodal detector: patch encoder, cross-attention fusion of a query
// block (reference tokens or a VIP token) with image tokens, and a small
// pre-LN causal decoder with low-rank adapters. Forward and backward passes
// are written out by hand in double precision.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vipguard/common.hpp"
#include "vipguard/text.hpp"

namespace vipguard::model {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct ModelConfig {
  int image_size = 64;  // max side; larger inputs are resized down to it
  int patch = 16;
  int width = 64;
  int heads = 4;
  int layers = 2;
  int ff = 256;
  int lora_rank = 16;
  double lora_alpha = 32.0;
  int max_text = 192;
  double head_init_std = 0.02;
  bool zero_head = false;  // uniform output distribution at init
  std::uint64_t seed = 0;

  int grid() const { return image_size / patch; }
  int max_tokens() const { return grid() * grid(); }
  int patch_dim() const { return patch * patch * 3; }
  void validate() const;
};

enum class ParamRole { base, adapter };
std::string_view to_string(ParamRole role);

struct Param {
  std::string name;
  ParamRole role = ParamRole::base;
  std::string group;  // encoder | decoder | head | cross_attention
  Mat value;
  Mat grad;
  bool trainable = false;
};

class ParamStore {
 public:
  Param& add(std::string name, ParamRole role, std::string group, Mat value);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  const Param* find(const std::string& name) const;
  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }

  void zero_grad();
  void set_trainable(const std::function<bool(const Param&)>& predicate);
  std::vector<std::string> trainable_names() const;
  /// Hash of the raw bytes of every parameter matching the predicate.
  std::uint64_t checksum(const std::function<bool(const Param&)>& predicate) const;
  std::uint64_t frozen_checksum() const;
  std::size_t count() const;

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

/// Learnable identity prompt: n x d.
struct VIPToken {
  std::string identity_tag;
  Mat mu;
};

/// Seeded N(0, std^2) init; n*d >= 2048 gives a tight empirical std.
VIPToken init_vip_token(int n, int d, std::uint64_t seed, double std = 0.02);

/// softmax(Q K^T / sqrt(d)) V with d the shared width. `weights` receives the
/// row-stochastic attention matrix.
Mat cross_attention(const Mat& q, const Mat& k, const Mat& v, Mat* weights = nullptr);

/// (p_yes, p_no) from the two verdict logits. Throws on non-finite input.
std::pair<double, double> yes_no_probability(double logit_yes, double logit_no);

/// Verdict for a probability: ties resolve to Yes.
inline bool verdict_is_yes(double p_yes) { return p_yes >= 0.5; }

/// Which query block precedes the image block.
enum class QueryKind { none, reference, vip };

/// One decoder call. `targets[t] != 0` marks token t as predicted from
/// position t-1 and counted in the loss.
struct DecodeInput {
  const Image* image = nullptr;
  QueryKind query = QueryKind::none;
  const Image* reference = nullptr;  // QueryKind::reference
  const Mat* vip = nullptr;          // QueryKind::vip
  bool use_fused = true;             // include g in the context
  std::vector<int> tokens;
  std::vector<std::uint8_t> targets;
};

struct Detection {
  bool yes = false;
  double p_yes = 0.5;
  std::string explanation;
};

class Model {
 public:
  Model(const ModelConfig& config, text::Vocabulary vocab);

  const ModelConfig& config() const { return config_; }
  const text::Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// T x d visual tokens. Resizes inputs whose longer side exceeds
  /// config.image_size; rejects sides not divisible by the patch size.
  Mat encode_image(const Image& image) const;

  /// Cross-attention with the model's projections: queries from
  /// `query_repr`, keys and values from `f_img`. The decoder sees each fused
  /// row added to the query row it came from.
  Mat fuse(const Mat& query_repr, const Mat& f_img) const;

  /// log p(x_t | x_<t, context) for each target position, in order.
  std::vector<double> decode_logprobs(const DecodeInput& input) const;

  /// Adds scale * d(-sum target logprobs) to every trainable parameter's
  /// gradient (and to *vip_grad when the query is a VIP token). Returns the
  /// unscaled sequence loss.
  double accumulate_gradients(const DecodeInput& input, double scale, Mat* vip_grad = nullptr);

  /// Logits over the vocabulary at the last position.
  Vec next_token_logits(const DecodeInput& input) const;

  /// p_yes from the verdict position of the standard verdict prompt.
  double verdict_probability(const Image& image, QueryKind query, const Image* reference, const Mat* vip,
                             bool use_fused = true) const;

  Detection detect(const Image& image, QueryKind query, const Image* reference, const Mat* vip,
                   bool explain = false, int max_tokens = 96) const;

  /// Token ids of "<bos> <verdict question> <answer>".
  std::vector<int> verdict_prompt() const;

 private:
  struct Cache;
  double run(const DecodeInput& input, Cache& cache, bool want_logprobs, std::vector<double>* logprobs,
             Vec* last_logits) const;
  void backward(const DecodeInput& input, Cache& cache, double scale, Mat* vip_grad);

  Mat effective(const std::string& base) const;
  void accumulate_weight_grad(const std::string& base, const Mat& dw);

  ModelConfig config_;
  text::Vocabulary vocab_;
  ParamStore params_;
};

/// Names of the projections carrying low-rank adapters.
std::vector<std::string> adapted_weights(const ModelConfig& config);

}  // namespace vipguard::model
