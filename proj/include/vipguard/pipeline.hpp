#pragma once

// End-to-end orchestration on top of the stage modules. Everything lives
// under one output root:
//
//   world/                    manifest + rendered images
//   corpora/                  dfa.jsonl, did_general.jsonl, did_vip_<tag>.jsonl, embedder.json
//   checkpoints/stage1|stage2 backbone checkpoints
//   tokens/<tag>/             enrolled VIP tokens
//   registry.jsonl            enrolled identities with reference embeddings
//   cache/                    extra backbones and tokens trained by eval suites
//   reports/<suite>.{txt,jsonl}
//   records/<command>.json    reproducibility records
//
// Each product carries a stamp with the hash of the settings and inputs it
// was made from; a command whose stamp matches is skipped.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vipguard/config.hpp"
#include "vipguard/datagen.hpp"
#include "vipguard/evalharness.hpp"
#include "vipguard/model.hpp"
#include "vipguard/priors.hpp"
#include "vipguard/world.hpp"

namespace vipguard::pipeline {

struct Layout {
  std::filesystem::path root;

  std::filesystem::path world() const { return root / "world"; }
  std::filesystem::path corpora() const { return root / "corpora"; }
  std::filesystem::path checkpoint(int stage) const { return root / "checkpoints" / ("stage" + std::to_string(stage)); }
  std::filesystem::path token(const std::string& identity) const { return root / "tokens" / identity; }
  std::filesystem::path registry() const { return root / "registry.jsonl"; }
  std::filesystem::path cache() const { return root / "cache"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path records() const { return root / "records"; }
  std::filesystem::path degraded(const std::string& tag) const { return root / "degraded" / tag; }
};

/// Which backbone stages a model went through.
enum class Backbone { untrained, stage1, stage12 };
std::string_view to_string(Backbone backbone);

struct TokenRequest {
  std::string identity;
  int tokens = 32;
  bool annotation_free = false;
  int reference_limit = 0;  // 0 = config default
};

/// Outcome of an eval suite. `values` maps a variant key to one number per
/// seed (or a single number for single-seed quantities).
struct EvalReport {
  std::string suite;
  std::map<std::string, std::vector<double>> values;
  std::vector<evalharness::MetricRow> rows;

  double mean(const std::string& key) const;
  bool has(const std::string& key) const { return values.count(key) != 0; }
};

struct DetectResult {
  model::Detection detection;
  std::string identity;
  double selection_score = 0.0;  // similarity when auto-selected
};

class Pipeline {
 public:
  Pipeline(config::RunConfig config, std::ostream& log);
  ~Pipeline();

  const config::RunConfig& config() const { return config_; }
  const Layout& layout() const { return layout_; }

  // ---- commands --------------------------------------------------------
  void make_world();
  void build();
  /// Stage 1 or 2 of the shared backbone.
  void train(int stage);
  /// Stage 3 for one protected identity plus its registry entry.
  void enroll(const std::string& identity);
  /// `input` is a world sample id or an image file. Personalized when an
  /// identity is given, auto-selected from the registry when `auto_select`.
  DetectResult detect(const std::string& input, const std::optional<std::string>& identity, bool auto_select,
                      bool explain);
  /// Degraded copy of the world manifest under degraded/<kind>-<level>.
  std::filesystem::path degrade(const std::string& spec);
  /// ablation | oneshot | tokens | annotation | images | adaptive | robustness | full
  EvalReport eval(const std::string& suite);

  static const std::vector<std::string>& suites();

  // ---- shared state (loaded on first use) ------------------------------
  const world::World& world();
  const priors::Embedder& embedder(config::EmbedderKind kind);
  const std::vector<datagen::VQASample>& dfa();
  const std::vector<datagen::FacePairRecord>& did_general();
  std::vector<datagen::FacePairRecord> did_vip(const std::string& identity, int reference_limit = 0);

  /// Backbone for replica `replica` (0 is the run's own checkpoints). Loaded
  /// from its checkpoint when the stamp matches, trained otherwise.
  model::Model& backbone(Backbone kind, int replica);
  /// Stage-3 token for a backbone; cached on disk by content hash.
  model::VIPToken vip_token(model::Model& backbone, Backbone kind, int replica, const TokenRequest& request);

  std::uint64_t replica_seed(int replica) const;

 private:
  std::uint64_t world_key() const;
  std::uint64_t build_key() const;
  std::uint64_t backbone_key(Backbone kind, int replica) const;
  std::filesystem::path backbone_dir(Backbone kind, int replica) const;
  void require_built(const std::string& command);
  void write_record(const std::string& command, const nlohmann::json& details);
  void save_report(const EvalReport& report);

  void suite_ablation(EvalReport& report);
  void suite_oneshot(EvalReport& report);
  void suite_tokens(EvalReport& report);
  void suite_annotation(EvalReport& report);
  void suite_images(EvalReport& report);
  void suite_adaptive(EvalReport& report);
  void suite_robustness(EvalReport& report);

  /// Mean AUC over generators on the identity's test set; adds table rows.
  double personalized_auc(const model::Model& model, const model::VIPToken& token, const std::string& variant,
                          EvalReport& report);
  double oneshot_auc(const model::Model& model, const std::string& identity, const std::string& variant,
                     EvalReport& report);

  config::RunConfig config_;
  Layout layout_;
  std::ostream& log_;
  std::unique_ptr<world::World> world_;
  std::unique_ptr<priors::LearnedEmbedder> learned_;
  std::unique_ptr<priors::OracleEmbedder> oracle_;
  std::unique_ptr<std::vector<datagen::VQASample>> dfa_;
  std::unique_ptr<std::vector<datagen::FacePairRecord>> did_general_;
  std::map<std::pair<int, int>, std::unique_ptr<model::Model>> backbones_;
};

/// Output root: $VIPGUARD_OUT when set, else the configured `out`.
std::filesystem::path resolve_output_root(const config::RunConfig& config);

}  // namespace vipguard::pipeline
