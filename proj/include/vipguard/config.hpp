#pragma once

// Run configuration: a flat "key = value" file ('#' starts a comment) mapped
// onto the typed settings of every stage. Unknown keys are rejected so a typo
// never silently falls back to a default.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vipguard/datagen.hpp"
#include "vipguard/model.hpp"
#include "vipguard/train.hpp"
#include "vipguard/world.hpp"

namespace vipguard::config {

class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& origin = "<text>");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

  /// Keys present but never read.
  std::vector<std::string> unread() const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
  std::map<std::string, std::string> origins_;
  mutable std::set<std::string> read_;
};

enum class EmbedderKind { learned, oracle };
std::string_view to_string(EmbedderKind kind);

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "runs/default";

  world::WorldConfig world;

  int dfa_k = 1;
  // Samples per answer format; -1 = every (image, tuple) combination.
  int dfa_multiple_choice = 1500;
  int dfa_short_answer = 1500;
  int dfa_long_answer = 300;
  bool dfa_include_vip = false;

  int did_general_total = 4000;
  datagen::Ratio did_general_ratio{2, 1, 1};
  int did_vip_total = 220;
  datagen::Ratio did_vip_ratio{1, 5, 5};
  int did_reference_limit = 0;  // 0 = every training real
  EmbedderKind embedder = EmbedderKind::learned;

  model::ModelConfig model;

  train::StageConfig stage1 = train::StageConfig::defaults(1);
  train::StageConfig stage2 = train::StageConfig::defaults(2);
  train::StageConfig stage3 = train::StageConfig::defaults(3);
  int vip_tokens = 32;
  bool annotation_free = false;

  int eval_seeds = 3;
  std::vector<int> eval_token_sweep{4, 32, 128};
  int eval_token_sweep_seeds = 1;
  int eval_few_images = 3;
  int eval_oneshot_references = 8;  // one-shot AUC is averaged over this many references

  /// Reads every known key (missing ones keep their defaults) and rejects
  /// unknown ones.
  static RunConfig from(const KeyValues& kv);
  static RunConfig load(const std::filesystem::path& path);

  /// Every setting as key/value text, keys sorted.
  std::map<std::string, std::string> to_map() const;
  /// Canonical text of the keys starting with any of the prefixes (all keys
  /// when empty).
  std::string canonical(const std::vector<std::string>& prefixes = {}) const;
  std::uint64_t hash(const std::vector<std::string>& prefixes = {}) const;

  void validate() const;
};

datagen::Ratio parse_ratio(std::string_view text);
std::string format_ratio(const datagen::Ratio& ratio);

}  // namespace vipguard::config
