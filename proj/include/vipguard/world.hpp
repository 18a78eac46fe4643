#pragma once

// A generated identity world: real images for every identity, forgeries for
// training pairs, and a held-out test split for the protected (VIP)
// identities. Serialized as a JSONL manifest plus one PPM per sample.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vipguard/synthworld.hpp"

namespace vipguard::world {

/// Format tag written into manifests and corpus headers.
inline constexpr std::string_view kWorldVersion = "synthworld-1";

struct WorldConfig {
  std::uint64_t seed = 1;
  int identities = 22;
  int vip_identities = 2;
  int reals_per_identity = 40;
  int vip_test_reals = 20;
  int general_forgeries_per_identity = 20;
  int vip_train_forgeries_per_real = 5;
  int vip_test_synthesis_per_real = 2;
  int image_size = synthworld::kDefaultImageSize;

  void validate() const;
};

enum class Role { general, vip };
enum class Split { train, test };

struct WorldSample {
  std::string sample_id;
  std::string identity_tag;
  std::uint64_t identity_seed = 0;
  std::uint64_t nuisance_seed = 0;
  synthworld::Label label = synthworld::Label::real;
  synthworld::Generator generator = synthworld::Generator::natural;
  std::string method = "natural";  // natural | swap:<region> | synthesis:k<k>
  Role role = Role::general;
  Split split = Split::train;
  std::string target_sample;  // real image a forgery was derived from
  std::uint64_t source_seed = 0;
  std::uint64_t perturb_seed = 0;
  int synthesis_k = 0;
  std::string path;  // relative to the manifest directory

  // Provenance materialized in memory (not serialized).
  synthworld::IdentityLatent latent;  // composite for forgeries
  synthworld::AttributeSet attributes;
  synthworld::NuisanceParams nuisance;
  Image image;
};

class World {
 public:
  World() = default;
  World(WorldConfig config, std::vector<WorldSample> samples);

  const WorldConfig& config() const { return config_; }
  const std::vector<WorldSample>& samples() const { return samples_; }
  const WorldSample& at(const std::string& sample_id) const;
  const WorldSample* find(const std::string& sample_id) const;

  std::vector<std::string> identity_tags(std::optional<Role> role = std::nullopt) const;
  std::vector<const WorldSample*> select(const std::string& identity_tag, synthworld::Label label,
                                         std::optional<Split> split = std::nullopt) const;
  std::vector<const WorldSample*> reals(Role role, Split split) const;
  bool empty() const { return samples_.empty(); }

 private:
  WorldConfig config_;
  std::vector<WorldSample> samples_;
  std::map<std::string, std::size_t> index_;
};

World generate_world(const WorldConfig& config);

/// Recomputes latent, attributes, nuisance and (optionally) pixels from the
/// serialized provenance fields.
void materialize(WorldSample& sample, int image_size, bool render = true);

std::string_view to_string(Role role);
std::string_view to_string(Split split);

/// Writes images and manifest.jsonl into `dir`. Idempotent for a fixed seed.
void save_world(const World& world, const std::filesystem::path& dir);
/// Loads a manifest; images are read from disk.
World load_world(const std::filesystem::path& dir);

std::uint64_t manifest_hash(const World& world);

}  // namespace vipguard::world
