#pragma once

// Global facial prior: face embedders, cosine similarity, and the registry of
// enrolled VIP identities used for adaptive token selection.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vipguard/common.hpp"
#include "vipguard/synthworld.hpp"

namespace vipguard::priors {

inline constexpr int kEmbeddingDim = 32;

using Embedding = Eigen::VectorXd;

/// An image with optional generator provenance.
struct FaceInput {
  const Image* image = nullptr;
  const synthworld::IdentityLatent* latent = nullptr;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  /// Unit-norm embedding; deterministic.
  virtual Embedding embed(const FaceInput& face) const = 0;
};

/// Reads the identity latent from provenance: normalize(M * latent) with M a
/// seeded matrix with orthonormal columns.
class OracleEmbedder final : public Embedder {
 public:
  explicit OracleEmbedder(std::uint64_t seed = 0, int dim = kEmbeddingDim);
  std::string name() const override { return "oracle"; }
  Embedding embed(const FaceInput& face) const override;

 private:
  Eigen::MatrixXd basis_;
};

/// Small metric embedder over downsampled grayscale pixels: within-identity
/// whitening followed by the leading between-identity directions, each
/// weighted by its discriminability.
class LearnedEmbedder final : public Embedder {
 public:
  LearnedEmbedder() = default;
  std::string name() const override { return "learned"; }
  Embedding embed(const FaceInput& face) const override;

  /// `labels[i]` is the identity index of `images[i]`; needs >= 2 identities.
  static LearnedEmbedder fit(const std::vector<const Image*>& images, const std::vector<int>& labels,
                             int dim = kEmbeddingDim, int side = 16, double ridge = 0.05);

  void save(const std::filesystem::path& path) const;
  static LearnedEmbedder load(const std::filesystem::path& path);

  int side() const { return side_; }
  const Eigen::MatrixXd& projection() const { return projection_; }

 private:
  int side_ = 16;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd projection_;  // dim x side*side
};

/// Normalized grayscale features the learned embedder consumes.
Eigen::VectorXd pixel_features(const Image& image, int side);

Embedding normalize(const Eigen::VectorXd& v);

/// Cosine similarity; throws on length mismatch.
double similarity(const Embedding& a, const Embedding& b);

struct RegistryEntry {
  std::string identity_tag;
  std::vector<Embedding> references;
  std::string token_path;
};

class VIPRegistry {
 public:
  /// Rejects duplicate tags and entries without references.
  void enroll(RegistryEntry entry);
  /// Replaces an existing entry with the same tag, or enrolls it.
  void upsert(RegistryEntry entry);
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<RegistryEntry>& entries() const { return entries_; }
  const RegistryEntry* find(const std::string& tag) const;

  void save(const std::filesystem::path& path) const;
  static VIPRegistry load(const std::filesystem::path& path);

 private:
  std::vector<RegistryEntry> entries_;  // kept sorted by identity_tag
};

struct Selection {
  std::size_t index = 0;
  std::string identity_tag;
  double score = 0.0;
};

/// Entry maximizing the max-over-references similarity; ties go to the lowest
/// identity tag. Throws Error(invalid_argument) on an empty registry.
Selection select_vip(const Embedding& query, const VIPRegistry& registry);

}  // namespace vipguard::priors
