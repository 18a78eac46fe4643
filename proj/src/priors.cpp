#include "vipguard/priors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include <json.hpp>

#include "vipguard/image_io.hpp"

namespace vipguard::priors {

using nlohmann::json;

Embedding normalize(const Eigen::VectorXd& v) {
  const double n = v.norm();
  require(n > 0 && std::isfinite(n), ErrorKind::numerical, "cannot normalize a zero or non-finite vector");
  return v / n;
}

double similarity(const Embedding& a, const Embedding& b) {
  require(a.size() == b.size(), ErrorKind::invalid_argument,
          "embedding length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  const double na = a.norm(), nb = b.norm();
  require(na > 0 && nb > 0, ErrorKind::invalid_argument, "similarity of a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

OracleEmbedder::OracleEmbedder(std::uint64_t seed, int dim) {
  require(dim >= synthworld::kLatentDim, ErrorKind::invalid_argument, "oracle embedding must hold the latent");
  std::mt19937_64 rng(derive_seed(seed, "oracle-embedder"));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(dim, synthworld::kLatentDim);
  for (int i = 0; i < g.rows(); ++i)
    for (int j = 0; j < g.cols(); ++j) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  basis_ = qr.householderQ() * Eigen::MatrixXd::Identity(dim, synthworld::kLatentDim);
}

Embedding OracleEmbedder::embed(const FaceInput& face) const {
  require(face.latent != nullptr, ErrorKind::invalid_argument, "oracle embedder needs identity provenance");
  const auto& c = face.latent->components;
  require(static_cast<int>(c.size()) == basis_.cols(), ErrorKind::invalid_argument, "latent length mismatch");
  const Eigen::Map<const Eigen::VectorXd> z(c.data(), static_cast<Eigen::Index>(c.size()));
  return normalize(basis_ * z);
}

Eigen::VectorXd pixel_features(const Image& image, int side) {
  require(!image.empty(), ErrorKind::invalid_argument, "empty image");
  const Image small = image_io::resize(image, side, side);
  Eigen::VectorXd f(side * side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      f(y * side + x) = 0.299 * small.at(y, x, 0) + 0.587 * small.at(y, x, 1) + 0.114 * small.at(y, x, 2);
  f.array() -= f.mean();
  const double n = f.norm();
  if (n > 0) f /= n;
  return f;
}

Embedding LearnedEmbedder::embed(const FaceInput& face) const {
  require(face.image != nullptr, ErrorKind::invalid_argument, "learned embedder needs an image");
  require(projection_.size() > 0, ErrorKind::missing_prerequisite, "learned embedder is not fitted");
  const Eigen::VectorXd f = pixel_features(*face.image, side_);
  return normalize(projection_ * (f - mean_));
}

LearnedEmbedder LearnedEmbedder::fit(const std::vector<const Image*>& images, const std::vector<int>& labels,
                                     int dim, int side, double ridge) {
  require(images.size() == labels.size() && !images.empty(), ErrorKind::invalid_argument,
          "embedder fit needs one label per image");
  const int D = side * side;
  std::map<int, std::vector<Eigen::VectorXd>> groups;
  for (std::size_t i = 0; i < images.size(); ++i) groups[labels[i]].push_back(pixel_features(*images[i], side));
  require(groups.size() >= 2, ErrorKind::insufficient_data, "embedder fit needs at least two identities");

  Eigen::VectorXd global = Eigen::VectorXd::Zero(D);
  Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(D, D);
  std::vector<Eigen::VectorXd> means;
  for (const auto& [label, feats] : groups) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(D);
    for (const auto& f : feats) m += f;
    m /= static_cast<double>(feats.size());
    for (const auto& f : feats) sw += (f - m) * (f - m).transpose();
    means.push_back(m);
    global += m;
  }
  global /= static_cast<double>(means.size());
  sw /= static_cast<double>(images.size());
  sw += ridge * (sw.trace() / D) * Eigen::MatrixXd::Identity(D, D);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> within(sw);
  const Eigen::MatrixXd whiten =
      within.eigenvectors() * within.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
      within.eigenvectors().transpose();

  Eigen::MatrixXd sb = Eigen::MatrixXd::Zero(D, D);
  for (const auto& m : means) {
    const Eigen::VectorXd w = whiten * (m - global);
    sb += w * w.transpose();
  }
  sb /= static_cast<double>(means.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> between(sb);

  LearnedEmbedder e;
  e.side_ = side;
  e.mean_ = global;
  e.projection_.resize(dim, D);
  // Eigenvalues come in ascending order.
  for (int k = 0; k < dim; ++k) {
    const int col = D - 1 - k;
    const double lambda = std::max(0.0, between.eigenvalues()(col));
    const double weight = std::sqrt(lambda / (lambda + 1.0));
    e.projection_.row(k) = weight * between.eigenvectors().col(col).transpose() * whiten;
  }
  return e;
}

void LearnedEmbedder::save(const std::filesystem::path& path) const {
  json j{{"kind", "learned_embedder"}, {"side", side_}, {"dim", projection_.rows()}};
  j["mean"] = std::vector<double>(mean_.data(), mean_.data() + mean_.size());
  std::vector<double> rows;
  for (int r = 0; r < projection_.rows(); ++r)
    for (int c = 0; c < projection_.cols(); ++c) rows.push_back(projection_(r, c));
  j["projection"] = rows;
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << j.dump() << "\n";
}

LearnedEmbedder LearnedEmbedder::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  LearnedEmbedder e;
  try {
    const json j = json::parse(in);
    e.side_ = j.at("side").get<int>();
    const int dim = j.at("dim").get<int>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto proj = j.at("projection").get<std::vector<double>>();
    const int D = e.side_ * e.side_;
    require(static_cast<int>(mean.size()) == D && static_cast<int>(proj.size()) == dim * D, ErrorKind::format,
            "embedder file has inconsistent shapes");
    e.mean_ = Eigen::Map<const Eigen::VectorXd>(mean.data(), D);
    e.projection_.resize(dim, D);
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < D; ++c) e.projection_(r, c) = proj[static_cast<std::size_t>(r * D + c)];
  } catch (const json::exception& ex) {
    fail(ErrorKind::format, path.string() + ": " + ex.what());
  }
  return e;
}

void VIPRegistry::enroll(RegistryEntry entry) {
  require(!entry.identity_tag.empty(), ErrorKind::invalid_argument, "registry entry without identity tag");
  require(!entry.references.empty(), ErrorKind::invalid_argument,
          "registry entry " + entry.identity_tag + " has no reference embeddings");
  require(find(entry.identity_tag) == nullptr, ErrorKind::invalid_argument,
          "identity " + entry.identity_tag + " already enrolled");
  const auto pos = std::lower_bound(entries_.begin(), entries_.end(), entry.identity_tag,
                                    [](const RegistryEntry& e, const std::string& t) { return e.identity_tag < t; });
  entries_.insert(pos, std::move(entry));
}

void VIPRegistry::upsert(RegistryEntry entry) {
  entries_.erase(std::remove_if(entries_.begin(), entries_.end(),
                                [&](const RegistryEntry& e) { return e.identity_tag == entry.identity_tag; }),
                 entries_.end());
  enroll(std::move(entry));
}

const RegistryEntry* VIPRegistry::find(const std::string& tag) const {
  for (const auto& e : entries_)
    if (e.identity_tag == tag) return &e;
  return nullptr;
}

void VIPRegistry::save(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + tmp);
    for (const auto& e : entries_) {
      json refs = json::array();
      for (const auto& r : e.references) refs.push_back(std::vector<double>(r.data(), r.data() + r.size()));
      out << json{{"identity", e.identity_tag}, {"embeddings", refs}, {"token", e.token_path}}.dump() << "\n";
    }
  }
  std::filesystem::rename(tmp, path);
}

VIPRegistry VIPRegistry::load(const std::filesystem::path& path) {
  VIPRegistry registry;
  std::ifstream in(path);
  if (!in) return registry;  // a missing registry is an empty one
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      RegistryEntry e;
      e.identity_tag = j.at("identity").get<std::string>();
      e.token_path = j.at("token").get<std::string>();
      for (const auto& r : j.at("embeddings")) {
        const auto v = r.get<std::vector<double>>();
        e.references.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
      }
      registry.enroll(std::move(e));
    } catch (const json::exception& ex) {
      fail(ErrorKind::format, path.string() + ": " + ex.what());
    }
  }
  return registry;
}

Selection select_vip(const Embedding& query, const VIPRegistry& registry) {
  require(!registry.empty(), ErrorKind::invalid_argument, "VIP registry is empty; enroll an identity first");
  Selection best;
  bool have = false;
  // Entries are sorted by tag, so a strict comparison keeps the lowest tag on ties.
  for (std::size_t i = 0; i < registry.entries().size(); ++i) {
    const auto& e = registry.entries()[i];
    double score = -2.0;
    for (const auto& r : e.references) score = std::max(score, similarity(query, r));
    if (!have || score > best.score) {
      best = {i, e.identity_tag, score};
      have = true;
    }
  }
  return best;
}

}  // namespace vipguard::priors
