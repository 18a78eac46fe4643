#pragma once

// Training corpora: attribute VQA (stage 1) and annotated face pairs for the
// general population (stage 2) and for one protected identity (stage 3).

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vipguard/priors.hpp"
#include "vipguard/synthworld.hpp"
#include "vipguard/text.hpp"
#include "vipguard/world.hpp"

namespace vipguard::datagen {

using synthworld::Attribute;
using synthworld::AttributeSet;

// ---- attribute text -------------------------------------------------------

/// Partial attribute assignment as read back from text.
using AttributeMap = std::map<Attribute, std::string>;

/// "face_shape=oval; eye_size=small; ..." in catalog order.
std::string render_attributes(const AttributeSet& attrs);
std::string render_attributes(const AttributeMap& attrs);
/// Inverse of render_attributes; accepts any subset. Throws Error(format).
AttributeMap parse_attributes(std::string_view text);
AttributeMap to_map(const AttributeSet& attrs);

/// One sentence per attribute, catalog order. Rejects incomplete maps and
/// values outside an attribute's enumeration.
std::string compose_long_answer(const AttributeSet& attrs);
std::string compose_long_answer(const AttributeMap& attrs);

// ---- D_FA -----------------------------------------------------------------

enum class VqaFormat { multiple_choice, short_answer, long_answer };
std::string_view to_string(VqaFormat format);
VqaFormat parse_vqa_format(std::string_view text);

struct VQASample {
  std::vector<std::string> image_refs;
  std::string question;
  std::string answer;
  VqaFormat format = VqaFormat::short_answer;
  std::vector<Attribute> attributes;  // the queried tuple (all 8 for long answers)
  std::vector<std::string> options;   // multiple choice only
};

struct DfaOptions {
  int k = 1;
  // nullopt = every (image, tuple) combination.
  std::optional<int> multiple_choice;
  std::optional<int> short_answer;
  std::optional<int> long_answer;
  std::uint64_t seed = 0;
  bool include_vip = false;  // also draw from VIP training reals
};

/// All k-subsets of the catalog, in lexicographic catalog order.
std::vector<std::vector<Attribute>> attribute_tuples(int k);

std::vector<VQASample> build_dfa(const world::World& world, const DfaOptions& options);

/// Grades an answer against ground truth (exact string match).
bool grade_vqa(const VQASample& sample, const AttributeSet& truth);

// ---- D_ID -----------------------------------------------------------------

enum class PairType { pos_same_id, neg_diff_id, neg_forgery };
std::string_view to_string(PairType type);
PairType parse_pair_type(std::string_view text);

struct FacePairRecord {
  std::string ref_id;
  std::string test_id;
  PairType pair_type = PairType::pos_same_id;
  double similarity = 0.0;
  std::string annotation;
  std::string verdict;  // "Yes" | "No"
};

struct AnnotatorRequest {
  std::string instruction;
  double similarity = 0.0;
  std::string attrs_ref;
  std::string attrs_test;
  std::string hint;
};

inline constexpr std::string_view kHintSame = "Note that these two images show the same person.";
inline constexpr std::string_view kHintDifferent = "Note that these two images show different persons.";
inline constexpr std::string_view kHintForgery = "Although the faces may appear similar, they are not the same person.";
inline constexpr std::string_view kAnnotatorInstruction =
    "Compare the two faces based solely on the provided facial attributes and the similarity score, "
    "explain the identity discrepancies, and finish with the answer Yes or No.";

std::string_view hint_for(PairType type);

/// Stateless annotator interface.
class Annotator {
 public:
  virtual ~Annotator() = default;
  virtual std::string annotate(const AnnotatorRequest& request) const = 0;
};

/// Deterministic template annotator. Mentions only attributes present in both
/// renderings and ends with the verdict word.
class TemplateAnnotator final : public Annotator {
 public:
  std::string annotate(const AnnotatorRequest& request) const override;
};

std::string annotate_pair(const AnnotatorRequest& request);

/// "0.93"; two decimals, no negative zero.
std::string format_similarity(double s);

/// Catalog attributes whose phrase occurs in `text`.
std::vector<Attribute> mentioned_attributes(std::string_view text);

struct Ratio {
  int positive = 2;
  int different = 1;
  int forgery = 1;
};

struct PairCounts {
  int positive = 0;
  int different = 0;
  int forgery = 0;
  int total() const { return positive + different + forgery; }
  bool operator==(const PairCounts&) const = default;
};

/// Floor each part; the remainder goes to positives.
PairCounts split_counts(int total, const Ratio& ratio);

enum class Scope { general, vip };

struct DidOptions {
  Scope scope = Scope::general;
  std::string vip_identity;
  Ratio ratio;
  int total = 400;
  std::uint64_t seed = 0;
  // VIP scope: use only the first N training reals of the identity.
  std::optional<int> reference_limit;
  // Lower total until every part of the split fits its pool (few references).
  bool shrink_to_fit = false;
};

/// Training reals of the VIP used as references (honours reference_limit).
std::vector<const world::WorldSample*> vip_references(const world::World& world, const std::string& identity,
                                                      std::optional<int> limit);

std::vector<FacePairRecord> build_did(const world::World& world, const DidOptions& options,
                                      const Annotator& annotator, const priors::Embedder& embedder);

// ---- vocabulary and persistence -------------------------------------------

/// Every token any corpus or prompt can produce, in a fixed order.
text::Vocabulary build_vocabulary();

struct CorpusHeader {
  std::string kind;  // dfa | did
  std::uint64_t seed = 0;
  std::string world_version;
  std::map<std::string, std::string> fields;  // scope, ratio, k, counts, ...
};

void save_dfa(const std::filesystem::path& path, const CorpusHeader& header, const std::vector<VQASample>& samples);
std::vector<VQASample> load_dfa(const std::filesystem::path& path, CorpusHeader* header = nullptr);
void save_did(const std::filesystem::path& path, const CorpusHeader& header,
              const std::vector<FacePairRecord>& records);
std::vector<FacePairRecord> load_did(const std::filesystem::path& path, CorpusHeader* header = nullptr);

}  // namespace vipguard::datagen
