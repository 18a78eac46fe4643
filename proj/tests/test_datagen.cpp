#include <doctest.h>

#include <random>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "vipguard/datagen.hpp"

using namespace vipguard;
using namespace vipguard::datagen;

namespace {

long long choose(int n, int k) {
  long long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

std::vector<FacePairRecord> general_pairs(int total, std::uint64_t seed) {
  DidOptions o;
  o.scope = Scope::general;
  o.ratio = {2, 1, 1};
  o.total = total;
  o.seed = seed;
  return build_did(fixture::tiny_world(), o, TemplateAnnotator(), priors::OracleEmbedder(1));
}

std::vector<FacePairRecord> vip_pairs(int total, std::uint64_t seed) {
  DidOptions o;
  o.scope = Scope::vip;
  o.vip_identity = fixture::tiny_world().identity_tags(world::Role::vip).at(0);
  o.ratio = {1, 5, 5};
  o.total = total;
  o.seed = seed;
  return build_did(fixture::tiny_world(), o, TemplateAnnotator(), priors::OracleEmbedder(1));
}

PairCounts count_types(const std::vector<FacePairRecord>& records) {
  PairCounts c;
  for (const auto& r : records) {
    if (r.pair_type == PairType::pos_same_id) ++c.positive;
    if (r.pair_type == PairType::neg_diff_id) ++c.different;
    if (r.pair_type == PairType::neg_forgery) ++c.forgery;
  }
  return c;
}

}  // namespace

TEST_CASE("corpus sizes quoted for the general and protected ratios") {
  CHECK(split_counts(4000, {2, 1, 1}) == PairCounts{2000, 1000, 1000});
  CHECK(split_counts(220, {1, 5, 5}) == PairCounts{20, 100, 100});
}

TEST_CASE("split counts follow the floor-then-remainder rule for random totals") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> total(0, 100000);
  for (int t = 0; t < 20; ++t) {
    const int n = total(rng);
    for (const Ratio r : {Ratio{2, 1, 1}, Ratio{1, 5, 5}}) {
      const auto want = oracle::split_by_ratio(n, r.positive, r.different, r.forgery);
      const auto got = split_counts(n, r);
      CHECK(got.positive == want.positive);
      CHECK(got.different == want.different);
      CHECK(got.forgery == want.forgery);
      CHECK(got.total() == n);
    }
  }
  CHECK_THROWS_AS(split_counts(10, {0, 0, 0}), Error);
  CHECK_THROWS_AS(split_counts(-1, {2, 1, 1}), Error);
}

TEST_CASE("emitted pair corpora have exactly the requested composition") {
  for (int total : {40, 77, 120}) CHECK(count_types(general_pairs(total, 3)) == split_counts(total, {2, 1, 1}));
  for (int total : {22, 44}) CHECK(count_types(vip_pairs(total, 3)) == split_counts(total, {1, 5, 5}));
}

TEST_CASE("verdicts are Yes exactly for same-identity real pairs") {
  const auto& w = fixture::tiny_world();
  for (const auto& records : {general_pairs(120, 5), vip_pairs(44, 5)})
    for (const auto& r : records) {
      const auto& ref = w.at(r.ref_id);
      const auto& test = w.at(r.test_id);
      const bool same = ref.identity_seed == test.identity_seed && test.label == synthworld::Label::real;
      CHECK((r.verdict == "Yes") == same);
      CHECK(r.ref_id != r.test_id);
      CHECK(ref.label == synthworld::Label::real);
    }
}

TEST_CASE("annotations mention only attributes of the two inputs, with their values") {
  const auto& w = fixture::tiny_world();
  int violations = 0, checked = 0;
  for (const auto& records : {general_pairs(120, 9), vip_pairs(44, 9)})
    for (const auto& r : records) {
      violations += oracle::grounding_violations(r.annotation, to_map(w.at(r.ref_id).attributes),
                                                 to_map(w.at(r.test_id).attributes));
      ++checked;
      // the explanation ends on the verdict word
      CHECK(r.annotation.size() >= r.verdict.size());
      CHECK(r.annotation.compare(r.annotation.size() - r.verdict.size(), r.verdict.size(), r.verdict) == 0);
    }
  CHECK(checked > 0);
  CHECK(violations == 0);
}

TEST_CASE("the annotator only uses attributes present in both renderings") {
  AttributeMap ref{{synthworld::Attribute::eye_size, "small"}, {synthworld::Attribute::nose_width, "wide"}};
  AttributeMap test{{synthworld::Attribute::eye_size, "large"}, {synthworld::Attribute::lip_thickness, "thin"}};
  AnnotatorRequest req;
  req.similarity = 0.31;
  req.attrs_ref = render_attributes(ref);
  req.attrs_test = render_attributes(test);
  req.hint = std::string(kHintDifferent);
  const auto text = annotate_pair(req);
  CHECK(oracle::grounding_violations(text, ref, test) == 0);
  const auto mentioned = mentioned_attributes(text);
  REQUIRE(mentioned.size() == 1);
  CHECK(mentioned[0] == synthworld::Attribute::eye_size);
  CHECK(text.find("0.31") != std::string::npos);
}

TEST_CASE("the grounding oracle catches invented values") {
  AttributeMap ref{{synthworld::Attribute::eye_size, "small"}};
  AttributeMap test{{synthworld::Attribute::eye_size, "large"}};
  CHECK(oracle::grounding_violations("the eye size differs : medium versus large .", ref, test) == 1);
  CHECK(oracle::grounding_violations("the nose width differs : narrow versus wide .", ref, test) >= 1);
  CHECK(oracle::grounding_violations("all listed attributes match .", ref, test) == 1);
}

TEST_CASE("every generated VQA answer grades correct against ground truth") {
  const auto& w = fixture::tiny_world();
  DfaOptions o;
  o.k = 2;
  o.multiple_choice = 150;
  o.short_answer = 150;
  o.long_answer = 30;
  o.seed = 4;
  const auto samples = build_dfa(w, o);
  CHECK(samples.size() == 330);
  for (const auto& s : samples) {
    REQUIRE(s.image_refs.size() == 1);
    REQUIRE(grade_vqa(s, w.at(s.image_refs[0]).attributes));
    if (s.format == VqaFormat::multiple_choice) {
      CHECK(std::find(s.options.begin(), s.options.end(), s.answer) != s.options.end());
    }
  }
}

TEST_CASE("grading rejects a wrong answer") {
  const auto& w = fixture::tiny_world();
  DfaOptions o;
  o.multiple_choice = 0;
  o.short_answer = 10;
  o.long_answer = 0;
  auto samples = build_dfa(w, o);
  REQUIRE(!samples.empty());
  auto s = samples.front();
  s.answer += " x";
  CHECK_FALSE(grade_vqa(s, w.at(s.image_refs[0]).attributes));
}

TEST_CASE("attribute tuples enumerate every k-subset") {
  for (int k = 1; k <= 8; ++k) CHECK(static_cast<long long>(attribute_tuples(k).size()) == choose(8, k));
  CHECK_THROWS_AS(attribute_tuples(0), Error);
  CHECK_THROWS_AS(attribute_tuples(9), Error);
}

TEST_CASE("attribute text round trip and malformed input") {
  const auto attrs = synthworld::derive_attributes(synthworld::sample_identity(12));
  CHECK(parse_attributes(render_attributes(attrs)) == to_map(attrs));
  CHECK_THROWS_AS(parse_attributes("eye_size=enormous"), Error);
  CHECK_THROWS_AS(parse_attributes("ear_size=small"), Error);
  AttributeMap partial{{synthworld::Attribute::eye_size, "small"}};
  CHECK_THROWS_AS(compose_long_answer(partial), Error);
}

TEST_CASE("similarity formatting") {
  CHECK(format_similarity(0.934) == "0.93");
  CHECK(format_similarity(-0.001) == "0.00");
  CHECK(format_similarity(1.0) == "1.00");
}

TEST_CASE("corpora are deterministic per seed") {
  const auto a = general_pairs(60, 21);
  const auto b = general_pairs(60, 21);
  const auto c = general_pairs(60, 22);
  REQUIRE(a.size() == b.size());
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && a[i].ref_id == b[i].ref_id && a[i].test_id == b[i].test_id && a[i].annotation == b[i].annotation;
    differs = differs || a[i].ref_id != c[i].ref_id || a[i].test_id != c[i].test_id;
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("pair corpora need a non-empty world and enough pairs") {
  world::World empty;
  DidOptions o;
  CHECK_THROWS_AS(build_did(empty, o, TemplateAnnotator(), priors::OracleEmbedder(1)), Error);
  CHECK_THROWS_AS(vip_pairs(100000, 1), Error);
}

TEST_CASE("few references shrink the protected corpus but keep the split rule") {
  DidOptions o;
  o.scope = Scope::vip;
  o.vip_identity = fixture::tiny_world().identity_tags(world::Role::vip).at(0);
  o.ratio = {1, 5, 5};
  o.total = 100000;
  o.seed = 4;
  o.reference_limit = 2;
  o.shrink_to_fit = true;
  const auto records = build_did(fixture::tiny_world(), o, TemplateAnnotator(), priors::OracleEmbedder(1));
  const auto got = count_types(records);
  const auto want = oracle::split_by_ratio(static_cast<long long>(records.size()), 1, 5, 5);
  CHECK(got.positive == want.positive);
  CHECK(got.different == want.different);
  CHECK(got.forgery == want.forgery);
  // two references give exactly two ordered positive pairs
  CHECK(got.positive <= 2);
  o.total = static_cast<int>(records.size()) + 1;
  o.shrink_to_fit = false;
  CHECK_THROWS_AS(build_did(fixture::tiny_world(), o, TemplateAnnotator(), priors::OracleEmbedder(1)), Error);
}

TEST_CASE("corpus files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "vipguard_test_corpus";
  std::filesystem::create_directories(dir);
  const auto records = vip_pairs(22, 2);
  CorpusHeader h{"did", 2, "synthworld-1", {{"scope", "vip"}}};
  save_did(dir / "did.jsonl", h, records);
  CorpusHeader back;
  const auto loaded = load_did(dir / "did.jsonl", &back);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].annotation == records[i].annotation);
    CHECK(loaded[i].verdict == records[i].verdict);
    CHECK(loaded[i].similarity == records[i].similarity);
  }
  CHECK(back.fields.at("scope") == "vip");
  std::filesystem::remove_all(dir);
}
