#include <doctest.h>

#include <filesystem>
#include <random>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "vipguard/checkpoint.hpp"
#include "vipguard/model.hpp"
#include "vipguard/train.hpp"

using namespace vipguard;
using namespace vipguard::model;

namespace {

Image face(std::uint64_t seed, int size = 32) {
  return synthworld::render_face(synthworld::sample_identity(static_cast<std::int64_t>(seed)),
                                 synthworld::sample_nuisance(seed), size)
      .pixels;
}

datagen::FacePairRecord record(bool yes) {
  datagen::DidOptions o;
  o.scope = datagen::Scope::vip;
  o.vip_identity = fixture::tiny_world().identity_tags(world::Role::vip).at(0);
  o.ratio = {1, 5, 5};
  o.total = 22;
  o.seed = 4;
  const auto recs =
      datagen::build_did(fixture::tiny_world(), o, datagen::TemplateAnnotator(), priors::OracleEmbedder(1));
  for (const auto& r : recs)
    if ((r.verdict == "Yes") == yes && r.pair_type != datagen::PairType::neg_diff_id) return r;
  throw std::logic_error("no record");
}

std::vector<DecodeInput> two_sample_batch(const Model& m, const Image& a, const Image& b, QueryKind kind,
                                          const Mat* mu, const Image* ref) {
  std::vector<DecodeInput> batch(2);
  const auto s0 = train::pair_sequence(m.vocab(), record(false), false);
  const auto s1 = train::pair_sequence(m.vocab(), record(true), false);
  batch[0].image = &a;
  batch[0].tokens = s0.tokens;
  batch[0].targets = s0.targets;
  batch[1].image = &b;
  batch[1].tokens = s1.tokens;
  batch[1].targets = s1.targets;
  for (auto& in : batch) {
    in.query = kind;
    in.vip = mu;
    in.reference = ref;
  }
  return batch;
}

}  // namespace

TEST_CASE("cross-attention: row-stochastic, permutation invariant, inside the hull of V") {
  const auto s = oracle::attention_properties(1000, 2024);
  CHECK(s.max_row_sum_error <= 1e-6);
  CHECK(s.max_permutation_error <= 1e-6);
  CHECK(s.hull_violations == 0);
}

TEST_CASE("fusion is invariant to a joint permutation of image tokens") {
  Model m = oracle::small_model();
  const Mat img = m.encode_image(face(3));
  const Mat q = m.encode_image(face(4));
  Mat perm(img.rows(), img.cols());
  for (Eigen::Index i = 0; i < img.rows(); ++i) perm.row(i) = img.row(img.rows() - 1 - i);
  CHECK((m.fuse(q, img) - m.fuse(q, perm)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("zero-initialized adapters leave the base model untouched") {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.ff = 32;
  cfg.max_text = 192;
  cfg.seed = 9;
  Model a(cfg, datagen::build_vocabulary());
  Model b = a;
  for (auto& p : a.params().all())
    if (p.name.find("lora_b") != std::string::npos) CHECK(p.value.isZero(0.0));
  // Changing A has no effect while B is zero.
  for (auto& p : b.params().all())
    if (p.name.find("lora_a") != std::string::npos) p.value.setConstant(0.37);
  const Image img = face(1);
  DecodeInput in;
  in.image = &img;
  in.tokens = a.verdict_prompt();
  in.tokens.push_back(a.vocab().id("Yes"));
  in.targets.assign(in.tokens.size(), 0);
  in.targets.back() = 1;
  CHECK(a.decode_logprobs(in) == b.decode_logprobs(in));
}

TEST_CASE("analytic gradients match central differences on a 2-sample batch") {
  const Image a = face(1), b = face(2), ref = face(5);
  SUBCASE("VIP token query: mu, adapters, head and cross-attention") {
    Model m = oracle::small_model(3);
    train::scope_parameters(m.params(), 2);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> normal(0.0, 0.5);
    Mat mu(3, m.config().width);
    for (Eigen::Index i = 0; i < mu.size(); ++i) mu.data()[i] = normal(rng);
    const auto batch = two_sample_batch(m, a, b, QueryKind::vip, &mu, nullptr);
    const auto rep = oracle::gradient_check(m, batch, &mu);
    INFO("worst parameter: " << rep.worst_name);
    CHECK(rep.checked > 100);
    CHECK(rep.worst <= 1e-4);
  }
  SUBCASE("reference image query") {
    Model m = oracle::small_model(4);
    train::scope_parameters(m.params(), 2);
    const auto batch = two_sample_batch(m, a, b, QueryKind::reference, nullptr, &ref);
    const auto rep = oracle::gradient_check(m, batch, nullptr);
    INFO("worst parameter: " << rep.worst_name);
    CHECK(rep.worst <= 1e-4);
  }
}

TEST_CASE("yes/no probability ignores a shared logit offset") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-20, 20);
  for (int t = 0; t < 200; ++t) {
    const double y = u(rng), n = u(rng), c = u(rng);
    const auto p = yes_no_probability(y, n);
    const auto q = yes_no_probability(y + c, n + c);
    CHECK(p.first == doctest::Approx(q.first).epsilon(1e-12));
    CHECK(p.first + p.second == doctest::Approx(1.0));
  }
  CHECK(yes_no_probability(3, 3).first == 0.5);
  CHECK_THROWS_AS(yes_no_probability(std::nan(""), 0), Error);
  CHECK(verdict_is_yes(0.5));
  CHECK_FALSE(verdict_is_yes(0.4999));
}

TEST_CASE("image encoding: size handling") {
  Model m = oracle::small_model();
  CHECK(m.encode_image(face(1, 32)).rows() == 4);
  CHECK(m.encode_image(face(1, 64)).rows() == 4);  // resized down to 32
  CHECK_THROWS_AS(m.encode_image(Image(24, 24)), Error);
}

TEST_CASE("VIP token init is seeded with the requested spread") {
  const auto a = init_vip_token(32, 64, 5);
  const auto b = init_vip_token(32, 64, 5);
  CHECK(a.mu == b.mu);
  const double mean = a.mu.mean();
  const double sd = std::sqrt((a.mu.array() - mean).square().mean());
  CHECK(std::abs(mean) < 0.002);
  CHECK(sd == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("checkpoints round trip bitwise") {
  Model m = oracle::small_model(11);
  const auto dir = std::filesystem::temp_directory_path() / "vipguard_test_ckpt";
  std::filesystem::remove_all(dir);
  checkpoint::save_model(m, dir);
  Model back = checkpoint::load_model(dir);
  CHECK(checkpoint::model_hash(back) == checkpoint::model_hash(m));
  const Image img = face(2);
  CHECK(back.verdict_probability(img, QueryKind::none, nullptr, nullptr) ==
        m.verdict_probability(img, QueryKind::none, nullptr, nullptr));

  VIPToken t = init_vip_token(4, 16, 3);
  t.identity_tag = "id099";
  checkpoint::save_vip_token(t, dir / "token");
  const auto tb = checkpoint::load_vip_token(dir / "token");
  CHECK(tb.mu == t.mu);
  CHECK(tb.identity_tag == "id099");
  std::filesystem::remove_all(dir);
}

TEST_CASE("explanations are decoded after the verdict") {
  Model m = oracle::small_model(2);
  const Image img = face(3), ref = face(4);
  const auto d = m.detect(img, QueryKind::reference, &ref, nullptr, true, 12);
  CHECK(d.p_yes >= 0.0);
  CHECK(d.p_yes <= 1.0);
  CHECK(d.yes == verdict_is_yes(d.p_yes));
  CHECK(d.p_yes == m.verdict_probability(img, QueryKind::reference, &ref, nullptr));
}
