#include <doctest.h>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "vipguard/checkpoint.hpp"
#include "vipguard/train.hpp"

using namespace vipguard;
using namespace vipguard::model;

namespace {

std::vector<datagen::FacePairRecord> vip_corpus(int total) {
  datagen::DidOptions o;
  o.scope = datagen::Scope::vip;
  o.vip_identity = fixture::tiny_world().identity_tags(world::Role::vip).at(0);
  o.ratio = {1, 5, 5};
  o.total = total;
  o.seed = 1;
  return datagen::build_did(fixture::tiny_world(), o, datagen::TemplateAnnotator(), priors::OracleEmbedder(1));
}

std::vector<DecodeInput> pair_inputs(const Model& m, const std::vector<datagen::FacePairRecord>& recs, QueryKind kind,
                                     const Mat* mu) {
  const auto& w = fixture::tiny_world();
  std::vector<DecodeInput> out;
  for (const auto& r : recs) {
    const auto seq = train::pair_sequence(m.vocab(), r, false);
    DecodeInput in;
    in.image = &w.at(r.test_id).image;
    in.query = kind;
    in.reference = kind == QueryKind::reference ? &w.at(r.ref_id).image : nullptr;
    in.vip = mu;
    in.tokens = seq.tokens;
    in.targets = seq.targets;
    out.push_back(std::move(in));
  }
  return out;
}

std::set<std::string> nonzero_grads(const Model& m) {
  std::set<std::string> out;
  for (const auto& p : m.params().all())
    if (p.grad.size() && !p.grad.isZero(0.0)) out.insert(p.name);
  return out;
}

std::set<std::string> documented_set(const Model& m, int stage) {
  std::set<std::string> out;
  for (const auto& p : m.params().all()) {
    const bool adapter = p.name.find(".lora_") != std::string::npos;
    const bool head = p.name.rfind("head.", 0) == 0;
    const bool xattn = p.name.rfind("xattn.", 0) == 0;
    if ((stage == 1 && (adapter || head)) || (stage == 2 && (adapter || head || xattn))) out.insert(p.name);
  }
  return out;
}

}  // namespace

TEST_CASE("cosine schedule") {
  auto cfg = train::StageConfig::defaults(2);
  cfg.learning_rate = 0.2;
  for (int s = 0; s <= 50; ++s)
    CHECK(train::scheduled_lr(cfg, s, 50) ==
          doctest::Approx(0.2 * 0.5 * (1 + std::cos(3.14159265358979323846 * s / 50))).epsilon(1e-12));
  CHECK(std::abs(train::scheduled_lr(cfg, 50, 50)) < 1e-15);
  cfg.schedule = train::Schedule::constant;
  CHECK(train::scheduled_lr(cfg, 30, 50) == 0.2);
}

TEST_CASE("stage configs validate") {
  auto cfg = train::StageConfig::defaults(1);
  CHECK(cfg.effective_batch == 72);
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK_THROWS_AS(train::StageConfig::defaults(4), Error);
  CHECK_THROWS_AS(train::parse_schedule("linear"), Error);
}

TEST_CASE("pair sequences: explained and answer-only forms") {
  const auto vocab = datagen::build_vocabulary();
  const auto recs = vip_corpus(22);
  for (const auto& r : recs) {
    const auto both = train::pair_sequences(vocab, r, false);
    REQUIRE(both.size() == 2);
    const auto only = train::pair_sequences(vocab, r, true);
    REQUIRE(only.size() == 1);
    // the answer-only form is a strict prefix of the explained form
    CHECK(std::equal(only[0].tokens.begin(), only[0].tokens.end(), both[0].tokens.begin()));
    CHECK(std::count(only[0].targets.begin(), only[0].targets.end(), 1) == 1);
    CHECK(vocab.token(only[0].tokens.back()) == r.verdict);
    CHECK(vocab.token(both[0].tokens.back()) == "<eos>");
  }
  CHECK_THROWS_AS(train::sequence_loss({-1.0, -2.0}, {0, 0}), Error);
  CHECK(train::sequence_loss({-1.0, -2.0}, {1, 1}) == 3.0);
}

TEST_CASE("gradients reach exactly the documented trainable set of each stage") {
  Model m = oracle::small_model(5);
  const auto recs = vip_corpus(22);
  SUBCASE("stage 1") {
    train::scope_parameters(m.params(), 1);
    train::batch_gradient(m, pair_inputs(m, recs, QueryKind::none, nullptr), 0);
    CHECK(nonzero_grads(m) == documented_set(m, 1));
  }
  SUBCASE("stage 2") {
    train::scope_parameters(m.params(), 2);
    train::batch_gradient(m, pair_inputs(m, recs, QueryKind::reference, nullptr), 0);
    CHECK(nonzero_grads(m) == documented_set(m, 2));
  }
  SUBCASE("stage 3") {
    train::scope_parameters(m.params(), 3);
    const Mat mu = init_vip_token(4, m.config().width, 1, 0.5).mu;
    Mat g = Mat::Zero(mu.rows(), mu.cols());
    train::batch_gradient(m, pair_inputs(m, recs, QueryKind::vip, &mu), 0, &g);
    CHECK(nonzero_grads(m).empty());
    CHECK_FALSE(g.isZero(0.0));
  }
}

TEST_CASE("9 x 8 gradient accumulation equals one batch of 72") {
  Model m = oracle::small_model(6);
  train::scope_parameters(m.params(), 2);
  auto recs = vip_corpus(44);
  const auto extra = vip_corpus(28);
  recs.insert(recs.end(), extra.begin(), extra.end());
  REQUIRE(recs.size() == 72);
  const auto batch = pair_inputs(m, recs, QueryKind::reference, nullptr);
  train::batch_gradient(m, batch, 0);
  std::vector<Mat> full;
  for (const auto& p : m.params().all()) full.push_back(p.grad);
  train::batch_gradient(m, batch, 8);
  double worst = 0;
  for (std::size_t k = 0; k < full.size(); ++k) {
    const auto& p = m.params().all()[k];
    if (!p.trainable) continue;
    const double scale = std::max(full[k].cwiseAbs().maxCoeff(), 1e-12);
    worst = std::max(worst, (p.grad - full[k]).cwiseAbs().maxCoeff() / scale);
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("stage 3 changes only mu and leaves every other parameter bitwise equal") {
  Model m = oracle::small_model(7);
  const Model before = m;
  auto cfg = train::StageConfig::defaults(3);
  cfg.epochs = 2;
  cfg.learning_rate = 0.05;
  cfg.seed = 3;
  train::Stage3Options opt;
  opt.identity_tag = fixture::tiny_world().identity_tags(world::Role::vip).at(0);
  opt.tokens = 4;
  train::TrainState st;
  const auto token = train::train_stage3(m, vip_corpus(22), fixture::tiny_world(), cfg, opt, &st);
  for (std::size_t k = 0; k < m.params().all().size(); ++k) {
    const auto& a = m.params().all()[k].value;
    const auto& b = before.params().all()[k].value;
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
  }
  const auto init = init_vip_token(4, m.config().width, derive_seed(cfg.seed, "vip-init:" + opt.identity_tag));
  CHECK_FALSE(token.mu == init.mu);
  CHECK(st.trainable == std::vector<std::string>{"vip.mu"});
  CHECK(token.identity_tag == opt.identity_tag);
}

TEST_CASE("equal seeds give bitwise-equal checkpoints") {
  const auto& w = fixture::tiny_world();
  datagen::DfaOptions o;
  o.multiple_choice = 20;
  o.short_answer = 20;
  o.long_answer = 4;
  o.seed = 2;
  const auto dfa = datagen::build_dfa(w, o);
  auto cfg = train::StageConfig::defaults(1);
  cfg.effective_batch = 8;
  cfg.micro_batch = 4;
  cfg.max_steps = 3;
  cfg.learning_rate = 1e-3;
  cfg.seed = 12;
  Model a = oracle::small_model(1), b = oracle::small_model(1);
  train::train_stage1(a, dfa, w, cfg);
  train::train_stage1(b, dfa, w, cfg);
  CHECK(checkpoint::model_hash(a) == checkpoint::model_hash(b));
  CHECK(checkpoint::model_hash(a) != checkpoint::model_hash(oracle::small_model(1)));
}

TEST_CASE("empty corpora are rejected") {
  Model m = oracle::small_model(1);
  CHECK_THROWS_AS(train::train_stage1(m, {}, fixture::tiny_world(), train::StageConfig::defaults(1)), Error);
  CHECK_THROWS_AS(train::train_stage2(m, {}, fixture::tiny_world(), train::StageConfig::defaults(2)), Error);
}
