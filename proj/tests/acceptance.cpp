// Acceptance run: trains the toy configuration end to end, evaluates every
// suite and prints one PASS/FAIL line per criterion.
//
//   vipguard_acceptance [config]     (VIPGUARD_OUT overrides the output root)

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "support/oracles.hpp"
#include "vipguard/checkpoint.hpp"
#include "vipguard/evalharness.hpp"
#include "vipguard/pipeline.hpp"

using namespace vipguard;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  int id;
  std::string name;
  bool pass;
  std::string details;
};

std::string num(double v, int digits = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

std::string sci(double v) {
  std::ostringstream o;
  o << std::scientific << std::setprecision(2) << v;
  return o.str();
}

// ---- 1 -------------------------------------------------------------------

Verdict ablation(const pipeline::EvalReport& r) {
  const double base = r.mean("ablation/baseline"), s3 = r.mean("ablation/stage3_only"),
               s13 = r.mean("ablation/stage13"), full = r.mean("ablation/full");
  const bool ok = full - s13 >= 0.02 && s13 - s3 >= 0.02 && s3 - base >= 0.02 && std::abs(base - 0.5) <= 0.1 &&
                  full >= 0.95;
  return {1, "component ablation ordering", ok,
          "baseline " + num(base) + ", stage3 only " + num(s3) + ", stages 1+3 " + num(s13) + ", full " + num(full) +
              " (need gaps >= 0.02, baseline in [0.4, 0.6], full >= 0.95)"};
}

// ---- 2 -------------------------------------------------------------------

bool bitwise_equal(const model::Model& a, const model::Model& b) {
  const auto& pa = a.params().all();
  const auto& pb = b.params().all();
  if (pa.size() != pb.size()) return false;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    if (pa[k].name != pb[k].name || pa[k].value.size() != pb[k].value.size()) return false;
    if (std::memcmp(pa[k].value.data(), pb[k].value.data(), sizeof(double) * pa[k].value.size()) != 0) return false;
  }
  return true;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

Verdict frozen_backbone(pipeline::Pipeline& p) {
  const auto& cfg = p.config();
  const auto id = p.world().identity_tags(world::Role::vip).at(0);
  model::Model& backbone = p.backbone(pipeline::Backbone::stage12, 0);
  model::Model m = backbone;
  auto sc = cfg.stage3;
  sc.seed = 77;
  sc.max_steps = 40;
  train::Stage3Options opt;
  opt.identity_tag = id;
  opt.tokens = cfg.vip_tokens;
  const auto token = train::train_stage3(m, p.did_vip(id), p.world(), sc, opt);
  const bool explicit_ok = bitwise_equal(m, backbone);
  const bool mu_moved = !(token.mu == model::init_vip_token(cfg.vip_tokens, m.config().width,
                                                             derive_seed(sc.seed, "vip-init:" + id))
                                          .mu);

  // Every token the run produced recorded the frozen checksum of its backbone.
  int tokens = 0, mismatched = 0;
  std::vector<fs::path> dirs;
  if (fs::exists(p.layout().root / "tokens"))
    for (const auto& e : fs::directory_iterator(p.layout().root / "tokens")) dirs.push_back(e.path());
  if (fs::exists(p.layout().cache()))
    for (const auto& e : fs::directory_iterator(p.layout().cache()))
      if (e.path().filename().string().rfind("token-", 0) == 0) dirs.push_back(e.path());
  for (const auto& dir : dirs) {
    nlohmann::json extra;
    checkpoint::load_vip_token(dir, &extra);
    const std::string kind = extra.at("backbone").get<std::string>();
    const auto b = kind == "untrained" ? pipeline::Backbone::untrained
                   : kind == "stage1"  ? pipeline::Backbone::stage1
                                       : pipeline::Backbone::stage12;
    const auto& bb = p.backbone(b, extra.at("replica").get<int>());
    ++tokens;
    mismatched += extra.at("frozen_checksum").get<std::string>() != hex64(bb.params().frozen_checksum());
  }
  const bool ok = explicit_ok && mu_moved && tokens > 0 && mismatched == 0;
  return {2, "frozen backbone during stage 3", ok,
          std::string("explicit run: ") + (explicit_ok ? "all non-mu parameters bitwise equal" : "parameters changed") +
              (mu_moved ? ", mu updated" : ", mu unchanged") + "; " + std::to_string(tokens) +
              " trained tokens, " + std::to_string(mismatched) + " checksum mismatches"};
}

// ---- 3 -------------------------------------------------------------------

Verdict gradients(pipeline::Pipeline& p) {
  const auto id = p.world().identity_tags(world::Role::vip).at(0);
  model::Model m = p.backbone(pipeline::Backbone::stage12, 0);
  train::scope_parameters(m.params(), 2);
  model::Mat mu = p.vip_token(m, pipeline::Backbone::stage12, 0, {id, p.config().vip_tokens, false, 0}).mu;
  const auto corpus = p.did_vip(id);
  std::vector<model::DecodeInput> batch;
  for (const char* verdict : {"Yes", "No"})
    for (const auto& r : corpus)
      if (r.verdict == verdict) {
        const auto seq = train::pair_sequence(m.vocab(), r, false);
        model::DecodeInput in;
        in.image = &p.world().at(r.test_id).image;
        in.query = model::QueryKind::vip;
        in.vip = &mu;
        in.tokens = seq.tokens;
        in.targets = seq.targets;
        batch.push_back(std::move(in));
        break;
      }
  const auto rep = oracle::gradient_check(m, batch, &mu, 12);
  return {3, "gradient check (mu, adapters, cross-attention)", rep.worst <= 1e-4,
          "worst relative error " + sci(rep.worst) + " at " + rep.worst_name + " over " + std::to_string(rep.checked) +
              " coordinates, 2-sample batch (need <= 1e-4)"};
}

// ---- 4 -------------------------------------------------------------------

Verdict attention() {
  const auto s = oracle::attention_properties(1000, 4242);
  const bool ok = s.max_row_sum_error <= 1e-6 && s.max_permutation_error <= 1e-6 && s.hull_violations == 0;
  return {4, "attention properties", ok,
          "1000 instances: row-sum error " + sci(s.max_row_sum_error) + ", permutation error " +
              sci(s.max_permutation_error) + ", hull violations " + std::to_string(s.hull_violations)};
}

// ---- 5 -------------------------------------------------------------------

Verdict metrics() {
  std::mt19937_64 rng(515);
  std::uniform_int_distribution<int> size(1, 30), grid(0, 12);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> pos(size(rng)), neg(size(rng));
    for (auto* v : {&pos, &neg})
      for (auto& x : *v) x = t % 2 ? u(rng) : grid(rng) / 12.0;
    worst = std::max(worst, std::abs(evalharness::compute_auc(pos, neg) - oracle::brute_auc(pos, neg)));
  }
  auto samples = [](const std::vector<double>& pos, const std::vector<double>& neg) {
    std::vector<evalharness::ScoredSample> out;
    for (double x : pos) out.push_back({"p", true, x, "swap", "x"});
    for (double x : neg) out.push_back({"n", false, x, "swap", "x"});
    return out;
  };
  const std::vector<double> sp{0.7, 0.8, 0.9}, sn{0.1, 0.2, 0.3};
  const double sep_auc = evalharness::compute_auc(sp, sn);
  const double sep_eer = evalharness::compute_eer(samples(sp, sn)).eer;
  const double hand_auc = evalharness::compute_auc({0.9, 0.4}, {0.6, 0.1});
  const double hand_eer = evalharness::compute_eer(samples({0.9, 0.6}, {0.7, 0.1})).eer;
  const bool ok = worst <= 1e-9 && sep_auc == 1.0 && sep_eer == 0.0 && hand_auc == 0.75 && hand_eer == 0.5;
  return {5, "metric oracles", ok,
          "max |auc - brute| " + sci(worst) + " over 200 sets; separated auc " + num(sep_auc, 2) + " eer " +
              num(sep_eer, 2) + "; hand auc " + num(hand_auc, 2) + " eer " + num(hand_eer, 2)};
}

// ---- 6 -------------------------------------------------------------------

Verdict ratios(pipeline::Pipeline& p) {
  std::mt19937_64 rng(606);
  std::uniform_int_distribution<int> total(1, 200000);
  int bad = 0;
  for (int t = 0; t < 20; ++t) {
    const int n = total(rng);
    for (const datagen::Ratio r : {datagen::Ratio{2, 1, 1}, datagen::Ratio{1, 5, 5}}) {
      const auto want = oracle::split_by_ratio(n, r.positive, r.different, r.forgery);
      const auto got = datagen::split_counts(n, r);
      bad += got.positive != want.positive || got.different != want.different || got.forgery != want.forgery;
    }
  }
  auto count = [](const std::vector<datagen::FacePairRecord>& recs) {
    datagen::PairCounts c;
    for (const auto& r : recs) {
      c.positive += r.pair_type == datagen::PairType::pos_same_id;
      c.different += r.pair_type == datagen::PairType::neg_diff_id;
      c.forgery += r.pair_type == datagen::PairType::neg_forgery;
    }
    return c;
  };
  const auto& cfg = p.config();
  const auto g = count(p.did_general());
  bad += !(g == datagen::split_counts(cfg.did_general_total, cfg.did_general_ratio));
  std::string vip_text;
  for (const auto& id : p.world().identity_tags(world::Role::vip)) {
    const auto v = count(p.did_vip(id));
    bad += !(v == datagen::split_counts(cfg.did_vip_total, cfg.did_vip_ratio));
    vip_text += ", " + id + " " + std::to_string(v.positive) + "/" + std::to_string(v.different) + "/" +
                std::to_string(v.forgery);
  }
  return {6, "pair ratio exactness", bad == 0,
          "20 random totals x 2 ratios against the floor rule; general corpus " + std::to_string(g.positive) + "/" +
              std::to_string(g.different) + "/" + std::to_string(g.forgery) + vip_text + "; " + std::to_string(bad) +
              " mismatches"};
}

// ---- 7 -------------------------------------------------------------------

Verdict grounding(pipeline::Pipeline& p) {
  const auto& w = p.world();
  long long checked = 0, violations = 0;
  auto check = [&](const std::vector<datagen::FacePairRecord>& recs) {
    for (const auto& r : recs) {
      violations += oracle::grounding_violations(r.annotation, datagen::to_map(w.at(r.ref_id).attributes),
                                                 datagen::to_map(w.at(r.test_id).attributes));
      ++checked;
    }
  };
  for (const auto& e : fs::directory_iterator(p.layout().corpora())) {
    const auto name = e.path().filename().string();
    if (name.rfind("did_", 0) == 0 && e.path().extension() == ".jsonl") check(datagen::load_did(e.path()));
  }
  // attribute answers in the VQA corpus must match the image they describe
  long long vqa = 0;
  for (const auto& s : datagen::load_dfa(p.layout().corpora() / "dfa.jsonl")) {
    violations += !datagen::grade_vqa(s, w.at(s.image_refs.at(0)).attributes);
    ++vqa;
  }
  return {7, "annotation grounding", violations == 0 && checked > 0,
          std::to_string(violations) + " violations over " + std::to_string(checked) + " pair annotations and " +
              std::to_string(vqa) + " attribute answers"};
}

// ---- 8 - 13 ----------------------------------------------------------------

Verdict token_sweep(const pipeline::EvalReport& r, const std::vector<int>& sweep) {
  const double at32 = r.mean("tokens/n32");
  bool ok = true;
  std::string text = "n=32 " + num(at32);
  for (int n : sweep) {
    if (n == 32) continue;
    const double v = r.mean("tokens/n" + std::to_string(n));
    ok = ok && at32 >= v - 0.01;
    text += ", n=" + std::to_string(n) + " " + num(v);
  }
  return {8, "VIP token count sweep", ok, text + " (need n=32 >= others - 0.01)"};
}

Verdict annotation_free(const pipeline::EvalReport& r) {
  const double full = r.mean("annotation/full"), free = r.mean("annotation/free");
  const bool ok = free >= full - 0.05 && full >= 0.90 && free >= 0.90;
  return {9, "annotation-free stage 3", ok,
          "annotated " + num(full) + ", images only " + num(free) + " (need free >= full - 0.05, both >= 0.90)"};
}

Verdict adaptive(const pipeline::EvalReport& r) {
  const double manual = r.mean("adaptive/manual"), learned = r.mean("adaptive/learned"),
               sel = r.mean("selection/oracle"), sel_learned = r.mean("selection/learned");
  const bool ok = manual - learned <= 0.01 && sel == 1.0;
  return {10, "adaptive VIP selection", ok,
          "manual " + num(manual) + ", learned-embedder adaptive " + num(learned) + " (gap " + num(manual - learned) +
              ", need <= 0.01); oracle selection accuracy " + num(sel) + " (learned " + num(sel_learned) + ")"};
}

Verdict robustness(const pipeline::EvalReport& r) {
  bool table = true;
  const double sigma[] = {8, 11, 18}, bsig[] = {1, 2, 3};
  const int kernel[] = {7, 13, 21}, quality[] = {90, 60, 30};
  for (int l = 1; l <= 3; ++l) {
    const auto n = evalharness::DegradationSpec::make(evalharness::DegradationKind::gaussian_noise_ycbcr, l);
    const auto b = evalharness::DegradationSpec::make(evalharness::DegradationKind::gaussian_blur, l);
    const auto j = evalharness::DegradationSpec::make(evalharness::DegradationKind::jpeg, l);
    table = table && n.noise_sigma == sigma[l - 1] && b.kernel == kernel[l - 1] && b.blur_sigma == bsig[l - 1] &&
            j.quality == quality[l - 1];
  }
  table = table && evalharness::degradation_registry().size() == 9;
  const double clean = r.mean("robustness/clean"), n1 = r.mean("robustness/noise:1"),
               n2 = r.mean("robustness/noise:2"), n3 = r.mean("robustness/noise:3");
  const bool ok = table && n1 >= n2 && n2 >= n3 && clean - n3 <= 0.08;
  return {11, "robustness", ok,
          std::string("parameter table ") + (table ? "exact" : "MISMATCH") + "; clean " + num(clean) + ", noise " +
              num(n1) + " / " + num(n2) + " / " + num(n3) + " (need non-increasing, drop <= 0.08); blur " +
              num(r.mean("robustness/blur:1")) + " / " + num(r.mean("robustness/blur:2")) + " / " +
              num(r.mean("robustness/blur:3")) + ", jpeg " + num(r.mean("robustness/jpeg:1")) + " / " +
              num(r.mean("robustness/jpeg:2")) + " / " + num(r.mean("robustness/jpeg:3"))};
}

Verdict oneshot(const pipeline::EvalReport& r, const std::vector<std::string>& vips) {
  const double os = r.mean("oneshot");
  bool ok = os >= 0.60;
  std::string text = "one-shot " + num(os) + " (need >= 0.60)";
  for (const auto& id : vips) {
    const double o = r.mean("oneshot/" + id), pz = r.mean("personalized/" + id);
    ok = ok && pz >= o;
    text += "; " + id + " personalized " + num(pz) + " vs one-shot " + num(o);
  }
  return {12, "one-shot protocol", ok, text};
}

Verdict images(const pipeline::EvalReport& r, int few) {
  const double all = r.mean("images/all"), f = r.mean("images/few"), one = r.mean("images/oneshot");
  const bool ok = all >= f - 0.01 && f >= one - 0.01;
  return {13, "available-image sweep", ok,
          "all " + num(all) + ", " + std::to_string(few) + " images " + num(f) + ", one-shot " + num(one) +
              " (need non-decreasing within 0.01)"};
}

}  // namespace

int main(int argc, char** argv) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto kv = config::KeyValues::load(argc > 1 ? argv[1] : VIPGUARD_TOY_CONFIG);
    kv.set("out", VIPGUARD_ACCEPTANCE_OUT);
    pipeline::Pipeline p(config::RunConfig::from(kv), std::cerr);
    std::cerr << "[acceptance] output root " << p.layout().root.string() << "\n";
    p.make_world();
    p.build();
    p.train(1);
    p.train(2);
    p.train(3);
    const auto report = p.eval("full");
    const auto vips = p.world().identity_tags(world::Role::vip);

    std::vector<Verdict> out;
    out.push_back(ablation(report));
    out.push_back(frozen_backbone(p));
    out.push_back(gradients(p));
    out.push_back(attention());
    out.push_back(metrics());
    out.push_back(ratios(p));
    out.push_back(grounding(p));
    out.push_back(token_sweep(report, p.config().eval_token_sweep));
    out.push_back(annotation_free(report));
    out.push_back(adaptive(report));
    out.push_back(robustness(report));
    out.push_back(oneshot(report, vips));
    out.push_back(images(report, p.config().eval_few_images));

    int failed = 0;
    std::ostringstream lines;
    for (const auto& v : out) {
      lines << (v.pass ? "[PASS] " : "[FAIL] ") << std::setw(2) << v.id << " " << v.name << ": " << v.details << "\n";
      failed += !v.pass;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    lines << (out.size() - failed) << "/" << out.size() << " criteria passed (" << num(secs / 60.0, 1)
          << " min)\n";
    std::cout << lines.str();
    fs::create_directories(p.layout().reports());
    std::ofstream(p.layout().reports() / "acceptance.txt") << lines.str();
    return failed == 0 ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "acceptance aborted (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return e.exit_code();
  }
}
