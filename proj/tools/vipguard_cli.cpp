// vipguard: world generation, corpus building, staged training, enrollment,
// detection and evaluation from one entry point.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vipguard/common.hpp"
#include "vipguard/config.hpp"
#include "vipguard/pipeline.hpp"

using namespace vipguard;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

config::RunConfig load_config(const Common& c) {
  config::KeyValues kv = c.config_path.empty() ? config::KeyValues{} : config::KeyValues::load(c.config_path);
  for (const auto& o : c.overrides) {
    auto eq = o.find('=');
    require(eq != std::string::npos, ErrorKind::invalid_argument, "--set expects key=value, got '" + o + "'");
    kv.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  if (c.seed) kv.set("seed", std::to_string(*c.seed));
  if (!c.out.empty()) kv.set("out", c.out);
  return config::RunConfig::from(kv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vipguard: personalized deepfake detection on a synthetic face world"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config_path, "Flat key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "Top-level seed (overrides the config)");
  app.add_option("--out", common.out, "Output root (overrides the config; VIPGUARD_OUT overrides both)");
  app.add_option("--set", common.overrides, "Extra key=value config overrides")->take_all();

  auto* world_cmd = app.add_subcommand("world", "Generate identities, real images and forgeries");
  auto* build_cmd = app.add_subcommand("build", "Build the VQA and face-pair corpora");

  int stage = 0;
  std::string train_identity;
  auto* train_cmd = app.add_subcommand("train", "Train one stage (3 enrolls every protected identity)");
  train_cmd->add_option("--stage", stage, "1, 2 or 3")->required()->check(CLI::Range(1, 3));
  train_cmd->add_option("--identity", train_identity, "Stage 3 only: restrict to one identity");

  std::string enroll_identity;
  auto* enroll_cmd = app.add_subcommand("enroll", "Fit a VIP token and add the identity to the registry");
  enroll_cmd->add_option("--identity", enroll_identity, "Identity tag, e.g. id020")->required();

  std::string detect_input, detect_identity;
  bool detect_auto = false, detect_explain = false;
  auto* detect_cmd = app.add_subcommand("detect", "Judge one image (world sample id or .ppm file)");
  detect_cmd->add_option("input", detect_input, "World sample id or image path")->required();
  auto* id_opt = detect_cmd->add_option("--identity", detect_identity, "Protected identity to check against");
  auto* auto_opt = detect_cmd->add_flag("--auto", detect_auto, "Pick the identity from the registry");
  id_opt->excludes(auto_opt);
  detect_cmd->add_flag("--explain", detect_explain, "Decode the explanation after the verdict");

  std::string suite = "full";
  auto* eval_cmd = app.add_subcommand("eval", "Run an evaluation suite and write reports");
  eval_cmd->add_option("--suite", suite, "ablation, oneshot, tokens, annotation, images, adaptive, robustness, full")
      ->check(CLI::IsMember(pipeline::Pipeline::suites()));

  std::string degrade_spec;
  auto* degrade_cmd = app.add_subcommand("degrade", "Write a degraded copy of the world (kind:level)");
  degrade_cmd->add_option("--degrade,spec", degrade_spec, "noise:1..3, blur:1..3 or jpeg:1..3")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::invalid_argument);
  }

  try {
    pipeline::Pipeline p(load_config(common), std::cerr);
    if (world_cmd->parsed()) {
      p.make_world();
    } else if (build_cmd->parsed()) {
      p.build();
    } else if (train_cmd->parsed()) {
      if (stage == 3 && !train_identity.empty())
        p.enroll(train_identity);
      else
        p.train(stage);
    } else if (enroll_cmd->parsed()) {
      p.enroll(enroll_identity);
    } else if (detect_cmd->parsed()) {
      std::optional<std::string> id;
      if (!detect_identity.empty()) id = detect_identity;
      const auto r = p.detect(detect_input, id, detect_auto, detect_explain);
      std::cout << "identity " << r.identity;
      if (detect_auto) std::cout << " (similarity " << r.selection_score << ")";
      std::cout << "\nverdict " << (r.detection.yes ? "Yes" : "No") << "\np_yes " << r.detection.p_yes << "\n";
      if (detect_explain) std::cout << "explanation " << r.detection.explanation << "\n";
    } else if (eval_cmd->parsed()) {
      const auto report = p.eval(suite);
      for (const auto& [key, values] : report.values) std::cout << key << " " << report.mean(key) << "\n";
    } else if (degrade_cmd->parsed()) {
      std::cout << p.degrade(degrade_spec).string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error (io): " << e.what() << "\n";
    return static_cast<int>(ErrorKind::io);
  }
  return 0;
}
