#include "vipguard/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "vipguard/checkpoint.hpp"
#include "vipguard/image_io.hpp"
#include "vipguard/train.hpp"

namespace vipguard::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::optional<std::uint64_t> read_stamp(const fs::path& dir) {
  std::ifstream in(dir / "stamp.json");
  if (!in) return std::nullopt;
  try {
    const json j = json::parse(in);
    return std::stoull(j.at("key").get<std::string>(), nullptr, 16);
  } catch (const std::exception&) {
    return std::nullopt;  // unreadable stamps are treated as stale
  }
}

void write_stamp(const fs::path& dir, std::uint64_t key, const std::string& what) {
  fs::create_directories(dir);
  std::ofstream out(dir / "stamp.json");
  require(static_cast<bool>(out), ErrorKind::io, "cannot write stamp in " + dir.string());
  out << json{{"key", hex64(key)}, {"product", what}, {"version", std::string(kVersion)}}.dump(2) << "\n";
}

bool fresh(const fs::path& dir, std::uint64_t key) {
  auto s = read_stamp(dir);
  return s && *s == key;
}

// Moves a finished temporary directory into place.
void commit_dir(const fs::path& tmp, const fs::path& dest) {
  fs::remove_all(dest);
  fs::create_directories(dest.parent_path());
  fs::rename(tmp, dest);
}

std::uint64_t combine(std::initializer_list<std::uint64_t> parts, std::string_view tail = {}) {
  std::string s;
  for (auto p : parts) s += hex64(p) + ";";
  s += tail;
  return fnv1a(s);
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

train::StepCallback progress(std::ostream& log, const std::string& label) {
  auto t0 = Clock::now();
  return [&log, label, t0](int step, int total, double loss) {
    const int every = std::max(1, total / 10);
    if (step == 1 || step == total || step % every == 0) {
      log << "  [" << label << "] step " << step << "/" << total << " loss " << std::fixed << std::setprecision(4)
          << loss << " (" << std::setprecision(0) << seconds_since(t0) << "s)" << std::defaultfloat
          << std::setprecision(6) << "\n";
      log.flush();
    }
  };
}

double average(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

// Horizontal bar chart of one number per key.
void write_svg_bars(const fs::path& path, const std::string& title, const std::vector<std::pair<std::string, double>>& bars) {
  const int row = 18, left = 220, width = 360, top = 30;
  const int height = top + row * static_cast<int>(bars.size()) + 20;
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + width + 70 << "\" height=\"" << height
      << "\" font-family=\"monospace\" font-size=\"11\">\n";
  out << "<text x=\"4\" y=\"16\" font-size=\"13\">" << title << "</text>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const int y = top + row * static_cast<int>(i);
    const double v = std::clamp(bars[i].second, 0.0, 1.0);
    out << "<text x=\"4\" y=\"" << y + 12 << "\">" << bars[i].first << "</text>\n";
    out << "<rect x=\"" << left << "\" y=\"" << y + 2 << "\" width=\"" << static_cast<int>(v * width)
        << "\" height=\"" << row - 5 << "\" fill=\"#4a7ab5\"/>\n";
    out << "<text x=\"" << left + static_cast<int>(v * width) + 4 << "\" y=\"" << y + 12 << "\">"
        << fmt(bars[i].second, 3) << "</text>\n";
  }
  // reference line at 0.5 (chance AUC)
  out << "<line x1=\"" << left + width / 2 << "\" y1=\"" << top << "\" x2=\"" << left + width / 2 << "\" y2=\""
      << height - 20 << "\" stroke=\"#999\" stroke-dasharray=\"3,3\"/>\n";
  out << "</svg>\n";
}

}  // namespace

std::string_view to_string(Backbone backbone) {
  switch (backbone) {
    case Backbone::untrained: return "untrained";
    case Backbone::stage1: return "stage1";
    case Backbone::stage12: return "stage12";
  }
  return "?";
}

double EvalReport::mean(const std::string& key) const {
  auto it = values.find(key);
  require(it != values.end(), ErrorKind::invalid_argument, "report has no value " + key);
  return average(it->second);
}

fs::path resolve_output_root(const config::RunConfig& config) {
  if (const char* env = std::getenv("VIPGUARD_OUT"); env && *env) return fs::path(env);
  return fs::path(config.out);
}

Pipeline::Pipeline(config::RunConfig config, std::ostream& log) : config_(std::move(config)), log_(log) {
  config_.validate();
  layout_.root = resolve_output_root(config_);
}

Pipeline::~Pipeline() = default;

const std::vector<std::string>& Pipeline::suites() {
  static const std::vector<std::string> names{"ablation", "oneshot",  "tokens",     "annotation",
                                              "images",   "adaptive", "robustness", "full"};
  return names;
}

std::uint64_t Pipeline::replica_seed(int replica) const {
  return replica == 0 ? config_.seed : derive_seed(config_.seed, "replica", static_cast<std::uint64_t>(replica));
}

// ---- keys -----------------------------------------------------------------

std::uint64_t Pipeline::world_key() const { return fnv1a(config_.canonical({"seed", "world"})); }

std::uint64_t Pipeline::build_key() const {
  return combine({world_key()}, config_.canonical({"dfa", "did"}));
}

std::uint64_t Pipeline::backbone_key(Backbone kind, int replica) const {
  const std::uint64_t rs = replica_seed(replica);
  switch (kind) {
    case Backbone::untrained: return combine({rs}, config_.canonical({"model"}));
    case Backbone::stage1:
      return combine({build_key(), backbone_key(Backbone::untrained, replica)}, config_.canonical({"stage1"}));
    case Backbone::stage12: {
      std::string s2 = config_.canonical({"stage2"});
      return combine({backbone_key(Backbone::stage1, replica)}, s2);
    }
  }
  return 0;
}

fs::path Pipeline::backbone_dir(Backbone kind, int replica) const {
  if (replica == 0 && kind == Backbone::stage1) return layout_.checkpoint(1);
  if (replica == 0 && kind == Backbone::stage12) return layout_.checkpoint(2);
  return layout_.cache() / ("backbone-" + std::string(to_string(kind)) + "-r" + std::to_string(replica));
}

void Pipeline::require_built(const std::string& command) {
  require(fresh(layout_.world(), world_key()), ErrorKind::missing_prerequisite,
          command + " needs the world; run `vipguard world` first (" + layout_.world().string() + " missing or stale)");
  require(fresh(layout_.corpora(), build_key()), ErrorKind::missing_prerequisite,
          command + " needs the corpora; run `vipguard build` first (" + layout_.corpora().string() +
              " missing or stale)");
}

void Pipeline::write_record(const std::string& command, const json& details) {
  fs::create_directories(layout_.records());
  json cfg = json::object();
  for (const auto& [k, v] : config_.to_map()) cfg[k] = v;
  json rec{{"command", command},
           {"version", std::string(kVersion)},
           {"seed", config_.seed},
           {"config_hash", hex64(config_.hash())},
           {"config", cfg},
           {"compiler", __VERSION__},
           {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                         std::to_string(EIGEN_MINOR_VERSION)},
           {"details", details}};
  std::string name = command;
  for (char& c : name)
    if (c == ' ' || c == '/' || c == ':') c = '-';
  std::ofstream out(layout_.records() / (name + ".json"));
  require(static_cast<bool>(out), ErrorKind::io, "cannot write record for " + command);
  out << rec.dump(2) << "\n";
}

// ---- world and corpora ----------------------------------------------------

void Pipeline::make_world() {
  const auto key = world_key();
  if (fresh(layout_.world(), key)) {
    log_ << "[world] up to date (" << layout_.world().string() << ")\n";
    write_record("world", {{"key", hex64(key)}, {"skipped", true}});
    return;
  }
  auto t0 = Clock::now();
  world::WorldConfig wc = config_.world;
  wc.seed = derive_seed(config_.seed, "world");
  wc.validate();
  const fs::path tmp = layout_.root / "world.partial";
  fs::remove_all(tmp);
  try {
    world::World w = world::generate_world(wc);
    world::save_world(w, tmp);
    write_stamp(tmp, key, "world");
    commit_dir(tmp, layout_.world());
    log_ << "[world] " << w.samples().size() << " samples, " << w.identity_tags().size() << " identities ("
         << fmt(seconds_since(t0), 1) << "s)\n";
    write_record("world", {{"key", hex64(key)}, {"samples", w.samples().size()},
                           {"manifest_hash", hex64(world::manifest_hash(w))}});
    world_ = std::make_unique<world::World>(std::move(w));
  } catch (...) {
    fs::remove_all(tmp);  // never leave a half-written world behind
    throw;
  }
}

const world::World& Pipeline::world() {
  if (!world_) {
    require(fresh(layout_.world(), world_key()), ErrorKind::missing_prerequisite,
            "world missing or stale at " + layout_.world().string() + "; run `vipguard world`");
    world_ = std::make_unique<world::World>(world::load_world(layout_.world()));
  }
  return *world_;
}

namespace {

priors::LearnedEmbedder fit_embedder(const world::World& w) {
  std::vector<const Image*> images;
  std::vector<int> labels;
  const auto tags = w.identity_tags(world::Role::general);
  for (std::size_t i = 0; i < tags.size(); ++i)
    for (const auto* s : w.select(tags[i], synthworld::Label::real)) {
      images.push_back(&s->image);
      labels.push_back(static_cast<int>(i));
    }
  return priors::LearnedEmbedder::fit(images, labels);
}

std::optional<int> count_option(int v) { return v < 0 ? std::nullopt : std::optional<int>(v); }

}  // namespace

const priors::Embedder& Pipeline::embedder(config::EmbedderKind kind) {
  if (kind == config::EmbedderKind::oracle) {
    if (!oracle_) oracle_ = std::make_unique<priors::OracleEmbedder>(derive_seed(config_.seed, "oracle-embedder"));
    return *oracle_;
  }
  if (!learned_) {
    const fs::path path = layout_.corpora() / "embedder.json";
    if (fresh(layout_.corpora(), build_key()) && fs::exists(path))
      learned_ = std::make_unique<priors::LearnedEmbedder>(priors::LearnedEmbedder::load(path));
    else
      learned_ = std::make_unique<priors::LearnedEmbedder>(fit_embedder(world()));
  }
  return *learned_;
}

void Pipeline::build() {
  const auto key = build_key();
  if (fresh(layout_.corpora(), key)) {
    log_ << "[build] up to date (" << layout_.corpora().string() << ")\n";
    write_record("build", {{"key", hex64(key)}, {"skipped", true}});
    return;
  }
  const auto& w = world();
  require(!w.empty(), ErrorKind::insufficient_data, "world is empty; nothing to build corpora from");
  auto t0 = Clock::now();
  const fs::path tmp = layout_.root / "corpora.partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  json details{{"key", hex64(key)}};
  try {
    learned_ = std::make_unique<priors::LearnedEmbedder>(fit_embedder(w));
    learned_->save(tmp / "embedder.json");
    const priors::Embedder& emb = embedder(config_.embedder);
    datagen::TemplateAnnotator annotator;

    datagen::DfaOptions dopt;
    dopt.k = config_.dfa_k;
    dopt.multiple_choice = count_option(config_.dfa_multiple_choice);
    dopt.short_answer = count_option(config_.dfa_short_answer);
    dopt.long_answer = count_option(config_.dfa_long_answer);
    dopt.include_vip = config_.dfa_include_vip;
    dopt.seed = derive_seed(config_.seed, "dfa");
    auto dfa = datagen::build_dfa(w, dopt);
    datagen::CorpusHeader h{"dfa", dopt.seed, std::string(world::kWorldVersion), {{"k", std::to_string(dopt.k)}}};
    datagen::save_dfa(tmp / "dfa.jsonl", h, dfa);
    details["dfa"] = dfa.size();

    datagen::DidOptions gopt;
    gopt.scope = datagen::Scope::general;
    gopt.ratio = config_.did_general_ratio;
    gopt.total = config_.did_general_total;
    gopt.seed = derive_seed(config_.seed, "did-general");
    auto general = datagen::build_did(w, gopt, annotator, emb);
    datagen::CorpusHeader gh{"did", gopt.seed, std::string(world::kWorldVersion),
                             {{"scope", "general"}, {"ratio", config::format_ratio(gopt.ratio)},
                              {"embedder", emb.name()}}};
    datagen::save_did(tmp / "did_general.jsonl", gh, general);
    details["did_general"] = general.size();

    for (const auto& tag : w.identity_tags(world::Role::vip)) {
      datagen::DidOptions vopt;
      vopt.scope = datagen::Scope::vip;
      vopt.vip_identity = tag;
      vopt.ratio = config_.did_vip_ratio;
      vopt.total = config_.did_vip_total;
      vopt.seed = derive_seed(config_.seed, "did-vip:" + tag);
      if (config_.did_reference_limit > 0) vopt.reference_limit = config_.did_reference_limit;
      auto vip = datagen::build_did(w, vopt, annotator, emb);
      datagen::CorpusHeader vh{"did", vopt.seed, std::string(world::kWorldVersion),
                               {{"scope", "vip"}, {"identity", tag}, {"ratio", config::format_ratio(vopt.ratio)},
                                {"embedder", emb.name()}}};
      datagen::save_did(tmp / ("did_vip_" + tag + ".jsonl"), vh, vip);
      details["did_vip_" + tag] = vip.size();
    }
    write_stamp(tmp, key, "corpora");
    commit_dir(tmp, layout_.corpora());
    dfa_ = std::make_unique<std::vector<datagen::VQASample>>(std::move(dfa));
    did_general_ = std::make_unique<std::vector<datagen::FacePairRecord>>(std::move(general));
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }
  log_ << "[build] corpora written (" << fmt(seconds_since(t0), 1) << "s): " << details.dump() << "\n";
  write_record("build", details);
}

const std::vector<datagen::VQASample>& Pipeline::dfa() {
  if (!dfa_) {
    require_built("training");
    dfa_ = std::make_unique<std::vector<datagen::VQASample>>(datagen::load_dfa(layout_.corpora() / "dfa.jsonl"));
  }
  return *dfa_;
}

const std::vector<datagen::FacePairRecord>& Pipeline::did_general() {
  if (!did_general_) {
    require_built("training");
    did_general_ = std::make_unique<std::vector<datagen::FacePairRecord>>(
        datagen::load_did(layout_.corpora() / "did_general.jsonl"));
  }
  return *did_general_;
}

std::vector<datagen::FacePairRecord> Pipeline::did_vip(const std::string& identity, int reference_limit) {
  require_built("enrollment");
  const auto& w = world();
  const auto vips = w.identity_tags(world::Role::vip);
  require(std::find(vips.begin(), vips.end(), identity) != vips.end(), ErrorKind::invalid_argument,
          "'" + identity + "' is not a protected identity of this world");
  const int limit = reference_limit > 0 ? reference_limit : config_.did_reference_limit;
  if (limit == config_.did_reference_limit) {
    const fs::path path = layout_.corpora() / ("did_vip_" + identity + ".jsonl");
    if (fs::exists(path)) return datagen::load_did(path);
  }
  datagen::DidOptions vopt;
  vopt.scope = datagen::Scope::vip;
  vopt.vip_identity = identity;
  vopt.ratio = config_.did_vip_ratio;
  vopt.total = config_.did_vip_total;
  vopt.seed = derive_seed(config_.seed, "did-vip:" + identity);
  if (limit > 0) vopt.reference_limit = limit;
  vopt.shrink_to_fit = limit != config_.did_reference_limit;
  datagen::TemplateAnnotator annotator;
  return datagen::build_did(w, vopt, annotator, embedder(config_.embedder));
}

// ---- training -------------------------------------------------------------

model::Model& Pipeline::backbone(Backbone kind, int replica) {
  const auto slot = std::make_pair(static_cast<int>(kind), replica);
  if (auto it = backbones_.find(slot); it != backbones_.end()) return *it->second;

  const std::uint64_t rs = replica_seed(replica);
  const std::uint64_t key = backbone_key(kind, replica);
  const fs::path dir = backbone_dir(kind, replica);
  std::unique_ptr<model::Model> m;
  if (kind == Backbone::untrained) {
    model::ModelConfig mc = config_.model;
    mc.seed = derive_seed(rs, "model");
    m = std::make_unique<model::Model>(mc, datagen::build_vocabulary());
  } else if (fresh(dir, key)) {
    m = std::make_unique<model::Model>(checkpoint::load_model(dir));
  } else {
    require_built("training");
    const Backbone parent = kind == Backbone::stage1 ? Backbone::untrained : Backbone::stage1;
    m = std::make_unique<model::Model>(backbone(parent, replica));
    train::StageConfig sc = kind == Backbone::stage1 ? config_.stage1 : config_.stage2;
    sc.seed = derive_seed(rs, kind == Backbone::stage1 ? "stage1" : "stage2");
    const std::string label = std::string(kind == Backbone::stage1 ? "stage 1" : "stage 2") + " r" +
                              std::to_string(replica);
    auto t0 = Clock::now();
    log_ << "[train] " << label << ": " << sc.epochs << " epochs, batch " << sc.effective_batch << ", lr "
         << sc.learning_rate << "\n";
    train::TrainState st = kind == Backbone::stage1 ? train::train_stage1(*m, dfa(), world(), sc, progress(log_, label))
                                                    : train::train_stage2(*m, did_general(), world(), sc,
                                                                          progress(log_, label));
    const fs::path tmp = dir.string() + ".partial";
    fs::remove_all(tmp);
    checkpoint::save_model(*m, tmp,
                           {{"backbone", std::string(to_string(kind))}, {"replica", replica}, {"steps", st.step},
                            {"trainable", st.trainable}, {"frozen_checksum", hex64(st.frozen_checksum)}});
    train::write_loss_history(tmp / "loss.jsonl", st);
    write_stamp(tmp, key, std::string(to_string(kind)));
    commit_dir(tmp, dir);
    log_ << "[train] " << label << " done (" << fmt(seconds_since(t0), 1) << "s) -> " << dir.string() << "\n";
  }
  auto& ref = *m;
  backbones_.emplace(slot, std::move(m));
  return ref;
}

void Pipeline::train(int stage) {
  require(stage >= 1 && stage <= 3, ErrorKind::invalid_argument, "--stage must be 1, 2 or 3");
  if (stage == 3) {
    for (const auto& tag : world().identity_tags(world::Role::vip)) enroll(tag);
    return;
  }
  require_built("train --stage " + std::to_string(stage));
  const Backbone kind = stage == 1 ? Backbone::stage1 : Backbone::stage12;
  if (stage == 2)
    require(fresh(layout_.checkpoint(1), backbone_key(Backbone::stage1, 0)), ErrorKind::missing_prerequisite,
            "stage 2 needs the stage 1 checkpoint (" + layout_.checkpoint(1).string() +
                " missing or stale); run `vipguard train --stage 1`");
  const bool was_fresh = fresh(backbone_dir(kind, 0), backbone_key(kind, 0));
  if (was_fresh) log_ << "[train] stage " << stage << " up to date (" << backbone_dir(kind, 0).string() << ")\n";
  model::Model& m = backbone(kind, 0);
  write_record("train-stage" + std::to_string(stage),
               {{"key", hex64(backbone_key(kind, 0))}, {"skipped", was_fresh},
                {"model_hash", hex64(checkpoint::model_hash(m))}});
}

model::VIPToken Pipeline::vip_token(model::Model& bb, Backbone kind, int replica, const TokenRequest& request) {
  const std::uint64_t rs = replica_seed(replica);
  const int limit = request.reference_limit > 0 ? request.reference_limit : config_.did_reference_limit;
  const std::uint64_t key =
      combine({backbone_key(kind, replica), build_key()},
              config_.canonical({"stage3"}) + request.identity + ";" + std::to_string(request.tokens) + ";" +
                  (request.annotation_free ? "free" : "full") + ";" + std::to_string(limit));
  const bool canonical_slot = replica == 0 && kind == Backbone::stage12 && request.tokens == config_.vip_tokens &&
                              request.annotation_free == config_.annotation_free &&
                              limit == config_.did_reference_limit;
  const fs::path dir = canonical_slot ? layout_.token(request.identity) : layout_.cache() / ("token-" + hex64(key));
  if (fresh(dir, key)) return checkpoint::load_vip_token(dir);

  train::StageConfig sc = config_.stage3;
  sc.seed = derive_seed(rs, "stage3:" + request.identity);
  train::Stage3Options opt;
  opt.identity_tag = request.identity;
  opt.tokens = request.tokens;
  opt.annotation_free = request.annotation_free;
  const auto corpus = did_vip(request.identity, limit);
  const std::string label = "stage 3 " + request.identity + " " + std::string(to_string(kind)) + " r" +
                            std::to_string(replica) + " n" + std::to_string(request.tokens) +
                            (request.annotation_free ? " free" : "") + (limit > 0 ? " refs" + std::to_string(limit) : "");
  auto t0 = Clock::now();
  train::TrainState st;
  model::VIPToken token = train::train_stage3(bb, corpus, world(), sc, opt, &st, {});
  const fs::path tmp = dir.string() + ".partial";
  fs::remove_all(tmp);
  checkpoint::save_vip_token(token, tmp,
                             {{"backbone", std::string(to_string(kind))}, {"replica", replica},
                              {"annotation_free", request.annotation_free}, {"reference_limit", limit},
                              {"diverged", st.diverged}, {"learning_rate", st.used_lr},
                              {"frozen_checksum", hex64(st.frozen_checksum)}});
  train::write_loss_history(tmp / "loss.jsonl", st);
  write_stamp(tmp, key, "vip-token");
  commit_dir(tmp, dir);
  const double last = st.loss_history.empty() ? 0.0 : st.loss_history.back().second;
  log_ << "[train] " << label << ": " << st.step << " steps, final loss " << fmt(last) << (st.diverged ? " (diverged, retried)" : "")
       << " (" << fmt(seconds_since(t0), 1) << "s)\n";
  return token;
}

void Pipeline::enroll(const std::string& identity) {
  require_built("enroll");
  require(fresh(layout_.checkpoint(2), backbone_key(Backbone::stage12, 0)), ErrorKind::missing_prerequisite,
          "enroll needs the stage 2 checkpoint (" + layout_.checkpoint(2).string() +
              " missing or stale); run `vipguard train --stage 2`");
  const auto vips = world().identity_tags(world::Role::vip);
  require(std::find(vips.begin(), vips.end(), identity) != vips.end(), ErrorKind::invalid_argument,
          "'" + identity + "' is not a protected identity of this world");
  TokenRequest req{identity, config_.vip_tokens, config_.annotation_free, 0};
  model::VIPToken token = vip_token(backbone(Backbone::stage12, 0), Backbone::stage12, 0, req);

  const priors::Embedder& emb = embedder(config_.embedder);
  priors::RegistryEntry entry;
  entry.identity_tag = identity;
  entry.token_path = fs::relative(layout_.token(identity), layout_.root).generic_string();
  const auto refs = datagen::vip_references(
      world(), identity, config_.did_reference_limit > 0 ? std::optional<int>(config_.did_reference_limit) : std::nullopt);
  for (const auto* r : refs) entry.references.push_back(emb.embed({&r->image, &r->latent}));
  auto registry = priors::VIPRegistry::load(layout_.registry());
  registry.upsert(std::move(entry));
  registry.save(layout_.registry());
  log_ << "[enroll] " << identity << " enrolled with " << refs.size() << " reference embeddings ("
       << emb.name() << ")\n";
  write_record("enroll-" + identity, {{"identity", identity}, {"references", refs.size()},
                                      {"token", layout_.token(identity).string()}, {"embedder", emb.name()}});
}

// ---- detection and degradation --------------------------------------------

DetectResult Pipeline::detect(const std::string& input, const std::optional<std::string>& identity, bool auto_select,
                              bool explain) {
  require(identity.has_value() != auto_select, ErrorKind::invalid_argument,
          "detect needs exactly one of --identity or --auto");
  require(fresh(layout_.checkpoint(2), backbone_key(Backbone::stage12, 0)), ErrorKind::missing_prerequisite,
          "detect needs the stage 2 checkpoint (" + layout_.checkpoint(2).string() +
              " missing or stale); run `vipguard train --stage 2`");
  Image image;
  const synthworld::IdentityLatent* latent = nullptr;
  const world::WorldSample* sample = fresh(layout_.world(), world_key()) ? world().find(input) : nullptr;
  if (sample) {
    image = sample->image;
    latent = &sample->latent;
  } else {
    require(fs::exists(input), ErrorKind::io, "no world sample or image file named '" + input + "'");
    image = image_io::read_ppm(input);
  }

  DetectResult result;
  if (auto_select) {
    const auto registry = priors::VIPRegistry::load(layout_.registry());
    require(!registry.empty(), ErrorKind::invalid_argument,
            "detect --auto needs at least one enrolled identity; the registry is empty");
    const priors::Embedder& emb = embedder(config_.embedder);
    require(latent != nullptr || emb.name() != "oracle", ErrorKind::invalid_argument,
            "the oracle embedder only works on world samples");
    const auto sel = priors::select_vip(emb.embed({&image, latent}), registry);
    result.identity = sel.identity_tag;
    result.selection_score = sel.score;
  } else {
    result.identity = *identity;
  }
  const fs::path token_dir = layout_.token(result.identity);
  require(checkpoint::has_model(token_dir) || fs::exists(token_dir / "stamp.json"), ErrorKind::missing_prerequisite,
          "identity '" + result.identity + "' is not enrolled; run `vipguard enroll --identity " + result.identity + "`");
  const model::VIPToken token = checkpoint::load_vip_token(token_dir);
  const model::Model& m = backbone(Backbone::stage12, 0);
  result.detection = m.detect(image, model::QueryKind::vip, nullptr, &token.mu, explain);
  write_record("detect", {{"input", input}, {"identity", result.identity}, {"auto", auto_select},
                          {"p_yes", result.detection.p_yes}, {"verdict", result.detection.yes ? "Yes" : "No"}});
  return result;
}

fs::path Pipeline::degrade(const std::string& spec_text) {
  const auto spec = evalharness::DegradationSpec::parse(spec_text);
  const std::string tag = std::string(evalharness::to_string(spec.kind)) + "-" + std::to_string(spec.level);
  const fs::path dest = layout_.degraded(tag);
  const std::uint64_t key = combine({world_key()}, spec.tag());
  if (fresh(dest, key)) {
    log_ << "[degrade] " << spec.tag() << " up to date (" << dest.string() << ")\n";
    return dest;
  }
  const auto& w = world();
  const std::uint64_t seed = derive_seed(config_.seed, "degrade");
  std::vector<world::WorldSample> samples = w.samples();
  for (auto& s : samples) s.image = evalharness::degrade(s.image, spec, derive_seed(seed, s.sample_id));
  world::World out(w.config(), std::move(samples));
  const fs::path tmp = dest.string() + ".partial";
  fs::remove_all(tmp);
  try {
    world::save_world(out, tmp);
    write_stamp(tmp, key, "degraded " + spec.tag());
    commit_dir(tmp, dest);
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }
  log_ << "[degrade] " << spec.tag() << ": " << out.samples().size() << " images -> " << dest.string() << "\n";
  write_record("degrade-" + tag, {{"spec", spec.tag()}, {"output", dest.string()}});
  return dest;
}

// ---- evaluation -----------------------------------------------------------

double Pipeline::personalized_auc(const model::Model& m, const model::VIPToken& token, const std::string& variant,
                                  EvalReport& report) {
  evalharness::QuerySpec q;
  q.kind = model::QueryKind::vip;
  q.vip = &token.mu;
  const auto metrics =
      evalharness::summarize(evalharness::score_dataset(m, evalharness::vip_test_set(world(), token.identity_tag), q));
  evalharness::append_rows(report.rows, report.suite, variant, token.identity_tag, metrics);
  return metrics.mean_auc;
}

double Pipeline::oneshot_auc(const model::Model& m, const std::string& identity, const std::string& variant,
                             EvalReport& report) {
  const auto tests = evalharness::vip_test_set(world(), identity);
  const auto refs = datagen::vip_references(world(), identity, std::nullopt);
  const int n = std::min<int>(config_.eval_oneshot_references, static_cast<int>(refs.size()));
  require(n >= 1, ErrorKind::insufficient_data, "no reference images for " + identity);
  std::vector<evalharness::ScoredSample> pooled;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<evalharness::ScoredSample> scored;
    sum += evalharness::one_shot_evaluate(m, *refs[i], tests, &scored).mean_auc;
    pooled.insert(pooled.end(), scored.begin(), scored.end());
  }
  // The table row reports metrics pooled over references; the returned value
  // is the per-reference mean.
  evalharness::append_rows(report.rows, report.suite, variant, identity, evalharness::summarize(pooled));
  return sum / n;
}

void Pipeline::suite_ablation(EvalReport& report) {
  const auto vips = world().identity_tags(world::Role::vip);
  for (int r = 0; r < config_.eval_seeds; ++r) {
    std::map<std::string, std::vector<double>> per;
    for (const auto& id : vips) {
      TokenRequest req{id, config_.vip_tokens, config_.annotation_free, 0};
      model::Model& m0 = backbone(Backbone::untrained, r);
      // Baseline: the untrained detector with the token stage 3 would start from.
      model::VIPToken init = model::init_vip_token(config_.vip_tokens, m0.config().width,
                                                   derive_seed(derive_seed(replica_seed(r), "stage3:" + id),
                                                               "vip-init:" + id));
      init.identity_tag = id;
      per["baseline"].push_back(personalized_auc(m0, init, "baseline/r" + std::to_string(r), report));
      per["stage3_only"].push_back(personalized_auc(m0, vip_token(m0, Backbone::untrained, r, req),
                                                    "stage3_only/r" + std::to_string(r), report));
      model::Model& m1 = backbone(Backbone::stage1, r);
      per["stage13"].push_back(
          personalized_auc(m1, vip_token(m1, Backbone::stage1, r, req), "stage13/r" + std::to_string(r), report));
      model::Model& m2 = backbone(Backbone::stage12, r);
      per["full"].push_back(
          personalized_auc(m2, vip_token(m2, Backbone::stage12, r, req), "full/r" + std::to_string(r), report));
    }
    for (const auto& [variant, aucs] : per) report.values["ablation/" + variant].push_back(average(aucs));
    log_ << "[eval] ablation r" << r << ": baseline " << fmt(average(per["baseline"])) << ", stage3_only "
         << fmt(average(per["stage3_only"])) << ", stage13 " << fmt(average(per["stage13"])) << ", full "
         << fmt(average(per["full"])) << "\n";
  }
}

void Pipeline::suite_oneshot(EvalReport& report) {
  const auto vips = world().identity_tags(world::Role::vip);
  for (int r = 0; r < config_.eval_seeds; ++r) {
    model::Model& m2 = backbone(Backbone::stage12, r);
    std::vector<double> os, pz;
    for (const auto& id : vips) {
      const double o = oneshot_auc(m2, id, "oneshot/r" + std::to_string(r), report);
      TokenRequest req{id, config_.vip_tokens, config_.annotation_free, 0};
      const double p = personalized_auc(m2, vip_token(m2, Backbone::stage12, r, req),
                                        "personalized/r" + std::to_string(r), report);
      report.values["oneshot/" + id].push_back(o);
      report.values["personalized/" + id].push_back(p);
      os.push_back(o);
      pz.push_back(p);
    }
    report.values["oneshot"].push_back(average(os));
    report.values["personalized"].push_back(average(pz));
    log_ << "[eval] oneshot r" << r << ": one-shot " << fmt(average(os)) << ", personalized " << fmt(average(pz))
         << "\n";
  }
}

void Pipeline::suite_tokens(EvalReport& report) {
  const auto vips = world().identity_tags(world::Role::vip);
  for (int r = 0; r < config_.eval_token_sweep_seeds; ++r) {
    model::Model& m2 = backbone(Backbone::stage12, r);
    for (int n : config_.eval_token_sweep) {
      std::vector<double> aucs;
      for (const auto& id : vips) {
        TokenRequest req{id, n, config_.annotation_free, 0};
        aucs.push_back(personalized_auc(m2, vip_token(m2, Backbone::stage12, r, req),
                                        "n" + std::to_string(n) + "/r" + std::to_string(r), report));
      }
      report.values["tokens/n" + std::to_string(n)].push_back(average(aucs));
      log_ << "[eval] tokens r" << r << " n=" << n << ": " << fmt(average(aucs)) << "\n";
    }
  }
}

void Pipeline::suite_annotation(EvalReport& report) {
  const auto vips = world().identity_tags(world::Role::vip);
  for (int r = 0; r < config_.eval_seeds; ++r) {
    model::Model& m2 = backbone(Backbone::stage12, r);
    for (bool free : {false, true}) {
      std::vector<double> aucs;
      for (const auto& id : vips) {
        TokenRequest req{id, config_.vip_tokens, free, 0};
        aucs.push_back(personalized_auc(m2, vip_token(m2, Backbone::stage12, r, req),
                                        std::string(free ? "annotation_free" : "annotated") + "/r" + std::to_string(r),
                                        report));
      }
      report.values[free ? "annotation/free" : "annotation/full"].push_back(average(aucs));
    }
    log_ << "[eval] annotation r" << r << ": annotated " << fmt(report.values["annotation/full"].back())
         << ", annotation-free " << fmt(report.values["annotation/free"].back()) << "\n";
  }
}

void Pipeline::suite_images(EvalReport& report) {
  const auto vips = world().identity_tags(world::Role::vip);
  for (int r = 0; r < config_.eval_seeds; ++r) {
    model::Model& m2 = backbone(Backbone::stage12, r);
    std::vector<double> all, few, one;
    for (const auto& id : vips) {
      TokenRequest req{id, config_.vip_tokens, config_.annotation_free, 0};
      all.push_back(personalized_auc(m2, vip_token(m2, Backbone::stage12, r, req), "all/r" + std::to_string(r), report));
      req.reference_limit = config_.eval_few_images;
      few.push_back(personalized_auc(m2, vip_token(m2, Backbone::stage12, r, req),
                                     "images" + std::to_string(config_.eval_few_images) + "/r" + std::to_string(r),
                                     report));
      one.push_back(oneshot_auc(m2, id, "oneshot/r" + std::to_string(r), report));
    }
    report.values["images/all"].push_back(average(all));
    report.values["images/few"].push_back(average(few));
    report.values["images/oneshot"].push_back(average(one));
    log_ << "[eval] images r" << r << ": all " << fmt(average(all)) << ", " << config_.eval_few_images << " images "
         << fmt(average(few)) << ", one-shot " << fmt(average(one)) << "\n";
  }
}

void Pipeline::suite_adaptive(EvalReport& report) {
  const auto vips = world().identity_tags(world::Role::vip);
  model::Model& m2 = backbone(Backbone::stage12, 0);
  std::map<std::string, model::VIPToken> tokens;
  std::vector<double> manual;
  for (const auto& id : vips) {
    tokens[id] = vip_token(m2, Backbone::stage12, 0, {id, config_.vip_tokens, config_.annotation_free, 0});
    manual.push_back(personalized_auc(m2, tokens[id], "manual", report));
  }
  report.values["adaptive/manual"].push_back(average(manual));

  for (auto kind : {config::EmbedderKind::learned, config::EmbedderKind::oracle}) {
    const priors::Embedder& emb = embedder(kind);
    const std::string name(config::to_string(kind));
    priors::VIPRegistry registry;
    for (const auto& id : vips) {
      priors::RegistryEntry e;
      e.identity_tag = id;
      e.token_path = layout_.token(id).string();
      const auto refs = datagen::vip_references(
          world(), id, config_.did_reference_limit > 0 ? std::optional<int>(config_.did_reference_limit) : std::nullopt);
      for (const auto* s : refs) e.references.push_back(emb.embed({&s->image, &s->latent}));
      registry.enroll(std::move(e));
    }
    int correct = 0, total = 0;
    std::vector<double> aucs;
    for (const auto& id : vips) {
      std::vector<evalharness::ScoredSample> scored;
      for (const auto* s : evalharness::vip_test_set(world(), id)) {
        const auto sel = priors::select_vip(emb.embed({&s->image, &s->latent}), registry);
        // Only real images have an enrolled identity; a forgery's composite
        // identity has no correct answer.
        if (s->label == synthworld::Label::real) {
          correct += sel.identity_tag == id;
          ++total;
        }
        evalharness::QuerySpec q;
        q.kind = model::QueryKind::vip;
        q.vip = &tokens.at(sel.identity_tag).mu;
        auto one = evalharness::score_dataset(m2, {s}, q);
        scored.push_back(one.front());
      }
      const auto metrics = evalharness::summarize(scored);
      evalharness::append_rows(report.rows, report.suite, "auto-" + name, id, metrics);
      aucs.push_back(metrics.mean_auc);
    }
    report.values["adaptive/" + name].push_back(average(aucs));
    report.values["selection/" + name].push_back(static_cast<double>(correct) / total);
    log_ << "[eval] adaptive " << name << ": auc " << fmt(average(aucs)) << " (manual " << fmt(average(manual))
         << "), selection accuracy " << fmt(static_cast<double>(correct) / total) << "\n";
  }
}

void Pipeline::suite_robustness(EvalReport& report) {
  const auto vips = world().identity_tags(world::Role::vip);
  model::Model& m2 = backbone(Backbone::stage12, 0);
  std::vector<double> clean;
  std::map<std::string, model::VIPToken> tokens;
  for (const auto& id : vips) {
    tokens[id] = vip_token(m2, Backbone::stage12, 0, {id, config_.vip_tokens, config_.annotation_free, 0});
    clean.push_back(personalized_auc(m2, tokens[id], "clean", report));
  }
  report.values["robustness/clean"].push_back(average(clean));
  const std::uint64_t seed = derive_seed(config_.seed, "degrade");
  for (const auto& spec : evalharness::degradation_registry()) {
    std::vector<double> aucs;
    for (const auto& id : vips) {
      evalharness::QuerySpec q;
      q.kind = model::QueryKind::vip;
      q.vip = &tokens.at(id).mu;
      const auto metrics = evalharness::summarize(
          evalharness::score_dataset(m2, evalharness::vip_test_set(world(), id), q, spec, seed));
      evalharness::append_rows(report.rows, report.suite, spec.tag(), id, metrics);
      aucs.push_back(metrics.mean_auc);
    }
    report.values["robustness/" + spec.tag()].push_back(average(aucs));
    log_ << "[eval] robustness " << spec.tag() << ": " << fmt(average(aucs)) << " (clean " << fmt(average(clean))
         << ")\n";
  }
}

void Pipeline::save_report(const EvalReport& report) {
  fs::create_directories(layout_.reports());
  evalharness::write_report_jsonl(layout_.reports() / (report.suite + ".jsonl"), report.rows);
  std::ofstream out(layout_.reports() / (report.suite + ".txt"));
  require(static_cast<bool>(out), ErrorKind::io, "cannot write report for " + report.suite);
  out << "suite " << report.suite << "\n\n";
  out << std::left << std::setw(28) << "variant" << std::setw(10) << "mean" << "per seed\n";
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& [key, vals] : report.values) {
    out << std::setw(28) << key << std::setw(10) << fmt(average(vals));
    for (double v : vals) out << fmt(v) << " ";
    out << "\n";
    bars.emplace_back(key, average(vals));
  }
  out << "\n" << evalharness::format_table(report.rows);
  write_svg_bars(layout_.reports() / (report.suite + ".svg"), "suite " + report.suite + " (mean over seeds)", bars);
}

EvalReport Pipeline::eval(const std::string& suite) {
  const auto& names = suites();
  require(std::find(names.begin(), names.end(), suite) != names.end(), ErrorKind::invalid_argument,
          "unknown suite '" + suite + "'");
  require_built("eval");
  require(fresh(layout_.checkpoint(2), backbone_key(Backbone::stage12, 0)), ErrorKind::missing_prerequisite,
          "eval needs the stage 2 checkpoint (" + layout_.checkpoint(2).string() +
              " missing or stale); run `vipguard train --stage 2`");
  auto t0 = Clock::now();
  EvalReport report;
  report.suite = suite;
  const bool all = suite == "full";
  if (all || suite == "ablation") suite_ablation(report);
  if (all || suite == "oneshot") suite_oneshot(report);
  if (all || suite == "tokens") suite_tokens(report);
  if (all || suite == "annotation") suite_annotation(report);
  if (all || suite == "images") suite_images(report);
  if (all || suite == "adaptive") suite_adaptive(report);
  if (all || suite == "robustness") suite_robustness(report);
  save_report(report);
  json values = json::object();
  for (const auto& [k, v] : report.values) values[k] = v;
  write_record("eval-" + suite, {{"values", values}, {"seconds", seconds_since(t0)}});
  log_ << "[eval] " << suite << " done (" << fmt(seconds_since(t0), 1) << "s) -> "
       << (layout_.reports() / (suite + ".txt")).string() << "\n";
  return report;
}

}  // namespace vipguard::pipeline
