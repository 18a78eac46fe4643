#include "vipguard/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace vipguard::config {

namespace {

std::string location(const std::map<std::string, std::string>& origins, const std::string& key) {
  auto it = origins.find(key);
  return it == origins.end() ? key : it->second + ": " + key;
}

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  T value{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  require(ec == std::errc() && ptr == last, ErrorKind::invalid_argument, where + ": not a number: '" + text + "'");
  return value;
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text, const std::string& origin) {
  KeyValues kv;
  int line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::format, where + ": expected key = value");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    require(!key.empty(), ErrorKind::format, where + ": empty key");
    require(!kv.entries_.count(key), ErrorKind::format, where + ": duplicate key " + key);
    kv.entries_[key] = value;
    kv.origins_[key] = where;
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValues::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
  origins_[key] = "override";
}

bool KeyValues::has(const std::string& key) const { return entries_.count(key) != 0; }

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  read_.insert(key);
  return it->second;
}

long long KeyValues::get_int(const std::string& key, long long fallback) const {
  if (!has(key)) return fallback;
  return parse_number<long long>(get_string(key, ""), location(origins_, key));
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  return parse_number<std::uint64_t>(get_string(key, ""), location(origins_, key));
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  // from_chars for double is fine on this toolchain; strtod would honour locale.
  return parse_number<double>(get_string(key, ""), location(origins_, key));
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get_string(key, "");
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorKind::invalid_argument, location(origins_, key) + ": not a boolean: '" + v + "'");
}

std::vector<int> KeyValues::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  for (const auto& part : split(get_string(key, ""), ',')) {
    std::string t = trim(part);
    if (t.empty()) continue;
    out.push_back(parse_number<int>(t, location(origins_, key)));
  }
  return out;
}

std::vector<std::string> KeyValues::unread() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : entries_)
    if (!read_.count(key)) out.push_back(location(origins_, key));
  return out;
}

std::string_view to_string(EmbedderKind kind) { return kind == EmbedderKind::learned ? "learned" : "oracle"; }

datagen::Ratio parse_ratio(std::string_view text) {
  auto parts = split(text, ':');
  require(parts.size() == 3, ErrorKind::invalid_argument, "ratio must look like a:b:c, got '" + std::string(text) + "'");
  datagen::Ratio r;
  r.positive = parse_number<int>(trim(parts[0]), "ratio");
  r.different = parse_number<int>(trim(parts[1]), "ratio");
  r.forgery = parse_number<int>(trim(parts[2]), "ratio");
  require(r.positive >= 0 && r.different >= 0 && r.forgery >= 0 && r.positive + r.different + r.forgery > 0,
          ErrorKind::invalid_argument, "ratio parts must be non-negative with a positive sum");
  return r;
}

std::string format_ratio(const datagen::Ratio& ratio) {
  return std::to_string(ratio.positive) + ":" + std::to_string(ratio.different) + ":" +
         std::to_string(ratio.forgery);
}

namespace {

void read_stage(const KeyValues& kv, const std::string& prefix, train::StageConfig& s) {
  s.epochs = static_cast<int>(kv.get_int(prefix + ".epochs", s.epochs));
  s.effective_batch = static_cast<int>(kv.get_int(prefix + ".batch", s.effective_batch));
  s.micro_batch = static_cast<int>(kv.get_int(prefix + ".micro_batch", s.micro_batch));
  s.learning_rate = kv.get_double(prefix + ".lr", s.learning_rate);
  s.schedule = train::parse_schedule(kv.get_string(prefix + ".schedule", std::string(to_string(s.schedule))));
  s.max_steps = static_cast<int>(kv.get_int(prefix + ".max_steps", s.max_steps));
  s.fallback_lr = kv.get_double(prefix + ".fallback_lr", s.fallback_lr);
}

void write_stage(std::map<std::string, std::string>& m, const std::string& prefix, const train::StageConfig& s) {
  std::ostringstream lr, fb;
  lr.precision(17);
  fb.precision(17);
  lr << s.learning_rate;
  fb << s.fallback_lr;
  m[prefix + ".epochs"] = std::to_string(s.epochs);
  m[prefix + ".batch"] = std::to_string(s.effective_batch);
  m[prefix + ".micro_batch"] = std::to_string(s.micro_batch);
  m[prefix + ".lr"] = lr.str();
  m[prefix + ".schedule"] = std::string(train::to_string(s.schedule));
  m[prefix + ".max_steps"] = std::to_string(s.max_steps);
  m[prefix + ".fallback_lr"] = fb.str();
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

RunConfig RunConfig::from(const KeyValues& kv) {
  RunConfig c;
  c.seed = kv.get_u64("seed", c.seed);
  c.out = kv.get_string("out", c.out);

  auto& w = c.world;
  w.identities = static_cast<int>(kv.get_int("world.identities", w.identities));
  w.vip_identities = static_cast<int>(kv.get_int("world.vip_identities", w.vip_identities));
  w.reals_per_identity = static_cast<int>(kv.get_int("world.reals_per_identity", w.reals_per_identity));
  w.vip_test_reals = static_cast<int>(kv.get_int("world.vip_test_reals", w.vip_test_reals));
  w.general_forgeries_per_identity =
      static_cast<int>(kv.get_int("world.general_forgeries_per_identity", w.general_forgeries_per_identity));
  w.vip_train_forgeries_per_real =
      static_cast<int>(kv.get_int("world.vip_train_forgeries_per_real", w.vip_train_forgeries_per_real));
  w.vip_test_synthesis_per_real =
      static_cast<int>(kv.get_int("world.vip_test_synthesis_per_real", w.vip_test_synthesis_per_real));
  w.image_size = static_cast<int>(kv.get_int("world.image_size", w.image_size));

  c.dfa_k = static_cast<int>(kv.get_int("dfa.k", c.dfa_k));
  c.dfa_multiple_choice = static_cast<int>(kv.get_int("dfa.multiple_choice", c.dfa_multiple_choice));
  c.dfa_short_answer = static_cast<int>(kv.get_int("dfa.short_answer", c.dfa_short_answer));
  c.dfa_long_answer = static_cast<int>(kv.get_int("dfa.long_answer", c.dfa_long_answer));
  c.dfa_include_vip = kv.get_bool("dfa.include_vip", c.dfa_include_vip);

  c.did_general_total = static_cast<int>(kv.get_int("did.general_total", c.did_general_total));
  if (kv.has("did.general_ratio")) c.did_general_ratio = parse_ratio(kv.get_string("did.general_ratio", ""));
  c.did_vip_total = static_cast<int>(kv.get_int("did.vip_total", c.did_vip_total));
  if (kv.has("did.vip_ratio")) c.did_vip_ratio = parse_ratio(kv.get_string("did.vip_ratio", ""));
  c.did_reference_limit = static_cast<int>(kv.get_int("did.reference_limit", c.did_reference_limit));
  const std::string emb = kv.get_string("did.embedder", std::string(to_string(c.embedder)));
  require(emb == "learned" || emb == "oracle", ErrorKind::invalid_argument,
          "did.embedder must be learned or oracle, got '" + emb + "'");
  c.embedder = emb == "learned" ? EmbedderKind::learned : EmbedderKind::oracle;

  auto& m = c.model;
  m.image_size = static_cast<int>(kv.get_int("model.image_size", m.image_size));
  m.patch = static_cast<int>(kv.get_int("model.patch", m.patch));
  m.width = static_cast<int>(kv.get_int("model.width", m.width));
  m.heads = static_cast<int>(kv.get_int("model.heads", m.heads));
  m.layers = static_cast<int>(kv.get_int("model.layers", m.layers));
  m.ff = static_cast<int>(kv.get_int("model.ff", m.ff));
  m.lora_rank = static_cast<int>(kv.get_int("model.lora_rank", m.lora_rank));
  m.lora_alpha = kv.get_double("model.lora_alpha", m.lora_alpha);
  m.max_text = static_cast<int>(kv.get_int("model.max_text", m.max_text));

  read_stage(kv, "stage1", c.stage1);
  read_stage(kv, "stage2", c.stage2);
  read_stage(kv, "stage3", c.stage3);
  c.vip_tokens = static_cast<int>(kv.get_int("stage3.tokens", c.vip_tokens));
  c.annotation_free = kv.get_bool("stage3.annotation_free", c.annotation_free);

  c.eval_seeds = static_cast<int>(kv.get_int("eval.seeds", c.eval_seeds));
  c.eval_token_sweep = kv.get_int_list("eval.token_sweep", c.eval_token_sweep);
  c.eval_token_sweep_seeds = static_cast<int>(kv.get_int("eval.token_sweep_seeds", c.eval_token_sweep_seeds));
  c.eval_few_images = static_cast<int>(kv.get_int("eval.few_images", c.eval_few_images));
  c.eval_oneshot_references = static_cast<int>(kv.get_int("eval.oneshot_references", c.eval_oneshot_references));

  auto unknown = kv.unread();
  if (!unknown.empty()) {
    std::string msg = "unknown config key";
    msg += unknown.size() > 1 ? "s: " : ": ";
    for (std::size_t i = 0; i < unknown.size(); ++i) msg += (i ? ", " : "") + unknown[i];
    fail(ErrorKind::invalid_argument, msg);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return from(KeyValues::load(path)); }

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["seed"] = std::to_string(seed);
  m["out"] = out;
  m["world.identities"] = std::to_string(world.identities);
  m["world.vip_identities"] = std::to_string(world.vip_identities);
  m["world.reals_per_identity"] = std::to_string(world.reals_per_identity);
  m["world.vip_test_reals"] = std::to_string(world.vip_test_reals);
  m["world.general_forgeries_per_identity"] = std::to_string(world.general_forgeries_per_identity);
  m["world.vip_train_forgeries_per_real"] = std::to_string(world.vip_train_forgeries_per_real);
  m["world.vip_test_synthesis_per_real"] = std::to_string(world.vip_test_synthesis_per_real);
  m["world.image_size"] = std::to_string(world.image_size);
  m["dfa.k"] = std::to_string(dfa_k);
  m["dfa.multiple_choice"] = std::to_string(dfa_multiple_choice);
  m["dfa.short_answer"] = std::to_string(dfa_short_answer);
  m["dfa.long_answer"] = std::to_string(dfa_long_answer);
  m["dfa.include_vip"] = dfa_include_vip ? "true" : "false";
  m["did.general_total"] = std::to_string(did_general_total);
  m["did.general_ratio"] = format_ratio(did_general_ratio);
  m["did.vip_total"] = std::to_string(did_vip_total);
  m["did.vip_ratio"] = format_ratio(did_vip_ratio);
  m["did.reference_limit"] = std::to_string(did_reference_limit);
  m["did.embedder"] = std::string(to_string(embedder));
  m["model.image_size"] = std::to_string(model.image_size);
  m["model.patch"] = std::to_string(model.patch);
  m["model.width"] = std::to_string(model.width);
  m["model.heads"] = std::to_string(model.heads);
  m["model.layers"] = std::to_string(model.layers);
  m["model.ff"] = std::to_string(model.ff);
  m["model.lora_rank"] = std::to_string(model.lora_rank);
  {
    std::ostringstream a;
    a.precision(17);
    a << model.lora_alpha;
    m["model.lora_alpha"] = a.str();
  }
  m["model.max_text"] = std::to_string(model.max_text);
  write_stage(m, "stage1", stage1);
  write_stage(m, "stage2", stage2);
  write_stage(m, "stage3", stage3);
  m["stage3.tokens"] = std::to_string(vip_tokens);
  m["stage3.annotation_free"] = annotation_free ? "true" : "false";
  m["eval.seeds"] = std::to_string(eval_seeds);
  m["eval.token_sweep"] = join_ints(eval_token_sweep);
  m["eval.token_sweep_seeds"] = std::to_string(eval_token_sweep_seeds);
  m["eval.few_images"] = std::to_string(eval_few_images);
  m["eval.oneshot_references"] = std::to_string(eval_oneshot_references);
  return m;
}

std::string RunConfig::canonical(const std::vector<std::string>& prefixes) const {
  std::string out;
  for (const auto& [key, value] : to_map()) {
    bool keep = prefixes.empty();
    for (const auto& p : prefixes) keep = keep || key == p || key.rfind(p + ".", 0) == 0;
    if (keep) out += key + " = " + value + "\n";
  }
  return out;
}

std::uint64_t RunConfig::hash(const std::vector<std::string>& prefixes) const {
  return fnv1a(canonical(prefixes));
}

void RunConfig::validate() const {
  world.validate();
  model.validate();
  stage1.validate();
  stage2.validate();
  stage3.validate();
  require(!out.empty(), ErrorKind::invalid_argument, "out must not be empty");
  require(dfa_k >= 1 && dfa_k <= 8, ErrorKind::invalid_argument, "dfa.k must be in 1..8");
  require(dfa_multiple_choice >= -1 && dfa_short_answer >= -1 && dfa_long_answer >= -1,
          ErrorKind::invalid_argument, "dfa counts must be >= -1");
  require(did_general_total >= 1 && did_vip_total >= 1, ErrorKind::invalid_argument,
          "did totals must be positive");
  require(did_reference_limit >= 0, ErrorKind::invalid_argument, "did.reference_limit must be >= 0");
  require(vip_tokens >= 1, ErrorKind::invalid_argument, "stage3.tokens must be positive");
  require(eval_seeds >= 1, ErrorKind::invalid_argument, "eval.seeds must be positive");
  require(eval_token_sweep_seeds >= 1 && eval_token_sweep_seeds <= eval_seeds, ErrorKind::invalid_argument,
          "eval.token_sweep_seeds must be in 1..eval.seeds");
  require(!eval_token_sweep.empty(), ErrorKind::invalid_argument, "eval.token_sweep must not be empty");
  for (int n : eval_token_sweep) require(n >= 1, ErrorKind::invalid_argument, "token sweep values must be positive");
  require(eval_few_images >= 1, ErrorKind::invalid_argument, "eval.few_images must be positive");
  require(eval_oneshot_references >= 1, ErrorKind::invalid_argument, "eval.oneshot_references must be positive");
  require(model.image_size == world.image_size, ErrorKind::invalid_argument,
          "model.image_size must equal world.image_size");
}

}  // namespace vipguard::config
