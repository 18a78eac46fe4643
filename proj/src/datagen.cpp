#include "vipguard/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <unordered_map>

#include <json.hpp>

namespace vipguard::datagen {

using nlohmann::json;
using namespace synthworld;
using world::Role;
using world::Split;
using world::World;
using world::WorldSample;

// ---- attribute text -------------------------------------------------------

AttributeMap to_map(const AttributeSet& attrs) {
  AttributeMap m;
  for (const auto& a : attribute_catalog()) m[a.id] = std::string(attrs.value(a.id));
  return m;
}

std::string render_attributes(const AttributeMap& attrs) {
  std::string out;
  for (const auto& [attr, value] : attrs) {
    if (!out.empty()) out += "; ";
    out += std::string(to_string(attr)) + "=" + value;
  }
  return out;
}

std::string render_attributes(const AttributeSet& attrs) { return render_attributes(to_map(attrs)); }

AttributeMap parse_attributes(std::string_view text) {
  AttributeMap m;
  for (const auto& field : split(text, ';')) {
    const std::string item = trim(field);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    require(eq != std::string::npos, ErrorKind::format, "attribute field without '=': " + item);
    const std::string name = trim(item.substr(0, eq));
    const std::string value = trim(item.substr(eq + 1));
    const auto attr = parse_attribute(name);
    require(attr.has_value(), ErrorKind::format, "unknown attribute '" + name + "'");
    const auto& values = info(*attr).values;
    require(std::find(values.begin(), values.end(), value) != values.end(), ErrorKind::format,
            "value '" + value + "' not valid for " + name);
    require(m.emplace(*attr, value).second, ErrorKind::format, "attribute '" + name + "' listed twice");
  }
  return m;
}

std::string compose_long_answer(const AttributeMap& attrs) {
  std::string out;
  for (const auto& a : attribute_catalog()) {
    const auto it = attrs.find(a.id);
    require(it != attrs.end(), ErrorKind::invalid_argument,
            "long answer needs every attribute; missing " + std::string(a.name));
    require(std::find(a.values.begin(), a.values.end(), it->second) != a.values.end(), ErrorKind::invalid_argument,
            "value '" + it->second + "' not valid for " + std::string(a.name));
    if (!out.empty()) out += " ";
    out += "The " + std::string(a.phrase) + " is " + it->second + ".";
  }
  return out;
}

std::string compose_long_answer(const AttributeSet& attrs) { return compose_long_answer(to_map(attrs)); }

// ---- D_FA -----------------------------------------------------------------

namespace {

constexpr std::string_view kLongQuestion = "describe the facial attributes of this person .";

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string tuple_question(const std::vector<Attribute>& tuple) {
  std::vector<std::string> phrases;
  for (auto a : tuple) phrases.emplace_back(info(a).phrase);
  if (tuple.size() == 1) return "what is the " + phrases[0] + " of this person ?";
  std::string list;
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    if (i) list += (i + 1 == phrases.size()) ? " and the " : " , the ";
    list += phrases[i];
  }
  return "what are the " + list + " of this person ?";
}

std::string tuple_answer(const std::vector<Attribute>& tuple, const AttributeSet& attrs, std::string_view sep) {
  std::vector<std::string> values;
  for (auto a : tuple) values.emplace_back(attrs.value(a));
  return join(values, sep);
}

// Multiple-choice options: every value for a single attribute; for tuples the
// correct combination plus three distinct distractor combinations.
std::vector<std::string> tuple_options(const std::vector<Attribute>& tuple, const AttributeSet& attrs,
                                       std::uint64_t seed) {
  if (tuple.size() == 1) {
    std::vector<std::string> out;
    for (auto v : info(tuple[0]).values) out.emplace_back(v);
    return out;
  }
  std::vector<std::vector<int>> combos{{}};
  for (auto a : tuple) {
    std::vector<std::vector<int>> next;
    for (const auto& c : combos)
      for (int v = 0; v < static_cast<int>(info(a).values.size()); ++v) {
        auto e = c;
        e.push_back(v);
        next.push_back(e);
      }
    combos = std::move(next);
  }
  std::vector<int> truth;
  for (auto a : tuple) truth.push_back(attrs.category(a));
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < combos.size(); ++i)
    if (combos[i] != truth) others.push_back(i);
  std::mt19937_64 rng(seed);
  std::shuffle(others.begin(), others.end(), rng);
  std::vector<std::size_t> chosen(others.begin(), others.begin() + std::min<std::size_t>(3, others.size()));
  chosen.push_back(static_cast<std::size_t>(std::find(combos.begin(), combos.end(), truth) - combos.begin()));
  std::sort(chosen.begin(), chosen.end());
  std::vector<std::string> out;
  for (auto idx : chosen) {
    std::vector<std::string> words;
    for (std::size_t j = 0; j < tuple.size(); ++j) words.emplace_back(info(tuple[j]).values[combos[idx][j]]);
    out.push_back(join(words, " and "));
  }
  return out;
}

template <typename T>
std::vector<T> take_sample(std::vector<T> items, std::optional<int> count, std::uint64_t seed) {
  if (!count || *count >= static_cast<int>(items.size())) return items;
  require(*count >= 0, ErrorKind::invalid_argument, "negative sample count");
  std::mt19937_64 rng(seed);
  const auto n = static_cast<std::size_t>(*count);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
  items.resize(n);
  return items;
}

}  // namespace

std::string_view to_string(VqaFormat format) {
  switch (format) {
    case VqaFormat::multiple_choice: return "multiple_choice";
    case VqaFormat::short_answer: return "short_answer";
    case VqaFormat::long_answer: return "long_answer";
  }
  return "?";
}

VqaFormat parse_vqa_format(std::string_view text) {
  if (text == "multiple_choice") return VqaFormat::multiple_choice;
  if (text == "short_answer") return VqaFormat::short_answer;
  if (text == "long_answer") return VqaFormat::long_answer;
  fail(ErrorKind::format, "unknown VQA format '" + std::string(text) + "'");
}

std::vector<std::vector<Attribute>> attribute_tuples(int k) {
  require(k >= 1 && k <= kAttributeCount, ErrorKind::invalid_argument, "tuple size k must lie in [1, 8]");
  std::vector<std::vector<Attribute>> out;
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  while (true) {
    std::vector<Attribute> t;
    for (int i : idx) t.push_back(static_cast<Attribute>(i));
    out.push_back(t);
    int pos = k - 1;
    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == kAttributeCount - k + pos) --pos;
    if (pos < 0) break;
    ++idx[static_cast<std::size_t>(pos)];
    for (int j = pos + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
  return out;
}

std::vector<VQASample> build_dfa(const World& world, const DfaOptions& options) {
  const auto tuples = attribute_tuples(options.k);
  std::vector<const WorldSample*> images;
  for (const auto& s : world.samples()) {
    if (s.label != Label::real || s.split != Split::train) continue;
    if (s.role == Role::vip && !options.include_vip) continue;
    images.push_back(&s);
  }
  require(!images.empty(), ErrorKind::insufficient_data, "no real training images to build attribute VQA from");

  std::vector<std::pair<std::size_t, std::size_t>> items;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t t = 0; t < tuples.size(); ++t) items.emplace_back(i, t);

  std::vector<VQASample> out;
  const auto mc = take_sample(items, options.multiple_choice, derive_seed(options.seed, "dfa-multiple-choice"));
  for (std::size_t n = 0; n < mc.size(); ++n) {
    const auto& [i, t] = mc[n];
    const auto& attrs = images[i]->attributes;
    VQASample s;
    s.image_refs = {images[i]->sample_id};
    s.format = VqaFormat::multiple_choice;
    s.attributes = tuples[t];
    s.options = tuple_options(tuples[t], attrs, derive_seed(options.seed, "dfa-options", n));
    s.question = tuple_question(tuples[t]) + " options : " + join(s.options, " , ") + " .";
    s.answer = tuple_answer(tuples[t], attrs, " and ");
    out.push_back(std::move(s));
  }
  const auto sa = take_sample(items, options.short_answer, derive_seed(options.seed, "dfa-short-answer"));
  for (const auto& [i, t] : sa) {
    VQASample s;
    s.image_refs = {images[i]->sample_id};
    s.format = VqaFormat::short_answer;
    s.attributes = tuples[t];
    s.question = tuple_question(tuples[t]);
    s.answer = tuple_answer(tuples[t], images[i]->attributes, " , ");
    out.push_back(std::move(s));
  }
  std::vector<std::size_t> all(images.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (auto i : take_sample(all, options.long_answer, derive_seed(options.seed, "dfa-long-answer"))) {
    VQASample s;
    s.image_refs = {images[i]->sample_id};
    s.format = VqaFormat::long_answer;
    for (const auto& a : attribute_catalog()) s.attributes.push_back(a.id);
    s.question = std::string(kLongQuestion);
    s.answer = compose_long_answer(images[i]->attributes);
    out.push_back(std::move(s));
  }
  return out;
}

bool grade_vqa(const VQASample& sample, const AttributeSet& truth) {
  switch (sample.format) {
    case VqaFormat::multiple_choice:
      return sample.answer == tuple_answer(sample.attributes, truth, " and ") &&
             std::find(sample.options.begin(), sample.options.end(), sample.answer) != sample.options.end();
    case VqaFormat::short_answer:
      return sample.answer == tuple_answer(sample.attributes, truth, " , ");
    case VqaFormat::long_answer:
      return sample.answer == compose_long_answer(truth);
  }
  return false;
}

// ---- annotation -----------------------------------------------------------

std::string_view to_string(PairType type) {
  switch (type) {
    case PairType::pos_same_id: return "pos_same_id";
    case PairType::neg_diff_id: return "neg_diff_id";
    case PairType::neg_forgery: return "neg_forgery";
  }
  return "?";
}

PairType parse_pair_type(std::string_view text) {
  if (text == "pos_same_id") return PairType::pos_same_id;
  if (text == "neg_diff_id") return PairType::neg_diff_id;
  if (text == "neg_forgery") return PairType::neg_forgery;
  fail(ErrorKind::format, "unknown pair type '" + std::string(text) + "'");
}

std::string_view hint_for(PairType type) {
  switch (type) {
    case PairType::pos_same_id: return kHintSame;
    case PairType::neg_diff_id: return kHintDifferent;
    case PairType::neg_forgery: return kHintForgery;
  }
  return kHintDifferent;
}

std::string format_similarity(double s) {
  double r = std::round(s * 100.0) / 100.0;
  if (r == 0.0) r = 0.0;  // drop the sign of negative zero
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", r);
  return buf;
}

namespace {

constexpr std::string_view kClosingSame = "same person . answer : Yes";
constexpr std::string_view kClosingDifferent = "different person . answer : No";
constexpr std::string_view kClosingForgery = "similar but not the same person . answer : No";

}  // namespace

std::string TemplateAnnotator::annotate(const AnnotatorRequest& request) const {
  const AttributeMap ref = parse_attributes(request.attrs_ref);
  const AttributeMap test = parse_attributes(request.attrs_test);
  std::string out = "the similarity score is " + format_similarity(request.similarity) + " .";
  int shared = 0, differing = 0;
  for (const auto& a : attribute_catalog()) {
    const auto r = ref.find(a.id);
    const auto t = test.find(a.id);
    if (r == ref.end() || t == test.end()) continue;
    ++shared;
    if (r->second == t->second) continue;
    ++differing;
    out += " the " + std::string(a.phrase) + " differs : " + r->second + " versus " + t->second + " .";
  }
  if (shared > 0) out += differing == 0 ? " all listed attributes match ." : " other attributes match .";
  out += " ";
  if (request.hint == kHintSame)
    out += kClosingSame;
  else if (request.hint == kHintForgery)
    out += kClosingForgery;
  else
    out += kClosingDifferent;
  return out;
}

std::string annotate_pair(const AnnotatorRequest& request) { return TemplateAnnotator().annotate(request); }

std::vector<Attribute> mentioned_attributes(std::string_view text) {
  std::vector<Attribute> out;
  for (const auto& a : attribute_catalog())
    if (text.find(a.phrase) != std::string_view::npos) out.push_back(a.id);
  return out;
}

// ---- D_ID -----------------------------------------------------------------

PairCounts split_counts(int total, const Ratio& ratio) {
  require(total >= 0, ErrorKind::invalid_argument, "pair total must be non-negative");
  require(ratio.positive >= 0 && ratio.different >= 0 && ratio.forgery >= 0, ErrorKind::invalid_argument,
          "ratio parts must be non-negative");
  const long long sum = static_cast<long long>(ratio.positive) + ratio.different + ratio.forgery;
  require(sum > 0, ErrorKind::invalid_argument, "ratio must have a positive part");
  PairCounts c;
  c.positive = static_cast<int>(static_cast<long long>(total) * ratio.positive / sum);
  c.different = static_cast<int>(static_cast<long long>(total) * ratio.different / sum);
  c.forgery = static_cast<int>(static_cast<long long>(total) * ratio.forgery / sum);
  c.positive += total - c.total();
  return c;
}

std::vector<const WorldSample*> vip_references(const World& world, const std::string& identity,
                                               std::optional<int> limit) {
  auto refs = world.select(identity, Label::real, Split::train);
  require(!refs.empty() && refs.front()->role == Role::vip, ErrorKind::invalid_argument,
          "'" + identity + "' is not a VIP identity with training images");
  if (limit) {
    require(*limit >= 1, ErrorKind::invalid_argument, "reference limit must be positive");
    if (static_cast<int>(refs.size()) > *limit) refs.resize(static_cast<std::size_t>(*limit));
  }
  return refs;
}

namespace {

using PairList = std::vector<std::pair<const WorldSample*, const WorldSample*>>;

PairList choose(PairList pool, int count, std::uint64_t seed, std::string_view what) {
  require(count <= static_cast<int>(pool.size()), ErrorKind::insufficient_data,
          "need " + std::to_string(count) + " " + std::string(what) + " pairs but only " +
              std::to_string(pool.size()) + " are available");
  return take_sample(std::move(pool), count, seed);
}

}  // namespace

std::vector<FacePairRecord> build_did(const World& world, const DidOptions& options, const Annotator& annotator,
                                      const priors::Embedder& embedder) {
  require(!world.empty(), ErrorKind::insufficient_data, "world manifest is empty");
  require(options.ratio.positive >= 0 && options.ratio.different >= 0 && options.ratio.forgery >= 0 &&
              options.ratio.positive + options.ratio.different + options.ratio.forgery > 0,
          ErrorKind::invalid_argument, "ratio parts must be non-negative with a positive sum");
  PairList positives, different, forgeries;
  if (options.scope == Scope::general) {
    const auto tags = world.identity_tags(Role::general);
    require(!tags.empty(), ErrorKind::insufficient_data, "world has no general identities");
    std::vector<std::vector<const WorldSample*>> reals;
    for (const auto& t : tags) reals.push_back(world.select(t, Label::real, Split::train));
    for (std::size_t a = 0; a < tags.size(); ++a) {
      for (const auto* r : reals[a])
        for (const auto* t : reals[a])
          if (r != t) positives.emplace_back(r, t);
      for (std::size_t b = 0; b < tags.size(); ++b)
        if (a != b)
          for (const auto* r : reals[a])
            for (const auto* t : reals[b]) different.emplace_back(r, t);
      for (const auto* f : world.select(tags[a], Label::fake, Split::train))
        for (const auto* r : reals[a])
          if (r->sample_id != f->target_sample) forgeries.emplace_back(r, f);
    }
  } else {
    const auto refs = vip_references(world, options.vip_identity, options.reference_limit);
    require(refs.size() >= 2, ErrorKind::insufficient_data,
            "VIP " + options.vip_identity + " has " + std::to_string(refs.size()) +
                " real image(s); at least 2 are needed to form positive pairs");
    std::set<std::string> ref_ids;
    for (const auto* r : refs) ref_ids.insert(r->sample_id);
    for (const auto* r : refs)
      for (const auto* t : refs)
        if (r != t) positives.emplace_back(r, t);
    for (const auto& s : world.samples())
      if (s.label == Label::real && s.split == Split::train && s.identity_tag != options.vip_identity)
        for (const auto* r : refs) different.emplace_back(r, &s);
    for (const auto* f : world.select(options.vip_identity, Label::fake, Split::train))
      if (ref_ids.count(f->target_sample))
        for (const auto* r : refs)
          if (r->sample_id != f->target_sample) forgeries.emplace_back(r, f);
  }

  PairCounts counts = split_counts(options.total, options.ratio);
  if (options.shrink_to_fit) {
    int total = options.total;
    auto fits = [&](const PairCounts& c) {
      return c.positive <= static_cast<int>(positives.size()) && c.different <= static_cast<int>(different.size()) &&
             c.forgery <= static_cast<int>(forgeries.size());
    };
    while (total > 0 && !fits(counts)) counts = split_counts(--total, options.ratio);
    require(total > 0, ErrorKind::insufficient_data, "no pairs available for " + options.vip_identity);
  }
  const auto pos = choose(std::move(positives), counts.positive, derive_seed(options.seed, "did-positive"), "positive");
  const auto diff =
      choose(std::move(different), counts.different, derive_seed(options.seed, "did-different"), "different-identity");
  const auto forg = choose(std::move(forgeries), counts.forgery, derive_seed(options.seed, "did-forgery"), "forgery");

  std::unordered_map<const WorldSample*, priors::Embedding> cache;
  auto embed = [&](const WorldSample* s) -> const priors::Embedding& {
    auto it = cache.find(s);
    if (it == cache.end()) it = cache.emplace(s, embedder.embed({&s->image, &s->latent})).first;
    return it->second;
  };

  std::vector<FacePairRecord> out;
  out.reserve(static_cast<std::size_t>(counts.total()));
  auto emit = [&](const PairList& pairs, PairType type) {
    for (const auto& [r, t] : pairs) {
      FacePairRecord rec;
      rec.ref_id = r->sample_id;
      rec.test_id = t->sample_id;
      rec.pair_type = type;
      rec.similarity = priors::similarity(embed(r), embed(t));
      AnnotatorRequest req{std::string(kAnnotatorInstruction), rec.similarity, render_attributes(r->attributes),
                           render_attributes(t->attributes), std::string(hint_for(type))};
      rec.annotation = annotator.annotate(req);
      rec.verdict = type == PairType::pos_same_id ? "Yes" : "No";
      out.push_back(std::move(rec));
    }
  };
  emit(pos, PairType::pos_same_id);
  emit(diff, PairType::neg_diff_id);
  emit(forg, PairType::neg_forgery);
  return out;
}

// ---- vocabulary -----------------------------------------------------------

text::Vocabulary build_vocabulary() {
  std::vector<std::string> tokens = {std::string(text::kPad),    std::string(text::kBos),
                                     std::string(text::kEos),    std::string(text::kAnswer),
                                     std::string(text::kExplain), std::string(text::kYes),
                                     std::string(text::kNo)};
  for (char c = '0'; c <= '9'; ++c) tokens.emplace_back(1, c);
  for (const char* p : {".", ",", ":", "?", ";", "-"}) tokens.emplace_back(p);

  std::vector<std::string> fragments = {
      std::string(kLongQuestion),
      "what is the of this person ? what are the , the and the options : .",
      "The is .",
      "the similarity score is . differs : versus . all listed attributes match . other attributes match .",
      std::string(kClosingSame),
      std::string(kClosingDifferent),
      std::string(kClosingForgery),
      std::string(text::kVerdictQuestion),
  };
  for (const auto& a : attribute_catalog()) {
    fragments.emplace_back(a.phrase);
    for (auto v : a.values) fragments.emplace_back(v);
  }
  std::set<std::string> words;
  for (const auto& f : fragments)
    for (const auto& t : text::tokenize(f)) words.insert(t);
  for (const auto& w : words)
    if (std::find(tokens.begin(), tokens.end(), w) == tokens.end()) tokens.push_back(w);
  return text::Vocabulary(std::move(tokens));
}

// ---- persistence ----------------------------------------------------------

namespace {

json header_json(const CorpusHeader& h) {
  json j{{"kind", "corpus_header"}, {"corpus", h.kind}, {"seed", h.seed}, {"world_version", h.world_version}};
  for (const auto& [k, v] : h.fields) j["fields"][k] = v;
  return j;
}

std::ifstream open_corpus(const std::filesystem::path& path, std::string_view kind, CorpusHeader* header) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::format, path.string() + ": empty corpus file");
  try {
    const json j = json::parse(line);
    require(j.value("kind", "") == "corpus_header" && j.value("corpus", "") == kind, ErrorKind::format,
            path.string() + ": not a " + std::string(kind) + " corpus");
    if (header) {
      header->kind = j.at("corpus").get<std::string>();
      header->seed = j.at("seed").get<std::uint64_t>();
      header->world_version = j.at("world_version").get<std::string>();
      if (j.contains("fields"))
        for (const auto& [k, v] : j["fields"].items()) header->fields[k] = v.get<std::string>();
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path.string() + ": bad corpus header: " + e.what());
  }
  return in;
}

template <typename Fn>
void write_lines(const std::filesystem::path& path, const json& header, Fn&& body) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + tmp);
    out << header.dump() << "\n";
    body(out);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void save_dfa(const std::filesystem::path& path, const CorpusHeader& header, const std::vector<VQASample>& samples) {
  auto h = header;
  h.kind = "dfa";
  write_lines(path, header_json(h), [&](std::ostream& out) {
    for (const auto& s : samples) {
      json attrs = json::array();
      for (auto a : s.attributes) attrs.push_back(to_string(a));
      json j{{"image_refs", s.image_refs}, {"format", to_string(s.format)}, {"question", s.question},
             {"answer", s.answer},         {"attributes", attrs}};
      if (!s.options.empty()) j["options"] = s.options;
      out << j.dump() << "\n";
    }
  });
}

std::vector<VQASample> load_dfa(const std::filesystem::path& path, CorpusHeader* header) {
  auto in = open_corpus(path, "dfa", header);
  std::vector<VQASample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      VQASample s;
      s.image_refs = j.at("image_refs").get<std::vector<std::string>>();
      s.format = parse_vqa_format(j.at("format").get<std::string>());
      s.question = j.at("question").get<std::string>();
      s.answer = j.at("answer").get<std::string>();
      for (const auto& a : j.at("attributes")) {
        const auto attr = parse_attribute(a.get<std::string>());
        require(attr.has_value(), ErrorKind::format, "unknown attribute in corpus");
        s.attributes.push_back(*attr);
      }
      if (j.contains("options")) s.options = j["options"].get<std::vector<std::string>>();
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      fail(ErrorKind::format, path.string() + ": " + e.what());
    }
  }
  return out;
}

void save_did(const std::filesystem::path& path, const CorpusHeader& header,
              const std::vector<FacePairRecord>& records) {
  auto h = header;
  h.kind = "did";
  write_lines(path, header_json(h), [&](std::ostream& out) {
    for (const auto& r : records)
      out << json{{"ref_id", r.ref_id},         {"test_id", r.test_id},       {"pair_type", to_string(r.pair_type)},
                  {"similarity", r.similarity}, {"annotation", r.annotation}, {"verdict", r.verdict}}
                 .dump()
          << "\n";
  });
}

std::vector<FacePairRecord> load_did(const std::filesystem::path& path, CorpusHeader* header) {
  auto in = open_corpus(path, "did", header);
  std::vector<FacePairRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      FacePairRecord r;
      r.ref_id = j.at("ref_id").get<std::string>();
      r.test_id = j.at("test_id").get<std::string>();
      r.pair_type = parse_pair_type(j.at("pair_type").get<std::string>());
      r.similarity = j.at("similarity").get<double>();
      r.annotation = j.at("annotation").get<std::string>();
      r.verdict = j.at("verdict").get<std::string>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      fail(ErrorKind::format, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace vipguard::datagen
