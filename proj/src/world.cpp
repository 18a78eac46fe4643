#include "vipguard/world.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "vipguard/image_io.hpp"

namespace vipguard::world {

using nlohmann::json;
using namespace synthworld;

namespace {

std::uint64_t positive_seed(std::uint64_t s) { return s & 0x3fffffffffffffffULL; }

std::string tag_for(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "id%03d", index);
  return buf;
}

std::string sample_name(const std::string& tag, char kind, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%c%03d", tag.c_str(), kind, index);
  return buf;
}

constexpr std::array<Region, 4> kRegions = {Region::eyes, Region::nose, Region::mouth, Region::inner_face};

}  // namespace

void WorldConfig::validate() const {
  require(identities > 0, ErrorKind::invalid_argument, "world needs at least one identity");
  require(vip_identities >= 0 && vip_identities <= identities, ErrorKind::invalid_argument,
          "vip_identities must lie in [0, identities]");
  require(reals_per_identity >= 1, ErrorKind::invalid_argument, "reals_per_identity must be positive");
  require(vip_identities == 0 || (vip_test_reals >= 0 && vip_test_reals < reals_per_identity),
          ErrorKind::invalid_argument, "vip_test_reals must leave at least one training image");
  require(general_forgeries_per_identity >= 0 && vip_train_forgeries_per_real >= 0 &&
              vip_test_synthesis_per_real >= 0,
          ErrorKind::invalid_argument, "forgery counts must be non-negative");
  require(image_size >= 16, ErrorKind::invalid_argument, "image_size must be at least 16");
}

std::string_view to_string(Role role) { return role == Role::general ? "general" : "vip"; }
std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

World::World(WorldConfig config, std::vector<WorldSample> samples)
    : config_(std::move(config)), samples_(std::move(samples)) {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const bool inserted = index_.emplace(samples_[i].sample_id, i).second;
    require(inserted, ErrorKind::format, "duplicate sample id " + samples_[i].sample_id);
  }
}

const WorldSample& World::at(const std::string& sample_id) const {
  const auto* s = find(sample_id);
  require(s != nullptr, ErrorKind::invalid_argument, "unknown sample id " + sample_id);
  return *s;
}

const WorldSample* World::find(const std::string& sample_id) const {
  const auto it = index_.find(sample_id);
  return it == index_.end() ? nullptr : &samples_[it->second];
}

std::vector<std::string> World::identity_tags(std::optional<Role> role) const {
  std::vector<std::string> tags;
  for (const auto& s : samples_) {
    if (role && s.role != *role) continue;
    if (tags.empty() || tags.back() != s.identity_tag) {
      if (std::find(tags.begin(), tags.end(), s.identity_tag) == tags.end()) tags.push_back(s.identity_tag);
    }
  }
  return tags;
}

std::vector<const WorldSample*> World::select(const std::string& identity_tag, Label label,
                                              std::optional<Split> split) const {
  std::vector<const WorldSample*> out;
  for (const auto& s : samples_)
    if (s.identity_tag == identity_tag && s.label == label && (!split || s.split == *split)) out.push_back(&s);
  return out;
}

std::vector<const WorldSample*> World::reals(Role role, Split split) const {
  std::vector<const WorldSample*> out;
  for (const auto& s : samples_)
    if (s.role == role && s.split == split && s.label == Label::real) out.push_back(&s);
  return out;
}

void materialize(WorldSample& s, int image_size, bool render) {
  const IdentityLatent identity = sample_identity(static_cast<std::int64_t>(s.identity_seed));
  if (s.generator == Generator::natural) {
    s.latent = identity;
  } else if (s.generator == Generator::swap) {
    const auto pos = s.method.find(':');
    require(pos != std::string::npos, ErrorKind::format, "swap sample without region: " + s.sample_id);
    const Region region = parse_region(s.method.substr(pos + 1));
    s.latent = swap_latent(identity, sample_identity(static_cast<std::int64_t>(s.source_seed)), region);
  } else {
    s.latent = synthesis_latent(identity, s.perturb_seed, s.synthesis_k);
  }
  s.nuisance = sample_nuisance(s.nuisance_seed);
  s.attributes = derive_attributes(s.latent);
  if (render) s.image = render_face(s.latent, s.nuisance, image_size).pixels;
}

World generate_world(const WorldConfig& config) {
  config.validate();
  std::vector<WorldSample> samples;
  const int first_vip = config.identities - config.vip_identities;
  std::uint64_t train_source = 0, test_source = 0, perturb = 0;

  for (int i = 0; i < config.identities; ++i) {
    const std::string tag = tag_for(i);
    const Role role = i >= first_vip ? Role::vip : Role::general;
    const std::uint64_t id_seed = positive_seed(derive_seed(config.seed, "identity-seed", static_cast<std::uint64_t>(i)));

    std::vector<std::size_t> real_index;
    for (int j = 0; j < config.reals_per_identity; ++j) {
      WorldSample s;
      s.sample_id = sample_name(tag, 'r', j);
      s.identity_tag = tag;
      s.identity_seed = id_seed;
      s.nuisance_seed = derive_seed(config.seed, "nuisance", static_cast<std::uint64_t>(i) * 100000 + j);
      s.role = role;
      s.split = (role == Role::vip && j < config.vip_test_reals) ? Split::test : Split::train;
      real_index.push_back(samples.size());
      samples.push_back(std::move(s));
    }

    auto add_swap = [&](const WorldSample& target, Region region, bool test, char kind, int index) {
      WorldSample f;
      f.sample_id = sample_name(tag, kind, index);
      f.identity_tag = tag;
      f.identity_seed = id_seed;
      f.nuisance_seed = target.nuisance_seed;  // the swap keeps the target view
      f.label = Label::fake;
      f.generator = Generator::swap;
      f.method = "swap:" + std::string(to_string(region));
      f.role = role;
      f.split = target.split;
      f.target_sample = target.sample_id;
      f.source_seed = positive_seed(test ? derive_seed(config.seed, "test-source", test_source++)
                                         : derive_seed(config.seed, "train-source", train_source++));
      samples.push_back(std::move(f));
    };
    auto add_synthesis = [&](const WorldSample& target, int k, char kind, int index) {
      WorldSample f;
      f.sample_id = sample_name(tag, kind, index);
      f.identity_tag = tag;
      f.identity_seed = id_seed;
      f.perturb_seed = derive_seed(config.seed, "perturb", perturb++);
      f.nuisance_seed = derive_seed(f.perturb_seed, "synthesis-view");
      f.label = Label::fake;
      f.generator = Generator::synthesis;
      f.method = "synthesis:k" + std::to_string(k);
      f.synthesis_k = k;
      f.role = role;
      f.split = target.split;
      f.target_sample = target.sample_id;
      samples.push_back(std::move(f));
    };

    if (role == Role::general) {
      for (int f = 0; f < config.general_forgeries_per_identity; ++f) {
        // Copy: push_back may reallocate.
        const WorldSample target = samples[real_index[static_cast<std::size_t>(f) % real_index.size()]];
        if (f % 2 == 0)
          add_swap(target, kRegions[static_cast<std::size_t>(f / 2) % 4], false, 'f', f);
        else
          add_synthesis(target, 1 + (f / 2) % 3, 'f', f);
      }
    } else {
      int train_index = 0, test_index = 0;
      for (std::size_t j = 0; j < real_index.size(); ++j) {
        const WorldSample target = samples[real_index[j]];
        if (target.split == Split::train) {
          for (int r = 0; r < config.vip_train_forgeries_per_real; ++r) {
            if (r < 4)
              add_swap(target, kRegions[static_cast<std::size_t>(r)], false, 'f', train_index++);
            else
              add_synthesis(target, 1 + (r - 4) % 3, 'f', train_index++);
          }
        } else {
          for (Region region : kRegions) add_swap(target, region, true, 't', test_index++);
          for (int r = 0; r < config.vip_test_synthesis_per_real; ++r)
            add_synthesis(target, 1 + r % 3, 't', test_index++);
        }
      }
    }
  }

  for (auto& s : samples) {
    s.path = "images/" + s.sample_id + ".ppm";
    materialize(s, config.image_size);
  }
  return World(config, std::move(samples));
}

namespace {

json config_to_json(const WorldConfig& c) {
  return json{{"seed", c.seed},
              {"identities", c.identities},
              {"vip_identities", c.vip_identities},
              {"reals_per_identity", c.reals_per_identity},
              {"vip_test_reals", c.vip_test_reals},
              {"general_forgeries_per_identity", c.general_forgeries_per_identity},
              {"vip_train_forgeries_per_real", c.vip_train_forgeries_per_real},
              {"vip_test_synthesis_per_real", c.vip_test_synthesis_per_real},
              {"image_size", c.image_size}};
}

WorldConfig config_from_json(const json& j) {
  WorldConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.identities = j.at("identities").get<int>();
  c.vip_identities = j.at("vip_identities").get<int>();
  c.reals_per_identity = j.at("reals_per_identity").get<int>();
  c.vip_test_reals = j.at("vip_test_reals").get<int>();
  c.general_forgeries_per_identity = j.at("general_forgeries_per_identity").get<int>();
  c.vip_train_forgeries_per_real = j.at("vip_train_forgeries_per_real").get<int>();
  c.vip_test_synthesis_per_real = j.at("vip_test_synthesis_per_real").get<int>();
  c.image_size = j.at("image_size").get<int>();
  return c;
}

json sample_to_json(const WorldSample& s) {
  json j{{"sample_id", s.sample_id},
         {"identity", s.identity_tag},
         {"identity_seed", s.identity_seed},
         {"nuisance_seed", s.nuisance_seed},
         {"label", to_string(s.label)},
         {"generator", to_string(s.generator)},
         {"method", s.method},
         {"role", to_string(s.role)},
         {"split", to_string(s.split)},
         {"path", s.path}};
  if (!s.target_sample.empty()) j["target_sample"] = s.target_sample;
  if (s.generator == Generator::swap) j["source_seed"] = s.source_seed;
  if (s.generator == Generator::synthesis) {
    j["perturb_seed"] = s.perturb_seed;
    j["k"] = s.synthesis_k;
  }
  return j;
}

WorldSample sample_from_json(const json& j) {
  WorldSample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.identity_tag = j.at("identity").get<std::string>();
  s.identity_seed = j.at("identity_seed").get<std::uint64_t>();
  s.nuisance_seed = j.at("nuisance_seed").get<std::uint64_t>();
  s.label = parse_label(j.at("label").get<std::string>());
  s.generator = parse_generator(j.at("generator").get<std::string>());
  s.method = j.value("method", std::string(to_string(s.generator)));
  s.role = j.at("role").get<std::string>() == "vip" ? Role::vip : Role::general;
  s.split = j.at("split").get<std::string>() == "test" ? Split::test : Split::train;
  s.path = j.at("path").get<std::string>();
  s.target_sample = j.value("target_sample", std::string());
  s.source_seed = j.value("source_seed", std::uint64_t{0});
  s.perturb_seed = j.value("perturb_seed", std::uint64_t{0});
  s.synthesis_k = j.value("k", 0);
  return s;
}

}  // namespace

void save_world(const World& world, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  const fs::path tmp = dir / "manifest.jsonl.tmp";
  {
    std::ofstream out(tmp);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + tmp.string());
    out << json{{"kind", "world_header"}, {"version", kWorldVersion}, {"config", config_to_json(world.config())}}.dump()
        << "\n";
    for (const auto& s : world.samples()) {
      image_io::write_ppm(dir / s.path, s.image);
      out << sample_to_json(s).dump() << "\n";
    }
  }
  fs::rename(tmp, dir / "manifest.jsonl");
}

World load_world(const std::filesystem::path& dir) {
  const auto manifest = dir / "manifest.jsonl";
  std::ifstream in(manifest);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + manifest.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::format, "empty manifest " + manifest.string());
  WorldConfig config;
  try {
    const json header = json::parse(line);
    require(header.value("kind", "") == "world_header", ErrorKind::format, "manifest header missing");
    config = config_from_json(header.at("config"));
  } catch (const json::exception& e) {
    fail(ErrorKind::format, "bad manifest header: " + std::string(e.what()));
  }
  std::vector<WorldSample> samples;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    WorldSample s;
    try {
      s = sample_from_json(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorKind::format, "bad manifest record: " + std::string(e.what()));
    }
    materialize(s, config.image_size, false);
    s.image = image_io::read_ppm(dir / s.path);
    samples.push_back(std::move(s));
  }
  return World(config, std::move(samples));
}

std::uint64_t manifest_hash(const World& world) {
  std::uint64_t h = fnv1a(config_to_json(world.config()).dump());
  for (const auto& s : world.samples()) h = fnv1a(sample_to_json(s).dump(), h);
  return h;
}

}  // namespace vipguard::world
