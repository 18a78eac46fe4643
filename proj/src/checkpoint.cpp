#include "vipguard/checkpoint.hpp"

#include <fstream>

namespace vipguard::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kFormat = "vipguard-archive-1";

struct NamedArray {
  std::string name;
  std::string role;
  std::string group;
  const model::Mat* value;
};

void write_archive(const fs::path& dir, const std::vector<NamedArray>& arrays, json manifest) {
  fs::create_directories(dir);
  json list = json::array();
  std::uint64_t offset = 0;
  {
    std::ofstream bin(dir / "arrays.bin.tmp", std::ios::binary);
    require(static_cast<bool>(bin), ErrorKind::io, "cannot write into " + dir.string());
    for (const auto& a : arrays) {
      const auto n = static_cast<std::uint64_t>(a.value->size());
      list.push_back(json{{"name", a.name},
                          {"shape", {a.value->rows(), a.value->cols()}},
                          {"role", a.role},
                          {"group", a.group},
                          {"offset", offset}});
      bin.write(reinterpret_cast<const char*>(a.value->data()), static_cast<std::streamsize>(n * sizeof(double)));
      offset += n;
    }
    require(static_cast<bool>(bin), ErrorKind::io, "failed writing arrays in " + dir.string());
  }
  manifest["format"] = kFormat;
  manifest["arrays"] = list;
  {
    std::ofstream out(dir / "manifest.json.tmp");
    require(static_cast<bool>(out), ErrorKind::io, "cannot write manifest in " + dir.string());
    out << manifest.dump(1) << "\n";
  }
  fs::rename(dir / "arrays.bin.tmp", dir / "arrays.bin");
  fs::rename(dir / "manifest.json.tmp", dir / "manifest.json");
}

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  require(static_cast<bool>(in), ErrorKind::missing_prerequisite, "no archive at " + dir.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::format, (dir / "manifest.json").string() + ": " + e.what());
  }
  require(m.value("format", "") == kFormat, ErrorKind::format, dir.string() + ": unknown archive format");
  return m;
}

std::vector<double> read_arrays(const fs::path& dir) {
  std::ifstream bin(dir / "arrays.bin", std::ios::binary | std::ios::ate);
  require(static_cast<bool>(bin), ErrorKind::io, "cannot open " + (dir / "arrays.bin").string());
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  require(bytes % sizeof(double) == 0, ErrorKind::format, "truncated arrays.bin in " + dir.string());
  std::vector<double> data(bytes / sizeof(double));
  bin.seekg(0);
  bin.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  return data;
}

model::Mat slice(const std::vector<double>& data, const json& entry, const fs::path& dir) {
  const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
  const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
  const auto offset = entry.at("offset").get<std::size_t>();
  const auto n = static_cast<std::size_t>(rows * cols);
  require(offset + n <= data.size(), ErrorKind::format,
          dir.string() + ": array " + entry.at("name").get<std::string>() + " exceeds arrays.bin");
  return Eigen::Map<const model::Mat>(data.data() + offset, rows, cols);
}

}  // namespace

json config_to_json(const model::ModelConfig& c) {
  return json{{"image_size", c.image_size}, {"patch", c.patch},           {"width", c.width},
              {"heads", c.heads},           {"layers", c.layers},         {"ff", c.ff},
              {"lora_rank", c.lora_rank},   {"lora_alpha", c.lora_alpha}, {"max_text", c.max_text},
              {"head_init_std", c.head_init_std}, {"zero_head", c.zero_head}, {"seed", c.seed}};
}

model::ModelConfig config_from_json(const json& j) {
  model::ModelConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.patch = j.at("patch").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.ff = j.at("ff").get<int>();
  c.lora_rank = j.at("lora_rank").get<int>();
  c.lora_alpha = j.at("lora_alpha").get<double>();
  c.max_text = j.at("max_text").get<int>();
  c.head_init_std = j.at("head_init_std").get<double>();
  c.zero_head = j.at("zero_head").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void save_model(const model::Model& m, const fs::path& dir, const json& extra) {
  std::vector<NamedArray> arrays;
  for (const auto& p : m.params().all())
    arrays.push_back({p.name, std::string(model::to_string(p.role)), p.group, &p.value});
  fs::create_directories(dir);
  text::save_vocabulary(m.vocab(), dir / "vocab.txt");
  write_archive(dir, arrays, json{{"kind", "model"}, {"config", config_to_json(m.config())}, {"extra", extra}});
}

bool has_model(const fs::path& dir) { return fs::exists(dir / "manifest.json") && fs::exists(dir / "arrays.bin"); }

model::Model load_model(const fs::path& dir, json* extra) {
  const json manifest = read_manifest(dir);
  require(manifest.value("kind", "") == "model", ErrorKind::format, dir.string() + " is not a model checkpoint");
  model::Model m(config_from_json(manifest.at("config")), text::load_vocabulary(dir / "vocab.txt"));
  const auto data = read_arrays(dir);
  std::size_t seen = 0;
  for (const auto& entry : manifest.at("arrays")) {
    const auto name = entry.at("name").get<std::string>();
    auto& p = m.params().get(name);
    model::Mat v = slice(data, entry, dir);
    require(v.rows() == p.value.rows() && v.cols() == p.value.cols(), ErrorKind::format,
            dir.string() + ": shape mismatch for " + name);
    p.value = std::move(v);
    ++seen;
  }
  require(seen == m.params().all().size(), ErrorKind::format, dir.string() + ": checkpoint is missing parameters");
  if (extra) *extra = manifest.value("extra", json::object());
  return m;
}

void save_vip_token(const model::VIPToken& token, const fs::path& dir, const json& extra) {
  write_archive(dir, {{"vip.mu", "vip_token", "vip_token", &token.mu}},
                json{{"kind", "vip_token"}, {"identity", token.identity_tag}, {"extra", extra}});
}

model::VIPToken load_vip_token(const fs::path& dir, json* extra) {
  const json manifest = read_manifest(dir);
  require(manifest.value("kind", "") == "vip_token", ErrorKind::format, dir.string() + " is not a VIP token archive");
  const auto data = read_arrays(dir);
  model::VIPToken t;
  t.identity_tag = manifest.value("identity", "");
  for (const auto& entry : manifest.at("arrays"))
    if (entry.at("name") == "vip.mu") t.mu = slice(data, entry, dir);
  require(t.mu.size() > 0, ErrorKind::format, dir.string() + ": archive holds no VIP token");
  if (extra) *extra = manifest.value("extra", json::object());
  return t;
}

std::uint64_t model_hash(const model::Model& m) {
  return m.params().checksum([](const model::Param&) { return true; });
}

}  // namespace vipguard::checkpoint
