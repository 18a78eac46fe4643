#include "vipguard/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace vipguard::synthworld {

namespace {

constexpr double kThird = 0.18350341907227397;  // 1 - sqrt(2/3)
constexpr double kQuarter = 0.29289321881345254;  // 1 - sqrt(1/2)

const std::array<AttributeInfo, kAttributeCount> kCatalog = {{
    {Attribute::face_shape, "face_shape", "face shape", {"round", "oval", "square", "long"}, {0, 1},
     {-kQuarter, 0.0, kQuarter}},
    {Attribute::eye_size, "eye_size", "eye size", {"small", "medium", "large"}, {2, 3}, {-kThird, kThird}},
    {Attribute::lip_thickness, "lip_thickness", "lip thickness", {"thin", "medium", "thick"}, {8, 9},
     {-kThird, kThird}},
    {Attribute::skin_marks, "skin_marks", "skin marks", {"none", "few", "many"}, {12, 13}, {-kThird, kThird}},
    {Attribute::eyebrow_density, "eyebrow_density", "eyebrow density", {"sparse", "moderate", "dense"},
     {10, 11}, {-kThird, kThird}},
    {Attribute::nose_width, "nose_width", "nose width", {"narrow", "average", "wide"}, {6, 7},
     {-kThird, kThird}},
    {Attribute::eye_pouch, "eye_pouch", "eye pouch", {"none", "mild", "heavy"}, {4, 5}, {-kThird, kThird}},
    {Attribute::glabella_wrinkle, "glabella_wrinkle", "glabella wrinkle", {"none", "light", "deep"}, {14, 15},
     {-kThird, kThird}},
}};

// Owning attribute for each latent component.
std::array<Attribute, kLatentDim> component_owner() {
  std::array<Attribute, kLatentDim> owner{};
  for (const auto& a : kCatalog)
    for (int c : a.components) owner[c] = a.id;
  return owner;
}

int partner_component(int component) {
  for (const auto& a : kCatalog) {
    if (a.components[0] == component) return a.components[1];
    if (a.components[1] == component) return a.components[0];
  }
  return component;
}

}  // namespace

IdentityLatent sample_identity(std::int64_t seed) {
  require(seed >= 0, ErrorKind::invalid_argument, "identity seed must be non-negative");
  std::mt19937_64 rng(derive_seed(static_cast<std::uint64_t>(seed), "identity"));
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  IdentityLatent id;
  id.seed = static_cast<std::uint64_t>(seed);
  id.components.resize(kLatentDim);
  for (auto& c : id.components) c = uni(rng);
  return id;
}

NuisanceParams sample_nuisance(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "nuisance"));
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  NuisanceParams n;
  n.seed = seed;
  // Strictly inside the +-15 degree preprocessing gate.
  n.yaw = 0.999 * kPoseGate * uni(rng);
  n.pitch = 0.999 * kPoseGate * uni(rng);
  n.lighting = 1.0 + 0.5 * uni(rng);
  return n;
}

const std::array<AttributeInfo, kAttributeCount>& attribute_catalog() { return kCatalog; }

const AttributeInfo& info(Attribute attribute) { return kCatalog[static_cast<int>(attribute)]; }

std::string_view to_string(Attribute attribute) { return info(attribute).name; }

std::optional<Attribute> parse_attribute(std::string_view name) {
  for (const auto& a : kCatalog)
    if (a.name == name) return a.id;
  return std::nullopt;
}

std::string_view to_string(Region region) {
  switch (region) {
    case Region::eyes: return "eyes";
    case Region::nose: return "nose";
    case Region::mouth: return "mouth";
    case Region::inner_face: return "inner_face";
  }
  return "";
}

Region parse_region(std::string_view tag) {
  for (Region r : {Region::eyes, Region::nose, Region::mouth, Region::inner_face})
    if (to_string(r) == tag) return r;
  fail(ErrorKind::invalid_argument,
       "unknown region tag '" + std::string(tag) + "' (expected eyes, nose, mouth or inner_face)");
}

const std::vector<int>& region_components(Region region) {
  static const std::vector<int> eyes = {2, 3, 4, 5};
  static const std::vector<int> nose = {6, 7};
  static const std::vector<int> mouth = {8, 9};
  static const std::vector<int> inner = {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  switch (region) {
    case Region::eyes: return eyes;
    case Region::nose: return nose;
    case Region::mouth: return mouth;
    case Region::inner_face: return inner;
  }
  return inner;
}

std::string_view AttributeSet::value(Attribute attribute) const {
  return info(attribute).values[static_cast<std::size_t>(category(attribute))];
}

void AttributeSet::set(Attribute attribute, int category) {
  const auto& a = info(attribute);
  require(category >= 0 && category < static_cast<int>(a.values.size()), ErrorKind::invalid_argument,
          "category out of range for " + std::string(a.name));
  categories_[static_cast<int>(attribute)] = category;
}

double attribute_score(const IdentityLatent& latent, Attribute attribute) {
  const auto& a = info(attribute);
  require(latent.components.size() == static_cast<std::size_t>(kLatentDim), ErrorKind::invalid_argument,
          "identity latent must have 16 components");
  return 0.5 * (latent.components[a.components[0]] + latent.components[a.components[1]]);
}

int categorize(const AttributeInfo& attribute, double score) {
  int cat = 0;
  for (double t : attribute.thresholds)
    if (score >= t) ++cat;
  return cat;
}

AttributeSet derive_attributes(const IdentityLatent& latent) {
  AttributeSet set;
  for (const auto& a : kCatalog) set.set(a.id, categorize(a, attribute_score(latent, a.id)));
  return set;
}

std::set<Attribute> attribute_difference(const AttributeSet& a, const AttributeSet& b) {
  std::set<Attribute> out;
  for (const auto& info : kCatalog)
    if (a.category(info.id) != b.category(info.id)) out.insert(info.id);
  return out;
}

std::string_view to_string(Label label) { return label == Label::real ? "real" : "fake"; }

std::string_view to_string(Generator generator) {
  switch (generator) {
    case Generator::natural: return "natural";
    case Generator::swap: return "swap";
    case Generator::synthesis: return "synthesis";
  }
  return "";
}

Label parse_label(std::string_view text) {
  if (text == "real") return Label::real;
  if (text == "fake") return Label::fake;
  fail(ErrorKind::format, "unknown label '" + std::string(text) + "'");
}

Generator parse_generator(std::string_view text) {
  for (Generator g : {Generator::natural, Generator::swap, Generator::synthesis})
    if (to_string(g) == text) return g;
  fail(ErrorKind::format, "unknown generator '" + std::string(text) + "'");
}

// Geometry: every latent component drives exactly one primitive parameter
// through an affine map; pose shifts inner features and squashes widths by
// cos(yaw). The face oval moves by half the inner-feature shift, which keeps
// yaw and pitch readable from the geometry alone.
FaceGeometry layout_face(const IdentityLatent& latent, const NuisanceParams& nuisance) {
  const auto& c = latent.components;
  require(c.size() == static_cast<std::size_t>(kLatentDim), ErrorKind::invalid_argument,
          "identity latent must have 16 components");
  constexpr double kPi = 3.14159265358979323846;
  const double squash = std::cos(nuisance.yaw * kPi / 180.0);
  const double dx = 0.03 * nuisance.yaw / kPoseGate;
  const double dy = 0.025 * nuisance.pitch / kPoseGate;

  FaceGeometry g{};
  g.face_cx = 0.5 + 0.5 * dx;
  g.face_cy = 0.52 + 0.5 * dy;
  g.face_rx = (0.30 + 0.07 * c[0]) * squash;
  g.face_ry = 0.40;
  g.face_exponent = 2.6 + 0.9 * c[1];

  g.inner_cx = 0.5 + dx;
  g.eye_dx = 0.145 * squash;
  g.eye_cy = 0.42 + dy;
  g.eye_rx = (0.065 + 0.035 * c[2]) * squash;
  g.eye_ry = 0.036 + 0.020 * c[3];

  g.pouch_strength = 0.50 + 0.45 * c[4];
  g.pouch_ry = 0.032 + 0.022 * c[5];

  g.nose_half_width = (0.065 + 0.045 * c[6]) * squash;
  g.nose_top = 0.44 + dy;
  g.nose_bottom = 0.61 + 0.075 * c[7] + dy;

  g.mouth_cy = 0.73 + dy;
  g.mouth_rx = (0.125 + 0.030 * c[9]) * squash;
  g.upper_lip = 0.036 + 0.030 * c[8];
  g.lower_lip = 0.038 + 0.028 * c[9];

  g.brow_y = 0.335 + dy;
  g.brow_half_length = 0.085 * squash;
  g.brow_thickness = 0.028 + 0.020 * c[10];
  g.brow_strength = 0.55 + 0.40 * c[11];

  g.mark_radius = 0.030 + 0.020 * c[12];
  g.mark_strength = 0.55 + 0.45 * c[13];

  g.glabella_top = 0.30 + dy;
  g.glabella_length = 0.095 + 0.070 * c[14];
  g.glabella_strength = 0.55 + 0.45 * c[15];

  g.lighting = nuisance.lighting;
  return g;
}

namespace {

struct Rgb {
  double r, g, b;
};

inline void blend(Rgb& px, const Rgb& target, double alpha) {
  px.r += alpha * (target.r - px.r);
  px.g += alpha * (target.g - px.g);
  px.b += alpha * (target.b - px.b);
}

inline bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  const double u = (x - cx) / rx, v = (y - cy) / ry;
  return u * u + v * v <= 1.0;
}

// Fixed mole sites relative to the inner-feature center.
constexpr std::array<std::array<double, 2>, 4> kMarkSites = {{
    {-0.19, 0.11}, {0.18, 0.14}, {-0.10, -0.19}, {0.13, 0.24},
}};

Rgb shade_sample(const FaceGeometry& g, double x, double y) {
  const Rgb skin{205, 168, 148};
  Rgb px{58, 70, 92};

  {
    const double u = std::abs((x - g.face_cx) / g.face_rx);
    const double v = std::abs((y - g.face_cy) / g.face_ry);
    if (std::pow(u, g.face_exponent) + std::pow(v, g.face_exponent) > 1.0) return px;
  }
  px = skin;

  for (const auto& site : kMarkSites) {
    if (in_ellipse(x, y, g.inner_cx + site[0], g.eye_cy + site[1], g.mark_radius, g.mark_radius))
      blend(px, Rgb{90, 55, 45}, g.mark_strength);
  }

  for (int side : {-1, 1}) {
    const double ex = g.inner_cx + side * g.eye_dx;
    const double pouch_cy = g.eye_cy + g.eye_ry + 0.6 * g.pouch_ry;
    if (in_ellipse(x, y, ex, pouch_cy, g.eye_rx, g.pouch_ry)) blend(px, Rgb{95, 55, 65}, g.pouch_strength);
    if (in_ellipse(x, y, ex, g.eye_cy, g.eye_rx, g.eye_ry)) px = Rgb{35, 28, 30};
    if (std::abs(x - ex) <= g.brow_half_length && std::abs(y - g.brow_y) <= 0.5 * g.brow_thickness)
      blend(px, Rgb{40, 30, 25}, g.brow_strength);
  }

  if (std::abs(x - g.inner_cx) <= 0.030 && y >= g.glabella_top && y <= g.glabella_top + g.glabella_length)
    blend(px, Rgb{90, 55, 50}, g.glabella_strength);

  if (y >= g.nose_top && y <= g.nose_bottom) {
    const double half = g.nose_half_width * (y - g.nose_top) / (g.nose_bottom - g.nose_top);
    if (std::abs(x - g.inner_cx) <= half) px = Rgb{130, 90, 80};
  }

  if (y <= g.mouth_cy && in_ellipse(x, y, g.inner_cx, g.mouth_cy, g.mouth_rx, g.upper_lip))
    px = Rgb{172, 66, 78};
  if (y > g.mouth_cy && in_ellipse(x, y, g.inner_cx, g.mouth_cy, g.mouth_rx, g.lower_lip))
    px = Rgb{186, 74, 86};
  return px;
}

}  // namespace

Image rasterize(const FaceGeometry& geometry, const NuisanceParams& nuisance, int size) {
  require(size >= 16, ErrorKind::invalid_argument, "render size must be at least 16");
  constexpr int kSuper = 3;
  Image img(size, size);
  std::mt19937_64 rng(derive_seed(nuisance.seed, "sensor"));
  std::normal_distribution<double> sensor(0.0, 2.0);
  const double inv = 1.0 / (static_cast<double>(size) * kSuper);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      Rgb acc{0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const Rgb s = shade_sample(geometry, (x * kSuper + sx + 0.5) * inv, (y * kSuper + sy + 0.5) * inv);
          acc.r += s.r;
          acc.g += s.g;
          acc.b += s.b;
        }
      }
      const double norm = geometry.lighting / (kSuper * kSuper);
      img.at(y, x, 0) = clamp_u8(acc.r * norm + sensor(rng));
      img.at(y, x, 1) = clamp_u8(acc.g * norm + sensor(rng));
      img.at(y, x, 2) = clamp_u8(acc.b * norm + sensor(rng));
    }
  }
  return img;
}

RenderedFace render_face(const IdentityLatent& latent, const NuisanceParams& nuisance, int size) {
  RenderedFace face;
  face.pixels = rasterize(layout_face(latent, nuisance), nuisance, size);
  face.identity = latent;
  face.nuisance = nuisance;
  face.label = Label::real;
  face.generator = Generator::natural;
  return face;
}

IdentityLatent swap_latent(const IdentityLatent& target, const IdentityLatent& source, Region region) {
  require(target.components.size() == source.components.size(), ErrorKind::invalid_argument,
          "latent dimension mismatch");
  IdentityLatent composite = target;
  for (int c : region_components(region)) composite.components[c] = source.components[c];
  return composite;
}

ForgeryOutcome forge_swap(const IdentityLatent& target, const IdentityLatent& source, Region region,
                          const NuisanceParams& nuisance, int size) {
  const IdentityLatent composite = swap_latent(target, source, region);
  ForgeryOutcome out;
  out.face = render_face(composite, nuisance, size);
  out.face.label = Label::fake;
  out.face.generator = Generator::swap;
  out.changed_attributes = attribute_difference(derive_attributes(composite), derive_attributes(target));
  out.source_identity = source;
  out.region = region;
  return out;
}

ForgeryOutcome forge_swap(const IdentityLatent& target, const IdentityLatent& source,
                          std::string_view region_tag, const NuisanceParams& nuisance, int size) {
  return forge_swap(target, source, parse_region(region_tag), nuisance, size);
}

IdentityLatent synthesis_latent(const IdentityLatent& id, std::uint64_t perturb_seed, int k) {
  require(k >= 1 && k <= kLatentDim, ErrorKind::invalid_argument,
          "synthesis k must lie in [1, 16], got " + std::to_string(k));
  std::mt19937_64 rng(derive_seed(perturb_seed, "synthesis"));
  std::vector<int> order(kLatentDim);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(k));

  static const auto owner = component_owner();
  const AttributeSet original = derive_attributes(id);
  IdentityLatent out = id;
  constexpr double kMargin = 0.06;

  for (int comp : order) {
    const auto& a = info(owner[comp]);
    const int partner = partner_component(comp);
    const double other = out.components[partner];
    const double score = 0.5 * (out.components[comp] + other);
    const int orig_cat = original.category(a.id);
    const int cur_cat = categorize(a, score);
    const double reach_lo = 0.5 * (-1.0 + other), reach_hi = 0.5 * (1.0 + other);
    const int ncat = static_cast<int>(a.values.size());

    // Nearest feasible category other than the original one, preferring a
    // category that also differs from the current one (a real crossing).
    int best = -1;
    double best_lo = 0, best_hi = 0, best_dist = 1e9;
    bool best_crosses = false;
    for (int cat = 0; cat < ncat; ++cat) {
      if (cat == orig_cat) continue;
      double lo = cat == 0 ? -1.0 : a.thresholds[cat - 1] + kMargin;
      double hi = cat == ncat - 1 ? 1.0 : a.thresholds[cat] - kMargin;
      lo = std::max(lo, reach_lo);
      hi = std::min(hi, reach_hi);
      if (lo > hi) continue;
      const bool crosses = cat != cur_cat;
      const double dist = score < lo ? lo - score : (score > hi ? score - hi : 0.0);
      if (best < 0 || (crosses && !best_crosses) || (crosses == best_crosses && dist < best_dist)) {
        best = cat;
        best_lo = lo;
        best_hi = hi;
        best_dist = dist;
        best_crosses = crosses;
      }
    }
    if (best < 0) continue;  // unreachable for [-1,1] latents; see catalog widths
    const double target_score = 0.5 * (best_lo + best_hi);
    out.components[comp] = std::clamp(2.0 * target_score - other, -1.0, 1.0);
  }
  return out;
}

ForgeryOutcome forge_synthesis(const IdentityLatent& id, std::uint64_t perturb_seed, int k, int size) {
  const IdentityLatent perturbed = synthesis_latent(id, perturb_seed, k);
  const NuisanceParams nuisance = sample_nuisance(derive_seed(perturb_seed, "synthesis-view"));
  ForgeryOutcome out;
  out.face = render_face(perturbed, nuisance, size);
  out.face.label = Label::fake;
  out.face.generator = Generator::synthesis;
  out.changed_attributes = attribute_difference(derive_attributes(perturbed), derive_attributes(id));
  return out;
}

}  // namespace vipguard::synthworld
