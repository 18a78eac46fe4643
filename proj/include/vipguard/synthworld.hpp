#pragma once

// Procedural identity world: latent identities, categorical attribute ground
// truth, a primitive-based face renderer, and latent-level forgeries.

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string_view>
#include <vector>

#include "vipguard/common.hpp"

namespace vipguard::synthworld {

inline constexpr int kLatentDim = 16;
inline constexpr int kAttributeCount = 8;
inline constexpr double kPoseGate = 15.0;
inline constexpr int kDefaultImageSize = 64;

struct IdentityLatent {
  std::vector<double> components;  // each in [-1, 1]
  std::uint64_t seed = 0;

  bool operator==(const IdentityLatent&) const = default;
};

/// Deterministic, uniform in [-1, 1]^16.
IdentityLatent sample_identity(std::int64_t seed);

struct NuisanceParams {
  double yaw = 0.0;       // degrees, |yaw| < 15
  double pitch = 0.0;     // degrees, |pitch| < 15
  double lighting = 1.0;  // [0.5, 1.5]
  std::uint64_t seed = 0;

  bool operator==(const NuisanceParams&) const = default;
};

NuisanceParams sample_nuisance(std::uint64_t seed);

enum class Attribute : int {
  face_shape,
  eye_size,
  lip_thickness,
  skin_marks,
  eyebrow_density,
  nose_width,
  eye_pouch,
  glabella_wrinkle,
};

enum class Region { eyes, nose, mouth, inner_face };

struct AttributeInfo {
  Attribute id;
  std::string_view name;    // snake_case catalog key
  std::string_view phrase;  // words used in generated text
  std::vector<std::string_view> values;
  std::array<int, 2> components;  // latent components averaged into the score
  std::vector<double> thresholds;  // ascending; category = #thresholds <= score
};

/// The published latent -> attribute table.
///
/// Each attribute reads the mean of two dedicated latent components. For
/// uniform latents that mean has a triangular density on [-1, 1], and the
/// thresholds sit at its quantiles so categories are equiprobable:
///   3 categories: s = +-(1 - sqrt(2/3)) = +-0.18350
///   4 categories: s = -(1 - sqrt(1/2)), 0, +(1 - sqrt(1/2)) = -0.29289, 0, 0.29289
const std::array<AttributeInfo, kAttributeCount>& attribute_catalog();
const AttributeInfo& info(Attribute attribute);
std::string_view to_string(Attribute attribute);
std::optional<Attribute> parse_attribute(std::string_view name);

std::string_view to_string(Region region);
/// Throws Error(invalid_argument) on an unknown tag.
Region parse_region(std::string_view tag);
/// Latent components a partial swap of this region transplants.
const std::vector<int>& region_components(Region region);

class AttributeSet {
 public:
  int category(Attribute attribute) const { return categories_[static_cast<int>(attribute)]; }
  std::string_view value(Attribute attribute) const;
  void set(Attribute attribute, int category);

  bool operator==(const AttributeSet&) const = default;

 private:
  std::array<int, kAttributeCount> categories_{};
};

double attribute_score(const IdentityLatent& latent, Attribute attribute);
int categorize(const AttributeInfo& attribute, double score);
AttributeSet derive_attributes(const IdentityLatent& latent);
std::set<Attribute> attribute_difference(const AttributeSet& a, const AttributeSet& b);

enum class Label { real, fake };
enum class Generator { natural, swap, synthesis };

std::string_view to_string(Label label);
std::string_view to_string(Generator generator);
Label parse_label(std::string_view text);
Generator parse_generator(std::string_view text);

/// Scene description consumed by the rasterizer. All lengths are in
/// normalized image units ([0, 1] spans the full side).
struct FaceGeometry {
  double face_cx, face_cy, face_rx, face_ry, face_exponent;
  double eye_dx, eye_cy, eye_rx, eye_ry;  // eyes at face_cx' +- eye_dx
  double inner_cx;                        // horizontal center of inner features
  double pouch_ry, pouch_strength;
  double brow_y, brow_half_length, brow_thickness, brow_strength;
  double nose_top, nose_bottom, nose_half_width;
  double mouth_cy, mouth_rx, upper_lip, lower_lip;
  double mark_radius, mark_strength;
  double glabella_top, glabella_length, glabella_strength;
  double lighting;
};

FaceGeometry layout_face(const IdentityLatent& latent, const NuisanceParams& nuisance);
Image rasterize(const FaceGeometry& geometry, const NuisanceParams& nuisance, int size);

struct RenderedFace {
  Image pixels;
  IdentityLatent identity;  // composite latent for forgeries
  NuisanceParams nuisance;
  Label label = Label::real;
  Generator generator = Generator::natural;
};

RenderedFace render_face(const IdentityLatent& latent, const NuisanceParams& nuisance,
                         int size = kDefaultImageSize);

struct ForgeryOutcome {
  RenderedFace face;
  std::set<Attribute> changed_attributes;
  std::optional<IdentityLatent> source_identity;
  std::optional<Region> region;
};

IdentityLatent swap_latent(const IdentityLatent& target, const IdentityLatent& source, Region region);

ForgeryOutcome forge_swap(const IdentityLatent& target, const IdentityLatent& source, Region region,
                          const NuisanceParams& nuisance, int size = kDefaultImageSize);
ForgeryOutcome forge_swap(const IdentityLatent& target, const IdentityLatent& source,
                          std::string_view region_tag, const NuisanceParams& nuisance,
                          int size = kDefaultImageSize);

/// Pushes k seeded-chosen components across their attribute decision
/// thresholds. Returns the perturbed latent; throws when k is out of [1, 16].
IdentityLatent synthesis_latent(const IdentityLatent& id, std::uint64_t perturb_seed, int k);

/// Entire-face synthesis stand-in: the perturbed latent rendered under a fresh
/// nuisance drawn from perturb_seed.
ForgeryOutcome forge_synthesis(const IdentityLatent& id, std::uint64_t perturb_seed, int k,
                               int size = kDefaultImageSize);

}  // namespace vipguard::synthworld
