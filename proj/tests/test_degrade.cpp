#include <doctest.h>

#include "vipguard/evalharness.hpp"
#include "vipguard/image_io.hpp"
#include "vipguard/synthworld.hpp"

using namespace vipguard;
using evalharness::DegradationKind;
using evalharness::DegradationSpec;

namespace {

Image face(std::uint64_t seed) {
  return synthworld::render_face(synthworld::sample_identity(static_cast<std::int64_t>(seed)),
                                 synthworld::sample_nuisance(seed))
      .pixels;
}

}  // namespace

TEST_CASE("level parameters") {
  using K = DegradationKind;
  const double sigma[] = {8, 11, 18};
  const int kernel[] = {7, 13, 21};
  const double blur[] = {1, 2, 3};
  const int quality[] = {90, 60, 30};
  for (int level = 1; level <= 3; ++level) {
    CHECK(DegradationSpec::make(K::gaussian_noise_ycbcr, level).noise_sigma == sigma[level - 1]);
    CHECK(DegradationSpec::make(K::gaussian_blur, level).kernel == kernel[level - 1]);
    CHECK(DegradationSpec::make(K::gaussian_blur, level).blur_sigma == blur[level - 1]);
    CHECK(DegradationSpec::make(K::jpeg, level).quality == quality[level - 1]);
  }
  CHECK(evalharness::degradation_registry().size() == 9);
}

TEST_CASE("specs parse from kind:level and reject anything else") {
  CHECK(DegradationSpec::parse("noise:3").noise_sigma == 18);
  CHECK(DegradationSpec::parse("gaussian_blur:2").kernel == 13);
  CHECK(DegradationSpec::parse("jpeg:1").quality == 90);
  CHECK_THROWS_AS(DegradationSpec::parse("noise:4"), Error);
  CHECK_THROWS_AS(DegradationSpec::parse("noise:0"), Error);
  CHECK_THROWS_AS(DegradationSpec::parse("sharpen:1"), Error);
  CHECK_THROWS_AS(DegradationSpec::parse("jpeg"), Error);
}

TEST_CASE("blur kernels are normalized and symmetric") {
  for (int level = 1; level <= 3; ++level) {
    const auto spec = DegradationSpec::make(DegradationKind::gaussian_blur, level);
    const auto k = evalharness::gaussian_kernel(spec.kernel, spec.blur_sigma);
    REQUIRE(static_cast<int>(k.size()) == spec.kernel);
    double sum = 0;
    for (double v : k) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    for (std::size_t i = 0; i < k.size(); ++i) CHECK(k[i] == doctest::Approx(k[k.size() - 1 - i]));
  }
}

TEST_CASE("ycbcr round trip") {
  // the six-digit JFIF coefficients invert to well under one grey level
  for (int r = 0; r < 256; r += 15)
    for (int g = 0; g < 256; g += 17)
      for (int b = 0; b < 256; b += 51) {
        double y, cb, cr, r2, g2, b2;
        evalharness::rgb_to_ycbcr(r, g, b, y, cb, cr);
        evalharness::ycbcr_to_rgb(y, cb, cr, r2, g2, b2);
        CHECK(std::abs(r2 - r) <= 1e-3);
        CHECK(std::abs(g2 - g) <= 1e-3);
        CHECK(std::abs(b2 - b) <= 1e-3);
      }
  // grey maps to neutral chroma
  double y, cb, cr;
  evalharness::rgb_to_ycbcr(100, 100, 100, y, cb, cr);
  CHECK(y == doctest::Approx(100));
  CHECK(cb == doctest::Approx(128));
  CHECK(cr == doctest::Approx(128));
}

TEST_CASE("seeded noise is bitwise reproducible and seed dependent") {
  const Image img = face(5);
  const auto spec = DegradationSpec::make(DegradationKind::gaussian_noise_ycbcr, 2);
  const Image a = evalharness::degrade(img, spec, 99);
  const Image b = evalharness::degrade(img, spec, 99);
  const Image c = evalharness::degrade(img, spec, 100);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK_FALSE(a == img);
}

TEST_CASE("stronger noise moves pixels further") {
  const Image img = face(8);
  double prev = 0;
  for (int level = 1; level <= 3; ++level) {
    const Image d = evalharness::degrade(img, DegradationSpec::make(DegradationKind::gaussian_noise_ycbcr, level), 4);
    double sq = 0;
    for (std::size_t i = 0; i < img.data.size(); ++i) sq += std::pow(double(d.data[i]) - img.data[i], 2);
    CHECK(sq > prev);
    prev = sq;
  }
}

TEST_CASE("jpeg level 3 encodes smaller than level 1") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Image img = face(seed);
    const auto q1 = image_io::encode_jpeg(img, DegradationSpec::make(DegradationKind::jpeg, 1).quality);
    const auto q3 = image_io::encode_jpeg(img, DegradationSpec::make(DegradationKind::jpeg, 3).quality);
    CHECK(q3.size() <= q1.size());
  }
}

TEST_CASE("blur keeps a constant image constant") {
  Image flat(32, 32, 77);
  for (int level = 1; level <= 3; ++level)
    CHECK(evalharness::degrade(flat, DegradationSpec::make(DegradationKind::gaussian_blur, level), 0) == flat);
}
