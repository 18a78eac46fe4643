#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vipguard {

/// Error families. The numeric value doubles as the CLI exit code.
enum class ErrorKind : int {
  invalid_argument = 2,
  insufficient_data = 3,
  missing_prerequisite = 4,
  io = 5,
  format = 6,
  numerical = 7,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent sub-seed from a parent seed, a tag and an index.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag, std::uint64_t index = 0);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL);
std::uint64_t fnv1a_bytes(const void* data, std::size_t size, std::uint64_t h = 1469598103934665603ULL);

std::string hex64(std::uint64_t value);

/// Interleaved 8-bit RGB raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  bool empty() const noexcept { return data.empty(); }
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * 3 + c;
  }
  std::uint8_t& at(int y, int x, int c) noexcept { return data[index(y, x, c)]; }
  std::uint8_t at(int y, int x, int c) const noexcept { return data[index(y, x, c)]; }

  double mean_intensity() const;
  bool operator==(const Image& other) const = default;
};

inline std::uint8_t clamp_u8(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(v + 0.5);
}

std::vector<std::string> split(std::string_view text, char delimiter);
std::string trim(std::string_view text);

inline constexpr std::string_view kVersion = "0.3.0";

}  // namespace vipguard
