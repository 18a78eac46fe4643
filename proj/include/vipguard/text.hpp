#pragma once

// Closed vocabulary and the whitespace/punctuation tokenizer shared by the
// corpora and the decoder.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace vipguard::text {

inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kBos = "<bos>";
inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kAnswer = "<answer>";
inline constexpr std::string_view kExplain = "<explain>";
inline constexpr std::string_view kYes = "Yes";
inline constexpr std::string_view kNo = "No";

/// Decoder prompt for the identity verdict (stages 2 and 3).
inline constexpr std::string_view kVerdictQuestion = "is this the same person ?";

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(std::string_view token) const;
  /// Throws Error(invalid_argument) for out-of-vocabulary tokens.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> index_;
};

/// Lowercases words (except the verdict words and <control> tokens), splits
/// punctuation into separate tokens and digits into single characters.
std::vector<std::string> tokenize(std::string_view text);

/// Plain text, one token per line; the id is the line number.
void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);

}  // namespace vipguard::text
