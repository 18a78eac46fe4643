#include "vipguard/text.hpp"

#include <cctype>
#include <fstream>

#include "vipguard/common.hpp"

namespace vipguard::text {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (int i = 0; i < size(); ++i) {
    const auto& t = tokens_[static_cast<std::size_t>(i)];
    require(!t.empty(), ErrorKind::format, "empty vocabulary entry at line " + std::to_string(i + 1));
    require(index_.emplace(t, i).second, ErrorKind::format, "duplicate vocabulary entry '" + t + "'");
  }
}

bool Vocabulary::contains(std::string_view token) const { return index_.find(token) != index_.end(); }

int Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(token);
  require(it != index_.end(), ErrorKind::invalid_argument, "token '" + std::string(token) + "' not in vocabulary");
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  require(id >= 0 && id < size(), ErrorKind::invalid_argument, "token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(i);
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (word != kYes && word != kNo)
      for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(std::move(word));
    word.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const auto uc = static_cast<unsigned char>(c);
    if (c == '<') {
      const auto close = text.find('>', i);
      if (close != std::string_view::npos) {
        flush();
        out.emplace_back(text.substr(i, close - i + 1));
        i = close;
        continue;
      }
    }
    if (std::isspace(uc)) {
      flush();
    } else if (std::isdigit(uc) || std::ispunct(uc)) {
      flush();
      out.emplace_back(1, c);
    } else {
      word.push_back(c);
    }
  }
  flush();
  return out;
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  for (const auto& t : vocab.tokens()) out << t << "\n";
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

}  // namespace vipguard::text
