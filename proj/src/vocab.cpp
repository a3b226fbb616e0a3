#include "duc/vocab.hpp"

#include "duc/error.hpp"

#include <fstream>
#include <set>

namespace duc {
namespace {

// Decodes one UTF-8 code point starting at `i`; malformed bytes decode as themselves.
char32_t decode_utf8(std::string_view s, std::size_t i, std::size_t& len) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    len = 1;
    return b0;
  }
  if ((b0 & 0xE0) == 0xC0 && cont(1) >= 0) {
    len = 2;
    return ((b0 & 0x1F) << 6) | cont(1);
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) >= 0 && cont(2) >= 0) {
    len = 3;
    return ((b0 & 0x0F) << 12) | (cont(1) << 6) | cont(2);
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) >= 0 && cont(2) >= 0 && cont(3) >= 0) {
    len = 4;
    return ((b0 & 0x07) << 18) | (cont(1) << 12) | (cont(2) << 6) | cont(3);
  }
  len = 1;
  return b0;
}

bool is_unicode_space(char32_t c) {
  switch (c) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

}  // namespace

Words tokenize(std::string_view text) {
  Words out;
  std::size_t start = std::string_view::npos;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t len = 1;
    const char32_t c = decode_utf8(text, i, len);
    if (is_unicode_space(c)) {
      if (start != std::string_view::npos) {
        out.emplace_back(text.substr(start, i - start));
        start = std::string_view::npos;
      }
    } else if (start == std::string_view::npos) {
      start = i;
    }
    i += len;
  }
  if (start != std::string_view::npos) out.emplace_back(text.substr(start));
  return out;
}

std::string detokenize(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

Vocabulary::Vocabulary() {
  add(std::string(kUnk));
  add(std::string(kEot));
}

Vocabulary Vocabulary::build(std::span<const std::string> words) {
  Vocabulary v;
  std::set<std::string> distinct(words.begin(), words.end());
  for (const auto& w : distinct) v.add(w);
  return v;
}

TokenId Vocabulary::add(const std::string& token) {
  if (auto it = token_to_id_.find(token); it != token_to_id_.end()) return it->second;
  const auto id = static_cast<TokenId>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(token);
  return id;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? unk_id() : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) throw ParameterError("token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

TokenSeq Vocabulary::encode(std::span<const std::string> words) const {
  TokenSeq out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

Words Vocabulary::decode(std::span<const TokenId> ids) const {
  Words out;
  out.reserve(ids.size());
  for (auto t : ids) out.push_back(token(t));
  return out;
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocabulary " + path);
  Vocabulary v;
  std::string line;
  TokenId expected = 0;
  while (std::getline(in, line)) {
    if (v.add(line) != expected++) throw ParseError("duplicate or misplaced token in " + path + ": " + line);
  }
  return v;
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path);
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

}  // namespace duc
