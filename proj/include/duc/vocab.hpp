#pragma once

#include "duc/types.hpp"

#include <map>
#include <span>
#include <string>
#include <string_view>

namespace duc {

// Splits on Unicode whitespace. Case and attached punctuation are preserved.
Words tokenize(std::string_view text);

std::string detokenize(std::span<const std::string> words);

class Vocabulary {
 public:
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kEot = "<eot>";

  Vocabulary();  // holds only the reserved tokens

  // Reserved tokens first, then the distinct words of `words` in sorted order.
  static Vocabulary build(std::span<const std::string> words);

  TokenId add(const std::string& token);
  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const;
  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

  TokenSeq encode(std::span<const std::string> words) const;
  Words decode(std::span<const TokenId> ids) const;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  TokenId unk_id() const { return 0; }
  TokenId eot_id() const { return 1; }
  const Words& tokens() const { return id_to_token_; }

 private:
  std::map<std::string, TokenId, std::less<>> token_to_id_;
  Words id_to_token_;
};

Vocabulary load_vocabulary(const std::string& path);
void save_vocabulary(const Vocabulary& vocab, const std::string& path);

}  // namespace duc
