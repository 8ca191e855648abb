#pragma once

#include "cdlm/numeric.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cdlm {

/// Bijective token <-> id mapping. Always contains the unknown token.
class Vocab {
 public:
  static constexpr std::string_view kUnknown = "<unk>";

  Vocab();

  /// Builds from an ordered token list; duplicates are rejected and the
  /// unknown token is appended when missing.
  static Vocab from_tokens(std::vector<std::string> tokens);

  /// First-occurrence order over a corpus.
  static Vocab from_corpus(std::span<const std::string> corpus);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  TokenId id_or_unknown(std::string_view token) const;
  TokenId unknown_id() const { return unknown_id_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<TokenId> encode(std::span<const std::string> words) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId unknown_id_ = 0;
};

}  // namespace cdlm
