#include "cdlm/vocab.hpp"

#include "cdlm/errors.hpp"

namespace cdlm {

Vocab::Vocab() {
  tokens_.emplace_back(kUnknown);
  index_.emplace(std::string(kUnknown), 0);
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  v.tokens_.clear();
  v.index_.clear();
  bool has_unknown = false;
  for (auto& t : tokens) {
    if (t == kUnknown) has_unknown = true;
    const auto id = static_cast<TokenId>(v.tokens_.size());
    if (!v.index_.emplace(t, id).second) {
      throw FormatError("duplicate vocabulary entry: " + t);
    }
    v.tokens_.push_back(std::move(t));
  }
  if (!has_unknown) {
    const auto id = static_cast<TokenId>(v.tokens_.size());
    v.index_.emplace(std::string(kUnknown), id);
    v.tokens_.emplace_back(kUnknown);
  }
  if (v.tokens_.size() < 2) {
    throw FormatError("vocabulary needs at least one token besides <unk>");
  }
  v.unknown_id_ = v.index_.at(std::string(kUnknown));
  return v;
}

Vocab Vocab::from_corpus(std::span<const std::string> corpus) {
  std::vector<std::string> ordered;
  std::unordered_map<std::string, bool> seen;
  for (const auto& w : corpus) {
    if (seen.emplace(w, true).second) ordered.push_back(w);
  }
  return from_tokens(std::move(ordered));
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id_or_unknown(std::string_view token) const {
  return find(token).value_or(unknown_id_);
}

std::vector<TokenId> Vocab::encode(std::span<const std::string> words) const {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id_or_unknown(w));
  return ids;
}

}  // namespace cdlm
