#pragma once

#include "cdlm/errors.hpp"
#include "cdlm/model.hpp"
#include "cdlm/vocab.hpp"

#include <filesystem>
#include <string>

namespace cdlm {

/// Checkpoint layout (all integers and floats little-endian):
///
///   "DLM1"
///   u64 V, u64 d_emb, u64 d_h
///   f64 embedding              V x d_emb, row-major
///   for gate in (input, forget, output, cell):
///     f64 input weights        d_h x d_emb, row-major
///     f64 recurrent weights    d_h x d_h, row-major
///     f64 bias                 d_h
///   f64 decoder                V x d_h, row-major
///   f64 decoder bias           V
///   V times: u64 byte length, UTF-8 token bytes
class CheckpointError : public FormatError {
 public:
  enum class Kind { magic, length, truncated, vocabulary };

  CheckpointError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr char kCheckpointMagic[4] = {'D', 'L', 'M', '1'};

struct Model {
  Vocab vocab;
  ModelParams params;
};

std::string serialize_checkpoint(const Vocab& vocab, const ModelParams& params);
Model deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Vocab& vocab,
                     const ModelParams& params);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace cdlm
