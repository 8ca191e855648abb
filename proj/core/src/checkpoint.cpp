#include "cdlm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cdlm {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::string& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }

template <class M>
void put_row_major(std::string& out, const M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <class M>
  void row_major(M& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
    }
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint truncated");
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Vocab& vocab, const ModelParams& params) {
  params.validate();
  const Dims d = params.dims();
  if (vocab.size() != d.vocab) {
    throw ShapeError("vocabulary size does not match embedding rows");
  }
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u64(out, d.vocab);
  put_u64(out, d.embed);
  put_u64(out, d.hidden);
  put_row_major(out, params.embedding);
  for (Gate g : kGates) {
    put_row_major(out, params.input_block(g));
    put_row_major(out, params.recurrent_block(g));
    for (Eigen::Index i = 0; i < params.hidden(); ++i) put_f64(out, params.bias_block(g)(i));
  }
  put_row_major(out, params.decoder);
  for (Eigen::Index i = 0; i < params.decoder_bias.size(); ++i) {
    put_f64(out, params.decoder_bias(i));
  }
  for (const auto& t : vocab.tokens()) {
    put_u64(out, t.size());
    out.append(t);
  }
  return out;
}

Model deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError(CheckpointError::Kind::magic, "not a DLM1 checkpoint (bad magic)");
  }
  Reader in(bytes.substr(sizeof(kCheckpointMagic)));
  const std::uint64_t v = in.u64();
  const std::uint64_t e = in.u64();
  const std::uint64_t h = in.u64();
  if (v < 2 || e == 0 || h == 0 || v > (1u << 30) || e > (1u << 20) || h > (1u << 20)) {
    throw CheckpointError(CheckpointError::Kind::length, "implausible checkpoint dimensions");
  }
  // Parameter payload plus at least one length prefix per token.
  const std::uint64_t n_params = v * e + 4 * (h * e + h * h + h) + v * h + v;
  if (in.remaining() < 8 * n_params + 8 * v) {
    throw CheckpointError(CheckpointError::Kind::length,
                          "checkpoint payload shorter than its dimension header implies");
  }
  Model model;
  model.params = ModelParams::zeros(Dims{v, e, h});
  auto& p = model.params;
  in.row_major(p.embedding);
  for (Gate g : kGates) {
    auto w = p.input_block(g);
    in.row_major(w);
    auto r = p.recurrent_block(g);
    in.row_major(r);
    auto b = p.bias_block(g);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = in.f64();
  }
  in.row_major(p.decoder);
  for (Eigen::Index i = 0; i < p.decoder_bias.size(); ++i) p.decoder_bias(i) = in.f64();

  std::vector<std::string> tokens;
  tokens.reserve(v);
  for (std::uint64_t i = 0; i < v; ++i) {
    const std::uint64_t len = in.u64();
    tokens.emplace_back(in.take(len));
  }
  if (in.remaining() != 0) {
    throw CheckpointError(CheckpointError::Kind::length, "trailing bytes after vocabulary");
  }
  try {
    model.vocab = Vocab::from_tokens(std::move(tokens));
  } catch (const FormatError& err) {
    throw CheckpointError(CheckpointError::Kind::vocabulary, err.what());
  }
  if (model.vocab.size() != v) {
    throw CheckpointError(CheckpointError::Kind::vocabulary,
                          "checkpoint vocabulary lacks the unknown token");
  }
  p.validate();
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Vocab& vocab,
                     const ModelParams& params) {
  const std::string bytes = serialize_checkpoint(vocab, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing checkpoint: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace cdlm
