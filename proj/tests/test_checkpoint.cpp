#include "cdlm/checkpoint.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace cdlm {
namespace {

namespace fs = std::filesystem;

Model sample_model() {
  Vocab vocab = Vocab::from_tokens({"alpha", "beta", "gamma", "\xc3\xa9t\xc3\xa9"});
  ModelParams p = test::random_params(17, Dims{vocab.size(), 3, 4});
  return {vocab, p};
}

CheckpointError::Kind kind_of(std::string_view bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return CheckpointError::Kind::magic;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const Model m = sample_model();
  const std::string bytes = serialize_checkpoint(m.vocab, m.params);
  const Model back = deserialize_checkpoint(bytes);
  EXPECT_TRUE(back.params == m.params);
  EXPECT_TRUE(back.vocab == m.vocab);
  EXPECT_EQ(serialize_checkpoint(back.vocab, back.params), bytes);
}

TEST(Checkpoint, FileSaveOfLoadIsByteIdentical) {
  const Model m = sample_model();
  const fs::path dir = fs::temp_directory_path() / "cdlm_ckpt_test";
  fs::create_directories(dir);
  save_checkpoint(dir / "a.ckpt", m.vocab, m.params);
  const Model loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", loaded.vocab, loaded.params);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  fs::remove_all(dir);
}

TEST(Checkpoint, HeaderLayout) {
  const Model m = sample_model();
  const std::string bytes = serialize_checkpoint(m.vocab, m.params);
  EXPECT_EQ(bytes.substr(0, 4), "DLM1");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[4 + i]);
  EXPECT_EQ(v, m.vocab.size());
}

TEST(Checkpoint, CorruptedMagicIsAFormatError) {
  const Model m = sample_model();
  std::string bytes = serialize_checkpoint(m.vocab, m.params);
  bytes[0] = 'X';
  EXPECT_EQ(kind_of(bytes), CheckpointError::Kind::magic);
  EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, HeaderInconsistentWithPayloadIsALengthError) {
  const Model m = sample_model();
  std::string bytes = serialize_checkpoint(m.vocab, m.params);
  bytes[4 + 8 * 2] = static_cast<char>(bytes[4 + 8 * 2] + 9);  // d_h grows
  EXPECT_EQ(kind_of(bytes), CheckpointError::Kind::length);
  std::string extra = serialize_checkpoint(m.vocab, m.params) + "zz";
  EXPECT_EQ(kind_of(extra), CheckpointError::Kind::length);
}

TEST(Checkpoint, TruncationIsDetected) {
  const Model m = sample_model();
  const std::string bytes = serialize_checkpoint(m.vocab, m.params);
  EXPECT_EQ(kind_of(std::string_view(bytes).substr(0, 10)), CheckpointError::Kind::truncated);
  EXPECT_NE(kind_of(std::string_view(bytes).substr(0, bytes.size() - 3)),
            CheckpointError::Kind::magic);
}

TEST(Checkpoint, MissingFileIsAFormatError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), FormatError);
}

}  // namespace
}  // namespace cdlm
