#pragma once

#include "cdlm/numeric.hpp"
#include "cdlm/vocab.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cdlm {

enum class ScaffoldSetting { unfamiliar, familiar };
enum class TestDomain { in, out };

const char* setting_name(ScaffoldSetting s);
const char* domain_name(TestDomain d);

/// Parameters of an alpha Sigma^k omega corpus.
struct SynthSpec {
  std::size_t sigma_size = 200;
  std::size_t corpus_len = 200000;
  std::size_t n = 500;  // rule occurrences
  std::size_t k = 2;    // scaffold length
  ScaffoldSetting setting = ScaffoldSetting::unfamiliar;
  std::size_t scaffold_vocab = 50;
  std::size_t per_scaffold_rule_count = 10;
  std::size_t outside_count = 200;  // familiar only, on top of the in-rule uses
  std::uint64_t seed = 1;

  /// 1M tokens, |Sigma| = 1000, 100 scaffolds x 10 rule uses, 1000 outside.
  static SynthSpec full_scale();
  /// 200k tokens, |Sigma| = 200, 50 scaffolds x 10 rule uses, 200 outside.
  static SynthSpec desk_scale();

  std::size_t planted_tokens() const;
  bool feasible() const;
  /// Throws ConfigError when an invariant is broken or the planted material
  /// does not fit.
  void validate() const;
};

/// Scales scaffold_vocab (and so n) and outside_count by one common factor
/// so the planted material fits. Returns the factor applied (1 when the spec
/// already fits).
double scale_to_fit(SynthSpec& spec);

/// Ids: Sigma is 0..|Sigma|-1, then alpha, omega and <unk>.
struct SynthVocab {
  std::size_t sigma_size = 0;

  TokenId alpha() const { return static_cast<TokenId>(sigma_size); }
  TokenId omega() const { return static_cast<TokenId>(sigma_size + 1); }
  TokenId unknown() const { return static_cast<TokenId>(sigma_size + 2); }
  std::size_t size() const { return sigma_size + 3; }
  Vocab vocab() const;
};

using Scaffold = std::vector<TokenId>;

struct RuleAnnotation {
  std::size_t rule_id = 0;
  std::size_t alpha_pos = 0;
  std::size_t scaffold_start = 0;
  std::size_t scaffold_len = 0;
  std::size_t omega_pos = 0;
  std::size_t scaffold_id = 0;
};

struct OutsideOccurrence {
  std::size_t start = 0;
  std::size_t scaffold_id = 0;
};

struct CorpusWithMeta {
  std::vector<TokenId> tokens;
  std::vector<RuleAnnotation> rules;
  std::vector<Scaffold> scaffold_lexicon;
  std::vector<OutsideOccurrence> outside;
  std::size_t sigma_size = 0;
  std::size_t k = 0;
};

CorpusWithMeta generate_unfamiliar(const SynthSpec& spec);
CorpusWithMeta generate_familiar(const SynthSpec& spec);
/// Dispatches on spec.setting.
CorpusWithMeta generate_training(const SynthSpec& spec);

/// Test corpus of `test_len` tokens with `test_n` rules and no outside
/// scaffolds. In-domain scaffolds are drawn from `training_lexicon`;
/// out-domain scaffolds are fresh uniform k-grams outside it.
CorpusWithMeta generate_test(const SynthSpec& spec, TestDomain domain, std::size_t test_len,
                             std::size_t test_n, std::span<const Scaffold> training_lexicon,
                             std::uint64_t seed);

/// One unfamiliar corpus per (n, k), n-major. scaffold_vocab is set to
/// n / per_scaffold_rule_count. All members share the background stream of
/// base.seed.
std::vector<CorpusWithMeta> rule_frequency_suite(const SynthSpec& base,
                                                 std::span<const std::size_t> n_values,
                                                 std::span<const std::size_t> k_values);

/// Problems found by check_corpus; empty when the corpus is consistent.
std::vector<std::string> check_corpus(const CorpusWithMeta& corpus);

/// Fraction of corpus positions that start a lexicon k-gram without being a
/// planted scaffold.
double chance_scaffold_rate(const CorpusWithMeta& corpus);

void write_corpus_tokens(const std::filesystem::path& path, const CorpusWithMeta& corpus,
                         const Vocab& vocab);
void write_annotations(const std::filesystem::path& path, const CorpusWithMeta& corpus);
void write_lexicon(const std::filesystem::path& path, const CorpusWithMeta& corpus,
                   const Vocab& vocab);

/// Reads a one-token-per-line corpus file.
std::vector<std::string> read_token_file(const std::filesystem::path& path);

}  // namespace cdlm
