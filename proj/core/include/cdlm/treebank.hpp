#pragma once

#include "cdlm/cd.hpp"
#include "cdlm/vocab.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace cdlm {

struct DepWord {
  std::string form;
  std::string upos;
};

/// One dependency-parsed sentence. heads[i] is 0 for the root, otherwise the
/// 1-based index of word i's head.
struct DepSentence {
  std::vector<DepWord> words;
  std::vector<std::size_t> heads;
  std::vector<std::string> deprels;

  std::size_t size() const { return words.size(); }
  bool operator==(const DepSentence& other) const;
};

/// Parses CoNLL-U text. Comments, multiword-token ranges ("3-4") and empty
/// nodes ("5.1") are skipped. Throws FormatError citing the line number for
/// malformed lines, and for head graphs that are not a single-rooted tree.
std::vector<DepSentence> parse_conllu(std::string_view text);
std::vector<DepSentence> read_conllu(const std::filesystem::path& path);

/// Word lines only, underscore in the unused columns.
std::string to_conllu(const std::vector<DepSentence>& sentences);

/// Undirected tree distance between 0-based word positions l and r.
std::size_t syntactic_distance(const DepSentence& sent, std::size_t l, std::size_t r);

/// All-pairs undirected tree distances.
std::vector<std::vector<std::size_t>> distance_matrix(const DepSentence& sent);

enum class PosClass { open, closed, excluded };

const char* pos_class_name(PosClass c);
bool is_known_upos(std::string_view upos);
/// Universal Dependencies v2 open/closed split; PUNCT, SYM, X and unknown
/// tags are excluded.
PosClass pos_class(std::string_view upos);

struct WordPairRecord {
  std::size_t sentence = 0;
  std::size_t l = 0;
  std::size_t r = 0;
  std::size_t seq_dist = 0;
  std::size_t syn_dist = 0;
  PosClass class_l = PosClass::open;
  PosClass class_r = PosClass::open;
  double di_value = 0.0;
};

struct StratifiedRow {
  std::size_t seq_dist = 0;
  std::size_t syn_dist = 0;
  PosClass class_l = PosClass::open;
  PosClass class_r = PosClass::open;
  double mean_di = 0.0;
  std::size_t count = 0;
};

struct SeqDistRow {
  std::size_t seq_dist = 0;
  double mean_di = 0.0;
  std::size_t count = 0;
};

struct StratumTrend {
  std::size_t seq_dist = 0;
  PosClass class_l = PosClass::open;
  PosClass class_r = PosClass::open;
  std::size_t bins = 0;
  double spearman = 0.0;  // syn_dist vs mean_di across emitted bins
};

struct StratifiedDiResult {
  std::vector<StratifiedRow> rows;        // groups with count >= min_bin_count
  std::vector<StratifiedRow> all_groups;  // before the bin-size filter
  std::vector<SeqDistRow> by_seq_dist;
  std::vector<WordPairRecord> pairs;
  std::size_t eligible_pairs = 0;
  std::size_t degenerate_pairs = 0;
  std::size_t tokens = 0;
  std::size_t unknown_tokens = 0;
  std::vector<std::string> warnings;
};

/// Maps forms to ids, falling back to lowercase and then the unknown token.
std::vector<TokenId> encode_sentence(const DepSentence& sent, const Vocab& vocab);

/// DI for every eligible single-token pair (both words open or closed class,
/// r - l <= max_seq_dist), grouped by (seq_dist, syn_dist, class_l, class_r).
StratifiedDiResult stratified_di(const ModelParams& params, const Vocab& vocab,
                                 const std::vector<DepSentence>& sentences,
                                 std::size_t max_seq_dist, std::size_t min_bin_count = 100,
                                 const CdOptions& options = {});

/// Spearman rank correlation (average ranks for ties). NaN for fewer than
/// two points or zero variance.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

std::vector<StratumTrend> syntactic_trends(const std::vector<StratifiedRow>& rows);

}  // namespace cdlm
