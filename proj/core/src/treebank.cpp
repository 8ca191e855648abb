#include "cdlm/treebank.hpp"

#include "cdlm/di.hpp"
#include "cdlm/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>

namespace cdlm {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

bool parse_uint(std::string_view s, std::size_t& value) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  return ec == std::errc() && ptr == end;
}

[[noreturn]] void fail(std::size_t line_no, const std::string& msg) {
  throw FormatError("CoNLL-U line " + std::to_string(line_no) + ": " + msg);
}

void check_tree(const DepSentence& s, std::size_t line_no) {
  const std::size_t n = s.size();
  std::size_t roots = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (s.heads[i] > n) fail(line_no, "head index out of range");
    if (s.heads[i] == i + 1) fail(line_no, "word is its own head");
    if (s.heads[i] == 0) ++roots;
  }
  if (roots != 1) fail(line_no, "sentence must have exactly one root, found " + std::to_string(roots));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t cur = i + 1;
    for (std::size_t steps = 0; cur != 0; ++steps) {
      if (steps > n) fail(line_no, "cyclic head structure");
      cur = s.heads[cur - 1];
    }
  }
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) r[idx[m]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

bool DepSentence::operator==(const DepSentence& other) const {
  if (words.size() != other.words.size()) return false;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i].form != other.words[i].form || words[i].upos != other.words[i].upos) return false;
  }
  return heads == other.heads && deprels == other.deprels;
}

std::vector<DepSentence> parse_conllu(std::string_view text) {
  std::vector<DepSentence> out;
  DepSentence current;
  std::size_t line_no = 0;
  std::size_t last_line = 0;
  auto flush = [&]() {
    if (current.size() == 0) return;
    check_tree(current, last_line);
    out.push_back(std::move(current));
    current = DepSentence{};
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      flush();
      if (nl == text.size()) break;
      continue;
    }
    if (line.front() == '#') continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 10) {
      fail(line_no, "expected 10 tab-separated columns, found " + std::to_string(cols.size()));
    }
    const std::string_view id = cols[0];
    if (id.find('-') != std::string_view::npos || id.find('.') != std::string_view::npos) {
      continue;
    }
    std::size_t index = 0;
    if (!parse_uint(id, index)) fail(line_no, "invalid word id '" + std::string(id) + "'");
    if (index != current.size() + 1) fail(line_no, "word ids must be consecutive from 1");
    std::size_t head = 0;
    if (!parse_uint(cols[6], head)) fail(line_no, "invalid head '" + std::string(cols[6]) + "'");
    current.words.push_back(DepWord{std::string(cols[1]), std::string(cols[3])});
    current.heads.push_back(head);
    current.deprels.emplace_back(cols[7]);
    last_line = line_no;
    if (nl == text.size()) break;
  }
  flush();
  return out;
}

std::vector<DepSentence> read_conllu(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open CoNLL-U file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_conllu(buf.str());
}

std::string to_conllu(const std::vector<DepSentence>& sentences) {
  std::ostringstream out;
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << (i + 1) << '\t' << s.words[i].form << "\t_\t" << s.words[i].upos << "\t_\t_\t"
          << s.heads[i] << '\t' << s.deprels[i] << "\t_\t_\n";
    }
    out << '\n';
  }
  return out.str();
}

std::vector<std::vector<std::size_t>> distance_matrix(const DepSentence& sent) {
  const std::size_t n = sent.size();
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (sent.heads[i] != 0) {
      adj[i].push_back(sent.heads[i] - 1);
      adj[sent.heads[i] - 1].push_back(i);
    }
  }
  constexpr auto kUnset = std::numeric_limits<std::size_t>::max();
  std::vector<std::vector<std::size_t>> dist(n, std::vector<std::size_t>(n, kUnset));
  for (std::size_t src = 0; src < n; ++src) {
    std::queue<std::size_t> q;
    dist[src][src] = 0;
    q.push(src);
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop();
      for (std::size_t v : adj[u]) {
        if (dist[src][v] == kUnset) {
          dist[src][v] = dist[src][u] + 1;
          q.push(v);
        }
      }
    }
  }
  return dist;
}

std::size_t syntactic_distance(const DepSentence& sent, std::size_t l, std::size_t r) {
  if (l >= sent.size() || r >= sent.size()) throw ShapeError("word position out of range");
  if (l == r) throw ConfigError("syntactic distance needs two distinct words");
  return distance_matrix(sent)[l][r];
}

const char* pos_class_name(PosClass c) {
  switch (c) {
    case PosClass::open:
      return "open";
    case PosClass::closed:
      return "closed";
    case PosClass::excluded:
      return "excluded";
  }
  return "?";
}

namespace {
constexpr std::string_view kOpenTags[] = {"ADJ", "ADV", "INTJ", "NOUN", "PROPN", "VERB"};
constexpr std::string_view kClosedTags[] = {"ADP", "AUX",  "CCONJ", "DET",
                                            "NUM", "PART", "PRON",  "SCONJ"};
constexpr std::string_view kExcludedTags[] = {"PUNCT", "SYM", "X"};
}  // namespace

bool is_known_upos(std::string_view upos) {
  auto in = [&](const auto& list) { return std::find(std::begin(list), std::end(list), upos) != std::end(list); };
  return in(kOpenTags) || in(kClosedTags) || in(kExcludedTags);
}

PosClass pos_class(std::string_view upos) {
  auto in = [&](const auto& list) { return std::find(std::begin(list), std::end(list), upos) != std::end(list); };
  if (in(kOpenTags)) return PosClass::open;
  if (in(kClosedTags)) return PosClass::closed;
  return PosClass::excluded;
}

std::vector<TokenId> encode_sentence(const DepSentence& sent, const Vocab& vocab) {
  std::vector<TokenId> ids;
  ids.reserve(sent.size());
  for (const auto& w : sent.words) {
    auto id = vocab.find(w.form);
    if (!id) id = vocab.find(lowercase(w.form));
    ids.push_back(id.value_or(vocab.unknown_id()));
  }
  return ids;
}

StratifiedDiResult stratified_di(const ModelParams& params, const Vocab& vocab,
                                 const std::vector<DepSentence>& sentences,
                                 std::size_t max_seq_dist, std::size_t min_bin_count,
                                 const CdOptions& options) {
  StratifiedDiResult result;
  using Key = std::tuple<std::size_t, std::size_t, PosClass, PosClass>;
  std::map<Key, std::pair<double, std::size_t>> groups;
  std::map<std::size_t, std::pair<double, std::size_t>> by_seq;
  std::vector<std::string> unknown_tags;

  for (std::size_t si = 0; si < sentences.size(); ++si) {
    const DepSentence& sent = sentences[si];
    const std::vector<TokenId> ids = encode_sentence(sent, vocab);
    result.tokens += ids.size();
    for (TokenId id : ids) result.unknown_tokens += id == vocab.unknown_id();
    std::vector<PosClass> classes;
    for (const auto& w : sent.words) {
      if (!is_known_upos(w.upos) &&
          std::find(unknown_tags.begin(), unknown_tags.end(), w.upos) == unknown_tags.end()) {
        unknown_tags.push_back(w.upos);
      }
      classes.push_back(pos_class(w.upos));
    }
    const auto dist = distance_matrix(sent);

    // Single-word decompositions over the whole sentence, read at step r.
    std::vector<CdResult> singles(sent.size());
    std::vector<char> have(sent.size(), 0);
    auto single = [&](std::size_t p) -> const CdResult& {
      if (!have[p]) {
        singles[p] = contextual_decomposition(params, ids, FocusSpec({p}), options);
        have[p] = 1;
      }
      return singles[p];
    };

    for (std::size_t r = 1; r < sent.size(); ++r) {
      if (classes[r] == PosClass::excluded) continue;
      for (std::size_t l = r >= max_seq_dist ? r - max_seq_dist : 0; l < r; ++l) {
        if (classes[l] == PosClass::excluded) continue;
        ++result.eligible_pairs;
        const auto prefix = std::span<const TokenId>(ids).first(r + 1);
        const CdResult joint = contextual_decomposition(params, prefix, FocusSpec({l, r}), options);
        const DiResult d = di_from_relevant(single(l).states[r].h_rel, single(r).states[r].h_rel,
                                            joint.states.back().h_rel);
        if (d.degenerate()) {
          ++result.degenerate_pairs;
          continue;
        }
        WordPairRecord rec;
        rec.sentence = si;
        rec.l = l;
        rec.r = r;
        rec.seq_dist = r - l;
        rec.syn_dist = dist[l][r];
        rec.class_l = classes[l];
        rec.class_r = classes[r];
        rec.di_value = *d.value;
        auto& g = groups[Key{rec.seq_dist, rec.syn_dist, rec.class_l, rec.class_r}];
        g.first += rec.di_value;
        ++g.second;
        auto& s = by_seq[rec.seq_dist];
        s.first += rec.di_value;
        ++s.second;
        result.pairs.push_back(rec);
      }
    }
  }

  for (const auto& [key, acc] : groups) {
    StratifiedRow row{std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key),
                      acc.first / static_cast<double>(acc.second), acc.second};
    result.all_groups.push_back(row);
    if (acc.second >= min_bin_count) result.rows.push_back(row);
  }
  for (const auto& [seq, acc] : by_seq) {
    result.by_seq_dist.push_back(SeqDistRow{seq, acc.first / static_cast<double>(acc.second), acc.second});
  }
  for (const auto& tag : unknown_tags) {
    result.warnings.push_back("unknown UPOS tag '" + tag + "' treated as excluded");
  }
  return result;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("spearman inputs differ in length");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double mx = mean(rx);
  const double my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

std::vector<StratumTrend> syntactic_trends(const std::vector<StratifiedRow>& rows) {
  using Key = std::tuple<std::size_t, PosClass, PosClass>;
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> strata;
  for (const auto& r : rows) {
    auto& s = strata[Key{r.seq_dist, r.class_l, r.class_r}];
    s.first.push_back(static_cast<double>(r.syn_dist));
    s.second.push_back(r.mean_di);
  }
  std::vector<StratumTrend> out;
  for (const auto& [key, xy] : strata) {
    out.push_back(StratumTrend{std::get<0>(key), std::get<1>(key), std::get<2>(key),
                               xy.first.size(), spearman(xy.first, xy.second)});
  }
  return out;
}

}  // namespace cdlm
