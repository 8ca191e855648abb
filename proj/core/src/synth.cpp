#include "cdlm/synth.hpp"

#include "cdlm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

namespace cdlm {

namespace {

// Stream tags keep the background, lexicon, placement and test generators
// independent of each other.
enum : std::uint64_t {
  kBackgroundStream = 0xb6,
  kLexiconStream = 0x1e,
  kPlacementStream = 0x91,
  kTestStream = 0x7e,
};

std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

TokenId draw_sigma(std::mt19937_64& rng, std::size_t sigma) {
  std::uniform_int_distribution<TokenId> d(0, static_cast<TokenId>(sigma - 1));
  return d(rng);
}

Scaffold draw_kgram(std::mt19937_64& rng, std::size_t sigma, std::size_t k) {
  Scaffold s(k);
  for (auto& t : s) t = draw_sigma(rng, sigma);
  return s;
}

std::vector<TokenId> background_stream(std::uint64_t seed, std::size_t sigma, std::size_t len) {
  auto rng = make_rng({seed, kBackgroundStream});
  std::vector<TokenId> bg(len);
  for (auto& t : bg) t = draw_sigma(rng, sigma);
  return bg;
}

double log_kgram_space(std::size_t sigma, std::size_t k) {
  return static_cast<double>(k) * std::log(static_cast<double>(sigma));
}

std::vector<Scaffold> draw_lexicon(const SynthSpec& spec) {
  if (log_kgram_space(spec.sigma_size, spec.k) < std::log(static_cast<double>(spec.scaffold_vocab))) {
    throw ConfigError("|Sigma|^k is smaller than the requested number of scaffolds");
  }
  auto rng = make_rng({spec.seed, kLexiconStream, spec.k});
  std::set<Scaffold> seen;
  std::vector<Scaffold> lexicon;
  while (lexicon.size() < spec.scaffold_vocab) {
    Scaffold s = draw_kgram(rng, spec.sigma_size, spec.k);
    if (seen.insert(s).second) lexicon.push_back(std::move(s));
  }
  return lexicon;
}

struct Segment {
  bool rule = true;
  std::size_t scaffold_id = 0;
};

/// Inserts segments into `background` at uniformly drawn gaps, fills in the
/// annotations, then resamples background tokens that happen to complete a
/// lexicon k-gram outside any planted scaffold.
CorpusWithMeta assemble(const std::vector<TokenId>& background, std::vector<Segment> segments,
                        std::vector<Scaffold> lexicon, std::size_t sigma, std::size_t k,
                        std::mt19937_64& rng) {
  const SynthVocab ids{sigma};
  std::shuffle(segments.begin(), segments.end(), rng);
  std::uniform_int_distribution<std::size_t> gap_dist(0, background.size());
  std::vector<std::size_t> gaps(segments.size());
  for (auto& g : gaps) g = gap_dist(rng);
  std::sort(gaps.begin(), gaps.end());

  CorpusWithMeta out;
  out.sigma_size = sigma;
  out.k = k;
  std::vector<char> is_background;
  std::size_t planted_mass = 0;
  for (const auto& s : segments) planted_mass += s.rule ? k + 2 : k;
  out.tokens.reserve(background.size() + planted_mass);
  is_background.reserve(background.size() + planted_mass);
  std::vector<char> scaffold_start;

  std::size_t bg = 0;
  for (std::size_t si = 0; si < segments.size(); ++si) {
    for (; bg < gaps[si]; ++bg) {
      out.tokens.push_back(background[bg]);
      is_background.push_back(1);
    }
    const Segment& seg = segments[si];
    const Scaffold& q = lexicon[seg.scaffold_id];
    if (seg.rule) {
      RuleAnnotation r;
      r.rule_id = out.rules.size();
      r.alpha_pos = out.tokens.size();
      r.scaffold_start = r.alpha_pos + 1;
      r.scaffold_len = k;
      r.omega_pos = r.alpha_pos + k + 1;
      r.scaffold_id = seg.scaffold_id;
      out.rules.push_back(r);
      out.tokens.push_back(ids.alpha());
      is_background.push_back(0);
    } else {
      out.outside.push_back(OutsideOccurrence{out.tokens.size(), seg.scaffold_id});
    }
    for (TokenId t : q) {
      out.tokens.push_back(t);
      is_background.push_back(0);
    }
    if (seg.rule) {
      out.tokens.push_back(ids.omega());
      is_background.push_back(0);
    }
  }
  for (; bg < background.size(); ++bg) {
    out.tokens.push_back(background[bg]);
    is_background.push_back(1);
  }
  out.scaffold_lexicon = std::move(lexicon);

  if (k >= 2) {
    std::set<Scaffold> lex(out.scaffold_lexicon.begin(), out.scaffold_lexicon.end());
    std::vector<char> planted_start(out.tokens.size(), 0);
    for (const auto& r : out.rules) planted_start[r.scaffold_start] = 1;
    for (const auto& o : out.outside) planted_start[o.start] = 1;
    for (int pass = 0; pass < 100; ++pass) {
      bool changed = false;
      for (std::size_t p = 0; p + k <= out.tokens.size(); ++p) {
        if (planted_start[p]) continue;
        Scaffold window(out.tokens.begin() + static_cast<std::ptrdiff_t>(p),
                        out.tokens.begin() + static_cast<std::ptrdiff_t>(p + k));
        if (!lex.count(window)) continue;
        for (std::size_t q = p; q < p + k; ++q) {
          if (is_background[q]) {
            out.tokens[q] = draw_sigma(rng, sigma);
            changed = true;
            break;
          }
        }
      }
      if (!changed) break;
    }
  }
  return out;
}

void write_or_throw(std::ofstream& out, const std::filesystem::path& path) {
  if (!out) throw FormatError("cannot write " + path.string());
}

}  // namespace

const char* setting_name(ScaffoldSetting s) {
  return s == ScaffoldSetting::familiar ? "familiar" : "unfamiliar";
}

const char* domain_name(TestDomain d) { return d == TestDomain::in ? "in" : "out"; }

SynthSpec SynthSpec::full_scale() {
  SynthSpec s;
  s.sigma_size = 1000;
  s.corpus_len = 1000000;
  s.n = 1000;
  s.scaffold_vocab = 100;
  s.per_scaffold_rule_count = 10;
  s.outside_count = 1000;
  return s;
}

SynthSpec SynthSpec::desk_scale() { return SynthSpec{}; }

std::size_t SynthSpec::planted_tokens() const {
  std::size_t mass = n * (k + 2);
  if (setting == ScaffoldSetting::familiar) mass += scaffold_vocab * outside_count * k;
  return mass;
}

bool SynthSpec::feasible() const {
  return sigma_size >= 1 && k >= 1 && scaffold_vocab >= 1 &&
         n == scaffold_vocab * per_scaffold_rule_count && planted_tokens() <= corpus_len &&
         log_kgram_space(sigma_size, k) >= std::log(static_cast<double>(scaffold_vocab));
}

void SynthSpec::validate() const {
  if (sigma_size < 1) throw ConfigError("|Sigma| must be positive");
  if (k < 1) throw ConfigError("scaffold length k must be positive");
  if (scaffold_vocab < 1) throw ConfigError("scaffold_vocab must be positive");
  if (n != scaffold_vocab * per_scaffold_rule_count) {
    throw ConfigError("n must equal scaffold_vocab * per_scaffold_rule_count");
  }
  if (planted_tokens() > corpus_len) {
    throw ConfigError("planted material (" + std::to_string(planted_tokens()) +
                      " tokens) does not fit in corpus_len " + std::to_string(corpus_len));
  }
  if (log_kgram_space(sigma_size, k) < std::log(static_cast<double>(scaffold_vocab))) {
    throw ConfigError("|Sigma|^k is smaller than scaffold_vocab");
  }
}

double scale_to_fit(SynthSpec& spec) {
  if (spec.feasible()) return 1.0;
  const SynthSpec base = spec;
  auto scaled = [&](double f) {
    SynthSpec s = base;
    s.scaffold_vocab = std::max<std::size_t>(1, static_cast<std::size_t>(f * base.scaffold_vocab));
    s.outside_count = static_cast<std::size_t>(f * base.outside_count);
    s.n = s.scaffold_vocab * s.per_scaffold_rule_count;
    return s;
  };
  double lo = 0.0;
  double hi = 1.0;
  if (!scaled(lo).feasible()) throw ConfigError("synthetic spec cannot be scaled to fit");
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (scaled(mid).feasible() ? lo : hi) = mid;
  }
  spec = scaled(lo);
  return lo;
}

Vocab SynthVocab::vocab() const {
  std::vector<std::string> tokens;
  tokens.reserve(size());
  for (std::size_t i = 0; i < sigma_size; ++i) tokens.push_back("w" + std::to_string(i));
  tokens.emplace_back("<alpha>");
  tokens.emplace_back("<omega>");
  tokens.emplace_back(Vocab::kUnknown);
  return Vocab::from_tokens(std::move(tokens));
}

CorpusWithMeta generate_unfamiliar(const SynthSpec& spec) {
  SynthSpec s = spec;
  s.setting = ScaffoldSetting::unfamiliar;
  return generate_training(s);
}

CorpusWithMeta generate_familiar(const SynthSpec& spec) {
  SynthSpec s = spec;
  s.setting = ScaffoldSetting::familiar;
  return generate_training(s);
}

CorpusWithMeta generate_training(const SynthSpec& spec) {
  spec.validate();
  std::vector<Scaffold> lexicon = draw_lexicon(spec);
  std::vector<Segment> segments;
  for (std::size_t q = 0; q < spec.scaffold_vocab; ++q) {
    for (std::size_t r = 0; r < spec.per_scaffold_rule_count; ++r) segments.push_back({true, q});
    if (spec.setting == ScaffoldSetting::familiar) {
      for (std::size_t r = 0; r < spec.outside_count; ++r) segments.push_back({false, q});
    }
  }
  std::vector<TokenId> bg = background_stream(spec.seed, spec.sigma_size, spec.corpus_len);
  bg.resize(spec.corpus_len - spec.planted_tokens());
  auto rng = make_rng({spec.seed, kPlacementStream, spec.k, spec.n,
                       static_cast<std::uint64_t>(spec.setting)});
  return assemble(bg, std::move(segments), std::move(lexicon), spec.sigma_size, spec.k, rng);
}

CorpusWithMeta generate_test(const SynthSpec& spec, TestDomain domain, std::size_t test_len,
                             std::size_t test_n, std::span<const Scaffold> training_lexicon,
                             std::uint64_t seed) {
  const std::size_t k = spec.k;
  if (test_n * (k + 2) > test_len) throw ConfigError("test rules do not fit in test_len");
  if (domain == TestDomain::in && training_lexicon.empty()) {
    throw ConfigError("in-domain test set needs the training scaffold lexicon");
  }
  for (const auto& q : training_lexicon) {
    if (q.size() != k) throw ConfigError("training lexicon scaffold length differs from k");
  }
  auto rng = make_rng({seed, kTestStream, k, static_cast<std::uint64_t>(domain)});
  std::vector<Scaffold> lexicon;
  std::vector<Segment> segments;
  if (domain == TestDomain::in) {
    lexicon.assign(training_lexicon.begin(), training_lexicon.end());
    std::uniform_int_distribution<std::size_t> pick(0, lexicon.size() - 1);
    for (std::size_t r = 0; r < test_n; ++r) segments.push_back({true, pick(rng)});
  } else {
    std::set<Scaffold> train(training_lexicon.begin(), training_lexicon.end());
    for (std::size_t r = 0; r < test_n; ++r) {
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        Scaffold q = draw_kgram(rng, spec.sigma_size, k);
        if (train.count(q)) continue;
        segments.push_back({true, lexicon.size()});
        lexicon.push_back(std::move(q));
        placed = true;
      }
      if (!placed) throw ConfigError("could not draw an out-domain scaffold in 1000 attempts");
    }
  }
  std::vector<TokenId> bg(test_len - test_n * (k + 2));
  for (auto& t : bg) t = draw_sigma(rng, spec.sigma_size);
  // Segments are placed in draw order; assemble shuffles them again.
  return assemble(bg, std::move(segments), std::move(lexicon), spec.sigma_size, k, rng);
}

std::vector<CorpusWithMeta> rule_frequency_suite(const SynthSpec& base,
                                                 std::span<const std::size_t> n_values,
                                                 std::span<const std::size_t> k_values) {
  std::vector<CorpusWithMeta> suite;
  for (std::size_t n : n_values) {
    if (base.per_scaffold_rule_count == 0 || n % base.per_scaffold_rule_count != 0) {
      throw ConfigError("n = " + std::to_string(n) +
                        " is not a multiple of per_scaffold_rule_count");
    }
    for (std::size_t k : k_values) {
      SynthSpec s = base;
      s.setting = ScaffoldSetting::unfamiliar;
      s.n = n;
      s.k = k;
      s.scaffold_vocab = n / base.per_scaffold_rule_count;
      suite.push_back(generate_unfamiliar(s));
    }
  }
  return suite;
}

std::vector<std::string> check_corpus(const CorpusWithMeta& c) {
  std::vector<std::string> problems;
  const SynthVocab ids{c.sigma_size};
  std::vector<char> used(c.tokens.size(), 0);
  auto claim = [&](std::size_t start, std::size_t len, const std::string& what) {
    if (start + len > c.tokens.size()) {
      problems.push_back(what + " runs past the corpus end");
      return;
    }
    for (std::size_t p = start; p < start + len; ++p) {
      if (used[p]) problems.push_back(what + " overlaps planted material at " + std::to_string(p));
      used[p] = 1;
    }
  };
  auto matches = [&](std::size_t start, std::size_t id) {
    if (id >= c.scaffold_lexicon.size()) return false;
    const Scaffold& q = c.scaffold_lexicon[id];
    if (q.size() != c.k || start + c.k > c.tokens.size()) return false;
    return std::equal(q.begin(), q.end(), c.tokens.begin() + static_cast<std::ptrdiff_t>(start));
  };
  for (const auto& r : c.rules) {
    const std::string what = "rule " + std::to_string(r.rule_id);
    if (r.scaffold_start != r.alpha_pos + 1 || r.scaffold_len != c.k ||
        r.omega_pos != r.alpha_pos + c.k + 1) {
      problems.push_back(what + " has inconsistent offsets");
      continue;
    }
    claim(r.alpha_pos, c.k + 2, what);
    if (r.omega_pos >= c.tokens.size()) continue;
    if (c.tokens[r.alpha_pos] != ids.alpha()) problems.push_back(what + " lacks its open symbol");
    if (c.tokens[r.omega_pos] != ids.omega()) problems.push_back(what + " lacks its close symbol");
    if (!matches(r.scaffold_start, r.scaffold_id)) {
      problems.push_back(what + " scaffold differs from its lexicon entry");
    }
  }
  for (const auto& o : c.outside) {
    const std::string what = "outside scaffold at " + std::to_string(o.start);
    claim(o.start, c.k, what);
    if (!matches(o.start, o.scaffold_id)) problems.push_back(what + " differs from the lexicon");
    if (o.start > 0 && c.tokens[o.start - 1] == ids.alpha()) {
      problems.push_back(what + " follows the open symbol");
    }
    if (o.start + c.k < c.tokens.size() && c.tokens[o.start + c.k] == ids.omega()) {
      problems.push_back(what + " precedes the close symbol");
    }
  }
  std::size_t alphas = 0;
  std::size_t omegas = 0;
  for (TokenId t : c.tokens) {
    if (t == ids.alpha()) ++alphas;
    if (t == ids.omega()) ++omegas;
    if (t >= ids.size() || t == ids.unknown()) {
      problems.push_back("token outside the synthetic vocabulary");
      break;
    }
  }
  if (alphas != c.rules.size() || omegas != c.rules.size()) {
    problems.push_back("open/close symbols appear outside planted rules");
  }
  return problems;
}

double chance_scaffold_rate(const CorpusWithMeta& c) {
  if (c.tokens.size() < c.k || c.k == 0) return 0.0;
  std::set<Scaffold> lex(c.scaffold_lexicon.begin(), c.scaffold_lexicon.end());
  std::vector<char> planted(c.tokens.size(), 0);
  for (const auto& r : c.rules) planted[r.scaffold_start] = 1;
  for (const auto& o : c.outside) planted[o.start] = 1;
  std::size_t hits = 0;
  const std::size_t positions = c.tokens.size() - c.k + 1;
  for (std::size_t p = 0; p < positions; ++p) {
    if (planted[p]) continue;
    Scaffold w(c.tokens.begin() + static_cast<std::ptrdiff_t>(p),
               c.tokens.begin() + static_cast<std::ptrdiff_t>(p + c.k));
    if (lex.count(w)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(positions);
}

void write_corpus_tokens(const std::filesystem::path& path, const CorpusWithMeta& corpus,
                         const Vocab& vocab) {
  std::ofstream out(path);
  write_or_throw(out, path);
  for (TokenId t : corpus.tokens) out << vocab.token(t) << '\n';
  write_or_throw(out, path);
}

void write_annotations(const std::filesystem::path& path, const CorpusWithMeta& corpus) {
  std::ofstream out(path);
  write_or_throw(out, path);
  out << "rule_id,alpha_pos,scaffold_start,scaffold_len,omega_pos,scaffold_id\n";
  for (const auto& r : corpus.rules) {
    out << r.rule_id << ',' << r.alpha_pos << ',' << r.scaffold_start << ',' << r.scaffold_len
        << ',' << r.omega_pos << ',' << r.scaffold_id << '\n';
  }
  write_or_throw(out, path);
}

void write_lexicon(const std::filesystem::path& path, const CorpusWithMeta& corpus,
                   const Vocab& vocab) {
  std::ofstream out(path);
  write_or_throw(out, path);
  for (const auto& q : corpus.scaffold_lexicon) {
    for (std::size_t i = 0; i < q.size(); ++i) out << (i ? " " : "") << vocab.token(q[i]);
    out << '\n';
  }
  write_or_throw(out, path);
}

std::vector<std::string> read_token_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open corpus file: " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  return tokens;
}

}  // namespace cdlm
