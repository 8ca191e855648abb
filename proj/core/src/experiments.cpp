#include "cdlm/experiments.hpp"

#include "cdlm/checkpoint.hpp"
#include "cdlm/csv.hpp"
#include "cdlm/di.hpp"
#include "cdlm/errors.hpp"
#include "cdlm/svg.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace cdlm {

namespace fs = std::filesystem;

const char* kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::longrange: return "longrange";
    case ExperimentKind::rulefreq: return "rulefreq";
    case ExperimentKind::gradprobe: return "gradprobe";
    case ExperimentKind::treebank_di: return "treebank-di";
  }
  return "?";
}

ExperimentConfig::ExperimentConfig() {
  train.epochs = 20;
  train.bptt_window = 35;
  train.batch_size = 20;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "batch_size",      "bptt_window",     "cd_context",
      "cd_rule",         "checkpoint",      "checkpoint_every",
      "clip_threshold",  "conllu",          "corpus",
      "corpus_len",      "embed",           "epochs",
      "eval_interval",   "hidden",          "k",
      "k_values",        "learning_rate",   "max_seq_dist",
      "max_unknown_fraction", "min_bin_count", "n_values",
      "out_dir",         "outside_count",   "per_scaffold_rule_count",
      "probe_epoch",     "probe_instances", "rule_count",
      "scaffold_vocab",  "seeds",           "setting",
      "sigma_size",      "test_len",        "test_n",
      "workers"};
  return keys;
}

ExperimentConfig ExperimentConfig::from_config(ExperimentKind kind, const KeyValueConfig& v) {
  const auto& keys = config_keys();
  for (const auto& [key, value] : v.values()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  ExperimentConfig c;
  c.kind = kind;
  auto& s = c.synth;
  s.sigma_size = v.get_size("sigma_size", s.sigma_size);
  s.corpus_len = v.get_size("corpus_len", s.corpus_len);
  s.scaffold_vocab = v.get_size("scaffold_vocab", s.scaffold_vocab);
  s.per_scaffold_rule_count = v.get_size("per_scaffold_rule_count", s.per_scaffold_rule_count);
  s.n = v.get_size("rule_count", s.scaffold_vocab * s.per_scaffold_rule_count);
  s.outside_count = v.get_size("outside_count", s.outside_count);
  s.k = v.get_size("k", s.k);
  const std::string setting = v.get_string("setting", "unfamiliar");
  if (setting == "familiar") {
    s.setting = ScaffoldSetting::familiar;
  } else if (setting == "unfamiliar") {
    s.setting = ScaffoldSetting::unfamiliar;
  } else {
    throw ConfigError("setting must be familiar or unfamiliar, got '" + setting + "'");
  }
  c.k_values = v.get_size_list("k_values", c.k_values);
  c.n_values = v.get_size_list("n_values", c.n_values);
  auto& t = c.train;
  t.learning_rate = v.get_double("learning_rate", t.learning_rate);
  t.clip_threshold = v.get_double("clip_threshold", t.clip_threshold);
  t.epochs = v.get_size("epochs", t.epochs);
  t.bptt_window = v.get_size("bptt_window", t.bptt_window);
  t.batch_size = v.get_size("batch_size", t.batch_size);
  t.eval_interval = v.get_size("eval_interval", t.eval_interval);
  c.hidden = v.get_size("hidden", c.hidden);
  c.embed = v.get_size("embed", c.embed);
  if (v.has("seeds")) {
    c.seeds.clear();
    for (std::size_t seed : v.get_size_list("seeds", {})) c.seeds.push_back(seed);
  }
  c.out_dir = v.get_string("out_dir", c.out_dir.string());
  c.test_len = v.get_size("test_len", c.test_len);
  c.test_n = v.get_size("test_n", c.test_n);
  c.cd_context = v.get_size("cd_context", c.cd_context);
  c.probe_instances = v.get_size("probe_instances", c.probe_instances);
  c.probe_epoch = v.get_size("probe_epoch", c.probe_epoch);
  c.checkpoint_every = v.get_size("checkpoint_every", c.checkpoint_every);
  c.workers = v.get_size("workers", c.workers);
  c.corpus = v.get_string("corpus", "");
  c.conllu = v.get_string("conllu", "");
  c.checkpoint = v.get_string("checkpoint", "");
  c.max_seq_dist = v.get_size("max_seq_dist", c.max_seq_dist);
  c.min_bin_count = v.get_size("min_bin_count", c.min_bin_count);
  c.max_unknown_fraction = v.get_double("max_unknown_fraction", c.max_unknown_fraction);
  const std::string rule = v.get_string("cd_rule", "carrier");
  if (rule == "carrier") {
    c.cd.rule = ProductRule::carrier;
  } else if (rule == "strict") {
    c.cd.rule = ProductRule::strict;
  } else {
    throw ConfigError("cd_rule must be carrier or strict, got '" + rule + "'");
  }
  return c;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (hidden == 0) throw ConfigError("hidden must be positive");
  if (workers == 0) throw ConfigError("workers must be positive");
  auto require_file = [](const fs::path& p, const char* key) {
    if (p.empty()) throw ConfigError(std::string(key) + " is required");
    if (!fs::exists(p)) throw ConfigError(std::string(key) + " does not exist: " + p.string());
  };
  switch (kind) {
    case ExperimentKind::longrange:
    case ExperimentKind::gradprobe:
    case ExperimentKind::rulefreq: {
      if (k_values.empty()) throw ConfigError("k_values must not be empty");
      for (std::size_t k : k_values) {
        if (k == 0) throw ConfigError("k_values entries must be positive");
        if (train.bptt_window < k + 2) {
          throw ConfigError("bptt_window must be at least k + 2 so a rule fits in one window");
        }
      }
      if (kind == ExperimentKind::rulefreq) {
        if (n_values.empty()) throw ConfigError("n_values must not be empty");
        for (std::size_t n : n_values) {
          if (n == 0 || n % synth.per_scaffold_rule_count != 0) {
            throw ConfigError("n_values entries must be positive multiples of "
                              "per_scaffold_rule_count");
          }
        }
      }
      if (test_n == 0) throw ConfigError("test_n must be positive");
      break;
    }
    case ExperimentKind::treebank_di:
      require_file(conllu, "conllu");
      require_file(checkpoint, "checkpoint");
      if (max_unknown_fraction < 0.0 || max_unknown_fraction > 1.0) {
        throw ConfigError("max_unknown_fraction must lie in [0, 1]");
      }
      break;
  }
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::describe() const {
  auto list = [](const auto& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(xs[i]);
    }
    return out;
  };
  std::vector<std::pair<std::string, std::string>> d{
      {"batch_size", std::to_string(train.batch_size)},
      {"bptt_window", std::to_string(train.bptt_window)},
      {"cd_context", std::to_string(cd_context)},
      {"cd_rule", cd.rule == ProductRule::carrier ? "carrier" : "strict"},
      {"checkpoint", checkpoint.string()},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"clip_threshold", format_double(train.clip_threshold)},
      {"conllu", conllu.string()},
      {"corpus", corpus.string()},
      {"corpus_len", std::to_string(synth.corpus_len)},
      {"embed", std::to_string(embed)},
      {"epochs", std::to_string(train.epochs)},
      {"eval_interval", std::to_string(train.eval_interval)},
      {"hidden", std::to_string(hidden)},
      {"k", std::to_string(synth.k)},
      {"k_values", list(k_values)},
      {"learning_rate", format_double(train.learning_rate)},
      {"max_seq_dist", std::to_string(max_seq_dist)},
      {"max_unknown_fraction", format_double(max_unknown_fraction)},
      {"min_bin_count", std::to_string(min_bin_count)},
      {"n_values", list(n_values)},
      {"out_dir", out_dir.string()},
      {"outside_count", std::to_string(synth.outside_count)},
      {"per_scaffold_rule_count", std::to_string(synth.per_scaffold_rule_count)},
      {"probe_epoch", std::to_string(probe_epoch)},
      {"probe_instances", std::to_string(probe_instances)},
      {"rule_count", std::to_string(synth.n)},
      {"scaffold_vocab", std::to_string(synth.scaffold_vocab)},
      {"seeds", list(seeds)},
      {"setting", setting_name(synth.setting)},
      {"sigma_size", std::to_string(synth.sigma_size)},
      {"test_len", std::to_string(test_len)},
      {"test_n", std::to_string(test_n)},
      {"workers", std::to_string(workers)},
  };
  return d;
}

Dims ExperimentConfig::dims(std::size_t vocab_size) const {
  Dims d;
  d.vocab = vocab_size;
  d.hidden = hidden;
  d.embed = embed == 0 ? hidden : embed;
  return d;
}

std::vector<std::pair<double, double>> LongrangeResult::curve(ScaffoldSetting setting,
                                                              std::size_t k, std::uint64_t seed,
                                                              const std::string& eval_set,
                                                              const std::string& metric) const {
  std::vector<std::pair<double, double>> out;
  for (const auto& p : points) {
    if (p.setting == setting && p.k == k && p.seed == seed && p.eval_set == eval_set &&
        p.metric == metric) {
      out.emplace_back(p.epoch, p.value);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::optional<double> RulefreqResult::probability(std::size_t n, std::size_t k,
                                                  std::uint64_t seed,
                                                  const std::string& focus_kind) const {
  for (const auto& r : rows) {
    if (r.n == n && r.k == k && r.seed == seed && r.focus_kind == focus_kind) {
      return r.probability;
    }
  }
  return std::nullopt;
}

void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& job) {
  const std::size_t threads = std::max<std::size_t>(1, std::min(workers, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

std::vector<RuleInstance> rule_instances(const CorpusWithMeta& corpus, std::size_t context,
                                         std::size_t limit) {
  std::vector<RuleInstance> out;
  for (const auto& r : corpus.rules) {
    if (limit != 0 && out.size() == limit) break;
    const std::size_t start = r.alpha_pos - std::min(r.alpha_pos, context);
    RuleInstance inst;
    inst.window.assign(corpus.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                       corpus.tokens.begin() + static_cast<std::ptrdiff_t>(r.omega_pos + 1));
    inst.alpha = r.alpha_pos - start;
    inst.k = r.scaffold_len;
    out.push_back(std::move(inst));
  }
  return out;
}

double mean_raw_omega_probability(const ModelParams& params, const CorpusWithMeta& corpus,
                                  TokenId omega) {
  if (corpus.rules.empty()) throw FormatError("test corpus has no rule annotations");
  const std::vector<double> p = next_token_probabilities(params, corpus.tokens);
  double sum = 0.0;
  for (const auto& r : corpus.rules) {
    if (r.omega_pos == 0 || corpus.tokens[r.omega_pos] != omega) {
      throw FormatError("rule annotation does not point at a close symbol");
    }
    sum += p[r.omega_pos - 1];
  }
  return sum / static_cast<double>(corpus.rules.size());
}

namespace {

double omega_probability(const CdResult& cd, std::size_t t, TokenId omega) {
  return relevant_probability(cd.logits[t])(static_cast<Eigen::Index>(omega));
}

struct InstanceMetrics {
  double cd_alpha = 0.0;
  double cd_scaffold = 0.0;
  std::vector<double> incremental;  // i = 0..k
  std::optional<double> di;
};

InstanceMetrics measure_instance(const ModelParams& params, const RuleInstance& inst,
                                 TokenId omega, bool full, const CdOptions& options) {
  const std::size_t a = inst.alpha;
  const std::size_t k = inst.k;
  const std::size_t t = a + k;  // position predicting omega
  const std::span<const TokenId> prefix(inst.window.data(), t + 1);
  InstanceMetrics m;
  const FocusSpec fa({a});
  const FocusSpec fs = FocusSpec::range(a + 1, a + k);
  const CdResult ra = contextual_decomposition(params, prefix, fa, options);
  const CdResult rs = contextual_decomposition(params, prefix, fs, options);
  m.cd_alpha = omega_probability(ra, t, omega);
  m.cd_scaffold = omega_probability(rs, t, omega);
  if (!full) return m;
  m.incremental.push_back(m.cd_alpha);
  for (std::size_t i = 1; i <= k; ++i) {
    const CdResult ri = contextual_decomposition(params, prefix, FocusSpec::range(a, a + i), options);
    m.incremental.push_back(omega_probability(ri, t, omega));
    if (i == k) {
      const DiResult d = di_from_relevant(ra.states[t].h_rel, rs.states[t].h_rel,
                                          ri.states[t].h_rel);
      m.di = d.value;
    }
  }
  return m;
}

}  // namespace

std::vector<SyntheticMetric> evaluate_synthetic(const ModelParams& params,
                                                const CorpusWithMeta& in_domain,
                                                const CorpusWithMeta* out_domain, TokenId omega,
                                                std::size_t cd_context,
                                                const CdOptions& options) {
  std::vector<SyntheticMetric> out;
  auto run_set = [&](const CorpusWithMeta& corpus, const char* name, bool full) {
    out.push_back({name, "raw_p_omega", mean_raw_omega_probability(params, corpus, omega)});
    const auto instances = rule_instances(corpus, cd_context);
    double alpha = 0.0, scaffold = 0.0, di_sum = 0.0;
    std::size_t di_count = 0;
    std::vector<double> inc;
    for (const auto& inst : instances) {
      const InstanceMetrics m = measure_instance(params, inst, omega, full, options);
      alpha += m.cd_alpha;
      scaffold += m.cd_scaffold;
      if (full) {
        if (inc.empty()) inc.assign(m.incremental.size(), 0.0);
        for (std::size_t i = 0; i < inc.size(); ++i) inc[i] += m.incremental[i];
        if (m.di) {
          di_sum += *m.di;
          ++di_count;
        }
      }
    }
    const double n = static_cast<double>(instances.size());
    out.push_back({name, "cd_alpha_p_omega", alpha / n});
    out.push_back({name, "cd_scaffold_p_omega", scaffold / n});
    if (full) {
      for (std::size_t i = 0; i < inc.size(); ++i) {
        out.push_back({name, "incremental_cd_" + std::to_string(i), inc[i] / n});
      }
      out.push_back({name, "di_alpha_scaffold",
                     di_count ? di_sum / static_cast<double>(di_count)
                              : std::numeric_limits<double>::quiet_NaN()});
    }
  };
  run_set(in_domain, "in", true);
  if (out_domain) run_set(*out_domain, "out", false);
  return out;
}

std::string run_id(ScaffoldSetting setting, std::size_t k, std::uint64_t seed) {
  return std::string(setting_name(setting)) + "_k" + std::to_string(k) + "_s" +
         std::to_string(seed);
}

fs::path longrange_checkpoint_path(const fs::path& out_dir, const std::string& id,
                                   std::size_t epoch) {
  return out_dir / "checkpoints" / (id + "_epoch" + std::to_string(epoch) + ".ckpt");
}

namespace {

using nlohmann::json;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed: " + path.string());
}

json config_json(const ExperimentConfig& c) {
  json j = json::object();
  for (const auto& [k, v] : c.describe()) j[k] = v;
  return j;
}

json runs_json(const std::vector<RunStatus>& runs) {
  json arr = json::array();
  for (const auto& r : runs) {
    arr.push_back({{"id", r.id},
                   {"status", r.ok ? "ok" : "aborted"},
                   {"epochs_completed", r.epochs_completed},
                   {"error", r.error}});
  }
  return arr;
}

void write_manifest(const fs::path& dir, const ExperimentConfig& c,
                    const std::vector<RunStatus>& runs, const std::vector<std::string>& notes,
                    const std::vector<std::string>& artifacts, json extra = json::object()) {
  json m = json::object();
  m["experiment"] = kind_name(c.kind);
  m["config"] = config_json(c);
  m["runs"] = runs_json(runs);
  m["notes"] = notes;
  m["artifacts"] = artifacts;
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

CsvTable train_log_table(const TrainResult& r) {
  CsvTable t({"epoch", "batch", "train_loss", "eval_metric_name", "eval_metric_value",
              "wall_seconds"});
  for (const auto& row : r.log) {
    t.add_row({std::to_string(row.epoch), std::to_string(row.batch), format_double(row.train_loss),
               row.eval_metric_name,
               row.eval_metric_name.empty() ? "" : format_double(row.eval_metric_value),
               format_double(row.wall_seconds)});
  }
  return t;
}

/// Training corpus and test sets of one synthetic run.
struct SyntheticData {
  SynthSpec spec;
  double scale = 1.0;
  CorpusWithMeta train;
  CorpusWithMeta test_in;
  CorpusWithMeta test_out;
};

constexpr std::uint64_t kTestSeedSalt = 0x7e57;

SyntheticData make_synthetic(const ExperimentConfig& c, ScaffoldSetting setting, std::size_t k,
                             std::uint64_t seed, bool with_out = true) {
  SyntheticData d;
  d.spec = c.synth;
  d.spec.setting = setting;
  d.spec.k = k;
  d.spec.seed = seed;
  d.spec.n = d.spec.scaffold_vocab * d.spec.per_scaffold_rule_count;
  d.scale = scale_to_fit(d.spec);
  d.spec.validate();
  d.train = generate_training(d.spec);
  d.test_in = generate_test(d.spec, TestDomain::in, c.test_len, c.test_n, d.train.scaffold_lexicon,
                            seed ^ kTestSeedSalt);
  if (with_out) {
    d.test_out = generate_test(d.spec, TestDomain::out, c.test_len, c.test_n,
                               d.train.scaffold_lexicon, seed ^ kTestSeedSalt);
  }
  return d;
}

std::string scale_note(const std::string& id, const SyntheticData& d, const SynthSpec& requested) {
  std::ostringstream s;
  s << id << ": planted material scaled by " << format_double(d.scale) << " (scaffold_vocab "
    << requested.scaffold_vocab << " -> " << d.spec.scaffold_vocab << ", outside_count "
    << requested.outside_count << " -> " << d.spec.outside_count << ")";
  return s.str();
}

double eval_epoch(const EvalPoint& p) {
  if (p.epoch == 0 || p.epoch_batches == 0) return static_cast<double>(p.epoch);
  return static_cast<double>(p.epoch - 1) +
         static_cast<double>(p.batch) / static_cast<double>(p.epoch_batches);
}

bool save_this_epoch(const ExperimentConfig& c, const EvalPoint& p) {
  if (p.batch != p.epoch_batches && p.epoch != 0) return false;
  if (p.epoch == c.train.epochs) return true;
  return c.checkpoint_every != 0 && p.epoch % c.checkpoint_every == 0;
}

struct LongrangeJob {
  ScaffoldSetting setting;
  std::size_t k;
  std::uint64_t seed;
};

std::vector<SvgSeries> mean_series(const LongrangeResult& r, std::size_t k,
                                   const ExperimentConfig& c, const std::string& eval_set,
                                   const std::string& metric) {
  std::vector<SvgSeries> out;
  for (ScaffoldSetting s : {ScaffoldSetting::unfamiliar, ScaffoldSetting::familiar}) {
    std::map<double, std::pair<double, std::size_t>> acc;
    for (std::uint64_t seed : c.seeds) {
      for (const auto& [e, v] : r.curve(s, k, seed, eval_set, metric)) {
        if (!std::isfinite(v)) continue;
        acc[e].first += v;
        acc[e].second += 1;
      }
    }
    SvgSeries series;
    series.label = setting_name(s);
    series.dashed = s == ScaffoldSetting::familiar;
    for (const auto& [e, sv] : acc) {
      series.points.emplace_back(e, sv.first / static_cast<double>(sv.second));
    }
    out.push_back(std::move(series));
  }
  return out;
}

}  // namespace

LongrangeResult run_longrange(const ExperimentConfig& c) {
  c.validate();
  const fs::path dir = c.out_dir;
  fs::create_directories(dir / "runs");
  fs::create_directories(dir / "checkpoints");
  std::vector<LongrangeJob> jobs;
  for (std::size_t k : c.k_values) {
    for (std::uint64_t seed : c.seeds) {
      for (ScaffoldSetting s : {ScaffoldSetting::unfamiliar, ScaffoldSetting::familiar}) {
        jobs.push_back({s, k, seed});
      }
    }
  }
  std::vector<std::vector<CurvePoint>> points(jobs.size());
  std::vector<RunStatus> status(jobs.size());
  std::vector<std::vector<std::string>> notes(jobs.size());

  parallel_for(jobs.size(), c.workers, [&](std::size_t j) {
    const LongrangeJob& job = jobs[j];
    const std::string id = run_id(job.setting, job.k, job.seed);
    RunStatus& st = status[j];
    st.id = id;
    SyntheticData data = make_synthetic(c, job.setting, job.k, job.seed);
    if (data.scale != 1.0) notes[j].push_back(scale_note(id, data, c.synth));
    const SynthVocab sv{data.spec.sigma_size};
    const Vocab vocab = sv.vocab();
    ModelParams params = init_params(job.seed, c.dims(vocab.size()));
    TrainConfig tc = c.train;
    tc.seed = job.seed;
    auto on_eval = [&](const EvalPoint& p, const ModelParams& theta)
        -> std::optional<std::pair<std::string, double>> {
      const double epoch = eval_epoch(p);
      double in_raw = 0.0;
      for (const auto& m : evaluate_synthetic(theta, data.test_in, &data.test_out, sv.omega(),
                                              c.cd_context, c.cd)) {
        points[j].push_back({job.setting, job.k, job.seed, epoch, m.eval_set, m.metric, m.value});
        if (m.eval_set == "in" && m.metric == "raw_p_omega") in_raw = m.value;
      }
      if (save_this_epoch(c, p)) {
        save_checkpoint(longrange_checkpoint_path(dir, id, p.epoch), vocab, theta);
      }
      st.epochs_completed = p.epoch;
      return std::make_pair(std::string("in_raw_p_omega"), in_raw);
    };
    try {
      const TrainResult tr = train(params, data.train.tokens, tc, on_eval);
      train_log_table(tr).write(dir / "runs" / ("trainlog_" + id + ".csv"));
    } catch (const NumericalError& e) {
      st.ok = false;
      st.error = e.what();
    }
    CsvTable curve({"setting", "k", "seed", "epoch", "eval_set", "metric", "value"});
    for (const auto& p : points[j]) {
      curve.add_row({setting_name(p.setting), std::to_string(p.k), std::to_string(p.seed),
                     format_double(p.epoch), p.eval_set, p.metric, format_double(p.value)});
    }
    curve.write(dir / "runs" / ("curve_" + id + ".csv"));
  });

  LongrangeResult result;
  CsvTable merged({"setting", "k", "seed", "epoch", "eval_set", "metric", "value"});
  std::vector<std::string> artifacts{"longrange.csv"};
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (const auto& p : points[j]) {
      merged.add_row({setting_name(p.setting), std::to_string(p.k), std::to_string(p.seed),
                      format_double(p.epoch), p.eval_set, p.metric, format_double(p.value)});
      result.points.push_back(p);
    }
    result.runs.push_back(status[j]);
    for (auto& n : notes[j]) result.notes.push_back(n);
    artifacts.push_back("runs/curve_" + status[j].id + ".csv");
    if (status[j].ok) artifacts.push_back("runs/trainlog_" + status[j].id + ".csv");
  }
  merged.write(dir / "longrange.csv");

  for (std::size_t k : c.k_values) {
    const std::string ks = "k" + std::to_string(k);
    const std::vector<std::tuple<std::string, std::string, std::string, std::string>> charts{
        {"p_omega_in_" + ks, "in", "raw_p_omega", "P(omega), in-domain"},
        {"p_omega_out_" + ks, "out", "raw_p_omega", "P(omega), out-domain"},
        {"cd_alpha_out_" + ks, "out", "cd_alpha_p_omega", "CD P(omega | alpha), out-domain"},
        {"di_alpha_scaffold_" + ks, "in", "di_alpha_scaffold", "DI(alpha, scaffold), in-domain"},
    };
    for (const auto& [name, set, metric, title] : charts) {
      write_line_chart(dir / (name + ".svg"), title + ", k=" + std::to_string(k), "epoch", metric,
                       mean_series(result, k, c, set, metric));
      artifacts.push_back(name + ".svg");
    }
    // Incremental curve at the final epoch, averaged over seeds.
    std::vector<SvgSeries> inc;
    for (ScaffoldSetting s : {ScaffoldSetting::unfamiliar, ScaffoldSetting::familiar}) {
      SvgSeries series;
      series.label = setting_name(s);
      series.dashed = s == ScaffoldSetting::familiar;
      for (std::size_t i = 0; i <= k; ++i) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::uint64_t seed : c.seeds) {
          const auto cv = result.curve(s, k, seed, "in", "incremental_cd_" + std::to_string(i));
          if (!cv.empty()) {
            sum += cv.back().second;
            ++count;
          }
        }
        if (count) series.points.emplace_back(static_cast<double>(i), sum / static_cast<double>(count));
      }
      inc.push_back(std::move(series));
    }
    write_line_chart(dir / ("incremental_cd_" + ks + ".svg"),
                     "Incremental CD P(omega), final epoch, k=" + std::to_string(k),
                     "scaffold tokens in focus", "P(omega)", inc);
    artifacts.push_back("incremental_cd_" + ks + ".svg");
  }
  write_manifest(dir, c, result.runs, result.notes, artifacts);
  return result;
}

RulefreqResult run_rulefreq(const ExperimentConfig& c) {
  c.validate();
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  struct Job {
    std::uint64_t seed;
    std::size_t suite_index;
    std::size_t n, k;
  };
  std::vector<Job> jobs;
  for (std::uint64_t seed : c.seeds) {
    std::size_t idx = 0;
    for (std::size_t n : c.n_values) {
      for (std::size_t k : c.k_values) jobs.push_back({seed, idx++, n, k});
    }
  }
  std::vector<std::vector<RulefreqRow>> rows(jobs.size());
  std::vector<RunStatus> status(jobs.size());
  std::vector<std::vector<std::string>> notes(jobs.size());
  std::map<std::uint64_t, std::vector<CorpusWithMeta>> suites;
  for (std::uint64_t seed : c.seeds) {
    SynthSpec base = c.synth;
    base.seed = seed;
    base.setting = ScaffoldSetting::unfamiliar;
    suites[seed] = rule_frequency_suite(base, c.n_values, c.k_values);
  }

  parallel_for(jobs.size(), c.workers, [&](std::size_t j) {
    const Job& job = jobs[j];
    const std::string id = "n" + std::to_string(job.n) + "_k" + std::to_string(job.k) + "_s" +
                           std::to_string(job.seed);
    status[j].id = id;
    const CorpusWithMeta& corpus = suites.at(job.seed)[job.suite_index];
    SynthSpec spec = c.synth;
    spec.k = job.k;
    spec.seed = job.seed;
    spec.n = job.n;
    spec.scaffold_vocab = job.n / spec.per_scaffold_rule_count;
    const CorpusWithMeta test = generate_test(spec, TestDomain::in, c.test_len, c.test_n,
                                              corpus.scaffold_lexicon, job.seed ^ kTestSeedSalt);
    const SynthVocab sv{corpus.sigma_size};
    ModelParams params = init_params(job.seed, c.dims(sv.size()));
    TrainConfig tc = c.train;
    tc.seed = job.seed;
    try {
      const TrainResult tr = train(params, corpus.tokens, tc);
      status[j].epochs_completed = tc.epochs;
      train_log_table(tr).write(dir / ("trainlog_" + id + ".csv"));
    } catch (const NumericalError& e) {
      status[j].ok = false;
      status[j].error = e.what();
      return;
    }
    double alpha = 0.0, scaffold = 0.0;
    const auto instances = rule_instances(test, c.cd_context);
    for (const auto& inst : instances) {
      const InstanceMetrics m = measure_instance(params, inst, sv.omega(), false, c.cd);
      alpha += m.cd_alpha;
      scaffold += m.cd_scaffold;
    }
    const double n = static_cast<double>(instances.size());
    rows[j].push_back({job.n, job.k, job.seed, "alpha", alpha / n});
    rows[j].push_back({job.n, job.k, job.seed, "scaffold", scaffold / n});
  });

  RulefreqResult result;
  CsvTable table({"n", "k", "seed", "focus_kind", "probability"});
  std::vector<std::string> artifacts{"rulefreq.csv"};
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (const auto& r : rows[j]) {
      table.add_row({std::to_string(r.n), std::to_string(r.k), std::to_string(r.seed),
                     r.focus_kind, format_double(r.probability)});
      result.rows.push_back(r);
    }
    result.runs.push_back(status[j]);
    if (status[j].ok) artifacts.push_back("trainlog_" + status[j].id + ".csv");
  }
  table.write(dir / "rulefreq.csv");
  for (const std::string kind : {"alpha", "scaffold"}) {
    std::vector<SvgSeries> series;
    for (std::size_t k : c.k_values) {
      SvgSeries s;
      s.label = "k=" + std::to_string(k);
      for (std::size_t n : c.n_values) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::uint64_t seed : c.seeds) {
          if (auto p = result.probability(n, k, seed, kind)) {
            sum += *p;
            ++count;
          }
        }
        if (count) s.points.emplace_back(static_cast<double>(n), sum / static_cast<double>(count));
      }
      series.push_back(std::move(s));
    }
    write_line_chart(dir / ("rulefreq_" + kind + ".svg"), "P(omega) from " + kind + " in focus",
                     "rule occurrences n", "P(omega)", series);
    artifacts.push_back("rulefreq_" + kind + ".svg");
  }
  write_manifest(dir, c, result.runs, result.notes, artifacts);
  return result;
}

GradprobeResult run_gradprobe(const ExperimentConfig& c) {
  c.validate();
  const fs::path dir = c.out_dir;
  fs::create_directories(dir / "checkpoints");
  const std::size_t epoch = c.probe_epoch == 0 ? c.train.epochs : c.probe_epoch;
  std::vector<LongrangeJob> jobs;
  for (std::size_t k : c.k_values) {
    for (std::uint64_t seed : c.seeds) {
      for (ScaffoldSetting s : {ScaffoldSetting::unfamiliar, ScaffoldSetting::familiar}) {
        jobs.push_back({s, k, seed});
      }
    }
  }
  std::vector<std::vector<GradprobeRow>> rows(jobs.size());
  std::vector<RunStatus> status(jobs.size());
  std::vector<std::vector<std::string>> notes(jobs.size());

  parallel_for(jobs.size(), c.workers, [&](std::size_t j) {
    const LongrangeJob& job = jobs[j];
    const std::string id = run_id(job.setting, job.k, job.seed);
    status[j].id = id;
    SyntheticData data = make_synthetic(c, job.setting, job.k, job.seed, false);
    const SynthVocab sv{data.spec.sigma_size};
    const fs::path ckpt = longrange_checkpoint_path(dir, id, epoch);
    ModelParams params;
    if (fs::exists(ckpt)) {
      Model m = load_checkpoint(ckpt);
      if (m.vocab.size() != sv.size()) {
        throw FormatError("checkpoint " + ckpt.string() + " does not match the synthetic vocabulary");
      }
      params = std::move(m.params);
      notes[j].push_back(id + ": reused " + ckpt.filename().string());
    } else {
      params = init_params(job.seed, c.dims(sv.size()));
      TrainConfig tc = c.train;
      tc.epochs = epoch;
      tc.seed = job.seed;
      try {
        train(params, data.train.tokens, tc);
      } catch (const NumericalError& e) {
        status[j].ok = false;
        status[j].error = e.what();
        return;
      }
      save_checkpoint(ckpt, sv.vocab(), params);
      notes[j].push_back(id + ": trained " + std::to_string(epoch) + " epochs");
    }
    status[j].epochs_completed = epoch;
    const auto inst = rule_instances(data.test_in, c.cd_context, c.probe_instances);
    if (inst.empty()) throw FormatError(id + ": no rule annotations for the probe");
    std::vector<RuleWindow> windows;
    for (const auto& r : inst) windows.push_back({r.window, r.alpha, r.k});
    const GradientProbeReport rep = scaffold_gradient_probe(params, windows);
    for (const auto& [d, mean] : rep.offsets) {
      rows[j].push_back({job.setting, job.k, job.seed, d, mean});
    }
  });

  GradprobeResult result;
  CsvTable table({"setting", "k", "seed", "offset_d", "mean_grad_norm"});
  std::map<std::tuple<std::size_t, int, std::size_t>, std::pair<double, std::size_t>> avg;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (const auto& r : rows[j]) {
      table.add_row({setting_name(r.setting), std::to_string(r.k), std::to_string(r.seed),
                     std::to_string(r.offset_d), format_double(r.mean_grad_norm)});
      result.rows.push_back(r);
      auto& a = avg[{r.k, static_cast<int>(r.setting), r.offset_d}];
      a.first += r.mean_grad_norm;
      a.second += 1;
    }
    result.runs.push_back(status[j]);
    for (auto& n : notes[j]) result.notes.push_back(n);
  }
  table.write(dir / "gradprobe.csv");
  CsvTable mean({"setting", "k", "offset_d", "mean_grad_norm"});
  for (const auto& [key, v] : avg) {
    const auto& [k, s, d] = key;
    mean.add_row({setting_name(static_cast<ScaffoldSetting>(s)), std::to_string(k),
                  std::to_string(d), format_double(v.first / static_cast<double>(v.second))});
  }
  mean.write(dir / "gradprobe_mean.csv");
  std::vector<std::string> artifacts{"gradprobe.csv", "gradprobe_mean.csv"};
  for (std::size_t k : c.k_values) {
    std::vector<SvgSeries> series;
    for (ScaffoldSetting s : {ScaffoldSetting::unfamiliar, ScaffoldSetting::familiar}) {
      SvgSeries sr;
      sr.label = setting_name(s);
      sr.dashed = s == ScaffoldSetting::familiar;
      for (const auto& [key, v] : avg) {
        if (std::get<0>(key) == k && std::get<1>(key) == static_cast<int>(s)) {
          sr.points.emplace_back(static_cast<double>(std::get<2>(key)),
                                 v.first / static_cast<double>(v.second));
        }
      }
      series.push_back(std::move(sr));
    }
    const std::string name = "gradprobe_k" + std::to_string(k) + ".svg";
    write_line_chart(dir / name, "Mean |dE/dh| through the scaffold, k=" + std::to_string(k),
                     "offset d", "mean gradient norm", series);
    artifacts.push_back(name);
  }
  write_manifest(dir, c, result.runs, result.notes, artifacts);
  return result;
}

StratifiedDiResult run_treebank_di(const ExperimentConfig& c) {
  c.validate();
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  const Model model = load_checkpoint(c.checkpoint);
  const std::vector<DepSentence> sentences = read_conllu(c.conllu);
  std::size_t tokens = 0, unknown = 0;
  const TokenId unk = model.vocab.find(Vocab::kUnknown).value();
  for (const auto& s : sentences) {
    for (TokenId id : encode_sentence(s, model.vocab)) {
      ++tokens;
      if (id == unk) ++unknown;
    }
  }
  if (tokens > 0 &&
      static_cast<double>(unknown) > c.max_unknown_fraction * static_cast<double>(tokens)) {
    throw FormatError("treebank vocabulary mismatch: " + std::to_string(unknown) + " of " +
                      std::to_string(tokens) + " tokens map to " + std::string(Vocab::kUnknown));
  }
  StratifiedDiResult r =
      stratified_di(model.params, model.vocab, sentences, c.max_seq_dist, c.min_bin_count, c.cd);

  CsvTable strat({"seq_dist", "syn_dist", "class_l", "class_r", "mean_di", "count"});
  for (const auto& row : r.rows) {
    strat.add_row({std::to_string(row.seq_dist), std::to_string(row.syn_dist),
                   pos_class_name(row.class_l), pos_class_name(row.class_r),
                   format_double(row.mean_di), std::to_string(row.count)});
  }
  strat.write(dir / "treebank_di.csv");
  CsvTable seq({"seq_dist", "mean_di", "count"});
  for (const auto& row : r.by_seq_dist) {
    seq.add_row({std::to_string(row.seq_dist), format_double(row.mean_di),
                 std::to_string(row.count)});
  }
  seq.write(dir / "treebank_seqdist.csv");
  CsvTable trend({"seq_dist", "class_l", "class_r", "bins", "spearman"});
  for (const auto& t : syntactic_trends(r.rows)) {
    trend.add_row({std::to_string(t.seq_dist), pos_class_name(t.class_l), pos_class_name(t.class_r),
                   std::to_string(t.bins), format_double(t.spearman)});
  }
  trend.write(dir / "treebank_trends.csv");

  std::vector<SvgSeries> series(1);
  series[0].label = "all pairs";
  for (const auto& row : r.by_seq_dist) {
    series[0].points.emplace_back(static_cast<double>(row.seq_dist), row.mean_di);
  }
  write_line_chart(dir / "di_by_seq_dist.svg", "Mean DI by sequential distance", "sequential distance",
                   "mean DI", series);

  json extra = json::object();
  extra["tokens"] = r.tokens;
  extra["unknown_tokens"] = r.unknown_tokens;
  extra["eligible_pairs"] = r.eligible_pairs;
  extra["degenerate_pairs"] = r.degenerate_pairs;
  json skipped = json::array();
  for (const auto& g : r.all_groups) {
    if (g.count < c.min_bin_count) {
      skipped.push_back({{"seq_dist", g.seq_dist},
                         {"syn_dist", g.syn_dist},
                         {"class_l", pos_class_name(g.class_l)},
                         {"class_r", pos_class_name(g.class_r)},
                         {"count", g.count}});
    }
  }
  extra["skipped_bins"] = skipped;
  write_manifest(dir, c, {}, r.warnings,
                 {"treebank_di.csv", "treebank_seqdist.csv", "treebank_trends.csv", "di_by_seq_dist.svg"},
                 extra);
  return r;
}

}  // namespace cdlm
