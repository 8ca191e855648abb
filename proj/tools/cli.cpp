#include "cli.hpp"

#include "cdlm/checkpoint.hpp"
#include "cdlm/csv.hpp"
#include "cdlm/di.hpp"
#include "cdlm/errors.hpp"
#include "cdlm/experiments.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

namespace cdlm::cli {

namespace fs = std::filesystem;

std::vector<std::size_t> parse_positions(const std::string& text) {
  std::set<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  auto number = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("bad position list '" + text + "'");
    }
    return static_cast<std::size_t>(std::stoull(s));
  };
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove(item.begin(), item.end(), ' '), item.end());
    if (item.empty()) continue;
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.insert(number(item));
    } else {
      const std::size_t a = number(item.substr(0, dash));
      const std::size_t b = number(item.substr(dash + 1));
      if (b < a) throw ConfigError("bad position range '" + item + "'");
      for (std::size_t p = a; p <= b; ++p) out.insert(p);
    }
  }
  return {out.begin(), out.end()};
}

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;
};

KeyValueConfig load_values(const Globals& g) {
  KeyValueConfig v = g.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(g.config);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    v.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (g.seed) v.set("seeds", std::to_string(*g.seed));
  if (!g.out_dir.empty()) v.set("out_dir", g.out_dir);
  return v;
}

ExperimentConfig make_config(const Globals& g, ExperimentKind kind) {
  return ExperimentConfig::from_config(kind, load_values(g));
}

std::vector<std::string> read_words(const fs::path& path) {
  if (path.extension() == ".conllu") {
    std::vector<std::string> words;
    for (const auto& s : read_conllu(path)) {
      for (const auto& w : s.words) words.push_back(w.form);
    }
    return words;
  }
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open corpus file: " + path.string());
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::vector<TokenId> encode_text(const Vocab& vocab, const std::string& text,
                                 const std::string& file) {
  const auto words = file.empty() ? split_words(text) : read_words(file);
  if (words.empty()) throw FormatError("no input tokens");
  return vocab.encode(words);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_synthgen(const Globals& g, std::ostream& out) {
  ExperimentConfig c = make_config(g, ExperimentKind::longrange);
  SynthSpec spec = c.synth;
  spec.seed = c.seeds.front();
  const SynthSpec requested = spec;
  const double scale = scale_to_fit(spec);
  spec.validate();
  const CorpusWithMeta train = generate_training(spec);
  const CorpusWithMeta in = generate_test(spec, TestDomain::in, c.test_len, c.test_n,
                                          train.scaffold_lexicon, spec.seed ^ 0x7e57);
  const CorpusWithMeta outd = generate_test(spec, TestDomain::out, c.test_len, c.test_n,
                                            train.scaffold_lexicon, spec.seed ^ 0x7e57);
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  const Vocab vocab = SynthVocab{spec.sigma_size}.vocab();
  write_corpus_tokens(dir / "train.txt", train, vocab);
  write_annotations(dir / "train_rules.csv", train);
  write_lexicon(dir / "lexicon.txt", train, vocab);
  write_corpus_tokens(dir / "test_in.txt", in, vocab);
  write_annotations(dir / "test_in_rules.csv", in);
  write_corpus_tokens(dir / "test_out.txt", outd, vocab);
  write_annotations(dir / "test_out_rules.csv", outd);
  nlohmann::json m;
  m["setting"] = setting_name(spec.setting);
  m["k"] = spec.k;
  m["seed"] = spec.seed;
  m["sigma_size"] = spec.sigma_size;
  m["corpus_len"] = spec.corpus_len;
  m["rule_count"] = spec.n;
  m["scaffold_vocab"] = spec.scaffold_vocab;
  m["outside_count"] = spec.outside_count;
  m["scale_factor"] = scale;
  m["requested_scaffold_vocab"] = requested.scaffold_vocab;
  m["requested_outside_count"] = requested.outside_count;
  m["chance_scaffold_rate"] = chance_scaffold_rate(train);
  m["problems"] = check_corpus(train);
  write_json(dir / "manifest.json", m);
  out << "wrote " << train.tokens.size() << " training tokens, " << train.rules.size()
      << " rules to " << dir.string() << '\n';
  if (scale != 1.0) out << "planted material scaled by " << scale << '\n';
  return kSuccess;
}

int cmd_train(const Globals& g, const std::string& corpus_arg, const std::string& valid,
              std::ostream& out) {
  ExperimentConfig c = make_config(g, ExperimentKind::longrange);
  const fs::path corpus = corpus_arg.empty() ? c.corpus : fs::path(corpus_arg);
  if (corpus.empty()) throw ConfigError("train needs --corpus or a corpus config key");
  c.train.validate();
  const auto words = read_words(corpus);
  const Vocab vocab = Vocab::from_corpus(words);
  const std::vector<TokenId> ids = vocab.encode(words);
  std::vector<TokenId> valid_ids;
  if (!valid.empty()) valid_ids = vocab.encode(read_words(valid));
  ModelParams params = init_params(c.seeds.front(), c.dims(vocab.size()));
  TrainConfig tc = c.train;
  tc.seed = c.seeds.front();
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  auto on_eval = [&](const EvalPoint& p, const ModelParams& theta)
      -> std::optional<std::pair<std::string, double>> {
    if (p.epoch > 0 && p.batch == p.epoch_batches && c.checkpoint_every != 0 &&
        p.epoch % c.checkpoint_every == 0) {
      save_checkpoint(dir / ("model_epoch" + std::to_string(p.epoch) + ".ckpt"), vocab, theta);
    }
    if (valid_ids.size() < 2) return std::nullopt;
    return std::make_pair(std::string("valid_perplexity"), perplexity(theta, valid_ids));
  };
  const TrainResult r = train(params, ids, tc, on_eval);
  CsvTable log({"epoch", "batch", "train_loss", "eval_metric_name", "eval_metric_value",
                "wall_seconds"});
  for (const auto& row : r.log) {
    log.add_row({std::to_string(row.epoch), std::to_string(row.batch), format_double(row.train_loss),
                 row.eval_metric_name,
                 row.eval_metric_name.empty() ? "" : format_double(row.eval_metric_value),
                 format_double(row.wall_seconds)});
  }
  log.write(dir / "trainlog.csv");
  const fs::path ckpt = dir / ("model_epoch" + std::to_string(tc.epochs) + ".ckpt");
  save_checkpoint(ckpt, vocab, params);
  out << "trained " << r.steps << " steps on " << ids.size() << " tokens (vocabulary "
      << vocab.size() << "); final loss " << r.log.back().train_loss << "; checkpoint "
      << ckpt.string() << '\n';
  return kSuccess;
}

int cmd_cd(const Globals& g, const std::string& checkpoint, const std::string& text,
           const std::string& file, const std::string& focus, std::optional<std::size_t> timestep,
           std::size_t top, std::ostream& out) {
  const ExperimentConfig c = make_config(g, ExperimentKind::longrange);
  const Model m = load_checkpoint(checkpoint);
  const auto ids = encode_text(m.vocab, text, file);
  const FocusSpec f(parse_positions(focus));
  if (!f.empty() && f.max() >= ids.size()) throw ConfigError("focus position past the input");
  const std::size_t t = timestep.value_or(ids.size() - 1);
  if (t >= ids.size()) throw ConfigError("timestep past the input");
  const CdResult r = contextual_decomposition(m.params, ids, f, c.cd);
  const DecompLogits& lg = r.logits[t];
  const Vector p_rel = relevant_probability(lg);
  std::vector<std::size_t> order(static_cast<std::size_t>(lg.v_rel.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return lg.v_rel(static_cast<Eigen::Index>(a)) > lg.v_rel(static_cast<Eigen::Index>(b));
  });
  order.resize(std::min(top, order.size()));
  CsvTable table({"timestep", "token", "v_rel", "v_irrel", "p_relevant"});
  for (std::size_t id : order) {
    const auto e = static_cast<Eigen::Index>(id);
    table.add_row({std::to_string(t), m.vocab.token(static_cast<TokenId>(id)),
                   format_double(lg.v_rel(e)), format_double(lg.v_irrel(e)),
                   format_double(p_rel(e))});
  }
  out << table.str();
  return kSuccess;
}

int cmd_di(const Globals& g, const std::string& checkpoint, const std::string& text,
           const std::string& file, const std::string& a, const std::string& b, bool all_pairs,
           std::ostream& out) {
  const ExperimentConfig c = make_config(g, ExperimentKind::longrange);
  const Model m = load_checkpoint(checkpoint);
  const auto ids = encode_text(m.vocab, text, file);
  CsvTable table({"a", "b", "timestep", "di", "norm_union"});
  auto emit = [&](const FocusSpec& fa, const FocusSpec& fb) {
    const DiResult r = di(m.params, ids, fa, fb, c.cd);
    auto text_of = [](const FocusSpec& f) {
      std::string s;
      for (std::size_t p : f.positions()) s += (s.empty() ? "" : " ") + std::to_string(p);
      return s;
    };
    table.add_row({text_of(fa), text_of(fb), std::to_string(r.timestep),
                   r.value ? format_double(*r.value) : "nan", format_double(r.norm_union)});
  };
  if (all_pairs) {
    for (std::size_t l = 0; l < ids.size(); ++l) {
      for (std::size_t r = l + 1; r < ids.size() && r - l <= c.max_seq_dist; ++r) {
        emit(FocusSpec({l}), FocusSpec({r}));
      }
    }
  } else {
    emit(FocusSpec(parse_positions(a)), FocusSpec(parse_positions(b)));
  }
  out << table.str();
  return kSuccess;
}

int cmd_longrange(const Globals& g, std::ostream& out) {
  const LongrangeResult r = run_longrange(make_config(g, ExperimentKind::longrange));
  std::size_t aborted = 0;
  for (const auto& s : r.runs) aborted += s.ok ? 0 : 1;
  out << "longrange: " << r.runs.size() << " runs, " << aborted << " aborted, "
      << r.points.size() << " curve points\n";
  return aborted ? kNumerical : kSuccess;
}

int cmd_rulefreq(const Globals& g, std::ostream& out) {
  const RulefreqResult r = run_rulefreq(make_config(g, ExperimentKind::rulefreq));
  std::size_t aborted = 0;
  for (const auto& s : r.runs) aborted += s.ok ? 0 : 1;
  out << "rulefreq: " << r.runs.size() << " runs, " << aborted << " aborted, " << r.rows.size()
      << " rows\n";
  return aborted ? kNumerical : kSuccess;
}

int cmd_gradprobe(const Globals& g, std::ostream& out) {
  const GradprobeResult r = run_gradprobe(make_config(g, ExperimentKind::gradprobe));
  std::size_t aborted = 0;
  for (const auto& s : r.runs) aborted += s.ok ? 0 : 1;
  out << "gradprobe: " << r.runs.size() << " runs, " << aborted << " aborted, " << r.rows.size()
      << " rows\n";
  return aborted ? kNumerical : kSuccess;
}

int cmd_treebank(const Globals& g, const std::string& conllu, const std::string& checkpoint,
                 std::ostream& out) {
  KeyValueConfig v = load_values(g);
  if (!conllu.empty()) v.set("conllu", conllu);
  if (!checkpoint.empty()) v.set("checkpoint", checkpoint);
  const StratifiedDiResult r =
      run_treebank_di(ExperimentConfig::from_config(ExperimentKind::treebank_di, v));
  out << "treebank-di: " << r.pairs.size() << " pairs, " << r.rows.size() << " bins kept of "
      << r.all_groups.size() << ", " << r.unknown_tokens << "/" << r.tokens
      << " unknown tokens\n";
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contextual decomposition and interdependence for LSTM language models", "cdlm"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "single seed, replaces the seeds list");
  app.add_option("--out-dir", g.out_dir, "output directory");
  app.add_option("--set", g.overrides, "config override key=value (repeatable)");

  auto* synthgen = app.add_subcommand("synthgen", "generate a synthetic rule corpus and test sets");

  auto* train_cmd = app.add_subcommand("train", "train an LSTM language model on a token file");
  std::string corpus, valid;
  train_cmd->add_option("--corpus", corpus, "whitespace-separated tokens or .conllu");
  train_cmd->add_option("--valid", valid, "validation corpus for perplexity");

  std::string checkpoint, text, file, focus, set_a, set_b;
  std::optional<std::size_t> timestep;
  std::size_t top = 10;
  bool all_pairs = false;
  auto* cd_cmd = app.add_subcommand("cd", "decompose the logits for a focus set");
  cd_cmd->add_option("--checkpoint", checkpoint)->required();
  cd_cmd->add_option("--text", text, "input tokens separated by spaces");
  cd_cmd->add_option("--file", file, "input token file");
  cd_cmd->add_option("--focus", focus, "positions, e.g. 0,2-4")->required();
  cd_cmd->add_option("--timestep", timestep, "defaults to the last token");
  cd_cmd->add_option("--top", top, "rows to print");

  auto* di_cmd = app.add_subcommand("di-pairs", "interdependence between two word sets");
  di_cmd->add_option("--checkpoint", checkpoint)->required();
  di_cmd->add_option("--text", text);
  di_cmd->add_option("--file", file);
  di_cmd->add_option("-a,--a", set_a, "positions of the first set");
  di_cmd->add_option("-b,--b", set_b, "positions of the second set");
  di_cmd->add_flag("--all-pairs", all_pairs, "every single-token pair within max_seq_dist");

  auto* lr = app.add_subcommand("exp-longrange", "familiar vs unfamiliar scaffold training curves");
  auto* rf = app.add_subcommand("exp-rulefreq", "rule frequency and length sweep");
  auto* gp = app.add_subcommand("exp-gradprobe", "gradient magnitude through scaffolds");
  std::string conllu;
  auto* tb = app.add_subcommand("treebank-di", "DI by syntactic distance on a treebank");
  tb->add_option("--conllu", conllu);
  tb->add_option("--checkpoint", checkpoint);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "cdlm: " << e.what() << '\n';
    if (e.get_exit_code() == 0) return kSuccess;
    err << "run 'cdlm --help' for usage\n";
    return kUsage;
  }

  try {
    if (synthgen->parsed()) return cmd_synthgen(g, out);
    if (train_cmd->parsed()) return cmd_train(g, corpus, valid, out);
    if (cd_cmd->parsed()) {
      if (text.empty() == file.empty()) throw ConfigError("cd needs exactly one of --text, --file");
      return cmd_cd(g, checkpoint, text, file, focus, timestep, top, out);
    }
    if (di_cmd->parsed()) {
      if (text.empty() == file.empty()) {
        throw ConfigError("di-pairs needs exactly one of --text, --file");
      }
      if (!all_pairs && (set_a.empty() || set_b.empty())) {
        throw ConfigError("di-pairs needs -a and -b, or --all-pairs");
      }
      return cmd_di(g, checkpoint, text, file, set_a, set_b, all_pairs, out);
    }
    if (lr->parsed()) return cmd_longrange(g, out);
    if (rf->parsed()) return cmd_rulefreq(g, out);
    if (gp->parsed()) return cmd_gradprobe(g, out);
    if (tb->parsed()) return cmd_treebank(g, conllu, checkpoint, out);
  } catch (const ConfigError& e) {
    err << "cdlm: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    err << "cdlm: numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    err << "cdlm: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "cdlm: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace cdlm::cli
