#pragma once

#include "cdlm/cd.hpp"
#include "cdlm/config.hpp"
#include "cdlm/synth.hpp"
#include "cdlm/trainer.hpp"
#include "cdlm/treebank.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cdlm {

enum class ExperimentKind { longrange, rulefreq, gradprobe, treebank_di };

const char* kind_name(ExperimentKind kind);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::longrange;
  SynthSpec synth = SynthSpec::desk_scale();
  std::vector<std::size_t> k_values{2, 4, 8};
  std::vector<std::size_t> n_values{50, 200, 800};
  TrainConfig train;
  std::size_t hidden = 100;
  std::size_t embed = 0;  // 0 = same as hidden
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::filesystem::path out_dir = "out";
  std::size_t test_len = 10000;
  std::size_t test_n = 100;
  std::size_t cd_context = 8;  // background tokens kept before alpha in CD windows
  std::size_t probe_instances = 100;
  std::size_t probe_epoch = 0;  // 0 = final epoch
  std::size_t checkpoint_every = 0;  // epochs; 0 = final only
  std::size_t workers = 1;
  std::filesystem::path corpus;
  std::filesystem::path conllu;
  std::filesystem::path checkpoint;
  std::size_t max_seq_dist = 10;
  std::size_t min_bin_count = 100;
  double max_unknown_fraction = 0.5;
  CdOptions cd;

  ExperimentConfig();

  /// Defaults overridden by `values`. Unknown keys are a ConfigError.
  static ExperimentConfig from_config(ExperimentKind kind, const KeyValueConfig& values);

  /// Throws ConfigError on empty seeds, missing paths and invalid training
  /// or corpus settings.
  void validate() const;

  /// Effective settings as key/value text, in key order.
  std::vector<std::pair<std::string, std::string>> describe() const;

  Dims dims(std::size_t vocab_size) const;
};

/// Keys accepted by ExperimentConfig::from_config.
const std::vector<std::string>& config_keys();

struct RunStatus {
  std::string id;
  bool ok = true;
  std::size_t epochs_completed = 0;
  std::string error;
};

struct CurvePoint {
  ScaffoldSetting setting = ScaffoldSetting::unfamiliar;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  double epoch = 0.0;
  std::string eval_set;
  std::string metric;
  double value = 0.0;
};

struct LongrangeResult {
  std::vector<CurvePoint> points;
  std::vector<RunStatus> runs;
  std::vector<std::string> notes;

  /// (epoch, value) pairs of one curve, in epoch order.
  std::vector<std::pair<double, double>> curve(ScaffoldSetting setting, std::size_t k,
                                               std::uint64_t seed, const std::string& eval_set,
                                               const std::string& metric) const;
};

struct RulefreqRow {
  std::size_t n = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::string focus_kind;  // "alpha" or "scaffold"
  double probability = 0.0;
};

struct RulefreqResult {
  std::vector<RulefreqRow> rows;
  std::vector<RunStatus> runs;
  std::vector<std::string> notes;

  std::optional<double> probability(std::size_t n, std::size_t k, std::uint64_t seed,
                                    const std::string& focus_kind) const;
};

struct GradprobeRow {
  ScaffoldSetting setting = ScaffoldSetting::unfamiliar;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::size_t offset_d = 0;
  double mean_grad_norm = 0.0;
};

struct GradprobeResult {
  std::vector<GradprobeRow> rows;
  std::vector<RunStatus> runs;
  std::vector<std::string> notes;
};

/// Named metric values measured on the synthetic test sets at one point.
struct SyntheticMetric {
  std::string eval_set;
  std::string metric;
  double value = 0.0;
};

/// Test instance: tokens from cd_context before alpha through omega.
struct RuleInstance {
  std::vector<TokenId> window;
  std::size_t alpha = 0;  // position of alpha in window
  std::size_t k = 0;
};

std::vector<RuleInstance> rule_instances(const CorpusWithMeta& corpus, std::size_t context,
                                         std::size_t limit = 0);

/// Mean p(omega) at each rule's close position, streaming the whole corpus.
double mean_raw_omega_probability(const ModelParams& params, const CorpusWithMeta& corpus,
                                  TokenId omega);

/// Metrics on the in-domain set: raw_p_omega, cd_alpha_p_omega,
/// cd_scaffold_p_omega, incremental_cd_<i> for i in [0, k] and
/// di_alpha_scaffold. On the out-domain set: raw_p_omega,
/// cd_alpha_p_omega and cd_scaffold_p_omega.
std::vector<SyntheticMetric> evaluate_synthetic(const ModelParams& params,
                                                const CorpusWithMeta& in_domain,
                                                const CorpusWithMeta* out_domain, TokenId omega,
                                                std::size_t cd_context, const CdOptions& options);

std::string run_id(ScaffoldSetting setting, std::size_t k, std::uint64_t seed);

/// Checkpoint path of one longrange run at `epoch`.
std::filesystem::path longrange_checkpoint_path(const std::filesystem::path& out_dir,
                                                const std::string& id, std::size_t epoch);

LongrangeResult run_longrange(const ExperimentConfig& config);
RulefreqResult run_rulefreq(const ExperimentConfig& config);
GradprobeResult run_gradprobe(const ExperimentConfig& config);
StratifiedDiResult run_treebank_di(const ExperimentConfig& config);

/// Runs `count` independent jobs on up to `workers` threads. The first
/// exception thrown by a job is rethrown after all threads finish.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& job);

}  // namespace cdlm
