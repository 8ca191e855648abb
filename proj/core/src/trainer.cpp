#include "cdlm/trainer.hpp"

#include "cdlm/errors.hpp"

#include <chrono>
#include <cmath>

namespace cdlm {

namespace {

template <class Blocks>
double blocks_norm(const Blocks& blocks) {
  double sum = 0.0;
  for (const auto& b : blocks) {
    for (double x : b) sum += x * x;
  }
  return std::sqrt(sum);
}

void sigmoid_inplace(Eigen::Block<Matrix> m) {
  m = (1.0 / (1.0 + (-m.array()).exp())).matrix();
}

struct BackpropOutput {
  GradientSet grads;
  double weighted_loss = 0.0;
  BatchState final_state;
  std::vector<Matrix> hidden_grads;
};

/// Shared forward/backward over B equal-length windows. weights(t, b) scales
/// -log p(windows[b][t + 1]) in the objective.
BackpropOutput backprop(const ModelParams& params, std::span<const std::vector<TokenId>> windows,
                        const BatchState& carried, const Matrix& weights, bool compute_grads,
                        bool record_hidden_grads) {
  const Eigen::Index B = static_cast<Eigen::Index>(windows.size());
  const Eigen::Index H = params.hidden();
  const Eigen::Index E = params.input_weights.cols();
  const Eigen::Index V = params.embedding.rows();
  if (B == 0) throw ShapeError("empty batch");
  const std::size_t len = windows[0].size();
  if (len < 2) throw ShapeError("a window needs at least two tokens");
  for (const auto& w : windows) {
    if (w.size() != len) throw ShapeError("batch windows must share one length");
    for (TokenId id : w) {
      if (id >= static_cast<std::size_t>(V)) throw ShapeError("token id outside vocabulary");
    }
  }
  if (carried.h.rows() != H || carried.h.cols() != B || carried.c.rows() != H ||
      carried.c.cols() != B) {
    throw ShapeError("carried state does not match d_h x batch");
  }
  const std::size_t T = len - 1;
  if (weights.rows() != static_cast<Eigen::Index>(T) || weights.cols() != B) {
    throw ShapeError("loss weights must be (T-1) x B");
  }

  std::vector<Matrix> xs(T), acts(T), cells(T + 1), hiddens(T + 1), tanh_cells(T), probs(T);
  cells[0] = carried.c;
  hiddens[0] = carried.h;
  double loss = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    Matrix& x = xs[t];
    x.resize(E, B);
    for (Eigen::Index b = 0; b < B; ++b) x.col(b) = params.embedding.row(windows[b][t]).transpose();
    Matrix& a = acts[t];
    a.noalias() = params.input_weights * x;
    a.noalias() += params.recurrent_weights * hiddens[t];
    a.colwise() += params.gate_bias;
    sigmoid_inplace(a.topRows(3 * H));
    a.bottomRows(H) = a.bottomRows(H).array().tanh().matrix();

    cells[t + 1] = (a.middleRows(H, H).array() * cells[t].array() +
                    a.topRows(H).array() * a.bottomRows(H).array())
                       .matrix();
    tanh_cells[t] = cells[t + 1].array().tanh().matrix();
    hiddens[t + 1] = (a.middleRows(2 * H, H).array() * tanh_cells[t].array()).matrix();

    Matrix& p = probs[t];
    p.noalias() = params.decoder * hiddens[t + 1];
    p.colwise() += params.decoder_bias;
    for (Eigen::Index b = 0; b < B; ++b) {
      auto col = p.col(b);
      const double shift = col.maxCoeff();
      col = (col.array() - shift).exp().matrix();
      const double z = col.sum();
      col /= z;
      const double w = weights(static_cast<Eigen::Index>(t), b);
      if (w != 0.0) loss -= w * std::log(col(windows[b][t + 1]));
    }
  }

  BackpropOutput out;
  out.weighted_loss = loss;
  out.final_state = BatchState{hiddens[T], cells[T]};
  if (!compute_grads) return out;

  GradientSet g = GradientSet::zeros_like(params);
  if (record_hidden_grads) out.hidden_grads.resize(T);
  Matrix dh_next = Matrix::Zero(H, B);
  Matrix dc_next = Matrix::Zero(H, B);
  Matrix dlogits(V, B), dh(H, B), dc(H, B), dpre(4 * H, B), dx(E, B);
  for (std::size_t tt = T; tt-- > 0;) {
    const auto t = tt;
    dlogits = probs[t];
    for (Eigen::Index b = 0; b < B; ++b) {
      dlogits(windows[b][t + 1], b) -= 1.0;
      dlogits.col(b) *= weights(static_cast<Eigen::Index>(t), b);
    }
    g.decoder.noalias() += dlogits * hiddens[t + 1].transpose();
    g.decoder_bias += dlogits.rowwise().sum();
    dh = dh_next;
    dh.noalias() += params.decoder.transpose() * dlogits;
    if (record_hidden_grads) out.hidden_grads[t] = dh;

    const Matrix& a = acts[t];
    const auto i = a.topRows(H).array();
    const auto f = a.middleRows(H, H).array();
    const auto o = a.middleRows(2 * H, H).array();
    const auto gg = a.bottomRows(H).array();
    const auto tc = tanh_cells[t].array();

    dc = (dc_next.array() + dh.array() * o * (1.0 - tc * tc)).matrix();
    dpre.topRows(H) = (dc.array() * gg * i * (1.0 - i)).matrix();
    dpre.middleRows(H, H) = (dc.array() * cells[t].array() * f * (1.0 - f)).matrix();
    dpre.middleRows(2 * H, H) = (dh.array() * tc * o * (1.0 - o)).matrix();
    dpre.bottomRows(H) = (dc.array() * i * (1.0 - gg * gg)).matrix();
    dc_next = (dc.array() * f).matrix();

    g.input_weights.noalias() += dpre * xs[t].transpose();
    g.recurrent_weights.noalias() += dpre * hiddens[t].transpose();
    g.gate_bias += dpre.rowwise().sum();
    dx.noalias() = params.input_weights.transpose() * dpre;
    for (Eigen::Index b = 0; b < B; ++b) g.embedding.row(windows[b][t]) += dx.col(b).transpose();
    dh_next.noalias() = params.recurrent_weights.transpose() * dpre;
  }
  out.grads = std::move(g);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(clip_threshold > 0.0)) throw ConfigError("clip_threshold must be > 0");
  if (bptt_window < 2) throw ConfigError("bptt_window must be >= 2");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

GradientSet GradientSet::zeros_like(const ModelParams& params) {
  GradientSet g;
  g.embedding = Matrix::Zero(params.embedding.rows(), params.embedding.cols());
  g.input_weights = Matrix::Zero(params.input_weights.rows(), params.input_weights.cols());
  g.recurrent_weights =
      Matrix::Zero(params.recurrent_weights.rows(), params.recurrent_weights.cols());
  g.gate_bias = Vector::Zero(params.gate_bias.size());
  g.decoder = Matrix::Zero(params.decoder.rows(), params.decoder.cols());
  g.decoder_bias = Vector::Zero(params.decoder_bias.size());
  return g;
}

std::array<std::span<double>, 6> GradientSet::blocks() {
  auto view = [](auto& m) { return std::span<double>(m.data(), static_cast<std::size_t>(m.size())); };
  return {view(embedding), view(input_weights), view(recurrent_weights),
          view(gate_bias), view(decoder),       view(decoder_bias)};
}

std::array<std::span<const double>, 6> GradientSet::blocks() const {
  auto view = [](const auto& m) {
    return std::span<const double>(m.data(), static_cast<std::size_t>(m.size()));
  };
  return {view(embedding), view(input_weights), view(recurrent_weights),
          view(gate_bias), view(decoder),       view(decoder_bias)};
}

double GradientSet::global_norm() const { return blocks_norm(blocks()); }

void GradientSet::scale(double factor) {
  for (auto b : blocks()) {
    for (double& x : b) x *= factor;
  }
}

bool GradientSet::all_finite() const {
  for (const auto& b : blocks()) {
    for (double x : b) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

double cross_entropy_loss(std::span<const Vector> logits, std::span<const TokenId> targets) {
  if (logits.size() != targets.size()) {
    throw ShapeError("logits and targets differ in length");
  }
  if (logits.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (targets[t] >= static_cast<std::size_t>(logits[t].size())) {
      throw ShapeError("target id outside vocabulary");
    }
    total += log_sum_exp(logits[t]) - logits[t](targets[t]);
  }
  return total / static_cast<double>(logits.size());
}

BatchState BatchState::zeros(Eigen::Index hidden, Eigen::Index batch) {
  return BatchState{Matrix::Zero(hidden, batch), Matrix::Zero(hidden, batch)};
}

BatchBpttResult bptt_gradients_batch(const ModelParams& params,
                                     std::span<const std::vector<TokenId>> windows,
                                     const BatchState& carried) {
  if (windows.empty() || windows[0].size() < 2) {
    throw ShapeError("bptt needs a non-empty window of at least two tokens");
  }
  const auto T = static_cast<Eigen::Index>(windows[0].size() - 1);
  const auto B = static_cast<Eigen::Index>(windows.size());
  const Matrix weights = Matrix::Constant(T, B, 1.0 / static_cast<double>(T * B));
  BackpropOutput r = backprop(params, windows, carried, weights, true, false);
  return BatchBpttResult{std::move(r.grads), r.weighted_loss, std::move(r.final_state)};
}

BpttResult bptt_gradients(const ModelParams& params, std::span<const TokenId> window,
                          const LstmState& carried) {
  if (window.size() < 2) throw ShapeError("bptt needs a window of at least two tokens");
  std::vector<std::vector<TokenId>> one{std::vector<TokenId>(window.begin(), window.end())};
  BatchState state{carried.h, carried.c};
  BatchBpttResult r = bptt_gradients_batch(params, one, state);
  return BpttResult{std::move(r.grads), r.loss,
                    LstmState{r.final_state.h.col(0), r.final_state.c.col(0)}};
}

ClipReport clip_gradients(GradientSet& grads, double clip) {
  if (!(clip > 0.0)) throw ConfigError("clip threshold must be > 0");
  ClipReport report;
  report.norm_before = grads.global_norm();
  if (!std::isfinite(report.norm_before)) throw NumericalError("non-finite gradient");
  if (report.norm_before > clip) {
    report.scale = clip / report.norm_before;
    grads.scale(report.scale);
  }
  return report;
}

ClipReport clip_and_step(ModelParams& params, GradientSet& grads, double lr, double clip) {
  auto pb = params.blocks();
  auto gb = grads.blocks();
  for (std::size_t i = 0; i < pb.size(); ++i) {
    if (pb[i].size() != gb[i].size()) throw ShapeError("gradient shapes differ from parameters");
  }
  const ClipReport report = clip_gradients(grads, clip);
  if (lr == 0.0) return report;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    for (std::size_t j = 0; j < pb[i].size(); ++j) pb[i][j] -= lr * gb[i][j];
  }
  return report;
}

double perplexity(const ModelParams& params, std::span<const TokenId> corpus) {
  if (corpus.size() < 2) throw ShapeError("perplexity needs at least two tokens");
  const std::vector<double> logp = next_token_log_probabilities(params, corpus);
  double total = 0.0;
  for (double lp : logp) total -= lp;
  return std::exp(total / static_cast<double>(logp.size()));
}

TrainResult train(ModelParams& params, std::span<const TokenId> corpus, const TrainConfig& config,
                  const EvalCallback& on_eval) {
  config.validate();
  params.validate();
  const std::size_t B = config.batch_size;
  const std::size_t stream_len = corpus.size() / B;
  if (stream_len < 2) throw ConfigError("corpus too short for the batch size");

  // Windows of the same start offset across all streams.
  std::vector<std::size_t> starts;
  for (std::size_t p = 0; p + 1 < stream_len; p += config.bptt_window - 1) starts.push_back(p);
  auto make_windows = [&](std::size_t start) {
    const std::size_t end = std::min(start + config.bptt_window, stream_len);
    std::vector<std::vector<TokenId>> windows(B);
    for (std::size_t b = 0; b < B; ++b) {
      const auto base = corpus.begin() + static_cast<std::ptrdiff_t>(b * stream_len);
      windows[b].assign(base + static_cast<std::ptrdiff_t>(start),
                        base + static_cast<std::ptrdiff_t>(end));
    }
    return windows;
  };

  const auto H = params.hidden();
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  auto emit = [&](std::size_t epoch, std::size_t batch, double loss) {
    std::optional<std::pair<std::string, double>> metric;
    if (on_eval) metric = on_eval(EvalPoint{epoch, batch, starts.size(), loss}, params);
    TrainLogRow row;
    row.epoch = epoch;
    row.batch = batch;
    row.train_loss = loss;
    if (metric) {
      row.eval_metric_name = metric->first;
      row.eval_metric_value = metric->second;
    }
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(std::move(row));
  };

  {
    // Epoch 0: loss of the initial model over the same windows, no updates.
    BatchState state = BatchState::zeros(H, static_cast<Eigen::Index>(B));
    double total = 0.0;
    for (std::size_t start : starts) {
      const auto windows = make_windows(start);
      const auto T = static_cast<Eigen::Index>(windows[0].size() - 1);
      const Matrix w = Matrix::Constant(T, static_cast<Eigen::Index>(B),
                                        1.0 / static_cast<double>(T * static_cast<Eigen::Index>(B)));
      BackpropOutput r = backprop(params, windows, state, w, false, false);
      total += r.weighted_loss;
      state = std::move(r.final_state);
    }
    emit(0, 0, total / static_cast<double>(starts.size()));
  }

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    BatchState state = BatchState::zeros(H, static_cast<Eigen::Index>(B));
    double running = 0.0;
    std::size_t since_eval = 0;
    for (std::size_t bi = 0; bi < starts.size(); ++bi) {
      const auto windows = make_windows(starts[bi]);
      BatchBpttResult r = bptt_gradients_batch(params, windows, state);
      if (!std::isfinite(r.loss)) {
        throw NumericalError("training loss became non-finite at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(bi + 1));
      }
      clip_and_step(params, r.grads, config.learning_rate, config.clip_threshold);
      state = std::move(r.final_state);
      running += r.loss;
      ++since_eval;
      ++result.steps;
      const bool last = bi + 1 == starts.size();
      const bool interval = config.eval_interval > 0 && (bi + 1) % config.eval_interval == 0;
      if (last || interval) {
        emit(epoch, bi + 1, running / static_cast<double>(since_eval));
        running = 0.0;
        since_eval = 0;
      }
    }
  }
  return result;
}

GradientProbeReport scaffold_gradient_probe(const ModelParams& params,
                                            std::span<const RuleWindow> instances) {
  GradientProbeReport report;
  if (instances.empty()) return report;
  const std::size_t k = instances.front().k;
  if (k == 0) throw FormatError("rule instance with empty scaffold");
  std::vector<double> sums(k, 0.0);
  const auto H = params.hidden();
  for (const auto& inst : instances) {
    if (inst.k != k) throw FormatError("rule instances disagree on scaffold length");
    const std::size_t omega = inst.alpha_offset + k + 1;
    if (omega >= inst.window.size()) {
      throw FormatError("rule instance window does not contain the close symbol");
    }
    std::vector<std::vector<TokenId>> one{
        std::vector<TokenId>(inst.window.begin(),
                             inst.window.begin() + static_cast<std::ptrdiff_t>(omega + 1))};
    const auto T = static_cast<Eigen::Index>(omega);
    Matrix weights = Matrix::Zero(T, 1);
    weights(T - 1, 0) = 1.0;
    BackpropOutput r =
        backprop(params, one, BatchState::zeros(H, 1), weights, true, /*record=*/true);
    for (std::size_t d = 0; d < k; ++d) {
      sums[d] += r.hidden_grads[inst.alpha_offset + 1 + d].norm();
    }
  }
  report.samples = instances.size();
  for (std::size_t d = 0; d < k; ++d) {
    report.offsets.emplace_back(d, sums[d] / static_cast<double>(instances.size()));
  }
  return report;
}

}  // namespace cdlm
