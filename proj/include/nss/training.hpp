// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nss/data.hpp"
#include "nss/estimators.hpp"

namespace nss {

/// Training-algorithm settings. The first six fields are the experiment factors.
struct TrainConfig {
  EstimatorKind est_type = EstimatorKind::FF;
  double max_time = 300.0;  // seconds of optimization loop
  Index batch_size = 32;
  Index seq_fit_len = 40;
  Index seq_est_len = 10;
  Index est_hidden_size = 15;

  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  Index val_stride = 0;  // 0 means seq_fit_len
  Index val_every = 20;
  std::optional<Index> max_iters;  // when set, replaces the time budget
  bool normalize = true;

  EstimatorSpec estimator_spec() const { return {est_type, seq_est_len, est_hidden_size}; }
  Index effective_val_stride() const { return val_stride > 0 ? val_stride : seq_fit_len; }

  /// Throws ConfigError on out-of-range values.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct AdamState {
  ParamStore<double> m;
  ParamStore<double> v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const ParamStore<double>& params) { return {params.zeros_like(), params.zeros_like()}; }
};

/// One bias-corrected Adam update. Throws NumericalError naming the first parameter
/// with a non-finite gradient; nothing is modified in that case.
void adam_step(AdamState& state, ParamStore<double>& params, const ParamStore<double>& grads, double learning_rate);

namespace detail {

/// n x batch matrix whose column s is row (starts[s] + offset) of data.
inline MatrixXd gather_rows(const MatrixXd& data, const std::vector<Index>& starts, Index offset) {
  MatrixXd out(data.cols(), static_cast<Index>(starts.size()));
  for (std::size_t s = 0; s < starts.size(); ++s) out.col(static_cast<Index>(s)) = data.row(starts[s] + offset).transpose();
  return out;
}

template <typename S>
void check_batch_state(const Matrix<S>& x, long step_index) {
  for (Index s = 0; s < x.cols(); ++s) {
    for (Index i = 0; i < x.rows(); ++i) {
      const S v = x(i, s);
      if (!std::isfinite(v) || std::abs(v) > S(kDivergenceBound)) {
        throw DivergenceError("rollout of sequence " + std::to_string(s) + " diverged at step " +
                                  std::to_string(step_index),
                              step_index);
      }
    }
  }
}

}  // namespace detail

/// Minibatch loss over the subsequences of `batch` taken from `data` (already normalized):
///
///   J = 1/(b*m) * sum_s sum_{j=m_e}^{m-1} |y_{i_s+j} - yhat_{i_s+j|i_s}|^2
///
/// where the rollout of each sequence starts from the estimator's output at i_s + m_e.
/// The 1/(b*m) factor uses the full subsequence length m even though only m_f terms
/// are summed.
template <class G>
typename G::Handle minibatch_loss(G& graph, const ModelSpec& ms, const ModelHandles<G>& mh, const EstimatorSpec& es,
                                  const EstimatorHandles<G>& eh, const SubsequenceBatch& batch, const Dataset& data,
                                  std::mt19937_64& rng) {
  using H = typename G::Handle;
  using S = typename G::Scalar;
  if (batch.starts.empty()) throw ContractError("minibatch_loss: empty batch");
  if (batch.m_e != es.m_e) throw ContractError("minibatch_loss: batch m_e differs from the estimator's seq_est_len");
  if (data.n_u() != ms.n_u || data.n_y() != ms.n_y) throw DimensionError("minibatch_loss: data channels do not match the model");
  for (auto s : batch.starts) {
    if (s < 0 || s + batch.m() > data.size()) throw ContractError("minibatch_loss: window outside the data");
  }

  auto rows = [&](const MatrixXd& m, Index offset) {
    return Matrix<S>(detail::gather_rows(m, batch.starts, offset).template cast<S>());
  };
  std::vector<H> u_est, y_est;
  for (Index t = 0; t < batch.m_e; ++t) {
    u_est.push_back(graph.constant(rows(data.u, t)));
    y_est.push_back(graph.constant(rows(data.y, t)));
  }
  H x = estimate(graph, es, eh, ms, mh, std::span<const H>(u_est), std::span<const H>(y_est), rng);
  detail::check_batch_state(graph.value(x), static_cast<long>(batch.m_e));

  const S scale = S(1) / static_cast<S>(batch.size() * batch.m());
  std::optional<H> loss;
  for (Index j = 0; j < batch.m_f; ++j) {
    const Index t = batch.m_e + j;
    H residual = graph.add(output(graph, mh, x), graph.constant(-rows(data.y, t)));
    H term = graph.sum_squares(residual, scale);
    loss = loss ? graph.add(*loss, term) : term;
    if (j + 1 < batch.m_f) {
      x = step(graph, mh, x, graph.constant(rows(data.u, t)));
      detail::check_batch_state(graph.value(x), static_cast<long>(t + 1));
    }
  }
  return *loss;
}

/// sum_{k=0}^{n-1} |y_k - yhat_k|^2 for one open-loop rollout from x0 over the whole record.
template <class G>
typename G::Handle full_sim_loss(G& graph, const ModelHandles<G>& mh, typename G::Handle x0, const Dataset& data) {
  using H = typename G::Handle;
  using S = typename G::Scalar;
  std::vector<H> inputs;
  for (Index k = 0; k + 1 < data.size(); ++k) {
    inputs.push_back(graph.constant(Matrix<S>(data.u.row(k).transpose().template cast<S>())));
  }
  auto r = rollout(graph, mh, std::move(x0), std::span<const H>(inputs));
  std::optional<H> loss;
  for (Index k = 0; k < data.size(); ++k) {
    H residual = graph.add(r.outputs[static_cast<std::size_t>(k)], graph.constant(Matrix<S>(-data.y.row(k).transpose().template cast<S>())));
    H term = graph.sum_squares(residual);
    loss = loss ? graph.add(*loss, term) : term;
  }
  return *loss;
}

/// Eager evaluation of the minibatch loss.
double minibatch_loss(const NeuralStateSpaceModel<double>& model, const StateEstimator<double>& estimator,
                      const SubsequenceBatch& batch, const Dataset& data, std::mt19937_64& rng);

/// Eager evaluation of the full-record simulation loss.
double full_sim_loss(const NeuralStateSpaceModel<double>& model, const VectorXd& x0, const Dataset& data);

struct LossAndGradients {
  double loss;
  ParamStore<double> gradients;  // laid out like merge(model.params, estimator.params)
};

LossAndGradients minibatch_loss_and_gradients(const NeuralStateSpaceModel<double>& model,
                                              const StateEstimator<double>& estimator, const SubsequenceBatch& batch,
                                              const Dataset& data, std::mt19937_64& rng);

/// Everything needed to reproduce a trained model's simulations.
struct Checkpoint {
  NeuralStateSpaceModel<double> model;
  StateEstimator<double> estimator;
  Normalizer normalizer;
  TrainConfig config;
  double best_val_loss = std::numeric_limits<double>::infinity();
  Index iteration = 0;
  std::string rng_digest;
};

inline constexpr int kCheckpointSchemaVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws IoError on unreadable/malformed files or a schema version mismatch, and
/// ChecksumError when the stored checksum does not match the contents.
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct LogEntry {
  Index iteration = 0;
  double elapsed_s = 0.0;
  std::optional<double> train_loss;
  std::optional<double> val_loss;
};

/// Columns: iteration, elapsed_s, train_loss, val_loss (empty when not evaluated).
void write_training_log(const std::vector<LogEntry>& log, const std::filesystem::path& path);

struct TrainResult {
  Checkpoint best;
  std::vector<LogEntry> log;
  std::vector<std::pair<Index, double>> improvements;  // (iteration, new best validation loss)
  Index iterations = 0;
  double elapsed_s = 0.0;
};

/// Number of consecutive diverged batches after which training gives up.
inline constexpr int kMaxConsecutiveDivergences = 50;

/// Starting parameters replacing the seeded initialization.
struct WarmStart {
  NeuralStateSpaceModel<double> model;
  StateEstimator<double> estimator;
};

/// Fits model and estimator on `train_split`, selecting the parameters with the lowest
/// validation loss on `val_split`. Both splits are in physical units; the normalizer is
/// fitted on the training split (or identity when config.normalize is false).
TrainResult train(const ModelSpec& model_spec, const TrainConfig& config, const Dataset& train_split,
                  const Dataset& val_split, const WarmStart* warm_start = nullptr);

/// Deterministic validation loss: the minibatch loss over all strided windows of an
/// already-normalized split, with RAND draws from a fresh rng seeded by rand_seed.
double validation_loss(const NeuralStateSpaceModel<double>& model, const StateEstimator<double>& estimator,
                       const Dataset& normalized_val, Index m_f, Index stride, std::uint64_t rand_seed);

/// Seed used for RAND draws when evaluating a checkpoint.
std::uint64_t evaluation_seed(const TrainConfig& config);

}  // namespace nss
