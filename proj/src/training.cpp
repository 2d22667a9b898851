// SPDX-License-Identifier: Apache-2.0
#include "nss/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <zlib.h>

#include "text.hpp"

namespace nss {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (seq_fit_len < 1) throw ConfigError("seq_fit_len must be >= 1");
  if (seq_est_len < 1) throw ConfigError("seq_est_len must be >= 1");
  if (est_hidden_size < 1) throw ConfigError("est_hidden_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!max_iters && !(max_time > 0.0)) throw ConfigError("max_time must be positive");
  if (max_iters && *max_iters < 0) throw ConfigError("max_iters must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (val_stride < 0) throw ConfigError("val_stride must be >= 1 (or 0 for seq_fit_len)");
  if (val_every < 1) throw ConfigError("val_every must be >= 1");
}

void adam_step(AdamState& state, ParamStore<double>& params, const ParamStore<double>& grads, double learning_rate) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: parameter, gradient and moment layouts differ");
  }
  for (std::size_t e = 0; e < params.size(); ++e) {
    const auto& g = grads.entries()[e];
    const auto& p = params.entries()[e];
    if (g.value.rows() != p.value.rows() || g.value.cols() != p.value.cols()) {
      throw DimensionError("adam_step: gradient shape differs for '" + p.name + "'");
    }
    if (!g.value.allFinite()) throw NumericalError("adam_step: non-finite gradient for '" + g.name + "'");
  }

  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t e = 0; e < params.size(); ++e) {
    auto& p = params.entries()[e].value;
    auto& m = state.m.entries()[e].value;
    auto& v = state.v.entries()[e].value;
    const auto& g = grads.entries()[e].value;
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseAbs2();
    p.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

double minibatch_loss(const NeuralStateSpaceModel<double>& model, const StateEstimator<double>& estimator,
                      const SubsequenceBatch& batch, const Dataset& data, std::mt19937_64& rng) {
  Eager<double> g;
  auto mh = bind_model(g, model.spec, model.params);
  auto eh = bind_estimator(g, estimator.spec, model.spec, estimator.params);
  return minibatch_loss(g, model.spec, mh, estimator.spec, eh, batch, data, rng)(0, 0);
}

double full_sim_loss(const NeuralStateSpaceModel<double>& model, const VectorXd& x0, const Dataset& data) {
  Eager<double> g;
  auto mh = bind_model(g, model.spec, model.params);
  return full_sim_loss(g, mh, MatrixXd(x0), data)(0, 0);
}

namespace {

LossAndGradients loss_and_gradients(const ModelSpec& ms, const EstimatorSpec& es, const ParamStore<double>& params,
                                    const SubsequenceBatch& batch, const Dataset& data, std::mt19937_64& rng) {
  Tape<double> tape;
  auto mh = bind_model(tape, ms, params);
  auto eh = bind_estimator(tape, es, ms, params);
  NodeId loss = minibatch_loss(tape, ms, mh, es, eh, batch, data, rng);
  auto grads = backward(tape, loss);
  return {tape.value(loss)(0, 0), std::move(grads)};
}

// Copies values of every entry of dst from the same-named entry of src.
void pull(ParamStore<double>& dst, const ParamStore<double>& src) {
  for (auto& e : dst.entries()) e.value = src[e.name];
}

std::string rng_digest(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  const std::string s = os.str();
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size()));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace

LossAndGradients minibatch_loss_and_gradients(const NeuralStateSpaceModel<double>& model,
                                              const StateEstimator<double>& estimator, const SubsequenceBatch& batch,
                                              const Dataset& data, std::mt19937_64& rng) {
  return loss_and_gradients(model.spec, estimator.spec, merge(model.params, estimator.params), batch, data, rng);
}

double validation_loss(const NeuralStateSpaceModel<double>& model, const StateEstimator<double>& estimator,
                       const Dataset& normalized_val, Index m_f, Index stride, std::uint64_t rand_seed) {
  auto windows = enumerate_windows(normalized_val.size(), estimator.spec.m_e, m_f, stride);
  std::mt19937_64 rng(rand_seed);
  return minibatch_loss(model, estimator, windows, normalized_val, rng);
}

std::uint64_t evaluation_seed(const TrainConfig& config) { return config.seed ^ 0x9E3779B97F4A7C15ULL; }

void write_training_log(const std::vector<LogEntry>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "iteration,elapsed_s,train_loss,val_loss\n";
  for (const auto& e : log) {
    out << e.iteration << ',' << text::format_double(e.elapsed_s) << ','
        << (e.train_loss ? text::format_double(*e.train_loss) : "") << ','
        << (e.val_loss ? text::format_double(*e.val_loss) : "") << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

TrainResult train(const ModelSpec& model_spec, const TrainConfig& config, const Dataset& train_split,
                  const Dataset& val_split, const WarmStart* warm_start) {
  model_spec.validate();
  config.validate();
  train_split.validate();
  val_split.validate();
  if (train_split.n_u() != model_spec.n_u || train_split.n_y() != model_spec.n_y ||
      val_split.n_u() != model_spec.n_u || val_split.n_y() != model_spec.n_y) {
    throw DimensionError("train: data channel counts do not match the model");
  }
  const EstimatorSpec es = config.estimator_spec();
  es.validate();
  const Index m_e = config.seq_est_len;
  const Index m_f = config.seq_fit_len;
  const Index need = m_e + m_f + 1;
  if (train_split.size() < need || val_split.size() < need) {
    throw ConfigError("train: splits of " + std::to_string(train_split.size()) + "/" +
                      std::to_string(val_split.size()) + " samples cannot hold a window of " + std::to_string(need));
  }
  if (es.below_reconstruction_floor(model_spec)) {
    std::cerr << "warning: seq_est_len " << m_e << " is below the state dimension " << model_spec.n_x << '\n';
  }

  const Normalizer norm =
      config.normalize ? Normalizer::fit(train_split) : Normalizer::identity(model_spec.n_u, model_spec.n_y);
  const Dataset train_n = norm.normalize(train_split);
  const Dataset val_n = norm.normalize(val_split);

  std::mt19937_64 seeder(config.seed);
  auto model = NeuralStateSpaceModel<double>::init(model_spec, seeder());
  auto estimator = StateEstimator<double>::init(es, model_spec, seeder());
  std::mt19937_64 batch_rng(seeder());
  std::mt19937_64 rand_rng(seeder());
  const std::uint64_t val_seed = seeder();
  if (warm_start != nullptr) {
    if (!(warm_start->model.spec == model_spec) || !(warm_start->estimator.spec == es)) {
      throw ContractError("train: warm start does not match the model spec and configuration");
    }
    if (!(warm_start->model.params.zeros_like() == model.params.zeros_like()) ||
        !(warm_start->estimator.params.zeros_like() == estimator.params.zeros_like())) {
      throw DimensionError("train: warm start parameters have the wrong layout");
    }
    model = warm_start->model;
    estimator = warm_start->estimator;
  }

  ParamStore<double> params = merge(model.params, estimator.params);
  AdamState adam = AdamState::for_params(params);

  TrainResult res;
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  auto sync = [&] {
    pull(model.params, params);
    pull(estimator.params, params);
  };
  auto validate_now = [&] {
    sync();
    try {
      return validation_loss(model, estimator, val_n, m_f, config.effective_val_stride(), val_seed);
    } catch (const DivergenceError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  double best = std::numeric_limits<double>::infinity();
  auto consider = [&](Index it, double vloss) {
    if (!(vloss < best)) return;
    best = vloss;
    res.best = Checkpoint{model, estimator, norm, config, vloss, it, rng_digest(batch_rng)};
    res.improvements.emplace_back(it, vloss);
  };

  {
    const double v0 = validate_now();
    res.best = Checkpoint{model, estimator, norm, config, v0, 0, rng_digest(batch_rng)};
    consider(0, v0);
    res.log.push_back({0, elapsed(), std::nullopt, v0});
  }

  Index it = 0;
  int diverged = 0;
  bool validated_last = true;
  while (true) {
    if (config.max_iters) {
      if (it >= *config.max_iters) break;
    } else if (elapsed() >= config.max_time) {
      break;
    }
    const auto batch = sample_batch(train_n.size(), m_e, m_f, config.batch_size, batch_rng);
    LogEntry entry;
    try {
      auto lg = loss_and_gradients(model_spec, es, params, batch, train_n, rand_rng);
      adam_step(adam, params, lg.gradients, config.learning_rate);
      entry.train_loss = lg.loss;
      diverged = 0;
    } catch (const DivergenceError&) {
      ++diverged;
    } catch (const NumericalError&) {
      ++diverged;
    }
    if (diverged > kMaxConsecutiveDivergences) {
      throw DivergenceError("training aborted after " + std::to_string(diverged) + " consecutive diverged batches",
                            static_cast<long>(it));
    }
    ++it;
    entry.iteration = it;
    validated_last = it % config.val_every == 0;
    if (validated_last) {
      entry.val_loss = validate_now();
      consider(it, *entry.val_loss);
    }
    entry.elapsed_s = elapsed();
    res.log.push_back(entry);
  }
  if (!validated_last) {
    const double v = validate_now();
    res.log.back().val_loss = v;
    consider(it, v);
  }
  res.iterations = it;
  res.elapsed_s = elapsed();
  return res;
}

}  // namespace nss
