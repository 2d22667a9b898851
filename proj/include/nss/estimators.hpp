// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nss/ssmodel.hpp"

namespace nss {

/// Initial-state estimation strategy for a subsequence.
///   FF    feed-forward net over the flattened past window
///   LSTM  recurrent net run forward over the past window
///   ZERO  simulate the model across the window from the zero state
///   RAND  same, from a standard-Gaussian state
enum class EstimatorKind { FF, LSTM, ZERO, RAND };

inline constexpr std::array<EstimatorKind, 4> kAllEstimatorKinds{EstimatorKind::FF, EstimatorKind::LSTM,
                                                                 EstimatorKind::ZERO, EstimatorKind::RAND};

inline std::string_view to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::FF: return "FF";
    case EstimatorKind::LSTM: return "LSTM";
    case EstimatorKind::ZERO: return "ZERO";
    case EstimatorKind::RAND: return "RAND";
  }
  return "?";
}

inline EstimatorKind parse_estimator_kind(std::string_view s) {
  for (auto k : kAllEstimatorKinds) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown estimator type '" + std::string(s) + "' (expected FF, LSTM, ZERO or RAND)");
}

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::FF;
  Index m_e = 1;          // estimation window length
  Index hidden_size = 15; // FF/LSTM hidden units

  bool has_params() const { return kind == EstimatorKind::FF || kind == EstimatorKind::LSTM; }

  /// Input is the window flattened time-major: [u_0; y_0; u_1; y_1; ...].
  MlpSpec ff_spec(const ModelSpec& m) const { return {m_e * (m.n_u + m.n_y), hidden_size, m.n_x, true}; }
  LstmSpec lstm_spec(const ModelSpec& m) const { return {m.n_u + m.n_y, hidden_size, m.n_x}; }

  void validate() const {
    if (m_e < 1) throw ConfigError("seq_est_len must be >= 1");
    if (hidden_size < 1) throw ConfigError("est_hidden_size must be >= 1");
  }

  /// Windows shorter than the state dimension cannot in general pin down the state.
  bool below_reconstruction_floor(const ModelSpec& m) const { return m_e < m.n_x; }

  friend bool operator==(const EstimatorSpec&, const EstimatorSpec&) = default;
};

/// Parameters live under the "e." prefix; ZERO and RAND have none.
template <typename S>
struct StateEstimator {
  EstimatorSpec spec;
  ParamStore<S> params;

  static StateEstimator init(const EstimatorSpec& spec, const ModelSpec& model, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    StateEstimator e{spec, {}};
    if (spec.kind == EstimatorKind::FF) init_mlp(e.params, spec.ff_spec(model), "e.", rng);
    if (spec.kind == EstimatorKind::LSTM) init_lstm(e.params, spec.lstm_spec(model), "e.", rng);
    return e;
  }
};

template <class G>
struct EstimatorHandles {
  std::optional<MlpHandles<G>> ff;
  std::optional<LstmHandles<G>> lstm;
};

template <class G>
EstimatorHandles<G> bind_estimator(G& graph, const EstimatorSpec& spec, const ModelSpec& model,
                                   const ParamStore<typename G::Scalar>& store) {
  EstimatorHandles<G> h;
  if (spec.has_params() && !store.contains(spec.kind == EstimatorKind::FF ? "e.W1" : "e.W")) {
    throw ContractError(std::string(to_string(spec.kind)) + " estimator requested without parameters");
  }
  if (spec.kind == EstimatorKind::FF) h.ff = bind_mlp(graph, store, spec.ff_spec(model), "e.");
  if (spec.kind == EstimatorKind::LSTM) h.lstm = bind_lstm(graph, store, spec.lstm_spec(model), "e.");
  return h;
}

/// Standard-Gaussian n_x x batch matrix, drawn column by column.
template <typename S>
Matrix<S> gaussian_states(Index n_x, Index batch, std::mt19937_64& rng) {
  // Drawn in double whatever S is, so every scalar type sees the same states.
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<S> x(n_x, batch);
  for (Index s = 0; s < batch; ++s) {
    for (Index i = 0; i < n_x; ++i) x(i, s) = static_cast<S>(normal(rng));
  }
  return x;
}

/// State estimate at the end of the window. u_steps / y_steps hold m_e arrays of
/// n_u x batch and n_y x batch. rng is only consumed by RAND.
template <class G>
typename G::Handle estimate(G& graph, const EstimatorSpec& spec, const EstimatorHandles<G>& eh,
                            const ModelSpec& model, const ModelHandles<G>& mh,
                            std::span<const typename G::Handle> u_steps, std::span<const typename G::Handle> y_steps,
                            std::mt19937_64& rng) {
  using S = typename G::Scalar;
  using H = typename G::Handle;
  const auto m_e = static_cast<std::size_t>(spec.m_e);
  if (u_steps.size() != m_e || y_steps.size() != m_e) {
    throw ContractError("estimate: window lengths " + std::to_string(u_steps.size()) + "/" +
                        std::to_string(y_steps.size()) + " do not match seq_est_len " + std::to_string(m_e));
  }
  const Index batch = graph.value(u_steps.front()).cols();

  switch (spec.kind) {
    case EstimatorKind::FF: {
      if (!eh.ff) throw ContractError("FF estimator requested without parameters");
      std::vector<H> parts;
      parts.reserve(2 * m_e);
      for (std::size_t t = 0; t < m_e; ++t) {
        parts.push_back(u_steps[t]);
        parts.push_back(y_steps[t]);
      }
      return mlp_forward(graph, *eh.ff, graph.concat(std::span<const H>(parts)));
    }
    case EstimatorKind::LSTM: {
      if (!eh.lstm) throw ContractError("LSTM estimator requested without parameters");
      std::vector<H> steps;
      steps.reserve(m_e);
      for (std::size_t t = 0; t < m_e; ++t) steps.push_back(graph.concat({u_steps[t], y_steps[t]}));
      return lstm_forward(graph, *eh.lstm, std::span<const H>(steps));
    }
    case EstimatorKind::ZERO:
    case EstimatorKind::RAND: {
      H x = graph.constant(spec.kind == EstimatorKind::ZERO ? Matrix<S>::Zero(model.n_x, batch)
                                                             : gaussian_states<S>(model.n_x, batch, rng));
      for (std::size_t t = 0; t < m_e; ++t) {
        x = step(graph, mh, x, u_steps[t]);
        check_state(graph.value(x), static_cast<long>(t + 1));
      }
      return x;
    }
  }
  throw ContractError("estimate: unknown estimator kind");
}

/// Eager estimate for a single window (m_e x n_u inputs, m_e x n_y outputs).
template <typename S>
Vector<S> estimate(const StateEstimator<S>& est, const NeuralStateSpaceModel<S>& model, const Matrix<S>& u_window,
                   const Matrix<S>& y_window, std::mt19937_64& rng) {
  const auto& ms = model.spec;
  if (u_window.rows() != est.spec.m_e || y_window.rows() != est.spec.m_e) {
    throw ContractError("estimate: window length does not match seq_est_len " + std::to_string(est.spec.m_e));
  }
  if (u_window.cols() != ms.n_u || y_window.cols() != ms.n_y) throw DimensionError("estimate: wrong channel count");
  Eager<S> g;
  auto mh = bind_model(g, ms, model.params);
  auto eh = bind_estimator(g, est.spec, ms, est.params);
  std::vector<Matrix<S>> us, ys;
  for (Index t = 0; t < est.spec.m_e; ++t) {
    us.push_back(u_window.row(t).transpose());
    ys.push_back(y_window.row(t).transpose());
  }
  return estimate(g, est.spec, eh, ms, mh, std::span<const Matrix<S>>(us), std::span<const Matrix<S>>(ys), rng).col(0);
}

}  // namespace nss
