// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nss/nets.hpp"

namespace nss {

/// Dimensions and layer sizes of x' = f(x, u), y = g(x).
struct ModelSpec {
  Index n_x = 2;
  Index n_u = 1;
  Index n_y = 1;
  Index hidden_f = 15;
  Index hidden_g = 15;
  bool skip_f = true;
  bool skip_g = true;

  MlpSpec f_spec() const { return {n_x + n_u, hidden_f, n_x, skip_f}; }
  MlpSpec g_spec() const { return {n_x, hidden_g, n_y, skip_g}; }

  void validate() const {
    if (n_x < 1 || n_u < 1 || n_y < 1) throw ConfigError("ModelSpec: n_x, n_u, n_y must be >= 1");
    f_spec().validate();
    g_spec().validate();
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Rollouts abort once any state entry exceeds this magnitude.
inline constexpr double kDivergenceBound = 1e6;

/// Parameters live under the "f." (transition) and "g." (output) prefixes.
template <typename S>
struct NeuralStateSpaceModel {
  ModelSpec spec;
  ParamStore<S> params;

  static NeuralStateSpaceModel init(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    NeuralStateSpaceModel m{spec, {}};
    init_mlp(m.params, spec.f_spec(), "f.", rng);
    init_mlp(m.params, spec.g_spec(), "g.", rng);
    return m;
  }
};

template <class G>
struct ModelHandles {
  MlpHandles<G> f;
  MlpHandles<G> g;
};

template <class G>
ModelHandles<G> bind_model(G& graph, const ModelSpec& spec, const ParamStore<typename G::Scalar>& store) {
  return {bind_mlp(graph, store, spec.f_spec(), "f."), bind_mlp(graph, store, spec.g_spec(), "g.")};
}

template <class G>
typename G::Handle step(G& graph, const ModelHandles<G>& m, const typename G::Handle& x, const typename G::Handle& u) {
  return mlp_forward(graph, m.f, graph.concat({x, u}));
}

template <class G>
typename G::Handle output(G& graph, const ModelHandles<G>& m, const typename G::Handle& x) {
  return mlp_forward(graph, m.g, x);
}

/// Throws DivergenceError if x has a non-finite entry or one beyond kDivergenceBound.
template <typename S>
void check_state(const Matrix<S>& x, long step_index) {
  for (Index k = 0; k < x.size(); ++k) {
    const S v = x.reshaped()(k);
    if (!std::isfinite(v) || std::abs(v) > S(kDivergenceBound)) {
      throw DivergenceError("simulation diverged at step " + std::to_string(step_index), step_index);
    }
  }
}

template <class G>
struct Rollout {
  std::vector<typename G::Handle> states;
  std::vector<typename G::Handle> outputs;
};

/// Open-loop rollout: states x_0..x_H and outputs y_0..y_H for H = inputs.size().
template <class G>
Rollout<G> rollout(G& graph, const ModelHandles<G>& m, typename G::Handle x0,
                   std::span<const typename G::Handle> inputs) {
  Rollout<G> r;
  r.states.reserve(inputs.size() + 1);
  r.outputs.reserve(inputs.size() + 1);
  check_state(graph.value(x0), 0);
  r.states.push_back(std::move(x0));
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    r.outputs.push_back(output(graph, m, r.states.back()));
    auto next = step(graph, m, r.states.back(), inputs[k]);
    check_state(graph.value(next), static_cast<long>(k + 1));
    r.states.push_back(std::move(next));
  }
  r.outputs.push_back(output(graph, m, r.states.back()));
  return r;
}

/// Time-major trajectory: row k holds x_k / y_k.
template <typename S>
struct Trajectory {
  Matrix<S> states;
  Matrix<S> outputs;
};

/// One-step transition x_{k+1} = f(x_k, u_k).
template <typename S>
Vector<S> step(const NeuralStateSpaceModel<S>& model, const Vector<S>& x, const Vector<S>& u) {
  if (x.size() != model.spec.n_x || u.size() != model.spec.n_u) {
    throw DimensionError("step: got x of size " + std::to_string(x.size()) + " and u of size " +
                         std::to_string(u.size()) + " for n_x=" + std::to_string(model.spec.n_x) +
                         ", n_u=" + std::to_string(model.spec.n_u));
  }
  Eager<S> g;
  auto m = bind_model(g, model.spec, model.params);
  return step(g, m, Matrix<S>(x), Matrix<S>(u)).col(0);
}

/// Simulates every item of the batch in lock-step. Each window is H x n_u (time-major)
/// and all windows share the same H. Column-independent kernels make the result
/// bit-identical to simulating the items one at a time.
template <typename S>
std::vector<Trajectory<S>> batched_rollout(const NeuralStateSpaceModel<S>& model, std::span<const Vector<S>> x_inits,
                                           std::span<const Matrix<S>> windows) {
  const auto& spec = model.spec;
  if (x_inits.size() != windows.size()) {
    throw ContractError("batched_rollout: " + std::to_string(x_inits.size()) + " initial states for " +
                        std::to_string(windows.size()) + " input windows");
  }
  const Index batch = static_cast<Index>(x_inits.size());
  if (batch == 0) return {};
  const Index horizon = windows.front().rows();
  for (std::size_t s = 0; s < windows.size(); ++s) {
    if (windows[s].rows() != horizon) throw ContractError("batched_rollout: ragged batch (item " + std::to_string(s) + ")");
    if (windows[s].cols() != spec.n_u) throw DimensionError("batched_rollout: input window has wrong channel count");
    if (x_inits[s].size() != spec.n_x) throw DimensionError("batched_rollout: initial state has wrong size");
  }

  Eager<S> g;
  auto m = bind_model(g, spec, model.params);
  Matrix<S> x0(spec.n_x, batch);
  for (Index s = 0; s < batch; ++s) x0.col(s) = x_inits[static_cast<std::size_t>(s)];
  std::vector<Matrix<S>> inputs(static_cast<std::size_t>(horizon), Matrix<S>(spec.n_u, batch));
  for (Index k = 0; k < horizon; ++k) {
    for (Index s = 0; s < batch; ++s) inputs[static_cast<std::size_t>(k)].col(s) = windows[static_cast<std::size_t>(s)].row(k).transpose();
  }
  auto r = rollout(g, m, std::move(x0), std::span<const Matrix<S>>(inputs));

  std::vector<Trajectory<S>> out(static_cast<std::size_t>(batch));
  for (Index s = 0; s < batch; ++s) {
    auto& t = out[static_cast<std::size_t>(s)];
    t.states.resize(horizon + 1, spec.n_x);
    t.outputs.resize(horizon + 1, spec.n_y);
    for (Index k = 0; k <= horizon; ++k) {
      t.states.row(k) = r.states[static_cast<std::size_t>(k)].col(s).transpose();
      t.outputs.row(k) = r.outputs[static_cast<std::size_t>(k)].col(s).transpose();
    }
  }
  return out;
}

/// Open-loop simulation from x_init over the H x n_u input record u.
template <typename S>
Trajectory<S> simulate(const NeuralStateSpaceModel<S>& model, const Vector<S>& x_init, const Matrix<S>& u) {
  return batched_rollout<S>(model, std::span<const Vector<S>>(&x_init, 1), std::span<const Matrix<S>>(&u, 1)).front();
}

}  // namespace nss
