// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nss/autodiff.hpp"

namespace nss {

/// out = W2 * tanh(W1 * in + b1) + b2 (+ Ws * in when skip is set)
struct MlpSpec {
  Index in_dim = 1;
  Index hidden_dim = 1;
  Index out_dim = 1;
  bool skip = false;

  void validate() const {
    if (in_dim < 1 || hidden_dim < 1 || out_dim < 1) throw ConfigError("MlpSpec: all dimensions must be >= 1");
  }
};

/// Single-layer LSTM followed by an affine projection of the last hidden state.
struct LstmSpec {
  Index in_dim = 1;
  Index hidden_dim = 1;
  Index out_dim = 1;

  void validate() const {
    if (in_dim < 1 || hidden_dim < 1 || out_dim < 1) throw ConfigError("LstmSpec: all dimensions must be >= 1");
  }
};

namespace detail {

template <typename S>
Matrix<S> uniform_fan_in(Index rows, Index cols, std::mt19937_64& rng) {
  const S bound = S(1) / std::sqrt(static_cast<S>(cols));
  std::uniform_real_distribution<S> dist(-bound, bound);
  Matrix<S> w(rows, cols);
  for (Index k = 0; k < w.size(); ++k) w.reshaped()(k) = dist(rng);
  return w;
}

inline std::string join(std::string_view prefix, std::string_view name) { return std::string(prefix) + std::string(name); }

}  // namespace detail

// Weights uniform in +-1/sqrt(fan_in), biases zero.
template <typename S>
void init_mlp(ParamStore<S>& store, const MlpSpec& spec, std::string_view prefix, std::mt19937_64& rng) {
  spec.validate();
  store.add(detail::join(prefix, "W1"), detail::uniform_fan_in<S>(spec.hidden_dim, spec.in_dim, rng));
  store.add(detail::join(prefix, "b1"), Matrix<S>::Zero(spec.hidden_dim, 1));
  store.add(detail::join(prefix, "W2"), detail::uniform_fan_in<S>(spec.out_dim, spec.hidden_dim, rng));
  store.add(detail::join(prefix, "b2"), Matrix<S>::Zero(spec.out_dim, 1));
  if (spec.skip) store.add(detail::join(prefix, "Ws"), detail::uniform_fan_in<S>(spec.out_dim, spec.in_dim, rng));
}

// Gate rows are stacked as input, forget, cell candidate, output.
template <typename S>
void init_lstm(ParamStore<S>& store, const LstmSpec& spec, std::string_view prefix, std::mt19937_64& rng) {
  spec.validate();
  const Index h = spec.hidden_dim;
  store.add(detail::join(prefix, "W"), detail::uniform_fan_in<S>(4 * h, spec.in_dim + h, rng));
  store.add(detail::join(prefix, "b"), Matrix<S>::Zero(4 * h, 1));
  store.add(detail::join(prefix, "Wp"), detail::uniform_fan_in<S>(spec.out_dim, h, rng));
  store.add(detail::join(prefix, "bp"), Matrix<S>::Zero(spec.out_dim, 1));
}

template <typename S>
ParamStore<S> init_params(const MlpSpec& spec, std::uint64_t seed, std::string_view prefix = "") {
  std::mt19937_64 rng(seed);
  ParamStore<S> store;
  init_mlp(store, spec, prefix, rng);
  return store;
}

template <typename S>
ParamStore<S> init_params(const LstmSpec& spec, std::uint64_t seed, std::string_view prefix = "") {
  std::mt19937_64 rng(seed);
  ParamStore<S> store;
  init_lstm(store, spec, prefix, rng);
  return store;
}

template <class G>
struct MlpHandles {
  using H = typename G::Handle;
  H w1, b1, w2, b2;
  std::optional<H> ws;
};

template <class G>
MlpHandles<G> bind_mlp(G& g, const ParamStore<typename G::Scalar>& store, const MlpSpec& spec,
                       std::string_view prefix) {
  MlpHandles<G> h{g.param(store, detail::join(prefix, "W1")), g.param(store, detail::join(prefix, "b1")),
                  g.param(store, detail::join(prefix, "W2")), g.param(store, detail::join(prefix, "b2")),
                  std::nullopt};
  if (spec.skip) h.ws = g.param(store, detail::join(prefix, "Ws"));
  return h;
}

template <class G>
typename G::Handle mlp_forward(G& g, const MlpHandles<G>& p, const typename G::Handle& x) {
  auto hidden = g.tanh(g.affine(p.w1, p.b1, x));
  auto out = g.affine(p.w2, p.b2, hidden);
  if (p.ws) out = g.add(out, g.linear(*p.ws, x));
  return out;
}

template <class G>
struct LstmHandles {
  using H = typename G::Handle;
  H w, b, wp, bp;
  Index hidden_dim;
};

template <class G>
LstmHandles<G> bind_lstm(G& g, const ParamStore<typename G::Scalar>& store, const LstmSpec& spec,
                         std::string_view prefix) {
  return {g.param(store, detail::join(prefix, "W")), g.param(store, detail::join(prefix, "b")),
          g.param(store, detail::join(prefix, "Wp")), g.param(store, detail::join(prefix, "bp")), spec.hidden_dim};
}

/// Runs the cell over `steps` (each in_dim x batch) from zero hidden and cell state.
template <class G>
typename G::Handle lstm_forward(G& g, const LstmHandles<G>& p, std::span<const typename G::Handle> steps) {
  using S = typename G::Scalar;
  if (steps.empty()) throw ContractError("lstm_forward: empty input sequence");
  const Index hd = p.hidden_dim;
  const Index batch = g.value(steps.front()).cols();
  auto h = g.constant(Matrix<S>::Zero(hd, batch));
  auto c = g.constant(Matrix<S>::Zero(hd, batch));
  for (const auto& x : steps) {
    auto z = g.affine(p.w, p.b, g.concat({x, h}));
    auto in_gate = g.sigmoid(g.slice(z, 0, hd));
    auto forget_gate = g.sigmoid(g.slice(z, hd, hd));
    auto candidate = g.tanh(g.slice(z, 2 * hd, hd));
    auto out_gate = g.sigmoid(g.slice(z, 3 * hd, hd));
    c = g.add(g.mul(forget_gate, c), g.mul(in_gate, candidate));
    h = g.mul(out_gate, g.tanh(c));
  }
  return g.affine(p.wp, p.bp, h);
}

/// Eager MLP evaluation; columns of x are independent inputs.
template <typename S>
Matrix<S> mlp_forward(const MlpSpec& spec, const ParamStore<S>& params, const Matrix<S>& x,
                      std::string_view prefix = "") {
  if (x.rows() != spec.in_dim) {
    throw DimensionError("mlp_forward: input has " + std::to_string(x.rows()) + " rows, expected " +
                         std::to_string(spec.in_dim));
  }
  Eager<S> g;
  return mlp_forward(g, bind_mlp(g, params, spec, prefix), x);
}

/// Eager LSTM evaluation; each element of steps is in_dim x batch.
template <typename S>
Matrix<S> lstm_forward(const LstmSpec& spec, const ParamStore<S>& params, std::span<const Matrix<S>> steps,
                       std::string_view prefix = "") {
  if (steps.empty()) throw ContractError("lstm_forward: empty input sequence");
  for (const auto& s : steps) {
    if (s.rows() != spec.in_dim) {
      throw DimensionError("lstm_forward: step has " + std::to_string(s.rows()) + " rows, expected " +
                           std::to_string(spec.in_dim));
    }
  }
  Eager<S> g;
  return lstm_forward(g, bind_lstm(g, params, spec, prefix), steps);
}

}  // namespace nss
