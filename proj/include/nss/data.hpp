// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nss/ssmodel.hpp"

namespace nss {

/// Aligned input/output record, time-major (row k is sample k).
struct Dataset {
  MatrixXd u;  // n x n_u
  MatrixXd y;  // n x n_y
  std::optional<double> sample_rate;
  std::string name;

  Index size() const { return u.rows(); }
  Index n_u() const { return u.cols(); }
  Index n_y() const { return y.cols(); }

  /// Throws if lengths differ, the record is empty, or an entry is non-finite.
  void validate() const;

  /// Rows [begin, begin + count).
  Dataset slice(Index begin, Index count) const;
};

std::vector<std::string> default_columns(std::string_view prefix, Index count);

/// Reads a comma-separated file with a header row. Row order is preserved.
Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& u_columns,
                 const std::vector<std::string>& y_columns);

/// Writes u columns then y columns, 17 significant digits.
void save_csv(const Dataset& data, const std::filesystem::path& path, const std::vector<std::string>& u_columns,
              const std::vector<std::string>& y_columns);

/// Channelwise standardization (population std). Degenerate channels get std = 1.
struct Normalizer {
  VectorXd u_mean, u_std, y_mean, y_std;

  static Normalizer fit(const Dataset& data);
  static Normalizer identity(Index n_u, Index n_y);

  Dataset normalize(const Dataset& data) const;
  Dataset denormalize(const Dataset& data) const;
  MatrixXd normalize_u(const MatrixXd& u) const;
  MatrixXd normalize_y(const MatrixXd& y) const;
  MatrixXd denormalize_y(const MatrixXd& y) const;
};

struct Split {
  Dataset train;
  Dataset validation;
};

/// Contiguous prefix for training, contiguous tail of round(n * val_fraction) rows for
/// validation. Both parts must hold at least m_e + m_f + 1 samples.
Split split_train_val(const Dataset& data, double val_fraction, Index m_e, Index m_f);

/// Start indices of subsequences; each spans [start, start + m_e + m_f).
struct SubsequenceBatch {
  std::vector<Index> starts;
  Index m_e = 0;
  Index m_f = 0;

  Index m() const { return m_e + m_f; }
  Index size() const { return static_cast<Index>(starts.size()); }
};

/// b starts drawn uniformly with replacement from {0, ..., n_split - m - 1}.
SubsequenceBatch sample_batch(Index n_split, Index m_e, Index m_f, Index b, std::mt19937_64& rng);

/// Starts 0, stride, 2*stride, ... up to n_split - m - 1.
SubsequenceBatch enumerate_windows(Index n_split, Index m_e, Index m_f, Index stride);

struct SynthOptions {
  Index hidden = 8;
  double spectral_radius = 0.9;  // of the linear x -> x' part; must stay below 0.97
  double nonlinear_gain = 0.4;   // scale of the hidden-layer contribution
  bool integrator = false;       // make the last state a pure accumulator of the first input
  double drift_pole = 0.995;     // integrator only: pole of the slow part of the excitation
};

struct SynthSystem {
  Dataset data;
  NeuralStateSpaceModel<double> truth;
};

/// Random stable neural state-space system excited by Gaussian input, started from the
/// zero state. noise_std is relative: output channel c gets white noise with standard
/// deviation noise_std * std(clean y_c).
SynthSystem synth_system(std::uint64_t seed, Index n_x, Index n_u, Index n_y, Index n, double noise_std,
                         const SynthOptions& options = {});

/// Spectral radius of the state-to-state block of the transition's direct linear term.
double skip_spectral_radius(const NeuralStateSpaceModel<double>& model);

}  // namespace nss
