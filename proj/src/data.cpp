// SPDX-License-Identifier: Apache-2.0
#include "nss/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "text.hpp"

namespace nss {

void Dataset::validate() const {
  if (u.rows() != y.rows()) {
    throw ContractError("dataset '" + name + "': u has " + std::to_string(u.rows()) + " rows but y has " +
                        std::to_string(y.rows()));
  }
  if (u.rows() < 1) throw ContractError("dataset '" + name + "' is empty");
  if (!u.allFinite() || !y.allFinite()) throw NumericalError("dataset '" + name + "' has non-finite entries");
}

Dataset Dataset::slice(Index begin, Index count) const {
  if (begin < 0 || count < 0 || begin + count > size()) {
    throw ContractError("dataset slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                        ") out of range for " + std::to_string(size()) + " samples");
  }
  return {u.middleRows(begin, count), y.middleRows(begin, count), sample_rate, name};
}

std::vector<std::string> default_columns(std::string_view prefix, Index count) {
  std::vector<std::string> out;
  for (Index i = 0; i < count; ++i) out.push_back(std::string(prefix) + std::to_string(i));
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& u_columns,
                 const std::vector<std::string>& y_columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");
  const auto header = text::split_csv_line(line);
  std::unordered_map<std::string, std::size_t> where;
  for (std::size_t c = 0; c < header.size(); ++c) where.emplace(header[c], c);

  auto locate = [&](const std::vector<std::string>& names) {
    std::vector<std::size_t> idx;
    for (const auto& n : names) {
      auto it = where.find(n);
      if (it == where.end()) throw IoError("'" + path.string() + "': missing column '" + n + "'");
      idx.push_back(it->second);
    }
    return idx;
  };
  const auto ui = locate(u_columns);
  const auto yi = locate(y_columns);

  std::vector<double> uv, yv;
  Index rows = 0;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto fields = text::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw IoError("'" + path.string() + "' line " + std::to_string(line_no) + ": expected " +
                    std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    auto grab = [&](const std::vector<std::size_t>& cols, std::vector<double>& dst) {
      for (auto c : cols) {
        double v = 0;
        if (!text::parse_double(fields[c], v)) {
          throw IoError("'" + path.string() + "' line " + std::to_string(line_no) + ", column '" + header[c] +
                        "': cannot parse '" + fields[c] + "'");
        }
        dst.push_back(v);
      }
    };
    grab(ui, uv);
    grab(yi, yv);
    ++rows;
  }

  Dataset d;
  d.name = path.stem().string();
  d.u = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      uv.data(), rows, static_cast<Index>(ui.size()));
  d.y = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      yv.data(), rows, static_cast<Index>(yi.size()));
  d.validate();
  return d;
}

void save_csv(const Dataset& data, const std::filesystem::path& path, const std::vector<std::string>& u_columns,
              const std::vector<std::string>& y_columns) {
  if (static_cast<Index>(u_columns.size()) != data.n_u() || static_cast<Index>(y_columns.size()) != data.n_y()) {
    throw ContractError("save_csv: column names do not match channel counts");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  std::string row;
  for (std::size_t c = 0; c < u_columns.size(); ++c) row += (c ? "," : "") + u_columns[c];
  for (const auto& c : y_columns) row += "," + c;
  out << row << '\n';
  for (Index k = 0; k < data.size(); ++k) {
    row.clear();
    for (Index c = 0; c < data.n_u(); ++c) row += (c ? "," : "") + text::format_double(data.u(k, c));
    for (Index c = 0; c < data.n_y(); ++c) row += "," + text::format_double(data.y(k, c));
    out << row << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

namespace {

void column_stats(const MatrixXd& m, VectorXd& mean, VectorXd& sd) {
  mean = m.colwise().mean().transpose();
  sd.resize(m.cols());
  for (Index c = 0; c < m.cols(); ++c) {
    const double var = (m.col(c).array() - mean(c)).square().mean();
    const double s = std::sqrt(var);
    sd(c) = (s > 1e-12 && std::isfinite(s)) ? s : 1.0;
  }
}

MatrixXd standardize(const MatrixXd& m, const VectorXd& mean, const VectorXd& sd) {
  if (m.cols() != mean.size()) throw DimensionError("normalizer: channel count mismatch");
  return (m.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
}

MatrixXd unstandardize(const MatrixXd& m, const VectorXd& mean, const VectorXd& sd) {
  if (m.cols() != mean.size()) throw DimensionError("normalizer: channel count mismatch");
  return (m.array().rowwise() * sd.transpose().array()).matrix().rowwise() + mean.transpose();
}

}  // namespace

Normalizer Normalizer::fit(const Dataset& data) {
  Normalizer n;
  column_stats(data.u, n.u_mean, n.u_std);
  column_stats(data.y, n.y_mean, n.y_std);
  return n;
}

Normalizer Normalizer::identity(Index n_u, Index n_y) {
  return {VectorXd::Zero(n_u), VectorXd::Ones(n_u), VectorXd::Zero(n_y), VectorXd::Ones(n_y)};
}

MatrixXd Normalizer::normalize_u(const MatrixXd& u) const { return standardize(u, u_mean, u_std); }
MatrixXd Normalizer::normalize_y(const MatrixXd& y) const { return standardize(y, y_mean, y_std); }
MatrixXd Normalizer::denormalize_y(const MatrixXd& y) const { return unstandardize(y, y_mean, y_std); }

Dataset Normalizer::normalize(const Dataset& data) const {
  return {normalize_u(data.u), normalize_y(data.y), data.sample_rate, data.name};
}

Dataset Normalizer::denormalize(const Dataset& data) const {
  return {unstandardize(data.u, u_mean, u_std), denormalize_y(data.y), data.sample_rate, data.name};
}

Split split_train_val(const Dataset& data, double val_fraction, Index m_e, Index m_f) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  const Index n = data.size();
  const Index n_val = static_cast<Index>(std::llround(static_cast<double>(n) * val_fraction));
  const Index n_train = n - n_val;
  const Index need = m_e + m_f + 1;
  if (n_val < need || n_train < need) {
    throw ConfigError("split of " + std::to_string(n) + " samples into " + std::to_string(n_train) + "/" +
                      std::to_string(n_val) + " leaves a part shorter than seq_est_len + seq_fit_len + 1 = " +
                      std::to_string(need));
  }
  return {data.slice(0, n_train), data.slice(n_train, n_val)};
}

namespace {

void check_window_fit(Index n_split, Index m_e, Index m_f) {
  if (m_e < 0 || m_f < 1) throw ConfigError("window lengths must satisfy seq_est_len >= 0, seq_fit_len >= 1");
  if (n_split < m_e + m_f + 1) {
    throw ConfigError("split of " + std::to_string(n_split) + " samples is shorter than m + 1 = " +
                      std::to_string(m_e + m_f + 1));
  }
}

}  // namespace

SubsequenceBatch sample_batch(Index n_split, Index m_e, Index m_f, Index b, std::mt19937_64& rng) {
  check_window_fit(n_split, m_e, m_f);
  if (b < 1) throw ConfigError("batch_size must be >= 1");
  std::uniform_int_distribution<Index> pick(0, n_split - (m_e + m_f) - 1);
  SubsequenceBatch batch{{}, m_e, m_f};
  batch.starts.reserve(static_cast<std::size_t>(b));
  for (Index s = 0; s < b; ++s) batch.starts.push_back(pick(rng));
  return batch;
}

SubsequenceBatch enumerate_windows(Index n_split, Index m_e, Index m_f, Index stride) {
  if (stride < 1) throw ConfigError("stride must be >= 1");
  check_window_fit(n_split, m_e, m_f);
  SubsequenceBatch batch{{}, m_e, m_f};
  const Index last = n_split - (m_e + m_f) - 1;
  for (Index s = 0; s <= last; s += stride) batch.starts.push_back(s);
  return batch;
}

double skip_spectral_radius(const NeuralStateSpaceModel<double>& model) {
  const Index n_x = model.spec.n_x;
  if (!model.params.contains("f.Ws")) return 0.0;
  const MatrixXd a = model.params["f.Ws"].leftCols(n_x);
  Eigen::EigenSolver<MatrixXd> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

SynthSystem synth_system(std::uint64_t seed, Index n_x, Index n_u, Index n_y, Index n, double noise_std,
                         const SynthOptions& options) {
  if (n_x < 1 || n_u < 1 || n_y < 1 || n < 1) throw ConfigError("synth_system: dimensions must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("synth_system: noise_std must be >= 0");
  if (!(options.spectral_radius > 0.0 && options.spectral_radius < 0.97)) {
    throw ConfigError("synth_system: spectral_radius must lie in (0, 0.97)");
  }

  ModelSpec spec{n_x, n_u, n_y, options.hidden, options.hidden, true, true};
  std::mt19937_64 rng(seed);
  auto truth = NeuralStateSpaceModel<double>::init(spec, rng());
  auto& p = truth.params;
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Index r, Index c) {
    MatrixXd m(r, c);
    for (Index k = 0; k < m.size(); ++k) m.reshaped()(k) = normal(rng);
    return m;
  };

  // Stable part: the first n_stable states. With an integrator the last state accumulates u_0.
  const Index n_stable = options.integrator ? n_x - 1 : n_x;
  MatrixXd ws = MatrixXd::Zero(n_x, n_x + n_u);
  if (n_stable > 0) {
    MatrixXd a = gaussian(n_stable, n_stable);
    Eigen::EigenSolver<MatrixXd> es(a, false);
    const double rho = es.eigenvalues().cwiseAbs().maxCoeff();
    a *= options.spectral_radius / std::max(rho, 1e-12);
    ws.topLeftCorner(n_stable, n_stable) = a;
    ws.block(0, n_x, n_stable, n_u) = 0.5 * gaussian(n_stable, n_u);
  }
  p["f.W2"] *= options.nonlinear_gain;
  if (options.integrator) {
    const Index last = n_x - 1;
    ws(last, last) = 1.0;
    ws(last, n_x) = 0.5;
    p["f.W1"].col(last).setZero();
    p["f.W2"].row(last).setZero();
  }
  p["f.Ws"] = ws;
  p["g.Ws"] = gaussian(n_y, n_x) / std::sqrt(static_cast<double>(n_x));
  p["g.W1"] *= 2.0;
  p["g.W2"] *= options.nonlinear_gain;

  MatrixXd u = gaussian(n, n_u);
  if (options.integrator) {
    // The input is the difference of white noise plus a slow unit-variance AR(1) drift.
    // The accumulator then holds half of that sum: bounded, but with a level that a short
    // window of inputs does not reveal.
    const double a = options.drift_pole;
    if (!(a >= 0.0 && a < 1.0)) throw ConfigError("synth_system: drift_pole must be in [0, 1)");
    MatrixXd drift = gaussian(n, n_u);
    for (Index k = 1; k < n; ++k) drift.row(k) = a * drift.row(k - 1) + std::sqrt(1.0 - a * a) * drift.row(k);
    const MatrixXd w = u + drift;
    u = w;
    for (Index k = 1; k < n; ++k) u.row(k) = w.row(k) - w.row(k - 1);
  }

  auto traj = simulate(truth, VectorXd(VectorXd::Zero(n_x)), MatrixXd(u.topRows(n - 1)));
  MatrixXd y = traj.outputs;
  if (noise_std > 0.0) {
    for (Index c = 0; c < n_y; ++c) {
      const double sd = std::sqrt((y.col(c).array() - y.col(c).mean()).square().mean());
      for (Index k = 0; k < n; ++k) y(k, c) += noise_std * sd * normal(rng);
    }
  }

  Dataset d{u, y, std::nullopt, "synth"};
  d.validate();
  return {std::move(d), std::move(truth)};
}

}  // namespace nss
