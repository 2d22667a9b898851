// SPDX-License-Identifier: Apache-2.0
#include "nss/evaluation.hpp"

#include <cmath>
#include <fstream>

#include "json_io.hpp"
#include "text.hpp"

namespace nss {

double fit_index(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw ContractError("fit_index: length mismatch");
  if (y.empty()) throw ContractError("fit_index: empty signal");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double err = 0.0;
  double dev = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    err += (y[t] - y_hat[t]) * (y[t] - y_hat[t]);
    dev += (y[t] - mean) * (y[t] - mean);
  }
  if (!(dev > 0.0)) throw ContractError("fit_index: undefined for a constant signal");
  return 100.0 * (1.0 - std::sqrt(err) / std::sqrt(dev));
}

double fit_index_stacked(const MatrixXd& y, const MatrixXd& y_hat) {
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols()) throw ContractError("fit_index: shape mismatch");
  if (y.size() == 0) throw ContractError("fit_index: empty signal");
  const double err = (y - y_hat).squaredNorm();
  const double dev = (y.rowwise() - y.colwise().mean()).squaredNorm();
  if (!(dev > 0.0)) throw ContractError("fit_index: undefined for a constant signal");
  return 100.0 * (1.0 - std::sqrt(err) / std::sqrt(dev));
}

InitPolicy parse_init_policy(std::string_view s) {
  if (s == "estimator") return InitPolicy::estimator;
  if (s == "zero-full") return InitPolicy::zero_full;
  throw ConfigError("unknown init policy '" + std::string(s) + "' (expected estimator or zero-full)");
}

std::string_view to_string(InitPolicy p) { return p == InitPolicy::estimator ? "estimator" : "zero-full"; }

FitReport evaluate_model(const Checkpoint& ckpt, const Dataset& test, const EvalOptions& options) {
  test.validate();
  const auto& ms = ckpt.model.spec;
  if (test.n_u() != ms.n_u || test.n_y() != ms.n_y) throw DimensionError("evaluate_model: test channels do not match the model");
  if (options.skip < 0) throw ConfigError("evaluate_model: skip must be >= 0");

  const MatrixXd u = ckpt.normalizer.normalize_u(test.u);
  const MatrixXd yn = ckpt.normalizer.normalize_y(test.y);
  const Index n = test.size();

  Index start = 0;
  VectorXd x0 = VectorXd::Zero(ms.n_x);
  if (options.policy == InitPolicy::estimator) {
    start = ckpt.estimator.spec.m_e;
    if (n <= start) throw ContractError("evaluate_model: test record is not longer than seq_est_len");
    std::mt19937_64 rng(evaluation_seed(ckpt.config));
    x0 = estimate(ckpt.estimator, ckpt.model, MatrixXd(u.topRows(start)), MatrixXd(yn.topRows(start)), rng);
  }
  const Index first = start + options.skip;
  if (first >= n) throw ContractError("evaluate_model: nothing left to score");

  // States x_start .. x_{n-1} need inputs u_start .. u_{n-2}.
  auto traj = simulate(ckpt.model, x0, MatrixXd(u.middleRows(start, n - 1 - start)));
  const MatrixXd y_sim_all = ckpt.normalizer.denormalize_y(traj.outputs);

  FitReport r;
  r.first_scored = first;
  r.n_test = n - first;
  r.y = test.y.bottomRows(r.n_test);
  r.y_sim = y_sim_all.bottomRows(r.n_test);
  r.fit_percent = fit_index_stacked(r.y, r.y_sim);
  for (Index c = 0; c < ms.n_y; ++c) {
    const VectorXd yc = r.y.col(c);
    const VectorXd sc = r.y_sim.col(c);
    r.channel_fit_percent.push_back(fit_index(std::span<const double>(yc.data(), yc.size()),
                                              std::span<const double>(sc.data(), sc.size())));
  }
  r.rmse = std::sqrt((r.y - r.y_sim).squaredNorm() / static_cast<double>(r.y.size()));
  return r;
}

std::vector<std::filesystem::path> write_traces(const FitReport& report, const std::filesystem::path& stem) {
  std::vector<std::filesystem::path> paths;
  for (Index c = 0; c < report.y.cols(); ++c) {
    auto path = stem;
    path += "_y" + std::to_string(c) + ".csv";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << "t,y,y_sim,error\n";
    for (Index k = 0; k < report.y.rows(); ++k) {
      const double y = report.y(k, c);
      const double s = report.y_sim(k, c);
      out << report.first_scored + k << ',' << text::format_double(y) << ',' << text::format_double(s) << ','
          << text::format_double(y - s) << '\n';
    }
    if (!out) throw IoError("write to '" + path.string() + "' failed");
    paths.push_back(path);
  }
  return paths;
}

std::string fit_report_json(const FitReport& report) {
  json_io::Json j;
  j["fit_percent"] = json_io::number_or_null(report.fit_percent);
  json_io::Json ch = json_io::Json::array();
  for (double f : report.channel_fit_percent) ch.push_back(json_io::number_or_null(f));
  j["channel_fit_percent"] = ch;
  j["rmse"] = json_io::number_or_null(report.rmse);
  j["n_test"] = report.n_test;
  j["first_scored"] = report.first_scored;
  return j.dump(2);
}

}  // namespace nss
