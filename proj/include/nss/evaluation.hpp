// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nss/training.hpp"

namespace nss {

/// 100 * (1 - |y - yhat| / |y - mean(y)|). Throws ContractError when y is constant
/// or the lengths differ.
double fit_index(std::span<const double> y, std::span<const double> y_hat);

/// Same, over every channel at once: residual and deviation norms taken over all entries,
/// with each channel centred on its own mean.
double fit_index_stacked(const MatrixXd& y, const MatrixXd& y_hat);

enum class InitPolicy {
  estimator,  // trained estimator on the first m_e test samples; those are not scored
  zero_full,  // zero state at sample 0, whole record simulated
};

InitPolicy parse_init_policy(std::string_view s);
std::string_view to_string(InitPolicy p);

struct FitReport {
  double fit_percent = 0.0;                // stacked FIT (equals the channel FIT when n_y = 1)
  std::vector<double> channel_fit_percent;
  double rmse = 0.0;                       // over all scored entries, physical units
  Index n_test = 0;                        // scored samples
  Index first_scored = 0;                  // record index of the first scored sample
  MatrixXd y;                              // scored measured outputs, physical units
  MatrixXd y_sim;                          // matching simulated outputs
};

struct EvalOptions {
  InitPolicy policy = InitPolicy::estimator;
  Index skip = 0;  // extra leading samples excluded from scoring (after the estimation window)
};

/// Open-loop test simulation of a checkpoint. RAND estimators draw from
/// evaluation_seed(checkpoint.config), so the result is deterministic.
FitReport evaluate_model(const Checkpoint& ckpt, const Dataset& test, const EvalOptions& options = {});

/// One CSV per output channel: <stem>_y<c>.csv with columns t, y, y_sim, error.
std::vector<std::filesystem::path> write_traces(const FitReport& report, const std::filesystem::path& stem);

/// FitReport summary as JSON text (without traces).
std::string fit_report_json(const FitReport& report);

}  // namespace nss
