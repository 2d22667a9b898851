// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nss/evaluation.hpp"

namespace nss {

/// Factor names a grid may vary, in results-CSV column order.
inline const std::vector<std::string>& factor_names() {
  static const std::vector<std::string> names{"est_type",    "max_time",        "batch_size", "seq_fit_len",
                                              "seq_est_len", "est_hidden_size", "seed"};
  return names;
}

struct Factor {
  std::string name;
  std::vector<std::string> levels;
};

/// Ordered factors; the product varies the last factor fastest.
struct FactorGrid {
  std::vector<Factor> factors;

  /// Throws ConfigError on empty level lists or repeated names.
  void validate() const;
  std::size_t size() const;  // product of level counts
};

/// One level per factor, in grid order.
using Assignment = std::vector<std::pair<std::string, std::string>>;

/// Cartesian product over any factor names.
std::vector<Assignment> cartesian_product(const FactorGrid& grid);

/// Sets one factor of `config` from its textual level. Throws ConfigError for unknown
/// factors or unparsable levels.
void apply_level(TrainConfig& config, const std::string& factor, const std::string& level);

/// Canonical text of a factor's value in `config` ("300", "FF", ...).
std::string level_of(const TrainConfig& config, const std::string& factor);

/// Canonical spelling of a level ("300.0" -> "300"). Throws ConfigError like apply_level.
std::string canonical_level(const std::string& factor, const std::string& level);

/// Every configuration of the grid applied on top of `base`, in product order.
std::vector<TrainConfig> enumerate_grid(const FactorGrid& grid, const TrainConfig& base = {});

enum class RunStatus { ok, diverged, infeasible };
std::string_view to_string(RunStatus s);
RunStatus parse_run_status(std::string_view s);

struct RunRecord {
  TrainConfig config;  // factor fields and seed are meaningful; the rest is the campaign base
  double fit_percent = 0.0;
  double val_loss = 0.0;
  Index iters = 0;
  double wall_s = 0.0;
  RunStatus status = RunStatus::ok;
  std::string checkpoint;

  /// Identity of the run: all factor levels including the seed.
  std::string key() const;
};

/// Results CSV columns, in order.
const std::vector<std::string>& results_columns();

void write_results_header(std::ostream& out);
void write_result_row(std::ostream& out, const RunRecord& r);
std::vector<RunRecord> load_results(const std::filesystem::path& path);

struct CampaignOptions {
  ModelSpec model_spec;
  TrainConfig base;  // non-factor settings (learning rate, max_iters, ...)
  EvalOptions eval;
  Index parallelism = 1;
  std::filesystem::path out_dir;
};

struct CampaignResult {
  std::vector<RunRecord> records;  // every configuration of the grid, in execution order
  Index executed = 0;              // runs performed by this call (the rest were resumed)
};

/// Runs every configuration not already in out_dir/results.csv: trains on `train_data`
/// (split with base.val_fraction), evaluates on `test_data`, appends a row as each run
/// finishes and stores the best checkpoint under out_dir/checkpoints. Per-run failures
/// are recorded through the status column.
CampaignResult run_campaign(const FactorGrid& grid, const Dataset& train_data, const Dataset& test_data,
                            const CampaignOptions& options);

/// Same configuration once per seed. Throws ConfigError on an empty list or a repeated seed.
CampaignResult replicate(const TrainConfig& config, const std::vector<std::uint64_t>& seeds, const Dataset& train_data,
                         const Dataset& test_data, CampaignOptions options);

/// Execution order: product order, stable-sorted by max_time descending.
std::vector<TrainConfig> execution_order(std::vector<TrainConfig> configs);

/// Campaign description read from JSON:
///   { "factors": {"est_type": ["FF", "ZERO"], "seed": [0, 1], ...},
///     "train_data": "train.csv", "test_data": "test.csv",
///     "u_columns": [...], "y_columns": [...],             (optional)
///     "out_dir": "runs", "parallelism": 1,
///     "base": { TrainConfig fields }, "model": { ModelSpec fields },
///     "init_policy": "estimator", "skip": 0 }
/// Relative paths are resolved against the file's directory.
struct CampaignFile {
  FactorGrid grid;
  std::filesystem::path train_data;
  std::filesystem::path test_data;
  std::vector<std::string> u_columns;
  std::vector<std::string> y_columns;
  CampaignOptions options;
};

CampaignFile load_campaign_file(const std::filesystem::path& path);

/// Factor levels of the two benchmark studies (without a seed factor).
FactorGrid wiener_hammerstein_grid();  // 768 configurations
FactorGrid pick_and_place_grid();      // 432 configurations

}  // namespace nss
