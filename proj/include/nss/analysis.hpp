// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nss/experiments.hpp"

namespace nss {

/// factor -> admitted levels. Factors not named are unrestricted.
using RecordFilter = std::map<std::string, std::vector<std::string>>;

/// Parses "max_time=3600,seq_fit_len=40" (repeat a factor to admit several levels).
RecordFilter parse_filter(std::string_view text);

/// Records that pass the filter, whatever their status.
std::vector<RunRecord> apply_filter(const std::vector<RunRecord>& records, const RecordFilter& filter);

/// Response value by column name: fit_percent, val_loss, iters or wall_s.
double response_value(const RunRecord& r, const std::string& response);

/// Levels in display order: numeric ascending when every level is a number, FF/LSTM/ZERO/RAND
/// for estimators, otherwise lexicographic.
std::vector<std::string> sort_levels(const std::string& factor, std::vector<std::string> levels);

struct LevelEffect {
  std::string level;
  Index count = 0;
  double mean = 0.0;
  std::optional<double> sd;          // sample standard deviation, count >= 2
  std::optional<double> half_width;  // 95% Student-t half-width, count >= 2
};

struct EffectTable {
  std::string factor;
  std::string response;
  std::vector<LevelEffect> levels;
  Index n_records = 0;  // status-ok records after filtering
  double grand_mean = 0.0;
};

/// Per-level mean of the response over status-ok records passing the filter.
EffectTable main_effects(const std::vector<RunRecord>& records, const std::string& factor,
                         const std::string& response = "fit_percent", const RecordFilter& filter = {});

struct Cell {
  Index count = 0;
  double mean = 0.0;
};

struct InteractionTable {
  std::string factor_a, factor_b, response;
  std::vector<std::string> levels_a, levels_b;
  std::vector<std::vector<std::optional<Cell>>> cells;  // [a][b]; empty when no record falls in the cell
};

InteractionTable interactions(const std::vector<RunRecord>& records, const std::string& factor_a,
                              const std::string& factor_b, const std::string& response = "fit_percent",
                              const RecordFilter& filter = {});

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<Index> counts;

  double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / static_cast<double>(counts.size()); }
  Index total() const;
};

/// Equal-width bins over [min, max]; the maximum falls in the last bin. A constant sample
/// gets a unit-wide range centred on the value.
Histogram make_histogram(const std::vector<double>& values, Index bins = 20);

struct ReplicationStats {
  Index count = 0;
  double mean = 0.0;
  double sd = 0.0;
  double yardstick = 0.0;  // 3 * sd: differences below this are within run-to-run noise
  Histogram histogram;
};

/// Over the response of status-ok records. Throws ContractError with fewer than 2.
ReplicationStats replication_stats(const std::vector<RunRecord>& records, const std::string& response = "fit_percent",
                                   Index bins = 20);

struct AttritionRow {
  std::string factor, level;
  Index ok = 0, diverged = 0, infeasible = 0;
};

/// Status counts per level of every factor taking more than one level.
std::vector<AttritionRow> attrition(const std::vector<RunRecord>& records, const RecordFilter& filter = {});

void write_effects_csv(const EffectTable& t, const std::filesystem::path& path);
void write_interactions_csv(const InteractionTable& t, const std::filesystem::path& path);
void write_replication_csv(const ReplicationStats& s, const std::filesystem::path& path);
void write_histogram_csv(const Histogram& h, const std::filesystem::path& path);
void write_attrition_csv(const std::vector<AttritionRow>& rows, const std::filesystem::path& path);

/// One panel per table: level means with interval bars.
void write_effects_svg(const std::vector<EffectTable>& tables, const std::filesystem::path& path);
/// Response against factor_a levels, one line per factor_b level.
void write_interactions_svg(const InteractionTable& t, const std::filesystem::path& path);
void write_histogram_svg(const ReplicationStats& s, const std::string& response, const std::filesystem::path& path);

struct AnalysisOptions {
  std::string response = "fit_percent";
  RecordFilter filter;
  Index bins = 20;
};

/// Every table and plot for a results file, written into out_dir. Returns the paths written.
std::vector<std::filesystem::path> analyze_results(const std::vector<RunRecord>& records,
                                                   const std::filesystem::path& out_dir,
                                                   const AnalysisOptions& options = {});

}  // namespace nss
