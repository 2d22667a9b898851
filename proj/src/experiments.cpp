// SPDX-License-Identifier: Apache-2.0
#include "nss/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json_io.hpp"
#include "text.hpp"

namespace nss {

void FactorGrid::validate() const {
  std::set<std::string> seen;
  for (const auto& f : factors) {
    if (f.levels.empty()) throw ConfigError("factor '" + f.name + "' has no levels");
    if (!seen.insert(f.name).second) throw ConfigError("factor '" + f.name + "' listed twice");
  }
}

std::size_t FactorGrid::size() const {
  std::size_t n = 1;
  for (const auto& f : factors) n *= f.levels.size();
  return n;
}

std::vector<Assignment> cartesian_product(const FactorGrid& grid) {
  grid.validate();
  std::vector<Assignment> out;
  out.reserve(grid.size());
  std::vector<std::size_t> idx(grid.factors.size(), 0);
  while (true) {
    Assignment a;
    for (std::size_t f = 0; f < idx.size(); ++f) a.emplace_back(grid.factors[f].name, grid.factors[f].levels[idx[f]]);
    out.push_back(std::move(a));
    std::size_t f = idx.size();
    while (f > 0) {
      --f;
      if (++idx[f] < grid.factors[f].levels.size()) break;
      idx[f] = 0;
      if (f == 0) return out;
    }
    if (idx.empty()) return out;
  }
}

namespace {

Index parse_count(const std::string& factor, const std::string& level) {
  double v = 0.0;
  if (!text::parse_double(level, v) || v != std::floor(v) || v < 1 || v > 1e12) {
    throw ConfigError("factor " + factor + ": '" + level + "' is not a positive integer");
  }
  return static_cast<Index>(v);
}

}  // namespace

void apply_level(TrainConfig& c, const std::string& factor, const std::string& level) {
  if (factor == "est_type") {
    c.est_type = parse_estimator_kind(text::trim(level));
  } else if (factor == "max_time") {
    double v = 0.0;
    if (!text::parse_double(level, v) || !(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError("factor max_time: '" + level + "' is not a positive number of seconds");
    }
    c.max_time = v;
  } else if (factor == "batch_size") {
    c.batch_size = parse_count(factor, level);
  } else if (factor == "seq_fit_len") {
    c.seq_fit_len = parse_count(factor, level);
  } else if (factor == "seq_est_len") {
    c.seq_est_len = parse_count(factor, level);
  } else if (factor == "est_hidden_size") {
    c.est_hidden_size = parse_count(factor, level);
  } else if (factor == "seed") {
    const auto t = text::trim(level);
    std::uint64_t v = 0;
    auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
      throw ConfigError("factor seed: '" + level + "' is not an unsigned integer");
    }
    c.seed = v;
  } else {
    throw ConfigError("unknown factor '" + factor + "'");
  }
}

std::string level_of(const TrainConfig& c, const std::string& factor) {
  if (factor == "est_type") return std::string(to_string(c.est_type));
  if (factor == "max_time") return text::format_shortest(c.max_time);
  if (factor == "batch_size") return std::to_string(c.batch_size);
  if (factor == "seq_fit_len") return std::to_string(c.seq_fit_len);
  if (factor == "seq_est_len") return std::to_string(c.seq_est_len);
  if (factor == "est_hidden_size") return std::to_string(c.est_hidden_size);
  if (factor == "seed") return std::to_string(c.seed);
  throw ConfigError("unknown factor '" + factor + "'");
}

std::string canonical_level(const std::string& factor, const std::string& level) {
  TrainConfig c;
  apply_level(c, factor, level);
  return level_of(c, factor);
}

std::vector<TrainConfig> enumerate_grid(const FactorGrid& grid, const TrainConfig& base) {
  std::vector<TrainConfig> out;
  for (const auto& a : cartesian_product(grid)) {
    TrainConfig c = base;
    for (const auto& [name, level] : a) apply_level(c, name, level);
    out.push_back(c);
  }
  return out;
}

std::vector<TrainConfig> execution_order(std::vector<TrainConfig> configs) {
  std::stable_sort(configs.begin(), configs.end(),
                   [](const TrainConfig& a, const TrainConfig& b) { return a.max_time > b.max_time; });
  return configs;
}

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::diverged: return "diverged";
    case RunStatus::infeasible: return "infeasible";
  }
  return "?";
}

RunStatus parse_run_status(std::string_view s) {
  if (s == "ok") return RunStatus::ok;
  if (s == "diverged") return RunStatus::diverged;
  if (s == "infeasible") return RunStatus::infeasible;
  throw IoError("unknown run status '" + std::string(s) + "'");
}

std::string RunRecord::key() const {
  std::string k;
  for (const auto& f : factor_names()) {
    if (!k.empty()) k += '|';
    k += level_of(config, f);
  }
  return k;
}

const std::vector<std::string>& results_columns() {
  static const std::vector<std::string> cols{"est_type",    "max_time",        "batch_size", "seq_fit_len",
                                             "seq_est_len", "est_hidden_size", "seed",       "fit_percent",
                                             "val_loss",    "iters",           "wall_s",     "status",
                                             "checkpoint"};
  return cols;
}

void write_results_header(std::ostream& out) {
  const auto& cols = results_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
}

void write_result_row(std::ostream& out, const RunRecord& r) {
  for (const auto& f : factor_names()) out << level_of(r.config, f) << ',';
  out << text::format_double(r.fit_percent) << ',' << text::format_double(r.val_loss) << ',' << r.iters << ','
      << text::format_double(r.wall_s) << ',' << to_string(r.status) << ',' << r.checkpoint << '\n';
}

std::vector<RunRecord> load_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "': empty results file");
  const auto header = text::split_csv_line(line);
  const auto& cols = results_columns();
  if (header != cols) throw IoError("'" + path.string() + "': unexpected results header");

  std::vector<RunRecord> out;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto f = text::split_csv_line(line);
    const std::string where = "'" + path.string() + "' line " + std::to_string(line_no);
    if (f.size() != cols.size()) throw IoError(where + ": expected " + std::to_string(cols.size()) + " fields");
    RunRecord r;
    try {
      for (std::size_t i = 0; i < factor_names().size(); ++i) apply_level(r.config, factor_names()[i], f[i]);
    } catch (const ConfigError& e) {
      throw IoError(where + ": " + e.what());
    }
    double iters = 0.0;
    if (!text::parse_double(f[7], r.fit_percent) || !text::parse_double(f[8], r.val_loss) ||
        !text::parse_double(f[9], iters) || !text::parse_double(f[10], r.wall_s)) {
      throw IoError(where + ": unparsable number");
    }
    r.iters = static_cast<Index>(iters);
    r.status = parse_run_status(f[11]);
    r.checkpoint = f[12];
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

std::string checkpoint_name(const TrainConfig& c) {
  std::string s;
  for (const auto& f : factor_names()) {
    if (!s.empty()) s += '_';
    s += level_of(c, f);
  }
  std::replace(s.begin(), s.end(), '.', 'p');
  return s + ".json";
}

RunRecord execute_run(const TrainConfig& config, const Dataset& train_data, const Dataset& test_data,
                      const CampaignOptions& options) {
  RunRecord r;
  r.config = config;
  r.fit_percent = std::numeric_limits<double>::quiet_NaN();
  r.val_loss = std::numeric_limits<double>::quiet_NaN();
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto split = split_train_val(train_data, config.val_fraction, config.seq_est_len, config.seq_fit_len);
    auto result = train(options.model_spec, config, split.train, split.validation);
    r.iters = result.iterations;
    r.val_loss = result.best.best_val_loss;
    const auto rel = std::filesystem::path("checkpoints") / checkpoint_name(config);
    save_checkpoint(result.best, options.out_dir / rel);
    r.checkpoint = rel.generic_string();
    r.fit_percent = evaluate_model(result.best, test_data, options.eval).fit_percent;
    r.status = std::isfinite(r.fit_percent) ? RunStatus::ok : RunStatus::diverged;
  } catch (const ConfigError& e) {
    r.status = RunStatus::infeasible;
    std::cerr << "run " << r.key() << " infeasible: " << e.what() << '\n';
  } catch (const ContractError& e) {
    r.status = RunStatus::infeasible;
    std::cerr << "run " << r.key() << " infeasible: " << e.what() << '\n';
  } catch (const std::exception& e) {
    r.status = RunStatus::diverged;
    std::cerr << "run " << r.key() << " failed: " << e.what() << '\n';
  }
  r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// Drops a partially written last line left by an interrupted campaign.
void repair_tail(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  if (s.empty() || s.back() == '\n') return;
  s.erase(s.find_last_of('\n') + 1);
  in.close();
  std::ofstream(path, std::ios::binary | std::ios::trunc) << s;
}

}  // namespace

CampaignResult run_campaign(const FactorGrid& grid, const Dataset& train_data, const Dataset& test_data,
                            const CampaignOptions& options) {
  if (options.parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (options.out_dir.empty()) throw ConfigError("campaign needs an output directory");
  options.model_spec.validate();
  train_data.validate();
  test_data.validate();
  const auto plan = execution_order(enumerate_grid(grid, options.base));
  for (const auto& c : plan) c.validate();

  std::filesystem::create_directories(options.out_dir / "checkpoints");
  const auto results_path = options.out_dir / "results.csv";

  std::map<std::string, RunRecord> done;
  if (std::filesystem::exists(results_path)) {
    repair_tail(results_path);
    for (auto& r : load_results(results_path)) done.emplace(r.key(), std::move(r));
  } else {
    std::ofstream out(results_path);
    if (!out) throw IoError("cannot write '" + results_path.string() + "'");
    write_results_header(out);
  }

  std::vector<std::size_t> todo;
  std::set<std::string> planned;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    RunRecord probe;
    probe.config = plan[i];
    const auto key = probe.key();
    if (!planned.insert(key).second) continue;  // repeated level in the grid
    if (!done.contains(key)) todo.push_back(i);
  }

  if (options.parallelism > 1 && !options.base.max_iters) {
    std::cerr << "warning: parallel runs with a max_time budget share the CPU; wall-clock budgets are not comparable "
                 "to sequential runs\n";
  }

  std::ofstream out(results_path, std::ios::app);
  if (!out) throw IoError("cannot append to '" + results_path.string() + "'");
  std::mutex out_mutex;
  std::atomic<std::size_t> next{0};
  std::map<std::string, RunRecord> fresh;

  auto worker = [&] {
    while (true) {
      const std::size_t t = next.fetch_add(1);
      if (t >= todo.size()) return;
      RunRecord r = execute_run(plan[todo[t]], train_data, test_data, options);
      std::lock_guard lock(out_mutex);
      write_result_row(out, r);
      out.flush();
      fresh.emplace(r.key(), std::move(r));
    }
  };
  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(options.parallelism), todo.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (!out) throw IoError("write to '" + results_path.string() + "' failed");

  CampaignResult result;
  result.executed = static_cast<Index>(fresh.size());
  planned.clear();
  for (const auto& c : plan) {
    RunRecord probe;
    probe.config = c;
    const auto key = probe.key();
    if (!planned.insert(key).second) continue;
    auto it = fresh.find(key);
    result.records.push_back(it != fresh.end() ? it->second : done.at(key));
  }
  return result;
}

CampaignResult replicate(const TrainConfig& config, const std::vector<std::uint64_t>& seeds, const Dataset& train_data,
                         const Dataset& test_data, CampaignOptions options) {
  if (seeds.empty()) throw ConfigError("replicate: empty seed list");
  std::set<std::uint64_t> seen;
  FactorGrid grid;
  for (const auto& f : factor_names()) {
    if (f != "seed") grid.factors.push_back({f, {level_of(config, f)}});
  }
  Factor seed{"seed", {}};
  for (auto s : seeds) {
    if (!seen.insert(s).second) throw ConfigError("replicate: duplicate seed " + std::to_string(s));
    seed.levels.push_back(std::to_string(s));
  }
  grid.factors.push_back(std::move(seed));
  options.base = config;
  return run_campaign(grid, train_data, test_data, options);
}

namespace {

std::string level_text(const json_io::Json& v, const std::string& factor) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return text::format_shortest(v.get<double>());
  throw ConfigError("factor " + factor + ": levels must be numbers or strings");
}

std::vector<std::string> string_list(const json_io::Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ConfigError(what + " must be an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

CampaignFile load_campaign_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  json_io::Json j;
  try {
    j = json_io::Json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
  static const std::set<std::string> known{"factors",     "train_data", "test_data", "u_columns", "y_columns",
                                           "out_dir",     "parallelism", "base",     "model",     "init_policy",
                                           "skip"};
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ConfigError("'" + path.string() + "': unknown key '" + k + "'");
  }
  const auto dir = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path q(p);
    return q.is_absolute() ? q : dir / q;
  };

  CampaignFile cf;
  try {
    for (const auto& [name, levels] : j.at("factors").items()) {
      Factor f{name, {}};
      if (!levels.is_array()) throw ConfigError("factor " + name + ": levels must be an array");
      for (const auto& v : levels) f.levels.push_back(canonical_level(name, level_text(v, name)));
      cf.grid.factors.push_back(std::move(f));
    }
    cf.grid.validate();
    cf.train_data = resolve(j.at("train_data").get<std::string>());
    cf.test_data = resolve(j.at("test_data").get<std::string>());
    if (j.contains("u_columns")) cf.u_columns = string_list(j["u_columns"], "u_columns");
    if (j.contains("y_columns")) cf.y_columns = string_list(j["y_columns"], "y_columns");
    cf.options.out_dir = resolve(j.value("out_dir", std::string("campaign")));
    cf.options.parallelism = j.value("parallelism", Index{1});
    if (j.contains("base")) cf.options.base = json_io::config_from_json(j["base"]);
    if (j.contains("model")) cf.options.model_spec = json_io::model_spec_from_json(j["model"]);
    cf.options.eval.policy = parse_init_policy(j.value("init_policy", std::string("estimator")));
    cf.options.eval.skip = j.value("skip", Index{0});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
  return cf;
}

FactorGrid wiener_hammerstein_grid() {
  return FactorGrid{{{"est_type", {"FF", "LSTM", "ZERO", "RAND"}},
                     {"max_time", {"300", "1800", "3600"}},
                     {"batch_size", {"32", "128", "512", "1032"}},
                     {"seq_fit_len", {"40", "80", "160", "320"}},
                     {"seq_est_len", {"10", "20", "40", "80"}}}};
}

FactorGrid pick_and_place_grid() {
  return FactorGrid{{{"est_type", {"FF", "LSTM", "ZERO", "RAND"}},
                     {"max_time", {"300", "1800"}},
                     {"batch_size", {"32", "128", "1032"}},
                     {"seq_fit_len", {"64", "256", "512"}},
                     {"seq_est_len", {"10", "40", "100"}},
                     {"est_hidden_size", {"10", "30"}}}};
}

}  // namespace nss
