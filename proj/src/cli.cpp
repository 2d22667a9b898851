// SPDX-License-Identifier: Apache-2.0
#include "nss/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "nss/analysis.hpp"
#include "text.hpp"

namespace nss {

namespace {

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ChecksumError*>(&e)) return "checksum";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const DivergenceError*>(&e)) return "divergence";
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const ContractError*>(&e)) return "contract";
  return "internal";
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& f : text::split_csv_line(s)) {
    if (!f.empty()) out.push_back(f);
  }
  return out;
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("NSS_SEED");
  if (!v || !*v) return std::nullopt;
  TrainConfig c;
  apply_level(c, "seed", v);
  return c.seed;
}

struct Columns {
  std::string u, y;

  void add(CLI::App* app) {
    app->add_option("--u_columns", u, "comma-separated input column names (default u0,u1,...)");
    app->add_option("--y_columns", y, "comma-separated output column names (default y0,y1,...)");
  }
  std::vector<std::string> u_names(Index n_u) const { return u.empty() ? default_columns("u", n_u) : split_list(u); }
  std::vector<std::string> y_names(Index n_y) const { return y.empty() ? default_columns("y", n_y) : split_list(y); }
};

// Factor and training flags shared by `train`.
struct TrainFlags {
  std::string est_type = "FF";
  TrainConfig cfg;
  Index max_iters = 0;
  bool no_normalize = false;
  CLI::Option* max_iters_opt = nullptr;
  CLI::Option* seed_opt = nullptr;

  void add(CLI::App* app) {
    app->add_option("--est_type", est_type, "initial-state estimator; levels FF, LSTM, ZERO, RAND")
        ->capture_default_str();
    app->add_option("--max_time", cfg.max_time, "training time budget in seconds; typical levels 300, 1800, 3600")
        ->capture_default_str();
    app->add_option("--batch_size", cfg.batch_size, "subsequences per minibatch; typical levels 32, 128, 512, 1032")
        ->capture_default_str();
    app->add_option("--seq_fit_len", cfg.seq_fit_len,
                    "fitting window length m_f; typical levels 40, 80, 160, 320 or 64, 256, 512")
        ->capture_default_str();
    app->add_option("--seq_est_len", cfg.seq_est_len,
                    "estimation window length m_e; typical levels 10, 20, 40, 80 or 10, 40, 100")
        ->capture_default_str();
    app->add_option("--est_hidden_size", cfg.est_hidden_size, "estimator hidden units; typical levels 10, 30")
        ->capture_default_str();
    app->add_option("--learning_rate", cfg.learning_rate, "Adam step size")->capture_default_str();
    seed_opt = app->add_option("--seed", cfg.seed, "random seed (default: NSS_SEED or 0)");
    app->add_option("--val_fraction", cfg.val_fraction, "fraction of the record held out for validation")
        ->capture_default_str();
    app->add_option("--val_stride", cfg.val_stride, "stride between validation windows (0: seq_fit_len)")
        ->capture_default_str();
    app->add_option("--val_every", cfg.val_every, "iterations between validations")->capture_default_str();
    max_iters_opt = app->add_option("--max_iters", max_iters, "stop after this many iterations instead of max_time");
    app->add_flag("--no_normalize", no_normalize, "train on raw signals instead of standardized ones");
  }

  TrainConfig config() const {
    TrainConfig c = cfg;
    c.est_type = parse_estimator_kind(est_type);
    if (max_iters_opt->count()) c.max_iters = max_iters;
    if (!seed_opt->count()) c.seed = env_seed().value_or(0);
    c.normalize = !no_normalize;
    c.validate();
    return c;
  }
};

struct ModelFlags {
  ModelSpec spec;
  bool no_skip = false;

  void add(CLI::App* app) {
    app->add_option("--n_x", spec.n_x, "state dimension")->capture_default_str();
    app->add_option("--hidden_f", spec.hidden_f, "hidden units of the state-transition network")->capture_default_str();
    app->add_option("--hidden_g", spec.hidden_g, "hidden units of the output network")->capture_default_str();
    app->add_flag("--no_skip", no_skip, "drop the direct linear terms of both networks");
  }
  ModelSpec model(Index n_u, Index n_y) const {
    ModelSpec m = spec;
    m.n_u = n_u;
    m.n_y = n_y;
    m.skip_f = m.skip_g = !no_skip;
    m.validate();
    return m;
  }
};

std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& suffix) {
  auto q = p;
  q.replace_extension();
  q += suffix;
  return q;
}

void ensure_parent(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Neural state-space system identification"};
  app.name("nss");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a record from a random stable neural state-space system");
  std::uint64_t synth_seed = 0;
  Index s_nx = 2, s_nu = 1, s_ny = 1, s_n = 10000, s_test_n = 0;
  double s_noise = 0.01;
  bool s_integrator = false;
  std::filesystem::path s_out, s_test_out, s_truth;
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "generator seed (default: NSS_SEED or 0)");
  synth->add_option("--n_x", s_nx, "state dimension")->capture_default_str();
  synth->add_option("--n_u", s_nu, "input channels")->capture_default_str();
  synth->add_option("--n_y", s_ny, "output channels")->capture_default_str();
  synth->add_option("--n", s_n, "samples in the main record")->capture_default_str();
  synth->add_option("--noise_std", s_noise, "output noise relative to each clean channel's std")->capture_default_str();
  synth->add_flag("--integrator", s_integrator, "make the last state a pure accumulator of the first input");
  synth->add_option("--out", s_out, "CSV file for the record")->required();
  synth->add_option("--test_n", s_test_n, "extra samples continuing the record, written to --test_out");
  synth->add_option("--test_out", s_test_out, "CSV file for the continuation");
  synth->add_option("--truth", s_truth, "checkpoint of the generating system (default: <out>_truth.json)");

  // train
  auto* trn = app.add_subcommand("train", "fit a model and state estimator on one record");
  std::filesystem::path t_data, t_out, t_log;
  Columns t_cols;
  TrainFlags tflags;
  ModelFlags mflags;
  trn->add_option("--data", t_data, "training CSV")->required()->check(CLI::ExistingFile);
  t_cols.add(trn);
  tflags.add(trn);
  mflags.add(trn);
  trn->add_option("--out", t_out, "checkpoint to write")->required();
  trn->add_option("--log", t_log, "training log CSV (default: <out>_log.csv)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "simulate a checkpoint on a test record and report FIT");
  std::filesystem::path e_ckpt, e_data, e_report, e_trace;
  Columns e_cols;
  std::string e_policy = "estimator";
  Index e_skip = 0;
  ev->add_option("--checkpoint", e_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", e_data, "test CSV")->required()->check(CLI::ExistingFile);
  e_cols.add(ev);
  ev->add_option("--init_policy", e_policy, "estimator or zero-full")->capture_default_str();
  ev->add_option("--skip", e_skip, "extra leading samples left out of the score")->capture_default_str();
  ev->add_option("--report", e_report, "FitReport JSON to write");
  ev->add_option("--trace", e_trace, "path stem for per-channel trace CSVs (<stem>_y0.csv, ...)");

  // campaign
  auto* camp = app.add_subcommand("campaign", "run every configuration of a factor grid");
  std::filesystem::path c_config, c_out;
  Index c_par = 0;
  camp->add_option("--config", c_config, "campaign JSON file")->required()->check(CLI::ExistingFile);
  camp->add_option("--out_dir", c_out, "override the output directory");
  camp->add_option("--parallelism", c_par, "override the number of concurrent runs");

  // analyze
  auto* an = app.add_subcommand("analyze", "main effects, interactions and repeatability from a results CSV");
  std::filesystem::path a_results, a_out;
  AnalysisOptions a_opts;
  std::string a_filter;
  an->add_option("--results", a_results, "results CSV of a campaign")->required()->check(CLI::ExistingFile);
  an->add_option("--out_dir", a_out, "directory for tables and plots")->required();
  an->add_option("--response", a_opts.response, "fit_percent, val_loss, iters or wall_s")->capture_default_str();
  an->add_option("--filter", a_filter, "restrict records, e.g. max_time=3600,seq_fit_len=40");
  an->add_option("--bins", a_opts.bins, "histogram bins")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      if (!synth_seed_opt->count()) synth_seed = env_seed().value_or(0);
      if (s_test_n > 0 && s_test_out.empty()) throw ConfigError("--test_n needs --test_out");
      SynthOptions opts;
      opts.integrator = s_integrator;
      auto sys = synth_system(synth_seed, s_nx, s_nu, s_ny, s_n + s_test_n, s_noise, opts);
      const auto un = default_columns("u", s_nu);
      const auto yn = default_columns("y", s_ny);
      ensure_parent(s_out);
      save_csv(sys.data.slice(0, s_n), s_out, un, yn);
      if (s_test_n > 0) {
        ensure_parent(s_test_out);
        save_csv(sys.data.slice(s_n, s_test_n), s_test_out, un, yn);
      }
      Checkpoint truth;
      truth.model = sys.truth;
      truth.config.est_type = EstimatorKind::ZERO;
      truth.config.seed = synth_seed;
      truth.estimator = StateEstimator<double>::init(truth.config.estimator_spec(), sys.truth.spec, 0);
      truth.normalizer = Normalizer::identity(s_nu, s_ny);
      const auto truth_path = s_truth.empty() ? with_suffix(s_out, "_truth.json") : s_truth;
      ensure_parent(truth_path);
      save_checkpoint(truth, truth_path);
      std::cout << "wrote " << s_out.string() << " (" << s_n << " samples)";
      if (s_test_n > 0) std::cout << ", " << s_test_out.string() << " (" << s_test_n << " samples)";
      std::cout << ", " << truth_path.string() << '\n';
    } else if (*trn) {
      const TrainConfig cfg = tflags.config();
      const auto un = split_list(t_cols.u);
      const auto yn = split_list(t_cols.y);
      const Index n_u = un.empty() ? 1 : static_cast<Index>(un.size());
      const Index n_y = yn.empty() ? 1 : static_cast<Index>(yn.size());
      const auto data = load_csv(t_data, t_cols.u_names(n_u), t_cols.y_names(n_y));
      const ModelSpec ms = mflags.model(n_u, n_y);
      const auto split = split_train_val(data, cfg.val_fraction, cfg.seq_est_len, cfg.seq_fit_len);
      const auto res = train(ms, cfg, split.train, split.validation);
      ensure_parent(t_out);
      save_checkpoint(res.best, t_out);
      const auto log_path = t_log.empty() ? with_suffix(t_out, "_log.csv") : t_log;
      ensure_parent(log_path);
      write_training_log(res.log, log_path);
      std::cout << "iterations " << res.iterations << ", best validation loss "
                << text::format_double(res.best.best_val_loss) << " at iteration " << res.best.iteration << ", "
                << text::format_shortest(std::round(res.elapsed_s * 100) / 100) << " s\n";
    } else if (*ev) {
      const auto ckpt = load_checkpoint(e_ckpt);
      const auto& ms = ckpt.model.spec;
      const auto data = load_csv(e_data, e_cols.u_names(ms.n_u), e_cols.y_names(ms.n_y));
      EvalOptions opts{parse_init_policy(e_policy), e_skip};
      const auto report = evaluate_model(ckpt, data, opts);
      if (!e_report.empty()) {
        ensure_parent(e_report);
        std::ofstream out(e_report);
        if (!out) throw IoError("cannot write '" + e_report.string() + "'");
        out << fit_report_json(report) << '\n';
      }
      if (!e_trace.empty()) {
        ensure_parent(e_trace);
        write_traces(report, e_trace);
      }
      std::cout << "FIT " << text::format_shortest(std::round(report.fit_percent * 100) / 100) << " % over "
                << report.n_test << " samples\n";
    } else if (*camp) {
      auto cf = load_campaign_file(c_config);
      if (!c_out.empty()) cf.options.out_dir = c_out;
      if (c_par > 0) cf.options.parallelism = c_par;
      const auto& ms = cf.options.model_spec;
      const auto u_names = cf.u_columns.empty() ? default_columns("u", ms.n_u) : cf.u_columns;
      const auto y_names = cf.y_columns.empty() ? default_columns("y", ms.n_y) : cf.y_columns;
      cf.options.model_spec.n_u = static_cast<Index>(u_names.size());
      cf.options.model_spec.n_y = static_cast<Index>(y_names.size());
      const auto train_data = load_csv(cf.train_data, u_names, y_names);
      const auto test_data = load_csv(cf.test_data, u_names, y_names);
      const auto res = run_campaign(cf.grid, train_data, test_data, cf.options);
      Index ok = 0;
      for (const auto& r : res.records) ok += r.status == RunStatus::ok;
      std::cout << res.records.size() << " runs (" << res.executed << " executed, " << ok << " ok), results in "
                << (cf.options.out_dir / "results.csv").string() << '\n';
    } else if (*an) {
      a_opts.filter = parse_filter(a_filter);
      const auto records = load_results(a_results);
      const auto written = analyze_results(records, a_out, a_opts);
      std::cout << "wrote " << written.size() << " files to " << a_out.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << error_kind(e) << ": " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}

}  // namespace nss
