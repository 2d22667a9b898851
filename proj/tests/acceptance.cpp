// SPDX-License-Identifier: Apache-2.0
// End-to-end checks, one PASS/FAIL line each. Exits nonzero when any check fails.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "nss/analysis.hpp"
#include "oracle.hpp"

using namespace nss;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

MatrixXd random_matrix(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  MatrixXd m(r, c);
  for (Index k = 0; k < m.size(); ++k) m.reshaped()(k) = d(rng);
  return m;
}

Dataset random_dataset(Index n, Index n_u, Index n_y, std::mt19937_64& rng) {
  return {random_matrix(n, n_u, rng), random_matrix(n, n_y, rng), std::nullopt, "r"};
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("nss_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int failures = 0;

void report(const std::string& name, const std::function<std::string(bool&)>& check) {
  bool ok = true;
  std::string detail;
  const auto t0 = Clock::now();
  try {
    detail = check(ok);
  } catch (const std::exception& e) {
    ok = false;
    detail = std::string("exception: ") + e.what();
  }
  char time[32];
  std::snprintf(time, sizeof(time), "%.1f s", seconds_since(t0));
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << " [" << time << "]" << std::endl;
  failures += !ok;
}

// ---------------------------------------------------------------------------

template <typename S>
Matrix<S> as(const MatrixXd& m) {
  return m.template cast<S>();
}

template <typename S>
ParamStore<S> cast_params(const ParamStore<double>& p) {
  ParamStore<S> out;
  for (const auto& e : p.entries()) out.add(e.name, e.value.template cast<S>());
  return out;
}

// Double-precision adjoints against central differences (step 1e-6) of the same graph
// evaluated in long double. In double, cancellation alone puts about eps * L / h of noise
// on each difference, which swamps entries smaller than roughly 1e-6 * L.
template <class Build>
GradCheckReport<long double> check_adjoints(Build&& build, const ParamStore<double>& params) {
  Tape<double> tape;
  const auto out = build(tape, params);
  const auto analytic = cast_params<long double>(backward(tape, out));
  return compare_gradients(build, cast_params<long double>(params), analytic, 1e-6L, 1e-4L);
}

std::string gradients(bool& ok) {
  const auto t0 = Clock::now();
  int instances = 0, passed = 0;
  long double worst = 0.0;
  auto tally = [&](const GradCheckReport<long double>& r) {
    ++instances;
    passed += r.pass;
    worst = std::max(worst, r.max_rel_error);
  };

  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    std::mt19937_64 rng(seed);
    MlpSpec spec{3, 6, 2, seed % 2 == 0};
    auto p = init_params<double>(spec, seed);
    p["b1"] = random_matrix(6, 1, rng);
    p["b2"] = random_matrix(2, 1, rng);
    const MatrixXd x = random_matrix(3, 4, rng);
    const MatrixXd y = random_matrix(2, 4, rng);
    tally(check_adjoints(
        [&](auto& t, const auto& ps) {
          using S = typename std::decay_t<decltype(t)>::Scalar;
          auto out = mlp_forward(t, bind_mlp(t, ps, spec, ""), t.constant(as<S>(x)));
          return t.sum_squares(t.add(out, t.constant(as<S>(-y))), S(0.125));
        },
        p));
  }

  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    std::mt19937_64 rng(100 + seed);
    LstmSpec spec{2, 4, 2};
    auto p = init_params<double>(spec, seed);
    p["b"] = random_matrix(16, 1, rng);
    std::vector<MatrixXd> xs;
    for (int t = 0; t < 6; ++t) xs.push_back(random_matrix(2, 3, rng));
    const MatrixXd y = random_matrix(2, 3, rng);
    tally(check_adjoints(
        [&](auto& t, const auto& ps) {
          using S = typename std::decay_t<decltype(t)>::Scalar;
          std::vector<NodeId> steps;
          for (const auto& x : xs) steps.push_back(t.constant(as<S>(x)));
          auto out = lstm_forward(t, bind_lstm(t, ps, spec, ""), std::span<const NodeId>(steps));
          return t.sum_squares(t.add(out, t.constant(as<S>(-y))));
        },
        p));
  }

  // Estimator followed by a 10-step rollout, then the minibatch loss with several sequences.
  auto loss_instance = [&](std::uint64_t seed, EstimatorKind kind, Index m_f, std::vector<Index> starts) {
    std::mt19937_64 rng(200 + seed);
    ModelSpec ms{2, 1, 1, 4, 4, true, true};
    auto m = NeuralStateSpaceModel<double>::init(ms, seed);
    auto e = StateEstimator<double>::init({kind, 3, 3}, ms, seed + 1);
    const auto d = random_dataset(40, 1, 1, rng);
    const SubsequenceBatch batch{std::move(starts), 3, m_f};
    tally(check_adjoints(
        [&](auto& t, const auto& ps) {
          auto mh = bind_model(t, ms, ps);
          auto eh = bind_estimator(t, e.spec, ms, ps);
          std::mt19937_64 draws(seed);
          return minibatch_loss(t, ms, mh, e.spec, eh, batch, d, draws);
        },
        merge(m.params, e.params)));
  };
  for (std::uint64_t seed = 0; seed < 12; ++seed) loss_instance(seed, kAllEstimatorKinds[seed % 4], 10, {4});
  for (std::uint64_t seed = 0; seed < 10; ++seed) loss_instance(50 + seed, kAllEstimatorKinds[seed % 4], 6, {0, 9, 17, 25});

  const double wall = seconds_since(t0);
  ok = instances >= 50 && passed == instances && wall < 120.0;
  std::ostringstream s;
  s << passed << "/" << instances << " instances below 1e-4 (worst " << static_cast<double>(worst) << "), " << wall
    << " s < 120 s";
  return s.str();
}

std::string loss_oracle(bool& ok) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto kind = kAllEstimatorKinds[seed % 4];
    ModelSpec ms{2 + Index(seed % 2), 1 + Index(seed % 3 == 0), 1 + Index(seed % 4 == 1), 5, 4, seed % 5 != 0, true};
    auto m = NeuralStateSpaceModel<double>::init(ms, seed);
    auto e = StateEstimator<double>::init({kind, 2 + Index(seed % 3), 4}, ms, seed + 7);
    const auto d = random_dataset(50, ms.n_u, ms.n_y, rng);
    const Index m_f = 3 + Index(seed % 5);
    const auto batch = sample_batch(50, e.spec.m_e, m_f, 5, rng);
    std::mt19937_64 r1(seed), r2(seed);
    const double got = minibatch_loss(m, e, batch, d, r1);
    const double ref = oracle::minibatch_loss(m, e, batch.starts, m_f, d, r2);
    worst = std::max(worst, std::abs(got - ref) / std::abs(ref));
  }
  Index bad_counts = 0;
  for (Index n = 2; n < 60; ++n) {
    for (Index me = 0; me < 6; ++me) {
      for (Index mf = 1; me + mf + 1 <= n; ++mf) bad_counts += enumerate_windows(n, me, mf, 1).size() != n - (me + mf);
    }
  }
  ok = worst <= 1e-12 && bad_counts == 0;
  std::ostringstream s;
  s << "20 instances, worst relative difference " << worst << " (<= 1e-12); " << bad_counts
    << " window-count mismatches";
  return s.str();
}

std::string zero_semantics(bool& ok) {
  Index compared = 0, mismatched = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> len(1, 12);
    const Index m_e = len(rng), m_f = len(rng);
    ModelSpec ms{1 + Index(seed % 3), 1 + Index(seed % 2), 1 + Index(seed % 2), 6, 5, seed % 4 != 3, true};
    auto m = NeuralStateSpaceModel<double>::init(ms, seed);
    const auto d = random_dataset(80, ms.n_u, ms.n_y, rng);
    const EstimatorSpec es{EstimatorKind::ZERO, m_e, 1};
    const auto batch = sample_batch(80, m_e, m_f, 6, rng);

    Eager<double> g;
    auto mh = bind_model(g, ms, m.params);
    auto eh = bind_estimator(g, es, ms, m.params);
    std::vector<MatrixXd> u_est, y_est;
    for (Index t = 0; t < m_e; ++t) {
      u_est.push_back(detail::gather_rows(d.u, batch.starts, t));
      y_est.push_back(detail::gather_rows(d.y, batch.starts, t));
    }
    MatrixXd x = estimate(g, es, eh, ms, mh, std::span<const MatrixXd>(u_est), std::span<const MatrixXd>(y_est), rng);
    for (Index j = 0; j < m_f; ++j) {
      const MatrixXd yhat = output(g, mh, x);
      for (std::size_t s = 0; s < batch.starts.size(); ++s) {
        const auto i = batch.starts[s];
        auto sim = simulate(m, VectorXd(VectorXd::Zero(ms.n_x)), MatrixXd(d.u.middleRows(i, m_e + j)));
        for (Index c = 0; c < ms.n_y; ++c) {
          ++compared;
          mismatched += yhat(c, static_cast<Index>(s)) != sim.outputs(m_e + j, c);
        }
      }
      x = step(g, mh, x, detail::gather_rows(d.u, batch.starts, m_e + j));
    }
  }
  ok = compared > 0 && mismatched == 0;
  std::ostringstream s;
  s << compared << " fitting-window predictions compared with zero-state simulations, " << mismatched
    << " not bit-identical";
  return s.str();
}

std::string fit_oracle(bool& ok) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> coef(-10, 10);
  double worst_oracle = 0.0, worst_affine = 0.0, worst_special = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 5 + static_cast<std::size_t>(i) * 3;
    std::vector<double> y(n), yh(n);
    for (std::size_t k = 0; k < n; ++k) {
      y[k] = 2.0 + normal(rng);
      yh[k] = y[k] + 0.3 * normal(rng);
    }
    worst_oracle = std::max(worst_oracle, std::abs(fit_index(y, yh) - oracle::fit(y, yh)));
    double c = coef(rng);
    if (std::abs(c) < 0.1) c = -3.0;
    const double dd = coef(rng);
    auto y2 = y, yh2 = yh;
    for (std::size_t k = 0; k < n; ++k) {
      y2[k] = c * y[k] + dd;
      yh2[k] = c * yh[k] + dd;
    }
    worst_affine = std::max(worst_affine, std::abs(fit_index(y2, yh2) - fit_index(y, yh)));
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    worst_special = std::max(worst_special, std::abs(fit_index(y, y) - 100.0));
    worst_special = std::max(worst_special, std::abs(fit_index(y, std::vector<double>(n, mean))));
  }
  ok = worst_oracle <= 1e-10 && worst_affine <= 1e-10 && worst_special <= 1e-10;
  std::ostringstream s;
  s << "oracle diff " << worst_oracle << ", affine diff " << worst_affine << ", yhat=y / yhat=mean diff "
    << worst_special << " (all <= 1e-10)";
  return s.str();
}

struct DeskRun {
  double fit;
  double seconds;
};

DeskRun desk_run(bool integrator, EstimatorKind kind) {
  const auto t0 = Clock::now();
  SynthOptions o;
  o.integrator = integrator;
  auto s = synth_system(1, 2, 1, 1, 12000, 0.01, o);
  const Dataset train_data = s.data.slice(0, 10000);
  const Dataset test_data = s.data.slice(10000, 2000);
  TrainConfig c;
  c.est_type = kind;
  c.seq_est_len = 20;
  c.seq_fit_len = 64;
  c.batch_size = 64;
  c.learning_rate = 1e-3;
  c.max_iters = 2000;
  const auto split = split_train_val(train_data, c.val_fraction, c.seq_est_len, c.seq_fit_len);
  const auto r = train(ModelSpec{}, c, split.train, split.validation);
  return {evaluate_model(r.best, test_data).fit_percent, seconds_since(t0)};
}

std::string desk_identification(bool& ok) {
  const auto ff = desk_run(false, EstimatorKind::FF);
  const auto ff_int = desk_run(true, EstimatorKind::FF);
  const auto rand_int = desk_run(true, EstimatorKind::RAND);
  const double total = ff.seconds + ff_int.seconds + rand_int.seconds;
  ok = ff.fit >= 90.0 && ff_int.fit > rand_int.fit && total <= 600.0;
  std::ostringstream s;
  s << "FF test FIT " << ff.fit << "% (>= 90); integrator system FF " << ff_int.fit << "% vs RAND " << rand_int.fit
    << "%; " << total << " s <= 600 s";
  return s.str();
}

CampaignOptions small_campaign(const fs::path& dir, Index max_iters) {
  CampaignOptions o;
  o.base.max_iters = max_iters;
  o.base.seq_est_len = 10;
  o.base.seq_fit_len = 32;
  o.base.batch_size = 32;
  o.out_dir = dir;
  return o;
}

std::string repeatability(bool& ok) {
  auto s = synth_system(3, 2, 1, 1, 3000, 0.01);
  const Dataset train_data = s.data.slice(0, 2500), test_data = s.data.slice(2500, 500);
  std::vector<std::uint64_t> seeds(20);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
  const auto dir = scratch("replicate");
  auto o = small_campaign(dir / "runs", 150);
  o.base.est_type = EstimatorKind::FF;
  const auto res = replicate(o.base, seeds, train_data, test_data, o);
  const auto records = load_results(dir / "runs" / "results.csv");
  const auto stats = replication_stats(records);
  analyze_results(records, dir / "analysis");
  const bool files = fs::exists(dir / "analysis" / "histogram.csv") && fs::exists(dir / "analysis" / "histogram.svg");
  ok = res.records.size() == 20 && stats.count == 20 && std::isfinite(stats.mean) && std::isfinite(stats.sd) &&
       stats.histogram.total() == 20 && files;
  std::ostringstream out;
  out << stats.count << " seeds, FIT mean " << stats.mean << "%, sd " << stats.sd << "%, histogram total "
      << stats.histogram.total() << " over " << stats.histogram.counts.size() << " bins";
  return out.str();
}

std::string grid_sizes(bool& ok) {
  const auto a = enumerate_grid(wiener_hammerstein_grid()).size();
  const auto b = enumerate_grid(pick_and_place_grid()).size();
  ok = a == 768 && b == 432;
  return std::to_string(a) + " and " + std::to_string(b) + " configurations (768, 432)";
}

RunRecord fixture_row(const std::string& est, Index batch, std::uint64_t seed, double fit) {
  RunRecord r;
  apply_level(r.config, "est_type", est);
  r.config.batch_size = batch;
  r.config.seed = seed;
  r.fit_percent = fit;
  return r;
}

std::string effects_oracle(bool& ok) {
  // Unbalanced on purpose: FF has one extra replicate at batch 32.
  const std::vector<RunRecord> rows{
      fixture_row("FF", 32, 0, 91.5),   fixture_row("FF", 32, 1, 92.25), fixture_row("FF", 32, 2, 90.0),
      fixture_row("FF", 128, 0, 95.0),  fixture_row("ZERO", 32, 0, 80.0), fixture_row("ZERO", 32, 1, 84.5),
      fixture_row("ZERO", 128, 0, 86.0), fixture_row("ZERO", 128, 1, 89.75), fixture_row("RAND", 32, 0, 70.0),
      fixture_row("RAND", 32, 1, 71.0), fixture_row("RAND", 128, 0, 76.0), fixture_row("RAND", 128, 1, 76.25)};
  // Hand-computed group averages.
  const std::map<std::string, double> est_means{{"FF", (91.5 + 92.25 + 90.0 + 95.0) / 4},
                                                {"ZERO", (80.0 + 84.5 + 86.0 + 89.75) / 4},
                                                {"RAND", (70.0 + 71.0 + 76.0 + 76.25) / 4}};
  const std::map<std::string, double> batch_means{{"32", (91.5 + 92.25 + 90.0 + 80.0 + 84.5 + 70.0 + 71.0) / 7},
                                                  {"128", (95.0 + 86.0 + 89.75 + 76.0 + 76.25) / 5}};
  const std::map<std::pair<std::string, std::string>, double> cells{
      {{"FF", "32"}, (91.5 + 92.25 + 90.0) / 3}, {{"FF", "128"}, 95.0},
      {{"ZERO", "32"}, (80.0 + 84.5) / 2},       {{"ZERO", "128"}, (86.0 + 89.75) / 2},
      {{"RAND", "32"}, (70.0 + 71.0) / 2},       {{"RAND", "128"}, (76.0 + 76.25) / 2}};
  double grand = 0.0;
  for (const auto& r : rows) grand += r.fit_percent;
  grand /= 12.0;

  double worst = 0.0;
  for (const auto& [factor, expected] : {std::pair{std::string("est_type"), est_means},
                                         std::pair{std::string("batch_size"), batch_means}}) {
    const auto t = main_effects(rows, factor);
    double weighted = 0.0;
    Index count = 0;
    for (const auto& l : t.levels) {
      worst = std::max(worst, std::abs(l.mean - expected.at(l.level)));
      weighted += l.mean * static_cast<double>(l.count);
      count += l.count;
    }
    worst = std::max(worst, std::abs(weighted / static_cast<double>(count) - grand));
    worst = std::max(worst, std::abs(t.grand_mean - grand));
    if (t.levels.size() != expected.size() || count != 12) worst = INFINITY;
  }
  const auto it = interactions(rows, "est_type", "batch_size");
  for (std::size_t a = 0; a < it.levels_a.size(); ++a) {
    for (std::size_t b = 0; b < it.levels_b.size(); ++b) {
      if (!it.cells[a][b]) {
        worst = INFINITY;
        continue;
      }
      worst = std::max(worst, std::abs(it.cells[a][b]->mean - cells.at({it.levels_a[a], it.levels_b[b]})));
    }
  }
  ok = worst <= 1e-10;
  std::ostringstream s;
  s << "12-row fixture, worst deviation from hand averages and grand-mean recomposition " << worst << " (<= 1e-10)";
  return s.str();
}

std::string determinism(bool& ok) {
  auto s = synth_system(4, 2, 1, 1, 2000, 0.01);
  const Dataset train_data = s.data.slice(0, 1600), test_data = s.data.slice(1600, 400);
  FactorGrid grid{{{"est_type", {"FF", "LSTM", "ZERO", "RAND"}}, {"seed", {"0", "1"}}}};
  auto fits = [&](const fs::path& dir, Index parallelism) {
    auto o = small_campaign(dir, 30);
    o.parallelism = parallelism;
    run_campaign(grid, train_data, test_data, o);
    std::map<std::string, double> out;
    for (const auto& r : load_results(dir / "results.csv")) out[r.key()] = r.fit_percent;
    return out;
  };
  const auto a = fits(scratch("det_a"), 1);
  const auto b = fits(scratch("det_b"), 2);
  const bool same_fits = a.size() == 8 && a == b;

  // Checkpoint round trip.
  TrainConfig c = small_campaign({}, 30).base;
  c.est_type = EstimatorKind::LSTM;
  const auto split = split_train_val(train_data, c.val_fraction, c.seq_est_len, c.seq_fit_len);
  const auto r = train(ModelSpec{}, c, split.train, split.validation);
  const auto dir = scratch("det_ckpt");
  save_checkpoint(r.best, dir / "c.json");
  const auto back = load_checkpoint(dir / "c.json");
  const auto e1 = evaluate_model(r.best, test_data);
  const auto e2 = evaluate_model(back, test_data);
  const bool round_trip = (e1.y_sim.array() == e2.y_sim.array()).all() && e1.fit_percent == e2.fit_percent;

  // Resume after losing the last two rows and half of another.
  const auto rdir = scratch("det_resume");
  run_campaign(grid, train_data, test_data, small_campaign(rdir, 30));
  std::vector<std::string> lines;
  {
    std::ifstream in(rdir / "results.csv");
    for (std::string l; std::getline(in, l);) lines.push_back(l);
  }
  {
    std::ofstream out(rdir / "results.csv", std::ios::trunc);
    for (std::size_t i = 0; i + 3 < lines.size(); ++i) out << lines[i] << '\n';
    out << lines[lines.size() - 3].substr(0, 10);
  }
  const auto resumed = run_campaign(grid, train_data, test_data, small_campaign(rdir, 30));
  const auto rows = load_results(rdir / "results.csv");
  std::set<std::string> keys;
  for (const auto& row : rows) keys.insert(row.key());
  const bool no_duplicates = rows.size() == 8 && keys.size() == 8 && resumed.executed == 3;

  ok = same_fits && round_trip && no_duplicates;
  std::ostringstream out;
  out << "repeated campaign FIT columns " << (same_fits ? "identical" : "differ") << "; checkpoint round trip "
      << (round_trip ? "bit-identical" : "differs") << "; resumed campaign " << rows.size() << " rows, "
      << keys.size() << " distinct, " << resumed.executed << " re-run";
  return out.str();
}

std::string wall_clock(bool& ok) {
  auto s = synth_system(5, 2, 1, 1, 5000, 0.01);
  TrainConfig c;
  c.max_time = 5.0;
  const auto split = split_train_val(s.data, c.val_fraction, c.seq_est_len, c.seq_fit_len);
  const auto t0 = Clock::now();
  const auto r = train(ModelSpec{}, c, split.train, split.validation);
  const double wall = seconds_since(t0);
  double slack = 0.0;
  for (std::size_t i = 1; i < r.log.size(); ++i) slack = std::max(slack, r.log[i].elapsed_s - r.log[i - 1].elapsed_s);
  const auto dir = scratch("wall");
  save_checkpoint(r.best, dir / "best.json");
  const auto back = load_checkpoint(dir / "best.json");
  const bool valid = std::isfinite(back.best_val_loss) && back.best_val_loss == r.best.best_val_loss &&
                     back.model.params == r.best.model.params;
  ok = wall <= 5.0 + slack && r.iterations > 0 && valid;
  std::ostringstream out;
  out << "returned after " << wall << " s (limit 5 s + " << slack << " s for one iteration), " << r.iterations
      << " iterations, checkpoint " << (valid ? "valid" : "invalid") << " with validation loss " << back.best_val_loss;
  return out.str();
}

}  // namespace

int main() {
  report("gradient correctness", gradients);
  report("loss oracle equivalence", loss_oracle);
  report("ZERO estimator semantics", zero_semantics);
  report("FIT oracle and invariance", fit_oracle);
  report("desk-scale identification", desk_identification);
  report("repeatability statistics", repeatability);
  report("factorial bookkeeping", grid_sizes);
  report("effects analysis oracle", effects_oracle);
  report("determinism and persistence", determinism);
  report("wall-clock contract", wall_clock);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
