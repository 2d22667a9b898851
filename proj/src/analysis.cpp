// SPDX-License-Identifier: Apache-2.0
#include "nss/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "text.hpp"

namespace nss {

RecordFilter parse_filter(std::string_view textv) {
  RecordFilter f;
  std::size_t pos = 0;
  while (pos <= textv.size()) {
    auto end = textv.find(',', pos);
    if (end == std::string_view::npos) end = textv.size();
    const auto item = text::trim(textv.substr(pos, end - pos));
    pos = end + 1;
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("filter item '" + std::string(item) + "' is not factor=level");
    const std::string factor(text::trim(item.substr(0, eq)));
    f[factor].push_back(canonical_level(factor, std::string(text::trim(item.substr(eq + 1)))));
  }
  return f;
}

std::vector<RunRecord> apply_filter(const std::vector<RunRecord>& records, const RecordFilter& filter) {
  std::vector<RecordFilter::value_type> canon;
  for (const auto& [factor, levels] : filter) {
    std::vector<std::string> c;
    for (const auto& l : levels) c.push_back(canonical_level(factor, l));
    canon.emplace_back(factor, std::move(c));
  }
  std::vector<RunRecord> out;
  for (const auto& r : records) {
    bool keep = true;
    for (const auto& [factor, levels] : canon) {
      if (std::find(levels.begin(), levels.end(), level_of(r.config, factor)) == levels.end()) {
        keep = false;
        break;
      }
    }
    if (keep) out.push_back(r);
  }
  return out;
}

double response_value(const RunRecord& r, const std::string& response) {
  if (response == "fit_percent") return r.fit_percent;
  if (response == "val_loss") return r.val_loss;
  if (response == "iters") return static_cast<double>(r.iters);
  if (response == "wall_s") return r.wall_s;
  throw ConfigError("unknown response '" + response + "' (expected fit_percent, val_loss, iters or wall_s)");
}

std::vector<std::string> sort_levels(const std::string& factor, std::vector<std::string> levels) {
  if (factor == "est_type") {
    auto rank = [](const std::string& s) {
      for (std::size_t i = 0; i < kAllEstimatorKinds.size(); ++i) {
        if (s == to_string(kAllEstimatorKinds[i])) return i;
      }
      return kAllEstimatorKinds.size();
    };
    std::stable_sort(levels.begin(), levels.end(),
                     [&](const auto& a, const auto& b) { return rank(a) != rank(b) ? rank(a) < rank(b) : a < b; });
    return levels;
  }
  bool numeric = true;
  for (const auto& l : levels) {
    double v = 0.0;
    numeric = numeric && text::parse_double(l, v);
  }
  if (numeric) {
    std::stable_sort(levels.begin(), levels.end(), [](const auto& a, const auto& b) {
      double x = 0.0, y = 0.0;
      text::parse_double(a, x);
      text::parse_double(b, y);
      return x < y;
    });
  } else {
    std::sort(levels.begin(), levels.end());
  }
  return levels;
}

namespace {

std::vector<RunRecord> ok_only(const std::vector<RunRecord>& records, const RecordFilter& filter) {
  std::vector<RunRecord> out;
  for (auto& r : apply_filter(records, filter)) {
    if (r.status == RunStatus::ok) out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> levels_present(const std::vector<RunRecord>& records, const std::string& factor) {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(level_of(r.config, factor));
  return sort_levels(factor, {s.begin(), s.end()});
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sample_sd(const std::vector<double>& v, double mean) {
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

EffectTable main_effects(const std::vector<RunRecord>& records, const std::string& factor, const std::string& response,
                         const RecordFilter& filter) {
  level_of(TrainConfig{}, factor);  // rejects unknown factor names
  const auto ok = ok_only(records, filter);
  EffectTable t{factor, response, {}, static_cast<Index>(ok.size()), 0.0};
  std::vector<double> all;
  for (const auto& level : levels_present(ok, factor)) {
    std::vector<double> v;
    for (const auto& r : ok) {
      if (level_of(r.config, factor) == level) v.push_back(response_value(r, response));
    }
    LevelEffect e{level, static_cast<Index>(v.size()), mean_of(v), std::nullopt, std::nullopt};
    if (v.size() >= 2) {
      e.sd = sample_sd(v, e.mean);
      boost::math::students_t dist(static_cast<double>(v.size() - 1));
      e.half_width = boost::math::quantile(dist, 0.975) * *e.sd / std::sqrt(static_cast<double>(v.size()));
    }
    t.levels.push_back(e);
    all.insert(all.end(), v.begin(), v.end());
  }
  if (!all.empty()) t.grand_mean = mean_of(all);
  return t;
}

InteractionTable interactions(const std::vector<RunRecord>& records, const std::string& factor_a,
                              const std::string& factor_b, const std::string& response, const RecordFilter& filter) {
  level_of(TrainConfig{}, factor_a);
  level_of(TrainConfig{}, factor_b);
  const auto ok = ok_only(records, filter);
  InteractionTable t{factor_a, factor_b, response, levels_present(ok, factor_a), levels_present(ok, factor_b), {}};
  t.cells.assign(t.levels_a.size(), std::vector<std::optional<Cell>>(t.levels_b.size()));
  for (std::size_t i = 0; i < t.levels_a.size(); ++i) {
    for (std::size_t j = 0; j < t.levels_b.size(); ++j) {
      std::vector<double> v;
      for (const auto& r : ok) {
        if (level_of(r.config, factor_a) == t.levels_a[i] && level_of(r.config, factor_b) == t.levels_b[j]) {
          v.push_back(response_value(r, response));
        }
      }
      if (!v.empty()) t.cells[i][j] = Cell{static_cast<Index>(v.size()), mean_of(v)};
    }
  }
  return t;
}

Index Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), Index{0}); }

Histogram make_histogram(const std::vector<double>& values, Index bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  if (values.empty()) return h;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  h.lo = *mn;
  h.hi = *mx;
  if (!(h.hi > h.lo)) {
    h.lo -= 0.5;
    h.hi += 0.5;
  }
  const double w = h.bin_width();
  for (double v : values) {
    auto b = static_cast<Index>(std::floor((v - h.lo) / w));
    b = std::clamp<Index>(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

ReplicationStats replication_stats(const std::vector<RunRecord>& records, const std::string& response, Index bins) {
  std::vector<double> v;
  for (const auto& r : records) {
    if (r.status == RunStatus::ok) v.push_back(response_value(r, response));
  }
  if (v.size() < 2) throw ContractError("replication_stats: needs at least 2 successful records");
  ReplicationStats s;
  s.count = static_cast<Index>(v.size());
  s.mean = mean_of(v);
  s.sd = sample_sd(v, s.mean);
  s.yardstick = 3.0 * s.sd;
  s.histogram = make_histogram(v, bins);
  return s;
}

std::vector<AttritionRow> attrition(const std::vector<RunRecord>& records, const RecordFilter& filter) {
  const auto kept = apply_filter(records, filter);
  std::vector<AttritionRow> rows;
  for (const auto& f : factor_names()) {
    const auto levels = levels_present(kept, f);
    if (levels.size() < 2) continue;
    for (const auto& l : levels) {
      AttritionRow row{f, l};
      for (const auto& r : kept) {
        if (level_of(r.config, f) != l) continue;
        switch (r.status) {
          case RunStatus::ok: ++row.ok; break;
          case RunStatus::diverged: ++row.diverged; break;
          case RunStatus::infeasible: ++row.infeasible; break;
        }
      }
      rows.push_back(row);
    }
  }
  AttritionRow total{"all", "all"};
  for (const auto& r : kept) {
    if (r.status == RunStatus::ok) ++total.ok;
    else if (r.status == RunStatus::diverged) ++total.diverged;
    else ++total.infeasible;
  }
  rows.push_back(total);
  return rows;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

std::string opt(const std::optional<double>& v) { return v ? text::format_double(*v) : ""; }

}  // namespace

void write_effects_csv(const EffectTable& t, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "factor,level,count,mean,sd,ci_half_width,ci_low,ci_high\n";
  for (const auto& e : t.levels) {
    out << t.factor << ',' << e.level << ',' << e.count << ',' << text::format_double(e.mean) << ',' << opt(e.sd) << ','
        << opt(e.half_width) << ',' << (e.half_width ? text::format_double(e.mean - *e.half_width) : "") << ','
        << (e.half_width ? text::format_double(e.mean + *e.half_width) : "") << '\n';
  }
}

void write_interactions_csv(const InteractionTable& t, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << t.factor_a << ',' << t.factor_b << ",count,mean\n";
  for (std::size_t i = 0; i < t.levels_a.size(); ++i) {
    for (std::size_t j = 0; j < t.levels_b.size(); ++j) {
      const auto& c = t.cells[i][j];
      out << t.levels_a[i] << ',' << t.levels_b[j] << ',' << (c ? c->count : 0) << ','
          << (c ? text::format_double(c->mean) : "") << '\n';
    }
  }
}

void write_replication_csv(const ReplicationStats& s, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "count,mean,sd,yardstick_3sd\n"
      << s.count << ',' << text::format_double(s.mean) << ',' << text::format_double(s.sd) << ','
      << text::format_double(s.yardstick) << '\n';
}

void write_histogram_csv(const Histogram& h, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out << text::format_double(h.lo + h.bin_width() * static_cast<double>(b)) << ','
        << text::format_double(h.lo + h.bin_width() * static_cast<double>(b + 1)) << ',' << h.counts[b] << '\n';
  }
}

void write_attrition_csv(const std::vector<AttritionRow>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "factor,level,ok,diverged,infeasible\n";
  for (const auto& r : rows) out << r.factor << ',' << r.level << ',' << r.ok << ',' << r.diverged << ',' << r.infeasible << '\n';
}

// ---- SVG -------------------------------------------------------------------

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v;
  return os.str();
}

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

// Rounded tick label; enough digits to tell neighbouring ticks apart.
std::string tick_label(double v, double step) {
  int digits = step > 0 ? std::max(0, static_cast<int>(std::ceil(-std::log10(step))) + 1) : 2;
  digits = std::min(digits, 6);
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

struct Range {
  double lo = 0.0, hi = 1.0;

  void pad() {
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double m = 0.08 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

// A plot panel: data y range mapped onto [top, top + h], categorical or linear x.
struct Panel {
  double left, top, w, h;
  Range y;

  double py(double v) const { return top + h * (1.0 - (v - y.lo) / (y.hi - y.lo)); }
  double px_cat(std::size_t i, std::size_t n) const { return left + w * (static_cast<double>(i) + 0.5) / static_cast<double>(n); }

  void frame(std::ostream& o, const std::string& title, const std::string& ylabel) const {
    o << "<rect x='" << num(left) << "' y='" << num(top) << "' width='" << num(w) << "' height='" << num(h)
      << "' fill='none' stroke='#333'/>\n";
    o << "<text x='" << num(left + w / 2) << "' y='" << num(top - 8) << "' text-anchor='middle' font-size='13'>"
      << esc(title) << "</text>\n";
    const int ticks = 5;
    const double step = (y.hi - y.lo) / ticks;
    for (int k = 0; k <= ticks; ++k) {
      const double v = y.lo + step * k;
      o << "<line x1='" << num(left - 4) << "' x2='" << num(left) << "' y1='" << num(py(v)) << "' y2='" << num(py(v))
        << "' stroke='#333'/>\n";
      o << "<text x='" << num(left - 6) << "' y='" << num(py(v) + 4) << "' text-anchor='end' font-size='10'>"
        << tick_label(v, step) << "</text>\n";
    }
    if (!ylabel.empty()) {
      o << "<text transform='translate(" << num(left - 48) << ',' << num(top + h / 2)
        << ") rotate(-90)' text-anchor='middle' font-size='11'>" << esc(ylabel) << "</text>\n";
    }
  }

  void x_labels(std::ostream& o, const std::vector<std::string>& labels) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      o << "<text x='" << num(px_cat(i, labels.size())) << "' y='" << num(top + h + 16)
        << "' text-anchor='middle' font-size='10'>" << esc(labels[i]) << "</text>\n";
    }
  }
};

void svg_open(std::ostream& o, double w, double h) {
  o << "<?xml version='1.0' encoding='UTF-8'?>\n<svg xmlns='http://www.w3.org/2000/svg' width='" << num(w)
    << "' height='" << num(h) << "' viewBox='0 0 " << num(w) << ' ' << num(h)
    << "' font-family='sans-serif'>\n<rect width='100%' height='100%' fill='white'/>\n";
}

}  // namespace

void write_effects_svg(const std::vector<EffectTable>& tables, const std::filesystem::path& path) {
  const double pw = 220, ph = 200, margin_l = 70, margin_t = 40, gap = 30;
  Range y{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& t : tables) {
    for (const auto& e : t.levels) {
      const double hw = e.half_width.value_or(0.0);
      y.lo = std::min(y.lo, e.mean - hw);
      y.hi = std::max(y.hi, e.mean + hw);
    }
  }
  if (!std::isfinite(y.lo)) y = {0.0, 1.0};
  y.pad();

  auto out = open_out(path);
  const double width = margin_l + static_cast<double>(std::max<std::size_t>(tables.size(), 1)) * (pw + gap);
  svg_open(out, width, ph + margin_t + 50);
  for (std::size_t p = 0; p < tables.size(); ++p) {
    const auto& t = tables[p];
    Panel panel{margin_l + static_cast<double>(p) * (pw + gap), margin_t, pw, ph, y};
    panel.frame(out, t.factor, p == 0 ? t.response : "");
    std::vector<std::string> labels;
    for (const auto& e : t.levels) labels.push_back(e.level);
    panel.x_labels(out, labels);
    std::string line;
    for (std::size_t i = 0; i < t.levels.size(); ++i) {
      const auto& e = t.levels[i];
      const double x = panel.px_cat(i, t.levels.size());
      if (e.half_width) {
        out << "<line x1='" << num(x) << "' x2='" << num(x) << "' y1='" << num(panel.py(e.mean - *e.half_width))
            << "' y2='" << num(panel.py(e.mean + *e.half_width)) << "' stroke='" << kPalette[0] << "' stroke-width='2'/>\n";
      }
      out << "<circle cx='" << num(x) << "' cy='" << num(panel.py(e.mean)) << "' r='4' fill='" << kPalette[0] << "'/>\n";
      line += (i ? " " : "") + num(x) + "," + num(panel.py(e.mean));
    }
    if (t.levels.size() > 1) {
      out << "<polyline points='" << line << "' fill='none' stroke='" << kPalette[0] << "' stroke-dasharray='4 3'/>\n";
    }
  }
  out << "</svg>\n";
}

void write_interactions_svg(const InteractionTable& t, const std::filesystem::path& path) {
  Range y{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& row : t.cells) {
    for (const auto& c : row) {
      if (!c) continue;
      y.lo = std::min(y.lo, c->mean);
      y.hi = std::max(y.hi, c->mean);
    }
  }
  if (!std::isfinite(y.lo)) y = {0.0, 1.0};
  y.pad();
  auto out = open_out(path);
  const double legend_w = 140;
  svg_open(out, 70 + 360 + legend_w, 300);
  Panel panel{70, 40, 360, 220, y};
  panel.frame(out, t.factor_a + " x " + t.factor_b, t.response);
  panel.x_labels(out, t.levels_a);
  for (std::size_t j = 0; j < t.levels_b.size(); ++j) {
    const char* colour = kPalette[j % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < t.levels_a.size(); ++i) {
      const auto& c = t.cells[i][j];
      if (!c) continue;  // gaps stay gaps
      const double x = panel.px_cat(i, t.levels_a.size());
      pts += (pts.empty() ? "" : " ") + num(x) + "," + num(panel.py(c->mean));
      out << "<circle cx='" << num(x) << "' cy='" << num(panel.py(c->mean)) << "' r='3' fill='" << colour << "'/>\n";
    }
    if (!pts.empty()) out << "<polyline points='" << pts << "' fill='none' stroke='" << colour << "'/>\n";
    const double ly = 50 + 16 * static_cast<double>(j);
    out << "<line x1='445' x2='465' y1='" << num(ly) << "' y2='" << num(ly) << "' stroke='" << colour
        << "' stroke-width='2'/>\n<text x='470' y='" << num(ly + 4) << "' font-size='11'>" << esc(t.factor_b) << '='
        << esc(t.levels_b[j]) << "</text>\n";
  }
  out << "</svg>\n";
}

void write_histogram_svg(const ReplicationStats& s, const std::string& response, const std::filesystem::path& path) {
  const auto& h = s.histogram;
  Range y{0.0, static_cast<double>(*std::max_element(h.counts.begin(), h.counts.end()))};
  if (!(y.hi > 0)) y.hi = 1;
  y.hi *= 1.1;
  auto out = open_out(path);
  svg_open(out, 480, 300);
  Panel panel{60, 40, 380, 210, y};
  std::ostringstream title;
  title << response << ": mean " << num(s.mean) << ", sd " << num(s.sd) << ", n " << s.count;
  panel.frame(out, title.str(), "count");
  const double bw = panel.w / static_cast<double>(h.counts.size());
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    const double top = panel.py(static_cast<double>(h.counts[b]));
    out << "<rect x='" << num(panel.left + bw * static_cast<double>(b)) << "' y='" << num(top) << "' width='" << num(bw)
        << "' height='" << num(panel.top + panel.h - top) << "' fill='" << kPalette[0] << "' stroke='white'/>\n";
  }
  const double step = h.hi - h.lo;
  out << "<text x='" << num(panel.left) << "' y='" << num(panel.top + panel.h + 16) << "' font-size='10'>"
      << tick_label(h.lo, step / 10) << "</text>\n<text x='" << num(panel.left + panel.w) << "' y='"
      << num(panel.top + panel.h + 16) << "' text-anchor='end' font-size='10'>" << tick_label(h.hi, step / 10)
      << "</text>\n";
  out << "</svg>\n";
}

std::vector<std::filesystem::path> analyze_results(const std::vector<RunRecord>& records,
                                                   const std::filesystem::path& out_dir, const AnalysisOptions& options) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  auto note = [&](const std::filesystem::path& p) { written.push_back(p); };

  const auto rows = attrition(records, options.filter);
  write_attrition_csv(rows, out_dir / "attrition.csv");
  note(out_dir / "attrition.csv");

  const auto ok = ok_only(records, options.filter);
  std::vector<std::string> varying;
  for (const auto& f : factor_names()) {
    if (f != "seed" && levels_present(ok, f).size() > 1) varying.push_back(f);
  }

  std::vector<EffectTable> tables;
  for (const auto& f : varying) {
    tables.push_back(main_effects(records, f, options.response, options.filter));
    const auto p = out_dir / ("effects_" + f + ".csv");
    write_effects_csv(tables.back(), p);
    note(p);
  }
  if (!tables.empty()) {
    write_effects_svg(tables, out_dir / "main_effects.svg");
    note(out_dir / "main_effects.svg");
  }

  for (std::size_t a = 0; a < varying.size(); ++a) {
    for (std::size_t b = a + 1; b < varying.size(); ++b) {
      const auto t = interactions(records, varying[a], varying[b], options.response, options.filter);
      const auto stem = "interaction_" + varying[a] + "_" + varying[b];
      write_interactions_csv(t, out_dir / (stem + ".csv"));
      write_interactions_svg(t, out_dir / (stem + ".svg"));
      note(out_dir / (stem + ".csv"));
      note(out_dir / (stem + ".svg"));
    }
  }

  // Repeatability only makes sense when the records differ in seed alone.
  if (varying.empty() && ok.size() >= 2) {
    const auto s = replication_stats(ok, options.response, options.bins);
    write_replication_csv(s, out_dir / "replication.csv");
    write_histogram_csv(s.histogram, out_dir / "histogram.csv");
    write_histogram_svg(s, options.response, out_dir / "histogram.svg");
    note(out_dir / "replication.csv");
    note(out_dir / "histogram.csv");
    note(out_dir / "histogram.svg");
  }
  return written;
}

}  // namespace nss
