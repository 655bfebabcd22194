// SPDX-License-Identifier: Apache-2.0
#include "tdae/report.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "tdae/experiment.hpp"
#include "tdae/svg.hpp"

namespace tdae {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where + ": '" + s + "' is not a number");
  }
}

}  // namespace

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open metrics file: " + path.string());
  static const std::vector<std::string> kHeader{"frames",     "seed",    "mean_return", "stddev",   "policy_loss",
                                                "value_loss", "entropy", "tdae_loss",   "wall_time"};
  std::string line;
  if (!std::getline(is, line) || split(line, ',') != kHeader) {
    throw ConfigError(path.string() + ": unexpected metrics header");
  }
  std::vector<MetricsRow> rows;
  for (Index n = 2; std::getline(is, line); ++n) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    const std::string where = path.string() + ":" + std::to_string(n);
    if (f.size() != kHeader.size()) throw ConfigError(where + ": expected 9 fields");
    MetricsRow r;
    r.frames = static_cast<std::uint64_t>(parse_number(f[0], where));
    r.seed = static_cast<std::uint64_t>(parse_number(f[1], where));
    r.mean_return = parse_number(f[2], where);
    r.stddev = parse_number(f[3], where);
    r.policy_loss = parse_number(f[4], where);
    r.value_loss = parse_number(f[5], where);
    r.entropy = parse_number(f[6], where);
    r.tdae_loss = parse_number(f[7], where);
    r.wall_time = parse_number(f[8], where);
    rows.push_back(r);
  }
  return rows;
}

std::vector<fs::path> glob_paths(const std::string& pattern) {
  const auto wild = pattern.find_first_of("*?[");
  if (wild == std::string::npos) {
    return fs::exists(pattern) ? std::vector<fs::path>{pattern} : std::vector<fs::path>{};
  }
  const auto slash = pattern.rfind('/', wild);
  const fs::path root = slash == std::string::npos ? fs::path(".") : fs::path(pattern.substr(0, slash + 1));
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) return out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::string p = entry.path().string();
    if (slash == std::string::npos && p.rfind("./", 0) == 0) p = p.substr(2);
    if (fnmatch(pattern.c_str(), p.c_str(), 0) == 0) out.emplace_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

RunCurve load_curve(const fs::path& metrics, const std::string& group_by) {
  RunCurve c;
  c.source = metrics.string();
  const auto rows = read_metrics_csv(metrics);
  for (const auto& r : rows) {
    c.frames.push_back(static_cast<double>(r.frames));
    c.returns.push_back(r.mean_return);
    c.seed = r.seed;
  }
  c.group = group_by + "=?";
  const fs::path manifest = metrics.parent_path() / "manifest.json";
  std::ifstream is(manifest);
  if (!is) return c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error&) {
    throw ConfigError("malformed manifest: " + manifest.string());
  }
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  const nlohmann::json* v = j.contains("config") ? &j["config"] : nullptr;
  for (const auto& part : split(group_by, '.')) {
    if (!v || !v->is_object() || !v->contains(part)) {
      v = nullptr;
      break;
    }
    v = &(*v)[part];
  }
  if (v) c.group = group_by + "=" + (v->is_string() ? v->get<std::string>() : v->dump());
  return c;
}

namespace {

double interpolate(const std::vector<double>& x, const std::vector<double>& y, double at) {
  if (at <= x.front()) return y.front();
  if (at >= x.back()) return y.back();
  const auto it = std::upper_bound(x.begin(), x.end(), at);
  const auto i = static_cast<std::size_t>(it - x.begin());
  const double t = (at - x[i - 1]) / (x[i] - x[i - 1]);
  return y[i - 1] + t * (y[i] - y[i - 1]);
}

}  // namespace

std::vector<CurveGroup> aggregate_curves(const std::vector<RunCurve>& curves, std::vector<std::string>* warnings) {
  std::map<std::string, std::vector<const RunCurve*>> groups;
  for (const auto& c : curves) {
    if (c.frames.empty()) {
      if (warnings) warnings->push_back(c.source + ": no evaluations, skipped");
      continue;
    }
    groups[c.group].push_back(&c);
  }
  std::vector<CurveGroup> out;
  for (const auto& [label, members] : groups) {
    const RunCurve* coarsest = members.front();
    bool same = true;
    double lo = members.front()->frames.front(), hi = members.front()->frames.back();
    for (const RunCurve* c : members) {
      same = same && c->frames == members.front()->frames;
      if (c->frames.size() < coarsest->frames.size()) coarsest = c;
      lo = std::max(lo, c->frames.front());
      hi = std::min(hi, c->frames.back());
    }
    CurveGroup g;
    g.label = label;
    g.seeds = static_cast<Index>(members.size());
    for (double f : coarsest->frames) {
      if (same || (f >= lo && f <= hi)) g.frames.push_back(f);
    }
    if (!same && warnings) {
      warnings->push_back(label + ": frame grids differ across seeds; resampled to " +
                          std::to_string(g.frames.size()) + " points of " + coarsest->source);
    }
    const auto k = static_cast<double>(members.size());
    for (double f : g.frames) {
      std::vector<double> ys;
      for (const RunCurve* c : members) ys.push_back(same ? c->returns[g.mean.size()] : interpolate(c->frames, c->returns, f));
      double m = 0.0;
      for (double y : ys) m += y;
      m /= k;
      double ss = 0.0;
      for (double y : ys) ss += (y - m) * (y - m);
      g.mean.push_back(m);
      g.stderr_.push_back(members.size() > 1 ? std::sqrt(ss / (k - 1.0)) / std::sqrt(k) : 0.0);
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::string render_curves_svg(const std::vector<CurveGroup>& groups, const std::string& title) {
  SvgPlot plot(title, "frames", "mean evaluation return");
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    const std::string color = SvgPlot::color(i);
    if (g.seeds > 1) {
      std::vector<double> lo, hi;
      for (std::size_t k = 0; k < g.mean.size(); ++k) {
        lo.push_back(g.mean[k] - g.stderr_[k]);
        hi.push_back(g.mean[k] + g.stderr_[k]);
      }
      plot.band(g.frames, lo, hi, color);
    }
    plot.line(g.frames, g.mean, color);
    plot.legend(g.label + (g.seeds > 1 ? " (" + std::to_string(g.seeds) + " seeds)" : " (1 seed, no band)"), color);
  }
  return plot.render();
}

std::string BimodalityReport::table() const {
  std::ostringstream os;
  os << "theta " << format_double(theta) << (theta_given ? " (given)" : " (midpoint)") << "\n";
  os << "| seed | final-quarter mean | mode | source |\n|---|---|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.seed << " | " << format_double(r.final_mean) << " | " << (r.learning ? "learning" : "failure")
       << " | " << r.source << " |\n";
  }
  os << "\nlearning " << learning << ", failure " << failure << "\n";
  return os.str();
}

BimodalityReport bimodality_report(const std::vector<RunCurve>& curves, std::optional<double> theta) {
  if (curves.empty()) throw DomainError("bimodality report needs at least one run");
  BimodalityReport rep;
  double best = -std::numeric_limits<double>::infinity(), worst = std::numeric_limits<double>::infinity();
  for (const auto& c : curves) {
    const std::size_t n = c.returns.size();
    if (n < 4) {
      throw DomainError(c.source + " has " + std::to_string(n) + " evaluations; at least 4 are needed to classify");
    }
    const std::size_t q = (n + 3) / 4;
    double m = 0.0;
    for (std::size_t i = n - q; i < n; ++i) m += c.returns[i];
    m /= static_cast<double>(q);
    rep.rows.push_back({c.source, c.seed, m, false});
    best = std::max(best, m);
    worst = std::min(worst, m);
  }
  rep.theta_given = theta.has_value();
  rep.theta = theta ? *theta : 0.5 * (best + worst);
  for (auto& r : rep.rows) {
    r.learning = r.final_mean > rep.theta;
    ++(r.learning ? rep.learning : rep.failure);
  }
  return rep;
}

std::string render_bimodality_svg(const std::vector<RunCurve>& curves, const BimodalityReport& report) {
  SvgPlot plot("per-seed evaluation curves", "frames", "mean evaluation return");
  const std::string learn = SvgPlot::color(0), fail = SvgPlot::color(1);
  for (std::size_t i = 0; i < curves.size() && i < report.rows.size(); ++i) {
    plot.line(curves[i].frames, curves[i].returns, report.rows[i].learning ? learn : fail, 1.5, 0.8);
  }
  plot.hline(report.theta, "#555555");
  plot.legend("learning (" + std::to_string(report.learning) + ")", learn);
  plot.legend("failure (" + std::to_string(report.failure) + ")", fail);
  plot.legend("theta " + format_double(report.theta), "#555555");
  return plot.render();
}

std::vector<double> empirical_scaled_return(const std::vector<double>& x, const std::vector<std::uint8_t>& terminated,
                                            const std::vector<std::uint8_t>& truncated,
                                            const std::vector<double>& bootstrap, double gamma) {
  const std::size_t n = x.size();
  if (terminated.size() != n || truncated.size() != n || bootstrap.size() != n) {
    throw DimensionError("empirical return inputs have mismatched lengths");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("TD-AE discount must lie in [0, 1)");
  std::vector<double> g(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double total = 0.0, disc = 1.0;
    for (std::size_t j = t; j < n; ++j) {
      total += disc * (1.0 - gamma) * x[j];
      if (terminated[j]) break;
      if (truncated[j] || j + 1 == n) {
        total += disc * gamma * bootstrap[j];
        break;
      }
      disc *= gamma;
    }
    g[t] = total;
  }
  return g;
}

TraceResult pixel_prediction_trace(const AgentParams<double>& params, const Scenario& scenario,
                                   const std::vector<Index>& pixels, Index steps, double gamma_aux, Index head,
                                   std::uint64_t seed, ActionSelection selection) {
  const auto& net = params.config;
  if (head < 0 || head >= net.aux_heads) {
    throw ConfigError("network has no TD-AE head " + std::to_string(head));
  }
  if (steps < 1) throw ConfigError("trace needs at least one step");
  if (pixels.empty()) throw ConfigError("trace needs at least one pixel");
  const Index d = net.obs_size();
  for (Index p : pixels) {
    if (p < 0 || p >= d) {
      throw DimensionError("pixel index " + std::to_string(p) + " out of range [0, " + std::to_string(d) + ")");
    }
  }
  if (scenario.observation_shape() != net.input_shape) {
    throw ConfigError("trace scenario does not match the network input shape");
  }
  const Index hs = net.use_gru ? net.hidden_size : 0;
  const auto& is = net.input_shape;
  const auto P = static_cast<Index>(pixels.size());
  const auto K = static_cast<std::size_t>(steps);

  TraceResult tr;
  tr.pixels = pixels;
  tr.gamma_aux = gamma_aux;
  tr.steps = steps;
  tr.observation = RowMatrixX<double>::Zero(steps, P);
  tr.prediction = RowMatrixX<double>::Zero(steps, P);
  tr.empirical = RowMatrixX<double>::Zero(steps, P);
  RowMatrixX<double> boot = RowMatrixX<double>::Zero(steps, P);
  std::vector<std::uint8_t> term(K, 0), trunc(K, 0);

  Env env(scenario);
  Rng rng(stream_seed({seed, tag(StreamTag::kTrace)}));
  std::uint64_t episode = 0;
  Tensor<double> obs = env.reset(stream_seed({seed, tag(StreamTag::kTrace), ++episode}));
  Tensor<double> hidden({1, hs});
  auto head_psi = [&](const Tensor<double>& o, const Tensor<double>& h) {
    return policy_forward(params, o.reshaped({1, is[0], is[1], is[2]}), h, true);
  };

  for (std::size_t t = 0; t < K; ++t) {
    const PolicyOutput<double> out = head_psi(obs, hidden);
    const auto& psi = out.psi[static_cast<std::size_t>(head)];
    for (Index j = 0; j < P; ++j) {
      tr.observation(static_cast<Index>(t), j) = obs[pixels[static_cast<std::size_t>(j)]];
      tr.prediction(static_cast<Index>(t), j) = psi[pixels[static_cast<std::size_t>(j)]];
    }
    const Index a = select_action(out.probs.row(0), selection, rng);
    StepResult res = env.step(static_cast<int>(a));
    tr.trajectory.push_back({obs, static_cast<int>(a), res.reward, res.terminated, res.truncated});
    term[t] = res.terminated ? 1 : 0;
    trunc[t] = res.truncated ? 1 : 0;
    if (res.truncated || (t + 1 == K && !res.terminated)) {
      const PolicyOutput<double> next = head_psi(res.obs, out.hidden);
      for (Index j = 0; j < P; ++j) {
        boot(static_cast<Index>(t), j) = next.psi[static_cast<std::size_t>(head)][pixels[static_cast<std::size_t>(j)]];
      }
    }
    if (res.terminated || res.truncated) {
      obs = env.reset(stream_seed({seed, tag(StreamTag::kTrace), ++episode}));
      hidden.data().setZero();
    } else {
      obs = std::move(res.obs);
      hidden = out.hidden;
    }
  }
  for (Index j = 0; j < P; ++j) {
    std::vector<double> x(K), b(K);
    for (std::size_t t = 0; t < K; ++t) {
      x[t] = tr.observation(static_cast<Index>(t), j);
      b[t] = boot(static_cast<Index>(t), j);
    }
    const auto g = empirical_scaled_return(x, term, trunc, b, gamma_aux);
    for (std::size_t t = 0; t < K; ++t) tr.empirical(static_cast<Index>(t), j) = g[t];
  }
  return tr;
}

std::string render_trace_svg(const TraceResult& trace) {
  SvgPlot plot("pixel predictions, gamma " + format_double(trace.gamma_aux), "step", "scaled value");
  std::vector<double> steps;
  for (Index t = 0; t < trace.steps; ++t) steps.push_back(static_cast<double>(t));
  for (Index j = 0; j < static_cast<Index>(trace.pixels.size()); ++j) {
    std::vector<double> pred, emp;
    for (Index t = 0; t < trace.steps; ++t) {
      pred.push_back(trace.prediction(t, j));
      emp.push_back(trace.empirical(t, j));
    }
    const std::string color = SvgPlot::color(static_cast<std::size_t>(j));
    plot.line(steps, emp, color, 1.0, 0.5);
    plot.line(steps, pred, color, 2.0);
    plot.legend("pixel " + std::to_string(trace.pixels[static_cast<std::size_t>(j)]) + " (thin: return)", color);
  }
  return plot.render();
}

void write_trace_csv(const fs::path& path, const TraceResult& trace) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << "step,pixel,observation,prediction,empirical_return\n";
  for (Index t = 0; t < trace.steps; ++t) {
    for (Index j = 0; j < static_cast<Index>(trace.pixels.size()); ++j) {
      os << t << ',' << trace.pixels[static_cast<std::size_t>(j)] << ',' << format_double(trace.observation(t, j))
         << ',' << format_double(trace.prediction(t, j)) << ',' << format_double(trace.empirical(t, j)) << '\n';
    }
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace tdae
