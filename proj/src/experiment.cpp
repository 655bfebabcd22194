// SPDX-License-Identifier: Apache-2.0
#include "tdae/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "tdae/checkpoint.hpp"

namespace tdae {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename Scalar>
EvalRecord evaluate(const AgentParams<Scalar>& params, const Scenario& scenario, Index episodes, std::uint64_t seed,
                    ActionSelection selection) {
  if (episodes < 1) throw ConfigError("evaluation needs at least one episode");
  const auto& net = params.config;
  if (scenario.observation_shape() != net.input_shape) {
    throw ConfigError("evaluation scenario does not match the network input shape");
  }
  const Index d = net.obs_size();
  const Index hs = net.use_gru ? net.hidden_size : 0;
  const auto& is = net.input_shape;
  const auto E = static_cast<std::size_t>(episodes);

  std::vector<Env> envs;
  std::vector<Tensor<double>> obs(E);
  std::vector<Rng> rngs;
  envs.reserve(E);
  rngs.reserve(E);
  for (std::size_t e = 0; e < E; ++e) {
    envs.emplace_back(scenario);
    obs[e] = envs[e].reset(stream_seed({seed, tag(StreamTag::kEvalEpisode), e}));
    rngs.emplace_back(stream_seed({seed, tag(StreamTag::kEvalAction), e}));
  }
  Tensor<Scalar> hidden({episodes, hs});
  EvalRecord rec;
  rec.seed = seed;
  rec.returns.assign(E, 0.0);
  std::vector<Index> active(E);
  for (std::size_t e = 0; e < E; ++e) active[e] = static_cast<Index>(e);

  while (!active.empty()) {
    const auto A = static_cast<Index>(active.size());
    Tensor<Scalar> ob({A, is[0], is[1], is[2]});
    Tensor<Scalar> hb({A, hs});
    for (Index j = 0; j < A; ++j) {
      const Index e = active[static_cast<std::size_t>(j)];
      ob.data().segment(j * d, d) = obs[static_cast<std::size_t>(e)].data().template cast<Scalar>();
      hb.data().segment(j * hs, hs) = hidden.data().segment(e * hs, hs);
    }
    const PolicyOutput<Scalar> out = policy_forward(params, ob, hb, false);
    std::vector<Index> still;
    for (Index j = 0; j < A; ++j) {
      const Index e = active[static_cast<std::size_t>(j)];
      const auto ue = static_cast<std::size_t>(e);
      const Index a = select_action(out.probs.row(j), selection, rngs[ue]);
      StepResult res = envs[ue].step(static_cast<int>(a));
      rec.returns[ue] += res.reward;
      hidden.data().segment(e * hs, hs) = out.hidden.data().segment(j * hs, hs);
      if (!res.terminated && !res.truncated) {
        obs[ue] = std::move(res.obs);
        still.push_back(e);
      }
    }
    active = std::move(still);
  }
  const Eigen::Map<const Eigen::VectorXd> r(rec.returns.data(), episodes);
  rec.mean_return = r.mean();
  rec.return_stddev = std::sqrt((r.array() - rec.mean_return).square().mean());
  return rec;
}

RunPaths::RunPaths(fs::path run_dir)
    : dir(run_dir),
      manifest(run_dir / "manifest.json"),
      metrics(run_dir / "metrics.csv"),
      updates(run_dir / "updates.csv"),
      evals(run_dir / "evals.jsonl"),
      episodes(run_dir / "episodes.csv"),
      timing(run_dir / "timing.csv"),
      checkpoints(run_dir / "checkpoints") {}

fs::path run_directory(const ExperimentConfig& config, std::uint64_t seed) {
  return config.output_dir / ("seed_" + std::to_string(seed));
}

std::string checkpoint_metadata(const ExperimentConfig& config, std::uint64_t seed, std::uint64_t frames) {
  Json meta;
  meta["version"] = kVersion;
  meta["config"] = Json::parse(config_to_json(config));
  meta["seed"] = seed;
  meta["frames"] = frames;
  return meta.dump();
}

CheckpointInfo load_checkpoint(const fs::path& path) {
  Checkpoint ck = read_checkpoint(path);
  Json meta;
  try {
    meta = Json::parse(ck.metadata);
  } catch (const Json::parse_error& e) {
    throw ConfigError("checkpoint metadata is not valid JSON: " + path.string());
  }
  if (!meta.contains("config") || !meta.contains("seed") || !meta.contains("frames")) {
    throw ConfigError("checkpoint metadata lacks config, seed or frames: " + path.string());
  }
  CheckpointInfo info;
  info.config = parse_config(meta["config"].dump());
  info.seed = meta["seed"].get<std::uint64_t>();
  info.frames = meta["frames"].get<std::uint64_t>();
  info.params = AgentParams<double>{info.config.network, std::move(ck.params)};
  return info;
}

namespace {

class ManifestWriter {
 public:
  ManifestWriter(const ExperimentConfig& config, std::uint64_t seed, const RunPaths& paths) : path_(paths.manifest) {
    j_["version"] = kVersion;
    j_["seed"] = seed;
    j_["status"] = "running";
    j_["config"] = Json::parse(config_to_json(config));
    j_["files"] = Json{{"metrics", paths.metrics.filename().string()},
                       {"updates", paths.updates.filename().string()},
                       {"evals", paths.evals.filename().string()},
                       {"episodes", paths.episodes.filename().string()},
                       {"timing", paths.timing.filename().string()},
                       {"checkpoints", Json::array()}};
    write();
  }

  void add_checkpoint(const fs::path& p) { j_["files"]["checkpoints"].push_back(p.filename().string()); }

  void finish(std::uint64_t updates, std::uint64_t frames) {
    j_["status"] = "complete";
    j_["updates"] = updates;
    j_["frames"] = frames;
    write();
  }

  void fail(const std::string& error, std::uint64_t updates, std::uint64_t frames) {
    j_["status"] = "failed";
    j_["partial"] = true;
    j_["error"] = error;
    j_["updates"] = updates;
    j_["frames"] = frames;
    try {
      write();
    } catch (...) {
    }
  }

 private:
  void write() const {
    std::ofstream os(path_, std::ios::trunc);
    os << j_.dump(2) << "\n";
    if (!os) throw std::runtime_error("failed writing manifest: " + path_.string());
  }

  fs::path path_;
  Json j_;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + p.string());
  return os;
}

void check_stream(const std::ostream& os, const fs::path& p) {
  if (!os) throw std::runtime_error("failed writing " + p.string());
}

struct LossAverage {
  double policy = 0.0, value = 0.0, entropy = 0.0, tdae = 0.0;
  std::uint64_t count = 0;
  void add(const UpdateStats& s) {
    policy += s.policy_loss;
    value += s.value_loss;
    entropy += s.mean_entropy;
    tdae += s.tdae_weighted;
    ++count;
  }
  double avg(double v) const { return count ? v / static_cast<double>(count) : 0.0; }
};

template <typename Scalar>
RunResult run_impl(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log) {
  config.validate();
  RunResult result{RunPaths(run_directory(config, seed)), 0, 0, {}};
  const RunPaths& paths = result.paths;
  fs::create_directories(paths.checkpoints);
  ManifestWriter manifest(config, seed, paths);
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  try {
    AgentParams<Scalar> params = init_params<Scalar>(seed, config.network);
    RmsProp<Scalar> optim(params.params, config.optimizer);
    auto workers = make_workers<Scalar>(config.scenario, config.rollout.workers, seed, config.network);
    const TrainSettings settings = config.train_settings();

    auto metrics = open_out(paths.metrics);
    auto updates = open_out(paths.updates);
    auto evals = open_out(paths.evals);
    auto episodes = open_out(paths.episodes);
    auto timing = open_out(paths.timing);
    metrics << "frames,seed,mean_return,stddev,policy_loss,value_loss,entropy,tdae_loss,wall_time\n";
    updates << "update,frames,policy_loss,value_loss,entropy_loss,mean_entropy,tdae_loss,tdae_weighted,total,"
               "grad_norm,clip_scale\n";
    episodes << "frames,worker,episode,return,length,truncated\n";
    timing << "frames,wall_time\n";

    const std::uint64_t fpu = config.frames_per_update();
    const std::uint64_t total_updates = config.total_frames / fpu;
    std::uint64_t next_eval = config.eval_every_frames;
    LossAverage avg;
    for (std::uint64_t u = 0; u < total_updates; ++u) {
      const Segment<Scalar> seg = collect_segment(params, workers, config.rollout);
      const UpdateStats s = train_update(params, optim, seg.batch, settings, u);
      result.updates = u + 1;
      result.frames += fpu;
      const std::uint64_t frames = result.frames;
      updates << u << ',' << frames << ',' << format_double(s.policy_loss) << ',' << format_double(s.value_loss)
              << ',' << format_double(s.entropy_loss) << ',' << format_double(s.mean_entropy) << ','
              << format_double(s.tdae_loss) << ',' << format_double(s.tdae_weighted) << ','
              << format_double(s.total) << ',' << format_double(s.step.grad_norm) << ','
              << format_double(s.step.clip_scale) << '\n';
      for (const auto& ep : seg.completed) {
        episodes << frames << ',' << ep.worker << ',' << ep.episode << ',' << format_double(ep.episode_return)
                 << ',' << ep.length << ',' << (ep.truncated ? 1 : 0) << '\n';
      }
      avg.add(s);

      if (frames >= next_eval || u + 1 == total_updates) {
        while (next_eval <= frames) next_eval += config.eval_every_frames;
        EvalRecord rec =
            evaluate(std::as_const(params), config.scenario, config.eval_episodes, seed, config.eval_action_selection);
        rec.frames = frames;
        const double wall = elapsed();
        rec.wall_time = config.record_wall_time ? wall : 0.0;
        metrics << frames << ',' << seed << ',' << format_double(rec.mean_return) << ','
                << format_double(rec.return_stddev) << ',' << format_double(avg.avg(avg.policy)) << ','
                << format_double(avg.avg(avg.value)) << ',' << format_double(avg.avg(avg.entropy)) << ','
                << format_double(avg.avg(avg.tdae)) << ',' << format_double(rec.wall_time) << '\n';
        Json ej{{"frames", frames},
                {"seed", seed},
                {"mean_return", rec.mean_return},
                {"return_stddev", rec.return_stddev},
                {"returns", rec.returns},
                {"wall_time", rec.wall_time}};
        evals << ej.dump() << '\n';
        timing << frames << ',' << format_double(wall) << '\n';
        const fs::path ck = paths.checkpoints / ("frames_" + std::to_string(frames) + ".bin");
        write_checkpoint(ck, params.params, checkpoint_metadata(config, seed, frames));
        manifest.add_checkpoint(ck);
        for (std::ofstream* f : {&metrics, &updates, &evals, &episodes, &timing}) f->flush();
        check_stream(metrics, paths.metrics);
        check_stream(updates, paths.updates);
        check_stream(evals, paths.evals);
        check_stream(episodes, paths.episodes);
        if (log) {
          *log << config.name << " seed " << seed << " frames " << frames << " eval " << rec.mean_return << " +- "
               << rec.return_stddev << " (" << static_cast<long>(wall) << "s)\n";
        }
        result.evals.push_back(std::move(rec));
        avg = LossAverage{};
      }
    }
    manifest.finish(result.updates, result.frames);
  } catch (const std::exception& e) {
    manifest.fail(e.what(), result.updates, result.frames);
    throw;
  }
  return result;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log) {
  return config.precision == Precision::kFloat32 ? run_impl<float>(config, seed, log)
                                                 : run_impl<double>(config, seed, log);
}

std::vector<SweepPoint> expand_sweep(const ExperimentConfig& base) {
  const auto& axes = base.sweep;
  std::vector<SweepPoint> points;
  auto make = [&](std::optional<double> g, std::optional<double> l, std::optional<Index> n, bool baseline) {
    SweepPoint p;
    p.config = base;
    p.config.sweep = SweepAxes{};
    p.gamma_aux = g;
    p.lambda = l;
    p.segment_length = n;
    p.baseline = baseline;
    std::string label;
    auto part = [&](const std::string& s) { label += (label.empty() ? "" : "_") + s; };
    if (baseline) {
      p.config.auxiliary.clear();
      part("baseline");
    } else if (g || l) {
      if (p.config.auxiliary.empty()) p.config.auxiliary.push_back(TDAESpec{});
      if (g) p.config.auxiliary[0].gamma_aux = *g, part("g" + format_double(*g));
      if (l) p.config.auxiliary[0].lambda = *l, part("l" + format_double(*l));
    }
    if (n) p.config.rollout.segment_length = *n, part("n" + std::to_string(*n));
    if (label.empty()) label = "base";
    p.label = label;
    p.config.name = base.name + "/" + label;
    p.config.output_dir = base.output_dir / label;
    if (!axes.seeds.empty()) p.config.seeds = axes.seeds;
    p.config.resolve();
    points.push_back(std::move(p));
  };

  std::vector<std::optional<double>> gs, ls;
  std::vector<std::optional<Index>> ns;
  for (double g : axes.gamma_aux) gs.emplace_back(g);
  for (double l : axes.lambda) ls.emplace_back(l);
  for (Index n : axes.segment_length) ns.emplace_back(n);
  if (gs.empty()) gs.emplace_back();
  if (ls.empty()) ls.emplace_back();
  if (ns.empty()) ns.emplace_back();
  const bool only_baseline = axes.include_baseline && axes.gamma_aux.empty() && axes.lambda.empty();
  for (const auto& n : ns) {
    if (axes.include_baseline) make(std::nullopt, std::nullopt, n, true);
    if (only_baseline) continue;
    for (const auto& g : gs) {
      for (const auto& l : ls) make(g, l, n, false);
    }
  }
  std::set<fs::path> dirs;
  for (const auto& p : points) {
    if (!dirs.insert(p.config.output_dir.lexically_normal()).second) {
      throw ConfigError("sweep points share the output path " + p.config.output_dir.string());
    }
  }
  return points;
}

SweepSummary summarize_sweep(const std::vector<SweepPoint>& points,
                             const std::vector<std::vector<double>>& final_returns) {
  if (points.size() != final_returns.size()) throw DimensionError("one result list per sweep point required");
  SweepSummary out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const auto& f = final_returns[i];
    SweepRow row;
    row.label = p.label;
    row.baseline = p.baseline;
    row.segment_length = p.config.rollout.segment_length;
    if (!p.config.auxiliary.empty()) {
      row.gamma_aux = p.config.auxiliary[0].gamma_aux;
      row.lambda = p.config.auxiliary[0].lambda;
    }
    row.seed_count = static_cast<Index>(f.size());
    if (!f.empty()) {
      const Eigen::Map<const Eigen::VectorXd> v(f.data(), static_cast<Index>(f.size()));
      row.final_mean = v.mean();
      if (f.size() > 1) {
        const double var = (v.array() - row.final_mean).square().sum() / static_cast<double>(f.size() - 1);
        row.final_stderr = std::sqrt(var / static_cast<double>(f.size()));
      }
    }
    out.rows.push_back(row);
  }
  std::map<std::pair<double, Index>, std::size_t> best;
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    const auto& r = out.rows[i];
    if (r.baseline || !r.gamma_aux) continue;
    const auto key = std::make_pair(*r.gamma_aux, r.segment_length);
    auto it = best.find(key);
    if (it == best.end() || r.final_mean > out.rows[it->second].final_mean) best[key] = i;
  }
  for (const auto& [key, i] : best) {
    out.best.push_back({key.first, key.second, *out.rows[i].lambda, out.rows[i].final_mean});
  }
  return out;
}

namespace {

void write_summary(const fs::path& dir, const SweepSummary& s) {
  fs::create_directories(dir);
  {
    auto os = open_out(dir / "summary.csv");
    os << "label,gamma_aux,lambda,segment_length,baseline,seeds,final_mean,final_stderr\n";
    for (const auto& r : s.rows) {
      os << r.label << ',' << (r.gamma_aux ? format_double(*r.gamma_aux) : "") << ','
         << (r.lambda ? format_double(*r.lambda) : "") << ',' << r.segment_length << ',' << (r.baseline ? 1 : 0)
         << ',' << r.seed_count << ',' << format_double(r.final_mean) << ',' << format_double(r.final_stderr)
         << '\n';
    }
    check_stream(os, dir / "summary.csv");
  }
  auto os = open_out(dir / "summary.md");
  std::set<Index> ns;
  for (const auto& r : s.rows) ns.insert(r.segment_length);
  for (Index n : ns) {
    std::set<double> gammas, lambdas;
    for (const auto& r : s.rows) {
      if (r.segment_length == n && r.gamma_aux && !r.baseline) {
        gammas.insert(*r.gamma_aux);
        lambdas.insert(*r.lambda);
      }
    }
    os << "## n = " << n << "\n\n";
    for (const auto& r : s.rows) {
      if (r.segment_length == n && r.baseline) {
        os << "Baseline: " << format_double(r.final_mean) << " +- " << format_double(r.final_stderr) << "\n\n";
      }
    }
    if (gammas.empty()) continue;
    os << "| gamma_aux |";
    for (double l : lambdas) os << " lambda " << format_double(l) << " |";
    os << "\n|---|";
    for (std::size_t k = 0; k < lambdas.size(); ++k) os << "---|";
    os << "\n";
    for (double g : gammas) {
      double best_lambda = -1.0;
      for (const auto& b : s.best) {
        if (b.gamma_aux == g && b.segment_length == n) best_lambda = b.lambda;
      }
      os << "| " << format_double(g) << " |";
      for (double l : lambdas) {
        const SweepRow* cell = nullptr;
        for (const auto& r : s.rows) {
          if (!r.baseline && r.segment_length == n && r.gamma_aux == g && r.lambda == l) cell = &r;
        }
        if (!cell) {
          os << " |";
          continue;
        }
        const std::string v = format_double(cell->final_mean);
        os << ' ' << (l == best_lambda ? "**" + v + "**" : v) << " |";
      }
      os << "\n";
    }
    os << "\n";
  }
  check_stream(os, dir / "summary.md");
}

}  // namespace

SweepSummary run_sweep(const ExperimentConfig& base, std::ostream* log) {
  base.validate();
  const std::vector<SweepPoint> points = expand_sweep(base);
  struct Job {
    std::size_t point;
    std::size_t seed_index;
  };
  std::vector<Job> jobs;
  std::vector<std::vector<double>> finals(points.size());
  for (std::size_t p = 0; p < points.size(); ++p) {
    finals[p].assign(points[p].config.seeds.size(), 0.0);
    for (std::size_t s = 0; s < points[p].config.seeds.size(); ++s) jobs.push_back({p, s});
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::vector<std::exception_ptr> errors(jobs.size());
  const auto threads = static_cast<std::size_t>(std::max<Index>(1, base.sweep.jobs));
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const auto& job = jobs[j];
      const auto& cfg = points[job.point].config;
      const std::uint64_t seed = cfg.seeds[job.seed_index];
      try {
        const RunResult r = run_experiment(cfg, seed, threads == 1 ? log : nullptr);
        finals[job.point][job.seed_index] = r.evals.empty() ? 0.0 : r.evals.back().mean_return;
        if (log) {
          std::lock_guard<std::mutex> lock(log_mutex);
          *log << "finished " << points[job.point].label << " seed " << seed << ": final "
               << finals[job.point][job.seed_index] << "\n";
        }
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, jobs.size()); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  SweepSummary summary = summarize_sweep(points, finals);
  write_summary(base.output_dir, summary);
  return summary;
}

template EvalRecord evaluate<double>(const AgentParams<double>&, const Scenario&, Index, std::uint64_t,
                                     ActionSelection);
template EvalRecord evaluate<float>(const AgentParams<float>&, const Scenario&, Index, std::uint64_t,
                                    ActionSelection);

}  // namespace tdae
