// SPDX-License-Identifier: Apache-2.0
#include "tdae/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace tdae {

using Json = nlohmann::ordered_json;

std::string to_string(Precision p) { return p == Precision::kFloat32 ? "float32" : "float64"; }
std::string to_string(ActionSelection a) { return a == ActionSelection::kArgmax ? "argmax" : "sample"; }
std::string to_string(TrunkKind t) {
  switch (t) {
    case TrunkKind::kConv: return "conv";
    case TrunkKind::kMlp: return "mlp";
    case TrunkKind::kNone: return "none";
  }
  return "unknown";
}

namespace {

Precision precision_from_string(const std::string& s) {
  if (s == "float64") return Precision::kFloat64;
  if (s == "float32") return Precision::kFloat32;
  throw ConfigError("precision must be 'float64' or 'float32', got '" + s + "'");
}

ActionSelection selection_from_string(const std::string& s) {
  if (s == "sample") return ActionSelection::kSample;
  if (s == "argmax") return ActionSelection::kArgmax;
  throw ConfigError("action selection must be 'sample' or 'argmax', got '" + s + "'");
}

TrunkKind trunk_from_string(const std::string& s) {
  for (auto t : {TrunkKind::kConv, TrunkKind::kMlp, TrunkKind::kNone}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("trunk must be 'conv', 'mlp' or 'none', got '" + s + "'");
}

/// Strict view of a JSON object: typed reads record the key, finish()
/// rejects every key that was never read.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const Json* find(const std::string& key) {
    if (!has(key)) return nullptr;
    return &j_.at(key);
  }

  void read(const std::string& key, double& out) {
    if (const Json* v = find(key)) out = as_double(*v, at(key));
  }
  void read(const std::string& key, Index& out) {
    if (const Json* v = find(key)) out = as_int(*v, at(key));
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (const Json* v = find(key)) out = as_uint(*v, at(key));
  }
  void read(const std::string& key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(at(key) + " must be a boolean");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const Json* v = find(key)) out = as_string(*v, at(key));
  }
  template <typename T>
  void read_list(const std::string& key, std::vector<T>& out) {
    const Json* v = find(key);
    if (!v) return;
    if (!v->is_array()) throw ConfigError(at(key) + " must be an array");
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string p = at(key) + "[" + std::to_string(i) + "]";
      if constexpr (std::is_same_v<T, double>) {
        out.push_back(as_double((*v)[i], p));
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        out.push_back(as_uint((*v)[i], p));
      } else {
        out.push_back(as_int((*v)[i], p));
      }
    }
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + at(item.key()));
    }
  }

  std::string at(const std::string& key) const { return path_.empty() ? "'" + key + "'" : "'" + path_ + "." + key + "'"; }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  static double as_double(const Json& v, const std::string& where) {
    if (!v.is_number()) throw ConfigError(where + " must be a number");
    return v.get<double>();
  }
  static Index as_int(const Json& v, const std::string& where) {
    if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
    return v.get<Index>();
  }
  static std::uint64_t as_uint(const Json& v, const std::string& where) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(where + " must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  static std::string as_string(const Json& v, const std::string& where) {
    if (!v.is_string()) throw ConfigError(where + " must be a string");
    return v.get<std::string>();
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Json chain_to_json(const TabularChainSpec& c) {
  Json rows = Json::array();
  for (Index r = 0; r < c.transitions.rows(); ++r) {
    Json row = Json::array();
    for (Index k = 0; k < c.transitions.cols(); ++k) row.push_back(c.transitions(r, k));
    rows.push_back(std::move(row));
  }
  Json rewards = Json::array();
  for (Index s = 0; s < c.rewards.size(); ++s) rewards.push_back(c.rewards[s]);
  return Json{{"transitions", rows}, {"rewards", rewards}, {"terminal", c.terminal}, {"start", c.start}};
}

TabularChainSpec chain_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  TabularChainSpec c;
  const Json* rows = r.find("transitions");
  if (!rows || !rows->is_array()) throw ConfigError(r.at("transitions") + " must be an array of rows");
  const auto n = static_cast<Index>(rows->size());
  c.transitions = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    const Json& row = (*rows)[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != n) {
      throw ConfigError(r.at("transitions") + " must be a square matrix");
    }
    for (Index k = 0; k < n; ++k) {
      c.transitions(i, k) = Reader::as_double(row[static_cast<std::size_t>(k)], r.at("transitions"));
    }
  }
  std::vector<double> rewards;
  r.read_list("rewards", rewards);
  c.rewards = Eigen::Map<const Eigen::VectorXd>(rewards.data(), static_cast<Index>(rewards.size()));
  r.read_list("terminal", c.terminal);
  r.read("start", c.start);
  r.finish();
  return c;
}

Json scenario_to_json(const Scenario& s) {
  Json j{{"kind", to_string(s.kind)},
         {"grid_size", s.grid_size},
         {"view_radius", s.view_radius},
         {"full_view", s.full_view},
         {"timeout", s.timeout},
         {"item_count", s.item_count},
         {"indicator_visible_steps", s.indicator_visible_steps}};
  j["fixed_layout_seed"] = s.fixed_layout_seed ? Json(*s.fixed_layout_seed) : Json(nullptr);
  j["const_value"] = s.const_value;
  j["const_shape"] = s.const_shape;
  if (s.kind == ScenarioKind::kTabularChain) j["chain"] = chain_to_json(s.chain);
  return j;
}

Scenario scenario_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  std::string kind;
  r.read("kind", kind);
  if (kind.empty()) throw ConfigError(r.at("kind") + " is required");
  Scenario s = Scenario::defaults(scenario_kind_from_string(kind));
  r.read("grid_size", s.grid_size);
  r.read("view_radius", s.view_radius);
  r.read("full_view", s.full_view);
  r.read("timeout", s.timeout);
  r.read("item_count", s.item_count);
  r.read("indicator_visible_steps", s.indicator_visible_steps);
  if (const Json* v = r.find("fixed_layout_seed")) {
    if (v->is_null()) {
      s.fixed_layout_seed.reset();
    } else {
      s.fixed_layout_seed = Reader::as_uint(*v, r.at("fixed_layout_seed"));
    }
  }
  r.read("const_value", s.const_value);
  std::vector<Index> shape;
  r.read_list("const_shape", shape);
  if (!shape.empty()) {
    if (shape.size() != 3) throw ConfigError(r.at("const_shape") + " must have three entries");
    s.const_shape = {shape[0], shape[1], shape[2]};
  }
  if (const Json* v = r.find("chain")) {
    if (s.kind != ScenarioKind::kTabularChain) throw ConfigError(r.at("chain") + " only applies to tabular_chain");
    s.chain = chain_from_json(*v, r.child("chain"));
  }
  r.finish();
  return s;
}

Json network_to_json(const NetworkConfig& n) {
  Json conv = Json::array();
  for (const auto& l : n.conv_layers) {
    conv.push_back(Json{{"channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}});
  }
  return Json{{"trunk", to_string(n.trunk)},     {"conv_layers", conv},
              {"fc_size", n.fc_size},            {"use_gru", n.use_gru},
              {"hidden_size", n.hidden_size},    {"decoder_sizes", n.decoder_sizes},
              {"policy_init_scale", n.policy_init_scale}};
}

NetworkConfig network_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  NetworkConfig n;
  std::string trunk = to_string(n.trunk);
  r.read("trunk", trunk);
  n.trunk = trunk_from_string(trunk);
  if (const Json* v = r.find("conv_layers")) {
    if (!v->is_array()) throw ConfigError(r.at("conv_layers") + " must be an array");
    n.conv_layers.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      Reader lr((*v)[i], r.child("conv_layers") + "[" + std::to_string(i) + "]");
      ConvLayerSpec l;
      lr.read("channels", l.out_channels);
      lr.read("kernel", l.kernel);
      lr.read("stride", l.stride);
      lr.finish();
      n.conv_layers.push_back(l);
    }
  }
  r.read("fc_size", n.fc_size);
  r.read("use_gru", n.use_gru);
  r.read("hidden_size", n.hidden_size);
  r.read_list("decoder_sizes", n.decoder_sizes);
  r.read("policy_init_scale", n.policy_init_scale);
  r.finish();
  return n;
}

Json config_json(const ExperimentConfig& c) {
  Json aux = Json::array();
  for (const auto& a : c.auxiliary) aux.push_back(Json{{"gamma", a.gamma_aux}, {"lambda", a.lambda}});
  Json j;
  j["name"] = c.name;
  j["scenario"] = scenario_to_json(c.scenario);
  j["network"] = network_to_json(c.network);
  j["rollout"] = Json{{"workers", c.rollout.workers},
                      {"segment_length", c.rollout.segment_length},
                      {"action_selection", to_string(c.rollout.action_selection)},
                      {"parallel_envs", c.rollout.parallel_envs}};
  j["gamma"] = c.gamma;
  j["value_weight"] = c.weights.value;
  j["entropy_weight"] = c.weights.entropy;
  j["auxiliary"] = aux;
  j["optimizer"] = Json{{"learning_rate", c.optimizer.learning_rate},
                        {"decay", c.optimizer.decay},
                        {"epsilon", c.optimizer.epsilon},
                        {"clip_norm", c.optimizer.clip_norm}};
  j["precision"] = to_string(c.precision);
  j["total_frames"] = c.total_frames;
  j["eval_every_frames"] = c.eval_every_frames;
  j["eval_episodes"] = c.eval_episodes;
  j["eval_action_selection"] = to_string(c.eval_action_selection);
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir.string();
  j["record_wall_time"] = c.record_wall_time;
  j["sweep"] = Json{{"lambda", c.sweep.lambda},
                    {"gamma_aux", c.sweep.gamma_aux},
                    {"segment_length", c.sweep.segment_length},
                    {"seeds", c.sweep.seeds},
                    {"include_baseline", c.sweep.include_baseline},
                    {"jobs", c.sweep.jobs}};
  return j;
}

}  // namespace

void ExperimentConfig::resolve() {
  network.input_shape = scenario.observation_shape();
  network.num_actions = kNumActions;
  network.aux_heads = static_cast<Index>(auxiliary.size());
}

void ExperimentConfig::validate() const {
  scenario.validate();
  if (network.input_shape != scenario.observation_shape() || network.num_actions != kNumActions ||
      network.aux_heads != static_cast<Index>(auxiliary.size())) {
    throw ConfigError("network fields are out of sync with the scenario; call resolve()");
  }
  network.validate();
  rollout.validate();
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(weights.value >= 0.0) || !(weights.entropy >= 0.0)) throw ConfigError("loss weights must be non-negative");
  for (const auto& a : auxiliary) {
    try {
      a.validate();
    } catch (const DomainError& e) {
      throw ConfigError(std::string("auxiliary: ") + e.what());
    }
  }
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be positive");
  if (!(optimizer.decay >= 0.0 && optimizer.decay < 1.0)) throw ConfigError("optimizer.decay must lie in [0, 1)");
  if (!(optimizer.epsilon > 0.0)) throw ConfigError("optimizer.epsilon must be positive");
  if (!(optimizer.clip_norm > 0.0)) throw ConfigError("optimizer.clip_norm must be positive");
  if (total_frames < frames_per_update()) {
    throw ConfigError("total_frames must cover at least one update of " + std::to_string(frames_per_update()) +
                      " frames");
  }
  if (eval_every_frames == 0) throw ConfigError("eval_every_frames must be positive");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be at least 1");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (sweep.jobs < 1) throw ConfigError("sweep.jobs must be at least 1");
  for (double g : sweep.gamma_aux) {
    if (!(g >= 0.0 && g < 1.0)) throw ConfigError("sweep.gamma_aux values must lie in [0, 1)");
  }
  for (double l : sweep.lambda) {
    if (!(l >= 0.0)) throw ConfigError("sweep.lambda values must be non-negative");
  }
  for (Index n : sweep.segment_length) {
    if (n < 1) throw ConfigError("sweep.segment_length values must be positive");
  }
}

TrainSettings ExperimentConfig::train_settings() const { return TrainSettings{gamma, weights, auxiliary}; }

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  auto same_aux = [](const std::vector<TDAESpec>& a, const std::vector<TDAESpec>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].gamma_aux != b[i].gamma_aux || a[i].lambda != b[i].lambda) return false;
    }
    return true;
  };
  return name == o.name && scenario == o.scenario && network == o.network && rollout == o.rollout &&
         gamma == o.gamma && weights.value == o.weights.value && weights.entropy == o.weights.entropy &&
         same_aux(auxiliary, o.auxiliary) && optimizer.learning_rate == o.optimizer.learning_rate &&
         optimizer.decay == o.optimizer.decay && optimizer.epsilon == o.optimizer.epsilon &&
         optimizer.clip_norm == o.optimizer.clip_norm && precision == o.precision &&
         total_frames == o.total_frames && eval_every_frames == o.eval_every_frames &&
         eval_episodes == o.eval_episodes && eval_action_selection == o.eval_action_selection && seeds == o.seeds &&
         output_dir == o.output_dir && record_wall_time == o.record_wall_time && sweep == o.sweep;
}

std::string config_to_json(const ExperimentConfig& config, int indent) { return config_json(config).dump(indent); }

ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Reader r(j, "");
  ExperimentConfig c;
  r.read("name", c.name);
  const Json* scenario = r.find("scenario");
  if (!scenario) throw ConfigError("'scenario' is required");
  c.scenario = scenario_from_json(*scenario, "scenario");
  if (const Json* v = r.find("network")) c.network = network_from_json(*v, "network");
  if (const Json* v = r.find("rollout")) {
    Reader rr(*v, "rollout");
    rr.read("workers", c.rollout.workers);
    rr.read("segment_length", c.rollout.segment_length);
    std::string sel = to_string(c.rollout.action_selection);
    rr.read("action_selection", sel);
    c.rollout.action_selection = selection_from_string(sel);
    rr.read("parallel_envs", c.rollout.parallel_envs);
    rr.finish();
  }
  r.read("gamma", c.gamma);
  r.read("value_weight", c.weights.value);
  r.read("entropy_weight", c.weights.entropy);
  if (const Json* v = r.find("auxiliary")) {
    if (!v->is_array()) throw ConfigError("'auxiliary' must be an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      Reader ar((*v)[i], "auxiliary[" + std::to_string(i) + "]");
      TDAESpec a;
      ar.read("gamma", a.gamma_aux);
      ar.read("lambda", a.lambda);
      ar.finish();
      c.auxiliary.push_back(a);
    }
  }
  if (const Json* v = r.find("optimizer")) {
    Reader orr(*v, "optimizer");
    orr.read("learning_rate", c.optimizer.learning_rate);
    orr.read("decay", c.optimizer.decay);
    orr.read("epsilon", c.optimizer.epsilon);
    orr.read("clip_norm", c.optimizer.clip_norm);
    orr.finish();
  }
  std::string precision = to_string(c.precision);
  r.read("precision", precision);
  c.precision = precision_from_string(precision);
  r.read("total_frames", c.total_frames);
  r.read("eval_every_frames", c.eval_every_frames);
  r.read("eval_episodes", c.eval_episodes);
  std::string eval_sel = to_string(c.eval_action_selection);
  r.read("eval_action_selection", eval_sel);
  c.eval_action_selection = selection_from_string(eval_sel);
  r.read_list("seeds", c.seeds);
  std::string out = c.output_dir.string();
  r.read("output_dir", out);
  c.output_dir = out;
  r.read("record_wall_time", c.record_wall_time);
  if (const Json* v = r.find("sweep")) {
    Reader sr(*v, "sweep");
    sr.read_list("lambda", c.sweep.lambda);
    sr.read_list("gamma_aux", c.sweep.gamma_aux);
    sr.read_list("segment_length", c.sweep.segment_length);
    sr.read_list("seeds", c.sweep.seeds);
    sr.read("include_baseline", c.sweep.include_baseline);
    sr.read("jobs", c.sweep.jobs);
    sr.finish();
  }
  r.finish();
  c.resolve();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace tdae
