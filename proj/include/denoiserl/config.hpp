#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "denoiserl/objective.hpp"
#include "denoiserl/policy.hpp"
#include "denoiserl/rollout.hpp"

namespace denoiserl {

// Full run configuration. Serialized as flat `key = value` lines with `#`
// comments; unknown keys are a startup error.
struct TrainConfig {
  // data
  std::string problems_file;
  std::string pool_file;  // may stay empty when k_denoise == 0
  std::string out_dir;

  // group sampling
  int n_main = 12;
  int k_denoise = 4;
  double rho = 0.2;
  int budget = 32;
  int batch_size = 16;
  bool length_fair = true;
  bool prefix_mask = true;

  // objective
  double adv_epsilon = 1e-6;
  double clip_eps_low = 0.2;
  double clip_eps_high = 0.2;
  bool dapo_filter = false;
  std::string loss_agg = "trajectory";  // trajectory | token

  // optimizer
  std::string optimizer = "adam";  // adam | sgd
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int inner_epochs = 1;

  // schedule
  int total_steps = 1000;
  int eval_every = 0;       // 0 = no periodic eval
  int eval_samples = 4;     // AVG@k during periodic eval
  int checkpoint_every = 0; // 0 = final checkpoint only

  // policy
  int context_window = 24;
  int embed_dim = 16;
  int hidden_dim = 64;
  double init_scale = 0.02;

  // seeds
  uint64_t seed_init = 1;
  uint64_t seed_problems = 2;
  uint64_t seed_rollout = 3;
  uint64_t seed_eval = 4;

  // decoding
  double train_temperature = 1.0;
  double train_top_p = 1.0;
  double eval_temperature = 0.6;
  double eval_top_p = 0.95;

  // debug
  bool rollout_dump = false;

  PolicyConfig policy_config() const {
    PolicyConfig cfg;
    cfg.context_window = context_window;
    cfg.embed_dim = embed_dim;
    cfg.hidden_dim = hidden_dim;
    return cfg;
  }

  GroupConfig group_config() const {
    GroupConfig g;
    g.n_main = n_main;
    g.k_denoise = k_denoise;
    g.rho = rho;
    g.budget = budget;
    g.decoding = Decoding{train_temperature, train_top_p, false};
    g.length_fair = length_fair;
    g.prefix_mask = prefix_mask;
    return g;
  }

  Decoding eval_decoding() const { return Decoding{eval_temperature, eval_top_p, false}; }

  ClipConfig clip_config() const { return ClipConfig{clip_eps_low, clip_eps_high}; }

  LossAggregation aggregation() const {
    if (loss_agg == "trajectory") return LossAggregation::kTrajectoryMean;
    if (loss_agg == "token") return LossAggregation::kTokenMean;
    throw std::invalid_argument("loss_agg must be 'trajectory' or 'token'");
  }

  void validate() const {
    if (n_main < 1) throw std::invalid_argument("config: n_main must be >= 1");
    if (k_denoise < 0) throw std::invalid_argument("config: k_denoise must be >= 0");
    if (rho <= 0.0 || rho > 1.0) throw std::invalid_argument("config: rho must be in (0, 1]");
    if (budget < 2) throw std::invalid_argument("config: budget must be >= 2");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (total_steps < 0) throw std::invalid_argument("config: total_steps must be >= 0");
    if (inner_epochs < 1) throw std::invalid_argument("config: inner_epochs must be >= 1");
    if (adv_epsilon <= 0.0) throw std::invalid_argument("config: adv_epsilon must be > 0");
    if (optimizer != "adam" && optimizer != "sgd")
      throw std::invalid_argument("config: optimizer must be 'adam' or 'sgd'");
    aggregation();
    clip_config().validate();
    policy_config().validate();
  }
};

namespace detail {

inline bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("expected a boolean (true/false/1/0), got '" + std::string(v) + "'");
}

}  // namespace detail

inline void apply_config_line(TrainConfig& cfg, std::string_view key, std::string_view value) {
  const std::string v(value);
  if (key == "problems_file") cfg.problems_file = v;
  else if (key == "pool_file") cfg.pool_file = v;
  else if (key == "out_dir") cfg.out_dir = v;
  else if (key == "n_main") cfg.n_main = static_cast<int>(parse_int(value));
  else if (key == "k_denoise") cfg.k_denoise = static_cast<int>(parse_int(value));
  else if (key == "rho") cfg.rho = parse_double(value);
  else if (key == "budget") cfg.budget = static_cast<int>(parse_int(value));
  else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(value));
  else if (key == "length_fair") cfg.length_fair = detail::parse_bool(value);
  else if (key == "prefix_mask") cfg.prefix_mask = detail::parse_bool(value);
  else if (key == "adv_epsilon") cfg.adv_epsilon = parse_double(value);
  else if (key == "clip_eps_low") cfg.clip_eps_low = parse_double(value);
  else if (key == "clip_eps_high") cfg.clip_eps_high = parse_double(value);
  else if (key == "dapo_filter") cfg.dapo_filter = detail::parse_bool(value);
  else if (key == "loss_agg") cfg.loss_agg = v;
  else if (key == "optimizer") cfg.optimizer = v;
  else if (key == "learning_rate") cfg.learning_rate = parse_double(value);
  else if (key == "adam_beta1") cfg.adam_beta1 = parse_double(value);
  else if (key == "adam_beta2") cfg.adam_beta2 = parse_double(value);
  else if (key == "adam_eps") cfg.adam_eps = parse_double(value);
  else if (key == "inner_epochs") cfg.inner_epochs = static_cast<int>(parse_int(value));
  else if (key == "total_steps") cfg.total_steps = static_cast<int>(parse_int(value));
  else if (key == "eval_every") cfg.eval_every = static_cast<int>(parse_int(value));
  else if (key == "eval_samples") cfg.eval_samples = static_cast<int>(parse_int(value));
  else if (key == "checkpoint_every") cfg.checkpoint_every = static_cast<int>(parse_int(value));
  else if (key == "context_window") cfg.context_window = static_cast<int>(parse_int(value));
  else if (key == "embed_dim") cfg.embed_dim = static_cast<int>(parse_int(value));
  else if (key == "hidden_dim") cfg.hidden_dim = static_cast<int>(parse_int(value));
  else if (key == "init_scale") cfg.init_scale = parse_double(value);
  else if (key == "seed_init") cfg.seed_init = static_cast<uint64_t>(parse_int(value));
  else if (key == "seed_problems") cfg.seed_problems = static_cast<uint64_t>(parse_int(value));
  else if (key == "seed_rollout") cfg.seed_rollout = static_cast<uint64_t>(parse_int(value));
  else if (key == "seed_eval") cfg.seed_eval = static_cast<uint64_t>(parse_int(value));
  else if (key == "train_temperature") cfg.train_temperature = parse_double(value);
  else if (key == "train_top_p") cfg.train_top_p = parse_double(value);
  else if (key == "eval_temperature") cfg.eval_temperature = parse_double(value);
  else if (key == "eval_top_p") cfg.eval_top_p = parse_double(value);
  else if (key == "rollout_dump") cfg.rollout_dump = detail::parse_bool(value);
  else throw std::runtime_error("unknown config key '" + std::string(key) + "'");
}

inline TrainConfig parse_config(std::istream& in) {
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string_view stripped = trim(line);
    if (stripped.empty()) continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string_view::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string_view key = trim(stripped.substr(0, eq));
    const std::string_view value = trim(stripped.substr(eq + 1));
    try {
      apply_config_line(cfg, key, value);
    } catch (const std::exception& e) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  return parse_config(in);
}

// Canonical dump of every key; ablation arms persist their resolved configs
// in this form.
inline std::string serialize_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "problems_file = " << c.problems_file << '\n';
  out << "pool_file = " << c.pool_file << '\n';
  out << "out_dir = " << c.out_dir << '\n';
  out << "n_main = " << c.n_main << '\n';
  out << "k_denoise = " << c.k_denoise << '\n';
  out << "rho = " << format_double(c.rho) << '\n';
  out << "budget = " << c.budget << '\n';
  out << "batch_size = " << c.batch_size << '\n';
  out << "length_fair = " << (c.length_fair ? "true" : "false") << '\n';
  out << "prefix_mask = " << (c.prefix_mask ? "true" : "false") << '\n';
  out << "adv_epsilon = " << format_double(c.adv_epsilon) << '\n';
  out << "clip_eps_low = " << format_double(c.clip_eps_low) << '\n';
  out << "clip_eps_high = " << format_double(c.clip_eps_high) << '\n';
  out << "dapo_filter = " << (c.dapo_filter ? "true" : "false") << '\n';
  out << "loss_agg = " << c.loss_agg << '\n';
  out << "optimizer = " << c.optimizer << '\n';
  out << "learning_rate = " << format_double(c.learning_rate) << '\n';
  out << "adam_beta1 = " << format_double(c.adam_beta1) << '\n';
  out << "adam_beta2 = " << format_double(c.adam_beta2) << '\n';
  out << "adam_eps = " << format_double(c.adam_eps) << '\n';
  out << "inner_epochs = " << c.inner_epochs << '\n';
  out << "total_steps = " << c.total_steps << '\n';
  out << "eval_every = " << c.eval_every << '\n';
  out << "eval_samples = " << c.eval_samples << '\n';
  out << "checkpoint_every = " << c.checkpoint_every << '\n';
  out << "context_window = " << c.context_window << '\n';
  out << "embed_dim = " << c.embed_dim << '\n';
  out << "hidden_dim = " << c.hidden_dim << '\n';
  out << "init_scale = " << format_double(c.init_scale) << '\n';
  out << "seed_init = " << c.seed_init << '\n';
  out << "seed_problems = " << c.seed_problems << '\n';
  out << "seed_rollout = " << c.seed_rollout << '\n';
  out << "seed_eval = " << c.seed_eval << '\n';
  out << "train_temperature = " << format_double(c.train_temperature) << '\n';
  out << "train_top_p = " << format_double(c.train_top_p) << '\n';
  out << "eval_temperature = " << format_double(c.eval_temperature) << '\n';
  out << "eval_top_p = " << format_double(c.eval_top_p) << '\n';
  out << "rollout_dump = " << (c.rollout_dump ? "true" : "false") << '\n';
  return out.str();
}

}  // namespace denoiserl
