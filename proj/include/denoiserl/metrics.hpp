#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

#include "denoiserl/common.hpp"

namespace denoiserl {

// One telemetry record per training step. Serialized as `key=value` pairs in
// this fixed order:
//   step reward_mean reward_main reward_denoise resp_len cont_len
//   recovery_rate clip_frac grad_norm filtered_groups prefix_gap wall_ms
// Everything except wall_ms is deterministic for fixed seeds.
struct MetricsRecord {
  int step = 0;
  double reward_mean = 0.0;
  double reward_main = 0.0;
  double reward_denoise = 0.0;
  double resp_len = 0.0;        // mean folded response length
  double cont_len = 0.0;        // mean continuation length
  double recovery_rate = 0.0;   // denoise-kind trajectories with reward 1
  double clip_frac = 0.0;
  double grad_norm = 0.0;
  int filtered_groups = 0;
  double prefix_gap = 0.0;      // mean |theta vs behavior| logprob gap on prefix tokens
  double wall_ms = 0.0;
};

inline std::string format_metrics_line(const MetricsRecord& m) {
  std::ostringstream out;
  out << "step=" << m.step
      << " reward_mean=" << format_double(m.reward_mean)
      << " reward_main=" << format_double(m.reward_main)
      << " reward_denoise=" << format_double(m.reward_denoise)
      << " resp_len=" << format_double(m.resp_len)
      << " cont_len=" << format_double(m.cont_len)
      << " recovery_rate=" << format_double(m.recovery_rate)
      << " clip_frac=" << format_double(m.clip_frac)
      << " grad_norm=" << format_double(m.grad_norm)
      << " filtered_groups=" << m.filtered_groups
      << " prefix_gap=" << format_double(m.prefix_gap)
      << " wall_ms=" << format_double(m.wall_ms);
  return out.str();
}

inline MetricsRecord parse_metrics_line(const std::string& line) {
  MetricsRecord m;
  std::istringstream in(line);
  std::string field;
  int seen = 0;
  while (in >> field) {
    const size_t eq = field.find('=');
    if (eq == std::string::npos) throw std::runtime_error("metrics: bad field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string_view value = std::string_view(field).substr(eq + 1);
    if (key == "step") m.step = static_cast<int>(parse_int(value));
    else if (key == "reward_mean") m.reward_mean = parse_double(value);
    else if (key == "reward_main") m.reward_main = parse_double(value);
    else if (key == "reward_denoise") m.reward_denoise = parse_double(value);
    else if (key == "resp_len") m.resp_len = parse_double(value);
    else if (key == "cont_len") m.cont_len = parse_double(value);
    else if (key == "recovery_rate") m.recovery_rate = parse_double(value);
    else if (key == "clip_frac") m.clip_frac = parse_double(value);
    else if (key == "grad_norm") m.grad_norm = parse_double(value);
    else if (key == "filtered_groups") m.filtered_groups = static_cast<int>(parse_int(value));
    else if (key == "prefix_gap") m.prefix_gap = parse_double(value);
    else if (key == "wall_ms") m.wall_ms = parse_double(value);
    else throw std::runtime_error("metrics: unknown key '" + key + "'");
    ++seen;
  }
  if (seen != 12) throw std::runtime_error("metrics: expected 12 fields, got " + std::to_string(seen));
  return m;
}

// The metrics line with the wall-clock field blanked; two runs of the same
// seeded config must agree on this form byte for byte.
inline std::string deterministic_metrics_line(const MetricsRecord& m) {
  MetricsRecord copy = m;
  copy.wall_ms = 0.0;
  return format_metrics_line(copy);
}

}  // namespace denoiserl
