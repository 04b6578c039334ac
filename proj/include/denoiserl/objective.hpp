#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "denoiserl/policy.hpp"
#include "denoiserl/rollout.hpp"

namespace denoiserl {

// Group-relative advantages with a baseline shared across the whole group:
// A_i = (r_i - mean) / (stddev + epsilon), population variance.
struct AdvantageSet {
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;
  double epsilon = 0.0;
};

inline AdvantageSet group_advantages(std::span<const double> rewards, double epsilon) {
  if (rewards.size() < 2)
    throw std::invalid_argument("group_advantages: need at least 2 rewards");
  if (epsilon <= 0.0) throw std::invalid_argument("group_advantages: epsilon must be > 0");
  AdvantageSet out;
  out.epsilon = epsilon;
  const double n = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  out.mean = sum / n;
  double var = 0.0;
  for (double r : rewards) var += (r - out.mean) * (r - out.mean);
  out.stddev = std::sqrt(var / n);
  out.values.reserve(rewards.size());
  const double denom = out.stddev + epsilon;
  for (double r : rewards) out.values.push_back((r - out.mean) / denom);
  return out;
}

struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.2;  // raised above eps_low in DAPO-style clip-higher runs

  void validate() const {
    if (eps_low <= 0.0 || eps_high <= 0.0)
      throw std::invalid_argument("ClipConfig: clip ranges must be > 0");
  }
};

enum class LossAggregation { kTrajectoryMean, kTokenMean };

// kZeroWeight computes the masked-out prefix terms and multiplies them by
// zero instead of skipping them; both paths must assemble bit-identical
// gradients, which is what makes the continuation-only update checkable.
enum class MaskedTermPolicy { kSkip, kZeroWeight };

struct SurrogateStats {
  double term_sum = 0.0;  // sum over masked-in tokens of the clipped min terms
  int tokens = 0;         // |T_i|
  int clipped = 0;        // tokens where the clip branch was strictly smaller
  double abs_ratio_gap = 0.0;  // sum of |ratio - 1|
  bool empty_mask = false;

  double loss() const { return tokens > 0 ? term_sum / tokens : 0.0; }  // L_i
};

// Per-token clipped surrogate for one trajectory, evaluated under `theta`
// against the stored behavior logprobs. Accumulates weight * dL_i/dtheta into
// `grad`, where L_i is the per-trajectory token mean; prefix positions
// contribute nothing in masked mode, and the conditioning context of every
// token still includes the prefix.
inline SurrogateStats trajectory_surrogate(const Trajectory& traj, double advantage,
                                           const PolicySnapshot& theta, const ClipConfig& clip,
                                           std::span<double> grad, double weight = 1.0,
                                           MaskedTermPolicy mask_policy = MaskedTermPolicy::kSkip) {
  clip.validate();
  SurrogateStats stats;
  stats.tokens = traj.masked_token_count();
  if (stats.tokens == 0) {
    stats.empty_mask = true;
    return stats;
  }
  const double token_weight = weight / static_cast<double>(stats.tokens);

  std::vector<Token> history(traj.question.begin(), traj.question.end());
  history.insert(history.end(), traj.folded.begin(), traj.folded.end());
  const size_t prompt_len = traj.question.size();

  PolicySnapshot::Forward f;
  for (size_t t = 0; t < traj.folded.size(); ++t) {
    const bool masked_in = traj.loss_mask[t] != 0;
    if (!masked_in && mask_policy == MaskedTermPolicy::kSkip) continue;
    const double mask_weight = masked_in ? 1.0 : 0.0;

    const double behavior = traj.behavior_logprobs[t];
    if (masked_in && !std::isfinite(behavior))
      throw std::runtime_error("trajectory_surrogate: non-finite behavior logprob on a masked-in "
                               "token; rollout data is corrupt");

    const std::span<const Token> context(history.data(), prompt_len + t);
    theta.forward(context, f);
    const Token y = traj.folded[t];
    const double ratio = std::exp(f.logprobs[static_cast<size_t>(y)] - behavior);
    const double clipped = std::min(std::max(ratio, 1.0 - clip.eps_low), 1.0 + clip.eps_high);

    const double unclipped_term = ratio * advantage;
    const double clipped_term = clipped * advantage;
    const bool take_unclipped = unclipped_term <= clipped_term;
    const double term = take_unclipped ? unclipped_term : clipped_term;

    stats.term_sum += mask_weight * term;
    if (masked_in) {
      stats.abs_ratio_gap += std::abs(ratio - 1.0);
      if (!take_unclipped) ++stats.clipped;
    }
    // d term / d theta = A * r_t * d logprob / d theta on the variable branch,
    // zero where the constant clip branch is active.
    if (take_unclipped && advantage != 0.0)
      theta.accumulate_grad(f, y, mask_weight * token_weight * advantage * ratio, grad);
  }
  return stats;
}

// Per-step loss report for the joint mixture estimator.
struct LossReport {
  double objective = 0.0;         // J-hat
  double main_component = 0.0;    // per-slot mean over the first N slots
  double denoise_component = 0.0; // per-slot mean over the last K slots
  std::vector<double> gradient;
  double clip_fraction = 0.0;
  double mean_abs_ratio_gap = 0.0;
  double reward_mean = 0.0;
  double reward_main = 0.0;     // kind main + fallback
  double reward_denoise = 0.0;  // kind denoise only
  int empty_mask_trajectories = 0;
  int group_count = 0;  // B after any filtering
  int token_count = 0;  // total masked-in tokens
};

// Sample average of the joint objective over B groups:
//   J-hat = 1/(B(N+K)) sum_b sum_i L_i           (trajectory mean), or
//   J-hat = 1/(sum |T_i|) sum_b sum_i sum_t term (token mean).
// Gradients accumulate in slot-index order so results are bit-reproducible.
inline LossReport joint_estimate(std::span<const GroupBatch> groups, const PolicySnapshot& theta,
                                 const ClipConfig& clip, double adv_epsilon,
                                 LossAggregation aggregation = LossAggregation::kTrajectoryMean,
                                 MaskedTermPolicy mask_policy = MaskedTermPolicy::kSkip) {
  LossReport report;
  report.gradient.assign(theta.params().values.size(), 0.0);
  report.group_count = static_cast<int>(groups.size());
  if (groups.empty()) return report;

  const int n = groups.front().n_main;
  const int k = groups.front().k_denoise;
  long total_tokens = 0;
  for (const GroupBatch& g : groups) {
    if (g.n_main != n || g.k_denoise != k)
      throw std::invalid_argument("joint_estimate: groups must share the same N and K");
    if (static_cast<int>(g.trajectories.size()) != n + k)
      throw std::invalid_argument("joint_estimate: group size != N+K");
    for (const Trajectory& t : g.trajectories) total_tokens += t.masked_token_count();
  }

  const double b = static_cast<double>(groups.size());
  double main_sum = 0.0, denoise_sum = 0.0;
  double reward_sum = 0.0, reward_main_sum = 0.0, reward_denoise_sum = 0.0;
  long main_count = 0, denoise_count = 0;
  long clipped = 0;
  double ratio_gap_sum = 0.0;

  for (const GroupBatch& g : groups) {
    std::vector<double> rewards;
    rewards.reserve(g.trajectories.size());
    for (const Trajectory& t : g.trajectories) rewards.push_back(static_cast<double>(t.reward));
    const AdvantageSet adv = group_advantages(rewards, adv_epsilon);

    for (size_t slot = 0; slot < g.trajectories.size(); ++slot) {
      const Trajectory& traj = g.trajectories[slot];
      const int traj_tokens = traj.masked_token_count();
      double weight = 0.0;
      if (traj_tokens > 0) {
        weight = aggregation == LossAggregation::kTrajectoryMean
                     ? 1.0 / (b * static_cast<double>(n + k))
                     : static_cast<double>(traj_tokens) / static_cast<double>(total_tokens);
      }
      const SurrogateStats stats = trajectory_surrogate(traj, adv.values[slot], theta, clip,
                                                        report.gradient, weight, mask_policy);
      if (stats.empty_mask) ++report.empty_mask_trajectories;
      clipped += stats.clipped;
      ratio_gap_sum += stats.abs_ratio_gap;

      if (aggregation == LossAggregation::kTrajectoryMean) {
        report.objective += stats.loss() / (b * static_cast<double>(n + k));
      } else {
        report.objective += total_tokens > 0 ? stats.term_sum / static_cast<double>(total_tokens) : 0.0;
      }
      if (static_cast<int>(slot) < n) main_sum += stats.loss();
      else denoise_sum += stats.loss();

      reward_sum += static_cast<double>(traj.reward);
      if (traj.kind == RolloutKind::kDenoise) {
        reward_denoise_sum += static_cast<double>(traj.reward);
        ++denoise_count;
      } else {
        reward_main_sum += static_cast<double>(traj.reward);
        ++main_count;
      }
    }
  }

  report.main_component = main_sum / (b * static_cast<double>(n));
  report.denoise_component = k > 0 ? denoise_sum / (b * static_cast<double>(k)) : 0.0;
  report.token_count = static_cast<int>(total_tokens);
  report.clip_fraction = total_tokens > 0 ? static_cast<double>(clipped) / static_cast<double>(total_tokens) : 0.0;
  report.mean_abs_ratio_gap = total_tokens > 0 ? ratio_gap_sum / static_cast<double>(total_tokens) : 0.0;
  const double traj_count = b * static_cast<double>(n + k);
  report.reward_mean = reward_sum / traj_count;
  report.reward_main = main_count > 0 ? reward_main_sum / static_cast<double>(main_count) : 0.0;
  report.reward_denoise = denoise_count > 0 ? reward_denoise_sum / static_cast<double>(denoise_count) : 0.0;
  return report;
}

// Dynamic-sampling filter: drops groups whose rewards are all equal (zero
// advantage everywhere) so the batch divisor counts only informative groups.
inline std::vector<GroupBatch> dapo_filter(std::vector<GroupBatch> groups, int* filtered_count) {
  std::vector<GroupBatch> kept;
  kept.reserve(groups.size());
  int removed = 0;
  for (GroupBatch& g : groups) {
    bool mixed = false;
    for (size_t i = 1; i < g.trajectories.size(); ++i)
      if (g.trajectories[i].reward != g.trajectories[0].reward) { mixed = true; break; }
    if (mixed) kept.push_back(std::move(g));
    else ++removed;
  }
  if (filtered_count) *filtered_count = removed;
  return kept;
}

// Mean |log pi_theta - behavior logprob| over the prefix tokens of denoise
// trajectories; the off-policy mismatch the prefix mask keeps out of the loss.
inline double prefix_logprob_gap(std::span<const GroupBatch> groups, const PolicySnapshot& theta) {
  double gap_sum = 0.0;
  long count = 0;
  PolicySnapshot::Forward f;
  for (const GroupBatch& g : groups) {
    for (const Trajectory& traj : g.trajectories) {
      if (traj.kind != RolloutKind::kDenoise || traj.prefix_len == 0) continue;
      std::vector<Token> history(traj.question.begin(), traj.question.end());
      history.insert(history.end(), traj.folded.begin(), traj.folded.end());
      for (int t = 0; t < traj.prefix_len; ++t) {
        const std::span<const Token> context(history.data(), traj.question.size() + static_cast<size_t>(t));
        theta.forward(context, f);
        gap_sum += std::abs(f.logprobs[static_cast<size_t>(traj.folded[static_cast<size_t>(t)])] -
                            traj.behavior_logprobs[static_cast<size_t>(t)]);
        ++count;
      }
    }
  }
  return count > 0 ? gap_sum / static_cast<double>(count) : 0.0;
}

}  // namespace denoiserl
