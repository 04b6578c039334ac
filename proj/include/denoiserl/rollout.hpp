#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "denoiserl/policy.hpp"
#include "denoiserl/pool.hpp"
#include "denoiserl/task.hpp"

namespace denoiserl {

enum class RolloutKind { kMain, kDenoise, kFallback };

inline const char* kind_name(RolloutKind k) {
  switch (k) {
    case RolloutKind::kMain: return "main";
    case RolloutKind::kDenoise: return "denoise";
    case RolloutKind::kFallback: return "fallback";
  }
  return "?";
}

// One rollout. `folded` is the visible response: for denoise rollouts the
// noisy prefix followed by the kept continuation, otherwise the continuation
// alone. behavior_logprobs and loss_mask are indexed per folded token; prefix
// positions carry teacher-forced theta_old logprobs and, in masked mode, a
// false mask bit.
struct Trajectory {
  RolloutKind kind = RolloutKind::kMain;
  int32_t problem_id = -1;
  std::vector<Token> question;
  int prefix_len = 0;  // p (0 for main/fallback)
  std::vector<Token> folded;
  std::vector<double> behavior_logprobs;
  std::vector<uint8_t> loss_mask;
  int continuation_len = 0;  // L
  int budget = 0;            // R
  int reward = 0;
  bool terminated = false;

  int masked_token_count() const {
    int n = 0;
    for (uint8_t m : loss_mask) n += m ? 1 : 0;
    return n;
  }
};

// The N+K rollouts of one problem sharing a single advantage baseline. Slot
// order is fixed: main slots first, then denoise slots (or their fallbacks).
struct GroupBatch {
  int32_t problem_id = -1;
  int n_main = 0;
  int k_denoise = 0;
  std::vector<Trajectory> trajectories;
};

struct FoldResult {
  std::vector<Token> folded;
  int kept = 0;  // L
  std::vector<uint8_t> loss_mask;
};

// Joins prefix and continuation into the visible response. Length-fair mode
// discards continuation tokens beyond the shared budget so p + L <= R; the
// no-cap mode keeps everything (up to p + R total). The returned mask is the
// masked-mode mask: false on prefix positions, true on kept continuation.
inline FoldResult fold(const PrefixSlice& prefix, const SampledSequence& continuation, int budget,
                       bool length_fair) {
  const int p = prefix.retained;
  if (p < 1 || static_cast<size_t>(p) != prefix.tokens.size())
    throw std::invalid_argument("fold: prefix must retain at least one token");
  if (length_fair && budget < p + 1)
    throw std::invalid_argument("fold: budget " + std::to_string(budget) +
                                " leaves no room to generate after a " + std::to_string(p) +
                                "-token prefix");
  const int t = continuation.length();
  FoldResult r;
  r.kept = length_fair ? std::min(t, budget - p) : t;
  r.folded.reserve(static_cast<size_t>(p + r.kept));
  r.folded.assign(prefix.tokens.begin(), prefix.tokens.end());
  r.folded.insert(r.folded.end(), continuation.tokens.begin(), continuation.tokens.begin() + r.kept);
  r.loss_mask.assign(static_cast<size_t>(p), 0);
  r.loss_mask.insert(r.loss_mask.end(), static_cast<size_t>(r.kept), 1);
  return r;
}

struct GroupConfig {
  int n_main = 12;      // N
  int k_denoise = 4;    // K
  double rho = 0.2;
  int budget = 32;      // R
  Decoding decoding;
  bool length_fair = true;
  bool prefix_mask = true;

  void validate() const {
    if (n_main < 1) throw std::invalid_argument("GroupConfig: n_main must be >= 1");
    if (k_denoise < 0) throw std::invalid_argument("GroupConfig: k_denoise must be >= 0");
    if (budget < 2) throw std::invalid_argument("GroupConfig: budget must be >= 2");
    if (rho <= 0.0 || rho > 1.0) throw std::invalid_argument("GroupConfig: rho must be in (0, 1]");
  }
};

namespace detail {

inline Trajectory main_rollout(const PolicySnapshot& theta_old, const Problem& problem,
                               const GroupConfig& cfg, RolloutKind kind, Rng& rng) {
  SampledSequence s = theta_old.sample(problem.question, {}, cfg.budget, cfg.decoding, rng);
  Trajectory t;
  t.kind = kind;
  t.problem_id = problem.id;
  t.question = problem.question;
  t.folded = s.tokens;
  t.behavior_logprobs = s.behavior_logprobs;
  t.loss_mask.assign(t.folded.size(), 1);
  t.continuation_len = s.length();
  t.budget = cfg.budget;
  t.terminated = s.terminated;
  t.reward = verify(problem, t.folded);
  return t;
}

inline Trajectory denoise_rollout(const PolicySnapshot& theta_old, const Problem& problem,
                                  const PrefixSlice& prefix, const GroupConfig& cfg, Rng& rng) {
  const int p = prefix.retained;
  const int max_new = cfg.length_fair ? cfg.budget - p : cfg.budget;
  if (max_new < 1)
    throw std::invalid_argument("rollout_group: budget too small for a " + std::to_string(p) +
                                "-token prefix in length-fair mode");
  SampledSequence cont = theta_old.sample(problem.question, prefix.tokens, max_new, cfg.decoding, rng);
  FoldResult folded = fold(prefix, cont, cfg.budget, cfg.length_fair);

  Trajectory t;
  t.kind = RolloutKind::kDenoise;
  t.problem_id = problem.id;
  t.question = problem.question;
  t.prefix_len = p;
  t.folded = std::move(folded.folded);
  t.continuation_len = folded.kept;
  t.budget = cfg.budget;
  t.terminated = cont.terminated;

  // Teacher-forced theta_old logprobs for the prefix tokens; the weak solver
  // that actually wrote them is not a parametric policy.
  t.behavior_logprobs.reserve(t.folded.size());
  std::vector<Token> history(problem.question.begin(), problem.question.end());
  for (int i = 0; i < p; ++i) {
    t.behavior_logprobs.push_back(theta_old.logprob(history, prefix.tokens[static_cast<size_t>(i)]));
    history.push_back(prefix.tokens[static_cast<size_t>(i)]);
  }
  t.behavior_logprobs.insert(t.behavior_logprobs.end(), cont.behavior_logprobs.begin(),
                             cont.behavior_logprobs.begin() + folded.kept);

  t.loss_mask = std::move(folded.loss_mask);
  if (!cfg.prefix_mask)
    for (uint8_t& m : t.loss_mask) m = 1;
  t.reward = verify(problem, t.folded);
  return t;
}

}  // namespace detail

// Samples the N+K group for one problem against the frozen theta_old snapshot.
// Denoise slots whose pool is empty become fallback main rollouts; the group
// size is N+K regardless.
inline GroupBatch rollout_group(const PolicySnapshot& theta_old, const Problem& problem,
                                const Pool& pool, const GroupConfig& cfg, Rng& rng) {
  cfg.validate();
  GroupBatch group;
  group.problem_id = problem.id;
  group.n_main = cfg.n_main;
  group.k_denoise = cfg.k_denoise;
  group.trajectories.reserve(static_cast<size_t>(cfg.n_main + cfg.k_denoise));

  for (int i = 0; i < cfg.n_main; ++i)
    group.trajectories.push_back(detail::main_rollout(theta_old, problem, cfg, RolloutKind::kMain, rng));

  if (cfg.k_denoise > 0) {
    PrefixDraw draw(pool, problem.id, cfg.k_denoise, rng);
    for (int slot = 0; slot < cfg.k_denoise; ++slot) {
      std::optional<PrefixSlice> prefix = draw.sample(slot, cfg.rho);
      if (!prefix) {
        group.trajectories.push_back(
            detail::main_rollout(theta_old, problem, cfg, RolloutKind::kFallback, rng));
      } else {
        group.trajectories.push_back(detail::denoise_rollout(theta_old, problem, *prefix, cfg, rng));
      }
    }
  }
  return group;
}

// Debug dump record, one line per trajectory:
// step <TAB> problem_id <TAB> kind <TAB> p <TAB> L <TAB> reward <TAB> folded ids
inline std::string dump_trajectory_line(int step, const Trajectory& t) {
  std::string line = std::to_string(step) + '\t' + std::to_string(t.problem_id) + '\t' +
                     kind_name(t.kind) + '\t' + std::to_string(t.prefix_len) + '\t' +
                     std::to_string(t.continuation_len) + '\t' + std::to_string(t.reward) + '\t';
  for (size_t i = 0; i < t.folded.size(); ++i) {
    if (i) line += ' ';
    line += std::to_string(t.folded[i]);
  }
  return line;
}

}  // namespace denoiserl
