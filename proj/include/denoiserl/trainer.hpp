#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "denoiserl/config.hpp"
#include "denoiserl/metrics.hpp"
#include "denoiserl/objective.hpp"
#include "denoiserl/optimizer.hpp"
#include "denoiserl/policy.hpp"
#include "denoiserl/pool.hpp"
#include "denoiserl/rollout.hpp"
#include "denoiserl/task.hpp"

namespace denoiserl {

// Raised when a training step produces a non-finite gradient. The trainer
// dumps diagnostics and stops rather than clamping; the unmask ablation is
// expected to be able to trip this.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EvalMode { kFromScratch, kFromWrongPrefix };

struct EvalResult {
  double accuracy = 0.0;  // AVG@k over problems x samples
  int problems = 0;
  int samples_per_problem = 0;
  int skipped_empty_pool = 0;
  std::vector<std::pair<int32_t, double>> per_problem;
};

// AVG@k evaluation. FROM_SCRATCH decodes from the bare question;
// FROM_WRONG_PREFIX conditions each sample on a freshly drawn rho-truncated
// wrong solution and scores the folded response. Problems whose pool is empty
// are skipped in prefix mode and counted in the report.
inline EvalResult evaluate(const Policy& policy, const ParamVector& params,
                           const TrainingSet& problems, EvalMode mode, double rho, const Pool* pool,
                           int samples_per_problem, const Decoding& decoding, int budget,
                           uint64_t seed) {
  if (problems.empty()) throw std::invalid_argument("evaluate: empty problem set");
  if (samples_per_problem < 1) throw std::invalid_argument("evaluate: need at least one sample");
  if (mode == EvalMode::kFromWrongPrefix && pool == nullptr)
    throw std::invalid_argument("evaluate: prefix mode requires a pool");

  const PolicySnapshot snapshot(policy, params);
  EvalResult result;
  result.samples_per_problem = samples_per_problem;
  double total = 0.0;
  long total_samples = 0;

  for (const Problem& problem : problems) {
    const std::vector<WrongSolution>* solutions = nullptr;
    if (mode == EvalMode::kFromWrongPrefix) {
      solutions = &pool->solutions(problem.id);
      if (solutions->empty()) {
        ++result.skipped_empty_pool;
        continue;
      }
    }
    double correct = 0.0;
    for (int s = 0; s < samples_per_problem; ++s) {
      Rng rng = Rng::stream(seed, static_cast<uint64_t>(problem.id), static_cast<uint64_t>(s));
      if (mode == EvalMode::kFromScratch) {
        SampledSequence y = snapshot.sample(problem.question, {}, budget, decoding, rng);
        correct += verify(problem, y.tokens);
      } else {
        const WrongSolution& w = (*solutions)[static_cast<size_t>(rng.next_int(static_cast<int>(solutions->size())))];
        const int p = prefix_keep_count(rho, static_cast<int>(w.tokens.size()));
        if (budget < p + 1)
          throw std::invalid_argument("evaluate: budget leaves no room after the prefix");
        PrefixSlice slice;
        slice.problem_id = problem.id;
        slice.tokens.assign(w.tokens.begin(), w.tokens.begin() + p);
        slice.retained = p;
        slice.rho = rho;
        slice.source_len = static_cast<int>(w.tokens.size());
        SampledSequence cont = snapshot.sample(problem.question, slice.tokens, budget - p, decoding, rng);
        FoldResult folded = fold(slice, cont, budget, /*length_fair=*/true);
        correct += verify(problem, folded.folded);
      }
    }
    result.per_problem.emplace_back(problem.id, correct / samples_per_problem);
    total += correct;
    total_samples += samples_per_problem;
  }

  if (total_samples == 0)
    throw std::invalid_argument("evaluate: every problem had an empty pool; nothing to score");
  result.problems = static_cast<int>(result.per_problem.size());
  result.accuracy = total / static_cast<double>(total_samples);
  return result;
}

struct RunResult {
  ParamVector params;
  std::vector<MetricsRecord> metrics;
  uint64_t tokens_generated = 0;  // kept continuation tokens across the run
  std::filesystem::path final_checkpoint;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, const TrainingSet& problems, const Pool& pool)
      : cfg_(std::move(cfg)), problems_(&problems), pool_(&pool) {
    cfg_.validate();
    if (problems.empty()) throw std::invalid_argument("trainer: empty training set");
    if (cfg_.out_dir.empty()) throw std::invalid_argument("trainer: out_dir is required");
    if (cfg_.k_denoise > 0) {
      if (!pool.bound())
        throw std::runtime_error("trainer: pool is not bound to a training set");
      for (const Problem& p : problems)
        if (!pool.has_problem(p.id))
          throw std::runtime_error("trainer: pool has no record of problem id " +
                                   std::to_string(p.id) + "; pool/problem mismatch");
    }
  }

  RunResult run(const ParamVector* resume = nullptr) {
    namespace fs = std::filesystem;
    const fs::path out_dir(cfg_.out_dir);
    fs::create_directories(out_dir);
    {
      std::ofstream cfg_out(out_dir / "config.txt");
      cfg_out << serialize_config(cfg_);
    }
    std::ofstream metrics_out(out_dir / "metrics.txt");
    std::ofstream eval_out;
    if (cfg_.eval_every > 0) eval_out.open(out_dir / "eval.txt");
    std::ofstream dump_out;
    if (cfg_.rollout_dump) dump_out.open(out_dir / "rollouts.txt");

    const Policy policy(cfg_.policy_config());
    ParamVector params = resume ? *resume : policy.init_params(cfg_.seed_init, cfg_.init_scale);
    if (params.values.size() != static_cast<size_t>(policy.config().param_count()))
      throw std::runtime_error("trainer: resume checkpoint does not match the configured policy");

    std::unique_ptr<Optimizer> optimizer;
    if (cfg_.optimizer == "adam")
      optimizer = std::make_unique<AdamAscent>(cfg_.learning_rate, cfg_.adam_beta1, cfg_.adam_beta2,
                                               cfg_.adam_eps);
    else
      optimizer = std::make_unique<GradientAscent>(cfg_.learning_rate);

    Rng problem_rng(cfg_.seed_problems);
    Rng rollout_rng(cfg_.seed_rollout);
    const GroupConfig group_cfg = cfg_.group_config();
    const ClipConfig clip = cfg_.clip_config();
    const LossAggregation agg = cfg_.aggregation();

    RunResult result;
    result.metrics.reserve(static_cast<size_t>(cfg_.total_steps));

    for (int step = 1; step <= cfg_.total_steps; ++step) {
      const auto t0 = std::chrono::steady_clock::now();

      const PolicySnapshot theta_old(policy, params);
      std::vector<GroupBatch> groups;
      groups.reserve(static_cast<size_t>(cfg_.batch_size));
      for (int b = 0; b < cfg_.batch_size; ++b) {
        const Problem& q = (*problems_)[static_cast<size_t>(problem_rng.next_int(static_cast<int>(problems_->size())))];
        groups.push_back(rollout_group(theta_old, q, *pool_, group_cfg, rollout_rng));
      }

      MetricsRecord m;
      m.step = step;
      tally_groups(groups, m, result.tokens_generated);
      if (dump_out)
        for (const GroupBatch& g : groups)
          for (const Trajectory& t : g.trajectories) dump_out << dump_trajectory_line(step, t) << '\n';

      std::vector<GroupBatch> retained;
      if (cfg_.dapo_filter) {
        retained = dapo_filter(std::move(groups), &m.filtered_groups);
      } else {
        retained = std::move(groups);
      }

      if (!retained.empty()) {
        for (int epoch = 0; epoch < cfg_.inner_epochs; ++epoch) {
          const PolicySnapshot theta(policy, params);
          LossReport report = joint_estimate(retained, theta, clip, cfg_.adv_epsilon, agg);
          double norm_sq = 0.0;
          for (double g : report.gradient) norm_sq += g * g;
          if (!std::isfinite(norm_sq)) {
            dump_abort(out_dir, step, epoch, report);
            throw TrainingAborted("non-finite gradient at step " + std::to_string(step) +
                                  ", inner epoch " + std::to_string(epoch) + "; diagnostics in " +
                                  (out_dir / "abort.txt").string());
          }
          m.clip_frac = report.clip_fraction;
          m.grad_norm = std::sqrt(norm_sq);
          optimizer->update(params, report.gradient);
        }
      }

      if (has_denoise_prefix(retained)) {
        const PolicySnapshot theta_new(policy, params);
        m.prefix_gap = prefix_logprob_gap(retained, theta_new);
      }

      m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      metrics_out << format_metrics_line(m) << '\n';
      metrics_out.flush();
      result.metrics.push_back(m);

      if (cfg_.eval_every > 0 && step % cfg_.eval_every == 0) {
        const EvalResult ev = evaluate(policy, params, *problems_, EvalMode::kFromScratch, cfg_.rho,
                                       pool_, cfg_.eval_samples, cfg_.eval_decoding(), cfg_.budget,
                                       splitmix64(cfg_.seed_eval) + static_cast<uint64_t>(step));
        eval_out << "step=" << step << " mode=scratch accuracy=" << format_double(ev.accuracy)
                 << " problems=" << ev.problems << " samples=" << ev.samples_per_problem << '\n';
        eval_out.flush();
      }
      if (cfg_.checkpoint_every > 0 && step % cfg_.checkpoint_every == 0) {
        char name[40];
        std::snprintf(name, sizeof(name), "ckpt_step%06d.txt", step);
        save_checkpoint(out_dir / name, policy.config(), params);
      }
    }

    result.final_checkpoint = out_dir / "final.ckpt";
    save_checkpoint(result.final_checkpoint, policy.config(), params);
    result.params = std::move(params);
    return result;
  }

 private:
  static bool has_denoise_prefix(std::span<const GroupBatch> groups) {
    for (const GroupBatch& g : groups)
      for (const Trajectory& t : g.trajectories)
        if (t.kind == RolloutKind::kDenoise && t.prefix_len > 0) return true;
    return false;
  }

  // Reward/length telemetry over the full sampled batch (before any filter).
  static void tally_groups(std::span<const GroupBatch> groups, MetricsRecord& m,
                           uint64_t& tokens_generated) {
    long n_all = 0, n_main = 0, n_denoise = 0;
    double r_all = 0, r_main = 0, r_denoise = 0, folded_len = 0, cont_len = 0;
    for (const GroupBatch& g : groups) {
      for (const Trajectory& t : g.trajectories) {
        ++n_all;
        r_all += t.reward;
        folded_len += static_cast<double>(t.folded.size());
        cont_len += static_cast<double>(t.continuation_len);
        tokens_generated += static_cast<uint64_t>(t.continuation_len);
        if (t.kind == RolloutKind::kDenoise) {
          ++n_denoise;
          r_denoise += t.reward;
        } else {
          ++n_main;
          r_main += t.reward;
        }
      }
    }
    if (n_all == 0) return;
    m.reward_mean = r_all / static_cast<double>(n_all);
    m.reward_main = n_main > 0 ? r_main / static_cast<double>(n_main) : 0.0;
    m.reward_denoise = n_denoise > 0 ? r_denoise / static_cast<double>(n_denoise) : 0.0;
    m.recovery_rate = n_denoise > 0 ? r_denoise / static_cast<double>(n_denoise) : 0.0;
    m.resp_len = folded_len / static_cast<double>(n_all);
    m.cont_len = cont_len / static_cast<double>(n_all);
  }

  void dump_abort(const std::filesystem::path& out_dir, int step, int epoch,
                  const LossReport& report) const {
    std::ofstream out(out_dir / "abort.txt");
    out << "non-finite gradient\n";
    out << "step = " << step << "\ninner_epoch = " << epoch << '\n';
    out << "objective = " << format_double(report.objective) << '\n';
    out << "clip_fraction = " << format_double(report.clip_fraction) << '\n';
    out << "mean_abs_ratio_gap = " << format_double(report.mean_abs_ratio_gap) << '\n';
    out << "reward_mean = " << format_double(report.reward_mean) << '\n';
    out << "token_count = " << report.token_count << '\n';
    size_t bad = 0;
    for (size_t i = 0; i < report.gradient.size() && bad < 16; ++i) {
      if (!std::isfinite(report.gradient[i])) {
        out << "gradient[" << i << "] = " << format_double(report.gradient[i]) << '\n';
        ++bad;
      }
    }
  }

  TrainConfig cfg_;
  const TrainingSet* problems_;
  const Pool* pool_;
};

// --- ablation presets --------------------------------------------------------

enum class AblationPreset { kPrefixRatio, kRolloutCount, kUnmaskPrefix, kNoLengthCap };

inline AblationPreset parse_preset(std::string_view name) {
  if (name == "prefix_ratio") return AblationPreset::kPrefixRatio;
  if (name == "rollout_count") return AblationPreset::kRolloutCount;
  if (name == "unmask_prefix") return AblationPreset::kUnmaskPrefix;
  if (name == "no_length_cap") return AblationPreset::kNoLengthCap;
  throw std::invalid_argument("unknown ablation preset '" + std::string(name) +
                              "' (expected prefix_ratio, rollout_count, unmask_prefix, "
                              "or no_length_cap)");
}

inline const char* preset_name(AblationPreset p) {
  switch (p) {
    case AblationPreset::kPrefixRatio: return "prefix_ratio";
    case AblationPreset::kRolloutCount: return "rollout_count";
    case AblationPreset::kUnmaskPrefix: return "unmask_prefix";
    case AblationPreset::kNoLengthCap: return "no_length_cap";
  }
  return "?";
}

// Arm grid per preset. Seeds are shared across arms; each arm gets its own
// out_dir under <base out_dir>/<preset>/<arm>.
inline std::vector<std::pair<std::string, TrainConfig>> ablation_arms(AblationPreset preset,
                                                                      const TrainConfig& base) {
  std::vector<std::pair<std::string, TrainConfig>> arms;
  switch (preset) {
    case AblationPreset::kPrefixRatio: {
      for (double rho : {0.2, 0.5, 0.8}) {
        TrainConfig c = base;
        c.k_denoise = 4;
        c.rho = rho;
        arms.emplace_back("rho" + std::to_string(static_cast<int>(rho * 10)), std::move(c));
      }
      break;
    }
    case AblationPreset::kRolloutCount: {
      const int total = base.n_main + base.k_denoise;
      for (int k : {1, 4, 8}) {
        if (total - k < 1)
          throw std::invalid_argument("rollout_count preset needs n_main + k_denoise > 8");
        TrainConfig c = base;
        c.k_denoise = k;
        c.n_main = total - k;
        c.rho = 0.2;
        arms.emplace_back("k" + std::to_string(k), std::move(c));
      }
      break;
    }
    case AblationPreset::kUnmaskPrefix: {
      TrainConfig masked = base;
      masked.prefix_mask = true;
      arms.emplace_back("masked", std::move(masked));
      TrainConfig unmasked = base;
      unmasked.prefix_mask = false;
      arms.emplace_back("unmasked", std::move(unmasked));
      break;
    }
    case AblationPreset::kNoLengthCap: {
      TrainConfig fair = base;
      fair.length_fair = true;
      arms.emplace_back("length_fair", std::move(fair));
      TrainConfig uncapped = base;
      uncapped.length_fair = false;
      arms.emplace_back("no_cap", std::move(uncapped));
      break;
    }
  }
  for (auto& [name, cfg] : arms)
    cfg.out_dir = base.out_dir + "/" + preset_name(preset) + "/" + name;
  return arms;
}

struct AblationOutcome {
  std::string arm;
  std::string out_dir;
  bool completed = false;
  std::string error;
};

// Runs every arm with shared seeds. An arm that aborts (e.g. the unmasked
// prefix arm going non-finite) is recorded and does not stop the others.
inline std::vector<AblationOutcome> run_ablation(AblationPreset preset, const TrainConfig& base,
                                                 const TrainingSet& problems, const Pool& pool) {
  std::vector<AblationOutcome> outcomes;
  for (const auto& [name, cfg] : ablation_arms(preset, base)) {
    AblationOutcome outcome;
    outcome.arm = name;
    outcome.out_dir = cfg.out_dir;
    try {
      Trainer trainer(cfg, problems, pool);
      trainer.run();
      outcome.completed = true;
    } catch (const TrainingAborted& e) {
      outcome.error = e.what();
      std::ofstream marker(std::filesystem::path(cfg.out_dir) / "aborted.txt");
      marker << e.what() << '\n';
    }
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

}  // namespace denoiserl
