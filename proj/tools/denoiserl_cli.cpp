// Command-line front end: dataset generation, prefix-pool collection and
// inspection, training, evaluation, and the ablation presets.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "denoiserl/denoiserl.hpp"

namespace {

using namespace denoiserl;

int cmd_gen_problems(const std::string& out, int count, int depth_min, int depth_max, uint64_t seed) {
  TrainingSet problems = generate_problems(count, depth_min, depth_max, seed);
  save_training_set(problems, out);
  std::cout << "wrote " << problems.size() << " problems to " << out << "\n";
  return 0;
}

int cmd_collect(const std::string& problems_file, double eta, int trials, uint64_t seed,
                const std::string& out) {
  TrainingSet problems = load_training_set(problems_file);
  WeakSolverConfig cfg{eta, trials, seed};
  Pool pool = Pool::collect(problems, cfg);
  pool.save(out);
  std::cout << "pooled " << pool.total_solutions() << " wrong solutions over "
            << pool.problem_count() << " problems (empty-pool fraction "
            << format_double(pool.empty_fraction()) << ") -> " << out << "\n";
  return 0;
}

int cmd_inspect(const std::string& pool_file, const std::string& problems_file) {
  Pool pool = problems_file.empty() ? Pool::load(pool_file)
                                    : Pool::load(pool_file, load_training_set(problems_file));
  for (const auto& [id, solutions] : pool.entries()) {
    if (!solutions.empty() || pool.bound())
      std::cout << id << '\t' << solutions.size() << '\n';
  }
  std::cout << "problems " << pool.problem_count() << "\n";
  std::cout << "wrong solutions " << pool.total_solutions() << "\n";
  std::cout << "empty-pool fraction " << format_double(pool.empty_fraction()) << "\n";
  return 0;
}

int cmd_train(const std::string& config_file, const std::string& resume) {
  TrainConfig cfg = load_config(config_file);
  if (cfg.problems_file.empty()) throw std::runtime_error("config: problems_file is required");
  TrainingSet problems = load_training_set(cfg.problems_file);
  Pool pool;
  if (cfg.k_denoise > 0) {
    if (cfg.pool_file.empty())
      throw std::runtime_error("config: pool_file is required when k_denoise > 0");
    pool = Pool::load(cfg.pool_file, problems);
  }
  Trainer trainer(cfg, problems, pool);
  RunResult result;
  if (!resume.empty()) {
    Checkpoint ckpt = load_checkpoint(resume);
    result = trainer.run(&ckpt.params);
  } else {
    result = trainer.run();
  }
  std::cout << "trained " << result.metrics.size() << " steps, generated "
            << result.tokens_generated << " tokens\n";
  std::cout << "final checkpoint: " << result.final_checkpoint.string() << "\n";
  if (!result.metrics.empty()) {
    const MetricsRecord& last = result.metrics.back();
    std::cout << "last step: " << format_metrics_line(last) << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_file, const std::string& mode, double rho, int k,
             const std::string& problems_file, const std::string& pool_file, int budget,
             double temperature, double top_p, uint64_t seed, bool per_problem) {
  Checkpoint ckpt = load_checkpoint(ckpt_file);
  Policy policy(ckpt.config);
  TrainingSet problems = load_training_set(problems_file);
  Decoding decoding{temperature, top_p, false};

  EvalResult result;
  if (mode == "scratch") {
    result = evaluate(policy, ckpt.params, problems, EvalMode::kFromScratch, rho, nullptr, k,
                      decoding, budget, seed);
  } else if (mode == "prefix") {
    if (pool_file.empty()) throw std::runtime_error("eval: --pool is required for prefix mode");
    Pool pool = Pool::load(pool_file, problems);
    result = evaluate(policy, ckpt.params, problems, EvalMode::kFromWrongPrefix, rho, &pool, k,
                      decoding, budget, seed);
  } else {
    throw std::runtime_error("eval: mode must be 'scratch' or 'prefix'");
  }

  std::cout << "mode=" << mode << " accuracy=" << format_double(result.accuracy)
            << " problems=" << result.problems << " samples=" << result.samples_per_problem;
  if (result.skipped_empty_pool > 0)
    std::cout << " skipped_empty_pool=" << result.skipped_empty_pool;
  std::cout << "\n";
  if (per_problem)
    for (const auto& [id, acc] : result.per_problem)
      std::cout << id << '\t' << format_double(acc) << '\n';
  return 0;
}

int cmd_ablate(const std::string& preset_name_arg, const std::string& config_file) {
  TrainConfig base = load_config(config_file);
  if (base.problems_file.empty()) throw std::runtime_error("config: problems_file is required");
  TrainingSet problems = load_training_set(base.problems_file);
  Pool pool;
  if (!base.pool_file.empty()) pool = Pool::load(base.pool_file, problems);
  const AblationPreset preset = parse_preset(preset_name_arg);
  for (const auto& [arm, cfg] : ablation_arms(preset, base))
    std::cout << "arm " << arm << ": n_main=" << cfg.n_main << " k_denoise=" << cfg.k_denoise
              << " rho=" << format_double(cfg.rho) << " prefix_mask=" << cfg.prefix_mask
              << " length_fair=" << cfg.length_fair << " -> " << cfg.out_dir << "\n";
  const auto outcomes = run_ablation(preset, base, problems, pool);
  int failures = 0;
  for (const AblationOutcome& o : outcomes) {
    std::cout << "arm " << o.arm << (o.completed ? " completed" : " ABORTED: " + o.error) << "\n";
    if (!o.completed) ++failures;
  }
  std::cout << "metrics under " << base.out_dir << "/" << preset_name(preset) << "/\n";
  return failures == static_cast<int>(outcomes.size()) && !outcomes.empty() ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale denoise-RL laboratory"};
  app.require_subcommand(1);

  // gen-problems
  auto* gen = app.add_subcommand("gen-problems", "generate a verifiable chain-arithmetic dataset");
  std::string gen_out;
  int gen_count = 128, gen_dmin = 3, gen_dmax = 3;
  uint64_t gen_seed = 0;
  gen->add_option("--count", gen_count, "number of problems")->check(CLI::PositiveNumber);
  gen->add_option("--depth-min", gen_dmin, "minimum chain depth");
  gen->add_option("--depth-max", gen_dmax, "maximum chain depth");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output file")->required();

  // collect-prefixes
  auto* collect = app.add_subcommand("collect-prefixes", "build the offline wrong-solution pool");
  std::string col_problems, col_out;
  double col_eta = 0.5;
  int col_trials = 8;
  uint64_t col_seed = 0;
  collect->add_option("--problems", col_problems, "training-set file")->required();
  collect->add_option("--eta", col_eta, "per-step corruption probability");
  collect->add_option("--trials", col_trials, "weak-solver trials per problem (M)");
  collect->add_option("--seed", col_seed, "weak-solver seed");
  collect->add_option("--out", col_out, "output pool file")->required();

  // inspect-pool
  auto* inspect = app.add_subcommand("inspect-pool", "print per-problem pool sizes");
  std::string ins_pool, ins_problems;
  inspect->add_option("--pool", ins_pool, "pool file")->required();
  inspect->add_option("--problems", ins_problems, "training-set file for full validation");

  // train
  auto* train = app.add_subcommand("train", "run the training loop");
  std::string train_config, train_resume;
  train->add_option("--config", train_config, "flat key = value config file")->required();
  train->add_option("--resume", train_resume, "checkpoint to resume parameters from");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_mode = "scratch", eval_problems, eval_pool;
  double eval_rho = 0.2, eval_temp = 0.6, eval_topp = 0.95;
  int eval_k = 16, eval_budget = 32;
  uint64_t eval_seed = 1234;
  bool eval_breakdown = false;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--mode", eval_mode, "scratch | prefix");
  eval->add_option("--rho", eval_rho, "prefix ratio (prefix mode)");
  eval->add_option("--k", eval_k, "samples per problem (AVG@k)");
  eval->add_option("--problems", eval_problems, "problem file")->required();
  eval->add_option("--pool", eval_pool, "pool file (prefix mode)");
  eval->add_option("--budget", eval_budget, "response budget R");
  eval->add_option("--temperature", eval_temp, "decoding temperature");
  eval->add_option("--top-p", eval_topp, "nucleus mass");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_flag("--per-problem", eval_breakdown, "print the per-problem breakdown");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run an ablation preset");
  std::string abl_preset, abl_config;
  ablate->add_option("--preset", abl_preset,
                     "prefix_ratio | rollout_count | unmask_prefix | no_length_cap")
      ->required();
  ablate->add_option("--config", abl_config, "base config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_problems(gen_out, gen_count, gen_dmin, gen_dmax, gen_seed);
    if (collect->parsed()) return cmd_collect(col_problems, col_eta, col_trials, col_seed, col_out);
    if (inspect->parsed()) return cmd_inspect(ins_pool, ins_problems);
    if (train->parsed()) return cmd_train(train_config, train_resume);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_mode, eval_rho, eval_k, eval_problems, eval_pool, eval_budget,
                      eval_temp, eval_topp, eval_seed, eval_breakdown);
    if (ablate->parsed()) return cmd_ablate(abl_preset, abl_config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
