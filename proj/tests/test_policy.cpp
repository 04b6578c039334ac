#include "denoiserl/policy.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"

namespace denoiserl {
namespace {

using testing::fresh_dir;

PolicyConfig tiny_config() {
  PolicyConfig cfg;
  cfg.vocab_size = Vocabulary::kSize;
  cfg.context_window = 2;
  cfg.embed_dim = 3;
  cfg.hidden_dim = 8;
  return cfg;  // 272 parameters
}

ParamVector random_params(const PolicyConfig& cfg, uint64_t seed, double scale = 0.3) {
  return Policy(cfg).init_params(seed, scale);
}

// Straight-line re-implementation of the forward pass, reading the flat
// parameter layout directly. Kept deliberately naive and separate from the
// library's code path.
double reference_logprob(const PolicyConfig& cfg, const std::vector<double>& theta,
                         const std::vector<Token>& context, Token token) {
  const int c = cfg.context_window, e = cfg.embed_dim, h = cfg.hidden_dim, v = cfg.vocab_size;
  std::vector<Token> window(static_cast<size_t>(c), static_cast<Token>(v));
  for (int i = 0; i < c && i < static_cast<int>(context.size()); ++i)
    window[static_cast<size_t>(c - 1 - i)] = context[context.size() - 1 - static_cast<size_t>(i)];
  std::vector<double> x(static_cast<size_t>(c * e), 0.0);
  for (int slot = 0; slot < c; ++slot)
    if (window[static_cast<size_t>(slot)] != v)
      for (int j = 0; j < e; ++j)
        x[static_cast<size_t>(slot * e + j)] = theta[static_cast<size_t>(window[static_cast<size_t>(slot)] * e + j)];
  const int w1o = v * e, b1o = w1o + c * e * h, w2o = b1o + h, b2o = w2o + h * v;
  std::vector<double> hidden(static_cast<size_t>(h));
  for (int k = 0; k < h; ++k) {
    double acc = theta[static_cast<size_t>(b1o + k)];
    for (int i = 0; i < c * e; ++i) acc += theta[static_cast<size_t>(w1o + k * c * e + i)] * x[static_cast<size_t>(i)];
    hidden[static_cast<size_t>(k)] = std::tanh(acc);
  }
  std::vector<double> logits(static_cast<size_t>(v));
  for (int j = 0; j < v; ++j) {
    double acc = theta[static_cast<size_t>(b2o + j)];
    for (int k = 0; k < h; ++k) acc += theta[static_cast<size_t>(w2o + j * h + k)] * hidden[static_cast<size_t>(k)];
    logits[static_cast<size_t>(j)] = acc;
  }
  double max_logit = logits[0];
  for (double l : logits) max_logit = std::max(max_logit, l);
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - max_logit);
  return logits[static_cast<size_t>(token)] - (max_logit + std::log(sum));
}

TEST(Policy, ZeroParametersGiveTheUniformDistribution) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  ParamVector zero;
  zero.values.assign(static_cast<size_t>(cfg.param_count()), 0.0);
  const std::vector<Token> context = {1, 2, 3};
  for (Token t = 0; t < cfg.vocab_size; ++t)
    EXPECT_NEAR(policy.logprob(zero, context, t), -std::log(cfg.vocab_size), 1e-12);
}

TEST(Policy, LogProbsNormalizeToOne) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const ParamVector params = random_params(cfg, 100 + static_cast<uint64_t>(trial), 0.5);
    std::vector<Token> context(static_cast<size_t>(rng.next_int(6)));
    for (Token& t : context) t = static_cast<Token>(rng.next_int(cfg.vocab_size));
    double sum = 0.0;
    for (Token t = 0; t < cfg.vocab_size; ++t) sum += std::exp(policy.logprob(params, context, t));
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Policy, ForwardMatchesAnIndependentReimplementation) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  const ParamVector params = random_params(cfg, 7, 0.4);
  const std::vector<Token> context = {4, Vocabulary::kPlus, 9, Vocabulary::kEquals};
  for (Token t = 0; t < cfg.vocab_size; ++t)
    EXPECT_NEAR(policy.logprob(params, context, t),
                reference_logprob(cfg, params.values, context, t), 1e-12);
}

TEST(Policy, RejectsOutOfRangeTokens) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  const ParamVector params = random_params(cfg, 1);
  const std::vector<Token> context = {1};
  EXPECT_THROW(policy.logprob(params, context, -1), std::out_of_range);
  EXPECT_THROW(policy.logprob(params, context, cfg.vocab_size), std::out_of_range);
  EXPECT_THROW(policy.grad_logprob(params, context, cfg.vocab_size), std::out_of_range);
}

TEST(Policy, GradientMatchesCentralFiniteDifferences) {
  const PolicyConfig cfg = tiny_config();
  ASSERT_LE(cfg.param_count(), 1000);
  const Policy policy(cfg);
  ParamVector params = random_params(cfg, 21, 0.3);
  const std::vector<Token> context = {3, Vocabulary::kMul, 7};
  const Token token = 5;
  const std::vector<double> analytic = policy.grad_logprob(params, context, token);

  const double h = 1e-5;
  Rng coord_rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t i = static_cast<size_t>(coord_rng.next_int(cfg.param_count()));
    const double saved = params.values[i];
    params.values[i] = saved + h;
    const double up = policy.logprob(params, context, token);
    params.values[i] = saved - h;
    const double down = policy.logprob(params, context, token);
    params.values[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double scale = std::max(std::abs(fd), std::abs(analytic[i]));
    EXPECT_LE(std::abs(fd - analytic[i]), 1e-4 * scale + 1e-8) << "coordinate " << i;
  }
}

TEST(Policy, ZeroParameterGradientHasTheUniformSoftmaxForm) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  ParamVector zero;
  zero.values.assign(static_cast<size_t>(cfg.param_count()), 0.0);
  const std::vector<Token> context = {2, 8};
  const Token token = 4;
  const std::vector<double> grad = policy.grad_logprob(zero, context, token);
  const double v = cfg.vocab_size;
  EXPECT_NEAR(grad[static_cast<size_t>(cfg.b2_offset() + token)], 1.0 - 1.0 / v, 1e-12);
  for (Token other = 0; other < cfg.vocab_size; ++other)
    if (other != token)
      EXPECT_NEAR(grad[static_cast<size_t>(cfg.b2_offset() + other)], -1.0 / v, 1e-12);
}

TEST(Policy, AbsentTokensGetExactlyZeroEmbeddingGradient) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  const ParamVector params = random_params(cfg, 3, 0.4);
  const std::vector<Token> context = {1, 2};  // fills the whole window
  const std::vector<double> grad = policy.grad_logprob(params, context, 0);
  std::set<Token> present(context.begin(), context.end());
  for (Token t = 0; t < cfg.vocab_size; ++t) {
    if (present.count(t)) continue;
    for (int j = 0; j < cfg.embed_dim; ++j)
      EXPECT_EQ(grad[static_cast<size_t>(cfg.emb_offset() + t * cfg.embed_dim + j)], 0.0)
          << "token " << t;
  }
}

TEST(Policy, GreedyDecodingIsDeterministic) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  const ParamVector params = random_params(cfg, 9, 0.6);
  const std::vector<Token> prompt = {4, Vocabulary::kPlus, 2, Vocabulary::kAsk};
  Decoding greedy;
  greedy.greedy = true;
  Rng rng_a(1), rng_b(2);  // seeds must be irrelevant under greedy decoding
  const SampledSequence a = policy.sample(params, prompt, {}, 10, greedy, rng_a);
  const SampledSequence b = policy.sample(params, prompt, {}, 10, greedy, rng_b);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.behavior_logprobs, b.behavior_logprobs);
}

TEST(Policy, SamplingIsDeterministicForFixedSeed) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  const ParamVector params = random_params(cfg, 15, 0.6);
  const std::vector<Token> prompt = {1, Vocabulary::kMinus, 2, Vocabulary::kAsk};
  const std::vector<Token> prefix = {3, Vocabulary::kPlus};
  const Decoding dec{1.0, 0.9, false};
  Rng rng_a(42), rng_b(42);
  const SampledSequence a = policy.sample(params, prompt, prefix, 16, dec, rng_a);
  const SampledSequence b = policy.sample(params, prompt, prefix, 16, dec, rng_b);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.behavior_logprobs, b.behavior_logprobs);
  EXPECT_EQ(a.terminated, b.terminated);
}

TEST(Policy, BehaviorLogprobsMatchTeacherForcedReEvaluation) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  const ParamVector params = random_params(cfg, 30, 0.6);
  const std::vector<Token> prompt = {7, Vocabulary::kMul, 3, Vocabulary::kAsk};
  Rng rng(4);
  const SampledSequence seq = policy.sample(params, prompt, {}, 20, Decoding{}, rng);
  std::vector<Token> history(prompt);
  for (size_t t = 0; t < seq.tokens.size(); ++t) {
    EXPECT_NEAR(policy.logprob(params, history, seq.tokens[t]), seq.behavior_logprobs[t], 1e-12);
    history.push_back(seq.tokens[t]);
  }
}

TEST(Policy, BehaviorLogprobsStayUntemperedUnderEvalDecoding) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  const ParamVector params = random_params(cfg, 31, 0.6);
  const std::vector<Token> prompt = {5, Vocabulary::kPlus, 5, Vocabulary::kAsk};
  Rng rng(8);
  const SampledSequence seq = policy.sample(params, prompt, {}, 12, Decoding{0.6, 0.95, false}, rng);
  std::vector<Token> history(prompt);
  for (size_t t = 0; t < seq.tokens.size(); ++t) {
    EXPECT_NEAR(policy.logprob(params, history, seq.tokens[t]), seq.behavior_logprobs[t], 1e-12);
    history.push_back(seq.tokens[t]);
  }
}

TEST(Policy, NucleusKeepsTheSmallestSetReachingTheMass) {
  // Three-token policy with output biases ln(0.6), ln(0.3), ln(0.1): at
  // top_p = 0.5 only the 0.6 token is ever drawn.
  PolicyConfig cfg;
  cfg.vocab_size = 3;
  cfg.context_window = 1;
  cfg.embed_dim = 1;
  cfg.hidden_dim = 1;
  cfg.stop_token = 2;
  const Policy policy(cfg);
  ParamVector params;
  params.values.assign(static_cast<size_t>(cfg.param_count()), 0.0);
  params.values[static_cast<size_t>(cfg.b2_offset() + 0)] = std::log(0.6);
  params.values[static_cast<size_t>(cfg.b2_offset() + 1)] = std::log(0.3);
  params.values[static_cast<size_t>(cfg.b2_offset() + 2)] = std::log(0.1);
  const std::vector<Token> prompt = {0};
  Rng rng(123);
  const Decoding dec{1.0, 0.5, false};
  for (int draw = 0; draw < 1000; ++draw) {
    const SampledSequence s = policy.sample(params, prompt, {}, 1, dec, rng);
    ASSERT_EQ(s.tokens.size(), 1u);
    EXPECT_EQ(s.tokens[0], 0);
  }
}

TEST(Policy, SamplingStopsAtTheTerminalToken) {
  PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  ParamVector params;
  params.values.assign(static_cast<size_t>(cfg.param_count()), 0.0);
  params.values[static_cast<size_t>(cfg.b2_offset() + cfg.stop_token)] = 50.0;  // '#' dominates
  Rng rng(0);
  const SampledSequence s = policy.sample(params, std::vector<Token>{1}, {}, 100, Decoding{}, rng);
  EXPECT_TRUE(s.terminated);
  ASSERT_EQ(s.tokens.size(), 1u);
  EXPECT_EQ(s.tokens[0], cfg.stop_token);
}

TEST(Policy, SampleRespectsTheBudget) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  ParamVector params;
  params.values.assign(static_cast<size_t>(cfg.param_count()), 0.0);
  params.values[static_cast<size_t>(cfg.b2_offset() + cfg.stop_token)] = -50.0;  // '#' suppressed
  Rng rng(0);
  const SampledSequence s = policy.sample(params, std::vector<Token>{1}, {}, 7, Decoding{}, rng);
  EXPECT_FALSE(s.terminated);
  EXPECT_EQ(s.tokens.size(), 7u);
}

TEST(Policy, SnapshotIsIsolatedFromLaterUpdates) {
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  ParamVector params = random_params(cfg, 50, 0.5);
  const PolicySnapshot snapshot(policy, params);
  const std::vector<Token> prompt = {2, Vocabulary::kPlus, 2, Vocabulary::kAsk};
  Rng rng_a(6);
  const SampledSequence before = snapshot.sample(prompt, {}, 12, Decoding{}, rng_a);

  const std::vector<double> frozen = snapshot.params().values;
  for (double& v : params.values) v += 1.0;
  ++params.version;

  Rng rng_b(6);
  const SampledSequence after = snapshot.sample(prompt, {}, 12, Decoding{}, rng_b);
  EXPECT_EQ(before.tokens, after.tokens);
  EXPECT_EQ(snapshot.params().values, frozen);
  EXPECT_NE(snapshot.params().version, params.version);
}

TEST(Policy, CheckpointRoundTripsBitExactly) {
  const auto dir = fresh_dir("policy_ckpt");
  const PolicyConfig cfg = tiny_config();
  const Policy policy(cfg);
  ParamVector params = random_params(cfg, 60, 0.7);
  params.version = 123;
  save_checkpoint(dir / "model.ckpt", cfg, params);
  const Checkpoint loaded = load_checkpoint(dir / "model.ckpt");
  EXPECT_EQ(loaded.config.vocab_size, cfg.vocab_size);
  EXPECT_EQ(loaded.config.context_window, cfg.context_window);
  EXPECT_EQ(loaded.config.embed_dim, cfg.embed_dim);
  EXPECT_EQ(loaded.config.hidden_dim, cfg.hidden_dim);
  EXPECT_EQ(loaded.params.version, 123u);
  ASSERT_EQ(loaded.params.values.size(), params.values.size());
  for (size_t i = 0; i < params.values.size(); ++i)
    EXPECT_EQ(loaded.params.values[i], params.values[i]) << i;
}

TEST(Policy, ParamCountMatchesTheClosedForm) {
  PolicyConfig cfg;  // defaults: V=18, C=24, E=16, H=64
  EXPECT_EQ(cfg.param_count(), 18 * 16 + 24 * 16 * 64 + 64 + 64 * 18 + 18);
}

}  // namespace
}  // namespace denoiserl
