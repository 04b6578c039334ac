#include "denoiserl/task.hpp"

#include <gtest/gtest.h>

#include <array>
#include <set>

#include "test_util.hpp"

namespace denoiserl {
namespace {

using testing::fresh_dir;
using testing::make_problem;
using testing::toks;
using testing::weak_solver_wrong_probability;

TEST(Task, GoldTraceOfSingleStepProblemVerifies) {
  const TrainingSet set = generate_problems(1, 1, 1, 0);
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(verify(set[0], set[0].gold_trace), 1);
}

TEST(Task, GenerationIsDeterministicForFixedSeed) {
  const TrainingSet a = generate_problems(100, 2, 4, 7);
  const TrainingSet b = generate_problems(100, 2, 4, 7);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].question, b[i].question);
    EXPECT_EQ(a[i].gold_trace, b[i].gold_trace);
    EXPECT_EQ(a[i].answer, b[i].answer);
  }
}

TEST(Task, AnswerHistogramIsRoughlyUniform) {
  const TrainingSet set = generate_problems(500, 3, 3, 1);
  std::array<int, 10> counts{};
  for (const Problem& p : set) ++counts[static_cast<size_t>(p.answer)];
  for (int d = 0; d < 10; ++d) {
    EXPECT_GE(counts[static_cast<size_t>(d)], 20) << "digit " << d;
    EXPECT_LE(counts[static_cast<size_t>(d)], 80) << "digit " << d;
  }
}

TEST(Task, EveryGeneratedGoldTraceVerifies) {
  for (const Problem& p : generate_problems(300, 1, 5, 42)) {
    EXPECT_EQ(verify(p, p.gold_trace), 1);
    EXPECT_TRUE(is_well_formed_derivation(p.gold_trace));
    EXPECT_EQ(static_cast<int>(p.gold_trace.size()), 6 * p.depth + 3);
  }
}

TEST(Task, GenerateRejectsBadArguments) {
  EXPECT_THROW(generate_problems(0, 1, 1, 0), std::invalid_argument);
  EXPECT_THROW(generate_problems(1, 0, 1, 0), std::invalid_argument);
  EXPECT_THROW(generate_problems(1, 3, 2, 0), std::invalid_argument);
}

TEST(Task, VerifyAcceptsTheWorkedExample) {
  // (7+5) mod 10 = 2, (2*3) mod 10 = 6
  const Problem p = make_problem("7 + 5 * 3 ?");
  EXPECT_EQ(p.answer, 6);
  EXPECT_EQ(verify(p, toks("7 + 5 = 2 ; 2 * 3 = 6 ; A 6 #")), 1);
  EXPECT_EQ(verify(p, toks("7 + 5 = 2 ; 2 * 3 = 6 ; A 7 #")), 0);
  EXPECT_EQ(verify(p, toks("7 + 5 = 2 ; 2 * 3 = 6")), 0);  // budget-truncated, no marker
}

TEST(Task, VerifyUsesTheFinalAnswerMarker) {
  const Problem p = make_problem("7 + 5 * 3 ?");
  // a self-correcting response restates the answer after a wrong attempt
  EXPECT_EQ(verify(p, toks("A 3 ; A 6 #")), 1);
  EXPECT_EQ(verify(p, toks("A 6 ; A 3 #")), 0);
  // exactly one digit must sit between the final marker and '#'
  EXPECT_EQ(verify(p, toks("A 6 6 #")), 0);
  EXPECT_EQ(verify(p, toks("A #")), 0);
  EXPECT_EQ(verify(p, std::vector<Token>{}), 0);
}

TEST(Task, VerifyIsTotalOverFuzzedSequences) {
  const Problem p = make_problem("3 - 4 ?");
  Rng rng(99);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<Token> junk(static_cast<size_t>(rng.next_int(50)));
    for (Token& t : junk) t = static_cast<Token>(rng.next_int(Vocabulary::kSize));
    const int r = verify(p, junk);
    ASSERT_TRUE(r == 0 || r == 1);
  }
}

TEST(Task, WeakSolverWithZeroErrorReproducesGold) {
  const TrainingSet set = generate_problems(50, 1, 4, 5);
  const WeakSolverConfig cfg{0.0, 1, 0};
  for (const Problem& p : set) {
    for (uint64_t s = 0; s < 3; ++s) {
      Rng rng(s);
      EXPECT_EQ(weak_solve(p, cfg, rng), p.gold_trace);
    }
  }
}

TEST(Task, WeakSolverWithFullErrorOnDepthOneIsAlwaysWrong) {
  const Problem p = make_problem("4 + 3 ?");
  const WeakSolverConfig cfg{1.0, 1, 0};
  for (uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    const std::vector<Token> out = weak_solve(p, cfg, rng);
    EXPECT_EQ(verify(p, out), 0);
    EXPECT_TRUE(is_well_formed_derivation(out));
  }
}

TEST(Task, WeakSolverOutputIsAlwaysWellFormed) {
  const TrainingSet set = generate_problems(40, 1, 5, 11);
  const WeakSolverConfig cfg{0.7, 1, 0};
  Rng rng(3);
  for (const Problem& p : set) {
    const std::vector<Token> out = weak_solve(p, cfg, rng);
    EXPECT_TRUE(is_well_formed_derivation(out));
    EXPECT_EQ(out.size(), p.gold_trace.size());
  }
}

TEST(Task, WeakSolverWrongRateMatchesTheAnalyticOracle) {
  // Corruption propagates, and a later corruption can restore the correct
  // digit by chance; the DP oracle accounts for both.
  const Problem p = make_problem("6 * 3 - 8 + 2 ?");
  const double eta = 0.5;
  const double expected = weak_solver_wrong_probability(p, eta);
  const WeakSolverConfig cfg{eta, 1, 0};
  int wrong = 0;
  const int samples = 1000;
  for (int s = 0; s < samples; ++s) {
    Rng rng = Rng::stream(17, 0, static_cast<uint64_t>(s));
    wrong += 1 - verify(p, weak_solve(p, cfg, rng));
  }
  const double empirical = static_cast<double>(wrong) / samples;
  EXPECT_NEAR(empirical, expected, 0.05);
}

TEST(Task, TrainingSetRoundTripsThroughDisk) {
  const auto dir = fresh_dir("task_io");
  const TrainingSet set = generate_problems(64, 2, 4, 13);
  save_training_set(set, dir / "problems.tsv");
  const TrainingSet loaded = load_training_set(dir / "problems.tsv");
  ASSERT_EQ(loaded.size(), set.size());
  for (size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(loaded[i].id, set[i].id);
    EXPECT_EQ(loaded[i].depth, set[i].depth);
    EXPECT_EQ(loaded[i].question, set[i].question);
    EXPECT_EQ(loaded[i].gold_trace, set[i].gold_trace);
    EXPECT_EQ(loaded[i].answer, set[i].answer);
  }
}

TEST(Task, LoaderRejectsTamperedAnswers) {
  const auto dir = fresh_dir("task_tamper");
  const TrainingSet set = generate_problems(4, 2, 2, 1);
  save_training_set(set, dir / "problems.tsv");
  std::ifstream in(dir / "problems.tsv");
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const size_t last_tab = all.rfind('\t');
  all[last_tab + 1] = all[last_tab + 1] == '9' ? '8' : '9';
  std::ofstream out(dir / "problems.tsv");
  out << all;
  out.close();
  EXPECT_THROW(load_training_set(dir / "problems.tsv"), std::runtime_error);
}

}  // namespace
}  // namespace denoiserl
