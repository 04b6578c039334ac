#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "denoiserl/common.hpp"
#include "denoiserl/vocab.hpp"

namespace denoiserl {

// One verifiable chain-arithmetic question with its canonical solution.
// question: v0 op1 a1 ... opD aD ?   (single digits, mod-10, left to right)
// gold_trace: v0 op1 a1 = v1 ; ... ; A vD #
struct Problem {
  int32_t id = 0;
  int depth = 0;
  std::vector<Token> question;
  std::vector<Token> gold_trace;
  int answer = 0;
};

using TrainingSet = std::vector<Problem>;

inline int apply_op(int lhs, Token op, int rhs) {
  int v = 0;
  switch (op) {
    case Vocabulary::kPlus: v = lhs + rhs; break;
    case Vocabulary::kMinus: v = lhs - rhs; break;
    case Vocabulary::kMul: v = lhs * rhs; break;
    default: throw std::invalid_argument("apply_op: not an operator token");
  }
  return ((v % 10) + 10) % 10;
}

struct ParsedQuestion {
  int start = 0;                               // v0
  std::vector<std::pair<Token, int>> steps;    // (op_k, a_k)
};

inline ParsedQuestion parse_question(std::span<const Token> question) {
  if (question.size() < 4 || question.size() % 2 != 0)
    throw std::invalid_argument("parse_question: bad length");
  if (!Vocabulary::is_digit(question[0]) || question.back() != Vocabulary::kAsk)
    throw std::invalid_argument("parse_question: bad frame");
  ParsedQuestion q;
  q.start = question[0];
  for (size_t i = 1; i + 1 < question.size(); i += 2) {
    if (!Vocabulary::is_operator(question[i]) || !Vocabulary::is_digit(question[i + 1]))
      throw std::invalid_argument("parse_question: bad step");
    q.steps.emplace_back(question[i], static_cast<int>(question[i + 1]));
  }
  return q;
}

// Reference evaluator: replays the question left to right and emits the
// canonical step-by-step trace.
inline std::vector<Token> gold_trace_for(std::span<const Token> question, int* answer_out = nullptr) {
  const ParsedQuestion q = parse_question(question);
  std::vector<Token> trace;
  int value = q.start;
  for (const auto& [op, operand] : q.steps) {
    const int next = apply_op(value, op, operand);
    trace.push_back(Vocabulary::digit(value));
    trace.push_back(op);
    trace.push_back(Vocabulary::digit(operand));
    trace.push_back(Vocabulary::kEquals);
    trace.push_back(Vocabulary::digit(next));
    trace.push_back(Vocabulary::kSep);
    value = next;
  }
  trace.push_back(Vocabulary::kAnswer);
  trace.push_back(Vocabulary::digit(value));
  trace.push_back(Vocabulary::kEnd);
  if (answer_out) *answer_out = value;
  return trace;
}

// Binary verifier. Total over arbitrary token sequences: the response earns
// reward 1 iff the token right after the final answer marker is a single digit
// equal to the problem's answer and is itself followed by the end token.
inline int verify(const Problem& problem, std::span<const Token> response) {
  size_t last_answer = response.size();
  for (size_t i = 0; i < response.size(); ++i)
    if (response[i] == Vocabulary::kAnswer) last_answer = i;
  if (last_answer == response.size()) return 0;
  if (last_answer + 2 >= response.size()) return 0;
  const Token d = response[last_answer + 1];
  if (!Vocabulary::is_digit(d)) return 0;
  if (response[last_answer + 2] != Vocabulary::kEnd) return 0;
  return d == Vocabulary::digit(problem.answer) ? 1 : 0;
}

// Step grammar check: (d op d = d ;)* A d #, nothing after '#'.
inline bool is_well_formed_derivation(std::span<const Token> tokens) {
  size_t i = 0;
  while (i < tokens.size() && tokens[i] != Vocabulary::kAnswer) {
    if (i + 6 > tokens.size()) return false;
    if (!Vocabulary::is_digit(tokens[i])) return false;
    if (!Vocabulary::is_operator(tokens[i + 1])) return false;
    if (!Vocabulary::is_digit(tokens[i + 2])) return false;
    if (tokens[i + 3] != Vocabulary::kEquals) return false;
    if (!Vocabulary::is_digit(tokens[i + 4])) return false;
    if (tokens[i + 5] != Vocabulary::kSep) return false;
    i += 6;
  }
  if (i + 3 != tokens.size()) return false;
  return tokens[i] == Vocabulary::kAnswer && Vocabulary::is_digit(tokens[i + 1]) &&
         tokens[i + 2] == Vocabulary::kEnd;
}

// Generates `count` problems with depths uniform in [depth_min, depth_max].
// Multipliers are drawn coprime to 10 so every step permutes the digit space
// and answers stay uniform over 0-9.
inline TrainingSet generate_problems(int count, int depth_min, int depth_max, uint64_t seed) {
  if (count < 1) throw std::invalid_argument("generate_problems: count must be >= 1");
  if (depth_min < 1 || depth_min > depth_max)
    throw std::invalid_argument("generate_problems: need 1 <= depth_min <= depth_max");
  static constexpr int kCoprimeDigits[] = {1, 3, 7, 9};
  Rng rng(seed);
  TrainingSet problems;
  problems.reserve(static_cast<size_t>(count));
  for (int id = 0; id < count; ++id) {
    Problem p;
    p.id = id;
    p.depth = depth_min + rng.next_int(depth_max - depth_min + 1);
    p.question.push_back(Vocabulary::digit(rng.next_int(10)));
    for (int k = 0; k < p.depth; ++k) {
      static constexpr Token kOps[] = {Vocabulary::kPlus, Vocabulary::kMinus, Vocabulary::kMul};
      const Token op = kOps[rng.next_int(3)];
      const int operand = op == Vocabulary::kMul ? kCoprimeDigits[rng.next_int(4)] : rng.next_int(10);
      p.question.push_back(op);
      p.question.push_back(Vocabulary::digit(operand));
    }
    p.question.push_back(Vocabulary::kAsk);
    p.gold_trace = gold_trace_for(p.question, &p.answer);
    if (verify(p, p.gold_trace) != 1)
      throw std::logic_error("generate_problems: gold trace failed verification");
    problems.push_back(std::move(p));
  }
  return problems;
}

// Rule-based weak solver: emits a derivation in the gold format where each
// step result is, independently with probability error_rate, replaced by a
// uniformly chosen wrong digit. Corruption propagates: later steps compute
// from the corrupted value, so each printed step still looks locally valid.
struct WeakSolverConfig {
  double error_rate = 0.5;  // eta
  int trials = 8;           // M, candidate samples per problem
  uint64_t seed = 0;
};

inline void validate(const WeakSolverConfig& cfg) {
  if (cfg.error_rate < 0.0 || cfg.error_rate > 1.0)
    throw std::invalid_argument("WeakSolverConfig: error_rate must be in [0,1]");
  if (cfg.trials < 1) throw std::invalid_argument("WeakSolverConfig: trials must be >= 1");
}

inline std::vector<Token> weak_solve(const Problem& problem, const WeakSolverConfig& cfg, Rng& rng) {
  const ParsedQuestion q = parse_question(problem.question);
  std::vector<Token> out;
  int value = q.start;
  for (const auto& [op, operand] : q.steps) {
    int next = apply_op(value, op, operand);
    if (rng.next_unit() < cfg.error_rate) {
      const int offset = rng.next_int(9);
      next = offset >= next ? offset + 1 : offset;  // uniform over the 9 wrong digits
    }
    out.push_back(Vocabulary::digit(value));
    out.push_back(op);
    out.push_back(Vocabulary::digit(operand));
    out.push_back(Vocabulary::kEquals);
    out.push_back(Vocabulary::digit(next));
    out.push_back(Vocabulary::kSep);
    value = next;
  }
  out.push_back(Vocabulary::kAnswer);
  out.push_back(Vocabulary::digit(value));
  out.push_back(Vocabulary::kEnd);
  return out;
}

// --- training-set persistence ---------------------------------------------
// One record per line: id <TAB> depth <TAB> question token ids <TAB> answer

inline void save_training_set(const TrainingSet& problems, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const Problem& p : problems) {
    out << p.id << '\t' << p.depth << '\t';
    for (size_t i = 0; i < p.question.size(); ++i) {
      if (i) out << ' ';
      out << p.question[i];
    }
    out << '\t' << p.answer << '\n';
  }
}

inline std::vector<Token> parse_token_ids(std::string_view field) {
  std::vector<Token> tokens;
  size_t pos = 0;
  while (pos < field.size()) {
    size_t end = field.find(' ', pos);
    if (end == std::string_view::npos) end = field.size();
    if (end > pos) tokens.push_back(static_cast<Token>(parse_int(field.substr(pos, end - pos))));
    pos = end + 1;
  }
  return tokens;
}

inline TrainingSet load_training_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  TrainingSet problems;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    while (true) {
      const size_t tab = rest.find('\t');
      if (tab == std::string_view::npos) {
        fields.push_back(rest);
        break;
      }
      fields.push_back(rest.substr(0, tab));
      rest = rest.substr(tab + 1);
    }
    if (fields.size() != 4) throw std::runtime_error("training set: bad record '" + line + "'");
    Problem p;
    p.id = static_cast<int32_t>(parse_int(fields[0]));
    p.depth = static_cast<int>(parse_int(fields[1]));
    p.question = parse_token_ids(fields[2]);
    p.gold_trace = gold_trace_for(p.question, &p.answer);
    if (p.answer != static_cast<int>(parse_int(fields[3])))
      throw std::runtime_error("training set: stored answer disagrees with the evaluator for id " +
                               std::to_string(p.id));
    if (static_cast<int>(parse_question(p.question).steps.size()) != p.depth)
      throw std::runtime_error("training set: stored depth disagrees with the question for id " +
                               std::to_string(p.id));
    problems.push_back(std::move(p));
  }
  return problems;
}

}  // namespace denoiserl
