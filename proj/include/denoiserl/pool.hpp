#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "denoiserl/common.hpp"
#include "denoiserl/task.hpp"

namespace denoiserl {

// A verifier-rejected weak-solver derivation.
struct WrongSolution {
  int32_t problem_id = 0;
  std::vector<Token> tokens;
  double eta = 0.0;
  int trial = 0;
};

// Leading slice of a wrong solution, truncated at ratio rho.
struct PrefixSlice {
  int32_t problem_id = 0;
  std::vector<Token> tokens;
  int retained = 0;    // p
  double rho = 0.0;
  int source_len = 0;  // |w|
};

// p = max(1, floor(rho * |w|))
inline int prefix_keep_count(double rho, int source_len) {
  if (rho <= 0.0 || rho > 1.0) throw std::invalid_argument("prefix ratio must be in (0, 1]");
  if (source_len < 1) throw std::invalid_argument("prefix source must be non-empty");
  return std::max(1, static_cast<int>(std::floor(rho * static_cast<double>(source_len))));
}

// Offline pool of wrong solutions per problem. Built once before training and
// immutable afterwards. A pool is "bound" when it knows the full problem-id
// universe (after collect() or bind()); only bound pools can report emptiness
// per id.
class Pool {
 public:
  Pool() = default;

  // Runs the weak solver `trials` times per problem, keeps well-formed wrong
  // solutions, and deduplicates identical token sequences.
  static Pool collect(const TrainingSet& problems, const WeakSolverConfig& cfg) {
    validate(cfg);
    Pool pool;
    for (const Problem& p : problems) {
      std::vector<WrongSolution> kept;
      for (int trial = 0; trial < cfg.trials; ++trial) {
        Rng rng = Rng::stream(cfg.seed, static_cast<uint64_t>(p.id), static_cast<uint64_t>(trial));
        std::vector<Token> candidate = weak_solve(p, cfg, rng);
        if (verify(p, candidate) != 0) continue;
        if (!is_well_formed_derivation(candidate)) continue;
        bool duplicate = false;
        for (const WrongSolution& w : kept)
          if (w.tokens == candidate) { duplicate = true; break; }
        if (duplicate) continue;
        kept.push_back(WrongSolution{p.id, std::move(candidate), cfg.error_rate, trial});
      }
      pool.entries_.emplace(p.id, std::move(kept));
    }
    pool.universe_size_ = problems.size();
    pool.bound_ = true;
    return pool;
  }

  bool bound() const { return bound_; }

  bool has_problem(int32_t problem_id) const { return entries_.count(problem_id) != 0; }

  const std::vector<WrongSolution>& solutions(int32_t problem_id) const {
    auto it = entries_.find(problem_id);
    if (it == entries_.end())
      throw std::out_of_range("pool has no record of problem id " + std::to_string(problem_id));
    return it->second;
  }

  size_t size(int32_t problem_id) const { return solutions(problem_id).size(); }

  size_t total_solutions() const {
    size_t n = 0;
    for (const auto& [id, v] : entries_) n += v.size();
    return n;
  }

  size_t nonempty_count() const {
    size_t n = 0;
    for (const auto& [id, v] : entries_)
      if (!v.empty()) ++n;
    return n;
  }

  size_t problem_count() const { return universe_size_; }

  double empty_fraction() const {
    if (universe_size_ == 0) return 0.0;
    return 1.0 - static_cast<double>(nonempty_count()) / static_cast<double>(universe_size_);
  }

  PrefixSlice slice(const WrongSolution& w, double rho) const {
    const int len = static_cast<int>(w.tokens.size());
    const int p = prefix_keep_count(rho, len);
    PrefixSlice s;
    s.problem_id = w.problem_id;
    s.tokens.assign(w.tokens.begin(), w.tokens.begin() + p);
    s.retained = p;
    s.rho = rho;
    s.source_len = len;
    return s;
  }

  const std::map<int32_t, std::vector<WrongSolution>>& entries() const { return entries_; }

  // --- persistence ----------------------------------------------------------
  // Records `problem_id <TAB> eta <TAB> trial <TAB> token ids`, then footers
  // `#problems <n>` (universe size) and `#count <n>` (record count) for
  // load-time integrity checking.

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    size_t count = 0;
    for (const auto& [id, solutions] : entries_) {
      for (const WrongSolution& w : solutions) {
        out << id << '\t' << format_double(w.eta) << '\t' << w.trial << '\t';
        for (size_t i = 0; i < w.tokens.size(); ++i) {
          if (i) out << ' ';
          out << w.tokens[i];
        }
        out << '\n';
        ++count;
      }
    }
    out << "#problems " << universe_size_ << '\n';
    out << "#count " << count << '\n';
  }

  static Pool load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    Pool pool;
    std::string line;
    size_t count = 0;
    bool saw_count = false, saw_problems = false;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line.rfind("#count ", 0) == 0) {
        const auto declared = static_cast<size_t>(parse_int(trim(std::string_view(line).substr(7))));
        if (declared != count)
          throw std::runtime_error("pool file footer count " + std::to_string(declared) +
                                   " != parsed records " + std::to_string(count));
        saw_count = true;
        continue;
      }
      if (line.rfind("#problems ", 0) == 0) {
        pool.universe_size_ = static_cast<size_t>(parse_int(trim(std::string_view(line).substr(10))));
        saw_problems = true;
        continue;
      }
      std::vector<std::string_view> fields;
      std::string_view rest = line;
      while (true) {
        const size_t tab = rest.find('\t');
        if (tab == std::string_view::npos) { fields.push_back(rest); break; }
        fields.push_back(rest.substr(0, tab));
        rest = rest.substr(tab + 1);
      }
      if (fields.size() != 4) throw std::runtime_error("pool file: bad record '" + line + "'");
      WrongSolution w;
      w.problem_id = static_cast<int32_t>(parse_int(fields[0]));
      w.eta = parse_double(fields[1]);
      w.trial = static_cast<int>(parse_int(fields[2]));
      w.tokens = parse_token_ids(fields[3]);
      if (!is_well_formed_derivation(w.tokens))
        throw std::runtime_error("pool file: malformed derivation for problem " +
                                 std::to_string(w.problem_id));
      const int32_t id = w.problem_id;
      pool.entries_[id].push_back(std::move(w));
      ++count;
    }
    if (!saw_count || !saw_problems)
      throw std::runtime_error("pool file missing footer lines: " + path.string());
    return pool;
  }

  static Pool load(const std::filesystem::path& path, const TrainingSet& problems) {
    Pool pool = load(path);
    pool.bind(problems);
    return pool;
  }

  // Resolves the id universe against the originating training set and runs the
  // exhaustive integrity check: every pooled entry must still be judged wrong
  // by the verifier.
  void bind(const TrainingSet& problems) {
    std::map<int32_t, const Problem*> by_id;
    for (const Problem& p : problems) by_id[p.id] = &p;
    if (universe_size_ != 0 && universe_size_ != by_id.size())
      throw std::runtime_error("pool was collected over " + std::to_string(universe_size_) +
                               " problems but the training set has " + std::to_string(by_id.size()));
    for (const auto& [id, solutions] : entries_) {
      auto it = by_id.find(id);
      if (it == by_id.end())
        throw std::runtime_error("pool refers to unknown problem id " + std::to_string(id));
      for (const WrongSolution& w : solutions) {
        if (verify(*it->second, w.tokens) != 0)
          throw std::runtime_error("pool entry for problem " + std::to_string(id) +
                                   " verifies as correct; pool is corrupt");
        if (!is_well_formed_derivation(w.tokens))
          throw std::runtime_error("pool entry for problem " + std::to_string(id) + " is malformed");
      }
    }
    for (const auto& [id, p] : by_id) entries_.emplace(id, std::vector<WrongSolution>{});
    universe_size_ = by_id.size();
    bound_ = true;
  }

 private:
  std::map<int32_t, std::vector<WrongSolution>> entries_;
  size_t universe_size_ = 0;
  bool bound_ = false;
};

// Per-group draw plan over one problem's pool: the K slots receive distinct
// wrong solutions while the pool holds at least K, otherwise draws repeat.
// An empty pool consumes no randomness, so fallback groups replay exactly the
// token stream of a pure main-rollout group.
class PrefixDraw {
 public:
  PrefixDraw(const Pool& pool, int32_t problem_id, int slots, Rng& rng)
      : pool_(&pool), problem_id_(problem_id) {
    const auto& solutions = pool.solutions(problem_id);  // throws on unknown id
    const int n = static_cast<int>(solutions.size());
    if (n == 0 || slots <= 0) return;
    picks_.reserve(static_cast<size_t>(slots));
    if (n >= slots) {
      std::vector<int> indices(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) indices[static_cast<size_t>(i)] = i;
      for (int j = 0; j < slots; ++j) {  // partial Fisher-Yates
        const int pick = j + rng.next_int(n - j);
        std::swap(indices[static_cast<size_t>(j)], indices[static_cast<size_t>(pick)]);
        picks_.push_back(indices[static_cast<size_t>(j)]);
      }
    } else {
      for (int j = 0; j < slots; ++j) picks_.push_back(rng.next_int(n));
    }
  }

  // Slice for one slot, or nullopt when the pool is empty (fallback signal).
  std::optional<PrefixSlice> sample(int slot, double rho) const {
    if (picks_.empty()) return std::nullopt;
    if (slot < 0 || slot >= static_cast<int>(picks_.size()))
      throw std::out_of_range("PrefixDraw: slot index outside the planned group");
    const auto& solutions = pool_->solutions(problem_id_);
    return pool_->slice(solutions[static_cast<size_t>(picks_[static_cast<size_t>(slot)])], rho);
  }

  bool empty() const { return picks_.empty(); }

 private:
  const Pool* pool_ = nullptr;
  int32_t problem_id_ = 0;
  std::vector<int> picks_;
};

}  // namespace denoiserl
