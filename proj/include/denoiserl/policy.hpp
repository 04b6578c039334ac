#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "denoiserl/common.hpp"
#include "denoiserl/vocab.hpp"

namespace denoiserl {

// Fixed-context categorical sequence model: the last `context_window` tokens
// are embedded, concatenated, passed through one tanh hidden layer, and mapped
// to logits over the generative vocabulary. Short histories are left-padded
// with the pad id, which embeds as the zero vector and is never sampleable.
struct PolicyConfig {
  int vocab_size = Vocabulary::kSize;  // V
  int context_window = 24;             // C
  int embed_dim = 16;                  // E
  int hidden_dim = 64;                 // H
  Token stop_token = Vocabulary::kEnd;

  int param_count() const {
    return vocab_size * embed_dim + context_window * embed_dim * hidden_dim + hidden_dim +
           hidden_dim * vocab_size + vocab_size;
  }
  Token pad_token() const { return static_cast<Token>(vocab_size); }

  // flat layout: [embedding][hidden weights][hidden bias][output weights][output bias]
  int emb_offset() const { return 0; }
  int w1_offset() const { return vocab_size * embed_dim; }
  int b1_offset() const { return w1_offset() + context_window * embed_dim * hidden_dim; }
  int w2_offset() const { return b1_offset() + hidden_dim; }
  int b2_offset() const { return w2_offset() + hidden_dim * vocab_size; }

  void validate() const {
    if (vocab_size < 1 || context_window < 1 || embed_dim < 1 || hidden_dim < 1)
      throw std::invalid_argument("PolicyConfig: all dimensions must be >= 1");
    if (stop_token < 0 || stop_token >= vocab_size)
      throw std::invalid_argument("PolicyConfig: stop_token outside the vocabulary");
  }
};

// Flat policy parameters. `version` counts optimizer updates so snapshots can
// be told apart from the live vector.
struct ParamVector {
  std::vector<double> values;
  uint64_t version = 0;
};

struct Decoding {
  double temperature = 1.0;
  double top_p = 1.0;
  bool greedy = false;
};

struct SampledSequence {
  std::vector<Token> tokens;
  std::vector<double> behavior_logprobs;  // temperature-1 logprobs of the chosen tokens
  bool terminated = false;                // stop token emitted before the budget
  int length() const { return static_cast<int>(tokens.size()); }
};

namespace detail {

inline void log_softmax_in_place(std::span<double> logits) {
  double max_logit = logits[0];
  for (double v : logits) max_logit = std::max(max_logit, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - max_logit);
  const double lse = max_logit + std::log(sum);
  for (double& v : logits) v -= lse;
}

}  // namespace detail

class Policy {
 public:
  explicit Policy(PolicyConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const PolicyConfig& config() const { return cfg_; }

  ParamVector init_params(uint64_t seed, double scale = 0.02) const {
    ParamVector p;
    p.values.resize(static_cast<size_t>(cfg_.param_count()));
    Rng rng(seed);
    for (double& v : p.values) v = rng.next_symmetric(scale);
    return p;
  }

  // Last `context_window` tokens of the history, left-padded with the pad id.
  void fill_window(std::span<const Token> context, std::span<Token> window) const {
    const int c = cfg_.context_window;
    const int have = std::min<int>(c, static_cast<int>(context.size()));
    for (int i = 0; i < c - have; ++i) window[static_cast<size_t>(i)] = cfg_.pad_token();
    for (int i = 0; i < have; ++i)
      window[static_cast<size_t>(c - have + i)] = context[context.size() - static_cast<size_t>(have) + static_cast<size_t>(i)];
  }

  // Log-probabilities over the whole vocabulary for one context.
  void log_softmax(const ParamVector& params, std::span<const Token> context,
                   std::span<double> out) const {
    check_params(params);
    std::vector<Token> window(static_cast<size_t>(cfg_.context_window));
    std::vector<double> hidden(static_cast<size_t>(cfg_.hidden_dim));
    fill_window(context, window);
    forward(params, window, hidden, out);
    detail::log_softmax_in_place(out);
  }

  double logprob(const ParamVector& params, std::span<const Token> context, Token token) const {
    check_token(token);
    std::vector<double> row(static_cast<size_t>(cfg_.vocab_size));
    log_softmax(params, context, row);
    return row[static_cast<size_t>(token)];
  }

  // Exact analytic gradient of logprob with respect to every parameter.
  std::vector<double> grad_logprob(const ParamVector& params, std::span<const Token> context,
                                   Token token) const {
    check_params(params);
    check_token(token);
    const int c = cfg_.context_window, e = cfg_.embed_dim, h = cfg_.hidden_dim, v = cfg_.vocab_size;
    std::vector<Token> window(static_cast<size_t>(c));
    std::vector<double> hidden(static_cast<size_t>(h));
    std::vector<double> row(static_cast<size_t>(v));
    fill_window(context, window);
    forward(params, window, hidden, row);
    detail::log_softmax_in_place(row);

    std::vector<double> grad(params.values.size(), 0.0);
    const double* theta = params.values.data();
    double* g = grad.data();

    // d logprob / d logits = onehot(token) - softmax
    std::vector<double> dlogits(static_cast<size_t>(v));
    for (int j = 0; j < v; ++j) dlogits[static_cast<size_t>(j)] = -std::exp(row[static_cast<size_t>(j)]);
    dlogits[static_cast<size_t>(token)] += 1.0;

    const int w2o = cfg_.w2_offset(), b2o = cfg_.b2_offset();
    std::vector<double> dhidden(static_cast<size_t>(h), 0.0);
    for (int j = 0; j < v; ++j) {
      const double dj = dlogits[static_cast<size_t>(j)];
      g[b2o + j] += dj;
      const double* w2row = theta + w2o + j * h;
      double* gw2 = g + w2o + j * h;
      for (int k = 0; k < h; ++k) {
        gw2[k] += dj * hidden[static_cast<size_t>(k)];
        dhidden[static_cast<size_t>(k)] += dj * w2row[k];
      }
    }

    const int w1o = cfg_.w1_offset(), b1o = cfg_.b1_offset(), embo = cfg_.emb_offset();
    const int ce = c * e;
    for (int k = 0; k < h; ++k) {
      const double dpre = dhidden[static_cast<size_t>(k)] *
                          (1.0 - hidden[static_cast<size_t>(k)] * hidden[static_cast<size_t>(k)]);
      g[b1o + k] += dpre;
      const double* w1row = theta + w1o + k * ce;
      double* gw1 = g + w1o + k * ce;
      for (int slot = 0; slot < c; ++slot) {
        const Token t = window[static_cast<size_t>(slot)];
        if (t == cfg_.pad_token()) continue;  // zero embedding: no dataflow
        const double* emb = theta + embo + t * e;
        double* gemb = g + embo + t * e;
        for (int i = 0; i < e; ++i) {
          gw1[slot * e + i] += dpre * emb[i];
          gemb[i] += dpre * w1row[slot * e + i];
        }
      }
    }
    return grad;
  }

  SampledSequence sample(const ParamVector& params, std::span<const Token> prompt,
                         std::span<const Token> prefix, int max_new, const Decoding& decoding,
                         Rng& rng) const;

 private:
  friend class PolicySnapshot;

  void check_params(const ParamVector& params) const {
    if (params.values.size() != static_cast<size_t>(cfg_.param_count()))
      throw std::invalid_argument("ParamVector length does not match the policy configuration");
  }
  void check_token(Token token) const {
    if (token < 0 || token >= cfg_.vocab_size)
      throw std::out_of_range("token id outside [0, V)");
  }

  // Plain forward pass: window -> tanh hidden -> raw logits.
  void forward(const ParamVector& params, std::span<const Token> window, std::span<double> hidden,
               std::span<double> logits) const {
    const int c = cfg_.context_window, e = cfg_.embed_dim, h = cfg_.hidden_dim, v = cfg_.vocab_size;
    const double* theta = params.values.data();
    const int w1o = cfg_.w1_offset(), b1o = cfg_.b1_offset();
    const int ce = c * e;
    for (int k = 0; k < h; ++k) {
      double acc = theta[b1o + k];
      const double* w1row = theta + w1o + k * ce;
      for (int slot = 0; slot < c; ++slot) {
        const Token t = window[static_cast<size_t>(slot)];
        if (t == cfg_.pad_token()) continue;
        const double* emb = theta + cfg_.emb_offset() + t * e;
        for (int i = 0; i < e; ++i) acc += w1row[slot * e + i] * emb[i];
      }
      hidden[static_cast<size_t>(k)] = std::tanh(acc);
    }
    const int w2o = cfg_.w2_offset(), b2o = cfg_.b2_offset();
    for (int j = 0; j < v; ++j) {
      double acc = theta[b2o + j];
      const double* w2row = theta + w2o + j * h;
      for (int k = 0; k < h; ++k) acc += w2row[k] * hidden[static_cast<size_t>(k)];
      logits[static_cast<size_t>(j)] = acc;
    }
  }

  PolicyConfig cfg_;
};

// Frozen copy of the parameters plus a per-(slot, token) table of hidden-layer
// partial sums, rebuilt once per snapshot so token-by-token decoding and
// teacher-forced scoring avoid the full hidden matmul.
class PolicySnapshot {
 public:
  PolicySnapshot(const Policy& policy, const ParamVector& params)
      : policy_(policy), params_{params.values, params.version} {
    policy_.check_params(params);
    build_cache();
  }

  const Policy& policy() const { return policy_; }
  const PolicyConfig& config() const { return policy_.config(); }
  const ParamVector& params() const { return params_; }

  // Forward intermediates for one context, kept for the backward pass.
  struct Forward {
    std::vector<Token> window;
    std::vector<double> hidden;
    std::vector<double> logits;    // raw logits
    std::vector<double> logprobs;  // temperature-1 log-softmax
  };

  void forward(std::span<const Token> history, Forward& f) const {
    const PolicyConfig& cfg = policy_.config();
    const int c = cfg.context_window, h = cfg.hidden_dim, v = cfg.vocab_size;
    f.window.resize(static_cast<size_t>(c));
    f.hidden.resize(static_cast<size_t>(h));
    f.logits.resize(static_cast<size_t>(v));
    f.logprobs.resize(static_cast<size_t>(v));
    policy_.fill_window(history, f.window);

    const double* theta = params_.values.data();
    const int b1o = cfg.b1_offset();
    for (int k = 0; k < h; ++k) f.hidden[static_cast<size_t>(k)] = theta[b1o + k];
    for (int slot = 0; slot < c; ++slot) {
      const Token t = f.window[static_cast<size_t>(slot)];
      if (t == cfg.pad_token()) continue;
      const double* contrib = slot_contrib(slot, t);
      for (int k = 0; k < h; ++k) f.hidden[static_cast<size_t>(k)] += contrib[k];
    }
    for (int k = 0; k < h; ++k) f.hidden[static_cast<size_t>(k)] = std::tanh(f.hidden[static_cast<size_t>(k)]);

    const int w2o = cfg.w2_offset(), b2o = cfg.b2_offset();
    for (int j = 0; j < v; ++j) {
      double acc = theta[b2o + j];
      const double* w2row = theta + w2o + j * h;
      for (int k = 0; k < h; ++k) acc += w2row[k] * f.hidden[static_cast<size_t>(k)];
      f.logits[static_cast<size_t>(j)] = acc;
    }
    f.logprobs = f.logits;
    detail::log_softmax_in_place(f.logprobs);
  }

  double logprob(std::span<const Token> history, Token token) const {
    policy_.check_token(token);
    Forward f;
    forward(history, f);
    return f.logprobs[static_cast<size_t>(token)];
  }

  // Accumulates weight * d logprob(token)/d theta into `grad` (flat layout).
  void accumulate_grad(const Forward& f, Token token, double weight, std::span<double> grad) const {
    const PolicyConfig& cfg = policy_.config();
    const int c = cfg.context_window, e = cfg.embed_dim, h = cfg.hidden_dim, v = cfg.vocab_size;
    const double* theta = params_.values.data();
    double* g = grad.data();

    const int w2o = cfg.w2_offset(), b2o = cfg.b2_offset();
    std::vector<double> dhidden(static_cast<size_t>(h), 0.0);
    for (int j = 0; j < v; ++j) {
      const double dj = weight * ((j == token ? 1.0 : 0.0) - std::exp(f.logprobs[static_cast<size_t>(j)]));
      g[b2o + j] += dj;
      const double* w2row = theta + w2o + j * h;
      double* gw2 = g + w2o + j * h;
      for (int k = 0; k < h; ++k) {
        gw2[k] += dj * f.hidden[static_cast<size_t>(k)];
        dhidden[static_cast<size_t>(k)] += dj * w2row[k];
      }
    }

    const int w1o = cfg.w1_offset(), b1o = cfg.b1_offset(), embo = cfg.emb_offset();
    const int ce = c * e;
    for (int k = 0; k < h; ++k) {
      const double dpre = dhidden[static_cast<size_t>(k)] *
                          (1.0 - f.hidden[static_cast<size_t>(k)] * f.hidden[static_cast<size_t>(k)]);
      g[b1o + k] += dpre;
      const double* w1row = theta + w1o + k * ce;
      double* gw1 = g + w1o + k * ce;
      for (int slot = 0; slot < c; ++slot) {
        const Token t = f.window[static_cast<size_t>(slot)];
        if (t == cfg.pad_token()) continue;
        const double* emb = theta + embo + t * e;
        double* gemb = g + embo + t * e;
        for (int i = 0; i < e; ++i) {
          gw1[slot * e + i] += dpre * emb[i];
          gemb[i] += dpre * w1row[slot * e + i];
        }
      }
    }
  }

  // Autoregressive decoding conditioned on prompt + prefix + generated tokens.
  // Behavior logprobs are recorded at temperature 1 whatever the sampling
  // settings; ties break toward the lowest token id.
  SampledSequence sample(std::span<const Token> prompt, std::span<const Token> prefix, int max_new,
                         const Decoding& decoding, Rng& rng) const {
    if (max_new < 1) throw std::invalid_argument("sample: max_new must be >= 1");
    if (decoding.temperature <= 0.0) throw std::invalid_argument("sample: temperature must be > 0");
    if (decoding.top_p <= 0.0 || decoding.top_p > 1.0)
      throw std::invalid_argument("sample: top_p must be in (0, 1]");

    const PolicyConfig& cfg = policy_.config();
    std::vector<Token> history(prompt.begin(), prompt.end());
    history.insert(history.end(), prefix.begin(), prefix.end());

    SampledSequence seq;
    Forward f;
    std::vector<double> probs(static_cast<size_t>(cfg.vocab_size));
    std::vector<int> order(static_cast<size_t>(cfg.vocab_size));
    for (int step = 0; step < max_new; ++step) {
      forward(history, f);
      const Token chosen = decoding.greedy ? pick_greedy(f)
                                           : pick_sampled(f, decoding, probs, order, rng);
      seq.tokens.push_back(chosen);
      seq.behavior_logprobs.push_back(f.logprobs[static_cast<size_t>(chosen)]);
      history.push_back(chosen);
      if (chosen == cfg.stop_token) {
        seq.terminated = true;
        break;
      }
    }
    return seq;
  }

 private:
  const double* slot_contrib(int slot, Token token) const {
    const PolicyConfig& cfg = policy_.config();
    return slot_contrib_.data() +
           (static_cast<size_t>(slot) * static_cast<size_t>(cfg.vocab_size) + static_cast<size_t>(token)) *
               static_cast<size_t>(cfg.hidden_dim);
  }

  void build_cache() {
    const PolicyConfig& cfg = policy_.config();
    const int c = cfg.context_window, e = cfg.embed_dim, h = cfg.hidden_dim, v = cfg.vocab_size;
    slot_contrib_.assign(static_cast<size_t>(c) * static_cast<size_t>(v) * static_cast<size_t>(h), 0.0);
    const double* theta = params_.values.data();
    const int w1o = cfg.w1_offset(), embo = cfg.emb_offset();
    const int ce = c * e;
    for (int slot = 0; slot < c; ++slot) {
      for (Token t = 0; t < v; ++t) {
        double* out = slot_contrib_.data() +
                      (static_cast<size_t>(slot) * static_cast<size_t>(v) + static_cast<size_t>(t)) *
                          static_cast<size_t>(h);
        const double* emb = theta + embo + t * e;
        for (int k = 0; k < h; ++k) {
          const double* w1row = theta + w1o + k * ce + slot * e;
          double acc = 0.0;
          for (int i = 0; i < e; ++i) acc += w1row[i] * emb[i];
          out[k] = acc;
        }
      }
    }
  }

  static Token pick_greedy(const Forward& f) {
    Token best = 0;
    for (size_t j = 1; j < f.logits.size(); ++j)
      if (f.logits[j] > f.logits[static_cast<size_t>(best)]) best = static_cast<Token>(j);
    return best;
  }

  Token pick_sampled(const Forward& f, const Decoding& decoding, std::vector<double>& probs,
                     std::vector<int>& order, Rng& rng) const {
    const int v = policy_.config().vocab_size;
    double max_logit = f.logits[0];
    for (double x : f.logits) max_logit = std::max(max_logit, x);
    double sum = 0.0;
    for (int j = 0; j < v; ++j) {
      probs[static_cast<size_t>(j)] = std::exp((f.logits[static_cast<size_t>(j)] - max_logit) / decoding.temperature);
      sum += probs[static_cast<size_t>(j)];
    }
    for (int j = 0; j < v; ++j) probs[static_cast<size_t>(j)] /= sum;

    if (decoding.top_p >= 1.0) {
      double u = rng.next_unit();
      for (int j = 0; j < v; ++j) {
        u -= probs[static_cast<size_t>(j)];
        if (u < 0.0) return static_cast<Token>(j);
      }
      return static_cast<Token>(v - 1);
    }

    // Nucleus: smallest probability-sorted set reaching mass >= top_p.
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double pa = probs[static_cast<size_t>(a)], pb = probs[static_cast<size_t>(b)];
      return pa != pb ? pa > pb : a < b;
    });
    double mass = 0.0;
    int kept = 0;
    while (kept < v) {
      mass += probs[static_cast<size_t>(order[static_cast<size_t>(kept)])];
      ++kept;
      if (mass >= decoding.top_p) break;
    }
    double u = rng.next_unit() * mass;
    for (int j = 0; j < kept; ++j) {
      u -= probs[static_cast<size_t>(order[static_cast<size_t>(j)])];
      if (u < 0.0) return static_cast<Token>(order[static_cast<size_t>(j)]);
    }
    return static_cast<Token>(order[static_cast<size_t>(kept - 1)]);
  }

  Policy policy_;
  ParamVector params_;
  std::vector<double> slot_contrib_;  // [slot][token][hidden]
};

inline SampledSequence Policy::sample(const ParamVector& params, std::span<const Token> prompt,
                                      std::span<const Token> prefix, int max_new,
                                      const Decoding& decoding, Rng& rng) const {
  return PolicySnapshot(*this, params).sample(prompt, prefix, max_new, decoding, rng);
}

// --- checkpoint persistence -------------------------------------------------
// Header line `denoiserl-ckpt v1 <V> <C> <E> <H> <version>` followed by one
// decimal parameter value per line in flat-vector order.

inline void save_checkpoint(const std::filesystem::path& path, const PolicyConfig& cfg,
                            const ParamVector& params) {
  if (params.values.size() != static_cast<size_t>(cfg.param_count()))
    throw std::invalid_argument("save_checkpoint: parameter/config mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "denoiserl-ckpt v1 " << cfg.vocab_size << ' ' << cfg.context_window << ' ' << cfg.embed_dim
      << ' ' << cfg.hidden_dim << ' ' << params.version << '\n';
  for (double v : params.values) out << format_double(v) << '\n';
}

struct Checkpoint {
  PolicyConfig config;
  ParamVector params;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string magic, version_tag;
  Checkpoint ckpt;
  in >> magic >> version_tag >> ckpt.config.vocab_size >> ckpt.config.context_window >>
      ckpt.config.embed_dim >> ckpt.config.hidden_dim >> ckpt.params.version;
  if (!in || magic != "denoiserl-ckpt" || version_tag != "v1")
    throw std::runtime_error("not a denoiserl v1 checkpoint: " + path.string());
  ckpt.config.validate();
  const int count = ckpt.config.param_count();
  ckpt.params.values.reserve(static_cast<size_t>(count));
  std::string line;
  std::getline(in, line);  // rest of header line
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ckpt.params.values.push_back(parse_double(trim(line)));
  }
  if (ckpt.params.values.size() != static_cast<size_t>(count))
    throw std::runtime_error("checkpoint value count mismatch in " + path.string());
  return ckpt;
}

}  // namespace denoiserl
