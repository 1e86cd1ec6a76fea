#pragma once

#include "pcae/autodiff.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace pcae {

using Rng = std::mt19937_64;

// Mixes a base seed with stream identifiers (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

enum class Init { kZero, kUniform, kXavier };

// Named parameter tensors, iterated in lexicographic name order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init,
                 Rng& rng, double uniform_range = 0.1);
  Parameter& add(const std::string& name, Matrix value);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.contains(name); }

  std::map<std::string, Parameter>& items() { return params_; }
  const std::map<std::string, Parameter>& items() const { return params_; }

  std::vector<std::string> names() const;
  // Total scalar count over names starting with any of `prefixes` (all if empty).
  std::size_t count(const std::vector<std::string>& prefixes = {}) const;

  void zero_grad();
  void set_frozen(const std::string& name, bool frozen) { at(name).frozen = frozen; }

 private:
  std::map<std::string, Parameter> params_;
};

class Adam {
 public:
  explicit Adam(double lr, double clip_norm = 5.0, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), clip_norm_(clip_norm), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Updates the listed parameters from their accumulated gradients, then
  // clears those gradients. Parameters without a gradient are skipped.
  void step(ParameterStore& store, const std::vector<std::string>& names);

 private:
  struct Moments {
    Matrix m, v;
    long t = 0;
  };
  double lr_, clip_norm_, beta1_, beta2_, eps_;
  std::map<std::string, Moments> moments_;
};

// Plain stochastic gradient descent.
void sgd_step(ParameterStore& store, const std::vector<std::string>& names, double lr,
              double clip_norm = 5.0);

namespace nn {

// x (B x in) -> x W + b, with parameters `prefix.weight` (in x out), `prefix.bias` (1 x out).
ad::Var linear(ad::Graph& g, ParameterStore& ps, const std::string& prefix, ad::Var x);

void add_linear(ParameterStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                Rng& rng);
void add_lstm(ParameterStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
              Rng& rng);

struct LstmState {
  ad::Var h;
  ad::Var c;
};

LstmState lstm_step(ad::Graph& g, ParameterStore& ps, const std::string& prefix, ad::Var x,
                    const LstmState& prev);

// Runs an LSTM over right-padded sequences and returns each row's hidden
// state after its last valid step. `steps[t]` is the (B x in) input at time t.
ad::Var lstm_final_state(ad::Graph& g, ParameterStore& ps, const std::string& prefix,
                         const std::vector<ad::Var>& steps, const std::vector<int>& lengths,
                         Eigen::Index hidden);

}  // namespace nn
}  // namespace pcae
