#include "pcae/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace pcae {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  // Row-major fill so that row r depends only on draws made for rows < r.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

Parameter& ParameterStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                               Init init, Rng& rng, double uniform_range) {
  Matrix value = Matrix::Zero(rows, cols);
  if (init != Init::kZero) {
    double range = uniform_range;
    if (init == Init::kXavier) range = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-range, range);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) value(r, c) = dist(rng);
    }
  }
  return add(name, std::move(value));
}

Parameter& ParameterStore::add(const std::string& name, Matrix value) {
  if (params_.contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
  Parameter p;
  p.value = std::move(value);
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::count(const std::vector<std::string>& prefixes) const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) {
    bool match = prefixes.empty();
    for (const auto& prefix : prefixes) match = match || name.starts_with(prefix);
    if (match) n += static_cast<std::size_t>(p.size());
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.resize(0, 0);
}

namespace {

double clip_factor(ParameterStore& store, const std::vector<std::string>& names, double clip_norm) {
  if (clip_norm <= 0) return 1.0;
  double sq = 0.0;
  for (const auto& name : names) {
    const Parameter& p = store.at(name);
    if (p.grad.size() != 0) sq += p.grad.squaredNorm();
  }
  double norm = std::sqrt(sq);
  return norm > clip_norm ? clip_norm / norm : 1.0;
}

}  // namespace

void Adam::step(ParameterStore& store, const std::vector<std::string>& names) {
  const double factor = clip_factor(store, names, clip_norm_);
  for (const auto& name : names) {
    Parameter& p = store.at(name);
    if (p.grad.size() == 0 || p.frozen) continue;
    Moments& mo = moments_[name];
    if (mo.t == 0) {
      mo.m = Matrix::Zero(p.value.rows(), p.value.cols());
      mo.v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    ++mo.t;
    Matrix g = p.grad * factor;
    mo.m = beta1_ * mo.m + (1.0 - beta1_) * g;
    mo.v = beta2_ * mo.v + (1.0 - beta2_) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(mo.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(mo.t));
    p.value.array() -=
        lr_ * (mo.m.array() / bc1) / ((mo.v.array() / bc2).sqrt() + eps_);
    p.grad.resize(0, 0);
  }
}

void sgd_step(ParameterStore& store, const std::vector<std::string>& names, double lr,
              double clip_norm) {
  const double factor = clip_factor(store, names, clip_norm);
  for (const auto& name : names) {
    Parameter& p = store.at(name);
    if (p.grad.size() == 0 || p.frozen) continue;
    p.value -= lr * factor * p.grad;
    p.grad.resize(0, 0);
  }
}

namespace nn {

ad::Var linear(ad::Graph& g, ParameterStore& ps, const std::string& prefix, ad::Var x) {
  ad::Var w = g.parameter(ps.at(prefix + ".weight"));
  ad::Var b = g.parameter(ps.at(prefix + ".bias"));
  return ad::add_row(ad::matmul(x, w), b);
}

void add_linear(ParameterStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                Rng& rng) {
  ps.add(prefix + ".weight", in, out, Init::kXavier, rng);
  ps.add(prefix + ".bias", 1, out, Init::kZero, rng);
}

void add_lstm(ParameterStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
              Rng& rng) {
  ps.add(prefix + ".weight", in + hidden, 4 * hidden, Init::kUniform, rng, 0.1);
  Parameter& b = ps.add(prefix + ".bias", 1, 4 * hidden, Init::kZero, rng);
  b.value.middleCols(hidden, hidden).setOnes();  // forget gate
}

LstmState lstm_step(ad::Graph& g, ParameterStore& ps, const std::string& prefix, ad::Var x,
                    const LstmState& prev) {
  ad::Var gates = linear(g, ps, prefix, ad::concat_cols({x, prev.h}));
  ad::Var hc = ad::lstm_cell(gates, prev.c);
  const Eigen::Index h = prev.c.cols();
  return {ad::slice_cols(hc, 0, h), ad::slice_cols(hc, h, h)};
}

ad::Var lstm_final_state(ad::Graph& g, ParameterStore& ps, const std::string& prefix,
                         const std::vector<ad::Var>& steps, const std::vector<int>& lengths,
                         Eigen::Index hidden) {
  if (steps.empty()) throw std::invalid_argument("lstm over empty sequence");
  const Eigen::Index batch = steps.front().rows();
  LstmState state{g.constant(Matrix::Zero(batch, hidden)), g.constant(Matrix::Zero(batch, hidden))};
  for (std::size_t t = 0; t < steps.size(); ++t) {
    LstmState next = lstm_step(g, ps, prefix, steps[t], state);
    std::vector<bool> live(static_cast<std::size_t>(batch));
    bool all_live = true;
    for (Eigen::Index r = 0; r < batch; ++r) {
      live[r] = static_cast<int>(t) < lengths[r];
      all_live = all_live && live[r];
    }
    if (all_live) {
      state = next;
    } else {
      state = {ad::select_rows(next.h, state.h, live), ad::select_rows(next.c, state.c, live)};
    }
  }
  return state.h;
}

}  // namespace nn
}  // namespace pcae
