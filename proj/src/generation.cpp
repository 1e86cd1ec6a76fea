#include "pcae/generation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pcae {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kGreedy: return "greedy";
    case Strategy::kCategorical: return "categorical";
    case Strategy::kTopKNucleus: return "topk_nucleus";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "greedy") return Strategy::kGreedy;
  if (s == "categorical") return Strategy::kCategorical;
  if (s == "topk_nucleus") return Strategy::kTopKNucleus;
  throw std::invalid_argument("unknown decoding strategy '" + s + "'");
}

void DecodingConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("decoding: temperature must be > 0");
  if (top_k < 1) throw std::invalid_argument("decoding: top_k must be >= 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("decoding: top_p must lie in (0, 1]");
  if (max_len < 1) throw std::invalid_argument("decoding: max_len must be >= 1");
}

GlobalLatent sample_prior(int d_z, Rng& rng) {
  if (d_z < 1) throw std::invalid_argument("sample_prior: d_z must be >= 1");
  GlobalLatent out;
  out.z = standard_normal(1, d_z, rng).row(0).transpose();
  return out;
}

Vector filter_logits(const Vector& logits, const DecodingConfig& cfg) {
  cfg.validate();
  const Eigen::Index v = logits.size();
  if (v == 0) throw std::invalid_argument("filter_logits: empty logits");
  for (Eigen::Index i = 0; i < v; ++i) {
    if (std::isnan(logits(i)) || logits(i) == std::numeric_limits<double>::infinity()) {
      throw std::invalid_argument("filter_logits: logits must be finite or -inf");
    }
  }
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v; ++i) {
    if (logits(i) > logits(best)) best = i;
  }
  if (logits(best) == -std::numeric_limits<double>::infinity()) {
    throw std::invalid_argument("filter_logits: all logits are -inf");
  }
  if (cfg.strategy == Strategy::kGreedy) {
    Vector out = Vector::Zero(v);
    out(best) = 1.0;
    return out;
  }
  Vector probs = ((logits.array() - logits(best)) / cfg.temperature).exp();
  probs /= probs.sum();
  if (cfg.strategy == Strategy::kCategorical) return probs;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(v));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return probs(a) > probs(b); });
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.top_k), order.size());
  double kept_mass = 0.0;
  for (std::size_t i = 0; i < k; ++i) kept_mass += probs(order[i]);
  Vector out = Vector::Zero(v);
  double cumulative = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double p = probs(order[i]) / kept_mass;
    out(order[i]) = p;
    cumulative += p;
    if (cumulative >= cfg.top_p) break;
  }
  out /= out.sum();
  return out;
}

int sample_index(const Vector& probs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng) * probs.sum();
  int last_positive = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs(i) <= 0.0) continue;
    last_positive = static_cast<int>(i);
    r -= probs(i);
    if (r < 0.0) return last_positive;
  }
  return last_positive;
}

std::vector<TokenSeq> decode_latents(BaseModel& base, const Matrix& z_l, const DecodingConfig& cfg,
                                     std::vector<Rng>& rngs) {
  cfg.validate();
  const Eigen::Index n = z_l.rows();
  if (static_cast<Eigen::Index>(rngs.size()) != n) throw std::invalid_argument("decode: one rng per row");
  std::vector<TokenSeq> out(static_cast<std::size_t>(n), TokenSeq{kBosId});
  std::vector<bool> done(static_cast<std::size_t>(n), false);
  BaseModel::DecoderState state = base.decoder_start(z_l);
  std::vector<int> prev(static_cast<std::size_t>(n), kBosId);
  for (int step = 0; step < cfg.max_len; ++step) {
    Matrix logits = base.decoder_step(state, z_l, prev);
    bool all_done = true;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (done[r]) continue;
      Vector row = logits.row(r).transpose();
      // pad and bos are never emitted.
      row(kPadId) = -std::numeric_limits<double>::infinity();
      row(kBosId) = -std::numeric_limits<double>::infinity();
      Vector probs = filter_logits(row, cfg);
      int next = cfg.strategy == Strategy::kGreedy ? static_cast<int>(std::max_element(probs.data(), probs.data() + probs.size()) - probs.data())
                                                   : sample_index(probs, rngs[r]);
      out[r].push_back(next);
      prev[r] = next;
      if (next == kEosId) {
        done[r] = true;
      } else {
        all_done = false;
      }
    }
    if (all_done) break;
  }
  return out;
}

std::vector<TokenSeq> generate_conditional_ids(PluginModel& model, int label, int count,
                                               const DecodingConfig& cfg) {
  cfg.validate();
  if (label < 0 || label >= model.config().num_classes) {
    throw std::out_of_range("invalid label " + std::to_string(label));
  }
  if (count < 1) throw std::invalid_argument("count must be >= 1");
  std::vector<TokenSeq> out;
  out.reserve(static_cast<std::size_t>(count));
  constexpr int kChunk = 64;
  for (int start = 0; start < count; start += kChunk) {
    const int n = std::min(kChunk, count - start);
    std::vector<Rng> rngs;
    Matrix z_g(n, model.d_z());
    for (int i = 0; i < n; ++i) {
      rngs.emplace_back(derive_seed(cfg.seed, static_cast<std::uint64_t>(label) + 1,
                                    static_cast<std::uint64_t>(start + i)));
      z_g.row(i) = sample_prior(model.d_z(), rngs.back()).z.transpose();
    }
    ad::Graph g;
    Matrix z_l = model.local_latent(g, g.constant(z_g), std::vector<int>(n, label), nullptr).z.value();
    for (auto& seq : decode_latents(model.base(), z_l, cfg, rngs)) out.push_back(std::move(seq));
  }
  return out;
}

std::vector<std::string> generate_conditional(PluginModel& model, const Vocabulary& vocab, int label,
                                              int count, const DecodingConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& ids : generate_conditional_ids(model, label, count, cfg)) out.push_back(vocab.decode(ids));
  return out;
}

}  // namespace pcae
