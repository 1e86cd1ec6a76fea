#pragma once

#include "pcae/plugin_ae.hpp"

#include <string>
#include <vector>

namespace pcae {

enum class Strategy { kGreedy, kCategorical, kTopKNucleus };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

struct DecodingConfig {
  Strategy strategy = Strategy::kCategorical;
  double temperature = 0.8;
  int top_k = 50;
  double top_p = 1.0;
  // Maximum number of decoding steps after bos.
  int max_len = 30;
  std::uint64_t seed = 1;

  void validate() const;
};

GlobalLatent sample_prior(int d_z, Rng& rng);

// Temperature-scaled next-token distribution. Greedy returns a one-hot on the
// first maximal index; top-k/nucleus keeps the k best tokens, then the
// shortest descending prefix whose mass reaches top_p (boundary token
// included), and renormalizes.
Vector filter_logits(const Vector& logits, const DecodingConfig& cfg);

// Draws an index from a probability vector.
int sample_index(const Vector& probs, Rng& rng);

// Sentence i uses an rng derived from (seed, label, i), so output does not
// depend on batching.
std::vector<TokenSeq> generate_conditional_ids(PluginModel& model, int label, int count,
                                               const DecodingConfig& cfg);
std::vector<std::string> generate_conditional(PluginModel& model, const Vocabulary& vocab, int label,
                                              int count, const DecodingConfig& cfg);

// Decodes from explicit local latents (one row each) with the given rngs.
std::vector<TokenSeq> decode_latents(BaseModel& base, const Matrix& z_l, const DecodingConfig& cfg,
                                     std::vector<Rng>& rngs);

}  // namespace pcae
