#pragma once

#include "pcae/plugin_ae.hpp"
#include "pcae/synthetic.hpp"

namespace pcae::testing {

inline BaseConfig mini_config(LatentMode mode) {
  BaseConfig c;
  c.mode = mode;
  c.d_embed = 3;
  c.d_hidden = 4;
  c.d_z = 3;
  c.d_disc = 4;
  c.vocab_size = 12;
  c.seed = 5;
  return c;
}

// Fixed short sequences over a 12-token vocabulary.
inline std::vector<TokenSeq> mini_batch() {
  return {{kBosId, 4, 7, 5, kEosId}, {kBosId, 9, kEosId}, {kBosId, 6, 11, kEosId}};
}

inline std::vector<const TokenSeq*> pointers(const std::vector<TokenSeq>& seqs) {
  std::vector<const TokenSeq*> out;
  for (const auto& s : seqs) out.push_back(&s);
  return out;
}

// Synthetic corpus encoded with its own vocabulary.
struct SmallCorpus {
  Vocabulary vocab;
  std::vector<LabeledLine> lines;
  std::vector<TokenSeq> seqs;
  std::vector<LabeledExample> labeled;
};

inline SmallCorpus small_corpus(int classes, int per_class, std::uint64_t seed) {
  SmallCorpus c;
  c.lines = SyntheticTask{classes, 6}.sample(per_class, seed);
  std::vector<std::string> text;
  for (const auto& l : c.lines) text.push_back(l.text);
  c.vocab = Vocabulary::build(text, 1000);
  for (const auto& l : c.lines) c.seqs.push_back(c.vocab.encode(l.text));
  c.labeled = encode_labeled(c.vocab, c.lines);
  return c;
}

}  // namespace pcae::testing
