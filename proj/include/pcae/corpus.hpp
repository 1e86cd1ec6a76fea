#pragma once

#include "pcae/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pcae {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumSpecials = 4;

// Token ids of one sentence: [bos, w_1, ..., w_n, eos] once encoded.
using TokenSeq = std::vector<int>;

struct LabeledExample {
  int label = 0;
  TokenSeq ids;
};

struct NoiseConfig {
  double word_drop_rate = 0.3;
  std::uint64_t seed = 0;
};

std::vector<std::string> tokenize(std::string_view line);

class Vocabulary {
 public:
  // Ranks tokens by descending frequency, ties lexicographically, and keeps
  // at most `max_size` of them after the four special ids.
  static Vocabulary build(std::span<const std::string> lines, std::size_t max_size);
  // Non-special tokens in id order (ids start at kNumSpecials).
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }

  TokenSeq encode(std::string_view line) const;
  // Strips specials and joins tokens with single spaces.
  std::string decode(std::span<const int> ids) const;

  std::vector<std::string> corpus_tokens() const;
  // FNV-1a over the id-ordered token list.
  std::uint64_t content_hash() const;

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Deletes each interior token with probability `word_drop_rate`; bos/eos are
// kept, and at least one interior token always survives.
TokenSeq apply_word_dropout(const TokenSeq& seq, const NoiseConfig& cfg, Rng& rng);

// Exactly `per_class` examples per label present in `examples`, drawn without
// replacement. Inputs are canonically sorted by (label, ids) first so the
// result depends only on the multiset and the seed.
std::vector<LabeledExample> sample_labeled_subset(std::span<const LabeledExample> examples,
                                                  int per_class, std::uint64_t seed);

struct LabeledLine {
  int label = 0;
  std::string text;
};

std::vector<std::string> read_lines(const std::filesystem::path& path);
// `label<TAB>text` per line.
std::vector<LabeledLine> read_labeled_tsv(const std::filesystem::path& path);
std::vector<LabeledExample> encode_labeled(const Vocabulary& vocab,
                                           std::span<const LabeledLine> lines);

int num_classes(std::span<const LabeledExample> examples);

}  // namespace pcae
