#pragma once

// Templated toy corpus with class-specific keywords, used by the tests and
// the end-to-end checks.

#include "pcae/corpus.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pcae {

struct SyntheticTask {
  int num_classes = 2;
  int keywords_per_class = 6;

  // Keyword list of each class; lists are pairwise disjoint.
  std::vector<std::vector<std::string>> keywords() const;
  // `per_class` sentences per label, classes interleaved.
  std::vector<LabeledLine> sample(int per_class, std::uint64_t seed) const;
};

void write_labeled_tsv(const std::filesystem::path& path, std::span<const LabeledLine> lines);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

}  // namespace pcae
