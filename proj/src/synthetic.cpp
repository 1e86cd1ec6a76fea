#include "pcae/synthetic.hpp"

#include "pcae/nn.hpp"

#include <fstream>
#include <stdexcept>

namespace pcae {
namespace {

const std::vector<std::vector<std::string>> kBaseKeywords = {
    {"great", "tasty", "lovely", "friendly", "perfect", "amazing", "superb", "fresh"},
    {"awful", "bland", "rude", "dirty", "terrible", "stale", "slow", "greasy"},
    {"loud", "crowded", "busy", "noisy", "packed", "hectic", "rowdy", "chaotic"},
    {"quiet", "calm", "cozy", "peaceful", "relaxed", "gentle", "serene", "mellow"},
};

const std::vector<std::string> kNouns = {"food", "service", "staff", "room", "menu",
                                         "coffee", "place", "drinks", "waiter", "bar"};

// 'A' marks a class keyword slot, 'N' a noun slot.
const std::vector<std::vector<std::string>> kTemplates = {
    {"the", "N", "was", "A", "."},
    {"i", "thought", "the", "N", "was", "really", "A", "."},
    {"A", "N", "and", "A", "N", "."},
    {"we", "found", "the", "N", "quite", "A", "."},
    {"my", "friend", "said", "the", "N", "is", "A", "."},
    {"overall", "a", "A", "N", "with", "A", "N", "."},
    {"the", "N", "here", "is", "always", "A", "."},
    {"such", "a", "A", "N", "tonight", "."},
};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

}  // namespace

std::vector<std::vector<std::string>> SyntheticTask::keywords() const {
  if (num_classes < 1) throw std::invalid_argument("synthetic task needs at least one class");
  if (keywords_per_class < 1 || keywords_per_class > 8) {
    throw std::invalid_argument("keywords_per_class must lie in [1, 8]");
  }
  std::vector<std::vector<std::string>> out;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::string> words;
    for (int i = 0; i < keywords_per_class; ++i) {
      if (c < static_cast<int>(kBaseKeywords.size())) {
        words.push_back(kBaseKeywords[c][i]);
      } else {
        words.push_back("attr" + std::to_string(c) + "w" + std::to_string(i));
      }
    }
    out.push_back(std::move(words));
  }
  return out;
}

std::vector<LabeledLine> SyntheticTask::sample(int per_class, std::uint64_t seed) const {
  if (per_class < 0) throw std::invalid_argument("per_class must be >= 0");
  const auto kw = keywords();
  std::vector<LabeledLine> out;
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < num_classes; ++c) {
      Rng rng(derive_seed(seed, 0x5717 + static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)));
      std::string text;
      for (const auto& slot : pick(kTemplates, rng)) {
        const std::string& word = slot == "A" ? pick(kw[c], rng) : slot == "N" ? pick(kNouns, rng) : slot;
        if (!text.empty()) text += ' ';
        text += word;
      }
      out.push_back({c, std::move(text)});
    }
  }
  return out;
}

void write_labeled_tsv(const std::filesystem::path& path, std::span<const LabeledLine> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l.label << '\t' << l.text << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace pcae
