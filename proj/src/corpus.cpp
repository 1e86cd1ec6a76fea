#include "pcae/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pcae {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return kSpecials;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

Vocabulary Vocabulary::build(std::span<const std::string> lines, std::size_t max_size) {
  if (max_size < 1) throw std::invalid_argument("max_size must be >= 1");
  std::map<std::string, std::size_t> freq;
  for (const auto& line : lines) {
    for (auto& tok : tokenize(line)) ++freq[std::move(tok)];
  }
  if (freq.empty()) throw std::invalid_argument("empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  // std::map order already breaks ties lexicographically; stable_sort keeps it.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  const auto specials = special_tokens();
  for (std::size_t i = 0; i < ranked.size() && tokens.size() < max_size; ++i) {
    // Literal special spellings in text are treated as unknown words.
    if (std::find(specials.begin(), specials.end(), ranked[i].first) != specials.end()) continue;
    tokens.push_back(ranked[i].first);
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.id_to_token_ = special_tokens();
  for (auto& tok : tokens) {
    if (tokenize(tok) != std::vector<std::string>{tok}) {
      throw std::invalid_argument("invalid vocabulary token: '" + tok + "'");
    }
    v.id_to_token_.push_back(std::move(tok));
  }
  for (int i = 0; i < v.size(); ++i) {
    if (!v.token_to_id_.emplace(v.id_to_token_[i], i).second) {
      throw std::invalid_argument("duplicate vocabulary token: " + v.id_to_token_[i]);
    }
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path.string());
  std::string line;
  for (const auto& special : special_tokens()) {
    if (!std::getline(in, line) || line != special) {
      throw std::runtime_error("bad vocabulary header in " + path.string());
    }
  }
  std::vector<std::string> tokens;
  while (std::getline(in, line)) {
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path.string());
  for (const auto& tok : id_to_token_) out << tok << '\n';
}

int Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("invalid token id " + std::to_string(id));
  return id_to_token_[id];
}

TokenSeq Vocabulary::encode(std::string_view line) const {
  TokenSeq ids{kBosId};
  for (const auto& tok : tokenize(line)) {
    const int i = id(tok);
    ids.push_back(i < kNumSpecials ? kUnkId : i);
  }
  ids.push_back(kEosId);
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size()) throw std::out_of_range("invalid token id " + std::to_string(id));
    if (id < kNumSpecials) continue;
    if (!out.empty()) out += ' ';
    out += id_to_token_[id];
  }
  return out;
}

std::vector<std::string> Vocabulary::corpus_tokens() const {
  return {id_to_token_.begin() + kNumSpecials, id_to_token_.end()};
}

std::uint64_t Vocabulary::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& tok : id_to_token_) {
    for (unsigned char c : tok) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= '\n';
    h *= 0x100000001b3ULL;
  }
  return h;
}

TokenSeq apply_word_dropout(const TokenSeq& seq, const NoiseConfig& cfg, Rng& rng) {
  if (cfg.word_drop_rate < 0.0 || cfg.word_drop_rate > 1.0) {
    throw std::invalid_argument("word_drop_rate must lie in [0, 1]");
  }
  if (seq.size() < 2) throw std::invalid_argument("token sequence shorter than [bos, eos]");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t interior = seq.size() - 2;
  std::vector<bool> keep(interior);
  bool any = false;
  for (std::size_t i = 0; i < interior; ++i) {
    keep[i] = u(rng) >= cfg.word_drop_rate;
    any = any || keep[i];
  }
  if (!any && interior > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, interior - 1);
    keep[pick(rng)] = true;
  }
  TokenSeq out{seq.front()};
  for (std::size_t i = 0; i < interior; ++i) {
    if (keep[i]) out.push_back(seq[i + 1]);
  }
  out.push_back(seq.back());
  return out;
}

std::vector<LabeledExample> sample_labeled_subset(std::span<const LabeledExample> examples,
                                                  int per_class, std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("per_class must be >= 1");
  std::vector<LabeledExample> sorted(examples.begin(), examples.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.label != b.label ? a.label < b.label : a.ids < b.ids;
  });
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < sorted.size(); ++i) by_class[sorted[i].label].push_back(i);

  std::vector<LabeledExample> out;
  for (auto& [label, idx] : by_class) {
    if (static_cast<int>(idx.size()) < per_class) {
      throw std::invalid_argument("class " + std::to_string(label) + " has " +
                                  std::to_string(idx.size()) + " < " + std::to_string(per_class));
    }
    Rng rng(derive_seed(seed, 0x5ab5e7, static_cast<std::uint64_t>(label)));
    // Partial Fisher-Yates: the first per_class slots become the sample.
    for (int i = 0; i < per_class; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    std::vector<std::size_t> chosen(idx.begin(), idx.begin() + per_class);
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t i : chosen) out.push_back(sorted[i]);
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!tokenize(line).empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<LabeledLine> read_labeled_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<LabeledLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": missing tab");
    }
    LabeledLine ll;
    try {
      std::size_t used = 0;
      ll.label = std::stoi(line.substr(0, tab), &used);
      if (used != tab || ll.label < 0) throw std::invalid_argument("label");
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad label");
    }
    ll.text = line.substr(tab + 1);
    out.push_back(std::move(ll));
  }
  return out;
}

std::vector<LabeledExample> encode_labeled(const Vocabulary& vocab,
                                           std::span<const LabeledLine> lines) {
  std::vector<LabeledExample> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back({l.label, vocab.encode(l.text)});
  return out;
}

int num_classes(std::span<const LabeledExample> examples) {
  int k = 0;
  for (const auto& e : examples) k = std::max(k, e.label + 1);
  return k;
}

}  // namespace pcae
