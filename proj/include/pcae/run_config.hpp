#pragma once

// Sectioned key-value run configuration:
//
//   # comment
//   [base]
//   d_z = 32
//
// Every key has a default; unknown sections or keys are rejected.

#include "pcae/evaluation.hpp"
#include "pcae/generation.hpp"

#include <filesystem>
#include <string>

namespace pcae {

struct RunConfig {
  BaseConfig base;
  PluginConfig plugin;
  DecodingConfig decoding;
  ClassifierConfig classifier;

  // [corpus]
  int max_vocab = 10000;
  int labeled_per_class = 0;  // 0 keeps every labeled line

  // [paths]: fallbacks for the matching command-line flags.
  std::string corpus_path;
  std::string labeled_path;
  std::string vocab_path;
  std::string base_checkpoint;
  std::string plugin_checkpoint;
  std::string generated_path;
  std::string report_path;

  // [run]
  std::uint64_t seed = 1;
  bool record_wall_clock = true;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  // Pushes the global seed into every component config.
  void apply_seed(std::uint64_t s);
  // PCAE_SEED, when set, replaces the configured seed.
  void apply_environment();

  // Every key with its current value.
  std::string to_text() const;
};

}  // namespace pcae
