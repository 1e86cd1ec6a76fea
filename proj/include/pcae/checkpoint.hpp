#pragma once

#include "pcae/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace pcae {

// On-disk layout:
//
//   PCAE-CKPT v1
//   metadata <n>
//   key=value                      (n lines, sorted by key)
//   tensors <m>
//   tensor <name> <rows> <cols> <nbytes>
//   <nbytes of row-major little-endian float32>
//   ...
//
// Tensors are held at float32 precision in memory too, so save/load/save is
// byte-identical.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::map<std::string, Matrix> tensors;

  std::string serialize() const;
  static Checkpoint parse(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  // FNV-1a over serialize().
  std::uint64_t content_hash() const;

  const std::string& meta(const std::string& key) const;
  double meta_double(const std::string& key) const;
  long meta_long(const std::string& key) const;
};

Checkpoint snapshot(const ParameterStore& params);
// Replaces the values of every parameter named in the checkpoint.
void restore(ParameterStore& params, const Checkpoint& ckpt);

std::string hex64(std::uint64_t v);
// Shortest round-trip formatting.
std::string format_double(double v);

}  // namespace pcae
