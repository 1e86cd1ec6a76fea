#include "pcae/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pcae {

namespace {

constexpr std::string_view kMagic = "PCAE-CKPT v1";

void check_text(const std::string& s, const char* what) {
  if (s.find('\n') != std::string::npos || s.find('\r') != std::string::npos) {
    throw std::invalid_argument(std::string("checkpoint ") + what + " contains a newline");
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view line() {
    auto end = bytes_.find('\n', pos_);
    if (end == std::string_view::npos) throw std::runtime_error("checkpoint truncated");
    std::string_view out = bytes_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return out;
  }

  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated");
    std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::size_t parse_count(std::string_view text, std::string_view prefix) {
  if (!text.starts_with(prefix)) {
    throw std::runtime_error("checkpoint: expected '" + std::string(prefix) + "'");
  }
  text.remove_prefix(prefix.size());
  std::size_t n = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::runtime_error("checkpoint: bad count");
  }
  return n;
}

}  // namespace

std::string Checkpoint::serialize() const {
  std::string out;
  out += kMagic;
  out += '\n';
  out += "metadata " + std::to_string(metadata.size()) + "\n";
  for (const auto& [k, v] : metadata) {
    check_text(k, "key");
    check_text(v, "value");
    if (k.empty() || k.find('=') != std::string::npos) throw std::invalid_argument("bad metadata key: " + k);
    out += k + "=" + v + "\n";
  }
  out += "tensors " + std::to_string(tensors.size()) + "\n";
  for (const auto& [name, m] : tensors) {
    if (name.empty() || name.find(' ') != std::string::npos) throw std::invalid_argument("bad tensor name: " + name);
    check_text(name, "tensor name");
    const std::size_t nbytes = static_cast<std::size_t>(m.size()) * 4;
    out += "tensor " + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + " " +
           std::to_string(nbytes) + "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c)));
        for (int b = 0; b < 4; ++b) out += static_cast<char>((bits >> (8 * b)) & 0xffu);
      }
    }
  }
  return out;
}

Checkpoint Checkpoint::parse(std::string_view bytes) {
  Reader rd(bytes);
  if (rd.line() != kMagic) throw std::runtime_error("not a PCAE checkpoint");
  Checkpoint ck;
  const std::size_t nmeta = parse_count(rd.line(), "metadata ");
  for (std::size_t i = 0; i < nmeta; ++i) {
    std::string_view l = rd.line();
    auto eq = l.find('=');
    if (eq == std::string_view::npos) throw std::runtime_error("checkpoint: bad metadata line");
    ck.metadata.emplace(std::string(l.substr(0, eq)), std::string(l.substr(eq + 1)));
  }
  const std::size_t ntensors = parse_count(rd.line(), "tensors ");
  for (std::size_t i = 0; i < ntensors; ++i) {
    std::istringstream header{std::string(rd.line())};
    std::string word, name;
    long rows = -1, cols = -1;
    std::size_t nbytes = 0;
    if (!(header >> word >> name >> rows >> cols >> nbytes) || word != "tensor" || rows < 0 ||
        cols < 0 || nbytes != static_cast<std::size_t>(rows * cols) * 4) {
      throw std::runtime_error("checkpoint: bad tensor header");
    }
    std::string_view raw = rd.take(nbytes);
    Matrix m(rows, cols);
    std::size_t at = 0;
    for (long r = 0; r < rows; ++r) {
      for (long c = 0; c < cols; ++c) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[at + b])) << (8 * b);
        at += 4;
        m(r, c) = static_cast<double>(std::bit_cast<float>(bits));
      }
    }
    ck.tensors.emplace(std::move(name), std::move(m));
  }
  if (!rd.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::string bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::uint64_t Checkpoint::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw std::runtime_error("checkpoint missing metadata '" + key + "'");
  return it->second;
}

double Checkpoint::meta_double(const std::string& key) const { return std::stod(meta(key)); }
long Checkpoint::meta_long(const std::string& key) const { return std::stol(meta(key)); }

Checkpoint snapshot(const ParameterStore& params) {
  Checkpoint ck;
  for (const auto& [name, p] : params.items()) {
    ck.tensors.emplace(name, p.value.cast<float>().cast<double>());
  }
  return ck;
}

void restore(ParameterStore& params, const Checkpoint& ckpt) {
  for (const auto& [name, m] : ckpt.tensors) {
    Parameter& p = params.at(name);
    if (p.value.rows() != m.rows() || p.value.cols() != m.cols()) {
      throw std::runtime_error("checkpoint tensor shape mismatch: " + name);
    }
    p.value = m;
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

}  // namespace pcae
