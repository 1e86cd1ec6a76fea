#include "pcae/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace pcae {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: bad value for " + key + ": '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
}

struct Field {
  std::string name;  // section.key
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Obj, typename T>
Field num(std::string name, Obj RunConfig::*obj, T Obj::*member) {
  return {name,
          [=](RunConfig& c, const std::string& v) { (c.*obj).*member = parse_number<T>(name, v); },
          [=](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double((c.*obj).*member);
            } else {
              return std::to_string((c.*obj).*member);
            }
          }};
}

template <typename T>
Field top_num(std::string name, T RunConfig::*member) {
  return {name, [=](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(name, v); },
          [=](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field path(std::string name, std::string RunConfig::*member) {
  return {name, [=](RunConfig& c, const std::string& v) { c.*member = v; },
          [=](const RunConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
  using R = RunConfig;
  static const std::vector<Field> table = {
      {"base.mode", [](R& c, const std::string& v) { c.base.mode = parse_latent_mode(v); },
       [](const R& c) { return to_string(c.base.mode); }},
      num("base.d_embed", &R::base, &BaseConfig::d_embed),
      num("base.d_hidden", &R::base, &BaseConfig::d_hidden),
      num("base.d_z", &R::base, &BaseConfig::d_z),
      num("base.d_disc", &R::base, &BaseConfig::d_disc),
      num("base.lambda_adv", &R::base, &BaseConfig::lambda_adv),
      num("base.free_kl_threshold", &R::base, &BaseConfig::free_kl_threshold),
      num("base.anneal_cycles", &R::base, &BaseConfig::anneal_cycles),
      num("base.learning_rate", &R::base, &BaseConfig::learning_rate),
      num("base.batch_size", &R::base, &BaseConfig::batch_size),
      num("base.epochs", &R::base, &BaseConfig::epochs),
      num("base.word_drop_rate", &R::base, &BaseConfig::word_drop_rate),

      num("plugin.d_label", &R::plugin, &PluginConfig::d_label),
      num("plugin.n_broadcast", &R::plugin, &PluginConfig::n_broadcast),
      num("plugin.lambda_zl", &R::plugin, &PluginConfig::lambda_zl),
      num("plugin.lambda_adv", &R::plugin, &PluginConfig::lambda_adv),
      num("plugin.lambda_info", &R::plugin, &PluginConfig::lambda_info),
      num("plugin.learning_rate", &R::plugin, &PluginConfig::learning_rate),
      num("plugin.batch_size", &R::plugin, &PluginConfig::batch_size),
      num("plugin.epochs", &R::plugin, &PluginConfig::epochs),
      num("plugin.kernel_bandwidth", &R::plugin, &PluginConfig::kernel_bandwidth),
      {"plugin.info_sign", [](R& c, const std::string& v) { c.plugin.info_sign = parse_info_sign(v); },
       [](const R& c) { return to_string(c.plugin.info_sign); }},
      num("plugin.free_kl_threshold", &R::plugin, &PluginConfig::free_kl_threshold),
      num("plugin.anneal_cycles", &R::plugin, &PluginConfig::anneal_cycles),

      {"decoding.strategy", [](R& c, const std::string& v) { c.decoding.strategy = parse_strategy(v); },
       [](const R& c) { return to_string(c.decoding.strategy); }},
      num("decoding.temperature", &R::decoding, &DecodingConfig::temperature),
      num("decoding.top_k", &R::decoding, &DecodingConfig::top_k),
      num("decoding.top_p", &R::decoding, &DecodingConfig::top_p),
      num("decoding.max_len", &R::decoding, &DecodingConfig::max_len),

      num("classifier.d_embed", &R::classifier, &ClassifierConfig::d_embed),
      num("classifier.d_hidden", &R::classifier, &ClassifierConfig::d_hidden),
      num("classifier.learning_rate", &R::classifier, &ClassifierConfig::learning_rate),
      num("classifier.epochs", &R::classifier, &ClassifierConfig::epochs),
      num("classifier.batch_size", &R::classifier, &ClassifierConfig::batch_size),
      num("classifier.max_vocab", &R::classifier, &ClassifierConfig::max_vocab),
      num("classifier.validation_fraction", &R::classifier, &ClassifierConfig::validation_fraction),

      top_num("corpus.max_vocab", &R::max_vocab),
      top_num("corpus.labeled_per_class", &R::labeled_per_class),

      path("paths.corpus", &R::corpus_path),
      path("paths.labeled", &R::labeled_path),
      path("paths.vocab", &R::vocab_path),
      path("paths.base_checkpoint", &R::base_checkpoint),
      path("paths.plugin_checkpoint", &R::plugin_checkpoint),
      path("paths.generated", &R::generated_path),
      path("paths.report", &R::report_path),

      {"run.seed", [](R& c, const std::string& v) { c.apply_seed(parse_number<std::uint64_t>("run.seed", v)); },
       [](const R& c) { return std::to_string(c.seed); }},
      {"run.record_wall_clock",
       [](R& c, const std::string& v) { c.record_wall_clock = parse_bool("run.record_wall_clock", v); },
       [](const R& c) { return std::string(c.record_wall_clock ? "true" : "false"); }},
  };
  return table;
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  base.seed = s;
  plugin.seed = s;
  decoding.seed = s;
  classifier.seed = s;
}

void RunConfig::apply_environment() {
  const char* env = std::getenv("PCAE_SEED");
  if (env == nullptr || *env == '\0') return;
  apply_seed(parse_number<std::uint64_t>("PCAE_SEED", trim(env)));
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument(where + "bad section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : fields()) known |= f.name.starts_with(section + ".");
      if (!known) throw std::invalid_argument(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected key = value");
    if (section.empty()) throw std::invalid_argument(where + "key outside a section");
    const std::string key = section + "." + trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (f.name == key) field = &f;
    }
    if (field == nullptr) throw std::invalid_argument(where + "unknown key " + key);
    try {
      field->set(cfg, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  cfg.decoding.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.name.find('.');
    const std::string s = f.name.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << "[" << s << "]\n";
      section = s;
    }
    out << f.name.substr(dot + 1) << " = " << f.get(*this) << "\n";
  }
  return out.str();
}

}  // namespace pcae
