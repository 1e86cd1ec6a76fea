#include "pcae/plugin_ae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace pcae {

std::string to_string(InfoSign s) { return s == InfoSign::kReward ? "reward" : "penalty"; }

InfoSign parse_info_sign(const std::string& s) {
  if (s == "reward") return InfoSign::kReward;
  if (s == "penalty") return InfoSign::kPenalty;
  throw std::invalid_argument("unknown info_sign '" + s + "' (expected reward or penalty)");
}

void PluginConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("plugin: num_classes must be >= 2");
  if (d_label < 1 || n_broadcast < 1) throw std::invalid_argument("plugin: d_label and n_broadcast must be >= 1");
  if (lambda_zl < 0 || lambda_adv < 0 || lambda_info < 0) {
    throw std::invalid_argument("plugin: loss weights must be >= 0");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("plugin: learning_rate must be > 0");
  if (batch_size < 1 || epochs < 0) throw std::invalid_argument("plugin: bad batch_size/epochs");
  if (free_kl_threshold < 0 || anneal_cycles < 1) throw std::invalid_argument("plugin: bad KL settings");
}

double PluginConfig::bandwidth(int d_z) const {
  return kernel_bandwidth > 0.0 ? kernel_bandwidth : std::sqrt(d_z / 2.0);
}

void PluginConfig::write_metadata(std::map<std::string, std::string>& meta) const {
  meta["plugin.num_classes"] = std::to_string(num_classes);
  meta["plugin.d_label"] = std::to_string(d_label);
  meta["plugin.n_broadcast"] = std::to_string(n_broadcast);
  meta["plugin.lambda_zl"] = format_double(lambda_zl);
  meta["plugin.lambda_adv"] = format_double(lambda_adv);
  meta["plugin.lambda_info"] = format_double(lambda_info);
  meta["plugin.learning_rate"] = format_double(learning_rate);
  meta["plugin.batch_size"] = std::to_string(batch_size);
  meta["plugin.epochs"] = std::to_string(epochs);
  meta["plugin.kernel_bandwidth"] = format_double(kernel_bandwidth);
  meta["plugin.info_sign"] = to_string(info_sign);
  meta["plugin.free_kl_threshold"] = format_double(free_kl_threshold);
  meta["plugin.anneal_cycles"] = std::to_string(anneal_cycles);
  meta["plugin.seed"] = std::to_string(seed);
}

PluginConfig PluginConfig::from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = meta.find(k);
    if (it == meta.end()) throw std::runtime_error("checkpoint missing metadata '" + k + "'");
    return it->second;
  };
  PluginConfig c;
  c.num_classes = std::stoi(get("plugin.num_classes"));
  c.d_label = std::stoi(get("plugin.d_label"));
  c.n_broadcast = std::stoi(get("plugin.n_broadcast"));
  c.lambda_zl = std::stod(get("plugin.lambda_zl"));
  c.lambda_adv = std::stod(get("plugin.lambda_adv"));
  c.lambda_info = std::stod(get("plugin.lambda_info"));
  c.learning_rate = std::stod(get("plugin.learning_rate"));
  c.batch_size = std::stoi(get("plugin.batch_size"));
  c.epochs = std::stoi(get("plugin.epochs"));
  c.kernel_bandwidth = std::stod(get("plugin.kernel_bandwidth"));
  c.info_sign = parse_info_sign(get("plugin.info_sign"));
  c.free_kl_threshold = std::stod(get("plugin.free_kl_threshold"));
  c.anneal_cycles = std::stoi(get("plugin.anneal_cycles"));
  c.seed = std::stoull(get("plugin.seed"));
  c.validate();
  return c;
}

bool is_frozen_parameter(const std::string& name) {
  static const std::vector<std::string> kFrozen = {"embed.", "encoder."};
  static const std::vector<std::string> kActive = {"decoder.", "disc.", "label_embed.", "broadcast.",
                                                   "local_head."};
  for (const auto& p : kFrozen) {
    if (name.starts_with(p)) return true;
  }
  for (const auto& p : kActive) {
    if (name.starts_with(p)) return false;
  }
  throw std::invalid_argument("unknown tensor name: " + name);
}

PluginModel::PluginModel(BaseModel base, const PluginConfig& cfg) : base_(std::move(base)), cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.seed, 0x9106));
  ParameterStore& ps = base_.params();
  const int z = base_.config().d_z;
  ps.add("label_embed.weight", cfg_.num_classes, cfg_.d_label, Init::kUniform, rng, 1.0);
  for (int t = 0; t < cfg_.n_broadcast; ++t) {
    nn::add_linear(ps, "broadcast." + std::to_string(t), z + cfg_.d_label, z, rng);
  }
  if (base_.config().mode == LatentMode::kVAE) {
    nn::add_linear(ps, "local_head.mu", z, z, rng);
    nn::add_linear(ps, "local_head.logvar", z, z, rng);
  }
  for (auto& [name, p] : ps.items()) p.frozen = is_frozen_parameter(name);
}

PluginModel PluginModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.metadata.count("kind") == 0 || ckpt.meta("kind") != "plugin") {
    throw std::runtime_error("not a plugin checkpoint");
  }
  PluginModel m(BaseModel::from_checkpoint(ckpt), PluginConfig::from_metadata(ckpt.metadata));
  for (const auto& name : m.params().names()) {
    if (ckpt.tensors.count(name) == 0) throw std::runtime_error("checkpoint missing tensor " + name);
  }
  restore(m.params(), ckpt);
  return m;
}

ad::Var PluginModel::embed_labels(ad::Graph& g, const std::vector<int>& labels) {
  for (int l : labels) {
    if (l < 0 || l >= cfg_.num_classes) throw std::out_of_range("invalid label " + std::to_string(l));
  }
  return ad::gather_rows(g.parameter(params().at("label_embed.weight")), labels);
}

ad::Var PluginModel::broadcast(ad::Graph& g, ad::Var z_g, ad::Var e_l) {
  if (z_g.cols() != d_z() || e_l.cols() != cfg_.d_label || z_g.rows() != e_l.rows()) {
    throw std::invalid_argument("broadcast: dimension mismatch");
  }
  ad::Var z = z_g;
  for (int t = 0; t < cfg_.n_broadcast; ++t) {
    z = nn::linear(g, params(), "broadcast." + std::to_string(t), ad::concat_cols({z, e_l}));
    if (t + 1 < cfg_.n_broadcast) z = ad::tanh(z);
  }
  return z;
}

PluginModel::Local PluginModel::local_latent(ad::Graph& g, ad::Var z_g, const std::vector<int>& labels,
                                             Rng* rng) {
  ad::Var h = broadcast(g, z_g, embed_labels(g, labels));
  if (base_.config().mode == LatentMode::kAAE) return {h, {}, {}};
  ad::Var mu = nn::linear(g, params(), "local_head.mu", h);
  ad::Var logvar = nn::linear(g, params(), "local_head.logvar", h);
  if (rng == nullptr) return {mu, mu, logvar};
  ad::Var eps = g.constant(standard_normal(mu.rows(), mu.cols(), *rng));
  return {ad::add(mu, ad::mul(ad::exp(ad::scale(logvar, 0.5)), eps)), mu, logvar};
}

Matrix PluginModel::posterior_codes(std::span<const TokenSeq* const> seqs) {
  Matrix out(static_cast<Eigen::Index>(seqs.size()), d_z());
  constexpr std::size_t kChunk = 128;
  for (std::size_t i = 0; i < seqs.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, seqs.size() - i);
    ad::Graph g;
    SeqBatch batch(std::vector<const TokenSeq*>(seqs.begin() + i, seqs.begin() + i + n));
    BaseModel::Encoded enc = base_.encode(g, batch, nullptr);
    // With a null rng the VAE sample equals its mean.
    out.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = enc.z.value();
  }
  return out;
}

Vector PluginModel::embed_label(int label) {
  ad::Graph g;
  return embed_labels(g, {label}).value().row(0).transpose();
}

Vector PluginModel::broadcast_forward(const Vector& z_g, const Vector& e_l) {
  ad::Graph g;
  return broadcast(g, g.constant(z_g.transpose()), g.constant(e_l.transpose())).value().row(0).transpose();
}

double gaussian_kernel(const Vector& a, const Vector& b, double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kernel bandwidth must be > 0");
  if (a.size() != b.size()) throw std::invalid_argument("gaussian_kernel: length mismatch");
  return std::exp(-(a - b).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

ad::Var mmd_biased(ad::Var q, ad::Var p, double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kernel bandwidth must be > 0");
  if (q.rows() == 0 || p.rows() == 0) throw std::invalid_argument("mmd: empty sample set");
  const double s = -1.0 / (2.0 * bandwidth * bandwidth);
  auto kmean = [s](ad::Var a, ad::Var b) { return ad::mean(ad::exp(ad::scale(ad::pairwise_sqdist(a, b), s))); };
  return ad::add(ad::sub(kmean(p, p), ad::scale(kmean(q, p), 2.0)), kmean(q, q));
}

double mmd_biased(const Matrix& q, const Matrix& p, double bandwidth) {
  ad::Graph g;
  return mmd_biased(g.constant(q), g.constant(p), bandwidth).scalar();
}

PluginLossTerms plugin_generator_loss(PluginModel& model, ad::Graph& g, ad::Var recon,
                                      ad::Var z_l_prior, ad::Var z_post, ad::Var z_l_post,
                                      std::optional<ad::Var> mu, std::optional<ad::Var> logvar,
                                      double beta) {
  const PluginConfig& cfg = model.config();
  PluginLossTerms terms{recon, recon, {}, {}, {}};
  if (!std::isfinite(recon.scalar())) throw std::runtime_error("non-finite reconstruction term");
  if (model.base().config().mode == LatentMode::kVAE) {
    if (!mu || !logvar) throw std::invalid_argument("VAE plug-in loss needs mu and logvar");
    terms.kl = gaussian_kl(*mu, *logvar, cfg.free_kl_threshold);
    if (!std::isfinite(terms.kl->scalar())) throw std::runtime_error("non-finite KL term");
    terms.total = ad::add(recon, ad::scale(*terms.kl, beta));
    return terms;
  }
  std::vector<std::pair<Parameter*, bool>> saved;
  for (auto& [name, p] : model.params().items()) {
    if (name.starts_with("disc.")) {
      saved.emplace_back(&p, p.frozen);
      p.frozen = true;
    }
  }
  ad::Var post_scores = model.base().discriminator_logits(g, z_post);
  ad::Var prior_scores = model.base().discriminator_logits(g, z_l_prior);
  for (auto& [p, was] : saved) p->frozen = was;
  terms.dist = ad::add(ad::mean(ad::softplus(post_scores)),
                       ad::mean(ad::softplus(ad::scale(prior_scores, -1.0))));
  terms.mmd = mmd_biased(z_l_post, z_l_prior, cfg.bandwidth(model.d_z()));
  if (!std::isfinite(terms.dist->scalar())) throw std::runtime_error("non-finite Dist term");
  if (!std::isfinite(terms.mmd->scalar())) throw std::runtime_error("non-finite MMD term");
  const double info = cfg.info_sign == InfoSign::kReward ? -cfg.lambda_info : cfg.lambda_info;
  ad::Var latent = ad::add(ad::scale(*terms.dist, cfg.lambda_adv), ad::scale(*terms.mmd, info));
  terms.total = ad::add(recon, ad::scale(latent, cfg.lambda_zl));
  return terms;
}

ad::Var plugin_discriminator_loss(PluginModel& model, ad::Graph& g, ad::Var z_l_prior, ad::Var z_post) {
  return aae_discriminator_loss(model.base().discriminator_logits(g, z_l_prior),
                                model.base().discriminator_logits(g, z_post));
}

ParameterPartition partition_parameters(const Checkpoint& ckpt) {
  ParameterPartition part;
  for (const auto& [name, _] : ckpt.tensors) {
    (is_frozen_parameter(name) ? part.frozen : part.active).push_back(name);
  }
  return part;
}

double active_base_fraction(const Checkpoint& base_ckpt) {
  double active = 0.0, total = 0.0;
  for (const auto& [name, m] : base_ckpt.tensors) {
    total += static_cast<double>(m.size());
    if (!is_frozen_parameter(name)) active += static_cast<double>(m.size());
  }
  return total > 0 ? active / total : 0.0;
}

Checkpoint make_plugin_checkpoint(const PluginModel& model, const Checkpoint& base_ckpt, long step,
                                  double seconds) {
  Checkpoint ck = snapshot(model.base().params());
  for (const auto& [k, v] : base_ckpt.metadata) {
    if (k.starts_with("base.") || k == "vocab" || k == "vocab_hash") ck.metadata[k] = v;
  }
  ck.metadata["kind"] = "plugin";
  model.config().write_metadata(ck.metadata);
  ck.metadata["base_hash"] = hex64(base_ckpt.content_hash());
  ck.metadata["plugin.step"] = std::to_string(step);
  ck.metadata["plugin.seconds"] = format_double(seconds);
  return ck;
}

PluginTrainResult train_plugin(const Checkpoint& base_ckpt, std::span<const LabeledExample> labeled,
                               const PluginConfig& cfg, bool record_wall_clock,
                               const ProgressFn& progress) {
  if (base_ckpt.metadata.count("kind") == 0 || base_ckpt.meta("kind") != "base") {
    throw std::runtime_error("plug-in training needs a base checkpoint");
  }
  cfg.validate();
  std::set<int> seen;
  for (const auto& ex : labeled) {
    if (ex.label < 0 || ex.label >= cfg.num_classes) {
      throw std::invalid_argument("label " + std::to_string(ex.label) + " outside [0, " +
                                  std::to_string(cfg.num_classes) + ")");
    }
    seen.insert(ex.label);
  }
  for (int k = 0; k < cfg.num_classes; ++k) {
    if (!seen.contains(k)) throw std::invalid_argument("missing class " + std::to_string(k) + " in labeled set");
  }

  const auto start = std::chrono::steady_clock::now();
  PluginModel model(BaseModel::from_checkpoint(base_ckpt), cfg);
  const int vocab_size = model.base().config().vocab_size;
  for (const auto& ex : labeled) {
    if (ex.ids.size() < 2) throw std::invalid_argument("labeled sequence shorter than [bos, eos]");
    for (int id : ex.ids) {
      if (id < 0 || id >= vocab_size) throw std::invalid_argument("labeled data not encoded with the base vocabulary");
    }
  }
  const bool aae = model.base().config().mode == LatentMode::kAAE;

  std::vector<const TokenSeq*> all_seqs;
  for (const auto& ex : labeled) all_seqs.push_back(&ex.ids);
  // The encoder is frozen and inputs are clean, so posterior codes are fixed.
  const Matrix codes = model.posterior_codes(all_seqs);

  std::vector<std::string> gen_names, disc_names;
  for (const auto& [name, p] : model.params().items()) {
    if (p.frozen) continue;
    (name.starts_with("disc.") ? disc_names : gen_names).push_back(name);
  }
  Adam gen_opt(cfg.learning_rate);
  Adam disc_opt(cfg.learning_rate);
  Rng rng(derive_seed(cfg.seed, 0x7a1c));

  const std::size_t n = labeled.size();
  const long steps_per_epoch = (static_cast<long>(n) + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = std::max(1L, steps_per_epoch * cfg.epochs);
  TrainLog log;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    double recon_sum = 0.0, reg_sum = 0.0;
    long n_batches = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(n, b0 + cfg.batch_size);
      std::vector<const TokenSeq*> seqs;
      std::vector<int> labels;
      Matrix z_post_value(static_cast<Eigen::Index>(b1 - b0), model.d_z());
      for (std::size_t i = b0; i < b1; ++i) {
        seqs.push_back(&labeled[order[i]].ids);
        labels.push_back(labeled[order[i]].label);
        z_post_value.row(static_cast<Eigen::Index>(i - b0)) = codes.row(static_cast<Eigen::Index>(order[i]));
      }
      SeqBatch batch(seqs);
      const double beta = aae ? 0.0 : cyclic_anneal_beta(step, total_steps, cfg.anneal_cycles);

      Matrix z_l_prior_value;
      {
        ad::Graph g;
        ad::Var z_post = g.constant(z_post_value);
        PluginModel::Local post = model.local_latent(g, z_post, labels, aae ? nullptr : &rng);
        ad::Var eps = g.constant(standard_normal(z_post.rows(), z_post.cols(), rng));
        PluginModel::Local prior = model.local_latent(g, eps, labels, nullptr);
        ad::Var recon = reconstruction_loss(model.base().teacher_forced(g, post.z, batch));
        PluginLossTerms terms;
        try {
          terms = plugin_generator_loss(model, g, recon, prior.z, z_post, post.z, post.mu, post.logvar, beta);
        } catch (const std::runtime_error& e) {
          throw std::runtime_error(std::string(e.what()) + " at step " + std::to_string(step));
        }
        if (!std::isfinite(terms.total.scalar())) {
          throw std::runtime_error("non-finite plug-in loss at step " + std::to_string(step));
        }
        recon_sum += recon.scalar();
        reg_sum += terms.total.scalar() - recon.scalar();
        g.backward(terms.total);
        gen_opt.step(model.params(), gen_names);
        z_l_prior_value = prior.z.value();
      }
      if (aae) {
        ad::Graph g;
        ad::Var loss = plugin_discriminator_loss(model, g, g.constant(z_l_prior_value), g.constant(z_post_value));
        if (!std::isfinite(loss.scalar())) {
          throw std::runtime_error("non-finite discriminator loss at step " + std::to_string(step));
        }
        g.backward(loss);
        disc_opt.step(model.params(), disc_names);
      }
      model.params().zero_grad();
      ++step;
      ++n_batches;
    }
    log.epoch_recon.push_back(recon_sum / std::max(1L, n_batches));
    log.epoch_regularizer.push_back(reg_sum / std::max(1L, n_batches));
    if (progress) progress(epoch, log.epoch_recon.back(), log.epoch_regularizer.back());
  }
  log.steps = step;
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {make_plugin_checkpoint(model, base_ckpt, step, record_wall_clock ? log.seconds : 0.0), log};
}

}  // namespace pcae
