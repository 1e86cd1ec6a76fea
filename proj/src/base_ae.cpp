#include "pcae/base_ae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace pcae {

std::string to_string(LatentMode mode) { return mode == LatentMode::kAAE ? "aae" : "vae"; }

LatentMode parse_latent_mode(const std::string& s) {
  if (s == "aae" || s == "AAE") return LatentMode::kAAE;
  if (s == "vae" || s == "VAE") return LatentMode::kVAE;
  throw std::invalid_argument("unknown latent mode '" + s + "' (expected aae or vae)");
}

void BaseConfig::validate() const {
  if (d_embed < 1 || d_hidden < 1 || d_z < 1 || d_disc < 1) {
    throw std::invalid_argument("base: all dimensions must be >= 1");
  }
  if (vocab_size <= kNumSpecials) throw std::invalid_argument("base: vocab_size must exceed the specials");
  if (mode == LatentMode::kAAE && !(lambda_adv >= 0.0)) {
    throw std::invalid_argument("base: lambda_adv must be >= 0");
  }
  if (free_kl_threshold < 0.0) throw std::invalid_argument("base: free_kl_threshold must be >= 0");
  if (anneal_cycles < 1) throw std::invalid_argument("base: anneal_cycles must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("base: learning_rate must be > 0");
  if (batch_size < 1 || epochs < 0) throw std::invalid_argument("base: bad batch_size/epochs");
  if (word_drop_rate < 0.0 || word_drop_rate > 1.0) {
    throw std::invalid_argument("base: word_drop_rate must lie in [0, 1]");
  }
}

void BaseConfig::write_metadata(std::map<std::string, std::string>& meta) const {
  meta["base.mode"] = to_string(mode);
  meta["base.d_embed"] = std::to_string(d_embed);
  meta["base.d_hidden"] = std::to_string(d_hidden);
  meta["base.d_z"] = std::to_string(d_z);
  meta["base.d_disc"] = std::to_string(d_disc);
  meta["base.vocab_size"] = std::to_string(vocab_size);
  meta["base.lambda_adv"] = format_double(lambda_adv);
  meta["base.free_kl_threshold"] = format_double(free_kl_threshold);
  meta["base.anneal_cycles"] = std::to_string(anneal_cycles);
  meta["base.learning_rate"] = format_double(learning_rate);
  meta["base.batch_size"] = std::to_string(batch_size);
  meta["base.epochs"] = std::to_string(epochs);
  meta["base.word_drop_rate"] = format_double(word_drop_rate);
  meta["base.seed"] = std::to_string(seed);
}

BaseConfig BaseConfig::from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = meta.find(k);
    if (it == meta.end()) throw std::runtime_error("checkpoint missing metadata '" + k + "'");
    return it->second;
  };
  BaseConfig c;
  c.mode = parse_latent_mode(get("base.mode"));
  c.d_embed = std::stoi(get("base.d_embed"));
  c.d_hidden = std::stoi(get("base.d_hidden"));
  c.d_z = std::stoi(get("base.d_z"));
  c.d_disc = std::stoi(get("base.d_disc"));
  c.vocab_size = std::stoi(get("base.vocab_size"));
  c.lambda_adv = std::stod(get("base.lambda_adv"));
  c.free_kl_threshold = std::stod(get("base.free_kl_threshold"));
  c.anneal_cycles = std::stoi(get("base.anneal_cycles"));
  c.learning_rate = std::stod(get("base.learning_rate"));
  c.batch_size = std::stoi(get("base.batch_size"));
  c.epochs = std::stoi(get("base.epochs"));
  c.word_drop_rate = std::stod(get("base.word_drop_rate"));
  c.seed = std::stoull(get("base.seed"));
  c.validate();
  return c;
}

SeqBatch::SeqBatch(std::vector<const TokenSeq*> s) : seqs(std::move(s)) {
  if (seqs.empty()) throw std::invalid_argument("empty batch");
  for (const TokenSeq* q : seqs) {
    if (q->size() < 2) throw std::invalid_argument("token sequence shorter than [bos, eos]");
    max_len = std::max(max_len, static_cast<int>(q->size()));
  }
}

std::vector<int> SeqBatch::column(int t) const {
  std::vector<int> col(seqs.size(), kPadId);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    if (t < static_cast<int>(seqs[b]->size())) col[b] = (*seqs[b])[t];
  }
  return col;
}

std::vector<int> SeqBatch::lengths() const {
  std::vector<int> out;
  out.reserve(seqs.size());
  for (const TokenSeq* q : seqs) out.push_back(static_cast<int>(q->size()));
  return out;
}

BaseModel::BaseModel(const BaseConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.seed, 0xba5e));
  const int e = cfg_.d_embed, h = cfg_.d_hidden, z = cfg_.d_z;
  params_.add("embed.weight", cfg_.vocab_size, e, Init::kUniform, rng, 0.1);
  nn::add_lstm(params_, "encoder.fwd", e, h, rng);
  nn::add_lstm(params_, "encoder.bwd", e, h, rng);
  if (cfg_.mode == LatentMode::kAAE) {
    nn::add_linear(params_, "encoder.to_z", 2 * h, z, rng);
  } else {
    nn::add_linear(params_, "encoder.mu", 2 * h, z, rng);
    nn::add_linear(params_, "encoder.logvar", 2 * h, z, rng);
  }
  nn::add_linear(params_, "decoder.init", z, h, rng);
  nn::add_lstm(params_, "decoder.lstm", e + z, h, rng);
  nn::add_linear(params_, "decoder.out", h, cfg_.vocab_size, rng);
  if (cfg_.mode == LatentMode::kAAE) {
    nn::add_linear(params_, "disc.hidden", z, cfg_.d_disc, rng);
    nn::add_linear(params_, "disc.out", cfg_.d_disc, 1, rng);
  }
}

BaseModel BaseModel::from_checkpoint(const Checkpoint& ckpt) {
  BaseModel m(BaseConfig::from_metadata(ckpt.metadata));
  for (const auto& name : m.params_.names()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw std::runtime_error("checkpoint missing tensor " + name);
    Parameter& p = m.params_.at(name);
    if (p.value.rows() != it->second.rows() || p.value.cols() != it->second.cols()) {
      throw std::runtime_error("checkpoint tensor shape mismatch: " + name);
    }
    p.value = it->second;
  }
  return m;
}

BaseModel::Encoded BaseModel::encode(ad::Graph& g, const SeqBatch& batch, Rng* rng) {
  ad::Var table = g.parameter(params_.at("embed.weight"));
  const std::vector<int> lengths = batch.lengths();
  std::vector<ad::Var> fwd, bwd;
  for (int t = 0; t < batch.max_len; ++t) {
    fwd.push_back(ad::gather_rows(table, batch.column(t)));
    std::vector<int> rev(batch.seqs.size(), kPadId);
    for (std::size_t b = 0; b < batch.seqs.size(); ++b) {
      const TokenSeq& s = *batch.seqs[b];
      if (t < static_cast<int>(s.size())) rev[b] = s[s.size() - 1 - t];
    }
    bwd.push_back(ad::gather_rows(table, rev));
  }
  ad::Var hf = nn::lstm_final_state(g, params_, "encoder.fwd", fwd, lengths, cfg_.d_hidden);
  ad::Var hb = nn::lstm_final_state(g, params_, "encoder.bwd", bwd, lengths, cfg_.d_hidden);
  ad::Var h = ad::concat_cols({hf, hb});
  if (cfg_.mode == LatentMode::kAAE) return {nn::linear(g, params_, "encoder.to_z", h), {}, {}};

  ad::Var mu = nn::linear(g, params_, "encoder.mu", h);
  ad::Var logvar = nn::linear(g, params_, "encoder.logvar", h);
  Matrix eps = rng != nullptr ? standard_normal(mu.rows(), mu.cols(), *rng)
                              : Matrix::Zero(mu.rows(), mu.cols());
  ad::Var z = ad::add(mu, ad::mul(ad::exp(ad::scale(logvar, 0.5)), g.constant(std::move(eps))));
  return {z, mu, logvar};
}

BaseModel::DecoderOutput BaseModel::teacher_forced(ad::Graph& g, ad::Var z, const SeqBatch& batch) {
  if (z.cols() != cfg_.d_z || z.rows() != batch.size()) {
    throw std::invalid_argument("decoder: latent shape mismatch");
  }
  ad::Var table = g.parameter(params_.at("embed.weight"));
  nn::LstmState state{nn::linear(g, params_, "decoder.init", z),
                      g.constant(Matrix::Zero(batch.size(), cfg_.d_hidden))};
  std::vector<ad::Var> hidden;
  DecoderOutput out{{}, {}};
  for (int t = 0; t + 1 < batch.max_len; ++t) {
    ad::Var x = ad::concat_cols({ad::gather_rows(table, batch.column(t)), z});
    state = nn::lstm_step(g, params_, "decoder.lstm", x, state);
    hidden.push_back(state.h);
    std::vector<int> next = batch.column(t + 1);
    out.targets.insert(out.targets.end(), next.begin(), next.end());
  }
  out.logits = nn::linear(g, params_, "decoder.out", ad::concat_rows(hidden));
  return out;
}

BaseModel::DecoderState BaseModel::decoder_start(const Matrix& z) {
  ad::Graph g;
  ad::Var h0 = nn::linear(g, params_, "decoder.init", g.constant(z));
  return {h0.value(), Matrix::Zero(z.rows(), cfg_.d_hidden)};
}

Matrix BaseModel::decoder_step(DecoderState& state, const Matrix& z, const std::vector<int>& prev_ids) {
  ad::Graph g;
  ad::Var table = g.parameter(params_.at("embed.weight"));
  ad::Var x = ad::concat_cols({ad::gather_rows(table, prev_ids), g.constant(z)});
  nn::LstmState next = nn::lstm_step(g, params_, "decoder.lstm", x,
                                     {g.constant(state.h), g.constant(state.c)});
  Matrix logits = nn::linear(g, params_, "decoder.out", next.h).value();
  state.h = next.h.value();
  state.c = next.c.value();
  return logits;
}

ad::Var BaseModel::discriminator_logits(ad::Graph& g, ad::Var z) {
  if (!has_discriminator()) throw std::logic_error("VAE-mode model has no discriminator");
  ad::Var h = ad::tanh(nn::linear(g, params_, "disc.hidden", z));
  return nn::linear(g, params_, "disc.out", h);
}

GlobalLatent BaseModel::encode(const TokenSeq& ids, Rng* rng) {
  if (ids.size() < 2) throw std::invalid_argument("encode: sequence length < 2");
  ad::Graph g;
  SeqBatch batch({&ids});
  Encoded enc = encode(g, batch, rng);
  GlobalLatent out;
  out.z = enc.z.value().row(0).transpose();
  if (enc.mu) {
    out.mu = enc.mu->value().row(0).transpose();
    out.logvar = enc.logvar->value().row(0).transpose();
    Vector sd = (0.5 * out.logvar.array()).exp();
    out.eps = Vector::Zero(out.z.size());
    for (Eigen::Index i = 0; i < sd.size(); ++i) {
      if (sd(i) > 0) out.eps(i) = (out.z(i) - out.mu(i)) / sd(i);
    }
  }
  return out;
}

Matrix BaseModel::teacher_forced_logits(const Vector& z, const TokenSeq& ids) {
  if (z.size() != cfg_.d_z) throw std::invalid_argument("decoder: latent length != d_z");
  ad::Graph g;
  SeqBatch batch({&ids});
  return teacher_forced(g, g.constant(z.transpose()), batch).logits.value();
}

double BaseModel::discriminator_forward(const Vector& z) {
  if (z.size() != cfg_.d_z) throw std::invalid_argument("discriminator: latent length != d_z");
  ad::Graph g;
  double s = discriminator_logits(g, g.constant(z.transpose())).scalar();
  return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

ad::Var reconstruction_loss(const BaseModel::DecoderOutput& out) {
  return ad::softmax_cross_entropy(out.logits, out.targets, kPadId);
}

double reconstruction_loss(const Matrix& logits, const TokenSeq& target) {
  if (static_cast<std::size_t>(logits.rows()) + 1 != target.size()) {
    throw std::invalid_argument("reconstruction_loss: logits rows must equal len(target) - 1");
  }
  ad::Graph g;
  std::vector<int> next(target.begin() + 1, target.end());
  return ad::softmax_cross_entropy(g.constant(logits), next, kPadId).scalar();
}

ad::Var aae_discriminator_loss(ad::Var prior_scores, ad::Var post_scores) {
  return ad::add(ad::mean(ad::softplus(ad::scale(prior_scores, -1.0))),
                 ad::mean(ad::softplus(post_scores)));
}

ad::Var aae_encoder_adversarial_loss(ad::Var post_scores) {
  return ad::mean(ad::softplus(ad::scale(post_scores, -1.0)));
}

ad::Var gaussian_kl(ad::Var mu, ad::Var logvar, double free_threshold) {
  ad::Graph& g = *mu.graph;
  // 0.5 * (mu^2 + e^logvar - 1 - logvar), per element.
  ad::Var per = ad::scale(
      ad::sub(ad::add_scalar(ad::add(ad::mul(mu, mu), ad::exp(logvar)), -1.0), logvar), 0.5);
  const Eigen::Index rows = per.rows();
  ad::Var per_dim = ad::matmul(g.constant(Matrix::Constant(1, rows, 1.0 / rows)), per);
  Matrix mask = (per_dim.value().array() >= free_threshold).cast<double>().matrix();
  return ad::sum(ad::mul(per_dim, g.constant(std::move(mask))));
}

double gaussian_kl(const Vector& mu, const Vector& logvar, double free_threshold) {
  if (mu.size() != logvar.size()) throw std::invalid_argument("gaussian_kl: length mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    double kl = 0.5 * (mu(i) * mu(i) + std::exp(logvar(i)) - 1.0 - logvar(i));
    if (kl >= free_threshold) total += kl;
  }
  return total;
}

double cyclic_anneal_beta(long step, long total_steps, int cycles) {
  if (total_steps < 1 || cycles < 1 || step < 0 || step >= total_steps) {
    throw std::invalid_argument("cyclic_anneal_beta: need 0 <= step < total_steps, cycles >= 1");
  }
  const double period = static_cast<double>(total_steps) / cycles;
  const double pos = std::fmod(static_cast<double>(step), period) / period;
  return std::min(1.0, pos / 0.5);
}

BaseLossTerms base_generator_loss(BaseModel& model, ad::Graph& g, const SeqBatch& noisy,
                                  const SeqBatch& clean, Rng& rng, double beta) {
  const BaseConfig& cfg = model.config();
  BaseModel::Encoded enc = model.encode(g, noisy, cfg.mode == LatentMode::kVAE ? &rng : nullptr);
  BaseLossTerms terms{{}, reconstruction_loss(model.teacher_forced(g, enc.z, clean)), {}, {}, enc.z};
  terms.total = terms.recon;
  if (cfg.mode == LatentMode::kAAE) {
    // Discriminator parameters are held fixed within the encoder's term.
    std::vector<std::pair<Parameter*, bool>> saved;
    for (auto& [name, p] : model.params().items()) {
      if (name.starts_with("disc.")) {
        saved.emplace_back(&p, p.frozen);
        p.frozen = true;
      }
    }
    terms.adversarial = aae_encoder_adversarial_loss(model.discriminator_logits(g, enc.z));
    for (auto& [p, was] : saved) p->frozen = was;
    terms.total = ad::add(terms.total, ad::scale(*terms.adversarial, cfg.lambda_adv));
  } else {
    terms.kl = gaussian_kl(*enc.mu, *enc.logvar, cfg.free_kl_threshold);
    terms.total = ad::add(terms.total, ad::scale(*terms.kl, beta));
  }
  return terms;
}

Checkpoint make_base_checkpoint(const BaseModel& model, const Vocabulary& vocab, long step,
                                double seconds) {
  Checkpoint ck = snapshot(model.params());
  ck.metadata["kind"] = "base";
  model.config().write_metadata(ck.metadata);
  ck.metadata["vocab_hash"] = hex64(vocab.content_hash());
  std::string toks;
  for (const auto& t : vocab.corpus_tokens()) {
    if (!toks.empty()) toks += ' ';
    toks += t;
  }
  ck.metadata["vocab"] = toks;
  ck.metadata["base.step"] = std::to_string(step);
  ck.metadata["base.seconds"] = format_double(seconds);
  return ck;
}

Vocabulary vocabulary_from_checkpoint(const Checkpoint& ckpt) {
  Vocabulary v = Vocabulary::from_tokens(tokenize(ckpt.meta("vocab")));
  if (hex64(v.content_hash()) != ckpt.meta("vocab_hash")) {
    throw std::runtime_error("checkpoint vocabulary does not match its recorded hash");
  }
  return v;
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size)) {
    batches.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
  }
  return batches;
}

void check_finite(double v, long step, const char* term) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string("non-finite ") + term + " loss at step " + std::to_string(step));
  }
}

}  // namespace

BaseTrainResult train_base(const BaseConfig& cfg_in, std::span<const TokenSeq> corpus,
                           const Vocabulary& vocab, bool record_wall_clock,
                           const ProgressFn& progress) {
  BaseConfig cfg = cfg_in;
  if (cfg.vocab_size == 0) cfg.vocab_size = vocab.size();
  if (cfg.vocab_size != vocab.size()) throw std::invalid_argument("base: vocab_size != vocabulary size");
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  for (const auto& s : corpus) {
    for (int id : s) {
      if (id < 0 || id >= vocab.size()) throw std::invalid_argument("corpus not encoded with vocabulary");
    }
  }
  const auto start = std::chrono::steady_clock::now();
  BaseModel model(cfg);
  Rng rng(derive_seed(cfg.seed, 0x7a1b));
  NoiseConfig noise{cfg.word_drop_rate, cfg.seed};

  std::vector<std::string> gen_names, disc_names;
  for (const auto& name : model.params().names()) {
    (name.starts_with("disc.") ? disc_names : gen_names).push_back(name);
  }
  Adam gen_opt(cfg.learning_rate);
  Adam disc_opt(cfg.learning_rate);

  const long steps_per_epoch =
      (static_cast<long>(corpus.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = std::max(1L, steps_per_epoch * cfg.epochs);
  TrainLog log;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double recon_sum = 0.0, reg_sum = 0.0;
    long n_batches = 0;
    for (const auto& idx : make_batches(corpus.size(), cfg.batch_size, rng)) {
      std::vector<TokenSeq> noisy;
      noisy.reserve(idx.size());
      std::vector<const TokenSeq*> clean_ptrs;
      for (std::size_t i : idx) {
        noisy.push_back(apply_word_dropout(corpus[i], noise, rng));
        clean_ptrs.push_back(&corpus[i]);
      }
      std::vector<const TokenSeq*> noisy_ptrs;
      for (const auto& s : noisy) noisy_ptrs.push_back(&s);
      SeqBatch noisy_batch(noisy_ptrs), clean_batch(clean_ptrs);

      const double beta =
          cfg.mode == LatentMode::kVAE ? cyclic_anneal_beta(step, total_steps, cfg.anneal_cycles) : 0.0;
      Matrix z_post;
      {
        ad::Graph g;
        BaseLossTerms terms = base_generator_loss(model, g, noisy_batch, clean_batch, rng, beta);
        check_finite(terms.total.scalar(), step, "generator");
        recon_sum += terms.recon.scalar();
        if (terms.adversarial) reg_sum += terms.adversarial->scalar();
        if (terms.kl) reg_sum += terms.kl->scalar();
        g.backward(terms.total);
        gen_opt.step(model.params(), gen_names);
        z_post = terms.z.value();
      }
      if (cfg.mode == LatentMode::kAAE) {
        ad::Graph g;
        Matrix prior = standard_normal(z_post.rows(), z_post.cols(), rng);
        ad::Var loss = aae_discriminator_loss(model.discriminator_logits(g, g.constant(prior)),
                                              model.discriminator_logits(g, g.constant(z_post)));
        check_finite(loss.scalar(), step, "discriminator");
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
  return {make_base_checkpoint(model, vocab, step, record_wall_clock ? log.seconds : 0.0), log};
}

}  // namespace pcae
