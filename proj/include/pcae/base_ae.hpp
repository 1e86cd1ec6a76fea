#pragma once

// BaseAE: bidirectional LSTM encoder -> global latent -> LSTM decoder, with
// either adversarial (AAE) or KL (VAE) latent regularization.
//
// Parameter layout (stable names, also used as checkpoint tensor names):
//   embed.weight                       word embeddings shared by encoder and decoder
//   encoder.fwd.*, encoder.bwd.*       LSTM directions
//   encoder.to_z.*                     AAE head   | encoder.mu.*, encoder.logvar.*  VAE heads
//   decoder.init.*                     z -> h_0
//   decoder.lstm.*                     input is [embedding | z] at every step
//   decoder.out.*                      hidden -> vocabulary logits
//   disc.hidden.*, disc.out.*          latent discriminator (AAE only)

#include "pcae/checkpoint.hpp"
#include "pcae/corpus.hpp"
#include "pcae/nn.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pcae {

enum class LatentMode { kAAE, kVAE };

std::string to_string(LatentMode mode);
LatentMode parse_latent_mode(const std::string& s);

struct BaseConfig {
  LatentMode mode = LatentMode::kAAE;
  int d_embed = 128;
  int d_hidden = 256;
  int d_z = 32;
  int d_disc = 128;
  int vocab_size = 0;
  double lambda_adv = 10.0;
  double free_kl_threshold = 0.1;
  int anneal_cycles = 4;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 50;
  double word_drop_rate = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
  void write_metadata(std::map<std::string, std::string>& meta) const;
  static BaseConfig from_metadata(const std::map<std::string, std::string>& meta);
};

struct GlobalLatent {
  Vector z;
  // VAE mode only.
  Vector mu;
  Vector logvar;
  Vector eps;
};

// Right-padded batch view of token sequences.
struct SeqBatch {
  std::vector<const TokenSeq*> seqs;
  int max_len = 0;

  explicit SeqBatch(std::vector<const TokenSeq*> s);
  int size() const { return static_cast<int>(seqs.size()); }
  // Column of ids at time t (pad beyond each row's length).
  std::vector<int> column(int t) const;
  std::vector<int> lengths() const;
};

class BaseModel {
 public:
  explicit BaseModel(const BaseConfig& cfg);
  // Rebuilds the architecture from metadata and loads every base tensor.
  static BaseModel from_checkpoint(const Checkpoint& ckpt);

  const BaseConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  struct Encoded {
    ad::Var z;
    std::optional<ad::Var> mu;
    std::optional<ad::Var> logvar;
  };
  // AAE: z from the deterministic head. VAE: z = mu + exp(logvar/2) * eps,
  // with eps drawn from `rng` (eps = 0 when rng is null).
  Encoded encode(ad::Graph& g, const SeqBatch& batch, Rng* rng = nullptr);

  struct DecoderOutput {
    ad::Var logits;            // (T-1)*B x V, row t*B + b predicts batch[b][t+1]
    std::vector<int> targets;  // kPadId where no target exists
  };
  DecoderOutput teacher_forced(ad::Graph& g, ad::Var z, const SeqBatch& batch);

  // One decoder step for autoregressive generation. Returns (B x V) logits.
  struct DecoderState {
    Matrix h;
    Matrix c;
  };
  DecoderState decoder_start(const Matrix& z);
  Matrix decoder_step(DecoderState& state, const Matrix& z, const std::vector<int>& prev_ids);

  // Raw discriminator scores; D(z) = logistic(score).
  ad::Var discriminator_logits(ad::Graph& g, ad::Var z);

  // Single-sequence conveniences.
  GlobalLatent encode(const TokenSeq& ids, Rng* rng = nullptr);
  Matrix teacher_forced_logits(const Vector& z, const TokenSeq& ids);
  double discriminator_forward(const Vector& z);

  bool has_discriminator() const { return cfg_.mode == LatentMode::kAAE; }

 private:
  BaseConfig cfg_;
  ParameterStore params_;
};

// --- Losses -----------------------------------------------------------------

// Mean negative log-likelihood over non-pad targets.
ad::Var reconstruction_loss(const BaseModel::DecoderOutput& out);
// logits: (len-1) x V; target: the full sequence including bos.
double reconstruction_loss(const Matrix& logits, const TokenSeq& target);

// mean[-log D(z_prior)] + mean[-log(1 - D(z_post))], on discriminator scores.
ad::Var aae_discriminator_loss(ad::Var prior_scores, ad::Var post_scores);
// mean[-log D(z_post)].
ad::Var aae_encoder_adversarial_loss(ad::Var post_scores);

// Per-dimension KL(N(mu, e^logvar) || N(0, I)), averaged over batch rows;
// dimensions below `free_threshold` are masked out, the rest are summed.
ad::Var gaussian_kl(ad::Var mu, ad::Var logvar, double free_threshold);
double gaussian_kl(const Vector& mu, const Vector& logvar, double free_threshold);

// Linear 0 -> 1 over the first half of each cycle, then held at 1.
double cyclic_anneal_beta(long step, long total_steps, int cycles);

// Generator-side BaseAE objective for one batch. Exposed for gradient checks.
struct BaseLossTerms {
  ad::Var total;
  ad::Var recon;
  std::optional<ad::Var> adversarial;
  std::optional<ad::Var> kl;
  ad::Var z;
};
BaseLossTerms base_generator_loss(BaseModel& model, ad::Graph& g, const SeqBatch& noisy,
                                  const SeqBatch& clean, Rng& rng, double beta);

// --- Training ---------------------------------------------------------------

struct TrainLog {
  std::vector<double> epoch_recon;
  std::vector<double> epoch_regularizer;
  long steps = 0;
  double seconds = 0.0;
};

struct BaseTrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

using ProgressFn = std::function<void(int epoch, double recon, double regularizer)>;

// Trains from scratch on `corpus` (sequences encoded with `vocab`).
// Throws on a non-finite loss, naming the step.
BaseTrainResult train_base(const BaseConfig& cfg, std::span<const TokenSeq> corpus,
                           const Vocabulary& vocab, bool record_wall_clock = true,
                           const ProgressFn& progress = {});

// Writes model tensors plus base metadata (config, vocabulary, step, seconds).
Checkpoint make_base_checkpoint(const BaseModel& model, const Vocabulary& vocab, long step,
                                double seconds);
Vocabulary vocabulary_from_checkpoint(const Checkpoint& ckpt);

}  // namespace pcae
