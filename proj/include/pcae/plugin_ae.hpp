#pragma once

// PluginAE: a label embedding plus a Broadcasting Net that maps a global
// latent and a class label to a local latent, decoded by the BaseAE decoder.
//
// Added parameters:
//   label_embed.weight                 K x d_label
//   broadcast.<t>.weight / .bias       (d_z + d_label) x d_z, t = 0..n-1
//   local_head.mu.*, local_head.logvar.*   VAE mode only
//
// The encoder and the shared word-embedding table are frozen; the decoder,
// latent-to-decoder map, output projection, discriminator, label embedding
// and Broadcasting Net are trained.

#include "pcae/base_ae.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pcae {

enum class InfoSign {
  kReward,   // MMD subtracted inside the latent term
  kPenalty,  // MMD added as a penalty
};

std::string to_string(InfoSign s);
InfoSign parse_info_sign(const std::string& s);

struct PluginConfig {
  int num_classes = 2;
  int d_label = 8;
  int n_broadcast = 10;
  double lambda_zl = 1.0;
  double lambda_adv = 30.0;
  double lambda_info = 50.0;
  double learning_rate = 1e-4;
  int batch_size = 80;
  int epochs = 30;
  // <= 0 selects sqrt(d_z / 2).
  double kernel_bandwidth = 0.0;
  InfoSign info_sign = InfoSign::kReward;
  // VAE mode.
  double free_kl_threshold = 0.1;
  int anneal_cycles = 4;
  std::uint64_t seed = 1;

  void validate() const;
  double bandwidth(int d_z) const;
  void write_metadata(std::map<std::string, std::string>& meta) const;
  static PluginConfig from_metadata(const std::map<std::string, std::string>& meta);
};

class PluginModel {
 public:
  PluginModel(BaseModel base, const PluginConfig& cfg);
  static PluginModel from_checkpoint(const Checkpoint& ckpt);

  BaseModel& base() { return base_; }
  const BaseModel& base() const { return base_; }
  ParameterStore& params() { return base_.params(); }
  const PluginConfig& config() const { return cfg_; }
  int d_z() const { return base_.config().d_z; }

  ad::Var embed_labels(ad::Graph& g, const std::vector<int>& labels);
  // z <- F_t(z ++ e_l) for t = 0..n-1; tanh between layers, last layer linear.
  ad::Var broadcast(ad::Graph& g, ad::Var z_g, ad::Var e_l);

  struct Local {
    ad::Var z;
    std::optional<ad::Var> mu;
    std::optional<ad::Var> logvar;
  };
  // Local latent for (z_g, label) rows. VAE mode adds a Gaussian head: z is
  // a reparameterized sample when `rng` is given, else the head mean.
  Local local_latent(ad::Graph& g, ad::Var z_g, const std::vector<int>& labels, Rng* rng);

  // Frozen-encoder posterior codes; the VAE encoder contributes its mean.
  Matrix posterior_codes(std::span<const TokenSeq* const> seqs);

  Vector embed_label(int label);
  Vector broadcast_forward(const Vector& z_g, const Vector& e_l);

 private:
  BaseModel base_;
  PluginConfig cfg_;
};

double gaussian_kernel(const Vector& a, const Vector& b, double bandwidth);

// Biased (V-statistic) MMD^2 between row-sample sets q and p:
// E_pp[k] - 2 E_qp[k] + E_qq[k], all pairs including the diagonal.
ad::Var mmd_biased(ad::Var q, ad::Var p, double bandwidth);
double mmd_biased(const Matrix& q, const Matrix& p, double bandwidth);

struct PluginLossTerms {
  ad::Var total;
  ad::Var recon;
  std::optional<ad::Var> dist;
  std::optional<ad::Var> mmd;
  std::optional<ad::Var> kl;
};

// AAE mode: recon + lambda_zl * (lambda_adv * Dist -/+ lambda_info * MMD) with
//   Dist = mean[-log(1 - D(z_post))] + mean[-log D(z_l_prior)]
// and the discriminator held fixed. VAE mode: recon + beta * KL(mu, logvar).
PluginLossTerms plugin_generator_loss(PluginModel& model, ad::Graph& g, ad::Var recon,
                                      ad::Var z_l_prior, ad::Var z_post, ad::Var z_l_post,
                                      std::optional<ad::Var> mu, std::optional<ad::Var> logvar,
                                      double beta);

// mean[-log D(z_l_prior)] + mean[-log(1 - D(z_post))].
ad::Var plugin_discriminator_loss(PluginModel& model, ad::Graph& g, ad::Var z_l_prior,
                                  ad::Var z_post);

struct ParameterPartition {
  std::vector<std::string> active;
  std::vector<std::string> frozen;
};

ParameterPartition partition_parameters(const Checkpoint& ckpt);
bool is_frozen_parameter(const std::string& name);

// Fraction of BaseAE-origin scalars that stay trainable in the plug-in stage.
double active_base_fraction(const Checkpoint& base_ckpt);

struct PluginTrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

PluginTrainResult train_plugin(const Checkpoint& base_ckpt, std::span<const LabeledExample> labeled,
                               const PluginConfig& cfg, bool record_wall_clock = true,
                               const ProgressFn& progress = {});

Checkpoint make_plugin_checkpoint(const PluginModel& model, const Checkpoint& base_ckpt, long step,
                                  double seconds);

}  // namespace pcae
