#include "fixtures.hpp"
#include "gradcheck.hpp"

#include <doctest.h>

#include <cmath>

using namespace pcae;
using namespace pcae::testing;

namespace {

double logistic(double s) { return 1.0 / (1.0 + std::exp(-s)); }

void zero_all(ParameterStore& ps) {
  for (auto& [_, p] : ps.items()) p.value.setZero();
}

// Mean clean teacher-forced loss of a model over a corpus.
double corpus_recon(BaseModel& m, const std::vector<TokenSeq>& seqs) {
  std::vector<const TokenSeq*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  ad::Graph g;
  SeqBatch b(ptrs);
  auto enc = m.encode(g, b, nullptr);
  return reconstruction_loss(m.teacher_forced(g, enc.mu ? *enc.mu : enc.z, b)).scalar();
}

}  // namespace

TEST_CASE("encode gives a finite deterministic code of length d_z") {
  BaseModel m(mini_config(LatentMode::kAAE));
  TokenSeq ids{kBosId, 4, 5, kEosId};
  GlobalLatent a = m.encode(ids), b = m.encode(ids);
  CHECK(a.z.size() == 3);
  CHECK(a.z.allFinite());
  CHECK(a.z == b.z);
  CHECK_THROWS(m.encode(TokenSeq{kBosId}));
}

TEST_CASE("VAE encoder with vanishing variance returns the mean") {
  BaseModel m(mini_config(LatentMode::kVAE));
  m.params().at("encoder.logvar.weight").value.setZero();
  m.params().at("encoder.logvar.bias").value.setConstant(-2000.0);
  Rng rng(3);
  GlobalLatent z = m.encode(TokenSeq{kBosId, 4, 5, kEosId}, &rng);
  CHECK(z.z == z.mu);

  m.params().at("encoder.logvar.bias").value.setZero();
  GlobalLatent noisy = m.encode(TokenSeq{kBosId, 4, 5, kEosId}, &rng);
  CHECK((noisy.z - (noisy.mu.array() + noisy.eps.array() * (0.5 * noisy.logvar.array()).exp()).matrix()).norm() < 1e-12);
}

TEST_CASE("teacher forced logits") {
  BaseModel m(mini_config(LatentMode::kAAE));
  Matrix l = m.teacher_forced_logits(Vector::Zero(3), TokenSeq{kBosId, kEosId});
  CHECK(l.rows() == 1);
  CHECK(l.cols() == 12);

  TokenSeq ids{kBosId, 4, 5, kEosId};
  Matrix l0 = m.teacher_forced_logits(Vector::Zero(3), ids);
  Matrix l1 = m.teacher_forced_logits(Vector::Ones(3), ids);
  CHECK(l0.rows() == 3);
  CHECK((l0 - l1).cwiseAbs().maxCoeff() > 1e-6);

  zero_all(m.params());
  CHECK(m.teacher_forced_logits(Vector::Ones(3), ids).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reconstruction loss values") {
  const int v = 12;
  TokenSeq target{kBosId, 4, 5, kEosId};
  CHECK(reconstruction_loss(Matrix::Zero(3, v), target) == doctest::Approx(std::log(12.0)).epsilon(1e-12));

  Matrix margin = Matrix::Zero(3, v);
  margin(0, 4) = margin(1, 5) = margin(2, kEosId) = 200.0;
  CHECK(reconstruction_loss(margin, target) < 1e-80);

  Matrix r(2, 3);
  r << 0.3, -1.2, 0.8, 2.0, 0.1, -0.4;
  TokenSeq t{kBosId, 2, 0};  // second target is pad and is skipped
  const double expect = std::log(std::exp(0.3) + std::exp(-1.2) + std::exp(0.8)) - 0.8;
  CHECK(reconstruction_loss(r, t) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("discriminator output") {
  BaseModel m(mini_config(LatentMode::kAAE));
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    double d = m.discriminator_forward(standard_normal(3, 1, rng).col(0));
    CHECK(d > 0.0);
    CHECK(d < 1.0);
  }
  Vector z = Vector::Constant(3, 0.4);
  const double h = 1e-3;
  double before = m.discriminator_forward(z);
  m.params().at("disc.out.bias").value(0, 0) += h;
  CHECK(m.discriminator_forward(z) > before);
  zero_all(m.params());
  CHECK(m.discriminator_forward(z) == 0.5);
  CHECK(m.discriminator_forward(Vector::Constant(3, -7.0)) == 0.5);
}

TEST_CASE("aae loss analytic values") {
  ad::Graph g;
  ad::Var half = g.constant(Matrix::Zero(4, 1));
  CHECK(aae_discriminator_loss(half, half).scalar() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(aae_encoder_adversarial_loss(half).scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  ad::Var hi = g.constant(Matrix::Constant(4, 1, 60.0));
  ad::Var lo = g.constant(Matrix::Constant(4, 1, -60.0));
  CHECK(aae_discriminator_loss(hi, lo).scalar() < 1e-20);
  CHECK(aae_encoder_adversarial_loss(hi).scalar() < 1e-20);

  Matrix sp(2, 1), sq(3, 1);
  sp << 0.4, -1.1;
  sq << 2.0, 0.3, -0.2;
  double expect = 0.0;
  for (int i = 0; i < 2; ++i) expect += -std::log(logistic(sp(i, 0))) / 2;
  for (int i = 0; i < 3; ++i) expect += -std::log(1 - logistic(sq(i, 0))) / 3;
  CHECK(aae_discriminator_loss(g.constant(sp), g.constant(sq)).scalar() == doctest::Approx(expect).epsilon(1e-12));
  double fool = 0.0;
  for (int i = 0; i < 3; ++i) fool += -std::log(logistic(sq(i, 0))) / 3;
  CHECK(aae_encoder_adversarial_loss(g.constant(sq)).scalar() == doctest::Approx(fool).epsilon(1e-12));
}

TEST_CASE("gaussian kl values") {
  CHECK(gaussian_kl(Vector::Zero(4), Vector::Zero(4), 0.0) == 0.0);
  Vector mu(1), lv(1);
  mu << 1.0;
  lv << 0.0;
  CHECK(gaussian_kl(mu, lv, 0.0) == doctest::Approx(0.5).epsilon(1e-12));
  // KL = mu^2 / 2 = 0.05 per dimension
  Vector small = Vector::Constant(4, std::sqrt(0.1));
  CHECK(gaussian_kl(small, Vector::Zero(4), 0.0) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(gaussian_kl(small, Vector::Zero(4), 0.1) == 0.0);

  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    Vector m = standard_normal(5, 1, rng).col(0), l = standard_normal(5, 1, rng).col(0);
    CHECK(gaussian_kl(m, l, 0.0) >= 0.0);
  }

  // batched form: per-dimension mean over rows, then masked
  ad::Graph g;
  Matrix bm(2, 2), bl = Matrix::Zero(2, 2);
  bm << 1.0, 0.1, 1.0, 0.1;
  CHECK(gaussian_kl(g.constant(bm), g.constant(bl), 0.1).scalar() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("cyclic annealing schedule") {
  CHECK(cyclic_anneal_beta(0, 400, 4) == 0.0);
  CHECK(cyclic_anneal_beta(25, 400, 4) == doctest::Approx(0.5));
  CHECK(cyclic_anneal_beta(75, 400, 4) == 1.0);
  CHECK(cyclic_anneal_beta(99, 400, 4) == 1.0);
  CHECK(cyclic_anneal_beta(100, 400, 4) == 0.0);
  for (int cycles : {1, 3, 4, 7}) {
    const long total = 84;
    int zeros = 0;
    for (long s = 0; s < total; ++s) {
      const double b = cyclic_anneal_beta(s, total, cycles);
      CHECK(b >= 0.0);
      CHECK(b <= 1.0);
      zeros += b == 0.0;
    }
    CHECK(zeros == cycles);
    for (int c = 1; c <= cycles; ++c) CHECK(cyclic_anneal_beta(c * total / cycles - 1, total, cycles) == 1.0);
  }
  CHECK_THROWS(cyclic_anneal_beta(5, 5, 1));
  CHECK_THROWS(cyclic_anneal_beta(0, 5, 0));
}

TEST_CASE("gradient check: reconstruction loss over every decoder and encoder parameter") {
  for (LatentMode mode : {LatentMode::kAAE, LatentMode::kVAE}) {
    BaseModel m(mini_config(mode));
    auto seqs = mini_batch();
    SeqBatch batch(pointers(seqs));
    auto loss = [&](ad::Graph& g) {
      Rng rng(4);
      auto enc = m.encode(g, batch, &rng);
      return reconstruction_loss(m.teacher_forced(g, enc.z, batch));
    };
    auto res = grad_check(m.params(), loss, active_names(m.params(), {"disc."}));
    CHECK_MESSAGE(res.max_rel_error < 1e-4, res.worst);
    CHECK(res.checked > 200);
  }
}

TEST_CASE("gradient check: aae discriminator and encoder terms") {
  BaseModel m(mini_config(LatentMode::kAAE));
  auto seqs = mini_batch();
  SeqBatch batch(pointers(seqs));
  Rng rng(6);
  const Matrix prior = standard_normal(3, 3, rng);
  auto disc_loss = [&](ad::Graph& g) {
    auto enc = m.encode(g, batch, nullptr);
    return aae_discriminator_loss(m.discriminator_logits(g, g.constant(prior)), m.discriminator_logits(g, enc.z));
  };
  auto res = grad_check(m.params(), disc_loss, m.params().names());
  CHECK_MESSAGE(res.max_rel_error < 1e-4, res.worst);

  auto gen_loss = [&](ad::Graph& g) {
    Rng r(1);
    return base_generator_loss(m, g, batch, batch, r, 1.0).total;
  };
  // the discriminator is held fixed inside the generator objective
  auto gen = grad_check(m.params(), gen_loss, active_names(m.params(), {"disc."}));
  CHECK_MESSAGE(gen.max_rel_error < 1e-4, gen.worst);
  m.params().zero_grad();
  {
    ad::Graph g;
    g.backward(gen_loss(g));
  }
  CHECK(m.params().at("disc.out.weight").grad.size() == 0);
  CHECK(m.params().at("encoder.to_z.weight").grad.size() > 0);
}

TEST_CASE("gradient check: kl with free-bits masking") {
  BaseConfig cfg = mini_config(LatentMode::kVAE);
  cfg.free_kl_threshold = 0.05;
  BaseModel m(cfg);
  // push one dimension well above the threshold, keep the others near zero
  m.params().at("encoder.mu.bias").value << 1.0, 0.0, 0.0;
  m.params().at("encoder.mu.weight").value *= 0.01;
  m.params().at("encoder.logvar.weight").value *= 0.01;
  auto seqs = mini_batch();
  SeqBatch batch(pointers(seqs));
  auto loss = [&](ad::Graph& g) {
    auto enc = m.encode(g, batch, nullptr);
    return gaussian_kl(*enc.mu, *enc.logvar, cfg.free_kl_threshold);
  };
  {
    ad::Graph g;
    auto enc = m.encode(g, batch, nullptr);
    const Matrix& mu = enc.mu->value();
    const Matrix& lv = enc.logvar->value();
    int masked = 0;
    for (int j = 0; j < 3; ++j) {
      double kl = 0;
      for (int r = 0; r < 3; ++r) kl += 0.5 * (mu(r, j) * mu(r, j) + std::exp(lv(r, j)) - 1 - lv(r, j)) / 3;
      masked += kl < cfg.free_kl_threshold;
    }
    REQUIRE(masked >= 1);
    REQUIRE(masked <= 2);
  }
  auto res = grad_check(m.params(), loss, active_names(m.params()));
  CHECK_MESSAGE(res.max_rel_error < 1e-4, res.worst);

  auto total = [&](ad::Graph& g) {
    Rng r(1);
    return base_generator_loss(m, g, batch, batch, r, 0.7).total;
  };
  auto t = grad_check(m.params(), total, active_names(m.params()));
  CHECK_MESSAGE(t.max_rel_error < 1e-4, t.worst);
}

TEST_CASE("lambda_adv = 0 leaves encoder gradients equal to the reconstruction gradients") {
  BaseConfig cfg = mini_config(LatentMode::kAAE);
  cfg.lambda_adv = 0.0;
  BaseModel m(cfg);
  auto seqs = mini_batch();
  SeqBatch batch(pointers(seqs));
  Rng r(1);
  {
    ad::Graph g;
    g.backward(base_generator_loss(m, g, batch, batch, r, 1.0).total);
  }
  Matrix with = m.params().at("encoder.to_z.weight").grad;
  m.params().zero_grad();
  {
    ad::Graph g;
    auto enc = m.encode(g, batch, nullptr);
    g.backward(reconstruction_loss(m.teacher_forced(g, enc.z, batch)));
  }
  CHECK(with == m.params().at("encoder.to_z.weight").grad);
}

TEST_CASE("encoder adversarial loss drops after one encoder step against a fixed discriminator") {
  BaseModel m(mini_config(LatentMode::kAAE));
  auto seqs = mini_batch();
  SeqBatch batch(pointers(seqs));
  for (auto& [name, p] : m.params().items()) p.frozen = !name.starts_with("encoder.");
  auto adv = [&]() {
    ad::Graph g;
    return aae_encoder_adversarial_loss(m.discriminator_logits(g, m.encode(g, batch, nullptr).z)).scalar();
  };
  const double before = adv();
  {
    ad::Graph g;
    g.backward(aae_encoder_adversarial_loss(m.discriminator_logits(g, m.encode(g, batch, nullptr).z)));
  }
  sgd_step(m.params(), m.params().names(), 0.1);
  CHECK(adv() < before);
}

TEST_CASE("train_base reduces reconstruction loss and is deterministic") {
  SmallCorpus c = small_corpus(2, 100, 3);
  BaseConfig cfg;
  cfg.d_embed = 16;
  cfg.d_hidden = 32;
  cfg.d_z = 8;
  cfg.d_disc = 16;
  cfg.epochs = 30;
  cfg.batch_size = 10;
  cfg.learning_rate = 3e-3;
  cfg.vocab_size = c.vocab.size();
  cfg.seed = 2;
  BaseModel untrained(cfg);
  const double initial = corpus_recon(untrained, c.seqs);

  BaseTrainResult a = train_base(cfg, c.seqs, c.vocab, false);
  BaseModel trained = BaseModel::from_checkpoint(a.checkpoint);
  const double final_loss = corpus_recon(trained, c.seqs);
  CHECK(final_loss < 0.5 * initial);
  CHECK(a.log.epoch_recon.size() == 30);
  CHECK(a.checkpoint.meta("base.seconds") == "0");
  CHECK(a.checkpoint.meta_long("base.step") == 600);

  cfg.epochs = 3;
  auto b1 = train_base(cfg, c.seqs, c.vocab, false).checkpoint.serialize();
  auto b2 = train_base(cfg, c.seqs, c.vocab, false).checkpoint.serialize();
  CHECK(b1 == b2);
  cfg.mode = LatentMode::kVAE;
  CHECK(train_base(cfg, c.seqs, c.vocab, false).checkpoint.serialize() ==
        train_base(cfg, c.seqs, c.vocab, false).checkpoint.serialize());
}

TEST_CASE("train_base aborts on a diverging loss and names the step") {
  SmallCorpus c = small_corpus(2, 10, 3);
  BaseConfig cfg = mini_config(LatentMode::kAAE);
  cfg.vocab_size = c.vocab.size();
  cfg.learning_rate = 1e300;
  cfg.epochs = 5;
  CHECK_THROWS_WITH(train_base(cfg, c.seqs, c.vocab, false), doctest::Contains("at step"));
}

TEST_CASE("base checkpoint round trip") {
  SmallCorpus c = small_corpus(2, 5, 1);
  BaseConfig cfg = mini_config(LatentMode::kVAE);
  cfg.vocab_size = c.vocab.size();
  BaseModel m(cfg);
  Checkpoint ck = make_base_checkpoint(m, c.vocab, 7, 1.5);
  CHECK(ck.meta("kind") == "base");
  CHECK(ck.meta("base.mode") == "vae");
  CHECK(vocabulary_from_checkpoint(ck) == c.vocab);
  BaseModel back = BaseModel::from_checkpoint(ck);
  CHECK(make_base_checkpoint(back, c.vocab, 7, 1.5).serialize() == ck.serialize());
  ck.metadata["vocab_hash"] = "0000000000000000";
  CHECK_THROWS(vocabulary_from_checkpoint(ck));
}
