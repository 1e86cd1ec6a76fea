#include "pcae/evaluation.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pcae {

double distinct_n(std::span<const std::vector<std::string>> sentences, int n) {
  if (n < 1) throw std::invalid_argument("distinct_n: n must be >= 1");
  if (sentences.empty()) throw std::invalid_argument("distinct_n: empty corpus");
  std::set<std::vector<std::string>> unique;
  std::size_t total = 0;
  bool long_enough = false;
  for (const auto& s : sentences) {
    total += s.size();
    if (static_cast<int>(s.size()) < n) continue;
    long_enough = true;
    for (std::size_t i = 0; i + n <= s.size(); ++i) unique.emplace(s.begin() + i, s.begin() + i + n);
  }
  if (!long_enough) throw std::invalid_argument("distinct_n: no sentence has n tokens");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

AttributeClassifier::AttributeClassifier(Vocabulary vocab, int num_classes, const ClassifierConfig& cfg)
    : vocab_(std::move(vocab)), num_classes_(num_classes), cfg_(cfg) {
  if (num_classes_ < 2) throw std::invalid_argument("classifier needs at least 2 classes");
  Rng rng(derive_seed(cfg_.seed, 0xc1a5));
  params_.add("embed.weight", vocab_.size(), cfg_.d_embed, Init::kUniform, rng, 0.1);
  nn::add_lstm(params_, "fwd", cfg_.d_embed, cfg_.d_hidden, rng);
  nn::add_lstm(params_, "bwd", cfg_.d_embed, cfg_.d_hidden, rng);
  nn::add_linear(params_, "out", 2 * cfg_.d_hidden, num_classes_, rng);
}

ad::Var AttributeClassifier::logits(ad::Graph& g, const SeqBatch& batch) {
  ad::Var table = g.parameter(params_.at("embed.weight"));
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
  const std::vector<int> lengths = batch.lengths();
  ad::Var h = ad::concat_cols({nn::lstm_final_state(g, params_, "fwd", fwd, lengths, cfg_.d_hidden),
                               nn::lstm_final_state(g, params_, "bwd", bwd, lengths, cfg_.d_hidden)});
  return nn::linear(g, params_, "out", h);
}

Matrix AttributeClassifier::probabilities(std::span<const std::string> texts) {
  Matrix out(static_cast<Eigen::Index>(texts.size()), num_classes_);
  constexpr std::size_t kChunk = 128;
  for (std::size_t i = 0; i < texts.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, texts.size() - i);
    std::vector<TokenSeq> seqs;
    for (std::size_t j = 0; j < n; ++j) seqs.push_back(vocab_.encode(texts[i + j]));
    std::vector<const TokenSeq*> ptrs;
    for (const auto& s : seqs) ptrs.push_back(&s);
    ad::Graph g;
    Matrix l = logits(g, SeqBatch(ptrs)).value();
    for (Eigen::Index r = 0; r < l.rows(); ++r) {
      Eigen::RowVectorXd e = (l.row(r).array() - l.row(r).maxCoeff()).exp();
      out.row(static_cast<Eigen::Index>(i) + r) = e / e.sum();
    }
  }
  return out;
}

std::vector<int> AttributeClassifier::predict(std::span<const std::string> texts) {
  Matrix p = probabilities(texts);
  std::vector<int> out;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    Eigen::Index best = 0;
    p.row(r).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

ClassifierTrainResult train_attribute_classifier(std::span<const LabeledLine> labeled,
                                                 const ClassifierConfig& cfg) {
  std::set<int> classes;
  for (const auto& l : labeled) classes.insert(l.label);
  if (classes.size() < 2) throw std::invalid_argument("classifier training needs at least 2 classes");
  const int k = *classes.rbegin() + 1;

  std::vector<std::size_t> order(labeled.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, 0xc1a6));
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * labeled.size()));
  n_val = std::min(std::max<std::size_t>(n_val, 1), labeled.size() - 1);
  std::vector<std::size_t> val_idx(order.end() - n_val, order.end());
  std::vector<std::size_t> train_idx(order.begin(), order.end() - n_val);

  std::vector<std::string> train_text;
  for (std::size_t i : train_idx) train_text.push_back(labeled[i].text);
  Vocabulary vocab = Vocabulary::build(train_text, static_cast<std::size_t>(cfg.max_vocab));

  std::vector<TokenSeq> encoded(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) encoded[i] = vocab.encode(labeled[i].text);
  std::vector<std::string> val_text;
  std::vector<int> val_labels;
  for (std::size_t i : val_idx) {
    val_text.push_back(labeled[i].text);
    val_labels.push_back(labeled[i].label);
  }

  AttributeClassifier model(vocab, k, cfg);
  auto val_accuracy = [&]() {
    std::vector<int> pred = model.predict(val_text);
    int hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == val_labels[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
  };
  ClassifierTrainResult result{model, val_accuracy(), 0};
  const std::vector<std::string> names = model.params().names();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    for (std::size_t b0 = 0; b0 < train_idx.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(train_idx.size(), b0 + cfg.batch_size);
      std::vector<const TokenSeq*> seqs;
      std::vector<int> targets;
      for (std::size_t i = b0; i < b1; ++i) {
        seqs.push_back(&encoded[train_idx[i]]);
        targets.push_back(labeled[train_idx[i]].label);
      }
      ad::Graph g;
      ad::Var loss = ad::softmax_cross_entropy(model.logits(g, SeqBatch(seqs)), targets, -1);
      if (!std::isfinite(loss.scalar())) throw std::runtime_error("classifier loss diverged");
      g.backward(loss);
      sgd_step(model.params(), names, cfg.learning_rate);
    }
    const double acc = val_accuracy();
    if (acc > result.best_validation_accuracy) {
      result.model = model;
      result.best_validation_accuracy = acc;
      result.best_epoch = epoch;
    }
  }
  return result;
}

ControlMetrics control_metrics(std::span<const int> predicted, std::span<const int> intended,
                               int num_classes) {
  if (predicted.size() != intended.size()) throw std::invalid_argument("control_metrics: size mismatch");
  if (num_classes < 1) throw std::invalid_argument("control_metrics: num_classes must be >= 1");
  ControlMetrics m;
  m.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
  std::vector<int> tp(num_classes, 0), pred_count(num_classes, 0);
  m.per_class_count.assign(num_classes, 0);
  int correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int t = intended[i], p = predicted[i];
    if (t < 0 || t >= num_classes) throw std::out_of_range("control_metrics: intended label out of range");
    ++m.per_class_count[t];
    if (p >= 0 && p < num_classes) {
      ++m.confusion(t, p);
      ++pred_count[p];
    }
    if (p == t) {
      ++correct;
      ++tp[t];
    }
  }
  m.accuracy = predicted.empty() ? 0.0 : static_cast<double>(correct) / predicted.size();
  double f1_sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    const double acc = m.per_class_count[c] > 0 ? static_cast<double>(tp[c]) / m.per_class_count[c] : 0.0;
    m.per_class_accuracy.push_back(acc);
    double f1 = 0.0;
    if (pred_count[c] > 0 && m.per_class_count[c] > 0 && tp[c] > 0) {
      const double precision = static_cast<double>(tp[c]) / pred_count[c];
      const double recall = static_cast<double>(tp[c]) / m.per_class_count[c];
      f1 = 2.0 * precision * recall / (precision + recall);
    }
    m.per_class_f1.push_back(f1);
    f1_sum += f1;
  }
  m.macro_f1 = f1_sum / num_classes;
  return m;
}

ControlMetrics control_metrics(AttributeClassifier& classifier, std::span<const LabeledLine> generated) {
  if (generated.empty()) throw std::invalid_argument("control_metrics: no generated samples");
  std::vector<std::string> texts;
  std::vector<int> intended;
  for (const auto& g : generated) {
    texts.push_back(g.text);
    intended.push_back(g.label);
  }
  std::vector<int> predicted = classifier.predict(texts);
  return control_metrics(predicted, intended, classifier.num_classes());
}

int keyword_oracle(std::span<const std::string> tokens,
                   const std::vector<std::vector<std::string>>& class_keywords) {
  int best = -1, best_hits = 0;
  bool tie = false;
  for (std::size_t c = 0; c < class_keywords.size(); ++c) {
    int hits = 0;
    for (const auto& tok : tokens) {
      hits += std::find(class_keywords[c].begin(), class_keywords[c].end(), tok) != class_keywords[c].end();
    }
    if (hits > best_hits) {
      best = static_cast<int>(c);
      best_hits = hits;
      tie = false;
    } else if (hits == best_hits && hits > 0) {
      tie = true;
    }
  }
  return tie ? -1 : best;
}

std::vector<LatentRow> export_local_latents(PluginModel& model, int per_class, std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("per_class must be >= 1");
  std::vector<LatentRow> rows;
  for (int label = 0; label < model.config().num_classes; ++label) {
    Matrix z_g(per_class, model.d_z());
    for (int i = 0; i < per_class; ++i) {
      Rng rng(derive_seed(seed, 0x1a7e0000ULL + static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(i)));
      z_g.row(i) = standard_normal(1, model.d_z(), rng);
    }
    ad::Graph g;
    Matrix z_l = model.local_latent(g, g.constant(z_g), std::vector<int>(per_class, label), nullptr).z.value();
    for (int i = 0; i < per_class; ++i) rows.push_back({label, z_l.row(i).transpose()});
  }
  return rows;
}

PcaResult pca_project_2d(const Matrix& vectors) {
  if (vectors.rows() < 3 || vectors.cols() < 2) {
    throw std::invalid_argument("pca_project_2d: need >= 3 vectors of dimension >= 2");
  }
  Eigen::RowVectorXd mean = vectors.colwise().mean();
  Matrix centered = vectors.rowwise() - mean;
  if (centered.cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument("pca_project_2d: rank-0 input");
  Matrix cov = centered.transpose() * centered / static_cast<double>(vectors.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("pca_project_2d: eigendecomposition failed");
  const Eigen::Index d = cov.rows();
  PcaResult out;
  out.components.resize(d, 2);
  for (int c = 0; c < 2; ++c) {
    Vector v = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.components.col(c) = v;
    out.variances(c) = std::max(0.0, eig.eigenvalues()(d - 1 - c));
  }
  out.points = centered * out.components;
  return out;
}

double silhouette_score(const Matrix& points, std::span<const int> labels) {
  const Eigen::Index n = points.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("silhouette: size mismatch");
  std::map<int, int> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw std::invalid_argument("silhouette: need at least 2 clusters");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::map<int, double> dist_sum;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) dist_sum[labels[j]] += (points.row(i) - points.row(j)).norm();
    }
    const int own = labels[i];
    if (sizes[own] == 1) continue;  // singleton clusters score 0
    const double a = dist_sum[own] / (sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, cnt] : sizes) {
      if (l != own) b = std::min(b, dist_sum[l] / cnt);
    }
    const double m = std::max(a, b);
    total += m > 0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

void record_timing(MetricsReport& report, Phase phase, double seconds) {
  if (!(seconds >= 0.0)) throw std::invalid_argument("record_timing: seconds must be >= 0");
  (phase == Phase::kBase ? report.base_seconds : report.plugin_seconds) = seconds;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "accuracy = " << format_double(accuracy) << "\n";
  os << "macro_f1 = " << format_double(macro_f1) << "\n";
  for (std::size_t c = 0; c < per_class_accuracy.size(); ++c) {
    os << "class." << c << ".count = " << per_class_count[c] << "\n";
    os << "class." << c << ".accuracy = " << format_double(per_class_accuracy[c]) << "\n";
    os << "class." << c << ".f1 = " << format_double(per_class_f1[c]) << "\n";
  }
  os << "distinct_1 = " << format_double(distinct_1) << "\n";
  os << "distinct_2 = " << format_double(distinct_2) << "\n";
  os << "base_seconds = " << format_double(base_seconds) << "\n";
  os << "plugin_seconds = " << format_double(plugin_seconds) << "\n";
  return os.str();
}

std::string MetricsReport::tsv_header() const {
  return "accuracy\tmacro_f1\tdistinct_1\tdistinct_2\tbase_seconds\tplugin_seconds";
}

std::string MetricsReport::tsv_row() const {
  return format_double(accuracy) + "\t" + format_double(macro_f1) + "\t" + format_double(distinct_1) + "\t" +
         format_double(distinct_2) + "\t" + format_double(base_seconds) + "\t" + format_double(plugin_seconds);
}

}  // namespace pcae
