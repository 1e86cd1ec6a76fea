#pragma once

#include "pcae/plugin_ae.hpp"

#include <string>
#include <vector>

namespace pcae {

// Corpus-level Distinct-n: unique n-grams over all sentences divided by the
// total number of tokens.
double distinct_n(std::span<const std::vector<std::string>> sentences, int n);

// --- Attribute classifier ---------------------------------------------------

struct ClassifierConfig {
  int d_embed = 128;
  int d_hidden = 256;
  double learning_rate = 0.01;
  int epochs = 10;
  int batch_size = 16;
  int max_vocab = 10000;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;
};

// Single-layer bidirectional LSTM over its own vocabulary, softmax over K.
class AttributeClassifier {
 public:
  AttributeClassifier(Vocabulary vocab, int num_classes, const ClassifierConfig& cfg);

  int num_classes() const { return num_classes_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore& params() { return params_; }

  // (B x K) class scores for already-encoded sequences.
  ad::Var logits(ad::Graph& g, const SeqBatch& batch);
  Matrix probabilities(std::span<const std::string> texts);
  std::vector<int> predict(std::span<const std::string> texts);

 private:
  Vocabulary vocab_;
  int num_classes_;
  ClassifierConfig cfg_;
  ParameterStore params_;
};

struct ClassifierTrainResult {
  AttributeClassifier model;
  double best_validation_accuracy = 0.0;
  int best_epoch = 0;  // 0 = untrained snapshot
};

// Trains with SGD on cross-entropy and keeps the snapshot with the best
// accuracy on a held-out 10% split.
ClassifierTrainResult train_attribute_classifier(std::span<const LabeledLine> labeled,
                                                 const ClassifierConfig& cfg);

struct ControlMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<double> per_class_f1;
  std::vector<int> per_class_count;
  Eigen::MatrixXi confusion;  // rows: intended, cols: predicted
};

// Classes never predicted get F1 = 0. Predictions outside [0, K) count as
// wrong for every class.
ControlMetrics control_metrics(std::span<const int> predicted, std::span<const int> intended,
                               int num_classes);
ControlMetrics control_metrics(AttributeClassifier& classifier, std::span<const LabeledLine> generated);

// Class whose keyword list has the most hits in `tokens`; -1 on none or a tie.
int keyword_oracle(std::span<const std::string> tokens,
                   const std::vector<std::vector<std::string>>& class_keywords);

// --- Latent structure ---------------------------------------------------------

struct LatentRow {
  int label = 0;
  Vector z;
};

// `per_class` prior draws per label pushed through the Broadcasting Net.
std::vector<LatentRow> export_local_latents(PluginModel& model, int per_class, std::uint64_t seed);

struct PcaResult {
  Matrix points;         // n x 2
  Matrix components;     // d x 2, unit columns
  Eigen::Vector2d variances;
};

// Mean-centred projection onto the top two covariance eigenvectors; each
// component's largest-magnitude loading is made positive.
PcaResult pca_project_2d(const Matrix& vectors);

// Mean silhouette coefficient with Euclidean distance.
double silhouette_score(const Matrix& points, std::span<const int> labels);

// --- Reports ----------------------------------------------------------------

enum class Phase { kBase, kPlugin };

struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<double> per_class_f1;
  std::vector<int> per_class_count;
  double distinct_1 = 0.0;
  double distinct_2 = 0.0;
  double plugin_seconds = 0.0;
  double base_seconds = 0.0;

  std::string to_text() const;
  std::string tsv_header() const;
  std::string tsv_row() const;
};

void record_timing(MetricsReport& report, Phase phase, double seconds);

}  // namespace pcae
