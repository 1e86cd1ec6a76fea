#include "pcae/cli.hpp"

#include "pcae/run_config.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <optional>
#include <stdexcept>

namespace pcae {
namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_config(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
  cfg.apply_environment();
  return cfg;
}

std::string pick_path(const std::string& flag, const std::string& fallback, const std::string& name) {
  if (!flag.empty()) return flag;
  if (!fallback.empty()) return fallback;
  throw UsageError("missing required option " + name);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

struct Options {
  std::string config, corpus, out, base, labeled, plugin, label, generated, report, tsv_out, projection;
  int num = 0;
  int per_class = 0;
  bool tsv = false;
};

void cmd_pretrain(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(o.config);
  const std::string corpus_path = pick_path(o.corpus, cfg.corpus_path, "--corpus");
  const std::string out_path = pick_path(o.out, cfg.base_checkpoint, "--out");
  std::vector<std::string> lines = read_lines(corpus_path);
  Vocabulary vocab = cfg.vocab_path.empty() ? Vocabulary::build(lines, static_cast<std::size_t>(cfg.max_vocab))
                                            : Vocabulary::load(cfg.vocab_path);
  std::vector<TokenSeq> corpus;
  for (const auto& l : lines) {
    if (!tokenize(l).empty()) corpus.push_back(vocab.encode(l));
  }
  if (corpus.empty()) throw std::runtime_error("empty corpus: " + corpus_path);
  cfg.base.vocab_size = vocab.size();
  BaseTrainResult r = train_base(cfg.base, corpus, vocab, cfg.record_wall_clock,
                                 [&](int epoch, double recon, double reg) {
                                   err << "pretrain epoch " << epoch << " recon " << recon << " reg " << reg << "\n";
                                 });
  r.checkpoint.save(out_path);
  out << "wrote " << out_path << " (" << corpus.size() << " sentences, vocab " << vocab.size() << ")\n";
}

void cmd_plugin_train(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(o.config);
  const std::string base_path = pick_path(o.base, cfg.base_checkpoint, "--base");
  const std::string labeled_path = pick_path(o.labeled, cfg.labeled_path, "--labeled");
  const std::string out_path = pick_path(o.out, cfg.plugin_checkpoint, "--out");
  Checkpoint base = Checkpoint::load(base_path);
  Vocabulary vocab = vocabulary_from_checkpoint(base);
  if (!cfg.vocab_path.empty() && Vocabulary::load(cfg.vocab_path).content_hash() != vocab.content_hash()) {
    throw std::runtime_error("vocabulary hash mismatch between " + cfg.vocab_path + " and " + base_path);
  }
  std::vector<LabeledLine> lines = read_labeled_tsv(labeled_path);
  std::vector<LabeledExample> labeled = encode_labeled(vocab, lines);
  if (labeled.empty()) throw std::runtime_error("no labeled examples in " + labeled_path);
  if (cfg.labeled_per_class > 0) labeled = sample_labeled_subset(labeled, cfg.labeled_per_class, cfg.seed);
  cfg.plugin.num_classes = num_classes(labeled);
  PluginTrainResult r = train_plugin(base, labeled, cfg.plugin, cfg.record_wall_clock,
                                     [&](int epoch, double recon, double reg) {
                                       err << "plugin epoch " << epoch << " recon " << recon << " reg " << reg << "\n";
                                     });
  r.checkpoint.save(out_path);
  out << "wrote " << out_path << " (" << labeled.size() << " labeled, " << cfg.plugin.num_classes << " classes)\n";
}

void cmd_generate(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(o.config);
  const std::string plugin_path = pick_path(o.plugin, cfg.plugin_checkpoint, "--plugin");
  // Without --out or paths.generated the sentences go to stdout.
  const std::string out_path = o.out.empty() ? cfg.generated_path : o.out;
  if (o.num < 1) throw UsageError("--num must be >= 1");
  Checkpoint ckpt = Checkpoint::load(plugin_path);
  PluginModel model = PluginModel::from_checkpoint(ckpt);
  Vocabulary vocab = vocabulary_from_checkpoint(ckpt);
  std::vector<int> labels;
  if (o.label == "all") {
    for (int k = 0; k < model.config().num_classes; ++k) labels.push_back(k);
  } else {
    int label = -1;
    try {
      std::size_t used = 0;
      label = std::stoi(o.label, &used);
      if (used != o.label.size()) throw std::invalid_argument(o.label);
    } catch (const std::exception&) {
      throw std::runtime_error("invalid label '" + o.label + "'");
    }
    if (label < 0 || label >= model.config().num_classes) {
      throw std::runtime_error("invalid label " + o.label + " (model has " +
                               std::to_string(model.config().num_classes) + " classes)");
    }
    labels.push_back(label);
  }
  std::string text;
  std::size_t n = 0;
  for (int label : labels) {
    for (const auto& s : generate_conditional(model, vocab, label, o.num, cfg.decoding)) {
      if (o.tsv) text += std::to_string(label) + "\t";
      text += s + "\n";
      ++n;
    }
  }
  if (out_path.empty()) {
    out << text;
    err << "generated " << n << " sentences\n";
    return;
  }
  write_text(out_path, text);
  out << "wrote " << n << " sentences to " << out_path << "\n";
}

void cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(o.config);
  const std::string plugin_path = pick_path(o.plugin, cfg.plugin_checkpoint, "--plugin");
  const std::string labeled_path = pick_path(o.labeled, cfg.labeled_path, "--labeled");
  const std::string generated_path = pick_path(o.generated, cfg.generated_path, "--generated");
  const std::string report_path = pick_path(o.report, cfg.report_path, "--report");
  Checkpoint ckpt = Checkpoint::load(plugin_path);
  const int k = static_cast<int>(ckpt.meta_long("plugin.num_classes"));
  std::vector<LabeledLine> labeled = read_labeled_tsv(labeled_path);
  std::vector<LabeledLine> generated = read_labeled_tsv(generated_path);
  if (generated.empty()) throw std::runtime_error("no generated sentences in " + generated_path);
  for (const auto& g : generated) {
    if (g.label >= k) throw std::runtime_error("invalid label " + std::to_string(g.label) + " in " + generated_path);
  }
  ClassifierTrainResult clf = train_attribute_classifier(labeled, cfg.classifier);
  err << "classifier validation accuracy " << clf.best_validation_accuracy << " (epoch " << clf.best_epoch << ")\n";
  if (clf.model.num_classes() != k) throw std::runtime_error("labeled data and plugin disagree on the class count");
  ControlMetrics m = control_metrics(clf.model, generated);

  MetricsReport report;
  report.accuracy = m.accuracy;
  report.macro_f1 = m.macro_f1;
  report.per_class_accuracy = m.per_class_accuracy;
  report.per_class_f1 = m.per_class_f1;
  report.per_class_count = m.per_class_count;
  std::vector<std::vector<std::string>> tokens;
  for (const auto& g : generated) tokens.push_back(tokenize(g.text));
  report.distinct_1 = distinct_n(tokens, 1);
  report.distinct_2 = distinct_n(tokens, 2);
  record_timing(report, Phase::kBase, ckpt.meta_double("base.seconds"));
  record_timing(report, Phase::kPlugin, ckpt.meta_double("plugin.seconds"));
  write_text(report_path, report.to_text());
  if (!o.tsv_out.empty()) write_text(o.tsv_out, report.tsv_header() + "\n" + report.tsv_row() + "\n");
  out << report.to_text();
}

void cmd_export_latents(const Options& o, std::ostream& out) {
  RunConfig cfg = load_config(o.config);
  const std::string plugin_path = pick_path(o.plugin, cfg.plugin_checkpoint, "--plugin");
  if (o.out.empty()) throw UsageError("missing required option --out");
  if (o.per_class < 1) throw UsageError("--per-class must be >= 1");
  PluginModel model = PluginModel::from_checkpoint(Checkpoint::load(plugin_path));
  std::vector<LatentRow> rows = export_local_latents(model, o.per_class, cfg.seed);
  std::string text;
  Matrix all(static_cast<Eigen::Index>(rows.size()), model.d_z());
  std::vector<int> labels;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    text += std::to_string(rows[i].label);
    for (Eigen::Index j = 0; j < rows[i].z.size(); ++j) text += "\t" + format_double(rows[i].z(j));
    text += "\n";
    all.row(static_cast<Eigen::Index>(i)) = rows[i].z.transpose();
    labels.push_back(rows[i].label);
  }
  write_text(o.out, text);
  out << "wrote " << rows.size() << " latents to " << o.out << "\n";
  if (!o.projection.empty()) {
    PcaResult pca = pca_project_2d(all);
    std::string proj;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      proj += std::to_string(labels[i]) + "\t" + format_double(pca.points(r, 0)) + "\t" +
              format_double(pca.points(r, 1)) + "\n";
    }
    write_text(o.projection, proj);
    out << "silhouette " << format_double(silhouette_score(pca.points, labels)) << "\n";
  }
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Plug-in conditional auto-encoder for few-shot controllable text generation", "pcae"};
  app.require_subcommand(1);
  Options o;

  auto* pretrain = app.add_subcommand("pretrain", "Train the unconditional BaseAE on an unlabeled corpus");
  pretrain->add_option("--config", o.config, "Run configuration file");
  pretrain->add_option("--corpus", o.corpus, "One sentence per line");
  pretrain->add_option("--out", o.out, "Output checkpoint");

  auto* plugin = app.add_subcommand("plugin-train", "Train the plug-in components on labeled data");
  plugin->add_option("--config", o.config, "Run configuration file");
  plugin->add_option("--base", o.base, "BaseAE checkpoint");
  plugin->add_option("--labeled", o.labeled, "label<TAB>text file");
  plugin->add_option("--out", o.out, "Output checkpoint");

  auto* generate = app.add_subcommand("generate", "Sample sentences for a label");
  generate->add_option("--config", o.config, "Run configuration file (decoding and seed)");
  generate->add_option("--plugin", o.plugin, "PluginAE checkpoint");
  generate->add_option("--label", o.label, "Class label, or 'all'")->required();
  generate->add_option("--num", o.num, "Sentences per label")->required();
  generate->add_option("--out", o.out, "Output text file (default: stdout)");
  generate->add_flag("--tsv", o.tsv, "Write label<TAB>text lines");

  auto* evaluate = app.add_subcommand("evaluate", "Score generated text with an attribute classifier");
  evaluate->add_option("--config", o.config, "Run configuration file");
  evaluate->add_option("--plugin", o.plugin, "PluginAE checkpoint");
  evaluate->add_option("--labeled", o.labeled, "Classifier training data, label<TAB>text");
  evaluate->add_option("--generated", o.generated, "Generated label<TAB>text file");
  evaluate->add_option("--report", o.report, "Key-value report output");
  evaluate->add_option("--tsv-out", o.tsv_out, "Optional one-row TSV report");

  auto* latents = app.add_subcommand("export-latents", "Dump prior-side local latents per class");
  latents->add_option("--config", o.config, "Run configuration file (seed)");
  latents->add_option("--plugin", o.plugin, "PluginAE checkpoint");
  latents->add_option("--per-class", o.per_class, "Draws per class")->required();
  latents->add_option("--out", o.out, "Output TSV");
  latents->add_option("--projection", o.projection, "Optional 2-D PCA TSV");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (pretrain->parsed()) cmd_pretrain(o, out, err);
    if (plugin->parsed()) cmd_plugin_train(o, out, err);
    if (generate->parsed()) cmd_generate(o, out, err);
    if (evaluate->parsed()) cmd_evaluate(o, out, err);
    if (latents->parsed()) cmd_export_latents(o, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace pcae
