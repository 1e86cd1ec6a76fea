// Writes a templated keyword corpus: unlabeled.txt, labeled.tsv, keywords.tsv.

#include "pcae/synthetic.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Synthetic keyword corpus generator", "pcae_synth"};
  int classes = 2, unlabeled = 1000, labeled = 100, keywords = 6;
  std::uint64_t seed = 1;
  std::string dir;
  app.add_option("--classes", classes, "Number of classes");
  app.add_option("--unlabeled-per-class", unlabeled, "Unlabeled sentences per class");
  app.add_option("--labeled-per-class", labeled, "Labeled sentences per class");
  app.add_option("--keywords", keywords, "Keywords per class");
  app.add_option("--seed", seed, "Seed");
  app.add_option("--out-dir", dir, "Output directory")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    pcae::SyntheticTask task{classes, keywords};
    std::filesystem::create_directories(dir);
    std::vector<std::string> plain;
    for (auto& l : task.sample(unlabeled, pcae::derive_seed(seed, 1))) plain.push_back(l.text);
    pcae::write_lines(std::filesystem::path(dir) / "unlabeled.txt", plain);
    pcae::write_labeled_tsv(std::filesystem::path(dir) / "labeled.tsv", task.sample(labeled, pcae::derive_seed(seed, 2)));
    std::vector<pcae::LabeledLine> kw;
    const auto lists = task.keywords();
    for (int c = 0; c < classes; ++c) {
      for (const auto& w : lists[c]) kw.push_back({c, w});
    }
    pcae::write_labeled_tsv(std::filesystem::path(dir) / "keywords.tsv", kw);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
