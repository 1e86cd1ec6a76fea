#include "pcae/cli.hpp"
#include "pcae/synthetic.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace pcae;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Trains a tiny pipeline once; later cases reuse its checkpoints.
struct Workspace {
  fs::path dir;
  std::string cfg, base, plugin;

  Workspace() {
    dir = fs::temp_directory_path() / "pcae_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    SyntheticTask task{2, 4};
    std::vector<std::string> unlabeled;
    for (const auto& l : task.sample(40, 1)) unlabeled.push_back(l.text);
    write_lines(dir / "train.txt", unlabeled);
    write_labeled_tsv(dir / "labeled.tsv", task.sample(10, 2));
    cfg = (dir / "run.cfg").string();
    std::ofstream(cfg) << "[base]\nd_embed = 8\nd_hidden = 8\nd_z = 4\nd_disc = 8\nepochs = 1\n"
                          "[plugin]\nepochs = 1\nn_broadcast = 2\n"
                          "[classifier]\nd_embed = 8\nd_hidden = 8\nepochs = 1\n"
                          "[run]\nrecord_wall_clock = false\n";
    base = (dir / "base.ckpt").string();
    plugin = (dir / "plugin.ckpt").string();
    if (run({"pretrain", "--config", cfg, "--corpus", (dir / "train.txt").string(), "--out", base}).code != 0 ||
        run({"plugin-train", "--config", cfg, "--base", base, "--labeled", (dir / "labeled.tsv").string(), "--out",
             plugin})
                .code != 0) {
      throw std::runtime_error("cli fixture pipeline failed");
    }
  }
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  Run none = run({});
  CHECK(none.code == 1);
  CHECK(none.err.find("pretrain") != std::string::npos);
  CHECK(run({"train-everything"}).code == 1);
  CHECK(run({"generate", "--plugin", "x", "--label", "0", "--num", "1", "--bogus"}).code == 1);
  CHECK(run({"generate", "--plugin", "x", "--num", "1"}).code == 1);
  CHECK(run({"pretrain", "--corpus", "x"}).code == 1);
}

TEST_CASE("help exits 0") {
  Run h = run({"--help"});
  CHECK(h.code == 0);
  CHECK(h.out.find("export-latents") != std::string::npos);
}

TEST_CASE("missing files exit 2 and name the path") {
  Run r = run({"pretrain", "--corpus", "/nonexistent/corpus.txt", "--out", "/tmp/x.ckpt"});
  CHECK(r.code == 2);
  CHECK(r.err.find("/nonexistent/corpus.txt") != std::string::npos);
  Run g = run({"generate", "--plugin", "/nonexistent/p.ckpt", "--label", "0", "--num", "3"});
  CHECK(g.code == 2);
  CHECK(g.err.find("/nonexistent/p.ckpt") != std::string::npos);
}

TEST_CASE("generate writes the requested number of lines") {
  Workspace& ws = workspace();
  const fs::path out = ws.dir / "gen.txt";
  Run r = run({"generate", "--config", ws.cfg, "--plugin", ws.plugin, "--label", "1", "--num", "500", "--out",
               out.string()});
  CHECK(r.code == 0);
  CHECK(lines_of(out).size() == 500);

  Run to_stdout = run({"generate", "--plugin", ws.plugin, "--label", "0", "--num", "7"});
  CHECK(to_stdout.code == 0);
  CHECK(std::count(to_stdout.out.begin(), to_stdout.out.end(), '\n') == 7);
}

TEST_CASE("generate rejects labels outside the model") {
  Workspace& ws = workspace();
  for (std::string bad : {"99", "-1", "one"}) {
    Run r = run({"generate", "--plugin", ws.plugin, "--label", bad, "--num", "5"});
    CHECK(r.code == 2);
    CHECK(r.err.find("invalid label") != std::string::npos);
  }
}

TEST_CASE("evaluate and export-latents") {
  Workspace& ws = workspace();
  const fs::path gen = ws.dir / "gen.tsv";
  CHECK(run({"generate", "--config", ws.cfg, "--plugin", ws.plugin, "--label", "all", "--num", "20", "--tsv",
             "--out", gen.string()})
            .code == 0);
  auto lines = lines_of(gen);
  CHECK(lines.size() == 40);
  CHECK(lines.front().starts_with("0\t"));
  CHECK(lines.back().starts_with("1\t"));

  const fs::path report = ws.dir / "report.txt";
  Run e = run({"evaluate", "--config", ws.cfg, "--plugin", ws.plugin, "--labeled", (ws.dir / "labeled.tsv").string(),
               "--generated", gen.string(), "--report", report.string()});
  CHECK(e.code == 0);
  auto rep = lines_of(report);
  CHECK(std::count_if(rep.begin(), rep.end(), [](const auto& l) { return l.starts_with("accuracy = "); }) == 1);
  CHECK(std::count(rep.begin(), rep.end(), "plugin_seconds = 0") == 1);

  const fs::path lat = ws.dir / "latents.tsv", proj = ws.dir / "proj.tsv";
  Run x = run({"export-latents", "--plugin", ws.plugin, "--per-class", "6", "--out", lat.string(), "--projection",
               proj.string()});
  CHECK(x.code == 0);
  CHECK(lines_of(lat).size() == 12);
  CHECK(lines_of(proj).size() == 12);
  CHECK(x.out.find("silhouette") != std::string::npos);
}

TEST_CASE("plugin-train refuses a mismatched vocabulary") {
  Workspace& ws = workspace();
  const fs::path vocab = ws.dir / "other.vocab";
  std::ofstream(vocab) << "<pad>\n<bos>\n<eos>\n<unk>\nzebra\n";
  const fs::path cfg = ws.dir / "mismatch.cfg";
  std::ofstream(cfg) << "[paths]\nvocab = " << vocab.string() << "\n";
  Run r = run({"plugin-train", "--config", cfg.string(), "--base", ws.base, "--labeled",
               (ws.dir / "labeled.tsv").string(), "--out", (ws.dir / "never.ckpt").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("mismatch") != std::string::npos);
  CHECK_FALSE(fs::exists(ws.dir / "never.ckpt"));
}
