#include <doctest.h>

#include "test_support.hpp"

#include "cli.hpp"

#include "neurocap/error.hpp"
#include "neurocap/run_manifest.hpp"
#include "neurocap/text_util.hpp"

#include <json.hpp>

#include <sstream>

using namespace neurocap;
using neurocap::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

// Small synthetic dataset with echo captions and a tiny model config.
struct Workspace {
  TempDir dir;
  fs::path config;

  Workspace() {
    config = dir / "tiny.json";
    write_text_file_atomic(config, R"({"model": {"prefix_length": 2, "embed_dim": 8, "heads": 2, "layers": 1,
      "max_text_length": 8}, "train": {"stage1": {"epochs": 2, "learning_rate": 0.01},
      "stage2": {"epochs": 1}}, "evaluation": {"resolution": 16}})");
    REQUIRE(run({"gen-synthetic", "--out-dir", s("data"), "--stimuli", "6", "--image-size", "16"}).code == 0);
    REQUIRE(run({"enhance-captions", "--manifest", s("data/manifest.json"), "--backend", "echo", "--out",
                 s("captions.jsonl")})
                .code == 0);
  }

  std::string s(const std::string& rel) const { return (dir / rel).string(); }
};

}  // namespace

TEST_CASE("exit codes map error kinds") {
  CHECK(cli::exit_code_for(ConfigError("x")) == 2);
  CHECK(cli::exit_code_for(DataError("x")) == 3);
  CHECK(cli::exit_code_for(BackendError("x")) == 4);
  CHECK(cli::exit_code_for(InternalError("x")) == 5);
  CHECK(cli::exit_code_for(fs::filesystem_error("x", std::error_code())) == 3);
  CHECK(cli::exit_code_for(std::runtime_error("x")) == 5);
}

TEST_CASE("help lists every subcommand and the exit codes") {
  const Run r = run({"--help"});
  CHECK(r.code == 0);
  for (const auto& sub : cli::subcommands()) CHECK_MESSAGE(r.out.find(sub) != std::string::npos, sub);
  CHECK(r.out.find("Exit codes") != std::string::npos);
  const Run t = run({"train", "--help"});
  CHECK(t.code == 0);
  CHECK(t.out.find("--init-checkpoint") != std::string::npos);
}

TEST_CASE("a misspelled subcommand suggests the closest match") {
  const Run r = run({"trian"});
  CHECK(r.code == 2);
  CHECK(r.err.find("unknown subcommand 'trian'") != std::string::npos);
  CHECK(r.err.find("did you mean 'train'") != std::string::npos);
  CHECK(cli::suggest_subcommand("zzzzzzzz").empty());
}

TEST_CASE("usage errors exit with the config code") {
  CHECK(run({}).code == 2);
  CHECK(run({"train", "--stage", "3", "--manifest", "m", "--captions", "c", "--out-dir", "o"}).code == 2);
  CHECK(run({"evaluate", "--recon", "x"}).code == 2);
}

TEST_CASE("stage 2 without an initial checkpoint is a config error") {
  Workspace w;
  const Run r = run({"train", "--stage", "2", "--manifest", w.s("data/manifest.json"), "--captions",
                     w.s("captions.jsonl"), "--out-dir", w.s("s2"), "--config", w.config.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("--init-checkpoint") != std::string::npos);
}

TEST_CASE("missing inputs are data errors") {
  TempDir dir;
  const Run r = run({"decode", "--checkpoint", (dir / "none.ckpt").string(), "--manifest",
                     (dir / "m.json").string(), "--out", (dir / "d.jsonl").string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("not found") != std::string::npos);
}

TEST_CASE("named flags override config files and are recorded in the run manifest") {
  Workspace w;
  write_text_file_atomic(w.dir / "alpha.json", R"({"model": {"prefix_length": 2, "embed_dim": 8, "heads": 2,
    "layers": 1, "max_text_length": 8}, "train": {"alpha": 0.02, "stage1": {"epochs": 1}, "stage2": {"epochs": 1}}})");
  REQUIRE(run({"train", "--stage", "1", "--manifest", w.s("data/manifest.json"), "--captions", w.s("captions.jsonl"),
               "--out-dir", w.s("s1"), "--config", w.s("alpha.json")})
              .code == 0);
  const Run r = run({"train", "--stage", "2", "--manifest", w.s("data/manifest.json"), "--captions",
                     w.s("captions.jsonl"), "--init-checkpoint", w.s("s1/checkpoint.ckpt"), "--out-dir", w.s("s2"),
                     "--config", w.s("alpha.json"), "--alpha", "0.05"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const RunManifest m = read_run_manifest(w.dir / "s2" / kRunManifestName);
  const auto cfg = nlohmann::json::parse(m.config_json);
  CHECK(cfg["train"]["stage2"]["alpha"].get<double>() == 0.05);
  CHECK(cfg["train"]["stage1"]["alpha"].get<double>() == 0.02);
  CHECK(m.command == "train");
  CHECK(m.artifacts.count("checkpoint.ckpt") == 1);
  CHECK(m.artifacts.count("batch_log.jsonl") == 1);
}

TEST_CASE("evaluate writes a report and replay reproduces it") {
  Workspace w;
  const Run r = run({"evaluate", "--recon", w.s("data/gt_test"), "--gt", w.s("data/gt_test"), "--out",
                     w.s("eval/report.md"), "--config", w.config.string(), "--method", "identity"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const std::string report = read_text_file(w.dir / "eval" / "report.md");
  CHECK(report.find("| identity | 1.000 | 1.000 |") != std::string::npos);
  CHECK(fs::exists(w.dir / "eval" / "report.json"));
  CHECK(fs::exists(w.dir / "eval" / kRunManifestName));

  const Run replay = run({"replay", w.s("eval/run_manifest.json"), "--into", w.s("eval_again")});
  CHECK_MESSAGE(replay.code == 0, replay.err);
  CHECK(read_text_file(w.dir / "eval_again" / "report.md") == report);
  const Run again = run({"replay", w.s("eval/run_manifest.json"), "--into", w.s("eval_again")});
  CHECK(again.code == 2);
}

TEST_CASE("tampered artifacts make replay fail") {
  Workspace w;
  REQUIRE(run({"evaluate", "--recon", w.s("data/gt_test"), "--gt", w.s("data/gt_test"), "--out",
               w.s("eval/report.md"), "--config", w.config.string()})
              .code == 0);
  const fs::path mpath = w.dir / "eval" / kRunManifestName;
  auto j = nlohmann::json::parse(read_text_file(mpath));
  j["artifacts"]["report.md"] = "00000000";
  write_text_file_atomic(mpath, j.dump(2));
  CHECK(run({"replay", mpath.string(), "--into", w.s("eval_again")}).code == 3);
}

TEST_CASE("--set rejects malformed pairs and unknown keys") {
  Workspace w;
  const std::vector<std::string> base = {"evaluate", "--recon", w.s("data/gt_test"), "--gt", w.s("data/gt_test"),
                                         "--out", w.s("e/r.md")};
  auto with = [&](std::vector<std::string> extra) {
    auto args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };
  CHECK(with({"--set", "noequals"}).code == 2);
  const Run r = with({"--set", "evaluation.resolutoin=32"});
  CHECK(r.code == 2);
  CHECK(r.err.find("evaluation.resolutoin") != std::string::npos);
}
