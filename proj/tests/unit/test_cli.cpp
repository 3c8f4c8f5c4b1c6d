#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "vidswap/cli.hpp"

namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "vidswap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return vidswap::run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json record(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

int64_t count_lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("argument errors exit with 2") {
  CHECK(run({}) == 2);
  CHECK(run({"swap", "--source", "x.png"}) == 2);
  CHECK(run({"train", "--stage", "4", "--corpus", "c", "--out", "o"}) == 2);
}

TEST_CASE("runtime failures exit with 1") {
  CHECK(run({"build-aidt", "--corpus", "/nonexistent/corpus", "--out", "/tmp/vidswap_nowhere"}) == 1);
}

TEST_CASE("full command chain") {
  const fs::path root = fs::temp_directory_path() / "vidswap_cli_test";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto corpus = (root / "corpus").string(), aidt = (root / "aidt").string();

  REQUIRE(run({"ingest", "--out", corpus, "--identities", "4", "--images-per-identity", "2", "--clips", "2",
               "--clip-length", "14", "--bench", "1", "--bench-length", "8", "--seed", "3"}) == 0);
  CHECK(fs::exists(fs::path(corpus) / "bench" / "manifest.jsonl"));
  CHECK(record(fs::path(corpus) / "run_record.json")["command"] == "ingest");

  REQUIRE(run({"build-aidt", "--corpus", corpus, "--out", aidt, "--seed", "3"}) == 0);
  const auto manifest = slurp(fs::path(aidt) / "aidt_manifest.jsonl");
  CHECK(count_lines(manifest) >= 4);
  const auto rec = record(fs::path(aidt) / "run_record.json");
  CHECK(rec["seed"] == 3);
  CHECK(rec.contains("config_hash"));
  CHECK(rec.contains("code_version"));

  const auto s1 = (root / "s1.ckpt").string(), s2 = (root / "s2.ckpt").string(), s3 = (root / "s3.ckpt").string();
  REQUIRE(run({"train", "--stage", "1", "--corpus", corpus, "--out", s1, "--steps", "1", "--batch", "1"}) == 0);
  REQUIRE(run({"train", "--stage", "2", "--corpus", corpus, "--aidt", aidt, "--init", s1, "--out", s2,
               "--steps", "2", "--batch", "2"}) == 0);
  REQUIRE(run({"train", "--stage", "3", "--corpus", corpus, "--aidt", aidt, "--init", s2, "--out", s3,
               "--steps", "2", "--batch", "1"}) == 0);
  CHECK(record(s3 + ".record.json")["command"] == "train");
  CHECK(run({"train", "--stage", "2", "--corpus", corpus, "--out", (root / "bad.ckpt").string()}) == 1);

  const auto pred = root / "pred";
  REQUIRE(run({"swap", "--source", (fs::path(corpus) / "bench/sources/s000.png").string(), "--target",
               (fs::path(corpus) / "bench/targets/v000").string(), "--ckpt", s3, "--out",
               (pred / "v000").string(), "--seed", "1"}) == 0);
  CHECK(fs::exists(pred / "v000" / "00007.png"));
  CHECK(!fs::exists(pred / "v000" / "00008.png"));
  CHECK(record(pred / "v000" / "run_record.json")["options"].get<std::string>().find("steps=32") !=
        std::string::npos);

  const auto report = (root / "report.tsv").string();
  REQUIRE(run({"eval", "--pred", pred.string(), "--ref", corpus, "--manifest",
               (fs::path(corpus) / "bench/manifest.jsonl").string(), "--report", report}) == 0);
  const auto rep = slurp(report);
  for (const char* k : {"FVD_32", "FVD_128", "top1", "top5", "pose", "expr"}) CHECK(rep.find(k) != std::string::npos);

  const auto vae_table = (root / "vae.tsv").string();
  REQUIRE(run({"ablate-vae", "--out", vae_table, "--steps", "1", "--train-clips", "2", "--heldout-clips", "1",
               "--clip-length", "2", "--image-size", "32", "--batch", "1"}) == 0);
  const auto vt = slurp(vae_table);
  CHECK(count_lines(vt) == 4);
  CHECK(vt.find("(2+1)D/(2+1)D") != std::string::npos);
  CHECK(vt.find("SSIM\tPSNR\tLPIPS") != std::string::npos);

  const auto mix_table = (root / "mixer.tsv").string();
  REQUIRE(run({"ablate-mixer", "--out", mix_table, "--ckpt", s3, "--grid", "0,1", "--pairs", "1", "--length",
               "2", "--steps", "1"}) == 0);
  CHECK(count_lines(slurp(mix_table)) == 5);
  fs::remove_all(root);
}

TEST_CASE("config file supplies options and flags override it") {
  const fs::path root = fs::temp_directory_path() / "vidswap_cli_config";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto corpus = (root / "corpus").string();
  REQUIRE(run({"ingest", "--out", corpus, "--identities", "2", "--images-per-identity", "2", "--clips", "0",
               "--bench", "0"}) == 0);
  {
    std::ofstream cfg(root / "run.toml");
    cfg << "[build-aidt]\nseed = 11\nlandmark-epsilon = 0.2\n";
  }
  const auto out = (root / "aidt").string();
  REQUIRE(run({"--config", (root / "run.toml").string(), "build-aidt", "--corpus", corpus, "--out", out,
               "--seed", "12"}) == 0);
  const auto rec = record(fs::path(out) / "run_record.json");
  CHECK(rec["seed"] == 12);
  const auto opts = rec["options"].get<std::string>();
  CHECK(opts.find("landmark-epsilon=0.2") != std::string::npos);
  fs::remove_all(root);
}

}  // TEST_SUITE
