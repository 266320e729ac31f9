#include <doctest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

#include "tokcom/experiment.hpp"

namespace fs = std::filesystem;
using namespace tokcom;

namespace {

const fs::path& scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("tokcom_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(TOKCOM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const std::string& name, const std::string& text) {
  const auto p = scratch() / name;
  std::ofstream(p) << text;
  return p;
}

std::string bundled(const std::string& name) { return (fs::path(TOKCOM_CONFIG_DIR) / name).string(); }

fs::path small_config() {
  return write_config("small.json", R"({
    "source": {"q": 64, "length": 64, "sequences": 3},
    "predictor": {"kind": "markov", "train_sequences": 8},
    "link": {"runs": 2, "packet_log": true},
    "sweep": {"snr_db": [5, 7], "seeds": [1, 2]},
    "semmap": {"order": 16, "steps": 2000, "restarts": 2}
  })");
}

}  // namespace

TEST_CASE("cli: exit codes") {
  CHECK(run("--help") == 0);
  CHECK(run("") == 2);
  CHECK(run("simulate") == 2);
  CHECK(run("simulate --out " + (scratch() / "x").string() + " --config /does/not/exist.json") == 2);
  const auto bad = write_config("bad.json", R"({"link": {"polic": "full_reliable"}})");
  CHECK(run("simulate --config " + bad.string() + " --out " + (scratch() / "bad").string()) == 2);
  CHECK_FALSE(fs::exists(scratch() / "bad" / "results.csv"));
  const auto broken = write_config("broken.json", R"({"predictor": {"kind": "bridge", "bridge_command": "exit 3"}})");
  CHECK(run("simulate --config " + broken.string() + " --out " + (scratch() / "broken").string()) == 1);
  CHECK_FALSE(fs::exists(scratch() / "broken" / "results.csv"));
  CHECK(run("report --out " + (scratch() / "noreport").string()) == 1);
}

TEST_CASE("cli: simulate writes results, provenance and packet log") {
  const auto out = scratch() / "sim";
  REQUIRE(run("simulate --config " + small_config().string() + " --out " + out.string()) == 0);
  for (const char* f : {"results.csv", "resolved_config.json", "manifest.json", "packet_log.csv"})
    CHECK(fs::exists(out / f));
  const auto rows = rows_from_csv(slurp(out / "results.csv"));
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].seed == 1);
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["command"] == "simulate");
  CHECK(manifest.contains("version"));
  CHECK(manifest["seeds"] == nlohmann::json::array({1}));
  CHECK(ExperimentConfig::parse(slurp(out / "resolved_config.json")).source.q == 64);
}

TEST_CASE("cli: forced PER 0.4 under mask and predict keeps one transmission") {
  auto j = nlohmann::json::parse(slurp(bundled("sticky_1024.json")));
  j["phy"]["channel"] = "forced";
  j["phy"]["forced_per"] = 0.4;
  j["link"]["runs"] = 4;
  const auto cfg = write_config("forced.json", j.dump());
  const auto out = scratch() / "forced";
  REQUIRE(run("simulate --config " + cfg.string() + " --out " + out.string()) == 0);
  const auto rows = rows_from_csv(slurp(out / "results.csv"));
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].t_avg == 1.0);
  CHECK(rows[0].tce == 25.6);
  CHECK(rows[0].policy == "mask_and_predict");
}

TEST_CASE("cli: bundled sweep gives six rows with falling PER") {
  const auto out = scratch() / "sweep";
  REQUIRE(run("sweep --config " + bundled("sticky_1024.json") + " --out " + out.string()) == 0);
  const auto rows = rows_from_csv(slurp(out / "results.csv"));
  REQUIRE(rows.size() == 6);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    MESSAGE("snr " << rows[i].snr_db << " per " << rows[i].per);
    CHECK(rows[i].per < rows[i - 1].per);
  }
  REQUIRE(run("report --out " + out.string()) == 0);
  for (const char* f : {"tce_vs_snr.svg", "ter_before_vs_snr.svg", "ter_after_vs_snr.svg", "per_vs_snr.svg"})
    CHECK(fs::exists(out / f));
}

TEST_CASE("cli: compact preset runs") {
  const auto out = scratch() / "compact";
  REQUIRE(run("simulate --config " + bundled("compact_8192.json") + " --out " + out.string()) == 0);
  const auto rows = rows_from_csv(slurp(out / "results.csv"));
  REQUIRE(rows.size() == 1);
  CHECK(std::abs(rows[0].bpp / rows[0].t_avg - 0.025390625) < 1e-12);
}

TEST_CASE("cli: every command is byte-identical on rerun") {
  const auto cfg = small_config().string();
  const std::vector<std::pair<std::string, std::vector<std::string>>> cases{
      {"gen-source", {"corpus.tokc"}},
      {"train", {"markov_forward.json", "markov_backward.json"}},
      {"simulate", {"results.csv", "packet_log.csv", "resolved_config.json"}},
      {"sweep", {"results.csv", "packet_log.csv"}},
      {"compress", {"compress.csv"}},
      {"semmap", {"assignment.csv", "semmap.json"}},
  };
  for (const auto& [cmd, files] : cases) {
    const auto a = scratch() / ("det_a_" + cmd), b = scratch() / ("det_b_" + cmd);
    REQUIRE(run(cmd + " --config " + cfg + " --out " + a.string() + " --workers 3") == 0);
    REQUIRE(run(cmd + " --config " + cfg + " --out " + b.string() + " --workers 1") == 0);
    for (const auto& f : files) {
      INFO(cmd << " " << f);
      CHECK(slurp(a / f).size() > 0);
      CHECK(slurp(a / f) == slurp(b / f));
    }
  }
  const auto a = scratch() / "det_a_sweep";
  REQUIRE(run("report --out " + a.string()) == 0);
  const auto first = slurp(a / "tce_vs_snr.svg");
  REQUIRE(run("report --out " + a.string()) == 0);
  CHECK(slurp(a / "tce_vs_snr.svg") == first);
}

TEST_CASE("cli: seed override and jsonl output") {
  const auto out = scratch() / "jsonl";
  REQUIRE(run("sweep --config " + small_config().string() + " --out " + out.string() + " --seed 9 --format jsonl") == 0);
  const auto text = slurp(out / "results.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(text.find("\"seed\":9") != std::string::npos);
}

TEST_CASE("cli: train accepts an external corpus") {
  const auto cfg = small_config().string();
  const auto gen = scratch() / "corpus_gen";
  REQUIRE(run("gen-source --config " + cfg + " --out " + gen.string()) == 0);
  const auto out = scratch() / "corpus_train";
  REQUIRE(run("train --config " + cfg + " --out " + out.string() + " --input " + (gen / "corpus.tokc").string()) == 0);
  CHECK(fs::exists(out / "markov_forward.json"));
}
