#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::absolute("cli_test_tmp");

int run(const std::string& args) {
  const std::string cmd = std::string(STEMFUSE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string drop_first_line(const std::string& s) { return s.substr(s.find('\n') + 1); }

std::string dir(const std::string& name) { return (kRoot / name).string(); }

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

struct Fixture {
  Fixture() {
    fs::remove_all(kRoot);
    write(kRoot / "cfg.json", R"({"engine": {"max_iters": 150}, "simulate": {"n": 120, "k": 5}})");
  }
};

}  // namespace

TEST_CASE_METHOD(Fixture, "simulate then fit twice gives byte-identical outputs") {
  const std::string cfg = " --config " + (kRoot / "cfg.json").string();
  REQUIRE(run("simulate" + cfg + " --seed 11 --out " + dir("sim")) == 0);
  const std::string data = " --data " + dir("sim") + "/dataset.csv";
  REQUIRE(run("fit" + cfg + data + " --out " + dir("a")) == 0);
  REQUIRE(run("fit" + cfg + data + " --out " + dir("b")) == 0);
  for (const char* f : {"chain.tsv", "imputations.tsv", "summary.json", "parameter_posteriors.tsv", "subjects.tsv"}) {
    INFO(f);
    const auto a = slurp(kRoot / "a" / f);
    CHECK_FALSE(a.empty());
    CHECK(a == slurp(kRoot / "b" / f));
  }
  CHECK(fs::exists(kRoot / "a" / "timing.json"));

  SECTION("diagnose is deterministic") {
    REQUIRE(run("diagnose" + cfg + data + " --out " + dir("a")) == 0);
    REQUIRE(run("diagnose" + cfg + data + " --out " + dir("b")) == 0);
    CHECK(drop_first_line(slurp(kRoot / "a" / "diagnose.tsv")) == drop_first_line(slurp(kRoot / "b" / "diagnose.tsv")));
    // same draws as the subject table written by fit
    CHECK(drop_first_line(slurp(kRoot / "a" / "diagnose.tsv")) == drop_first_line(slurp(kRoot / "a" / "subjects.tsv")));
  }
  SECTION("a summary replays its run") {
    REQUIRE(run("fit --config " + dir("a") + "/summary.json" + data + " --out " + dir("replay")) == 0);
    for (const char* f : {"chain.tsv", "subjects.tsv"}) {
      CHECK(drop_first_line(slurp(kRoot / "replay" / f)) == drop_first_line(slurp(kRoot / "a" / f)));
    }
    const auto a = nlohmann::json::parse(slurp(kRoot / "a" / "summary.json"));
    const auto r = nlohmann::json::parse(slurp(kRoot / "replay" / "summary.json"));
    CHECK(a.at("manifest").at("config") == r.at("manifest").at("config"));
  }
  SECTION("a different seed changes the chain") {
    REQUIRE(run("fit" + cfg + data + " --seed 99 --out " + dir("c")) == 0);
    CHECK(slurp(kRoot / "c" / "chain.tsv") != slurp(kRoot / "a" / "chain.tsv"));
  }
  SECTION("diagnose rejects a chain for another symptom count") {
    write(kRoot / "k3.csv", "id,T,X1,X2,X3,Y1,Y2\na,1,1,0,0,0.1,0.2\n");
    CHECK(run("diagnose --data " + (kRoot / "k3.csv").string() + " --chain " + dir("a") + "/chain.tsv --out " + dir("d")) == 1);
  }
}

TEST_CASE_METHOD(Fixture, "usage and input errors exit nonzero") {
  CHECK(run("") != 0);
  CHECK(run("fit --bogus") != 0);
  CHECK(run("fit --data " + dir("missing.csv")) != 0);
  CHECK(run("fit --missing-t sometimes --data " + (kRoot / "cfg.json").string()) != 0);
  write(kRoot / "bad.csv", "id,T,S,X1\na,1,0,1\n");
  CHECK(run("fit --data " + (kRoot / "bad.csv").string() + " --out " + dir("bad")) == 1);
  CHECK_FALSE(fs::exists(kRoot / "bad" / "chain.tsv"));
  write(kRoot / "broken.json", "{");
  CHECK(run("simulate --config " + (kRoot / "broken.json").string() + " --out " + dir("x")) == 1);
}

TEST_CASE_METHOD(Fixture, "unknown config keys warn, and fail under --strict") {
  write(kRoot / "typo.json", R"({"simulate": {"n": 50, "k": 3, "nn": 1}})");
  const std::string args = "simulate --config " + (kRoot / "typo.json").string() + " --out " + dir("typo");
  CHECK(run(args) == 0);
  CHECK(run(args + " --strict") == 3);
}

TEST_CASE_METHOD(Fixture, "small benchmark: one row per cell and method") {
  write(kRoot / "bench.json", R"({"engine": {"max_iters": 100},
    "benchmark": {"sensitivity": [0.7, 0.9], "specificity": [0.8], "replicates": 2,
                  "methods": ["stem", "em_informed", "em_agnostic", "vanilla"]}})");
  REQUIRE(run("benchmark --config " + (kRoot / "bench.json").string() + " --out " + dir("bench")) == 0);
  std::istringstream in(slurp(kRoot / "bench" / "benchmark.tsv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) rows += (line.empty() || line[0] == '#') ? 0 : 1;
  CHECK(rows == 1 + 2 * 4);
  CHECK(fs::exists(kRoot / "bench" / "benchmark_timing.tsv"));
  CHECK(fs::exists(kRoot / "bench" / "benchmark_truth.json"));
}
