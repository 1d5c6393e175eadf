// Drives the scd binary end to end in a scratch directory with a tiny config.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* tiny_config = R"({
  "data": {"synthetic_rows": 200},
  "diffusion": {"train": {"epochs": 2}},
  "classifier": {"train": {"epochs": 3}},
  "plausibility": {"hidden": 16, "train": {"epochs": 1}},
  "vae": {"train": {"epochs": 1}},
  "guidance": {"tau": 5},
  "evaluation": {"queries": 2, "taus": [3, 5], "batch_sizes": [2, 4]}
})";

class Cli : public ::testing::Test {
 protected:
  static inline fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("scd_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "tiny.json") << tiny_config;
    for (const char* cmd : {"train-diffusion", "train-classifier", "train-plausibility", "train-vae"}) {
      const Result r = run(cmd);
      ASSERT_EQ(r.status, 0) << cmd << ": " << r.err;
    }
  }

  static void TearDownTestSuite() { fs::remove_all(dir); }

  /// Runs `scd --config tiny.json --checkpoints ck --quiet <args>` inside the scratch directory.
  static Result run(const std::string& args, const std::string& config = "tiny.json",
                    const std::string& checkpoints = "ck") {
    const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = "cd '" + dir.string() + "' && '" SCD_CLI_PATH "' --config " + config +
                            " --checkpoints " + checkpoints + " --quiet " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
  }

  static std::vector<json> json_lines(const std::string& text) {
    std::vector<json> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) out.push_back(json::parse(line));
    return out;
  }
};

constexpr const char* row_flag = "--row '30,a2,b1,c1,40,e0'";

}  // namespace

TEST_F(Cli, SchemaReportsDigestAndRows) {
  const Result r = run("schema");
  ASSERT_EQ(r.status, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["rows"], 200);
  EXPECT_EQ(j["columns"].size(), 6u);
  EXPECT_EQ(j["digest"].get<std::string>().size(), 64u);
}

TEST_F(Cli, GenerateIsByteIdenticalUnderSeed) {
  for (const char* method : {"scd", "dice", "wachter", "dice_vae"}) {
    const std::string args = std::string("--seed 17 generate ") + row_flag + " --target yes --method " + method;
    const Result a = run(args), b = run(args);
    ASSERT_EQ(a.status, 0) << a.err;
    EXPECT_EQ(a.out, b.out) << method;
    const json j = json::parse(a.out);
    EXPECT_EQ(j["seed"], 17);
    EXPECT_EQ(j["rows"].size(), 4u);
    EXPECT_FALSE(j.contains("loss_trace"));
  }
}

TEST_F(Cli, GenerateWritesLossTrace) {
  const Result r = run(std::string("--seed 3 generate ") + row_flag + " --target yes -B 2 --tau 4 --trace trace.jsonl");
  ASSERT_EQ(r.status, 0) << r.err;
  const auto trace = json_lines(slurp(dir / "trace.jsonl"));
  ASSERT_EQ(trace.size(), 4u);
  EXPECT_EQ(trace.front()["step"], 4);  // diffusion timestep, counting down from tau
  EXPECT_EQ(trace.back()["step"], 1);
  EXPECT_TRUE(trace[0].contains("validity"));
}

TEST_F(Cli, GenerateRejectsBadInput) {
  Result r = run(std::string("generate --row '30,zz,b1,c1,40,e0' --target yes"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("A"), std::string::npos) << r.err;
  r = run(std::string("generate ") + row_flag + " --target maybe");
  EXPECT_NE(r.status, 0);
  r = run(std::string("generate ") + row_flag + " --target yes --tau 100000");
  EXPECT_NE(r.status, 0);
}

TEST_F(Cli, SampleIsDeterministicAndWritesCsv) {
  const Result a = run("--seed 5 sample --count 20"), b = run("--seed 5 sample --count 20");
  ASSERT_EQ(a.status, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 21);
  EXPECT_NE(a.err.find("violation rate"), std::string::npos);
}

TEST_F(Cli, EvaluateIsDeterministicOverMethods) {
  const Result a = run("--seed 2 evaluate --csv cells.csv"), b = run("--seed 2 evaluate");
  ASSERT_EQ(a.status, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto cells = json_lines(a.out);
  ASSERT_EQ(cells.size(), 4u);
  std::set<std::string> methods;
  for (const json& c : cells) methods.insert(c["method"].get<std::string>());
  EXPECT_EQ(methods, (std::set<std::string>{"scd", "dice", "wachter", "dice_vae"}));
  EXPECT_EQ(std::count_if(std::istreambuf_iterator<char>(*std::make_unique<std::ifstream>(dir / "cells.csv")), {},
                          [](char ch) { return ch == '\n'; }),
            5);
}

TEST_F(Cli, LossDropGridHasFourCellsPerMethod) {
  const Result r = run("ablate --grid loss-drop");
  ASSERT_EQ(r.status, 0) << r.err;
  std::map<std::string, std::set<std::string>> variants;
  for (const json& c : json_lines(r.out)) {
    EXPECT_EQ(c["grid"], "loss-drop");
    variants[c["method"].get<std::string>()].insert(c["variant"].get<std::string>());
  }
  const std::set<std::string> expected = {"all", "-validity", "-proximity", "-diversity"};
  EXPECT_EQ(variants.size(), 2u);
  EXPECT_EQ(variants["scd"], expected);
  EXPECT_EQ(variants["dice"], expected);
}

TEST_F(Cli, AblateGridSizes) {
  EXPECT_EQ(json_lines(run("ablate --grid steps").out).size(), 4u);  // 2 taus x noise on/off
  EXPECT_EQ(json_lines(run("ablate --grid strategy").out).size(), 4u);
  EXPECT_EQ(json_lines(run("ablate --grid batch").out).size(), 2u);
  EXPECT_NE(run("ablate --grid everything").status, 0);
}

TEST_F(Cli, MismatchedDatasetNamesExpectedDigest) {
  const std::string want = json::parse(run("schema").out)["digest"];
  std::ofstream(dir / "other.json") << R"({"data": {"synthetic_rows": 120, "synthetic_seed": 99}})";
  const Result r = run("--seed 1 evaluate", "other.json");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find(want), std::string::npos) << r.err;
  const Result t = run("train-classifier", "other.json");
  EXPECT_NE(t.status, 0);
  EXPECT_NE(t.err.find(want), std::string::npos) << t.err;
}

TEST_F(Cli, MissingCheckpointsAreReported) {
  const Result r = run(std::string("generate ") + row_flag + " --target yes", "tiny.json", "nowhere");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("diffusion.ckpt"), std::string::npos) << r.err;
}

TEST_F(Cli, MakeSyntheticIsSeeded) {
  const Result a = run("--seed 4 make-synthetic --rows 10"), b = run("--seed 4 make-synthetic --rows 10");
  ASSERT_EQ(a.status, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 11);
}
