#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "keydyn/cli.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"keydyn"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return keydyn::cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

}  // namespace

TEST_CASE("unknown flags exit with the usage code") {
    CHECK(run({"matrix", "--bogus-flag"}) == 1);
    CHECK(run({"not-a-subcommand"}) == 1);
}

TEST_CASE("missing events.csv exits with the data code and names the path") {
    TempDir dir("keydyn_cli_missing");
    CHECK(run({"summary", "--data-dir", dir.str()}) == 2);
}

TEST_CASE("config files with unknown keys are rejected") {
    TempDir dir("keydyn_cli_badcfg");
    std::ofstream(dir.path / "bad.json") << "{\"typo_key\": 1}";
    CHECK(run({"summary", "--config", dir.str("bad.json"), "--data-dir", dir.str()}) == 1);
}

TEST_CASE("end-to-end: synth, summary, extract, train, predict, matrix, report") {
    TempDir dir("keydyn_cli_e2e");
    const std::string data = dir.str("data");

    CHECK(run({"synth", "--out", data, "--users", "20", "--keys", "250", "--signal", "1.0",
               "--seed", "3"}) == 0);
    CHECK(fs::exists(fs::path(data) / "events.csv"));
    CHECK(fs::exists(fs::path(data) / "labels.csv"));

    CHECK(run({"summary", "--data-dir", data}) == 0);

    const std::string feat = dir.str("features");
    CHECK(run({"extract", "--data-dir", data, "--out", feat, "--device", "desktop", "--mode",
               "free"}) == 0);
    const std::string features_csv = read_file(fs::path(feat) / "features.csv");
    CHECK(features_csv.find("user_id,") == 0);
    CHECK(features_csv.find("uni:") != std::string::npos);
    CHECK(read_file(fs::path(feat) / "mask.csv").find("user_id,") == 0);

    const std::string runout = dir.str("run");
    CHECK(run({"train", "--data-dir", data, "--out", runout, "--task", "gender", "--device",
               "desktop", "--mode", "free", "--model", "naive_bayes", "--seed", "5"}) == 0);
    CHECK(fs::exists(fs::path(runout) / "model.json"));
    CHECK(fs::exists(fs::path(runout) / "provenance.json"));

    // predict-from-file smoke path reproduces the recorded test predictions
    const std::string pred_out = dir.str("pred.csv");
    CHECK(run({"predict", "--model", (fs::path(runout) / "model.json").string(), "--features",
               (fs::path(runout) / "test_features.csv").string(), "--out", pred_out}) == 0);
    CHECK(read_file(pred_out) == read_file(fs::path(runout) / "test_predictions.csv"));

    std::ofstream(dir.path / "run.json") << R"({
        "tasks": ["gender", "age"],
        "devices": ["desktop"],
        "modes": ["free"],
        "models": ["naive_bayes", "knn"],
        "seeds": [5],
        "selector_grid": [16],
        "cv_folds": 3
    })";
    const std::string results = dir.str("results");
    CHECK(run({"matrix", "--data-dir", data, "--out", results, "--config",
               dir.str("run.json")}) == 0);
    CHECK(fs::exists(fs::path(results) / "gender.csv"));
    CHECK(fs::exists(fs::path(results) / "gender.md"));
    CHECK(fs::exists(fs::path(results) / "age.csv"));
    CHECK(fs::exists(fs::path(results) / "provenance.json"));

    // report re-renders markdown from the CSVs alone
    const std::string md_before = read_file(fs::path(results) / "gender.md");
    fs::remove(fs::path(results) / "gender.md");
    CHECK(run({"report", "--out", results}) == 0);
    CHECK(read_file(fs::path(results) / "gender.md") == md_before);
}

TEST_CASE("KEYDYN_DATA_DIR supplies the data directory when the flag is absent") {
    TempDir dir("keydyn_cli_env");
    const std::string data = dir.str("data");
    REQUIRE(run({"synth", "--out", data, "--users", "12", "--keys", "150", "--seed", "2"}) == 0);
    setenv("KEYDYN_DATA_DIR", data.c_str(), 1);
    CHECK(run({"summary"}) == 0);
    unsetenv("KEYDYN_DATA_DIR");
}

TEST_CASE("train validates the task/model pairing") {
    TempDir dir("keydyn_cli_pair");
    const std::string data = dir.str("data");
    REQUIRE(run({"synth", "--out", data, "--users", "12", "--keys", "150", "--seed", "2"}) == 0);
    CHECK(run({"train", "--data-dir", data, "--task", "age", "--model", "naive_bayes", "--out",
               dir.str("out")}) == 1);
}
