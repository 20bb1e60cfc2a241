#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adaspan/data.hpp"
#include "cli.hpp"
#include "support.hpp"

using namespace adaspan;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "adaspan");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json read_json(const std::filesystem::path& file) {
  return nlohmann::json::parse(std::ifstream(file));
}

std::string read_text(const std::filesystem::path& file) {
  std::ifstream in(file);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 300 training and 1000 test records, balanced over the 100 classes.
struct SmallData {
  testing::TempDir dir{"cli_data"};
  SmallData() {
    write_cifar_file(dir.path() / "train.bin", synthetic_cifar(300, 4));
    write_cifar_file(dir.path() / "test.bin", synthetic_cifar(1000, 5));
  }
  std::string path() const { return dir.path().string(); }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("validation errors exit 1") {
  auto r = run({"train", "--primitive", "conv", "--ramp", "3", "--data", "x"});
  CHECK(r.code == 1);
  CHECK(r.err.find("ConflictingFlags") != std::string::npos);
  CHECK(run({"train", "--primitive", "fixed", "--span-l1", "0.1", "--data", "x"}).code == 1);
  CHECK(run({"analyze", "--primitive", "conv", "--heads", "2"}).code == 1);

  r = run({"analyze", "--bogus"});
  CHECK(r.code == 1);
  CHECK(r.err.find("UnknownFlag") != std::string::npos);
  CHECK(run({"analyze", "--primitive", "lstm"}).code == 1);
  CHECK(run({}).code == 1);
  CHECK(run({"--help"}).code == 0);

  CHECK(cli::exit_code_for(ErrorCode::NonFiniteLoss) == 2);
  CHECK(cli::exit_code_for(ErrorCode::ConfigMismatch) == 1);
}

TEST_CASE("gradcheck and analyze") {
  auto r = run({"gradcheck", "--target", "mask"});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("PASS mask", 0) == 0);
  r = run({"gradcheck", "--target", "saturation"});
  CHECK(r.code == 0);

  r = run({"analyze", "--primitive", "fixed", "--size", "small", "--json"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["primitive"] == "fixed");
  CHECK(j["total_params"].get<std::size_t>() > 0);

  testing::TempDir out("cli_analyze");
  r = run({"analyze", "--primitive", "conv", "--size", "medium", "--out", out.path().string()});
  REQUIRE(r.code == 0);
  CHECK(read_json(out.path() / "cost.json")["size_class"] == "medium");
  CHECK(read_text(out.path() / "config.ini").find("size=\"medium\"") != std::string::npos);
}

TEST_CASE("train, eval, replay") {
  SmallData data;
  testing::TempDir runs("cli_runs");
  const auto out = runs.path() / "conv";
  auto r = run({"train", "--primitive", "conv", "--data", data.path(), "--epochs", "1",
                "--val-count", "100", "--seed", "3", "--out", out.string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  for (const char* f : {"config.ini", "metrics.csv", "summary.json"}) CHECK(std::filesystem::exists(out / f));
  for (const char* ck : {"initial", "last", "best"}) CHECK(std::filesystem::exists(out / ck / "manifest.txt"));
  const auto summary = read_json(out / "summary.json");
  CHECK(summary["epochs_run"] == 1);
  CHECK(summary.contains("test_acc"));

  // Checkpoint round trip reproduces the validation accuracy.
  r = run({"eval", "--checkpoint", (out / "best").string(), "--split", "val", "--data", data.path(),
           "--out", (runs.path() / "eval").string()});
  REQUIRE(r.code == 0);
  CHECK(read_json(runs.path() / "eval" / "eval.json")["accuracy"].get<double>() ==
        summary["best_val_acc"].get<double>());
  CHECK(read_json(runs.path() / "eval" / "eval.json")["count"] == 100);

  // An untrained model sits near chance on the test split.
  r = run({"eval", "--checkpoint", (out / "initial").string(), "--data", data.path(), "--out",
           (runs.path() / "chance").string()});
  REQUIRE(r.code == 0);
  const double chance = read_json(runs.path() / "chance" / "eval.json")["accuracy"].get<double>();
  CHECK(chance >= 0.005);
  CHECK(chance <= 0.02);

  r = run({"eval", "--checkpoint", (out / "best").string(), "--primitive", "adaptive", "--data", data.path()});
  CHECK(r.code == 1);
  CHECK(r.err.find("ConfigMismatch") != std::string::npos);

  // The snapshot replays the same run.
  const auto replay = runs.path() / "replay";
  r = run({"--config", (out / "config.ini").string(), "train", "--out", replay.string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto a = read_text(out / "metrics.csv"), b = read_text(replay / "metrics.csv");
  // Wall-clock seconds differ; everything before that column must match.
  const auto cut = [](const std::string& csv) {
    std::string row = csv.substr(csv.find('\n') + 1);
    std::size_t commas = 0, i = 0;
    for (; i < row.size() && commas < 6; ++i) commas += row[i] == ',';
    return row.substr(0, i);
  };
  CHECK(cut(a) == cut(b));
  CHECK(read_json(replay / "summary.json")["test_acc"] == summary["test_acc"]);
}

TEST_CASE("spans table and data fallback") {
  SmallData data;
  testing::TempDir runs("cli_spans");
  const auto out = runs.path() / "adaptive";
  ::setenv("ADAPTIVE_ATTN_DATA", data.path().c_str(), 1);
  auto r = run({"train", "--primitive", "adaptive", "--epochs", "1", "--fraction", "0.5", "--val-count", "100",
                "--skip-test", "--out", out.string()});
  ::unsetenv("ADAPTIVE_ATTN_DATA");
  INFO(r.err);
  REQUIRE(r.code == 0);
  r = run({"spans", "--checkpoint", (out / "initial").string()});
  REQUIRE(r.code == 0);
  // z = 2 and R = 2 at init: 9 in every block.
  CHECK(r.out.find("extents: 9 9 9") != std::string::npos);

  r = run({"train", "--primitive", "conv", "--epochs", "1", "--out", (runs.path() / "x").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("MissingFile") != std::string::npos);
  CHECK(run({"spans", "--checkpoint", (runs.path() / "nothing").string()}).code == 1);
}

}
