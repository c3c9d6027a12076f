#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "mrri/dataset_io.hpp"

using namespace mrri;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("mrri_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static inline int counter = 0;
};

int run(const std::vector<std::string>& args, std::string* out_text = nullptr,
        std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli_run(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  std::string err;
  CHECK(run({}, nullptr, &err) == 2);
  CHECK(run({"bogus-subcommand"}, nullptr, &err) == 2);
  CHECK(run({"simulate"}, nullptr, &err) == 2);  // missing -o
  CHECK(err.find("usage error") != std::string::npos);
}

TEST_CASE("module errors exit with code 1 and structured JSON") {
  std::string err;
  CHECK(run({"info", "/nonexistent/file.mrri"}, nullptr, &err) == 1);
  const auto j = nlohmann::json::parse(err);
  CHECK(j.contains("error"));
}

TEST_CASE("simulate / info / partition / fit / integrate / test pipeline") {
  TempDir dir;
  const std::string data = dir.file("data.mrri");
  const std::string spec = dir.file("spec.json");
  const std::string theta = dir.file("theta.json");

  std::string out;
  REQUIRE(run({"--seed", "17", "simulate", "--preset", "sim1-desk", "--n-obs",
               "400", "-o", data, "--spec-out", spec, "--theta-out", theta},
              &out) == 0);
  CHECK(std::filesystem::exists(data));
  CHECK(std::filesystem::exists(data + ".provenance.json"));
  CHECK(nlohmann::json::parse(slurp(spec)).contains("provenance"));

  REQUIRE(run({"info", data}, &out) == 0);
  auto header = nlohmann::json::parse(out);
  CHECK(header["n_obs"] == 400);
  CHECK(header["n_locations"] == 100);
  CHECK(header["magic"] == "MRRIDATA");

  const std::string partition = dir.file("partition.json");
  REQUIRE(run({"partition", "--data", data, "--branching", "2", "2", "-o",
               partition},
              &out) == 0);
  CHECK(nlohmann::json::parse(slurp(partition))["nodes"].contains("1.2"));

  const std::string leaf_fit = dir.file("leaf.json");
  REQUIRE(run({"fit", "--data", data, "--spec", spec, "--partition", partition,
               "--node", "1.1", "-o", leaf_fit},
              &out) == 0);
  CHECK(nlohmann::json::parse(slurp(leaf_fit))["method"] == "leaf-mle");

  const std::string est_r = dir.file("est_r.json");
  const std::string est_s = dir.file("est_s.json");
  REQUIRE(run({"--workers", "2", "integrate", "--data", data, "--spec", spec,
               "--partition", partition, "--recursive", "-o", est_r},
              &out) == 0);
  REQUIRE(run({"--workers", "2", "integrate", "--data", data, "--spec", spec,
               "--partition", partition, "--sequential", "-o", est_s},
              &out) == 0);
  auto jr = nlohmann::json::parse(slurp(est_r));
  auto js = nlohmann::json::parse(slurp(est_s));
  CHECK(jr["method"] == "recursive");
  CHECK(js["method"] == "sequential");
  CHECK(jr["counters"]["score_evals"] == 8);  // 4 leaves x 2 levels
  CHECK(js["counters"]["score_evals"] == 4);

  std::string result_text;
  REQUIRE(run({"test", "--estimate", est_r, "--spec", spec, "--contrast", "1",
               "2", "--null", "0"},
              &result_text) == 0);
  auto result = nlohmann::json::parse(result_text);
  CHECK(result.contains("statistic"));
  CHECK(result.contains("p_value"));

  // Choosing both schedules at once is a module error.
  std::string err;
  CHECK(run({"integrate", "--data", data, "--spec", spec, "--partition",
             partition, "--recursive", "--sequential", "-o", est_r},
            nullptr, &err) == 1);
}

TEST_CASE("re-running with identical provenance reproduces outputs bit-exactly") {
  TempDir dir;
  const std::string data1 = dir.file("a.mrri");
  const std::string data2 = dir.file("b.mrri");
  REQUIRE(run({"--seed", "5", "simulate", "--preset", "sim1-desk", "--n-obs",
               "200", "-o", data1}) == 0);
  REQUIRE(run({"--seed", "5", "simulate", "--preset", "sim1-desk", "--n-obs",
               "200", "-o", data2}) == 0);
  CHECK(slurp(data1) == slurp(data2));

  const std::string spec = dir.file("spec.json");
  REQUIRE(run({"--seed", "5", "simulate", "--preset", "sim1-desk", "--n-obs",
               "200", "-o", data1, "--spec-out", spec}) == 0);
  const std::string partition = dir.file("p.json");
  const std::string est1 = dir.file("e1.json");
  const std::string est2 = dir.file("e2.json");
  REQUIRE(run({"partition", "--data", data1, "--branching", "2", "2", "-o",
               partition}) == 0);
  REQUIRE(run({"--workers", "1", "integrate", "--data", data1, "--spec", spec,
               "--partition", partition, "--sequential", "-o", est1}) == 0);
  REQUIRE(run({"--workers", "4", "integrate", "--data", data1, "--spec", spec,
               "--partition", partition, "--sequential", "-o", est2}) == 0);
  // Bit-identical across worker counts too.
  CHECK(slurp(est1) == slurp(est2));
}

TEST_CASE("study emits tables and a records file") {
  TempDir dir;
  const std::string out_path = dir.file("study.json");
  std::string out;
  REQUIRE(run({"--workers", "2", "--seed", "3", "study", "--preset", "sim1-desk",
               "--replicates", "4", "--estimators", "sequential", "-o", out_path},
              &out) == 0);
  CHECK(out.find("estimator: sequential") != std::string::npos);
  CHECK(out.find("RMSE") != std::string::npos);
  auto j = nlohmann::json::parse(slurp(out_path));
  CHECK(j["replicates"].size() == 4);
  CHECK(j.contains("provenance"));
}
