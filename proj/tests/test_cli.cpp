#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path workdir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "latfield_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

int run_cli(const std::string &command, const json &cfg,
            const fs::path &out) {
  const char *bin = std::getenv("LATFIELD_BIN");
  REQUIRE(bin != nullptr);
  fs::create_directories(out);
  fs::path cfgPath = out / "config.json";
  std::ofstream(cfgPath) << cfg.dump(2);
  std::string cmd = std::string("\"") + bin + "\" " + command + " --config " +
                    cfgPath.string() + " --out " + out.string() +
                    " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json summary_of(const fs::path &out) {
  return json::parse(slurp(out / "summary.json"));
}

json vacancy_defect() {
  return {{"radius", 3.0}, {"removed", {{0, 0}}}};
}

} // namespace

TEST_CASE("cli validate reports symmetry and stability") {
  fs::path out = workdir() / "validate";
  json cfg = {{"command", "validate"}, {"model", "antiplane-sine"}};
  CHECK(run_cli("validate", cfg, out) == 0);
  json s = summary_of(out);
  CHECK(s["symmetry_pass"].get<bool>());
  CHECK(s["c0"].get<double>() == doctest::Approx(1.0).epsilon(0.2));

  // the cubic bond potential deliberately violates point symmetry
  fs::path out2 = workdir() / "validate-cubic";
  cfg["model"] = "antiplane-cubic";
  CHECK(run_cli("validate", cfg, out2) == 0);
  CHECK(!summary_of(out2)["symmetry_pass"].get<bool>());

  json manifest = json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["command"] == "validate");
  CHECK(manifest["metadata"].contains("trials"));
}

TEST_CASE("cli greens writes the table and reproduces byte-identically") {
  json cfg = {{"model", "antiplane-sine"}, {"L", 256}, {"radius", 24.0}};
  fs::path a = workdir() / "greens-a", b = workdir() / "greens-b";
  CHECK(run_cli("greens", cfg, a) == 0);
  CHECK(run_cli("greens", cfg, b) == 0);

  std::string csv = slurp(a / "greens.csv");
  CHECK(csv.substr(0, csv.find('\n')) == "n1,n2,G11");
  CHECK(summary_of(a)["diff_e1"].get<double>() ==
        doctest::Approx(-0.25).epsilon(1e-4));

  CHECK(slurp(a / "greens.csv") == slurp(b / "greens.csv"));
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
}

TEST_CASE("cli rejects invalid configs with exit 2") {
  fs::path out = workdir() / "invalid";
  json cfg = {{"model", "antiplane-sine"}, {"bogus", 1}};
  CHECK(run_cli("validate", cfg, out / "unknown-key") == 2);

  cfg = {{"model", "no-such-model"}};
  CHECK(run_cli("validate", cfg, out / "unknown-model") == 2);

  cfg = {{"command", "greens"}, {"model", "antiplane-sine"}};
  CHECK(run_cli("validate", cfg, out / "command-mismatch") == 2);

  cfg = {{"model", "antiplane-sine"}}; // greens without L / radius
  CHECK(run_cli("greens", cfg, out / "missing-key") == 2);
}

TEST_CASE("cli solve relaxes a vacancy; non-convergence exits 3") {
  json cfg = {{"model", "triangular-pair"},
              {"defect", vacancy_defect()},
              {"scheme", "clamped"},
              {"R", 8.0}};
  fs::path out = workdir() / "solve";
  CHECK(run_cli("solve", cfg, out) == 0);
  json s = summary_of(out);
  CHECK(s["converged"].get<bool>());
  CHECK(s["energy"].get<double>() < 0.0);
  std::string csv = slurp(out / "solution.csv");
  CHECK(csv.substr(0, csv.find('\n')) == "n1,n2,w1,w2");

  cfg["max_iterations"] = 1;
  CHECK(run_cli("solve", cfg, workdir() / "solve-fail") == 3);
}

TEST_CASE("cli moments fits coefficients from a relaxed core") {
  json cfg = {{"model", "triangular-pair"},
              {"defect", vacancy_defect()},
              {"R", 10.0},
              {"jmax", 1},
              {"fit_radius", 6.0},
              {"tail_tol", 1.0}};
  fs::path out = workdir() / "moments";
  CHECK(run_cli("moments", cfg, out) == 0);
  json s = summary_of(out);
  CHECK(s["converged"].get<bool>());
  std::string csv = slurp(out / "moments.csv");
  CHECK(csv.substr(0, csv.find('\n')) == "j,k,index,moment,coefficient");
}

TEST_CASE("cli predictor samples the screw field stack") {
  json cfg = {{"model", "antiplane-sine"},
              {"screw", {{"burgers", 1.0}, {"core", {0.5, 0.5}}}},
              {"p", 1}};
  fs::path out = workdir() / "predictor";
  CHECK(run_cli("predictor", cfg, out) == 0);
  json s = summary_of(out);
  CHECK(s["is_screw"].get<bool>());
  CHECK(!s["trivial_fields"][0].get<bool>()); // u0 = u_CLE
  CHECK(s["trivial_fields"][1].get<bool>());  // S1 vanishes for sine
  std::string csv = slurp(out / "predictor.csv");
  CHECK(csv.substr(0, csv.find('\n')) == "r,theta,u0,u1,total");
}

TEST_CASE("cli study fits a convergence slope") {
  json cfg = {{"model", "triangular-pair"},
              {"defect", vacancy_defect()},
              {"scheme", "clamped"},
              {"radii", {4.0, 6.0}},
              {"reference_R", 18.0},
              {"gf_radius", 40.0},
              {"L", 512}};
  fs::path out = workdir() / "study";
  CHECK(run_cli("study", cfg, out) == 0);
  json s = summary_of(out);
  CHECK(s["fitted_slope"].get<double>() < 0.0);
  std::string csv = slurp(out / "study.csv");
  CHECK(csv.substr(0, csv.find('\n')) == "R,error");
}
