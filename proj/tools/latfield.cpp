#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latfield/defect_solver.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace latfield;

namespace {

constexpr const char *kVersion = "0.1.0";

//! Shortest round-trip decimal representation (bit-exact across reruns).
std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_file(const fs::path &p, const std::string &text) {
  std::ofstream out(p, std::ios::binary);
  if (!out)
    throw ConfigInvalid("cannot write " + p.string());
  out << text;
}

void check_keys(const json &cfg, const std::set<std::string> &allowed,
                const std::string &where) {
  if (!cfg.is_object())
    throw ConfigInvalid(where + ": expected a JSON object");
  for (auto it = cfg.begin(); it != cfg.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigInvalid(where + ": unknown key \"" + it.key() + "\"");
}

double num(const json &cfg, const std::string &key, double dflt) {
  if (!cfg.contains(key))
    return dflt;
  if (!cfg[key].is_number())
    throw ConfigInvalid("key \"" + key + "\" must be a number");
  return cfg[key].get<double>();
}

double req_num(const json &cfg, const std::string &key) {
  if (!cfg.contains(key))
    throw ConfigInvalid("missing required key \"" + key + "\"");
  return num(cfg, key, 0);
}

SitePotentialPtr model_from(const json &cfg) {
  if (!cfg.contains("model") || !cfg["model"].is_string())
    throw ConfigInvalid("config needs a \"model\" string");
  std::map<std::string, double> params;
  if (cfg.contains("params")) {
    if (!cfg["params"].is_object())
      throw ConfigInvalid("\"params\" must be an object of numbers");
    for (auto it = cfg["params"].begin(); it != cfg["params"].end(); ++it) {
      if (!it.value().is_number())
        throw ConfigInvalid("param \"" + it.key() + "\" must be a number");
      params[it.key()] = it.value().get<double>();
    }
  }
  return make_model(cfg["model"].get<std::string>(), params);
}

DefectModelPtr defect_from(const json &cfg, SitePotentialPtr host) {
  if (!cfg.contains("defect"))
    return nullptr;
  const json &d = cfg["defect"];
  check_keys(d, {"radius", "removed", "misfit"}, "defect");
  DefectSpec spec;
  spec.defectRadius = num(d, "radius", 3.0);
  spec.misfit = num(d, "misfit", 0.1);
  if (d.contains("removed")) {
    if (!d["removed"].is_array())
      throw ConfigInvalid("defect.removed must be an array of sites");
    for (const auto &entry : d["removed"]) {
      if (!entry.is_array() || int(entry.size()) != host->lattice().d())
        throw ConfigInvalid("defect.removed entries must be integer d-tuples");
      Site n(host->lattice().d());
      for (int i = 0; i < n.size(); ++i)
        n[i] = entry[i].get<int>();
      spec.removed.push_back(n);
    }
  }
  return make_defect_model(host, spec);
}

bool screw_from(const json &cfg, ScrewSpec &spec) {
  if (!cfg.contains("screw"))
    return false;
  const json &s = cfg["screw"];
  check_keys(s, {"burgers", "core"}, "screw");
  spec.burgers = num(s, "burgers", 1.0);
  if (s.contains("core")) {
    if (!s["core"].is_array() || s["core"].size() != 2)
      throw ConfigInvalid("screw.core must be a 2-vector");
    spec.core = Eigen::Vector2d(s["core"][0].get<double>(),
                                s["core"][1].get<double>());
  }
  return true;
}

std::string shells_csv(const std::vector<Shell> &shells) {
  std::string csv = "radius,value,count\n";
  for (const auto &s : shells)
    csv += fmt(s.radius) + "," + fmt(s.value) + "," +
           std::to_string(s.count) + "\n";
  return csv;
}

json fit_json(const SlopeFit &fit) {
  return {{"slope", fit.slope},
          {"intercept", fit.intercept},
          {"stderror", fit.stderror},
          {"points", fit.points},
          {"log_deflation", fit.logDeflation}};
}

const std::set<std::string> kCommon = {"command", "model",  "params",
                                       "seed",    "threads", "out"};

std::set<std::string> with_common(std::set<std::string> extra) {
  extra.insert(kCommon.begin(), kCommon.end());
  return extra;
}

struct RunResult {
  json summary;
  json metadata; // tolerances / extrapolation info for the manifest
};

RunResult cmd_validate(const json &cfg, const fs::path &) {
  check_keys(cfg, with_common({"trials", "grid"}), "config");
  auto V = model_from(cfg);
  int trials = int(num(cfg, "trials", 20));
  int grid = int(num(cfg, "grid", 32));
  unsigned seed = unsigned(num(cfg, "seed", 0));
  SymmetryReport sym = validate_symmetry(*V, trials, seed);
  double c0 = stability_constant(*V, grid);
  CauchyBornTensors cb = cauchy_born(*V);
  RunResult res;
  res.summary = {{"model", V->name()},
                 {"symmetry_pass", sym.pass},
                 {"symmetry_max_residual", sym.maxResidual},
                 {"c0", c0},
                 {"legendre_hadamard_min", cb.legendreHadamardMin()}};
  res.metadata = {{"trials", trials}, {"stability_grid", grid}};
  return res;
}

RunResult cmd_greens(const json &cfg, const fs::path &out) {
  check_keys(cfg, with_common({"L", "radius", "cache"}), "config");
  auto V = model_from(cfg);
  int L = int(req_num(cfg, "L"));
  double radius = req_num(cfg, "radius");
  std::string cache =
      cfg.contains("cache") ? cfg["cache"].get<std::string>() : "";
  LatticeGreens G = compute_lattice_green(V, radius, L, cache);

  const Lattice &lat = G.lattice();
  const int d = lat.d(), N = lat.ncomp();
  std::string csv;
  for (int a = 0; a < d; ++a)
    csv += "n" + std::to_string(a + 1) + ",";
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      csv += "G" + std::to_string(i + 1) + std::to_string(j + 1);
      csv += (i == N - 1 && j == N - 1) ? "\n" : ",";
    }
  for (int m = 0; m < G.window().size(); ++m) {
    const Site &n = G.window().site(m);
    for (int a = 0; a < d; ++a)
      csv += std::to_string(n[a]) + ",";
    const Eigen::MatrixXd &val = G.valueAt(m);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        csv += fmt(val(i, j));
        csv += (i == N - 1 && j == N - 1) ? "\n" : ",";
      }
  }
  write_file(out / "greens.csv", csv);

  RunResult res;
  res.summary = {{"model", V->name()},
                 {"L", L},
                 {"radius", radius},
                 {"window_sites", G.window().size()}};
  Site e1 = Site::Zero(d);
  e1[0] = 1;
  res.summary["diff_e1"] = (G.value(e1) - G.value(Site::Zero(d)))(0, 0);
  res.metadata = {{"richardson_gap", G.richardsonGap()},
                  {"calibration_residual", G.calibrationResidual()}};
  return res;
}

RunResult cmd_kernels(const json &cfg, const fs::path &out) {
  check_keys(cfg, with_common({"L", "radius", "p", "j", "samples_per_shell"}),
             "config");
  auto V = model_from(cfg);
  int L = int(req_num(cfg, "L"));
  double radius = req_num(cfg, "radius");
  int p = int(num(cfg, "p", 0));
  int j = int(num(cfg, "j", 0));
  int samples = int(num(cfg, "samples_per_shell", 32));
  LatticeGreens G = compute_lattice_green(V, radius, L);
  ContinuumKernels kernels(V);
  ExpansionTable table = expansion_error_table(G, kernels, p, j, samples);
  write_file(out / "kernels.csv", shells_csv(table.shells));
  RunResult res;
  res.summary = {{"model", V->name()},
                 {"p", p},
                 {"j", j},
                 {"fit", fit_json(table.fit)}};
  res.metadata = {{"L", L},
                  {"radius", radius},
                  {"samples_per_shell", samples},
                  {"richardson_gap", G.richardsonGap()}};
  return res;
}

//! Clamped relaxation shared by the moments and solve commands.
SolveReport relax(const CellProblem &prob, const json &cfg, bool augmented) {
  SolveOptions opts;
  opts.gtol = num(cfg, "gtol", 1e-9);
  opts.maxIterations = int(num(cfg, "max_iterations", 100));
  return augmented ? solve_augmented(prob, opts) : solve_clamped(prob, opts);
}

RunResult cmd_moments(const json &cfg, const fs::path &out) {
  check_keys(cfg,
             with_common({"defect", "R", "Rout", "jmax", "fit_radius",
                          "tail_tol", "gtol", "max_iterations"}),
             "config");
  auto V = model_from(cfg);
  auto def = defect_from(cfg, V);
  if (!def)
    throw ConfigInvalid("moments command needs a defect");
  CellSpec cs;
  cs.model = V;
  cs.defect = def;
  cs.R = req_num(cfg, "R");
  cs.Rout = num(cfg, "Rout", 0);
  CellProblem prob(cs);
  SolveReport rep = relax(prob, cfg, false);

  int jmax = int(num(cfg, "jmax", 1));
  double fitRadius = num(cfg, "fit_radius", cs.R / 2.0);
  double tailTol = num(cfg, "tail_tol", 1e-4);
  const Lattice &lat = V->lattice();
  auto u = [&](const Site &n) { return prob.correction(rep.dofs, n); };
  auto f = [&](const Site &n) { return apply_H(*V, u, n); };
  auto moments = compute_moments(lat, f, jmax, fitRadius, tailTol);
  MultipoleCoeffs b = fit_coefficients(moments, lat);

  std::string csv = "j,k,index,moment,coefficient\n";
  for (int j = 0; j <= jmax; ++j) {
    SymIndexSet idx(lat.d(), j);
    for (int k = 0; k < lat.ncomp(); ++k)
      for (int c = 0; c < idx.size(); ++c) {
        std::string multi;
        for (int a : idx.index(c))
          multi += std::to_string(a + 1);
        csv += std::to_string(j) + "," + std::to_string(k + 1) + "," +
               (multi.empty() ? "0" : multi) + "," +
               fmt(moments[j].value[k].coeff(c)) + "," +
               fmt(b.coeff[j][k].coeff(c)) + "\n";
      }
  }
  write_file(out / "moments.csv", csv);

  RunResult res;
  res.summary = {{"model", V->name()},
                 {"converged", rep.converged},
                 {"iterations", rep.iterations},
                 {"energy", rep.energy},
                 {"jmax", jmax}};
  json tails = json::array();
  for (const auto &m : moments)
    tails.push_back(m.tailEstimate);
  res.metadata = {{"fit_radius", fitRadius},
                  {"tail_tol", tailTol},
                  {"tail_estimates", tails},
                  {"gtol", num(cfg, "gtol", 1e-9)}};
  return res;
}

RunResult cmd_predictor(const json &cfg, const fs::path &out) {
  check_keys(cfg, with_common({"screw", "p", "R0", "rmax"}), "config");
  auto V = model_from(cfg);
  ScrewSpec spec;
  bool isScrew = screw_from(cfg, spec);
  int p = int(num(cfg, "p", 0));
  double R0 = num(cfg, "R0", 4.0);
  PredictorStack stack =
      assemble_predictor(V, p, isScrew ? &spec : nullptr, R0);

  double rmax = num(cfg, "rmax", 64.0);
  std::string csv = "r,theta";
  for (int i = 0; i <= p; ++i)
    csv += ",u" + std::to_string(i);
  csv += ",total\n";
  for (int ir = 0; ir < 16; ++ir) {
    double r = R0 * std::pow(rmax / R0, ir / 15.0);
    for (int ia = 0; ia < 8; ++ia) {
      double th = 2 * M_PI * (ia + 0.5) / 8;
      Eigen::Vector2d x(r * std::cos(th), r * std::sin(th));
      csv += fmt(r) + "," + fmt(th);
      for (int i = 0; i <= p; ++i)
        csv += "," + fmt((*stack.fields[i])(x));
      csv += "," + fmt(stack.value(x)) + "\n";
    }
  }
  write_file(out / "predictor.csv", csv);

  json trivial = json::array();
  for (const auto &fld : stack.fields)
    trivial.push_back(is_zero_field(fld));
  RunResult res;
  res.summary = {{"model", V->name()},
                 {"order", stack.order},
                 {"is_screw", stack.isScrew},
                 {"inner_radius", stack.innerRadius},
                 {"trivial_fields", trivial}};
  res.metadata = {{"R0", R0}, {"rmax", rmax}};
  return res;
}

//! Builds the cell problem shared by the solve and study commands.
CellSpec cell_from(const json &cfg, SitePotentialPtr V, bool augmented,
                   std::shared_ptr<const LatticeGreens> &G) {
  CellSpec cs;
  cs.model = V;
  cs.defect = defect_from(cfg, V);
  ScrewSpec screw;
  if (screw_from(cfg, screw)) {
    int pPred = int(num(cfg, "predictor_order", 0));
    cs.predictor = std::make_shared<PredictorStack>(
        assemble_predictor(V, pPred, &screw));
  }
  if (augmented) {
    cs.multipoleOrders = int(num(cfg, "p", 1));
    if (!cfg.contains("gf_radius") || !cfg.contains("L"))
      throw ConfigInvalid("augmented mode needs gf_radius and L");
    if (!G)
      G = std::make_shared<LatticeGreens>(compute_lattice_green(
          V, req_num(cfg, "gf_radius"), int(req_num(cfg, "L"))));
    cs.greens = G;
  }
  return cs;
}

bool scheme_from(const json &cfg) {
  std::string s =
      cfg.contains("scheme") ? cfg["scheme"].get<std::string>() : "clamped";
  if (s == "clamped")
    return false;
  if (s == "augmented")
    return true;
  throw ConfigInvalid("scheme must be \"clamped\" or \"augmented\"");
}

const std::set<std::string> kCellKeys = {
    "defect", "screw", "predictor_order", "scheme", "p",
    "gf_radius", "L", "gtol", "max_iterations"};

RunResult cmd_solve(const json &cfg, const fs::path &out) {
  auto keys = kCellKeys;
  keys.insert("R");
  keys.insert("Rout");
  check_keys(cfg, with_common(keys), "config");
  auto V = model_from(cfg);
  bool augmented = scheme_from(cfg);
  std::shared_ptr<const LatticeGreens> G;
  CellSpec cs = cell_from(cfg, V, augmented, G);
  cs.R = req_num(cfg, "R");
  cs.Rout = num(cfg, "Rout", 0);
  CellProblem prob(cs);
  SolveReport rep = relax(prob, cfg, augmented);

  const Lattice &lat = V->lattice();
  const int d = lat.d(), N = lat.ncomp();
  std::string csv;
  for (int a = 0; a < d; ++a)
    csv += "n" + std::to_string(a + 1) + ",";
  for (int i = 0; i < N; ++i)
    csv += "w" + std::to_string(i + 1) + (i == N - 1 ? "\n" : ",");
  auto win = ball_window(lat, cs.R);
  for (int m = 0; m < win->size(); ++m) {
    const Site &n = win->site(m);
    if (cs.defect && cs.defect->isRemoved(n))
      continue;
    Eigen::VectorXd w = prob.correction(rep.dofs, n);
    for (int a = 0; a < d; ++a)
      csv += std::to_string(n[a]) + ",";
    for (int i = 0; i < N; ++i)
      csv += fmt(w[i]) + (i == N - 1 ? "\n" : ",");
  }
  write_file(out / "solution.csv", csv);

  RunResult res;
  res.summary = {{"model", V->name()},
                 {"scheme", augmented ? "augmented" : "clamped"},
                 {"R", cs.R},
                 {"converged", rep.converged},
                 {"iterations", rep.iterations},
                 {"grad_norm", rep.gradNorm},
                 {"energy", rep.energy}};
  if (augmented) {
    MultipoleCoeffs b = prob.fittedCoefficients(rep.dofs);
    json coeffs = json::array();
    for (int i = 1; i < b.order(); ++i)
      for (int k = 0; k < b.ncomp(); ++k)
        for (int c = 0; c < b.coeff[i][k].size(); ++c)
          coeffs.push_back({{"order", i},
                            {"k", k + 1},
                            {"value", b.coeff[i][k].coeff(c)}});
    res.summary["coefficients"] = coeffs;
  }
  res.metadata = {{"gtol", num(cfg, "gtol", 1e-9)},
                  {"max_iterations", int(num(cfg, "max_iterations", 100))}};
  return res;
}

RunResult cmd_study(const json &cfg, const fs::path &out) {
  auto keys = kCellKeys;
  keys.insert("radii");
  keys.insert("reference_R");
  keys.insert("reference_gtol");
  keys.insert("log_deflation");
  check_keys(cfg, with_common(keys), "config");
  auto V = model_from(cfg);
  StudySpec ss;
  ss.model = V;
  ss.defect = defect_from(cfg, V);
  ScrewSpec screw;
  if (screw_from(cfg, screw)) {
    int pPred = int(num(cfg, "predictor_order", 0));
    ss.predictor = std::make_shared<PredictorStack>(
        assemble_predictor(V, pPred, &screw));
  }
  ss.scheme = scheme_from(cfg) ? Scheme::Augmented : Scheme::Clamped;
  ss.multipoleOrders = int(num(cfg, "p", 1));
  if (!cfg.contains("radii") || !cfg["radii"].is_array())
    throw ConfigInvalid("study needs a \"radii\" array");
  for (const auto &r : cfg["radii"])
    ss.radii.push_back(r.get<double>());
  ss.referenceR = req_num(cfg, "reference_R");
  ss.gtol = num(cfg, "gtol", 1e-9);
  ss.referenceGtol = num(cfg, "reference_gtol", 1e-11);
  ss.logDeflation = int(num(cfg, "log_deflation", 0));
  if (!cfg.contains("gf_radius") || !cfg.contains("L"))
    throw ConfigInvalid("study needs gf_radius and L for the reference");
  ss.greens = std::make_shared<LatticeGreens>(compute_lattice_green(
      V, req_num(cfg, "gf_radius"), int(req_num(cfg, "L"))));

  ConvergenceStudy study = convergence_study(ss);
  std::string csv = "R,error\n";
  for (size_t i = 0; i < study.radii.size(); ++i)
    csv += fmt(study.radii[i]) + "," + fmt(study.errors[i]) + "\n";
  write_file(out / "study.csv", csv);

  RunResult res;
  res.summary = {{"model", V->name()},
                 {"scheme", ss.scheme == Scheme::Augmented ? "augmented"
                                                           : "clamped"},
                 {"fitted_slope", study.fit.slope},
                 {"fit", fit_json(study.fit)},
                 {"reference", study.reference}};
  res.metadata = {{"gtol", ss.gtol},
                  {"reference_gtol", ss.referenceGtol},
                  {"reference_R", ss.referenceR},
                  {"log_deflation", ss.logDeflation}};
  return res;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"lattice far-field characterization driver"};
  app.require_subcommand(1);
  std::string configPath, outDir = ".";
  int threads = 1;
  const std::vector<std::string> names = {
      "validate", "greens", "kernels", "moments",
      "predictor", "solve", "study"};
  std::string command;
  for (const auto &name : names) {
    CLI::App *sub = app.add_subcommand(name);
    sub->add_option("--config", configPath)->required();
    sub->add_option("--out", outDir);
    sub->add_option("--threads", threads);
    sub->callback([&command, name]() { command = name; });
  }
  CLI11_PARSE(app, argc, argv);

  auto t0 = std::chrono::steady_clock::now();
  json cfg;
  try {
    std::ifstream in(configPath);
    if (!in)
      throw ConfigInvalid("cannot open config: " + configPath);
    cfg = json::parse(in);
    if (cfg.contains("command") &&
        cfg["command"].get<std::string>() != command)
      throw ConfigInvalid("config command does not match CLI command");

    fs::path out(outDir);
    fs::create_directories(out);

    RunResult res;
    if (command == "validate")
      res = cmd_validate(cfg, out);
    else if (command == "greens")
      res = cmd_greens(cfg, out);
    else if (command == "kernels")
      res = cmd_kernels(cfg, out);
    else if (command == "moments")
      res = cmd_moments(cfg, out);
    else if (command == "predictor")
      res = cmd_predictor(cfg, out);
    else if (command == "solve")
      res = cmd_solve(cfg, out);
    else
      res = cmd_study(cfg, out);

    double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    json manifest = {{"command", command},
                     {"config", cfg},
                     {"versions", {{"latfield", kVersion}}},
                     {"metadata", res.metadata},
                     {"timings", {{"elapsed_seconds", elapsed}}}};
    write_file(out / "manifest.json", manifest.dump(2) + "\n");
    write_file(out / "summary.json", res.summary.dump(2) + "\n");
    return 0;
  } catch (const ConfigInvalid &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const json::exception &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const Error &e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  }
}
