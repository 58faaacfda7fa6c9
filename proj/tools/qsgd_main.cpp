// qsgd command-line driver: sweep orchestration, verification suites,
// power-law fitting and effective-size evaluation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "qsgd/csv.hpp"
#include "qsgd/fit.hpp"
#include "qsgd/sweep.hpp"
#include "qsgd/theory.hpp"
#include "qsgd/verify.hpp"

namespace {

using nlohmann::json;

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json j;
  in >> j;
  return j;
}

// --set a.b.c=value overrides, value parsed as JSON when possible.
void apply_override(json& config, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("override must look like key.path=value: " + spec);
  std::string path = "/" + spec.substr(0, eq);
  for (auto& ch : path)
    if (ch == '.') ch = '/';
  const std::string raw = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // plain string
  }
  config[json::json_pointer(path)] = value;
}

int run_sweep_command(const std::string& config_path,
                      const std::vector<std::string>& overrides) {
  json j = load_json_file(config_path);
  for (const std::string& o : overrides) apply_override(j, o);
  qsgd::ExperimentConfig cfg = qsgd::config_from_json(j);
  qsgd::SweepResult result = qsgd::run_sweep(cfg);

  for (const std::string& w : result.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "sweep complete: " << result.points.size() << " grid points, "
            << result.skipped_runs << " resumed, " << result.diverged_runs
            << " diverged -> " << result.output_dir << "\n";
  if (result.fit) {
    const auto [alpha, beta] = qsgd::theoretical_exponents(cfg.a);
    const double theory = cfg.sweep_axis == qsgd::FitAxis::MEff ? alpha : beta;
    std::printf("fit: %s exponent %.4f (theory %.4f), floor %.3g, R2(log) %.5f\n",
                qsgd::axis_name(cfg.sweep_axis), result.fit->exponent, theory,
                result.fit->floor, result.fit->r_squared);
  }
  return 0;
}

int run_verify_command(const std::string& suite, const std::string& config_path,
                       std::string out_path) {
  std::uint64_t seed = 0;
  bool seed_set = false;
  if (!config_path.empty()) {
    json j = load_json_file(config_path);
    if (j.contains("seed")) {
      seed = j.at("seed").get<std::uint64_t>();
      seed_set = true;
    }
  }

  qsgd::VerifyReport report;
  if (suite == "moments")
    report = seed_set ? qsgd::verify_moments_suite(seed) : qsgd::verify_moments_suite();
  else if (suite == "spectra")
    report = seed_set ? qsgd::verify_spectra_suite(seed) : qsgd::verify_spectra_suite();
  else if (suite == "dynamics")
    report = seed_set ? qsgd::verify_dynamics_suite(seed) : qsgd::verify_dynamics_suite();
  else if (suite == "decomposition")
    report = seed_set ? qsgd::verify_decomposition_suite(seed)
                      : qsgd::verify_decomposition_suite();
  else
    throw std::runtime_error("unknown verify suite: " + suite);

  for (const qsgd::CheckLine& c : report.checks)
    std::printf("[%s] %s%s%s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(),
                c.detail.empty() ? "" : ": ", c.detail.c_str());

  if (out_path.empty()) out_path = "verify_" + suite + ".json";
  std::ofstream out(out_path);
  out << report.to_json().dump(2) << '\n';
  std::cout << (report.passed ? "PASS" : "FAIL") << " (" << out_path << ")\n";
  return report.passed ? 0 : 1;
}

int run_fit_command(const std::string& points_path, const std::string& axis_str,
                    const std::string& out_path) {
  const qsgd::FitAxis axis =
      axis_str == "meff" ? qsgd::FitAxis::MEff : qsgd::FitAxis::NEff;
  std::vector<qsgd::SweepPoint> points;
  for (const qsgd::CsvRow& row : qsgd::read_csv(points_path)) {
    qsgd::SweepPoint pt;
    pt.m_eff = std::stod(row.at("m_eff"));
    pt.n_eff = std::stod(row.at("n_eff"));
    pt.mean_excess = std::stod(row.at("mean_excess"));
    pt.stderr_mean = std::stod(row.at("stderr"));
    pt.seeds = std::stoi(row.at("seeds"));
    if (pt.seeds > 0 && pt.mean_excess > 0.0) points.push_back(pt);
  }
  qsgd::FitResult fit = qsgd::fit_single_axis(points, axis);

  json out = {{"axis", qsgd::axis_name(axis)},
              {"amplitude", fit.amplitude},
              {"exponent", fit.exponent},
              {"floor", fit.floor},
              {"r_squared", fit.r_squared},
              {"r_squared_linear", fit.r_squared_linear},
              {"points_used", fit.points_used}};
  std::cout << out.dump(2) << "\n";
  if (!out_path.empty()) {
    qsgd::CsvWriter w(out_path, {"axis", "amplitude", "exponent", "floor", "r_squared",
                                 "r_squared_linear", "points_used"});
    w.row({qsgd::axis_name(axis), qsgd::format_double(fit.amplitude),
           qsgd::format_double(fit.exponent), qsgd::format_double(fit.floor),
           qsgd::format_double(fit.r_squared), qsgd::format_double(fit.r_squared_linear),
           std::to_string(fit.points_used)});
  }
  return 0;
}

struct TheoryArgs {
  std::string family = "mult";
  std::string side = "upper";
  double eps = 0.0;
  std::vector<std::pair<std::string, double>> site_overrides;
  int m = 0;
  long n = 0;
  int p = 0;
  double a = 0.0;
  double gamma = 0.1;
};

int run_theory_command(const TheoryArgs& args) {
  const qsgd::Family family = args.family == "add" || args.family == "additive"
                                  ? qsgd::Family::Additive
                                  : qsgd::Family::Multiplicative;
  const qsgd::BoundSide side =
      args.side == "lower" ? qsgd::BoundSide::Lower : qsgd::BoundSide::Upper;

  qsgd::SiteEps eps{};
  eps.fill(args.eps);
  for (const auto& [name, value] : args.site_overrides) {
    bool matched = false;
    for (int i = 0; i < qsgd::kNumSites; ++i) {
      if (name == qsgd::site_name(static_cast<qsgd::Site>(i))) {
        eps[i] = value;
        matched = true;
      }
    }
    if (!matched) throw std::runtime_error("unknown site name: " + name);
  }

  const int p = args.p > 0 ? args.p : args.m;
  qsgd::CompoundCoefficients coeffs =
      qsgd::compound_coefficients_sharp(family, eps, p, args.m, args.a);
  qsgd::EffectiveSizes sizes =
      qsgd::effective_sizes(coeffs, args.m, args.n, args.a, side, args.gamma);
  qsgd::BoundEnvelope env = qsgd::bound_envelope(sizes, coeffs, 0.0, args.a, args.n);

  json out = {{"family", qsgd::family_name(family)},
              {"side", qsgd::side_name(side)},
              {"eps2_upper", coeffs.eps2_upper},
              {"eps3_upper", coeffs.eps3_upper},
              {"eps2_lower", coeffs.eps2_lower},
              {"eps3_lower", coeffs.eps3_lower},
              {"m_eff", sizes.m_eff},
              {"n_eff", sizes.n_eff},
              {"m_term", env.m_term},
              {"n_term", env.n_term},
              {"additive_error", env.additive_error}};
  if (side == qsgd::BoundSide::Lower)
    out["in_regime"] =
        qsgd::in_lower_bound_regime(coeffs, args.m, args.n, args.a, args.gamma);
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantized sketched-regression SGD: scaling-law simulation toolkit"};
  app.require_subcommand(1);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "run a configured experiment sweep");
  std::string sweep_config;
  std::vector<std::string> overrides;
  sweep->add_option("--config", sweep_config, "JSON experiment config")->required();
  sweep->add_option("--set", overrides, "override config entries, e.g. --set sgd.step_size=0.2");

  // verify
  auto* verify = app.add_subcommand("verify", "run a property-verification suite");
  std::string suite, verify_config, verify_out;
  verify->add_option("suite", suite, "moments | spectra | dynamics | decomposition")
      ->required();
  verify->add_option("--config", verify_config, "optional JSON with {\"seed\": ...}");
  verify->add_option("--out", verify_out, "JSON report path");

  // fit
  auto* fit = app.add_subcommand("fit", "fit a power law to aggregated sweep points");
  std::string points_path, axis_str = "neff", fit_out;
  fit->add_option("--points", points_path, "points.csv from a sweep")->required();
  fit->add_option("--axis", axis_str, "meff | neff")
      ->check(CLI::IsMember({"meff", "neff"}));
  fit->add_option("--out", fit_out, "optional fits.csv path");

  // theory
  auto* theory = app.add_subcommand("theory", "evaluate compound coefficients and effective sizes");
  TheoryArgs targs;
  std::vector<std::string> site_eps_raw;
  theory->add_option("--family", targs.family, "mult | add")->required();
  theory->add_option("--side", targs.side, "upper | lower");
  theory->add_option("--eps", targs.eps, "per-site eps applied to all seven sites")
      ->required();
  theory->add_option("--site-eps", site_eps_raw,
                     "per-site override, e.g. --site-eps data=1e-4");
  theory->add_option("--M", targs.m, "model size")->required();
  theory->add_option("--N", targs.n, "data size")->required();
  theory->add_option("--p", targs.p, "data dimension (additive family)");
  theory->add_option("--a", targs.a, "spectrum exponent")->required();
  theory->add_option("--gamma", targs.gamma, "step size (lower-bound regimes)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sweep->parsed()) return run_sweep_command(sweep_config, overrides);
    if (verify->parsed()) return run_verify_command(suite, verify_config, verify_out);
    if (fit->parsed()) return run_fit_command(points_path, axis_str, fit_out);
    if (theory->parsed()) {
      for (const std::string& raw : site_eps_raw) {
        const auto eq = raw.find('=');
        if (eq == std::string::npos)
          throw std::runtime_error("--site-eps needs name=value: " + raw);
        targs.site_overrides.emplace_back(raw.substr(0, eq),
                                          std::stod(raw.substr(eq + 1)));
      }
      return run_theory_command(targs);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
