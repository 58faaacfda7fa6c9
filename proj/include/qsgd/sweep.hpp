#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "qsgd/csv.hpp"
#include "qsgd/engine.hpp"
#include "qsgd/fit.hpp"
#include "qsgd/problem.hpp"
#include "qsgd/quantize.hpp"
#include "qsgd/risk.hpp"
#include "qsgd/theory.hpp"

namespace qsgd {

using json = nlohmann::json;

namespace seed_tag {
inline constexpr std::uint64_t kSweepRun = 0x53574545ULL;
inline constexpr std::uint64_t kInstance = 0x494E5354ULL;
}

// Geometric grid between lo and hi inclusive.
inline std::vector<double> log_spaced(double lo, double hi, int count) {
  if (count < 2 || lo <= 0.0 || hi <= lo)
    throw std::invalid_argument("log_spaced: need count >= 2 and 0 < lo < hi");
  std::vector<double> out(count);
  const double step = (std::log(hi) - std::log(lo)) / (count - 1);
  for (int i = 0; i < count; ++i) out[i] = std::exp(std::log(lo) + step * i);
  out.front() = lo;
  out.back() = hi;
  return out;
}

struct ExperimentConfig {
  int p = 0;
  double a = 0.0;
  double sigma = 0.0;
  std::vector<int> m_grid;  // single entry unless the sweep axis is MEff
  QuantConfig quantization;
  double step_size = 0.1;
  std::vector<long> n_grid;               // raw-N mode
  std::vector<double> target_neff_grid;   // N_eff placement mode (default)
  FitAxis sweep_axis = FitAxis::NEff;
  BoundSide side = BoundSide::Upper;
  std::uint64_t base_seed = 0;
  int seed_count = 1;
  int workers = 0;  // 0 = hardware concurrency
  std::string output_dir;
  bool freeze_sketch_quantization = false;
  double divergence_factor = 1e12;
  double max_diverged_fraction = 0.2;
};

namespace detail {

inline std::vector<double> parse_grid_values(const json& node, const char* list_key,
                                             const char* range_key,
                                             const char* scalar_key) {
  std::vector<double> out;
  if (node.contains(list_key)) {
    for (const auto& v : node.at(list_key)) out.push_back(v.get<double>());
  } else if (node.contains(range_key)) {
    const auto& r = node.at(range_key);
    out = log_spaced(r.at("min").get<double>(), r.at("max").get<double>(),
                     r.at("count").get<int>());
  } else if (scalar_key != nullptr && node.contains(scalar_key)) {
    out.push_back(node.at(scalar_key).get<double>());
  }
  return out;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.p = j.at("spectrum").at("p").get<int>();
  c.a = j.at("spectrum").at("a").get<double>();
  c.sigma = j.at("noise_sigma").get<double>();

  const auto& sk = j.at("sketch");
  for (double v : detail::parse_grid_values(sk, "m_grid", "m_range", "m"))
    c.m_grid.push_back(static_cast<int>(std::lround(v)));
  if (c.m_grid.empty()) throw std::invalid_argument("config: sketch.m or sketch.m_grid required");

  const auto& q = j.at("quantization");
  for (int i = 0; i < kNumSites; ++i) {
    const char* key = site_name(static_cast<Site>(i));
    c.quantization.sites[i] = parse_scheme(q.at(key).get<std::string>());
  }

  const auto& sgd = j.at("sgd");
  c.step_size = sgd.at("step_size").get<double>();
  for (double v : detail::parse_grid_values(sgd, "n_grid", "n_range", "steps"))
    c.n_grid.push_back(static_cast<long>(std::llround(v)));
  c.target_neff_grid =
      detail::parse_grid_values(sgd, "target_neff_grid", "target_neff_range", "target_neff");
  if (sgd.contains("freeze_sketch_quantization"))
    c.freeze_sketch_quantization = sgd.at("freeze_sketch_quantization").get<bool>();
  if (sgd.contains("divergence_factor"))
    c.divergence_factor = sgd.at("divergence_factor").get<double>();

  if (c.n_grid.empty() == c.target_neff_grid.empty())
    throw std::invalid_argument("config: give exactly one of sgd.n_* and sgd.target_neff_*");

  const std::string axis = j.value("sweep_axis", std::string("neff"));
  if (axis == "neff")
    c.sweep_axis = FitAxis::NEff;
  else if (axis == "meff")
    c.sweep_axis = FitAxis::MEff;
  else
    throw std::invalid_argument("config: sweep_axis must be 'neff' or 'meff'");

  if (j.contains("theory") && j.at("theory").contains("side")) {
    const std::string side = j.at("theory").at("side").get<std::string>();
    if (side == "upper")
      c.side = BoundSide::Upper;
    else if (side == "lower")
      c.side = BoundSide::Lower;
    else
      throw std::invalid_argument("config: theory.side must be 'upper' or 'lower'");
  }

  c.base_seed = j.at("seeds").at("base").get<std::uint64_t>();
  c.seed_count = j.at("seeds").at("count").get<int>();
  if (c.seed_count < 1) throw std::invalid_argument("config: seeds.count must be >= 1");
  c.workers = j.value("workers", 0);
  c.output_dir = j.at("output_dir").get<std::string>();

  // Shape checks: exactly one axis varies.
  const std::size_t n_axis_len =
      c.n_grid.empty() ? c.target_neff_grid.size() : c.n_grid.size();
  if (c.sweep_axis == FitAxis::NEff) {
    if (c.m_grid.size() != 1)
      throw std::invalid_argument("config: neff sweep needs a single sketch.m");
    if (n_axis_len < 1) throw std::invalid_argument("config: empty N grid");
  } else {
    if (n_axis_len != 1)
      throw std::invalid_argument("config: meff sweep needs a single N / target_neff");
    if (c.m_grid.size() < 1) throw std::invalid_argument("config: empty M grid");
  }
  for (std::size_t i = 1; i < c.m_grid.size(); ++i)
    if (c.m_grid[i] <= c.m_grid[i - 1])
      throw std::invalid_argument("config: m_grid must be strictly increasing");
  for (std::size_t i = 1; i < c.n_grid.size(); ++i)
    if (c.n_grid[i] <= c.n_grid[i - 1])
      throw std::invalid_argument("config: n_grid must be strictly increasing");
  for (std::size_t i = 1; i < c.target_neff_grid.size(); ++i)
    if (c.target_neff_grid[i] <= c.target_neff_grid[i - 1])
      throw std::invalid_argument("config: target_neff_grid must be strictly increasing");
  return c;
}

// Canonical resolved form: scalar/range sugar is gone, keys are sorted by the
// JSON library, so equivalent configs serialize identically.
inline json config_to_json(const ExperimentConfig& c) {
  json q;
  for (int i = 0; i < kNumSites; ++i)
    q[site_name(static_cast<Site>(i))] = scheme_to_string(c.quantization.sites[i]);
  json sgd = {{"step_size", c.step_size},
              {"freeze_sketch_quantization", c.freeze_sketch_quantization},
              {"divergence_factor", c.divergence_factor}};
  if (!c.n_grid.empty()) sgd["n_grid"] = c.n_grid;
  if (!c.target_neff_grid.empty()) sgd["target_neff_grid"] = c.target_neff_grid;
  return json{{"spectrum", {{"p", c.p}, {"a", c.a}}},
              {"noise_sigma", c.sigma},
              {"sketch", {{"m_grid", c.m_grid}}},
              {"quantization", q},
              {"sgd", sgd},
              {"sweep_axis", axis_name(c.sweep_axis)},
              {"theory", {{"side", side_name(c.side)}}},
              {"seeds", {{"base", c.base_seed}, {"count", c.seed_count}}},
              {"workers", c.workers},
              {"output_dir", c.output_dir}};
}

// FNV-1a over the canonical serialization of the experiment identity
// (execution knobs like workers/output_dir excluded).
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  json identity = config_to_json(c);
  identity.erase("workers");
  identity.erase("output_dir");
  const std::string dump = identity.dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string hash_to_string(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// One resolved grid point: the sketch size, the raw step count, and the
// effective sizes and coefficients the theory assigns to it.
struct GridPoint {
  int index = 0;
  int m = 0;
  long n = 0;
  double m_eff = 0.0;
  double n_eff = 0.0;
  double eps2_upper = 0.0;
  double eps3_upper = 0.0;
  std::string family = "none";
  std::string side = "upper";
};

// Maps the configured grid to (M, N) pairs. With target-N_eff placement the
// raw N is obtained by inverting the effective-size formula per grid point
// (the additive coefficients depend on M, so N varies along an M sweep).
// Rounding-scheme configs have no sharp per-site eps; they require raw-N mode
// and report m_eff = M, n_eff = N.
inline std::vector<GridPoint> resolve_grid(const ExperimentConfig& c) {
  std::optional<Family> family;
  SiteEps eps{};
  try {
    auto fe = site_eps_from_config(c.quantization);
    family = fe.first;
    eps = fe.second;
  } catch (const std::invalid_argument&) {
    if (!c.target_neff_grid.empty())
      throw std::invalid_argument(
          "resolve_grid: target-N_eff placement needs exact quantization schemes; "
          "use sgd.n_grid");
  }

  const std::size_t count =
      c.sweep_axis == FitAxis::NEff
          ? (c.n_grid.empty() ? c.target_neff_grid.size() : c.n_grid.size())
          : c.m_grid.size();

  std::vector<GridPoint> grid(count);
  for (std::size_t i = 0; i < count; ++i) {
    GridPoint& g = grid[i];
    g.index = static_cast<int>(i);
    g.m = c.sweep_axis == FitAxis::MEff ? c.m_grid[i] : c.m_grid[0];
    if (!family) {
      g.n = c.n_grid[c.sweep_axis == FitAxis::NEff ? i : 0];
      g.m_eff = g.m;
      g.n_eff = static_cast<double>(g.n);
      continue;
    }
    CompoundCoefficients coeffs =
        compound_coefficients_sharp(*family, eps, c.p, g.m, c.a);
    if (!c.n_grid.empty()) {
      g.n = c.n_grid[c.sweep_axis == FitAxis::NEff ? i : 0];
    } else {
      const double target =
          c.target_neff_grid[c.sweep_axis == FitAxis::NEff ? i : 0];
      g.n = invert_n_eff(target, coeffs, c.a, c.side, c.step_size);
    }
    EffectiveSizes sizes = effective_sizes(coeffs, g.m, g.n, c.a, c.side, c.step_size);
    g.m_eff = sizes.m_eff;
    g.n_eff = sizes.n_eff;
    g.eps2_upper = coeffs.eps2_upper;
    g.eps3_upper = coeffs.eps3_upper;
    g.family = family_name(*family);
    g.side = side_name(c.side);
  }
  return grid;
}

struct RunRecord {
  std::uint64_t config_hash = 0;
  int grid_index = 0;
  int seed_index = 0;
  int m = 0;
  long n = 0;
  double m_eff = 0.0;
  double n_eff = 0.0;
  double excess = 0.0;  // R_M(vbar) - sigma^2/2, the quantity the scaling law fits
  double total_risk = 0.0;
  double irreducible = 0.0;
  double approximation = 0.0;
  double sgd_excess = 0.0;  // R_M(vbar) - R_M(v*)
  bool diverged = false;
  double wall_ms = 0.0;
};

// Problem instance plus the closed-form pieces every run at this (M, seed)
// shares: S H S^T and the sketched optimum.
struct InstanceBundle {
  ProblemInstance instance;
  Eigen::MatrixXd shs;
  Eigen::VectorXd v_star;

  InstanceBundle(const ExperimentConfig& c, int m, std::uint64_t instance_seed)
      : instance(make_instance(c.p, c.a, c.sigma, m, instance_seed)),
        shs(sketched_covariance(instance)),
        v_star(optimal_sketched(instance, shs)) {}
};

// One sketch/target draw per (M, seed index): an N-sweep evaluates the same
// instance at every grid point, so seed-level instance noise moves the whole
// curve coherently instead of scattering the points.
class InstanceCache {
 public:
  explicit InstanceCache(const ExperimentConfig& c) : config_(&c) {}

  std::shared_ptr<const InstanceBundle> get(int m, int seed_index) {
    const std::pair<int, int> key{m, seed_index};
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    if (cache_.size() >= 64) cache_.clear();  // bound the footprint of large sweeps
    const std::uint64_t seed =
        derive_seed(config_->base_seed, seed_tag::kInstance, static_cast<std::uint64_t>(m),
                    static_cast<std::uint64_t>(seed_index));
    auto bundle = std::make_shared<const InstanceBundle>(*config_, m, seed);
    cache_.emplace(key, bundle);
    return bundle;
  }

 private:
  const ExperimentConfig* config_;
  std::mutex mutex_;
  std::map<std::pair<int, int>, std::shared_ptr<const InstanceBundle>> cache_;
};

// Executes one (grid point, seed) cell: one SGD run plus the closed-form risk
// decomposition of its averaged iterate.
inline RunRecord execute_run(const ExperimentConfig& c, const GridPoint& g,
                             int seed_index, std::uint64_t hash, InstanceCache& cache) {
  const auto start = std::chrono::steady_clock::now();
  RunRecord r;
  r.config_hash = hash;
  r.grid_index = g.index;
  r.seed_index = seed_index;
  r.m = g.m;
  r.n = g.n;
  r.m_eff = g.m_eff;
  r.n_eff = g.n_eff;

  std::shared_ptr<const InstanceBundle> bundle = cache.get(g.m, seed_index);

  SGDConfig sgd;
  sgd.step_size = c.step_size;
  sgd.steps = g.n;
  sgd.seed = derive_seed(c.base_seed, seed_tag::kSweepRun,
                         static_cast<std::uint64_t>(g.index),
                         static_cast<std::uint64_t>(seed_index));
  sgd.divergence_factor = c.divergence_factor;
  sgd.freeze_sketch_quantization = c.freeze_sketch_quantization;
  TrajectoryResult traj = run_sgd(bundle->instance, c.quantization, sgd);

  if (traj.diverged) {
    r.diverged = true;
    r.excess = r.total_risk = r.approximation = r.sgd_excess = r.irreducible =
        std::numeric_limits<double>::quiet_NaN();
  } else {
    RiskBreakdown breakdown = decompose_risk(bundle->instance, traj.averaged_iterate,
                                             bundle->shs, bundle->v_star);
    r.total_risk = breakdown.total;
    r.irreducible = breakdown.irreducible;
    r.approximation = breakdown.approximation;
    r.sgd_excess = breakdown.excess;
    r.excess = breakdown.total - breakdown.irreducible;
  }
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                        start)
                  .count();
  return r;
}

inline void parallel_tasks(int workers, int count, const std::function<void(int)>& fn) {
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct SweepResult {
  std::vector<GridPoint> grid;
  std::vector<SweepPoint> points;
  std::optional<FitResult> fit;
  int diverged_runs = 0;
  int skipped_runs = 0;  // resumed from an earlier partial sweep
  std::vector<std::string> warnings;
  std::string output_dir;
};

namespace detail {

inline const std::vector<std::string>& run_columns() {
  static const std::vector<std::string> cols = {
      "config_hash", "grid_index", "seed_index", "M",          "N",
      "m_eff",       "n_eff",      "excess",     "total_risk", "irreducible",
      "approximation", "sgd_excess", "diverged", "wall_ms"};
  return cols;
}

inline std::vector<std::string> run_cells(const RunRecord& r) {
  return {hash_to_string(r.config_hash),
          std::to_string(r.grid_index),
          std::to_string(r.seed_index),
          std::to_string(r.m),
          std::to_string(r.n),
          format_double(r.m_eff),
          format_double(r.n_eff),
          format_double(r.excess),
          format_double(r.total_risk),
          format_double(r.irreducible),
          format_double(r.approximation),
          format_double(r.sgd_excess),
          r.diverged ? "1" : "0",
          format_double(r.wall_ms)};
}

inline std::map<std::pair<int, int>, RunRecord> load_completed_runs(
    const std::string& path, std::uint64_t hash) {
  std::map<std::pair<int, int>, RunRecord> out;
  if (!std::filesystem::exists(path)) return out;
  for (const CsvRow& row : read_csv(path)) {
    try {
      if (row.at("config_hash") != hash_to_string(hash)) continue;
      RunRecord r;
      r.config_hash = hash;
      r.grid_index = std::stoi(row.at("grid_index"));
      r.seed_index = std::stoi(row.at("seed_index"));
      r.m = std::stoi(row.at("M"));
      r.n = std::stol(row.at("N"));
      r.m_eff = std::stod(row.at("m_eff"));
      r.n_eff = std::stod(row.at("n_eff"));
      r.excess = std::stod(row.at("excess"));
      r.total_risk = std::stod(row.at("total_risk"));
      r.irreducible = std::stod(row.at("irreducible"));
      r.approximation = std::stod(row.at("approximation"));
      r.sgd_excess = std::stod(row.at("sgd_excess"));
      r.diverged = row.at("diverged") == "1";
      r.wall_ms = std::stod(row.at("wall_ms"));
      out[{r.grid_index, r.seed_index}] = r;
    } catch (const std::exception&) {
      // unparseable rows (foreign configs, partial writes) are simply re-run
    }
  }
  return out;
}

}  // namespace detail

// Runs the full sweep: every grid point x seed, resumable and deterministic
// (outputs are identical for any worker count because each run's randomness
// comes only from (base seed, grid index, seed index)). Writes runs.csv
// (per-run, appended and flushed as runs finish), points.csv (aggregates),
// fits.csv, plotdata.csv and config.json into the output directory.
inline SweepResult run_sweep(const ExperimentConfig& c) {
  SweepResult result;
  result.grid = resolve_grid(c);
  result.output_dir = c.output_dir;
  const std::uint64_t hash = config_hash(c);

  std::filesystem::create_directories(c.output_dir);
  const std::string runs_path = c.output_dir + "/runs.csv";
  const std::string points_path = c.output_dir + "/points.csv";
  const std::string fits_path = c.output_dir + "/fits.csv";
  const std::string plot_path = c.output_dir + "/plotdata.csv";

  {
    json echo = config_to_json(c);
    echo["config_hash"] = hash_to_string(hash);
    json grid_echo = json::array();
    for (const GridPoint& g : result.grid)
      grid_echo.push_back({{"index", g.index},
                           {"M", g.m},
                           {"N", g.n},
                           {"m_eff", g.m_eff},
                           {"n_eff", g.n_eff}});
    echo["resolved_grid"] = grid_echo;
    std::ofstream out(c.output_dir + "/config.json");
    out << echo.dump(2) << '\n';
  }

  auto completed = detail::load_completed_runs(runs_path, hash);
  result.skipped_runs = static_cast<int>(completed.size());

  const int n_grid = static_cast<int>(result.grid.size());
  const int total = n_grid * c.seed_count;
  std::vector<RunRecord> records(total);
  std::vector<char> have(total, 0);

  std::vector<int> pending;
  for (int g = 0; g < n_grid; ++g) {
    for (int s = 0; s < c.seed_count; ++s) {
      const int slot = g * c.seed_count + s;
      auto it = completed.find({g, s});
      if (it != completed.end()) {
        records[slot] = it->second;
        have[slot] = 1;
      } else {
        pending.push_back(slot);
      }
    }
  }

  const bool fresh_runs_file = !std::filesystem::exists(runs_path);
  CsvWriter runs_writer(runs_path, detail::run_columns(), !fresh_runs_file);
  std::mutex write_mutex;
  InstanceCache cache(c);

  parallel_tasks(c.workers, static_cast<int>(pending.size()), [&](int task) {
    const int slot = pending[task];
    const int g = slot / c.seed_count;
    const int s = slot % c.seed_count;
    RunRecord r = execute_run(c, result.grid[g], s, hash, cache);
    {
      std::lock_guard<std::mutex> lock(write_mutex);
      runs_writer.row(detail::run_cells(r));
      records[slot] = r;
      have[slot] = 1;
    }
  });

  // Aggregate per grid point over non-diverged seeds, in seed order.
  int diverged = 0;
  for (int g = 0; g < n_grid; ++g) {
    SweepPoint pt;
    pt.m_eff = result.grid[g].m_eff;
    pt.n_eff = result.grid[g].n_eff;
    double sum = 0.0;
    std::vector<double> values;
    for (int s = 0; s < c.seed_count; ++s) {
      const RunRecord& r = records[g * c.seed_count + s];
      if (r.diverged) {
        ++diverged;
        continue;
      }
      values.push_back(r.excess);
      sum += r.excess;
    }
    pt.seeds = static_cast<int>(values.size());
    if (pt.seeds > 0) {
      pt.mean_excess = sum / pt.seeds;
      if (pt.seeds > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - pt.mean_excess) * (v - pt.mean_excess);
        pt.stderr_mean = std::sqrt(ss / (pt.seeds - 1) / pt.seeds);
      } else {
        pt.stderr_mean = std::numeric_limits<double>::quiet_NaN();
      }
    } else {
      pt.mean_excess = std::numeric_limits<double>::quiet_NaN();
      pt.stderr_mean = std::numeric_limits<double>::quiet_NaN();
    }
    result.points.push_back(pt);
  }
  result.diverged_runs = diverged;

  {
    CsvWriter points_writer(points_path,
                            {"grid_index", "M", "N", "m_eff", "n_eff", "eps2_upper",
                             "eps3_upper", "family", "side", "mean_excess", "stderr",
                             "seeds"});
    for (int g = 0; g < n_grid; ++g) {
      const GridPoint& gp = result.grid[g];
      const SweepPoint& pt = result.points[g];
      points_writer.row({std::to_string(gp.index), std::to_string(gp.m),
                         std::to_string(gp.n), format_double(gp.m_eff),
                         format_double(gp.n_eff), format_double(gp.eps2_upper),
                         format_double(gp.eps3_upper), gp.family, gp.side,
                         format_double(pt.mean_excess), format_double(pt.stderr_mean),
                         std::to_string(pt.seeds)});
    }
  }

  // Fit the swept axis when the data supports it.
  std::vector<SweepPoint> usable;
  for (const SweepPoint& pt : result.points)
    if (pt.seeds > 0 && pt.mean_excess > 0.0) usable.push_back(pt);
  if (usable.size() >= 5) {
    try {
      result.fit = fit_single_axis(usable, c.sweep_axis);
    } catch (const std::exception& e) {
      result.warnings.push_back(std::string("fit skipped: ") + e.what());
    }
  } else {
    result.warnings.push_back("fit skipped: fewer than 5 usable points");
  }

  if (result.fit) {
    const auto [alpha, beta] = theoretical_exponents(c.a);
    const double theory = c.sweep_axis == FitAxis::MEff ? alpha : beta;
    CsvWriter fits_writer(fits_path,
                          {"axis", "amplitude", "exponent", "floor", "r_squared",
                           "r_squared_linear", "theory_exponent", "abs_gap",
                           "points_used"});
    fits_writer.row({axis_name(result.fit->axis), format_double(result.fit->amplitude),
                     format_double(result.fit->exponent), format_double(result.fit->floor),
                     format_double(result.fit->r_squared),
                     format_double(result.fit->r_squared_linear), format_double(theory),
                     format_double(std::fabs(result.fit->exponent - theory)),
                     std::to_string(result.fit->points_used)});
  }

  {
    CsvWriter plot_writer(plot_path,
                          {"grid_index", "axis", "axis_value", "log10_axis",
                           "mean_excess", "log10_excess", "stderr", "fit_value",
                           "log10_fit"});
    for (int g = 0; g < n_grid; ++g) {
      const SweepPoint& pt = result.points[g];
      const double axis_value = c.sweep_axis == FitAxis::MEff ? pt.m_eff : pt.n_eff;
      const double fit_value =
          result.fit ? fit_prediction(*result.fit, axis_value)
                     : std::numeric_limits<double>::quiet_NaN();
      plot_writer.row({std::to_string(g), axis_name(c.sweep_axis),
                       format_double(axis_value), format_double(std::log10(axis_value)),
                       format_double(pt.mean_excess),
                       format_double(std::log10(pt.mean_excess)),
                       format_double(pt.stderr_mean), format_double(fit_value),
                       format_double(std::log10(fit_value))});
    }
  }

  if (total > 0 &&
      static_cast<double>(diverged) > c.max_diverged_fraction * total)
    throw std::runtime_error("run_sweep: more than " +
                             std::to_string(static_cast<int>(100 * c.max_diverged_fraction)) +
                             "% of runs diverged (step size too large?)");
  return result;
}

}  // namespace qsgd
