#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

#include "qsgd/rng.hpp"

namespace qsgd {

// Power-law data spectrum: eigenvalue i of the (diagonal) covariance is
// (i+1)^(-a) for 0-based i. The covariance eigenbasis is fixed to the
// standard basis; the Gaussian sketch is rotation invariant, so this loses
// no generality and keeps data sampling O(p).
struct PowerLawSpectrum {
  int dimension = 0;
  double exponent = 0.0;
  Eigen::VectorXd eigenvalues;

  double trace() const { return eigenvalues.sum(); }
};

inline PowerLawSpectrum make_spectrum(int p, double a) {
  if (p < 1) throw std::invalid_argument("make_spectrum: dimension must be >= 1");
  if (a <= 1.0) throw std::invalid_argument("make_spectrum: exponent must be > 1");
  PowerLawSpectrum s;
  s.dimension = p;
  s.exponent = a;
  s.eigenvalues.resize(p);
  for (int i = 0; i < p; ++i) s.eigenvalues[i] = std::pow(static_cast<double>(i + 1), -a);
  return s;
}

// Ground-truth linear model: optimum weights and observation noise level.
struct TargetModel {
  Eigen::VectorXd weights;
  double noise_sigma = 0.0;
};

// Weights are i.i.d. standard normal, so E[w w^T] = I matches the prior the
// risk formulas assume. Deterministic in the seed.
inline TargetModel sample_target(const PowerLawSpectrum& spectrum, double sigma,
                                 std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("sample_target: sigma must be >= 0");
  TargetModel t;
  t.noise_sigma = sigma;
  t.weights.resize(spectrum.dimension);
  Rng rng(derive_seed(seed, seed_tag::kTarget));
  for (int i = 0; i < spectrum.dimension; ++i) t.weights[i] = rng.normal();
  return t;
}

// Gaussian sketch with i.i.d. N(0, 1/M) entries, M rows by p columns.
struct SketchMatrix {
  int rows = 0;
  int cols = 0;
  Eigen::MatrixXd entries;
  std::uint64_t seed = 0;
};

inline SketchMatrix sample_sketch(int M, const PowerLawSpectrum& spectrum,
                                  std::uint64_t seed) {
  if (M < 1) throw std::invalid_argument("sample_sketch: M must be >= 1");
  if (M > spectrum.dimension)
    throw std::invalid_argument("sample_sketch: M must not exceed the data dimension");
  SketchMatrix s;
  s.rows = M;
  s.cols = spectrum.dimension;
  s.seed = seed;
  s.entries.resize(M, spectrum.dimension);
  Rng rng(derive_seed(seed, seed_tag::kSketch));
  const double scale = 1.0 / std::sqrt(static_cast<double>(M));
  // Row-major fill order so the layout of the random stream is documented.
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < spectrum.dimension; ++j) s.entries(i, j) = scale * rng.normal();
  return s;
}

// Immutable problem instance: shareable across workers; all sampling takes an
// explicit Rng.
struct ProblemInstance {
  PowerLawSpectrum spectrum;
  TargetModel target;
  SketchMatrix sketch;
  Eigen::VectorXd sqrt_eigenvalues;  // cached for x-sampling

  ProblemInstance(PowerLawSpectrum sp, TargetModel tg, SketchMatrix sk)
      : spectrum(std::move(sp)), target(std::move(tg)), sketch(std::move(sk)) {
    if (sketch.cols != spectrum.dimension ||
        target.weights.size() != spectrum.dimension)
      throw std::invalid_argument("ProblemInstance: inconsistent dimensions");
    sqrt_eigenvalues = spectrum.eigenvalues.cwiseSqrt();
  }

  int data_dim() const { return spectrum.dimension; }
  int model_dim() const { return sketch.rows; }
};

inline ProblemInstance make_instance(int p, double a, double sigma, int M,
                                     std::uint64_t seed) {
  PowerLawSpectrum sp = make_spectrum(p, a);
  TargetModel tg = sample_target(sp, sigma, seed);
  SketchMatrix sk = sample_sketch(M, sp, seed);
  return ProblemInstance(std::move(sp), std::move(tg), std::move(sk));
}

// Draws x with independent coordinates of variance lambda_i and
// y = <x, w*> + sigma * g.
inline void sample_example_into(const ProblemInstance& inst, Rng& rng,
                                Eigen::VectorXd& x, double& y) {
  const int p = inst.data_dim();
  x.resize(p);
  for (int i = 0; i < p; ++i) x[i] = inst.sqrt_eigenvalues[i] * rng.normal();
  y = x.dot(inst.target.weights);
  if (inst.target.noise_sigma > 0.0) y += inst.target.noise_sigma * rng.normal();
}

inline std::pair<Eigen::VectorXd, double> sample_example(const ProblemInstance& inst,
                                                         Rng& rng) {
  Eigen::VectorXd x;
  double y = 0.0;
  sample_example_into(inst, rng, x, y);
  return {std::move(x), y};
}

}  // namespace qsgd
