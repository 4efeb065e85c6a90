#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tbss/model.hpp"

namespace tbss {

enum class SparsityPattern { one_off_diagonal, diagonal, random, brain_like, nonlinear_g };

struct NonlinearGParams {
  struct Triple {
    double alpha, beta, gamma;
  };
  std::vector<Triple> segments;
};

struct ScenarioSpec {
  std::string name;
  long p = 0;
  long T = 0;
  int q = 1;
  long block_size = 0;  // recommended b_T
  std::vector<double> relative_breaks;
  SparsityPattern pattern = SparsityPattern::one_off_diagonal;
  // Per segment: one magnitude per lag (the nonzero value scale of each lag block).
  std::vector<std::vector<double>> magnitudes;
  double noise_variance = 0.1;
  std::uint64_t seed = 0;
};

struct Scenario {
  ScenarioSpec spec;
  PiecewiseVarModel model;  // for nonlinear G this carries breaks and noise only
  std::optional<NonlinearGParams> nonlinear;
};

struct SimulationResult {
  TimeSeriesMatrix series;
  std::vector<std::string> warnings;
};

double companion_spectral_radius(const Matrix& transition);

std::vector<Matrix> rescale_spectral_radius(const std::vector<Matrix>& transitions, double target);

SimulationResult simulate_piecewise_var(const PiecewiseVarModel& model, long T, long burn_in,
                                        std::uint64_t seed);

// Series of length T with the regime switching at `break_point`.
TimeSeriesMatrix simulate_nonlinear_g(const NonlinearGParams& params, long p, long T,
                                      long break_point, std::uint64_t seed,
                                      double noise_variance = 0.01, long burn_in = 500);

// One noise-free step of the nonlinear map for segment parameters `g`.
Vector nonlinear_g_step(const NonlinearGParams::Triple& g, const Vector& x);

std::vector<std::string> scenario_names();
Scenario scenario_catalog(const std::string& name);

// Generates one replicate of a catalog scenario.
TimeSeriesMatrix simulate_scenario(const Scenario& sc, std::uint64_t seed, long burn_in = 500);

}  // namespace tbss
