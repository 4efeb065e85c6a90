#pragma once

#include <json.hpp>
#include <ostream>
#include <string>
#include <vector>

#include "tbss/evalkit.hpp"
#include "tbss/vargen.hpp"

namespace tbss::cli {

enum ExitCode { ok = 0, usage = 1, parse_error = 2, config_error = 3, pipeline_error = 4 };

inline constexpr int schema_version = 1;

nlohmann::json matrix_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

nlohmann::json truth_json(const PiecewiseVarModel& model, long T, const std::string& scenario,
                          std::uint64_t seed, bool nonlinear);
// Reads the transitions, breaks and noise of a truth document; T goes to `T_out`.
PiecewiseVarModel model_from_json(const nlohmann::json& j, long* T_out = nullptr);

nlohmann::json detect_json(const DetectReport& rep, std::uint64_t seed);
nlohmann::json benchmark_json(const BenchmarkReport& rep, std::uint64_t seed);

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tbss::cli
