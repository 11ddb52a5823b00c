#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fklab/conditions.hpp"
#include "fklab/diffusion.hpp"
#include "json.hpp"

namespace fklab {

using Json = nlohmann::ordered_json;

// Lookups that raise ConfigError naming the dotted key.
const Json& config_at(const Json& j, const std::string& where, const char* key);
double config_number(const Json& j, const std::string& where, const char* key);
double config_number(const Json& j, const std::string& where, const char* key, double fallback);
std::size_t config_count(const Json& j, const std::string& where, const char* key);
std::size_t config_count(const Json& j, const std::string& where, const char* key, std::size_t fallback);
std::string config_string(const Json& j, const std::string& where, const char* key, const std::string& fallback);
bool config_bool(const Json& j, const std::string& where, const char* key, bool fallback);
std::vector<double> config_vector(const Json& j, const std::string& where, const char* key);
std::vector<double> config_vector(const Json& j, const std::string& where, const char* key, std::size_t dim,
                                  double fallback);

// model: {dim, horizon, eps, drift{type: zero|ou|polynomial}, initial_law{type: point|gaussian|uniform|student_t}}
DiffusionSpec make_diffusion(const Json& model, const std::string& where = "model");

// Drift of the time-reversed reference when it is known in closed form (1-D): zero drift from a
// Gaussian or point law, and stationary OU. Empty otherwise.
std::function<double(double, double)> reversed_drift(const Json& model, const std::string& where = "model");

// {type: zero|constant|quadratic|coulomb|monomial|grid}
ScalarFn make_potential(const Json& spec, std::size_t dim, const std::string& where);
StateFn make_state_potential(const Json& spec, std::size_t dim, const std::string& where);

// {type: one|gaussian|indicator|grid}
StateFn make_boundary(const Json& spec, std::size_t dim, const std::string& where);

// Multilinear interpolation of values on a uniform lattice, clamped to the edge outside.
struct GridData {
  std::vector<double> lo, hi;
  std::vector<std::size_t> points;
  std::vector<double> values;  // last axis fastest
  double operator()(std::span<const double> x) const;
};
GridData make_grid_data(const Json& spec, std::size_t dim, const std::string& where);

struct GrowthCase {
  std::string name;
  int theorem = 30;
  GrowthCaseSpec spec;
  Thm30Problem problem;
  Thm32Inputs inputs;
  std::optional<Verdict> expect;
};

// Presets: "trivial", "brownian" (U = 0, U* = (n+1) log+|x|, Lebesgue R_0) and "ou"
// (U = k|x|^2/(2 eps) with m^U = e^{-2U} Leb and R_0 = N(0, eps/2k)). V, f0, gT, W override.
GrowthCase make_growth_case(const Json& spec, const std::string& where);

struct KatoCase {
  std::string name;
  KatoInput input;
  std::optional<Verdict> expect;
  std::optional<double> analytic;  // expected kato_integral at (probe, alpha)
  std::vector<double> analytic_point;
  double analytic_alpha = 1;
};

KatoCase make_kato_case(const Json& spec, const std::string& where);

std::optional<Verdict> parse_verdict(const Json& j, const std::string& where, const char* key);

}  // namespace fklab
