#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fklab/diffusion.hpp"
#include "fklab/field.hpp"
#include "fklab/girsanov.hpp"

namespace fklab {

enum class Verdict { Pass, Fail, Inconclusive };
std::string_view to_string(Verdict v);
// Conjunction: any FAIL wins, then any INCONCLUSIVE.
Verdict combine(Verdict a, Verdict b);

struct HypothesisResult {
  std::string name;
  Verdict status = Verdict::Inconclusive;
  double margin = 0;  // worst slack; negative means violated
  std::vector<double> worst_point;
  std::string note;
};

struct VerdictRecord {
  std::string check;
  Verdict overall = Verdict::Inconclusive;
  std::vector<HypothesisResult> hypotheses;
  void add(HypothesisResult h);
};

std::string to_json(const VerdictRecord& r, int indent = 2);

// U(t, x) with the derivatives the audits need. Empty dt means time-independent.
struct C12Function {
  std::function<double(double, std::span<const double>)> value;
  std::function<double(double, std::span<const double>)> dt;
  std::function<void(double, std::span<const double>, std::span<double>)> grad;
  std::function<void(double, std::span<const double>, std::span<double>)> hessian;  // n*n row-major

  static C12Function zero();
  // coef |x|^2 / 2
  static C12Function quadratic(double coef);
  // gamma log sqrt(1 + |x|^2)
  static C12Function log_sqrt(double gamma);
  // sum_i coef_i x_i
  static C12Function linear(std::vector<double> coef);
};

// Pointwise audit box plus a log-spaced far-field ring family.
struct AuditGrid {
  double radius = 4;
  std::size_t points_per_axis = 41;
  std::size_t rings = 10;  // radii radius * 2^j, j = 1..rings
  std::size_t directions = 8;
  std::size_t time_points = 5;
  double tolerance = 1e-9;
};

struct GrowthCaseSpec {
  std::size_t dim = 1;
  double horizon = 1;
  // a(t, x), row-major n*n
  std::function<void(double, std::span<const double>, std::span<double>)> diffusion;
  C12Function U, U_diamond;
  StateFn U_star;    // >= 0
  DriftFn v_star;    // bounded perturbation, empty means zero
  double c = 0, kappa = 0;
  StateFn log_m_density;   // log density of m^U against Lebesgue (-inf allowed)
  StateFn log_r0_density;  // log density of R_0 against Lebesgue
  AuditGrid audit;

  static GrowthCaseSpec from_spec(const DiffusionSpec& spec);
};

// scriptU = |grad U|_a^2 / 2 - d_t U - Delta_a U / 2.
double script_U(const GrowthCaseSpec& cs, const C12Function& U, double t, std::span<const double> x);

struct ScriptH {
  double direct = 0;      // -d_t H + a grad U . grad H - Delta_a H / 2 + |grad H|_a^2 / 2, H = U_diamond - U
  double difference = 0;  // scriptU(U_diamond) - scriptU(U)
};
ScriptH script_H(const GrowthCaseSpec& cs, double t, std::span<const double> x);

struct KhasminskiiResult {
  double alpha = 0;
  double exp_moment = 1;
  double exp_moment_std_error = 0;
  double bound = 1;  // +inf when alpha >= 1
  std::size_t windows = 0, cells_used = 0;
  bool holds = false;
};

// Windows of tau (snapped to whole steps) tile [0, T]; cells of box condition on the start state.
KhasminskiiResult khasminskii_bound(const PathEnsemble& ensemble, const ScalarFn& W, double tau, const SpaceBox& box,
                                    std::size_t min_samples = 50);
// Deterministic limit for constant W: alpha = w tau exactly, moment e^{w tau}.
KhasminskiiResult khasminskii_constant(double w, double tau);

struct KatoInput {
  StateFn W;
  std::size_t dim = 3;
  std::vector<std::vector<double>> singular_points;
  std::vector<std::vector<double>> probes;  // extra probe points
};

struct KatoOptions {
  std::vector<double> alphas;  // decreasing; default 2^-j, j = 0..12
  double threshold = 1e-2;
  double abs_tol = 1e-6;
  std::size_t far_probes = 8;  // probes at 1.5 * 2^j, j = 0..far_probes-1, along each axis
};

struct KatoRecord {
  Verdict verdict = Verdict::Inconclusive;
  std::vector<double> alphas, sup_values;
  std::vector<double> worst_probe;
  bool divergent = false, unbounded = false;
  std::string note;
};

// int_{|z| <= alpha} G(z) |W(x + z)| dz with G = |z|^{2-n} (n != 2), log(1/|z|) (n = 2).
double kato_integral(const KatoInput& in, std::span<const double> x, double alpha, double abs_tol = 1e-6);
KatoRecord kato_check_brownian(const KatoInput& in, const KatoOptions& opts = {});

struct Thm30Problem {
  StateFn f0, gT;
  ScalarFn V;
};

VerdictRecord growth_check_thm30(const GrowthCaseSpec& cs, const Thm30Problem& p);

struct Thm32Inputs {
  StateFn h0, hT;
  StateFn log_h0, log_hT;  // optional; used in place of log h0, log hT where those underflow
  StateFn W;               // Kato candidate
  double p = 2;    // in [1, inf]
  std::optional<KatoRecord> kato;  // computed from W when absent (constant a only)
  bool assume_kato = false;        // for non-constant a
};

VerdictRecord growth_check_thm32(const GrowthCaseSpec& cs, const Thm30Problem& p, const Thm32Inputs& in);

struct DomainGuard {
  bool pass = false;
  double mean = 0, std_error = 0, half_mean = 0;
  double relative_change = 0;
  bool exp_integrable = true;
  std::string note;
};

// P-weighted mean of W0(X_0), compared between the first half of paths and all of them.
DomainGuard entropy_domain_guard(const WeightedEnsemble& weighted, const StateFn& W0, bool exp_integrable = true);

}  // namespace fklab
