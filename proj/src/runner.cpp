#include "fklab/runner.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

#include "fklab/conditions.hpp"
#include "fklab/errors.hpp"
#include "fklab/feynman_kac.hpp"
#include "fklab/girsanov.hpp"
#include "fklab/hjb.hpp"
#include "fklab/pde_oracle.hpp"
#include "fklab/stochastic_calculus.hpp"

namespace fklab {

namespace fs = std::filesystem;

namespace {

struct Builtin {
  const char* name;
  const char* text;
};

// Generated from scenarios/*.json at configure time.
const Builtin kBuiltins[] = {
#include "builtin_scenarios.inc"
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string join(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot write " + p.string());
  os << s;
  if (!os) fail(ErrorCode::IoError, "write failed for " + p.string());
}

template <class W>
void write_with(const fs::path& p, W&& fn) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot write " + p.string());
  fn(os);
  if (!os) fail(ErrorCode::IoError, "write failed for " + p.string());
}

// Data artifacts must not depend on locale or on iostream precision.
Json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

struct Ctx {
  Json cfg;
  RunOptions opts;
  std::string scenario;
  std::uint64_t seed = 1;
  fs::path out;
  std::vector<GateResult> gates;
  Json summary = Json::object();
  Json timings = Json::object();

  bool has_model = false;
  FKProblem problem;
  std::size_t paths = 0, steps = 0;
  std::size_t min_samples = 50;
  std::shared_ptr<const PathEnsemble> ensemble;
  std::shared_ptr<const PathEnsemble> coarse;  // half-step companion for refinement gates
  SpaceBox box;
  std::optional<ScalarField> g_mc, f_mc, psi_mc;
  std::optional<PdeSolution> g_pde;
  std::optional<WeightedEnsemble> weighted;

  double scaled(const Json& j, const std::string& where, const char* key, double fallback) const {
    const double v = config_number(j, where, key, fallback);
    if (!(v > 0)) fail(ErrorCode::ConfigError, "config key '" + join(where, key) + "': tolerances must be positive");
    return v * opts.tolerance_scale;
  }

  void gate(std::string name, bool pass, double value, double threshold, std::string detail) {
    if (opts.log)
      *opts.log << (pass ? "PASS " : "FAIL ") << name << "  value=" << value << " threshold=" << threshold << "  "
                << detail << "\n";
    gates.push_back({std::move(name), pass, value, threshold, std::move(detail)});
  }

  template <class F>
  void stage(const char* name, F&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const Error& e) {
      throw Error(e.code(), std::string("stage '") + name + "': " + e.what());
    }
    timings[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opts.log) *opts.log << "stage " << name << " done\n";
  }
};

FKProblem make_problem(const Json& cfg) {
  FKProblem p;
  const Json& model = config_at(cfg, "", "model");
  p.spec = make_diffusion(model, "model");
  const std::size_t n = p.spec.dim;
  p.potential = make_potential(cfg.contains("potential") ? cfg.at("potential") : Json{{"type", "zero"}}, n, "potential");
  p.terminal = make_boundary(cfg.contains("terminal") ? cfg.at("terminal") : Json{{"type", "one"}}, n, "terminal");
  p.initial_weight = make_boundary(cfg.contains("initial_weight") ? cfg.at("initial_weight") : Json{{"type", "one"}}, n,
                                   "initial_weight");
  return p;
}

SpaceBox make_box(const Json& fields, const PathEnsemble& e, const std::string& where) {
  const std::size_t n = e.dim();
  const std::size_t cells = config_count(fields, where, "cells", 40);
  if (fields.contains("lo") || fields.contains("hi")) {
    SpaceBox b;
    b.lo = config_vector(fields, where, "lo", n, 0.0);
    b.hi = config_vector(fields, where, "hi", n, 0.0);
    b.cells.assign(n, cells);
    for (std::size_t a = 0; a < n; ++a)
      if (!(b.hi[a] > b.lo[a])) fail(ErrorCode::ConfigError, "config key '" + join(where, "hi") + "': must exceed lo");
    return b;
  }
  return auto_box(e, cells);
}

PdeGrid make_pde_grid(const Json& pde, const TimeGrid& time) {
  PdeGrid g;
  g.x_lo = config_number(pde, "pde", "x_lo", g.x_lo);
  g.x_hi = config_number(pde, "pde", "x_hi", g.x_hi);
  g.J = config_count(pde, "pde", "J", g.J);
  g.time = time;
  const std::string bc = config_string(pde, "pde", "boundary", "neumann");
  if (bc == "dirichlet") {
    g.left = g.right = BoundaryPolicy::Dirichlet;
    // Zero data at the far edges; the configured box keeps the solution negligible there.
    g.boundary = [](double, double) { return 0.0; };
  } else if (bc != "neumann") {
    fail(ErrorCode::ConfigError, "config key 'pde.boundary': expected neumann or dirichlet");
  }
  return g;
}

std::size_t knot_at(const TimeGrid& g, const Json& j, const std::string& where, const char* key, double fallback) {
  const double t = config_number(j, where, key, fallback);
  try {
    return g.knot_of(t);
  } catch (const Error&) {
    fail(ErrorCode::ConfigError, "config key '" + join(where, key) + "': time is not a grid knot");
  }
}

void ensure_simulated(Ctx& c) {
  if (c.ensemble) return;
  if (!c.has_model) fail(ErrorCode::ConfigError, "config key 'model': required by the configured checks");
  const Json& sim = config_at(c.cfg, "", "simulation");
  c.paths = config_count(sim, "simulation", "paths");
  c.steps = config_count(sim, "simulation", "steps");
  c.min_samples = config_count(c.cfg.contains("fields") ? c.cfg.at("fields") : Json::object(), "fields", "min_samples", 50);
  c.stage("simulate", [&] {
    const TimeGrid grid = TimeGrid::uniform(c.problem.spec.horizon, c.steps);
    c.ensemble = std::make_shared<PathEnsemble>(simulate(c.problem.spec, grid, c.paths, c.seed));
    c.box = make_box(c.cfg.contains("fields") ? c.cfg.at("fields") : Json::object(), *c.ensemble, "fields");
  });
}

void ensure_weights(Ctx& c) {
  ensure_simulated(c);
  if (c.weighted) return;
  c.stage("weights", [&] {
    c.weighted = fk_weights(c.problem, c.ensemble);
    c.summary["ess"] = num(c.weighted->ess);
    c.summary["killed"] = c.weighted->killed;
    c.summary["log_normalizer"] = num(c.weighted->log_normalizer);
  });
}

void ensure_fields(Ctx& c) {
  ensure_simulated(c);
  if (c.g_mc) return;
  c.stage("fk_fields", [&] {
    FieldOptions fo;
    fo.min_samples = c.min_samples;
    c.g_mc = fk_solve_backward(c.problem, *c.ensemble, c.box, fo);
    c.f_mc = fk_solve_forward(c.problem, *c.ensemble, c.box, fo);
    c.psi_mc = log_transform(*c.g_mc).psi;
    write_with(c.out / "g_mc.csv", [&](std::ostream& os) { write_csv(*c.g_mc, os); });
    write_with(c.out / "f_mc.csv", [&](std::ostream& os) { write_csv(*c.f_mc, os); });
    write_with(c.out / "psi_mc.csv", [&](std::ostream& os) { write_csv(*c.psi_mc, os); });
  });
}

bool ensure_pde(Ctx& c) {
  if (c.g_pde) return true;
  if (!c.cfg.contains("pde") || c.problem.spec.dim != 1) return false;
  ensure_simulated(c);
  c.stage("pde", [&] {
    const Json& pde = c.cfg.at("pde");
    const PdeGrid grid = make_pde_grid(pde, c.ensemble->grid());
    c.g_pde = solve_fk_backward(c.problem, grid);
    write_with(c.out / "g_pde.csv", [&](std::ostream& os) { write_csv(c.g_pde->field, os); });
    if (auto bt = reversed_drift(c.cfg.at("model"))) {
      const PdeSolution f = solve_fk_forward(c.problem, grid, bt);
      write_with(c.out / "f_pde.csv", [&](std::ostream& os) { write_csv(f.field, os); });
    }
    if (c.g_pde->checked_max_principle) c.summary["pde_max_principle"] = c.g_pde->max_principle;
  });
  return true;
}

std::optional<double> field_at(const ScalarField& f, std::size_t row, std::span<const double> x) {
  const auto r = f.interpolate(row, x);
  if (!r) return std::nullopt;
  return r->value;
}

// ---- gates -------------------------------------------------------------

void gate_closed_form(Ctx& c, const Json& j, const std::string& w, bool pde) {
  ensure_fields(c);
  if (pde && !ensure_pde(c)) fail(ErrorCode::ConfigError, "config key 'pde': required by gate " + w);
  const std::size_t k = knot_at(c.ensemble->grid(), j, w, "t", 0.0);
  const std::vector<double> x = config_vector(j, w, "x", c.problem.spec.dim, 0.0);
  const double exact = config_number(j, w, "value");
  const ScalarField& f = pde ? c.g_pde->field : *c.g_mc;
  const auto v = field_at(f, k, x);
  const std::string name = pde ? "pde_closed_form" : "g_closed_form";
  c.summary[name] = num(v ? *v : std::nan(""));
  if (pde) {
    const double tol = c.scaled(j, w, "abs_tol", 1e-4);
    const double err = v ? std::abs(*v - exact) : INFINITY;
    c.gate(name, err <= tol, err, tol, "absolute error against the closed form");
  } else {
    const double tol = c.scaled(j, w, "rel_tol", 0.02);
    const double err = v ? std::abs(*v - exact) / std::abs(exact) : INFINITY;
    c.gate(name, err <= tol, err, tol, "relative error against the closed form");
  }
}

void gate_pde_agreement(Ctx& c, const Json& j, const std::string& w) {
  ensure_fields(c);
  if (!ensure_pde(c)) fail(ErrorCode::ConfigError, "config key 'pde': required by gate " + w);
  const double k = c.scaled(j, w, "k", 3.0), slack = c.scaled(j, w, "slack", 1e-3);
  const double need = config_number(j, w, "min_fraction", 0.95);
  const ScalarField& mc = *c.g_mc;
  const ScalarField& pde = c.g_pde->field;
  std::size_t joint = 0, within = 0;
  std::vector<double> x(1);
  for (std::size_t r = 0; r < mc.rows(); ++r)
    for (std::size_t cell = 0; cell < mc.cells(); ++cell) {
      if (!mc.valid(r, cell)) continue;
      // Cell average of the PDE solution by Simpson's rule, to match the MC cell mean.
      const double xc = c.box.center(cell)[0], hw = 0.5 * c.box.width(0);
      double acc = 0;
      bool ok = true;
      const double wts[3] = {1, 4, 1};
      for (int s = 0; s < 3; ++s) {
        x[0] = xc + (s - 1) * hw;
        const auto v = field_at(pde, r, x);
        if (!v) ok = false;
        else acc += wts[s] * *v;
      }
      if (!ok) continue;
      ++joint;
      if (std::abs(mc.value(r, cell) - acc / 6) <= k * mc.std_error[mc.at(r, cell)] + slack) ++within;
    }
  const double frac = joint ? static_cast<double>(within) / static_cast<double>(joint) : 0.0;
  c.summary["pde_mc_fraction"] = frac;
  c.gate("pde_mc_agreement", frac >= need, frac, need, "share of cells with |mc - pde| <= k se + slack");
}

void gate_semigroup(Ctx& c, const Json& j, const std::string& w) {
  ensure_fields(c);
  const PathEnsemble& e = *c.ensemble;
  const std::size_t M = e.grid().steps();
  const std::size_t mid = knot_at(e.grid(), j, w, "mid", e.grid().time(M / 2));
  const double k = c.scaled(j, w, "k", 2.0);
  const double need = config_number(j, w, "min_fraction", 0.95);
  FieldSlice uT = c.g_mc->slice(M);
  std::vector<double> x(e.dim());
  for (std::size_t cell = 0; cell < uT.box.total_cells(); ++cell) {
    uT.box.center(cell, x);
    uT.values[cell] = c.problem.terminal(x);
    uT.std_error[cell] = 0;
    uT.mask[cell] = 1;
  }
  FieldOptions fo;
  fo.min_samples = c.min_samples;
  const SemigroupResult one = fk_semigroup_apply(c.problem, e, 0, M, uT, fo);
  const SemigroupResult half = fk_semigroup_apply(c.problem, e, mid, M, uT, fo);
  const SemigroupResult two = fk_semigroup_apply(c.problem, e, 0, mid, half.slice, fo);
  const SemigroupCheck chk = compare_slices(one.slice, two.slice, k);
  c.summary["semigroup_fraction"] = chk.fraction;
  c.summary["semigroup_joint_cells"] = chk.joint_cells;
  c.gate("semigroup", chk.joint_cells > 0 && chk.fraction >= need, chk.fraction, need,
         "one-stage vs two-stage within k pooled se");
}

ResidualOptions residual_options(const Ctx& c, const Json& j, const std::string& w, double def_tol) {
  ResidualOptions o;
  o.tolerance = c.scaled(j, w, "tolerance", def_tol);
  o.t_min = config_number(j, w, "t_min", 0.0);
  o.t_max = config_number(j, w, "t_max", 1e300);
  o.z_threshold = c.scaled(j, w, "z", 3.0);
  if (j.contains("times")) o.times = config_vector(j, w, "times");
  return o;
}

// One residual evaluation on a given ensemble; the PDE route is re-solved on its time grid.
ResidualReport residual_on(const Ctx& c, bool hjb, const std::string& source, const PathEnsemble& e,
                           std::shared_ptr<const PathEnsemble> shared, double h, const ResidualOptions& ro) {
  const WeightedEnsemble wt = fk_weights(c.problem, std::move(shared));
  const ScalarField mass = p_cell_mass(e, &wt, c.box);
  ScalarField g;
  if (source == "pde") {
    g = solve_fk_backward(c.problem, make_pde_grid(c.cfg.at("pde"), e.grid())).field;
  } else {
    FieldOptions fo;
    fo.min_samples = c.min_samples;
    g = fk_solve_backward(c.problem, e, c.box, fo);
  }
  // Only the knots that enter the summary need derivative estimates.
  std::vector<std::size_t> knots;
  for (double t : ro.times) knots.push_back(e.grid().knot_of(t));
  if (!hjb) {
    FkResidualInputs in;
    in.h = h;
    in.min_samples = c.min_samples;
    in.knots = knots;
    return fk_residual(g, c.problem, e, c.box, mass, in, ro);
  }
  const ScalarField psi = source == "pde" ? psi_from_pde(g).psi : log_transform(g).psi;
  const ScalarFn fn = field_function(psi);
  const DerivativeEstimate L = p_localized_derivative(fn, fn, c.problem, e, c.box, h, c.min_samples, Execution::Parallel, knots);
  ResidualReport r = hjb_residual(gradient_grid(psi), L.extrapolated, c.problem, mass, ro);
  r.h = h;
  r.steps = L.steps;
  return r;
}

void gate_residual(Ctx& c, const Json& j, const std::string& w, bool hjb) {
  ensure_simulated(c);
  const std::string source = config_string(j, w, "source", "pde");
  if (source != "pde" && source != "mc") fail(ErrorCode::ConfigError, "config key '" + join(w, "source") + "': pde or mc");
  if (source == "pde" && (!c.cfg.contains("pde") || c.problem.spec.dim != 1))
    fail(ErrorCode::ConfigError, "config key '" + join(w, "source") + "': the pde route needs a 1-D pde section");
  const double h = config_number(j, w, "h");
  const ResidualOptions ro = residual_options(c, j, w, 0.05);
  const std::string name = hjb ? "hjb_residual" : "fk_residual";
  ResidualReport fine = residual_on(c, hjb, source, *c.ensemble, c.ensemble, h, ro);
  write_with(c.out / (name + ".json"), [&](std::ostream& os) { write_json(fine, os); });
  write_with(c.out / (name + ".csv"), [&](std::ostream& os) { write_csv(fine, os); });
  c.summary[name] = {{"l1", num(fine.l1)}, {"scale_l1", num(fine.scale_l1)}, {"relative_l1", num(fine.relative_l1)},
                     {"pooled_std_error", num(fine.pooled_std_error)}, {"coverage", num(fine.coverage)}};
  c.gate(name, fine.pass, fine.relative_l1, ro.tolerance, "weighted L1 residual over weighted L1 scale");
  if (!config_bool(j, w, "refine", false)) return;
  // Coarse companion: half the steps and twice the bandwidth.
  const std::size_t M = c.ensemble->grid().steps();
  if (M % 2) fail(ErrorCode::ConfigError, "config key 'simulation.steps': refinement needs an even count");
  if (!c.coarse)
    c.coarse = std::make_shared<const PathEnsemble>(
        simulate(c.problem.spec, TimeGrid::uniform(c.problem.spec.horizon, M / 2), c.paths, c.seed ^ 0x5bd1e995u));
  const ResidualReport coarse = residual_on(c, hjb, source, *c.coarse, c.coarse, 2 * h, ro);
  const double k = c.scaled(j, w, "refine_k", 2.0);
  const double noise = std::hypot(coarse.pooled_std_error, fine.pooled_std_error);
  c.summary[name]["coarse_l1"] = num(coarse.l1);
  c.gate(name + "_refinement", refinement_decreases(coarse, fine, k), fine.l1, coarse.l1 + k * noise,
         "fine L1 against coarse L1 plus k noise");
}

// P-mass-weighted relative L2 of est against exact over bulk cells of the listed times.
double bulk_relative_l2(const VectorFieldEstimate& est, const ScalarField& mass, const std::vector<std::size_t>& knots,
                        double bulk, const std::function<void(double, std::span<const double>, std::span<double>)>& exact) {
  const std::size_t n = est.components;
  std::vector<double> x(est.box.dim()), ex(n);
  double num2 = 0, den2 = 0;
  for (std::size_t k : knots) {
    double mmax = 0;
    for (std::size_t cell = 0; cell < est.cells(); ++cell) mmax = std::max(mmax, mass.value(k, cell));
    for (std::size_t cell = 0; cell < est.cells(); ++cell) {
      const double m = mass.value(k, cell);
      if (!est.valid(k, cell) || m < bulk * mmax) continue;
      est.box.center(cell, x);
      exact(est.grid.time(k), x, ex);
      for (std::size_t a = 0; a < n; ++a) {
        const double d = est.value(k, cell, a) - ex[a];
        num2 += m * d * d;
        den2 += m * ex[a] * ex[a];
      }
    }
  }
  if (!(den2 > 0)) fail(ErrorCode::MaskCoverage, "no bulk cell with a nonzero reference value");
  return std::sqrt(num2 / den2);
}

std::vector<std::size_t> knots_for(const TimeGrid& g, const Json& j, const std::string& w) {
  std::vector<std::size_t> ks;
  for (double t : config_vector(j, w, "times")) {
    try {
      ks.push_back(g.knot_of(t));
    } catch (const Error&) {
      fail(ErrorCode::ConfigError, "config key '" + join(w, "times") + "': time is not a grid knot");
    }
  }
  return ks;
}

void gate_drift(Ctx& c, const Json& j, const std::string& w) {
  ensure_fields(c);
  ensure_weights(c);
  const double h = config_number(j, w, "h");
  ResidualOptions ro = residual_options(c, j, w, 0.1);
  const std::vector<std::size_t> ks = knots_for(c.ensemble->grid(), j, w);
  DerivativeOptions dopts;
  dopts.min_samples = c.min_samples;
  const DriftReport dr = drift_formula_check(c.problem.spec, gradient_grid(*c.psi_mc), *c.weighted, h, c.box, ro, dopts);
  write_with(c.out / "velocity_p.csv", [&](std::ostream& os) { write_csv(dr.lhs, os); });
  write_with(c.out / "drift_rhs.csv", [&](std::ostream& os) { write_csv(dr.rhs, os); });
  write_with(c.out / "drift_formula.json", [&](std::ostream& os) { write_json(dr.report, os); });
  const double need = config_number(j, w, "min_fraction", 0.9);
  c.summary["drift_within_fraction"] = num(dr.report.within_fraction);
  c.gate("drift_formula", dr.report.within_fraction >= need, dr.report.within_fraction, need,
         "share of valid cells with |v_P - (b + a grad psi)| <= z pooled se");
  if (j.contains("bridge")) {
    // Closed-form velocity of the Gaussian bridge tilt: (mu - x) / (s0^2 + T - t).
    const Json& b = j.at("bridge");
    const std::string bw = join(w, "bridge");
    const double mu = config_number(b, bw, "mu"), s0 = config_number(b, bw, "sigma0_sq");
    const double T = c.problem.spec.horizon, eps = config_number(c.cfg.at("model"), "model", "eps", 1.0);
    const double tol = c.scaled(b, bw, "tolerance", 0.1), bulk = config_number(b, bw, "bulk", 0.05);
    const ScalarField mass = p_cell_mass(*c.ensemble, &*c.weighted, c.box);
    const double rel = bulk_relative_l2(dr.lhs, mass, ks, bulk, [&](double t, std::span<const double> x, std::span<double> o) {
      for (std::size_t a = 0; a < x.size(); ++a) o[a] = eps * (mu - x[a]) / (s0 + eps * (T - t));
    });
    c.summary["velocity_relative_l2"] = num(rel);
    c.gate("velocity_closed_form", rel < tol, rel, tol, "bulk relative L2 of the P Nelson velocity");
  }
}

void gate_entropy(Ctx& c, const Json& j, const std::string& w) {
  ensure_fields(c);
  ensure_weights(c);
  const double tol = c.scaled(j, w, "tolerance", 0.05);
  const EntropyEstimate H = relative_entropy(*c.weighted);
  DecompositionOptions o;
  o.debias = config_bool(j, w, "debias", true);
  const EntropyDecomposition d = decompose_entropy(*c.weighted, *c.psi_mc, c.problem.spec, o);
  const double total = d.h0 + d.kinetic;
  const double rel = std::abs(H.value - total) / std::abs(H.value);
  c.summary["entropy"] = {{"pathwise", num(H.value)}, {"std_error", num(H.std_error)}, {"h0", num(d.h0)},
                          {"kinetic", num(d.kinetic)}, {"kinetic_raw", num(d.kinetic_raw)},
                          {"coverage", num(d.coverage)}};
  c.gate("entropy_decomposition", rel <= tol, rel, tol, "|H - (h0 + kinetic)| / H");
}

void gate_born(Ctx& c, const Json& j, const std::string& w) {
  ensure_weights(c);
  const std::size_t steps = config_count(j, w, "steps", c.ensemble->grid().steps());
  const std::size_t paths = config_count(j, w, "paths", c.paths);
  const double tv_max = c.scaled(j, w, "tv_max", 0.05);
  const TimeGrid grid = TimeGrid::uniform(c.problem.spec.horizon, steps);
  knot_at(grid, j, w, "t", 0.5);  // t must be a knot of both grids
  const std::size_t ke = knot_at(c.ensemble->grid(), j, w, "t", 0.5);
  SpaceBox box = c.box;
  box.cells.assign(box.dim(), config_count(j, w, "cells", 40));
  // f and g from an independent ensemble so their noise is not correlated with the P histogram.
  const PathEnsemble indep = simulate(c.problem.spec, grid, paths, c.seed ^ 0x9e3779b97f4a7c15ull);
  FieldOptions fo;
  fo.min_samples = c.min_samples;
  ScalarField g = fk_solve_backward(c.problem, indep, box, fo);
  ScalarField f = fk_solve_forward(c.problem, indep, box, fo);
  const BornResult r = born_marginal_check(*c.weighted, f, g, ke);
  c.summary["born"] = {{"tv", num(r.tv)}, {"noise_tv", num(r.noise_tv)}, {"coverage", num(r.coverage)}};
  c.gate("born", r.tv < tv_max, r.tv, tv_max, "TV between P_t and f_t g_t R_t histograms");
}

void gate_recovery(Ctx& c, const Json& j, const std::string& w) {
  ensure_simulated(c);
  const PathEnsemble& e = *c.ensemble;
  const double h = config_number(j, w, "h");
  const double tol = c.scaled(j, w, "tolerance", 0.1), bulk = config_number(j, w, "bulk", 0.05);
  const std::size_t n = e.dim();
  const ScalarField mass = p_cell_mass(e, nullptr, c.box);
  std::vector<std::size_t> ks;
  const std::size_t s = e.grid().steps_for(h);
  for (std::size_t k = 0; k + s <= e.grid().steps(); ++k) ks.push_back(k);
  DerivativeOptions o;
  o.min_samples = c.min_samples;
  VectorFieldEstimate Lx(e.grid(), c.box, n), Gxx(e.grid(), c.box, n);
  for (std::size_t a = 0; a < n; ++a) {
    const ScalarFn ua = [a](double, std::span<const double> x) { return x[a]; };
    const DerivativeEstimate L = forward_derivative(e, ua, h, c.box, Weighting::none(), o);
    const DerivativeEstimate G = carre_du_champ(e, ua, ua, h, c.box, Weighting::none(), o);
    for (std::size_t i = 0; i < L.extrapolated.values.size(); ++i) {
      Lx.values[i * n + a] = L.extrapolated.values[i];
      Lx.std_error[i * n + a] = L.extrapolated.std_error[i];
      Gxx.values[i * n + a] = G.extrapolated.values[i];
      Gxx.std_error[i * n + a] = G.extrapolated.std_error[i];
      Lx.mask[i] = L.extrapolated.mask[i] && (a == 0 || Lx.mask[i]);
      Gxx.mask[i] = G.extrapolated.mask[i] && (a == 0 || Gxx.mask[i]);
    }
    if (a == 0) {
      // Product identity on the quadratics u = x_0^2, v = (x_0 - 1)^2: L(uv) - u Lv - v Lu against Gamma(u, v).
      const ScalarFn qu = [](double, std::span<const double> x) { return x[0] * x[0]; };
      const ScalarFn qv = [](double, std::span<const double> x) { return (x[0] - 1) * (x[0] - 1); };
      const ScalarFn quv = [](double, std::span<const double> x) { return x[0] * x[0] * (x[0] - 1) * (x[0] - 1); };
      const ScalarField Lu = forward_derivative(e, qu, h, c.box, Weighting::none(), o).extrapolated;
      const ScalarField Lv = forward_derivative(e, qv, h, c.box, Weighting::none(), o).extrapolated;
      const ScalarField Luv = forward_derivative(e, quv, h, c.box, Weighting::none(), o).extrapolated;
      const ScalarField Guv = carre_du_champ(e, qu, qv, h, c.box, Weighting::none(), o).extrapolated;
      ScalarField res(e.grid(), c.box), scale(e.grid(), c.box);
      std::vector<double> x(n);
      for (std::size_t k = 0; k < res.rows(); ++k)
        for (std::size_t cell = 0; cell < res.cells(); ++cell) {
          const std::size_t i = res.at(k, cell);
          if (!Luv.mask[i] || !Lu.mask[i] || !Lv.mask[i] || !Guv.mask[i]) continue;
          c.box.center(cell, x);
          const double u = qu(0, x), v = qv(0, x);
          res.values[i] = Luv.values[i] - u * Lv.values[i] - v * Lu.values[i] - Guv.values[i];
          res.std_error[i] = std::sqrt(std::pow(Luv.std_error[i], 2) + std::pow(u * Lv.std_error[i], 2) +
                                       std::pow(v * Lu.std_error[i], 2) + std::pow(Guv.std_error[i], 2));
          res.samples[i] = Luv.samples[i];
          res.mask[i] = 1;
          scale.values[i] = std::abs(Guv.values[i]);
          scale.mask[i] = 1;
        }
      ResidualOptions ro;
      ro.tolerance = c.scaled(j, w, "product_tolerance", 0.05);
      const ResidualReport pr = summarize("product_identity", std::move(res), std::move(scale), mass, ro);
      c.summary["product_identity_relative_l1"] = num(pr.relative_l1);
      c.gate("product_identity", pr.pass, pr.relative_l1, ro.tolerance, "L(uv) - u Lv - v Lu against Gamma(u, v)");
    }
  }
  write_with(c.out / "generator_x.csv", [&](std::ostream& os) { write_csv(Lx, os); });
  write_with(c.out / "carre_xx.csv", [&](std::ostream& os) { write_csv(Gxx, os); });
  const DiffusionSpec& spec = c.problem.spec;
  const double rd = bulk_relative_l2(Lx, mass, ks, bulk, [&](double t, std::span<const double> x, std::span<double> o2) {
    spec.drift(t, x, o2);
  });
  const double ra = bulk_relative_l2(Gxx, mass, ks, bulk, [&](double t, std::span<const double> x, std::span<double> o2) {
    std::vector<double> a(n * n);
    spec.diffusion_matrix(t, x, a);
    for (std::size_t i = 0; i < n; ++i) o2[i] = a[i * n + i];
  });
  c.summary["drift_recovery_relative_l2"] = num(rd);
  c.summary["carre_recovery_relative_l2"] = num(ra);
  c.gate("drift_recovery", rd < tol, rd, tol, "bulk relative L2 of L x against b");
  c.gate("carre_recovery", ra < tol, ra, tol, "bulk relative L2 of Gamma(x_i, x_i) against a_ii");
}

// ---- conditions --------------------------------------------------------

void verdict_gate(Ctx& c, const std::string& name, Verdict got, std::optional<Verdict> expect, const std::string& detail) {
  const Verdict want = expect.value_or(Verdict::Pass);
  c.gate(name, got == want, got == Verdict::Pass ? 1 : (got == Verdict::Fail ? 0 : 0.5),
         want == Verdict::Pass ? 1 : (want == Verdict::Fail ? 0 : 0.5),
         std::string("verdict ") + std::string(to_string(got)) + ", expected " + std::string(to_string(want)) +
             (detail.empty() ? "" : "; " + detail));
}

void run_conditions(Ctx& c) {
  if (!c.cfg.contains("conditions")) return;
  const Json& cond = c.cfg.at("conditions");
  Json report = Json::object();
  if (cond.contains("khasminskii")) {
    const Json& list = cond.at("khasminskii");
    if (!list.is_array()) fail(ErrorCode::ConfigError, "config key 'conditions.khasminskii': expected an array");
    c.stage("khasminskii", [&] {
      Json arr = Json::array();
      for (std::size_t i = 0; i < list.size(); ++i) {
        const Json& q = list[i];
        const std::string w = "conditions.khasminskii[" + std::to_string(i) + "]";
        const std::string name = "khasminskii:" + config_string(q, w, "name", "case" + std::to_string(i));
        const double tau = config_number(q, w, "tau", 0.1);
        if (q.contains("sweep")) {
          // Constant W: alpha = w tau, checked exactly and on the ensemble.
          bool all = true;
          double worst = -INFINITY;
          for (double at : config_vector(q, w, "sweep")) {
            const KhasminskiiResult ex = khasminskii_constant(at / tau, tau);
            all = all && ex.holds;
            Json row = {{"alpha", num(ex.alpha)}, {"exact_moment", num(ex.exp_moment)}, {"bound", num(ex.bound)}};
            if (config_bool(q, w, "empirical", true)) {
              ensure_simulated(c);
              const double wv = at / tau;
              const KhasminskiiResult em = khasminskii_bound(
                  *c.ensemble, [wv](double, std::span<const double>) { return wv; }, tau, c.box, c.min_samples);
              all = all && em.holds;
              row["empirical_alpha"] = num(em.alpha);
              row["empirical_moment"] = num(em.exp_moment);
              worst = std::max(worst, em.exp_moment - em.bound);
            }
            arr.push_back(row);
          }
          c.gate(name, all, worst, 0, "exp moment <= 1/(1 - alpha) over the sweep");
        } else {
          ensure_simulated(c);
          const ScalarFn W = make_potential(config_at(q, w, "W"), c.problem.spec.dim, join(w, "W"));
          const KhasminskiiResult r = khasminskii_bound(*c.ensemble, W, tau, c.box, c.min_samples);
          arr.push_back({{"name", name}, {"alpha", num(r.alpha)}, {"exp_moment", num(r.exp_moment)},
                         {"std_error", num(r.exp_moment_std_error)}, {"bound", num(r.bound)}, {"holds", r.holds}});
          c.gate(name, r.holds, r.exp_moment, r.bound, "exp moment <= 1/(1 - alpha) within 3 se");
        }
      }
      report["khasminskii"] = arr;
    });
  }
  if (cond.contains("kato")) {
    const Json& list = cond.at("kato");
    if (!list.is_array()) fail(ErrorCode::ConfigError, "config key 'conditions.kato': expected an array");
    c.stage("kato", [&] {
      Json arr = Json::array();
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string w = "conditions.kato[" + std::to_string(i) + "]";
        const KatoCase kc = make_kato_case(list[i], w);
        const KatoRecord r = kato_check_brownian(kc.input);
        Json row = {{"name", kc.name}, {"verdict", std::string(to_string(r.verdict))}, {"note", r.note}};
        Json sups = Json::array();
        for (double v : r.sup_values) sups.push_back(num(v));
        row["sup_values"] = sups;
        std::string detail = r.note;
        if (kc.analytic) {
          const double got = kato_integral(kc.input, kc.analytic_point, kc.analytic_alpha);
          const double err = std::abs(got - *kc.analytic);
          row["analytic_error"] = num(err);
          const double tol = c.scaled(list[i], w, "analytic_tol", 1e-4);
          c.gate("kato_quadrature:" + kc.name, err <= tol, err, tol, "radial integral against the analytic value");
        }
        arr.push_back(row);
        verdict_gate(c, "kato:" + kc.name, r.verdict, kc.expect, detail);
      }
      report["kato"] = arr;
    });
  }
  if (cond.contains("growth")) {
    const Json& list = cond.at("growth");
    if (!list.is_array()) fail(ErrorCode::ConfigError, "config key 'conditions.growth': expected an array");
    c.stage("growth", [&] {
      Json arr = Json::array();
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string w = "conditions.growth[" + std::to_string(i) + "]";
        Json spec = list[i];
        // Cases inherit the scenario's own V and boundary data unless they set them.
        if (c.has_model && config_count(spec, w, "dim", 1) == c.problem.spec.dim) {
          if (!spec.contains("V") && c.cfg.contains("potential")) spec["V"] = c.cfg.at("potential");
          if (!spec.contains("gT") && c.cfg.contains("terminal")) spec["gT"] = c.cfg.at("terminal");
          if (!spec.contains("f0") && c.cfg.contains("initial_weight")) spec["f0"] = c.cfg.at("initial_weight");
        }
        const GrowthCase gc = make_growth_case(spec, w);
        const VerdictRecord r = gc.theorem == 30 ? growth_check_thm30(gc.spec, gc.problem)
                                                 : growth_check_thm32(gc.spec, gc.problem, gc.inputs);
        Json row = Json::parse(to_json(r, -1));
        row["name"] = gc.name;
        arr.push_back(row);
        std::string failing;
        for (const auto& h : r.hypotheses)
          if (h.status != Verdict::Pass) failing += (failing.empty() ? "" : ", ") + h.name + " " + std::string(to_string(h.status));
        verdict_gate(c, "growth:" + gc.name, r.overall, gc.expect, failing);
      }
      report["growth"] = arr;
    });
  }
  if (cond.contains("domain_guard")) {
    const Json& q = cond.at("domain_guard");
    const std::string w = "conditions.domain_guard";
    ensure_weights(c);
    const StateFn W0 = make_state_potential(config_at(q, w, "W0"), c.problem.spec.dim, join(w, "W0"));
    const DomainGuard d = entropy_domain_guard(*c.weighted, W0, config_bool(q, w, "exp_integrable", true));
    report["domain_guard"] = {{"pass", d.pass}, {"mean", num(d.mean)}, {"std_error", num(d.std_error)},
                              {"relative_change", num(d.relative_change)}, {"note", d.note}};
    const std::optional<Verdict> ex = parse_verdict(q, w, "expect");
    verdict_gate(c, "domain_guard", d.pass ? Verdict::Pass : Verdict::Fail, ex, d.note);
  }
  write_text(c.out / "conditions.json", report.dump(2) + "\n");
}

Ctx make_ctx(const Json& cfg, const RunOptions& opts) {
  if (!cfg.is_object()) fail(ErrorCode::ConfigError, "config: expected a JSON object");
  if (!(opts.tolerance_scale > 0)) fail(ErrorCode::InvalidArgument, "tolerance scale must be positive");
  Ctx c;
  c.cfg = cfg;
  c.opts = opts;
  c.scenario = config_string(cfg, "", "scenario", "unnamed");
  if (opts.seed) {
    c.seed = *opts.seed;
  } else if (cfg.contains("seed")) {
    const Json& s = cfg.at("seed");
    if (!s.is_number_unsigned()) fail(ErrorCode::ConfigError, "config key 'seed': expected a nonnegative integer");
    c.seed = s.get<std::uint64_t>();
  }
  c.cfg["seed"] = c.seed;
  if (opts.threads > 0) omp_set_num_threads(opts.threads);
  const std::string root = opts.output_root.empty() ? default_output_root() : opts.output_root;
  c.out = opts.out_dir.empty() ? fs::path(root) / c.scenario : fs::path(opts.out_dir);
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + c.out.string() + ": " + ec.message());
  c.has_model = cfg.contains("model");
  if (c.has_model) c.problem = make_problem(cfg);
  return c;
}

RunResult finish(Ctx& c, const char* mode) {
  bool all = true;
  Json gates = Json::array();
  for (const auto& g : c.gates) {
    all = all && g.pass;
    gates.push_back({{"name", g.name}, {"pass", g.pass}, {"value", num(g.value)}, {"threshold", num(g.threshold)},
                     {"detail", g.detail}});
  }
  RunResult r;
  r.exit_code = all ? 0 : 1;
  r.out_dir = c.out.string();
  r.gates = c.gates;
  r.summary = c.summary;
  write_text(c.out / "summary.json", c.summary.dump(2) + "\n");
  write_text(c.out / "gates.json", gates.dump(2) + "\n");
  write_text(c.out / "config.json", c.cfg.dump(2) + "\n");
  Json m = Json::object();
  m["tool"] = "fklab";
  m["version"] = FKLAB_VERSION;
  m["mode"] = mode;
  m["scenario"] = c.scenario;
  m["config_hash"] = hex64(config_hash(c.cfg));
  m["master_seed"] = c.seed;
  m["threads"] = omp_get_max_threads();
  m["tolerance_scale"] = c.opts.tolerance_scale;
  m["wall_seconds"] = c.timings;
  m["gates"] = gates;
  m["all_gates_pass"] = all;
  m["exit_code"] = r.exit_code;
  r.manifest = m;
  write_text(c.out / "manifest.json", m.dump(2) + "\n");
  return r;
}

}  // namespace

std::string default_output_root() {
  const char* env = std::getenv("FKLAB_OUTPUT_ROOT");
  return env && *env ? env : "fklab-out";
}

Json parse_config_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ConfigError, origin + ": " + e.what());
  }
}

Json load_config(const std::string& path_or_name) {
  std::error_code ec;
  if (fs::is_regular_file(path_or_name, ec)) {
    std::ifstream is(path_or_name, std::ios::binary);
    if (!is) fail(ErrorCode::IoError, "cannot read " + path_or_name);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), path_or_name);
  }
  for (const auto& b : kBuiltins)
    if (path_or_name == b.name) return builtin_config(b.name);
  fail(ErrorCode::ConfigError, "'" + path_or_name + "' is neither a readable file nor a built-in scenario");
}

std::vector<std::string> builtin_names() {
  std::vector<std::string> out;
  for (const auto& b : kBuiltins) out.emplace_back(b.name);
  return out;
}

Json builtin_config(const std::string& name) {
  for (const auto& b : kBuiltins)
    if (name == b.name) return parse_config_text(b.text, "built-in " + name);
  fail(ErrorCode::ConfigError, "unknown built-in scenario '" + name + "'");
}

std::vector<ScenarioInfo> list_scenarios(const std::string& user_dir) {
  std::vector<ScenarioInfo> out;
  for (const auto& b : kBuiltins) {
    const Json j = builtin_config(b.name);
    out.push_back({b.name, j.value("description", ""), j.value("anchors", ""), "built-in"});
  }
  std::error_code ec;
  if (user_dir.empty() || !fs::is_directory(user_dir, ec)) return out;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(user_dir, ec))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    try {
      const Json j = load_config(p.string());
      const std::string stem = p.stem().string();
      // The shipped scenario files are the built-ins themselves.
      const auto names = builtin_names();
      if (std::find(names.begin(), names.end(), stem) != names.end() && j == builtin_config(stem)) continue;
      out.push_back({j.value("scenario", p.stem().string()), j.value("description", ""), j.value("anchors", ""),
                     p.string()});
    } catch (const Error& e) {
      out.push_back({p.stem().string(), std::string("unreadable: ") + e.what(), "", p.string()});
    }
  }
  return out;
}

std::uint64_t config_hash(const Json& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : cfg.dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

RunResult run_scenario(const Json& cfg, const RunOptions& opts) {
  Ctx c = make_ctx(cfg, opts);
  if (c.has_model && c.cfg.contains("simulation")) {
    ensure_fields(c);
    ensure_pde(c);
    ensure_weights(c);
    c.stage("entropy", [&] {
      const EntropyEstimate H = relative_entropy(*c.weighted);
      c.summary["relative_entropy"] = {{"value", num(H.value)}, {"std_error", num(H.std_error)}};
    });
  }
  if (c.cfg.contains("gates")) {
    const Json& gates = c.cfg.at("gates");
    if (!gates.is_object()) fail(ErrorCode::ConfigError, "config key 'gates': expected an object");
    for (const auto& [key, j] : gates.items()) {
      const std::string w = "gates." + key;
      c.stage(key.c_str(), [&] {
        if (key == "g_closed_form") gate_closed_form(c, j, w, false);
        else if (key == "pde_closed_form") gate_closed_form(c, j, w, true);
        else if (key == "pde_mc_agreement") gate_pde_agreement(c, j, w);
        else if (key == "semigroup") gate_semigroup(c, j, w);
        else if (key == "hjb_residual") gate_residual(c, j, w, true);
        else if (key == "fk_residual") gate_residual(c, j, w, false);
        else if (key == "drift_formula") gate_drift(c, j, w);
        else if (key == "entropy_decomposition") gate_entropy(c, j, w);
        else if (key == "born") gate_born(c, j, w);
        else if (key == "derivative_recovery") gate_recovery(c, j, w);
        else fail(ErrorCode::ConfigError, "config key '" + w + "': unknown gate");
      });
    }
  }
  run_conditions(c);
  return finish(c, "run");
}

RunResult check_conditions(const Json& cfg, const RunOptions& opts) {
  Ctx c = make_ctx(cfg, opts);
  if (!c.cfg.contains("conditions")) fail(ErrorCode::ConfigError, "config key 'conditions': missing");
  run_conditions(c);
  return finish(c, "check-conditions");
}

}  // namespace fklab
