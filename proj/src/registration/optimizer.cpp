#include "spinealign/registration/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <exception>
#include <random>
#include <sstream>
#include <string>

#include "spinealign/error.hpp"

namespace spinealign::registration {

namespace {

std::string describe(std::span<const double> x) {
  std::ostringstream os;
  os.precision(17);
  os << "[";
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << "]";
  return os.str();
}

double checked_value(const BoxProblem& p, std::span<const double> x) {
  const double v = p.value(x);
  if (!std::isfinite(v)) throw OptimizerAbort("objective returned " + std::to_string(v) + " at " + describe(x));
  return v;
}

double fd_component(const BoxProblem& p, std::span<const double> x, double fx, std::size_t i) {
  if (p.lower[i] == p.upper[i]) return 0.0;
  const double h = p.fd_step[i];
  const bool backward = x[i] + h > p.upper[i];
  std::vector<double> xi(x.begin(), x.end());
  xi[i] = backward ? x[i] - h : x[i] + h;
  const double fi = p.value(xi);
  return backward ? (fx - fi) / h : (fi - fx) / h;
}

void check_problem(const BoxProblem& p, std::size_t n) {
  if (p.lower.size() != n || p.upper.size() != n || p.fd_step.size() != n) {
    throw DimensionMismatch("box problem: bounds/steps do not match " + std::to_string(n) + " parameters");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(p.lower[i] <= p.upper[i])) throw InvalidArgument("box problem: lower > upper at " + std::to_string(i));
    if (!(p.fd_step[i] > 0.0)) throw InvalidArgument("box problem: non-positive fd step at " + std::to_string(i));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::vector<double> finite_difference_gradient(const BoxProblem& problem, std::span<const double> x, double fx) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> g(x.size(), 0.0);
  std::vector<std::exception_ptr> errors(x.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      g[i] = fd_component(problem, x, fx, static_cast<std::size_t>(i));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      throw OptimizerAbort("non-finite objective while differentiating parameter " + std::to_string(i) + " at " +
                           describe(x));
    }
  }
  return g;
}

std::vector<double> finite_difference_gradient_serial(const BoxProblem& problem, std::span<const double> x,
                                                      double fx) {
  std::vector<double> g(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = fd_component(problem, x, fx, i);
    if (!std::isfinite(g[i])) {
      throw OptimizerAbort("non-finite objective while differentiating parameter " + std::to_string(i) + " at " +
                           describe(x));
    }
  }
  return g;
}

LocalResult minimize_box(const BoxProblem& problem, std::span<const double> x0, const LbfgsOptions& options) {
  const std::size_t n = x0.size();
  check_problem(problem, n);

  // Work in units of each parameter's box half-width so that angles (rad)
  // and translations (mm) are comparable in the curvature model.
  std::vector<double> scale(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double hw = 0.5 * (problem.upper[i] - problem.lower[i]);
    if (hw > 0.0) scale[i] = hw;
  }
  auto project = [&](std::vector<double>& x) {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i], problem.lower[i], problem.upper[i]);
  };
  auto scaled_gradient = [&](const std::vector<double>& x, double fx) {
    auto g = finite_difference_gradient(problem, x, fx);
    for (std::size_t i = 0; i < n; ++i) g[i] *= scale[i];
    return g;
  };

  LocalResult res;
  res.x.assign(x0.begin(), x0.end());
  project(res.x);
  res.value = checked_value(problem, res.x);
  res.evaluations = 1;
  if (n == 0) return res;

  std::vector<double> g = scaled_gradient(res.x, res.value);
  res.evaluations += n;

  struct Pair {
    std::vector<double> s, y;  // scaled units
    double rho;
  };
  std::deque<Pair> memory;

  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    // Variables held at a bound by the gradient are fixed for this step.
    std::vector<bool> free(n, true);
    std::vector<double> pg(n, 0.0);
    double pg_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool at_lo = res.x[i] <= problem.lower[i] && g[i] > 0.0;
      const bool at_hi = res.x[i] >= problem.upper[i] && g[i] < 0.0;
      free[i] = !(at_lo || at_hi) && problem.lower[i] < problem.upper[i];
      pg[i] = free[i] ? g[i] : 0.0;
      pg_norm = std::max(pg_norm, std::abs(pg[i]));
    }
    if (pg_norm < options.gradient_tolerance) break;

    // Two-loop recursion restricted to the free variables.
    std::vector<double> q = pg;
    std::vector<double> alpha(memory.size());
    for (std::size_t k = memory.size(); k-- > 0;) {
      alpha[k] = memory[k].rho * dot(memory[k].s, q);
      for (std::size_t i = 0; i < n; ++i)
        if (free[i]) q[i] -= alpha[k] * memory[k].y[i];
    }
    double gamma = 1.0;
    if (!memory.empty()) {
      const auto& last = memory.back();
      gamma = dot(last.s, last.y) / dot(last.y, last.y);
    } else {
      gamma = 0.25 / pg_norm;  // first step moves at most a quarter half-width
    }
    for (auto& v : q) v *= gamma;
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const double beta = memory[k].rho * dot(memory[k].y, q);
      for (std::size_t i = 0; i < n; ++i)
        if (free[i]) q[i] += memory[k].s[i] * (alpha[k] - beta);
    }
    std::vector<double> d(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i] = free[i] ? -q[i] : 0.0;
    if (dot(d, pg) >= 0.0) {
      memory.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = -pg[i] * 0.25 / pg_norm;
    }

    // Armijo backtracking along the projected path.
    double step = 1.0;
    bool moved = false;
    std::vector<double> xn(n);
    double fn = res.value;
    for (int ls = 0; ls < 30; ++ls) {
      for (std::size_t i = 0; i < n; ++i) xn[i] = res.x[i] + step * d[i] * scale[i];
      project(xn);
      double decrease = 0.0;
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        decrease += g[i] * (xn[i] - res.x[i]) / scale[i];
        changed = changed || xn[i] != res.x[i];
      }
      if (!changed) break;
      fn = checked_value(problem, xn);
      ++res.evaluations;
      if (fn <= res.value + 1e-4 * decrease && fn < res.value) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) {
      if (memory.empty()) break;
      memory.clear();  // retry once along the steepest projected descent
      continue;
    }

    const auto gn = scaled_gradient(xn, fn);
    res.evaluations += n;
    Pair pr;
    pr.s.resize(n);
    pr.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      pr.s[i] = (xn[i] - res.x[i]) / scale[i];
      pr.y[i] = gn[i] - g[i];
    }
    const double sy = dot(pr.s, pr.y);
    if (sy > 1e-12 * dot(pr.y, pr.y)) {
      pr.rho = 1.0 / sy;
      memory.push_back(std::move(pr));
      if (static_cast<int>(memory.size()) > options.memory) memory.pop_front();
    }

    const double drop = res.value - fn;
    res.x = xn;
    res.value = fn;
    g = gn;
    if (drop <= options.value_tolerance * std::max(1.0, std::abs(fn))) {
      ++res.iterations;
      break;
    }
  }
  return res;
}

OptimizeResult optimize_pose(const ObjectiveContext& context, const kinematics::ArticulatedPose& init,
                             const ProgressCallback& progress) {
  const auto& cfg = context.config();
  const auto& codec = context.codec();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };

  BoxProblem problem;
  problem.value = [&](std::span<const double> x) { return context.evaluate_vector(x).combined; };
  problem.lower = codec.lower();
  problem.upper = codec.upper();
  problem.fd_step = codec.fd_steps();

  LbfgsOptions opts;
  opts.max_iterations = cfg.inner_max_iters;
  opts.memory = cfg.lbfgs_memory;
  opts.gradient_tolerance = cfg.inner_gradient_tolerance;
  opts.value_tolerance = cfg.inner_value_tolerance;

  OptimizeResult out;
  const auto x_init = codec.project(codec.encode(kinematics::clamp_pose(context.model(), init)));
  std::vector<double> best_x = x_init;
  double best_f = checked_value(problem, best_x);
  ++out.evaluations;

  auto local = minimize_box(problem, x_init, opts);
  out.evaluations += local.evaluations;
  std::vector<double> current_x = local.x;
  double current_f = local.value;
  if (current_f < best_f) {
    best_f = current_f;
    best_x = current_x;
  }

  auto emit = [&](int iteration, double reached, bool accepted) {
    const auto rep = context.evaluate_vector(best_x);
    TracePoint tp{iteration, best_f, rep.corr_ratio, rep.containment, reached, accepted, elapsed_ms()};
    out.trace.push_back(tp);
    return progress ? progress(tp) : true;
  };

  bool keep_going = emit(0, current_f, true);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int it = 1; keep_going && it <= cfg.basinhop_iterations; ++it) {
    std::vector<double> trial = current_x;
    for (std::size_t i = 0; i < trial.size(); ++i) {
      trial[i] += unit(rng) * cfg.hop_step * 0.5 * (problem.upper[i] - problem.lower[i]);
    }
    trial = codec.project(trial);
    local = minimize_box(problem, trial, opts);
    out.evaluations += local.evaluations;

    const double u = coin(rng);
    const bool accept =
        local.value <= current_f || u < std::exp(-(local.value - current_f) / cfg.metropolis_temperature);
    if (accept) {
      current_x = local.x;
      current_f = local.value;
    }
    if (local.value < best_f) {
      best_f = local.value;
      best_x = local.x;
    }
    keep_going = emit(it, local.value, accept);
  }
  out.cancelled = !keep_going;
  out.pose = kinematics::clamp_pose(context.model(), codec.decode(best_x));
  out.report = context.evaluate(out.pose);
  return out;
}

OptimizeResult optimize_pose(const kinematics::SpineModel& model, const PointCloud& scene,
                             const kinematics::ArticulatedPose& init, const OptimizerConfig& cfg) {
  const geometry::KdTree index(scene.positions);
  const ObjectiveContext context(model, scene, index, cfg, init.global);
  return optimize_pose(context, init);
}

nlohmann::json trace_point_to_json(const TracePoint& p) {
  return {{"iteration", p.iteration},       {"combined", p.combined}, {"corr_ratio", p.corr_ratio},
          {"I", p.containment},             {"current", p.current},   {"accepted", p.accepted},
          {"elapsed_ms", p.elapsed_ms}};
}

void write_trace_ndjson(std::ostream& out, std::span<const TracePoint> trace) {
  for (const auto& p : trace) out << trace_point_to_json(p).dump() << '\n';
}

}  // namespace spinealign::registration
