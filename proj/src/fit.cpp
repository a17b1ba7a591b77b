#include "pals/fit.hpp"

#include "pals/errors.hpp"
#include "pals/kernels.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pals {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_weight(ParamKind k) { return k == ParamKind::intensity || k == ParamKind::prompt_fraction; }

struct VarRef {
  std::size_t dataset;
  std::size_t param;
};

struct Var {
  std::vector<VarRef> refs;
  bool weight = false;
  double scale = 1.0;  // packed value = scale * optimizer variable
  ParamBounds bounds;
};

struct Dataset {
  const Histogram* h = nullptr;
  const FitSpec* spec = nullptr;
  std::size_t n = 0;
  std::size_t first = 0, last = 0;
  std::vector<double> counts;
  std::vector<std::size_t> free_weights;  // packed indices of weights the optimizer moves
  std::size_t dep = 0;                    // dependent weight (valid when free_weights non-empty)
  bool has_dep = false;
};

using State = std::vector<std::vector<double>>;  // packed parameters per dataset

struct Normal {
  Eigen::MatrixXd info;
  Eigen::VectorXd grad;
  double objective = 0.0;
};

class Problem {
 public:
  Problem(std::span<const Histogram> hs, std::span<const FitSpec> specs, const std::vector<ParamId>& shared);

  std::size_t n_vars() const { return vars_.size(); }
  const State& initial() const { return initial_; }

  /// Objective per dataset; +inf when a channel with counts has mu <= 0.
  std::vector<double> objectives(const State& s) const;
  /// Objective, half-gradient and information over the non-dependent vars.
  Normal normal_equations(const State& s) const;
  /// Applies a step (indexed like vars_, dependent vars ignored), projects
  /// onto the bounds and recomputes dependent weights. Returns false when a
  /// dependent weight leaves its bounds.
  bool step(const State& s, const Eigen::VectorXd& delta, State& out) const;
  void choose_dependents(const State& s);
  bool is_dependent(std::size_t v) const { return dependent_[v]; }
  /// -1 at lower bound, +1 at upper bound, 0 otherwise.
  int bound_side(const State& s, std::size_t v) const;
  double value(const State& s, std::size_t v) const;
  double scale(std::size_t v) const { return vars_[v].scale; }
  /// Packed-parameter sensitivity dp/dx of dataset d (param_count x n_vars).
  Eigen::MatrixXd transform(std::size_t d) const;
  std::size_t rows() const { return total_rows_; }
  std::size_t rows(std::size_t d) const { return data_[d].last - data_[d].first; }
  std::size_t vars_in(std::size_t d) const;
  const std::vector<Dataset>& data() const { return data_; }
  Objective objective() const { return objective_; }

 private:
  std::vector<Dataset> data_;
  std::vector<Var> vars_;
  std::vector<bool> dependent_;
  State initial_;
  std::size_t total_rows_ = 0;
  Objective objective_ = Objective::poisson;
};

Problem::Problem(std::span<const Histogram> hs, std::span<const FitSpec> specs, const std::vector<ParamId>& shared) {
  if (hs.empty() || hs.size() != specs.size()) throw DomainError("fit needs one spec per histogram");
  objective_ = specs[0].objective;
  for (std::size_t d = 0; d < hs.size(); ++d) {
    const FitSpec& spec = specs[d];
    spec.validate(hs[d].n_channels());
    if (spec.objective != objective_) throw DomainError("joint fit requires a common objective");
    if (d > 0 && spec.n_components() != specs[0].n_components())
      throw DomainError("joint fit requires a common component count");
    Dataset ds;
    ds.h = &hs[d];
    ds.spec = &spec;
    ds.n = spec.n_components();
    std::tie(ds.first, ds.last) = spec.channel_range(hs[d].n_channels());
    ds.counts.assign(hs[d].counts.begin() + ds.first, hs[d].counts.begin() + ds.last);
    total_rows_ += ds.last - ds.first;
    data_.push_back(std::move(ds));
    initial_.push_back(pack_params(spec.initial));
  }
  const std::size_t n = data_[0].n;
  const std::size_t np = param_count(n);
  std::vector<bool> is_shared(np, false);
  for (const auto& id : shared) is_shared[param_index(id, n)] = true;

  std::vector<std::size_t> shared_var(np, SIZE_MAX);
  for (std::size_t d = 0; d < data_.size(); ++d) {
    Dataset& ds = data_[d];
    const FitSpec& spec = *ds.spec;
    std::size_t n_free_weights = 0;
    for (std::size_t q = 0; q < np; ++q)
      if (spec.free[q] && is_weight(param_at(q, n).kind)) ++n_free_weights;
    for (std::size_t q = 0; q < np; ++q) {
      if (is_shared[q] && !spec.free[q])
        throw DomainError("shared parameter " + param_at(q, n).name() + " must be free in every histogram");
      if (!spec.free[q]) continue;
      const ParamId id = param_at(q, n);
      const bool w = is_weight(id.kind);
      // A lone free weight is pinned by the sum constraint.
      if (w && n_free_weights < 2) continue;
      if (w) ds.free_weights.push_back(q);
      if (is_shared[q] && shared_var[q] != SIZE_MAX) {
        vars_[shared_var[q]].refs.push_back({d, q});
        continue;
      }
      Var v;
      v.refs.push_back({d, q});
      v.weight = w;
      v.scale = (id.kind == ParamKind::rate && spec.rate_unit == RateUnit::per_ns) ? kNsPerUs : 1.0;
      v.bounds = spec.bounds[q];
      if (is_shared[q]) shared_var[q] = vars_.size();
      vars_.push_back(v);
    }
    if (!ds.free_weights.empty()) {
      bool any = false;
      for (std::size_t q : ds.free_weights) any = any || !is_shared[q];
      if (!any) throw DomainError("every histogram needs a free weight that is not shared");
    }
  }
  for (std::size_t q = 0; q < np; ++q)
    if (is_shared[q] && data_.size() > 1) {
      for (std::size_t d = 1; d < data_.size(); ++d)
        if (initial_[d][q] != initial_[0][q])
          throw DomainError("shared parameter " + param_at(q, n).name() + " needs equal initial values");
    }
  dependent_.assign(vars_.size(), false);
  choose_dependents(initial_);
}

void Problem::choose_dependents(const State& s) {
  std::fill(dependent_.begin(), dependent_.end(), false);
  for (std::size_t d = 0; d < data_.size(); ++d) {
    Dataset& ds = data_[d];
    ds.has_dep = false;
    double best = -kInf;
    for (std::size_t v = 0; v < vars_.size(); ++v) {
      const Var& var = vars_[v];
      if (!var.weight || var.refs.size() != 1 || var.refs[0].dataset != d) continue;
      const double val = s[d][var.refs[0].param];
      if (val > best) {
        best = val;
        ds.dep = var.refs[0].param;
        ds.has_dep = true;
      }
    }
    if (!ds.has_dep) continue;
    for (std::size_t v = 0; v < vars_.size(); ++v)
      if (vars_[v].weight && vars_[v].refs.size() == 1 && vars_[v].refs[0].dataset == d &&
          vars_[v].refs[0].param == ds.dep)
        dependent_[v] = true;
  }
}

std::size_t Problem::vars_in(std::size_t d) const {
  std::size_t k = 0;
  for (std::size_t v = 0; v < vars_.size(); ++v) {
    if (dependent_[v]) continue;
    for (const auto& r : vars_[v].refs)
      if (r.dataset == d) ++k;
  }
  return k;
}

double Problem::value(const State& s, std::size_t v) const {
  const auto& r = vars_[v].refs[0];
  return s[r.dataset][r.param];
}

int Problem::bound_side(const State& s, std::size_t v) const {
  const double x = value(s, v);
  const auto& b = vars_[v].bounds;
  const double tol_l = 1e-12 * std::max(1.0, std::abs(b.lower));
  const double tol_u = 1e-12 * std::max(1.0, std::abs(b.upper));
  if (x <= b.lower + tol_l) return -1;
  if (x >= b.upper - tol_u) return 1;
  return 0;
}

std::vector<double> Problem::objectives(const State& s) const {
  std::vector<double> out(data_.size(), 0.0);
  for (std::size_t d = 0; d < data_.size(); ++d) {
    const Dataset& ds = data_[d];
    const SpectrumModel m = unpack_params(s[d], ds.n);
    const auto ev = evaluate_model(m, ds.h->geometry(), ds.first, ds.last, false);
    double sum = 0.0;
    for (std::size_t k = 0; k < ev.n_rows; ++k) {
      const double mu = ev.expected[k];
      const double c = ds.counts[k];
      if (objective_ == Objective::poisson) {
        if (c > 0.0) {
          if (!(mu > 0.0)) return std::vector<double>(data_.size(), kInf);
          sum += 2.0 * (mu - c + c * std::log(c / mu));
        } else {
          sum += 2.0 * mu;
        }
      } else {
        sum += (c - mu) * (c - mu) / std::max(c, 1.0);
      }
    }
    out[d] = std::isfinite(sum) ? sum : kInf;
  }
  return out;
}

Normal Problem::normal_equations(const State& s) const {
  std::vector<std::size_t> cols;
  for (std::size_t v = 0; v < vars_.size(); ++v)
    if (!dependent_[v]) cols.push_back(v);
  const std::size_t k = cols.size();
  const std::size_t rows = total_rows_;
  std::vector<double> weight(rows), resid(rows), jac(k * rows, 0.0);
  Normal ne;
  std::size_t offset = 0;
  for (std::size_t d = 0; d < data_.size(); ++d) {
    const Dataset& ds = data_[d];
    const SpectrumModel m = unpack_params(s[d], ds.n);
    const auto ev = evaluate_model(m, ds.h->geometry(), ds.first, ds.last, true);
    for (std::size_t r = 0; r < ev.n_rows; ++r) {
      const double mu = ev.expected[r];
      const double c = ds.counts[r];
      if (objective_ == Objective::poisson) {
        const double safe = std::max(mu, 1e-300);
        weight[offset + r] = 1.0 / safe;
        resid[offset + r] = 1.0 - c / safe;
        ne.objective += c > 0.0 ? 2.0 * (mu - c + c * std::log(c / safe)) : 2.0 * mu;
      } else {
        const double var = std::max(c, 1.0);
        weight[offset + r] = 1.0 / var;
        resid[offset + r] = (mu - c) / var;
        ne.objective += (c - mu) * (c - mu) / var;
      }
    }
    for (std::size_t j = 0; j < k; ++j) {
      const Var& var = vars_[cols[j]];
      for (const auto& ref : var.refs) {
        if (ref.dataset != d) continue;
        double* dst = jac.data() + j * rows + offset;
        const double* src = ev.column(ref.param);
        for (std::size_t r = 0; r < ev.n_rows; ++r) dst[r] += var.scale * src[r];
        if (var.weight) {
          const double* dep = ev.column(ds.dep);
          for (std::size_t r = 0; r < ev.n_rows; ++r) dst[r] -= dep[r];
        }
      }
    }
    offset += ev.n_rows;
  }
  std::vector<double> info(k * k, 0.0), grad(k, 0.0);
  kernels::accumulate_normal_equations(weight, resid, jac, k, info, grad);
  ne.info = Eigen::Map<Eigen::MatrixXd>(info.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  ne.grad = Eigen::Map<Eigen::VectorXd>(grad.data(), static_cast<Eigen::Index>(k));
  // Expand to one slot per var (dependent slots stay zero).
  Normal full;
  full.objective = ne.objective;
  full.info = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vars_.size()), static_cast<Eigen::Index>(vars_.size()));
  full.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vars_.size()));
  for (std::size_t a = 0; a < k; ++a) {
    full.grad(static_cast<Eigen::Index>(cols[a])) = ne.grad(static_cast<Eigen::Index>(a));
    for (std::size_t b = 0; b < k; ++b)
      full.info(static_cast<Eigen::Index>(cols[a]), static_cast<Eigen::Index>(cols[b])) =
          ne.info(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  }
  return full;
}

bool Problem::step(const State& s, const Eigen::VectorXd& delta, State& out) const {
  out = s;
  for (std::size_t v = 0; v < vars_.size(); ++v) {
    if (dependent_[v]) continue;
    const double dx = delta(static_cast<Eigen::Index>(v));
    if (dx == 0.0) continue;
    const Var& var = vars_[v];
    const double target = std::clamp(value(s, v) + var.scale * dx, var.bounds.lower, var.bounds.upper);
    for (const auto& r : var.refs) out[r.dataset][r.param] = target;
  }
  for (std::size_t d = 0; d < data_.size(); ++d) {
    const Dataset& ds = data_[d];
    if (!ds.has_dep) continue;
    double others = 0.0;
    for (std::size_t q = 0; q < param_count(ds.n); ++q)
      if (is_weight(param_at(q, ds.n).kind) && q != ds.dep) others += out[d][q];
    const double dep = 1.0 - others;
    const auto& b = ds.spec->bounds[ds.dep];
    if (!(dep >= b.lower && dep <= b.upper)) return false;
    out[d][ds.dep] = dep;
  }
  return true;
}

Eigen::MatrixXd Problem::transform(std::size_t d) const {
  const std::size_t np = param_count(data_[d].n);
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(vars_.size()));
  for (std::size_t v = 0; v < vars_.size(); ++v) {
    if (dependent_[v]) continue;
    for (const auto& r : vars_[v].refs) {
      if (r.dataset != d) continue;
      t(static_cast<Eigen::Index>(r.param), static_cast<Eigen::Index>(v)) += vars_[v].scale;
      if (vars_[v].weight) t(static_cast<Eigen::Index>(data_[d].dep), static_cast<Eigen::Index>(v)) -= 1.0;
    }
  }
  return t;
}

Eigen::MatrixXd submatrix(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
  const auto k = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd out(k, k);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b)
      out(a, b) = m(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(a)]),
                    static_cast<Eigen::Index>(idx[static_cast<std::size_t>(b)]));
  return out;
}

Eigen::VectorXd subvector(const Eigen::VectorXd& v, const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t a = 0; a < idx.size(); ++a) out(static_cast<Eigen::Index>(a)) = v(static_cast<Eigen::Index>(idx[a]));
  return out;
}

/// Smallest over largest eigenvalue of the correlation form of a symmetric matrix.
double inverse_condition(const Eigen::MatrixXd& m) {
  if (m.rows() == 0) return 1.0;
  Eigen::VectorXd d = m.diagonal();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!(d(i) > 0.0)) return 0.0;
    d(i) = 1.0 / std::sqrt(d(i));
  }
  const Eigen::MatrixXd c = d.asDiagonal() * m * d.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c, Eigen::EigenvaluesOnly);
  const double hi = es.eigenvalues().maxCoeff();
  const double lo = es.eigenvalues().minCoeff();
  return hi > 0.0 ? lo / hi : 0.0;
}

struct Solution {
  State state;
  std::vector<double> per_dataset;
  double deviance = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  bool singular = false;
  std::string message;
  std::vector<double> trace;
  Eigen::MatrixXd covariance;  // over vars (zero rows for excluded vars)
  std::vector<bool> excluded;  // var held on a bound or dependent
};

std::vector<std::size_t> active_set(const Problem& pb, const State& s, const Normal& ne) {
  std::vector<std::size_t> a;
  for (std::size_t v = 0; v < pb.n_vars(); ++v) {
    if (pb.is_dependent(v)) continue;
    const auto i = static_cast<Eigen::Index>(v);
    if (!(ne.info(i, i) > 0.0)) continue;
    const int side = pb.bound_side(s, v);
    if (side < 0 && ne.grad(i) > 0.0) continue;
    if (side > 0 && ne.grad(i) < 0.0) continue;
    a.push_back(v);
  }
  return a;
}

double newton_decrement(const Normal& ne, const std::vector<std::size_t>& a) {
  if (a.empty()) return 0.0;
  const Eigen::MatrixXd h = submatrix(ne.info, a);
  const Eigen::VectorXd g = subvector(ne.grad, a);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
  if (ldlt.info() != Eigen::Success) return kInf;
  const double dec = g.dot(ldlt.solve(g));
  return std::isfinite(dec) ? std::max(dec, 0.0) : kInf;
}

void compute_covariance(const Problem& pb, Solution& sol, const Normal& ne) {
  const std::size_t nv = pb.n_vars();
  sol.covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nv), static_cast<Eigen::Index>(nv));
  sol.excluded.assign(nv, true);
  std::vector<std::size_t> idx;
  for (std::size_t v = 0; v < nv; ++v)
    if (!pb.is_dependent(v) && pb.bound_side(sol.state, v) == 0 && ne.info(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(v)) > 0.0)
      idx.push_back(v);
  if (idx.empty()) return;
  const Eigen::MatrixXd fisher = submatrix(ne.info, idx);
  Eigen::MatrixXd info = fisher;

  if (pb.objective() == Objective::poisson) {
    // Observed information: central differences of the analytic gradient,
    // with steps of a tenth of the conditional standard error.
    const auto k = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd obs(k, k);
    bool ok = true;
    for (Eigen::Index a = 0; a < k && ok; ++a) {
      const std::size_t v = idx[static_cast<std::size_t>(a)];
      const double h = 0.1 / std::sqrt(fisher(a, a));
      Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nv));
      State plus, minus;
      e(static_cast<Eigen::Index>(v)) = h;
      const bool ok_p = pb.step(sol.state, e, plus);
      e(static_cast<Eigen::Index>(v)) = -h;
      const bool ok_m = pb.step(sol.state, e, minus);
      const double xp = ok_p ? pb.value(plus, v) : 0.0, xm = ok_m ? pb.value(minus, v) : 0.0;
      const double x0 = pb.value(sol.state, v);
      if (!ok_p || !ok_m || xp == x0 || xm == x0) {
        ok = false;
        break;
      }
      const Normal np = pb.normal_equations(plus);
      const Normal nm = pb.normal_equations(minus);
      const Eigen::VectorXd gp = subvector(np.grad, idx), gm = subvector(nm.grad, idx);
      const double sep = (xp - xm) / pb.scale(v);
      obs.col(a) = (gp - gm) / sep;
    }
    if (ok) {
      obs = 0.5 * (obs + obs.transpose()).eval();
      Eigen::LDLT<Eigen::MatrixXd> ldlt(obs);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 0.0).all()) {
        info = obs;
      } else {
        sol.message += sol.message.empty() ? "" : "; ";
        sol.message += "observed information not positive definite, Fisher information used";
      }
    } else {
      sol.message += sol.message.empty() ? "" : "; ";
      sol.message += "observed information unavailable near a bound, Fisher information used";
    }
  }

  if (inverse_condition(info) < 1e-13) {
    sol.singular = true;
    sol.message += sol.message.empty() ? "" : "; ";
    sol.message += "information matrix is singular";
    return;
  }
  const Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
  for (std::size_t a = 0; a < idx.size(); ++a) {
    sol.excluded[idx[a]] = false;
    for (std::size_t b = 0; b < idx.size(); ++b)
      sol.covariance(static_cast<Eigen::Index>(idx[a]), static_cast<Eigen::Index>(idx[b])) =
          cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  }
}

}  // namespace

namespace {

Solution solve(Problem& pb, const FitSpec& spec0) {
  Solution sol;
  sol.state = pb.initial();
  sol.per_dataset = pb.objectives(sol.state);
  sol.deviance = std::accumulate(sol.per_dataset.begin(), sol.per_dataset.end(), 0.0);
  sol.trace.push_back(sol.deviance);
  if (!std::isfinite(sol.deviance)) {
    sol.message = "initial model predicts zero counts in a channel with counts";
    return sol;
  }
  if (pb.n_vars() == 0) {
    sol.converged = true;
    sol.message = "evaluation only: no free parameters";
    return sol;
  }

  double damping = 1e-3;
  double last_change = kInf;
  Normal ne = pb.normal_equations(sol.state);
  for (;;) {
    pb.choose_dependents(sol.state);
    ne = pb.normal_equations(sol.state);
    const auto active = active_set(pb, sol.state, ne);
    const double dec = newton_decrement(ne, active);
    sol.gradient_norm = std::sqrt(dec);
    if (dec < spec0.gradient_tol && (sol.iterations == 0 || last_change < spec0.convergence_tol)) {
      sol.converged = true;
      break;
    }
    if (sol.iterations >= spec0.max_iterations) {
      sol.message = "iteration limit reached";
      break;
    }
    if (active.empty()) {
      sol.message = "no parameter can move";
      break;
    }
    const Eigen::MatrixXd h = submatrix(ne.info, active);
    const Eigen::VectorXd g = subvector(ne.grad, active);
    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd a = h;
      a.diagonal() *= 1.0 + damping;
      const Eigen::VectorXd d = a.ldlt().solve(-g);
      Eigen::VectorXd delta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pb.n_vars()));
      bool finite = true;
      for (std::size_t i = 0; i < active.size(); ++i) {
        delta(static_cast<Eigen::Index>(active[i])) = d(static_cast<Eigen::Index>(i));
        finite = finite && std::isfinite(d(static_cast<Eigen::Index>(i)));
      }
      State trial;
      if (finite && pb.step(sol.state, delta, trial)) {
        const auto per = pb.objectives(trial);
        const double dev = std::accumulate(per.begin(), per.end(), 0.0);
        if (dev <= sol.deviance) {
          last_change = (sol.deviance - dev) / std::max(std::abs(dev), 1.0);
          sol.state = std::move(trial);
          sol.per_dataset = per;
          sol.deviance = dev;
          sol.trace.push_back(dev);
          ++sol.iterations;
          damping = std::max(damping * 0.1, 1e-12);
          accepted = true;
          continue;
        }
      }
      damping *= 10.0;
      if (damping > 1e16) break;
    }
    if (!accepted) {
      // No descent step exists at machine precision: stationary point.
      if (dec < spec0.gradient_tol * 1e3) {
        sol.converged = true;
      } else {
        sol.message = "no deviance decrease at maximal damping";
      }
      break;
    }
  }
  pb.choose_dependents(sol.state);
  ne = pb.normal_equations(sol.state);
  if (spec0.compute_covariance) compute_covariance(pb, sol, ne);
  return sol;
}

FitResult make_result(const Problem& pb, const Solution& sol, std::size_t d) {
  const Dataset& ds = pb.data()[d];
  FitResult r;
  r.params = sol.state[d];
  r.model = unpack_params(r.params, ds.n);
  r.objective = pb.objective();
  r.free = ds.spec->free;
  r.deviance = sol.per_dataset[d];
  r.gradient_norm = sol.gradient_norm;
  r.n_rows = pb.rows(d);
  const std::size_t k = pb.vars_in(d);
  r.degrees_of_freedom = r.n_rows > k ? r.n_rows - k : 0;
  r.n_iterations = sol.iterations;
  r.converged = sol.converged;
  r.singular = sol.singular;
  r.message = sol.message;
  r.deviance_trace = sol.trace;
  const std::size_t np = r.params.size();
  r.covariance.assign(np * np, 0.0);
  r.errors.assign(np, 0.0);
  r.at_bound.assign(np, false);
  for (std::size_t q = 0; q < np; ++q) {
    const auto& b = ds.spec->bounds[q];
    if (r.free[q]) r.at_bound[q] = r.params[q] <= b.lower + 1e-12 * std::max(1.0, std::abs(b.lower)) ||
                                   r.params[q] >= b.upper - 1e-12 * std::max(1.0, std::abs(b.upper));
  }
  if (sol.covariance.size() == 0) return r;
  const Eigen::MatrixXd t = pb.transform(d);
  const Eigen::MatrixXd cov = t * sol.covariance * t.transpose();
  for (std::size_t a = 0; a < np; ++a) {
    for (std::size_t b = 0; b < np; ++b) r.covariance[a * np + b] = cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    r.errors[a] = std::sqrt(std::max(0.0, cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a))));
  }
  return r;
}

}  // namespace

std::string to_string(Objective o) { return o == Objective::poisson ? "poisson" : "least_squares"; }
std::string to_string(RateUnit u) { return u == RateUnit::per_us ? "per_us" : "per_ns"; }

bool FitSpec::is_free(const ParamId& id) const { return free.at(param_index(id, n_components())); }
void FitSpec::set_free(const ParamId& id, bool f) { free.at(param_index(id, n_components())) = f; }
ParamBounds& FitSpec::bound(const ParamId& id) { return bounds.at(param_index(id, n_components())); }
const ParamBounds& FitSpec::bound(const ParamId& id) const { return bounds.at(param_index(id, n_components())); }
std::size_t FitSpec::n_free() const { return static_cast<std::size_t>(std::count(free.begin(), free.end(), true)); }

std::pair<std::size_t, std::size_t> FitSpec::channel_range(std::size_t n_channels) const {
  return {first_channel, last_channel == 0 ? n_channels : last_channel};
}

void FitSpec::validate(std::size_t n_channels) const {
  const std::size_t n = n_components();
  if (n == 0) throw DomainError("fit spec needs at least one component");
  const std::size_t np = param_count(n);
  if (free.size() != np || bounds.size() != np) throw DomainError("fit spec mask or bounds have the wrong length");
  const auto [first, last] = channel_range(n_channels);
  if (first >= last || last > n_channels) throw DomainError("fit channel range is empty or exceeds the histogram");
  if (max_iterations == 0) throw DomainError("max_iterations must be >= 1");
  if (!(convergence_tol > 0.0) || !(gradient_tol > 0.0)) throw DomainError("convergence tolerances must be > 0");
  const auto p = pack_params(initial);
  double wsum = 0.0;
  for (std::size_t q = 0; q < np; ++q) {
    const ParamId id = param_at(q, n);
    if (!std::isfinite(p[q])) throw DomainError("initial " + id.name() + " is not finite");
    if (!(bounds[q].lower <= bounds[q].upper)) throw DomainError("bounds of " + id.name() + " are inconsistent");
    if (p[q] < bounds[q].lower || p[q] > bounds[q].upper)
      throw DomainError("initial " + id.name() + " lies outside its bounds");
    if (is_weight(id.kind)) wsum += p[q];
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!(initial.components[i].rate > 0.0)) throw DomainError("initial rate_" + std::to_string(i) + " must be > 0");
  if (std::abs(wsum - 1.0) > 1e-9) throw DomainError("initial intensities and prompt fraction must sum to 1");
}

double FitResult::value(const ParamId& id) const { return params.at(param_index(id, model.components.size())); }
double FitResult::error(const ParamId& id) const { return errors.at(param_index(id, model.components.size())); }

std::vector<ParamBounds> default_bounds(std::size_t n) {
  std::vector<ParamBounds> b(param_count(n));
  for (std::size_t i = 0; i < n; ++i) {
    b[param_index({ParamKind::rate, i}, n)] = {1e-6, kInf};
    b[param_index({ParamKind::intensity, i}, n)] = {0.0, 1.0};
  }
  b[param_index({ParamKind::prompt_fraction}, n)] = {0.0, 1.0};
  b[param_index({ParamKind::fwhm}, n)] = {1e-3, kInf};
  b[param_index({ParamKind::background}, n)] = {0.0, kInf};
  b[param_index({ParamKind::total_events}, n)] = {0.0, kInf};
  return b;
}

FitSpec make_fit_spec(const SpectrumModel& initial) {
  FitSpec spec;
  spec.initial = initial;
  const std::size_t n = initial.components.size();
  spec.free.assign(param_count(n), true);
  spec.bounds = default_bounds(n);
  if (n > 0) {
    spec.set_free({ParamKind::rate, 0}, false);
    spec.set_free({ParamKind::intensity, 0}, false);
  }
  return spec;
}

FitSpec make_fit_spec(const Histogram& h, const SpectrumModel& guess) {
  FitSpec spec = make_fit_spec(guess);
  const std::size_t pre = pre_t0_channels(h.geometry(), guess.irf);
  double bkg = 0.0;
  if (pre > 0) {
    const auto b = estimate_background(h, 0, pre, guess.irf);
    bkg = (b.mean * static_cast<double>(b.n_channels) + 0.5) / static_cast<double>(b.n_channels);
  }
  spec.initial.background_per_channel = bkg;
  const double total = static_cast<double>(h.total()) - bkg * static_cast<double>(h.n_channels());
  spec.initial.total_events = std::max(total, 1.0);
  return spec;
}

FitResult fit_mle(const Histogram& h, const FitSpec& spec) {
  const Histogram* hp = &h;
  Problem pb(std::span<const Histogram>(hp, 1), std::span<const FitSpec>(&spec, 1), {});
  const Solution sol = solve(pb, spec);
  return make_result(pb, sol, 0);
}

JointFit fit_joint(std::span<const Histogram> hs, std::span<const FitSpec> specs, const std::vector<ParamId>& shared) {
  Problem pb(hs, specs, shared);
  const Solution sol = solve(pb, specs[0]);
  JointFit out;
  for (std::size_t d = 0; d < hs.size(); ++d) out.parts.push_back(make_result(pb, sol, d));
  out.deviance = sol.deviance;
  std::size_t k = 0;
  for (std::size_t v = 0; v < pb.n_vars(); ++v) k += pb.is_dependent(v) ? 0 : 1;
  out.degrees_of_freedom = pb.rows() > k ? pb.rows() - k : 0;
  out.n_iterations = sol.iterations;
  out.converged = sol.converged;
  out.singular = sol.singular;
  out.message = sol.message;
  out.deviance_trace = sol.trace;
  return out;
}

double poisson_deviance(const Histogram& h, const SpectrumModel& m, std::size_t first, std::size_t last) {
  const auto ev = evaluate_model(m, h.geometry(), first, last, false);
  double sum = 0.0;
  for (std::size_t k = 0; k < ev.n_rows; ++k) {
    const double mu = ev.expected[k];
    const double c = static_cast<double>(h.counts[first + k]);
    if (c > 0.0) {
      if (!(mu > 0.0)) return kInf;
      sum += 2.0 * (mu - c + c * std::log(c / mu));
    } else {
      sum += 2.0 * mu;
    }
  }
  return sum;
}

std::size_t pre_t0_channels(const ChannelGeometry& g, const InstrumentResponse& irf) {
  const double edge = irf.t0 - 5.0 * irf.sigma();
  if (!(edge > 0.0)) return 0;
  return std::min(g.n_channels, static_cast<std::size_t>(std::floor(edge / g.channel_width)));
}

BackgroundEstimate estimate_background(const Histogram& h, std::size_t first, std::size_t last,
                                       const InstrumentResponse& irf) {
  if (first >= last || last > h.n_channels()) throw DomainError("background window is empty or exceeds the histogram");
  if (static_cast<double>(last) * h.channel_width > irf.t0 - 5.0 * irf.sigma() + 1e-9)
    throw DomainError("background window must end before t0 - 5 sigma");
  BackgroundEstimate b;
  b.n_channels = last - first;
  double sum = 0.0;
  for (std::size_t k = first; k < last; ++k) sum += static_cast<double>(h.counts[k]);
  const double n = static_cast<double>(b.n_channels);
  b.mean = sum / n;
  // Poisson standard error of the mean: sqrt(mean / n).
  b.standard_error = std::sqrt(b.mean / n);
  b.degenerate = sum == 0.0;
  return b;
}

GradientCheck gradient_check(const FitSpec& spec, const Histogram& h) {
  spec.validate(h.n_channels());
  const auto [first, last] = spec.channel_range(h.n_channels());
  const std::size_t n = spec.n_components();
  const auto p0 = pack_params(spec.initial);
  const auto ev = evaluate_model(spec.initial, h.geometry(), first, last, true);
  GradientCheck out;
  out.deviations.assign(p0.size(), 0.0);
  for (std::size_t q = 0; q < p0.size(); ++q) {
    if (!spec.free[q]) continue;
    const double step = 1e-5 * std::max(std::abs(p0[q]), 1e-3);
    auto pp = p0, pm = p0;
    pp[q] += step;
    pm[q] -= step;
    if (pp[q] == p0[q] || pm[q] == p0[q]) throw DomainError("finite-difference step underflow for " + param_at(q, n).name());
    if (param_at(q, n).kind == ParamKind::rate && pm[q] <= 0.0) pm[q] = p0[q];
    if (param_at(q, n).kind == ParamKind::fwhm && pm[q] < 0.0) pm[q] = p0[q];
    const auto ep = evaluate_model(unpack_params(pp, n), h.geometry(), first, last, false);
    const auto em = evaluate_model(unpack_params(pm, n), h.geometry(), first, last, false);
    const double denom = pp[q] - pm[q];
    const double* col = ev.column(q);
    double scale = 0.0, worst = 0.0;
    for (std::size_t k = 0; k < ev.n_rows; ++k) scale = std::max(scale, std::abs(col[k]));
    for (std::size_t k = 0; k < ev.n_rows; ++k)
      worst = std::max(worst, std::abs((ep.expected[k] - em.expected[k]) / denom - col[k]));
    const double dev = scale > 0.0 ? worst / scale : worst;
    out.deviations[q] = dev;
    ++out.n_checked;
    if (out.worst_parameter.empty() || dev > out.max_deviation) {
      out.max_deviation = dev;
      out.worst_parameter = param_at(q, n).name();
    }
  }
  return out;
}

}  // namespace pals
