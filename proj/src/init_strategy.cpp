#include "confound_em/init_strategy.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "confound_em/errors.hpp"

namespace confound_em {

namespace {

// Dense cluster indices 0..G-1 in order of first appearance.
std::vector<int> compact_groups(const std::vector<int>& groups, int& count) {
  std::map<int, int> index;
  std::vector<int> out(groups.size());
  for (std::size_t r = 0; r < groups.size(); ++r) {
    auto [it, inserted] = index.emplace(groups[r], static_cast<int>(index.size()));
    out[r] = it->second;
  }
  count = static_cast<int>(index.size());
  return out;
}

Eigen::LDLT<Eigen::MatrixXd> factor_normal(const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd xtx = X.transpose() * X;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xtx, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues()(0);
  const double hi = eig.eigenvalues()(eig.eigenvalues().size() - 1);
  if (!(lo > 0.0) || hi / lo > 1e12) throw RankDeficiencyError("fit_lmm: X'X is singular");
  return xtx.ldlt();
}

}  // namespace

LmmFit fit_lmm(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, const std::vector<int>& groups) {
  if (y.size() != X.rows() || static_cast<std::size_t>(y.size()) != groups.size()) {
    throw std::invalid_argument("fit_lmm: dimension mismatch");
  }
  if (X.rows() <= X.cols()) throw RankDeficiencyError("fit_lmm: fewer rows than columns");
  int g_count = 0;
  const std::vector<int> g = compact_groups(groups, g_count);
  const auto normal = factor_normal(X);
  const double n = static_cast<double>(y.size());

  LmmFit out;
  out.beta = normal.solve(X.transpose() * y);
  Eigen::VectorXd r = y - X * out.beta;
  const double rss = r.squaredNorm() / n;

  Eigen::VectorXd sizes = Eigen::VectorXd::Zero(g_count);
  for (int gi : g) sizes(gi) += 1.0;
  if (sizes.maxCoeff() <= 1.0) {
    out.sigma2 = rss;
    out.sigma_b2 = 0.0;
    out.converged = true;
    out.notes.push_back("one record per cluster: variance components not separately identified; sigma_b2 set to 0");
    return out;
  }

  double s2 = 0.5 * rss, sb2 = 0.5 * rss;
  constexpr double kTiny = 1e-12;
  Eigen::VectorXd sum_r(g_count), mean(g_count), var(g_count);
  for (int iter = 0; iter < 200; ++iter) {
    sum_r.setZero();
    for (Eigen::Index k = 0; k < y.size(); ++k) sum_r(g[k]) += r(k);
    for (int c = 0; c < g_count; ++c) {
      const double a = sizes(c) / s2 + 1.0 / std::max(sb2, kTiny);
      mean(c) = sum_r(c) / s2 / a;
      var(c) = 1.0 / a;
    }
    Eigen::VectorXd target = y;
    for (Eigen::Index k = 0; k < y.size(); ++k) target(k) -= mean(g[k]);
    const Eigen::VectorXd beta = normal.solve(X.transpose() * target);
    r = y - X * beta;
    double ss = 0.0;
    for (Eigen::Index k = 0; k < y.size(); ++k) {
      const double e = r(k) - mean(g[k]);
      ss += e * e + var(g[k]);
    }
    const double s2_new = std::max(ss / n, kTiny);
    const double sb2_new = (mean.array().square() + var.array()).mean();
    const double change = std::max({((beta - out.beta).array().abs() / (1.0 + out.beta.array().abs())).maxCoeff(),
                                    std::abs(s2_new - s2) / (1.0 + s2), std::abs(sb2_new - sb2) / (1.0 + sb2)});
    out.beta = beta;
    s2 = s2_new;
    sb2 = sb2_new;
    out.iterations = iter + 1;
    if (change < 1e-8) {
      out.converged = true;
      break;
    }
  }
  out.sigma2 = s2;
  out.sigma_b2 = sb2 < 1e-10 ? 0.0 : sb2;
  if (!out.converged) out.notes.push_back("LMM EM stopped at 200 iterations");
  return out;
}

LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& d,
                         const Eigen::VectorXd& offset) {
  const Eigen::Index p = X.cols();
  const bool has_offset = offset.size() == X.rows();
  LogisticFit out;
  out.coef = Eigen::VectorXd::Zero(p);
  auto loglik = [&](const Eigen::VectorXd& c) {
    Eigen::VectorXd lin = X * c;
    if (has_offset) lin += offset;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < lin.size(); ++k) acc += d(k) * lin(k) - softplus(lin(k));
    return acc;
  };
  double ll = loglik(out.coef);
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd lin = X * out.coef;
    if (has_offset) lin += offset;
    Eigen::VectorXd w(lin.size()), resid(lin.size());
    for (Eigen::Index k = 0; k < lin.size(); ++k) {
      const double pk = expit(lin(k));
      w(k) = pk * (1.0 - pk);
      resid(k) = d(k) - pk;
    }
    const Eigen::MatrixXd info = X.transpose() * w.asDiagonal() * X;
    const Eigen::VectorXd grad = X.transpose() * resid;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    double ridge = 1e-8;
    while (llt.info() != Eigen::Success && ridge <= 1e-2) {
      llt.compute(info + ridge * Eigen::MatrixXd::Identity(p, p));
      ridge *= 10;
    }
    if (llt.info() != Eigen::Success) throw IllConditionedError("logistic IRLS: information matrix singular");
    Eigen::VectorXd step = llt.solve(grad);
    if (step.norm() > 1e3) {
      step *= 1e3 / step.norm();
      out.capped = true;
    }
    double scale = 1.0;
    Eigen::VectorXd cand = out.coef + step;
    double ll_new = loglik(cand);
    for (int h = 0; h < 30 && ll_new < ll; ++h) {
      scale *= 0.5;
      cand = out.coef + scale * step;
      ll_new = loglik(cand);
    }
    const double moved = (cand - out.coef).squaredNorm();
    out.coef = cand;
    ll = ll_new;
    out.iterations = iter + 1;
    if (moved < 1e-20 || grad.lpNorm<Eigen::Infinity>() < 1e-12) {
      out.converged = true;
      break;
    }
  }
  return out;
}

namespace {

struct StackedRows {
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  std::vector<int> groups;
};

// Rows of the stacked design; `which` = -1 for all rows, else the treatment value kept.
StackedRows stack_rows(const ExpandedDesign& design, bool interaction_design, int which) {
  std::size_t n = 0;
  for (const auto& s : design.subjects)
    for (Eigen::Index j = 0; j < s.n(); ++j)
      if (which < 0 || s.d(j) == which) ++n;
  const Eigen::Index cols = interaction_design ? 2 * design.q() : design.q();
  StackedRows out;
  out.y.resize(static_cast<Eigen::Index>(n));
  out.X.resize(static_cast<Eigen::Index>(n), cols);
  out.groups.reserve(n);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < design.m(); ++i) {
    const SubjectDesign& s = design.subjects[i];
    for (Eigen::Index j = 0; j < s.n(); ++j) {
      if (which >= 0 && s.d(j) != which) continue;
      out.y(row) = s.y(j);
      out.X.row(row) = interaction_design ? s.x_tilde.row(j) : s.x_star.row(j);
      out.groups.push_back(static_cast<int>(i));
      ++row;
    }
  }
  return out;
}

}  // namespace

BetaSigmaInit init_beta_sigma(const ExpandedDesign& design) {
  const StackedRows rows = stack_rows(design, true, -1);
  const LmmFit lmm = fit_lmm(rows.y, rows.X, rows.groups);
  BetaSigmaInit out;
  out.beta = lmm.beta;
  out.sigma = std::sqrt(std::max(lmm.sigma2, kSigmaFloor * kSigmaFloor));
  out.sigma_b2 = lmm.sigma_b2;
  out.notes = lmm.notes;
  return out;
}

OmegaSigmaBInit init_omega_sigma_b(const ExpandedDesign& design) {
  OmegaSigmaBInit out;
  auto fallback = [&](const std::string& why) {
    out.fallback = true;
    out.omega = 0.0;
    out.sigma_b2 = init_beta_sigma(design).sigma_b2;
    out.notes.push_back(why + "; omega initialized at 0 and sigma_b^2 from the pooled LMM");
    return out;
  };
  const StackedRows treated = stack_rows(design, false, 1);
  const StackedRows untreated = stack_rows(design, false, 0);
  if (treated.y.size() == 0 || untreated.y.size() == 0) {
    return fallback("treated or untreated record set is empty");
  }
  LmmFit fit_t, fit_u;
  try {
    fit_t = fit_lmm(treated.y, treated.X, treated.groups);
    fit_u = fit_lmm(untreated.y, untreated.X, untreated.groups);
  } catch (const NumericalError& e) {
    return fallback(std::string("treated/untreated LMM failed (") + e.what() + ")");
  }
  out.var_treated = fit_t.sigma_b2;
  out.var_untreated = fit_u.sigma_b2;
  if (!(fit_u.sigma_b2 > kSigmaBFloor * kSigmaBFloor)) {
    return fallback("untreated random-effect variance is zero");
  }
  out.sigma_b2 = fit_u.sigma_b2;
  out.omega = std::sqrt(fit_t.sigma_b2 / fit_u.sigma_b2) - 1.0;
  if (out.omega < 0.0) {
    out.notes.push_back("treated random-effect variance below untreated: omega starts in (-1, 0)");
  }
  return out;
}

LogisticGlmmFit fit_logistic_glmm(const ExpandedDesign& design) {
  std::size_t n = design.n_records();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), design.q());
  Eigen::VectorXd d(static_cast<Eigen::Index>(n));
  Eigen::Index row = 0;
  for (const auto& s : design.subjects) {
    X.middleRows(row, s.n()) = s.x_star;
    d.segment(row, s.n()) = s.d;
    row += s.n();
  }
  LogisticGlmmFit out;
  LogisticFit start = fit_logistic(X, d);
  if (start.capped) out.notes.push_back("logistic start: separation suspected, step capped");
  out.eta = start.coef;
  double tau2 = 0.5;
  Eigen::VectorXd mode = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(design.m()));
  Eigen::VectorXd offset(static_cast<Eigen::Index>(n));

  for (int iter = 0; iter < 100; ++iter) {
    // Laplace E-step: mode and curvature of log f(d_i | b) + log f(b) per subject.
    double second = 0.0;
    row = 0;
    for (std::size_t i = 0; i < design.m(); ++i) {
      const SubjectDesign& s = design.subjects[i];
      const Eigen::VectorXd lin = s.x_star * out.eta;
      double b = mode(static_cast<Eigen::Index>(i));
      double curv = 1.0 / tau2;
      for (int k = 0; k < 50; ++k) {
        double g = -b / tau2;
        curv = 1.0 / tau2;
        for (Eigen::Index j = 0; j < s.n(); ++j) {
          const double p = expit(lin(j) + b);
          g += s.d(j) - p;
          curv += p * (1.0 - p);
        }
        const double step = g / curv;
        b += step;
        if (std::abs(step) < 1e-10) break;
      }
      mode(static_cast<Eigen::Index>(i)) = b;
      second += b * b + 1.0 / curv;
      offset.segment(row, s.n()).setConstant(b);
      row += s.n();
    }
    const double tau2_new = std::max(second / static_cast<double>(design.m()), 1e-10);
    LogisticFit step = fit_logistic(X, d, offset);
    if (step.capped && out.notes.empty()) out.notes.push_back("GLMM: separation suspected, step capped");
    const double change = std::max(((step.coef - out.eta).array().abs() / (1.0 + out.eta.array().abs())).maxCoeff(),
                                   std::abs(tau2_new - tau2) / (1.0 + tau2));
    out.eta = step.coef;
    tau2 = tau2_new;
    out.iterations = iter + 1;
    if (change < 1e-6) {
      out.converged = true;
      break;
    }
  }
  out.random_var = tau2 < 1e-8 ? 0.0 : tau2;
  if (!out.converged) out.notes.push_back("logistic GLMM stopped at 100 iterations");
  return out;
}

EtaXiInit init_eta_xi(const ExpandedDesign& design, double sigma_b2) {
  const LogisticGlmmFit glmm = fit_logistic_glmm(design);
  EtaXiInit out;
  out.eta = glmm.eta;
  out.random_var = glmm.random_var;
  out.notes = glmm.notes;
  if (!(sigma_b2 > 0.0)) {
    out.xi0 = 0.0;
    out.xi_candidates = {0.0};
    out.notes.push_back("sigma_b^2 is zero: single candidate xi = 0");
    return out;
  }
  out.xi0 = std::sqrt(glmm.random_var / sigma_b2);
  if (out.xi0 > 0.0) {
    out.xi_candidates = {out.xi0, -out.xi0};
  } else {
    out.xi_candidates = {0.0};
  }
  return out;
}

InitReport select_init(const ExpandedDesign& design, const std::vector<Theta>& candidates,
                       const FitConfig& cfg) {
  if (candidates.empty()) throw std::invalid_argument("select_init: no candidates");
  FitConfig probe = cfg;
  probe.max_em_iters = kInitProbeIterations;
  InitReport report;
  bool any = false;
  std::string causes;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    InitCandidate c;
    c.theta = candidates[k];
    try {
      const FitResult r = fit(design, c.theta, probe);
      c.short_run_loglik = r.loglik_trace.empty() ? r.initial_loglik : r.loglik_trace.back();
      c.ok = std::isfinite(c.short_run_loglik);
      if (!c.ok) c.error = "non-finite log-likelihood";
    } catch (const std::exception& e) {
      c.ok = false;
      c.error = e.what();
    }
    if (c.ok && (!any || c.short_run_loglik > report.candidates_tried[report.chosen].short_run_loglik)) {
      report.chosen = k;
      any = true;
    }
    if (!c.ok) causes += "\n  candidate " + std::to_string(k) + ": " + c.error;
    report.candidates_tried.push_back(std::move(c));
  }
  if (!any) throw NumericalError("all initialization candidates failed:" + causes);
  report.theta0 = report.candidates_tried[report.chosen].theta;
  return report;
}

InitReport initialize(const ExpandedDesign& design, const FitConfig& cfg) {
  std::vector<std::string> notes;
  const BetaSigmaInit bs = init_beta_sigma(design);
  notes.insert(notes.end(), bs.notes.begin(), bs.notes.end());
  const OmegaSigmaBInit os = init_omega_sigma_b(design);
  notes.insert(notes.end(), os.notes.begin(), os.notes.end());

  Theta base;
  base.beta = bs.beta;
  base.sigma = std::max(bs.sigma, cfg.sigma_floor);
  base.omega = os.omega;
  // EM cannot leave sigma_b = 0, so starts are kept away from the floor.
  const double sigma_b_min = 0.1 * base.sigma;
  base.sigma_b = std::sqrt(std::max(os.sigma_b2, 0.0));
  if (base.sigma_b < sigma_b_min) {
    base.sigma_b = std::max(sigma_b_min, cfg.sigma_b_floor);
    notes.push_back("sigma_b start raised to 0.1 * sigma");
  }
  const EtaXiInit ex = init_eta_xi(design, base.sigma_b * base.sigma_b);
  notes.insert(notes.end(), ex.notes.begin(), ex.notes.end());
  base.eta = ex.eta;

  std::vector<Theta> candidates;
  for (double xi : ex.xi_candidates) {
    Theta t = base;
    t.xi = xi;
    candidates.push_back(t);
  }
  InitReport report = select_init(design, candidates, cfg);
  report.notes.insert(report.notes.begin(), notes.begin(), notes.end());
  return report;
}

}  // namespace confound_em
