#include "confound_em/em_engine.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "confound_em/errors.hpp"

namespace confound_em {

void FitConfig::check() const {
  if (max_em_iters <= 0 || em_tol <= 0 || newton_max_iters <= 0 || newton_tol <= 0 ||
      step_halving_max <= 0 || sigma_floor <= 0 || sigma_b_floor <= 0) {
    throw ConfigError("fit configuration values must all be positive");
  }
}

std::vector<PosteriorSummary> e_step(const ExpandedDesign& design, const Theta& th,
                                     std::vector<std::string>* diagnostics) {
  std::vector<PosteriorSummary> out;
  out.reserve(design.m());
  for (const auto& s : design.subjects) out.push_back(posterior_moments(s, th, diagnostics));
  return out;
}

namespace {

void check_posterior(const ExpandedDesign& design, const std::vector<PosteriorSummary>& posterior) {
  if (posterior.size() != design.m()) {
    throw std::invalid_argument("posterior summaries do not match the number of subjects");
  }
}

std::string design_column_name(const ExpandedDesign& design, Eigen::Index c) {
  const Eigen::Index q = design.q();
  return c < q ? design.covariate_names[static_cast<std::size_t>(c)]
               : "d*" + design.covariate_names[static_cast<std::size_t>(c - q)];
}

}  // namespace

Eigen::VectorXd m_step_beta(const ExpandedDesign& design,
                            const std::vector<PosteriorSummary>& posterior, double omega) {
  check_posterior(design, posterior);
  const Eigen::Index p = 2 * design.q();
  Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  for (std::size_t i = 0; i < design.m(); ++i) {
    const SubjectDesign& s = design.subjects[i];
    normal.noalias() += s.x_tilde.transpose() * s.x_tilde;
    const Eigen::VectorXd target =
        s.y - (Eigen::VectorXd::Ones(s.n()) + omega * s.d) * posterior[i].mean;
    rhs.noalias() += s.x_tilde.transpose() * target;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal);
  const double lo = eig.eigenvalues()(0);
  const double hi = eig.eigenvalues()(p - 1);
  if (!(lo > 0.0) || hi / lo > 1e12) {
    std::set<Eigen::Index> offending;
    for (Eigen::Index k = 0; k < p; ++k) {
      if (eig.eigenvalues()(k) > 0.0 && hi / eig.eigenvalues()(k) <= 1e12) break;
      for (Eigen::Index c = 0; c < p; ++c) {
        if (std::abs(eig.eigenvectors()(c, k)) > 0.1) offending.insert(c);
      }
    }
    std::ostringstream msg;
    msg << "outcome design is rank deficient (condition estimate "
        << (lo > 0.0 ? hi / lo : INFINITY) << "); involved columns:";
    for (auto c : offending) msg << ' ' << design_column_name(design, c);
    throw RankDeficiencyError(msg.str());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(normal);
  return llt.solve(rhs);
}

double m_step_omega(const ExpandedDesign& design, const std::vector<PosteriorSummary>& posterior,
                    const Eigen::VectorXd& beta) {
  check_posterior(design, posterior);
  double numer = 0.0;
  double denom = 0.0;
  for (std::size_t i = 0; i < design.m(); ++i) {
    const SubjectDesign& s = design.subjects[i];
    const Eigen::VectorXd r = s.y - s.x_tilde * beta;
    numer += r.dot(s.d) * posterior[i].mean;
    denom += s.d.sum() * posterior[i].second_moment;
  }
  if (!(denom > 0.0)) throw IdentificationError("omega unidentified: no treated records carry posterior mass");
  return numer / denom - 1.0;
}

double m_step_sigma2(const ExpandedDesign& design, const std::vector<PosteriorSummary>& posterior,
                     const Eigen::VectorXd& beta, double omega, double sigma_floor,
                     std::vector<std::string>* diagnostics) {
  check_posterior(design, posterior);
  const double n = static_cast<double>(design.n_records());
  if (!(n > 0)) throw std::invalid_argument("m_step_sigma2: no records");
  double rss = 0.0, cross = 0.0, load = 0.0;
  for (std::size_t i = 0; i < design.m(); ++i) {
    const SubjectDesign& s = design.subjects[i];
    const Eigen::VectorXd r = s.y - s.x_tilde * beta;
    const Eigen::VectorXd c = Eigen::VectorXd::Ones(s.n()) + omega * s.d;
    rss += r.squaredNorm();
    cross += r.dot(c) * posterior[i].mean;
    load += c.squaredNorm() * posterior[i].second_moment;
  }
  const double sigma2 = rss / n - 2.0 * cross / n + load / n;
  const double floor2 = sigma_floor * sigma_floor;
  if (!(sigma2 >= floor2)) {
    if (diagnostics) diagnostics->push_back("sigma^2 update floored at sigma_floor^2");
    return floor2;
  }
  return sigma2;
}

double m_step_sigma_b2(const std::vector<PosteriorSummary>& posterior, double sigma_b_floor,
                       std::vector<std::string>* diagnostics) {
  if (posterior.empty()) throw std::invalid_argument("m_step_sigma_b2: no subjects");
  double acc = 0.0;
  for (const auto& p : posterior) acc += p.second_moment;
  const double v = acc / static_cast<double>(posterior.size());
  const double floor2 = sigma_b_floor * sigma_b_floor;
  if (!(v >= floor2)) {
    if (diagnostics) diagnostics->push_back("sigma_b^2 update floored at sigma_b_floor^2");
    return floor2;
  }
  return v;
}

double q1_objective(const ExpandedDesign& design, const std::vector<PosteriorSummary>& posterior,
                    const Eigen::VectorXd& beta, double omega, double sigma2) {
  check_posterior(design, posterior);
  constexpr double kLog2Pi = 1.8378770664093454836;
  double acc = 0.0;
  for (std::size_t i = 0; i < design.m(); ++i) {
    const SubjectDesign& s = design.subjects[i];
    const Eigen::VectorXd r = s.y - s.x_tilde * beta;
    const Eigen::VectorXd c = Eigen::VectorXd::Ones(s.n()) + omega * s.d;
    // E[ ||r - c b||^2 ] under the summarized posterior.
    const double expected_ss =
        r.squaredNorm() - 2.0 * r.dot(c) * posterior[i].mean + c.squaredNorm() * posterior[i].second_moment;
    acc += -0.5 * static_cast<double>(s.n()) * (kLog2Pi + std::log(sigma2)) - 0.5 * expected_ss / sigma2;
  }
  return acc;
}

Q2Evaluation q2_objective(const ExpandedDesign& design,
                          const std::vector<PosteriorSummary>& posterior,
                          const Eigen::VectorXd& eta, double xi) {
  check_posterior(design, posterior);
  const Eigen::Index q = design.q();
  Q2Evaluation ev;
  ev.gradient = Eigen::VectorXd::Zero(q + 1);
  ev.hessian = Eigen::MatrixXd::Zero(q + 1, q + 1);
  Eigen::VectorXd u(q + 1);
  for (std::size_t i = 0; i < design.m(); ++i) {
    const SubjectDesign& s = design.subjects[i];
    const double mode = posterior[i].b_mode;
    const double mean = posterior[i].mean;
    const Eigen::VectorXd lin = s.x_star * eta;
    for (Eigen::Index j = 0; j < s.n(); ++j) {
      const double arg = lin(j) + xi * mode;
      const double p = expit(arg);
      ev.value += s.d(j) * (lin(j) + xi * mean) - softplus(arg);
      u.head(q) = s.x_star.row(j).transpose();
      u(q) = mode;
      ev.gradient.head(q) += (s.d(j) - p) * u.head(q);
      ev.gradient(q) += s.d(j) * mean - mode * p;
      ev.hessian.selfadjointView<Eigen::Lower>().rankUpdate(u, -p * (1.0 - p));
    }
  }
  ev.hessian = ev.hessian.selfadjointView<Eigen::Lower>();
  return ev;
}

double q2_value(const ExpandedDesign& design, const std::vector<PosteriorSummary>& posterior,
                const Eigen::VectorXd& eta, double xi) {
  check_posterior(design, posterior);
  double value = 0.0;
  for (std::size_t i = 0; i < design.m(); ++i) {
    const SubjectDesign& s = design.subjects[i];
    const Eigen::VectorXd lin = s.x_star * eta;
    for (Eigen::Index j = 0; j < s.n(); ++j) {
      value += s.d(j) * (lin(j) + xi * posterior[i].mean) - softplus(lin(j) + xi * posterior[i].b_mode);
    }
  }
  return value;
}

PsUpdate newton_eta_xi(const ExpandedDesign& design, const std::vector<PosteriorSummary>& posterior,
                       const Eigen::VectorXd& eta, double xi, const FitConfig& cfg) {
  const Eigen::Index q = design.q();
  Eigen::VectorXd x(q + 1);
  x.head(q) = eta;
  x(q) = xi;
  PsUpdate out;
  for (int iter = 0; iter < cfg.newton_max_iters; ++iter) {
    const Q2Evaluation ev = q2_objective(design, posterior, x.head(q), x(q));
    const Eigen::MatrixXd neg_h = -ev.hessian;
    Eigen::LLT<Eigen::MatrixXd> llt(neg_h);
    double ridge = 1e-8;
    while (llt.info() != Eigen::Success) {
      if (ridge > 1e-2 * (1.0 + 1e-9)) {
        throw IllConditionedError("PS update ill-conditioned: Hessian not negative definite");
      }
      llt.compute(neg_h + ridge * Eigen::MatrixXd::Identity(q + 1, q + 1));
      ridge *= 10.0;
    }
    const Eigen::VectorXd step = llt.solve(ev.gradient);
    if (!step.allFinite()) throw IllConditionedError("PS update ill-conditioned: non-finite step");

    double scale = 1.0;
    bool accepted = false;
    Eigen::VectorXd candidate;
    for (int h = 0; h <= cfg.step_halving_max; ++h) {
      candidate = x + scale * step;
      if (q2_value(design, posterior, candidate.head(q), candidate(q)) >= ev.value) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    out.iterations = iter + 1;
    if (!accepted) break;
    const double moved = (candidate - x).squaredNorm();
    x = candidate;
    if (moved < cfg.newton_tol) {
      out.reached_tol = true;
      break;
    }
  }
  out.eta = x.head(q);
  out.xi = x(q);
  return out;
}

namespace {

void append_unique(std::vector<std::string>& sink, const std::vector<std::string>& items) {
  constexpr std::size_t kMaxDiagnostics = 100;
  for (const auto& item : items) {
    if (sink.size() >= kMaxDiagnostics) return;
    if (std::find(sink.begin(), sink.end(), item) == sink.end()) sink.push_back(item);
  }
}

double max_relative_change(const Eigen::VectorXd& next, const Eigen::VectorXd& prev) {
  return ((next - prev).array().abs() / (1.0 + prev.array().abs())).maxCoeff();
}

}  // namespace

FitResult fit(const ExpandedDesign& design, const Theta& init, const FitConfig& cfg) {
  cfg.check();
  init.check(design.q());
  FitResult result;
  Theta th = init;
  result.initial_loglik = observed_loglik(design, th);
  double prev_ll = result.initial_loglik;
  std::vector<std::string> notes;
  std::vector<PosteriorSummary> post = e_step(design, th, &notes);
  append_unique(result.diagnostics, notes);

  for (int iter = 0; iter < cfg.max_em_iters; ++iter) {
    Theta next = th;
    next.beta = m_step_beta(design, post, th.omega);
    next.omega = m_step_omega(design, post, next.beta);
    notes.clear();
    next.sigma = std::sqrt(m_step_sigma2(design, post, next.beta, next.omega, cfg.sigma_floor, &notes));
    next.sigma_b = std::sqrt(m_step_sigma_b2(post, cfg.sigma_b_floor, &notes));
    const PsUpdate ps = newton_eta_xi(design, post, th.eta, th.xi, cfg);
    next.eta = ps.eta;
    next.xi = ps.xi;
    if (!next.flatten().allFinite()) {
      throw NumericalError("EM iteration " + std::to_string(iter + 1) + " produced non-finite parameters");
    }

    std::vector<PosteriorSummary> next_post;
    try {
      next_post = e_step(design, next, &notes);
    } catch (const NumericalError& e) {
      result.diagnostics.push_back("E-step failed after iteration " + std::to_string(iter + 1) + " (" + e.what() +
                                   "); stopped at the last iterate with valid posterior moments");
      break;
    }
    append_unique(result.diagnostics, notes);

    const double ll = observed_loglik(design, next);
    result.loglik_trace.push_back(ll);
    result.n_iters = iter + 1;
    const double param_change = max_relative_change(next.flatten(), th.flatten());
    const double ll_change = std::abs(ll - prev_ll) / (1.0 + std::abs(ll));
    th = next;
    post = std::move(next_post);
    prev_ll = ll;
    if (param_change < cfg.em_tol && ll_change < cfg.em_tol) {
      result.converged = true;
      break;
    }
  }
  if (!result.converged && result.n_iters == cfg.max_em_iters) {
    result.diagnostics.push_back("EM did not converge within " + std::to_string(cfg.max_em_iters) +
                                 " iterations");
  }
  result.theta = th;
  result.posterior = std::move(post);
  return result;
}

}  // namespace confound_em
