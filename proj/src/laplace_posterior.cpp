#include "confound_em/laplace_posterior.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include "confound_em/errors.hpp"

namespace confound_em {

void Theta::check(Eigen::Index q) const {
  if (eta.size() != q || beta.size() != 2 * q) {
    throw std::invalid_argument("theta: expected |eta| = " + std::to_string(q) + " and |beta| = " +
                                std::to_string(2 * q));
  }
  if (!beta.allFinite() || !eta.allFinite() || !std::isfinite(sigma) || !std::isfinite(omega) ||
      !std::isfinite(xi) || !std::isfinite(sigma_b)) {
    throw std::invalid_argument("theta: non-finite entry");
  }
  if (sigma < kSigmaFloor || sigma_b < kSigmaBFloor) {
    throw std::invalid_argument("theta: sigma and sigma_b must be at least their floors");
  }
}

Eigen::VectorXd Theta::flatten() const {
  Eigen::VectorXd v(beta.size() + eta.size() + 4);
  Eigen::Index k = 0;
  v.segment(k, beta.size()) = beta;
  k += beta.size();
  v(k++) = sigma;
  v(k++) = omega;
  v.segment(k, eta.size()) = eta;
  k += eta.size();
  v(k++) = xi;
  v(k++) = sigma_b;
  return v;
}

std::vector<std::string> parameter_names(const std::vector<std::string>& covariate_names) {
  std::vector<std::string> names;
  for (const auto& c : covariate_names) names.push_back("beta[" + c + "]");
  for (const auto& c : covariate_names) names.push_back("beta_d[" + c + "]");
  names.push_back("sigma");
  names.push_back("omega");
  for (const auto& c : covariate_names) names.push_back("eta[" + c + "]");
  names.push_back("xi");
  names.push_back("sigma_b");
  return names;
}

double softplus(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }

double log_sigmoid(double u) { return -softplus(-u); }

double expit(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Quantities of one subject that do not depend on b.
struct SubjectTerms {
  Eigen::VectorXd residual;  // y - X~ beta
  Eigen::VectorXd load;      // 1 + omega d
  Eigen::VectorXd ps_lin;    // X* eta
  double inv_s2 = 1.0;       // 1 / sigma^2
  double inv_sb2 = 1.0;      // 1 / sigma_b^2
  double precision = 1.0;    // A
  double score = 0.0;        // c, so that the Gaussian mode is c / A
};

SubjectTerms make_terms(const SubjectDesign& s, const Theta& th) {
  SubjectTerms t;
  t.residual = s.y - s.x_tilde * th.beta;
  t.load = Eigen::VectorXd::Ones(s.n()) + th.omega * s.d;
  t.ps_lin = s.x_star * th.eta;
  t.inv_s2 = 1.0 / (th.sigma * th.sigma);
  t.inv_sb2 = 1.0 / (th.sigma_b * th.sigma_b);
  t.precision = t.inv_s2 * t.load.squaredNorm() + t.inv_sb2;
  t.score = t.inv_s2 * t.residual.dot(t.load);
  return t;
}

double log_f_y(const SubjectTerms& t, const Theta& th, double b) {
  const double n = static_cast<double>(t.residual.size());
  const double ss = (t.residual - t.load * b).squaredNorm();
  return -0.5 * n * (kLog2Pi + 2.0 * std::log(th.sigma)) - 0.5 * ss * t.inv_s2;
}

double log_f_d(const SubjectTerms& t, const SubjectDesign& s, double xi, double b) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < s.n(); ++j) {
    const double u = t.ps_lin(j) + xi * b;
    acc += s.d(j) * u - softplus(u);
  }
  return acc;
}

double log_f_b(const Theta& th, double b) {
  return -0.5 * (kLog2Pi + 2.0 * std::log(th.sigma_b)) - 0.5 * b * b / (th.sigma_b * th.sigma_b);
}

// [log f(d|b_t) + log f(y|b_t) + log f(b_t) + t b_t] - [same at b_0, without t b].
// Each density is differenced term by term so that no large constants cancel.
double log_mgf_terms(const SubjectTerms& t, const SubjectDesign& s, const Theta& th, double tt) {
  const double b0 = t.score / t.precision;
  const double bt = (tt + t.score) / t.precision;
  const double delta = bt - b0;
  const double sum_b = bt + b0;
  double gauss = 0.0;
  for (Eigen::Index j = 0; j < s.n(); ++j) {
    gauss += t.load(j) * (2.0 * t.residual(j) - t.load(j) * sum_b);
  }
  gauss *= 0.5 * t.inv_s2 * delta;
  const double prior = -0.5 * t.inv_sb2 * delta * sum_b;
  double ps = 0.0;
  for (Eigen::Index j = 0; j < s.n(); ++j) {
    const double u0 = t.ps_lin(j) + th.xi * b0;
    const double ut = t.ps_lin(j) + th.xi * bt;
    ps += s.d(j) * th.xi * delta - (softplus(ut) - softplus(u0));
  }
  return (gauss + prior + ps + tt * bt) + 0.0;
}

double step_for(double precision) { return 1e-2 * std::sqrt(precision); }

}  // namespace

double log_joint(double b, const SubjectDesign& subject, const Theta& th) {
  const SubjectTerms t = make_terms(subject, th);
  return log_f_y(t, th, b) + log_f_d(t, subject, th.xi, b) + log_f_b(th, b);
}

ModeCurvature case1_mode(const SubjectDesign& subject, const Theta& th) {
  const SubjectTerms t = make_terms(subject, th);
  return {t.score / t.precision, t.precision};
}

double case2_mode(const SubjectDesign& subject, const Theta& th, double t) {
  const SubjectTerms terms = make_terms(subject, th);
  return (t + terms.score) / terms.precision;
}

double mgf_step(const ModeCurvature& mc) { return step_for(mc.precision); }

double log_mgf(const SubjectDesign& subject, const Theta& th, double t) {
  if (t == 0.0) return 0.0;
  const SubjectTerms terms = make_terms(subject, th);
  return log_mgf_terms(terms, subject, th, t);
}

PosteriorSummary posterior_moments(const SubjectDesign& subject, const Theta& th,
                                   std::vector<std::string>* diagnostics) {
  const SubjectTerms terms = make_terms(subject, th);
  const double h = step_for(terms.precision);
  const double fp1 = log_mgf_terms(terms, subject, th, h);
  const double fm1 = log_mgf_terms(terms, subject, th, -h);
  const double fp2 = log_mgf_terms(terms, subject, th, 2 * h);
  const double fm2 = log_mgf_terms(terms, subject, th, -2 * h);

  PosteriorSummary ps;
  ps.b_mode = terms.score / terms.precision;
  ps.precision = terms.precision;
  // Five-point stencils (Richardson combination of the h and 2h central differences).
  ps.mean = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h);
  double var = (-fp2 + 16.0 * fp1 + 16.0 * fm1 - fm2) / (12.0 * h * h);  // f(0) = 0
  if (var < 0.0) {
    if (var < -1e-8) {
      throw NumericalError("posterior variance of subject '" + subject.id +
                           "' is negative (" + std::to_string(var) + ")");
    }
    if (diagnostics) {
      diagnostics->push_back("posterior variance of subject '" + subject.id + "' clamped to 0");
    }
    var = 0.0;
  }
  ps.variance = var;
  ps.second_moment = var + ps.mean * ps.mean;
  return ps;
}

double subject_observed_loglik(const SubjectDesign& subject, const Theta& th) {
  const SubjectTerms t = make_terms(subject, th);
  const double b = t.score / t.precision;
  return log_f_d(t, subject, th.xi, b) + log_f_y(t, th, b) + log_f_b(th, b) + 0.5 * kLog2Pi -
         0.5 * std::log(t.precision);
}

double observed_loglik(const ExpandedDesign& design, const Theta& th) {
  double acc = 0.0;
  for (const auto& s : design.subjects) acc += subject_observed_loglik(s, th);
  return acc;
}

Eigen::VectorXd expected_softplus(const SubjectDesign& subject, const Theta& th,
                                  const Eigen::VectorXd& eta, double xi) {
  const ModeCurvature mc = case1_mode(subject, th);
  const Eigen::VectorXd lin = subject.x_star * eta;
  Eigen::VectorXd out(subject.n());
  for (Eigen::Index j = 0; j < subject.n(); ++j) out(j) = softplus(lin(j) + xi * mc.b_mode);
  return out;
}

const GaussHermiteRule& gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: n must be positive");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[n];
  if (slot) return *slot;

  // Golub-Welsch for starting nodes, then Newton on the orthonormal Hermite
  // recurrence, which also yields accurate weights in the tails.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi, Eigen::EigenvaluesOnly);
  auto rule = std::make_unique<GaussHermiteRule>();
  rule->nodes = eig.eigenvalues();
  rule->weights.resize(n);
  const double p0 = 1.0 / std::pow(std::numbers::pi, 0.25);
  for (int i = 0; i < n; ++i) {
    double x = rule->nodes(i);
    double deriv = 1.0;
    for (int iter = 0; iter < 10; ++iter) {
      double pm1 = p0, pm2 = 0.0, p = p0;
      for (int j = 1; j <= n; ++j) {
        p = x * std::sqrt(2.0 / j) * pm1 - std::sqrt((j - 1.0) / j) * pm2;
        pm2 = pm1;
        pm1 = p;
      }
      deriv = std::sqrt(2.0 * n) * pm2;
      const double dx = p / deriv;
      x -= dx;
      if (std::abs(dx) < 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    rule->nodes(i) = x;
    rule->weights(i) = 2.0 / (deriv * deriv);
  }
  slot = std::move(rule);
  return *slot;
}

QuadratureMoments quadrature_moments(const SubjectDesign& subject, const Theta& th, int nodes) {
  if (nodes < 10) throw std::invalid_argument("quadrature_moments: need at least 10 nodes");
  const SubjectTerms t = make_terms(subject, th);

  auto gradient = [&](double b, double& curvature) {
    double g = t.inv_s2 * (t.residual - t.load * b).dot(t.load) - t.inv_sb2 * b;
    curvature = t.precision;
    for (Eigen::Index j = 0; j < subject.n(); ++j) {
      const double p = expit(t.ps_lin(j) + th.xi * b);
      g += th.xi * (subject.d(j) - p);
      curvature += th.xi * th.xi * p * (1.0 - p);
    }
    return g;
  };

  // log_joint is strictly concave; plain Newton from the Gaussian mode.
  double b = t.score / t.precision;
  double curvature = t.precision;
  bool found = false;
  for (int iter = 0; iter < 100; ++iter) {
    const double g = gradient(b, curvature);
    const double step = g / curvature;
    b += step;
    if (std::abs(step) < 1e-13 * (1.0 + std::abs(b))) {
      found = true;
      break;
    }
  }
  if (!found || !std::isfinite(b)) {
    throw NumericalError("quadrature_moments: mode search failed for subject '" + subject.id + "'");
  }
  gradient(b, curvature);

  const GaussHermiteRule& rule = gauss_hermite(nodes);
  const double scale = std::sqrt(2.0 / curvature);
  Eigen::VectorXd points(nodes), logw(nodes);
  for (int k = 0; k < nodes; ++k) {
    const double x = rule.nodes(k);
    points(k) = b + scale * x;
    logw(k) = std::log(rule.weights(k)) + x * x +
              (log_f_y(t, th, points(k)) + log_f_d(t, subject, th.xi, points(k)) +
               log_f_b(th, points(k)));
  }
  const double peak = logw.maxCoeff();
  Eigen::VectorXd w = (logw.array() - peak).exp();
  const double total = w.sum();
  w /= total;

  QuadratureMoments out;
  out.mode = b;
  out.curvature = curvature;
  out.log_normalizer = peak + std::log(total) + std::log(scale);
  out.mean = w.dot(points);
  out.variance = w.dot((points.array() - out.mean).square().matrix());
  out.expected_softplus = Eigen::VectorXd::Zero(subject.n());
  for (int k = 0; k < nodes; ++k) {
    for (Eigen::Index j = 0; j < subject.n(); ++j) {
      out.expected_softplus(j) += w(k) * softplus(t.ps_lin(j) + th.xi * points(k));
    }
  }
  return out;
}

}  // namespace confound_em
