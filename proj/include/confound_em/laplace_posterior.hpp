#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "confound_em/panel_data.hpp"

namespace confound_em {

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr double kSigmaBFloor = 1e-6;

/// Joint-model parameters.
///   y_ij = x~_ij' beta + (1 + omega d_ij) b_i + eps_ij,  eps ~ N(0, sigma^2)
///   logit P(d_ij = 1) = eta' x*_ij + xi b_i
///   b_i ~ N(0, sigma_b^2)
/// beta = (beta1', beta2')' where beta2 multiplies the treatment interactions.
struct Theta {
  Eigen::VectorXd beta;
  double sigma = 1.0;
  double omega = 0.0;
  Eigen::VectorXd eta;
  double xi = 0.0;
  double sigma_b = 1.0;

  Eigen::Index q() const { return eta.size(); }
  Eigen::VectorXd beta1() const { return beta.head(q()); }
  Eigen::VectorXd beta2() const { return beta.tail(q()); }

  /// Throws std::invalid_argument on shape mismatch, non-finite entries or
  /// scale parameters below their floors.
  void check(Eigen::Index q) const;

  /// (beta, sigma, omega, eta, xi, sigma_b) flattened in that order.
  Eigen::VectorXd flatten() const;
};

/// Names matching Theta::flatten(): beta[<cov>], beta_d[<cov>], sigma, omega,
/// eta[<cov>], xi, sigma_b.
std::vector<std::string> parameter_names(const std::vector<std::string>& covariate_names);

/// Laplace summary of the posterior of b_i.
struct PosteriorSummary {
  double b_mode = 0.0;     // maximizer of log f(y|b) + log f(b)
  double precision = 1.0;  // curvature of that function at the mode
  double mean = 0.0;
  double variance = 0.0;
  double second_moment = 0.0;  // variance + mean^2
};

/// softplus(u) = log(1 + e^u), stable for any finite u.
double softplus(double u);
/// log(1 / (1 + e^-u)), stable for any finite u.
double log_sigmoid(double u);
double expit(double u);

/// log f(y_i | d_i, b) + log f(d_i | b) + log f(b), all normalizing constants included.
double log_joint(double b, const SubjectDesign& subject, const Theta& th);

struct ModeCurvature {
  double b_mode = 0.0;
  double precision = 1.0;
};

/// Mode and curvature of the Gaussian part log f(y|b) + log f(b); closed form.
ModeCurvature case1_mode(const SubjectDesign& subject, const Theta& th);

/// Maximizer of t*b + log f(y|b) + log f(b): (t + c) / A.
double case2_mode(const SubjectDesign& subject, const Theta& th, double t);

/// Finite-difference step in t used for the posterior moments; the admissible
/// range for t is |t| <= 4 * step.
double mgf_step(const ModeCurvature& mc);

/// Laplace approximation of log E[exp(t b) | data]. Exactly 0 at t = 0.
double log_mgf(const SubjectDesign& subject, const Theta& th, double t);

/// Mean and variance as the first two derivatives of log_mgf at 0 (Richardson
/// extrapolated central differences). Raw variances in [-1e-8, 0) are clamped to
/// 0 and reported in `diagnostics`; anything lower throws NumericalError.
PosteriorSummary posterior_moments(const SubjectDesign& subject, const Theta& th,
                                   std::vector<std::string>* diagnostics = nullptr);

/// Laplace approximation of log of the marginal density of (y_i, d_i).
double subject_observed_loglik(const SubjectDesign& subject, const Theta& th);
/// Sum over subjects, reduced in subject order.
double observed_loglik(const ExpandedDesign& design, const Theta& th);

/// Plug-in approximation of E[softplus(eta' x*_ij + xi b) | data] per record, with
/// the posterior taken at `th` and (eta, xi) free.
Eigen::VectorXd expected_softplus(const SubjectDesign& subject, const Theta& th,
                                  const Eigen::VectorXd& eta, double xi);

/// Adaptive Gauss-Hermite reference values for the same posterior.
struct QuadratureMoments {
  double mean = 0.0;
  double variance = 0.0;
  double log_normalizer = 0.0;  // log of the integral of exp(log_joint)
  Eigen::VectorXd expected_softplus;
  double mode = 0.0;       // mode of the full log_joint
  double curvature = 0.0;  // -(d^2/db^2) log_joint at that mode
};

/// Nodes must be >= 10. Throws NumericalError if the 1-D Newton search for the
/// mode of log_joint has not converged after 100 iterations.
QuadratureMoments quadrature_moments(const SubjectDesign& subject, const Theta& th, int nodes);

/// Physicists' Gauss-Hermite rule (weight exp(-x^2)), nodes ascending.
struct GaussHermiteRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};
const GaussHermiteRule& gauss_hermite(int n);

}  // namespace confound_em
