#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "confound_em/laplace_posterior.hpp"
#include "confound_em/panel_data.hpp"
#include "confound_em/rng.hpp"
#include "confound_em/sim_study.hpp"

namespace testing {

using namespace confound_em;

inline Theta truth_theta(const DgpConfig& dgp) {
  Theta th;
  th.beta = dgp.beta;
  th.sigma = dgp.sigma;
  th.omega = dgp.omega;
  th.eta = dgp.eta;
  th.xi = dgp.xi;
  th.sigma_b = std::max(dgp.sigma_b, kSigmaBFloor);
  return th;
}

inline ExpandedDesign sim_design(const DgpConfig& dgp, std::uint64_t seed, std::uint64_t stream = 0) {
  return expand_design(gen_dataset(dgp, seed, stream));
}

/// Random subject with q covariates; z constant across records.
inline SubjectDesign random_subject(RngStream& rng, int n, int q, const std::string& id = "s") {
  SubjectDesign s;
  s.id = id;
  s.x_star.resize(n, q);
  s.x_tilde.resize(n, 2 * q);
  s.d.resize(n);
  s.y.resize(n);
  Eigen::VectorXd z(q);
  for (int k = 0; k < q; ++k) z(k) = rng.normal();
  for (int j = 0; j < n; ++j) {
    s.x_star(j, 0) = 1.0;
    for (int k = 1; k < q; ++k) s.x_star(j, k) = k < 3 ? z(k) : rng.normal();
    s.d(j) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    s.x_tilde.row(j) << s.x_star.row(j), s.d(j) * s.x_star.row(j);
    s.y(j) = 2.0 * rng.normal();
  }
  return s;
}

inline Theta random_theta(RngStream& rng, int q) {
  Theta th;
  th.beta.resize(2 * q);
  th.eta.resize(q);
  for (int k = 0; k < 2 * q; ++k) th.beta(k) = rng.normal();
  for (int k = 0; k < q; ++k) th.eta(k) = 0.5 * rng.normal();
  th.sigma = 0.5 + rng.uniform();
  th.omega = rng.uniform() - 0.5;
  th.xi = rng.uniform() - 0.5;
  th.sigma_b = 0.5 + rng.uniform();
  return th;
}

/// Dense multivariate-normal view of the outcome model:
/// y | d ~ N(X~ beta, sigma^2 I + sigma_b^2 u u'), u = 1 + omega d.
struct GaussianOracle {
  double post_mean, post_var, log_marginal_y;
};

inline GaussianOracle gaussian_oracle(const SubjectDesign& s, const Theta& th) {
  const Eigen::Index n = s.n();
  const Eigen::VectorXd r = s.y - s.x_tilde * th.beta;
  const Eigen::VectorXd u = (1.0 + th.omega * s.d.array()).matrix();
  const double sb2 = th.sigma_b * th.sigma_b;
  const Eigen::MatrixXd V = th.sigma * th.sigma * Eigen::MatrixXd::Identity(n, n) + sb2 * u * u.transpose();
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(V);
  const Eigen::VectorXd vr = lu.solve(r);
  const Eigen::VectorXd vu = lu.solve(u);
  GaussianOracle o;
  o.post_mean = sb2 * u.dot(vr);
  o.post_var = sb2 - sb2 * sb2 * u.dot(vu);
  const double logdet = std::log(std::abs(lu.determinant()));
  o.log_marginal_y = -0.5 * (static_cast<double>(n) * std::log(2.0 * M_PI) + logdet + r.dot(vr));
  return o;
}

/// Bernoulli log-likelihood of d with b = 0 logits, in long double.
inline double bernoulli_loglik(const SubjectDesign& s, const Eigen::VectorXd& eta, double offset = 0.0) {
  long double acc = 0.0L;
  for (Eigen::Index j = 0; j < s.n(); ++j) {
    const long double u = s.x_star.row(j).dot(eta) + offset;
    const long double lp = u > 0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u));
    acc += s.d(j) > 0.5 ? lp : lp - u;
  }
  return static_cast<double>(acc);
}

/// Plain Newton-Raphson logistic regression (no damping), for oracle use.
inline Eigen::VectorXd logistic_oracle(const Eigen::MatrixXd& X, const Eigen::VectorXd& d) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(X.cols());
  for (int it = 0; it < 100; ++it) {
    const Eigen::ArrayXd p = 1.0 / (1.0 + (-(X * c).array()).exp());
    const Eigen::MatrixXd H = X.transpose() * (p * (1 - p)).matrix().asDiagonal() * X;
    const Eigen::VectorXd step = H.ldlt().solve(X.transpose() * (d.array() - p).matrix());
    c += step;
    if (step.norm() < 1e-13) break;
  }
  return c;
}

inline void stack_ps(const ExpandedDesign& design, Eigen::MatrixXd& X, Eigen::VectorXd& d) {
  X.resize(static_cast<Eigen::Index>(design.n_records()), design.q());
  d.resize(X.rows());
  Eigen::Index row = 0;
  for (const auto& s : design.subjects) {
    X.middleRows(row, s.n()) = s.x_star;
    d.segment(row, s.n()) = s.d;
    row += s.n();
  }
}

/// Scratch directory under the build tree, emptied on construction.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("confound_em_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace testing

namespace testing {

/// Maximum-likelihood random-intercept LMM y_i = X_i beta + 1 u_i + e_i computed
/// by profiling the variance ratio, independent of the library's EM code.
struct LmmOracle {
  Eigen::VectorXd beta, beta_se;
  double sigma = 0.0, sigma_b = 0.0, sigma_se = 0.0, sigma_b_se = 0.0;
  double loglik = 0.0;
};

inline double lmm_loglik(const ExpandedDesign& design, const Eigen::VectorXd& beta, double sigma, double sigma_b) {
  double total = 0.0;
  for (const auto& s : design.subjects) {
    const Eigen::Index n = s.n();
    const Eigen::MatrixXd V = sigma * sigma * Eigen::MatrixXd::Identity(n, n) +
                              sigma_b * sigma_b * Eigen::MatrixXd::Ones(n, n);
    const Eigen::LLT<Eigen::MatrixXd> llt(V);
    const Eigen::VectorXd r = s.y - s.x_tilde * beta;
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    total += -0.5 * (static_cast<double>(n) * std::log(2 * M_PI) + logdet + r.dot(llt.solve(r)));
  }
  return total;
}

inline void lmm_gls(const ExpandedDesign& design, double lambda, Eigen::VectorXd& beta, double& sigma2,
                    Eigen::MatrixXd& xtwx) {
  const Eigen::Index p = design.subjects[0].x_tilde.cols();
  xtwx = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd xtwy = Eigen::VectorXd::Zero(p);
  double N = 0.0;
  for (const auto& s : design.subjects) {
    const Eigen::Index n = s.n();
    const Eigen::MatrixXd W = Eigen::MatrixXd::Identity(n, n) - lambda / (1.0 + n * lambda) * Eigen::MatrixXd::Ones(n, n);
    xtwx += s.x_tilde.transpose() * W * s.x_tilde;
    xtwy += s.x_tilde.transpose() * W * s.y;
    N += static_cast<double>(n);
  }
  beta = xtwx.ldlt().solve(xtwy);
  double rss = 0.0;
  for (const auto& s : design.subjects) {
    const Eigen::Index n = s.n();
    const Eigen::VectorXd r = s.y - s.x_tilde * beta;
    rss += r.squaredNorm() - lambda / (1.0 + n * lambda) * r.sum() * r.sum();
  }
  sigma2 = rss / N;
}

inline LmmOracle exact_lmm(const ExpandedDesign& design) {
  double N = 0.0;
  for (const auto& s : design.subjects) N += static_cast<double>(s.n());
  auto profile = [&](double log_lambda) {
    Eigen::VectorXd beta;
    Eigen::MatrixXd xtwx;
    double s2 = 0.0;
    const double lambda = std::exp(log_lambda);
    lmm_gls(design, lambda, beta, s2, xtwx);
    double logdet = 0.0;
    for (const auto& s : design.subjects) logdet += std::log(1.0 + s.n() * lambda);
    return -0.5 * N * (std::log(2 * M_PI * s2) + 1.0) - 0.5 * logdet;
  };
  // Golden-section search on log(sigma_b^2 / sigma^2).
  double lo = -15.0, hi = 8.0;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
  double fa = profile(a), fb = profile(b);
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    if (fa < fb) {
      lo = a;
      a = b;
      fa = fb;
      b = lo + g * (hi - lo);
      fb = profile(b);
    } else {
      hi = b;
      b = a;
      fb = fa;
      a = hi - g * (hi - lo);
      fa = profile(a);
    }
  }
  const double lambda = std::exp(0.5 * (lo + hi));
  LmmOracle o;
  Eigen::MatrixXd xtwx;
  double s2 = 0.0;
  lmm_gls(design, lambda, o.beta, s2, xtwx);
  o.sigma = std::sqrt(s2);
  o.sigma_b = std::sqrt(lambda * s2);
  o.beta_se = (s2 * xtwx.inverse()).diagonal().cwiseSqrt();
  o.loglik = lmm_loglik(design, o.beta, o.sigma, o.sigma_b);

  // Observed information of (sigma, sigma_b) with beta at its estimate.
  const double h = 1e-4;
  auto f = [&](double s, double sb) { return lmm_loglik(design, o.beta, s, sb); };
  const double x = o.sigma, y = o.sigma_b;
  Eigen::Matrix2d H;
  H(0, 0) = (f(x + h, y) - 2 * f(x, y) + f(x - h, y)) / (h * h);
  H(1, 1) = (f(x, y + h) - 2 * f(x, y) + f(x, y - h)) / (h * h);
  H(0, 1) = H(1, 0) = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4 * h * h);
  const Eigen::Matrix2d cov = (-H).inverse();
  o.sigma_se = std::sqrt(cov(0, 0));
  o.sigma_b_se = std::sqrt(cov(1, 1));
  return o;
}

}  // namespace testing
