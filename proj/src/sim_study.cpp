#include "confound_em/sim_study.hpp"

#include <cmath>
#include <ostream>

#include "confound_em/effects.hpp"
#include "confound_em/errors.hpp"
#include "confound_em/init_strategy.hpp"
#include "confound_em/parallel.hpp"
#include "confound_em/rng.hpp"

namespace confound_em {

DgpConfig DgpConfig::simulation_defaults(int m) {
  DgpConfig c;
  c.beta.resize(12);
  c.beta << -3, 1, 3, -1, -3, 2, 5, 2, 2, -2, -3, 3;
  c.eta.resize(6);
  c.eta << 0.3, -0.3, 0.2, -0.2, 0.2, -0.3;
  c.m = m;
  return c;
}

namespace {

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string join(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v(i));
  }
  return out;
}

}  // namespace

DgpConfig DgpConfig::from_config(const KeyValueConfig& cfg) {
  DgpConfig c = simulation_defaults();
  if (cfg.has("beta")) c.beta = to_vector(cfg.get_doubles("beta"));
  if (cfg.has("eta")) c.eta = to_vector(cfg.get_doubles("eta"));
  c.omega = cfg.get_double("omega", c.omega);
  c.sigma = cfg.get_double("sigma", c.sigma);
  c.xi = cfg.get_double("xi", c.xi);
  c.sigma_b = cfg.get_double("sigma_b", c.sigma_b);
  c.m = static_cast<int>(cfg.get_int("m", c.m));
  c.n_min = static_cast<int>(cfg.get_int("n_min", c.n_min));
  c.n_max = static_cast<int>(cfg.get_int("n_max", c.n_max));
  if (cfg.has("z_marginals")) {
    const auto zm = cfg.get_doubles("z_marginals");
    if (zm.size() != 2) throw ConfigError("z_marginals: expected two values");
    c.z_marginal1 = zm[0];
    c.z_marginal2 = zm[1];
  }
  c.z_corr = cfg.get_double("z_corr", c.z_corr);
  c.x_ar1_corr = cfg.get_double("x_ar1_corr", c.x_ar1_corr);
  c.validate();
  return c;
}

KeyValueConfig DgpConfig::to_config() const {
  KeyValueConfig cfg;
  cfg.set("beta", join(beta));
  cfg.set("eta", join(eta));
  cfg.set("omega", format_double(omega));
  cfg.set("sigma", format_double(sigma));
  cfg.set("xi", format_double(xi));
  cfg.set("sigma_b", format_double(sigma_b));
  cfg.set("m", std::to_string(m));
  cfg.set("n_min", std::to_string(n_min));
  cfg.set("n_max", std::to_string(n_max));
  cfg.set("z_marginals", format_double(z_marginal1) + "," + format_double(z_marginal2));
  cfg.set("z_corr", format_double(z_corr));
  cfg.set("x_ar1_corr", format_double(x_ar1_corr));
  return cfg;
}

double DgpConfig::joint_z11() const {
  const double p1 = z_marginal1, p2 = z_marginal2;
  return p1 * p2 + z_corr * std::sqrt(p1 * (1 - p1) * p2 * (1 - p2));
}

void DgpConfig::validate() const {
  if (eta.size() < 3) throw ConfigError("eta must have at least 3 entries (intercept, z1, z2)");
  if (beta.size() != 2 * eta.size()) throw ConfigError("beta must have twice as many entries as eta");
  if (!(sigma > 0) || !(sigma_b >= 0)) throw ConfigError("sigma must be > 0 and sigma_b >= 0");
  if (m < 1) throw ConfigError("m must be at least 1");
  if (n_min < 1 || n_max < n_min) throw ConfigError("need 1 <= n_min <= n_max");
  if (!(z_marginal1 > 0 && z_marginal1 < 1 && z_marginal2 > 0 && z_marginal2 < 1)) {
    throw ConfigError("z marginals must lie in (0, 1)");
  }
  const double p11 = joint_z11();
  const double p10 = z_marginal1 - p11, p01 = z_marginal2 - p11, p00 = 1 - p11 - p10 - p01;
  if (p11 < 0 || p10 < 0 || p01 < 0 || p00 < 0) {
    throw ConfigError("z correlation is infeasible for the given marginals");
  }
  if (!(std::abs(x_ar1_corr) < 1)) throw ConfigError("x_ar1_corr must lie in (-1, 1)");
}

SimulatedData gen_dataset_with_latent(const DgpConfig& dgp, std::uint64_t seed, std::uint64_t stream) {
  dgp.validate();
  RngStream rng(seed, stream);
  const int p2 = dgp.p2();
  const int q = 3 + p2;

  // Cholesky factor of the AR(1) correlation matrix.
  Eigen::MatrixXd corr(p2, p2);
  for (int k = 0; k < p2; ++k)
    for (int l = 0; l < p2; ++l) corr(k, l) = std::pow(dgp.x_ar1_corr, std::abs(k - l));
  const Eigen::MatrixXd chol = corr.llt().matrixL();

  const double p11 = dgp.joint_z11();
  const double p10 = dgp.z_marginal1 - p11;
  const double p01 = dgp.z_marginal2 - p11;

  SimulatedData out;
  PanelDataset& ds = out.data;
  ds.id_name = "id";
  ds.outcome_name = "y";
  ds.treatment_name = "d";
  ds.z_names = {"z1", "z2"};
  for (int k = 0; k < p2; ++k) ds.x_names.push_back("x" + std::to_string(k + 1));

  Eigen::VectorXd xs(q), e(p2);
  for (int i = 0; i < dgp.m; ++i) {
    Subject s;
    s.id = "s" + std::to_string(i + 1);
    const int n = rng.uniform_int(dgp.n_min, dgp.n_max);
    const double u = rng.uniform();
    double z1 = 0, z2 = 0;
    if (u < p11) {
      z1 = z2 = 1;
    } else if (u < p11 + p10) {
      z1 = 1;
    } else if (u < p11 + p10 + p01) {
      z2 = 1;
    }
    s.z = {z1, z2};
    const double b = dgp.sigma_b * rng.normal();
    out.b.push_back(b);
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < p2; ++k) e(k) = rng.normal();
      const Eigen::VectorXd x = chol * e;
      xs(0) = 1;
      xs(1) = z1;
      xs(2) = z2;
      xs.tail(p2) = x;
      PanelRecord rec;
      rec.x.assign(x.data(), x.data() + p2);
      rec.d = rng.bernoulli(expit(dgp.eta.dot(xs) + dgp.xi * b)) ? 1 : 0;
      const double mean = dgp.beta.head(q).dot(xs) + rec.d * dgp.beta.tail(q).dot(xs) +
                          (1 + dgp.omega * rec.d) * b;
      rec.y = mean + dgp.sigma * rng.normal();
      s.records.push_back(std::move(rec));
    }
    ds.subjects.push_back(std::move(s));
  }
  return out;
}

PanelDataset gen_dataset(const DgpConfig& dgp, std::uint64_t seed, std::uint64_t stream) {
  return gen_dataset_with_latent(dgp, seed, stream).data;
}

double true_ate(const DgpConfig& dgp) {
  const Eigen::Index q = dgp.eta.size();
  const Eigen::VectorXd beta2 = dgp.beta.tail(q);
  return beta2(0) + beta2(1) * dgp.z_marginal1 + beta2(2) * dgp.z_marginal2;
}

std::vector<std::string> replication_row_names(const DgpConfig& dgp) {
  std::vector<std::string> names;
  for (Eigen::Index k = 0; k < dgp.beta.size(); ++k) names.push_back("beta" + std::to_string(k));
  names.push_back("omega");
  names.push_back("sigma");
  for (Eigen::Index k = 0; k < dgp.eta.size(); ++k) names.push_back("eta" + std::to_string(k));
  names.push_back("xi");
  names.push_back("sigma_b");
  names.push_back("ATE");
  return names;
}

namespace {

Eigen::VectorXd pack(const Eigen::VectorXd& beta, double omega, double sigma, const Eigen::VectorXd& eta,
                     double xi, double sigma_b, double ate_value) {
  Eigen::VectorXd v(beta.size() + eta.size() + 5);
  Eigen::Index k = 0;
  v.segment(k, beta.size()) = beta;
  k += beta.size();
  v(k++) = omega;
  v(k++) = sigma;
  v.segment(k, eta.size()) = eta;
  k += eta.size();
  v(k++) = xi;
  v(k++) = sigma_b;
  v(k++) = ate_value;
  return v;
}

}  // namespace

Eigen::VectorXd replication_truth(const DgpConfig& dgp) {
  return pack(dgp.beta, dgp.omega, dgp.sigma, dgp.eta, dgp.xi, dgp.sigma_b, true_ate(dgp));
}

ReplicationOutcome run_one_replication(const DgpConfig& dgp, std::uint64_t seed, std::uint64_t r,
                                       const FitConfig& cfg) {
  ReplicationOutcome out;
  try {
    const ExpandedDesign design = expand_design(gen_dataset(dgp, seed, r));
    const InitReport init = initialize(design, cfg);
    const FitResult res = fit(design, init.theta0, cfg);
    const Theta& th = res.theta;
    out.converged = res.converged;
    out.estimate = pack(th.beta, th.omega, th.sigma, th.eta, th.xi, th.sigma_b, ate(th, design));
  } catch (const std::exception& e) {
    out.converged = false;
    out.error = e.what();
  }
  return out;
}

ReplicationTable tabulate(const DgpConfig& dgp, std::vector<ReplicationOutcome> outcomes) {
  ReplicationTable table;
  table.R = static_cast<int>(outcomes.size());
  const auto names = replication_row_names(dgp);
  const Eigen::VectorXd truth = replication_truth(dgp);
  const Eigen::Index k = truth.size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(k);
  int used = 0;
  for (const auto& o : outcomes) {
    if (!o.converged) continue;
    sum += o.estimate;
    ++used;
  }
  table.n_converged = used;
  table.convergence_rate = table.R > 0 ? static_cast<double>(used) / table.R : 0.0;
  const Eigen::VectorXd mean = used > 0 ? Eigen::VectorXd(sum / used) : Eigen::VectorXd::Zero(k);
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(k), sq_err = Eigen::VectorXd::Zero(k);
  for (const auto& o : outcomes) {
    if (!o.converged) continue;
    ss += (o.estimate - mean).array().square().matrix();
    sq_err += (o.estimate - truth).array().square().matrix();
  }
  for (Eigen::Index p = 0; p < k; ++p) {
    ReplicationRow row;
    row.param = names[static_cast<std::size_t>(p)];
    row.truth = truth(p);
    row.mean = mean(p);
    row.se = used > 1 ? std::sqrt(ss(p) / (used - 1)) : 0.0;
    row.bias = mean(p) - truth(p);
    row.rmse = used > 0 ? std::sqrt(sq_err(p) / used) : 0.0;
    table.rows.push_back(row);
  }
  table.outcomes = std::move(outcomes);
  return table;
}

ReplicationTable run_replications(const DgpConfig& dgp, int R, std::uint64_t seed,
                                  const FitConfig& cfg, unsigned threads) {
  if (R < 1) throw ConfigError("replication count must be at least 1");
  dgp.validate();
  std::vector<ReplicationOutcome> outcomes(static_cast<std::size_t>(R));
  parallel_for(outcomes.size(), resolve_threads(threads), [&](std::size_t r) {
    outcomes[r] = run_one_replication(dgp, seed, r, cfg);
  });
  ReplicationTable table = tabulate(dgp, std::move(outcomes));
  if (table.convergence_rate < 0.5) {
    throw UnstableError("replication harness: only " + std::to_string(table.n_converged) + " of " +
                        std::to_string(R) + " fits converged");
  }
  return table;
}

void write_table_csv(const ReplicationTable& table, std::ostream& out) {
  out << "param,true,mean,se,bias,rmse\n";
  for (const auto& r : table.rows) {
    out << r.param << ',' << format_double(r.truth) << ',' << format_double(r.mean) << ','
        << format_double(r.se) << ',' << format_double(r.bias) << ',' << format_double(r.rmse) << '\n';
  }
}

}  // namespace confound_em
