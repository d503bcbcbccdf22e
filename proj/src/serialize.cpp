#include "confound_em/serialize.hpp"

#include <cmath>
#include <fstream>

#include "confound_em/errors.hpp"

namespace confound_em {

namespace {

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double as_double(const Json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace

Json vector_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(number(v(k)));
  return out;
}

Eigen::VectorXd vector_from_json(const Json& j) {
  if (!j.is_array()) throw SchemaError("expected a JSON array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Eigen::Index>(k)) = as_double(j[k]);
  return v;
}

Json theta_json(const Theta& th, const std::vector<std::string>& covariate_names) {
  Json j;
  j["beta"] = vector_json(th.beta);
  j["sigma"] = number(th.sigma);
  j["omega"] = number(th.omega);
  j["eta"] = vector_json(th.eta);
  j["xi"] = number(th.xi);
  j["sigma_b"] = number(th.sigma_b);
  const std::vector<std::string> names = parameter_names(covariate_names);
  const Eigen::VectorXd flat = th.flatten();
  Json named;
  for (std::size_t k = 0; k < names.size(); ++k) named[names[k]] = number(flat(static_cast<Eigen::Index>(k)));
  j["named"] = named;
  return j;
}

Theta theta_from_json(const Json& j) {
  try {
    Theta th;
    th.beta = vector_from_json(j.at("beta"));
    th.sigma = as_double(j.at("sigma"));
    th.omega = as_double(j.at("omega"));
    th.eta = vector_from_json(j.at("eta"));
    th.xi = as_double(j.at("xi"));
    th.sigma_b = as_double(j.at("sigma_b"));
    if (th.beta.size() != 2 * th.eta.size()) throw SchemaError("theta: beta must have twice the length of eta");
    return th;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("theta: ") + e.what());
  }
}

Theta theta_from_flat(const Eigen::VectorXd& flat) {
  if (flat.size() < 7 || (flat.size() - 4) % 3 != 0) throw SchemaError("theta: flattened length is not 3q + 4");
  const Eigen::Index q = (flat.size() - 4) / 3;
  Theta th;
  th.beta = flat.head(2 * q);
  th.sigma = flat(2 * q);
  th.omega = flat(2 * q + 1);
  th.eta = flat.segment(2 * q + 2, q);
  th.xi = flat(3 * q + 2);
  th.sigma_b = flat(3 * q + 3);
  return th;
}

Json fit_json(const FitResult& fit, const ExpandedDesign& design) {
  Json j;
  j["theta"] = theta_json(fit.theta, design.covariate_names);
  j["converged"] = fit.converged;
  j["n_iters"] = fit.n_iters;
  j["initial_loglik"] = number(fit.initial_loglik);
  Json trace = Json::array();
  for (double v : fit.loglik_trace) trace.push_back(number(v));
  j["loglik_trace"] = trace;
  Json post = Json::array();
  for (std::size_t i = 0; i < fit.posterior.size(); ++i) {
    const PosteriorSummary& p = fit.posterior[i];
    Json s;
    s["id"] = i < design.m() ? design.subjects[i].id : std::to_string(i);
    s["b_mode"] = number(p.b_mode);
    s["precision"] = number(p.precision);
    s["mean"] = number(p.mean);
    s["variance"] = number(p.variance);
    s["second_moment"] = number(p.second_moment);
    post.push_back(s);
  }
  j["posterior"] = post;
  j["diagnostics"] = fit.diagnostics;
  j["covariates"] = design.covariate_names;
  return j;
}

Json init_json(const InitReport& report, const std::vector<std::string>& covariate_names) {
  Json j;
  j["theta0"] = theta_json(report.theta0, covariate_names);
  j["chosen"] = report.chosen;
  Json cands = Json::array();
  for (const auto& c : report.candidates_tried) {
    Json cj;
    cj["theta"] = theta_json(c.theta, covariate_names);
    cj["short_run_loglik"] = number(c.short_run_loglik);
    cj["ok"] = c.ok;
    cj["error"] = c.error;
    cands.push_back(cj);
  }
  j["candidates"] = cands;
  j["notes"] = report.notes;
  return j;
}

Json table_json(const ReplicationTable& table) {
  Json j;
  j["R"] = table.R;
  j["n_converged"] = table.n_converged;
  j["convergence_rate"] = number(table.convergence_rate);
  Json rows = Json::array();
  for (const auto& r : table.rows) {
    Json rj;
    rj["param"] = r.param;
    rj["true"] = number(r.truth);
    rj["mean"] = number(r.mean);
    rj["se"] = number(r.se);
    rj["bias"] = number(r.bias);
    rj["rmse"] = number(r.rmse);
    rows.push_back(rj);
  }
  j["rows"] = rows;
  Json failures = Json::array();
  for (std::size_t r = 0; r < table.outcomes.size(); ++r) {
    const auto& o = table.outcomes[r];
    if (!o.converged) failures.push_back({{"replication", r}, {"error", o.error}});
  }
  j["failures"] = failures;
  return j;
}

Json config_json(const KeyValueConfig& cfg) {
  Json j = Json::object();
  for (const auto& [k, v] : cfg.entries()) j[k] = v;
  return j;
}

Json summary_json(const std::vector<ParameterSummary>& summary) {
  Json j = Json::object();
  for (const auto& s : summary) {
    j[s.name] = {{"estimate", number(s.estimate)},
                 {"boot_mean", number(s.boot_mean)},
                 {"se", number(s.se)},
                 {"ci", {number(s.ci_lo), number(s.ci_hi)}},
                 {"p", number(s.p)}};
  }
  return j;
}

Json test_json(const TestReport& report) {
  Json j;
  j["method"] = report.method;
  j["statistic"] = number(report.statistic);
  j["df"] = report.df;
  j["p_value"] = number(report.p_value);
  j["names"] = report.names;
  j["notes"] = report.notes;
  return j;
}

Json lrt_json(const LrtReport& report) {
  Json j = test_json(report);
  j["loglik_full"] = number(report.loglik_full);
  j["loglik_reduced"] = number(report.loglik_reduced);
  j["params_full"] = report.params_full;
  j["params_reduced"] = report.params_reduced;
  j["full_converged"] = report.full_converged;
  return j;
}

Json sensitivity_json(const SensitivityReport& report) {
  Json j;
  j["cll_full"] = number(report.cll_full);
  j["cll_reduced"] = number(report.cll_reduced);
  Json variants = Json::object();
  for (const auto& [name, v] : report.cll_variants) variants["without " + name] = number(v);
  j["cll_variants"] = variants;
  j["notes"] = report.notes;
  return j;
}

Json replicates_json(const BootstrapResult& boot) {
  Json j;
  j["B"] = boot.B;
  j["seed"] = boot.seed;
  j["n_failed"] = boot.n_failed;
  j["failures"] = boot.failures;
  Json reps = Json::array();
  for (const auto& r : boot.replicates) {
    reps.push_back({{"index", r.index}, {"ate", number(r.ate)}, {"theta", vector_json(r.theta.flatten())}});
  }
  j["replicates"] = reps;
  return j;
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw SchemaError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace confound_em
