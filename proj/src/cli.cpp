#include "confound_em/cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "confound_em/config_file.hpp"
#include "confound_em/csv.hpp"
#include "confound_em/effects.hpp"
#include "confound_em/em_engine.hpp"
#include "confound_em/errors.hpp"
#include "confound_em/inference.hpp"
#include "confound_em/init_strategy.hpp"
#include "confound_em/laplace_posterior.hpp"
#include "confound_em/panel_data.hpp"
#include "confound_em/parallel.hpp"
#include "confound_em/serialize.hpp"
#include "confound_em/sim_study.hpp"

namespace confound_em {

namespace fs = std::filesystem;

namespace {

struct OptionSpec {
  std::string key;
  std::string fallback;  // empty: unset unless supplied
  std::string help;
  bool is_flag = false;
};

const std::vector<OptionSpec> kCommon = {
    {"seed", "1", "random seed (u64)"},
    {"out", ".", "output directory"},
    {"threads", "0", "worker threads (0 = available parallelism)"},
};

const std::vector<OptionSpec> kFitOptions = {
    {"max_em_iters", "500", "maximum EM iterations"},
    {"em_tol", "1e-6", "EM relative tolerance"},
    {"newton_max_iters", "50", "Newton iterations per M-step"},
    {"newton_tol", "1e-8", "Newton step tolerance"},
};

const std::vector<OptionSpec> kDataOptions = {
    {"data", "", "panel data CSV"},
    {"schema", "", "schema config (key=value)"},
};

const std::vector<std::string> kDgpKeys = {"beta", "eta", "omega", "sigma", "xi", "sigma_b",
                                           "n_min", "n_max", "z_marginals", "z_corr", "x_ar1_corr"};

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

std::string env_name(const std::string& key) {
  std::string e = "CONFOUND_EM_";
  for (char c : key) e += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return e;
}

/// Options of one subcommand bound to string storage, resolved after parsing.
class Command {
 public:
  Command(CLI::App& app, const std::string& name, const std::string& help) : sub_(app.add_subcommand(name, help)) {
    sub_->add_option("--config", config_path_, "key=value config file");
  }

  void add(const std::vector<OptionSpec>& specs) {
    for (const auto& s : specs) {
      specs_.push_back(s);
      CLI::Option* opt = nullptr;
      if (s.is_flag) {
        opt = sub_->add_flag(flag_name(s.key), s.help);
      } else {
        opt = sub_->add_option(flag_name(s.key), values_[s.key], s.help);
      }
      options_[s.key] = opt;
    }
  }

  void allow_file_keys(const std::vector<std::string>& keys) {
    extra_.insert(extra_.end(), keys.begin(), keys.end());
  }

  CLI::App* app() { return sub_; }
  bool parsed() const { return sub_->parsed(); }

  /// Precedence: flags > environment > config file > defaults.
  KeyValueConfig resolve() const {
    KeyValueConfig r;
    for (const auto& s : specs_)
      if (!s.fallback.empty()) r.set(s.key, s.fallback);
    if (!config_path_.empty()) {
      const KeyValueConfig file = KeyValueConfig::load(config_path_);
      for (const auto& [k, v] : file.entries()) {
        const bool known = std::any_of(specs_.begin(), specs_.end(), [&](const OptionSpec& s) { return s.key == k; }) ||
                           std::find(extra_.begin(), extra_.end(), k) != extra_.end();
        if (!known) throw ConfigError("unknown key '" + k + "' in " + config_path_);
        r.set(k, v);
      }
    }
    for (const auto& s : specs_) {
      if (const char* env = std::getenv(env_name(s.key).c_str()); env && *env) r.set(s.key, env);
    }
    for (const auto& s : specs_) {
      const CLI::Option* opt = options_.at(s.key);
      if (opt->count() == 0) continue;
      r.set(s.key, s.is_flag ? "true" : values_.at(s.key));
    }
    return r;
  }

 private:
  CLI::App* sub_;
  std::string config_path_;
  std::vector<OptionSpec> specs_;
  std::vector<std::string> extra_;
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

/// The resolved configuration as echoed into artifacts. The worker count is
/// left out because it never changes results.
Json embedded_config(const KeyValueConfig& r) {
  Json j = config_json(r);
  j.erase("threads");
  return j;
}

std::uint64_t get_seed(const KeyValueConfig& r) {
  const std::string s = r.get_string("seed");
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("seed: expected an unsigned integer, got '" + s + "'");
  return v;
}

unsigned get_threads(const KeyValueConfig& r) {
  const long long t = r.get_int("threads", 0);
  if (t < 0) throw ConfigError("threads must be >= 0");
  return resolve_threads(static_cast<unsigned>(t));
}

FitConfig get_fit_config(const KeyValueConfig& r) {
  FitConfig cfg;
  cfg.max_em_iters = static_cast<int>(r.get_int("max_em_iters", cfg.max_em_iters));
  cfg.em_tol = r.get_double("em_tol", cfg.em_tol);
  cfg.newton_max_iters = static_cast<int>(r.get_int("newton_max_iters", cfg.newton_max_iters));
  cfg.newton_tol = r.get_double("newton_tol", cfg.newton_tol);
  try {
    cfg.check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

AteWeighting get_weighting(const KeyValueConfig& r) {
  const std::string w = r.get_string("weighting", "record");
  if (w == "record") return AteWeighting::record;
  if (w == "subject") return AteWeighting::subject;
  throw ConfigError("weighting must be 'record' or 'subject'");
}

fs::path out_dir(const KeyValueConfig& r) {
  fs::path dir = r.get_string("out", ".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  f << content;
}

std::string require(const KeyValueConfig& r, const std::string& key) {
  if (!r.has(key) || r.get_string(key).empty()) throw ConfigError("missing required option " + flag_name(key));
  return r.get_string(key);
}

/// Loads and validates a dataset; prints diagnostics and throws ValidationError on errors.
PanelDataset load_data(const KeyValueConfig& r, std::ostream& err) {
  const SchemaConfig schema = SchemaConfig::load(require(r, "schema"));
  PanelDataset ds = load_csv(require(r, "data"), schema);
  const auto diags = validate(ds);
  for (const auto& d : diags) {
    err << (d.severity == Diagnostic::Severity::error ? "error" : "warning") << ": subject '" << d.subject_id << "'";
    if (d.row > 0) err << " row " << d.row;
    err << ": " << d.reason << '\n';
  }
  if (has_errors(diags)) throw ValidationError("input data failed validation");
  return ds;
}

int cmd_simulate(const KeyValueConfig& r, std::ostream& err) {
  if (!r.get_bool("paper_defaults", false) && !r.has("beta") && !r.has("eta")) {
    const bool any_dgp = std::any_of(kDgpKeys.begin(), kDgpKeys.end(), [&](const std::string& k) { return r.has(k); });
    if (!any_dgp) throw ConfigError("simulate needs --paper-defaults or a DGP config file");
  }
  const long long reps = r.get_int("reps");
  if (reps < 1) throw ConfigError("--reps must be at least 1");
  DgpConfig dgp = DgpConfig::from_config(r);
  const std::uint64_t seed = get_seed(r);
  const FitConfig fit_cfg = get_fit_config(r);
  const fs::path dir = out_dir(r);

  ReplicationTable table;
  try {
    table = run_replications(dgp, static_cast<int>(reps), seed, fit_cfg, get_threads(r));
  } catch (const UnstableError& e) {
    err << "simulate: " << e.what() << '\n';
    return kExitHarness;
  }
  std::ostringstream csv;
  write_table_csv(table, csv);
  write_file(dir / "table1.csv", csv.str());
  Json j;
  j["config"] = embedded_config(r);
  j["dgp"] = config_json(dgp.to_config());
  j["seed"] = seed;
  j["table"] = table_json(table);
  write_file(dir / "table1.json", dump_json(j));
  if (r.get_bool("emit_data", false)) {
    const PanelDataset ds = gen_dataset(dgp, seed, 0);
    std::ostringstream data;
    write_csv(ds, data);
    write_file(dir / "data.csv", data.str());
    write_file(dir / "schema.cfg", ds.schema().to_config().to_string());
  }
  err << "simulate: " << table.n_converged << "/" << table.R << " replications converged\n";
  return kExitOk;
}

int cmd_fit(const KeyValueConfig& r, std::ostream& err) {
  const PanelDataset ds = load_data(r, err);
  const ExpandedDesign design = expand_design(ds);
  const FitConfig cfg = get_fit_config(r);
  const AteWeighting weighting = get_weighting(r);
  const InitReport init = initialize(design, cfg);
  const FitResult result = fit(design, init.theta0, cfg);
  std::vector<std::string> warnings;
  const double tau = ate(result, design, weighting, &warnings);

  Json j;
  j["config"] = embedded_config(r);
  j["seed"] = get_seed(r);
  j["fit"] = fit_json(result, design);
  j["init"] = init_json(init, design.covariate_names);
  j["ate"] = tau;
  j["warnings"] = warnings;
  j["data"] = {{"m", ds.m()}, {"n_records", ds.n_records()}};
  write_file(out_dir(r) / "fit.json", dump_json(j));
  if (!result.converged) {
    err << "fit: not converged after " << result.n_iters << " iterations (result written)\n";
    return kExitNotConverged;
  }
  err << "fit: converged in " << result.n_iters << " iterations\n";
  return kExitOk;
}

/// Groups as "label=name,name;label=name".
std::vector<std::pair<std::string, std::vector<std::string>>> parse_groups(const std::string& text) {
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("groups: expected label=name,name in '" + item + "'");
    std::vector<std::string> names = split_list(item.substr(eq + 1));
    if (names.empty()) throw ConfigError("groups: empty group '" + item + "'");
    out.emplace_back(trim(item.substr(0, eq)), names);
  }
  return out;
}

FitResult load_point_fit(const std::string& path, const ExpandedDesign& design) {
  const Json j = read_json_file(path);
  FitResult f;
  try {
    f.theta = theta_from_json(j.at("fit").at("theta"));
    f.converged = j.at("fit").at("converged").get<bool>();
  } catch (const Json::exception& e) {
    throw SchemaError("'" + path + "' is not a fit.json: " + e.what());
  }
  if (f.theta.q() != design.q()) throw SchemaError("'" + path + "' does not match the data's covariates");
  f.posterior = e_step(design, f.theta);
  return f;
}

int cmd_bootstrap(const KeyValueConfig& r, std::ostream& err) {
  const PanelDataset ds = load_data(r, err);
  const ExpandedDesign design = expand_design(ds);
  BootstrapConfig bc;
  bc.B = static_cast<int>(r.get_int("B"));
  bc.seed = get_seed(r);
  bc.level = r.get_double("level");
  bc.warm_start = r.get_bool("warm_start", false);
  bc.threads = get_threads(r);
  bc.weighting = get_weighting(r);
  bc.fit = get_fit_config(r);
  if (bc.B < 1) throw ConfigError("--B must be at least 1");
  if (!(bc.level > 0.0 && bc.level < 1.0)) throw ConfigError("--level must be in (0, 1)");
  const auto groups = parse_groups(r.get_string("groups", ""));
  const std::vector<std::string> drop = split_list(r.get_string("drop", ""));

  FitResult point;
  if (r.has("fit") && !r.get_string("fit").empty()) {
    point = load_point_fit(r.get_string("fit"), design);
  } else {
    point = fit(design, initialize(design, bc.fit).theta0, bc.fit);
  }
  if (!point.converged) err << "bootstrap: warning: point fit did not converge\n";

  BootstrapResult boot;
  try {
    boot = cluster_bootstrap(design, bc, &point);
  } catch (const UnstableError& e) {
    err << "bootstrap: " << e.what() << '\n';
    return kExitBootstrapUnstable;
  }
  std::vector<ParameterSummary> summary;
  try {
    summary = summarize(boot, bc.level);
  } catch (const UnstableError& e) {
    err << "bootstrap: " << e.what() << '\n';
    return kExitBootstrapUnstable;
  }
  Json tests;
  Json group_reports = Json::array();
  for (const auto& [label, names] : groups) {
    Json g = test_json(wald_group_test(boot, names, label));
    g["label"] = label;
    group_reports.push_back(g);
  }
  tests["groups"] = group_reports;
  if (r.get_bool("lrt", false)) tests["lrt"] = lrt_json(lrt_sigma_b(design, bc.fit, &point));

  Json j;
  j["config"] = embedded_config(r);
  j["seed"] = bc.seed;
  j["parameters"] = summary_json(summary);
  j["tests"] = tests;
  j["sensitivity"] = sensitivity_json(sensitivity_analysis(ds, point, drop, bc.fit));
  j["bootstrap"] = replicates_json(boot);
  write_file(out_dir(r) / "inference.json", dump_json(j));
  err << "bootstrap: " << boot.replicates.size() << "/" << boot.B << " replicates retained\n";
  return kExitOk;
}

int cmd_effects(const KeyValueConfig& r, std::ostream& err) {
  const PanelDataset ds = load_data(r, err);
  const ExpandedDesign design = expand_design(ds);
  const FitResult point = load_point_fit(require(r, "fit"), design);
  const AteWeighting weighting = get_weighting(r);

  BootstrapResult boot;
  bool have_boot = false;
  if (r.has("inference") && !r.get_string("inference").empty()) {
    const Json inf = read_json_file(r.get_string("inference"));
    try {
      for (const auto& rep : inf.at("bootstrap").at("replicates")) {
        BootstrapReplicate b;
        b.index = rep.at("index").get<int>();
        b.theta = theta_from_flat(vector_from_json(rep.at("theta")));
        b.ate = rep.at("ate").get<double>();
        if (b.theta.q() != design.q()) throw SchemaError("inference replicates do not match the data's covariates");
        boot.replicates.push_back(b);
      }
    } catch (const Json::exception& e) {
      throw SchemaError("'" + r.get_string("inference") + "' is not an inference.json: " + e.what());
    }
    have_boot = !boot.replicates.empty();
  }

  std::vector<std::string> warnings;
  Json j;
  j["config"] = embedded_config(r);
  Json a;
  a["estimate"] = ate(point, design, weighting, &warnings);
  a["weighting"] = weighting == AteWeighting::record ? "record" : "subject";
  const double level = r.get_double("level");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("--level must be in (0, 1)");
  if (have_boot) {
    std::vector<double> draws;
    for (const auto& b : boot.replicates) draws.push_back(ate(b.theta, design, weighting));
    a["ci"] = {quantile(draws, (1.0 - level) / 2.0), quantile(draws, 1.0 - (1.0 - level) / 2.0)};
    a["level"] = level;
  }
  j["ate"] = a;
  j["warnings"] = warnings;

  const fs::path dir = out_dir(r);
  if (r.has("grid") && !r.get_string("grid").empty()) {
    KeyValueConfig grid_cfg = KeyValueConfig::load(r.get_string("grid"));
    if (!grid_cfg.has("level")) grid_cfg.set("level", format_double(level));
    const HteGridSpec spec = HteGridSpec::from_config(grid_cfg);
    const auto rows = hte_grid(point.theta, design, spec, have_boot ? &boot : nullptr);
    std::ostringstream csv;
    write_grid_csv(rows, csv);
    write_file(dir / "hte_grid.csv", csv.str());
    j["grid"] = {{"file", "hte_grid.csv"}, {"spec", config_json(grid_cfg)}};
  }
  write_file(dir / "effects.json", dump_json(j));
  return kExitOk;
}

int cmd_validate(const KeyValueConfig& r, std::ostream& out, std::ostream& err) {
  const double tol = r.get_double("tol");
  const double ll_tol = r.get_double("loglik_tol");
  const int nodes = static_cast<int>(r.get_int("nodes"));
  if (!(tol >= 0.0) || !(ll_tol >= 0.0)) throw ConfigError("tolerances must be non-negative");
  if (nodes < 10) throw ConfigError("--nodes must be at least 10");

  ExpandedDesign design;
  Theta th;
  if (r.has("data") && !r.get_string("data").empty()) {
    design = expand_design(load_data(r, err));
    th = load_point_fit(require(r, "fit"), design).theta;
  } else {
    DgpConfig dgp = DgpConfig::simulation_defaults(static_cast<int>(r.get_int("subjects")));
    dgp.n_min = static_cast<int>(r.get_int("n_min"));
    dgp.n_max = std::max(dgp.n_max, dgp.n_min);
    if (r.has("xi")) dgp.xi = r.get_double("xi");
    dgp.validate();
    design = expand_design(gen_dataset(dgp, get_seed(r), 0));
    th.beta = dgp.beta;
    th.sigma = dgp.sigma;
    th.omega = dgp.omega;
    th.eta = dgp.eta;
    th.xi = dgp.xi;
    th.sigma_b = dgp.sigma_b;
  }
  if (r.has("xi") && r.has("data")) th.xi = r.get_double("xi");

  struct Row {
    PosteriorSummary lap;
    QuadratureMoments quad;
    double ll_lap = 0.0;
    double mean_err = 0.0, var_err = 0.0, ll_err = 0.0;
  };
  std::vector<Row> rows(design.m());
  parallel_for(rows.size(), get_threads(r), [&](std::size_t i) {
    Row& row = rows[i];
    const SubjectDesign& s = design.subjects[i];
    row.lap = posterior_moments(s, th);
    row.quad = quadrature_moments(s, th, nodes);
    row.ll_lap = subject_observed_loglik(s, th);
    row.mean_err = std::abs(row.lap.mean - row.quad.mean) / std::max(std::abs(row.quad.mean), std::sqrt(row.quad.variance));
    row.var_err = std::abs(row.lap.variance - row.quad.variance) / row.quad.variance;
    row.ll_err = std::abs(row.ll_lap - row.quad.log_normalizer);
  });
  out << "id,n,mean_laplace,mean_quadrature,mean_rel_err,var_laplace,var_quadrature,var_rel_err,"
         "loglik_laplace,loglik_quadrature,loglik_abs_err,pass\n";
  std::size_t failures = 0;
  double worst_mean = 0.0, worst_var = 0.0, worst_ll = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& row = rows[i];
    const bool pass = row.mean_err <= tol && row.var_err <= tol && row.ll_err <= ll_tol;
    failures += pass ? 0 : 1;
    worst_mean = std::max(worst_mean, row.mean_err);
    worst_var = std::max(worst_var, row.var_err);
    worst_ll = std::max(worst_ll, row.ll_err);
    out << csv_escape(design.subjects[i].id) << ',' << design.subjects[i].n() << ',' << format_double(row.lap.mean)
        << ',' << format_double(row.quad.mean) << ',' << format_double(row.mean_err) << ','
        << format_double(row.lap.variance) << ',' << format_double(row.quad.variance) << ','
        << format_double(row.var_err) << ',' << format_double(row.ll_lap) << ','
        << format_double(row.quad.log_normalizer) << ',' << format_double(row.ll_err) << ','
        << (pass ? "true" : "false") << '\n';
  }
  err << "validate: " << rows.size() - failures << "/" << rows.size() << " subjects within tolerance"
      << " (max mean err " << worst_mean << ", max var err " << worst_var << ", max loglik err " << worst_ll << ")\n";
  return failures == 0 ? kExitOk : kExitTolerance;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint outcome/treatment mixed-effects models with a latent confounder", "confound_em"};
  app.require_subcommand(1);

  Command simulate(app, "simulate", "Monte Carlo replication study");
  simulate.add(kCommon);
  simulate.add(kFitOptions);
  simulate.add({{"paper_defaults", "", "use the default simulation design", true},
                {"m", "100", "subjects per dataset"},
                {"reps", "200", "replications"},
                {"emit_data", "", "also write replication 0's dataset and schema", true}});
  simulate.allow_file_keys(kDgpKeys);

  Command fit_cmd(app, "fit", "Fit the joint model to a dataset");
  fit_cmd.add(kCommon);
  fit_cmd.add(kFitOptions);
  fit_cmd.add(kDataOptions);
  fit_cmd.add({{"weighting", "record", "ATE covariate mean: record or subject"}});

  Command bootstrap(app, "bootstrap", "Cluster bootstrap inference and tests");
  bootstrap.add(kCommon);
  bootstrap.add(kFitOptions);
  bootstrap.add(kDataOptions);
  bootstrap.add({{"fit", "", "fit.json with the point estimate (fitted fresh when absent)"},
                 {"B", "200", "bootstrap replicates"},
                 {"level", "0.95", "confidence level"},
                 {"warm_start", "", "start replicates from the point estimate", true},
                 {"groups", "", "Wald groups: label=name,name;label=name"},
                 {"lrt", "", "likelihood ratio test of sigma_b = 0", true},
                 {"drop", "", "covariates dropped one at a time for the sensitivity analysis"},
                 {"weighting", "record", "ATE covariate mean: record or subject"}});

  Command effects(app, "effects", "ATE and HTE grids from a fit");
  effects.add(kCommon);
  effects.add(kDataOptions);
  effects.add({{"fit", "", "fit.json"},
               {"inference", "", "inference.json for percentile bands"},
               {"grid", "", "HTE grid spec (key=value)"},
               {"level", "0.95", "confidence level"},
               {"weighting", "record", "ATE covariate mean: record or subject"}});

  Command validate_cmd(app, "validate", "Laplace versus adaptive Gauss-Hermite accuracy table");
  validate_cmd.add(kCommon);
  validate_cmd.add(kDataOptions);
  validate_cmd.add({{"fit", "", "fit.json supplying theta for --data"},
                    {"subjects", "500", "simulated subjects when no data is given"},
                    {"n_min", "5", "minimum records per simulated subject"},
                    {"xi", "", "override xi"},
                    {"tol", "1e-2", "relative tolerance for mean and variance"},
                    {"loglik_tol", "0.05", "absolute tolerance for the subject log-likelihood"},
                    {"nodes", "50", "quadrature nodes"}});

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "confound_em: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (simulate.parsed()) return cmd_simulate(simulate.resolve(), err);
    if (fit_cmd.parsed()) return cmd_fit(fit_cmd.resolve(), err);
    if (bootstrap.parsed()) return cmd_bootstrap(bootstrap.resolve(), err);
    if (effects.parsed()) return cmd_effects(effects.resolve(), err);
    if (validate_cmd.parsed()) return cmd_validate(validate_cmd.resolve(), out, err);
  } catch (const ConfigError& e) {
    err << "confound_em: configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SchemaError& e) {
    err << "confound_em: input error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "confound_em: validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const UnstableError& e) {
    err << "confound_em: " << e.what() << '\n';
    return kExitHarness;
  } catch (const std::exception& e) {
    err << "confound_em: error: " << e.what() << '\n';
    return kExitUnexpected;
  }
  return kExitUnexpected;
}

}  // namespace confound_em
