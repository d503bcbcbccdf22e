#include "confound_em/panel_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include "confound_em/csv.hpp"
#include "confound_em/errors.hpp"

namespace confound_em {

SchemaConfig SchemaConfig::from_config(const KeyValueConfig& cfg) {
  SchemaConfig s;
  s.id_col = cfg.get_string("id_col", "id");
  s.outcome = cfg.get_string("outcome");
  s.treatment = cfg.get_string("treatment");
  s.z_cols = cfg.get_list("z_cols");
  s.x_cols = cfg.get_list("x_cols");
  return s;
}

SchemaConfig SchemaConfig::load(const std::filesystem::path& path) {
  return from_config(KeyValueConfig::load(path));
}

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += items[i];
  }
  return out;
}

}  // namespace

KeyValueConfig SchemaConfig::to_config() const {
  KeyValueConfig cfg;
  cfg.set("id_col", id_col);
  cfg.set("outcome", outcome);
  cfg.set("treatment", treatment);
  cfg.set("z_cols", join(z_cols));
  cfg.set("x_cols", join(x_cols));
  return cfg;
}

std::size_t PanelDataset::n_records() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.records.size();
  return n;
}

SchemaConfig PanelDataset::schema() const {
  return SchemaConfig{id_name, outcome_name, treatment_name, z_names, x_names};
}

bool operator==(const PanelRecord& a, const PanelRecord& b) {
  return a.y == b.y && a.d == b.d && a.x == b.x;
}

bool operator==(const Subject& a, const Subject& b) {
  return a.id == b.id && a.z == b.z && a.records == b.records;
}

bool operator==(const PanelDataset& a, const PanelDataset& b) {
  return a.id_name == b.id_name && a.outcome_name == b.outcome_name &&
         a.treatment_name == b.treatment_name && a.z_names == b.z_names &&
         a.x_names == b.x_names && a.subjects == b.subjects;
}

namespace {

double parse_value(const std::string& text, const std::string& column, std::size_t row) {
  try {
    return parse_double(text, column);
  } catch (const ConfigError&) {
    throw ValidationError("row " + std::to_string(row) + ", column '" + column +
                          "': not a number ('" + text + "')");
  }
}

}  // namespace

PanelDataset parse_panel_csv(std::istream& in, const SchemaConfig& schema) {
  const CsvTable table = parse_csv(in);
  if (table.rows.empty()) throw SchemaError("CSV has a header but no data rows");

  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < table.header.size(); ++c) column[table.header[c]] = c;
  auto locate = [&](const std::string& name) {
    auto it = column.find(name);
    if (it == column.end()) throw SchemaError("missing column '" + name + "'");
    return it->second;
  };
  const std::size_t id_c = locate(schema.id_col);
  const std::size_t y_c = locate(schema.outcome);
  const std::size_t d_c = locate(schema.treatment);
  std::vector<std::size_t> z_c, x_c;
  for (const auto& n : schema.z_cols) z_c.push_back(locate(n));
  for (const auto& n : schema.x_cols) x_c.push_back(locate(n));

  PanelDataset ds;
  ds.id_name = schema.id_col;
  ds.outcome_name = schema.outcome;
  ds.treatment_name = schema.treatment;
  ds.z_names = schema.z_cols;
  ds.x_names = schema.x_cols;

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t rowno = r + 1;
    const std::string& id = row[id_c];
    if (id.empty()) throw ValidationError("row " + std::to_string(rowno) + ": empty subject id");

    PanelRecord rec;
    rec.y = parse_value(row[y_c], schema.outcome, rowno);
    if (!std::isfinite(rec.y)) {
      throw ValidationError("row " + std::to_string(rowno) + ": non-finite outcome");
    }
    const double d = parse_value(row[d_c], schema.treatment, rowno);
    if (d != 0.0 && d != 1.0) {
      throw ValidationError("row " + std::to_string(rowno) + ": treatment must be 0 or 1, got '" +
                            row[d_c] + "'");
    }
    rec.d = static_cast<int>(d);
    for (std::size_t k = 0; k < x_c.size(); ++k) {
      const double v = parse_value(row[x_c[k]], schema.x_cols[k], rowno);
      if (!std::isfinite(v)) {
        throw ValidationError("row " + std::to_string(rowno) + ": non-finite value in '" +
                              schema.x_cols[k] + "'");
      }
      rec.x.push_back(v);
    }
    std::vector<double> z;
    for (std::size_t k = 0; k < z_c.size(); ++k) {
      const double v = parse_value(row[z_c[k]], schema.z_cols[k], rowno);
      if (!std::isfinite(v)) {
        throw ValidationError("row " + std::to_string(rowno) + ": non-finite value in '" +
                              schema.z_cols[k] + "'");
      }
      z.push_back(v);
    }

    auto [it, inserted] = index.emplace(id, ds.subjects.size());
    if (inserted) {
      ds.subjects.push_back(Subject{id, std::move(z), {}});
    } else {
      const Subject& s = ds.subjects[it->second];
      for (std::size_t k = 0; k < z.size(); ++k) {
        if (z[k] != s.z[k]) {
          throw ValidationError("row " + std::to_string(rowno) + ": time-invariant column '" +
                                schema.z_cols[k] + "' changes within subject '" + id + "'");
        }
      }
    }
    ds.subjects[it->second].records.push_back(std::move(rec));
  }
  return ds;
}

PanelDataset load_csv(const std::filesystem::path& path, const SchemaConfig& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  return parse_panel_csv(in, schema);
}

void write_csv(const PanelDataset& ds, std::ostream& out) {
  out << csv_escape(ds.id_name) << ',' << csv_escape(ds.outcome_name) << ','
      << csv_escape(ds.treatment_name);
  for (const auto& n : ds.z_names) out << ',' << csv_escape(n);
  for (const auto& n : ds.x_names) out << ',' << csv_escape(n);
  out << '\n';
  for (const auto& s : ds.subjects) {
    for (const auto& r : s.records) {
      out << csv_escape(s.id) << ',' << format_double(r.y) << ',' << r.d;
      for (double v : s.z) out << ',' << format_double(v);
      for (double v : r.x) out << ',' << format_double(v);
      out << '\n';
    }
  }
}

void write_csv(const PanelDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError("cannot write " + path.string());
  write_csv(ds, out);
}

std::vector<Diagnostic> validate(const PanelDataset& ds) {
  using Sev = Diagnostic::Severity;
  std::vector<Diagnostic> out;
  std::set<std::string> seen;
  long row = 0;
  for (const auto& s : ds.subjects) {
    if (!seen.insert(s.id).second) out.push_back({Sev::error, s.id, -1, "duplicate subject id"});
    if (s.records.empty()) out.push_back({Sev::error, s.id, -1, "subject has no records"});
    if (s.z.size() != ds.p1()) {
      out.push_back({Sev::error, s.id, -1, "z vector has wrong length"});
    }
    for (std::size_t k = 0; k < s.z.size(); ++k) {
      if (!std::isfinite(s.z[k])) {
        out.push_back({Sev::error, s.id, -1, "non-finite z value in column " + std::to_string(k)});
      }
    }
    for (const auto& r : s.records) {
      ++row;
      if (!std::isfinite(r.y)) out.push_back({Sev::error, s.id, row, "non-finite outcome"});
      if (r.d != 0 && r.d != 1) out.push_back({Sev::error, s.id, row, "treatment not in {0,1}"});
      if (r.x.size() != ds.p2()) {
        out.push_back({Sev::error, s.id, row, "x vector has wrong length"});
        continue;
      }
      for (std::size_t k = 0; k < r.x.size(); ++k) {
        if (!std::isfinite(r.x[k])) {
          out.push_back({Sev::error, s.id, row, "non-finite value in '" + ds.x_names[k] + "'"});
        }
      }
    }
  }
  if (has_errors(out) || ds.subjects.empty()) {
    if (ds.subjects.empty()) out.push_back({Sev::error, "", -1, "dataset has no subjects"});
    return out;
  }

  // Constant columns of the stacked interaction design (the leading intercept is
  // constant by construction and skipped).
  const ExpandedDesign design = expand_design(ds);
  const Eigen::Index cols = 2 * design.q();
  std::vector<double> first(cols), lo(cols), hi(cols);
  bool init = false;
  for (const auto& sd : design.subjects) {
    for (Eigen::Index j = 0; j < sd.n(); ++j) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        const double v = sd.x_tilde(j, c);
        if (!init) {
          lo[c] = hi[c] = v;
        } else {
          lo[c] = std::min(lo[c], v);
          hi[c] = std::max(hi[c], v);
        }
      }
      init = true;
    }
  }
  for (Eigen::Index c = 1; c < cols; ++c) {
    if (lo[c] == hi[c]) {
      const bool interaction = c >= design.q();
      const std::string name = interaction ? "d*" + design.covariate_names[c - design.q()]
                                           : design.covariate_names[c];
      out.push_back({Sev::warning, "", -1,
                     "constant design column '" + name + "' (rank deficiency risk)"});
    }
  }
  return out;
}

bool has_errors(const std::vector<Diagnostic>& diagnostics) {
  return std::any_of(diagnostics.begin(), diagnostics.end(),
                     [](const Diagnostic& d) { return d.severity == Diagnostic::Severity::error; });
}

std::size_t ExpandedDesign::n_records() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += static_cast<std::size_t>(s.n());
  return n;
}

ExpandedDesign expand_design(const PanelDataset& ds) {
  ExpandedDesign design;
  design.covariate_names.push_back("intercept");
  for (const auto& n : ds.z_names) design.covariate_names.push_back(n);
  for (const auto& n : ds.x_names) design.covariate_names.push_back(n);
  const Eigen::Index q = design.q();
  const Eigen::Index p1 = static_cast<Eigen::Index>(ds.p1());

  design.subjects.reserve(ds.m());
  for (const auto& s : ds.subjects) {
    const Eigen::Index n = static_cast<Eigen::Index>(s.records.size());
    SubjectDesign sd;
    sd.id = s.id;
    sd.x_star.resize(n, q);
    sd.x_tilde.resize(n, 2 * q);
    sd.d.resize(n);
    sd.y.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const PanelRecord& r = s.records[static_cast<std::size_t>(j)];
      sd.x_star(j, 0) = 1.0;
      for (Eigen::Index k = 0; k < p1; ++k) sd.x_star(j, 1 + k) = s.z[static_cast<std::size_t>(k)];
      for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(r.x.size()); ++k) {
        sd.x_star(j, 1 + p1 + k) = r.x[static_cast<std::size_t>(k)];
      }
      sd.d(j) = r.d;
      sd.y(j) = r.y;
      sd.x_tilde.block(j, 0, 1, q) = sd.x_star.row(j);
      sd.x_tilde.block(j, q, 1, q) = r.d * sd.x_star.row(j);
    }
    design.subjects.push_back(std::move(sd));
  }
  return design;
}

PanelDataset drop_covariates(const PanelDataset& ds, const std::vector<std::string>& names) {
  std::set<std::string> drop(names.begin(), names.end());
  for (const auto& n : drop) {
    const bool known = std::find(ds.z_names.begin(), ds.z_names.end(), n) != ds.z_names.end() ||
                       std::find(ds.x_names.begin(), ds.x_names.end(), n) != ds.x_names.end();
    if (!known) throw ConfigError("unknown covariate '" + n + "'");
  }
  std::vector<std::size_t> keep_z, keep_x;
  PanelDataset out;
  out.id_name = ds.id_name;
  out.outcome_name = ds.outcome_name;
  out.treatment_name = ds.treatment_name;
  for (std::size_t k = 0; k < ds.z_names.size(); ++k) {
    if (!drop.count(ds.z_names[k])) {
      keep_z.push_back(k);
      out.z_names.push_back(ds.z_names[k]);
    }
  }
  for (std::size_t k = 0; k < ds.x_names.size(); ++k) {
    if (!drop.count(ds.x_names[k])) {
      keep_x.push_back(k);
      out.x_names.push_back(ds.x_names[k]);
    }
  }
  for (const auto& s : ds.subjects) {
    Subject t;
    t.id = s.id;
    for (auto k : keep_z) t.z.push_back(s.z[k]);
    for (const auto& r : s.records) {
      PanelRecord nr{r.y, r.d, {}};
      for (auto k : keep_x) nr.x.push_back(r.x[k]);
      t.records.push_back(std::move(nr));
    }
    out.subjects.push_back(std::move(t));
  }
  return out;
}

ExpandedDesign resample_subjects(const ExpandedDesign& design, const std::vector<std::size_t>& indices) {
  ExpandedDesign out;
  out.covariate_names = design.covariate_names;
  out.subjects.reserve(indices.size());
  std::map<std::size_t, int> draws;
  for (std::size_t idx : indices) {
    SubjectDesign sd = design.subjects.at(idx);
    const int k = draws[idx]++;
    sd.id += "#" + std::to_string(k);
    out.subjects.push_back(std::move(sd));
  }
  return out;
}

}  // namespace confound_em
