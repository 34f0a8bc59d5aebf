#include "debias/io.hpp"

#include "debias/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace debias {

namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::string where(const std::string& source, std::size_t line) {
  return source + ", line " + std::to_string(line);
}

double parse_double_cell(const std::string& cell, const std::string& column, std::size_t line,
                         std::size_t col) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError("column '" + column + "': '" + cell + "' is not a finite number", line, col);
  return v;
}

long long parse_int_cell(const std::string& cell, const std::string& column, std::size_t line,
                         std::size_t col) {
  long long v = 0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end)
    throw ParseError("column '" + column + "': '" + cell + "' is not an integer", line, col);
  return v;
}

struct Header {
  std::vector<std::size_t> feature_col;  // feature j lives in column feature_col[j]
  std::optional<std::size_t> y_col;
  std::optional<std::size_t> sample_col;
  std::vector<std::string> names;
};

Header parse_header(const std::string& line, const std::string& source) {
  Header h;
  h.names = split_cells(line);
  std::map<std::size_t, std::size_t> features;
  for (std::size_t c = 0; c < h.names.size(); ++c) {
    const std::string& name = h.names[c];
    auto duplicate = [&] { return SchemaError(where(source, 1) + ": duplicate column '" + name + "'"); };
    if (name == "y") {
      if (h.y_col) throw duplicate();
      h.y_col = c;
    } else if (name == "sample_id") {
      if (h.sample_col) throw duplicate();
      h.sample_col = c;
    } else if (name.size() > 1 && name[0] == 'x') {
      std::size_t j = 0;
      const char* end = name.data() + name.size();
      const auto [ptr, ec] = std::from_chars(name.data() + 1, end, j);
      if (ec != std::errc() || ptr != end)
        throw SchemaError(where(source, 1) + ": unknown column '" + name + "'");
      if (!features.emplace(j, c).second) throw duplicate();
    } else {
      throw SchemaError(where(source, 1) + ": unknown column '" + name + "'");
    }
  }
  if (features.empty()) throw SchemaError(where(source, 1) + ": no feature columns x0..x{d-1}");
  std::size_t expect = 0;
  for (const auto& [j, c] : features) {
    if (j != expect)
      throw SchemaError(where(source, 1) + ": feature columns must be x0..x" +
                        std::to_string(features.size() - 1) + ", missing x" +
                        std::to_string(expect));
    h.feature_col.push_back(c);
    ++expect;
  }
  return h;
}

struct CsvRow {
  Observation z;
  std::optional<long long> sample_id;
};

// Calls on_row for every data row, with its 1-based file line.
template <typename OnRow>
Header read_rows(std::istream& in, TargetColumn target, const std::string& source, OnRow&& on_row) {
  std::string line;
  if (!std::getline(in, line) || trim(line).empty())
    throw SchemaError(source + ": missing header row");
  const Header h = parse_header(line, source);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != h.names.size())
      throw ParseError("expected " + std::to_string(h.names.size()) + " fields, found " +
                           std::to_string(cells.size()),
                       lineno, std::min(cells.size(), h.names.size()) + 1);
    CsvRow row;
    row.z.features.resize(h.feature_col.size());
    for (std::size_t j = 0; j < h.feature_col.size(); ++j) {
      const std::size_t c = h.feature_col[j];
      row.z.features[j] = parse_double_cell(cells[c], h.names[c], lineno, c + 1);
    }
    if (h.y_col) {
      const std::size_t c = *h.y_col;
      const double y = parse_double_cell(cells[c], "y", lineno, c + 1);
      if (target == TargetColumn::kReal) {
        row.z.target = y;
      } else {
        if (y != 1.0 && y != -1.0)
          throw ParseError("column 'y': classification labels must be -1 or 1, got '" +
                               cells[c] + "'",
                           lineno, c + 1);
        row.z.label = static_cast<int>(y);
      }
    }
    if (h.sample_col) {
      const std::size_t c = *h.sample_col;
      row.sample_id = parse_int_cell(cells[c], "sample_id", lineno, c + 1);
    }
    on_row(std::move(row), lineno, h);
  }
  return h;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path.string() + "'");
  return in;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_document(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports a byte offset; convert it to line/column.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError(source + ": " + e.what(), line, col);
  }
}

template <typename T>
T get_field(const json& obj, const char* key, const std::string& context) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(context + ": field '" + key + "': " + e.what());
  }
}

template <typename T>
std::optional<T> get_optional(const json& obj, const char* key, const std::string& context) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return get_field<T>(obj, key, context);
}

void require_object(const json& j, const std::string& context) {
  if (!j.is_object()) throw SchemaError(context + ": expected a JSON object");
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known,
                         const std::string& context) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw SchemaError(context + ": unknown field '" + key + "'");
  }
}

std::vector<BiasDef> biasing_from_json(const json& doc, const std::string& context) {
  if (!doc.contains("biasing")) throw SchemaError(context + ": missing 'biasing' list");
  const json& list = doc.at("biasing");
  if (!list.is_array() || list.empty())
    throw SchemaError(context + ": 'biasing' must be a non-empty list");
  std::vector<BiasDef> defs;
  for (const auto& entry : list) defs.push_back(bias_def_from_json(entry));
  return defs;
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json vector_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(number_or_null(v(i)));
  return arr;
}

}  // namespace

Eigen::VectorXd StratifiedDataset::to_input_order(const Eigen::VectorXd& pooled_values) const {
  if (static_cast<std::size_t>(pooled_values.size()) != rows())
    throw DimensionMismatch("pooled vector length differs from the input row count");
  Eigen::VectorXd out(pooled_values.size());
  for (std::size_t i = 0; i < rows(); ++i)
    out(static_cast<Eigen::Index>(i)) = pooled_values(static_cast<Eigen::Index>(pooled_row[i]));
  return out;
}

StratifiedDataset read_stratified_csv(std::istream& in, std::size_t num_strata,
                                      TargetColumn target, const std::string& source) {
  if (num_strata == 0) throw InvalidArgument("need at least one biasing function");
  StratifiedDataset data;
  data.samples.resize(num_strata);
  std::vector<std::pair<std::size_t, std::size_t>> origin;  // (sample, index within sample)
  read_rows(in, target, source, [&](CsvRow row, std::size_t lineno, const Header& hd) {
    if (!row.sample_id) throw SchemaError(source + ": missing required column 'sample_id'");
    const long long id = *row.sample_id;
    if (id < 0 || static_cast<std::size_t>(id) >= num_strata)
      throw ParseError("sample_id " + std::to_string(id) + " outside [0, " +
                           std::to_string(num_strata) + ")",
                       lineno, *hd.sample_col + 1);
    auto& bucket = data.samples[static_cast<std::size_t>(id)];
    origin.emplace_back(static_cast<std::size_t>(id), bucket.size());
    bucket.push_back(std::move(row.z));
  });
  for (std::size_t k = 0; k < num_strata; ++k)
    if (data.samples[k].empty())
      throw SchemaError(source + ": no rows with sample_id " + std::to_string(k));
  data.dim = data.samples.front().front().dim();

  std::vector<std::size_t> offset(num_strata, 0);
  for (std::size_t k = 1; k < num_strata; ++k)
    offset[k] = offset[k - 1] + data.samples[k - 1].size();
  data.pooled_row.reserve(origin.size());
  for (const auto& [k, i] : origin) data.pooled_row.push_back(offset[k] + i);
  return data;
}

StratifiedDataset read_stratified_csv(const std::filesystem::path& path, std::size_t num_strata,
                                      TargetColumn target) {
  std::ifstream in = open_input(path);
  return read_stratified_csv(in, num_strata, target, path.string());
}

ObservationList read_observations_csv(std::istream& in, TargetColumn target,
                                      const std::string& source) {
  ObservationList rows;
  read_rows(in, target, source,
            [&](CsvRow row, std::size_t, const Header&) { rows.push_back(std::move(row.z)); });
  if (rows.empty()) throw SchemaError(source + ": no data rows");
  return rows;
}

ObservationList read_observations_csv(const std::filesystem::path& path, TargetColumn target) {
  std::ifstream in = open_input(path);
  return read_observations_csv(in, target, path.string());
}

BiasDef bias_def_from_json(const json& j) {
  const std::string ctx = "biasing entry " + j.dump();
  require_object(j, ctx);
  const auto kind = get_field<std::string>(j, "kind", ctx);
  auto component_index = [&] {
    const auto idx = get_field<long long>(j, "j", ctx);
    if (idx < 0) throw SchemaError(ctx + ": component index must be nonnegative");
    return static_cast<std::size_t>(idx);
  };
  if (kind == "norm_ball" || kind == "norm_shell") {
    reject_unknown_keys(j, {"kind", "r"}, ctx);
    const auto r = get_field<double>(j, "r", ctx);
    return kind == "norm_ball" ? BiasDef::norm_ball(r) : BiasDef::norm_shell(r);
  }
  if (kind == "component_band" || kind == "component_above" || kind == "component_below") {
    reject_unknown_keys(j, {"kind", "j", "c"}, ctx);
    const std::size_t idx = component_index();
    const auto c = get_field<double>(j, "c", ctx);
    if (kind == "component_band") return BiasDef::component_band(idx, c);
    if (kind == "component_above") return BiasDef::component_above(idx, c);
    return BiasDef::component_below(idx, c);
  }
  if (kind == "interval") {
    reject_unknown_keys(j, {"kind", "j", "lo", "hi"}, ctx);
    return BiasDef::interval(component_index(), get_field<double>(j, "lo", ctx),
                             get_field<double>(j, "hi", ctx));
  }
  if (kind == "censor") {
    reject_unknown_keys(j, {"kind", "tau"}, ctx);
    return BiasDef::censor(get_field<double>(j, "tau", ctx));
  }
  if (kind == "whole_space") {
    reject_unknown_keys(j, {"kind"}, ctx);
    return BiasDef::whole_space();
  }
  throw SchemaError(ctx + ": unknown kind '" + kind + "'");
}

json to_json(const BiasDef& def) {
  using K = BiasDef::Kind;
  switch (def.kind) {
    case K::kNormBall: return {{"kind", "norm_ball"}, {"r", def.r}};
    case K::kNormShell: return {{"kind", "norm_shell"}, {"r", def.r}};
    case K::kComponentBand: return {{"kind", "component_band"}, {"j", def.j}, {"c", def.c}};
    case K::kComponentAbove: return {{"kind", "component_above"}, {"j", def.j}, {"c", def.c}};
    case K::kComponentBelow: return {{"kind", "component_below"}, {"j", def.j}, {"c", def.c}};
    case K::kInterval: return {{"kind", "interval"}, {"j", def.j}, {"lo", def.lo}, {"hi", def.hi}};
    case K::kCensor: return {{"kind", "censor"}, {"tau", def.tau}};
    case K::kWholeSpace: return {{"kind", "whole_space"}};
  }
  return {};
}

SolverConfig solver_config_from_json(const json& j, SolverConfig base) {
  const std::string ctx = "solver";
  require_object(j, ctx);
  reject_unknown_keys(j, {"method", "grad_tol", "max_iter", "step_size", "seed", "init_jitter"},
                      ctx);
  if (auto m = get_optional<std::string>(j, "method", ctx)) {
    try {
      base.method = solver_method_from_string(*m);
    } catch (const Error& e) {
      throw SchemaError(ctx + ": " + e.what());
    }
  }
  if (auto v = get_optional<double>(j, "grad_tol", ctx)) base.grad_tol = *v;
  if (auto v = get_optional<int>(j, "max_iter", ctx)) base.max_iter = *v;
  if (auto v = get_optional<double>(j, "step_size", ctx)) base.step_size = *v;
  if (auto v = get_optional<std::uint64_t>(j, "seed", ctx)) base.seed = *v;
  if (auto v = get_optional<double>(j, "init_jitter", ctx)) base.init_jitter = *v;
  try {
    base.validate();
  } catch (const InvalidArgument& e) {
    throw SchemaError(ctx + ": " + e.what());
  }
  return base;
}

std::vector<BiasingFunction> BiasConfig::functions() const {
  std::vector<BiasingFunction> fns;
  fns.reserve(biasing.size());
  for (const auto& d : biasing) fns.push_back(BiasingFunction::from_def(d));
  return fns;
}

BiasConfig parse_bias_config(const std::string& text, const std::string& source) {
  const json doc = parse_json_document(text, source);
  require_object(doc, source);
  reject_unknown_keys(doc, {"task", "kappa", "biasing", "solver"}, source);
  BiasConfig cfg;
  cfg.biasing = biasing_from_json(doc, source);
  if (auto t = get_optional<std::string>(doc, "task", source)) {
    if (*t == "regression")
      cfg.task = Task::kRegression;
    else if (*t == "classification" || *t == "binary-classification")
      cfg.task = Task::kBinaryClassification;
    else
      throw SchemaError(source + ": unknown task '" + *t + "'");
  }
  if (auto k = get_optional<double>(doc, "kappa", source)) {
    if (!(*k > 0.0 && *k <= 1.0)) throw SchemaError(source + ": kappa must lie in (0, 1]");
    cfg.kappa = *k;
  }
  if (doc.contains("solver")) cfg.solver = solver_config_from_json(doc.at("solver"));
  return cfg;
}

BiasConfig load_bias_config(const std::filesystem::path& path) {
  return parse_bias_config(slurp(path), path.string());
}

ScenarioSpec parse_scenario_spec(const std::string& text, const std::filesystem::path& base_dir,
                                 const std::string& source) {
  const json doc = parse_json_document(text, source);
  require_object(doc, source);
  reject_unknown_keys(doc,
                      {"name", "base", "base_csv", "biasing", "sample_sizes", "test_size", "target",
                       "target_component", "label_threshold", "learners", "n_runs", "seed",
                       "description"},
                      source);
  ScenarioSpec spec;
  try {
    if (auto v = get_optional<std::string>(doc, "name", source)) spec.name = *v;
    if (auto v = get_optional<std::string>(doc, "base", source))
      spec.base = base_distribution_from_string(*v);
    if (auto v = get_optional<std::string>(doc, "target", source))
      spec.target = target_kind_from_string(*v);
    if (auto v = get_optional<std::vector<std::string>>(doc, "learners", source)) {
      spec.learners.clear();
      for (const auto& l : *v) spec.learners.push_back(learner_from_string(l));
    }
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& e) {
    throw SchemaError(source + ": " + e.what());
  }
  spec.biasing = biasing_from_json(doc, source);
  spec.sample_sizes = get_field<std::vector<std::size_t>>(doc, "sample_sizes", source);
  if (auto v = get_optional<std::size_t>(doc, "test_size", source)) spec.test_size = *v;
  if (auto v = get_optional<std::size_t>(doc, "target_component", source))
    spec.target_component = *v;
  spec.label_threshold = get_optional<double>(doc, "label_threshold", source);
  if (auto v = get_optional<std::size_t>(doc, "n_runs", source)) spec.n_runs = *v;
  if (auto v = get_optional<std::uint64_t>(doc, "seed", source)) spec.seed = *v;
  if (auto v = get_optional<std::string>(doc, "description", source)) spec.description = *v;

  if (spec.base == BaseDistribution::kCustomCsv) {
    const auto rel = get_optional<std::string>(doc, "base_csv", source);
    if (!rel) throw SchemaError(source + ": custom-csv base needs 'base_csv'");
    std::filesystem::path p(*rel);
    if (p.is_relative()) p = base_dir / p;
    spec.base_rows = read_observations_csv(p, TargetColumn::kReal);
  } else if (doc.contains("base_csv")) {
    throw SchemaError(source + ": 'base_csv' only applies to the custom-csv base");
  }
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw SchemaError(source + ": " + e.what());
  }
  return spec;
}

ScenarioSpec load_scenario_spec(const std::filesystem::path& path) {
  return parse_scenario_spec(slurp(path), path.parent_path(), path.string());
}

json to_json(const AssumptionReport& report) {
  return {{"support_cover_ok", report.support_cover_ok},
          {"laplacian_zero_multiplicity", report.laplacian_zero_multiplicity},
          {"kappa_connected", report.kappa_connected},
          {"strongly_connected", report.strongly_connected},
          {"min_mean_omega", number_or_null(report.min_mean_omega)},
          {"messages", report.messages}};
}

json to_json(const SolverResult& result) {
  return {{"W_hat", vector_json(result.W_hat)},
          {"Omega_hat", vector_json(result.Omega_hat)},
          {"weights", vector_json(result.weights)},
          {"gamma_residual", vector_json(result.gamma_residual)},
          {"iterations", result.iterations},
          {"converged", result.converged},
          {"non_unique", result.non_unique},
          {"objective", number_or_null(result.objective)},
          {"hessian_min_eig_at_solution", number_or_null(result.hessian_min_eig_at_solution)},
          {"method", to_string(result.method_used)}};
}

json to_json(const LinearModel& model) {
  const Eigen::Index d = static_cast<Eigen::Index>(model.dim());
  return {{"task", to_string(model.task)},
          {"coefficients", vector_json(model.coefficients.head(d))},
          {"intercept", number_or_null(model.intercept())}};
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

void write_column_csv(std::ostream& out, const std::string& header, const Eigen::VectorXd& values) {
  out << header << '\n';
  for (Eigen::Index i = 0; i < values.size(); ++i) out << format_double(values(i)) << '\n';
}

void write_experiment_csv(std::ostream& out, const ExperimentReport& report) {
  out << "scenario,learner,treatment,metric,mean,std,runs,failed_runs\n";
  for (const auto& c : report.cells)
    out << report.scenario << ',' << to_string(c.learner) << ',' << to_string(c.treatment) << ','
        << c.metric << ',' << format_double(c.mean) << ',' << format_double(c.std) << ','
        << c.values.size() << ',' << report.failures.size() << '\n';
}

void write_experiment_runs_csv(std::ostream& out, const ExperimentReport& report) {
  out << "scenario,run,learner,treatment,metric,value\n";
  for (std::size_t r = 0; r < report.run_indices.size(); ++r)
    for (const auto& c : report.cells)
      out << report.scenario << ',' << report.run_indices[r] << ',' << to_string(c.learner) << ','
          << to_string(c.treatment) << ',' << c.metric << ',' << format_double(c.values[r])
          << '\n';
}

void write_rate_check_csv(std::ostream& out, const RateCheckResult& result) {
  out << "n,replicates,failed,mean_omega_error,mean_sup_deviation\n";
  for (const auto& r : result.rows)
    out << r.n << ',' << r.replicates << ',' << r.failed << ',' << format_double(r.mean_omega_error)
        << ',' << format_double(r.mean_sup_deviation) << '\n';
}

}  // namespace debias
