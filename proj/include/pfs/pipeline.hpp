#pragma once

#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pfs/calendar.hpp"
#include "pfs/csv.hpp"
#include "pfs/dynamics.hpp"
#include "pfs/dynasty.hpp"
#include "pfs/error.hpp"
#include "pfs/panel_ingest.hpp"
#include "pfs/pfs_estimator.hpp"
#include "pfs/report.hpp"
#include "pfs/synth.hpp"
#include "pfs/threshold.hpp"

#define PFS_VERSION "1.0.0"

// Stage orchestration: configuration, file hand-offs between stages and the
// output manifest.
namespace pfs::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

enum class Format { csv, json };

struct Inputs {
  // Empty entries fall back to the synthetic panel under the output directory.
  std::string panel, cpi, macro, targets, reference;
};

struct PipelineConfig {
  fs::path base_dir = ".";  // relative paths in the file resolve against this
  std::string output_dir = "out";
  Inputs inputs;
  ingest::Schema schema;
  dynasty::YearWindow window;
  WaveCalendar calendar = WaveCalendar::psid_default();
  estimate::EstimatorConfig estimation;
  threshold::Mode threshold_mode = threshold::Mode::anchored;
  threshold::Variant threshold_variant = threshold::Variant::snap;
  bool bridge_gaps = false;
  std::vector<dynamics::Period> periods = dynamics::default_periods();
  std::vector<dynamics::Period> chronic_windows = dynamics::default_periods();
  synth::DGPConfig synth;
  std::string fixtures = "tests/fixtures";
  Format format = Format::csv;

  fs::path out() const { return base_dir / output_dir; }

  fs::path input(const std::string& configured, const char* synth_file) const {
    if (configured.empty()) return out() / "synth" / synth_file;
    return base_dir / configured;
  }

  WaveCalendar analysis_calendar() const { return calendar.restricted(estimation.first_year, window.last); }

  void validate() const {
    calendar.validate();
    synth.validate();
    if (window.first > window.last) throw Error(ErrorKind::config, "window.first after window.last");
    if (estimation.first_year < window.first || estimation.first_year > window.last)
      throw Error(ErrorKind::config, "estimation.first_year outside the window");
    if (estimation.lag_degree < 0 || estimation.lag_degree > 4)
      throw Error(ErrorKind::config, "estimation.lag_degree must lie in 0-4");
    for (const auto* list : {&periods, &chronic_windows})
      for (const auto& p : *list)
        if (p.first > p.last) throw Error(ErrorKind::config, "period " + p.label() + " is reversed");
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::config, where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw Error(ErrorKind::config, "unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
T get(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("bad value for '") + key + "': " + e.what());
  }
}

inline std::vector<dynamics::Period> periods_from(const json& j, const char* key, std::vector<dynamics::Period> def) {
  if (!j.contains(key)) return def;
  std::vector<dynamics::Period> out;
  for (const auto& p : j.at(key)) {
    if (!p.is_array() || p.size() != 2) throw Error(ErrorKind::config, std::string(key) + " entries must be [first, last]");
    out.push_back({p[0].get<int>(), p[1].get<int>()});
  }
  return out;
}

inline json periods_to(const std::vector<dynamics::Period>& ps) {
  json a = json::array();
  for (const auto& p : ps) a.push_back({p.first, p.last});
  return a;
}

}  // namespace detail

inline PipelineConfig config_from_json(const json& j, const fs::path& base_dir = ".") {
  detail::check_keys(j,
                     {"output_dir", "seed", "inputs", "schema", "window", "calendar", "estimation", "threshold",
                      "dynamics", "synth", "validation", "format"},
                     "config");
  PipelineConfig c;
  c.base_dir = base_dir;
  c.output_dir = detail::get<std::string>(j, "output_dir", c.output_dir);
  if (j.contains("inputs")) {
    const auto& in = j["inputs"];
    detail::check_keys(in, {"panel", "cpi", "macro", "targets", "reference"}, "inputs");
    c.inputs.panel = detail::get<std::string>(in, "panel", "");
    c.inputs.cpi = detail::get<std::string>(in, "cpi", "");
    c.inputs.macro = detail::get<std::string>(in, "macro", "");
    c.inputs.targets = detail::get<std::string>(in, "targets", "");
    c.inputs.reference = detail::get<std::string>(in, "reference", "");
  }
  if (j.contains("schema")) {
    detail::check_keys(j["schema"], {"columns"}, "schema");
    c.schema.columns = detail::get<std::map<std::string, std::string>>(j["schema"], "columns", {});
  }
  if (j.contains("window")) {
    detail::check_keys(j["window"], {"first", "last"}, "window");
    c.window.first = detail::get<int>(j["window"], "first", c.window.first);
    c.window.last = detail::get<int>(j["window"], "last", c.window.last);
  }
  if (j.contains("calendar")) {
    detail::check_keys(j["calendar"], {"waves", "gap_years"}, "calendar");
    c.calendar.waves = detail::get<std::vector<int>>(j["calendar"], "waves", c.calendar.waves);
    c.calendar.gap_years = detail::get<std::vector<int>>(j["calendar"], "gap_years", c.calendar.gap_years);
  }
  if (j.contains("estimation")) {
    const auto& e = j["estimation"];
    detail::check_keys(e, {"first_year", "weighted", "lag_degree"}, "estimation");
    c.estimation.first_year = detail::get<int>(e, "first_year", c.estimation.first_year);
    c.estimation.weighted = detail::get<bool>(e, "weighted", c.estimation.weighted);
    c.estimation.lag_degree = detail::get<int>(e, "lag_degree", c.estimation.lag_degree);
  }
  if (j.contains("threshold")) {
    const auto& t = j["threshold"];
    detail::check_keys(t, {"mode", "variant"}, "threshold");
    if (t.contains("mode")) {
      auto m = threshold::parse_mode(detail::get<std::string>(t, "mode", ""));
      if (!m) throw Error(ErrorKind::config, "threshold.mode must be anchored, snap-model, p5 or p20");
      c.threshold_mode = *m;
    }
    const int v = detail::get<int>(t, "variant", static_cast<int>(c.threshold_variant));
    if (v < 1 || v > 5) throw Error(ErrorKind::config, "threshold.variant must lie in 1-5");
    c.threshold_variant = static_cast<threshold::Variant>(v);
  }
  if (j.contains("dynamics")) {
    const auto& d = j["dynamics"];
    detail::check_keys(d, {"bridge_gaps", "periods", "chronic_windows"}, "dynamics");
    c.bridge_gaps = detail::get<bool>(d, "bridge_gaps", c.bridge_gaps);
    c.periods = detail::periods_from(d, "periods", c.periods);
    c.chronic_windows = detail::periods_from(d, "chronic_windows", c.chronic_windows);
  }
  if (j.contains("synth")) c.synth = synth::dgp_from_json(j["synth"]);
  if (j.contains("seed")) c.synth.seed = detail::get<std::uint64_t>(j, "seed", c.synth.seed);
  if (j.contains("validation")) {
    detail::check_keys(j["validation"], {"fixtures"}, "validation");
    c.fixtures = detail::get<std::string>(j["validation"], "fixtures", c.fixtures);
  }
  if (j.contains("format")) {
    const auto f = detail::get<std::string>(j, "format", "csv");
    if (f != "csv" && f != "json") throw Error(ErrorKind::config, "format must be csv or json");
    c.format = f == "csv" ? Format::csv : Format::json;
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::config, path.string() + ": " + e.what());
  }
  return config_from_json(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

/// Effective configuration without machine-specific paths.
inline ordered_json to_json(const PipelineConfig& c) {
  ordered_json j;
  j["inputs"] = {{"panel", c.inputs.panel.empty() ? "synth/panel.csv" : c.inputs.panel},
                 {"cpi", c.inputs.cpi.empty() ? "synth/cpi.csv" : c.inputs.cpi},
                 {"macro", c.inputs.macro.empty() ? "synth/macro.csv" : c.inputs.macro},
                 {"targets", c.inputs.targets.empty() ? "synth/targets.csv" : c.inputs.targets},
                 {"reference", c.inputs.reference.empty() ? "synth/reference.csv" : c.inputs.reference}};
  j["schema"] = {{"columns", c.schema.columns}};
  j["window"] = {{"first", c.window.first}, {"last", c.window.last}};
  j["calendar"] = {{"waves", c.calendar.waves}, {"gap_years", c.calendar.gap_years}};
  j["estimation"] = {{"first_year", c.estimation.first_year},
                     {"weighted", c.estimation.weighted},
                     {"lag_degree", c.estimation.lag_degree}};
  j["threshold"] = {{"mode", threshold::to_string(c.threshold_mode)},
                    {"variant", static_cast<int>(c.threshold_variant)}};
  j["dynamics"] = {{"bridge_gaps", c.bridge_gaps},
                   {"periods", detail::periods_to(c.periods)},
                   {"chronic_windows", detail::periods_to(c.chronic_windows)}};
  j["synth"] = synth::to_json(c.synth);
  j["seed"] = c.synth.seed;
  j["format"] = c.format == Format::csv ? "csv" : "json";
  return j;
}

// ---------------------------------------------------------------------------
// files

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::data, "cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::data, "cannot write " + path.string());
  out << text;
}

inline void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

inline ordered_json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::data, "cannot read " + path.string());
  return ordered_json::parse(in);
}

inline void write_table(const fs::path& path, const csv::Table& t) {
  fs::create_directories(path.parent_path());
  csv::write(path, t);
}

/// Table as {"columns": [...], "rows": [[...], ...]} with cells kept as text.
inline ordered_json table_json(const csv::Table& t) {
  ordered_json j;
  j["columns"] = t.header;
  j["rows"] = t.rows;
  return j;
}

/// Fails with the subcommand that produces `path` when it is absent.
inline void require(const fs::path& path, const char* producer) {
  if (!fs::exists(path))
    throw Error(ErrorKind::dependency,
                "missing " + path.filename().string() + " (" + path.string() + "); run `pfs " + producer + "` first");
}

// ---------------------------------------------------------------------------
// stage results

struct StageResult {
  std::string stage;
  ordered_json summary;
  std::vector<std::string> warnings;
};

inline void write_stage(const PipelineConfig& c, const StageResult& r) {
  ordered_json j;
  j["stage"] = r.stage;
  j["summary"] = r.summary;
  j["warnings"] = r.warnings;
  write_json(c.out() / r.stage / "stage.json", j);
}

inline ordered_json software() {
  ordered_json j;
  j["pfs"] = PFS_VERSION;
#if defined(__clang__)
  j["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  j["compiler"] = std::string("gcc ") + __VERSION__;
#else
  j["compiler"] = "unknown";
#endif
  j["cxx_standard"] = static_cast<long>(__cplusplus);
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  j["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  j["openssl"] = OPENSSL_VERSION_TEXT;
  return j;
}

/// Rewrites out/manifest.json from the files currently present.
inline ordered_json write_manifest(const PipelineConfig& c) {
  const fs::path root = c.out();
  fs::create_directories(root);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path() != root / "manifest.json") files.push_back(e.path());
  std::vector<std::pair<std::string, fs::path>> rel;
  for (const auto& f : files) rel.emplace_back(fs::relative(f, root).generic_string(), f);
  std::sort(rel.begin(), rel.end());

  ordered_json m;
  m["config"] = to_json(c);
  m["software"] = software();
  m["rng"] = {{"engine", "mt19937_64"},
              {"seeding", "splitmix64-derived sub-seed per dynasty"},
              {"transforms", "explicit uniform, polar normal and Marsaglia-Tsang gamma samplers"},
              {"seed", c.synth.seed}};
  ordered_json stages = ordered_json::object();
  for (const char* s : {"synth", "ingest", "estimate", "calibrate", "dynamics", "report"}) {
    const auto p = root / s / "stage.json";
    if (fs::exists(p)) stages[s] = read_json(p);
  }
  m["stages"] = stages;
  ordered_json list = ordered_json::array();
  for (const auto& [name, path] : rel)
    list.push_back({{"path", name}, {"bytes", fs::file_size(path)}, {"sha256", sha256_file(path)}});
  m["files"] = list;
  write_json(root / "manifest.json", m);
  return m;
}

// ---------------------------------------------------------------------------
// stages

inline StageResult run_synth(const PipelineConfig& c) {
  const auto panel = synth::generate(c.synth);
  const fs::path dir = c.out() / "synth";
  fs::create_directories(dir);
  synth::write(panel, dir);
  StageResult r{"synth", {}, {}};
  r.summary["raw_rows"] = panel.raw.rows.size();
  r.summary["truth_person_years"] = panel.truth_person_years.rows.size();
  r.summary["persons"] = panel.truth_roster.rows.size();
  r.summary["seed"] = c.synth.seed;
  write_stage(c, r);
  return r;
}

inline StageResult run_ingest(const PipelineConfig& c) {
  const auto panel_path = c.input(c.inputs.panel, "panel.csv");
  const auto cpi_path = c.input(c.inputs.cpi, "cpi.csv");
  require(panel_path, "synth");
  require(cpi_path, "synth");
  auto parsed = ingest::parse_panel_table(csv::read(panel_path), c.schema);
  const auto cpi = ingest::CpiTable::from_csv(cpi_path);
  const std::size_t raw_rows = parsed.records.size();
  auto h = ingest::harmonize_panel(std::move(parsed.records), cpi);
  std::vector<ingest::Warning> warnings = parsed.warnings;
  warnings.insert(warnings.end(), h.warnings.begin(), h.warnings.end());
  const auto panel = dynasty::build_panel(h.records, c.window);

  std::optional<dynasty::ReferenceComposition> ref;
  const auto ref_path = c.input(c.inputs.reference, "reference.csv");
  if (fs::exists(ref_path)) ref = dynasty::ReferenceComposition::from_csv(ref_path);

  const fs::path dir = c.out() / "ingest";
  write_table(dir / "harmonized.csv", ingest::harmonized_table(h.records));
  csv::Table ex{{"person_id", "year", "reason"}, {}};
  for (const auto& e : h.excluded) ex.rows.push_back({e.person_id, std::to_string(e.year), e.reason});
  for (const auto& [id, reason] : panel.sample.excluded) ex.rows.push_back({id, "", dynasty::to_string(reason)});
  write_table(dir / "exclusions.csv", ex);
  ingest::write_warnings_jsonl(dir / "warnings.jsonl", warnings);
  write_table(dir / "person_years.csv", dynasty::person_year_table(panel.person_years));
  write_table(dir / "roster.csv", dynasty::roster_table(panel, h.records));
  write_table(dir / "composition.csv",
              dynasty::composition_table(dynasty::representativeness_report(panel.person_years, ref), ref.has_value()));

  StageResult r{"ingest", {}, {}};
  r.summary["raw_rows"] = raw_rows;
  r.summary["harmonized_rows"] = h.records.size();
  r.summary["excluded_rows"] = h.excluded.size();
  r.summary["warnings"] = warnings.size();
  r.summary["persons_included"] = panel.sample.included.size();
  std::map<std::string, std::size_t> reasons;
  for (const auto& [id, reason] : panel.sample.excluded) ++reasons[dynasty::to_string(reason)];
  r.summary["persons_excluded"] = reasons;
  r.summary["geography_dropped"] = panel.geography_dropped;
  r.summary["person_years"] = panel.person_years.size();
  r.summary["imputation"] = {{"race_imputed", h.imputation.race_imputed},
                             {"education_imputed", h.imputation.education_imputed},
                             {"race_missing", h.imputation.race_missing},
                             {"education_missing", h.imputation.education_missing}};
  if (!warnings.empty()) r.warnings.push_back(std::to_string(warnings.size()) + " row warnings in ingest/warnings.jsonl");
  write_stage(c, r);
  return r;
}

inline std::vector<dynasty::PersonYear> load_person_years(const PipelineConfig& c) {
  const auto p = c.out() / "ingest" / "person_years.csv";
  require(p, "ingest");
  return dynasty::person_years_from_table(csv::read(p));
}

inline csv::Table coefficient_table(const estimate::MomentsResult& m) {
  std::vector<std::string> terms = m.mean_model.names;
  for (const auto& n : m.variance_model.names)
    if (std::find(terms.begin(), terms.end(), n) == terms.end()) terms.push_back(n);
  csv::Table t{{"term", "mean_coef", "mean_se", "variance_coef", "variance_se"}, {}};
  auto cell = [](const glm::FittedModel& f, const glm::Vector& se, const std::string& term, bool want_se) {
    for (std::size_t i = 0; i < f.names.size(); ++i)
      if (f.names[i] == term) {
        const auto k = static_cast<Eigen::Index>(i);
        if (!want_se) return csv::format(f.beta(k));
        return se.size() > k ? csv::format(se(k)) : std::string{};
      }
    return std::string{};
  };
  for (const auto& term : terms)
    t.rows.push_back({term, cell(m.mean_model, m.mean_se, term, false), cell(m.mean_model, m.mean_se, term, true),
                      cell(m.variance_model, m.variance_se, term, false),
                      cell(m.variance_model, m.variance_se, term, true)});
  return t;
}

inline StageResult run_estimate(const PipelineConfig& c) {
  const auto panel = load_person_years(c);
  auto cfg = c.estimation;
  cfg.standard_errors = true;
  const auto m = estimate::estimate_moments(panel, cfg, c.calendar);
  const auto rows = estimate::compute_pfs(panel, m.rows);
  const fs::path dir = c.out() / "estimate";
  write_table(dir / "pfs.csv", estimate::pfs_table(rows));
  write_json(dir / "moments.json", estimate::moments_json(m, cfg));
  write_table(dir / "coefficients.csv", coefficient_table(m));

  StageResult r{"estimate", {}, {}};
  r.summary["person_years"] = panel.size();
  r.summary["pfs_rows"] = rows.size();
  r.summary["rows_without_lag"] = m.no_lag;
  r.summary["rows_missing_covariates"] = m.missing_covariates;
  r.summary["rows_before_first_year"] = m.before_first_year;
  r.summary["variances_floored"] = m.floored;
  r.summary["mean_iterations"] = m.mean_model.iterations;
  r.summary["variance_iterations"] = m.variance_model.iterations;
  if (m.floored) r.warnings.push_back(std::to_string(m.floored) + " conditional variances floored");
  for (const auto& d : m.mean_model.dropped) r.warnings.push_back("mean equation dropped collinear column " + d);
  write_stage(c, r);
  return r;
}

inline std::vector<estimate::PfsRow> load_pfs(const PipelineConfig& c) {
  const auto p = c.out() / "estimate" / "pfs.csv";
  require(p, "estimate");
  return estimate::pfs_from_table(csv::read(p));
}

inline StageResult run_calibrate(const PipelineConfig& c) {
  const auto rows = load_pfs(c);
  threshold::ByYear samples;
  for (const auto& r : rows) {
    samples[r.year].pfs.push_back(r.pfs);
    samples[r.year].weight.push_back(r.adjusted_weight);
  }
  std::optional<threshold::Targets> targets;
  std::optional<threshold::MacroSeries> macro;
  const auto targets_path = c.input(c.inputs.targets, "targets.csv");
  const auto macro_path = c.input(c.inputs.macro, "macro.csv");
  if (c.threshold_mode == threshold::Mode::anchored) {
    if (!fs::exists(targets_path))
      throw Error(ErrorKind::config, "threshold mode anchored needs a targets CSV (" + targets_path.string() + ")");
    targets = threshold::targets_from_csv(targets_path);
  }
  if (c.threshold_mode == threshold::Mode::snap_model && !fs::exists(macro_path))
    throw Error(ErrorKind::config, "threshold mode snap-model needs a macro CSV (" + macro_path.string() + ")");
  if (fs::exists(macro_path)) macro = threshold::MacroSeries::from_csv(macro_path);
  if (c.threshold_mode == threshold::Mode::snap_model && fs::exists(targets_path))
    targets = threshold::targets_from_csv(targets_path);

  const auto res = threshold::calibrate(samples, c.threshold_mode, targets, macro, c.threshold_variant);
  const fs::path dir = c.out() / "calibrate";
  write_table(dir / "cutoffs.csv", threshold::cutoff_table(res.cutoffs));
  csv::Table cl{{"person_id", "year", "household_id", "pfs", "adjusted_weight", "cutoff", "insecure"}, {}};
  cl.rows.reserve(rows.size());
  for (const auto& r : rows) {
    const double cut = res.cutoffs.at(r.year).cutoff;
    cl.rows.push_back({r.person_id, std::to_string(r.year), r.household_id, csv::format(r.pfs),
                       csv::format(r.adjusted_weight), csv::format(cut), r.pfs < cut ? "1" : "0"});
  }
  write_table(dir / "classified.csv", cl);
  if (res.model) write_json(dir / "threshold_model.json", threshold::to_json(*res.model));

  std::map<int, double> anchored;
  for (const auto& [y, e] : res.cutoffs)
    if (e.provenance == threshold::Provenance::anchored) anchored[y] = e.cutoff;
  StageResult r{"calibrate", {}, {}};
  if (macro && anchored.size() >= 6) {
    write_table(dir / "table2.csv", threshold::variant_table(anchored, *macro));
    write_table(dir / "tableB3.csv", threshold::correlation_table(anchored, *macro));
  } else {
    r.warnings.push_back("threshold regressions skipped: need macro data and at least 6 anchored years");
  }
  std::size_t clamped = 0;
  for (const auto& [y, e] : res.cutoffs) clamped += e.clamped ? 1 : 0;
  r.summary["mode"] = threshold::to_string(c.threshold_mode);
  r.summary["years"] = res.cutoffs.size();
  r.summary["anchored_years"] = anchored.size();
  r.summary["classified_rows"] = rows.size();
  r.summary["clamped_cutoffs"] = clamped;
  r.summary["log"] = res.log;
  write_stage(c, r);
  return r;
}

struct Classified {
  std::string person_id;
  int year = 0;
  double pfs = 0;
  double weight = 0;
  double cutoff = 0;
  bool insecure = false;
};

inline std::vector<Classified> load_classified(const PipelineConfig& c) {
  const auto p = c.out() / "calibrate" / "classified.csv";
  require(p, "calibrate");
  const auto t = csv::read(p);
  const auto ci = t.require("person_id"), cy = t.require("year"), cp = t.require("pfs"),
             cw = t.require("adjusted_weight"), cc = t.require("cutoff"), cs = t.require("insecure");
  std::vector<Classified> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    out.push_back({t.rows[r][ci], static_cast<int>(csv::require_int(t, r, cy)), csv::require_double(t, r, cp),
                   csv::require_double(t, r, cw), csv::require_double(t, r, cc), t.rows[r][cs] == "1"});
  return out;
}

inline const std::vector<std::pair<const char*, dynamics::Grouping>>& groupings() {
  static const std::vector<std::pair<const char*, dynamics::Grouping>> g = {
      {"total", dynamics::Grouping::total},
      {"period", dynamics::Grouping::period},
      {"sex", dynamics::Grouping::sex},
      {"race", dynamics::Grouping::race},
      {"education", dynamics::Grouping::education}};
  return g;
}

/// Status series from classified person-years with the person's sex, race
/// and education.
inline std::vector<dynamics::PersonSeries> status_series(const std::vector<dynasty::PersonYear>& panel,
                                                         const std::vector<Classified>& classified,
                                                         const WaveCalendar& cal) {
  std::map<std::pair<std::string, int>, const dynasty::PersonYear*> index;
  for (const auto& p : panel) index[{p.rec.person_id, p.rec.year}] = &p;
  std::vector<dynamics::Observation> obs;
  obs.reserve(classified.size());
  for (const auto& c : classified) {
    auto it = index.find({c.person_id, c.year});
    if (it == index.end())
      throw Error(ErrorKind::join, "classified row " + c.person_id + "/" + std::to_string(c.year) + " has no panel row");
    const auto& rec = it->second->rec;
    obs.push_back({c.person_id, c.year, c.insecure, c.weight, rec.sex,
                   rec.race == ingest::Race::missing ? "" : ingest::to_string(rec.race),
                   rec.education ? ingest::to_string(*rec.education) : ""});
  }
  return dynamics::build_status_series(obs, cal);
}

inline StageResult run_dynamics(const PipelineConfig& c) {
  const auto panel = load_person_years(c);
  const auto classified = load_classified(c);
  const auto cal = c.analysis_calendar();
  const auto series = status_series(panel, classified, cal);
  const auto spells = dynamics::compute_spells(series, cal, c.bridge_gaps);
  const auto dist = dynamics::spell_distribution(spells);
  const fs::path dir = c.out() / "dynamics";

  csv::Table st{{"person_id", "start_wave", "length", "left_censored", "right_censored", "weight"}, {}};
  for (const auto& s : spells)
    st.rows.push_back({s.person_id, std::to_string(s.start_wave), std::to_string(s.length),
                       s.left_censored ? "1" : "0", s.right_censored ? "1" : "0", csv::format(s.weight)});
  write_table(dir / "spells.csv", st);

  csv::Table sl{{"length", "count", "weight", "share_weighted", "share_unweighted"}, {}};
  for (const auto& r : dist.by_length)
    sl.rows.push_back({std::to_string(r.length), std::to_string(r.count), csv::format(r.weight),
                       csv::format(r.share_weighted), csv::format(r.share_unweighted)});
  write_table(dir / "spell_lengths.csv", sl);

  csv::Table tr{{"grouping", "group", "n_pairs", "weight", "insecure_both", "insecure_first_only",
                 "insecure_second_only", "secure_both"},
                {}};
  csv::Table ch{{"grouping", "window", "group", "persons", "weight", "share"}, {}};
  for (const auto& [name, g] : groupings()) {
    for (const auto& row : dynamics::transition_matrix(series, cal, g, c.periods))
      tr.rows.push_back({name, row.group, std::to_string(row.n_pairs), csv::format(row.weight),
                         csv::format(row.insecure_both), csv::format(row.insecure_first_only),
                         csv::format(row.insecure_second_only), csv::format(row.secure_both)});
    if (g == dynamics::Grouping::period) continue;
    for (const auto& row : dynamics::chronic_prevalence(series, cal, c.chronic_windows, g))
      ch.rows.push_back({name, row.window, row.group, std::to_string(row.persons), csv::format(row.weight),
                         csv::format(row.share)});
  }
  write_table(dir / "transitions.csv", tr);
  write_table(dir / "chronic.csv", ch);

  csv::Table ns{{"year", "known_weight", "insecure_weight", "still", "newly", "prior_unknown"}, {}};
  for (const auto& r : dynamics::newly_still_decomposition(series, cal))
    ns.rows.push_back({std::to_string(r.year), csv::format(r.known_weight), csv::format(r.insecure_weight),
                       csv::format(r.still), csv::format(r.newly), csv::format(r.prior_unknown)});
  write_table(dir / "newly_still.csv", ns);

  StageResult r{"dynamics", {}, {}};
  r.summary["persons"] = series.size();
  r.summary["spells"] = dist.spells;
  r.summary["transitory_share_weighted"] = dist.transitory_weighted;
  r.summary["transitory_share_unweighted"] = dist.transitory_unweighted;
  r.summary["mean_length_weighted"] = dist.mean_length_weighted;
  r.summary["mean_length_unweighted"] = dist.mean_length_unweighted;
  r.summary["bridge_gaps"] = c.bridge_gaps;
  r.summary["spell_length_unit"] = "waves";
  write_stage(c, r);
  return r;
}

namespace detail {

inline std::vector<std::pair<std::string, dynamics::TransitionRow>> read_transitions(const csv::Table& t) {
  std::vector<std::pair<std::string, dynamics::TransitionRow>> out;
  const auto cg = t.require("grouping"), cl = t.require("group"), cn = t.require("n_pairs"), cw = t.require("weight"),
             c1 = t.require("insecure_both"), c2 = t.require("insecure_first_only"),
             c3 = t.require("insecure_second_only"), c4 = t.require("secure_both");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    dynamics::TransitionRow row;
    row.group = t.rows[r][cl];
    row.n_pairs = static_cast<std::size_t>(csv::require_int(t, r, cn));
    row.weight = csv::require_double(t, r, cw);
    row.insecure_both = csv::require_double(t, r, c1);
    row.insecure_first_only = csv::require_double(t, r, c2);
    row.insecure_second_only = csv::require_double(t, r, c3);
    row.secure_both = csv::require_double(t, r, c4);
    out.emplace_back(t.rows[r][cg], row);
  }
  return out;
}

inline std::vector<std::pair<std::string, dynamics::ChronicRow>> read_chronic(const csv::Table& t) {
  std::vector<std::pair<std::string, dynamics::ChronicRow>> out;
  const auto cg = t.require("grouping"), cw = t.require("window"), cl = t.require("group"),
             cp = t.require("persons"), cwt = t.require("weight"), cs = t.require("share");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    dynamics::ChronicRow row;
    row.window = t.rows[r][cw];
    row.group = t.rows[r][cl];
    row.persons = static_cast<std::size_t>(csv::require_int(t, r, cp));
    row.weight = csv::require_double(t, r, cwt);
    row.share = csv::require_double(t, r, cs);
    out.emplace_back(t.rows[r][cg], row);
  }
  return out;
}

inline std::vector<dynamics::NewlyStillRow> read_newly_still(const csv::Table& t) {
  std::vector<dynamics::NewlyStillRow> out;
  const auto cy = t.require("year"), ck = t.require("known_weight"), ci = t.require("insecure_weight"),
             cs = t.require("still"), cn = t.require("newly"), cu = t.require("prior_unknown");
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    out.push_back({static_cast<int>(csv::require_int(t, r, cy)), csv::require_double(t, r, ck),
                   csv::require_double(t, r, ci), csv::require_double(t, r, cs), csv::require_double(t, r, cn),
                   csv::require_double(t, r, cu)});
  return out;
}

}  // namespace detail

inline StageResult run_report(const PipelineConfig& c) {
  const auto panel = load_person_years(c);
  const auto pfs = load_pfs(c);
  const auto cutoff_path = c.out() / "calibrate" / "cutoffs.csv";
  require(cutoff_path, "calibrate");
  const fs::path dyn = c.out() / "dynamics";
  for (const char* f : {"spell_lengths.csv", "transitions.csv", "chronic.csv", "newly_still.csv"})
    require(dyn / f, "dynamics");
  const auto composition_path = c.out() / "ingest" / "composition.csv";
  require(composition_path, "ingest");

  const auto cutoffs = threshold::cutoffs_from_table(csv::read(cutoff_path));
  const auto obs = report::join(panel, pfs, cutoffs);
  const fs::path dir = c.out() / "report";
  fs::create_directories(dir);
  std::size_t tables = 0;
  auto emit = [&](const std::string& name, const csv::Table& t) {
    if (c.format == Format::csv) write_table(dir / (name + ".csv"), t);
    else write_json(dir / (name + ".json"), table_json(t));
    ++tables;
  };

  emit("table1", report::table1(obs));
  emit("table3", report::table3(obs));
  emit("tableB4", report::table_b4(obs));
  emit("table4", report::table4(obs));
  emit("rank_correlations", report::rank_correlation_table(obs));
  emit("table5", report::table5(detail::read_transitions(csv::read(dyn / "transitions.csv"))));
  emit("table6", report::table6(detail::read_chronic(csv::read(dyn / "chronic.csv"))));
  emit("tableB2", report::table_b2(report::association_models(obs, c.calendar)));

  const auto dist = report::pfs_distribution(obs);
  const auto prevalence = report::prevalence_series(obs, cutoffs);
  const auto boxes = report::pfs_boxes(obs);
  const auto lengths = csv::read(dyn / "spell_lengths.csv");
  const auto shares = report::newly_still_shares(detail::read_newly_still(csv::read(dyn / "newly_still.csv")));
  const auto composition = csv::read(composition_path);
  emit("figure1", dist);
  emit("figure3", prevalence);
  emit("figure4", report::box_table(boxes));
  emit("figure5", lengths);
  emit("figure6", shares);
  emit("figureA2", composition);
  write_text(dir / "figure1.svg", report::figure1(dist));
  write_text(dir / "figure3.svg", report::figure3(prevalence));
  write_text(dir / "figure4.svg", report::figure4(boxes));
  write_text(dir / "figure5.svg", report::figure5(lengths));
  write_text(dir / "figure6.svg", report::figure6(shares));
  write_text(dir / "figureA2.svg", report::figure_a2(composition));

  StageResult r{"report", {}, {}};
  r.summary["person_years"] = obs.size();
  r.summary["tables"] = tables;
  r.summary["figures"] = 6;
  r.summary["format"] = c.format == Format::csv ? "csv" : "json";
  r.summary["rank_correlation_weighting"] = "unweighted";
  write_stage(c, r);
  return r;
}

/// Runs a stage by name and refreshes the manifest.
inline StageResult run_stage(const std::string& name, const PipelineConfig& c) {
  static const std::map<std::string, std::function<StageResult(const PipelineConfig&)>> stages = {
      {"synth", run_synth},         {"ingest", run_ingest},     {"estimate", run_estimate},
      {"calibrate", run_calibrate}, {"dynamics", run_dynamics}, {"report", run_report}};
  auto it = stages.find(name);
  if (it == stages.end()) throw Error(ErrorKind::usage, "unknown stage '" + name + "'");
  auto r = it->second(c);
  write_manifest(c);
  return r;
}

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> s = {"synth", "ingest", "estimate", "calibrate", "dynamics", "report"};
  return s;
}

inline void run_all(const PipelineConfig& c) {
  for (const auto& s : stage_order()) run_stage(s, c);
}

}  // namespace pfs::pipeline
