#ifndef GEOINV_CONFIG_HPP
#define GEOINV_CONFIG_HPP

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "geoinv/experiments.hpp"
#include "geoinv/io.hpp"
#include "geoinv/scheduler.hpp"
#include "json.hpp"

namespace geoinv {

using Json = nlohmann::json;

inline constexpr int kConfigVersion = 1;

struct ModelSource {
  enum class Kind { salt, background, constant, file } kind = Kind::salt;
  SaltModel salt{};
  double value = 0.0;
  std::string path;
};

struct PhysicsConfig {
  enum class Kind { dc, eikonal, helmholtz } kind = Kind::dc;
  DcSurvey dc{};
  EikonalSurvey eikonal{};
  HelmholtzSurvey helmholtz{};
};

struct OptimizerConfig {
  GNOptions gn{};
  double alpha = 1e-10;
  std::string regularizer = "diffusion";
  double tv_eps = 1e-2;
};

struct SchedulerConfig {
  std::string mode = "serial";
  int n_workers = 1;
  BatchGrouping grouping = BatchGrouping::physics_frequency;
};

struct ContinuationConfig {
  std::vector<std::vector<double>> stages;  ///< empty: one stage with every term
  int cycles = 1;
};

struct OutputConfig {
  std::string dir = "geoinv_out";
  bool record_wall_time = true;
};

struct InversionConfig {
  std::uint64_t seed = 1;
  std::vector<Index> cells{32, 32};
  double cell_size = 1.0;
  ModelSource truth{};
  ModelSource initial{ModelSource::Kind::background, {}, 0.0, {}};
  double lower = 1.5;
  double upper = 4.5;
  std::vector<PhysicsConfig> physics;
  OptimizerConfig optimizer{};
  SchedulerConfig scheduler{};
  ContinuationConfig continuation{};
  OutputConfig output{};
  Json source;  ///< the document the config was read from, echoed into metadata

  TensorMesh mesh() const {
    std::vector<double> h(cells.size(), cell_size);
    return TensorMesh::uniform(cells, h);
  }

  std::vector<double> survey_frequencies() const {
    std::vector<double> f;
    for (const auto& p : physics)
      if (p.kind == PhysicsConfig::Kind::helmholtz) f.insert(f.end(), p.helmholtz.frequencies.begin(), p.helmholtz.frequencies.end());
    return f;
  }
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

[[noreturn]] inline void config_error(const std::string& path, const std::string& what) {
  throw Error(Errc::config, path + ": " + what);
}

inline void config_check(bool ok, const std::string& path, const std::string& what) {
  if (!ok) config_error(path, what);
}

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

/// Typed view of one JSON object that remembers its path and rejects keys
/// nobody asked about.
class ConfigObject {
 public:
  ConfigObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    config_check(j_.is_object(), path_.empty() ? "<root>" : path_, "expected an object");
  }

  const std::string& path() const { return path_; }
  std::string at(const std::string& key) const { return join_path(path_, key); }
  bool has(const std::string& key) const { return j_.contains(key); }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      config_error(at(key), "has the wrong type");
    }
  }

  template <typename T>
  T require_key(const std::string& key) {
    config_check(j_.contains(key), at(key), "is required");
    return get<T>(key, T{});
  }

  ConfigObject child(const std::string& key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return ConfigObject(j_.contains(key) ? j_.at(key) : empty, at(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) config_error(at(k), "unknown key");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline SolverSpec parse_solver(ConfigObject& o) {
  SolverSpec s;
  const auto name = o.get<std::string>("solver", "direct");
  try {
    s.kind = solver_kind_from_string(name);
  } catch (const Error&) {
    config_error(o.at("solver"), "unknown solver '" + name + "'");
  }
  s.tolerance = o.get<double>("solver_tolerance", s.tolerance);
  config_check(s.tolerance > 0.0, o.at("solver_tolerance"), "must be positive");
  return s;
}

inline ModelSource parse_model_source(ConfigObject o, ModelSource::Kind fallback) {
  ModelSource m;
  const auto type = o.get<std::string>("type", fallback == ModelSource::Kind::salt ? "salt" : "background");
  if (type == "salt" || type == "background") {
    m.kind = type == "salt" ? ModelSource::Kind::salt : ModelSource::Kind::background;
    auto& s = m.salt;
    s.top = o.get<double>("top", s.top);
    s.bottom = o.get<double>("bottom", s.bottom);
    s.salt = o.get<double>("salt", s.salt);
    s.lateral_center = o.get<std::array<double, 2>>("lateral_center", s.lateral_center);
    s.lateral_radius = o.get<std::array<double, 2>>("lateral_radius", s.lateral_radius);
    s.depth_center = o.get<double>("depth_center", s.depth_center);
    s.depth_radius = o.get<double>("depth_radius", s.depth_radius);
    config_check(s.depth_radius > 0.0 && s.lateral_radius[0] > 0.0 && s.lateral_radius[1] > 0.0, o.path(),
                 "salt radii must be positive");
  } else if (type == "constant") {
    m.kind = ModelSource::Kind::constant;
    m.value = o.require_key<double>("value");
  } else if (type == "file") {
    m.kind = ModelSource::Kind::file;
    m.path = o.require_key<std::string>("path");
    config_check(std::filesystem::exists(m.path), o.at("path"), "file '" + m.path + "' does not exist");
  } else {
    config_error(o.at("type"), "unknown model source '" + type + "'");
  }
  o.finish();
  return m;
}

inline PhysicsConfig parse_physics(ConfigObject o, const std::vector<Index>& cells) {
  PhysicsConfig p;
  const auto type = o.require_key<std::string>("type");
  if (type == "dc") {
    p.kind = PhysicsConfig::Kind::dc;
    auto& d = p.dc;
    d.coarsening = o.get<Index>("coarsening", d.coarsening);
    config_check(d.coarsening >= 1, o.at("coarsening"), "must be at least 1");
    for (Index n : cells)
      config_check(n % d.coarsening == 0, o.at("coarsening"), "must divide every model mesh axis");
    d.sources = o.get<Index>("sources", d.sources);
    d.noise = o.get<double>("noise", d.noise);
    if (o.has("map")) {
      const auto& mj = o.raw("map");
      if (mj.is_string()) {
        try {
          d.map = model_map_from_string(mj.get<std::string>());
        } catch (const Error&) {
          config_error(o.at("map"), "unknown model map '" + mj.get<std::string>() + "'");
        }
      } else {
        ConfigObject m(mj, o.at("map"));
        const auto name = m.require_key<std::string>("type");
        try {
          d.map = model_map_from_string(name);
        } catch (const Error&) {
          config_error(m.at("type"), "unknown model map '" + name + "'");
        }
        d.map.a = m.get<double>("a", d.map.a);
        d.map.b = m.get<double>("b", d.map.b);
        d.map.c = m.get<double>("c", d.map.c);
        m.finish();
      }
    }
    d.solver = parse_solver(o);
  } else if (type == "eikonal") {
    p.kind = PhysicsConfig::Kind::eikonal;
    p.eikonal.sources = o.get<Index>("sources", p.eikonal.sources);
    p.eikonal.noise = o.get<double>("noise", p.eikonal.noise);
    p.eikonal.source_radius = o.get<double>("source_radius", p.eikonal.source_radius);
    config_check(p.eikonal.source_radius >= 0.0, o.at("source_radius"), "must be non-negative");
  } else if (type == "helmholtz") {
    p.kind = PhysicsConfig::Kind::helmholtz;
    auto& h = p.helmholtz;
    h.frequencies = o.require_key<std::vector<double>>("frequencies");
    config_check(!h.frequencies.empty(), o.at("frequencies"), "must not be empty");
    for (std::size_t i = 0; i < h.frequencies.size(); ++i)
      config_check(h.frequencies[i] > 0.0, o.at("frequencies") + "." + std::to_string(i), "frequencies must be positive");
    h.pad = o.get<Index>("pad", h.pad);
    config_check(h.pad >= 0 && cells[0] - 2 * h.pad >= 2 && cells.back() - h.pad >= 1, o.at("pad"),
                 "padding leaves no interior");
    h.strength = o.get<double>("strength", h.strength);
    config_check(h.strength >= 0.0, o.at("strength"), "must be non-negative");
    h.sources = o.get<Index>("sources", h.sources);
    h.noise = o.get<double>("noise", h.noise);
    h.source_batch = o.get<Index>("source_batch", h.source_batch);
    config_check(h.source_batch >= 1, o.at("source_batch"), "must be at least 1");
    h.solver = parse_solver(o);
  } else {
    config_error(o.at("type"), "unknown physics '" + type + "'");
  }
  const Index sources = p.kind == PhysicsConfig::Kind::dc        ? p.dc.sources
                        : p.kind == PhysicsConfig::Kind::eikonal ? p.eikonal.sources
                                                                 : p.helmholtz.sources;
  const double noise = p.kind == PhysicsConfig::Kind::dc        ? p.dc.noise
                       : p.kind == PhysicsConfig::Kind::eikonal ? p.eikonal.noise
                                                                : p.helmholtz.noise;
  config_check(sources >= 1, o.at("sources"), "must be at least 1");
  config_check(noise >= 0.0, o.at("noise"), "must be non-negative");
  o.finish();
  return p;
}

}  // namespace detail

/// Validates a configuration document and returns the typed config. Every
/// error is Errc::config and names the offending field path.
inline InversionConfig parse_config(const Json& doc) {
  using detail::config_check;
  using detail::config_error;
  InversionConfig c;
  c.source = doc;
  detail::ConfigObject root(doc, "");
  const int version = root.require_key<int>("version");
  config_check(version == kConfigVersion, "version", "unsupported config version " + std::to_string(version));
  c.seed = root.get<std::uint64_t>("seed", c.seed);

  auto model = root.child("model");
  c.cells = model.get<std::vector<Index>>("cells", c.cells);
  config_check(c.cells.size() == 2 || c.cells.size() == 3, model.at("cells"), "must list 2 or 3 axis sizes");
  for (Index n : c.cells) config_check(n >= 2, model.at("cells"), "every axis needs at least 2 cells");
  c.cell_size = model.get<double>("cell_size", c.cell_size);
  config_check(c.cell_size > 0.0, model.at("cell_size"), "must be positive");
  c.truth = detail::parse_model_source(model.child("truth"), ModelSource::Kind::salt);
  c.initial = detail::parse_model_source(model.child("initial"), ModelSource::Kind::background);
  c.lower = model.get<double>("lower", c.lower);
  c.upper = model.get<double>("upper", c.upper);
  config_check(c.lower <= c.upper, model.at("lower"),
               "lower bound " + format_double(c.lower) + " exceeds upper bound " + format_double(c.upper));
  model.finish();

  config_check(root.has("physics"), "physics", "is required");
  const auto& phys = root.raw("physics");
  config_check(phys.is_array() && !phys.empty(), "physics", "must be a nonempty list");
  for (std::size_t i = 0; i < phys.size(); ++i)
    c.physics.push_back(detail::parse_physics(detail::ConfigObject(phys[i], "physics." + std::to_string(i)), c.cells));

  auto opt = root.child("optimizer");
  auto& g = c.optimizer.gn;
  g.max_gn = opt.get<int>("max_gn", g.max_gn);
  config_check(g.max_gn >= 0, opt.at("max_gn"), "must be non-negative");
  g.max_pcg = opt.get<int>("max_pcg", g.max_pcg);
  config_check(g.max_pcg >= 1, opt.at("max_pcg"), "must be at least 1");
  g.pcg_tol = opt.get<double>("pcg_tol", g.pcg_tol);
  g.c1 = opt.get<double>("c1", g.c1);
  config_check(g.c1 > 0.0 && g.c1 < 1.0, opt.at("c1"), "must lie in (0, 1)");
  g.max_backtracks = opt.get<int>("max_backtracks", g.max_backtracks);
  config_check(g.max_backtracks >= 0, opt.at("max_backtracks"), "must be non-negative");
  g.proj_grad_tol = opt.get<double>("proj_grad_tol", g.proj_grad_tol);
  g.precond_shift = opt.get<double>("precond_shift", g.precond_shift);
  config_check(g.precond_shift >= 0.0, opt.at("precond_shift"), "must be non-negative");
  if (opt.has("max_step")) {
    g.max_step = opt.get<double>("max_step", g.max_step);
    config_check(g.max_step > 0.0, opt.at("max_step"), "must be positive");
  }
  const auto pre = opt.get<std::string>("preconditioner", "regularizer");
  if (pre == "regularizer")
    g.preconditioner = PcgPreconditioner::regularizer;
  else if (pre == "none")
    g.preconditioner = PcgPreconditioner::none;
  else
    config_error(opt.at("preconditioner"), "unknown preconditioner '" + pre + "'");
  c.optimizer.alpha = opt.get<double>("alpha", c.optimizer.alpha);
  config_check(c.optimizer.alpha >= 0.0, opt.at("alpha"), "must be non-negative");
  c.optimizer.regularizer = opt.get<std::string>("regularizer", c.optimizer.regularizer);
  config_check(c.optimizer.regularizer == "diffusion" || c.optimizer.regularizer == "tv", opt.at("regularizer"),
               "must be 'diffusion' or 'tv'");
  c.optimizer.tv_eps = opt.get<double>("tv_eps", c.optimizer.tv_eps);
  config_check(c.optimizer.tv_eps > 0.0, opt.at("tv_eps"), "must be positive");
  opt.finish();

  auto sch = root.child("scheduler");
  c.scheduler.mode = sch.get<std::string>("mode", c.scheduler.mode);
  config_check(c.scheduler.mode == "serial" || c.scheduler.mode == "dynamic" || c.scheduler.mode == "static",
               sch.at("mode"), "must be 'serial', 'dynamic' or 'static'");
  c.scheduler.n_workers = sch.get<int>("n_workers", c.scheduler.n_workers);
  config_check(c.scheduler.n_workers >= 1, sch.at("n_workers"), "must be at least 1");
  const auto grouping = sch.get<std::string>("grouping", "physics_frequency");
  try {
    c.scheduler.grouping = batch_grouping_from_string(grouping);
  } catch (const Error&) {
    config_error(sch.at("grouping"), "unknown grouping '" + grouping + "'");
  }
  sch.finish();

  auto cont = root.child("continuation");
  c.continuation.stages = cont.get<std::vector<std::vector<double>>>("stages", {});
  c.continuation.cycles = cont.get<int>("cycles", c.continuation.cycles);
  config_check(c.continuation.cycles >= 1, cont.at("cycles"), "must be at least 1");
  if (!c.continuation.stages.empty()) {
    const auto freqs = c.survey_frequencies();
    double prev_low = -1.0;
    for (std::size_t s = 0; s < c.continuation.stages.size(); ++s) {
      const auto& st = c.continuation.stages[s];
      const auto p = cont.at("stages") + "." + std::to_string(s);
      config_check(!st.empty(), p, "stage must list at least one frequency");
      config_check(std::is_sorted(st.begin(), st.end()), p, "frequencies within a stage must be ascending");
      config_check(st.front() >= prev_low, p, "stages must be ascending in frequency");
      prev_low = st.front();
      for (double f : st)
        config_check(std::find(freqs.begin(), freqs.end(), f) != freqs.end(), p,
                     "frequency " + format_double(f) + " is not in any helmholtz survey");
    }
  }
  cont.finish();

  auto out = root.child("output");
  c.output.dir = out.get<std::string>("dir", c.output.dir);
  config_check(!c.output.dir.empty(), out.at("dir"), "must not be empty");
  c.output.record_wall_time = out.get<bool>("record_wall_time", c.output.record_wall_time);
  out.finish();

  root.finish();
  return c;
}

/// Applies "a.b.c=value"; the value is parsed as JSON when possible and taken
/// as a string otherwise. Numeric segments index into lists.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  detail::config_check(eq != std::string::npos && eq > 0, assignment, "override must look like path=value");
  const auto path = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const auto key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    detail::config_check(!key.empty(), path, "empty path segment");
    if (node->is_array()) {
      const bool numeric = std::all_of(key.begin(), key.end(), [](char ch) { return std::isdigit(ch); });
      detail::config_check(numeric, path, "'" + key + "' does not index a list");
      const auto i = std::stoul(key);
      detail::config_check(i < node->size(), path, "list index " + key + " out of range");
      node = &(*node)[i];
    } else {
      if (node->is_null()) *node = Json::object();
      detail::config_check(node->is_object(), path, "'" + key + "' does not name an object member");
      node = &(*node)[key];
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), Errc::io, "cannot open " + path.string());
  Json j = Json::parse(f, nullptr, false);
  require(!j.is_discarded(), Errc::config, path.string() + ": not valid JSON");
  return j;
}

inline InversionConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  auto doc = read_json_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc);
}

// ---------------------------------------------------------------------------
// Problem assembly

inline Vector realize_model(const ModelSource& s, const TensorMesh& mesh) {
  switch (s.kind) {
    case ModelSource::Kind::salt: return s.salt.truth(mesh);
    case ModelSource::Kind::background: return s.salt.background(mesh);
    case ModelSource::Kind::constant: return Vector(static_cast<std::size_t>(mesh.num_cells()), s.value);
    case ModelSource::Kind::file: {
      auto f = read_model_file(s.path);
      for (int a = 0; a < mesh.dim(); ++a)
        require(f.n[a] == mesh.n(a), Errc::config, s.path + ": model dimensions do not match the config mesh");
      return std::move(f.values);
    }
  }
  return {};
}

/// Synthetic data and misfit terms for every survey, generated in the order
/// the physics are listed. Helmholtz terms remember their frequency.
struct Survey {
  TensorMesh mesh;
  Vector truth;
  Vector initial;
  std::vector<MisfitTerm> terms;
  std::vector<double> frequency;  ///< per term; 0 for non-wave physics

  std::vector<MisfitTerm> terms_for(const std::vector<double>& freqs) const {
    std::vector<MisfitTerm> out;
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (frequency[i] == 0.0 || std::find(freqs.begin(), freqs.end(), frequency[i]) != freqs.end())
        out.push_back(terms[i]);
    return out;
  }
};

inline Survey build_survey(const InversionConfig& c) {
  Survey s{c.mesh(), {}, {}, {}, {}};
  s.truth = realize_model(c.truth, s.mesh);
  s.initial = realize_model(c.initial, s.mesh);
  std::mt19937_64 rng(c.seed);
  for (const auto& p : c.physics) {
    std::vector<MisfitTerm> t;
    std::vector<double> f;
    switch (p.kind) {
      case PhysicsConfig::Kind::dc:
        t = make_dc_terms(s.mesh, s.truth, p.dc, rng);
        f.assign(t.size(), 0.0);
        break;
      case PhysicsConfig::Kind::eikonal:
        t = make_eikonal_terms(s.mesh, s.truth, p.eikonal, rng);
        f.assign(t.size(), 0.0);
        break;
      case PhysicsConfig::Kind::helmholtz:
        t = make_helmholtz_terms(s.mesh, s.truth, p.helmholtz, rng);
        f = p.helmholtz.frequencies;
        break;
    }
    for (auto& x : t) s.terms.push_back(std::move(x));
    s.frequency.insert(s.frequency.end(), f.begin(), f.end());
  }
  return s;
}

inline std::unique_ptr<Executor> make_executor(const SchedulerConfig& c, std::vector<MisfitTerm> terms) {
  if (c.mode == "serial") return std::make_unique<SerialExecutor>(std::move(terms));
  SchedulerOptions o;
  o.mode = schedule_mode_from_string(c.mode);
  o.n_workers = c.n_workers;
  o.grouping = c.grouping;
  return std::make_unique<DistributedExecutor>(std::move(terms), o);
}

inline std::unique_ptr<Regularizer> make_regularizer(const OptimizerConfig& c, const TensorMesh& mesh,
                                                     const Vector& reference) {
  if (c.regularizer == "tv") return std::make_unique<TvRegularizer>(mesh, c.tv_eps);
  return std::make_unique<DiffusionRegularizer>(mesh, reference);
}

// ---------------------------------------------------------------------------
// Drivers

struct StageResult {
  int cycle = 1;
  int stage = 1;
  std::vector<double> frequencies;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  GNStatus status = GNStatus::running;
  std::vector<GNIterationRecord> records;
  std::filesystem::path csv;
};

struct InversionResult {
  Vector model;
  Vector truth;
  Vector initial;
  std::vector<StageResult> stages;
  std::vector<GNIterationRecord> records;  ///< every stage, in order
  double relative_error = 0.0;
};

inline void write_metadata(const std::filesystem::path& path, const InversionConfig& c, const InversionResult& r) {
  Json meta;
  meta["format"] = "geoinv-result";
  meta["version"] = kConfigVersion;
  meta["cells"] = c.cells;
  meta["cell_size"] = c.cell_size;
  meta["model_file"] = "model.bin";
  meta["relative_error"] = r.relative_error;
  meta["iterations"] = r.records.size();
  Json stages = Json::array();
  for (const auto& s : r.stages)
    stages.push_back({{"cycle", s.cycle},
                      {"stage", s.stage},
                      {"frequencies", s.frequencies},
                      {"initial_objective", s.initial_objective},
                      {"final_objective", s.final_objective},
                      {"status", to_string(s.status)},
                      {"convergence", s.csv.filename().string()}});
  meta["stages"] = stages;
  meta["config"] = c.source;
  std::ofstream f(path);
  require(f.good(), Errc::io, "cannot open " + path.string());
  f << meta.dump(2) << '\n';
  require(f.good(), Errc::io, "write failed for " + path.string());
}

/// Builds the survey, runs projected Gauss-Newton once per continuation stage
/// (or once overall), warm-starting every stage from the previous model, and
/// writes the convergence history, model snapshots and metadata. Outputs of
/// completed stages survive a failing stage.
inline InversionResult run_inversion(const InversionConfig& c, std::ostream* log = nullptr,
                                     const IterationCallback& on_iteration = {}) {
  const auto survey = build_survey(c);
  const auto& mesh = survey.mesh;
  const auto bounds = Bounds::uniform(static_cast<std::size_t>(mesh.num_cells()), c.lower, c.upper);
  const auto reg = make_regularizer(c.optimizer, mesh, survey.initial);

  const std::filesystem::path dir = c.output.dir;
  std::filesystem::create_directories(dir);
  write_model_file(dir / "truth.bin", model_file_for(mesh, survey.truth));
  write_model_file(dir / "initial.bin", model_file_for(mesh, survey.initial));

  const bool staged = !c.continuation.stages.empty();
  const auto stage_list = staged ? c.continuation.stages : std::vector<std::vector<double>>{c.survey_frequencies()};
  const int cycles = staged ? c.continuation.cycles : 1;

  InversionResult r{survey.initial, survey.truth, survey.initial, {}, {}, 0.0};
  int global_stage = 0;
  for (int cy = 1; cy <= cycles; ++cy)
    for (std::size_t s = 0; s < stage_list.size(); ++s) {
      ++global_stage;
      auto ex = make_executor(c.scheduler, survey.terms_for(stage_list[s]));
      auto on_iter = [&](const GNIterationRecord& rec, const GNState& st) {
        if (on_iteration) on_iteration(rec, st);
        if (log)
          *log << "stage " << rec.stage << " it " << rec.iteration << " objective " << format_double(rec.objective)
               << " |Pg| " << format_double(rec.proj_grad_norm) << " pcg " << rec.pcg_iters << " ls " << rec.ls_steps
               << '\n';
      };
      StageResult sr{cy, static_cast<int>(s) + 1, stage_list[s], 0.0, 0.0, GNStatus::running, {}, {}};
      try {
        auto st = projected_gauss_newton(*ex, r.model, bounds, c.optimizer.alpha, *reg, c.optimizer.gn, on_iter,
                                         global_stage);
        r.model = st.model;
        sr.initial_objective = st.initial_objective;
        sr.final_objective = st.objective_history.empty() ? st.initial_objective : st.objective_history.back();
        sr.status = st.status;
        sr.records = std::move(st.records);
      } catch (const Error& e) {
        throw Error(e.code(), "stage " + std::to_string(global_stage) + " (cycle " + std::to_string(cy) +
                                  "): " + e.what());
      }
      if (staged) {
        sr.csv = dir / ("convergence_cycle" + std::to_string(cy) + "_stage" + std::to_string(s + 1) + ".csv");
        write_convergence_csv(sr.csv, sr.records, c.output.record_wall_time);
        write_model_file(dir / ("model_cycle" + std::to_string(cy) + "_stage" + std::to_string(s + 1) + ".bin"),
                         model_file_for(mesh, r.model));
      } else {
        sr.csv = dir / "convergence.csv";
      }
      r.records.insert(r.records.end(), sr.records.begin(), sr.records.end());
      r.stages.push_back(std::move(sr));
    }

  r.relative_error = relative_error(r.model, r.truth);
  write_convergence_csv(dir / "convergence.csv", r.records, c.output.record_wall_time);
  write_model_file(dir / "model.bin", model_file_for(mesh, r.model));
  write_metadata(dir / "model.json", c, r);
  return r;
}

/// run_inversion with the given continuation schedule in place of the
/// config's own.
inline InversionResult frequency_continuation(const std::vector<std::vector<double>>& stages, int cycles,
                                              const InversionConfig& base, std::ostream* log = nullptr) {
  Json doc = base.source;
  doc["continuation"] = {{"stages", stages}, {"cycles", cycles}};
  detail::config_check(!stages.empty(), "continuation.stages", "must not be empty");
  auto c = parse_config(doc);
  c.output = base.output;
  return run_inversion(c, log);
}

/// Predicted data of every survey term for model m (velocity on the config
/// mesh), as rows term,label,frequency,index,value.
inline void write_forward_csv(const std::filesystem::path& path, const Survey& s, const Vector& m) {
  std::ofstream f(path);
  require(f.good(), Errc::io, "cannot open " + path.string());
  f << "term,label,frequency,index,value\n";
  for (std::size_t t = 0; t < s.terms.size(); ++t) {
    auto term = s.terms[t];
    const Vector mapped = term.map().apply(term.transfer() ? *term.transfer() * m : m).values;
    const auto d = term.forward().simulate(mapped);
    for (std::size_t i = 0; i < d.size(); ++i)
      f << t << ',' << term.label() << ',' << format_double(s.frequency[t]) << ',' << i << ',' << format_double(d[i])
        << '\n';
  }
  require(f.good(), Errc::io, "write failed for " + path.string());
}

}  // namespace geoinv

#endif  // GEOINV_CONFIG_HPP
