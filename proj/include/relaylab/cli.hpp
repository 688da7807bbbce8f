#pragma once

// Command-line front end. Each subcommand reads a resolved Settings object,
// writes its artifacts plus a resolved-config echo, and reports failures as a
// single machine-parsable line:
//
//   error kind=<kind> command=<command> message="<text>"

#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "relaylab/config.hpp"
#include "relaylab/experiments.hpp"

namespace relaylab {

namespace cli {

inline ConfigKey output_key(std::string name, std::string def, std::string help) {
  return {std::move(name), std::move(def), std::move(help), true};
}

inline ConfigSchema common_keys() {
  return {
      {"seed", "0", "base seed (trajectory ICs for generate, bootstrap resampling elsewhere)"},
      output_key("workers", "1", "worker threads"),
      output_key("deterministic", "false", "request bit-identical reruns (always honoured; recorded for provenance)"),
      {"domain_length", "1", "side of the periodic box used when reading trajectories"},
  };
}

inline ConfigSchema source_keys() {
  return {
      {"source", "", "source-regime dataset directory"},
      {"source_nu", "0.001", "viscosity every source trajectory must carry"},
      {"source_trajectories", "", "id range lo:hi of source trajectories (empty: all)"},
      {"frame_lo", "10", "first database frame"},
      {"frame_hi", "49", "one past the last database frame (its successor is frame_hi)"},
  };
}

inline ConfigSchema evaluation_keys() {
  return {
      {"pca_model", "", "PCA model file; fitted in memory from the source frames when empty"},
      {"n_components", "36", "PCA components when fitting in memory"},
      {"latents", "", "LTN1 file with external latents for source and target frames"},
      {"target", "", "evaluation dataset directory"},
      {"target_trajectories", "", "id range lo:hi of target trajectories (empty: all)"},
      {"context_frames", "10", "observed frames before the first prediction"},
      {"horizon", "10", "prediction steps T"},
      {"ride_length", "3", "steps between scheduled rematches"},
      {"n_boot", "1000", "bootstrap resamples"},
      {"ci_level", "0.95", "bootstrap interval level"},
      output_key("out_dir", "", "output directory"),
  };
}

inline ConfigSchema concat(std::initializer_list<ConfigSchema> parts) {
  ConfigSchema out;
  for (const ConfigSchema& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline const std::map<std::string, ConfigSchema>& schemas() {
  static const std::map<std::string, ConfigSchema> all = [] {
    std::map<std::string, ConfigSchema> m;
    m["generate"] = concat({common_keys(),
                            {
                                {"nu", "0.001", "viscosity"},
                                {"dt", "0.005", "integrator step"},
                                {"grid", "64", "grid points per side"},
                                {"forcing_shape", "diagonal", "kolmogorov: A cos(k_f y); diagonal: A (sin + cos)(k_f (x + y))"},
                                {"k_f", "1", "forcing wavenumber"},
                                {"forcing_amplitude", "0.1", "forcing amplitude A"},
                                {"ic_spectrum", "matern", "matern or power_law"},
                                {"ic_tau", "7", "matern IC length-scale parameter"},
                                {"ic_alpha", "2.5", "matern IC smoothness exponent"},
                                {"ic_peak_k", "4", "power-law IC peak mode"},
                                {"ic_decay", "3", "power-law IC decay exponent"},
                                {"ic_rms", "0.27", "IC vorticity rms"},
                                {"record_interval", "1", "time between frames"},
                                {"spinup_time", "1", "time integrated before frame 0"},
                                {"check_cfl", "true", "abort when dt violates the CFL bound"},
                                {"n_frames", "50", "frames per trajectory"},
                                {"n_trajectories", "200", "trajectories to generate"},
                                {"first_id", "0", "id of the first trajectory"},
                                output_key("out_dir", "", "dataset directory"),
                            }});
    m["pca-fit"] = concat({common_keys(), source_keys(),
                           {
                               {"n_components", "36", "principal components"},
                               output_key("out", "", "PCA model file"),
                           }});
    m["db-build"] = concat({common_keys(), source_keys(),
                            {
                                {"encoder", "pca", "raw, pca or external"},
                                {"pca_model", "", "PCA model file (pca encoder)"},
                                {"latents", "", "LTN1 file (external encoder)"},
                                {"history_length", "1", "frames per key"},
                                output_key("out", "", "database recipe file"),
                            }});
    const ConfigSchema eval = concat({common_keys(), source_keys(), evaluation_keys()});
    m["rollout"] = concat({eval,
                           {
                               {"database", "", "database recipe from db-build (built in memory when empty)"},
                               {"method", "relay", "relay or persistence"},
                               {"encoder", "pca", "raw, pca or external"},
                               {"update_rule", "delta", "delta or copy"},
                               {"alpha", "1", "delta scale"},
                               {"oracle_matching", "false", "match on true states"},
                               {"oracle_magnitude", "false", "rescale deltas to the true norm"},
                               {"history_length", "1", "frames per key"},
                               {"oracle_history", "false", "true frames in the history window"},
                               {"label", "", "method label in outputs (derived when empty)"},
                               {"write_predictions", "false", "write predicted frames as VRT1 files"},
                           }});
    m["evaluate"] = concat({eval,
                            {
                                {"targets", "", "comma-separated evaluation dataset directories (overrides target)"},
                                {"methods", "persistence,raw-copy,pca-delta", "comma-separated methods"},
                            }});
    m["ablate-2x2"] = eval;
    m["ablate-oracle"] = concat({eval,
                                 {
                                     {"encoder", "pca", "matching space"},
                                     {"alphas", "1.0,1.25,1.5,1.75,2.0,2.5", "alpha grid under oracle matching"},
                                 }});
    m["ablate-dbsize"] = concat({eval,
                                 {
                                     {"encoder", "pca", "matching space"},
                                     {"sizes", "25,50,100,200", "database sizes in source trajectories"},
                                 }});
    m["ablate-ride"] = concat({eval,
                               {
                                   {"encoder", "pca", "matching space"},
                                   {"rides", "1,2,3,5,10", "ride lengths"},
                               }});
    m["ablate-horizon"] = concat({eval,
                                  {
                                      {"encoder", "pca", "matching space"},
                                      {"horizons", "10,15,20", "horizons T"},
                                  }});
    m["ablate-history"] = concat({eval,
                                  {
                                      {"encoder", "pca", "matching space"},
                                      {"history", "10", "history length H compared against H=1"},
                                  }});
    m["export-csv"] = concat({common_keys(),
                              {
                                  {"input_dir", "", "directory searched recursively for records.csv"},
                                  output_key("out_dir", "", "directory for per-figure csv files"),
                              }});
    return m;
  }();
  return all;
}

inline std::string nonempty(const Settings& s, const std::string& key) {
  const std::string& v = s.str(key);
  if (v.empty()) throw ConfigError(s.command() + ": '" + key + "' must be set");
  return v;
}

inline fs::path existing_path(const Settings& s, const std::string& key) {
  const fs::path p = nonempty(s, key);
  if (!fs::exists(p)) throw FormatError(FormatError::Kind::io, s.command() + ": " + key + " '" + p.string() + "' does not exist");
  return p;
}

inline bool inside(const fs::path& child, const fs::path& parent) {
  const fs::path c = fs::weakly_canonical(fs::absolute(child));
  const fs::path p = fs::weakly_canonical(fs::absolute(parent));
  auto ci = c.begin();
  for (auto pi = p.begin(); pi != p.end(); ++pi, ++ci) {
    if (pi->empty()) continue;
    if (ci == c.end() || *ci != *pi) return false;
  }
  return true;
}

/// The only writer an evaluation command gets: files go to `dir` and `dir`
/// may not lie inside any input location.
class OutputDir {
 public:
  OutputDir(fs::path dir, const std::vector<fs::path>& inputs) : dir_(std::move(dir)) {
    if (dir_.empty()) throw ConfigError("out_dir must be set");
    for (const fs::path& in : inputs) {
      if (in.empty()) continue;
      const fs::path root = fs::is_directory(in) ? in : in.parent_path();
      if (!fs::is_directory(in) && fs::weakly_canonical(fs::absolute(dir_)) == fs::weakly_canonical(fs::absolute(root))) {
        throw ConfigError("out_dir " + dir_.string() + " is the directory of input " + in.string());
      }
      if (fs::is_directory(in) && inside(dir_, in)) {
        throw ConfigError("out_dir " + dir_.string() + " lies inside input " + in.string() +
                          "; evaluation never writes to its inputs");
      }
    }
    fs::create_directories(dir_);
  }
  void write(const std::string& name, std::string_view bytes) const { write_file_atomic(dir_ / name, bytes); }
  [[nodiscard]] const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
};

inline void write_echo(const OutputDir& out, const Settings& s) {
  out.write("resolved_config.txt", s.echo() + "config_hash = " + s.hash() + "\n");
}

inline SolverConfig solver_config(const Settings& s) {
  SolverConfig c;
  const auto n = static_cast<std::size_t>(s.uint("grid"));
  c.grid = Grid{n, n, s.real("domain_length")};
  c.nu = s.real("nu");
  c.dt = s.real("dt");
  c.k_f = static_cast<int>(s.uint("k_f"));
  c.forcing_amplitude = s.real("forcing_amplitude");
  const std::string& shape = s.str("forcing_shape");
  if (shape == "kolmogorov") c.forcing_shape = ForcingShape::kolmogorov;
  else if (shape == "diagonal") c.forcing_shape = ForcingShape::diagonal;
  else throw ConfigError("forcing_shape must be kolmogorov or diagonal, got '" + shape + "'");
  const std::string& spectrum = s.str("ic_spectrum");
  if (spectrum == "matern") c.ic.spectrum = InitialSpectrum::matern;
  else if (spectrum == "power_law") c.ic.spectrum = InitialSpectrum::power_law;
  else throw ConfigError("ic_spectrum must be matern or power_law, got '" + spectrum + "'");
  c.ic.tau = s.real("ic_tau");
  c.ic.alpha = s.real("ic_alpha");
  c.ic.peak_k = s.real("ic_peak_k");
  c.ic.decay = s.real("ic_decay");
  c.ic.rms = s.real("ic_rms");
  c.record_interval = s.real("record_interval");
  c.spinup_time = s.real("spinup_time");
  c.check_cfl = s.flag("check_cfl");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline std::string fixed(double v, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Parsed {
  EncoderKind encoder = EncoderKind::pca;
  UpdateRule rule = UpdateRule::delta;
};

/// "persistence" or "<encoder>-<rule>", e.g. "pca-delta".
inline std::optional<Parsed> parse_method(const std::string& m) {
  if (m == "persistence") return std::nullopt;
  const auto dash = m.rfind('-');
  if (dash == std::string::npos) throw ConfigError("method '" + m + "' is not persistence or <encoder>-<delta|copy>");
  Parsed p;
  p.encoder = parse_encoder(m.substr(0, dash));
  const std::string rule = m.substr(dash + 1);
  if (rule == "delta") p.rule = UpdateRule::delta;
  else if (rule == "copy") p.rule = UpdateRule::copy;
  else throw ConfigError("method '" + m + "': update rule must be delta or copy");
  return p;
}

/// Inputs shared by the evaluation commands: source data, representations
/// and databases, built lazily and cached.
class EvalContext {
 public:
  explicit EvalContext(const Settings& s) : s_(s) {
    source_dir_ = existing_path(s, "source");
    source_entries_ = dataset_entries(source_dir_, IdRange::parse(s.str("source_trajectories")));
    require_regime(source_entries_, s.real("source_nu"), s.command() + " source");
    frame_lo_ = s.uint("frame_lo");
    frame_hi_ = s.uint("frame_hi");
    if (!s.str("latents").empty()) {
      latents_ = std::make_shared<const LatentTable>(load_latents(existing_path(s, "latents")));
    }
    if (!s.str("pca_model").empty()) pca_path_ = existing_path(s, "pca_model");
    opt_.context_frames = s.uint("context_frames");
    opt_.n_boot = s.uint("n_boot");
    opt_.level = s.real("ci_level");
    opt_.boot_seed = s.uint("seed");
    opt_.workers = std::max<std::size_t>(1, s.uint("workers"));
  }

  [[nodiscard]] std::vector<fs::path> inputs() const {
    std::vector<fs::path> v{source_dir_, pca_path_};
    if (!s_.str("latents").empty()) v.emplace_back(s_.str("latents"));
    if (s_.has("database") && !s_.str("database").empty()) v.emplace_back(s_.str("database"));
    return v;
  }

  [[nodiscard]] const EvalOptions& options() const { return opt_; }
  [[nodiscard]] std::size_t source_count() const { return source_entries_.size(); }

  const std::vector<Trajectory>& source() {
    if (source_.empty()) source_ = load_trajectories(source_entries_, s_.real("domain_length"), opt_.workers);
    return source_;
  }

  std::shared_ptr<const PcaModel> pca() {
    if (pca_) return pca_;
    if (!pca_path_.empty()) {
      pca_ = std::make_shared<const PcaModel>(load_pca_model(pca_path_));
    } else {
      pca_ = std::make_shared<const PcaModel>(
          fit_pca_on_frames(source(), frame_lo_, frame_hi_, s_.uint("n_components")));
    }
    return pca_;
  }

  EncoderSpec encoder(EncoderKind kind) {
    switch (kind) {
      case EncoderKind::raw: return EncoderSpec::raw();
      case EncoderKind::pca: return EncoderSpec::pca(pca());
      case EncoderKind::external:
        if (!latents_) throw ConfigError(s_.command() + ": external encoder needs 'latents'");
        return EncoderSpec::external(latents_, s_.str("latents"));
    }
    return {};
  }

  /// Database over the first `n_source` source trajectories (0: all).
  std::shared_ptr<const RelayDatabase> database(EncoderKind kind, std::size_t history, std::size_t n_source = 0) {
    const std::size_t n = n_source == 0 ? source_count() : n_source;
    if (n > source_count()) {
      throw ConfigError(s_.command() + ": database of " + std::to_string(n) + " trajectories requested but only " +
                        std::to_string(source_count()) + " source trajectories selected");
    }
    const auto key = std::make_tuple(static_cast<int>(kind), history, n);
    if (auto it = dbs_.find(key); it != dbs_.end()) return it->second;
    const auto& src = source();
    auto db = std::make_shared<const RelayDatabase>(
        build_database(std::span<const Trajectory>(src.data(), n), encoder(kind), frame_lo_, frame_hi_, history));
    dbs_[key] = db;
    return db;
  }

  void drop_databases() { dbs_.clear(); }

  void adopt_database(EncoderKind kind, std::size_t history, std::shared_ptr<const RelayDatabase> db) {
    dbs_[std::make_tuple(static_cast<int>(kind), history, source_count())] = std::move(db);
  }

  /// Target trajectories of `dir`; with external latents the ids must not
  /// collide with source ids, because the latent table is keyed by id.
  std::vector<Trajectory> targets(const fs::path& dir, double* nu_out = nullptr) {
    if (!fs::exists(dir)) throw FormatError(FormatError::Kind::io, "target '" + dir.string() + "' does not exist");
    const auto entries = dataset_entries(dir, IdRange::parse(s_.str("target_trajectories")));
    if (latents_) {
      std::set<std::uint32_t> ids;
      for (const ManifestEntry& e : source_entries_) ids.insert(e.trajectory_id);
      for (const ManifestEntry& e : entries) {
        if (ids.contains(e.trajectory_id)) {
          throw ConfigError("target trajectory id " + std::to_string(e.trajectory_id) +
                            " collides with a source id; external latents need disjoint id ranges");
        }
      }
    }
    const double nu = read_trajectory_header(entries.front().path).nu;
    require_regime(entries, nu, "target " + dir.string());
    if (nu_out) *nu_out = nu;
    return load_trajectories(entries, s_.real("domain_length"), opt_.workers);
  }

  /// External latents exist only for recorded frames, so without oracle
  /// matching an external rollout matches once, from the last context frame,
  /// among entries that can carry the whole horizon.
  MethodSpec method(const std::string& label, EncoderKind kind, RolloutConfig cfg, std::size_t n_source = 0) {
    if (kind == EncoderKind::external && !cfg.oracle_matching) {
      cfg.ride_length = cfg.horizon;
      cfg.complete_rides = true;
    }
    MethodSpec m;
    m.label = label;
    m.encoder = encoder(kind);
    m.database = database(kind, cfg.history_length, n_source);
    m.rollout = cfg;
    return m;
  }

  MethodSpec persistence(std::size_t horizon) {
    MethodSpec m;
    m.label = "persistence";
    m.persistence = true;
    m.rollout.horizon = horizon;
    return m;
  }

  [[nodiscard]] RolloutConfig base_rollout() const {
    RolloutConfig c;
    c.horizon = s_.uint("horizon");
    c.ride_length = s_.uint("ride_length");
    return c;
  }

 private:
  const Settings& s_;
  fs::path source_dir_;
  fs::path pca_path_;
  std::vector<ManifestEntry> source_entries_;
  std::size_t frame_lo_ = 0;
  std::size_t frame_hi_ = 0;
  std::shared_ptr<const LatentTable> latents_;
  std::vector<Trajectory> source_;
  std::shared_ptr<const PcaModel> pca_;
  std::map<std::tuple<int, std::size_t, std::size_t>, std::shared_ptr<const RelayDatabase>> dbs_;
  EvalOptions opt_;
};

inline EvaluationRecord run_method(const MethodSpec& m, std::span<const Trajectory> targets, const std::string& regime,
                                   const EvalOptions& opt, const Settings& s) {
  EvaluationRecord r = evaluate_method(m, targets, regime, opt);
  r.config_hash = s.hash();
  return r;
}

inline std::string table(const std::vector<EvaluationRecord>& recs) {
  std::ostringstream out;
  out << std::left << std::setw(28) << "method" << std::setw(12) << "regime" << std::right << std::setw(9)
      << "error%" << std::setw(20) << "95% CI" << std::setw(11) << "rematches" << std::setw(9) << "sources" << '\n';
  for (const EvaluationRecord& r : recs) {
    out << std::left << std::setw(28) << r.method << std::setw(12) << r.regime << std::right << std::setw(9)
        << fixed(r.errors.mean) << std::setw(20) << ("[" + fixed(r.ci.lo) + ", " + fixed(r.ci.hi) + "]");
    if (r.cosine.empty()) {
      out << std::setw(11) << "-" << std::setw(9) << "-";
    } else {
      out << std::setw(11) << fixed(r.matches.rematches_per_rollout, 1) << std::setw(9)
          << r.matches.distinct_source_trajectories;
    }
    out << '\n';
  }
  return out.str();
}

inline void finish(const OutputDir& out, const Settings& s, std::vector<CsvRow> rows, const std::string& summary,
                   std::ostream& console) {
  sort_rows(rows);
  out.write("records.csv", encode_rows(rows));
  out.write("summary.txt", summary);
  write_echo(out, s);
  console << summary;
}

// ---------------------------------------------------------------------------
// Commands

inline void cmd_generate(const Settings& s, std::ostream& console) {
  const SolverConfig base = solver_config(s);
  const fs::path dir = nonempty(s, "out_dir");
  const auto entries = generate_dataset(base, s.uint("n_frames"), static_cast<std::uint32_t>(s.uint("first_id")),
                                        s.uint("n_trajectories"), s.uint("seed"), dir,
                                        std::max<std::size_t>(1, s.uint("workers")));
  write_file_atomic(dir / "resolved_config.txt", s.echo() + "config_hash = " + s.hash() + "\n");
  console << "generated " << entries.size() << " trajectories (" << regime_label(base.nu) << ") in " << dir.string()
          << '\n';
}

inline void cmd_pca_fit(const Settings& s, std::ostream& console) {
  const fs::path out = nonempty(s, "out");
  const fs::path dir = existing_path(s, "source");
  const auto entries = dataset_entries(dir, IdRange::parse(s.str("source_trajectories")));
  require_regime(entries, s.real("source_nu"), "pca-fit source");
  const auto trajs = load_trajectories(entries, s.real("domain_length"), std::max<std::size_t>(1, s.uint("workers")));
  const PcaModel model = fit_pca_on_frames(trajs, s.uint("frame_lo"), s.uint("frame_hi"), s.uint("n_components"));
  write_pca_model(out, model);
  const std::string hash = s.hash();
  std::vector<CsvRow> rows{{"pca_variance", "pca", regime_label(s.real("source_nu")),
                            std::to_string(model.n_components()), model.explained_variance_ratio(), std::nan(""),
                            std::nan(""), hash}};
  fs::path csv = out;
  csv += ".records.csv";
  write_file_atomic(csv, encode_rows(rows));
  fs::path echo = out;
  echo += ".config.txt";
  write_file_atomic(echo, s.echo() + "config_hash = " + hash + "\n");
  console << "pca: " << model.n_components() << " components retain " << fixed(100.0 * model.explained_variance_ratio(), 3)
          << "% of variance over " << trajs.size() << " trajectories\n";
  if (model.rank_deficient) console << "pca: warning: data rank " << *model.rank_deficient << " below n_components\n";
}

inline void cmd_db_build(const Settings& s, std::ostream& console) {
  const fs::path out = nonempty(s, "out");
  DatabaseRecipe r;
  r.source = existing_path(s, "source");
  r.trajectories = s.str("source_trajectories");
  r.frame_lo = s.uint("frame_lo");
  r.frame_hi = s.uint("frame_hi");
  r.history_length = s.uint("history_length");
  r.encoder = parse_encoder(s.str("encoder"));
  r.source_nu = s.real("source_nu");
  r.domain_length = s.real("domain_length");
  const auto entries = dataset_entries(r.source, IdRange::parse(r.trajectories));
  require_regime(entries, r.source_nu, "db-build source");
  EncoderSpec enc;
  if (r.encoder == EncoderKind::pca) {
    r.pca_model = existing_path(s, "pca_model");
    enc = EncoderSpec::pca(std::make_shared<const PcaModel>(load_pca_model(r.pca_model)));
  } else if (r.encoder == EncoderKind::external) {
    r.latents = existing_path(s, "latents");
    enc = EncoderSpec::external(std::make_shared<const LatentTable>(load_latents(r.latents)), r.latents.string());
  }
  const auto trajs = load_trajectories(entries, r.domain_length, std::max<std::size_t>(1, s.uint("workers")));
  const RelayDatabase db = build_database(trajs, enc, r.frame_lo, r.frame_hi, r.history_length);
  r.entries = db.size();
  r.key_checksum = key_checksum(db);
  write_file_atomic(out, encode_recipe(r));
  fs::path echo = out;
  echo += ".config.txt";
  write_file_atomic(echo, s.echo() + "config_hash = " + s.hash() + "\n");
  console << "database: " << db.size() << " entries, key dim " << db.key_dim() << '\n';
}

/// Rebuilds a database from its recipe and checks it against the recorded
/// entry count and key checksum.
inline std::pair<EncoderSpec, std::shared_ptr<const RelayDatabase>> load_database(const fs::path& path,
                                                                                 std::size_t workers) {
  const DatabaseRecipe r = decode_recipe(read_file(path), path.string());
  const auto entries = dataset_entries(r.source, IdRange::parse(r.trajectories));
  require_regime(entries, r.source_nu, "database " + path.string());
  EncoderSpec enc;
  if (r.encoder == EncoderKind::pca) enc = EncoderSpec::pca(std::make_shared<const PcaModel>(load_pca_model(r.pca_model)));
  if (r.encoder == EncoderKind::external) {
    enc = EncoderSpec::external(std::make_shared<const LatentTable>(load_latents(r.latents)), r.latents.string());
  }
  const auto trajs = load_trajectories(entries, r.domain_length, workers);
  auto db = std::make_shared<const RelayDatabase>(build_database(trajs, enc, r.frame_lo, r.frame_hi, r.history_length));
  if (db->size() != r.entries || key_checksum(*db) != r.key_checksum) {
    throw FormatError(FormatError::Kind::invalid_header,
                      path.string() + ": rebuilt database does not match the recorded entries/checksum "
                                      "(inputs changed since db-build)");
  }
  return {enc, db};
}

inline void cmd_rollout(const Settings& s, std::ostream& console) {
  EvalContext ctx(s);
  std::vector<fs::path> inputs = ctx.inputs();
  inputs.emplace_back(existing_path(s, "target"));
  const OutputDir out(s.str("out_dir"), inputs);
  double nu = 0.0;
  const auto targets = ctx.targets(s.str("target"), &nu);
  MethodSpec m;
  if (s.str("method") == "persistence") {
    m = ctx.persistence(s.uint("horizon"));
  } else if (s.str("method") == "relay") {
    RolloutConfig c = ctx.base_rollout();
    c.update_rule = s.str("update_rule") == "copy" ? UpdateRule::copy : UpdateRule::delta;
    if (s.str("update_rule") != "copy" && s.str("update_rule") != "delta") {
      throw ConfigError("update_rule must be delta or copy");
    }
    c.alpha = s.real("alpha");
    c.oracle_matching = s.flag("oracle_matching");
    c.oracle_magnitude = s.flag("oracle_magnitude");
    c.history_length = s.uint("history_length");
    c.oracle_history = s.flag("oracle_history");
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const EncoderKind kind = parse_encoder(s.str("encoder"));
    if (!s.str("database").empty()) {
      auto [enc, db] = load_database(existing_path(s, "database"), ctx.options().workers);
      if (enc.kind != kind || db->history_length() != c.history_length) {
        throw ConfigError("database recipe encoder/history does not match encoder/history_length");
      }
      ctx.adopt_database(kind, c.history_length, db);
    }
    std::string label = to_string(kind) + (c.update_rule == UpdateRule::copy ? "-copy" : "-delta");
    m = ctx.method(label, kind, c);
  } else {
    throw ConfigError("method must be relay or persistence");
  }
  if (!s.str("label").empty()) m.label = s.str("label");
  const EvaluationRecord r = run_method(m, targets, regime_label(nu), ctx.options(), s);
  std::vector<CsvRow> rows;
  append_error_rows(rows, "rollout", r);
  append_cosine_rows(rows, "dynamics_cosine", r);
  append_shell_rows(rows, "spectral_error", r, r.spectral_error);
  append_shell_rows(rows, "enstrophy_ratio", r, r.enstrophy_ratio);
  if (s.flag("write_predictions")) {
    for (const Trajectory& t : targets) {
      const std::span<const VorticityField> context(t.frames.data(), ctx.options().context_frames);
      Trajectory p;
      p.config = t.config;
      p.trajectory_id = t.trajectory_id;
      if (m.persistence) {
        p.frames = persistence_rollout(context, m.rollout.horizon);
      } else {
        const std::vector<VorticityField> truth(t.frames.begin() + static_cast<long>(context.size()),
                                                t.frames.begin() + static_cast<long>(context.size() + m.rollout.horizon));
        p.frames = relay_rollout(context, *m.database, m.encoder, m.rollout, truth,
                                 RolloutSource{t.trajectory_id, context.size()})
                       .predictions;
      }
      out.write("pred_" + trajectory_filename(t.trajectory_id), encode_trajectory(p));
    }
  }
  finish(out, s, std::move(rows), table({r}), console);
}

inline std::vector<fs::path> target_dirs(const Settings& s) {
  std::vector<fs::path> dirs;
  if (s.has("targets")) {
    for (const std::string& d : s.list("targets")) dirs.emplace_back(d);
  }
  if (dirs.empty()) dirs.emplace_back(nonempty(s, "target"));
  return dirs;
}

inline void cmd_evaluate(const Settings& s, std::ostream& console) {
  EvalContext ctx(s);
  const auto dirs = target_dirs(s);
  std::vector<fs::path> inputs = ctx.inputs();
  inputs.insert(inputs.end(), dirs.begin(), dirs.end());
  const OutputDir out(s.str("out_dir"), inputs);
  const auto methods = s.list("methods");
  if (methods.empty()) throw ConfigError("methods must list at least one method");
  std::vector<std::pair<std::string, std::optional<Parsed>>> parsed;
  for (const std::string& m : methods) parsed.emplace_back(m, parse_method(m));
  std::vector<EvaluationRecord> recs;
  std::vector<CsvRow> rows;
  for (const fs::path& dir : dirs) {
    double nu = 0.0;
    const auto targets = ctx.targets(dir, &nu);
    for (const auto& [label, p] : parsed) {
      MethodSpec m;
      if (!p) {
        m = ctx.persistence(s.uint("horizon"));
      } else {
        RolloutConfig c = ctx.base_rollout();
        c.update_rule = p->rule;
        m = ctx.method(label, p->encoder, c);
      }
      recs.push_back(run_method(m, targets, regime_label(nu), ctx.options(), s));
      const EvaluationRecord& r = recs.back();
      append_error_rows(rows, "method_errors", r);
      append_cosine_rows(rows, "dynamics_cosine", r);
      append_shell_rows(rows, "spectral_error", r, r.spectral_error);
      append_shell_rows(rows, "enstrophy_ratio", r, r.enstrophy_ratio);
    }
  }
  finish(out, s, std::move(rows), table(recs), console);
}

inline void cmd_ablate_2x2(const Settings& s, std::ostream& console) {
  EvalContext ctx(s);
  std::vector<fs::path> inputs = ctx.inputs();
  inputs.emplace_back(existing_path(s, "target"));
  const OutputDir out(s.str("out_dir"), inputs);
  double nu = 0.0;
  const auto targets = ctx.targets(s.str("target"), &nu);
  std::vector<EvaluationRecord> recs;
  std::vector<CsvRow> rows;
  for (EncoderKind kind : {EncoderKind::pca, EncoderKind::raw}) {
    for (UpdateRule rule : {UpdateRule::delta, UpdateRule::copy}) {
      RolloutConfig c = ctx.base_rollout();
      c.update_rule = rule;
      const std::string label = to_string(kind) + (rule == UpdateRule::delta ? "-delta" : "-copy");
      recs.push_back(run_method(ctx.method(label, kind, c), targets, regime_label(nu), ctx.options(), s));
      append_error_rows(rows, "matching_ablation", recs.back());
    }
    ctx.drop_databases();
  }
  if (!s.str("latents").empty()) {
    recs.push_back(run_method(ctx.method("external-delta", EncoderKind::external, ctx.base_rollout()), targets,
                              regime_label(nu), ctx.options(), s));
    append_error_rows(rows, "matching_ablation", recs.back());
  }
  finish(out, s, std::move(rows), table(recs), console);
}

inline void cmd_ablate_oracle(const Settings& s, std::ostream& console) {
  EvalContext ctx(s);
  std::vector<fs::path> inputs = ctx.inputs();
  inputs.emplace_back(existing_path(s, "target"));
  const OutputDir out(s.str("out_dir"), inputs);
  double nu = 0.0;
  const auto targets = ctx.targets(s.str("target"), &nu);
  const EncoderKind kind = parse_encoder(s.str("encoder"));
  const std::string regime = regime_label(nu);
  std::vector<EvaluationRecord> recs;
  std::vector<CsvRow> rows;

  RolloutConfig standard = ctx.base_rollout();
  recs.push_back(run_method(ctx.method("standard", kind, standard), targets, regime, ctx.options(), s));
  RolloutConfig oracle = ctx.base_rollout();
  oracle.oracle_matching = true;
  recs.push_back(run_method(ctx.method("oracle-matching", kind, oracle), targets, regime, ctx.options(), s));
  append_cosine_rows(rows, "dynamics_cosine", recs[0]);
  append_cosine_rows(rows, "dynamics_cosine", recs[1]);

  std::optional<EvaluationRecord> best;
  for (double a : s.real_list("alphas")) {
    RolloutConfig c = oracle;
    c.alpha = a;
    EvaluationRecord r = run_method(ctx.method("oracle-alpha=" + detail::format_real(a), kind, c), targets, regime,
                                    ctx.options(), s);
    append_error_rows(rows, "oracle_alpha_sweep", r);
    if (!best || r.errors.mean < best->errors.mean) best = std::move(r);
  }
  if (!best) throw ConfigError("alphas must list at least one value");
  best->method = "oracle-alpha-best(" + best->method.substr(std::string("oracle-alpha=").size()) + ")";
  recs.push_back(*best);
  RolloutConfig mag = oracle;
  mag.oracle_magnitude = true;
  recs.push_back(run_method(ctx.method("oracle-magnitude", kind, mag), targets, regime, ctx.options(), s));
  for (const EvaluationRecord& r : recs) append_error_rows(rows, "oracle_ablation", r);
  finish(out, s, std::move(rows), table(recs), console);
}

inline void cmd_ablate_dbsize(const Settings& s, std::ostream& console) {
  EvalContext ctx(s);
  std::vector<fs::path> inputs = ctx.inputs();
  inputs.emplace_back(existing_path(s, "target"));
  const OutputDir out(s.str("out_dir"), inputs);
  double nu = 0.0;
  const auto targets = ctx.targets(s.str("target"), &nu);
  const EncoderKind kind = parse_encoder(s.str("encoder"));
  std::vector<EvaluationRecord> recs;
  std::vector<CsvRow> rows;
  // The representation is fixed (fit on every selected source trajectory);
  // only the database shrinks.
  if (kind == EncoderKind::pca) (void)ctx.pca();
  for (std::uint64_t n : s.uint_list("sizes")) {
    EvaluationRecord r =
        run_method(ctx.method(to_string(kind) + "-delta/db=" + std::to_string(n), kind, ctx.base_rollout(), n),
                   targets, regime_label(nu), ctx.options(), s);
    ctx.drop_databases();
    rows.push_back({"database_size", to_string(kind) + "-delta", r.regime, std::to_string(n), r.errors.mean, r.ci.lo,
                    r.ci.hi, r.config_hash});
    recs.push_back(std::move(r));
  }
  finish(out, s, std::move(rows), table(recs), console);
}

inline void cmd_ablate_ride(const Settings& s, std::ostream& console) {
  EvalContext ctx(s);
  std::vector<fs::path> inputs = ctx.inputs();
  inputs.emplace_back(existing_path(s, "target"));
  const OutputDir out(s.str("out_dir"), inputs);
  double nu = 0.0;
  const auto targets = ctx.targets(s.str("target"), &nu);
  const EncoderKind kind = parse_encoder(s.str("encoder"));
  std::vector<EvaluationRecord> recs;
  std::vector<CsvRow> rows;
  for (std::uint64_t ride : s.uint_list("rides")) {
    RolloutConfig c = ctx.base_rollout();
    c.ride_length = ride;
    EvaluationRecord r = run_method(ctx.method(to_string(kind) + "-delta/ride=" + std::to_string(ride), kind, c),
                                    targets, regime_label(nu), ctx.options(), s);
    rows.push_back({"ride_length", to_string(kind) + "-delta", r.regime, std::to_string(ride), r.errors.mean, r.ci.lo,
                    r.ci.hi, r.config_hash});
    recs.push_back(std::move(r));
  }
  finish(out, s, std::move(rows), table(recs), console);
}

inline void cmd_ablate_horizon(const Settings& s, std::ostream& console) {
  EvalContext ctx(s);
  std::vector<fs::path> inputs = ctx.inputs();
  inputs.emplace_back(existing_path(s, "target"));
  const OutputDir out(s.str("out_dir"), inputs);
  double nu = 0.0;
  const auto targets = ctx.targets(s.str("target"), &nu);
  const EncoderKind kind = parse_encoder(s.str("encoder"));
  std::vector<EvaluationRecord> recs;
  std::vector<CsvRow> rows;
  for (std::uint64_t T : s.uint_list("horizons")) {
    RolloutConfig c = ctx.base_rollout();
    c.horizon = T;
    for (bool relay : {false, true}) {
      EvaluationRecord r = relay ? run_method(ctx.method(to_string(kind) + "-delta", kind, c), targets,
                                              regime_label(nu), ctx.options(), s)
                                 : run_method(ctx.persistence(T), targets, regime_label(nu), ctx.options(), s);
      rows.push_back({"horizon", r.method, r.regime, std::to_string(T), r.errors.mean, r.ci.lo, r.ci.hi,
                      r.config_hash});
      append_error_rows(rows, "horizon_steps_T" + std::to_string(T), r);
      r.method += "/T=" + std::to_string(T);
      recs.push_back(std::move(r));
    }
  }
  finish(out, s, std::move(rows), table(recs), console);
}

inline void cmd_ablate_history(const Settings& s, std::ostream& console) {
  EvalContext ctx(s);
  std::vector<fs::path> inputs = ctx.inputs();
  inputs.emplace_back(existing_path(s, "target"));
  const OutputDir out(s.str("out_dir"), inputs);
  double nu = 0.0;
  const auto targets = ctx.targets(s.str("target"), &nu);
  const EncoderKind kind = parse_encoder(s.str("encoder"));
  const std::size_t H = s.uint("history");
  if (H > ctx.options().context_frames) throw ConfigError("history exceeds context_frames");
  std::vector<EvaluationRecord> recs;
  std::vector<CsvRow> rows;
  RolloutConfig single = ctx.base_rollout();
  recs.push_back(run_method(ctx.method("H=1", kind, single), targets, regime_label(nu), ctx.options(), s));
  RolloutConfig hist = single;
  hist.history_length = H;
  const std::string h = "H=" + std::to_string(H);
  recs.push_back(run_method(ctx.method(h + "-predicted", kind, hist), targets, regime_label(nu), ctx.options(), s));
  hist.oracle_history = true;
  recs.push_back(run_method(ctx.method(h + "-oracle-history", kind, hist), targets, regime_label(nu), ctx.options(), s));
  for (const EvaluationRecord& r : recs) append_error_rows(rows, "history", r);
  finish(out, s, std::move(rows), table(recs), console);
}

inline void cmd_export_csv(const Settings& s, std::ostream& console) {
  const fs::path in = existing_path(s, "input_dir");
  const fs::path out_dir = nonempty(s, "out_dir");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(in)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && (name == "records.csv" || name.ends_with(".records.csv")) &&
        !inside(e.path(), out_dir)) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<CsvRow> rows;
  for (const fs::path& f : files) {
    auto part = decode_rows(read_file(f), f.string());
    rows.insert(rows.end(), part.begin(), part.end());
  }
  sort_rows(rows);
  std::map<std::string, std::vector<CsvRow>> by_figure;
  for (CsvRow& r : rows) by_figure[r.figure].push_back(std::move(r));
  fs::create_directories(out_dir);
  for (const auto& [figure, part] : by_figure) write_file_atomic(out_dir / (figure + ".csv"), encode_rows(part));
  write_file_atomic(out_dir / "resolved_config.txt", s.echo() + "config_hash = " + s.hash() + "\n");
  console << "exported " << by_figure.size() << " figure tables from " << files.size() << " record files\n";
}

inline const std::map<std::string, std::function<void(const Settings&, std::ostream&)>>& commands() {
  static const std::map<std::string, std::function<void(const Settings&, std::ostream&)>> all{
      {"generate", cmd_generate},           {"pca-fit", cmd_pca_fit},
      {"db-build", cmd_db_build},           {"rollout", cmd_rollout},
      {"evaluate", cmd_evaluate},           {"ablate-2x2", cmd_ablate_2x2},
      {"ablate-oracle", cmd_ablate_oracle}, {"ablate-dbsize", cmd_ablate_dbsize},
      {"ablate-ride", cmd_ablate_ride},     {"ablate-horizon", cmd_ablate_horizon},
      {"ablate-history", cmd_ablate_history}, {"export-csv", cmd_export_csv},
  };
  return all;
}

inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (const auto* f = dynamic_cast<const FormatError*>(&e)) {
    switch (f->kind) {
      case FormatError::Kind::io: return "io";
      case FormatError::Kind::bad_magic: return "bad_magic";
      case FormatError::Kind::truncated: return "truncated";
      case FormatError::Kind::dimension_mismatch: return "dimension_mismatch";
      case FormatError::Kind::duplicate_key: return "duplicate_key";
      case FormatError::Kind::invalid_header: return "invalid_header";
    }
  }
  if (dynamic_cast<const MissingKeyError*>(&e)) return "missing_key";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const CflError*>(&e)) return "cfl";
  if (dynamic_cast<const BlowupError*>(&e)) return "blowup";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  return "runtime";
}

inline std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + '"';
}

}  // namespace cli

/// Resolves settings for `command` from an optional config file and
/// key=value overrides, applied in that order.
inline Settings resolve_settings(const std::string& command, const std::string& config_path,
                                 const std::vector<std::string>& overrides) {
  const auto& all = cli::schemas();
  auto it = all.find(command);
  if (it == all.end()) throw ConfigError("unknown command '" + command + "'");
  Settings s(command, it->second);
  if (!config_path.empty()) s.apply(ConfigFile::parse(read_file(config_path), config_path), all);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    s.set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  return s;
}

/// Entry point shared by the executable and the tests. Returns the exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"relaylab: database relay experiments for 2D vorticity dynamics"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool deterministic = false;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "config file (key = value lines, [command] sections)");
  app.add_option("--seed", seed, "base seed");
  app.add_option("--workers", workers, "worker threads");
  app.add_flag("--deterministic", deterministic, "request bit-identical reruns");
  app.add_option("--set", overrides, "override one key: --set key=value (repeatable)");
  for (const auto& [name, schema] : cli::schemas()) {
    std::string help;
    for (const ConfigKey& k : schema) help += "\n  " + k.name + " = " + k.default_value + "    " + k.help;
    app.add_subcommand(name, "keys:" + help);
  }

  std::string command = "?";
  try {
    app.parse(argc, argv);
    command = app.get_subcommands().front()->get_name();
    Settings s = resolve_settings(command, config_path, overrides);
    if (seed) s.set("seed", std::to_string(*seed));
    if (workers) s.set("workers", std::to_string(*workers));
    if (deterministic) s.set("deterministic", "true");
    cli::commands().at(command)(s, out);
    return 0;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error kind=usage command=" << command << " message=" << cli::quoted(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    const std::string kind = cli::error_kind(e);
    err << "error kind=" << kind << " command=" << command << " message=" << cli::quoted(e.what()) << '\n';
    return kind == "config" ? 2 : 1;
  }
}

}  // namespace relaylab
