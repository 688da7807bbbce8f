#pragma once

// Experiment orchestration: datasets on disk, PCA model and database
// artifacts, per-method evaluation and long-format result rows.

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "relaylab/config.hpp"
#include "relaylab/diagnostics.hpp"
#include "relaylab/errors.hpp"
#include "relaylab/io.hpp"
#include "relaylab/relay.hpp"
#include "relaylab/representations.hpp"
#include "relaylab/solver.hpp"

namespace relaylab {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
/// written to per-index slots; if several calls throw, the exception of the
/// lowest index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  const auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t k = 1; k < std::min(workers, n); ++k) pool.emplace_back(run);
    run();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Per-trajectory IC seed. Mixing in nu keeps regimes generated from one base
/// seed independent of each other.
inline std::uint64_t trajectory_seed(std::uint64_t base_seed, std::uint32_t trajectory_id, double nu) {
  return splitmix64(base_seed ^ splitmix64(trajectory_id) ^ splitmix64(std::bit_cast<std::uint64_t>(nu)));
}

/// Half-open id range "lo:hi"; an empty string selects everything.
struct IdRange {
  std::uint32_t lo = 0;
  std::uint32_t hi = std::numeric_limits<std::uint32_t>::max();

  static IdRange parse(const std::string& text) {
    if (text.empty() || text == "all") return {};
    const auto colon = text.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(text);
      IdRange r;
      r.lo = static_cast<std::uint32_t>(std::stoul(text.substr(0, colon)));
      r.hi = static_cast<std::uint32_t>(std::stoul(text.substr(colon + 1)));
      if (r.hi <= r.lo) throw std::invalid_argument(text);
      return r;
    } catch (const std::exception&) {
      throw ConfigError("bad trajectory range '" + text + "', expected lo:hi with lo < hi");
    }
  }
  [[nodiscard]] bool contains(std::uint32_t id) const { return id >= lo && id < hi; }
};

inline std::string trajectory_filename(std::uint32_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "traj_%06" PRIu32 ".vrt", id);
  return buf;
}

inline fs::path manifest_path(const fs::path& dataset_dir) { return dataset_dir / "manifest.tsv"; }

/// Generates `count` trajectories with ids first_id.. into `dir` and writes
/// the manifest last, so a dataset with a manifest is always complete.
inline std::vector<ManifestEntry> generate_dataset(const SolverConfig& base, std::size_t n_frames,
                                                   std::uint32_t first_id, std::size_t count,
                                                   std::uint64_t base_seed, const fs::path& dir,
                                                   std::size_t workers) {
  if (count == 0) throw ConfigError("n_trajectories must be >= 1");
  base.validate();
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries(count);
  parallel_for(count, workers, [&](std::size_t i) {
    const auto id = static_cast<std::uint32_t>(first_id + i);
    SolverConfig cfg = base;
    cfg.seed = trajectory_seed(base_seed, id, base.nu);
    write_trajectory(dir / trajectory_filename(id), generate_trajectory(cfg, n_frames, id));
    entries[i] = ManifestEntry{id, cfg.seed, trajectory_filename(id)};
  });
  write_file_atomic(manifest_path(dir), encode_manifest(entries));
  for (ManifestEntry& e : entries) e.path = dir / e.path;
  return entries;
}

/// Manifest entries of a dataset directory within `range`, sorted by id.
inline std::vector<ManifestEntry> dataset_entries(const fs::path& dir, IdRange range = {}) {
  if (!fs::exists(manifest_path(dir))) {
    throw FormatError(FormatError::Kind::io, "no manifest.tsv in dataset directory " + dir.string());
  }
  std::vector<ManifestEntry> all = read_manifest(manifest_path(dir));
  std::vector<ManifestEntry> out;
  for (ManifestEntry& e : all) {
    if (range.contains(e.trajectory_id)) out.push_back(std::move(e));
  }
  std::sort(out.begin(), out.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.trajectory_id < b.trajectory_id; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].trajectory_id == out[i - 1].trajectory_id) {
      throw FormatError(FormatError::Kind::duplicate_key, dir.string() + ": trajectory id " +
                                                              std::to_string(out[i].trajectory_id) +
                                                              " listed twice in manifest");
    }
  }
  if (out.empty()) throw ConfigError("no trajectories of " + dir.string() + " fall in the requested range");
  return out;
}

inline bool same_regime(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); }

/// Checks every file header against the expected viscosity without reading
/// frame data. `role` names the input in the error.
inline void require_regime(std::span<const ManifestEntry> entries, double nu, const std::string& role) {
  for (const ManifestEntry& e : entries) {
    const TrajectoryHeader h = read_trajectory_header(e.path);
    if (!same_regime(h.nu, nu)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s: trajectory %u has nu=%g but this input must be the nu=%g regime",
                    role.c_str(), e.trajectory_id, h.nu, nu);
      throw ConfigError(buf);
    }
  }
}

inline std::vector<Trajectory> load_trajectories(std::span<const ManifestEntry> entries, double domain_length,
                                                 std::size_t workers) {
  std::vector<Trajectory> out(entries.size());
  parallel_for(entries.size(), workers, [&](std::size_t i) {
    out[i] = read_trajectory(entries[i].path, entries[i].trajectory_id, domain_length);
  });
  return out;
}

// ---------------------------------------------------------------------------
// PCA model file
//
//   "PCA1" | u32 dim | u32 n_components | f64 total_variance | u32 rank
//   (0 when full rank) | dim f64 mean | k f64 explained | k*dim f64 components

inline std::string encode_pca(const PcaModel& m) {
  detail::ByteWriter w;
  w.put_magic("PCA1");
  w.put(static_cast<std::uint32_t>(m.dim()));
  w.put(static_cast<std::uint32_t>(m.n_components()));
  w.put(m.total_variance);
  w.put(static_cast<std::uint32_t>(m.rank_deficient.value_or(0)));
  for (Eigen::Index i = 0; i < m.mean.size(); ++i) w.put(m.mean(i));
  for (Eigen::Index i = 0; i < m.explained_variance.size(); ++i) w.put(m.explained_variance(i));
  for (Eigen::Index r = 0; r < m.components.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.components.cols(); ++c) w.put(m.components(r, c));
  }
  return w.bytes();
}

inline PcaModel decode_pca(std::string_view bytes, const std::string& source) {
  detail::ByteReader r(bytes, source);
  r.expect_magic("PCA1");
  const auto dim = static_cast<Eigen::Index>(r.get<std::uint32_t>());
  const auto k = static_cast<Eigen::Index>(r.get<std::uint32_t>());
  PcaModel m;
  m.total_variance = r.get<double>();
  const std::uint32_t rank = r.get<std::uint32_t>();
  if (dim == 0 || k == 0 || k > dim) {
    throw FormatError(FormatError::Kind::invalid_header, source + ": bad PCA dimensions");
  }
  const auto count = static_cast<std::size_t>(dim + k + k * dim);
  r.require(count * sizeof(double));
  if (r.remaining() != count * sizeof(double)) {
    throw FormatError(FormatError::Kind::dimension_mismatch, source + ": PCA payload size does not match header");
  }
  if (rank != 0) m.rank_deficient = rank;
  m.mean.resize(dim);
  m.explained_variance.resize(k);
  m.components.resize(k, dim);
  for (Eigen::Index i = 0; i < dim; ++i) m.mean(i) = r.get<double>();
  for (Eigen::Index i = 0; i < k; ++i) m.explained_variance(i) = r.get<double>();
  for (Eigen::Index row = 0; row < k; ++row) {
    for (Eigen::Index c = 0; c < dim; ++c) m.components(row, c) = r.get<double>();
  }
  return m;
}

inline void write_pca_model(const fs::path& path, const PcaModel& m) { write_file_atomic(path, encode_pca(m)); }

inline PcaModel load_pca_model(const fs::path& path) { return decode_pca(read_file(path), path.string()); }

/// PCA over frames [frame_lo, frame_hi) of every trajectory, the states a
/// database over the same range indexes.
inline PcaModel fit_pca_on_frames(std::span<const Trajectory> trajs, std::size_t frame_lo, std::size_t frame_hi,
                                  std::size_t n_components) {
  if (trajs.empty()) throw std::invalid_argument("fit_pca_on_frames: no trajectories");
  if (frame_hi <= frame_lo) throw std::invalid_argument("fit_pca_on_frames: frame_hi must exceed frame_lo");
  const Grid& g = trajs.front().grid();
  const auto per = static_cast<Eigen::Index>(frame_hi - frame_lo);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(trajs.size()) * per, static_cast<Eigen::Index>(g.size()));
  Eigen::Index row = 0;
  for (const Trajectory& t : trajs) {
    if (frame_hi > t.frames.size()) {
      throw std::invalid_argument("fit_pca_on_frames: trajectory " + std::to_string(t.trajectory_id) + " has only " +
                                  std::to_string(t.frames.size()) + " frames");
    }
    for (std::size_t f = frame_lo; f < frame_hi; ++f) {
      t.frames[f].check_same_grid(trajs.front().frames.front());
      x.row(row++) = Eigen::Map<const Eigen::RowVectorXd>(t.frames[f].values().data(),
                                                          static_cast<Eigen::Index>(g.size()));
    }
  }
  return fit_pca(x, n_components);
}

// ---------------------------------------------------------------------------
// Database recipe. Deltas are large and derivable, so a database on disk is
// the recipe that rebuilds it plus a checksum of the keys it produced.

struct DatabaseRecipe {
  fs::path source;  // dataset directory
  std::string trajectories;
  std::size_t frame_lo = 10;
  std::size_t frame_hi = 49;
  std::size_t history_length = 1;
  EncoderKind encoder = EncoderKind::pca;
  fs::path pca_model;
  fs::path latents;
  double source_nu = 1e-3;
  double domain_length = 1.0;
  std::size_t entries = 0;
  std::uint64_t key_checksum = 0;
};

inline EncoderKind parse_encoder(const std::string& s) {
  if (s == "raw") return EncoderKind::raw;
  if (s == "pca") return EncoderKind::pca;
  if (s == "external") return EncoderKind::external;
  throw ConfigError("encoder must be raw, pca or external, got '" + s + "'");
}

inline std::uint64_t key_checksum(const RelayDatabase& db) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t j = 0; j < db.size(); ++j) {
    const auto k = db.key(j);
    h ^= fnv1a64(std::string_view(reinterpret_cast<const char*>(k.data()), k.size() * sizeof(double)));
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string encode_recipe(const DatabaseRecipe& r) {
  std::ostringstream out;
  out << "RDB1\n";
  out << "source = " << fs::absolute(r.source).string() << '\n';
  out << "trajectories = " << r.trajectories << '\n';
  out << "frame_lo = " << r.frame_lo << '\n';
  out << "frame_hi = " << r.frame_hi << '\n';
  out << "history_length = " << r.history_length << '\n';
  out << "encoder = " << to_string(r.encoder) << '\n';
  out << "pca_model = " << (r.pca_model.empty() ? "" : fs::absolute(r.pca_model).string()) << '\n';
  out << "latents = " << (r.latents.empty() ? "" : fs::absolute(r.latents).string()) << '\n';
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", r.source_nu);
  out << "source_nu = " << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", r.domain_length);
  out << "domain_length = " << buf << '\n';
  out << "entries = " << r.entries << '\n';
  std::snprintf(buf, sizeof buf, "%016" PRIx64, r.key_checksum);
  out << "key_checksum = " << buf << '\n';
  return out.str();
}

inline DatabaseRecipe decode_recipe(std::string_view text, const std::string& source) {
  if (text.substr(0, 5) != "RDB1\n") throw FormatError(FormatError::Kind::bad_magic, source + ": expected RDB1");
  const ConfigFile cf = ConfigFile::parse(text.substr(5), source);
  const auto& kv = cf.sections.at("");
  const auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError(FormatError::Kind::invalid_header, source + ": missing '" + k + "'");
    return it->second;
  };
  DatabaseRecipe r;
  try {
    r.source = get("source");
    r.trajectories = get("trajectories");
    r.frame_lo = std::stoul(get("frame_lo"));
    r.frame_hi = std::stoul(get("frame_hi"));
    r.history_length = std::stoul(get("history_length"));
    r.encoder = parse_encoder(get("encoder"));
    r.pca_model = get("pca_model");
    r.latents = get("latents");
    r.source_nu = std::stod(get("source_nu"));
    r.domain_length = std::stod(get("domain_length"));
    r.entries = std::stoul(get("entries"));
    r.key_checksum = std::stoull(get("key_checksum"), nullptr, 16);
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(FormatError::Kind::invalid_header, source + ": " + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

struct MethodSpec {
  std::string label;
  bool persistence = false;
  EncoderSpec encoder;
  std::shared_ptr<const RelayDatabase> database;
  RolloutConfig rollout;
};

struct EvalOptions {
  std::size_t context_frames = 10;
  std::size_t n_boot = 1000;
  double level = 0.95;
  std::uint64_t boot_seed = 0;
  std::size_t workers = 1;
};

struct MatchStats {
  double rematches_per_rollout = 0.0;
  double forced_rematches_per_rollout = 0.0;
  std::size_t distinct_source_trajectories = 0;
  double mean_matched_frame = 0.0;
};

struct EvaluationRecord {
  std::string method;
  std::string regime;
  std::string config_hash;
  std::size_t horizon = 0;
  ErrorReport errors;
  ConfidenceInterval ci;
  std::vector<ConfidenceInterval> step_ci;
  /// Per-step mean dynamics cosine over trajectories with a defined value;
  /// empty for persistence.
  std::vector<double> cosine;
  std::vector<ConfidenceInterval> cosine_ci;
  /// Per-shell spectral relative error averaged over every (trajectory, step)
  /// where the shell is defined; NaN where never defined.
  std::vector<double> spectral_error;
  /// Per-shell enstrophy ratio prediction/truth at the final step, averaged
  /// over trajectories where defined.
  std::vector<double> enstrophy_ratio;
  MatchStats matches;
};

inline std::string regime_label(double nu) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "nu=%g", nu);
  return buf;
}

namespace detail {

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

struct ShellAccumulator {
  std::vector<double> sum;
  std::vector<std::size_t> count;

  void add(const SpectrumProfile& p) {
    if (sum.size() < p.values.size()) {
      sum.resize(p.values.size(), 0.0);
      count.resize(p.values.size(), 0);
    }
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      if (p.defined[k]) {
        sum[k] += p.values[k];
        ++count[k];
      }
    }
  }
  void merge(const ShellAccumulator& o) {
    if (sum.size() < o.sum.size()) {
      sum.resize(o.sum.size(), 0.0);
      count.resize(o.sum.size(), 0);
    }
    for (std::size_t k = 0; k < o.sum.size(); ++k) {
      sum[k] += o.sum[k];
      count[k] += o.count[k];
    }
  }
  [[nodiscard]] std::vector<double> means() const {
    std::vector<double> out(sum.size());
    for (std::size_t k = 0; k < sum.size(); ++k) out[k] = count[k] ? sum[k] / static_cast<double>(count[k]) : std::nan("");
    return out;
  }
};

}  // namespace detail

/// Rolls `method` out from frames [0, context_frames) of every target and
/// scores steps context_frames .. context_frames + horizon - 1.
inline EvaluationRecord evaluate_method(const MethodSpec& method, std::span<const Trajectory> targets,
                                        const std::string& regime, const EvalOptions& opt) {
  if (targets.empty()) throw std::invalid_argument("evaluate_method: no target trajectories");
  const std::size_t T = method.rollout.horizon;
  const std::size_t C = opt.context_frames;
  if (C == 0) throw ConfigError("context_frames must be >= 1");
  if (!method.persistence && !method.database) throw std::invalid_argument("evaluate_method: relay needs a database");
  for (const Trajectory& t : targets) {
    if (t.frames.size() < C + T) {
      throw ConfigError("target trajectory " + std::to_string(t.trajectory_id) + " has " +
                        std::to_string(t.frames.size()) + " frames; context " + std::to_string(C) + " + horizon " +
                        std::to_string(T) + " needed");
    }
  }

  struct PerTrajectory {
    std::vector<VorticityField> preds;
    std::vector<VorticityField> truth;
    std::vector<std::optional<double>> cosine;
    detail::ShellAccumulator spectral;
    SpectrumProfile ratio;
    RolloutResult rollout;
  };
  std::vector<PerTrajectory> per(targets.size());
  parallel_for(targets.size(), opt.workers, [&](std::size_t n) {
    const Trajectory& t = targets[n];
    PerTrajectory& out = per[n];
    const std::span<const VorticityField> context(t.frames.data(), C);
    out.truth.assign(t.frames.begin() + static_cast<long>(C), t.frames.begin() + static_cast<long>(C + T));
    if (method.persistence) {
      out.preds = persistence_rollout(context, T);
    } else {
      out.rollout = relay_rollout(context, *method.database, method.encoder, method.rollout, out.truth,
                                  RolloutSource{t.trajectory_id, C});
      out.preds = out.rollout.predictions;
      for (std::size_t s = 0; s < T; ++s) {
        const VorticityField& prev = s == 0 ? context.back() : out.truth[s - 1];
        out.cosine.push_back(dynamics_cosine(out.rollout.borrowed_deltas[s], out.truth[s] - prev));
      }
    }
    for (std::size_t s = 0; s < T; ++s) out.spectral.add(spectral_relative_error(out.preds[s], out.truth[s]));
    out.ratio = spectrum_ratio(enstrophy_spectrum(out.preds.back()), enstrophy_spectrum(out.truth.back()));
  });

  EvaluationRecord rec;
  rec.method = method.label;
  rec.regime = regime;
  rec.horizon = T;
  std::vector<std::vector<VorticityField>> preds(per.size());
  std::vector<std::vector<VorticityField>> truth(per.size());
  for (std::size_t n = 0; n < per.size(); ++n) {
    preds[n] = std::move(per[n].preds);
    truth[n] = std::move(per[n].truth);
  }
  rec.errors = relative_l2(preds, truth);
  rec.ci = bootstrap_ci(rec.errors.per_trajectory_means, opt.n_boot, opt.level, opt.boot_seed);
  for (std::size_t s = 0; s < T; ++s) {
    std::vector<double> column;
    for (const auto& row : rec.errors.values) column.push_back(row[s]);
    rec.step_ci.push_back(bootstrap_ci(column, opt.n_boot, opt.level, opt.boot_seed));
  }

  detail::ShellAccumulator spectral;
  detail::ShellAccumulator ratio;
  for (const PerTrajectory& p : per) {
    spectral.merge(p.spectral);
    ratio.add(p.ratio);
  }
  rec.spectral_error = spectral.means();
  rec.enstrophy_ratio = ratio.means();

  if (!method.persistence) {
    for (std::size_t s = 0; s < T; ++s) {
      std::vector<double> column;
      for (const PerTrajectory& p : per) {
        if (p.cosine[s]) column.push_back(*p.cosine[s]);
      }
      rec.cosine.push_back(detail::mean_of(column));
      rec.cosine_ci.push_back(column.empty() ? ConfidenceInterval{std::nan(""), std::nan("")}
                                             : bootstrap_ci(column, opt.n_boot, opt.level, opt.boot_seed));
    }
    std::set<std::uint32_t> sources;
    double rematches = 0.0;
    double forced = 0.0;
    double frame_sum = 0.0;
    std::size_t frame_count = 0;
    for (const PerTrajectory& p : per) {
      rematches += static_cast<double>(p.rollout.rematch_steps.size());
      forced += static_cast<double>(p.rollout.forced_rematch_steps.size());
      for (std::size_t j : p.rollout.matched_indices) {
        const FrameKey k = method.database->provenance(j);
        sources.insert(k.trajectory_id);
        frame_sum += k.frame_id;
        ++frame_count;
      }
    }
    const auto n = static_cast<double>(per.size());
    rec.matches.rematches_per_rollout = rematches / n;
    rec.matches.forced_rematches_per_rollout = forced / n;
    rec.matches.distinct_source_trajectories = sources.size();
    rec.matches.mean_matched_frame = frame_count ? frame_sum / static_cast<double>(frame_count) : 0.0;
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Long-format rows

struct CsvRow {
  std::string figure;
  std::string method;
  std::string regime;
  std::string step_or_shell;
  double value = 0.0;
  double lo = std::nan("");
  double hi = std::nan("");
  std::string config_hash;
};

inline constexpr std::string_view kCsvHeader = "figure,method,regime,step_or_shell,value,lo,hi,config_hash";

namespace detail {

inline std::string format_real(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::optional<long long> as_integer(const std::string& s) {
  if (s.empty()) return std::nullopt;
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// Integer step/shell labels sort numerically and before other labels.
inline bool row_less(const CsvRow& a, const CsvRow& b) {
  if (a.figure != b.figure) return a.figure < b.figure;
  if (a.method != b.method) return a.method < b.method;
  if (a.regime != b.regime) return a.regime < b.regime;
  const auto ia = detail::as_integer(a.step_or_shell);
  const auto ib = detail::as_integer(b.step_or_shell);
  if (ia && ib) return *ia < *ib;
  if (ia != ib && (ia || ib)) return ia.has_value();
  return a.step_or_shell < b.step_or_shell;
}

inline void sort_rows(std::vector<CsvRow>& rows) { std::stable_sort(rows.begin(), rows.end(), row_less); }

inline std::string encode_rows(std::span<const CsvRow> rows) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const CsvRow& r : rows) {
    for (const std::string* s : {&r.figure, &r.method, &r.regime, &r.step_or_shell}) {
      if (s->find_first_of(",\n") != std::string::npos) {
        throw std::invalid_argument("csv field contains a separator: '" + *s + "'");
      }
    }
    out += r.figure + ',' + r.method + ',' + r.regime + ',' + r.step_or_shell + ',' + detail::format_real(r.value) +
           ',' + detail::format_real(r.lo) + ',' + detail::format_real(r.hi) + ',' + r.config_hash + '\n';
  }
  return out;
}

inline std::vector<CsvRow> decode_rows(std::string_view text, const std::string& source) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw FormatError(FormatError::Kind::invalid_header, source + ": missing csv header");
  }
  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 8) {
      throw FormatError(FormatError::Kind::invalid_header, source + ":" + std::to_string(lineno) + ": expected 8 fields");
    }
    const auto real = [&](const std::string& s) { return s.empty() ? std::nan("") : std::stod(s); };
    rows.push_back(CsvRow{cells[0], cells[1], cells[2], cells[3], real(cells[4]), real(cells[5]), real(cells[6]),
                          cells[7]});
  }
  return rows;
}

/// Mean error row plus one row per step.
inline void append_error_rows(std::vector<CsvRow>& rows, const std::string& figure, const EvaluationRecord& r,
                              const std::string& method_label = {}) {
  const std::string& m = method_label.empty() ? r.method : method_label;
  rows.push_back({figure, m, r.regime, "mean", r.errors.mean, r.ci.lo, r.ci.hi, r.config_hash});
  for (std::size_t s = 0; s < r.errors.per_step.size(); ++s) {
    rows.push_back({figure, m, r.regime, std::to_string(s + 1), r.errors.per_step[s], r.step_ci[s].lo,
                    r.step_ci[s].hi, r.config_hash});
  }
}

inline void append_cosine_rows(std::vector<CsvRow>& rows, const std::string& figure, const EvaluationRecord& r) {
  for (std::size_t s = 0; s < r.cosine.size(); ++s) {
    rows.push_back({figure, r.method, r.regime, std::to_string(s + 1), r.cosine[s], r.cosine_ci[s].lo,
                    r.cosine_ci[s].hi, r.config_hash});
  }
}

inline void append_shell_rows(std::vector<CsvRow>& rows, const std::string& figure, const EvaluationRecord& r,
                              const std::vector<double>& values) {
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (std::isnan(values[k])) continue;
    rows.push_back({figure, r.method, r.regime, std::to_string(k), values[k], std::nan(""), std::nan(""),
                    r.config_hash});
  }
}

}  // namespace relaylab
