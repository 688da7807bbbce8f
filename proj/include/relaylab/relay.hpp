#pragma once

// Analogue relay: a database of encoded source states and their observed
// transitions, exact cosine nearest-neighbour retrieval, and the
// autoregressive relay rollout.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "relaylab/errors.hpp"
#include "relaylab/field.hpp"
#include "relaylab/io.hpp"
#include "relaylab/representations.hpp"
#include "relaylab/solver.hpp"

namespace relaylab {

/// Encoded source states with their transitions. Entries are ordered
/// trajectory-major then frame-major; that order defines tie-breaking.
class RelayDatabase {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  RelayDatabase() = default;
  RelayDatabase(std::size_t key_dim, std::size_t history_length)
      : dim_(key_dim), history_(history_length) {}

  [[nodiscard]] std::size_t size() const noexcept { return provenance_.size(); }
  [[nodiscard]] bool empty() const noexcept { return provenance_.empty(); }
  /// Dimension of a stored key (history_length * per-frame latent dim).
  [[nodiscard]] std::size_t key_dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t history_length() const noexcept { return history_; }

  [[nodiscard]] std::span<const double> key(std::size_t j) const {
    return std::span<const double>(keys_).subspan(j * dim_, dim_);
  }
  [[nodiscard]] double key_norm(std::size_t j) const { return key_norms_[j]; }
  [[nodiscard]] const VorticityField& delta(std::size_t j) const { return deltas_[j]; }
  [[nodiscard]] const VorticityField& next_frame(std::size_t j) const { return next_frames_[j]; }
  [[nodiscard]] FrameKey provenance(std::size_t j) const { return provenance_[j]; }
  /// Index of the same trajectory's next entry, or npos at a trajectory end.
  [[nodiscard]] std::size_t successor(std::size_t j) const { return successor_[j]; }
  /// True when entry j is followed by at least `n` successors.
  [[nodiscard]] bool has_successors(std::size_t j, std::size_t n) const {
    for (; n > 0; --n) {
      j = successor_[j];
      if (j == npos) return false;
    }
    return true;
  }

  void add(std::span<const double> key, VorticityField delta, VorticityField next, FrameKey where) {
    if (key.size() != dim_) throw DimensionError("database key", dim_, key.size());
    if (!empty()) {
      const FrameKey prev = provenance_.back();
      if (prev.trajectory_id == where.trajectory_id && prev.frame_id + 1 == where.frame_id) {
        successor_.back() = size();
      }
    }
    keys_.insert(keys_.end(), key.begin(), key.end());
    key_norms_.push_back(norm2(key));
    deltas_.push_back(std::move(delta));
    next_frames_.push_back(std::move(next));
    provenance_.push_back(where);
    successor_.push_back(npos);
  }

  /// Multiplies every key by `s`; used to check argmin scale invariance.
  void scale_keys(double s) {
    for (double& v : keys_) v *= s;
    for (std::size_t j = 0; j < size(); ++j) key_norms_[j] = norm2(key(j));
  }

 private:
  std::size_t dim_ = 0;
  std::size_t history_ = 1;
  std::vector<double> keys_;
  std::vector<double> key_norms_;
  std::vector<VorticityField> deltas_;
  std::vector<VorticityField> next_frames_;
  std::vector<FrameKey> provenance_;
  std::vector<std::size_t> successor_;
};

/// Query key for the frame at `frame` of `frames`: the encodings of the last
/// `history` frames ending there, oldest first.
inline LatentVector history_key(const EncoderSpec& spec, std::span<const VorticityField> frames,
                                std::size_t frame, std::size_t history, std::optional<std::uint32_t> trajectory_id) {
  if (frame + 1 < history) throw std::invalid_argument("not enough frames for the requested history length");
  LatentVector key;
  for (std::size_t f = frame + 1 - history; f <= frame; ++f) {
    std::optional<FrameKey> fk;
    if (trajectory_id) fk = FrameKey{*trajectory_id, static_cast<std::uint32_t>(f)};
    const LatentVector z = encode(spec, frames[f], fk);
    key.insert(key.end(), z.begin(), z.end());
  }
  return key;
}

/// One entry per (trajectory, frame) with frame in [frame_lo, frame_hi - 1].
inline RelayDatabase build_database(std::span<const Trajectory> trajectories, const EncoderSpec& spec,
                                    std::size_t frame_lo, std::size_t frame_hi, std::size_t history_length = 1) {
  spec.validate();
  if (frame_hi <= frame_lo) throw std::invalid_argument("build_database: frame_hi must exceed frame_lo");
  if (history_length == 0) throw std::invalid_argument("build_database: history_length must be >= 1");
  if (frame_lo + 1 < history_length) {
    throw std::invalid_argument("build_database: frame_lo=" + std::to_string(frame_lo) +
                                " leaves too few frames for history_length=" + std::to_string(history_length));
  }
  if (trajectories.empty()) throw std::invalid_argument("build_database: no trajectories");
  const std::size_t dim = spec.dim(trajectories.front().grid()) * history_length;
  RelayDatabase db(dim, history_length);
  for (const Trajectory& t : trajectories) {
    if (frame_hi >= t.frames.size()) {
      throw std::invalid_argument("build_database: frame_hi=" + std::to_string(frame_hi) + " beyond trajectory " +
                                  std::to_string(t.trajectory_id) + " with " + std::to_string(t.frames.size()) +
                                  " frames");
    }
    for (std::size_t f = frame_lo; f < frame_hi; ++f) {
      const LatentVector key = history_key(spec, t.frames, f, history_length, t.trajectory_id);
      db.add(key, t.frames[f + 1] - t.frames[f], t.frames[f + 1],
             FrameKey{t.trajectory_id, static_cast<std::uint32_t>(f)});
    }
  }
  return db;
}

/// Exact cosine-distance argmin; ties go to the lowest index. Candidates may
/// be restricted to entries with at least `min_successors` successors.
inline std::size_t nearest(const RelayDatabase& db, std::span<const double> query, std::size_t min_successors = 0) {
  if (db.empty()) throw std::invalid_argument("nearest: empty database");
  if (query.size() != db.key_dim()) throw DimensionError("nearest query", db.key_dim(), query.size());
  const double qn = norm2(query);
  if (!(qn > 1e-12)) throw std::invalid_argument("nearest: query has zero norm");
  std::size_t best = RelayDatabase::npos;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < db.size(); ++j) {
    const double kn = db.key_norm(j);
    if (!(kn > 1e-12)) continue;
    if (min_successors > 0 && !db.has_successors(j, min_successors)) continue;
    const double d = 1.0 - dot(query, db.key(j)) / (qn * kn);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (best == RelayDatabase::npos) {
    if (min_successors > 0) throw std::invalid_argument("nearest: no entry has enough successors for a full ride");
    return 0;
  }
  return best;
}

enum class UpdateRule { delta, copy };

struct RolloutConfig {
  std::size_t horizon = 10;
  std::size_t ride_length = 3;
  UpdateRule update_rule = UpdateRule::delta;
  double alpha = 1.0;
  bool oracle_matching = false;
  bool oracle_magnitude = false;
  std::size_t history_length = 1;
  bool oracle_history = false;
  /// Match only entries whose successor chain covers the whole ride, so no
  /// rematch is ever forced at a trajectory end.
  bool complete_rides = false;

  [[nodiscard]] bool needs_truth() const { return oracle_matching || oracle_magnitude || oracle_history; }

  void validate() const {
    if (horizon == 0) throw std::invalid_argument("rollout: horizon must be >= 1");
    if (ride_length == 0) throw std::invalid_argument("rollout: ride_length must be >= 1");
    if (history_length == 0) throw std::invalid_argument("rollout: history_length must be >= 1");
    if (!(alpha > 0.0)) throw std::invalid_argument("rollout: alpha must be positive");
    if (update_rule == UpdateRule::copy && (alpha != 1.0 || oracle_magnitude)) {
      throw std::invalid_argument("rollout: alpha and oracle magnitude apply to the delta rule only");
    }
  }

  /// True at steps (1-based) where the relay re-matches on schedule.
  [[nodiscard]] bool scheduled_rematch(std::size_t t) const {
    return ride_length == 1 || t % ride_length == 1;
  }

  /// Successors needed by a ride that starts with a match at step t.
  [[nodiscard]] std::size_t ride_successors(std::size_t t) const {
    std::size_t last = t;
    while (last < horizon && !scheduled_rematch(last + 1)) ++last;
    return last - t;
  }
};

struct RolloutResult {
  std::vector<VorticityField> predictions;
  std::vector<std::size_t> matched_indices;
  std::vector<VorticityField> borrowed_deltas;
  std::vector<std::size_t> rematch_steps;  // 1-based, ascending
  std::vector<std::size_t> forced_rematch_steps;
};

/// Evaluation-side identity of the rollout: which trajectory the context and
/// truth frames came from (needed only for external-latent encoders).
struct RolloutSource {
  std::optional<std::uint32_t> trajectory_id;
  std::size_t first_target_frame = 10;
};

/// Relay rollout. `context` holds the observed frames (the last one is the
/// starting state); `truth` the true frames for steps 1..T when an oracle is
/// requested.
inline RolloutResult relay_rollout(std::span<const VorticityField> context, const RelayDatabase& db,
                                   const EncoderSpec& spec, const RolloutConfig& cfg,
                                   std::span<const VorticityField> truth = {}, RolloutSource source = {}) {
  cfg.validate();
  spec.validate();
  if (context.empty()) throw std::invalid_argument("relay_rollout: empty context");
  if (db.empty()) throw std::invalid_argument("relay_rollout: empty database");
  if (cfg.history_length != db.history_length()) {
    throw DimensionError("rollout history length vs database", db.history_length(), cfg.history_length);
  }
  if (cfg.needs_truth() && truth.size() < cfg.horizon) {
    throw std::invalid_argument("relay_rollout: oracle variants need " + std::to_string(cfg.horizon) +
                                " truth frames, got " + std::to_string(truth.size()));
  }
  const std::size_t H = cfg.history_length;
  const std::size_t n_ctx = context.size();
  if (n_ctx < H) throw std::invalid_argument("relay_rollout: context shorter than history length");

  // Predicted timeline (context followed by predictions) and the true one.
  std::vector<VorticityField> predicted(context.begin(), context.end());
  std::vector<VorticityField> actual(context.begin(), context.end());
  if (cfg.needs_truth()) actual.insert(actual.end(), truth.begin(), truth.begin() + static_cast<long>(cfg.horizon));

  // Frame index on the evaluation trajectory of timeline position p.
  const auto frame_of = [&](std::size_t p) {
    return static_cast<std::uint32_t>(source.first_target_frame - n_ctx + p);
  };

  RolloutResult out;
  out.predictions.reserve(cfg.horizon);
  VorticityField state = context.back();
  std::size_t j = RelayDatabase::npos;
  for (std::size_t t = 1; t <= cfg.horizon; ++t) {
    const std::size_t now = n_ctx - 1 + (t - 1);  // timeline position of the current state
    bool rematch = cfg.scheduled_rematch(t) || j == RelayDatabase::npos;
    if (!rematch) {
      j = db.successor(j);
      if (j == RelayDatabase::npos) {
        rematch = true;
        out.forced_rematch_steps.push_back(t);
      }
    }
    if (rematch) {
      // Matching reads the true timeline under the oracles, otherwise the
      // predicted one (context frames are true either way).
      const bool true_current = cfg.oracle_matching || now < n_ctx;
      const bool true_history = cfg.oracle_history || cfg.oracle_matching;
      LatentVector query;
      for (std::size_t p = now + 1 - H; p <= now; ++p) {
        const bool use_truth = p == now ? true_current : (true_history || p < n_ctx);
        const VorticityField& frame = use_truth ? actual[p] : predicted[p];
        std::optional<FrameKey> key;
        if (use_truth && source.trajectory_id) key = FrameKey{*source.trajectory_id, frame_of(p)};
        const LatentVector z = encode(spec, frame, key);
        query.insert(query.end(), z.begin(), z.end());
      }
      j = nearest(db, query, cfg.complete_rides ? cfg.ride_successors(t) : 0);
      out.rematch_steps.push_back(t);
    }

    VorticityField next;
    VorticityField borrowed;
    if (cfg.update_rule == UpdateRule::copy) {
      next = db.next_frame(j);
      borrowed = next - state;
    } else {
      borrowed = db.delta(j);
      if (cfg.oracle_magnitude) {
        const double target = norm2((actual[now + 1] - actual[now]).values());
        const double have = norm2(borrowed.values());
        if (have > 0.0) borrowed *= target / have;
      } else if (cfg.alpha != 1.0) {
        borrowed *= cfg.alpha;
      }
      next = state + borrowed;
    }
    out.matched_indices.push_back(j);
    out.borrowed_deltas.push_back(std::move(borrowed));
    out.predictions.push_back(next);
    predicted.push_back(next);
    state = std::move(next);
  }
  return out;
}

/// Repeats the last context frame for T steps.
inline std::vector<VorticityField> persistence_rollout(std::span<const VorticityField> context, std::size_t horizon) {
  if (context.empty()) throw std::invalid_argument("persistence_rollout: empty context");
  return std::vector<VorticityField>(horizon, context.back());
}

}  // namespace relaylab
