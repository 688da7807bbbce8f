#pragma once

// State encoders and the similarity metric used for analogue retrieval.

#include <Eigen/Dense>
#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "relaylab/errors.hpp"
#include "relaylab/field.hpp"
#include "relaylab/io.hpp"

namespace relaylab {

using LatentVector = std::vector<double>;

/// 1 - <a,b>/(|a||b|). Throws if either argument has norm <= 1e-12.
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_distance", a.size(), b.size());
  const double na = norm2(a);
  const double nb = norm2(b);
  if (!(na > 1e-12)) throw std::invalid_argument("cosine_distance: first argument has zero norm");
  if (!(nb > 1e-12)) throw std::invalid_argument("cosine_distance: second argument has zero norm");
  return 1.0 - dot(a, b) / (na * nb);
}

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // n_components x dim, orthonormal rows
  Eigen::VectorXd explained_variance;
  double total_variance = 0.0;
  /// Numerical rank of the centred samples when it fell short of n_components.
  std::optional<std::size_t> rank_deficient;

  [[nodiscard]] std::size_t n_components() const { return static_cast<std::size_t>(components.rows()); }
  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(components.cols()); }

  [[nodiscard]] double explained_variance_ratio() const {
    return total_variance > 0.0 ? explained_variance.sum() / total_variance : 1.0;
  }

  [[nodiscard]] LatentVector project(std::span<const double> x) const {
    if (x.size() != dim()) throw DimensionError("pca encode", dim(), x.size());
    const Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
    const Eigen::VectorXd z = components * (v - mean);
    return {z.data(), z.data() + z.size()};
  }

  [[nodiscard]] std::vector<double> reconstruct(std::span<const double> z) const {
    if (z.size() != n_components()) throw DimensionError("pca reconstruct", n_components(), z.size());
    const Eigen::Map<const Eigen::VectorXd> v(z.data(), static_cast<Eigen::Index>(z.size()));
    const Eigen::VectorXd x = components.transpose() * v + mean;
    return {x.data(), x.data() + x.size()};
  }
};

namespace detail {

// Top-k eigenpairs of a symmetric matrix (only the lower triangle is read),
// returned in nonincreasing eigenvalue order.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> top_eigenpairs(Eigen::MatrixXd a, std::size_t k) {
  const auto n = static_cast<lapack_int>(a.rows());
  const auto kk = static_cast<lapack_int>(k);
  Eigen::VectorXd w(n);
  Eigen::MatrixXd z(n, kk);
  std::vector<lapack_int> support(2 * static_cast<std::size_t>(kk));
  lapack_int found = 0;
  const lapack_int info =
      LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', n, a.data(), n, 0.0, 0.0, n - kk + 1, n, 0.0, &found,
                     w.data(), z.data(), n, support.data());
  if (info != 0 || found != kk) throw std::runtime_error("dsyevr failed with info=" + std::to_string(info));
  // dsyevr returns ascending order.
  Eigen::VectorXd values = w.head(kk).reverse();
  Eigen::MatrixXd vectors = z.rowwise().reverse();
  return {values, vectors};
}

// Extends orthonormal rows [0, keep) of `rows` to a full orthonormal set by
// Gram-Schmidt against the canonical basis.
inline void orthonormal_completion(Eigen::MatrixXd& rows, Eigen::Index keep) {
  const Eigen::Index dim = rows.cols();
  Eigen::Index next = keep;
  for (Eigen::Index e = 0; e < dim && next < rows.rows(); ++e) {
    Eigen::VectorXd v = Eigen::VectorXd::Unit(dim, e);
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index r = 0; r < next; ++r) v -= rows.row(r).dot(v) * rows.row(r).transpose();
    }
    const double n = v.norm();
    if (n > 1e-6) rows.row(next++) = (v / n).transpose();
  }
}

}  // namespace detail

/// Principal components of the rows of `samples` (one sample per row).
/// Uses an exact symmetric eigensolver on whichever of the covariance
/// (dim x dim) or Gram (n x n) matrix is smaller; both give the same
/// components up to sign.
inline PcaModel fit_pca(const Eigen::MatrixXd& samples, std::size_t n_components) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index dim = samples.cols();
  if (n_components == 0) throw std::invalid_argument("fit_pca: n_components must be >= 1");
  if (static_cast<std::size_t>(n) <= n_components) {
    throw std::invalid_argument("fit_pca: need more samples (" + std::to_string(n) + ") than components (" +
                                std::to_string(n_components) + ")");
  }
  if (static_cast<Eigen::Index>(n_components) > dim) {
    throw std::invalid_argument("fit_pca: n_components exceeds the sample dimension");
  }
  const auto k = static_cast<Eigen::Index>(n_components);
  PcaModel model;
  model.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centred = samples.rowwise() - model.mean.transpose();
  const double denom = static_cast<double>(n - 1);
  model.total_variance = centred.squaredNorm() / denom;
  model.components.resize(k, dim);
  model.explained_variance.resize(k);

  Eigen::VectorXd values;
  if (n >= dim) {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centred.transpose(), 1.0 / denom);
    auto [vals, vecs] = detail::top_eigenpairs(std::move(cov), n_components);
    values = vals;
    model.components = vecs.transpose();
  } else {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(centred, 1.0 / denom);
    auto [vals, vecs] = detail::top_eigenpairs(std::move(gram), n_components);
    values = vals;
    // Right singular vectors: v_i = X^T u_i / sqrt((n-1) lambda_i).
    for (Eigen::Index i = 0; i < k; ++i) {
      if (values(i) > 0.0) {
        Eigen::VectorXd v = centred.transpose() * vecs.col(i);
        model.components.row(i) = (v / v.norm()).transpose();
      }
    }
  }

  // Directions whose variance is at round-off level are not meaningful.
  const double tol = std::max(values(0), 0.0) * 1e-12 * static_cast<double>(std::max(n, dim));
  Eigen::Index rank = 0;
  while (rank < k && values(rank) > tol) ++rank;
  for (Eigen::Index i = 0; i < k; ++i) model.explained_variance(i) = i < rank ? values(i) : 0.0;
  if (rank < k) {
    model.rank_deficient = static_cast<std::size_t>(rank);
    detail::orthonormal_completion(model.components, rank);
  }
  return model;
}

inline PcaModel fit_pca(std::span<const VorticityField> samples, std::size_t n_components) {
  if (samples.empty()) throw std::invalid_argument("fit_pca: no samples");
  const Grid& g = samples.front().grid();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].check_same_grid(samples.front());
    x.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(samples[i].values().data(), static_cast<Eigen::Index>(g.size()));
  }
  return fit_pca(x, n_components);
}

enum class EncoderKind { raw, pca, external };

inline std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::raw: return "raw";
    case EncoderKind::pca: return "pca";
    case EncoderKind::external: return "external";
  }
  return "?";
}

/// The state representation used for matching. Immutable and cheap to copy.
struct EncoderSpec {
  EncoderKind kind = EncoderKind::raw;
  std::shared_ptr<const PcaModel> pca_model;
  std::shared_ptr<const LatentTable> latents;
  std::string latent_source;

  static EncoderSpec raw() { return {}; }
  static EncoderSpec pca(std::shared_ptr<const PcaModel> model) {
    EncoderSpec s;
    s.kind = EncoderKind::pca;
    s.pca_model = std::move(model);
    return s;
  }
  static EncoderSpec external(std::shared_ptr<const LatentTable> table, std::string source = {}) {
    EncoderSpec s;
    s.kind = EncoderKind::external;
    s.latents = std::move(table);
    s.latent_source = std::move(source);
    return s;
  }

  void validate() const {
    if (kind == EncoderKind::pca && !pca_model) throw std::invalid_argument("pca encoder requires a PCA model");
    if (kind == EncoderKind::external && !latents) {
      throw std::invalid_argument("external encoder requires a latent source");
    }
  }

  /// Output dimension for fields on `grid`.
  [[nodiscard]] std::size_t dim(const Grid& grid) const {
    switch (kind) {
      case EncoderKind::raw: return grid.size();
      case EncoderKind::pca: return pca_model->n_components();
      case EncoderKind::external: return latents->dim();
    }
    return 0;
  }
};

/// phi(omega). For external encoders the frame key selects a stored vector and
/// the field itself is not read; states without a key (rollout predictions)
/// cannot be encoded externally.
inline LatentVector encode(const EncoderSpec& spec, const VorticityField& omega,
                           std::optional<FrameKey> key = std::nullopt) {
  spec.validate();
  switch (spec.kind) {
    case EncoderKind::raw: return {omega.values().begin(), omega.values().end()};
    case EncoderKind::pca: return spec.pca_model->project(omega.values());
    case EncoderKind::external:
      if (!key) throw std::invalid_argument("external latents cannot encode a state that is not a recorded frame");
      return spec.latents->at(*key);
  }
  return {};
}

}  // namespace relaylab
