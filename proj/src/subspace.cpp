#include "adaptalign/subspace.hpp"

#include "adaptalign/error.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <string>

namespace adaptalign {

namespace {

// Singular values at or below this fraction of the largest one are numerical zeros.
constexpr double kRelativeZero = 1e-11;
constexpr double kAbsoluteZero = 1e-300;
// Residual columns shorter than this fraction of their original norm are in span(U).
constexpr double kDropThreshold = 1e-10;

// Orthonormalizes the columns of `residual` against `basis` and each other
// with two passes of Gram-Schmidt, discarding columns that vanish.
Eigen::MatrixXd orthonormal_complement(const Eigen::MatrixXd& basis, Eigen::MatrixXd residual,
                                       const Eigen::VectorXd& original_norms) {
    const Eigen::Index d = residual.rows();
    Eigen::MatrixXd out(d, residual.cols());
    Eigen::Index kept = 0;
    for (Eigen::Index j = 0; j < residual.cols(); ++j) {
        Eigen::VectorXd v = residual.col(j);
        for (int pass = 0; pass < 2; ++pass) {
            if (basis.cols() > 0) v -= basis * (basis.transpose() * v);
            if (kept > 0) v -= out.leftCols(kept) * (out.leftCols(kept).transpose() * v);
        }
        const double norm = v.norm();
        if (norm > kDropThreshold * std::max(original_norms(j), kAbsoluteZero) && norm > kAbsoluteZero) {
            out.col(kept++) = v / norm;
        }
    }
    return out.leftCols(kept);
}

void check_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace

Eigen::Index select_rank(const Eigen::VectorXd& singular_values, RankRule rule) {
    if (singular_values.size() == 0) return 0;
    if (!(rule.energy > 0.0 && rule.energy <= 1.0)) throw ConfigError("energy fraction must lie in (0, 1]");
    const double floor = std::max(singular_values(0) * kRelativeZero, kAbsoluteZero);
    Eigen::Index nonzero = 0;
    while (nonzero < singular_values.size() && singular_values(nonzero) > floor) ++nonzero;

    Eigen::Index r = nonzero;
    if (rule.energy < 1.0) {
        const double total = singular_values.head(nonzero).squaredNorm();
        double acc = 0.0;
        r = 0;
        while (r < nonzero) {
            acc += singular_values(r) * singular_values(r);
            ++r;
            if (acc >= rule.energy * total * (1.0 - 1e-12)) break;
        }
    }
    if (rule.max_rank > 0) r = std::min(r, rule.max_rank);
    return r;
}

PcaSubspace pca_fit(const Eigen::MatrixXd& data, RankRule rule) {
    if (data.cols() < 2) throw DimensionError("pca_fit needs at least two observations");
    check_finite(data, "pca_fit input");

    PcaSubspace out;
    out.mean = data.rowwise().mean();
    out.observation_weight = static_cast<double>(data.cols());
    const Eigen::MatrixXd centered = data.colwise() - out.mean;

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU);
    const Eigen::Index r = select_rank(svd.singularValues(), rule);
    out.basis = svd.matrixU().leftCols(r);
    out.singular_values = svd.singularValues().head(r);
    return out;
}

PcaSubspace skl_update(const PcaSubspace& state, const Eigen::MatrixXd& batch, const SklOptions& options) {
    if (batch.rows() != state.dim()) {
        throw DimensionError("skl_update: batch dimension " + std::to_string(batch.rows()) +
                             " does not match subspace dimension " + std::to_string(state.dim()));
    }
    if (batch.cols() < 1) throw DimensionError("skl_update: empty batch");
    if (!(state.observation_weight > 0.0)) throw DimensionError("skl_update: state has no observations");
    if (!(options.forgetting > 0.0 && options.forgetting <= 1.0)) {
        throw ConfigError("forgetting factor must lie in (0, 1]");
    }
    check_finite(batch, "skl_update batch");

    const Eigen::Index d = state.dim();
    const Eigen::Index n = batch.cols();
    const double m = options.forgetting * state.observation_weight;
    const double nn = static_cast<double>(n);

    const Eigen::VectorXd batch_mean = batch.rowwise().mean();

    // Mean-corrected batch plus the mean-shift column.
    Eigen::MatrixXd augmented(d, n + 1);
    augmented.leftCols(n) = batch.colwise() - batch_mean;
    augmented.col(n) = std::sqrt(m * nn / (m + nn)) * (batch_mean - state.mean);

    const Eigen::MatrixXd& basis = state.basis;
    const Eigen::Index r = basis.cols();
    Eigen::MatrixXd coeffs(r, n + 1);
    if (r > 0) {
        coeffs.noalias() = basis.transpose() * augmented;
    }
    Eigen::MatrixXd residual = augmented;
    if (r > 0) residual.noalias() -= basis * coeffs;

    const Eigen::VectorXd norms = augmented.colwise().norm();
    const Eigen::MatrixXd extra = orthonormal_complement(basis, std::move(residual), norms);
    const Eigen::Index e = extra.cols();

    // [Sigma, U^T B; 0, E^T (B - U U^T B)]
    Eigen::MatrixXd middle = Eigen::MatrixXd::Zero(r + e, r + n + 1);
    if (r > 0) {
        middle.topLeftCorner(r, r) = (options.forgetting * state.singular_values).asDiagonal();
        middle.topRightCorner(r, n + 1) = coeffs;
    }
    if (e > 0) {
        middle.bottomRightCorner(e, n + 1).noalias() = extra.transpose() * (augmented - basis * coeffs);
    }

    Eigen::BDCSVD<Eigen::MatrixXd> svd(middle, Eigen::ComputeThinU);
    const Eigen::Index keep = select_rank(svd.singularValues(), options.rank);

    PcaSubspace out;
    out.basis.resize(d, keep);
    if (keep > 0) {
        const Eigen::MatrixXd rot = svd.matrixU().leftCols(keep);
        if (r > 0) out.basis.noalias() = basis * rot.topRows(r);
        else out.basis.setZero();
        if (e > 0) out.basis.noalias() += extra * rot.bottomRows(e);
    }
    out.singular_values = svd.singularValues().head(keep);
    out.mean = (m / (m + nn)) * state.mean + (nn / (m + nn)) * batch_mean;
    out.observation_weight = m + nn;
    check_finite(out.basis, "skl_update result");
    return out;
}

Eigen::VectorXd project(const PcaSubspace& sub, const Eigen::VectorXd& observation) {
    if (observation.size() != sub.dim()) throw DimensionError("project: dimension mismatch");
    return sub.basis.transpose() * (observation - sub.mean);
}

Eigen::VectorXd reconstruct(const PcaSubspace& sub, const Eigen::VectorXd& coeffs) {
    if (coeffs.size() != sub.rank()) throw DimensionError("reconstruct: coefficient count mismatch");
    return sub.mean + sub.basis * coeffs;
}

}  // namespace adaptalign
