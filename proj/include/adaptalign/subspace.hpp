#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace adaptalign {

// Mean plus orthonormal principal directions of a set of d-dimensional
// observations. Right singular vectors are never stored.
struct PcaSubspace {
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;            // d x r, orthonormal columns
    Eigen::VectorXd singular_values;  // r, non-increasing, > 0
    double observation_weight = 0.0;  // effective count; decays with forgetting

    Eigen::Index dim() const { return mean.size(); }
    Eigen::Index rank() const { return basis.cols(); }

    bool operator==(const PcaSubspace&) const = default;
};

// How many components survive a fit or an update.
struct RankRule {
    // Smallest rank whose cumulative squared singular values reach this
    // fraction of the total. 1.0 keeps every numerically nonzero component.
    double energy = 0.98;
    // Hard cap on the rank; 0 means no cap.
    Eigen::Index max_rank = 0;

    bool operator==(const RankRule&) const = default;
};

PcaSubspace pca_fit(const Eigen::MatrixXd& data, RankRule rule = {});

struct SklOptions {
    double forgetting = 1.0;
    RankRule rank;
};

// Sequential Karhunen-Loeve update with the column batch `batch` (d x n).
PcaSubspace skl_update(const PcaSubspace& state, const Eigen::MatrixXd& batch, const SklOptions& options = {});

Eigen::VectorXd project(const PcaSubspace& sub, const Eigen::VectorXd& observation);
Eigen::VectorXd reconstruct(const PcaSubspace& sub, const Eigen::VectorXd& coeffs);

// Rank selected by `rule` for the given singular values (sorted non-increasing).
Eigen::Index select_rank(const Eigen::VectorXd& singular_values, RankRule rule);

}  // namespace adaptalign
