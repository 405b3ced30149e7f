#pragma once

#include "adaptalign/geometry.hpp"
#include "adaptalign/subspace.hpp"

#include <Eigen/Core>

#include <span>

namespace adaptalign {

// Shape parameter layout: [scale, rotation (rad), tx, ty, q_0 .. q_{r-1}].
inline constexpr Eigen::Index kGlobalParams = 4;

struct BoundingBox {
    Eigen::Vector2d min = Eigen::Vector2d::Zero();
    Eigen::Vector2d max = Eigen::Vector2d::Zero();

    Eigen::Vector2d center() const { return 0.5 * (min + max); }
    Eigen::Vector2d size() const { return max - min; }
};

BoundingBox bounding_box(const Shape& shape);

// Point distribution model: image shape = T_global(mean + basis * q).
struct ShapeModel {
    PcaSubspace subspace;  // over Procrustes-normalized shapes, interleaved xy
    EyeCorners eyes;

    Eigen::Index landmarks() const { return subspace.dim() / 2; }
    Eigen::Index num_params() const { return kGlobalParams + subspace.rank(); }

    SimilarityTransform global(const Eigen::VectorXd& params) const;
    Shape normalized_instance(const Eigen::VectorXd& params) const;
    Shape instance(const Eigen::VectorXd& params) const;

    // Parameters whose instance best matches `shape` (alternating similarity
    // fit and subspace projection).
    Eigen::VectorXd params_from_shape(const Shape& shape) const;

    // Mean shape, unrotated, scaled and centered to fill `box`.
    Eigen::VectorXd params_for_box(const BoundingBox& box) const;

    bool operator==(const ShapeModel&) const = default;
};

ShapeModel build_shape_model(std::span<const Shape> shapes, EyeCorners eyes, RankRule rule = {});

}  // namespace adaptalign
