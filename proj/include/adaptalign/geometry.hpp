#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace adaptalign {

// Ordered 2-D landmarks in pixel coordinates, stored column-wise (2 x L).
class Shape {
public:
    Shape() = default;
    explicit Shape(Eigen::Matrix2Xd points);
    explicit Shape(std::size_t landmarks) : points_(Eigen::Matrix2Xd::Zero(2, static_cast<Eigen::Index>(landmarks))) {}

    // Interleaved [x0, y0, x1, y1, ...] layout used by the shape subspace.
    static Shape from_vector(const Eigen::VectorXd& xy);
    Eigen::VectorXd to_vector() const;

    std::size_t size() const { return static_cast<std::size_t>(points_.cols()); }
    Eigen::Vector2d point(std::size_t i) const { return points_.col(static_cast<Eigen::Index>(i)); }
    void set_point(std::size_t i, const Eigen::Vector2d& p) { points_.col(static_cast<Eigen::Index>(i)) = p; }

    const Eigen::Matrix2Xd& points() const { return points_; }
    Eigen::Matrix2Xd& points() { return points_; }

    Eigen::Vector2d centroid() const { return points_.rowwise().mean(); }
    bool all_finite() const { return points_.allFinite(); }

    // Axis-aligned bounds as (min corner, max corner).
    std::pair<Eigen::Vector2d, Eigen::Vector2d> bounds() const;

    bool operator==(const Shape& other) const {
        return points_.cols() == other.points_.cols() && points_ == other.points_;
    }

private:
    Eigen::Matrix2Xd points_;
};

// Landmark indices of the two outer eye corners; the Norm RMSE normalizer.
struct EyeCorners {
    int left = 36;
    int right = 45;

    bool operator==(const EyeCorners&) const = default;
};

// Reference shapes are normalized to this interocular distance (pixels).
inline constexpr double kReferenceInterocular = 50.0;

double interocular_distance(const Shape& shape, EyeCorners eyes);

// x -> scale * R(rotation) * x + translation, reflection-free.
struct SimilarityTransform {
    double scale = 1.0;
    double rotation = 0.0;
    Eigen::Vector2d translation = Eigen::Vector2d::Zero();

    Eigen::Matrix2d linear() const;
    Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
    Shape apply(const Shape& s) const;
    SimilarityTransform inverse() const;
    // (*this) after `first`.
    SimilarityTransform compose(const SimilarityTransform& first) const;

    static SimilarityTransform identity() { return {}; }
};

// Least-squares similarity minimizing sum ||T(src_i) - dst_i||^2.
SimilarityTransform fit_similarity(const Shape& src, const Shape& dst);

struct ProcrustesResult {
    Shape reference;
    std::vector<SimilarityTransform> transforms;  // input i -> reference
    int iterations = 0;
};

// Generalized Procrustes analysis. The reference is centered at the origin,
// its eye axis points along +x and its interocular distance is 50 px.
ProcrustesResult procrustes_align(std::span<const Shape> shapes, EyeCorners eyes);

// Root-mean-square point error divided by the interocular distance of `truth`.
double norm_rmse(const Shape& fitted, const Shape& truth, EyeCorners eyes);

}  // namespace adaptalign
