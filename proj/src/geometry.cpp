#include "adaptalign/geometry.hpp"

#include "adaptalign/error.hpp"

#include <cmath>
#include <string>

namespace adaptalign {

namespace {

constexpr double kDegenerateEps = 1e-12;
constexpr double kProcrustesTol = 1e-8;
constexpr int kProcrustesMaxIter = 100;

void check_same_size(const Shape& a, const Shape& b) {
    if (a.size() != b.size()) {
        throw DimensionError("landmark count mismatch: " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
}

void check_eyes(const Shape& s, EyeCorners eyes) {
    const auto n = static_cast<int>(s.size());
    if (eyes.left < 0 || eyes.right < 0 || eyes.left >= n || eyes.right >= n || eyes.left == eyes.right) {
        throw DimensionError("eye-corner indices out of range for " + std::to_string(n) + " landmarks");
    }
}

// Centers, levels the eye axis and scales to the reference interocular distance.
Shape canonicalize(const Shape& s, EyeCorners eyes) {
    Eigen::Matrix2Xd p = s.points().colwise() - s.centroid();
    const Eigen::Vector2d axis = p.col(eyes.right) - p.col(eyes.left);
    const double iod = axis.norm();
    if (iod < kDegenerateEps) throw GeometryError("zero interocular distance");
    SimilarityTransform t;
    t.scale = kReferenceInterocular / iod;
    t.rotation = -std::atan2(axis.y(), axis.x());
    return t.apply(Shape(std::move(p)));
}

}  // namespace

Shape::Shape(Eigen::Matrix2Xd points) : points_(std::move(points)) {}

Shape Shape::from_vector(const Eigen::VectorXd& xy) {
    if (xy.size() % 2 != 0) throw DimensionError("interleaved shape vector has odd length");
    return Shape(Eigen::Map<const Eigen::Matrix2Xd>(xy.data(), 2, xy.size() / 2));
}

Eigen::VectorXd Shape::to_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(points_.data(), points_.size());
}

std::pair<Eigen::Vector2d, Eigen::Vector2d> Shape::bounds() const {
    return {points_.rowwise().minCoeff(), points_.rowwise().maxCoeff()};
}

double interocular_distance(const Shape& shape, EyeCorners eyes) {
    check_eyes(shape, eyes);
    return (shape.point(static_cast<std::size_t>(eyes.right)) - shape.point(static_cast<std::size_t>(eyes.left))).norm();
}

Eigen::Matrix2d SimilarityTransform::linear() const {
    const double c = std::cos(rotation);
    const double s = std::sin(rotation);
    Eigen::Matrix2d m;
    m << c, -s, s, c;
    return scale * m;
}

Eigen::Vector2d SimilarityTransform::apply(const Eigen::Vector2d& p) const {
    return linear() * p + translation;
}

Shape SimilarityTransform::apply(const Shape& s) const {
    Eigen::Matrix2Xd p = (linear() * s.points()).colwise() + translation;
    return Shape(std::move(p));
}

SimilarityTransform SimilarityTransform::inverse() const {
    SimilarityTransform inv;
    inv.scale = 1.0 / scale;
    inv.rotation = -rotation;
    inv.translation = -(inv.linear() * translation);
    return inv;
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& first) const {
    SimilarityTransform out;
    out.scale = scale * first.scale;
    out.rotation = std::remainder(rotation + first.rotation, 2.0 * M_PI);
    out.translation = linear() * first.translation + translation;
    return out;
}

SimilarityTransform fit_similarity(const Shape& src, const Shape& dst) {
    check_same_size(src, dst);
    const Eigen::Vector2d cs = src.centroid();
    const Eigen::Vector2d cd = dst.centroid();
    const Eigen::Matrix2Xd s = src.points().colwise() - cs;
    const Eigen::Matrix2Xd d = dst.points().colwise() - cd;
    const double norm2 = s.squaredNorm();
    if (!(norm2 > kDegenerateEps)) throw GeometryError("degenerate source shape (coincident points)");

    const double a = (s.row(0).dot(d.row(0)) + s.row(1).dot(d.row(1))) / norm2;
    const double b = (s.row(0).dot(d.row(1)) - s.row(1).dot(d.row(0))) / norm2;

    SimilarityTransform t;
    t.scale = std::hypot(a, b);
    if (!(t.scale > 0.0)) throw GeometryError("degenerate alignment (zero scale)");
    t.rotation = std::atan2(b, a);
    t.translation = cd - t.linear() * cs;
    return t;
}

ProcrustesResult procrustes_align(std::span<const Shape> shapes, EyeCorners eyes) {
    if (shapes.size() < 2) throw GeometryError("procrustes needs at least two shapes");
    const std::size_t n_points = shapes.front().size();
    for (const auto& s : shapes) {
        if (s.size() != n_points) throw DimensionError("procrustes inputs differ in landmark count");
        if (!s.all_finite()) throw GeometryError("non-finite landmark coordinates");
    }
    if (n_points < 3) throw GeometryError("shapes need at least three landmarks");
    check_eyes(shapes.front(), eyes);

    ProcrustesResult result;
    result.reference = canonicalize(shapes.front(), eyes);
    result.transforms.resize(shapes.size());

    for (int iter = 1; iter <= kProcrustesMaxIter; ++iter) {
        Eigen::Matrix2Xd sum = Eigen::Matrix2Xd::Zero(2, static_cast<Eigen::Index>(n_points));
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            result.transforms[i] = fit_similarity(shapes[i], result.reference);
            sum += result.transforms[i].apply(shapes[i]).points();
        }
        Shape mean = canonicalize(Shape(sum / static_cast<double>(shapes.size())), eyes);
        const double movement = (mean.points() - result.reference.points()).cwiseAbs().maxCoeff();
        result.reference = std::move(mean);
        result.iterations = iter;
        if (movement < kProcrustesTol) break;
    }
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        result.transforms[i] = fit_similarity(shapes[i], result.reference);
    }
    return result;
}

double norm_rmse(const Shape& fitted, const Shape& truth, EyeCorners eyes) {
    check_same_size(fitted, truth);
    const double iod = interocular_distance(truth, eyes);
    if (!(iod > kDegenerateEps)) throw GeometryError("zero interocular distance in ground truth");
    const double mse = (fitted.points() - truth.points()).colwise().squaredNorm().mean();
    return std::sqrt(mse) / iod;
}

}  // namespace adaptalign
