#include "adaptalign/shape_model.hpp"

#include "adaptalign/error.hpp"

#include <cmath>

namespace adaptalign {

BoundingBox bounding_box(const Shape& shape) {
    const auto [lo, hi] = shape.bounds();
    return {lo, hi};
}

SimilarityTransform ShapeModel::global(const Eigen::VectorXd& params) const {
    if (params.size() != num_params()) throw DimensionError("shape parameter count mismatch");
    SimilarityTransform t;
    t.scale = params(0);
    t.rotation = params(1);
    t.translation = params.segment<2>(2);
    return t;
}

Shape ShapeModel::normalized_instance(const Eigen::VectorXd& params) const {
    if (params.size() != num_params()) throw DimensionError("shape parameter count mismatch");
    return Shape::from_vector(reconstruct(subspace, params.tail(subspace.rank())));
}

Shape ShapeModel::instance(const Eigen::VectorXd& params) const {
    return global(params).apply(normalized_instance(params));
}

Eigen::VectorXd ShapeModel::params_from_shape(const Shape& shape) const {
    if (static_cast<Eigen::Index>(shape.size()) != landmarks()) throw DimensionError("landmark count mismatch");
    Eigen::VectorXd p = Eigen::VectorXd::Zero(num_params());
    Shape model_shape = Shape::from_vector(subspace.mean);
    for (int iter = 0; iter < 5; ++iter) {
        const SimilarityTransform t = fit_similarity(model_shape, shape);
        p(0) = t.scale;
        p(1) = t.rotation;
        p.segment<2>(2) = t.translation;
        const Shape normalized = t.inverse().apply(shape);
        p.tail(subspace.rank()) = project(subspace, normalized.to_vector());
        model_shape = normalized_instance(p);
    }
    return p;
}

Eigen::VectorXd ShapeModel::params_for_box(const BoundingBox& box) const {
    const Shape mean = Shape::from_vector(subspace.mean);
    const BoundingBox ref = bounding_box(mean);
    const Eigen::Vector2d ref_size = ref.size();
    const Eigen::Vector2d size = box.size();
    if (!(ref_size.sum() > 0.0) || !(size.sum() > 0.0)) throw GeometryError("degenerate bounding box");
    Eigen::VectorXd p = Eigen::VectorXd::Zero(num_params());
    p(0) = size.sum() / ref_size.sum();
    p.segment<2>(2) = box.center() - p(0) * ref.center();
    return p;
}

ShapeModel build_shape_model(std::span<const Shape> shapes, EyeCorners eyes, RankRule rule) {
    const ProcrustesResult gpa = procrustes_align(shapes, eyes);
    const Eigen::Index d = static_cast<Eigen::Index>(2 * gpa.reference.size());
    Eigen::MatrixXd data(d, static_cast<Eigen::Index>(shapes.size()));
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        data.col(static_cast<Eigen::Index>(i)) = gpa.transforms[i].apply(shapes[i]).to_vector();
    }
    ShapeModel model;
    model.subspace = pca_fit(data, rule);
    model.eyes = eyes;
    return model;
}

}  // namespace adaptalign
