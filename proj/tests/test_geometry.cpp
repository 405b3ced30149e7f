#include "adaptalign/error.hpp"
#include "adaptalign/geometry.hpp"
#include "support.hpp"

#include <Eigen/LU>
#include <doctest.h>

#include <cmath>

using namespace adaptalign;

namespace {

Shape random_shape(std::size_t n, Rng& rng) {
    return Shape(testing::random_matrix(2, static_cast<Eigen::Index>(n), rng) * 30.0);
}

}  // namespace

TEST_CASE("fit_similarity recovers a known transform") {
    Rng rng = make_rng(3, 0);
    const Shape src = random_shape(12, rng);
    const SimilarityTransform t{1.7, 0.6, {4.0, -9.0}};
    const SimilarityTransform fit = fit_similarity(src, t.apply(src));
    CHECK(fit.scale == doctest::Approx(1.7).epsilon(1e-12));
    CHECK(fit.rotation == doctest::Approx(0.6).epsilon(1e-12));
    CHECK((fit.translation - t.translation).norm() < 1e-10);
}

TEST_CASE("fit_similarity never reflects") {
    Rng rng = make_rng(4, 0);
    const Shape src = random_shape(8, rng);
    Shape mirrored = src;
    mirrored.points().row(0) *= -1.0;
    const SimilarityTransform fit = fit_similarity(src, mirrored);
    CHECK(fit.linear().determinant() > 0.0);
}

TEST_CASE("inverse and compose") {
    const SimilarityTransform a{2.0, 0.3, {1.0, 2.0}};
    const SimilarityTransform b{0.5, -1.1, {-3.0, 0.5}};
    const Eigen::Vector2d p(7.0, -2.0);
    CHECK((a.inverse().apply(a.apply(p)) - p).norm() < 1e-12);
    CHECK((a.compose(b).apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
}

TEST_CASE("procrustes reference is canonical and removes similarity") {
    Rng rng = make_rng(5, 0);
    const Shape base = synth_template(10);
    std::vector<Shape> shapes;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 6; ++i) {
        const SimilarityTransform t{1.0 + 0.3 * u(rng), 0.8 * u(rng), {20.0 * u(rng), 20.0 * u(rng)}};
        shapes.push_back(t.apply(base));
    }
    const ProcrustesResult r = procrustes_align(shapes, kSynthEyes);
    CHECK(r.reference.centroid().norm() < 1e-9);
    const Eigen::Vector2d eye_axis = r.reference.point(1) - r.reference.point(0);
    CHECK(std::abs(eye_axis.y()) < 1e-9);
    CHECK(eye_axis.x() > 0.0);
    CHECK(interocular_distance(r.reference, kSynthEyes) == doctest::Approx(kReferenceInterocular));
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const Shape aligned = r.transforms[i].apply(shapes[i]);
        CHECK((aligned.points() - r.reference.points()).norm() < 1e-8);
    }
}

TEST_CASE("norm_rmse") {
    const Shape truth(Eigen::Matrix2Xd{{0.0, 10.0, 5.0}, {0.0, 0.0, 5.0}});
    CHECK(norm_rmse(truth, truth, {0, 1}) == 0.0);
    Shape shifted = truth;
    shifted.points().row(0).array() += 1.0;
    // Every point off by 1 px, interocular 10 px.
    CHECK(norm_rmse(shifted, truth, {0, 1}) == doctest::Approx(0.1));
    Shape degenerate = truth;
    degenerate.set_point(1, degenerate.point(0));
    CHECK_THROWS_AS(norm_rmse(truth, degenerate, {0, 1}), GeometryError);
    CHECK_THROWS_AS(norm_rmse(truth, Shape(2), {0, 1}), Error);
}
