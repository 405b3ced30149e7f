#include "adaptalign/error.hpp"
#include "adaptalign/subspace.hpp"
#include "support.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <doctest.h>

using namespace adaptalign;
using testing::random_matrix;

namespace {

// Largest distance between the two spans: ||(I - A A^T) B||_2.
double span_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const Eigen::MatrixXd r = b - a * (a.transpose() * b);
    return Eigen::JacobiSVD<Eigen::MatrixXd>(r).singularValues()(0);
}

}  // namespace

TEST_CASE("pca_fit matches the covariance eigendecomposition") {
    Rng rng = make_rng(1, 0);
    const Eigen::MatrixXd data = random_matrix(8, 5, rng) * random_matrix(5, 60, rng);
    const PcaSubspace pca = pca_fit(data, {1.0, 0});
    const Eigen::VectorXd mean = data.rowwise().mean();
    const Eigen::MatrixXd centered = data.colwise() - mean;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered * centered.transpose());
    // Eigenvalues ascending; the top five carry all the variance.
    CHECK(pca.rank() == 5);
    for (int k = 0; k < 5; ++k) {
        CHECK(pca.singular_values(k) * pca.singular_values(k) == doctest::Approx(eig.eigenvalues()(7 - k)).epsilon(1e-9));
    }
    CHECK(span_gap(eig.eigenvectors().rightCols(5), pca.basis) < 1e-8);
    CHECK((pca.mean - mean).norm() < 1e-12);
    CHECK(pca.observation_weight == 60.0);
}

TEST_CASE("energy and max_rank rules") {
    const Eigen::VectorXd sv = (Eigen::VectorXd(4) << 3.0, 2.0, 1.0, 0.0).finished();
    // Squared: 9, 4, 1 of total 14.
    CHECK(select_rank(sv, {0.5, 0}) == 1);
    CHECK(select_rank(sv, {0.9, 0}) == 2);
    CHECK(select_rank(sv, {1.0, 0}) == 3);
    CHECK(select_rank(sv, {1.0, 2}) == 2);
}

TEST_CASE("skl_update equals batch SVD of the concatenation") {
    Rng rng = make_rng(2, 0);
    const Eigen::MatrixXd a = random_matrix(30, 20, rng);
    const Eigen::MatrixXd b = random_matrix(30, 7, rng) + Eigen::MatrixXd::Constant(30, 7, 0.5);
    const PcaSubspace state = pca_fit(a, {1.0, 0});
    const PcaSubspace inc = skl_update(state, b, {1.0, {1.0, 0}});
    Eigen::MatrixXd all(30, 27);
    all << a, b;
    const PcaSubspace batch = pca_fit(all, {1.0, 0});
    REQUIRE(inc.rank() == batch.rank());
    CHECK((inc.mean - batch.mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((inc.singular_values - batch.singular_values).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(span_gap(batch.basis, inc.basis) < 1e-8);
    CHECK(inc.observation_weight == 27.0);
}

TEST_CASE("forgetting down-weights the old mean") {
    Rng rng = make_rng(3, 0);
    const PcaSubspace state = pca_fit(random_matrix(6, 10, rng), {1.0, 0});
    const Eigen::MatrixXd b = random_matrix(6, 4, rng);
    const PcaSubspace inc = skl_update(state, b, {0.5, {1.0, 0}});
    const Eigen::VectorXd expect = (5.0 * state.mean + 4.0 * b.rowwise().mean()) / 9.0;
    CHECK((inc.mean - expect).norm() < 1e-12);
    CHECK(inc.observation_weight == doctest::Approx(9.0));
}

TEST_CASE("rank cap and degenerate inputs") {
    Rng rng = make_rng(4, 0);
    const PcaSubspace state = pca_fit(random_matrix(12, 15, rng), {1.0, 3});
    CHECK(state.rank() == 3);
    const PcaSubspace inc = skl_update(state, random_matrix(12, 5, rng), {1.0, {1.0, 3}});
    CHECK(inc.rank() == 3);
    CHECK((inc.basis.transpose() * inc.basis - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-10);
    CHECK_THROWS_AS(skl_update(state, random_matrix(11, 5, rng)), DimensionError);
    CHECK_THROWS_AS(skl_update(state, random_matrix(12, 5, rng), {1.5, {}}), ConfigError);
    // A batch equal to the mean adds no direction.
    const PcaSubspace same = skl_update(state, state.mean.replicate(1, 3), {1.0, {1.0, 0}});
    CHECK(span_gap(state.basis, same.basis.leftCols(3)) < 1e-8);
}

TEST_CASE("project and reconstruct are inverse on the span") {
    Rng rng = make_rng(5, 0);
    const PcaSubspace s = testing::random_subspace(20, 4, rng);
    const Eigen::VectorXd c = random_matrix(4, 1, rng).col(0);
    CHECK((project(s, reconstruct(s, c)) - c).norm() < 1e-12);
}
