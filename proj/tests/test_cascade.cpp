#include "adaptalign/cascade.hpp"
#include "adaptalign/error.hpp"
#include "support.hpp"

#include <Eigen/Cholesky>
#include <doctest.h>

using namespace adaptalign;
using testing::random_matrix;

namespace {

Eigen::MatrixXd batch_solve(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double ridge) {
    const Eigen::MatrixXd Xa = augment(X);
    Eigen::MatrixXd gram = Xa.transpose() * Xa;
    gram.diagonal().head(X.cols()).array() += ridge;
    return gram.ldlt().solve(Xa.transpose() * Y);
}

}  // namespace

TEST_CASE("solve_stage is the ridge solution with an unpenalized bias") {
    Rng rng = make_rng(11, 0);
    const Eigen::MatrixXd X = random_matrix(80, 6, rng);
    const Eigen::MatrixXd Y = random_matrix(80, 3, rng);
    const AdaptiveStage s = solve_stage(X, Y, 0.7);
    CHECK((s.stage.regressor - batch_solve(X, Y, 0.7)).cwiseAbs().maxCoeff() < 1e-12);
    // Zero-mean features: the bias is exactly the target mean.
    const Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
    const AdaptiveStage c = solve_stage(Xc, Y, 5.0);
    CHECK((c.stage.regressor.row(6) - Y.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(solve_stage(X, Y, 0.0), NumericError);
    CHECK_THROWS_AS(solve_stage(X, Y.topRows(10), 1.0), DimensionError);
}

TEST_CASE("adapt_stage equals the batch re-solve and ignores partitioning") {
    Rng rng = make_rng(12, 0);
    const Eigen::MatrixXd X = random_matrix(60, 8, rng);
    const Eigen::MatrixXd Y = random_matrix(60, 4, rng);
    const Eigen::MatrixXd Xn = random_matrix(12, 8, rng);
    const Eigen::MatrixXd Yn = random_matrix(12, 4, rng);
    const AdaptiveStage offline = solve_stage(X, Y, 0.3);

    Eigen::MatrixXd Xall(72, 8), Yall(72, 4);
    Xall << X, Xn;
    Yall << Y, Yn;
    const Eigen::MatrixXd expect = batch_solve(Xall, Yall, 0.3);

    const StageAdaptation one = adapt_stage(offline, augment(Xn), Yn);
    REQUIRE(one.accepted);
    CHECK((one.stage.stage.regressor - expect).cwiseAbs().maxCoeff() < 1e-9);

    AdaptiveStage step = offline;
    for (int b = 0; b < 12; b += 4) {
        const StageAdaptation r = adapt_stage(step, augment(Xn.middleRows(b, 4)), Yn.middleRows(b, 4));
        REQUIRE(r.accepted);
        step = r.stage;
    }
    CHECK((step.stage.regressor - expect).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((step.precision - one.stage.precision).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("adapt_stage rejects ill-conditioned or malformed updates") {
    Rng rng = make_rng(13, 0);
    const AdaptiveStage s = solve_stage(random_matrix(30, 3, rng), random_matrix(30, 2, rng), 1.0);
    // Two identical, very large rows make the innovation system singular.
    Eigen::MatrixXd huge = augment(random_matrix(1, 3, rng) * 1e9).replicate(2, 1);
    const StageAdaptation r = adapt_stage(s, huge, random_matrix(2, 2, rng));
    CHECK_FALSE(r.accepted);
    CHECK(r.stage == s);
    CHECK(r.condition >= kMaxAdaptCondition);
    CHECK_THROWS_AS(adapt_stage(s, random_matrix(2, 3, rng), random_matrix(2, 2, rng)), DimensionError);
    Eigen::MatrixXd bad = augment(random_matrix(2, 3, rng));
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adapt_stage(s, bad, random_matrix(2, 2, rng)), NumericError);
}

TEST_CASE("trained cascade reduces the residual at every stage") {
    const auto& fx = testing::trained_fixture();
    REQUIRE(fx.models.stages.size() == 3);
    TrainingConfig tc;
    tc.appearance = fx.models.appearance.config;
    tc.cascade.samples_per_image = 6;
    CascadeTrainingReport report;
    train_cascade(fx.train, fx.models.shape, fx.models.appearance, tc.cascade, &report);
    double prev = report.initial_residual;
    for (double r : report.stage_residuals) {
        CHECK(r < prev);
        prev = r;
    }
}

TEST_CASE("fit on a held-out frame improves on the initialization") {
    const auto& fx = testing::trained_fixture();
    SynthConfig sc;
    sc.seed = 555;
    sc.scale_amplitude = 0.1;
    sc.rotation_amplitude_deg = 10;
    sc.translation_amplitude = 8;
    const auto test = generate_dataset(sc, 10);
    std::vector<double> before, after;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const Eigen::VectorXd truth = fx.models.shape.params_from_shape(test[i].shape);
        const Eigen::VectorXd init = sample_perturbations(truth, fx.models.perturbation, 0, 1, 900 + i)[0];
        const FitResult r = fit(test[i].image, init, fx.models.stages, fx.models.shape, fx.models.appearance);
        CHECK(r.trajectory.size() == fx.models.stages.size());
        before.push_back(norm_rmse(fx.models.shape.instance(init), test[i].shape, kSynthEyes));
        after.push_back(norm_rmse(fx.models.shape.instance(r.params), test[i].shape, kSynthEyes));
    }
    std::sort(before.begin(), before.end());
    std::sort(after.begin(), after.end());
    CHECK(after[5] < 0.6 * before[5]);
}

TEST_CASE("adapt_all validates the row weight") {
    const ModelSet m = testing::toy_models(3);
    CHECK_THROWS_AS(adapt_all(m.stages, m.perturbation, {}, m.shape, m.appearance, 2, 1, 1, 0.0), ConfigError);
}
