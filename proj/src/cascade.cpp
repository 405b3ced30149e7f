#include "adaptalign/cascade.hpp"

#include "adaptalign/error.hpp"
#include "adaptalign/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <string>

namespace adaptalign {

namespace {

double mean_norm_rmse(const std::vector<std::vector<Eigen::VectorXd>>& samples, std::span<const AnnotatedImage> images,
                      const ShapeModel& shape) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        for (const auto& p : samples[i]) {
            total += norm_rmse(shape.instance(p), images[i].shape, shape.eyes);
            ++count;
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace

Eigen::VectorXd CascadeStage::step(const Eigen::VectorXd& features) const {
    if (features.size() != feature_length()) {
        throw DimensionError("cascade stage expects " + std::to_string(feature_length()) + " features, got " +
                             std::to_string(features.size()));
    }
    return regressor.topRows(feature_length()).transpose() * features + regressor.bottomRows(1).transpose();
}

Eigen::MatrixXd augment(const Eigen::MatrixXd& features) {
    Eigen::MatrixXd out(features.rows(), features.cols() + 1);
    out.leftCols(features.cols()) = features;
    out.col(features.cols()).setOnes();
    return out;
}

AdaptiveStage solve_stage(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets, double ridge) {
    if (!(ridge > 0.0)) throw NumericError("ridge penalty must be positive");
    if (features.rows() != targets.rows()) throw DimensionError("feature/target row count mismatch");
    if (features.rows() < 1) throw DimensionError("no training rows");
    const Eigen::MatrixXd X = augment(features);
    const Eigen::Index D = features.cols();

    Eigen::MatrixXd gram = X.transpose() * X;
    gram.diagonal().head(D).array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) throw NumericError("regularized normal equations are not positive definite");

    AdaptiveStage out;
    out.stage.ridge = ridge;
    out.precision = llt.solve(Eigen::MatrixXd::Identity(D + 1, D + 1));
    out.precision = 0.5 * (out.precision + out.precision.transpose()).eval();
    out.stage.regressor = out.precision * (X.transpose() * targets);
    if (!out.stage.regressor.allFinite()) throw NumericError("non-finite regressor");
    return out;
}

StageAdaptation adapt_stage(const AdaptiveStage& stage, const Eigen::MatrixXd& augmented_features,
                            const Eigen::MatrixXd& targets) {
    const Eigen::MatrixXd& P = stage.precision;
    const Eigen::MatrixXd& R = stage.stage.regressor;
    if (augmented_features.cols() != P.rows()) throw DimensionError("adapt_stage: feature width mismatch");
    if (targets.cols() != R.cols()) throw DimensionError("adapt_stage: target width mismatch");
    if (augmented_features.rows() != targets.rows() || augmented_features.rows() < 1) {
        throw DimensionError("adapt_stage: need n >= 1 matching rows");
    }
    if (!augmented_features.allFinite() || !targets.allFinite()) throw NumericError("adapt_stage: non-finite input");

    // G = P_A x_B^T; S = x_B P_A x_B^T + I (n x n).
    const Eigen::MatrixXd G = P * augmented_features.transpose();
    Eigen::MatrixXd S = augmented_features * G;
    S.diagonal().array() += 1.0;
    S = 0.5 * (S + S.transpose()).eval();

    StageAdaptation result;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    result.condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success || !(result.condition < kMaxAdaptCondition)) {
        result.stage = stage;
        result.accepted = false;
        return result;
    }

    // P_B applied on the right of G: G * P_B = (P_B * G^T)^T, P_B symmetric.
    const Eigen::MatrixXd GPb = llt.solve(G.transpose()).transpose();
    const Eigen::MatrixXd innovation = targets - augmented_features * R;

    result.stage.stage = stage.stage;
    result.stage.stage.regressor = R + GPb * innovation;
    result.stage.precision = P - GPb * G.transpose();
    result.stage.precision = 0.5 * (result.stage.precision + result.stage.precision.transpose()).eval();
    if (!result.stage.stage.regressor.allFinite() || !result.stage.precision.allFinite()) {
        result.stage = stage;
        result.accepted = false;
        result.condition = std::numeric_limits<double>::infinity();
        return result;
    }
    return result;
}

std::vector<Eigen::VectorXd> initial_samples(const Eigen::VectorXd& truth, const PerturbationModel& model,
                                             int count, std::uint64_t seed, std::size_t image_index) {
    return sample_perturbations(truth, model, 0, count, seed + 1000 * (image_index + 1));
}

TrainedCascade train_cascade(std::span<const AnnotatedImage> images, const ShapeModel& shape,
                             const AppearanceModel& appearance, const CascadeTrainingConfig& config,
                             CascadeTrainingReport* report) {
    if (config.stages < 1) throw ConfigError("cascade needs at least one stage");
    if (config.samples_per_image < 1) throw ConfigError("samples_per_image must be >= 1");
    if (images.empty()) throw DimensionError("no training images");

    const auto K = static_cast<std::size_t>(config.stages);
    const Eigen::Index r_p = shape.num_params();
    const Eigen::Index D = appearance.feature_length();

    TrainedCascade out;
    out.perturbation.variances.assign(K, Eigen::VectorXd::Zero(r_p));
    out.perturbation.variances[0] = initial_variances(shape, config.rigid);

    std::vector<Eigen::VectorXd> truth(images.size());
    std::vector<std::vector<Eigen::VectorXd>> current(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        truth[i] = shape.params_from_shape(images[i].shape);
        current[i] = initial_samples(truth[i], out.perturbation, config.samples_per_image, config.seed, i);
    }
    const auto N = static_cast<Eigen::Index>(images.size() * static_cast<std::size_t>(config.samples_per_image));

    if (report) {
        report->initial_residual = mean_norm_rmse(current, images, shape);
        report->stage_residuals.clear();
    }

    for (std::size_t k = 0; k < K; ++k) {
        Eigen::MatrixXd X(N, D);
        Eigen::MatrixXd Y(N, r_p);
        Eigen::Index row = 0;
        for (std::size_t i = 0; i < images.size(); ++i) {
            for (const auto& p : current[i]) {
                X.row(row) = appearance_vector(images[i].image, p, shape, appearance).transpose();
                Y.row(row) = (truth[i] - p).transpose();
                ++row;
            }
        }
        const double ridge = config.ridge * std::max(X.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(D, 1)), 1e-12);
        out.stages.push_back(solve_stage(X, Y, ridge));

        row = 0;
        Eigen::VectorXd second_moment = Eigen::VectorXd::Zero(r_p);
        for (std::size_t i = 0; i < images.size(); ++i) {
            for (auto& p : current[i]) {
                p += out.stages.back().stage.step(X.row(row).transpose());
                second_moment += (truth[i] - p).cwiseAbs2();
                ++row;
            }
        }
        if (report) report->stage_residuals.push_back(mean_norm_rmse(current, images, shape));
        if (k + 1 < K) {
            out.perturbation.variances[k + 1] =
                (second_moment / static_cast<double>(N)).cwiseMax(config.variance_floor);
        }
    }
    return out;
}

FitResult fit(const ImagePlane& image, const Eigen::VectorXd& init, std::span<const AdaptiveStage> stages,
              const ShapeModel& shape, const AppearanceModel& appearance) {
    if (init.size() != shape.num_params()) throw DimensionError("fit: initial parameter count mismatch");
    FitResult result;
    result.params = init;
    result.trajectory.reserve(stages.size());
    for (const auto& s : stages) {
        const Eigen::VectorXd x = appearance_vector(image, result.params, shape, appearance);
        result.params += s.stage.step(x);
        if (!result.params.allFinite()) throw NumericError("fit produced non-finite parameters");
        result.trajectory.push_back(result.params);
    }
    return result;
}

AdaptAllResult adapt_all(std::span<const AdaptiveStage> stages, const PerturbationModel& perturbation,
                         std::span<const AdaptFrame> frames, const ShapeModel& shape,
                         const AppearanceModel& appearance, int samples_per_frame, std::uint64_t seed,
                         int threads, double row_weight) {
    if (!(row_weight > 0.0)) throw ConfigError("row weight must be positive");
    AdaptAllResult out;
    out.stages.assign(stages.begin(), stages.end());
    out.accepted.assign(stages.size(), true);
    if (frames.empty() || samples_per_frame < 1) return out;
    if (perturbation.stages() != stages.size()) throw DimensionError("one perturbation entry per stage required");

    std::vector<char> accepted(stages.size(), 1);
    parallel_for(stages.size(), threads, [&](std::size_t k) {
        Rng rng = make_rng(seed, k);
        const auto rows = static_cast<Eigen::Index>(frames.size() * static_cast<std::size_t>(samples_per_frame));
        Eigen::MatrixXd X(rows, stages[k].precision.rows());
        Eigen::MatrixXd Y(rows, stages[k].stage.param_count());
        Eigen::Index row = 0;
        for (const auto& f : frames) {
            for (int j = 0; j < samples_per_frame; ++j) {
                const Eigen::VectorXd p = sample_around(f.params, perturbation.variances[k], rng);
                const Eigen::VectorXd x = appearance_vector(*f.image, p, shape, appearance);
                X.row(row).head(x.size()) = x.transpose();
                X(row, x.size()) = 1.0;
                Y.row(row) = (f.params - p).transpose();
                ++row;
            }
        }
        if (row_weight != 1.0) {
            X *= std::sqrt(row_weight);
            Y *= std::sqrt(row_weight);
        }
        StageAdaptation a = adapt_stage(stages[k], X, Y);
        out.stages[k] = std::move(a.stage);
        accepted[k] = a.accepted ? 1 : 0;
    });
    for (std::size_t k = 0; k < stages.size(); ++k) out.accepted[k] = accepted[k] != 0;
    return out;
}

}  // namespace adaptalign
