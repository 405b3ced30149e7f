#pragma once

#include "adaptalign/appearance.hpp"
#include "adaptalign/perturbation.hpp"
#include "adaptalign/shape_model.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace adaptalign {

// Linear update p <- p + [x, 1] * regressor. The last row of `regressor` is the bias.
struct CascadeStage {
    Eigen::MatrixXd regressor;  // (D + 1) x r_p
    double ridge = 0.0;         // absolute penalty on the D feature rows

    Eigen::Index feature_length() const { return regressor.rows() - 1; }
    Eigen::Index param_count() const { return regressor.cols(); }
    Eigen::VectorXd step(const Eigen::VectorXd& features) const;

    bool operator==(const CascadeStage&) const = default;
};

// A stage together with the inverse of its regularized feature Gram matrix,
// which is all that is needed to absorb new rows without the offline data.
struct AdaptiveStage {
    CascadeStage stage;
    Eigen::MatrixXd precision;  // (D + 1) x (D + 1), symmetric positive definite

    bool operator==(const AdaptiveStage&) const = default;
};

// Appends the constant 1 column.
Eigen::MatrixXd augment(const Eigen::MatrixXd& features);

// Ridge solution over rows `features` (N x D) and `targets` (N x r_p). The bias
// row is not penalized. Throws NumericError if the system is not positive definite.
AdaptiveStage solve_stage(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets, double ridge);

struct StageAdaptation {
    AdaptiveStage stage;
    bool accepted = true;
    double condition = 1.0;  // condition number of the n x n system
};

inline constexpr double kMaxAdaptCondition = 1e12;

// Absorbs rows `augmented_features` (n x (D + 1)) with targets (n x r_p).
StageAdaptation adapt_stage(const AdaptiveStage& stage, const Eigen::MatrixXd& augmented_features,
                            const Eigen::MatrixXd& targets);

struct CascadeTrainingConfig {
    int stages = 3;
    int samples_per_image = 10;
    double ridge = 1e-2;  // relative to the mean squared feature value times row count
    RigidPerturbation rigid;
    double variance_floor = 1e-6;
    std::uint64_t seed = 11;

    bool operator==(const CascadeTrainingConfig&) const = default;
};

struct CascadeTrainingReport {
    double initial_residual = 0.0;        // mean Norm RMSE of the stage-0 samples
    std::vector<double> stage_residuals;  // mean Norm RMSE after each stage
};

struct TrainedCascade {
    std::vector<AdaptiveStage> stages;
    PerturbationModel perturbation;
};

// Stage-0 perturbations for image i; shared by the appearance tensor and the cascade.
std::vector<Eigen::VectorXd> initial_samples(const Eigen::VectorXd& truth, const PerturbationModel& model,
                                             int count, std::uint64_t seed, std::size_t image_index);

TrainedCascade train_cascade(std::span<const AnnotatedImage> images, const ShapeModel& shape,
                             const AppearanceModel& appearance, const CascadeTrainingConfig& config,
                             CascadeTrainingReport* report = nullptr);

struct FitResult {
    Eigen::VectorXd params;
    std::vector<Eigen::VectorXd> trajectory;  // parameters after each stage
};

FitResult fit(const ImagePlane& image, const Eigen::VectorXd& init, std::span<const AdaptiveStage> stages,
              const ShapeModel& shape, const AppearanceModel& appearance);

struct AdaptFrame {
    const ImagePlane* image = nullptr;
    Eigen::VectorXd params;  // accepted fit, used as ground truth
};

struct AdaptAllResult {
    std::vector<AdaptiveStage> stages;
    std::vector<bool> accepted;
};

// Adapts every stage independently from samples drawn around the accepted fits.
// Each new row counts `row_weight` times relative to an offline row.
AdaptAllResult adapt_all(std::span<const AdaptiveStage> stages, const PerturbationModel& perturbation,
                         std::span<const AdaptFrame> frames, const ShapeModel& shape,
                         const AppearanceModel& appearance, int samples_per_frame, std::uint64_t seed,
                         int threads = 1, double row_weight = 1.0);

}  // namespace adaptalign
