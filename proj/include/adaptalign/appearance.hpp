#pragma once

#include "adaptalign/hog.hpp"
#include "adaptalign/image.hpp"
#include "adaptalign/perturbation.hpp"
#include "adaptalign/shape_model.hpp"
#include "adaptalign/subspace.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace adaptalign {

struct AnnotatedImage {
    ImagePlane image;
    Shape shape;
};

// Linear logistic scorer; response = 1 / (1 + exp(weights . phi + bias)).
// Trained so that the true landmark position gives a response near 1.
struct PatchExpert {
    Eigen::VectorXd weights;
    double bias = 0.0;
    int landmark = 0;

    double response(const double* features) const;
    bool operator==(const PatchExpert&) const = default;
};

struct ResponseMap {
    Eigen::MatrixXd grid;  // side x side, row = y offset, column = x offset
    Eigen::Vector2d center = Eigen::Vector2d::Zero();

    int side() const { return static_cast<int>(grid.rows()); }
    // Row-major flattening used by the appearance subspaces.
    Eigen::VectorXd flatten() const;
};

struct AppearanceConfig {
    HogLayout hog;
    int support_side = 21;
    int negatives_per_image = 8;
    double min_negative_displacement = 3.0;
    int cv_folds = 5;
    std::vector<double> ridge_grid{1e-3, 1e-2, 1e-1, 1.0};
    RankRule rank{0.98, 20};  // capped: uncapped ranks overfit the cascade
    std::uint64_t seed = 7;

    int support_half() const { return support_side / 2; }
    // Half-size of the resampled landmark region: window + patch + gradient border.
    int region_half() const { return support_half() + hog.patch_side / 2 + 1; }

    bool operator==(const AppearanceConfig&) const = default;
};

void validate(const AppearanceConfig& config);

ResponseMap response_map(const ImagePlane& image, const PatchExpert& expert, const Eigen::Vector2d& center,
                         const HogLayout& layout, int support_side);

// Landmark neighbourhood resampled into the reference frame; `linear` maps
// reference offsets to image offsets. The landmark sits at the region center.
ImagePlane landmark_region(const ImagePlane& image, const Eigen::Vector2d& position, const Eigen::Matrix2d& linear,
                           const AppearanceConfig& config);

struct ExpertTrainingReport {
    std::vector<double> chosen_ridge;  // per landmark
};

std::vector<PatchExpert> train_patch_experts(std::span<const AnnotatedImage> images, const ShapeModel& shape,
                                             const AppearanceConfig& config, ExpertTrainingReport* report = nullptr);

// Flattened response maps of every landmark at the given shape parameters,
// one column per landmark (support_side^2 x L).
Eigen::MatrixXd landmark_responses(const ImagePlane& image, const Eigen::VectorXd& params, const ShapeModel& shape,
                                   std::span<const PatchExpert> experts, const AppearanceConfig& config);

struct AppearanceModel {
    std::vector<PatchExpert> experts;
    std::vector<PcaSubspace> subspaces;  // one per landmark, over flattened response maps
    AppearanceConfig config;

    Eigen::Index feature_length() const;
    bool operator==(const AppearanceModel&) const = default;
};

// Per-landmark PCA of response maps sampled at `perturbed[i][j]` around image i.
std::vector<PcaSubspace> build_appearance_subspaces(std::span<const AnnotatedImage> images,
                                                    const std::vector<std::vector<Eigen::VectorXd>>& perturbed,
                                                    const ShapeModel& shape, std::span<const PatchExpert> experts,
                                                    const AppearanceConfig& config);

// Samples `perturbations_per_image` draws from stage 0 of `perturbation` around each
// image's ground-truth parameters, then builds the subspaces.
std::vector<PcaSubspace> build_appearance_subspaces(std::span<const AnnotatedImage> images, const ShapeModel& shape,
                                                    std::span<const PatchExpert> experts,
                                                    const PerturbationModel& perturbation, int perturbations_per_image,
                                                    const AppearanceConfig& config);

// Concatenated per-landmark projections of precomputed responses.
Eigen::VectorXd project_responses(const Eigen::MatrixXd& responses, std::span<const PcaSubspace> subspaces);

Eigen::VectorXd appearance_vector(const ImagePlane& image, const Eigen::VectorXd& params, const ShapeModel& shape,
                                  const AppearanceModel& appearance);

}  // namespace adaptalign
