#pragma once

#include "adaptalign/appearance.hpp"
#include "adaptalign/cascade.hpp"
#include "adaptalign/evaluator.hpp"
#include "adaptalign/shape_model.hpp"

#include <span>
#include <vector>

namespace adaptalign {

// Everything the tracker runs with.
struct ModelSet {
    ShapeModel shape;
    AppearanceModel appearance;
    std::vector<AdaptiveStage> stages;
    PerturbationModel perturbation;
    EvaluatorNet evaluator;

    bool operator==(const ModelSet&) const = default;
};

// Throws DimensionError when the components disagree on any size.
void check_consistency(const ModelSet& models);

struct TrainingConfig {
    RankRule shape_rank;
    AppearanceConfig appearance;
    CascadeTrainingConfig cascade;
    EvaluatorConfig evaluator;
    EvaluatorSampling evaluator_sampling;
    EvaluatorTrainingConfig evaluator_training;

    bool operator==(const TrainingConfig&) const = default;
};

struct TrainingReport {
    ExpertTrainingReport experts;
    CascadeTrainingReport cascade;
    EvaluatorTrainingReport evaluator;
    Eigen::Index shape_rank = 0;
    std::vector<Eigen::Index> appearance_ranks;
};

// Offline training of every component. The evaluator is trained on
// `evaluator_images` when given, otherwise on `images`.
ModelSet train_models(std::span<const AnnotatedImage> images, EyeCorners eyes, const TrainingConfig& config,
                      TrainingReport* report = nullptr, std::span<const AnnotatedImage> evaluator_images = {});

}  // namespace adaptalign
