#pragma once

#include "adaptalign/geometry.hpp"
#include "adaptalign/image.hpp"
#include "adaptalign/perturbation.hpp"
#include "adaptalign/shape_model.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace adaptalign {

struct AnnotatedImage;

// Where the landmark information enters the network.
enum class EvaluatorWiring : std::uint8_t {
    input_concat = 0,  // landmark map stacked with the image as a second input channel
    fc_concat = 1,     // landmark coordinates appended to the fully connected layer input
};

struct EvaluatorConfig {
    int side = 64;
    int dilation = 1;
    double margin = 0.2;  // crop margin around the shape's bounding box, per side
    int conv1_channels = 6;
    int conv2_channels = 8;
    int kernel = 3;
    int hidden = 32;
    EvaluatorWiring wiring = EvaluatorWiring::input_concat;

    bool operator==(const EvaluatorConfig&) const = default;
};

void validate(const EvaluatorConfig& config);

// Axis-aligned square crop: image point p maps to crop pixel (p - origin) / scale.
struct CropGeometry {
    Eigen::Vector2d origin = Eigen::Vector2d::Zero();
    double scale = 1.0;  // image pixels per crop pixel
};

CropGeometry crop_around(const Shape& shape, int side, double margin);

struct LandmarkMap {
    int side = 0;
    std::vector<float> grid;  // side * side, values in {0, 1}

    int nonzero() const;
};

LandmarkMap render_landmark_map(const Shape& shape, const CropGeometry& crop, int side, int dilation);

// Crop resampled to side x side and standardized to zero mean, unit variance.
ImagePlane normalized_crop(const ImagePlane& image, const CropGeometry& crop, int side);

struct EvaluatorInput {
    ImagePlane crop;
    LandmarkMap map;
    std::vector<double> coords;  // landmark positions in crop units, scaled to [0, 1]
};

EvaluatorInput make_evaluator_input(const ImagePlane& image, const Shape& shape, const EvaluatorConfig& config);

struct EvaluatorSample {
    EvaluatorInput input;
    int label = 1;  // +1 aligned, -1 misaligned
};

// Parameters of the network. Blocks are stored flat, row-major.
struct EvaluatorNet {
    EvaluatorConfig config;
    int landmarks = 0;
    std::vector<double> conv1_w, conv1_b;
    std::vector<double> conv2_w, conv2_b;
    std::vector<double> fc1_w, fc1_b;
    std::vector<double> fc2_w, fc2_b;

    int input_channels() const { return config.wiring == EvaluatorWiring::input_concat ? 2 : 1; }
    int conv_output_length() const;
    int fc1_input_length() const;

    // Mutable views over every parameter block, in a fixed order.
    std::array<std::vector<double>*, 8> blocks();
    std::array<const std::vector<double>*, 8> blocks() const;

    bool operator==(const EvaluatorNet&) const = default;
};

EvaluatorNet init_evaluator(const EvaluatorConfig& config, int landmarks, std::uint64_t seed);

struct Probabilities {
    double misaligned = 0.5;
    double aligned = 0.5;
};

Probabilities forward(const EvaluatorNet& net, const EvaluatorInput& input);

// Mean cross-entropy over `batch` and its gradient, one vector per parameter block.
double loss_and_gradient(const EvaluatorNet& net, std::span<const EvaluatorSample> batch,
                         std::vector<std::vector<double>>* gradient);

struct EvaluatorTrainingConfig {
    int epochs = 20;
    double learning_rate = 0.05;
    int batch_size = 16;
    std::uint64_t seed = 3;

    bool operator==(const EvaluatorTrainingConfig&) const = default;
};

struct EvaluatorTrainingReport {
    std::vector<double> epoch_loss;
    double training_accuracy = 0.0;
};

EvaluatorNet train_evaluator(std::span<const EvaluatorSample> samples, const EvaluatorConfig& config, int landmarks,
                             const EvaluatorTrainingConfig& training, EvaluatorTrainingReport* report = nullptr);

// Continues training an existing net in place.
void train_evaluator(EvaluatorNet& net, std::span<const EvaluatorSample> samples,
                     const EvaluatorTrainingConfig& training, EvaluatorTrainingReport* report = nullptr);

struct Verdict {
    bool aligned = false;
    double confidence = 0.0;  // P(aligned)
};

Verdict evaluate_fitting(const EvaluatorNet& net, const ImagePlane& image, const Shape& shape,
                         double threshold = 0.5);

// Sample generation: one positive per image (ground truth with jitter below
// tolerance / 2) and `negatives_per_image` perturbed shapes whose Norm RMSE is
// at least 2 x tolerance.
struct EvaluatorSampling {
    int negatives_per_image = 5;
    double tolerance = 0.05;           // Norm RMSE considered well fitted
    double inflation = 2.0;            // multiplier on the stage-0 standard deviations
    int occluded_per_image = 1;        // extra negatives with the face region blanked out
    std::uint64_t seed = 5;

    bool operator==(const EvaluatorSampling&) const = default;
};

std::vector<EvaluatorSample> make_evaluator_samples(std::span<const AnnotatedImage> images, const ShapeModel& shape,
                                                    const PerturbationModel& perturbation,
                                                    const EvaluatorConfig& config, const EvaluatorSampling& sampling);

}  // namespace adaptalign
