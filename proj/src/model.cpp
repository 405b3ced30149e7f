#include "adaptalign/model.hpp"

#include "adaptalign/error.hpp"

#include <string>

namespace adaptalign {

void check_consistency(const ModelSet& m) {
    const Eigen::Index L = m.shape.landmarks();
    if (m.shape.subspace.dim() != 2 * L || L < 3) throw DimensionError("shape model is malformed");
    if (static_cast<Eigen::Index>(m.appearance.experts.size()) != L ||
        static_cast<Eigen::Index>(m.appearance.subspaces.size()) != L) {
        throw DimensionError("appearance model does not cover every landmark");
    }
    const HogLayout& hog = m.appearance.config.hog;
    const Eigen::Index window = static_cast<Eigen::Index>(m.appearance.config.support_side) *
                                m.appearance.config.support_side;
    for (Eigen::Index l = 0; l < L; ++l) {
        const auto& e = m.appearance.experts[static_cast<std::size_t>(l)];
        if (e.weights.size() != hog.length() || e.landmark != l) {
            throw DimensionError("patch expert " + std::to_string(l) + " does not match the feature layout");
        }
        const auto& s = m.appearance.subspaces[static_cast<std::size_t>(l)];
        if (s.dim() != window || s.basis.rows() != window || s.singular_values.size() != s.rank()) {
            throw DimensionError("appearance subspace " + std::to_string(l) + " has the wrong dimension");
        }
    }
    const Eigen::Index D = m.appearance.feature_length();
    const Eigen::Index P = m.shape.num_params();
    if (m.stages.empty()) throw DimensionError("cascade has no stages");
    if (m.perturbation.stages() != m.stages.size()) throw DimensionError("perturbation model / cascade length mismatch");
    for (std::size_t k = 0; k < m.stages.size(); ++k) {
        const auto& st = m.stages[k];
        if (st.stage.regressor.rows() != D + 1 || st.stage.regressor.cols() != P ||
            st.precision.rows() != D + 1 || st.precision.cols() != D + 1 ||
            m.perturbation.variances[k].size() != P) {
            throw DimensionError("cascade stage " + std::to_string(k) + " does not match the representation");
        }
    }
    if (m.evaluator.landmarks != L) throw DimensionError("evaluator landmark count mismatch");
    const auto& c = m.evaluator.config;
    const int k2 = c.kernel * c.kernel;
    const auto expect = [](const std::vector<double>& v, long n, const char* what) {
        if (static_cast<long>(v.size()) != n) throw DimensionError(std::string("evaluator block ") + what + " has the wrong size");
    };
    expect(m.evaluator.conv1_w, static_cast<long>(c.conv1_channels) * m.evaluator.input_channels() * k2, "conv1_w");
    expect(m.evaluator.conv1_b, c.conv1_channels, "conv1_b");
    expect(m.evaluator.conv2_w, static_cast<long>(c.conv2_channels) * c.conv1_channels * k2, "conv2_w");
    expect(m.evaluator.conv2_b, c.conv2_channels, "conv2_b");
    expect(m.evaluator.fc1_w, static_cast<long>(c.hidden) * m.evaluator.fc1_input_length(), "fc1_w");
    expect(m.evaluator.fc1_b, c.hidden, "fc1_b");
    expect(m.evaluator.fc2_w, 2L * c.hidden, "fc2_w");
    expect(m.evaluator.fc2_b, 2, "fc2_b");
}

ModelSet train_models(std::span<const AnnotatedImage> images, EyeCorners eyes, const TrainingConfig& config,
                      TrainingReport* report, std::span<const AnnotatedImage> evaluator_images) {
    if (images.size() < 2) throw DimensionError("training needs at least two annotated images");
    std::vector<Shape> shapes;
    shapes.reserve(images.size());
    for (const auto& i : images) shapes.push_back(i.shape);

    ModelSet m;
    m.shape = build_shape_model(shapes, eyes, config.shape_rank);
    m.appearance.config = config.appearance;
    m.appearance.experts =
        train_patch_experts(images, m.shape, config.appearance, report ? &report->experts : nullptr);

    // The appearance tensor uses the same stage-0 perturbations as the cascade.
    PerturbationModel stage0;
    stage0.variances.push_back(initial_variances(m.shape, config.cascade.rigid));
    std::vector<std::vector<Eigen::VectorXd>> perturbed;
    perturbed.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        perturbed.push_back(initial_samples(m.shape.params_from_shape(images[i].shape), stage0,
                                            config.cascade.samples_per_image, config.cascade.seed, i));
    }
    m.appearance.subspaces =
        build_appearance_subspaces(images, perturbed, m.shape, m.appearance.experts, config.appearance);

    TrainedCascade cascade =
        train_cascade(images, m.shape, m.appearance, config.cascade, report ? &report->cascade : nullptr);
    m.stages = std::move(cascade.stages);
    m.perturbation = std::move(cascade.perturbation);

    const auto eval_source = evaluator_images.empty() ? images : evaluator_images;
    const std::vector<EvaluatorSample> samples =
        make_evaluator_samples(eval_source, m.shape, m.perturbation, config.evaluator, config.evaluator_sampling);
    m.evaluator = train_evaluator(samples, config.evaluator, static_cast<int>(m.shape.landmarks()),
                                  config.evaluator_training, report ? &report->evaluator : nullptr);

    if (report) {
        report->shape_rank = m.shape.subspace.rank();
        report->appearance_ranks.clear();
        for (const auto& s : m.appearance.subspaces) report->appearance_ranks.push_back(s.rank());
    }
    check_consistency(m);
    return m;
}

}  // namespace adaptalign
