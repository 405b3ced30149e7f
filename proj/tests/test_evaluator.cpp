#include "adaptalign/error.hpp"
#include "adaptalign/evaluator.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace adaptalign;

namespace {

EvaluatorConfig small_config(EvaluatorWiring wiring) {
    EvaluatorConfig c;
    c.side = 16;
    c.conv1_channels = 2;
    c.conv2_channels = 3;
    c.hidden = 5;
    c.wiring = wiring;
    return c;
}

std::vector<EvaluatorSample> small_batch(const EvaluatorConfig& config) {
    SynthConfig sc;
    sc.seed = 31;
    const auto imgs = generate_dataset(sc, 3);
    std::vector<EvaluatorSample> out;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        Shape s = imgs[i].shape;
        if (i == 1) s.points().array() += 6.0;
        out.push_back({make_evaluator_input(imgs[i].image, s, config), i == 1 ? -1 : 1});
    }
    return out;
}

}  // namespace

TEST_CASE("analytic gradient matches finite differences for both wirings") {
    for (auto wiring : {EvaluatorWiring::input_concat, EvaluatorWiring::fc_concat}) {
        CAPTURE(static_cast<int>(wiring));
        const EvaluatorConfig config = small_config(wiring);
        const EvaluatorNet net = init_evaluator(config, 10, 4);
        const auto batch = small_batch(config);
        const auto errors = testing::gradient_check(net, batch, 12, 8);
        REQUIRE(errors.size() == 8);
        for (double e : errors) CHECK(e < 1e-4);
    }
}

TEST_CASE("forward yields a probability pair") {
    const EvaluatorConfig config = small_config(EvaluatorWiring::input_concat);
    const EvaluatorNet net = init_evaluator(config, 10, 5);
    const auto batch = small_batch(config);
    for (const auto& s : batch) {
        const Probabilities p = forward(net, s.input);
        CHECK(p.aligned >= 0.0);
        CHECK(p.misaligned >= 0.0);
        CHECK(p.aligned + p.misaligned == doctest::Approx(1.0));
    }
}

TEST_CASE("a small learning rate step lowers the loss") {
    const EvaluatorConfig config = small_config(EvaluatorWiring::fc_concat);
    EvaluatorNet net = init_evaluator(config, 10, 6);
    const auto batch = small_batch(config);
    std::vector<std::vector<double>> grad;
    const double before = loss_and_gradient(net, batch, &grad);
    auto blocks = net.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t i = 0; i < blocks[b]->size(); ++i) (*blocks[b])[i] -= 1e-4 * grad[b][i];
    }
    CHECK(loss_and_gradient(net, batch, nullptr) < before);
}

TEST_CASE("threshold extremes") {
    const auto& fx = testing::trained_fixture();
    const auto& img = fx.train[0];
    CHECK(evaluate_fitting(fx.models.evaluator, img.image, img.shape, 0.0).aligned);
    CHECK_FALSE(evaluate_fitting(fx.models.evaluator, img.image, img.shape, 1.0 + 1e-12).aligned);
}

TEST_CASE("landmark map marks a 3x3 block per landmark at dilation 1") {
    Shape one(1);
    one.set_point(0, {10.0, 10.0});
    CropGeometry crop;
    const LandmarkMap map = render_landmark_map(one, crop, 32, 1);
    CHECK(map.nonzero() == 9);
    CHECK(map.grid[10 * 32 + 10] == 1.0f);
    CHECK(render_landmark_map(one, crop, 32, 0).nonzero() == 1);
}

TEST_CASE("normalized crop is standardized") {
    SynthConfig sc;
    const auto imgs = generate_dataset(sc, 1);
    const EvaluatorConfig config;
    const EvaluatorInput in = make_evaluator_input(imgs[0].image, imgs[0].shape, config);
    double sum = 0.0, sq = 0.0;
    for (float v : in.crop.pixels()) {
        sum += v;
        sq += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(in.crop.pixels().size());
    CHECK(sum / n == doctest::Approx(0.0).epsilon(1e-4));
    // The variance stabilizer keeps low-contrast crops finite, so this is slightly below 1.
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(in.coords.size() == 20);
}

TEST_CASE("invalid evaluator configs are rejected") {
    EvaluatorConfig c;
    c.side = 18;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = {};
    c.kernel = 4;
    CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("trained evaluator separates aligned and displaced fits") {
    const auto& fx = testing::trained_fixture();
    SynthConfig sc;
    sc.seed = 808;
    sc.scale_amplitude = 0.1;
    sc.rotation_amplitude_deg = 10;
    sc.translation_amplitude = 8;
    const auto test = generate_dataset(sc, 20);
    EvaluatorSampling sampling;
    sampling.negatives_per_image = 1;
    sampling.seed = 99;
    const auto samples = make_evaluator_samples(test, fx.models.shape, fx.models.perturbation,
                                                fx.models.evaluator.config, sampling);
    int correct = 0;
    for (const auto& s : samples) {
        const bool aligned = forward(fx.models.evaluator, s.input).aligned >= 0.5;
        correct += aligned == (s.label == 1);
    }
    CHECK(correct >= static_cast<int>(0.8 * static_cast<double>(samples.size())));
}
