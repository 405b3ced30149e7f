#include "adaptalign/error.hpp"
#include "adaptalign/synth.hpp"

#include <doctest.h>

#include <cmath>

using namespace adaptalign;

TEST_CASE("sequences are deterministic in the seed") {
    SynthConfig c;
    c.frames = 12;
    c.seed = 4;
    const auto a = generate_sequence(c);
    const auto b = generate_sequence(c);
    REQUIRE(a.size() == 12);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image == b[i].image);
        CHECK(a[i].shape == b[i].shape);
    }
    c.seed = 5;
    CHECK_FALSE(generate_sequence(c)[0].image == a[0].image);
}

TEST_CASE("zero motion keeps the shape fixed") {
    SynthConfig c;
    c.frames = 8;
    c.scale_amplitude = 0;
    c.rotation_amplitude_deg = 0;
    c.translation_amplitude = 0;
    c.deformation_amplitude = 0;
    const auto seq = generate_sequence(c);
    for (const auto& f : seq) CHECK(f.shape == seq[0].shape);
}

TEST_CASE("translation amplitude is the peak of a full-cycle sinusoid") {
    SynthConfig c;
    c.frames = 200;
    c.scale_amplitude = 0;
    c.rotation_amplitude_deg = 0;
    c.deformation_amplitude = 0;
    c.translation_amplitude = 8;
    const auto seq = generate_sequence(c);
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& f : seq) mean += f.shape.centroid();
    mean /= static_cast<double>(seq.size());
    Eigen::Vector2d var = Eigen::Vector2d::Zero();
    for (const auto& f : seq) var += (f.shape.centroid() - mean).cwiseAbs2();
    var /= static_cast<double>(seq.size());
    for (int k = 0; k < 2; ++k) CHECK(std::sqrt(var(k)) * std::sqrt(2.0) == doctest::Approx(8.0).epsilon(0.05));
}

TEST_CASE("drift ramps the texture weight and bursts occlude whole frames") {
    SynthConfig c;
    c.frames = 30;
    c.drift_rate = 0.05;
    c.drift_start = 0.1;
    c.burst_start = 10;
    c.burst_length = 5;
    const auto seq = generate_sequence(c);
    for (int t = 0; t < 30; ++t) {
        CHECK(seq[t].texture_weight == doctest::Approx(std::min(1.0, 0.1 + 0.05 * t)));
        CHECK(seq[t].fully_occluded == (t >= 10 && t < 15));
    }
}

TEST_CASE("datasets honour the texture range and reject bad configs") {
    SynthConfig c;
    const auto d = generate_dataset(c, 4, {0.0, 0.0});
    CHECK(d.size() == 4);
    CHECK(d[0].shape.size() == 10);
    CHECK_THROWS_AS(generate_dataset(c, 2, {0.6, 0.2}), ConfigError);
    c.landmarks = 2;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = {};
    c.scale_amplitude = 0.5;
    CHECK_THROWS_AS(validate(c), ConfigError);
    CHECK(synth_template(10).size() == 10);
}
