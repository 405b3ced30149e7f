#include "adaptalign/error.hpp"
#include "adaptalign/hog.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace adaptalign;

namespace {

ImagePlane noise_image(int w, int h, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    ImagePlane img(w, h);
    for (float& p : img.pixels()) p = u(rng);
    return img;
}

}  // namespace

TEST_CASE("layout and cell edges") {
    const HogLayout layout;
    CHECK(layout.length() == 54);
    CHECK(layout.cell_edge(0) == 0);
    CHECK(layout.cell_edge(1) == 4);
    CHECK(layout.cell_edge(2) == 7);
    CHECK(layout.cell_edge(3) == 11);
    CHECK_THROWS_AS(validate(HogLayout{11, 0, 6, 0.2}), ConfigError);
}

TEST_CASE("orientation votes split linearly between neighbouring bins") {
    // Horizontal ramp: gradient along +x, angle 0, all weight in bin 0.
    ImagePlane ramp(5, 5);
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 5; ++x) ramp.at(x, y) = 0.1f * x;
    }
    const OrientationVote v = orientation_vote(ramp, 2, 2, 6);
    CHECK(v.bin_lo == 0);
    CHECK(v.w_lo == doctest::Approx(0.1));
    CHECK(v.w_hi == doctest::Approx(0.0));
    // 45 degrees sits halfway between bins 1 (30) and 2 (60).
    ImagePlane diag(5, 5);
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 5; ++x) diag.at(x, y) = 0.1f * (x + y);
    }
    const OrientationVote d = orientation_vote(diag, 2, 2, 6);
    CHECK(d.bin_lo == 1);
    CHECK(d.bin_hi == 2);
    CHECK(d.w_lo == doctest::Approx(d.w_hi));
}

TEST_CASE("L2-Hys normalization") {
    std::vector<double> v{3.0, 0.1, 0.1, 0.1};
    normalize_l2hys(v.data(), 4, 0.2);
    double ss = 0.0;
    for (double x : v) ss += x * x;
    CHECK(std::sqrt(ss) <= 1.0);
    CHECK(std::sqrt(ss) > 0.99);
    std::vector<double> zero(4, 0.0);
    normalize_l2hys(zero.data(), 4, 0.2);
    for (double x : zero) CHECK(x == 0.0);
}

TEST_CASE("dense field agrees with direct extraction, including at the border") {
    const ImagePlane img = noise_image(40, 32, 9);
    const HogLayout layout;
    const HogField field(img, -6, -6, 52, 44, layout);
    for (const auto& [x, y] : std::vector<std::pair<int, int>>{{0, 0}, {5, 7}, {20, 16}, {39, 31}, {33, 2}}) {
        const Eigen::VectorXd direct = extract_features(img, Eigen::Vector2d(x, y), layout);
        const Eigen::VectorXd dense = field.descriptor(x, y);
        CHECK((direct - dense).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(field.descriptor(45, 0), DimensionError);
}

TEST_CASE("constant patch has an all-zero descriptor") {
    const ImagePlane flat(20, 20, 0.5f);
    const Eigen::VectorXd f = extract_features(flat, Eigen::Vector2d(10, 10), HogLayout{});
    CHECK(f.cwiseAbs().maxCoeff() == 0.0);
}
