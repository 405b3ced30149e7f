#pragma once

#include "adaptalign/model.hpp"
#include "adaptalign/random.hpp"
#include "adaptalign/synth.hpp"

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

namespace testing {

using namespace adaptalign;

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = g(rng);
    }
    return m;
}

inline Eigen::MatrixXd random_orthonormal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(rows, cols, rng));
    return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

inline PcaSubspace random_subspace(Eigen::Index dim, Eigen::Index rank, Rng& rng) {
    PcaSubspace s;
    s.mean = random_matrix(dim, 1, rng).col(0);
    s.basis = random_orthonormal(dim, rank, rng);
    s.singular_values = Eigen::VectorXd::LinSpaced(rank, 2.0 * rank, 1.0);
    s.observation_weight = 50.0;
    return s;
}

// Worst relative error between analytic and central-difference gradients over
// `probes` random coordinates of each block. Returns one value per block.
inline std::vector<double> gradient_check(const EvaluatorNet& net, std::span<const EvaluatorSample> batch, int probes,
                                          std::uint64_t seed) {
    std::vector<std::vector<double>> grad;
    loss_and_gradient(net, batch, &grad);
    Rng rng = make_rng(seed, 0);
    EvaluatorNet probe = net;
    auto blocks = probe.blocks();
    std::vector<double> worst;
    const double h = 1e-6;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        std::vector<double>& w = *blocks[b];
        std::uniform_int_distribution<std::size_t> pick(0, w.size() - 1);
        double err = 0.0;
        for (int k = 0; k < probes; ++k) {
            const std::size_t i = pick(rng);
            const double saved = w[i];
            w[i] = saved + h;
            const double up = loss_and_gradient(probe, batch, nullptr);
            w[i] = saved - h;
            const double down = loss_and_gradient(probe, batch, nullptr);
            w[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grad[b][i];
            const double scale = std::max(std::abs(numeric) + std::abs(analytic), 1e-7);
            err = std::max(err, std::abs(numeric - analytic) / scale);
        }
        worst.push_back(err);
    }
    return worst;
}

// Dimensionally consistent model set with random contents; fast to build.
inline ModelSet toy_models(std::uint64_t seed = 1) {
    Rng rng = make_rng(seed, 0);
    ModelSet m;
    const int L = 5;
    m.shape.eyes = {0, 1};
    m.shape.subspace = random_subspace(2 * L, 2, rng);
    m.appearance.config.rank.max_rank = 3;
    const auto window = static_cast<Eigen::Index>(m.appearance.config.support_side) * m.appearance.config.support_side;
    for (int l = 0; l < L; ++l) {
        PatchExpert e;
        e.landmark = l;
        e.weights = random_matrix(m.appearance.config.hog.length(), 1, rng).col(0);
        e.bias = 0.25 * l;
        m.appearance.experts.push_back(e);
        m.appearance.subspaces.push_back(random_subspace(window, 3, rng));
    }
    const Eigen::Index D = m.appearance.feature_length();
    const Eigen::Index P = m.shape.num_params();
    for (int k = 0; k < 2; ++k) {
        const Eigen::MatrixXd X = random_matrix(40, D, rng);
        AdaptiveStage st;
        st.stage.regressor = random_matrix(D + 1, P, rng);
        st.stage.ridge = 0.5;
        Eigen::MatrixXd Xa(40, D + 1);
        Xa << X, Eigen::VectorXd::Ones(40);
        Eigen::MatrixXd gram = Xa.transpose() * Xa;
        gram.diagonal().head(D).array() += st.stage.ridge;
        st.precision = gram.inverse();
        m.stages.push_back(st);
        m.perturbation.variances.push_back(Eigen::VectorXd::LinSpaced(P, 0.1, 2.0));
    }
    m.evaluator = init_evaluator(m.evaluator.config, L, seed);
    return m;
}

// Small but genuinely trained model set on synthetic faces, shared across tests.
struct TrainedFixture {
    std::vector<AnnotatedImage> train;
    ModelSet models;
};

inline const TrainedFixture& trained_fixture() {
    static const TrainedFixture fx = [] {
        TrainedFixture f;
        SynthConfig sc;
        sc.seed = 101;
        sc.scale_amplitude = 0.1;
        sc.rotation_amplitude_deg = 10;
        sc.translation_amplitude = 8;
        f.train = generate_dataset(sc, 40);
        TrainingConfig tc;
        tc.appearance.rank.max_rank = 8;
        tc.appearance.ridge_grid = {1e-2, 1e-1};
        tc.appearance.cv_folds = 3;
        tc.cascade.samples_per_image = 6;
        tc.evaluator_training.epochs = 8;
        tc.evaluator_sampling.negatives_per_image = 3;
        f.models = train_models(f.train, kSynthEyes, tc);
        return f;
    }();
    return fx;
}

}  // namespace testing
