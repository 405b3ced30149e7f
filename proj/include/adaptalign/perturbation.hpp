#pragma once

#include "adaptalign/random.hpp"
#include "adaptalign/shape_model.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace adaptalign {

// Rigid perturbation standard deviations used for stage-0 training samples.
struct RigidPerturbation {
    double scale = 0.1;
    double rotation_deg = 10.0;
    double translation = 10.0;
    // Multiplier on the per-mode shape standard deviation for q perturbations.
    double nonrigid = 1.0;

    bool operator==(const RigidPerturbation&) const = default;
};

// Per-stage diagonal covariance over shape parameters.
struct PerturbationModel {
    std::vector<Eigen::VectorXd> variances;  // one entry per cascade stage

    std::size_t stages() const { return variances.size(); }
    bool operator==(const PerturbationModel&) const = default;
};

// Diagonal variances of the rigid + nonrigid stage-0 distribution.
Eigen::VectorXd initial_variances(const ShapeModel& shape, const RigidPerturbation& rigid);

std::vector<Eigen::VectorXd> sample_perturbations(const Eigen::VectorXd& truth, const PerturbationModel& model,
                                                  std::size_t stage, int count, std::uint64_t seed);

// Same draw from an explicit diagonal variance, consuming `rng`.
Eigen::VectorXd sample_around(const Eigen::VectorXd& truth, const Eigen::VectorXd& variances, Rng& rng);

}  // namespace adaptalign
