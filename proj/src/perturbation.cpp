#include "adaptalign/perturbation.hpp"

#include "adaptalign/error.hpp"

#include <cmath>

namespace adaptalign {

Eigen::VectorXd initial_variances(const ShapeModel& shape, const RigidPerturbation& rigid) {
    Eigen::VectorXd var(shape.num_params());
    const double rot = rigid.rotation_deg * M_PI / 180.0;
    var(0) = rigid.scale * rigid.scale;
    var(1) = rot * rot;
    var(2) = var(3) = rigid.translation * rigid.translation;
    const auto& sub = shape.subspace;
    const double denom = std::max<double>(1.0, sub.observation_weight - 1.0);
    for (Eigen::Index j = 0; j < sub.rank(); ++j) {
        const double sd = rigid.nonrigid * sub.singular_values(j) / std::sqrt(denom);
        var(kGlobalParams + j) = sd * sd;
    }
    return var;
}

Eigen::VectorXd sample_around(const Eigen::VectorXd& truth, const Eigen::VectorXd& variances, Rng& rng) {
    if (truth.size() != variances.size()) throw DimensionError("perturbation variance size mismatch");
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd out = truth;
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
        const double z = gauss(rng);
        if (variances(i) > 0.0) out(i) += std::sqrt(variances(i)) * z;
    }
    return out;
}

std::vector<Eigen::VectorXd> sample_perturbations(const Eigen::VectorXd& truth, const PerturbationModel& model,
                                                  std::size_t stage, int count, std::uint64_t seed) {
    if (stage >= model.stages()) throw DimensionError("perturbation stage out of range");
    Rng rng = make_rng(seed, stage);
    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i) out.push_back(sample_around(truth, model.variances[stage], rng));
    return out;
}

}  // namespace adaptalign
