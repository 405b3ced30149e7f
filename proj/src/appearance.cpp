#include "adaptalign/appearance.hpp"

#include "adaptalign/error.hpp"
#include "adaptalign/random.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace adaptalign {

namespace {

// Keeps responses strictly inside (0, 1).
constexpr double kResponseFloor = 1e-12;

struct LogisticFit {
    Eigen::VectorXd w;
    double c = 0.0;
};

double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + exp(z)) without overflow.
double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double weighted_logloss(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& wt,
                        const LogisticFit& fit) {
    const Eigen::VectorXd z = (X * fit.w).array() + fit.c;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        // -[y log s(z) + (1-y) log(1 - s(z))] = softplus(z) - y z
        loss += wt(i) * (softplus(z(i)) - y(i) * z(i));
    }
    return loss / wt.sum();
}

// Ridge-penalized weighted logistic regression by damped Newton steps.
LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& wt,
                         double ridge) {
    const Eigen::Index n = X.rows();
    const Eigen::Index f = X.cols();
    const double total = wt.sum();
    LogisticFit fit{Eigen::VectorXd::Zero(f), 0.0};
    auto objective = [&](const LogisticFit& cand) {
        return weighted_logloss(X, y, wt, cand) + 0.5 * ridge * cand.w.squaredNorm();
    };
    double current = objective(fit);

    for (int iter = 0; iter < 50; ++iter) {
        const Eigen::VectorXd z = (X * fit.w).array() + fit.c;
        Eigen::VectorXd resid(n);
        Eigen::VectorXd curv(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double p = sigmoid(z(i));
            resid(i) = wt(i) * (p - y(i)) / total;
            curv(i) = wt(i) * std::max(p * (1.0 - p), 1e-12) / total;
        }
        Eigen::VectorXd grad(f + 1);
        grad.head(f) = X.transpose() * resid + ridge * fit.w;
        grad(f) = resid.sum();

        Eigen::MatrixXd H(f + 1, f + 1);
        H.topLeftCorner(f, f).noalias() = X.transpose() * curv.asDiagonal() * X;
        H.topLeftCorner(f, f).diagonal().array() += ridge;
        const Eigen::VectorXd xc = X.transpose() * curv;
        H.topRightCorner(f, 1) = xc;
        H.bottomLeftCorner(1, f) = xc.transpose();
        H(f, f) = curv.sum() + 1e-10;

        const Eigen::VectorXd step = H.ldlt().solve(grad);
        if (!step.allFinite()) break;

        double t = 1.0;
        LogisticFit next;
        double value = current;
        for (int ls = 0; ls < 30; ++ls) {
            next.w = fit.w - t * step.head(f);
            next.c = fit.c - t * step(f);
            value = objective(next);
            if (value <= current) break;
            t *= 0.5;
        }
        if (!(value <= current)) break;
        const double moved = t * step.norm();
        fit = next;
        current = value;
        if (moved < 1e-9) break;
    }
    return fit;
}

struct LandmarkSamples {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    Eigen::VectorXd wt;
    std::vector<int> group;  // source image index
};

double choose_ridge(const LandmarkSamples& s, const AppearanceConfig& config, int n_images) {
    const int folds = std::min(config.cv_folds, n_images);
    const std::size_t grid = config.ridge_grid.size();
    std::vector<double> mean_loss(grid, 0.0);
    std::vector<double> stderr_loss(grid, 0.0);

    for (std::size_t g = 0; g < grid; ++g) {
        std::vector<double> losses;
        for (int k = 0; k < folds; ++k) {
            std::vector<Eigen::Index> train, test;
            for (Eigen::Index i = 0; i < s.X.rows(); ++i) {
                (s.group[static_cast<std::size_t>(i)] % folds == k ? test : train).push_back(i);
            }
            if (train.empty() || test.empty()) continue;
            const LogisticFit fit =
                fit_logistic(s.X(train, Eigen::all), s.y(train), s.wt(train), config.ridge_grid[g]);
            losses.push_back(weighted_logloss(s.X(test, Eigen::all), s.y(test), s.wt(test), fit));
        }
        if (losses.empty()) continue;
        const double mu = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
        double var = 0.0;
        for (double l : losses) var += (l - mu) * (l - mu);
        var /= std::max<double>(1.0, static_cast<double>(losses.size() - 1));
        mean_loss[g] = std::isfinite(mu) ? mu : std::numeric_limits<double>::infinity();
        stderr_loss[g] = std::sqrt(var / static_cast<double>(losses.size()));
    }

    // One-standard-error rule: strongest penalty within one SE of the best.
    const auto best = static_cast<std::size_t>(
        std::distance(mean_loss.begin(), std::min_element(mean_loss.begin(), mean_loss.end())));
    double chosen = config.ridge_grid[best];
    for (std::size_t g = 0; g < grid; ++g) {
        if (mean_loss[g] <= mean_loss[best] + stderr_loss[best] && config.ridge_grid[g] > chosen) {
            chosen = config.ridge_grid[g];
        }
    }
    return chosen;
}

}  // namespace

double PatchExpert::response(const double* features) const {
    double z = bias;
    for (Eigen::Index i = 0; i < weights.size(); ++i) z += weights(i) * features[i];
    const double r = sigmoid(-z);
    return std::clamp(r, kResponseFloor, 1.0 - kResponseFloor);
}

Eigen::VectorXd ResponseMap::flatten() const {
    Eigen::VectorXd out(grid.size());
    for (Eigen::Index r = 0; r < grid.rows(); ++r) out.segment(r * grid.cols(), grid.cols()) = grid.row(r).transpose();
    return out;
}

void validate(const AppearanceConfig& config) {
    validate(config.hog);
    if (config.support_side < 1 || config.support_side % 2 == 0) {
        throw ConfigError("support window side must be a positive odd number");
    }
    if (config.hog.patch_side % 2 == 0) throw ConfigError("patch side must be odd");
    if (config.cv_folds < 2) throw ConfigError("cross-validation needs at least two folds");
    if (config.ridge_grid.empty()) throw ConfigError("empty ridge grid");
    for (double r : config.ridge_grid) {
        if (!(r > 0.0)) throw ConfigError("ridge grid values must be positive");
    }
    if (config.negatives_per_image < 1) throw ConfigError("negatives_per_image must be >= 1");
}

ResponseMap response_map(const ImagePlane& image, const PatchExpert& expert, const Eigen::Vector2d& center,
                         const HogLayout& layout, int support_side) {
    if (!center.allFinite()) throw NumericError("non-finite response-map center");
    if (expert.weights.size() != layout.length()) throw DimensionError("patch expert does not match HoG layout");
    const int w = support_side / 2;
    const int ph = layout.patch_side / 2;
    const int cx = static_cast<int>(std::lround(center.x()));
    const int cy = static_cast<int>(std::lround(center.y()));
    const int reach = w + ph;
    const HogField field(image, cx - reach, cy - reach, 2 * reach + 1, 2 * reach + 1, layout);

    ResponseMap map;
    map.center = center;
    map.grid.resize(support_side, support_side);
    Eigen::VectorXd phi(layout.length());
    for (int dy = -w; dy <= w; ++dy) {
        for (int dx = -w; dx <= w; ++dx) {
            field.descriptor(cx + dx, cy + dy, phi.data());
            map.grid(dy + w, dx + w) = expert.response(phi.data());
        }
    }
    return map;
}

ImagePlane landmark_region(const ImagePlane& image, const Eigen::Vector2d& position, const Eigen::Matrix2d& linear,
                           const AppearanceConfig& config) {
    return sample_region(image, position, linear, config.region_half());
}

std::vector<PatchExpert> train_patch_experts(std::span<const AnnotatedImage> images, const ShapeModel& shape,
                                             const AppearanceConfig& config, ExpertTrainingReport* report) {
    validate(config);
    if (images.size() < 2) throw DimensionError("patch-expert training needs at least two images");
    const auto L = static_cast<std::size_t>(shape.landmarks());
    const int F = config.hog.length();
    const int per_image = 1 + config.negatives_per_image;
    const auto rows = static_cast<Eigen::Index>(images.size() * static_cast<std::size_t>(per_image));
    const int w = config.support_half();
    const int c = config.region_half();

    std::vector<LandmarkSamples> samples(L);
    for (auto& s : samples) {
        s.X.resize(rows, F);
        s.y.resize(rows);
        s.wt.resize(rows);
        s.group.resize(static_cast<std::size_t>(rows));
    }

    Rng rng = make_rng(config.seed, 0x9e37);
    std::uniform_int_distribution<int> offset(-w, w);
    const double neg_weight = 1.0;
    const double pos_weight = static_cast<double>(config.negatives_per_image);

    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& item = images[i];
        if (item.shape.size() != L) throw DimensionError("annotation landmark count mismatch");
        const Eigen::Matrix2d linear = shape.global(shape.params_from_shape(item.shape)).linear();
        for (std::size_t l = 0; l < L; ++l) {
            const ImagePlane region = landmark_region(item.image, item.shape.point(l), linear, config);
            const int reach = w + config.hog.patch_side / 2;
            const HogField field(region, c - reach, c - reach, 2 * reach + 1, 2 * reach + 1, config.hog);
            auto& s = samples[l];
            auto row = static_cast<Eigen::Index>(i) * per_image;
            Eigen::VectorXd phi(F);
            field.descriptor(c, c, phi.data());
            s.X.row(row) = phi.transpose();
            s.y(row) = 1.0;
            s.wt(row) = pos_weight;
            s.group[static_cast<std::size_t>(row)] = static_cast<int>(i);
            for (int k = 0; k < config.negatives_per_image; ++k) {
                int dx = 0, dy = 0;
                do {
                    dx = offset(rng);
                    dy = offset(rng);
                } while (std::hypot(dx, dy) < config.min_negative_displacement);
                ++row;
                field.descriptor(c + dx, c + dy, phi.data());
                s.X.row(row) = phi.transpose();
                s.y(row) = 0.0;
                s.wt(row) = neg_weight;
                s.group[static_cast<std::size_t>(row)] = static_cast<int>(i);
            }
        }
    }

    std::vector<PatchExpert> experts(L);
    if (report) report->chosen_ridge.assign(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        const double ridge = choose_ridge(samples[l], config, static_cast<int>(images.size()));
        const LogisticFit fit = fit_logistic(samples[l].X, samples[l].y, samples[l].wt, ridge);
        if (!fit.w.allFinite() || !std::isfinite(fit.c)) throw NumericError("patch-expert training diverged");
        // Stored with the opposite sign: response = 1 / (1 + exp(a . phi + b)).
        experts[l].weights = -fit.w;
        experts[l].bias = -fit.c;
        experts[l].landmark = static_cast<int>(l);
        if (report) report->chosen_ridge[l] = ridge;
    }
    return experts;
}

Eigen::MatrixXd landmark_responses(const ImagePlane& image, const Eigen::VectorXd& params, const ShapeModel& shape,
                                   std::span<const PatchExpert> experts, const AppearanceConfig& config) {
    const auto L = static_cast<std::size_t>(shape.landmarks());
    if (experts.size() != L) throw DimensionError("expert count does not match landmark count");
    const Shape inst = shape.instance(params);
    if (!inst.all_finite()) throw NumericError("non-finite shape instance");
    const Eigen::Matrix2d linear = shape.global(params).linear();
    const int c = config.region_half();
    const int side = config.support_side;

    Eigen::MatrixXd out(side * side, static_cast<Eigen::Index>(L));
    for (std::size_t l = 0; l < L; ++l) {
        const ImagePlane region = landmark_region(image, inst.point(l), linear, config);
        out.col(static_cast<Eigen::Index>(l)) =
            response_map(region, experts[l], Eigen::Vector2d(c, c), config.hog, side).flatten();
    }
    return out;
}

Eigen::Index AppearanceModel::feature_length() const {
    Eigen::Index d = 0;
    for (const auto& s : subspaces) d += s.rank();
    return d;
}

std::vector<PcaSubspace> build_appearance_subspaces(std::span<const AnnotatedImage> images,
                                                    const std::vector<std::vector<Eigen::VectorXd>>& perturbed,
                                                    const ShapeModel& shape, std::span<const PatchExpert> experts,
                                                    const AppearanceConfig& config) {
    if (perturbed.size() != images.size()) throw DimensionError("one perturbation list per image required");
    const auto L = static_cast<std::size_t>(shape.landmarks());
    Eigen::Index total = 0;
    for (const auto& list : perturbed) total += static_cast<Eigen::Index>(list.size());
    const Eigen::Index d = static_cast<Eigen::Index>(config.support_side) * config.support_side;
    if (total < 1) throw DimensionError("no perturbation samples");

    std::vector<Eigen::MatrixXd> tensors(L, Eigen::MatrixXd(d, total));
    Eigen::Index col = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        for (const auto& p : perturbed[i]) {
            const Eigen::MatrixXd maps = landmark_responses(images[i].image, p, shape, experts, config);
            for (std::size_t l = 0; l < L; ++l) tensors[l].col(col) = maps.col(static_cast<Eigen::Index>(l));
            ++col;
        }
    }

    std::vector<PcaSubspace> out;
    out.reserve(L);
    for (std::size_t l = 0; l < L; ++l) {
        if (total == 1) {
            PcaSubspace single;
            single.mean = tensors[l].col(0);
            single.basis.resize(d, 0);
            single.observation_weight = 1.0;
            out.push_back(std::move(single));
        } else {
            out.push_back(pca_fit(tensors[l], config.rank));
        }
    }
    return out;
}

std::vector<PcaSubspace> build_appearance_subspaces(std::span<const AnnotatedImage> images, const ShapeModel& shape,
                                                    std::span<const PatchExpert> experts,
                                                    const PerturbationModel& perturbation, int perturbations_per_image,
                                                    const AppearanceConfig& config) {
    std::vector<std::vector<Eigen::VectorXd>> perturbed;
    perturbed.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        perturbed.push_back(sample_perturbations(shape.params_from_shape(images[i].shape), perturbation, 0,
                                                 perturbations_per_image, config.seed + 1000 * (i + 1)));
    }
    return build_appearance_subspaces(images, perturbed, shape, experts, config);
}

Eigen::VectorXd project_responses(const Eigen::MatrixXd& responses, std::span<const PcaSubspace> subspaces) {
    if (static_cast<std::size_t>(responses.cols()) != subspaces.size()) {
        throw DimensionError("response/subspace count mismatch");
    }
    Eigen::Index total = 0;
    for (const auto& s : subspaces) total += s.rank();
    Eigen::VectorXd x(total);
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < subspaces.size(); ++l) {
        const auto& s = subspaces[l];
        x.segment(at, s.rank()) = project(s, responses.col(static_cast<Eigen::Index>(l)));
        at += s.rank();
    }
    return x;
}

Eigen::VectorXd appearance_vector(const ImagePlane& image, const Eigen::VectorXd& params, const ShapeModel& shape,
                                  const AppearanceModel& appearance) {
    const Eigen::MatrixXd maps = landmark_responses(image, params, shape, appearance.experts, appearance.config);
    return project_responses(maps, appearance.subspaces);
}

}  // namespace adaptalign
