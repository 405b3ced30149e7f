#include "adaptalign/tracker.hpp"

#include "adaptalign/error.hpp"
#include "adaptalign/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <atomic>
#include <chrono>

namespace adaptalign {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

bool updates_representation(AdaptMode m) { return m == AdaptMode::representation || m == AdaptMode::joint; }
bool updates_fitting(AdaptMode m) { return m == AdaptMode::fitting || m == AdaptMode::joint; }

// Nearest orthogonal matrix to old^T new, mapping new coordinates to old ones.
Eigen::MatrixXd basis_rotation(const Eigen::MatrixXd& old_basis, const Eigen::MatrixXd& new_basis) {
    const Eigen::MatrixXd overlap = old_basis.transpose() * new_basis;
    if (overlap.size() == 0) return overlap;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(overlap, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

// Re-solves a stage after the features change as x_new = A x_old on every row
// absorbed so far. The Gram matrix is recovered from the cached precision, so
// no stored data is needed. Rows of A for directions outside the old span are
// small, and those directions start from the bare ridge prior.
AdaptiveStage reexpress_stage(const AdaptiveStage& st, const Eigen::MatrixXd& A) {
    const Eigen::Index n = st.precision.rows();
    Eigen::VectorXd ridge = Eigen::VectorXd::Constant(n, st.stage.ridge);
    ridge(n - 1) = 0.0;
    const Eigen::LLT<Eigen::MatrixXd> p_llt(st.precision);
    if (p_llt.info() != Eigen::Success) throw NumericError("cached precision is not positive definite");
    const Eigen::MatrixXd gram = p_llt.solve(Eigen::MatrixXd::Identity(n, n));
    Eigen::MatrixXd data_gram = gram;
    data_gram.diagonal() -= ridge;
    Eigen::MatrixXd next_gram = A * data_gram * A.transpose();
    next_gram = 0.5 * (next_gram + next_gram.transpose()).eval();
    next_gram.diagonal() += ridge;
    const Eigen::LLT<Eigen::MatrixXd> g_llt(next_gram);
    if (g_llt.info() != Eigen::Success) throw NumericError("re-expressed Gram matrix is not positive definite");
    AdaptiveStage out = st;
    out.precision = g_llt.solve(Eigen::MatrixXd::Identity(n, n));
    out.precision = 0.5 * (out.precision + out.precision.transpose()).eval();
    out.stage.regressor = g_llt.solve(A * (gram * st.stage.regressor));
    return out;
}

// Rank-preserving update; returns the old subspace when the rank would change.
PcaSubspace fixed_rank_update(const PcaSubspace& old, const Eigen::MatrixXd& batch, double forgetting, bool* ok) {
    SklOptions opts;
    opts.forgetting = forgetting;
    opts.rank.energy = 1.0;
    opts.rank.max_rank = old.rank();
    PcaSubspace next = skl_update(old, batch, opts);
    if (next.rank() != old.rank()) {
        *ok = false;
        return old;
    }
    return next;
}

}  // namespace

void validate(const TrackerConfig& c) {
    if (c.buffer_capacity < 1) throw ConfigError("buffer capacity must be positive");
    if (c.eval_stride < 1) throw ConfigError("evaluation stride must be positive");
    if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
    if (c.appearance_samples < 1 || c.regression_samples < 1) throw ConfigError("sample counts must be positive");
    if (!(c.forgetting > 0.0 && c.forgetting <= 1.0)) throw ConfigError("forgetting factor must lie in (0, 1]");
    if (c.threads < 1) throw ConfigError("thread count must be positive");
    if (!(c.row_weight > 0.0)) throw ConfigError("row weight must be positive");
}

bool AdaptOutcome::partial() const {
    if (!representation_accepted) return true;
    for (bool a : stages_accepted) {
        if (!a) return true;
    }
    return false;
}

AdaptOutcome adapt_models(const ModelSet& models, std::span<const BufferedFrame> buffer, const TrackerConfig& config,
                          std::uint64_t seed) {
    validate(config);
    if (buffer.empty()) throw DimensionError("adaptation needs a non-empty buffer");

    AdaptOutcome out{models, true, std::vector<bool>(models.stages.size(), true)};
    ModelSet& m = out.models;
    std::vector<Eigen::VectorXd> params;
    params.reserve(buffer.size());
    for (const auto& f : buffer) params.push_back(f.params);

    if (updates_representation(config.adapt)) {
        // Appearance: response maps around the accepted fits, drawn like the offline tensor.
        const auto L = static_cast<std::size_t>(m.shape.landmarks());
        const int k = config.appearance_samples;
        const Eigen::Index window = m.appearance.subspaces.front().dim();
        const auto cols = static_cast<Eigen::Index>(buffer.size()) * k;
        std::vector<Eigen::MatrixXd> batches(L, Eigen::MatrixXd(window, cols));
        parallel_for(buffer.size(), config.threads, [&](std::size_t i) {
            const auto draws = sample_perturbations(params[i], m.perturbation, 0, k, seed + i);
            for (int j = 0; j < k; ++j) {
                const Eigen::MatrixXd r =
                    landmark_responses(buffer[i].image, draws[static_cast<std::size_t>(j)], m.shape,
                                       m.appearance.experts, m.appearance.config);
                const auto col = static_cast<Eigen::Index>(i) * k + j;
                for (std::size_t l = 0; l < L; ++l) batches[l].col(col) = r.col(static_cast<Eigen::Index>(l));
            }
        });

        // Old features map to new ones blockwise per landmark: x_new = M x_old + c,
        // with M the basis overlap and c the mean shift seen in the new basis
        // (left out when re-centering).
        const Eigen::Index D = m.appearance.feature_length();
        Eigen::MatrixXd A = Eigen::MatrixXd::Identity(D + 1, D + 1);
        Eigen::Index offset = 0;
        for (std::size_t l = 0; l < L; ++l) {
            const PcaSubspace& old = models.appearance.subspaces[l];
            bool ok = true;
            PcaSubspace next = fixed_rank_update(old, batches[l], config.forgetting, &ok);
            if (!ok) out.representation_accepted = false;
            const Eigen::Index r = old.rank();
            if (ok && r > 0) {
                A.block(offset, offset, r, r) = next.basis.transpose() * old.basis;
                if (!config.recenter) A.block(offset, D, r, 1) = next.basis.transpose() * (old.mean - next.mean);
            }
            m.appearance.subspaces[l] = std::move(next);
            offset += r;
        }
        for (auto& st : m.stages) st = reexpress_stage(st, A);

        if (config.update_shape && m.shape.subspace.rank() > 0) {
            Eigen::MatrixXd shapes(m.shape.subspace.dim(), static_cast<Eigen::Index>(params.size()));
            for (std::size_t i = 0; i < params.size(); ++i) {
                shapes.col(static_cast<Eigen::Index>(i)) = m.shape.normalized_instance(params[i]).to_vector();
            }
            bool ok = true;
            const ShapeModel old_shape = m.shape;
            PcaSubspace next = fixed_rank_update(old_shape.subspace, shapes, config.forgetting, &ok);
            if (!ok) {
                out.representation_accepted = false;
            } else {
                const Eigen::MatrixXd Q = basis_rotation(old_shape.subspace.basis, next.basis);
                Eigen::MatrixXd N = Eigen::MatrixXd::Identity(m.shape.num_params(), m.shape.num_params());
                N.bottomRightCorner(Q.rows(), Q.cols()) = Q;
                m.shape.subspace = std::move(next);
                // Parameter increments map as dp_new = N^T dp_old.
                for (auto& st : m.stages) st.stage.regressor = st.stage.regressor * N;
                for (auto& v : m.perturbation.variances) {
                    const Eigen::MatrixXd cov = N.transpose() * v.asDiagonal() * N;
                    v = cov.diagonal();
                }
                for (std::size_t i = 0; i < params.size(); ++i) {
                    params[i] = m.shape.params_from_shape(old_shape.instance(params[i]));
                }
            }
        }
    }

    if (updates_fitting(config.adapt)) {
        // Appearance vectors are recomputed inside under the updated subspaces.
        std::vector<AdaptFrame> frames;
        frames.reserve(buffer.size());
        for (std::size_t i = 0; i < buffer.size(); ++i) frames.push_back({&buffer[i].image, params[i]});
        AdaptAllResult r = adapt_all(m.stages, m.perturbation, frames, m.shape, m.appearance,
                                     config.regression_samples, seed ^ 0x9e3779b97f4a7c15ULL, config.threads,
                                     config.row_weight);
        m.stages = std::move(r.stages);
        out.stages_accepted = std::move(r.accepted);
    }

    check_consistency(m);
    return out;
}

Tracker::Tracker(std::shared_ptr<const ModelSet> models, TrackerConfig config)
    : models_(std::move(models)), config_(config) {
    if (!models_) throw ConfigError("tracker needs a model set");
    validate(config_);
    check_consistency(*models_);
}

std::shared_ptr<const ModelSet> Tracker::models() const { return std::atomic_load(&models_); }

void Tracker::swap_models(std::shared_ptr<const ModelSet> next) { std::atomic_store(&models_, std::move(next)); }

FrameResult Tracker::process_frame(const ImagePlane& frame, const std::optional<BoundingBox>& init_box,
                                   const Shape* truth) {
    const std::shared_ptr<const ModelSet> models = this->models();
    const ModelSet& m = *models;
    FrameResult res;
    res.frame = frame_counter_++;

    Eigen::VectorXd init;
    if (status_ == TrackStatus::tracking && previous_) {
        init = *previous_;
    } else if (init_box) {
        init = m.shape.params_for_box(*init_box);
        res.reinitialized = true;
    } else {
        res.skipped = true;
        status_ = TrackStatus::lost;
        return res;
    }

    auto t0 = Clock::now();
    Eigen::VectorXd params;
    bool finite = true;
    try {
        params = fit(frame, init, m.stages, m.shape, m.appearance).params;
    } catch (const NumericError&) {
        finite = false;
        params = init;
    }
    res.shape = m.shape.instance(params);
    res.ms_fit = elapsed_ms(t0);
    if (truth) res.rmse = norm_rmse(res.shape, *truth, m.shape.eyes);

    t0 = Clock::now();
    res.evaluated = !finite || res.reinitialized || res.frame % config_.eval_stride == 0;
    if (!finite) {
        res.aligned = false;
        res.confidence = 0.0;
    } else if (res.evaluated) {
        const Verdict v = evaluate_fitting(m.evaluator, frame, res.shape, config_.threshold);
        res.aligned = v.aligned;
        res.confidence = v.confidence;
    } else {
        // Between evaluations the track is trusted but never buffered.
        res.aligned = true;
        res.confidence = config_.threshold;
    }
    res.ms_eval = elapsed_ms(t0);

    if (!res.aligned) {
        status_ = TrackStatus::lost;
        previous_.reset();
        return res;
    }
    status_ = TrackStatus::tracking;
    previous_ = params;

    if (config_.adapt == AdaptMode::none || !res.evaluated) return res;
    buffer_.push_back({res.frame, frame, params});
    if (static_cast<int>(buffer_.size()) < config_.buffer_capacity) return res;

    t0 = Clock::now();
    AdaptOutcome outcome = adapt_models(m, buffer_, config_, config_.seed + 1000003ULL * static_cast<std::uint64_t>(adaptations_));
    buffer_.clear();
    // Re-express the carried parameters in the updated shape model.
    if (!(outcome.models.shape == m.shape)) previous_ = outcome.models.shape.params_from_shape(res.shape);
    res.adapted = true;
    res.adapt_partial = outcome.partial();
    swap_models(std::make_shared<const ModelSet>(std::move(outcome.models)));
    ++adaptations_;
    res.ms_adapt = elapsed_ms(t0);
    return res;
}

}  // namespace adaptalign
