#pragma once

#include "adaptalign/model.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace adaptalign {

enum class AdaptMode : std::uint8_t {
    none = 0,
    representation = 1,  // subspaces only
    fitting = 2,         // cascade regressors only
    joint = 3,
};

struct TrackerConfig {
    int buffer_capacity = 10;
    int eval_stride = 1;  // evaluate every n-th frame; re-initialized frames are always evaluated
    double threshold = 0.5;
    AdaptMode adapt = AdaptMode::joint;
    int appearance_samples = 3;   // response-map observations per buffered frame
    int regression_samples = 40;  // regression rows per buffered frame and stage
    double row_weight = 1.0;      // weight of an online regression row relative to an offline one
    double forgetting = 1.0;      // subspace forgetting factor
    // Keep regressors relative to the updated appearance means instead of
    // compensating the mean shift, so features re-center on the current appearance.
    bool recenter = true;
    bool update_shape = true;
    std::uint64_t seed = 17;
    int threads = 1;

    bool operator==(const TrackerConfig&) const = default;
};

void validate(const TrackerConfig& config);

enum class TrackStatus : std::uint8_t { tracking, lost };

struct FrameResult {
    int frame = 0;
    Shape shape;
    std::optional<double> rmse;
    bool aligned = false;
    double confidence = 0.0;
    bool evaluated = false;
    bool reinitialized = false;
    bool skipped = false;  // lost and no initialization box available
    bool adapted = false;
    bool adapt_partial = false;  // some component rejected its update
    double ms_fit = 0.0;
    double ms_eval = 0.0;
    double ms_adapt = 0.0;
};

struct BufferedFrame {
    int frame = 0;
    ImagePlane image;
    Eigen::VectorXd params;
};

struct AdaptOutcome {
    ModelSet models;
    bool representation_accepted = true;
    std::vector<bool> stages_accepted;
    bool partial() const;
};

// One joint adaptation step on a copy of `models`: subspace updates, re-expression
// of the regressors in the rotated bases, then regressor updates under the new
// representation. Which parts run is controlled by `config.adapt`.
AdaptOutcome adapt_models(const ModelSet& models, std::span<const BufferedFrame> buffer, const TrackerConfig& config,
                          std::uint64_t seed);

class Tracker {
public:
    Tracker(std::shared_ptr<const ModelSet> models, TrackerConfig config);

    // `init_box` is used only when the tracker has no accepted previous frame.
    // `truth`, when given, fills FrameResult::rmse.
    FrameResult process_frame(const ImagePlane& frame, const std::optional<BoundingBox>& init_box = std::nullopt,
                              const Shape* truth = nullptr);

    // Consistent snapshot of the current model set; safe to call from any thread.
    std::shared_ptr<const ModelSet> models() const;

    TrackStatus status() const { return status_; }
    std::size_t buffered() const { return buffer_.size(); }
    int adaptations() const { return adaptations_; }
    const TrackerConfig& config() const { return config_; }

private:
    void swap_models(std::shared_ptr<const ModelSet> next);

    std::shared_ptr<const ModelSet> models_;
    TrackerConfig config_;
    TrackStatus status_ = TrackStatus::lost;
    std::optional<Eigen::VectorXd> previous_;
    std::vector<BufferedFrame> buffer_;
    int frame_counter_ = 0;
    int adaptations_ = 0;
};

}  // namespace adaptalign
