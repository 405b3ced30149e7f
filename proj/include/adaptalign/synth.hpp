#pragma once

#include "adaptalign/appearance.hpp"
#include "adaptalign/geometry.hpp"
#include "adaptalign/image.hpp"

#include <cstdint>
#include <vector>

namespace adaptalign {

struct SynthConfig {
    int landmarks = 10;
    int image_side = 128;
    int frames = 300;

    // Sinusoidal motion amplitudes (peak values).
    double scale_amplitude = 0.05;
    double rotation_amplitude_deg = 5.0;
    double translation_amplitude = 6.0;
    double deformation_amplitude = 1.0;  // in units of the per-mode standard deviation

    double identity_std = 1.0;    // static per-identity deformation, same units
    double drift_rate = 0.0;      // per-frame increase of the second-texture weight, capped at 1
    double drift_start = 0.0;     // texture weight at frame 0
    double noise_std = 0.02;
    double occlusion_probability = 0.0;
    double occlusion_size = 0.3;  // fraction of the face extent
    int burst_start = -1;         // first frame of a full-face occlusion burst (-1: none)
    int burst_length = 0;
    std::uint64_t seed = 1;

    bool operator==(const SynthConfig&) const = default;
};

void validate(const SynthConfig& config);

struct SynthFrame {
    ImagePlane image;
    Shape shape;
    double texture_weight = 0.0;  // 0 = first texture, 1 = second texture
    bool fully_occluded = false;
};

// Eye corners used by every synthetic layout.
inline constexpr EyeCorners kSynthEyes{0, 1};

// Reference-frame landmark template (interocular distance 50 px).
Shape synth_template(int landmarks);

// One animated sequence of a single identity.
std::vector<SynthFrame> generate_sequence(const SynthConfig& config);

// Blend weight of the second texture, drawn uniformly from [lo, hi].
struct TextureRange {
    double lo = 0.0;
    double hi = 0.0;

    bool operator==(const TextureRange&) const = default;
};

// Independent frames: fresh identity, pose and texture weight per frame.
std::vector<AnnotatedImage> generate_dataset(const SynthConfig& config, int count, TextureRange texture = {});

std::vector<AnnotatedImage> as_annotated(const std::vector<SynthFrame>& frames);

}  // namespace adaptalign
