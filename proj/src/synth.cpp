#include "adaptalign/synth.hpp"

#include "adaptalign/error.hpp"
#include "adaptalign/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace adaptalign {

namespace {

constexpr int kModes = 3;
constexpr double kModeStd = 2.5;  // pixels of landmark motion per unit mode coefficient

struct Pose {
    double scale = 1.0;
    double rotation = 0.0;
    Eigen::Vector2d translation = Eigen::Vector2d::Zero();
};

// Per-landmark displacement fields of the deformation modes (reference frame).
Eigen::Matrix2Xd mode_field(int landmarks, int mode) {
    Eigen::Matrix2Xd f = Eigen::Matrix2Xd::Zero(2, landmarks);
    if (landmarks == 10) {
        switch (mode) {
            case 0:  // mouth opening
                f.col(7) << 0, -0.4;
                f.col(8) << 0, 1.0;
                f.col(9) << 0, 0.8;
                f.col(5) << -0.3, 0.3;
                f.col(6) << 0.3, 0.3;
                break;
            case 1:  // eye width
                f.col(2) << 0.6, 0;
                f.col(3) << -0.6, 0;
                f.col(4) << 0, 0.5;
                break;
            default:  // lower-face elongation
                for (int i = 4; i < 10; ++i) f.col(i) << 0, 0.4 + 0.06 * (i - 4);
                f.col(5).x() = -0.4;
                f.col(6).x() = 0.4;
                break;
        }
        return f;
    }
    Rng rng = make_rng(0xfeed, static_cast<std::uint64_t>(mode));
    std::normal_distribution<double> g(0.0, 0.5);
    for (int i = 2; i < landmarks; ++i) f.col(i) << g(rng), g(rng);
    return f;
}

struct Texture {
    std::vector<double> bar_angle;   // per landmark, reference frame
    std::vector<double> blob_sign;   // -1 dark, +1 bright
    std::vector<Eigen::Vector2d> bar_offset;
};

Texture make_texture(int landmarks, bool second) {
    Texture t;
    for (int l = 0; l < landmarks; ++l) {
        const double base = M_PI * l / landmarks;
        t.bar_angle.push_back(second ? base + 0.5 * M_PI : base);
        t.blob_sign.push_back(second ? 1.0 : -1.0);
        const double a = 2.0 * M_PI * (0.37 * l);
        t.bar_offset.push_back(second ? Eigen::Vector2d(2.5 * std::cos(a), 2.5 * std::sin(a))
                                      : Eigen::Vector2d::Zero());
    }
    return t;
}

struct Background {
    std::vector<std::array<double, 4>> waves;  // fx, fy, phase, amplitude
};

Background make_background(Rng& rng) {
    Background b;
    std::uniform_real_distribution<double> freq(0.02, 0.12), phase(0.0, 2.0 * M_PI), amp(0.02, 0.05);
    for (int i = 0; i < 6; ++i) b.waves.push_back({freq(rng), freq(rng), phase(rng), amp(rng)});
    return b;
}

Eigen::Vector2d face_center(const SynthConfig& c) { return {0.5 * c.image_side, 0.47 * c.image_side}; }

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Renders the face layer for one texture; returns per-pixel intensity deltas.
void render_face(ImagePlane& img, const Shape& shape, const Pose& pose, const Texture& tex, double weight,
                 int landmarks) {
    if (weight <= 0.0) return;
    const double s = pose.scale;
    const double cr = std::cos(pose.rotation), sr = std::sin(pose.rotation);
    for (int l = 0; l < landmarks; ++l) {
        const Eigen::Vector2d c = shape.point(static_cast<std::size_t>(l));
        const double ang = tex.bar_angle[static_cast<std::size_t>(l)] + pose.rotation;
        const Eigen::Vector2d dir(std::cos(ang), std::sin(ang));
        const Eigen::Vector2d off_ref = tex.bar_offset[static_cast<std::size_t>(l)];
        const Eigen::Vector2d bar_c = c + s * Eigen::Vector2d(cr * off_ref.x() - sr * off_ref.y(),
                                                             sr * off_ref.x() + cr * off_ref.y());
        const double blob_sigma = 1.6 * s;
        const double bar_half = 5.0 * s;
        const double bar_sigma = 0.8 * s;
        const int reach = static_cast<int>(std::ceil(9.0 * s)) + 3;
        const int x0 = static_cast<int>(std::floor(c.x())) - reach, x1 = static_cast<int>(std::ceil(c.x())) + reach;
        const int y0 = static_cast<int>(std::floor(c.y())) - reach, y1 = static_cast<int>(std::ceil(c.y())) + reach;
        for (int y = std::max(0, y0); y <= std::min(img.height() - 1, y1); ++y) {
            for (int x = std::max(0, x0); x <= std::min(img.width() - 1, x1); ++x) {
                const Eigen::Vector2d p(x, y);
                const double rb2 = (p - c).squaredNorm();
                double v = tex.blob_sign[static_cast<std::size_t>(l)] * 0.35 *
                           std::exp(-0.5 * rb2 / (blob_sigma * blob_sigma));
                const Eigen::Vector2d q = p - bar_c;
                const double along = q.dot(dir);
                const double across = q.x() * dir.y() - q.y() * dir.x();
                const double len_fade = 1.0 - smoothstep(bar_half - 1.0, bar_half + 1.0, std::abs(along));
                v -= 0.3 * len_fade * std::exp(-0.5 * across * across / (bar_sigma * bar_sigma));
                img.at(x, y) += static_cast<float>(weight * v);
            }
        }
    }
}

struct Identity {
    Eigen::Vector3d modes = Eigen::Vector3d::Zero();
};

Shape reference_shape(int landmarks, const Eigen::Vector3d& modes) {
    Shape s = synth_template(landmarks);
    for (int m = 0; m < kModes; ++m) s.points() += kModeStd * modes(m) * mode_field(landmarks, m);
    return s;
}

Shape place(const Shape& ref, const Pose& pose, const Eigen::Vector2d& center) {
    SimilarityTransform t;
    t.scale = pose.scale;
    t.rotation = pose.rotation;
    t.translation = center + pose.translation;
    return t.apply(ref);
}

SynthFrame render_frame(const SynthConfig& config, const Background& bg, const Shape& ref, const Pose& pose,
                        double texture_weight, Rng& noise_rng, bool occluded_full) {
    const int side = config.image_side;
    const int L = config.landmarks;
    SynthFrame frame;
    frame.texture_weight = texture_weight;
    frame.fully_occluded = occluded_full;
    frame.shape = place(ref, pose, face_center(config));
    frame.image = ImagePlane(side, side);

    const Eigen::Vector2d fc = face_center(config) + pose.translation;
    const double cr = std::cos(pose.rotation), sr = std::sin(pose.rotation);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            double v = 0.45;
            for (const auto& w : bg.waves) v += w[3] * std::sin(w[0] * x + w[1] * y + w[2]);
            // Face disc (rotated ellipse) slightly brighter than the background.
            const Eigen::Vector2d d = Eigen::Vector2d(x, y) - fc;
            const double u = (cr * d.x() + sr * d.y()) / pose.scale;
            const double vv = (-sr * d.x() + cr * d.y()) / pose.scale - 8.0;
            const double r = std::sqrt((u * u) / (38.0 * 38.0) + (vv * vv) / (46.0 * 46.0));
            v += 0.2 * (1.0 - smoothstep(0.95, 1.05, r));
            frame.image.at(x, y) = static_cast<float>(v);
        }
    }
    static const Texture tex_a = make_texture(10, false);
    static const Texture tex_b = make_texture(10, true);
    const Texture a = L == 10 ? tex_a : make_texture(L, false);
    const Texture b = L == 10 ? tex_b : make_texture(L, true);
    render_face(frame.image, frame.shape, pose, a, 1.0 - texture_weight, L);
    render_face(frame.image, frame.shape, pose, b, texture_weight, L);

    if (occluded_full) {
        const BoundingBox box = bounding_box(frame.shape);
        const Eigen::Vector2d pad = 0.3 * box.size();
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                if (x >= box.min.x() - pad.x() && x <= box.max.x() + pad.x() && y >= box.min.y() - pad.y() &&
                    y <= box.max.y() + pad.y()) {
                    frame.image.at(x, y) = 0.3f;
                }
            }
        }
    }
    if (config.noise_std > 0.0) {
        std::normal_distribution<float> g(0.0f, static_cast<float>(config.noise_std));
        for (float& px : frame.image.pixels()) px += g(noise_rng);
    }
    for (float& px : frame.image.pixels()) px = std::clamp(px, 0.0f, 1.0f);
    return frame;
}

void maybe_occlude(SynthFrame& frame, const SynthConfig& config, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (config.occlusion_probability <= 0.0 || unit(rng) >= config.occlusion_probability) return;
    const BoundingBox box = bounding_box(frame.shape);
    const Eigen::Vector2d size = config.occlusion_size * box.size();
    const Eigen::Vector2d corner(box.min.x() + unit(rng) * (box.size().x() - size.x()),
                                 box.min.y() + unit(rng) * (box.size().y() - size.y()));
    const float level = static_cast<float>(unit(rng));
    for (int y = std::max(0, static_cast<int>(corner.y()));
         y <= std::min(frame.image.height() - 1, static_cast<int>(corner.y() + size.y())); ++y) {
        for (int x = std::max(0, static_cast<int>(corner.x()));
             x <= std::min(frame.image.width() - 1, static_cast<int>(corner.x() + size.x())); ++x) {
            frame.image.at(x, y) = level;
        }
    }
}

}  // namespace

void validate(const SynthConfig& c) {
    if (c.landmarks < 3) throw ConfigError("synthetic faces need at least 3 landmarks");
    if (c.image_side < 64) throw ConfigError("synthetic image side must be >= 64");
    if (c.frames < 0) throw ConfigError("negative frame count");
    for (double a : {c.scale_amplitude, c.rotation_amplitude_deg, c.translation_amplitude, c.deformation_amplitude,
                     c.identity_std, c.drift_rate, c.drift_start, c.noise_std, c.occlusion_probability,
                     c.occlusion_size}) {
        if (!(a >= 0.0)) throw ConfigError("synthetic amplitudes must be non-negative");
    }
    if (c.scale_amplitude >= 0.5) throw ConfigError("scale amplitude must stay below 0.5");
}

Shape synth_template(int landmarks) {
    if (landmarks < 3) throw ConfigError("synthetic faces need at least 3 landmarks");
    Shape s(static_cast<std::size_t>(landmarks));
    s.set_point(0, {-25.0, -15.0});
    s.set_point(1, {25.0, -15.0});
    if (landmarks == 10) {
        const double pts[8][2] = {{-9, -15}, {9, -15}, {0, 5}, {-15, 20}, {15, 20}, {0, 15}, {0, 26}, {0, 40}};
        for (int i = 0; i < 8; ++i) s.set_point(static_cast<std::size_t>(i + 2), {pts[i][0], pts[i][1]});
        return s;
    }
    // Remaining points on the lower face contour.
    for (int i = 2; i < landmarks; ++i) {
        const double t = M_PI * (i - 1) / (landmarks - 1);
        s.set_point(static_cast<std::size_t>(i), {-30.0 * std::cos(t), 5.0 + 35.0 * std::sin(t)});
    }
    return s;
}

std::vector<SynthFrame> generate_sequence(const SynthConfig& config) {
    validate(config);
    Rng rng = make_rng(config.seed, 1);
    Rng noise_rng = make_rng(config.seed, 2);
    Rng occ_rng = make_rng(config.seed, 3);
    const Background bg = make_background(rng);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    std::uniform_int_distribution<int> cycles(2, 4);

    Identity id;
    for (int m = 0; m < kModes; ++m) id.modes(m) = config.identity_std * g(rng);

    // Each motion channel completes an integer number of cycles over the sequence.
    const double n = std::max(config.frames, 1);
    struct Wave {
        double omega, phase;
        double at(int t) const { return std::sin(omega * t + phase); }
    };
    auto wave = [&] { return Wave{2.0 * M_PI * cycles(rng) / n, phase(rng)}; };
    const Wave ws = wave(), wr = wave(), wx = wave(), wy = wave();
    std::array<Wave, kModes> wm{wave(), wave(), wave()};

    std::vector<SynthFrame> out;
    out.reserve(static_cast<std::size_t>(config.frames));
    for (int t = 0; t < config.frames; ++t) {
        Pose pose;
        pose.scale = 1.0 + config.scale_amplitude * ws.at(t);
        pose.rotation = config.rotation_amplitude_deg * M_PI / 180.0 * wr.at(t);
        pose.translation = config.translation_amplitude * Eigen::Vector2d(wx.at(t), wy.at(t));
        Eigen::Vector3d modes = id.modes;
        for (int m = 0; m < kModes; ++m) modes(m) += config.deformation_amplitude * wm[static_cast<std::size_t>(m)].at(t);
        const double weight = std::min(1.0, config.drift_start + config.drift_rate * t);
        const bool burst = config.burst_start >= 0 && t >= config.burst_start &&
                           t < config.burst_start + config.burst_length;
        SynthFrame f = render_frame(config, bg, reference_shape(config.landmarks, modes), pose, weight, noise_rng, burst);
        if (!burst) maybe_occlude(f, config, occ_rng);
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<AnnotatedImage> generate_dataset(const SynthConfig& config, int count, TextureRange texture) {
    validate(config);
    if (!(texture.lo >= 0.0 && texture.lo <= texture.hi && texture.hi <= 1.0)) throw ConfigError("invalid texture range");
    Rng rng = make_rng(config.seed, 11);
    Rng noise_rng = make_rng(config.seed, 12);
    Rng occ_rng = make_rng(config.seed, 13);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> unit(-1.0, 1.0), weight(texture.lo, texture.hi);

    std::vector<AnnotatedImage> out;
    out.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i) {
        const Background bg = make_background(rng);
        Eigen::Vector3d modes;
        for (int m = 0; m < kModes; ++m) {
            modes(m) = config.identity_std * g(rng) + config.deformation_amplitude * unit(rng);
        }
        Pose pose;
        pose.scale = 1.0 + config.scale_amplitude * unit(rng);
        pose.rotation = config.rotation_amplitude_deg * M_PI / 180.0 * unit(rng);
        pose.translation = config.translation_amplitude * Eigen::Vector2d(unit(rng), unit(rng));
        const double w = texture.hi > texture.lo ? weight(rng) : texture.lo;
        SynthFrame f = render_frame(config, bg, reference_shape(config.landmarks, modes), pose, w, noise_rng, false);
        maybe_occlude(f, config, occ_rng);
        out.push_back({std::move(f.image), std::move(f.shape)});
    }
    return out;
}

std::vector<AnnotatedImage> as_annotated(const std::vector<SynthFrame>& frames) {
    std::vector<AnnotatedImage> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back({f.image, f.shape});
    return out;
}

}  // namespace adaptalign
