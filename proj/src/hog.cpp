#include "adaptalign/hog.hpp"

#include "adaptalign/error.hpp"

#include <cmath>

namespace adaptalign {

namespace {

constexpr double kNormEps = 1e-3;

}  // namespace

int HogLayout::cell_edge(int k) const {
    return static_cast<int>(std::lround(static_cast<double>(k) * patch_side / cells));
}

void validate(const HogLayout& layout) {
    if (layout.patch_side < 3 || layout.cells < 1 || layout.cells > layout.patch_side || layout.cells > 15 || layout.bins < 2 ||
        !(layout.clip > 0.0)) {
        throw ConfigError("invalid HoG layout");
    }
}

OrientationVote orientation_vote(const ImagePlane& image, int x, int y, int bins) {
    double gx, gy;
    if (x > 0 && y > 0 && x + 1 < image.width() && y + 1 < image.height()) {
        gx = 0.5 * (image.at(x + 1, y) - image.at(x - 1, y));
        gy = 0.5 * (image.at(x, y + 1) - image.at(x, y - 1));
    } else {
        gx = 0.5 * (image.at_reflect(x + 1, y) - image.at_reflect(x - 1, y));
        gy = 0.5 * (image.at_reflect(x, y + 1) - image.at_reflect(x, y - 1));
    }
    const double mag = std::hypot(gx, gy);
    OrientationVote v;
    if (mag == 0.0) return v;
    double theta = std::atan2(gy, gx);
    if (theta < 0.0) theta += M_PI;
    if (theta >= M_PI) theta -= M_PI;
    const double pos = theta / (M_PI / bins);
    const double lo = std::floor(pos);
    const double frac = pos - lo;
    v.bin_lo = static_cast<int>(lo) % bins;
    v.bin_hi = (v.bin_lo + 1) % bins;
    v.w_lo = mag * (1.0 - frac);
    v.w_hi = mag * frac;
    return v;
}

void normalize_l2hys(double* v, int n, double clip) {
    auto scale_to_unit = [&] {
        double ss = 0.0;
        for (int i = 0; i < n; ++i) ss += v[i] * v[i];
        const double inv = 1.0 / std::sqrt(ss + kNormEps * kNormEps);
        for (int i = 0; i < n; ++i) v[i] *= inv;
    };
    scale_to_unit();
    for (int i = 0; i < n; ++i) v[i] = std::min(v[i], clip);
    scale_to_unit();
}

Eigen::VectorXd extract_features(const ImagePlane& image, const Eigen::Vector2d& center, const HogLayout& layout) {
    validate(layout);
    if (image.empty()) throw DimensionError("extract_features on empty image");
    if (!center.allFinite()) throw NumericError("non-finite patch center");

    const int half = layout.patch_side / 2;
    const int x0 = static_cast<int>(std::lround(center.x())) - half;
    const int y0 = static_cast<int>(std::lround(center.y())) - half;

    Eigen::VectorXd out = Eigen::VectorXd::Zero(layout.length());
    for (int cy = 0; cy < layout.cells; ++cy) {
        for (int cx = 0; cx < layout.cells; ++cx) {
            double* hist = out.data() + (cy * layout.cells + cx) * layout.bins;
            for (int y = layout.cell_edge(cy); y < layout.cell_edge(cy + 1); ++y) {
                for (int x = layout.cell_edge(cx); x < layout.cell_edge(cx + 1); ++x) {
                    const OrientationVote v = orientation_vote(image, x0 + x, y0 + y, layout.bins);
                    hist[v.bin_lo] += v.w_lo;
                    hist[v.bin_hi] += v.w_hi;
                }
            }
        }
    }
    normalize_l2hys(out.data(), layout.length(), layout.clip);
    return out;
}

HogField::HogField(const ImagePlane& image, int x0, int y0, int w, int h, const HogLayout& layout)
    : layout_(layout), x0_(x0), y0_(y0), w_(w), h_(h) {
    validate(layout);
    if (image.empty() || w <= 0 || h <= 0) throw DimensionError("empty HoG field");
    const int bins = layout.bins;
    const std::size_t stride = static_cast<std::size_t>(w + 1) * bins;
    integral_.assign(stride * static_cast<std::size_t>(h + 1), 0.0);

    // Layout: integral_[(y * (w + 1) + x) * bins + b], so one corner lookup reads all bins.
    std::vector<double> run(static_cast<std::size_t>(bins));
    for (int y = 0; y < h; ++y) {
        std::fill(run.begin(), run.end(), 0.0);
        double* cur = integral_.data() + static_cast<std::size_t>(y + 1) * stride;
        const double* prev = cur - stride;
        for (int x = 0; x < w; ++x) {
            const OrientationVote v = orientation_vote(image, x0 + x, y0 + y, bins);
            run[static_cast<std::size_t>(v.bin_lo)] += v.w_lo;
            run[static_cast<std::size_t>(v.bin_hi)] += v.w_hi;
            double* dst = cur + static_cast<std::size_t>(x + 1) * bins;
            const double* up = prev + static_cast<std::size_t>(x + 1) * bins;
            for (int b = 0; b < bins; ++b) dst[b] = up[b] + run[static_cast<std::size_t>(b)];
        }
    }
}

void HogField::descriptor(int cx, int cy, double* out) const {
    const int half = layout_.patch_side / 2;
    const int px = cx - half - x0_;
    const int py = cy - half - y0_;
    if (px < 0 || py < 0 || px + layout_.patch_side > w_ || py + layout_.patch_side > h_) {
        throw DimensionError("HoG patch outside the precomputed field");
    }
    const int bins = layout_.bins;
    const int cells = layout_.cells;
    const std::size_t row = static_cast<std::size_t>(w_ + 1) * bins;
    int edge[16];
    for (int k = 0; k <= cells && k < 16; ++k) edge[k] = layout_.cell_edge(k);
    for (int ky = 0; ky < cells; ++ky) {
        const double* top = integral_.data() + static_cast<std::size_t>(py + edge[ky]) * row;
        const double* bottom = integral_.data() + static_cast<std::size_t>(py + edge[ky + 1]) * row;
        for (int kx = 0; kx < cells; ++kx) {
            const std::size_t xb = static_cast<std::size_t>(px + edge[kx]) * bins;
            const std::size_t xe = static_cast<std::size_t>(px + edge[kx + 1]) * bins;
            double* hist = out + (ky * cells + kx) * bins;
            for (int b = 0; b < bins; ++b) hist[b] = bottom[xe + b] - top[xe + b] - bottom[xb + b] + top[xb + b];
        }
    }
    normalize_l2hys(out, layout_.length(), layout_.clip);
}

Eigen::VectorXd HogField::descriptor(int cx, int cy) const {
    Eigen::VectorXd out(layout_.length());
    descriptor(cx, cy, out.data());
    return out;
}

}  // namespace adaptalign
