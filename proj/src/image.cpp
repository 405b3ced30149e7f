#include "adaptalign/image.hpp"

#include "adaptalign/error.hpp"

#include <cmath>

namespace adaptalign {

ImagePlane::ImagePlane(int width, int height, float fill) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw DimensionError("negative image size");
    pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

float ImagePlane::at_reflect(int x, int y) const {
    return at(reflect_index(x, width_), reflect_index(y, height_));
}

float ImagePlane::sample(double x, double y) const {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const float ax = static_cast<float>(x - fx);
    const float ay = static_cast<float>(y - fy);
    if (x0 >= 0 && y0 >= 0 && x0 + 1 < width_ && y0 + 1 < height_) {
        const float* p = pixels_.data() + static_cast<std::size_t>(y0) * width_ + x0;
        const float top = (1.0f - ax) * p[0] + ax * p[1];
        const float bottom = (1.0f - ax) * p[width_] + ax * p[width_ + 1];
        return (1.0f - ay) * top + ay * bottom;
    }
    const float top = (1.0f - ax) * at_reflect(x0, y0) + ax * at_reflect(x0 + 1, y0);
    const float bottom = (1.0f - ax) * at_reflect(x0, y0 + 1) + ax * at_reflect(x0 + 1, y0 + 1);
    return (1.0f - ay) * top + ay * bottom;
}

ImagePlane sample_region(const ImagePlane& image, const Eigen::Vector2d& center, const Eigen::Matrix2d& linear,
                         int half) {
    if (image.empty()) throw DimensionError("sample_region on empty image");
    const int side = 2 * half + 1;
    ImagePlane out(side, side);
    for (int v = -half; v <= half; ++v) {
        for (int u = -half; u <= half; ++u) {
            const Eigen::Vector2d p = center + linear * Eigen::Vector2d(u, v);
            out.at(u + half, v + half) = image.sample(p.x(), p.y());
        }
    }
    return out;
}

}  // namespace adaptalign
