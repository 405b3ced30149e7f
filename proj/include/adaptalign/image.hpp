#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace adaptalign {

// Grayscale image with intensities nominally in [0, 1], row-major.
class ImagePlane {
public:
    ImagePlane() = default;
    ImagePlane(int width, int height, float fill = 0.0f);

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return pixels_.empty(); }

    float& at(int x, int y) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
    float at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

    // Reflect-padded access (..., 2, 1, 0, 1, 2, ...); defined for any integer coordinate.
    float at_reflect(int x, int y) const;
    // Bilinear interpolation over the reflect-padded plane.
    float sample(double x, double y) const;

    const std::vector<float>& pixels() const { return pixels_; }
    std::vector<float>& pixels() { return pixels_; }

    bool operator==(const ImagePlane&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<float> pixels_;
};

int reflect_index(int i, int n);

// Resamples a (2*half+1)^2 grid around `center`; grid offset (u, v) maps to
// center + linear * (u, v).
ImagePlane sample_region(const ImagePlane& image, const Eigen::Vector2d& center, const Eigen::Matrix2d& linear,
                         int half);

}  // namespace adaptalign
