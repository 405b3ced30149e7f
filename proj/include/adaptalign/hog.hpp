#pragma once

#include "adaptalign/image.hpp"

#include <Eigen/Core>

#include <vector>

namespace adaptalign {

// Gradient-orientation histogram layout: a square patch split into
// cells x cells regions, each histogrammed over `bins` unsigned orientations,
// then L2-Hys normalized as one block.
struct HogLayout {
    int patch_side = 11;
    int cells = 3;
    int bins = 6;
    double clip = 0.2;

    int length() const { return cells * cells * bins; }
    // Start of cell k along one axis; k in [0, cells]. Symmetric under reversal.
    int cell_edge(int k) const;

    bool operator==(const HogLayout&) const = default;
};

void validate(const HogLayout& layout);

// Descriptor of the patch centered on the pixel nearest `center`. Pixels
// outside the image are reflect-padded.
Eigen::VectorXd extract_features(const ImagePlane& image, const Eigen::Vector2d& center, const HogLayout& layout);

// Dense descriptors over a rectangular region via per-bin integral images.
// Agrees with extract_features up to summation-order rounding.
class HogField {
public:
    // Covers every patch whose pixels lie in [x0, x0 + w) x [y0, y0 + h).
    HogField(const ImagePlane& image, int x0, int y0, int w, int h, const HogLayout& layout);

    // Descriptor of the patch centered at integer pixel (cx, cy), written into out.
    void descriptor(int cx, int cy, double* out) const;
    Eigen::VectorXd descriptor(int cx, int cy) const;

    const HogLayout& layout() const { return layout_; }

private:
    HogLayout layout_;
    int x0_, y0_, w_, h_;
    std::vector<double> integral_;  // (h+1) x (w+1) x bins
};

// Adds the orientation votes of pixel (x, y) to the two neighbouring bins.
struct OrientationVote {
    int bin_lo = 0;
    int bin_hi = 0;
    double w_lo = 0.0;
    double w_hi = 0.0;
};
OrientationVote orientation_vote(const ImagePlane& image, int x, int y, int bins);

void normalize_l2hys(double* v, int n, double clip);

}  // namespace adaptalign
