#include "adaptalign/evaluator.hpp"

#include "adaptalign/appearance.hpp"
#include "adaptalign/error.hpp"
#include "adaptalign/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace adaptalign {

namespace {

constexpr double kProbFloor = 1e-12;

struct Dims {
    int c0, c1, c2, s0, s1, s2, k, hidden, coords;
    int flat() const { return c2 * s2 * s2; }
};

Dims dims_of(const EvaluatorNet& net) {
    const auto& c = net.config;
    return {net.input_channels(), c.conv1_channels, c.conv2_channels, c.side, c.side / 2, c.side / 4,
            c.kernel, c.hidden, c.wiring == EvaluatorWiring::fc_concat ? 2 * net.landmarks : 0};
}

// Same-padded stride-1 convolution.
void conv_forward(const double* in, int cin, int s, const double* w, const double* b, int cout, int k, double* out) {
    const int h = k / 2;
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    for (int oc = 0; oc < cout; ++oc) {
        double* o = out + oc * plane;
        std::fill(o, o + plane, b[oc]);
        for (int ic = 0; ic < cin; ++ic) {
            const double* src = in + ic * plane;
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky - h;
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - h;
                    const double wt = w[((oc * cin + ic) * k + ky) * k + kx];
                    const int y0 = std::max(0, -dy), y1 = std::min(s, s - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(s, s - dx);
                    for (int y = y0; y < y1; ++y) {
                        double* orow = o + y * s;
                        const double* irow = src + (y + dy) * s + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += wt * irow[x];
                    }
                }
            }
        }
    }
}

void conv_backward(const double* in, const double* dout, const double* w, int cin, int cout, int s, int k, double* dw,
                   double* db, double* din) {
    const int h = k / 2;
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    for (int oc = 0; oc < cout; ++oc) {
        const double* g = dout + oc * plane;
        db[oc] += std::accumulate(g, g + plane, 0.0);
        for (int ic = 0; ic < cin; ++ic) {
            const double* src = in + ic * plane;
            double* dsrc = din ? din + ic * plane : nullptr;
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky - h;
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - h;
                    const std::size_t wi = static_cast<std::size_t>(((oc * cin + ic) * k + ky) * k + kx);
                    const double wt = w[wi];
                    const int y0 = std::max(0, -dy), y1 = std::min(s, s - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(s, s - dx);
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* grow = g + y * s;
                        const double* irow = src + (y + dy) * s + dx;
                        for (int x = x0; x < x1; ++x) acc += grow[x] * irow[x];
                        if (dsrc) {
                            double* drow = dsrc + (y + dy) * s + dx;
                            for (int x = x0; x < x1; ++x) drow[x] += wt * grow[x];
                        }
                    }
                    dw[wi] += acc;
                }
            }
        }
    }
}

// ReLU followed by 2x2 max pooling; records the winning index per output.
void relu_pool(const double* z, int c, int s, double* out, int* arg) {
    const int so = s / 2;
    for (int ch = 0; ch < c; ++ch) {
        const double* src = z + static_cast<std::size_t>(ch) * s * s;
        for (int y = 0; y < so; ++y) {
            for (int x = 0; x < so; ++x) {
                int best = (2 * y) * s + 2 * x;
                for (int i : {(2 * y) * s + 2 * x + 1, (2 * y + 1) * s + 2 * x, (2 * y + 1) * s + 2 * x + 1}) {
                    if (src[i] > src[best]) best = i;
                }
                const std::size_t o = static_cast<std::size_t>(ch) * so * so + static_cast<std::size_t>(y) * so + x;
                out[o] = std::max(src[best], 0.0);
                arg[o] = ch * s * s + best;
            }
        }
    }
}

void relu_pool_backward(const double* dout, const int* arg, const double* z, std::size_t n_out, double* dz) {
    for (std::size_t o = 0; o < n_out; ++o) {
        if (z[arg[o]] > 0.0) dz[arg[o]] += dout[o];
    }
}

struct Activations {
    std::vector<double> input, z1, p1, z2, p2, fc_in, h_pre, h;
    std::vector<int> arg1, arg2;
    double logits[2];
    Probabilities probs;
};

void build_input(const EvaluatorNet& net, const EvaluatorInput& in, std::vector<double>& out) {
    const int s = net.config.side;
    if (in.crop.width() != s || in.crop.height() != s) throw DimensionError("evaluator crop size mismatch");
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    out.assign(plane * static_cast<std::size_t>(net.input_channels()), 0.0);
    std::copy(in.crop.pixels().begin(), in.crop.pixels().end(), out.begin());
    if (net.config.wiring == EvaluatorWiring::input_concat) {
        if (in.map.side != s || in.map.grid.size() != plane) throw DimensionError("landmark map size mismatch");
        std::copy(in.map.grid.begin(), in.map.grid.end(), out.begin() + static_cast<std::ptrdiff_t>(plane));
    } else if (static_cast<int>(in.coords.size()) != 2 * net.landmarks) {
        throw DimensionError("landmark coordinate count mismatch");
    }
}

void run_forward(const EvaluatorNet& net, const EvaluatorInput& in, Activations& a) {
    const Dims d = dims_of(net);
    build_input(net, in, a.input);
    const std::size_t p0 = static_cast<std::size_t>(d.s0) * d.s0;
    const std::size_t p1 = static_cast<std::size_t>(d.s1) * d.s1;
    const std::size_t p2 = static_cast<std::size_t>(d.s2) * d.s2;

    a.z1.assign(p0 * d.c1, 0.0);
    conv_forward(a.input.data(), d.c0, d.s0, net.conv1_w.data(), net.conv1_b.data(), d.c1, d.k, a.z1.data());
    a.p1.assign(p1 * d.c1, 0.0);
    a.arg1.assign(p1 * d.c1, 0);
    relu_pool(a.z1.data(), d.c1, d.s0, a.p1.data(), a.arg1.data());

    a.z2.assign(p1 * d.c2, 0.0);
    conv_forward(a.p1.data(), d.c1, d.s1, net.conv2_w.data(), net.conv2_b.data(), d.c2, d.k, a.z2.data());
    a.p2.assign(p2 * d.c2, 0.0);
    a.arg2.assign(p2 * d.c2, 0);
    relu_pool(a.z2.data(), d.c2, d.s1, a.p2.data(), a.arg2.data());

    a.fc_in = a.p2;
    a.fc_in.insert(a.fc_in.end(), in.coords.begin(), in.coords.end());
    if (d.coords == 0) a.fc_in.resize(static_cast<std::size_t>(d.flat()));
    const int f = d.flat() + d.coords;

    a.h_pre.assign(static_cast<std::size_t>(d.hidden), 0.0);
    a.h.assign(static_cast<std::size_t>(d.hidden), 0.0);
    for (int j = 0; j < d.hidden; ++j) {
        const double* row = net.fc1_w.data() + static_cast<std::size_t>(j) * f;
        double acc = net.fc1_b[j];
        for (int i = 0; i < f; ++i) acc += row[i] * a.fc_in[i];
        a.h_pre[j] = acc;
        a.h[j] = std::max(acc, 0.0);
    }
    for (int c = 0; c < 2; ++c) {
        double acc = net.fc2_b[c];
        for (int j = 0; j < d.hidden; ++j) acc += net.fc2_w[c * d.hidden + j] * a.h[j];
        a.logits[c] = acc;
    }
    const double m = std::max(a.logits[0], a.logits[1]);
    const double e0 = std::exp(a.logits[0] - m);
    const double e1 = std::exp(a.logits[1] - m);
    double aligned = e1 / (e0 + e1);
    aligned = std::clamp(aligned, kProbFloor, 1.0 - kProbFloor);
    a.probs = {1.0 - aligned, aligned};
}

int class_index(int label) { return label > 0 ? 1 : 0; }

}  // namespace

void validate(const EvaluatorConfig& config) {
    if (config.side < 8 || config.side % 4 != 0) throw ConfigError("evaluator side must be a multiple of 4, >= 8");
    if (config.kernel < 1 || config.kernel % 2 == 0) throw ConfigError("evaluator kernel must be odd");
    if (config.conv1_channels < 1 || config.conv2_channels < 1 || config.hidden < 1) {
        throw ConfigError("evaluator layer widths must be positive");
    }
    if (config.dilation < 0 || !(config.margin >= 0.0)) throw ConfigError("invalid evaluator crop settings");
}

int EvaluatorNet::conv_output_length() const { return config.conv2_channels * (config.side / 4) * (config.side / 4); }

int EvaluatorNet::fc1_input_length() const {
    return conv_output_length() + (config.wiring == EvaluatorWiring::fc_concat ? 2 * landmarks : 0);
}

std::array<std::vector<double>*, 8> EvaluatorNet::blocks() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

std::array<const std::vector<double>*, 8> EvaluatorNet::blocks() const {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

CropGeometry crop_around(const Shape& shape, int side, double margin) {
    const BoundingBox box = bounding_box(shape);
    const double extent = std::max(box.size().maxCoeff(), 1.0) * (1.0 + 2.0 * margin);
    CropGeometry g;
    g.scale = extent / side;
    g.origin = box.center() - Eigen::Vector2d::Constant(0.5 * extent);
    return g;
}

int LandmarkMap::nonzero() const {
    return static_cast<int>(std::count_if(grid.begin(), grid.end(), [](float v) { return v != 0.0f; }));
}

LandmarkMap render_landmark_map(const Shape& shape, const CropGeometry& crop, int side, int dilation) {
    LandmarkMap map;
    map.side = side;
    map.grid.assign(static_cast<std::size_t>(side) * side, 0.0f);
    for (std::size_t i = 0; i < shape.size(); ++i) {
        const Eigen::Vector2d q = (shape.point(i) - crop.origin) / crop.scale;
        if (!q.allFinite()) continue;
        const int cx = static_cast<int>(std::clamp<double>(std::lround(q.x()), 0, side - 1));
        const int cy = static_cast<int>(std::clamp<double>(std::lround(q.y()), 0, side - 1));
        for (int y = std::max(0, cy - dilation); y <= std::min(side - 1, cy + dilation); ++y) {
            for (int x = std::max(0, cx - dilation); x <= std::min(side - 1, cx + dilation); ++x) {
                map.grid[static_cast<std::size_t>(y) * side + x] = 1.0f;
            }
        }
    }
    return map;
}

ImagePlane normalized_crop(const ImagePlane& image, const CropGeometry& crop, int side) {
    ImagePlane out(side, side);
    double sum = 0.0;
    for (int v = 0; v < side; ++v) {
        for (int u = 0; u < side; ++u) {
            const float px = image.sample(crop.origin.x() + crop.scale * u, crop.origin.y() + crop.scale * v);
            out.at(u, v) = px;
            sum += px;
        }
    }
    const double n = static_cast<double>(side) * side;
    const double mean = sum / n;
    double var = 0.0;
    for (float px : out.pixels()) var += (px - mean) * (px - mean);
    const double inv = 1.0 / std::sqrt(var / n + 1e-4);
    for (float& px : out.pixels()) px = static_cast<float>((px - mean) * inv);
    return out;
}

EvaluatorInput make_evaluator_input(const ImagePlane& image, const Shape& shape, const EvaluatorConfig& config) {
    const CropGeometry crop = crop_around(shape, config.side, config.margin);
    EvaluatorInput in;
    in.crop = normalized_crop(image, crop, config.side);
    in.map = render_landmark_map(shape, crop, config.side, config.dilation);
    in.coords.reserve(2 * shape.size());
    for (std::size_t i = 0; i < shape.size(); ++i) {
        const Eigen::Vector2d q = (shape.point(i) - crop.origin) / (crop.scale * config.side);
        in.coords.push_back(q.x());
        in.coords.push_back(q.y());
    }
    return in;
}

EvaluatorNet init_evaluator(const EvaluatorConfig& config, int landmarks, std::uint64_t seed) {
    validate(config);
    EvaluatorNet net;
    net.config = config;
    net.landmarks = landmarks;
    Rng rng = make_rng(seed, 0xe7a1);
    auto he = [&](std::vector<double>& w, std::size_t count, int fan_in) {
        std::normal_distribution<double> g(0.0, std::sqrt(2.0 / fan_in));
        w.resize(count);
        for (auto& v : w) v = g(rng);
    };
    const int k2 = config.kernel * config.kernel;
    const int c0 = net.input_channels();
    he(net.conv1_w, static_cast<std::size_t>(config.conv1_channels * c0 * k2), c0 * k2);
    net.conv1_b.assign(static_cast<std::size_t>(config.conv1_channels), 0.0);
    he(net.conv2_w, static_cast<std::size_t>(config.conv2_channels * config.conv1_channels * k2),
       config.conv1_channels * k2);
    net.conv2_b.assign(static_cast<std::size_t>(config.conv2_channels), 0.0);
    he(net.fc1_w, static_cast<std::size_t>(config.hidden) * net.fc1_input_length(), net.fc1_input_length());
    net.fc1_b.assign(static_cast<std::size_t>(config.hidden), 0.0);
    he(net.fc2_w, static_cast<std::size_t>(2 * config.hidden), config.hidden);
    net.fc2_b.assign(2, 0.0);
    return net;
}

Probabilities forward(const EvaluatorNet& net, const EvaluatorInput& input) {
    Activations a;
    run_forward(net, input, a);
    return a.probs;
}

double loss_and_gradient(const EvaluatorNet& net, std::span<const EvaluatorSample> batch,
                         std::vector<std::vector<double>>* gradient) {
    if (batch.empty()) return 0.0;
    const Dims d = dims_of(net);
    const int f = d.flat() + d.coords;
    const std::size_t p0 = static_cast<std::size_t>(d.s0) * d.s0;
    const std::size_t p1 = static_cast<std::size_t>(d.s1) * d.s1;
    const std::size_t p2 = static_cast<std::size_t>(d.s2) * d.s2;

    if (gradient) {
        gradient->clear();
        for (const auto* b : net.blocks()) gradient->emplace_back(b->size(), 0.0);
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    Activations a;
    std::vector<double> dh(static_cast<std::size_t>(d.hidden)), dfc(static_cast<std::size_t>(f)), dz2, dp1, dz1;

    for (const auto& sample : batch) {
        run_forward(net, sample.input, a);
        const int target = class_index(sample.label);
        const double p_target = target == 1 ? a.probs.aligned : a.probs.misaligned;
        loss -= std::log(p_target) * inv_n;
        if (!gradient) continue;
        auto& g = *gradient;

        // Softmax cross-entropy: dL/dlogit = p - onehot. Uses the unclamped softmax.
        const double m = std::max(a.logits[0], a.logits[1]);
        const double e0 = std::exp(a.logits[0] - m), e1 = std::exp(a.logits[1] - m);
        const double dlogit[2] = {(e0 / (e0 + e1) - (target == 0)) * inv_n, (e1 / (e0 + e1) - (target == 1)) * inv_n};

        std::fill(dh.begin(), dh.end(), 0.0);
        for (int c = 0; c < 2; ++c) {
            g[7][c] += dlogit[c];
            for (int j = 0; j < d.hidden; ++j) {
                g[6][c * d.hidden + j] += dlogit[c] * a.h[j];
                dh[j] += dlogit[c] * net.fc2_w[c * d.hidden + j];
            }
        }
        std::fill(dfc.begin(), dfc.end(), 0.0);
        for (int j = 0; j < d.hidden; ++j) {
            if (a.h_pre[j] <= 0.0) continue;
            const double gj = dh[j];
            g[5][j] += gj;
            double* wrow = g[4].data() + static_cast<std::size_t>(j) * f;
            const double* row = net.fc1_w.data() + static_cast<std::size_t>(j) * f;
            for (int i = 0; i < f; ++i) {
                wrow[i] += gj * a.fc_in[i];
                dfc[i] += gj * row[i];
            }
        }

        dz2.assign(p1 * d.c2, 0.0);
        relu_pool_backward(dfc.data(), a.arg2.data(), a.z2.data(), p2 * d.c2, dz2.data());
        dp1.assign(p1 * d.c1, 0.0);
        conv_backward(a.p1.data(), dz2.data(), net.conv2_w.data(), d.c1, d.c2, d.s1, d.k, g[2].data(), g[3].data(),
                      dp1.data());
        dz1.assign(p0 * d.c1, 0.0);
        relu_pool_backward(dp1.data(), a.arg1.data(), a.z1.data(), p1 * d.c1, dz1.data());
        conv_backward(a.input.data(), dz1.data(), net.conv1_w.data(), d.c0, d.c1, d.s0, d.k, g[0].data(),
                      g[1].data(), nullptr);
    }
    return loss;
}

void train_evaluator(EvaluatorNet& net, std::span<const EvaluatorSample> samples,
                     const EvaluatorTrainingConfig& training, EvaluatorTrainingReport* report) {
    if (samples.empty()) throw DimensionError("no evaluator training samples");
    const bool has_pos = std::any_of(samples.begin(), samples.end(), [](const auto& s) { return s.label > 0; });
    const bool has_neg = std::any_of(samples.begin(), samples.end(), [](const auto& s) { return s.label <= 0; });
    if (!has_pos || !has_neg) throw DimensionError("evaluator training needs both aligned and misaligned samples");
    if (training.batch_size < 1 || training.epochs < 0) throw ConfigError("invalid evaluator training schedule");

    Rng rng = make_rng(training.seed, 0x5eed);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<EvaluatorSample> batch;
    std::vector<std::vector<double>> grad;
    if (report) report->epoch_loss.clear();

    for (int epoch = 0; epoch < training.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(training.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(training.batch_size));
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(samples[order[i]]);
            const double l = loss_and_gradient(net, batch, &grad);
            epoch_loss += l * static_cast<double>(end - start);
            auto blocks = net.blocks();
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                auto& w = *blocks[b];
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= training.learning_rate * grad[b][i];
            }
        }
        if (report) report->epoch_loss.push_back(epoch_loss / static_cast<double>(samples.size()));
    }
    for (const auto* b : net.blocks()) {
        for (double v : *b) {
            if (!std::isfinite(v)) throw NumericError("evaluator training diverged");
        }
    }
    if (report) {
        std::size_t correct = 0;
        for (const auto& s : samples) {
            const Probabilities p = forward(net, s.input);
            correct += ((p.aligned >= 0.5) == (s.label > 0)) ? 1 : 0;
        }
        report->training_accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    }
}

EvaluatorNet train_evaluator(std::span<const EvaluatorSample> samples, const EvaluatorConfig& config, int landmarks,
                             const EvaluatorTrainingConfig& training, EvaluatorTrainingReport* report) {
    EvaluatorNet net = init_evaluator(config, landmarks, training.seed);
    train_evaluator(net, samples, training, report);
    return net;
}

Verdict evaluate_fitting(const EvaluatorNet& net, const ImagePlane& image, const Shape& shape, double threshold) {
    const Probabilities p = forward(net, make_evaluator_input(image, shape, net.config));
    return {p.aligned >= threshold, p.aligned};
}

std::vector<EvaluatorSample> make_evaluator_samples(std::span<const AnnotatedImage> images, const ShapeModel& shape,
                                                    const PerturbationModel& perturbation,
                                                    const EvaluatorConfig& config, const EvaluatorSampling& sampling) {
    if (perturbation.stages() < 1) throw DimensionError("perturbation model has no stages");
    Rng rng = make_rng(sampling.seed, 0xe0a1);
    const Eigen::VectorXd base_var = perturbation.variances[0];
    std::vector<EvaluatorSample> out;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (const auto& item : images) {
        const Eigen::VectorXd truth = shape.params_from_shape(item.shape);
        const Shape model_truth = shape.instance(truth);
        auto displaced = [&](const Eigen::VectorXd& p) {
            Shape s = item.shape;
            s.points() += shape.instance(p).points() - model_truth.points();
            return s;
        };

        Shape positive = item.shape;
        for (int attempt = 0; attempt < 20; ++attempt) {
            const Shape cand = displaced(sample_around(truth, base_var * 0.01, rng));
            if (norm_rmse(cand, item.shape, shape.eyes) <= 0.5 * sampling.tolerance) {
                positive = cand;
                break;
            }
        }
        out.push_back({make_evaluator_input(item.image, positive, config), 1});

        const Eigen::VectorXd wide = base_var * (sampling.inflation * sampling.inflation);
        for (int j = 0; j < sampling.negatives_per_image; ++j) {
            for (int attempt = 0; attempt < 100; ++attempt) {
                const Shape cand = displaced(sample_around(truth, wide, rng));
                if (norm_rmse(cand, item.shape, shape.eyes) >= 2.0 * sampling.tolerance) {
                    out.push_back({make_evaluator_input(item.image, cand, config), -1});
                    break;
                }
            }
        }
        for (int j = 0; j < sampling.occluded_per_image; ++j) {
            // Face region replaced by flat intensity plus mild noise.
            ImagePlane blank = item.image;
            const BoundingBox box = bounding_box(item.shape);
            const Eigen::Vector2d pad = 0.25 * box.size();
            const float level = static_cast<float>(unit(rng));
            std::normal_distribution<float> noise(0.0f, 0.05f);
            for (int y = 0; y < blank.height(); ++y) {
                for (int x = 0; x < blank.width(); ++x) {
                    if (x >= box.min.x() - pad.x() && x <= box.max.x() + pad.x() && y >= box.min.y() - pad.y() &&
                        y <= box.max.y() + pad.y()) {
                        blank.at(x, y) = level + noise(rng);
                    }
                }
            }
            out.push_back({make_evaluator_input(blank, item.shape, config), -1});
        }
    }
    return out;
}

}  // namespace adaptalign
