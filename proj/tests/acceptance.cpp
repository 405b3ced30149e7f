// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include "adaptalign/cascade.hpp"
#include "adaptalign/io.hpp"
#include "adaptalign/model.hpp"
#include "adaptalign/subspace.hpp"
#include "adaptalign/synth.hpp"
#include "adaptalign/tracker.hpp"
#include "support.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

using namespace adaptalign;
using testing::random_matrix;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Columns of `sub` whose singular values are at least `floor`.
Eigen::MatrixXd significant_basis(const PcaSubspace& sub, double floor) {
    Eigen::Index k = 0;
    while (k < sub.rank() && sub.singular_values(k) >= floor) ++k;
    return sub.basis.leftCols(k);
}

// Largest principal angle between two spans of equal dimension.
double max_principal_angle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.cols() == 0) return 0.0;
    const Eigen::MatrixXd residual = b - a * (a.transpose() * b);
    const double s = Eigen::JacobiSVD<Eigen::MatrixXd>(residual).singularValues()(0);
    return std::asin(std::min(1.0, s));
}

// ---- 1: incremental SVD against batch SVD ----
Outcome skl_oracle() {
    Rng rng = make_rng(1001, 0);
    const int ds[] = {20, 100, 400}, ms[] = {30, 200}, ns[] = {1, 5, 10};
    std::uniform_int_distribution<int> pick(0, 1 << 20);
    double worst_angle = 0.0, worst_mean = 0.0;
    int rank_mismatch = 0;
    const auto t0 = Clock::now();
    for (int inst = 0; inst < 100; ++inst) {
        const int d = ds[pick(rng) % 3], m = ms[pick(rng) % 2], n = ns[pick(rng) % 3];
        // Mix full-rank and low-rank data so truncation-free and rank-deficient cases both occur.
        const int intrinsic = inst % 2 ? d : std::max(2, d / 4);
        const Eigen::MatrixXd mix = random_matrix(d, intrinsic, rng);
        const Eigen::MatrixXd a = mix * random_matrix(intrinsic, m, rng) + Eigen::VectorXd::Constant(d, 3.0).replicate(1, m);
        const Eigen::MatrixXd b = mix * random_matrix(intrinsic, n, rng) + Eigen::VectorXd::Constant(d, 2.0).replicate(1, n);
        const PcaSubspace inc = skl_update(pca_fit(a, {1.0, 0}), b, {1.0, {1.0, 0}});
        Eigen::MatrixXd all(d, m + n);
        all << a, b;
        const PcaSubspace batch = pca_fit(all, {1.0, 0});
        const Eigen::MatrixXd ui = significant_basis(inc, 1e-9), ub = significant_basis(batch, 1e-9);
        if (ui.cols() != ub.cols()) {
            ++rank_mismatch;
            continue;
        }
        worst_angle = std::max(worst_angle, max_principal_angle(ub, ui));
        worst_mean = std::max(worst_mean, (inc.mean - batch.mean).cwiseAbs().maxCoeff());
    }
    const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return {rank_mismatch == 0 && worst_angle < 1e-6 && worst_mean < 1e-10 && seconds < 10.0,
            fmt("max angle %.2e, max mean diff %.2e, rank mismatches %d, %.2f s", worst_angle, worst_mean,
                rank_mismatch, seconds)};
}

// ---- 2: Woodbury adaptation against a batch ridge re-solve ----
Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double ridge) {
    const Eigen::MatrixXd Xa = augment(X);
    Eigen::MatrixXd gram = Xa.transpose() * Xa;
    gram.diagonal().head(X.cols()).array() += ridge;
    return gram.ldlt().solve(Xa.transpose() * Y);
}

Outcome rls_oracle() {
    Rng rng = make_rng(1002, 0);
    std::uniform_int_distribution<int> pick(0, 1 << 20);
    const int Ds[] = {6, 40}, rows[] = {50, 500}, ns[] = {1, 5, 20};
    double worst = 0.0, worst_partition = 0.0;
    int rejected = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const int D = Ds[pick(rng) % 2], m = rows[pick(rng) % 2], n = ns[pick(rng) % 3];
        const int batches = 1 + pick(rng) % 5;
        const int P = 6;
        const double ridge = 0.1 + 0.05 * (pick(rng) % 20);
        const Eigen::MatrixXd X = random_matrix(m, D, rng);
        const Eigen::MatrixXd Y = random_matrix(m, P, rng);
        const Eigen::MatrixXd Xn = random_matrix(n * batches, D, rng);
        const Eigen::MatrixXd Yn = random_matrix(n * batches, P, rng);

        AdaptiveStage seq = solve_stage(X, Y, ridge);
        const AdaptiveStage offline = seq;
        for (int b = 0; b < batches; ++b) {
            const StageAdaptation r = adapt_stage(seq, augment(Xn.middleRows(b * n, n)), Yn.middleRows(b * n, n));
            rejected += !r.accepted;
            seq = r.stage;
        }
        Eigen::MatrixXd Xall(m + n * batches, D), Yall(m + n * batches, P);
        Xall << X, Xn;
        Yall << Y, Yn;
        worst = std::max(worst, (seq.stage.regressor - ridge_solve(Xall, Yall, ridge)).cwiseAbs().maxCoeff());

        // Same rows absorbed in one batch.
        const StageAdaptation once = adapt_stage(offline, augment(Xn), Yn);
        rejected += !once.accepted;
        worst_partition = std::max(worst_partition, (once.stage.stage.regressor - seq.stage.regressor).cwiseAbs().maxCoeff());
    }
    return {rejected == 0 && worst <= 1e-6 && worst_partition <= 1e-6,
            fmt("max |adapted - batch| %.2e, max partition diff %.2e, rejected %d", worst, worst_partition, rejected)};
}

// ---- shared trained model for 3 to 6 ----
SynthConfig base_synth() {
    SynthConfig sc;
    sc.seed = 42;
    sc.scale_amplitude = 0.1;
    sc.rotation_amplitude_deg = 15;
    sc.translation_amplitude = 10;
    sc.noise_std = 0.02;
    return sc;
}

// Offline data covers only a narrow slice of texture blends; the evaluator sees all of them.
constexpr TextureRange kTrainTexture{0.0, 0.1};

struct Shared {
    ModelSet models;
    TrainingReport report;
    double seconds = 0.0;
};

const Shared& shared() {
    static const Shared s = [] {
        Shared out;
        const auto t0 = Clock::now();
        const auto train = generate_dataset(base_synth(), 200, kTrainTexture);
        SynthConfig ec = base_synth();
        ec.seed = 44;
        const auto eval_images = generate_dataset(ec, 200, {0.0, 1.0});
        TrainingConfig tc;
        tc.cascade.stages = 3;
        tc.cascade.samples_per_image = 10;
        out.models = train_models(train, kSynthEyes, tc, &out.report, eval_images);
        out.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        return out;
    }();
    return s;
}

// ---- 3: cascade convergence ----
Outcome cascade_convergence() {
    const Shared& s = shared();
    const ModelSet& m = s.models;
    SynthConfig hc = base_synth();
    hc.seed = 43;
    const auto held_out = generate_dataset(hc, 50, kTrainTexture);
    std::vector<double> initial, final_err;
    for (std::size_t i = 0; i < held_out.size(); ++i) {
        const Eigen::VectorXd truth = m.shape.params_from_shape(held_out[i].shape);
        for (const auto& init : sample_perturbations(truth, m.perturbation, 0, 10, 7000 + i)) {
            initial.push_back(norm_rmse(m.shape.instance(init), held_out[i].shape, kSynthEyes));
            const FitResult r = fit(held_out[i].image, init, m.stages, m.shape, m.appearance);
            final_err.push_back(norm_rmse(m.shape.instance(r.params), held_out[i].shape, kSynthEyes));
        }
    }
    const auto& cr = s.report.cascade;
    bool decreasing = !cr.stage_residuals.empty() && cr.stage_residuals.front() < cr.initial_residual;
    std::string residuals = fmt("%.4f", cr.initial_residual);
    for (std::size_t k = 0; k < cr.stage_residuals.size(); ++k) {
        if (k > 0 && !(cr.stage_residuals[k] < cr.stage_residuals[k - 1])) decreasing = false;
        residuals += fmt(" > %.4f", cr.stage_residuals[k]);
    }
    const double mi = median(initial), mf = median(final_err);
    return {decreasing && mf <= 0.3 * mi,
            fmt("held-out median %.4f -> %.4f (ratio %.3f); training residuals %s; trained in %.0f s", mi, mf, mf / mi,
                residuals.c_str(), s.seconds)};
}

// ---- 4: adaptation benefit on a drifting sequence ----
TrackerConfig drift_tracker(AdaptMode mode) {
    TrackerConfig c;
    c.adapt = mode;
    return c;
}

std::vector<SynthFrame> drift_sequence() {
    SynthConfig q;
    q.seed = 77;
    q.frames = 300;
    q.drift_rate = 1.0 / 300.0;
    q.noise_std = 0.02;
    return generate_sequence(q);
}

// Lost frames re-initialize from the ground-truth box, as a detector would.
std::vector<FrameResult> track(const std::shared_ptr<const ModelSet>& models, const std::vector<SynthFrame>& seq,
                               const TrackerConfig& config, Tracker** keep = nullptr) {
    Tracker tracker(models, config);
    std::vector<FrameResult> out;
    out.reserve(seq.size());
    for (const auto& f : seq) out.push_back(tracker.process_frame(f.image, bounding_box(f.shape), &f.shape));
    (void)keep;
    return out;
}

double median_error(const std::vector<FrameResult>& results, std::size_t begin = 0, std::size_t end = SIZE_MAX) {
    std::vector<double> e;
    for (std::size_t i = begin; i < std::min(end, results.size()); ++i) {
        if (results[i].rmse) e.push_back(*results[i].rmse);
    }
    return median(e);
}

Outcome adaptation_benefit() {
    const auto models = std::make_shared<const ModelSet>(shared().models);
    const auto seq = drift_sequence();
    double med[4];
    int adaptations[4];
    for (int mode = 0; mode < 4; ++mode) {
        const auto results = track(models, seq, drift_tracker(static_cast<AdaptMode>(mode)));
        med[mode] = median_error(results);
        adaptations[mode] = static_cast<int>(std::count_if(results.begin(), results.end(), [](const FrameResult& r) { return r.adapted; }));
    }
    const double none = med[0], rep = med[1], fitting = med[2], joint = med[3];
    const bool pass = joint <= fitting && fitting <= none && joint <= rep && rep <= none && joint <= 0.9 * none;
    return {pass, fmt("median none %.4f, rep %.4f (%d updates), fit %.4f (%d), joint %.4f (%d); joint/none %.3f", none,
                      rep, adaptations[1], fitting, adaptations[2], joint, adaptations[3], joint / none)};
}

// ---- 5: evaluator accuracy and gradients ----
Outcome evaluator_quality() {
    const ModelSet& m = shared().models;
    SynthConfig hc = base_synth();
    hc.seed = 45;
    const auto held_out = generate_dataset(hc, 100, {0.0, 1.0});
    EvaluatorSampling sampling;
    sampling.negatives_per_image = 1;
    sampling.occluded_per_image = 0;
    sampling.seed = 4545;
    const auto samples = make_evaluator_samples(held_out, m.shape, m.perturbation, m.evaluator.config, sampling);
    int correct = 0;
    for (const auto& s : samples) correct += (forward(m.evaluator, s.input).aligned >= 0.5) == (s.label == 1);
    const double accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());

    const std::vector<EvaluatorSample> batch(samples.begin(), samples.begin() + 6);
    const auto errors = testing::gradient_check(m.evaluator, batch, 10, 5);
    const double worst = *std::max_element(errors.begin(), errors.end());
    return {accuracy >= 0.9 && worst < 1e-4,
            fmt("held-out accuracy %.3f over %zu samples, worst gradient relative error %.2e", accuracy, samples.size(),
                worst)};
}

// ---- 6: gating during a full-occlusion burst ----
Outcome drift_gating() {
    auto models = std::make_shared<const ModelSet>(shared().models);
    SynthConfig q;
    q.seed = 91;
    q.frames = 160;
    q.burst_start = 70;
    q.burst_length = 30;
    const auto seq = generate_sequence(q);
    Tracker tracker(models, drift_tracker(AdaptMode::joint));
    std::vector<FrameResult> results;
    int adapted_while_misaligned = 0, burst_accepted = 0, model_changed_while_misaligned = 0;
    for (const auto& f : seq) {
        const auto before = tracker.models();
        const std::size_t buffered = tracker.buffered();
        const FrameResult r = tracker.process_frame(f.image, bounding_box(f.shape), &f.shape);
        if (!r.aligned) {
            adapted_while_misaligned += r.adapted;
            model_changed_while_misaligned += tracker.models() != before || tracker.buffered() != buffered;
        }
        if (f.fully_occluded && r.aligned) ++burst_accepted;
        results.push_back(r);
    }
    const double pre = median_error(results, 0, 70);
    const double post = median_error(results, 100);
    const bool pass = adapted_while_misaligned == 0 && model_changed_while_misaligned == 0 && burst_accepted == 0 &&
                      post <= 1.2 * pre;
    return {pass, fmt("burst frames accepted %d/30, adaptations on misaligned frames %d, model or buffer changes "
                      "on misaligned frames %d, pre-burst median %.4f, post-burst median %.4f (ratio %.3f)",
                      burst_accepted, adapted_while_misaligned, model_changed_while_misaligned, pre, post, post / pre)};
}

// ---- 7: scaling of the incremental updates ----
double time_median(const std::function<void()>& f, double min_seconds = 0.05) {
    std::vector<double> samples;
    for (int rep = 0; rep < 5; ++rep) {
        int iters = 0;
        const auto t0 = Clock::now();
        double s = 0.0;
        do {
            f();
            ++iters;
            s = std::chrono::duration<double>(Clock::now() - t0).count();
        } while (s < min_seconds);
        samples.push_back(s / iters);
    }
    return median(samples);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    return sxy / sxx;
}

Outcome complexity() {
    Rng rng = make_rng(1007, 0);
    const int r = 4;
    auto skl_time = [&](int d, int n, double weight) {
        PcaSubspace s = testing::random_subspace(d, r, rng);
        s.observation_weight = weight;
        const Eigen::MatrixXd batch = random_matrix(d, n, rng);
        return time_median([&] { skl_update(s, batch, {1.0, {1.0, r}}); });
    };
    auto adapt_time = [&](int D, int n, int offline) {
        const AdaptiveStage st = solve_stage(random_matrix(offline, D, rng), random_matrix(offline, 8, rng), 1.0);
        const Eigen::MatrixXd x = augment(random_matrix(n, D, rng));
        const Eigen::MatrixXd y = random_matrix(n, 8, rng);
        return time_median([&] { adapt_stage(st, x, y); });
    };

    const std::vector<double> ns{64, 128, 256, 512}, ds{1024, 2048, 4096, 8192}, ms{1e2, 1e3, 1e4, 1e5};
    std::vector<double> t_n, t_d, t_m, a_n, a_d, a_m;
    for (double n : ns) t_n.push_back(skl_time(2048, static_cast<int>(n), 100));
    for (double d : ds) t_d.push_back(skl_time(static_cast<int>(d), 16, 100));
    for (double m : ms) t_m.push_back(skl_time(2048, 16, m));
    // Regressor sweeps: n up to the feature length, then feature length at fixed n.
    const std::vector<double> an{32, 64, 128, 256}, ad{100, 200, 400, 800}, am{1000, 2000, 4000, 8000};
    for (double n : an) a_n.push_back(adapt_time(256, static_cast<int>(n), 300));
    for (double D : ad) a_d.push_back(adapt_time(static_cast<int>(D), 16, 1000));
    for (double m : am) a_m.push_back(adapt_time(128, 16, static_cast<int>(m)));

    const double sn = loglog_slope(ns, t_n), sd = loglog_slope(ds, t_d), sm = loglog_slope(ms, t_m);
    const double rn = loglog_slope(an, a_n), rd = loglog_slope(ad, a_d), rm = loglog_slope(am, a_m);
    const bool skl_ok = sn <= 2.3 && sd <= 1.3 && std::abs(sm) <= 0.3;
    const bool rls_ok = rn <= 2.3 && rd <= 1.3 && std::abs(rm) <= 0.3;
    return {skl_ok && rls_ok,
            fmt("skl_update slopes n %.2f, d %.2f, m %.2f [%s]; adapt_stage slopes n %.2f, D %.2f, m %.2f [%s]", sn,
                sd, sm, skl_ok ? "ok" : "violated", rn, rd, rm, rls_ok ? "ok" : "violated")};
}

// ---- 8: determinism and lossless round-trips ----
std::string record_log(const std::vector<FrameResult>& results) {
    std::string out;
    for (FrameResult r : results) {
        r.ms_fit = r.ms_eval = r.ms_adapt = 0.0;
        out += format_frame_record(r) + "\n" + format_csv_row(to_csv_row(r, false)) + "\n";
    }
    return out;
}

bool bitwise_equal(const AnnotationFile& a, const AnnotationFile& b) {
    if (a.version != b.version || a.points.size() != b.points.size()) return false;
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        for (int k = 0; k < 2; ++k) {
            if (std::bit_cast<std::uint64_t>(a.points[i](k)) != std::bit_cast<std::uint64_t>(b.points[i](k))) return false;
        }
    }
    return true;
}

Outcome determinism_and_round_trips() {
    const auto models = std::make_shared<const ModelSet>(shared().models);
    SynthConfig q;
    q.seed = 123;
    q.frames = 40;
    q.occlusion_probability = 0.1;
    const auto seq = generate_sequence(q);
    const TrackerConfig off = drift_tracker(AdaptMode::none);
    const std::string first = record_log(track(models, seq, off));
    const std::string second = record_log(track(models, seq, off));
    const bool deterministic = first == second;

    int container_failures = 0;
    for (const ModelSet* m : std::array<const ModelSet*, 2>{&shared().models, nullptr}) {
        const ModelSet toy = testing::toy_models(9);
        const ModelSet& ms = m ? *m : toy;
        const std::string bytes = serialize_models(ms);
        const ModelSet back = deserialize_models(bytes);
        container_failures += !(back == ms) || serialize_models(back) != bytes;
    }

    Rng rng = make_rng(1008, 0);
    std::uniform_real_distribution<double> exponent(-300.0, 300.0);
    std::normal_distribution<double> g;
    int annotation_failures = 0;
    for (int i = 0; i < 100; ++i) {
        AnnotationFile a;
        a.version = i % 3;
        for (int k = 0; k < 1 + i % 70; ++k) {
            const double scale = i % 4 == 0 ? std::pow(10.0, exponent(rng)) : 100.0;
            a.points.emplace_back(g(rng) * scale, g(rng) * scale);
        }
        if (i == 0) a.points.emplace_back(-0.0, std::numeric_limits<double>::denorm_min());
        const std::string text = serialize_annotation(a);
        const AnnotationFile back = parse_annotation(text);
        annotation_failures += !bitwise_equal(a, back) || serialize_annotation(back) != text;
    }
    return {deterministic && container_failures == 0 && annotation_failures == 0,
            fmt("adapt-off logs identical: %s (%zu bytes); container failures %d/2; annotation failures %d/100",
                deterministic ? "yes" : "no", first.size(), container_failures, annotation_failures)};
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        Outcome (*run)();
    };
    const Criterion criteria[] = {
        {"1 incremental SVD oracle", skl_oracle},
        {"2 incremental regression oracle", rls_oracle},
        {"3 cascade convergence", cascade_convergence},
        {"4 adaptation benefit", adaptation_benefit},
        {"5 evaluator quality", evaluator_quality},
        {"6 drift gating", drift_gating},
        {"7 complexity", complexity},
        {"8 determinism and round-trips", determinism_and_round_trips},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
    return failed == 0 ? 0 : 1;
}
