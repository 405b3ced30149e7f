// Command-line front end: train, track, evaluate, synth.
#include "adaptalign/error.hpp"
#include "adaptalign/io.hpp"
#include "adaptalign/model.hpp"
#include "adaptalign/synth.hpp"
#include "adaptalign/tracker.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace adaptalign;

namespace {

struct Sample {
    fs::path image;
    std::optional<fs::path> annotation;
};

bool is_image(const fs::path& p) {
    const std::string ext = p.extension().string();
    return ext == ".pgm" || ext == ".png" || ext == ".PGM" || ext == ".PNG";
}

// Images of `dir` in lexicographic order, paired with `<stem>.pts` from `annotations` when present.
std::vector<Sample> list_samples(const fs::path& dir, const std::optional<fs::path>& annotations, bool require) {
    if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
    std::vector<Sample> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_image(e.path())) out.push_back({e.path(), std::nullopt});
    }
    std::sort(out.begin(), out.end(), [](const Sample& a, const Sample& b) { return a.image < b.image; });
    if (annotations) {
        for (auto& s : out) {
            const fs::path pts = *annotations / (s.image.stem().string() + ".pts");
            if (fs::exists(pts)) s.annotation = pts;
            else if (require) throw Error("missing annotation " + pts.string());
        }
    }
    if (out.empty()) throw Error("no PGM or PNG images in " + dir.string());
    return out;
}

std::vector<AnnotatedImage> load_annotated(const fs::path& images, const fs::path& annotations) {
    std::vector<AnnotatedImage> out;
    for (const auto& s : list_samples(images, annotations, true)) {
        out.push_back({load_image(s.image), load_annotation(*s.annotation).to_shape()});
    }
    return out;
}

RunConfig config_from(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

AdaptMode parse_mode(const std::string& s) {
    if (s == "none") return AdaptMode::none;
    if (s == "rep") return AdaptMode::representation;
    if (s == "fit") return AdaptMode::fitting;
    if (s == "both") return AdaptMode::joint;
    throw ConfigError("--adapt must be none, rep, fit or both");
}

// Marker present while a command is writing into `dir`; removed on success.
class RunMarker {
public:
    explicit RunMarker(fs::path dir) : path_(std::move(dir) / "INCOMPLETE") { write_file(path_, "run in progress\n"); }
    void done() { fs::remove(path_); }

private:
    fs::path path_;
};

int cmd_train(const std::string& images, const std::string& annotations, const std::string& config_path,
              const std::string& out, const std::string& eval_images, const std::string& eval_annotations) {
    const RunConfig cfg = config_from(config_path);
    const auto data = load_annotated(images, annotations);
    std::vector<AnnotatedImage> eval_data;
    if (!eval_images.empty()) eval_data = load_annotated(eval_images, eval_annotations.empty() ? eval_images : eval_annotations);
    TrainingReport report;
    const ModelSet models = train_models(data, cfg.eyes, cfg.training, &report, eval_data);
    save_models(out, models);
    std::cout << "images=" << data.size() << "\n";
    std::cout << "shape_rank=" << report.shape_rank << "\n";
    std::cout << "initial_residual=" << report.cascade.initial_residual << "\n";
    for (std::size_t k = 0; k < report.cascade.stage_residuals.size(); ++k) {
        std::cout << "stage_" << k << "_residual=" << report.cascade.stage_residuals[k] << "\n";
    }
    std::cout << "evaluator_training_accuracy=" << report.evaluator.training_accuracy << "\n";
    return 0;
}

std::optional<BoundingBox> parse_box(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::vector<double> v;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
    if (v.size() != 4 || !(v[2] > v[0]) || !(v[3] > v[1])) throw ConfigError("--init-box expects x0,y0,x1,y1");
    BoundingBox b;
    b.min = {v[0], v[1]};
    b.max = {v[2], v[3]};
    return b;
}

struct TrackArgs {
    std::string model, frames, config, out, adapt, gt, init_box, save_model;
    int eval_stride = 0;
    int threads = 0;
    bool overlays = false;
    bool timing = true;
};

int cmd_track(const TrackArgs& a) {
    RunConfig cfg = config_from(a.config);
    if (!a.adapt.empty()) cfg.tracker.adapt = parse_mode(a.adapt);
    if (a.eval_stride > 0) cfg.tracker.eval_stride = a.eval_stride;
    if (a.threads > 0) cfg.tracker.threads = a.threads;
    const auto models = std::make_shared<const ModelSet>(load_models(a.model));
    const std::optional<fs::path> gt = a.gt.empty() ? std::nullopt : std::optional<fs::path>(a.gt);
    const auto samples = list_samples(a.frames, gt, false);
    const std::optional<BoundingBox> first_box = parse_box(a.init_box);

    fs::create_directories(a.out);
    RunMarker marker(a.out);
    Tracker tracker(models, cfg.tracker);
    std::string csv = std::string(kTrackCsvHeader) + "\n";
    std::string records;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const ImagePlane frame = load_image(samples[i].image);
        std::optional<Shape> truth;
        if (samples[i].annotation) truth = load_annotation(*samples[i].annotation).to_shape();
        // Benchmark mode: the ground-truth box stands in for a face detector.
        std::optional<BoundingBox> box = truth ? std::optional<BoundingBox>(bounding_box(*truth)) : std::nullopt;
        if (!box && i == 0) box = first_box;
        const FrameResult r = tracker.process_frame(frame, box, truth ? &*truth : nullptr);
        csv += format_csv_row(to_csv_row(r, a.timing)) + "\n";
        FrameResult logged = r;
        if (!a.timing) logged.ms_fit = logged.ms_eval = logged.ms_adapt = 0.0;
        records += format_frame_record(logged) + "\n";
        if (a.overlays && !r.skipped) {
            char name[64];
            std::snprintf(name, sizeof name, "overlay_%05zu.png", i);
            save_png(fs::path(a.out) / name, draw_overlay(frame, r.shape));
        }
    }
    write_file(fs::path(a.out) / "track.csv", csv);
    write_file(fs::path(a.out) / "frames.jsonl", records);
    if (!a.save_model.empty()) save_models(a.save_model, *tracker.models());
    marker.done();
    std::cout << "frames=" << samples.size() << "\nadaptations=" << tracker.adaptations() << "\n";
    return 0;
}

struct Cumulative {
    std::string name;
    std::vector<double> errors;  // evaluated frames only
};

double fraction_below(const std::vector<double>& e, double t) {
    if (e.empty()) return 0.0;
    return static_cast<double>(std::count_if(e.begin(), e.end(), [t](double v) { return v < t; })) / e.size();
}

int cmd_evaluate(const std::string& results, const std::vector<std::string>& baselines, const std::string& out) {
    std::vector<Cumulative> runs;
    auto add = [&](const std::string& path) {
        Cumulative c{fs::path(path).parent_path().filename().string(), {}};
        if (c.name.empty()) c.name = fs::path(path).stem().string();
        for (const auto& row : parse_track_csv(read_file(path))) {
            if (row.rmse) c.errors.push_back(*row.rmse);
        }
        if (c.errors.empty()) throw Error(path + " has no frames with ground-truth error");
        runs.push_back(std::move(c));
    };
    add(results);
    for (const auto& b : baselines) add(b);

    fs::create_directories(out);
    const double thresholds[] = {0.04, 0.06, 0.08};
    std::ostringstream summary;
    summary.precision(6);
    summary << "run,frames,below_0.04,below_0.06,below_0.08,mean\n";
    for (const auto& r : runs) {
        double mean = 0.0;
        for (double e : r.errors) mean += e;
        mean /= r.errors.size();
        summary << r.name << "," << r.errors.size();
        for (double t : thresholds) summary << "," << fraction_below(r.errors, t);
        summary << "," << mean << "\n";
    }
    std::ostringstream curve;
    curve << "run,threshold,fraction\n";
    for (const auto& r : runs) {
        for (int k = 0; k <= 100; ++k) {
            const double t = 0.002 * k;
            curve << r.name << "," << t << "," << fraction_below(r.errors, t) << "\n";
        }
    }
    write_file(fs::path(out) / "summary.csv", summary.str());
    write_file(fs::path(out) / "ced.csv", curve.str());
    std::cout << summary.str();
    return 0;
}

int cmd_synth(const std::string& config_path, const std::string& out) {
    const RunConfig cfg = config_from(config_path);
    fs::create_directories(out);
    RunMarker marker(out);
    std::vector<AnnotatedImage> frames;
    if (cfg.synth_count > 0) {
        frames = generate_dataset(cfg.synth, cfg.synth_count, cfg.synth_texture);
    } else {
        frames = as_annotated(generate_sequence(cfg.synth));
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "frame_%05zu", i);
        save_pgm(fs::path(out) / (std::string(stem) + ".pgm"), frames[i].image);
        save_annotation(fs::path(out) / (std::string(stem) + ".pts"), AnnotationFile::from_shape(frames[i].shape));
    }
    // Eye-corner indices of the synthetic layout, ready to pass to `train --config`.
    RunConfig train_cfg = cfg;
    train_cfg.eyes = kSynthEyes;
    write_file(fs::path(out) / "dataset.cfg", format_config(train_cfg));
    marker.done();
    std::cout << "frames=" << frames.size() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Face alignment with online model adaptation"};
    app.require_subcommand(1);

    std::string images, annotations, config, out, eval_images, eval_annotations;
    auto* train = app.add_subcommand("train", "Train all models offline");
    train->add_option("--images", images, "Directory of training images")->required();
    train->add_option("--annotations", annotations, "Directory of .pts files (default: --images)");
    train->add_option("--config", config, "key = value configuration file");
    train->add_option("--out", out, "Output model container")->required();
    train->add_option("--evaluator-images", eval_images, "Separate image set for the evaluator");
    train->add_option("--evaluator-annotations", eval_annotations, "Annotations for --evaluator-images");

    TrackArgs ta;
    auto* track = app.add_subcommand("track", "Track a frame sequence");
    track->add_option("--model", ta.model)->required();
    track->add_option("--frames", ta.frames, "Directory of frames")->required();
    track->add_option("--config", ta.config);
    track->add_option("--out", ta.out, "Output directory")->required();
    track->add_option("--adapt", ta.adapt, "none | rep | fit | both");
    track->add_option("--eval-stride", ta.eval_stride);
    track->add_option("--gt", ta.gt, "Ground-truth .pts directory (benchmark mode)");
    track->add_option("--init-box", ta.init_box, "x0,y0,x1,y1 for the first frame");
    track->add_option("--save-model", ta.save_model, "Write the adapted model set here");
    track->add_option("--threads", ta.threads);
    track->add_flag("--overlays", ta.overlays, "Write overlay PNGs");
    track->add_flag("!--no-timing", ta.timing, "Write zero timings so repeated runs are byte-identical");

    std::string results;
    std::vector<std::string> baselines;
    auto* evaluate = app.add_subcommand("evaluate", "Cumulative error summary of tracking CSVs");
    evaluate->add_option("--results", results)->required();
    evaluate->add_option("--baseline", baselines);
    evaluate->add_option("--out", out)->required();

    auto* synth = app.add_subcommand("synth", "Generate a synthetic sequence or dataset");
    synth->add_option("--config", config);
    synth->add_option("--out", out)->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train) return cmd_train(images, annotations.empty() ? images : annotations, config, out, eval_images, eval_annotations);
        if (*track) return cmd_track(ta);
        if (*evaluate) return cmd_evaluate(results, baselines, out);
        if (*synth) return cmd_synth(config, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
