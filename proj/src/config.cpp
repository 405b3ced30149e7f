#include "adaptalign/error.hpp"
#include "adaptalign/io.hpp"

#include <charconv>
#include <functional>
#include <map>

namespace adaptalign {

namespace {

struct Field {
    std::function<void(RunConfig&, std::string_view, int)> set;
    std::function<std::string(const RunConfig&)> get;
};

std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(std::string_view s, int line, std::string_view key) {
    T v{};
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw ParseError("invalid value '" + std::string(s) + "' for " + std::string(key), line);
    }
    return v;
}

bool parse_bool(std::string_view s, int line, std::string_view key) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ParseError("expected true or false for " + std::string(key), line);
}

// `ref` yields the member for writing, `val` its current value.
template <typename T, typename Ref, typename Val>
Field number(Ref ref, Val val) {
    return {[ref](RunConfig& c, std::string_view v, int line) { ref(c) = parse_number<T>(v, line, "key"); },
            [val](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>) {
                    return fmt(val(c));
                } else {
                    return std::to_string(val(c));
                }
            }};
}

template <typename Ref, typename Val>
Field boolean(Ref ref, Val val) {
    return {[ref](RunConfig& c, std::string_view v, int line) { ref(c) = parse_bool(v, line, "key"); },
            [val](const RunConfig& c) { return std::string(val(c) ? "true" : "false"); }};
}

const std::map<std::string, Field, std::less<>>& fields() {
    static const std::map<std::string, Field, std::less<>> table = [] {
        std::map<std::string, Field, std::less<>> t;
#define NUM(key, type, expr) \
    t[key] = number<type>([](RunConfig& c) -> type& { return expr; }, [](const RunConfig& c) -> type { return expr; })
#define BOOL(key, expr) \
    t[key] = boolean([](RunConfig& c) -> bool& { return expr; }, [](const RunConfig& c) -> bool { return expr; })
        NUM("eye_left", int, c.eyes.left);
        NUM("eye_right", int, c.eyes.right);

        NUM("shape_energy", double, c.training.shape_rank.energy);
        NUM("shape_max_rank", Eigen::Index, c.training.shape_rank.max_rank);

        NUM("hog_patch_side", int, c.training.appearance.hog.patch_side);
        NUM("hog_cells", int, c.training.appearance.hog.cells);
        NUM("hog_bins", int, c.training.appearance.hog.bins);
        NUM("hog_clip", double, c.training.appearance.hog.clip);
        NUM("support_side", int, c.training.appearance.support_side);
        NUM("expert_negatives", int, c.training.appearance.negatives_per_image);
        NUM("expert_min_displacement", double, c.training.appearance.min_negative_displacement);
        NUM("expert_cv_folds", int, c.training.appearance.cv_folds);
        NUM("expert_seed", std::uint64_t, c.training.appearance.seed);
        NUM("appearance_energy", double, c.training.appearance.rank.energy);
        NUM("appearance_max_rank", Eigen::Index, c.training.appearance.rank.max_rank);
        t["expert_ridge_grid"] = Field{
            [](RunConfig& c, std::string_view v, int line) {
                std::vector<double> grid;
                std::size_t b = 0;
                for (;;) {
                    const auto e = v.find(',', b);
                    std::string_view tok = v.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b);
                    while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
                    while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
                    grid.push_back(parse_number<double>(tok, line, "expert_ridge_grid"));
                    if (e == std::string_view::npos) break;
                    b = e + 1;
                }
                c.training.appearance.ridge_grid = std::move(grid);
            },
            [](const RunConfig& c) {
                std::string s;
                for (double g : c.training.appearance.ridge_grid) s += (s.empty() ? "" : ",") + fmt(g);
                return s;
            }};

        NUM("cascade_stages", int, c.training.cascade.stages);
        NUM("cascade_samples", int, c.training.cascade.samples_per_image);
        NUM("cascade_ridge", double, c.training.cascade.ridge);
        NUM("perturb_scale", double, c.training.cascade.rigid.scale);
        NUM("perturb_rotation_deg", double, c.training.cascade.rigid.rotation_deg);
        NUM("perturb_translation", double, c.training.cascade.rigid.translation);
        NUM("perturb_nonrigid", double, c.training.cascade.rigid.nonrigid);
        NUM("variance_floor", double, c.training.cascade.variance_floor);
        NUM("cascade_seed", std::uint64_t, c.training.cascade.seed);

        NUM("eval_side", int, c.training.evaluator.side);
        NUM("eval_dilation", int, c.training.evaluator.dilation);
        NUM("eval_margin", double, c.training.evaluator.margin);
        NUM("eval_conv1", int, c.training.evaluator.conv1_channels);
        NUM("eval_conv2", int, c.training.evaluator.conv2_channels);
        NUM("eval_kernel", int, c.training.evaluator.kernel);
        NUM("eval_hidden", int, c.training.evaluator.hidden);
        t["eval_wiring"] = Field{
            [](RunConfig& c, std::string_view v, int line) {
                if (v == "input") c.training.evaluator.wiring = EvaluatorWiring::input_concat;
                else if (v == "fc") c.training.evaluator.wiring = EvaluatorWiring::fc_concat;
                else throw ParseError("eval_wiring must be input or fc", line);
            },
            [](const RunConfig& c) {
                return std::string(c.training.evaluator.wiring == EvaluatorWiring::input_concat ? "input" : "fc");
            }};
        NUM("eval_negatives", int, c.training.evaluator_sampling.negatives_per_image);
        NUM("eval_tolerance", double, c.training.evaluator_sampling.tolerance);
        NUM("eval_inflation", double, c.training.evaluator_sampling.inflation);
        NUM("eval_occluded", int, c.training.evaluator_sampling.occluded_per_image);
        NUM("eval_sampling_seed", std::uint64_t, c.training.evaluator_sampling.seed);
        NUM("eval_epochs", int, c.training.evaluator_training.epochs);
        NUM("eval_learning_rate", double, c.training.evaluator_training.learning_rate);
        NUM("eval_batch", int, c.training.evaluator_training.batch_size);
        NUM("eval_seed", std::uint64_t, c.training.evaluator_training.seed);

        NUM("n_buf", int, c.tracker.buffer_capacity);
        NUM("eval_stride", int, c.tracker.eval_stride);
        NUM("eval_threshold", double, c.tracker.threshold);
        t["adapt"] = Field{
            [](RunConfig& c, std::string_view v, int line) {
                if (v == "none") c.tracker.adapt = AdaptMode::none;
                else if (v == "rep") c.tracker.adapt = AdaptMode::representation;
                else if (v == "fit") c.tracker.adapt = AdaptMode::fitting;
                else if (v == "both") c.tracker.adapt = AdaptMode::joint;
                else throw ParseError("adapt must be none, rep, fit or both", line);
            },
            [](const RunConfig& c) {
                switch (c.tracker.adapt) {
                    case AdaptMode::none: return std::string("none");
                    case AdaptMode::representation: return std::string("rep");
                    case AdaptMode::fitting: return std::string("fit");
                    case AdaptMode::joint: break;
                }
                return std::string("both");
            }};
        NUM("adapt_appearance_samples", int, c.tracker.appearance_samples);
        NUM("adapt_regression_samples", int, c.tracker.regression_samples);
        NUM("adapt_row_weight", double, c.tracker.row_weight);
        NUM("forgetting", double, c.tracker.forgetting);
        BOOL("adapt_shape", c.tracker.update_shape);
        BOOL("adapt_recenter", c.tracker.recenter);
        NUM("tracker_seed", std::uint64_t, c.tracker.seed);
        NUM("threads", int, c.tracker.threads);

        NUM("synth_landmarks", int, c.synth.landmarks);
        NUM("synth_image_side", int, c.synth.image_side);
        NUM("synth_frames", int, c.synth.frames);
        NUM("synth_scale_amplitude", double, c.synth.scale_amplitude);
        NUM("synth_rotation_amplitude_deg", double, c.synth.rotation_amplitude_deg);
        NUM("synth_translation_amplitude", double, c.synth.translation_amplitude);
        NUM("synth_deformation_amplitude", double, c.synth.deformation_amplitude);
        NUM("synth_identity_std", double, c.synth.identity_std);
        NUM("synth_drift_rate", double, c.synth.drift_rate);
        NUM("synth_drift_start", double, c.synth.drift_start);
        NUM("synth_noise_std", double, c.synth.noise_std);
        NUM("synth_occlusion_probability", double, c.synth.occlusion_probability);
        NUM("synth_occlusion_size", double, c.synth.occlusion_size);
        NUM("synth_burst_start", int, c.synth.burst_start);
        NUM("synth_burst_length", int, c.synth.burst_length);
        NUM("synth_seed", std::uint64_t, c.synth.seed);
        NUM("synth_count", int, c.synth_count);
        NUM("synth_texture_lo", double, c.synth_texture.lo);
        NUM("synth_texture_hi", double, c.synth_texture.hi);
#undef NUM
#undef BOOL
        return t;
    }();
    return table;
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_config(std::string_view text) {
    RunConfig c;
    std::map<std::string, int, std::less<>> seen;
    int lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++lineno;
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected key = value", lineno);
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        if (key.empty()) throw ParseError("missing key", lineno);
        if (value.empty()) throw ParseError("missing value for " + std::string(key), lineno);
        const auto it = fields().find(key);
        if (it == fields().end()) {
            throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + std::string(key) + "'");
        }
        if (const auto s = seen.find(key); s != seen.end()) {
            throw ParseError("duplicate key '" + std::string(key) + "' (first set on line " + std::to_string(s->second) + ")",
                             lineno);
        }
        seen.emplace(std::string(key), lineno);
        try {
            it->second.set(c, value, lineno);
        } catch (const ParseError& e) {
            throw ParseError("invalid value '" + std::string(value) + "' for " + std::string(key), lineno);
        }
    }
    return c;
}

std::string format_config(const RunConfig& config) {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
    return out;
}

RunConfig load_config(const std::filesystem::path& path) {
    try {
        return parse_config(read_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what(), 0);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace adaptalign
