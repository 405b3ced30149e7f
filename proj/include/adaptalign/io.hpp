#pragma once

#include "adaptalign/geometry.hpp"
#include "adaptalign/image.hpp"
#include "adaptalign/model.hpp"
#include "adaptalign/synth.hpp"
#include "adaptalign/tracker.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace adaptalign {

// ---- Landmark annotations (pts layout) ----

struct AnnotationFile {
    int version = 1;
    std::vector<Eigen::Vector2d> points;

    Shape to_shape() const;
    static AnnotationFile from_shape(const Shape& shape);
    bool operator==(const AnnotationFile&) const = default;
};

// Throws ParseError naming the offending line.
AnnotationFile parse_annotation(std::string_view text);
// Shortest round-trip decimal formatting, so parse(serialize(a)) == a bit for bit.
std::string serialize_annotation(const AnnotationFile& annotation);

AnnotationFile load_annotation(const std::filesystem::path& path);
void save_annotation(const std::filesystem::path& path, const AnnotationFile& annotation);

// ---- Images ----

// Binary (P5) or ASCII (P2) PGM, 8 or 16 bit; intensities scaled to [0, 1].
ImagePlane decode_pgm(std::string_view bytes);
// 16-bit binary PGM.
std::string encode_pgm16(const ImagePlane& image);

// Dispatches on the file signature: PGM or PNG (colour converted to gray).
ImagePlane load_image(const std::filesystem::path& path);
void save_pgm(const std::filesystem::path& path, const ImagePlane& image);
// 8-bit grayscale PNG.
void save_png(const std::filesystem::path& path, const ImagePlane& image);

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

// Gray frame with the landmarks drawn as small crosses.
RgbImage draw_overlay(const ImagePlane& image, const Shape& shape);
void save_png(const std::filesystem::path& path, const RgbImage& image);

// ---- Model container ----

inline constexpr std::uint32_t kContainerVersion = 1;

std::string serialize_models(const ModelSet& models);
// Validates magic, version, checksums and cross-component dimensions.
ModelSet deserialize_models(std::string_view bytes);

void save_models(const std::filesystem::path& path, const ModelSet& models);
ModelSet load_models(const std::filesystem::path& path);

// ---- Run configuration ----

struct RunConfig {
    EyeCorners eyes;
    TrainingConfig training;
    TrackerConfig tracker;
    SynthConfig synth;
    int synth_count = 0;  // > 0: independent frames instead of one sequence
    TextureRange synth_texture;

    bool operator==(const RunConfig&) const = default;
};

// Flat `key = value` lines; '#' starts a comment. Unknown keys and malformed
// values throw (ParseError for syntax, ConfigError for unknown keys).
RunConfig parse_config(std::string_view text);
// Every key with its current value, parseable by parse_config.
std::string format_config(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

// ---- Per-frame records ----

// One JSON object per line.
std::string format_frame_record(const FrameResult& result);
FrameResult parse_frame_record(std::string_view line);

// Tracking CSV: frame,rmse,verdict,adapted,ms_fit,ms_eval,ms_adapt
inline constexpr std::string_view kTrackCsvHeader = "frame,rmse,verdict,adapted,ms_fit,ms_eval,ms_adapt";

struct TrackCsvRow {
    int frame = 0;
    std::optional<double> rmse;  // empty when no ground truth
    std::string verdict;         // aligned | misaligned | skipped
    bool adapted = false;
    double ms_fit = 0.0, ms_eval = 0.0, ms_adapt = 0.0;

    bool operator==(const TrackCsvRow&) const = default;
};

TrackCsvRow to_csv_row(const FrameResult& result, bool with_timing);
std::string format_csv_row(const TrackCsvRow& row);
// Rows of a tracking CSV; the header is required.
std::vector<TrackCsvRow> parse_track_csv(std::string_view text);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary file and renames, so readers never see partial output.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace adaptalign
