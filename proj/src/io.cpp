#include "adaptalign/io.hpp"

#include "adaptalign/error.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <sstream>

namespace adaptalign {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            if (pos < text.size()) lines.push_back(text.substr(pos));
            break;
        }
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return lines;
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        const std::size_t b = i;
        while (i < s.size() && !(s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        if (i > b) out.push_back(s.substr(b, i - b));
    }
    return out;
}

bool parse_double(std::string_view s, double* out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), *out);
    return r.ec == std::errc() && r.ptr == s.data() + s.size() && std::isfinite(*out);
}

bool parse_int(std::string_view s, long long* out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), *out);
    return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// "key: value" header line of a pts file.
long long header_value(std::string_view line, std::string_view key, int lineno) {
    const auto colon = line.find(':');
    if (colon == std::string_view::npos || trim(line.substr(0, colon)) != key) {
        throw ParseError("expected '" + std::string(key) + ": <integer>'", lineno);
    }
    long long v = 0;
    if (!parse_int(trim(line.substr(colon + 1)), &v)) {
        throw ParseError("non-numeric value for '" + std::string(key) + "'", lineno);
    }
    return v;
}

float to_unit(unsigned v, unsigned maxval) { return static_cast<float>(static_cast<double>(v) / maxval); }

unsigned quantize(float v, unsigned maxval) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<unsigned>(std::lround(c * maxval));
}

}  // namespace

// ---- annotations ----

Shape AnnotationFile::to_shape() const {
    Shape s(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) s.set_point(i, points[i]);
    return s;
}

AnnotationFile AnnotationFile::from_shape(const Shape& shape) {
    AnnotationFile a;
    a.points.reserve(shape.size());
    for (std::size_t i = 0; i < shape.size(); ++i) a.points.push_back(shape.point(i));
    return a;
}

AnnotationFile parse_annotation(std::string_view text) {
    const auto lines = split_lines(text);
    std::size_t i = 0;
    // Skip leading blank lines; every error names a 1-based line.
    auto next = [&](const char* expecting) -> std::string_view {
        while (i < lines.size() && trim(lines[i]).empty()) ++i;
        if (i >= lines.size()) {
            throw ParseError(std::string("unexpected end of file, expected ") + expecting,
                             static_cast<int>(lines.size()) + 1);
        }
        return trim(lines[i++]);
    };
    AnnotationFile a;
    std::string_view l = next("version header");
    const long long version = header_value(l, "version", static_cast<int>(i));
    if (version < 0 || version > 1'000'000) throw ParseError("version out of range", static_cast<int>(i));
    a.version = static_cast<int>(version);
    l = next("n_points header");
    const long long n = header_value(l, "n_points", static_cast<int>(i));
    if (n < 0 || n > 1'000'000) throw ParseError("n_points out of range", static_cast<int>(i));
    l = next("'{'");
    if (l != "{") throw ParseError("expected '{'", static_cast<int>(i));
    a.points.reserve(static_cast<std::size_t>(n));
    for (long long k = 0; k < n; ++k) {
        l = next("a coordinate pair");
        const int lineno = static_cast<int>(i);
        if (l == "}") {
            throw ParseError("found " + std::to_string(k) + " points, n_points says " + std::to_string(n), lineno);
        }
        const auto tok = split_ws(l);
        if (tok.size() != 2) throw ParseError("expected two coordinates", lineno);
        double x = 0.0, y = 0.0;
        if (!parse_double(tok[0], &x) || !parse_double(tok[1], &y)) {
            throw ParseError("non-numeric or non-finite coordinate", lineno);
        }
        a.points.emplace_back(x, y);
    }
    l = next("'}'");
    if (l != "}") throw ParseError("more points than n_points = " + std::to_string(n), static_cast<int>(i));
    while (i < lines.size()) {
        if (!trim(lines[i]).empty()) throw ParseError("trailing content after '}'", static_cast<int>(i) + 1);
        ++i;
    }
    return a;
}

std::string serialize_annotation(const AnnotationFile& a) {
    std::string out = "version: " + std::to_string(a.version) + "\nn_points: " + std::to_string(a.points.size()) + "\n{\n";
    for (const auto& p : a.points) out += format_double(p.x()) + " " + format_double(p.y()) + "\n";
    out += "}\n";
    return out;
}

AnnotationFile load_annotation(const std::filesystem::path& path) {
    try {
        return parse_annotation(read_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what(), 0);
    }
}

void save_annotation(const std::filesystem::path& path, const AnnotationFile& a) {
    write_file(path, serialize_annotation(a));
}

// ---- files ----

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw Error("read failed: " + path.string());
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::filesystem::path tmp = path;
    tmp += ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw Error("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error("cannot rename " + tmp.string() + ": " + ec.message());
}

// ---- PGM ----

ImagePlane decode_pgm(std::string_view bytes) {
    std::size_t pos = 0;
    auto token = [&]() -> std::string_view {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        const std::size_t b = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#') ++pos;
        if (pos == b) throw ParseError("truncated PGM header", 0);
        return bytes.substr(b, pos - b);
    };
    const std::string_view magic = token();
    if (magic != "P5" && magic != "P2") throw ParseError("not a PGM file", 0);
    long long w = 0, h = 0, maxval = 0;
    if (!parse_int(token(), &w) || !parse_int(token(), &h) || !parse_int(token(), &maxval)) {
        throw ParseError("malformed PGM header", 0);
    }
    if (w <= 0 || h <= 0 || w > 65535 || h > 65535 || maxval <= 0 || maxval > 65535) {
        throw ParseError("PGM header values out of range", 0);
    }
    const auto mv = static_cast<unsigned>(maxval);
    ImagePlane img(static_cast<int>(w), static_cast<int>(h));
    const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (magic == "P2") {
        for (std::size_t k = 0; k < count; ++k) {
            long long v = 0;
            if (!parse_int(token(), &v) || v < 0 || v > maxval) throw ParseError("bad PGM sample", 0);
            img.pixels()[k] = to_unit(static_cast<unsigned>(v), mv);
        }
        return img;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw ParseError("truncated PGM header", 0);
    }
    ++pos;
    const std::size_t bpp = mv < 256 ? 1 : 2;
    if (bytes.size() - pos < count * bpp) throw ParseError("truncated PGM raster", 0);
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::size_t k = 0; k < count; ++k) {
        const unsigned v = bpp == 1 ? raw[k] : (static_cast<unsigned>(raw[2 * k]) << 8) | raw[2 * k + 1];
        if (v > mv) throw ParseError("PGM sample exceeds maxval", 0);
        img.pixels()[k] = to_unit(v, mv);
    }
    return img;
}

std::string encode_pgm16(const ImagePlane& image) {
    std::string out = "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n65535\n";
    out.reserve(out.size() + image.pixels().size() * 2);
    for (float v : image.pixels()) {
        const unsigned q = quantize(v, 65535);
        out.push_back(static_cast<char>(q >> 8));
        out.push_back(static_cast<char>(q & 0xff));
    }
    return out;
}

void save_pgm(const std::filesystem::path& path, const ImagePlane& image) { write_file(path, encode_pgm16(image)); }

// ---- PNG ----

namespace {

struct PngReader {
    std::string_view data;
    std::size_t pos = 0;
};

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
    auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
    if (buf) *buf = msg;
    png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

ImagePlane decode_png(std::string_view bytes) {
    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
    if (!png) throw Error("libpng initialization failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("libpng initialization failed");
    }
    PngReader reader{bytes, 0};
    ImagePlane img;
    std::vector<unsigned char> raster;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("corrupt PNG: " + error, 0);
    }
    png_set_read_fn(png, &reader, [](png_structp p, png_bytep out, png_size_t n) {
        auto* r = static_cast<PngReader*>(png_get_io_ptr(p));
        if (r->data.size() - r->pos < n) png_error(p, "unexpected end of data");
        std::memcpy(out, r->data.data() + r->pos, n);
        r->pos += n;
    });
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    png_set_expand(png);
    png_set_strip_alpha(png);
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    const int depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    if (png_get_channels(png, info) != 1 || (depth != 8 && depth != 16)) png_error(png, "unsupported pixel layout");
    raster.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = raster.data() + y * stride;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    img = ImagePlane(static_cast<int>(w), static_cast<int>(h));
    const unsigned maxval = depth == 8 ? 255u : 65535u;
    for (png_uint_32 y = 0; y < h; ++y) {
        for (png_uint_32 x = 0; x < w; ++x) {
            const unsigned char* p = rows[y] + (depth == 8 ? x : 2 * x);
            const unsigned v = depth == 8 ? p[0] : (static_cast<unsigned>(p[0]) << 8) | p[1];
            img.at(static_cast<int>(x), static_cast<int>(y)) = to_unit(v, maxval);
        }
    }
    return img;
}

std::string encode_png(int width, int height, int channels, const std::vector<std::uint8_t>& pixels) {
    std::string error;
    std::string out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
    if (!png) throw Error("libpng initialization failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("libpng initialization failed");
    }
    std::vector<png_const_bytep> rows(static_cast<std::size_t>(height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("PNG encoding failed: " + error);
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t n) {
            static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), n);
        },
        nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
    for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + static_cast<std::size_t>(y) * stride;
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

}  // namespace

ImagePlane load_image(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    try {
        if (bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0) {
            return decode_png(bytes);
        }
        if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2')) return decode_pgm(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what(), 0);
    }
    throw ParseError(path.string() + ": unsupported image format (expected PGM or PNG)", 0);
}

void save_png(const std::filesystem::path& path, const ImagePlane& image) {
    std::vector<std::uint8_t> px(image.pixels().size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(quantize(image.pixels()[i], 255));
    write_file(path, encode_png(image.width(), image.height(), 1, px));
}

void save_png(const std::filesystem::path& path, const RgbImage& image) {
    if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
        throw DimensionError("RGB buffer size does not match its dimensions");
    }
    write_file(path, encode_png(image.width, image.height, 3, image.pixels));
}

RgbImage draw_overlay(const ImagePlane& image, const Shape& shape) {
    RgbImage out{image.width(), image.height(), {}};
    out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    for (std::size_t i = 0; i < image.pixels().size(); ++i) {
        const auto g = static_cast<std::uint8_t>(quantize(image.pixels()[i], 255));
        out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = g;
    }
    auto put = [&](int x, int y) {
        if (x < 0 || y < 0 || x >= out.width || y >= out.height) return;
        const std::size_t k = 3 * (static_cast<std::size_t>(y) * out.width + x);
        out.pixels[k] = 255;
        out.pixels[k + 1] = 40;
        out.pixels[k + 2] = 40;
    };
    for (std::size_t i = 0; i < shape.size(); ++i) {
        const Eigen::Vector2d p = shape.point(i);
        if (!p.allFinite()) continue;
        const int cx = static_cast<int>(std::lround(p.x())), cy = static_cast<int>(std::lround(p.y()));
        for (int d = -2; d <= 2; ++d) {
            put(cx + d, cy);
            put(cx, cy + d);
        }
    }
    return out;
}

// ---- frame records ----

std::string format_frame_record(const FrameResult& r) {
    nlohmann::json j;
    j["frame"] = r.frame;
    nlohmann::json pts = nlohmann::json::array();
    for (std::size_t i = 0; i < r.shape.size(); ++i) pts.push_back({r.shape.point(i).x(), r.shape.point(i).y()});
    j["points"] = std::move(pts);
    j["rmse"] = r.rmse ? nlohmann::json(*r.rmse) : nlohmann::json(nullptr);
    j["aligned"] = r.aligned;
    j["confidence"] = r.confidence;
    j["evaluated"] = r.evaluated;
    j["reinitialized"] = r.reinitialized;
    j["skipped"] = r.skipped;
    j["adapted"] = r.adapted;
    j["adapt_partial"] = r.adapt_partial;
    j["ms_fit"] = r.ms_fit;
    j["ms_eval"] = r.ms_eval;
    j["ms_adapt"] = r.ms_adapt;
    return j.dump();
}

FrameResult parse_frame_record(std::string_view line) {
    try {
        const nlohmann::json j = nlohmann::json::parse(line);
        FrameResult r;
        r.frame = j.at("frame").get<int>();
        const auto& pts = j.at("points");
        r.shape = Shape(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) r.shape.set_point(i, {pts[i].at(0).get<double>(), pts[i].at(1).get<double>()});
        if (!j.at("rmse").is_null()) r.rmse = j.at("rmse").get<double>();
        r.aligned = j.at("aligned").get<bool>();
        r.confidence = j.at("confidence").get<double>();
        r.evaluated = j.at("evaluated").get<bool>();
        r.reinitialized = j.at("reinitialized").get<bool>();
        r.skipped = j.at("skipped").get<bool>();
        r.adapted = j.at("adapted").get<bool>();
        r.adapt_partial = j.at("adapt_partial").get<bool>();
        r.ms_fit = j.at("ms_fit").get<double>();
        r.ms_eval = j.at("ms_eval").get<double>();
        r.ms_adapt = j.at("ms_adapt").get<double>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad frame record: ") + e.what(), 0);
    }
}

// ---- tracking CSV ----

TrackCsvRow to_csv_row(const FrameResult& r, bool with_timing) {
    TrackCsvRow row;
    row.frame = r.frame;
    row.rmse = r.rmse;
    row.verdict = r.skipped ? "skipped" : (r.aligned ? "aligned" : "misaligned");
    row.adapted = r.adapted;
    if (with_timing) {
        row.ms_fit = r.ms_fit;
        row.ms_eval = r.ms_eval;
        row.ms_adapt = r.ms_adapt;
    }
    return row;
}

std::string format_csv_row(const TrackCsvRow& row) {
    return std::to_string(row.frame) + "," + (row.rmse ? format_double(*row.rmse) : std::string()) + "," + row.verdict +
           "," + (row.adapted ? "1" : "0") + "," + format_double(row.ms_fit) + "," + format_double(row.ms_eval) + "," +
           format_double(row.ms_adapt);
}

std::vector<TrackCsvRow> parse_track_csv(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.empty() || trim(lines[0]) != kTrackCsvHeader) throw ParseError("missing tracking CSV header", 1);
    std::vector<TrackCsvRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const int lineno = static_cast<int>(i) + 1;
        const std::string_view l = trim(lines[i]);
        if (l.empty()) continue;
        std::vector<std::string_view> f;
        std::size_t b = 0;
        for (;;) {
            const auto c = l.find(',', b);
            f.push_back(l.substr(b, c == std::string_view::npos ? std::string_view::npos : c - b));
            if (c == std::string_view::npos) break;
            b = c + 1;
        }
        if (f.size() != 7) throw ParseError("expected 7 fields", lineno);
        TrackCsvRow row;
        long long frame = 0;
        if (!parse_int(f[0], &frame)) throw ParseError("bad frame index", lineno);
        row.frame = static_cast<int>(frame);
        if (!f[1].empty()) {
            double v = 0.0;
            if (!parse_double(f[1], &v)) throw ParseError("bad rmse", lineno);
            row.rmse = v;
        }
        row.verdict = std::string(f[2]);
        if (row.verdict != "aligned" && row.verdict != "misaligned" && row.verdict != "skipped") {
            throw ParseError("bad verdict", lineno);
        }
        if (f[3] != "0" && f[3] != "1") throw ParseError("bad adapted flag", lineno);
        row.adapted = f[3] == "1";
        if (!parse_double(f[4], &row.ms_fit) || !parse_double(f[5], &row.ms_eval) || !parse_double(f[6], &row.ms_adapt)) {
            throw ParseError("bad timing field", lineno);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace adaptalign
