#include "adaptalign/error.hpp"
#include "adaptalign/io.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <map>

namespace adaptalign {

namespace {

constexpr std::array<char, 8> kMagic{'A', 'D', 'A', 'P', 'T', 'M', 'D', 'L'};
constexpr std::array<const char*, 7> kSections{"META", "SHAP", "EXPT", "APPS", "CASC", "PERT", "EVAL"};
// Guards against absurd lengths in corrupted files before any allocation.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void i32(int v) { u32(static_cast<std::uint32_t>(v)); }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void vec(const Eigen::VectorXd& v) {
        u64(static_cast<std::uint64_t>(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
    }
    void vec(const std::vector<double>& v) {
        u64(v.size());
        for (double x : v) f64(x);
    }
    // Column-major.
    void mat(const Eigen::MatrixXd& m) {
        u64(static_cast<std::uint64_t>(m.rows()));
        u64(static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            for (Eigen::Index r = 0; r < m.rows(); ++r) f64(m(r, c));
        }
    }
    void raw(std::string_view s) { buf_.append(s); }
    std::string& str() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() {
        const auto* p = reinterpret_cast<const unsigned char*>(take(4).data());
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }
    std::uint64_t u64() {
        const auto* p = reinterpret_cast<const unsigned char*>(take(8).data());
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }
    int i32() { return static_cast<int>(u32()); }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::uint64_t count(std::uint64_t element_bytes) {
        const std::uint64_t n = u64();
        if (n > kMaxElements || n * element_bytes > remaining()) fail("element count exceeds section size");
        return n;
    }
    Eigen::VectorXd vec() {
        const auto n = count(8);
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = f64();
        return v;
    }
    std::vector<double> dvec() {
        const auto n = count(8);
        std::vector<double> v(n);
        for (double& x : v) x = f64();
        return v;
    }
    Eigen::MatrixXd mat() {
        const std::uint64_t rows = u64();
        const std::uint64_t cols = u64();
        if (rows > kMaxElements || cols > kMaxElements || (cols != 0 && rows > kMaxElements / cols) ||
            rows * cols * 8 > remaining()) {
            fail("matrix size exceeds section size");
        }
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = f64();
        }
        return m;
    }
    std::string_view take(std::size_t n) {
        if (remaining() < n) fail("truncated");
        const auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    void expect_end() {
        if (remaining() != 0) fail("trailing bytes");
    }
    [[noreturn]] void fail(const std::string& why) const { throw IntegrityError("model container " + what_ + ": " + why); }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::uint32_t checksum(std::string_view s) {
    uLong c = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large payloads in chunks.
    std::size_t pos = 0;
    while (pos < s.size()) {
        const std::size_t n = std::min<std::size_t>(s.size() - pos, 1u << 30);
        c = crc32(c, reinterpret_cast<const Bytef*>(s.data() + pos), static_cast<uInt>(n));
        pos += n;
    }
    return static_cast<std::uint32_t>(c);
}

void put_subspace(Writer& w, const PcaSubspace& s) {
    w.vec(s.mean);
    w.mat(s.basis);
    w.vec(s.singular_values);
    w.f64(s.observation_weight);
}

PcaSubspace get_subspace(Reader& r) {
    PcaSubspace s;
    s.mean = r.vec();
    s.basis = r.mat();
    s.singular_values = r.vec();
    s.observation_weight = r.f64();
    return s;
}

std::string meta_section(const ModelSet& m) {
    Writer w;
    const AppearanceConfig& a = m.appearance.config;
    w.i32(a.hog.patch_side);
    w.i32(a.hog.cells);
    w.i32(a.hog.bins);
    w.f64(a.hog.clip);
    w.i32(a.support_side);
    w.i32(a.negatives_per_image);
    w.f64(a.min_negative_displacement);
    w.i32(a.cv_folds);
    w.vec(a.ridge_grid);
    w.f64(a.rank.energy);
    w.i64(a.rank.max_rank);
    w.u64(a.seed);
    w.i32(m.shape.eyes.left);
    w.i32(m.shape.eyes.right);
    w.f64(kReferenceInterocular);
    return std::move(w.str());
}

void read_meta(Reader& r, ModelSet& m) {
    AppearanceConfig& a = m.appearance.config;
    a.hog.patch_side = r.i32();
    a.hog.cells = r.i32();
    a.hog.bins = r.i32();
    a.hog.clip = r.f64();
    a.support_side = r.i32();
    a.negatives_per_image = r.i32();
    a.min_negative_displacement = r.f64();
    a.cv_folds = r.i32();
    a.ridge_grid = r.dvec();
    a.rank.energy = r.f64();
    a.rank.max_rank = r.i64();
    a.seed = r.u64();
    m.shape.eyes.left = r.i32();
    m.shape.eyes.right = r.i32();
    if (r.f64() != kReferenceInterocular) r.fail("reference interocular distance differs from this build");
}

std::string section_payload(const ModelSet& m, std::string_view tag) {
    if (tag == "META") return meta_section(m);
    Writer w;
    if (tag == "SHAP") {
        put_subspace(w, m.shape.subspace);
    } else if (tag == "EXPT") {
        w.u64(m.appearance.experts.size());
        for (const auto& e : m.appearance.experts) {
            w.i32(e.landmark);
            w.vec(e.weights);
            w.f64(e.bias);
        }
    } else if (tag == "APPS") {
        w.u64(m.appearance.subspaces.size());
        for (const auto& s : m.appearance.subspaces) put_subspace(w, s);
    } else if (tag == "CASC") {
        w.u64(m.stages.size());
        for (const auto& s : m.stages) {
            w.mat(s.stage.regressor);
            w.f64(s.stage.ridge);
            w.mat(s.precision);
        }
    } else if (tag == "PERT") {
        w.u64(m.perturbation.variances.size());
        for (const auto& v : m.perturbation.variances) w.vec(v);
    } else if (tag == "EVAL") {
        const EvaluatorConfig& c = m.evaluator.config;
        w.i32(c.side);
        w.i32(c.dilation);
        w.f64(c.margin);
        w.i32(c.conv1_channels);
        w.i32(c.conv2_channels);
        w.i32(c.kernel);
        w.i32(c.hidden);
        w.u8(static_cast<std::uint8_t>(c.wiring));
        w.i32(m.evaluator.landmarks);
        for (const auto* b : m.evaluator.blocks()) w.vec(*b);
    }
    return std::move(w.str());
}

void read_section(std::string_view tag, Reader& r, ModelSet& m) {
    if (tag == "META") {
        read_meta(r, m);
    } else if (tag == "SHAP") {
        m.shape.subspace = get_subspace(r);
    } else if (tag == "EXPT") {
        const auto n = r.count(20);
        m.appearance.experts.resize(n);
        for (auto& e : m.appearance.experts) {
            e.landmark = r.i32();
            e.weights = r.vec();
            e.bias = r.f64();
        }
    } else if (tag == "APPS") {
        const auto n = r.count(40);
        m.appearance.subspaces.resize(n);
        for (auto& s : m.appearance.subspaces) s = get_subspace(r);
    } else if (tag == "CASC") {
        const auto n = r.count(40);
        m.stages.resize(n);
        for (auto& s : m.stages) {
            s.stage.regressor = r.mat();
            s.stage.ridge = r.f64();
            s.precision = r.mat();
        }
    } else if (tag == "PERT") {
        const auto n = r.count(8);
        m.perturbation.variances.resize(n);
        for (auto& v : m.perturbation.variances) v = r.vec();
    } else if (tag == "EVAL") {
        EvaluatorConfig& c = m.evaluator.config;
        c.side = r.i32();
        c.dilation = r.i32();
        c.margin = r.f64();
        c.conv1_channels = r.i32();
        c.conv2_channels = r.i32();
        c.kernel = r.i32();
        c.hidden = r.i32();
        const std::uint8_t wiring = r.u8();
        if (wiring > 1) r.fail("unknown evaluator wiring");
        c.wiring = static_cast<EvaluatorWiring>(wiring);
        m.evaluator.landmarks = r.i32();
        for (auto* b : m.evaluator.blocks()) *b = r.dvec();
    }
    r.expect_end();
}

}  // namespace

std::string serialize_models(const ModelSet& models) {
    check_consistency(models);
    Writer w;
    w.raw(std::string_view(kMagic.data(), kMagic.size()));
    w.u32(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(kSections.size()));
    for (const char* tag : kSections) {
        const std::string payload = section_payload(models, tag);
        w.raw(std::string_view(tag, 4));
        w.u64(payload.size());
        w.u32(checksum(payload));
        w.raw(payload);
    }
    return std::move(w.str());
}

ModelSet deserialize_models(std::string_view bytes) {
    Reader r(bytes, "header");
    if (r.remaining() < kMagic.size() || std::memcmp(r.take(kMagic.size()).data(), kMagic.data(), kMagic.size()) != 0) {
        throw IntegrityError("not a model container (bad magic)");
    }
    const std::uint32_t version = r.u32();
    if (version != kContainerVersion) {
        throw IntegrityError("model container version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kContainerVersion) + ")");
    }
    const std::uint32_t sections = r.u32();
    if (sections != kSections.size()) r.fail("unexpected section count");
    ModelSet m;
    std::map<std::string, bool> seen;
    for (std::uint32_t s = 0; s < sections; ++s) {
        const std::string tag(r.take(4));
        const std::uint64_t length = r.u64();
        const std::uint32_t crc = r.u32();
        if (length > r.remaining()) r.fail("section " + tag + " is truncated");
        const std::string_view payload = r.take(static_cast<std::size_t>(length));
        bool known = false;
        for (const char* t : kSections) known = known || tag == t;
        if (!known) r.fail("unknown section '" + tag + "'");
        if (seen[tag]) r.fail("duplicate section " + tag);
        seen[tag] = true;
        if (checksum(payload) != crc) throw IntegrityError("model container: checksum mismatch in section " + tag);
        Reader sr(payload, "section " + tag);
        read_section(tag, sr, m);
    }
    r.expect_end();
    try {
        check_consistency(m);
    } catch (const DimensionError& e) {
        throw IntegrityError(std::string("model container is inconsistent: ") + e.what());
    }
    return m;
}

void save_models(const std::filesystem::path& path, const ModelSet& models) {
    write_file(path, serialize_models(models));
}

ModelSet load_models(const std::filesystem::path& path) { return deserialize_models(read_file(path)); }

}  // namespace adaptalign
