#include "hsicl/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hsicl/config.hpp"
#include "hsicl/error.hpp"
#include "hsicl/rng.hpp"

namespace hsicl {

namespace {

constexpr char kBundleMagic[4] = {'H', 'S', 'B', '1'};
constexpr char kCheckpointMagic[4] = {'H', 'S', 'C', 'K'};
constexpr std::size_t kMaxHeader = 1 << 20;

template <typename U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& in, std::size_t at) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        v |= static_cast<U>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

void put_values(std::string& out, std::span<const double> values, DType dtype) {
    if (dtype == DType::F32)
        for (double v : values) put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    else
        for (double v : values) put_le(out, std::bit_cast<std::uint64_t>(v));
}

void get_values(const std::string& in, std::size_t at, std::span<double> values, DType dtype) {
    if (dtype == DType::F32)
        for (std::size_t i = 0; i < values.size(); ++i)
            values[i] = std::bit_cast<float>(get_le<std::uint32_t>(in, at + 4 * i));
    else
        for (std::size_t i = 0; i < values.size(); ++i)
            values[i] = std::bit_cast<double>(get_le<std::uint64_t>(in, at + 8 * i));
}

std::size_t width(DType d) { return d == DType::F32 ? 4 : 8; }

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex64(const std::string& s, const std::string& what) {
    if (s.size() != 16) throw FormatError(what + ": expected 16 hex digits");
    std::uint64_t v = 0;
    for (char c : s) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
        else throw FormatError(what + ": invalid hex digit");
    }
    return v;
}

DType parse_dtype(const std::string& s, const std::string& source) {
    if (s == "f32") return DType::F32;
    if (s == "f64") return DType::F64;
    throw FormatError(source + ": unknown dtype '" + s + "'");
}

std::string build_header(const HsiBundle& b) {
    const HyperCube& c = b.cube;
    std::vector<std::string> payloads{"cube"};
    if (b.clean) payloads.push_back("clean");
    if (b.labels) payloads.push_back("labels");
    if (!c.wavelengths().empty()) payloads.push_back("wavelengths");
    std::string list;
    for (std::size_t i = 0; i < payloads.size(); ++i) list += (i ? "," : "") + payloads[i];

    std::string h;
    h += "format = HSB1\n";
    h += "version = 1\n";
    h += "bands = " + std::to_string(c.bands()) + "\n";
    h += "rows = " + std::to_string(c.rows()) + "\n";
    h += "cols = " + std::to_string(c.cols()) + "\n";
    h += "dtype = " + std::string(dtype_name(b.dtype)) + "\n";
    h += "endianness = little\n";
    h += "wavelength_min = " + (c.wavelengths().empty() ? "none" : format_double(c.wavelengths().front())) + "\n";
    h += "wavelength_max = " + (c.wavelengths().empty() ? "none" : format_double(c.wavelengths().back())) + "\n";
    h += "label_dim = " + std::to_string(b.labels ? b.labels->dim() : 0) + "\n";
    h += "payloads = " + list + "\n";
    h += "name = " + c.name() + "\n";
    h += "seed = " + std::to_string(b.seed) + "\n";
    h += "config_digest = " + hex64(b.config_digest) + "\n";
    h += "header_digest = " + hex64(fnv1a(h)) + "\n";
    return h;
}

struct ParsedHeader {
    BundleHeader fields;
    std::size_t payload_start = 0;
};

ParsedHeader parse_header(const std::string& bytes, const std::string& source) {
    if (bytes.size() < 8) throw FormatError(source + ": file too short for a bundle header (" +
                                            std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), kBundleMagic, 4) != 0) throw FormatError(source + ": bad magic, not an HSB1 bundle");
    const std::uint32_t len = get_le<std::uint32_t>(bytes, 4);
    if (len > kMaxHeader) throw FormatError(source + ": header length " + std::to_string(len) + " is implausible");
    if (bytes.size() < 8 + static_cast<std::size_t>(len))
        throw FormatError(source + ": truncated header: expected at least " + std::to_string(8 + len) +
                          " bytes, found " + std::to_string(bytes.size()));
    const std::string text = bytes.substr(8, len);

    const auto digest_pos = text.rfind("header_digest = ");
    if (digest_pos == std::string::npos) throw FormatError(source + ": header has no digest");
    const KeyValueDoc doc = KeyValueDoc::parse(text, source + " header");
    const std::uint64_t stored = parse_hex64(doc.get("header_digest"), source + ": header_digest");
    if (stored != fnv1a(std::string_view(text).substr(0, digest_pos)))
        throw FormatError(source + ": header digest mismatch (header corrupted)");
    if (doc.get("format") != "HSB1") throw FormatError(source + ": unsupported format '" + doc.get("format") + "'");
    if (doc.get("version") != "1") throw FormatError(source + ": unsupported version " + doc.get("version"));
    if (doc.get("endianness") != "little")
        throw FormatError(source + ": unsupported endianness '" + doc.get("endianness") + "'");

    ParsedHeader p;
    BundleHeader& h = p.fields;
    h.bands = doc.get_uint("bands");
    h.rows = doc.get_uint("rows");
    h.cols = doc.get_uint("cols");
    h.label_dim = doc.get_uint("label_dim");
    h.dtype = parse_dtype(doc.get("dtype"), source);
    if (doc.get("wavelength_min") != "none") h.wavelength_min = doc.get_double("wavelength_min");
    if (doc.get("wavelength_max") != "none") h.wavelength_max = doc.get_double("wavelength_max");
    std::stringstream ss(doc.get("payloads"));
    for (std::string item; std::getline(ss, item, ',');) h.payloads.push_back(item);
    h.name = doc.get("name");
    h.seed = doc.get_uint("seed");
    h.config_digest = parse_hex64(doc.get("config_digest"), source + ": config_digest");
    if (h.bands == 0 || h.rows == 0 || h.cols == 0) throw FormatError(source + ": header has a zero dimension");
    p.payload_start = 8 + len;
    return p;
}

std::size_t payload_bytes(const BundleHeader& h, const std::string& name) {
    const std::size_t px = h.rows * h.cols;
    if (name == "cube" || name == "clean") return h.bands * px * width(h.dtype);
    if (name == "labels") return h.label_dim * px * width(h.dtype);
    if (name == "wavelengths") return h.bands * 8;
    throw FormatError("unknown payload '" + name + "'");
}

}  // namespace

std::string_view dtype_name(DType d) noexcept { return d == DType::F32 ? "f32" : "f64"; }

void HsiBundle::validate() const {
    cube.validate();
    if (clean && !clean->same_shape(cube.data())) throw ShapeError("bundle: clean cube shape differs from the cube");
    if (labels) {
        if (labels->rows() != cube.rows() || labels->cols() != cube.cols())
            throw ShapeError("bundle: label grid differs from the cube grid");
        if (labels->dim() == 0) throw ShapeError("bundle: label dimension is zero");
    }
    if (cube.name().find_first_of("\n#") != std::string::npos)
        throw FormatError("bundle: scene name may not contain newlines or '#'");
}

std::string encode_bundle(const HsiBundle& b) {
    b.validate();
    const std::string header = build_header(b);
    std::string out(kBundleMagic, 4);
    put_le(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    put_values(out, b.cube.data().data, b.dtype);
    if (b.clean) put_values(out, b.clean->data, b.dtype);
    if (b.labels) put_values(out, b.labels->planes.data, b.dtype);
    if (!b.cube.wavelengths().empty()) put_values(out, b.cube.wavelengths(), DType::F64);
    return out;
}

HsiBundle decode_bundle(const std::string& bytes, const std::string& source) {
    const ParsedHeader p = parse_header(bytes, source);
    const BundleHeader& h = p.fields;
    std::size_t expected = p.payload_start;
    for (const auto& name : h.payloads) expected += payload_bytes(h, name);
    if (bytes.size() != expected)
        throw FormatError(source + ": " + (bytes.size() < expected ? "truncated" : "oversized") + " file: expected " +
                          std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()));

    HsiBundle b;
    b.dtype = h.dtype;
    b.seed = h.seed;
    b.config_digest = h.config_digest;
    Volume cube(h.bands, h.rows, h.cols);
    std::vector<double> wavelengths;
    std::size_t at = p.payload_start;
    bool has_cube = false;
    for (const auto& name : h.payloads) {
        if (name == "cube") {
            get_values(bytes, at, cube.data, h.dtype);
            has_cube = true;
        } else if (name == "clean") {
            b.clean.emplace(h.bands, h.rows, h.cols);
            get_values(bytes, at, b.clean->data, h.dtype);
        } else if (name == "labels") {
            if (h.label_dim == 0) throw FormatError(source + ": labels payload with label_dim 0");
            b.labels.emplace(h.label_dim, h.rows, h.cols);
            get_values(bytes, at, b.labels->planes.data, h.dtype);
        } else if (name == "wavelengths") {
            wavelengths.resize(h.bands);
            get_values(bytes, at, wavelengths, DType::F64);
        }
        at += payload_bytes(h, name);
    }
    if (!has_cube) throw FormatError(source + ": bundle has no cube payload");
    b.cube = HyperCube(std::move(cube), std::move(wavelengths), h.name);
    return b;
}

void write_bundle(const HsiBundle& bundle, const std::string& path) { write_file_atomic(path, encode_bundle(bundle)); }

HsiBundle read_bundle(const std::string& path) { return decode_bundle(read_file(path), path); }

BundleHeader read_bundle_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::string head(8, '\0');
    in.read(head.data(), 8);
    head.resize(static_cast<std::size_t>(in.gcount()));
    if (head.size() == 8 && std::memcmp(head.data(), kBundleMagic, 4) == 0) {
        const std::uint32_t len = get_le<std::uint32_t>(head, 4);
        if (len <= kMaxHeader) {
            std::string text(len, '\0');
            in.read(text.data(), len);
            text.resize(static_cast<std::size_t>(in.gcount()));
            head += text;
        }
    }
    return parse_header(head, path).fields;
}

// ---- checkpoints -----------------------------------------------------------------------

Checkpoint make_checkpoint(const ModelParams& params, std::uint64_t config_digest) {
    Checkpoint c;
    c.config_digest = config_digest;
    for (const auto& [name, var] : params.entries()) c.tensors.emplace_back(name, var.value());
    return c;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out(kCheckpointMagic, 4);
    put_le(out, ckpt.config_digest);
    put_le(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_le(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_le(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) put_le(out, static_cast<std::uint64_t>(d));
        put_values(out, t.data, DType::F64);
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
    std::size_t at = 0;
    auto need = [&](std::size_t n) {
        if (bytes.size() < at + n)
            throw FormatError(source + ": truncated checkpoint: expected at least " + std::to_string(at + n) +
                              " bytes, found " + std::to_string(bytes.size()));
    };
    need(16);
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw FormatError(source + ": bad checkpoint magic");
    Checkpoint c;
    c.config_digest = get_le<std::uint64_t>(bytes, 4);
    const std::uint32_t count = get_le<std::uint32_t>(bytes, 12);
    at = 16;
    for (std::uint32_t i = 0; i < count; ++i) {
        need(4);
        const std::uint32_t len = get_le<std::uint32_t>(bytes, at);
        at += 4;
        need(len + 4);
        std::string name = bytes.substr(at, len);
        at += len;
        const std::uint32_t ndim = get_le<std::uint32_t>(bytes, at);
        at += 4;
        if (ndim > 8) throw FormatError(source + ": tensor '" + name + "' has implausible rank");
        need(8 * ndim);
        ad::Shape shape(ndim);
        for (auto& d : shape) {
            d = get_le<std::uint64_t>(bytes, at);
            at += 8;
        }
        const std::size_t n = ad::numel(shape);
        need(8 * n);
        ad::Tensor t(shape);
        get_values(bytes, at, t.data, DType::F64);
        at += 8 * n;
        c.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (at != bytes.size()) throw FormatError(source + ": trailing bytes after the last tensor");
    return c;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path), path); }

ModelParams params_from_checkpoint(const Checkpoint& ckpt, const BackboneConfig& model) {
    ModelParams fresh = init_params(model, 0);
    if (fresh.size() != ckpt.tensors.size())
        throw ShapeError("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                         std::to_string(fresh.size()));
    ModelParams out;
    for (const auto& [name, t] : ckpt.tensors) {
        if (!fresh.contains(name)) throw ShapeError("checkpoint tensor '" + name + "' is not part of the model");
        if (fresh.at(name).shape() != t.shape)
            throw ShapeError("checkpoint tensor '" + name + "' has shape " + ad::shape_str(t.shape) + ", expected " +
                             ad::shape_str(fresh.at(name).shape()));
        out.add(name, t);
    }
    return out;
}

// ---- files -------------------------------------------------------------------------------

void write_file_atomic(const std::string& path, const std::string& contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write '" + tmp.string() + "'");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw FormatError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw FormatError("cannot move output into place at '" + path + "'");
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string preview_csv(std::span<const double> original, std::span<const double> transformed) {
    if (original.size() != transformed.size()) throw ShapeError("preview: spectra differ in length");
    std::string out = "band,original,transformed\n";
    char buf[96];
    for (std::size_t b = 0; b < original.size(); ++b) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", b, original[b], transformed[b]);
        out += buf;
    }
    return out;
}

std::string format_training_log(const std::vector<EpochLog>& log) {
    std::string out = "epoch,total,regression,contrastive,batches,skipped\n";
    for (const auto& e : log)
        out += std::to_string(e.epoch) + "," + format_double(e.total) + "," + format_double(e.regression) + "," +
               format_double(e.contrastive) + "," + std::to_string(e.batches) + "," +
               std::to_string(e.skipped_batches) + "\n";
    return out;
}

}  // namespace hsicl
