#include "hsicl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hsicl/error.hpp"
#include "hsicl/rng.hpp"

namespace hsicl {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(std::string_view text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto pos = text.find(sep, start);
        const auto piece = trim(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (!piece.empty()) out.emplace_back(piece);
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::string_view what) {
    text = trim(text);
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
        throw ParseError(std::string(what) + ": expected a number, got '" + std::string(text) + "'");
    return v;
}

std::uint64_t parse_uint(std::string_view text, std::string_view what) {
    text = trim(text);
    std::uint64_t v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
        throw ParseError(std::string(what) + ": expected a non-negative integer, got '" + std::string(text) + "'");
    return v;
}

// ---- KeyValueDoc ---------------------------------------------------------------

KeyValueDoc KeyValueDoc::parse(std::string_view text, std::string_view source) {
    KeyValueDoc doc;
    doc.source_ = source;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = std::string(source) + " line " + std::to_string(line_no);
        if (eq == std::string_view::npos) throw ParseError(where + ": expected 'key = value'");
        const std::string key(trim(line.substr(0, eq)));
        if (key.empty()) throw ParseError(where + ": empty key");
        if (doc.has(key)) throw ParseError(where + ": duplicate key '" + key + "'");
        doc.entries_.emplace_back(key, std::string(trim(line.substr(eq + 1))));
        doc.lines_.push_back(line_no);
    }
    return doc;
}

KeyValueDoc KeyValueDoc::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

bool KeyValueDoc::has(const std::string& key) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
}

std::optional<std::string> KeyValueDoc::find(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return v;
    return std::nullopt;
}

const std::string& KeyValueDoc::get(const std::string& key) const {
    for (const auto& e : entries_)
        if (e.first == key) return e.second;
    throw ParseError(source_ + ": missing key '" + key + "'");
}

void KeyValueDoc::set(const std::string& key, std::string value) {
    for (auto& e : entries_)
        if (e.first == key) {
            e.second = std::move(value);
            return;
        }
    entries_.emplace_back(key, std::move(value));
    lines_.push_back(0);
}

std::string KeyValueDoc::where(const std::string& key) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].first == key && i < lines_.size() && lines_[i] != 0)
            return source_ + " line " + std::to_string(lines_[i]) + ": " + key;
    return source_ + ": " + key;
}

double KeyValueDoc::get_double(const std::string& key) const { return parse_double(get(key), where(key)); }

std::uint64_t KeyValueDoc::get_uint(const std::string& key) const { return parse_uint(get(key), where(key)); }

bool KeyValueDoc::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ParseError(where(key) + ": expected true or false, got '" + v + "'");
}

void KeyValueDoc::reject_unknown(const std::vector<std::string>& known) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (std::find(known.begin(), known.end(), entries_[i].first) == known.end())
            throw ParseError(source_ + " line " + std::to_string(lines_[i]) + ": unknown key '" + entries_[i].first +
                             "'");
}

std::string KeyValueDoc::to_text() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
}

// ---- operator lists --------------------------------------------------------------

std::vector<augment::AugmentSpec> parse_op_list(std::string_view text) {
    std::vector<augment::AugmentSpec> ops;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == ',')) ++i;
        if (i >= text.size()) break;
        std::size_t j = i;
        while (j < text.size() && text[j] != '(' && text[j] != ' ' && text[j] != '\t' && text[j] != ',') ++j;
        augment::AugmentSpec spec;
        spec.op = augment::parse_op(text.substr(i, j - i));
        if (j < text.size() && text[j] == '(') {
            const auto close = text.find(')', j);
            if (close == std::string_view::npos) throw ParseError("operator list: missing ')'");
            for (const auto& kv : split_list(text.substr(j + 1, close - j - 1), ',')) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) throw ParseError("operator list: expected key=value, got '" + kv + "'");
                const std::string key(trim(std::string_view(kv).substr(0, eq)));
                spec.params[key] = parse_double(std::string_view(kv).substr(eq + 1), key);
            }
            j = close + 1;
        }
        spec.validate();
        ops.push_back(std::move(spec));
        i = j;
    }
    return ops;
}

std::string format_op_list(const std::vector<augment::AugmentSpec>& ops) {
    std::vector<std::string> parts;
    for (const auto& s : ops) {
        std::string p(augment::op_name(s.op));
        if (!s.params.empty()) {
            std::vector<std::string> kv;
            for (const auto& [k, v] : s.params) kv.push_back(k + "=" + format_double(v));
            p += "(" + join(kv, ",") + ")";
        }
        parts.push_back(std::move(p));
    }
    return join(parts, " ");
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
    std::vector<std::uint64_t> seeds;
    const auto items = split_list(text, ',');
    if (!items.empty() && items.size() != static_cast<std::size_t>(std::ranges::count(text, ',')) + 1)
        throw ParseError("seeds: empty entry in '" + std::string(text) + "'");
    for (const auto& s : items) seeds.push_back(parse_uint(s, "seeds"));
    if (seeds.empty()) throw ParseError("seeds: at least one seed is required");
    return seeds;
}

// ---- synthetic scene config ---------------------------------------------------------

SynthConfig synth_config_from(const KeyValueDoc& doc) {
    doc.reject_unknown({"rows", "cols", "bands", "endmembers", "concentration", "snr_db", "modulation_sigma",
                        "modulation_floor", "seed", "name", "preset"});
    SynthConfig c;
    if (auto p = doc.find("preset")) {
        if (*p == "paper") c = SynthConfig::paper_scale();
        else if (*p != "desk") throw ParseError("preset: expected 'desk' or 'paper', got '" + *p + "'");
    }
    if (doc.has("rows")) c.rows = doc.get_uint("rows");
    if (doc.has("cols")) c.cols = doc.get_uint("cols");
    if (doc.has("bands")) c.bands = doc.get_uint("bands");
    if (doc.has("endmembers")) c.endmembers = doc.get_uint("endmembers");
    if (auto v = doc.find("concentration")) {
        c.dirichlet_concentration.clear();
        for (const auto& s : split_list(*v, ',')) c.dirichlet_concentration.push_back(parse_double(s, "concentration"));
    }
    if (auto v = doc.find("snr_db")) {
        if (*v == "none" || *v == "inf") c.snr_db.reset();
        else c.snr_db = parse_double(*v, "snr_db");
    }
    if (doc.has("modulation_sigma")) c.modulation_sigma = doc.get_double("modulation_sigma");
    if (doc.has("modulation_floor")) c.modulation_floor = doc.get_double("modulation_floor");
    if (doc.has("seed")) c.seed = doc.get_uint("seed");
    if (auto v = doc.find("name")) c.name = *v;
    c.validate();
    return c;
}

std::string to_text(const SynthConfig& c) {
    KeyValueDoc d;
    d.set("rows", std::to_string(c.rows));
    d.set("cols", std::to_string(c.cols));
    d.set("bands", std::to_string(c.bands));
    d.set("endmembers", std::to_string(c.endmembers));
    if (!c.dirichlet_concentration.empty()) {
        std::vector<std::string> parts;
        for (double v : c.dirichlet_concentration) parts.push_back(format_double(v));
        d.set("concentration", join(parts, ","));
    }
    d.set("snr_db", c.snr_db ? format_double(*c.snr_db) : "none");
    d.set("modulation_sigma", format_double(c.modulation_sigma));
    d.set("modulation_floor", format_double(c.modulation_floor));
    d.set("seed", std::to_string(c.seed));
    d.set("name", c.name);
    return d.to_text();
}

// ---- training config -----------------------------------------------------------------

RunConfig run_config_from(const KeyValueDoc& doc) {
    doc.reject_unknown({"batch_size", "epochs", "lr", "momentum", "grad_clip", "seed", "seeds", "temperature",
                        "radius", "alpha", "per_positive_norm", "include_positives_in_denominator", "arm", "split", "presets",
                        "simplex_head", "projection_head", "regress_augmented", "spectral_ops", "spatial_ops",
                        "patch_size", "stride"});
    RunConfig rc;
    TrainConfig& t = rc.train;
    if (doc.has("batch_size")) t.batch_size = doc.get_uint("batch_size");
    if (doc.has("epochs")) t.epochs = doc.get_uint("epochs");
    if (doc.has("lr")) t.lr = doc.get_double("lr");
    if (doc.has("momentum")) t.momentum = doc.get_double("momentum");
    if (doc.has("grad_clip")) t.grad_clip = doc.get_double("grad_clip");
    if (doc.has("seed")) t.seed = doc.get_uint("seed");
    if (doc.has("temperature")) t.contrastive.temperature = doc.get_double("temperature");
    if (doc.has("radius")) t.contrastive.radius = doc.get_double("radius");
    if (doc.has("alpha")) t.contrastive.alpha = doc.get_double("alpha");
    if (doc.has("per_positive_norm")) t.contrastive.per_positive_norm = doc.get_bool("per_positive_norm");
    if (doc.has("include_positives_in_denominator"))
        t.contrastive.include_positives_in_denominator = doc.get_bool("include_positives_in_denominator");
    if (auto v = doc.find("arm")) t.arm = parse_arm(*v);
    if (doc.has("split")) t.split = doc.get_double("split");
    if (auto v = doc.find("presets")) t.presets = split_list(*v, ',');
    if (doc.has("simplex_head")) t.simplex_head = doc.get_bool("simplex_head");
    if (doc.has("projection_head")) t.projection_head = doc.get_bool("projection_head");
    if (doc.has("regress_augmented")) t.regress_augmented = doc.get_bool("regress_augmented");
    if (auto v = doc.find("spectral_ops")) t.spectral_ops = parse_op_list(*v);
    if (auto v = doc.find("spatial_ops")) t.spatial_ops = parse_op_list(*v);
    if (doc.has("patch_size")) rc.patches.size = doc.get_uint("patch_size");
    rc.patches.stride = doc.has("stride") ? doc.get_uint("stride") : default_stride(rc.patches.size);
    if (auto v = doc.find("seeds")) rc.seeds = parse_seed_list(*v);
    if (rc.patches.size == 0 || rc.patches.stride == 0)
        throw ParameterError("patch_size and stride must be positive");
    t.validate();
    return rc;
}

std::string to_text(const TrainConfig& t) {
    KeyValueDoc d;
    d.set("batch_size", std::to_string(t.batch_size));
    d.set("epochs", std::to_string(t.epochs));
    d.set("lr", format_double(t.lr));
    d.set("momentum", format_double(t.momentum));
    d.set("grad_clip", format_double(t.grad_clip));
    d.set("seed", std::to_string(t.seed));
    d.set("temperature", format_double(t.contrastive.temperature));
    d.set("radius", format_double(t.contrastive.radius));
    d.set("alpha", format_double(t.contrastive.alpha));
    d.set("per_positive_norm", t.contrastive.per_positive_norm ? "true" : "false");
    d.set("include_positives_in_denominator", t.contrastive.include_positives_in_denominator ? "true" : "false");
    d.set("arm", std::string(arm_name(t.arm)));
    d.set("split", format_double(t.split));
    d.set("presets", join(t.presets, ","));
    d.set("simplex_head", t.simplex_head ? "true" : "false");
    d.set("projection_head", t.projection_head ? "true" : "false");
    d.set("regress_augmented", t.regress_augmented ? "true" : "false");
    d.set("spectral_ops", format_op_list(t.spectral_ops));
    d.set("spatial_ops", format_op_list(t.spatial_ops));
    return d.to_text();
}

std::string to_text(const RunConfig& c) {
    std::string out = to_text(c.train);
    out += "patch_size = " + std::to_string(c.patches.size) + "\n";
    out += "stride = " + std::to_string(c.patches.stride) + "\n";
    std::vector<std::string> seeds;
    for (auto s : c.seeds) seeds.push_back(std::to_string(s));
    out += "seeds = " + join(seeds, ",") + "\n";
    return out;
}

std::uint64_t config_digest(const TrainConfig& config) {
    // The seed and arm vary inside an ablation; the digest identifies the
    // shared settings.
    TrainConfig c = config;
    c.seed = 0;
    c.arm = Arm::Baseline;
    return fnv1a(to_text(c));
}

std::uint64_t config_digest(const RunConfig& config) { return fnv1a(to_text(config)); }

}  // namespace hsicl
