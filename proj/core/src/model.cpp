#include "hsicl/model.hpp"

#include <bit>
#include <cmath>
#include <sstream>

#include "hsicl/error.hpp"
#include "hsicl/rng.hpp"

namespace hsicl {

using ad::Shape;
using ad::Tensor;
using ad::Var;

BackboneConfig BackboneConfig::preset(const std::string& name, std::size_t bands, std::size_t patch_size,
                                      std::size_t output_dim) {
    BackboneConfig c;
    c.input_bands = bands;
    c.patch_size = patch_size;
    c.output_dim = output_dim;
    if (name == "small") {
        c.stages = {ConvStage{4, {5, 3, 3}, {2, 2, 2}, {0, 0, 0}}, ConvStage{8, {3, 3, 3}, {2, 3, 3}, {0, 1, 1}}};
        c.feature_dim = 32;
        c.head_hidden = 32;
    } else if (name == "base" || name == "base+attention") {
        // The first stage runs unpadded: it dominates the cost, and the
        // spatial extent is only needed down to a few pixels.
        c.stages = {ConvStage{4, {5, 3, 3}, {2, 2, 2}, {0, 0, 0}}, ConvStage{8, {3, 3, 3}, {2, 1, 1}, {0, 1, 1}},
                    ConvStage{8, {3, 3, 3}, {2, 3, 3}, {0, 1, 1}}};
        c.feature_dim = 64;
        c.head_hidden = 32;
        c.attention = name == "base+attention";
    } else {
        throw ParameterError("unknown backbone preset '" + name + "' (expected small, base or base+attention)");
    }
    // Small inputs: drop pooling along axes that would collapse.
    auto shapes_ok = [&c]() {
        try {
            c.validate();
            return true;
        } catch (const ShapeError&) {
            return false;
        }
    };
    for (auto& st : c.stages)
        if (!shapes_ok()) st.pool = {st.pool[0], 1, 1};
    c.validate();
    return c;
}

std::vector<Shape> BackboneConfig::stage_shapes() const {
    std::vector<Shape> out;
    std::size_t ch = 1, d = input_bands, h = patch_size, w = patch_size;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& st = stages[i];
        auto conv = [&](std::size_t n, std::size_t k, std::size_t p) -> std::size_t {
            if (n + 2 * p < k)
                throw ShapeError("backbone stage " + std::to_string(i) + ": kernel exceeds padded extent");
            return n + 2 * p - k + 1;
        };
        d = conv(d, st.kernel[0], st.padding[0]);
        h = conv(h, st.kernel[1], st.padding[1]);
        w = conv(w, st.kernel[2], st.padding[2]);
        if (st.pool[0] == 0 || st.pool[1] == 0 || st.pool[2] == 0)
            throw ShapeError("backbone stage " + std::to_string(i) + ": pooling window must be positive");
        d /= st.pool[0];
        h /= st.pool[1];
        w /= st.pool[2];
        if (d == 0 || h == 0 || w == 0)
            throw ShapeError("backbone stage " + std::to_string(i) + ": extent collapses below 1");
        ch = st.out_channels;
        out.push_back({ch, d, h, w});
    }
    return out;
}

std::size_t BackboneConfig::flattened_size() const {
    const auto shapes = stage_shapes();
    if (shapes.empty()) return input_bands * patch_size * patch_size;
    return ad::numel(shapes.back());
}

void BackboneConfig::validate() const {
    if (input_bands == 0 || patch_size == 0) throw ShapeError("backbone: input extent must be positive");
    if (feature_dim == 0 || head_hidden == 0 || output_dim == 0) throw ShapeError("backbone: layer widths must be positive");
    for (const auto& st : stages)
        if (st.out_channels == 0) throw ShapeError("backbone: a stage has zero output channels");
    (void)stage_shapes();
    if (attention && attention_dim == 0) throw ShapeError("backbone: attention_dim must be positive");
    if (projection_head && projection_dim == 0) throw ShapeError("backbone: projection_dim must be positive");
}

std::string BackboneConfig::describe() const {
    std::ostringstream os;
    os << "in=1x" << input_bands << 'x' << patch_size << 'x' << patch_size;
    for (const auto& st : stages)
        os << " conv" << st.out_channels << ':' << st.kernel[0] << 'x' << st.kernel[1] << 'x' << st.kernel[2] << "/p"
           << st.padding[0] << st.padding[1] << st.padding[2] << "/pool" << st.pool[0] << st.pool[1] << st.pool[2];
    if (attention) os << " attn" << attention_dim;
    os << " feat" << feature_dim << " head" << head_hidden << " out" << output_dim;
    if (projection_head) os << " proj" << projection_dim;
    if (simplex_head) os << " simplex";
    return os.str();
}

std::uint64_t BackboneConfig::digest() const { return fnv1a(describe()); }

void ModelParams::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
    index_[name] = entries_.size();
    entries_.emplace_back(name, ad::parameter(std::move(init)));
}

const Var& ModelParams::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("no parameter named '" + name + "'");
    return entries_[it->second].second;
}

void ModelParams::zero_grad() {
    for (auto& [name, v] : entries_) v.zero_grad();
}

ModelParams ModelParams::clone() const {
    ModelParams out;
    for (const auto& [name, v] : entries_) out.add(name, v.value());
    return out;
}

std::uint64_t ModelParams::digest() const {
    std::uint64_t h = fnv1a("params");
    for (const auto& [name, v] : entries_) {
        h = fnv1a(name, h);
        h = fnv1a(ad::shape_str(v.shape()), h);
        for (double x : v.value().data) {
            const auto bits = std::bit_cast<std::uint64_t>(x);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += v.value().size();
    return n;
}

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor t(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.data) v = uniform(rng, -limit, limit);
    return t;
}

}  // namespace

ModelParams init_params(const BackboneConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams p;
    Rng rng = make_rng(seed, {fnv1a("init")});
    std::size_t in_ch = 1;
    for (std::size_t i = 0; i < config.stages.size(); ++i) {
        const auto& st = config.stages[i];
        const std::size_t taps = st.kernel[0] * st.kernel[1] * st.kernel[2];
        const std::string prefix = "conv" + std::to_string(i);
        p.add(prefix + ".weight", glorot({st.out_channels, in_ch, st.kernel[0], st.kernel[1], st.kernel[2]},
                                         in_ch * taps, st.out_channels * taps, rng));
        p.add(prefix + ".bias", Tensor({st.out_channels}));
        in_ch = st.out_channels;
    }
    if (config.attention) {
        const auto shapes = config.stage_shapes();
        const std::size_t emb = shapes.empty() ? config.input_bands : shapes.back()[0] * shapes.back()[1];
        const std::size_t a = config.attention_dim;
        for (const char* m : {"attn.query", "attn.key", "attn.value"}) {
            p.add(std::string(m) + ".weight", glorot({a, emb}, emb, a, rng));
            p.add(std::string(m) + ".bias", Tensor({a}));
        }
        p.add("attn.out.weight", glorot({emb, a}, a, emb, rng));
        p.add("attn.out.bias", Tensor({emb}));
    }
    const std::size_t flat = config.flattened_size();
    p.add("feature.weight", glorot({config.feature_dim, flat}, flat, config.feature_dim, rng));
    p.add("feature.bias", Tensor({config.feature_dim}));
    if (config.projection_head) {
        p.add("projection.weight",
              glorot({config.projection_dim, config.feature_dim}, config.feature_dim, config.projection_dim, rng));
        p.add("projection.bias", Tensor({config.projection_dim}));
    }
    p.add("head.hidden.weight",
          glorot({config.head_hidden, config.feature_dim}, config.feature_dim, config.head_hidden, rng));
    p.add("head.hidden.bias", Tensor({config.head_hidden}));
    p.add("head.out.weight", glorot({config.output_dim, config.head_hidden}, config.head_hidden, config.output_dim, rng));
    p.add("head.out.bias", Tensor({config.output_dim}));
    return p;
}

Tensor pack_batch(const std::vector<const Volume*>& volumes) {
    if (volumes.empty()) throw ShapeError("pack_batch: empty batch");
    const Volume& first = *volumes.front();
    Tensor t({volumes.size(), 1, first.bands, first.rows, first.cols});
    const std::size_t vol = first.size();
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        if (!volumes[i]->same_shape(first)) throw ShapeError("pack_batch: patches differ in shape");
        std::copy(volumes[i]->data.begin(), volumes[i]->data.end(), t.data.begin() + static_cast<long>(i * vol));
    }
    return t;
}

namespace {

struct BackboneTrace {
    Var features;
    Tensor attention;
};

Var attention_block(const ModelParams& p, const Var& tokens, std::size_t a_dim, Tensor* weights_out) {
    // tokens [B, T, E]; residual single-head self-attention.
    const std::size_t batch = tokens.shape()[0], t = tokens.shape()[1], emb = tokens.shape()[2];
    const Var flat = ad::reshape(tokens, {batch * t, emb});
    auto project = [&](const std::string& name) {
        return ad::reshape(ad::linear(flat, p.at(name + ".weight"), p.at(name + ".bias")), {batch, t, a_dim});
    };
    const Var q = project("attn.query");
    const Var k = project("attn.key");
    const Var v = project("attn.value");
    const Var scores = ad::scale(ad::bmm(q, ad::transpose_last(k)), 1.0 / std::sqrt(static_cast<double>(a_dim)));
    const Var weights = ad::softmax_last(scores);
    if (weights_out) *weights_out = weights.value();
    const Var mixed = ad::reshape(ad::bmm(weights, v), {batch * t, a_dim});
    const Var out = ad::linear(mixed, p.at("attn.out.weight"), p.at("attn.out.bias"));
    return ad::reshape(ad::add(flat, out), {batch, t, emb});
}

BackboneTrace run_backbone(const ModelParams& params, const BackboneConfig& config, const Var& input) {
    const auto& s = input.shape();
    if (s.size() != 5 || s[1] != 1 || s[2] != config.input_bands || s[3] != config.patch_size ||
        s[4] != config.patch_size)
        throw ShapeError("forward_backbone: input " + ad::shape_str(s) + " does not match config [B,1," +
                         std::to_string(config.input_bands) + "," + std::to_string(config.patch_size) + "," +
                         std::to_string(config.patch_size) + "]");
    const std::size_t batch = s[0];
    BackboneTrace trace;
    Var h = input;
    for (std::size_t i = 0; i < config.stages.size(); ++i) {
        const auto& st = config.stages[i];
        const std::string prefix = "conv" + std::to_string(i);
        h = ad::conv3d(h, params.at(prefix + ".weight"), params.at(prefix + ".bias"), st.padding);
        h = ad::relu(h);
        if (st.pool != ad::Dims3{1, 1, 1}) h = ad::maxpool3d(h, st.pool);
    }
    if (config.attention) {
        h = attention_block(params, ad::spatial_tokens(h), config.attention_dim, &trace.attention);
    }
    h = ad::reshape(h, {batch, h.value().size() / batch});
    trace.features = ad::linear(h, params.at("feature.weight"), params.at("feature.bias"));
    return trace;
}

}  // namespace

Var forward_backbone(const ModelParams& params, const BackboneConfig& config, const Var& input) {
    return run_backbone(params, config, input).features;
}

Tensor attention_weights(const ModelParams& params, const BackboneConfig& config, const Var& input) {
    if (!config.attention) throw UsageError("attention_weights: backbone has no attention block");
    return run_backbone(params, config, input).attention;
}

Var forward_head(const ModelParams& params, const BackboneConfig& config, const Var& features) {
    if (features.shape().size() != 2 || features.shape()[1] != config.feature_dim)
        throw ShapeError("forward_head: features " + ad::shape_str(features.shape()) + ", expected [B," +
                         std::to_string(config.feature_dim) + "]");
    Var h = ad::relu(ad::linear(features, params.at("head.hidden.weight"), params.at("head.hidden.bias")));
    Var out = ad::linear(h, params.at("head.out.weight"), params.at("head.out.bias"));
    if (config.simplex_head) out = ad::softmax_last(out);
    return out;
}

Var forward_projection(const ModelParams& params, const BackboneConfig& config, const Var& features) {
    if (!config.projection_head) return features;
    return ad::linear(features, params.at("projection.weight"), params.at("projection.bias"));
}

void Sgd::step(ModelParams& params) {
    for (const auto& [name, v] : params.entries()) {
        if (!v.has_grad()) continue;
        for (double g : v.node()->grad.data)
            if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + name + "'");
    }
    double sq = 0.0;
    for (const auto& [name, v] : params.entries())
        for (double g : v.node()->grad.data) sq += g * g;
    last_grad_norm_ = std::sqrt(sq);
    const double scale =
        max_grad_norm_ > 0.0 && last_grad_norm_ > max_grad_norm_ ? max_grad_norm_ / last_grad_norm_ : 1.0;
    for (const auto& [name, v] : params.entries()) {
        auto& node = *v.node();
        auto& vel = velocity_[name];
        if (vel.size() != node.value.size()) vel.assign(node.value.size(), 0.0);
        if (!node.grad.data.empty())
            for (std::size_t i = 0; i < vel.size(); ++i) vel[i] = momentum_ * vel[i] + scale * node.grad.data[i];
        else
            for (auto& x : vel) x *= momentum_;
        for (std::size_t i = 0; i < vel.size(); ++i) node.value.data[i] -= lr_ * vel[i];
        node.grad = Tensor();
    }
}

}  // namespace hsicl
