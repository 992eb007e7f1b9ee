#include "hsicl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <limits>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hsicl/config.hpp"
#include "hsicl/error.hpp"
#include "hsicl/rng.hpp"

namespace hsicl {

std::string_view arm_name(Arm arm) noexcept {
    switch (arm) {
        case Arm::Baseline: return "baseline";
        case Arm::Spectral: return "spectral";
        case Arm::Spatial: return "spatial";
        case Arm::SpectralSpatial: return "spectral+spatial";
    }
    return "?";
}

std::string_view arm_title(Arm arm) noexcept {
    switch (arm) {
        case Arm::Baseline: return "Baseline";
        case Arm::Spectral: return "Spectral contrastive";
        case Arm::Spatial: return "Spatial contrastive";
        case Arm::SpectralSpatial: return "Spectral+Spatial";
    }
    return "?";
}

Arm parse_arm(std::string_view name) {
    for (Arm a : kAllArms)
        if (arm_name(a) == name) return a;
    throw ParameterError("unknown arm '" + std::string(name) + "' (baseline, spectral, spatial, spectral+spatial)");
}

std::vector<augment::AugmentSpec> default_spectral_ops() {
    using augment::OpKind;
    return {
        {OpKind::SpectralShift, {{"max_delta", 1}}},
        {OpKind::Hapke, {{"min_cos", 0.7}}},
        {OpKind::Atmospheric, {{"gain_amp", 0.05}, {"offset_amp", 0.005}}},
        {OpKind::SpectralElastic, {{"amplitude", 1.0}}},
        {OpKind::BandErasure, {{"fraction", 0.05}}},
        {OpKind::NnMixing, {{"lambda_max", 0.5}}},
    };
}

std::vector<augment::AugmentSpec> default_spatial_ops() {
    using augment::OpKind;
    return {
        {OpKind::Rotate, {}},
        {OpKind::SpatialElastic, {}},
        {OpKind::SpatialFlip, {}},
        {OpKind::Translate, {}},
    };
}

TrainConfig::TrainConfig() : spectral_ops(default_spectral_ops()), spatial_ops(default_spatial_ops()) {}

void TrainConfig::validate() const {
    contrastive.validate();
    if (epochs == 0) throw ParameterError("train config: epochs must be positive");
    if (batch_size < 2) throw ParameterError("train config: batch size must be at least 2 for contrastive pairs");
    if (!(lr >= 0.0)) throw ParameterError("train config: lr must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("train config: momentum must lie in [0, 1)");
    if (!(grad_clip >= 0.0)) throw ParameterError("train config: grad_clip must be non-negative");
    if (!(split > 0.0 && split < 1.0)) throw ParameterError("train config: split must lie in (0, 1)");
    if (presets.empty()) throw ParameterError("train config: at least one backbone preset is required");
    for (const auto& s : spectral_ops) {
        s.validate();
        if (!augment::is_spectral(s.op))
            throw ParameterError("train config: '" + std::string(augment::op_name(s.op)) + "' is not spectral");
    }
    for (const auto& s : spatial_ops) {
        s.validate();
        if (augment::is_spectral(s.op))
            throw ParameterError("train config: '" + std::string(augment::op_name(s.op)) + "' is not spatial");
    }
    if (arm == Arm::Spectral || arm == Arm::SpectralSpatial)
        if (spectral_ops.empty()) throw ParameterError("train config: arm needs at least one spectral operator");
    if (arm == Arm::Spatial || arm == Arm::SpectralSpatial)
        if (spatial_ops.empty()) throw ParameterError("train config: arm needs at least one spatial operator");
}

augment::AugmentPipeline make_pipeline(const TrainConfig& config, Arm arm, std::uint64_t master_seed) {
    augment::AugmentPipeline p;
    p.master_seed = master_seed;
    switch (arm) {
        case Arm::Baseline: break;
        case Arm::Spectral: p.stages.push_back({config.spectral_ops}); break;
        case Arm::Spatial: p.stages.push_back({config.spatial_ops}); break;
        case Arm::SpectralSpatial:
            p.stages.push_back({config.spatial_ops});
            p.stages.push_back({config.spectral_ops});
            break;
    }
    p.validate();
    return p;
}

std::pair<PatchSet, PatchSet> split_dataset(const PatchSet& patches, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ParameterError("split_dataset: fraction must lie in (0, 1)");
    if (patches.size() < 2) throw DimensionError("split_dataset: need at least two patches");
    std::vector<std::size_t> order(patches.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(seed, {fnv1a("split")});
    std::shuffle(order.begin(), order.end(), rng);
    auto n_train = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(patches.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, patches.size() - 1);

    PatchSet train_set, test_set;
    for (auto* s : {&train_set, &test_set}) {
        s->source_name = patches.source_name;
        s->stride = patches.stride;
    }
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_train ? train_set : test_set).patches.push_back(patches.patches[order[i]]);
    return {std::move(train_set), std::move(test_set)};
}

SeedStreams SeedStreams::from(std::uint64_t seed) {
    return {derive_seed(seed, {fnv1a("split")}), derive_seed(seed, {fnv1a("init")}),
            derive_seed(seed, {fnv1a("shuffle")}), derive_seed(seed, {fnv1a("augment")})};
}

BackboneConfig model_for(const TrainConfig& config, const std::string& preset, const PatchSet& data) {
    if (data.empty()) throw DimensionError("model_for: empty dataset");
    data.validate();
    const auto& p = data.patches.front();
    BackboneConfig m = BackboneConfig::preset(preset, p.data.bands, p.data.rows, p.label.dim());
    m.simplex_head = config.simplex_head;
    m.projection_head = config.projection_head;
    m.validate();
    return m;
}

namespace {

std::string batch_context(std::size_t epoch, std::size_t batch) {
    return " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ")";
}

}  // namespace

TrainResult train(const TrainConfig& config, Arm arm, const PatchSet& train_set, const BackboneConfig& model,
                  const ModelParams& initial) {
    config.validate();
    model.validate();
    if (train_set.empty()) throw DimensionError("train: empty training set");
    train_set.validate();
    const auto& first = train_set.patches.front();
    if (first.data.bands != model.input_bands || first.data.rows != model.patch_size ||
        first.label.dim() != model.output_dim)
        throw ShapeError("train: patches do not match the backbone configuration");

    const SeedStreams streams = SeedStreams::from(config.seed);
    const bool contrastive_on = arm != Arm::Baseline;
    const double alpha = contrastive_on ? config.contrastive.alpha : 0.0;
    const augment::AugmentPipeline pipeline = make_pipeline(config, arm, streams.augment);

    TrainResult result;
    result.model = model;
    result.params = initial.clone();
    result.initial_digest = result.params.digest();
    Sgd sgd(config.lr, config.momentum, config.grad_clip);

    const std::size_t n = train_set.size();
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = make_rng(streams.shuffle, {epoch});
        std::shuffle(order.begin(), order.end(), rng);

        EpochLog log;
        log.epoch = epoch;
        for (std::size_t start = 0, batch_id = 0; start < n; start += config.batch_size, ++batch_id) {
            const std::size_t end = std::min(n, start + config.batch_size);
            const std::size_t b = end - start;

            std::vector<Volume> augmented;
            std::vector<const Volume*> views;
            std::vector<LabelVector> labels;
            for (std::size_t i = start; i < end; ++i) {
                views.push_back(&train_set.patches[order[i]].data);
                labels.push_back(train_set.patches[order[i]].label);
            }
            if (contrastive_on) {
                augmented.reserve(b);
                for (std::size_t i = start; i < end; ++i)
                    augmented.push_back(augment::apply_pipeline(train_set.patches[order[i]].data, pipeline,
                                                                epoch * n + order[i]));
                for (std::size_t i = 0; i < b; ++i) {
                    views.push_back(&augmented[i]);
                    labels.push_back(labels[i]);
                }
            }

            try {
                const ad::Var input = ad::constant(pack_batch(views));
                const ad::Var features = forward_backbone(result.params, model, input);
                const ad::Var preds = forward_head(result.params, model, features);

                ad::Var reg;
                if (contrastive_on && !config.regress_augmented) {
                    // Anchors only: mask out the twin rows, then rescale the
                    // 1/(2b) mean back to 1/b.
                    ad::Tensor targets = label_matrix(labels);
                    ad::Tensor mask(targets.shape, 0.0);
                    std::fill(mask.data.begin(), mask.data.begin() + static_cast<long>(b * model.output_dim), 1.0);
                    const ad::Var masked = ad::mul(preds, ad::constant(mask));
                    for (std::size_t i = b * model.output_dim; i < targets.size(); ++i) targets.data[i] = 0.0;
                    reg = ad::scale(regression_loss(masked, targets), 2.0);
                } else {
                    reg = regression_loss(preds, label_matrix(labels));
                }

                ad::Var loss = reg;
                double con_value = 0.0;
                if (contrastive_on) {
                    const PositiveSets pos =
                        build_positive_sets(labels, twin_pairs(b), config.contrastive.radius);
                    try {
                        const ad::Var con = contrastive_loss(forward_projection(result.params, model, features), pos,
                                                             config.contrastive);
                        con_value = con.item();
                        loss = total_loss(reg, con, alpha);
                    } catch (const DegenerateBatchError&) {
                        ++log.skipped_batches;
                        result.warnings.push_back("degenerate contrastive batch skipped" + batch_context(epoch, batch_id));
                        continue;
                    }
                }
                ad::backward(loss);
                sgd.step(result.params);
                log.total += loss.item();
                log.regression += reg.item();
                log.contrastive += con_value;
                ++log.batches;
            } catch (const DegenerateBatchError&) {
                throw;
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + batch_context(epoch, batch_id));
            }
        }
        if (log.batches > 0) {
            const double nb = static_cast<double>(log.batches);
            log.total /= nb;
            log.regression /= nb;
            log.contrastive /= nb;
        }
        result.log.push_back(log);
    }
    return result;
}

TrainResult train(const TrainConfig& config, const PatchSet& train_set) {
    const BackboneConfig model = model_for(config, config.presets.front(), train_set);
    const ModelParams init = init_params(model, SeedStreams::from(config.seed).init);
    return train(config, config.arm, train_set, model, init);
}

ad::Tensor predict(const ModelParams& params, const BackboneConfig& model, const PatchSet& patches, std::size_t chunk) {
    if (patches.empty()) throw DimensionError("predict: no patches");
    ad::NoGradGuard no_grad;
    ad::Tensor out({patches.size(), model.output_dim});
    for (std::size_t start = 0; start < patches.size(); start += chunk) {
        const std::size_t end = std::min(patches.size(), start + chunk);
        std::vector<const Volume*> views;
        for (std::size_t i = start; i < end; ++i) views.push_back(&patches.patches[i].data);
        const ad::Var preds =
            forward_head(params, model, forward_backbone(params, model, ad::constant(pack_batch(views))));
        std::copy(preds.value().data.begin(), preds.value().data.end(),
                  out.data.begin() + static_cast<long>(start * model.output_dim));
    }
    return out;
}

double r2_score(const ad::Tensor& predictions, const ad::Tensor& truth, std::vector<std::size_t>* skipped) {
    if (predictions.shape != truth.shape || truth.rank() != 2)
        throw ShapeError("r2_score: predictions " + ad::shape_str(predictions.shape) + " vs truth " +
                         ad::shape_str(truth.shape));
    const std::size_t b = truth.shape[0], s = truth.shape[1];
    if (b < 2) throw UndefinedMetricError("r2_score: need at least two samples");
    if (skipped) skipped->clear();
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < s; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < b; ++i) mean += truth.data[i * s + c];
        mean /= static_cast<double>(b);
        double ss_tot = 0.0, ss_res = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            const double t = truth.data[i * s + c];
            const double r = t - predictions.data[i * s + c];
            ss_tot += (t - mean) * (t - mean);
            ss_res += r * r;
        }
        if (!(ss_tot > 0.0)) {
            if (skipped) skipped->push_back(c);
            continue;
        }
        total += 1.0 - ss_res / ss_tot;
        ++used;
    }
    if (used == 0) throw UndefinedMetricError("r2_score: truth is constant in every component");
    return total / static_cast<double>(used);
}

double mae(const ad::Tensor& predictions, const ad::Tensor& truth) {
    if (predictions.shape != truth.shape)
        throw ShapeError("mae: predictions " + ad::shape_str(predictions.shape) + " vs truth " +
                         ad::shape_str(truth.shape));
    if (truth.data.empty()) throw UndefinedMetricError("mae: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) acc += std::abs(predictions.data[i] - truth.data[i]);
    return acc / static_cast<double>(truth.size());
}

bool loss_trend_non_increasing(const std::vector<EpochLog>& log, std::size_t window) {
    if (window == 0) window = 1;
    for (const auto& e : log)
        if (!std::isfinite(e.total)) return false;
    if (log.size() < window) return true;
    double prev = std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (std::size_t i = 0; i < log.size(); ++i) {
        acc += log[i].total;
        if (i >= window) acc -= log[i - window].total;
        if (i + 1 >= window) {
            const double avg = acc / static_cast<double>(window);
            if (avg > prev) return false;
            prev = avg;
        }
    }
    return true;
}

std::pair<double, double> mean_std(std::span<const double> values) {
    if (values.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double v : values) m += v;
    m /= static_cast<double>(values.size());
    if (values.size() == 1) return {m, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return {m, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

ArmSummary MetricsReport::summary(Arm arm, const std::string& preset) const {
    std::vector<double> r2, err;
    for (const auto& r : runs)
        if (r.arm == arm && r.preset == preset) {
            r2.push_back(r.r2);
            err.push_back(r.mae);
        }
    ArmSummary s;
    std::tie(s.r2_mean, s.r2_std) = mean_std(r2);
    std::tie(s.mae_mean, s.mae_std) = mean_std(err);
    return s;
}

MetricsReport ablate(const TrainConfig& config, const PatchSet& dataset, std::span<const std::uint64_t> seeds,
                     std::span<const Arm> arms, const ProgressFn& progress) {
    config.validate();
    if (seeds.empty()) throw ParameterError("ablate: at least one seed is required");
    if (arms.empty()) throw ParameterError("ablate: at least one arm is required");
    const auto started = std::chrono::steady_clock::now();

    MetricsReport report;
    report.presets = config.presets;
    report.seeds.assign(seeds.begin(), seeds.end());
    report.arms.assign(arms.begin(), arms.end());
    report.config_digest = config_digest(config);

    for (const auto& preset : config.presets) {
        const BackboneConfig model = model_for(config, preset, dataset);
        for (std::uint64_t seed : seeds) {
            const SeedStreams streams = SeedStreams::from(seed);
            const auto [train_set, test_set] = split_dataset(dataset, config.split, streams.split);
            const ModelParams init = init_params(model, streams.init);
            const ad::Tensor truth = label_matrix([&] {
                std::vector<LabelVector> l;
                for (const auto& p : test_set.patches) l.push_back(p.label);
                return l;
            }());
            for (Arm arm : arms) {
                TrainConfig run_cfg = config;
                run_cfg.seed = seed;
                run_cfg.arm = arm;
                const TrainResult res = train(run_cfg, arm, train_set, model, init);
                const ad::Tensor preds = predict(res.params, model, test_set);
                RunRecord rec;
                rec.arm = arm;
                rec.preset = preset;
                rec.seed = seed;
                rec.r2 = r2_score(preds, truth);
                rec.mae = mae(preds, truth);
                rec.initial_digest = res.initial_digest;
                rec.final_digest = res.params.digest();
                rec.final_loss = res.log.empty() ? 0.0 : res.log.back().total;
                report.runs.push_back(rec);
                if (progress) progress(rec);
            }
        }
    }
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t from_hex(const std::string& s) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s, &used, 16);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw ParseError("report: invalid hex value '" + s + "'");
    return v;
}

std::string join_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
    return out;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

}  // namespace

std::string serialize_report(const MetricsReport& report) {
    KeyValueDoc d;
    d.set("format", "hsicl-report");
    d.set("version", "1");
    d.set("config_digest", hex64(report.config_digest));
    d.set("presets", join_list(report.presets));
    std::vector<std::string> seeds, arms;
    for (auto s : report.seeds) seeds.push_back(std::to_string(s));
    for (auto a : report.arms) arms.emplace_back(arm_name(a));
    d.set("seeds", join_list(seeds));
    d.set("arms", join_list(arms));
    d.set("runs", std::to_string(report.runs.size()));
    for (std::size_t i = 0; i < report.runs.size(); ++i) {
        const RunRecord& r = report.runs[i];
        const std::string k = "run." + std::to_string(i) + ".";
        d.set(k + "arm", std::string(arm_name(r.arm)));
        d.set(k + "preset", r.preset);
        d.set(k + "seed", std::to_string(r.seed));
        d.set(k + "r2", format_double(r.r2));
        d.set(k + "mae", format_double(r.mae));
        d.set(k + "initial_digest", hex64(r.initial_digest));
        d.set(k + "final_digest", hex64(r.final_digest));
        d.set(k + "final_loss", format_double(r.final_loss));
    }
    for (const auto& preset : report.presets)
        for (Arm a : report.arms) {
            const ArmSummary s = report.summary(a, preset);
            const std::string k = "summary." + preset + "." + std::string(arm_name(a)) + ".";
            d.set(k + "r2_mean", format_double(s.r2_mean));
            d.set(k + "r2_std", format_double(s.r2_std));
            d.set(k + "mae_mean", format_double(s.mae_mean));
            d.set(k + "mae_std", format_double(s.mae_std));
        }
    return d.to_text();
}

MetricsReport parse_report(const std::string& text) {
    const KeyValueDoc d = KeyValueDoc::parse(text, "report");
    if (d.get("format") != "hsicl-report") throw ParseError("report: unexpected format '" + d.get("format") + "'");
    if (d.get("version") != "1") throw ParseError("report: unsupported version " + d.get("version"));
    MetricsReport r;
    r.config_digest = from_hex(d.get("config_digest"));
    r.presets = split_commas(d.get("presets"));
    for (const auto& s : split_commas(d.get("seeds"))) r.seeds.push_back(parse_uint(s, "report seeds"));
    for (const auto& a : split_commas(d.get("arms"))) r.arms.push_back(parse_arm(a));
    const std::uint64_t n = d.get_uint("runs");
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::string k = "run." + std::to_string(i) + ".";
        RunRecord rec;
        rec.arm = parse_arm(d.get(k + "arm"));
        rec.preset = d.get(k + "preset");
        rec.seed = d.get_uint(k + "seed");
        rec.r2 = d.get_double(k + "r2");
        rec.mae = d.get_double(k + "mae");
        rec.initial_digest = from_hex(d.get(k + "initial_digest"));
        rec.final_digest = from_hex(d.get(k + "final_digest"));
        rec.final_loss = d.get_double(k + "final_loss");
        r.runs.push_back(rec);
    }
    return r;
}

std::string format_table(const MetricsReport& report) {
    std::size_t label_w = 5;
    for (Arm a : report.arms) label_w = std::max(label_w, arm_title(a).size());
    constexpr int cell_w = 17;
    char buf[128];
    std::string out;
    auto block = [&](const char* title, bool r2) {
        out += title;
        out += "\n";
        std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(label_w), "Arm");
        out += buf;
        for (const auto& p : report.presets) {
            std::snprintf(buf, sizeof buf, " | %*s", cell_w, p.c_str());
            out += buf;
        }
        out += "\n";
        out += std::string(label_w, '-');
        for (std::size_t i = 0; i < report.presets.size(); ++i) out += "-+-" + std::string(cell_w, '-');
        out += "\n";
        for (Arm a : report.arms) {
            std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(label_w), std::string(arm_title(a)).c_str());
            out += buf;
            for (const auto& p : report.presets) {
                const ArmSummary s = report.summary(a, p);
                char cell[64];
                std::snprintf(cell, sizeof cell, "%.4f +/- %.4f", r2 ? s.r2_mean : s.mae_mean,
                              r2 ? s.r2_std : s.mae_std);
                std::snprintf(buf, sizeof buf, " | %*s", cell_w, cell);
                out += buf;
            }
            out += "\n";
        }
    };
    block("R2 (mean +/- std over seeds)", true);
    out += "\n";
    block("MAE (mean +/- std over seeds)", false);
    return out;
}

}  // namespace hsicl
