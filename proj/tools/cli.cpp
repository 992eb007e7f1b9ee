#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "hsicl/augment.hpp"
#include "hsicl/config.hpp"
#include "hsicl/error.hpp"
#include "hsicl/io.hpp"
#include "hsicl/rng.hpp"
#include "hsicl/synth.hpp"
#include "hsicl/train.hpp"

namespace hsicl::cli {

namespace {

namespace fs = std::filesystem;

struct SynthArgs {
    std::string config, out, endmembers, dtype = "f32";
};

struct AugmentArgs {
    std::string in, op, out, preview, pixel;
    std::vector<std::string> params;
    std::uint64_t seed = 0;
};

struct TrainArgs {
    std::string config, data, out, arm, preset;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

struct EvalArgs {
    std::string run, data, out;
    bool all = false;
};

struct AblateArgs {
    std::string config, data, out, table, seeds, arms;
};

PatchSet patches_from(const HsiBundle& b, const PatchConfig& pc, const std::string& path) {
    if (!b.labels) throw FormatError(path + ": bundle has no label payload; training needs per-pixel labels");
    return extract_patches(b.cube, *b.labels, pc.size, pc.stride);
}

// ---- synth ----------------------------------------------------------------------

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    const SynthConfig cfg = synth_config_from(KeyValueDoc::load(a.config));
    const DType dtype = a.dtype == "f64" ? DType::F64 : DType::F32;
    EndmemberMatrix m = a.endmembers.empty()
                            ? synth_endmembers(cfg.endmembers, cfg.bands, derive_seed(cfg.seed, {fnv1a("endmembers")}))
                            : load_endmembers(a.endmembers);
    if (m.count != cfg.endmembers || m.bands != cfg.bands)
        throw ShapeError("endmember library is " + std::to_string(m.bands) + "x" + std::to_string(m.count) +
                         ", config expects " + std::to_string(cfg.bands) + "x" + std::to_string(cfg.endmembers));
    Scene scene = generate_scene(cfg, m);

    HsiBundle b;
    b.cube = std::move(scene.cube);
    b.clean = scene.clean.data();
    b.labels = std::move(scene.abundances);
    b.dtype = dtype;
    b.seed = cfg.seed;
    b.config_digest = fnv1a(to_text(cfg));
    write_bundle(b, a.out);
    out << "wrote " << a.out << ": " << b.cube.bands() << " bands, " << b.cube.rows() << "x" << b.cube.cols()
        << ", " << b.labels->dim() << " endmembers\n";
    return kOk;
}

// ---- augment --------------------------------------------------------------------

int cmd_augment(const AugmentArgs& a, std::ostream& out) {
    augment::AugmentSpec spec;
    spec.op = augment::parse_op(a.op);
    for (const auto& kv : a.params) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--param expects key=value, got '" + kv + "'");
        spec.params[kv.substr(0, eq)] = parse_double(kv.substr(eq + 1), kv.substr(0, eq));
    }
    spec.validate();
    std::size_t pr = 0, pc = 0;
    bool pixel_given = false;
    if (!a.pixel.empty()) {
        const auto comma = a.pixel.find(',');
        if (comma == std::string::npos) throw UsageError("--pixel expects row,col");
        pr = parse_uint(a.pixel.substr(0, comma), "pixel row");
        pc = parse_uint(a.pixel.substr(comma + 1), "pixel col");
        pixel_given = true;
    }

    HsiBundle b = read_bundle(a.in);
    if (!pixel_given) {
        pr = b.cube.rows() / 2;
        pc = b.cube.cols() / 2;
    }
    if (pr >= b.cube.rows() || pc >= b.cube.cols()) throw DimensionError("--pixel lies outside the cube");

    // Cube, clean reference and (for spatial operators) labels see the same
    // random draws, so they stay aligned.
    auto transform = [&](const Volume& v) {
        Rng rng = make_rng(a.seed, {fnv1a("augment-cli")});
        return augment::apply_spec(v, spec, rng);
    };
    const Volume original = b.cube.data();
    Volume transformed = transform(original);
    if (b.clean) b.clean = transform(*b.clean);
    if (b.labels && !augment::is_spectral(spec.op)) b.labels = LabelField(transform(b.labels->planes));
    const std::vector<double> before = original.spectrum(pr, pc);
    const std::vector<double> after = transformed.spectrum(pr, pc);
    b.cube = HyperCube(std::move(transformed), b.cube.wavelengths(), b.cube.name());
    if (!a.out.empty()) write_bundle(b, a.out);
    if (!a.preview.empty()) write_file_atomic(a.preview, preview_csv(before, after));
    out << "applied " << augment::op_name(spec.op);
    if (!a.out.empty()) out << " -> " << a.out;
    if (!a.preview.empty()) out << " (preview of pixel " << pr << "," << pc << " in " << a.preview << ")";
    out << "\n";
    return kOk;
}

// ---- train ----------------------------------------------------------------------

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    RunConfig rc = run_config_from(KeyValueDoc::load(a.config));
    if (!a.arm.empty()) rc.train.arm = parse_arm(a.arm);
    if (!a.preset.empty()) rc.train.presets = {a.preset};
    if (a.seed_given) rc.train.seed = a.seed;
    rc.train.presets.resize(1);
    rc.seeds = {rc.train.seed};
    rc.train.validate();

    const BundleHeader header = read_bundle_header(a.data);
    if (header.label_dim == 0) throw FormatError(a.data + ": bundle has no label payload");
    const HsiBundle b = read_bundle(a.data);
    const PatchSet patches = patches_from(b, rc.patches, a.data);
    const SeedStreams streams = SeedStreams::from(rc.train.seed);
    const auto [train_set, test_set] = split_dataset(patches, rc.train.split, streams.split);
    const BackboneConfig model = model_for(rc.train, rc.train.presets.front(), patches);
    const ModelParams init = init_params(model, streams.init);

    const auto started = std::chrono::steady_clock::now();
    const TrainResult res = train(rc.train, rc.train.arm, train_set, model, init);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    for (const auto& w : res.warnings) err << "warning: " << w << "\n";

    const ad::Tensor preds = predict(res.params, model, test_set);
    std::vector<LabelVector> labels;
    for (const auto& p : test_set.patches) labels.push_back(p.label);
    const ad::Tensor truth = label_matrix(labels);
    const double r2 = r2_score(preds, truth);
    const double err_mae = mae(preds, truth);

    fs::create_directories(a.out);
    const std::string dir = fs::path(a.out).string();
    write_file_atomic(dir + "/config.cfg", to_text(rc));
    write_checkpoint(make_checkpoint(res.params, config_digest(rc)), dir + "/params.ckpt");
    write_file_atomic(dir + "/train_log.csv", format_training_log(res.log));
    write_file_atomic(dir + "/metrics.txt",
                      "arm = " + std::string(arm_name(rc.train.arm)) + "\npreset = " + rc.train.presets.front() +
                          "\nseed = " + std::to_string(rc.train.seed) + "\nr2 = " + format_double(r2) +
                          "\nmae = " + format_double(err_mae) + "\n");
    out << "trained " << arm_title(rc.train.arm) << " (" << model.describe() << ") on " << train_set.size()
        << " patches in " << seconds << " s\n";
    out << "held-out r2 = " << format_double(r2) << ", mae = " << format_double(err_mae) << "\n";
    return kOk;
}

// ---- eval -----------------------------------------------------------------------

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const std::string dir = fs::path(a.run).string();
    const RunConfig rc = run_config_from(KeyValueDoc::load(dir + "/config.cfg"));
    const Checkpoint ckpt = read_checkpoint(dir + "/params.ckpt");
    if (ckpt.config_digest != config_digest(rc))
        throw FormatError(dir + ": checkpoint config digest does not match config.cfg");

    const HsiBundle b = read_bundle(a.data);
    const PatchSet patches = patches_from(b, rc.patches, a.data);
    const BackboneConfig model = model_for(rc.train, rc.train.presets.front(), patches);
    const ModelParams params = params_from_checkpoint(ckpt, model);
    const PatchSet eval_set =
        a.all ? patches : split_dataset(patches, rc.train.split, SeedStreams::from(rc.train.seed).split).second;

    std::vector<LabelVector> labels;
    for (const auto& p : eval_set.patches) labels.push_back(p.label);
    const ad::Tensor preds = predict(params, model, eval_set);
    const ad::Tensor truth = label_matrix(labels);
    const std::string text = "patches = " + std::to_string(eval_set.size()) + "\nr2 = " +
                             format_double(r2_score(preds, truth)) + "\nmae = " + format_double(mae(preds, truth)) +
                             "\n";
    if (!a.out.empty()) write_file_atomic(a.out, text);
    out << text;
    return kOk;
}

// ---- ablate ---------------------------------------------------------------------

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
    RunConfig rc = run_config_from(KeyValueDoc::load(a.config));
    if (!a.seeds.empty()) rc.seeds = parse_seed_list(a.seeds);
    std::vector<Arm> arms(std::begin(kAllArms), std::end(kAllArms));
    if (!a.arms.empty()) {
        arms.clear();
        std::stringstream ss(a.arms);
        for (std::string item; std::getline(ss, item, ',');) arms.push_back(parse_arm(item));
    }
    const BundleHeader header = read_bundle_header(a.data);
    if (header.label_dim == 0) throw FormatError(a.data + ": bundle has no label payload");
    for (const auto& preset : rc.train.presets)
        BackboneConfig::preset(preset, header.bands, rc.patches.size, header.label_dim).validate();

    const HsiBundle b = read_bundle(a.data);
    const PatchSet patches = patches_from(b, rc.patches, a.data);
    const MetricsReport report = ablate(rc.train, patches, rc.seeds, arms, [&](const RunRecord& r) {
        err << "  " << r.preset << " seed " << r.seed << " " << arm_name(r.arm) << ": r2 " << format_double(r.r2)
            << ", mae " << format_double(r.mae) << "\n";
    });
    const std::string table = format_table(report);
    if (!a.out.empty()) write_file_atomic(a.out, serialize_report(report));
    if (!a.table.empty()) write_file_atomic(a.table, table);
    out << table;
    out << "runtime: " << report.runtime_seconds << " s\n";
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Contrastive hyperspectral unmixing toolkit", "hsicl"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic scene bundle from a config file");
    s->add_option("--config", synth.config, "Scene config file")->required()->check(CLI::ExistingFile);
    s->add_option("--out", synth.out, "Output bundle")->required();
    s->add_option("--endmembers", synth.endmembers, "Endmember library file (default: generated)")
        ->check(CLI::ExistingFile);
    s->add_option("--dtype", synth.dtype, "Payload precision")->check(CLI::IsMember({"f32", "f64"}));

    AugmentArgs aug;
    auto* g = app.add_subcommand("augment", "Apply one augmentation operator to a bundle");
    g->add_option("--in", aug.in, "Input bundle")->required()->check(CLI::ExistingFile);
    g->add_option("--op", aug.op, "Operator name")->required();
    g->add_option("--param", aug.params, "Operator parameter key=value (repeatable)");
    g->add_option("--seed", aug.seed, "Seed for random parameters");
    g->add_option("--out", aug.out, "Output bundle");
    g->add_option("--preview", aug.preview, "CSV with one spectrum before and after");
    g->add_option("--pixel", aug.pixel, "Preview pixel as row,col (default: centre)");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train one arm and write run artifacts");
    t->add_option("--config", tr.config, "Training config file")->required()->check(CLI::ExistingFile);
    t->add_option("--data", tr.data, "Input bundle")->required()->check(CLI::ExistingFile);
    t->add_option("--out", tr.out, "Run directory")->required();
    t->add_option("--arm", tr.arm, "baseline, spectral, spatial or spectral+spatial");
    t->add_option("--preset", tr.preset, "Backbone preset");
    t->add_option("--seed", tr.seed, "Override the config seed")->each([&](const std::string&) { tr.seed_given = true; });

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a trained run on a bundle");
    e->add_option("--run", ev.run, "Run directory")->required()->check(CLI::ExistingDirectory);
    e->add_option("--data", ev.data, "Input bundle")->required()->check(CLI::ExistingFile);
    e->add_option("--out", ev.out, "Metrics output file");
    e->add_flag("--all", ev.all, "Evaluate on every patch instead of the held-out split");

    AblateArgs ab;
    auto* b = app.add_subcommand("ablate", "Run the four-arm ablation and print the table");
    b->add_option("--config", ab.config, "Training config file")->required()->check(CLI::ExistingFile);
    b->add_option("--data", ab.data, "Input bundle")->required()->check(CLI::ExistingFile);
    b->add_option("--seeds", ab.seeds, "Comma-separated seeds (default: from config)");
    b->add_option("--arms", ab.arms, "Comma-separated arms (default: all four)");
    b->add_option("--out", ab.out, "Report file (key = value)");
    b->add_option("--table", ab.table, "Table output file");

    try {
        std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
        std::reverse(rest.begin(), rest.end());
        app.parse(rest);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex, out, err);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex, out, err);
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << "\n\n" << app.help();
        return kUsage;
    }

    try {
        if (s->parsed()) return cmd_synth(synth, out);
        if (g->parsed()) return cmd_augment(aug, out);
        if (t->parsed()) return cmd_train(tr, out, err);
        if (e->parsed()) return cmd_eval(ev, out);
        if (b->parsed()) return cmd_ablate(ab, out, err);
    } catch (const UsageError& ex) {
        err << "error: " << ex.what() << "\n";
        return kUsage;
    } catch (const NumericalError& ex) {
        err << "numerical failure: " << ex.what() << "\n";
        return kNumerical;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kDataError;
    }
    return kUsage;
}

}  // namespace hsicl::cli
