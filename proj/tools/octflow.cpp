// Batch command-line driver: phantom | train | bakeoff | infer | project |
// eval | stats. Numerics come from key=value config files; flags carry only
// paths. Every run writes its resolved config and hash beside the outputs,
// and a rerun with the same hash reproduces the primary outputs byte for
// byte. Failures print one machine-parsable line: "error: <class>: <message>".

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <octflow/band.hpp>
#include <octflow/config.hpp>
#include <octflow/datapipe.hpp>
#include <octflow/errors.hpp>
#include <octflow/flowmap.hpp>
#include <octflow/model.hpp>
#include <octflow/phantom.hpp>
#include <octflow/rng.hpp>
#include <octflow/stats.hpp>
#include <octflow/trainer.hpp>
#include <octflow/volume.hpp>

namespace {

using namespace octflow;
namespace fs = std::filesystem;

std::string out_file(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

// ---- shared config fragments ----

struct StripSettings {
    std::size_t height = 32;
    std::size_t width = 16;
};

struct SplitSettings {
    double f_train = 0.7;
    double f_val = 0.15;
    double f_test = 0.15;
    std::uint64_t seed = 1;
};

struct BandSettings {
    std::string mode = "retina"; // retina | uniform
    double inner_frac = 0.25;
    double outer_frac = 0.75;
};

ModelSpec model_from_config(const KeyValues& kv) {
    ModelSpec s;
    s.blocks = int(kv.get_i64("blocks", 9));
    s.base_filters = int(kv.get_i64("base_filters", 18));
    s.bridge = bridge_from_name(kv.get_string("bridge", "concat"));
    s.dropout_rate = kv.get_double("dropout_rate", 0.0);
    s.growth = growth_from_name(kv.get_string("channel_growth", "doubling"));
    s.validate();
    return s;
}

TrainConfig train_from_config(const KeyValues& kv, std::size_t default_iters,
                              std::size_t default_batch) {
    TrainConfig t;
    t.learning_rate = kv.get_double("learning_rate", 1e-3);
    t.batch_size = kv.get_size("batch_size", default_batch);
    t.max_iterations = kv.get_size("max_iterations", default_iters);
    t.validation_cadence = kv.get_size("validation_cadence", 0);
    t.patience = kv.get_size("patience", TrainConfig{}.patience);
    t.dropout = kv.get_bool("dropout", false);
    t.seed = kv.get_u64("seed", 1);
    t.validate();
    return t;
}

StripSettings strips_from_config(const KeyValues& kv) {
    StripSettings s;
    s.height = kv.get_size("strip_height", 32);
    s.width = kv.get_size("strip_width", 16);
    if (s.height == 0 || s.width == 0) throw ConfigError("strip dims must be positive");
    return s;
}

SplitSettings split_from_config(const KeyValues& kv) {
    SplitSettings s;
    s.f_train = kv.get_double("f_train", 0.7);
    s.f_val = kv.get_double("f_val", 0.15);
    s.f_test = kv.get_double("f_test", 0.15);
    s.seed = kv.get_u64("split_seed", 1);
    return s;
}

BandSettings band_from_config(const KeyValues& kv) {
    BandSettings b;
    b.mode = kv.get_string("band", "retina");
    if (b.mode != "retina" && b.mode != "uniform") {
        throw ConfigError("band must be 'retina' or 'uniform', got '" + b.mode + "'");
    }
    b.inner_frac = kv.get_double("band_inner_frac", 0.25);
    b.outer_frac = kv.get_double("band_outer_frac", 0.75);
    return b;
}

void put_model(std::map<std::string, std::string>& m, const ModelSpec& s) {
    m["blocks"] = std::to_string(s.blocks);
    m["base_filters"] = std::to_string(s.base_filters);
    m["bridge"] = bridge_name(s.bridge);
    m["dropout_rate"] = format_g17(s.dropout_rate);
    m["channel_growth"] = growth_name(s.growth);
}

void put_train(std::map<std::string, std::string>& m, const TrainConfig& t) {
    m["learning_rate"] = format_g17(t.learning_rate);
    m["batch_size"] = std::to_string(t.batch_size);
    m["max_iterations"] = std::to_string(t.max_iterations);
    m["validation_cadence"] = std::to_string(t.validation_cadence);
    m["patience"] = std::to_string(t.patience);
    m["dropout"] = t.dropout ? "true" : "false";
    m["seed"] = std::to_string(t.seed);
}

void put_strips(std::map<std::string, std::string>& m, const StripSettings& s) {
    m["strip_height"] = std::to_string(s.height);
    m["strip_width"] = std::to_string(s.width);
}

void put_split(std::map<std::string, std::string>& m, const SplitSettings& s) {
    m["f_train"] = format_g17(s.f_train);
    m["f_val"] = format_g17(s.f_val);
    m["f_test"] = format_g17(s.f_test);
    m["split_seed"] = std::to_string(s.seed);
}

void put_band(std::map<std::string, std::string>& m, const BandSettings& b) {
    m["band"] = b.mode;
    m["band_inner_frac"] = format_g17(b.inner_frac);
    m["band_outer_frac"] = format_g17(b.outer_frac);
}

std::string corpus_fingerprint(const std::vector<CorpusEntry>& entries) {
    std::string manifest;
    for (const auto& e : entries) {
        manifest += e.id + " " + file_fingerprint(e.structure_path) + " " +
                    file_fingerprint(e.flow_path) + "\n";
    }
    return hash_hex(fnv1a64(manifest));
}

void save_split_file(const std::string& path, const DatasetSplit& split) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "octflow-split 1\n";
    os << "seed " << split.seed << "\n";
    for (const SplitRole role : {SplitRole::train, SplitRole::validation, SplitRole::test}) {
        for (const auto& id : split.set(role)) os << split_role_name(role) << " " << id << "\n";
    }
    if (!os.flush()) throw IoError("short write to '" + path + "'");
}

struct CorpusData {
    std::vector<CorpusEntry> entries;
    DatasetSplit split;
    TrainData data;
};

CorpusData load_corpus_data(const std::string& corpus_dir, const SplitSettings& sp,
                            const StripSettings& st, const BandSettings& bd) {
    CorpusData cd;
    cd.entries = scan_corpus(corpus_dir);
    std::vector<std::string> ids;
    ids.reserve(cd.entries.size());
    for (const auto& e : cd.entries) ids.push_back(e.id);
    cd.split = split_corpus(ids, sp.f_train, sp.f_val, sp.f_test, sp.seed);
    cd.data.train = load_role_strips(cd.entries, cd.split, SplitRole::train, st.height, st.width,
                                     bd.inner_frac, bd.outer_frac);
    cd.data.validation = load_role_strips(cd.entries, cd.split, SplitRole::validation, st.height,
                                          st.width, bd.inner_frac, bd.outer_frac);
    cd.data.split = cd.split;
    return cd;
}

// Band over the projection grid of `v`, either detected from a structure
// volume or a uniform interval from height fractions.
BandMap projection_band(const Volume& v, const BandSettings& bd,
                        const std::string& structure_path) {
    if (bd.mode == "uniform") {
        if (!(bd.inner_frac > 0.0 && bd.inner_frac < bd.outer_frac && bd.outer_frac < 1.0)) {
            throw ConfigError("band fractions must satisfy 0 < inner < outer < 1");
        }
        std::uint32_t lo = 0, hi = 0;
        octflow::detail::nominal_band_rows(v.height, bd.inner_frac, bd.outer_frac, lo, hi);
        return uniform_band(v.slices, v.width, lo, hi);
    }
    if (structure_path.empty()) {
        throw ConfigError("band=retina requires --structure with the structural volume");
    }
    const Volume structure = load_volume(structure_path);
    if (structure.kind != VolumeKind::structure) {
        throw DomainError("'" + structure_path + "' has kind " +
                          volume_kind_name(structure.kind) + ", expected structure");
    }
    check_congruent(structure, v, "projection band");
    return retina_band(structure, bd.inner_frac, bd.outer_frac);
}

std::string opt_text(const std::optional<double>& v) {
    return v.has_value() ? format_g17(*v) : "absent";
}

// ---- phantom ----

int run_phantom(const std::string& config_path, const std::string& out_dir) {
    const KeyValues kv = parse_config_file(config_path);
    PhantomConfig pc;
    pc.slices = kv.get_size("slices", 12);
    pc.height = kv.get_size("height", 32);
    pc.width = kv.get_size("width", 32);
    pc.vessels_min = kv.get_size("vessels_min", 2);
    pc.vessels_max = kv.get_size("vessels_max", 4);
    pc.caliber_min_px = kv.get_double("caliber_min_px", 6.0);
    pc.caliber_max_px = kv.get_double("caliber_max_px", 12.0);
    pc.band_inner_frac = kv.get_double("band_inner_frac", 0.25);
    pc.band_outer_frac = kv.get_double("band_outer_frac", 0.75);
    pc.speckle_sigma = kv.get_double("speckle_sigma", 0.35);
    pc.rho = kv.get_double("rho", 0.8);
    pc.repeats = kv.get_size("repeats", 4);
    pc.flow_ceiling = kv.get_double("flow_ceiling", 0.001);
    const std::uint64_t seed = kv.get_u64("seed", 1);
    const std::size_t volumes = kv.get_size("volumes", 16);
    kv.reject_unknown();
    if (volumes == 0) throw ConfigError("volumes must be positive");
    pc.validate();

    std::map<std::string, std::string> resolved;
    resolved["subcommand"] = "phantom";
    resolved["volumes"] = std::to_string(volumes);
    resolved["slices"] = std::to_string(pc.slices);
    resolved["height"] = std::to_string(pc.height);
    resolved["width"] = std::to_string(pc.width);
    resolved["vessels_min"] = std::to_string(pc.vessels_min);
    resolved["vessels_max"] = std::to_string(pc.vessels_max);
    resolved["caliber_min_px"] = format_g17(pc.caliber_min_px);
    resolved["caliber_max_px"] = format_g17(pc.caliber_max_px);
    resolved["band_inner_frac"] = format_g17(pc.band_inner_frac);
    resolved["band_outer_frac"] = format_g17(pc.band_outer_frac);
    resolved["speckle_sigma"] = format_g17(pc.speckle_sigma);
    resolved["rho"] = format_g17(pc.rho);
    resolved["repeats"] = std::to_string(pc.repeats);
    resolved["flow_ceiling"] = format_g17(pc.flow_ceiling);
    resolved["seed"] = std::to_string(seed);
    const RunStamp stamp = begin_run(out_dir, resolved);

    for (std::size_t i = 0; i < volumes; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "vol%03zu", i);
        PhantomConfig vc = pc;
        vc.seed = seed_combine(seed, i);
        PhantomOutput ph = generate_phantom(vc);
        Volume flow = speckle_variance(ph.repeats, pc.flow_ceiling);
        ph.structure.meta["volume_id"] = id;
        ph.structure.meta["config_hash"] = stamp.hash;
        flow.meta["volume_id"] = id;
        flow.meta["config_hash"] = stamp.hash;
        save_volume(out_file(out_dir, std::string(id) + ".structure.ovol"), ph.structure);
        save_volume(out_file(out_dir, std::string(id) + ".flow.ovol"), flow);
        save_vessel_tree(out_file(out_dir, std::string(id) + ".vessels.txt"), ph.tree);
    }
    std::printf("phantom: %zu volume pairs (%zux%zux%zu), config %s\n", volumes, pc.slices,
                pc.height, pc.width, stamp.hash.c_str());
    return 0;
}

// ---- train ----

int run_train(const std::string& config_path, const std::string& corpus_dir,
              const std::string& out_dir, const std::string& resume_path) {
    const KeyValues kv = parse_config_file(config_path);
    const ModelSpec spec = model_from_config(kv);
    const TrainConfig tc = train_from_config(kv, 5000, 16);
    const StripSettings st = strips_from_config(kv);
    const SplitSettings sp = split_from_config(kv);
    BandSettings bd;
    bd.inner_frac = kv.get_double("band_inner_frac", 0.25);
    bd.outer_frac = kv.get_double("band_outer_frac", 0.75);
    kv.reject_unknown();

    const CorpusData cd = load_corpus_data(corpus_dir, sp, st, bd);

    std::map<std::string, std::string> resolved;
    resolved["subcommand"] = "train";
    put_model(resolved, spec);
    put_train(resolved, tc);
    put_strips(resolved, st);
    put_split(resolved, sp);
    resolved["band_inner_frac"] = format_g17(bd.inner_frac);
    resolved["band_outer_frac"] = format_g17(bd.outer_frac);
    resolved["input.corpus"] = corpus_fingerprint(cd.entries);
    if (!resume_path.empty()) {
        resolved["resume"] = "true";
        resolved["input.checkpoint"] = file_fingerprint(resume_path);
    }
    const RunStamp stamp = begin_run(out_dir, resolved);

    Checkpoint ck;
    if (!resume_path.empty()) {
        Checkpoint start = load_checkpoint(resume_path);
        if (!(start.spec == spec)) {
            throw ConfigError("checkpoint model " + start.spec.name() +
                              " does not match configured model " + spec.name());
        }
        TrainConfig same = start.config;
        same.max_iterations = tc.max_iterations;
        if (!(same == tc)) {
            throw ConfigError(
                "resume config differs from the checkpoint beyond max_iterations");
        }
        if (tc.max_iterations < std::size_t(start.iteration)) {
            throw ConfigError("max_iterations " + std::to_string(tc.max_iterations) +
                              " is below the checkpoint iteration " +
                              std::to_string(start.iteration));
        }
        start.config = tc;
        ck = resume_training(start, cd.data);
    } else {
        ck = train(spec, cd.data, tc);
    }

    save_checkpoint(out_file(out_dir, "model.ckpt"), ck);
    save_curve_csv(out_file(out_dir, "curve.csv"), ck.curve);
    save_split_file(out_file(out_dir, "split.txt"), cd.split);
    std::printf("train: %s, %lld iterations, best validation %.6e at iteration %lld\n",
                spec.name().c_str(), static_cast<long long>(ck.iteration),
                ck.curve.best_validation, static_cast<long long>(ck.curve.best_iteration));
    return 0;
}

// ---- bakeoff ----

int run_bakeoff(const std::string& config_path, const std::string& corpus_dir,
                const std::string& out_dir) {
    const KeyValues kv = parse_config_file(config_path);
    const double dropout_rate = kv.get_double("dropout_rate", 0.0);
    const Growth growth = growth_from_name(kv.get_string("channel_growth", "doubling"));
    const TrainConfig tc = train_from_config(kv, 500, 8);
    const StripSettings st = strips_from_config(kv);
    const SplitSettings sp = split_from_config(kv);
    BandSettings bd;
    bd.inner_frac = kv.get_double("band_inner_frac", 0.25);
    bd.outer_frac = kv.get_double("band_outer_frac", 0.75);
    kv.reject_unknown();

    const CorpusData cd = load_corpus_data(corpus_dir, sp, st, bd);

    std::map<std::string, std::string> resolved;
    resolved["subcommand"] = "bakeoff";
    resolved["dropout_rate"] = format_g17(dropout_rate);
    resolved["channel_growth"] = growth_name(growth);
    put_train(resolved, tc);
    put_strips(resolved, st);
    put_split(resolved, sp);
    resolved["band_inner_frac"] = format_g17(bd.inner_frac);
    resolved["band_outer_frac"] = format_g17(bd.outer_frac);
    resolved["input.corpus"] = corpus_fingerprint(cd.entries);
    const RunStamp stamp = begin_run(out_dir, resolved);

    const std::vector<ModelSpec> zoo = variant_zoo(dropout_rate, growth);
    const BakeoffResult r = bakeoff(zoo, cd.data, tc);

    {
        const std::string path = out_file(out_dir, "bakeoff.txt");
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open '" + path + "' for writing");
        os << r.table;
        if (!os.flush()) throw IoError("short write to '" + path + "'");
    }
    const std::string curve_dir = out_file(out_dir, "curves");
    std::error_code ec;
    fs::create_directories(curve_dir, ec);
    if (ec) throw IoError("cannot create '" + curve_dir + "': " + ec.message());
    for (std::size_t i = 0; i < zoo.size(); ++i) {
        save_curve_csv(out_file(curve_dir, zoo[i].name() + ".csv"), r.curves[i]);
    }
    {
        const std::string path = out_file(out_dir, "winner.txt");
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open '" + path + "' for writing");
        if (r.winner >= 0) {
            os << "winner " << zoo[std::size_t(r.winner)].name() << "\n"
               << zoo[std::size_t(r.winner)].to_line() << "\n";
        } else {
            os << "winner none\n";
        }
        if (!os.flush()) throw IoError("short write to '" + path + "'");
    }
    save_split_file(out_file(out_dir, "split.txt"), cd.split);
    std::fputs(r.table.c_str(), stdout);
    std::printf("bakeoff: config %s\n", stamp.hash.c_str());
    return 0;
}

// ---- infer ----

int run_infer(const std::string& config_path, const std::string& ckpt_path,
              const std::string& volume_path, const std::string& out_dir) {
    const KeyValues kv = parse_config_file(config_path);
    const std::size_t strip_w = kv.get_size("strip_width", 16);
    const InferMode mode = infer_mode_from_name(kv.get_string("mode", "metric"));
    const std::string weights = kv.get_string("weights", "best");
    kv.reject_unknown();
    if (weights != "best" && weights != "final") {
        throw ConfigError("weights must be 'best' or 'final', got '" + weights + "'");
    }

    std::map<std::string, std::string> resolved;
    resolved["subcommand"] = "infer";
    resolved["strip_width"] = std::to_string(strip_w);
    resolved["mode"] = infer_mode_name(mode);
    resolved["weights"] = weights;
    resolved["input.checkpoint"] = file_fingerprint(ckpt_path);
    resolved["input.volume"] = file_fingerprint(volume_path);

    const Checkpoint ck = load_checkpoint(ckpt_path);
    const Network<float> net = build_network(ck, weights == "best");
    const Volume structure = load_volume(volume_path);
    Volume inferred = infer_volume(net, structure, strip_w, mode);
    const RunStamp stamp = begin_run(out_dir, resolved);
    inferred.meta["model"] = ck.spec.name();
    inferred.meta["config_hash"] = stamp.hash;
    if (structure.meta.count("volume_id")) {
        inferred.meta["volume_id"] = structure.meta.at("volume_id");
    }
    save_volume(out_file(out_dir, "inferred.ovol"), inferred);
    std::printf("infer: %s on %zux%zux%zu, mode %s, config %s\n", ck.spec.name().c_str(),
                inferred.slices, inferred.height, inferred.width, infer_mode_name(mode),
                stamp.hash.c_str());
    return 0;
}

// ---- project ----

int run_project(const std::string& config_path, const std::string& volume_path,
                const std::string& structure_path, const std::string& out_dir) {
    const KeyValues kv = parse_config_file(config_path);
    const Projection proj = projection_from_name(kv.get_string("projection", "average"));
    const BandSettings bd = band_from_config(kv);
    kv.reject_unknown();

    std::map<std::string, std::string> resolved;
    resolved["subcommand"] = "project";
    resolved["projection"] = projection_name(proj);
    put_band(resolved, bd);
    resolved["input.volume"] = file_fingerprint(volume_path);
    if (!structure_path.empty()) resolved["input.structure"] = file_fingerprint(structure_path);

    const Volume v = load_volume(volume_path);
    const BandMap band = projection_band(v, bd, structure_path);
    const EnFaceMap map = enface(v, band, proj);
    const RunStamp stamp = begin_run(out_dir, resolved);
    save_enface(out_file(out_dir, "enface"), map);
    std::printf("project: %s of %s volume to %zux%zu map, config %s\n", projection_name(proj),
                volume_kind_name(v.kind), map.slices, map.width, stamp.hash.c_str());
    return 0;
}

// ---- eval ----

int run_eval(const std::string& config_path, const std::string& pred_path,
             const std::string& truth_path, const std::string& structure_path,
             const std::string& out_dir) {
    const KeyValues kv = parse_config_file(config_path);
    const Projection proj = projection_from_name(kv.get_string("projection", "average"));
    const BandSettings bd = band_from_config(kv);
    const double peak = kv.get_double("peak", 1.0);
    kv.reject_unknown();

    std::map<std::string, std::string> resolved;
    resolved["subcommand"] = "eval";
    resolved["projection"] = projection_name(proj);
    put_band(resolved, bd);
    resolved["peak"] = format_g17(peak);
    resolved["input.pred"] = file_fingerprint(pred_path);
    resolved["input.truth"] = file_fingerprint(truth_path);
    if (!structure_path.empty()) resolved["input.structure"] = file_fingerprint(structure_path);

    const Volume pred = load_volume(pred_path);
    const Volume truth = load_volume(truth_path);
    if (pred.kind == VolumeKind::structure) {
        throw DomainError("'" + pred_path + "' is a structure volume, not a prediction");
    }
    if (truth.kind != VolumeKind::flow) {
        throw DomainError("'" + truth_path + "' has kind " + volume_kind_name(truth.kind) +
                          ", expected flow ground truth");
    }
    check_congruent(pred, truth, "eval");

    const BandMap band = projection_band(pred, bd, structure_path);
    const EnFaceMap map_pred = enface(pred, band, proj);
    const EnFaceMap map_truth = enface(truth, band, proj);

    const double voxel_mse = mse(pred.data, truth.data);
    const double map_mse = mse(map_pred.data, map_truth.data);
    const auto r = pearson(map_pred.data, map_truth.data);
    const double thr_pred = otsu_threshold(map_pred.data);
    const double thr_truth = otsu_threshold(map_truth.data);
    const ConfusionCounts cc =
        confusion_counts(binarize(map_pred.data, thr_pred), binarize(map_truth.data, thr_truth));
    const ConfusionMetrics cm = confusion_metrics(cc);

    const RunStamp stamp = begin_run(out_dir, resolved);
    const std::string path = out_file(out_dir, "eval.txt");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "octflow-eval 1\n";
    os << "slices " << pred.slices << "\n";
    os << "height " << pred.height << "\n";
    os << "width " << pred.width << "\n";
    os << "projection " << projection_name(proj) << "\n";
    os << "voxel_mse " << format_g17(voxel_mse) << "\n";
    os << "voxel_psnr_db " << format_g17(psnr(voxel_mse, peak)) << "\n";
    os << "enface_mse " << format_g17(map_mse) << "\n";
    os << "enface_psnr_db " << format_g17(psnr(map_mse, peak)) << "\n";
    os << "enface_pearson " << opt_text(r) << "\n";
    os << "otsu_pred " << format_g17(thr_pred) << "\n";
    os << "otsu_truth " << format_g17(thr_truth) << "\n";
    os << "tp " << cc.tp << "\n";
    os << "fp " << cc.fp << "\n";
    os << "fn " << cc.fn << "\n";
    os << "tn " << cc.tn << "\n";
    os << "sensitivity " << opt_text(cm.sensitivity) << "\n";
    os << "specificity " << opt_text(cm.specificity) << "\n";
    os << "ppv " << opt_text(cm.ppv) << "\n";
    os << "npv " << opt_text(cm.npv) << "\n";
    os << "dice " << opt_text(cm.dice) << "\n";
    os << "config_hash " << stamp.hash << "\n";
    if (!os.flush()) throw IoError("short write to '" + path + "'");

    std::printf("eval: enface mse %s, pearson %s, dice %s, config %s\n",
                format_scientific(map_mse).c_str(), opt_text(r).c_str(),
                opt_text(cm.dice).c_str(), stamp.hash.c_str());
    return 0;
}

// ---- stats ----

void write_mcnemar_line(std::ofstream& os, const char* label, const PairedOutcomes& subset,
                        McNemarMode mode) {
    if (subset.units.empty()) {
        os << label << " inapplicable no-qualifying-units\n";
        return;
    }
    const McNemarResult m = mcnemar(subset, mode);
    os << label << " b " << m.b << " c " << m.c << " statistic " << format_g17(m.statistic)
       << " p " << format_g17(m.p) << "\n";
}

void write_gss_line(std::ofstream& os, const char* label, const PairedOutcomes& units,
                    PredictiveValue which) {
    const GssResult g = gss_predictive(units, which);
    if (!g.applicable) {
        os << label << " inapplicable " << g.reason << "\n";
        return;
    }
    os << label << " value_a " << format_g17(g.value_a) << " value_b " << format_g17(g.value_b)
       << " statistic " << format_g17(g.statistic) << " p " << format_g17(g.p) << "\n";
}

// En-face footprint of one branch: every (slice, width) cell within the
// sampled centerline's radius, clamped to the grid.
std::set<std::size_t> branch_footprint(const VesselBranch& br, std::size_t slices,
                                       std::size_t width) {
    std::set<std::size_t> cells;
    for (const auto& pt : br.points) {
        const double s = pt[0], w = pt[2], r = pt[3];
        const long s0 = std::max(0L, long(std::floor(s - r)));
        const long s1 = std::min(long(slices) - 1, long(std::ceil(s + r)));
        const long w0 = std::max(0L, long(std::floor(w - r)));
        const long w1 = std::min(long(width) - 1, long(std::ceil(w + r)));
        for (long si = s0; si <= s1; ++si) {
            for (long wi = w0; wi <= w1; ++wi) {
                const double ds = double(si) - s, dw = double(wi) - w;
                if (ds * ds + dw * dw <= r * r) {
                    cells.insert(std::size_t(si) * width + std::size_t(wi));
                }
            }
        }
    }
    return cells;
}

int run_stats(const std::string& config_path, const std::string& pred_a_path,
              const std::string& pred_b_path, const std::string& truth_path,
              const std::string& structure_path, const std::string& vessels_path,
              const std::string& out_dir) {
    const KeyValues kv = parse_config_file(config_path);
    const Projection proj = projection_from_name(kv.get_string("projection", "average"));
    const BandSettings bd = band_from_config(kv);
    const std::size_t square_px = kv.get_size("square_px", 8);
    const std::size_t squares = kv.get_size("squares", 8);
    const std::uint64_t seed = kv.get_u64("seed", 1);
    const std::string mode_name = kv.get_string("mcnemar_mode", "exact");
    const double identify_frac = kv.get_double("identify_frac", 0.5);
    kv.reject_unknown();
    if (square_px == 0 || squares == 0) throw ConfigError("square_px and squares must be positive");
    if (!(identify_frac > 0.0 && identify_frac <= 1.0)) {
        throw ConfigError("identify_frac must lie in (0,1]");
    }
    McNemarMode mode;
    if (mode_name == "exact") mode = McNemarMode::exact;
    else if (mode_name == "chi2") mode = McNemarMode::chi2;
    else throw ConfigError("mcnemar_mode must be 'exact' or 'chi2', got '" + mode_name + "'");

    std::map<std::string, std::string> resolved;
    resolved["subcommand"] = "stats";
    resolved["projection"] = projection_name(proj);
    put_band(resolved, bd);
    resolved["square_px"] = std::to_string(square_px);
    resolved["squares"] = std::to_string(squares);
    resolved["seed"] = std::to_string(seed);
    resolved["mcnemar_mode"] = mode_name;
    resolved["identify_frac"] = format_g17(identify_frac);
    resolved["input.pred_a"] = file_fingerprint(pred_a_path);
    resolved["input.pred_b"] = file_fingerprint(pred_b_path);
    resolved["input.truth"] = file_fingerprint(truth_path);
    if (!structure_path.empty()) resolved["input.structure"] = file_fingerprint(structure_path);
    if (!vessels_path.empty()) resolved["input.vessels"] = file_fingerprint(vessels_path);

    const Volume pred_a = load_volume(pred_a_path);
    const Volume pred_b = load_volume(pred_b_path);
    const Volume truth = load_volume(truth_path);
    if (truth.kind != VolumeKind::flow) {
        throw DomainError("'" + truth_path + "' has kind " + volume_kind_name(truth.kind) +
                          ", expected flow ground truth");
    }
    check_congruent(pred_a, truth, "stats");
    check_congruent(pred_b, truth, "stats");

    const BandMap band = projection_band(truth, bd, structure_path);
    const EnFaceMap map_a = enface(pred_a, band, proj);
    const EnFaceMap map_b = enface(pred_b, band, proj);
    const EnFaceMap map_t = enface(truth, band, proj);

    const double thr_a = otsu_threshold(map_a.data);
    const double thr_b = otsu_threshold(map_b.data);
    const double thr_t = otsu_threshold(map_t.data);
    const auto mask_a = binarize(map_a.data, thr_a);
    const auto mask_b = binarize(map_b.data, thr_b);
    const auto mask_t = binarize(map_t.data, thr_t);

    const std::size_t S = map_t.slices, W = map_t.width;
    if (square_px > S || square_px > W) {
        throw ConfigError("square_px " + std::to_string(square_px) +
                          " exceeds the en-face grid " + std::to_string(S) + "x" +
                          std::to_string(W));
    }
    Rng rng(seed_combine(seed, 0x73717273ULL)); // stream tag 'sqrs'
    std::set<std::size_t> sampled;
    for (std::size_t k = 0; k < squares; ++k) {
        const std::size_t top = std::size_t(rng.next_below(std::uint64_t(S - square_px + 1)));
        const std::size_t left = std::size_t(rng.next_below(std::uint64_t(W - square_px + 1)));
        for (std::size_t si = top; si < top + square_px; ++si) {
            for (std::size_t wi = left; wi < left + square_px; ++wi) {
                sampled.insert(si * W + wi);
            }
        }
    }

    PairedOutcomes all, sens, spec;
    for (const std::size_t i : sampled) {
        PairedUnit u;
        u.id = i;
        u.truth = mask_t[i] != 0;
        u.rater_a = mask_a[i] != 0;
        u.rater_b = mask_b[i] != 0;
        all.units.push_back(u);
        (u.truth ? sens : spec).units.push_back(u);
    }

    std::optional<VesselOrderReport> orders;
    if (!vessels_path.empty()) {
        const VesselTree tree = load_vessel_tree(vessels_path);
        if (tree.slices != truth.slices || tree.height != truth.height ||
            tree.width != truth.width) {
            throw ShapeError("vessel tree dims do not match the evaluated volumes");
        }
        VesselOrderTable table;
        table.modalities = {"pred_a", "pred_b", "truth"};
        table.counts.assign(3, {});
        const std::vector<const std::vector<std::uint8_t>*> masks = {&mask_a, &mask_b, &mask_t};
        for (const auto& br : tree.branches) {
            const std::set<std::size_t> cells = branch_footprint(br, S, W);
            if (cells.empty()) continue;
            const std::size_t o = std::size_t(br.order) - 2;
            for (std::size_t m = 0; m < 3; ++m) {
                std::size_t hit = 0;
                for (const std::size_t c : cells) hit += (*masks[m])[c] != 0 ? 1 : 0;
                table.counts[m][o].total += 1;
                if (double(hit) >= identify_frac * double(cells.size())) {
                    table.counts[m][o].identified += 1;
                }
            }
        }
        orders = vessel_order_report(table, "identify_frac=" + format_g17(identify_frac));
    }

    const RunStamp stamp = begin_run(out_dir, resolved);
    const std::string path = out_file(out_dir, "stats.txt");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "octflow-stats 1\n";
    os << "units " << all.units.size() << "\n";
    os << "truth_positive_units " << sens.units.size() << "\n";
    os << "otsu_pred_a " << format_g17(thr_a) << "\n";
    os << "otsu_pred_b " << format_g17(thr_b) << "\n";
    os << "otsu_truth " << format_g17(thr_t) << "\n";
    write_mcnemar_line(os, "mcnemar_sensitivity", sens, mode);
    write_mcnemar_line(os, "mcnemar_specificity", spec, mode);
    write_gss_line(os, "gss_ppv", all, PredictiveValue::ppv);
    write_gss_line(os, "gss_npv", all, PredictiveValue::npv);
    if (orders.has_value()) {
        const std::string orders_path = out_file(out_dir, "orders.csv");
        std::ofstream oo(orders_path, std::ios::binary | std::ios::trunc);
        if (!oo) throw IoError("cannot open '" + orders_path + "' for writing");
        oo << orders->csv;
        if (!oo.flush()) throw IoError("short write to '" + orders_path + "'");
        os << "orders orders.csv\n";
    }
    os << "config_hash " << stamp.hash << "\n";
    if (!os.flush()) throw IoError("short write to '" + path + "'");

    std::printf("stats: %zu units over %zu squares, config %s\n", all.units.size(), squares,
                stamp.hash.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"octflow: synthetic OCT-to-flowmap pipeline"};
    app.require_subcommand(1);

    std::string config, out, corpus, resume, checkpoint, volume, structure;
    std::string pred, truth, pred_a, pred_b, vessels;

    CLI::App* c_phantom = app.add_subcommand("phantom", "generate a synthetic corpus");
    c_phantom->add_option("--config", config, "key=value settings file")->required();
    c_phantom->add_option("--out", out, "run output directory")->required();

    CLI::App* c_train = app.add_subcommand("train", "train one model on a corpus");
    c_train->add_option("--config", config, "key=value settings file")->required();
    c_train->add_option("--corpus", corpus, "corpus directory")->required();
    c_train->add_option("--out", out, "run output directory")->required();
    c_train->add_option("--resume", resume, "checkpoint to continue from");

    CLI::App* c_bakeoff = app.add_subcommand("bakeoff", "train all twelve variants");
    c_bakeoff->add_option("--config", config, "key=value settings file")->required();
    c_bakeoff->add_option("--corpus", corpus, "corpus directory")->required();
    c_bakeoff->add_option("--out", out, "run output directory")->required();

    CLI::App* c_infer = app.add_subcommand("infer", "run a checkpoint over a structure volume");
    c_infer->add_option("--config", config, "key=value settings file")->required();
    c_infer->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    c_infer->add_option("--volume", volume, "structure volume (.ovol)")->required();
    c_infer->add_option("--out", out, "run output directory")->required();

    CLI::App* c_project = app.add_subcommand("project", "project a volume to an en-face map");
    c_project->add_option("--config", config, "key=value settings file")->required();
    c_project->add_option("--volume", volume, "volume to project (.ovol)")->required();
    c_project->add_option("--structure", structure, "structure volume for band detection");
    c_project->add_option("--out", out, "run output directory")->required();

    CLI::App* c_eval = app.add_subcommand("eval", "score a prediction against flow truth");
    c_eval->add_option("--config", config, "key=value settings file")->required();
    c_eval->add_option("--pred", pred, "predicted volume (.ovol)")->required();
    c_eval->add_option("--truth", truth, "flow ground-truth volume (.ovol)")->required();
    c_eval->add_option("--structure", structure, "structure volume for band detection");
    c_eval->add_option("--out", out, "run output directory")->required();

    CLI::App* c_stats = app.add_subcommand("stats", "paired rater comparisons on en-face maps");
    c_stats->add_option("--config", config, "key=value settings file")->required();
    c_stats->add_option("--pred-a", pred_a, "first predicted volume (.ovol)")->required();
    c_stats->add_option("--pred-b", pred_b, "second predicted volume (.ovol)")->required();
    c_stats->add_option("--truth", truth, "flow ground-truth volume (.ovol)")->required();
    c_stats->add_option("--structure", structure, "structure volume for band detection");
    c_stats->add_option("--vessels", vessels, "vessel tree sidecar for order counting");
    c_stats->add_option("--out", out, "run output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: config: %s\n", e.what());
        return 2;
    }

    try {
        if (c_phantom->parsed()) return run_phantom(config, out);
        if (c_train->parsed()) return run_train(config, corpus, out, resume);
        if (c_bakeoff->parsed()) return run_bakeoff(config, corpus, out);
        if (c_infer->parsed()) return run_infer(config, checkpoint, volume, out);
        if (c_project->parsed()) return run_project(config, volume, structure, out);
        if (c_eval->parsed()) return run_eval(config, pred, truth, structure, out);
        if (c_stats->parsed()) {
            return run_stats(config, pred_a, pred_b, truth, structure, vessels, out);
        }
        std::fprintf(stderr, "error: config: no subcommand selected\n");
        return 2;
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (char& ch : msg) {
            if (ch == '\n' || ch == '\r') ch = ' ';
        }
        const std::string cls = octflow::error_class(e);
        std::fprintf(stderr, "error: %s: %s\n", cls.c_str(), msg.c_str());
        if (cls == "config") return 2;
        if (cls == "shape") return 3;
        if (cls == "io") return 4;
        if (cls == "state") return 5;
        if (cls == "domain") return 6;
        return 10;
    }
}
