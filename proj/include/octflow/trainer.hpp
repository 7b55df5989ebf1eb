#pragma once

// Training loop: deterministic batch assembly, per-iteration loss logging,
// per-epoch validation with early stopping, bit-exact checkpoint/resume, and
// the multi-variant bake-off harness.

#include <octflow/adam.hpp>
#include <octflow/datapipe.hpp>
#include <octflow/errors.hpp>
#include <octflow/model.hpp>
#include <octflow/ops.hpp>
#include <octflow/params.hpp>
#include <octflow/rng.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace octflow {

struct TrainConfig {
    double learning_rate = 1e-5;       // reference default; desk runs override
    std::size_t batch_size = 16;        // reference runs used 400
    std::size_t max_iterations = 5000;  // 0 is legal: evaluate-only
    std::size_t validation_cadence = 0; // iterations between validations; 0 = once per epoch
    std::size_t patience = 10;          // validations without >=1e-6 improvement before stopping
    bool dropout = false;               // apply the model's dropout rate during training passes
    std::uint64_t seed = 1;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
            throw ConfigError("learning_rate must be positive and finite");
        }
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (patience == 0) throw ConfigError("patience must be positive");
    }

    bool operator==(const TrainConfig&) const = default;
};

struct ValPoint {
    std::int64_t iteration = 0;
    double mse = 0.0;
    bool operator==(const ValPoint&) const = default;
};

// Loss history. train_mse has one entry per completed iteration; validation
// points are ordered by iteration and include a baseline at iteration 0.
struct LearningCurve {
    std::vector<double> train_mse;
    std::vector<ValPoint> validation;
    std::int64_t best_iteration = -1;
    double best_validation = std::numeric_limits<double>::infinity();

    bool operator==(const LearningCurve&) const = default;
};

// Complete trainer state: enough to resume bit-exactly, plus the weights that
// scored the best validation MSE (the ones inference should use).
struct Checkpoint {
    std::uint32_t version = 1;
    ModelSpec spec;
    TrainConfig config;
    std::uint64_t split_seed = 0;
    std::int64_t iteration = 0;
    LearningCurve curve;
    AdamState<float> adam;
    std::vector<std::vector<float>> params;
    std::vector<std::vector<float>> best_params;
};

// Training inputs. The split is carried alongside the strips so every batch
// can be provenance-checked against the training role.
struct TrainData {
    std::vector<StripPair> train;
    std::vector<StripPair> validation;
    DatasetSplit split;
};

namespace detail {

inline void write_f64_le(std::ostream& os, const double* src, std::size_t n) {
    static_assert(sizeof(double) == 8);
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(src), static_cast<std::streamsize>(n * 8));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t u;
            std::memcpy(&u, &src[i], 8);
            char b[8];
            for (int k = 0; k < 8; ++k) b[k] = char((u >> (8 * k)) & 0xff);
            os.write(b, 8);
        }
    }
}

inline void read_f64_le(std::istream& is, double* dst, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * 8));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            unsigned char b[8];
            is.read(reinterpret_cast<char*>(b), 8);
            std::uint64_t u = 0;
            for (int k = 0; k < 8; ++k) u |= std::uint64_t(b[k]) << (8 * k);
            std::memcpy(&dst[i], &u, 8);
        }
    }
}

inline void write_i64_le(std::ostream& os, const std::int64_t* src, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const auto u = static_cast<std::uint64_t>(src[i]);
        char b[8];
        for (int k = 0; k < 8; ++k) b[k] = char((u >> (8 * k)) & 0xff);
        os.write(b, 8);
    }
}

inline void read_i64_le(std::istream& is, std::int64_t* dst, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char b[8];
        is.read(reinterpret_cast<char*>(b), 8);
        std::uint64_t u = 0;
        for (int k = 0; k < 8; ++k) u |= std::uint64_t(b[k]) << (8 * k);
        dst[i] = static_cast<std::int64_t>(u);
    }
}

constexpr std::uint64_t kInitStream = 0x696e6974ULL;   // 'init'
constexpr std::uint64_t kEpochStream = 0x65706f6368ULL; // 'epoch'
constexpr std::uint64_t kDropStream = 0x64726f70ULL;    // 'drop'
constexpr double kImprovementFloor = 1e-6;

// Shuffled strip order for one epoch; a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                            std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed_combine(seed, kEpochStream, epoch));
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = std::size_t(rng.next_below(i));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

inline void check_strip_shapes(const TrainData& data, const ModelSpec& spec) {
    if (data.train.empty()) throw ConfigError("no training strips");
    if (data.validation.empty()) throw ConfigError("no validation strips");
    const std::size_t h = data.train[0].height, w = data.train[0].width;
    auto check = [&](const StripPair& sp, const char* role) {
        if (sp.height != h || sp.width != w) {
            throw ShapeError(std::string(role) + " strip " + std::to_string(sp.height) + "x" +
                             std::to_string(sp.width) + " differs from " + std::to_string(h) +
                             "x" + std::to_string(w));
        }
    };
    for (const auto& sp : data.train) check(sp, "training");
    for (const auto& sp : data.validation) check(sp, "validation");
    const std::size_t d = std::size_t(spec.divisor());
    if (h % d != 0 || w % d != 0) {
        throw ShapeError("strip " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by network factor " + std::to_string(d));
    }
}

inline void fill_pair(Tensor4<float>& x, Tensor4<float>& y, int slot, const StripPair& sp) {
    const int h = int(sp.height), w = int(sp.width);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            x.at(slot, 0, r, c) = sp.structure[std::size_t(r) * sp.width + std::size_t(c)];
            y.at(slot, 0, r, c) = sp.flow[std::size_t(r) * sp.width + std::size_t(c)];
        }
    }
}

// Mean squared error over an entire strip set, batched, inference mode.
inline double evaluate_mse(const Network<float>& net, const std::vector<StripPair>& strips,
                           std::size_t batch) {
    const std::size_t h = strips[0].height, w = strips[0].width;
    double sq_sum = 0.0;
    std::size_t voxels = 0;
    for (std::size_t at = 0; at < strips.size(); at += batch) {
        const std::size_t n = std::min(batch, strips.size() - at);
        Tensor4<float> x(int(n), 1, int(h), int(w)), y(int(n), 1, int(h), int(w));
        for (std::size_t b = 0; b < n; ++b) fill_pair(x, y, int(b), strips[at + b]);
        const Tensor4<float> pred = net.infer(x);
        const auto r = mse_loss(pred, y);
        sq_sum += r.loss * double(pred.size());
        voxels += pred.size();
    }
    return sq_sum / double(voxels);
}

struct TrainOutcome {
    Checkpoint ck;
    std::int64_t diverged_at = -1; // iteration whose loss went non-finite, or -1
};

// Core loop shared by train/resume/bakeoff. Consumes `ck` as the starting
// state (params already loaded into `net`) and advances it to completion,
// early stop, divergence, or max_iterations. All randomness is a pure
// function of (config seed, epoch index, iteration), so a resumed run
// replays the identical stream.
inline TrainOutcome run_training(Network<float>& net, ParamStore<float>& store, Checkpoint ck,
                                 const TrainData& data) {
    const TrainConfig& cfg = ck.config;
    const std::size_t n_train = data.train.size();
    const std::size_t batch = cfg.batch_size;
    if (batch > n_train) {
        throw ConfigError("batch_size " + std::to_string(batch) + " exceeds training strips " +
                          std::to_string(n_train));
    }
    const std::size_t iters_per_epoch = n_train / batch;
    const std::size_t cadence =
        cfg.validation_cadence > 0 ? cfg.validation_cadence : iters_per_epoch;

    const std::size_t h = data.train[0].height, w = data.train[0].width;

    // Replay the improvement streak from the recorded validation history so
    // a resumed run stops exactly where the uninterrupted one would.
    double best = std::numeric_limits<double>::infinity();
    std::size_t streak = 0;
    for (const auto& vp : ck.curve.validation) {
        if (vp.mse <= best - kImprovementFloor) streak = 0; else ++streak;
        best = std::min(best, vp.mse);
    }

    auto record_validation = [&](std::int64_t iter) -> bool {
        const double v = evaluate_mse(net, data.validation, batch);
        if (!std::isfinite(v)) return false;
        ck.curve.validation.push_back({iter, v});
        if (v < ck.curve.best_validation) {
            ck.curve.best_validation = v;
            ck.curve.best_iteration = iter;
            ck.best_params = store.snapshot();
        }
        if (v <= best - kImprovementFloor) streak = 0; else ++streak;
        best = std::min(best, v);
        return true;
    };

    if (ck.iteration == 0 && ck.curve.validation.empty()) {
        if (!record_validation(0)) {
            TrainOutcome out{std::move(ck), 0};
            return out;
        }
    }

    Tensor4<float> x(int(batch), 1, int(h), int(w)), y(int(batch), 1, int(h), int(w));
    std::vector<std::size_t> order;
    std::uint64_t order_epoch = ~0ULL;

    while (std::size_t(ck.iteration) < cfg.max_iterations && streak < cfg.patience) {
        const auto iter = std::uint64_t(ck.iteration);
        const std::uint64_t epoch = iter / iters_per_epoch;
        if (epoch != order_epoch) {
            order = epoch_order(n_train, cfg.seed, epoch);
            order_epoch = epoch;
        }
        const std::size_t slot = std::size_t(iter % iters_per_epoch);
        for (std::size_t b = 0; b < batch; ++b) {
            const StripPair& sp = data.train[order[slot * batch + b]];
            if (data.split.role_of(sp.origin.volume_id) != SplitRole::train) {
                throw StateError("non-training strip from volume '" + sp.origin.volume_id +
                                 "' reached a gradient batch");
            }
            fill_pair(x, y, int(b), sp);
        }

        const auto tape = net.forward(x, cfg.dropout, seed_combine(cfg.seed, kDropStream, iter));
        const auto loss = mse_loss(tape.outs.back(), y);
        if (!std::isfinite(loss.loss)) {
            const std::int64_t at = ck.iteration;
            TrainOutcome out{std::move(ck), at};
            return out;
        }

        const auto grads = net.backward(tape, loss.grad);
        adam_update(store.pointers(), store.counts(), grads.arrays, ck.adam);
        ck.curve.train_mse.push_back(loss.loss);
        ck.iteration += 1;

        const bool due = (std::size_t(ck.iteration) % cadence == 0) ||
                         (std::size_t(ck.iteration) == cfg.max_iterations);
        if (due && !record_validation(ck.iteration)) {
            const std::int64_t at = ck.iteration;
            TrainOutcome out{std::move(ck), at};
            return out;
        }
    }

    ck.params = store.snapshot();
    return {std::move(ck), -1};
}

inline TrainOutcome train_outcome(const ModelSpec& spec, const TrainData& data,
                                  const TrainConfig& cfg) {
    spec.validate();
    cfg.validate();
    check_strip_shapes(data, spec);

    Network<float> net(spec, seed_combine(cfg.seed, kInitStream));
    auto store = net.params();

    Checkpoint ck;
    ck.spec = spec;
    ck.config = cfg;
    ck.split_seed = data.split.seed;
    ck.adam = AdamState<float>::fresh(store.snapshot(),
                                      AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
    ck.params = store.snapshot();
    auto out = run_training(net, store, std::move(ck), data);
    out.ck.params = store.snapshot();
    return out;
}

}  // namespace detail

// Trains a fresh network. Throws StateError naming the iteration if the loss
// goes non-finite.
inline Checkpoint train(const ModelSpec& spec, const TrainData& data, const TrainConfig& cfg) {
    auto out = detail::train_outcome(spec, data, cfg);
    if (out.diverged_at >= 0) {
        throw StateError("training diverged at iteration " + std::to_string(out.diverged_at));
    }
    return std::move(out.ck);
}

// Continues an interrupted run to its configured max_iterations. The result
// is bit-identical to never having stopped.
inline Checkpoint resume_training(const Checkpoint& start, const TrainData& data) {
    start.spec.validate();
    start.config.validate();
    detail::check_strip_shapes(data, start.spec);
    if (start.split_seed != data.split.seed) {
        throw StateError("checkpoint was trained on split seed " +
                         std::to_string(start.split_seed) + ", data uses " +
                         std::to_string(data.split.seed));
    }

    Network<float> net(start.spec, 0);
    auto store = net.params();
    store.restore(start.params);
    auto out = detail::run_training(net, store, start, data);
    if (out.diverged_at >= 0) {
        throw StateError("training diverged at iteration " + std::to_string(out.diverged_at));
    }
    out.ck.params = store.snapshot();
    return std::move(out.ck);
}

// Builds the checkpoint's network, loading either the best-validation weights
// (for inference) or the latest weights (for inspection).
inline Network<float> build_network(const Checkpoint& ck, bool best_weights = true) {
    Network<float> net(ck.spec, 0);
    auto store = net.params();
    const auto& src = best_weights && !ck.best_params.empty() ? ck.best_params : ck.params;
    store.restore(src);
    return net;
}

// ---- checkpoint file format ----
// Text manifest, blank line, binary payload (all little-endian):
// params, best params, Adam m, Adam v as f32 arrays; training losses as f64;
// validation points as (i64 iteration, f64 mse) pairs.

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");

    const std::size_t arrays = ck.params.size();
    if (ck.adam.m.size() != arrays || ck.adam.v.size() != arrays ||
        (!ck.best_params.empty() && ck.best_params.size() != arrays)) {
        throw StateError("checkpoint arrays are inconsistent");
    }
    if (ck.curve.train_mse.size() != std::size_t(ck.iteration)) {
        throw StateError("loss history length " + std::to_string(ck.curve.train_mse.size()) +
                         " does not match iteration " + std::to_string(ck.iteration));
    }

    std::uint64_t payload = 0;
    for (const auto& a : ck.params) payload += a.size() * 4;
    if (!ck.best_params.empty()) {
        for (const auto& a : ck.best_params) payload += a.size() * 4;
    }
    for (const auto& a : ck.adam.m) payload += a.size() * 4;
    for (const auto& a : ck.adam.v) payload += a.size() * 4;
    payload += ck.curve.train_mse.size() * 8;
    payload += ck.curve.validation.size() * 16;

    char num[64];
    auto fmt = [&](double v) {
        std::snprintf(num, sizeof num, "%.17g", v);
        return std::string(num);
    };
    os << "octflow-checkpoint " << ck.version << "\n";
    os << "spec " << ck.spec.to_line() << "\n";
    os << "learning_rate " << fmt(ck.config.learning_rate) << "\n";
    os << "batch_size " << ck.config.batch_size << "\n";
    os << "max_iterations " << ck.config.max_iterations << "\n";
    os << "validation_cadence " << ck.config.validation_cadence << "\n";
    os << "patience " << ck.config.patience << "\n";
    os << "dropout " << (ck.config.dropout ? 1 : 0) << "\n";
    os << "seed " << ck.config.seed << "\n";
    os << "split_seed " << ck.split_seed << "\n";
    os << "iteration " << ck.iteration << "\n";
    os << "adam_t " << ck.adam.t << "\n";
    os << "adam_beta1 " << fmt(ck.adam.cfg.beta1) << "\n";
    os << "adam_beta2 " << fmt(ck.adam.cfg.beta2) << "\n";
    os << "adam_eps " << fmt(ck.adam.cfg.eps) << "\n";
    os << "arrays " << arrays << "\n";
    for (const auto& a : ck.params) os << "count " << a.size() << "\n";
    os << "train_points " << ck.curve.train_mse.size() << "\n";
    os << "val_points " << ck.curve.validation.size() << "\n";
    os << "best_iteration " << ck.curve.best_iteration << "\n";
    os << "best_validation " << fmt(ck.curve.best_validation) << "\n";
    os << "has_best " << (ck.best_params.empty() ? 0 : 1) << "\n";
    os << "payload " << payload << "\n\n";

    for (const auto& a : ck.params) detail::write_f32_le(os, a.data(), a.size());
    if (!ck.best_params.empty()) {
        for (const auto& a : ck.best_params) detail::write_f32_le(os, a.data(), a.size());
    }
    for (const auto& a : ck.adam.m) detail::write_f32_le(os, a.data(), a.size());
    for (const auto& a : ck.adam.v) detail::write_f32_le(os, a.data(), a.size());
    detail::write_f64_le(os, ck.curve.train_mse.data(), ck.curve.train_mse.size());
    for (const auto& vp : ck.curve.validation) {
        detail::write_i64_le(os, &vp.iteration, 1);
        detail::write_f64_le(os, &vp.mse, 1);
    }
    if (!os) throw IoError("short write to '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    auto fail = [&](const std::string& why) -> void {
        throw IoError("'" + path + "': " + why);
    };

    std::string line;
    auto next_line = [&]() -> std::string& {
        if (!std::getline(is, line)) fail("truncated manifest");
        return line;
    };
    auto take = [&](const std::string& key) -> std::string {
        next_line();
        if (line.rfind(key + " ", 0) != 0) fail("expected '" + key + "' line, got '" + line + "'");
        return line.substr(key.size() + 1);
    };
    auto take_u64 = [&](const std::string& key) -> std::uint64_t {
        const std::string v = take(key);
        char* end = nullptr;
        const auto r = std::strtoull(v.c_str(), &end, 10);
        if (end == v.c_str() || *end != '\0') fail("bad integer for '" + key + "': '" + v + "'");
        return r;
    };
    auto take_i64 = [&](const std::string& key) -> std::int64_t {
        const std::string v = take(key);
        char* end = nullptr;
        const auto r = std::strtoll(v.c_str(), &end, 10);
        if (end == v.c_str() || *end != '\0') fail("bad integer for '" + key + "': '" + v + "'");
        return r;
    };
    auto take_f64 = [&](const std::string& key) -> double {
        const std::string v = take(key);
        char* end = nullptr;
        const double r = std::strtod(v.c_str(), &end);
        if (end == v.c_str() || *end != '\0') fail("bad number for '" + key + "': '" + v + "'");
        return r;
    };

    Checkpoint ck;
    {
        const std::string head = next_line();
        unsigned ver = 0;
        if (std::sscanf(head.c_str(), "octflow-checkpoint %u", &ver) != 1) fail("bad magic line");
        if (ver != 1) fail("unsupported version " + std::to_string(ver));
        ck.version = ver;
    }
    try {
        ck.spec = ModelSpec::from_line(take("spec"));
    } catch (const ConfigError& e) {
        fail(std::string("bad spec line: ") + e.what());
    }
    ck.config.learning_rate = take_f64("learning_rate");
    ck.config.batch_size = std::size_t(take_u64("batch_size"));
    ck.config.max_iterations = std::size_t(take_u64("max_iterations"));
    ck.config.validation_cadence = std::size_t(take_u64("validation_cadence"));
    ck.config.patience = std::size_t(take_u64("patience"));
    ck.config.dropout = take_u64("dropout") != 0;
    ck.config.seed = take_u64("seed");
    ck.split_seed = take_u64("split_seed");
    ck.iteration = take_i64("iteration");
    ck.adam.t = take_i64("adam_t");
    ck.adam.cfg.lr = ck.config.learning_rate;
    ck.adam.cfg.beta1 = take_f64("adam_beta1");
    ck.adam.cfg.beta2 = take_f64("adam_beta2");
    ck.adam.cfg.eps = take_f64("adam_eps");
    ck.config.validate();
    if (ck.iteration < 0) fail("negative iteration");

    const auto arrays = std::size_t(take_u64("arrays"));
    std::vector<std::size_t> counts(arrays);
    for (std::size_t i = 0; i < arrays; ++i) counts[i] = std::size_t(take_u64("count"));

    const auto train_points = std::size_t(take_u64("train_points"));
    const auto val_points = std::size_t(take_u64("val_points"));
    ck.curve.best_iteration = take_i64("best_iteration");
    ck.curve.best_validation = take_f64("best_validation");
    const bool has_best = take_u64("has_best") != 0;
    const std::uint64_t payload = take_u64("payload");
    next_line();
    if (!line.empty()) fail("missing blank line before payload");

    if (train_points != std::size_t(ck.iteration)) {
        fail("loss history length " + std::to_string(train_points) +
             " does not match iteration " + std::to_string(ck.iteration));
    }

    // Array layout must match the spec's construction.
    {
        Network<float> probe(ck.spec, 0);
        auto store = probe.params();
        if (store.size() != arrays) fail("array count does not match spec");
        for (std::size_t i = 0; i < arrays; ++i) {
            if (store[i].count != counts[i]) {
                fail("array " + std::to_string(i) + " count " + std::to_string(counts[i]) +
                     " does not match spec's " + std::to_string(store[i].count));
            }
        }
    }

    std::uint64_t expect = 0;
    for (auto c : counts) expect += c * 4;
    if (has_best) for (auto c : counts) expect += c * 4;
    for (auto c : counts) expect += c * 8; // m + v
    expect += train_points * 8 + val_points * 16;
    if (payload != expect) fail("payload size mismatch");

    auto read_arrays = [&](std::vector<std::vector<float>>& dst) {
        dst.resize(arrays);
        for (std::size_t i = 0; i < arrays; ++i) {
            dst[i].resize(counts[i]);
            detail::read_f32_le(is, dst[i].data(), counts[i]);
        }
    };
    read_arrays(ck.params);
    if (has_best) read_arrays(ck.best_params);
    read_arrays(ck.adam.m);
    read_arrays(ck.adam.v);
    ck.curve.train_mse.resize(train_points);
    detail::read_f64_le(is, ck.curve.train_mse.data(), train_points);
    ck.curve.validation.resize(val_points);
    for (auto& vp : ck.curve.validation) {
        detail::read_i64_le(is, &vp.iteration, 1);
        detail::read_f64_le(is, &vp.mse, 1);
    }
    if (!is) fail("truncated payload");
    char extra;
    if (is.read(&extra, 1)) fail("trailing bytes after payload");

    // Internal consistency of the recorded best point.
    if (!ck.curve.validation.empty()) {
        double lowest = std::numeric_limits<double>::infinity();
        std::int64_t at = -1;
        for (const auto& vp : ck.curve.validation) {
            if (vp.mse < lowest) { lowest = vp.mse; at = vp.iteration; }
        }
        if (at != ck.curve.best_iteration || lowest != ck.curve.best_validation) {
            fail("best-validation record does not match curve");
        }
    }
    return ck;
}

// Learning curve as comma-separated text: kind,iteration,mse.
inline void save_curve_csv(const std::string& path, const LearningCurve& curve) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    char num[64];
    os << "kind,iteration,mse\n";
    for (std::size_t i = 0; i < curve.train_mse.size(); ++i) {
        std::snprintf(num, sizeof num, "%.17g", curve.train_mse[i]);
        os << "train," << (i + 1) << "," << num << "\n";
    }
    for (const auto& vp : curve.validation) {
        std::snprintf(num, sizeof num, "%.17g", vp.mse);
        os << "validation," << vp.iteration << "," << num << "\n";
    }
    if (!os) throw IoError("short write to '" + path + "'");
}

// ---- bake-off harness ----

struct BakeoffRow {
    ModelSpec spec;
    std::size_t params = 0;
    bool diverged = false;
    std::int64_t diverged_at = -1;
    double best_validation = std::numeric_limits<double>::infinity();
    std::int64_t best_iteration = -1;
};

struct BakeoffResult {
    std::vector<BakeoffRow> rows;       // input order
    std::vector<LearningCurve> curves;  // input order
    int winner = -1;                    // index into rows, -1 if every variant diverged
    std::string table;
};

namespace detail {

inline std::string render_bakeoff_table(const BakeoffResult& r, const TrainConfig& cfg) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "bake-off: %zu variants, %zu iterations, batch %zu, lr %g, seed %llu\n",
                  r.rows.size(), cfg.max_iterations, cfg.batch_size, cfg.learning_rate,
                  static_cast<unsigned long long>(cfg.seed));
    os << buf;
    for (BridgeKind bridge : {BridgeKind::none, BridgeKind::sum, BridgeKind::concat}) {
        bool any = false;
        for (const auto& row : r.rows) {
            if (row.spec.bridge != bridge) continue;
            if (!any) {
                os << "bridge=" << bridge_name(bridge) << "\n";
                std::snprintf(buf, sizeof buf, "  %-14s %10s %16s %9s\n", "variant", "params",
                              "best val MSE", "at iter");
                os << buf;
                any = true;
            }
            if (row.diverged) {
                std::snprintf(buf, sizeof buf, "  %-14s %10zu %16s %9lld\n",
                              row.spec.name().c_str(), row.params, "diverged",
                              static_cast<long long>(row.diverged_at));
            } else {
                std::snprintf(buf, sizeof buf, "  %-14s %10zu %16.6e %9lld\n",
                              row.spec.name().c_str(), row.params, row.best_validation,
                              static_cast<long long>(row.best_iteration));
            }
            os << buf;
        }
    }
    if (r.winner >= 0) {
        const auto& w = r.rows[std::size_t(r.winner)];
        std::snprintf(buf, sizeof buf,
                      "winner: %s (%zu params), best validation MSE %.6e at iteration %lld\n",
                      w.spec.name().c_str(), w.params, w.best_validation,
                      static_cast<long long>(w.best_iteration));
        os << buf;
    } else {
        os << "winner: none (all variants diverged)\n";
    }
    const ModelSpec ref{9, 18, BridgeKind::concat, 0.0, Growth::doubling};
    const std::size_t ref_count = count_params(ref);
    std::snprintf(buf, sizeof buf,
                  "param check: %s = %zu parameters, %.4fx the 7.85e6 reference\n",
                  ref.name().c_str(), ref_count, double(ref_count) / 7.85e6);
    os << buf;
    return os.str();
}

}  // namespace detail

// Trains every spec with the identical config, data order, and seed; ranks by
// lowest validation MSE with ties broken by fewer parameters. A diverging
// variant is reported in its row, not fatal.
inline BakeoffResult bakeoff(const std::vector<ModelSpec>& specs, const TrainData& data,
                             const TrainConfig& cfg) {
    if (specs.empty()) throw ConfigError("bake-off needs at least one model spec");
    BakeoffResult result;
    result.rows.reserve(specs.size());
    result.curves.reserve(specs.size());

    for (const auto& spec : specs) {
        auto out = detail::train_outcome(spec, data, cfg);
        BakeoffRow row;
        row.spec = spec;
        row.params = count_params(spec);
        if (out.diverged_at >= 0) {
            row.diverged = true;
            row.diverged_at = out.diverged_at;
        } else {
            row.best_validation = out.ck.curve.best_validation;
            row.best_iteration = out.ck.curve.best_iteration;
        }
        result.rows.push_back(row);
        result.curves.push_back(std::move(out.ck.curve));
    }

    for (std::size_t i = 0; i < result.rows.size(); ++i) {
        const auto& row = result.rows[i];
        if (row.diverged) continue;
        if (result.winner < 0) { result.winner = int(i); continue; }
        const auto& best = result.rows[std::size_t(result.winner)];
        if (row.best_validation < best.best_validation ||
            (row.best_validation == best.best_validation && row.params < best.params)) {
            result.winner = int(i);
        }
    }
    result.table = detail::render_bakeoff_table(result, cfg);
    return result;
}

}  // namespace octflow
