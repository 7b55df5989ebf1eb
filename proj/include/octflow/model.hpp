#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "octflow/adam.hpp"
#include "octflow/ops.hpp"
#include "octflow/params.hpp"
#include "octflow/rng.hpp"
#include "octflow/tensor.hpp"

namespace octflow {

enum class Growth { constant, doubling };

inline const char* growth_name(Growth g) {
    return g == Growth::constant ? "constant" : "doubling";
}

inline Growth growth_from_name(const std::string& s) {
    if (s == "constant") return Growth::constant;
    if (s == "doubling") return Growth::doubling;
    throw ConfigError("unknown channel growth '" + s + "' (constant|doubling)");
}

inline BridgeKind bridge_from_name(const std::string& s) {
    if (s == "none") return BridgeKind::none;
    if (s == "sum") return BridgeKind::sum;
    if (s == "concat") return BridgeKind::concat;
    throw ConfigError("unknown bridge '" + s + "' (none|sum|concat)");
}

// Descriptor for one U-shaped variant: depth, width, bridge style.
struct ModelSpec {
    int blocks = 9;
    int base_filters = 18;
    BridgeKind bridge = BridgeKind::concat;
    double dropout_rate = 0.0;
    Growth growth = Growth::doubling;

    int levels() const { return (blocks - 1) / 2; }
    int divisor() const { return 1 << levels(); }

    void validate() const {
        if (blocks != 5 && blocks != 9) {
            throw ConfigError("blocks must be 5 or 9, got " + std::to_string(blocks));
        }
        if (base_filters != 5 && base_filters != 9 && base_filters != 10 && base_filters != 18) {
            throw ConfigError("base_filters must be one of 5, 9, 10, 18, got " +
                              std::to_string(base_filters));
        }
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
            throw ConfigError("dropout_rate must be in [0,1), got " + std::to_string(dropout_rate));
        }
    }

    // Stable short id, e.g. "b9f18-concat".
    std::string name() const {
        return "b" + std::to_string(blocks) + "f" + std::to_string(base_filters) + "-" +
               bridge_name(bridge);
    }

    std::string to_line() const {
        char dr[40];
        std::snprintf(dr, sizeof dr, "%.17g", dropout_rate);
        return "blocks=" + std::to_string(blocks) + " base_filters=" + std::to_string(base_filters) +
               " bridge=" + bridge_name(bridge) + " dropout_rate=" + dr +
               " channel_growth=" + growth_name(growth);
    }

    static ModelSpec from_line(const std::string& line) {
        ModelSpec s;
        bool got[5] = {};
        std::size_t pos = 0;
        while (pos < line.size()) {
            while (pos < line.size() && line[pos] == ' ') ++pos;
            std::size_t sp = line.find(' ', pos);
            if (sp == std::string::npos) sp = line.size();
            const std::string tok = line.substr(pos, sp - pos);
            pos = sp;
            if (tok.empty()) continue;
            const std::size_t eq = tok.find('=');
            if (eq == std::string::npos) throw ConfigError("bad model token '" + tok + "'");
            const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
            try {
                if (key == "blocks") { s.blocks = std::stoi(val); got[0] = true; }
                else if (key == "base_filters") { s.base_filters = std::stoi(val); got[1] = true; }
                else if (key == "bridge") { s.bridge = bridge_from_name(val); got[2] = true; }
                else if (key == "dropout_rate") { s.dropout_rate = std::stod(val); got[3] = true; }
                else if (key == "channel_growth") { s.growth = growth_from_name(val); got[4] = true; }
                else throw ConfigError("unknown model key '" + key + "'");
            } catch (const std::invalid_argument&) {
                throw ConfigError("bad value for model key '" + key + "': '" + val + "'");
            }
        }
        for (bool g : got) {
            if (!g) throw ConfigError("model line missing a required key: '" + line + "'");
        }
        s.validate();
        return s;
    }

    bool operator==(const ModelSpec&) const = default;
};

// Channel width at each level 0..L (level L is the bottleneck).
inline std::vector<int> channel_plan(const ModelSpec& spec) {
    const int L = spec.levels();
    std::vector<int> ch(static_cast<std::size_t>(L) + 1);
    for (int i = 0; i <= L; ++i) {
        ch[static_cast<std::size_t>(i)] =
            spec.growth == Growth::doubling ? (spec.base_filters << i) : spec.base_filters;
    }
    return ch;
}

// Closed-form trainable parameter count; mirrors the builder's composition.
inline std::size_t count_params(const ModelSpec& spec) {
    spec.validate();
    const auto ch = channel_plan(spec);
    const int L = spec.levels();
    auto conv = [](int ci, int co) {
        return static_cast<std::size_t>(co) * (9u * static_cast<std::size_t>(ci) + 1u);
    };
    std::size_t total = 0;
    int prev = 1;
    for (int i = 0; i < L; ++i) {
        total += conv(prev, ch[i]) + conv(ch[i], ch[i]);
        prev = ch[i];
    }
    total += conv(ch[L - 1], ch[L]) + conv(ch[L], ch[L]);
    for (int i = L - 1; i >= 0; --i) {
        total += conv(ch[i + 1], ch[i]); // channel projection after upsampling
        const int in1 = spec.bridge == BridgeKind::concat ? 2 * ch[i] : ch[i];
        total += conv(in1, ch[i]) + conv(ch[i], ch[i]);
    }
    total += conv(ch[0], 1);
    return total;
}

// The 12 variants: four (blocks, filters) archetypes times three bridges.
inline std::vector<ModelSpec> variant_zoo(double dropout_rate = 0.0,
                                          Growth growth = Growth::doubling) {
    const std::pair<int, int> shapes[4] = {{5, 5}, {5, 10}, {9, 9}, {9, 18}};
    const BridgeKind bridges[3] = {BridgeKind::none, BridgeKind::sum, BridgeKind::concat};
    std::vector<ModelSpec> zoo;
    zoo.reserve(12);
    for (const auto& [b, f] : shapes) {
        for (BridgeKind br : bridges) {
            zoo.push_back(ModelSpec{b, f, br, dropout_rate, growth});
        }
    }
    return zoo;
}

enum class NodeKind { input, conv, relu, pool, upsample, bridge, dropout };

struct Node {
    NodeKind kind;
    int src = -1;   // primary input node
    int skip = -1;  // bridge second input
    int param = -1; // conv parameter slot
};

// Activation record from one forward pass; required by backward.
template <typename T>
struct Tape {
    bool valid = false;
    bool train = false;
    std::vector<Tensor4<T>> outs;
    std::vector<std::vector<std::uint8_t>> aux; // pool argmax / dropout keep masks

    const Tensor4<T>& output() const { return outs.back(); }
};

template <typename T>
struct Grads {
    // One entry per ParamStore array, same order, flattened.
    std::vector<std::vector<T>> arrays;
};

// A built variant: explicit node list in topological order, plus the owned
// kernels and biases. Immutable during forward; the trainer mutates
// parameters between passes through params().
template <typename T>
class Network {
public:
    Network(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
        spec_.validate();
        const auto ch = channel_plan(spec_);
        const int L = spec_.levels();

        nodes_.push_back(Node{NodeKind::input});
        int cur = 0;
        std::vector<int> skips(static_cast<std::size_t>(L), -1);
        int prev_ch = 1;
        for (int i = 0; i < L; ++i) {
            const std::string base = "enc" + std::to_string(i);
            cur = add_block(base, cur, prev_ch, ch[i]);
            skips[static_cast<std::size_t>(i)] = cur;
            cur = add_node(Node{NodeKind::pool, cur});
            prev_ch = ch[i];
        }
        cur = add_block("mid", cur, ch[L - 1], ch[L]);
        for (int i = L - 1; i >= 0; --i) {
            const std::string base = "dec" + std::to_string(i);
            cur = add_node(Node{NodeKind::upsample, cur});
            cur = add_conv(base + ".up", cur, ch[i + 1], ch[i]);
            cur = add_node(Node{NodeKind::relu, cur});
            int block_in = ch[i];
            if (spec_.bridge != BridgeKind::none) {
                const int skip_ch = ch[i];
                if (spec_.bridge == BridgeKind::sum && skip_ch != ch[i]) {
                    throw ConfigError("sum bridge channel mismatch at level " + std::to_string(i));
                }
                Node b{NodeKind::bridge, cur};
                b.skip = skips[static_cast<std::size_t>(i)];
                cur = add_node(b);
                if (spec_.bridge == BridgeKind::concat) block_in = 2 * ch[i];
            }
            cur = add_block(base, cur, block_in, ch[i]);
        }
        cur = add_conv("head", cur, ch[0], 1);

        init_params(seed);
    }

    const ModelSpec& spec() const { return spec_; }
    const std::vector<Node>& nodes() const { return nodes_; }

    ParamStore<T> params() {
        ParamStore<T> store;
        for (std::size_t k = 0; k < kernels_.size(); ++k) {
            auto& ker = kernels_[k];
            store.add(names_[k] + ".kernel", {ker.n(), ker.c(), ker.h(), ker.w()},
                      ker.data(), ker.size());
            store.add(names_[k] + ".bias", {static_cast<int>(biases_[k].size())},
                      biases_[k].data(), biases_[k].size());
        }
        return store;
    }

    std::size_t param_count() const {
        std::size_t total = 0;
        for (const auto& k : kernels_) total += k.size();
        for (const auto& b : biases_) total += b.size();
        return total;
    }

    // Divisibility contract for inputs.
    void check_input(const Tensor4<T>& x) const {
        if (x.c() != 1) {
            throw ShapeError("network input must have 1 channel, got " + x.shape().str());
        }
        const int d = spec_.divisor();
        if (x.h() % d != 0 || x.w() % d != 0) {
            throw ShapeError("network input " + x.shape().str() + " not divisible by " +
                             std::to_string(d));
        }
    }

    // dropout_seed only matters when train=true and spec.dropout_rate > 0;
    // masks are derived per node from (dropout_seed, node index).
    Tape<T> forward(const Tensor4<T>& x, bool train, std::uint64_t dropout_seed = 0) const {
        check_input(x);
        Tape<T> tape;
        tape.valid = true;
        tape.train = train;
        tape.outs.reserve(nodes_.size());
        tape.aux.resize(nodes_.size());
        tape.outs.push_back(x);
        for (std::size_t i = 1; i < nodes_.size(); ++i) {
            const Node& nd = nodes_[i];
            const Tensor4<T>& in = tape.outs[static_cast<std::size_t>(nd.src)];
            switch (nd.kind) {
            case NodeKind::conv:
                tape.outs.push_back(conv2d_forward(in, kernels_[static_cast<std::size_t>(nd.param)],
                                                   biases_[static_cast<std::size_t>(nd.param)]));
                break;
            case NodeKind::relu:
                tape.outs.push_back(relu(in));
                break;
            case NodeKind::pool: {
                auto r = maxpool2(in);
                tape.outs.push_back(std::move(r.out));
                tape.aux[i] = std::move(r.argmax);
                break;
            }
            case NodeKind::upsample:
                tape.outs.push_back(upsample2(in));
                break;
            case NodeKind::bridge:
                tape.outs.push_back(bridge_combine(tape.outs[static_cast<std::size_t>(nd.skip)],
                                                   in, spec_.bridge));
                break;
            case NodeKind::dropout: {
                Rng r(seed_combine(dropout_seed, static_cast<std::uint64_t>(i)));
                auto d = dropout_forward(in, spec_.dropout_rate, train, r);
                tape.outs.push_back(std::move(d.out));
                tape.aux[i] = std::move(d.kept);
                break;
            }
            case NodeKind::input:
                throw StateError("input node repeated in graph");
            }
        }
        return tape;
    }

    Tensor4<T> infer(const Tensor4<T>& x) const { return forward(x, false).outs.back(); }

    Grads<T> backward(const Tape<T>& tape, const Tensor4<T>& d_out) const {
        if (!tape.valid) {
            throw StateError("backward requires a recorded forward pass");
        }
        if (tape.outs.size() != nodes_.size()) {
            throw StateError("tape does not belong to this network (node count " +
                             std::to_string(tape.outs.size()) + " vs " +
                             std::to_string(nodes_.size()) + ")");
        }
        require_same_shape(d_out, tape.outs.back(), "backward");

        Grads<T> g;
        g.arrays.resize(2 * kernels_.size());
        for (std::size_t k = 0; k < kernels_.size(); ++k) {
            g.arrays[2 * k].assign(kernels_[k].size(), T{0});
            g.arrays[2 * k + 1].assign(biases_[k].size(), T{0});
        }

        std::vector<Tensor4<T>> d(nodes_.size());
        d.back() = d_out;
        auto add_to = [&](int idx, Tensor4<T>&& t) {
            auto& slot = d[static_cast<std::size_t>(idx)];
            if (slot.size() == 0) {
                slot = std::move(t);
            } else {
                require_same_shape(slot, t, "grad accumulate");
                for (std::size_t j = 0; j < slot.size(); ++j) {
                    slot.vec()[j] = static_cast<T>(static_cast<double>(slot.vec()[j]) +
                                                   static_cast<double>(t.vec()[j]));
                }
            }
        };

        for (std::size_t i = nodes_.size(); i-- > 1;) {
            if (d[i].size() == 0) continue; // node feeds nothing on the loss path
            const Node& nd = nodes_[i];
            const Tensor4<T>& in = tape.outs[static_cast<std::size_t>(nd.src)];
            switch (nd.kind) {
            case NodeKind::conv: {
                auto cg = conv2d_backward(in, kernels_[static_cast<std::size_t>(nd.param)], d[i]);
                auto& ka = g.arrays[2 * static_cast<std::size_t>(nd.param)];
                auto& ba = g.arrays[2 * static_cast<std::size_t>(nd.param) + 1];
                for (std::size_t j = 0; j < ka.size(); ++j) ka[j] = cg.d_kernel.vec()[j];
                for (std::size_t j = 0; j < ba.size(); ++j) ba[j] = cg.d_bias[j];
                add_to(nd.src, std::move(cg.d_input));
                break;
            }
            case NodeKind::relu:
                add_to(nd.src, relu_backward(in, d[i]));
                break;
            case NodeKind::pool:
                add_to(nd.src, maxpool2_backward(in.shape(), tape.aux[i], d[i]));
                break;
            case NodeKind::upsample:
                add_to(nd.src, upsample2_backward(d[i]));
                break;
            case NodeKind::bridge: {
                auto bg = bridge_backward(tape.outs[static_cast<std::size_t>(nd.skip)].shape(),
                                          in.shape(), spec_.bridge, d[i]);
                add_to(nd.skip, std::move(bg.d_skip));
                add_to(nd.src, std::move(bg.d_up));
                break;
            }
            case NodeKind::dropout:
                add_to(nd.src, dropout_backward(tape.aux[i], spec_.dropout_rate, d[i]));
                break;
            case NodeKind::input:
                break;
            }
            if (i > 1) d[i] = Tensor4<T>(); // free as we go
        }
        return g;
    }

private:
    int add_node(Node n) {
        nodes_.push_back(n);
        return static_cast<int>(nodes_.size()) - 1;
    }

    int add_conv(const std::string& name, int src, int ci, int co) {
        names_.push_back(name);
        kernels_.emplace_back(co, ci, 3, 3);
        biases_.emplace_back(static_cast<std::size_t>(co), T{0});
        Node n{NodeKind::conv, src};
        n.param = static_cast<int>(kernels_.size()) - 1;
        return add_node(n);
    }

    // Two conv+relu pairs, then a dropout node when the spec asks for one.
    int add_block(const std::string& base, int src, int ci, int co) {
        int cur = add_conv(base + ".c1", src, ci, co);
        cur = add_node(Node{NodeKind::relu, cur});
        cur = add_conv(base + ".c2", cur, co, co);
        cur = add_node(Node{NodeKind::relu, cur});
        if (spec_.dropout_rate > 0.0) {
            cur = add_node(Node{NodeKind::dropout, cur});
        }
        return cur;
    }

    // Fan-in-scaled uniform kernels, zero biases, one sequential stream.
    void init_params(std::uint64_t seed) {
        Rng rng(seed);
        for (std::size_t k = 0; k < kernels_.size(); ++k) {
            auto& ker = kernels_[k];
            const double bound = std::sqrt(6.0 / (9.0 * ker.c()));
            for (auto& v : ker.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
        }
    }

    ModelSpec spec_;
    std::vector<Node> nodes_;
    std::vector<std::string> names_;
    std::vector<Tensor4<T>> kernels_;
    std::vector<std::vector<T>> biases_;
};

} // namespace octflow
