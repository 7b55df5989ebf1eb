// Central finite differences (delta 1e-4) against every analytic backward
// pass, in double precision throughout. Relative error bound 1e-3; elements
// with |analytic| + |numeric| < 1e-8 are exempt from the ratio test.
#include <catch2/catch_amalgamated.hpp>

#include "octflow/model.hpp"
#include "octflow/ops.hpp"

using namespace octflow;

namespace {

constexpr double kDelta = 1e-4;
constexpr double kRelTol = 1e-3;

void check_pair(double analytic, double numeric) {
    if (std::abs(analytic) + std::abs(numeric) < 1e-8) return;
    const double rel = std::abs(analytic - numeric) /
                       std::max(std::abs(analytic), std::abs(numeric));
    if (rel > kRelTol) {
        CAPTURE(analytic, numeric, rel);
        REQUIRE(rel <= kRelTol);
    }
}

template <typename F>
double central_diff(double& x, F&& f) {
    const double orig = x;
    x = orig + kDelta;
    const double fp = f();
    x = orig - kDelta;
    const double fm = f();
    x = orig;
    return (fp - fm) / (2.0 * kDelta);
}

Tensor4<double> seeded(int n, int c, int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    return random_uniform<double>(Shape4{n, c, h, w}, rng, -1.0, 1.0);
}

double weighted_sum(const Tensor4<double>& y, const Tensor4<double>& w) {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.vec()[i] * w.vec()[i];
    return s;
}

template <typename F>
void check_tensor_grad(Tensor4<double>& x, const Tensor4<double>& analytic, F&& f) {
    REQUIRE(analytic.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double num = central_diff(x.vec()[i], f);
        check_pair(analytic.vec()[i], num);
    }
}

} // namespace

TEST_CASE("conv2d gradients match finite differences") {
    auto x = seeded(1, 2, 8, 8, 101);
    auto k = seeded(3, 2, 3, 3, 102);
    std::vector<double> bias{0.1, -0.2, 0.05};
    auto w = seeded(1, 3, 8, 8, 103);

    auto loss = [&] { return weighted_sum(conv2d_forward(x, k, bias), w); };
    auto g = conv2d_backward(x, k, w);

    check_tensor_grad(x, g.d_input, loss);
    check_tensor_grad(k, g.d_kernel, loss);
    for (std::size_t i = 0; i < bias.size(); ++i) {
        check_pair(g.d_bias[i], central_diff(bias[i], loss));
    }
}

TEST_CASE("conv2d bias gradient under unit loss weights is the pixel count") {
    auto x = seeded(1, 2, 8, 8, 104);
    auto k = seeded(3, 2, 3, 3, 105);
    Tensor4<double> ones(1, 3, 8, 8);
    ones.fill(1.0);
    auto g = conv2d_backward(x, k, ones);
    for (double b : g.d_bias) REQUIRE(b == Catch::Approx(64.0).margin(1e-9));
}

TEST_CASE("zero upstream gradient yields zero parameter gradients") {
    auto x = seeded(1, 2, 8, 8, 106);
    auto k = seeded(3, 2, 3, 3, 107);
    Tensor4<double> zeros(1, 3, 8, 8);
    auto g = conv2d_backward(x, k, zeros);
    for (auto v : g.d_kernel.vec()) REQUIRE(v == 0.0);
    for (auto v : g.d_bias) REQUIRE(v == 0.0);
    for (auto v : g.d_input.vec()) REQUIRE(v == 0.0);
}

TEST_CASE("maxpool gradient matches finite differences") {
    auto x = seeded(1, 2, 8, 8, 108);
    // keep every 2x2 window's top two values separated so the winner is
    // stable under +-delta probing
    for (int c = 0; c < 2; ++c) {
        for (int wy = 0; wy < 4; ++wy) {
            for (int wx = 0; wx < 4; ++wx) {
                double best = -2, second = -2;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const double v = x.at(0, c, 2 * wy + dy, 2 * wx + dx);
                        if (v > best) {
                            second = best;
                            best = v;
                        } else if (v > second) {
                            second = v;
                        }
                    }
                }
                if (best - second < 10 * kDelta) {
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            auto& v = x.at(0, c, 2 * wy + dy, 2 * wx + dx);
                            if (v == best) v += 0.01;
                        }
                    }
                }
            }
        }
    }
    auto w = seeded(1, 2, 4, 4, 109);
    auto loss = [&] { return weighted_sum(maxpool2(x).out, w); };
    auto r = maxpool2(x);
    auto analytic = maxpool2_backward(x.shape(), r.argmax, w);
    check_tensor_grad(x, analytic, loss);
}

TEST_CASE("upsample gradient matches finite differences") {
    auto x = seeded(1, 2, 4, 4, 110);
    auto w = seeded(1, 2, 8, 8, 111);
    auto loss = [&] { return weighted_sum(upsample2(x), w); };
    auto analytic = upsample2_backward(w);
    check_tensor_grad(x, analytic, loss);
}

TEST_CASE("bridge gradients match finite differences") {
    for (BridgeKind kind : {BridgeKind::sum, BridgeKind::concat}) {
        auto skip = seeded(1, 2, 8, 8, 112);
        auto up = seeded(1, 2, 8, 8, 113);
        const int out_c = kind == BridgeKind::concat ? 4 : 2;
        auto w = seeded(1, out_c, 8, 8, 114);
        auto loss = [&] { return weighted_sum(bridge_combine(skip, up, kind), w); };
        auto g = bridge_backward(skip.shape(), up.shape(), kind, w);
        check_tensor_grad(skip, g.d_skip, loss);
        check_tensor_grad(up, g.d_up, loss);
    }
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
    auto x = seeded(1, 2, 8, 8, 115);
    for (auto& v : x.vec()) {
        if (std::abs(v) < 10 * kDelta) v += 0.05; // keep FD probes off the kink
    }
    auto w = seeded(1, 2, 8, 8, 116);
    auto loss = [&] { return weighted_sum(relu(x), w); };
    auto analytic = relu_backward(x, w);
    check_tensor_grad(x, analytic, loss);
}

TEST_CASE("dropout gradient matches finite differences under a fixed mask") {
    auto x = seeded(1, 2, 8, 8, 117);
    auto w = seeded(1, 2, 8, 8, 118);
    const double p = 0.35;
    const std::uint64_t mask_seed = 7;
    auto loss = [&] {
        Rng rng(mask_seed);
        return weighted_sum(dropout_forward(x, p, true, rng).out, w);
    };
    Rng rng(mask_seed);
    auto fwd = dropout_forward(x, p, true, rng);
    auto analytic = dropout_backward(fwd.kept, p, w);
    check_tensor_grad(x, analytic, loss);
}

TEST_CASE("mse gradient matches finite differences") {
    auto pred = seeded(1, 2, 8, 8, 119);
    auto target = seeded(1, 2, 8, 8, 120);
    auto loss = [&] { return mse_loss(pred, target).loss; };
    auto analytic = mse_loss(pred, target).grad;
    check_tensor_grad(pred, analytic, loss);
}

namespace {

// Central differences are a valid derivative oracle only if the function is
// smooth across the probed bracket. A relu input changing sign or a pool
// winner moving between the theta-delta and theta+delta evaluations means the
// probe straddles a non-differentiable seam; such probes are rejected, with a
// hard cap on how many may be rejected.
bool bracket_is_smooth(const Network<double>& net, const Tape<double>& plus,
                       const Tape<double>& minus) {
    const auto& nodes = net.nodes();
    for (std::size_t i = 1; i < nodes.size(); ++i) {
        if (nodes[i].kind == NodeKind::relu) {
            const auto& a = plus.outs[std::size_t(nodes[i].src)].vec();
            const auto& b = minus.outs[std::size_t(nodes[i].src)].vec();
            for (std::size_t e = 0; e < a.size(); ++e) {
                if ((a[e] > 0.0) != (b[e] > 0.0)) return false;
            }
        } else if (nodes[i].kind == NodeKind::pool) {
            if (plus.aux[i] != minus.aux[i]) return false;
        }
    }
    return true;
}

} // namespace

static void composed_fd_check(const ModelSpec& spec, std::uint64_t net_seed,
                              std::uint64_t x_seed, std::uint64_t t_seed, bool train,
                              std::uint64_t drop_seed, std::size_t per_array, std::size_t min_checked) {
    Network<double> net(spec, net_seed);
    auto x = seeded(1, 1, 8, 8, x_seed);
    auto target = seeded(1, 1, 8, 8, t_seed);

    auto run = [&] {
        auto tape = net.forward(x, train, drop_seed);
        const double l = mse_loss(tape.output(), target).loss;
        return std::pair<double, Tape<double>>(l, std::move(tape));
    };

    auto tape = net.forward(x, train, drop_seed);
    auto lr = mse_loss(tape.output(), target);
    auto grads = net.backward(tape, lr.grad);
    auto store = net.params();
    REQUIRE(grads.arrays.size() == store.size());

    Rng pick(55);
    std::size_t checked = 0, rejected = 0;
    for (std::size_t a = 0; a < store.size(); ++a) {
        const auto& entry = store[a];
        const std::size_t probes = std::min<std::size_t>(entry.count, per_array);
        for (std::size_t t = 0; t < probes; ++t) {
            const std::size_t i = entry.count <= per_array ? t : pick.next_below(entry.count);
            double& coord = entry.data[i];
            const double orig = coord;
            coord = orig + kDelta;
            auto [fp, tp] = run();
            coord = orig - kDelta;
            auto [fm, tm] = run();
            coord = orig;
            if (!bracket_is_smooth(net, tp, tm)) {
                ++rejected;
                continue;
            }
            check_pair(grads.arrays[a][i], (fp - fm) / (2.0 * kDelta));
            ++checked;
        }
    }
    INFO("checked " << checked << ", rejected " << rejected);
    REQUIRE(checked >= min_checked);
    REQUIRE(rejected * 5 <= checked); // seam crossings must stay rare
}

TEST_CASE("composed 5-block network gradients match finite differences") {
    composed_fd_check(ModelSpec{5, 5, BridgeKind::concat, 0.0, Growth::doubling},
                      2024, 121, 122, false, 0, 12, 200);
}

TEST_CASE("composed network with dropout active matches finite differences") {
    composed_fd_check(ModelSpec{5, 5, BridgeKind::sum, 0.25, Growth::doubling},
                      31, 123, 124, true, 99, 8, 150);
}

TEST_CASE("network input gradient flows through the whole graph") {
    // analytic input grad is not exposed; verify instead that probing the
    // input moves the loss exactly when some path is active (sanity check on
    // tape completeness)
    ModelSpec spec{5, 5, BridgeKind::concat, 0.0, Growth::doubling};
    Network<double> net(spec, 77);
    auto x = seeded(1, 1, 8, 8, 125);
    auto target = seeded(1, 1, 8, 8, 126);
    auto loss = [&] {
        auto tape = net.forward(x, false);
        return mse_loss(tape.output(), target).loss;
    };
    const double base = loss();
    std::size_t moved = 0;
    for (std::size_t i = 0; i < x.size(); i += 7) {
        const double d = central_diff(x.vec()[i], loss);
        if (std::abs(d) > 1e-10) ++moved;
    }
    REQUIRE(base > 0.0);
    REQUIRE(moved > 0);
}
