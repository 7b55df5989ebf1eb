#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "octflow/errors.hpp"
#include "octflow/rng.hpp"
#include "octflow/stats.hpp"

using namespace octflow;

namespace {

// exact 64-bit Pascal triangle, sufficient for grand totals <= 60
std::vector<std::vector<std::uint64_t>> pascal64(std::size_t n) {
    std::vector<std::vector<std::uint64_t>> rows(n + 1);
    for (std::size_t r = 0; r <= n; ++r) {
        rows[r].assign(r + 1, 1);
        for (std::size_t k = 1; k < r; ++k) rows[r][k] = rows[r - 1][k - 1] + rows[r - 1][k];
    }
    return rows;
}

// independent Fisher oracle: enumerates tables by the row-wise factorization
// C(r1,k)*C(r2,c1-k) instead of the column-wise one used by the implementation
double fisher_oracle(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    const std::size_t n = a + b + c + d;
    const std::size_t r1 = a + b, r2 = c + d, c1 = a + c;
    const auto rows = pascal64(n);
    const std::size_t k_lo = c1 > r2 ? c1 - r2 : 0;
    const std::size_t k_hi = std::min(c1, r1);
    const auto weight = [&](std::size_t k) { return rows[r1][k] * rows[r2][c1 - k]; };
    const std::uint64_t w_obs = weight(a);
    long double sum = 0.0L, total = 0.0L;
    for (std::size_t k = k_lo; k <= k_hi; ++k) {
        const std::uint64_t w = weight(k);
        total += (long double)w;
        if (w <= w_obs) sum += (long double)w;
    }
    return double(sum / total);
}

// two-sided exact McNemar oracle straight from the tail definition
double mcnemar_oracle(std::size_t b, std::size_t c) {
    const std::size_t n = b + c;
    if (n == 0) return 1.0;
    const auto rows = pascal64(n);
    const std::size_t m = std::min(b, c);
    long double lower = 0.0L, upper = 0.0L, total = 0.0L;
    for (std::size_t k = 0; k <= n; ++k) {
        total += (long double)rows[n][k];
        if (k <= m) lower += (long double)rows[n][k];
        if (k >= n - m) upper += (long double)rows[n][k];
    }
    return double(std::min(1.0L, (lower + upper) / total));
}

// paired permutation oracle for the predictive-value score test: swaps the
// two raters within units at random and counts statistics at least as large
double gss_permutation_p(const PairedOutcomes& po, PredictiveValue which, int resamples,
                         std::uint64_t seed) {
    const GssResult obs = gss_predictive(po, which);
    REQUIRE(obs.applicable);
    Rng rng(seed);
    PairedOutcomes perm = po;
    std::size_t at_least = 0, valid = 0;
    for (int r = 0; r < resamples; ++r) {
        for (std::size_t i = 0; i < po.units.size(); ++i) {
            perm.units[i] = po.units[i];
            if (rng.next_below(2) == 1) {
                std::swap(perm.units[i].rater_a, perm.units[i].rater_b);
            }
        }
        const GssResult g = gss_predictive(perm, which);
        if (!g.applicable) continue;
        ++valid;
        if (g.statistic >= obs.statistic - 1e-12) ++at_least;
    }
    REQUIRE(valid > resamples / 2);
    return double(at_least + 1) / double(valid + 1);
}

PairedOutcomes make_units(const std::vector<std::array<int, 3>>& rows) {
    PairedOutcomes po;
    std::size_t id = 0;
    for (const auto& r : rows) {
        po.units.push_back({id++, r[0] != 0, r[1] != 0, r[2] != 0});
    }
    return po;
}

} // namespace

TEST_CASE("mse basics and oracle") {
    const std::vector<float> a = {0.0f, 1.0f, 1.0f, 0.0f};
    CHECK(mse(a, a) == 0.0);

    std::vector<float> flipped(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) flipped[i] = 1.0f - a[i];
    CHECK(mse(a, flipped) == 1.0); // binary complements differ by 1 everywhere

    Rng rng(7);
    std::vector<float> x(257), y(257);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = float(rng.next_double());
        y[i] = float(rng.next_double());
    }
    double oracle = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        oracle += (double(x[i]) - double(y[i])) * (double(x[i]) - double(y[i]));
    }
    oracle /= double(x.size());
    CHECK(mse(x, y) == Catch::Approx(oracle).epsilon(1e-14));

    CHECK_THROWS_AS(mse(x, a), ShapeError);
    CHECK_THROWS_AS(mse(std::vector<float>{}, std::vector<float>{}), ShapeError);
}

TEST_CASE("psnr reference points") {
    CHECK(psnr(7.7665e-4, 1.0) == Catch::Approx(31.10).margin(0.005));
    CHECK(psnr(1.0, 1.0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(psnr(0.01, 1.0) == Catch::Approx(20.0).margin(1e-12));
    CHECK(std::isinf(psnr(0.0, 1.0)));
    CHECK_THROWS_AS(psnr(-1e-9, 1.0), DomainError);
    CHECK_THROWS_AS(psnr(0.5, 0.0), DomainError);

    double prev = std::numeric_limits<double>::infinity();
    for (const double m : {1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0, 2.0}) {
        const double p = psnr(m, 1.0);
        CHECK(p < prev); // strictly decreasing in mse
        prev = p;
    }
}

TEST_CASE("confusion metrics on hand-built masks") {
    std::vector<std::uint8_t> truth, pred;
    const auto add = [&](std::size_t count, int t, int p) {
        for (std::size_t i = 0; i < count; ++i) {
            truth.push_back(std::uint8_t(t));
            pred.push_back(std::uint8_t(p));
        }
    };
    add(9, 1, 1);  // TP
    add(1, 0, 1);  // FP
    add(1, 1, 0);  // FN
    add(89, 0, 0); // TN

    const ConfusionCounts c = confusion_counts(pred, truth);
    CHECK(c.tp == 9);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.tn == 89);

    const ConfusionMetrics m = confusion_metrics(c);
    REQUIRE(m.sensitivity.has_value());
    REQUIRE(m.specificity.has_value());
    REQUIRE(m.ppv.has_value());
    REQUIRE(m.npv.has_value());
    CHECK(*m.sensitivity == Catch::Approx(0.9).epsilon(1e-15));
    CHECK(*m.specificity == Catch::Approx(89.0 / 90.0).epsilon(1e-15));
    CHECK(*m.ppv == Catch::Approx(0.9).epsilon(1e-15));
    CHECK(*m.npv == Catch::Approx(89.0 / 90.0).epsilon(1e-15));
}

TEST_CASE("perfect prediction scores one everywhere") {
    std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 0, 1, 0};
    const ConfusionMetrics m = confusion_metrics(confusion_counts(mask, mask));
    CHECK(*m.sensitivity == 1.0);
    CHECK(*m.specificity == 1.0);
    CHECK(*m.ppv == 1.0);
    CHECK(*m.npv == 1.0);
    CHECK(*m.dice == 1.0);
}

TEST_CASE("metrics with empty denominators are absent, not zero") {
    const std::vector<std::uint8_t> all0(10, 0), all1(10, 1);
    const ConfusionMetrics no_pos = confusion_metrics(confusion_counts(all0, all0));
    CHECK_FALSE(no_pos.sensitivity.has_value()); // no actual positives
    CHECK_FALSE(no_pos.ppv.has_value());         // no positive calls
    CHECK(no_pos.specificity.has_value());

    const ConfusionMetrics no_neg = confusion_metrics(confusion_counts(all1, all1));
    CHECK_FALSE(no_neg.specificity.has_value());
    CHECK_FALSE(no_neg.npv.has_value());
    CHECK(no_neg.sensitivity.has_value());
}

TEST_CASE("confusion counting matches a per-pixel oracle on random masks") {
    Rng rng(42);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::uint8_t> pred(523), truth(523);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            pred[i] = std::uint8_t(rng.next_below(2));
            truth[i] = std::uint8_t(rng.next_below(2));
        }
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            tp += (pred[i] && truth[i]) ? 1 : 0;
            fp += (pred[i] && !truth[i]) ? 1 : 0;
            fn += (!pred[i] && truth[i]) ? 1 : 0;
            tn += (!pred[i] && !truth[i]) ? 1 : 0;
        }
        const ConfusionCounts c = confusion_counts(pred, truth);
        REQUIRE(c.tp == tp);
        REQUIRE(c.fp == fp);
        REQUIRE(c.fn == fn);
        REQUIRE(c.tn == tn);
    }
}

TEST_CASE("otsu splits a bimodal image between the modes") {
    Rng rng(5);
    std::vector<float> v;
    for (int i = 0; i < 400; ++i) v.push_back(float(0.15 + 0.08 * rng.next_double()));
    for (int i = 0; i < 200; ++i) v.push_back(float(0.75 + 0.1 * rng.next_double()));
    // ties across the empty gap resolve to the lowest boundary, so the
    // threshold sits just above the dark mode
    const double t = otsu_threshold(v);
    CHECK(t > 0.23);
    CHECK(t < 0.75);
    const auto mask = binarize(v, t);
    std::size_t fg = 0;
    for (const auto m : mask) fg += m;
    CHECK(fg == 200); // exactly the bright mode

    std::vector<float> flat(64, 0.5f);
    const double tf = otsu_threshold(flat);
    const auto empty_mask = binarize(flat, tf);
    for (const auto m : empty_mask) REQUIRE(m == 0);

    CHECK_THROWS_AS(otsu_threshold(std::vector<float>{}), DomainError);
    CHECK_THROWS_AS(otsu_threshold(std::vector<float>{2.0f}), DomainError);
}

TEST_CASE("pearson correlation basics") {
    const std::vector<float> a = {0.1f, 0.4f, 0.5f, 0.9f};
    std::vector<float> scaled(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) scaled[i] = 0.5f * a[i] + 0.1f;
    REQUIRE(pearson(a, scaled).has_value());
    CHECK(*pearson(a, scaled) == Catch::Approx(1.0).margin(1e-12));

    std::vector<float> negated(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) negated[i] = 1.0f - a[i];
    CHECK(*pearson(a, negated) == Catch::Approx(-1.0).margin(1e-12));

    const std::vector<float> constant(4, 0.3f);
    CHECK_FALSE(pearson(a, constant).has_value());
}

TEST_CASE("mcnemar reference points") {
    const McNemarResult symmetric = mcnemar_counts(5, 5, McNemarMode::chi2);
    CHECK(symmetric.statistic == 0.0);
    CHECK(symmetric.p == 1.0);

    const McNemarResult exact = mcnemar_counts(10, 0, McNemarMode::exact);
    CHECK(exact.p == Catch::Approx(1.953125e-3).margin(1e-9)); // 2 * (1/2)^10

    CHECK(mcnemar_counts(0, 0, McNemarMode::exact).p == 1.0);
    CHECK(mcnemar_counts(0, 0, McNemarMode::chi2).p == 1.0);

    // chi2 mode: statistic 10, tail of chi-square(1)
    const McNemarResult chi = mcnemar_counts(10, 0, McNemarMode::chi2);
    CHECK(chi.statistic == Catch::Approx(10.0));
    CHECK(chi.p == Catch::Approx(0.0015654).margin(1e-6));
}

TEST_CASE("mcnemar is symmetric in the raters") {
    for (const auto& [b, c] : std::vector<std::pair<std::size_t, std::size_t>>{
             {3, 7}, {0, 4}, {12, 12}, {1, 0}}) {
        CHECK(mcnemar_counts(b, c, McNemarMode::exact).p ==
              mcnemar_counts(c, b, McNemarMode::exact).p);
        CHECK(mcnemar_counts(b, c, McNemarMode::chi2).p ==
              mcnemar_counts(c, b, McNemarMode::chi2).p);
    }
}

TEST_CASE("mcnemar exact matches the tail-definition oracle for all b+c <= 60") {
    for (std::size_t n = 0; n <= 60; ++n) {
        for (std::size_t b = 0; b <= n; ++b) {
            const double p = mcnemar_counts(b, n - b, McNemarMode::exact).p;
            const double oracle = mcnemar_oracle(b, n - b);
            REQUIRE(p == Catch::Approx(oracle).margin(1e-12));
        }
    }
}

TEST_CASE("mcnemar counts discordant pairs from paired outcomes") {
    // truth, rater A, rater B
    const PairedOutcomes po = make_units({
        {1, 1, 1}, // both right
        {1, 1, 0}, // A right, B wrong
        {1, 1, 0}, // A right, B wrong
        {0, 1, 0}, // A wrong, B right
        {0, 0, 0}, // both right
        {1, 0, 0}, // both wrong
    });
    const McNemarResult r = mcnemar(po, McNemarMode::exact);
    CHECK(r.b == 2);
    CHECK(r.c == 1);
    CHECK_THROWS_AS(mcnemar(PairedOutcomes{}, McNemarMode::exact), DomainError);
}

TEST_CASE("fisher reference points") {
    CHECK(fisher_exact(5, 5, 5, 5) == 1.0); // observed table is modal

    // hand enumeration: margins 4/4, weights 1,16,36,16,1; observed k=3
    // keeps 1+16+16+1 of 70
    CHECK(fisher_exact(3, 1, 1, 3) == Catch::Approx(34.0 / 70.0).margin(1e-12));

    const double p = fisher_exact(35, 5, 40, 0);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
    CHECK(p == Catch::Approx(fisher_oracle(35, 5, 40, 0)).margin(1e-12));

    CHECK_THROWS_AS(fisher_exact(0, 0, 0, 0), DomainError);
}

TEST_CASE("fisher is invariant under relabeling") {
    const std::size_t a = 7, b = 2, c = 3, d = 11;
    const double p = fisher_exact(a, b, c, d);
    CHECK(fisher_exact(c, d, a, b) == p); // row swap
    CHECK(fisher_exact(b, a, d, c) == p); // column swap
    CHECK(fisher_exact(a, c, b, d) == p); // transpose
}

TEST_CASE("fisher matches the enumeration oracle across a sweep") {
    // systematic small tables
    for (std::size_t a = 0; a <= 5; ++a) {
        for (std::size_t b = 0; b <= 5; ++b) {
            for (std::size_t c = 0; c <= 5; ++c) {
                for (std::size_t d = 0; d <= 5; ++d) {
                    if (a + b + c + d == 0) continue;
                    REQUIRE(fisher_exact(a, b, c, d) ==
                            Catch::Approx(fisher_oracle(a, b, c, d)).margin(1e-12));
                }
            }
        }
    }
    // random tables up to grand total 60
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t a = rng.next_below(16), b = rng.next_below(16);
        const std::size_t c = rng.next_below(15), d = rng.next_below(15);
        if (a + b + c + d == 0) continue;
        REQUIRE(fisher_exact(a, b, c, d) ==
                Catch::Approx(fisher_oracle(a, b, c, d)).margin(1e-12));
    }
}

TEST_CASE("identical raters give a null predictive-value comparison") {
    PairedOutcomes po;
    Rng rng(3);
    for (std::size_t i = 0; i < 60; ++i) {
        const bool truth = rng.next_below(2) == 1;
        const bool call = rng.next_below(4) != 0 ? truth : !truth;
        po.units.push_back({i, truth, call, call});
    }
    for (const auto which : {PredictiveValue::ppv, PredictiveValue::npv}) {
        const GssResult r = gss_predictive(po, which);
        REQUIRE(r.applicable);
        CHECK(r.statistic == 0.0);
        CHECK(r.p == 1.0);
        CHECK(r.value_a == r.value_b);
    }
}

TEST_CASE("degenerate designs are flagged inapplicable") {
    // rater B never calls positive
    const PairedOutcomes po = make_units({{1, 1, 0}, {0, 0, 0}, {1, 1, 0}});
    const GssResult r = gss_predictive(po, PredictiveValue::ppv);
    CHECK_FALSE(r.applicable);
    CHECK_FALSE(r.reason.empty());

    // neither rater calls positive
    const PairedOutcomes none = make_units({{1, 0, 0}, {0, 0, 0}});
    CHECK_FALSE(gss_predictive(none, PredictiveValue::ppv).applicable);

    CHECK_THROWS_AS(gss_predictive(PairedOutcomes{}, PredictiveValue::ppv), DomainError);
}

TEST_CASE("predictive-value p agrees with a paired permutation oracle") {
    // constructed 40-unit design where A dominates B on positive calls
    std::vector<std::array<int, 3>> rows;
    for (int i = 0; i < 12; ++i) rows.push_back({1, 1, 1});
    for (int i = 0; i < 4; ++i) rows.push_back({0, 0, 1});
    for (int i = 0; i < 2; ++i) rows.push_back({0, 1, 1});
    for (int i = 0; i < 6; ++i) rows.push_back({1, 1, 0});
    for (int i = 0; i < 16; ++i) rows.push_back({0, 0, 0});
    const PairedOutcomes constructed = make_units(rows);
    REQUIRE(constructed.units.size() == 40);
    const GssResult g = gss_predictive(constructed, PredictiveValue::ppv);
    REQUIRE(g.applicable);
    CHECK(g.value_a > g.value_b);
    const double perm = gss_permutation_p(constructed, PredictiveValue::ppv, 20000, 99);
    CHECK(std::abs(g.p - perm) <= 0.02);

    // seeded random designs, both directions of comparison
    Rng rng(17);
    for (int trial = 0; trial < 2; ++trial) {
        PairedOutcomes po;
        for (std::size_t i = 0; i < 200; ++i) {
            const bool truth = rng.next_below(2) == 1;
            const bool a = rng.next_below(10) < 7 ? truth : !truth;
            const bool b = rng.next_below(10) < 6 ? truth : !truth;
            po.units.push_back({i, truth, a, b});
        }
        for (const auto which : {PredictiveValue::ppv, PredictiveValue::npv}) {
            const GssResult r = gss_predictive(po, which);
            REQUIRE(r.applicable);
            const double perm = gss_permutation_p(po, which, 20000, 100 + trial);
            REQUIRE(std::abs(r.p - perm) <= 0.02);
        }
    }
}

TEST_CASE("vessel order report renders percentages and pairwise tests") {
    VesselOrderTable table;
    table.modalities = {"color", "fa", "dl"};
    table.counts = {
        {{{35, 40}, {20, 30}, {5, 12}}},
        {{{39, 40}, {25, 30}, {8, 12}}},
        {{{40, 40}, {28, 30}, {11, 12}}},
    };
    const VesselOrderReport report = vessel_order_report(table, "desk run");
    CHECK(report.csv.find("# desk run\n") != std::string::npos);
    CHECK(report.csv.find("2,color,35,40,87.5") != std::string::npos);
    CHECK(report.csv.find("2,fa,39,40,97.5") != std::string::npos);
    CHECK(report.csv.find("2,dl,40,40,100.0") != std::string::npos);
    REQUIRE(report.tests.size() == 9); // 3 pairs x 3 orders
    for (const auto& t : report.tests) {
        CHECK(t.p > 0.0);
        CHECK(t.p <= 1.0);
        CHECK(std::isfinite(t.p));
    }
}

TEST_CASE("all modalities perfect means no detectable difference") {
    VesselOrderTable table;
    table.modalities = {"color", "fa", "dl"};
    table.counts = {
        {{{10, 10}, {8, 8}, {4, 4}}},
        {{{10, 10}, {8, 8}, {4, 4}}},
        {{{10, 10}, {8, 8}, {4, 4}}},
    };
    const VesselOrderReport report = vessel_order_report(table);
    for (const auto& t : report.tests) REQUIRE(t.p == 1.0);
}

TEST_CASE("vessel order table validation") {
    VesselOrderTable bad;
    bad.modalities = {"color", "dl"};
    bad.counts = {
        {{{5, 10}, {3, 8}, {1, 4}}},
        {{{6, 11}, {3, 8}, {1, 4}}}, // mismatched total for order 2
    };
    CHECK_THROWS_AS(vessel_order_report(bad), DomainError);

    bad.counts[1][0] = {12, 10}; // identified beyond total
    CHECK_THROWS_AS(vessel_order_report(bad), DomainError);

    VesselOrderTable empty;
    CHECK_THROWS_AS(vessel_order_report(empty), DomainError);
}
