#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "octflow/errors.hpp"

namespace octflow {

// ---- image fidelity ----

inline double mse(const float* a, const float* b, std::size_t n) {
    if (n == 0) throw ShapeError("mse needs at least one element");
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = double(a[i]) - double(b[i]);
        sum += d * d;
    }
    return sum / double(n);
}

inline double mse(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) {
        throw ShapeError("mse inputs differ in size: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    return mse(a.data(), b.data(), a.size());
}

// Peak signal-to-noise ratio in decibels; zero error maps to +infinity.
inline double psnr(double mse_value, double peak) {
    if (mse_value < 0.0) throw DomainError("psnr needs a non-negative mse");
    if (!(peak > 0.0)) throw DomainError("psnr needs a positive peak");
    if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse_value);
}

// 5-significant-digit scientific notation used throughout reports.
inline std::string format_scientific(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4e", x);
    return buf;
}

// ---- binary mask metrics ----

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t total() const { return tp + fp + fn + tn; }
};

// Ratios undefined on a zero denominator stay absent rather than degrading
// to 0.
struct ConfusionMetrics {
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> ppv;
    std::optional<double> npv;
    std::optional<double> dice;
};

inline ConfusionCounts confusion_counts(const std::vector<std::uint8_t>& pred,
                                        const std::vector<std::uint8_t>& truth) {
    if (pred.size() != truth.size()) {
        throw ShapeError("confusion masks differ in size: " + std::to_string(pred.size()) +
                         " vs " + std::to_string(truth.size()));
    }
    if (pred.empty()) throw ShapeError("confusion masks are empty");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, t = truth[i] != 0;
        if (p && t) ++c.tp;
        else if (p && !t) ++c.fp;
        else if (!p && t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline ConfusionMetrics confusion_metrics(const ConfusionCounts& c) {
    if (c.total() == 0) throw DomainError("confusion counts are all zero");
    ConfusionMetrics m;
    if (c.tp + c.fn > 0) m.sensitivity = double(c.tp) / double(c.tp + c.fn);
    if (c.tn + c.fp > 0) m.specificity = double(c.tn) / double(c.tn + c.fp);
    if (c.tp + c.fp > 0) m.ppv = double(c.tp) / double(c.tp + c.fp);
    if (c.tn + c.fn > 0) m.npv = double(c.tn) / double(c.tn + c.fn);
    if (2 * c.tp + c.fp + c.fn > 0) m.dice = 2.0 * double(c.tp) / double(2 * c.tp + c.fp + c.fn);
    return m;
}

// Otsu's between-class-variance threshold over a 256-bin histogram of values
// in [0,1]. Foreground is `value >= threshold`; a flat image yields an empty
// foreground. Ties resolve to the lowest threshold.
inline double otsu_threshold(const float* v, std::size_t n) {
    if (n == 0) throw DomainError("otsu needs at least one value");
    std::array<std::size_t, 256> hist{};
    float lo = v[0], hi = v[0];
    for (std::size_t i = 0; i < n; ++i) {
        const float x = v[i];
        if (!(x >= 0.0f && x <= 1.0f)) {
            throw DomainError("otsu input value " + std::to_string(x) + " outside [0,1]");
        }
        lo = std::min(lo, x);
        hi = std::max(hi, x);
        ++hist[std::min<std::size_t>(255, std::size_t(x * 256.0f))];
    }
    if (lo == hi) return double(hi) + 1e-9; // flat image: empty foreground

    double total_mean = 0.0;
    for (std::size_t b = 0; b < 256; ++b) total_mean += double(b) * double(hist[b]);
    total_mean /= double(n);

    double best = -1.0;
    std::size_t best_t = 0;
    double w0 = 0.0, sum0 = 0.0;
    for (std::size_t t = 0; t + 1 < 256; ++t) {
        w0 += double(hist[t]);
        sum0 += double(t) * double(hist[t]);
        const double w1 = double(n) - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = sum0 / w0;
        const double m1 = (total_mean * double(n) - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    return double(best_t + 1) / 256.0;
}

inline double otsu_threshold(const std::vector<float>& v) {
    return otsu_threshold(v.data(), v.size());
}

inline std::vector<std::uint8_t> binarize(const std::vector<float>& v, double threshold) {
    std::vector<std::uint8_t> mask(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) mask[i] = double(v[i]) >= threshold ? 1 : 0;
    return mask;
}

// Pearson correlation; absent when either input has zero variance.
inline std::optional<double> pearson(const float* a, const float* b, std::size_t n) {
    if (n == 0) throw ShapeError("pearson needs at least one element");
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = double(a[i]) - ma, db = double(b[i]) - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

inline std::optional<double> pearson(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) throw ShapeError("pearson inputs differ in size");
    return pearson(a.data(), b.data(), a.size());
}

// ---- exact small-count machinery ----

namespace detail {

using u128 = unsigned __int128;

// Pascal rows up to n (exact for n <= 126; C(126,63) fits in 128 bits).
inline std::vector<std::vector<u128>> pascal_rows(std::size_t n) {
    std::vector<std::vector<u128>> rows(n + 1);
    for (std::size_t r = 0; r <= n; ++r) {
        rows[r].assign(r + 1, u128(1));
        for (std::size_t k = 1; k < r; ++k) rows[r][k] = rows[r - 1][k - 1] + rows[r - 1][k];
    }
    return rows;
}

inline double u128_ratio(u128 num, u128 den) {
    return double(static_cast<long double>(num) / static_cast<long double>(den));
}

// Chi-square(1) upper tail.
inline double chi2_1_sf(double x) {
    if (x <= 0.0) return 1.0;
    return std::erfc(std::sqrt(0.5 * x));
}

// P(Binomial(n, 1/2) <= m). Exact integer arithmetic for n <= 126, log-space
// otherwise.
inline double binom_cdf_half(std::size_t n, std::size_t m) {
    if (m >= n) return 1.0;
    if (n <= 126) {
        const auto rows = pascal_rows(n);
        u128 sum = 0;
        for (std::size_t k = 0; k <= m; ++k) sum += rows[n][k];
        return u128_ratio(sum, u128(1) << n);
    }
    const long double log_half_n = -static_cast<long double>(n) * std::log(2.0L);
    long double acc = 0.0L;
    for (std::size_t k = 0; k <= m; ++k) {
        const long double lg = std::lgamma((long double)(n + 1)) -
                               std::lgamma((long double)(k + 1)) -
                               std::lgamma((long double)(n - k + 1));
        acc += std::exp(lg + log_half_n);
    }
    return double(std::min(1.0L, acc));
}

} // namespace detail

// ---- paired comparisons ----

// One evaluation unit with the reference truth and both raters' calls.
struct PairedUnit {
    std::size_t id = 0;
    bool truth = false;
    bool rater_a = false;
    bool rater_b = false;
};

struct PairedOutcomes {
    std::vector<PairedUnit> units;
};

enum class McNemarMode { exact, chi2 };

struct McNemarResult {
    std::size_t b = 0; // A correct, B wrong
    std::size_t c = 0; // A wrong, B correct
    double statistic = 0.0;
    double p = 1.0;
    McNemarMode mode = McNemarMode::exact;
};

// Discordant-pair test. chi2 mode: (b-c)^2/(b+c) against chi-square(1).
// exact mode: two-sided binomial, p = min(1, 2 * P(Bin(b+c, 1/2) <= min(b,c)))
// with the smaller discordant count reported as the statistic. No discordant
// pairs at all means the raters are indistinguishable: p = 1.
inline McNemarResult mcnemar_counts(std::size_t b, std::size_t c, McNemarMode mode) {
    McNemarResult r;
    r.b = b;
    r.c = c;
    r.mode = mode;
    const std::size_t n = b + c;
    if (mode == McNemarMode::chi2) {
        if (n == 0) return r;
        const double diff = double(b > c ? b - c : c - b);
        r.statistic = diff * diff / double(n);
        r.p = detail::chi2_1_sf(r.statistic);
        return r;
    }
    const std::size_t m = std::min(b, c);
    r.statistic = double(m);
    r.p = n == 0 ? 1.0 : std::min(1.0, 2.0 * detail::binom_cdf_half(n, m));
    return r;
}

inline McNemarResult mcnemar(const PairedOutcomes& paired, McNemarMode mode) {
    if (paired.units.empty()) throw DomainError("paired outcomes are empty");
    std::size_t b = 0, c = 0;
    for (const auto& u : paired.units) {
        const bool a_right = u.rater_a == u.truth, b_right = u.rater_b == u.truth;
        if (a_right && !b_right) ++b;
        if (!a_right && b_right) ++c;
    }
    return mcnemar_counts(b, c, mode);
}

enum class PredictiveValue { ppv, npv };

struct GssResult {
    bool applicable = false;
    std::string reason;      // set when inapplicable
    double statistic = 0.0;
    double p = 1.0;
    std::size_t calls_a = 0; // qualifying calls per rater
    std::size_t calls_b = 0;
    double value_a = 0.0;    // the compared predictive values
    double value_b = 0.0;
};

// Paired comparison of positive (or negative) predictive values via a
// cluster-robust score statistic: pooled prevalence over qualifying calls,
// score for the rater contrast, and an empirical variance that keeps the two
// calls of one unit in the same cluster. Referred against chi-square(1).
inline GssResult gss_predictive(const PairedOutcomes& paired, PredictiveValue which) {
    if (paired.units.empty()) throw DomainError("paired outcomes are empty");
    const bool positive = which == PredictiveValue::ppv;
    const char* call_name = positive ? "positive" : "negative";

    std::size_t n_a = 0, n_b = 0, s_a = 0, s_b = 0;
    for (const auto& u : paired.units) {
        const bool success = u.truth == positive;
        if (u.rater_a == positive) {
            ++n_a;
            s_a += success ? 1 : 0;
        }
        if (u.rater_b == positive) {
            ++n_b;
            s_b += success ? 1 : 0;
        }
    }

    GssResult r;
    r.calls_a = n_a;
    r.calls_b = n_b;
    if (n_a == 0 || n_b == 0) {
        r.reason = std::string("rater ") + (n_a == 0 ? "A" : "B") + " made no " + call_name +
                   " calls, predictive value undefined";
        return r;
    }
    r.applicable = true;
    r.value_a = double(s_a) / double(n_a);
    r.value_b = double(s_b) / double(n_b);

    const double pooled = double(s_a + s_b) / double(n_a + n_b);
    const double zbar = double(n_b) / double(n_a + n_b);
    const double score = double(s_b) - pooled * double(n_b);

    double variance = 0.0;
    for (const auto& u : paired.units) {
        const double d = (u.truth == positive) ? 1.0 : 0.0;
        double cluster = 0.0;
        if (u.rater_a == positive) cluster += (0.0 - zbar) * (d - pooled);
        if (u.rater_b == positive) cluster += (1.0 - zbar) * (d - pooled);
        variance += cluster * cluster;
    }
    if (variance <= 1e-30) {
        // no contrast information (e.g. identical raters): nothing to reject
        r.statistic = 0.0;
        r.p = 1.0;
        return r;
    }
    r.statistic = score * score / variance;
    r.p = detail::chi2_1_sf(r.statistic);
    return r;
}

// ---- Fisher exact test ----

// Two-sided p for a 2x2 table [[a,b],[c,d]] under fixed margins: the sum of
// hypergeometric probabilities of every margin-consistent table whose
// probability does not exceed the observed one. Integer-exact for grand
// totals <= 126, log-space with a relative tie tolerance beyond.
inline double fisher_exact(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    const std::size_t n = a + b + c + d;
    if (n == 0) throw DomainError("fisher table has zero grand total");
    const std::size_t r1 = a + b, c1 = a + c, c2 = b + d;
    const std::size_t k_lo = r1 > c2 ? r1 - c2 : 0;
    const std::size_t k_hi = std::min(r1, c1);

    if (n <= 126) {
        const auto rows = detail::pascal_rows(n);
        const auto weight = [&](std::size_t k) {
            return rows[c1][k] * rows[c2][r1 - k];
        };
        const detail::u128 w_obs = weight(a);
        detail::u128 sum = 0, total = 0;
        for (std::size_t k = k_lo; k <= k_hi; ++k) {
            const detail::u128 w = weight(k);
            total += w;
            if (w <= w_obs) sum += w;
        }
        return std::min(1.0, detail::u128_ratio(sum, total));
    }

    const auto log_weight = [&](std::size_t k) {
        const auto lc = [](std::size_t nn, std::size_t kk) {
            return std::lgamma((long double)(nn + 1)) - std::lgamma((long double)(kk + 1)) -
                   std::lgamma((long double)(nn - kk + 1));
        };
        return lc(c1, k) + lc(c2, r1 - k);
    };
    const long double lw_obs = log_weight(a);
    long double lw_max = lw_obs;
    for (std::size_t k = k_lo; k <= k_hi; ++k) lw_max = std::max(lw_max, log_weight(k));
    long double sum = 0.0L, total = 0.0L;
    const long double tie_slack = 1e-12L * std::max(1.0L, std::fabs(lw_obs));
    for (std::size_t k = k_lo; k <= k_hi; ++k) {
        const long double lw = log_weight(k);
        const long double w = std::exp(lw - lw_max);
        total += w;
        if (lw <= lw_obs + tie_slack) sum += w;
    }
    return std::min(1.0, double(sum / total));
}

// ---- vessel-order identification table ----

struct VesselOrderEntry {
    std::size_t identified = 0;
    std::size_t total = 0;
};

// Per modality x order (2,3,4) identification counts over one shared vessel
// set, so totals must agree across modalities within an order.
struct VesselOrderTable {
    std::vector<std::string> modalities;
    std::vector<std::array<VesselOrderEntry, 3>> counts; // [modality][order-2]

    void validate() const {
        if (modalities.empty()) throw DomainError("vessel order table has no modalities");
        if (counts.size() != modalities.size()) {
            throw DomainError("vessel order table rows do not match modality names");
        }
        for (std::size_t m = 0; m < counts.size(); ++m) {
            for (std::size_t o = 0; o < 3; ++o) {
                if (counts[m][o].identified > counts[m][o].total) {
                    throw DomainError("modality '" + modalities[m] + "' order " +
                                      std::to_string(o + 2) + " identifies more than its total");
                }
                if (counts[m][o].total != counts[0][o].total) {
                    throw DomainError("totals differ across modalities for order " +
                                      std::to_string(o + 2));
                }
            }
        }
    }
};

struct VesselOrderReport {
    struct Pairwise {
        std::size_t order = 2;
        std::string modality_a, modality_b;
        double p = 1.0;
    };
    std::vector<Pairwise> tests;
    std::string csv;
};

// Percentages per modality and order plus all pairwise Fisher comparisons.
// `note` is prefixed verbatim as a comment line for caller-supplied context.
inline VesselOrderReport vessel_order_report(const VesselOrderTable& table,
                                             const std::string& note = "") {
    table.validate();
    VesselOrderReport report;
    std::string out;
    if (!note.empty()) out += "# " + note + "\n";
    out += "order,modality,identified,total,percent\n";
    char buf[64];
    for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t m = 0; m < table.modalities.size(); ++m) {
            const auto& e = table.counts[m][o];
            out += std::to_string(o + 2) + "," + table.modalities[m] + "," +
                   std::to_string(e.identified) + "," + std::to_string(e.total) + ",";
            if (e.total == 0) {
                out += "n/a\n";
            } else {
                std::snprintf(buf, sizeof buf, "%.1f", 100.0 * double(e.identified) /
                                                           double(e.total));
                out += std::string(buf) + "\n";
            }
        }
    }
    out += "order,modality_a,modality_b,fisher_p\n";
    for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t ma = 0; ma < table.modalities.size(); ++ma) {
            for (std::size_t mb = ma + 1; mb < table.modalities.size(); ++mb) {
                const auto& ea = table.counts[ma][o];
                const auto& eb = table.counts[mb][o];
                if (ea.total == 0) continue; // no vessels of this order to compare
                const double p = fisher_exact(ea.identified, ea.total - ea.identified,
                                              eb.identified, eb.total - eb.identified);
                report.tests.push_back({o + 2, table.modalities[ma], table.modalities[mb], p});
                out += std::to_string(o + 2) + "," + table.modalities[ma] + "," +
                       table.modalities[mb] + "," + format_scientific(p) + "\n";
            }
        }
    }
    report.csv = std::move(out);
    return report;
}

} // namespace octflow
