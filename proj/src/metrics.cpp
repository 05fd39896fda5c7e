#include "semsearch/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace semsearch {

double recall_at_k(const std::vector<std::string>& predicted, const std::set<std::string>& truth,
                   size_t k) {
    if (k < 1) throw std::runtime_error("recall_at_k: k must be >= 1");
    if (truth.empty()) throw std::runtime_error("recall_at_k: empty truth set");
    size_t hits = 0;
    const size_t limit = std::min(k, predicted.size());
    for (size_t i = 0; i < limit; ++i) {
        if (truth.count(predicted[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

Specificity specificity_segment(const EvalCase& c, double threshold) {
    if (threshold <= 0.0 || threshold >= 1.0) {
        throw std::runtime_error("specificity threshold must be in (0,1)");
    }
    int64_t total = 0;
    size_t m = 0;
    for (const auto& [id, count] : c.purchase_distribution) {
        if (count < 0) throw std::runtime_error("negative purchase count");
        if (count > 0) {
            total += count;
            ++m;
        }
    }
    if (total == 0) throw std::runtime_error("specificity_segment: all-zero distribution");
    if (m == 1) return Specificity::specific;  // H_norm defined as 0

    double h = 0.0;
    for (const auto& [id, count] : c.purchase_distribution) {
        if (count == 0) continue;
        const double p = static_cast<double>(count) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    const double h_norm = h / std::log(static_cast<double>(m));
    return h_norm < threshold ? Specificity::specific : Specificity::general;
}

std::vector<Frequency> frequency_segment(const std::vector<EvalCase>& cases,
                                         double head_percentile) {
    if (cases.empty()) throw std::runtime_error("frequency_segment: no cases");
    if (head_percentile <= 0.0 || head_percentile >= 1.0) {
        throw std::runtime_error("head_percentile must be in (0,1)");
    }
    std::vector<size_t> order(cases.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (cases[a].query_frequency != cases[b].query_frequency) {
            return cases[a].query_frequency > cases[b].query_frequency;
        }
        return cases[a].query_text < cases[b].query_text;
    });
    const auto head_count = static_cast<size_t>(
        std::ceil(head_percentile * static_cast<double>(cases.size())));
    std::vector<Frequency> out(cases.size(), Frequency::tail);
    for (size_t r = 0; r < head_count && r < order.size(); ++r) out[order[r]] = Frequency::head;
    return out;
}

namespace {

// Regularized incomplete beta by Lentz's continued fraction.
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

double incbeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

TTestResult paired_t_test(std::span<const double> before, std::span<const double> after) {
    if (before.size() != after.size()) throw std::runtime_error("paired_t_test: length mismatch");
    const size_t n = before.size();
    if (n < 2) throw std::runtime_error("paired_t_test: need at least 2 pairs");

    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += after[i] - before[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double dev = (after[i] - before[i]) - mean;
        ss += dev * dev;
    }
    const double var = ss / static_cast<double>(n - 1);
    if (var <= 0.0) throw std::runtime_error("paired_t_test: degenerate (zero-variance differences)");

    TTestResult r;
    r.t = mean * std::sqrt(static_cast<double>(n)) / std::sqrt(var);
    const double nu = static_cast<double>(n - 1);
    r.p = incbeta(nu / 2.0, 0.5, nu / (nu + r.t * r.t));
    return r;
}

double latency_percentile(std::vector<double> samples_ms, double q) {
    if (samples_ms.empty()) throw std::runtime_error("latency_percentile: no samples");
    if (q <= 0.0 || q > 1.0) throw std::runtime_error("latency_percentile: q must be in (0,1]");
    std::sort(samples_ms.begin(), samples_ms.end());
    const double n = static_cast<double>(samples_ms.size());
    auto rank = static_cast<size_t>(std::ceil(q * n));  // 1-based order statistic
    if (rank < 1) rank = 1;
    return samples_ms[rank - 1];
}

EvalReport evaluate_model(const ModelParams& params, const AnnIndex& index,
                          const Catalog& catalog, const CustomerMap& customers,
                          const std::vector<EvalCase>& cases, const EvalOptions& options) {
    if (cases.empty()) throw std::runtime_error("evaluate_model: no cases");
    if (options.ks.empty()) throw std::runtime_error("evaluate_model: no cutoffs");

    const size_t max_k = *std::max_element(options.ks.begin(), options.ks.end());
    const size_t n = cases.size();

    Matrix per_case(n, options.ks.size());
    std::vector<double> latencies(n, 0.0);

    const auto pn = static_cast<ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
    for (ptrdiff_t ci = 0; ci < pn; ++ci) {
        const auto i = static_cast<size_t>(ci);
        const EvalCase& c = cases[i];
        const CustomerContext* ctx = nullptr;
        if (!c.customer_id.empty()) {
            auto it = customers.find(c.customer_id);
            if (it != customers.end()) ctx = &it->second;
        }
        const auto t0 = std::chrono::steady_clock::now();
        auto q = encode_query(params, c.query_text, ctx, catalog);
        auto results = search(index, q, max_k, options.nprobe);
        const auto t1 = std::chrono::steady_clock::now();
        latencies[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();

        std::vector<std::string> predicted;
        predicted.reserve(results.size());
        for (auto& [id, s] : results) predicted.push_back(std::move(id));
        for (size_t kix = 0; kix < options.ks.size(); ++kix) {
            per_case.at(i, kix) = recall_at_k(predicted, c.truth, options.ks[kix]);
        }
    }

    EvalReport report;
    report.n_cases = n;
    // Fixed-order reduction over cases.
    for (size_t kix = 0; kix < options.ks.size(); ++kix) {
        double sum = 0.0;
        for (size_t i = 0; i < n; ++i) sum += per_case.at(i, kix);
        report.recall_at[options.ks[kix]] = sum / static_cast<double>(n);
    }
    report.per_case_recall.resize(n);
    for (size_t i = 0; i < n; ++i) report.per_case_recall[i] = per_case.at(i, 0);

    if (options.segments) {
        auto freq = frequency_segment(cases, options.head_percentile);
        std::map<std::string, std::vector<size_t>> members;
        for (size_t i = 0; i < n; ++i) {
            const auto spec = specificity_segment(cases[i], options.specificity_threshold);
            members[spec == Specificity::specific ? "specific" : "general"].push_back(i);
            members[freq[i] == Frequency::head ? "head" : "tail"].push_back(i);
        }
        for (const auto& [name, idxs] : members) {
            report.segment_sizes[name] = idxs.size();
            auto& seg = report.per_segment[name];
            for (size_t kix = 0; kix < options.ks.size(); ++kix) {
                double sum = 0.0;
                for (size_t i : idxs) sum += per_case.at(i, kix);
                seg[options.ks[kix]] =
                    idxs.empty() ? 0.0 : sum / static_cast<double>(idxs.size());
            }
        }
    }

    if (options.measure_latency) {
        report.latency_p95_ms = latency_percentile(latencies, 0.95);
    }
    return report;
}

std::string eval_report_to_json(const EvalReport& report, const EvalOptions& options) {
    nlohmann::json j;
    j["n_cases"] = report.n_cases;
    for (const auto& [k, v] : report.recall_at) j["recall_at"][std::to_string(k)] = v;
    for (const auto& [seg, recalls] : report.per_segment) {
        for (const auto& [k, v] : recalls) j["per_segment"][seg][std::to_string(k)] = v;
    }
    for (const auto& [seg, size] : report.segment_sizes) j["segment_sizes"][seg] = size;
    if (report.latency_p95_ms) j["latency_p95_ms"] = *report.latency_p95_ms;
    if (report.significance) {
        j["t_statistic"] = report.significance->t;
        j["p_value"] = report.significance->p;
    }
    j["specificity_threshold"] = options.specificity_threshold;
    j["head_percentile"] = options.head_percentile;
    return j.dump(2) + "\n";
}

}  // namespace semsearch
