#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "semsearch/ann.hpp"
#include "semsearch/catalog.hpp"
#include "semsearch/encoder.hpp"

namespace semsearch {

struct EvalCase {
    std::string query_text;
    std::string customer_id;            // empty: non-personalized case
    std::set<std::string> truth;        // relevant items, non-empty
    int64_t query_frequency = 0;
    std::map<std::string, int64_t> purchase_distribution;  // for entropy
};

// |top-k(predicted) ∩ truth| / |truth|. Throws on empty truth.
double recall_at_k(const std::vector<std::string>& predicted, const std::set<std::string>& truth,
                   size_t k);

enum class Specificity { specific, general };

// Normalized entropy of the purchase distribution: H / ln(m) over m distinct
// items, defined as 0 for m = 1. Specific iff below the threshold.
Specificity specificity_segment(const EvalCase& c, double threshold);

enum class Frequency { head, tail };

// Top head_percentile of cases by (query_frequency desc, query_text asc) are
// head; the count rounds up so at least one case is head.
std::vector<Frequency> frequency_segment(const std::vector<EvalCase>& cases,
                                         double head_percentile);

// Two-sided paired t-test on after - before. Throws when the differences have
// zero variance. p is evaluated through the regularized incomplete beta
// (continued fraction), accurate to well under 1e-6.
struct TTestResult {
    double t = 0.0;
    double p = 1.0;
};
TTestResult paired_t_test(std::span<const double> before, std::span<const double> after);

// Smallest sample v with count(x <= v)/n >= q: the order statistic at
// ceil(q*n) of the sorted list.
double latency_percentile(std::vector<double> samples_ms, double q);

struct EvalOptions {
    std::vector<size_t> ks{8, 12, 24, 100};
    size_t nprobe = 1;
    double specificity_threshold = 0.5;
    double head_percentile = 0.1;
    bool segments = true;
    bool measure_latency = false;  // wall clock; keep off for reproducible reports
};

struct EvalReport {
    std::map<size_t, double> recall_at;
    std::map<std::string, std::map<size_t, double>> per_segment;
    std::map<std::string, size_t> segment_sizes;
    size_t n_cases = 0;
    std::optional<double> latency_p95_ms;
    std::optional<TTestResult> significance;
    // recall per case at ks.front(), in case order; feeds paired tests
    std::vector<double> per_case_recall;
};

// Encodes each case's query side (personalized when the case carries a known
// customer), searches, and averages recall per cutoff. Cases run under OpenMP
// with a fixed-order reduction.
EvalReport evaluate_model(const ModelParams& params, const AnnIndex& index,
                          const Catalog& catalog, const CustomerMap& customers,
                          const std::vector<EvalCase>& cases, const EvalOptions& options);

std::string eval_report_to_json(const EvalReport& report, const EvalOptions& options);

}  // namespace semsearch
