#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semsearch/ann.hpp"
#include "semsearch/metrics.hpp"
#include "semsearch/sampling.hpp"
#include "semsearch/synthetic.hpp"
#include "semsearch/training.hpp"

namespace semsearch {

// How a case's relevant set is derived from the test window:
//   purchases     — exactly the purchased items (real-log protocol);
//   majority_leaf — every item of the leaf category holding the majority of
//                   the key's test purchases (planted ground truth of the
//                   synthetic generator, ties to the smallest category id).
enum class TruthMode { purchases, majority_leaf };

// Flat key=value configuration for the end-to-end pipeline. Every seeded
// stage derives its stream from the one seed here.
struct PipelineConfig {
    uint64_t seed = 1;

    // Data inputs; when catalog is empty, synthetic data is generated.
    std::string catalog_path;
    std::string engagement_path;
    std::string customers_path;
    SyntheticSpec synthetic;

    std::string experiment = "samplers";  // samplers | personalization
    std::vector<SamplerKind> samplers{SamplerKind::tb_hns, SamplerKind::random_uniform,
                                      SamplerKind::bm25};

    SamplerConfig sampler;
    TrainConfig train;
    ModelDims dims{.vocab_buckets = 8192, .d_tok = 32, .d = 32, .d_cust = 8};
    size_t history_window = 10;

    IndexKind ann_kind = IndexKind::exact;
    size_t ann_clusters = 16;
    size_t ann_nprobe = 4;

    std::vector<size_t> eval_ks{8, 12, 24, 100};
    int64_t test_start_ts = kTestStartTs;
    double specificity_threshold = 0.5;
    double head_percentile = 0.1;
    TruthMode truth_mode = TruthMode::majority_leaf;  // synthetic data default
};

PipelineConfig load_pipeline_config(const std::string& path);

// Events strictly before the cutoff train the model; the rest define truth.
struct EventSplit {
    std::vector<EngagementEvent> train;
    std::vector<EngagementEvent> test;
};
EventSplit split_events_by_time(const std::vector<EngagementEvent>& events, int64_t test_start_ts);

// Cases from the test window: truth per the mode above, frequency counts
// every event of the query text, the entropy distribution is the full-log
// purchase distribution. Keys carry the customer in personalized mode. Keys
// with no test-window purchase are dropped.
std::vector<EvalCase> build_eval_cases(const std::vector<EngagementEvent>& all_events,
                                       const std::vector<EngagementEvent>& test_events,
                                       const Catalog& catalog, bool personalized,
                                       TruthMode truth_mode = TruthMode::purchases);

struct SamplerExperimentResult {
    // sampler name -> k -> mean recall
    std::map<std::string, std::map<size_t, double>> recall;
    std::string comparison_csv_path;
};

// Table layout: one row per sampler, one recall column per cutoff. Every
// sampler trains from the same seed and evaluates on the same case list.
// All emitted files are byte-stable for a fixed config.
SamplerExperimentResult run_sampler_experiment(const PipelineConfig& config,
                                               const std::string& out_dir);

struct PersonalizationExperimentResult {
    std::map<size_t, double> recall_personalized;
    std::map<size_t, double> recall_non_personalized;
    std::vector<double> per_case_personalized;      // recall at the first cutoff
    std::vector<double> per_case_non_personalized;  // same case order
    std::optional<TTestResult> significance;
    std::string report_path;
};

// Trains a personalized and a non-personalized model on the same engagement
// data and compares them case-by-case on the personalized test split.
PersonalizationExperimentResult run_personalization_experiment(const PipelineConfig& config,
                                                               const std::string& out_dir);

}  // namespace semsearch
