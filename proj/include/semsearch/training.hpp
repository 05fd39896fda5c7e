#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semsearch/catalog.hpp"
#include "semsearch/encoder.hpp"
#include "semsearch/sampling.hpp"

namespace semsearch {

enum class TrainMode { non_personalized, personalized, combined };

const char* train_mode_name(TrainMode mode);
TrainMode train_mode_from_name(const std::string& name);

struct TrainConfig {
    double learning_rate = 0.05;
    size_t epochs = 10;
    size_t batch_size = 16;
    uint64_t seed = 1;
    TrainMode mode = TrainMode::non_personalized;
    bool in_batch_negatives = true;
    std::optional<size_t> ance_refresh_epochs;
    size_t ance_pool_k = 10;
};

struct LossReport {
    size_t epoch = 0;
    double mean_loss = 0.0;
    size_t triplets_seen = 0;  // usable triplets (those with at least one negative)
    double grad_norm = 0.0;    // mean batch-gradient L2 norm over the epoch
};

// Softmax contrastive loss over one positive similarity and a set of negative
// similarities, computed with a log-sum-exp shift. Non-negative; 0 when the
// negative set is empty.
double mnrl_loss(double sim_qp, std::span<const double> sim_qn);

// Gradients have the same shape as the parameters; fusion tensors stay empty
// for non-fusion models.
struct BatchResult {
    double loss = 0.0;
    size_t usable = 0;
    ModelParams grad;
};

// Loss and reverse-mode gradients for one batch. Per triplet the negative set
// is the explicit negative (when present) plus, when in_batch_negatives is
// set, the positives of other batch triplets carrying a different item id.
// Triplets with an empty negative set are skipped; a batch where every
// triplet is skipped is an error. The loss is the mean over usable triplets.
//
// Forward and backward passes run per-triplet/per-node under OpenMP with all
// accumulation done serially in a fixed order, so the serial twin is
// bit-identical at any thread count.
BatchResult batch_loss(const ModelParams& params, const std::vector<const Triplet*>& batch,
                       const Catalog& catalog, const CustomerMap& customers,
                       bool in_batch_negatives);
BatchResult batch_loss_serial(const ModelParams& params, const std::vector<const Triplet*>& batch,
                              const Catalog& catalog, const CustomerMap& customers,
                              bool in_batch_negatives);

struct TrainResult {
    ModelParams params;
    std::vector<LossReport> reports;
    bool diverged = false;
};

// Plain SGD over shuffled epochs. combined mode trains one fusion model on
// the two triplet sets shuffled together; ance rows are re-mined against the
// current parameters every ance_refresh_epochs. A non-finite loss stops
// training at the last finite state.
TrainResult train(const Catalog& catalog, const CustomerMap& customers,
                  std::vector<Triplet> personalized, std::vector<Triplet> non_personalized,
                  const TrainConfig& config, const ModelDims& dims);

// key=value lines; '#' starts a comment. Unknown keys are an error.
TrainConfig load_train_config(const std::string& path);

void save_loss_reports(const std::vector<LossReport>& reports, const std::string& path);

}  // namespace semsearch
