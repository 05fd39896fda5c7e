#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "semsearch/ann.hpp"
#include "semsearch/catalog.hpp"
#include "semsearch/encoder.hpp"
#include "semsearch/lexical.hpp"
#include "semsearch/rng.hpp"

namespace semsearch {

struct PositiveSet {
    QueryKey query_key;
    std::unordered_set<std::string> items;
};

enum class SamplerKind { tb_hns, random_uniform, bm25, ance };

const char* sampler_name(SamplerKind kind);
SamplerKind sampler_from_name(const std::string& name);

struct Triplet {
    std::string query_text;
    std::string customer_id;  // empty for non-personalized rows
    std::string positive;
    std::optional<std::string> negative;
    SamplerKind sampler = SamplerKind::tb_hns;
    double rho = 0.0;  // positive density of the candidate bucket at draw time

    bool personalized() const { return !customer_id.empty(); }
};

struct SamplerStats {
    uint64_t attempts_total = 0;
    uint64_t negatives_emitted = 0;
    uint64_t none_returned = 0;
    // rho histogram: 10 equal bins over [0,1], the last bin closed at 1.
    std::array<uint64_t, 10> rho_histogram{};
    uint64_t multi_path_items = 0;  // carried through from the catalog
    uint64_t depth1_items = 0;

    void record_rho(double rho);
    uint64_t calls() const { return negatives_emitted + none_returned; }
};

// Rejection sampler over the sibling bucket of the positive item: up to
// max_attempts uniform draws from candidate_siblings(query_item); the first
// draw outside the positive set is the hard negative, otherwise no sample.
// query_item itself is always treated as a positive. An empty bucket yields
// no sample. attempts_out, when given, receives the number of draws made.
// grandparent widens the bucket one taxonomy level.
std::optional<std::string> sample_tb_hns(const Catalog& catalog, const Item& query_item,
                                         const PositiveSet& positives, size_t max_attempts,
                                         Rng& rng, size_t* attempts_out = nullptr,
                                         bool grandparent = false);

// Fraction of the candidate bucket occupied by the given positives. Throws on
// an empty bucket.
double rho(const Catalog& catalog, const Item& query_item, const PositiveSet& positives,
           bool grandparent = false);

// Uniform over catalog \ positives. Rejection-sampled with a hard cap of 64
// draws, then an explicit complement enumeration. Throws when every catalog
// item is positive.
std::string sample_random(const Catalog& catalog, const PositiveSet& positives, Rng& rng);

// BM25 pool sampler: top pool_k lexical matches for the query text, positives
// dropped, one uniform pick from the remainder.
std::optional<std::string> sample_bm25_negative(const InvertedIndex& index,
                                                const std::string& query_text,
                                                const PositiveSet& positives, size_t pool_k,
                                                Rng& rng);

struct AnceQuery {
    QueryKey key;
    std::vector<double> embedding;
};

// For each query, retrieve the top pool_k items by inner product against the
// given index and keep the highest-scoring non-positive, if any.
std::map<QueryKey, std::optional<std::string>> mine_ance_negatives(
    const AnnIndex& ann, const std::vector<AnceQuery>& queries,
    const std::map<QueryKey, PositiveSet>& positives, size_t pool_k);

enum class PositiveScope { by_mode, per_query, per_query_customer };

struct SamplerConfig {
    SamplerKind kind = SamplerKind::tb_hns;
    size_t max_attempts = 10;   // tb_hns rejection cap
    size_t pool_k = 10;         // bm25 / ance pool size
    size_t n_neg = 1;           // negatives per (key, positive) pair
    bool grandparent_level = false;  // widen tb_hns scope one level
    PositiveScope scope = PositiveScope::by_mode;
    double bm25_k1 = 1.2;
    double bm25_b = 0.75;
};

// Positive sets per query key derived from purchase events. In personalized
// mode keys are (query, customer); otherwise customers are merged per query.
std::map<QueryKey, PositiveSet> build_positive_sets(const EngagementAggregate& agg,
                                                    bool personalized, PositiveScope scope);

struct TripletBuild {
    std::vector<Triplet> triplets;
    SamplerStats stats;
};

// One triplet per (query key, positive item) pair and sampler draw; rows where
// the sampler came back empty keep an absent negative. ANCE rows are emitted
// without negatives here and filled in by the trainer's refresh pass. Output
// is sorted, so worker partitioning never changes the artifact.
TripletBuild build_triplets(const EngagementAggregate& agg, const Catalog& catalog,
                            const SamplerConfig& config, bool personalized, uint64_t seed);

// TSV columns: query_side, positive_id, negative_id, sampler_name, rho.
// Personalized rows serialize the query side as
//   query \x1f customer_id \x1f history titles \x1f feature csv
// so the file carries the context the paper's data format spells out while
// staying joinable back to the customer record.
void save_triplets(const std::vector<Triplet>& triplets, const Catalog& catalog,
                   const CustomerMap& customers, const std::string& path);
std::vector<Triplet> load_triplets(const std::string& path);

void save_sampler_stats(const SamplerStats& stats, const std::string& path);

}  // namespace semsearch
