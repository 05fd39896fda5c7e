#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semsearch/catalog.hpp"

namespace semsearch {

// Balanced taxonomy with planted ground truth. Item titles carry their leaf
// and parent-group tokens, so sibling leaves share lexical context; a
// configurable share of queries use an ambiguity token planted into two
// leaves that live in different top-level sections, which only customer
// context can tell apart. Train-window events get timestamps in
// [0, kTestStartTs), test-window events in [kTestStartTs, 2*kTestStartTs).
struct SyntheticSpec {
    size_t branch = 4;
    size_t depth = 3;
    size_t items_per_leaf = 10;
    size_t n_customers = 50;
    size_t n_queries = 400;  // engagement groups; texts repeat across customers
    double purchase_noise = 0.1;
    double ambiguous_fraction = 0.2;
    size_t ambiguous_texts = 32;  // distinct ambiguity tokens
    size_t train_purchases = 3;   // purchases per group in the train window
    size_t test_purchases = 2;    // purchases per group in the test window
    size_t history_length = 6;
    size_t feature_dim = 8;
    uint64_t seed = 1;
};

inline constexpr int64_t kTestStartTs = 500000;

struct SyntheticFiles {
    std::string catalog_path;
    std::string engagement_path;
    std::string customers_path;
    size_t n_items = 0;
};

// Writes catalog.jsonl, engagement.tsv and customers.jsonl under out_dir.
// Byte-identical for a fixed spec.
SyntheticFiles generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

// Flat two-level catalog whose parent buckets hold exactly bucket_size items;
// titles share a corpus-wide token so lexical postings grow with n_items.
// Used by the sampler benchmark.
Catalog generate_bench_catalog(size_t n_items, size_t bucket_size, uint64_t seed);

}  // namespace semsearch
