#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "semsearch/catalog.hpp"

namespace semsearch {

struct Posting {
    std::string item_id;
    uint32_t tf = 0;
};

struct InvertedIndex {
    std::map<std::string, std::vector<Posting>> postings;  // term -> postings, item_id ascending
    std::unordered_map<std::string, uint32_t> doc_len;
    double avg_doc_len = 0.0;
    size_t doc_count = 0;
    double k1 = 1.2;
    double b = 0.75;
};

// Indexes fold_item_text() of every catalog item. Okapi parameters are fixed
// at build time.
InvertedIndex build_inverted_index(const Catalog& catalog, double k1 = 1.2, double b = 0.75);

// Okapi BM25 with idf = ln((N - df + 0.5) / (df + 0.5) + 1), which keeps every
// score finite and non-negative. Repeated query terms count once. Results are
// ordered by (score desc, item_id asc) and hold at most min(k, matched docs)
// entries; a query with no alphanumeric tokens yields an empty list.
std::vector<std::pair<std::string, double>> bm25_topk(const InvertedIndex& index,
                                                      const std::string& query_text,
                                                      size_t k);

// Plain text serialization, deterministic for a given index.
void save_inverted_index(const InvertedIndex& index, const std::string& path);
InvertedIndex load_inverted_index(const std::string& path);

}  // namespace semsearch
