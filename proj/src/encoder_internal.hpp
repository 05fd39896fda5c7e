#pragma once

// Cached forward passes shared by the public encode functions and the
// trainer's backward pass. Keeping one arithmetic path means training and
// serving produce bit-identical embeddings.

#include <string>
#include <vector>

#include "semsearch/catalog.hpp"
#include "semsearch/encoder.hpp"

namespace semsearch::detail {

struct TextForward {
    std::vector<uint32_t> tokens;  // hashed, one entry per occurrence
    std::vector<double> pooled;    // d_tok
    std::vector<double> out;       // d, post-tanh
};

TextForward forward_text(const ModelParams& params, Tower tower, const std::string& text);

struct QueryForward {
    TextForward query;
    bool fused = false;
    std::vector<double> profile;        // d_cust; zeros when context missing
    std::vector<TextForward> history;   // item tower, resolved history items only
    std::vector<double> history_mean;   // d; zeros when history empty
    std::vector<double> fusion_in;      // concat(q, profile, history_mean)
    std::vector<double> out;            // final query-side vector
};

QueryForward forward_query(const ModelParams& params, const std::string& query_text,
                           const CustomerContext* context, const Catalog& catalog,
                           EncodeStats* stats);

}  // namespace semsearch::detail
