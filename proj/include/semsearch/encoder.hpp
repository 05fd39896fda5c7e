#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semsearch/catalog.hpp"
#include "semsearch/kernels.hpp"

namespace semsearch {

struct ModelDims {
    size_t vocab_buckets = 1u << 16;
    size_t d_tok = 64;
    size_t d = 64;
    size_t d_cust = 8;
};

// Two-tower model: hashed bag-of-tokens embedding, mean pooling, one affine
// projection per tower with a tanh nonlinearity, scored by inner product.
// When has_fusion is set, a personalized query vector is produced by a dense
// layer over concat(query vec, profile features, pooled purchase-history vec).
struct ModelParams {
    ModelDims dims;
    bool has_fusion = false;

    Matrix token_embeddings;        // vocab_buckets x d_tok
    Matrix query_proj_w;            // d_tok x d
    std::vector<double> query_proj_b;
    Matrix item_proj_w;             // d_tok x d
    std::vector<double> item_proj_b;
    Matrix fusion_w;                // (d + d_cust + d) x d, fusion models only
    std::vector<double> fusion_b;

    size_t fusion_in_dim() const { return dims.d + dims.d_cust + dims.d; }

    // Throws when any dimension disagrees or an entry is non-finite.
    void validate() const;
};

// Uniform init in [-1/sqrt(d_tok), 1/sqrt(d_tok)], seeded.
ModelParams init_params(const ModelDims& dims, bool with_fusion, uint64_t seed);

enum class Tower { query, item };

// Tokenize (lowercase, non-alphanumeric split), then FNV-1a 64 mod
// vocab_buckets. Empty text gives an empty list.
std::vector<uint32_t> tokenize_and_hash(const std::string& text, size_t vocab_buckets);

// Mean of hashed token embeddings (zero vector when there are no tokens),
// affine projection by the tower's matrix, tanh.
std::vector<double> encode_text(const ModelParams& params, Tower tower, const std::string& text);

// encode_text over fold_item_text(item) with the item tower.
std::vector<double> encode_item(const ModelParams& params, const Item& item);

struct EncodeStats {
    size_t skipped_history_items = 0;
};

// Query-side encoding. Fusion models fuse concat(q, c, h) where c and h fall
// back to zero vectors when context is missing or the history is empty;
// history items that do not resolve in the catalog are skipped and counted.
// Models without a fusion layer return the plain query vector.
std::vector<double> encode_query(const ModelParams& params, const std::string& query_text,
                                 const CustomerContext* context, const Catalog& catalog,
                                 EncodeStats* stats = nullptr);

// Inner product. Throws on dimension mismatch.
double score(std::span<const double> q, std::span<const double> i);

// Item embeddings for the whole catalog, one row per item in catalog order.
// OpenMP over items; rows are independent, so the serial twin is bit-identical.
Matrix encode_items_batch(const ModelParams& params, const Catalog& catalog);
Matrix encode_items_batch_serial(const ModelParams& params, const Catalog& catalog);

// Single binary file, little-endian: header (magic, version, flags, dims),
// then tensors row-major as 64-bit floats. The loader validates the header
// and every tensor size exactly.
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);

}  // namespace semsearch
