#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "semsearch/kernels.hpp"

namespace semsearch {

enum class IndexKind : uint32_t { exact = 0, ivf = 1 };

// Flat inner-product index. Rows are stored in ascending item_id order, so
// tie-breaking by row index is tie-breaking by id. The ivf flavor clusters
// rows with k-means (Euclidean, as usual for IVF-flat, even though queries
// score by dot product) and probes the nprobe clusters whose centroids score
// highest against the query.
struct AnnIndex {
    IndexKind kind = IndexKind::exact;
    size_t dim = 0;
    std::vector<std::string> ids;  // ascending
    Matrix vectors;                // ids.size() x dim
    Matrix centroids;              // ivf only: n_clusters x dim
    std::vector<std::vector<uint32_t>> assignments;  // ivf only: cluster -> rows, ascending

    size_t size() const { return ids.size(); }
};

// k-means++ seeded init, Lloyd iterations capped at 50 or a relative inertia
// improvement below 1e-4. Duplicate ids and mixed dimensions are rejected.
// inertia_log, when given, receives the per-iteration inertia sequence.
AnnIndex build_index(const std::vector<std::pair<std::string, std::vector<double>>>& embeddings,
                     IndexKind kind, size_t n_clusters, uint64_t seed,
                     std::vector<double>* inertia_log = nullptr);

// Top-k by dot product, (score desc, item_id asc). For ivf, nprobe selects
// how many clusters are scanned; nprobe >= n_clusters degenerates to exact.
std::vector<std::pair<std::string, double>> search(const AnnIndex& index,
                                                   std::span<const double> query, size_t k,
                                                   size_t nprobe);

// Order-preserving filter: keeps entries with score >= min_score that the
// in_stock predicate accepts.
std::vector<std::pair<std::string, double>> filter_results(
    const std::vector<std::pair<std::string, double>>& results, double min_score,
    const std::function<bool(const std::string&)>& in_stock);

void save_index(const AnnIndex& index, const std::string& path);
AnnIndex load_index(const std::string& path);

}  // namespace semsearch
