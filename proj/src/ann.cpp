#include "semsearch/ann.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "semsearch/io_util.hpp"
#include "semsearch/rng.hpp"

namespace semsearch {

namespace {

constexpr uint32_t kIndexMagic = 0x414d4553;  // "SEMA"
constexpr uint32_t kIndexVersion = 1;
constexpr size_t kKMeansMaxIters = 50;
constexpr double kKMeansRelTol = 1e-4;

double dist2(const double* a, const double* b, size_t n) {
    double d = 0.0;
    for (size_t j = 0; j < n; ++j) {
        const double diff = a[j] - b[j];
        d += diff * diff;
    }
    return d;
}

// k-means++ seeding: first centroid uniform, then points weighted by squared
// distance to the nearest chosen centroid.
Matrix kmeans_pp_init(const Matrix& points, size_t k, Rng& rng) {
    Matrix centroids(k, points.cols);
    std::vector<double> d2(points.rows, std::numeric_limits<double>::infinity());
    std::vector<char> chosen(points.rows, 0);

    size_t first = rng.below(points.rows);
    std::copy_n(points.row(first), points.cols, centroids.row(0));
    chosen[first] = 1;

    for (size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (size_t i = 0; i < points.rows; ++i) {
            const double d = dist2(points.row(i), centroids.row(c - 1), points.cols);
            if (d < d2[i]) d2[i] = d;
            total += d2[i];
        }
        size_t pick = points.rows;
        if (total > 0.0) {
            const double target = rng.unit() * total;
            double acc = 0.0;
            for (size_t i = 0; i < points.rows; ++i) {
                acc += d2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
            if (pick == points.rows) pick = points.rows - 1;  // fp slack at the end
        } else {
            // All remaining points coincide with chosen centroids; take the
            // first unchosen row.
            for (size_t i = 0; i < points.rows; ++i) {
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
            }
            if (pick == points.rows) pick = 0;
        }
        std::copy_n(points.row(pick), points.cols, centroids.row(c));
        chosen[pick] = 1;
    }
    return centroids;
}

void run_kmeans(const Matrix& points, Matrix& centroids, std::vector<uint32_t>& assignment,
                std::vector<double>* inertia_log) {
    const size_t k = centroids.rows;

    double prev_inertia = std::numeric_limits<double>::infinity();
    std::vector<double> d2;
    for (size_t iter = 0; iter < kKMeansMaxIters; ++iter) {
        kernels::assign_to_centroids(points, centroids, assignment, &d2);
        double inertia = 0.0;
        for (double d : d2) inertia += d;
        if (inertia_log) inertia_log->push_back(inertia);

        // Recompute centroids; accumulation in row order keeps the result
        // independent of thread count.
        Matrix sums(k, points.cols);
        std::vector<size_t> counts(k, 0);
        for (size_t i = 0; i < points.rows; ++i) {
            double* s = sums.row(assignment[i]);
            const double* p = points.row(i);
            for (size_t j = 0; j < points.cols; ++j) s[j] += p[j];
            ++counts[assignment[i]];
        }
        for (size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // Re-seed an empty cluster with the point farthest from its
                // centroid (lowest row index on ties).
                size_t far = 0;
                double far_d = -1.0;
                for (size_t i = 0; i < points.rows; ++i) {
                    if (d2[i] > far_d) {
                        far_d = d2[i];
                        far = i;
                    }
                }
                std::copy_n(points.row(far), points.cols, centroids.row(c));
                d2[far] = 0.0;
                continue;
            }
            const double inv = 1.0 / static_cast<double>(counts[c]);
            double* cent = centroids.row(c);
            const double* s = sums.row(c);
            for (size_t j = 0; j < points.cols; ++j) cent[j] = s[j] * inv;
        }

        if (prev_inertia < std::numeric_limits<double>::infinity()) {
            const double denom = prev_inertia > 0.0 ? prev_inertia : 1.0;
            if ((prev_inertia - inertia) / denom < kKMeansRelTol) break;
        }
        prev_inertia = inertia;
    }
    // Final assignment against the final centroids.
    kernels::assign_to_centroids(points, centroids, assignment, nullptr);
}

}  // namespace

AnnIndex build_index(const std::vector<std::pair<std::string, std::vector<double>>>& embeddings,
                     IndexKind kind, size_t n_clusters, uint64_t seed,
                     std::vector<double>* inertia_log) {
    if (embeddings.empty()) throw std::runtime_error("build_index: no embeddings");
    const size_t dim = embeddings.front().second.size();
    if (dim == 0) throw std::runtime_error("build_index: zero-dimensional embeddings");

    std::vector<size_t> order(embeddings.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return embeddings[a].first < embeddings[b].first;
    });

    AnnIndex index;
    index.kind = kind;
    index.dim = dim;
    index.ids.reserve(embeddings.size());
    index.vectors = Matrix(embeddings.size(), dim);
    for (size_t r = 0; r < order.size(); ++r) {
        const auto& [id, vec] = embeddings[order[r]];
        if (vec.size() != dim) throw std::runtime_error("build_index: dimension mismatch for " + id);
        if (!index.ids.empty() && index.ids.back() == id) {
            throw std::runtime_error("build_index: duplicate id " + id);
        }
        index.ids.push_back(id);
        std::copy(vec.begin(), vec.end(), index.vectors.row(r));
    }

    if (kind == IndexKind::ivf) {
        if (n_clusters < 1 || n_clusters > index.size()) {
            throw std::runtime_error("build_index: n_clusters must be in [1, n_items]");
        }
        Rng rng(seed);
        index.centroids = kmeans_pp_init(index.vectors, n_clusters, rng);
        std::vector<uint32_t> assignment;
        run_kmeans(index.vectors, index.centroids, assignment, inertia_log);
        index.assignments.assign(n_clusters, {});
        for (size_t i = 0; i < assignment.size(); ++i) {
            index.assignments[assignment[i]].push_back(static_cast<uint32_t>(i));
        }
    }
    return index;
}

std::vector<std::pair<std::string, double>> search(const AnnIndex& index,
                                                   std::span<const double> query, size_t k,
                                                   size_t nprobe) {
    if (k < 1) throw std::runtime_error("search: k must be >= 1");
    if (query.size() != index.dim) throw std::runtime_error("search: dimension mismatch");

    std::vector<std::pair<std::string, double>> out;
    if (index.kind == IndexKind::exact) {
        std::vector<double> scores;
        kernels::inner_product_scan(index.vectors, query, scores);
        for (const auto& [s, row] : kernels::top_k_rows(scores, k)) {
            out.emplace_back(index.ids[row], s);
        }
        return out;
    }

    const size_t n_clusters = index.centroids.rows;
    if (nprobe < 1 || nprobe > n_clusters) {
        throw std::runtime_error("search: nprobe must be in [1, n_clusters]");
    }
    std::vector<double> centroid_scores;
    kernels::inner_product_scan(index.centroids, query, centroid_scores);
    auto probed = kernels::top_k_rows(centroid_scores, nprobe);

    // Gather candidate rows in ascending row order so ties keep id order.
    std::vector<uint32_t> rows;
    for (const auto& [s, c] : probed) {
        const auto& members = index.assignments[c];
        rows.insert(rows.end(), members.begin(), members.end());
    }
    std::sort(rows.begin(), rows.end());

    std::vector<double> scores(rows.size());
    const auto n = static_cast<ptrdiff_t>(rows.size());
#pragma omp parallel for schedule(static)
    for (ptrdiff_t i = 0; i < n; ++i) {
        scores[static_cast<size_t>(i)] =
            kernels::dot(index.vectors.row_span(rows[static_cast<size_t>(i)]), query);
    }
    for (const auto& [s, pos] : kernels::top_k_rows(scores, k)) {
        out.emplace_back(index.ids[rows[pos]], s);
    }
    return out;
}

std::vector<std::pair<std::string, double>> filter_results(
    const std::vector<std::pair<std::string, double>>& results, double min_score,
    const std::function<bool(const std::string&)>& in_stock) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& entry : results) {
        if (entry.second >= min_score && (!in_stock || in_stock(entry.first))) {
            out.push_back(entry);
        }
    }
    return out;
}

void save_index(const AnnIndex& index, const std::string& path) {
    BinaryWriter w(path);
    w.u32(kIndexMagic);
    w.u32(kIndexVersion);
    w.u32(static_cast<uint32_t>(index.kind));
    w.u64(index.size());
    w.u64(index.dim);
    w.u64(index.centroids.rows);
    for (const auto& id : index.ids) w.str(id);
    w.f64_array(index.vectors.a);
    if (index.kind == IndexKind::ivf) {
        w.f64_array(index.centroids.a);
        for (const auto& members : index.assignments) {
            w.u64(members.size());
            for (uint32_t m : members) w.u32(m);
        }
    }
    w.close();
}

AnnIndex load_index(const std::string& path) {
    BinaryReader r(path);
    if (r.u32() != kIndexMagic) throw std::runtime_error("not an ann index file: " + path);
    if (r.u32() != kIndexVersion) throw std::runtime_error("unsupported index version in " + path);

    AnnIndex index;
    const uint32_t kind = r.u32();
    if (kind > 1) throw std::runtime_error("bad index kind in " + path);
    index.kind = static_cast<IndexKind>(kind);
    const size_t n = r.u64();
    index.dim = r.u64();
    const size_t n_clusters = r.u64();

    index.ids.reserve(n);
    for (size_t i = 0; i < n; ++i) index.ids.push_back(r.str());
    index.vectors = Matrix(n, index.dim);
    index.vectors.a = r.f64_array(n * index.dim);
    if (index.kind == IndexKind::ivf) {
        index.centroids = Matrix(n_clusters, index.dim);
        index.centroids.a = r.f64_array(n_clusters * index.dim);
        index.assignments.resize(n_clusters);
        for (auto& members : index.assignments) {
            members.resize(r.u64());
            for (auto& m : members) m = r.u32();
        }
    }
    r.expect_eof();
    return index;
}

}  // namespace semsearch
