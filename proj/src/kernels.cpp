#include "semsearch/kernels.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace semsearch::kernels {

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::runtime_error("dot: dimension mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

namespace {

void scan_impl(const Matrix& vectors, std::span<const double> q, std::vector<double>& scores,
               bool parallel) {
    if (q.size() != vectors.cols) throw std::runtime_error("inner_product_scan: dimension mismatch");
    scores.resize(vectors.rows);
    const auto n = static_cast<ptrdiff_t>(vectors.rows);
#pragma omp parallel for schedule(static) if (parallel)
    for (ptrdiff_t i = 0; i < n; ++i) {
        const double* row = vectors.row(static_cast<size_t>(i));
        double s = 0.0;
        for (size_t j = 0; j < vectors.cols; ++j) s += row[j] * q[j];
        scores[static_cast<size_t>(i)] = s;
    }
}

void assign_impl(const Matrix& points, const Matrix& centroids, std::vector<uint32_t>& assignment,
                 std::vector<double>* dist2_out, bool parallel) {
    if (points.cols != centroids.cols) {
        throw std::runtime_error("assign_to_centroids: dimension mismatch");
    }
    if (centroids.rows == 0) throw std::runtime_error("assign_to_centroids: no centroids");
    assignment.resize(points.rows);
    if (dist2_out) dist2_out->resize(points.rows);
    const auto n = static_cast<ptrdiff_t>(points.rows);
#pragma omp parallel for schedule(static) if (parallel)
    for (ptrdiff_t i = 0; i < n; ++i) {
        const double* p = points.row(static_cast<size_t>(i));
        double best = std::numeric_limits<double>::infinity();
        uint32_t best_c = 0;
        for (size_t c = 0; c < centroids.rows; ++c) {
            const double* cent = centroids.row(c);
            double d = 0.0;
            for (size_t j = 0; j < points.cols; ++j) {
                const double diff = p[j] - cent[j];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                best_c = static_cast<uint32_t>(c);
            }
        }
        assignment[static_cast<size_t>(i)] = best_c;
        if (dist2_out) (*dist2_out)[static_cast<size_t>(i)] = best;
    }
}

}  // namespace

void inner_product_scan(const Matrix& vectors, std::span<const double> q,
                        std::vector<double>& scores) {
    scan_impl(vectors, q, scores, true);
}

void inner_product_scan_serial(const Matrix& vectors, std::span<const double> q,
                               std::vector<double>& scores) {
    scan_impl(vectors, q, scores, false);
}

std::vector<std::pair<double, size_t>> top_k_rows(std::span<const double> scores, size_t k) {
    if (k < 1) throw std::runtime_error("top_k_rows: k must be >= 1");
    std::vector<std::pair<double, size_t>> heap;  // (score, row), worst on top
    heap.reserve(std::min(k, scores.size()) + 1);
    auto worse = [](const std::pair<double, size_t>& a, const std::pair<double, size_t>& b) {
        // min-heap on score, with higher row index treated as worse on ties
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    };
    for (size_t i = 0; i < scores.size(); ++i) {
        heap.emplace_back(scores[i], i);
        std::push_heap(heap.begin(), heap.end(), worse);
        if (heap.size() > k) {
            std::pop_heap(heap.begin(), heap.end(), worse);
            heap.pop_back();
        }
    }
    std::sort(heap.begin(), heap.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    return heap;
}

void assign_to_centroids(const Matrix& points, const Matrix& centroids,
                         std::vector<uint32_t>& assignment, std::vector<double>* dist2_out) {
    assign_impl(points, centroids, assignment, dist2_out, true);
}

void assign_to_centroids_serial(const Matrix& points, const Matrix& centroids,
                                std::vector<uint32_t>& assignment,
                                std::vector<double>* dist2_out) {
    assign_impl(points, centroids, assignment, dist2_out, false);
}

}  // namespace semsearch::kernels
