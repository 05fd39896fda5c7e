#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace semsearch {

// Dense row-major matrix of doubles. Small by design; every consumer in this
// codebase iterates rows explicitly.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double* row(size_t i) { return a.data() + i * cols; }
    const double* row(size_t i) const { return a.data() + i * cols; }
    std::span<const double> row_span(size_t i) const { return {row(i), cols}; }
    double& at(size_t i, size_t j) { return a[i * cols + j]; }
    double at(size_t i, size_t j) const { return a[i * cols + j]; }
};

namespace kernels {

// Hot loops shared by the index, encoder and trainer. Each kernel ships in an
// OpenMP flavor and a serial reference twin; outputs are element-independent,
// so the two are bit-identical and tests can diff them directly.
// tools/bench_kernels compares their wall clock.

double dot(std::span<const double> a, std::span<const double> b);

// scores[i] = vectors.row(i) . q
void inner_product_scan(const Matrix& vectors, std::span<const double> q,
                        std::vector<double>& scores);
void inner_product_scan_serial(const Matrix& vectors, std::span<const double> q,
                               std::vector<double>& scores);

// Top-k rows by (score desc, row asc). Selection is a serial pass over the
// score array; pair with one of the scans above.
std::vector<std::pair<double, size_t>> top_k_rows(std::span<const double> scores, size_t k);

// assignment[i] = argmin_c ||points.row(i) - centroids.row(c)||^2, ties to the
// lowest cluster index; dist2_out (optional) receives the winning distance.
void assign_to_centroids(const Matrix& points, const Matrix& centroids,
                         std::vector<uint32_t>& assignment, std::vector<double>* dist2_out);
void assign_to_centroids_serial(const Matrix& points, const Matrix& centroids,
                                std::vector<uint32_t>& assignment,
                                std::vector<double>* dist2_out);

}  // namespace kernels
}  // namespace semsearch
