// Compares the OpenMP kernels against their serial reference twins: same
// inputs, wall clock per call, and a bitwise equality check on the outputs.
// Thread count follows OMP_NUM_THREADS.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "semsearch/encoder.hpp"
#include "semsearch/kernels.hpp"
#include "semsearch/rng.hpp"
#include "semsearch/synthetic.hpp"
#include "semsearch/training.hpp"

namespace ss = semsearch;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warmup
    const auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
    std::printf("%-24s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx   %s\n", name, serial_ms,
                parallel_ms, serial_ms / parallel_ms, identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("omp threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without OpenMP\n");
#endif

    ss::Rng rng(7);
    const size_t n = 20000, d = 64;

    // inner product scan
    ss::Matrix vectors(n, d);
    for (double& v : vectors.a) v = rng.uniform(-1.0, 1.0);
    std::vector<double> q(d);
    for (double& v : q) v = rng.uniform(-1.0, 1.0);
    {
        std::vector<double> s1, s2;
        const double t_ser =
            time_ms([&] { ss::kernels::inner_product_scan_serial(vectors, q, s1); }, 20);
        const double t_par = time_ms([&] { ss::kernels::inner_product_scan(vectors, q, s2); }, 20);
        report("inner_product_scan", t_ser, t_par, s1 == s2);
    }

    // centroid assignment
    ss::Matrix centroids(64, d);
    for (double& v : centroids.a) v = rng.uniform(-1.0, 1.0);
    {
        std::vector<uint32_t> a1, a2;
        std::vector<double> d1, d2;
        const double t_ser = time_ms(
            [&] { ss::kernels::assign_to_centroids_serial(vectors, centroids, a1, &d1); }, 5);
        const double t_par =
            time_ms([&] { ss::kernels::assign_to_centroids(vectors, centroids, a2, &d2); }, 5);
        report("assign_to_centroids", t_ser, t_par, a1 == a2 && d1 == d2);
    }

    // catalog embedding
    auto catalog = ss::generate_bench_catalog(20000, 50, 3);
    ss::ModelDims dims{.vocab_buckets = 8192, .d_tok = 32, .d = 32, .d_cust = 8};
    auto params = ss::init_params(dims, false, 11);
    {
        ss::Matrix m1, m2;
        const double t_ser = time_ms([&] { m1 = ss::encode_items_batch_serial(params, catalog); }, 3);
        const double t_par = time_ms([&] { m2 = ss::encode_items_batch(params, catalog); }, 3);
        report("encode_items_batch", t_ser, t_par, m1.a == m2.a);
    }

    // batch gradients
    {
        std::vector<ss::Triplet> triplets;
        ss::Rng pick(13);
        for (size_t i = 0; i < 64; ++i) {
            ss::Triplet t;
            const auto& pos = catalog.items[pick.below(catalog.items.size())];
            const auto& neg = catalog.items[pick.below(catalog.items.size())];
            t.query_text = pos.title;
            t.positive = pos.item_id;
            t.negative = neg.item_id;
            triplets.push_back(std::move(t));
        }
        std::vector<const ss::Triplet*> batch;
        for (const auto& t : triplets) batch.push_back(&t);
        ss::CustomerMap no_customers;

        ss::BatchResult r1, r2;
        const double t_ser = time_ms(
            [&] { r1 = ss::batch_loss_serial(params, batch, catalog, no_customers, true); }, 5);
        const double t_par =
            time_ms([&] { r2 = ss::batch_loss(params, batch, catalog, no_customers, true); }, 5);
        const bool same = r1.loss == r2.loss &&
                          r1.grad.token_embeddings.a == r2.grad.token_embeddings.a &&
                          r1.grad.query_proj_w.a == r2.grad.query_proj_w.a &&
                          r1.grad.item_proj_w.a == r2.grad.item_proj_w.a;
        report("batch_loss", t_ser, t_par, same);
    }
    return 0;
}
