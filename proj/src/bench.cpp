#include "semsearch/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <stdexcept>

#include "semsearch/lexical.hpp"
#include "semsearch/metrics.hpp"
#include "semsearch/synthetic.hpp"

namespace semsearch {

namespace {

using Clock = std::chrono::steady_clock;

double to_ns(Clock::duration d) {
    return std::chrono::duration<double, std::nano>(d).count();
}

}  // namespace

std::vector<SamplerBenchRow> bench_samplers(const std::vector<size_t>& catalog_sizes,
                                            size_t bucket_size,
                                            const std::vector<SamplerKind>& samplers,
                                            size_t trials, uint64_t seed) {
    std::vector<SamplerBenchRow> rows;
    if (trials == 0) return rows;

    for (size_t size : catalog_sizes) {
        Catalog catalog = generate_bench_catalog(size, bucket_size, seed);

        InvertedIndex bm25_index;
        if (std::find(samplers.begin(), samplers.end(), SamplerKind::bm25) != samplers.end()) {
            bm25_index = build_inverted_index(catalog);
        }

        // Pre-drawn trial items so the timed region holds only the sampler.
        const size_t warmup = trials / 10 + 1;
        const size_t total = warmup + trials;
        Rng pick_rng(derive_seed(seed, size));
        std::vector<const Item*> trial_items(total);
        for (auto& slot : trial_items) {
            slot = &catalog.items[pick_rng.below(catalog.items.size())];
        }

        for (SamplerKind kind : samplers) {
            if (kind == SamplerKind::ance) {
                throw std::runtime_error("ance cannot be benchmarked without a trained model");
            }
            Rng rng(derive_seed(seed, size * 31 + static_cast<size_t>(kind)));
            std::vector<double> per_call_ns;
            per_call_ns.reserve(trials);

            for (size_t t = 0; t < total; ++t) {
                const Item& item = *trial_items[t];
                PositiveSet positives;
                positives.items.insert(item.item_id);

                Clock::time_point t0, t1;
                switch (kind) {
                    case SamplerKind::tb_hns: {
                        t0 = Clock::now();
                        auto neg = sample_tb_hns(catalog, item, positives, 10, rng);
                        t1 = Clock::now();
                        (void)neg;
                        break;
                    }
                    case SamplerKind::random_uniform: {
                        t0 = Clock::now();
                        auto neg = sample_random(catalog, positives, rng);
                        t1 = Clock::now();
                        (void)neg;
                        break;
                    }
                    case SamplerKind::bm25: {
                        t0 = Clock::now();
                        auto neg =
                            sample_bm25_negative(bm25_index, item.title, positives, 10, rng);
                        t1 = Clock::now();
                        (void)neg;
                        break;
                    }
                    case SamplerKind::ance: break;
                }
                if (t >= warmup) per_call_ns.push_back(to_ns(t1 - t0));
            }

            SamplerBenchRow row;
            row.sampler = sampler_name(kind);
            row.catalog_size = size;
            row.trials = trials;
            double sum = 0.0;
            for (double v : per_call_ns) sum += v;
            row.mean_ns = sum / static_cast<double>(per_call_ns.size());
            row.p95_ns = latency_percentile(per_call_ns, 0.95);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void save_bench_csv(const std::vector<SamplerBenchRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << "sampler,catalog_size,trials,mean_ns,p95_ns\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.1f,%.1f\n", r.sampler.c_str(),
                      r.catalog_size, r.trials, r.mean_ns, r.p95_ns);
        out << buf;
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace semsearch
