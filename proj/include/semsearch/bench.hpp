#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semsearch/sampling.hpp"

namespace semsearch {

struct SamplerBenchRow {
    std::string sampler;
    size_t catalog_size = 0;
    size_t trials = 0;
    double mean_ns = 0.0;
    double p95_ns = 0.0;
};

// Per-negative wall clock per sampler over synthetic catalogs whose parent
// buckets all hold bucket_size items. A tenth of the trials run unmeasured as
// warmup. ance needs a trained model and is not benchable here.
std::vector<SamplerBenchRow> bench_samplers(const std::vector<size_t>& catalog_sizes,
                                            size_t bucket_size,
                                            const std::vector<SamplerKind>& samplers,
                                            size_t trials, uint64_t seed);

// CSV: sampler,catalog_size,trials,mean_ns,p95_ns
void save_bench_csv(const std::vector<SamplerBenchRow>& rows, const std::string& path);

}  // namespace semsearch
