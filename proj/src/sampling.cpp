#include "semsearch/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "semsearch/text.hpp"

namespace semsearch {

namespace {

// Intra-field separator for the serialized query side; never collides with
// the TSV tabs.
constexpr char kFieldSep = '\x1f';

const std::vector<std::string>& candidate_bucket(const Catalog& catalog, const Item& item,
                                                 bool grandparent) {
    if (!grandparent) return candidate_siblings(catalog.taxonomy, item);
    const std::string& parent = parent_category(catalog.taxonomy, item);
    const std::string* scope = &parent;
    if (parent != kRootCategory) {
        auto it = catalog.taxonomy.parent.find(parent);
        scope = (it == catalog.taxonomy.parent.end()) ? &kRootCategory : &it->second;
    }
    auto bit = catalog.taxonomy.bucket.find(*scope);
    if (bit == catalog.taxonomy.bucket.end()) {
        throw std::runtime_error("no bucket for category: " + *scope);
    }
    return bit->second;
}

}  // namespace

const char* sampler_name(SamplerKind kind) {
    switch (kind) {
        case SamplerKind::tb_hns: return "tb_hns";
        case SamplerKind::random_uniform: return "random";
        case SamplerKind::bm25: return "bm25";
        case SamplerKind::ance: return "ance";
    }
    return "?";
}

SamplerKind sampler_from_name(const std::string& name) {
    if (name == "tb_hns") return SamplerKind::tb_hns;
    if (name == "random") return SamplerKind::random_uniform;
    if (name == "bm25") return SamplerKind::bm25;
    if (name == "ance") return SamplerKind::ance;
    throw std::runtime_error("unknown sampler: " + name);
}

void SamplerStats::record_rho(double rho_value) {
    if (rho_value < 0.0) rho_value = 0.0;
    auto bin = static_cast<size_t>(rho_value * 10.0);
    if (bin > 9) bin = 9;  // 1.0 lands in the last bin
    ++rho_histogram[bin];
}

std::optional<std::string> sample_tb_hns(const Catalog& catalog, const Item& query_item,
                                         const PositiveSet& positives, size_t max_attempts,
                                         Rng& rng, size_t* attempts_out, bool grandparent) {
    if (max_attempts < 1) throw std::runtime_error("max_attempts must be >= 1");
    if (!catalog.has(query_item.item_id)) {
        throw std::runtime_error("query item not in catalog: " + query_item.item_id);
    }
    const auto& bucket = candidate_bucket(catalog, query_item, grandparent);
    if (attempts_out) *attempts_out = 0;
    if (bucket.empty()) return std::nullopt;

    for (size_t attempt = 0; attempt < max_attempts; ++attempt) {
        const std::string& draw = bucket[rng.below(bucket.size())];
        if (attempts_out) ++*attempts_out;
        if (draw != query_item.item_id && !positives.items.count(draw)) return draw;
    }
    return std::nullopt;
}

double rho(const Catalog& catalog, const Item& query_item, const PositiveSet& positives,
           bool grandparent) {
    const auto& bucket = candidate_bucket(catalog, query_item, grandparent);
    if (bucket.empty()) throw std::runtime_error("empty candidate bucket");
    size_t hits = 0;
    for (const auto& id : bucket) {
        if (positives.items.count(id)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(bucket.size());
}

std::string sample_random(const Catalog& catalog, const PositiveSet& positives, Rng& rng) {
    constexpr size_t kRejectionCap = 64;
    const size_t n = catalog.items.size();
    for (size_t attempt = 0; attempt < kRejectionCap; ++attempt) {
        const auto& id = catalog.items[rng.below(n)].item_id;
        if (!positives.items.count(id)) return id;
    }
    // Dense positive set; enumerate the complement instead.
    std::vector<const std::string*> complement;
    for (const auto& item : catalog.items) {
        if (!positives.items.count(item.item_id)) complement.push_back(&item.item_id);
    }
    if (complement.empty()) throw std::runtime_error("every catalog item is positive");
    return *complement[rng.below(complement.size())];
}

std::optional<std::string> sample_bm25_negative(const InvertedIndex& index,
                                                const std::string& query_text,
                                                const PositiveSet& positives, size_t pool_k,
                                                Rng& rng) {
    if (pool_k < 1) throw std::runtime_error("pool_k must be >= 1");
    auto pool = bm25_topk(index, query_text, pool_k);
    std::vector<std::string> remainder;
    for (auto& [id, s] : pool) {
        if (!positives.items.count(id)) remainder.push_back(std::move(id));
    }
    if (remainder.empty()) return std::nullopt;
    return remainder[rng.below(remainder.size())];
}

std::map<QueryKey, std::optional<std::string>> mine_ance_negatives(
    const AnnIndex& ann, const std::vector<AnceQuery>& queries,
    const std::map<QueryKey, PositiveSet>& positives, size_t pool_k) {
    if (pool_k < 1) throw std::runtime_error("pool_k must be >= 1");
    const size_t nprobe = ann.kind == IndexKind::ivf ? ann.centroids.rows : 1;

    std::map<QueryKey, std::optional<std::string>> mined;
    for (const auto& q : queries) {
        auto results = search(ann, q.embedding, pool_k, nprobe);
        const PositiveSet* pos = nullptr;
        if (auto it = positives.find(q.key); it != positives.end()) pos = &it->second;
        std::optional<std::string> winner;
        for (auto& [id, s] : results) {
            if (pos && pos->items.count(id)) continue;
            winner = id;
            break;
        }
        mined[q.key] = std::move(winner);
    }
    return mined;
}

std::map<QueryKey, PositiveSet> build_positive_sets(const EngagementAggregate& agg,
                                                    bool personalized, PositiveScope scope) {
    const bool per_customer = scope == PositiveScope::per_query_customer ||
                              (scope == PositiveScope::by_mode && personalized);

    std::map<QueryKey, PositiveSet> sets;
    for (const auto& [key, items] : agg.cells) {
        QueryKey out_key = per_customer && personalized ? key : QueryKey{key.query_text, ""};
        for (const auto& [item_id, counts] : items) {
            if (counts.purchases > 0) {
                auto& set = sets[out_key];
                set.query_key = out_key;
                set.items.insert(item_id);
            }
        }
    }
    // Drop keys with no purchases at all.
    for (auto it = sets.begin(); it != sets.end();) {
        it = it->second.items.empty() ? sets.erase(it) : std::next(it);
    }
    return sets;
}

TripletBuild build_triplets(const EngagementAggregate& agg, const Catalog& catalog,
                            const SamplerConfig& config, bool personalized, uint64_t seed) {
    if (config.n_neg < 1) throw std::runtime_error("n_neg must be >= 1");

    // Enumeration keys carry the customer in personalized mode; the exclusion
    // scope may still merge positives across customers.
    auto enumeration = build_positive_sets(
        agg, personalized,
        personalized ? PositiveScope::per_query_customer : PositiveScope::per_query);
    const bool merge_exclusion =
        config.scope == PositiveScope::per_query ||
        (config.scope == PositiveScope::by_mode && !personalized);
    std::map<std::string, PositiveSet> per_query_union;
    if (merge_exclusion) {
        for (const auto& [key, set] : enumeration) {
            auto& u = per_query_union[key.query_text];
            u.query_key = QueryKey{key.query_text, ""};
            u.items.insert(set.items.begin(), set.items.end());
        }
    }

    InvertedIndex bm25_index;
    if (config.kind == SamplerKind::bm25) {
        bm25_index = build_inverted_index(catalog, config.bm25_k1, config.bm25_b);
    }

    std::vector<const std::pair<const QueryKey, PositiveSet>*> keys;
    keys.reserve(enumeration.size());
    for (const auto& entry : enumeration) keys.push_back(&entry);

    std::vector<std::vector<Triplet>> rows(keys.size());
    std::vector<SamplerStats> stats(keys.size());

    // Keys get independently derived seeds, so partitioning across threads
    // cannot change any draw.
    const auto n_keys = static_cast<ptrdiff_t>(keys.size());
#pragma omp parallel for schedule(dynamic)
    for (ptrdiff_t ki = 0; ki < n_keys; ++ki) {
        const auto& [key, pos_set] = *keys[static_cast<size_t>(ki)];
        auto& out = rows[static_cast<size_t>(ki)];
        auto& st = stats[static_cast<size_t>(ki)];

        const PositiveSet& exclusion =
            merge_exclusion ? per_query_union.at(key.query_text) : pos_set;

        uint64_t key_hash = fnv1a64(key.query_text + std::string(1, kFieldSep) + key.customer_id);
        Rng rng(derive_seed(seed, key_hash));

        std::vector<std::string> sorted_positives(pos_set.items.begin(), pos_set.items.end());
        std::sort(sorted_positives.begin(), sorted_positives.end());

        for (const auto& positive : sorted_positives) {
            if (!catalog.has(positive)) continue;  // aggregate already resolved these
            const Item& pos_item = catalog.item(positive);
            const double rho_value = rho(catalog, pos_item, exclusion, config.grandparent_level);

            for (size_t draw = 0; draw < config.n_neg; ++draw) {
                Triplet t;
                t.query_text = key.query_text;
                t.customer_id = personalized ? key.customer_id : "";
                t.positive = positive;
                t.sampler = config.kind;
                t.rho = rho_value;

                switch (config.kind) {
                    case SamplerKind::tb_hns: {
                        size_t attempts = 0;
                        t.negative = sample_tb_hns(catalog, pos_item, exclusion,
                                                   config.max_attempts, rng, &attempts,
                                                   config.grandparent_level);
                        st.attempts_total += attempts;
                        break;
                    }
                    case SamplerKind::random_uniform:
                        t.negative = sample_random(catalog, exclusion, rng);
                        ++st.attempts_total;
                        break;
                    case SamplerKind::bm25:
                        t.negative = sample_bm25_negative(bm25_index, key.query_text, exclusion,
                                                          config.pool_k, rng);
                        ++st.attempts_total;
                        break;
                    case SamplerKind::ance:
                        // Mined by the trainer against the current encoder.
                        t.negative = std::nullopt;
                        break;
                }
                st.record_rho(rho_value);
                if (t.negative) ++st.negatives_emitted;
                else ++st.none_returned;
                out.push_back(std::move(t));
            }
        }
    }

    TripletBuild build;
    build.stats.multi_path_items = catalog.multi_path_items;
    build.stats.depth1_items = catalog.depth1_items;
    for (size_t ki = 0; ki < keys.size(); ++ki) {
        auto& out = rows[ki];
        build.triplets.insert(build.triplets.end(), std::make_move_iterator(out.begin()),
                              std::make_move_iterator(out.end()));
        build.stats.attempts_total += stats[ki].attempts_total;
        build.stats.negatives_emitted += stats[ki].negatives_emitted;
        build.stats.none_returned += stats[ki].none_returned;
        for (size_t b = 0; b < build.stats.rho_histogram.size(); ++b) {
            build.stats.rho_histogram[b] += stats[ki].rho_histogram[b];
        }
    }

    std::sort(build.triplets.begin(), build.triplets.end(), [](const Triplet& a, const Triplet& b) {
        return std::tie(a.query_text, a.customer_id, a.positive, a.negative) <
               std::tie(b.query_text, b.customer_id, b.positive, b.negative);
    });
    return build;
}

namespace {

std::string serialize_query_side(const Triplet& t, const Catalog& catalog,
                                 const CustomerMap& customers) {
    if (!t.personalized()) return t.query_text;
    std::string side = t.query_text;
    side += kFieldSep;
    side += t.customer_id;
    side += kFieldSep;
    auto it = customers.find(t.customer_id);
    if (it != customers.end()) {
        std::string titles;
        for (const auto& id : it->second.purchase_history) {
            if (!catalog.has(id)) continue;
            if (!titles.empty()) titles += ' ';
            titles += catalog.item(id).title;
        }
        side += titles;
        side += kFieldSep;
        std::ostringstream feats;
        for (size_t i = 0; i < it->second.profile_features.size(); ++i) {
            if (i) feats << ',';
            feats << it->second.profile_features[i];
        }
        side += feats.str();
    } else {
        side += kFieldSep;
    }
    return side;
}

}  // namespace

void save_triplets(const std::vector<Triplet>& triplets, const Catalog& catalog,
                   const CustomerMap& customers, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << "query_side\tpositive_id\tnegative_id\tsampler_name\trho\n";
    char rho_buf[32];
    for (const auto& t : triplets) {
        std::snprintf(rho_buf, sizeof(rho_buf), "%.6f", t.rho);
        out << serialize_query_side(t, catalog, customers) << '\t' << t.positive << '\t'
            << (t.negative ? *t.negative : "") << '\t' << sampler_name(t.sampler) << '\t'
            << rho_buf << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<Triplet> load_triplets(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);

    std::vector<Triplet> triplets;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;  // header
        auto cols = split(line, '\t');
        if (cols.size() != 5) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected 5 columns");
        }
        Triplet t;
        auto side = split(cols[0], kFieldSep);
        t.query_text = side[0];
        if (side.size() > 1) t.customer_id = side[1];
        t.positive = cols[1];
        if (!cols[2].empty()) t.negative = cols[2];
        t.sampler = sampler_from_name(cols[3]);
        t.rho = std::stod(cols[4]);
        triplets.push_back(std::move(t));
    }
    return triplets;
}

void save_sampler_stats(const SamplerStats& stats, const std::string& path) {
    nlohmann::json j;
    j["attempts_total"] = stats.attempts_total;
    j["negatives_emitted"] = stats.negatives_emitted;
    j["none_returned"] = stats.none_returned;
    j["calls"] = stats.calls();
    j["rho_histogram"] = stats.rho_histogram;
    j["multi_path_items"] = stats.multi_path_items;
    j["depth1_items"] = stats.depth1_items;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << j.dump(2) << '\n';
}

}  // namespace semsearch
