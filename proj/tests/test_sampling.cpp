#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "semsearch/io_util.hpp"
#include "semsearch/sampling.hpp"
#include "semsearch/synthetic.hpp"
#include "test_util.hpp"

using namespace semsearch;
using testutil::TempDir;

namespace {

// In-memory catalog with one parent and a bucket of n items (plus one item in
// an unrelated branch so the catalog is never fully positive).
Catalog bucket_catalog(size_t n) {
    TempDir tmp("bucket");
    std::vector<std::string> lines;
    for (size_t i = 0; i < n; ++i) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      R"({"item_id":"p%03zu","title":"widget %zu","brand":"","attributes":{},"taxonomy_path":["top","mid","leaf"]})",
                      i, i);
        lines.emplace_back(buf);
    }
    lines.emplace_back(
        R"({"item_id":"zz_other","title":"elsewhere","brand":"","attributes":{},"taxonomy_path":["offside"]})");
    const std::string path = tmp.file("bucket.jsonl");
    testutil::write_lines(path, lines);
    return load_catalog(path);
}

PositiveSet make_positives(std::initializer_list<std::string> ids) {
    PositiveSet p;
    p.items.insert(ids.begin(), ids.end());
    return p;
}

}  // namespace

TEST_CASE("tb_hns returns nothing when the bucket is all positives") {
    auto cat = bucket_catalog(4);
    PositiveSet pos = make_positives({"p000", "p001", "p002", "p003"});
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        size_t attempts = 0;
        auto neg = sample_tb_hns(cat, cat.item("p000"), pos, 10, rng, &attempts);
        CHECK(!neg.has_value());
        CHECK(attempts == 10);
    }
}

TEST_CASE("tb_hns with one free candidate finds it") {
    auto cat = bucket_catalog(2);
    PositiveSet pos = make_positives({"p000"});
    Rng rng(2);
    size_t attempts = 0;
    auto neg = sample_tb_hns(cat, cat.item("p000"), pos, 10, rng, &attempts);
    REQUIRE(neg.has_value());
    CHECK(*neg == "p001");
}

TEST_CASE("tb_hns excludes the query item even when it is not in P") {
    auto cat = bucket_catalog(2);
    PositiveSet pos;  // empty on purpose
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        auto neg = sample_tb_hns(cat, cat.item("p000"), pos, 10, rng);
        REQUIRE(neg.has_value());
        CHECK(*neg != "p000");
    }
}

TEST_CASE("tb_hns empirical mean attempts tracks 1/(1-rho)") {
    // Bucket of 100 with 10 positives; the query item is inside P so the
    // exclusion set matches the rho computation.
    auto cat = bucket_catalog(100);
    PositiveSet pos;
    for (size_t i = 0; i < 10; ++i) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "p%03zu", i);
        pos.items.insert(buf);
    }
    const Item& query_item = cat.item("p000");
    CHECK(rho(cat, query_item, pos) == doctest::Approx(0.1));

    Rng rng(11);
    uint64_t total_attempts = 0;
    const size_t runs = 100000;
    for (size_t r = 0; r < runs; ++r) {
        size_t attempts = 0;
        auto neg = sample_tb_hns(cat, query_item, pos, 20, rng, &attempts);
        REQUIRE(neg.has_value());
        total_attempts += attempts;
    }
    const double mean = static_cast<double>(total_attempts) / static_cast<double>(runs);
    CHECK(mean == doctest::Approx(1.0 / 0.9).epsilon(0.05));
}

TEST_CASE("rho is the positive share of the bucket") {
    auto cat = bucket_catalog(8);
    CHECK(rho(cat, cat.item("p000"), make_positives({})) == 0.0);
    CHECK(rho(cat, cat.item("p000"),
              make_positives({"p000", "p001", "p002", "p003", "p004", "p005", "p006", "p007"})) ==
          1.0);
    CHECK(rho(cat, cat.item("p000"), make_positives({"p001", "p004", "p007"})) ==
          doctest::Approx(0.375));
}

TEST_CASE("fuzz: tb_hns output is always a non-positive sibling, absent iff all draws hit") {
    Rng meta(99);
    for (int instance = 0; instance < 300; ++instance) {
        const size_t n = 1 + meta.below(12);
        auto cat = bucket_catalog(n);
        PositiveSet pos;
        for (size_t i = 0; i < n; ++i) {
            if (meta.below(2) == 0) {
                char buf[8];
                std::snprintf(buf, sizeof(buf), "p%03zu", i);
                pos.items.insert(buf);
            }
        }
        const size_t qi = meta.below(n);
        char qbuf[8];
        std::snprintf(qbuf, sizeof(qbuf), "p%03zu", qi);
        const Item& query_item = cat.item(qbuf);
        const auto& bucket = candidate_siblings(cat.taxonomy, query_item);
        const size_t max_attempts = 1 + meta.below(8);

        const uint64_t seed = meta.next();
        Rng rng(seed);
        size_t attempts = 0;
        auto neg = sample_tb_hns(cat, query_item, pos, max_attempts, rng, &attempts);

        // Oracle: replay the identical draw sequence.
        Rng replay(seed);
        std::optional<std::string> expected;
        size_t replay_attempts = 0;
        for (size_t a = 0; a < max_attempts; ++a) {
            const std::string& draw = bucket[replay.below(bucket.size())];
            ++replay_attempts;
            if (draw != query_item.item_id && !pos.items.count(draw)) {
                expected = draw;
                break;
            }
        }
        if (!expected) replay_attempts = max_attempts;

        CHECK(neg == expected);
        CHECK(attempts == replay_attempts);
        if (neg) {
            CHECK(!pos.items.count(*neg));
            CHECK(*neg != query_item.item_id);
            CHECK(std::find(bucket.begin(), bucket.end(), *neg) != bucket.end());
        }
    }
}

TEST_CASE("sample_random avoids positives and is uniform over the complement") {
    auto cat = bucket_catalog(1);  // p000 + zz_other
    Rng rng(5);
    for (int trial = 0; trial < 64; ++trial) {
        CHECK(sample_random(cat, make_positives({"p000"}), rng) == "zz_other");
    }

    SUBCASE("fully positive catalog errors") {
        CHECK_THROWS_AS(sample_random(cat, make_positives({"p000", "zz_other"}), rng),
                        std::runtime_error);
    }

    SUBCASE("chi-square uniformity over the complement") {
        auto big = bucket_catalog(999);  // 1000 items total
        PositiveSet pos;
        for (size_t i = 0; i < 10; ++i) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "p%03zu", i);
            pos.items.insert(buf);
        }
        std::map<std::string, size_t> counts;
        Rng draw_rng(31);
        const size_t draws = 10000;
        for (size_t d = 0; d < draws; ++d) ++counts[sample_random(big, pos, draw_rng)];

        const size_t cells = big.items.size() - pos.items.size();
        const double expected = static_cast<double>(draws) / static_cast<double>(cells);
        double chi2 = 0.0;
        for (const auto& item : big.items) {
            if (pos.items.count(item.item_id)) {
                CHECK(counts.count(item.item_id) == 0);
                continue;
            }
            const double observed =
                counts.count(item.item_id) ? static_cast<double>(counts.at(item.item_id)) : 0.0;
            chi2 += (observed - expected) * (observed - expected) / expected;
        }
        // alpha = 0.01, df = cells - 1, z_0.99 = 2.3263
        const double critical = testutil::chi2_critical(static_cast<double>(cells - 1), 2.3263478740);
        CHECK(chi2 < critical);
    }
}

TEST_CASE("bm25 negative sampling stays inside the oracle pool") {
    TempDir tmp("bm25neg");
    std::vector<std::string> lines;
    Rng mk(7);
    const std::vector<std::string> vocab{"drill", "saw", "red", "blue", "kit", "pro"};
    for (int i = 0; i < 50; ++i) {
        std::string title;
        const size_t len = 2 + mk.below(4);
        for (size_t w = 0; w < len; ++w) {
            if (!title.empty()) title += ' ';
            title += vocab[mk.below(vocab.size())];
        }
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      R"({"item_id":"d%02d","title":"%s","brand":"","attributes":{},"taxonomy_path":["all"]})",
                      i, title.c_str());
        lines.emplace_back(buf);
    }
    const std::string path = tmp.file("c.jsonl");
    testutil::write_lines(path, lines);
    auto cat = load_catalog(path);
    auto index = build_inverted_index(cat);

    const std::string query = "red drill";
    auto pool = bm25_topk(index, query, 10);
    std::set<std::string> pool_ids;
    for (const auto& [id, s] : pool) pool_ids.insert(id);

    PositiveSet pos = make_positives({pool[0].first});
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        auto neg = sample_bm25_negative(index, query, pos, 10, rng);
        REQUIRE(neg.has_value());
        CHECK(pool_ids.count(*neg) == 1);
        CHECK(!pos.items.count(*neg));
    }

    SUBCASE("all top-k positive yields nothing") {
        PositiveSet all;
        for (const auto& id : pool_ids) all.items.insert(id);
        CHECK(!sample_bm25_negative(index, query, all, 10, rng).has_value());
    }
    SUBCASE("remainder of one is forced") {
        PositiveSet all_but_one;
        for (const auto& [id, s] : pool) {
            if (id != pool.back().first) all_but_one.items.insert(id);
        }
        auto neg = sample_bm25_negative(index, query, all_but_one, 10, rng);
        REQUIRE(neg.has_value());
        CHECK(*neg == pool.back().first);
    }
}

TEST_CASE("ance mining equals an exhaustive dot-product scan") {
    Rng rng(13);
    std::vector<std::pair<std::string, std::vector<double>>> embeddings;
    for (int i = 0; i < 30; ++i) {
        std::vector<double> v(8);
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        char buf[8];
        std::snprintf(buf, sizeof(buf), "v%02d", i);
        embeddings.emplace_back(buf, v);
    }
    auto ann = build_index(embeddings, IndexKind::exact, 0, 1);

    std::map<QueryKey, PositiveSet> positives;
    QueryKey key{"q", ""};
    positives[key].query_key = key;
    positives[key].items = {"v03", "v07", "v21"};

    std::vector<AnceQuery> queries;
    AnceQuery q;
    q.key = key;
    q.embedding.assign(8, 0.0);
    for (auto& x : q.embedding) x = rng.uniform(-1.0, 1.0);
    queries.push_back(q);

    auto mined = mine_ance_negatives(ann, queries, positives, 5);

    // Oracle: full scan, drop positives, argmax (ties by ascending id).
    std::vector<std::pair<std::string, double>> scored;
    for (const auto& [id, v] : embeddings) {
        if (positives[key].items.count(id)) continue;
        double s = 0.0;
        for (size_t j = 0; j < v.size(); ++j) s += v[j] * q.embedding[j];
        scored.emplace_back(id, s);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    REQUIRE(mined.at(key).has_value());
    CHECK(*mined.at(key) == scored.front().first);

    SUBCASE("fully positive pool yields nothing") {
        std::map<QueryKey, PositiveSet> all;
        all[key].query_key = key;
        for (const auto& [id, v] : embeddings) all[key].items.insert(id);
        auto none = mine_ance_negatives(ann, queries, all, 5);
        CHECK(!none.at(key).has_value());
    }
    SUBCASE("dimension mismatch errors") {
        AnceQuery bad = q;
        bad.embedding.resize(4);
        CHECK_THROWS_AS(mine_ance_negatives(ann, {bad}, positives, 5), std::runtime_error);
    }
}

TEST_CASE("build_triplets enumerates (key, positive) pairs") {
    TempDir tmp("triplets");
    auto cat = load_catalog(testutil::fixture_catalog(tmp));
    std::vector<EngagementEvent> events{
        {"u1", "carpet", "c1", EventKind::purchase, 10},
        {"u1", "carpet", "c2", EventKind::purchase, 11},
        {"u1", "carpet", "c1", EventKind::click, 12},
        {"u2", "drill", "d1", EventKind::purchase, 13},
        {"u2", "drill", "d1", EventKind::purchase, 14},
        {"u3", "drill", "d2", EventKind::purchase, 15},
    };
    auto agg = aggregate_engagement(events, cat);

    SamplerConfig cfg;
    cfg.kind = SamplerKind::tb_hns;

    SUBCASE("non-personalized merges customers per query") {
        auto build = build_triplets(agg, cat, cfg, false, 7);
        // (carpet,{c1,c2}) and (drill,{d1,d2}) -> 4 triplets.
        CHECK(build.triplets.size() == 4);
        CHECK(build.stats.calls() == 4);
        for (const auto& t : build.triplets) {
            CHECK(t.customer_id.empty());
            CHECK(t.query_text == (t.positive[0] == 'c' ? "carpet" : "drill"));
        }
        // Oracle: enumeration of (key, positive) pairs.
        auto sets = build_positive_sets(agg, false, PositiveScope::by_mode);
        size_t expected = 0;
        for (const auto& [key, set] : sets) expected += set.items.size();
        CHECK(build.triplets.size() == expected);
    }

    SUBCASE("personalized keys by (query, customer) and two negatives double the rows") {
        cfg.n_neg = 2;
        auto build = build_triplets(agg, cat, cfg, true, 7);
        // keys: (carpet,u1)x{c1,c2}, (drill,u2)x{d1}, (drill,u3)x{d2} -> 4 pairs x 2 draws.
        CHECK(build.triplets.size() == 8);
        bool saw_customer = false;
        for (const auto& t : build.triplets) saw_customer |= !t.customer_id.empty();
        CHECK(saw_customer);
    }

    SUBCASE("negatives never collide with the key's positive set") {
        auto build = build_triplets(agg, cat, cfg, false, 21);
        auto sets = build_positive_sets(agg, false, PositiveScope::by_mode);
        for (const auto& t : build.triplets) {
            REQUIRE(t.negative.has_value());
            CHECK(!sets.at({t.query_text, ""}).items.count(*t.negative));
        }
    }

    SUBCASE("ance rows defer their negatives") {
        cfg.kind = SamplerKind::ance;
        auto build = build_triplets(agg, cat, cfg, false, 7);
        for (const auto& t : build.triplets) CHECK(!t.negative.has_value());
        CHECK(build.stats.none_returned == build.triplets.size());
    }
}

TEST_CASE("seeded determinism: identical triplet file bytes") {
    TempDir tmp("det");
    SyntheticSpec spec;
    spec.branch = 3;
    spec.depth = 2;
    spec.items_per_leaf = 4;
    spec.n_customers = 10;
    spec.n_queries = 40;
    spec.seed = 123;
    auto files = generate_synthetic(spec, tmp.dir() + "/data");
    auto cat = load_catalog(files.catalog_path);
    auto customers = load_customers(files.customers_path, spec.feature_dim, 10);
    auto events = load_engagement_log(files.engagement_path);
    auto agg = aggregate_engagement(events, cat);

    SamplerConfig cfg;
    for (auto kind : {SamplerKind::tb_hns, SamplerKind::random_uniform, SamplerKind::bm25}) {
        cfg.kind = kind;
        auto b1 = build_triplets(agg, cat, cfg, true, 99);
        auto b2 = build_triplets(agg, cat, cfg, true, 99);
        const std::string p1 = tmp.file("t1.tsv"), p2 = tmp.file("t2.tsv");
        save_triplets(b1.triplets, cat, customers, p1);
        save_triplets(b2.triplets, cat, customers, p2);
        CHECK(read_file(p1) == read_file(p2));
        CHECK(b1.stats.attempts_total == b2.stats.attempts_total);

        auto loaded = load_triplets(p1);
        REQUIRE(loaded.size() == b1.triplets.size());
        for (size_t i = 0; i < loaded.size(); ++i) {
            CHECK(loaded[i].query_text == b1.triplets[i].query_text);
            CHECK(loaded[i].customer_id == b1.triplets[i].customer_id);
            CHECK(loaded[i].positive == b1.triplets[i].positive);
            CHECK(loaded[i].negative == b1.triplets[i].negative);
        }
    }
}

TEST_CASE("tb_hns draws stay inside the sibling scope on synthetic data") {
    TempDir tmp("scope");
    SyntheticSpec spec;
    spec.branch = 3;
    spec.depth = 3;
    spec.items_per_leaf = 3;
    spec.n_customers = 8;
    spec.n_queries = 30;
    spec.seed = 5;
    auto files = generate_synthetic(spec, tmp.dir() + "/data");
    auto cat = load_catalog(files.catalog_path);
    auto events = load_engagement_log(files.engagement_path);
    auto agg = aggregate_engagement(events, cat);

    SamplerConfig cfg;
    auto build = build_triplets(agg, cat, cfg, false, 3);
    size_t with_negative = 0;
    for (const auto& t : build.triplets) {
        if (!t.negative) continue;
        ++with_negative;
        const auto& bucket = candidate_siblings(cat.taxonomy, cat.item(t.positive));
        CHECK(std::binary_search(bucket.begin(), bucket.end(), *t.negative));
    }
    CHECK(with_negative > 0);
    CHECK(build.stats.negatives_emitted == with_negative);
    CHECK(build.stats.negatives_emitted + build.stats.none_returned == build.stats.calls());
}

TEST_CASE("sampler stats histogram bins rho") {
    SamplerStats stats;
    stats.record_rho(0.0);
    stats.record_rho(0.05);
    stats.record_rho(0.55);
    stats.record_rho(1.0);
    CHECK(stats.rho_histogram[0] == 2);
    CHECK(stats.rho_histogram[5] == 1);
    CHECK(stats.rho_histogram[9] == 1);
}
