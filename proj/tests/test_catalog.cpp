#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "semsearch/catalog.hpp"
#include "semsearch/rng.hpp"
#include "test_util.hpp"

using namespace semsearch;
using testutil::TempDir;

TEST_CASE("load_catalog builds shared leaf buckets") {
    TempDir tmp("catalog");
    const std::string path = tmp.file("three.jsonl");
    testutil::write_lines(path, {
        R"({"item_id":"a","title":"red drill","brand":"","attributes":{},"taxonomy_path":["tools","drill"]})",
        R"({"item_id":"b","title":"blue drill","brand":"","attributes":{},"taxonomy_path":["tools","drill"]})",
        R"({"item_id":"c","title":"saw","brand":"","attributes":{},"taxonomy_path":["tools","saw"]})",
    });
    auto cat = load_catalog(path);
    CHECK(cat.items.size() == 3);
    CHECK(cat.taxonomy.bucket.at("drill") == std::vector<std::string>{"a", "b"});
    CHECK(cat.taxonomy.bucket.at("tools").size() == 3);
    CHECK(cat.taxonomy.bucket.at(kRootCategory).size() == 3);
}

TEST_CASE("multi-path item is canonicalized to its first path") {
    TempDir tmp("catalog");
    const std::string path = tmp.file("multi.jsonl");
    testutil::write_lines(path, {
        R"({"item_id":"m","title":"rug","brand":"","attributes":{},"taxonomy_paths":[["home","rugs"],["outdoor","mats"]]})",
    });
    auto cat = load_catalog(path);
    CHECK(cat.items[0].taxonomy_path == std::vector<std::string>{"home", "rugs"});
    CHECK(cat.multi_path_items == 1);
    CHECK(cat.taxonomy.nodes.count("outdoor") == 0);
}

TEST_CASE("duplicate item_id is rejected by name") {
    TempDir tmp("catalog");
    const std::string path = tmp.file("dup.jsonl");
    testutil::write_lines(path, {
        R"({"item_id":"x","title":"a","brand":"","attributes":{},"taxonomy_path":["t"]})",
        R"({"item_id":"x","title":"b","brand":"","attributes":{},"taxonomy_path":["t"]})",
    });
    CHECK_THROWS_WITH_AS(load_catalog(path), doctest::Contains("x"), std::runtime_error);
}

TEST_CASE("malformed line and empty file fail with context") {
    TempDir tmp("catalog");
    const std::string bad = tmp.file("bad.jsonl");
    testutil::write_lines(bad, {R"({"item_id":"x")"});
    CHECK_THROWS_WITH_AS(load_catalog(bad), doctest::Contains(":1:"), std::runtime_error);

    const std::string empty = tmp.file("empty.jsonl");
    testutil::write_lines(empty, {});
    CHECK_THROWS_AS(load_catalog(empty), std::runtime_error);

    const std::string blank_title = tmp.file("blank.jsonl");
    testutil::write_lines(blank_title, {
        R"({"item_id":"x","title":"   ","brand":"","attributes":{},"taxonomy_path":["t"]})",
    });
    CHECK_THROWS_AS(load_catalog(blank_title), std::runtime_error);
}

TEST_CASE("conflicting parents for one category are rejected") {
    TempDir tmp("catalog");
    const std::string path = tmp.file("conflict.jsonl");
    testutil::write_lines(path, {
        R"({"item_id":"a","title":"x","brand":"","attributes":{},"taxonomy_path":["home","shelf"]})",
        R"({"item_id":"b","title":"y","brand":"","attributes":{},"taxonomy_path":["office","shelf"]})",
    });
    CHECK_THROWS_WITH_AS(load_catalog(path), doctest::Contains("shelf"), std::runtime_error);
}

TEST_CASE("parent_category walks one level up") {
    TempDir tmp("catalog");
    auto cat = load_catalog(testutil::fixture_catalog(tmp));
    CHECK(parent_category(cat.taxonomy, cat.item("c1")) == "flooring");

    SUBCASE("depth-1 item parents to the root sentinel") {
        const std::string path = tmp.file("depth1.jsonl");
        testutil::write_lines(path, {
            R"({"item_id":"t","title":"toolbox","brand":"","attributes":{},"taxonomy_path":["tools"]})",
        });
        auto flat = load_catalog(path);
        CHECK(parent_category(flat.taxonomy, flat.item("t")) == kRootCategory);
        CHECK(flat.depth1_items == 1);
    }

    SUBCASE("unknown category errors") {
        Item stray;
        stray.item_id = "zz";
        stray.title = "stray";
        stray.taxonomy_path = {"nowhere"};
        CHECK_THROWS_AS(parent_category(cat.taxonomy, stray), std::runtime_error);
    }
}

TEST_CASE("candidate_siblings equals a brute-force path-prefix scan") {
    TempDir tmp("catalog");
    auto cat = load_catalog(testutil::fixture_catalog(tmp));

    auto sibs = candidate_siblings(cat.taxonomy, cat.item("c1"));
    CHECK(sibs == std::vector<std::string>{"c1", "c2", "h1", "h2"});

    for (const auto& item : cat.items) {
        auto got = candidate_siblings(cat.taxonomy, item);
        std::vector<std::string> parent_prefix(item.taxonomy_path.begin(),
                                               item.taxonomy_path.end() - 1);
        auto expected = testutil::bucket_by_prefix_scan(cat.items, parent_prefix);
        CHECK(got == expected);
        CHECK(std::find(got.begin(), got.end(), item.item_id) != got.end());
    }
}

TEST_CASE("only child is its own sibling candidate") {
    TempDir tmp("catalog");
    const std::string path = tmp.file("single.jsonl");
    testutil::write_lines(path, {
        R"({"item_id":"solo","title":"lone lamp","brand":"","attributes":{},"taxonomy_path":["decor","lamps"]})",
        R"({"item_id":"other","title":"vase","brand":"","attributes":{},"taxonomy_path":["garden","vases"]})",
    });
    auto cat = load_catalog(path);
    CHECK(candidate_siblings(cat.taxonomy, cat.item("solo")) ==
          std::vector<std::string>{"solo"});
}

TEST_CASE("bucket containment and union invariants") {
    TempDir tmp("catalog");
    auto cat = load_catalog(testutil::fixture_catalog(tmp));
    const auto& tax = cat.taxonomy;

    std::set<std::string> leaf_union;
    for (const auto& item : cat.items) {
        const auto& leaf_bucket = tax.bucket.at(item.taxonomy_path.back());
        leaf_union.insert(leaf_bucket.begin(), leaf_bucket.end());
    }
    CHECK(leaf_union.size() == cat.items.size());

    for (const auto& [node, parent] : tax.parent) {
        const auto& parent_bucket = tax.bucket.at(parent);
        for (const auto& id : tax.bucket.at(node)) {
            CHECK(std::binary_search(parent_bucket.begin(), parent_bucket.end(), id));
        }
    }
}

TEST_CASE("load_catalog is deterministic over the same bytes") {
    TempDir tmp("catalog");
    const auto path = testutil::fixture_catalog(tmp);
    auto a = load_catalog(path);
    auto b = load_catalog(path);
    REQUIRE(a.items.size() == b.items.size());
    for (const auto& [node, bucket] : a.taxonomy.bucket) {
        CHECK(b.taxonomy.bucket.at(node) == bucket);
    }
}

TEST_CASE("aggregate_engagement matches a brute-force group-by") {
    TempDir tmp("agg");
    auto cat = load_catalog(testutil::fixture_catalog(tmp));

    std::vector<EngagementEvent> events;
    Rng rng(42);
    const std::vector<std::string> ids{"c1", "c2", "h1", "h2", "d1", "d2", "s1", "s2", "ghost"};
    const std::vector<std::string> queries{"carpet", "drill", "saw blade"};
    const std::vector<std::string> customers{"u1", "u2"};
    const EventKind kinds[] = {EventKind::click, EventKind::add_to_cart, EventKind::purchase};
    for (int i = 0; i < 20; ++i) {
        EngagementEvent ev;
        ev.customer_id = customers[rng.below(customers.size())];
        ev.query_text = queries[rng.below(queries.size())];
        ev.item_id = ids[rng.below(ids.size())];
        ev.kind = kinds[rng.below(3)];
        ev.timestamp = static_cast<int64_t>(rng.below(1000));
        events.push_back(ev);
    }

    auto agg = aggregate_engagement(events, cat);
    CHECK(agg.counted + agg.skipped == events.size());

    std::map<std::tuple<std::string, std::string, std::string>, std::array<int64_t, 3>> oracle;
    size_t oracle_skipped = 0;
    for (const auto& ev : events) {
        if (!cat.has(ev.item_id)) {
            ++oracle_skipped;
            continue;
        }
        auto& cell = oracle[{ev.query_text, ev.customer_id, ev.item_id}];
        cell[static_cast<size_t>(ev.kind)]++;
    }
    CHECK(agg.skipped == oracle_skipped);
    size_t cells_seen = 0;
    for (const auto& [key, items] : agg.cells) {
        for (const auto& [item, counts] : items) {
            ++cells_seen;
            auto it = oracle.find({key.query_text, key.customer_id, item});
            REQUIRE(it != oracle.end());
            CHECK(counts.clicks == it->second[0]);
            CHECK(counts.add_to_carts == it->second[1]);
            CHECK(counts.purchases == it->second[2]);
        }
    }
    CHECK(cells_seen == oracle.size());
}

TEST_CASE("repeat purchases count; click-only keys produce no positives") {
    TempDir tmp("agg");
    auto cat = load_catalog(testutil::fixture_catalog(tmp));
    std::vector<EngagementEvent> events{
        {"u1", "carpet", "c1", EventKind::purchase, 10},
        {"u1", "carpet", "c1", EventKind::purchase, 20},
        {"u2", "drill", "d1", EventKind::click, 30},
    };
    auto agg = aggregate_engagement(events, cat);
    CHECK(agg.cells.at({"carpet", "u1"}).at("c1").purchases == 2);
    CHECK(agg.cells.at({"drill", "u2"}).at("d1").purchases == 0);
    CHECK(agg.query_purchase_counts.count("drill") == 0);
    CHECK(agg.query_purchase_counts.at("carpet").at("c1") == 2);
}

TEST_CASE("customer file validation and history window") {
    TempDir tmp("cust");
    const std::string path = tmp.file("customers.jsonl");
    testutil::write_lines(path, {
        R"({"customer_id":"u1","profile_features":[0.5,0.5],"purchase_history":["a","b","c","d"]})",
    });
    auto customers = load_customers(path, 2, 3);
    CHECK(customers.at("u1").purchase_history == std::vector<std::string>{"b", "c", "d"});
    CHECK_THROWS_WITH_AS(load_customers(path, 5, 3), doctest::Contains("u1"),
                         std::runtime_error);
}

TEST_CASE("engagement log rejects bad rows") {
    TempDir tmp("log");
    const std::string path = tmp.file("events.tsv");
    testutil::write_lines(path, {"u1\tcarpet\tc1\tpurchase\t5", "u1\tcarpet\tc1\tview\t5"});
    CHECK_THROWS_WITH_AS(load_engagement_log(path), doctest::Contains(":2:"),
                         std::runtime_error);
}

TEST_CASE("fold_item_text lowercases and joins metadata") {
    Item item;
    item.item_id = "x";
    item.title = "Cordless Drill";
    item.brand = "VoltMax";
    item.attributes = {{"color", "Safety Yellow"}, {"size", "12V"}};
    CHECK(fold_item_text(item) == "cordless drill voltmax safety yellow 12v");

    Item bare;
    bare.item_id = "y";
    bare.title = "Plain Saw";
    CHECK(fold_item_text(bare) == "plain saw");
}
