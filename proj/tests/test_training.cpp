#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "semsearch/io_util.hpp"
#include "semsearch/metrics.hpp"
#include "semsearch/pipeline.hpp"
#include "semsearch/training.hpp"
#include "test_util.hpp"

using namespace semsearch;
using testutil::TempDir;

namespace {

struct Fixture {
    TempDir tmp{"train"};
    Catalog catalog;
    CustomerMap customers;

    Fixture() {
        catalog = load_catalog(testutil::fixture_catalog(tmp));
        const std::string path = tmp.file("customers.jsonl");
        testutil::write_lines(path, {
            R"({"customer_id":"u1","profile_features":[1.0,0.0],"purchase_history":["c1","c2"]})",
            R"({"customer_id":"u2","profile_features":[0.0,1.0],"purchase_history":["d1"]})",
        });
        customers = load_customers(path, 2, 10);
    }
};

Triplet make_triplet(const std::string& query, const std::string& pos,
                     std::optional<std::string> neg, const std::string& customer = "") {
    Triplet t;
    t.query_text = query;
    t.customer_id = customer;
    t.positive = pos;
    t.negative = std::move(neg);
    return t;
}

// Every parameter tensor as (name, pointer) pairs for the sweep below.
std::vector<std::pair<std::string, std::vector<double>*>> tensors(ModelParams& p) {
    std::vector<std::pair<std::string, std::vector<double>*>> out{
        {"token_embeddings", &p.token_embeddings.a}, {"query_proj_w", &p.query_proj_w.a},
        {"query_proj_b", &p.query_proj_b},           {"item_proj_w", &p.item_proj_w.a},
        {"item_proj_b", &p.item_proj_b},
    };
    if (p.has_fusion) {
        out.emplace_back("fusion_w", &p.fusion_w.a);
        out.emplace_back("fusion_b", &p.fusion_b);
    }
    return out;
}

}  // namespace

TEST_CASE("mnrl analytic values") {
    // Equal positive and single equal negative: ln 2.
    for (double s : {-3.0, 0.0, 1.7}) {
        std::vector<double> negs{s};
        CHECK(mnrl_loss(s, negs) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    // All-zero sims over N negatives: ln(N+1).
    for (size_t n : {1u, 2u, 5u, 31u}) {
        std::vector<double> negs(n, 0.0);
        CHECK(mnrl_loss(0.0, negs) == doctest::Approx(std::log(n + 1.0)).epsilon(1e-12));
    }
    // Direct formula spot check.
    {
        std::vector<double> negs{0.0, 1.0};
        const double expect =
            -std::log(std::exp(2.0) / (std::exp(2.0) + std::exp(0.0) + std::exp(1.0)));
        CHECK(mnrl_loss(2.0, negs) == doctest::Approx(expect).epsilon(1e-12));
    }
    // Empty negative set: no contrast, zero loss.
    CHECK(mnrl_loss(1.5, {}) == 0.0);
}

TEST_CASE("mnrl log-sum-exp equals the naive formula where it does not overflow") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const double sp = rng.uniform(-30.0, 30.0);
        std::vector<double> negs(1 + rng.below(6));
        for (auto& s : negs) s = rng.uniform(-30.0, 30.0);
        double denom = std::exp(sp);
        for (double s : negs) denom += std::exp(s);
        const double naive = -std::log(std::exp(sp) / denom);
        CHECK(mnrl_loss(sp, negs) == doctest::Approx(naive).epsilon(1e-12));
    }
    // Extreme sims stay finite.
    std::vector<double> huge{5000.0};
    CHECK(std::isfinite(mnrl_loss(-5000.0, huge)));
    CHECK(mnrl_loss(5000.0, std::vector<double>{-5000.0}) == doctest::Approx(0.0));
}

TEST_CASE("mnrl is monotone in its arguments") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const double sp = rng.uniform(-2.0, 2.0);
        std::vector<double> negs(1 + rng.below(4));
        for (auto& s : negs) s = rng.uniform(-2.0, 2.0);
        const double eps = 1e-6;
        const double base = mnrl_loss(sp, negs);
        CHECK(mnrl_loss(sp + eps, negs) < base);
        auto bumped = negs;
        bumped[rng.below(bumped.size())] += eps;
        CHECK(mnrl_loss(sp, bumped) > base);
    }
}

TEST_CASE("batch_loss rejects a batch with no usable triplet") {
    Fixture f;
    std::vector<Triplet> ts{make_triplet("carpet", "c1", std::nullopt)};
    std::vector<const Triplet*> batch{&ts[0]};
    auto params = init_params({.vocab_buckets = 64, .d_tok = 4, .d = 4, .d_cust = 2}, false, 1);
    CHECK_THROWS_AS(batch_loss(params, batch, f.catalog, f.customers, false),
                    std::runtime_error);
    // With in-batch negatives a second distinct positive rescues it.
    std::vector<Triplet> two{make_triplet("carpet", "c1", std::nullopt),
                             make_triplet("drill", "d1", std::nullopt)};
    std::vector<const Triplet*> batch2{&two[0], &two[1]};
    auto r = batch_loss(params, batch2, f.catalog, f.customers, true);
    CHECK(r.usable == 2);
    CHECK(r.loss > 0.0);
}

TEST_CASE("duplicated triplet leaves the mean loss unchanged") {
    Fixture f;
    auto params = init_params({.vocab_buckets = 64, .d_tok = 4, .d = 4, .d_cust = 2}, false, 2);
    std::vector<Triplet> one{make_triplet("carpet", "c1", "h1")};
    std::vector<Triplet> twice{one[0], one[0]};
    std::vector<const Triplet*> b1{&one[0]};
    std::vector<const Triplet*> b2{&twice[0], &twice[1]};
    for (bool in_batch : {false, true}) {
        const double l1 = batch_loss(params, b1, f.catalog, f.customers, in_batch).loss;
        const double l2 = batch_loss(params, b2, f.catalog, f.customers, in_batch).loss;
        CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
    }
}

TEST_CASE("gradients match central finite differences") {
    Fixture f;
    ModelDims dims{.vocab_buckets = 48, .d_tok = 4, .d = 4, .d_cust = 2};

    // 8 triplets mixing personalized and plain rows, explicit and missing
    // negatives.
    std::vector<Triplet> ts{
        make_triplet("soft carpet", "c1", "h1", "u1"),
        make_triplet("soft carpet", "c2", "h2", "u1"),
        make_triplet("drill", "d1", "s1", "u2"),
        make_triplet("drill bits", "d2", "s2"),
        make_triplet("saw", "s1", "d1"),
        make_triplet("plank", "h1", std::nullopt, "u2"),
        make_triplet("blade", "s2", "c1"),
        make_triplet("rug", "c2", "h2", "u1"),
    };
    std::vector<const Triplet*> batch;
    for (const auto& t : ts) batch.push_back(&t);

    for (bool fusion : {true, false}) {
        for (bool in_batch : {true, false}) {
            CAPTURE(fusion);
            CAPTURE(in_batch);
            auto params = init_params(dims, fusion, 7);
            auto result = batch_loss(params, batch, f.catalog, f.customers, in_batch);

            auto grad_tensors = tensors(result.grad);
            auto param_tensors = tensors(params);
            const double eps = 1e-5;
            size_t checked = 0;
            for (size_t ti = 0; ti < param_tensors.size(); ++ti) {
                auto& [name, tensor] = param_tensors[ti];
                for (size_t i = 0; i < tensor->size(); ++i) {
                    const double saved = (*tensor)[i];
                    (*tensor)[i] = saved + eps;
                    const double up =
                        batch_loss(params, batch, f.catalog, f.customers, in_batch).loss;
                    (*tensor)[i] = saved - eps;
                    const double down =
                        batch_loss(params, batch, f.catalog, f.customers, in_batch).loss;
                    (*tensor)[i] = saved;

                    const double fd = (up - down) / (2.0 * eps);
                    const double analytic = (*grad_tensors[ti].second)[i];
                    if (std::fabs(fd) < 1e-12 && std::fabs(analytic) < 1e-12) continue;
                    const double rel = std::fabs(analytic - fd) /
                                       std::max({1e-6, std::fabs(analytic), std::fabs(fd)});
                    if (rel >= 1e-4) {
                        CAPTURE(name);
                        CAPTURE(i);
                        CHECK(rel < 1e-4);
                    }
                    ++checked;
                }
            }
            CHECK(checked > 100);
        }
    }
}

TEST_CASE("parallel and serial batch_loss are bit-identical") {
    Fixture f;
    auto params = init_params({.vocab_buckets = 64, .d_tok = 8, .d = 8, .d_cust = 2}, true, 3);
    std::vector<Triplet> ts{
        make_triplet("soft carpet", "c1", "h1", "u1"),
        make_triplet("drill", "d1", "s1", "u2"),
        make_triplet("saw", "s1", "d2"),
        make_triplet("plank", "h2", "c2"),
    };
    std::vector<const Triplet*> batch;
    for (const auto& t : ts) batch.push_back(&t);

    auto a = batch_loss(params, batch, f.catalog, f.customers, true);
    auto b = batch_loss_serial(params, batch, f.catalog, f.customers, true);
    CHECK(a.loss == b.loss);
    CHECK(a.usable == b.usable);
    CHECK(a.grad.token_embeddings.a == b.grad.token_embeddings.a);
    CHECK(a.grad.query_proj_w.a == b.grad.query_proj_w.a);
    CHECK(a.grad.query_proj_b == b.grad.query_proj_b);
    CHECK(a.grad.item_proj_w.a == b.grad.item_proj_w.a);
    CHECK(a.grad.item_proj_b == b.grad.item_proj_b);
    CHECK(a.grad.fusion_w.a == b.grad.fusion_w.a);
    CHECK(a.grad.fusion_b == b.grad.fusion_b);
}

TEST_CASE("zero epochs returns the initialization") {
    Fixture f;
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.mode = TrainMode::non_personalized;
    std::vector<Triplet> ts{make_triplet("carpet", "c1", "h1")};
    ModelDims dims{.vocab_buckets = 64, .d_tok = 4, .d = 4, .d_cust = 2};
    auto result = train(f.catalog, f.customers, {}, ts, cfg, dims);
    auto fresh = init_params(dims, false, cfg.seed);
    CHECK(result.params.token_embeddings.a == fresh.token_embeddings.a);
    CHECK(result.reports.empty());
}

TEST_CASE("training descends on a separable toy problem") {
    Fixture f;
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.learning_rate = 0.5;
    cfg.batch_size = 4;
    cfg.mode = TrainMode::non_personalized;
    cfg.in_batch_negatives = false;
    std::vector<Triplet> ts{
        make_triplet("carpet", "c1", "d1"),
        make_triplet("carpet", "c2", "s1"),
        make_triplet("drill", "d1", "c1"),
        make_triplet("drill", "d2", "h2"),
    };
    ModelDims dims{.vocab_buckets = 128, .d_tok = 8, .d = 8, .d_cust = 2};
    auto result = train(f.catalog, f.customers, {}, ts, cfg, dims);
    REQUIRE(result.reports.size() == cfg.epochs);
    CHECK(result.reports.back().mean_loss < result.reports.front().mean_loss);
    CHECK(!result.diverged);
    for (const auto& r : result.reports) {
        CHECK(r.triplets_seen == ts.size());
        CHECK(std::isfinite(r.grad_norm));
    }
}

TEST_CASE("training is deterministic: same seed, same final bytes") {
    Fixture f;
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.mode = TrainMode::combined;
    std::vector<Triplet> per{make_triplet("soft carpet", "c1", "h1", "u1"),
                            make_triplet("drill", "d1", "s1", "u2")};
    std::vector<Triplet> nper{make_triplet("saw", "s1", "d2"),
                             make_triplet("plank", "h2", "c2")};
    ModelDims dims{.vocab_buckets = 64, .d_tok = 4, .d = 4, .d_cust = 2};

    auto r1 = train(f.catalog, f.customers, per, nper, cfg, dims);
    auto r2 = train(f.catalog, f.customers, per, nper, cfg, dims);
    const std::string p1 = f.tmp.file("m1.bin"), p2 = f.tmp.file("m2.bin");
    save_params(r1.params, p1);
    save_params(r2.params, p2);
    CHECK(read_file(p1) == read_file(p2));
}

TEST_CASE("mode/list consistency is enforced") {
    Fixture f;
    TrainConfig cfg;
    ModelDims dims{.vocab_buckets = 64, .d_tok = 4, .d = 4, .d_cust = 2};
    std::vector<Triplet> per{make_triplet("q", "c1", "h1", "u1")};
    std::vector<Triplet> nper{make_triplet("q", "c1", "h1")};

    cfg.mode = TrainMode::non_personalized;
    CHECK_THROWS_AS(train(f.catalog, f.customers, per, {}, cfg, dims), std::runtime_error);
    cfg.mode = TrainMode::personalized;
    CHECK_THROWS_AS(train(f.catalog, f.customers, {}, nper, cfg, dims), std::runtime_error);
    cfg.mode = TrainMode::combined;
    CHECK_THROWS_AS(train(f.catalog, f.customers, {}, {}, cfg, dims), std::runtime_error);
}

TEST_CASE("ance refresh mines negatives from the live model") {
    Fixture f;
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.mode = TrainMode::non_personalized;
    cfg.ance_refresh_epochs = 1;
    cfg.ance_pool_k = 4;
    std::vector<Triplet> ts;
    for (const char* q : {"carpet", "drill"}) {
        Triplet t = make_triplet(q, q[0] == 'c' ? "c1" : "d1", std::nullopt);
        t.sampler = SamplerKind::ance;
        ts.push_back(t);
    }
    ModelDims dims{.vocab_buckets = 64, .d_tok = 4, .d = 4, .d_cust = 2};
    auto result = train(f.catalog, f.customers, {}, ts, cfg, dims);
    REQUIRE(result.reports.size() == 2);
    // Negatives were filled in; losses reflect real contrast.
    CHECK(result.reports[0].triplets_seen == 2);
}

TEST_CASE("train config file round-trip") {
    TempDir tmp("cfg");
    const std::string path = tmp.file("train.cfg");
    testutil::write_lines(path, {
        "# comment",
        "learning_rate = 0.25",
        "epochs = 7",
        "batch_size = 3",
        "seed = 42",
        "mode = combined",
        "in_batch_negatives = false",
        "ance_refresh_epochs = 2",
    });
    auto cfg = load_train_config(path);
    CHECK(cfg.learning_rate == 0.25);
    CHECK(cfg.epochs == 7);
    CHECK(cfg.batch_size == 3);
    CHECK(cfg.seed == 42);
    CHECK(cfg.mode == TrainMode::combined);
    CHECK(cfg.in_batch_negatives == false);
    REQUIRE(cfg.ance_refresh_epochs.has_value());
    CHECK(*cfg.ance_refresh_epochs == 2);

    const std::string bad = tmp.file("bad.cfg");
    testutil::write_lines(bad, {"unknown_key = 1"});
    CHECK_THROWS_AS(load_train_config(bad), std::runtime_error);
}

TEST_CASE("training improves held-out recall on a small fixture") {
    TempDir tmp("recall");
    SyntheticSpec spec;
    spec.branch = 3;
    spec.depth = 2;
    spec.items_per_leaf = 6;
    spec.n_customers = 12;
    spec.n_queries = 100;
    spec.ambiguous_fraction = 0.0;
    spec.seed = 7;
    auto files = generate_synthetic(spec, tmp.dir() + "/data");
    auto catalog = load_catalog(files.catalog_path);
    auto customers = load_customers(files.customers_path, spec.feature_dim, 10);
    auto events = load_engagement_log(files.engagement_path);
    auto split = split_events_by_time(events, kTestStartTs);
    auto agg = aggregate_engagement(split.train, catalog);
    auto cases = build_eval_cases(events, split.test, catalog, false);
    REQUIRE(!cases.empty());

    SamplerConfig scfg;
    auto build = build_triplets(agg, catalog, scfg, false, 7);

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 1.0;
    cfg.batch_size = 16;
    cfg.seed = 7;
    cfg.mode = TrainMode::non_personalized;
    cfg.in_batch_negatives = false;
    ModelDims dims{.vocab_buckets = 2048, .d_tok = 16, .d = 16, .d_cust = 8};

    auto evaluate_with = [&](const ModelParams& params) {
        Matrix vecs = encode_items_batch(params, catalog);
        std::vector<std::pair<std::string, std::vector<double>>> embeddings;
        for (size_t i = 0; i < catalog.items.size(); ++i) {
            embeddings.emplace_back(catalog.items[i].item_id,
                                    std::vector<double>(vecs.row(i), vecs.row(i) + vecs.cols));
        }
        auto index = build_index(embeddings, IndexKind::exact, 0, 1);
        EvalOptions opt;
        opt.ks = {8};
        opt.segments = false;
        return evaluate_model(params, index, catalog, customers, cases, opt).recall_at.at(8);
    };

    const double before = evaluate_with(init_params(dims, false, cfg.seed));
    auto result = train(catalog, customers, {}, build.triplets, cfg, dims);
    const double after = evaluate_with(result.params);
    CHECK(after > before);
}
