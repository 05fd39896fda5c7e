// semsearch: taxonomy-aware product retrieval pipeline.
// Subcommands: generate, ingest, index (build/query/build-ann), mine, train,
// build-ann, search, eval, bench, experiment.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include "CLI11.hpp"
#include "json.hpp"
#include "semsearch/bench.hpp"
#include "semsearch/io_util.hpp"
#include "semsearch/pipeline.hpp"
#include "semsearch/text.hpp"

namespace ss = semsearch;

namespace {

struct CustomerArgs {
    std::string path;
    size_t feature_dim = 8;
    size_t window = 10;

    ss::CustomerMap load() const {
        if (path.empty()) return {};
        return ss::load_customers(path, feature_dim, window);
    }
};

void add_customer_options(CLI::App* cmd, CustomerArgs& args) {
    cmd->add_option("--customers", args.path, "customer JSONL file");
    cmd->add_option("--feature-dim", args.feature_dim, "profile feature dimension");
    cmd->add_option("--history-window", args.window, "purchase history window");
}

int cmd_generate(const ss::SyntheticSpec& spec, const std::string& out_dir) {
    auto files = ss::generate_synthetic(spec, out_dir);
    std::cout << "wrote " << files.catalog_path << " (" << files.n_items << " items)\n"
              << "wrote " << files.engagement_path << "\n"
              << "wrote " << files.customers_path << "\n";
    return 0;
}

int cmd_ingest(const std::string& catalog_path, const std::string& engagement_path,
               const CustomerArgs& customer_args, const std::string& out_path) {
    auto catalog = ss::load_catalog(catalog_path);
    auto events = ss::load_engagement_log(engagement_path);
    auto customers = customer_args.load();
    auto agg = ss::aggregate_engagement(events, catalog);

    nlohmann::json j;
    j["items"] = catalog.items.size();
    j["taxonomy_nodes"] = catalog.taxonomy.nodes.size();
    j["multi_path_items"] = catalog.multi_path_items;
    j["depth1_items"] = catalog.depth1_items;
    j["events_counted"] = agg.counted;
    j["events_skipped"] = agg.skipped;
    j["query_customer_keys"] = agg.cells.size();
    j["distinct_queries"] = agg.query_purchase_counts.size();
    j["customers"] = customers.size();
    ss::write_file(out_path, j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_search(const std::string& index_path, const std::string& params_path,
               const std::string& catalog_path, const std::string& query,
               const std::string& customer_id, const CustomerArgs& customer_args, size_t k,
               size_t nprobe, double min_score) {
    auto index = ss::load_index(index_path);
    auto params = ss::load_params(params_path);
    auto catalog = ss::load_catalog(catalog_path);

    const ss::CustomerContext* ctx = nullptr;
    ss::CustomerMap customers;
    if (!customer_id.empty()) {
        customers = customer_args.load();
        auto it = customers.find(customer_id);
        if (it == customers.end()) {
            std::cerr << "warning: unknown customer " << customer_id
                      << ", searching without personalization\n";
        } else {
            ctx = &it->second;
        }
    }
    auto q = ss::encode_query(params, query, ctx, catalog);
    auto results = ss::search(index, q, k, nprobe);
    results = ss::filter_results(results, min_score, nullptr);
    for (const auto& [id, score] : results) {
        std::cout << id << '\t' << score << '\t'
                  << (catalog.has(id) ? catalog.item(id).title : "") << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"taxonomy-aware semantic product retrieval"};
    app.require_subcommand(1);

    // generate
    ss::SyntheticSpec spec;
    std::string gen_out = "data";
    auto* generate = app.add_subcommand("generate", "write synthetic catalog/engagement/customers");
    generate->add_option("--out", gen_out, "output directory");
    generate->add_option("--branch", spec.branch, "taxonomy branching factor");
    generate->add_option("--depth", spec.depth, "taxonomy depth");
    generate->add_option("--items-per-leaf", spec.items_per_leaf, "items per leaf category");
    generate->add_option("--customers", spec.n_customers, "number of customers");
    generate->add_option("--queries", spec.n_queries, "number of engagement groups");
    generate->add_option("--noise", spec.purchase_noise, "off-leaf purchase rate");
    generate->add_option("--ambiguous-fraction", spec.ambiguous_fraction,
                         "share of groups using an ambiguity token");
    generate->add_option("--history-length", spec.history_length, "history items per customer");
    generate->add_option("--feature-dim", spec.feature_dim, "profile feature dimension");
    generate->add_option("--seed", spec.seed, "generator seed");

    // ingest
    std::string catalog_path, engagement_path, out_path = "ingest_report.json";
    CustomerArgs ingest_customers;
    auto* ingest = app.add_subcommand("ingest", "validate inputs and report aggregates");
    ingest->add_option("--catalog", catalog_path)->required();
    ingest->add_option("--engagement", engagement_path)->required();
    add_customer_options(ingest, ingest_customers);
    ingest->add_option("--out", out_path, "summary JSON path");

    // index build / query / build-ann
    auto* index_cmd = app.add_subcommand("index", "lexical and ann index commands");
    index_cmd->require_subcommand(1);
    std::string idx_catalog, idx_out = "bm25.idx";
    double bm25_k1 = 1.2, bm25_b = 0.75;
    auto* index_build = index_cmd->add_subcommand("build", "build the bm25 inverted index");
    index_build->add_option("--catalog", idx_catalog)->required();
    index_build->add_option("--out", idx_out);
    index_build->add_option("--k1", bm25_k1);
    index_build->add_option("--b", bm25_b);

    std::string idxq_path, idxq_query;
    size_t idxq_k = 10;
    auto* index_query = index_cmd->add_subcommand("query", "query the bm25 index (TSV out)");
    index_query->add_option("--index", idxq_path)->required();
    index_query->add_option("--query", idxq_query)->required();
    index_query->add_option("-k,--k", idxq_k);

    std::string ann_catalog, ann_params, ann_out = "ann.idx", ann_kind = "exact";
    size_t ann_clusters = 16;
    uint64_t ann_seed = 1;
    auto add_build_ann = [&](CLI::App* parent) {
        auto* cmd = parent->add_subcommand("build-ann", "embed the catalog and build the ann index");
        cmd->add_option("--catalog", ann_catalog)->required();
        cmd->add_option("--params", ann_params)->required();
        cmd->add_option("--out", ann_out);
        cmd->add_option("--kind", ann_kind)->check(CLI::IsMember({"exact", "ivf"}));
        cmd->add_option("--clusters", ann_clusters);
        cmd->add_option("--seed", ann_seed);
        return cmd;
    };
    auto* index_build_ann = add_build_ann(index_cmd);
    auto* build_ann = add_build_ann(&app);

    // mine
    std::string mine_catalog, mine_engagement, mine_out = "triplets.tsv",
                mine_stats = "sampler_stats.json", mine_sampler = "tb_hns";
    CustomerArgs mine_customers;
    ss::SamplerConfig mine_cfg;
    bool mine_personalized = false;
    uint64_t mine_seed = 1;
    int64_t mine_max_ts = std::numeric_limits<int64_t>::max();
    auto* mine = app.add_subcommand("mine", "build training triplets with a negative sampler");
    mine->add_option("--catalog", mine_catalog)->required();
    mine->add_option("--engagement", mine_engagement)->required();
    add_customer_options(mine, mine_customers);
    mine->add_option("--sampler", mine_sampler)
        ->check(CLI::IsMember({"tb_hns", "random", "bm25", "ance"}));
    mine->add_option("--out", mine_out);
    mine->add_option("--stats", mine_stats);
    mine->add_option("--max-attempts", mine_cfg.max_attempts, "tb_hns rejection cap");
    mine->add_option("--pool-k", mine_cfg.pool_k, "bm25/ance pool size");
    mine->add_option("--n-neg", mine_cfg.n_neg, "negatives per positive");
    mine->add_flag("--grandparent", mine_cfg.grandparent_level, "sample one taxonomy level higher");
    mine->add_flag("--personalized", mine_personalized, "key positives by (query, customer)");
    mine->add_option("--seed", mine_seed);
    mine->add_option("--before-ts", mine_max_ts, "only use events with timestamp < this");

    // train
    std::string train_catalog, train_config_path, train_out = "params.bin", train_loss = "loss.csv";
    std::vector<std::string> train_triplet_paths;
    CustomerArgs train_customers;
    ss::ModelDims train_dims;
    auto* train_cmd = app.add_subcommand("train", "train the two-tower model");
    train_cmd->add_option("--catalog", train_catalog)->required();
    train_cmd->add_option("--triplets", train_triplet_paths, "triplet TSV (repeatable)")
        ->required();
    add_customer_options(train_cmd, train_customers);
    train_cmd->add_option("--config", train_config_path, "key=value training config");
    train_cmd->add_option("--out", train_out);
    train_cmd->add_option("--loss-csv", train_loss);
    train_cmd->add_option("--vocab-buckets", train_dims.vocab_buckets);
    train_cmd->add_option("--d-tok", train_dims.d_tok);
    train_cmd->add_option("--d", train_dims.d);
    train_cmd->add_option("--d-cust", train_dims.d_cust);

    // search
    std::string search_index, search_params, search_catalog, search_query, search_customer;
    CustomerArgs search_customers;
    size_t search_k = 10, search_nprobe = 1;
    double search_min_score = -std::numeric_limits<double>::infinity();
    auto* search_cmd = app.add_subcommand("search", "encode a query and search the ann index");
    search_cmd->add_option("--index", search_index)->required();
    search_cmd->add_option("--params", search_params)->required();
    search_cmd->add_option("--catalog", search_catalog)->required();
    search_cmd->add_option("--query", search_query)->required();
    search_cmd->add_option("--customer", search_customer, "customer id for personalization");
    add_customer_options(search_cmd, search_customers);
    search_cmd->add_option("-k,--k", search_k);
    search_cmd->add_option("--nprobe", search_nprobe);
    search_cmd->add_option("--min-score", search_min_score, "drop results below this score");

    // eval
    std::string eval_catalog, eval_engagement, eval_params, eval_index,
                eval_out = "eval_report.json";
    CustomerArgs eval_customers;
    ss::EvalOptions eval_opt;
    bool eval_personalized = false, eval_latency = false;
    int64_t eval_test_ts = ss::kTestStartTs;
    std::string eval_ks = "8,12,24,100";
    auto* eval_cmd = app.add_subcommand("eval", "offline metrics on the test window");
    eval_cmd->add_option("--catalog", eval_catalog)->required();
    eval_cmd->add_option("--engagement", eval_engagement)->required();
    eval_cmd->add_option("--params", eval_params)->required();
    eval_cmd->add_option("--index", eval_index)->required();
    add_customer_options(eval_cmd, eval_customers);
    eval_cmd->add_option("--ks", eval_ks, "comma-separated recall cutoffs");
    eval_cmd->add_option("--nprobe", eval_opt.nprobe);
    eval_cmd->add_option("--test-start-ts", eval_test_ts, "events at/after this define truth");
    std::string eval_truth = "purchases";
    eval_cmd->add_option("--truth", eval_truth, "truth from purchases or the majority leaf")
        ->check(CLI::IsMember({"purchases", "leaf"}));
    eval_cmd->add_option("--specificity-threshold", eval_opt.specificity_threshold);
    eval_cmd->add_option("--head-percentile", eval_opt.head_percentile);
    eval_cmd->add_flag("--personalized", eval_personalized, "key cases by (query, customer)");
    eval_cmd->add_flag("--measure-latency", eval_latency,
                       "include wall-clock p95 (non-reproducible)");
    eval_cmd->add_option("--out", eval_out);

    // bench
    std::string bench_sizes = "10000,100000", bench_samplers_arg = "tb_hns,bm25,random",
                bench_out = "sampler_bench.csv";
    size_t bench_bucket = 50, bench_trials = 2000;
    uint64_t bench_seed = 1;
    auto* bench_cmd = app.add_subcommand("bench", "per-negative sampler timing across catalog sizes");
    bench_cmd->add_option("--sizes", bench_sizes, "comma-separated catalog sizes");
    bench_cmd->add_option("--bucket", bench_bucket, "parent bucket size (held fixed)");
    bench_cmd->add_option("--samplers", bench_samplers_arg);
    bench_cmd->add_option("--trials", bench_trials);
    bench_cmd->add_option("--seed", bench_seed);
    bench_cmd->add_option("--out", bench_out);

    // experiment
    std::string exp_config, exp_out = "experiment";
    uint64_t exp_seed = 0;
    bool exp_seed_set = false;
    auto* experiment = app.add_subcommand("experiment", "full sampler or personalization study");
    experiment->add_option("--config", exp_config, "pipeline config file");
    experiment->add_option("--out", exp_out);
    auto* seed_opt = experiment->add_option("--seed", exp_seed, "override config seed");

    CLI11_PARSE(app, argc, argv);
    exp_seed_set = seed_opt->count() > 0;

    try {
        if (*generate) return cmd_generate(spec, gen_out);
        if (*ingest) return cmd_ingest(catalog_path, engagement_path, ingest_customers, out_path);

        if (*index_build) {
            auto catalog = ss::load_catalog(idx_catalog);
            auto index = ss::build_inverted_index(catalog, bm25_k1, bm25_b);
            ss::save_inverted_index(index, idx_out);
            std::cout << "indexed " << index.doc_count << " items, " << index.postings.size()
                      << " terms\n";
            return 0;
        }
        if (*index_query) {
            auto index = ss::load_inverted_index(idxq_path);
            for (const auto& [id, score] : ss::bm25_topk(index, idxq_query, idxq_k)) {
                std::cout << id << '\t' << score << '\n';
            }
            return 0;
        }
        if (*index_build_ann || *build_ann) {
            auto catalog = ss::load_catalog(ann_catalog);
            auto params = ss::load_params(ann_params);
            auto vecs = ss::encode_items_batch(params, catalog);
            std::vector<std::pair<std::string, std::vector<double>>> embeddings;
            embeddings.reserve(catalog.items.size());
            for (size_t i = 0; i < catalog.items.size(); ++i) {
                embeddings.emplace_back(
                    catalog.items[i].item_id,
                    std::vector<double>(vecs.row(i), vecs.row(i) + vecs.cols));
            }
            auto index = ss::build_index(
                embeddings, ann_kind == "ivf" ? ss::IndexKind::ivf : ss::IndexKind::exact,
                ann_clusters, ann_seed);
            ss::save_index(index, ann_out);
            std::cout << "indexed " << index.size() << " vectors (" << ann_kind << ")\n";
            return 0;
        }

        if (*mine) {
            auto catalog = ss::load_catalog(mine_catalog);
            auto events = ss::load_engagement_log(mine_engagement);
            if (mine_max_ts != std::numeric_limits<int64_t>::max()) {
                events = ss::split_events_by_time(events, mine_max_ts).train;
            }
            auto customers = mine_customers.load();
            auto agg = ss::aggregate_engagement(events, catalog);
            mine_cfg.kind = ss::sampler_from_name(mine_sampler);
            auto build = ss::build_triplets(agg, catalog, mine_cfg, mine_personalized, mine_seed);
            ss::save_triplets(build.triplets, catalog, customers, mine_out);
            ss::save_sampler_stats(build.stats, mine_stats);
            std::cout << "wrote " << build.triplets.size() << " triplets ("
                      << build.stats.negatives_emitted << " with negatives)\n";
            return 0;
        }

        if (*train_cmd) {
            auto catalog = ss::load_catalog(train_catalog);
            auto customers = train_customers.load();
            ss::TrainConfig cfg;
            if (!train_config_path.empty()) cfg = ss::load_train_config(train_config_path);
            std::vector<ss::Triplet> per, nper;
            for (const auto& p : train_triplet_paths) {
                for (auto& t : ss::load_triplets(p)) {
                    (t.personalized() ? per : nper).push_back(std::move(t));
                }
            }
            auto result = ss::train(catalog, customers, std::move(per), std::move(nper), cfg,
                                    train_dims);
            ss::save_params(result.params, train_out);
            ss::save_loss_reports(result.reports, train_loss);
            if (result.diverged) {
                std::cerr << "error: training diverged (non-finite loss)\n";
                return 1;
            }
            if (!result.reports.empty()) {
                std::cout << "final mean loss " << result.reports.back().mean_loss << " over "
                          << result.reports.size() << " epochs\n";
            }
            return 0;
        }

        if (*search_cmd) {
            return cmd_search(search_index, search_params, search_catalog, search_query,
                              search_customer, search_customers, search_k, search_nprobe,
                              search_min_score);
        }

        if (*eval_cmd) {
            auto catalog = ss::load_catalog(eval_catalog);
            auto events = ss::load_engagement_log(eval_engagement);
            auto customers = eval_customers.load();
            auto params = ss::load_params(eval_params);
            auto index = ss::load_index(eval_index);
            auto split = ss::split_events_by_time(events, eval_test_ts);
            auto cases = ss::build_eval_cases(events, split.test, catalog, eval_personalized,
                                              eval_truth == "leaf" ? ss::TruthMode::majority_leaf
                                                                   : ss::TruthMode::purchases);
            eval_opt.ks.clear();
            for (const auto& part : ss::split(eval_ks, ',')) {
                if (!part.empty()) eval_opt.ks.push_back(std::stoul(part));
            }
            eval_opt.measure_latency = eval_latency;
            auto report = ss::evaluate_model(params, index, catalog, customers, cases, eval_opt);
            ss::write_file(eval_out, ss::eval_report_to_json(report, eval_opt));
            std::cout << ss::eval_report_to_json(report, eval_opt);
            return 0;
        }

        if (*bench_cmd) {
            std::vector<size_t> sizes;
            for (const auto& part : ss::split(bench_sizes, ','))
                if (!part.empty()) sizes.push_back(std::stoul(part));
            std::vector<ss::SamplerKind> kinds;
            for (const auto& part : ss::split(bench_samplers_arg, ','))
                if (!part.empty()) kinds.push_back(ss::sampler_from_name(part));
            auto rows = ss::bench_samplers(sizes, bench_bucket, kinds, bench_trials, bench_seed);
            ss::save_bench_csv(rows, bench_out);
            for (const auto& r : rows) {
                std::cout << r.sampler << " n=" << r.catalog_size << " mean=" << r.mean_ns
                          << "ns p95=" << r.p95_ns << "ns\n";
            }
            return 0;
        }

        if (*experiment) {
            ss::PipelineConfig cfg;
            if (!exp_config.empty()) cfg = ss::load_pipeline_config(exp_config);
            if (exp_seed_set) cfg.seed = exp_seed;
            if (cfg.experiment == "samplers") {
                auto result = ss::run_sampler_experiment(cfg, exp_out);
                std::cout << ss::read_file(result.comparison_csv_path);
            } else if (cfg.experiment == "personalization") {
                auto result = ss::run_personalization_experiment(cfg, exp_out);
                std::cout << ss::read_file(result.report_path);
            } else {
                throw std::runtime_error("unknown experiment kind: " + cfg.experiment);
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
