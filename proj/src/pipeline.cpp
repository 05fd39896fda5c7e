#include "semsearch/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "semsearch/io_util.hpp"
#include "semsearch/text.hpp"

namespace semsearch {

namespace {

namespace fs = std::filesystem;

std::vector<size_t> parse_size_list(const std::string& value) {
    std::vector<size_t> out;
    for (const auto& part : split(value, ',')) {
        const auto p = trim(part);
        if (!p.empty()) out.push_back(std::stoul(p));
    }
    return out;
}

}  // namespace

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);

    PipelineConfig cfg;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "catalog") cfg.catalog_path = value;
            else if (key == "engagement") cfg.engagement_path = value;
            else if (key == "customers") cfg.customers_path = value;
            else if (key == "experiment") cfg.experiment = value;
            else if (key == "samplers") {
                cfg.samplers.clear();
                for (const auto& name : split(value, ',')) {
                    if (!trim(name).empty()) cfg.samplers.push_back(sampler_from_name(trim(name)));
                }
            } else if (key == "synthetic_branch") cfg.synthetic.branch = std::stoul(value);
            else if (key == "synthetic_depth") cfg.synthetic.depth = std::stoul(value);
            else if (key == "synthetic_items_per_leaf") cfg.synthetic.items_per_leaf = std::stoul(value);
            else if (key == "synthetic_customers") cfg.synthetic.n_customers = std::stoul(value);
            else if (key == "synthetic_queries") cfg.synthetic.n_queries = std::stoul(value);
            else if (key == "synthetic_noise") cfg.synthetic.purchase_noise = std::stod(value);
            else if (key == "synthetic_ambiguous_fraction") cfg.synthetic.ambiguous_fraction = std::stod(value);
            else if (key == "synthetic_history_length") cfg.synthetic.history_length = std::stoul(value);
            else if (key == "sampler_max_attempts") cfg.sampler.max_attempts = std::stoul(value);
            else if (key == "sampler_pool_k") cfg.sampler.pool_k = std::stoul(value);
            else if (key == "sampler_n_neg") cfg.sampler.n_neg = std::stoul(value);
            else if (key == "sampler_grandparent") cfg.sampler.grandparent_level = (value == "true" || value == "1");
            else if (key == "train_learning_rate") cfg.train.learning_rate = std::stod(value);
            else if (key == "train_epochs") cfg.train.epochs = std::stoul(value);
            else if (key == "train_batch_size") cfg.train.batch_size = std::stoul(value);
            else if (key == "train_in_batch_negatives") cfg.train.in_batch_negatives = (value == "true" || value == "1");
            else if (key == "ance_refresh_epochs") cfg.train.ance_refresh_epochs = std::stoul(value);
            else if (key == "ance_pool_k") cfg.train.ance_pool_k = std::stoul(value);
            else if (key == "model_vocab_buckets") cfg.dims.vocab_buckets = std::stoul(value);
            else if (key == "model_d_tok") cfg.dims.d_tok = std::stoul(value);
            else if (key == "model_d") cfg.dims.d = std::stoul(value);
            else if (key == "model_d_cust") cfg.dims.d_cust = std::stoul(value);
            else if (key == "history_window") cfg.history_window = std::stoul(value);
            else if (key == "ann_kind") cfg.ann_kind = value == "ivf" ? IndexKind::ivf : IndexKind::exact;
            else if (key == "ann_clusters") cfg.ann_clusters = std::stoul(value);
            else if (key == "ann_nprobe") cfg.ann_nprobe = std::stoul(value);
            else if (key == "eval_ks") cfg.eval_ks = parse_size_list(value);
            else if (key == "eval_truth") {
                if (value == "purchases") cfg.truth_mode = TruthMode::purchases;
                else if (value == "leaf") cfg.truth_mode = TruthMode::majority_leaf;
                else throw std::runtime_error("eval_truth must be purchases or leaf");
            }
            else if (key == "eval_test_start_ts") cfg.test_start_ts = std::stoll(value);
            else if (key == "eval_specificity_threshold") cfg.specificity_threshold = std::stod(value);
            else if (key == "eval_head_percentile") cfg.head_percentile = std::stod(value);
            else throw std::runtime_error("unknown key: " + key);
        } catch (const std::invalid_argument&) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad value for " + key);
        }
    }
    return cfg;
}

EventSplit split_events_by_time(const std::vector<EngagementEvent>& events, int64_t test_start_ts) {
    EventSplit split;
    for (const auto& ev : events) {
        (ev.timestamp < test_start_ts ? split.train : split.test).push_back(ev);
    }
    return split;
}

std::vector<EvalCase> build_eval_cases(const std::vector<EngagementEvent>& all_events,
                                       const std::vector<EngagementEvent>& test_events,
                                       const Catalog& catalog, bool personalized,
                                       TruthMode truth_mode) {
    std::map<std::string, int64_t> frequency;
    for (const auto& ev : all_events) ++frequency[ev.query_text];
    auto full_agg = aggregate_engagement(all_events, catalog);
    auto test_agg = aggregate_engagement(test_events, catalog);

    // Purchased items in the test window per key.
    std::map<QueryKey, std::map<std::string, int64_t>> purchases;
    for (const auto& [key, items] : test_agg.cells) {
        QueryKey out_key = personalized ? key : QueryKey{key.query_text, ""};
        for (const auto& [item_id, counts] : items) {
            if (counts.purchases > 0) purchases[out_key][item_id] += counts.purchases;
        }
    }

    std::vector<EvalCase> cases;
    for (const auto& [key, items] : purchases) {
        if (items.empty()) continue;
        EvalCase c;
        c.query_text = key.query_text;
        c.customer_id = key.customer_id;
        if (truth_mode == TruthMode::purchases) {
            for (const auto& [item_id, n] : items) c.truth.insert(item_id);
        } else {
            // Leaf category holding most of this key's purchases.
            std::map<std::string, int64_t> votes;
            for (const auto& [item_id, n] : items) {
                votes[catalog.item(item_id).taxonomy_path.back()] += n;
            }
            std::string leaf;
            int64_t best = -1;
            for (const auto& [node, n] : votes) {
                if (n > best) {
                    best = n;
                    leaf = node;
                }
            }
            const auto& bucket = catalog.taxonomy.bucket.at(leaf);
            c.truth.insert(bucket.begin(), bucket.end());
        }
        c.query_frequency = frequency.count(key.query_text) ? frequency.at(key.query_text) : 0;
        auto dist = full_agg.query_purchase_counts.find(key.query_text);
        if (dist != full_agg.query_purchase_counts.end()) c.purchase_distribution = dist->second;
        cases.push_back(std::move(c));
    }
    return cases;
}

namespace {

struct LoadedData {
    Catalog catalog;
    CustomerMap customers;
    std::vector<EngagementEvent> events;
};

LoadedData load_or_generate(const PipelineConfig& config, const std::string& out_dir) {
    LoadedData data;
    std::string catalog_path = config.catalog_path;
    std::string engagement_path = config.engagement_path;
    std::string customers_path = config.customers_path;
    if (catalog_path.empty()) {
        SyntheticSpec spec = config.synthetic;
        spec.seed = config.seed;
        auto files = generate_synthetic(spec, out_dir + "/data");
        catalog_path = files.catalog_path;
        engagement_path = files.engagement_path;
        customers_path = files.customers_path;
    }
    data.catalog = load_catalog(catalog_path);
    data.events = load_engagement_log(engagement_path);
    if (!customers_path.empty()) {
        data.customers =
            load_customers(customers_path, config.dims.d_cust, config.history_window);
    }
    return data;
}

struct TrainedModel {
    ModelParams params;
    AnnIndex index;
};

TrainedModel train_and_index(const LoadedData& data, const PipelineConfig& config,
                             const EngagementAggregate& train_agg, SamplerKind sampler,
                             TrainMode mode, const std::string& model_dir) {
    fs::create_directories(model_dir);

    SamplerConfig sampler_cfg = config.sampler;
    sampler_cfg.kind = sampler;
    const bool personalized = mode != TrainMode::non_personalized;
    auto build = build_triplets(train_agg, data.catalog, sampler_cfg, personalized, config.seed);
    save_triplets(build.triplets, data.catalog, data.customers, model_dir + "/triplets.tsv");
    save_sampler_stats(build.stats, model_dir + "/stats.json");

    TrainConfig train_cfg = config.train;
    train_cfg.mode = mode;
    train_cfg.seed = config.seed;
    if (sampler == SamplerKind::ance && !train_cfg.ance_refresh_epochs) {
        train_cfg.ance_refresh_epochs = 1;
    }
    std::vector<Triplet> per, nper;
    (personalized ? per : nper) = std::move(build.triplets);
    auto trained = train(data.catalog, data.customers, std::move(per), std::move(nper), train_cfg,
                         config.dims);
    if (trained.diverged) {
        throw std::runtime_error("training diverged for sampler " +
                                 std::string(sampler_name(sampler)));
    }
    save_params(trained.params, model_dir + "/params.bin");
    save_loss_reports(trained.reports, model_dir + "/loss.csv");

    Matrix vecs = encode_items_batch(trained.params, data.catalog);
    std::vector<std::pair<std::string, std::vector<double>>> embeddings;
    embeddings.reserve(data.catalog.items.size());
    for (size_t i = 0; i < data.catalog.items.size(); ++i) {
        embeddings.emplace_back(data.catalog.items[i].item_id,
                                std::vector<double>(vecs.row(i), vecs.row(i) + vecs.cols));
    }
    TrainedModel model;
    model.index = build_index(embeddings, config.ann_kind,
                              config.ann_kind == IndexKind::ivf ? config.ann_clusters : 0,
                              config.seed);
    save_index(model.index, model_dir + "/index.bin");
    model.params = std::move(trained.params);
    return model;
}

EvalOptions eval_options(const PipelineConfig& config) {
    EvalOptions opt;
    opt.ks = config.eval_ks;
    opt.nprobe = config.ann_kind == IndexKind::ivf
                     ? std::min(config.ann_nprobe, config.ann_clusters)
                     : 1;
    opt.specificity_threshold = config.specificity_threshold;
    opt.head_percentile = config.head_percentile;
    return opt;
}

}  // namespace

SamplerExperimentResult run_sampler_experiment(const PipelineConfig& config,
                                               const std::string& out_dir) {
    fs::create_directories(out_dir);
    LoadedData data = load_or_generate(config, out_dir);
    auto split = split_events_by_time(data.events, config.test_start_ts);
    auto train_agg = aggregate_engagement(split.train, data.catalog);
    auto cases = build_eval_cases(data.events, split.test, data.catalog, /*personalized=*/false,
                                  config.truth_mode);
    if (cases.empty()) throw std::runtime_error("experiment: no eval cases in the test window");

    const EvalOptions opt = eval_options(config);
    SamplerExperimentResult result;
    for (SamplerKind sampler : config.samplers) {
        const std::string name = sampler_name(sampler);
        const std::string model_dir = out_dir + "/" + name;
        TrainedModel model;
        try {
            model = train_and_index(data, config, train_agg, sampler,
                                    TrainMode::non_personalized, model_dir);
        } catch (const std::exception& e) {
            throw std::runtime_error("stage train[" + name + "]: " + e.what());
        }
        EvalReport report;
        try {
            report = evaluate_model(model.params, model.index, data.catalog, data.customers,
                                    cases, opt);
        } catch (const std::exception& e) {
            throw std::runtime_error("stage eval[" + name + "]: " + e.what());
        }
        write_file(model_dir + "/eval.json", eval_report_to_json(report, opt));
        result.recall[name] = report.recall_at;
    }

    // Comparison table, one sampler per row.
    std::ostringstream csv;
    csv << "sampler";
    for (size_t k : config.eval_ks) csv << ",recall@" << k;
    csv << '\n';
    char buf[32];
    for (SamplerKind sampler : config.samplers) {
        const std::string name = sampler_name(sampler);
        csv << name;
        for (size_t k : config.eval_ks) {
            std::snprintf(buf, sizeof(buf), ",%.6f", result.recall[name][k]);
            csv << buf;
        }
        csv << '\n';
    }
    result.comparison_csv_path = out_dir + "/comparison.csv";
    write_file(result.comparison_csv_path, csv.str());
    return result;
}

PersonalizationExperimentResult run_personalization_experiment(const PipelineConfig& config,
                                                               const std::string& out_dir) {
    fs::create_directories(out_dir);
    LoadedData data = load_or_generate(config, out_dir);
    if (data.customers.empty()) {
        throw std::runtime_error("personalization experiment needs a customer file");
    }
    auto split = split_events_by_time(data.events, config.test_start_ts);
    auto train_agg = aggregate_engagement(split.train, data.catalog);
    auto cases = build_eval_cases(data.events, split.test, data.catalog, /*personalized=*/true,
                                  config.truth_mode);
    if (cases.empty()) throw std::runtime_error("experiment: no eval cases in the test window");

    const EvalOptions opt = eval_options(config);
    SamplerKind sampler = config.sampler.kind;

    auto personalized = train_and_index(data, config, train_agg, sampler,
                                        TrainMode::personalized, out_dir + "/personalized");
    auto plain = train_and_index(data, config, train_agg, sampler, TrainMode::non_personalized,
                                 out_dir + "/non_personalized");

    auto report_per = evaluate_model(personalized.params, personalized.index, data.catalog,
                                     data.customers, cases, opt);
    auto report_nper =
        evaluate_model(plain.params, plain.index, data.catalog, data.customers, cases, opt);
    write_file(out_dir + "/personalized/eval.json", eval_report_to_json(report_per, opt));
    write_file(out_dir + "/non_personalized/eval.json", eval_report_to_json(report_nper, opt));

    PersonalizationExperimentResult result;
    result.recall_personalized = report_per.recall_at;
    result.recall_non_personalized = report_nper.recall_at;
    result.per_case_personalized = report_per.per_case_recall;
    result.per_case_non_personalized = report_nper.per_case_recall;
    try {
        result.significance =
            paired_t_test(result.per_case_non_personalized, result.per_case_personalized);
    } catch (const std::runtime_error&) {
        // Zero-variance differences; leave significance unset.
    }

    nlohmann::json j;
    for (const auto& [k, v] : result.recall_personalized) {
        j["personalized"]["recall_at"][std::to_string(k)] = v;
    }
    for (const auto& [k, v] : result.recall_non_personalized) {
        j["non_personalized"]["recall_at"][std::to_string(k)] = v;
    }
    j["n_cases"] = cases.size();
    if (result.significance) {
        j["t_statistic"] = result.significance->t;
        j["p_value"] = result.significance->p;
    } else {
        j["degenerate_differences"] = true;
    }
    result.report_path = out_dir + "/personalization.json";
    write_file(result.report_path, j.dump(2) + "\n");
    return result;
}

}  // namespace semsearch
