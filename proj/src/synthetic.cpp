#include "semsearch/synthetic.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "semsearch/rng.hpp"

namespace semsearch {

namespace {

using json = nlohmann::ordered_json;

const char* kColors[] = {"red", "blue", "green", "black", "white", "gray", "bronze", "silver"};
const char* kMaterials[] = {"steel", "oak", "pine", "ceramic", "vinyl"};

std::string pad_id(const char* prefix, size_t n, int width = 6) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, n);
    return buf;
}

struct LeafInfo {
    std::vector<size_t> path_idx;           // indices per level
    std::vector<std::string> category_ids;  // root-most first
    // Sibling leaves share the broad group-context tokens and differ in one
    // differentiator word, so they are near-misses: a model that only learns
    // category context cannot rank within the group.
    std::string ctx_a, ctx_b;   // shared across the parent's leaves
    std::string differentiator; // unique per leaf within the parent
    std::string query_word;     // leaf-specific search term, absent from titles
    size_t section = 0;
    size_t first_item = 0;  // global item row range [first, first + items_per_leaf)

    std::string descriptor() const { return ctx_a + " " + ctx_b + " " + differentiator; }
    // Shoppers' wording overlaps the catalog only at the category level; the
    // leaf term itself has to be learned from engagement.
    std::string query_text() const { return query_word + " " + ctx_a; }
};

std::string parent_slug(size_t depth, const std::vector<size_t>& idx) {
    if (depth < 2) return "root";
    std::string joined;
    for (size_t l = 0; l + 1 < depth; ++l) {
        if (l) joined += 'x';
        joined += std::to_string(idx[l]);
    }
    return joined;
}

std::vector<LeafInfo> enumerate_leaves(const SyntheticSpec& spec) {
    std::vector<LeafInfo> leaves;
    const size_t n_leaves = [&] {
        size_t n = 1;
        for (size_t l = 0; l < spec.depth; ++l) n *= spec.branch;
        return n;
    }();
    leaves.reserve(n_leaves);

    std::vector<size_t> idx(spec.depth, 0);
    for (size_t leaf = 0; leaf < n_leaves; ++leaf) {
        LeafInfo info;
        info.path_idx = idx;
        info.section = idx[0];
        std::string cat = "cat";
        for (size_t l = 0; l < spec.depth; ++l) {
            cat += "_" + std::to_string(idx[l]);
            info.category_ids.push_back(cat);
        }
        const std::string slug = parent_slug(spec.depth, idx);
        info.ctx_a = "ga" + slug;
        info.ctx_b = "gb" + slug;
        info.differentiator = "dw" + slug + "n" + std::to_string(idx[spec.depth - 1]);
        info.query_word = "qw" + slug + "n" + std::to_string(idx[spec.depth - 1]);
        info.first_item = leaf * spec.items_per_leaf;
        leaves.push_back(std::move(info));

        for (size_t l = spec.depth; l-- > 0;) {
            if (++idx[l] < spec.branch) break;
            idx[l] = 0;
        }
    }
    return leaves;
}

}  // namespace

SyntheticFiles generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
    if (spec.branch < 1 || spec.depth < 1 || spec.items_per_leaf < 1 || spec.n_customers < 1 ||
        spec.n_queries < 1 || spec.feature_dim < 1) {
        throw std::runtime_error("synthetic spec counts must be >= 1");
    }
    if (spec.purchase_noise < 0.0 || spec.purchase_noise > 1.0 || spec.ambiguous_fraction < 0.0 ||
        spec.ambiguous_fraction > 1.0) {
        throw std::runtime_error("synthetic spec rates must be in [0,1]");
    }
    std::filesystem::create_directories(out_dir);

    Rng rng(spec.seed);
    auto leaves = enumerate_leaves(spec);
    const size_t n_leaves = leaves.size();
    const size_t n_items = n_leaves * spec.items_per_leaf;

    // Ambiguity pairs: one shared token planted into two leaves that live in
    // different top-level sections.
    struct Pair {
        size_t leaf_a, leaf_b;
        std::string token;
    };
    std::vector<Pair> pairs;
    std::vector<std::vector<std::string>> extra_tokens(n_leaves);
    if (spec.branch >= 2 && spec.ambiguous_fraction > 0.0) {
        const size_t leaves_per_section = n_leaves / spec.branch;
        // Capped and spread round-robin so no leaf collects a pile of tokens.
        const size_t n_pairs = std::min(spec.ambiguous_texts, n_leaves / 2);
        for (size_t j = 0; j < n_pairs; ++j) {
            const size_t sec_a = j % spec.branch;
            const size_t sec_b = (j + 1) % spec.branch;
            Pair p;
            p.leaf_a = sec_a * leaves_per_section + (j / spec.branch) % leaves_per_section;
            p.leaf_b = sec_b * leaves_per_section +
                       (j / spec.branch + leaves_per_section / 2) % leaves_per_section;
            p.token = "syn" + std::to_string(j);
            extra_tokens[p.leaf_a].push_back(p.token);
            extra_tokens[p.leaf_b].push_back(p.token);
            pairs.push_back(std::move(p));
        }
    }

    SyntheticFiles files;
    files.n_items = n_items;
    files.catalog_path = out_dir + "/catalog.jsonl";
    files.engagement_path = out_dir + "/engagement.tsv";
    files.customers_path = out_dir + "/customers.jsonl";

    {
        std::ofstream out(files.catalog_path);
        if (!out) throw std::runtime_error("cannot open for write: " + files.catalog_path);
        for (size_t leaf = 0; leaf < n_leaves; ++leaf) {
            const auto& info = leaves[leaf];
            for (size_t m = 0; m < spec.items_per_leaf; ++m) {
                const size_t g = info.first_item + m;
                std::string title = info.descriptor();
                for (const auto& tok : extra_tokens[leaf]) title += " " + tok;
                json rec;
                rec["item_id"] = pad_id("it", g);
                rec["title"] = title;
                rec["brand"] = "brand" + std::to_string(g % 7);
                rec["attributes"] = {{"color", kColors[g % std::size(kColors)]},
                                     {"material", kMaterials[g % std::size(kMaterials)]}};
                rec["taxonomy_path"] = info.category_ids;
                out << rec.dump() << '\n';
            }
        }
    }

    // Customers: home section decides profile one-hot and history bias.
    std::vector<size_t> home(spec.n_customers);
    std::vector<std::vector<size_t>> customers_by_section(spec.branch);
    {
        std::ofstream out(files.customers_path);
        if (!out) throw std::runtime_error("cannot open for write: " + files.customers_path);
        const size_t leaves_per_section = n_leaves / spec.branch;
        for (size_t u = 0; u < spec.n_customers; ++u) {
            home[u] = u % spec.branch;
            customers_by_section[home[u]].push_back(u);
            std::vector<double> profile(spec.feature_dim, 0.0);
            profile[home[u] % spec.feature_dim] = 1.0;

            json rec;
            rec["customer_id"] = pad_id("cust", u, 4);
            rec["profile_features"] = profile;
            std::vector<std::string> history;
            for (size_t h = 0; h < spec.history_length; ++h) {
                const size_t leaf =
                    home[u] * leaves_per_section + rng.below(std::max<size_t>(1, leaves_per_section));
                const size_t g = leaves[leaf].first_item + rng.below(spec.items_per_leaf);
                history.push_back(pad_id("it", g));
            }
            rec["purchase_history"] = history;
            out << rec.dump() << '\n';
        }
    }

    {
        std::ofstream out(files.engagement_path);
        if (!out) throw std::runtime_error("cannot open for write: " + files.engagement_path);

        // Within-leaf popularity is quadratically skewed toward low item
        // indices, giving the repeat-purchase concentration real logs show;
        // noise purchases land anywhere in the catalog.
        auto draw_item = [&](size_t leaf) {
            if (spec.purchase_noise > 0.0 && rng.unit() < spec.purchase_noise) {
                return pad_id("it", rng.below(n_items));
            }
            const double u = rng.unit();
            const auto offset =
                static_cast<size_t>(u * u * static_cast<double>(spec.items_per_leaf));
            return pad_id("it", leaves[leaf].first_item +
                                    std::min(offset, spec.items_per_leaf - 1));
        };
        auto emit = [&](const std::string& cust, const std::string& query, const std::string& item,
                        const char* kind, int64_t ts) {
            out << cust << '\t' << query << '\t' << item << '\t' << kind << '\t' << ts << '\n';
        };

        for (size_t g = 0; g < spec.n_queries; ++g) {
            const bool ambiguous = !pairs.empty() && rng.unit() < spec.ambiguous_fraction;
            std::string query_text;
            size_t customer = 0;
            size_t true_leaf = 0;
            if (ambiguous) {
                const auto& pair = pairs[rng.below(pairs.size())];
                query_text = pair.token;
                const size_t sec_a = leaves[pair.leaf_a].section;
                const size_t sec_b = leaves[pair.leaf_b].section;
                const size_t section = rng.below(2) == 0 ? sec_a : sec_b;
                const auto& pool = customers_by_section[section].empty()
                                       ? customers_by_section[sec_a]
                                       : customers_by_section[section];
                if (pool.empty()) {
                    customer = rng.below(spec.n_customers);
                } else {
                    customer = pool[rng.below(pool.size())];
                }
                true_leaf = home[customer] == sec_b ? pair.leaf_b : pair.leaf_a;
            } else {
                true_leaf = rng.below(n_leaves);
                query_text = leaves[true_leaf].query_text();
                customer = rng.below(spec.n_customers);
            }
            const std::string cust_id = pad_id("cust", customer, 4);

            for (size_t p = 0; p < spec.train_purchases; ++p) {
                emit(cust_id, query_text, draw_item(true_leaf), "purchase",
                     static_cast<int64_t>(rng.below(kTestStartTs)));
            }
            emit(cust_id, query_text, draw_item(true_leaf), "click",
                 static_cast<int64_t>(rng.below(kTestStartTs)));
            for (size_t p = 0; p < spec.test_purchases; ++p) {
                emit(cust_id, query_text, draw_item(true_leaf), "purchase",
                     kTestStartTs + static_cast<int64_t>(rng.below(kTestStartTs)));
            }
        }
    }
    return files;
}

Catalog generate_bench_catalog(size_t n_items, size_t bucket_size, uint64_t seed) {
    if (bucket_size < 1 || n_items < bucket_size || n_items % bucket_size != 0) {
        throw std::runtime_error("n_items must be a positive multiple of bucket_size");
    }
    Rng rng(seed);
    const size_t n_parents = n_items / bucket_size;
    const size_t leaves_per_parent = bucket_size % 5 == 0 ? 5 : 1;
    const size_t items_per_leaf = bucket_size / leaves_per_parent;

    Catalog cat;
    cat.items.reserve(n_items);
    auto& tax = cat.taxonomy;
    size_t g = 0;
    for (size_t p = 0; p < n_parents; ++p) {
        const std::string parent_id = "grp_" + std::to_string(p);
        tax.nodes.insert(parent_id);
        tax.parent[parent_id] = kRootCategory;
        tax.children[kRootCategory].push_back(parent_id);
        for (size_t l = 0; l < leaves_per_parent; ++l) {
            const std::string leaf_id = parent_id + "_leaf_" + std::to_string(l);
            tax.nodes.insert(leaf_id);
            tax.parent[leaf_id] = parent_id;
            tax.children[parent_id].push_back(leaf_id);
            for (size_t m = 0; m < items_per_leaf; ++m, ++g) {
                Item item;
                item.item_id = pad_id("b", g, 7);
                item.title = "widget grp" + std::to_string(p) + " leafv" + std::to_string(l) +
                             " " + kColors[rng.below(std::size(kColors))];
                item.brand = "brand" + std::to_string(g % 11);
                item.taxonomy_path = {parent_id, leaf_id};
                tax.bucket[parent_id].push_back(item.item_id);
                tax.bucket[leaf_id].push_back(item.item_id);
                tax.bucket[kRootCategory].push_back(item.item_id);
                cat.index_by_id.emplace(item.item_id, cat.items.size());
                cat.items.push_back(std::move(item));
            }
        }
    }
    // Fixed-width ids were appended in ascending order; buckets are already
    // sorted and unique.
    return cat;
}

}  // namespace semsearch
