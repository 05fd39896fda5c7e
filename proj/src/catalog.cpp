#include "semsearch/catalog.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "semsearch/text.hpp"

namespace semsearch {

namespace {

using json = nlohmann::ordered_json;  // keeps attribute order as listed

[[noreturn]] void fail_line(const std::string& path, size_t line_no, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

std::vector<std::string> parse_path(const json& arr) {
    std::vector<std::string> path;
    for (const auto& node : arr) {
        if (!node.is_string()) throw std::runtime_error("taxonomy path entries must be strings");
        path.push_back(node.get<std::string>());
    }
    return path;
}

}  // namespace

const Item& Catalog::item(const std::string& item_id) const {
    auto it = index_by_id.find(item_id);
    if (it == index_by_id.end()) throw std::runtime_error("unknown item_id: " + item_id);
    return items[it->second];
}

Catalog load_catalog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open catalog: " + path);

    Catalog cat;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;

        json rec;
        try {
            rec = json::parse(line);
        } catch (const std::exception& e) {
            fail_line(path, line_no, std::string("malformed JSON: ") + e.what());
        }

        Item item;
        try {
            if (!rec.contains("item_id") || !rec["item_id"].is_string()) {
                throw std::runtime_error("missing item_id");
            }
            item.item_id = rec["item_id"].get<std::string>();
            if (!rec.contains("title") || !rec["title"].is_string()) {
                throw std::runtime_error("missing title");
            }
            item.title = rec["title"].get<std::string>();
            if (trim(item.title).empty()) throw std::runtime_error("empty title");
            if (rec.contains("brand")) item.brand = rec["brand"].get<std::string>();
            if (rec.contains("attributes")) {
                for (auto it = rec["attributes"].begin(); it != rec["attributes"].end(); ++it) {
                    item.attributes.emplace_back(it.key(), it.value().get<std::string>());
                }
            }

            const bool has_single = rec.contains("taxonomy_path");
            const bool has_multi = rec.contains("taxonomy_paths");
            if (has_single == has_multi) {
                throw std::runtime_error("need exactly one of taxonomy_path / taxonomy_paths");
            }
            if (has_single) {
                item.taxonomy_path = parse_path(rec["taxonomy_path"]);
            } else {
                const auto& paths = rec["taxonomy_paths"];
                if (!paths.is_array() || paths.empty()) {
                    throw std::runtime_error("taxonomy_paths must be a non-empty array");
                }
                // Canonicalize to the first-listed (primary) path.
                item.taxonomy_path = parse_path(paths[0]);
                if (paths.size() > 1) ++cat.multi_path_items;
            }
            if (item.taxonomy_path.empty()) throw std::runtime_error("empty taxonomy path");
        } catch (const std::exception& e) {
            fail_line(path, line_no, e.what());
        }

        if (cat.index_by_id.count(item.item_id)) {
            throw std::runtime_error("duplicate item_id: " + item.item_id);
        }

        // Extend the hierarchy, rejecting paths that would give a node two
        // different parents.
        auto& tax = cat.taxonomy;
        std::string prev = kRootCategory;
        for (const auto& node : item.taxonomy_path) {
            if (node == kRootCategory) fail_line(path, line_no, "reserved category id: " + node);
            auto [it, inserted] = tax.parent.emplace(node, prev);
            if (inserted) {
                tax.nodes.insert(node);
                tax.children[prev].push_back(node);
            } else if (it->second != prev) {
                fail_line(path, line_no,
                          "category '" + node + "' appears under both '" + it->second +
                              "' and '" + prev + "'");
            }
            prev = node;
        }
        if (item.taxonomy_path.size() == 1) ++cat.depth1_items;

        cat.index_by_id.emplace(item.item_id, cat.items.size());
        cat.items.push_back(std::move(item));
    }

    if (cat.items.empty()) throw std::runtime_error("empty catalog: " + path);

    // Bucket pass: every item lands in the bucket of each of its ancestors.
    auto& tax = cat.taxonomy;
    for (const auto& item : cat.items) {
        tax.bucket[kRootCategory].push_back(item.item_id);
        for (const auto& node : item.taxonomy_path) {
            tax.bucket[node].push_back(item.item_id);
        }
    }
    for (auto& [node, ids] : tax.bucket) {
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    }
    for (auto& [node, kids] : tax.children) {
        std::sort(kids.begin(), kids.end());
    }
    return cat;
}

const std::string& parent_category(const Taxonomy& taxonomy, const Item& item) {
    if (item.taxonomy_path.empty()) throw std::runtime_error("item has no taxonomy path: " + item.item_id);
    const std::string& leaf = item.taxonomy_path.back();
    auto it = taxonomy.parent.find(leaf);
    if (it == taxonomy.parent.end()) throw std::runtime_error("unknown category: " + leaf);
    return it->second;
}

const std::vector<std::string>& candidate_siblings(const Taxonomy& taxonomy, const Item& item) {
    const std::string& parent = parent_category(taxonomy, item);
    auto it = taxonomy.bucket.find(parent);
    if (it == taxonomy.bucket.end()) throw std::runtime_error("no bucket for category: " + parent);
    return it->second;
}

std::string fold_item_text(const Item& item) {
    std::string out = to_lower_ascii(item.title);
    auto append = [&out](const std::string& part) {
        if (part.empty()) return;
        if (!out.empty()) out.push_back(' ');
        out += to_lower_ascii(part);
    };
    append(item.brand);
    for (const auto& [key, value] : item.attributes) append(value);
    return out;
}

const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::click: return "click";
        case EventKind::add_to_cart: return "add_to_cart";
        case EventKind::purchase: return "purchase";
    }
    return "?";
}

std::vector<EngagementEvent> load_engagement_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open engagement log: " + path);

    std::vector<EngagementEvent> events;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cols = split(line, '\t');
        if (cols.size() != 5) fail_line(path, line_no, "expected 5 tab-separated columns");

        EngagementEvent ev;
        ev.customer_id = cols[0];
        ev.query_text = cols[1];
        ev.item_id = cols[2];
        if (cols[3] == "click") ev.kind = EventKind::click;
        else if (cols[3] == "add_to_cart") ev.kind = EventKind::add_to_cart;
        else if (cols[3] == "purchase") ev.kind = EventKind::purchase;
        else fail_line(path, line_no, "unknown event_kind: " + cols[3]);
        try {
            ev.timestamp = std::stoll(cols[4]);
        } catch (const std::exception&) {
            fail_line(path, line_no, "bad timestamp: " + cols[4]);
        }
        if (ev.timestamp < 0) fail_line(path, line_no, "negative timestamp");
        events.push_back(std::move(ev));
    }
    return events;
}

EngagementAggregate aggregate_engagement(const std::vector<EngagementEvent>& events,
                                         const Catalog& catalog) {
    EngagementAggregate agg;
    for (const auto& ev : events) {
        if (!catalog.has(ev.item_id)) {
            ++agg.skipped;
            continue;
        }
        ++agg.counted;
        auto& counts = agg.cells[QueryKey{ev.query_text, ev.customer_id}][ev.item_id];
        switch (ev.kind) {
            case EventKind::click: ++counts.clicks; break;
            case EventKind::add_to_cart: ++counts.add_to_carts; break;
            case EventKind::purchase:
                ++counts.purchases;
                ++agg.query_purchase_counts[ev.query_text][ev.item_id];
                break;
        }
    }
    return agg;
}

CustomerMap load_customers(const std::string& path, size_t feature_dim, size_t history_window) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open customer file: " + path);

    CustomerMap customers;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;

        json rec;
        try {
            rec = json::parse(line);
        } catch (const std::exception& e) {
            fail_line(path, line_no, std::string("malformed JSON: ") + e.what());
        }

        CustomerContext ctx;
        try {
            ctx.customer_id = rec.at("customer_id").get<std::string>();
            ctx.profile_features = rec.at("profile_features").get<std::vector<double>>();
            ctx.purchase_history = rec.at("purchase_history").get<std::vector<std::string>>();
        } catch (const std::exception& e) {
            fail_line(path, line_no, e.what());
        }
        if (ctx.profile_features.size() != feature_dim) {
            fail_line(path, line_no,
                      "customer " + ctx.customer_id + " has " +
                          std::to_string(ctx.profile_features.size()) + " features, expected " +
                          std::to_string(feature_dim));
        }
        if (ctx.purchase_history.size() > history_window) {
            // Most recent last; keep the tail.
            ctx.purchase_history.erase(
                ctx.purchase_history.begin(),
                ctx.purchase_history.end() - static_cast<ptrdiff_t>(history_window));
        }
        if (customers.count(ctx.customer_id)) {
            fail_line(path, line_no, "duplicate customer_id: " + ctx.customer_id);
        }
        customers.emplace(ctx.customer_id, std::move(ctx));
    }
    return customers;
}

}  // namespace semsearch
