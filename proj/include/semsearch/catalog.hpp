#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace semsearch {

// Sentinel parent of every top-level category. Not a valid category id in
// catalog files.
inline const std::string kRootCategory = "<root>";

struct Item {
    std::string item_id;
    std::string title;
    std::string brand;  // may be empty
    std::vector<std::pair<std::string, std::string>> attributes;
    std::vector<std::string> taxonomy_path;  // root-most first, leaf last
};

// Immutable category hierarchy with precomputed per-node item buckets.
// bucket[n] holds every item whose leaf category is n or a descendant of n,
// sorted by item_id; bucket[kRootCategory] is the whole catalog.
struct Taxonomy {
    std::unordered_set<std::string> nodes;
    std::unordered_map<std::string, std::string> parent;
    std::unordered_map<std::string, std::vector<std::string>> children;
    std::unordered_map<std::string, std::vector<std::string>> bucket;
};

struct Catalog {
    std::vector<Item> items;  // file order
    std::unordered_map<std::string, size_t> index_by_id;
    Taxonomy taxonomy;
    size_t multi_path_items = 0;  // records canonicalized to their first path
    size_t depth1_items = 0;      // leaf directly under the root sentinel

    bool has(const std::string& item_id) const { return index_by_id.count(item_id) > 0; }

    const Item& item(const std::string& item_id) const;
};

// Reads one JSON object per line: item_id, title, brand, attributes (object),
// and either taxonomy_path (array) or taxonomy_paths (array of arrays, first
// path wins). Throws with the offending line number or item id.
Catalog load_catalog(const std::string& path);

// Parent of the item's leaf category; kRootCategory for depth-1 paths.
const std::string& parent_category(const Taxonomy& taxonomy, const Item& item);

// All items under the item's parent category, the item itself included.
const std::vector<std::string>& candidate_siblings(const Taxonomy& taxonomy, const Item& item);

// "title brand attr-values", lowercased, single-space joined. The one text
// representation of an item used by both the encoder and the lexical index.
std::string fold_item_text(const Item& item);

enum class EventKind { click, add_to_cart, purchase };

const char* event_kind_name(EventKind k);

struct EngagementEvent {
    std::string customer_id;
    std::string query_text;
    std::string item_id;
    EventKind kind = EventKind::click;
    int64_t timestamp = 0;
};

// TSV columns: customer_id, query_text, item_id, event_kind, timestamp.
std::vector<EngagementEvent> load_engagement_log(const std::string& path);

struct QueryKey {
    std::string query_text;
    std::string customer_id;  // empty when aggregating per query only

    auto operator<=>(const QueryKey&) const = default;
};

struct EventCounts {
    int64_t clicks = 0;
    int64_t add_to_carts = 0;
    int64_t purchases = 0;
};

struct EngagementAggregate {
    // Ordered maps keep every downstream iteration deterministic.
    std::map<QueryKey, std::map<std::string, EventCounts>> cells;
    // query_text -> item -> purchase count, across all customers.
    std::map<std::string, std::map<std::string, int64_t>> query_purchase_counts;
    size_t counted = 0;
    size_t skipped = 0;  // events whose item_id did not resolve
};

EngagementAggregate aggregate_engagement(const std::vector<EngagementEvent>& events,
                                         const Catalog& catalog);

struct CustomerContext {
    std::string customer_id;
    std::vector<double> profile_features;
    std::vector<std::string> purchase_history;  // most recent last
};

using CustomerMap = std::map<std::string, CustomerContext>;

// JSONL with customer_id, profile_features, purchase_history. Feature vectors
// must have exactly feature_dim entries; histories are truncated to the most
// recent history_window ids.
CustomerMap load_customers(const std::string& path, size_t feature_dim, size_t history_window);

}  // namespace semsearch
