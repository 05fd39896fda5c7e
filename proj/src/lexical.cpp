#include "semsearch/lexical.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "semsearch/text.hpp"

namespace semsearch {

InvertedIndex build_inverted_index(const Catalog& catalog, double k1, double b) {
    if (catalog.items.empty()) throw std::runtime_error("cannot index an empty catalog");

    InvertedIndex index;
    index.k1 = k1;
    index.b = b;
    index.doc_count = catalog.items.size();

    uint64_t total_len = 0;
    for (const auto& item : catalog.items) {
        auto tokens = tokenize(fold_item_text(item));
        index.doc_len[item.item_id] = static_cast<uint32_t>(tokens.size());
        total_len += tokens.size();

        std::map<std::string, uint32_t> tf;
        for (const auto& tok : tokens) ++tf[tok];
        for (const auto& [term, count] : tf) {
            index.postings[term].push_back({item.item_id, count});
        }
    }
    for (auto& [term, plist] : index.postings) {
        std::sort(plist.begin(), plist.end(),
                  [](const Posting& a, const Posting& b2) { return a.item_id < b2.item_id; });
    }
    index.avg_doc_len = static_cast<double>(total_len) / static_cast<double>(index.doc_count);
    return index;
}

std::vector<std::pair<std::string, double>> bm25_topk(const InvertedIndex& index,
                                                      const std::string& query_text,
                                                      size_t k) {
    if (k < 1) throw std::runtime_error("k must be >= 1");

    auto tokens = tokenize(query_text);
    std::set<std::string> terms(tokens.begin(), tokens.end());

    std::unordered_map<std::string, double> scores;
    const double n_docs = static_cast<double>(index.doc_count);
    for (const auto& term : terms) {
        auto it = index.postings.find(term);
        if (it == index.postings.end()) continue;
        const auto& plist = it->second;
        const double df = static_cast<double>(plist.size());
        const double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
        for (const auto& post : plist) {
            const double tf = post.tf;
            const double dl = index.doc_len.at(post.item_id);
            const double denom =
                tf + index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_len);
            scores[post.item_id] += idf * tf * (index.k1 + 1.0) / denom;
        }
    }

    std::vector<std::pair<std::string, double>> ranked(scores.begin(), scores.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b2) {
        if (a.second != b2.second) return a.second > b2.second;
        return a.first < b2.first;
    });
    if (ranked.size() > k) ranked.resize(k);
    return ranked;
}

void save_inverted_index(const InvertedIndex& index, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << "bm25\t1\n";
    out << index.k1 << '\t' << index.b << '\t' << index.doc_count << '\n';
    std::map<std::string, uint32_t> sorted_len(index.doc_len.begin(), index.doc_len.end());
    out << sorted_len.size() << '\n';
    for (const auto& [id, len] : sorted_len) out << id << '\t' << len << '\n';
    out << index.postings.size() << '\n';
    for (const auto& [term, plist] : index.postings) {
        out << term << '\t' << plist.size();
        for (const auto& post : plist) out << '\t' << post.item_id << '\t' << post.tf;
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

InvertedIndex load_inverted_index(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);

    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "bm25" || version != 1) throw std::runtime_error("not a bm25 index file: " + path);

    InvertedIndex index;
    size_t n_docs = 0;
    in >> index.k1 >> index.b >> n_docs;
    index.doc_count = n_docs;

    size_t n_len = 0;
    in >> n_len;
    uint64_t total_len = 0;
    for (size_t i = 0; i < n_len; ++i) {
        std::string id;
        uint32_t len;
        in >> id >> len;
        index.doc_len[id] = len;
        total_len += len;
    }
    if (n_len != n_docs) throw std::runtime_error("doc_len table size mismatch in " + path);
    index.avg_doc_len = static_cast<double>(total_len) / static_cast<double>(n_docs);

    size_t n_terms = 0;
    in >> n_terms;
    for (size_t i = 0; i < n_terms; ++i) {
        std::string term;
        size_t n_post = 0;
        in >> term >> n_post;
        auto& plist = index.postings[term];
        plist.resize(n_post);
        for (auto& post : plist) in >> post.item_id >> post.tf;
    }
    if (!in) throw std::runtime_error("truncated index file: " + path);
    return index;
}

}  // namespace semsearch
