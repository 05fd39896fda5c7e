#include "semsearch/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "encoder_internal.hpp"
#include "semsearch/ann.hpp"
#include "semsearch/kernels.hpp"
#include "semsearch/rng.hpp"
#include "semsearch/text.hpp"

namespace semsearch {

using detail::QueryForward;
using detail::TextForward;

const char* train_mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::non_personalized: return "non_personalized";
        case TrainMode::personalized: return "personalized";
        case TrainMode::combined: return "combined";
    }
    return "?";
}

TrainMode train_mode_from_name(const std::string& name) {
    if (name == "non_personalized") return TrainMode::non_personalized;
    if (name == "personalized") return TrainMode::personalized;
    if (name == "combined") return TrainMode::combined;
    throw std::runtime_error("unknown train mode: " + name);
}

double mnrl_loss(double sim_qp, std::span<const double> sim_qn) {
    if (!std::isfinite(sim_qp)) throw std::runtime_error("mnrl_loss: non-finite similarity");
    double m = sim_qp;
    for (double s : sim_qn) {
        if (!std::isfinite(s)) throw std::runtime_error("mnrl_loss: non-finite similarity");
        m = std::max(m, s);
    }
    double z = std::exp(sim_qp - m);
    for (double s : sim_qn) z += std::exp(s - m);
    return m + std::log(z) - sim_qp;
}

namespace {

ModelParams zeros_like(const ModelParams& p) {
    ModelParams g;
    g.dims = p.dims;
    g.has_fusion = p.has_fusion;
    g.token_embeddings = Matrix(p.dims.vocab_buckets, p.dims.d_tok);
    g.query_proj_w = Matrix(p.dims.d_tok, p.dims.d);
    g.query_proj_b.assign(p.dims.d, 0.0);
    g.item_proj_w = Matrix(p.dims.d_tok, p.dims.d);
    g.item_proj_b.assign(p.dims.d, 0.0);
    if (p.has_fusion) {
        g.fusion_w = Matrix(p.fusion_in_dim(), p.dims.d);
        g.fusion_b.assign(p.dims.d, 0.0);
    }
    return g;
}

template <typename Fn>
void for_each_tensor(ModelParams& p, Fn&& fn) {
    fn(p.token_embeddings.a);
    fn(p.query_proj_w.a);
    fn(p.query_proj_b);
    fn(p.item_proj_w.a);
    fn(p.item_proj_b);
    if (p.has_fusion) {
        fn(p.fusion_w.a);
        fn(p.fusion_b);
    }
}

// Dense affine gradients for one tower plus the sparse token-row updates a
// node produced. Kept per node so the backward pass can run in parallel and
// still be reduced in a fixed order.
struct TowerGrad {
    Matrix w;
    std::vector<double> b;
    bool used = false;

    void ensure(size_t rows, size_t cols) {
        if (!used) {
            w = Matrix(rows, cols);
            b.assign(cols, 0.0);
            used = true;
        }
    }
};

struct NodeGrad {
    TowerGrad query, item, fusion;
    std::vector<std::pair<uint32_t, std::vector<double>>> token_rows;
};

// d(out) -> affine+tanh backward; appends token-row updates for this text.
void backward_text(const ModelParams& p, Tower tower, const TextForward& f,
                   const std::vector<double>& dout, NodeGrad& ng) {
    const Matrix& w = tower == Tower::query ? p.query_proj_w : p.item_proj_w;
    TowerGrad& tg = tower == Tower::query ? ng.query : ng.item;
    tg.ensure(w.rows, w.cols);

    std::vector<double> dpre(w.cols);
    for (size_t j = 0; j < w.cols; ++j) dpre[j] = dout[j] * (1.0 - f.out[j] * f.out[j]);

    for (size_t j = 0; j < w.cols; ++j) tg.b[j] += dpre[j];
    for (size_t i = 0; i < w.rows; ++i) {
        const double x = f.pooled[i];
        if (x == 0.0) continue;
        double* gw = tg.w.row(i);
        for (size_t j = 0; j < w.cols; ++j) gw[j] += x * dpre[j];
    }

    if (f.tokens.empty()) return;
    std::vector<double> drow(w.rows, 0.0);
    for (size_t i = 0; i < w.rows; ++i) {
        const double* wr = w.row(i);
        double s = 0.0;
        for (size_t j = 0; j < w.cols; ++j) s += wr[j] * dpre[j];
        drow[i] = s / static_cast<double>(f.tokens.size());
    }
    for (uint32_t tok : f.tokens) ng.token_rows.emplace_back(tok, drow);
}

void backward_query(const ModelParams& p, const QueryForward& f, const std::vector<double>& dout,
                    NodeGrad& ng) {
    if (!f.fused) {
        backward_text(p, Tower::query, f.query, dout, ng);
        return;
    }
    const Matrix& w = p.fusion_w;
    ng.fusion.ensure(w.rows, w.cols);

    std::vector<double> dpre(w.cols);
    for (size_t j = 0; j < w.cols; ++j) dpre[j] = dout[j] * (1.0 - f.out[j] * f.out[j]);
    for (size_t j = 0; j < w.cols; ++j) ng.fusion.b[j] += dpre[j];
    std::vector<double> dz(w.rows, 0.0);
    for (size_t i = 0; i < w.rows; ++i) {
        const double x = f.fusion_in[i];
        double* gw = ng.fusion.w.row(i);
        const double* wr = w.row(i);
        double s = 0.0;
        for (size_t j = 0; j < w.cols; ++j) {
            gw[j] += x * dpre[j];
            s += wr[j] * dpre[j];
        }
        dz[i] = s;
    }

    const size_t d = p.dims.d;
    std::vector<double> dq(dz.begin(), dz.begin() + static_cast<ptrdiff_t>(d));
    backward_text(p, Tower::query, f.query, dq, ng);
    // dz over the profile slice lands on input data, not parameters.
    if (!f.history.empty()) {
        std::vector<double> dh(dz.end() - static_cast<ptrdiff_t>(d), dz.end());
        const double inv = 1.0 / static_cast<double>(f.history.size());
        for (double& v : dh) v *= inv;
        for (const auto& hist : f.history) backward_text(p, Tower::item, hist, dh, ng);
    }
}

void accumulate_node(const NodeGrad& ng, ModelParams& grad) {
    auto add_tower = [](const TowerGrad& tg, Matrix& gw, std::vector<double>& gb) {
        if (!tg.used) return;
        for (size_t i = 0; i < gw.a.size(); ++i) gw.a[i] += tg.w.a[i];
        for (size_t j = 0; j < gb.size(); ++j) gb[j] += tg.b[j];
    };
    add_tower(ng.query, grad.query_proj_w, grad.query_proj_b);
    add_tower(ng.item, grad.item_proj_w, grad.item_proj_b);
    add_tower(ng.fusion, grad.fusion_w, grad.fusion_b);
    for (const auto& [row, update] : ng.token_rows) {
        double* g = grad.token_embeddings.row(row);
        for (size_t j = 0; j < update.size(); ++j) g[j] += update[j];
    }
}

const CustomerContext* lookup_context(const CustomerMap& customers, const Triplet& t) {
    if (!t.personalized()) return nullptr;
    auto it = customers.find(t.customer_id);
    return it == customers.end() ? nullptr : &it->second;
}

BatchResult batch_loss_impl(const ModelParams& params, const std::vector<const Triplet*>& batch,
                            const Catalog& catalog, const CustomerMap& customers,
                            bool in_batch_negatives, bool parallel) {
    if (batch.empty()) throw std::runtime_error("batch_loss: empty batch");
    const size_t n = batch.size();

    // Forward. Nodes: query side, positive item, optional explicit negative.
    std::vector<QueryForward> q_fwd(n);
    std::vector<TextForward> pos_fwd(n);
    std::vector<TextForward> neg_fwd(n);
    std::vector<char> has_neg(n, 0);

    const auto pn = static_cast<ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic) if (parallel)
    for (ptrdiff_t ti = 0; ti < pn; ++ti) {
        const auto i = static_cast<size_t>(ti);
        const Triplet& t = *batch[i];
        q_fwd[i] = detail::forward_query(params, t.query_text, lookup_context(customers, t),
                                         catalog, nullptr);
        pos_fwd[i] =
            detail::forward_text(params, Tower::item, fold_item_text(catalog.item(t.positive)));
        if (t.negative) {
            neg_fwd[i] =
                detail::forward_text(params, Tower::item, fold_item_text(catalog.item(*t.negative)));
            has_neg[i] = 1;
        }
    }

    // Negative sets per anchor: explicit negative plus other in-batch
    // positives with a different item id.
    struct NegRef {
        bool explicit_neg;
        size_t idx;  // into neg_fwd / pos_fwd
    };
    std::vector<std::vector<NegRef>> negs(n);
    size_t usable = 0;
    for (size_t i = 0; i < n; ++i) {
        if (has_neg[i]) negs[i].push_back({true, i});
        if (in_batch_negatives) {
            for (size_t u = 0; u < n; ++u) {
                if (u == i || batch[u]->positive == batch[i]->positive) continue;
                negs[i].push_back({false, u});
            }
        }
        if (!negs[i].empty()) ++usable;
    }
    if (usable == 0) throw std::runtime_error("batch_loss: no triplet has any negative");

    // Softmax losses and d(out) per node, accumulated serially.
    std::vector<std::vector<double>> dq(n), dpos(n), dneg(n);
    for (size_t i = 0; i < n; ++i) {
        dq[i].assign(params.dims.d, 0.0);
        dpos[i].assign(params.dims.d, 0.0);
        if (has_neg[i]) dneg[i].assign(params.dims.d, 0.0);
    }

    const double inv_usable = 1.0 / static_cast<double>(usable);
    double total_loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (negs[i].empty()) continue;
        const auto& q = q_fwd[i].out;
        const double sim_p = kernels::dot(q, pos_fwd[i].out);
        std::vector<double> sim_n(negs[i].size());
        for (size_t j = 0; j < negs[i].size(); ++j) {
            const auto& ref = negs[i][j];
            const auto& emb = ref.explicit_neg ? neg_fwd[ref.idx].out : pos_fwd[ref.idx].out;
            sim_n[j] = kernels::dot(q, emb);
        }

        double m = sim_p;
        for (double s : sim_n) m = std::max(m, s);
        const double ep = std::exp(sim_p - m);
        double z = ep;
        for (double s : sim_n) z += std::exp(s - m);
        total_loss += m + std::log(z) - sim_p;

        const double w_p = ep / z;
        // d loss / d sim_p = w_p - 1; d loss / d sim_j = w_j
        const double coef_p = (w_p - 1.0) * inv_usable;
        for (size_t d = 0; d < q.size(); ++d) {
            dq[i][d] += coef_p * pos_fwd[i].out[d];
            dpos[i][d] += coef_p * q[d];
        }
        for (size_t j = 0; j < negs[i].size(); ++j) {
            const auto& ref = negs[i][j];
            const double w_j = std::exp(sim_n[j] - m) / z;
            const double coef = w_j * inv_usable;
            auto& demb = ref.explicit_neg ? dneg[ref.idx] : dpos[ref.idx];
            const auto& emb = ref.explicit_neg ? neg_fwd[ref.idx].out : pos_fwd[ref.idx].out;
            for (size_t d = 0; d < q.size(); ++d) {
                dq[i][d] += coef * emb[d];
                demb[d] += coef * q[d];
            }
        }
    }

    // Backward per node, then a fixed-order reduction.
    std::vector<NodeGrad> node_grads(3 * n);
#pragma omp parallel for schedule(dynamic) if (parallel)
    for (ptrdiff_t ti = 0; ti < pn; ++ti) {
        const auto i = static_cast<size_t>(ti);
        backward_query(params, q_fwd[i], dq[i], node_grads[3 * i]);
        backward_text(params, Tower::item, pos_fwd[i], dpos[i], node_grads[3 * i + 1]);
        if (has_neg[i]) {
            backward_text(params, Tower::item, neg_fwd[i], dneg[i], node_grads[3 * i + 2]);
        }
    }

    BatchResult out;
    out.loss = total_loss * inv_usable;
    out.usable = usable;
    out.grad = zeros_like(params);
    for (const auto& ng : node_grads) accumulate_node(ng, out.grad);
    return out;
}

}  // namespace

BatchResult batch_loss(const ModelParams& params, const std::vector<const Triplet*>& batch,
                       const Catalog& catalog, const CustomerMap& customers,
                       bool in_batch_negatives) {
    return batch_loss_impl(params, batch, catalog, customers, in_batch_negatives, true);
}

BatchResult batch_loss_serial(const ModelParams& params, const std::vector<const Triplet*>& batch,
                              const Catalog& catalog, const CustomerMap& customers,
                              bool in_batch_negatives) {
    return batch_loss_impl(params, batch, catalog, customers, in_batch_negatives, false);
}

namespace {

double grad_l2(ModelParams& grad) {
    double s = 0.0;
    for_each_tensor(grad, [&](const std::vector<double>& t) {
        for (double v : t) s += v * v;
    });
    return std::sqrt(s);
}

void refresh_ance_negatives(std::vector<Triplet>& triplets, const ModelParams& params,
                            const Catalog& catalog, const CustomerMap& customers, size_t pool_k) {
    bool any = false;
    for (const auto& t : triplets) {
        if (t.sampler == SamplerKind::ance) {
            any = true;
            break;
        }
    }
    if (!any) return;

    std::vector<std::pair<std::string, std::vector<double>>> embeddings;
    embeddings.reserve(catalog.items.size());
    Matrix item_vecs = encode_items_batch(params, catalog);
    for (size_t i = 0; i < catalog.items.size(); ++i) {
        embeddings.emplace_back(catalog.items[i].item_id,
                                std::vector<double>(item_vecs.row(i), item_vecs.row(i) + item_vecs.cols));
    }
    AnnIndex ann = build_index(embeddings, IndexKind::exact, 0, 0);

    std::map<QueryKey, PositiveSet> positives;
    std::map<QueryKey, const Triplet*> representative;
    for (const auto& t : triplets) {
        if (t.sampler != SamplerKind::ance) continue;
        QueryKey key{t.query_text, t.customer_id};
        auto& set = positives[key];
        set.query_key = key;
        set.items.insert(t.positive);
        representative.emplace(key, &t);
    }
    std::vector<AnceQuery> queries;
    queries.reserve(representative.size());
    for (const auto& [key, t] : representative) {
        queries.push_back(
            {key, encode_query(params, t->query_text, lookup_context(customers, *t), catalog)});
    }
    auto mined = mine_ance_negatives(ann, queries, positives, pool_k);
    for (auto& t : triplets) {
        if (t.sampler != SamplerKind::ance) continue;
        t.negative = mined.at(QueryKey{t.query_text, t.customer_id});
    }
}

}  // namespace

TrainResult train(const Catalog& catalog, const CustomerMap& customers,
                  std::vector<Triplet> personalized, std::vector<Triplet> non_personalized,
                  const TrainConfig& config, const ModelDims& dims) {
    switch (config.mode) {
        case TrainMode::non_personalized:
            if (!personalized.empty()) {
                throw std::runtime_error("non_personalized mode given personalized triplets");
            }
            if (non_personalized.empty()) throw std::runtime_error("no triplets to train on");
            break;
        case TrainMode::personalized:
            if (!non_personalized.empty()) {
                throw std::runtime_error("personalized mode given non-personalized triplets");
            }
            if (personalized.empty()) throw std::runtime_error("no triplets to train on");
            break;
        case TrainMode::combined:
            if (personalized.empty() && non_personalized.empty()) {
                throw std::runtime_error("no triplets to train on");
            }
            break;
    }
    if (config.learning_rate <= 0.0) throw std::runtime_error("learning_rate must be > 0");
    if (config.batch_size < 1) throw std::runtime_error("batch_size must be >= 1");

    const bool with_fusion = config.mode != TrainMode::non_personalized;
    TrainResult result;
    result.params = init_params(dims, with_fusion, config.seed);

    // One pool; shuffling mixes the two sources uniformly in combined mode.
    std::vector<Triplet> pool = std::move(personalized);
    pool.insert(pool.end(), std::make_move_iterator(non_personalized.begin()),
                std::make_move_iterator(non_personalized.end()));

    std::vector<size_t> order(pool.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(config.seed, 0x5448554646ULL));

    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.ance_refresh_epochs && epoch % *config.ance_refresh_epochs == 0) {
            refresh_ance_negatives(pool, result.params, catalog, customers, config.ance_pool_k);
        }
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        size_t seen = 0;
        double grad_norm_sum = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            const size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<const Triplet*> batch;
            batch.reserve(end - start);
            bool any_negative = false;
            bool distinct_positives = false;
            for (size_t i = start; i < end; ++i) {
                batch.push_back(&pool[order[i]]);
                any_negative |= pool[order[i]].negative.has_value();
                distinct_positives |= pool[order[i]].positive != batch.front()->positive;
            }
            const bool usable_batch =
                any_negative || (config.in_batch_negatives && distinct_positives);
            if (!usable_batch) continue;  // nothing to contrast against

            BatchResult br = batch_loss(result.params, batch, catalog, customers,
                                        config.in_batch_negatives);
            if (!std::isfinite(br.loss)) {
                result.diverged = true;
                return result;
            }
            loss_sum += br.loss * static_cast<double>(br.usable);
            seen += br.usable;
            grad_norm_sum += grad_l2(br.grad);
            ++batches;

            const double lr = config.learning_rate;
            auto apply = [lr](std::vector<double>& dst, const std::vector<double>& src) {
                for (size_t i = 0; i < dst.size(); ++i) dst[i] -= lr * src[i];
            };
            auto& pp = result.params;
            const auto& gp = br.grad;
            apply(pp.token_embeddings.a, gp.token_embeddings.a);
            apply(pp.query_proj_w.a, gp.query_proj_w.a);
            apply(pp.query_proj_b, gp.query_proj_b);
            apply(pp.item_proj_w.a, gp.item_proj_w.a);
            apply(pp.item_proj_b, gp.item_proj_b);
            if (pp.has_fusion) {
                apply(pp.fusion_w.a, gp.fusion_w.a);
                apply(pp.fusion_b, gp.fusion_b);
            }
        }

        LossReport report;
        report.epoch = epoch;
        report.mean_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
        report.triplets_seen = seen;
        report.grad_norm = batches > 0 ? grad_norm_sum / static_cast<double>(batches) : 0.0;
        result.reports.push_back(report);
    }
    return result;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);

    TrainConfig cfg;
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
            if (key == "learning_rate") cfg.learning_rate = std::stod(value);
            else if (key == "epochs") cfg.epochs = std::stoul(value);
            else if (key == "batch_size") cfg.batch_size = std::stoul(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "mode") cfg.mode = train_mode_from_name(value);
            else if (key == "in_batch_negatives") cfg.in_batch_negatives = (value == "true" || value == "1");
            else if (key == "ance_refresh_epochs") cfg.ance_refresh_epochs = std::stoul(value);
            else if (key == "ance_pool_k") cfg.ance_pool_k = std::stoul(value);
            else throw std::runtime_error("unknown key: " + key);
        } catch (const std::invalid_argument&) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad value for " + key);
        }
    }
    return cfg;
}

void save_loss_reports(const std::vector<LossReport>& reports, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << "epoch,mean_loss,triplets_seen,grad_norm\n";
    char buf[128];
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%zu,%.9g\n", r.epoch, r.mean_loss,
                      r.triplets_seen, r.grad_norm);
        out << buf;
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace semsearch
