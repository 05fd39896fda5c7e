#include "semsearch/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "encoder_internal.hpp"
#include "semsearch/io_util.hpp"
#include "semsearch/rng.hpp"
#include "semsearch/text.hpp"

namespace semsearch {

namespace {

constexpr uint32_t kParamsMagic = 0x504d4553;  // "SEMP"
constexpr uint32_t kParamsVersion = 1;

void check_finite(const std::vector<double>& v, const char* name) {
    for (double x : v) {
        if (!std::isfinite(x)) throw std::runtime_error(std::string("non-finite entry in ") + name);
    }
}

// pooled (len d_in) -> tanh(W^T pooled + b), W is d_in x d_out row-major.
std::vector<double> affine_tanh(const std::vector<double>& pooled, const Matrix& w,
                                const std::vector<double>& b) {
    if (pooled.size() != w.rows || b.size() != w.cols) {
        throw std::runtime_error("affine_tanh: dimension mismatch");
    }
    std::vector<double> out(b);
    for (size_t i = 0; i < w.rows; ++i) {
        const double x = pooled[i];
        if (x == 0.0) continue;
        const double* wr = w.row(i);
        for (size_t j = 0; j < w.cols; ++j) out[j] += x * wr[j];
    }
    for (double& v : out) v = std::tanh(v);
    return out;
}

}  // namespace

namespace detail {

TextForward forward_text(const ModelParams& params, Tower tower, const std::string& text) {
    TextForward f;
    f.tokens = tokenize_and_hash(text, params.dims.vocab_buckets);
    f.pooled.assign(params.dims.d_tok, 0.0);
    for (uint32_t t : f.tokens) {
        const double* row = params.token_embeddings.row(t);
        for (size_t j = 0; j < f.pooled.size(); ++j) f.pooled[j] += row[j];
    }
    if (!f.tokens.empty()) {
        const double inv = 1.0 / static_cast<double>(f.tokens.size());
        for (double& v : f.pooled) v *= inv;
    }
    if (tower == Tower::query) {
        f.out = affine_tanh(f.pooled, params.query_proj_w, params.query_proj_b);
    } else {
        f.out = affine_tanh(f.pooled, params.item_proj_w, params.item_proj_b);
    }
    return f;
}

QueryForward forward_query(const ModelParams& params, const std::string& query_text,
                           const CustomerContext* context, const Catalog& catalog,
                           EncodeStats* stats) {
    QueryForward f;
    f.query = forward_text(params, Tower::query, query_text);
    if (!params.has_fusion) {
        f.out = f.query.out;
        return f;
    }
    f.fused = true;
    f.profile.assign(params.dims.d_cust, 0.0);
    f.history_mean.assign(params.dims.d, 0.0);
    if (context) {
        if (context->profile_features.size() != params.dims.d_cust) {
            throw std::runtime_error("profile feature length does not match d_cust");
        }
        f.profile = context->profile_features;
        for (const auto& id : context->purchase_history) {
            if (!catalog.has(id)) {
                if (stats) ++stats->skipped_history_items;
                continue;
            }
            f.history.push_back(
                forward_text(params, Tower::item, fold_item_text(catalog.item(id))));
        }
        if (!f.history.empty()) {
            const double inv = 1.0 / static_cast<double>(f.history.size());
            for (const auto& h : f.history) {
                for (size_t j = 0; j < f.history_mean.size(); ++j) {
                    f.history_mean[j] += h.out[j] * inv;
                }
            }
        }
    }
    f.fusion_in.reserve(params.fusion_in_dim());
    f.fusion_in.insert(f.fusion_in.end(), f.query.out.begin(), f.query.out.end());
    f.fusion_in.insert(f.fusion_in.end(), f.profile.begin(), f.profile.end());
    f.fusion_in.insert(f.fusion_in.end(), f.history_mean.begin(), f.history_mean.end());
    f.out = affine_tanh(f.fusion_in, params.fusion_w, params.fusion_b);
    return f;
}

}  // namespace detail

void ModelParams::validate() const {
    const auto& d = dims;
    if (d.vocab_buckets < 1 || d.d_tok < 1 || d.d < 1 || d.d_cust < 1) {
        throw std::runtime_error("model dims must be positive");
    }
    auto check_shape = [](const Matrix& m, size_t r, size_t c, const char* name) {
        if (m.rows != r || m.cols != c || m.a.size() != r * c) {
            throw std::runtime_error(std::string("bad shape for ") + name);
        }
        check_finite(m.a, name);
    };
    check_shape(token_embeddings, d.vocab_buckets, d.d_tok, "token_embeddings");
    check_shape(query_proj_w, d.d_tok, d.d, "query_proj_w");
    check_shape(item_proj_w, d.d_tok, d.d, "item_proj_w");
    if (query_proj_b.size() != d.d || item_proj_b.size() != d.d) {
        throw std::runtime_error("bad projection bias length");
    }
    check_finite(query_proj_b, "query_proj_b");
    check_finite(item_proj_b, "item_proj_b");
    if (has_fusion) {
        check_shape(fusion_w, fusion_in_dim(), d.d, "fusion_w");
        if (fusion_b.size() != d.d) throw std::runtime_error("bad fusion bias length");
        check_finite(fusion_b, "fusion_b");
    } else if (fusion_w.rows != 0 || !fusion_b.empty()) {
        throw std::runtime_error("fusion tensors present on a non-fusion model");
    }
}

ModelParams init_params(const ModelDims& dims, bool with_fusion, uint64_t seed) {
    ModelParams p;
    p.dims = dims;
    p.has_fusion = with_fusion;

    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims.d_tok));
    auto fill = [&](Matrix& m, size_t r, size_t c) {
        m = Matrix(r, c);
        for (double& v : m.a) v = rng.uniform(-scale, scale);
    };
    auto fill_vec = [&](std::vector<double>& v, size_t n) {
        v.assign(n, 0.0);
        for (double& x : v) x = rng.uniform(-scale, scale);
    };
    fill(p.token_embeddings, dims.vocab_buckets, dims.d_tok);
    fill(p.query_proj_w, dims.d_tok, dims.d);
    fill_vec(p.query_proj_b, dims.d);
    fill(p.item_proj_w, dims.d_tok, dims.d);
    fill_vec(p.item_proj_b, dims.d);
    if (with_fusion) {
        fill(p.fusion_w, p.fusion_in_dim(), dims.d);
        fill_vec(p.fusion_b, dims.d);
    }
    return p;
}

std::vector<uint32_t> tokenize_and_hash(const std::string& text, size_t vocab_buckets) {
    if (vocab_buckets < 1) throw std::runtime_error("vocab_buckets must be >= 1");
    std::vector<uint32_t> out;
    for (const auto& tok : tokenize(text)) {
        out.push_back(static_cast<uint32_t>(fnv1a64(tok) % vocab_buckets));
    }
    return out;
}

std::vector<double> encode_text(const ModelParams& params, Tower tower, const std::string& text) {
    return detail::forward_text(params, tower, text).out;
}

std::vector<double> encode_item(const ModelParams& params, const Item& item) {
    return encode_text(params, Tower::item, fold_item_text(item));
}

std::vector<double> encode_query(const ModelParams& params, const std::string& query_text,
                                 const CustomerContext* context, const Catalog& catalog,
                                 EncodeStats* stats) {
    return detail::forward_query(params, query_text, context, catalog, stats).out;
}

double score(std::span<const double> q, std::span<const double> i) {
    return kernels::dot(q, i);
}

namespace {

Matrix encode_items_impl(const ModelParams& params, const Catalog& catalog, bool parallel) {
    Matrix out(catalog.items.size(), params.dims.d);
    const auto n = static_cast<ptrdiff_t>(catalog.items.size());
#pragma omp parallel for schedule(static) if (parallel)
    for (ptrdiff_t i = 0; i < n; ++i) {
        auto v = encode_item(params, catalog.items[static_cast<size_t>(i)]);
        double* row = out.row(static_cast<size_t>(i));
        std::copy(v.begin(), v.end(), row);
    }
    return out;
}

}  // namespace

Matrix encode_items_batch(const ModelParams& params, const Catalog& catalog) {
    return encode_items_impl(params, catalog, true);
}

Matrix encode_items_batch_serial(const ModelParams& params, const Catalog& catalog) {
    return encode_items_impl(params, catalog, false);
}

void save_params(const ModelParams& params, const std::string& path) {
    params.validate();
    BinaryWriter w(path);
    w.u32(kParamsMagic);
    w.u32(kParamsVersion);
    w.u8(params.has_fusion ? 1 : 0);
    w.u64(params.dims.vocab_buckets);
    w.u64(params.dims.d_tok);
    w.u64(params.dims.d);
    w.u64(params.dims.d_cust);
    w.f64_array(params.token_embeddings.a);
    w.f64_array(params.query_proj_w.a);
    w.f64_array(params.query_proj_b);
    w.f64_array(params.item_proj_w.a);
    w.f64_array(params.item_proj_b);
    if (params.has_fusion) {
        w.f64_array(params.fusion_w.a);
        w.f64_array(params.fusion_b);
    }
    w.close();
}

ModelParams load_params(const std::string& path) {
    BinaryReader r(path);
    if (r.u32() != kParamsMagic) throw std::runtime_error("not a model params file: " + path);
    if (r.u32() != kParamsVersion) throw std::runtime_error("unsupported params version in " + path);

    ModelParams p;
    p.has_fusion = r.u8() != 0;
    p.dims.vocab_buckets = r.u64();
    p.dims.d_tok = r.u64();
    p.dims.d = r.u64();
    p.dims.d_cust = r.u64();

    auto read_matrix = [&](size_t rows, size_t cols) {
        Matrix m(rows, cols);
        m.a = r.f64_array(rows * cols);
        return m;
    };
    p.token_embeddings = read_matrix(p.dims.vocab_buckets, p.dims.d_tok);
    p.query_proj_w = read_matrix(p.dims.d_tok, p.dims.d);
    p.query_proj_b = r.f64_array(p.dims.d);
    p.item_proj_w = read_matrix(p.dims.d_tok, p.dims.d);
    p.item_proj_b = r.f64_array(p.dims.d);
    if (p.has_fusion) {
        p.fusion_w = read_matrix(p.fusion_in_dim(), p.dims.d);
        p.fusion_b = r.f64_array(p.dims.d);
    }
    r.expect_eof();
    p.validate();
    return p;
}

}  // namespace semsearch
