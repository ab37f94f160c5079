// The ASP network: multi-head self-attention over the concatenated
// attribute/object token sequence, four projection MLPs into the shared
// attribute and object spaces, temperature-scaled cosine logits, the summed
// two-head cross-entropy loss, and the product-of-marginals prediction
// rules (plain and feasibility-masked).
//
// Token tables are frozen; only attention and MLP weights train.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "asp/error.hpp"
#include "asp/rng.hpp"
#include "asp/tensor.hpp"
#include "asp/vocab.hpp"

namespace asp {

struct ModelConfig {
    std::size_t attr_count = 0;
    std::size_t object_count = 0;
    std::size_t word_dim = 0;
    std::size_t image_dim = 0;
    std::size_t attr_space_dim = 512;
    std::size_t object_space_dim = 512;
    std::size_t mlp_depth = 2;
    std::size_t heads = 2;
    double temperature = 20.0;
    double dropout_p = 0.1;
    double layer_norm_eps = 1e-5;
    bool attention_residual = true;

    void validate() const {
        if (attr_count == 0 || object_count == 0)
            fail(ErrorCode::config_error, "model: empty attribute or object vocabulary");
        if (word_dim == 0 || image_dim == 0)
            fail(ErrorCode::config_error, "model: zero word or image dimension");
        if (heads == 0 || word_dim % heads != 0)
            fail(ErrorCode::config_error,
                 "model: word dimension " + std::to_string(word_dim) +
                     " not divisible by head count " + std::to_string(heads));
        if (mlp_depth == 0) fail(ErrorCode::config_error, "model: mlp_depth must be >= 1");
        if (temperature <= 0.0) fail(ErrorCode::config_error, "model: temperature must be > 0");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0))
            fail(ErrorCode::config_error, "model: dropout_p must lie in [0, 1)");
    }
};

// Linear -> LayerNorm -> ReLU -> Dropout between layers, plain Linear last.
struct MlpParams {
    std::vector<Tensor> weights;   // depth entries
    std::vector<Tensor> biases;    // depth entries
    std::vector<Tensor> ln_gains;  // depth-1 entries
    std::vector<Tensor> ln_biases; // depth-1 entries
};

struct AttentionParams {
    Tensor wq, wk, wv;      // d x d, sliced per head
    Tensor wo;              // d x d output projection
    Tensor wo_bias;         // d
    Tensor ln_gain, ln_bias;
    Tensor post_w;          // d x d linear after the norm
    Tensor post_b;          // d
};

struct ModelParams {
    ModelConfig config;
    Tensor attr_tokens;  // n x d_word, frozen
    Tensor obj_tokens;   // m x d_word, frozen
    AttentionParams attention;
    MlpParams image_to_attr;   // d_img  -> d_s
    MlpParams image_to_object; // d_img  -> d_o
    MlpParams text_to_attr;    // d_word -> d_s
    MlpParams text_to_object;  // d_word -> d_o

    std::vector<std::pair<std::string, Tensor*>> named_parameters(bool include_frozen = false) {
        std::vector<std::pair<std::string, Tensor*>> out;
        if (include_frozen) {
            out.push_back({"attr_tokens", &attr_tokens});
            out.push_back({"obj_tokens", &obj_tokens});
        }
        out.push_back({"attention.wq", &attention.wq});
        out.push_back({"attention.wk", &attention.wk});
        out.push_back({"attention.wv", &attention.wv});
        out.push_back({"attention.wo", &attention.wo});
        out.push_back({"attention.wo_bias", &attention.wo_bias});
        out.push_back({"attention.ln_gain", &attention.ln_gain});
        out.push_back({"attention.ln_bias", &attention.ln_bias});
        out.push_back({"attention.post_w", &attention.post_w});
        out.push_back({"attention.post_b", &attention.post_b});
        auto add_mlp = [&out](const std::string& prefix, MlpParams& mlp) {
            for (std::size_t i = 0; i < mlp.weights.size(); ++i) {
                out.push_back({prefix + ".w" + std::to_string(i), &mlp.weights[i]});
                out.push_back({prefix + ".b" + std::to_string(i), &mlp.biases[i]});
            }
            for (std::size_t i = 0; i < mlp.ln_gains.size(); ++i) {
                out.push_back({prefix + ".ln_gain" + std::to_string(i), &mlp.ln_gains[i]});
                out.push_back({prefix + ".ln_bias" + std::to_string(i), &mlp.ln_biases[i]});
            }
        };
        add_mlp("mlp_ai", image_to_attr);
        add_mlp("mlp_oi", image_to_object);
        add_mlp("mlp_ac", text_to_attr);
        add_mlp("mlp_oc", text_to_object);
        return out;
    }

    ModelParams clone() const {
        ModelParams copy = *this;
        auto named = copy.named_parameters(true);
        for (auto& [name, t] : named) *t = t->clone();
        return copy;
    }
};

namespace detail {

inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(Shape{fan_in, fan_out});
    for (auto& v : t.values()) v = rng.uniform(-limit, limit);
    return t;
}

inline std::size_t mlp_hidden(std::size_t in, std::size_t out) {
    return std::max<std::size_t>(1, (in + out) / 2);
}

inline MlpParams init_mlp(std::size_t in, std::size_t out, std::size_t depth, Rng& rng) {
    MlpParams mlp;
    const std::size_t hidden = mlp_hidden(in, out);
    for (std::size_t layer = 0; layer < depth; ++layer) {
        const std::size_t li = layer == 0 ? in : hidden;
        const std::size_t lo = layer + 1 == depth ? out : hidden;
        mlp.weights.push_back(glorot(li, lo, rng));
        mlp.biases.push_back(Tensor::zeros({lo}));
        if (layer + 1 < depth) {
            mlp.ln_gains.push_back(Tensor::ones({lo}));
            mlp.ln_biases.push_back(Tensor::zeros({lo}));
        }
    }
    return mlp;
}

}  // namespace detail

inline ModelParams init_model(const ModelConfig& config, const Tensor& attr_tokens,
                              const Tensor& obj_tokens, Rng& rng) {
    config.validate();
    if (attr_tokens.rank() != 2 || attr_tokens.shape()[0] != config.attr_count ||
        attr_tokens.shape()[1] != config.word_dim)
        fail(ErrorCode::dimension_mismatch, "init_model: attribute token table shape mismatch");
    if (obj_tokens.rank() != 2 || obj_tokens.shape()[0] != config.object_count ||
        obj_tokens.shape()[1] != config.word_dim)
        fail(ErrorCode::dimension_mismatch, "init_model: object token table shape mismatch");

    ModelParams p;
    p.config = config;
    p.attr_tokens = attr_tokens.clone();
    p.obj_tokens = obj_tokens.clone();
    const std::size_t d = config.word_dim;
    p.attention.wq = detail::glorot(d, d, rng);
    p.attention.wk = detail::glorot(d, d, rng);
    p.attention.wv = detail::glorot(d, d, rng);
    p.attention.wo = detail::glorot(d, d, rng);
    p.attention.wo_bias = Tensor::zeros({d});
    p.attention.ln_gain = Tensor::ones({d});
    p.attention.ln_bias = Tensor::zeros({d});
    p.attention.post_w = detail::glorot(d, d, rng);
    p.attention.post_b = Tensor::zeros({d});
    p.image_to_attr = detail::init_mlp(config.image_dim, config.attr_space_dim, config.mlp_depth, rng);
    p.image_to_object =
        detail::init_mlp(config.image_dim, config.object_space_dim, config.mlp_depth, rng);
    p.text_to_attr = detail::init_mlp(d, config.attr_space_dim, config.mlp_depth, rng);
    p.text_to_object = detail::init_mlp(d, config.object_space_dim, config.mlp_depth, rng);
    return p;
}

// Shallow copy whose trainable tensors are registered as tape leaves. The
// leaves share value buffers with the source, so in-place optimizer updates
// apply to the original parameters.
inline ModelParams watched(const ModelParams& params, Tape& tape) {
    ModelParams copy = params;
    for (auto& [name, t] : copy.named_parameters(false)) *t = tape.watch(*t);
    return copy;
}

// Multi-head scaled dot-product self-attention over the sequence rows.
// Optionally reports the per-head softmaxed weight matrices.
inline Tensor multi_head_attention(const Tensor& x, const AttentionParams& attn,
                                   std::size_t heads,
                                   std::vector<Tensor>* attention_weights = nullptr) {
    const std::size_t d = x.cols();
    if (heads == 0 || d % heads != 0)
        fail(ErrorCode::config_error, "attention: dimension " + std::to_string(d) +
                                          " not divisible by head count " +
                                          std::to_string(heads));
    const std::size_t dk = d / heads;
    Tensor q = matmul(x, attn.wq);
    Tensor k = matmul(x, attn.wk);
    Tensor v = matmul(x, attn.wv);
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(heads);
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dk, dk);
        Tensor kh = slice_cols(k, h * dk, dk);
        Tensor vh = slice_cols(v, h * dk, dk);
        Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dk), -1);
        if (attention_weights) attention_weights->push_back(weights);
        head_outputs.push_back(matmul(weights, vh));
    }
    Tensor merged = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
    return add_rowvec(matmul(merged, attn.wo), attn.wo_bias);
}

// Attention block over the concatenated token sequence:
// multi-head self-attention, Dropout, (residual), LayerNorm, Linear, ReLU;
// the output splits back into attribute and object context rows.
inline std::pair<Tensor, Tensor> attention_block(
    const ModelParams& params, const Tensor& attr_tokens, const Tensor& obj_tokens,
    bool training, Rng* rng = nullptr, std::vector<Tensor>* attention_weights = nullptr) {
    const std::size_t n = attr_tokens.rows(), m = obj_tokens.rows();
    Tensor x = concat_rows(attr_tokens, obj_tokens);
    Tensor a = multi_head_attention(x, params.attention, params.config.heads, attention_weights);
    if (training && params.config.dropout_p > 0.0) {
        if (!rng) fail(ErrorCode::contract_violation, "attention_block: training needs an rng");
        a = dropout(a, params.config.dropout_p, true, *rng);
    }
    if (params.config.attention_residual) a = add(a, x);
    a = layer_norm(a, params.attention.ln_gain, params.attention.ln_bias,
                   params.config.layer_norm_eps);
    a = relu(add_rowvec(matmul(a, params.attention.post_w), params.attention.post_b));
    return {slice_rows(a, 0, n), slice_rows(a, n, m)};
}

inline Tensor mlp_forward(const MlpParams& mlp, const Tensor& x, bool training, double dropout_p,
                          double ln_eps, Rng* rng) {
    Tensor h = x;
    const std::size_t depth = mlp.weights.size();
    for (std::size_t layer = 0; layer < depth; ++layer) {
        h = add_rowvec(matmul(h, mlp.weights[layer]), mlp.biases[layer]);
        if (layer + 1 < depth) {
            h = relu(layer_norm(h, mlp.ln_gains[layer], mlp.ln_biases[layer], ln_eps));
            if (training && dropout_p > 0.0) {
                if (!rng) fail(ErrorCode::contract_violation, "mlp_forward: training needs an rng");
                h = dropout(h, dropout_p, true, *rng);
            }
        }
    }
    return h;
}

struct ScoreBundle {
    Tensor attr_logits;  // b x n
    Tensor obj_logits;   // b x m
    Tensor attr_probs;   // row softmax of attr_logits
    Tensor obj_probs;    // row softmax of obj_logits
};

inline ScoreBundle forward(const ModelParams& params, const Tensor& z_batch, bool training,
                           Rng* rng = nullptr) {
    if (z_batch.rank() != 2 || z_batch.cols() != params.config.image_dim)
        fail(ErrorCode::dimension_mismatch,
             "forward: expected batch of image features with dimension " +
                 std::to_string(params.config.image_dim));
    auto [attr_ctx, obj_ctx] =
        attention_block(params, params.attr_tokens, params.obj_tokens, training, rng);
    const double p = params.config.dropout_p;
    const double eps = params.config.layer_norm_eps;
    Tensor img_attr = mlp_forward(params.image_to_attr, z_batch, training, p, eps, rng);
    Tensor img_obj = mlp_forward(params.image_to_object, z_batch, training, p, eps, rng);
    Tensor txt_attr = mlp_forward(params.text_to_attr, attr_ctx, training, p, eps, rng);
    Tensor txt_obj = mlp_forward(params.text_to_object, obj_ctx, training, p, eps, rng);
    ScoreBundle bundle;
    bundle.attr_logits = scale(cosine_rows(img_attr, txt_attr), params.config.temperature);
    bundle.obj_logits = scale(cosine_rows(img_obj, txt_obj), params.config.temperature);
    bundle.attr_probs = softmax(bundle.attr_logits, -1);
    bundle.obj_probs = softmax(bundle.obj_logits, -1);
    return bundle;
}

// Summed per-head cross-entropies, each mean-reduced over the batch.
inline Tensor loss(const ScoreBundle& bundle, std::span<const std::uint32_t> attr_targets,
                   std::span<const std::uint32_t> obj_targets) {
    return add(cross_entropy(bundle.attr_logits, attr_targets),
               cross_entropy(bundle.obj_logits, obj_targets));
}

// Product of the two marginals over the full composition grid, flattened in
// enumerate_compositions order. Evaluation path; values only.
inline Tensor composition_scores(const ScoreBundle& bundle) {
    const std::size_t b = bundle.attr_probs.rows();
    const std::size_t n = bundle.attr_probs.cols();
    const std::size_t m = bundle.obj_probs.cols();
    Tensor out(Shape{b, n * m});
    const auto& pa = bundle.attr_probs.values();
    const auto& po = bundle.obj_probs.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t a = 0; a < n; ++a) {
            const double w = pa[i * n + a];
            for (std::size_t o = 0; o < m; ++o) ov[i * n * m + a * m + o] = w * po[i * m + o];
        }
    return out;
}

// Argmax over the masked composition grid; ties go to the lowest
// composition index so runs are reproducible.
inline std::vector<CompPair> predict_feasible(const ScoreBundle& bundle, const VocabSpace& vocab,
                                              const std::vector<bool>& feasible) {
    const std::size_t n = vocab.attr_count(), m = vocab.object_count();
    if (bundle.attr_probs.cols() != n || bundle.obj_probs.cols() != m)
        fail(ErrorCode::dimension_mismatch, "predict: bundle does not match vocabulary");
    if (feasible.size() != n * m)
        fail(ErrorCode::dimension_mismatch, "predict: mask length must be n*m");
    if (std::find(feasible.begin(), feasible.end(), true) == feasible.end())
        fail(ErrorCode::empty_feasible_set, "predict: no feasible composition in mask");
    const std::size_t b = bundle.attr_probs.rows();
    const auto& pa = bundle.attr_probs.values();
    const auto& po = bundle.obj_probs.values();
    std::vector<CompPair> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        double best = -1.0;
        std::size_t best_idx = 0;
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t o = 0; o < m; ++o) {
                const std::size_t c = a * m + o;
                if (!feasible[c]) continue;
                const double s = pa[i * n + a] * po[i * m + o];
                if (s > best) {
                    best = s;
                    best_idx = c;
                }
            }
        out[i] = {static_cast<std::uint32_t>(best_idx / m),
                  static_cast<std::uint32_t>(best_idx % m)};
    }
    return out;
}

inline std::vector<CompPair> predict(const ScoreBundle& bundle, const VocabSpace& vocab) {
    return predict_feasible(bundle, vocab,
                            std::vector<bool>(vocab.composition_count(), true));
}

}  // namespace asp
