#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mantis/errors.hpp"
#include "mantis/rng.hpp"
#include "mantis/tensor.hpp"
#include "mantis/tokenizer.hpp"

namespace mantis {

struct EncoderConfig {
    int64_t n_layers = 2;
    int64_t hidden_size = 128;
    int64_t n_heads = 4;
    int64_t ffn_size = 512;
    int64_t vocab_size = 0;
    int64_t max_positions = 512;
    int64_t n_classes = 2;
    double dropout_rate = 0.1;
    bool mlm_head = false;

    void validate() const {
        if (n_layers < 1 || hidden_size < 1 || n_heads < 1 || ffn_size < 1 ||
            vocab_size < Vocab::kNumSpecial || max_positions < 3 || n_classes < 2) {
            throw BadConfig("encoder dimensions out of range");
        }
        if (hidden_size % n_heads != 0) {
            throw BadConfig("hidden_size must be divisible by n_heads");
        }
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
            throw BadConfig("dropout_rate must be in [0, 1)");
        }
    }

    int64_t head_size() const { return hidden_size / n_heads; }
};

struct LayerParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gamma, ln1_beta;
    Tensor w1, b1, w2, b2;
    Tensor ln2_gamma, ln2_beta;
};

// Token/position/segment embeddings, a stack of self-attention + feed-forward
// layers, a tanh pooler over the leading classification position, a
// classification head, and an optional per-position vocabulary head.
class EncoderModel {
public:
    EncoderConfig config;
    Tensor token_embedding;     // V x d
    Tensor position_embedding;  // P x d
    Tensor segment_embedding;   // 2 x d
    Tensor embed_ln_gamma, embed_ln_beta;
    std::vector<LayerParams> layers;
    Tensor pooler_w, pooler_b;      // d x d, 1 x d
    Tensor classifier_w, classifier_b;  // d x C, 1 x C
    Tensor mlm_w, mlm_b;            // d x V, 1 x V when config.mlm_head

    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("embeddings.token", token_embedding);
        out.emplace_back("embeddings.position", position_embedding);
        out.emplace_back("embeddings.segment", segment_embedding);
        out.emplace_back("embeddings.ln.gamma", embed_ln_gamma);
        out.emplace_back("embeddings.ln.beta", embed_ln_beta);
        for (size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            std::string p = "layers." + std::to_string(i) + ".";
            out.emplace_back(p + "attn.wq", l.wq);
            out.emplace_back(p + "attn.bq", l.bq);
            out.emplace_back(p + "attn.wk", l.wk);
            out.emplace_back(p + "attn.bk", l.bk);
            out.emplace_back(p + "attn.wv", l.wv);
            out.emplace_back(p + "attn.bv", l.bv);
            out.emplace_back(p + "attn.wo", l.wo);
            out.emplace_back(p + "attn.bo", l.bo);
            out.emplace_back(p + "ln1.gamma", l.ln1_gamma);
            out.emplace_back(p + "ln1.beta", l.ln1_beta);
            out.emplace_back(p + "ffn.w1", l.w1);
            out.emplace_back(p + "ffn.b1", l.b1);
            out.emplace_back(p + "ffn.w2", l.w2);
            out.emplace_back(p + "ffn.b2", l.b2);
            out.emplace_back(p + "ln2.gamma", l.ln2_gamma);
            out.emplace_back(p + "ln2.beta", l.ln2_beta);
        }
        out.emplace_back("pooler.w", pooler_w);
        out.emplace_back("pooler.b", pooler_b);
        out.emplace_back("classifier.w", classifier_w);
        out.emplace_back("classifier.b", classifier_b);
        if (mlm_w.defined()) {
            out.emplace_back("mlm.w", mlm_w);
            out.emplace_back("mlm.b", mlm_b);
        }
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : named_parameters()) n += t.size();
        return n;
    }
};

// Weights ~ Normal(0, 0.02^2), biases and layer-norm beta zero, layer-norm
// gamma one. Deterministic given the seed.
inline EncoderModel init_model(const EncoderConfig& config, uint64_t seed) {
    config.validate();
    constexpr double kInitStd = 0.02;
    Rng rng(seed);
    auto weight = [&](int64_t r, int64_t c) {
        return Tensor::randn(r, c, rng, kInitStd, true);
    };
    auto zeros = [](int64_t r, int64_t c) { return Tensor::zeros(r, c, true); };
    auto ones = [](int64_t c) { return Tensor::full(1, c, 1.0, true); };

    EncoderModel m;
    m.config = config;
    int64_t d = config.hidden_size;
    m.token_embedding = weight(config.vocab_size, d);
    m.position_embedding = weight(config.max_positions, d);
    m.segment_embedding = weight(2, d);
    m.embed_ln_gamma = ones(d);
    m.embed_ln_beta = zeros(1, d);
    for (int64_t i = 0; i < config.n_layers; ++i) {
        LayerParams l;
        l.wq = weight(d, d);
        l.bq = zeros(1, d);
        l.wk = weight(d, d);
        l.bk = zeros(1, d);
        l.wv = weight(d, d);
        l.bv = zeros(1, d);
        l.wo = weight(d, d);
        l.bo = zeros(1, d);
        l.ln1_gamma = ones(d);
        l.ln1_beta = zeros(1, d);
        l.w1 = weight(d, config.ffn_size);
        l.b1 = zeros(1, config.ffn_size);
        l.w2 = weight(config.ffn_size, d);
        l.b2 = zeros(1, d);
        l.ln2_gamma = ones(d);
        l.ln2_beta = zeros(1, d);
        m.layers.push_back(std::move(l));
    }
    m.pooler_w = weight(d, d);
    m.pooler_b = zeros(1, d);
    m.classifier_w = weight(d, config.n_classes);
    m.classifier_b = zeros(1, config.n_classes);
    if (config.mlm_head) {
        m.mlm_w = weight(d, config.vocab_size);
        m.mlm_b = zeros(1, config.vocab_size);
    }
    return m;
}

// Per-forward mode switches. The dropout rng must be supplied in training
// mode; evaluation is deterministic.
struct ForwardState {
    bool training = false;
    Rng* dropout_rng = nullptr;
};

namespace model_detail {

inline Tensor maybe_dropout(const Tensor& x, const EncoderConfig& cfg,
                            ForwardState& fs) {
    if (!fs.training || cfg.dropout_rate == 0.0) return x;
    if (!fs.dropout_rng) {
        throw BadConfig("training forward pass requires a dropout rng");
    }
    return dropout(x, cfg.dropout_rate, *fs.dropout_rng, true);
}

}  // namespace model_detail

// Additive key-mask row: 0 on attendable positions, a large negative bias on
// padding so softmax assigns them zero weight.
inline Tensor attention_bias(const TokenizedSequence& seq) {
    Tensor bias = Tensor::zeros(1, static_cast<int64_t>(seq.attention_mask.size()));
    for (size_t i = 0; i < seq.attention_mask.size(); ++i) {
        if (!seq.attention_mask[i]) bias.values()[i] = -1e30;
    }
    return bias;
}

// Sum of token, position and segment embeddings, layer-normed (dropout in
// training mode). Uses the all-zeros segment.
inline Tensor embed(const TokenizedSequence& seq, const EncoderModel& model,
                    ForwardState& fs) {
    int64_t seq_len = static_cast<int64_t>(seq.ids.size());
    if (seq_len > model.config.max_positions) {
        throw BadConfig("sequence longer than the position table");
    }
    Tensor tok = embedding_lookup(model.token_embedding, seq.ids);
    std::vector<int32_t> positions(static_cast<size_t>(seq_len));
    for (int64_t i = 0; i < seq_len; ++i) positions[static_cast<size_t>(i)] = static_cast<int32_t>(i);
    Tensor pos = embedding_lookup(model.position_embedding, positions);
    std::vector<int32_t> segments(static_cast<size_t>(seq_len), 0);
    Tensor seg = embedding_lookup(model.segment_embedding, segments);
    Tensor summed = add(add(tok, pos), seg);
    Tensor normed = layer_norm(summed, model.embed_ln_gamma, model.embed_ln_beta);
    return model_detail::maybe_dropout(normed, model.config, fs);
}

// Scaled dot-product attention over h heads with the additive key mask,
// heads concatenated and output-projected.
inline Tensor multi_head_attention(const Tensor& x, const Tensor& mask_bias,
                                   const LayerParams& p,
                                   const EncoderConfig& cfg) {
    if (x.cols() != cfg.hidden_size) throw ShapeMismatch("attention input width");
    Tensor q = add(matmul(x, p.wq), p.bq);
    Tensor k = add(matmul(x, p.wk), p.bk);
    Tensor v = add(matmul(x, p.wv), p.bv);
    int64_t dh = cfg.head_size();
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(cfg.n_heads));
    for (int64_t h = 0; h < cfg.n_heads; ++h) {
        int64_t c0 = h * dh, c1 = (h + 1) * dh;
        Tensor qh = slice(q, 0, q.rows(), c0, c1);
        Tensor kh = slice(k, 0, k.rows(), c0, c1);
        Tensor vh = slice(v, 0, v.rows(), c0, c1);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        Tensor weights = softmax(add(scores, mask_bias), 1);
        heads.push_back(matmul(weights, vh));
    }
    Tensor ctx = cfg.n_heads == 1 ? heads[0] : concat(heads, 1);
    return add(matmul(ctx, p.wo), p.bo);
}

// Post-layer-norm residual arrangement:
//   x' = LN(x + dropout(attention(x))); out = LN(x' + dropout(ffn(x')))
inline Tensor encoder_layer(const Tensor& x, const Tensor& mask_bias,
                            const LayerParams& p, const EncoderConfig& cfg,
                            ForwardState& fs) {
    Tensor attn = multi_head_attention(x, mask_bias, p, cfg);
    Tensor x1 = layer_norm(add(x, model_detail::maybe_dropout(attn, cfg, fs)),
                           p.ln1_gamma, p.ln1_beta);
    Tensor ffn = add(matmul(gelu(add(matmul(x1, p.w1), p.b1)), p.w2), p.b2);
    return layer_norm(add(x1, model_detail::maybe_dropout(ffn, cfg, fs)),
                      p.ln2_gamma, p.ln2_beta);
}

// Final hidden states for the whole sequence.
inline Tensor encode_sequence(const TokenizedSequence& seq,
                              const EncoderModel& model, ForwardState& fs) {
    Tensor mask_bias = attention_bias(seq);
    Tensor h = embed(seq, model, fs);
    for (const auto& layer : model.layers) {
        h = encoder_layer(h, mask_bias, layer, model.config, fs);
    }
    return h;
}

// Classification logits: leading-position row -> tanh pooler -> head.
inline Tensor classify(const TokenizedSequence& seq, const EncoderModel& model,
                       ForwardState& fs) {
    Tensor h = encode_sequence(seq, model, fs);
    Tensor cls = slice(h, 0, 1, 0, h.cols());
    Tensor pooled = tanh_op(add(matmul(cls, model.pooler_w), model.pooler_b));
    return add(matmul(pooled, model.classifier_w), model.classifier_b);
}

// Per-position vocabulary logits (seq_len x V).
inline Tensor mlm_logits(const TokenizedSequence& seq, const EncoderModel& model,
                         ForwardState& fs) {
    if (!model.mlm_w.defined()) {
        throw MlmHeadAbsent("model was built without the vocabulary head");
    }
    Tensor h = encode_sequence(seq, model, fs);
    return add(matmul(h, model.mlm_w), model.mlm_b);
}

}  // namespace mantis
