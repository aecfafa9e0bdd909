#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "mantis/checkpoint.hpp"
#include "mantis/model.hpp"
#include "mantis/tensor.hpp"
#include "mantis/tokenizer.hpp"

using namespace mantis;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.n_layers = 1;
    cfg.hidden_size = 4;
    cfg.n_heads = 2;
    cfg.ffn_size = 8;
    cfg.vocab_size = 10;
    cfg.max_positions = 16;
    cfg.n_classes = 2;
    cfg.dropout_rate = 0.0;
    return cfg;
}

TokenizedSequence make_seq(std::vector<int32_t> ids, int32_t real_len) {
    TokenizedSequence seq;
    seq.ids = std::move(ids);
    seq.original_length = real_len;
    seq.attention_mask.assign(seq.ids.size(), 0);
    for (int32_t i = 0; i < real_len; ++i) seq.attention_mask[static_cast<size_t>(i)] = 1;
    return seq;
}

Tensor identity2() { return Tensor::from({1, 0, 0, 1}, 2, 2); }

}  // namespace

TEST_CASE("parameter count matches the closed-form formula") {
    EncoderConfig cfg = tiny_config();
    EncoderModel m = init_model(cfg, 42);

    // closed form per the field list
    int64_t d = cfg.hidden_size, V = cfg.vocab_size, P = cfg.max_positions;
    int64_t dff = cfg.ffn_size, C = cfg.n_classes, L = cfg.n_layers;
    int64_t embeddings = V * d + P * d + 2 * d + 2 * d;  // tables + ln pair
    int64_t per_layer = 4 * (d * d + d)                  // q k v o
                        + 2 * d                          // ln1
                        + (d * dff + dff) + (dff * d + d)  // ffn
                        + 2 * d;                         // ln2
    int64_t heads = (d * d + d) + (d * C + C);           // pooler + classifier
    int64_t expected = embeddings + L * per_layer + heads;
    CHECK(m.parameter_count() == expected);

    // independent enumeration over the named map
    int64_t enumerated = 0;
    for (const auto& [name, t] : m.named_parameters()) enumerated += t.size();
    CHECK(enumerated == expected);

    // with the vocabulary head
    cfg.mlm_head = true;
    EncoderModel m2 = init_model(cfg, 42);
    CHECK(m2.parameter_count() == expected + d * V + V);
}

TEST_CASE("init is deterministic and validates config") {
    EncoderConfig cfg = tiny_config();
    EncoderModel a = init_model(cfg, 7);
    EncoderModel b = init_model(cfg, 7);
    auto pa = a.named_parameters();
    auto pb = b.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].second.values() == pb[i].second.values());  // bitwise
    }

    EncoderModel c = init_model(cfg, 8);
    CHECK(c.token_embedding.values() != a.token_embedding.values());

    EncoderConfig bad = cfg;
    bad.hidden_size = 5;  // not divisible by n_heads=2
    CHECK_THROWS_AS(init_model(bad, 1), BadConfig);
    EncoderConfig bad2 = cfg;
    bad2.vocab_size = 0;
    CHECK_THROWS_AS(init_model(bad2, 1), BadConfig);
}

TEST_CASE("biases and layer norms start at their identities") {
    EncoderModel m = init_model(tiny_config(), 3);
    for (double v : m.embed_ln_gamma.values()) CHECK(v == 1.0);
    for (double v : m.embed_ln_beta.values()) CHECK(v == 0.0);
    for (double v : m.layers[0].bq.values()) CHECK(v == 0.0);
    for (double v : m.classifier_b.values()) CHECK(v == 0.0);
}

TEST_CASE("embed: position embeddings separate identical tokens") {
    EncoderModel m = init_model(tiny_config(), 11);
    ForwardState fs;
    auto seq = make_seq({2, 7, 7, 3}, 4);  // [CLS] w w [SEP]
    Tensor e = embed(seq, m, fs);
    REQUIRE(e.rows() == 4);
    bool differs = false;
    for (int64_t c = 0; c < e.cols(); ++c) differs |= e.at(1, c) != e.at(2, c);
    CHECK(differs);
}

TEST_CASE("embed row matches direct arithmetic") {
    EncoderModel m = init_model(tiny_config(), 13);
    ForwardState fs;
    auto seq = make_seq({5}, 1);
    Tensor e = embed(seq, m, fs);

    // direct arithmetic: layernorm(tok[5] + pos[0] + seg[0])
    int64_t d = m.config.hidden_size;
    std::vector<double> summed(static_cast<size_t>(d));
    double mean = 0;
    for (int64_t c = 0; c < d; ++c) {
        summed[static_cast<size_t>(c)] = m.token_embedding.at(5, c) +
                                         m.position_embedding.at(0, c) +
                                         m.segment_embedding.at(0, c);
        mean += summed[static_cast<size_t>(c)];
    }
    mean /= static_cast<double>(d);
    double var = 0;
    for (double v : summed) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    for (int64_t c = 0; c < d; ++c) {
        double expect = (summed[static_cast<size_t>(c)] - mean) / std::sqrt(var + 1e-12);
        CHECK(e.at(0, c) == Catch::Approx(expect).margin(1e-9));
    }

    auto bad = make_seq({99}, 1);
    CHECK_THROWS_AS(embed(bad, m, fs), IdOutOfRange);
}

TEST_CASE("attention over a single real token is the projected value vector") {
    EncoderConfig cfg;
    cfg.n_layers = 1;
    cfg.hidden_size = 2;
    cfg.n_heads = 1;
    cfg.ffn_size = 4;
    cfg.vocab_size = 8;
    cfg.max_positions = 8;
    cfg.dropout_rate = 0.0;

    LayerParams p;
    p.wq = identity2();
    p.bq = Tensor::zeros(1, 2);
    p.wk = identity2();
    p.bk = Tensor::zeros(1, 2);
    p.wv = Tensor::from({2, 0, 0, 3}, 2, 2);
    p.bv = Tensor::from({0.5, -1}, 1, 2);
    p.wo = identity2();
    p.bo = Tensor::zeros(1, 2);

    Tensor x = Tensor::from({0.7, -0.2}, 1, 2);
    Tensor bias = Tensor::zeros(1, 1);  // one position, attendable
    Tensor out = multi_head_attention(x, bias, p, cfg);
    // softmax over a singleton = 1.0, so out = x Wv + bv (Wo = I)
    CHECK(out.at(0, 0) == Catch::Approx(0.7 * 2 + 0.5).margin(1e-12));
    CHECK(out.at(0, 1) == Catch::Approx(-0.2 * 3 - 1.0).margin(1e-12));
}

TEST_CASE("attention weights match a straight-line hand computation") {
    EncoderConfig cfg;
    cfg.n_layers = 1;
    cfg.hidden_size = 2;
    cfg.n_heads = 1;
    cfg.ffn_size = 4;
    cfg.vocab_size = 8;
    cfg.max_positions = 8;
    cfg.dropout_rate = 0.0;

    LayerParams p;
    p.wq = identity2();
    p.bq = Tensor::zeros(1, 2);
    p.wk = identity2();
    p.bk = Tensor::zeros(1, 2);
    p.wv = identity2();
    p.bv = Tensor::zeros(1, 2);
    p.wo = identity2();
    p.bo = Tensor::zeros(1, 2);

    Tensor x = Tensor::from({1, 0, 0, 1, 1, 1}, 3, 2);
    Tensor bias = Tensor::zeros(1, 3);
    Tensor out = multi_head_attention(x, bias, p, cfg);

    // hand computation with explicit exponentials: scores = x x^T / sqrt(2)
    double s = 1.0 / std::sqrt(2.0);
    double xs[3][2] = {{1, 0}, {0, 1}, {1, 1}};
    for (int r = 0; r < 3; ++r) {
        double scores[3], wsum = 0;
        for (int k = 0; k < 3; ++k) {
            scores[k] = s * (xs[r][0] * xs[k][0] + xs[r][1] * xs[k][1]);
        }
        double mx = std::max({scores[0], scores[1], scores[2]});
        double w[3];
        for (int k = 0; k < 3; ++k) {
            w[k] = std::exp(scores[k] - mx);
            wsum += w[k];
        }
        double expect0 = 0, expect1 = 0;
        for (int k = 0; k < 3; ++k) {
            expect0 += w[k] / wsum * xs[k][0];
            expect1 += w[k] / wsum * xs[k][1];
        }
        CHECK(out.at(r, 0) == Catch::Approx(expect0).margin(1e-10));
        CHECK(out.at(r, 1) == Catch::Approx(expect1).margin(1e-10));
    }
}

TEST_CASE("attention rows over unmasked keys sum to one") {
    // with value rows forced to all-ones and identity output projection the
    // attention output is exactly the per-row weight sum
    EncoderConfig cfg;
    cfg.n_layers = 1;
    cfg.hidden_size = 2;
    cfg.n_heads = 1;
    cfg.ffn_size = 4;
    cfg.vocab_size = 8;
    cfg.max_positions = 8;
    cfg.dropout_rate = 0.0;

    Rng rng(202);
    for (int trial = 0; trial < 1000; ++trial) {
        LayerParams p;
        p.wq = Tensor::randn(2, 2, rng, 1.0, false);
        p.bq = Tensor::randn(1, 2, rng, 1.0, false);
        p.wk = Tensor::randn(2, 2, rng, 1.0, false);
        p.bk = Tensor::randn(1, 2, rng, 1.0, false);
        p.wv = Tensor::zeros(2, 2);
        p.bv = Tensor::full(1, 2, 1.0);
        p.wo = identity2();
        p.bo = Tensor::zeros(1, 2);

        Tensor x = Tensor::randn(4, 2, rng, 2.0, false);
        Tensor bias = Tensor::zeros(1, 4);
        if (trial % 2 == 1) {
            bias.values()[3] = -1e30;  // mask the last key
        }
        Tensor out = multi_head_attention(x, bias, p, cfg);
        for (int64_t r = 0; r < 4; ++r) {
            CHECK(std::abs(out.at(r, 0) - 1.0) < 1e-9);
            CHECK(std::abs(out.at(r, 1) - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("encoder layer with zero branches is a double layer norm") {
    EncoderConfig cfg = tiny_config();
    EncoderModel m = init_model(cfg, 5);
    LayerParams& l = m.layers[0];
    for (Tensor t : {l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.w1,
                     l.b1, l.w2, l.b2}) {
        for (auto& v : t.values()) v = 0.0;
    }
    ForwardState fs;
    Rng rng(6);
    Tensor x = Tensor::randn(3, 4, rng, 1.0, false);
    Tensor bias = Tensor::zeros(1, 3);
    Tensor out = encoder_layer(x, bias, l, cfg, fs);

    Tensor gamma = Tensor::full(1, 4, 1.0);
    Tensor beta = Tensor::zeros(1, 4);
    Tensor expect = layer_norm(layer_norm(x, gamma, beta), gamma, beta);
    for (size_t i = 0; i < out.values().size(); ++i) {
        CHECK(out.values()[i] == Catch::Approx(expect.values()[i]).margin(1e-9));
    }
    CHECK(out.rows() == x.rows());
    CHECK(out.cols() == x.cols());
}

TEST_CASE("encoder layer equals the explicit op composition") {
    EncoderConfig cfg = tiny_config();
    EncoderModel m = init_model(cfg, 21);
    const LayerParams& l = m.layers[0];
    ForwardState fs;
    Rng rng(22);
    Tensor x = Tensor::randn(5, 4, rng, 0.8, false);
    auto seq = make_seq({2, 6, 7, 3, 0}, 4);
    Tensor bias = attention_bias(seq);

    Tensor out = encoder_layer(x, bias, l, cfg, fs);

    Tensor attn = multi_head_attention(x, bias, l, cfg);
    Tensor x1 = layer_norm(add(x, attn), l.ln1_gamma, l.ln1_beta);
    Tensor ffn = add(matmul(gelu(add(matmul(x1, l.w1), l.b1)), l.w2), l.b2);
    Tensor expect = layer_norm(add(x1, ffn), l.ln2_gamma, l.ln2_beta);
    for (size_t i = 0; i < out.values().size(); ++i) {
        CHECK(out.values()[i] == Catch::Approx(expect.values()[i]).margin(1e-10));
    }
}

TEST_CASE("classify contract") {
    EncoderConfig cfg = tiny_config();
    EncoderModel m = init_model(cfg, 17);
    for (auto& v : m.classifier_w.values()) v = 0.0;
    ForwardState fs;
    auto seq = make_seq({2, 5, 6, 3, 0, 0}, 4);
    Tensor logits = classify(seq, m, fs);
    REQUIRE(logits.rows() == 1);
    REQUIRE(logits.cols() == 2);
    CHECK(logits.at(0, 0) == 0.0);
    CHECK(logits.at(0, 1) == 0.0);
    Tensor probs = softmax(logits, 1);
    CHECK(probs.at(0, 0) == Catch::Approx(0.5).margin(1e-12));

    // eleven-class head
    EncoderConfig cfg11 = cfg;
    cfg11.n_classes = 11;
    Tensor logits11 = classify(seq, init_model(cfg11, 17), fs);
    CHECK(logits11.cols() == 11);

    // bitwise determinism in eval mode
    EncoderModel m2 = init_model(cfg, 19);
    Tensor a = classify(seq, m2, fs);
    Tensor b = classify(seq, m2, fs);
    CHECK(a.values() == b.values());
}

TEST_CASE("mlm logits shape and absence error") {
    EncoderConfig cfg = tiny_config();
    ForwardState fs;
    auto seq = make_seq({2, 5, 6, 3}, 4);

    EncoderModel no_head = init_model(cfg, 1);
    CHECK_THROWS_AS(mlm_logits(seq, no_head, fs), MlmHeadAbsent);

    cfg.mlm_head = true;
    EncoderModel with_head = init_model(cfg, 1);
    Tensor logits = mlm_logits(seq, with_head, fs);
    CHECK(logits.rows() == 4);
    CHECK(logits.cols() == cfg.vocab_size);
}

TEST_CASE("pad content and pad length never change the logits") {
    EncoderConfig cfg = tiny_config();
    EncoderModel m = init_model(cfg, 33);
    ForwardState fs;

    auto base = make_seq({2, 5, 6, 3, 0, 0, 0, 0}, 4);
    Tensor ref = classify(base, m, fs);

    Rng rng(34);
    for (int trial = 0; trial < 1000; ++trial) {
        auto tampered = base;
        for (size_t i = 4; i < tampered.ids.size(); ++i) {
            tampered.ids[i] = static_cast<int32_t>(rng.below(10));
        }
        Tensor out = classify(tampered, m, fs);
        for (int64_t c = 0; c < out.cols(); ++c) {
            CHECK(std::abs(out.at(0, c) - ref.at(0, c)) < 1e-9);
        }
    }

    // same real tokens, shorter and longer pad regions
    for (size_t len : {4u, 5u, 7u, 12u}) {
        std::vector<int32_t> ids{2, 5, 6, 3};
        ids.resize(len, 0);
        auto padded = make_seq(std::move(ids), 4);
        Tensor out = classify(padded, m, fs);
        for (int64_t c = 0; c < out.cols(); ++c) {
            CHECK(std::abs(out.at(0, c) - ref.at(0, c)) < 1e-9);
        }
    }
}

TEST_CASE("training mode with dropout differs and requires an rng") {
    EncoderConfig cfg = tiny_config();
    cfg.dropout_rate = 0.5;
    EncoderModel m = init_model(cfg, 44);
    auto seq = make_seq({2, 5, 6, 3}, 4);

    ForwardState eval_fs;
    Tensor eval_logits = classify(seq, m, eval_fs);

    ForwardState bad_fs;
    bad_fs.training = true;
    CHECK_THROWS_AS(classify(seq, m, bad_fs), BadConfig);

    Rng rng(45);
    ForwardState train_fs;
    train_fs.training = true;
    train_fs.dropout_rng = &rng;
    Tensor train_logits = classify(seq, m, train_fs);
    CHECK(train_logits.values() != eval_logits.values());
}

TEST_CASE("end-to-end gradients match finite differences") {
    EncoderConfig cfg;
    cfg.n_layers = 1;
    cfg.hidden_size = 8;
    cfg.n_heads = 2;
    cfg.ffn_size = 16;
    cfg.vocab_size = 12;
    cfg.max_positions = 8;
    cfg.n_classes = 2;
    cfg.dropout_rate = 0.0;
    EncoderModel m = init_model(cfg, 55);

    auto seq = make_seq({2, 7, 9, 3}, 4);
    Tensor target = Tensor::from({0, 1}, 1, 2);

    auto loss_value = [&]() {
        ForwardState fs;
        return cross_entropy(classify(seq, m, fs), target).item();
    };

    ForwardState fs;
    Tensor loss = cross_entropy(classify(seq, m, fs), target);
    for (auto& [name, t] : m.named_parameters()) t.zero_grad();
    backward(loss);

    const double h = 1e-5;
    double worst = 0.0;
    std::string worst_name;
    for (auto& [name, t] : m.named_parameters()) {
        REQUIRE_FALSE(t.grad().empty());
        for (size_t i = 0; i < t.values().size(); ++i) {
            double saved = t.values()[i];
            t.values()[i] = saved + h;
            double up = loss_value();
            t.values()[i] = saved - h;
            double down = loss_value();
            t.values()[i] = saved;
            double numeric = (up - down) / (2 * h);
            double analytic = t.grad()[i];
            double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
            double rel = std::abs(numeric - analytic) / denom;
            if (rel > worst) {
                worst = rel;
                worst_name = name;
            }
        }
    }
    INFO("worst parameter: " << worst_name);
    CHECK(worst < 1e-3);
}

TEST_CASE("checkpoint round-trip preserves parameters bitwise") {
    EncoderConfig cfg = tiny_config();
    cfg.mlm_head = true;
    EncoderModel m = init_model(cfg, 66);
    std::string path = "/tmp/mantis_ckpt_test.bin";
    save_checkpoint(path, m, {{"task", "binary"}, {"vocab_sha256", "ab12"}});

    auto loaded = load_checkpoint(path);
    CHECK(loaded.header.at("task") == "binary");
    CHECK(loaded.header.at("vocab_sha256") == "ab12");
    CHECK(loaded.model.config.hidden_size == cfg.hidden_size);
    CHECK(loaded.model.config.mlm_head);

    auto pa = m.named_parameters();
    auto pb = loaded.model.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second.values() == pb[i].second.values());
    }

    // corrupting any payload byte must fail the checksum
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(600);
        char c;
        f.seekg(600);
        f.get(c);
        f.seekp(600);
        f.put(static_cast<char>(c ^ 0x20));
    }
    CHECK_THROWS_AS(load_checkpoint(path), BadCheckpoint);
    std::remove(path.c_str());
}
