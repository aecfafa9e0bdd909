#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mantis/adam.hpp"
#include "mantis/dataset.hpp"
#include "mantis/errors.hpp"
#include "mantis/metrics.hpp"
#include "mantis/model.hpp"
#include "mantis/rng.hpp"
#include "mantis/tensor.hpp"
#include "mantis/text_clean.hpp"
#include "mantis/tokenizer.hpp"

namespace mantis {

enum class Task { binary, multi_category };

inline const char* task_name(Task t) {
    return t == Task::binary ? "binary" : "multi";
}

inline Task parse_task(const std::string& s) {
    if (s == "binary") return Task::binary;
    if (s == "multi" || s == "multi-category") return Task::multi_category;
    throw BadConfig("unknown task: " + s);
}

inline int64_t task_classes(Task t) {
    return t == Task::binary ? 2 : static_cast<int64_t>(malware_categories().size());
}

inline std::vector<std::string> task_class_names(Task t) {
    if (t == Task::binary) return {"benign", "malware"};
    return malware_categories();
}

// Class index of a record under a task. Binary uses the label; the
// multi-category task indexes the 11 categories.
inline int record_class(const DatasetRecord& r, Task t) {
    if (t == Task::binary) return r.label;
    int idx = category_index(r.category);
    if (idx < 0) {
        throw MissingCategory("record " + r.id +
                              " has no category; multi-category training "
                              "needs malware records only");
    }
    return idx;
}

struct TrainConfig {
    Task task = Task::binary;
    // 0 means "per-task default": 2e-5 binary, 1e-3 multi-category.
    double learning_rate = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int batch_size = 32;
    int max_epochs = 10;
    int patience = 2;
    double clip_norm = 1.0;
    int32_t max_seq_len = 512;
    uint64_t seed = 0;

    double effective_learning_rate() const {
        if (learning_rate > 0.0) return learning_rate;
        return task == Task::binary ? 2e-5 : 1e-3;
    }

    void validate() const {
        if (learning_rate < 0.0) throw BadConfig("learning rate must be >= 0");
        if (batch_size < 1) throw BadConfig("batch size must be >= 1");
        if (patience < 1) throw BadConfig("patience must be >= 1");
        if (max_epochs < 1) throw BadConfig("max epochs must be >= 1");
        if (max_seq_len < 3) throw BadConfig("max_seq_len must be >= 3");
    }
};

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::string stopping_reason;  // "max-epochs" or "early-stop"
};

namespace train_detail {

inline Tensor one_hot_targets(const std::vector<int>& classes, int64_t n_classes) {
    Tensor t = Tensor::zeros(static_cast<int64_t>(classes.size()), n_classes);
    for (size_t i = 0; i < classes.size(); ++i) {
        t.at(static_cast<int64_t>(i), classes[i]) = 1.0;
    }
    return t;
}

inline std::vector<TokenizedSequence> encode_all(
        const std::vector<DatasetRecord>& records, const Vocab& vocab,
        int32_t max_seq_len) {
    std::vector<TokenizedSequence> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(encode(r.text, vocab, max_seq_len));
    return out;
}

// loss and prediction for one sequence without building a graph
struct EvalOutcome {
    int predicted = 0;
    double loss = 0.0;
};

inline EvalOutcome eval_one(const TokenizedSequence& seq, const EncoderModel& model,
                            int true_class) {
    ForwardState fs;
    Tensor logits = classify(seq, model, fs);
    int64_t n = logits.cols();
    double mx = logits.at(0, 0);
    int arg = 0;
    for (int64_t c = 1; c < n; ++c) {
        if (logits.at(0, c) > mx) {
            mx = logits.at(0, c);
            arg = static_cast<int>(c);
        }
    }
    double lse = 0.0;
    for (int64_t c = 0; c < n; ++c) lse += std::exp(logits.at(0, c) - mx);
    lse = mx + std::log(lse);
    return {arg, lse - logits.at(0, true_class)};
}

}  // namespace train_detail

// Argmax predictions over a record set with the full metric report.
inline MetricsReport evaluate(const EncoderModel& model,
                              const std::vector<DatasetRecord>& records,
                              const Vocab& vocab, Task task,
                              int32_t max_seq_len = 512) {
    if (records.empty()) throw EmptyDataset("evaluate on empty record set");
    int n_classes = static_cast<int>(task_classes(task));
    std::vector<int> truth, predicted;
    truth.reserve(records.size());
    predicted.reserve(records.size());
    double loss_sum = 0.0;
    for (const auto& r : records) {
        int cls = record_class(r, task);
        auto seq = encode(r.text, vocab, max_seq_len);
        auto out = train_detail::eval_one(seq, model, cls);
        truth.push_back(cls);
        predicted.push_back(out.predicted);
        loss_sum += out.loss;
    }
    auto per_class = confusion_from_predictions(truth, predicted, n_classes);

    MetricsReport report;
    int64_t correct = 0;
    for (size_t i = 0; i < truth.size(); ++i) correct += truth[i] == predicted[i];
    report.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
    report.f1_macro = f1_macro(per_class);
    report.mean_loss = loss_sum / static_cast<double>(records.size());
    report.class_names = task_class_names(task);
    for (const auto& c : per_class) report.f1_per_class.push_back(f1(c));
    if (task == Task::binary) {
        report.mcc = mcc(per_class[1]);
        report.f1_positive = f1(per_class[1]);
    }
    return report;
}

// Fine-tuning loop: deterministic per-epoch shuffling, batches of
// config.batch_size, cross-entropy against one-hot targets, Adam with global
// norm clipping, early stopping on validation loss with best-parameter
// restore.
inline TrainHistory train(EncoderModel& model,
                          const std::vector<DatasetRecord>& train_records,
                          const std::vector<DatasetRecord>& val_records,
                          const Vocab& vocab, const TrainConfig& config) {
    config.validate();
    if (train_records.empty() || val_records.empty()) {
        throw EmptyDataset("training requires non-empty train and validation sets");
    }
    int n_classes = static_cast<int>(task_classes(config.task));
    if (model.config.n_classes != n_classes) {
        throw BadConfig("model has " + std::to_string(model.config.n_classes) +
                        " classes but the task needs " + std::to_string(n_classes));
    }

    std::vector<int> train_classes, val_classes;
    for (const auto& r : train_records) train_classes.push_back(record_class(r, config.task));
    for (const auto& r : val_records) val_classes.push_back(record_class(r, config.task));

    auto train_seqs = train_detail::encode_all(train_records, vocab, config.max_seq_len);
    auto val_seqs = train_detail::encode_all(val_records, vocab, config.max_seq_len);

    auto params = model.parameters();
    AdamConfig adam_cfg;
    adam_cfg.learning_rate = config.effective_learning_rate();
    adam_cfg.beta1 = config.beta1;
    adam_cfg.beta2 = config.beta2;
    adam_cfg.epsilon = config.adam_epsilon;
    AdamOptimizer optimizer(params, adam_cfg);

    TrainHistory history;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_params;
    int epochs_since_best = 0;

    auto snapshot = [&] {
        best_params.clear();
        for (const auto& p : params) best_params.push_back(p.values());
    };
    auto restore = [&] {
        for (size_t i = 0; i < params.size(); ++i) params[i].values() = best_params[i];
    };

    std::vector<size_t> order(train_records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng(Rng::mix(config.seed, static_cast<uint64_t>(epoch)));
        Rng dropout_rng(Rng::mix(config.seed ^ 0x5dee7ab1e5ULL,
                                 static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        size_t seen = 0;
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(config.batch_size)) {
            size_t end = std::min(order.size(),
                                  start + static_cast<size_t>(config.batch_size));
            ForwardState fs;
            fs.training = true;
            fs.dropout_rng = &dropout_rng;

            std::vector<Tensor> logits_rows;
            std::vector<int> batch_classes;
            logits_rows.reserve(end - start);
            for (size_t i = start; i < end; ++i) {
                logits_rows.push_back(classify(train_seqs[order[i]], model, fs));
                batch_classes.push_back(train_classes[order[i]]);
            }
            Tensor logits = logits_rows.size() == 1 ? logits_rows[0]
                                                    : concat(logits_rows, 0);
            Tensor targets = train_detail::one_hot_targets(batch_classes, n_classes);
            Tensor loss = cross_entropy(logits, targets);

            optimizer.zero_grad();
            backward(loss);
            clip_global_norm(params, config.clip_norm);
            optimizer.step();

            loss_sum += loss.item() * static_cast<double>(end - start);
            seen += end - start;
        }

        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(seen);

        double val_loss_sum = 0.0;
        int64_t val_correct = 0;
        for (size_t i = 0; i < val_seqs.size(); ++i) {
            auto out = train_detail::eval_one(val_seqs[i], model, val_classes[i]);
            val_loss_sum += out.loss;
            val_correct += out.predicted == val_classes[i];
        }
        stats.val_loss = val_loss_sum / static_cast<double>(val_seqs.size());
        stats.val_accuracy =
                static_cast<double>(val_correct) / static_cast<double>(val_seqs.size());
        stats.seconds = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
        history.epochs.push_back(stats);

        if (stats.val_loss < best_val_loss) {
            best_val_loss = stats.val_loss;
            snapshot();
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
            if (epochs_since_best >= config.patience) {
                history.stopping_reason = "early-stop";
                restore();
                return history;
            }
        }
    }
    history.stopping_reason = "max-epochs";
    if (!best_params.empty()) restore();
    return history;
}

struct Prediction {
    int label = 0;
    std::vector<double> probabilities;
    std::vector<std::string> class_names;
};

// Raw manifest text -> clean -> encode -> classify -> softmax.
inline Prediction predict(const EncoderModel& model, const std::string& raw_text,
                          const Vocab& vocab, Task task,
                          const CleaningConfig& cleaning = {},
                          int32_t max_seq_len = 512) {
    std::string cleaned = clean_text(raw_text, cleaning);
    auto seq = encode(cleaned, vocab, max_seq_len);
    ForwardState fs;
    Tensor probs = softmax(classify(seq, model, fs), 1);
    Prediction p;
    p.class_names = task_class_names(task);
    p.probabilities.resize(static_cast<size_t>(probs.cols()));
    for (int64_t c = 0; c < probs.cols(); ++c) {
        p.probabilities[static_cast<size_t>(c)] = probs.at(0, c);
        if (probs.at(0, c) > probs.at(0, p.label)) p.label = static_cast<int>(c);
    }
    return p;
}

// History file: one "epoch train_loss val_loss val_acc seconds" line per
// epoch plus a trailing stop-reason line.
inline void write_history(const std::string& path, const TrainHistory& history) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write history: " + path);
    out << "epoch\ttrain_loss\tval_loss\tval_acc\tseconds\n";
    out.precision(10);
    for (size_t i = 0; i < history.epochs.size(); ++i) {
        const auto& e = history.epochs[i];
        out << (i + 1) << "\t" << e.train_loss << "\t" << e.val_loss << "\t"
            << e.val_accuracy << "\t" << e.seconds << "\n";
    }
    out << "# stopped: " << history.stopping_reason << "\n";
}

}  // namespace mantis
