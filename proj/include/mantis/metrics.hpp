#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mantis/errors.hpp"

namespace mantis {

struct ConfusionCounts {
    int64_t tp = 0;
    int64_t tn = 0;
    int64_t fp = 0;
    int64_t fn = 0;

    int64_t total() const { return tp + tn + fp + fn; }
};

inline void require_nonempty(const ConfusionCounts& c) {
    if (c.total() <= 0) throw EmptyCounts("confusion counts are all zero");
}

// Fraction of correct predictions.
inline double accuracy(const ConfusionCounts& c) {
    require_nonempty(c);
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

// Matthews correlation coefficient in [-1, 1]. Returns 0 when any factor of
// the denominator vanishes (the ratio is undefined there; 0 is chance level).
inline double mcc(const ConfusionCounts& c) {
    require_nonempty(c);
    double num = static_cast<double>(c.tp) * static_cast<double>(c.tn) -
                 static_cast<double>(c.fp) * static_cast<double>(c.fn);
    double f1d = static_cast<double>(c.tp + c.fp);
    double f2d = static_cast<double>(c.tp + c.fn);
    double f3d = static_cast<double>(c.tn + c.fp);
    double f4d = static_cast<double>(c.tn + c.fn);
    if (f1d == 0 || f2d == 0 || f3d == 0 || f4d == 0) return 0.0;
    return num / std::sqrt(f1d * f2d * f3d * f4d);
}

// Harmonic mean of precision and recall; 0 when the denominator vanishes.
inline double f1(const ConfusionCounts& c) {
    require_nonempty(c);
    double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
    if (denom == 0) return 0.0;
    return 2.0 * static_cast<double>(c.tp) / denom;
}

// Unweighted mean of per-class one-vs-rest F1 scores.
inline double f1_macro(const std::vector<ConfusionCounts>& per_class) {
    if (per_class.empty()) throw EmptyCounts("no per-class counts");
    double sum = 0.0;
    for (const auto& c : per_class) sum += f1(c);
    return sum / static_cast<double>(per_class.size());
}

// One-vs-rest confusion counts per class. For every class,
// tp+tn+fp+fn == n_samples.
inline std::vector<ConfusionCounts> confusion_from_predictions(
        const std::vector<int>& true_labels,
        const std::vector<int>& predicted_labels, int n_classes) {
    if (true_labels.size() != predicted_labels.size()) {
        throw LengthMismatch("true/predicted label vectors differ in length");
    }
    for (size_t i = 0; i < true_labels.size(); ++i) {
        if (true_labels[i] < 0 || true_labels[i] >= n_classes ||
            predicted_labels[i] < 0 || predicted_labels[i] >= n_classes) {
            throw LabelOutOfRange("label at row " + std::to_string(i) +
                                  " outside [0, " + std::to_string(n_classes) + ")");
        }
    }
    std::vector<ConfusionCounts> out(static_cast<size_t>(n_classes));
    for (size_t i = 0; i < true_labels.size(); ++i) {
        for (int k = 0; k < n_classes; ++k) {
            bool is_true = true_labels[i] == k;
            bool is_pred = predicted_labels[i] == k;
            auto& c = out[static_cast<size_t>(k)];
            if (is_true && is_pred) c.tp++;
            else if (!is_true && !is_pred) c.tn++;
            else if (!is_true && is_pred) c.fp++;
            else c.fn++;
        }
    }
    return out;
}

struct MetricsReport {
    double accuracy = 0.0;
    std::optional<double> mcc;           // binary task only
    double f1_macro = 0.0;
    std::optional<double> f1_positive;   // binary task: F1 of the malware class
    double mean_loss = 0.0;
    std::vector<std::string> class_names;
    std::vector<double> f1_per_class;

    // Aligned table with the ACC / F1 / Loss / MCC column order.
    std::string to_table(const std::string& row_name) const {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4);
        os << std::left << std::setw(16) << "Model"
           << std::right << std::setw(8) << "ACC" << std::setw(8) << "F1"
           << std::setw(8) << "Loss" << std::setw(8) << "MCC" << "\n";
        os << std::string(48, '-') << "\n";
        os << std::left << std::setw(16) << row_name
           << std::right << std::setw(8) << accuracy << std::setw(8) << f1_macro
           << std::setw(8) << mean_loss;
        if (mcc) os << std::setw(8) << *mcc;
        else os << std::setw(8) << "-";
        os << "\n";
        return os.str();
    }

    std::string to_key_values() const {
        std::ostringstream os;
        os << std::setprecision(17);
        os << "accuracy=" << accuracy << "\n";
        os << "f1_macro=" << f1_macro << "\n";
        if (f1_positive) os << "f1_positive=" << *f1_positive << "\n";
        os << "loss=" << mean_loss << "\n";
        if (mcc) os << "mcc=" << *mcc << "\n";
        for (size_t i = 0; i < f1_per_class.size(); ++i) {
            std::string name = i < class_names.size() ? class_names[i]
                                                      : std::to_string(i);
            os << "f1_class." << name << "=" << f1_per_class[i] << "\n";
        }
        return os.str();
    }
};

}  // namespace mantis
