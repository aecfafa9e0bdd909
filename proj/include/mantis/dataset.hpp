#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mantis/errors.hpp"
#include "mantis/rng.hpp"
#include "mantis/sha256.hpp"

namespace mantis {

// The 11 canonical malware categories. Index order is the class order of the
// multi-category task.
inline const std::vector<std::string>& malware_categories() {
    static const std::vector<std::string> names = {
            "adware",     "spyware",  "ransomware", "clicker",
            "dropper",    "downloader", "riskware", "sms-sender",
            "horse-trojan", "backdoor", "banker"};
    return names;
}

inline int category_index(const std::string& name) {
    const auto& names = malware_categories();
    for (size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

// One 4-column dataset row: id, cleaned text, binary label, optional category.
struct DatasetRecord {
    std::string id;
    std::string text;
    int label = 0;               // 0 benign, 1 malware
    std::string category;        // empty for benign

    bool operator==(const DatasetRecord&) const = default;
};

inline void validate_record(const DatasetRecord& r, size_t row) {
    auto at = [&] { return " at row " + std::to_string(row); };
    if (r.id.empty()) throw MissingColumn("empty id" + at());
    if (r.label != 0 && r.label != 1) {
        throw BadLabel("label must be 0 or 1" + at());
    }
    if (!r.category.empty()) {
        if (r.label == 0) {
            throw CategoryOnBenign("category '" + r.category +
                                   "' on a benign record" + at());
        }
        if (category_index(r.category) < 0) {
            throw UnknownCategory("'" + r.category + "'" + at());
        }
    }
}

// ---------------------------------------------------------------------------
// CSV (RFC-4180-style quoting)
// ---------------------------------------------------------------------------

namespace csv_detail {

inline std::string quote(const std::string& field) {
    bool needs = field.find_first_of(",\"\n\r") != std::string::npos;
    if (!needs) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

// Parses one logical CSV record (may span physical lines inside quotes).
// Returns false on end of stream.
inline bool read_row(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    int c;
    while ((c = in.get()) != EOF) {
        any = true;
        char ch = static_cast<char>(c);
        if (in_quotes) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"') {
            in_quotes = true;
        } else if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (ch == '\n') {
            break;
        } else if (ch != '\r') {
            field.push_back(ch);
        }
    }
    if (!any) return false;
    fields.push_back(std::move(field));
    return true;
}

}  // namespace csv_detail

inline const char* kDatasetHeader = "id,text,label,category";

inline std::vector<DatasetRecord> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset: " + path);
    std::vector<std::string> fields;
    if (!csv_detail::read_row(in, fields) || fields.size() != 4 ||
        fields[0] != "id" || fields[1] != "text" || fields[2] != "label" ||
        fields[3] != "category") {
        throw MissingColumn("expected header '" + std::string(kDatasetHeader) +
                            "' in " + path);
    }
    std::vector<DatasetRecord> out;
    size_t row = 1;
    while (csv_detail::read_row(in, fields)) {
        ++row;
        if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
        if (fields.size() != 4) {
            throw MissingColumn("expected 4 fields, got " +
                                std::to_string(fields.size()) + " at row " +
                                std::to_string(row));
        }
        DatasetRecord r;
        r.id = fields[0];
        r.text = fields[1];
        if (fields[2] != "0" && fields[2] != "1") {
            throw BadLabel("'" + fields[2] + "' at row " + std::to_string(row));
        }
        r.label = fields[2] == "1" ? 1 : 0;
        r.category = fields[3];
        validate_record(r, row);
        out.push_back(std::move(r));
    }
    return out;
}

inline void write_dataset(const std::string& path,
                          const std::vector<DatasetRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write dataset: " + path);
    out << kDatasetHeader << "\n";
    for (const auto& r : records) {
        out << csv_detail::quote(r.id) << "," << csv_detail::quote(r.text)
            << "," << r.label << "," << csv_detail::quote(r.category) << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// stratified split
// ---------------------------------------------------------------------------

// Disjoint, exhaustive partition, stratified per (label, category). Within
// each stratum the test quota is round(n * test_fraction) capped at n-1, so
// the per-stratum test share stays within one record of test_fraction.
// Strata with fewer than two records go to train with a warning.
inline std::pair<std::vector<DatasetRecord>, std::vector<DatasetRecord>>
split_train_test(const std::vector<DatasetRecord>& records, double test_fraction,
                 uint64_t seed, std::vector<std::string>* warnings = nullptr) {
    if (records.empty()) throw EmptyDataset("no records to split");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw BadConfig("test_fraction must be in (0, 1)");
    }
    std::map<std::pair<int, std::string>, std::vector<size_t>> strata;
    for (size_t i = 0; i < records.size(); ++i) {
        strata[{records[i].label, records[i].category}].push_back(i);
    }
    std::vector<bool> in_test(records.size(), false);
    size_t stratum_ordinal = 0;
    for (auto& [key, idx] : strata) {
        ++stratum_ordinal;
        if (idx.size() < 2) {
            if (warnings) {
                warnings->push_back("StratumTooSmall: (" +
                                    std::to_string(key.first) + ", '" +
                                    key.second + "') has " +
                                    std::to_string(idx.size()) +
                                    " record(s); kept in train");
            }
            continue;
        }
        size_t n_test = static_cast<size_t>(
                std::llround(test_fraction * static_cast<double>(idx.size())));
        n_test = std::min(n_test, idx.size() - 1);
        Rng rng(Rng::mix(seed, stratum_ordinal));
        std::vector<size_t> shuffled = idx;
        rng.shuffle(shuffled);
        for (size_t k = 0; k < n_test; ++k) in_test[shuffled[k]] = true;
    }
    std::pair<std::vector<DatasetRecord>, std::vector<DatasetRecord>> out;
    for (size_t i = 0; i < records.size(); ++i) {
        (in_test[i] ? out.second : out.first).push_back(records[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

// Vocabulary sizing for the generated corpus. Every class (benign plus the
// 11 categories) owns `signature_per_class` tokens nothing else emits;
// the rest of a record is shared boilerplate.
struct SynthProfile {
    int signature_per_class = 6;
    int shared_tokens = 40;
    int tokens_per_record = 32;
    int signature_slots = 8;  // positions guaranteed to draw from the class pool
};

namespace synth_detail {

inline std::string class_name(int cls) {
    return cls == 0 ? "benign" : malware_categories()[static_cast<size_t>(cls - 1)];
}

inline std::string signature_token(int cls, int k) {
    // hyphens in category names would not survive cleaning
    std::string base = class_name(cls);
    for (auto& c : base) {
        if (c == '-') c = 'x';
    }
    return "sig" + base + std::to_string(k);
}

inline const std::vector<std::string>& shared_pool(const SynthProfile& p) {
    static const char* kStems[] = {"permission", "activity", "intent",
                                   "action",     "service",  "receiver",
                                   "provider",   "category", "feature",
                                   "metadata"};
    static std::map<int, std::vector<std::string>> cache;
    auto& pool = cache[p.shared_tokens];
    if (pool.empty()) {
        for (int i = 0; i < p.shared_tokens; ++i) {
            pool.push_back(std::string(kStems[i % 10]) + std::to_string(i / 10));
        }
    }
    return pool;
}

}  // namespace synth_detail

// All tokens any class can emit, in a stable order.
inline std::vector<std::string> synth_global_vocab(const SynthProfile& profile) {
    std::vector<std::string> vocab = synth_detail::shared_pool(profile);
    for (int cls = 0; cls < 12; ++cls) {
        for (int k = 0; k < profile.signature_per_class; ++k) {
            vocab.push_back(synth_detail::signature_token(cls, k));
        }
    }
    return vocab;
}

// Deterministic manifest-like corpus: 12 classes (benign + 11 categories),
// n_per_class records each. With noise_rate 0 every record carries tokens
// unique to its class, making the classes separable by construction.
inline std::vector<DatasetRecord> synthesize_corpus(int n_per_class,
                                                    const SynthProfile& profile,
                                                    double noise_rate,
                                                    uint64_t seed) {
    if (n_per_class < 1) throw BadConfig("n_per_class must be >= 1");
    if (!(noise_rate >= 0.0 && noise_rate < 1.0)) {
        throw BadConfig("noise_rate must be in [0, 1)");
    }
    const auto& shared = synth_detail::shared_pool(profile);
    const auto global = synth_global_vocab(profile);

    std::vector<DatasetRecord> out;
    out.reserve(static_cast<size_t>(n_per_class) * 12);
    for (int cls = 0; cls < 12; ++cls) {
        for (int i = 0; i < n_per_class; ++i) {
            Rng rng(Rng::mix(seed, static_cast<uint64_t>(cls) * 1000003 +
                                     static_cast<uint64_t>(i)));
            std::string text;
            for (int s = 0; s < profile.tokens_per_record; ++s) {
                bool signature_slot =
                        s % std::max(1, profile.tokens_per_record /
                                                profile.signature_slots) == 0;
                std::string tok;
                if (noise_rate > 0.0 && rng.uniform() < noise_rate) {
                    tok = global[rng.below(global.size())];
                } else if (signature_slot) {
                    tok = synth_detail::signature_token(
                            cls, static_cast<int>(rng.below(
                                         static_cast<uint64_t>(profile.signature_per_class))));
                } else {
                    tok = shared[rng.below(shared.size())];
                }
                if (!text.empty()) text.push_back(' ');
                text += tok;
            }
            DatasetRecord r;
            r.id = sha256_hex(synth_detail::class_name(cls) + "/" +
                              std::to_string(i) + "/" + std::to_string(seed));
            r.text = std::move(text);
            r.label = cls == 0 ? 0 : 1;
            r.category = cls == 0 ? "" : synth_detail::class_name(cls);
            out.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace mantis
