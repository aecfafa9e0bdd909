#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mantis/errors.hpp"
#include "mantis/rng.hpp"

namespace mantis {

// Word-level vocabulary with the five reserved special tokens at fixed ids.
class Vocab {
public:
    static constexpr int32_t kPad = 0;
    static constexpr int32_t kUnk = 1;
    static constexpr int32_t kCls = 2;
    static constexpr int32_t kSep = 3;
    static constexpr int32_t kMask = 4;
    static constexpr int32_t kNumSpecial = 5;

    Vocab() {
        for (const char* name : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}) {
            add(name);
        }
    }

    int32_t add(const std::string& token) {
        auto it = token_to_id_.find(token);
        if (it != token_to_id_.end()) return it->second;
        auto id = static_cast<int32_t>(id_to_token_.size());
        id_to_token_.push_back(token);
        token_to_id_.emplace(token, id);
        return id;
    }

    int32_t id(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? kUnk : it->second;
    }

    const std::string& token(int32_t id) const {
        if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size()) {
            throw IdOutOfRange("vocab id " + std::to_string(id));
        }
        return id_to_token_[static_cast<size_t>(id)];
    }

    bool contains(const std::string& token) const {
        return token_to_id_.count(token) > 0;
    }
    int32_t size() const { return static_cast<int32_t>(id_to_token_.size()); }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write vocab: " + path);
        for (size_t i = 0; i < id_to_token_.size(); ++i) {
            out << id_to_token_[i] << "\t" << i << "\n";
        }
        if (!out) throw IoError("vocab write failed: " + path);
    }

    // Loads and validates bijectivity: ids must be exactly 0..n-1, tokens
    // unique, specials at their reserved slots.
    static Vocab load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open vocab: " + path);
        std::vector<std::string> tokens;
        std::string line;
        size_t row = 0;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty()) continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw IoError("vocab line " + std::to_string(row) + " has no tab");
            }
            std::string token = line.substr(0, tab);
            long id = std::stol(line.substr(tab + 1));
            if (id != static_cast<long>(tokens.size())) {
                throw IoError("vocab ids not contiguous at line " +
                              std::to_string(row));
            }
            if (token.find_first_of(" \t\r\n") != std::string::npos) {
                throw IoError("vocab token contains whitespace at line " +
                              std::to_string(row));
            }
            tokens.push_back(std::move(token));
        }
        static const char* kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                          "[MASK]"};
        if (tokens.size() < kNumSpecial) {
            throw IoError("vocab smaller than the special-token set");
        }
        for (int i = 0; i < kNumSpecial; ++i) {
            if (tokens[static_cast<size_t>(i)] != kSpecials[i]) {
                throw IoError(std::string("special token mismatch: expected ") +
                              kSpecials[i] + " at id " + std::to_string(i));
            }
        }
        Vocab v;
        for (size_t i = kNumSpecial; i < tokens.size(); ++i) {
            if (v.contains(tokens[i])) {
                throw IoError("duplicate vocab token: " + tokens[i]);
            }
            v.add(tokens[i]);
        }
        return v;
    }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int32_t> token_to_id_;
};

// Counts whitespace-split words, drops those below min_freq, keeps at most
// max_size - 5 by frequency (ties broken lexicographically), and assigns ids
// in that order. Deterministic.
inline Vocab build_vocab(const std::vector<std::string>& corpus,
                         int32_t max_size = 30000, int32_t min_freq = 1) {
    if (corpus.empty()) throw EmptyCorpus("no documents");
    if (max_size <= Vocab::kNumSpecial) {
        throw BadConfig("max_size must exceed the special-token count");
    }
    std::unordered_map<std::string, int64_t> freq;
    for (const auto& doc : corpus) {
        std::istringstream ss(doc);
        std::string tok;
        while (ss >> tok) freq[tok]++;
    }
    std::vector<std::pair<std::string, int64_t>> candidates;
    candidates.reserve(freq.size());
    for (auto& [tok, n] : freq) {
        if (n >= min_freq) candidates.emplace_back(tok, n);
    }
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    size_t keep = std::min(candidates.size(),
                           static_cast<size_t>(max_size - Vocab::kNumSpecial));
    Vocab v;
    for (size_t i = 0; i < keep; ++i) v.add(candidates[i].first);
    return v;
}

// Fixed-length encoded sequence: [CLS] body [SEP] padding.
struct TokenizedSequence {
    std::vector<int32_t> ids;
    std::vector<uint8_t> attention_mask;  // 1 on non-pad positions
    int32_t original_length = 0;          // count of non-pad positions

    bool operator==(const TokenizedSequence&) const = default;
};

// Head truncation: the first max_seq_len - 2 words are kept.
inline TokenizedSequence encode(const std::string& text, const Vocab& vocab,
                                int32_t max_seq_len) {
    if (max_seq_len < 3) throw BadConfig("max_seq_len must be >= 3");
    TokenizedSequence seq;
    seq.ids.reserve(static_cast<size_t>(max_seq_len));
    seq.ids.push_back(Vocab::kCls);
    std::istringstream ss(text);
    std::string tok;
    while (static_cast<int32_t>(seq.ids.size()) < max_seq_len - 1 && ss >> tok) {
        seq.ids.push_back(vocab.id(tok));
    }
    seq.ids.push_back(Vocab::kSep);
    seq.original_length = static_cast<int32_t>(seq.ids.size());
    seq.ids.resize(static_cast<size_t>(max_seq_len), Vocab::kPad);
    seq.attention_mask.assign(static_cast<size_t>(max_seq_len), 0);
    for (int32_t i = 0; i < seq.original_length; ++i) {
        seq.attention_mask[static_cast<size_t>(i)] = 1;
    }
    return seq;
}

// In-vocabulary tokens of the encoded body, for round-trip checks.
inline std::string decode(const TokenizedSequence& seq, const Vocab& vocab) {
    std::string out;
    for (int32_t i = 1; i < seq.original_length - 1; ++i) {
        int32_t id = seq.ids[static_cast<size_t>(i)];
        if (id < Vocab::kNumSpecial) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(id);
    }
    return out;
}

struct MaskedSequence {
    TokenizedSequence masked;
    std::vector<int32_t> labels;  // true id at selected positions, -1 elsewhere

    std::vector<int32_t> selected_positions() const {
        std::vector<int32_t> out;
        for (size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= 0) out.push_back(static_cast<int32_t>(i));
        }
        return out;
    }
};

// Masked-token objective sampling: every non-special, non-pad position is
// selected independently with probability mask_rate; a selected position
// becomes [MASK] 80% of the time, a random regular token 10%, and stays
// unchanged 10%. Labels carry the original id at selected positions only.
inline MaskedSequence mask_for_mlm(const TokenizedSequence& seq,
                                   const Vocab& vocab, double mask_rate,
                                   uint64_t seed) {
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
        throw BadConfig("mask_rate must be in (0, 1)");
    }
    MaskedSequence out;
    out.masked = seq;
    out.labels.assign(seq.ids.size(), -1);
    Rng rng(seed);
    int32_t regular = vocab.size() - Vocab::kNumSpecial;
    for (size_t i = 0; i < seq.ids.size(); ++i) {
        int32_t id = seq.ids[i];
        if (id < Vocab::kNumSpecial) continue;  // specials and padding
        if (rng.uniform() >= mask_rate) continue;
        out.labels[i] = id;
        double r = rng.uniform();
        if (r < 0.8) {
            out.masked.ids[i] = Vocab::kMask;
        } else if (r < 0.9 && regular > 0) {
            out.masked.ids[i] = Vocab::kNumSpecial +
                                static_cast<int32_t>(rng.below(
                                        static_cast<uint64_t>(regular)));
        }
        // else: keep the original token
    }
    return out;
}

}  // namespace mantis
