#pragma once

#include <fstream>
#include <string>
#include <unordered_set>

#include "mantis/errors.hpp"

namespace mantis {

// Manifest text cleaning policy. Punctuation is always replaced with spaces;
// digits and letter case are always preserved. Only the removal lexicon is
// configurable.
struct CleaningConfig {
    std::unordered_set<std::string> lexicon;  // case-sensitive whole-token matches
};

// Lexicon file: one term per line, '#' starts a comment, blanks ignored.
inline CleaningConfig load_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon file: " + path);
    CleaningConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        size_t b = line.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        size_t e = line.find_last_not_of(" \t");
        cfg.lexicon.insert(line.substr(b, e - b + 1));
    }
    return cfg;
}

inline bool is_kept_char(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'A' && c <= 'Z') ||
           (c >= 'a' && c <= 'z');
}

// Replaces every non-alphanumeric character with a space, drops tokens that
// exactly match a lexicon entry, and collapses whitespace. Total function;
// idempotent.
inline std::string clean_text(const std::string& raw,
                              const CleaningConfig& config = {}) {
    std::string out;
    out.reserve(raw.size());
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        if (!config.lexicon.count(token)) {
            if (!out.empty()) out.push_back(' ');
            out += token;
        }
        token.clear();
    };
    for (unsigned char c : raw) {
        if (is_kept_char(c)) {
            token.push_back(static_cast<char>(c));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

}  // namespace mantis
