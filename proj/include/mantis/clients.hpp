#pragma once

#include <httplib.h>
#include <unistd.h>

#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mantis/dataset.hpp"
#include "mantis/errors.hpp"
#include "mantis/sha256.hpp"

namespace mantis {

inline bool is_sha256_hex(const std::string& s) {
    if (s.size() != 64) return false;
    for (char c : s) {
        if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
    }
    return true;
}

struct SampleDescriptor {
    std::string sha256;                    // 64 lowercase hex
    enum class Source { repository, local } source = Source::repository;
    std::optional<std::string> verdict;    // "benign" or "malware"
    std::optional<std::string> category;
    std::string filename;                  // offline fixture file
    std::string fetch_status = "pending";
};

struct SampleFilter {
    std::optional<std::string> verdict;
    std::optional<std::string> category;
    size_t limit = 0;  // 0 = unlimited
};

// Endpoint + credential + retry/rate policy. The credential is referenced by
// environment variable name and is read per request; its value must never be
// persisted or logged.
struct ClientConfig {
    std::string base_url;        // e.g. http://127.0.0.1:8080
    std::string credential_env;  // name of the env var holding the token
    int rate_limit_per_min = 120;
    int max_attempts = 3;
    int backoff_ms = 200;
    std::string offline_dir;     // fixture directory; offline mode when set

    bool offline() const { return !offline_dir.empty(); }

    void validate() const {
        if (rate_limit_per_min <= 0) throw BadConfig("rate limit must be positive");
        if (max_attempts < 1) throw BadConfig("max_attempts must be >= 1");
        if (!offline() && base_url.empty()) {
            throw BadConfig("live mode needs a base endpoint");
        }
    }
};

namespace client_detail {

// Minimum-interval rate limiter shared by all requests of one client.
class RateLimiter {
public:
    explicit RateLimiter(int per_minute)
        : interval_(std::chrono::duration<double>(60.0 / per_minute)) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mu_);
        auto now = std::chrono::steady_clock::now();
        if (next_allowed_ > now) {
            auto wait = next_allowed_ - now;
            lock.unlock();
            std::this_thread::sleep_for(wait);
            lock.lock();
            now = std::chrono::steady_clock::now();
        }
        next_allowed_ = now + std::chrono::duration_cast<
                                      std::chrono::steady_clock::duration>(interval_);
    }

private:
    std::mutex mu_;
    std::chrono::duration<double> interval_;
    std::chrono::steady_clock::time_point next_allowed_{};
};

// GET with credential header, rate limiting and 429/5xx retries.
class HttpSession {
public:
    explicit HttpSession(const ClientConfig& config)
        : config_(config), limiter_(config.rate_limit_per_min) {}

    std::string get(const std::string& path) {
        httplib::Client cli(config_.base_url);
        cli.set_connection_timeout(5);
        cli.set_read_timeout(30);
        httplib::Headers headers;
        if (!config_.credential_env.empty()) {
            if (const char* token = std::getenv(config_.credential_env.c_str())) {
                headers.emplace("Authorization", std::string("Bearer ") + token);
            }
        }
        int last_status = 0;
        for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
            limiter_.acquire();
            auto res = cli.Get(path, headers);
            if (!res) {
                if (attempt == config_.max_attempts) {
                    throw IoError("request failed: " + path);
                }
            } else {
                last_status = res->status;
                if (res->status == 200) return res->body;
                if (res->status == 401 || res->status == 403) {
                    throw AuthFailure("status " + std::to_string(res->status) +
                                      " for " + path);
                }
                if (res->status == 404) {
                    throw NotFound(path);
                }
                if (res->status != 429 && res->status < 500) {
                    throw IoError("unexpected status " +
                                  std::to_string(res->status) + " for " + path);
                }
            }
            std::this_thread::sleep_for(
                    std::chrono::milliseconds(config_.backoff_ms * attempt));
        }
        if (last_status == 429) {
            throw RateLimited("still throttled after " +
                              std::to_string(config_.max_attempts) +
                              " attempts: " + path);
        }
        throw IoError("server errors persisted for " + path);
    }

private:
    ClientConfig config_;
    RateLimiter limiter_;
};

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
}

// Parses the index CSV format: hash,verdict,category,filename.
inline std::vector<SampleDescriptor> parse_index(std::istream& in,
                                                 const std::string& what) {
    std::vector<std::string> fields;
    if (!csv_detail::read_row(in, fields) || fields.size() != 4 ||
        fields[0] != "hash") {
        throw IoError("bad sample index header in " + what);
    }
    std::vector<SampleDescriptor> out;
    while (csv_detail::read_row(in, fields)) {
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (fields.size() != 4) throw IoError("bad sample index row in " + what);
        SampleDescriptor d;
        d.sha256 = fields[0];
        if (!is_sha256_hex(d.sha256)) {
            throw IoError("bad hash in sample index: " + d.sha256);
        }
        if (!fields[1].empty()) d.verdict = fields[1];
        if (!fields[2].empty()) d.category = fields[2];
        d.filename = fields[3];
        out.push_back(std::move(d));
    }
    return out;
}

inline bool matches(const SampleDescriptor& d, const SampleFilter& f) {
    if (f.verdict && (!d.verdict || *d.verdict != *f.verdict)) return false;
    if (f.category && (!d.category || *d.category != *f.category)) return false;
    return true;
}

}  // namespace client_detail

// Sample repository client. Offline mode serves fixtures from
// <offline_dir>/index.csv and <offline_dir>/samples/; live mode speaks the
// same CSV format over HTTP with page-based listing.
class RepositoryClient {
public:
    explicit RepositoryClient(ClientConfig config)
        : config_(std::move(config)), session_(config_) {
        config_.validate();
    }

    std::vector<SampleDescriptor> fetch_sample_list(const SampleFilter& filter = {}) {
        std::vector<SampleDescriptor> all;
        if (config_.offline()) {
            std::string index = config_.offline_dir + "/index.csv";
            std::ifstream in(index, std::ios::binary);
            if (!in) throw FixtureMissing(index);
            all = client_detail::parse_index(in, index);
        } else {
            for (int page = 0;; ++page) {
                std::string body =
                        session_.get("/samples?page=" + std::to_string(page));
                std::istringstream ss(body);
                auto chunk = client_detail::parse_index(ss, "page " +
                                                                std::to_string(page));
                if (chunk.empty()) break;
                all.insert(all.end(), chunk.begin(), chunk.end());
            }
        }
        std::vector<SampleDescriptor> out;
        for (auto& d : all) {
            if (client_detail::matches(d, filter)) {
                out.push_back(std::move(d));
                if (filter.limit && out.size() >= filter.limit) break;
            }
        }
        return out;
    }

    // Fetches into a content-addressed store path <store_dir>/<hash>.apk,
    // verifying the digest. Present-and-valid files are cache hits.
    std::string download_sample(const SampleDescriptor& descriptor,
                                const std::string& store_dir) {
        if (!is_sha256_hex(descriptor.sha256)) {
            throw HashMismatch("descriptor hash is not 64 lowercase hex chars");
        }
        std::filesystem::create_directories(store_dir);
        std::string path = store_dir + "/" + descriptor.sha256 + ".apk";
        if (std::filesystem::exists(path)) {
            if (sha256_file(path) == descriptor.sha256) {
                return path;  // idempotent: no second fetch
            }
            std::filesystem::remove(path);  // stale partial; refetch
        }

        std::vector<uint8_t> bytes;
        if (config_.offline()) {
            std::string name = descriptor.filename.empty()
                                       ? descriptor.sha256 + ".apk"
                                       : descriptor.filename;
            std::string src = config_.offline_dir + "/samples/" + name;
            if (!std::filesystem::exists(src)) throw FixtureMissing(src);
            bytes = client_detail::read_file_bytes(src);
        } else {
            std::string body = session_.get("/download/" + descriptor.sha256);
            bytes.assign(body.begin(), body.end());
        }

        if (sha256_hex(bytes) != descriptor.sha256) {
            throw HashMismatch("payload digest does not match descriptor " +
                               descriptor.sha256);
        }
        std::string tmp = path + ".tmp" + std::to_string(::getpid());
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot write: " + tmp);
            out.write(reinterpret_cast<const char*>(bytes.data()),
                      static_cast<std::streamsize>(bytes.size()));
        }
        std::filesystem::rename(tmp, path);
        return path;
    }

private:
    ClientConfig config_;
    client_detail::HttpSession session_;
};

// Family-string -> canonical-category rules; first match wins,
// case-insensitive substring matching.
class AliasTable {
public:
    static AliasTable load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open alias table: " + path);
        AliasTable t;
        std::string line;
        size_t row = 0;
        while (std::getline(in, line)) {
            ++row;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            std::istringstream ss(line);
            std::string pattern, category;
            if (!(ss >> pattern >> category)) continue;
            if (category_index(category) < 0) {
                throw UnknownCategory("'" + category + "' in alias table line " +
                                      std::to_string(row));
            }
            t.rules_.emplace_back(lower(pattern), category);
        }
        return t;
    }

    void add_rule(const std::string& pattern, const std::string& category) {
        if (category_index(category) < 0) throw UnknownCategory(category);
        rules_.emplace_back(lower(pattern), category);
    }

    std::optional<std::string> map_family(const std::string& family) const {
        std::string f = lower(family);
        for (const auto& [pattern, category] : rules_) {
            if (f.find(pattern) != std::string::npos) return category;
        }
        return std::nullopt;
    }

private:
    static std::string lower(std::string s) {
        for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    }
    std::vector<std::pair<std::string, std::string>> rules_;
};

struct LabelResult {
    std::string verdict;                  // "benign" or "malware"
    std::optional<std::string> category;  // present for malware
};

// Scan-report client. Offline mode reads <offline_dir>/reports.csv with
// hash,family rows; live mode GETs /report/<hash> returning the raw family
// string. Families map to the 11 canonical categories via the alias table.
class ScannerClient {
public:
    ScannerClient(ClientConfig config, AliasTable aliases)
        : config_(std::move(config)), aliases_(std::move(aliases)), session_(config_) {
        config_.validate();
    }

    LabelResult label_sample(const std::string& hash) {
        if (!is_sha256_hex(hash)) throw UnknownHash("malformed hash: " + hash);
        std::string family;
        if (config_.offline()) {
            std::string path = config_.offline_dir + "/reports.csv";
            std::ifstream in(path, std::ios::binary);
            if (!in) throw FixtureMissing(path);
            std::vector<std::string> fields;
            if (!csv_detail::read_row(in, fields) || fields.size() != 2 ||
                fields[0] != "hash") {
                throw IoError("bad reports header in " + path);
            }
            bool found = false;
            while (csv_detail::read_row(in, fields)) {
                if (fields.size() == 2 && fields[0] == hash) {
                    family = fields[1];
                    found = true;
                    break;
                }
            }
            if (!found) throw UnknownHash(hash);
        } else {
            try {
                family = session_.get("/report/" + hash);
            } catch (const NotFound&) {
                throw UnknownHash(hash);
            }
        }
        if (family == "clean" || family == "benign") {
            return {"benign", std::nullopt};
        }
        auto category = aliases_.map_family(family);
        if (!category) {
            throw UnmappableCategory(family);
        }
        return {"malware", category};
    }

private:
    ClientConfig config_;
    AliasTable aliases_;
    client_detail::HttpSession session_;
};

}  // namespace mantis
