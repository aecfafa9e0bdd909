#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mantis/errors.hpp"

namespace mantis {

// One central-directory record. Sizes and the compression method come from
// the central directory; the local header is consulted only to locate the
// payload bytes.
struct ZipEntry {
    std::string name;
    uint16_t method = 0;  // 0 = stored, 8 = deflate
    uint32_t crc32 = 0;
    uint64_t compressed_size = 0;
    uint64_t uncompressed_size = 0;
    uint64_t local_header_offset = 0;
};

// APK (ZIP) container opened fully in memory. Immutable once constructed.
class ApkArchive {
public:
    static ApkArchive from_bytes(std::vector<uint8_t> bytes,
                                 std::string source = "<memory>") {
        ApkArchive a;
        a.source_ = std::move(source);
        a.data_ = std::move(bytes);
        a.parse_central_directory();
        return a;
    }

    static ApkArchive from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open: " + path);
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
        return from_bytes(std::move(bytes), path);
    }

    const std::string& source() const { return source_; }
    const std::vector<uint8_t>& bytes() const { return data_; }
    const std::vector<ZipEntry>& entries() const { return entries_; }

    const ZipEntry* find(const std::string& name) const {
        for (const auto& e : entries_) {
            if (e.name == name) return &e;
        }
        return nullptr;
    }

    // Decompressed payload of an entry; CRC-checked.
    std::vector<uint8_t> read_entry(const ZipEntry& entry) const {
        // Local header: sig(4) ver(2) flags(2) method(2) time(2) date(2)
        // crc(4) csize(4) usize(4) nlen(2) elen(2).
        uint64_t off = entry.local_header_offset;
        if (off + 30 > data_.size()) {
            throw TruncatedArchive("local header beyond end of file");
        }
        if (read_u32(off) != 0x04034b50) {
            throw BadCentralDirectory("local header signature mismatch for " +
                                      entry.name);
        }
        uint16_t name_len = read_u16(off + 26);
        uint16_t extra_len = read_u16(off + 28);
        uint64_t data_start = off + 30 + name_len + extra_len;
        if (data_start + entry.compressed_size > data_.size()) {
            throw TruncatedArchive("entry payload beyond end of file: " +
                                   entry.name);
        }
        const uint8_t* src = data_.data() + data_start;

        std::vector<uint8_t> out;
        if (entry.method == 0) {
            if (entry.compressed_size != entry.uncompressed_size) {
                throw DecompressionFailure("stored entry size mismatch: " +
                                           entry.name);
            }
            out.assign(src, src + entry.compressed_size);
        } else {  // deflate, validated at open time
            out.resize(entry.uncompressed_size);
            z_stream zs{};
            if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) {
                throw DecompressionFailure("inflate init failed");
            }
            zs.next_in = const_cast<uint8_t*>(src);
            zs.avail_in = static_cast<uInt>(entry.compressed_size);
            zs.next_out = out.data();
            zs.avail_out = static_cast<uInt>(out.size());
            int rc = inflate(&zs, Z_FINISH);
            uint64_t produced = zs.total_out;
            inflateEnd(&zs);
            if (rc != Z_STREAM_END || produced != entry.uncompressed_size) {
                throw DecompressionFailure("inflate failed for " + entry.name);
            }
        }
        uint32_t crc = static_cast<uint32_t>(
                ::crc32(0L, out.data(), static_cast<uInt>(out.size())));
        if (crc != entry.crc32) {
            throw DecompressionFailure("crc mismatch for " + entry.name);
        }
        return out;
    }

private:
    ApkArchive() = default;

    uint16_t read_u16(uint64_t off) const {
        return static_cast<uint16_t>(data_[off]) |
               static_cast<uint16_t>(data_[off + 1]) << 8;
    }
    uint32_t read_u32(uint64_t off) const {
        return static_cast<uint32_t>(data_[off]) |
               static_cast<uint32_t>(data_[off + 1]) << 8 |
               static_cast<uint32_t>(data_[off + 2]) << 16 |
               static_cast<uint32_t>(data_[off + 3]) << 24;
    }

    void parse_central_directory() {
        if (data_.size() < 22) {
            throw TruncatedArchive("shorter than an end-of-central-directory record");
        }
        // EOCD: scan backwards over the (possibly commented) tail.
        uint64_t eocd = UINT64_MAX;
        uint64_t lowest = data_.size() >= 22 + 65535 ? data_.size() - 22 - 65535 : 0;
        for (uint64_t i = data_.size() - 22 + 1; i-- > lowest;) {
            if (read_u32(i) == 0x06054b50) {
                uint16_t comment_len = read_u16(i + 20);
                if (i + 22 + comment_len <= data_.size()) {
                    eocd = i;
                    break;
                }
            }
        }
        if (eocd == UINT64_MAX) {
            throw BadCentralDirectory("no end-of-central-directory record");
        }

        uint16_t disk = read_u16(eocd + 4);
        uint16_t cd_disk = read_u16(eocd + 6);
        uint16_t n_disk = read_u16(eocd + 8);
        uint16_t n_total = read_u16(eocd + 10);
        uint32_t cd_size = read_u32(eocd + 12);
        uint32_t cd_offset = read_u32(eocd + 16);
        if (disk != 0 || cd_disk != 0 || n_disk != n_total) {
            throw BadCentralDirectory("multi-disk archives not supported");
        }
        if (n_total == 0xFFFF || cd_offset == 0xFFFFFFFF || cd_size == 0xFFFFFFFF) {
            throw BadCentralDirectory("zip64 archives not supported");
        }
        if (static_cast<uint64_t>(cd_offset) + cd_size > eocd) {
            throw BadCentralDirectory("central directory outside file bounds");
        }

        std::unordered_set<std::string> seen;
        uint64_t p = cd_offset;
        entries_.reserve(n_total);
        for (uint16_t i = 0; i < n_total; ++i) {
            // Central record: sig(4) vmade(2) vneed(2) flags(2) method(2)
            // time(2) date(2) crc(4) csize(4) usize(4) nlen(2) elen(2)
            // clen(2) disk(2) iattr(2) eattr(4) offset(4) name extra comment.
            if (p + 46 > data_.size() || read_u32(p) != 0x02014b50) {
                throw BadCentralDirectory("central record " + std::to_string(i) +
                                          " malformed");
            }
            uint16_t flags = read_u16(p + 8);
            uint16_t method = read_u16(p + 10);
            uint32_t crc = read_u32(p + 16);
            uint32_t csize = read_u32(p + 20);
            uint32_t usize = read_u32(p + 24);
            uint16_t nlen = read_u16(p + 28);
            uint16_t elen = read_u16(p + 30);
            uint16_t clen = read_u16(p + 32);
            uint32_t offset = read_u32(p + 42);
            if (p + 46 + nlen > data_.size()) {
                throw BadCentralDirectory("entry name beyond end of file");
            }
            std::string name(reinterpret_cast<const char*>(data_.data() + p + 46),
                             nlen);
            if (flags & 0x1) {
                throw UnsupportedCompression("encrypted entry: " + name);
            }
            if (method != 0 && method != 8) {
                throw UnsupportedCompression("method " + std::to_string(method) +
                                             " for entry: " + name);
            }
            if (offset >= data_.size()) {
                throw BadCentralDirectory("entry offset outside file: " + name);
            }
            if (!seen.insert(name).second) {
                throw BadCentralDirectory("duplicate entry name: " + name);
            }
            entries_.push_back(ZipEntry{std::move(name), method, crc, csize,
                                        usize, offset});
            p += 46ULL + nlen + elen + clen;
        }
    }

    std::string source_;
    std::vector<uint8_t> data_;
    std::vector<ZipEntry> entries_;
};

inline ApkArchive open_apk(std::vector<uint8_t> bytes,
                           std::string source = "<memory>") {
    return ApkArchive::from_bytes(std::move(bytes), std::move(source));
}

inline ApkArchive open_apk_file(const std::string& path) {
    return ApkArchive::from_file(path);
}

// Decompressed bytes of the root-level AndroidManifest.xml entry.
inline std::vector<uint8_t> extract_manifest(const ApkArchive& archive) {
    const ZipEntry* e = archive.find("AndroidManifest.xml");
    if (!e) {
        throw ManifestMissing("no AndroidManifest.xml in " + archive.source());
    }
    return archive.read_entry(*e);
}

}  // namespace mantis
