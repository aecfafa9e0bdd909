#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <map>
#include <sstream>

#include "mantis/zip.hpp"

using namespace mantis;

namespace {

const std::string kFix = std::string(MANTIS_FIXTURES_DIR) + "/zip/";

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
}

struct ListedEntry {
    int method;
    uint64_t csize;
    uint64_t usize;
    uint32_t crc;
};

// Entry table as reported by the archiver that built the fixture.
std::map<std::string, ListedEntry> read_listing(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::map<std::string, ListedEntry> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string name, f;
        std::getline(ss, name, ',');
        ListedEntry e{};
        std::getline(ss, f, ',');
        e.method = std::stoi(f);
        std::getline(ss, f, ',');
        e.csize = std::stoull(f);
        std::getline(ss, f, ',');
        e.usize = std::stoull(f);
        std::getline(ss, f, ',');
        e.crc = static_cast<uint32_t>(std::stoull(f));
        out[name] = e;
    }
    return out;
}

}  // namespace

TEST_CASE("minimal empty container") {
    auto archive = open_apk(read_file(kFix + "empty.zip"));
    CHECK(archive.entries().empty());
    CHECK_THROWS_AS(extract_manifest(archive), ManifestMissing);
}

TEST_CASE("entry table matches the independent archiver's listing") {
    for (const std::string base : {"stored", "deflated", "no_manifest"}) {
        auto archive = open_apk_file(kFix + base + ".apk");
        auto listing = read_listing(kFix + base + ".apk.listing");
        REQUIRE(archive.entries().size() == listing.size());
        for (const auto& e : archive.entries()) {
            INFO(base << " / " << e.name);
            REQUIRE(listing.count(e.name) == 1);
            const auto& ref = listing[e.name];
            CHECK(e.method == ref.method);
            CHECK(e.compressed_size == ref.csize);
            CHECK(e.uncompressed_size == ref.usize);
            CHECK(e.crc32 == ref.crc);
        }
    }
}

TEST_CASE("stored manifest round-trips exactly") {
    auto archive = open_apk_file(kFix + "stored.apk");
    auto payload = read_file(kFix + "stored.payload");
    CHECK(extract_manifest(archive) == payload);
}

TEST_CASE("deflated manifest round-trips exactly") {
    auto archive = open_apk_file(kFix + "deflated.apk");
    auto payload = read_file(kFix + "deflated.payload");
    CHECK(extract_manifest(archive) == payload);
}

TEST_CASE("missing manifest entry") {
    auto archive = open_apk_file(kFix + "no_manifest.apk");
    CHECK(archive.find("classes.dex") != nullptr);
    CHECK_THROWS_AS(extract_manifest(archive), ManifestMissing);
}

TEST_CASE("garbage bytes without central directory are rejected") {
    std::vector<uint8_t> junk(100);
    for (size_t i = 0; i < junk.size(); ++i) junk[i] = static_cast<uint8_t>(i * 37 + 11);
    CHECK_THROWS_AS(open_apk(junk), BadCentralDirectory);

    std::vector<uint8_t> tiny{'P', 'K'};
    CHECK_THROWS_AS(open_apk(tiny), TruncatedArchive);
}

TEST_CASE("truncated archive body is rejected on read") {
    auto bytes = read_file(kFix + "stored.apk");
    // corrupt an entry offset: truncate file body but keep the tail with EOCD
    std::vector<uint8_t> cut(bytes.end() - 120, bytes.end());
    CHECK_THROWS(open_apk(cut));
}

TEST_CASE("unsupported compression method is rejected at open") {
    auto bytes = read_file(kFix + "stored.apk");
    auto archive = open_apk(bytes);
    // patch the method field of the first central record to bzip2 (12)
    // central dir offset: find first central record signature
    size_t cd = 0;
    for (size_t i = 0; i + 4 <= bytes.size(); ++i) {
        if (bytes[i] == 0x50 && bytes[i + 1] == 0x4b && bytes[i + 2] == 0x01 &&
            bytes[i + 3] == 0x02) {
            cd = i;
            break;
        }
    }
    REQUIRE(cd != 0);
    bytes[cd + 10] = 12;
    bytes[cd + 11] = 0;
    CHECK_THROWS_AS(open_apk(bytes), UnsupportedCompression);
}

TEST_CASE("corrupted payload fails the crc check") {
    auto bytes = read_file(kFix + "deflated.apk");
    auto archive = open_apk(bytes);
    const ZipEntry* e = archive.find("AndroidManifest.xml");
    REQUIRE(e != nullptr);
    // flip one byte inside the compressed payload region
    auto tampered = bytes;
    tampered[e->local_header_offset + 30 + e->name.size() + 5] ^= 0x40;
    auto archive2 = open_apk(tampered);
    CHECK_THROWS_AS(extract_manifest(archive2), DecompressionFailure);
}
