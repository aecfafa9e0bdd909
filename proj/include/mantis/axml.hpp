#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "mantis/errors.hpp"
#include "mantis/sha256.hpp"

namespace mantis {

enum class ManifestSourceKind { binary_axml, plain_xml };

// Decoded manifest text plus container identity. apk_hash defaults to the
// hash of the decoded input; callers that know the enclosing APK override it.
struct ManifestDocument {
    std::string apk_hash;
    std::string xml_text;
    ManifestSourceKind source_kind = ManifestSourceKind::plain_xml;
};

struct XmlAttribute {
    std::string name;
    std::string value;
};

struct XmlElement {
    std::string name;
    std::vector<XmlAttribute> attributes;
    std::vector<XmlElement> children;
    std::string text;
};

struct XmlDocument {
    std::vector<XmlElement> roots;
};

namespace axml_detail {

constexpr uint16_t kChunkStringPool = 0x0001;
constexpr uint16_t kChunkXml = 0x0003;
constexpr uint16_t kChunkStartNamespace = 0x0100;
constexpr uint16_t kChunkEndNamespace = 0x0101;
constexpr uint16_t kChunkStartElement = 0x0102;
constexpr uint16_t kChunkEndElement = 0x0103;
constexpr uint16_t kChunkCdata = 0x0104;
constexpr uint16_t kChunkResourceMap = 0x0180;

// Res_value data types that the manifest actually uses.
constexpr uint8_t kTypeNull = 0x00;
constexpr uint8_t kTypeReference = 0x01;
constexpr uint8_t kTypeAttribute = 0x02;
constexpr uint8_t kTypeString = 0x03;
constexpr uint8_t kTypeFloat = 0x04;
constexpr uint8_t kTypeIntDec = 0x10;
constexpr uint8_t kTypeIntHex = 0x11;
constexpr uint8_t kTypeIntBool = 0x12;
constexpr uint8_t kTypeColorArgb8 = 0x1c;
constexpr uint8_t kTypeColorLast = 0x1f;

struct Reader {
    const uint8_t* data;
    size_t size;

    uint16_t u16(size_t off) const {
        check(off, 2);
        return static_cast<uint16_t>(data[off]) |
               static_cast<uint16_t>(data[off + 1]) << 8;
    }
    uint32_t u32(size_t off) const {
        check(off, 4);
        return static_cast<uint32_t>(data[off]) |
               static_cast<uint32_t>(data[off + 1]) << 8 |
               static_cast<uint32_t>(data[off + 2]) << 16 |
               static_cast<uint32_t>(data[off + 3]) << 24;
    }
    void check(size_t off, size_t n) const {
        if (off + n > size) {
            throw NotManifestData("binary XML truncated at offset " +
                                  std::to_string(off));
        }
    }
};

inline void append_utf8(std::string& out, uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// UTF-16LE code units -> UTF-8, pairing surrogates.
inline std::string utf16_to_utf8(const Reader& r, size_t off, size_t units) {
    std::string out;
    out.reserve(units);
    for (size_t i = 0; i < units; ++i) {
        uint32_t cp = r.u16(off + 2 * i);
        if (cp >= 0xD800 && cp <= 0xDBFF && i + 1 < units) {
            uint32_t lo = r.u16(off + 2 * (i + 1));
            if (lo >= 0xDC00 && lo <= 0xDFFF) {
                cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
                ++i;
            }
        }
        append_utf8(out, cp);
    }
    return out;
}

class StringPool {
public:
    void parse(const Reader& r, size_t chunk, uint32_t chunk_size) {
        uint16_t header_size = r.u16(chunk + 2);
        uint32_t string_count = r.u32(chunk + 8);
        uint32_t flags = r.u32(chunk + 16);
        uint32_t strings_start = r.u32(chunk + 20);
        bool utf8 = flags & (1u << 8);

        if (header_size < 28 || strings_start >= chunk_size) {
            throw CorruptStringPool("string pool header out of bounds");
        }
        strings_.clear();
        strings_.reserve(string_count);
        for (uint32_t i = 0; i < string_count; ++i) {
            uint32_t rel = r.u32(chunk + header_size + 4ull * i);
            size_t at = chunk + strings_start + rel;
            if (at >= chunk + chunk_size) {
                throw CorruptStringPool("string offset out of bounds");
            }
            strings_.push_back(utf8 ? read_utf8(r, at) : read_utf16(r, at));
        }
    }

    const std::string& at(uint32_t idx) const {
        if (idx >= strings_.size()) {
            throw CorruptStringPool("string index " + std::to_string(idx) +
                                    " out of range");
        }
        return strings_[idx];
    }
    bool valid(uint32_t idx) const { return idx < strings_.size(); }
    size_t size() const { return strings_.size(); }

private:
    static std::string read_utf16(const Reader& r, size_t at) {
        size_t len = r.u16(at);
        at += 2;
        if (len & 0x8000) {
            len = ((len & 0x7fff) << 16) | r.u16(at);
            at += 2;
        }
        r.check(at, 2 * len);
        return utf16_to_utf8(r, at, len);
    }

    static std::string read_utf8(const Reader& r, size_t at) {
        // char count (unused), then byte count; both with a high-bit extension.
        size_t char_len = r.data[at] & 0xFF;
        r.check(at, 1);
        at += 1;
        if (char_len & 0x80) {
            r.check(at, 1);
            at += 1;
        }
        r.check(at, 1);
        size_t byte_len = r.data[at];
        at += 1;
        if (byte_len & 0x80) {
            r.check(at, 1);
            byte_len = ((byte_len & 0x7f) << 8) | r.data[at];
            at += 1;
        }
        r.check(at, byte_len);
        return std::string(reinterpret_cast<const char*>(r.data + at), byte_len);
    }

    std::vector<std::string> strings_;
};

inline std::string format_typed_value(const StringPool& pool, uint8_t type,
                                      uint32_t data) {
    char buf[32];
    switch (type) {
        case kTypeNull:
            return "";
        case kTypeReference:
            std::snprintf(buf, sizeof(buf), "@0x%08x", data);
            return buf;
        case kTypeAttribute:
            std::snprintf(buf, sizeof(buf), "?0x%08x", data);
            return buf;
        case kTypeString:
            return pool.valid(data) ? pool.at(data) : "";
        case kTypeFloat: {
            float f;
            static_assert(sizeof(f) == sizeof(data));
            std::memcpy(&f, &data, sizeof(f));
            std::snprintf(buf, sizeof(buf), "%g", static_cast<double>(f));
            return buf;
        }
        case kTypeIntDec:
        case kTypeIntHex:
            std::snprintf(buf, sizeof(buf), "%d", static_cast<int32_t>(data));
            return buf;
        case kTypeIntBool:
            return data != 0 ? "true" : "false";
        default:
            if (type >= kTypeColorArgb8 && type <= kTypeColorLast) {
                std::snprintf(buf, sizeof(buf), "#%08x", data);
                return buf;
            }
            std::snprintf(buf, sizeof(buf), "type0x%02x/0x%08x", type, data);
            return buf;
    }
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

}  // namespace axml_detail

inline bool looks_like_binary_xml(const std::vector<uint8_t>& raw) {
    if (raw.size() < 8) return false;
    axml_detail::Reader r{raw.data(), raw.size()};
    return r.u16(0) == axml_detail::kChunkXml && r.u16(2) == 8;
}

inline bool looks_like_plain_xml(const std::vector<uint8_t>& raw) {
    size_t i = 0;
    if (raw.size() >= 3 && raw[0] == 0xEF && raw[1] == 0xBB && raw[2] == 0xBF) {
        i = 3;  // UTF-8 BOM
    }
    while (i < raw.size() &&
           (raw[i] == ' ' || raw[i] == '\t' || raw[i] == '\r' || raw[i] == '\n')) {
        ++i;
    }
    return i < raw.size() && raw[i] == '<';
}

// Structured parse of the Android binary-XML chunk stream. Unknown chunk
// types are skipped; a note lands in `warnings` when provided.
inline XmlDocument parse_binary_xml(const std::vector<uint8_t>& raw,
                                    std::vector<std::string>* warnings = nullptr) {
    using namespace axml_detail;
    if (!looks_like_binary_xml(raw)) {
        throw NotManifestData("missing binary XML file header");
    }
    Reader r{raw.data(), raw.size()};
    uint32_t file_size = r.u32(4);
    if (file_size > raw.size()) {
        throw NotManifestData("declared size exceeds available bytes");
    }

    StringPool pool;
    XmlDocument doc;
    std::vector<XmlElement*> stack;
    // Namespaces declared but not yet attached to an element, and the
    // currently active prefix map (uri index -> prefix index).
    std::vector<std::pair<uint32_t, uint32_t>> pending_ns;
    std::vector<std::pair<uint32_t, uint32_t>> active_ns;

    auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
    };

    auto resolve_prefix = [&](uint32_t uri_idx) -> const std::string* {
        for (auto it = active_ns.rbegin(); it != active_ns.rend(); ++it) {
            if (it->first == uri_idx) return &pool.at(it->second);
        }
        return nullptr;
    };

    size_t pos = 8;
    while (pos + 8 <= file_size) {
        uint16_t type = r.u16(pos);
        uint16_t header_size = r.u16(pos + 2);
        uint32_t size = r.u32(pos + 4);
        if (size < 8 || pos + size > file_size) {
            throw NotManifestData("chunk overruns file at offset " +
                                  std::to_string(pos));
        }
        switch (type) {
            case kChunkStringPool:
                pool.parse(r, pos, size);
                break;
            case kChunkResourceMap:
                break;  // attribute resource ids; names come from the pool
            case kChunkStartNamespace: {
                uint32_t prefix = r.u32(pos + 16);
                uint32_t uri = r.u32(pos + 20);
                pending_ns.emplace_back(uri, prefix);
                active_ns.emplace_back(uri, prefix);
                break;
            }
            case kChunkEndNamespace:
                if (!active_ns.empty()) active_ns.pop_back();
                break;
            case kChunkStartElement: {
                size_t ext = pos + header_size;
                uint32_t name_idx = r.u32(ext + 4);
                uint16_t attr_start = r.u16(ext + 8);
                uint16_t attr_size = r.u16(ext + 10);
                uint16_t attr_count = r.u16(ext + 12);

                XmlElement elem;
                elem.name = pool.at(name_idx);
                for (auto& [uri, prefix] : pending_ns) {
                    elem.attributes.push_back(
                            {"xmlns:" + pool.at(prefix), pool.at(uri)});
                }
                pending_ns.clear();

                for (uint16_t i = 0; i < attr_count; ++i) {
                    size_t a = ext + attr_start + static_cast<size_t>(i) * attr_size;
                    uint32_t a_ns = r.u32(a);
                    uint32_t a_name = r.u32(a + 4);
                    uint32_t a_raw = r.u32(a + 8);
                    uint8_t v_type = r.data[a + 15];
                    r.check(a + 16, 4);
                    uint32_t v_data = r.u32(a + 16);

                    std::string name;
                    if (a_ns != 0xFFFFFFFF) {
                        if (const std::string* prefix = resolve_prefix(a_ns)) {
                            name = *prefix + ":";
                        }
                    }
                    if (pool.valid(a_name) && !pool.at(a_name).empty()) {
                        name += pool.at(a_name);
                    } else {
                        char buf[24];
                        std::snprintf(buf, sizeof(buf), "attr0x%08x", a_name);
                        name += buf;
                        warn(std::string("attribute name missing from pool: ") + buf);
                    }

                    std::string value = a_raw != 0xFFFFFFFF && pool.valid(a_raw)
                                                ? pool.at(a_raw)
                                                : format_typed_value(pool, v_type, v_data);
                    elem.attributes.push_back({std::move(name), std::move(value)});
                }

                if (stack.empty()) {
                    doc.roots.push_back(std::move(elem));
                    stack.push_back(&doc.roots.back());
                } else {
                    stack.back()->children.push_back(std::move(elem));
                    stack.push_back(&stack.back()->children.back());
                }
                break;
            }
            case kChunkEndElement:
                if (!stack.empty()) stack.pop_back();
                break;
            case kChunkCdata: {
                uint32_t text_idx = r.u32(pos + 16);
                if (!stack.empty() && pool.valid(text_idx)) {
                    stack.back()->text += pool.at(text_idx);
                }
                break;
            }
            default: {
                char buf[16];
                std::snprintf(buf, sizeof(buf), "0x%04x", type);
                warn(std::string("skipping unknown chunk type ") + buf);
                break;
            }
        }
        pos += size;
    }

    if (doc.roots.empty()) {
        throw NotManifestData("no elements in binary XML stream");
    }
    return doc;
}

inline void render_element(const XmlElement& e, int depth, std::string& out) {
    using axml_detail::xml_escape;
    std::string indent(static_cast<size_t>(depth) * 2, ' ');
    out += indent + "<" + e.name;
    for (const auto& a : e.attributes) {
        out += " " + a.name + "=\"" + xml_escape(a.value) + "\"";
    }
    if (e.children.empty() && e.text.empty()) {
        out += "/>\n";
        return;
    }
    out += ">\n";
    if (!e.text.empty()) {
        out += indent + "  " + xml_escape(e.text) + "\n";
    }
    for (const auto& c : e.children) {
        render_element(c, depth + 1, out);
    }
    out += indent + "</" + e.name + ">\n";
}

inline std::string render_xml(const XmlDocument& doc) {
    std::string out = "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n";
    for (const auto& root : doc.roots) {
        render_element(root, 0, out);
    }
    return out;
}

// Flattened structural rows: "E<TAB>element" per element and
// "A<TAB>element<TAB>attr<TAB>value" per attribute. Order-independent
// comparisons sort these first.
inline void structure_triples(const XmlElement& e, std::vector<std::string>& out) {
    out.push_back("E\t" + e.name);
    for (const auto& a : e.attributes) {
        out.push_back("A\t" + e.name + "\t" + a.name + "\t" + a.value);
    }
    for (const auto& c : e.children) {
        structure_triples(c, out);
    }
}

inline std::vector<std::string> structure_triples(const XmlDocument& doc) {
    std::vector<std::string> out;
    for (const auto& root : doc.roots) {
        structure_triples(root, out);
    }
    return out;
}

// Decodes manifest bytes: binary XML is parsed and re-rendered as text,
// textual XML passes through unchanged.
inline ManifestDocument decode_axml(const std::vector<uint8_t>& raw,
                                    std::vector<std::string>* warnings = nullptr) {
    if (raw.empty()) {
        throw NotManifestData("empty input");
    }
    ManifestDocument doc;
    doc.apk_hash = sha256_hex(raw);
    if (looks_like_binary_xml(raw)) {
        doc.source_kind = ManifestSourceKind::binary_axml;
        doc.xml_text = render_xml(parse_binary_xml(raw, warnings));
    } else if (looks_like_plain_xml(raw)) {
        doc.source_kind = ManifestSourceKind::plain_xml;
        doc.xml_text.assign(raw.begin(), raw.end());
    } else {
        throw NotManifestData("neither binary XML nor textual XML");
    }
    return doc;
}

}  // namespace mantis
