#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <zlib.h>

#include "errors.hpp"
#include "tensor.hpp"

namespace patchedit {

// ---------------------------------------------------------------- raw bytes

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw parse_error("cannot open " + path);
    f.seekg(0, std::ios::end);
    const std::streamoff len = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
    if (len > 0) f.read(reinterpret_cast<char*>(buf.data()), len);
    if (!f) throw parse_error("cannot read " + path);
    return buf;
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw parse_error("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw parse_error("cannot write " + path);
}

inline std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

// ------------------------------------------------------------- tensor files
// Layout: "TGD1", u8 dtype (1 = f32), u8 rank, rank x u64 little-endian dims,
// then row-major little-endian f32 payload. Round-trips bit-exactly.

namespace detail {
inline void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint64_t get_u64_le(const std::vector<std::uint8_t>& b, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
    return v;
}
inline std::uint32_t get_u32_le(const std::vector<std::uint8_t>& b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
    return v;
}
inline std::uint32_t f32_bits(float f) {
    std::uint32_t u;
    static_assert(sizeof(u) == sizeof(f));
    __builtin_memcpy(&u, &f, 4);
    return u;
}
inline float bits_f32(std::uint32_t u) {
    float f;
    __builtin_memcpy(&f, &u, 4);
    return f;
}
} // namespace detail

inline void write_tensor(const std::string& path, const Tensor& t) {
    std::vector<std::uint8_t> out;
    out.reserve(6 + t.rank() * 8 + t.numel() * 4);
    out.insert(out.end(), {'T', 'G', 'D', '1'});
    out.push_back(1); // f32
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i) detail::put_u64_le(out, t.dim(i));
    for (std::size_t i = 0; i < t.numel(); ++i)
        detail::put_u32_le(out, detail::f32_bits(t[i]));
    write_bytes(path, out);
}

inline Tensor read_tensor(const std::string& path) {
    const std::vector<std::uint8_t> b = read_bytes(path);
    if (b.size() < 6 || b[0] != 'T' || b[1] != 'G' || b[2] != 'D' || b[3] != '1')
        throw parse_error(path + ": bad tensor magic at byte 0");
    if (b[4] != 1) throw parse_error(path + ": unknown dtype tag at byte 4");
    const std::size_t rank = b[5];
    std::size_t at = 6;
    if (b.size() < at + rank * 8)
        throw parse_error(path + ": truncated dims at byte " + std::to_string(b.size()));
    std::vector<std::size_t> dims(rank);
    std::size_t numel = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        dims[i] = static_cast<std::size_t>(detail::get_u64_le(b, at));
        numel *= dims[i];
        at += 8;
    }
    if (b.size() != at + numel * 4)
        throw parse_error(path + ": payload length " + std::to_string(b.size() - at) +
                          " != expected " + std::to_string(numel * 4) + " at byte " +
                          std::to_string(at));
    Tensor t(dims);
    for (std::size_t i = 0; i < numel; ++i, at += 4)
        t[i] = detail::bits_f32(detail::get_u32_le(b, at));
    return t;
}

// ------------------------------------------------------------------- NetPBM
// P5 (gray) and P6 (RGB), maxval 255 or 65535, 16-bit samples big-endian.
// Values map to [0,1] by division with maxval.

namespace detail {

struct PbmHeader {
    int kind = 0; // 5 or 6
    std::size_t width = 0, height = 0, maxval = 0, data_at = 0;
};

inline PbmHeader parse_pbm_header(const std::vector<std::uint8_t>& b, const std::string& path) {
    std::size_t at = 0;
    auto fail = [&](const std::string& msg) {
        throw parse_error(path + ": " + msg + " at byte " + std::to_string(at));
    };
    auto skip_space = [&]() {
        while (at < b.size()) {
            if (std::isspace(b[at])) {
                ++at;
            } else if (b[at] == '#') {
                while (at < b.size() && b[at] != '\n') ++at;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> std::size_t {
        skip_space();
        if (at >= b.size() || !std::isdigit(b[at])) fail("expected integer");
        std::size_t v = 0;
        while (at < b.size() && std::isdigit(b[at])) v = v * 10 + (b[at++] - '0');
        return v;
    };

    PbmHeader h;
    if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) fail("not a P5/P6 file");
    h.kind = b[1] - '0';
    at = 2;
    h.width = read_int();
    h.height = read_int();
    h.maxval = read_int();
    if (h.maxval != 255 && h.maxval != 65535) fail("unsupported maxval");
    if (at >= b.size() || !std::isspace(b[at])) fail("missing header terminator");
    ++at;
    h.data_at = at;
    return h;
}

} // namespace detail

inline Tensor read_netpbm(const std::string& path) {
    const std::vector<std::uint8_t> b = read_bytes(path);
    const detail::PbmHeader h = detail::parse_pbm_header(b, path);
    const std::size_t C = h.kind == 5 ? 1 : 3;
    const std::size_t bytes_per = h.maxval == 255 ? 1 : 2;
    const std::size_t need = h.width * h.height * C * bytes_per;
    if (b.size() - h.data_at != need)
        throw parse_error(path + ": payload length " + std::to_string(b.size() - h.data_at) +
                          " != expected " + std::to_string(need) + " at byte " +
                          std::to_string(h.data_at));
    Tensor t({C, h.height, h.width});
    const double inv = 1.0 / static_cast<double>(h.maxval);
    std::size_t at = h.data_at;
    for (std::size_t y = 0; y < h.height; ++y)
        for (std::size_t x = 0; x < h.width; ++x)
            for (std::size_t c = 0; c < C; ++c) {
                std::size_t v = b[at++];
                if (bytes_per == 2) v = (v << 8) | b[at++];
                t.at3(c, y, x) = static_cast<float>(static_cast<double>(v) * inv);
            }
    return t;
}

namespace detail {
inline std::size_t clamp_count(const Tensor& t) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < t.numel(); ++i)
        if (t[i] < 0.0f || t[i] > 1.0f) ++n;
    return n;
}
inline void warn_clamped(std::size_t n, const std::string& path) {
    if (n > 0)
        std::fprintf(stderr, "warning: %zu values clamped to [0,1] writing %s\n", n,
                     path.c_str());
}
inline std::size_t quantize(float v, std::size_t maxval) {
    double d = static_cast<double>(v);
    if (d < 0.0) d = 0.0;
    if (d > 1.0) d = 1.0;
    const double q = d * static_cast<double>(maxval) + 0.5;
    const std::size_t u = static_cast<std::size_t>(q);
    return u > maxval ? maxval : u;
}
} // namespace detail

inline void write_netpbm(const std::string& path, const Tensor& t, std::size_t maxval = 255) {
    require_rank3(t, "image");
    const std::size_t C = t.dim(0);
    if (C != 1 && C != 3)
        throw config_error("NetPBM supports 1 or 3 channels, got " + std::to_string(C));
    if (maxval != 255 && maxval != 65535)
        throw config_error("NetPBM maxval must be 255 or 65535");
    detail::warn_clamped(detail::clamp_count(t), path);

    const std::size_t H = t.dim(1), W = t.dim(2);
    std::string header = (C == 1 ? "P5\n" : "P6\n") + std::to_string(W) + " " +
                         std::to_string(H) + "\n" + std::to_string(maxval) + "\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t v = detail::quantize(t.at3(c, y, x), maxval);
                if (maxval == 65535) out.push_back(static_cast<std::uint8_t>(v >> 8));
                out.push_back(static_cast<std::uint8_t>(v & 0xFF));
            }
    write_bytes(path, out);
}

// ---------------------------------------------------------------------- PNG
// 8-bit grayscale or RGB, no interlace. Writer emits filter 0 rows; reader
// handles all five standard row filters.

namespace detail {

inline void put_png_chunk(std::vector<std::uint8_t>& out, const char type[4],
                          const std::vector<std::uint8_t>& data) {
    const std::uint32_t len = static_cast<std::uint32_t>(data.size());
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    const std::size_t crc_from = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, out.data() + crc_from, static_cast<uInt>(4 + data.size())));
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
}

inline std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
    if (pb <= pc) return static_cast<std::uint8_t>(b);
    return static_cast<std::uint8_t>(c);
}

} // namespace detail

inline void write_png(const std::string& path, const Tensor& t) {
    require_rank3(t, "image");
    const std::size_t C = t.dim(0);
    if (C != 1 && C != 3)
        throw config_error("PNG writer supports 1 or 3 channels, got " + std::to_string(C));
    detail::warn_clamped(detail::clamp_count(t), path);

    const std::size_t H = t.dim(1), W = t.dim(2);
    std::vector<std::uint8_t> raw;
    raw.reserve(H * (1 + W * C));
    for (std::size_t y = 0; y < H; ++y) {
        raw.push_back(0); // filter: none
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c)
                raw.push_back(static_cast<std::uint8_t>(detail::quantize(t.at3(c, y, x), 255)));
    }
    uLongf comp_len = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (::compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) !=
        Z_OK)
        throw parse_error(path + ": deflate failed");
    comp.resize(comp_len);

    std::vector<std::uint8_t> out = {137, 'P', 'N', 'G', 13, 10, 26, 10};
    std::vector<std::uint8_t> ihdr;
    for (int i = 3; i >= 0; --i) ihdr.push_back(static_cast<std::uint8_t>(W >> (8 * i)));
    for (int i = 3; i >= 0; --i) ihdr.push_back(static_cast<std::uint8_t>(H >> (8 * i)));
    ihdr.push_back(8);                                    // bit depth
    ihdr.push_back(C == 1 ? 0 : 2);                       // color type
    ihdr.insert(ihdr.end(), {0, 0, 0});                   // deflate, adaptive, no interlace
    detail::put_png_chunk(out, "IHDR", ihdr);
    detail::put_png_chunk(out, "IDAT", comp);
    detail::put_png_chunk(out, "IEND", {});
    write_bytes(path, out);
}

inline Tensor read_png(const std::string& path) {
    const std::vector<std::uint8_t> b = read_bytes(path);
    static const std::uint8_t sig[8] = {137, 'P', 'N', 'G', 13, 10, 26, 10};
    if (b.size() < 8 || !std::equal(sig, sig + 8, b.begin()))
        throw parse_error(path + ": bad PNG signature at byte 0");

    std::size_t at = 8, W = 0, H = 0, C = 0;
    std::vector<std::uint8_t> idat;
    bool saw_end = false;
    auto be32 = [&](std::size_t p) {
        return (static_cast<std::uint32_t>(b[p]) << 24) |
               (static_cast<std::uint32_t>(b[p + 1]) << 16) |
               (static_cast<std::uint32_t>(b[p + 2]) << 8) | b[p + 3];
    };
    while (at + 8 <= b.size() && !saw_end) {
        const std::uint32_t len = be32(at);
        if (at + 12 + len > b.size())
            throw parse_error(path + ": truncated chunk at byte " + std::to_string(at));
        const std::string type(b.begin() + static_cast<std::ptrdiff_t>(at) + 4,
                               b.begin() + static_cast<std::ptrdiff_t>(at) + 8);
        const std::size_t data = at + 8;
        if (type == "IHDR") {
            if (len != 13) throw parse_error(path + ": bad IHDR at byte " + std::to_string(at));
            W = be32(data);
            H = be32(data + 4);
            const std::uint8_t depth = b[data + 8], color = b[data + 9],
                               interlace = b[data + 12];
            if (depth != 8 || (color != 0 && color != 2) || interlace != 0)
                throw parse_error(path + ": unsupported PNG variant at byte " +
                                  std::to_string(data + 8));
            C = color == 0 ? 1 : 3;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), b.begin() + static_cast<std::ptrdiff_t>(data),
                        b.begin() + static_cast<std::ptrdiff_t>(data + len));
        } else if (type == "IEND") {
            saw_end = true;
        }
        at += 12 + len;
    }
    if (W == 0 || H == 0 || C == 0 || !saw_end)
        throw parse_error(path + ": incomplete PNG at byte " + std::to_string(at));

    const std::size_t stride = W * C;
    std::vector<std::uint8_t> raw(H * (1 + stride));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (::uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) !=
            Z_OK ||
        raw_len != raw.size())
        throw parse_error(path + ": inflate failed");

    // Undo per-row filtering in place into a packed buffer.
    std::vector<std::uint8_t> img(H * stride, 0);
    for (std::size_t y = 0; y < H; ++y) {
        const std::uint8_t f = raw[y * (1 + stride)];
        const std::uint8_t* src = &raw[y * (1 + stride) + 1];
        std::uint8_t* dst = &img[y * stride];
        const std::uint8_t* up = y > 0 ? &img[(y - 1) * stride] : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int left = i >= C ? dst[i - C] : 0;
            const int above = up ? up[i] : 0;
            const int corner = (up && i >= C) ? up[i - C] : 0;
            int v = src[i];
            switch (f) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += above; break;
                case 3: v += (left + above) / 2; break;
                case 4: v += detail::paeth(left, above, corner); break;
                default:
                    throw parse_error(path + ": unknown row filter " + std::to_string(f));
            }
            dst[i] = static_cast<std::uint8_t>(v & 0xFF);
        }
    }

    Tensor t({C, H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c)
                t.at3(c, y, x) = static_cast<float>(img[y * stride + x * C + c] / 255.0);
    return t;
}

// ------------------------------------------------------- format dispatching

inline bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

inline Tensor read_image(const std::string& path) {
    const std::vector<std::uint8_t> head = read_bytes(path);
    if (head.size() >= 2 && head[0] == 'P' && (head[1] == '5' || head[1] == '6'))
        return read_netpbm(path);
    if (head.size() >= 4 && head[0] == 137 && head[1] == 'P')
        return read_png(path);
    throw parse_error(path + ": unrecognized image format at byte 0");
}

inline void write_image(const Tensor& t, const std::string& path, std::size_t maxval = 255) {
    if (has_suffix(path, ".png")) {
        write_png(path, t);
    } else if (has_suffix(path, ".pgm") || has_suffix(path, ".ppm")) {
        write_netpbm(path, t, maxval);
    } else {
        throw config_error(path + ": image extension must be .png, .pgm, or .ppm");
    }
}

// ------------------------------------------------------------ job key=value
// Flat "key = value" lines; '#' starts a comment; keys use dotted sections.

class KeyValues {
public:
    KeyValues() = default;

    static KeyValues parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw parse_error("cannot open " + path);
        KeyValues kv;
        kv.source_ = path;
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const std::string stripped = strip(line);
            if (stripped.empty() || stripped[0] == '#') continue;
            const std::size_t eq = stripped.find('=');
            if (eq == std::string::npos)
                throw parse_error(path + ":" + std::to_string(lineno) + ": expected key = value");
            const std::string key = strip(stripped.substr(0, eq));
            const std::string val = strip(stripped.substr(eq + 1));
            if (key.empty())
                throw parse_error(path + ":" + std::to_string(lineno) + ": empty key");
            if (!kv.map_.emplace(key, val).second)
                throw parse_error(path + ":" + std::to_string(lineno) + ": duplicate key " + key);
        }
        return kv;
    }

    void set(const std::string& key, const std::string& val) { map_[key] = val; }
    bool has(const std::string& key) const { return map_.count(key) > 0; }

    std::string get(const std::string& key) const {
        auto it = map_.find(key);
        if (it == map_.end()) throw config_error(source_ + ": missing required key " + key);
        return it->second;
    }
    std::string get_or(const std::string& key, const std::string& dflt) const {
        auto it = map_.find(key);
        return it == map_.end() ? dflt : it->second;
    }

    long get_int(const std::string& key) const { return to_int(key, get(key)); }
    long get_int_or(const std::string& key, long dflt) const {
        return has(key) ? to_int(key, get(key)) : dflt;
    }
    double get_real(const std::string& key) const { return to_real(key, get(key)); }
    double get_real_or(const std::string& key, double dflt) const {
        return has(key) ? to_real(key, get(key)) : dflt;
    }
    bool get_bool_or(const std::string& key, bool dflt) const {
        if (!has(key)) return dflt;
        const std::string v = get(key);
        if (v == "true" || v == "on" || v == "1") return true;
        if (v == "false" || v == "off" || v == "0") return false;
        throw config_error(source_ + ": key " + key + " must be a boolean, got '" + v + "'");
    }

    const std::map<std::string, std::string>& entries() const { return map_; }
    const std::string& source() const { return source_; }

private:
    static std::string strip(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }
    long to_int(const std::string& key, const std::string& v) const {
        try {
            std::size_t used = 0;
            const long r = std::stol(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw config_error(source_ + ": key " + key + " must be an integer, got '" + v +
                               "'");
        }
    }
    double to_real(const std::string& key, const std::string& v) const {
        try {
            std::size_t used = 0;
            const double r = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw config_error(source_ + ": key " + key + " must be a number, got '" + v + "'");
        }
    }

    std::string source_ = "<args>";
    std::map<std::string, std::string> map_;
};

// ------------------------------------------------------------------ manifest
// One line per artifact, sorted by name, content-addressed. No timestamps, so
// identical runs produce identical manifests.

inline void write_manifest(const std::string& dir, const std::vector<std::string>& names) {
    std::vector<std::string> sorted = names;
    std::sort(sorted.begin(), sorted.end());
    std::string text;
    for (const std::string& name : sorted) {
        const std::uint64_t h = fnv1a64(read_bytes(dir + "/" + name));
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        text += std::string(buf) + "  " + name + "\n";
    }
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    write_bytes(dir + "/manifest.txt", bytes);
}

} // namespace patchedit
