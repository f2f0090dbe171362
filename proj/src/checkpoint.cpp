#include "dapass/checkpoint.hpp"

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dapass::ckpt {

namespace {

using json = nlohmann::json;

constexpr uint8_t kDtypeF32 = 1;

const std::array<uint32_t, 256>& crc_table() {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

struct Writer {
    std::string buf;
    void u8(uint8_t v) { buf.push_back(static_cast<char>(v)); }
    void u16(uint16_t v) {
        u8(static_cast<uint8_t>(v & 0xff));
        u8(static_cast<uint8_t>(v >> 8));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const std::string& s) { buf.append(s); }
};

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(size_t n) const {
        if (pos + n > buf.size()) throw IoError("checkpoint truncated at byte " + std::to_string(pos));
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16() {
        uint16_t v = u8();
        v |= static_cast<uint16_t>(u8()) << 8;
        return v;
    }
    uint32_t u32() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(u8()) << (8 * i);
        return v;
    }
    uint64_t u64() {
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(u8()) << (8 * i);
        return v;
    }
    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed) {
    uint32_t c = seed ^ 0xFFFFFFFFu;
    const auto& t = crc_table();
    for (size_t i = 0; i < n; ++i) c = t[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const ParamSnapshot<float>& snap, const CheckpointMeta& meta,
                     const std::string& path) {
    Writer w;
    w.bytes("DPSS");
    w.u16(kVersion);
    json m;
    m["tag"] = meta.tag.empty() ? snap.tag : meta.tag;
    m["iteration"] = meta.iteration != 0 ? meta.iteration : snap.iteration;
    m["config"] = meta.config_echo;
    const std::string mjson = m.dump();
    w.u32(static_cast<uint32_t>(mjson.size()));
    w.bytes(mjson);
    w.u32(static_cast<uint32_t>(snap.values.size()));
    for (const auto& [name, t] : snap.values) {
        w.u32(static_cast<uint32_t>(name.size()));
        w.bytes(name);
        w.u8(kDtypeF32);
        w.u8(static_cast<uint8_t>(t.rank()));
        for (size_t i = 0; i < t.rank(); ++i) w.u64(static_cast<uint64_t>(t.dim(i)));
        for (float v : t.data()) w.f32(v);
    }
    const uint32_t crc = crc32(reinterpret_cast<const uint8_t*>(w.buf.data()), w.buf.size());
    w.u32(crc);

    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!f) throw IoError("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 10) throw IoError("checkpoint too small: " + path);

    const size_t crc_off = buf.size() - 4;
    const uint32_t stored = static_cast<uint8_t>(buf[crc_off]) |
                            static_cast<uint32_t>(static_cast<uint8_t>(buf[crc_off + 1])) << 8 |
                            static_cast<uint32_t>(static_cast<uint8_t>(buf[crc_off + 2])) << 16 |
                            static_cast<uint32_t>(static_cast<uint8_t>(buf[crc_off + 3])) << 24;
    const uint32_t computed = crc32(reinterpret_cast<const uint8_t*>(buf.data()), crc_off);
    if (stored != computed)
        throw IoError("checkpoint CRC mismatch at byte offset " + std::to_string(crc_off) +
                      ": stored " + std::to_string(stored) + ", computed " +
                      std::to_string(computed));

    Reader r(buf);
    if (r.bytes(4) != "DPSS") throw IoError("bad checkpoint magic in " + path);
    const uint16_t version = r.u16();
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) +
                      " (expected " + std::to_string(kVersion) + ")");

    LoadedCheckpoint out;
    const uint32_t mlen = r.u32();
    const std::string mjson = r.bytes(mlen);
    json m = json::parse(mjson);
    out.meta.tag = m.value("tag", "");
    out.meta.iteration = m.value("iteration", static_cast<int64_t>(0));
    out.meta.config_echo = m.value("config", "");
    out.snapshot.tag = out.meta.tag;
    out.snapshot.iteration = out.meta.iteration;

    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t nlen = r.u32();
        std::string name = r.bytes(nlen);
        const uint8_t dtype = r.u8();
        if (dtype != kDtypeF32)
            throw IoError("unsupported dtype code " + std::to_string(dtype) + " for tensor '" +
                          name + "'");
        const uint8_t rank = r.u8();
        Shape shape;
        for (uint8_t k = 0; k < rank; ++k) shape.push_back(static_cast<int64_t>(r.u64()));
        const int64_t n = numel(shape);
        std::vector<float> data(static_cast<size_t>(n));
        for (int64_t k = 0; k < n; ++k) data[static_cast<size_t>(k)] = r.f32();
        for (const auto& [existing, t] : out.snapshot.values)
            if (existing == name)
                throw IoError("duplicate tensor '" + name + "' in checkpoint " + path);
        out.snapshot.values.emplace_back(name,
                                         TensorF::from_data(std::move(shape), std::move(data)));
    }
    return out;
}

}  // namespace dapass::ckpt
