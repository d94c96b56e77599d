#include "fedvit/wire.hpp"

#include <bit>
#include <cstring>
#include <limits>

#include "fedvit/common.hpp"

namespace fedvit {

std::uint32_t crc32(std::span<const unsigned char> bytes) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) {
                c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            }
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (unsigned char b : bytes) {
        crc = table[(crc ^ b) & 0xFFu] ^ (crc >> 8);
    }
    return crc ^ 0xFFFFFFFFu;
}

namespace {

static_assert(std::numeric_limits<double>::is_iec559, "wire format assumes IEEE-754 doubles");

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::vector<unsigned char>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xFF));
}

// Sequential reader over the message body with bounds checking.
class Cursor {
  public:
    explicit Cursor(std::span<const unsigned char> bytes) : bytes_(bytes) {}

    std::uint8_t u8() { return take(1)[0]; }

    std::uint16_t u16() {
        const auto b = take(2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::uint32_t u32() {
        const auto b = take(4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    double f64() {
        const auto b = take(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return std::bit_cast<double>(bits);
    }

    std::string str(std::size_t n) {
        const auto b = take(n);
        return std::string(reinterpret_cast<const char*>(b.data()), n);
    }

    bool done() const { return pos_ == bytes_.size(); }

  private:
    std::span<const unsigned char> take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError("model update: truncated message body");
        const auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> serialize_update(const ModelUpdate& u) {
    if (u.sample_count < 1) throw FormatError("model update: sample count must be >= 1");
    if (u.tensors.size() > 0xFFFF) throw FormatError("model update: too many tensors");

    std::vector<unsigned char> body;
    put_u16(body, kWireVersion);
    put_u32(body, u.round);
    put_u32(body, u.client_id);
    body.push_back(static_cast<unsigned char>(u.kind));
    put_u32(body, u.sample_count);
    put_u16(body, static_cast<std::uint16_t>(u.tensors.size()));
    for (const NamedTensor& t : u.tensors) {
        if (t.name.empty() || t.name.size() > 0xFFFF) {
            throw FormatError("model update: bad tensor name length");
        }
        if (t.dims.empty() || t.dims.size() > 0xFF) {
            throw FormatError("model update: tensor '" + t.name + "' has bad rank");
        }
        std::size_t count = 1;
        for (std::uint32_t d : t.dims) count *= d;
        if (count != t.data.size()) {
            throw FormatError("model update: tensor '" + t.name + "' dims do not match data size");
        }
        put_u16(body, static_cast<std::uint16_t>(t.name.size()));
        body.insert(body.end(), t.name.begin(), t.name.end());
        body.push_back(static_cast<unsigned char>(t.dims.size()));
        for (std::uint32_t d : t.dims) put_u32(body, d);
        for (double v : t.data) put_f64(body, v);
    }

    std::vector<unsigned char> out;
    out.reserve(body.size() + 8);
    put_u32(out, static_cast<std::uint32_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
    put_u32(out, crc32(body));
    return out;
}

ModelUpdate parse_update(std::span<const unsigned char> bytes) {
    if (bytes.size() < 8) throw FormatError("model update: message shorter than framing");
    Cursor frame(bytes);
    const std::uint32_t body_len = frame.u32();
    if (bytes.size() != 8 + static_cast<std::size_t>(body_len)) {
        throw FormatError("model update: framing says " + std::to_string(body_len) +
                          " body bytes, message has " + std::to_string(bytes.size() - 8));
    }
    const auto body = bytes.subspan(4, body_len);
    const std::uint32_t stored_crc = static_cast<std::uint32_t>(bytes[4 + body_len]) |
                                     (static_cast<std::uint32_t>(bytes[5 + body_len]) << 8) |
                                     (static_cast<std::uint32_t>(bytes[6 + body_len]) << 16) |
                                     (static_cast<std::uint32_t>(bytes[7 + body_len]) << 24);
    const std::uint32_t actual_crc = crc32(body);
    if (stored_crc != actual_crc) {
        throw FormatError("model update: CRC mismatch (stored " + to_hex(stored_crc) +
                          ", computed " + to_hex(actual_crc) + ")");
    }

    Cursor c(body);
    ModelUpdate u;
    const std::uint16_t version = c.u16();
    if (version != kWireVersion) {
        throw FormatError("model update: unsupported version " + std::to_string(version));
    }
    u.round = c.u32();
    u.client_id = c.u32();
    const std::uint8_t kind = c.u8();
    if (kind > 1) throw FormatError("model update: unknown payload kind " + std::to_string(kind));
    u.kind = static_cast<PayloadKind>(kind);
    u.sample_count = c.u32();
    if (u.sample_count < 1) throw FormatError("model update: sample count must be >= 1");
    const std::uint16_t n_tensors = c.u16();
    u.tensors.reserve(n_tensors);
    for (std::uint16_t i = 0; i < n_tensors; ++i) {
        NamedTensor t;
        const std::uint16_t name_len = c.u16();
        if (name_len == 0) throw FormatError("model update: empty tensor name");
        t.name = c.str(name_len);
        const std::uint8_t rank = c.u8();
        if (rank == 0) throw FormatError("model update: tensor '" + t.name + "' has rank 0");
        t.dims.resize(rank);
        std::size_t count = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            t.dims[d] = c.u32();
            count *= t.dims[d];
        }
        if (count > body.size() / 8 + 1) {
            throw FormatError("model update: tensor '" + t.name + "' larger than message");
        }
        t.data.resize(count);
        for (std::size_t j = 0; j < count; ++j) t.data[j] = c.f64();
        u.tensors.push_back(std::move(t));
    }
    if (!c.done()) throw FormatError("model update: trailing bytes after last tensor");
    return u;
}

ModelUpdate update_from_model(const ViTModel& m, std::uint32_t client_id, std::uint32_t round,
                              PayloadKind kind, std::uint32_t sample_count) {
    ModelUpdate u;
    u.client_id = client_id;
    u.round = round;
    u.kind = kind;
    u.sample_count = sample_count;
    visit_params(m, [&](const std::string& name, const std::vector<double>& data,
                        std::vector<std::uint32_t> dims) {
        u.tensors.push_back(NamedTensor{name, std::move(dims), data});
    });
    return u;
}

void apply_update_to_model(ViTModel& m, const ModelUpdate& u) {
    std::size_t i = 0;
    visit_params(m, [&](const std::string& name, std::vector<double>& data,
                        std::vector<std::uint32_t> dims) {
        if (i >= u.tensors.size()) {
            throw ShapeError("model update missing tensor '" + name + "'");
        }
        const NamedTensor& t = u.tensors[i++];
        if (t.name != name) {
            throw ShapeError("model update tensor mismatch: expected '" + name + "', got '" +
                             t.name + "'");
        }
        if (t.dims != dims || t.data.size() != data.size()) {
            throw ShapeError("model update tensor '" + name + "' has wrong shape");
        }
        data = t.data;
    });
    if (i != u.tensors.size()) {
        throw ShapeError("model update has " + std::to_string(u.tensors.size() - i) +
                         " unexpected extra tensors");
    }
}

}  // namespace fedvit
