#include "fedvit/cipher.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace fedvit {

using nlohmann::json;

namespace {

void check_key_model(const KeyPair& k, const ViTConfig& c) {
    if (k.L != c.patch_len() || k.N != c.n_patches()) {
        throw ShapeError("key (L=" + std::to_string(k.L) + ", N=" + std::to_string(k.N) +
                         ") does not match model (L=" + std::to_string(c.patch_len()) +
                         ", N=" + std::to_string(c.n_patches()) + ")");
    }
}

}  // namespace

EncryptedModel encrypt_model(const ViTModel& m, const KeyPair& k) {
    check_key_model(k, m.config);
    validate_keypair(k);
    EncryptedModel em;
    em.model = m;
    em.model.patch_embed = mat_mul(k.patch_key, m.patch_embed);
    em.model.pos_embed = mat_mul(build_Eb(k.perm), m.pos_embed);
    em.key_fingerprint = key_fingerprint(k);
    return em;
}

EncryptedImage encrypt_image(const ImageTensor& x, const KeyPair& k, std::size_t p) {
    if (p == 0 || x.h % p != 0 || x.w % p != 0) {
        throw ShapeError("encrypt_image: patch size " + std::to_string(p) +
                         " does not divide image " + std::to_string(x.h) + "x" +
                         std::to_string(x.w));
    }
    const Matrix patches = patchify(x, p);
    if (k.L != patches.cols || k.N != patches.rows) {
        throw ShapeError("encrypt_image: key (L=" + std::to_string(k.L) +
                         ", N=" + std::to_string(k.N) + ") does not match image blocks (L=" +
                         std::to_string(patches.cols) + ", N=" + std::to_string(patches.rows) +
                         ")");
    }
    const Matrix ea_inv = mat_inverse(k.patch_key);

    EncryptedImage e;
    e.h = x.h;
    e.w = x.w;
    e.c = x.c;
    e.p = p;
    e.mode = k.mode;
    e.key_fingerprint = key_fingerprint(k);
    e.blocks = Matrix(k.N, k.L);
    for (std::size_t i = 0; i < k.N; ++i) {
        const std::size_t src = k.perm[i] - 1;  // block l_t[i], 1-based in the key
        const Vector enc = row_times_mat(patches.row(src), ea_inv);
        std::copy(enc.begin(), enc.end(), e.blocks.data.data() + i * k.L);
    }
    return e;
}

ImageTensor decrypt_image(const EncryptedImage& e, const KeyPair& k) {
    if (k.L != e.blocks.cols || k.N != e.blocks.rows) {
        throw ShapeError("decrypt_image: key does not match encrypted image dimensions");
    }
    const std::size_t p = e.p;
    const std::size_t bw = e.w / p;
    ImageTensor out(e.h, e.w, e.c);
    for (std::size_t i = 0; i < k.N; ++i) {
        const Vector plain = row_times_mat(e.blocks.row(i), k.patch_key);
        const std::size_t dst = k.perm[i] - 1;
        const std::size_t br = dst / bw;
        const std::size_t bc = dst % bw;
        for (std::size_t r = 0; r < p; ++r) {
            for (std::size_t col = 0; col < p; ++col) {
                for (std::size_t ch = 0; ch < e.c; ++ch) {
                    out.at(br * p + r, bc * p + col, ch) = plain[(r * p + col) * e.c + ch];
                }
            }
        }
    }
    return out;
}

Vector encrypted_forward(const EncryptedModel& em, const EncryptedImage& e) {
    if (em.key_fingerprint != e.key_fingerprint) {
        throw KeyValidationError("encrypted_forward: model fingerprint " + em.key_fingerprint +
                                 " does not match image fingerprint " + e.key_fingerprint);
    }
    return forward_from_patches(em.model, e.blocks);
}

EquivalenceReport verify_equivalence(const ViTModel& m, const KeyPair& k, const ImageTensor& x) {
    const Matrix patches = patchify(x, m.config.patch);
    const Matrix z0_plain = embed(m, patches);
    const ForwardTrace plain = run_forward(m, z0_plain);

    const EncryptedModel em = encrypt_model(m, k);
    const EncryptedImage ei = encrypt_image(x, k, m.config.patch);
    const Matrix z0_enc = embed(em.model, ei.blocks);
    const ForwardTrace enc = run_forward(em.model, z0_enc);

    const Matrix expected_z0 = mat_mul(build_Eb(k.perm), z0_plain);

    EquivalenceReport r;
    r.max_z0_row_diff = max_abs_diff(z0_enc, expected_z0);
    r.max_logit_diff = max_abs_diff(std::span<const double>(enc.logits),
                                    std::span<const double>(plain.logits));
    r.argmax_match = argmax(enc.logits) == argmax(plain.logits);
    if (k.mode == KeyMode::Permutation) {
        r.pass = r.max_z0_row_diff == 0.0 && r.max_logit_diff == 0.0 && r.argmax_match;
    } else {
        r.pass = r.max_z0_row_diff < kZ0TolOrthogonal && r.max_logit_diff < kLogitTolOrthogonal &&
                 r.argmax_match;
    }
    return r;
}

double encrypted_accuracy(const ViTModel& m, const KeyPair& k, std::span<const Sample> samples) {
    if (samples.empty()) throw Error("encrypted_accuracy: no samples");
    const EncryptedModel em = encrypt_model(m, k);
    std::size_t hits = 0;
    for (const Sample& s : samples) {
        const EncryptedImage ei = encrypt_image(s.image, k, m.config.patch);
        const Vector logits = encrypted_forward(em, ei);
        if (argmax(logits) == s.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

ImageTensor encrypted_to_pixels(const EncryptedImage& e) {
    const std::size_t p = e.p;
    const std::size_t bw = e.w / p;
    ImageTensor out(e.h, e.w, e.c);
    for (std::size_t i = 0; i < e.blocks.rows; ++i) {
        const auto block = e.blocks.row(i);
        const std::size_t br = i / bw;
        const std::size_t bc = i % bw;
        for (std::size_t r = 0; r < p; ++r) {
            for (std::size_t col = 0; col < p; ++col) {
                for (std::size_t ch = 0; ch < e.c; ++ch) {
                    out.at(br * p + r, bc * p + col, ch) = block[(r * p + col) * e.c + ch];
                }
            }
        }
    }
    return out;
}

void save_encrypted_image(const EncryptedImage& e, const std::string& path) {
    json header;
    header["version"] = 1;
    header["h"] = e.h;
    header["w"] = e.w;
    header["c"] = e.c;
    header["p"] = e.p;
    header["N"] = e.blocks.rows;
    header["L"] = e.blocks.cols;
    header["mode"] = key_mode_name(e.mode);
    header["key_fingerprint"] = e.key_fingerprint;
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open encrypted image for writing: " + path);
    out.write("EVI1", 4);
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    unsigned char lenb[4] = {static_cast<unsigned char>(hlen & 0xFF),
                             static_cast<unsigned char>((hlen >> 8) & 0xFF),
                             static_cast<unsigned char>((hlen >> 16) & 0xFF),
                             static_cast<unsigned char>((hlen >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(lenb), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (double v : e.blocks.data) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
        out.write(reinterpret_cast<const char*>(b), 8);
    }
    if (!out) throw IoError("failed writing encrypted image: " + path);
}

EncryptedImage load_encrypted_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open encrypted image: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "EVI1", 4) != 0) {
        throw ParseError("encrypted image " + path + ": bad magic");
    }
    unsigned char lenb[4];
    in.read(reinterpret_cast<char*>(lenb), 4);
    if (!in) throw ParseError("encrypted image " + path + ": truncated header length");
    const std::uint32_t hlen = static_cast<std::uint32_t>(lenb[0]) |
                               (static_cast<std::uint32_t>(lenb[1]) << 8) |
                               (static_cast<std::uint32_t>(lenb[2]) << 16) |
                               (static_cast<std::uint32_t>(lenb[3]) << 24);
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw ParseError("encrypted image " + path + ": truncated header");

    EncryptedImage e;
    std::size_t n = 0, l = 0;
    try {
        const json header = json::parse(hs);
        if (header.at("version").get<int>() != 1) {
            throw ParseError("encrypted image " + path + ": unsupported version");
        }
        e.h = header.at("h").get<std::size_t>();
        e.w = header.at("w").get<std::size_t>();
        e.c = header.at("c").get<std::size_t>();
        e.p = header.at("p").get<std::size_t>();
        n = header.at("N").get<std::size_t>();
        l = header.at("L").get<std::size_t>();
        e.mode = key_mode_from_name(header.at("mode").get<std::string>());
        e.key_fingerprint = header.at("key_fingerprint").get<std::string>();
    } catch (const json::exception& ex) {
        throw ParseError("encrypted image " + path + ": bad header: " + ex.what());
    }
    if (n * l != e.h * e.w * e.c || e.p == 0 || e.h % e.p != 0 || e.w % e.p != 0) {
        throw ParseError("encrypted image " + path + ": inconsistent dimensions");
    }
    e.blocks = Matrix(n, l);
    for (double& v : e.blocks.data) {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        if (!in) throw ParseError("encrypted image " + path + ": truncated block data");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        std::memcpy(&v, &bits, 8);
    }
    return e;
}

}  // namespace fedvit
