#include "fedvit/keyring.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fedvit {

using nlohmann::json;

std::string key_mode_name(KeyMode mode) {
    return mode == KeyMode::Orthogonal ? "orthogonal" : "permutation";
}

KeyMode key_mode_from_name(const std::string& name) {
    if (name == "orthogonal") return KeyMode::Orthogonal;
    if (name == "permutation") return KeyMode::Permutation;
    throw KeyValidationError("unknown key mode '" + name + "'");
}

KeyPair generate_keypair(std::size_t L, std::size_t N, KeyMode mode, std::uint64_t seed) {
    if (L < 1 || N < 1) {
        throw KeyValidationError("generate_keypair: L and N must be >= 1");
    }
    KeyPair k;
    k.mode = mode;
    k.seed = seed;
    k.rng_algorithm = Rng::kAlgorithm;
    k.L = L;
    k.N = N;
    Rng rng(seed);
    if (mode == KeyMode::Orthogonal) {
        k.patch_key = random_orthogonal(L, rng);
    } else {
        // row i carries a single 1, at the column drawn for position i
        const std::vector<std::uint32_t> sigma = random_permutation(L, rng);
        k.patch_key = Matrix(L, L);
        for (std::size_t i = 0; i < L; ++i) k.patch_key(i, sigma[i] - 1) = 1.0;
    }
    k.perm = random_permutation(N, rng);
    return k;
}

KeyPair identity_keypair(std::size_t L, std::size_t N) {
    if (L < 1 || N < 1) {
        throw KeyValidationError("identity_keypair: L and N must be >= 1");
    }
    KeyPair k;
    k.mode = KeyMode::Permutation;
    k.seed = 0;
    k.rng_algorithm = Rng::kAlgorithm;
    k.L = L;
    k.N = N;
    k.patch_key = Matrix::identity(L);
    k.perm.resize(N);
    for (std::size_t i = 0; i < N; ++i) k.perm[i] = static_cast<std::uint32_t>(i + 1);
    return k;
}

namespace {

void check_bijection(const std::vector<std::uint32_t>& perm) {
    const std::size_t n = perm.size();
    std::vector<bool> seen(n, false);
    for (std::uint32_t v : perm) {
        if (v < 1 || v > n) {
            throw KeyValidationError("l_t value " + std::to_string(v) +
                                     " outside 1.." + std::to_string(n));
        }
        if (seen[v - 1]) {
            throw KeyValidationError("l_t value " + std::to_string(v) +
                                     " appears more than once (not a bijection)");
        }
        seen[v - 1] = true;
    }
}

}  // namespace

Matrix build_Eb(const std::vector<std::uint32_t>& perm) {
    check_bijection(perm);
    const std::size_t n = perm.size();
    Matrix eb(n + 1, n + 1);
    eb(0, 0) = 1.0;
    for (std::size_t i = 0; i < n; ++i) eb(i + 1, perm[i]) = 1.0;
    return eb;
}

void validate_keypair(const KeyPair& k) {
    if (k.L < 1 || k.N < 1) throw KeyValidationError("key has L or N < 1");
    if (k.patch_key.rows != k.L || k.patch_key.cols != k.L) {
        throw KeyValidationError("E_a is " + std::to_string(k.patch_key.rows) + "x" +
                                 std::to_string(k.patch_key.cols) + ", expected " +
                                 std::to_string(k.L) + "x" + std::to_string(k.L));
    }
    if (k.perm.size() != k.N) {
        throw KeyValidationError("l_t has length " + std::to_string(k.perm.size()) +
                                 ", expected " + std::to_string(k.N));
    }
    check_bijection(k.perm);
    if (!all_finite(k.patch_key.data)) {
        throw KeyValidationError("E_a contains non-finite entries");
    }
    const double cond = condition_estimate(k.patch_key);
    if (cond >= kMaxConditionEstimate) {
        throw KeyValidationError("E_a is singular or ill-conditioned (condition estimate " +
                                 std::to_string(cond) + ")");
    }
    if (k.mode == KeyMode::Permutation) {
        for (std::size_t i = 0; i < k.L; ++i) {
            std::size_t ones = 0;
            for (std::size_t j = 0; j < k.L; ++j) {
                const double v = k.patch_key(i, j);
                if (v == 1.0) {
                    ++ones;
                } else if (v != 0.0) {
                    throw KeyValidationError("permutation-mode E_a has entry " +
                                             std::to_string(v) + " not in {0,1}");
                }
            }
            if (ones != 1) {
                throw KeyValidationError("permutation-mode E_a row " + std::to_string(i) +
                                         " does not contain exactly one 1");
            }
        }
    }
}

std::string canonical_key_json(const KeyPair& k) {
    json j;
    j["version"] = 1;
    j["mode"] = key_mode_name(k.mode);
    j["seed"] = k.seed;
    j["rng_algorithm"] = k.rng_algorithm;
    j["L"] = k.L;
    j["N"] = k.N;
    j["l_t"] = k.perm;
    j["E_a"] = k.patch_key.data;
    return j.dump(2) + "\n";
}

std::string key_fingerprint(const KeyPair& k) {
    return to_hex(fnv1a64(canonical_key_json(k)));
}

void save_keypair(const KeyPair& k, const std::string& path) {
    validate_keypair(k);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open key file for writing: " + path);
    out << canonical_key_json(k);
    if (!out) throw IoError("failed writing key file: " + path);
}

KeyPair load_keypair(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open key file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    json j;
    try {
        j = json::parse(buf.str());
    } catch (const json::exception& e) {
        throw ParseError("key file " + path + " is not valid JSON: " + e.what());
    }
    KeyPair k;
    try {
        if (j.at("version").get<int>() != 1) {
            throw ParseError("key file " + path + ": unsupported version");
        }
        k.mode = key_mode_from_name(j.at("mode").get<std::string>());
        k.seed = j.at("seed").get<std::uint64_t>();
        k.rng_algorithm = j.at("rng_algorithm").get<std::string>();
        k.L = j.at("L").get<std::size_t>();
        k.N = j.at("N").get<std::size_t>();
        k.perm = j.at("l_t").get<std::vector<std::uint32_t>>();
        const auto ea = j.at("E_a").get<std::vector<double>>();
        if (ea.size() != k.L * k.L) {
            throw ParseError("key file " + path + ": E_a has " + std::to_string(ea.size()) +
                             " entries, expected " + std::to_string(k.L * k.L));
        }
        k.patch_key = Matrix(k.L, k.L);
        k.patch_key.data = ea;
    } catch (const json::exception& e) {
        throw ParseError("key file " + path + ": " + e.what());
    }
    validate_keypair(k);
    return k;
}

}  // namespace fedvit
