#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedvit/linalg.hpp"

namespace fedvit {

enum class KeyMode { Orthogonal, Permutation };

std::string key_mode_name(KeyMode mode);
KeyMode key_mode_from_name(const std::string& name);

// Secret key material for one user: an invertible LxL matrix acting on
// flattened patches and a permutation of {1..N} acting on token positions.
struct KeyPair {
    KeyMode mode = KeyMode::Orthogonal;
    std::uint64_t seed = 0;
    std::string rng_algorithm;
    std::size_t L = 0;                // patch vector length, p^2 * c
    std::size_t N = 0;                // number of patches
    Matrix patch_key;                 // E_a, LxL
    std::vector<std::uint32_t> perm;  // l_t, length N, 1-based values
};

// mode Orthogonal: E_a from QR of a Gaussian draw (condition number 1).
// mode Permutation: E_a is a random LxL permutation matrix; encrypted
// pixel blocks stay renderable and all arithmetic is exact.
KeyPair generate_keypair(std::size_t L, std::size_t N, KeyMode mode, std::uint64_t seed);

// E_a = I, l_t = identity permutation; encryption under this key is a no-op.
KeyPair identity_keypair(std::size_t L, std::size_t N);

// (N+1)x(N+1) position-key matrix: row 0 fixed to the first basis vector,
// lower-right block the permutation matrix with m(i,j)=1 iff j = l_t[i].
Matrix build_Eb(const std::vector<std::uint32_t>& perm);

// Throws KeyValidationError on any broken invariant (non-bijective l_t,
// wrong shapes, non-finite or ill-conditioned E_a).
void validate_keypair(const KeyPair& k);

// Canonical JSON serialization; save writes exactly these bytes and the
// fingerprint is the FNV-1a64 of them, so it is stable across
// load/save cycles and whitespace variations in hand-edited files.
std::string canonical_key_json(const KeyPair& k);
std::string key_fingerprint(const KeyPair& k);

void save_keypair(const KeyPair& k, const std::string& path);
KeyPair load_keypair(const std::string& path);

}  // namespace fedvit
