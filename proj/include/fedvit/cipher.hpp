#pragma once

#include <string>

#include "fedvit/keyring.hpp"
#include "fedvit/vit.hpp"

namespace fedvit {

// A model whose patch embedding has been replaced by E_a * E and whose
// position embedding by E_b * E_pos. Every other tensor is a bit-exact
// copy of the source model.
struct EncryptedModel {
    ViTModel model;
    std::string key_fingerprint;
};

// Block-encrypted image: row i holds flatten(block l_t[i]) * E_a^-1.
struct EncryptedImage {
    Matrix blocks;  // NxL
    std::size_t h = 0, w = 0, c = 0, p = 0;
    KeyMode mode = KeyMode::Orthogonal;
    std::string key_fingerprint;
};

EncryptedModel encrypt_model(const ViTModel& m, const KeyPair& k);

EncryptedImage encrypt_image(const ImageTensor& x, const KeyPair& k, std::size_t p);

// Inverse of encrypt_image. A wrong key is not detectable beyond the
// fingerprint field and simply produces garbage pixels; the scheme carries
// no authentication.
ImageTensor decrypt_image(const EncryptedImage& e, const KeyPair& k);

// Runs the unchanged encoder/head on the encrypted embedding.
Vector encrypted_forward(const EncryptedModel& em, const EncryptedImage& e);

struct EquivalenceReport {
    double max_z0_row_diff = 0.0;  // encrypted z0 vs E_b * plain z0
    double max_logit_diff = 0.0;
    bool argmax_match = false;
    bool pass = false;
};

// Tolerances for orthogonal-mode keys; permutation-mode keys must match
// exactly (0.0).
constexpr double kZ0TolOrthogonal = 1e-8;
constexpr double kLogitTolOrthogonal = 1e-6;

EquivalenceReport verify_equivalence(const ViTModel& m, const KeyPair& k, const ImageTensor& x);

// Accuracy of the encrypted pipeline: encrypt the model once, then encrypt
// and classify every sample under the same key.
double encrypted_accuracy(const ViTModel& m, const KeyPair& k, std::span<const Sample> samples);

// Reassemble encrypted blocks into an h*w*c pixel grid. Only meaningful in
// permutation mode, where every value stays a valid pixel.
ImageTensor encrypted_to_pixels(const EncryptedImage& e);

// Container format: "EVI1" magic, u32 little-endian JSON header length,
// JSON header {version,h,w,c,p,N,L,mode,key_fingerprint}, then N*L doubles
// little-endian.
void save_encrypted_image(const EncryptedImage& e, const std::string& path);
EncryptedImage load_encrypted_image(const std::string& path);

}  // namespace fedvit
