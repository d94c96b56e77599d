#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedvit/vit.hpp"

namespace fedvit {

enum class PayloadKind : std::uint8_t { Weights = 0, Gradients = 1 };

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<double> data;
};

// The only thing a client ever sends to the server: parameter (or gradient)
// tensors plus bookkeeping counts. There is deliberately no field that could
// carry raw samples.
struct ModelUpdate {
    std::uint32_t client_id = 0;
    std::uint32_t round = 0;
    PayloadKind kind = PayloadKind::Weights;
    std::uint32_t sample_count = 1;
    std::vector<NamedTensor> tensors;
};

// Every field the binary header carries, in order. Kept as data so tests can
// assert structurally what the schema does (and does not) contain.
inline constexpr std::array<std::string_view, 6> kWireHeaderFields = {
    "version", "round", "client_id", "kind", "sample_count", "n_tensors"};

inline constexpr std::uint16_t kWireVersion = 1;

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
std::uint32_t crc32(std::span<const unsigned char> bytes);

// Layout: u32 body length, body, u32 CRC of the body. Body: u16 version,
// u32 round, u32 client id, u8 kind, u32 sample count, u16 tensor count,
// then per tensor {u16 name length, name, u8 rank, u32 dims x rank,
// little-endian f64 data}.
std::vector<unsigned char> serialize_update(const ModelUpdate& u);

// Inverse of serialize_update. Throws FormatError on truncation, version or
// kind mismatch, CRC failure, or trailing bytes.
ModelUpdate parse_update(std::span<const unsigned char> bytes);

// Package a model's parameters (or a gradient accumulator shaped like one)
// as an update, tensor order fixed by the model manifest.
ModelUpdate update_from_model(const ViTModel& m, std::uint32_t client_id, std::uint32_t round,
                              PayloadKind kind, std::uint32_t sample_count);

// Write an update's tensors back into a model with the same manifest.
// Throws ShapeError if names, order, or dims disagree.
void apply_update_to_model(ViTModel& m, const ModelUpdate& u);

}  // namespace fedvit
