#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedvit/vit.hpp"

namespace fedvit {

struct LabeledDataset {
    std::string name;
    std::uint32_t n_classes = 0;
    std::vector<Sample> samples;
};

// Standard CIFAR binary batches. CIFAR-10: data_batch_{1..5}.bin +
// test_batch.bin, one record = label byte + 3072 planar RGB bytes.
// CIFAR-100: train.bin + test.bin, records carry coarse+fine label bytes
// (the fine label is used). Pixels are scaled to [0,1].
std::pair<LabeledDataset, LabeledDataset> load_cifar(const std::string& dir, int variant);

// Per-class sinusoidal gratings (distinct frequency and orientation) plus
// Gaussian noise, clipped to [0,1]. Easy enough that a nearest-centroid
// classifier solves it, hard enough that a model must actually learn.
LabeledDataset synth_dataset(std::size_t n_samples, std::uint32_t n_classes, std::size_t h,
                             std::size_t w, std::size_t c, double noise_sigma, Rng& rng);

ImageTensor resize_nearest(const ImageTensor& x, std::size_t h2, std::size_t w2);

// Binary PNM: P6 for 3-channel, P5 for 1-channel. 8-bit, values clamped to
// [0,1] and rounded.
void save_image_pnm(const ImageTensor& x, const std::string& path);
ImageTensor load_image_pnm(const std::string& path);

// Copy a single channel into three, so grayscale images can go out as
// proper PPMs. Already-3-channel input passes through.
ImageTensor replicate_to_rgb(const ImageTensor& x);

// JSON checkpoint: model config + every parameter tensor by name, plus the
// key fingerprint when the model is encrypted. Doubles survive the round
// trip bit-exactly (shortest round-trip float printing).
struct Checkpoint {
    ViTModel model;
    std::string key_fingerprint;  // empty for plain models
};

void save_checkpoint(const ViTModel& m, const std::string& path,
                     const std::string& key_fingerprint = "");
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json vit_config_to_json(const ViTConfig& c);
ViTConfig vit_config_from_json(const nlohmann::json& j);

}  // namespace fedvit
