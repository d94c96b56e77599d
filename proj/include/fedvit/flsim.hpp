#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedvit/dataio.hpp"
#include "fedvit/wire.hpp"

namespace fedvit {

enum class Aggregation { FedAvg, FedSgd };
enum class Weighting { Uniform, Samples };
enum class PartitionStrategy { Iid };

struct FLConfig {
    std::size_t n_clients = 4;
    std::size_t rounds = 10;
    std::size_t local_epochs = 1;
    double lr = 1e-3;
    double momentum = 0.9;
    std::size_t batch_size = 8;
    Aggregation algorithm = Aggregation::FedAvg;
    Weighting weighting = Weighting::Uniform;
    double participation = 1.0;  // fraction of clients drawn each round
    std::size_t threads = 1;     // worker threads for local training
    std::uint64_t seed = 0;

    void validate() const;
};

struct ClientState {
    std::uint32_t id = 0;
    std::vector<Sample> slice;
    ViTModel model;
    ViTModel velocity;
    Rng rng{0};
};

struct FLRoundReport {
    std::uint32_t round = 0;
    std::vector<std::uint32_t> participants;
    std::vector<double> client_losses;  // parallel to participants
    double eval_accuracy = 0.0;
    double wall_ms = 0.0;
};

// iid strategy: shuffle once, deal contiguous chunks; sizes differ by at
// most one. A single client gets the dataset unshuffled.
std::vector<std::vector<Sample>> partition_dataset(const LabeledDataset& ds, std::size_t n_clients,
                                                   PartitionStrategy strategy, Rng& rng);

struct LocalResult {
    ModelUpdate update;
    double mean_loss = 0.0;
};

// One round of local work: zero the velocity, run `epochs` of minibatch SGD
// with per-epoch shuffles drawn from the client rng, and package the
// post-training weights with the slice size.
LocalResult local_train(ClientState& c, std::size_t epochs, double lr, double momentum,
                        std::size_t batch_size, std::uint32_t round);

// Mean gradient over the whole slice (no shuffling, no model change).
LocalResult local_gradients(ClientState& c, std::uint32_t round);

// Weighted mean of weights-kind updates. Updates are canonicalized by
// client id and accumulated as anchor + sum(lambda_i * (w_i - anchor)), so
// identical updates average to exactly themselves and the result does not
// depend on input order.
ViTModel fedavg(std::span<const ModelUpdate> updates, Weighting weighting,
                const ViTConfig& config);

// w <- w - lr * mean(gradients), same anchored mean as fedavg.
ViTModel fedsgd(std::span<const ModelUpdate> updates, const ViTModel& global, double lr);

struct FLRunResult {
    ViTModel model;
    std::vector<FLRoundReport> reports;
};

// Full simulation: init global model from Rng(seed), partition, then per
// round broadcast -> local train (optionally threaded) -> serialize each
// update through the wire format -> aggregate -> evaluate on holdout.
// Client rngs are reseeded from (seed, client id, round) every round, so
// results do not depend on the thread count.
FLRunResult run_rounds(const FLConfig& cfg, const ViTConfig& model_cfg,
                       const LabeledDataset& train, const LabeledDataset& holdout);

// Plain single-process SGD: same init, same data order, and the same seed
// derivation as a 1-client, 1-round simulation, but with no partitioning or
// wire traffic. Used as the oracle the simulator must match bit for bit.
ViTModel centralized_train(const ViTConfig& model_cfg, const LabeledDataset& train,
                           std::size_t epochs, double lr, double momentum, std::size_t batch_size,
                           std::uint64_t seed);

void write_round_reports_csv(const std::string& path, std::span<const FLRoundReport> reports);

}  // namespace fedvit
