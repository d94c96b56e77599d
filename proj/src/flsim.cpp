#include "fedvit/flsim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

namespace fedvit {

namespace {

// Seed-derivation tags; client rngs use the raw client id, which never
// collides with these at realistic client counts.
constexpr std::uint64_t kPartitionTag = 0xDA7A0001;
constexpr std::uint64_t kSelectTag = 0xDA7A0002;

}  // namespace

void FLConfig::validate() const {
    if (n_clients < 1) throw Error("fl config: need at least one client");
    if (local_epochs < 1) throw Error("fl config: local_epochs must be >= 1");
    if (batch_size < 1) throw Error("fl config: batch_size must be >= 1");
    if (!std::isfinite(lr) || lr < 0.0) throw Error("fl config: lr must be finite and >= 0");
    if (!std::isfinite(momentum) || momentum < 0.0 || momentum >= 1.0) {
        throw Error("fl config: momentum must be in [0,1)");
    }
    if (!(participation > 0.0) || participation > 1.0) {
        throw Error("fl config: participation must be in (0,1]");
    }
}

std::vector<std::vector<Sample>> partition_dataset(const LabeledDataset& ds, std::size_t n_clients,
                                                   PartitionStrategy strategy, Rng& rng) {
    (void)strategy;  // iid is the only strategy
    if (n_clients < 1) throw Error("partition_dataset: need at least one client");
    const std::size_t n = ds.samples.size();
    if (n < n_clients) {
        throw Error("partition_dataset: " + std::to_string(n_clients) + " clients but only " +
                    std::to_string(n) + " samples");
    }
    if (n_clients == 1) return {ds.samples};

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);

    std::vector<std::vector<Sample>> slices(n_clients);
    const std::size_t base = n / n_clients;
    const std::size_t extra = n % n_clients;
    std::size_t pos = 0;
    for (std::size_t c = 0; c < n_clients; ++c) {
        const std::size_t len = base + (c < extra ? 1 : 0);
        slices[c].reserve(len);
        for (std::size_t j = 0; j < len; ++j) slices[c].push_back(ds.samples[idx[pos++]]);
    }
    return slices;
}

LocalResult local_train(ClientState& c, std::size_t epochs, double lr, double momentum,
                        std::size_t batch_size, std::uint32_t round) {
    if (epochs < 1) throw Error("local_train: epochs must be >= 1");
    if (batch_size < 1) throw Error("local_train: batch_size must be >= 1");
    if (c.slice.empty()) throw Error("local_train: client slice is empty");

    c.velocity = zeros_like_model(c.model.config);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t e = 0; e < epochs; ++e) {
        c.rng.shuffle(c.slice);
        for (std::size_t start = 0; start < c.slice.size(); start += batch_size) {
            const std::size_t len = std::min(batch_size, c.slice.size() - start);
            const std::span<const Sample> batch(c.slice.data() + start, len);
            const LossAndGrads lg = loss_and_grads(c.model, batch);
            sgd_step(c.model, lg.grads, lr, momentum, c.velocity);
            loss_sum += lg.loss;
            ++n_batches;
        }
    }

    LocalResult out;
    out.mean_loss = loss_sum / static_cast<double>(n_batches);
    out.update = update_from_model(c.model, c.id, round, PayloadKind::Weights,
                                   static_cast<std::uint32_t>(c.slice.size()));
    return out;
}

LocalResult local_gradients(ClientState& c, std::uint32_t round) {
    if (c.slice.empty()) throw Error("local_gradients: client slice is empty");
    const LossAndGrads lg = loss_and_grads(c.model, std::span<const Sample>(c.slice));
    LocalResult out;
    out.mean_loss = lg.loss;
    out.update = update_from_model(lg.grads, c.id, round, PayloadKind::Gradients,
                                   static_cast<std::uint32_t>(c.slice.size()));
    return out;
}

namespace {

// Canonical client order plus per-update mixing weights summing to 1.
struct MeanPlan {
    std::vector<std::size_t> order;
    std::vector<double> lambda;  // parallel to order
};

MeanPlan plan_mean(std::span<const ModelUpdate> updates, Weighting weighting) {
    MeanPlan p;
    p.order.resize(updates.size());
    std::iota(p.order.begin(), p.order.end(), std::size_t{0});
    std::stable_sort(p.order.begin(), p.order.end(), [&](std::size_t a, std::size_t b) {
        return updates[a].client_id < updates[b].client_id;
    });
    p.lambda.resize(updates.size());
    if (weighting == Weighting::Uniform) {
        std::fill(p.lambda.begin(), p.lambda.end(), 1.0 / static_cast<double>(updates.size()));
    } else {
        double total = 0.0;
        for (std::size_t k : p.order) total += static_cast<double>(updates[k].sample_count);
        for (std::size_t i = 0; i < p.order.size(); ++i) {
            p.lambda[i] = static_cast<double>(updates[p.order[i]].sample_count) / total;
        }
    }
    return p;
}

// Weighted mean accumulated as anchor + sum(lambda_k * (w_k - anchor)).
// Differences from the anchor vanish exactly for identical updates, which
// is what makes single-client and duplicate-update aggregation bit-exact.
ViTModel anchored_mean(std::span<const ModelUpdate> updates, const MeanPlan& plan,
                       const ViTConfig& config) {
    ViTModel out = zeros_like_model(config);
    std::size_t slot = 0;
    visit_params(out, [&](const std::string& name, std::vector<double>& data,
                          std::vector<std::uint32_t> dims) {
        for (const ModelUpdate& u : updates) {
            if (slot >= u.tensors.size() || u.tensors[slot].name != name ||
                u.tensors[slot].dims != dims || u.tensors[slot].data.size() != data.size()) {
                throw ShapeError("aggregation: update from client " +
                                 std::to_string(u.client_id) +
                                 " does not match the model manifest at tensor '" + name + "'");
            }
        }
        const std::vector<double>& anchor = updates[plan.order[0]].tensors[slot].data;
        data = anchor;
        for (std::size_t k = 1; k < plan.order.size(); ++k) {
            const double lam = plan.lambda[k];
            const std::vector<double>& src = updates[plan.order[k]].tensors[slot].data;
            for (std::size_t j = 0; j < data.size(); ++j) {
                data[j] += lam * (src[j] - anchor[j]);
            }
        }
        ++slot;
    });
    for (const ModelUpdate& u : updates) {
        if (u.tensors.size() != slot) {
            throw ShapeError("aggregation: update from client " + std::to_string(u.client_id) +
                             " has extra tensors beyond the model manifest");
        }
    }
    return out;
}

void check_same_round(std::span<const ModelUpdate> updates) {
    for (const ModelUpdate& u : updates) {
        if (u.round != updates[0].round) {
            throw Error("aggregation: updates span rounds " + std::to_string(updates[0].round) +
                        " and " + std::to_string(u.round));
        }
    }
}

}  // namespace

ViTModel fedavg(std::span<const ModelUpdate> updates, Weighting weighting,
                const ViTConfig& config) {
    if (updates.empty()) throw Error("fedavg: no updates");
    check_same_round(updates);
    for (const ModelUpdate& u : updates) {
        if (u.kind != updates[0].kind) throw Error("fedavg: mixed payload kinds");
    }
    if (updates[0].kind != PayloadKind::Weights) {
        throw Error("fedavg: expects weights-kind updates");
    }
    return anchored_mean(updates, plan_mean(updates, weighting), config);
}

ViTModel fedsgd(std::span<const ModelUpdate> updates, const ViTModel& global, double lr) {
    if (updates.empty()) throw Error("fedsgd: no updates");
    check_same_round(updates);
    for (const ModelUpdate& u : updates) {
        if (u.kind != PayloadKind::Gradients) {
            throw Error("fedsgd: client " + std::to_string(u.client_id) +
                        " sent a non-gradient payload");
        }
    }
    const ViTModel mean = anchored_mean(updates, plan_mean(updates, Weighting::Uniform),
                                        global.config);
    std::vector<const std::vector<double>*> grads;
    visit_params(mean, [&](const std::string&, const std::vector<double>& data,
                           std::vector<std::uint32_t>) { grads.push_back(&data); });
    ViTModel out = global;
    std::size_t slot = 0;
    visit_params(out, [&](const std::string&, std::vector<double>& data,
                          std::vector<std::uint32_t>) {
        const std::vector<double>& g = *grads[slot++];
        for (std::size_t j = 0; j < data.size(); ++j) data[j] -= lr * g[j];
    });
    return out;
}

FLRunResult run_rounds(const FLConfig& cfg, const ViTConfig& model_cfg,
                       const LabeledDataset& train, const LabeledDataset& holdout) {
    cfg.validate();
    model_cfg.validate();

    Rng init_rng(cfg.seed);
    FLRunResult res;
    res.model = init_model(model_cfg, init_rng);
    if (cfg.rounds == 0) return res;

    Rng part_rng(mix_seed(cfg.seed, kPartitionTag, 0));
    auto slices = partition_dataset(train, cfg.n_clients, PartitionStrategy::Iid, part_rng);
    std::vector<ClientState> clients(cfg.n_clients);
    for (std::size_t i = 0; i < cfg.n_clients; ++i) {
        clients[i].id = static_cast<std::uint32_t>(i);
        clients[i].slice = std::move(slices[i]);
    }

    for (std::size_t r = 0; r < cfg.rounds; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::uint32_t round = static_cast<std::uint32_t>(r);

        std::vector<std::uint32_t> ids(cfg.n_clients);
        std::iota(ids.begin(), ids.end(), 0u);
        if (cfg.participation < 1.0) {
            const auto want = static_cast<std::size_t>(
                std::llround(cfg.participation * static_cast<double>(cfg.n_clients)));
            const std::size_t k = std::clamp<std::size_t>(want, 1, cfg.n_clients);
            Rng sel(mix_seed(cfg.seed, kSelectTag, round));
            sel.shuffle(ids);
            ids.resize(k);
            std::sort(ids.begin(), ids.end());
        }

        // broadcast + per-round reseed; velocity is zeroed inside local_train
        for (std::uint32_t id : ids) {
            clients[id].model = res.model;
            clients[id].rng = Rng(mix_seed(cfg.seed, id, round));
        }

        // local work; every update crosses the wire format
        std::vector<std::vector<unsigned char>> messages(ids.size());
        std::vector<double> losses(ids.size());
        auto work = [&](std::size_t j) {
            ClientState& c = clients[ids[j]];
            const LocalResult local =
                cfg.algorithm == Aggregation::FedAvg
                    ? local_train(c, cfg.local_epochs, cfg.lr, cfg.momentum, cfg.batch_size, round)
                    : local_gradients(c, round);
            messages[j] = serialize_update(local.update);
            losses[j] = local.mean_loss;
        };
        const std::size_t n_workers = std::min(std::max<std::size_t>(cfg.threads, 1), ids.size());
        if (n_workers <= 1) {
            for (std::size_t j = 0; j < ids.size(); ++j) work(j);
        } else {
            std::vector<std::thread> pool;
            pool.reserve(n_workers);
            for (std::size_t t = 0; t < n_workers; ++t) {
                pool.emplace_back([&, t] {
                    for (std::size_t j = t; j < ids.size(); j += n_workers) work(j);
                });
            }
            for (std::thread& th : pool) th.join();
        }

        std::vector<ModelUpdate> updates;
        updates.reserve(ids.size());
        for (const auto& msg : messages) updates.push_back(parse_update(msg));
        res.model = cfg.algorithm == Aggregation::FedAvg
                        ? fedavg(updates, cfg.weighting, model_cfg)
                        : fedsgd(updates, res.model, cfg.lr);

        FLRoundReport rep;
        rep.round = round;
        rep.participants = ids;
        rep.client_losses = losses;
        rep.eval_accuracy =
            holdout.samples.empty() ? 0.0 : evaluate_accuracy(res.model, holdout.samples);
        rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               t0)
                          .count();
        res.reports.push_back(std::move(rep));
    }
    return res;
}

ViTModel centralized_train(const ViTConfig& model_cfg, const LabeledDataset& train,
                           std::size_t epochs, double lr, double momentum, std::size_t batch_size,
                           std::uint64_t seed) {
    model_cfg.validate();
    if (train.samples.empty()) throw Error("centralized_train: empty dataset");
    if (batch_size < 1) throw Error("centralized_train: batch_size must be >= 1");

    Rng init_rng(seed);
    ViTModel model = init_model(model_cfg, init_rng);
    ViTModel velocity = zeros_like_model(model_cfg);
    std::vector<Sample> data = train.samples;
    Rng rng(mix_seed(seed, 0, 0));
    for (std::size_t e = 0; e < epochs; ++e) {
        rng.shuffle(data);
        for (std::size_t start = 0; start < data.size(); start += batch_size) {
            const std::size_t len = std::min(batch_size, data.size() - start);
            const LossAndGrads lg =
                loss_and_grads(model, std::span<const Sample>(data.data() + start, len));
            sgd_step(model, lg.grads, lr, momentum, velocity);
        }
    }
    return model;
}

void write_round_reports_csv(const std::string& path, std::span<const FLRoundReport> reports) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open report file: " + path);
    out << "round,accuracy,wall_ms,participants,losses\n";
    out << std::setprecision(17);
    for (const FLRoundReport& r : reports) {
        out << r.round << "," << r.eval_accuracy << "," << r.wall_ms << ",";
        for (std::size_t i = 0; i < r.participants.size(); ++i) {
            out << (i ? "|" : "") << r.participants[i];
        }
        out << ",";
        for (std::size_t i = 0; i < r.client_losses.size(); ++i) {
            out << (i ? "|" : "") << r.client_losses[i];
        }
        out << "\n";
    }
    if (!out) throw IoError("failed writing report file: " + path);
}

}  // namespace fedvit
