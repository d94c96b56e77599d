// Acceptance gate. Each criterion prints one PASS/FAIL line; the exit code
// is the number of failures. Pass criterion numbers as arguments to run a
// subset, e.g. `acceptance 1 5 7`.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "fedvit/cipher.hpp"
#include "fedvit/flsim.hpp"

using namespace fedvit;
namespace fs = std::filesystem;

namespace {

// -------- pinned tolerances and budgets --------
constexpr double kOrthLogitTol = 1e-6;       // encrypted vs plain logits
constexpr double kOrthDecryptTol = 1e-9;     // decrypt(encrypt(x)) vs x
constexpr double kGradRelTol = 1e-4;         // analytic vs finite difference
constexpr double kGradEps = 1e-5;            // central difference step
constexpr double kTargetAccuracy = 0.90;     // federated holdout accuracy
constexpr double kBudgetEquivalence = 60.0;  // seconds
constexpr double kBudgetTraining = 600.0;
constexpr double kBudgetGradcheck = 120.0;

ViTConfig toy_config() {
    ViTConfig c;
    c.image_h = 32;
    c.image_w = 32;
    c.channels = 1;
    c.patch = 8;  // 16 tokens of length 64
    c.dim = 32;
    c.depth = 2;
    c.heads = 4;
    c.mlp_ratio = 2;
    c.classes = 3;
    return c;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ImageTensor random_image(const ViTConfig& c, Rng& rng) {
    ImageTensor x(c.image_h, c.image_w, c.channels);
    for (double& v : x.data) v = rng.uniform01();
    return x;
}

bool same_bits(const ViTModel& a, const ViTModel& b) {
    std::vector<const std::vector<double>*> bt;
    visit_params(b, [&](const std::string&, const std::vector<double>& d,
                        std::vector<std::uint32_t>) { bt.push_back(&d); });
    bool equal = true;
    std::size_t i = 0;
    visit_params(a, [&](const std::string&, const std::vector<double>& d,
                        std::vector<std::uint32_t>) {
        equal = equal && i < bt.size() && d.size() == bt[i]->size() &&
                std::memcmp(d.data(), bt[i]->data(), d.size() * sizeof(double)) == 0;
        ++i;
    });
    return equal && i == bt.size();
}

// mean cross-entropy via the forward pass only, for finite differencing
double batch_loss(const ViTModel& m, std::span<const Sample> batch) {
    double total = 0.0;
    for (const Sample& s : batch) {
        const Vector logits = forward(m, s.image);
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double denom = 0.0;
        for (double v : logits) denom += std::exp(v - mx);
        total += std::log(denom) - (logits[s.label] - mx);
    }
    return total / static_cast<double>(batch.size());
}

std::vector<double> sorted_block(const ImageTensor& x, std::size_t p, std::size_t block) {
    const std::size_t bw = x.w / p;
    std::vector<double> vals;
    for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t col = 0; col < p; ++col) {
            for (std::size_t ch = 0; ch < x.c; ++ch) {
                vals.push_back(x.at((block / bw) * p + r, (block % bw) * p + col, ch));
            }
        }
    }
    std::sort(vals.begin(), vals.end());
    return vals;
}

// -------- criteria --------

bool criterion_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    const ViTConfig c = toy_config();
    const std::size_t per_mode = 60;  // 120 triples total

    double worst_perm = 0.0, worst_orth_logit = 0.0, worst_orth_z0 = 0.0;
    std::size_t argmax_hits = 0, total = 0;
    for (const KeyMode mode : {KeyMode::Permutation, KeyMode::Orthogonal}) {
        for (std::size_t i = 0; i < per_mode; ++i) {
            const std::uint64_t seed = 1000 + total;
            Rng rng(mix_seed(seed, 1, 0));
            const ViTModel m = init_model(c, rng);
            const KeyPair k = generate_keypair(c.patch_len(), c.n_patches(), mode, seed);
            ImageTensor x = random_image(c, rng);
            const EquivalenceReport r = verify_equivalence(m, k, x);
            ++total;
            if (r.argmax_match) ++argmax_hits;
            if (mode == KeyMode::Permutation) {
                worst_perm = std::max({worst_perm, r.max_z0_row_diff, r.max_logit_diff});
            } else {
                worst_orth_z0 = std::max(worst_orth_z0, r.max_z0_row_diff);
                worst_orth_logit = std::max(worst_orth_logit, r.max_logit_diff);
            }
            if (!r.pass) {
                std::printf("  triple %zu (%s): z0 diff %.3g, logit diff %.3g, argmax %s\n",
                            total, mode == KeyMode::Permutation ? "permutation" : "orthogonal",
                            r.max_z0_row_diff, r.max_logit_diff,
                            r.argmax_match ? "match" : "MISMATCH");
                return false;
            }
        }
    }
    const double secs = seconds_since(t0);
    std::printf("  %zu triples: permutation worst diff %.17g, orthogonal worst z0 %.3g / logit"
                " %.3g, argmax %zu/%zu, %.1fs\n",
                total, worst_perm, worst_orth_z0, worst_orth_logit, argmax_hits, total, secs);
    return worst_perm == 0.0 && worst_orth_logit < kOrthLogitTol && argmax_hits == total &&
           secs < kBudgetEquivalence;
}

bool criterion_training() {
    const auto t0 = std::chrono::steady_clock::now();
    const ViTConfig c = toy_config();

    Rng data_rng(42);
    const LabeledDataset train = synth_dataset(512, c.classes, 32, 32, 1, 0.1, data_rng);
    const LabeledDataset holdout = synth_dataset(256, c.classes, 32, 32, 1, 0.1, data_rng);

    FLConfig cfg;
    cfg.n_clients = 4;
    cfg.rounds = 10;
    cfg.local_epochs = 10;
    cfg.lr = 1e-3;
    cfg.momentum = 0.9;
    cfg.batch_size = 8;
    cfg.threads = 4;
    cfg.seed = 2024;

    const FLRunResult res = run_rounds(cfg, c, train, holdout);
    const double acc = res.reports.back().eval_accuracy;
    const double plain = evaluate_accuracy(res.model, holdout.samples);

    bool encrypted_agree = true;
    const KeyMode modes[3] = {KeyMode::Permutation, KeyMode::Permutation, KeyMode::Orthogonal};
    const std::uint64_t key_seeds[3] = {101, 202, 303};
    for (int i = 0; i < 3; ++i) {
        const KeyPair k = generate_keypair(c.patch_len(), c.n_patches(), modes[i], key_seeds[i]);
        const double enc = encrypted_accuracy(res.model, k, holdout.samples);
        std::printf("  key %d (%s): encrypted accuracy %.17g vs plain %.17g\n", i + 1,
                    key_mode_name(modes[i]).c_str(), enc, plain);
        encrypted_agree = encrypted_agree && enc == plain;
    }
    const double secs = seconds_since(t0);
    std::printf("  holdout accuracy %.4f after %zu rounds x %zu local epochs, %.1fs\n", acc,
                cfg.rounds, cfg.local_epochs, secs);
    return acc >= kTargetAccuracy && encrypted_agree && secs < kBudgetTraining;
}

bool criterion_aggregation() {
    const ViTConfig c = toy_config();
    const std::uint64_t seed = 99;

    // a) one simulated client == plain centralized SGD, bit for bit
    Rng data_rng(5);
    const LabeledDataset small = synth_dataset(40, c.classes, 32, 32, 1, 0.1, data_rng);
    FLConfig cfg;
    cfg.n_clients = 1;
    cfg.rounds = 1;
    cfg.local_epochs = 3;
    cfg.lr = 0.05;
    cfg.momentum = 0.9;
    cfg.batch_size = 4;
    cfg.seed = seed;
    const FLRunResult sim = run_rounds(cfg, c, small, {});
    const ViTModel central = centralized_train(c, small, 3, 0.05, 0.9, 4, seed);
    const bool single_ok = same_bits(sim.model, central);
    std::printf("  single client vs centralized: %s\n",
                single_ok ? "bit-identical" : "DIFFERENT");

    // b) averaging duplicates returns the duplicate
    Rng rng(6);
    const ViTModel m = init_model(c, rng);
    std::vector<ModelUpdate> dup;
    for (std::uint32_t i = 0; i < 4; ++i) {
        dup.push_back(update_from_model(m, i, 0, PayloadKind::Weights, 10));
    }
    const bool dup_ok = same_bits(fedavg(dup, Weighting::Uniform, c), m) &&
                        same_bits(fedavg(dup, Weighting::Samples, c), m);
    std::printf("  duplicate-update average: %s\n", dup_ok ? "exact identity" : "DIFFERENT");

    // c) opposite gradients cancel
    const ViTModel global = init_model(c, rng);
    ViTModel g = init_model(c, rng);
    ViTModel neg = g;
    visit_params(neg, [](const std::string&, std::vector<double>& d, std::vector<std::uint32_t>) {
        for (double& v : d) v = -v;
    });
    const std::vector<ModelUpdate> pair = {
        update_from_model(g, 0, 0, PayloadKind::Gradients, 1),
        update_from_model(neg, 1, 0, PayloadKind::Gradients, 1)};
    const bool cancel_ok = same_bits(fedsgd(pair, global, 0.7), global);
    std::printf("  opposite gradients: %s\n", cancel_ok ? "exact cancellation" : "DIFFERENT");

    return single_ok && dup_ok && cancel_ok;
}

bool criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const ViTConfig c = toy_config();
    Rng rng(12);
    ViTModel m = init_model(c, rng);
    Rng data_rng(13);
    const LabeledDataset ds = synth_dataset(2, c.classes, 32, 32, 1, 0.1, data_rng);
    const std::span<const Sample> batch(ds.samples);

    const LossAndGrads lg = loss_and_grads(m, batch);

    std::vector<std::pair<std::string, std::vector<double>*>> params;
    visit_params(m, [&](const std::string& name, std::vector<double>& d,
                        std::vector<std::uint32_t>) { params.emplace_back(name, &d); });
    std::vector<const std::vector<double>*> grads;
    visit_params(lg.grads, [&](const std::string&, const std::vector<double>& d,
                               std::vector<std::uint32_t>) { grads.push_back(&d); });

    double worst = 0.0;
    std::string worst_name;
    std::size_t checked = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        std::vector<double>& theta = *params[t].second;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double saved = theta[j];
            theta[j] = saved + kGradEps;
            const double up = batch_loss(m, batch);
            theta[j] = saved - kGradEps;
            const double down = batch_loss(m, batch);
            theta[j] = saved;
            const double fd = (up - down) / (2.0 * kGradEps);
            const double analytic = (*grads[t])[j];
            const double rel = std::abs(analytic - fd) /
                               std::max({std::abs(analytic), std::abs(fd), 1e-6});
            if (rel > worst) {
                worst = rel;
                worst_name = params[t].first;
            }
            ++checked;
        }
    }
    const double secs = seconds_since(t0);
    std::printf("  %zu parameters checked, worst relative error %.3g (%s), %.1fs\n", checked,
                worst, worst_name.c_str(), secs);
    return worst < kGradRelTol && secs < kBudgetGradcheck;
}

bool criterion_round_trips() {
    const ViTConfig c = toy_config();
    Rng rng(31);

    bool decrypt_ok = true;
    for (int i = 0; i < 5; ++i) {
        ImageTensor x = random_image(c, rng);
        const KeyPair kp =
            generate_keypair(c.patch_len(), c.n_patches(), KeyMode::Permutation, 40 + i);
        const ImageTensor bp = decrypt_image(encrypt_image(x, kp, c.patch), kp);
        const double dp = max_abs_diff(std::span<const double>(bp.data),
                                       std::span<const double>(x.data));
        const KeyPair ko =
            generate_keypair(c.patch_len(), c.n_patches(), KeyMode::Orthogonal, 40 + i);
        const ImageTensor bo = decrypt_image(encrypt_image(x, ko, c.patch), ko);
        const double od = max_abs_diff(std::span<const double>(bo.data),
                                       std::span<const double>(x.data));
        decrypt_ok = decrypt_ok && dp == 0.0 && od < kOrthDecryptTol;
        if (i == 0) {
            std::printf("  decrypt(encrypt(x)): permutation diff %.17g, orthogonal diff %.3g\n",
                        dp, od);
        }
    }

    bool file_ok = true;
    const fs::path dir = fs::temp_directory_path() / "fedvit_acceptance_keys";
    fs::create_directories(dir);
    for (const KeyMode mode : {KeyMode::Permutation, KeyMode::Orthogonal}) {
        const KeyPair k = generate_keypair(c.patch_len(), c.n_patches(), mode, 77);
        const std::string p1 = (dir / "k1.json").string(), p2 = (dir / "k2.json").string();
        save_keypair(k, p1);
        save_keypair(load_keypair(p1), p2);
        std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
        const std::string sa((std::istreambuf_iterator<char>(a)), {});
        const std::string sb((std::istreambuf_iterator<char>(b)), {});
        file_ok = file_ok && !sa.empty() && sa == sb;
    }
    fs::remove_all(dir);
    std::printf("  key save/load/save: %s\n", file_ok ? "byte-identical" : "DIFFERENT");

    // the frozen 4x4 position-key matrix for the permutation [1,3,2]
    const Matrix eb = build_Eb({1, 3, 2});
    const double want[4][4] = {
        {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 0, 1}, {0, 0, 1, 0}};
    bool eb_ok = eb.rows == 4 && eb.cols == 4;
    for (std::size_t i = 0; i < 4 && eb_ok; ++i) {
        for (std::size_t j = 0; j < 4; ++j) eb_ok = eb_ok && eb(i, j) == want[i][j];
    }
    std::printf("  position-key matrix for [1,3,2]: %s\n", eb_ok ? "exact" : "WRONG");

    return decrypt_ok && file_ok && eb_ok;
}

bool criterion_scrambled_ppm() {
    const ViTConfig c = toy_config();
    Rng data_rng(55);
    const LabeledDataset ds = synth_dataset(1, c.classes, 32, 32, 1, 0.1, data_rng);
    const ImageTensor& src = ds.samples[0].image;
    const KeyPair k = generate_keypair(c.patch_len(), c.n_patches(), KeyMode::Permutation, 91);

    const fs::path dir = "acceptance_artifacts";
    fs::create_directories(dir);
    const std::string plain_path = (dir / "image_plain.ppm").string();
    const std::string scrambled_path = (dir / "image_scrambled.ppm").string();
    save_image_pnm(replicate_to_rgb(src), plain_path);
    const EncryptedImage e = encrypt_image(src, k, c.patch);
    save_image_pnm(replicate_to_rgb(encrypted_to_pixels(e)), scrambled_path);

    // compare what actually landed on disk against the 8-bit quantized source
    const ImageTensor scrambled = load_image_pnm(scrambled_path);
    ImageTensor quant = replicate_to_rgb(src);
    for (double& v : quant.data) {
        v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
    }
    bool multisets_ok = true;
    bool moved = false;
    for (std::size_t i = 0; i < k.N; ++i) {
        multisets_ok = multisets_ok && sorted_block(scrambled, c.patch, i) ==
                                           sorted_block(quant, c.patch, k.perm[i] - 1);
        moved = moved || k.perm[i] != i + 1;
    }
    std::printf("  %zu blocks rearranged, multisets %s; inspect %s vs %s\n",
                static_cast<std::size_t>(k.N), multisets_ok ? "preserved" : "BROKEN",
                plain_path.c_str(), scrambled_path.c_str());
    return multisets_ok && moved;
}

bool criterion_wire() {
    const ViTConfig c = toy_config();
    Rng rng(71);
    const ViTModel m = init_model(c, rng);
    ModelUpdate u = update_from_model(m, 3, 8, PayloadKind::Weights, 128);
    u.tensors.push_back({"stress", {4}, {-0.0, 5e-324, 1.7976931348623157e308, 0.1 + 0.2}});

    const std::vector<unsigned char> msg = serialize_update(u);
    const ModelUpdate back = parse_update(msg);
    bool lossless = back.tensors.size() == u.tensors.size();
    for (std::size_t t = 0; lossless && t < u.tensors.size(); ++t) {
        lossless = back.tensors[t].name == u.tensors[t].name &&
                   back.tensors[t].data.size() == u.tensors[t].data.size() &&
                   std::memcmp(back.tensors[t].data.data(), u.tensors[t].data.data(),
                               u.tensors[t].data.size() * sizeof(double)) == 0;
    }
    std::printf("  round trip of %zu tensors (%zu bytes): %s\n", u.tensors.size(), msg.size(),
                lossless ? "bit-exact" : "LOSSY");

    std::size_t caught = 0;
    const std::size_t probes[5] = {5, 100, msg.size() / 2, msg.size() - 6, msg.size() - 1};
    for (std::size_t off : probes) {
        std::vector<unsigned char> bad = msg;
        bad[off] ^= 0x01;
        try {
            parse_update(bad);
        } catch (const FormatError&) {
            ++caught;
        }
    }
    std::printf("  corrupted bytes caught: %zu/5\n", caught);

    bool schema_ok = kWireHeaderFields.size() == 6;
    for (const std::string_view f : kWireHeaderFields) {
        const std::string field(f);
        schema_ok = schema_ok && field.find("image") == std::string::npos &&
                    field.find("pixel") == std::string::npos;
    }
    std::set<std::string> manifest;
    visit_params(m, [&](const std::string& name, const std::vector<double>&,
                        std::vector<std::uint32_t>) { manifest.insert(name); });
    for (std::size_t t = 0; t + 1 < u.tensors.size(); ++t) {  // skip the stress tensor
        schema_ok = schema_ok && manifest.count(u.tensors[t].name) == 1;
    }
    std::printf("  schema: header fields carry metadata only, tensors match the model manifest\n");

    return lossless && caught == 5 && schema_ok;
}

struct Criterion {
    int number;
    const char* label;
    bool (*run)();
};

const Criterion kCriteria[] = {
    {1, "encrypted inference matches plain inference", criterion_equivalence},
    {2, "federated training reaches target accuracy; encrypted eval agrees under 3 keys",
     criterion_training},
    {3, "aggregation exactness: single client, duplicates, opposite gradients",
     criterion_aggregation},
    {4, "analytic gradients match finite differences", criterion_gradients},
    {5, "key and image round trips; frozen position-key matrix", criterion_round_trips},
    {6, "scrambled image keeps per-block pixel multisets", criterion_scrambled_ppm},
    {7, "wire format: lossless, corruption-detecting, no image fields", criterion_wire},
};

}  // namespace

int main(int argc, char** argv) {
    std::setvbuf(stdout, nullptr, _IONBF, 0);
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failures = 0, ran = 0;
    for (const Criterion& c : kCriteria) {
        if (!wanted.empty() && wanted.count(c.number) == 0) continue;
        ++ran;
        bool ok = false;
        try {
            ok = c.run();
        } catch (const std::exception& e) {
            std::printf("  unexpected exception: %s\n", e.what());
        }
        std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", c.number, c.label);
        if (!ok) ++failures;
    }
    std::printf("acceptance: %d/%d criteria passed\n", ran - failures, ran);
    return failures;
}
