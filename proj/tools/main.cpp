// Command-line front end: key generation, federated training, model/image
// encryption, evaluation, and encrypted-vs-plain verification.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedvit/cipher.hpp"
#include "fedvit/dataio.hpp"
#include "fedvit/flsim.hpp"
#include "fedvit/keyring.hpp"

namespace {

using nlohmann::json;
using namespace fedvit;

// exit codes: 0 success, 1 runtime/I-O failure, 2 validation failure
constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open input for hashing: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return "fnv1a64:" + to_hex(fnv1a64(ss.str()));
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ParseError("config " + path + ": " + e.what());
    }
}

Aggregation algorithm_from_name(const std::string& s) {
    if (s == "fedavg") return Aggregation::FedAvg;
    if (s == "fedsgd") return Aggregation::FedSgd;
    throw ParseError("unknown algorithm '" + s + "' (expected fedavg or fedsgd)");
}

Weighting weighting_from_name(const std::string& s) {
    if (s == "uniform") return Weighting::Uniform;
    if (s == "samples") return Weighting::Samples;
    throw ParseError("unknown weighting '" + s + "' (expected uniform or samples)");
}

// Everything cmd_train needs, assembled from the config file and then
// overridden by any flags the user passed.
struct RunConfig {
    ViTConfig model;
    FLConfig fl;
    // dataset block
    std::string dataset_kind = "synth";
    std::string data_dir;
    std::size_t n_train = 512;
    std::size_t n_test = 256;
    double noise = 0.1;
    std::uint64_t data_seed = 42;
};

RunConfig run_config_from_json(const json& j) {
    RunConfig rc;
    if (j.contains("model")) rc.model = vit_config_from_json(j.at("model"));
    try {
        if (j.contains("fl")) {
            const json& f = j.at("fl");
            rc.fl.n_clients = f.value("n_clients", rc.fl.n_clients);
            rc.fl.rounds = f.value("rounds", rc.fl.rounds);
            rc.fl.local_epochs = f.value("local_epochs", rc.fl.local_epochs);
            rc.fl.lr = f.value("lr", rc.fl.lr);
            rc.fl.momentum = f.value("momentum", rc.fl.momentum);
            rc.fl.batch_size = f.value("batch_size", rc.fl.batch_size);
            rc.fl.participation = f.value("participation", rc.fl.participation);
            rc.fl.threads = f.value("threads", rc.fl.threads);
            rc.fl.seed = f.value("seed", rc.fl.seed);
            rc.fl.algorithm = algorithm_from_name(f.value("algorithm", std::string("fedavg")));
            rc.fl.weighting = weighting_from_name(f.value("weighting", std::string("uniform")));
        }
        if (j.contains("dataset")) {
            const json& d = j.at("dataset");
            rc.dataset_kind = d.value("kind", rc.dataset_kind);
            rc.data_dir = d.value("dir", rc.data_dir);
            rc.n_train = d.value("n_train", rc.n_train);
            rc.n_test = d.value("n_test", rc.n_test);
            rc.noise = d.value("noise", rc.noise);
            rc.data_seed = d.value("seed", rc.data_seed);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    return rc;
}

// Build (train, holdout) datasets for the configured source; images are
// resized when the model expects different dimensions.
std::pair<LabeledDataset, LabeledDataset> load_datasets(const RunConfig& rc) {
    if (rc.dataset_kind == "synth") {
        Rng rng(rc.data_seed);
        LabeledDataset train = synth_dataset(rc.n_train, rc.model.classes, rc.model.image_h,
                                             rc.model.image_w, rc.model.channels, rc.noise, rng);
        LabeledDataset test = synth_dataset(rc.n_test, rc.model.classes, rc.model.image_h,
                                            rc.model.image_w, rc.model.channels, rc.noise, rng);
        return {std::move(train), std::move(test)};
    }
    if (rc.dataset_kind == "cifar10" || rc.dataset_kind == "cifar100") {
        if (rc.data_dir.empty()) throw ParseError("dataset: cifar needs a 'dir' path");
        auto [train, test] = load_cifar(rc.data_dir, rc.dataset_kind == "cifar10" ? 10 : 100);
        if (rc.model.channels != 3) throw ParseError("dataset: cifar images have 3 channels");
        if (rc.model.classes != train.n_classes) {
            throw ParseError("dataset: model expects " + std::to_string(rc.model.classes) +
                             " classes, cifar has " + std::to_string(train.n_classes));
        }
        if (rc.model.image_h != 32 || rc.model.image_w != 32) {
            for (Sample& s : train.samples) {
                s.image = resize_nearest(s.image, rc.model.image_h, rc.model.image_w);
            }
            for (Sample& s : test.samples) {
                s.image = resize_nearest(s.image, rc.model.image_h, rc.model.image_w);
            }
        }
        return {std::move(train), std::move(test)};
    }
    throw ParseError("unknown dataset kind '" + rc.dataset_kind + "'");
}

int cmd_keygen(const std::string& out, std::size_t L, std::size_t N, const std::string& mode,
               std::uint64_t seed) {
    const KeyPair k = generate_keypair(L, N, key_mode_from_name(mode), seed);
    save_keypair(k, out);
    std::cout << key_fingerprint(k) << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, const CLI::App* sub) {
    json cfg_json = load_json_file(config_path);
    RunConfig rc = run_config_from_json(cfg_json);

    // flag overrides
    auto override_u64 = [&](const char* flag, auto& field) {
        if (sub->count(flag)) field = sub->get_option(flag)->as<std::uint64_t>();
    };
    auto override_sz = [&](const char* flag, std::size_t& field) {
        if (sub->count(flag)) field = sub->get_option(flag)->as<std::size_t>();
    };
    auto override_dbl = [&](const char* flag, double& field) {
        if (sub->count(flag)) field = sub->get_option(flag)->as<double>();
    };
    override_sz("--clients", rc.fl.n_clients);
    override_sz("--rounds", rc.fl.rounds);
    override_sz("--local-epochs", rc.fl.local_epochs);
    override_sz("--batch", rc.fl.batch_size);
    override_sz("--threads", rc.fl.threads);
    override_dbl("--lr", rc.fl.lr);
    override_dbl("--momentum", rc.fl.momentum);
    override_dbl("--participation", rc.fl.participation);
    override_u64("--seed", rc.fl.seed);
    if (sub->count("--algorithm")) {
        rc.fl.algorithm = algorithm_from_name(sub->get_option("--algorithm")->as<std::string>());
    }
    if (sub->count("--weighting")) {
        rc.fl.weighting = weighting_from_name(sub->get_option("--weighting")->as<std::string>());
    }
    rc.model.validate();
    rc.fl.validate();

    auto [train, holdout] = load_datasets(rc);
    const FLRunResult result = run_rounds(rc.fl, rc.model, train, holdout);

    std::filesystem::create_directories(out_dir);
    const std::string ckpt = out_dir + "/checkpoint.json";
    const std::string csv = out_dir + "/rounds.csv";
    save_checkpoint(result.model, ckpt);
    write_round_reports_csv(csv, result.reports);

    json manifest;
    manifest["command"] = "train";
    manifest["inputs"] = {{config_path, hash_file(config_path)}};
    manifest["outputs"] = {"checkpoint.json", "rounds.csv"};
    manifest["seed"] = rc.fl.seed;
    std::ofstream mf(out_dir + "/manifest.json");
    if (!mf) throw IoError("cannot write manifest under " + out_dir);
    mf << manifest.dump(2) << "\n";

    if (!result.reports.empty()) {
        std::printf("final accuracy %.3f\n", result.reports.back().eval_accuracy);
    }
    std::cout << "checkpoint " << ckpt << "\n";
    return 0;
}

int cmd_encrypt_model(const std::string& model_path, const std::string& key_path,
                      const std::string& out) {
    const Checkpoint ck = load_checkpoint(model_path);
    if (!ck.key_fingerprint.empty()) {
        throw KeyValidationError("model " + model_path + " is already encrypted");
    }
    const KeyPair k = load_keypair(key_path);
    const EncryptedModel em = encrypt_model(ck.model, k);
    save_checkpoint(em.model, out, em.key_fingerprint);
    std::cout << em.key_fingerprint << "\n";
    return 0;
}

int cmd_encrypt_image(const std::string& image_path, const std::string& key_path, std::size_t p,
                      const std::string& out, const std::string& emit_ppm) {
    const ImageTensor x = load_image_pnm(image_path);
    const KeyPair k = load_keypair(key_path);
    const EncryptedImage e = encrypt_image(x, k, p);
    save_encrypted_image(e, out);
    if (!emit_ppm.empty()) {
        if (k.mode != KeyMode::Permutation) {
            throw KeyValidationError(
                "--emit-ppm needs a permutation-mode key; orthogonal blocks are not pixels");
        }
        save_image_pnm(replicate_to_rgb(encrypted_to_pixels(e)), emit_ppm);
    }
    return 0;
}

int cmd_decrypt_image(const std::string& in, const std::string& key_path, const std::string& out) {
    const EncryptedImage e = load_encrypted_image(in);
    const KeyPair k = load_keypair(key_path);
    if (e.key_fingerprint != key_fingerprint(k)) {
        throw KeyValidationError("image was encrypted under key " + e.key_fingerprint +
                                 ", not this one");
    }
    save_image_pnm(decrypt_image(e, k), out);
    return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& dataset, std::size_t n_test,
                 std::uint64_t data_seed, double noise, const std::string& data_dir,
                 const std::string& key_path, bool encrypted) {
    const Checkpoint ck = load_checkpoint(model_path);
    if (!ck.key_fingerprint.empty()) {
        throw KeyValidationError("evaluate expects a plain checkpoint; pass --key --encrypted "
                                 "to evaluate under a key");
    }
    RunConfig rc;
    rc.model = ck.model.config;
    rc.dataset_kind = dataset;
    rc.n_train = 1;  // unused
    rc.n_test = n_test;
    rc.noise = noise;
    rc.data_seed = data_seed;
    rc.data_dir = data_dir;
    LabeledDataset test;
    if (dataset == "synth") {
        Rng rng(data_seed);
        test = synth_dataset(n_test, rc.model.classes, rc.model.image_h, rc.model.image_w,
                             rc.model.channels, noise, rng);
    } else {
        test = load_datasets(rc).second;
    }
    if (test.samples.empty()) throw ParseError("evaluate: empty test set");

    double acc = 0.0;
    if (encrypted) {
        if (key_path.empty()) throw ParseError("--encrypted needs --key");
        const KeyPair k = load_keypair(key_path);
        acc = encrypted_accuracy(ck.model, k, test.samples);
    } else {
        acc = evaluate_accuracy(ck.model, test.samples);
    }
    std::printf("accuracy %.3f\n", acc);
    return 0;
}

int cmd_verify(const std::string& model_path, const std::string& key_path, std::size_t n_images,
               std::uint64_t seed, const std::string& json_out) {
    const Checkpoint ck = load_checkpoint(model_path);
    const KeyPair k = load_keypair(key_path);

    Rng rng(seed);
    double max_z0 = 0.0, max_logit = 0.0;
    std::size_t agree = 0;
    bool pass = true;
    for (std::size_t i = 0; i < n_images; ++i) {
        ImageTensor x(ck.model.config.image_h, ck.model.config.image_w, ck.model.config.channels);
        for (double& v : x.data) v = rng.uniform01();
        const EquivalenceReport r = verify_equivalence(ck.model, k, x);
        max_z0 = std::max(max_z0, r.max_z0_row_diff);
        max_logit = std::max(max_logit, r.max_logit_diff);
        agree += r.argmax_match ? 1 : 0;
        pass = pass && r.pass;
    }

    json out;
    out["mode"] = key_mode_name(k.mode);
    out["n_images"] = n_images;
    out["max_z0_diff"] = max_z0;
    out["max_logit_diff"] = max_logit;
    out["argmax_agreement"] =
        n_images ? static_cast<double>(agree) / static_cast<double>(n_images) : 1.0;
    out["pass"] = pass;
    std::cout << out.dump(2) << "\n";
    if (!json_out.empty()) {
        std::ofstream f(json_out);
        if (!f) throw IoError("cannot write metrics to " + json_out);
        f << out.dump(2) << "\n";
    }
    return pass ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated ViT training with embedding/image encryption"};
    app.require_subcommand(1);

    // keygen
    auto* keygen = app.add_subcommand("keygen", "generate a key pair file");
    std::string kg_out, kg_mode = "orthogonal";
    std::size_t kg_L = 64, kg_N = 16;
    std::uint64_t kg_seed = 0;
    keygen->add_option("--out", kg_out, "key file path")->required();
    keygen->add_option("--L", kg_L, "patch vector length p^2*c");
    keygen->add_option("--N", kg_N, "number of patches");
    keygen->add_option("--mode", kg_mode, "orthogonal|permutation");
    keygen->add_option("--seed", kg_seed, "rng seed");

    // train
    auto* train = app.add_subcommand("train", "run federated rounds, write checkpoint + CSV");
    std::string tr_config, tr_out;
    train->add_option("--config", tr_config, "JSON run config")->required();
    train->add_option("--out", tr_out, "output directory")->required();
    train->add_option("--clients", "override fl.n_clients");
    train->add_option("--rounds", "override fl.rounds");
    train->add_option("--local-epochs", "override fl.local_epochs");
    train->add_option("--batch", "override fl.batch_size");
    train->add_option("--threads", "override fl.threads");
    train->add_option("--lr", "override fl.lr");
    train->add_option("--momentum", "override fl.momentum");
    train->add_option("--participation", "override fl.participation");
    train->add_option("--seed", "override fl.seed");
    train->add_option("--algorithm", "override fl.algorithm (fedavg|fedsgd)");
    train->add_option("--weighting", "override fl.weighting (uniform|samples)");

    // encrypt-model
    auto* encm = app.add_subcommand("encrypt-model", "encrypt embedding layers under a key");
    std::string em_model, em_key, em_out;
    encm->add_option("--model", em_model, "plain checkpoint")->required();
    encm->add_option("--key", em_key, "key file")->required();
    encm->add_option("--out", em_out, "encrypted checkpoint path")->required();

    // encrypt-image
    auto* enci = app.add_subcommand("encrypt-image", "block-encrypt an image under a key");
    std::string ei_image, ei_key, ei_out, ei_ppm;
    std::size_t ei_patch = 8;
    enci->add_option("--image", ei_image, "input PGM/PPM")->required();
    enci->add_option("--key", ei_key, "key file")->required();
    enci->add_option("--patch", ei_patch, "block side length");
    enci->add_option("--out", ei_out, "encrypted image path")->required();
    enci->add_option("--emit-ppm", ei_ppm, "also render scrambled blocks as a PPM");

    // decrypt-image
    auto* deci = app.add_subcommand("decrypt-image", "invert encrypt-image");
    std::string di_in, di_key, di_out;
    deci->add_option("--in", di_in, "encrypted image path")->required();
    deci->add_option("--key", di_key, "key file")->required();
    deci->add_option("--out", di_out, "output PGM/PPM")->required();

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "accuracy of a checkpoint on a test set");
    std::string ev_model, ev_dataset = "synth", ev_dir, ev_key;
    std::size_t ev_n = 256;
    std::uint64_t ev_seed = 42;
    double ev_noise = 0.1;
    bool ev_encrypted = false;
    eval->add_option("--model", ev_model, "checkpoint")->required();
    eval->add_option("--dataset", ev_dataset, "synth|cifar10|cifar100");
    eval->add_option("--n-test", ev_n, "synth test set size");
    eval->add_option("--data-seed", ev_seed, "synth dataset seed");
    eval->add_option("--noise", ev_noise, "synth noise sigma");
    eval->add_option("--data-dir", ev_dir, "cifar directory");
    eval->add_option("--key", ev_key, "key file (with --encrypted)");
    eval->add_flag("--encrypted", ev_encrypted, "encrypt model+images before evaluating");

    // verify
    auto* verify = app.add_subcommand("verify", "check encrypted == plain inference");
    std::string vf_model, vf_key, vf_json;
    std::size_t vf_n = 20;
    std::uint64_t vf_seed = 0;
    verify->add_option("--model", vf_model, "checkpoint")->required();
    verify->add_option("--key", vf_key, "key file")->required();
    verify->add_option("--n-images", vf_n, "random images to test");
    verify->add_option("--seed", vf_seed, "image rng seed");
    verify->add_option("--json", vf_json, "also write metrics JSON here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (keygen->parsed()) return cmd_keygen(kg_out, kg_L, kg_N, kg_mode, kg_seed);
        if (train->parsed()) return cmd_train(tr_config, tr_out, train);
        if (encm->parsed()) return cmd_encrypt_model(em_model, em_key, em_out);
        if (enci->parsed()) return cmd_encrypt_image(ei_image, ei_key, ei_patch, ei_out, ei_ppm);
        if (deci->parsed()) return cmd_decrypt_image(di_in, di_key, di_out);
        if (eval->parsed()) {
            return cmd_evaluate(ev_model, ev_dataset, ev_n, ev_seed, ev_noise, ev_dir, ev_key,
                                ev_encrypted);
        }
        if (verify->parsed()) return cmd_verify(vf_model, vf_key, vf_n, vf_seed, vf_json);
    } catch (const KeyValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
