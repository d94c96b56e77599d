#include "fedvit/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace fedvit {

namespace {

std::vector<unsigned char> read_all_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open file: " + path);
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw IoError("failed reading file: " + path);
    return bytes;
}

// One CIFAR batch file: fixed-size records, planar 32x32 RGB.
void load_cifar_batch(const std::string& path, std::size_t label_bytes, std::size_t label_offset,
                      std::uint32_t n_classes, LabeledDataset& out) {
    constexpr std::size_t kPixels = 32 * 32;
    const std::size_t record = label_bytes + 3 * kPixels;
    const std::vector<unsigned char> bytes = read_all_bytes(path);
    if (bytes.empty() || bytes.size() % record != 0) {
        throw FormatError("CIFAR batch " + path + ": size " + std::to_string(bytes.size()) +
                          " bytes is not a multiple of the record size " + std::to_string(record));
    }
    const std::size_t count = bytes.size() / record;
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* rec = bytes.data() + i * record;
        Sample s;
        s.label = rec[label_offset];
        if (s.label >= n_classes) {
            throw FormatError("CIFAR batch " + path + ": record " + std::to_string(i) +
                              " has label " + std::to_string(s.label) + " >= " +
                              std::to_string(n_classes));
        }
        s.image = ImageTensor(32, 32, 3);
        const unsigned char* px = rec + label_bytes;
        for (std::size_t ch = 0; ch < 3; ++ch) {
            for (std::size_t r = 0; r < 32; ++r) {
                for (std::size_t col = 0; col < 32; ++col) {
                    s.image.at(r, col, ch) =
                        static_cast<double>(px[ch * kPixels + r * 32 + col]) / 255.0;
                }
            }
        }
        out.samples.push_back(std::move(s));
    }
}

}  // namespace

std::pair<LabeledDataset, LabeledDataset> load_cifar(const std::string& dir, int variant) {
    if (variant != 10 && variant != 100) {
        throw FormatError("load_cifar: variant must be 10 or 100");
    }
    LabeledDataset train, test;
    if (variant == 10) {
        train.name = "cifar10-train";
        test.name = "cifar10-test";
        train.n_classes = test.n_classes = 10;
        for (int i = 1; i <= 5; ++i) {
            load_cifar_batch(dir + "/data_batch_" + std::to_string(i) + ".bin", 1, 0, 10, train);
        }
        load_cifar_batch(dir + "/test_batch.bin", 1, 0, 10, test);
    } else {
        train.name = "cifar100-train";
        test.name = "cifar100-test";
        train.n_classes = test.n_classes = 100;
        // record = coarse label, fine label, pixels; fine label is used
        load_cifar_batch(dir + "/train.bin", 2, 1, 100, train);
        load_cifar_batch(dir + "/test.bin", 2, 1, 100, test);
    }
    return {std::move(train), std::move(test)};
}

LabeledDataset synth_dataset(std::size_t n_samples, std::uint32_t n_classes, std::size_t h,
                             std::size_t w, std::size_t c, double noise_sigma, Rng& rng) {
    if (n_classes < 2) throw Error("synth_dataset: need at least 2 classes");
    LabeledDataset ds;
    ds.name = "synth";
    ds.n_classes = n_classes;
    ds.samples.reserve(n_samples);
    const double scale = static_cast<double>(std::max(h, w));
    for (std::size_t s = 0; s < n_samples; ++s) {
        const std::uint32_t label = static_cast<std::uint32_t>(rng.below(n_classes));
        const double theta = M_PI * static_cast<double>(label) / static_cast<double>(n_classes);
        const double freq = 1.5 + 0.75 * static_cast<double>(label % 12);
        const double ct = std::cos(theta);
        const double st = std::sin(theta);
        Sample sample;
        sample.label = label;
        sample.image = ImageTensor(h, w, c);
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t col = 0; col < w; ++col) {
                const double t = (ct * static_cast<double>(col) + st * static_cast<double>(r)) / scale;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double phase = 0.9 * static_cast<double>(ch);
                    double v = 0.5 + 0.45 * std::sin(2.0 * M_PI * freq * t + phase);
                    if (noise_sigma > 0.0) v += noise_sigma * rng.gaussian();
                    sample.image.at(r, col, ch) = std::clamp(v, 0.0, 1.0);
                }
            }
        }
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

ImageTensor resize_nearest(const ImageTensor& x, std::size_t h2, std::size_t w2) {
    if (h2 == 0 || w2 == 0) throw ShapeError("resize_nearest: target dims must be positive");
    if (h2 == x.h && w2 == x.w) return x;
    ImageTensor out(h2, w2, x.c);
    for (std::size_t r = 0; r < h2; ++r) {
        const std::size_t sr = r * x.h / h2;
        for (std::size_t col = 0; col < w2; ++col) {
            const std::size_t sc = col * x.w / w2;
            for (std::size_t ch = 0; ch < x.c; ++ch) {
                out.at(r, col, ch) = x.at(sr, sc, ch);
            }
        }
    }
    return out;
}

void save_image_pnm(const ImageTensor& x, const std::string& path) {
    if (x.c != 1 && x.c != 3) {
        throw FormatError("save_image_pnm: only 1 or 3 channels supported, got " +
                          std::to_string(x.c));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open image for writing: " + path);
    out << (x.c == 3 ? "P6" : "P5") << "\n" << x.w << " " << x.h << "\n255\n";
    for (std::size_t r = 0; r < x.h; ++r) {
        for (std::size_t col = 0; col < x.w; ++col) {
            for (std::size_t ch = 0; ch < x.c; ++ch) {
                const double v = std::clamp(x.at(r, col, ch), 0.0, 1.0);
                const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
                out.write(reinterpret_cast<const char*>(&b), 1);
            }
        }
    }
    if (!out) throw IoError("failed writing image: " + path);
}

namespace {

// next whitespace-delimited token, skipping '#' comment lines
std::string next_pnm_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

}  // namespace

ImageTensor replicate_to_rgb(const ImageTensor& x) {
    if (x.c == 3) return x;
    if (x.c != 1) throw ShapeError("replicate_to_rgb: expects 1 or 3 channels");
    ImageTensor out(x.h, x.w, 3);
    for (std::size_t r = 0; r < x.h; ++r) {
        for (std::size_t col = 0; col < x.w; ++col) {
            for (std::size_t ch = 0; ch < 3; ++ch) out.at(r, col, ch) = x.at(r, col, 0);
        }
    }
    return out;
}

nlohmann::json vit_config_to_json(const ViTConfig& c) {
    return nlohmann::json{{"image_h", c.image_h}, {"image_w", c.image_w},
                          {"channels", c.channels}, {"patch", c.patch},
                          {"dim", c.dim},         {"depth", c.depth},
                          {"heads", c.heads},     {"mlp_ratio", c.mlp_ratio},
                          {"classes", c.classes}};
}

ViTConfig vit_config_from_json(const nlohmann::json& j) {
    ViTConfig c;
    try {
        c.image_h = j.at("image_h").get<std::size_t>();
        c.image_w = j.at("image_w").get<std::size_t>();
        c.channels = j.at("channels").get<std::size_t>();
        c.patch = j.at("patch").get<std::size_t>();
        c.dim = j.at("dim").get<std::size_t>();
        c.depth = j.at("depth").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
        c.classes = j.at("classes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

void save_checkpoint(const ViTModel& m, const std::string& path,
                     const std::string& key_fingerprint) {
    nlohmann::json j;
    j["format"] = "fedvit-checkpoint/v1";
    j["model"] = vit_config_to_json(m.config);
    j["key_fingerprint"] = key_fingerprint;
    nlohmann::json tensors = nlohmann::json::object();
    visit_params(m, [&](const std::string& name, const std::vector<double>& data,
                        std::vector<std::uint32_t>) { tensors[name] = data; });
    j["tensors"] = std::move(tensors);
    std::ofstream out(path);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + path + ": " + e.what());
    }
    if (j.value("format", "") != "fedvit-checkpoint/v1") {
        throw FormatError("checkpoint " + path + ": unknown format tag");
    }
    Checkpoint ck;
    ck.model = zeros_like_model(vit_config_from_json(j.at("model")));
    ck.key_fingerprint = j.value("key_fingerprint", "");
    const nlohmann::json& tensors = j.at("tensors");
    std::size_t seen = 0;
    visit_params(ck.model, [&](const std::string& name, std::vector<double>& data,
                               std::vector<std::uint32_t>) {
        const auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw FormatError("checkpoint " + path + ": missing tensor '" + name + "'");
        }
        std::vector<double> vals;
        try {
            vals = it->get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("checkpoint " + path + " tensor '" + name + "': " + e.what());
        }
        if (vals.size() != data.size()) {
            throw FormatError("checkpoint " + path + ": tensor '" + name + "' has " +
                              std::to_string(vals.size()) + " values, expected " +
                              std::to_string(data.size()));
        }
        data = std::move(vals);
        ++seen;
    });
    if (tensors.size() != seen) {
        throw FormatError("checkpoint " + path + ": has tensors outside the model manifest");
    }
    return ck;
}

ImageTensor load_image_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    const std::string magic = next_pnm_token(in);
    std::size_t channels = 0;
    if (magic == "P6") {
        channels = 3;
    } else if (magic == "P5") {
        channels = 1;
    } else {
        throw ParseError("image " + path + ": unsupported magic '" + magic + "'");
    }
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(next_pnm_token(in));
        h = std::stoul(next_pnm_token(in));
        maxval = std::stoul(next_pnm_token(in));
    } catch (const std::exception&) {
        throw ParseError("image " + path + ": malformed header");
    }
    if (w == 0 || h == 0 || maxval != 255) {
        throw ParseError("image " + path + ": unsupported dimensions or depth");
    }
    ImageTensor img(h, w, channels);
    std::vector<unsigned char> row(w * channels);
    for (std::size_t r = 0; r < h; ++r) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw ParseError("image " + path + ": truncated pixel data");
        for (std::size_t col = 0; col < w; ++col) {
            for (std::size_t ch = 0; ch < channels; ++ch) {
                img.at(r, col, ch) = static_cast<double>(row[col * channels + ch]) / 255.0;
            }
        }
    }
    return img;
}

}  // namespace fedvit
