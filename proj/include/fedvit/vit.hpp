#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedvit/linalg.hpp"

namespace fedvit {

struct ViTConfig {
    std::size_t image_h = 32;
    std::size_t image_w = 32;
    std::size_t channels = 1;
    std::size_t patch = 8;
    std::size_t dim = 32;
    std::size_t depth = 2;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 2;
    std::size_t classes = 3;

    std::size_t n_patches() const { return (image_h / patch) * (image_w / patch); }
    std::size_t patch_len() const { return patch * patch * channels; }
    std::size_t tokens() const { return n_patches() + 1; }
    std::size_t mlp_dim() const { return dim * mlp_ratio; }
    std::size_t head_dim() const { return dim / heads; }

    void validate() const;

    bool operator==(const ViTConfig&) const = default;
};

// h*w*c pixels, (row, col, channel) layout. Plain images live in [0,1];
// encrypted ones are unbounded.
struct ImageTensor {
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t c = 0;
    std::vector<double> data;

    ImageTensor() = default;
    ImageTensor(std::size_t h_, std::size_t w_, std::size_t c_)
        : h(h_), w(w_), c(c_), data(h_ * w_ * c_, 0.0) {}

    double& at(std::size_t r, std::size_t col, std::size_t ch) {
        return data[(r * w + col) * c + ch];
    }
    double at(std::size_t r, std::size_t col, std::size_t ch) const {
        return data[(r * w + col) * c + ch];
    }
};

struct Sample {
    ImageTensor image;
    std::uint32_t label = 0;
};

struct EncoderBlock {
    Vector ln1_gamma, ln1_beta;  // D
    Matrix wq, wk, wv, wo;       // DxD, no biases
    Vector ln2_gamma, ln2_beta;  // D
    Matrix w1;                   // DxM
    Vector b1;                   // M
    Matrix w2;                   // MxD
    Vector b2;                   // D
};

struct ViTModel {
    ViTConfig config;
    Matrix patch_embed;  // LxD
    Matrix pos_embed;    // (N+1)xD, row 0 is the class-token position
    Vector class_token;  // D
    std::vector<EncoderBlock> blocks;
    Vector lnf_gamma, lnf_beta;  // final norm, D
    Matrix head_w;               // DxK
    Vector head_b;               // K
};

// Uniform walk over every parameter tensor in a fixed order. fn is called
// as fn(name, vector<double>&, dims); the order defines the wire and
// checkpoint tensor order.
template <typename ModelT, typename Fn>
void visit_params(ModelT& m, Fn&& fn) {
    using U32 = std::uint32_t;
    const auto& c = m.config;
    const U32 L = static_cast<U32>(c.patch_len());
    const U32 D = static_cast<U32>(c.dim);
    const U32 T = static_cast<U32>(c.tokens());
    const U32 M = static_cast<U32>(c.mlp_dim());
    const U32 K = static_cast<U32>(c.classes);
    fn("embed.patch", m.patch_embed.data, std::vector<U32>{L, D});
    fn("embed.pos", m.pos_embed.data, std::vector<U32>{T, D});
    fn("embed.cls", m.class_token, std::vector<U32>{D});
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        auto& b = m.blocks[i];
        const std::string p = "block" + std::to_string(i) + ".";
        fn(p + "ln1.gamma", b.ln1_gamma, std::vector<U32>{D});
        fn(p + "ln1.beta", b.ln1_beta, std::vector<U32>{D});
        fn(p + "attn.wq", b.wq.data, std::vector<U32>{D, D});
        fn(p + "attn.wk", b.wk.data, std::vector<U32>{D, D});
        fn(p + "attn.wv", b.wv.data, std::vector<U32>{D, D});
        fn(p + "attn.wo", b.wo.data, std::vector<U32>{D, D});
        fn(p + "ln2.gamma", b.ln2_gamma, std::vector<U32>{D});
        fn(p + "ln2.beta", b.ln2_beta, std::vector<U32>{D});
        fn(p + "mlp.w1", b.w1.data, std::vector<U32>{D, M});
        fn(p + "mlp.b1", b.b1, std::vector<U32>{M});
        fn(p + "mlp.w2", b.w2.data, std::vector<U32>{M, D});
        fn(p + "mlp.b2", b.b2, std::vector<U32>{D});
    }
    fn("final_norm.gamma", m.lnf_gamma, std::vector<U32>{D});
    fn("final_norm.beta", m.lnf_beta, std::vector<U32>{D});
    fn("head.w", m.head_w.data, std::vector<U32>{D, K});
    fn("head.b", m.head_b, std::vector<U32>{K});
}

// Model with all tensors allocated and zeroed; used for gradients and
// optimizer velocity.
ViTModel zeros_like_model(const ViTConfig& config);

// Random init: Gaussian scale 0.02 for weight matrices and embeddings,
// ones for norm scales, zeros for shifts and biases.
ViTModel init_model(const ViTConfig& config, Rng& rng);

// Split into p*p blocks, row-major over blocks; each block flattened as
// index = (r*p + col)*c + channel. Returns NxL.
Matrix patchify(const ImageTensor& x, std::size_t p);

// z0: row 0 = class token + pos row 0, row i = patches[i-1] * E + pos row i.
// The patch-times-E dots use canonical summation (see sum_sorted).
Matrix embed(const ViTModel& m, const Matrix& patches);

// Full forward trace kept for backprop.
struct BlockTrace {
    Matrix x;                 // block input
    Matrix xhat1;             // LN1 normalized rows
    Vector inv1;              // LN1 per-row inverse stddev
    Matrix h1;                // LN1 output
    Matrix q, k, v;           // projections
    std::vector<Matrix> att;  // per-head attention weights, TxT
    Matrix cat;               // concatenated head outputs
    Matrix x2;                // after attention residual
    Matrix xhat2;
    Vector inv2;
    Matrix h2;
    Matrix u;  // pre-activation MLP hidden
    Matrix g;  // gelu(u)
};

struct ForwardTrace {
    Matrix z0;
    std::vector<BlockTrace> blocks;
    Matrix x_final;  // encoder output before final norm
    Matrix xhatf;
    Vector invf;
    Matrix encoded;  // after final norm, TxD
    Vector logits;
};

ForwardTrace run_forward(const ViTModel& m, Matrix z0);

// Encoder + final norm only (row 0 is the class-token readout).
Matrix encode(const ViTModel& m, const Matrix& z0);

Vector forward_from_patches(const ViTModel& m, const Matrix& patches);
Vector forward(const ViTModel& m, const ImageTensor& x);

struct LossAndGrads {
    double loss = 0.0;
    ViTModel grads;
};

// Mean softmax cross-entropy over the batch with analytic gradients for
// every parameter tensor.
LossAndGrads loss_and_grads(const ViTModel& m, std::span<const Sample> batch);

// Heavy-ball momentum: v <- momentum*v + g; w <- w - lr*v.
void sgd_step(ViTModel& model, const ViTModel& grads, double lr, double momentum,
              ViTModel& velocity);

std::size_t argmax(std::span<const double> xs);

double evaluate_accuracy(const ViTModel& m, std::span<const Sample> samples);

constexpr double kLayerNormEps = 1e-5;

}  // namespace fedvit
