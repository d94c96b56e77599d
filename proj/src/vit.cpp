#include "fedvit/vit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fedvit {

void ViTConfig::validate() const {
    if (image_h == 0 || image_w == 0 || channels == 0) {
        throw ShapeError("config: image dimensions must be positive");
    }
    if (patch == 0 || image_h % patch != 0 || image_w % patch != 0) {
        throw ShapeError("config: patch size " + std::to_string(patch) +
                         " must divide image " + std::to_string(image_h) + "x" +
                         std::to_string(image_w));
    }
    if (dim == 0 || heads == 0 || dim % heads != 0) {
        throw ShapeError("config: hidden dim " + std::to_string(dim) +
                         " must be divisible by heads " + std::to_string(heads));
    }
    if (mlp_ratio == 0) throw ShapeError("config: mlp_ratio must be >= 1");
    if (classes < 2) throw ShapeError("config: need at least 2 classes");
}

ViTModel zeros_like_model(const ViTConfig& config) {
    config.validate();
    const std::size_t L = config.patch_len();
    const std::size_t D = config.dim;
    const std::size_t T = config.tokens();
    const std::size_t M = config.mlp_dim();
    ViTModel m;
    m.config = config;
    m.patch_embed = Matrix(L, D);
    m.pos_embed = Matrix(T, D);
    m.class_token.assign(D, 0.0);
    m.blocks.resize(config.depth);
    for (auto& b : m.blocks) {
        b.ln1_gamma.assign(D, 0.0);
        b.ln1_beta.assign(D, 0.0);
        b.wq = Matrix(D, D);
        b.wk = Matrix(D, D);
        b.wv = Matrix(D, D);
        b.wo = Matrix(D, D);
        b.ln2_gamma.assign(D, 0.0);
        b.ln2_beta.assign(D, 0.0);
        b.w1 = Matrix(D, M);
        b.b1.assign(M, 0.0);
        b.w2 = Matrix(M, D);
        b.b2.assign(D, 0.0);
    }
    m.lnf_gamma.assign(D, 0.0);
    m.lnf_beta.assign(D, 0.0);
    m.head_w = Matrix(D, config.classes);
    m.head_b.assign(config.classes, 0.0);
    return m;
}

namespace {

void fill_gaussian(std::vector<double>& v, Rng& rng, double scale) {
    for (double& x : v) x = scale * rng.gaussian();
}

}  // namespace

ViTModel init_model(const ViTConfig& config, Rng& rng) {
    ViTModel m = zeros_like_model(config);
    constexpr double kScale = 0.02;
    fill_gaussian(m.patch_embed.data, rng, kScale);
    fill_gaussian(m.pos_embed.data, rng, kScale);
    fill_gaussian(m.class_token, rng, kScale);
    for (auto& b : m.blocks) {
        std::fill(b.ln1_gamma.begin(), b.ln1_gamma.end(), 1.0);
        fill_gaussian(b.wq.data, rng, kScale);
        fill_gaussian(b.wk.data, rng, kScale);
        fill_gaussian(b.wv.data, rng, kScale);
        fill_gaussian(b.wo.data, rng, kScale);
        std::fill(b.ln2_gamma.begin(), b.ln2_gamma.end(), 1.0);
        fill_gaussian(b.w1.data, rng, kScale);
        fill_gaussian(b.w2.data, rng, kScale);
    }
    std::fill(m.lnf_gamma.begin(), m.lnf_gamma.end(), 1.0);
    fill_gaussian(m.head_w.data, rng, kScale);
    return m;
}

Matrix patchify(const ImageTensor& x, std::size_t p) {
    if (p == 0 || x.h % p != 0 || x.w % p != 0) {
        throw ShapeError("patchify: patch size " + std::to_string(p) +
                         " does not divide image " + std::to_string(x.h) + "x" +
                         std::to_string(x.w));
    }
    const std::size_t bh = x.h / p;
    const std::size_t bw = x.w / p;
    const std::size_t n = bh * bw;
    const std::size_t len = p * p * x.c;
    Matrix patches(n, len);
    for (std::size_t br = 0; br < bh; ++br) {
        for (std::size_t bc = 0; bc < bw; ++bc) {
            double* out = patches.data.data() + (br * bw + bc) * len;
            for (std::size_t r = 0; r < p; ++r) {
                for (std::size_t col = 0; col < p; ++col) {
                    for (std::size_t ch = 0; ch < x.c; ++ch) {
                        out[(r * p + col) * x.c + ch] = x.at(br * p + r, bc * p + col, ch);
                    }
                }
            }
        }
    }
    return patches;
}

Matrix embed(const ViTModel& m, const Matrix& patches) {
    const std::size_t L = m.config.patch_len();
    const std::size_t D = m.config.dim;
    const std::size_t N = m.config.n_patches();
    if (patches.rows != N || patches.cols != L) {
        throw ShapeError("embed: patches are " + std::to_string(patches.rows) + "x" +
                         std::to_string(patches.cols) + ", expected " + std::to_string(N) +
                         "x" + std::to_string(L));
    }
    Matrix z0(N + 1, D);
    for (std::size_t d = 0; d < D; ++d) {
        z0(0, d) = m.class_token[d] + m.pos_embed(0, d);
    }
    for (std::size_t i = 0; i < N; ++i) {
        const double* pr = patches.data.data() + i * L;
        for (std::size_t d = 0; d < D; ++d) {
            z0(i + 1, d) =
                dot_sorted_strided(pr, m.patch_embed.data.data() + d, L, D) + m.pos_embed(i + 1, d);
        }
    }
    return z0;
}

namespace {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) * 0.39894228040143267794;  // 1/sqrt(2*pi)
    return cdf + x * pdf;
}

void layer_norm_rows(const Matrix& x, const Vector& gamma, const Vector& beta, Matrix& xhat,
                     Vector& inv, Matrix& out) {
    const std::size_t rows = x.rows;
    const std::size_t cols = x.cols;
    xhat = Matrix(rows, cols);
    inv.assign(rows, 0.0);
    out = Matrix(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* xr = x.data.data() + i * cols;
        double mu = 0.0;
        for (std::size_t d = 0; d < cols; ++d) mu += xr[d];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t d = 0; d < cols; ++d) {
            const double dev = xr[d] - mu;
            var += dev * dev;
        }
        var /= static_cast<double>(cols);
        const double iv = 1.0 / std::sqrt(var + kLayerNormEps);
        inv[i] = iv;
        double* xh = xhat.data.data() + i * cols;
        double* o = out.data.data() + i * cols;
        for (std::size_t d = 0; d < cols; ++d) {
            xh[d] = (xr[d] - mu) * iv;
            o[d] = gamma[d] * xh[d] + beta[d];
        }
    }
}

void add_inplace(Matrix& a, const Matrix& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void add_rowwise(Matrix& a, const Vector& bias) {
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* r = a.data.data() + i * a.cols;
        for (std::size_t d = 0; d < a.cols; ++d) r[d] += bias[d];
    }
}

// plain dot over the feature axis (never permuted by encryption)
inline double dot_plain(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

ForwardTrace run_forward(const ViTModel& m, Matrix z0) {
    const std::size_t T = m.config.tokens();
    const std::size_t D = m.config.dim;
    const std::size_t H = m.config.heads;
    const std::size_t dh = m.config.head_dim();
    const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));
    if (z0.rows != T || z0.cols != D) {
        throw ShapeError("run_forward: z0 is " + std::to_string(z0.rows) + "x" +
                         std::to_string(z0.cols) + ", expected " + std::to_string(T) + "x" +
                         std::to_string(D));
    }

    ForwardTrace t;
    t.z0 = std::move(z0);
    Matrix x = t.z0;
    t.blocks.reserve(m.blocks.size());
    std::vector<double> expbuf(T);

    for (const EncoderBlock& b : m.blocks) {
        BlockTrace bt;
        bt.x = x;
        layer_norm_rows(bt.x, b.ln1_gamma, b.ln1_beta, bt.xhat1, bt.inv1, bt.h1);
        bt.q = mat_mul(bt.h1, b.wq);
        bt.k = mat_mul(bt.h1, b.wk);
        bt.v = mat_mul(bt.h1, b.wv);

        bt.att.resize(H);
        bt.cat = Matrix(T, D);
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t off = h * dh;
            Matrix a(T, T);
            for (std::size_t i = 0; i < T; ++i) {
                const double* qi = bt.q.data.data() + i * D + off;
                double* arow = a.data.data() + i * T;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < T; ++j) {
                    const double* kj = bt.k.data.data() + j * D + off;
                    const double s = alpha * dot_plain(qi, kj, dh);
                    arow[j] = s;
                    mx = std::max(mx, s);
                }
                for (std::size_t j = 0; j < T; ++j) expbuf[j] = std::exp(arow[j] - mx);
                const double denom = sum_sorted(std::span<const double>(expbuf.data(), T));
                for (std::size_t j = 0; j < T; ++j) arow[j] = expbuf[j] / denom;
            }
            // aggregate values over tokens with canonical summation
            for (std::size_t i = 0; i < T; ++i) {
                const double* arow = a.data.data() + i * T;
                for (std::size_t d0 = 0; d0 < dh; ++d0) {
                    bt.cat(i, off + d0) =
                        dot_sorted_strided(arow, bt.v.data.data() + off + d0, T, D);
                }
            }
            bt.att[h] = std::move(a);
        }

        Matrix attn_out = mat_mul(bt.cat, b.wo);
        bt.x2 = bt.x;
        add_inplace(bt.x2, attn_out);

        layer_norm_rows(bt.x2, b.ln2_gamma, b.ln2_beta, bt.xhat2, bt.inv2, bt.h2);
        bt.u = mat_mul(bt.h2, b.w1);
        add_rowwise(bt.u, b.b1);
        bt.g = Matrix(bt.u.rows, bt.u.cols);
        for (std::size_t i = 0; i < bt.u.data.size(); ++i) bt.g.data[i] = gelu(bt.u.data[i]);
        Matrix mlp_out = mat_mul(bt.g, b.w2);
        add_rowwise(mlp_out, b.b2);

        x = bt.x2;
        add_inplace(x, mlp_out);
        t.blocks.push_back(std::move(bt));
    }

    t.x_final = x;
    layer_norm_rows(t.x_final, m.lnf_gamma, m.lnf_beta, t.xhatf, t.invf, t.encoded);

    const std::size_t K = m.config.classes;
    t.logits.assign(K, 0.0);
    const double* y0 = t.encoded.data.data();
    for (std::size_t k = 0; k < K; ++k) {
        double s = m.head_b[k];
        for (std::size_t d = 0; d < D; ++d) s += y0[d] * m.head_w(d, k);
        t.logits[k] = s;
    }
    return t;
}

Matrix encode(const ViTModel& m, const Matrix& z0) { return run_forward(m, z0).encoded; }

Vector forward_from_patches(const ViTModel& m, const Matrix& patches) {
    return run_forward(m, embed(m, patches)).logits;
}

Vector forward(const ViTModel& m, const ImageTensor& x) {
    if (x.h != m.config.image_h || x.w != m.config.image_w || x.c != m.config.channels) {
        throw ShapeError("forward: image is " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                         "x" + std::to_string(x.c) + ", config expects " +
                         std::to_string(m.config.image_h) + "x" + std::to_string(m.config.image_w) +
                         "x" + std::to_string(m.config.channels));
    }
    return forward_from_patches(m, patchify(x, m.config.patch));
}

namespace {

// dx for y = gamma*xhat + beta given upstream dy; accumulates dgamma/dbeta.
Matrix ln_backward(const Vector& gamma, const Matrix& xhat, const Vector& inv, const Matrix& dy,
                   Vector& dgamma, Vector& dbeta) {
    const std::size_t rows = dy.rows;
    const std::size_t cols = dy.cols;
    const double dcols = static_cast<double>(cols);
    Matrix dx(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* dyr = dy.data.data() + i * cols;
        const double* xh = xhat.data.data() + i * cols;
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t d = 0; d < cols; ++d) {
            dgamma[d] += dyr[d] * xh[d];
            dbeta[d] += dyr[d];
            const double dxh = dyr[d] * gamma[d];
            m1 += dxh;
            m2 += dxh * xh[d];
        }
        m1 /= dcols;
        m2 /= dcols;
        double* dxr = dx.data.data() + i * cols;
        for (std::size_t d = 0; d < cols; ++d) {
            const double dxh = dyr[d] * gamma[d];
            dxr[d] = inv[i] * (dxh - m1 - xh[d] * m2);
        }
    }
    return dx;
}

void colsum_into(Vector& acc, const Matrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.data.data() + i * m.cols;
        for (std::size_t d = 0; d < m.cols; ++d) acc[d] += r[d];
    }
}

void mat_add_into(Matrix& acc, const Matrix& m) {
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += m.data[i];
}

Matrix block_backward(const EncoderBlock& b, const BlockTrace& bt, const Matrix& dx3,
                      std::size_t heads, EncoderBlock& gb) {
    const std::size_t T = dx3.rows;
    const std::size_t D = dx3.cols;
    const std::size_t dh = D / heads;
    const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));

    // MLP branch
    Matrix dG = mat_mul(dx3, transpose(b.w2));
    mat_add_into(gb.w2, mat_mul(transpose(bt.g), dx3));
    colsum_into(gb.b2, dx3);
    Matrix dU(dG.rows, dG.cols);
    for (std::size_t i = 0; i < dU.data.size(); ++i) {
        dU.data[i] = dG.data[i] * gelu_grad(bt.u.data[i]);
    }
    Matrix dH2 = mat_mul(dU, transpose(b.w1));
    mat_add_into(gb.w1, mat_mul(transpose(bt.h2), dU));
    colsum_into(gb.b1, dU);

    Matrix dX2 = dx3;
    add_inplace(dX2, ln_backward(b.ln2_gamma, bt.xhat2, bt.inv2, dH2, gb.ln2_gamma, gb.ln2_beta));

    // attention branch
    Matrix dCat = mat_mul(dX2, transpose(b.wo));
    mat_add_into(gb.wo, mat_mul(transpose(bt.cat), dX2));

    Matrix dQ(T, D), dK(T, D), dV(T, D);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        const Matrix& a = bt.att[h];
        Matrix dA(T, T);
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t j = 0; j < T; ++j) {
                double s = 0.0;
                for (std::size_t d0 = 0; d0 < dh; ++d0) {
                    s += dCat(i, off + d0) * bt.v(j, off + d0);
                }
                dA(i, j) = s;
            }
        }
        for (std::size_t j = 0; j < T; ++j) {
            for (std::size_t d0 = 0; d0 < dh; ++d0) {
                double s = 0.0;
                for (std::size_t i = 0; i < T; ++i) s += a(i, j) * dCat(i, off + d0);
                dV(j, off + d0) += s;
            }
        }
        // softmax jacobian per row
        Matrix dS(T, T);
        for (std::size_t i = 0; i < T; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < T; ++j) dot += dA(i, j) * a(i, j);
            for (std::size_t j = 0; j < T; ++j) dS(i, j) = a(i, j) * (dA(i, j) - dot);
        }
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t d0 = 0; d0 < dh; ++d0) {
                double s = 0.0;
                for (std::size_t j = 0; j < T; ++j) s += dS(i, j) * bt.k(j, off + d0);
                dQ(i, off + d0) += alpha * s;
            }
        }
        for (std::size_t j = 0; j < T; ++j) {
            for (std::size_t d0 = 0; d0 < dh; ++d0) {
                double s = 0.0;
                for (std::size_t i = 0; i < T; ++i) s += dS(i, j) * bt.q(i, off + d0);
                dK(j, off + d0) += alpha * s;
            }
        }
    }

    Matrix dH1 = mat_mul(dQ, transpose(b.wq));
    add_inplace(dH1, mat_mul(dK, transpose(b.wk)));
    add_inplace(dH1, mat_mul(dV, transpose(b.wv)));
    mat_add_into(gb.wq, mat_mul(transpose(bt.h1), dQ));
    mat_add_into(gb.wk, mat_mul(transpose(bt.h1), dK));
    mat_add_into(gb.wv, mat_mul(transpose(bt.h1), dV));

    Matrix dx = dX2;
    add_inplace(dx, ln_backward(b.ln1_gamma, bt.xhat1, bt.inv1, dH1, gb.ln1_gamma, gb.ln1_beta));
    return dx;
}

void backward_into(const ViTModel& m, const ForwardTrace& t, const Matrix& patches,
                   std::span<const double> dlogits, ViTModel& grads) {
    const std::size_t T = m.config.tokens();
    const std::size_t D = m.config.dim;
    const std::size_t K = m.config.classes;
    const std::size_t N = m.config.n_patches();
    const std::size_t L = m.config.patch_len();

    // head (reads class-token row of the encoded output)
    const double* y0 = t.encoded.data.data();
    Vector dy0(D, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const double dl = dlogits[k];
        grads.head_b[k] += dl;
        for (std::size_t d = 0; d < D; ++d) {
            grads.head_w(d, k) += y0[d] * dl;
            dy0[d] += dl * m.head_w(d, k);
        }
    }

    // final norm; only row 0 receives a gradient
    Matrix dY(T, D);
    for (std::size_t d = 0; d < D; ++d) dY(0, d) = dy0[d];
    Matrix dX = ln_backward(m.lnf_gamma, t.xhatf, t.invf, dY, grads.lnf_gamma, grads.lnf_beta);

    for (std::size_t blk = m.blocks.size(); blk-- > 0;) {
        dX = block_backward(m.blocks[blk], t.blocks[blk], dX, m.config.heads, grads.blocks[blk]);
    }

    // embedding
    for (std::size_t d = 0; d < D; ++d) {
        grads.class_token[d] += dX(0, d);
        grads.pos_embed(0, d) += dX(0, d);
    }
    for (std::size_t i = 0; i < N; ++i) {
        const double* pr = patches.data.data() + i * L;
        const double* dzr = dX.data.data() + (i + 1) * D;
        for (std::size_t d = 0; d < D; ++d) grads.pos_embed(i + 1, d) += dzr[d];
        for (std::size_t l = 0; l < L; ++l) {
            const double pl = pr[l];
            double* ge = grads.patch_embed.data.data() + l * D;
            for (std::size_t d = 0; d < D; ++d) ge[d] += pl * dzr[d];
        }
    }
}

}  // namespace

LossAndGrads loss_and_grads(const ViTModel& m, std::span<const Sample> batch) {
    if (batch.empty()) throw Error("loss_and_grads: empty batch");
    const std::size_t K = m.config.classes;
    LossAndGrads out;
    out.grads = zeros_like_model(m.config);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    Vector dlogits(K, 0.0);
    for (const Sample& s : batch) {
        if (s.label >= K) {
            throw ShapeError("loss_and_grads: label " + std::to_string(s.label) +
                             " out of range for " + std::to_string(K) + " classes");
        }
        const Matrix patches = patchify(s.image, m.config.patch);
        const ForwardTrace t = run_forward(m, embed(m, patches));

        double mx = t.logits[0];
        for (double v : t.logits) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : t.logits) sum += std::exp(v - mx);
        const double lse = mx + std::log(sum);
        total += lse - t.logits[s.label];

        for (std::size_t k = 0; k < K; ++k) {
            const double p = std::exp(t.logits[k] - lse);
            dlogits[k] = (p - (k == s.label ? 1.0 : 0.0)) * inv_b;
        }
        backward_into(m, t, patches, dlogits, out.grads);
    }
    out.loss = total * inv_b;
    if (!std::isfinite(out.loss)) throw Error("loss_and_grads: non-finite loss");
    return out;
}

void sgd_step(ViTModel& model, const ViTModel& grads, double lr, double momentum,
              ViTModel& velocity) {
    std::vector<std::span<double>> w, v;
    std::vector<std::span<const double>> g;
    visit_params(model, [&](const std::string&, std::vector<double>& t, auto) {
        w.emplace_back(t);
    });
    visit_params(grads, [&](const std::string&, const std::vector<double>& t, auto) {
        g.emplace_back(t);
    });
    visit_params(velocity, [&](const std::string&, std::vector<double>& t, auto) {
        v.emplace_back(t);
    });
    if (w.size() != g.size() || w.size() != v.size()) {
        throw ShapeError("sgd_step: tensor count mismatch");
    }
    for (std::size_t t = 0; t < w.size(); ++t) {
        if (w[t].size() != g[t].size() || w[t].size() != v[t].size()) {
            throw ShapeError("sgd_step: tensor shape mismatch at index " + std::to_string(t));
        }
        for (std::size_t i = 0; i < w[t].size(); ++i) {
            v[t][i] = momentum * v[t][i] + g[t][i];
            w[t][i] -= lr * v[t][i];
        }
    }
}

std::size_t argmax(std::span<const double> xs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i] > xs[best]) best = i;
    }
    return best;
}

double evaluate_accuracy(const ViTModel& m, std::span<const Sample> samples) {
    if (samples.empty()) throw Error("evaluate_accuracy: empty sample set");
    std::size_t hits = 0;
    for (const Sample& s : samples) {
        if (argmax(forward(m, s.image)) == s.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

}  // namespace fedvit
