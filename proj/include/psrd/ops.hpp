#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "psrd/rng.hpp"
#include "psrd/tensor.hpp"

namespace psrd {

namespace detail {

// C[M,N] += A[M,K] * B[K,N], all row-major.
inline void gemm_nn(int M, int N, int K, const Real* A, const Real* B, Real* C) {
    for (int i = 0; i < M; ++i) {
        const Real* a = A + static_cast<std::int64_t>(i) * K;
        Real* c = C + static_cast<std::int64_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const Real av = a[k];
            if (av == Real(0)) continue;
            const Real* b = B + static_cast<std::int64_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B^T  with B stored [N,K].
inline void gemm_nt(int M, int N, int K, const Real* A, const Real* B, Real* C) {
    for (int i = 0; i < M; ++i) {
        const Real* a = A + static_cast<std::int64_t>(i) * K;
        Real* c = C + static_cast<std::int64_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const Real* b = B + static_cast<std::int64_t>(j) * K;
            Real acc = 0;
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C[M,N] += A^T * B  with A stored [K,M], B stored [K,N].
inline void gemm_tn(int M, int N, int K, const Real* A, const Real* B, Real* C) {
    for (int k = 0; k < K; ++k) {
        const Real* a = A + static_cast<std::int64_t>(k) * M;
        const Real* b = B + static_cast<std::int64_t>(k) * N;
        for (int i = 0; i < M; ++i) {
            const Real av = a[i];
            if (av == Real(0)) continue;
            Real* c = C + static_cast<std::int64_t>(i) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// Unfolds one sample of x into a [Cin*kh*kw, Hout*Wout] patch matrix.
inline void im2col(const Real* x, int Cin, int H, int W, int kh, int kw, int stride,
                   int pad, int Hout, int Wout, Real* cols) {
    const int P = Hout * Wout;
    for (int c = 0; c < Cin; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                Real* row = cols + static_cast<std::int64_t>((c * kh + ki) * kw + kj) * P;
                for (int oh = 0; oh < Hout; ++oh) {
                    const int ih = oh * stride + ki - pad;
                    if (ih < 0 || ih >= H) {
                        std::fill(row + oh * Wout, row + (oh + 1) * Wout, Real(0));
                        continue;
                    }
                    const Real* src = x + (static_cast<std::int64_t>(c) * H + ih) * W;
                    for (int ow = 0; ow < Wout; ++ow) {
                        const int iw = ow * stride + kj - pad;
                        row[oh * Wout + ow] = (iw >= 0 && iw < W) ? src[iw] : Real(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds patch-matrix gradients back into dx.
inline void col2im_acc(const Real* cols, int Cin, int H, int W, int kh, int kw, int stride,
                       int pad, int Hout, int Wout, Real* dx) {
    const int P = Hout * Wout;
    for (int c = 0; c < Cin; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const Real* row = cols + static_cast<std::int64_t>((c * kh + ki) * kw + kj) * P;
                for (int oh = 0; oh < Hout; ++oh) {
                    const int ih = oh * stride + ki - pad;
                    if (ih < 0 || ih >= H) continue;
                    Real* dst = dx + (static_cast<std::int64_t>(c) * H + ih) * W;
                    for (int ow = 0; ow < Wout; ++ow) {
                        const int iw = ow * stride + kj - pad;
                        if (iw >= 0 && iw < W) dst[iw] += row[oh * Wout + ow];
                    }
                }
            }
        }
    }
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t && t->defined() && t->requires_grad()) return true;
    return false;
}

inline void require_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + " must have rank " + std::to_string(rank) +
                             ", got shape " + shape_str(t.shape()));
    }
}

}  // namespace detail

inline void check_finite(const Tensor& t, const std::string& context) {
    if (!t.all_finite()) throw NumericError("non-finite values in " + context);
}

/// 2-d cross-correlation of x [N,Cin,H,W] with w [Cout,Cin,kh,kw] plus
/// optional per-channel bias. Output spatial size floor((H+2p-k)/s)+1.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
                     Graph* g = nullptr) {
    detail::require_rank(x, 4, "conv2d input");
    detail::require_rank(w, 4, "conv2d weight");
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Cin) {
        throw DimensionError("conv2d channel mismatch: input axis 1 is " + std::to_string(Cin) +
                             " but weight axis 1 is " + std::to_string(w.dim(1)));
    }
    if (kh > H + 2 * pad || kw > W + 2 * pad) {
        throw DimensionError("conv2d kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " exceeds padded input axes 2,3 of " + std::to_string(H + 2 * pad) +
                             "x" + std::to_string(W + 2 * pad));
    }
    if (b.defined() && (b.rank() != 1 || b.dim(0) != Cout)) {
        throw DimensionError("conv2d bias axis 0 must equal weight axis 0 (" + std::to_string(Cout) +
                             "), got " + shape_str(b.shape()));
    }
    if (stride < 1) throw ContractError("conv2d stride must be positive");
    if (pad < 0) throw ContractError("conv2d pad must be nonnegative");

    const int Hout = (H + 2 * pad - kh) / stride + 1;
    const int Wout = (W + 2 * pad - kw) / stride + 1;
    const int K = Cin * kh * kw;
    const int P = Hout * Wout;

    Tensor out({N, Cout, Hout, Wout});
    std::vector<Real> cols(static_cast<std::size_t>(K) * P);
    for (int n = 0; n < N; ++n) {
        detail::im2col(x.data() + x.flat4(n, 0, 0, 0), Cin, H, W, kh, kw, stride, pad, Hout, Wout,
                       cols.data());
        Real* on = out.data() + out.flat4(n, 0, 0, 0);
        detail::gemm_nn(Cout, P, K, w.data(), cols.data(), on);
        if (b.defined()) {
            for (int c = 0; c < Cout; ++c) {
                const Real bias = b[c];
                Real* oc = on + static_cast<std::int64_t>(c) * P;
                for (int p = 0; p < P; ++p) oc[p] += bias;
            }
        }
    }

    if (g && detail::any_requires_grad({&x, &w, b.defined() ? &b : nullptr})) {
        out.set_requires_grad(true);
        Tensor xc = x, wc = w, bc = b, oc = out;
        g->record([=]() mutable {
            const Real* dout = oc.grad();
            std::vector<Real> cols_b(static_cast<std::size_t>(K) * P);
            std::vector<Real> dcols(static_cast<std::size_t>(K) * P);
            for (int n = 0; n < N; ++n) {
                const Real* don = dout + oc.flat4(n, 0, 0, 0);
                if (bc.defined() && bc.requires_grad()) {
                    Real* db = bc.grad();
                    for (int c = 0; c < Cout; ++c) {
                        Real acc = 0;
                        const Real* dc = don + static_cast<std::int64_t>(c) * P;
                        for (int p = 0; p < P; ++p) acc += dc[p];
                        db[c] += acc;
                    }
                }
                if (wc.requires_grad() || xc.requires_grad()) {
                    detail::im2col(xc.data() + xc.flat4(n, 0, 0, 0), Cin, H, W, kh, kw, stride,
                                   pad, Hout, Wout, cols_b.data());
                }
                if (wc.requires_grad()) {
                    detail::gemm_nt(Cout, K, P, don, cols_b.data(), wc.grad());
                }
                if (xc.requires_grad()) {
                    std::fill(dcols.begin(), dcols.end(), Real(0));
                    detail::gemm_tn(K, P, Cout, wc.data(), don, dcols.data());
                    detail::col2im_acc(dcols.data(), Cin, H, W, kh, kw, stride, pad, Hout, Wout,
                                       xc.grad() + xc.flat4(n, 0, 0, 0));
                }
            }
        });
    }
    return out;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad, Graph* g = nullptr) {
    return conv2d(x, w, Tensor(), stride, pad, g);
}

/// Per-channel affine normalization parameters plus running statistics.
struct BNParams {
    Tensor gamma;         // trainable scale
    Tensor beta;          // trainable bias
    Tensor running_mean;  // buffer
    Tensor running_var;   // buffer
    Real eps = Real(1e-5);
    // running <- momentum_stat * running + (1 - momentum_stat) * batch
    Real momentum_stat = Real(0.9);

    static BNParams make(int channels) {
        BNParams p;
        p.gamma = Tensor::ones({channels});
        p.beta = Tensor::zeros({channels});
        p.running_mean = Tensor::zeros({channels});
        p.running_var = Tensor::ones({channels});
        return p;
    }

    int channels() const { return gamma.dim(0); }
};

/// Batch normalization over the N,H,W axes of x [N,C,H,W]. Training mode
/// normalizes by batch statistics (biased variance) and updates the running
/// buffers; eval mode normalizes by the running statistics.
inline Tensor batch_norm(const Tensor& x, BNParams& p, bool training, Graph* g = nullptr) {
    detail::require_rank(x, 4, "batch_norm input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (p.channels() != C) {
        throw DimensionError("batch_norm parameter length " + std::to_string(p.channels()) +
                             " does not match input axis 1 of " + std::to_string(C));
    }
    const std::int64_t m = static_cast<std::int64_t>(N) * H * W;
    if (training && m < 2) {
        throw NumericError("batch_norm: degenerate statistics, need at least 2 values per channel "
                           "in training mode, got " + std::to_string(m));
    }

    Tensor out({N, C, H, W});
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    auto xhat = std::make_shared<std::vector<Real>>(x.values().size());
    std::vector<Real> inv_std(static_cast<std::size_t>(C));

    for (int c = 0; c < C; ++c) {
        Real mean, var;
        if (training) {
            Real sum = 0;
            for (int n = 0; n < N; ++n) {
                const Real* xc = x.data() + x.flat4(n, c, 0, 0);
                for (std::int64_t i = 0; i < hw; ++i) sum += xc[i];
            }
            mean = sum / static_cast<Real>(m);
            Real sq = 0;
            for (int n = 0; n < N; ++n) {
                const Real* xc = x.data() + x.flat4(n, c, 0, 0);
                for (std::int64_t i = 0; i < hw; ++i) {
                    const Real d = xc[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<Real>(m);
            p.running_mean[c] = p.momentum_stat * p.running_mean[c] + (1 - p.momentum_stat) * mean;
            p.running_var[c] = p.momentum_stat * p.running_var[c] + (1 - p.momentum_stat) * var;
        } else {
            mean = p.running_mean[c];
            var = p.running_var[c];
        }
        const Real inv = Real(1) / std::sqrt(var + p.eps);
        inv_std[static_cast<std::size_t>(c)] = inv;
        const Real gam = p.gamma[c], bet = p.beta[c];
        for (int n = 0; n < N; ++n) {
            const Real* xc = x.data() + x.flat4(n, c, 0, 0);
            Real* oc = out.data() + out.flat4(n, c, 0, 0);
            Real* hc = xhat->data() + x.flat4(n, c, 0, 0);
            for (std::int64_t i = 0; i < hw; ++i) {
                const Real h = (xc[i] - mean) * inv;
                hc[i] = h;
                oc[i] = gam * h + bet;
            }
        }
    }

    if (g && detail::any_requires_grad({&x, &p.gamma, &p.beta})) {
        out.set_requires_grad(true);
        Tensor xc = x, gammac = p.gamma, betac = p.beta, oc = out;
        g->record([=]() mutable {
            const Real* dy = oc.grad();
            for (int c = 0; c < C; ++c) {
                Real sum_dy = 0, sum_dy_xhat = 0;
                for (int n = 0; n < N; ++n) {
                    const std::int64_t base = oc.flat4(n, c, 0, 0);
                    for (std::int64_t i = 0; i < hw; ++i) {
                        sum_dy += dy[base + i];
                        sum_dy_xhat += dy[base + i] * (*xhat)[static_cast<std::size_t>(base + i)];
                    }
                }
                if (gammac.requires_grad()) gammac.grad()[c] += sum_dy_xhat;
                if (betac.requires_grad()) betac.grad()[c] += sum_dy;
                if (!xc.requires_grad()) continue;
                const Real gam = gammac[c];
                const Real inv = inv_std[static_cast<std::size_t>(c)];
                Real* dx = xc.grad();
                if (training) {
                    const Real scale = gam * inv / static_cast<Real>(m);
                    for (int n = 0; n < N; ++n) {
                        const std::int64_t base = oc.flat4(n, c, 0, 0);
                        for (std::int64_t i = 0; i < hw; ++i) {
                            const Real h = (*xhat)[static_cast<std::size_t>(base + i)];
                            dx[base + i] += scale * (static_cast<Real>(m) * dy[base + i] - sum_dy -
                                                     h * sum_dy_xhat);
                        }
                    }
                } else {
                    for (int n = 0; n < N; ++n) {
                        const std::int64_t base = oc.flat4(n, c, 0, 0);
                        for (std::int64_t i = 0; i < hw; ++i) dx[base + i] += dy[base + i] * gam * inv;
                    }
                }
            }
        });
    }
    return out;
}

/// Elementwise max(0, x). The subgradient at 0 is taken as 0.
inline Tensor relu(const Tensor& x, Graph* g = nullptr) {
    Tensor out(x.shape());
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > Real(0) ? x[i] : Real(0);
    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        g->record([=]() mutable {
            const Real* dy = oc.grad();
            Real* dx = xc.grad();
            for (std::int64_t i = 0; i < n; ++i)
                if (xc[i] > Real(0)) dx[i] += dy[i];
        });
    }
    return out;
}

/// Windowed maximum over [N,C,H,W]. Gradient routes to the argmax cell;
/// ties go to the first cell in row-major scan order.
inline Tensor max_pool2d(const Tensor& x, int win, int stride, Graph* g = nullptr) {
    detail::require_rank(x, 4, "max_pool2d input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (win > H || win > W) {
        throw DimensionError("max_pool2d window " + std::to_string(win) +
                             " exceeds input axes 2,3 of " + std::to_string(H) + "x" +
                             std::to_string(W));
    }
    if (win < 1 || stride < 1) throw ContractError("max_pool2d window and stride must be positive");
    const int Hout = (H - win) / stride + 1;
    const int Wout = (W - win) / stride + 1;

    Tensor out({N, C, Hout, Wout});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
    std::int64_t o = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            for (int oh = 0; oh < Hout; ++oh) {
                for (int ow = 0; ow < Wout; ++ow, ++o) {
                    Real best = -std::numeric_limits<Real>::infinity();
                    std::int64_t best_idx = -1;
                    for (int i = 0; i < win; ++i) {
                        for (int j = 0; j < win; ++j) {
                            const std::int64_t idx = x.flat4(n, c, oh * stride + i, ow * stride + j);
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[o] = best;
                    (*argmax)[static_cast<std::size_t>(o)] = best_idx;
                }
            }
        }
    }

    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        g->record([=]() mutable {
            const Real* dy = oc.grad();
            Real* dx = xc.grad();
            const std::int64_t total = oc.numel();
            for (std::int64_t i = 0; i < total; ++i) dx[(*argmax)[static_cast<std::size_t>(i)]] += dy[i];
        });
    }
    return out;
}

/// Inverted dropout: in training, zeroes elements with probability p and
/// scales survivors by 1/(1-p); in eval it is the identity.
inline Tensor dropout(const Tensor& x, Real p, bool training, Rng& rng, Graph* g = nullptr) {
    if (p < Real(0) || p >= Real(1)) throw ContractError("dropout rate must lie in [0, 1)");
    const std::int64_t n = x.numel();
    if (!training || p == Real(0)) {
        Tensor out = x.clone();
        if (g && x.requires_grad()) {
            out.set_requires_grad(true);
            Tensor xc = x, oc = out;
            g->record([=]() mutable {
                const Real* dy = oc.grad();
                Real* dx = xc.grad();
                for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i];
            });
        }
        return out;
    }

    Tensor out(x.shape());
    auto mask = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(n));
    const Real keep_scale = Real(1) / (Real(1) - p);
    for (std::int64_t i = 0; i < n; ++i) {
        const Real m = rng.uniform() < static_cast<double>(p) ? Real(0) : keep_scale;
        (*mask)[static_cast<std::size_t>(i)] = m;
        out[i] = x[i] * m;
    }
    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        g->record([=]() mutable {
            const Real* dy = oc.grad();
            Real* dx = xc.grad();
            for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * (*mask)[static_cast<std::size_t>(i)];
        });
    }
    return out;
}

/// Softmax over the last axis, computed with max subtraction.
inline Tensor softmax(const Tensor& x, Graph* g = nullptr) {
    if (x.rank() < 1) throw DimensionError("softmax input must have rank >= 1");
    const int K = x.dim(x.rank() - 1);
    const std::int64_t rows = x.numel() / K;

    Tensor out(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* xr = x.data() + r * K;
        Real* yr = out.data() + r * K;
        Real mx = xr[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, xr[k]);
        Real sum = 0;
        for (int k = 0; k < K; ++k) {
            yr[k] = std::exp(xr[k] - mx);
            sum += yr[k];
        }
        for (int k = 0; k < K; ++k) yr[k] /= sum;
    }

    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        g->record([=]() mutable {
            const Real* dy = oc.grad();
            Real* dx = xc.grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const Real* yr = oc.data() + r * K;
                const Real* dyr = dy + r * K;
                Real dot = 0;
                for (int k = 0; k < K; ++k) dot += dyr[k] * yr[k];
                for (int k = 0; k < K; ++k) dx[r * K + k] += yr[k] * (dyr[k] - dot);
            }
        });
    }
    return out;
}

/// Elementwise sum of two same-shape tensors.
inline Tensor add(const Tensor& a, const Tensor& b, Graph* g = nullptr) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    Tensor out(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
    if (g && detail::any_requires_grad({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        g->record([=]() mutable {
            const Real* dy = oc.grad();
            if (ac.requires_grad()) {
                Real* da = ac.grad();
                for (std::int64_t i = 0; i < n; ++i) da[i] += dy[i];
            }
            if (bc.requires_grad()) {
                Real* db = bc.grad();
                for (std::int64_t i = 0; i < n; ++i) db[i] += dy[i];
            }
        });
    }
    return out;
}

/// Elementwise product of two same-shape tensors.
inline Tensor mul(const Tensor& a, const Tensor& b, Graph* g = nullptr) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    Tensor out(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
    if (g && detail::any_requires_grad({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        g->record([=]() mutable {
            const Real* dy = oc.grad();
            if (ac.requires_grad()) {
                Real* da = ac.grad();
                for (std::int64_t i = 0; i < n; ++i) da[i] += dy[i] * bc[i];
            }
            if (bc.requires_grad()) {
                Real* db = bc.grad();
                for (std::int64_t i = 0; i < n; ++i) db[i] += dy[i] * ac[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& x, Real s, Graph* g = nullptr) {
    Tensor out(x.shape());
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] * s;
    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        g->record([=]() mutable {
            const Real* dy = oc.grad();
            Real* dx = xc.grad();
            for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * s;
        });
    }
    return out;
}

/// Reduces a tensor to its scalar sum.
inline Tensor sum(const Tensor& x, Graph* g = nullptr) {
    Real acc = 0;
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) acc += x[i];
    Tensor out = Tensor::scalar(acc);
    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        g->record([=]() mutable {
            const Real dy = oc.grad()[0];
            Real* dx = xc.grad();
            for (std::int64_t i = 0; i < n; ++i) dx[i] += dy;
        });
    }
    return out;
}

/// out[i] = src[flat_indices[i]], reshaped to out_shape. Backward scatter-adds.
inline Tensor gather(const Tensor& src, const std::vector<std::int64_t>& flat_indices,
                     std::vector<int> out_shape, Graph* g = nullptr) {
    Tensor out(std::move(out_shape));
    if (out.numel() != static_cast<std::int64_t>(flat_indices.size())) {
        throw DimensionError("gather output shape " + shape_str(out.shape()) + " needs " +
                             std::to_string(out.numel()) + " indices, got " +
                             std::to_string(flat_indices.size()));
    }
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t idx = flat_indices[static_cast<std::size_t>(i)];
        if (idx < 0 || idx >= src.numel())
            throw ContractError("gather index " + std::to_string(idx) + " out of range");
        out[i] = src[idx];
    }
    if (g && src.requires_grad()) {
        out.set_requires_grad(true);
        Tensor sc = src, oc = out;
        auto idxs = std::make_shared<std::vector<std::int64_t>>(flat_indices);
        g->record([=]() mutable {
            const Real* dy = oc.grad();
            Real* ds = sc.grad();
            for (std::int64_t i = 0; i < n; ++i) ds[(*idxs)[static_cast<std::size_t>(i)]] += dy[i];
        });
    }
    return out;
}

/// Stacks same-length rank-1 tensors into a [M, K] matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows, Graph* g = nullptr) {
    if (rows.empty()) throw ContractError("stack_rows requires at least one row");
    const int K = static_cast<int>(rows.front().numel());
    const int M = static_cast<int>(rows.size());
    Tensor out({M, K});
    bool needs_grad = false;
    for (int r = 0; r < M; ++r) {
        if (rows[static_cast<std::size_t>(r)].numel() != K) {
            throw DimensionError("stack_rows: row " + std::to_string(r) + " has " +
                                 std::to_string(rows[static_cast<std::size_t>(r)].numel()) +
                                 " elements, expected " + std::to_string(K));
        }
        for (int k = 0; k < K; ++k) out[static_cast<std::int64_t>(r) * K + k] = rows[static_cast<std::size_t>(r)][k];
        needs_grad = needs_grad || rows[static_cast<std::size_t>(r)].requires_grad();
    }
    if (g && needs_grad) {
        out.set_requires_grad(true);
        auto rowsc = std::make_shared<std::vector<Tensor>>(rows);
        Tensor oc = out;
        g->record([=]() mutable {
            const Real* dy = oc.grad();
            for (int r = 0; r < M; ++r) {
                Tensor& row = (*rowsc)[static_cast<std::size_t>(r)];
                if (!row.requires_grad()) continue;
                Real* dr = row.grad();
                for (int k = 0; k < K; ++k) dr[k] += dy[static_cast<std::int64_t>(r) * K + k];
            }
        });
    }
    return out;
}

}  // namespace psrd
