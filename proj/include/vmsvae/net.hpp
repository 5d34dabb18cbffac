#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vmsvae/common.hpp"

namespace vmsvae {

enum class ReconMode { kLogLikelihood, kL1 };

// Row-major C = alpha * op(A) @ op(B) + beta * C over BLAS.
void gemm(bool ta, bool tb, size_t m, size_t n, size_t k, float alpha, const float* a, size_t lda,
          const float* b, size_t ldb, float beta, float* c, size_t ldc);
void gemm(bool ta, bool tb, size_t m, size_t n, size_t k, double alpha, const double* a,
          size_t lda, const double* b, size_t ldb, double beta, double* c, size_t ldc);

template <typename T>
struct ParamTensor {
    std::vector<T> w, g, adam_m, adam_v;

    void resize(size_t count) {
        w.assign(count, T(0));
        g.assign(count, T(0));
        adam_m.assign(count, T(0));
        adam_v.assign(count, T(0));
    }
    size_t size() const { return w.size(); }
};

template <typename T>
struct ParamRef {
    std::string name;
    ParamTensor<T>* p;
    bool decoder_kernel;  // participates in the l2 penalty
};

template <typename T>
struct BufferRef {
    std::string name;
    std::vector<T>* v;
};

struct LossTerms {
    double recon = 0.0;
    double kl = 0.0;
    double l2 = 0.0;
};

namespace detail {

template <typename T>
void fill_uniform(std::vector<T>& w, size_t fan_in, Rng& rng) {
    double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : w) v = static_cast<T>(rng.uniform(-s, s));
}

}  // namespace detail

// Fully connected layer; activations are sample-major (batch, features).
template <typename T>
struct Dense {
    size_t in = 0, out = 0;
    ParamTensor<T> w;  // (out, in)
    ParamTensor<T> b;  // (out)
    std::vector<T> x_cache;

    void init(size_t in_, size_t out_, Rng& rng) {
        in = in_;
        out = out_;
        w.resize(in * out);
        b.resize(out);
        detail::fill_uniform(w.w, in, rng);
    }

    void forward(const std::vector<T>& x, std::vector<T>& y, size_t batch, bool train) {
        y.assign(batch * out, T(0));
        gemm(false, true, batch, out, in, T(1), x.data(), in, w.w.data(), in, T(0), y.data(), out);
        for (size_t r = 0; r < batch; ++r) {
            for (size_t o = 0; o < out; ++o) y[r * out + o] += b.w[o];
        }
        if (train) x_cache = x;
    }

    void backward(const std::vector<T>& dy, std::vector<T>& dx, size_t batch,
                  bool want_dx = true) {
        gemm(true, false, out, in, batch, T(1), dy.data(), out, x_cache.data(), in, T(1),
             w.g.data(), in);
        for (size_t r = 0; r < batch; ++r) {
            for (size_t o = 0; o < out; ++o) b.g[o] += dy[r * out + o];
        }
        if (want_dx) {
            dx.assign(batch * in, T(0));
            gemm(false, false, batch, in, out, T(1), dy.data(), out, w.w.data(), in, T(0),
                 dx.data(), in);
        }
    }
};

template <typename T>
struct Relu {
    std::vector<uint8_t> mask;

    void forward(std::vector<T>& x, bool train) {
        if (train) mask.assign(x.size(), 0);
        for (size_t i = 0; i < x.size(); ++i) {
            if (x[i] > T(0)) {
                if (train) mask[i] = 1;
            } else {
                x[i] = T(0);
            }
        }
    }

    void backward(std::vector<T>& d) const {
        for (size_t i = 0; i < d.size(); ++i) {
            if (!mask[i]) d[i] = T(0);
        }
    }
};

// Transposed convolution, kernel 4, stride 2, padding 1: doubles the spatial
// size. Activations are channel-major (channels, batch*H*W); the kernel is
// stored as (cin, cout*16) with output coordinate r = 2i - 1 + kh.
//
// Two equivalent evaluation strategies, picked per layer:
//  - im2col: single GEMMs around an im2col/col2im buffer; reduction length is
//    cin, so it starves the GEMM kernel when cin is small.
//  - phase (sub-pixel): each output-pixel parity class is a stride-1 2x2
//    convolution over anchored input windows, giving GEMMs of shape
//    (cout*4, cin*4) with dense scatter-free writebacks.
template <typename T>
struct ConvT2d {
    static constexpr size_t kK = 4;
    size_t cin = 0, cout = 0, hin = 0, win = 0;
    bool phase_form = false;
    ParamTensor<T> w;  // (cin, cout*16)
    ParamTensor<T> b;  // (cout)
    std::vector<T> x_cache;

    size_t hout() const { return 2 * hin; }
    size_t wout() const { return 2 * win; }

    void init(size_t cin_, size_t cout_, size_t hin_, size_t win_, Rng& rng) {
        cin = cin_;
        cout = cout_;
        hin = hin_;
        win = win_;
        phase_form = cin < 16;
        w.resize(cin * cout * kK * kK);
        b.resize(cout);
        detail::fill_uniform(w.w, cin * kK * kK, rng);
    }

    void forward(const std::vector<T>& x, std::vector<T>& y, size_t batch, bool train,
                 std::vector<T>& scratch) {
        if (train) x_cache = x;
        if (phase_form) {
            forward_phase(x, y, batch);
            return;
        }
        size_t hw_in = hin * win, hw_out = hout() * wout();
        size_t rows = cout * kK * kK, cols_n = batch * hw_in;
        scratch.assign(rows * cols_n, T(0));
        gemm(true, false, rows, cols_n, cin, T(1), w.w.data(), rows, x.data(), cols_n, T(0),
             scratch.data(), cols_n);
        y.assign(cout * batch * hw_out, T(0));
        col2im_add(scratch, y, batch);
        for (size_t co = 0; co < cout; ++co) {
            T* plane = y.data() + co * batch * hw_out;
            for (size_t i = 0; i < batch * hw_out; ++i) plane[i] += b.w[co];
        }
    }

    void backward(const std::vector<T>& dy, std::vector<T>& dx, size_t batch,
                  std::vector<T>& scratch) {
        size_t hw_out = hout() * wout();
        if (phase_form) {
            backward_phase(dy, dx, batch);
        } else {
            size_t hw_in = hin * win;
            size_t rows = cout * kK * kK, cols_n = batch * hw_in;
            im2col(dy, scratch, batch);
            dx.assign(cin * cols_n, T(0));
            gemm(false, false, cin, cols_n, rows, T(1), w.w.data(), rows, scratch.data(), cols_n,
                 T(0), dx.data(), cols_n);
            gemm(false, true, cin, rows, cols_n, T(1), x_cache.data(), cols_n, scratch.data(),
                 cols_n, T(1), w.g.data(), rows);
        }
        for (size_t co = 0; co < cout; ++co) {
            const T* plane = dy.data() + co * batch * hw_out;
            T s = T(0);
            for (size_t i = 0; i < batch * hw_out; ++i) s += plane[i];
            b.g[co] += s;
        }
    }

    double kernel_sq_norm() const {
        double s = 0.0;
        for (T v : w.w) s += static_cast<double>(v) * v;
        return s;
    }

  private:
    // Phase form. Output row r = 2u + pr reads input rows {u - 1 + pr,
    // u + pr}: a 2-row window anchored at t = u - 1 + pr. Windows are
    // materialized over anchor coordinates a = t + 1 in [0, hin], so column
    // index (b, a_r, a_c) covers every phase; kernel taps follow
    // kh = 3 - pr - 2*wr (and kw likewise in the minor dimension).
    std::vector<T> wpack_, wgpack_, cols_, ycols_;

    size_t anchor_count(size_t batch) const { return batch * (hin + 1) * (win + 1); }

    void pack_weights() {
        size_t kin = cin * 4;
        wpack_.resize(cout * 4 * kin);
        for (size_t co = 0; co < cout; ++co) {
            for (size_t pr = 0; pr < 2; ++pr) {
                for (size_t pc = 0; pc < 2; ++pc) {
                    T* row = wpack_.data() + ((co * 2 + pr) * 2 + pc) * kin;
                    for (size_t ci = 0; ci < cin; ++ci) {
                        for (size_t wr = 0; wr < 2; ++wr) {
                            for (size_t wc = 0; wc < 2; ++wc) {
                                size_t kh = 3 - pr - 2 * wr, kw = 3 - pc - 2 * wc;
                                row[(ci * 2 + wr) * 2 + wc] =
                                    w.w[ci * (cout * 16) + co * 16 + kh * 4 + kw];
                            }
                        }
                    }
                }
            }
        }
    }

    // cols_: (cin*4, anchors); window row wr of anchor a_r reads input row
    // a_r - 1 + wr, shifted one column right when wc == 0.
    void build_windows(const std::vector<T>& x, size_t batch) {
        size_t hw_in = hin * win, aw = win + 1, an = anchor_count(batch);
        cols_.assign(cin * 4 * an, T(0));
        for (size_t ci = 0; ci < cin; ++ci) {
            for (size_t wr = 0; wr < 2; ++wr) {
                for (size_t wc = 0; wc < 2; ++wc) {
                    T* crow = cols_.data() + ((ci * 2 + wr) * 2 + wc) * an;
                    for (size_t bi = 0; bi < batch; ++bi) {
                        for (size_t ar = 0; ar <= hin; ++ar) {
                            long i = static_cast<long>(ar) - 1 + static_cast<long>(wr);
                            if (i < 0 || i >= static_cast<long>(hin)) continue;
                            const T* src = x.data() + (ci * batch + bi) * hw_in +
                                           static_cast<size_t>(i) * win;
                            std::copy(src, src + win,
                                      crow + (bi * (hin + 1) + ar) * aw + (1 - wc));
                        }
                    }
                }
            }
        }
    }

    void forward_phase(const std::vector<T>& x, std::vector<T>& y, size_t batch) {
        size_t hw_out = hout() * wout(), wo = wout(), aw = win + 1, an = anchor_count(batch);
        pack_weights();
        build_windows(x, batch);
        ycols_.resize(cout * 4 * an);
        gemm(false, false, cout * 4, an, cin * 4, T(1), wpack_.data(), cin * 4, cols_.data(), an,
             T(0), ycols_.data(), an);
        y.resize(cout * batch * hw_out);
        for (size_t co = 0; co < cout; ++co) {
            for (size_t pr = 0; pr < 2; ++pr) {
                for (size_t pc = 0; pc < 2; ++pc) {
                    const T* crow = ycols_.data() + ((co * 2 + pr) * 2 + pc) * an;
                    T bias = b.w[co];
                    for (size_t bi = 0; bi < batch; ++bi) {
                        for (size_t u = 0; u < hin; ++u) {
                            const T* src = crow + (bi * (hin + 1) + u + pr) * aw + pc;
                            T* dst = y.data() + (co * batch + bi) * hw_out + (2 * u + pr) * wo + pc;
                            for (size_t v = 0; v < win; ++v) dst[2 * v] = src[v] + bias;
                        }
                    }
                }
            }
        }
    }

    void backward_phase(const std::vector<T>& dy, std::vector<T>& dx, size_t batch) {
        size_t hw_in = hin * win, hw_out = hout() * wout(), wo = wout();
        size_t aw = win + 1, an = anchor_count(batch), kin = cin * 4;
        pack_weights();

        ycols_.assign(cout * 4 * an, T(0));
        for (size_t co = 0; co < cout; ++co) {
            for (size_t pr = 0; pr < 2; ++pr) {
                for (size_t pc = 0; pc < 2; ++pc) {
                    T* crow = ycols_.data() + ((co * 2 + pr) * 2 + pc) * an;
                    for (size_t bi = 0; bi < batch; ++bi) {
                        for (size_t u = 0; u < hin; ++u) {
                            const T* src =
                                dy.data() + (co * batch + bi) * hw_out + (2 * u + pr) * wo + pc;
                            T* dst = crow + (bi * (hin + 1) + u + pr) * aw + pc;
                            for (size_t v = 0; v < win; ++v) dst[v] = src[2 * v];
                        }
                    }
                }
            }
        }

        build_windows(x_cache, batch);
        wgpack_.assign(cout * 4 * kin, T(0));
        gemm(false, true, cout * 4, kin, an, T(1), ycols_.data(), an, cols_.data(), an, T(0),
             wgpack_.data(), kin);
        for (size_t co = 0; co < cout; ++co) {
            for (size_t pr = 0; pr < 2; ++pr) {
                for (size_t pc = 0; pc < 2; ++pc) {
                    const T* row = wgpack_.data() + ((co * 2 + pr) * 2 + pc) * kin;
                    for (size_t ci = 0; ci < cin; ++ci) {
                        for (size_t wr = 0; wr < 2; ++wr) {
                            for (size_t wc = 0; wc < 2; ++wc) {
                                size_t kh = 3 - pr - 2 * wr, kw = 3 - pc - 2 * wc;
                                w.g[ci * (cout * 16) + co * 16 + kh * 4 + kw] +=
                                    row[(ci * 2 + wr) * 2 + wc];
                            }
                        }
                    }
                }
            }
        }

        gemm(true, false, kin, an, cout * 4, T(1), wpack_.data(), kin, ycols_.data(), an, T(0),
             cols_.data(), an);
        dx.assign(cin * batch * hw_in, T(0));
        for (size_t ci = 0; ci < cin; ++ci) {
            for (size_t wr = 0; wr < 2; ++wr) {
                for (size_t wc = 0; wc < 2; ++wc) {
                    const T* crow = cols_.data() + ((ci * 2 + wr) * 2 + wc) * an;
                    for (size_t bi = 0; bi < batch; ++bi) {
                        for (size_t ar = 0; ar <= hin; ++ar) {
                            long i = static_cast<long>(ar) - 1 + static_cast<long>(wr);
                            if (i < 0 || i >= static_cast<long>(hin)) continue;
                            const T* src = crow + (bi * (hin + 1) + ar) * aw + (1 - wc);
                            T* dst = dx.data() + (ci * batch + bi) * hw_in +
                                     static_cast<size_t>(i) * win;
                            for (size_t j = 0; j < win; ++j) dst[j] += src[j];
                        }
                    }
                }
            }
        }
    }

    void col2im_add(const std::vector<T>& cols, std::vector<T>& y, size_t batch) const {
        size_t hw_in = hin * win, hw_out = hout() * wout(), wo = wout();
        for (size_t co = 0; co < cout; ++co) {
            T* plane = y.data() + co * batch * hw_out;
            for (size_t kh = 0; kh < kK; ++kh) {
                for (size_t kw = 0; kw < kK; ++kw) {
                    const T* crow = cols.data() + ((co * kK + kh) * kK + kw) * (batch * hw_in);
                    size_t j0 = kw == 0 ? 1 : 0;
                    size_t j1 = std::min(win, (wo - kw) / 2 + 1);
                    for (size_t bi = 0; bi < batch; ++bi) {
                        for (size_t i = 0; i < hin; ++i) {
                            long r = 2 * static_cast<long>(i) - 1 + static_cast<long>(kh);
                            if (r < 0 || r >= static_cast<long>(hout())) continue;
                            const T* src = crow + bi * hw_in + i * win;
                            T* dst = plane + bi * hw_out + static_cast<size_t>(r) * wo;
                            for (size_t j = j0; j < j1; ++j) dst[2 * j + kw - 1] += src[j];
                        }
                    }
                }
            }
        }
    }

    void im2col(const std::vector<T>& dy, std::vector<T>& cols, size_t batch) const {
        size_t hw_in = hin * win, hw_out = hout() * wout(), wo = wout();
        cols.assign(cout * kK * kK * batch * hw_in, T(0));
        for (size_t co = 0; co < cout; ++co) {
            const T* plane = dy.data() + co * batch * hw_out;
            for (size_t kh = 0; kh < kK; ++kh) {
                for (size_t kw = 0; kw < kK; ++kw) {
                    T* crow = cols.data() + ((co * kK + kh) * kK + kw) * (batch * hw_in);
                    size_t j0 = kw == 0 ? 1 : 0;
                    size_t j1 = std::min(win, (wo - kw) / 2 + 1);
                    for (size_t bi = 0; bi < batch; ++bi) {
                        for (size_t i = 0; i < hin; ++i) {
                            long r = 2 * static_cast<long>(i) - 1 + static_cast<long>(kh);
                            if (r < 0 || r >= static_cast<long>(hout())) continue;
                            const T* src = plane + bi * hw_out + static_cast<size_t>(r) * wo;
                            T* dst = crow + bi * hw_in + i * win;
                            for (size_t j = j0; j < j1; ++j) dst[j] = src[2 * j + kw - 1];
                        }
                    }
                }
            }
        }
    }
};

// Per-channel batch normalization over (batch, spatial); channel-major input.
// Batch statistics in training, running statistics (momentum 0.99, population
// variance) in inference.
template <typename T>
struct BatchNorm2d {
    static constexpr double kEps = 1e-3;
    static constexpr double kMomentum = 0.99;

    size_t c = 0;
    ParamTensor<T> gamma, beta;
    std::vector<T> rmean, rvar;
    std::vector<T> xhat;
    std::vector<double> inv_std;

    void init(size_t c_, T beta0 = T(0)) {
        c = c_;
        gamma.resize(c);
        beta.resize(c);
        std::fill(gamma.w.begin(), gamma.w.end(), T(1));
        std::fill(beta.w.begin(), beta.w.end(), beta0);
        rmean.assign(c, T(0));
        rvar.assign(c, T(1));
    }

    void forward(std::vector<T>& x, bool train, bool update_running) {
        size_t n = x.size() / c;
        if (train) {
            xhat.resize(x.size());
            inv_std.resize(c);
            for (size_t ch = 0; ch < c; ++ch) {
                T* row = x.data() + ch * n;
                double mean = 0.0;
                for (size_t i = 0; i < n; ++i) mean += row[i];
                mean /= static_cast<double>(n);
                double var = 0.0;
                for (size_t i = 0; i < n; ++i) {
                    double d = row[i] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(n);
                double istd = 1.0 / std::sqrt(var + kEps);
                inv_std[ch] = istd;
                if (update_running) {
                    rmean[ch] = static_cast<T>(kMomentum * rmean[ch] + (1.0 - kMomentum) * mean);
                    rvar[ch] = static_cast<T>(kMomentum * rvar[ch] + (1.0 - kMomentum) * var);
                }
                T* xh = xhat.data() + ch * n;
                for (size_t i = 0; i < n; ++i) {
                    T h = static_cast<T>((row[i] - mean) * istd);
                    xh[i] = h;
                    row[i] = gamma.w[ch] * h + beta.w[ch];
                }
            }
        } else {
            for (size_t ch = 0; ch < c; ++ch) {
                double istd = 1.0 / std::sqrt(static_cast<double>(rvar[ch]) + kEps);
                double scale = gamma.w[ch] * istd;
                double shift = beta.w[ch] - scale * rmean[ch];
                T* row = x.data() + ch * n;
                for (size_t i = 0; i < n; ++i) {
                    row[i] = static_cast<T>(row[i] * scale + shift);
                }
            }
        }
    }

    void backward(std::vector<T>& d) {
        size_t n = d.size() / c;
        for (size_t ch = 0; ch < c; ++ch) {
            T* row = d.data() + ch * n;
            const T* xh = xhat.data() + ch * n;
            double sum_d = 0.0, sum_dx = 0.0;
            for (size_t i = 0; i < n; ++i) {
                sum_d += row[i];
                sum_dx += static_cast<double>(row[i]) * xh[i];
            }
            gamma.g[ch] += static_cast<T>(sum_dx);
            beta.g[ch] += static_cast<T>(sum_d);
            double k = gamma.w[ch] * inv_std[ch];
            double mean_d = sum_d / static_cast<double>(n);
            double mean_dx = sum_dx / static_cast<double>(n);
            for (size_t i = 0; i < n; ++i) {
                row[i] = static_cast<T>(k * (row[i] - mean_d - xh[i] * mean_dx));
            }
        }
    }
};

// Static geometry of the trainable network around the frozen backbone.
struct VaeShape {
    size_t feat_dim = 0;  // flattened backbone features per sample
    size_t n = 0, m = 0;
    size_t dec_c0 = 0, dec_h0 = 0;   // decoder seed grid: c0 x h0 x h0
    std::vector<size_t> widths;      // conv channel widths, first == dec_c0, last == 2

    static VaeShape standard(size_t n, size_t m) {
        return {25088, n, m, 128, 7, {128, 64, 32, 8, 64, 2}};
    }
    // Miniature variant for finite-difference gradient verification.
    static VaeShape mini() { return {20, 12, 4, 8, 2, {8, 4, 2}}; }

    size_t stages() const { return widths.size() - 1; }
    size_t out_side() const { return dec_h0 << stages(); }
    size_t out_hw() const { return out_side() * out_side(); }

    void validate() const {
        if (m < 1 || n < m) throw ValidationError("latent sizes must satisfy n >= m >= 1");
        if (widths.size() < 2 || widths.front() != dec_c0 || widths.back() != 2) {
            throw ValidationError("decoder widths must run from the seed channels to 2");
        }
    }
};

// The trainable encoder-latent-decoder stack operating on backbone features.
template <typename T>
class VaeNet {
  public:
    VaeNet(const VaeShape& shape, uint64_t seed) : shape_(shape) {
        shape_.validate();
        Rng rng(seed);
        fc1_.init(shape_.feat_dim, shape_.n, rng);
        fc_mu_.init(shape_.n, shape_.m, rng);
        fc_lv_.init(shape_.n, shape_.m, rng);
        size_t g = shape_.dec_h0 * shape_.dec_h0;
        fc_dec_.init(shape_.m, shape_.dec_c0 * g, rng);
        size_t h = shape_.dec_h0;
        for (size_t s = 0; s < shape_.stages(); ++s) {
            ConvT2d<T> conv;
            conv.init(shape_.widths[s], shape_.widths[s + 1], h, h, rng);
            convs_.push_back(std::move(conv));
            h *= 2;
            if (s + 1 < shape_.stages()) {
                // The terminal rectifier bank starts in its active regime
                // (positive normalized-unit bias) so the single-layer output
                // head receives gradient from every unit from step one.
                BatchNorm2d<T> bn;
                bn.init(shape_.widths[s + 1], s + 2 == shape_.stages() ? T(2) : T(0));
                bns_.push_back(std::move(bn));
                relus_.emplace_back();
            }
        }
    }

    const VaeShape& shape() const { return shape_; }

    // One training-mode pass over a batch: stochastic forward with the given
    // per-sample noise, gradient accumulation, loss terms back.
    // feats: (batch, feat_dim); targets: (2, batch*out_hw); noise: (batch, m).
    LossTerms forward_backward(const std::vector<T>& feats, const std::vector<T>& targets,
                               const std::vector<T>& noise, size_t batch, ReconMode mode, T l2,
                               bool update_running = true) {
        size_t m = shape_.m;
        fc1_.forward(feats, h1_, batch, true);
        relu1_.forward(h1_, true);
        fc_mu_.forward(h1_, mu_, batch, true);
        fc_lv_.forward(h1_, lv_, batch, true);
        z_.resize(batch * m);
        for (size_t i = 0; i < batch * m; ++i) {
            z_[i] = mu_[i] + std::exp(lv_[i] / T(2)) * noise[i];
        }
        run_decoder(z_, batch, true, update_running);

        double inv_b = 1.0 / static_cast<double>(batch);
        LossTerms terms;
        d_.assign(sig_.size(), T(0));
        constexpr double kClamp = 1e-7;
        if (mode == ReconMode::kLogLikelihood) {
            double acc = 0.0;
            for (size_t i = 0; i < sig_.size(); ++i) {
                double p = std::clamp(static_cast<double>(sig_[i]), kClamp, 1.0 - kClamp);
                double t = targets[i];
                acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
                d_[i] = static_cast<T>((sig_[i] - targets[i]) * inv_b);
            }
            terms.recon = acc * inv_b;
        } else {
            double acc = 0.0;
            for (size_t i = 0; i < sig_.size(); ++i) {
                double diff = static_cast<double>(sig_[i]) - targets[i];
                acc += std::abs(diff);
                double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                d_[i] = static_cast<T>(s * sig_[i] * (T(1) - sig_[i]) * inv_b);
            }
            terms.recon = acc * inv_b;
        }
        double kl = 0.0;
        for (size_t i = 0; i < batch * m; ++i) {
            kl += 0.5 * (std::exp(static_cast<double>(lv_[i])) +
                         static_cast<double>(mu_[i]) * mu_[i] - 1.0 - lv_[i]);
        }
        terms.kl = kl * inv_b;
        terms.l2 = static_cast<double>(l2) * decoder_kernel_sq_norm();
        double total = terms.recon + terms.kl + terms.l2;
        if (!std::isfinite(total)) {
            throw RuntimeFault("non-finite loss (recon=" + std::to_string(terms.recon) +
                               ", kl=" + std::to_string(terms.kl) +
                               ", l2=" + std::to_string(terms.l2) + ")");
        }

        // Decoder stack backward; d_ starts as the gradient w.r.t. the final
        // conv logits (sigmoid folded into both loss gradients above).
        std::vector<T>* d = &d_;
        for (size_t s = shape_.stages(); s-- > 0;) {
            if (s + 1 < shape_.stages()) {
                relus_[s].backward(*d);
                bns_[s].backward(*d);
            }
            convs_[s].backward(*d, dtmp_, batch, scratch_);
            std::swap(*d, dtmp_);
        }
        for (auto& conv : convs_) {
            for (size_t i = 0; i < conv.w.size(); ++i) {
                conv.w.g[i] += T(2) * l2 * conv.w.w[i];
            }
        }
        size_t g = shape_.dec_h0 * shape_.dec_h0;
        from_channel_major(*d, hd_grad_, batch, shape_.dec_c0, g);
        relu_dec_.backward(hd_grad_);
        fc_dec_.backward(hd_grad_, dz_, batch);

        // Latent gradients: decoder path through z plus the KL terms.
        dmu_.resize(batch * m);
        dlv_.resize(batch * m);
        for (size_t i = 0; i < batch * m; ++i) {
            dmu_[i] = dz_[i] + static_cast<T>(mu_[i] * inv_b);
            dlv_[i] = static_cast<T>(dz_[i] * noise[i] * std::exp(lv_[i] / T(2)) / T(2) +
                                     T(0.5) * (std::exp(lv_[i]) - T(1)) * inv_b);
        }
        fc_mu_.backward(dmu_, dh1_, batch);
        fc_lv_.backward(dlv_, dh1b_, batch);
        for (size_t i = 0; i < dh1_.size(); ++i) dh1_[i] += dh1b_[i];
        relu1_.backward(dh1_);
        fc1_.backward(dh1_, dz_, batch, /*want_dx=*/false);
        return terms;
    }

    // Posterior parameters for a batch of feature rows.
    void encode(const std::vector<T>& feats, size_t batch, std::vector<T>& mu,
                std::vector<T>& logvar) {
        fc1_.forward(feats, h1_, batch, false);
        relu1_.forward(h1_, false);
        fc_mu_.forward(h1_, mu, batch, false);
        fc_lv_.forward(h1_, logvar, batch, false);
        for (T v : mu) {
            if (!std::isfinite(static_cast<double>(v))) throw RuntimeFault("non-finite mu head");
        }
        for (T v : logvar) {
            if (!std::isfinite(static_cast<double>(v))) {
                throw RuntimeFault("non-finite logvar head");
            }
        }
    }

    // Inference-mode decode (running statistics); maps: (2, batch*out_hw).
    void decode(const std::vector<T>& z, size_t batch, std::vector<T>& maps) {
        run_decoder(z, batch, false, false);
        maps = sig_;
        for (T v : maps) {
            if (!std::isfinite(static_cast<double>(v))) {
                throw RuntimeFault("non-finite decoder output");
            }
        }
    }

    // Deterministic inference: decode the posterior mean.
    void infer(const std::vector<T>& feats, size_t batch, std::vector<T>& maps) {
        encode(feats, batch, mu_out_, lv_out_);
        decode(mu_out_, batch, maps);
    }

    void zero_grad() {
        for (auto& pr : params()) std::fill(pr.p->g.begin(), pr.p->g.end(), T(0));
    }

    void adam_step(T lr) {
        ++adam_t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
        double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
        for (auto& pr : params()) {
            ParamTensor<T>& p = *pr.p;
            for (size_t i = 0; i < p.size(); ++i) {
                double gi = p.g[i];
                double mi = b1 * p.adam_m[i] + (1.0 - b1) * gi;
                double vi = b2 * p.adam_v[i] + (1.0 - b2) * gi * gi;
                p.adam_m[i] = static_cast<T>(mi);
                p.adam_v[i] = static_cast<T>(vi);
                p.w[i] -= static_cast<T>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
            }
        }
    }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        out.push_back({"enc.fc1.w", &fc1_.w, false});
        out.push_back({"enc.fc1.b", &fc1_.b, false});
        out.push_back({"enc.mu.w", &fc_mu_.w, false});
        out.push_back({"enc.mu.b", &fc_mu_.b, false});
        out.push_back({"enc.logvar.w", &fc_lv_.w, false});
        out.push_back({"enc.logvar.b", &fc_lv_.b, false});
        out.push_back({"dec.fc.w", &fc_dec_.w, false});
        out.push_back({"dec.fc.b", &fc_dec_.b, false});
        for (size_t s = 0; s < convs_.size(); ++s) {
            std::string base = "dec.conv" + std::to_string(s);
            out.push_back({base + ".w", &convs_[s].w, true});
            out.push_back({base + ".b", &convs_[s].b, false});
        }
        for (size_t s = 0; s < bns_.size(); ++s) {
            std::string base = "dec.bn" + std::to_string(s);
            out.push_back({base + ".gamma", &bns_[s].gamma, false});
            out.push_back({base + ".beta", &bns_[s].beta, false});
        }
        return out;
    }

    std::vector<BufferRef<T>> buffers() {
        std::vector<BufferRef<T>> out;
        for (size_t s = 0; s < bns_.size(); ++s) {
            std::string base = "dec.bn" + std::to_string(s);
            out.push_back({base + ".rmean", &bns_[s].rmean});
            out.push_back({base + ".rvar", &bns_[s].rvar});
        }
        return out;
    }

    double decoder_kernel_sq_norm() const {
        double s = 0.0;
        for (const auto& conv : convs_) s += conv.kernel_sq_norm();
        return s;
    }

  private:
    // (batch, c*g) sample-major -> (c, batch*g) channel-major.
    static void to_channel_major(const std::vector<T>& in, std::vector<T>& out, size_t batch,
                                 size_t c, size_t g) {
        out.resize(in.size());
        for (size_t b = 0; b < batch; ++b) {
            for (size_t ch = 0; ch < c; ++ch) {
                std::copy(in.begin() + (b * c + ch) * g, in.begin() + (b * c + ch + 1) * g,
                          out.begin() + ch * batch * g + b * g);
            }
        }
    }

    static void from_channel_major(const std::vector<T>& in, std::vector<T>& out, size_t batch,
                                   size_t c, size_t g) {
        out.resize(in.size());
        for (size_t b = 0; b < batch; ++b) {
            for (size_t ch = 0; ch < c; ++ch) {
                std::copy(in.begin() + ch * batch * g + b * g,
                          in.begin() + ch * batch * g + (b + 1) * g,
                          out.begin() + (b * c + ch) * g);
            }
        }
    }

    void run_decoder(const std::vector<T>& z, size_t batch, bool train, bool update_running) {
        size_t g = shape_.dec_h0 * shape_.dec_h0;
        fc_dec_.forward(z, hd_, batch, train);
        relu_dec_.forward(hd_, train);
        to_channel_major(hd_, act_, batch, shape_.dec_c0, g);
        for (size_t s = 0; s < shape_.stages(); ++s) {
            convs_[s].forward(act_, act_next_, batch, train, scratch_);
            if (s + 1 < shape_.stages()) {
                bns_[s].forward(act_next_, train, update_running);
                relus_[s].forward(act_next_, train);
            }
            std::swap(act_, act_next_);
        }
        sig_.resize(act_.size());
        for (size_t i = 0; i < act_.size(); ++i) {
            sig_[i] = T(1) / (T(1) + std::exp(-act_[i]));
        }
    }

    VaeShape shape_;
    Dense<T> fc1_, fc_mu_, fc_lv_, fc_dec_;
    Relu<T> relu1_, relu_dec_;
    std::vector<ConvT2d<T>> convs_;
    std::vector<BatchNorm2d<T>> bns_;
    std::vector<Relu<T>> relus_;
    int64_t adam_t_ = 0;

    // Reused work buffers.
    std::vector<T> h1_, mu_, lv_, z_, hd_, act_, act_next_, sig_, scratch_;
    std::vector<T> d_, dtmp_, hd_grad_, dz_, dmu_, dlv_, dh1_, dh1b_;
    std::vector<T> mu_out_, lv_out_;
};

}  // namespace vmsvae
