#include "geofuse/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

// Accumulation is always fp64 regardless of storage type, and the per-element
// accumulation order is the same in the serial and parallel variants. Together
// with -ffp-contract=off this makes the two variants bit-identical.

namespace geofuse::kernels {

Exec& exec_mode() {
    static Exec mode = Exec::parallel;
    return mode;
}

void set_threads(int n) {
    if (n > 0) omp_set_num_threads(n);
}

int thread_count() { return omp_get_max_threads(); }

namespace serial {

template <typename T>
void conv2d_fwd(const T* in, int B, int Ci, int H, int W,
                const T* w, int Co, int kh, int kw,
                const T* bias, int stride, int ph, int pw, T* out) {
    int Ho = conv_out_dim(H, kh, ph, stride);
    int Wo = conv_out_dim(W, kw, pw, stride);
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    double acc = bias ? static_cast<double>(bias[co]) : 0.0;
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int r = 0; r < kh; ++r) {
                            int ih = oh * stride - ph + r;
                            if (ih < 0 || ih >= H) continue;
                            const T* irow = in + ((static_cast<int64_t>(b) * Ci + ci) * H + ih) * W;
                            const T* wrow = w + ((static_cast<int64_t>(co) * Ci + ci) * kh + r) * kw;
                            for (int c = 0; c < kw; ++c) {
                                int iw = ow * stride - pw + c;
                                if (iw < 0 || iw >= W) continue;
                                acc += static_cast<double>(irow[iw]) * static_cast<double>(wrow[c]);
                            }
                        }
                    out[((static_cast<int64_t>(b) * Co + co) * Ho + oh) * Wo + ow] = static_cast<T>(acc);
                }
}

template <typename T>
void conv2d_bwd_input(const T* w, int Co, int Ci, int kh, int kw,
                      const T* gout, int B, int Ho, int Wo,
                      int stride, int ph, int pw,
                      T* gin, int H, int W) {
    for (int b = 0; b < B; ++b)
        for (int ci = 0; ci < Ci; ++ci)
            for (int ih = 0; ih < H; ++ih)
                for (int iw = 0; iw < W; ++iw) {
                    double acc = 0.0;
                    for (int co = 0; co < Co; ++co)
                        for (int r = 0; r < kh; ++r) {
                            int num = ih + ph - r;
                            if (num < 0 || num % stride != 0) continue;
                            int oh = num / stride;
                            if (oh >= Ho) continue;
                            const T* grow = gout + ((static_cast<int64_t>(b) * Co + co) * Ho + oh) * Wo;
                            const T* wrow = w + ((static_cast<int64_t>(co) * Ci + ci) * kh + r) * kw;
                            for (int c = 0; c < kw; ++c) {
                                int numw = iw + pw - c;
                                if (numw < 0 || numw % stride != 0) continue;
                                int ow = numw / stride;
                                if (ow >= Wo) continue;
                                acc += static_cast<double>(wrow[c]) * static_cast<double>(grow[ow]);
                            }
                        }
                    gin[((static_cast<int64_t>(b) * Ci + ci) * H + ih) * W + iw] += static_cast<T>(acc);
                }
}

template <typename T>
void conv2d_bwd_weight(const T* in, int B, int Ci, int H, int W,
                       const T* gout, int Co, int Ho, int Wo,
                       int stride, int ph, int pw,
                       T* gw, int kh, int kw) {
    for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
            for (int r = 0; r < kh; ++r)
                for (int c = 0; c < kw; ++c) {
                    double acc = 0.0;
                    for (int b = 0; b < B; ++b)
                        for (int oh = 0; oh < Ho; ++oh) {
                            int ih = oh * stride - ph + r;
                            if (ih < 0 || ih >= H) continue;
                            const T* irow = in + ((static_cast<int64_t>(b) * Ci + ci) * H + ih) * W;
                            const T* grow = gout + ((static_cast<int64_t>(b) * Co + co) * Ho + oh) * Wo;
                            for (int ow = 0; ow < Wo; ++ow) {
                                int iw = ow * stride - pw + c;
                                if (iw < 0 || iw >= W) continue;
                                acc += static_cast<double>(irow[iw]) * static_cast<double>(grow[ow]);
                            }
                        }
                    gw[((static_cast<int64_t>(co) * Ci + ci) * kh + r) * kw + c] += static_cast<T>(acc);
                }
}

template <typename T>
void conv2d_bwd_bias(const T* gout, int B, int Co, int Ho, int Wo, T* gb) {
    for (int co = 0; co < Co; ++co) {
        double acc = 0.0;
        for (int b = 0; b < B; ++b) {
            const T* base = gout + (static_cast<int64_t>(b) * Co + co) * Ho * Wo;
            for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i)
                acc += static_cast<double>(base[i]);
        }
        gb[co] += static_cast<T>(acc);
    }
}

template <typename T>
void channel_pool_fwd(const T* in, int B, int C, int H, int W,
                      PoolMode mode, T* out, int32_t* argmax) {
    int64_t HW = static_cast<int64_t>(H) * W;
    for (int b = 0; b < B; ++b)
        for (int64_t p = 0; p < HW; ++p) {
            const T* base = in + static_cast<int64_t>(b) * C * HW + p;
            if (mode == PoolMode::max) {
                T best = base[0];
                int32_t bi = 0;
                for (int c = 1; c < C; ++c) {
                    T v = base[static_cast<int64_t>(c) * HW];
                    if (v > best) {
                        best = v;
                        bi = c;
                    }
                }
                out[static_cast<int64_t>(b) * HW + p] = best;
                if (argmax) argmax[static_cast<int64_t>(b) * HW + p] = bi;
            } else {
                double acc = 0.0;
                for (int c = 0; c < C; ++c) acc += static_cast<double>(base[static_cast<int64_t>(c) * HW]);
                out[static_cast<int64_t>(b) * HW + p] = static_cast<T>(acc / C);
            }
        }
}

template <typename T>
void channel_pool_bwd(const T* gout, int B, int C, int H, int W,
                      PoolMode mode, const int32_t* argmax, T* gin) {
    int64_t HW = static_cast<int64_t>(H) * W;
    for (int b = 0; b < B; ++b)
        for (int64_t p = 0; p < HW; ++p) {
            T g = gout[static_cast<int64_t>(b) * HW + p];
            T* base = gin + static_cast<int64_t>(b) * C * HW + p;
            if (mode == PoolMode::max) {
                base[static_cast<int64_t>(argmax[static_cast<int64_t>(b) * HW + p]) * HW] += g;
            } else {
                T share = static_cast<T>(static_cast<double>(g) / C);
                for (int c = 0; c < C; ++c) base[static_cast<int64_t>(c) * HW] += share;
            }
        }
}

template <typename T>
void maxpool2_fwd(const T* in, int B, int C, int H, int W, T* out, int32_t* arg) {
    int Ho = H / 2, Wo = W / 2;
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const T* plane = in + bc * H * W;
        T* oplane = out + bc * Ho * Wo;
        int32_t* aplane = arg + bc * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
                // ties go to the first element in row-major window order
                T best = plane[(2 * oh) * W + 2 * ow];
                int32_t bi = (2 * oh) * W + 2 * ow;
                for (int dh = 0; dh < 2; ++dh)
                    for (int dw = 0; dw < 2; ++dw) {
                        int idx = (2 * oh + dh) * W + 2 * ow + dw;
                        if (plane[idx] > best) {
                            best = plane[idx];
                            bi = idx;
                        }
                    }
                oplane[oh * Wo + ow] = best;
                aplane[oh * Wo + ow] = bi;
            }
    }
}

template <typename T>
void maxpool2_bwd(const T* gout, int B, int C, int H, int W, const int32_t* arg, T* gin) {
    int Ho = H / 2, Wo = W / 2;
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const T* gplane = gout + bc * Ho * Wo;
        const int32_t* aplane = arg + bc * Ho * Wo;
        T* iplane = gin + bc * H * W;
        for (int64_t p = 0; p < static_cast<int64_t>(Ho) * Wo; ++p)
            iplane[aplane[p]] += gplane[p];
    }
}

template <typename T>
void upsample2_fwd(const T* in, int B, int C, int H, int W, T* out) {
    int Ho = H * 2, Wo = W * 2;
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const T* plane = in + bc * H * W;
        T* oplane = out + bc * Ho * Wo;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                T v = plane[h * W + w];
                oplane[(2 * h) * Wo + 2 * w] = v;
                oplane[(2 * h) * Wo + 2 * w + 1] = v;
                oplane[(2 * h + 1) * Wo + 2 * w] = v;
                oplane[(2 * h + 1) * Wo + 2 * w + 1] = v;
            }
    }
}

template <typename T>
void upsample2_bwd(const T* gout, int B, int C, int H, int W, T* gin) {
    int Wo = W * 2;
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const T* gplane = gout + bc * 4 * H * W;
        T* iplane = gin + bc * H * W;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                double acc = static_cast<double>(gplane[(2 * h) * Wo + 2 * w]);
                acc += static_cast<double>(gplane[(2 * h) * Wo + 2 * w + 1]);
                acc += static_cast<double>(gplane[(2 * h + 1) * Wo + 2 * w]);
                acc += static_cast<double>(gplane[(2 * h + 1) * Wo + 2 * w + 1]);
                iplane[h * W + w] += static_cast<T>(acc);
            }
    }
}

template <typename T>
void relu_fwd(const T* in, int64_t n, T* out) {
    for (int64_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

template <typename T>
void relu_bwd(const T* in, const T* gout, int64_t n, T* gin) {
    for (int64_t i = 0; i < n; ++i)
        if (in[i] > T(0)) gin[i] += gout[i];
}

template <typename T>
void sigmoid_fwd(const T* in, int64_t n, T* out) {
    for (int64_t i = 0; i < n; ++i)
        out[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(in[i]))));
}

template <typename T>
void sigmoid_bwd(const T* y, const T* gout, int64_t n, T* gin) {
    for (int64_t i = 0; i < n; ++i) {
        double yd = static_cast<double>(y[i]);
        gin[i] += static_cast<T>(static_cast<double>(gout[i]) * yd * (1.0 - yd));
    }
}

template <typename T>
void scale_fwd(const T* in, int64_t n, T c, T* out) {
    for (int64_t i = 0; i < n; ++i) out[i] = in[i] * c;
}

template <typename T>
void scale_bwd(const T* gout, int64_t n, T c, T* gin) {
    for (int64_t i = 0; i < n; ++i) gin[i] += gout[i] * c;
}

template <typename T>
void bn2d_stats(const T* in, int B, int C, int H, int W, T* mean, T* var) {
    int64_t HW = static_cast<int64_t>(H) * W;
    int64_t N = static_cast<int64_t>(B) * HW;
    for (int c = 0; c < C; ++c) {
        double m = 0.0;
        for (int b = 0; b < B; ++b) {
            const T* plane = in + (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) m += static_cast<double>(plane[p]);
        }
        m /= static_cast<double>(N);
        double v = 0.0;
        for (int b = 0; b < B; ++b) {
            const T* plane = in + (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) {
                double d = static_cast<double>(plane[p]) - m;
                v += d * d;
            }
        }
        mean[c] = static_cast<T>(m);
        var[c] = static_cast<T>(v / static_cast<double>(N));
    }
}

template <typename T>
void bn2d_fwd(const T* in, int B, int C, int H, int W,
              const T* mean, const T* var, const T* gamma, const T* beta,
              T eps, T* out, T* xhat) {
    int64_t HW = static_cast<int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        double invstd = 1.0 / std::sqrt(static_cast<double>(var[c]) + static_cast<double>(eps));
        double m = static_cast<double>(mean[c]);
        double g = static_cast<double>(gamma[c]);
        double be = static_cast<double>(beta[c]);
        for (int b = 0; b < B; ++b) {
            int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) {
                double xh = (static_cast<double>(in[off + p]) - m) * invstd;
                xhat[off + p] = static_cast<T>(xh);
                out[off + p] = static_cast<T>(g * xh + be);
            }
        }
    }
}

template <typename T>
void bn2d_bwd_train(const T* xhat, const T* var, const T* gamma,
                    const T* gout, int B, int C, int H, int W, T eps,
                    T* gin, T* ggamma, T* gbeta) {
    int64_t HW = static_cast<int64_t>(H) * W;
    int64_t N = static_cast<int64_t>(B) * HW;
    for (int c = 0; c < C; ++c) {
        double s1 = 0.0, s2 = 0.0;
        for (int b = 0; b < B; ++b) {
            int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) {
                double dy = static_cast<double>(gout[off + p]);
                s1 += dy;
                s2 += dy * static_cast<double>(xhat[off + p]);
            }
        }
        double invstd = 1.0 / std::sqrt(static_cast<double>(var[c]) + static_cast<double>(eps));
        double g = static_cast<double>(gamma[c]);
        double ninv = 1.0 / static_cast<double>(N);
        for (int b = 0; b < B; ++b) {
            int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) {
                double dy = static_cast<double>(gout[off + p]);
                double xh = static_cast<double>(xhat[off + p]);
                gin[off + p] += static_cast<T>(invstd * g * (dy - s1 * ninv - xh * s2 * ninv));
            }
        }
        ggamma[c] += static_cast<T>(s2);
        gbeta[c] += static_cast<T>(s1);
    }
}

template <typename T>
void bn2d_bwd_eval(const T* xhat, const T* var, const T* gamma,
                   const T* gout, int B, int C, int H, int W, T eps,
                   T* gin, T* ggamma, T* gbeta) {
    int64_t HW = static_cast<int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        double invstd = 1.0 / std::sqrt(static_cast<double>(var[c]) + static_cast<double>(eps));
        double g = static_cast<double>(gamma[c]);
        double s1 = 0.0, s2 = 0.0;
        for (int b = 0; b < B; ++b) {
            int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) {
                double dy = static_cast<double>(gout[off + p]);
                s1 += dy;
                s2 += dy * static_cast<double>(xhat[off + p]);
                gin[off + p] += static_cast<T>(dy * g * invstd);
            }
        }
        ggamma[c] += static_cast<T>(s2);
        gbeta[c] += static_cast<T>(s1);
    }
}

template <typename T>
void layer_norm_fwd(const T* in, int B, int64_t M, const T* gamma, const T* beta,
                    T eps, T* out, T* xhat, T* invstd) {
    for (int b = 0; b < B; ++b) {
        const T* row = in + static_cast<int64_t>(b) * M;
        double m = 0.0;
        for (int64_t i = 0; i < M; ++i) m += static_cast<double>(row[i]);
        m /= static_cast<double>(M);
        double v = 0.0;
        for (int64_t i = 0; i < M; ++i) {
            double d = static_cast<double>(row[i]) - m;
            v += d * d;
        }
        v /= static_cast<double>(M);
        double is = 1.0 / std::sqrt(v + static_cast<double>(eps));
        invstd[b] = static_cast<T>(is);
        T* orow = out + static_cast<int64_t>(b) * M;
        T* xrow = xhat + static_cast<int64_t>(b) * M;
        for (int64_t i = 0; i < M; ++i) {
            double xh = (static_cast<double>(row[i]) - m) * is;
            xrow[i] = static_cast<T>(xh);
            orow[i] = static_cast<T>(static_cast<double>(gamma[i]) * xh + static_cast<double>(beta[i]));
        }
    }
}

template <typename T>
void layer_norm_bwd(const T* xhat, const T* invstd, const T* gamma,
                    const T* gout, int B, int64_t M, T* gin, T* ggamma, T* gbeta) {
    for (int b = 0; b < B; ++b) {
        const T* xrow = xhat + static_cast<int64_t>(b) * M;
        const T* grow = gout + static_cast<int64_t>(b) * M;
        double s1 = 0.0, s2 = 0.0;
        for (int64_t i = 0; i < M; ++i) {
            double dxh = static_cast<double>(gamma[i]) * static_cast<double>(grow[i]);
            s1 += dxh;
            s2 += dxh * static_cast<double>(xrow[i]);
        }
        double is = static_cast<double>(invstd[b]);
        double minv = 1.0 / static_cast<double>(M);
        T* girow = gin + static_cast<int64_t>(b) * M;
        for (int64_t i = 0; i < M; ++i) {
            double dxh = static_cast<double>(gamma[i]) * static_cast<double>(grow[i]);
            girow[i] += static_cast<T>(is * (dxh - s1 * minv - static_cast<double>(xrow[i]) * s2 * minv));
        }
    }
    // parameter grads in (i outer, b inner) order so both variants agree
    for (int64_t i = 0; i < M; ++i) {
        double sg = 0.0, sb = 0.0;
        for (int b = 0; b < B; ++b) {
            double dy = static_cast<double>(gout[static_cast<int64_t>(b) * M + i]);
            sg += dy * static_cast<double>(xhat[static_cast<int64_t>(b) * M + i]);
            sb += dy;
        }
        ggamma[i] += static_cast<T>(sg);
        gbeta[i] += static_cast<T>(sb);
    }
}

template <typename T>
void softmax_fwd(const T* in, int outer, int n, int inner,
                 const uint8_t* valid, T* out) {
    for (int o = 0; o < outer; ++o)
        for (int i = 0; i < inner; ++i) {
            const T* base = in + static_cast<int64_t>(o) * n * inner + i;
            T* obase = out + static_cast<int64_t>(o) * n * inner + i;
            double m = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < n; ++k) {
                if (valid && !valid[k]) continue;
                m = std::max(m, static_cast<double>(base[static_cast<int64_t>(k) * inner]));
            }
            double denom = 0.0;
            for (int k = 0; k < n; ++k) {
                if (valid && !valid[k]) continue;
                denom += std::exp(static_cast<double>(base[static_cast<int64_t>(k) * inner]) - m);
            }
            for (int k = 0; k < n; ++k) {
                if (valid && !valid[k]) {
                    obase[static_cast<int64_t>(k) * inner] = T(0);
                } else {
                    obase[static_cast<int64_t>(k) * inner] = static_cast<T>(
                        std::exp(static_cast<double>(base[static_cast<int64_t>(k) * inner]) - m) / denom);
                }
            }
        }
}

template <typename T>
void softmax_bwd(const T* y, const T* gout, int outer, int n, int inner,
                 const uint8_t* valid, T* gin) {
    for (int o = 0; o < outer; ++o)
        for (int i = 0; i < inner; ++i) {
            const T* ybase = y + static_cast<int64_t>(o) * n * inner + i;
            const T* gbase = gout + static_cast<int64_t>(o) * n * inner + i;
            T* ibase = gin + static_cast<int64_t>(o) * n * inner + i;
            double dot = 0.0;
            for (int k = 0; k < n; ++k) {
                if (valid && !valid[k]) continue;
                dot += static_cast<double>(gbase[static_cast<int64_t>(k) * inner]) *
                       static_cast<double>(ybase[static_cast<int64_t>(k) * inner]);
            }
            for (int k = 0; k < n; ++k) {
                if (valid && !valid[k]) continue;
                double yk = static_cast<double>(ybase[static_cast<int64_t>(k) * inner]);
                double gk = static_cast<double>(gbase[static_cast<int64_t>(k) * inner]);
                ibase[static_cast<int64_t>(k) * inner] += static_cast<T>(yk * (gk - dot));
            }
        }
}

template <typename T>
void frob_batch_fwd(const T* F, int K, int C, int H, int W,
                    const T* P, int Tt, T* out) {
    int64_t HW = static_cast<int64_t>(H) * W;
    for (int k = 0; k < K; ++k)
        for (int t = 0; t < Tt; ++t)
            for (int c = 0; c < C; ++c) {
                const T* fplane = F + (static_cast<int64_t>(k) * C + c) * HW;
                const T* pplane = P + (static_cast<int64_t>(k) * Tt + t) * HW;
                double acc = 0.0;
                for (int64_t p = 0; p < HW; ++p)
                    acc += static_cast<double>(fplane[p]) * static_cast<double>(pplane[p]);
                out[(static_cast<int64_t>(k) * Tt + t) * C + c] = static_cast<T>(acc);
            }
}

template <typename T>
void frob_batch_bwd(const T* F, const T* P, const T* gout,
                    int K, int C, int H, int W, int Tt, T* gF, T* gP) {
    int64_t HW = static_cast<int64_t>(H) * W;
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < C; ++c) {
            T* gfplane = gF + (static_cast<int64_t>(k) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) {
                double acc = 0.0;
                for (int t = 0; t < Tt; ++t)
                    acc += static_cast<double>(gout[(static_cast<int64_t>(k) * Tt + t) * C + c]) *
                           static_cast<double>(P[(static_cast<int64_t>(k) * Tt + t) * HW + p]);
                gfplane[p] += static_cast<T>(acc);
            }
        }
    for (int k = 0; k < K; ++k)
        for (int t = 0; t < Tt; ++t) {
            T* gpplane = gP + (static_cast<int64_t>(k) * Tt + t) * HW;
            for (int64_t p = 0; p < HW; ++p) {
                double acc = 0.0;
                for (int c = 0; c < C; ++c)
                    acc += static_cast<double>(gout[(static_cast<int64_t>(k) * Tt + t) * C + c]) *
                           static_cast<double>(F[(static_cast<int64_t>(k) * C + c) * HW + p]);
                gpplane[p] += static_cast<T>(acc);
            }
        }
}

template <typename T>
void weighted_fuse_fwd(const T* Kmat, const T* Wgt, int K, int Tt, int C, T* out) {
    for (int t = 0; t < Tt; ++t)
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k)
                acc += static_cast<double>(Wgt[static_cast<int64_t>(k) * Tt + t]) *
                       static_cast<double>(Kmat[(static_cast<int64_t>(k) * Tt + t) * C + c]);
            out[static_cast<int64_t>(t) * C + c] = static_cast<T>(acc);
        }
}

template <typename T>
void weighted_fuse_bwd(const T* Kmat, const T* Wgt, const T* gout,
                       int K, int Tt, int C, T* gK, T* gW) {
    for (int k = 0; k < K; ++k)
        for (int t = 0; t < Tt; ++t) {
            double w = static_cast<double>(Wgt[static_cast<int64_t>(k) * Tt + t]);
            double acc = 0.0;
            for (int c = 0; c < C; ++c) {
                double g = static_cast<double>(gout[static_cast<int64_t>(t) * C + c]);
                gK[(static_cast<int64_t>(k) * Tt + t) * C + c] += static_cast<T>(w * g);
                acc += static_cast<double>(Kmat[(static_cast<int64_t>(k) * Tt + t) * C + c]) * g;
            }
            gW[static_cast<int64_t>(k) * Tt + t] += static_cast<T>(acc);
        }
}

template <typename T>
void sum_hw_fwd(const T* in, int B, int C, int H, int W, T* out) {
    int64_t HW = static_cast<int64_t>(H) * W;
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const T* plane = in + bc * HW;
        double acc = 0.0;
        for (int64_t p = 0; p < HW; ++p) acc += static_cast<double>(plane[p]);
        out[bc] = static_cast<T>(acc);
    }
}

template <typename T>
void sum_hw_bwd(const T* gout, int B, int C, int H, int W, T* gin) {
    int64_t HW = static_cast<int64_t>(H) * W;
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        T g = gout[bc];
        T* plane = gin + bc * HW;
        for (int64_t p = 0; p < HW; ++p) plane[p] += g;
    }
}

// probs holds softmax(logits) for the backward pass; returns mean NLL over
// non-ignored pixels.
template <typename T>
T cross_entropy_fwd(const T* logits, int B, int K, int H, int W,
                    const int32_t* labels, int ignore_label,
                    T* probs, int64_t* n_valid) {
    int64_t HW = static_cast<int64_t>(H) * W;
    int64_t npix = static_cast<int64_t>(B) * HW;
    std::vector<double> pixel_loss(npix, 0.0);
    int64_t nv = 0;
    for (int b = 0; b < B; ++b)
        for (int64_t p = 0; p < HW; ++p) {
            int64_t px = static_cast<int64_t>(b) * HW + p;
            const T* base = logits + static_cast<int64_t>(b) * K * HW + p;
            double m = static_cast<double>(base[0]);
            for (int k = 1; k < K; ++k)
                m = std::max(m, static_cast<double>(base[static_cast<int64_t>(k) * HW]));
            double denom = 0.0;
            for (int k = 0; k < K; ++k)
                denom += std::exp(static_cast<double>(base[static_cast<int64_t>(k) * HW]) - m);
            double lse = m + std::log(denom);
            T* pbase = probs + static_cast<int64_t>(b) * K * HW + p;
            for (int k = 0; k < K; ++k)
                pbase[static_cast<int64_t>(k) * HW] =
                    static_cast<T>(std::exp(static_cast<double>(base[static_cast<int64_t>(k) * HW]) - lse));
            int32_t lab = labels[px];
            if (lab == ignore_label) continue;
            ++nv;
            pixel_loss[px] = lse - static_cast<double>(base[static_cast<int64_t>(lab) * HW]);
        }
    *n_valid = nv;
    double total = 0.0;
    for (int64_t px = 0; px < npix; ++px) total += pixel_loss[px];
    return static_cast<T>(total / static_cast<double>(nv));
}

template <typename T>
void cross_entropy_bwd(const T* probs, int B, int K, int H, int W,
                       const int32_t* labels, int ignore_label,
                       int64_t n_valid, T gscale, T* glogits) {
    int64_t HW = static_cast<int64_t>(H) * W;
    double scale = static_cast<double>(gscale) / static_cast<double>(n_valid);
    for (int b = 0; b < B; ++b)
        for (int64_t p = 0; p < HW; ++p) {
            int32_t lab = labels[static_cast<int64_t>(b) * HW + p];
            if (lab == ignore_label) continue;
            const T* pbase = probs + static_cast<int64_t>(b) * K * HW + p;
            T* gbase = glogits + static_cast<int64_t>(b) * K * HW + p;
            for (int k = 0; k < K; ++k) {
                double v = static_cast<double>(pbase[static_cast<int64_t>(k) * HW]) - (k == lab ? 1.0 : 0.0);
                gbase[static_cast<int64_t>(k) * HW] += static_cast<T>(scale * v);
            }
        }
}

template <typename T>
T uncertainty_fwd(const T* mean, const T* logvar, const T* target,
                  const uint8_t* mask, int64_t n, int64_t* n_valid) {
    int64_t nv = 0;
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        ++nv;
        double s = static_cast<double>(logvar[i]);
        double r = static_cast<double>(target[i]) - static_cast<double>(mean[i]);
        total += 0.5 * std::exp(-s) * r * r + 0.5 * s;
    }
    *n_valid = nv;
    return static_cast<T>(total / static_cast<double>(nv));
}

template <typename T>
void uncertainty_bwd(const T* mean, const T* logvar, const T* target,
                     const uint8_t* mask, int64_t n, int64_t n_valid,
                     T gscale, T* gmean, T* glogvar) {
    double scale = static_cast<double>(gscale) / static_cast<double>(n_valid);
    for (int64_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        double s = static_cast<double>(logvar[i]);
        double r = static_cast<double>(target[i]) - static_cast<double>(mean[i]);
        gmean[i] += static_cast<T>(scale * std::exp(-s) * (-r));
        glogvar[i] += static_cast<T>(scale * 0.5 * (1.0 - std::exp(-s) * r * r));
    }
}

template <typename T>
void repeat_batch_fwd(const T* in, int K, int64_t M, int Tt, T* out) {
    for (int k = 0; k < K; ++k)
        for (int t = 0; t < Tt; ++t)
            std::memcpy(out + (static_cast<int64_t>(k) * Tt + t) * M,
                        in + static_cast<int64_t>(k) * M, sizeof(T) * static_cast<size_t>(M));
}

template <typename T>
void repeat_batch_bwd(const T* gout, int K, int64_t M, int Tt, T* gin) {
    for (int k = 0; k < K; ++k)
        for (int64_t m = 0; m < M; ++m) {
            double acc = 0.0;
            for (int t = 0; t < Tt; ++t)
                acc += static_cast<double>(gout[(static_cast<int64_t>(k) * Tt + t) * M + m]);
            gin[static_cast<int64_t>(k) * M + m] += static_cast<T>(acc);
        }
}

template <typename T>
void tile_cells_fwd(const T* in, int C, int G, int K, int H, int W, T* out) {
    int64_t HW = static_cast<int64_t>(H) * W;
    int T2 = G * G;
    for (int k = 0; k < K; ++k)
        for (int t = 0; t < T2; ++t)
            for (int c = 0; c < C; ++c) {
                T v = in[(static_cast<int64_t>(c) * G + t / G) * G + t % G];
                T* base = out + ((static_cast<int64_t>(k) * T2 + t) * C + c) * HW;
                for (int64_t p = 0; p < HW; ++p) base[p] = v;
            }
}

template <typename T>
void tile_cells_bwd(const T* gout, int C, int G, int K, int H, int W, T* gin) {
    int64_t HW = static_cast<int64_t>(H) * W;
    int T2 = G * G;
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T2; ++t) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k) {
                const T* base = gout + ((static_cast<int64_t>(k) * T2 + t) * C + c) * HW;
                for (int64_t p = 0; p < HW; ++p) acc += static_cast<double>(base[p]);
            }
            gin[(static_cast<int64_t>(c) * G + t / G) * G + t % G] += static_cast<T>(acc);
        }
}

}  // namespace serial

namespace par {

template <typename T>
void conv2d_fwd(const T* in, int B, int Ci, int H, int W,
                const T* w, int Co, int kh, int kw,
                const T* bias, int stride, int ph, int pw, T* out) {
    int Ho = conv_out_dim(H, kh, ph, stride);
    int Wo = conv_out_dim(W, kw, pw, stride);
    if (stride == 1) {
        // row accumulator: inner loop runs contiguously over output columns
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < B; ++b)
            for (int co = 0; co < Co; ++co) {
                std::vector<double> acc(static_cast<size_t>(Wo));
                for (int oh = 0; oh < Ho; ++oh) {
                    double b0 = bias ? static_cast<double>(bias[co]) : 0.0;
                    std::fill(acc.begin(), acc.end(), b0);
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int r = 0; r < kh; ++r) {
                            int ih = oh - ph + r;
                            if (ih < 0 || ih >= H) continue;
                            const T* irow = in + ((static_cast<int64_t>(b) * Ci + ci) * H + ih) * W;
                            const T* wrow = w + ((static_cast<int64_t>(co) * Ci + ci) * kh + r) * kw;
                            for (int c = 0; c < kw; ++c) {
                                int shift = c - pw;
                                int lo = std::max(0, -shift);
                                int hi = std::min(Wo, W - shift);
                                double wv = static_cast<double>(wrow[c]);
                                const T* ib = irow + shift;
                                double* a = acc.data();
                                for (int ow = lo; ow < hi; ++ow)
                                    a[ow] += static_cast<double>(ib[ow]) * wv;
                            }
                        }
                    T* orow = out + ((static_cast<int64_t>(b) * Co + co) * Ho + oh) * Wo;
                    for (int ow = 0; ow < Wo; ++ow) orow[ow] = static_cast<T>(acc[ow]);
                }
            }
    } else {
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < B; ++b)
            for (int co = 0; co < Co; ++co)
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow) {
                        double acc = bias ? static_cast<double>(bias[co]) : 0.0;
                        for (int ci = 0; ci < Ci; ++ci)
                            for (int r = 0; r < kh; ++r) {
                                int ih = oh * stride - ph + r;
                                if (ih < 0 || ih >= H) continue;
                                const T* irow = in + ((static_cast<int64_t>(b) * Ci + ci) * H + ih) * W;
                                const T* wrow = w + ((static_cast<int64_t>(co) * Ci + ci) * kh + r) * kw;
                                for (int c = 0; c < kw; ++c) {
                                    int iw = ow * stride - pw + c;
                                    if (iw < 0 || iw >= W) continue;
                                    acc += static_cast<double>(irow[iw]) * static_cast<double>(wrow[c]);
                                }
                            }
                        out[((static_cast<int64_t>(b) * Co + co) * Ho + oh) * Wo + ow] = static_cast<T>(acc);
                    }
    }
}

template <typename T>
void conv2d_bwd_input(const T* w, int Co, int Ci, int kh, int kw,
                      const T* gout, int B, int Ho, int Wo,
                      int stride, int ph, int pw,
                      T* gin, int H, int W) {
    if (stride == 1) {
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < B; ++b)
            for (int ci = 0; ci < Ci; ++ci) {
                std::vector<double> acc(static_cast<size_t>(W));
                for (int ih = 0; ih < H; ++ih) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (int co = 0; co < Co; ++co)
                        for (int r = 0; r < kh; ++r) {
                            int oh = ih + ph - r;
                            if (oh < 0 || oh >= Ho) continue;
                            const T* grow = gout + ((static_cast<int64_t>(b) * Co + co) * Ho + oh) * Wo;
                            const T* wrow = w + ((static_cast<int64_t>(co) * Ci + ci) * kh + r) * kw;
                            for (int c = 0; c < kw; ++c) {
                                int shift = pw - c;  // ow = iw + pw - c
                                int lo = std::max(0, -shift);
                                int hi = std::min(W, Wo - shift);
                                double wv = static_cast<double>(wrow[c]);
                                const T* gb = grow + shift;
                                double* a = acc.data();
                                for (int iw = lo; iw < hi; ++iw)
                                    a[iw] += wv * static_cast<double>(gb[iw]);
                            }
                        }
                    T* girow = gin + ((static_cast<int64_t>(b) * Ci + ci) * H + ih) * W;
                    for (int iw = 0; iw < W; ++iw) girow[iw] += static_cast<T>(acc[iw]);
                }
            }
    } else {
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < B; ++b)
            for (int ci = 0; ci < Ci; ++ci)
                for (int ih = 0; ih < H; ++ih)
                    for (int iw = 0; iw < W; ++iw) {
                        double acc = 0.0;
                        for (int co = 0; co < Co; ++co)
                            for (int r = 0; r < kh; ++r) {
                                int num = ih + ph - r;
                                if (num < 0 || num % stride != 0) continue;
                                int oh = num / stride;
                                if (oh >= Ho) continue;
                                const T* grow = gout + ((static_cast<int64_t>(b) * Co + co) * Ho + oh) * Wo;
                                const T* wrow = w + ((static_cast<int64_t>(co) * Ci + ci) * kh + r) * kw;
                                for (int c = 0; c < kw; ++c) {
                                    int numw = iw + pw - c;
                                    if (numw < 0 || numw % stride != 0) continue;
                                    int ow = numw / stride;
                                    if (ow >= Wo) continue;
                                    acc += static_cast<double>(wrow[c]) * static_cast<double>(grow[ow]);
                                }
                            }
                        gin[((static_cast<int64_t>(b) * Ci + ci) * H + ih) * W + iw] += static_cast<T>(acc);
                    }
    }
}

template <typename T>
void conv2d_bwd_weight(const T* in, int B, int Ci, int H, int W,
                       const T* gout, int Co, int Ho, int Wo,
                       int stride, int ph, int pw,
                       T* gw, int kh, int kw) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
            for (int r = 0; r < kh; ++r)
                for (int c = 0; c < kw; ++c) {
                    double acc = 0.0;
                    for (int b = 0; b < B; ++b)
                        for (int oh = 0; oh < Ho; ++oh) {
                            int ih = oh * stride - ph + r;
                            if (ih < 0 || ih >= H) continue;
                            const T* irow = in + ((static_cast<int64_t>(b) * Ci + ci) * H + ih) * W;
                            const T* grow = gout + ((static_cast<int64_t>(b) * Co + co) * Ho + oh) * Wo;
                            if (stride == 1) {
                                int shift = c - pw;  // iw = ow + shift
                                int lo = std::max(0, -shift);
                                int hi = std::min(Wo, W - shift);
                                const T* ib = irow + shift;
                                for (int ow = lo; ow < hi; ++ow)
                                    acc += static_cast<double>(ib[ow]) * static_cast<double>(grow[ow]);
                            } else {
                                for (int ow = 0; ow < Wo; ++ow) {
                                    int iw = ow * stride - pw + c;
                                    if (iw < 0 || iw >= W) continue;
                                    acc += static_cast<double>(irow[iw]) * static_cast<double>(grow[ow]);
                                }
                            }
                        }
                    gw[((static_cast<int64_t>(co) * Ci + ci) * kh + r) * kw + c] += static_cast<T>(acc);
                }
}

template <typename T>
void conv2d_bwd_bias(const T* gout, int B, int Co, int Ho, int Wo, T* gb) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < Co; ++co) {
        double acc = 0.0;
        for (int b = 0; b < B; ++b) {
            const T* base = gout + (static_cast<int64_t>(b) * Co + co) * Ho * Wo;
            for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i)
                acc += static_cast<double>(base[i]);
        }
        gb[co] += static_cast<T>(acc);
    }
}

template <typename T>
void channel_pool_fwd(const T* in, int B, int C, int H, int W,
                      PoolMode mode, T* out, int32_t* argmax) {
    int64_t HW = static_cast<int64_t>(H) * W;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b)
        for (int64_t p = 0; p < HW; ++p) {
            const T* base = in + static_cast<int64_t>(b) * C * HW + p;
            if (mode == PoolMode::max) {
                T best = base[0];
                int32_t bi = 0;
                for (int c = 1; c < C; ++c) {
                    T v = base[static_cast<int64_t>(c) * HW];
                    if (v > best) {
                        best = v;
                        bi = c;
                    }
                }
                out[static_cast<int64_t>(b) * HW + p] = best;
                if (argmax) argmax[static_cast<int64_t>(b) * HW + p] = bi;
            } else {
                double acc = 0.0;
                for (int c = 0; c < C; ++c) acc += static_cast<double>(base[static_cast<int64_t>(c) * HW]);
                out[static_cast<int64_t>(b) * HW + p] = static_cast<T>(acc / C);
            }
        }
}

template <typename T>
void channel_pool_bwd(const T* gout, int B, int C, int H, int W,
                      PoolMode mode, const int32_t* argmax, T* gin) {
    int64_t HW = static_cast<int64_t>(H) * W;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b)
        for (int64_t p = 0; p < HW; ++p) {
            T g = gout[static_cast<int64_t>(b) * HW + p];
            T* base = gin + static_cast<int64_t>(b) * C * HW + p;
            if (mode == PoolMode::max) {
                base[static_cast<int64_t>(argmax[static_cast<int64_t>(b) * HW + p]) * HW] += g;
            } else {
                T share = static_cast<T>(static_cast<double>(g) / C);
                for (int c = 0; c < C; ++c) base[static_cast<int64_t>(c) * HW] += share;
            }
        }
}

template <typename T>
void maxpool2_fwd(const T* in, int B, int C, int H, int W, T* out, int32_t* arg) {
    int Ho = H / 2, Wo = W / 2;
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const T* plane = in + bc * H * W;
        T* oplane = out + bc * Ho * Wo;
        int32_t* aplane = arg + bc * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
                T best = plane[(2 * oh) * W + 2 * ow];
                int32_t bi = (2 * oh) * W + 2 * ow;
                for (int dh = 0; dh < 2; ++dh)
                    for (int dw = 0; dw < 2; ++dw) {
                        int idx = (2 * oh + dh) * W + 2 * ow + dw;
                        if (plane[idx] > best) {
                            best = plane[idx];
                            bi = idx;
                        }
                    }
                oplane[oh * Wo + ow] = best;
                aplane[oh * Wo + ow] = bi;
            }
    }
}

template <typename T>
void maxpool2_bwd(const T* gout, int B, int C, int H, int W, const int32_t* arg, T* gin) {
    int Ho = H / 2, Wo = W / 2;
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const T* gplane = gout + bc * Ho * Wo;
        const int32_t* aplane = arg + bc * Ho * Wo;
        T* iplane = gin + bc * H * W;
        for (int64_t p = 0; p < static_cast<int64_t>(Ho) * Wo; ++p)
            iplane[aplane[p]] += gplane[p];
    }
}

template <typename T>
void upsample2_fwd(const T* in, int B, int C, int H, int W, T* out) {
    int Wo = W * 2;
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const T* plane = in + bc * H * W;
        T* oplane = out + bc * 4 * H * W;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                T v = plane[h * W + w];
                oplane[(2 * h) * Wo + 2 * w] = v;
                oplane[(2 * h) * Wo + 2 * w + 1] = v;
                oplane[(2 * h + 1) * Wo + 2 * w] = v;
                oplane[(2 * h + 1) * Wo + 2 * w + 1] = v;
            }
    }
}

template <typename T>
void upsample2_bwd(const T* gout, int B, int C, int H, int W, T* gin) {
    int Wo = W * 2;
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const T* gplane = gout + bc * 4 * H * W;
        T* iplane = gin + bc * H * W;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                double acc = static_cast<double>(gplane[(2 * h) * Wo + 2 * w]);
                acc += static_cast<double>(gplane[(2 * h) * Wo + 2 * w + 1]);
                acc += static_cast<double>(gplane[(2 * h + 1) * Wo + 2 * w]);
                acc += static_cast<double>(gplane[(2 * h + 1) * Wo + 2 * w + 1]);
                iplane[h * W + w] += static_cast<T>(acc);
            }
    }
}

template <typename T>
void relu_fwd(const T* in, int64_t n, T* out) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

template <typename T>
void relu_bwd(const T* in, const T* gout, int64_t n, T* gin) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i)
        if (in[i] > T(0)) gin[i] += gout[i];
}

template <typename T>
void sigmoid_fwd(const T* in, int64_t n, T* out) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i)
        out[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(in[i]))));
}

template <typename T>
void sigmoid_bwd(const T* y, const T* gout, int64_t n, T* gin) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        double yd = static_cast<double>(y[i]);
        gin[i] += static_cast<T>(static_cast<double>(gout[i]) * yd * (1.0 - yd));
    }
}

template <typename T>
void bn2d_stats(const T* in, int B, int C, int H, int W, T* mean, T* var) {
    int64_t HW = static_cast<int64_t>(H) * W;
    int64_t N = static_cast<int64_t>(B) * HW;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        double m = 0.0;
        for (int b = 0; b < B; ++b) {
            const T* plane = in + (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) m += static_cast<double>(plane[p]);
        }
        m /= static_cast<double>(N);
        double v = 0.0;
        for (int b = 0; b < B; ++b) {
            const T* plane = in + (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) {
                double d = static_cast<double>(plane[p]) - m;
                v += d * d;
            }
        }
        mean[c] = static_cast<T>(m);
        var[c] = static_cast<T>(v / static_cast<double>(N));
    }
}

template <typename T>
void bn2d_fwd(const T* in, int B, int C, int H, int W,
              const T* mean, const T* var, const T* gamma, const T* beta,
              T eps, T* out, T* xhat) {
    int64_t HW = static_cast<int64_t>(H) * W;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        double invstd = 1.0 / std::sqrt(static_cast<double>(var[c]) + static_cast<double>(eps));
        double m = static_cast<double>(mean[c]);
        double g = static_cast<double>(gamma[c]);
        double be = static_cast<double>(beta[c]);
        for (int b = 0; b < B; ++b) {
            int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) {
                double xh = (static_cast<double>(in[off + p]) - m) * invstd;
                xhat[off + p] = static_cast<T>(xh);
                out[off + p] = static_cast<T>(g * xh + be);
            }
        }
    }
}

template <typename T>
void bn2d_bwd_train(const T* xhat, const T* var, const T* gamma,
                    const T* gout, int B, int C, int H, int W, T eps,
                    T* gin, T* ggamma, T* gbeta) {
    int64_t HW = static_cast<int64_t>(H) * W;
    int64_t N = static_cast<int64_t>(B) * HW;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        double s1 = 0.0, s2 = 0.0;
        for (int b = 0; b < B; ++b) {
            int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) {
                double dy = static_cast<double>(gout[off + p]);
                s1 += dy;
                s2 += dy * static_cast<double>(xhat[off + p]);
            }
        }
        double invstd = 1.0 / std::sqrt(static_cast<double>(var[c]) + static_cast<double>(eps));
        double g = static_cast<double>(gamma[c]);
        double ninv = 1.0 / static_cast<double>(N);
        for (int b = 0; b < B; ++b) {
            int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) {
                double dy = static_cast<double>(gout[off + p]);
                double xh = static_cast<double>(xhat[off + p]);
                gin[off + p] += static_cast<T>(invstd * g * (dy - s1 * ninv - xh * s2 * ninv));
            }
        }
        ggamma[c] += static_cast<T>(s2);
        gbeta[c] += static_cast<T>(s1);
    }
}

template <typename T>
void layer_norm_fwd(const T* in, int B, int64_t M, const T* gamma, const T* beta,
                    T eps, T* out, T* xhat, T* invstd) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        const T* row = in + static_cast<int64_t>(b) * M;
        double m = 0.0;
        for (int64_t i = 0; i < M; ++i) m += static_cast<double>(row[i]);
        m /= static_cast<double>(M);
        double v = 0.0;
        for (int64_t i = 0; i < M; ++i) {
            double d = static_cast<double>(row[i]) - m;
            v += d * d;
        }
        v /= static_cast<double>(M);
        double is = 1.0 / std::sqrt(v + static_cast<double>(eps));
        invstd[b] = static_cast<T>(is);
        T* orow = out + static_cast<int64_t>(b) * M;
        T* xrow = xhat + static_cast<int64_t>(b) * M;
        for (int64_t i = 0; i < M; ++i) {
            double xh = (static_cast<double>(row[i]) - m) * is;
            xrow[i] = static_cast<T>(xh);
            orow[i] = static_cast<T>(static_cast<double>(gamma[i]) * xh + static_cast<double>(beta[i]));
        }
    }
}

template <typename T>
void layer_norm_bwd(const T* xhat, const T* invstd, const T* gamma,
                    const T* gout, int B, int64_t M, T* gin, T* ggamma, T* gbeta) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        const T* xrow = xhat + static_cast<int64_t>(b) * M;
        const T* grow = gout + static_cast<int64_t>(b) * M;
        double s1 = 0.0, s2 = 0.0;
        for (int64_t i = 0; i < M; ++i) {
            double dxh = static_cast<double>(gamma[i]) * static_cast<double>(grow[i]);
            s1 += dxh;
            s2 += dxh * static_cast<double>(xrow[i]);
        }
        double is = static_cast<double>(invstd[b]);
        double minv = 1.0 / static_cast<double>(M);
        T* girow = gin + static_cast<int64_t>(b) * M;
        for (int64_t i = 0; i < M; ++i) {
            double dxh = static_cast<double>(gamma[i]) * static_cast<double>(grow[i]);
            girow[i] += static_cast<T>(is * (dxh - s1 * minv - static_cast<double>(xrow[i]) * s2 * minv));
        }
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < M; ++i) {
        double sg = 0.0, sb = 0.0;
        for (int b = 0; b < B; ++b) {
            double dy = static_cast<double>(gout[static_cast<int64_t>(b) * M + i]);
            sg += dy * static_cast<double>(xhat[static_cast<int64_t>(b) * M + i]);
            sb += dy;
        }
        ggamma[i] += static_cast<T>(sg);
        gbeta[i] += static_cast<T>(sb);
    }
}

template <typename T>
void frob_batch_fwd(const T* F, int K, int C, int H, int W,
                    const T* P, int Tt, T* out) {
    int64_t HW = static_cast<int64_t>(H) * W;
#pragma omp parallel for collapse(2) schedule(static)
    for (int k = 0; k < K; ++k)
        for (int t = 0; t < Tt; ++t)
            for (int c = 0; c < C; ++c) {
                const T* fplane = F + (static_cast<int64_t>(k) * C + c) * HW;
                const T* pplane = P + (static_cast<int64_t>(k) * Tt + t) * HW;
                double acc = 0.0;
                for (int64_t p = 0; p < HW; ++p)
                    acc += static_cast<double>(fplane[p]) * static_cast<double>(pplane[p]);
                out[(static_cast<int64_t>(k) * Tt + t) * C + c] = static_cast<T>(acc);
            }
}

template <typename T>
void frob_batch_bwd(const T* F, const T* P, const T* gout,
                    int K, int C, int H, int W, int Tt, T* gF, T* gP) {
    int64_t HW = static_cast<int64_t>(H) * W;
#pragma omp parallel for collapse(2) schedule(static)
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < C; ++c) {
            T* gfplane = gF + (static_cast<int64_t>(k) * C + c) * HW;
            std::vector<double> acc(static_cast<size_t>(HW), 0.0);
            for (int t = 0; t < Tt; ++t) {
                double g = static_cast<double>(gout[(static_cast<int64_t>(k) * Tt + t) * C + c]);
                const T* pplane = P + (static_cast<int64_t>(k) * Tt + t) * HW;
                for (int64_t p = 0; p < HW; ++p) acc[p] += g * static_cast<double>(pplane[p]);
            }
            for (int64_t p = 0; p < HW; ++p) gfplane[p] += static_cast<T>(acc[p]);
        }
#pragma omp parallel for collapse(2) schedule(static)
    for (int k = 0; k < K; ++k)
        for (int t = 0; t < Tt; ++t) {
            T* gpplane = gP + (static_cast<int64_t>(k) * Tt + t) * HW;
            std::vector<double> acc(static_cast<size_t>(HW), 0.0);
            for (int c = 0; c < C; ++c) {
                double g = static_cast<double>(gout[(static_cast<int64_t>(k) * Tt + t) * C + c]);
                const T* fplane = F + (static_cast<int64_t>(k) * C + c) * HW;
                for (int64_t p = 0; p < HW; ++p) acc[p] += g * static_cast<double>(fplane[p]);
            }
            for (int64_t p = 0; p < HW; ++p) gpplane[p] += static_cast<T>(acc[p]);
        }
}

template <typename T>
void sum_hw_fwd(const T* in, int B, int C, int H, int W, T* out) {
    int64_t HW = static_cast<int64_t>(H) * W;
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const T* plane = in + bc * HW;
        double acc = 0.0;
        for (int64_t p = 0; p < HW; ++p) acc += static_cast<double>(plane[p]);
        out[bc] = static_cast<T>(acc);
    }
}

template <typename T>
void sum_hw_bwd(const T* gout, int B, int C, int H, int W, T* gin) {
    int64_t HW = static_cast<int64_t>(H) * W;
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        T g = gout[bc];
        T* plane = gin + bc * HW;
        for (int64_t p = 0; p < HW; ++p) plane[p] += g;
    }
}

template <typename T>
T cross_entropy_fwd(const T* logits, int B, int K, int H, int W,
                    const int32_t* labels, int ignore_label,
                    T* probs, int64_t* n_valid) {
    int64_t HW = static_cast<int64_t>(H) * W;
    int64_t npix = static_cast<int64_t>(B) * HW;
    std::vector<double> pixel_loss(npix, 0.0);
    int64_t nv = 0;
#pragma omp parallel for schedule(static) reduction(+ : nv)
    for (int64_t px = 0; px < npix; ++px) {
        int b = static_cast<int>(px / HW);
        int64_t p = px % HW;
        const T* base = logits + static_cast<int64_t>(b) * K * HW + p;
        double m = static_cast<double>(base[0]);
        for (int k = 1; k < K; ++k)
            m = std::max(m, static_cast<double>(base[static_cast<int64_t>(k) * HW]));
        double denom = 0.0;
        for (int k = 0; k < K; ++k)
            denom += std::exp(static_cast<double>(base[static_cast<int64_t>(k) * HW]) - m);
        double lse = m + std::log(denom);
        T* pbase = probs + static_cast<int64_t>(b) * K * HW + p;
        for (int k = 0; k < K; ++k)
            pbase[static_cast<int64_t>(k) * HW] =
                static_cast<T>(std::exp(static_cast<double>(base[static_cast<int64_t>(k) * HW]) - lse));
        int32_t lab = labels[px];
        if (lab == ignore_label) continue;
        ++nv;
        pixel_loss[px] = lse - static_cast<double>(base[static_cast<int64_t>(lab) * HW]);
    }
    *n_valid = nv;
    // fixed-order final reduction keeps the result independent of thread count
    double total = 0.0;
    for (int64_t px = 0; px < npix; ++px) total += pixel_loss[px];
    return static_cast<T>(total / static_cast<double>(nv));
}

template <typename T>
void cross_entropy_bwd(const T* probs, int B, int K, int H, int W,
                       const int32_t* labels, int ignore_label,
                       int64_t n_valid, T gscale, T* glogits) {
    int64_t HW = static_cast<int64_t>(H) * W;
    int64_t npix = static_cast<int64_t>(B) * HW;
    double scale = static_cast<double>(gscale) / static_cast<double>(n_valid);
#pragma omp parallel for schedule(static)
    for (int64_t px = 0; px < npix; ++px) {
        int32_t lab = labels[px];
        if (lab == ignore_label) continue;
        int b = static_cast<int>(px / HW);
        int64_t p = px % HW;
        const T* pbase = probs + static_cast<int64_t>(b) * K * HW + p;
        T* gbase = glogits + static_cast<int64_t>(b) * K * HW + p;
        for (int k = 0; k < K; ++k) {
            double v = static_cast<double>(pbase[static_cast<int64_t>(k) * HW]) - (k == lab ? 1.0 : 0.0);
            gbase[static_cast<int64_t>(k) * HW] += static_cast<T>(scale * v);
        }
    }
}

template <typename T>
void repeat_batch_fwd(const T* in, int K, int64_t M, int Tt, T* out) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int k = 0; k < K; ++k)
        for (int t = 0; t < Tt; ++t)
            std::memcpy(out + (static_cast<int64_t>(k) * Tt + t) * M,
                        in + static_cast<int64_t>(k) * M, sizeof(T) * static_cast<size_t>(M));
}

template <typename T>
void repeat_batch_bwd(const T* gout, int K, int64_t M, int Tt, T* gin) {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < K; ++k) {
        std::vector<double> acc(static_cast<size_t>(M), 0.0);
        for (int t = 0; t < Tt; ++t) {
            const T* base = gout + (static_cast<int64_t>(k) * Tt + t) * M;
            for (int64_t m = 0; m < M; ++m) acc[m] += static_cast<double>(base[m]);
        }
        T* ibase = gin + static_cast<int64_t>(k) * M;
        for (int64_t m = 0; m < M; ++m) ibase[m] += static_cast<T>(acc[m]);
    }
}

template <typename T>
void tile_cells_fwd(const T* in, int C, int G, int K, int H, int W, T* out) {
    int64_t HW = static_cast<int64_t>(H) * W;
    int T2 = G * G;
#pragma omp parallel for collapse(2) schedule(static)
    for (int k = 0; k < K; ++k)
        for (int t = 0; t < T2; ++t)
            for (int c = 0; c < C; ++c) {
                T v = in[(static_cast<int64_t>(c) * G + t / G) * G + t % G];
                T* base = out + ((static_cast<int64_t>(k) * T2 + t) * C + c) * HW;
                for (int64_t p = 0; p < HW; ++p) base[p] = v;
            }
}

template <typename T>
void tile_cells_bwd(const T* gout, int C, int G, int K, int H, int W, T* gin) {
    int64_t HW = static_cast<int64_t>(H) * W;
    int T2 = G * G;
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T2; ++t) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k) {
                const T* base = gout + ((static_cast<int64_t>(k) * T2 + t) * C + c) * HW;
                for (int64_t p = 0; p < HW; ++p) acc += static_cast<double>(base[p]);
            }
            gin[(static_cast<int64_t>(c) * G + t / G) * G + t % G] += static_cast<T>(acc);
        }
}

}  // namespace par

// ---- dispatchers ----------------------------------------------------------

namespace {
inline bool use_par() { return exec_mode() == Exec::parallel; }
}  // namespace

#define GEOFUSE_DISPATCH(call_par, call_serial) \
    do {                                        \
        if (use_par())                          \
            call_par;                           \
        else                                    \
            call_serial;                        \
    } while (0)

template <typename T>
void conv2d_fwd(const T* in, int B, int Ci, int H, int W,
                const T* w, int Co, int kh, int kw,
                const T* bias, int stride, int ph, int pw, T* out) {
    GEOFUSE_DISPATCH(par::conv2d_fwd(in, B, Ci, H, W, w, Co, kh, kw, bias, stride, ph, pw, out),
                     serial::conv2d_fwd(in, B, Ci, H, W, w, Co, kh, kw, bias, stride, ph, pw, out));
}

template <typename T>
void conv2d_bwd_input(const T* w, int Co, int Ci, int kh, int kw,
                      const T* gout, int B, int Ho, int Wo,
                      int stride, int ph, int pw, T* gin, int H, int W) {
    GEOFUSE_DISPATCH(par::conv2d_bwd_input(w, Co, Ci, kh, kw, gout, B, Ho, Wo, stride, ph, pw, gin, H, W),
                     serial::conv2d_bwd_input(w, Co, Ci, kh, kw, gout, B, Ho, Wo, stride, ph, pw, gin, H, W));
}

template <typename T>
void conv2d_bwd_weight(const T* in, int B, int Ci, int H, int W,
                       const T* gout, int Co, int Ho, int Wo,
                       int stride, int ph, int pw, T* gw, int kh, int kw) {
    GEOFUSE_DISPATCH(par::conv2d_bwd_weight(in, B, Ci, H, W, gout, Co, Ho, Wo, stride, ph, pw, gw, kh, kw),
                     serial::conv2d_bwd_weight(in, B, Ci, H, W, gout, Co, Ho, Wo, stride, ph, pw, gw, kh, kw));
}

template <typename T>
void conv2d_bwd_bias(const T* gout, int B, int Co, int Ho, int Wo, T* gb) {
    GEOFUSE_DISPATCH(par::conv2d_bwd_bias(gout, B, Co, Ho, Wo, gb),
                     serial::conv2d_bwd_bias(gout, B, Co, Ho, Wo, gb));
}

template <typename T>
void channel_pool_fwd(const T* in, int B, int C, int H, int W,
                      PoolMode mode, T* out, int32_t* argmax) {
    GEOFUSE_DISPATCH(par::channel_pool_fwd(in, B, C, H, W, mode, out, argmax),
                     serial::channel_pool_fwd(in, B, C, H, W, mode, out, argmax));
}

template <typename T>
void channel_pool_bwd(const T* gout, int B, int C, int H, int W,
                      PoolMode mode, const int32_t* argmax, T* gin) {
    GEOFUSE_DISPATCH(par::channel_pool_bwd(gout, B, C, H, W, mode, argmax, gin),
                     serial::channel_pool_bwd(gout, B, C, H, W, mode, argmax, gin));
}

template <typename T>
void maxpool2_fwd(const T* in, int B, int C, int H, int W, T* out, int32_t* arg) {
    GEOFUSE_DISPATCH(par::maxpool2_fwd(in, B, C, H, W, out, arg),
                     serial::maxpool2_fwd(in, B, C, H, W, out, arg));
}

template <typename T>
void maxpool2_bwd(const T* gout, int B, int C, int H, int W, const int32_t* arg, T* gin) {
    GEOFUSE_DISPATCH(par::maxpool2_bwd(gout, B, C, H, W, arg, gin),
                     serial::maxpool2_bwd(gout, B, C, H, W, arg, gin));
}

template <typename T>
void upsample2_fwd(const T* in, int B, int C, int H, int W, T* out) {
    GEOFUSE_DISPATCH(par::upsample2_fwd(in, B, C, H, W, out),
                     serial::upsample2_fwd(in, B, C, H, W, out));
}

template <typename T>
void upsample2_bwd(const T* gout, int B, int C, int H, int W, T* gin) {
    GEOFUSE_DISPATCH(par::upsample2_bwd(gout, B, C, H, W, gin),
                     serial::upsample2_bwd(gout, B, C, H, W, gin));
}

template <typename T>
void relu_fwd(const T* in, int64_t n, T* out) {
    GEOFUSE_DISPATCH(par::relu_fwd(in, n, out), serial::relu_fwd(in, n, out));
}
template <typename T>
void relu_bwd(const T* in, const T* gout, int64_t n, T* gin) {
    GEOFUSE_DISPATCH(par::relu_bwd(in, gout, n, gin), serial::relu_bwd(in, gout, n, gin));
}
template <typename T>
void sigmoid_fwd(const T* in, int64_t n, T* out) {
    GEOFUSE_DISPATCH(par::sigmoid_fwd(in, n, out), serial::sigmoid_fwd(in, n, out));
}
template <typename T>
void sigmoid_bwd(const T* y, const T* gout, int64_t n, T* gin) {
    GEOFUSE_DISPATCH(par::sigmoid_bwd(y, gout, n, gin), serial::sigmoid_bwd(y, gout, n, gin));
}

template <typename T>
void bn2d_stats(const T* in, int B, int C, int H, int W, T* mean, T* var) {
    GEOFUSE_DISPATCH(par::bn2d_stats(in, B, C, H, W, mean, var),
                     serial::bn2d_stats(in, B, C, H, W, mean, var));
}
template <typename T>
void bn2d_fwd(const T* in, int B, int C, int H, int W,
              const T* mean, const T* var, const T* gamma, const T* beta,
              T eps, T* out, T* xhat) {
    GEOFUSE_DISPATCH(par::bn2d_fwd(in, B, C, H, W, mean, var, gamma, beta, eps, out, xhat),
                     serial::bn2d_fwd(in, B, C, H, W, mean, var, gamma, beta, eps, out, xhat));
}
template <typename T>
void bn2d_bwd_train(const T* xhat, const T* var, const T* gamma,
                    const T* gout, int B, int C, int H, int W, T eps,
                    T* gin, T* ggamma, T* gbeta) {
    GEOFUSE_DISPATCH(par::bn2d_bwd_train(xhat, var, gamma, gout, B, C, H, W, eps, gin, ggamma, gbeta),
                     serial::bn2d_bwd_train(xhat, var, gamma, gout, B, C, H, W, eps, gin, ggamma, gbeta));
}

template <typename T>
void layer_norm_fwd(const T* in, int B, int64_t M, const T* gamma, const T* beta,
                    T eps, T* out, T* xhat, T* invstd) {
    GEOFUSE_DISPATCH(par::layer_norm_fwd(in, B, M, gamma, beta, eps, out, xhat, invstd),
                     serial::layer_norm_fwd(in, B, M, gamma, beta, eps, out, xhat, invstd));
}
template <typename T>
void layer_norm_bwd(const T* xhat, const T* invstd, const T* gamma,
                    const T* gout, int B, int64_t M, T* gin, T* ggamma, T* gbeta) {
    GEOFUSE_DISPATCH(par::layer_norm_bwd(xhat, invstd, gamma, gout, B, M, gin, ggamma, gbeta),
                     serial::layer_norm_bwd(xhat, invstd, gamma, gout, B, M, gin, ggamma, gbeta));
}

template <typename T>
void frob_batch_fwd(const T* F, int K, int C, int H, int W, const T* P, int Tt, T* out) {
    GEOFUSE_DISPATCH(par::frob_batch_fwd(F, K, C, H, W, P, Tt, out),
                     serial::frob_batch_fwd(F, K, C, H, W, P, Tt, out));
}
template <typename T>
void frob_batch_bwd(const T* F, const T* P, const T* gout,
                    int K, int C, int H, int W, int Tt, T* gF, T* gP) {
    GEOFUSE_DISPATCH(par::frob_batch_bwd(F, P, gout, K, C, H, W, Tt, gF, gP),
                     serial::frob_batch_bwd(F, P, gout, K, C, H, W, Tt, gF, gP));
}

template <typename T>
void sum_hw_fwd(const T* in, int B, int C, int H, int W, T* out) {
    GEOFUSE_DISPATCH(par::sum_hw_fwd(in, B, C, H, W, out), serial::sum_hw_fwd(in, B, C, H, W, out));
}
template <typename T>
void sum_hw_bwd(const T* gout, int B, int C, int H, int W, T* gin) {
    GEOFUSE_DISPATCH(par::sum_hw_bwd(gout, B, C, H, W, gin), serial::sum_hw_bwd(gout, B, C, H, W, gin));
}

template <typename T>
T cross_entropy_fwd(const T* logits, int B, int K, int H, int W,
                    const int32_t* labels, int ignore_label, T* probs, int64_t* n_valid) {
    if (use_par())
        return par::cross_entropy_fwd(logits, B, K, H, W, labels, ignore_label, probs, n_valid);
    return serial::cross_entropy_fwd(logits, B, K, H, W, labels, ignore_label, probs, n_valid);
}
template <typename T>
void cross_entropy_bwd(const T* probs, int B, int K, int H, int W,
                       const int32_t* labels, int ignore_label,
                       int64_t n_valid, T gscale, T* glogits) {
    GEOFUSE_DISPATCH(par::cross_entropy_bwd(probs, B, K, H, W, labels, ignore_label, n_valid, gscale, glogits),
                     serial::cross_entropy_bwd(probs, B, K, H, W, labels, ignore_label, n_valid, gscale, glogits));
}

template <typename T>
void repeat_batch_fwd(const T* in, int K, int64_t M, int Tt, T* out) {
    GEOFUSE_DISPATCH(par::repeat_batch_fwd(in, K, M, Tt, out), serial::repeat_batch_fwd(in, K, M, Tt, out));
}
template <typename T>
void repeat_batch_bwd(const T* gout, int K, int64_t M, int Tt, T* gin) {
    GEOFUSE_DISPATCH(par::repeat_batch_bwd(gout, K, M, Tt, gin), serial::repeat_batch_bwd(gout, K, M, Tt, gin));
}
template <typename T>
void tile_cells_fwd(const T* in, int C, int G, int K, int H, int W, T* out) {
    GEOFUSE_DISPATCH(par::tile_cells_fwd(in, C, G, K, H, W, out), serial::tile_cells_fwd(in, C, G, K, H, W, out));
}
template <typename T>
void tile_cells_bwd(const T* gout, int C, int G, int K, int H, int W, T* gin) {
    GEOFUSE_DISPATCH(par::tile_cells_bwd(gout, C, G, K, H, W, gin), serial::tile_cells_bwd(gout, C, G, K, H, W, gin));
}

#undef GEOFUSE_DISPATCH

// ---- explicit instantiations ----------------------------------------------

#define GEOFUSE_INST_COMMON(NS, T)                                                                        \
    template void NS conv2d_fwd<T>(const T*, int, int, int, int, const T*, int, int, int, const T*, int, \
                                   int, int, T*);                                                         \
    template void NS conv2d_bwd_input<T>(const T*, int, int, int, int, const T*, int, int, int, int,     \
                                         int, int, T*, int, int);                                        \
    template void NS conv2d_bwd_weight<T>(const T*, int, int, int, int, const T*, int, int, int, int,    \
                                          int, int, T*, int, int);                                       \
    template void NS conv2d_bwd_bias<T>(const T*, int, int, int, int, T*);                                \
    template void NS channel_pool_fwd<T>(const T*, int, int, int, int, PoolMode, T*, int32_t*);          \
    template void NS channel_pool_bwd<T>(const T*, int, int, int, int, PoolMode, const int32_t*, T*);    \
    template void NS maxpool2_fwd<T>(const T*, int, int, int, int, T*, int32_t*);                        \
    template void NS maxpool2_bwd<T>(const T*, int, int, int, int, const int32_t*, T*);                  \
    template void NS upsample2_fwd<T>(const T*, int, int, int, int, T*);                                 \
    template void NS upsample2_bwd<T>(const T*, int, int, int, int, T*);                                 \
    template void NS relu_fwd<T>(const T*, int64_t, T*);                                                 \
    template void NS relu_bwd<T>(const T*, const T*, int64_t, T*);                                       \
    template void NS sigmoid_fwd<T>(const T*, int64_t, T*);                                              \
    template void NS sigmoid_bwd<T>(const T*, const T*, int64_t, T*);                                    \
    template void NS bn2d_stats<T>(const T*, int, int, int, int, T*, T*);                                \
    template void NS bn2d_fwd<T>(const T*, int, int, int, int, const T*, const T*, const T*, const T*,   \
                                 T, T*, T*);                                                             \
    template void NS bn2d_bwd_train<T>(const T*, const T*, const T*, const T*, int, int, int, int, T,    \
                                       T*, T*, T*);                                                      \
    template void NS layer_norm_fwd<T>(const T*, int, int64_t, const T*, const T*, T, T*, T*, T*);       \
    template void NS layer_norm_bwd<T>(const T*, const T*, const T*, const T*, int, int64_t, T*, T*,     \
                                       T*);                                                              \
    template void NS frob_batch_fwd<T>(const T*, int, int, int, int, const T*, int, T*);                 \
    template void NS frob_batch_bwd<T>(const T*, const T*, const T*, int, int, int, int, int, T*, T*);   \
    template void NS sum_hw_fwd<T>(const T*, int, int, int, int, T*);                                    \
    template void NS sum_hw_bwd<T>(const T*, int, int, int, int, T*);                                    \
    template T NS cross_entropy_fwd<T>(const T*, int, int, int, int, const int32_t*, int, T*, int64_t*); \
    template void NS cross_entropy_bwd<T>(const T*, int, int, int, int, const int32_t*, int, int64_t,    \
                                          T, T*);                                                        \
    template void NS repeat_batch_fwd<T>(const T*, int, int64_t, int, T*);                                \
    template void NS repeat_batch_bwd<T>(const T*, int, int64_t, int, T*);                                \
    template void NS tile_cells_fwd<T>(const T*, int, int, int, int, int, T*);                            \
    template void NS tile_cells_bwd<T>(const T*, int, int, int, int, int, T*);

#define GEOFUSE_INST_SERIAL_ONLY(T)                                                                     \
    template void serial::scale_fwd<T>(const T*, int64_t, T, T*);                                       \
    template void serial::scale_bwd<T>(const T*, int64_t, T, T*);                                       \
    template void serial::bn2d_bwd_eval<T>(const T*, const T*, const T*, const T*, int, int, int, int,  \
                                           T, T*, T*, T*);                                              \
    template void serial::softmax_fwd<T>(const T*, int, int, int, const uint8_t*, T*);                  \
    template void serial::softmax_bwd<T>(const T*, const T*, int, int, int, const uint8_t*, T*);        \
    template void serial::weighted_fuse_fwd<T>(const T*, const T*, int, int, int, T*);                  \
    template void serial::weighted_fuse_bwd<T>(const T*, const T*, const T*, int, int, int, T*, T*);    \
    template T serial::uncertainty_fwd<T>(const T*, const T*, const T*, const uint8_t*, int64_t,        \
                                          int64_t*);                                                    \
    template void serial::uncertainty_bwd<T>(const T*, const T*, const T*, const uint8_t*, int64_t,     \
                                             int64_t, T, T*, T*);

GEOFUSE_INST_COMMON(serial::, float)
GEOFUSE_INST_COMMON(serial::, double)
GEOFUSE_INST_COMMON(par::, float)
GEOFUSE_INST_COMMON(par::, double)
GEOFUSE_INST_COMMON(, float)
GEOFUSE_INST_COMMON(, double)
GEOFUSE_INST_SERIAL_ONLY(float)
GEOFUSE_INST_SERIAL_ONLY(double)

#undef GEOFUSE_INST_COMMON
#undef GEOFUSE_INST_SERIAL_ONLY

}  // namespace geofuse::kernels
