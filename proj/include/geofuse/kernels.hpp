#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace geofuse::kernels {

// Global kernel execution mode. The serial implementations are the reference:
// they spell out the textbook loops. The parallel ones restructure the loops
// for OpenMP and vectorization but keep the per-element accumulation order
// identical, so the two produce bit-identical results (asserted in tests).
enum class Exec { serial, parallel };

Exec& exec_mode();
void set_threads(int n);
int thread_count();

enum class PoolMode { max, avg };

inline int conv_out_dim(int in, int k, int pad, int stride) {
    return (in + 2 * pad - k) / stride + 1;
}

// ---- serial reference kernels -------------------------------------------

namespace serial {

template <typename T>
void conv2d_fwd(const T* in, int B, int Ci, int H, int W,
                const T* w, int Co, int kh, int kw,
                const T* bias, int stride, int ph, int pw, T* out);

template <typename T>
void conv2d_bwd_input(const T* w, int Co, int Ci, int kh, int kw,
                      const T* gout, int B, int Ho, int Wo,
                      int stride, int ph, int pw,
                      T* gin, int H, int W);

template <typename T>
void conv2d_bwd_weight(const T* in, int B, int Ci, int H, int W,
                       const T* gout, int Co, int Ho, int Wo,
                       int stride, int ph, int pw,
                       T* gw, int kh, int kw);

template <typename T>
void conv2d_bwd_bias(const T* gout, int B, int Co, int Ho, int Wo, T* gb);

template <typename T>
void channel_pool_fwd(const T* in, int B, int C, int H, int W,
                      PoolMode mode, T* out, int32_t* argmax);

template <typename T>
void channel_pool_bwd(const T* gout, int B, int C, int H, int W,
                      PoolMode mode, const int32_t* argmax, T* gin);

template <typename T>
void maxpool2_fwd(const T* in, int B, int C, int H, int W, T* out, int32_t* arg);

template <typename T>
void maxpool2_bwd(const T* gout, int B, int C, int H, int W, const int32_t* arg, T* gin);

template <typename T>
void upsample2_fwd(const T* in, int B, int C, int H, int W, T* out);

template <typename T>
void upsample2_bwd(const T* gout, int B, int C, int H, int W, T* gin);

template <typename T>
void relu_fwd(const T* in, int64_t n, T* out);
template <typename T>
void relu_bwd(const T* in, const T* gout, int64_t n, T* gin);
template <typename T>
void sigmoid_fwd(const T* in, int64_t n, T* out);
template <typename T>
void sigmoid_bwd(const T* y, const T* gout, int64_t n, T* gin);
template <typename T>
void scale_fwd(const T* in, int64_t n, T c, T* out);
template <typename T>
void scale_bwd(const T* gout, int64_t n, T c, T* gin);

// mean/biased variance per channel over B*H*W
template <typename T>
void bn2d_stats(const T* in, int B, int C, int H, int W, T* mean, T* var);

template <typename T>
void bn2d_fwd(const T* in, int B, int C, int H, int W,
              const T* mean, const T* var, const T* gamma, const T* beta,
              T eps, T* out, T* xhat);

template <typename T>
void bn2d_bwd_train(const T* xhat, const T* var, const T* gamma,
                    const T* gout, int B, int C, int H, int W, T eps,
                    T* gin, T* ggamma, T* gbeta);

template <typename T>
void bn2d_bwd_eval(const T* xhat, const T* var, const T* gamma,
                   const T* gout, int B, int C, int H, int W, T eps,
                   T* gin, T* ggamma, T* gbeta);

// normalize each batch row over all remaining elements
template <typename T>
void layer_norm_fwd(const T* in, int B, int64_t M, const T* gamma, const T* beta,
                    T eps, T* out, T* xhat, T* invstd);

template <typename T>
void layer_norm_bwd(const T* xhat, const T* invstd, const T* gamma,
                    const T* gout, int B, int64_t M, T* gin, T* ggamma, T* gbeta);

template <typename T>
void softmax_fwd(const T* in, int outer, int n, int inner,
                 const uint8_t* valid, T* out);

template <typename T>
void softmax_bwd(const T* y, const T* gout, int outer, int n, int inner,
                 const uint8_t* valid, T* gin);

template <typename T>
void frob_batch_fwd(const T* F, int K, int C, int H, int W,
                    const T* P, int Tt, T* out);

template <typename T>
void frob_batch_bwd(const T* F, const T* P, const T* gout,
                    int K, int C, int H, int W, int Tt, T* gF, T* gP);

template <typename T>
void weighted_fuse_fwd(const T* Kmat, const T* Wgt, int K, int Tt, int C, T* out);

template <typename T>
void weighted_fuse_bwd(const T* Kmat, const T* Wgt, const T* gout,
                       int K, int Tt, int C, T* gK, T* gW);

template <typename T>
void sum_hw_fwd(const T* in, int B, int C, int H, int W, T* out);
template <typename T>
void sum_hw_bwd(const T* gout, int B, int C, int H, int W, T* gin);

template <typename T>
T cross_entropy_fwd(const T* logits, int B, int K, int H, int W,
                    const int32_t* labels, int ignore_label,
                    T* probs, int64_t* n_valid);

template <typename T>
void cross_entropy_bwd(const T* probs, int B, int K, int H, int W,
                       const int32_t* labels, int ignore_label,
                       int64_t n_valid, T gscale, T* glogits);

template <typename T>
T uncertainty_fwd(const T* mean, const T* logvar, const T* target,
                  const uint8_t* mask, int64_t n, int64_t* n_valid);

template <typename T>
void uncertainty_bwd(const T* mean, const T* logvar, const T* target,
                     const uint8_t* mask, int64_t n, int64_t n_valid,
                     T gscale, T* gmean, T* glogvar);

template <typename T>
void repeat_batch_fwd(const T* in, int K, int64_t M, int Tt, T* out);
template <typename T>
void repeat_batch_bwd(const T* gout, int K, int64_t M, int Tt, T* gin);

template <typename T>
void tile_cells_fwd(const T* in, int C, int G, int K, int H, int W, T* out);
template <typename T>
void tile_cells_bwd(const T* gout, int C, int G, int K, int H, int W, T* gin);

}  // namespace serial

// ---- OpenMP kernels -------------------------------------------------------

namespace par {

template <typename T>
void conv2d_fwd(const T* in, int B, int Ci, int H, int W,
                const T* w, int Co, int kh, int kw,
                const T* bias, int stride, int ph, int pw, T* out);

template <typename T>
void conv2d_bwd_input(const T* w, int Co, int Ci, int kh, int kw,
                      const T* gout, int B, int Ho, int Wo,
                      int stride, int ph, int pw,
                      T* gin, int H, int W);

template <typename T>
void conv2d_bwd_weight(const T* in, int B, int Ci, int H, int W,
                       const T* gout, int Co, int Ho, int Wo,
                       int stride, int ph, int pw,
                       T* gw, int kh, int kw);

template <typename T>
void conv2d_bwd_bias(const T* gout, int B, int Co, int Ho, int Wo, T* gb);

template <typename T>
void channel_pool_fwd(const T* in, int B, int C, int H, int W,
                      PoolMode mode, T* out, int32_t* argmax);

template <typename T>
void channel_pool_bwd(const T* gout, int B, int C, int H, int W,
                      PoolMode mode, const int32_t* argmax, T* gin);

template <typename T>
void maxpool2_fwd(const T* in, int B, int C, int H, int W, T* out, int32_t* arg);

template <typename T>
void maxpool2_bwd(const T* gout, int B, int C, int H, int W, const int32_t* arg, T* gin);

template <typename T>
void upsample2_fwd(const T* in, int B, int C, int H, int W, T* out);

template <typename T>
void upsample2_bwd(const T* gout, int B, int C, int H, int W, T* gin);

template <typename T>
void relu_fwd(const T* in, int64_t n, T* out);
template <typename T>
void relu_bwd(const T* in, const T* gout, int64_t n, T* gin);
template <typename T>
void sigmoid_fwd(const T* in, int64_t n, T* out);
template <typename T>
void sigmoid_bwd(const T* y, const T* gout, int64_t n, T* gin);

template <typename T>
void bn2d_stats(const T* in, int B, int C, int H, int W, T* mean, T* var);

template <typename T>
void bn2d_fwd(const T* in, int B, int C, int H, int W,
              const T* mean, const T* var, const T* gamma, const T* beta,
              T eps, T* out, T* xhat);

template <typename T>
void bn2d_bwd_train(const T* xhat, const T* var, const T* gamma,
                    const T* gout, int B, int C, int H, int W, T eps,
                    T* gin, T* ggamma, T* gbeta);

template <typename T>
void layer_norm_fwd(const T* in, int B, int64_t M, const T* gamma, const T* beta,
                    T eps, T* out, T* xhat, T* invstd);

template <typename T>
void layer_norm_bwd(const T* xhat, const T* invstd, const T* gamma,
                    const T* gout, int B, int64_t M, T* gin, T* ggamma, T* gbeta);

template <typename T>
void frob_batch_fwd(const T* F, int K, int C, int H, int W,
                    const T* P, int Tt, T* out);

template <typename T>
void frob_batch_bwd(const T* F, const T* P, const T* gout,
                    int K, int C, int H, int W, int Tt, T* gF, T* gP);

template <typename T>
void sum_hw_fwd(const T* in, int B, int C, int H, int W, T* out);
template <typename T>
void sum_hw_bwd(const T* gout, int B, int C, int H, int W, T* gin);

template <typename T>
T cross_entropy_fwd(const T* logits, int B, int K, int H, int W,
                    const int32_t* labels, int ignore_label,
                    T* probs, int64_t* n_valid);

template <typename T>
void cross_entropy_bwd(const T* probs, int B, int K, int H, int W,
                       const int32_t* labels, int ignore_label,
                       int64_t n_valid, T gscale, T* glogits);

template <typename T>
void repeat_batch_fwd(const T* in, int K, int64_t M, int Tt, T* out);
template <typename T>
void repeat_batch_bwd(const T* gout, int K, int64_t M, int Tt, T* gin);

template <typename T>
void tile_cells_fwd(const T* in, int C, int G, int K, int H, int W, T* out);
template <typename T>
void tile_cells_bwd(const T* gout, int C, int G, int K, int H, int W, T* gin);

}  // namespace par

// ---- dispatchers ----------------------------------------------------------
// Ops call these; the mode decides which implementation runs. Kernels with
// no parallel variant (cheap bookkeeping ones) always run the serial body.

template <typename T>
void conv2d_fwd(const T* in, int B, int Ci, int H, int W,
                const T* w, int Co, int kh, int kw,
                const T* bias, int stride, int ph, int pw, T* out);
template <typename T>
void conv2d_bwd_input(const T* w, int Co, int Ci, int kh, int kw,
                      const T* gout, int B, int Ho, int Wo,
                      int stride, int ph, int pw, T* gin, int H, int W);
template <typename T>
void conv2d_bwd_weight(const T* in, int B, int Ci, int H, int W,
                       const T* gout, int Co, int Ho, int Wo,
                       int stride, int ph, int pw, T* gw, int kh, int kw);
template <typename T>
void conv2d_bwd_bias(const T* gout, int B, int Co, int Ho, int Wo, T* gb);
template <typename T>
void channel_pool_fwd(const T* in, int B, int C, int H, int W,
                      PoolMode mode, T* out, int32_t* argmax);
template <typename T>
void channel_pool_bwd(const T* gout, int B, int C, int H, int W,
                      PoolMode mode, const int32_t* argmax, T* gin);
template <typename T>
void maxpool2_fwd(const T* in, int B, int C, int H, int W, T* out, int32_t* arg);
template <typename T>
void maxpool2_bwd(const T* gout, int B, int C, int H, int W, const int32_t* arg, T* gin);
template <typename T>
void upsample2_fwd(const T* in, int B, int C, int H, int W, T* out);
template <typename T>
void upsample2_bwd(const T* gout, int B, int C, int H, int W, T* gin);
template <typename T>
void relu_fwd(const T* in, int64_t n, T* out);
template <typename T>
void relu_bwd(const T* in, const T* gout, int64_t n, T* gin);
template <typename T>
void sigmoid_fwd(const T* in, int64_t n, T* out);
template <typename T>
void sigmoid_bwd(const T* y, const T* gout, int64_t n, T* gin);
template <typename T>
void bn2d_stats(const T* in, int B, int C, int H, int W, T* mean, T* var);
template <typename T>
void bn2d_fwd(const T* in, int B, int C, int H, int W,
              const T* mean, const T* var, const T* gamma, const T* beta,
              T eps, T* out, T* xhat);
template <typename T>
void bn2d_bwd_train(const T* xhat, const T* var, const T* gamma,
                    const T* gout, int B, int C, int H, int W, T eps,
                    T* gin, T* ggamma, T* gbeta);
template <typename T>
void layer_norm_fwd(const T* in, int B, int64_t M, const T* gamma, const T* beta,
                    T eps, T* out, T* xhat, T* invstd);
template <typename T>
void layer_norm_bwd(const T* xhat, const T* invstd, const T* gamma,
                    const T* gout, int B, int64_t M, T* gin, T* ggamma, T* gbeta);
template <typename T>
void frob_batch_fwd(const T* F, int K, int C, int H, int W,
                    const T* P, int Tt, T* out);
template <typename T>
void frob_batch_bwd(const T* F, const T* P, const T* gout,
                    int K, int C, int H, int W, int Tt, T* gF, T* gP);
template <typename T>
void sum_hw_fwd(const T* in, int B, int C, int H, int W, T* out);
template <typename T>
void sum_hw_bwd(const T* gout, int B, int C, int H, int W, T* gin);
template <typename T>
T cross_entropy_fwd(const T* logits, int B, int K, int H, int W,
                    const int32_t* labels, int ignore_label,
                    T* probs, int64_t* n_valid);
template <typename T>
void cross_entropy_bwd(const T* probs, int B, int K, int H, int W,
                       const int32_t* labels, int ignore_label,
                       int64_t n_valid, T gscale, T* glogits);
template <typename T>
void repeat_batch_fwd(const T* in, int K, int64_t M, int Tt, T* out);
template <typename T>
void repeat_batch_bwd(const T* gout, int K, int64_t M, int Tt, T* gin);
template <typename T>
void tile_cells_fwd(const T* in, int C, int G, int K, int H, int W, T* out);
template <typename T>
void tile_cells_bwd(const T* gout, int C, int G, int K, int H, int W, T* gin);

}  // namespace geofuse::kernels
