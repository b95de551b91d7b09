#include "geofuse/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace geofuse {

namespace {

// Broadcast two shapes with trailing-dim alignment (numpy tile semantics).
Shape broadcast_shape(const Shape& a, const Shape& b) {
    Shape out;
    int na = static_cast<int>(a.size()), nb = static_cast<int>(b.size());
    int n = std::max(na, nb);
    out.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int da = i < na ? a[static_cast<size_t>(na - 1 - i)] : 1;
        int db = i < nb ? b[static_cast<size_t>(nb - 1 - i)] : 1;
        require(da == db || da == 1 || db == 1,
                "incompatible broadcast shapes ", shape_str(a), " vs ", shape_str(b));
        out[static_cast<size_t>(n - 1 - i)] = std::max(da, db);
    }
    return out;
}

// Row-major strides with 0 where the dim is broadcast, right-aligned to n dims.
std::vector<int64_t> broadcast_strides(const Shape& s, int ndim_out, const Shape& out) {
    std::vector<int64_t> st(static_cast<size_t>(ndim_out), 0);
    int ns = static_cast<int>(s.size());
    int64_t stride = 1;
    for (int i = 0; i < ns; ++i) {
        int dim = s[static_cast<size_t>(ns - 1 - i)];
        int odim = out[static_cast<size_t>(ndim_out - 1 - i)];
        st[static_cast<size_t>(ndim_out - 1 - i)] = (dim == 1 && odim != 1) ? 0 : stride;
        stride *= dim;
    }
    return st;
}

}  // namespace

template <typename T>
typename TapeT<T>::Id TapeT<T>::push(Shape shape, std::vector<T> values, bool requires_grad,
                                     std::function<void(TapeT&)> backward) {
    require(!backward_done_, "tape already ran backward; start a new tape for another forward pass");
    Node n;
    n.shape = std::move(shape);
    n.v = std::move(values);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
std::vector<T>& TapeT<T>::grad_buf(Id id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.g.empty()) n.g.assign(n.v.size(), T(0));
    return n.g;
}

template <typename T>
TensorT<T> TapeT<T>::grad_tensor(Id id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    require(!n.g.empty(), "node has no gradient (backward not run or not reached)");
    return TensorT<T>(n.shape, n.g);
}

template <typename T>
void TapeT<T>::finite_check(Id id, const char* op) {
    if (!check_finite_) return;
    for (T x : nodes_[static_cast<size_t>(id)].v)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericalError(msg("non-finite value produced by op '", op, "'"));
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::input(const TensorT<T>& t, bool requires_grad) {
    return push(t.shape, t.v, requires_grad);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::input(Shape shape, std::vector<T> values, bool requires_grad) {
    require(static_cast<int64_t>(values.size()) == numel(shape), "input value count mismatch");
    return push(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::param(ParamT<T>& p) {
    Id id = push(p.value.shape, p.value.v, true);
    bindings_.emplace_back(&p, id);
    return id;
}

template <typename T>
void TapeT<T>::backward(Id root) {
    require(!backward_done_, "tape supports exactly one backward pass per forward pass");
    require(numel(shape(root)) == 1, "backward root must be scalar, got ", shape_str(shape(root)));
    grad_buf(root)[0] = T(1);
    for (Id i = root; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.backward && !n.g.empty()) n.backward(*this);
    }
    for (auto& [p, id] : bindings_) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.g.empty()) continue;
        for (size_t i = 0; i < n.g.size(); ++i) p->grad.v[i] += n.g[i];
    }
    backward_done_ = true;
}

// ---- ops -------------------------------------------------------------------

template <typename T>
typename TapeT<T>::Id TapeT<T>::conv2d(Id x, Id w, Id bias, int stride, Padding pad) {
    const Shape& xs = shape(x);
    const Shape& ws = shape(w);
    require(xs.size() == 4, "conv2d input must be 4-d, got ", shape_str(xs));
    require(ws.size() == 4, "conv2d weight must be 4-d, got ", shape_str(ws));
    int B = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
    int Co = ws[0], Ciw = ws[1], kh = ws[2], kw = ws[3];
    require(kh % 2 == 1 && kw % 2 == 1, "conv2d kernel dims must be odd, got ", kh, "x", kw);
    require(stride >= 1, "conv2d stride must be >= 1, got ", stride);
    require(Ciw == Ci, "conv2d channel mismatch: input has ", Ci, " channels, weight expects ", Ciw);
    if (bias >= 0)
        require(shape(bias) == Shape{Co}, "conv2d bias shape ", shape_str(shape(bias)),
                " does not match ", Co, " output channels");
    int ph = pad == Padding::same ? (kh - 1) / 2 : 0;
    int pw = pad == Padding::same ? (kw - 1) / 2 : 0;
    int Ho = kernels::conv_out_dim(H, kh, ph, stride);
    int Wo = kernels::conv_out_dim(W, kw, pw, stride);
    require(Ho >= 1 && Wo >= 1, "conv2d output would be empty for input ", shape_str(xs),
            " kernel ", kh, "x", kw, " stride ", stride);

    std::vector<T> out(static_cast<size_t>(static_cast<int64_t>(B) * Co * Ho * Wo));
    kernels::conv2d_fwd(val(x).data(), B, Ci, H, W, val(w).data(), Co, kh, kw,
                        bias >= 0 ? val(bias).data() : nullptr, stride, ph, pw, out.data());
    bool rg = nodes_[static_cast<size_t>(x)].requires_grad ||
              nodes_[static_cast<size_t>(w)].requires_grad ||
              (bias >= 0 && nodes_[static_cast<size_t>(bias)].requires_grad);
    Id id = push({B, Co, Ho, Wo}, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        const std::vector<T>& gout = t.nodes_[static_cast<size_t>(id)].g;
        if (t.nodes_[static_cast<size_t>(x)].requires_grad)
            kernels::conv2d_bwd_input(t.val(w).data(), Co, Ci, kh, kw, gout.data(), B, Ho, Wo,
                                      stride, ph, pw, t.grad_buf(x).data(), H, W);
        if (t.nodes_[static_cast<size_t>(w)].requires_grad)
            kernels::conv2d_bwd_weight(t.val(x).data(), B, Ci, H, W, gout.data(), Co, Ho, Wo,
                                       stride, ph, pw, t.grad_buf(w).data(), kh, kw);
        if (bias >= 0 && t.nodes_[static_cast<size_t>(bias)].requires_grad)
            kernels::conv2d_bwd_bias(gout.data(), B, Co, Ho, Wo, t.grad_buf(bias).data());
    };
    finite_check(id, "conv2d");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::channel_pool(Id x, kernels::PoolMode mode) {
    const Shape& xs = shape(x);
    require(xs.size() == 4, "channel_pool input must be 4-d, got ", shape_str(xs));
    int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    require(C >= 1, "channel_pool: empty channel axis");
    std::vector<T> out(static_cast<size_t>(static_cast<int64_t>(B) * H * W));
    std::vector<int32_t> argmax;
    if (mode == kernels::PoolMode::max) argmax.resize(out.size());
    kernels::channel_pool_fwd(val(x).data(), B, C, H, W, mode, out.data(),
                              argmax.empty() ? nullptr : argmax.data());
    bool rg = nodes_[static_cast<size_t>(x)].requires_grad;
    Id id = push({B, 1, H, W}, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward =
        [=, this, arg = std::move(argmax)](TapeT& t) {
            if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
            kernels::channel_pool_bwd(t.nodes_[static_cast<size_t>(id)].g.data(), B, C, H, W, mode,
                                      arg.empty() ? nullptr : arg.data(), t.grad_buf(x).data());
        };
    finite_check(id, "channel_pool");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::frobenius_reduce(Id feat, Id attn) {
    const Shape& fs = shape(feat);
    const Shape& as = shape(attn);
    require(fs.size() == 3, "frobenius_reduce feature must be [C,H,W], got ", shape_str(fs));
    require(as.size() == 2, "frobenius_reduce attention must be [H,W], got ", shape_str(as));
    require(fs[1] == as[0] && fs[2] == as[1], "frobenius_reduce spatial mismatch: feature ",
            shape_str(fs), " vs attention ", shape_str(as));
    int C = fs[0], H = fs[1], W = fs[2];
    std::vector<T> out(static_cast<size_t>(C));
    kernels::frob_batch_fwd(val(feat).data(), 1, C, H, W, val(attn).data(), 1, out.data());
    bool rg = nodes_[static_cast<size_t>(feat)].requires_grad ||
              nodes_[static_cast<size_t>(attn)].requires_grad;
    Id id = push({C}, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        const std::vector<T>& gout = t.nodes_[static_cast<size_t>(id)].g;
        std::vector<T> dummyF, dummyP;
        T* gF = nullptr;
        T* gP = nullptr;
        if (t.nodes_[static_cast<size_t>(feat)].requires_grad) gF = t.grad_buf(feat).data();
        if (t.nodes_[static_cast<size_t>(attn)].requires_grad) gP = t.grad_buf(attn).data();
        if (!gF) {
            dummyF.assign(static_cast<size_t>(C) * H * W, T(0));
            gF = dummyF.data();
        }
        if (!gP) {
            dummyP.assign(static_cast<size_t>(H) * W, T(0));
            gP = dummyP.data();
        }
        kernels::frob_batch_bwd(t.val(feat).data(), t.val(attn).data(), gout.data(), 1, C, H, W, 1,
                                gF, gP);
    };
    finite_check(id, "frobenius_reduce");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::softmax(Id x, int axis, const std::vector<uint8_t>* valid) {
    const Shape& xs = shape(x);
    require(axis >= 0 && axis < static_cast<int>(xs.size()), "softmax axis ", axis,
            " out of range for ", shape_str(xs));
    int n = xs[static_cast<size_t>(axis)];
    require(n >= 1, "softmax over empty axis");
    std::vector<uint8_t> mask;
    if (valid) {
        require(static_cast<int>(valid->size()) == n, "softmax mask length ", valid->size(),
                " does not match axis length ", n);
        mask = *valid;
        bool any = false;
        for (uint8_t m : mask) any = any || m;
        require(any, "softmax: all entries masked, no available panoramas");
    }
    int outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= xs[static_cast<size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(xs.size()); ++i) inner *= xs[static_cast<size_t>(i)];
    std::vector<T> out(val(x).size());
    kernels::serial::softmax_fwd(val(x).data(), outer, n, inner,
                                 mask.empty() ? nullptr : mask.data(), out.data());
    bool rg = nodes_[static_cast<size_t>(x)].requires_grad;
    Id id = push(xs, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward = [=, this, m = std::move(mask)](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        kernels::serial::softmax_bwd(t.val(id).data(), t.nodes_[static_cast<size_t>(id)].g.data(),
                                     outer, n, inner, m.empty() ? nullptr : m.data(),
                                     t.grad_buf(x).data());
    };
    finite_check(id, "softmax");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::batchnorm2d(Id x, Id gamma, Id beta, BnRunningT<T>& running,
                                            bool train, T momentum, T eps) {
    const Shape& xs = shape(x);
    require(xs.size() == 4, "batchnorm2d input must be 4-d, got ", shape_str(xs));
    int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    require(shape(gamma) == Shape{C} && shape(beta) == Shape{C},
            "batchnorm2d affine params must be [", C, "]");
    require(static_cast<int>(running.mean.numel()) == C, "batchnorm2d running stats have ",
            running.mean.numel(), " channels, input has ", C);
    int64_t N = static_cast<int64_t>(B) * H * W;
    std::vector<T> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
    if (train) {
        require(N >= 2, "batchnorm2d train mode needs at least 2 elements per channel, got ", N,
                " (variance undefined)");
        kernels::bn2d_stats(val(x).data(), B, C, H, W, mean.data(), var.data());
        // momentum update of running stats, unbiased variance
        double unb = static_cast<double>(N) / static_cast<double>(N - 1);
        for (int c = 0; c < C; ++c) {
            running.mean.v[static_cast<size_t>(c)] = static_cast<T>(
                (1.0 - static_cast<double>(momentum)) * static_cast<double>(running.mean.v[static_cast<size_t>(c)]) +
                static_cast<double>(momentum) * static_cast<double>(mean[static_cast<size_t>(c)]));
            running.var.v[static_cast<size_t>(c)] = static_cast<T>(
                (1.0 - static_cast<double>(momentum)) * static_cast<double>(running.var.v[static_cast<size_t>(c)]) +
                static_cast<double>(momentum) * static_cast<double>(var[static_cast<size_t>(c)]) * unb);
        }
    } else {
        mean = running.mean.v;
        var = running.var.v;
    }
    std::vector<T> out(val(x).size());
    std::vector<T> xhat(val(x).size());
    kernels::bn2d_fwd(val(x).data(), B, C, H, W, mean.data(), var.data(), val(gamma).data(),
                      val(beta).data(), eps, out.data(), xhat.data());
    bool rg = nodes_[static_cast<size_t>(x)].requires_grad ||
              nodes_[static_cast<size_t>(gamma)].requires_grad ||
              nodes_[static_cast<size_t>(beta)].requires_grad;
    Id id = push(xs, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward =
        [=, this, xh = std::move(xhat), vr = std::move(var)](TapeT& t) {
            const std::vector<T>& gout = t.nodes_[static_cast<size_t>(id)].g;
            std::vector<T>& gx = t.grad_buf(x);
            std::vector<T>& gg = t.grad_buf(gamma);
            std::vector<T>& gb = t.grad_buf(beta);
            if (train)
                kernels::bn2d_bwd_train(xh.data(), vr.data(), t.val(gamma).data(), gout.data(), B, C,
                                        H, W, eps, gx.data(), gg.data(), gb.data());
            else
                kernels::serial::bn2d_bwd_eval(xh.data(), vr.data(), t.val(gamma).data(), gout.data(),
                                               B, C, H, W, eps, gx.data(), gg.data(), gb.data());
        };
    finite_check(id, "batchnorm2d");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::layer_norm(Id x, Id gamma, Id beta, T eps) {
    const Shape& xs = shape(x);
    require(xs.size() >= 2, "layer_norm input must have a batch axis, got ", shape_str(xs));
    int B = xs[0];
    int64_t M = numel(xs) / B;
    require(numel(shape(gamma)) == M && numel(shape(beta)) == M,
            "layer_norm affine params must cover all non-batch axes (", M, " elements)");
    std::vector<T> out(val(x).size()), xhat(val(x).size()), invstd(static_cast<size_t>(B));
    kernels::layer_norm_fwd(val(x).data(), B, M, val(gamma).data(), val(beta).data(), eps,
                            out.data(), xhat.data(), invstd.data());
    bool rg = nodes_[static_cast<size_t>(x)].requires_grad ||
              nodes_[static_cast<size_t>(gamma)].requires_grad ||
              nodes_[static_cast<size_t>(beta)].requires_grad;
    Id id = push(xs, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward =
        [=, this, xh = std::move(xhat), is = std::move(invstd)](TapeT& t) {
            kernels::layer_norm_bwd(xh.data(), is.data(), t.val(gamma).data(),
                                    t.nodes_[static_cast<size_t>(id)].g.data(), B, M,
                                    t.grad_buf(x).data(), t.grad_buf(gamma).data(),
                                    t.grad_buf(beta).data());
        };
    finite_check(id, "layer_norm");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::relu(Id x) {
    std::vector<T> out(val(x).size());
    kernels::relu_fwd(val(x).data(), static_cast<int64_t>(out.size()), out.data());
    Id id = push(shape(x), std::move(out), nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        kernels::relu_bwd(t.val(x).data(), t.nodes_[static_cast<size_t>(id)].g.data(),
                          static_cast<int64_t>(t.val(x).size()), t.grad_buf(x).data());
    };
    finite_check(id, "relu");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::sigmoid(Id x) {
    std::vector<T> out(val(x).size());
    kernels::sigmoid_fwd(val(x).data(), static_cast<int64_t>(out.size()), out.data());
    Id id = push(shape(x), std::move(out), nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        kernels::sigmoid_bwd(t.val(id).data(), t.nodes_[static_cast<size_t>(id)].g.data(),
                             static_cast<int64_t>(t.val(id).size()), t.grad_buf(x).data());
    };
    finite_check(id, "sigmoid");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::add(Id a, Id b) {
    Shape os = broadcast_shape(shape(a), shape(b));
    int nd = static_cast<int>(os.size());
    auto sa = broadcast_strides(shape(a), nd, os);
    auto sb = broadcast_strides(shape(b), nd, os);
    int64_t n = numel(os);
    std::vector<T> out(static_cast<size_t>(n));
    std::vector<int> idx(static_cast<size_t>(nd), 0);
    const std::vector<T>& va = val(a);
    const std::vector<T>& vb = val(b);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)] = va[static_cast<size_t>(ia)] + vb[static_cast<size_t>(ib)];
        for (int d = nd - 1; d >= 0; --d) {
            if (++idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) {
                ia += sa[static_cast<size_t>(d)];
                ib += sb[static_cast<size_t>(d)];
                break;
            }
            idx[static_cast<size_t>(d)] = 0;
            ia -= sa[static_cast<size_t>(d)] * (os[static_cast<size_t>(d)] - 1);
            ib -= sb[static_cast<size_t>(d)] * (os[static_cast<size_t>(d)] - 1);
        }
    }
    bool rg = nodes_[static_cast<size_t>(a)].requires_grad || nodes_[static_cast<size_t>(b)].requires_grad;
    Id id = push(os, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        const std::vector<T>& g = t.nodes_[static_cast<size_t>(id)].g;
        for (int which = 0; which < 2; ++which) {
            Id src = which == 0 ? a : b;
            if (!t.nodes_[static_cast<size_t>(src)].requires_grad) continue;
            const auto& st = which == 0 ? sa : sb;
            std::vector<T>& gs = t.grad_buf(src);
            std::vector<int> ix(static_cast<size_t>(nd), 0);
            int64_t off = 0;
            for (int64_t i = 0; i < n; ++i) {
                gs[static_cast<size_t>(off)] += g[static_cast<size_t>(i)];
                for (int d = nd - 1; d >= 0; --d) {
                    if (++ix[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) {
                        off += st[static_cast<size_t>(d)];
                        break;
                    }
                    ix[static_cast<size_t>(d)] = 0;
                    off -= st[static_cast<size_t>(d)] * (os[static_cast<size_t>(d)] - 1);
                }
            }
        }
    };
    finite_check(id, "add");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::mul(Id a, Id b) {
    Shape os = broadcast_shape(shape(a), shape(b));
    int nd = static_cast<int>(os.size());
    auto sa = broadcast_strides(shape(a), nd, os);
    auto sb = broadcast_strides(shape(b), nd, os);
    int64_t n = numel(os);
    std::vector<T> out(static_cast<size_t>(n));
    {
        const std::vector<T>& va = val(a);
        const std::vector<T>& vb = val(b);
        std::vector<int> idx(static_cast<size_t>(nd), 0);
        int64_t ia = 0, ib = 0;
        for (int64_t i = 0; i < n; ++i) {
            out[static_cast<size_t>(i)] = va[static_cast<size_t>(ia)] * vb[static_cast<size_t>(ib)];
            for (int d = nd - 1; d >= 0; --d) {
                if (++idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) {
                    ia += sa[static_cast<size_t>(d)];
                    ib += sb[static_cast<size_t>(d)];
                    break;
                }
                idx[static_cast<size_t>(d)] = 0;
                ia -= sa[static_cast<size_t>(d)] * (os[static_cast<size_t>(d)] - 1);
                ib -= sb[static_cast<size_t>(d)] * (os[static_cast<size_t>(d)] - 1);
            }
        }
    }
    bool rg = nodes_[static_cast<size_t>(a)].requires_grad || nodes_[static_cast<size_t>(b)].requires_grad;
    Id id = push(os, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        const std::vector<T>& g = t.nodes_[static_cast<size_t>(id)].g;
        for (int which = 0; which < 2; ++which) {
            Id src = which == 0 ? a : b;
            Id other = which == 0 ? b : a;
            if (!t.nodes_[static_cast<size_t>(src)].requires_grad) continue;
            const auto& st = which == 0 ? sa : sb;
            const auto& so = which == 0 ? sb : sa;
            std::vector<T>& gs = t.grad_buf(src);
            const std::vector<T>& vo = t.val(other);
            std::vector<int> ix(static_cast<size_t>(nd), 0);
            int64_t off = 0, ooff = 0;
            for (int64_t i = 0; i < n; ++i) {
                gs[static_cast<size_t>(off)] += g[static_cast<size_t>(i)] * vo[static_cast<size_t>(ooff)];
                for (int d = nd - 1; d >= 0; --d) {
                    if (++ix[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) {
                        off += st[static_cast<size_t>(d)];
                        ooff += so[static_cast<size_t>(d)];
                        break;
                    }
                    ix[static_cast<size_t>(d)] = 0;
                    off -= st[static_cast<size_t>(d)] * (os[static_cast<size_t>(d)] - 1);
                    ooff -= so[static_cast<size_t>(d)] * (os[static_cast<size_t>(d)] - 1);
                }
            }
        }
    };
    finite_check(id, "mul");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::scale(Id x, T c) {
    std::vector<T> out(val(x).size());
    kernels::serial::scale_fwd(val(x).data(), static_cast<int64_t>(out.size()), c, out.data());
    Id id = push(shape(x), std::move(out), nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        kernels::serial::scale_bwd(t.nodes_[static_cast<size_t>(id)].g.data(),
                                   static_cast<int64_t>(t.val(x).size()), c, t.grad_buf(x).data());
    };
    finite_check(id, "scale");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::maxpool2(Id x) {
    const Shape& xs = shape(x);
    require(xs.size() == 4, "maxpool2 input must be 4-d, got ", shape_str(xs));
    int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    require(H % 2 == 0 && W % 2 == 0, "maxpool2 requires even spatial dims, got ", H, "x", W);
    std::vector<T> out(static_cast<size_t>(static_cast<int64_t>(B) * C * (H / 2) * (W / 2)));
    std::vector<int32_t> arg(out.size());
    kernels::maxpool2_fwd(val(x).data(), B, C, H, W, out.data(), arg.data());
    Id id = push({B, C, H / 2, W / 2}, std::move(out), nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this, a = std::move(arg)](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        kernels::maxpool2_bwd(t.nodes_[static_cast<size_t>(id)].g.data(), B, C, H, W, a.data(),
                              t.grad_buf(x).data());
    };
    finite_check(id, "maxpool2");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::upsample_nearest2(Id x) {
    const Shape& xs = shape(x);
    require(xs.size() == 4, "upsample_nearest2 input must be 4-d, got ", shape_str(xs));
    int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    std::vector<T> out(static_cast<size_t>(static_cast<int64_t>(B) * C * H * W * 4));
    kernels::upsample2_fwd(val(x).data(), B, C, H, W, out.data());
    Id id = push({B, C, H * 2, W * 2}, std::move(out), nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        kernels::upsample2_bwd(t.nodes_[static_cast<size_t>(id)].g.data(), B, C, H, W,
                               t.grad_buf(x).data());
    };
    finite_check(id, "upsample_nearest2");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::concat_ch(const std::vector<Id>& xs) {
    require(!xs.empty(), "concat_ch needs at least one input");
    const Shape& s0 = shape(xs[0]);
    require(s0.size() == 4, "concat_ch inputs must be 4-d, got ", shape_str(s0));
    int B = s0[0], H = s0[2], W = s0[3];
    int Cout = 0;
    bool rg = false;
    for (Id x : xs) {
        const Shape& s = shape(x);
        require(s.size() == 4 && s[0] == B && s[2] == H && s[3] == W,
                "concat_ch input ", shape_str(s), " incompatible with ", shape_str(s0));
        Cout += s[1];
        rg = rg || nodes_[static_cast<size_t>(x)].requires_grad;
    }
    int64_t HW = static_cast<int64_t>(H) * W;
    std::vector<T> out(static_cast<size_t>(static_cast<int64_t>(B) * Cout * HW));
    for (int b = 0; b < B; ++b) {
        int coff = 0;
        for (Id x : xs) {
            int Ci = shape(x)[1];
            std::memcpy(out.data() + (static_cast<int64_t>(b) * Cout + coff) * HW,
                        val(x).data() + static_cast<int64_t>(b) * Ci * HW,
                        sizeof(T) * static_cast<size_t>(Ci * HW));
            coff += Ci;
        }
    }
    Id id = push({B, Cout, H, W}, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward = [=, this, inputs = xs](TapeT& t) {
        const std::vector<T>& g = t.nodes_[static_cast<size_t>(id)].g;
        for (int b = 0; b < B; ++b) {
            int coff = 0;
            for (Id x : inputs) {
                int Ci = t.shape(x)[1];
                if (t.nodes_[static_cast<size_t>(x)].requires_grad) {
                    std::vector<T>& gx = t.grad_buf(x);
                    const T* src = g.data() + (static_cast<int64_t>(b) * Cout + coff) * HW;
                    T* dst = gx.data() + static_cast<int64_t>(b) * Ci * HW;
                    for (int64_t i = 0; i < static_cast<int64_t>(Ci) * HW; ++i) dst[i] += src[i];
                }
                coff += Ci;
            }
        }
    };
    finite_check(id, "concat_ch");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::cross_entropy(Id logits, const std::vector<int32_t>& labels,
                                              int ignore_label) {
    const Shape& ls = shape(logits);
    require(ls.size() == 4, "cross_entropy logits must be [B,K,H,W], got ", shape_str(ls));
    int B = ls[0], K = ls[1], H = ls[2], W = ls[3];
    require(static_cast<int64_t>(labels.size()) == static_cast<int64_t>(B) * H * W,
            "cross_entropy label count ", labels.size(), " does not match ", B, "x", H, "x", W);
    for (int32_t lab : labels)
        require(lab == ignore_label || (lab >= 0 && lab < K), "cross_entropy label ", lab,
                " out of range [0,", K, ") and not the ignore label ", ignore_label);
    std::vector<T> probs(val(logits).size());
    int64_t n_valid = 0;
    T loss = kernels::cross_entropy_fwd(val(logits).data(), B, K, H, W, labels.data(), ignore_label,
                                        probs.data(), &n_valid);
    require(n_valid > 0, "cross_entropy: all pixels ignored, empty loss");
    Id id = push({1}, std::vector<T>{loss}, nodes_[static_cast<size_t>(logits)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward =
        [=, this, pb = std::move(probs), lab = labels](TapeT& t) {
            if (!t.nodes_[static_cast<size_t>(logits)].requires_grad) return;
            kernels::cross_entropy_bwd(pb.data(), B, K, H, W, lab.data(), ignore_label, n_valid,
                                       t.nodes_[static_cast<size_t>(id)].g[0],
                                       t.grad_buf(logits).data());
        };
    finite_check(id, "cross_entropy");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::uncertainty_loss(Id mean, Id logvar, const TensorT<T>& target,
                                                 const std::vector<uint8_t>& mask) {
    require(shape(mean) == shape(logvar), "uncertainty_loss mean shape ", shape_str(shape(mean)),
            " != log-variance shape ", shape_str(shape(logvar)));
    int64_t n = numel(shape(mean));
    require(target.numel() == n, "uncertainty_loss target has ", target.numel(),
            " elements, expected ", n);
    require(static_cast<int64_t>(mask.size()) == n, "uncertainty_loss mask has ", mask.size(),
            " elements, expected ", n);
    int64_t n_valid = 0;
    T loss = kernels::serial::uncertainty_fwd(val(mean).data(), val(logvar).data(), target.data(),
                                              mask.data(), n, &n_valid);
    require(n_valid > 0, "uncertainty_loss: empty mask");
    bool rg = nodes_[static_cast<size_t>(mean)].requires_grad ||
              nodes_[static_cast<size_t>(logvar)].requires_grad;
    Id id = push({1}, std::vector<T>{loss}, rg);
    nodes_[static_cast<size_t>(id)].backward =
        [=, this, tg = target.v, mk = mask](TapeT& t) {
            T g = t.nodes_[static_cast<size_t>(id)].g[0];
            kernels::serial::uncertainty_bwd(t.val(mean).data(), t.val(logvar).data(), tg.data(),
                                             mk.data(), n, n_valid, g, t.grad_buf(mean).data(),
                                             t.grad_buf(logvar).data());
        };
    finite_check(id, "uncertainty_loss");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::sum_hw(Id x) {
    const Shape& xs = shape(x);
    require(xs.size() == 4, "sum_hw input must be 4-d, got ", shape_str(xs));
    int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    std::vector<T> out(static_cast<size_t>(static_cast<int64_t>(B) * C));
    kernels::sum_hw_fwd(val(x).data(), B, C, H, W, out.data());
    Id id = push({B, C}, std::move(out), nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        kernels::sum_hw_bwd(t.nodes_[static_cast<size_t>(id)].g.data(), B, C, H, W,
                            t.grad_buf(x).data());
    };
    finite_check(id, "sum_hw");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::reduce_sum_all(Id x) {
    double acc = 0.0;
    for (T v : val(x)) acc += static_cast<double>(v);
    Id id = push({1}, std::vector<T>{static_cast<T>(acc)}, nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        T g = t.nodes_[static_cast<size_t>(id)].g[0];
        std::vector<T>& gx = t.grad_buf(x);
        for (T& v : gx) v += g;
    };
    finite_check(id, "reduce_sum_all");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::slice_pixel(Id x, int r, int c) {
    const Shape& xs = shape(x);
    require(xs.size() == 3, "slice_pixel input must be [C,H,W], got ", shape_str(xs));
    int C = xs[0], H = xs[1], W = xs[2];
    require(r >= 0 && r < H && c >= 0 && c < W, "slice_pixel (", r, ",", c, ") outside ", H, "x", W);
    std::vector<T> out(static_cast<size_t>(C));
    for (int ch = 0; ch < C; ++ch)
        out[static_cast<size_t>(ch)] = val(x)[static_cast<size_t>((static_cast<int64_t>(ch) * H + r) * W + c)];
    Id id = push({C}, std::move(out), nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        const std::vector<T>& g = t.nodes_[static_cast<size_t>(id)].g;
        std::vector<T>& gx = t.grad_buf(x);
        for (int ch = 0; ch < C; ++ch)
            gx[static_cast<size_t>((static_cast<int64_t>(ch) * H + r) * W + c)] += g[static_cast<size_t>(ch)];
    };
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::slice_channel(Id x, int c) {
    const Shape& xs = shape(x);
    require(xs.size() == 4, "slice_channel input must be 4-d, got ", shape_str(xs));
    int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    require(c >= 0 && c < C, "slice_channel index ", c, " outside ", C, " channels");
    int64_t HW = static_cast<int64_t>(H) * W;
    std::vector<T> out(static_cast<size_t>(B * HW));
    for (int b = 0; b < B; ++b)
        std::memcpy(out.data() + static_cast<int64_t>(b) * HW,
                    val(x).data() + (static_cast<int64_t>(b) * C + c) * HW,
                    sizeof(T) * static_cast<size_t>(HW));
    Id id = push({B, 1, H, W}, std::move(out), nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        const std::vector<T>& g = t.nodes_[static_cast<size_t>(id)].g;
        std::vector<T>& gx = t.grad_buf(x);
        for (int b = 0; b < B; ++b) {
            const T* src = g.data() + static_cast<int64_t>(b) * HW;
            T* dst = gx.data() + (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) dst[i] += src[i];
        }
    };
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::tile_hw(Id v, int H, int W) {
    const Shape& vs = shape(v);
    require(vs.size() == 1, "tile_hw input must be a vector, got ", shape_str(vs));
    int N = vs[0];
    int64_t HW = static_cast<int64_t>(H) * W;
    std::vector<T> out(static_cast<size_t>(N * HW));
    for (int nidx = 0; nidx < N; ++nidx)
        std::fill_n(out.data() + static_cast<int64_t>(nidx) * HW, HW, val(v)[static_cast<size_t>(nidx)]);
    Id id = push({N, H, W}, std::move(out), nodes_[static_cast<size_t>(v)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(v)].requires_grad) return;
        const std::vector<T>& g = t.nodes_[static_cast<size_t>(id)].g;
        std::vector<T>& gv = t.grad_buf(v);
        for (int nidx = 0; nidx < N; ++nidx) {
            double acc = 0.0;
            const T* base = g.data() + static_cast<int64_t>(nidx) * HW;
            for (int64_t i = 0; i < HW; ++i) acc += static_cast<double>(base[i]);
            gv[static_cast<size_t>(nidx)] += static_cast<T>(acc);
        }
    };
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::reshape(Id x, Shape s) {
    require(numel(s) == numel(shape(x)), "reshape ", shape_str(shape(x)), " -> ", shape_str(s),
            " changes element count");
    Id id = push(std::move(s), val(x), nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        const std::vector<T>& g = t.nodes_[static_cast<size_t>(id)].g;
        std::vector<T>& gx = t.grad_buf(x);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    };
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::stack_rows(const std::vector<Id>& xs) {
    require(!xs.empty(), "stack_rows needs at least one input");
    const Shape& s0 = shape(xs[0]);
    require(s0.size() == 1, "stack_rows inputs must be vectors, got ", shape_str(s0));
    int C = s0[0];
    bool rg = false;
    for (Id x : xs) {
        require(shape(x) == s0, "stack_rows input ", shape_str(shape(x)), " != ", shape_str(s0));
        rg = rg || nodes_[static_cast<size_t>(x)].requires_grad;
    }
    int n = static_cast<int>(xs.size());
    std::vector<T> out;
    out.reserve(static_cast<size_t>(n) * static_cast<size_t>(C));
    for (Id x : xs) out.insert(out.end(), val(x).begin(), val(x).end());
    Id id = push({n, C}, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward = [=, this, inputs = xs](TapeT& t) {
        const std::vector<T>& g = t.nodes_[static_cast<size_t>(id)].g;
        for (int i = 0; i < n; ++i) {
            Id x = inputs[static_cast<size_t>(i)];
            if (!t.nodes_[static_cast<size_t>(x)].requires_grad) continue;
            std::vector<T>& gx = t.grad_buf(x);
            for (int c = 0; c < C; ++c)
                gx[static_cast<size_t>(c)] += g[static_cast<size_t>(i) * static_cast<size_t>(C) + static_cast<size_t>(c)];
        }
    };
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::repeat_batch(Id x, int times) {
    const Shape& xs = shape(x);
    require(!xs.empty() && times >= 1, "repeat_batch needs a batch axis and times >= 1");
    int K = xs[0];
    int64_t M = numel(xs) / K;
    std::vector<T> out(static_cast<size_t>(static_cast<int64_t>(K) * times * M));
    kernels::repeat_batch_fwd(val(x).data(), K, M, times, out.data());
    Shape os = xs;
    os[0] = K * times;
    Id id = push(std::move(os), std::move(out), nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        kernels::repeat_batch_bwd(t.nodes_[static_cast<size_t>(id)].g.data(), K, M, times,
                                  t.grad_buf(x).data());
    };
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::tile_cells(Id x, int K, int H, int W) {
    const Shape& xs = shape(x);
    require(xs.size() == 3 && xs[1] == xs[2], "tile_cells input must be [C,G,G], got ", shape_str(xs));
    int C = xs[0], G = xs[1];
    std::vector<T> out(static_cast<size_t>(static_cast<int64_t>(K) * G * G * C * H * W));
    kernels::tile_cells_fwd(val(x).data(), C, G, K, H, W, out.data());
    Id id = push({K * G * G, C, H, W}, std::move(out), nodes_[static_cast<size_t>(x)].requires_grad);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        if (!t.nodes_[static_cast<size_t>(x)].requires_grad) return;
        kernels::tile_cells_bwd(t.nodes_[static_cast<size_t>(id)].g.data(), C, G, K, H, W,
                                t.grad_buf(x).data());
    };
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::frob_reduce_batch(Id feats, Id attn_batch) {
    const Shape& fs = shape(feats);
    const Shape& ps = shape(attn_batch);
    require(fs.size() == 4, "frob_reduce_batch features must be [K,C,H,W], got ", shape_str(fs));
    require(ps.size() == 4 && ps[1] == 1, "frob_reduce_batch attention must be [K*T,1,H,W], got ",
            shape_str(ps));
    int K = fs[0], C = fs[1], H = fs[2], W = fs[3];
    require(ps[2] == H && ps[3] == W, "frob_reduce_batch spatial mismatch: ", shape_str(fs), " vs ",
            shape_str(ps));
    require(ps[0] % K == 0, "frob_reduce_batch attention batch ", ps[0], " not a multiple of ", K);
    int Tt = ps[0] / K;
    std::vector<T> out(static_cast<size_t>(static_cast<int64_t>(K) * Tt * C));
    kernels::frob_batch_fwd(val(feats).data(), K, C, H, W, val(attn_batch).data(), Tt, out.data());
    bool rg = nodes_[static_cast<size_t>(feats)].requires_grad ||
              nodes_[static_cast<size_t>(attn_batch)].requires_grad;
    Id id = push({K * Tt, C}, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        const std::vector<T>& g = t.nodes_[static_cast<size_t>(id)].g;
        std::vector<T> dummyF, dummyP;
        T* gF = nullptr;
        T* gP = nullptr;
        if (t.nodes_[static_cast<size_t>(feats)].requires_grad) gF = t.grad_buf(feats).data();
        if (t.nodes_[static_cast<size_t>(attn_batch)].requires_grad) gP = t.grad_buf(attn_batch).data();
        if (!gF) {
            dummyF.assign(t.val(feats).size(), T(0));
            gF = dummyF.data();
        }
        if (!gP) {
            dummyP.assign(t.val(attn_batch).size(), T(0));
            gP = dummyP.data();
        }
        kernels::frob_batch_bwd(t.val(feats).data(), t.val(attn_batch).data(), g.data(), K, C, H, W,
                                Tt, gF, gP);
    };
    finite_check(id, "frob_reduce_batch");
    return id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::weighted_fuse(Id kmat, Id weights, int G) {
    const Shape& ks = shape(kmat);
    const Shape& ws = shape(weights);
    require(ks.size() == 2, "weighted_fuse kmat must be [K*T,C], got ", shape_str(ks));
    require(ws.size() == 2, "weighted_fuse weights must be [K,T], got ", shape_str(ws));
    int K = ws[0], Tt = ws[1], C = ks[1];
    require(ks[0] == K * Tt, "weighted_fuse batch mismatch: kmat rows ", ks[0], " vs K*T = ", K * Tt);
    require(Tt == G * G, "weighted_fuse cell count ", Tt, " != G*G = ", G * G);
    std::vector<T> tc(static_cast<size_t>(static_cast<int64_t>(Tt) * C));
    kernels::serial::weighted_fuse_fwd(val(kmat).data(), val(weights).data(), K, Tt, C, tc.data());
    // transpose [T,C] -> [C,G,G]
    std::vector<T> out(tc.size());
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < Tt; ++t)
            out[static_cast<size_t>(static_cast<int64_t>(c) * Tt + t)] =
                tc[static_cast<size_t>(static_cast<int64_t>(t) * C + c)];
    bool rg = nodes_[static_cast<size_t>(kmat)].requires_grad ||
              nodes_[static_cast<size_t>(weights)].requires_grad;
    Id id = push({C, G, G}, std::move(out), rg);
    nodes_[static_cast<size_t>(id)].backward = [=, this](TapeT& t) {
        const std::vector<T>& g = t.nodes_[static_cast<size_t>(id)].g;
        std::vector<T> gtc(g.size());
        for (int c = 0; c < C; ++c)
            for (int tt = 0; tt < Tt; ++tt)
                gtc[static_cast<size_t>(static_cast<int64_t>(tt) * C + c)] =
                    g[static_cast<size_t>(static_cast<int64_t>(c) * Tt + tt)];
        std::vector<T> dummyK, dummyW;
        T* gK = nullptr;
        T* gW = nullptr;
        if (t.nodes_[static_cast<size_t>(kmat)].requires_grad) gK = t.grad_buf(kmat).data();
        if (t.nodes_[static_cast<size_t>(weights)].requires_grad) gW = t.grad_buf(weights).data();
        if (!gK) {
            dummyK.assign(t.val(kmat).size(), T(0));
            gK = dummyK.data();
        }
        if (!gW) {
            dummyW.assign(t.val(weights).size(), T(0));
            gW = dummyW.data();
        }
        kernels::serial::weighted_fuse_bwd(t.val(kmat).data(), t.val(weights).data(), gtc.data(), K,
                                           Tt, C, gK, gW);
    };
    finite_check(id, "weighted_fuse");
    return id;
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace geofuse
