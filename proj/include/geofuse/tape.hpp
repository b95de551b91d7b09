#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "geofuse/kernels.hpp"
#include "geofuse/tensor.hpp"

namespace geofuse {

enum class Padding { same, valid };

// Running statistics for one batchnorm layer. Owned by the layer, updated by
// the op in train mode, read in eval mode.
template <typename T>
struct BnRunningT {
    TensorT<T> mean;
    TensorT<T> var;

    explicit BnRunningT(int channels = 0)
        : mean(Shape{channels}, T(0)), var(Shape{channels}, T(1)) {}
};

using BnRunning = BnRunningT<float>;

// Reverse-mode tape. Forward ops append nodes in topological order; backward
// walks the record once in reverse, accumulating gradients additively at
// fan-out. A tape is single-threaded by contract; parallelism lives inside
// the kernels and across disjoint tapes.
template <typename T>
class TapeT {
  public:
    using Id = int;

    struct Node {
        Shape shape;
        std::vector<T> v;
        std::vector<T> g;  // allocated on first touch during backward
        std::function<void(TapeT&)> backward;
        bool requires_grad = false;
    };

    TapeT() = default;
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    // leaf holding a copy of t
    Id input(const TensorT<T>& t, bool requires_grad = false);
    Id input(Shape shape, std::vector<T> values, bool requires_grad = false);
    // leaf bound to a learnable parameter; after backward() the node gradient
    // is added into p.grad
    Id param(ParamT<T>& p);

    const Shape& shape(Id id) const { return nodes_[static_cast<size_t>(id)].shape; }
    const std::vector<T>& val(Id id) const { return nodes_[static_cast<size_t>(id)].v; }
    const std::vector<T>& grad(Id id) const { return nodes_[static_cast<size_t>(id)].g; }
    bool has_grad(Id id) const { return !nodes_[static_cast<size_t>(id)].g.empty(); }
    TensorT<T> tensor(Id id) const { return TensorT<T>(shape(id), val(id)); }
    TensorT<T> grad_tensor(Id id) const;
    size_t size() const { return nodes_.size(); }

    // One backward pass per tape; root must be scalar.
    void backward(Id root);

    void set_check_finite(bool on) { check_finite_ = on; }

    // ---- differentiable ops ----
    Id conv2d(Id x, Id w, Id bias, int stride, Padding pad);  // bias = -1 for none
    Id channel_pool(Id x, kernels::PoolMode mode);
    Id frobenius_reduce(Id feat, Id attn);
    Id softmax(Id x, int axis, const std::vector<uint8_t>* valid = nullptr);
    Id batchnorm2d(Id x, Id gamma, Id beta, BnRunningT<T>& running, bool train,
                   T momentum = T(0.1), T eps = T(1e-5));
    Id layer_norm(Id x, Id gamma, Id beta, T eps = T(1e-5));
    Id relu(Id x);
    Id sigmoid(Id x);
    Id add(Id a, Id b);  // broadcast, trailing-dim alignment
    Id mul(Id a, Id b);  // broadcast, trailing-dim alignment
    Id scale(Id x, T c);
    Id maxpool2(Id x);
    Id upsample_nearest2(Id x);
    Id concat_ch(const std::vector<Id>& xs);  // along axis 1 of [B,C,H,W]
    Id cross_entropy(Id logits, const std::vector<int32_t>& labels, int ignore_label);
    Id uncertainty_loss(Id mean, Id logvar, const TensorT<T>& target,
                        const std::vector<uint8_t>& mask);
    Id sum_hw(Id x);          // [B,C,H,W] -> [B,C]
    Id reduce_sum_all(Id x);  // -> scalar
    Id slice_pixel(Id x, int r, int c);   // [C,H,W] -> [C]
    Id slice_channel(Id x, int c);        // [B,C,H,W] -> [B,1,H,W]
    Id tile_hw(Id v, int H, int W);       // [N] -> [N,H,W]
    Id reshape(Id x, Shape s);
    Id stack_rows(const std::vector<Id>& xs);         // n x [C] -> [n,C]
    Id repeat_batch(Id x, int times);                 // [K,...] -> [K*times,...]
    Id tile_cells(Id x, int K, int H, int W);         // [C,G,G] -> [K*G*G,C,H,W]
    Id frob_reduce_batch(Id feats, Id attn_batch);    // [K,C,H,W],[K*T,1,H,W] -> [K*T,C]
    Id weighted_fuse(Id kmat, Id weights, int G);     // [K*T,C],[K,T] -> [C,G,G]

  private:
    Id push(Shape shape, std::vector<T> values, bool requires_grad,
            std::function<void(TapeT&)> backward = nullptr);
    std::vector<T>& grad_buf(Id id);
    void finite_check(Id id, const char* op);

    std::vector<Node> nodes_;
    std::vector<std::pair<ParamT<T>*, Id>> bindings_;
    bool backward_done_ = false;
    bool check_finite_ = false;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

}  // namespace geofuse
