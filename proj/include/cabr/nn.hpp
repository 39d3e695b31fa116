#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cabr/tensor.hpp"

namespace cabr {

namespace blas {

/// Row-major C(MxN) = alpha * op(A) op(B) + beta * C.
void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
           const float* b, int ldb, float beta, float* c, int ldc);

/// Caps the BLAS-internal thread count (worker-level parallelism lives above).
void set_threads(int n);

/// Re-execs the process once with OPENBLAS_CORETYPE pinned when the runtime
/// CPU detection landed on a pre-AVX kernel despite AVX2/AVX-512 support.
/// Call first thing in main(); no-op on correctly detected machines.
void ensure_fast_kernels(char** argv);

}  // namespace blas

/// Scratch buffers shared by conv calls; one per worker thread.
struct Workspace {
    std::vector<float> col;
    std::vector<float> col2;
};

// ---- layers ----

/// 3x3 convolution; spatial padding equals dilation so stride-1 output keeps HxW.
struct ConvLayer {
    int c_in = 0;
    int c_out = 0;
    int stride = 1;
    int dilation = 1;
    std::vector<float> weight;  // (c_out, c_in, 3, 3) row-major
    std::vector<float> bias;    // (c_out)

    ConvLayer() = default;
    ConvLayer(int c_in_, int c_out_, int stride_ = 1, int dilation_ = 1);

    /// Uniform +-gain*sqrt(1/(9*c_in)) weights, zero biases. The default gain
    /// keeps unit-bound draws; layers stacked behind gates need more (the 0.5
    /// mean gate and the leaky-relu halve the signal every block, and a dozen
    /// blocks of that starves the gradients).
    void init(Rng& rng, float gain = 1.f);

    int out_dim(int d) const { return stride == 1 ? d : (d - 1) / 2 + 1; }
    std::size_t weight_count() const { return static_cast<std::size_t>(c_out) * c_in * 9; }
    std::size_t param_count() const { return weight_count() + c_out; }
};

Tensor conv2d_forward(const Tensor& x, const ConvLayer& layer, Workspace& ws);

/// Adds into grad_weight/grad_bias; assigns grad_x when non-null.
void conv2d_backward(const Tensor& x, const Tensor& grad_out, const ConvLayer& layer,
                     Workspace& ws, float* grad_weight, float* grad_bias, Tensor* grad_x);

enum class GateVariant { TwoBranch, SharedSplit };

/// Gated convolution: out = leaky_relu(feature(x)) * sigmoid(gate(x)).
/// Both variants run as one stacked convolution with 2*c_out outputs (feature
/// rows first, gate rows second); TwoBranch exposes the halves as separate
/// feature/gate parameters, SharedSplit as a single split kernel.
struct GatedConvLayer {
    GateVariant variant = GateVariant::TwoBranch;
    ConvLayer conv;  // stacked: c_out_total = 2 * c_out
    int c_out = 0;
    float slope = 0.2f;

    GatedConvLayer() = default;
    GatedConvLayer(GateVariant v, int c_in, int c_out_, int stride = 1, int dilation = 1);

    /// Feature rows get a larger gain than gate rows so the activation scale
    /// survives the sigmoid-gated product across the whole stack.
    void init(Rng& rng);

    std::size_t param_count() const { return conv.param_count(); }
};

/// z_cache receives the stacked pre-activation (needed for backward).
Tensor gated_conv_forward(const Tensor& x, const GatedConvLayer& layer, Workspace& ws,
                          Tensor* z_cache = nullptr);

void gated_conv_backward(const Tensor& x, const Tensor& z, const Tensor& grad_out,
                         const GatedConvLayer& layer, Workspace& ws, float* grad_weight,
                         float* grad_bias, Tensor* grad_x);

// ---- elementwise ops ----

Tensor upsample_nearest2x(const Tensor& x);
Tensor upsample_nearest2x_backward(const Tensor& grad_out);

void sigmoid_forward(std::span<const float> x, std::span<float> y);
/// gx = gy * y * (1 - y), written from the forward output y.
void sigmoid_backward(std::span<const float> y, std::span<const float> gy, std::span<float> gx);

void leaky_relu_forward(std::span<const float> x, std::span<float> y, float slope);
void leaky_relu_backward(std::span<const float> x, std::span<const float> gy, std::span<float> gx,
                         float slope);

Tensor sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope);

/// Masked soft Dice loss over all elements:
///   1 - (2*sum(w*p*t) + eps) / (sum(w*p) + sum(w*t) + eps), eps = 1.
/// Sums run over every element of the given tensors. Writes d(loss)/d(pred)
/// into grad_pred when non-null.
double dice_loss(const Tensor& pred, const Tensor& target, const Tensor& weight,
                 std::vector<float>* grad_pred = nullptr);

// ---- optimizer ----

/// Named view into a layer's parameter storage.
struct ParamRef {
    std::string name;
    std::vector<int> shape;
    float* value = nullptr;
    std::size_t count = 0;
};

std::size_t param_count(std::span<const ParamRef> params);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam over a flat gradient buffer aligned with the param list.
struct AdamState {
    AdamConfig cfg;
    long long step = 0;
    std::vector<float> m;
    std::vector<float> v;

    AdamState() = default;
    AdamState(std::size_t total_count, AdamConfig cfg_ = {});

    void apply(std::span<const ParamRef> params, std::span<const float> grads, double lr);
};

// ---- gradient checking ----

struct FdReport {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

/// Central-difference check of `analytic` against `eval` (a scalar recompute)
/// at the given coordinates of `storage`. Relative error uses
/// |num - ana| / max(|num|, |ana|, 1e-2).
FdReport finite_diff_check(std::span<float> storage, std::span<const float> analytic,
                           const std::function<double()>& eval,
                           std::span<const std::size_t> indices, float h,
                           const std::string& name);

}  // namespace cabr
