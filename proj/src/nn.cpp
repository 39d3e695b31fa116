#include "cabr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cabr {

namespace {

inline float sigmoid_scalar(float x) {
    const float t = std::exp(-std::fabs(x));
    return x >= 0.f ? 1.f / (1.f + t) : t / (1.f + t);
}

// col is (c_in*9) x (oh*ow); spatial padding equals dilation.
void im2col3x3(const float* x, int c, int h, int w, int stride, int dil, float* col, int oh,
               int ow) {
    const std::size_t ncols = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < c; ++ci) {
        const float* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                float* row = col + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * ncols;
                const int xoff = (kx - 1) * dil;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + (ky - 1) * dil;
                    float* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(dst, ow, 0.f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * w;
                    if (stride == 1) {
                        const int ox0 = std::max(0, -xoff);
                        const int ox1 = std::min(ow, w - xoff);
                        if (ox0 > 0) std::fill_n(dst, std::min(ox0, ow), 0.f);
                        if (ox1 > ox0) std::memcpy(dst + ox0, src + ox0 + xoff,
                                                   static_cast<std::size_t>(ox1 - ox0) * sizeof(float));
                        if (ox1 < ow) std::fill_n(dst + std::max(ox1, 0), ow - std::max(ox1, 0), 0.f);
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + xoff;
                            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.f;
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col3x3: scatter-adds col rows back into gx (pre-zeroed).
void col2im3x3(const float* col, int c, int h, int w, int stride, int dil, float* gx, int oh,
               int ow) {
    const std::size_t ncols = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < c; ++ci) {
        float* plane = gx + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const float* row = col + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * ncols;
                const int xoff = (kx - 1) * dil;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + (ky - 1) * dil;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    const float* src = row + static_cast<std::size_t>(oy) * ow;
                    float* dst = plane + static_cast<std::size_t>(iy) * w;
                    if (stride == 1) {
                        const int ox0 = std::max(0, -xoff);
                        const int ox1 = std::min(ow, w - xoff);
                        for (int ox = ox0; ox < ox1; ++ox) {
                            dst[ox + xoff] += src[ox];
                        }
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + xoff;
                            if (ix >= 0 && ix < w) {
                                dst[ix] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

ConvLayer::ConvLayer(int c_in_, int c_out_, int stride_, int dilation_)
    : c_in(c_in_), c_out(c_out_), stride(stride_), dilation(dilation_),
      weight(static_cast<std::size_t>(c_out_) * c_in_ * 9, 0.f), bias(c_out_, 0.f) {
    if (c_in <= 0 || c_out <= 0) {
        throw ArgumentError("ConvLayer: channel counts must be positive");
    }
    if ((stride != 1 && stride != 2) || (dilation != 1 && dilation != 2)) {
        throw ArgumentError("ConvLayer: stride and dilation must be 1 or 2");
    }
}

void ConvLayer::init(Rng& rng, float gain) {
    const float s = gain * std::sqrt(1.f / (9.f * static_cast<float>(c_in)));
    std::uniform_real_distribution<float> dist(-s, s);
    for (auto& v : weight) {
        v = dist(rng);
    }
    std::fill(bias.begin(), bias.end(), 0.f);
}

Tensor conv2d_forward(const Tensor& x, const ConvLayer& layer, Workspace& ws) {
    if (x.c != layer.c_in) {
        throw ArgumentError("conv2d: input has " + std::to_string(x.c) + " channels, layer wants " +
                            std::to_string(layer.c_in));
    }
    const int oh = layer.out_dim(x.h);
    const int ow = layer.out_dim(x.w);
    const int k = layer.c_in * 9;
    const std::size_t ncols = static_cast<std::size_t>(oh) * ow;
    ws.col.resize(static_cast<std::size_t>(k) * ncols);

    Tensor out(x.n, layer.c_out, oh, ow);
    for (int i = 0; i < x.n; ++i) {
        im2col3x3(x.sample(i), x.c, x.h, x.w, layer.stride, layer.dilation, ws.col.data(), oh, ow);
        float* y = out.sample(i);
        blas::sgemm(false, false, layer.c_out, static_cast<int>(ncols), k, 1.f,
                    layer.weight.data(), k, ws.col.data(), static_cast<int>(ncols), 0.f, y,
                    static_cast<int>(ncols));
        for (int co = 0; co < layer.c_out; ++co) {
            const float b = layer.bias[co];
            float* plane = y + co * ncols;
            for (std::size_t j = 0; j < ncols; ++j) {
                plane[j] += b;
            }
        }
    }
    return out;
}

void conv2d_backward(const Tensor& x, const Tensor& grad_out, const ConvLayer& layer,
                     Workspace& ws, float* grad_weight, float* grad_bias, Tensor* grad_x) {
    if (x.c != layer.c_in || grad_out.c != layer.c_out || grad_out.n != x.n) {
        throw ArgumentError("conv2d_backward: shapes inconsistent with layer");
    }
    const int oh = layer.out_dim(x.h);
    const int ow = layer.out_dim(x.w);
    if (grad_out.h != oh || grad_out.w != ow) {
        throw ArgumentError("conv2d_backward: grad_out spatial shape mismatch");
    }
    const int k = layer.c_in * 9;
    const std::size_t ncols = static_cast<std::size_t>(oh) * ow;
    ws.col.resize(static_cast<std::size_t>(k) * ncols);
    if (grad_x) {
        *grad_x = Tensor(x.n, x.c, x.h, x.w);
        ws.col2.resize(static_cast<std::size_t>(k) * ncols);
    }

    for (int i = 0; i < x.n; ++i) {
        const float* gy = grad_out.sample(i);
        for (int co = 0; co < layer.c_out; ++co) {
            const float* plane = gy + co * ncols;
            double acc = 0.0;
            for (std::size_t j = 0; j < ncols; ++j) {
                acc += plane[j];
            }
            grad_bias[co] += static_cast<float>(acc);
        }
        im2col3x3(x.sample(i), x.c, x.h, x.w, layer.stride, layer.dilation, ws.col.data(), oh, ow);
        // gW += gy * col^T
        blas::sgemm(false, true, layer.c_out, k, static_cast<int>(ncols), 1.f, gy,
                    static_cast<int>(ncols), ws.col.data(), static_cast<int>(ncols), 1.f,
                    grad_weight, k);
        if (grad_x) {
            // gcol = W^T * gy
            blas::sgemm(true, false, k, static_cast<int>(ncols), layer.c_out, 1.f,
                        layer.weight.data(), k, gy, static_cast<int>(ncols), 0.f, ws.col2.data(),
                        static_cast<int>(ncols));
            col2im3x3(ws.col2.data(), x.c, x.h, x.w, layer.stride, layer.dilation,
                      grad_x->sample(i), oh, ow);
        }
    }
}

GatedConvLayer::GatedConvLayer(GateVariant v, int c_in, int c_out_, int stride, int dilation)
    : variant(v), conv(c_in, 2 * c_out_, stride, dilation), c_out(c_out_) {}

void GatedConvLayer::init(Rng& rng) {
    // Feature std sqrt(6/fan_in), gate std sqrt(2/fan_in): the leaky-relu and
    // the ~0.5 sigmoid gate then roughly cancel, keeping per-block gain near 1.
    const float base = std::sqrt(1.f / (9.f * static_cast<float>(conv.c_in)));
    const float s_feature = 4.243f * base;  // sqrt(18)
    const float s_gate = 2.449f * base;     // sqrt(6)
    const std::size_t half = conv.weight_count() / 2;
    std::uniform_real_distribution<float> feature_dist(-s_feature, s_feature);
    std::uniform_real_distribution<float> gate_dist(-s_gate, s_gate);
    for (std::size_t i = 0; i < half; ++i) {
        conv.weight[i] = feature_dist(rng);
    }
    for (std::size_t i = half; i < conv.weight.size(); ++i) {
        conv.weight[i] = gate_dist(rng);
    }
    std::fill(conv.bias.begin(), conv.bias.end(), 0.f);
}

Tensor gated_conv_forward(const Tensor& x, const GatedConvLayer& layer, Workspace& ws,
                          Tensor* z_cache) {
    Tensor z = conv2d_forward(x, layer.conv, ws);
    Tensor out(z.n, layer.c_out, z.h, z.w);
    const std::size_t plane = z.plane_size();
    for (int i = 0; i < z.n; ++i) {
        const float* zs = z.sample(i);
        float* ys = out.sample(i);
        for (int cidx = 0; cidx < layer.c_out; ++cidx) {
            const float* f = zs + cidx * plane;
            const float* g = zs + (layer.c_out + cidx) * plane;
            float* y = ys + cidx * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const float a = f[j] > 0.f ? f[j] : layer.slope * f[j];
                y[j] = a * sigmoid_scalar(g[j]);
            }
        }
    }
    if (z_cache) {
        *z_cache = std::move(z);
    }
    return out;
}

void gated_conv_backward(const Tensor& x, const Tensor& z, const Tensor& grad_out,
                         const GatedConvLayer& layer, Workspace& ws, float* grad_weight,
                         float* grad_bias, Tensor* grad_x) {
    Tensor grad_z(z.n, z.c, z.h, z.w);
    const std::size_t plane = z.plane_size();
    for (int i = 0; i < z.n; ++i) {
        const float* zs = z.sample(i);
        const float* gys = grad_out.sample(i);
        float* gzs = grad_z.sample(i);
        for (int cidx = 0; cidx < layer.c_out; ++cidx) {
            const float* f = zs + cidx * plane;
            const float* g = zs + (layer.c_out + cidx) * plane;
            const float* gy = gys + cidx * plane;
            float* gf = gzs + cidx * plane;
            float* gg = gzs + (layer.c_out + cidx) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const float s = sigmoid_scalar(g[j]);
                const float a = f[j] > 0.f ? f[j] : layer.slope * f[j];
                gf[j] = gy[j] * s * (f[j] > 0.f ? 1.f : layer.slope);
                gg[j] = gy[j] * a * s * (1.f - s);
            }
        }
    }
    conv2d_backward(x, grad_z, layer.conv, ws, grad_weight, grad_bias, grad_x);
}

Tensor upsample_nearest2x(const Tensor& x) {
    Tensor out(x.n, x.c, 2 * x.h, 2 * x.w);
    for (int i = 0; i < x.n; ++i) {
        for (int ci = 0; ci < x.c; ++ci) {
            for (int y = 0; y < x.h; ++y) {
                const float* src = &x.at(i, ci, y, 0);
                float* d0 = &out.at(i, ci, 2 * y, 0);
                float* d1 = &out.at(i, ci, 2 * y + 1, 0);
                for (int xx = 0; xx < x.w; ++xx) {
                    d0[2 * xx] = d0[2 * xx + 1] = src[xx];
                    d1[2 * xx] = d1[2 * xx + 1] = src[xx];
                }
            }
        }
    }
    return out;
}

Tensor upsample_nearest2x_backward(const Tensor& grad_out) {
    if (grad_out.h % 2 != 0 || grad_out.w % 2 != 0) {
        throw ArgumentError("upsample2x backward: spatial dims must be even");
    }
    Tensor gx(grad_out.n, grad_out.c, grad_out.h / 2, grad_out.w / 2);
    for (int i = 0; i < gx.n; ++i) {
        for (int ci = 0; ci < gx.c; ++ci) {
            for (int y = 0; y < gx.h; ++y) {
                const float* s0 = &grad_out.at(i, ci, 2 * y, 0);
                const float* s1 = &grad_out.at(i, ci, 2 * y + 1, 0);
                float* dst = &gx.at(i, ci, y, 0);
                for (int xx = 0; xx < gx.w; ++xx) {
                    dst[xx] = s0[2 * xx] + s0[2 * xx + 1] + s1[2 * xx] + s1[2 * xx + 1];
                }
            }
        }
    }
    return gx;
}

void sigmoid_forward(std::span<const float> x, std::span<float> y) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = sigmoid_scalar(x[i]);
    }
}

void sigmoid_backward(std::span<const float> y, std::span<const float> gy, std::span<float> gx) {
    for (std::size_t i = 0; i < y.size(); ++i) {
        gx[i] = gy[i] * y[i] * (1.f - y[i]);
    }
}

void leaky_relu_forward(std::span<const float> x, std::span<float> y, float slope) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = x[i] > 0.f ? x[i] : slope * x[i];
    }
}

void leaky_relu_backward(std::span<const float> x, std::span<const float> gy, std::span<float> gx,
                         float slope) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        gx[i] = gy[i] * (x[i] > 0.f ? 1.f : slope);
    }
}

Tensor sigmoid(const Tensor& x) {
    Tensor y(x.n, x.c, x.h, x.w);
    sigmoid_forward(x.values, y.values);
    return y;
}

Tensor leaky_relu(const Tensor& x, float slope) {
    Tensor y(x.n, x.c, x.h, x.w);
    leaky_relu_forward(x.values, y.values, slope);
    return y;
}

double dice_loss(const Tensor& pred, const Tensor& target, const Tensor& weight,
                 std::vector<float>* grad_pred) {
    pred.check_same_shape(target, "dice_loss");
    pred.check_same_shape(weight, "dice_loss");
    constexpr double eps = 1.0;
    double s_pt = 0.0, s_p = 0.0, s_t = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double w = weight.values[i];
        const double p = pred.values[i];
        const double t = target.values[i];
        s_pt += w * p * t;
        s_p += w * p;
        s_t += w * t;
    }
    const double a = 2.0 * s_pt + eps;
    const double b = s_p + s_t + eps;
    const double loss = 1.0 - a / b;
    if (grad_pred) {
        grad_pred->assign(pred.size(), 0.f);
        const double inv_b2 = 1.0 / (b * b);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double w = weight.values[i];
            const double t = target.values[i];
            (*grad_pred)[i] = static_cast<float>(w * (a - 2.0 * t * b) * inv_b2);
        }
    }
    return loss;
}

std::size_t param_count(std::span<const ParamRef> params) {
    std::size_t total = 0;
    for (const auto& p : params) {
        total += p.count;
    }
    return total;
}

AdamState::AdamState(std::size_t total_count, AdamConfig cfg_)
    : cfg(cfg_), m(total_count, 0.f), v(total_count, 0.f) {}

void AdamState::apply(std::span<const ParamRef> params, std::span<const float> grads, double lr) {
    if (grads.size() != m.size()) {
        throw ArgumentError("AdamState: gradient buffer size mismatch");
    }
    ++step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const float b1 = static_cast<float>(cfg.beta1);
    const float b2 = static_cast<float>(cfg.beta2);
    std::size_t off = 0;
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p.count; ++i) {
            const std::size_t j = off + i;
            const float g = grads[j];
            m[j] = b1 * m[j] + (1.f - b1) * g;
            v[j] = b2 * v[j] + (1.f - b2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.value[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
        off += p.count;
    }
}

FdReport finite_diff_check(std::span<float> storage, std::span<const float> analytic,
                           const std::function<double()>& eval,
                           std::span<const std::size_t> indices, float h,
                           const std::string& name) {
    FdReport report;
    report.name = name;
    for (std::size_t idx : indices) {
        const float saved = storage[idx];
        storage[idx] = saved + h;
        const double x_plus = storage[idx];
        const double f_plus = eval();
        storage[idx] = saved - h;
        const double x_minus = storage[idx];
        const double f_minus = eval();
        storage[idx] = saved;
        // Quotient over the realized float32 step, not the nominal one.
        const double numeric = (f_plus - f_minus) / (x_plus - x_minus);
        const double ana = analytic[idx];
        const double denom = std::max({std::fabs(numeric), std::fabs(ana), 1e-2});
        report.max_rel_err = std::max(report.max_rel_err, std::fabs(numeric - ana) / denom);
        ++report.checked;
    }
    return report;
}

}  // namespace cabr
