#include "cabr/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "cabr/model.hpp"

namespace cabr {

bool GradCheckReport::all_pass() const {
    for (const auto& c : cases) {
        if (!c.pass) {
            return false;
        }
    }
    return !cases.empty();
}

namespace {

Tensor random_tensor(int n, int c, int h, int w, Rng& rng, float lo = -1.f, float hi = 1.f) {
    Tensor t(n, c, h, w);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (auto& v : t.values) {
        v = dist(rng);
    }
    return t;
}

// Fixed projection so the checked scalar is a plain weighted sum.
Tensor projection_like(const Tensor& out, Rng& rng) {
    Tensor p(out.n, out.c, out.h, out.w);
    std::uniform_real_distribution<float> dist(-1.f, 1.f);
    for (auto& v : p.values) {
        v = dist(rng);
    }
    return p;
}

double project(const Tensor& out, const Tensor& proj) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        acc += static_cast<double>(out.values[i]) * proj.values[i];
    }
    return acc;
}

std::vector<std::size_t> pick_indices(std::size_t total, std::size_t want, Rng& rng) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (want < total) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(want);
    }
    return idx;
}

GradCheckCase merge(const std::string& name, std::initializer_list<FdReport> reports,
                    double tolerance) {
    GradCheckCase c;
    c.name = name;
    for (const auto& r : reports) {
        c.max_rel_err = std::max(c.max_rel_err, r.max_rel_err);
        c.checked += r.checked;
    }
    c.pass = c.max_rel_err <= tolerance;
    return c;
}

GradCheckCase check_conv(int stride, int dilation, double tol) {
    Rng rng(1000 + stride * 10 + dilation);
    Workspace ws;
    Tensor x = random_tensor(2, 3, 8, 8, rng);
    ConvLayer layer(3, 4, stride, dilation);
    layer.init(rng);
    Tensor out = conv2d_forward(x, layer, ws);
    Tensor proj = projection_like(out, rng);

    std::vector<float> gw(layer.weight_count(), 0.f), gb(layer.c_out, 0.f);
    Tensor gx;
    conv2d_backward(x, proj, layer, ws, gw.data(), gb.data(), &gx);

    auto eval = [&]() { return project(conv2d_forward(x, layer, ws), proj); };
    const float h = 1e-2f;
    auto widx = pick_indices(layer.weight.size(), 60, rng);
    auto bidx = pick_indices(layer.bias.size(), layer.bias.size(), rng);
    auto xidx = pick_indices(x.size(), 40, rng);
    const std::string name = "conv2d s" + std::to_string(stride) + " d" + std::to_string(dilation);
    return merge(name,
                 {finite_diff_check(layer.weight, gw, eval, widx, h, name),
                  finite_diff_check(layer.bias, gb, eval, bidx, h, name),
                  finite_diff_check(x.values, gx.values, eval, xidx, h, name)},
                 tol);
}

GradCheckCase check_gated(GateVariant variant, double tol) {
    Rng rng(variant == GateVariant::TwoBranch ? 2001 : 2002);
    Workspace ws;
    Tensor x = random_tensor(2, 3, 8, 8, rng);
    GatedConvLayer layer(variant, 3, 4);
    layer.conv.init(rng);
    Tensor z;
    Tensor out = gated_conv_forward(x, layer, ws, &z);
    Tensor proj = projection_like(out, rng);
    // Drop outputs whose feature pre-activation sits near the leaky-relu kink:
    // an h-sized perturbation could cross it and central differences would
    // measure a mixture of the two slopes.
    const std::size_t plane = z.plane_size();
    for (int i = 0; i < out.n; ++i) {
        for (int c = 0; c < layer.c_out; ++c) {
            const float* f = z.sample(i) + c * plane;
            float* p = proj.sample(i) + c * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                if (std::fabs(f[j]) < 0.05f) {
                    p[j] = 0.f;
                }
            }
        }
    }

    std::vector<float> gw(layer.conv.weight_count(), 0.f), gb(layer.conv.c_out, 0.f);
    Tensor gx;
    gated_conv_backward(x, z, proj, layer, ws, gw.data(), gb.data(), &gx);

    auto eval = [&]() { return project(gated_conv_forward(x, layer, ws), proj); };
    const float h = 1e-2f;
    auto widx = pick_indices(layer.conv.weight.size(), 60, rng);
    auto bidx = pick_indices(layer.conv.bias.size(), layer.conv.bias.size(), rng);
    auto xidx = pick_indices(x.size(), 40, rng);
    const std::string name = variant == GateVariant::TwoBranch ? "gated_conv two-branch"
                                                               : "gated_conv shared-split";
    return merge(name,
                 {finite_diff_check(layer.conv.weight, gw, eval, widx, h, name),
                  finite_diff_check(layer.conv.bias, gb, eval, bidx, h, name),
                  finite_diff_check(x.values, gx.values, eval, xidx, h, name)},
                 tol);
}

GradCheckCase check_upsample(double tol) {
    Rng rng(3001);
    Tensor x = random_tensor(1, 2, 4, 4, rng);
    Tensor out = upsample_nearest2x(x);
    Tensor proj = projection_like(out, rng);
    Tensor gx = upsample_nearest2x_backward(proj);
    auto eval = [&]() { return project(upsample_nearest2x(x), proj); };
    auto xidx = pick_indices(x.size(), x.size(), rng);
    return merge("upsample_nearest2x",
                 {finite_diff_check(x.values, gx.values, eval, xidx, 1e-2f, "upsample")}, tol);
}

GradCheckCase check_sigmoid(double tol) {
    Rng rng(4001);
    Tensor x = random_tensor(1, 1, 4, 16, rng, -3.f, 3.f);
    Tensor y = sigmoid(x);
    Tensor proj = projection_like(y, rng);
    Tensor gx(x.n, x.c, x.h, x.w);
    sigmoid_backward(y.values, proj.values, gx.values);
    auto eval = [&]() { return project(sigmoid(x), proj); };
    auto xidx = pick_indices(x.size(), x.size(), rng);
    return merge("sigmoid", {finite_diff_check(x.values, gx.values, eval, xidx, 1e-2f, "sigmoid")},
                 tol);
}

GradCheckCase check_leaky_relu(double tol) {
    Rng rng(4002);
    Tensor x(1, 1, 4, 16);
    std::uniform_real_distribution<float> dist(0.05f, 2.f);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : x.values) {
        v = dist(rng) * (sign(rng) ? 1.f : -1.f);  // keep clear of the kink
    }
    const float slope = 0.2f;
    Tensor y = leaky_relu(x, slope);
    Tensor proj = projection_like(y, rng);
    Tensor gx(x.n, x.c, x.h, x.w);
    leaky_relu_backward(x.values, proj.values, gx.values, slope);
    auto eval = [&]() { return project(leaky_relu(x, slope), proj); };
    auto xidx = pick_indices(x.size(), x.size(), rng);
    return merge("leaky_relu",
                 {finite_diff_check(x.values, gx.values, eval, xidx, 1e-2f, "leaky_relu")}, tol);
}

GradCheckCase check_dice(double tol) {
    Rng rng(5001);
    Tensor pred = sigmoid(random_tensor(1, 1, 6, 6, rng, -2.f, 2.f));
    Tensor target(1, 1, 6, 6), weight(1, 1, 6, 6);
    std::bernoulli_distribution bit(0.5);
    for (auto& v : target.values) {
        v = bit(rng) ? 1.f : 0.f;
    }
    std::bernoulli_distribution keep(0.8);
    for (auto& v : weight.values) {
        v = keep(rng) ? 1.f : 0.f;
    }
    std::vector<float> grad;
    dice_loss(pred, target, weight, &grad);
    auto eval = [&]() { return dice_loss(pred, target, weight); };
    auto pidx = pick_indices(pred.size(), pred.size(), rng);
    return merge("dice_loss", {finite_diff_check(pred.values, grad, eval, pidx, 1e-2f, "dice")},
                 tol);
}

// Double-precision reference forward for the whole-network check. The float32
// training path cannot resolve central differences at a step small enough to
// stay clear of the leaky-relu kinks, so the oracle re-evaluates in f64.
double cabr_forward_f64_projected(const CabrNet& net, const Tensor& x, const Tensor& proj) {
    std::vector<double> cur(x.values.begin(), x.values.end());
    int ch = x.c, hh = x.h, ww = x.w;
    auto conv_f64 = [&](const ConvLayer& layer) {
        const int oh = layer.out_dim(hh);
        const int ow = layer.out_dim(ww);
        std::vector<double> out(static_cast<std::size_t>(layer.c_out) * oh * ow);
        const int d = layer.dilation;
        for (int co = 0; co < layer.c_out; ++co) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = layer.bias[co];
                    for (int ci = 0; ci < layer.c_in; ++ci) {
                        for (int ky = 0; ky < 3; ++ky) {
                            const int iy = oy * layer.stride + (ky - 1) * d;
                            if (iy < 0 || iy >= hh) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int ix = ox * layer.stride + (kx - 1) * d;
                                if (ix < 0 || ix >= ww) continue;
                                acc += static_cast<double>(
                                           layer.weight[((static_cast<std::size_t>(co) * layer.c_in +
                                                          ci) * 3 + ky) * 3 + kx]) *
                                       cur[(static_cast<std::size_t>(ci) * hh + iy) * ww + ix];
                            }
                        }
                    }
                    out[(static_cast<std::size_t>(co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
        cur = std::move(out);
        ch = layer.c_out;
        hh = oh;
        ww = ow;
    };
    auto upsample_f64 = [&]() {
        std::vector<double> out(static_cast<std::size_t>(ch) * 4 * hh * ww);
        for (int c = 0; c < ch; ++c) {
            for (int y = 0; y < hh; ++y) {
                for (int x2 = 0; x2 < ww; ++x2) {
                    const double v = cur[(static_cast<std::size_t>(c) * hh + y) * ww + x2];
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            out[(static_cast<std::size_t>(c) * 2 * hh + 2 * y + dy) * 2 * ww +
                                2 * x2 + dx] = v;
                        }
                    }
                }
            }
        }
        cur = std::move(out);
        hh *= 2;
        ww *= 2;
    };
    for (const auto& b : net.blocks) {
        if (b.up2x) {
            upsample_f64();
        }
        if (b.gated) {
            conv_f64(b.gc.conv);
            const std::size_t plane = static_cast<std::size_t>(hh) * ww;
            std::vector<double> out(static_cast<std::size_t>(b.gc.c_out) * plane);
            for (int c = 0; c < b.gc.c_out; ++c) {
                for (std::size_t j = 0; j < plane; ++j) {
                    const double f = cur[c * plane + j];
                    const double g = cur[(b.gc.c_out + c) * plane + j];
                    const double a = f > 0.0 ? f : b.gc.slope * f;
                    out[c * plane + j] = a / (1.0 + std::exp(-g));
                }
            }
            cur = std::move(out);
            ch = b.gc.c_out;
        } else {
            conv_f64(b.pc);
            for (auto& v : cur) {
                v = b.output ? 1.0 / (1.0 + std::exp(-v)) : (v > 0.0 ? v : 0.2 * v);
            }
        }
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < cur.size(); ++i) {
        acc += cur[i] * proj.values[i];
    }
    return acc;
}

GradCheckCase check_full_net(double tol) {
    Rng rng(6001);
    Workspace ws;
    CabrConfig cfg;
    cfg.base_channels = 16;
    CabrNet net = build_cabr(cfg);
    net.init(rng);

    Tensor x = random_tensor(1, 4, 16, 16, rng, 0.f, 1.f);
    NetCache cache;
    Tensor prob = cabr_forward(net, x, cache, ws);
    Tensor proj = projection_like(prob, rng);

    std::vector<float> grads(net.parameter_count(), 0.f);
    Tensor gin;
    cabr_backward(net, cache, proj, ws, grads, &gin);

    auto eval = [&]() { return cabr_forward_f64_projected(net, x, proj); };
    auto refs = net.param_refs();
    GradCheckCase c;
    c.name = "cabr net 1x4x16x16";
    const float h = 1e-4f;
    auto flat_idx = pick_indices(net.parameter_count(), 50, rng);
    for (std::size_t flat : flat_idx) {
        std::size_t off = 0;
        for (const auto& r : refs) {
            if (flat < off + r.count) {
                const std::size_t local = flat - off;
                std::span<float> storage(r.value, r.count);
                std::span<const float> ana(grads.data() + off, r.count);
                auto rep = finite_diff_check(storage, ana, eval, std::vector<std::size_t>{local},
                                             h, c.name);
                c.max_rel_err = std::max(c.max_rel_err, rep.max_rel_err);
                ++c.checked;
                break;
            }
            off += r.count;
        }
    }
    auto xidx = pick_indices(x.size(), 16, rng);
    auto rep = finite_diff_check(x.values, gin.values, eval, xidx, h, c.name);
    c.max_rel_err = std::max(c.max_rel_err, rep.max_rel_err);
    c.checked += rep.checked;
    c.pass = c.max_rel_err <= tol;
    return c;
}

}  // namespace

GradCheckReport run_gradcheck_suite(double tolerance) {
    GradCheckReport report;
    report.tolerance = tolerance;
    const auto t0 = std::chrono::steady_clock::now();
    report.cases.push_back(check_conv(1, 1, tolerance));
    report.cases.push_back(check_conv(2, 1, tolerance));
    report.cases.push_back(check_conv(1, 2, tolerance));
    report.cases.push_back(check_conv(2, 2, tolerance));
    report.cases.push_back(check_gated(GateVariant::TwoBranch, tolerance));
    report.cases.push_back(check_gated(GateVariant::SharedSplit, tolerance));
    report.cases.push_back(check_upsample(tolerance));
    report.cases.push_back(check_sigmoid(tolerance));
    report.cases.push_back(check_leaky_relu(tolerance));
    report.cases.push_back(check_dice(tolerance));
    report.cases.push_back(check_full_net(tolerance));
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace cabr
