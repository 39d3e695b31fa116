#include "cabr/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace cabr {

std::string backbone_name(Backbone b) {
    switch (b) {
        case Backbone::GatedTwoBranch: return "gated";
        case Backbone::GatedSharedSplit: return "shared";
        case Backbone::PlainConv: return "conv";
    }
    return "gated";
}

Backbone backbone_from_name(const std::string& name) {
    if (name == "gated") return Backbone::GatedTwoBranch;
    if (name == "shared") return Backbone::GatedSharedSplit;
    if (name == "conv") return Backbone::PlainConv;
    throw ArgumentError("unknown backbone '" + name + "' (want gated|shared|conv)");
}

std::string gs_mode_name(const std::optional<GsMode>& mode) {
    if (!mode) return "none";
    switch (*mode) {
        case GsMode::Naive: return "naive";
        case GsMode::Abs: return "abs";
        case GsMode::AbsBma: return "absbma";
    }
    return "absbma";
}

std::optional<GsMode> gs_mode_from_name(const std::string& name) {
    if (name == "none") return std::nullopt;
    if (name == "naive") return GsMode::Naive;
    if (name == "abs") return GsMode::Abs;
    if (name == "absbma") return GsMode::AbsBma;
    throw ArgumentError("unknown gs_mode '" + name + "' (want none|naive|abs|absbma)");
}

CabrNet build_cabr(const CabrConfig& cfg) {
    if (cfg.base_channels < 1) {
        throw ArgumentError("build_cabr: base_channels must be >= 1");
    }
    if (cfg.lightweight && cfg.base_channels < 2) {
        throw ArgumentError("build_cabr: lightweight variant needs base_channels >= 2");
    }
    CabrNet net;
    net.cfg = cfg;
    if (cfg.lightweight) {
        net.cfg.backbone = Backbone::GatedSharedSplit;
    }
    const int c1 = cfg.lightweight ? cfg.base_channels / 2 : cfg.base_channels;
    const int c2 = 2 * c1;
    const int c3 = 4 * c1;

    struct Spec {
        const char* name;
        int c_in, c_out, stride, dilation;
        bool up2x;
        bool output;
    };
    const Spec schedule[] = {
        {"gc01", 4, c1, 1, 1, false, false},
        {"gc02", c1, c1, 1, 1, false, false},
        {"gc03", c1, c2, 2, 1, false, false},
        {"gc04", c2, c2, 1, 1, false, false},
        {"gc05", c2, c3, 2, 1, false, false},
        {"gc06", c3, c3, 1, 1, false, false},
        {"gdil", c3, c3, 1, 2, false, false},
        {"gc07", c3, c3, 1, 1, false, false},
        {"gc08", c3, c3, 1, 1, false, false},
        {"dc01", c3, c2, 1, 1, true, false},
        {"gc09", c2, c2, 1, 1, false, false},
        {"dc02", c2, c1, 1, 1, true, false},
        {"gc10", c1, c1, 1, 1, false, false},
        {"out", c1, 1, 1, 1, false, true},
    };
    const GateVariant gv = net.cfg.backbone == Backbone::GatedSharedSplit
                               ? GateVariant::SharedSplit
                               : GateVariant::TwoBranch;
    for (const auto& s : schedule) {
        Block b;
        b.name = s.name;
        b.up2x = s.up2x;
        b.output = s.output;
        if (s.output || net.cfg.backbone == Backbone::PlainConv) {
            b.gated = false;
            b.pc = ConvLayer(s.c_in, s.c_out, s.stride, s.dilation);
        } else {
            b.gated = true;
            b.gc = GatedConvLayer(gv, s.c_in, s.c_out, s.stride, s.dilation);
        }
        net.blocks.push_back(std::move(b));
    }
    return net;
}

void CabrNet::init(Rng& rng) {
    for (auto& b : blocks) {
        if (b.gated) {
            b.gc.init(rng);
        } else {
            // He-style gain for the leaky-relu blocks; unit for the output conv.
            b.pc.init(rng, b.output ? 1.f : 2.449f);
        }
    }
}

std::vector<ParamRef> CabrNet::param_refs() {
    std::vector<ParamRef> refs;
    for (auto& b : blocks) {
        if (b.gated && b.gc.variant == GateVariant::TwoBranch) {
            // The feature/gate branches are the row halves of the stacked kernel;
            // weights first, biases second, to keep the flat layout contiguous.
            const int half = b.gc.c_out;
            const std::size_t wh = b.gc.conv.weight_count() / 2;
            refs.push_back({b.name + ".feature.weight", {half, b.gc.conv.c_in, 3, 3},
                            b.gc.conv.weight.data(), wh});
            refs.push_back({b.name + ".gate.weight", {half, b.gc.conv.c_in, 3, 3},
                            b.gc.conv.weight.data() + wh, wh});
            refs.push_back({b.name + ".feature.bias", {half}, b.gc.conv.bias.data(),
                            static_cast<std::size_t>(half)});
            refs.push_back({b.name + ".gate.bias", {half}, b.gc.conv.bias.data() + half,
                            static_cast<std::size_t>(half)});
        } else {
            ConvLayer& layer = b.gated ? b.gc.conv : b.pc;
            refs.push_back({b.name + ".weight", {layer.c_out, layer.c_in, 3, 3},
                            layer.weight.data(), layer.weight_count()});
            refs.push_back({b.name + ".bias", {layer.c_out}, layer.bias.data(),
                            static_cast<std::size_t>(layer.c_out)});
        }
    }
    return refs;
}

std::size_t CabrNet::parameter_count() const {
    std::size_t total = 0;
    for (const auto& b : blocks) {
        total += b.gated ? b.gc.param_count() : b.pc.param_count();
    }
    return total;
}

Tensor cabr_forward(const CabrNet& net, const Tensor& x, NetCache& cache, Workspace& ws) {
    if (x.c != 4) {
        throw ArgumentError("cabr_forward: input must have 4 channels, got " + std::to_string(x.c));
    }
    if (x.h % 4 != 0 || x.w % 4 != 0 || x.h < 8 || x.w < 8) {
        throw ArgumentError("cabr_forward: H and W must be divisible by 4 and >= 8, got " +
                            std::to_string(x.h) + "x" + std::to_string(x.w));
    }
    cache.blocks.resize(net.blocks.size());
    Tensor cur = x;
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        const Block& b = net.blocks[i];
        auto& bc = cache.blocks[i];
        bc.x = std::move(cur);
        const Tensor* conv_in = &bc.x;
        if (b.up2x) {
            bc.up = upsample_nearest2x(bc.x);
            conv_in = &bc.up;
        }
        if (b.gated) {
            cur = gated_conv_forward(*conv_in, b.gc, ws, &bc.z);
        } else {
            bc.z = conv2d_forward(*conv_in, b.pc, ws);
            if (b.output) {
                cur = sigmoid(bc.z);
            } else {
                cur = leaky_relu(bc.z, 0.2f);
            }
        }
    }
    cache.out = cur;
    return cache.out;
}

namespace {

// Flat offsets of each block's (stacked) weight and bias gradients.
struct BlockOffsets {
    std::size_t w_off = 0;
    std::size_t b_off = 0;
};

std::vector<BlockOffsets> block_offsets(const CabrNet& net) {
    std::vector<BlockOffsets> offs(net.blocks.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        const ConvLayer& layer = net.blocks[i].gated ? net.blocks[i].gc.conv : net.blocks[i].pc;
        offs[i].w_off = pos;
        pos += layer.weight_count();
        offs[i].b_off = pos;
        pos += static_cast<std::size_t>(layer.c_out);
    }
    return offs;
}

}  // namespace

void cabr_backward(const CabrNet& net, const NetCache& cache, const Tensor& grad_prob,
                   Workspace& ws, std::span<float> grads, Tensor* grad_input) {
    if (grads.size() != net.parameter_count()) {
        throw ArgumentError("cabr_backward: gradient buffer size mismatch");
    }
    const auto offs = block_offsets(net);
    Tensor gy = grad_prob;
    for (std::size_t ii = net.blocks.size(); ii-- > 0;) {
        const Block& b = net.blocks[ii];
        const auto& bc = cache.blocks[ii];
        const Tensor& conv_in = b.up2x ? bc.up : bc.x;
        const bool need_gx = ii > 0 || grad_input != nullptr;
        Tensor gx;
        float* gw = grads.data() + offs[ii].w_off;
        float* gb = grads.data() + offs[ii].b_off;
        if (b.gated) {
            gated_conv_backward(conv_in, bc.z, gy, b.gc, ws, gw, gb, need_gx ? &gx : nullptr);
        } else {
            Tensor gz(gy.n, gy.c, gy.h, gy.w);
            if (b.output) {
                sigmoid_backward(cache.out.values, gy.values, gz.values);
            } else {
                leaky_relu_backward(bc.z.values, gy.values, gz.values, 0.2f);
            }
            conv2d_backward(conv_in, gz, b.pc, ws, gw, gb, need_gx ? &gx : nullptr);
        }
        if (!need_gx) {
            break;
        }
        if (b.up2x) {
            gx = upsample_nearest2x_backward(gx);
        }
        gy = std::move(gx);
    }
    if (grad_input) {
        *grad_input = std::move(gy);
    }
}

Tensor assemble_input(const VesselMask& mask, const OctaImage& image, const GradientMap& gradient,
                      const RowLabels& labels, AssembleMode /*mode*/, float mask_fill) {
    const int h = image.height;
    const int w = image.width;
    if (mask.height != h || mask.width != w || gradient.height != h || gradient.width != w) {
        throw ArgumentError("assemble_input: mask/image/gradient shapes differ");
    }
    if (labels.size() != h) {
        throw ArgumentError("assemble_input: label length != image height");
    }
    Tensor x(1, 4, h, w);
    for (int y = 0; y < h; ++y) {
        const bool stripe = labels.labels[y] != 0;
        for (int xx = 0; xx < w; ++xx) {
            x.at(0, 0, y, xx) = stripe ? mask_fill : static_cast<float>(mask.at(y, xx));
            x.at(0, 1, y, xx) = static_cast<float>(image.at(y, xx)) / 255.f;
            x.at(0, 2, y, xx) = gradient.at(y, xx);
            x.at(0, 3, y, xx) = stripe ? 1.f : 0.f;
        }
    }
    return x;
}

Tensor assemble_for(const CabrNet& net, const VesselMask& mask, const OctaImage& image,
                    const RowLabels& labels, AssembleMode mode) {
    GradientMap g;
    if (net.cfg.gs_mode) {
        g = gradient_statistics(image, labels, *net.cfg.gs_mode);
    } else {
        g = GradientMap(image.height, image.width);
    }
    return assemble_input(mask, image, g, labels, mode, net.cfg.mask_fill);
}

VesselMask compose_prediction(const VesselMask& mask, const Tensor& prob, const RowLabels& labels,
                              float threshold) {
    if (prob.n != 1 || prob.c != 1 || prob.h != mask.height || prob.w != mask.width) {
        throw ArgumentError("compose_prediction: probability map shape mismatch");
    }
    if (labels.size() != mask.height) {
        throw ArgumentError("compose_prediction: label length != mask height");
    }
    VesselMask out = mask;
    for (int y = 0; y < mask.height; ++y) {
        if (!labels.labels[y]) {
            continue;
        }
        for (int x = 0; x < mask.width; ++x) {
            out.at(y, x) = prob.at(0, 0, y, x) > threshold ? 1 : 0;
        }
    }
    return out;
}

VesselMask infer_image(const CabrNet& net, const VesselMask& mask, const OctaImage& image,
                       const RowLabels& labels, int window_height, Workspace& ws,
                       InferStats* stats) {
    const int h = image.height;
    const int w = image.width;
    if (mask.height != h || mask.width != w) {
        throw ArgumentError("infer_image: mask and image shapes differ");
    }
    if (labels.size() != h) {
        throw ArgumentError("infer_image: label length != image height");
    }
    if (window_height % 4 != 0 || window_height < 8) {
        throw ArgumentError("infer_image: window_height must be divisible by 4 and >= 8");
    }
    if (window_height > h) {
        throw ArgumentError("infer_image: window taller than image (" +
                            std::to_string(window_height) + " > " + std::to_string(h) + ")");
    }
    VesselMask out = mask;
    if (stats) {
        stats->windows = 0;
    }
    const int wp = (w + 3) / 4 * 4;  // forward wants W % 4 == 0

    NetCache cache;
    int run_start = -1;
    auto process_chunk = [&](int cs, int ch) {
        const int win_start = cs - (window_height - ch) / 2;
        OctaImage win_img(window_height, wp);
        VesselMask win_mask(window_height, wp);
        RowLabels win_labels(window_height);
        for (int wr = 0; wr < window_height; ++wr) {
            const int sy = reflect_index(win_start + wr, h);
            win_labels.labels[wr] = labels.labels[sy];
            for (int x = 0; x < wp; ++x) {
                const int sx = reflect_index(x, w);
                win_img.at(wr, x) = image.at(sy, sx);
                win_mask.at(wr, x) = mask.at(sy, sx);
            }
        }
        const Tensor input = assemble_for(net, win_mask, win_img, win_labels, AssembleMode::Infer);
        const Tensor prob = cabr_forward(net, input, cache, ws);
        if (stats) {
            ++stats->windows;
        }
        for (int r = cs; r < cs + ch; ++r) {
            const int wr = r - win_start;
            for (int x = 0; x < w; ++x) {
                out.at(r, x) = prob.at(0, 0, wr, x) > net.cfg.threshold ? 1 : 0;
            }
        }
    };
    auto process_run = [&](int rs, int rh) {
        if (rh <= window_height) {
            process_chunk(rs, rh);
            return;
        }
        const int step = window_height / 2;
        const int n_chunks = (rh + step - 1) / step;
        const int base = rh / n_chunks;
        const int extra = rh % n_chunks;
        int pos = rs;
        for (int i = 0; i < n_chunks; ++i) {
            const int ch = base + (i < extra ? 1 : 0);
            process_chunk(pos, ch);
            pos += ch;
        }
    };
    for (int y = 0; y <= h; ++y) {
        const bool lit = y < h && labels.labels[y] != 0;
        if (lit && run_start < 0) {
            run_start = y;
        } else if (!lit && run_start >= 0) {
            process_run(run_start, y - run_start);
            run_start = -1;
        }
    }
    return out;
}

// ---- checkpoints ----

namespace {

nlohmann::json config_to_json(const CabrConfig& cfg) {
    return {
        {"base_channels", cfg.base_channels},
        {"backbone", backbone_name(cfg.backbone)},
        {"lightweight", cfg.lightweight},
        {"gs_mode", gs_mode_name(cfg.gs_mode)},
        {"mask_fill", cfg.mask_fill},
        {"threshold", cfg.threshold},
        {"window_height", cfg.window_height},
    };
}

CabrConfig config_from_json(const nlohmann::json& j) {
    CabrConfig cfg;
    cfg.base_channels = j.at("base_channels").get<int>();
    cfg.backbone = backbone_from_name(j.at("backbone").get<std::string>());
    cfg.lightweight = j.at("lightweight").get<bool>();
    cfg.gs_mode = gs_mode_from_name(j.at("gs_mode").get<std::string>());
    cfg.mask_fill = j.at("mask_fill").get<float>();
    cfg.threshold = j.at("threshold").get<float>();
    cfg.window_height = j.at("window_height").get<int>();
    return cfg;
}

}  // namespace

void save_checkpoint(CabrNet& net, const std::string& path) {
    const auto refs = net.param_refs();
    nlohmann::json manifest;
    manifest["format"] = "cabr-checkpoint-v1";
    manifest["model"] = config_to_json(net.cfg);
    nlohmann::json params = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& r : refs) {
        params.push_back({{"name", r.name},
                          {"shape", r.shape},
                          {"dtype", "float32"},
                          {"offset", offset},
                          {"nbytes", r.count * sizeof(float)}});
        offset += r.count * sizeof(float);
    }
    manifest["params"] = std::move(params);
    const std::string text = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(path + ": cannot open for writing");
    }
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& r : refs) {
        out.write(reinterpret_cast<const char*>(r.value),
                  static_cast<std::streamsize>(r.count * sizeof(float)));
    }
    if (!out) {
        throw IoError(path + ": write failed");
    }
}

CabrNet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(path + ": cannot open for reading");
    }
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len == 0 || len > (1u << 26)) {
        throw FormatError(path + ": bad checkpoint manifest length");
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) {
        throw FormatError(path + ": checkpoint manifest truncated");
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": checkpoint manifest is not valid JSON: " + e.what());
    }
    if (manifest.value("format", "") != "cabr-checkpoint-v1") {
        throw FormatError(path + ": unknown checkpoint format field");
    }
    CabrNet net = build_cabr(config_from_json(manifest.at("model")));
    auto refs = net.param_refs();
    const std::uint64_t payload_start = sizeof(len) + len;
    for (const auto& entry : manifest.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        auto it = std::find_if(refs.begin(), refs.end(),
                               [&](const ParamRef& r) { return r.name == name; });
        if (it == refs.end()) {
            throw FormatError(path + ": checkpoint parameter '" + name + "' not in model");
        }
        const std::uint64_t nbytes = entry.at("nbytes").get<std::uint64_t>();
        if (nbytes != it->count * sizeof(float)) {
            throw FormatError(path + ": checkpoint parameter '" + name + "' has wrong size");
        }
        in.seekg(static_cast<std::streamoff>(payload_start + entry.at("offset").get<std::uint64_t>()));
        in.read(reinterpret_cast<char*>(it->value), static_cast<std::streamsize>(nbytes));
        if (!in) {
            throw FormatError(path + ": checkpoint payload truncated at '" + name + "'");
        }
    }
    return net;
}

}  // namespace cabr
