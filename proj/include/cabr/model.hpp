#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cabr/image.hpp"
#include "cabr/nn.hpp"

namespace cabr {

enum class Backbone { GatedTwoBranch, GatedSharedSplit, PlainConv };

std::string backbone_name(Backbone b);
Backbone backbone_from_name(const std::string& name);
std::string gs_mode_name(const std::optional<GsMode>& mode);
std::optional<GsMode> gs_mode_from_name(const std::string& name);

struct CabrConfig {
    int base_channels = 16;
    Backbone backbone = Backbone::GatedTwoBranch;
    /// Shared-split family with halved interior widths; first-level channel
    /// count stays the nominal base_channels.
    bool lightweight = false;
    /// Gradient-statistics channel content; nullopt zeroes the channel.
    std::optional<GsMode> gs_mode = GsMode::AbsBma;
    /// Mask channel value written across BMA rows (they arrive saturated with
    /// false positives, and the clean mask there would leak labels in training).
    float mask_fill = 1.0f;
    float threshold = 0.5f;
    int window_height = 64;
};

/// One backbone stage: optional 2x upsampling, then a (gated) convolution.
struct Block {
    std::string name;
    bool up2x = false;
    bool gated = true;
    bool output = false;  // final conv + sigmoid
    GatedConvLayer gc;
    ConvLayer pc;  // plain-conv ablation blocks and the output conv
};

/// Encoder-decoder of 10 plain gated convolutions, 1 dilated gated convolution,
/// 2 upsampling+gated-conv stages, and a final sigmoid conv. Two stride-2
/// downsamples match the two 2x upsamples, so output shape equals input shape.
struct CabrNet {
    CabrConfig cfg;
    std::vector<Block> blocks;

    void init(Rng& rng);
    std::vector<ParamRef> param_refs();
    std::size_t parameter_count() const;
};

CabrNet build_cabr(const CabrConfig& cfg);

/// Per-block activations retained for the backward pass.
struct NetCache {
    struct BlockCache {
        Tensor x;   // block input (before upsampling)
        Tensor up;  // upsampled input, when up2x
        Tensor z;   // conv pre-activation
    };
    std::vector<BlockCache> blocks;
    Tensor out;  // final probabilities
};

/// Dense vessel probabilities in (0,1); requires H, W divisible by 4.
Tensor cabr_forward(const CabrNet& net, const Tensor& x, NetCache& cache, Workspace& ws);

/// grad_prob is d(loss)/d(probabilities). Parameter gradients are added into
/// the flat `grads` buffer (aligned with param_refs() order); the input
/// gradient is assigned when grad_input is non-null.
void cabr_backward(const CabrNet& net, const NetCache& cache, const Tensor& grad_prob,
                   Workspace& ws, std::span<float> grads, Tensor* grad_input = nullptr);

enum class AssembleMode { Train, Infer };

/// Stack (mask, image, gradient, stripe) into the 4-channel model input.
/// Channel 0 is the mask with BMA rows overwritten by mask_fill, channel 1 the
/// image scaled to [0,1], channel 2 the gradient map, channel 3 the stripe map.
Tensor assemble_input(const VesselMask& mask, const OctaImage& image, const GradientMap& gradient,
                      const RowLabels& labels, AssembleMode mode, float mask_fill = 1.0f);

/// assemble_input with the gradient channel computed per the net config.
Tensor assemble_for(const CabrNet& net, const VesselMask& mask, const OctaImage& image,
                    const RowLabels& labels, AssembleMode mode);

/// Replace BMA rows of the mask by thresholded probabilities (strict >);
/// clear rows pass through untouched.
VesselMask compose_prediction(const VesselMask& mask, const Tensor& prob, const RowLabels& labels,
                              float threshold = 0.5f);

struct InferStats {
    int windows = 0;
};

/// Window-based inference: each maximal BMA run is processed in a
/// window_height-row band centered on it (reflection padded at borders); runs
/// taller than the window are split across overlapping windows. Rows with
/// label 0 are returned bit-identical to the input mask.
VesselMask infer_image(const CabrNet& net, const VesselMask& mask, const OctaImage& image,
                       const RowLabels& labels, int window_height, Workspace& ws,
                       InferStats* stats = nullptr);

// ---- checkpoints: u64-length-prefixed JSON manifest + raw float32 payload ----

void save_checkpoint(CabrNet& net, const std::string& path);
CabrNet load_checkpoint(const std::string& path);

}  // namespace cabr
