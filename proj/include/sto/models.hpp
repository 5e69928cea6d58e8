#pragma once

// Assembly of the STO networks and baselines from the layer library, plus
// parameter/FLOP/memory accounting.

#include <memory>
#include <string>
#include <vector>

#include "sto/layers.hpp"

namespace sto::models {

// Volumetric branch: stem 3x3x3 conv, three basic residual blocks, a final
// 1x1x1 channel-mixing conv, and global average pooling down to embed_dim.
struct StvConfig {
    int64_t in_channels = 4;
    int64_t stem_channels = 64;
    std::vector<int64_t> stage_channels = {128, 256, 512};
    std::vector<int64_t> stage_strides = {2, 2, 2};
    int64_t embed_dim = 512;
    int64_t grid_z = 32, grid_y = 32, grid_x = 32;

    void validate() const;
};

struct StoConfig {
    // vanilla | diagnet | stv_only | str_only
    std::string variant = "vanilla";
    StvConfig stv;
    int64_t feature_dim = 6670;  // D; in diagnet mode the already-masked width d
    double dropout = 0.2;
    double recon_weight = 1.0;  // diagnet reconstruction loss weight
    uint64_t seed = 0;

    void validate() const;
};

struct ModelStats {
    int64_t params = 0;
    int64_t flops = 0;             // one forward pass, batch size 1
    int64_t activation_bytes = 0;  // intermediate outputs, batch size 1, f64
    // Human-readable statement of the FLOP counting convention.
    static const char* flop_convention();
};

struct ModelOutput {
    ad::Var prob;  // (N,1) in (0,1)
    ad::Var loss;  // scalar; null when no targets were given
};

class Classifier {
public:
    virtual ~Classifier() = default;
    // targets may be an empty tensor, in which case loss is null.
    virtual ModelOutput run(const ad::Tensor& volumes, const ad::Tensor& features,
                            const ad::Tensor& targets, const nn::Ctx& ctx) = 0;
    virtual std::vector<nn::Param> parameters() = 0;
    virtual std::vector<nn::BufferRef> buffers() = 0;
    virtual ModelStats stats() const = 0;
    virtual std::string desc() const = 0;
    virtual bool wants_volumes() const = 0;
    virtual bool wants_features() const = 0;
};

// The two embedding branches, exposed for reuse and branch-level testing.
std::unique_ptr<nn::Sequential> build_stvomics(const StvConfig& cfg, Rng& rng);
std::unique_ptr<nn::Sequential> build_stromics(int64_t input_dim, int64_t embed_dim, Rng& rng);

std::unique_ptr<Classifier> build_sto(const StoConfig& cfg);
std::unique_ptr<Classifier> build_baseline_fc_mlp(int64_t input_dim, int64_t hidden, double dropout,
                                                  uint64_t seed);
// input_dim here is the quartile-masked width d; hidden <= 0 selects the
// default d/2 (rounded down), which reproduces the reported parameter counts.
std::unique_ptr<Classifier> build_baseline_diagnet(int64_t input_dim, int64_t hidden,
                                                   double recon_weight, uint64_t seed);
std::unique_ptr<Classifier> build_baseline_1dconv(int64_t n_rois, int64_t t_len, int64_t filters,
                                                  int64_t kernel, uint64_t seed);

}  // namespace sto::models
