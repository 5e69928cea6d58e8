#pragma once

// Neural-network layers on top of the autodiff tape, plus the Adam optimizer,
// finite-difference gradient checking, and the checkpoint file format.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sto/common.hpp"
#include "sto/tensor.hpp"

namespace sto::nn {

// Per-forward context: training toggles batch statistics and dropout; rng is
// required only when a dropout layer runs in training mode.
struct Ctx {
    bool training = false;
    Rng* rng = nullptr;
};

struct Param {
    std::string name;
    ad::Var node;
};

// Non-learned persistent state (batchnorm running statistics).
struct BufferRef {
    std::string name;
    std::vector<double>* data;
};

class Module {
public:
    virtual ~Module() = default;
    virtual ad::Var forward(const ad::Var& x, const Ctx& ctx) = 0;
    virtual void collect_params(const std::string& prefix, std::vector<Param>& out);
    virtual void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out);
    // Shape/FLOP arithmetic for model_stats; in/out shapes include the batch axis.
    virtual std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const = 0;
    virtual int64_t flops(const std::vector<int64_t>& in) const = 0;
};

class Dense : public Module {
public:
    Dense(int64_t in, int64_t out, Rng& rng);
    ad::Var forward(const ad::Var& x, const Ctx& ctx) override;
    void collect_params(const std::string& prefix, std::vector<Param>& out) override;
    std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const override;
    int64_t flops(const std::vector<int64_t>& in) const override;

    int64_t in_dim, out_dim;
    ad::Var weight;  // (in, out)
    ad::Var bias;    // (out)
};

class Conv3dLayer : public Module {
public:
    Conv3dLayer(int64_t in_ch, int64_t out_ch, ad::Conv3dSpec spec, Rng& rng);
    ad::Var forward(const ad::Var& x, const Ctx& ctx) override;
    void collect_params(const std::string& prefix, std::vector<Param>& out) override;
    std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const override;
    int64_t flops(const std::vector<int64_t>& in) const override;

    int64_t in_ch, out_ch;
    ad::Conv3dSpec spec;
    ad::Var weight;  // (out_ch, in_ch, kz, ky, kx)
    ad::Var bias;    // (out_ch)
};

class BatchNorm3d : public Module {
public:
    BatchNorm3d(int64_t channels, double momentum = 0.1, double eps = 1e-5);
    ad::Var forward(const ad::Var& x, const Ctx& ctx) override;
    void collect_params(const std::string& prefix, std::vector<Param>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
    std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const override;
    int64_t flops(const std::vector<int64_t>& in) const override;

    int64_t channels;
    double momentum, eps;
    ad::Var gamma, beta;
    std::vector<double> running_mean, running_var;
};

class ReLU : public Module {
public:
    ad::Var forward(const ad::Var& x, const Ctx& ctx) override;
    std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const override;
    int64_t flops(const std::vector<int64_t>& in) const override;
};

class Sigmoid : public Module {
public:
    ad::Var forward(const ad::Var& x, const Ctx& ctx) override;
    std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const override;
    int64_t flops(const std::vector<int64_t>& in) const override;
};

// Inverted dropout: train mode zeroes with probability p and scales the
// survivors by 1/(1-p); eval mode is the identity.
class Dropout : public Module {
public:
    explicit Dropout(double p);
    ad::Var forward(const ad::Var& x, const Ctx& ctx) override;
    std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const override;
    int64_t flops(const std::vector<int64_t>& in) const override;

    double p;
};

class GlobalAvgPool3d : public Module {
public:
    ad::Var forward(const ad::Var& x, const Ctx& ctx) override;
    std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const override;
    int64_t flops(const std::vector<int64_t>& in) const override;
};

// Two 3x3x3 convolutions with batchnorm, a projected 1x1x1 shortcut when the
// shape changes, and ReLU after the residual add.
class BasicResBlock3d : public Module {
public:
    BasicResBlock3d(int64_t in_ch, int64_t out_ch, int64_t stride, Rng& rng);
    ad::Var forward(const ad::Var& x, const Ctx& ctx) override;
    void collect_params(const std::string& prefix, std::vector<Param>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
    std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const override;
    int64_t flops(const std::vector<int64_t>& in) const override;

    std::unique_ptr<Conv3dLayer> conv1, conv2, proj;
    std::unique_ptr<BatchNorm3d> bn1, bn2, proj_bn;
};

class Sequential : public Module {
public:
    Sequential() = default;
    void push(std::unique_ptr<Module> m) { items.push_back(std::move(m)); }
    ad::Var forward(const ad::Var& x, const Ctx& ctx) override;
    void collect_params(const std::string& prefix, std::vector<Param>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
    std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const override;
    int64_t flops(const std::vector<int64_t>& in) const override;

    std::vector<std::unique_ptr<Module>> items;
};

int64_t param_count(const std::vector<Param>& params);

// He-uniform fan-in initialization; biases are zeroed by the layers themselves.
void he_uniform_fill(std::vector<double>& w, int64_t fan_in, Rng& rng);

class Adam {
public:
    explicit Adam(std::vector<Param> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    // Applies one bias-corrected update from each parameter's current .grad
    // (a missing/empty grad counts as zero), then clears the grads.
    void step();

    std::vector<Param> params;
    double lr, beta1, beta2, eps;
    int64_t step_count = 0;
    std::vector<std::vector<double>> m, v;
};

// Central finite differences on a caller-supplied scalar loss closure.  The
// closure must rebuild the graph from the parameters' current values; it is
// invoked twice up front and must return bit-identical losses, otherwise
// NonDeterministicFragment is thrown.  Returns the max relative error over up
// to max_coords sampled parameter coordinates.
double grad_check(const std::function<ad::Var()>& loss_fn, const std::vector<Param>& params,
                  Rng& rng, int max_coords = 200);

// Checkpoint file: little-endian uint64 manifest length, JSON manifest, then
// raw little-endian float64 blocks in manifest entry order.
void save_checkpoint(const std::string& path, const std::string& model_desc, uint64_t seed,
                     int64_t step, const std::vector<Param>& params,
                     const std::vector<BufferRef>& buffers);
void load_checkpoint(const std::string& path, const std::vector<Param>& params,
                     const std::vector<BufferRef>& buffers);
// Raw bytes of the serialized checkpoint (save_checkpoint writes exactly this).
std::vector<unsigned char> serialize_checkpoint(const std::string& model_desc, uint64_t seed,
                                                int64_t step, const std::vector<Param>& params,
                                                const std::vector<BufferRef>& buffers);
void load_checkpoint_bytes(const std::vector<unsigned char>& bytes,
                           const std::vector<Param>& params,
                           const std::vector<BufferRef>& buffers);

}  // namespace sto::nn
