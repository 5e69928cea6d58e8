#include "sto/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace sto::nn {

using ad::Tensor;
using ad::Var;

void Module::collect_params(const std::string&, std::vector<Param>&) {}
void Module::collect_buffers(const std::string&, std::vector<BufferRef>&) {}

void he_uniform_fill(std::vector<double>& w, int64_t fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : w) v = rng.uniform(-limit, limit);
}

namespace {

int64_t shape_numel(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

}  // namespace

// ---- Dense ----------------------------------------------------------------

Dense::Dense(int64_t in, int64_t out, Rng& rng) : in_dim(in), out_dim(out) {
    Tensor w({in, out});
    he_uniform_fill(w.data, in, rng);
    weight = ad::parameter(std::move(w));
    bias = ad::parameter(Tensor({out}));
}

Var Dense::forward(const Var& x, const Ctx&) {
    return ad::add_rowbias(ad::matmul(x, weight), bias);
}

void Dense::collect_params(const std::string& prefix, std::vector<Param>& out) {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

std::vector<int64_t> Dense::out_shape(const std::vector<int64_t>& in) const {
    if (in.size() != 2 || in[1] != in_dim) throw ShapeMismatch("dense: bad input shape");
    return {in[0], out_dim};
}

int64_t Dense::flops(const std::vector<int64_t>& in) const {
    return in[0] * (2 * in_dim * out_dim + out_dim);
}

// ---- Conv3dLayer ----------------------------------------------------------

Conv3dLayer::Conv3dLayer(int64_t ic, int64_t oc, ad::Conv3dSpec s, Rng& rng)
    : in_ch(ic), out_ch(oc), spec(s) {
    Tensor w({oc, ic, s.kz, s.ky, s.kx});
    he_uniform_fill(w.data, ic * s.kz * s.ky * s.kx, rng);
    weight = ad::parameter(std::move(w));
    bias = ad::parameter(Tensor({oc}));
}

Var Conv3dLayer::forward(const Var& x, const Ctx&) { return ad::conv3d(x, weight, bias, spec); }

void Conv3dLayer::collect_params(const std::string& prefix, std::vector<Param>& out) {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

std::vector<int64_t> Conv3dLayer::out_shape(const std::vector<int64_t>& in) const {
    if (in.size() != 5 || in[1] != in_ch) throw ShapeMismatch("conv3d: bad input shape");
    return {in[0], out_ch, ad::conv_out_extent(in[2], spec.kz, spec.sz, spec.pz),
            ad::conv_out_extent(in[3], spec.ky, spec.sy, spec.py),
            ad::conv_out_extent(in[4], spec.kx, spec.sx, spec.px)};
}

int64_t Conv3dLayer::flops(const std::vector<int64_t>& in) const {
    std::vector<int64_t> o = out_shape(in);
    const int64_t positions = o[0] * o[2] * o[3] * o[4];
    return positions * out_ch * (2 * in_ch * spec.kz * spec.ky * spec.kx + 1);
}

// ---- BatchNorm3d ----------------------------------------------------------

BatchNorm3d::BatchNorm3d(int64_t ch, double mom, double e)
    : channels(ch), momentum(mom), eps(e) {
    gamma = ad::parameter(Tensor({ch}, 1.0));
    beta = ad::parameter(Tensor({ch}));
    running_mean.assign(static_cast<size_t>(ch), 0.0);
    running_var.assign(static_cast<size_t>(ch), 1.0);
}

Var BatchNorm3d::forward(const Var& x, const Ctx& ctx) {
    return ad::batchnorm3d(x, gamma, beta, running_mean, running_var, ctx.training, momentum, eps);
}

void BatchNorm3d::collect_params(const std::string& prefix, std::vector<Param>& out) {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

void BatchNorm3d::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
}

std::vector<int64_t> BatchNorm3d::out_shape(const std::vector<int64_t>& in) const {
    if (in.size() != 5 || in[1] != channels) throw ShapeMismatch("batchnorm3d: bad input shape");
    return in;
}

int64_t BatchNorm3d::flops(const std::vector<int64_t>& in) const { return 2 * shape_numel(in); }

// ---- Elementwise layers ----------------------------------------------------

Var ReLU::forward(const Var& x, const Ctx&) { return ad::relu(x); }
std::vector<int64_t> ReLU::out_shape(const std::vector<int64_t>& in) const { return in; }
int64_t ReLU::flops(const std::vector<int64_t>& in) const { return shape_numel(in); }

Var Sigmoid::forward(const Var& x, const Ctx&) { return ad::sigmoid(x); }
std::vector<int64_t> Sigmoid::out_shape(const std::vector<int64_t>& in) const { return in; }
int64_t Sigmoid::flops(const std::vector<int64_t>& in) const { return 4 * shape_numel(in); }

Dropout::Dropout(double prob) : p(prob) {
    if (p < 0.0 || p >= 1.0) throw InvalidConfig("dropout probability must be in [0,1)");
}

Var Dropout::forward(const Var& x, const Ctx& ctx) {
    if (!ctx.training || p == 0.0) return x;
    if (!ctx.rng) throw InvalidConfig("dropout in training mode needs an rng");
    Tensor mask(x->value.shape);
    for (double& v : mask.data) v = ctx.rng->next_double() < p ? 0.0 : 1.0;
    return ad::elementwise_mask(x, std::move(mask), 1.0 / (1.0 - p));
}

std::vector<int64_t> Dropout::out_shape(const std::vector<int64_t>& in) const { return in; }
int64_t Dropout::flops(const std::vector<int64_t>&) const { return 0; }  // identity at eval

Var GlobalAvgPool3d::forward(const Var& x, const Ctx&) { return ad::global_avg_pool(x); }

std::vector<int64_t> GlobalAvgPool3d::out_shape(const std::vector<int64_t>& in) const {
    if (in.size() != 5) throw ShapeMismatch("global_avg_pool: bad input shape");
    return {in[0], in[1]};
}

int64_t GlobalAvgPool3d::flops(const std::vector<int64_t>& in) const { return shape_numel(in); }

// ---- BasicResBlock3d --------------------------------------------------------

BasicResBlock3d::BasicResBlock3d(int64_t in_ch, int64_t out_ch, int64_t stride, Rng& rng) {
    ad::Conv3dSpec c1{3, 3, 3, stride, stride, stride, 1, 1, 1};
    ad::Conv3dSpec c2{3, 3, 3, 1, 1, 1, 1, 1, 1};
    conv1 = std::make_unique<Conv3dLayer>(in_ch, out_ch, c1, rng);
    bn1 = std::make_unique<BatchNorm3d>(out_ch);
    conv2 = std::make_unique<Conv3dLayer>(out_ch, out_ch, c2, rng);
    bn2 = std::make_unique<BatchNorm3d>(out_ch);
    if (in_ch != out_ch || stride != 1) {
        ad::Conv3dSpec pr{1, 1, 1, stride, stride, stride, 0, 0, 0};
        proj = std::make_unique<Conv3dLayer>(in_ch, out_ch, pr, rng);
        proj_bn = std::make_unique<BatchNorm3d>(out_ch);
    }
}

Var BasicResBlock3d::forward(const Var& x, const Ctx& ctx) {
    Var h = conv1->forward(x, ctx);
    h = bn1->forward(h, ctx);
    h = ad::relu(h);
    h = conv2->forward(h, ctx);
    h = bn2->forward(h, ctx);
    Var sc = x;
    if (proj) {
        sc = proj->forward(x, ctx);
        sc = proj_bn->forward(sc, ctx);
    }
    return ad::relu(ad::add(h, sc));
}

void BasicResBlock3d::collect_params(const std::string& prefix, std::vector<Param>& out) {
    conv1->collect_params(prefix + ".conv1", out);
    bn1->collect_params(prefix + ".bn1", out);
    conv2->collect_params(prefix + ".conv2", out);
    bn2->collect_params(prefix + ".bn2", out);
    if (proj) {
        proj->collect_params(prefix + ".proj", out);
        proj_bn->collect_params(prefix + ".proj_bn", out);
    }
}

void BasicResBlock3d::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
    bn1->collect_buffers(prefix + ".bn1", out);
    bn2->collect_buffers(prefix + ".bn2", out);
    if (proj) proj_bn->collect_buffers(prefix + ".proj_bn", out);
}

std::vector<int64_t> BasicResBlock3d::out_shape(const std::vector<int64_t>& in) const {
    return conv1->out_shape(in);
}

int64_t BasicResBlock3d::flops(const std::vector<int64_t>& in) const {
    std::vector<int64_t> mid = conv1->out_shape(in);
    int64_t f = conv1->flops(in) + bn1->flops(mid) + shape_numel(mid) /* relu */ +
                conv2->flops(mid) + bn2->flops(mid);
    if (proj) f += proj->flops(in) + proj_bn->flops(mid);
    f += 2 * shape_numel(mid);  // residual add + final relu
    return f;
}

// ---- Sequential -------------------------------------------------------------

Var Sequential::forward(const Var& x, const Ctx& ctx) {
    Var h = x;
    for (auto& m : items) h = m->forward(h, ctx);
    return h;
}

void Sequential::collect_params(const std::string& prefix, std::vector<Param>& out) {
    for (size_t i = 0; i < items.size(); ++i)
        items[i]->collect_params(prefix + "." + std::to_string(i), out);
}

void Sequential::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
    for (size_t i = 0; i < items.size(); ++i)
        items[i]->collect_buffers(prefix + "." + std::to_string(i), out);
}

std::vector<int64_t> Sequential::out_shape(const std::vector<int64_t>& in) const {
    std::vector<int64_t> s = in;
    for (const auto& m : items) s = m->out_shape(s);
    return s;
}

int64_t Sequential::flops(const std::vector<int64_t>& in) const {
    std::vector<int64_t> s = in;
    int64_t f = 0;
    for (const auto& m : items) {
        f += m->flops(s);
        s = m->out_shape(s);
    }
    return f;
}

int64_t param_count(const std::vector<Param>& params) {
    int64_t n = 0;
    for (const Param& p : params) n += p.node->value.numel();
    return n;
}

// ---- Adam -------------------------------------------------------------------

Adam::Adam(std::vector<Param> ps, double lr_, double b1, double b2, double e)
    : params(std::move(ps)), lr(lr_), beta1(b1), beta2(b2), eps(e) {
    m.resize(params.size());
    v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i].node->value.data.size(), 0.0);
        v[i].assign(params[i].node->value.data.size(), 0.0);
    }
}

void Adam::step() {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (size_t i = 0; i < params.size(); ++i) {
        ad::Node& node = *params[i].node;
        const bool has_grad = node.grad.data.size() == node.value.data.size();
        for (size_t j = 0; j < node.value.data.size(); ++j) {
            const double g = has_grad ? node.grad.data[j] : 0.0;
            m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
            v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
            const double mhat = m[i][j] / bc1;
            const double vhat = v[i][j] / bc2;
            node.value.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        node.grad = Tensor();  // drop stale gradients
    }
}

// ---- Gradient checking --------------------------------------------------------

double grad_check(const std::function<ad::Var()>& loss_fn, const std::vector<Param>& params,
                  Rng& rng, int max_coords) {
    Var l1 = loss_fn();
    Var l2 = loss_fn();
    if (l1->value.data[0] != l2->value.data[0])
        throw NonDeterministicFragment("loss closure is not repeatable; disable dropout");

    Var loss = loss_fn();
    ad::backward(loss);
    std::vector<std::vector<double>> analytic(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].node->grad.data.size() == params[i].node->value.data.size())
            analytic[i] = params[i].node->grad.data;
        else
            analytic[i].assign(params[i].node->value.data.size(), 0.0);
    }

    // Flat coordinate space over all parameters, sampled without replacement.
    int64_t total = 0;
    for (const Param& p : params) total += p.node->value.numel();
    std::vector<int64_t> coords(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) coords[static_cast<size_t>(i)] = i;
    rng.shuffle(coords);
    const size_t n_check = std::min<size_t>(coords.size(), static_cast<size_t>(max_coords));

    double max_rel = 0.0;
    for (size_t ci = 0; ci < n_check; ++ci) {
        int64_t flat = coords[ci];
        size_t pi = 0;
        while (flat >= params[pi].node->value.numel()) flat -= params[pi++].node->value.numel();
        double& w = params[pi].node->value.data[static_cast<size_t>(flat)];
        const double saved = w;
        const double h = 1e-3 * std::max(1.0, std::abs(saved));
        w = saved + h;
        const double lp = loss_fn()->value.data[0];
        w = saved - h;
        const double lm = loss_fn()->value.data[0];
        w = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = analytic[pi][static_cast<size_t>(flat)];
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// ---- Checkpoints ----------------------------------------------------------------

namespace {

void append_f64_block(std::vector<unsigned char>& out, const std::vector<double>& data) {
    // Little-endian float64; this code targets little-endian hosts and the
    // NIfTI writer already asserts that at startup.
    const size_t off = out.size();
    out.resize(off + data.size() * sizeof(double));
    std::memcpy(out.data() + off, data.data(), data.size() * sizeof(double));
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const std::string& model_desc, uint64_t seed,
                                                int64_t step, const std::vector<Param>& params,
                                                const std::vector<BufferRef>& buffers) {
    nlohmann::json manifest;
    manifest["format"] = "sto-checkpoint-v1";
    manifest["model"] = model_desc;
    manifest["seed"] = seed;
    manifest["step"] = step;
    nlohmann::json entries = nlohmann::json::array();
    for (const Param& p : params)
        entries.push_back({{"name", p.name}, {"kind", "param"}, {"shape", p.node->value.shape}});
    for (const BufferRef& b : buffers)
        entries.push_back({{"name", b.name},
                           {"kind", "buffer"},
                           {"shape", {static_cast<int64_t>(b.data->size())}}});
    manifest["entries"] = std::move(entries);

    const std::string text = manifest.dump();
    std::vector<unsigned char> out(8);
    const uint64_t len = text.size();
    for (int i = 0; i < 8; ++i) out[static_cast<size_t>(i)] = static_cast<unsigned char>(len >> (8 * i));
    out.insert(out.end(), text.begin(), text.end());
    for (const Param& p : params) append_f64_block(out, p.node->value.data);
    for (const BufferRef& b : buffers) append_f64_block(out, *b.data);
    return out;
}

void save_checkpoint(const std::string& path, const std::string& model_desc, uint64_t seed,
                     int64_t step, const std::vector<Param>& params,
                     const std::vector<BufferRef>& buffers) {
    std::vector<unsigned char> bytes = serialize_checkpoint(model_desc, seed, step, params, buffers);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write on checkpoint: " + path);
}

void load_checkpoint(const std::string& path, const std::vector<Param>& params,
                     const std::vector<BufferRef>& buffers) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    load_checkpoint_bytes(bytes, params, buffers);
}

void load_checkpoint_bytes(const std::vector<unsigned char>& bytes,
                           const std::vector<Param>& params,
                           const std::vector<BufferRef>& buffers) {
    if (bytes.size() < 8) throw TruncatedData("checkpoint shorter than its length prefix");
    uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(bytes[static_cast<size_t>(i)]) << (8 * i);
    if (bytes.size() < 8 + len) throw TruncatedData("checkpoint manifest truncated");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(len));
    } catch (const nlohmann::json::exception& e) {
        throw MalformedHeader(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }
    if (manifest.value("format", "") != "sto-checkpoint-v1")
        throw MalformedHeader("unrecognized checkpoint format tag");
    const auto& entries = manifest.at("entries");
    if (entries.size() != params.size() + buffers.size())
        throw ShapeMismatch("checkpoint entry count does not match the model");

    size_t off = 8 + static_cast<size_t>(len);
    auto read_block = [&](const std::string& name, const std::vector<int64_t>& want_shape,
                          std::vector<double>& dst, const nlohmann::json& entry) {
        if (entry.at("name").get<std::string>() != name)
            throw ShapeMismatch("checkpoint entry name mismatch: expected " + name);
        const std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
        if (shape != want_shape) throw ShapeMismatch("checkpoint shape mismatch for " + name);
        const size_t n = dst.size() * sizeof(double);
        if (off + n > bytes.size()) throw TruncatedData("checkpoint data block truncated");
        std::memcpy(dst.data(), bytes.data() + off, n);
        off += n;
    };
    size_t e = 0;
    for (const Param& p : params)
        read_block(p.name, p.node->value.shape, p.node->value.data, entries.at(e++));
    for (const BufferRef& b : buffers)
        read_block(b.name, {static_cast<int64_t>(b.data->size())}, *b.data, entries.at(e++));
}

}  // namespace sto::nn
