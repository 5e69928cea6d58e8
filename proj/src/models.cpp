#include "sto/models.hpp"

#include <cmath>

namespace sto::models {

using ad::Tensor;
using ad::Var;
using nn::Ctx;

void StvConfig::validate() const {
    if (in_channels <= 0 || stem_channels <= 0 || embed_dim <= 0)
        throw InvalidConfig("stv: channel counts must be positive");
    if (stage_channels.empty() || stage_channels.size() != stage_strides.size())
        throw InvalidConfig("stv: stage channel/stride lists must be non-empty and equal length");
    for (size_t i = 0; i < stage_channels.size(); ++i)
        if (stage_channels[i] <= 0 || stage_strides[i] <= 0)
            throw InvalidConfig("stv: stage channels and strides must be positive");
    if (grid_z <= 0 || grid_y <= 0 || grid_x <= 0)
        throw InvalidConfig("stv: grid extents must be positive");
}

void StoConfig::validate() const {
    stv.validate();
    if (variant != "vanilla" && variant != "diagnet" && variant != "stv_only" &&
        variant != "str_only")
        throw InvalidConfig("sto variant must be vanilla|diagnet|stv_only|str_only");
    if (feature_dim < 2 && variant != "stv_only")
        throw InvalidConfig("sto: feature_dim must be at least 2");
    if (dropout < 0.0 || dropout >= 1.0) throw InvalidConfig("sto: dropout must be in [0,1)");
    if (recon_weight < 0.0) throw InvalidConfig("sto: recon_weight must be non-negative");
}

const char* ModelStats::flop_convention() {
    return "flops = 2 FLOPs per multiply-accumulate in conv/dense (+1 per bias add);"
           " batchnorm 2/element; relu 1/element; sigmoid 4/element; residual add 1/element;"
           " global average pool 1/element; dropout excluded (identity at inference);"
           " one forward pass at batch size 1, reconstruction decoders excluded.";
}

std::unique_ptr<nn::Sequential> build_stvomics(const StvConfig& cfg, Rng& rng) {
    cfg.validate();
    auto seq = std::make_unique<nn::Sequential>();
    ad::Conv3dSpec stem{3, 3, 3, 1, 1, 1, 1, 1, 1};
    seq->push(std::make_unique<nn::Conv3dLayer>(cfg.in_channels, cfg.stem_channels, stem, rng));
    seq->push(std::make_unique<nn::BatchNorm3d>(cfg.stem_channels));
    seq->push(std::make_unique<nn::ReLU>());
    int64_t ch = cfg.stem_channels;
    for (size_t i = 0; i < cfg.stage_channels.size(); ++i) {
        seq->push(std::make_unique<nn::BasicResBlock3d>(ch, cfg.stage_channels[i],
                                                        cfg.stage_strides[i], rng));
        ch = cfg.stage_channels[i];
    }
    ad::Conv3dSpec mix{1, 1, 1, 1, 1, 1, 0, 0, 0};
    seq->push(std::make_unique<nn::Conv3dLayer>(ch, cfg.embed_dim, mix, rng));
    seq->push(std::make_unique<nn::BatchNorm3d>(cfg.embed_dim));
    seq->push(std::make_unique<nn::ReLU>());
    seq->push(std::make_unique<nn::GlobalAvgPool3d>());
    return seq;
}

std::unique_ptr<nn::Sequential> build_stromics(int64_t input_dim, int64_t embed_dim, Rng& rng) {
    if (input_dim < 2) throw InvalidConfig("stromics: input_dim must be at least 2");
    auto seq = std::make_unique<nn::Sequential>();
    seq->push(std::make_unique<nn::Dense>(input_dim, embed_dim, rng));
    seq->push(std::make_unique<nn::ReLU>());
    return seq;
}

namespace {

int64_t activation_elems(const nn::Sequential& seq, std::vector<int64_t> shape) {
    int64_t elems = 0;
    for (const auto& m : seq.items) {
        shape = m->out_shape(shape);
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        elems += n;
    }
    return elems;
}

class StoModel : public Classifier {
public:
    explicit StoModel(StoConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(derive_seed(cfg_.seed, seed_tag::model_init, 0));
        const bool stv = cfg_.variant != "str_only";
        const bool str = cfg_.variant != "stv_only";
        if (stv) stv_branch_ = build_stvomics(cfg_.stv, rng);
        if (str) str_branch_ = build_stromics(cfg_.feature_dim, cfg_.stv.embed_dim, rng);
        const int64_t fusion_in = (stv ? cfg_.stv.embed_dim : 0) + (str ? cfg_.stv.embed_dim : 0);
        dropout_ = std::make_unique<nn::Dropout>(cfg_.dropout);
        head_ = std::make_unique<nn::Dense>(fusion_in, 1, rng);
        if (cfg_.variant == "diagnet")
            decoder_ = std::make_unique<nn::Dense>(cfg_.stv.embed_dim, cfg_.feature_dim, rng);
    }

    ModelOutput run(const Tensor& volumes, const Tensor& features, const Tensor& targets,
                    const Ctx& ctx) override {
        Var embed;
        Var str_embed;
        if (stv_branch_) {
            if (volumes.shape.size() != 5) throw ShapeMismatch("sto: expected a volume batch");
            embed = stv_branch_->forward(ad::constant(volumes), ctx);
        }
        if (str_branch_) {
            if (features.shape.size() != 2) throw ShapeMismatch("sto: expected a feature batch");
            str_embed = str_branch_->forward(ad::constant(features), ctx);
            embed = embed ? ad::concat_features(embed, str_embed) : str_embed;
        }
        Var h = dropout_->forward(embed, ctx);
        Var prob = ad::sigmoid(head_->forward(h, ctx));
        ModelOutput out{prob, nullptr};
        if (targets.numel() > 0) {
            out.loss = ad::bce_loss(prob, targets);
            if (decoder_ && cfg_.recon_weight > 0.0) {
                Var recon = decoder_->forward(str_embed, ctx);
                out.loss = ad::add(out.loss,
                                   ad::scale(ad::mse_loss(recon, features), cfg_.recon_weight));
            }
        }
        return out;
    }

    std::vector<nn::Param> parameters() override {
        std::vector<nn::Param> out;
        if (stv_branch_) stv_branch_->collect_params("stv", out);
        if (str_branch_) str_branch_->collect_params("str", out);
        head_->collect_params("head", out);
        if (decoder_) decoder_->collect_params("decoder", out);
        return out;
    }

    std::vector<nn::BufferRef> buffers() override {
        std::vector<nn::BufferRef> out;
        if (stv_branch_) stv_branch_->collect_buffers("stv", out);
        if (str_branch_) str_branch_->collect_buffers("str", out);
        return out;
    }

    ModelStats stats() const override {
        ModelStats s;
        std::vector<nn::Param> ps;
        if (stv_branch_) stv_branch_->collect_params("stv", ps);
        if (str_branch_) str_branch_->collect_params("str", ps);
        head_->collect_params("head", ps);
        if (decoder_) decoder_->collect_params("decoder", ps);
        s.params = nn::param_count(ps);

        const std::vector<int64_t> vol_shape = {1, cfg_.stv.in_channels, cfg_.stv.grid_z,
                                                cfg_.stv.grid_y, cfg_.stv.grid_x};
        const std::vector<int64_t> feat_shape = {1, cfg_.feature_dim};
        int64_t fusion_in = 0, act = 0;
        if (stv_branch_) {
            s.flops += stv_branch_->flops(vol_shape);
            act += activation_elems(*stv_branch_, vol_shape);
            fusion_in += cfg_.stv.embed_dim;
        }
        if (str_branch_) {
            s.flops += str_branch_->flops(feat_shape);
            act += activation_elems(*str_branch_, feat_shape);
            fusion_in += cfg_.stv.embed_dim;
        }
        s.flops += head_->flops({1, fusion_in}) + 4;  // final dense + sigmoid
        act += fusion_in + 1 + 1;                     // concat output, logit, probability
        s.activation_bytes = act * static_cast<int64_t>(sizeof(double));
        return s;
    }

    std::string desc() const override { return "sto/" + cfg_.variant; }
    bool wants_volumes() const override { return cfg_.variant != "str_only"; }
    bool wants_features() const override { return cfg_.variant != "stv_only"; }

private:
    StoConfig cfg_;
    std::unique_ptr<nn::Sequential> stv_branch_, str_branch_;
    std::unique_ptr<nn::Dropout> dropout_;
    std::unique_ptr<nn::Dense> head_, decoder_;
};

class FcMlp : public Classifier {
public:
    FcMlp(int64_t input_dim, int64_t hidden, double dropout, uint64_t seed)
        : input_dim_(input_dim) {
        if (input_dim < 2 || hidden < 1) throw InvalidConfig("fc_mlp: bad dimensions");
        Rng rng(derive_seed(seed, seed_tag::model_init, 0));
        seq_ = std::make_unique<nn::Sequential>();
        seq_->push(std::make_unique<nn::Dense>(input_dim, hidden, rng));
        seq_->push(std::make_unique<nn::ReLU>());
        seq_->push(std::make_unique<nn::Dropout>(dropout));
        seq_->push(std::make_unique<nn::Dense>(hidden, 1, rng));
        seq_->push(std::make_unique<nn::Sigmoid>());
    }

    ModelOutput run(const Tensor&, const Tensor& features, const Tensor& targets,
                    const Ctx& ctx) override {
        Var prob = seq_->forward(ad::constant(features), ctx);
        ModelOutput out{prob, nullptr};
        if (targets.numel() > 0) out.loss = ad::bce_loss(prob, targets);
        return out;
    }

    std::vector<nn::Param> parameters() override {
        std::vector<nn::Param> out;
        seq_->collect_params("fc_mlp", out);
        return out;
    }
    std::vector<nn::BufferRef> buffers() override { return {}; }

    ModelStats stats() const override {
        ModelStats s;
        std::vector<nn::Param> ps;
        seq_->collect_params("fc_mlp", ps);
        s.params = nn::param_count(ps);
        s.flops = seq_->flops({1, input_dim_});
        s.activation_bytes = activation_elems(*seq_, {1, input_dim_}) *
                             static_cast<int64_t>(sizeof(double));
        return s;
    }

    std::string desc() const override { return "fc_mlp"; }
    bool wants_volumes() const override { return false; }
    bool wants_features() const override { return true; }

private:
    int64_t input_dim_;
    std::unique_ptr<nn::Sequential> seq_;
};

class DiagNetBaseline : public Classifier {
public:
    DiagNetBaseline(int64_t input_dim, int64_t hidden, double recon_weight, uint64_t seed)
        : input_dim_(input_dim), hidden_(hidden), recon_weight_(recon_weight) {
        if (input_dim < 2 || hidden < 1) throw InvalidConfig("diagnet: bad dimensions");
        Rng rng(derive_seed(seed, seed_tag::model_init, 0));
        encoder_ = std::make_unique<nn::Dense>(input_dim, hidden, rng);
        decoder_ = std::make_unique<nn::Dense>(hidden, input_dim, rng);
        cls_ = std::make_unique<nn::Dense>(hidden, 1, rng);
    }

    ModelOutput run(const Tensor&, const Tensor& features, const Tensor& targets,
                    const Ctx& ctx) override {
        Var x = ad::constant(features);
        Var code = ad::relu(encoder_->forward(x, ctx));
        Var prob = ad::sigmoid(cls_->forward(code, ctx));
        ModelOutput out{prob, nullptr};
        if (targets.numel() > 0) {
            out.loss = ad::bce_loss(prob, targets);
            if (recon_weight_ > 0.0) {
                Var recon = decoder_->forward(code, ctx);
                out.loss =
                    ad::add(out.loss, ad::scale(ad::mse_loss(recon, features), recon_weight_));
            }
        }
        return out;
    }

    std::vector<nn::Param> parameters() override {
        std::vector<nn::Param> out;
        encoder_->collect_params("encoder", out);
        decoder_->collect_params("decoder", out);
        cls_->collect_params("cls", out);
        return out;
    }
    std::vector<nn::BufferRef> buffers() override { return {}; }

    ModelStats stats() const override {
        ModelStats s;
        std::vector<nn::Param> ps;
        encoder_->collect_params("encoder", ps);
        decoder_->collect_params("decoder", ps);
        cls_->collect_params("cls", ps);
        s.params = nn::param_count(ps);
        s.flops = encoder_->flops({1, input_dim_}) + hidden_ /* relu */ +
                  cls_->flops({1, hidden_}) + 4 /* sigmoid */;
        s.activation_bytes = (hidden_ * 2 + 2) * static_cast<int64_t>(sizeof(double));
        return s;
    }

    std::string desc() const override { return "diagnet"; }
    bool wants_volumes() const override { return false; }
    bool wants_features() const override { return true; }

private:
    int64_t input_dim_, hidden_;
    double recon_weight_;
    std::unique_ptr<nn::Dense> encoder_, decoder_, cls_;
};

class Conv1dBaseline : public Classifier {
public:
    Conv1dBaseline(int64_t n_rois, int64_t t_len, int64_t filters, int64_t kernel, uint64_t seed)
        : n_rois_(n_rois), t_len_(t_len) {
        if (n_rois < 2 || t_len < 8) throw InvalidConfig("conv1d: need M >= 2 and T >= 8");
        if (kernel < 1 || kernel % 2 == 0) throw InvalidConfig("conv1d: kernel must be odd");
        Rng rng(derive_seed(seed, seed_tag::model_init, 0));
        seq_ = std::make_unique<nn::Sequential>();
        // 1D convolution over time, expressed as a (1,1,k) 3D kernel on a
        // (N, M, 1, 1, T) tensor.
        ad::Conv3dSpec spec{1, 1, kernel, 1, 1, 1, 0, 0, (kernel - 1) / 2};
        seq_->push(std::make_unique<nn::Conv3dLayer>(n_rois, filters, spec, rng));
        seq_->push(std::make_unique<nn::ReLU>());
        seq_->push(std::make_unique<nn::GlobalAvgPool3d>());
        seq_->push(std::make_unique<nn::Dense>(filters, 1, rng));
        seq_->push(std::make_unique<nn::Sigmoid>());
    }

    // The ROI-by-time matrix batch arrives through the volumes argument with
    // shape (N, M, 1, 1, T).
    ModelOutput run(const Tensor& volumes, const Tensor&, const Tensor& targets,
                    const Ctx& ctx) override {
        Var prob = seq_->forward(ad::constant(volumes), ctx);
        ModelOutput out{prob, nullptr};
        if (targets.numel() > 0) out.loss = ad::bce_loss(prob, targets);
        return out;
    }

    std::vector<nn::Param> parameters() override {
        std::vector<nn::Param> out;
        seq_->collect_params("conv1d", out);
        return out;
    }
    std::vector<nn::BufferRef> buffers() override { return {}; }

    ModelStats stats() const override {
        ModelStats s;
        std::vector<nn::Param> ps;
        seq_->collect_params("conv1d", ps);
        s.params = nn::param_count(ps);
        const std::vector<int64_t> in = {1, n_rois_, 1, 1, t_len_};
        s.flops = seq_->flops(in);
        s.activation_bytes = activation_elems(*seq_, in) * static_cast<int64_t>(sizeof(double));
        return s;
    }

    std::string desc() const override { return "conv1d"; }
    bool wants_volumes() const override { return true; }
    bool wants_features() const override { return false; }

private:
    int64_t n_rois_, t_len_;
    std::unique_ptr<nn::Sequential> seq_;
};

}  // namespace

std::unique_ptr<Classifier> build_sto(const StoConfig& cfg) {
    return std::make_unique<StoModel>(cfg);
}

std::unique_ptr<Classifier> build_baseline_fc_mlp(int64_t input_dim, int64_t hidden,
                                                  double dropout, uint64_t seed) {
    return std::make_unique<FcMlp>(input_dim, hidden, dropout, seed);
}

std::unique_ptr<Classifier> build_baseline_diagnet(int64_t input_dim, int64_t hidden,
                                                   double recon_weight, uint64_t seed) {
    if (hidden <= 0) hidden = input_dim / 2;
    return std::make_unique<DiagNetBaseline>(input_dim, hidden, recon_weight, seed);
}

std::unique_ptr<Classifier> build_baseline_1dconv(int64_t n_rois, int64_t t_len, int64_t filters,
                                                  int64_t kernel, uint64_t seed) {
    return std::make_unique<Conv1dBaseline>(n_rois, t_len, filters, kernel, seed);
}

}  // namespace sto::models
