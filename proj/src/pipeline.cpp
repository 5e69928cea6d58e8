#include "sto/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include "json.hpp"
#include "sto/tabular.hpp"

namespace sto::pipeline {

using ad::Tensor;

// ---- Splits -----------------------------------------------------------------

namespace {

std::map<int, std::vector<int>> by_class(const std::vector<int>& indices,
                                         const std::vector<int>& labels) {
    std::map<int, std::vector<int>> groups;  // ordered: deterministic class order
    for (int i : indices) groups[labels[static_cast<size_t>(i)]].push_back(i);
    return groups;
}

std::vector<int> all_indices(size_t n) {
    std::vector<int> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i);
    return v;
}

}  // namespace

std::vector<FoldSplit> stratified_kfold(const std::vector<int>& labels, int k, uint64_t seed) {
    if (k < 2) throw InvalidConfig("k-fold requires k >= 2");
    auto groups = by_class(all_indices(labels.size()), labels);
    for (const auto& [cls, members] : groups)
        if (static_cast<int>(members.size()) < k)
            throw ClassTooSmall("class " + std::to_string(cls) + " has fewer members than folds");

    std::vector<FoldSplit> folds(static_cast<size_t>(k));
    uint64_t class_tag = 0;
    for (auto& [cls, members] : groups) {
        Rng rng(derive_seed(seed, seed_tag::kfold, class_tag++));
        rng.shuffle(members);
        for (size_t i = 0; i < members.size(); ++i)
            folds[i % static_cast<size_t>(k)].test.push_back(members[i]);
    }
    for (int f = 0; f < k; ++f) {
        auto& fold = folds[static_cast<size_t>(f)];
        std::sort(fold.test.begin(), fold.test.end());
        for (int i = 0; i < static_cast<int>(labels.size()); ++i)
            if (!std::binary_search(fold.test.begin(), fold.test.end(), i))
                fold.train.push_back(i);
    }
    return folds;
}

std::vector<int> subsample_train(const std::vector<int>& train, const std::vector<int>& labels,
                                 double proportion, uint64_t seed) {
    if (!(proportion > 0.0) || proportion > 1.0)
        throw InvalidConfig("proportion must lie in (0, 1]");
    if (proportion == 1.0) {
        std::vector<int> out = train;
        std::sort(out.begin(), out.end());
        return out;
    }
    auto groups = by_class(train, labels);
    std::vector<int> out;
    uint64_t class_tag = 0;
    for (auto& [cls, members] : groups) {
        Rng rng(derive_seed(seed, seed_tag::subsample, class_tag++));
        rng.shuffle(members);
        const size_t keep = std::max<size_t>(
            1, static_cast<size_t>(std::lround(proportion * static_cast<double>(members.size()))));
        out.insert(out.end(), members.begin(), members.begin() + static_cast<long>(keep));
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::pair<std::vector<int>, std::vector<int>> split_validation(const std::vector<int>& train,
                                                               const std::vector<int>& labels,
                                                               double val_fraction, uint64_t seed) {
    if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
        throw InvalidConfig("val_fraction must lie in (0, 1)");
    auto groups = by_class(train, labels);
    std::vector<int> tr, val;
    uint64_t class_tag = 0;
    for (auto& [cls, members] : groups) {
        Rng rng(derive_seed(seed, seed_tag::val_split, class_tag++));
        rng.shuffle(members);
        size_t take = static_cast<size_t>(
            std::lround(val_fraction * static_cast<double>(members.size())));
        if (members.size() >= 2) take = std::clamp<size_t>(take, 1, members.size() - 1);
        else take = 0;
        val.insert(val.end(), members.begin(), members.begin() + static_cast<long>(take));
        tr.insert(tr.end(), members.begin() + static_cast<long>(take), members.end());
    }
    std::sort(tr.begin(), tr.end());
    std::sort(val.begin(), val.end());
    return {tr, val};
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw LengthMismatch("auc: scores vs labels");
    int64_t npos = 0, nneg = 0;
    for (int l : labels) (l == 1 ? npos : nneg)++;
    if (npos == 0 || nneg == 0) throw SingleClass("auc needs both classes present");

    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t t = i; t < j; ++t)
            if (labels[order[t]] == 1) rank_sum_pos += midrank;
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1);
    return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

// ---- Cohort -------------------------------------------------------------------

std::vector<int> CohortTable::labels() const {
    std::vector<int> out;
    out.reserve(subjects.size());
    for (const auto& s : subjects) out.push_back(s.label);
    return out;
}

uint64_t subject_content_hash(const SubjectRecord& rec) {
    uint64_t h = fnv1a(rec.deriv.data.data(), rec.deriv.data.size() * sizeof(double));
    h ^= fnv1a(rec.features.data(), rec.features.size() * sizeof(double)) + 0x9e3779b97f4a7c15ULL +
         (h << 6) + (h >> 2);
    return h;
}

// ---- Feature conditioning -------------------------------------------------------

FeatureScaler FeatureScaler::fit(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw EmptyOutput("feature scaler needs at least one row");
    const size_t dim = rows[0].size();
    FeatureScaler s;
    s.mean.assign(dim, 0.0);
    s.std.assign(dim, 0.0);
    for (const auto& r : rows) {
        if (r.size() != dim) throw LengthMismatch("feature rows differ in length");
        for (size_t j = 0; j < dim; ++j) s.mean[j] += r[j];
    }
    for (size_t j = 0; j < dim; ++j) s.mean[j] /= static_cast<double>(rows.size());
    for (const auto& r : rows)
        for (size_t j = 0; j < dim; ++j) {
            const double d = r[j] - s.mean[j];
            s.std[j] += d * d;
        }
    for (size_t j = 0; j < dim; ++j) {
        s.std[j] = std::sqrt(s.std[j] / static_cast<double>(rows.size()));
        if (s.std[j] < 1e-12) s.std[j] = 1.0;
    }
    return s;
}

std::vector<double> FeatureScaler::apply(const std::vector<double>& x) const {
    if (x.size() != mean.size()) throw LengthMismatch("feature scaler dimension mismatch");
    std::vector<double> out(x.size());
    for (size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / std[j];
    return out;
}

// ---- Batch assembly ---------------------------------------------------------------

namespace {

std::vector<double> conditioned_features(FoldView& view, int idx, const BatchOptions& opts) {
    const ConnectomeFeatures& raw = view.features(idx);
    if (opts.mask) return opts.scaler.apply(apply_mask(raw, *opts.mask));
    return opts.scaler.apply(raw);
}

struct BatchTensors {
    Tensor volumes, features, targets;
};

BatchTensors assemble_batch(FoldView& view, const std::vector<int>& idx, const BatchOptions& opts,
                            bool training, Rng* rng, bool with_targets) {
    BatchTensors b;
    const int64_t n = static_cast<int64_t>(idx.size());
    if (opts.want_volumes) {
        const Volume3D& probe = view.cohort().subjects[static_cast<size_t>(idx[0])].deriv;
        const int64_t c = static_cast<int64_t>(opts.channels.size());
        const int64_t vox = probe.nx * probe.ny * probe.nz;
        b.volumes = Tensor({n, c, probe.nz, probe.ny, probe.nx});
        for (int64_t s = 0; s < n; ++s) {
            const Volume3D* vol = &view.deriv(idx[static_cast<size_t>(s)]);
            Volume3D warped;
            if (training && opts.augment) {
                warped = sto::augment(*vol, *opts.augment, *rng);
                vol = &warped;
            }
            for (int64_t ci = 0; ci < c; ++ci) {
                const int ch = opts.channels[static_cast<size_t>(ci)];
                std::copy_n(vol->data.data() + ch * vox, vox,
                            b.volumes.data.data() + (s * c + ci) * vox);
            }
        }
    }
    if (opts.want_features) {
        std::vector<double> first = conditioned_features(view, idx[0], opts);
        const int64_t d = static_cast<int64_t>(first.size());
        b.features = Tensor({n, d});
        std::copy(first.begin(), first.end(), b.features.data.begin());
        for (int64_t s = 1; s < n; ++s) {
            std::vector<double> row = conditioned_features(view, idx[static_cast<size_t>(s)], opts);
            std::copy(row.begin(), row.end(), b.features.data.data() + s * d);
        }
    }
    if (with_targets) {
        b.targets = Tensor({n, 1});
        for (int64_t s = 0; s < n; ++s)
            b.targets.data[static_cast<size_t>(s)] =
                static_cast<double>(view.label(idx[static_cast<size_t>(s)]));
    }
    return b;
}

}  // namespace

// ---- Training -----------------------------------------------------------------------

std::vector<double> evaluate(models::Classifier& model, FoldView& view,
                             const std::vector<int>& idx, const BatchOptions& opts) {
    std::vector<double> scores;
    scores.reserve(idx.size());
    nn::Ctx ctx;  // eval mode
    constexpr size_t kEvalBatch = 32;
    for (size_t at = 0; at < idx.size(); at += kEvalBatch) {
        const std::vector<int> chunk(idx.begin() + static_cast<long>(at),
                                     idx.begin() + static_cast<long>(std::min(idx.size(), at + kEvalBatch)));
        BatchTensors b = assemble_batch(view, chunk, opts, false, nullptr, false);
        models::ModelOutput out = model.run(b.volumes, b.features, b.targets, ctx);
        for (double v : out.prob->value.data) scores.push_back(v);
    }
    return scores;
}

TrainResult train(models::Classifier& model, FoldView& view, const std::vector<int>& train_idx,
                  const std::vector<int>& val_idx, const BatchOptions& opts,
                  const TrainConfig& cfg) {
    if (train_idx.empty() || val_idx.empty()) throw InvalidConfig("train: empty split");
    if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.eval_every < 1)
        throw InvalidConfig("train: batch size, epochs, and eval period must be positive");

    Rng rng(cfg.seed);
    std::vector<nn::Param> params = model.parameters();
    std::vector<nn::BufferRef> buffers = model.buffers();
    nn::Adam adam(params, cfg.lr);

    TrainResult result;
    int evals_without_improvement = 0;
    std::vector<int> order = train_idx;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        nn::Ctx train_ctx{true, &rng};
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
            const std::vector<int> chunk(
                order.begin() + static_cast<long>(at),
                order.begin() +
                    static_cast<long>(std::min(order.size(), at + static_cast<size_t>(cfg.batch_size))));
            BatchTensors b = assemble_batch(view, chunk, opts, true, &rng, true);
            models::ModelOutput out = model.run(b.volumes, b.features, b.targets, train_ctx);
            const double loss = out.loss->value.data[0];
            if (!std::isfinite(loss))
                throw DivergedLoss("loss became non-finite at epoch " + std::to_string(epoch));
            loss_sum += loss * static_cast<double>(chunk.size());
            ad::backward(out.loss);
            adam.step();
        }

        TracePoint point;
        point.epoch = epoch;
        point.train_loss = loss_sum / static_cast<double>(order.size());
        if (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs) {
            std::vector<double> scores = evaluate(model, view, val_idx, opts);
            std::vector<int> vl;
            vl.reserve(val_idx.size());
            for (int i : val_idx) vl.push_back(view.label(i));
            point.val_auc = auc(scores, vl);
            point.evaluated = true;
            if (point.val_auc > result.best_val_auc) {
                result.best_val_auc = point.val_auc;
                result.best_epoch = epoch;
                result.best_checkpoint = nn::serialize_checkpoint(model.desc(), cfg.seed,
                                                                  adam.step_count, params, buffers);
                evals_without_improvement = 0;
            } else {
                ++evals_without_improvement;
            }
            result.trace.push_back(point);
            if (evals_without_improvement >= cfg.early_stop_evals) break;
            continue;
        }
        result.trace.push_back(point);
    }

    nn::load_checkpoint_bytes(result.best_checkpoint, params, buffers);
    return result;
}

// ---- Experiment grid --------------------------------------------------------------

void ExperimentConfig::validate() const {
    synth.validate();
    bandpass.validate();
    derivatives.validate();
    stv.validate();
    if (model_grid < 2) throw InvalidConfig("model_grid must be at least 2");
    if (folds < 2) throw InvalidConfig("folds must be at least 2");
    if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
        throw InvalidConfig("val_fraction must lie in (0, 1)");
    if (proportions.empty()) throw InvalidConfig("at least one proportion required");
    for (double p : proportions)
        if (!(p > 0.0) || p > 1.0) throw InvalidConfig("proportions must lie in (0, 1]");
    if (table1_variants.empty()) throw InvalidConfig("at least one variant required");
    if (threads < 1) throw InvalidConfig("threads must be at least 1");
    if (use_augment) augment.validate();
}

ExperimentConfig quick_preset(uint64_t seed) {
    ExperimentConfig cfg;
    cfg.synth.n_subjects_per_class = 40;
    cfg.synth.nx = cfg.synth.ny = cfg.synth.nz = 20;
    cfg.synth.t = 100;
    cfg.synth.n_blocks = 12;
    cfg.synth.effect_size = 0.8;
    cfg.synth.seed = seed;
    cfg.bandpass = BandpassSpec{};  // 0.01 Hz to Nyquist at TR = 2 s
    cfg.model_grid = 12;
    cfg.stv.in_channels = 4;
    cfg.stv.stem_channels = 8;
    cfg.stv.stage_channels = {16, 32, 64};
    cfg.stv.stage_strides = {2, 2, 2};
    cfg.stv.embed_dim = 64;
    cfg.stv.grid_z = cfg.stv.grid_y = cfg.stv.grid_x = 12;
    cfg.train.lr = 1e-3;
    cfg.train.batch_size = 8;
    cfg.train.max_epochs = 15;
    cfg.train.eval_every = 5;
    cfg.train.early_stop_evals = 10;
    cfg.table1_variants = {"fc_mlp", "diagnet", "sto"};
    cfg.seed = seed;
    return cfg;
}

ExperimentConfig null_preset(uint64_t seed) {
    ExperimentConfig cfg = quick_preset(seed);
    cfg.synth.effect_size = 0.0;
    cfg.synth.nx = cfg.synth.ny = cfg.synth.nz = 16;
    cfg.synth.t = 60;
    // Larger cohort than the quick preset: chance-level fold means need the
    // tighter test folds far more than the signal runs do.
    cfg.synth.n_subjects_per_class = 60;
    cfg.train.max_epochs = 6;
    cfg.train.eval_every = 3;
    cfg.proportions = {1.0};
    cfg.run_ablations = false;
    return cfg;
}

CohortTable build_synthetic_cohort(const ExperimentConfig& cfg) {
    cfg.validate();
    CohortTable cohort;
    const AtlasVolume atlas = make_atlas(cfg.synth);
    const MaskVolume mask = make_mask(cfg.synth);
    cohort.n_rois = atlas.n_rois;

    BandpassSpec band = cfg.bandpass;
    band.tr_seconds = cfg.synth.tr_seconds;
    const int n = total_subjects(cfg.synth);
    cohort.subjects.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Volume4D vol = generate_subject(cfg.synth, i);
        bandpass_volume(vol, band, &mask);
        Volume3D stack = derivative_stack(vol, mask, cfg.derivatives);
        SubjectRecord rec;
        rec.id = subject_id(i);
        rec.label = subject_label(cfg.synth, i);
        rec.deriv = resample_to(stack, cfg.model_grid, cfg.model_grid, cfg.model_grid);
        rec.features = upper_triangle(fc_matrix(roi_mean_timeseries(vol, atlas)));
        rec.content_hash = 0;
        rec.content_hash = subject_content_hash(rec);
        cohort.subjects.push_back(std::move(rec));
    }
    cohort.feature_dim = static_cast<int64_t>(cohort.subjects.front().features.size());
    return cohort;
}

namespace {

const std::vector<std::pair<std::string, DerivativeChannel>> kChannelNames = {
    {"reho", DerivativeChannel::ReHo},
    {"dc", DerivativeChannel::DC},
    {"lfcd", DerivativeChannel::LFCD},
    {"vmhc", DerivativeChannel::VMHC},
};

std::vector<int> stack_channel_indices(const DerivativeSpec& spec, const std::string& which) {
    // Stack order is the enabled subset of (reho, dc, lfcd, vmhc).
    std::vector<std::pair<std::string, bool>> enabled = {{"reho", spec.use_reho},
                                                         {"dc", spec.use_dc},
                                                         {"lfcd", spec.use_lfcd},
                                                         {"vmhc", spec.use_vmhc}};
    std::vector<int> out;
    int at = 0;
    for (const auto& [name, on] : enabled) {
        if (!on) continue;
        if (which == "all" || which == name) out.push_back(at);
        ++at;
    }
    if (out.empty()) throw InvalidConfig("channel selection '" + which + "' matches nothing");
    return out;
}

struct RunPlan {
    std::string variant;
    std::string channels = "all";
    double proportion = 1.0;
    bool table2 = false;
};

struct TaskResult {
    FoldRecord record;
    std::vector<TracePoint> trace;
    models::ModelStats stats;
};

// One fold of one run: split, fit conditioning on train only, train, audit,
// evaluate.  task_tag seeds everything and is unique per (run, fold).
TaskResult run_fold(const ExperimentConfig& cfg, const CohortTable& cohort, const RunPlan& plan,
                    const FoldSplit& fold, int fold_id, uint64_t task_tag) {
    FoldView view(cohort);
    const std::vector<int> labels = cohort.labels();

    std::vector<int> reduced =
        subsample_train(fold.train, labels, plan.proportion, derive_seed(cfg.seed, seed_tag::subsample, task_tag));
    std::vector<int> tr, val;
    if (cfg.validate_on_test) {
        tr = reduced;
        val = fold.test;
    } else {
        std::tie(tr, val) = split_validation(reduced, labels, cfg.val_fraction,
                                             derive_seed(cfg.seed, seed_tag::val_split, task_tag));
    }

    BatchOptions opts;
    opts.channels = stack_channel_indices(cfg.derivatives, plan.channels);
    if (cfg.use_augment) opts.augment = &cfg.augment;

    const bool diagnet_features = plan.variant == "diagnet" || plan.variant == "sto_diagnet";
    std::unique_ptr<models::Classifier> model;
    const uint64_t model_seed = derive_seed(cfg.seed, seed_tag::model_init, task_tag);

    // Fit feature conditioning (mask, then scaler) on training subjects only.
    std::vector<std::vector<double>> train_rows;
    if (plan.variant != "stv_only") {
        if (diagnet_features) {
            std::vector<ConnectomeFeatures> raw;
            raw.reserve(tr.size());
            for (int i : tr) raw.push_back(view.features(i));
            opts.mask = diagnet_mask(raw);
            for (const auto& r : raw) train_rows.push_back(apply_mask(r, *opts.mask));
        } else {
            for (int i : tr) train_rows.push_back(view.features(i));
        }
        opts.scaler = FeatureScaler::fit(train_rows);
    }
    const int64_t feat_dim = train_rows.empty() ? 0 : static_cast<int64_t>(train_rows[0].size());

    models::StvConfig stv = cfg.stv;
    stv.in_channels = static_cast<int64_t>(opts.channels.size());
    stv.grid_z = stv.grid_y = stv.grid_x = cfg.model_grid;

    if (plan.variant == "fc_mlp") {
        opts.want_features = true;
        model = models::build_baseline_fc_mlp(feat_dim, cfg.fc_mlp_hidden, cfg.dropout, model_seed);
    } else if (plan.variant == "diagnet") {
        opts.want_features = true;
        model = models::build_baseline_diagnet(feat_dim, cfg.diagnet_hidden, cfg.recon_weight,
                                               model_seed);
    } else {
        models::StoConfig sto;
        sto.stv = stv;
        sto.feature_dim = std::max<int64_t>(feat_dim, 2);
        sto.dropout = cfg.dropout;
        sto.recon_weight = cfg.recon_weight;
        sto.seed = model_seed;
        if (plan.variant == "sto") sto.variant = "vanilla";
        else if (plan.variant == "sto_diagnet") sto.variant = "diagnet";
        else if (plan.variant == "stv_only") sto.variant = "stv_only";
        else if (plan.variant == "str_only") sto.variant = "str_only";
        else throw InvalidConfig("unknown variant: " + plan.variant);
        model = models::build_sto(sto);
        opts.want_volumes = model->wants_volumes();
        opts.want_features = model->wants_features();
    }

    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, seed_tag::train_loop, task_tag);
    TrainResult tr_result = train(*model, view, tr, val, opts, tc);

    // Leakage audit: no test subject may have been touched before evaluation.
    // Reported-protocol selection (validate_on_test) reads the test fold during
    // training by design, so the check is waived there and the report says so.
    if (!cfg.validate_on_test)
        for (int i : fold.test)
            if (view.reads(i) != 0)
                throw InvalidTarget("leakage: test subject " + cohort.subjects[static_cast<size_t>(i)].id +
                                    " was read during training");

    std::vector<double> scores = evaluate(*model, view, fold.test, opts);
    std::vector<int> test_labels;
    for (int i : fold.test) test_labels.push_back(labels[static_cast<size_t>(i)]);

    TaskResult out;
    out.record.fold = fold_id;
    out.record.auc_value = auc(scores, test_labels);
    out.record.best_epoch = tr_result.best_epoch;
    for (int i : tr) out.record.train_ids.push_back(cohort.subjects[static_cast<size_t>(i)].id);
    for (int i : fold.test) out.record.test_ids.push_back(cohort.subjects[static_cast<size_t>(i)].id);
    out.trace = std::move(tr_result.trace);
    out.stats = model->stats();
    return out;
}

void summarize(RunRecord& run) {
    double sum = 0.0;
    for (const auto& f : run.folds) sum += f.auc_value;
    run.mean_auc = sum / static_cast<double>(run.folds.size());
    double ss = 0.0;
    for (const auto& f : run.folds) {
        const double d = f.auc_value - run.mean_auc;
        ss += d * d;
    }
    run.std_auc = run.folds.size() > 1
                      ? std::sqrt(ss / static_cast<double>(run.folds.size() - 1))
                      : 0.0;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const CohortTable& cohort) {
    cfg.validate();
    const std::vector<int> labels = cohort.labels();
    const std::vector<FoldSplit> folds = stratified_kfold(labels, cfg.folds, cfg.seed);

    // Integrity snapshot for the audit: cohort content must never change.
    std::vector<uint64_t> before;
    before.reserve(cohort.subjects.size());
    for (const auto& s : cohort.subjects) before.push_back(subject_content_hash(s));

    std::vector<RunPlan> plans;
    for (const std::string& v : cfg.table1_variants)
        for (double p : cfg.proportions) plans.push_back({v, "all", p, false});
    if (cfg.run_ablations) {
        for (const auto& [name, ch] : kChannelNames) {
            (void)ch;
            bool enabled = (name == "reho" && cfg.derivatives.use_reho) ||
                           (name == "dc" && cfg.derivatives.use_dc) ||
                           (name == "lfcd" && cfg.derivatives.use_lfcd) ||
                           (name == "vmhc" && cfg.derivatives.use_vmhc);
            if (enabled) plans.push_back({"sto", name, 1.0, true});
        }
        plans.push_back({"stv_only", "all", 1.0, true});
        plans.push_back({"str_only", "all", 1.0, true});
    }

    struct Task {
        size_t plan;
        int fold;
        uint64_t tag;
    };
    std::vector<Task> tasks;
    for (size_t p = 0; p < plans.size(); ++p)
        for (int f = 0; f < cfg.folds; ++f)
            tasks.push_back({p, f, static_cast<uint64_t>(p) * 1000 + static_cast<uint64_t>(f)});

    std::vector<TaskResult> results(tasks.size());
    std::vector<std::exception_ptr> errors(tasks.size());
    const int n_threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(tasks.size())));
    if (n_threads == 1) {
        for (size_t t = 0; t < tasks.size(); ++t)
            results[t] = run_fold(cfg, cohort, plans[tasks[t].plan],
                                  folds[static_cast<size_t>(tasks[t].fold)], tasks[t].fold,
                                  tasks[t].tag);
    } else {
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const size_t t = next.fetch_add(1);
                if (t >= tasks.size()) return;
                try {
                    results[t] = run_fold(cfg, cohort, plans[tasks[t].plan],
                                          folds[static_cast<size_t>(tasks[t].fold)], tasks[t].fold,
                                          tasks[t].tag);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    ExperimentReport report;
    report.flop_convention = models::ModelStats::flop_convention();
    for (size_t p = 0; p < plans.size(); ++p) {
        RunRecord run;
        run.variant = plans[p].variant;
        run.channels = plans[p].channels;
        run.proportion = plans[p].proportion;
        for (size_t t = 0; t < tasks.size(); ++t) {
            if (tasks[t].plan != p) continue;
            run.folds.push_back(results[t].record);
            run.traces.push_back(results[t].trace);
            run.stats = results[t].stats;
        }
        summarize(run);
        (plans[p].table2 ? report.table2 : report.table1).push_back(std::move(run));
    }
    // The full-stack run doubles as the "all channels" ablation row.
    if (cfg.run_ablations)
        for (const RunRecord& r : report.table1)
            if (r.variant == "sto" && r.proportion == 1.0) {
                RunRecord all = r;
                all.channels = "all";
                report.table2.insert(report.table2.begin(), std::move(all));
                break;
            }

    report.audit_passed = true;
    for (size_t i = 0; i < cohort.subjects.size(); ++i)
        if (subject_content_hash(cohort.subjects[i]) != before[i]) {
            report.audit_passed = false;
            report.audit_detail = "cohort content changed during the experiment";
        }
    if (report.audit_passed && cfg.validate_on_test) {
        report.audit_passed = false;
        report.audit_detail =
            "validate_on_test selected: model selection reads the test fold by design";
    }
    if (report.audit_passed) report.audit_detail = "test folds unread before evaluation; cohort content unchanged";
    return report;
}

// ---- Writers --------------------------------------------------------------------

namespace {

std::string fixed6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

nlohmann::json run_to_json(const RunRecord& run) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : run.folds)
        folds.push_back({{"fold", f.fold},
                         {"auc", f.auc_value},
                         {"best_epoch", f.best_epoch},
                         {"train_ids", f.train_ids},
                         {"test_ids", f.test_ids}});
    return {{"variant", run.variant},
            {"channels", run.channels},
            {"proportion", run.proportion},
            {"mean_auc", run.mean_auc},
            {"std_auc", run.std_auc},
            {"params", run.stats.params},
            {"flops", run.stats.flops},
            {"activation_bytes", run.stats.activation_bytes},
            {"folds", std::move(folds)}};
}

}  // namespace

void write_table1_csv(const std::string& path, const ExperimentReport& report) {
    std::ostringstream out;
    out << "variant,proportion,mean_auc,std_auc,params_m,gflops,memory_mb\n";
    for (const auto& r : report.table1)
        out << r.variant << "," << fixed6(r.proportion) << "," << fixed6(r.mean_auc) << ","
            << fixed6(r.std_auc) << "," << fixed6(static_cast<double>(r.stats.params) / 1e6) << ","
            << fixed6(static_cast<double>(r.stats.flops) / 1e9) << ","
            << fixed6(static_cast<double>(r.stats.activation_bytes) / (1024.0 * 1024.0)) << "\n";
    tabular::write_text_file(path, out.str());
}

void write_table2_csv(const std::string& path, const ExperimentReport& report) {
    std::ostringstream out;
    out << "variant,channels,mean_auc,std_auc\n";
    for (const auto& r : report.table2)
        out << r.variant << "," << r.channels << "," << fixed6(r.mean_auc) << ","
            << fixed6(r.std_auc) << "\n";
    tabular::write_text_file(path, out.str());
}

void write_report_json(const std::string& path, const ExperimentConfig& cfg,
                       const ExperimentReport& report) {
    nlohmann::json j;
    j["config"] = {{"seed", cfg.seed},
                   {"folds", cfg.folds},
                   {"proportions", cfg.proportions},
                   {"variants", cfg.table1_variants},
                   {"model_grid", cfg.model_grid},
                   {"subjects_per_class", cfg.synth.n_subjects_per_class},
                   {"effect_size", cfg.synth.effect_size},
                   {"lr", cfg.train.lr},
                   {"batch_size", cfg.train.batch_size},
                   {"max_epochs", cfg.train.max_epochs},
                   {"eval_every", cfg.train.eval_every},
                   {"validate_on_test", cfg.validate_on_test}};
    j["flop_convention"] = report.flop_convention;
    j["audit"] = {{"passed", report.audit_passed}, {"detail", report.audit_detail}};
    nlohmann::json t1 = nlohmann::json::array(), t2 = nlohmann::json::array();
    for (const auto& r : report.table1) t1.push_back(run_to_json(r));
    for (const auto& r : report.table2) t2.push_back(run_to_json(r));
    j["table1"] = std::move(t1);
    j["table2"] = std::move(t2);
    tabular::write_text_file(path, j.dump(2) + "\n");
}

void write_trace_csv(const std::string& path, const std::vector<TracePoint>& trace) {
    std::ostringstream out;
    out << "epoch,train_loss,val_auc\n";
    for (const auto& p : trace) {
        out << p.epoch << "," << tabular::format_double(p.train_loss) << ",";
        if (p.evaluated) out << tabular::format_double(p.val_auc);
        out << "\n";
    }
    tabular::write_text_file(path, out.str());
}

}  // namespace sto::pipeline
