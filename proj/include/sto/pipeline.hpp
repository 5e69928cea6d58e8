#pragma once

// Stratified cross-validation, the training loop, AUC, the leakage audit, and
// the experiment grid that mirrors the reported comparison/ablation tables on
// synthetic cohorts.

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sto/connectome.hpp"
#include "sto/derivatives.hpp"
#include "sto/models.hpp"
#include "sto/preprocess.hpp"
#include "sto/synth.hpp"

namespace sto::pipeline {

// ---- Splits -----------------------------------------------------------------

struct FoldSplit {
    std::vector<int> train, test;  // both ascending
};

// Per-class seeded shuffle, round-robin assignment of each class to test
// folds; per-fold class counts stay within one sample of exact proportion.
std::vector<FoldSplit> stratified_kfold(const std::vector<int>& labels, int k, uint64_t seed);

// Per-class reduction to round(count * proportion) members (at least one).
std::vector<int> subsample_train(const std::vector<int>& train, const std::vector<int>& labels,
                                 double proportion, uint64_t seed);

// Stratified carve-out: returns {reduced train, validation}.
std::pair<std::vector<int>, std::vector<int>> split_validation(const std::vector<int>& train,
                                                               const std::vector<int>& labels,
                                                               double val_fraction, uint64_t seed);

// Mann-Whitney AUC with midrank tie handling.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// ---- Cohort data ------------------------------------------------------------

struct SubjectRecord {
    std::string id;
    int label = 0;
    Volume3D deriv;                // derivative stack resampled to the model grid
    ConnectomeFeatures features;   // FC strict upper triangle
    uint64_t content_hash = 0;     // over deriv + features, frozen at build time
};

struct CohortTable {
    std::vector<SubjectRecord> subjects;
    int n_rois = 0;
    int64_t feature_dim = 0;
    std::vector<int> labels() const;
};

uint64_t subject_content_hash(const SubjectRecord& rec);

// Access-counting wrapper handed to training/evaluation so the leakage audit
// can assert that test-fold subjects are never read before evaluation.
class FoldView {
public:
    explicit FoldView(const CohortTable& cohort)
        : cohort_(&cohort),
          volume_reads_(cohort.subjects.size(), 0),
          feature_reads_(cohort.subjects.size(), 0) {}

    const Volume3D& deriv(int i) {
        ++volume_reads_[static_cast<size_t>(i)];
        return cohort_->subjects[static_cast<size_t>(i)].deriv;
    }
    const ConnectomeFeatures& features(int i) {
        ++feature_reads_[static_cast<size_t>(i)];
        return cohort_->subjects[static_cast<size_t>(i)].features;
    }
    int label(int i) const { return cohort_->subjects[static_cast<size_t>(i)].label; }
    const CohortTable& cohort() const { return *cohort_; }
    int64_t reads(int i) const {
        return volume_reads_[static_cast<size_t>(i)] + feature_reads_[static_cast<size_t>(i)];
    }

private:
    const CohortTable* cohort_;
    std::vector<int64_t> volume_reads_, feature_reads_;
};

// ---- Feature conditioning -----------------------------------------------------

struct FeatureScaler {
    std::vector<double> mean, std;
    static FeatureScaler fit(const std::vector<std::vector<double>>& rows);
    std::vector<double> apply(const std::vector<double>& x) const;
};

// How batches are assembled for one run: which tensors the model wants, which
// derivative channels feed the volume input, and the feature conditioning.
struct BatchOptions {
    bool want_volumes = false;
    bool want_features = false;
    std::vector<int> channels;  // indices into the derivative stack
    std::optional<QuartileMask> mask;  // applied to features before scaling
    FeatureScaler scaler;
    const AugmentSpec* augment = nullptr;  // training-time only
};

// ---- Training -----------------------------------------------------------------

struct TrainConfig {
    double lr = 1e-5;
    int batch_size = 8;
    int max_epochs = 100;
    int eval_every = 5;
    int early_stop_evals = 10;  // stop after this many evaluations without improvement
    uint64_t seed = 0;
};

struct TracePoint {
    int epoch = 0;
    double train_loss = 0.0;
    bool evaluated = false;
    double val_auc = 0.0;
};

struct TrainResult {
    std::vector<unsigned char> best_checkpoint;
    int best_epoch = -1;
    double best_val_auc = -1.0;
    std::vector<TracePoint> trace;
};

// Mini-batch Adam with periodic validation AUC; returns the best checkpoint
// (earliest epoch on ties) and leaves the model restored to it.
TrainResult train(models::Classifier& model, FoldView& view, const std::vector<int>& train_idx,
                  const std::vector<int>& val_idx, const BatchOptions& opts,
                  const TrainConfig& cfg);

// Probabilities for the given subjects, in order (eval mode).
std::vector<double> evaluate(models::Classifier& model, FoldView& view,
                             const std::vector<int>& idx, const BatchOptions& opts);

// ---- Experiment grid ------------------------------------------------------------

struct ExperimentConfig {
    SynthConfig synth;
    BandpassSpec bandpass;
    DerivativeSpec derivatives;
    int64_t model_grid = 32;         // resample target fed to the volumetric branch
    models::StvConfig stv;           // widths for the volumetric branch
    TrainConfig train;
    int folds = 5;
    double val_fraction = 0.2;
    bool validate_on_test = false;   // reported-protocol selection; leakage-free default
    std::vector<double> proportions = {1.0, 0.75, 0.5};
    std::vector<std::string> table1_variants = {"fc_mlp", "diagnet", "sto", "sto_diagnet"};
    bool run_ablations = true;       // single-derivative + single-branch table
    int64_t fc_mlp_hidden = 16;
    int64_t diagnet_hidden = 0;      // 0 = d/2 default
    double recon_weight = 1.0;
    double dropout = 0.2;
    bool use_augment = false;
    AugmentSpec augment;
    int threads = 1;
    uint64_t seed = 0;

    void validate() const;
};

// Paper-analogous defaults scaled down to finish a full grid in minutes on a
// desktop CPU; used by `reproduce --quick` and the acceptance run.
ExperimentConfig quick_preset(uint64_t seed);
// quick_preset with the class effect removed (no-signal control).
ExperimentConfig null_preset(uint64_t seed);

// Streaming synthesis: bandpass, derivatives, parcellation, features per
// subject; raw 4D volumes are never all held in memory at once.
CohortTable build_synthetic_cohort(const ExperimentConfig& cfg);

struct FoldRecord {
    int fold = 0;
    double auc_value = 0.0;
    int best_epoch = -1;
    std::vector<std::string> train_ids, test_ids;
};

struct RunRecord {
    std::string variant;       // fc_mlp | diagnet | sto | sto_diagnet | stv_only | str_only
    std::string channels;      // "all" or a single derivative name
    double proportion = 1.0;
    std::vector<FoldRecord> folds;
    double mean_auc = 0.0;
    double std_auc = 0.0;  // sample standard deviation across folds
    models::ModelStats stats;
    std::vector<std::vector<TracePoint>> traces;  // per fold
};

struct ExperimentReport {
    std::vector<RunRecord> table1;  // variant x proportion
    std::vector<RunRecord> table2;  // derivative/branch ablations at full proportion
    bool audit_passed = false;
    std::string audit_detail;
    std::string flop_convention;
};

ExperimentReport run_experiment(const ExperimentConfig& cfg, const CohortTable& cohort);

// Report writers (deterministic byte-for-byte given equal inputs).
void write_table1_csv(const std::string& path, const ExperimentReport& report);
void write_table2_csv(const std::string& path, const ExperimentReport& report);
void write_report_json(const std::string& path, const ExperimentConfig& cfg,
                       const ExperimentReport& report);
void write_trace_csv(const std::string& path, const std::vector<TracePoint>& trace);

}  // namespace sto::pipeline
