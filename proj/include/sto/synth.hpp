// Synthetic 4D cohorts with planted group differences.
//
// Each subject is built from per-block latent signals plus AR(1) voxel noise.
// Blocks are axis-aligned cuboids tiling a central region; designated block
// pairs (x-mirror partners in the block grid) receive class-dependent latent
// coupling: class 0 couples at base_coupling, class 1 at base_coupling +
// effect_size. That plants recoverable differences in functional connectivity
// (the designated ROI edges), in voxel-level correlation statistics (DC,
// LFCD), and in mirrored-voxel correlation (VMHC).
//
// Generation is deterministic: subject i draws everything from
// derive_seed(seed, synth_subject, i), so subjects can be produced
// independently and in parallel. For effect_size >= 0.3 the planted FC edge
// separates the classes with a two-sample t-statistic above 3 at 40 subjects
// per class (asserted in the test suite).
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sto/connectome.hpp"
#include "sto/volume.hpp"

namespace sto {

struct SynthConfig {
    int n_subjects_per_class = 40;
    int64_t nx = 24, ny = 24, nz = 24;
    int t = 120;
    int t_min = 0, t_max = 0;  // if t_max > 0, per-subject T is drawn uniformly in [t_min, t_max]
    double tr_seconds = 2.0;
    int n_blocks = 12;
    double ar_coefficient = 0.4;
    double effect_size = 0.8;
    double base_coupling = 0.0;
    double noise_scale = 1.0;   // AR(1) marginal std relative to unit latent amplitude
    double baseline = 100.0;    // constant intensity offset
    uint64_t seed = 0;

    void validate() const {
        if (n_subjects_per_class < 1) throw InvalidConfig("need at least 1 subject per class");
        if (nx < 8 || ny < 8 || nz < 8) throw InvalidConfig("extents must be >= 8 per axis");
        if (n_blocks < 2) throw InvalidConfig("n_blocks must be >= 2");
        if (effect_size < 0.0) throw InvalidConfig("effect_size must be >= 0");
        if (!(ar_coefficient >= 0.0) || !(ar_coefficient < 1.0))
            throw InvalidConfig("ar_coefficient must lie in [0, 1)");
        if (t_max > 0 && (t_min < 8 || t_min > t_max))
            throw InvalidConfig("t range requires 8 <= t_min <= t_max");
        if (t_max == 0 && t < 8) throw InvalidConfig("t must be >= 8");
        if (!(tr_seconds > 0.0)) throw InvalidConfig("tr_seconds must be positive");
        if (base_coupling < 0.0 || base_coupling + effect_size > 0.99)
            throw InvalidConfig("couplings must stay within [0, 0.99]");
    }
};

struct SynthCohort {
    std::vector<Volume4D> volumes;
    std::vector<int> labels;  // 0 or 1, one per subject
    AtlasVolume atlas;
    MaskVolume mask;
    std::vector<std::pair<int, int>> coupled_roi_pairs;  // 1-based ROI labels
};

int total_subjects(const SynthConfig& cfg);
int subject_label(const SynthConfig& cfg, int subject_index);
std::string subject_id(int subject_index);

AtlasVolume make_atlas(const SynthConfig& cfg);
MaskVolume make_mask(const SynthConfig& cfg);
std::vector<std::pair<int, int>> designated_pairs(const SynthConfig& cfg);

// One subject's 4D volume; deterministic in (cfg.seed, subject_index).
Volume4D generate_subject(const SynthConfig& cfg, int subject_index);

// The whole cohort in memory (small configurations / tests).
SynthCohort generate_cohort(const SynthConfig& cfg);

}  // namespace sto
