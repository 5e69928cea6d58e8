// Voxelwise 3D time-domain derivatives: Regional Homogeneity (Kendall's W
// over a voxel neighborhood), Degree Centrality (suprathreshold whole-brain
// correlation count), Local Functional Connectivity Density (seed-correlated
// face-connected cluster size), and Voxel-Mirrored Homotopic Connectivity
// (correlation with the x-mirrored voxel).
#pragma once

#include <vector>

#include "sto/common.hpp"
#include "sto/volume.hpp"

namespace sto {

enum class DerivativeChannel { ReHo = 0, DC = 1, LFCD = 2, VMHC = 3 };

struct DerivativeSpec {
    int reho_neighborhood = 27;           // 7 (faces), 19 (faces+edges), or 27 (full cube)
    double correlation_threshold = 0.25;  // shared by DC and LFCD
    bool dc_weighted = false;             // false = binarized count, true = sum of suprathreshold r
    // channel selection for ablations; emitted order is always ReHo, DC, LFCD, VMHC
    bool use_reho = true, use_dc = true, use_lfcd = true, use_vmhc = true;

    void validate() const {
        if (reho_neighborhood != 7 && reho_neighborhood != 19 && reho_neighborhood != 27)
            throw InvalidConfig("reho_neighborhood must be 7, 19, or 27");
        if (!(correlation_threshold > -1.0) || !(correlation_threshold < 1.0))
            throw InvalidConfig("correlation_threshold must lie in (-1, 1)");
        if (!use_reho && !use_dc && !use_lfcd && !use_vmhc)
            throw InvalidConfig("at least one derivative channel must be enabled");
    }

    int enabled_channels() const {
        return (use_reho ? 1 : 0) + (use_dc ? 1 : 0) + (use_lfcd ? 1 : 0) + (use_vmhc ? 1 : 0);
    }
};

// Kendall's coefficient of concordance over K series of length n, ranking
// time points within each series. Midranks for ties, with the standard tie
// correction subtracted from the denominator. Result in [0, 1].
double kendalls_w(const std::vector<std::vector<double>>& series_set);

// Midranks (1-based, ties averaged) plus the tie-correction term sum(t^3 - t).
void midranks(const std::vector<double>& values, std::vector<double>& ranks_out,
              double& tie_correction_out);

Volume3D reho(const Volume4D& v, const MaskVolume& mask, const DerivativeSpec& spec);
Volume3D degree_centrality(const Volume4D& v, const MaskVolume& mask, const DerivativeSpec& spec);
Volume3D lfcd(const Volume4D& v, const MaskVolume& mask, const DerivativeSpec& spec);
Volume3D vmhc(const Volume4D& v, const MaskVolume& mask);

// All enabled derivatives, each z-normalized over in-mask voxels, stacked as
// channels (out-of-mask voxels exactly 0).
Volume3D derivative_stack(const Volume4D& v, const MaskVolume& mask, const DerivativeSpec& spec);

// Pearson correlation with the degenerate-series convention: zero-variance
// inputs correlate as 0 rather than NaN.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace sto
