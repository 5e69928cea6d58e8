// ROI parcellation, functional connectivity, feature extraction, and the
// top/bottom-quartile feature selection used by the DiagNet-style variants.
#pragma once

#include <cstdint>
#include <vector>

#include "sto/common.hpp"
#include "sto/volume.hpp"

namespace sto {

// Integer label volume; 0 = background, labels 1..n_rois each occur at least once.
struct AtlasVolume {
    Volume3D labels;  // values are whole numbers stored as doubles
    int n_rois = 0;

    static AtlasVolume from_volume(const Volume3D& v);
    void validate() const;
};

// T x M matrix, row per time point, column per ROI. Row-major.
struct RoiTimeseries {
    int64_t t = 0;
    int64_t m = 0;
    std::vector<double> data;

    double& at(int64_t row, int64_t col) { return data[static_cast<size_t>(row * m + col)]; }
    double at(int64_t row, int64_t col) const { return data[static_cast<size_t>(row * m + col)]; }
    std::vector<double> column(int64_t col) const;
};

// M x M Pearson correlation matrix: symmetric, unit diagonal.
struct FcMatrix {
    int64_t m = 0;
    std::vector<double> data;

    double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * m + j)]; }
    double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * m + j)]; }
};

using ConnectomeFeatures = std::vector<double>;  // strict upper triangle, length M(M-1)/2

struct QuartileMask {
    std::vector<int64_t> indices;  // sorted, unique; |indices| = 2*floor(D/4)
    int64_t source_dim = 0;        // D of the feature vectors the mask was built from
};

RoiTimeseries roi_mean_timeseries(const Volume4D& v, const AtlasVolume& atlas);
FcMatrix fc_matrix(const RoiTimeseries& ts);
ConnectomeFeatures upper_triangle(const FcMatrix& fc);

// Reconstruct the full symmetric unit-diagonal matrix from its upper triangle.
FcMatrix from_upper_triangle(const ConnectomeFeatures& f);

// Element-wise mean over TRAINING subjects; indices of the floor(D/4) largest
// and floor(D/4) smallest means, merged and sorted. Ties break to the lower index.
QuartileMask diagnet_mask(const std::vector<ConnectomeFeatures>& train_features);

std::vector<double> apply_mask(const ConnectomeFeatures& f, const QuartileMask& m);

}  // namespace sto
