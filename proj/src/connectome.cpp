#include "sto/connectome.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sto/derivatives.hpp"

namespace sto {

AtlasVolume AtlasVolume::from_volume(const Volume3D& v) {
    AtlasVolume a;
    a.labels = v;
    double max_label = 0.0;
    for (double d : v.data) {
        if (d < 0.0 || d != std::floor(d))
            throw InvalidConfig("atlas labels must be non-negative integers");
        max_label = std::max(max_label, d);
    }
    a.n_rois = static_cast<int>(max_label);
    a.validate();
    return a;
}

void AtlasVolume::validate() const {
    if (n_rois < 1) throw InvalidConfig("atlas must define at least one ROI");
    std::vector<int64_t> counts(static_cast<size_t>(n_rois) + 1, 0);
    for (double d : labels.data) {
        auto l = static_cast<int64_t>(d);
        if (l < 0 || l > n_rois) throw InvalidConfig("atlas label outside 0..M");
        ++counts[static_cast<size_t>(l)];
    }
    for (int l = 1; l <= n_rois; ++l)
        if (counts[static_cast<size_t>(l)] == 0)
            throw EmptyRoi("atlas label " + std::to_string(l) + " has no voxels");
}

std::vector<double> RoiTimeseries::column(int64_t col) const {
    std::vector<double> out(static_cast<size_t>(t));
    for (int64_t r = 0; r < t; ++r) out[static_cast<size_t>(r)] = at(r, col);
    return out;
}

RoiTimeseries roi_mean_timeseries(const Volume4D& v, const AtlasVolume& atlas) {
    v.validate();
    atlas.validate();
    if (atlas.labels.nx != v.nx || atlas.labels.ny != v.ny || atlas.labels.nz != v.nz)
        throw ExtentMismatch("atlas extents do not match volume extents");

    const int64_t vox = v.voxels();
    const int64_t m = atlas.n_rois;
    std::vector<int64_t> counts(static_cast<size_t>(m), 0);
    for (int64_t i = 0; i < vox; ++i) {
        auto l = static_cast<int64_t>(atlas.labels.data[static_cast<size_t>(i)]);
        if (l > 0) ++counts[static_cast<size_t>(l - 1)];
    }
    for (int64_t j = 0; j < m; ++j)
        if (counts[static_cast<size_t>(j)] == 0)
            throw EmptyRoi("ROI " + std::to_string(j + 1) + " has no voxels");

    RoiTimeseries ts;
    ts.t = v.nt;
    ts.m = m;
    ts.data.assign(static_cast<size_t>(ts.t * ts.m), 0.0);
    for (int64_t t = 0; t < v.nt; ++t) {
        const double* frame = v.data.data() + t * vox;
        double* row = ts.data.data() + t * m;
        for (int64_t i = 0; i < vox; ++i) {
            auto l = static_cast<int64_t>(atlas.labels.data[static_cast<size_t>(i)]);
            if (l > 0) row[l - 1] += frame[i];
        }
        for (int64_t j = 0; j < m; ++j) row[j] /= static_cast<double>(counts[static_cast<size_t>(j)]);
    }
    return ts;
}

FcMatrix fc_matrix(const RoiTimeseries& ts) {
    if (ts.m < 2) throw ExtentMismatch("FC needs at least 2 ROIs");
    if (ts.t < 3) throw ExtentMismatch("FC needs at least 3 time points");

    // center and unit-normalize each column; degenerate columns become zero
    const int64_t t = ts.t, m = ts.m;
    std::vector<double> cols(static_cast<size_t>(t * m));
    for (int64_t j = 0; j < m; ++j) {
        double mean = 0.0;
        for (int64_t r = 0; r < t; ++r) mean += ts.at(r, j);
        mean /= static_cast<double>(t);
        double norm2 = 0.0;
        for (int64_t r = 0; r < t; ++r) {
            double d = ts.at(r, j) - mean;
            cols[static_cast<size_t>(j * t + r)] = d;
            norm2 += d * d;
        }
        if (norm2 < 1e-24) {
            for (int64_t r = 0; r < t; ++r) cols[static_cast<size_t>(j * t + r)] = 0.0;
        } else {
            double inv = 1.0 / std::sqrt(norm2);
            for (int64_t r = 0; r < t; ++r) cols[static_cast<size_t>(j * t + r)] *= inv;
        }
    }

    FcMatrix fc;
    fc.m = m;
    fc.data.assign(static_cast<size_t>(m * m), 0.0);
    for (int64_t i = 0; i < m; ++i) {
        fc.at(i, i) = 1.0;
        for (int64_t j = i + 1; j < m; ++j) {
            double c = 0.0;
            const double* a = cols.data() + i * t;
            const double* b = cols.data() + j * t;
            for (int64_t r = 0; r < t; ++r) c += a[r] * b[r];
            c = std::clamp(c, -1.0, 1.0);
            fc.at(i, j) = c;
            fc.at(j, i) = c;
        }
    }
    return fc;
}

ConnectomeFeatures upper_triangle(const FcMatrix& fc) {
    ConnectomeFeatures f;
    f.reserve(static_cast<size_t>(fc.m * (fc.m - 1) / 2));
    for (int64_t i = 0; i < fc.m; ++i)
        for (int64_t j = i + 1; j < fc.m; ++j) f.push_back(fc.at(i, j));
    return f;
}

FcMatrix from_upper_triangle(const ConnectomeFeatures& f) {
    // D = M(M-1)/2  =>  M = (1 + sqrt(1 + 8D)) / 2
    int64_t d = static_cast<int64_t>(f.size());
    int64_t m = static_cast<int64_t>((1.0 + std::sqrt(1.0 + 8.0 * static_cast<double>(d))) / 2.0 + 0.5);
    if (m * (m - 1) / 2 != d)
        throw LengthMismatch("feature length is not M(M-1)/2 for any integer M");
    FcMatrix fc;
    fc.m = m;
    fc.data.assign(static_cast<size_t>(m * m), 0.0);
    size_t k = 0;
    for (int64_t i = 0; i < m; ++i) {
        fc.at(i, i) = 1.0;
        for (int64_t j = i + 1; j < m; ++j) {
            fc.at(i, j) = f[k];
            fc.at(j, i) = f[k];
            ++k;
        }
    }
    return fc;
}

QuartileMask diagnet_mask(const std::vector<ConnectomeFeatures>& train_features) {
    if (train_features.empty()) throw LengthMismatch("diagnet_mask needs a non-empty training set");
    const size_t d = train_features[0].size();
    for (const auto& f : train_features)
        if (f.size() != d) throw LengthMismatch("feature vectors differ in length");

    std::vector<double> mean(d, 0.0);
    for (const auto& f : train_features)
        for (size_t i = 0; i < d; ++i) mean[i] += f[i];
    for (double& v : mean) v /= static_cast<double>(train_features.size());

    const size_t quarter = d / 4;
    std::vector<int64_t> by_desc(d), by_asc(d);
    std::iota(by_desc.begin(), by_desc.end(), 0);
    by_asc = by_desc;
    // ties break to the lower index in both quarters
    std::sort(by_desc.begin(), by_desc.end(), [&](int64_t a, int64_t b) {
        double ma = mean[static_cast<size_t>(a)], mb = mean[static_cast<size_t>(b)];
        return ma != mb ? ma > mb : a < b;
    });
    std::sort(by_asc.begin(), by_asc.end(), [&](int64_t a, int64_t b) {
        double ma = mean[static_cast<size_t>(a)], mb = mean[static_cast<size_t>(b)];
        return ma != mb ? ma < mb : a < b;
    });

    QuartileMask m;
    m.source_dim = static_cast<int64_t>(d);
    std::vector<uint8_t> taken(d, 0);
    for (size_t i = 0; i < quarter; ++i) {  // top quarter first
        m.indices.push_back(by_desc[i]);
        taken[static_cast<size_t>(by_desc[i])] = 1;
    }
    size_t picked = 0;  // bottom quarter, skipping anything the top already claimed
    for (size_t i = 0; i < d && picked < quarter; ++i) {
        if (taken[static_cast<size_t>(by_asc[i])]) continue;
        m.indices.push_back(by_asc[i]);
        ++picked;
    }
    std::sort(m.indices.begin(), m.indices.end());
    return m;
}

std::vector<double> apply_mask(const ConnectomeFeatures& f, const QuartileMask& m) {
    std::vector<double> out;
    out.reserve(m.indices.size());
    for (int64_t idx : m.indices) {
        if (idx < 0 || idx >= static_cast<int64_t>(f.size()))
            throw IndexOutOfBounds("mask index outside feature vector");
        out.push_back(f[static_cast<size_t>(idx)]);
    }
    return out;
}

}  // namespace sto
