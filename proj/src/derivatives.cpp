#include "sto/derivatives.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "sto/preprocess.hpp"

namespace sto {

void midranks(const std::vector<double>& values, std::vector<double>& ranks_out,
              double& tie_correction_out) {
    const size_t n = values.size();
    ranks_out.assign(n, 0.0);
    tie_correction_out = 0.0;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return values[a] < values[b]; });
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // average of 1-based ranks i+1..j+1
        for (size_t k = i; k <= j; ++k) ranks_out[order[k]] = rank;
        double t = static_cast<double>(j - i + 1);
        tie_correction_out += t * t * t - t;
        i = j + 1;
    }
}

double kendalls_w(const std::vector<std::vector<double>>& series_set) {
    const size_t k = series_set.size();
    if (k < 2) throw DegenerateSeries("kendalls_w needs at least 2 series");
    const size_t n = series_set[0].size();
    if (n < 2) throw DegenerateSeries("kendalls_w needs series of length >= 2");
    for (const auto& s : series_set)
        if (s.size() != n) throw LengthMismatch("kendalls_w series lengths differ");

    std::vector<double> rank_sum(n, 0.0);
    std::vector<double> ranks;
    double tie_total = 0.0;
    for (const auto& s : series_set) {
        double tc;
        midranks(s, ranks, tc);
        tie_total += tc;
        for (size_t i = 0; i < n; ++i) rank_sum[i] += ranks[i];
    }

    const double kd = static_cast<double>(k);
    const double nd = static_cast<double>(n);
    double mean = kd * (nd + 1.0) / 2.0;
    double s_stat = 0.0;
    for (double r : rank_sum) s_stat += (r - mean) * (r - mean);
    double denom = kd * kd * (nd * nd * nd - nd) - kd * tie_total;
    if (denom <= 0.0) return 0.0;  // every series fully tied in the same way
    double w = 12.0 * s_stat / denom;
    return std::clamp(w, 0.0, 1.0);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw LengthMismatch("pearson inputs differ in length");
    const size_t n = a.size();
    if (n < 2) throw DegenerateSeries("pearson needs length >= 2");
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa < 1e-24 || sbb < 1e-24) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

// In-mask voxel series centered and scaled to unit L2 norm, so that dot
// products are Pearson correlations. Degenerate series become zero vectors
// (correlate as 0 with everything). Rows are in-mask voxels in scan order.
struct NormalizedSeries {
    std::vector<int64_t> voxel_of_row;   // row -> flat voxel index
    std::vector<int64_t> row_of_voxel;   // flat voxel index -> row, -1 if out of mask
    std::vector<double> rows;            // [n_rows x T], voxel-major
    std::vector<double> cols;            // [T x n_rows], time-major (for the DC sweep)
    int64_t n_rows = 0;
    int64_t t = 0;

    const double* row(int64_t r) const { return rows.data() + r * t; }
};

NormalizedSeries normalize_series(const Volume4D& v, const MaskVolume& mask) {
    NormalizedSeries ns;
    ns.t = v.nt;
    const int64_t vox = v.voxels();
    ns.row_of_voxel.assign(static_cast<size_t>(vox), -1);
    for (int64_t i = 0; i < vox; ++i)
        if (mask.data[static_cast<size_t>(i)]) {
            ns.row_of_voxel[static_cast<size_t>(i)] = ns.n_rows++;
            ns.voxel_of_row.push_back(i);
        }
    ns.rows.assign(static_cast<size_t>(ns.n_rows * ns.t), 0.0);
    for (int64_t r = 0; r < ns.n_rows; ++r) {
        const int64_t base = ns.voxel_of_row[static_cast<size_t>(r)];
        double* dst = ns.rows.data() + r * ns.t;
        double mean = 0.0;
        for (int64_t t = 0; t < ns.t; ++t) {
            dst[t] = v.data[static_cast<size_t>(base + t * vox)];
            mean += dst[t];
        }
        mean /= static_cast<double>(ns.t);
        double norm2 = 0.0;
        for (int64_t t = 0; t < ns.t; ++t) {
            dst[t] -= mean;
            norm2 += dst[t] * dst[t];
        }
        if (norm2 < 1e-24) {
            for (int64_t t = 0; t < ns.t; ++t) dst[t] = 0.0;
        } else {
            double inv = 1.0 / std::sqrt(norm2);
            for (int64_t t = 0; t < ns.t; ++t) dst[t] *= inv;
        }
    }
    ns.cols.assign(static_cast<size_t>(ns.n_rows * ns.t), 0.0);
    for (int64_t r = 0; r < ns.n_rows; ++r)
        for (int64_t t = 0; t < ns.t; ++t)
            ns.cols[static_cast<size_t>(t * ns.n_rows + r)] = ns.rows[static_cast<size_t>(r * ns.t + t)];
    return ns;
}

std::vector<std::array<int, 3>> neighborhood_offsets(int size) {
    std::vector<std::array<int, 3>> offs;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (size == 7 && l1 > 1) continue;
                if (size == 19 && l1 > 2) continue;
                offs.push_back({dx, dy, dz});
            }
    return offs;
}

void check_inputs(const Volume4D& v, const MaskVolume& mask) {
    v.validate();
    mask.check_matches(v.nx, v.ny, v.nz);
}

}  // namespace

Volume3D reho(const Volume4D& v, const MaskVolume& mask, const DerivativeSpec& spec) {
    check_inputs(v, mask);
    spec.validate();
    const auto offs = neighborhood_offsets(spec.reho_neighborhood);
    const int64_t vox = v.voxels();
    const int64_t t = v.nt;

    // Per-voxel midranks over time, computed once.
    std::vector<double> all_ranks(static_cast<size_t>(vox * t), 0.0);
    std::vector<double> tie_corr(static_cast<size_t>(vox), 0.0);
    std::vector<double> series(static_cast<size_t>(t));
    std::vector<double> ranks;
    for (int64_t i = 0; i < vox; ++i) {
        if (!mask.data[static_cast<size_t>(i)]) continue;
        for (int64_t tt = 0; tt < t; ++tt) series[static_cast<size_t>(tt)] = v.data[static_cast<size_t>(i + tt * vox)];
        double tc;
        midranks(series, ranks, tc);
        std::copy(ranks.begin(), ranks.end(), all_ranks.begin() + i * t);
        tie_corr[static_cast<size_t>(i)] = tc;
    }

    Volume3D out(v.nx, v.ny, v.nz, 1);
    out.spacing_mm = v.spacing_mm;
    std::vector<double> rank_sum(static_cast<size_t>(t));
    for (int64_t z = 0; z < v.nz; ++z)
        for (int64_t y = 0; y < v.ny; ++y)
            for (int64_t x = 0; x < v.nx; ++x) {
                if (!mask.in(x, y, z)) continue;
                std::fill(rank_sum.begin(), rank_sum.end(), 0.0);
                int64_t k = 0;
                double tie_total = 0.0;
                for (const auto& o : offs) {
                    int64_t nx_ = x + o[0], ny_ = y + o[1], nz_ = z + o[2];
                    if (nx_ < 0 || nx_ >= v.nx || ny_ < 0 || ny_ >= v.ny || nz_ < 0 || nz_ >= v.nz)
                        continue;
                    if (!mask.in(nx_, ny_, nz_)) continue;
                    int64_t idx = mask.index(nx_, ny_, nz_);
                    const double* r = all_ranks.data() + idx * t;
                    for (int64_t tt = 0; tt < t; ++tt) rank_sum[static_cast<size_t>(tt)] += r[tt];
                    tie_total += tie_corr[static_cast<size_t>(idx)];
                    ++k;
                }
                if (k < 2) continue;  // isolated voxel: ReHo = 0
                const double kd = static_cast<double>(k);
                const double nd = static_cast<double>(t);
                double mean = kd * (nd + 1.0) / 2.0;
                double s_stat = 0.0;
                for (double r : rank_sum) s_stat += (r - mean) * (r - mean);
                double denom = kd * kd * (nd * nd * nd - nd) - kd * tie_total;
                out.at(x, y, z) = denom <= 0.0 ? 0.0 : std::clamp(12.0 * s_stat / denom, 0.0, 1.0);
            }
    return out;
}

Volume3D degree_centrality(const Volume4D& v, const MaskVolume& mask, const DerivativeSpec& spec) {
    check_inputs(v, mask);
    spec.validate();
    if (mask.count() < 2) throw ExtentMismatch("degree centrality needs at least 2 in-mask voxels");
    NormalizedSeries ns = normalize_series(v, mask);

    Volume3D out(v.nx, v.ny, v.nz, 1);
    out.spacing_mm = v.spacing_mm;
    const double thr = spec.correlation_threshold;
    // Row-at-a-time sweep keeps working memory at O(V): one correlation row,
    // computed as a vector-matrix product against the time-major copy. The
    // per-pair reduction runs in ascending time order.
    std::vector<double> corr(static_cast<size_t>(ns.n_rows));
    for (int64_t r = 0; r < ns.n_rows; ++r) {
        std::fill(corr.begin(), corr.end(), 0.0);
        const double* zi = ns.row(r);
        for (int64_t t = 0; t < ns.t; ++t) {
            const double zit = zi[t];
            const double* col = ns.cols.data() + t * ns.n_rows;
            for (int64_t j = 0; j < ns.n_rows; ++j) corr[static_cast<size_t>(j)] += zit * col[j];
        }
        double acc = 0.0;
        for (int64_t j = 0; j < ns.n_rows; ++j) {
            if (j == r) continue;  // self excluded
            double c = corr[static_cast<size_t>(j)];
            if (c > thr) acc += spec.dc_weighted ? c : 1.0;
        }
        out.data[static_cast<size_t>(ns.voxel_of_row[static_cast<size_t>(r)])] = acc;
    }
    return out;
}

Volume3D lfcd(const Volume4D& v, const MaskVolume& mask, const DerivativeSpec& spec) {
    check_inputs(v, mask);
    spec.validate();
    NormalizedSeries ns = normalize_series(v, mask);

    const int64_t dxs[6] = {1, -1, 0, 0, 0, 0};
    const int64_t dys[6] = {0, 0, 1, -1, 0, 0};
    const int64_t dzs[6] = {0, 0, 0, 0, 1, -1};

    Volume3D out(v.nx, v.ny, v.nz, 1);
    out.spacing_mm = v.spacing_mm;
    std::vector<uint8_t> visited(static_cast<size_t>(v.voxels()));
    std::deque<int64_t> frontier;

    for (int64_t seed_row = 0; seed_row < ns.n_rows; ++seed_row) {
        const int64_t seed_voxel = ns.voxel_of_row[static_cast<size_t>(seed_row)];
        const double* zs = ns.row(seed_row);
        std::fill(visited.begin(), visited.end(), 0);
        visited[static_cast<size_t>(seed_voxel)] = 1;
        frontier.clear();
        frontier.push_back(seed_voxel);
        int64_t cluster = 1;  // the seed counts itself
        while (!frontier.empty()) {
            int64_t cur = frontier.front();
            frontier.pop_front();
            int64_t cz = cur / (v.nx * v.ny);
            int64_t cy = (cur / v.nx) % v.ny;
            int64_t cx = cur % v.nx;
            for (int d = 0; d < 6; ++d) {
                int64_t nx_ = cx + dxs[d], ny_ = cy + dys[d], nz_ = cz + dzs[d];
                if (nx_ < 0 || nx_ >= v.nx || ny_ < 0 || ny_ >= v.ny || nz_ < 0 || nz_ >= v.nz)
                    continue;
                int64_t nidx = mask.index(nx_, ny_, nz_);
                if (visited[static_cast<size_t>(nidx)]) continue;
                visited[static_cast<size_t>(nidx)] = 1;  // test each voxel once per seed
                int64_t nrow = ns.row_of_voxel[static_cast<size_t>(nidx)];
                if (nrow < 0) continue;  // out of mask
                const double* zn = ns.row(nrow);
                double c = 0.0;
                for (int64_t t = 0; t < ns.t; ++t) c += zs[t] * zn[t];
                if (c > spec.correlation_threshold) {
                    ++cluster;
                    frontier.push_back(nidx);
                }
            }
        }
        out.data[static_cast<size_t>(seed_voxel)] = static_cast<double>(cluster - 1);
    }
    return out;
}

Volume3D vmhc(const Volume4D& v, const MaskVolume& mask) {
    check_inputs(v, mask);
    NormalizedSeries ns = normalize_series(v, mask);

    Volume3D out(v.nx, v.ny, v.nz, 1);
    out.spacing_mm = v.spacing_mm;
    for (int64_t z = 0; z < v.nz; ++z)
        for (int64_t y = 0; y < v.ny; ++y)
            for (int64_t x = 0; x < v.nx; ++x) {
                if (!mask.in(x, y, z)) continue;
                int64_t mirror_x = v.nx - 1 - x;
                if (!mask.in(mirror_x, y, z)) continue;  // mirror out of mask: 0
                int64_t ra = ns.row_of_voxel[static_cast<size_t>(mask.index(x, y, z))];
                int64_t rb = ns.row_of_voxel[static_cast<size_t>(mask.index(mirror_x, y, z))];
                const double* za = ns.row(ra);
                const double* zb = ns.row(rb);
                double c = 0.0;
                for (int64_t t = 0; t < ns.t; ++t) c += za[t] * zb[t];
                out.at(x, y, z) = std::clamp(c, -1.0, 1.0);
            }
    return out;
}

Volume3D derivative_stack(const Volume4D& v, const MaskVolume& mask, const DerivativeSpec& spec) {
    check_inputs(v, mask);
    spec.validate();

    std::vector<Volume3D> maps;
    if (spec.use_reho) maps.push_back(reho(v, mask, spec));
    if (spec.use_dc) maps.push_back(degree_centrality(v, mask, spec));
    if (spec.use_lfcd) maps.push_back(lfcd(v, mask, spec));
    if (spec.use_vmhc) maps.push_back(vmhc(v, mask));

    const int64_t vox = v.voxels();
    Volume3D out(v.nx, v.ny, v.nz, static_cast<int64_t>(maps.size()));
    out.spacing_mm = v.spacing_mm;
    for (size_t c = 0; c < maps.size(); ++c) {
        // z-normalize over in-mask voxels only
        double mean = 0.0;
        int64_t n = 0;
        for (int64_t i = 0; i < vox; ++i)
            if (mask.data[static_cast<size_t>(i)]) {
                mean += maps[c].data[static_cast<size_t>(i)];
                ++n;
            }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t i = 0; i < vox; ++i)
            if (mask.data[static_cast<size_t>(i)]) {
                double d = maps[c].data[static_cast<size_t>(i)] - mean;
                var += d * d;
            }
        double sd = std::sqrt(var / static_cast<double>(n));
        double inv = sd < 1e-12 ? 0.0 : 1.0 / sd;
        double* dst = out.data.data() + static_cast<int64_t>(c) * vox;
        for (int64_t i = 0; i < vox; ++i)
            dst[i] = mask.data[static_cast<size_t>(i)]
                         ? (maps[c].data[static_cast<size_t>(i)] - mean) * inv
                         : 0.0;
    }
    return out;
}

}  // namespace sto
