#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "sto/common.hpp"
#include "sto/derivatives.hpp"

using namespace sto;

namespace {

// ---- Independent references (deliberately naive) ---------------------------------

double ref_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double saa = 0, sbb = 0, sab = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    if (saa <= 0 || sbb <= 0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

// Rank a series with midranks for ties (1-based).
std::vector<double> ref_ranks(const std::vector<double>& s) {
    const size_t n = s.size();
    std::vector<double> r(n);
    for (size_t i = 0; i < n; ++i) {
        size_t below = 0, equal = 0;
        for (size_t j = 0; j < n; ++j) {
            if (s[j] < s[i]) ++below;
            if (s[j] == s[i]) ++equal;
        }
        r[i] = static_cast<double>(below) + 0.5 * static_cast<double>(equal + 1);
    }
    return r;
}

// Kendall's W straight from the textbook definition, with tie correction.
double ref_kendalls_w(const std::vector<std::vector<double>>& set) {
    const double k = static_cast<double>(set.size());
    const size_t n = set[0].size();
    std::vector<double> rank_sum(n, 0.0);
    double ties = 0.0;
    for (const auto& s : set) {
        std::vector<double> r = ref_ranks(s);
        for (size_t i = 0; i < n; ++i) rank_sum[i] += r[i];
        // tie correction: sum over tie groups of t^3 - t
        std::vector<double> sorted(s);
        std::sort(sorted.begin(), sorted.end());
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
            double t = static_cast<double>(j - i + 1);
            ties += t * t * t - t;
            i = j + 1;
        }
    }
    const double nd = static_cast<double>(n);
    double mean = k * (nd + 1.0) / 2.0;
    double s_stat = 0.0;
    for (double r : rank_sum) s_stat += (r - mean) * (r - mean);
    double denom = k * k * (nd * nd * nd - nd) - k * ties;
    if (denom <= 0.0) return 0.0;
    return std::clamp(12.0 * s_stat / denom, 0.0, 1.0);
}

std::vector<double> series_at(const Volume4D& v, int64_t x, int64_t y, int64_t z) {
    std::vector<double> s(static_cast<size_t>(v.nt));
    for (int64_t t = 0; t < v.nt; ++t) s[static_cast<size_t>(t)] = v.at(x, y, z, t);
    return s;
}

Volume4D seeded_volume(uint64_t seed, int64_t n, int64_t t) {
    Volume4D v(n, n, n, t);
    Rng rng(seed);
    for (double& d : v.data) d = rng.next_gaussian();
    return v;
}

MaskVolume full_mask(int64_t n) {
    MaskVolume m(n, n, n);
    std::fill(m.data.begin(), m.data.end(), 1);
    return m;
}

}  // namespace

TEST_CASE("midranks handles ties with averaged ranks") {
    std::vector<double> vals{3.0, 1.0, 3.0, 2.0};
    std::vector<double> ranks;
    double tc = 0.0;
    midranks(vals, ranks, tc);
    CHECK(ranks == std::vector<double>{3.5, 1.0, 3.5, 2.0});
    CHECK(tc == doctest::Approx(6.0));  // one group of 2: 2^3 - 2
}

TEST_CASE("kendalls_w matches the brute-force definition on random data") {
    Rng rng(21);
    for (int rep = 0; rep < 50; ++rep) {
        const size_t k = 2 + rng.next_below(6);
        const size_t n = 3 + rng.next_below(10);
        std::vector<std::vector<double>> set(k, std::vector<double>(n));
        for (auto& s : set)
            for (double& v : s) {
                v = rng.next_gaussian();
                if (rng.next_double() < 0.3) v = std::round(v);  // induce ties
            }
        CHECK(kendalls_w(set) == doctest::Approx(ref_kendalls_w(set)).epsilon(1e-12));
    }
}

TEST_CASE("kendalls_w known values") {
    // identical rankings -> perfect concordance
    std::vector<std::vector<double>> same{{1, 2, 3, 4}, {10, 20, 30, 40}, {0.1, 0.2, 0.3, 0.4}};
    CHECK(kendalls_w(same) == doctest::Approx(1.0));
    // two exactly reversed rankings -> W = 0
    std::vector<std::vector<double>> opposed{{1, 2, 3, 4}, {4, 3, 2, 1}};
    CHECK(kendalls_w(opposed) == doctest::Approx(0.0));
    CHECK_THROWS_AS(kendalls_w({{1.0, 2.0}}), DegenerateSeries);
    CHECK_THROWS_AS(kendalls_w({{1.0, 2.0}, {1.0}}), LengthMismatch);
}

TEST_CASE("pearson matches reference and clamps degenerate input") {
    Rng rng(22);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> a(15), b(15);
        for (size_t i = 0; i < a.size(); ++i) {
            a[i] = rng.next_gaussian();
            b[i] = 0.5 * a[i] + rng.next_gaussian();
        }
        CHECK(pearson(a, b) == doctest::Approx(ref_pearson(a, b)).epsilon(1e-12));
    }
    std::vector<double> flat(10, 3.0), other(10);
    for (size_t i = 0; i < 10; ++i) other[i] = static_cast<double>(i);
    CHECK(pearson(flat, other) == 0.0);
    CHECK_THROWS_AS(pearson({1.0}, {2.0}), DegenerateSeries);
    CHECK_THROWS_AS(pearson({1.0, 2.0}, {1.0, 2.0, 3.0}), LengthMismatch);
}

TEST_CASE("reho matches per-voxel Kendall W over the in-bounds neighborhood") {
    const int64_t n = 6, t = 20;
    Volume4D v = seeded_volume(23, n, t);
    MaskVolume mask = full_mask(n);
    mask.set(2, 2, 2, false);  // a hole exercises the in-mask filtering

    for (int nbhd : {7, 19, 27}) {
        DerivativeSpec spec;
        spec.reho_neighborhood = nbhd;
        Volume3D r = reho(v, mask, spec);
        for (int64_t z = 0; z < n; ++z)
            for (int64_t y = 0; y < n; ++y)
                for (int64_t x = 0; x < n; ++x) {
                    if (!mask.in(x, y, z)) {
                        CHECK(r.at(x, y, z) == 0.0);
                        continue;
                    }
                    std::vector<std::vector<double>> hood;
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                int l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
                                if (nbhd == 7 && l1 > 1) continue;
                                if (nbhd == 19 && l1 > 2) continue;
                                int64_t xx = x + dx, yy = y + dy, zz = z + dz;
                                if (xx < 0 || xx >= n || yy < 0 || yy >= n || zz < 0 || zz >= n)
                                    continue;
                                if (!mask.in(xx, yy, zz)) continue;
                                hood.push_back(series_at(v, xx, yy, zz));
                            }
                    const double expect = hood.size() < 2 ? 0.0 : ref_kendalls_w(hood);
                    CHECK(r.at(x, y, z) == doctest::Approx(expect).epsilon(1e-10));
                }
    }
}

TEST_CASE("degree centrality equals brute-force pair counting") {
    const int64_t n = 6, t = 20;
    Volume4D v = seeded_volume(24, n, t);
    MaskVolume mask = full_mask(n);
    mask.set(0, 0, 0, false);

    DerivativeSpec spec;
    spec.correlation_threshold = 0.25;

    SUBCASE("binary counts are exact integers") {
        Volume3D dc = degree_centrality(v, mask, spec);
        for (int64_t z = 0; z < n; ++z)
            for (int64_t y = 0; y < n; ++y)
                for (int64_t x = 0; x < n; ++x) {
                    if (!mask.in(x, y, z)) {
                        CHECK(dc.at(x, y, z) == 0.0);
                        continue;
                    }
                    double count = 0;
                    std::vector<double> a = series_at(v, x, y, z);
                    for (int64_t z2 = 0; z2 < n; ++z2)
                        for (int64_t y2 = 0; y2 < n; ++y2)
                            for (int64_t x2 = 0; x2 < n; ++x2) {
                                if (!mask.in(x2, y2, z2)) continue;
                                if (x2 == x && y2 == y && z2 == z) continue;
                                if (ref_pearson(a, series_at(v, x2, y2, z2)) > 0.25) count += 1.0;
                            }
                    CHECK(dc.at(x, y, z) == count);  // exact: integer count
                }
    }

    SUBCASE("weighted sums match to 1e-10") {
        spec.dc_weighted = true;
        Volume3D dc = degree_centrality(v, mask, spec);
        for (int64_t z = 0; z < n; z += 2)
            for (int64_t y = 0; y < n; y += 2)
                for (int64_t x = 0; x < n; x += 2) {
                    if (!mask.in(x, y, z)) continue;
                    double acc = 0;
                    std::vector<double> a = series_at(v, x, y, z);
                    for (int64_t z2 = 0; z2 < n; ++z2)
                        for (int64_t y2 = 0; y2 < n; ++y2)
                            for (int64_t x2 = 0; x2 < n; ++x2) {
                                if (!mask.in(x2, y2, z2)) continue;
                                if (x2 == x && y2 == y && z2 == z) continue;
                                double r = ref_pearson(a, series_at(v, x2, y2, z2));
                                if (r > 0.25) acc += r;
                            }
                    CHECK(dc.at(x, y, z) == doctest::Approx(acc).epsilon(1e-10));
                }
    }
}

TEST_CASE("lfcd equals the face-connected suprathreshold component size") {
    const int64_t n = 6, t = 20;
    Volume4D v = seeded_volume(25, n, t);
    MaskVolume mask = full_mask(n);
    mask.set(3, 3, 3, false);

    DerivativeSpec spec;
    spec.correlation_threshold = 0.25;
    Volume3D l = lfcd(v, mask, spec);

    for (int64_t z = 0; z < n; ++z)
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x) {
                if (!mask.in(x, y, z)) {
                    CHECK(l.at(x, y, z) == 0.0);
                    continue;
                }
                // reference: connected component (face adjacency) of voxels
                // correlated with the seed above threshold, grown exhaustively
                std::vector<double> seed = series_at(v, x, y, z);
                std::vector<int64_t> stack{x + n * (y + n * z)};
                std::vector<uint8_t> in_comp(static_cast<size_t>(n * n * n), 0);
                in_comp[static_cast<size_t>(x + n * (y + n * z))] = 1;
                size_t head = 0;
                int64_t count = 0;
                while (head < stack.size()) {
                    int64_t cur = stack[head++];
                    int64_t cz = cur / (n * n), cy = (cur / n) % n, cx = cur % n;
                    const int64_t dx[6] = {1, -1, 0, 0, 0, 0};
                    const int64_t dy[6] = {0, 0, 1, -1, 0, 0};
                    const int64_t dz[6] = {0, 0, 0, 0, 1, -1};
                    for (int d = 0; d < 6; ++d) {
                        int64_t xx = cx + dx[d], yy = cy + dy[d], zz = cz + dz[d];
                        if (xx < 0 || xx >= n || yy < 0 || yy >= n || zz < 0 || zz >= n) continue;
                        int64_t idx = xx + n * (yy + n * zz);
                        if (in_comp[static_cast<size_t>(idx)]) continue;
                        in_comp[static_cast<size_t>(idx)] = 1;
                        if (!mask.in(xx, yy, zz)) continue;
                        if (ref_pearson(seed, series_at(v, xx, yy, zz)) > 0.25) {
                            ++count;
                            stack.push_back(idx);
                        }
                    }
                }
                CHECK(l.at(x, y, z) == static_cast<double>(count));  // exact
            }
}

TEST_CASE("vmhc is the correlation with the x-mirrored voxel") {
    const int64_t n = 6, t = 20;
    Volume4D v = seeded_volume(26, n, t);
    MaskVolume mask = full_mask(n);
    mask.set(5, 2, 2, false);  // kills the mirror of (0,2,2)

    Volume3D h = vmhc(v, mask);
    for (int64_t z = 0; z < n; ++z)
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x) {
                if (!mask.in(x, y, z) || !mask.in(n - 1 - x, y, z)) {
                    CHECK(h.at(x, y, z) == 0.0);
                    continue;
                }
                double expect = ref_pearson(series_at(v, x, y, z), series_at(v, n - 1 - x, y, z));
                CHECK(h.at(x, y, z) == doctest::Approx(expect).epsilon(1e-10));
            }
    // symmetry: vmhc(x) == vmhc(mirror(x))
    for (int64_t z = 0; z < n; ++z)
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n / 2; ++x)
                if (mask.in(x, y, z) && mask.in(n - 1 - x, y, z))
                    CHECK(h.at(x, y, z) == doctest::Approx(h.at(n - 1 - x, y, z)).epsilon(1e-12));
}

TEST_CASE("derivative_stack z-normalizes channels over the mask") {
    const int64_t n = 6, t = 16;
    Volume4D v = seeded_volume(27, n, t);
    MaskVolume mask = full_mask(n);
    mask.set(1, 1, 1, false);

    DerivativeSpec spec;  // all four channels on
    Volume3D stack = derivative_stack(v, mask, spec);
    REQUIRE(stack.channels == 4);
    const int64_t vox = n * n * n;
    for (int64_t c = 0; c < 4; ++c) {
        double mean = 0.0, var = 0.0;
        int64_t cnt = 0;
        for (int64_t i = 0; i < vox; ++i) {
            if (!mask.data[static_cast<size_t>(i)]) {
                CHECK(stack.data[static_cast<size_t>(c * vox + i)] == 0.0);
                continue;
            }
            mean += stack.data[static_cast<size_t>(c * vox + i)];
            ++cnt;
        }
        mean /= static_cast<double>(cnt);
        for (int64_t i = 0; i < vox; ++i)
            if (mask.data[static_cast<size_t>(i)]) {
                double d = stack.data[static_cast<size_t>(c * vox + i)] - mean;
                var += d * d;
            }
        CHECK(std::abs(mean) < 1e-10);
        CHECK(var / static_cast<double>(cnt) == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("channel subsets select in fixed order") {
    const int64_t n = 6, t = 12;
    Volume4D v = seeded_volume(28, n, t);
    MaskVolume mask = full_mask(n);
    DerivativeSpec spec;
    spec.use_reho = false;
    spec.use_lfcd = false;  // leaves dc, vmhc
    Volume3D stack = derivative_stack(v, mask, spec);
    CHECK(stack.channels == 2);
    CHECK(spec.enabled_channels() == 2);
}

TEST_CASE("derivative spec validation") {
    DerivativeSpec spec;
    spec.reho_neighborhood = 11;
    CHECK_THROWS_AS(spec.validate(), InvalidConfig);
    spec = DerivativeSpec{};
    spec.correlation_threshold = 1.5;
    CHECK_THROWS_AS(spec.validate(), InvalidConfig);
}
