#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "sto/common.hpp"
#include "sto/connectome.hpp"
#include "sto/derivatives.hpp"

using namespace sto;

namespace {

AtlasVolume checker_atlas(int64_t n, int n_rois) {
    Volume3D labels(n, n, n, 1);
    for (int64_t z = 0; z < n; ++z)
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x)
                labels.at(x, y, z) = static_cast<double>(1 + (x + y + z) % n_rois);
    return AtlasVolume::from_volume(labels);
}

Volume4D random_bold(uint64_t seed, int64_t n, int64_t t) {
    Volume4D v(n, n, n, t);
    Rng rng(seed);
    for (double& d : v.data) d = rng.next_gaussian();
    return v;
}

}  // namespace

TEST_CASE("atlas construction validates labels") {
    Volume3D ok(2, 2, 2, 1);
    ok.data = {0, 1, 1, 2, 2, 1, 0, 2};
    AtlasVolume atlas = AtlasVolume::from_volume(ok);
    CHECK(atlas.n_rois == 2);

    Volume3D negative(2, 2, 2, 1);
    negative.data = {0, -1, 1, 1, 1, 1, 1, 1};
    CHECK_THROWS_AS(AtlasVolume::from_volume(negative), InvalidConfig);

    Volume3D fractional(2, 2, 2, 1);
    fractional.data = {0, 1.5, 1, 1, 1, 1, 1, 1};
    CHECK_THROWS_AS(AtlasVolume::from_volume(fractional), InvalidConfig);

    Volume3D gap(2, 2, 2, 1);  // label 2 missing
    gap.data = {0, 1, 1, 3, 3, 1, 0, 3};
    CHECK_THROWS_AS(AtlasVolume::from_volume(gap), EmptyRoi);

    Volume3D empty(2, 2, 2, 1);  // all background
    CHECK_THROWS_AS(AtlasVolume::from_volume(empty), InvalidConfig);
}

TEST_CASE("roi_mean_timeseries averages exactly the labeled voxels") {
    const int64_t n = 4, t = 6;
    Volume4D v = random_bold(41, n, t);
    AtlasVolume atlas = checker_atlas(n, 3);

    RoiTimeseries ts = roi_mean_timeseries(v, atlas);
    REQUIRE(ts.t == t);
    REQUIRE(ts.m == 3);
    for (int64_t roi = 1; roi <= 3; ++roi)
        for (int64_t frame = 0; frame < t; ++frame) {
            double sum = 0.0;
            int64_t cnt = 0;
            for (int64_t z = 0; z < n; ++z)
                for (int64_t y = 0; y < n; ++y)
                    for (int64_t x = 0; x < n; ++x)
                        if (static_cast<int64_t>(atlas.labels.at(x, y, z)) == roi) {
                            sum += v.at(x, y, z, frame);
                            ++cnt;
                        }
            CHECK(ts.at(frame, roi - 1) == doctest::Approx(sum / static_cast<double>(cnt)).epsilon(1e-12));
        }

    Volume4D wrong(3, 3, 3, t);
    CHECK_THROWS_AS(roi_mean_timeseries(wrong, atlas), ExtentMismatch);
}

TEST_CASE("fc_matrix matches pairwise pearson and is symmetric with unit diagonal") {
    Rng rng(42);
    RoiTimeseries ts;
    ts.t = 30;
    ts.m = 6;
    ts.data.resize(static_cast<size_t>(ts.t * ts.m));
    for (double& d : ts.data) d = rng.next_gaussian();

    FcMatrix fc = fc_matrix(ts);
    REQUIRE(fc.m == 6);
    for (int64_t i = 0; i < fc.m; ++i) {
        CHECK(fc.at(i, i) == 1.0);
        for (int64_t j = 0; j < fc.m; ++j) {
            CHECK(fc.at(i, j) == fc.at(j, i));
            if (i != j)
                CHECK(fc.at(i, j) ==
                      doctest::Approx(pearson(ts.column(i), ts.column(j))).epsilon(1e-12));
        }
    }
}

TEST_CASE("fc_matrix zeroes correlations of a constant column") {
    RoiTimeseries ts;
    ts.t = 10;
    ts.m = 3;
    ts.data.resize(30);
    Rng rng(43);
    for (int64_t r = 0; r < ts.t; ++r) {
        ts.at(r, 0) = rng.next_gaussian();
        ts.at(r, 1) = 7.0;  // flat
        ts.at(r, 2) = rng.next_gaussian();
    }
    FcMatrix fc = fc_matrix(ts);
    CHECK(fc.at(0, 1) == 0.0);
    CHECK(fc.at(1, 2) == 0.0);
    CHECK(fc.at(1, 1) == 1.0);
}

TEST_CASE("fc_matrix extent validation") {
    RoiTimeseries one_roi{5, 1, std::vector<double>(5, 0.0)};
    CHECK_THROWS_AS(fc_matrix(one_roi), ExtentMismatch);
    RoiTimeseries short_t{2, 3, std::vector<double>(6, 0.0)};
    CHECK_THROWS_AS(fc_matrix(short_t), ExtentMismatch);
}

TEST_CASE("upper_triangle uses row-major i<j order and round-trips") {
    FcMatrix fc;
    fc.m = 4;
    fc.data.assign(16, 0.0);
    double v = 0.0;
    for (int64_t i = 0; i < 4; ++i) {
        fc.at(i, i) = 1.0;
        for (int64_t j = i + 1; j < 4; ++j) {
            v += 0.1;
            fc.at(i, j) = v;
            fc.at(j, i) = v;
        }
    }
    ConnectomeFeatures f = upper_triangle(fc);
    REQUIRE(f.size() == 6);
    // order: (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
    CHECK(f[0] == doctest::Approx(0.1));
    CHECK(f[3] == doctest::Approx(0.4));
    CHECK(f[5] == doctest::Approx(0.6));

    FcMatrix back = from_upper_triangle(f);
    REQUIRE(back.m == 4);
    CHECK(back.data == fc.data);

    CHECK_THROWS_AS(from_upper_triangle(ConnectomeFeatures(4, 0.0)), LengthMismatch);
    // AAL dimensionality: M=116 -> 6670
    CHECK(from_upper_triangle(ConnectomeFeatures(6670, 0.0)).m == 116);
}

TEST_CASE("diagnet_mask picks the extreme quartiles with lower-index tie breaks") {
    SUBCASE("distinct means") {
        // d = 8, quarter = 2: top two means and bottom two means
        std::vector<ConnectomeFeatures> train{{5.0, 0.9, 1.0, 3.0, 9.0, 2.0, 2.5, 1.5}};
        QuartileMask m = diagnet_mask(train);
        CHECK(m.source_dim == 8);
        CHECK(m.indices == std::vector<int64_t>{0, 1, 2, 4});  // top {4,0}, bottom {1,2}
    }
    SUBCASE("ties break to the lower index") {
        std::vector<ConnectomeFeatures> train{{5.0, 5.0, 1.0, 1.0, 3.0, 3.0, 3.0, 2.0}};
        QuartileMask m = diagnet_mask(train);
        CHECK(m.indices == std::vector<int64_t>{0, 1, 2, 3});
    }
    SUBCASE("all-equal means: bottom quarter skips indices the top claimed") {
        std::vector<ConnectomeFeatures> train{ConnectomeFeatures(8, 1.0)};
        QuartileMask m = diagnet_mask(train);
        CHECK(m.indices == std::vector<int64_t>{0, 1, 2, 3});
    }
    SUBCASE("mean over several subjects") {
        std::vector<ConnectomeFeatures> train{{1.0, 0.0, 0.0, 0.0}, {1.0, 0.0, 0.0, -2.0}};
        // means: {1.0, 0.0, 0.0, -1.0}, quarter = 1 -> top {0}, bottom {3}
        QuartileMask m = diagnet_mask(train);
        CHECK(m.indices == std::vector<int64_t>{0, 3});
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(diagnet_mask({}), LengthMismatch);
        CHECK_THROWS_AS(diagnet_mask({{1.0, 2.0}, {1.0}}), LengthMismatch);
    }
}

TEST_CASE("diagnet_mask size matches 2*floor(D/4) at realistic dimensionalities") {
    Rng rng(44);
    for (size_t d : {6670u, 19900u, 10u}) {
        std::vector<ConnectomeFeatures> train(3, ConnectomeFeatures(d));
        for (auto& f : train)
            for (double& x : f) x = rng.next_gaussian();
        QuartileMask m = diagnet_mask(train);
        CHECK(m.indices.size() == 2 * (d / 4));
        CHECK(std::is_sorted(m.indices.begin(), m.indices.end()));
        CHECK(std::adjacent_find(m.indices.begin(), m.indices.end()) == m.indices.end());
    }
}

TEST_CASE("apply_mask selects exactly the masked coordinates") {
    ConnectomeFeatures f{10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0};
    QuartileMask m;
    m.source_dim = 8;
    m.indices = {1, 4, 6};
    CHECK(apply_mask(f, m) == std::vector<double>{11.0, 14.0, 16.0});

    QuartileMask bad;
    bad.source_dim = 9;
    bad.indices = {8};
    CHECK_THROWS_AS(apply_mask(f, bad), IndexOutOfBounds);
}

TEST_CASE("bold-to-features path is deterministic") {
    Volume4D v = random_bold(45, 4, 12);
    AtlasVolume atlas = checker_atlas(4, 4);
    ConnectomeFeatures a = upper_triangle(fc_matrix(roi_mean_timeseries(v, atlas)));
    ConnectomeFeatures b = upper_triangle(fc_matrix(roi_mean_timeseries(v, atlas)));
    CHECK(a == b);
    CHECK(a.size() == 6);  // M=4
}
