#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "sto/common.hpp"
#include "sto/tabular.hpp"

using namespace sto;
using namespace sto::tabular;

namespace {

struct TempPath {
    std::string path;
    explicit TempPath(const std::string& name) : path("/tmp/sto_tab_" + name) {}
    ~TempPath() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("format_double emits the shortest exact decimal form") {
    for (double v : {0.1, 1.0 / 3.0, 3.141592653589793, 1e-300, 1e300, -2.5, 0.0,
                     123456789.123456789, std::numeric_limits<double>::denorm_min(),
                     std::numeric_limits<double>::max()}) {
        const std::string s = format_double(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
    }
    CHECK(format_double(1.0) == "1");
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(-3.0) == "-3");
    CHECK(format_double(0.1) == "0.1");  // not 0.1000000000000000055511...
}

TEST_CASE("format_double round-trips random bit patterns") {
    Rng rng(71);
    for (int i = 0; i < 2000; ++i) {
        double v = (rng.next_double() - 0.5) * std::pow(10.0, (rng.next_double() - 0.5) * 40.0);
        const std::string s = format_double(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
    }
}

TEST_CASE("csv line splitting tolerates CRLF and empty fields") {
    CHECK(split_csv_line("a,b,c") == std::vector<std::string>{"a", "b", "c"});
    CHECK(split_csv_line("a,,c\r") == std::vector<std::string>{"a", "", "c"});
    CHECK(split_csv_line("") == std::vector<std::string>{""});
}

TEST_CASE("parse_double rejects garbage and trailing junk") {
    CHECK(parse_double("2.5e-3") == 2.5e-3);
    CHECK(parse_double("-4") == -4.0);
    CHECK_THROWS_AS(parse_double("abc"), IoError);
    CHECK_THROWS_AS(parse_double("1.5x"), IoError);
    CHECK_THROWS_AS(parse_double(""), IoError);
}

TEST_CASE("labels csv round-trips and validates") {
    TempPath tmp("labels.csv");
    LabeledSubjects subjects;
    subjects.ids = {"sub_0000", "sub_0001", "sub_0002"};
    subjects.labels = {0, 1, 1};
    write_labels_csv(tmp.path, subjects);

    LabeledSubjects back = read_labels_csv(tmp.path);
    CHECK(back.ids == subjects.ids);
    CHECK(back.labels == subjects.labels);

    SUBCASE("mismatched lengths refuse to write") {
        subjects.labels.pop_back();
        CHECK_THROWS_AS(write_labels_csv(tmp.path, subjects), LengthMismatch);
    }
    SUBCASE("wrong header") {
        write_text_file(tmp.path, "id,label\nsub_0000,0\n");
        CHECK_THROWS_AS(read_labels_csv(tmp.path), IoError);
    }
    SUBCASE("wrong field count") {
        write_text_file(tmp.path, "subject_id,label\nsub_0000,0,extra\n");
        CHECK_THROWS_AS(read_labels_csv(tmp.path), IoError);
    }
    SUBCASE("non-binary label") {
        write_text_file(tmp.path, "subject_id,label\nsub_0000,2\n");
        CHECK_THROWS_AS(read_labels_csv(tmp.path), InvalidTarget);
    }
    SUBCASE("non-numeric label") {
        write_text_file(tmp.path, "subject_id,label\nsub_0000,yes\n");
        CHECK_THROWS_AS(read_labels_csv(tmp.path), IoError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_labels_csv("/tmp/sto_tab_does_not_exist.csv"), IoError);
    }
}

TEST_CASE("roi timeseries csv round-trips bit-exactly") {
    TempPath tmp("roi.csv");
    RoiTimeseries ts;
    ts.m = 3;
    ts.t = 5;
    Rng rng(72);
    for (int i = 0; i < 15; ++i) ts.data.push_back(rng.next_gaussian() * 1e-3);
    write_roi_timeseries_csv(tmp.path, ts);

    RoiTimeseries back = read_roi_timeseries_csv(tmp.path);
    CHECK(back.m == ts.m);
    CHECK(back.t == ts.t);
    CHECK(back.data == ts.data);

    SUBCASE("header must list roi_1..roi_M") {
        write_text_file(tmp.path, "roi_1,roi_3\n0,0\n");
        CHECK_THROWS_AS(read_roi_timeseries_csv(tmp.path), IoError);
    }
    SUBCASE("ragged rows rejected") {
        write_text_file(tmp.path, "roi_1,roi_2\n0.5,1.5\n2.5\n");
        CHECK_THROWS_AS(read_roi_timeseries_csv(tmp.path), IoError);
    }
    SUBCASE("header with no data rejected") {
        write_text_file(tmp.path, "roi_1,roi_2\n");
        CHECK_THROWS_AS(read_roi_timeseries_csv(tmp.path), IoError);
    }
    SUBCASE("empty file rejected") {
        write_text_file(tmp.path, "");
        CHECK_THROWS_AS(read_roi_timeseries_csv(tmp.path), IoError);
    }
}

TEST_CASE("feature table csv round-trips bit-exactly") {
    TempPath tmp("features.csv");
    FeatureTable table;
    table.ids = {"sub_0000", "sub_0001"};
    table.labels = {0, 1};
    table.dim = 4;
    Rng rng(73);
    for (int i = 0; i < 8; ++i) table.data.push_back(rng.next_gaussian());
    write_features_csv(tmp.path, table);

    FeatureTable back = read_features_csv(tmp.path);
    CHECK(back.ids == table.ids);
    CHECK(back.labels == table.labels);
    CHECK(back.dim == table.dim);
    CHECK(back.data == table.data);
    CHECK(back.features_of(1) == ConnectomeFeatures(table.data.begin() + 4, table.data.end()));
    CHECK(back.row(1)[0] == table.data[4]);

    SUBCASE("inconsistent table refuses to write") {
        table.data.pop_back();
        CHECK_THROWS_AS(write_features_csv(tmp.path, table), LengthMismatch);
    }
    SUBCASE("feature columns must be f_0..f_{D-1}") {
        write_text_file(tmp.path, "subject_id,label,f_0,f_2\nsub_0000,0,1,2\n");
        CHECK_THROWS_AS(read_features_csv(tmp.path), IoError);
    }
    SUBCASE("short header rejected") {
        write_text_file(tmp.path, "subject_id,label\nsub_0000,0\n");
        CHECK_THROWS_AS(read_features_csv(tmp.path), IoError);
    }
    SUBCASE("ragged data row rejected") {
        write_text_file(tmp.path, "subject_id,label,f_0,f_1\nsub_0000,0,1\n");
        CHECK_THROWS_AS(read_features_csv(tmp.path), IoError);
    }
    SUBCASE("non-numeric feature rejected") {
        write_text_file(tmp.path, "subject_id,label,f_0\nsub_0000,0,NaNbread\n");
        CHECK_THROWS_AS(read_features_csv(tmp.path), IoError);
    }
}

TEST_CASE("diagnet mask json round-trips and validates") {
    TempPath tmp("mask.json");
    QuartileMask mask;
    mask.source_dim = 10;
    mask.indices = {0, 2, 7, 9};
    write_mask_json(tmp.path, mask, {"sub_0000", "sub_0001"});

    QuartileMask back = read_mask_json(tmp.path);
    CHECK(back.source_dim == mask.source_dim);
    CHECK(back.indices == mask.indices);

    SUBCASE("fit subjects are recorded") {
        const std::string text = read_text_file(tmp.path);
        CHECK(text.find("sub_0001") != std::string::npos);
    }
    SUBCASE("wrong kind rejected") {
        write_text_file(tmp.path, "{\"kind\":\"something-else\",\"source_dim\":4,\"indices\":[]}");
        CHECK_THROWS_AS(read_mask_json(tmp.path), IoError);
    }
    SUBCASE("garbage json rejected") {
        write_text_file(tmp.path, "{not json");
        CHECK_THROWS_AS(read_mask_json(tmp.path), IoError);
    }
    SUBCASE("out-of-range index rejected") {
        write_text_file(tmp.path,
                        "{\"kind\":\"diagnet-quartile-mask\",\"source_dim\":4,\"indices\":[4]}");
        CHECK_THROWS_AS(read_mask_json(tmp.path), IndexOutOfBounds);
    }
}
