#pragma once

// CSV and JSON artifacts exchanged between pipeline stages: subject labels,
// ROI time series, connectome feature tables, and the DiagNet feature mask.

#include <string>
#include <vector>

#include "sto/common.hpp"
#include "sto/connectome.hpp"

namespace sto::tabular {

// Shortest exact decimal form (round-trips through strtod bit-exactly).
std::string format_double(double v);

struct LabeledSubjects {
    std::vector<std::string> ids;
    std::vector<int> labels;
};

// labels.csv: header "subject_id,label", one row per subject.
void write_labels_csv(const std::string& path, const LabeledSubjects& subjects);
LabeledSubjects read_labels_csv(const std::string& path);

// ROI time series: header "roi_1,...,roi_M", T data rows.
void write_roi_timeseries_csv(const std::string& path, const RoiTimeseries& ts);
RoiTimeseries read_roi_timeseries_csv(const std::string& path);

// Feature table: header "subject_id,label,f_0,...,f_{D-1}", one row per subject.
struct FeatureTable {
    std::vector<std::string> ids;
    std::vector<int> labels;
    size_t dim = 0;
    std::vector<double> data;  // row-major, ids.size() x dim

    const double* row(size_t i) const { return data.data() + i * dim; }
    ConnectomeFeatures features_of(size_t i) const {
        return ConnectomeFeatures(row(i), row(i) + dim);
    }
};

void write_features_csv(const std::string& path, const FeatureTable& table);
FeatureTable read_features_csv(const std::string& path);

// DiagNet quartile mask with fit provenance.
void write_mask_json(const std::string& path, const QuartileMask& mask,
                     const std::vector<std::string>& fit_subject_ids);
QuartileMask read_mask_json(const std::string& path);

// Low-level helpers shared by the writers above.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
std::vector<std::string> split_csv_line(const std::string& line);
double parse_double(const std::string& field);  // throws IoError on garbage

}  // namespace sto::tabular
