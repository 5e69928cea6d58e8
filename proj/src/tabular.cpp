#include "sto/tabular.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sto::tabular {

std::string format_double(double v) {
    // Try increasing precision until the value round-trips exactly; 17
    // significant digits always suffice for IEEE doubles.
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw IoError("short write: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double(const std::string& field) {
    const char* begin = field.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0') throw IoError("not a number in CSV: '" + field + "'");
    return v;
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::string text = read_text_file(path);
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) lines.push_back(cur);
    return lines;
}

}  // namespace

void write_labels_csv(const std::string& path, const LabeledSubjects& subjects) {
    if (subjects.ids.size() != subjects.labels.size())
        throw LengthMismatch("labels.csv: ids and labels differ in length");
    std::ostringstream out;
    out << "subject_id,label\n";
    for (size_t i = 0; i < subjects.ids.size(); ++i)
        out << subjects.ids[i] << "," << subjects.labels[i] << "\n";
    write_text_file(path, out.str());
}

LabeledSubjects read_labels_csv(const std::string& path) {
    std::vector<std::string> lines = read_lines(path);
    if (lines.empty() || split_csv_line(lines[0]) != std::vector<std::string>{"subject_id", "label"})
        throw IoError("labels.csv: missing or wrong header in " + path);
    LabeledSubjects out;
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        std::vector<std::string> f = split_csv_line(lines[i]);
        if (f.size() != 2) throw IoError("labels.csv: expected 2 fields per row in " + path);
        out.ids.push_back(f[0]);
        const double v = parse_double(f[1]);
        if (v != 0.0 && v != 1.0) throw InvalidTarget("labels must be 0 or 1");
        out.labels.push_back(static_cast<int>(v));
    }
    return out;
}

void write_roi_timeseries_csv(const std::string& path, const RoiTimeseries& ts) {
    std::ostringstream out;
    for (int64_t j = 0; j < ts.m; ++j) out << (j ? "," : "") << "roi_" << (j + 1);
    out << "\n";
    for (int64_t t = 0; t < ts.t; ++t) {
        for (int64_t j = 0; j < ts.m; ++j)
            out << (j ? "," : "") << format_double(ts.data[static_cast<size_t>(t * ts.m + j)]);
        out << "\n";
    }
    write_text_file(path, out.str());
}

RoiTimeseries read_roi_timeseries_csv(const std::string& path) {
    std::vector<std::string> lines = read_lines(path);
    if (lines.empty()) throw IoError("roi timeseries CSV is empty: " + path);
    std::vector<std::string> header = split_csv_line(lines[0]);
    RoiTimeseries ts;
    ts.m = static_cast<int64_t>(header.size());
    for (int64_t j = 0; j < ts.m; ++j)
        if (header[static_cast<size_t>(j)] != "roi_" + std::to_string(j + 1))
            throw IoError("roi timeseries CSV: unexpected header in " + path);
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        std::vector<std::string> f = split_csv_line(lines[i]);
        if (static_cast<int64_t>(f.size()) != ts.m)
            throw IoError("roi timeseries CSV: ragged row in " + path);
        for (const std::string& s : f) ts.data.push_back(parse_double(s));
        ++ts.t;
    }
    if (ts.t == 0) throw IoError("roi timeseries CSV has no data rows: " + path);
    return ts;
}

void write_features_csv(const std::string& path, const FeatureTable& table) {
    if (table.ids.size() != table.labels.size() ||
        table.data.size() != table.ids.size() * table.dim)
        throw LengthMismatch("features.csv: inconsistent table");
    std::ostringstream out;
    out << "subject_id,label";
    for (size_t j = 0; j < table.dim; ++j) out << ",f_" << j;
    out << "\n";
    for (size_t i = 0; i < table.ids.size(); ++i) {
        out << table.ids[i] << "," << table.labels[i];
        for (size_t j = 0; j < table.dim; ++j) out << "," << format_double(table.row(i)[j]);
        out << "\n";
    }
    write_text_file(path, out.str());
}

FeatureTable read_features_csv(const std::string& path) {
    std::vector<std::string> lines = read_lines(path);
    if (lines.empty()) throw IoError("features CSV is empty: " + path);
    std::vector<std::string> header = split_csv_line(lines[0]);
    if (header.size() < 3 || header[0] != "subject_id" || header[1] != "label")
        throw IoError("features CSV: unexpected header in " + path);
    FeatureTable table;
    table.dim = header.size() - 2;
    for (size_t j = 0; j < table.dim; ++j)
        if (header[j + 2] != "f_" + std::to_string(j))
            throw IoError("features CSV: unexpected feature column name in " + path);
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        std::vector<std::string> f = split_csv_line(lines[i]);
        if (f.size() != table.dim + 2) throw IoError("features CSV: ragged row in " + path);
        table.ids.push_back(f[0]);
        const double v = parse_double(f[1]);
        if (v != 0.0 && v != 1.0) throw InvalidTarget("labels must be 0 or 1");
        table.labels.push_back(static_cast<int>(v));
        for (size_t j = 0; j < table.dim; ++j) table.data.push_back(parse_double(f[j + 2]));
    }
    return table;
}

void write_mask_json(const std::string& path, const QuartileMask& mask,
                     const std::vector<std::string>& fit_subject_ids) {
    nlohmann::json j;
    j["kind"] = "diagnet-quartile-mask";
    j["source_dim"] = mask.source_dim;
    j["indices"] = mask.indices;
    j["fit_subjects"] = fit_subject_ids;
    write_text_file(path, j.dump(2) + "\n");
}

QuartileMask read_mask_json(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("mask JSON parse failure: ") + e.what());
    }
    if (j.value("kind", "") != "diagnet-quartile-mask")
        throw IoError("not a diagnet mask JSON: " + path);
    QuartileMask m;
    m.source_dim = j.at("source_dim").get<int64_t>();
    m.indices = j.at("indices").get<std::vector<int64_t>>();
    for (int64_t idx : m.indices)
        if (idx < 0 || idx >= m.source_dim) throw IndexOutOfBounds("mask index out of range");
    return m;
}

}  // namespace sto::tabular
