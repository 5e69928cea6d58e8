// sto: command-line driver for the spatial-temporal-omics fMRI pipeline.
//
// Subcommands: synth | derive | parcellate | features | train | evaluate |
// stats | reproduce.  Every stage is deterministic given its --seed; config
// files are JSON mirroring the library config structs, flags override file
// values, and unknown config keys are rejected.
//
// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 data validation error,
// 5 numerical error.

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sto/common.hpp"
#include "sto/connectome.hpp"
#include "sto/derivatives.hpp"
#include "sto/models.hpp"
#include "sto/nifti.hpp"
#include "sto/pipeline.hpp"
#include "sto/preprocess.hpp"
#include "sto/synth.hpp"
#include "sto/tabular.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace sto;
using namespace sto::tabular;

namespace {

// ---- JSON config loading --------------------------------------------------

json load_json_file(const std::string& path) {
    std::string text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void reject_unknown(const json& obj, const std::string& section,
                    const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
    }
}

template <typename T>
void take(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) obj.at(key).get_to(out);
}

void apply_synth_json(const json& j, SynthConfig& cfg) {
    reject_unknown(j, "synth",
                   {"n_subjects_per_class", "nx", "ny", "nz", "t", "t_min", "t_max", "tr_seconds",
                    "n_blocks", "ar_coefficient", "effect_size", "base_coupling", "noise_scale",
                    "baseline", "seed"});
    take(j, "n_subjects_per_class", cfg.n_subjects_per_class);
    take(j, "nx", cfg.nx);
    take(j, "ny", cfg.ny);
    take(j, "nz", cfg.nz);
    take(j, "t", cfg.t);
    take(j, "t_min", cfg.t_min);
    take(j, "t_max", cfg.t_max);
    take(j, "tr_seconds", cfg.tr_seconds);
    take(j, "n_blocks", cfg.n_blocks);
    take(j, "ar_coefficient", cfg.ar_coefficient);
    take(j, "effect_size", cfg.effect_size);
    take(j, "base_coupling", cfg.base_coupling);
    take(j, "noise_scale", cfg.noise_scale);
    take(j, "baseline", cfg.baseline);
    take(j, "seed", cfg.seed);
}

void apply_bandpass_json(const json& j, BandpassSpec& spec) {
    reject_unknown(j, "bandpass", {"low_hz", "high_hz", "tr_seconds"});
    take(j, "low_hz", spec.low_hz);
    take(j, "high_hz", spec.high_hz);
    take(j, "tr_seconds", spec.tr_seconds);
}

void set_channels(DerivativeSpec& spec, const std::vector<std::string>& names) {
    spec.use_reho = spec.use_dc = spec.use_lfcd = spec.use_vmhc = false;
    for (const std::string& n : names) {
        if (n == "reho") spec.use_reho = true;
        else if (n == "dc") spec.use_dc = true;
        else if (n == "lfcd") spec.use_lfcd = true;
        else if (n == "vmhc") spec.use_vmhc = true;
        else throw ConfigError("unknown derivative channel '" + n + "' (expected reho|dc|lfcd|vmhc)");
    }
}

std::vector<std::string> split_names(const std::string& csv) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : csv) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

void apply_derivatives_json(const json& j, DerivativeSpec& spec) {
    reject_unknown(j, "derivatives",
                   {"reho_neighborhood", "correlation_threshold", "dc_weighted", "channels"});
    take(j, "reho_neighborhood", spec.reho_neighborhood);
    take(j, "correlation_threshold", spec.correlation_threshold);
    take(j, "dc_weighted", spec.dc_weighted);
    if (j.contains("channels")) {
        std::vector<std::string> names;
        j.at("channels").get_to(names);
        set_channels(spec, names);
    }
}

void apply_stv_json(const json& j, models::StvConfig& cfg) {
    reject_unknown(j, "stv",
                   {"stem_channels", "stage_channels", "stage_strides", "embed_dim"});
    take(j, "stem_channels", cfg.stem_channels);
    take(j, "stage_channels", cfg.stage_channels);
    take(j, "stage_strides", cfg.stage_strides);
    take(j, "embed_dim", cfg.embed_dim);
}

void apply_train_json(const json& j, pipeline::TrainConfig& cfg) {
    reject_unknown(j, "train",
                   {"lr", "batch_size", "max_epochs", "eval_every", "early_stop_evals"});
    take(j, "lr", cfg.lr);
    take(j, "batch_size", cfg.batch_size);
    take(j, "max_epochs", cfg.max_epochs);
    take(j, "eval_every", cfg.eval_every);
    take(j, "early_stop_evals", cfg.early_stop_evals);
}

void apply_augment_json(const json& j, AugmentSpec& spec) {
    reject_unknown(j, "augment",
                   {"flip_x", "flip_y", "flip_z", "max_rotation_deg", "max_translation_vox",
                    "scale_range"});
    take(j, "flip_x", spec.flip_x);
    take(j, "flip_y", spec.flip_y);
    take(j, "flip_z", spec.flip_z);
    take(j, "max_rotation_deg", spec.max_rotation_deg);
    take(j, "max_translation_vox", spec.max_translation_vox);
    if (j.contains("scale_range")) {
        std::vector<double> r;
        j.at("scale_range").get_to(r);
        if (r.size() != 2) throw ConfigError("scale_range must have exactly 2 entries");
        spec.scale_range = {r[0], r[1]};
    }
}

void apply_experiment_json(const json& j, pipeline::ExperimentConfig& cfg) {
    reject_unknown(j, "<top level>",
                   {"synth", "bandpass", "derivatives", "stv", "train", "augment", "model_grid",
                    "folds", "val_fraction", "validate_on_test", "proportions", "table1_variants",
                    "run_ablations", "fc_mlp_hidden", "diagnet_hidden", "recon_weight", "dropout",
                    "use_augment", "threads", "seed"});
    if (j.contains("synth")) apply_synth_json(j.at("synth"), cfg.synth);
    if (j.contains("bandpass")) apply_bandpass_json(j.at("bandpass"), cfg.bandpass);
    if (j.contains("derivatives")) apply_derivatives_json(j.at("derivatives"), cfg.derivatives);
    if (j.contains("stv")) apply_stv_json(j.at("stv"), cfg.stv);
    if (j.contains("train")) apply_train_json(j.at("train"), cfg.train);
    if (j.contains("augment")) apply_augment_json(j.at("augment"), cfg.augment);
    take(j, "model_grid", cfg.model_grid);
    take(j, "folds", cfg.folds);
    take(j, "val_fraction", cfg.val_fraction);
    take(j, "validate_on_test", cfg.validate_on_test);
    take(j, "proportions", cfg.proportions);
    take(j, "table1_variants", cfg.table1_variants);
    take(j, "run_ablations", cfg.run_ablations);
    take(j, "fc_mlp_hidden", cfg.fc_mlp_hidden);
    take(j, "diagnet_hidden", cfg.diagnet_hidden);
    take(j, "recon_weight", cfg.recon_weight);
    take(j, "dropout", cfg.dropout);
    take(j, "use_augment", cfg.use_augment);
    take(j, "threads", cfg.threads);
    take(j, "seed", cfg.seed);
}

// A config file either carries the full experiment shape (has a "synth" /
// "derivatives" / ... section layout) or is a bare section for the command at
// hand.  `section_keys` is the allowed key set for the bare interpretation.
bool looks_like_experiment(const json& j) {
    static const std::set<std::string> sections = {"synth",       "bandpass", "derivatives",
                                                   "stv",         "train",    "augment",
                                                   "model_grid",  "folds",    "proportions",
                                                   "table1_variants"};
    if (!j.is_object()) return false;
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (sections.count(key) && j.at(key).is_object()) return true;
        if (key == "proportions" || key == "table1_variants" || key == "model_grid" ||
            key == "folds")
            return true;
    }
    return false;
}

int env_threads() {
    const char* v = std::getenv("STO_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1 || n > 1024)
        throw ConfigError("STO_THREADS must be a positive integer, got '" + std::string(v) + "'");
    return static_cast<int>(n);
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

void write_json_file(const std::string& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

// ---- Shared artifact helpers ------------------------------------------------

Volume4D read_bold(const std::string& path) {
    NiftiImage img = read_nifti_file(path);
    if (auto* v4 = std::get_if<Volume4D>(&img.volume)) return std::move(*v4);
    throw ExtentMismatch(path + ": expected a 4D BOLD series");
}

// A derivative stack is stored with channels on the 4th axis; reinterpret.
Volume3D read_stack(const std::string& path) {
    NiftiImage img = read_nifti_file(path);
    if (auto* v3 = std::get_if<Volume3D>(&img.volume)) return std::move(*v3);
    const Volume4D& v4 = std::get<Volume4D>(img.volume);
    Volume3D out(v4.nx, v4.ny, v4.nz, v4.nt);
    out.spacing_mm = v4.spacing_mm;
    out.data = v4.data;  // identical layout: 4th axis outermost
    return out;
}

MaskVolume read_mask(const std::string& path) {
    NiftiImage img = read_nifti_file(path);
    if (auto* v3 = std::get_if<Volume3D>(&img.volume)) return to_mask(*v3);
    throw ExtentMismatch(path + ": expected a 3D mask volume");
}

AtlasVolume read_atlas(const std::string& path) {
    NiftiImage img = read_nifti_file(path);
    if (auto* v3 = std::get_if<Volume3D>(&img.volume)) return AtlasVolume::from_volume(*v3);
    throw ExtentMismatch(path + ": expected a 3D atlas volume");
}

std::vector<std::string> channel_names(const DerivativeSpec& spec) {
    std::vector<std::string> names;
    if (spec.use_reho) names.push_back("reho");
    if (spec.use_dc) names.push_back("dc");
    if (spec.use_lfcd) names.push_back("lfcd");
    if (spec.use_vmhc) names.push_back("vmhc");
    return names;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
    std::string out, config;
    std::string dtype = "float64";
    SynthConfig cfg;
};

int cmd_synth(const SynthArgs& a) {
    a.cfg.validate();
    NiftiDatatype dt = NiftiDatatype::Float64;
    if (a.dtype == "float32") dt = NiftiDatatype::Float32;
    else if (a.dtype != "float64")
        throw ConfigError("--dtype must be float64 or float32");

    ensure_dir(a.out);
    AtlasVolume atlas = make_atlas(a.cfg);
    MaskVolume mask = make_mask(a.cfg);
    Volume3D mask_vol(mask.nx, mask.ny, mask.nz);
    for (size_t i = 0; i < mask.data.size(); ++i) mask_vol.data[i] = mask.data[i] ? 1.0 : 0.0;
    write_nifti_file(join_path(a.out, "atlas.nii.gz"), atlas.labels, NiftiDatatype::Int32);
    write_nifti_file(join_path(a.out, "mask.nii.gz"), mask_vol, NiftiDatatype::Uint8);

    LabeledSubjects subjects;
    const int n = total_subjects(a.cfg);
    for (int i = 0; i < n; ++i) {
        subjects.ids.push_back(subject_id(i));
        subjects.labels.push_back(subject_label(a.cfg, i));
    }
    write_labels_csv(join_path(a.out, "labels.csv"), subjects);

    for (int i = 0; i < n; ++i) {
        Volume4D bold = generate_subject(a.cfg, i);
        write_nifti_file(join_path(a.out, subjects.ids[static_cast<size_t>(i)] + "_bold.nii.gz"),
                         bold, dt);
        std::cerr << "synth: wrote " << subjects.ids[static_cast<size_t>(i)] << " (" << bold.nt
                  << " frames)\n";
    }

    json pairs = json::array();
    for (auto [p, q] : designated_pairs(a.cfg)) pairs.push_back({p, q});
    json manifest = {{"kind", "sto-synth-cohort"},
                     {"n_subjects", n},
                     {"tr_seconds", a.cfg.tr_seconds},
                     {"grid", {a.cfg.nx, a.cfg.ny, a.cfg.nz}},
                     {"n_blocks", a.cfg.n_blocks},
                     {"effect_size", a.cfg.effect_size},
                     {"base_coupling", a.cfg.base_coupling},
                     {"ar_coefficient", a.cfg.ar_coefficient},
                     {"noise_scale", a.cfg.noise_scale},
                     {"baseline", a.cfg.baseline},
                     {"seed", a.cfg.seed},
                     {"coupled_roi_pairs", pairs}};
    write_json_file(join_path(a.out, "cohort.json"), manifest);
    std::cout << "synth: " << n << " subjects -> " << a.out << "\n";
    return 0;
}

// ---- derive ------------------------------------------------------------------

struct DeriveArgs {
    std::string in, out, mask_path;
    bool no_bandpass = false;
    double tr_override = 0.0;  // 0 = take TR from each header
    int64_t resample = 0;      // 0 = keep native grid
    BandpassSpec band;
    DerivativeSpec spec;
};

int cmd_derive(const DeriveArgs& a) {
    a.spec.validate();
    if (a.spec.enabled_channels() == 0) throw ConfigError("no derivative channels enabled");
    ensure_dir(a.out);
    LabeledSubjects subjects = read_labels_csv(join_path(a.in, "labels.csv"));
    const std::string mask_path =
        a.mask_path.empty() ? join_path(a.in, "mask.nii.gz") : a.mask_path;
    MaskVolume mask = read_mask(mask_path);

    for (size_t i = 0; i < subjects.ids.size(); ++i) {
        const std::string& id = subjects.ids[i];
        Volume4D bold = read_bold(join_path(a.in, id + "_bold.nii.gz"));
        mask.check_matches(bold.nx, bold.ny, bold.nz);
        if (!a.no_bandpass) {
            BandpassSpec band = a.band;
            band.tr_seconds = a.tr_override > 0.0
                                  ? a.tr_override
                                  : (bold.tr_seconds > 0.0 ? bold.tr_seconds : a.band.tr_seconds);
            bandpass_volume(bold, band, &mask);
        }
        Volume3D stack = derivative_stack(bold, mask, a.spec);
        if (a.resample > 0) stack = resample_to(stack, a.resample, a.resample, a.resample);
        write_nifti_file(join_path(a.out, id + "_deriv.nii.gz"), stack);
        std::cerr << "derive: " << id << " -> " << stack.channels << " channel(s)\n";
    }
    write_labels_csv(join_path(a.out, "labels.csv"), subjects);

    json manifest = {{"kind", "sto-derivatives"},
                     {"channels", channel_names(a.spec)},
                     {"reho_neighborhood", a.spec.reho_neighborhood},
                     {"correlation_threshold", a.spec.correlation_threshold},
                     {"dc_weighted", a.spec.dc_weighted},
                     {"bandpass", !a.no_bandpass},
                     {"low_hz", a.band.low_hz},
                     {"high_hz", a.band.high_hz},
                     {"resample", a.resample}};
    write_json_file(join_path(a.out, "derive.json"), manifest);
    std::cout << "derive: " << subjects.ids.size() << " subjects -> " << a.out << "\n";
    return 0;
}

// ---- parcellate ---------------------------------------------------------------

struct ParcellateArgs {
    std::string in, out, atlas_path, mask_path;
    bool no_bandpass = false;
    double tr_override = 0.0;
    BandpassSpec band;
};

int cmd_parcellate(const ParcellateArgs& a) {
    ensure_dir(a.out);
    LabeledSubjects subjects = read_labels_csv(join_path(a.in, "labels.csv"));
    const std::string atlas_path =
        a.atlas_path.empty() ? join_path(a.in, "atlas.nii.gz") : a.atlas_path;
    AtlasVolume atlas = read_atlas(atlas_path);
    std::optional<MaskVolume> mask;
    const std::string mask_path =
        a.mask_path.empty() ? join_path(a.in, "mask.nii.gz") : a.mask_path;
    if (fs::exists(mask_path)) mask = read_mask(mask_path);

    for (const std::string& id : subjects.ids) {
        Volume4D bold = read_bold(join_path(a.in, id + "_bold.nii.gz"));
        if (!a.no_bandpass) {
            BandpassSpec band = a.band;
            band.tr_seconds = a.tr_override > 0.0
                                  ? a.tr_override
                                  : (bold.tr_seconds > 0.0 ? bold.tr_seconds : a.band.tr_seconds);
            bandpass_volume(bold, band, mask ? &*mask : nullptr);
        }
        RoiTimeseries ts = roi_mean_timeseries(bold, atlas);
        write_roi_timeseries_csv(join_path(a.out, id + "_roi.csv"), ts);
        std::cerr << "parcellate: " << id << " -> " << ts.m << " ROIs x " << ts.t << " frames\n";
    }
    write_labels_csv(join_path(a.out, "labels.csv"), subjects);
    std::cout << "parcellate: " << subjects.ids.size() << " subjects -> " << a.out << "\n";
    return 0;
}

// ---- features -------------------------------------------------------------------

struct FeaturesArgs {
    std::string in, out, emit_mask;
};

int cmd_features(const FeaturesArgs& a) {
    LabeledSubjects subjects = read_labels_csv(join_path(a.in, "labels.csv"));
    if (subjects.ids.empty()) throw EmptyOutput("labels.csv lists no subjects");

    FeatureTable table;
    table.ids = subjects.ids;
    table.labels = subjects.labels;
    for (const std::string& id : subjects.ids) {
        RoiTimeseries ts = read_roi_timeseries_csv(join_path(a.in, id + "_roi.csv"));
        ConnectomeFeatures f = upper_triangle(fc_matrix(ts));
        if (table.dim == 0) {
            table.dim = f.size();
        } else if (table.dim != f.size()) {
            throw ShapeMismatch("subject " + id + " produced " + std::to_string(f.size()) +
                                " features, expected " + std::to_string(table.dim));
        }
        table.data.insert(table.data.end(), f.begin(), f.end());
    }
    if (fs::path(a.out).has_parent_path()) ensure_dir(fs::path(a.out).parent_path().string());
    write_features_csv(a.out, table);
    std::cout << "features: " << subjects.ids.size() << " subjects x " << table.dim
              << " features -> " << a.out << "\n";

    if (!a.emit_mask.empty()) {
        std::vector<ConnectomeFeatures> rows;
        for (size_t i = 0; i < subjects.ids.size(); ++i) rows.push_back(table.features_of(i));
        QuartileMask mask = diagnet_mask(rows);
        write_mask_json(a.emit_mask, mask, subjects.ids);
        std::cout << "features: quartile mask (" << mask.indices.size() << " of " << mask.source_dim
                  << ") -> " << a.emit_mask << "\n";
    }
    return 0;
}

// ---- train / evaluate ---------------------------------------------------------

struct TrainArgs {
    std::string features, deriv_dir, out, config;
    std::string variant = "sto";
    std::string channels = "all";
    int fold = 0;
    int folds = 5;
    double proportion = 1.0;
    double val_fraction = 0.2;
    bool validate_on_test = false;
    int64_t grid = 12;
    pipeline::TrainConfig train;
    models::StvConfig stv;
    int64_t fc_mlp_hidden = 16;
    int64_t diagnet_hidden = 0;
    double recon_weight = 1.0;
    double dropout = 0.2;
    uint64_t seed = 0;
};

bool variant_wants_volumes(const std::string& v) {
    return v == "sto" || v == "sto_diagnet" || v == "stv_only";
}
bool variant_wants_features(const std::string& v) { return v != "stv_only"; }

// Load features (+ optional derivative stacks) into a cohort table.
pipeline::CohortTable load_cohort(const std::string& features_path, const std::string& deriv_dir,
                                  bool want_volumes, int64_t grid,
                                  std::vector<std::string>* stack_channels) {
    FeatureTable table = read_features_csv(features_path);
    pipeline::CohortTable cohort;
    cohort.feature_dim = table.dim;
    if (want_volumes && deriv_dir.empty())
        throw ConfigError("variant needs derivative stacks; pass --deriv-dir");

    if (want_volumes && stack_channels) {
        const std::string manifest_path = join_path(deriv_dir, "derive.json");
        if (fs::exists(manifest_path)) {
            json m = load_json_file(manifest_path);
            if (m.contains("channels")) m.at("channels").get_to(*stack_channels);
        }
        if (stack_channels->empty())
            *stack_channels = {"reho", "dc", "lfcd", "vmhc"};
    }

    for (size_t i = 0; i < table.ids.size(); ++i) {
        pipeline::SubjectRecord rec;
        rec.id = table.ids[i];
        rec.label = table.labels[i];
        rec.features = table.features_of(i);
        if (want_volumes) {
            Volume3D stack = read_stack(join_path(deriv_dir, rec.id + "_deriv.nii.gz"));
            if (stack.nx != grid || stack.ny != grid || stack.nz != grid)
                stack = resample_to(stack, grid, grid, grid);
            rec.deriv = std::move(stack);
        }
        rec.content_hash = pipeline::subject_content_hash(rec);
        cohort.subjects.push_back(std::move(rec));
    }
    if (cohort.subjects.empty()) throw EmptyOutput(features_path + " lists no subjects");
    return cohort;
}

std::vector<int> named_channel_indices(const std::vector<std::string>& stack_channels,
                                       const std::string& which) {
    std::vector<int> idx;
    if (which == "all") {
        for (size_t i = 0; i < stack_channels.size(); ++i) idx.push_back(static_cast<int>(i));
        return idx;
    }
    for (const std::string& name : split_names(which)) {
        auto it = std::find(stack_channels.begin(), stack_channels.end(), name);
        if (it == stack_channels.end())
            throw ConfigError("channel '" + name + "' is not present in the derivative stacks");
        idx.push_back(static_cast<int>(it - stack_channels.begin()));
    }
    if (idx.empty()) throw ConfigError("--channels selected nothing");
    return idx;
}

json scaler_to_json(const pipeline::FeatureScaler& s) {
    return {{"mean", s.mean}, {"std", s.std}};
}

pipeline::FeatureScaler scaler_from_json(const json& j) {
    pipeline::FeatureScaler s;
    j.at("mean").get_to(s.mean);
    j.at("std").get_to(s.std);
    return s;
}

std::unique_ptr<models::Classifier> build_variant(const TrainArgs& a, int64_t feat_dim,
                                                  int64_t in_channels, uint64_t model_seed) {
    if (a.variant == "fc_mlp")
        return models::build_baseline_fc_mlp(feat_dim, a.fc_mlp_hidden, a.dropout, model_seed);
    if (a.variant == "diagnet")
        return models::build_baseline_diagnet(feat_dim, a.diagnet_hidden, a.recon_weight,
                                              model_seed);
    models::StoConfig sto;
    sto.stv = a.stv;
    sto.stv.in_channels = in_channels;
    sto.stv.grid_z = sto.stv.grid_y = sto.stv.grid_x = a.grid;
    sto.feature_dim = std::max<int64_t>(feat_dim, 2);
    sto.dropout = a.dropout;
    sto.recon_weight = a.recon_weight;
    sto.seed = model_seed;
    if (a.variant == "sto") sto.variant = "vanilla";
    else if (a.variant == "sto_diagnet") sto.variant = "diagnet";
    else if (a.variant == "stv_only") sto.variant = "stv_only";
    else if (a.variant == "str_only") sto.variant = "str_only";
    else throw ConfigError("unknown variant '" + a.variant + "'");
    return models::build_sto(sto);
}

int cmd_train(const TrainArgs& a) {
    if (a.fold < 0 || a.fold >= a.folds)
        throw ConfigError("--fold must lie in [0, --folds)");
    ensure_dir(a.out);

    std::vector<std::string> stack_channels;
    pipeline::CohortTable cohort = load_cohort(a.features, a.deriv_dir,
                                               variant_wants_volumes(a.variant), a.grid,
                                               &stack_channels);
    pipeline::FoldView view(cohort);
    const std::vector<int> labels = cohort.labels();
    const std::vector<pipeline::FoldSplit> splits =
        pipeline::stratified_kfold(labels, a.folds, a.seed);
    const pipeline::FoldSplit& split = splits[static_cast<size_t>(a.fold)];
    const uint64_t tag = static_cast<uint64_t>(a.fold);

    std::vector<int> reduced = pipeline::subsample_train(
        split.train, labels, a.proportion, derive_seed(a.seed, seed_tag::subsample, tag));
    std::vector<int> tr, val;
    if (a.validate_on_test) {
        tr = reduced;
        val = split.test;
    } else {
        std::tie(tr, val) = pipeline::split_validation(
            reduced, labels, a.val_fraction, derive_seed(a.seed, seed_tag::val_split, tag));
    }

    pipeline::BatchOptions opts;
    opts.want_volumes = variant_wants_volumes(a.variant);
    opts.want_features = variant_wants_features(a.variant);
    if (opts.want_volumes) opts.channels = named_channel_indices(stack_channels, a.channels);

    const bool diagnet_features = a.variant == "diagnet" || a.variant == "sto_diagnet";
    std::vector<std::vector<double>> train_rows;
    if (opts.want_features) {
        if (diagnet_features) {
            std::vector<ConnectomeFeatures> raw;
            for (int i : tr) raw.push_back(view.features(i));
            opts.mask = diagnet_mask(raw);
            for (const auto& r : raw) train_rows.push_back(apply_mask(r, *opts.mask));
        } else {
            for (int i : tr) train_rows.push_back(view.features(i));
        }
        opts.scaler = pipeline::FeatureScaler::fit(train_rows);
    }
    const int64_t feat_dim = train_rows.empty() ? 0 : static_cast<int64_t>(train_rows[0].size());

    const uint64_t model_seed = derive_seed(a.seed, seed_tag::model_init, tag);
    std::unique_ptr<models::Classifier> model =
        build_variant(a, feat_dim, static_cast<int64_t>(opts.channels.size()), model_seed);

    pipeline::TrainConfig tc = a.train;
    tc.seed = derive_seed(a.seed, seed_tag::train_loop, tag);
    std::cerr << "train: " << model->desc() << ", " << tr.size() << " train / " << val.size()
              << " val subjects\n";
    pipeline::TrainResult result = pipeline::train(*model, view, tr, val, opts, tc);

    if (!a.validate_on_test)
        for (int i : split.test)
            if (view.reads(i) != 0)
                throw InvalidTarget("leakage: test subject " +
                                    cohort.subjects[static_cast<size_t>(i)].id +
                                    " was read during training");

    std::vector<double> scores = pipeline::evaluate(*model, view, split.test, opts);
    std::vector<int> test_labels;
    for (int i : split.test) test_labels.push_back(labels[static_cast<size_t>(i)]);
    const double test_auc = pipeline::auc(scores, test_labels);

    write_binary_file(join_path(a.out, "checkpoint.bin"), result.best_checkpoint);
    pipeline::write_trace_csv(join_path(a.out, "trace.csv"), result.trace);

    auto ids_of = [&](const std::vector<int>& idx) {
        std::vector<std::string> out;
        for (int i : idx) out.push_back(cohort.subjects[static_cast<size_t>(i)].id);
        return out;
    };
    json run = {{"kind", "sto-train-run"},
                {"variant", a.variant},
                {"channels", a.channels},
                {"stack_channels", stack_channels},
                {"grid", a.grid},
                {"feature_dim", feat_dim},
                {"stem_channels", a.stv.stem_channels},
                {"stage_channels", a.stv.stage_channels},
                {"stage_strides", a.stv.stage_strides},
                {"embed_dim", a.stv.embed_dim},
                {"fc_mlp_hidden", a.fc_mlp_hidden},
                {"diagnet_hidden", a.diagnet_hidden},
                {"recon_weight", a.recon_weight},
                {"dropout", a.dropout},
                {"seed", a.seed},
                {"fold", a.fold},
                {"folds", a.folds},
                {"proportion", a.proportion},
                {"model_seed", model_seed},
                {"best_epoch", result.best_epoch},
                {"best_val_auc", result.best_val_auc},
                {"test_auc", test_auc},
                {"params", model->stats().params},
                {"train_ids", ids_of(tr)},
                {"val_ids", ids_of(val)},
                {"test_ids", ids_of(split.test)},
                {"mask", opts.mask ? json({{"source_dim", opts.mask->source_dim},
                                           {"indices", opts.mask->indices}})
                                   : json(nullptr)},
                {"scaler", opts.want_features ? scaler_to_json(opts.scaler) : json(nullptr)}};
    write_json_file(join_path(a.out, "run.json"), run);
    std::cout << "train: fold " << a.fold << " test AUC " << format_double(test_auc)
              << " (best epoch " << result.best_epoch << ") -> " << a.out << "\n";
    return 0;
}

struct EvaluateArgs {
    std::string run_dir, features, deriv_dir, out, subjects;
};

int cmd_evaluate(const EvaluateArgs& a) {
    json run = load_json_file(join_path(a.run_dir, "run.json"));
    if (!run.contains("kind") || run.at("kind") != "sto-train-run")
        throw MalformedHeader(join_path(a.run_dir, "run.json") + " is not a training run manifest");

    TrainArgs cfg;
    run.at("variant").get_to(cfg.variant);
    run.at("channels").get_to(cfg.channels);
    run.at("grid").get_to(cfg.grid);
    run.at("stem_channels").get_to(cfg.stv.stem_channels);
    run.at("stage_channels").get_to(cfg.stv.stage_channels);
    run.at("stage_strides").get_to(cfg.stv.stage_strides);
    run.at("embed_dim").get_to(cfg.stv.embed_dim);
    run.at("fc_mlp_hidden").get_to(cfg.fc_mlp_hidden);
    run.at("diagnet_hidden").get_to(cfg.diagnet_hidden);
    run.at("recon_weight").get_to(cfg.recon_weight);
    run.at("dropout").get_to(cfg.dropout);
    const int64_t feat_dim = run.at("feature_dim").get<int64_t>();
    const uint64_t model_seed = run.at("model_seed").get<uint64_t>();

    std::vector<std::string> stack_channels;
    if (run.contains("stack_channels")) run.at("stack_channels").get_to(stack_channels);

    pipeline::CohortTable cohort = load_cohort(a.features, a.deriv_dir,
                                               variant_wants_volumes(cfg.variant), cfg.grid,
                                               stack_channels.empty() ? &stack_channels : nullptr);
    pipeline::FoldView view(cohort);

    pipeline::BatchOptions opts;
    opts.want_volumes = variant_wants_volumes(cfg.variant);
    opts.want_features = variant_wants_features(cfg.variant);
    if (opts.want_volumes) opts.channels = named_channel_indices(stack_channels, cfg.channels);
    if (!run.at("mask").is_null()) {
        QuartileMask m;
        run.at("mask").at("source_dim").get_to(m.source_dim);
        run.at("mask").at("indices").get_to(m.indices);
        opts.mask = m;
    }
    if (!run.at("scaler").is_null()) opts.scaler = scaler_from_json(run.at("scaler"));

    std::unique_ptr<models::Classifier> model =
        build_variant(cfg, feat_dim, static_cast<int64_t>(opts.channels.size()), model_seed);
    nn::load_checkpoint(join_path(a.run_dir, "checkpoint.bin"), model->parameters(),
                        model->buffers());

    // Which subjects: --subjects csv of ids, else the run's test fold.
    std::vector<std::string> wanted;
    if (!a.subjects.empty()) wanted = split_names(a.subjects);
    else run.at("test_ids").get_to(wanted);

    std::map<std::string, int> index_of;
    for (size_t i = 0; i < cohort.subjects.size(); ++i)
        index_of[cohort.subjects[i].id] = static_cast<int>(i);
    std::vector<int> idx;
    for (const std::string& id : wanted) {
        auto it = index_of.find(id);
        if (it == index_of.end()) throw InvalidTarget("subject '" + id + "' not in feature table");
        idx.push_back(it->second);
    }
    if (idx.empty()) throw EmptyOutput("no subjects selected for evaluation");

    std::vector<double> scores = pipeline::evaluate(*model, view, idx, opts);
    std::vector<int> eval_labels;
    json per_subject = json::array();
    for (size_t i = 0; i < idx.size(); ++i) {
        const auto& rec = cohort.subjects[static_cast<size_t>(idx[i])];
        eval_labels.push_back(rec.label);
        per_subject.push_back({{"id", rec.id}, {"label", rec.label}, {"prob", scores[i]}});
    }
    const bool both = std::count(eval_labels.begin(), eval_labels.end(), 1) > 0 &&
                      std::count(eval_labels.begin(), eval_labels.end(), 0) > 0;
    json report = {{"kind", "sto-evaluation"},
                   {"n", idx.size()},
                   {"auc", both ? json(pipeline::auc(scores, eval_labels)) : json(nullptr)},
                   {"subjects", per_subject}};
    if (!a.out.empty()) {
        write_json_file(a.out, report);
        std::cout << "evaluate: " << idx.size() << " subjects -> " << a.out << "\n";
    } else {
        std::cout << report.dump(2) << "\n";
    }
    if (both) std::cout << "evaluate: AUC " << format_double(pipeline::auc(scores, eval_labels))
                        << "\n";
    return 0;
}

// ---- stats ----------------------------------------------------------------------

struct StatsArgs {
    std::string variant = "sto";
    std::string atlas = "aal";
    int64_t feature_dim = 0;  // 0 = from atlas
    int64_t grid = 32;
    int64_t in_channels = 4;
    int64_t fc_mlp_hidden = 16;
    int64_t diagnet_hidden = 0;
    int64_t embed_dim = 512;
    std::string out;
};

int cmd_stats(const StatsArgs& a) {
    int64_t dim = a.feature_dim;
    if (dim <= 0) {
        if (a.atlas == "aal") dim = 116 * 115 / 2;
        else if (a.atlas == "cc200") dim = 200 * 199 / 2;
        else throw ConfigError("--atlas must be aal or cc200 (or pass --feature-dim)");
    }

    models::StvConfig stv;
    stv.in_channels = a.in_channels;
    stv.embed_dim = a.embed_dim;
    stv.grid_z = stv.grid_y = stv.grid_x = a.grid;

    std::unique_ptr<models::Classifier> model;
    if (a.variant == "fc_mlp") {
        model = models::build_baseline_fc_mlp(dim, a.fc_mlp_hidden, 0.2, 0);
    } else if (a.variant == "diagnet") {
        const int64_t d = 2 * (dim / 4);
        model = models::build_baseline_diagnet(d, a.diagnet_hidden, 1.0, 0);
    } else {
        models::StoConfig sto;
        sto.stv = stv;
        sto.feature_dim = dim;
        if (a.variant == "sto") sto.variant = "vanilla";
        else if (a.variant == "sto_diagnet") {
            sto.variant = "diagnet";
            sto.feature_dim = 2 * (dim / 4);
        } else if (a.variant == "stv_only") sto.variant = "stv_only";
        else if (a.variant == "str_only") sto.variant = "str_only";
        else throw ConfigError("unknown variant '" + a.variant + "'");
        model = models::build_sto(sto);
    }

    const models::ModelStats s = model->stats();
    const double gflops = static_cast<double>(s.flops) / 1e9;
    const double mem_mb = static_cast<double>(s.activation_bytes) / (1024.0 * 1024.0);
    std::cout << "model:        " << model->desc() << "\n"
              << "parameters:   " << s.params << "\n"
              << "flops:        " << s.flops << " (" << format_double(gflops) << " GFLOPs)\n"
              << "activations:  " << s.activation_bytes << " bytes (" << format_double(mem_mb)
              << " MB)\n"
              << "convention:   " << models::ModelStats::flop_convention() << "\n";
    if (!a.out.empty()) {
        json j = {{"kind", "sto-model-stats"},
                  {"model", model->desc()},
                  {"variant", a.variant},
                  {"feature_dim", dim},
                  {"grid", a.grid},
                  {"params", s.params},
                  {"flops", s.flops},
                  {"gflops", gflops},
                  {"activation_bytes", s.activation_bytes},
                  {"activation_mb", mem_mb},
                  {"flop_convention", models::ModelStats::flop_convention()}};
        write_json_file(a.out, j);
    }
    return 0;
}

// ---- reproduce ------------------------------------------------------------------

struct ReproduceArgs {
    std::string out, config;
    bool quick = false;
    bool null_mode = false;
    uint64_t seed = 7;
    int threads = 0;  // 0 = unset -> env/default
};

int cmd_reproduce(const ReproduceArgs& a) {
    pipeline::ExperimentConfig cfg;
    if (a.null_mode) cfg = pipeline::null_preset(a.seed);
    else if (a.quick) cfg = pipeline::quick_preset(a.seed);
    else {
        cfg.seed = a.seed;
        cfg.synth.seed = a.seed;
    }
    if (!a.config.empty()) apply_experiment_json(load_json_file(a.config), cfg);
    if (a.threads > 0) cfg.threads = a.threads;
    cfg.validate();

    ensure_dir(a.out);
    std::cerr << "reproduce: synthesizing cohort (" << total_subjects(cfg.synth)
              << " subjects, grid " << cfg.synth.nx << "^3, T=" << cfg.synth.t << ")\n";
    pipeline::CohortTable cohort = pipeline::build_synthetic_cohort(cfg);
    std::cerr << "reproduce: cohort ready (" << cohort.n_rois << " ROIs, "
              << cohort.feature_dim << " features); running experiment grid on " << cfg.threads
              << " thread(s)\n";

    pipeline::ExperimentReport report = pipeline::run_experiment(cfg, cohort);

    pipeline::write_table1_csv(join_path(a.out, "table1.csv"), report);
    pipeline::write_table2_csv(join_path(a.out, "table2.csv"), report);
    pipeline::write_report_json(join_path(a.out, "report.json"), cfg, report);
    ensure_dir(join_path(a.out, "traces"));
    auto dump_traces = [&](const pipeline::RunRecord& run) {
        for (size_t f = 0; f < run.traces.size(); ++f) {
            std::string name = run.variant + "_" + run.channels + "_p" +
                               format_double(run.proportion) + "_fold" + std::to_string(f) +
                               ".csv";
            pipeline::write_trace_csv(join_path(join_path(a.out, "traces"), name), run.traces[f]);
        }
    };
    for (const auto& run : report.table1) dump_traces(run);
    for (const auto& run : report.table2) dump_traces(run);

    auto print_run = [](const pipeline::RunRecord& r) {
        std::ostringstream line;
        line << "  " << r.variant;
        if (r.channels != "all") line << "[" << r.channels << "]";
        line << " @" << format_double(r.proportion) << ": AUC " << format_double(r.mean_auc)
             << " +/- " << format_double(r.std_auc);
        std::cout << line.str() << "\n";
    };
    std::cout << "comparison (variant x training proportion):\n";
    for (const auto& r : report.table1) print_run(r);
    std::cout << "ablations (full proportion):\n";
    for (const auto& r : report.table2) print_run(r);
    std::cout << "leakage audit: " << (report.audit_passed ? "PASSED" : "FAILED") << " ("
              << report.audit_detail << ")\n";
    std::cout << "reproduce: wrote table1.csv, table2.csv, report.json, traces/ -> " << a.out
              << "\n";
    if (!report.audit_passed) throw InvalidTarget("leakage audit failed: " + report.audit_detail);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sto: spatial-temporal-omics fMRI classification pipeline"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    ParcellateArgs parc_args;
    DeriveArgs derive_args;
    FeaturesArgs feat_args;
    TrainArgs train_args;
    EvaluateArgs eval_args;
    StatsArgs stats_args;
    ReproduceArgs rep_args;

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic BOLD cohort");
    synth->add_option("--out", synth_args.out, "Output directory")->required();
    synth->add_option("--config", synth_args.config, "JSON config file");
    std::optional<int64_t> synth_grid;
    synth->add_option("--seed", synth_args.cfg.seed, "Master seed");
    synth->add_option("--subjects-per-class", synth_args.cfg.n_subjects_per_class,
                      "Subjects per class");
    synth->add_option("--grid", synth_grid, "Cubic grid extent (sets nx=ny=nz)");
    synth->add_option("--nx", synth_args.cfg.nx, "X extent");
    synth->add_option("--ny", synth_args.cfg.ny, "Y extent");
    synth->add_option("--nz", synth_args.cfg.nz, "Z extent");
    synth->add_option("--t", synth_args.cfg.t, "Time points per subject");
    synth->add_option("--t-min", synth_args.cfg.t_min, "Variable-length minimum T");
    synth->add_option("--t-max", synth_args.cfg.t_max, "Variable-length maximum T (0 = fixed)");
    synth->add_option("--tr", synth_args.cfg.tr_seconds, "Repetition time in seconds");
    synth->add_option("--blocks", synth_args.cfg.n_blocks, "Number of atlas blocks");
    synth->add_option("--ar", synth_args.cfg.ar_coefficient, "AR(1) noise coefficient");
    synth->add_option("--effect-size", synth_args.cfg.effect_size, "Class coupling effect");
    synth->add_option("--base-coupling", synth_args.cfg.base_coupling, "Baseline pair coupling");
    synth->add_option("--noise-scale", synth_args.cfg.noise_scale, "Noise std");
    synth->add_option("--baseline-intensity", synth_args.cfg.baseline, "Constant offset");
    synth->add_option("--dtype", synth_args.dtype, "Payload datatype: float64|float32");

    // derive
    auto* derive = app.add_subcommand("derive", "Compute voxelwise derivative stacks");
    derive->add_option("--in", derive_args.in, "Cohort directory (from synth)")->required();
    derive->add_option("--out", derive_args.out, "Output directory")->required();
    derive->add_option("--mask", derive_args.mask_path, "Mask NIfTI (default <in>/mask.nii.gz)");
    std::optional<std::string> derive_channels;
    derive->add_option("--channels", derive_channels, "Comma list of reho,dc,lfcd,vmhc");
    derive->add_option("--reho-neighborhood", derive_args.spec.reho_neighborhood,
                       "ReHo cluster size: 7, 19 or 27");
    derive->add_option("--threshold", derive_args.spec.correlation_threshold,
                       "Correlation threshold for DC/LFCD");
    derive->add_flag("--weighted-dc", derive_args.spec.dc_weighted,
                     "Sum correlations above threshold instead of counting");
    derive->add_flag("--no-bandpass", derive_args.no_bandpass, "Skip temporal filtering");
    derive->add_option("--low-hz", derive_args.band.low_hz, "Bandpass low cut (Hz)");
    derive->add_option("--high-hz", derive_args.band.high_hz, "Bandpass high cut (Hz)");
    derive->add_option("--tr", derive_args.tr_override, "Override TR (default: from header)");
    derive->add_option("--resample", derive_args.resample,
                       "Resample stacks to a cubic grid (0 = native)");

    // parcellate
    auto* parc = app.add_subcommand("parcellate", "Average BOLD series within atlas ROIs");
    parc->add_option("--in", parc_args.in, "Cohort directory")->required();
    parc->add_option("--out", parc_args.out, "Output directory")->required();
    parc->add_option("--atlas", parc_args.atlas_path, "Atlas NIfTI (default <in>/atlas.nii.gz)");
    parc->add_option("--mask", parc_args.mask_path, "Mask NIfTI (default <in>/mask.nii.gz)");
    parc->add_flag("--no-bandpass", parc_args.no_bandpass, "Skip temporal filtering");
    parc->add_option("--low-hz", parc_args.band.low_hz, "Bandpass low cut (Hz)");
    parc->add_option("--high-hz", parc_args.band.high_hz, "Bandpass high cut (Hz)");
    parc->add_option("--tr", parc_args.tr_override, "Override TR (default: from header)");

    // features
    auto* feat = app.add_subcommand("features", "Build FC upper-triangle feature table");
    feat->add_option("--in", feat_args.in, "Parcellation directory")->required();
    feat->add_option("--out", feat_args.out, "Output features CSV")->required();
    feat->add_option("--emit-mask", feat_args.emit_mask,
                     "Also write a DiagNet quartile mask fit on this table");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train one cross-validation fold");
    train_cmd->add_option("--features", train_args.features, "Feature table CSV")->required();
    train_cmd->add_option("--deriv-dir", train_args.deriv_dir, "Derivative stack directory");
    train_cmd->add_option("--out", train_args.out, "Output directory")->required();
    train_cmd->add_option("--variant", train_args.variant,
                          "fc_mlp|diagnet|sto|sto_diagnet|stv_only|str_only");
    train_cmd->add_option("--channels", train_args.channels, "all or comma list of channels");
    train_cmd->add_option("--fold", train_args.fold, "Fold index to train");
    train_cmd->add_option("--folds", train_args.folds, "Number of folds");
    train_cmd->add_option("--proportion", train_args.proportion, "Training-set proportion");
    train_cmd->add_option("--val-fraction", train_args.val_fraction, "Validation carve-out");
    train_cmd->add_flag("--validate-on-test", train_args.validate_on_test,
                        "Select epochs on the test fold (reported-protocol mode; leaks)");
    train_cmd->add_option("--grid", train_args.grid, "Volumetric input grid extent");
    train_cmd->add_option("--lr", train_args.train.lr, "Adam learning rate");
    train_cmd->add_option("--batch-size", train_args.train.batch_size, "Mini-batch size");
    train_cmd->add_option("--epochs", train_args.train.max_epochs, "Max epochs");
    train_cmd->add_option("--eval-every", train_args.train.eval_every, "Epochs between evals");
    train_cmd->add_option("--early-stop", train_args.train.early_stop_evals,
                          "Evals without improvement before stopping");
    train_cmd->add_option("--stem-channels", train_args.stv.stem_channels, "Stem conv width");
    train_cmd->add_option("--stage-channels", train_args.stv.stage_channels,
                          "Residual stage widths");
    train_cmd->add_option("--embed-dim", train_args.stv.embed_dim, "Branch embedding width");
    train_cmd->add_option("--fc-mlp-hidden", train_args.fc_mlp_hidden, "FC-MLP hidden width");
    train_cmd->add_option("--diagnet-hidden", train_args.diagnet_hidden,
                          "DiagNet hidden width (0 = d/2)");
    train_cmd->add_option("--recon-weight", train_args.recon_weight,
                          "DiagNet reconstruction loss weight");
    train_cmd->add_option("--dropout", train_args.dropout, "Fusion dropout probability");
    train_cmd->add_option("--seed", train_args.seed, "Master seed");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "Score subjects with a trained checkpoint");
    eval_cmd->add_option("--run", eval_args.run_dir, "Training output directory")->required();
    eval_cmd->add_option("--features", eval_args.features, "Feature table CSV")->required();
    eval_cmd->add_option("--deriv-dir", eval_args.deriv_dir, "Derivative stack directory");
    eval_cmd->add_option("--out", eval_args.out, "Report JSON path (default: stdout)");
    eval_cmd->add_option("--subjects", eval_args.subjects,
                         "Comma list of subject ids (default: the run's test fold)");

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "Parameter/FLOP/memory accounting");
    stats_cmd->add_option("--variant", stats_args.variant,
                          "fc_mlp|diagnet|sto|sto_diagnet|stv_only|str_only");
    stats_cmd->add_option("--atlas", stats_args.atlas, "aal (116 ROIs) or cc200 (200 ROIs)");
    stats_cmd->add_option("--feature-dim", stats_args.feature_dim,
                          "Explicit connectome feature width (overrides --atlas)");
    stats_cmd->add_option("--grid", stats_args.grid, "Volumetric input grid extent");
    stats_cmd->add_option("--in-channels", stats_args.in_channels, "Derivative channels");
    stats_cmd->add_option("--embed-dim", stats_args.embed_dim, "Branch embedding width");
    stats_cmd->add_option("--fc-mlp-hidden", stats_args.fc_mlp_hidden, "FC-MLP hidden width");
    stats_cmd->add_option("--diagnet-hidden", stats_args.diagnet_hidden,
                          "DiagNet hidden width (0 = d/2)");
    stats_cmd->add_option("--out", stats_args.out, "Also write stats JSON here");

    // reproduce
    auto* rep = app.add_subcommand("reproduce",
                                   "Synthesize a cohort and run the full comparison/ablation grid");
    rep->add_option("--out", rep_args.out, "Output directory")->required();
    rep->add_option("--config", rep_args.config, "JSON experiment config");
    rep->add_flag("--quick", rep_args.quick, "Minutes-scale preset (small grid and widths)");
    rep->add_flag("--null", rep_args.null_mode, "No-signal control preset (expects chance AUC)");
    rep->add_option("--seed", rep_args.seed, "Master seed");
    rep->add_option("--threads", rep_args.threads, "Worker threads (default: STO_THREADS or 1)");

    try {
        app.parse(argc, argv);

        if (*synth) {
            if (!synth_args.config.empty()) {
                json j = load_json_file(synth_args.config);
                SynthConfig from_file;
                if (looks_like_experiment(j)) {
                    pipeline::ExperimentConfig full;
                    apply_experiment_json(j, full);
                    from_file = full.synth;
                } else {
                    apply_synth_json(j, from_file);
                }
                // Explicit flags override file values; everything else comes
                // from the file.
                SynthConfig merged = from_file;
                auto keep = [&](const char* flag, auto SynthConfig::* field) {
                    if (synth->count(flag)) merged.*field = synth_args.cfg.*field;
                };
                keep("--subjects-per-class", &SynthConfig::n_subjects_per_class);
                keep("--nx", &SynthConfig::nx);
                keep("--ny", &SynthConfig::ny);
                keep("--nz", &SynthConfig::nz);
                keep("--t", &SynthConfig::t);
                keep("--t-min", &SynthConfig::t_min);
                keep("--t-max", &SynthConfig::t_max);
                keep("--tr", &SynthConfig::tr_seconds);
                keep("--blocks", &SynthConfig::n_blocks);
                keep("--ar", &SynthConfig::ar_coefficient);
                keep("--effect-size", &SynthConfig::effect_size);
                keep("--base-coupling", &SynthConfig::base_coupling);
                keep("--noise-scale", &SynthConfig::noise_scale);
                keep("--baseline-intensity", &SynthConfig::baseline);
                keep("--seed", &SynthConfig::seed);
                synth_args.cfg = merged;
            }
            if (synth_grid) synth_args.cfg.nx = synth_args.cfg.ny = synth_args.cfg.nz = *synth_grid;
            return cmd_synth(synth_args);
        }
        if (*derive) {
            if (derive_channels) set_channels(derive_args.spec, split_names(*derive_channels));
            return cmd_derive(derive_args);
        }
        if (*parc) return cmd_parcellate(parc_args);
        if (*feat) return cmd_features(feat_args);
        if (*train_cmd) return cmd_train(train_args);
        if (*eval_cmd) return cmd_evaluate(eval_args);
        if (*stats_cmd) return cmd_stats(stats_args);
        if (*rep) {
            if (rep_args.threads == 0) rep_args.threads = env_threads();
            return cmd_reproduce(rep_args);
        }
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: ConfigError: " << e.what() << "\n";
        return static_cast<int>(ErrorCategory::Config);
    } catch (const Error& e) {
        // Error::what() already carries the "Kind: message" form.
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: Internal: " << e.what() << "\n";
        return 1;
    }
}
