#include "sto/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace sto {

namespace {

struct BlockGrid {
    int gx = 1, gy = 1, gz = 1;                 // grid cells per axis
    int64_t x0, x1, y0, y1, z0, z1;             // central region [lo, hi)
};

// Factor n_blocks into a near-cubic grid gx*gy*gz >= n_blocks with minimal
// excess cells; cells beyond n_blocks stay background. An even gx is required
// whenever possible (always, for n_blocks >= 2): the planted coupling pairs
// blocks across the x midplane, and an odd gx center column has no partner.
BlockGrid layout_blocks(const SynthConfig& cfg) {
    BlockGrid g;
    bool have_best = false;
    std::array<int, 3> best_key{};  // (gx odd, excess, spread), lexicographic
    for (int gx = 1; gx <= cfg.n_blocks + 1; ++gx)
        for (int gy = 1; static_cast<int64_t>(gx) * gy <= cfg.n_blocks * 2; ++gy) {
            int gz = (cfg.n_blocks + gx * gy - 1) / (gx * gy);
            int total = gx * gy * gz;
            int excess = total - cfg.n_blocks;
            int spread = std::max({gx, gy, gz}) - std::min({gx, gy, gz});
            std::array<int, 3> key{gx % 2, excess, spread};
            if (!have_best || key < best_key) {
                have_best = true;
                best_key = key;
                g.gx = gx;
                g.gy = gy;
                g.gz = gz;
            }
        }
    auto margin = [](int64_t n) { return std::max<int64_t>(1, n / 6); };
    g.x0 = margin(cfg.nx);
    g.x1 = cfg.nx - margin(cfg.nx);
    g.y0 = margin(cfg.ny);
    g.y1 = cfg.ny - margin(cfg.ny);
    g.z0 = margin(cfg.nz);
    g.z1 = cfg.nz - margin(cfg.nz);
    return g;
}

// 0 = background, 1..n_blocks otherwise. Cell index is x-fastest in the grid.
int block_label_at(const BlockGrid& g, int n_blocks, int64_t x, int64_t y, int64_t z) {
    if (x < g.x0 || x >= g.x1 || y < g.y0 || y >= g.y1 || z < g.z0 || z >= g.z1) return 0;
    auto cell = [](int64_t v, int64_t lo, int64_t hi, int cells) {
        int c = static_cast<int>((v - lo) * cells / (hi - lo));
        return std::min(c, cells - 1);
    };
    int cx = cell(x, g.x0, g.x1, g.gx);
    int cy = cell(y, g.y0, g.y1, g.gy);
    int cz = cell(z, g.z0, g.z1, g.gz);
    int idx = cx + g.gx * (cy + g.gy * cz);
    return idx < n_blocks ? idx + 1 : 0;
}

}  // namespace

int total_subjects(const SynthConfig& cfg) { return 2 * cfg.n_subjects_per_class; }

int subject_label(const SynthConfig& cfg, int subject_index) {
    return subject_index < cfg.n_subjects_per_class ? 0 : 1;
}

std::string subject_id(int subject_index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "sub_%04d", subject_index);
    return buf;
}

AtlasVolume make_atlas(const SynthConfig& cfg) {
    cfg.validate();
    BlockGrid g = layout_blocks(cfg);
    Volume3D labels(cfg.nx, cfg.ny, cfg.nz, 1);
    for (int64_t z = 0; z < cfg.nz; ++z)
        for (int64_t y = 0; y < cfg.ny; ++y)
            for (int64_t x = 0; x < cfg.nx; ++x)
                labels.at(x, y, z) = static_cast<double>(block_label_at(g, cfg.n_blocks, x, y, z));
    return AtlasVolume::from_volume(labels);
}

MaskVolume make_mask(const SynthConfig& cfg) {
    AtlasVolume atlas = make_atlas(cfg);
    MaskVolume m(cfg.nx, cfg.ny, cfg.nz);
    for (size_t i = 0; i < atlas.labels.data.size(); ++i) m.data[i] = atlas.labels.data[i] > 0.0;
    return m;
}

std::vector<std::pair<int, int>> designated_pairs(const SynthConfig& cfg) {
    cfg.validate();
    BlockGrid g = layout_blocks(cfg);
    std::vector<std::pair<int, int>> pairs;
    // x-mirror partners in the block grid; skips the center column when gx is odd
    for (int cz = 0; cz < g.gz; ++cz)
        for (int cy = 0; cy < g.gy; ++cy)
            for (int cx = 0; cx < g.gx / 2; ++cx) {
                int a = cx + g.gx * (cy + g.gy * cz);
                int b = (g.gx - 1 - cx) + g.gx * (cy + g.gy * cz);
                if (a < cfg.n_blocks && b < cfg.n_blocks) pairs.emplace_back(a + 1, b + 1);
            }
    return pairs;
}

Volume4D generate_subject(const SynthConfig& cfg, int subject_index) {
    cfg.validate();
    if (subject_index < 0 || subject_index >= total_subjects(cfg))
        throw IndexOutOfBounds("subject index outside cohort");

    Rng rng(derive_seed(cfg.seed, seed_tag::synth_subject, static_cast<uint64_t>(subject_index)));
    const int label = subject_label(cfg, subject_index);
    const int t = cfg.t_max > 0
                      ? cfg.t_min + static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.t_max - cfg.t_min + 1)))
                      : cfg.t;

    // independent block latents, then impose pairwise coupling
    std::vector<std::vector<double>> latents(static_cast<size_t>(cfg.n_blocks));
    for (auto& s : latents) {
        s.resize(static_cast<size_t>(t));
        for (double& v : s) v = rng.next_gaussian();
    }
    double rho = std::clamp(cfg.base_coupling + (label == 1 ? cfg.effect_size : 0.0), 0.0, 0.99);
    double ortho = std::sqrt(1.0 - rho * rho);
    for (auto [a, b] : designated_pairs(cfg)) {
        auto& sa = latents[static_cast<size_t>(a - 1)];
        auto& sb = latents[static_cast<size_t>(b - 1)];
        for (int tt = 0; tt < t; ++tt)
            sb[static_cast<size_t>(tt)] = rho * sa[static_cast<size_t>(tt)] + ortho * sb[static_cast<size_t>(tt)];
    }

    BlockGrid g = layout_blocks(cfg);
    Volume4D v(cfg.nx, cfg.ny, cfg.nz, t);
    v.spacing_mm = {3.0, 3.0, 3.0};
    v.tr_seconds = cfg.tr_seconds;
    const int64_t vox = v.voxels();
    const double phi = cfg.ar_coefficient;
    const double innov = std::sqrt(1.0 - phi * phi);

    for (int64_t z = 0; z < cfg.nz; ++z)
        for (int64_t y = 0; y < cfg.ny; ++y)
            for (int64_t x = 0; x < cfg.nx; ++x) {
                int lbl = block_label_at(g, cfg.n_blocks, x, y, z);
                const int64_t base = v.index(x, y, z, 0);
                if (lbl == 0) {
                    for (int tt = 0; tt < t; ++tt) v.data[static_cast<size_t>(base + tt * vox)] = cfg.baseline;
                    continue;
                }
                const auto& s = latents[static_cast<size_t>(lbl - 1)];
                double noise = rng.next_gaussian();  // stationary AR(1), unit marginal variance
                for (int tt = 0; tt < t; ++tt) {
                    if (tt > 0) noise = phi * noise + innov * rng.next_gaussian();
                    v.data[static_cast<size_t>(base + tt * vox)] =
                        cfg.baseline + s[static_cast<size_t>(tt)] + cfg.noise_scale * noise;
                }
            }
    return v;
}

SynthCohort generate_cohort(const SynthConfig& cfg) {
    cfg.validate();
    SynthCohort cohort;
    cohort.atlas = make_atlas(cfg);
    cohort.mask = make_mask(cfg);
    cohort.coupled_roi_pairs = designated_pairs(cfg);
    const int n = total_subjects(cfg);
    cohort.volumes.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        cohort.volumes.push_back(generate_subject(cfg, i));
        cohort.labels.push_back(subject_label(cfg, i));
    }
    return cohort;
}

}  // namespace sto
