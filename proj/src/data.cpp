#include "hmte/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace hmte {

void Sample::validate() const {
    if (image.rows() != mask.rows() || image.cols() != mask.cols()) {
        throw std::invalid_argument("sample " + case_id + ": image and mask dimensions differ");
    }
    if (!((mask == Real(0)) || (mask == Real(1))).all()) {
        throw std::invalid_argument("sample " + case_id + ": mask is not binary");
    }
    if (case_id.empty()) throw std::invalid_argument("sample has an empty case id");
    if (label != kBenign && label != kMalignant) throw std::invalid_argument("sample " + case_id + ": bad label");
}

// ---------------------------------------------------------------------------
// Padding

PaddedPair zero_pad_square(const Image& image, const Image& mask) {
    if (image.size() == 0) throw std::invalid_argument("zero_pad_square: empty image");
    if (image.rows() != mask.rows() || image.cols() != mask.cols()) {
        throw std::invalid_argument("zero_pad_square: image and mask dimensions differ");
    }
    const Index side = std::max(image.rows(), image.cols());
    PaddedPair out;
    out.pad_top = (side - image.rows()) / 2;
    out.pad_left = (side - image.cols()) / 2;
    out.image = Image::Zero(side, side);
    out.mask = Image::Zero(side, side);
    out.image.block(out.pad_top, out.pad_left, image.rows(), image.cols()) = image;
    out.mask.block(out.pad_top, out.pad_left, mask.rows(), mask.cols()) = mask;
    return out;
}

Sample prepare_sample(const Sample& sample, Index size) {
    PaddedPair p = zero_pad_square(sample.image, sample.mask);
    Sample out;
    out.image = resize_bilinear(p.image, size, size);
    out.mask = resize_nearest(p.mask, size, size);
    out.label = sample.label;
    out.case_id = sample.case_id;
    return out;
}

// ---------------------------------------------------------------------------
// Splitting

std::string_view split_name(Split split) {
    switch (split) {
        case Split::Train:
            return "train";
        case Split::Val:
            return "val";
        case Split::Test:
            return "test";
    }
    return "?";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

Split SplitAssignment::of(const std::string& case_id) const {
    const auto it = by_case.find(case_id);
    if (it == by_case.end()) throw std::out_of_range("case '" + case_id + "' has no split");
    return it->second;
}

std::vector<std::size_t> SplitAssignment::indices(std::span<const Sample> samples, Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (of(samples[i].case_id) == split) out.push_back(i);
    }
    return out;
}

SplitAssignment case_level_split(std::span<const Sample> samples, const SplitRatios& ratios, std::uint64_t seed) {
    const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
    if (std::any_of(r.begin(), r.end(), [](double x) { return x < 0; }) ||
        std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must be nonnegative and sum to 1");
    }
    std::map<std::string, Index> images_per_case;
    std::vector<std::string> cases;
    for (const Sample& s : samples) {
        if (images_per_case[s.case_id]++ == 0) cases.push_back(s.case_id);
    }
    const std::size_t active = static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [](double x) { return x > 0; }));
    if (cases.size() < active) {
        throw std::invalid_argument("case_level_split: " + std::to_string(cases.size()) + " cases cannot fill " +
                                    std::to_string(active) + " splits");
    }
    std::sort(cases.begin(), cases.end());
    std::mt19937_64 rng(seed);
    std::shuffle(cases.begin(), cases.end(), rng);

    const auto total = static_cast<double>(samples.size());
    std::array<double, 3> filled{0, 0, 0};
    SplitAssignment out;
    std::size_t next = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        if (r[s] <= 0) continue;
        const std::string& c = cases[next++];
        out.by_case[c] = static_cast<Split>(s);
        filled[s] += static_cast<double>(images_per_case[c]);
    }
    for (; next < cases.size(); ++next) {
        const std::string& c = cases[next];
        std::size_t best = 0;
        double best_deficit = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < 3; ++s) {
            if (r[s] <= 0) continue;
            const double deficit = r[s] * total - filled[s];
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = s;
            }
        }
        out.by_case[c] = static_cast<Split>(best);
        filled[best] += static_cast<double>(images_per_case[c]);
    }
    return out;
}

std::vector<std::string> find_split_leaks(std::span<const SplitRecord> records) {
    std::map<std::string, std::set<Split>> seen;
    for (const auto& r : records) seen[r.case_id].insert(r.split);
    std::vector<std::string> leaks;
    for (const auto& [id, splits] : seen) {
        if (splits.size() > 1) leaks.push_back(id);
    }
    return leaks;
}

// ---------------------------------------------------------------------------
// Augmentation

Sample horizontal_flip(const Sample& sample) {
    Sample out = sample;
    out.image = sample.image.rowwise().reverse();
    out.mask = sample.mask.rowwise().reverse();
    return out;
}

namespace {

Real sample_bilinear(const Image& img, double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    const auto y0 = static_cast<Index>(fy), x0 = static_cast<Index>(fx);
    const double wy = y - fy, wx = x - fx;
    auto at = [&](Index r, Index c) -> double {
        return (r >= 0 && r < img.rows() && c >= 0 && c < img.cols()) ? static_cast<double>(img(r, c)) : 0.0;
    };
    const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
                     wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
    return static_cast<Real>(std::clamp(v, 0.0, 1.0));
}

Real sample_nearest(const Image& img, double y, double x) {
    const auto r = static_cast<Index>(std::lround(y));
    const auto c = static_cast<Index>(std::lround(x));
    return (r >= 0 && r < img.rows() && c >= 0 && c < img.cols()) ? img(r, c) : Real(0);
}

}  // namespace

Sample augment(const Sample& sample, const AugmentConfig& config, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> sym(-1.0, 1.0);
    // Draw order is fixed so the stream position does not depend on the flags.
    const bool flip = unit(rng) < 0.5;
    const double dy = sym(rng) * config.shift_frac * static_cast<double>(sample.image.rows());
    const double dx = sym(rng) * config.shift_frac * static_cast<double>(sample.image.cols());
    const double angle = sym(rng) * config.rot_deg * std::numbers::pi / 180.0;

    Sample out = (config.hflip && flip) ? horizontal_flip(sample) : sample;
    if (config.shift_frac == 0.0 && config.rot_deg == 0.0) return out;

    const Image src_img = out.image;
    const Image src_mask = out.mask;
    const double cy = 0.5 * static_cast<double>(src_img.rows() - 1);
    const double cx = 0.5 * static_cast<double>(src_img.cols() - 1);
    const double cs = std::cos(angle), sn = std::sin(angle);
    for (Index r = 0; r < src_img.rows(); ++r) {
        for (Index c = 0; c < src_img.cols(); ++c) {
            // Inverse map: undo the shift, then rotate by -angle about the center.
            const double py = static_cast<double>(r) - cy - dy;
            const double px = static_cast<double>(c) - cx - dx;
            const double sy = cs * py + sn * px + cy;
            const double sx = -sn * py + cs * px + cx;
            out.image(r, c) = sample_bilinear(src_img, sy, sx);
            out.mask(r, c) = sample_nearest(src_mask, sy, sx) >= Real(0.5) ? Real(1) : Real(0);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, ',');) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && s[i] == ' ') ++i;
    return s.substr(i);
}

}  // namespace

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::string line;
    if (!std::getline(in, line) || trim(line) != kManifestHeader) {
        throw std::runtime_error(path.string() + ": expected header '" + kManifestHeader + "'");
    }
    std::vector<ManifestRow> rows;
    for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
        line = trim(line);
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 4) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
        ManifestRow row;
        row.image_path = trim(f[0]);
        row.mask_path = trim(f[1]);
        const std::string label = trim(f[2]);
        if (label == "b") {
            row.label = kBenign;
        } else if (label == "m") {
            row.label = kMalignant;
        } else {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": label must be 'b' or 'm'");
        }
        row.case_id = trim(f[3]);
        if (row.case_id.empty()) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": empty case_id");
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    out << kManifestHeader << '\n';
    for (const auto& r : rows) {
        out << r.image_path.generic_string() << ',' << r.mask_path.generic_string() << ','
            << (r.label == kMalignant ? 'm' : 'b') << ',' << r.case_id << '\n';
    }
    if (!out) throw std::runtime_error("failed writing manifest " + path.string());
}

std::vector<Sample> load_samples(const std::filesystem::path& manifest, Index size) {
    const auto base = manifest.parent_path();
    std::vector<Sample> samples;
    for (const auto& row : read_manifest(manifest)) {
        Sample s;
        s.image = read_pgm(base / row.image_path);
        Image mask = read_pgm(base / row.mask_path);
        s.mask = (mask >= Real(0.5)).cast<Real>();
        s.label = row.label;
        s.case_id = row.case_id;
        s.validate();
        samples.push_back(prepare_sample(s, size));
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct LesionShape {
    double cy, cx;        // center, fraction of size
    double radius;        // fraction of size
    double aspect;        // ellipse b/a
    double angle;         // radians
    std::vector<double> spikes;  // radial multipliers at evenly spaced angles (malignant)
};

double smoothstep_edge(double signed_dist, double width) { return 1.0 / (1.0 + std::exp(-signed_dist / width)); }

Image layered_background(Index size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    const double phase = u(rng) * 2.0 * std::numbers::pi;
    const double period = 0.25 + 0.2 * u(rng);
    const double level = 0.25 + 0.03 * u(rng);
    Image raw(size, size);
    for (Index r = 0; r < size; ++r) {
        const double y = static_cast<double>(r) / static_cast<double>(size);
        // Horizontal tissue layers.
        const double band = level + 0.07 * std::sin(2.0 * std::numbers::pi * y / period + phase) + 0.06 * y;
        for (Index c = 0; c < size; ++c) raw(r, c) = static_cast<Real>(band * std::exp(0.25 * n(rng)));
    }
    // 3x3 box blur gives the speckle a grain larger than one pixel.
    Image out(size, size);
    for (Index r = 0; r < size; ++r) {
        for (Index c = 0; c < size; ++c) {
            double acc = 0;
            int cnt = 0;
            for (Index dr = -1; dr <= 1; ++dr) {
                for (Index dc = -1; dc <= 1; ++dc) {
                    const Index rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= size || cc < 0 || cc >= size) continue;
                    acc += raw(rr, cc);
                    ++cnt;
                }
            }
            out(r, c) = static_cast<Real>(acc / cnt);
        }
    }
    return out;
}

/// Normalized radial coordinate: < 1 inside the lesion boundary.
double lesion_rho(const LesionShape& s, double y, double x, bool malignant) {
    const double dy = y - s.cy, dx = x - s.cx;
    const double cs = std::cos(s.angle), sn = std::sin(s.angle);
    const double u = cs * dx + sn * dy;
    const double v = (-sn * dx + cs * dy) / s.aspect;
    const double rho = std::sqrt(u * u + v * v) / s.radius;
    if (!malignant) return rho;
    double theta = std::atan2(v, u);
    if (theta < 0) theta += 2.0 * std::numbers::pi;
    const auto k = s.spikes.size();
    const double pos = theta / (2.0 * std::numbers::pi) * static_cast<double>(k);
    const auto i0 = static_cast<std::size_t>(pos) % k;
    const std::size_t i1 = (i0 + 1) % k;
    const double t = pos - std::floor(pos);
    return rho / ((1 - t) * s.spikes[i0] + t * s.spikes[i1]);
}

Sample render_lesion(const LesionShape& shape, int label, Index size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Sample s;
    s.label = label;
    s.image = layered_background(size, rng);
    s.mask = Image::Zero(size, size);
    const bool malignant = label == kMalignant;
    const double contrast = malignant ? 0.10 + 0.08 * u(rng) : 0.36 + 0.10 * u(rng);
    const double edge = malignant ? 0.12 : 0.03;
    std::normal_distribution<double> n(0.0, 1.0);
    for (Index r = 0; r < size; ++r) {
        for (Index c = 0; c < size; ++c) {
            const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(size);
            const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(size);
            const double rho = lesion_rho(shape, y, x, malignant);
            const double w = smoothstep_edge(1.0 - rho, edge);
            const double texture = 1.0 + 0.15 * n(rng);
            const double v = static_cast<double>(s.image(r, c)) * (1 - w) + w * (0.3 + contrast) * texture;
            s.image(r, c) = static_cast<Real>(std::clamp(v, 0.0, 1.0));
            if (rho < 1.0) s.mask(r, c) = 1;
        }
    }
    return s;
}

LesionShape draw_case_shape(bool malignant, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LesionShape s;
    s.cy = 0.35 + 0.3 * u(rng);
    s.cx = 0.35 + 0.3 * u(rng);
    s.angle = u(rng) * std::numbers::pi;
    if (malignant) {
        s.radius = 0.12 + 0.08 * u(rng);
        s.aspect = 0.75 + 0.25 * u(rng);
        const int k = 12 + static_cast<int>(u(rng) * 7);  // 6-9 spikes, alternating tips and valleys
        for (int i = 0; i < k; ++i) s.spikes.push_back(i % 2 == 0 ? 1.15 + 0.35 * u(rng) : 0.55 + 0.2 * u(rng));
    } else {
        s.radius = 0.12 + 0.09 * u(rng);
        s.aspect = 0.55 + 0.35 * u(rng);
    }
    return s;
}

LesionShape jitter(LesionShape s, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> sym(-1.0, 1.0);
    s.cy += 0.03 * sym(rng);
    s.cx += 0.03 * sym(rng);
    s.radius *= 1.0 + 0.08 * sym(rng);
    s.angle += 0.15 * sym(rng);
    return s;
}

}  // namespace

std::vector<Sample> synth_generate(Index n, Index size, std::uint64_t seed) {
    if (n <= 0 || n % 2 != 0) throw std::invalid_argument("synth_generate: n must be positive and even");
    if (size < 16) throw std::invalid_argument("synth_generate: size must be >= 16");

    // Case layout: per class, consecutive groups of 2-4 images.
    struct CaseSpec {
        int label;
        Index count;
    };
    std::vector<CaseSpec> layout;
    std::mt19937_64 layout_rng(seed);
    std::uniform_int_distribution<Index> group(2, 4);
    for (int label : {kBenign, kMalignant}) {
        Index remaining = n / 2;
        while (remaining > 0) {
            Index k = remaining <= 4 ? remaining : group(layout_rng);
            if (remaining - k == 1) k -= 1;
            layout.push_back({label, k});
            remaining -= k;
        }
    }

    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    std::uint64_t sample_index = 0;
    for (std::size_t ci = 0; ci < layout.size(); ++ci) {
        std::mt19937_64 case_rng(seed ^ (0x9E3779B97F4A7C15ULL * (ci + 1)));
        const bool malignant = layout[ci].label == kMalignant;
        const LesionShape base = draw_case_shape(malignant, case_rng);
        char id[32];
        std::snprintf(id, sizeof(id), "case%04zu", ci);
        for (Index k = 0; k < layout[ci].count; ++k, ++sample_index) {
            std::mt19937_64 rng(seed ^ sample_index);
            Sample s = render_lesion(jitter(base, rng), layout[ci].label, size, rng);
            s.case_id = id;
            out.push_back(std::move(s));
        }
    }
    return out;
}

IntensityBaseline IntensityBaseline::fit(std::span<const Sample> samples) {
    std::vector<std::pair<double, int>> pts;
    for (const auto& s : samples) pts.emplace_back(static_cast<double>(s.image.mean()), s.label);
    std::sort(pts.begin(), pts.end());
    IntensityBaseline best;
    double best_acc = -1;
    // Candidate thresholds between consecutive means, both polarities.
    for (std::size_t i = 0; i <= pts.size(); ++i) {
        const double thr = i == 0 ? pts.front().first - 1.0
                                  : (i == pts.size() ? pts.back().first + 1.0 : 0.5 * (pts[i - 1].first + pts[i].first));
        for (bool brighter : {true, false}) {
            IntensityBaseline b{thr, brighter};
            std::size_t correct = 0;
            for (const auto& [m, label] : pts) correct += ((m >= thr) == brighter ? kMalignant : kBenign) == label;
            const double acc = static_cast<double>(correct) / static_cast<double>(pts.size());
            if (acc > best_acc) {
                best_acc = acc;
                best = b;
            }
        }
    }
    return best;
}

int IntensityBaseline::predict(const Sample& sample) const {
    const bool above = static_cast<double>(sample.image.mean()) >= threshold;
    return above == brighter_is_malignant ? kMalignant : kBenign;
}

double IntensityBaseline::accuracy(std::span<const Sample> samples) const {
    if (samples.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& s : samples) correct += predict(s) == s.label;
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace hmte
