#pragma once

#include "hmte/image.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hmte {

inline constexpr int kBenign = 0;
inline constexpr int kMalignant = 1;

struct Sample {
    Image image;  // values in [0, 1]
    Image mask;   // values in {0, 1}
    int label = kBenign;
    std::string case_id;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Padding and resizing

struct PaddedPair {
    Image image;
    Image mask;
    Index pad_top = 0;
    Index pad_left = 0;
};

/// Pads the shorter side with zeros up to max(H, W); odd deltas put the extra
/// row/column on the bottom/right.
PaddedPair zero_pad_square(const Image& image, const Image& mask);

/// zero_pad_square, then bilinear (image) / nearest (mask) resize to size x size.
Sample prepare_sample(const Sample& sample, Index size);

// ---------------------------------------------------------------------------
// Case-level splitting

enum class Split { Train = 0, Val = 1, Test = 2 };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct SplitRatios {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
};

struct SplitAssignment {
    std::map<std::string, Split> by_case;

    Split of(const std::string& case_id) const;
    /// Sample indices of `split`, in sample order.
    std::vector<std::size_t> indices(std::span<const Sample> samples, Split split) const;
};

/// Shuffles cases with `seed`, gives each split one case, then assigns every remaining
/// case to the split with the largest remaining image-count quota.
SplitAssignment case_level_split(std::span<const Sample> samples, const SplitRatios& ratios, std::uint64_t seed);

struct SplitRecord {
    std::string case_id;
    Split split;
};

/// Case ids that appear under more than one split.
std::vector<std::string> find_split_leaks(std::span<const SplitRecord> records);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
    bool hflip = true;
    double shift_frac = 0.2;
    double rot_deg = 20.0;
};

Sample horizontal_flip(const Sample& sample);

/// Horizontal flip with probability 1/2, then one affine resample combining a shift of
/// up to shift_frac of each extent and a rotation of up to rot_deg about the center.
/// Zero fill; bilinear for the image, nearest for the mask.
Sample augment(const Sample& sample, const AugmentConfig& config, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRow {
    std::filesystem::path image_path;
    std::filesystem::path mask_path;
    int label = kBenign;
    std::string case_id;
};

inline constexpr const char* kManifestHeader = "image_path,mask_path,label,case_id";

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows);

/// Loads every row (paths relative to the manifest directory) and prepares it at `size`.
std::vector<Sample> load_samples(const std::filesystem::path& manifest, Index size);

// ---------------------------------------------------------------------------
// Synthetic data

/// `n` even. Benign: smooth bright ellipse on layered speckle. Malignant: spiculated
/// star with lower contrast and a blurred margin. Cases hold 2-4 images of one lesion.
std::vector<Sample> synth_generate(Index n, Index size, std::uint64_t seed);

/// Single-threshold classifier on mean image intensity, fitted for accuracy.
struct IntensityBaseline {
    double threshold = 0.0;
    bool brighter_is_malignant = true;

    static IntensityBaseline fit(std::span<const Sample> samples);
    int predict(const Sample& sample) const;
    double accuracy(std::span<const Sample> samples) const;
};

}  // namespace hmte
