#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "fedsmooth/matrix.hpp"

namespace fedsmooth {

struct Dataset {
    Matrix features;  // N x d, entries in [0,1]
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols; }

    /// Throws ArgumentError on empty data, out-of-range labels or features
    /// outside [0,1].
    void validate() const;

    /// Rows selected by index, in the given order.
    Dataset subset(std::span<const std::size_t> indices) const;
    /// First min(count, N) rows.
    Dataset head(std::size_t count) const;
};

/// Reads a big-endian IDX image file (magic 0x00000803) and label file
/// (magic 0x00000801). Pixels are scaled by 1/255 and flattened row-major.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes IDX files holding the given raw bytes; the inverse of load_idx.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::uint32_t rows, std::uint32_t cols, std::span<const std::uint8_t> pixels,
               std::span<const std::uint8_t> labels);

/// Largest per-coordinate offset of a blob center from 0.5 by default.
inline constexpr double kDefaultCenterReach = 0.4;

/// Center of class c: 0.5 plus a deterministic unit direction, rescaled so
/// its largest coordinate offset is `reach` (< 0.5 keeps it inside the cube).
std::vector<double> blob_center(std::size_t cls, std::size_t dim, std::uint64_t seed,
                                double reach = kDefaultCenterReach);

/// Gaussian blobs around blob_center, clamped to [0,1]; samples are
/// grouped by class (class 0 first). Class c uses reach
/// reach_min + (reach - reach_min) * c / (C - 1); a negative reach_min
/// means every class uses `reach`.
Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double spread,
                    std::uint64_t seed, double reach = kDefaultCenterReach, double reach_min = -1.0);

/// Shuffled disjoint split into floor(N*f) and N - floor(N*f) rows.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed);

/// Index sets behind split(), in the same order.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                            std::uint64_t seed);

}  // namespace fedsmooth
