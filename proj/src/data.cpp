#include "fedsmooth/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>

#include "fedsmooth/errors.hpp"
#include "fedsmooth/rng.hpp"

namespace fedsmooth {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::string hex(std::uint32_t v) {
    std::ostringstream ss;
    ss << "0x" << std::hex;
    ss.width(8);
    ss.fill('0');
    ss << v;
    return ss.str();
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::filesystem::path& path) {
    if (buf.size() < offset + 4) throw FormatError(path.string() + ": truncated IDX header");
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                           static_cast<char>(v)};
    out.write(bytes, 4);
}

}  // namespace

void Dataset::validate() const {
    if (labels.empty()) throw ArgumentError("dataset is empty");
    if (features.rows != labels.size()) throw ShapeError("dataset feature rows do not match label count");
    if (num_classes < 2) throw ArgumentError("dataset needs at least 2 classes");
    for (auto y : labels) {
        if (y >= num_classes) throw ArgumentError("label " + std::to_string(y) + " out of range");
    }
    for (double v : features.data) {
        if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("feature outside [0,1]");
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.num_classes = num_classes;
    out.features = Matrix(indices.size(), dim());
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = features.row(indices[i]);
        std::copy(src.begin(), src.end(), out.features.row(i).begin());
        out.labels.push_back(labels[indices[i]]);
    }
    return out;
}

Dataset Dataset::head(std::size_t count) const {
    std::vector<std::size_t> idx(std::min(count, size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return subset(idx);
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = read_all(images_path);
    const auto lab = read_all(labels_path);

    const std::uint32_t img_magic = read_be32(img, 0, images_path);
    if (img_magic != kImagesMagic) {
        throw FormatError(images_path.string() + ": expected magic " + hex(kImagesMagic) + ", got " + hex(img_magic));
    }
    const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
    if (lab_magic != kLabelsMagic) {
        throw FormatError(labels_path.string() + ": expected magic " + hex(kLabelsMagic) + ", got " + hex(lab_magic));
    }
    const std::size_t n = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    const std::size_t n_labels = read_be32(lab, 4, labels_path);
    if (n != n_labels) {
        throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
                          " labels");
    }
    const std::size_t d = rows * cols;
    if (img.size() < 16 + n * d) {
        throw FormatError(images_path.string() + ": truncated, expected " + std::to_string(16 + n * d) +
                          " bytes, got " + std::to_string(img.size()));
    }
    if (lab.size() < 8 + n) {
        throw FormatError(labels_path.string() + ": truncated, expected " + std::to_string(8 + n) + " bytes, got " +
                          std::to_string(lab.size()));
    }

    Dataset ds;
    ds.features = Matrix(n, d);
    for (std::size_t i = 0; i < n * d; ++i) ds.features.data[i] = static_cast<double>(img[16 + i]) / 255.0;
    ds.labels.resize(n);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = std::max<std::size_t>(2, max_label + 1);
    return ds;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::uint32_t rows, std::uint32_t cols, std::span<const std::uint8_t> pixels,
               std::span<const std::uint8_t> labels) {
    const std::size_t d = std::size_t{rows} * cols;
    if (d == 0 || pixels.size() != labels.size() * d) throw ShapeError("write_idx: pixel count mismatch");
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw Error("write_idx: cannot open output files");
    write_be32(img, kImagesMagic);
    write_be32(img, static_cast<std::uint32_t>(labels.size()));
    write_be32(img, rows);
    write_be32(img, cols);
    img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    write_be32(lab, kLabelsMagic);
    write_be32(lab, static_cast<std::uint32_t>(labels.size()));
    lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

std::vector<double> blob_center(std::size_t cls, std::size_t dim, std::uint64_t seed, double reach) {
    if (!(reach > 0.0 && reach < 0.5)) throw ArgumentError("blob_center: reach must lie in (0, 0.5)");
    Rng rng = substream(seed, StreamKind::data, 0, cls);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> u(dim);
    double norm2 = 0.0;
    for (double& v : u) {
        v = gauss(rng);
        norm2 += v * v;
    }
    const double norm = std::sqrt(norm2);
    double max_abs = 0.0;
    for (double& v : u) {
        v /= norm;
        max_abs = std::max(max_abs, std::abs(v));
    }
    for (double& v : u) v = 0.5 + reach * v / max_abs;
    return u;
}

Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double spread,
                    std::uint64_t seed, double reach, double reach_min) {
    if (num_classes < 2) throw ArgumentError("synth_blobs: need at least 2 classes");
    if (dim < 1) throw ArgumentError("synth_blobs: dim must be positive");
    if (spread < 0.0) throw ArgumentError("synth_blobs: spread must be nonnegative");
    if (reach_min < 0.0) reach_min = reach;
    if (reach_min > reach) throw ArgumentError("synth_blobs: reach_min exceeds reach");
    Dataset ds;
    ds.num_classes = num_classes;
    ds.features = Matrix(num_classes * per_class, dim);
    ds.labels.reserve(num_classes * per_class);
    Rng rng = substream(seed, StreamKind::data, 1);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t c = 0; c < num_classes; ++c) {
        const double t = static_cast<double>(c) / static_cast<double>(num_classes - 1);
        const auto center = blob_center(c, dim, seed, reach_min + (reach - reach_min) * t);
        for (std::size_t k = 0; k < per_class; ++k) {
            auto row = ds.features.row(c * per_class + k);
            for (std::size_t i = 0; i < dim; ++i) {
                const double noise = spread > 0.0 ? spread * gauss(rng) : 0.0;
                row[i] = std::clamp(center[i] + noise, 0.0, 1.0);
            }
            ds.labels.push_back(c);
        }
    }
    return ds;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                            std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ArgumentError("split fraction must lie in (0, 1)");
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
    if (n_train == 0 || n_train == n) throw ArgumentError("split would leave one side empty");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = substream(seed, StreamKind::split);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed) {
    auto [train, test] = split_indices(data.size(), train_fraction, seed);
    return {data.subset(train), data.subset(test)};
}

}  // namespace fedsmooth
