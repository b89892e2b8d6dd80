#pragma once

// Dense ReLU feed-forward classifier with softmax output, exact backward
// passes for both parameter and input gradients.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "fedsmooth/matrix.hpp"

namespace fedsmooth {

enum class Activation { relu };

struct NetworkSpec {
    /// input dim, hidden widths..., class count
    std::vector<std::size_t> layer_sizes;
    Activation activation = Activation::relu;

    static NetworkSpec mlp(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes);

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t num_classes() const { return layer_sizes.back(); }
    /// Number of affine layers.
    std::size_t depth() const { return layer_sizes.size() - 1; }
    std::size_t param_count() const;

    /// Throws ArgumentError unless there are >= 2 sizes, all positive, C >= 2.
    void validate() const;

    bool operator==(const NetworkSpec&) const = default;
};

/// Read-only view of one affine layer inside a ParamVector.
struct LayerView {
    std::size_t in = 0;
    std::size_t out = 0;
    std::span<const double> weights;  // out x in, row-major
    std::span<const double> bias;     // out
};

/// Flat parameter vector laid out layer-major, weights then biases,
/// weights row-major (out x in).
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(NetworkSpec spec);
    ParamVector(NetworkSpec spec, std::vector<double> values);

    const NetworkSpec& spec() const { return spec_; }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    std::size_t size() const { return values_.size(); }

    LayerView layer(std::size_t l) const;
    /// Offset of layer l's weight block within values().
    std::size_t layer_offset(std::size_t l) const;

    bool operator==(const ParamVector&) const = default;

private:
    NetworkSpec spec_;
    std::vector<double> values_;
};

struct Batch {
    Matrix inputs;  // b x d, entries in [0,1]
    std::vector<std::size_t> labels;

    void validate(const NetworkSpec& spec) const;
};

/// Softmax probabilities, one row per input row.
Matrix forward(const ParamVector& params, const Matrix& inputs);
std::vector<double> forward(const ParamVector& params, std::span<const double> input);

struct LossAndGrad {
    double loss = 0.0;
    ParamVector grad;
};

/// Mean cross-entropy over the batch and its gradient w.r.t. parameters.
/// Throws NumericError naming the first layer whose output is non-finite.
LossAndGrad loss_and_param_grad(const ParamVector& params, const Batch& batch);

/// Mean cross-entropy only.
double loss(const ParamVector& params, const Batch& batch);

/// Gradient of [F(x)]_cls with respect to x.
std::vector<double> input_grad(const ParamVector& params, std::span<const double> input, std::size_t cls);

struct ClassProbGrad {
    std::vector<double> prob;  // [F(x_r)]_cls for each row r
    Matrix grad;               // row r: d[F(x_r)]_cls / dx_r
};

/// Batched [F(x)]_cls together with its input gradient; one forward and one
/// backward pass over all rows.
ClassProbGrad class_prob_and_input_grad(const ParamVector& params, const Matrix& inputs, std::size_t cls);

/// params - lr * grad
ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double lr);

/// Weights ~ N(0, 1/fan_in), biases zero. Deterministic in seed.
ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Checkpoint: "fedsmooth-params v1\n", comma-separated layer sizes and
/// "\n", then every parameter as a little-endian IEEE-754 double.
void write_params(std::ostream& out, const ParamVector& params);
ParamVector read_params(std::istream& in);
void save_params(const std::filesystem::path& path, const ParamVector& params);
ParamVector load_params(const std::filesystem::path& path);

}  // namespace fedsmooth
