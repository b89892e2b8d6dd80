#include "fedsmooth/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "fedsmooth/errors.hpp"
#include "fedsmooth/rng.hpp"

namespace fedsmooth {

namespace {

constexpr const char* kCheckpointMagic = "fedsmooth-params v1";

struct Trace {
    // hidden[l] is the post-ReLU output of affine layer l, for l < depth-1.
    std::vector<Matrix> hidden;
    Matrix logits;
};

Matrix affine(const Matrix& in, const LayerView& layer) {
    Matrix out(in.rows, layer.out);
    for (std::size_t r = 0; r < in.rows; ++r) {
        const auto x = in.row(r);
        auto y = out.row(r);
        for (std::size_t o = 0; o < layer.out; ++o) {
            y[o] = dot(x, layer.weights.subspan(o * layer.in, layer.in)) + layer.bias[o];
        }
    }
    return out;
}

void require_finite(const Matrix& m, std::size_t layer) {
    for (double v : m.data) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite output at layer " + std::to_string(layer));
        }
    }
}

Trace run_forward(const ParamVector& params, const Matrix& inputs) {
    const auto& spec = params.spec();
    if (inputs.cols != spec.input_dim()) {
        throw ShapeError("input has " + std::to_string(inputs.cols) + " columns, network expects " +
                         std::to_string(spec.input_dim()));
    }
    Trace t;
    const std::size_t depth = spec.depth();
    t.hidden.reserve(depth - 1);
    const Matrix* current = &inputs;
    for (std::size_t l = 0; l < depth; ++l) {
        Matrix z = affine(*current, params.layer(l));
        require_finite(z, l);
        if (l + 1 == depth) {
            t.logits = std::move(z);
        } else {
            for (double& v : z.data) v = std::max(v, 0.0);
            t.hidden.push_back(std::move(z));
            current = &t.hidden.back();
        }
    }
    return t;
}

void softmax_rows(Matrix& m) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double& v : row) {
            v = std::exp(v - mx);
            s += v;
        }
        for (double& v : row) v /= s;
    }
}

// Propagates delta (rows x out of layer l) back to the input of layer l.
// When l > 0 the ReLU mask of the previous layer's output is applied.
Matrix backprop_delta(const ParamVector& params, const Trace& t, std::size_t l, const Matrix& delta) {
    const LayerView layer = params.layer(l);
    Matrix prev(delta.rows, layer.in);
    for (std::size_t r = 0; r < delta.rows; ++r) {
        auto out = prev.row(r);
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double d = delta(r, o);
            if (d != 0.0) axpy(d, layer.weights.subspan(o * layer.in, layer.in), out);
        }
        if (l > 0) {
            const auto act = t.hidden[l - 1].row(r);
            for (std::size_t i = 0; i < layer.in; ++i) {
                if (act[i] <= 0.0) out[i] = 0.0;
            }
        }
    }
    return prev;
}

}  // namespace

NetworkSpec NetworkSpec::mlp(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes) {
    NetworkSpec s;
    s.layer_sizes.push_back(input_dim);
    s.layer_sizes.insert(s.layer_sizes.end(), hidden.begin(), hidden.end());
    s.layer_sizes.push_back(num_classes);
    s.validate();
    return s;
}

std::size_t NetworkSpec::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
    }
    return n;
}

void NetworkSpec::validate() const {
    if (layer_sizes.size() < 2) throw ArgumentError("network needs at least 2 layer sizes");
    for (auto s : layer_sizes) {
        if (s == 0) throw ArgumentError("layer sizes must be positive");
    }
    if (num_classes() < 2) throw ArgumentError("network needs at least 2 classes");
}

ParamVector::ParamVector(NetworkSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    values_.assign(spec_.param_count(), 0.0);
}

ParamVector::ParamVector(NetworkSpec spec, std::vector<double> values)
    : spec_(std::move(spec)), values_(std::move(values)) {
    spec_.validate();
    if (values_.size() != spec_.param_count()) {
        throw ShapeError("parameter vector has " + std::to_string(values_.size()) + " entries, spec needs " +
                         std::to_string(spec_.param_count()));
    }
}

std::size_t ParamVector::layer_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t j = 0; j < l; ++j) {
        off += spec_.layer_sizes[j] * spec_.layer_sizes[j + 1] + spec_.layer_sizes[j + 1];
    }
    return off;
}

LayerView ParamVector::layer(std::size_t l) const {
    LayerView v;
    v.in = spec_.layer_sizes[l];
    v.out = spec_.layer_sizes[l + 1];
    const std::size_t off = layer_offset(l);
    v.weights = std::span<const double>(values_).subspan(off, v.in * v.out);
    v.bias = std::span<const double>(values_).subspan(off + v.in * v.out, v.out);
    return v;
}

void Batch::validate(const NetworkSpec& spec) const {
    if (inputs.rows == 0) throw ArgumentError("batch is empty");
    if (inputs.rows != labels.size()) {
        throw ShapeError("batch has " + std::to_string(inputs.rows) + " rows but " + std::to_string(labels.size()) +
                         " labels");
    }
    if (inputs.cols != spec.input_dim()) throw ShapeError("batch feature dimension mismatch");
    for (auto y : labels) {
        if (y >= spec.num_classes()) throw ArgumentError("label " + std::to_string(y) + " out of range");
    }
}

Matrix forward(const ParamVector& params, const Matrix& inputs) {
    Trace t = run_forward(params, inputs);
    softmax_rows(t.logits);
    return std::move(t.logits);
}

std::vector<double> forward(const ParamVector& params, std::span<const double> input) {
    return forward(params, Matrix::from_row(input)).data;
}

LossAndGrad loss_and_param_grad(const ParamVector& params, const Batch& batch) {
    const auto& spec = params.spec();
    batch.validate(spec);
    Trace t = run_forward(params, batch.inputs);
    const std::size_t b = batch.inputs.rows;
    const std::size_t depth = spec.depth();

    // delta = (softmax - onehot) / b, loss = mean(logsumexp(z) - z_y)
    Matrix delta = t.logits;
    double total = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        auto z = delta.row(r);
        const double mx = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double v : z) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        total += lse - z[batch.labels[r]];
        for (double& v : z) v = std::exp(v - lse) / static_cast<double>(b);
        z[batch.labels[r]] -= 1.0 / static_cast<double>(b);
    }
    LossAndGrad out{total / static_cast<double>(b), ParamVector(spec)};
    if (!std::isfinite(out.loss)) throw NumericError("non-finite loss at layer " + std::to_string(depth - 1));

    auto g = out.grad.values();
    for (std::size_t l = depth; l-- > 0;) {
        const LayerView layer = params.layer(l);
        const Matrix& prev = (l == 0) ? batch.inputs : t.hidden[l - 1];
        const std::size_t off = params.layer_offset(l);
        auto gw = g.subspan(off, layer.in * layer.out);
        auto gb = g.subspan(off + layer.in * layer.out, layer.out);
        for (std::size_t r = 0; r < b; ++r) {
            const auto a = prev.row(r);
            for (std::size_t o = 0; o < layer.out; ++o) {
                const double d = delta(r, o);
                if (d == 0.0) continue;
                axpy(d, a, gw.subspan(o * layer.in, layer.in));
                gb[o] += d;
            }
        }
        if (l > 0) delta = backprop_delta(params, t, l, delta);
    }
    return out;
}

double loss(const ParamVector& params, const Batch& batch) {
    batch.validate(params.spec());
    Trace t = run_forward(params, batch.inputs);
    double total = 0.0;
    for (std::size_t r = 0; r < t.logits.rows; ++r) {
        const auto z = t.logits.row(r);
        const double mx = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double v : z) s += std::exp(v - mx);
        total += mx + std::log(s) - z[batch.labels[r]];
    }
    return total / static_cast<double>(t.logits.rows);
}

ClassProbGrad class_prob_and_input_grad(const ParamVector& params, const Matrix& inputs, std::size_t cls) {
    const auto& spec = params.spec();
    if (cls >= spec.num_classes()) throw ShapeError("class index out of range");
    Trace t = run_forward(params, inputs);
    Matrix probs = t.logits;
    softmax_rows(probs);

    ClassProbGrad out;
    out.prob.resize(inputs.rows);
    // d p_c / d z_k = p_c (1[k == c] - p_k)
    Matrix delta(inputs.rows, spec.num_classes());
    for (std::size_t r = 0; r < inputs.rows; ++r) {
        const double pc = probs(r, cls);
        out.prob[r] = pc;
        for (std::size_t k = 0; k < spec.num_classes(); ++k) {
            delta(r, k) = pc * ((k == cls ? 1.0 : 0.0) - probs(r, k));
        }
    }
    for (std::size_t l = spec.depth(); l-- > 0;) delta = backprop_delta(params, t, l, delta);
    out.grad = std::move(delta);
    return out;
}

std::vector<double> input_grad(const ParamVector& params, std::span<const double> input, std::size_t cls) {
    return class_prob_and_input_grad(params, Matrix::from_row(input), cls).grad.data;
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double lr) {
    if (params.size() != grad.size()) throw ShapeError("sgd_step: gradient length mismatch");
    ParamVector next = params;
    auto v = next.values();
    const auto g = grad.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    return next;
}

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
    ParamVector p(spec);
    Rng rng = substream(seed, StreamKind::init);
    auto v = p.values();
    for (std::size_t l = 0; l < spec.depth(); ++l) {
        const std::size_t in = spec.layer_sizes[l];
        const std::size_t out = spec.layer_sizes[l + 1];
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
        auto w = v.subspan(p.layer_offset(l), in * out);
        for (double& x : w) x = dist(rng);
    }
    return p;
}

void write_params(std::ostream& out, const ParamVector& params) {
    out << kCheckpointMagic << '\n';
    const auto& sizes = params.spec().layer_sizes;
    for (std::size_t i = 0; i < sizes.size(); ++i) out << (i ? "," : "") << sizes[i];
    out << '\n';
    for (double v : params.values()) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        char bytes[8];
        for (int k = 0; k < 8; ++k) bytes[k] = static_cast<char>((bits >> (8 * k)) & 0xFF);
        out.write(bytes, 8);
    }
    if (!out) throw Error("failed writing parameter checkpoint");
}

ParamVector read_params(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointMagic) {
        throw FormatError("checkpoint header: expected '" + std::string(kCheckpointMagic) + "', got '" + line + "'");
    }
    if (!std::getline(in, line)) throw FormatError("checkpoint truncated before layer sizes");
    NetworkSpec spec;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t pos = 0;
            const unsigned long long v = std::stoull(tok, &pos);
            if (pos != tok.size()) throw std::invalid_argument(tok);
            spec.layer_sizes.push_back(static_cast<std::size_t>(v));
        } catch (const std::logic_error&) {
            throw FormatError("checkpoint layer sizes: bad entry '" + tok + "'");
        }
    }
    try {
        spec.validate();
    } catch (const ArgumentError& e) {
        throw FormatError(std::string("checkpoint spec invalid: ") + e.what());
    }
    std::vector<double> values(spec.param_count());
    for (double& v : values) {
        unsigned char bytes[8];
        if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
            throw FormatError("checkpoint truncated: expected " + std::to_string(spec.param_count()) + " parameters");
        }
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
        v = std::bit_cast<double>(bits);
        if (!std::isfinite(v)) throw FormatError("checkpoint contains a non-finite parameter");
    }
    return ParamVector(std::move(spec), std::move(values));
}

void save_params(const std::filesystem::path& path, const ParamVector& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_params(out, params);
}

ParamVector load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return read_params(in);
}

}  // namespace fedsmooth
