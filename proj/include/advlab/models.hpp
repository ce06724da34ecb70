#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace advlab {

enum class Activation { relu, softplus };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "softplus"; }

inline Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "softplus") return Activation::softplus;
    throw InvalidArgument("unknown activation '" + s + "' (expected relu or softplus)");
}

enum class Architecture { mlp, conv };

/// Declarative model description. For mlp, `sizes` lists d, hidden..., C. For conv, the
/// network is two stride-2 3x3 convolutions with `channels` filters followed by one dense
/// layer to `classes`; inputs are images of `height` x `width` x `in_channels` in HWC order.
struct ModelSpec {
    Architecture arch = Architecture::mlp;
    std::vector<std::size_t> sizes;
    std::size_t in_channels = 1, height = 28, width = 28;
    std::vector<std::size_t> channels{8, 16};
    std::size_t classes = 10;
    Activation activation = Activation::relu;
    std::uint64_t seed = 0;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct DenseLayer {
    std::size_t in, out;
};

struct ConvLayer {
    std::size_t in_ch, out_ch, height, width, kernel, stride, padding;
    std::size_t out_h() const { return (height + 2 * padding - kernel) / stride + 1; }
    std::size_t out_w() const { return (width + 2 * padding - kernel) / stride + 1; }
    std::size_t in_dim() const { return in_ch * height * width; }
    std::size_t out_dim() const { return out_ch * out_h() * out_w(); }
};

struct Layer {
    std::variant<DenseLayer, ConvLayer> geometry;
    bool activated;  // false only for the logit layer
};

/// Differentiable classifier: affine/conv layers with a hidden activation, producing logits.
/// Parameters are stored as weight, bias pairs in layer order.
class Model {
public:
    Model() = default;
    Model(ModelSpec spec, std::vector<Layer> layers, std::vector<Tensor> params)
        : spec_(std::move(spec)), layers_(std::move(layers)), params_(std::move(params)) {}

    const ModelSpec& spec() const noexcept { return spec_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Tensor>& params() noexcept { return params_; }
    const std::vector<Tensor>& params() const noexcept { return params_; }
    Activation activation() const noexcept { return spec_.activation; }

    std::size_t input_dim() const {
        return std::visit([](const auto& g) { return in_dim_of(g); }, layers_.front().geometry);
    }
    std::size_t class_count() const {
        return std::visit([](const auto& g) { return out_dim_of(g); }, layers_.back().geometry);
    }
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

    /// Model with the same parameters and a different hidden activation.
    Model with_activation(Activation a) const {
        Model m = *this;
        m.spec_.activation = a;
        return m;
    }

private:
    static std::size_t in_dim_of(const DenseLayer& d) { return d.in; }
    static std::size_t in_dim_of(const ConvLayer& c) { return c.in_dim(); }
    static std::size_t out_dim_of(const DenseLayer& d) { return d.out; }
    static std::size_t out_dim_of(const ConvLayer& c) { return c.out_dim(); }

    ModelSpec spec_;
    std::vector<Layer> layers_;
    std::vector<Tensor> params_;
};

inline Model swap_activation(const Model& model, Activation kind) { return model.with_activation(kind); }

namespace detail {

inline std::vector<Layer> build_layers(const ModelSpec& spec) {
    std::vector<Layer> layers;
    if (spec.arch == Architecture::mlp) {
        if (spec.sizes.size() < 2) throw InvalidArgument("model spec needs at least an input and an output size");
        for (std::size_t s : spec.sizes)
            if (s == 0) throw InvalidArgument("model layer sizes must be positive");
        for (std::size_t i = 0; i + 1 < spec.sizes.size(); ++i)
            layers.push_back({DenseLayer{spec.sizes[i], spec.sizes[i + 1]}, i + 2 < spec.sizes.size()});
        return layers;
    }
    if (spec.channels.empty()) throw InvalidArgument("conv model spec needs at least one channel count");
    std::size_t ch = spec.in_channels, h = spec.height, w = spec.width;
    for (std::size_t oc : spec.channels) {
        ConvLayer c{ch, oc, h, w, 3, 2, 1};
        if (oc == 0 || h == 0 || w == 0) throw InvalidArgument("conv layer geometry must be positive");
        layers.push_back({c, true});
        ch = oc;
        h = c.out_h();
        w = c.out_w();
    }
    layers.push_back({DenseLayer{ch * h * w, spec.classes}, false});
    return layers;
}

/// im2col gather map for a batch: row (m, oh, ow), column (kh, kw, c); -1 marks padding.
inline std::shared_ptr<const std::vector<std::ptrdiff_t>> im2col_index(const ConvLayer& c, std::size_t batch) {
    const std::size_t oh = c.out_h(), ow = c.out_w(), k = c.kernel;
    const std::size_t cols = k * k * c.in_ch;
    auto idx = std::make_shared<std::vector<std::ptrdiff_t>>(batch * oh * ow * cols);
    std::size_t pos = 0;
    for (std::size_t m = 0; m < batch; ++m)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x)
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx)
                        for (std::size_t ch = 0; ch < c.in_ch; ++ch) {
                            const auto iy = static_cast<std::ptrdiff_t>(y * c.stride + ky) -
                                            static_cast<std::ptrdiff_t>(c.padding);
                            const auto ix = static_cast<std::ptrdiff_t>(x * c.stride + kx) -
                                            static_cast<std::ptrdiff_t>(c.padding);
                            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(c.height) &&
                                                ix < static_cast<std::ptrdiff_t>(c.width);
                            (*idx)[pos++] =
                                inside ? static_cast<std::ptrdiff_t>(m * c.in_dim() +
                                                                     (static_cast<std::size_t>(iy) * c.width +
                                                                      static_cast<std::size_t>(ix)) * c.in_ch + ch)
                                       : -1;
                        }
    return idx;
}

inline Var activate(const Var& v, Activation a) { return a == Activation::relu ? relu(v) : softplus(v); }

}  // namespace detail

/// Deterministic initialization: every weight and bias ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Model init_model(const ModelSpec& spec) {
    auto layers = detail::build_layers(spec);
    Rng rng(derive_seed(spec.seed, {0x1417}));
    std::vector<Tensor> params;
    for (const auto& layer : layers) {
        std::size_t fan_in = 0, rows = 0, cols = 0;
        if (const auto* d = std::get_if<DenseLayer>(&layer.geometry)) {
            fan_in = rows = d->in;
            cols = d->out;
        } else {
            const auto& c = std::get<ConvLayer>(layer.geometry);
            fan_in = rows = c.kernel * c.kernel * c.in_ch;
            cols = c.out_ch;
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Tensor w({rows, cols});
        for (auto& v : w.data()) v = rng.uniform(-bound, bound);
        Tensor b({cols});
        for (auto& v : b.data()) v = rng.uniform(-bound, bound);
        params.push_back(std::move(w));
        params.push_back(std::move(b));
    }
    return Model(spec, std::move(layers), std::move(params));
}

/// Logits for a batch x [M, d] with explicit parameter Vars (tracked when training).
inline Var forward_logits(const Model& model, const Var& x, std::span<const Var> params) {
    if (x.value().rank() != 2 || x.shape()[1] != model.input_dim())
        throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match model input width " +
                         std::to_string(model.input_dim()));
    if (params.size() != model.params().size()) throw ShapeError("forward: wrong number of parameter tensors");
    ++counters().model_forwards;
    const std::size_t batch = x.shape()[0];
    Var h = x;
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
        const Layer& layer = model.layers()[l];
        const Var& w = params[2 * l];
        const Var& b = params[2 * l + 1];
        if (const auto* d = std::get_if<DenseLayer>(&layer.geometry)) {
            if (h.shape()[1] != d->in) throw ShapeError("forward: dense layer width mismatch");
            h = add_rowwise(matmul(h, w), b);
        } else {
            const auto& c = std::get<ConvLayer>(layer.geometry);
            const std::size_t positions = c.out_h() * c.out_w();
            Var cols = index_select(h, detail::im2col_index(c, batch),
                                    {batch * positions, c.kernel * c.kernel * c.in_ch});
            h = reshape(add_rowwise(matmul(cols, w), b), {batch, positions * c.out_ch});
        }
        if (layer.activated) h = detail::activate(h, model.activation());
    }
    return h;
}

inline std::vector<Var> constant_params(const Model& model) {
    std::vector<Var> p;
    p.reserve(model.params().size());
    for (const auto& t : model.params()) p.push_back(Var::constant(t));
    return p;
}

inline std::vector<Var> tracked_params(const Model& model) {
    std::vector<Var> p;
    p.reserve(model.params().size());
    for (const auto& t : model.params()) p.push_back(Var::leaf(t));
    return p;
}

/// Logits with the model's parameters held constant.
inline Var forward_logits(const Model& model, const Var& x) {
    const auto p = constant_params(model);
    return forward_logits(model, x, p);
}

inline Tensor forward_logits(const Model& model, const Tensor& x) {
    NoGradGuard ng;
    return forward_logits(model, Var::constant(x)).value();
}

}  // namespace advlab
