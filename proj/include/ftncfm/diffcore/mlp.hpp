#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ftncfm/diffcore/params.hpp"
#include "ftncfm/diffcore/tape.hpp"

namespace ftncfm::diff {

enum class LayerKind { Linear, Tanh, LeakyRelu, LayerNorm };

struct LayerSpec {
    LayerKind kind = LayerKind::Linear;
    Index width = 0; // Linear only
};

inline LayerSpec linear(Index width) { return {LayerKind::Linear, width}; }
inline LayerSpec tanh_layer() { return {LayerKind::Tanh, 0}; }
inline LayerSpec leaky_relu_layer() { return {LayerKind::LeakyRelu, 0}; }
inline LayerSpec layer_norm() { return {LayerKind::LayerNorm, 0}; }

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kLayerNormEps = 1e-5;

// Row-wise layer normalization with learnable gain and bias (1 x m each).
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
    const double inv_m = 1.0 / static_cast<double>(x.cols());
    Var mu = scale(sum_cols(x), inv_m);
    Var centered = sub(x, broadcast_cols(mu, x.cols()));
    Var var = scale(sum_cols(square(centered)), inv_m);
    Var inv_std = pow(add_scalar(var, kLayerNormEps), -0.5);
    Var normed = mul_col(centered, inv_std);
    return add_row(mul(normed, broadcast_rows(gain, x.rows())), bias);
}

// Mean over the batch of the per-row summed squared error.
inline Var mse(const Var& prediction, const Matrix& target) {
    require(prediction.rows() == target.rows() && prediction.cols() == target.cols(),
            "mse: prediction is " + std::to_string(prediction.rows()) + "x" + std::to_string(prediction.cols()) +
                " but target is " + std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
    Var diff = sub(prediction, prediction.tape().constant(target));
    return scale(sum(square(diff)), 1.0 / static_cast<double>(prediction.rows()));
}

// A sequential stack of linear / tanh / leaky-rectifier / layer-norm layers.
// Registers its weights in a shared ParamLayout so several stacks can live in
// one parameter vector.
class Mlp {
public:
    Mlp() = default;

    Mlp(std::string name, Index input_dim, std::vector<LayerSpec> layers, ParamLayout::Builder& builder)
        : name_(std::move(name)), input_dim_(input_dim) {
        require(input_dim > 0, "Mlp '" + name_ + "': input dimension must be positive");
        Index width = input_dim;
        for (std::size_t k = 0; k < layers.size(); ++k) {
            Layer layer;
            layer.spec = layers[k];
            layer.name = name_ + "." + std::to_string(k);
            switch (layer.spec.kind) {
            case LayerKind::Linear:
                layer.p0 = builder.add(layer.name + ".w", width, layer.spec.width);
                layer.p1 = builder.add(layer.name + ".b", 1, layer.spec.width);
                layer.fan_in = width;
                width = layer.spec.width;
                break;
            case LayerKind::LayerNorm:
                layer.p0 = builder.add(layer.name + ".gain", 1, width);
                layer.p1 = builder.add(layer.name + ".bias", 1, width);
                break;
            case LayerKind::Tanh:
            case LayerKind::LeakyRelu:
                break;
            }
            layers_.push_back(std::move(layer));
        }
        output_dim_ = width;
    }

    const std::string& name() const noexcept { return name_; }
    Index input_dim() const noexcept { return input_dim_; }
    Index output_dim() const noexcept { return output_dim_; }

    // `params` holds one tape leaf per entry of the layout this Mlp registered in.
    Var forward(std::span<const Var> params, const Var& x) const {
        if (x.cols() != input_dim_) {
            throw ContractViolation("Mlp '" + name_ + "': expected input width " + std::to_string(input_dim_) +
                                    ", got " + std::to_string(x.cols()));
        }
        Var h = x;
        for (const Layer& layer : layers_) {
            switch (layer.spec.kind) {
            case LayerKind::Linear:
                h = add_row(matmul(h, params[layer.p0]), params[layer.p1]);
                break;
            case LayerKind::Tanh:
                h = tanh(h);
                break;
            case LayerKind::LeakyRelu:
                h = leaky_relu(h, kLeakySlope);
                break;
            case LayerKind::LayerNorm:
                h = layer_norm(h, params[layer.p0], params[layer.p1]);
                break;
            }
            if (!h.value().allFinite()) throw NumericError("non-finite activation", layer.name);
        }
        return h;
    }

    // LeCun-normal weights, zero biases, unit layer-norm gains.
    template <class Rng>
    void initialize(ParamVector& params, Rng& rng, double weight_scale = 1.0) const {
        for (const Layer& layer : layers_) {
            if (layer.spec.kind == LayerKind::Linear) {
                std::normal_distribution<double> normal(0.0,
                                                        weight_scale / std::sqrt(static_cast<double>(layer.fan_in)));
                auto w = params.block(layer.p0);
                for (Index i = 0; i < w.rows(); ++i)
                    for (Index j = 0; j < w.cols(); ++j) w(i, j) = normal(rng);
                params.block(layer.p1).setZero();
            } else if (layer.spec.kind == LayerKind::LayerNorm) {
                params.block(layer.p0).setOnes();
                params.block(layer.p1).setZero();
            }
        }
    }

private:
    struct Layer {
        LayerSpec spec;
        std::string name;
        std::size_t p0 = 0;
        std::size_t p1 = 0;
        Index fan_in = 0;
    };

    std::string name_;
    Index input_dim_ = 0;
    Index output_dim_ = 0;
    std::vector<Layer> layers_;
};

} // namespace ftncfm::diff
