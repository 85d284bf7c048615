#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "drop/ops.hpp"
#include "drop/rng.hpp"

namespace drop {

// Named parameters and buffers, in construction order. Checkpoints and the
// optimizer both walk this list, so the order must be deterministic.
struct ParamRegistry {
    struct Param {
        std::string name;
        Var var;
    };
    struct Buffer {
        std::string name;
        Tensor* tensor;
    };
    std::vector<Param> params;
    std::vector<Buffer> buffers;

    void add(const std::string& name, const Var& v) { params.push_back({name, v}); }
    void add_buffer(const std::string& name, Tensor* t) { buffers.push_back({name, t}); }

    void zero_grads() {
        for (auto& p : params) p.var.zero_grad();
    }
};

inline Var he_init_conv(int co, int ci, int kh, int kw, Rng& g) {
    double std = std::sqrt(2.0 / (ci * kh * kw));
    return Var::leaf(randn({co, ci, kh, kw}, g, std));
}

inline Var he_init_linear(int fout, int fin, Rng& g) {
    double std = std::sqrt(2.0 / fin);
    return Var::leaf(randn({fout, fin}, g, std));
}

struct Conv2d {
    Var w, b;
    int stride = 1, pad = 0;
    PadMode pad_mode = PadMode::Zero;

    Conv2d() = default;
    Conv2d(int ci, int co, int k, int stride_, int pad_, bool bias, Rng& g,
           PadMode mode = PadMode::Zero)
        : stride(stride_), pad(pad_), pad_mode(mode) {
        w = he_init_conv(co, ci, k, k, g);
        if (bias) b = Var::leaf(Tensor({co}));  // zero-initialized
    }

    Var forward(const Var& x) const { return conv2d(x, w, b, stride, pad, pad_mode); }

    void register_into(ParamRegistry& reg, const std::string& prefix) {
        reg.add(prefix + ".w", w);
        if (b.defined()) reg.add(prefix + ".b", b);
    }
};

struct BatchNorm2d {
    Var gamma, beta;
    Tensor running_mean, running_var;
    double momentum = 0.1, eps = 1e-5;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int c) {
        gamma = Var::leaf(Tensor::full({c}, 1.0));
        beta = Var::leaf(Tensor({c}));
        running_mean = Tensor({c});
        running_var = Tensor::full({c}, 1.0);
    }

    Var forward(const Var& x, bool training) {
        return batchnorm(x, gamma, beta, running_mean, running_var, training, momentum, eps, 1);
    }

    void register_into(ParamRegistry& reg, const std::string& prefix) {
        reg.add(prefix + ".gamma", gamma);
        reg.add(prefix + ".beta", beta);
        reg.add_buffer(prefix + ".running_mean", &running_mean);
        reg.add_buffer(prefix + ".running_var", &running_var);
    }
};

using BatchNorm1d = BatchNorm2d;  // same math; input [B,F] has no spatial dims

struct Linear {
    Var w, b;

    Linear() = default;
    Linear(int fin, int fout, bool bias, Rng& g) {
        w = he_init_linear(fout, fin, g);
        if (bias) b = Var::leaf(Tensor({fout}));
    }

    Var forward(const Var& x) const { return linear(x, w, b); }

    void register_into(ParamRegistry& reg, const std::string& prefix) {
        reg.add(prefix + ".w", w);
        if (b.defined()) reg.add(prefix + ".b", b);
    }
};

// conv3x3 -> BN -> ReLU
struct ConvBnRelu {
    Conv2d conv;
    BatchNorm2d bn;

    ConvBnRelu() = default;
    ConvBnRelu(int ci, int co, int stride, Rng& g) : conv(ci, co, 3, stride, 1, false, g), bn(co) {}

    Var forward(const Var& x, bool training) { return relu(bn.forward(conv.forward(x), training)); }

    void register_into(ParamRegistry& reg, const std::string& prefix) {
        conv.register_into(reg, prefix + ".conv");
        bn.register_into(reg, prefix + ".bn");
    }
};

// Two 3x3 convs with identity skip; channel count is preserved.
struct ResidualBlock {
    Conv2d conv1, conv2;
    BatchNorm2d bn1, bn2;

    ResidualBlock() = default;
    ResidualBlock(int c, Rng& g)
        : conv1(c, c, 3, 1, 1, false, g), conv2(c, c, 3, 1, 1, false, g), bn1(c), bn2(c) {}

    Var forward(const Var& x, bool training) {
        Var h = relu(bn1.forward(conv1.forward(x), training));
        h = bn2.forward(conv2.forward(h), training);
        return relu(add(h, x));
    }

    void register_into(ParamRegistry& reg, const std::string& prefix) {
        conv1.register_into(reg, prefix + ".conv1");
        bn1.register_into(reg, prefix + ".bn1");
        conv2.register_into(reg, prefix + ".conv2");
        bn2.register_into(reg, prefix + ".bn2");
    }
};

}  // namespace drop
