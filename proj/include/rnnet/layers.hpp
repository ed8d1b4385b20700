#pragma once

#include <cmath>
#include <vector>

#include "rnnet/tensor.hpp"

namespace rnnet::nn {

// Spatial output size for conv/pool: floor((in + 2*pad - k) / stride) + 1.
size_t conv_out_dim(size_t in, size_t k, size_t pad, size_t stride);

// ---- conv2d: cross-correlation, weights (K, C, k, k), bias (K) ----

struct ConvCtx {
    Tensor input;
    size_t pad = 0, stride = 1;
};

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, size_t pad, size_t stride,
              ConvCtx* ctx = nullptr);
void conv2d_backward(const Tensor& gout, const ConvCtx& ctx, const Tensor& w, Tensor* gx,
                     Tensor& gw, Tensor& gb);

// ---- maxpool ----

struct PoolCtx {
    std::vector<size_t> argmax;  // flat input index per output element
    std::vector<size_t> in_shape;
};

Tensor maxpool(const Tensor& x, size_t k, size_t pad, size_t stride, PoolCtx* ctx = nullptr);
void maxpool_backward(const Tensor& gout, const PoolCtx& ctx, Tensor& gx);

// ---- batchnorm: per-channel on rank 4, per-feature on rank 2 ----

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

struct BatchNormState {
    Tensor gamma, beta;
    Tensor running_mean, running_var;
    explicit BatchNormState(size_t channels = 0);
};

struct BnCtx {
    Tensor xhat;
    std::vector<double> invstd;  // per channel
    size_t per_channel = 0;      // reduction count
};

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, BnCtx* ctx = nullptr);
void batchnorm_backward(const Tensor& gout, const BnCtx& ctx, const Tensor& gamma, Tensor& gx,
                        Tensor& ggamma, Tensor& gbeta);

// ---- relu ----

struct ReluCtx {
    std::vector<uint8_t> mask;
};

Tensor relu(const Tensor& x, ReluCtx* ctx = nullptr);
void relu_backward(const Tensor& gout, const ReluCtx& ctx, Tensor& gx);

// ---- fully connected: weights (out, in), bias (out), input (N, in) ----

struct FcCtx {
    Tensor input;
};

Tensor fc(const Tensor& x, const Tensor& w, const Tensor& b, FcCtx* ctx = nullptr);
void fc_backward(const Tensor& gout, const FcCtx& ctx, const Tensor& w, Tensor* gx, Tensor& gw,
                 Tensor& gb);

// ---- spike conversion: 1 where x > threshold (strict), else 0 ----

Tensor spike_convert(const Tensor& x, double threshold);

// ATan surrogate derivative used in place of the spike step function:
//   d spike / d x = (alpha / 2) * pi / (1 + ((pi / 2) * alpha * (x - threshold))^2)
double atan_surrogate_grad(double x, double threshold, double alpha);

struct FlattenCtx {
    std::vector<size_t> in_shape;
};

Tensor flatten(const Tensor& x, FlattenCtx* ctx = nullptr);  // (N, C, H, W) -> (N, C*H*W)

}  // namespace rnnet::nn
