#include "rnnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rnnet {

void Tensor::check_finite(const char* what) const {
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value in ") + what);
        }
    }
}

}  // namespace rnnet

namespace rnnet::nn {

size_t conv_out_dim(size_t in, size_t k, size_t pad, size_t stride) {
    if (in + 2 * pad < k) {
        throw ShapeError("kernel larger than padded input");
    }
    return (in + 2 * pad - k) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, size_t pad, size_t stride,
              ConvCtx* ctx) {
    if (x.rank() != 4 || w.rank() != 4) {
        throw ShapeError("conv2d expects rank-4 input and weights");
    }
    const size_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const size_t K = w.shape[0], k = w.shape[2];
    if (w.shape[1] != C || w.shape[3] != k) {
        throw ShapeError("conv2d channel/kernel mismatch");
    }
    if (b.size() != K) {
        throw ShapeError("conv2d bias length mismatch");
    }
    const size_t OH = conv_out_dim(H, k, pad, stride);
    const size_t OW = conv_out_dim(W, k, pad, stride);

    Tensor y({N, K, OH, OW});
    const long ipad = static_cast<long>(pad);
    for (size_t n = 0; n < N; ++n) {
        for (size_t ko = 0; ko < K; ++ko) {
            for (size_t oy = 0; oy < OH; ++oy) {
                for (size_t ox = 0; ox < OW; ++ox) {
                    double acc = b.at(ko);
                    const long iy0 = static_cast<long>(oy * stride) - ipad;
                    const long ix0 = static_cast<long>(ox * stride) - ipad;
                    for (size_t c = 0; c < C; ++c) {
                        for (size_t ky = 0; ky < k; ++ky) {
                            const long iy = iy0 + static_cast<long>(ky);
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            const double* xrow = &x.data[((n * C + c) * H + iy) * W];
                            const double* wrow = &w.data[((ko * C + c) * k + ky) * k];
                            for (size_t kx = 0; kx < k; ++kx) {
                                const long ix = ix0 + static_cast<long>(kx);
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                acc += xrow[ix] * wrow[kx];
                            }
                        }
                    }
                    y.at4(n, ko, oy, ox) = acc;
                }
            }
        }
    }
    if (ctx) {
        ctx->input = x;
        ctx->pad = pad;
        ctx->stride = stride;
    }
    return y;
}

void conv2d_backward(const Tensor& gout, const ConvCtx& ctx, const Tensor& w, Tensor* gx,
                     Tensor& gw, Tensor& gb) {
    const Tensor& x = ctx.input;
    const size_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const size_t K = w.shape[0], k = w.shape[2];
    const size_t OH = gout.shape[2], OW = gout.shape[3];
    const long ipad = static_cast<long>(ctx.pad);
    const size_t stride = ctx.stride;

    if (!gw.same_shape(w)) gw = Tensor(w.shape);
    if (gb.size() != K) gb = Tensor({K});
    if (gx) *gx = Tensor(x.shape);

    for (size_t n = 0; n < N; ++n) {
        for (size_t ko = 0; ko < K; ++ko) {
            for (size_t oy = 0; oy < OH; ++oy) {
                for (size_t ox = 0; ox < OW; ++ox) {
                    const double g = gout.at4(n, ko, oy, ox);
                    if (g == 0.0) continue;
                    gb.at(ko) += g;
                    const long iy0 = static_cast<long>(oy * stride) - ipad;
                    const long ix0 = static_cast<long>(ox * stride) - ipad;
                    for (size_t c = 0; c < C; ++c) {
                        for (size_t ky = 0; ky < k; ++ky) {
                            const long iy = iy0 + static_cast<long>(ky);
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            const double* xrow = &x.data[((n * C + c) * H + iy) * W];
                            double* gwrow = &gw.data[((ko * C + c) * k + ky) * k];
                            const double* wrow = &w.data[((ko * C + c) * k + ky) * k];
                            double* gxrow = gx ? &gx->data[((n * C + c) * H + iy) * W] : nullptr;
                            for (size_t kx = 0; kx < k; ++kx) {
                                const long ix = ix0 + static_cast<long>(kx);
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                gwrow[kx] += g * xrow[ix];
                                if (gxrow) gxrow[ix] += g * wrow[kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

Tensor maxpool(const Tensor& x, size_t k, size_t pad, size_t stride, PoolCtx* ctx) {
    if (x.rank() != 4) {
        throw ShapeError("maxpool expects rank-4 input");
    }
    const size_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const size_t OH = conv_out_dim(H, k, pad, stride);
    const size_t OW = conv_out_dim(W, k, pad, stride);
    Tensor y({N, C, OH, OW});
    if (ctx) {
        ctx->argmax.assign(y.size(), 0);
        ctx->in_shape = x.shape;
    }
    const long ipad = static_cast<long>(pad);
    size_t out_idx = 0;
    for (size_t n = 0; n < N; ++n) {
        for (size_t c = 0; c < C; ++c) {
            for (size_t oy = 0; oy < OH; ++oy) {
                for (size_t ox = 0; ox < OW; ++ox, ++out_idx) {
                    double best = -std::numeric_limits<double>::infinity();
                    size_t best_idx = 0;
                    bool found = false;
                    const long iy0 = static_cast<long>(oy * stride) - ipad;
                    const long ix0 = static_cast<long>(ox * stride) - ipad;
                    for (size_t ky = 0; ky < k; ++ky) {
                        const long iy = iy0 + static_cast<long>(ky);
                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                        for (size_t kx = 0; kx < k; ++kx) {
                            const long ix = ix0 + static_cast<long>(kx);
                            if (ix < 0 || ix >= static_cast<long>(W)) continue;
                            size_t idx = ((n * C + c) * H + iy) * W + ix;
                            if (!found || x.data[idx] > best) {
                                best = x.data[idx];
                                best_idx = idx;
                                found = true;
                            }
                        }
                    }
                    // Fully padded windows read as 0 (cannot happen when
                    // pad < k, which conv_out_dim guarantees for pad <= k/2).
                    y.data[out_idx] = found ? best : 0.0;
                    if (ctx) ctx->argmax[out_idx] = found ? best_idx : size_t(-1);
                }
            }
        }
    }
    return y;
}

void maxpool_backward(const Tensor& gout, const PoolCtx& ctx, Tensor& gx) {
    gx = Tensor(ctx.in_shape);
    for (size_t i = 0; i < gout.size(); ++i) {
        if (ctx.argmax[i] != size_t(-1)) {
            gx.data[ctx.argmax[i]] += gout.data[i];
        }
    }
}

BatchNormState::BatchNormState(size_t channels)
    : gamma({channels}), beta({channels}), running_mean({channels}), running_var({channels}) {
    gamma.fill(1.0);
    running_var.fill(1.0);
}

namespace {

// Treats rank-4 input as (N, C, H*W) and rank-2 as (N, C, 1).
struct BnLayout {
    size_t n, c, hw;
};

BnLayout bn_layout(const Tensor& x) {
    if (x.rank() == 4) {
        return {x.shape[0], x.shape[1], x.shape[2] * x.shape[3]};
    }
    if (x.rank() == 2) {
        return {x.shape[0], x.shape[1], 1};
    }
    throw ShapeError("batchnorm expects rank-2 or rank-4 input");
}

}  // namespace

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, BnCtx* ctx) {
    BnLayout L = bn_layout(x);
    if (gamma.size() != L.c || beta.size() != L.c || running_mean.size() != L.c ||
        running_var.size() != L.c) {
        throw ShapeError("batchnorm parameter length mismatch");
    }
    Tensor y(x.shape);
    const size_t per_channel = L.n * L.hw;
    Tensor xhat(x.shape);
    std::vector<double> invstd(L.c);

    for (size_t c = 0; c < L.c; ++c) {
        double mean, var;
        if (training) {
            double sum = 0.0, sq = 0.0;
            for (size_t n = 0; n < L.n; ++n) {
                const double* p = &x.data[(n * L.c + c) * L.hw];
                for (size_t i = 0; i < L.hw; ++i) {
                    sum += p[i];
                    sq += p[i] * p[i];
                }
            }
            mean = sum / per_channel;
            var = sq / per_channel - mean * mean;
            if (var < 0.0) var = 0.0;  // rounding guard
            // Running stats use the unbiased variance.
            double unbiased = per_channel > 1 ? var * per_channel / (per_channel - 1) : var;
            running_mean.at(c) = (1.0 - kBnMomentum) * running_mean.at(c) + kBnMomentum * mean;
            running_var.at(c) = (1.0 - kBnMomentum) * running_var.at(c) + kBnMomentum * unbiased;
        } else {
            mean = running_mean.at(c);
            var = running_var.at(c);
        }
        const double istd = 1.0 / std::sqrt(var + kBnEps);
        invstd[c] = istd;
        for (size_t n = 0; n < L.n; ++n) {
            const double* p = &x.data[(n * L.c + c) * L.hw];
            double* ph = &xhat.data[(n * L.c + c) * L.hw];
            double* py = &y.data[(n * L.c + c) * L.hw];
            for (size_t i = 0; i < L.hw; ++i) {
                ph[i] = (p[i] - mean) * istd;
                py[i] = gamma.at(c) * ph[i] + beta.at(c);
            }
        }
    }
    if (ctx) {
        ctx->xhat = std::move(xhat);
        ctx->invstd = std::move(invstd);
        ctx->per_channel = per_channel;
    }
    return y;
}

void batchnorm_backward(const Tensor& gout, const BnCtx& ctx, const Tensor& gamma, Tensor& gx,
                        Tensor& ggamma, Tensor& gbeta) {
    BnLayout L = bn_layout(gout);
    gx = Tensor(gout.shape);
    if (ggamma.size() != L.c) ggamma = Tensor({L.c});
    if (gbeta.size() != L.c) gbeta = Tensor({L.c});
    const double m = static_cast<double>(ctx.per_channel);

    for (size_t c = 0; c < L.c; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (size_t n = 0; n < L.n; ++n) {
            const double* pg = &gout.data[(n * L.c + c) * L.hw];
            const double* ph = &ctx.xhat.data[(n * L.c + c) * L.hw];
            for (size_t i = 0; i < L.hw; ++i) {
                sum_g += pg[i];
                sum_gx += pg[i] * ph[i];
            }
        }
        ggamma.at(c) += sum_gx;
        gbeta.at(c) += sum_g;
        const double scale = gamma.at(c) * ctx.invstd[c];
        for (size_t n = 0; n < L.n; ++n) {
            const double* pg = &gout.data[(n * L.c + c) * L.hw];
            const double* ph = &ctx.xhat.data[(n * L.c + c) * L.hw];
            double* px = &gx.data[(n * L.c + c) * L.hw];
            for (size_t i = 0; i < L.hw; ++i) {
                px[i] = scale * (pg[i] - sum_g / m - ph[i] * sum_gx / m);
            }
        }
    }
}

Tensor relu(const Tensor& x, ReluCtx* ctx) {
    Tensor y(x.shape);
    if (ctx) ctx->mask.assign(x.size(), 0);
    for (size_t i = 0; i < x.size(); ++i) {
        if (x.data[i] > 0.0) {
            y.data[i] = x.data[i];
            if (ctx) ctx->mask[i] = 1;
        }
    }
    return y;
}

void relu_backward(const Tensor& gout, const ReluCtx& ctx, Tensor& gx) {
    gx = Tensor(gout.shape);
    for (size_t i = 0; i < gout.size(); ++i) {
        gx.data[i] = ctx.mask[i] ? gout.data[i] : 0.0;
    }
}

Tensor fc(const Tensor& x, const Tensor& w, const Tensor& b, FcCtx* ctx) {
    if (x.rank() != 2 || w.rank() != 2) {
        throw ShapeError("fc expects rank-2 input and weights");
    }
    const size_t N = x.shape[0], in = x.shape[1];
    const size_t out = w.shape[0];
    if (w.shape[1] != in || b.size() != out) {
        throw ShapeError("fc dimension mismatch: input " + std::to_string(in) + ", weights " +
                         std::to_string(w.shape[1]));
    }
    Tensor y({N, out});
    for (size_t n = 0; n < N; ++n) {
        const double* xr = &x.data[n * in];
        for (size_t o = 0; o < out; ++o) {
            const double* wr = &w.data[o * in];
            double acc = b.at(o);
            for (size_t i = 0; i < in; ++i) {
                acc += xr[i] * wr[i];
            }
            y.at2(n, o) = acc;
        }
    }
    if (ctx) ctx->input = x;
    return y;
}

void fc_backward(const Tensor& gout, const FcCtx& ctx, const Tensor& w, Tensor* gx, Tensor& gw,
                 Tensor& gb) {
    const Tensor& x = ctx.input;
    const size_t N = x.shape[0], in = x.shape[1], out = w.shape[0];
    if (!gw.same_shape(w)) gw = Tensor(w.shape);
    if (gb.size() != out) gb = Tensor({out});
    if (gx) *gx = Tensor(x.shape);
    for (size_t n = 0; n < N; ++n) {
        const double* xr = &x.data[n * in];
        double* gxr = gx ? &gx->data[n * in] : nullptr;
        for (size_t o = 0; o < out; ++o) {
            const double g = gout.at2(n, o);
            if (g == 0.0) continue;
            gb.at(o) += g;
            double* gwr = &gw.data[o * in];
            const double* wr = &w.data[o * in];
            for (size_t i = 0; i < in; ++i) {
                gwr[i] += g * xr[i];
                if (gxr) gxr[i] += g * wr[i];
            }
        }
    }
}

Tensor spike_convert(const Tensor& x, double threshold) {
    Tensor y(x.shape);
    for (size_t i = 0; i < x.size(); ++i) {
        y.data[i] = x.data[i] > threshold ? 1.0 : 0.0;
    }
    return y;
}

double atan_surrogate_grad(double x, double threshold, double alpha) {
    const double u = (M_PI / 2.0) * alpha * (x - threshold);
    return (alpha / 2.0) * M_PI / (1.0 + u * u);
}

Tensor flatten(const Tensor& x, FlattenCtx* ctx) {
    if (ctx) ctx->in_shape = x.shape;
    if (x.rank() == 2) {
        return x;
    }
    if (x.rank() != 4) {
        throw ShapeError("flatten expects rank-4 input");
    }
    return Tensor({x.shape[0], x.shape[1] * x.shape[2] * x.shape[3]}, x.data);
}

}  // namespace rnnet::nn
