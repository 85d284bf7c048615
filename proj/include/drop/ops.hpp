#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "drop/autograd.hpp"

namespace drop {

enum class PadMode {
    Zero,        // zero padding on all sides
    WidthClamp,  // clamp out-of-range columns to the border, zero-pad rows
};

// 2-D convolution. x: [B,Ci,H,W], w: [Co,Ci,kh,kw], optional bias [Co].
// Output size uses floor semantics: OH = (H + 2*pad - kh)/stride + 1.
inline Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad,
                  PadMode mode = PadMode::Zero) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    check_numeric(xv.ndim() == 4 && wv.ndim() == 4, "conv2d: rank mismatch");
    const int B = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    check_numeric(wv.dim(1) == Ci, "conv2d: channel mismatch");
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    check_numeric(OH > 0 && OW > 0, "conv2d: empty output");

    Tensor out({B, Co, OH, OW});
    const bool has_bias = bias.defined();
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Co; ++co) {
            double* op = out.data() + ((int64_t)(b * Co + co)) * OH * OW;
            if (has_bias) {
                double bv = bias.value()[co];
                for (int i = 0; i < OH * OW; ++i) op[i] = bv;
            }
            for (int ci = 0; ci < Ci; ++ci) {
                const double* xp = xv.data() + ((int64_t)(b * Ci + ci)) * H * W;
                for (int u = 0; u < kh; ++u) {
                    for (int v = 0; v < kw; ++v) {
                        const double wk = wv.at(co, ci, u, v);
                        if (wk == 0.0) continue;
                        for (int oh = 0; oh < OH; ++oh) {
                            int ih = oh * stride + u - pad;
                            if (ih < 0 || ih >= H) continue;  // rows always zero-padded
                            const double* xrow = xp + (int64_t)ih * W;
                            double* orow = op + (int64_t)oh * OW;
                            for (int ow = 0; ow < OW; ++ow) {
                                int iw = ow * stride + v - pad;
                                if (mode == PadMode::WidthClamp)
                                    iw = std::clamp(iw, 0, W - 1);
                                else if (iw < 0 || iw >= W)
                                    continue;
                                orow[ow] += wk * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
    }

    auto xn = x.node();
    auto wn = w.node();
    auto bn = has_bias ? bias.node() : nullptr;
    std::vector<Var> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return make_op(std::move(out), inputs, [=](Node& n) {
        const Tensor& g = n.grad;
        if (bn && bn->requires_grad) {
            bn->ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int co = 0; co < Co; ++co) {
                    const double* gp = g.data() + ((int64_t)(b * Co + co)) * OH * OW;
                    double s = 0.0;
                    for (int i = 0; i < OH * OW; ++i) s += gp[i];
                    bn->grad[co] += s;
                }
        }
        const bool need_x = xn->requires_grad;
        const bool need_w = wn->requires_grad;
        if (need_x) xn->ensure_grad();
        if (need_w) wn->ensure_grad();
        if (!need_x && !need_w) return;
        for (int b = 0; b < B; ++b) {
            for (int co = 0; co < Co; ++co) {
                const double* gp = g.data() + ((int64_t)(b * Co + co)) * OH * OW;
                for (int ci = 0; ci < Ci; ++ci) {
                    const double* xp = xn->value.data() + ((int64_t)(b * Ci + ci)) * H * W;
                    double* dxp = need_x ? xn->grad.data() + ((int64_t)(b * Ci + ci)) * H * W
                                         : nullptr;
                    for (int u = 0; u < kh; ++u) {
                        for (int v = 0; v < kw; ++v) {
                            const double wk = wn->value.at(co, ci, u, v);
                            double dw = 0.0;
                            for (int oh = 0; oh < OH; ++oh) {
                                int ih = oh * stride + u - pad;
                                if (ih < 0 || ih >= H) continue;
                                const double* gr = gp + (int64_t)oh * OW;
                                const double* xrow = xp + (int64_t)ih * W;
                                double* dxrow = need_x ? dxp + (int64_t)ih * W : nullptr;
                                for (int ow = 0; ow < OW; ++ow) {
                                    int iw = ow * stride + v - pad;
                                    if (mode == PadMode::WidthClamp)
                                        iw = std::clamp(iw, 0, W - 1);
                                    else if (iw < 0 || iw >= W)
                                        continue;
                                    dw += gr[ow] * xrow[iw];
                                    if (need_x) dxrow[iw] += gr[ow] * wk;
                                }
                            }
                            if (need_w) wn->grad.at(co, ci, u, v) += dw;
                        }
                    }
                }
            }
        }
    });
}

// ---- batch normalization ----------------------------------------------------

struct BnStats {
    Tensor mean;     // [C]
    Tensor invstd;   // [C]
};

// Shared core for BN over x[B,C,...spatial] reducing over batch+spatial.
// `reduce` = number of reduced elements per channel.
inline Var batchnorm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                     Tensor& running_var, bool training, double momentum, double eps,
                     int channel_dim /*=1*/) {
    const Tensor& xv = x.value();
    const int C = xv.dim(channel_dim);
    check_numeric(channel_dim == 1, "batchnorm: channel dim must be 1");
    const int B = xv.dim(0);
    int64_t spatial = 1;
    for (int i = 2; i < xv.ndim(); ++i) spatial *= xv.dim(i);
    const int64_t reduce = (int64_t)B * spatial;

    Tensor mean({C}), invstd({C});
    if (training) {
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* p = xv.data() + ((int64_t)(b * C + c)) * spatial;
                for (int64_t i = 0; i < spatial; ++i) s += p[i];
            }
            mean[c] = s / (double)reduce;
        }
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* p = xv.data() + ((int64_t)(b * C + c)) * spatial;
                for (int64_t i = 0; i < spatial; ++i) {
                    double d = p[i] - mean[c];
                    s += d * d;
                }
            }
            double var = s / (double)reduce;  // biased, used for normalization
            invstd[c] = 1.0 / std::sqrt(var + eps);
            double unbiased = reduce > 1 ? s / (double)(reduce - 1) : var;
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = running_mean[c];
            invstd[c] = 1.0 / std::sqrt(running_var[c] + eps);
        }
    }

    Tensor out(xv.shape());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* p = xv.data() + ((int64_t)(b * C + c)) * spatial;
            double* o = out.data() + ((int64_t)(b * C + c)) * spatial;
            const double m = mean[c], is = invstd[c];
            const double g = gamma.value()[c], bt = beta.value()[c];
            for (int64_t i = 0; i < spatial; ++i) o[i] = (p[i] - m) * is * g + bt;
        }

    auto xn = x.node();
    auto gn = gamma.node();
    auto btn = beta.node();
    return make_op(std::move(out), {x, gamma, beta},
                   [=, mean = std::move(mean), invstd = std::move(invstd)](Node& n) {
        const Tensor& gr = n.grad;
        gn->ensure_grad();
        btn->ensure_grad();
        const bool need_x = xn->requires_grad;
        if (need_x) xn->ensure_grad();
        for (int c = 0; c < C; ++c) {
            const double m = mean[c], is = invstd[c], gm = gn->value[c];
            // per-channel reductions: sum(dy), sum(dy * xhat)
            double sg = 0.0, sgx = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* p = xn->value.data() + ((int64_t)(b * C + c)) * spatial;
                const double* gp = gr.data() + ((int64_t)(b * C + c)) * spatial;
                for (int64_t i = 0; i < spatial; ++i) {
                    sg += gp[i];
                    sgx += gp[i] * (p[i] - m) * is;
                }
            }
            gn->grad[c] += sgx;
            btn->grad[c] += sg;
            if (!need_x) continue;
            if (training) {
                const double inv_n = 1.0 / (double)reduce;
                for (int b = 0; b < B; ++b) {
                    const double* p = xn->value.data() + ((int64_t)(b * C + c)) * spatial;
                    const double* gp = gr.data() + ((int64_t)(b * C + c)) * spatial;
                    double* dx = xn->grad.data() + ((int64_t)(b * C + c)) * spatial;
                    for (int64_t i = 0; i < spatial; ++i) {
                        double xhat = (p[i] - m) * is;
                        dx[i] += gm * is * (gp[i] - inv_n * sg - xhat * inv_n * sgx);
                    }
                }
            } else {
                for (int b = 0; b < B; ++b) {
                    const double* gp = gr.data() + ((int64_t)(b * C + c)) * spatial;
                    double* dx = xn->grad.data() + ((int64_t)(b * C + c)) * spatial;
                    for (int64_t i = 0; i < spatial; ++i) dx[i] += gm * is * gp[i];
                }
            }
        }
    });
}

// ---- linear -----------------------------------------------------------------

// x: [B,Fin], w: [Fout,Fin], optional bias [Fout].
inline Var linear(const Var& x, const Var& w, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    check_numeric(xv.ndim() == 2 && wv.ndim() == 2, "linear: rank mismatch");
    const int B = xv.dim(0), Fin = xv.dim(1), Fout = wv.dim(0);
    check_numeric(wv.dim(1) == Fin, "linear: dim mismatch");
    const bool has_bias = bias.defined();

    Tensor out({B, Fout});
    for (int b = 0; b < B; ++b) {
        const double* xp = xv.data() + (int64_t)b * Fin;
        for (int f = 0; f < Fout; ++f) {
            const double* wp = wv.data() + (int64_t)f * Fin;
            double s = has_bias ? bias.value()[f] : 0.0;
            for (int i = 0; i < Fin; ++i) s += xp[i] * wp[i];
            out.at(b, f) = s;
        }
    }

    auto xn = x.node();
    auto wn = w.node();
    auto bn = has_bias ? bias.node() : nullptr;
    std::vector<Var> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return make_op(std::move(out), inputs, [=](Node& n) {
        const Tensor& g = n.grad;
        if (bn && bn->requires_grad) {
            bn->ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int f = 0; f < Fout; ++f) bn->grad[f] += g.at(b, f);
        }
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int f = 0; f < Fout; ++f) {
                    const double gv = g.at(b, f);
                    const double* wp = wn->value.data() + (int64_t)f * Fin;
                    double* dx = xn->grad.data() + (int64_t)b * Fin;
                    for (int i = 0; i < Fin; ++i) dx[i] += gv * wp[i];
                }
        }
        if (wn->requires_grad) {
            wn->ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int f = 0; f < Fout; ++f) {
                    const double gv = g.at(b, f);
                    const double* xp = xn->value.data() + (int64_t)b * Fin;
                    double* dw = wn->grad.data() + (int64_t)f * Fin;
                    for (int i = 0; i < Fin; ++i) dw[i] += gv * xp[i];
                }
        }
    });
}

// ---- resampling -------------------------------------------------------------

namespace detail {
struct LerpIdx {
    int i0, i1;
    double f;  // weight of i1
};
inline LerpIdx lerp_index(int o, int out_size, int in_size) {
    // corner-aligned sampling; degenerate axes map to index 0
    if (out_size <= 1 || in_size <= 1) return {0, 0, 0.0};
    double src = (double)o * (double)(in_size - 1) / (double)(out_size - 1);
    int i0 = (int)std::floor(src);
    if (i0 >= in_size - 1) return {in_size - 1, in_size - 1, 0.0};
    return {i0, i0 + 1, src - (double)i0};
}
}  // namespace detail

// Bilinear interpolation to (OH, OW) with corner-aligned sampling.
inline Var upsample_bilinear(const Var& x, int OH, int OW) {
    const Tensor& xv = x.value();
    check_numeric(xv.ndim() == 4, "upsample: rank mismatch");
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor out({B, C, OH, OW});
    std::vector<detail::LerpIdx> hi(OH), wi(OW);
    for (int o = 0; o < OH; ++o) hi[o] = detail::lerp_index(o, OH, H);
    for (int o = 0; o < OW; ++o) wi[o] = detail::lerp_index(o, OW, W);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* p = xv.data() + ((int64_t)(b * C + c)) * H * W;
            double* op = out.data() + ((int64_t)(b * C + c)) * OH * OW;
            for (int oh = 0; oh < OH; ++oh) {
                const auto& h = hi[oh];
                for (int ow = 0; ow < OW; ++ow) {
                    const auto& w = wi[ow];
                    double v00 = p[h.i0 * W + w.i0], v01 = p[h.i0 * W + w.i1];
                    double v10 = p[h.i1 * W + w.i0], v11 = p[h.i1 * W + w.i1];
                    op[oh * OW + ow] = (1 - h.f) * ((1 - w.f) * v00 + w.f * v01) +
                                       h.f * ((1 - w.f) * v10 + w.f * v11);
                }
            }
        }
    auto xn = x.node();
    return make_op(std::move(out), {x}, [=, hi = std::move(hi), wi = std::move(wi)](Node& n) {
        xn->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                double* dx = xn->grad.data() + ((int64_t)(b * C + c)) * H * W;
                const double* gp = n.grad.data() + ((int64_t)(b * C + c)) * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    const auto& h = hi[oh];
                    for (int ow = 0; ow < OW; ++ow) {
                        const auto& w = wi[ow];
                        double g = gp[oh * OW + ow];
                        dx[h.i0 * W + w.i0] += (1 - h.f) * (1 - w.f) * g;
                        dx[h.i0 * W + w.i1] += (1 - h.f) * w.f * g;
                        dx[h.i1 * W + w.i0] += h.f * (1 - w.f) * g;
                        dx[h.i1 * W + w.i1] += h.f * w.f * g;
                    }
                }
            }
    });
}

// Area-average pooling to (OH, OW); input dims must be integer multiples.
inline Var avgpool_area(const Var& x, int OH, int OW) {
    const Tensor& xv = x.value();
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    check_numeric(H % OH == 0 && W % OW == 0, "avgpool_area: non-integer factor");
    const int fh = H / OH, fw = W / OW;
    const double inv = 1.0 / (fh * fw);
    Tensor out({B, C, OH, OW});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* p = xv.data() + ((int64_t)(b * C + c)) * H * W;
            double* op = out.data() + ((int64_t)(b * C + c)) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double s = 0.0;
                    for (int u = 0; u < fh; ++u)
                        for (int v = 0; v < fw; ++v) s += p[(oh * fh + u) * W + ow * fw + v];
                    op[oh * OW + ow] = s * inv;
                }
        }
    auto xn = x.node();
    return make_op(std::move(out), {x}, [=](Node& n) {
        xn->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                double* dx = xn->grad.data() + ((int64_t)(b * C + c)) * H * W;
                const double* gp = n.grad.data() + ((int64_t)(b * C + c)) * OH * OW;
                for (int oh = 0; oh < OH; ++oh)
                    for (int ow = 0; ow < OW; ++ow) {
                        double g = gp[oh * OW + ow] * inv;
                        for (int u = 0; u < fh; ++u)
                            for (int v = 0; v < fw; ++v)
                                dx[(oh * fh + u) * W + ow * fw + v] += g;
                    }
            }
    });
}

// Plain-tensor variant for weight maps that never need gradients.
inline Tensor avgpool_area_tensor(const Tensor& x, int OH, int OW) {
    Var v(x, false);
    return avgpool_area(v, OH, OW).value();
}

// ---- channel ops ------------------------------------------------------------

inline Var concat_channels(const std::vector<Var>& xs) {
    check_numeric(!xs.empty(), "concat: empty input");
    const int B = xs[0].value().dim(0), H = xs[0].value().dim(2), W = xs[0].value().dim(3);
    int Ctot = 0;
    for (const auto& x : xs) {
        check_numeric(x.value().dim(0) == B && x.value().dim(2) == H && x.value().dim(3) == W,
                      "concat: shape mismatch");
        Ctot += x.value().dim(1);
    }
    Tensor out({B, Ctot, H, W});
    int64_t plane = (int64_t)H * W;
    int co = 0;
    for (const auto& x : xs) {
        int C = x.value().dim(1);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                std::copy_n(x.value().data() + ((int64_t)(b * C + c)) * plane, plane,
                            out.data() + ((int64_t)(b * Ctot + co + c)) * plane);
        co += C;
    }
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& x : xs) nodes.push_back(x.node());
    return make_op(std::move(out), xs, [=](Node& n) {
        int off = 0;
        for (auto& xn : nodes) {
            int C = xn->value.dim(1);
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c) {
                        const double* gp = n.grad.data() + ((int64_t)(b * Ctot + off + c)) * plane;
                        double* dx = xn->grad.data() + ((int64_t)(b * C + c)) * plane;
                        for (int64_t i = 0; i < plane; ++i) dx[i] += gp[i];
                    }
            }
            off += C;
        }
    });
}

// Per-pixel softmax over the channel axis of [B,C,H,W].
inline Var softmax_channels(const Var& x) {
    const Tensor& xv = x.value();
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int64_t plane = (int64_t)H * W;
    Tensor out(xv.shape());
    for (int b = 0; b < B; ++b)
        for (int64_t i = 0; i < plane; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < C; ++c) mx = std::max(mx, xv.data()[((int64_t)(b * C + c)) * plane + i]);
            double z = 0.0;
            for (int c = 0; c < C; ++c) {
                double e = std::exp(xv.data()[((int64_t)(b * C + c)) * plane + i] - mx);
                out.data()[((int64_t)(b * C + c)) * plane + i] = e;
                z += e;
            }
            for (int c = 0; c < C; ++c) out.data()[((int64_t)(b * C + c)) * plane + i] /= z;
        }
    auto xn = x.node();
    Tensor yv = out;  // captured for backward
    return make_op(std::move(out), {x}, [=, yv = std::move(yv)](Node& n) {
        xn->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int64_t i = 0; i < plane; ++i) {
                double dot = 0.0;
                for (int c = 0; c < C; ++c) {
                    int64_t idx = ((int64_t)(b * C + c)) * plane + i;
                    dot += n.grad[idx] * yv[idx];
                }
                for (int c = 0; c < C; ++c) {
                    int64_t idx = ((int64_t)(b * C + c)) * plane + i;
                    xn->grad[idx] += yv[idx] * (n.grad[idx] - dot);
                }
            }
    });
}

// Global average pooling [B,C,H,W] -> [B,C].
inline Var gap(const Var& x) {
    const Tensor& xv = x.value();
    const int B = xv.dim(0), C = xv.dim(1);
    const int64_t plane = (int64_t)xv.dim(2) * xv.dim(3);
    const double inv = 1.0 / (double)plane;
    Tensor out({B, C});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* p = xv.data() + ((int64_t)(b * C + c)) * plane;
            double s = 0.0;
            for (int64_t i = 0; i < plane; ++i) s += p[i];
            out.at(b, c) = s * inv;
        }
    auto xn = x.node();
    return make_op(std::move(out), {x}, [=](Node& n) {
        xn->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                double g = n.grad.at(b, c) * inv;
                double* dx = xn->grad.data() + ((int64_t)(b * C + c)) * plane;
                for (int64_t i = 0; i < plane; ++i) dx[i] += g;
            }
    });
}

// ---- weighted average + weighted max pooling --------------------------

inline constexpr double kWeightedPoolEps = 1e-6;

// feat: [B,C,H,W]; weight: constant map [B,H,W]. Output [B,2C]: first C =
// weighted average sum(w*f)/(sum(w)+eps), last C = max over pixels of w*f.
// An all-zero weight map yields zeros in both halves rather than NaN.
inline Var weighted_pool_op(const Var& feat, const Tensor& weight) {
    const Tensor& fv = feat.value();
    const int B = fv.dim(0), C = fv.dim(1), H = fv.dim(2), W = fv.dim(3);
    check_numeric(weight.ndim() == 3 && weight.dim(0) == B && weight.dim(1) == H &&
                      weight.dim(2) == W,
                  "weighted_pool: weight shape mismatch");
    const int64_t plane = (int64_t)H * W;
    Tensor out({B, 2 * C});
    std::vector<int> argmax((size_t)B * C, 0);
    std::vector<double> wsum(B, 0.0);
    for (int b = 0; b < B; ++b) {
        const double* wp = weight.data() + (int64_t)b * plane;
        double s = 0.0;
        for (int64_t i = 0; i < plane; ++i) s += wp[i];
        wsum[b] = s;
        for (int c = 0; c < C; ++c) {
            const double* p = fv.data() + ((int64_t)(b * C + c)) * plane;
            double acc = 0.0;
            double mx = -std::numeric_limits<double>::infinity();
            int arg = 0;
            for (int64_t i = 0; i < plane; ++i) {
                double wf = wp[i] * p[i];
                acc += wf;
                if (wf > mx) {
                    mx = wf;
                    arg = (int)i;
                }
            }
            out.at(b, c) = acc / (s + kWeightedPoolEps);
            out.at(b, C + c) = mx;
            argmax[(size_t)b * C + c] = arg;
        }
    }
    auto fnode = feat.node();
    return make_op(std::move(out), {feat},
                   [=, argmax = std::move(argmax), wsum = std::move(wsum)](Node& n) {
        fnode->ensure_grad();
        for (int b = 0; b < B; ++b) {
            const double* wp = weight.data() + (int64_t)b * plane;
            const double denom = 1.0 / (wsum[b] + kWeightedPoolEps);
            for (int c = 0; c < C; ++c) {
                double* dx = fnode->grad.data() + ((int64_t)(b * C + c)) * plane;
                double ga = n.grad.at(b, c) * denom;
                if (ga != 0.0)
                    for (int64_t i = 0; i < plane; ++i) dx[i] += ga * wp[i];
                double gm = n.grad.at(b, C + c);
                if (gm != 0.0) {
                    int arg = argmax[(size_t)b * C + c];
                    dx[arg] += gm * wp[arg];
                }
            }
        }
    });
}

// ---- classification loss -----------------------------------------------------

// Label-smoothed cross entropy, mean over the batch. q(true) = 1-eps+eps/N,
// q(other) = eps/N.
inline Var smoothed_ce(const Var& logits, const std::vector<int>& labels, double eps_ls) {
    const Tensor& lv = logits.value();
    check_numeric(lv.ndim() == 2, "smoothed_ce: rank mismatch");
    const int B = lv.dim(0), N = lv.dim(1);
    check_numeric((int)labels.size() == B, "smoothed_ce: batch mismatch");
    for (int l : labels) check_config(l >= 0 && l < N, "smoothed_ce: label out of range");

    Tensor probs({B, N});
    double loss = 0.0;
    const double q_off = eps_ls / N;
    const double q_on = 1.0 - eps_ls + eps_ls / N;
    for (int b = 0; b < B; ++b) {
        const double* p = lv.data() + (int64_t)b * N;
        double mx = *std::max_element(p, p + N);
        double z = 0.0;
        for (int c = 0; c < N; ++c) z += std::exp(p[c] - mx);
        double logz = std::log(z) + mx;
        for (int c = 0; c < N; ++c) {
            double logp = p[c] - logz;
            probs.at(b, c) = std::exp(logp);
            double q = (c == labels[b]) ? q_on : q_off;
            loss -= q * logp;
        }
    }
    loss /= B;
    auto ln = logits.node();
    return make_op(Tensor::scalar(loss), {logits},
                   [=, probs = std::move(probs), labels = labels](Node& n) {
        ln->ensure_grad();
        const double g = n.grad[0] / B;
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < N; ++c) {
                double q = (c == labels[b]) ? q_on : q_off;
                ln->grad.at(b, c) += g * (probs.at(b, c) - q);
            }
    });
}

}  // namespace drop
