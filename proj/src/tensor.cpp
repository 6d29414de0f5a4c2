#include "voxmim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "voxmim/errors.hpp"

namespace voxmim::nn {

namespace {

double f32(double x) { return static_cast<double>(static_cast<float>(x)); }

void check_finite(const Node& n, const char* op) {
#ifndef NDEBUG
    for (double v : n.value)
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
#else
    (void)n;
    (void)op;
#endif
}

struct Dims5 {
    int n, c, d, h, w;
};

Dims5 dims5(const Var& t, const char* op) {
    if (t->shape.size() != 5) throw UsageError(std::string(op) + ": expected a 5-d (N,C,D,H,W) tensor");
    return {t->shape[0], t->shape[1], t->shape[2], t->shape[3], t->shape[4]};
}

}  // namespace

size_t shape_size(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw UsageError("tensor shape entries must be positive");
        n *= static_cast<size_t>(d);
    }
    return n;
}

Var make_tensor(std::vector<int> shape, std::vector<double> value, bool requires_grad) {
    if (value.size() != shape_size(shape)) throw UsageError("tensor value count does not match shape");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return node;
}

Var make_constant(std::vector<int> shape, std::vector<double> value) {
    return make_tensor(std::move(shape), std::move(value), false);
}

Var make_param(std::vector<int> shape, std::vector<double> value) {
    for (double& v : value) v = f32(v);
    return make_tensor(std::move(shape), std::move(value), true);
}

std::vector<double> kaiming_uniform(size_t count, size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> out(count);
    for (double& v : out) v = f32(rng.uniform(-bound, bound));
    return out;
}

// ---------------------------------------------------------------------------

Var conv3d(const Var& input, const Var& kernel, const Var& bias, std::array<int, 3> padding) {
    const Dims5 in = dims5(input, "conv3d");
    if (kernel->shape.size() != 5) throw UsageError("conv3d: kernel must be (Cout,Cin,kd,kh,kw)");
    const int cout = kernel->shape[0], cin = kernel->shape[1];
    const int kd = kernel->shape[2], kh = kernel->shape[3], kw = kernel->shape[4];
    if (cin != in.c) throw UsageError("conv3d: input channels do not match kernel");
    if (bias->shape != std::vector<int>{cout}) throw UsageError("conv3d: bias shape mismatch");
    const int pd = padding[0], ph = padding[1], pw = padding[2];
    const int od = in.d + 2 * pd - kd + 1;
    const int oh = in.h + 2 * ph - kh + 1;
    const int ow = in.w + 2 * pw - kw + 1;
    if (od <= 0 || oh <= 0 || ow <= 0) throw UsageError("conv3d: kernel larger than padded input");

    auto out = std::make_shared<Node>();
    out->shape = {in.n, cout, od, oh, ow};
    out->value.resize(shape_size(out->shape));

    const size_t in_spatial = static_cast<size_t>(in.d) * in.h * in.w;
    const size_t out_spatial = static_cast<size_t>(od) * oh * ow;
    const double* kval = kernel->value.data();
    const double* bval = bias->value.data();

    // Per (kernel tap, channel pair): an axpy over the valid output window.
    // The valid ranges keep both the output index and the shifted input index
    // in bounds: id = o + tap - pad must lie in [0, in_dim).
    auto range = [](int out_dim, int in_dim, int pad, int tap, int& lo, int& hi) {
        lo = std::max(0, pad - tap);
        hi = std::min(out_dim, in_dim + pad - tap);
    };

    for (int n = 0; n < in.n; ++n) {
        for (int co = 0; co < cout; ++co) {
            double* o_slab = out->value.data() + (static_cast<size_t>(n) * cout + co) * out_spatial;
            std::fill(o_slab, o_slab + out_spatial, bval[co]);
            for (int ci = 0; ci < cin; ++ci) {
                const double* i_slab =
                    input->value.data() + (static_cast<size_t>(n) * cin + ci) * in_spatial;
                for (int zd = 0; zd < kd; ++zd)
                    for (int zh = 0; zh < kh; ++zh)
                        for (int zw = 0; zw < kw; ++zw) {
                            const double k =
                                kval[(((static_cast<size_t>(co) * cin + ci) * kd + zd) * kh + zh) * kw +
                                     zw];
                            if (k == 0.0) continue;
                            int ld, hd, lh, hh, lw, hw;
                            range(od, in.d, pd, zd, ld, hd);
                            range(oh, in.h, ph, zh, lh, hh);
                            range(ow, in.w, pw, zw, lw, hw);
                            for (int z = ld; z < hd; ++z)
                                for (int y = lh; y < hh; ++y) {
                                    double* o = o_slab + (static_cast<size_t>(z) * oh + y) * ow + lw;
                                    const double* i =
                                        i_slab +
                                        (static_cast<size_t>(z - pd + zd) * in.h + (y - ph + zh)) * in.w +
                                        (lw - pw + zw);
                                    for (int t = 0; t < hw - lw; ++t) o[t] += k * i[t];
                                }
                        }
            }
        }
    }
    check_finite(*out, "conv3d");

    out->requires_grad = input->requires_grad || kernel->requires_grad || bias->requires_grad;
    if (out->requires_grad) {
        out->parents = {input, kernel, bias};
        Var in_v = input, k_v = kernel, b_v = bias;
        out->backprop = [=](Node& self) {
            const size_t ispat = in_spatial, ospat = out_spatial;
            if (b_v->requires_grad) {
                b_v->ensure_grad();
                for (int n = 0; n < in.n; ++n)
                    for (int co = 0; co < cout; ++co) {
                        const double* g = self.grad.data() + (static_cast<size_t>(n) * cout + co) * ospat;
                        double acc = 0.0;
                        for (size_t t = 0; t < ospat; ++t) acc += g[t];
                        b_v->grad[static_cast<size_t>(co)] += acc;
                    }
            }
            if (in_v->requires_grad) in_v->ensure_grad();
            if (k_v->requires_grad) k_v->ensure_grad();
            auto range2 = [](int out_dim, int in_dim, int pad, int tap, int& lo, int& hi) {
                lo = std::max(0, pad - tap);
                hi = std::min(out_dim, in_dim + pad - tap);
            };
            for (int n = 0; n < in.n; ++n)
                for (int co = 0; co < cout; ++co) {
                    const double* g_slab =
                        self.grad.data() + (static_cast<size_t>(n) * cout + co) * ospat;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double* i_slab =
                            in_v->value.data() + (static_cast<size_t>(n) * cin + ci) * ispat;
                        double* ig_slab = in_v->requires_grad
                                              ? in_v->grad.data() + (static_cast<size_t>(n) * cin + ci) * ispat
                                              : nullptr;
                        for (int zd = 0; zd < kd; ++zd)
                            for (int zh = 0; zh < kh; ++zh)
                                for (int zw = 0; zw < kw; ++zw) {
                                    const size_t kidx =
                                        (((static_cast<size_t>(co) * cin + ci) * kd + zd) * kh + zh) *
                                            kw +
                                        zw;
                                    const double k = k_v->value[kidx];
                                    double kacc = 0.0;
                                    int ld, hd, lh, hh, lw, hw;
                                    range2(od, in.d, pd, zd, ld, hd);
                                    range2(oh, in.h, ph, zh, lh, hh);
                                    range2(ow, in.w, pw, zw, lw, hw);
                                    for (int z = ld; z < hd; ++z)
                                        for (int y = lh; y < hh; ++y) {
                                            const double* g =
                                                g_slab + (static_cast<size_t>(z) * oh + y) * ow + lw;
                                            const size_t ioff =
                                                (static_cast<size_t>(z - pd + zd) * in.h +
                                                 (y - ph + zh)) *
                                                    in.w +
                                                (lw - pw + zw);
                                            if (ig_slab) {
                                                double* ig = ig_slab + ioff;
                                                for (int t = 0; t < hw - lw; ++t) ig[t] += k * g[t];
                                            }
                                            if (k_v->requires_grad) {
                                                const double* i = i_slab + ioff;
                                                for (int t = 0; t < hw - lw; ++t) kacc += g[t] * i[t];
                                            }
                                        }
                                    if (k_v->requires_grad) k_v->grad[kidx] += kacc;
                                }
                    }
                }
        };
    }
    return out;
}

Var batchnorm3d(const Var& input, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode) {
    const Dims5 in = dims5(input, "batchnorm3d");
    const int c = in.c;
    if (gamma->shape != std::vector<int>{c} || beta->shape != std::vector<int>{c})
        throw UsageError("batchnorm3d: gamma/beta channel count mismatch");
    if (static_cast<int>(state.running_mean.size()) != c)
        throw UsageError("batchnorm3d: running stats channel count mismatch");

    const size_t spatial = static_cast<size_t>(in.d) * in.h * in.w;
    const size_t per_channel = static_cast<size_t>(in.n) * spatial;

    std::vector<double> mean(static_cast<size_t>(c)), var(static_cast<size_t>(c));
    if (mode == Mode::Train) {
        for (int ch = 0; ch < c; ++ch) {
            double sum = 0.0, sq = 0.0;
            for (int n = 0; n < in.n; ++n) {
                const double* x = input->value.data() + (static_cast<size_t>(n) * c + ch) * spatial;
                for (size_t t = 0; t < spatial; ++t) {
                    sum += x[t];
                    sq += x[t] * x[t];
                }
            }
            const double m = sum / static_cast<double>(per_channel);
            mean[static_cast<size_t>(ch)] = m;
            var[static_cast<size_t>(ch)] = std::max(0.0, sq / static_cast<double>(per_channel) - m * m);
            state.running_mean[static_cast<size_t>(ch)] =
                f32((1.0 - state.momentum) * state.running_mean[static_cast<size_t>(ch)] +
                    state.momentum * m);
            state.running_var[static_cast<size_t>(ch)] =
                f32((1.0 - state.momentum) * state.running_var[static_cast<size_t>(ch)] +
                    state.momentum * var[static_cast<size_t>(ch)]);
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    auto out = std::make_shared<Node>();
    out->shape = input->shape;
    out->value.resize(input->value.size());
    auto xhat = std::make_shared<std::vector<double>>(input->value.size());
    std::vector<double> inv_std(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch)
        inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var[static_cast<size_t>(ch)] + state.epsilon);

    for (int n = 0; n < in.n; ++n)
        for (int ch = 0; ch < c; ++ch) {
            const size_t off = (static_cast<size_t>(n) * c + ch) * spatial;
            const double m = mean[static_cast<size_t>(ch)], is = inv_std[static_cast<size_t>(ch)];
            const double g = gamma->value[static_cast<size_t>(ch)],
                         b = beta->value[static_cast<size_t>(ch)];
            for (size_t t = 0; t < spatial; ++t) {
                const double xh = (input->value[off + t] - m) * is;
                (*xhat)[off + t] = xh;
                out->value[off + t] = g * xh + b;
            }
        }
    check_finite(*out, "batchnorm3d");

    out->requires_grad = input->requires_grad || gamma->requires_grad || beta->requires_grad;
    if (out->requires_grad) {
        out->parents = {input, gamma, beta};
        Var in_v = input, g_v = gamma, b_v = beta;
        const bool train = mode == Mode::Train;
        out->backprop = [=](Node& self) {
            const int C = c;
            std::vector<double> dgamma(static_cast<size_t>(C), 0.0), dbeta(static_cast<size_t>(C), 0.0);
            for (int n = 0; n < in.n; ++n)
                for (int ch = 0; ch < C; ++ch) {
                    const size_t off = (static_cast<size_t>(n) * C + ch) * spatial;
                    for (size_t t = 0; t < spatial; ++t) {
                        dgamma[static_cast<size_t>(ch)] += self.grad[off + t] * (*xhat)[off + t];
                        dbeta[static_cast<size_t>(ch)] += self.grad[off + t];
                    }
                }
            if (g_v->requires_grad) {
                g_v->ensure_grad();
                for (int ch = 0; ch < C; ++ch) g_v->grad[static_cast<size_t>(ch)] += dgamma[static_cast<size_t>(ch)];
            }
            if (b_v->requires_grad) {
                b_v->ensure_grad();
                for (int ch = 0; ch < C; ++ch) b_v->grad[static_cast<size_t>(ch)] += dbeta[static_cast<size_t>(ch)];
            }
            if (!in_v->requires_grad) return;
            in_v->ensure_grad();
            const double mcount = static_cast<double>(per_channel);
            for (int ch = 0; ch < C; ++ch) {
                const double g = g_v->value[static_cast<size_t>(ch)];
                const double is = inv_std[static_cast<size_t>(ch)];
                if (train) {
                    const double sum_dy = dbeta[static_cast<size_t>(ch)];
                    const double sum_dy_xhat = dgamma[static_cast<size_t>(ch)];
                    for (int n = 0; n < in.n; ++n) {
                        const size_t off = (static_cast<size_t>(n) * C + ch) * spatial;
                        for (size_t t = 0; t < spatial; ++t) {
                            const double dy = self.grad[off + t];
                            in_v->grad[off + t] +=
                                g * is *
                                (dy - sum_dy / mcount - (*xhat)[off + t] * sum_dy_xhat / mcount);
                        }
                    }
                } else {
                    for (int n = 0; n < in.n; ++n) {
                        const size_t off = (static_cast<size_t>(n) * C + ch) * spatial;
                        for (size_t t = 0; t < spatial; ++t)
                            in_v->grad[off + t] += g * is * self.grad[off + t];
                    }
                }
            }
        };
    }
    return out;
}

Var maxpool3d(const Var& input, std::array<int, 3> window) {
    const Dims5 in = dims5(input, "maxpool3d");
    const int wd = window[0], wh = window[1], ww = window[2];
    if (wd <= 0 || wh <= 0 || ww <= 0) throw UsageError("maxpool3d: window must be positive");
    if (in.d % wd || in.h % wh || in.w % ww)
        throw UsageError("maxpool3d: spatial dims must be divisible by the window");
    const int od = in.d / wd, oh = in.h / wh, ow = in.w / ww;

    auto out = std::make_shared<Node>();
    out->shape = {in.n, in.c, od, oh, ow};
    out->value.resize(shape_size(out->shape));
    auto argmax = std::make_shared<std::vector<size_t>>(out->value.size());

    const size_t in_spatial = static_cast<size_t>(in.d) * in.h * in.w;
    size_t oi = 0;
    for (int n = 0; n < in.n; ++n)
        for (int ch = 0; ch < in.c; ++ch) {
            const size_t base = (static_cast<size_t>(n) * in.c + ch) * in_spatial;
            for (int z = 0; z < od; ++z)
                for (int y = 0; y < oh; ++y)
                    for (int x = 0; x < ow; ++x, ++oi) {
                        double best = -std::numeric_limits<double>::infinity();
                        size_t best_idx = 0;
                        for (int dz = 0; dz < wd; ++dz)
                            for (int dy = 0; dy < wh; ++dy)
                                for (int dx = 0; dx < ww; ++dx) {
                                    const size_t idx =
                                        base +
                                        (static_cast<size_t>(z * wd + dz) * in.h + (y * wh + dy)) * in.w +
                                        (x * ww + dx);
                                    if (input->value[idx] > best) {  // first occurrence wins ties
                                        best = input->value[idx];
                                        best_idx = idx;
                                    }
                                }
                        out->value[oi] = best;
                        (*argmax)[oi] = best_idx;
                    }
        }
    check_finite(*out, "maxpool3d");

    out->requires_grad = input->requires_grad;
    if (out->requires_grad) {
        out->parents = {input};
        Var in_v = input;
        out->backprop = [=](Node& self) {
            in_v->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) in_v->grad[(*argmax)[i]] += self.grad[i];
        };
    }
    return out;
}

Var upsample_nearest3d(const Var& input, std::array<int, 3> factor) {
    const Dims5 in = dims5(input, "upsample_nearest3d");
    const int fd = factor[0], fh = factor[1], fw = factor[2];
    if (fd < 1 || fh < 1 || fw < 1) throw UsageError("upsample_nearest3d: factor must be >= 1");
    const int od = in.d * fd, oh = in.h * fh, ow = in.w * fw;

    auto out = std::make_shared<Node>();
    out->shape = {in.n, in.c, od, oh, ow};
    out->value.resize(shape_size(out->shape));

    const size_t in_spatial = static_cast<size_t>(in.d) * in.h * in.w;
    const size_t out_spatial = static_cast<size_t>(od) * oh * ow;
    for (int n = 0; n < in.n; ++n)
        for (int ch = 0; ch < in.c; ++ch) {
            const double* i_slab = input->value.data() + (static_cast<size_t>(n) * in.c + ch) * in_spatial;
            double* o_slab = out->value.data() + (static_cast<size_t>(n) * in.c + ch) * out_spatial;
            for (int z = 0; z < od; ++z)
                for (int y = 0; y < oh; ++y)
                    for (int x = 0; x < ow; ++x)
                        o_slab[(static_cast<size_t>(z) * oh + y) * ow + x] =
                            i_slab[(static_cast<size_t>(z / fd) * in.h + y / fh) * in.w + x / fw];
        }

    out->requires_grad = input->requires_grad;
    if (out->requires_grad) {
        out->parents = {input};
        Var in_v = input;
        out->backprop = [=](Node& self) {
            in_v->ensure_grad();
            for (int n = 0; n < in.n; ++n)
                for (int ch = 0; ch < in.c; ++ch) {
                    double* ig = in_v->grad.data() + (static_cast<size_t>(n) * in.c + ch) * in_spatial;
                    const double* og = self.grad.data() + (static_cast<size_t>(n) * in.c + ch) * out_spatial;
                    for (int z = 0; z < od; ++z)
                        for (int y = 0; y < oh; ++y)
                            for (int x = 0; x < ow; ++x)
                                ig[(static_cast<size_t>(z / fd) * in.h + y / fh) * in.w + x / fw] +=
                                    og[(static_cast<size_t>(z) * oh + y) * ow + x];
                }
        };
    }
    return out;
}

Var relu(const Var& input) { return activation(input, ActKind::ReLU); }
Var sigmoid(const Var& input) { return activation(input, ActKind::Sigmoid); }

Var activation(const Var& input, ActKind kind) {
    auto out = std::make_shared<Node>();
    out->shape = input->shape;
    out->value.resize(input->value.size());
    if (kind == ActKind::ReLU) {
        for (size_t i = 0; i < out->value.size(); ++i)
            out->value[i] = input->value[i] > 0.0 ? input->value[i] : 0.0;
    } else {
        for (size_t i = 0; i < out->value.size(); ++i)
            out->value[i] = 1.0 / (1.0 + std::exp(-input->value[i]));
    }
    check_finite(*out, "activation");

    out->requires_grad = input->requires_grad;
    if (out->requires_grad) {
        out->parents = {input};
        Var in_v = input;
        out->backprop = [=](Node& self) {
            in_v->ensure_grad();
            if (kind == ActKind::ReLU) {
                for (size_t i = 0; i < self.grad.size(); ++i)
                    if (in_v->value[i] > 0.0) in_v->grad[i] += self.grad[i];
            } else {
                for (size_t i = 0; i < self.grad.size(); ++i) {
                    const double s = self.value[i];
                    in_v->grad[i] += self.grad[i] * s * (1.0 - s);
                }
            }
        };
    }
    return out;
}

Var linear(const Var& input, const Var& weight, const Var& bias) {
    if (input->shape.size() != 2) throw UsageError("linear: input must be (N,F)");
    if (weight->shape.size() != 2) throw UsageError("linear: weight must be (Out,F)");
    const int n = input->shape[0], f = input->shape[1];
    const int o = weight->shape[0];
    if (weight->shape[1] != f) throw UsageError("linear: feature dims do not match");
    if (bias->shape != std::vector<int>{o}) throw UsageError("linear: bias shape mismatch");

    auto out = std::make_shared<Node>();
    out->shape = {n, o};
    out->value.resize(static_cast<size_t>(n) * o);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) {
            double acc = bias->value[static_cast<size_t>(j)];
            const double* x = input->value.data() + static_cast<size_t>(i) * f;
            const double* w = weight->value.data() + static_cast<size_t>(j) * f;
            for (int k = 0; k < f; ++k) acc += x[k] * w[k];
            out->value[static_cast<size_t>(i) * o + j] = acc;
        }
    check_finite(*out, "linear");

    out->requires_grad = input->requires_grad || weight->requires_grad || bias->requires_grad;
    if (out->requires_grad) {
        out->parents = {input, weight, bias};
        Var in_v = input, w_v = weight, b_v = bias;
        out->backprop = [=](Node& self) {
            if (b_v->requires_grad) {
                b_v->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < o; ++j)
                        b_v->grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i) * o + j];
            }
            if (w_v->requires_grad) {
                w_v->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < o; ++j) {
                        const double g = self.grad[static_cast<size_t>(i) * o + j];
                        const double* x = in_v->value.data() + static_cast<size_t>(i) * f;
                        double* wg = w_v->grad.data() + static_cast<size_t>(j) * f;
                        for (int k = 0; k < f; ++k) wg[k] += g * x[k];
                    }
            }
            if (in_v->requires_grad) {
                in_v->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < o; ++j) {
                        const double g = self.grad[static_cast<size_t>(i) * o + j];
                        const double* w = w_v->value.data() + static_cast<size_t>(j) * f;
                        double* xg = in_v->grad.data() + static_cast<size_t>(i) * f;
                        for (int k = 0; k < f; ++k) xg[k] += g * w[k];
                    }
            }
        };
    }
    return out;
}

Var global_avg_pool(const Var& input) {
    const Dims5 in = dims5(input, "global_avg_pool");
    const size_t spatial = static_cast<size_t>(in.d) * in.h * in.w;

    auto out = std::make_shared<Node>();
    out->shape = {in.n, in.c};
    out->value.resize(static_cast<size_t>(in.n) * in.c);
    for (int n = 0; n < in.n; ++n)
        for (int ch = 0; ch < in.c; ++ch) {
            const double* x = input->value.data() + (static_cast<size_t>(n) * in.c + ch) * spatial;
            double acc = 0.0;
            for (size_t t = 0; t < spatial; ++t) acc += x[t];
            out->value[static_cast<size_t>(n) * in.c + ch] = acc / static_cast<double>(spatial);
        }

    out->requires_grad = input->requires_grad;
    if (out->requires_grad) {
        out->parents = {input};
        Var in_v = input;
        out->backprop = [=](Node& self) {
            in_v->ensure_grad();
            for (int n = 0; n < in.n; ++n)
                for (int ch = 0; ch < in.c; ++ch) {
                    const double g = self.grad[static_cast<size_t>(n) * in.c + ch] /
                                     static_cast<double>(spatial);
                    double* ig = in_v->grad.data() + (static_cast<size_t>(n) * in.c + ch) * spatial;
                    for (size_t t = 0; t < spatial; ++t) ig[t] += g;
                }
        };
    }
    return out;
}

Var concat_channels(const Var& a, const Var& b) {
    const Dims5 da = dims5(a, "concat_channels");
    const Dims5 db = dims5(b, "concat_channels");
    if (da.n != db.n || da.d != db.d || da.h != db.h || da.w != db.w)
        throw UsageError("concat_channels: non-channel dims must match");
    const size_t spatial = static_cast<size_t>(da.d) * da.h * da.w;

    auto out = std::make_shared<Node>();
    out->shape = {da.n, da.c + db.c, da.d, da.h, da.w};
    out->value.resize(shape_size(out->shape));
    for (int n = 0; n < da.n; ++n) {
        std::copy_n(a->value.data() + static_cast<size_t>(n) * da.c * spatial, static_cast<size_t>(da.c) * spatial,
                    out->value.data() + static_cast<size_t>(n) * (da.c + db.c) * spatial);
        std::copy_n(b->value.data() + static_cast<size_t>(n) * db.c * spatial, static_cast<size_t>(db.c) * spatial,
                    out->value.data() + (static_cast<size_t>(n) * (da.c + db.c) + da.c) * spatial);
    }

    out->requires_grad = a->requires_grad || b->requires_grad;
    if (out->requires_grad) {
        out->parents = {a, b};
        Var a_v = a, b_v = b;
        out->backprop = [=](Node& self) {
            for (int n = 0; n < da.n; ++n) {
                const double* g = self.grad.data() + static_cast<size_t>(n) * (da.c + db.c) * spatial;
                if (a_v->requires_grad) {
                    a_v->ensure_grad();
                    double* ag = a_v->grad.data() + static_cast<size_t>(n) * da.c * spatial;
                    for (size_t t = 0; t < static_cast<size_t>(da.c) * spatial; ++t) ag[t] += g[t];
                }
                if (b_v->requires_grad) {
                    b_v->ensure_grad();
                    double* bg = b_v->grad.data() + static_cast<size_t>(n) * db.c * spatial;
                    for (size_t t = 0; t < static_cast<size_t>(db.c) * spatial; ++t)
                        bg[t] += g[static_cast<size_t>(da.c) * spatial + t];
                }
            }
        };
    }
    return out;
}

Var mse_loss(const Var& prediction, const Var& target, const std::vector<uint8_t>* mask) {
    if (prediction->shape != target->shape) throw UsageError("mse_loss: shape mismatch");
    if (mask && mask->size() != prediction->value.size())
        throw UsageError("mse_loss: mask length mismatch");

    size_t count = 0;
    double acc = 0.0;
    for (size_t i = 0; i < prediction->value.size(); ++i) {
        if (mask && !(*mask)[i]) continue;
        const double d = prediction->value[i] - target->value[i];
        acc += d * d;
        ++count;
    }
    if (count == 0) throw UsageError("mse_loss: empty mask");

    auto out = std::make_shared<Node>();
    out->shape = {1};
    out->value = {acc / static_cast<double>(count)};
    check_finite(*out, "mse_loss");

    out->requires_grad = prediction->requires_grad;
    if (out->requires_grad) {
        out->parents = {prediction, target};
        Var p_v = prediction, t_v = target;
        auto m = mask ? std::make_shared<std::vector<uint8_t>>(*mask) : nullptr;
        out->backprop = [=](Node& self) {
            p_v->ensure_grad();
            const double scale = 2.0 * self.grad[0] / static_cast<double>(count);
            for (size_t i = 0; i < p_v->value.size(); ++i) {
                if (m && !(*m)[i]) continue;
                p_v->grad[i] += scale * (p_v->value[i] - t_v->value[i]);
            }
        };
    }
    return out;
}

Var bce_loss(const Var& probabilities, const std::vector<double>& labels) {
    const size_t n = probabilities->value.size();
    if (labels.size() != n) throw UsageError("bce_loss: label count mismatch");
    constexpr double kClamp = 1e-7;

    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double p = std::clamp(probabilities->value[i], kClamp, 1.0 - kClamp);
        const double y = labels[i];
        acc += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }

    auto out = std::make_shared<Node>();
    out->shape = {1};
    out->value = {acc / static_cast<double>(n)};
    check_finite(*out, "bce_loss");

    out->requires_grad = probabilities->requires_grad;
    if (out->requires_grad) {
        out->parents = {probabilities};
        Var p_v = probabilities;
        auto ls = std::make_shared<std::vector<double>>(labels);
        out->backprop = [=](Node& self) {
            p_v->ensure_grad();
            const double scale = self.grad[0] / static_cast<double>(n);
            for (size_t i = 0; i < n; ++i) {
                const double raw = p_v->value[i];
                if (raw <= kClamp || raw >= 1.0 - kClamp) continue;  // flat through the clamp
                p_v->grad[i] += scale * (-(*ls)[i] / raw + (1.0 - (*ls)[i]) / (1.0 - raw));
            }
        };
    }
    return out;
}

void backward(const Var& loss) {
    if (loss->value.size() != 1) throw UsageError("backward: loss must be scalar");
    if (loss->backward_done)
        throw UsageError("backward: already called on this graph; rebuild the forward pass first");
    loss->backward_done = true;

    // Iterative post-order DFS; backprop runs in reverse topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack{{loss.get(), 0}};
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) {
            (*it)->ensure_grad();
            (*it)->backprop(**it);
        }
}

void adam_step(const std::vector<Var>& params, AdamState& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i]->value.size(), 0.0);
            state.v[i].assign(params[i]->value.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw UsageError("adam_step: parameter count changed");

    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Node& p = *params[i];
        if (p.value.size() != state.m[i].size()) throw UsageError("adam_step: parameter shape changed");
        p.ensure_grad();
        for (size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            state.m[i][j] = state.beta1 * state.m[i][j] + (1.0 - state.beta1) * g;
            state.v[i][j] = state.beta2 * state.v[i][j] + (1.0 - state.beta2) * g * g;
            const double mhat = state.m[i][j] / bc1;
            const double vhat = state.v[i][j] / bc2;
            p.value[j] = f32(p.value[j] - state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
        }
        p.zero_grad();
    }
}

}  // namespace voxmim::nn
