#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "lsrkit/matrix.hpp"
#include "lsrkit/rng.hpp"

namespace lsrkit {

enum class Activation : std::uint32_t { tanh = 0, relu = 1, tanh_sin = 2 };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
        case Activation::tanh_sin: return "tanh_sin";
    }
    return "?";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "tanh_sin") return Activation::tanh_sin;
    throw DimensionError("unknown activation: " + s);
}

/// Value and first derivative. Defined for every activation.
inline void act_eval1(Activation a, double x, double& f, double& d1) {
    switch (a) {
        case Activation::tanh: {
            const double t = std::tanh(x);
            f = t;
            d1 = 1.0 - t * t;
            return;
        }
        case Activation::relu: {
            f = x > 0.0 ? x : 0.0;
            d1 = x > 0.0 ? 1.0 : 0.0;
            return;
        }
        case Activation::tanh_sin: {
            const double u = std::numbers::pi * (x + 1.0);
            const double s = std::sin(u), c = std::cos(u);
            const double t = std::tanh(s);
            f = t + x;
            d1 = (1.0 - t * t) * c * std::numbers::pi + 1.0;
            return;
        }
    }
}

/// Value and first three derivatives; relu is rejected because its second
/// derivative is not defined pointwise.
inline void act_eval3(Activation a, double x, double& f, double& d1, double& d2, double& d3) {
    switch (a) {
        case Activation::tanh: {
            const double t = std::tanh(x);
            const double g = 1.0 - t * t;
            f = t;
            d1 = g;
            d2 = -2.0 * t * g;
            d3 = -2.0 * g * (1.0 - 3.0 * t * t);
            return;
        }
        case Activation::relu:
            throw UnsupportedActivationError("relu has no pointwise second derivative; use tanh or tanh_sin");
        case Activation::tanh_sin: {
            const double pi = std::numbers::pi;
            const double u = pi * (x + 1.0);
            const double s = std::sin(u), c = std::cos(u);
            const double t = std::tanh(s);
            const double g = 1.0 - t * t;
            f = t + x;
            d1 = g * c * pi + 1.0;
            d2 = -pi * pi * g * (2.0 * t * c * c + s);
            d3 = -pi * pi * pi * g * c * (-2.0 * t * (2.0 * t * c * c + s) + 2.0 * g * c * c - 4.0 * t * s + 1.0);
            return;
        }
    }
}

struct MlpArchitecture {
    std::size_t input_dim = 1;
    std::size_t output_dim = 1;
    std::vector<std::size_t> hidden;
    Activation activation = Activation::tanh;

    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d;
        d.push_back(input_dim);
        for (std::size_t h : hidden) d.push_back(h);
        d.push_back(output_dim);
        return d;
    }
    std::size_t layer_count() const { return hidden.size() + 1; }
    std::size_t param_count() const {
        const auto d = dims();
        std::size_t m = 0;
        for (std::size_t l = 0; l + 1 < d.size(); ++l) m += d[l] * d[l + 1] + d[l + 1];
        return m;
    }
    bool operator==(const MlpArchitecture&) const = default;
};

/// Flattening layout: per layer, W row-major (fan_out x fan_in), then biases.
struct ParamLayout {
    std::vector<std::size_t> d;      // layer widths, input first
    std::vector<std::size_t> w_off;  // weight offsets per layer
    std::vector<std::size_t> b_off;  // bias offsets per layer
    std::size_t total = 0;

    explicit ParamLayout(const MlpArchitecture& arch) : d(arch.dims()) {
        for (std::size_t l = 0; l + 1 < d.size(); ++l) {
            w_off.push_back(total);
            total += d[l] * d[l + 1];
            b_off.push_back(total);
            total += d[l + 1];
        }
    }
    std::size_t layers() const { return w_off.size(); }
    const double* w(const Vec& theta, std::size_t l) const { return theta.data() + w_off[l]; }
    const double* b(const Vec& theta, std::size_t l) const { return theta.data() + b_off[l]; }
    double* w(Vec& theta, std::size_t l) const { return theta.data() + w_off[l]; }
    double* b(Vec& theta, std::size_t l) const { return theta.data() + b_off[l]; }
};

namespace detail {

// y = W x + b for one layer; W is d_out x d_in row-major inside theta.
inline void layer_affine(const double* w, const double* b, std::size_t din, std::size_t dout,
                         const double* x, double* y) {
    for (std::size_t o = 0; o < dout; ++o) {
        const double* wr = w + o * din;
        double s = b ? b[o] : 0.0;
        for (std::size_t i = 0; i < din; ++i) s += wr[i] * x[i];
        y[o] = s;
    }
}

// Y (dout x K) = W X (din x K) [+ b broadcast]; row-major K-wide streams.
inline void layer_affine_wide(const double* w, const double* b, std::size_t din, std::size_t dout,
                              const Matrix& x, Matrix& y) {
    const std::size_t k = x.cols();
    for (std::size_t o = 0; o < dout; ++o) {
        double* yo = y.row(o);
        const double fill = b ? b[o] : 0.0;
        for (std::size_t c = 0; c < k; ++c) yo[c] = fill;
        const double* wr = w + o * din;
        for (std::size_t i = 0; i < din; ++i) {
            const double wv = wr[i];
            if (wv == 0.0) continue;
            const double* xi = x.row(i);
            for (std::size_t c = 0; c < k; ++c) yo[c] += wv * xi[c];
        }
    }
}

// Y (din x K) = W^T X (dout x K).
inline void layer_affine_t_wide(const double* w, std::size_t din, std::size_t dout, const Matrix& x, Matrix& y) {
    const std::size_t k = x.cols();
    for (std::size_t i = 0; i < din; ++i)
        for (std::size_t c = 0; c < k; ++c) y(i, c) = 0.0;
    for (std::size_t o = 0; o < dout; ++o) {
        const double* xo = x.row(o);
        const double* wr = w + o * din;
        for (std::size_t i = 0; i < din; ++i) {
            const double wv = wr[i];
            if (wv == 0.0) continue;
            double* yi = y.row(i);
            for (std::size_t c = 0; c < k; ++c) yi[c] += wv * xo[c];
        }
    }
}

// Y (dout x K) += dW X, where dW rows live in the K columns of tangents
// "cols" (m x K row-major) at weight offset woff; x is the shared base signal.
inline void tangent_weight_apply(const Matrix& cols, std::size_t woff, std::size_t din, std::size_t dout,
                                 const double* x, Matrix& y) {
    const std::size_t k = cols.cols();
    for (std::size_t o = 0; o < dout; ++o) {
        double* yo = y.row(o);
        for (std::size_t i = 0; i < din; ++i) {
            const double xv = x[i];
            if (xv == 0.0) continue;
            const double* vrow = cols.row(woff + o * din + i);
            for (std::size_t c = 0; c < k; ++c) yo[c] += xv * vrow[c];
        }
    }
}

inline void tangent_bias_apply(const Matrix& cols, std::size_t boff, std::size_t dout, Matrix& y) {
    const std::size_t k = cols.cols();
    for (std::size_t o = 0; o < dout; ++o) {
        double* yo = y.row(o);
        const double* vrow = cols.row(boff + o);
        for (std::size_t c = 0; c < k; ++c) yo[c] += vrow[c];
    }
}

}  // namespace detail

/// Glorot-uniform weights, zero biases, deterministic per seed.
inline Vec init_params(const MlpArchitecture& arch, std::uint64_t seed) {
    const ParamLayout lay(arch);
    Vec theta(lay.total, 0.0);
    SplitMix64 rng(seed);
    for (std::size_t l = 0; l < lay.layers(); ++l) {
        const std::size_t fin = lay.d[l], fout = lay.d[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fin + fout));
        double* w = lay.w(theta, l);
        for (std::size_t i = 0; i < fin * fout; ++i) w[i] = rng.uniform(-limit, limit);
    }
    return theta;
}

/// Batch forward pass. X is n_points x input_dim; output n_points x output_dim.
/// Hidden layers use the configured activation; the output layer is linear.
inline Matrix forward(const MlpArchitecture& arch, const Vec& theta, const Matrix& x) {
    if (x.cols() != arch.input_dim) throw DimensionError("forward: input dim mismatch");
    const ParamLayout lay(arch);
    if (theta.size() != lay.total) throw DimensionError("forward: parameter length mismatch");
    const std::size_t n = x.rows(), L = lay.layers();
    Matrix out(n, arch.output_dim);
    Vec z, a;
    for (std::size_t p = 0; p < n; ++p) {
        z.assign(x.row(p), x.row(p) + arch.input_dim);
        for (std::size_t l = 0; l < L; ++l) {
            a.assign(lay.d[l + 1], 0.0);
            detail::layer_affine(lay.w(theta, l), lay.b(theta, l), lay.d[l], lay.d[l + 1], z.data(), a.data());
            if (l + 1 < L) {
                z.resize(a.size());
                for (std::size_t i = 0; i < a.size(); ++i) {
                    double f, d1;
                    act_eval1(arch.activation, a[i], f, d1);
                    z[i] = f;
                }
            } else {
                z = a;
            }
        }
        for (std::size_t o = 0; o < arch.output_dim; ++o) out(p, o) = z[o];
    }
    return out;
}

/// J(x) V for a block of parameter tangents V (m x K). Output is the stacked
/// output-tangent matrix (n_points*output_dim) x K, point-major.
inline Matrix jvp_multi(const MlpArchitecture& arch, const Vec& theta, const Matrix& x, const Matrix& cols) {
    const ParamLayout lay(arch);
    if (cols.rows() != lay.total) throw DimensionError("jvp_multi: tangent length mismatch");
    if (x.cols() != arch.input_dim) throw DimensionError("jvp_multi: input dim mismatch");
    const std::size_t n = x.rows(), K = cols.cols(), L = lay.layers();
    Matrix y(n * arch.output_dim, K);

    Vec z, a, f1;
    for (std::size_t p = 0; p < n; ++p) {
        z.assign(x.row(p), x.row(p) + arch.input_dim);
        Matrix tz(arch.input_dim, K);  // zero: inputs carry no parameter tangent
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t din = lay.d[l], dout = lay.d[l + 1];
            a.assign(dout, 0.0);
            detail::layer_affine(lay.w(theta, l), lay.b(theta, l), din, dout, z.data(), a.data());
            Matrix ta(dout, K);
            detail::layer_affine_wide(lay.w(theta, l), nullptr, din, dout, tz, ta);
            detail::tangent_weight_apply(cols, lay.w_off[l], din, dout, z.data(), ta);
            detail::tangent_bias_apply(cols, lay.b_off[l], dout, ta);
            if (l + 1 < L) {
                z.resize(dout);
                f1.resize(dout);
                for (std::size_t i = 0; i < dout; ++i) act_eval1(arch.activation, a[i], z[i], f1[i]);
                for (std::size_t i = 0; i < dout; ++i) {
                    double* r = ta.row(i);
                    const double s = f1[i];
                    for (std::size_t c = 0; c < K; ++c) r[c] *= s;
                }
            } else {
                z = a;
            }
            tz = std::move(ta);
        }
        for (std::size_t o = 0; o < arch.output_dim; ++o)
            for (std::size_t c = 0; c < K; ++c) y(p * arch.output_dim + o, c) = tz(o, c);
    }
    return y;
}

/// J(x) v for a single tangent; returns the output-tangent batch n x out.
inline Matrix jvp(const MlpArchitecture& arch, const Vec& theta, const Matrix& x, const Vec& v) {
    Matrix cols(v.size(), 1, v);
    Matrix y = jvp_multi(arch, theta, x, cols);
    Matrix out(x.rows(), arch.output_dim);
    for (std::size_t p = 0; p < x.rows(); ++p)
        for (std::size_t o = 0; o < arch.output_dim; ++o) out(p, o) = y(p * arch.output_dim + o, 0);
    return out;
}

/// J(x)^T U for a block of output cotangents U ((n_points*output_dim) x K).
/// Returns the cotangent block as K x m (row per cotangent column).
inline Matrix vjp_multi(const MlpArchitecture& arch, const Vec& theta, const Matrix& x, const Matrix& ucols) {
    const ParamLayout lay(arch);
    if (x.cols() != arch.input_dim) throw DimensionError("vjp_multi: input dim mismatch");
    if (ucols.rows() != x.rows() * arch.output_dim) throw DimensionError("vjp_multi: cotangent rows mismatch");
    const std::size_t n = x.rows(), K = ucols.cols(), L = lay.layers();
    Matrix g(K, lay.total);

    std::vector<Vec> zs(L + 1), f1s(L);
    for (std::size_t p = 0; p < n; ++p) {
        zs[0].assign(x.row(p), x.row(p) + arch.input_dim);
        for (std::size_t l = 0; l < L; ++l) {
            Vec a(lay.d[l + 1], 0.0);
            detail::layer_affine(lay.w(theta, l), lay.b(theta, l), lay.d[l], lay.d[l + 1], zs[l].data(), a.data());
            if (l + 1 < L) {
                zs[l + 1].resize(a.size());
                f1s[l].resize(a.size());
                for (std::size_t i = 0; i < a.size(); ++i) act_eval1(arch.activation, a[i], zs[l + 1][i], f1s[l][i]);
            } else {
                zs[l + 1] = a;
            }
        }
        Matrix adj(arch.output_dim, K);
        for (std::size_t o = 0; o < arch.output_dim; ++o)
            for (std::size_t c = 0; c < K; ++c) adj(o, c) = ucols(p * arch.output_dim + o, c);
        for (std::size_t l = L; l-- > 0;) {
            const std::size_t din = lay.d[l], dout = lay.d[l + 1];
            const Vec& zin = zs[l];
            for (std::size_t o = 0; o < dout; ++o) {
                const double* ao = adj.row(o);
                for (std::size_t c = 0; c < K; ++c) {
                    const double s = ao[c];
                    if (s == 0.0) continue;
                    double* grow = g.row(c);
                    double* gw = grow + lay.w_off[l] + o * din;
                    for (std::size_t i = 0; i < din; ++i) gw[i] += s * zin[i];
                    grow[lay.b_off[l] + o] += s;
                }
            }
            if (l > 0) {
                Matrix prev(din, K);
                detail::layer_affine_t_wide(lay.w(theta, l), din, dout, adj, prev);
                const Vec& f1 = f1s[l - 1];
                for (std::size_t i = 0; i < din; ++i) {
                    double* r = prev.row(i);
                    for (std::size_t c = 0; c < K; ++c) r[c] *= f1[i];
                }
                adj = std::move(prev);
            }
        }
    }
    return g;
}

/// J(x)^T u for a single cotangent batch u (n x out); returns the flat gradient.
inline Vec vjp(const MlpArchitecture& arch, const Vec& theta, const Matrix& x, const Matrix& u) {
    if (u.rows() != x.rows() || u.cols() != arch.output_dim) throw DimensionError("vjp: cotangent shape mismatch");
    Matrix ucols(x.rows() * arch.output_dim, 1);
    for (std::size_t p = 0; p < x.rows(); ++p)
        for (std::size_t o = 0; o < arch.output_dim; ++o) ucols(p * arch.output_dim + o, 0) = u(p, o);
    Matrix g = vjp_multi(arch, theta, x, ucols);
    return g.data();
}

/// Value, per-axis first derivative and per-axis pure second derivative of the
/// network output with respect to its inputs. grad/hess column index is
/// axis*output_dim + o.
struct JetBatch {
    Matrix value;  // n x out
    Matrix grad;   // n x (in*out)
    Matrix hess;   // n x (in*out)
};

namespace detail {

// Per-point jet workspace holding pre-activation streams per layer. Streams:
// index 0 is the value, 1..in the first derivatives, in+1..2*in the second
// derivatives along each input axis.
struct JetPoint {
    std::vector<std::vector<Vec>> pre;   // [layer][stream] pre-activation
    std::vector<std::vector<Vec>> post;  // [layer+1][stream] post-activation (0 = input)

    // Grow buffers once; repeated calls for the same shape reuse capacity.
    void prepare(const ParamLayout& lay, std::size_t streams) {
        const std::size_t L = lay.layers();
        pre.resize(L);
        post.resize(L + 1);
        post[0].resize(streams);
        for (std::size_t l = 0; l < L; ++l) {
            pre[l].resize(streams);
            post[l + 1].resize(streams);
            for (std::size_t s = 0; s < streams; ++s) {
                pre[l][s].resize(lay.d[l + 1]);
                post[l + 1][s].resize(lay.d[l + 1]);
            }
        }
    }
};

inline void jet_forward_point(const MlpArchitecture& arch, const ParamLayout& lay, const Vec& theta,
                              const double* xin, JetPoint& jp) {
    const std::size_t in = arch.input_dim, L = lay.layers(), S = 1 + 2 * in;
    jp.prepare(lay, S);
    jp.post[0][0].assign(xin, xin + in);
    for (std::size_t a = 0; a < in; ++a) {
        jp.post[0][1 + a].assign(in, 0.0);
        jp.post[0][1 + a][a] = 1.0;
        jp.post[0][1 + in + a].assign(in, 0.0);
    }
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t din = lay.d[l], dout = lay.d[l + 1];
        layer_affine(lay.w(theta, l), lay.b(theta, l), din, dout, jp.post[l][0].data(), jp.pre[l][0].data());
        for (std::size_t s = 1; s < S; ++s)
            layer_affine(lay.w(theta, l), nullptr, din, dout, jp.post[l][s].data(), jp.pre[l][s].data());
        if (l + 1 < L) {
            for (std::size_t i = 0; i < dout; ++i) {
                double f, d1, d2, d3;
                act_eval3(arch.activation, jp.pre[l][0][i], f, d1, d2, d3);
                jp.post[l + 1][0][i] = f;
                for (std::size_t a = 0; a < in; ++a) {
                    const double da = jp.pre[l][1 + a][i];
                    const double ha = jp.pre[l][1 + in + a][i];
                    jp.post[l + 1][1 + a][i] = d1 * da;
                    jp.post[l + 1][1 + in + a][i] = d2 * da * da + d1 * ha;
                }
            }
        } else {
            for (std::size_t s = 0; s < S; ++s) jp.post[l + 1][s] = jp.pre[l][s];
        }
    }
}

}  // namespace detail

inline JetBatch input_jet(const MlpArchitecture& arch, const Vec& theta, const Matrix& x) {
    if (x.cols() != arch.input_dim) throw DimensionError("input_jet: input dim mismatch");
    const ParamLayout lay(arch);
    const std::size_t n = x.rows(), in = arch.input_dim, out = arch.output_dim;
    JetBatch jb{Matrix(n, out), Matrix(n, in * out), Matrix(n, in * out)};
    detail::JetPoint jp;
    for (std::size_t p = 0; p < n; ++p) {
        detail::jet_forward_point(arch, lay, theta, x.row(p), jp);
        const auto& top = jp.post.back();
        for (std::size_t o = 0; o < out; ++o) {
            jb.value(p, o) = top[0][o];
            for (std::size_t a = 0; a < in; ++a) {
                jb.grad(p, a * out + o) = top[1 + a][o];
                jb.hess(p, a * out + o) = top[1 + in + a][o];
            }
        }
    }
    return jb;
}

/// Parameter-directional derivative of the whole input jet for a block of K
/// tangents (forward-over-forward). Output matrices are n_points x K per jet
/// component; requires output_dim == 1.
struct JetTangentMulti {
    Matrix value;              // n x K
    std::vector<Matrix> grad;  // per input axis, n x K
    std::vector<Matrix> hess;  // per input axis, n x K
};

inline JetTangentMulti jet_param_tangent_multi(const MlpArchitecture& arch, const Vec& theta, const Matrix& x,
                                               const Matrix& cols) {
    if (arch.output_dim != 1) throw DimensionError("jet_param_tangent_multi: output_dim must be 1");
    const ParamLayout lay(arch);
    if (cols.rows() != lay.total) throw DimensionError("jet_param_tangent_multi: tangent length mismatch");
    const std::size_t n = x.rows(), in = arch.input_dim, K = cols.cols(), L = lay.layers();
    const std::size_t S = 1 + 2 * in;
    JetTangentMulti outJ;
    outJ.value = Matrix(n, K);
    outJ.grad.assign(in, Matrix(n, K));
    outJ.hess.assign(in, Matrix(n, K));

    detail::JetPoint jp;
    for (std::size_t p = 0; p < n; ++p) {
        detail::jet_forward_point(arch, lay, theta, x.row(p), jp);
        // tangent streams, same ordering as the base jet streams
        std::vector<Matrix> t(S, Matrix(in, K));  // post-activation tangents at layer input
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t din = lay.d[l], dout = lay.d[l + 1];
            std::vector<Matrix> ta(S, Matrix(dout, K));
            for (std::size_t s = 0; s < S; ++s) {
                detail::layer_affine_wide(lay.w(theta, l), nullptr, din, dout, t[s], ta[s]);
                detail::tangent_weight_apply(cols, lay.w_off[l], din, dout, jp.post[l][s].data(), ta[s]);
            }
            detail::tangent_bias_apply(cols, lay.b_off[l], dout, ta[0]);
            if (l + 1 < L) {
                std::vector<Matrix> tz(S, Matrix(dout, K));
                for (std::size_t i = 0; i < dout; ++i) {
                    double f, d1, d2, d3;
                    act_eval3(arch.activation, jp.pre[l][0][i], f, d1, d2, d3);
                    const double* tv = ta[0].row(i);
                    double* zv = tz[0].row(i);
                    for (std::size_t c = 0; c < K; ++c) zv[c] = d1 * tv[c];
                    for (std::size_t a = 0; a < in; ++a) {
                        const double da = jp.pre[l][1 + a][i];
                        const double ha = jp.pre[l][1 + in + a][i];
                        const double* tda = ta[1 + a].row(i);
                        const double* tha = ta[1 + in + a].row(i);
                        double* zd = tz[1 + a].row(i);
                        double* zh = tz[1 + in + a].row(i);
                        for (std::size_t c = 0; c < K; ++c) {
                            zd[c] = d2 * tv[c] * da + d1 * tda[c];
                            zh[c] = d3 * tv[c] * da * da + 2.0 * d2 * da * tda[c] + d2 * tv[c] * ha + d1 * tha[c];
                        }
                    }
                }
                t = std::move(tz);
            } else {
                t = std::move(ta);
            }
        }
        for (std::size_t c = 0; c < K; ++c) {
            outJ.value(p, c) = t[0](0, c);
            for (std::size_t a = 0; a < in; ++a) {
                outJ.grad[a](p, c) = t[1 + a](0, c);
                outJ.hess[a](p, c) = t[1 + in + a](0, c);
            }
        }
    }
    return outJ;
}

inline JetBatch jet_param_tangent(const MlpArchitecture& arch, const Vec& theta, const Matrix& x, const Vec& v) {
    Matrix cols(v.size(), 1, v);
    const JetTangentMulti t = jet_param_tangent_multi(arch, theta, x, cols);
    const std::size_t n = x.rows(), in = arch.input_dim;
    JetBatch jb{Matrix(n, 1), Matrix(n, in), Matrix(n, in)};
    for (std::size_t p = 0; p < n; ++p) {
        jb.value(p, 0) = t.value(p, 0);
        for (std::size_t a = 0; a < in; ++a) {
            jb.grad(p, a) = t.grad[a](p, 0);
            jb.hess(p, a) = t.hess[a](p, 0);
        }
    }
    return jb;
}

/// Adjoint of the jet computation: given per-point cotangent seeds on
/// (value, grad, hess_diag), accumulate the parameter cotangent. Requires
/// output_dim == 1 like the tangent counterpart.
inline Vec jet_vjp(const MlpArchitecture& arch, const Vec& theta, const Matrix& x, const Matrix& adj_value,
                   const Matrix& adj_grad, const Matrix& adj_hess) {
    if (arch.output_dim != 1) throw DimensionError("jet_vjp: output_dim must be 1");
    const ParamLayout lay(arch);
    const std::size_t n = x.rows(), in = arch.input_dim, L = lay.layers(), S = 1 + 2 * in;
    if (adj_value.rows() != n || adj_grad.rows() != n || adj_hess.rows() != n ||
        adj_grad.cols() != in || adj_hess.cols() != in)
        throw DimensionError("jet_vjp: seed shape mismatch");

    Vec g(lay.total, 0.0);
    detail::JetPoint jp;
    for (std::size_t p = 0; p < n; ++p) {
        detail::jet_forward_point(arch, lay, theta, x.row(p), jp);
        // adjoints of the post-activation streams at the top
        std::vector<Vec> adj(S);
        adj[0] = {adj_value(p, 0)};
        for (std::size_t a = 0; a < in; ++a) {
            adj[1 + a] = {adj_grad(p, a)};
            adj[1 + in + a] = {adj_hess(p, a)};
        }
        for (std::size_t l = L; l-- > 0;) {
            const std::size_t din = lay.d[l], dout = lay.d[l + 1];
            std::vector<Vec> adjPre(S, Vec(dout, 0.0));
            if (l + 1 < L) {
                for (std::size_t i = 0; i < dout; ++i) {
                    double f, d1, d2, d3;
                    act_eval3(arch.activation, jp.pre[l][0][i], f, d1, d2, d3);
                    double aa = d1 * adj[0][i];
                    for (std::size_t a = 0; a < in; ++a) {
                        const double da = jp.pre[l][1 + a][i];
                        const double ha = jp.pre[l][1 + in + a][i];
                        const double adV = adj[1 + a][i];
                        const double ahV = adj[1 + in + a][i];
                        aa += d2 * da * adV + (d3 * da * da + d2 * ha) * ahV;
                        adjPre[1 + a][i] = d1 * adV + 2.0 * d2 * da * ahV;
                        adjPre[1 + in + a][i] = d1 * ahV;
                    }
                    adjPre[0][i] = aa;
                }
            } else {
                for (std::size_t s = 0; s < S; ++s) adjPre[s] = adj[s];
            }
            // parameter gradients and input adjoints through the affine map
            for (std::size_t s = 0; s < S; ++s) {
                const Vec& zin = jp.post[l][s];
                for (std::size_t o = 0; o < dout; ++o) {
                    const double av = adjPre[s][o];
                    if (av == 0.0) continue;
                    double* gw = g.data() + lay.w_off[l] + o * din;
                    for (std::size_t i = 0; i < din; ++i) gw[i] += av * zin[i];
                }
            }
            for (std::size_t o = 0; o < dout; ++o) g[lay.b_off[l] + o] += adjPre[0][o];
            if (l > 0) {
                std::vector<Vec> adjIn(S, Vec(din, 0.0));
                const double* w = lay.w(theta, l);
                for (std::size_t s = 0; s < S; ++s)
                    for (std::size_t o = 0; o < dout; ++o) {
                        const double av = adjPre[s][o];
                        if (av == 0.0) continue;
                        const double* wr = w + o * din;
                        for (std::size_t i = 0; i < din; ++i) adjIn[s][i] += av * wr[i];
                    }
                adj = std::move(adjIn);
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "LSR1", then u32 LE input_dim, output_dim,
// hidden-layer count, hidden widths, activation id, then m f64 LE parameters.
// ---------------------------------------------------------------------------

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw NumericalError("checkpoint: truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw NumericalError("checkpoint: truncated");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const MlpArchitecture& arch, const Vec& theta) {
    if (theta.size() != arch.param_count()) throw DimensionError("save_checkpoint: parameter length mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw NumericalError("save_checkpoint: cannot open " + path);
    os.write("LSR1", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(arch.input_dim));
    detail::put_u32(os, static_cast<std::uint32_t>(arch.output_dim));
    detail::put_u32(os, static_cast<std::uint32_t>(arch.hidden.size()));
    for (std::size_t h : arch.hidden) detail::put_u32(os, static_cast<std::uint32_t>(h));
    detail::put_u32(os, static_cast<std::uint32_t>(arch.activation));
    for (double v : theta) detail::put_f64(os, v);
    if (!os) throw NumericalError("save_checkpoint: write failed");
}

inline std::pair<MlpArchitecture, Vec> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NumericalError("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "LSR1") throw NumericalError("load_checkpoint: bad magic");
    MlpArchitecture arch;
    arch.input_dim = detail::get_u32(is);
    arch.output_dim = detail::get_u32(is);
    const std::uint32_t nh = detail::get_u32(is);
    arch.hidden.resize(nh);
    for (auto& h : arch.hidden) h = detail::get_u32(is);
    arch.activation = static_cast<Activation>(detail::get_u32(is));
    Vec theta(arch.param_count());
    for (double& v : theta) v = detail::get_f64(is);
    return {arch, theta};
}

}  // namespace lsrkit
