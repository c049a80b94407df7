#include "deid/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace deid {
namespace ops {

using autograd::make_op;

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

void check_same_shape(const Variable& a, const Variable& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    a.value().shape_str() + " vs " + b.value().shape_str());
}

Tensor ew(const Tensor& a, const Tensor& b, double (*f)(double, double)) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
}

Tensor map1(const Tensor& a, double (*f)(double)) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

} // namespace

Variable add(const Variable& a, const Variable& b) {
    check_same_shape(a, b, "add");
    Tensor v = ew(a.value(), b.value(), [](double x, double y) { return x + y; });
    return make_op(std::move(v), {a, b},
                   [](const Variable& g) { return std::vector<Variable>{g, g}; });
}

Variable sub(const Variable& a, const Variable& b) {
    check_same_shape(a, b, "sub");
    Tensor v = ew(a.value(), b.value(), [](double x, double y) { return x - y; });
    return make_op(std::move(v), {a, b},
                   [](const Variable& g) { return std::vector<Variable>{g, neg(g)}; });
}

Variable mul(const Variable& a, const Variable& b) {
    check_same_shape(a, b, "mul");
    Tensor v = ew(a.value(), b.value(), [](double x, double y) { return x * y; });
    return make_op(std::move(v), {a, b}, [a, b](const Variable& g) {
        return std::vector<Variable>{mul(g, b), mul(g, a)};
    });
}

Variable div(const Variable& a, const Variable& b) {
    check_same_shape(a, b, "div");
    Tensor v = ew(a.value(), b.value(), [](double x, double y) { return x / y; });
    return make_op(std::move(v), {a, b}, [a, b](const Variable& g) {
        Variable ga = div(g, b);
        Variable gb = neg(div(mul(g, a), mul(b, b)));
        return std::vector<Variable>{ga, gb};
    });
}

Variable neg(const Variable& x) { return scale(x, -1.0); }

Variable scale(const Variable& x, double c) {
    Tensor v(x.value().shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.value()[i] * c;
    return make_op(std::move(v), {x}, [c](const Variable& g) {
        return std::vector<Variable>{scale(g, c)};
    });
}

Variable add_scalar(const Variable& x, double c) {
    Tensor v(x.value().shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.value()[i] + c;
    return make_op(std::move(v), {x},
                   [](const Variable& g) { return std::vector<Variable>{g}; });
}

Variable mulc(const Variable& x, const Tensor& c) {
    if (!x.value().same_shape(c)) throw std::invalid_argument("mulc: shape mismatch");
    Tensor v(x.value().shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.value()[i] * c[i];
    return make_op(std::move(v), {x}, [c](const Variable& g) {
        return std::vector<Variable>{mulc(g, c)};
    });
}

Variable square(const Variable& x) {
    Tensor v = map1(x.value(), [](double a) { return a * a; });
    return make_op(std::move(v), {x}, [x](const Variable& g) {
        return std::vector<Variable>{scale(mul(g, x), 2.0)};
    });
}

Variable abs(const Variable& x) {
    Tensor v = map1(x.value(), [](double a) { return std::fabs(a); });
    Tensor sign(x.value().shape());
    for (std::size_t i = 0; i < sign.size(); ++i)
        sign[i] = x.value()[i] >= 0.0 ? 1.0 : -1.0;
    return make_op(std::move(v), {x}, [sign](const Variable& g) {
        return std::vector<Variable>{mulc(g, sign)};
    });
}

Variable sqrt(const Variable& x) {
    Tensor v = map1(x.value(), [](double a) { return std::sqrt(a); });
    return make_op(std::move(v), {x}, [x](const Variable& g) {
        return std::vector<Variable>{scale(div(g, sqrt(x)), 0.5)};
    });
}

Variable exp(const Variable& x) {
    Tensor v = map1(x.value(), [](double a) { return std::exp(a); });
    return make_op(std::move(v), {x}, [x](const Variable& g) {
        return std::vector<Variable>{mul(g, exp(x))};
    });
}

Variable log(const Variable& x) {
    Tensor v = map1(x.value(), [](double a) { return std::log(a); });
    return make_op(std::move(v), {x}, [x](const Variable& g) {
        return std::vector<Variable>{div(g, x)};
    });
}

Variable tanh(const Variable& x) {
    Tensor v = map1(x.value(), [](double a) { return std::tanh(a); });
    return make_op(std::move(v), {x}, [x](const Variable& g) {
        Variable t = tanh(x);
        Variable one_m = add_scalar(neg(square(t)), 1.0);
        return std::vector<Variable>{mul(g, one_m)};
    });
}

namespace {
double sigmoid_stable(double a) {
    if (a >= 0) {
        double e = std::exp(-a);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(a);
    return e / (1.0 + e);
}
double log_sigmoid_stable(double a) {
    // log(1/(1+e^-a)) = -log1p(e^-a) for a>=0; a - log1p(e^a) otherwise
    if (a >= 0) return -std::log1p(std::exp(-a));
    return a - std::log1p(std::exp(a));
}
} // namespace

Variable sigmoid(const Variable& x) {
    Tensor v = map1(x.value(), sigmoid_stable);
    return make_op(std::move(v), {x}, [x](const Variable& g) {
        Variable s = sigmoid(x);
        return std::vector<Variable>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
    });
}

Variable log_sigmoid(const Variable& x) {
    Tensor v = map1(x.value(), log_sigmoid_stable);
    return make_op(std::move(v), {x}, [x](const Variable& g) {
        return std::vector<Variable>{mul(g, sigmoid(neg(x)))};
    });
}

Variable leaky_relu(const Variable& x, double slope) {
    Tensor v(x.value().shape());
    Tensor mask(x.value().shape());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double a = x.value()[i];
        mask[i] = a > 0.0 ? 1.0 : slope;
        v[i] = a * mask[i];
    }
    return make_op(std::move(v), {x}, [mask](const Variable& g) {
        return std::vector<Variable>{mulc(g, mask)};
    });
}

Variable clamp_const(const Variable& x, double lo, double hi) {
    Tensor v(x.value().shape());
    Tensor mask(x.value().shape());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double a = x.value()[i];
        bool inside = a > lo && a < hi;
        mask[i] = inside ? 1.0 : 0.0;
        v[i] = std::clamp(a, lo, hi);
    }
    return make_op(std::move(v), {x}, [mask](const Variable& g) {
        return std::vector<Variable>{mulc(g, mask)};
    });
}

Variable pow_const(const Variable& x, double e) {
    Tensor v(x.value().shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::pow(x.value()[i], e);
    return make_op(std::move(v), {x}, [x, e](const Variable& g) {
        return std::vector<Variable>{mul(g, scale(pow_const(x, e - 1.0), e))};
    });
}

Variable reshape(const Variable& x, std::vector<std::size_t> shape) {
    Tensor v = x.value().reshaped(shape);
    auto orig = x.value().shape();
    return make_op(std::move(v), {x}, [orig](const Variable& g) {
        return std::vector<Variable>{reshape(g, orig)};
    });
}

Variable slice_cols(const Variable& x, std::size_t c0, std::size_t c1) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || c1 > xv.dim(1) || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range");
    std::size_t n = xv.dim(0), d = c1 - c0, D = xv.dim(1);
    Tensor v({n, d});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) v.at2(r, c) = xv.at2(r, c0 + c);
    return make_op(std::move(v), {x}, [c0, D](const Variable& g) {
        return std::vector<Variable>{embed_cols(g, c0, D)};
    });
}

Variable embed_cols(const Variable& x, std::size_t c0, std::size_t total_cols) {
    const Tensor& xv = x.value();
    std::size_t n = xv.dim(0), d = xv.dim(1);
    Tensor v({n, total_cols}, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) v.at2(r, c0 + c) = xv.at2(r, c);
    return make_op(std::move(v), {x}, [c0, d](const Variable& g) {
        return std::vector<Variable>{slice_cols(g, c0, c0 + d)};
    });
}

Variable concat_cols(const Variable& a, const Variable& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0))
        throw std::invalid_argument("concat_cols: incompatible shapes");
    std::size_t n = av.dim(0), da = av.dim(1), db = bv.dim(1);
    Tensor v({n, da + db});
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < da; ++c) v.at2(r, c) = av.at2(r, c);
        for (std::size_t c = 0; c < db; ++c) v.at2(r, da + c) = bv.at2(r, c);
    }
    return make_op(std::move(v), {a, b}, [da, db](const Variable& g) {
        return std::vector<Variable>{slice_cols(g, 0, da), slice_cols(g, da, da + db)};
    });
}

Variable slice_channels(const Variable& x, std::size_t c0, std::size_t c1) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4 || c1 > xv.dim(1) || c0 >= c1)
        throw std::invalid_argument("slice_channels: bad range");
    std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor v({N, c1 - c0, H, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = c0; c < c1; ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w)
                    v.at4(n, c - c0, h, w) = xv.at4(n, c, h, w);
    return make_op(std::move(v), {x}, [c0, C](const Variable& g) {
        return std::vector<Variable>{embed_channels(g, c0, C)};
    });
}

Variable embed_channels(const Variable& x, std::size_t c0, std::size_t total_channels) {
    const Tensor& xv = x.value();
    std::size_t N = xv.dim(0), c = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor v({N, total_channels, H, W}, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t cc = 0; cc < c; ++cc)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w)
                    v.at4(n, c0 + cc, h, w) = xv.at4(n, cc, h, w);
    return make_op(std::move(v), {x}, [c0, c](const Variable& g) {
        return std::vector<Variable>{slice_channels(g, c0, c0 + c)};
    });
}

Variable slice_rows(const Variable& x, std::size_t r0, std::size_t r1) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || r1 > xv.dim(0) || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range");
    std::size_t d = xv.dim(1), N = xv.dim(0);
    Tensor v({r1 - r0, d});
    for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = 0; c < d; ++c) v.at2(r - r0, c) = xv.at2(r, c);
    return make_op(std::move(v), {x}, [r0, r1, N, d](const Variable& g) {
        // adjoint: zero-pad rows
        Tensor gv(g.value());
        Tensor out({N, d}, 0.0);
        for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = 0; c < d; ++c) out.at2(r, c) = gv.at2(r - r0, c);
        return std::vector<Variable>{Variable::constant(std::move(out))};
    });
}

Variable sum_all(const Variable& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.value().size(); ++i) s += x.value()[i];
    auto shape = x.value().shape();
    return make_op(Tensor::scalar(s), {x}, [shape](const Variable& g) {
        return std::vector<Variable>{broadcast_scalar(g, shape)};
    });
}

Variable mean_all(const Variable& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x.value().size()));
}

Variable broadcast_scalar(const Variable& s, std::vector<std::size_t> shape) {
    if (s.value().size() != 1) throw std::invalid_argument("broadcast_scalar: not scalar");
    Tensor v(shape, s.value()[0]);
    return make_op(std::move(v), {s}, [](const Variable& g) {
        return std::vector<Variable>{sum_all(g)};
    });
}

Variable sum_cols(const Variable& x) {
    const Tensor& xv = x.value();
    std::size_t n = xv.dim(0), d = xv.dim(1);
    Tensor v({n, 1});
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += xv.at2(r, c);
        v.at2(r, 0) = s;
    }
    return make_op(std::move(v), {x}, [d](const Variable& g) {
        return std::vector<Variable>{broadcast_cols(g, d)};
    });
}

Variable broadcast_cols(const Variable& x, std::size_t d) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || xv.dim(1) != 1) throw std::invalid_argument("broadcast_cols: need [N,1]");
    std::size_t n = xv.dim(0);
    Tensor v({n, d});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) v.at2(r, c) = xv.at2(r, 0);
    return make_op(std::move(v), {x}, [](const Variable& g) {
        return std::vector<Variable>{sum_cols(g)};
    });
}

Variable sum_rows(const Variable& x) {
    const Tensor& xv = x.value();
    std::size_t n = xv.dim(0), d = xv.dim(1);
    Tensor v({d}, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) v[c] += xv.at2(r, c);
    return make_op(std::move(v), {x}, [n](const Variable& g) {
        return std::vector<Variable>{broadcast_rows(g, n)};
    });
}

Variable broadcast_rows(const Variable& x, std::size_t n) {
    const Tensor& xv = x.value();
    std::size_t d = xv.dim(0);
    Tensor v({n, d});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) v.at2(r, c) = xv[c];
    return make_op(std::move(v), {x}, [](const Variable& g) {
        return std::vector<Variable>{sum_rows(g)};
    });
}

Variable sum_hw(const Variable& x) {
    const Tensor& xv = x.value();
    std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor v({N, C}, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w) s += xv.at4(n, c, h, w);
            v.at2(n, c) = s;
        }
    return make_op(std::move(v), {x}, [H, W](const Variable& g) {
        return std::vector<Variable>{broadcast_hw(g, H, W)};
    });
}

Variable broadcast_hw(const Variable& x, std::size_t h, std::size_t w) {
    const Tensor& xv = x.value();
    std::size_t N = xv.dim(0), C = xv.dim(1);
    Tensor v({N, C, h, w});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            double val = xv.at2(n, c);
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) v.at4(n, c, i, j) = val;
        }
    return make_op(std::move(v), {x}, [](const Variable& g) {
        return std::vector<Variable>{sum_hw(g)};
    });
}

Variable global_avgpool(const Variable& x) {
    double inv = 1.0 / static_cast<double>(x.value().dim(2) * x.value().dim(3));
    return scale(sum_hw(x), inv);
}

Variable matmul(const Variable& a, const Variable& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw std::invalid_argument("matmul: shape mismatch " + av.shape_str() + "*" + bv.shape_str());
    std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor v({m, n});
    CMapM A(av.data(), m, k);
    CMapM B(bv.data(), k, n);
    MapM C(v.data(), m, n);
    C.noalias() = A * B;
    return make_op(std::move(v), {a, b}, [a, b](const Variable& g) {
        Variable ga = matmul(g, transpose(b));
        Variable gb = matmul(transpose(a), g);
        return std::vector<Variable>{ga, gb};
    });
}

Variable transpose(const Variable& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw std::invalid_argument("transpose: rank != 2");
    std::size_t m = xv.dim(0), n = xv.dim(1);
    Tensor v({n, m});
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) v.at2(c, r) = xv.at2(r, c);
    return make_op(std::move(v), {x}, [](const Variable& g) {
        return std::vector<Variable>{transpose(g)};
    });
}

Variable add_row_bias(const Variable& x, const Variable& b) {
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1))
        throw std::invalid_argument("add_row_bias: shape mismatch");
    Tensor v(xv.shape());
    std::size_t n = xv.dim(0), d = xv.dim(1);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) v.at2(r, c) = xv.at2(r, c) + bv[c];
    return make_op(std::move(v), {x, b}, [](const Variable& g) {
        return std::vector<Variable>{g, sum_rows(g)};
    });
}

namespace {

struct ConvDims {
    std::size_t N, C, H, W, O, KH, KW, OH, OW;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
    if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
        throw std::invalid_argument("conv2d: bad shapes " + x.shape_str() + " " + w.shape_str());
    ConvDims d{};
    d.N = x.dim(0); d.C = x.dim(1); d.H = x.dim(2); d.W = x.dim(3);
    d.O = w.dim(0); d.KH = w.dim(2); d.KW = w.dim(3);
    d.OH = (d.H + 2 * pad - d.KH) / stride + 1;
    d.OW = (d.W + 2 * pad - d.KW) / stride + 1;
    return d;
}

// col: [C*KH*KW, OH*OW]
void im2col(const Tensor& x, std::size_t n, const ConvDims& d, std::size_t stride,
            std::size_t pad, double* col) {
    std::size_t P = d.OH * d.OW;
    for (std::size_t c = 0; c < d.C; ++c)
        for (std::size_t ki = 0; ki < d.KH; ++ki)
            for (std::size_t kj = 0; kj < d.KW; ++kj) {
                std::size_t row = (c * d.KH + ki) * d.KW + kj;
                double* dst = col + row * P;
                for (std::size_t oi = 0; oi < d.OH; ++oi) {
                    long ih = static_cast<long>(oi * stride + ki) - static_cast<long>(pad);
                    for (std::size_t oj = 0; oj < d.OW; ++oj) {
                        long iw = static_cast<long>(oj * stride + kj) - static_cast<long>(pad);
                        double val = 0.0;
                        if (ih >= 0 && ih < static_cast<long>(d.H) && iw >= 0 &&
                            iw < static_cast<long>(d.W))
                            val = x.at4(n, c, ih, iw);
                        dst[oi * d.OW + oj] = val;
                    }
                }
            }
}

void col2im_add(const double* col, std::size_t n, const ConvDims& d, std::size_t stride,
                std::size_t pad, Tensor& x) {
    std::size_t P = d.OH * d.OW;
    for (std::size_t c = 0; c < d.C; ++c)
        for (std::size_t ki = 0; ki < d.KH; ++ki)
            for (std::size_t kj = 0; kj < d.KW; ++kj) {
                std::size_t row = (c * d.KH + ki) * d.KW + kj;
                const double* src = col + row * P;
                for (std::size_t oi = 0; oi < d.OH; ++oi) {
                    long ih = static_cast<long>(oi * stride + ki) - static_cast<long>(pad);
                    if (ih < 0 || ih >= static_cast<long>(d.H)) continue;
                    for (std::size_t oj = 0; oj < d.OW; ++oj) {
                        long iw = static_cast<long>(oj * stride + kj) - static_cast<long>(pad);
                        if (iw < 0 || iw >= static_cast<long>(d.W)) continue;
                        x.at4(n, c, ih, iw) += src[oi * d.OW + oj];
                    }
                }
            }
}

} // namespace

Variable conv2d(const Variable& x, const Variable& w, std::size_t stride, std::size_t pad) {
    ConvDims d = conv_dims(x.value(), w.value(), stride, pad);
    std::size_t K = d.C * d.KH * d.KW, P = d.OH * d.OW;
    Tensor v({d.N, d.O, d.OH, d.OW});
    std::vector<double> col(K * P);
    CMapM Wm(w.value().data(), d.O, K);
    for (std::size_t n = 0; n < d.N; ++n) {
        im2col(x.value(), n, d, stride, pad, col.data());
        CMapM Cm(col.data(), K, P);
        MapM Ym(v.data() + n * d.O * P, d.O, P);
        Ym.noalias() = Wm * Cm;
    }
    std::size_t kh = d.KH, kw = d.KW, H = d.H, W = d.W;
    return make_op(std::move(v), {x, w}, [x, w, stride, pad, H, W, kh, kw](const Variable& g) {
        Variable gx = conv_transpose2d(g, w, stride, pad, H, W);
        Variable gw = conv2d_grad_weight(x, g, stride, pad, kh, kw);
        return std::vector<Variable>{gx, gw};
    });
}

Variable conv_transpose2d(const Variable& g, const Variable& w, std::size_t stride,
                          std::size_t pad, std::size_t out_h, std::size_t out_w) {
    const Tensor& gv = g.value();
    const Tensor& wv = w.value();
    ConvDims d{};
    d.N = gv.dim(0); d.O = wv.dim(0); d.C = wv.dim(1);
    d.KH = wv.dim(2); d.KW = wv.dim(3);
    d.H = out_h; d.W = out_w;
    d.OH = gv.dim(2); d.OW = gv.dim(3);
    if (gv.dim(1) != d.O) throw std::invalid_argument("conv_transpose2d: channel mismatch");
    std::size_t K = d.C * d.KH * d.KW, P = d.OH * d.OW;
    Tensor v({d.N, d.C, out_h, out_w}, 0.0);
    std::vector<double> col(K * P);
    CMapM Wm(wv.data(), d.O, K);
    for (std::size_t n = 0; n < d.N; ++n) {
        CMapM Gm(gv.data() + n * d.O * P, d.O, P);
        MapM Cm(col.data(), K, P);
        Cm.noalias() = Wm.transpose() * Gm;
        col2im_add(col.data(), n, d, stride, pad, v);
    }
    return make_op(std::move(v), {g, w}, [g, w, stride, pad](const Variable& t) {
        Variable gg = conv2d(t, w, stride, pad);
        Variable gw = conv2d_grad_weight(t, g, stride, pad, w.value().dim(2), w.value().dim(3));
        return std::vector<Variable>{gg, gw};
    });
}

Variable conv2d_grad_weight(const Variable& x, const Variable& g, std::size_t stride,
                            std::size_t pad, std::size_t kh, std::size_t kw) {
    const Tensor& xv = x.value();
    const Tensor& gv = g.value();
    ConvDims d{};
    d.N = xv.dim(0); d.C = xv.dim(1); d.H = xv.dim(2); d.W = xv.dim(3);
    d.O = gv.dim(1); d.KH = kh; d.KW = kw;
    d.OH = gv.dim(2); d.OW = gv.dim(3);
    std::size_t K = d.C * kh * kw, P = d.OH * d.OW;
    Tensor v({d.O, d.C, kh, kw}, 0.0);
    std::vector<double> col(K * P);
    MapM Wm(v.data(), d.O, K);
    for (std::size_t n = 0; n < d.N; ++n) {
        im2col(xv, n, d, stride, pad, col.data());
        CMapM Cm(col.data(), K, P);
        CMapM Gm(gv.data() + n * d.O * P, d.O, P);
        Wm.noalias() += Gm * Cm.transpose();
    }
    std::size_t H = d.H, W = d.W;
    return make_op(std::move(v), {x, g}, [x, g, stride, pad, H, W](const Variable& u) {
        Variable gx = conv_transpose2d(g, u, stride, pad, H, W);
        Variable gg = conv2d(x, u, stride, pad);
        return std::vector<Variable>{gx, gg};
    });
}

Variable add_channel_bias(const Variable& x, const Variable& b) {
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 4 || bv.rank() != 1 || bv.dim(0) != xv.dim(1))
        throw std::invalid_argument("add_channel_bias: shape mismatch");
    Tensor v(xv.shape());
    std::size_t N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double bc = bv[c];
            const double* src = xv.data() + (n * C + c) * HW;
            double* dst = v.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) dst[i] = src[i] + bc;
        }
    return make_op(std::move(v), {x, b}, [](const Variable& g) {
        return std::vector<Variable>{g, sum_nhw(g)};
    });
}

Variable sum_nhw(const Variable& x) {
    const Tensor& xv = x.value();
    std::size_t N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor v({C}, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double* src = xv.data() + (n * C + c) * HW;
            double s = 0.0;
            for (std::size_t i = 0; i < HW; ++i) s += src[i];
            v[c] += s;
        }
    auto shape = xv.shape();
    return make_op(std::move(v), {x}, [shape](const Variable& g) {
        return std::vector<Variable>{broadcast_channel(g, shape)};
    });
}

Variable broadcast_channel(const Variable& b, std::vector<std::size_t> shape) {
    const Tensor& bv = b.value();
    Tensor v(shape);
    std::size_t N = shape[0], C = shape[1], HW = shape[2] * shape[3];
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            double* dst = v.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) dst[i] = bv[c];
        }
    return make_op(std::move(v), {b}, [](const Variable& g) {
        return std::vector<Variable>{sum_nhw(g)};
    });
}

Variable scale_channels(const Variable& x, const Variable& s) {
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    if (xv.rank() != 4 || sv.rank() != 2 || sv.dim(0) != xv.dim(0) || sv.dim(1) != xv.dim(1))
        throw std::invalid_argument("scale_channels: shape mismatch");
    Tensor v(xv.shape());
    std::size_t N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            double sc = sv.at2(n, c);
            const double* src = xv.data() + (n * C + c) * HW;
            double* dst = v.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) dst[i] = src[i] * sc;
        }
    return make_op(std::move(v), {x, s}, [x, s](const Variable& g) {
        return std::vector<Variable>{scale_channels(g, s), channel_dot(g, x)};
    });
}

Variable channel_dot(const Variable& a, const Variable& b) {
    check_same_shape(a, b, "channel_dot");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    std::size_t N = av.dim(0), C = av.dim(1), HW = av.dim(2) * av.dim(3);
    Tensor v({N, C});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double* pa = av.data() + (n * C + c) * HW;
            const double* pb = bv.data() + (n * C + c) * HW;
            double s = 0.0;
            for (std::size_t i = 0; i < HW; ++i) s += pa[i] * pb[i];
            v.at2(n, c) = s;
        }
    return make_op(std::move(v), {a, b}, [a, b](const Variable& u) {
        return std::vector<Variable>{scale_channels(b, u), scale_channels(a, u)};
    });
}

Variable add_scaled_noise(const Variable& x, const Variable& strength, const Tensor& noise) {
    const Tensor& xv = x.value();
    const Tensor& sv = strength.value();
    if (noise.dim(0) != xv.dim(0) || noise.dim(2) != xv.dim(2) || noise.dim(3) != xv.dim(3) ||
        sv.dim(0) != xv.dim(1))
        throw std::invalid_argument("add_scaled_noise: shape mismatch");
    Tensor v(xv.shape());
    std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w)
                    v.at4(n, c, h, w) = xv.at4(n, c, h, w) + sv[c] * noise.at4(n, 0, h, w);
    return make_op(std::move(v), {x, strength}, [noise](const Variable& g) {
        return std::vector<Variable>{g, noise_dot(g, noise)};
    });
}

Variable noise_dot(const Variable& a, const Tensor& noise) {
    const Tensor& av = a.value();
    std::size_t N = av.dim(0), C = av.dim(1), H = av.dim(2), W = av.dim(3);
    Tensor v({C}, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w)
                    v[c] += av.at4(n, c, h, w) * noise.at4(n, 0, h, w);
    return make_op(std::move(v), {a}, [noise, N, C, H, W](const Variable& u) {
        return std::vector<Variable>{scale_by_noise(u, noise, N, C, H, W)};
    });
}

Variable scale_by_noise(const Variable& u, const Tensor& noise, std::size_t n, std::size_t c,
                        std::size_t h, std::size_t w) {
    const Tensor& uv = u.value();
    Tensor v({n, c, h, w});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    v.at4(i, j, y, x) = uv[j] * noise.at4(i, 0, y, x);
    return make_op(std::move(v), {u}, [noise](const Variable& g) {
        return std::vector<Variable>{noise_dot(g, noise)};
    });
}

Variable avgpool2(const Variable& x) {
    const Tensor& xv = x.value();
    std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (H % 2 || W % 2) throw std::invalid_argument("avgpool2: odd spatial size");
    Tensor v({N, C, H / 2, W / 2});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < H / 2; ++i)
                for (std::size_t j = 0; j < W / 2; ++j)
                    v.at4(n, c, i, j) = 0.25 * (xv.at4(n, c, 2 * i, 2 * j) +
                                                xv.at4(n, c, 2 * i, 2 * j + 1) +
                                                xv.at4(n, c, 2 * i + 1, 2 * j) +
                                                xv.at4(n, c, 2 * i + 1, 2 * j + 1));
    return make_op(std::move(v), {x}, [](const Variable& g) {
        return std::vector<Variable>{scale(upsample_nearest2(g), 0.25)};
    });
}

Variable upsample_nearest2(const Variable& x) {
    const Tensor& xv = x.value();
    std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor v({N, C, 2 * H, 2 * W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < 2 * H; ++i)
                for (std::size_t j = 0; j < 2 * W; ++j)
                    v.at4(n, c, i, j) = xv.at4(n, c, i / 2, j / 2);
    return make_op(std::move(v), {x}, [](const Variable& g) {
        return std::vector<Variable>{scale(avgpool2(g), 4.0)};
    });
}

Variable softmax_cross_entropy(const Variable& logits, const Tensor& onehot) {
    const Tensor& zv = logits.value();
    if (!zv.same_shape(onehot)) throw std::invalid_argument("softmax_ce: shape mismatch");
    std::size_t n = zv.dim(0), k = zv.dim(1);
    // row max detached for stability
    Tensor rowmax(zv.shape());
    for (std::size_t r = 0; r < n; ++r) {
        double m = zv.at2(r, 0);
        for (std::size_t c = 1; c < k; ++c) m = std::max(m, zv.at2(r, c));
        for (std::size_t c = 0; c < k; ++c) rowmax.at2(r, c) = m;
    }
    Variable zc = sub(logits, Variable::constant(rowmax));
    Variable lse = log(sum_cols(exp(zc)));                       // [N,1]
    Variable picked = sum_cols(mulc(zc, onehot));                // [N,1]
    return mean_all(sub(lse, picked));
}

Variable l1_sum(const Variable& a, const Variable& b) {
    return sum_all(abs(sub(a, b)));
}

Variable l2_norm(const Variable& a, const Variable& b) {
    return sqrt(sum_all(square(sub(a, b))));
}

Variable cosine_similarity(const Variable& a, const Variable& b) {
    Variable dot = sum_all(mul(a, b));
    Variable na = sqrt(sum_all(square(a)));
    Variable nb = sqrt(sum_all(square(b)));
    if (na.value()[0] == 0.0 || nb.value()[0] == 0.0)
        throw std::domain_error("cosine_similarity: zero-norm input");
    return div(dot, mul(na, nb));
}

} // namespace ops
} // namespace deid
