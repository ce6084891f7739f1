#include "attnd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "attnd/errors.hpp"

namespace attnd {
namespace ops {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

void require_rank2(const Tensor& t, const char* who) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(who) + " expects a rank-2 tensor, got " + t.shape_str());
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(who) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

size_t numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

}  // namespace

double sorted_sum(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions differ, " + a.shape_str() + " vs " + b.shape_str());
    }
    std::vector<double> c(m * n);
    {
        ECMap A(a.data().data(), m, k), B(b.data().data(), k, n);
        EMap C(c.data(), m, n);
        C.noalias() = A * B;
    }
    return Tensor::from_op(
        {m, n}, std::move(c), {a, b},
        [an = a.node(), bn = b.node(), m, k, n](Tensor::Node& self) {
            ECMap dC(self.grad.data(), m, n);
            if (an->needs_grad) {
                ECMap B(bn->data.data(), k, n);
                EMap dA(an->grad.data(), m, k);
                dA.noalias() += dC * B.transpose();
            }
            if (bn->needs_grad) {
                ECMap A(an->data.data(), m, k);
                EMap dB(bn->grad.data(), k, n);
                dB.noalias() += A.transpose() * dC;
            }
        });
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    return Tensor::from_op(
        {n, m}, std::move(out), {a},
        [an = a.node(), m, n](Tensor::Node& self) {
            if (!an->needs_grad) return;
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) an->grad[i * n + j] += self.grad[j * m + i];
        });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return Tensor::from_op(
        a.shape(), std::move(out), {a, b},
        [an = a.node(), bn = b.node()](Tensor::Node& self) {
            if (an->needs_grad)
                for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            if (bn->needs_grad)
                for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
        });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    require_rank2(a, "add_row");
    const size_t m = a.dim(0), n = a.dim(1);
    if (row.size() != n) {
        throw DimensionError("add_row: row length " + row.shape_str() + " does not match " + a.shape_str());
    }
    std::vector<double> out(a.size());
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] + row.data()[j];
    return Tensor::from_op(
        {m, n}, std::move(out), {a, row},
        [an = a.node(), rn = row.node(), m, n](Tensor::Node& self) {
            if (an->needs_grad)
                for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            if (rn->needs_grad)
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j) rn->grad[j] += self.grad[i * n + j];
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return Tensor::from_op(
        a.shape(), std::move(out), {a, b},
        [an = a.node(), bn = b.node()](Tensor::Node& self) {
            if (an->needs_grad)
                for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
            if (bn->needs_grad)
                for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
        });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    return Tensor::from_op(
        a.shape(), std::move(out), {a},
        [an = a.node(), c](Tensor::Node& self) {
            if (!an->needs_grad) return;
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
        });
}

Tensor reshape(const Tensor& a, std::vector<size_t> shape) {
    if (numel(shape) != a.size()) {
        throw DimensionError("reshape: " + a.shape_str() + " has " + std::to_string(a.size()) +
                             " elements, target " + Tensor::shape_str(shape) + " needs " +
                             std::to_string(numel(shape)));
    }
    return Tensor::from_op(
        std::move(shape), a.data(), {a},
        [an = a.node()](Tensor::Node& self) {
            if (!an->needs_grad) return;
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        });
}

Tensor slice_rows(const Tensor& a, size_t r0, size_t r1) {
    require_rank2(a, "slice_rows");
    const size_t m = a.dim(0), n = a.dim(1);
    if (r0 >= r1 || r1 > m) throw DimensionError("slice_rows: bad range on " + a.shape_str());
    std::vector<double> out(a.data().begin() + r0 * n, a.data().begin() + r1 * n);
    return Tensor::from_op(
        {r1 - r0, n}, std::move(out), {a},
        [an = a.node(), r0, n](Tensor::Node& self) {
            if (!an->needs_grad) return;
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[r0 * n + i] += self.grad[i];
        });
}

Tensor slice_cols(const Tensor& a, size_t c0, size_t c1) {
    require_rank2(a, "slice_cols");
    const size_t m = a.dim(0), n = a.dim(1);
    if (c0 >= c1 || c1 > n) throw DimensionError("slice_cols: bad range on " + a.shape_str());
    const size_t w = c1 - c0;
    std::vector<double> out(m * w);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < w; ++j) out[i * w + j] = a.data()[i * n + c0 + j];
    return Tensor::from_op(
        {m, w}, std::move(out), {a},
        [an = a.node(), m, n, c0, w](Tensor::Node& self) {
            if (!an->needs_grad) return;
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < w; ++j) an->grad[i * n + c0 + j] += self.grad[i * w + j];
        });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    require_rank2(a, "concat_rows");
    require_rank2(b, "concat_rows");
    if (a.dim(1) != b.dim(1)) {
        throw DimensionError("concat_rows: width mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    const size_t ma = a.dim(0), mb = b.dim(0), n = a.dim(1);
    std::vector<double> out;
    out.reserve((ma + mb) * n);
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    return Tensor::from_op(
        {ma + mb, n}, std::move(out), {a, b},
        [an = a.node(), bn = b.node(), ma, n](Tensor::Node& self) {
            const size_t split = ma * n;
            if (an->needs_grad)
                for (size_t i = 0; i < split; ++i) an->grad[i] += self.grad[i];
            if (bn->needs_grad)
                for (size_t i = split; i < self.grad.size(); ++i) bn->grad[i - split] += self.grad[i];
        });
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return Tensor::from_op(
        {1}, {s}, {a},
        [an = a.node()](Tensor::Node& self) {
            if (!an->needs_grad) return;
            const double g = self.grad[0];
            for (double& d : an->grad) d += g;
        });
}

Tensor softmax(const Tensor& x, size_t axis) {
    if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + x.shape_str());
    const auto& shape = x.shape();
    const size_t n = shape[axis];
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

    std::vector<double> out(x.size());
    std::vector<double> exps(n);
    for (size_t o = 0; o < outer; ++o) {
        for (size_t j = 0; j < inner; ++j) {
            const size_t base = o * n * inner + j;
            double mx = x.data()[base];
            for (size_t i = 1; i < n; ++i) mx = std::max(mx, x.data()[base + i * inner]);
            if (!std::isfinite(mx)) throw NumericError("softmax: non-finite input");
            for (size_t i = 0; i < n; ++i) exps[i] = std::exp(x.data()[base + i * inner] - mx);
            const double z = sorted_sum(exps);
            for (size_t i = 0; i < n; ++i) out[base + i * inner] = exps[i] / z;
        }
    }
    return Tensor::from_op(
        shape, std::move(out), {x},
        [xn = x.node(), outer, n, inner](Tensor::Node& self) {
            if (!xn->needs_grad) return;
            for (size_t o = 0; o < outer; ++o) {
                for (size_t j = 0; j < inner; ++j) {
                    const size_t base = o * n * inner + j;
                    double dot = 0.0;
                    for (size_t i = 0; i < n; ++i) dot += self.grad[base + i * inner] * self.data[base + i * inner];
                    for (size_t i = 0; i < n; ++i) {
                        const size_t idx = base + i * inner;
                        xn->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                    }
                }
            }
        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw InputError("layer_norm: eps must be positive");
    const size_t d = x.shape().back();
    if (gain.size() != d || bias.size() != d) {
        throw DimensionError("layer_norm: gain/bias must have length " + std::to_string(d));
    }
    const size_t rows = x.size() / d;
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * d;
        double mean = 0.0;
        for (size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = gain.data()[j] * h + bias.data()[j];
        }
    }
    return Tensor::from_op(
        x.shape(), std::move(out), {x, gain, bias},
        [xn = x.node(), gn = gain.node(), bn = bias.node(), xhat = std::move(xhat),
         inv_std = std::move(inv_std), rows, d](Tensor::Node& self) {
            for (size_t r = 0; r < rows; ++r) {
                const double* dy = self.grad.data() + r * d;
                const double* xh = xhat.data() + r * d;
                if (gn->needs_grad)
                    for (size_t j = 0; j < d; ++j) gn->grad[j] += dy[j] * xh[j];
                if (bn->needs_grad)
                    for (size_t j = 0; j < d; ++j) bn->grad[j] += dy[j];
                if (xn->needs_grad) {
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (size_t j = 0; j < d; ++j) {
                        const double dxh = dy[j] * gn->data[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                    }
                    mean_dxh /= static_cast<double>(d);
                    mean_dxh_xh /= static_cast<double>(d);
                    for (size_t j = 0; j < d; ++j) {
                        const double dxh = dy[j] * gn->data[j];
                        xn->grad[r * d + j] += inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
            }
        });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    require_rank2(table, "embedding");
    const size_t v = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    for (size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<size_t>(ids[t]) >= v) {
            throw InputError("embedding: id " + std::to_string(ids[t]) + " out of range [0," +
                             std::to_string(v) + ")");
        }
        std::copy_n(table.data().data() + static_cast<size_t>(ids[t]) * d, d, out.data() + t * d);
    }
    return Tensor::from_op(
        {ids.size(), d}, std::move(out), {table},
        [tn = table.node(), ids, d](Tensor::Node& self) {
            if (!tn->needs_grad) return;
            for (size_t t = 0; t < ids.size(); ++t)
                for (size_t j = 0; j < d; ++j)
                    tn->grad[static_cast<size_t>(ids[t]) * d + j] += self.grad[t * d + j];
        });
}

Tensor gelu(const Tensor& x) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    constexpr double kCubic = 0.044715;
    std::vector<double> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = x.data()[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kCubic * v * v * v)));
    }
    return Tensor::from_op(
        x.shape(), std::move(out), {x},
        [xn = x.node()](Tensor::Node& self) {
            if (!xn->needs_grad) return;
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const double v = xn->data[i];
                const double u = kSqrt2OverPi * (v + kCubic * v * v * v);
                const double t = std::tanh(u);
                const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * v * v);
                xn->grad[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
            }
        });
}

Tensor tanh_t(const Tensor& x) {
    std::vector<double> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
    return Tensor::from_op(
        x.shape(), std::move(out), {x},
        [xn = x.node()](Tensor::Node& self) {
            if (!xn->needs_grad) return;
            for (size_t i = 0; i < self.grad.size(); ++i)
                xn->grad[i] += self.grad[i] * (1.0 - self.data[i] * self.data[i]);
        });
}

Tensor cross_entropy_prob(const Tensor& p, size_t index) {
    if (index >= p.size()) {
        throw InputError("cross_entropy: index " + std::to_string(index) + " out of range for " +
                         p.shape_str());
    }
    const double pa = p.data()[index];
    const double clamped = std::max(pa, kLogEps);
    return Tensor::from_op(
        {1}, {-std::log(clamped)}, {p},
        [pn = p.node(), index, pa](Tensor::Node& self) {
            if (!pn->needs_grad) return;
            if (pa > kLogEps) pn->grad[index] += -self.grad[0] / pa;
        });
}

Tensor forward_kl(const Tensor& p, const Tensor& q) {
    if (p.shape() != q.shape()) {
        throw DimensionError("forward_kl: shape mismatch " + p.shape_str() + " vs " + q.shape_str());
    }
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double pi = p.data()[i];
        if (pi == 0.0) continue;
        kl += pi * std::log((pi + kLogEps) / (q.data()[i] + kLogEps));
    }
    return Tensor::from_op(
        {1}, {kl}, {p, q},
        [pn = p.node(), qn = q.node()](Tensor::Node& self) {
            const double g = self.grad[0];
            for (size_t i = 0; i < pn->data.size(); ++i) {
                const double pi = pn->data[i], qi = qn->data[i];
                if (pn->needs_grad) {
                    pn->grad[i] += g * (std::log((pi + kLogEps) / (qi + kLogEps)) + pi / (pi + kLogEps));
                }
                if (qn->needs_grad) {
                    qn->grad[i] += -g * pi / (qi + kLogEps);
                }
            }
        });
}

}  // namespace ops
}  // namespace attnd
