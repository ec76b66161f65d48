#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "skipt/array.hpp"

// Forward/backward kernels for the primitive operations. All kernels are
// float64 and allocation-light; backward kernels accumulate (+=) into the
// destination gradient so a value consumed twice sums its contributions.
namespace skipt::ops {

inline constexpr double kLayerNormEps = 1e-5;

// tanh-form GELU; constants fixed so an independent scalar oracle can match.
inline constexpr double kGeluC0 = 0.7978845608;
inline constexpr double kGeluC1 = 0.044715;

// ---------------------------------------------------------------------------
// matmul: C(m,n) = A(m,k) * B(k,n)

inline Array matmul(const Array& a, const Array& b) {
    std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw std::invalid_argument("matmul: inner dims " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Array c = Array::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &a.data[i * k];
        double* crow = &c.data[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            double av = arow[p];
            const double* brow = &b.data[p * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

inline void matmul_grad_a(const Array& dc, const Array& b, Array& da) {
    // dA += dC * B^T
    std::size_t m = dc.rows(), n = dc.cols(), k = b.rows();
    for (std::size_t i = 0; i < m; ++i) {
        const double* dcrow = &dc.data[i * n];
        double* darow = &da.data[i * k];
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = &b.data[p * n];
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
            darow[p] += s;
        }
    }
}

inline void matmul_grad_b(const Array& a, const Array& dc, Array& db) {
    // dB += A^T * dC
    std::size_t m = a.rows(), k = a.cols(), n = dc.cols();
    for (std::size_t p = 0; p < k; ++p) {
        double* dbrow = &db.data[p * n];
        for (std::size_t i = 0; i < m; ++i) {
            double av = a.data[i * k + p];
            const double* dcrow = &dc.data[i * n];
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
        }
    }
}

// matmul_nt: C(m,n) = A(m,k) * B(n,k)^T

inline Array matmul_nt(const Array& a, const Array& b) {
    std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (k != b.cols())
        throw std::invalid_argument("matmul_nt: inner dims " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Array c = Array::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &a.data[i * k];
        double* crow = &c.data[i * n];
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = &b.data[j * k];
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
    return c;
}

inline void matmul_nt_grad_a(const Array& dc, const Array& b, Array& da) {
    // dA += dC * B
    std::size_t m = dc.rows(), n = dc.cols(), k = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const double* dcrow = &dc.data[i * n];
        double* darow = &da.data[i * k];
        for (std::size_t j = 0; j < n; ++j) {
            double dv = dcrow[j];
            const double* brow = &b.data[j * k];
            for (std::size_t p = 0; p < k; ++p) darow[p] += dv * brow[p];
        }
    }
}

inline void matmul_nt_grad_b(const Array& a, const Array& dc, Array& db) {
    // dB += dC^T * A
    std::size_t m = a.rows(), k = a.cols(), n = dc.cols();
    for (std::size_t j = 0; j < n; ++j) {
        double* dbrow = &db.data[j * k];
        for (std::size_t i = 0; i < m; ++i) {
            double dv = dc.data[i * n + j];
            const double* arow = &a.data[i * k];
            for (std::size_t p = 0; p < k; ++p) dbrow[p] += dv * arow[p];
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise

inline Array add(const Array& a, const Array& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("add: shape " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Array c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline Array add_rowvec(const Array& a, const Array& v) {
    if (v.rank() != 1 || v.shape[0] != a.cols())
        throw std::invalid_argument("add_rowvec: " + shape_str(a.shape) + " + " + shape_str(v.shape));
    Array c = a;
    std::size_t m = a.rows(), n = a.cols();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c.data[i * n + j] += v.data[j];
    return c;
}

inline void add_rowvec_grad_v(const Array& dc, Array& dv) {
    std::size_t m = dc.rows(), n = dc.cols();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dv.data[j] += dc.data[i * n + j];
}

inline Array scale(const Array& a, double c) {
    Array out = a;
    for (double& v : out.data) v *= c;
    return out;
}

inline Array exp_elem(const Array& a) {
    Array out = a;
    for (double& v : out.data) v = std::exp(v);
    return out;
}

inline Array log_elem(const Array& a) {
    Array out = a;
    for (double& v : out.data) v = std::log(v);
    return out;
}

inline double gelu_scalar(double x) {
    double inner = kGeluC0 * (x + kGeluC1 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(inner));
}

inline double gelu_grad_scalar(double x) {
    double inner = kGeluC0 * (x + kGeluC1 * x * x * x);
    double t = std::tanh(inner);
    double dinner = kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

inline Array gelu(const Array& a) {
    Array out = a;
    for (double& v : out.data) v = gelu_scalar(v);
    return out;
}

// ---------------------------------------------------------------------------
// layer norm over the last dimension, with learnable scale/shift.
// aux stores (mean, rstd) per row for the backward pass.

inline Array layernorm(const Array& x, const Array& gamma, const Array& beta, Array& aux) {
    std::size_t m = x.rows(), n = x.cols();
    if (gamma.size() != n || beta.size() != n)
        throw std::invalid_argument("layernorm: scale/shift width " + std::to_string(gamma.size()) +
                                    " vs feature width " + std::to_string(n));
    Array out = x;
    aux = Array::zeros({m, 2});
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = &x.data[i * n];
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        double* orow = &out.data[i * n];
        for (std::size_t j = 0; j < n; ++j)
            orow[j] = (row[j] - mean) * rstd * gamma.data[j] + beta.data[j];
        aux.data[i * 2] = mean;
        aux.data[i * 2 + 1] = rstd;
    }
    return out;
}

inline void layernorm_grad(const Array& dout, const Array& x, const Array& gamma, const Array& aux,
                           Array* dx, Array* dgamma, Array* dbeta) {
    std::size_t m = x.rows(), n = x.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const double* xrow = &x.data[i * n];
        const double* drow = &dout.data[i * n];
        double mean = aux.data[i * 2];
        double rstd = aux.data[i * 2 + 1];

        double dnorm_mean = 0.0, dnorm_norm_mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double norm = (xrow[j] - mean) * rstd;
            double dnorm = gamma.data[j] * drow[j];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= static_cast<double>(n);
        dnorm_norm_mean /= static_cast<double>(n);

        for (std::size_t j = 0; j < n; ++j) {
            double norm = (xrow[j] - mean) * rstd;
            if (dbeta) dbeta->data[j] += drow[j];
            if (dgamma) dgamma->data[j] += norm * drow[j];
            if (dx) {
                double dnorm = gamma.data[j] * drow[j];
                dx->data[i * n + j] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rstd;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// softmax over the last dimension, max-subtracted for stability

inline Array softmax(const Array& x) {
    std::size_t m = x.rows(), n = x.cols();
    Array out = x;
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = &x.data[i * n];
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        double* orow = &out.data[i * n];
        for (std::size_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (std::size_t j = 0; j < n; ++j) orow[j] /= sum;
    }
    return out;
}

inline void softmax_grad(const Array& dout, const Array& y, Array& dx) {
    std::size_t m = y.rows(), n = y.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const double* yrow = &y.data[i * n];
        const double* drow = &dout.data[i * n];
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += drow[j] * yrow[j];
        for (std::size_t j = 0; j < n; ++j) dx.data[i * n + j] += (drow[j] - dot) * yrow[j];
    }
}

// ---------------------------------------------------------------------------
// embedding lookup: rows of table indexed by ids

inline Array embed(const Array& table, const std::vector<std::int64_t>& ids) {
    std::size_t n = table.cols();
    Array out = Array::zeros({ids.size(), n});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
            throw std::out_of_range("embed: id " + std::to_string(id) + " outside table with " +
                                    std::to_string(table.rows()) + " rows");
        std::copy_n(&table.data[static_cast<std::size_t>(id) * n], n, &out.data[i * n]);
    }
    return out;
}

inline void embed_grad(const Array& dout, const std::vector<std::int64_t>& ids, Array& dtable) {
    std::size_t n = dtable.cols();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        double* trow = &dtable.data[static_cast<std::size_t>(ids[i]) * n];
        const double* drow = &dout.data[i * n];
        for (std::size_t j = 0; j < n; ++j) trow[j] += drow[j];
    }
}

// ---------------------------------------------------------------------------
// L2 normalization of a vector (rank-1)

inline Array l2_normalize(const Array& x, const std::string& who) {
    double norm = l2_norm(x);
    if (norm == 0.0) throw std::domain_error(who + ": cannot normalize a zero-norm vector");
    return scale(x, 1.0 / norm);
}

inline void l2_normalize_grad(const Array& dout, const Array& x, Array& dx) {
    double norm = l2_norm(x);
    double inv = 1.0 / norm;
    double dot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) dot += dout.data[i] * x.data[i] * inv;
    for (std::size_t i = 0; i < x.size(); ++i)
        dx.data[i] += (dout.data[i] - dot * x.data[i] * inv) * inv;
}

// ---------------------------------------------------------------------------
// cosine similarity of two vectors

inline double cosine(const Array& u, const Array& v) {
    if (u.size() != v.size())
        throw std::invalid_argument("cosine: length " + std::to_string(u.size()) + " vs " +
                                    std::to_string(v.size()));
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u.data[i] * v.data[i];
        nu += u.data[i] * u.data[i];
        nv += v.data[i] * v.data[i];
    }
    double den = std::sqrt(nu) * std::sqrt(nv);
    if (den == 0.0) throw std::domain_error("cosine: zero-norm input");
    return dot / den;
}

inline void cosine_grad(double dout, const Array& u, const Array& v, Array* du, Array* dv) {
    double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u.data[i] * v.data[i];
        nu2 += u.data[i] * u.data[i];
        nv2 += v.data[i] * v.data[i];
    }
    double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
    double c = dot / (nu * nv);
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (du) du->data[i] += dout * (v.data[i] / (nu * nv) - c * u.data[i] / nu2);
        if (dv) dv->data[i] += dout * (u.data[i] / (nu * nv) - c * v.data[i] / nv2);
    }
}

// ---------------------------------------------------------------------------
// cross entropy on logits: log-sum-exp(z) - z[label]

inline double cross_entropy_logits(const Array& z, std::size_t label) {
    if (label >= z.size())
        throw std::out_of_range("cross_entropy_logits: label " + std::to_string(label) +
                                " outside " + std::to_string(z.size()) + " logits");
    double mx = z.data[0];
    for (double v : z.data) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : z.data) sum += std::exp(v - mx);
    return mx + std::log(sum) - z.data[label];
}

inline void cross_entropy_logits_grad(double dout, const Array& z, std::size_t label, Array& dz) {
    Array p = softmax(z);
    for (std::size_t i = 0; i < z.size(); ++i)
        dz.data[i] += dout * (p.data[i] - (i == label ? 1.0 : 0.0));
}

}  // namespace skipt::ops
