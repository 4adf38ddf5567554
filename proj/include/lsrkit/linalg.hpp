#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lsrkit/matrix.hpp"
#include "lsrkit/rng.hpp"

namespace lsrkit {

struct QrFactors {
    Matrix q;  // n x k, orthonormal columns
    Matrix r;  // k x k, upper triangular, non-negative diagonal
};

struct ThinSvd {
    Matrix u;   // rows x k
    Vec sigma;  // k singular values, descending, >= 0
    Matrix v;   // cols x k
};

/// Economy Householder QR of a tall matrix (n >= k). The sign convention is
/// fixed so that diag(R) >= 0, making the factorization deterministic.
inline QrFactors householder_qr(const Matrix& a) {
    const std::size_t n = a.rows(), k = a.cols();
    if (n < k || k == 0) throw DimensionError("householder_qr: need n >= k >= 1");
    if (!a.all_finite()) throw NumericalError("householder_qr: non-finite input");

    Matrix w = a;                       // reduced in place
    std::vector<Vec> reflectors(k);     // v_j, stored below-and-on diagonal
    for (std::size_t j = 0; j < k; ++j) {
        double nrm = 0.0;
        for (std::size_t i = j; i < n; ++i) nrm += w(i, j) * w(i, j);
        nrm = std::sqrt(nrm);
        Vec v(n - j, 0.0);
        if (nrm > 0.0) {
            const double x0 = w(j, j);
            const double alpha = (x0 >= 0.0) ? -nrm : nrm;
            for (std::size_t i = j; i < n; ++i) v[i - j] = w(i, j);
            v[0] -= alpha;
            const double vn = norm2(v);
            if (vn > 0.0) {
                for (double& t : v) t /= vn;
                // apply H = I - 2vv^T to remaining columns
                for (std::size_t c = j; c < k; ++c) {
                    double s = 0.0;
                    for (std::size_t i = j; i < n; ++i) s += v[i - j] * w(i, c);
                    s *= 2.0;
                    for (std::size_t i = j; i < n; ++i) w(i, c) -= s * v[i - j];
                }
            }
        }
        reflectors[j] = std::move(v);
    }

    QrFactors f;
    f.r = Matrix(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i; j < k; ++j) f.r(i, j) = w(i, j);

    // Form Q by applying the reflectors in reverse to the leading k columns of I.
    f.q = Matrix(n, k);
    for (std::size_t j = 0; j < k; ++j) f.q(j, j) = 1.0;
    for (std::size_t j = k; j-- > 0;) {
        const Vec& v = reflectors[j];
        if (v.empty() || norm2(v) == 0.0) continue;
        for (std::size_t c = 0; c < k; ++c) {
            double s = 0.0;
            for (std::size_t i = j; i < n; ++i) s += v[i - j] * f.q(i, c);
            s *= 2.0;
            for (std::size_t i = j; i < n; ++i) f.q(i, c) -= s * v[i - j];
        }
    }

    for (std::size_t i = 0; i < k; ++i) {
        if (f.r(i, i) < 0.0) {
            for (std::size_t j = i; j < k; ++j) f.r(i, j) = -f.r(i, j);
            for (std::size_t rI = 0; rI < n; ++rI) f.q(rI, i) = -f.q(rI, i);
        }
    }
    return f;
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenpairs are
/// returned in descending eigenvalue order.
inline void jacobi_eig_sym(Matrix s, Vec& eigvals, Matrix& eigvecs) {
    const std::size_t n = s.rows();
    if (s.cols() != n) throw DimensionError("jacobi_eig_sym: square input required");
    eigvecs = Matrix::identity(n);
    const double fro = frobenius_norm(s);
    const double tol = 1e-15 * (fro > 0 ? fro : 1.0);

    for (int sweep = 0; sweep < 50; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += s(p, q) * s(p, q);
        if (std::sqrt(2.0 * off) <= tol) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = s(p, q);
                if (std::abs(apq) <= tol * 1e-2) continue;
                const double app = s(p, p), aqq = s(q, q);
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0) ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                              : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double sip = s(i, p), siq = s(i, q);
                    s(i, p) = c * sip - sn * siq;
                    s(i, q) = sn * sip + c * siq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double spi = s(p, i), sqi = s(q, i);
                    s(p, i) = c * spi - sn * sqi;
                    s(q, i) = sn * spi + c * sqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = eigvecs(i, p), viq = eigvecs(i, q);
                    eigvecs(i, p) = c * vip - sn * viq;
                    eigvecs(i, q) = sn * vip + c * viq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Vec diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = s(i, i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return diag[a] > diag[b]; });
    eigvals.resize(n);
    Matrix sorted(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        eigvals[j] = diag[order[j]];
        for (std::size_t i = 0; i < n; ++i) sorted(i, j) = eigvecs(i, order[j]);
    }
    eigvecs = std::move(sorted);
}

/// Singular values of a small dense matrix by one-sided Jacobi. Accurate for
/// ill-conditioned inputs where a Gram-matrix route would lose sigma_min.
inline Vec singular_values_jacobi(const Matrix& a) {
    Matrix w = (a.rows() >= a.cols()) ? a : a.transposed();
    const std::size_t n = w.rows(), k = w.cols();
    const double eps = 1e-15;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < k; ++p) {
            for (std::size_t q = p + 1; q < k; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    app += w(i, p) * w(i, p);
                    aqq += w(i, q) * w(i, q);
                    apq += w(i, p) * w(i, q);
                }
                if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0) ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                              : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double wip = w(i, p), wiq = w(i, q);
                    w(i, p) = c * wip - sn * wiq;
                    w(i, q) = sn * wip + c * wiq;
                }
            }
        }
        if (!rotated) break;
    }
    Vec sig(k);
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += w(i, j) * w(i, j);
        sig[j] = std::sqrt(s);
    }
    std::sort(sig.begin(), sig.end(), std::greater<double>());
    return sig;
}

/// Full thin SVD of a small dense matrix (rows >= cols) by one-sided Jacobi
/// with accumulated right rotations. Unlike a Gram-matrix route, small
/// singular values and their vectors stay accurate to eps * sigma_max.
/// Values below 1e-14 * sigma_max are truncated together with their vectors.
inline ThinSvd jacobi_svd(const Matrix& a) {
    const std::size_t n = a.rows(), k = a.cols();
    if (n < k || k == 0) throw DimensionError("jacobi_svd: need rows >= cols >= 1");
    if (!a.all_finite()) throw NumericalError("jacobi_svd: non-finite input");
    Matrix w = a;
    Matrix v = Matrix::identity(k);
    const double eps = 1e-15;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < k; ++p) {
            for (std::size_t q = p + 1; q < k; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    app += w(i, p) * w(i, p);
                    aqq += w(i, q) * w(i, q);
                    apq += w(i, p) * w(i, q);
                }
                if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0) ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                              : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double wip = w(i, p), wiq = w(i, q);
                    w(i, p) = c * wip - sn * wiq;
                    w(i, q) = sn * wip + c * wiq;
                }
                for (std::size_t i = 0; i < k; ++i) {
                    const double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - sn * viq;
                    v(i, q) = sn * vip + c * viq;
                }
            }
        }
        if (!rotated) break;
    }
    Vec sig(k);
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += w(i, j) * w(i, j);
        sig[j] = std::sqrt(s);
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sig[x] > sig[y]; });
    const double smax = sig[order[0]];
    std::size_t keep = 0;
    while (keep < k && smax > 0.0 && sig[order[keep]] > 1e-14 * smax) ++keep;
    ThinSvd out;
    out.sigma.resize(keep);
    out.u = Matrix(n, keep);
    out.v = Matrix(k, keep);
    for (std::size_t j = 0; j < keep; ++j) {
        const std::size_t c = order[j];
        out.sigma[j] = sig[c];
        for (std::size_t i = 0; i < n; ++i) out.u(i, j) = w(i, c) / sig[c];
        for (std::size_t i = 0; i < k; ++i) out.v(i, j) = v(i, c);
    }
    return out;
}

/// Thin SVD of a matrix with one dimension much smaller than the other,
/// via the Gram matrix of the short dimension. Singular values below
/// 1e-12 * sigma_max are truncated together with their vectors.
inline ThinSvd thin_svd_tall(const Matrix& a) {
    if (a.rows() == 0 || a.cols() == 0) throw DimensionError("thin_svd_tall: empty input");
    if (!a.all_finite()) throw NumericalError("thin_svd_tall: non-finite input");
    const bool transposed = a.rows() > a.cols();
    const Matrix& b = a;  // work with the short dimension as rows
    Matrix s = transposed ? b.transposed() : b;
    const std::size_t n = s.rows(), m = s.cols();  // n <= m

    Matrix gram(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double g = dot(std::span(s.row(i), m), std::span(s.row(j), m));
            gram(i, j) = g;
            gram(j, i) = g;
        }

    Vec eigvals;
    Matrix eigvecs;
    jacobi_eig_sym(std::move(gram), eigvals, eigvecs);

    const double lmax = std::max(eigvals.empty() ? 0.0 : eigvals[0], 0.0);
    const double smax = std::sqrt(lmax);
    // Eigenvalues at the Gram round-off floor are pure noise (the squared
    // singular values lose half the exponent range); drop them along with
    // anything below the relative truncation threshold.
    const double noise_floor = 4.0 * static_cast<double>(n) * std::numeric_limits<double>::epsilon() * lmax;
    std::size_t keep = 0;
    Vec sigma;
    for (std::size_t i = 0; i < n; ++i) {
        const double sv = std::sqrt(std::max(eigvals[i], 0.0));
        if (smax == 0.0 || sv <= 1e-12 * smax || eigvals[i] <= noise_floor) break;
        sigma.push_back(sv);
        ++keep;
    }

    Matrix u(n, keep);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < keep; ++j) u(i, j) = eigvecs(i, j);

    // long-side vectors: V = S^T U Sigma^-1
    Matrix v(m, keep);
    for (std::size_t i = 0; i < n; ++i) {
        const double* si = s.row(i);
        for (std::size_t j = 0; j < keep; ++j) {
            const double w = u(i, j) / sigma[j];
            if (w == 0.0) continue;
            for (std::size_t c = 0; c < m; ++c) v(c, j) += w * si[c];
        }
    }

    ThinSvd out;
    out.sigma = std::move(sigma);
    if (transposed) {
        out.u = std::move(v);
        out.v = std::move(u);
    } else {
        out.u = std::move(u);
        out.v = std::move(v);
    }
    return out;
}

/// Deterministic i.i.d. standard-normal matrix.
inline Matrix gaussian_sketch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    if (rows == 0 || cols == 0) throw DimensionError("gaussian_sketch: need rows, cols >= 1");
    Matrix m(rows, cols);
    GaussianStream g(seed);
    for (double& x : m.data()) x = g.next();
    return m;
}

/// Back-substitution for an upper-triangular system R y = z.
inline Vec solve_triangular(const Matrix& r, const Vec& z) {
    const std::size_t k = r.rows();
    if (r.cols() != k || z.size() != k) throw DimensionError("solve_triangular: shape mismatch");
    double dmax = 0.0;
    for (std::size_t i = 0; i < k; ++i) dmax = std::max(dmax, std::abs(r(i, i)));
    for (std::size_t i = 0; i < k; ++i)
        if (std::abs(r(i, i)) < 1e-14 * dmax || r(i, i) == 0.0)
            throw SingularSystemError(i, "solve_triangular: near-zero diagonal at index " + std::to_string(i));
    Vec y(k);
    for (std::size_t i = k; i-- > 0;) {
        double s = z[i];
        for (std::size_t j = i + 1; j < k; ++j) s -= r(i, j) * y[j];
        y[i] = s / r(i, i);
    }
    return y;
}

/// sigma_max / sigma_min via QR then one-sided Jacobi SVD of the triangular
/// factor. Rank deficiency is encoded as +infinity.
inline double condition_number(const Matrix& a) {
    if (a.cols() == 0) throw DimensionError("condition_number: need at least one column");
    const QrFactors f = householder_qr(a);
    const Vec sig = singular_values_jacobi(f.r);
    const double smax = sig.front(), smin = sig.back();
    // smin at the round-off floor means numerical rank deficiency.
    if (!(smin > 1e-15 * smax) || !std::isfinite(smax / smin))
        return std::numeric_limits<double>::infinity();
    return smax / smin;
}

/// Minimum-residual solution of min ||A x - b||_2 via Householder QR.
inline Vec lstsq_qr(const Matrix& a, const Vec& b) {
    if (a.rows() != b.size()) throw DimensionError("lstsq_qr: shape mismatch");
    const QrFactors f = householder_qr(a);
    return solve_triangular(f.r, matvec_t(f.q, b));
}

}  // namespace lsrkit
