#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "mprlab/errors.hpp"

// Dense linear algebra sized for control problems with a handful of
// states: value-semantic matrices, partial-pivot LU, and a shifted-QR
// eigenvalue solver on the complex Hessenberg form. Nothing here is
// tuned for n beyond ~16 and the eigensolver enforces that bound.

namespace mprlab {

using Cplx = std::complex<double>;

class Mat {
public:
    Mat() : rows_(0), cols_(0) {}
    Mat(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), a_(rows * cols, 0.0) {}

    Mat(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        a_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw StructuralError("linalg: ragged initializer");
            for (double v : r) a_.push_back(v);
        }
    }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Mat column(const std::vector<double>& v) {
        Mat m(v.size(), 1);
        for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
        return m;
    }

    static Mat row(const std::vector<double>& v) {
        Mat m(1, v.size());
        for (std::size_t j = 0; j < v.size(); ++j) m(0, j) = v[j];
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }

    Mat transpose() const {
        Mat t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    Mat operator+(const Mat& o) const {
        check_same_shape(o);
        Mat r = *this;
        for (std::size_t i = 0; i < a_.size(); ++i) r.a_[i] += o.a_[i];
        return r;
    }

    Mat operator-(const Mat& o) const {
        check_same_shape(o);
        Mat r = *this;
        for (std::size_t i = 0; i < a_.size(); ++i) r.a_[i] -= o.a_[i];
        return r;
    }

    Mat operator-() const {
        Mat r = *this;
        for (auto& v : r.a_) v = -v;
        return r;
    }

    Mat operator*(double s) const {
        Mat r = *this;
        for (auto& v : r.a_) v *= s;
        return r;
    }

    Mat operator*(const Mat& o) const {
        if (cols_ != o.rows_) throw StructuralError("linalg: product shape mismatch");
        Mat r(rows_, o.cols_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t l = 0; l < cols_; ++l) {
                const double v = (*this)(i, l);
                if (v == 0.0) continue;
                for (std::size_t j = 0; j < o.cols_; ++j) r(i, j) += v * o(l, j);
            }
        return r;
    }

    std::vector<double> operator*(const std::vector<double>& v) const {
        if (cols_ != v.size()) throw StructuralError("linalg: matvec shape mismatch");
        std::vector<double> r(rows_, 0.0);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) r[i] += (*this)(i, j) * v[j];
        return r;
    }

    double frobenius_norm() const {
        double s = 0.0;
        for (double v : a_) s += v * v;
        return std::sqrt(s);
    }

    double max_abs() const {
        double s = 0.0;
        for (double v : a_) s = std::max(s, std::fabs(v));
        return s;
    }

    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    void check_same_shape(const Mat& o) const {
        if (!same_shape(o)) throw StructuralError("linalg: shape mismatch");
    }

    std::size_t rows_, cols_;
    std::vector<double> a_;
};

inline Mat operator*(double s, const Mat& m) { return m * s; }

// ---------------------------------------------------------------------------
// LU with partial pivoting
// ---------------------------------------------------------------------------

class Lu {
public:
    explicit Lu(const Mat& m) : lu_(m), perm_(m.rows()), sign_(1) {
        if (m.rows() != m.cols()) throw StructuralError("linalg: LU needs a square matrix");
        const std::size_t n = m.rows();
        for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
        min_pivot_ = 0.0;
        max_pivot_ = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            std::size_t p = c;
            for (std::size_t i = c + 1; i < n; ++i)
                if (std::fabs(lu_(i, c)) > std::fabs(lu_(p, c))) p = i;
            if (p != c) {
                for (std::size_t j = 0; j < n; ++j) std::swap(lu_(p, j), lu_(c, j));
                std::swap(perm_[p], perm_[c]);
                sign_ = -sign_;
            }
            const double piv = std::fabs(lu_(c, c));
            if (c == 0 || piv < min_pivot_) min_pivot_ = piv;
            if (piv > max_pivot_) max_pivot_ = piv;
            if (piv == 0.0) continue; // singular column; solve() will reject
            for (std::size_t i = c + 1; i < n; ++i) {
                lu_(i, c) /= lu_(c, c);
                const double f = lu_(i, c);
                if (f == 0.0) continue;
                for (std::size_t j = c + 1; j < n; ++j) lu_(i, j) -= f * lu_(c, j);
            }
        }
    }

    bool singular(double rel_tol = 1e-13) const {
        return min_pivot_ <= rel_tol * std::max(1.0, max_pivot_);
    }

    double min_pivot() const { return min_pivot_; }
    double max_pivot() const { return max_pivot_; }

    double det() const {
        double d = sign_;
        for (std::size_t i = 0; i < lu_.rows(); ++i) d *= lu_(i, i);
        return d;
    }

    std::vector<double> solve(const std::vector<double>& b) const {
        const std::size_t n = lu_.rows();
        if (b.size() != n) throw StructuralError("linalg: rhs size mismatch");
        if (min_pivot_ == 0.0) throw NumericError("linalg: singular system in LU solve");
        std::vector<double> x(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = b[perm_[i]];
        for (std::size_t i = 1; i < n; ++i)
            for (std::size_t j = 0; j < i; ++j) x[i] -= lu_(i, j) * x[j];
        for (std::size_t ii = n; ii-- > 0;) {
            for (std::size_t j = ii + 1; j < n; ++j) x[ii] -= lu_(ii, j) * x[j];
            x[ii] /= lu_(ii, ii);
        }
        return x;
    }

    Mat solve(const Mat& b) const {
        if (b.rows() != lu_.rows()) throw StructuralError("linalg: rhs shape mismatch");
        Mat x(b.rows(), b.cols());
        std::vector<double> col(b.rows());
        for (std::size_t j = 0; j < b.cols(); ++j) {
            for (std::size_t i = 0; i < b.rows(); ++i) col[i] = b(i, j);
            auto s = solve(col);
            for (std::size_t i = 0; i < b.rows(); ++i) x(i, j) = s[i];
        }
        return x;
    }

private:
    Mat lu_;
    std::vector<std::size_t> perm_;
    int sign_;
    double min_pivot_, max_pivot_;
};

inline Mat inverse(const Mat& m) { return Lu(m).solve(Mat::identity(m.rows())); }

inline double norm1(const Mat& m) {
    double best = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) s += std::fabs(m(i, j));
        best = std::max(best, s);
    }
    return best;
}

// 1-norm condition number via the explicit inverse; exact enough at these sizes.
inline double cond1(const Mat& m) {
    Lu lu(m);
    if (lu.singular()) return std::numeric_limits<double>::infinity();
    return norm1(m) * norm1(lu.solve(Mat::identity(m.rows())));
}

// ---------------------------------------------------------------------------
// Eigenvalues: complex Hessenberg reduction + Wilkinson-shifted QR
// ---------------------------------------------------------------------------

namespace detail {

using CMat = std::vector<std::vector<Cplx>>;

inline void hessenberg_reduce(CMat& h) {
    const std::size_t n = h.size();
    for (std::size_t c = 0; c + 2 < n; ++c) {
        // Householder vector for column c below the subdiagonal
        double norm2 = 0.0;
        for (std::size_t i = c + 1; i < n; ++i) norm2 += std::norm(h[i][c]);
        if (norm2 <= 0.0) continue;
        const double norm = std::sqrt(norm2);
        Cplx x0 = h[c + 1][c];
        Cplx phase = (std::abs(x0) > 0.0) ? x0 / std::abs(x0) : Cplx(1.0, 0.0);
        std::vector<Cplx> v(n, Cplx(0.0, 0.0));
        for (std::size_t i = c + 1; i < n; ++i) v[i] = h[i][c];
        v[c + 1] += phase * norm;
        double vnorm2 = 0.0;
        for (std::size_t i = c + 1; i < n; ++i) vnorm2 += std::norm(v[i]);
        if (vnorm2 <= 0.0) continue;
        const double beta = 2.0 / vnorm2;
        // H <- (I - beta v v*) H
        for (std::size_t j = c; j < n; ++j) {
            Cplx dot(0.0, 0.0);
            for (std::size_t i = c + 1; i < n; ++i) dot += std::conj(v[i]) * h[i][j];
            dot *= beta;
            for (std::size_t i = c + 1; i < n; ++i) h[i][j] -= dot * v[i];
        }
        // H <- H (I - beta v v*)
        for (std::size_t i = 0; i < n; ++i) {
            Cplx dot(0.0, 0.0);
            for (std::size_t j = c + 1; j < n; ++j) dot += h[i][j] * v[j];
            dot *= beta;
            for (std::size_t j = c + 1; j < n; ++j) h[i][j] -= dot * std::conj(v[j]);
        }
    }
}

// rotation [c s; -conj(s) c] with real c >= 0 zeroing b in [a; b]
inline void make_givens(Cplx a, Cplx b, double& c, Cplx& s) {
    const double absa = std::abs(a);
    const double absb = std::abs(b);
    if (absb == 0.0) {
        c = 1.0;
        s = Cplx(0.0, 0.0);
        return;
    }
    if (absa == 0.0) {
        c = 0.0;
        s = std::conj(b) / absb;
        return;
    }
    const double r = std::hypot(absa, absb);
    c = absa / r;
    s = (a / absa) * std::conj(b) / r;
}

inline std::pair<Cplx, Cplx> eig2(Cplx a, Cplx b, Cplx c, Cplx d) {
    const Cplx tr = a + d;
    const Cplx det = a * d - b * c;
    const Cplx disc = std::sqrt(tr * tr - 4.0 * det);
    return {0.5 * (tr + disc), 0.5 * (tr - disc)};
}

} // namespace detail

// All eigenvalues of a real square matrix (size <= 16). The returned list
// is sorted by (real, imag) for reproducibility. Throws NumericError when
// the QR iteration stalls.
inline std::vector<Cplx> eigenvalues(const Mat& m) {
    if (m.rows() != m.cols()) throw StructuralError("linalg: eigenvalues need a square matrix");
    const std::size_t n = m.rows();
    if (n > 16) throw StructuralError("linalg: eigensolver limited to size 16");
    std::vector<Cplx> out;
    if (n == 0) return out;

    detail::CMat h(n, std::vector<Cplx>(n));
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            h[i][j] = Cplx(m(i, j), 0.0);
            scale = std::max(scale, std::fabs(m(i, j)));
        }
    if (scale == 0.0) return std::vector<Cplx>(n, Cplx(0.0, 0.0)); // zero matrix

    detail::hessenberg_reduce(h);

    const double eps = 1e-15;
    std::size_t hi = n - 1;
    int iters_left = 100 * static_cast<int>(n);
    while (true) {
        // deflate trailing converged entries
        while (hi > 0) {
            const double sub = std::abs(h[hi][hi - 1]);
            const double diag = std::abs(h[hi - 1][hi - 1]) + std::abs(h[hi][hi]);
            if (sub <= eps * std::max(diag, scale * 1e-3)) {
                out.push_back(h[hi][hi]);
                --hi;
            } else {
                break;
            }
        }
        if (hi == 0) {
            out.push_back(h[0][0]);
            break;
        }
        // find the start of the active unreduced block [lo..hi]
        std::size_t lo = hi;
        while (lo > 0) {
            const double sub = std::abs(h[lo][lo - 1]);
            const double diag = std::abs(h[lo - 1][lo - 1]) + std::abs(h[lo][lo]);
            if (sub <= eps * std::max(diag, scale * 1e-3)) break;
            --lo;
        }
        if (hi - lo == 1) { // 2x2 block: closed form, deflate both
            auto [l1, l2] = detail::eig2(h[lo][lo], h[lo][hi], h[hi][lo], h[hi][hi]);
            out.push_back(l1);
            out.push_back(l2);
            if (lo == 0) break;
            hi = lo - 1;
            continue;
        }
        if (--iters_left < 0) throw NumericError("linalg: QR eigenvalue iteration did not converge");

        // Wilkinson shift: eigenvalue of the trailing 2x2 nearest h[hi][hi]
        auto [m1, m2] = detail::eig2(h[hi - 1][hi - 1], h[hi - 1][hi], h[hi][hi - 1], h[hi][hi]);
        Cplx mu = (std::abs(m1 - h[hi][hi]) < std::abs(m2 - h[hi][hi])) ? m1 : m2;

        // explicit shifted QR sweep on the active block
        for (std::size_t i = lo; i <= hi; ++i) h[i][i] -= mu;
        std::vector<double> cs(hi - lo);
        std::vector<Cplx> sn(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
            double c;
            Cplx s;
            detail::make_givens(h[i][i], h[i + 1][i], c, s);
            cs[i - lo] = c;
            sn[i - lo] = s;
            for (std::size_t j = i; j <= hi; ++j) {
                const Cplx t1 = h[i][j], t2 = h[i + 1][j];
                h[i][j] = c * t1 + s * t2;
                h[i + 1][j] = -std::conj(s) * t1 + c * t2;
            }
        }
        for (std::size_t i = lo; i < hi; ++i) { // H <- R Q*: apply on columns
            const double c = cs[i - lo];
            const Cplx s = sn[i - lo];
            const std::size_t top = lo;
            for (std::size_t rr = top; rr <= std::min(i + 2, hi); ++rr) {
                const Cplx t1 = h[rr][i], t2 = h[rr][i + 1];
                h[rr][i] = c * t1 + std::conj(s) * t2;
                h[rr][i + 1] = -s * t1 + c * t2;
            }
        }
        for (std::size_t i = lo; i <= hi; ++i) h[i][i] += mu;
    }

    std::sort(out.begin(), out.end(), [](const Cplx& a, const Cplx& b) {
        if (a.real() != b.real()) return a.real() < b.real();
        return a.imag() < b.imag();
    });
    return out;
}

// |det(A - lambda I)| normalized by max(1, ||A||_F)^n; used to certify
// computed eigenvalues.
inline double eig_residual(const Mat& m, Cplx lambda) {
    const std::size_t n = m.rows();
    detail::CMat a(n, std::vector<Cplx>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a[i][j] = Cplx(m(i, j), 0.0) - (i == j ? lambda : Cplx(0.0, 0.0));
    Cplx det(1.0, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t i = c + 1; i < n; ++i)
            if (std::abs(a[i][c]) > std::abs(a[p][c])) p = i;
        if (p != c) {
            std::swap(a[p], a[c]);
            det = -det;
        }
        det *= a[c][c];
        if (std::abs(a[c][c]) == 0.0) return 0.0; // exactly singular: residual 0
        for (std::size_t i = c + 1; i < n; ++i) {
            const Cplx f = a[i][c] / a[c][c];
            for (std::size_t j = c + 1; j < n; ++j) a[i][j] -= f * a[c][j];
        }
    }
    const double denom = std::pow(std::max(1.0, m.frobenius_norm()), static_cast<double>(n));
    return std::abs(det) / denom;
}

// Rank of a complex matrix by row echelon with partial pivoting.
inline std::size_t rank_complex(std::vector<std::vector<Cplx>> a, double rel_tol = 1e-9) {
    if (a.empty()) return 0;
    const std::size_t rows = a.size(), cols = a[0].size();
    double scale = 0.0;
    for (const auto& r : a)
        for (const auto& v : r) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) return 0;
    const double tol = rel_tol * scale;
    std::size_t rank = 0;
    for (std::size_t c = 0; c < cols && rank < rows; ++c) {
        std::size_t p = rank;
        for (std::size_t i = rank + 1; i < rows; ++i)
            if (std::abs(a[i][c]) > std::abs(a[p][c])) p = i;
        if (std::abs(a[p][c]) <= tol) continue;
        std::swap(a[p], a[rank]);
        for (std::size_t i = rank + 1; i < rows; ++i) {
            const Cplx f = a[i][c] / a[rank][c];
            for (std::size_t j = c; j < cols; ++j) a[i][j] -= f * a[rank][j];
        }
        ++rank;
    }
    return rank;
}

} // namespace mprlab
