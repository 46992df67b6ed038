#include "gcalc/gtensor.hpp"

#include "gcalc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace gcalc {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

std::string shape(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

} // namespace

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major,
               Structure structure)
    : rows_(rows), cols_(cols), data_(std::move(row_major)), structure_(structure) {
    require(data_.size() == rows_ * cols_, "matrix data size does not match " +
                                               std::to_string(rows_) + "x" + std::to_string(cols_));
    if (structure_ == Structure::Symmetric && !is_symmetric())
        throw InputError("matrix declared symmetric is not symmetric");
    if (structure_ == Structure::Diagonal && !is_diagonal())
        throw InputError("matrix declared diagonal has off-diagonal entries");
}

Matrix Matrix::identity(std::size_t d) {
    Matrix m(d, d);
    for (std::size_t i = 0; i < d; ++i) m(i, i) = 1.0;
    m.structure_ = Structure::Diagonal;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    m.structure_ = Structure::Diagonal;
    return m;
}

bool Matrix::is_symmetric(double tol) const {
    if (rows_ != cols_) return false;
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = i + 1; j < cols_; ++j)
            if (std::abs((*this)(i, j) - (*this)(j, i)) > tol) return false;
    return true;
}

bool Matrix::is_diagonal(double tol) const {
    if (rows_ != cols_) return false;
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j)
            if (i != j && std::abs((*this)(i, j)) > tol) return false;
    return true;
}

std::vector<double> Matrix::diag() const {
    std::vector<double> out(std::min(rows_, cols_));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*this)(i, i);
    return out;
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    t.structure_ = structure_;
    return t;
}

double Matrix::norm() const { return std::sqrt(colon_product(*this, *this)); }

Matrix Matrix::operator+(const Matrix& other) const {
    require(rows_ == other.rows_ && cols_ == other.cols_,
            "matrix sum of " + shape(*this) + " and " + shape(other));
    Matrix out(rows_, cols_);
    for (std::size_t k = 0; k < data_.size(); ++k) out.data_[k] = data_[k] + other.data_[k];
    return out;
}

Matrix Matrix::operator-(const Matrix& other) const { return *this + other * -1.0; }

Matrix Matrix::operator*(double s) const {
    Matrix out = *this;
    for (double& v : out.data_) v *= s;
    return out;
}

Matrix Matrix::matmul(const Matrix& other) const {
    require(cols_ == other.rows_, "matrix product of " + shape(*this) + " and " + shape(other));
    Matrix out(rows_, other.cols_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t k = 0; k < cols_; ++k) {
            const double a = (*this)(i, k);
            if (a == 0.0) continue;
            for (std::size_t j = 0; j < other.cols_; ++j) out(i, j) += a * other(k, j);
        }
    return out;
}

// ---------------------------------------------------------------------------
// DiagTensor

DiagTensor::DiagTensor(std::size_t n, std::size_t d) : n_(n), d_(d), entries_(n * d, 0.0) {}

DiagTensor::DiagTensor(std::size_t n, std::size_t d, std::vector<double> entries)
    : n_(n), d_(d), entries_(std::move(entries)) {
    require(entries_.size() == n_ * d_, "diag tensor needs n*d entries");
    for (double v : entries_)
        if (!std::isfinite(v)) throw InputError("diag tensor entry is not finite");
}

DiagTensor DiagTensor::from_blocks(const std::vector<Matrix>& blocks) {
    if (blocks.empty()) return {};
    const std::size_t d = blocks.front().rows();
    DiagTensor out(blocks.size(), d);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        require(blocks[i].rows() == d && blocks[i].cols() == d, "blocks must all be d x d");
        if (!blocks[i].is_diagonal()) throw InputError("diag tensor block is not diagonal");
        for (std::size_t j = 0; j < d; ++j) out.entry(i, j) = blocks[i](j, j);
    }
    return out;
}

Matrix DiagTensor::block(std::size_t i) const { return Matrix::diagonal(block_diag(i)); }

double DiagTensor::norm() const {
    double s = 0.0;
    for (double v : entries_) s += v * v;
    return std::sqrt(s);
}

DiagTensor DiagTensor::operator+(const DiagTensor& other) const {
    require(n_ == other.n_ && d_ == other.d_, "diag tensor shapes differ");
    DiagTensor out(n_, d_);
    for (std::size_t k = 0; k < entries_.size(); ++k)
        out.entries_[k] = entries_[k] + other.entries_[k];
    return out;
}

DiagTensor DiagTensor::operator-(const DiagTensor& other) const { return *this + other * -1.0; }

DiagTensor DiagTensor::operator*(double s) const {
    DiagTensor out = *this;
    for (double& v : out.entries_) v *= s;
    return out;
}

// ---------------------------------------------------------------------------
// VolatilityBox

VolatilityBox::VolatilityBox(std::vector<double> lower, std::vector<double> upper,
                             std::size_t grid_points_per_axis)
    : lower_(std::move(lower)), upper_(std::move(upper)), points_(grid_points_per_axis) {
    require(!lower_.empty() && lower_.size() == upper_.size(),
            "volatility box bounds must have equal nonzero length");
    for (std::size_t i = 0; i < lower_.size(); ++i) {
        if (!(lower_[i] > 0.0) || !std::isfinite(upper_[i]) || lower_[i] > upper_[i])
            throw InputError("volatility box needs 0 < lower <= upper on axis " +
                             std::to_string(i));
    }
    if (points_ < 2 && !is_degenerate())
        throw InputError("scenario grid needs at least 2 points per axis to hold both corners");
    if (points_ < 1) throw InputError("scenario grid needs at least one point");
}

double VolatilityBox::lower_min() const { return *std::min_element(lower_.begin(), lower_.end()); }

double VolatilityBox::upper_max() const { return *std::max_element(upper_.begin(), upper_.end()); }

bool VolatilityBox::is_degenerate() const {
    for (std::size_t i = 0; i < lower_.size(); ++i)
        if (lower_[i] != upper_[i]) return false;
    return true;
}

bool VolatilityBox::contains(std::span<const double> sigma2, double tol) const {
    if (sigma2.size() != d()) return false;
    for (std::size_t i = 0; i < d(); ++i)
        if (sigma2[i] < lower_[i] - tol || sigma2[i] > upper_[i] + tol) return false;
    return true;
}

std::vector<double> VolatilityBox::axis_grid(std::size_t j) const {
    if (lower_[j] == upper_[j] || points_ == 1) return {lower_[j]};
    std::vector<double> g(points_);
    for (std::size_t i = 0; i < points_; ++i)
        g[i] = lower_[j] + (upper_[j] - lower_[j]) * static_cast<double>(i) /
                               static_cast<double>(points_ - 1);
    g.back() = upper_[j];
    return g;
}

std::size_t VolatilityBox::scenario_count() const {
    std::size_t c = 1;
    for (std::size_t j = 0; j < d(); ++j) c *= axis_grid(j).size();
    return c;
}

std::vector<double> VolatilityBox::scenario(std::size_t s) const {
    std::vector<double> out(d());
    for (std::size_t j = d(); j-- > 0;) {
        const auto g = axis_grid(j);
        out[j] = g[s % g.size()];
        s /= g.size();
    }
    return out;
}

// ---------------------------------------------------------------------------
// CorrelationSpec

namespace {

// Gauss-Jordan inverse with partial pivoting; empty result when singular.
std::vector<double> invert(const Matrix& m) {
    const std::size_t d = m.rows();
    std::vector<double> a(m.data().begin(), m.data().end());
    std::vector<double> inv(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) inv[i * d + i] = 1.0;
    for (std::size_t c = 0; c < d; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < d; ++r)
            if (std::abs(a[r * d + c]) > std::abs(a[piv * d + c])) piv = r;
        if (a[piv * d + c] == 0.0) return {};
        if (piv != c)
            for (std::size_t k = 0; k < d; ++k) {
                std::swap(a[c * d + k], a[piv * d + k]);
                std::swap(inv[c * d + k], inv[piv * d + k]);
            }
        const double p = a[c * d + c];
        for (std::size_t k = 0; k < d; ++k) {
            a[c * d + k] /= p;
            inv[c * d + k] /= p;
        }
        for (std::size_t r = 0; r < d; ++r) {
            if (r == c) continue;
            const double f = a[r * d + c];
            if (f == 0.0) continue;
            for (std::size_t k = 0; k < d; ++k) {
                a[r * d + k] -= f * a[c * d + k];
                inv[r * d + k] -= f * inv[c * d + k];
            }
        }
    }
    return inv;
}

} // namespace

CorrelationSpec::CorrelationSpec(Matrix transform, VolatilityBox box)
    : transform_(std::move(transform)), box_(std::move(box)) {
    require(transform_.rows() == transform_.cols() && transform_.rows() == box_.d(),
            "correlation transform must be d x d with d = box dimension");
    const auto inv = invert(transform_);
    if (inv.empty()) throw InputError("correlation transform is singular");
    double inv_norm = 0.0;
    for (double v : inv) inv_norm += v * v;
    const double cond = transform_.norm() * std::sqrt(inv_norm);
    if (!(cond < kMaxCondition))
        throw InputError("correlation transform is ill-conditioned (cond " + std::to_string(cond) +
                         ")");
}

// ---------------------------------------------------------------------------
// Operations

double colon_product(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(),
            "colon product of " + shape(a) + " and " + shape(b));
    double s = 0.0;
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * y[k];
    return s;
}

std::vector<double> tensor_contract(const DiagTensor& eta, const Matrix& gamma) {
    require(gamma.rows() == eta.d() && gamma.cols() == eta.d(),
            "tensor contraction needs a " + std::to_string(eta.d()) + "x" +
                std::to_string(eta.d()) + " matrix, got " + shape(gamma));
    std::vector<double> out(eta.n(), 0.0);
    for (std::size_t i = 0; i < eta.n(); ++i)
        for (std::size_t j = 0; j < eta.d(); ++j) out[i] += eta.entry(i, j) * gamma(j, j);
    return out;
}

Matrix tensor_dot(const DiagTensor& eta, const DiagTensor& theta) {
    require(eta.n() == theta.n() && eta.d() == theta.d(), "tensor dot needs equal shapes");
    std::vector<double> diag(eta.d(), 0.0);
    for (std::size_t i = 0; i < eta.n(); ++i)
        for (std::size_t j = 0; j < eta.d(); ++j) diag[j] += eta.entry(i, j) * theta.entry(i, j);
    return Matrix::diagonal(diag);
}

Matrix tensor_dot(std::span<const double> xi, const DiagTensor& eta) {
    require(xi.size() == eta.n(), "vector length must equal tensor block count");
    std::vector<double> diag(eta.d(), 0.0);
    for (std::size_t i = 0; i < eta.n(); ++i)
        for (std::size_t j = 0; j < eta.d(); ++j) diag[j] += xi[i] * eta.entry(i, j);
    return Matrix::diagonal(diag);
}

double tensor_dot(std::span<const double> xi, const DiagTensor& eta, const Matrix& gamma) {
    require(xi.size() == eta.n(), "vector length must equal tensor block count");
    const auto c = tensor_contract(eta, gamma);
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) s += xi[i] * c[i];
    return s;
}

std::pair<DiagTensor, DiagTensor> pos_neg_split(const DiagTensor& eta) {
    DiagTensor pos(eta.n(), eta.d());
    DiagTensor neg(eta.n(), eta.d());
    for (std::size_t i = 0; i < eta.n(); ++i)
        for (std::size_t j = 0; j < eta.d(); ++j) {
            const double v = eta.entry(i, j);
            pos.entry(i, j) = std::max(v, 0.0);
            neg.entry(i, j) = std::max(-v, 0.0);
        }
    return {pos, neg};
}

double g_block(std::span<const double> diag, std::span<const double> lower,
               std::span<const double> upper) {
    double s = 0.0;
    for (std::size_t j = 0; j < diag.size(); ++j)
        s += diag[j] > 0.0 ? upper[j] * diag[j] : lower[j] * diag[j];
    return 0.5 * s;
}

std::vector<double> g_diag(const DiagTensor& eta, const VolatilityBox& box) {
    require(eta.d() == box.d(), "tensor dimension " + std::to_string(eta.d()) +
                                    " does not match box dimension " + std::to_string(box.d()));
    std::vector<double> out(eta.n());
    for (std::size_t i = 0; i < eta.n(); ++i)
        out[i] = g_block(eta.block_diag(i), box.lower(), box.upper());
    return out;
}

std::vector<double> g_argmax(std::span<const double> diag, const VolatilityBox& box) {
    require(diag.size() == box.d(), "block dimension does not match box dimension");
    std::vector<double> out(diag.size());
    for (std::size_t j = 0; j < diag.size(); ++j)
        out[j] = diag[j] > 0.0 ? box.upper()[j] : box.lower()[j];
    return out;
}

double g_sym_bruteforce(const Matrix& a, const VolatilityBox& box) {
    require(a.rows() == box.d() && a.cols() == box.d(), "matrix dimension does not match box");
    if (!a.is_symmetric()) throw InputError("G is defined on symmetric matrices");
    const std::size_t count = box.scenario_count();
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < count; ++s) {
        const auto sigma2 = box.scenario(s);
        double tr = 0.0;
        for (std::size_t j = 0; j < sigma2.size(); ++j) tr += a(j, j) * sigma2[j];
        best = std::max(best, 0.5 * tr);
    }
    return best;
}

std::pair<Matrix, Matrix> correlated_bounds(const CorrelationSpec& spec) {
    const Matrix& p = spec.transform();
    const auto lo = spec.box().lower();
    const auto hi = spec.box().upper();
    const std::size_t d = p.rows();
    Matrix qlo(d, d);
    Matrix qhi(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double sup = 0.0;
            double inf = 0.0;
            for (std::size_t l = 0; l < d; ++l) {
                const double c = p(i, l) * p(j, l);
                sup += c > 0.0 ? c * hi[l] : c * lo[l];
                inf += c > 0.0 ? c * lo[l] : c * hi[l];
            }
            qhi(i, j) = sup;
            qlo(i, j) = inf;
        }
    return {qlo, qhi};
}

} // namespace gcalc
