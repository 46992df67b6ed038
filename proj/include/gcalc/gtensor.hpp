/**
 * @file gtensor.hpp
 * @brief Finite-dimensional operator algebra for G-calculus.
 *
 * Dense matrices with the Frobenius pairing a:b = tr(a* b), stacked diagonal
 * tensors eta in D^{n x d x d}, the generator G(A) = 1/2 sup_{s2 in Sigma} tr(A s2)
 * over a diagonal volatility box, and the covariance bounds of a linearly
 * transformed G-Brownian motion.
 */
#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace gcalc {

/// Absolute tolerance used for algebraic identities.
inline constexpr double kAlgebraTol = 1e-12;

/**
 * Dense row-major matrix.
 *
 * The structure tag is checked entry-wise on construction: a matrix declared
 * symmetric or diagonal that is not raises InputError.
 */
class Matrix {
public:
    enum class Structure { General, Symmetric, Diagonal };

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major,
           Structure structure = Structure::General);

    static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
    static Matrix identity(std::size_t d);
    static Matrix diagonal(std::span<const double> diag);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    Structure structure() const noexcept { return structure_; }

    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    std::span<const double> data() const noexcept { return data_; }

    bool is_symmetric(double tol = kAlgebraTol) const;
    bool is_diagonal(double tol = kAlgebraTol) const;
    std::vector<double> diag() const;

    Matrix transpose() const;
    /// |a| = sqrt(a:a)
    double norm() const;

    Matrix operator+(const Matrix& other) const;
    Matrix operator-(const Matrix& other) const;
    Matrix operator*(double s) const;
    Matrix matmul(const Matrix& other) const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
    Structure structure_ = Structure::General;
};

/**
 * eta = (eta^1, ..., eta^n) with each eta^i a d x d diagonal matrix.
 * Only diagonal entries are stored: entry(i, j) is eta^i_{jj}.
 */
class DiagTensor {
public:
    DiagTensor() = default;
    DiagTensor(std::size_t n, std::size_t d);
    DiagTensor(std::size_t n, std::size_t d, std::vector<double> entries);

    static DiagTensor from_blocks(const std::vector<Matrix>& blocks);

    std::size_t n() const noexcept { return n_; }
    std::size_t d() const noexcept { return d_; }
    double entry(std::size_t i, std::size_t j) const { return entries_[i * d_ + j]; }
    double& entry(std::size_t i, std::size_t j) { return entries_[i * d_ + j]; }
    std::span<const double> entries() const noexcept { return entries_; }
    std::span<const double> block_diag(std::size_t i) const {
        return std::span<const double>(entries_).subspan(i * d_, d_);
    }
    Matrix block(std::size_t i) const;

    /// |eta| = sqrt(sum_i eta^i : eta^i)
    double norm() const;

    DiagTensor operator+(const DiagTensor& other) const;
    DiagTensor operator-(const DiagTensor& other) const;
    DiagTensor operator*(double s) const;

private:
    std::size_t n_ = 0;
    std::size_t d_ = 0;
    std::vector<double> entries_;
};

/**
 * Diagonal volatility uncertainty box [lower, upper] together with the
 * finite scenario grid used by the dynamic-programming engine.
 *
 * The grid is the tensor product of per-axis uniform grids with
 * grid_points_per_axis points including both endpoints, enumerated
 * lexicographically with axis 0 most significant and values ascending.
 */
class VolatilityBox {
public:
    VolatilityBox(std::vector<double> lower, std::vector<double> upper,
                  std::size_t grid_points_per_axis = 5);

    std::size_t d() const noexcept { return lower_.size(); }
    std::size_t grid_points_per_axis() const noexcept { return points_; }
    std::span<const double> lower() const noexcept { return lower_; }
    std::span<const double> upper() const noexcept { return upper_; }
    Matrix lower_matrix() const { return Matrix::diagonal(lower_); }
    Matrix upper_matrix() const { return Matrix::diagonal(upper_); }

    double lower_min() const;
    double upper_max() const;
    bool is_degenerate() const;
    bool contains(std::span<const double> sigma2, double tol = kAlgebraTol) const;

    /// Values of the axis grid for axis j, ascending.
    std::vector<double> axis_grid(std::size_t j) const;
    std::size_t scenario_count() const;
    /// Diagonal of the s-th grid scenario.
    std::vector<double> scenario(std::size_t s) const;

    VolatilityBox with_grid_points(std::size_t points) const {
        return VolatilityBox(lower_, upper_, points);
    }

private:
    std::vector<double> lower_;
    std::vector<double> upper_;
    std::size_t points_;
};

/// Linear transform Y = P X of a G-normal vector X with diagonal covariance box.
class CorrelationSpec {
public:
    CorrelationSpec(Matrix transform, VolatilityBox box);

    const Matrix& transform() const noexcept { return transform_; }
    const VolatilityBox& box() const noexcept { return box_; }

    /// Conditioning threshold on |P| |P^{-1}| above which P is rejected.
    static constexpr double kMaxCondition = 1e12;

private:
    Matrix transform_;
    VolatilityBox box_;
};

double colon_product(const Matrix& a, const Matrix& b);

/// (eta^1 : gamma, ..., eta^n : gamma)
std::vector<double> tensor_contract(const DiagTensor& eta, const Matrix& gamma);

/// eta . theta = sum_i (eta^i)* theta^i
Matrix tensor_dot(const DiagTensor& eta, const DiagTensor& theta);
/// xi . eta = sum_i xi^i eta^i
Matrix tensor_dot(std::span<const double> xi, const DiagTensor& eta);
/// xi . eta : gamma = sum_i xi^i eta^i : gamma
double tensor_dot(std::span<const double> xi, const DiagTensor& eta, const Matrix& gamma);

/// (eta^+, eta^-) with eta = eta^+ - eta^-, both entry-wise nonnegative.
std::pair<DiagTensor, DiagTensor> pos_neg_split(const DiagTensor& eta);

/// G evaluated on one diagonal block given by its diagonal entries (corner formula).
double g_block(std::span<const double> diag, std::span<const double> lower,
               std::span<const double> upper);

/// (G(eta^1), ..., G(eta^n)) by the corner formula.
std::vector<double> g_diag(const DiagTensor& eta, const VolatilityBox& box);

/// Maximising corner for one block; zero entries select the lower bound.
std::vector<double> g_argmax(std::span<const double> diag, const VolatilityBox& box);

/// max over the scenario grid of 1/2 tr(A s2); a lower bound of G(A).
double g_sym_bruteforce(const Matrix& a, const VolatilityBox& box);

/// Entry-wise (inf, sup) of the covariance of P X over the box.
std::pair<Matrix, Matrix> correlated_bounds(const CorrelationSpec& spec);

} // namespace gcalc
