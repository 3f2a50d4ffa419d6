#include "qlab/rotation.hpp"

#include "qlab/error.hpp"
#include "qlab/rng.hpp"
#include "qlab/special.hpp"

namespace qlab {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMajor as_matrix(std::span<const float> theta, std::size_t rows, std::size_t cols) {
    require(rows >= 1 && cols >= 1 && theta.size() == rows * cols, ErrorKind::Input,
            "tensor does not match the rotation shape");
    RowMajor m(rows, cols);
    for (std::size_t i = 0; i < theta.size(); ++i) m.data()[i] = theta[i];
    return m;
}

std::vector<float> to_vector(const RowMajor & m) {
    std::vector<float> out(static_cast<std::size_t>(m.size()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(m.data()[i]);
    return out;
}

void check_shape(const RotationPair & r, std::size_t rows, std::size_t cols) {
    require(r.rows() == rows && r.cols() == cols, ErrorKind::Input, "rotation pair does not match the tensor shape");
}

} // namespace

Eigen::MatrixXd random_orthogonal(std::size_t n, uint64_t seed) {
    require(n >= 1, ErrorKind::InvalidArgument, "rotation dimension must be >= 1");
    if (n == 1) return Eigen::MatrixXd::Identity(1, 1);
    const CounterRng rng(seed);
    Eigen::MatrixXd g(n, n);
    for (std::size_t i = 0; i < n * n; ++i) g.data()[i] = special::normal_ppf(rng.uniform(i));
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd & r = qr.matrixQR();
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        if (r(j, j) < 0) q.col(j) *= -1.0;
    }
    return q;
}

RotationPair random_rotation_pair(std::size_t rows, std::size_t cols, uint64_t seed, std::size_t cap) {
    require(rows >= 1 && cols >= 1, ErrorKind::InvalidArgument, "rotation dimensions must be >= 1");
    RotationPair r;
    r.seed = seed;
    r.rows_skipped = rows > cap;
    r.cols_skipped = cols > cap;
    // separate streams for the two sides
    const CounterRng split(seed);
    r.V = r.rows_skipped ? Eigen::MatrixXd::Identity(rows, rows) : random_orthogonal(rows, split.bits(0));
    r.W = r.cols_skipped ? Eigen::MatrixXd::Identity(cols, cols) : random_orthogonal(cols, split.bits(1));
    return r;
}

std::vector<float> rotate(std::span<const float> theta, std::size_t rows, std::size_t cols, const RotationPair & r) {
    check_shape(r, rows, cols);
    const RowMajor m = as_matrix(theta, rows, cols);
    return to_vector(r.V * m * r.W);
}

std::vector<float> unrotate(std::span<const float> theta, std::size_t rows, std::size_t cols, const RotationPair & r) {
    check_shape(r, rows, cols);
    const RowMajor m = as_matrix(theta, rows, cols);
    return to_vector(r.V.transpose() * m * r.W.transpose());
}

} // namespace qlab
