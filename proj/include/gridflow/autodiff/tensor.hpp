#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace gridflow::ad {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One vertex of the recorded computation. Values are stored as row-major
/// matrices; rank 0 is a 1x1 scalar and rank 1 is an n x 1 column.
template <typename Real>
struct Node {
    Matrix<Real> value;
    Matrix<Real> grad;
    int rank = 2;
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    /// Gradient buffer, zero-initialized on first use.
    Matrix<Real>& grad_buffer() {
        if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
            grad = Matrix<Real>::Zero(value.rows(), value.cols());
        }
        return grad;
    }
};

/// Disables graph recording on this thread while alive (evaluation passes).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool enabled() noexcept;

private:
    bool previous_;
};

template <typename Real>
class Tensor {
public:
    using Mat = Matrix<Real>;
    using NodePtr = std::shared_ptr<Node<Real>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor constant(Mat value, int rank = 2);
    static Tensor parameter(Mat value, int rank = 2);
    static Tensor scalar(Real v, bool requires_grad = false);
    static Tensor vector(const std::vector<Real>& v, bool requires_grad = false);
    static Tensor zeros(Eigen::Index rows, Eigen::Index cols);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Mat& value() const { return node_->value; }
    /// Tensors are shared handles; these write through to the node.
    Mat& mutable_value() const { return node_->value; }
    const Mat& grad() const { return node_->grad; }
    Mat& mutable_grad() const { return node_->grad_buffer(); }
    void zero_grad() const { node_->grad_buffer().setZero(); }

    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    Eigen::Index size() const { return node_->value.size(); }
    int rank() const { return node_->rank; }
    bool requires_grad() const { return node_->requires_grad; }
    Real item() const;
    std::string shape_string() const;

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

/// Builds an op result. The backward rule is kept only when recording is on
/// and some parent needs a gradient.
template <typename Real>
Tensor<Real> make_result(Matrix<Real> value, int rank, std::vector<Tensor<Real>> parents,
                         std::function<void(Node<Real>&)> backward);

/// Reverse pass from a rank-0 tensor. Leaf gradients accumulate; interior
/// gradients are released once propagated. Throws std::invalid_argument for
/// a non-scalar loss.
template <typename Real>
void backward(const Tensor<Real>& loss);

std::string shape_string(Eigen::Index rows, Eigen::Index cols, int rank);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace gridflow::ad
