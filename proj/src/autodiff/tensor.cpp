#include "gridflow/autodiff/tensor.hpp"

#include <stdexcept>
#include <unordered_set>

namespace gridflow::ad {

namespace {
thread_local bool g_no_grad = false;
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::enabled() noexcept { return g_no_grad; }

std::string shape_string(Eigen::Index rows, Eigen::Index cols, int rank) {
    switch (rank) {
        case 0: return "[]";
        case 1: return "[" + std::to_string(rows) + "]";
        default: return "[" + std::to_string(rows) + ", " + std::to_string(cols) + "]";
    }
}

template <typename Real>
Tensor<Real> Tensor<Real>::constant(Mat value, int rank) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(value);
    n->rank = rank;
    return Tensor(std::move(n));
}

template <typename Real>
Tensor<Real> Tensor<Real>::parameter(Mat value, int rank) {
    Tensor t = constant(std::move(value), rank);
    t.node_->requires_grad = true;
    return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real v, bool requires_grad) {
    Mat m(1, 1);
    m(0, 0) = v;
    Tensor t = constant(std::move(m), 0);
    t.node_->requires_grad = requires_grad;
    return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::vector(const std::vector<Real>& v, bool requires_grad) {
    Mat m(static_cast<Eigen::Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) {
        m(static_cast<Eigen::Index>(i), 0) = v[i];
    }
    Tensor t = constant(std::move(m), 1);
    t.node_->requires_grad = requires_grad;
    return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Eigen::Index rows, Eigen::Index cols) {
    return constant(Mat::Zero(rows, cols), 2);
}

template <typename Real>
Real Tensor<Real>::item() const {
    if (node_->value.size() != 1) {
        throw std::invalid_argument("item: tensor of shape " + shape_string() + " is not a scalar");
    }
    return node_->value(0, 0);
}

template <typename Real>
std::string Tensor<Real>::shape_string() const {
    return ad::shape_string(rows(), cols(), rank());
}

template <typename Real>
Tensor<Real> make_result(Matrix<Real> value, int rank, std::vector<Tensor<Real>> parents,
                         std::function<void(Node<Real>&)> backward) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(value);
    n->rank = rank;
    if (g_no_grad) {
        return Tensor<Real>(std::move(n));
    }
    bool any = false;
    for (const Tensor<Real>& p : parents) {
        any = any || p.requires_grad();
    }
    if (!any) {
        return Tensor<Real>(std::move(n));
    }
    n->requires_grad = true;
    n->leaf = false;
    n->parents.reserve(parents.size());
    for (Tensor<Real>& p : parents) {
        n->parents.push_back(p.node());
    }
    n->backward_fn = std::move(backward);
    return Tensor<Real>(std::move(n));
}

template <typename Real>
void backward(const Tensor<Real>& loss) {
    if (loss.rank() != 0 || loss.size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got shape " + loss.shape_string());
    }
    if (!loss.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order without recursion
    // depth limits on long unrolled graphs.
    using NodeT = Node<Real>;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT* p = node->parents[next++].get();
            if (p->requires_grad && !p->leaf && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    NodeT* root = loss.node().get();
    root->grad_buffer().setConstant(Real(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* node = *it;
        if (node->grad.size() == 0) {
            node->grad_buffer();
        }
        if (node->backward_fn) {
            node->backward_fn(*node);
        }
        if (!node->leaf) {
            node->grad = Matrix<Real>();
        }
    }
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(Matrix<float>, int, std::vector<Tensor<float>>, std::function<void(Node<float>&)>);
template Tensor<double> make_result(Matrix<double>, int, std::vector<Tensor<double>>,
                                    std::function<void(Node<double>&)>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace gridflow::ad
