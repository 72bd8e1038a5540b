#include "gridflow/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace gridflow::ad {

namespace {

template <typename Real>
[[noreturn]] void shape_error(const char* op, const T<Real>& a, const T<Real>& b, const std::string& detail = {}) {
    std::string msg = std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string();
    if (!detail.empty()) {
        msg += " (" + detail + ")";
    }
    throw std::invalid_argument(msg);
}

template <typename Real>
[[noreturn]] void index_error(const char* op, const T<Real>& a, const std::string& detail) {
    throw std::invalid_argument(std::string(op) + ": " + detail + " for tensor of shape " + a.shape_string());
}

/// Gradient buffer of parent k, or nullptr when it needs none.
template <typename Real>
Matrix<Real>* grad_of(Node<Real>& self, std::size_t k) {
    Node<Real>& p = *self.parents[k];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
}

template <typename Real>
const Matrix<Real>& value_of(const Node<Real>& self, std::size_t k) {
    return self.parents[k]->value;
}

std::vector<int> copy_index(Index idx) { return {idx.begin(), idx.end()}; }

template <typename Real>
void check_index(const char* op, const T<Real>& a, Index idx, Eigen::Index limit, bool allow_missing) {
    for (const int i : idx) {
        if (i >= limit || i < (allow_missing ? -1 : 0)) {
            index_error(op, a, "index " + std::to_string(i) + " outside [0, " + std::to_string(limit) + ")");
        }
    }
}

template <typename Real>
bool same_shape(const T<Real>& a, const T<Real>& b) {
    return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace

template <typename Real>
T<Real> matmul(const T<Real>& a, const T<Real>& b) {
    if (a.cols() != b.rows()) {
        shape_error("matmul", a, b);
    }
    Matrix<Real> out = a.value() * b.value();
    const int rank = b.rank() == 1 ? 1 : 2;
    return make_result<Real>(std::move(out), rank, {a, b}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) ga->noalias() += self.grad * value_of(self, 1).transpose();
        if (auto* gb = grad_of(self, 1)) gb->noalias() += value_of(self, 0).transpose() * self.grad;
    });
}

template <typename Real>
T<Real> matmul_nt(const T<Real>& a, const T<Real>& b) {
    if (a.cols() != b.cols()) {
        shape_error("matmul_nt", a, b);
    }
    Matrix<Real> out = a.value() * b.value().transpose();
    return make_result<Real>(std::move(out), 2, {a, b}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) ga->noalias() += self.grad * value_of(self, 1);
        if (auto* gb = grad_of(self, 1)) gb->noalias() += self.grad.transpose() * value_of(self, 0);
    });
}

template <typename Real>
T<Real> transpose(const T<Real>& a) {
    Matrix<Real> out = a.value().transpose();
    return make_result<Real>(std::move(out), 2, {a}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) *ga += self.grad.transpose();
    });
}

template <typename Real>
T<Real> add(const T<Real>& a, const T<Real>& b) {
    if (same_shape(a, b)) {
        Matrix<Real> out = a.value() + b.value();
        return make_result<Real>(std::move(out), std::max(a.rank(), b.rank()), {a, b}, [](Node<Real>& self) {
            if (auto* ga = grad_of(self, 0)) *ga += self.grad;
            if (auto* gb = grad_of(self, 1)) *gb += self.grad;
        });
    }
    if (b.rank() == 0) {
        Matrix<Real> out = a.value().array() + b.value()(0, 0);
        return make_result<Real>(std::move(out), a.rank(), {a, b}, [](Node<Real>& self) {
            if (auto* ga = grad_of(self, 0)) *ga += self.grad;
            if (auto* gb = grad_of(self, 1)) (*gb)(0, 0) += self.grad.sum();
        });
    }
    shape_error("add", a, b);
}

template <typename Real>
T<Real> sub(const T<Real>& a, const T<Real>& b) {
    if (!same_shape(a, b)) {
        shape_error("sub", a, b);
    }
    Matrix<Real> out = a.value() - b.value();
    return make_result<Real>(std::move(out), std::max(a.rank(), b.rank()), {a, b}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) *ga += self.grad;
        if (auto* gb = grad_of(self, 1)) *gb -= self.grad;
    });
}

template <typename Real>
T<Real> mul(const T<Real>& a, const T<Real>& b) {
    if (!same_shape(a, b)) {
        shape_error("mul", a, b);
    }
    Matrix<Real> out = a.value().cwiseProduct(b.value());
    return make_result<Real>(std::move(out), std::max(a.rank(), b.rank()), {a, b}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) *ga += self.grad.cwiseProduct(value_of(self, 1));
        if (auto* gb = grad_of(self, 1)) *gb += self.grad.cwiseProduct(value_of(self, 0));
    });
}

template <typename Real>
T<Real> add_row(const T<Real>& a, const T<Real>& row) {
    if (row.size() != a.cols()) {
        shape_error("add_row", a, row, "row length must equal column count");
    }
    const Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> r(row.value().data(), a.cols());
    Matrix<Real> out = a.value().rowwise() + r;
    return make_result<Real>(std::move(out), a.rank(), {a, row}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) *ga += self.grad;
        if (auto* gb = grad_of(self, 1)) {
            const Eigen::Matrix<Real, 1, Eigen::Dynamic> s = self.grad.colwise().sum();
            Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(gb->data(), s.size()) += s;
        }
    });
}

template <typename Real>
T<Real> mul_col(const T<Real>& a, const T<Real>& s) {
    if (s.size() != a.rows()) {
        shape_error("mul_col", a, s, "scale needs one entry per row");
    }
    const Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> sv(s.value().data(), a.rows());
    Matrix<Real> out = a.value().array().colwise() * sv.array();
    return make_result<Real>(std::move(out), a.rank(), {a, s}, [](Node<Real>& self) {
        const Matrix<Real>& av = value_of(self, 0);
        const Matrix<Real>& svm = value_of(self, 1);
        const Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> s2(svm.data(), av.rows());
        if (auto* ga = grad_of(self, 0)) *ga += (self.grad.array().colwise() * s2.array()).matrix();
        if (auto* gs = grad_of(self, 1)) {
            const Eigen::Matrix<Real, Eigen::Dynamic, 1> d = self.grad.cwiseProduct(av).rowwise().sum();
            Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>(gs->data(), d.size()) += d;
        }
    });
}

template <typename Real>
T<Real> broadcast_scalar_mul(const T<Real>& a, const T<Real>& s) {
    if (s.size() != 1) {
        shape_error("broadcast_scalar_mul", a, s, "right operand must be a scalar");
    }
    Matrix<Real> out = a.value() * s.value()(0, 0);
    return make_result<Real>(std::move(out), a.rank(), {a, s}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) *ga += self.grad * value_of(self, 1)(0, 0);
        if (auto* gs = grad_of(self, 1)) (*gs)(0, 0) += self.grad.cwiseProduct(value_of(self, 0)).sum();
    });
}

template <typename Real>
T<Real> scale(const T<Real>& a, Real c) {
    Matrix<Real> out = a.value() * c;
    return make_result<Real>(std::move(out), a.rank(), {a}, [c](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) *ga += self.grad * c;
    });
}

template <typename Real>
T<Real> tanh(const T<Real>& a) {
    Matrix<Real> out = a.value().array().tanh().matrix();
    return make_result<Real>(std::move(out), a.rank(), {a}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) {
            *ga += (self.grad.array() * (Real(1) - self.value.array().square())).matrix();
        }
    });
}

template <typename Real>
T<Real> sigmoid(const T<Real>& a) {
    Matrix<Real> out = a.value().unaryExpr([](Real x) { return Real(1) / (Real(1) + std::exp(-x)); });
    return make_result<Real>(std::move(out), a.rank(), {a}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) {
            *ga += (self.grad.array() * self.value.array() * (Real(1) - self.value.array())).matrix();
        }
    });
}

template <typename Real>
T<Real> leaky_relu(const T<Real>& a, Real slope) {
    Matrix<Real> out = a.value().unaryExpr([slope](Real x) { return x > 0 ? x : slope * x; });
    return make_result<Real>(std::move(out), a.rank(), {a}, [slope](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) {
            const Matrix<Real>& x = value_of(self, 0);
            *ga += self.grad.binaryExpr(x, [slope](Real g, Real v) { return v > 0 ? g : slope * g; });
        }
    });
}

template <typename Real>
T<Real> exp(const T<Real>& a) {
    Matrix<Real> out = a.value().array().exp().matrix();
    return make_result<Real>(std::move(out), a.rank(), {a}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) *ga += self.grad.cwiseProduct(self.value);
    });
}

template <typename Real>
T<Real> log(const T<Real>& a, Real floor) {
    Matrix<Real> out = a.value().unaryExpr([floor](Real x) { return std::log(std::max(x, floor)); });
    return make_result<Real>(std::move(out), a.rank(), {a}, [floor](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) {
            const Matrix<Real>& x = value_of(self, 0);
            *ga += self.grad.binaryExpr(x, [floor](Real g, Real v) { return v >= floor ? g / v : Real(0); });
        }
    });
}

template <typename Real>
T<Real> concat_cols(const std::vector<T<Real>>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_cols: no inputs");
    }
    Eigen::Index cols = 0;
    for (const T<Real>& p : parts) {
        if (p.rows() != parts.front().rows()) {
            shape_error("concat_cols", parts.front(), p, "row counts differ");
        }
        cols += p.cols();
    }
    Matrix<Real> out(parts.front().rows(), cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index c = 0;
    for (const T<Real>& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        offsets.push_back(c);
        c += p.cols();
    }
    return make_result<Real>(std::move(out), 2, parts, [offsets](Node<Real>& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            if (auto* g = grad_of(self, k)) *g += self.grad.middleCols(offsets[k], g->cols());
        }
    });
}

template <typename Real>
T<Real> concat_rows(const std::vector<T<Real>>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_rows: no inputs");
    }
    Eigen::Index rows = 0;
    bool all_vectors = true;
    for (const T<Real>& p : parts) {
        if (p.cols() != parts.front().cols()) {
            shape_error("concat_rows", parts.front(), p, "column counts differ");
        }
        rows += p.rows();
        all_vectors = all_vectors && p.rank() == 1;
    }
    Matrix<Real> out(rows, parts.front().cols());
    std::vector<Eigen::Index> offsets;
    Eigen::Index r = 0;
    for (const T<Real>& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        offsets.push_back(r);
        r += p.rows();
    }
    return make_result<Real>(std::move(out), all_vectors ? 1 : 2, parts, [offsets](Node<Real>& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            if (auto* g = grad_of(self, k)) *g += self.grad.middleRows(offsets[k], g->rows());
        }
    });
}

template <typename Real>
T<Real> slice_cols(const T<Real>& a, Eigen::Index begin, Eigen::Index width) {
    if (begin < 0 || width < 0 || begin + width > a.cols()) {
        index_error("slice_cols", a,
                    "columns [" + std::to_string(begin) + ", " + std::to_string(begin + width) + ") out of range");
    }
    Matrix<Real> out = a.value().middleCols(begin, width);
    return make_result<Real>(std::move(out), 2, {a}, [begin, width](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) ga->middleCols(begin, width) += self.grad;
    });
}

template <typename Real>
T<Real> reshape(const T<Real>& a, Eigen::Index rows, Eigen::Index cols, int rank) {
    if (rows * cols != a.size()) {
        throw std::invalid_argument("reshape: cannot view " + a.shape_string() + " as " +
                                    shape_string(rows, cols, rank));
    }
    Matrix<Real> out = Eigen::Map<const Matrix<Real>>(a.value().data(), rows, cols);
    return make_result<Real>(std::move(out), rank, {a}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) {
            Eigen::Map<Matrix<Real>>(ga->data(), self.grad.rows(), self.grad.cols()) += self.grad;
        }
    });
}

template <typename Real>
T<Real> sum(const T<Real>& a) {
    Matrix<Real> out(1, 1);
    out(0, 0) = a.value().sum();
    return make_result<Real>(std::move(out), 0, {a}, [](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) ga->array() += self.grad(0, 0);
    });
}

template <typename Real>
T<Real> mean(const T<Real>& a) {
    if (a.size() == 0) {
        throw std::invalid_argument("mean: empty tensor " + a.shape_string());
    }
    const Real inv = Real(1) / static_cast<Real>(a.size());
    Matrix<Real> out(1, 1);
    out(0, 0) = a.value().sum() * inv;
    return make_result<Real>(std::move(out), 0, {a}, [inv](Node<Real>& self) {
        if (auto* ga = grad_of(self, 0)) ga->array() += self.grad(0, 0) * inv;
    });
}

template <typename Real>
T<Real> inner_product(const T<Real>& a, const T<Real>& b) {
    if (!same_shape(a, b)) {
        shape_error("inner_product", a, b);
    }
    Matrix<Real> out(1, 1);
    out(0, 0) = a.value().cwiseProduct(b.value()).sum();
    return make_result<Real>(std::move(out), 0, {a, b}, [](Node<Real>& self) {
        const Real g = self.grad(0, 0);
        if (auto* ga = grad_of(self, 0)) *ga += g * value_of(self, 1);
        if (auto* gb = grad_of(self, 1)) *gb += g * value_of(self, 0);
    });
}

template <typename Real>
T<Real> row_dot(const T<Real>& a, const T<Real>& b) {
    if (!same_shape(a, b)) {
        shape_error("row_dot", a, b);
    }
    Matrix<Real> out = a.value().cwiseProduct(b.value()).rowwise().sum();
    return make_result<Real>(std::move(out), 1, {a, b}, [](Node<Real>& self) {
        const Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> g(self.grad.data(), self.grad.rows());
        if (auto* ga = grad_of(self, 0)) *ga += (value_of(self, 1).array().colwise() * g.array()).matrix();
        if (auto* gb = grad_of(self, 1)) *gb += (value_of(self, 0).array().colwise() * g.array()).matrix();
    });
}

template <typename Real>
T<Real> outer_product(const T<Real>& u, const T<Real>& v) {
    const Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> uv(u.value().data(), u.size());
    const Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> vv(v.value().data(), v.size());
    Matrix<Real> out = uv * vv;
    return make_result<Real>(std::move(out), 2, {u, v}, [](Node<Real>& self) {
        const Matrix<Real>& um = value_of(self, 0);
        const Matrix<Real>& vm = value_of(self, 1);
        const Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> u2(um.data(), um.size());
        const Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> v2(vm.data(), vm.size());
        if (auto* gu = grad_of(self, 0)) {
            Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>(gu->data(), um.size()) += self.grad * v2;
        }
        if (auto* gv = grad_of(self, 1)) {
            Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>(gv->data(), vm.size()) += self.grad.transpose() * u2;
        }
    });
}

template <typename Real>
T<Real> softmax(const T<Real>& v) {
    if (v.size() == 0) {
        throw std::invalid_argument("softmax: empty tensor " + v.shape_string());
    }
    Matrix<Real> out = (v.value().array() - v.value().maxCoeff()).exp().matrix();
    out /= out.sum();
    return make_result<Real>(std::move(out), v.rank(), {v}, [](Node<Real>& self) {
        if (auto* g = grad_of(self, 0)) {
            const Real dot = self.grad.cwiseProduct(self.value).sum();
            *g += (self.value.array() * (self.grad.array() - dot)).matrix();
        }
    });
}

template <typename Real>
T<Real> softmax_rows(const T<Real>& a) {
    Matrix<Real> out(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const Real peak = a.value().row(r).maxCoeff();
        out.row(r) = (a.value().row(r).array() - peak).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return make_result<Real>(std::move(out), a.rank(), {a}, [](Node<Real>& self) {
        if (auto* g = grad_of(self, 0)) {
            const Eigen::Matrix<Real, Eigen::Dynamic, 1> dot = self.grad.cwiseProduct(self.value).rowwise().sum();
            *g += (self.value.array() * (self.grad.array().colwise() - dot.array())).matrix();
        }
    });
}

template <typename Real>
T<Real> segment_softmax(const T<Real>& a, Index segment, Eigen::Index num_segments) {
    if (static_cast<Eigen::Index>(segment.size()) != a.rows()) {
        index_error("segment_softmax", a, "segment list of length " + std::to_string(segment.size()));
    }
    check_index("segment_softmax", a, segment, num_segments, false);
    const Eigen::Index cols = a.cols();
    Matrix<Real> peak = Matrix<Real>::Constant(num_segments, cols, -std::numeric_limits<Real>::infinity());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        peak.row(segment[r]) = peak.row(segment[r]).cwiseMax(a.value().row(r));
    }
    Matrix<Real> out(a.rows(), cols);
    Matrix<Real> total = Matrix<Real>::Zero(num_segments, cols);
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        out.row(r) = (a.value().row(r) - peak.row(segment[r])).array().exp().matrix();
        total.row(segment[r]) += out.row(r);
    }
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        out.row(r) = out.row(r).cwiseQuotient(total.row(segment[r]));
    }
    return make_result<Real>(std::move(out), a.rank(), {a},
                             [seg = copy_index(segment), num_segments](Node<Real>& self) {
        auto* g = grad_of(self, 0);
        if (!g) return;
        Matrix<Real> dot = Matrix<Real>::Zero(num_segments, self.value.cols());
        for (std::size_t r = 0; r < seg.size(); ++r) {
            const auto rr = static_cast<Eigen::Index>(r);
            dot.row(seg[r]) += self.grad.row(rr).cwiseProduct(self.value.row(rr));
        }
        for (std::size_t r = 0; r < seg.size(); ++r) {
            const auto rr = static_cast<Eigen::Index>(r);
            g->row(rr) += self.value.row(rr).cwiseProduct(self.grad.row(rr) - dot.row(seg[r]));
        }
    });
}

template <typename Real>
T<Real> segment_sum(const T<Real>& a, Index segment, Eigen::Index num_segments) {
    if (static_cast<Eigen::Index>(segment.size()) != a.rows()) {
        index_error("segment_sum", a, "segment list of length " + std::to_string(segment.size()));
    }
    check_index("segment_sum", a, segment, num_segments, true);
    Matrix<Real> out = Matrix<Real>::Zero(num_segments, a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        if (segment[r] >= 0) out.row(segment[r]) += a.value().row(r);
    }
    return make_result<Real>(std::move(out), a.rank(), {a}, [seg = copy_index(segment)](Node<Real>& self) {
        auto* g = grad_of(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < seg.size(); ++r) {
            if (seg[r] >= 0) g->row(static_cast<Eigen::Index>(r)) += self.grad.row(seg[r]);
        }
    });
}

template <typename Real>
T<Real> gather_rows(const T<Real>& a, Index rows) {
    check_index("gather_rows", a, rows, a.rows(), true);
    Matrix<Real> out(static_cast<Eigen::Index>(rows.size()), a.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] < 0) {
            out.row(static_cast<Eigen::Index>(k)).setZero();
        } else {
            out.row(static_cast<Eigen::Index>(k)) = a.value().row(rows[k]);
        }
    }
    return make_result<Real>(std::move(out), a.rank(), {a}, [idx = copy_index(rows)](Node<Real>& self) {
        auto* g = grad_of(self, 0);
        if (!g) return;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (idx[k] >= 0) g->row(idx[k]) += self.grad.row(static_cast<Eigen::Index>(k));
        }
    });
}

template <typename Real>
T<Real> pick(const T<Real>& a, Index rows, Index cols) {
    if (rows.size() != cols.size()) {
        index_error("pick", a, "row and column lists differ in length");
    }
    check_index("pick", a, rows, a.rows(), true);
    check_index("pick", a, cols, a.cols(), false);
    Matrix<Real> out(static_cast<Eigen::Index>(rows.size()), 1);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        out(static_cast<Eigen::Index>(k), 0) = rows[k] < 0 ? Real(0) : a.value()(rows[k], cols[k]);
    }
    return make_result<Real>(std::move(out), 1, {a},
                             [r = copy_index(rows), c = copy_index(cols)](Node<Real>& self) {
        auto* g = grad_of(self, 0);
        if (!g) return;
        for (std::size_t k = 0; k < r.size(); ++k) {
            if (r[k] >= 0) (*g)(r[k], c[k]) += self.grad(static_cast<Eigen::Index>(k), 0);
        }
    });
}

template <typename Real>
T<Real> edge_linear(const std::vector<T<Real>>& inputs, const std::vector<std::vector<int>>& rows,
                    Index offset, Eigen::Index width, const T<Real>* bias, Index bias_row) {
    if (inputs.empty() || inputs.size() != rows.size()) {
        throw std::invalid_argument("edge_linear: need one row list per input");
    }
    const std::size_t n = offset.size();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (rows[i].size() != n) {
            index_error("edge_linear", inputs[i], "row list length differs from offset list");
        }
        check_index("edge_linear", inputs[i], rows[i], inputs[i].rows(), true);
        for (const int o : offset) {
            if (o < 0 || o + width > inputs[i].cols()) {
                index_error("edge_linear", inputs[i], "column block at " + std::to_string(o) + " of width " +
                                                          std::to_string(width) + " out of range");
            }
        }
    }
    std::vector<T<Real>> parents = inputs;
    if (bias) {
        if (bias->cols() != width || bias_row.size() != n) {
            shape_error("edge_linear", inputs.front(), *bias, "bias table must have the block width");
        }
        check_index("edge_linear", *bias, bias_row, bias->rows(), true);
        parents.push_back(*bias);
    }

    Matrix<Real> out = Matrix<Real>::Zero(static_cast<Eigen::Index>(n), width);
    for (std::size_t k = 0; k < n; ++k) {
        auto dst = out.row(static_cast<Eigen::Index>(k));
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const int r = rows[i][k];
            if (r >= 0) dst += inputs[i].value().row(r).segment(offset[k], width);
        }
        if (bias && bias_row[k] >= 0) dst += bias->value().row(bias_row[k]);
    }
    const bool has_bias = bias != nullptr;
    return make_result<Real>(
        std::move(out), 2, std::move(parents),
        [rows, off = copy_index(offset), width, has_bias, br = copy_index(bias_row)](Node<Real>& self) {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                auto* g = grad_of(self, i);
                if (!g) continue;
                for (std::size_t k = 0; k < off.size(); ++k) {
                    const int r = rows[i][k];
                    if (r >= 0) g->row(r).segment(off[k], width) += self.grad.row(static_cast<Eigen::Index>(k));
                }
            }
            if (has_bias) {
                if (auto* g = grad_of(self, rows.size())) {
                    for (std::size_t k = 0; k < br.size(); ++k) {
                        if (br[k] >= 0) g->row(br[k]) += self.grad.row(static_cast<Eigen::Index>(k));
                    }
                }
            }
        });
}

template <typename Real>
T<Real> edge_bilinear(const T<Real>& a, const T<Real>& b, Index ra, Index rb, Index offset) {
    const Eigen::Index d = b.cols();
    if (ra.size() != rb.size() || ra.size() != offset.size()) {
        shape_error("edge_bilinear", a, b, "index lists differ in length");
    }
    check_index("edge_bilinear", a, ra, a.rows(), false);
    check_index("edge_bilinear", b, rb, b.rows(), false);
    for (const int o : offset) {
        if (o < 0 || o + d > a.cols()) {
            shape_error("edge_bilinear", a, b, "column block at " + std::to_string(o) + " out of range");
        }
    }
    const auto n = static_cast<Eigen::Index>(ra.size());
    Matrix<Real> out(n, 1);
    for (Eigen::Index k = 0; k < n; ++k) {
        out(k, 0) = a.value().row(ra[k]).segment(offset[k], d).dot(b.value().row(rb[k]));
    }
    return make_result<Real>(std::move(out), 1, {a, b},
                             [r1 = copy_index(ra), r2 = copy_index(rb), off = copy_index(offset), d](Node<Real>& self) {
        auto* ga = grad_of(self, 0);
        auto* gb = grad_of(self, 1);
        const Matrix<Real>& av = value_of(self, 0);
        const Matrix<Real>& bv = value_of(self, 1);
        for (std::size_t k = 0; k < r1.size(); ++k) {
            const Real g = self.grad(static_cast<Eigen::Index>(k), 0);
            if (ga) ga->row(r1[k]).segment(off[k], d) += g * bv.row(r2[k]);
            if (gb) gb->row(r2[k]) += g * av.row(r1[k]).segment(off[k], d);
        }
    });
}

template <typename Real>
T<Real> edge_message(const T<Real>& g, Index rows, Index offset, const T<Real>& bias, Index bias_row,
                     const T<Real>* scale, Index scale_index, const T<Real>* post_bias, bool tanh_act,
                     Index receiver, Eigen::Index num_receivers) {
    const Eigen::Index w = bias.cols();
    const std::size_t n = rows.size();
    if (offset.size() != n || bias_row.size() != n || receiver.size() != n || (scale && scale_index.size() != n)) {
        index_error("edge_message", g, "index lists differ in length");
    }
    check_index("edge_message", g, rows, g.rows(), false);
    check_index("edge_message", bias, bias_row, bias.rows(), false);
    check_index("edge_message", g, receiver, num_receivers, false);
    for (const int o : offset) {
        if (o < 0 || o + w > g.cols()) {
            shape_error("edge_message", g, bias, "column block at " + std::to_string(o) + " out of range");
        }
    }
    if (scale) {
        if (scale->cols() != 1) shape_error("edge_message", g, *scale, "scale must be a column");
        check_index("edge_message", *scale, scale_index, scale->rows(), true);
    }
    if (post_bias && post_bias->size() != w) {
        shape_error("edge_message", bias, *post_bias, "post bias must have the block width");
    }

    std::vector<T<Real>> parents{g, bias};
    if (scale) parents.push_back(*scale);
    if (post_bias) parents.push_back(*post_bias);

    const Real* gv = g.value().data();
    const Real* bv = bias.value().data();
    const Real* sv = scale ? scale->value().data() : nullptr;
    const Real* pv = post_bias ? post_bias->value().data() : nullptr;
    const Eigen::Index gc = g.cols();
    auto scale_of = [sv](int idx) { return !sv ? Real(1) : idx < 0 ? Real(0) : sv[idx]; };

    // Pre-activations of every edge, activated in one vectorized pass and
    // kept for the tanh derivative.
    Matrix<Real> act(static_cast<Eigen::Index>(n), w);
    for (std::size_t k = 0; k < n; ++k) {
        const Real s = scale_of(scale_index[k]);
        const Real* src = gv + rows[k] * gc + offset[k];
        const Real* b = bv + bias_row[k] * w;
        Real* dst = act.data() + k * w;
        if (pv) {
            for (Eigen::Index j = 0; j < w; ++j) dst[j] = (src[j] + b[j]) * s + pv[j];
        } else {
            for (Eigen::Index j = 0; j < w; ++j) dst[j] = (src[j] + b[j]) * s;
        }
    }
    if (tanh_act) act.array() = act.array().tanh();
    Matrix<Real> out = Matrix<Real>::Zero(num_receivers, w);
    for (std::size_t k = 0; k < n; ++k) {
        const Real* m = act.data() + k * w;
        Real* dst = out.data() + receiver[k] * w;
        for (Eigen::Index j = 0; j < w; ++j) dst[j] += m[j];
    }
    if (!tanh_act) act = Matrix<Real>();

    const bool has_scale = scale != nullptr;
    const bool has_post = post_bias != nullptr;
    return make_result<Real>(
        std::move(out), 2, std::move(parents),
        [r = copy_index(rows), off = copy_index(offset), br = copy_index(bias_row), si = copy_index(scale_index),
         rcv = copy_index(receiver), act = std::move(act), w, has_scale, has_post, tanh_act](Node<Real>& self) {
            auto* gg = grad_of(self, 0);
            auto* gb = grad_of(self, 1);
            auto* gs = has_scale ? grad_of(self, 2) : nullptr;
            auto* gp = has_post ? grad_of(self, has_scale ? 3 : 2) : nullptr;
            const Real* gv2 = value_of(self, 0).data();
            const Eigen::Index gc2 = value_of(self, 0).cols();
            const Real* bv2 = value_of(self, 1).data();
            const Real* sv2 = has_scale ? value_of(self, 2).data() : nullptr;
            const Real* up = self.grad.data();
            std::vector<Real> dpost(static_cast<std::size_t>(w), Real(0));
            std::vector<Real> dpre(static_cast<std::size_t>(w));
            for (std::size_t k = 0; k < r.size(); ++k) {
                const Real* u = up + rcv[k] * w;
                if (tanh_act) {
                    const Real* m = act.data() + k * w;
                    for (Eigen::Index j = 0; j < w; ++j) dpre[j] = u[j] * (Real(1) - m[j] * m[j]);
                } else {
                    for (Eigen::Index j = 0; j < w; ++j) dpre[j] = u[j];
                }
                if (gp) {
                    for (Eigen::Index j = 0; j < w; ++j) dpost[j] += dpre[j];
                }
                const Real* src = gv2 + r[k] * gc2 + off[k];
                const Real* b = bv2 + br[k] * w;
                if (gs && si[k] >= 0) {
                    Real dot = 0;
                    for (Eigen::Index j = 0; j < w; ++j) dot += dpre[j] * (src[j] + b[j]);
                    gs->data()[si[k]] += dot;
                }
                const Real s = !sv2 ? Real(1) : si[k] < 0 ? Real(0) : sv2[si[k]];
                if (s == Real(0)) continue;
                if (gg) {
                    Real* dst = gg->data() + r[k] * gc2 + off[k];
                    for (Eigen::Index j = 0; j < w; ++j) dst[j] += dpre[j] * s;
                }
                if (gb) {
                    Real* dst = gb->data() + br[k] * w;
                    for (Eigen::Index j = 0; j < w; ++j) dst[j] += dpre[j] * s;
                }
            }
            if (gp) {
                for (Eigen::Index j = 0; j < w; ++j) gp->data()[j] += dpost[static_cast<std::size_t>(j)];
            }
        });
}

template <typename Real>
T<Real> edge_score(const T<Real>& g, const T<Real>& h, Index ra, Index rb, Index offset, Index col_a, Index col_b,
                   const T<Real>& bias, Index bias_row) {
    const Eigen::Index d = h.cols();
    const std::size_t n = ra.size();
    if (rb.size() != n || offset.size() != n || col_a.size() != n || col_b.size() != n || bias_row.size() != n) {
        shape_error("edge_score", g, h, "index lists differ in length");
    }
    check_index("edge_score", g, ra, g.rows(), false);
    check_index("edge_score", g, rb, g.rows(), false);
    check_index("edge_score", h, rb, h.rows(), false);
    check_index("edge_score", g, col_a, g.cols(), false);
    check_index("edge_score", g, col_b, g.cols(), false);
    check_index("edge_score", bias, bias_row, bias.size(), false);
    for (const int o : offset) {
        if (o < 0 || o + d > g.cols()) {
            shape_error("edge_score", g, h, "column block at " + std::to_string(o) + " out of range");
        }
    }
    const Real* gv = g.value().data();
    const Real* hv = h.value().data();
    const Real* bv = bias.value().data();
    const Eigen::Index gc = g.cols();
    Matrix<Real> out(static_cast<Eigen::Index>(n), 1);
    for (std::size_t k = 0; k < n; ++k) {
        const Real* x = gv + ra[k] * gc + offset[k];
        const Real* y = hv + rb[k] * d;
        Real acc = 0;
        for (Eigen::Index j = 0; j < d; ++j) acc += x[j] * y[j];
        out.data()[k] = acc + gv[ra[k] * gc + col_a[k]] + gv[rb[k] * gc + col_b[k]] + bv[bias_row[k]];
    }
    return make_result<Real>(
        std::move(out), 1, {g, h, bias},
        [r1 = copy_index(ra), r2 = copy_index(rb), off = copy_index(offset), ca = copy_index(col_a),
         cb = copy_index(col_b), br = copy_index(bias_row), d](Node<Real>& self) {
            auto* gg = grad_of(self, 0);
            auto* gh = grad_of(self, 1);
            auto* gb = grad_of(self, 2);
            const Real* gv2 = value_of(self, 0).data();
            const Real* hv2 = value_of(self, 1).data();
            const Eigen::Index gc2 = value_of(self, 0).cols();
            for (std::size_t k = 0; k < r1.size(); ++k) {
                const Real e = self.grad.data()[k];
                if (gg) {
                    Real* x = gg->data() + r1[k] * gc2 + off[k];
                    const Real* y = hv2 + r2[k] * d;
                    for (Eigen::Index j = 0; j < d; ++j) x[j] += e * y[j];
                    gg->data()[r1[k] * gc2 + ca[k]] += e;
                    gg->data()[r2[k] * gc2 + cb[k]] += e;
                }
                if (gh) {
                    Real* y = gh->data() + r2[k] * d;
                    const Real* x = gv2 + r1[k] * gc2 + off[k];
                    for (Eigen::Index j = 0; j < d; ++j) y[j] += e * x[j];
                }
                if (gb) gb->data()[br[k]] += e;
            }
        });
}

template <typename Real>
T<Real> head_dot(const T<Real>& z, const T<Real>& heads) {
    const Eigen::Index k = heads.rows();
    const Eigen::Index w = heads.cols();
    if (k * w != z.cols()) {
        shape_error("head_dot", z, heads, "columns must equal heads x width");
    }
    Matrix<Real> out(z.rows(), k);
    for (Eigen::Index h = 0; h < k; ++h) {
        out.col(h) = z.value().middleCols(h * w, w) * heads.value().row(h).transpose();
    }
    return make_result<Real>(std::move(out), 2, {z, heads}, [k, w](Node<Real>& self) {
        const Matrix<Real>& zv = value_of(self, 0);
        const Matrix<Real>& hv = value_of(self, 1);
        auto* gz = grad_of(self, 0);
        auto* gh = grad_of(self, 1);
        for (Eigen::Index h = 0; h < k; ++h) {
            if (gz) gz->middleCols(h * w, w).noalias() += self.grad.col(h) * hv.row(h);
            if (gh) gh->row(h).noalias() += self.grad.col(h).transpose() * zv.middleCols(h * w, w);
        }
    });
}

template <typename Real>
T<Real> head_scale(const T<Real>& z, const T<Real>& alpha) {
    const Eigen::Index k = alpha.cols();
    if (alpha.rows() != z.rows() || k == 0 || z.cols() % k != 0) {
        shape_error("head_scale", z, alpha, "need one weight per row and head");
    }
    const Eigen::Index w = z.cols() / k;
    Matrix<Real> out(z.rows(), z.cols());
    for (Eigen::Index h = 0; h < k; ++h) {
        out.middleCols(h * w, w) = z.value().middleCols(h * w, w).array().colwise() * alpha.value().col(h).array();
    }
    return make_result<Real>(std::move(out), 2, {z, alpha}, [k, w](Node<Real>& self) {
        const Matrix<Real>& zv = value_of(self, 0);
        const Matrix<Real>& av = value_of(self, 1);
        auto* gz = grad_of(self, 0);
        auto* ga = grad_of(self, 1);
        for (Eigen::Index h = 0; h < k; ++h) {
            if (gz) gz->middleCols(h * w, w) += (self.grad.middleCols(h * w, w).array().colwise() * av.col(h).array()).matrix();
            if (ga) ga->col(h) += self.grad.middleCols(h * w, w).cwiseProduct(zv.middleCols(h * w, w)).rowwise().sum();
        }
    });
}

template <typename Real>
T<Real> gru_cell(const T<Real>& pre_x, const T<Real>& h, const T<Real>& wh_rz, const T<Real>& wh_h) {
    const Eigen::Index d = h.cols();
    if (pre_x.rows() != h.rows() || pre_x.cols() != 3 * d) {
        shape_error("gru_cell", pre_x, h, "input projection must be rows x 3d");
    }
    if (wh_rz.rows() != d || wh_rz.cols() != 2 * d) {
        shape_error("gru_cell", h, wh_rz, "recurrent gate weights must be d x 2d");
    }
    if (wh_h.rows() != d || wh_h.cols() != d) {
        shape_error("gru_cell", h, wh_h, "recurrent candidate weights must be d x d");
    }
    const Matrix<Real>& x = pre_x.value();
    const Matrix<Real>& hv = h.value();
    Matrix<Real> gates = x.leftCols(2 * d);
    gates.noalias() += hv * wh_rz.value();
    gates.array() = (Real(1) + (-gates.array()).exp()).inverse();
    Matrix<Real> rh = gates.leftCols(d).cwiseProduct(hv);
    Matrix<Real> cand = x.rightCols(d);
    cand.noalias() += rh * wh_h.value();
    cand = cand.array().tanh().matrix();
    const auto z = gates.rightCols(d).array();
    Matrix<Real> out = ((Real(1) - z) * hv.array() + z * cand.array()).matrix();

    return make_result<Real>(
        std::move(out), 2, {pre_x, h, wh_rz, wh_h},
        [d, gates = std::move(gates), rh = std::move(rh), cand = std::move(cand)](Node<Real>& self) {
            const Matrix<Real>& hv2 = value_of(self, 1);
            const Matrix<Real>& wrz = value_of(self, 2);
            const Matrix<Real>& wh = value_of(self, 3);
            const auto r = gates.leftCols(d).array();
            const auto zz = gates.rightCols(d).array();
            const auto g = self.grad.array();

            Matrix<Real> dpre(self.grad.rows(), 3 * d);
            dpre.rightCols(d) = (g * zz * (Real(1) - cand.array().square())).matrix();
            const Matrix<Real> drh = dpre.rightCols(d) * wh.transpose();
            dpre.leftCols(d) = (drh.array() * hv2.array() * r * (Real(1) - r)).matrix();
            dpre.middleCols(d, d) = (g * (cand.array() - hv2.array()) * zz * (Real(1) - zz)).matrix();

            if (auto* gx = grad_of(self, 0)) *gx += dpre;
            if (auto* gh = grad_of(self, 1)) {
                *gh += (g * (Real(1) - zz) + drh.array() * r).matrix();
                gh->noalias() += dpre.leftCols(2 * d) * wrz.transpose();
            }
            if (auto* gw = grad_of(self, 2)) gw->noalias() += hv2.transpose() * dpre.leftCols(2 * d);
            if (auto* gw = grad_of(self, 3)) gw->noalias() += rh.transpose() * dpre.rightCols(d);
        });
}

#define GRIDFLOW_INSTANTIATE_OPS(R)                                                                          \
    template T<R> matmul(const T<R>&, const T<R>&);                                                          \
    template T<R> matmul_nt(const T<R>&, const T<R>&);                                                       \
    template T<R> transpose(const T<R>&);                                                                    \
    template T<R> add(const T<R>&, const T<R>&);                                                             \
    template T<R> sub(const T<R>&, const T<R>&);                                                             \
    template T<R> mul(const T<R>&, const T<R>&);                                                             \
    template T<R> add_row(const T<R>&, const T<R>&);                                                         \
    template T<R> mul_col(const T<R>&, const T<R>&);                                                         \
    template T<R> broadcast_scalar_mul(const T<R>&, const T<R>&);                                            \
    template T<R> scale(const T<R>&, R);                                                                     \
    template T<R> tanh(const T<R>&);                                                                         \
    template T<R> sigmoid(const T<R>&);                                                                      \
    template T<R> leaky_relu(const T<R>&, R);                                                                \
    template T<R> exp(const T<R>&);                                                                          \
    template T<R> log(const T<R>&, R);                                                                       \
    template T<R> concat_cols(const std::vector<T<R>>&);                                                     \
    template T<R> concat_rows(const std::vector<T<R>>&);                                                     \
    template T<R> slice_cols(const T<R>&, Eigen::Index, Eigen::Index);                                       \
    template T<R> reshape(const T<R>&, Eigen::Index, Eigen::Index, int);                                     \
    template T<R> sum(const T<R>&);                                                                          \
    template T<R> mean(const T<R>&);                                                                         \
    template T<R> inner_product(const T<R>&, const T<R>&);                                                   \
    template T<R> row_dot(const T<R>&, const T<R>&);                                                         \
    template T<R> outer_product(const T<R>&, const T<R>&);                                                   \
    template T<R> softmax(const T<R>&);                                                                      \
    template T<R> softmax_rows(const T<R>&);                                                                 \
    template T<R> segment_softmax(const T<R>&, Index, Eigen::Index);                                         \
    template T<R> segment_sum(const T<R>&, Index, Eigen::Index);                                             \
    template T<R> gather_rows(const T<R>&, Index);                                                           \
    template T<R> pick(const T<R>&, Index, Index);                                                           \
    template T<R> edge_linear(const std::vector<T<R>>&, const std::vector<std::vector<int>>&, Index,         \
                              Eigen::Index, const T<R>*, Index);                                             \
    template T<R> edge_bilinear(const T<R>&, const T<R>&, Index, Index, Index);                              \
    template T<R> edge_message(const T<R>&, Index, Index, const T<R>&, Index, const T<R>*, Index, const T<R>*, \
                               bool, Index, Eigen::Index);                                                    \
    template T<R> edge_score(const T<R>&, const T<R>&, Index, Index, Index, Index, Index, const T<R>&, Index); \
    template T<R> head_dot(const T<R>&, const T<R>&);                                                        \
    template T<R> head_scale(const T<R>&, const T<R>&);                                                      \
    template T<R> gru_cell(const T<R>&, const T<R>&, const T<R>&, const T<R>&);

GRIDFLOW_INSTANTIATE_OPS(float)
GRIDFLOW_INSTANTIATE_OPS(double)

}  // namespace gridflow::ad
