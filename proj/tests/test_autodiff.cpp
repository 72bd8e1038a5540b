#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "gridflow/autodiff/adam.hpp"
#include "gridflow/autodiff/grad_check.hpp"
#include "gridflow/autodiff/ops.hpp"
#include "gridflow/rng.hpp"

using namespace gridflow;
using namespace gridflow::ad;
using Td = Tensor<double>;
using Md = Matrix<double>;

namespace {

Md random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
    Md m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

Td param(Rng& rng, Eigen::Index r, Eigen::Index c, int rank = 2, double lo = -1.0, double hi = 1.0) {
    return Td::parameter(random_matrix(rng, r, c, lo, hi), rank);
}

/// Reduces any tensor to a scalar with fixed random weights so that every
/// output entry receives a distinct upstream gradient.
Td probe(const Td& y, std::uint64_t seed) {
    Rng rng(seed);
    return inner_product(y, Td::constant(random_matrix(rng, y.rows(), y.cols()), y.rank()));
}

double check(const std::function<Td()>& f, std::vector<Td> params) {
    GradCheckOptions opt;
    opt.min_coords = 400;
    return grad_check<double>(f, params, opt).max_error;
}

Eigen::Index dim(Rng& rng, int lo, int hi) { return lo + static_cast<Eigen::Index>(rng.below(hi - lo + 1)); }

}  // namespace

TEST_CASE("op examples") {
    const Td zero = Td::scalar(0.0, true);
    const Td y = tanh(zero);
    CHECK(y.item() == 0.0);
    backward(y);
    CHECK(zero.grad()(0, 0) == doctest::Approx(1.0));

    for (const double a : {-50.0, 0.0, 3.0, 700.0}) {
        const Td s = softmax(Td::vector({a, a, a}));
        for (int i = 0; i < 3; ++i) CHECK(s.value()(i, 0) == doctest::Approx(1.0 / 3.0));
    }

    const Td o = outer_product(Td::vector({1, 2}), Td::vector({3, 4}));
    CHECK(o.value()(0, 0) == 3);
    CHECK(o.value()(0, 1) == 4);
    CHECK(o.value()(1, 0) == 6);
    CHECK(o.value()(1, 1) == 8);
}

TEST_CASE("backward examples") {
    const Td x = Td::vector({1.5, -2.0, 0.25}, true);
    backward(sum(x));
    CHECK(x.grad() == Md::Ones(3, 1));

    x.zero_grad();
    backward(inner_product(x, x));
    CHECK((x.grad() - 2.0 * x.value()).norm() < 1e-15);

    CHECK_THROWS_AS(backward(mul(x, x)), std::invalid_argument);
}

TEST_CASE("softmax cross-entropy gradient") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Index n = dim(rng, 2, 12);
        const Td z = param(rng, n, 1, 1, -3.0, 3.0);
        const int k = static_cast<int>(rng.below(n));
        const std::vector<int> row{k};
        const std::vector<int> col{0};
        auto loss = [&] { return scale(sum(log(pick(softmax(z), row, col))), -1.0); };
        backward(loss());
        Md expected = softmax(Td::constant(z.value(), 1)).value();
        expected(k, 0) -= 1.0;
        CHECK((z.grad() - expected).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(check(loss, {z}) < 1e-8);
    }
}

TEST_CASE("gradient accumulation is linear across consumers") {
    Rng rng(4);
    const Td x = param(rng, 4, 3);
    const Td w1 = Td::constant(random_matrix(rng, 3, 2));
    const Td w2 = Td::constant(random_matrix(rng, 4, 3));

    backward(sum(tanh(matmul(x, w1))));
    const Md g1 = x.grad();
    x.zero_grad();
    backward(inner_product(x, w2));
    const Md g2 = x.grad();
    x.zero_grad();
    backward(add(sum(tanh(matmul(x, w1))), inner_product(x, w2)));
    CHECK((x.grad() - (g1 + g2)).cwiseAbs().maxCoeff() < 1e-14);

    // Leaf gradients accumulate across backward calls until cleared.
    x.zero_grad();
    backward(inner_product(x, w2));
    backward(inner_product(x, w2));
    CHECK((x.grad() - 2.0 * g2).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("unreachable parameters keep zero gradient") {
    Rng rng(5);
    const Td a = param(rng, 2, 2);
    Td b = param(rng, 2, 2);
    b.zero_grad();
    backward(sum(a));
    CHECK(b.grad().isZero());
}

TEST_CASE("shape errors name both shapes") {
    const Td a = Td::zeros(2, 3);
    const Td b = Td::zeros(4, 5);
    try {
        (void)matmul(a, b);
        FAIL("expected a shape error");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[4, 5]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(mul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(concat_cols<double>({a, b}), std::invalid_argument);
    const std::vector<int> bad{0, 7};
    CHECK_THROWS_AS(gather_rows(a, bad), std::invalid_argument);
    CHECK_THROWS_AS(segment_sum(a, std::vector<int>{0}, 1), std::invalid_argument);
}

TEST_CASE("no-grad guard records nothing") {
    Rng rng(6);
    const Td a = param(rng, 3, 3);
    {
        NoGradGuard guard;
        const Td y = tanh(a);
        CHECK_FALSE(y.requires_grad());
        CHECK(y.node()->parents.empty());
    }
    CHECK(tanh(a).requires_grad());
}

TEST_CASE("gradient check on every op over random shapes") {
    Rng rng(11);
    for (int trial = 0; trial < 8; ++trial) {
        CAPTURE(trial);
        const Eigen::Index r = dim(rng, 1, 6);
        const Eigen::Index c = dim(rng, 1, 6);
        const Eigen::Index k = dim(rng, 1, 6);
        const std::uint64_t s = rng.next_u64();

        const Td a = param(rng, r, c);
        const Td b = param(rng, r, c);
        const Td m = param(rng, c, k);
        const Td n = param(rng, k, c);
        const Td row = param(rng, c, 1, 1);
        const Td col = param(rng, r, 1, 1);
        const Td sc = param(rng, 1, 1, 0);
        const Td pos = param(rng, r, c, 2, 0.2, 2.0);

        CHECK(check([&] { return probe(matmul(a, m), s); }, {a, m}) < 1e-8);
        CHECK(check([&] { return probe(matmul_nt(a, n), s); }, {a, n}) < 1e-8);
        CHECK(check([&] { return probe(transpose(a), s); }, {a}) < 1e-8);
        CHECK(check([&] { return probe(add(a, b), s); }, {a, b}) < 1e-8);
        CHECK(check([&] { return probe(add(a, sc), s); }, {a, sc}) < 1e-8);
        CHECK(check([&] { return probe(sub(a, b), s); }, {a, b}) < 1e-8);
        CHECK(check([&] { return probe(mul(a, b), s); }, {a, b}) < 1e-8);
        CHECK(check([&] { return probe(add_row(a, row), s); }, {a, row}) < 1e-8);
        CHECK(check([&] { return probe(mul_col(a, col), s); }, {a, col}) < 1e-8);
        CHECK(check([&] { return probe(broadcast_scalar_mul(a, sc), s); }, {a, sc}) < 1e-8);
        CHECK(check([&] { return probe(scale(a, -1.7), s); }, {a}) < 1e-8);
        CHECK(check([&] { return probe(tanh(a), s); }, {a}) < 1e-8);
        CHECK(check([&] { return probe(sigmoid(a), s); }, {a}) < 1e-8);
        CHECK(check([&] { return probe(exp(a), s); }, {a}) < 1e-8);
        CHECK(check([&] { return probe(log(pos), s); }, {pos}) < 1e-7);
        CHECK(check([&] { return probe(concat_cols<double>({a, b, a}), s); }, {a, b}) < 1e-8);
        CHECK(check([&] { return probe(concat_rows<double>({a, b}), s); }, {a, b}) < 1e-8);
        CHECK(check([&] { return probe(reshape(a, c, r), s); }, {a}) < 1e-8);
        CHECK(check([&] { return sum(a); }, {a}) < 1e-8);
        CHECK(check([&] { return mean(a); }, {a}) < 1e-8);
        CHECK(check([&] { return inner_product(a, b); }, {a, b}) < 1e-8);
        CHECK(check([&] { return probe(row_dot(a, b), s); }, {a, b}) < 1e-8);
        CHECK(check([&] { return probe(outer_product(row, col), s); }, {row, col}) < 1e-8);
        CHECK(check([&] { return probe(softmax(row), s); }, {row}) < 1e-8);
        CHECK(check([&] { return probe(softmax_rows(a), s); }, {a}) < 1e-8);
        if (c >= 2) {
            CHECK(check([&] { return probe(slice_cols(a, 1, c - 1), s); }, {a}) < 1e-8);
        }
    }
}

TEST_CASE("leaky relu gradient away from the kink") {
    Rng rng(12);
    Md v = random_matrix(rng, 5, 4);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v.data()[i]) < 0.05) v.data()[i] = 0.3;
    }
    const Td a = Td::parameter(v);
    CHECK(check([&] { return probe(leaky_relu(a, 0.2), 9); }, {a}) < 1e-8);
    const Td y = leaky_relu(Td::vector({-2.0, 3.0}), 0.2);
    CHECK(y.value()(0, 0) == doctest::Approx(-0.4));
    CHECK(y.value()(1, 0) == 3.0);
}

TEST_CASE("log floor clamps value and zeroes gradient") {
    const Td x = Td::vector({0.0, std::exp(-1.0)}, true);
    const Td y = log(x);
    CHECK(y.value()(0, 0) == doctest::Approx(std::log(1e-12)));
    CHECK(y.value()(1, 0) == doctest::Approx(-1.0));
    backward(sum(y));
    CHECK(x.grad()(0, 0) == 0.0);
    CHECK(x.grad()(1, 0) == doctest::Approx(std::exp(1.0)));
}

TEST_CASE("graph plumbing ops: values and gradients") {
    Rng rng(21);
    for (int trial = 0; trial < 6; ++trial) {
        CAPTURE(trial);
        const Eigen::Index rows = dim(rng, 2, 7);
        const Eigen::Index c = dim(rng, 1, 4);
        const Eigen::Index e = dim(rng, 1, 15);
        const Eigen::Index segs = dim(rng, 1, 5);
        const std::uint64_t s = rng.next_u64();

        std::vector<int> seg(static_cast<std::size_t>(e));
        std::vector<int> idx(static_cast<std::size_t>(e));
        std::vector<int> idx_missing(static_cast<std::size_t>(e));
        std::vector<int> cols(static_cast<std::size_t>(e));
        for (std::size_t i = 0; i < seg.size(); ++i) {
            seg[i] = static_cast<int>(rng.below(segs));
            idx[i] = static_cast<int>(rng.below(rows));
            idx_missing[i] = static_cast<int>(rng.below(rows + 1)) - 1;
            cols[i] = static_cast<int>(rng.below(c));
        }
        const Td edges = param(rng, e, c, 2, -3.0, 3.0);
        const Td nodes = param(rng, rows, c);

        // Segment softmax sums to one per segment and column.
        const Td sm = segment_softmax(edges, seg, segs);
        Md totals = Md::Zero(segs, c);
        for (Eigen::Index i = 0; i < e; ++i) totals.row(seg[i]) += sm.value().row(i);
        for (Eigen::Index g = 0; g < segs; ++g) {
            for (Eigen::Index j = 0; j < c; ++j) {
                if (totals(g, j) != 0.0) CHECK(std::abs(totals(g, j) - 1.0) < 1e-12);
            }
        }
        const Td gathered = gather_rows(nodes, idx_missing);
        for (std::size_t i = 0; i < idx_missing.size(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            if (idx_missing[i] < 0) {
                CHECK(gathered.value().row(ii).isZero());
            } else {
                CHECK(gathered.value().row(ii) == nodes.value().row(idx_missing[i]));
            }
        }

        CHECK(check([&] { return probe(segment_softmax(edges, seg, segs), s); }, {edges}) < 1e-8);
        CHECK(check([&] { return probe(segment_sum(edges, seg, segs), s); }, {edges}) < 1e-8);
        CHECK(check([&] { return probe(gather_rows(nodes, idx), s); }, {nodes}) < 1e-8);
        CHECK(check([&] { return probe(gather_rows(nodes, idx_missing), s); }, {nodes}) < 1e-8);
        CHECK(check([&] { return probe(pick(nodes, idx_missing, cols), s); }, {nodes}) < 1e-8);
    }
}

TEST_CASE("typed edge ops: values and gradients") {
    Rng rng(31);
    for (int trial = 0; trial < 6; ++trial) {
        CAPTURE(trial);
        const Eigen::Index width = dim(rng, 1, 4);
        const Eigen::Index blocks = dim(rng, 1, 3);
        const Eigen::Index rows = dim(rng, 2, 6);
        const Eigen::Index e = dim(rng, 1, 12);
        const std::uint64_t s = rng.next_u64();

        const Td x0 = param(rng, rows, blocks * width);
        const Td x1 = param(rng, rows + 1, blocks * width);
        const Td bias = param(rng, blocks, width);
        const Td h = param(rng, rows, width);

        std::vector<std::vector<int>> rr(2, std::vector<int>(static_cast<std::size_t>(e)));
        std::vector<int> off(static_cast<std::size_t>(e));
        std::vector<int> brow(static_cast<std::size_t>(e));
        std::vector<int> ra(static_cast<std::size_t>(e));
        std::vector<int> rb(static_cast<std::size_t>(e));
        for (std::size_t k = 0; k < off.size(); ++k) {
            rr[0][k] = static_cast<int>(rng.below(rows + 1)) - 1;
            rr[1][k] = static_cast<int>(rng.below(rows + 2)) - 1;
            const int blk = static_cast<int>(rng.below(blocks));
            off[k] = blk * static_cast<int>(width);
            brow[k] = rng.below(4) == 0 ? -1 : blk;
            ra[k] = static_cast<int>(rng.below(rows));
            rb[k] = static_cast<int>(rng.below(rows));
        }

        const Td lin = edge_linear<double>({x0, x1}, rr, off, width, &bias, brow);
        for (std::size_t k = 0; k < off.size(); ++k) {
            Eigen::RowVectorXd want = Eigen::RowVectorXd::Zero(width);
            if (rr[0][k] >= 0) want += x0.value().row(rr[0][k]).segment(off[k], width);
            if (rr[1][k] >= 0) want += x1.value().row(rr[1][k]).segment(off[k], width);
            if (brow[k] >= 0) want += bias.value().row(brow[k]);
            CHECK((lin.value().row(static_cast<Eigen::Index>(k)) - want).norm() < 1e-14);
        }
        const Td bil = edge_bilinear(x0, h, ra, rb, off);
        for (std::size_t k = 0; k < off.size(); ++k) {
            const double want = x0.value().row(ra[k]).segment(off[k], width).dot(h.value().row(rb[k]));
            CHECK(std::abs(bil.value()(static_cast<Eigen::Index>(k), 0) - want) < 1e-14);
        }

        CHECK(check([&] { return probe(edge_linear<double>({x0, x1}, rr, off, width, &bias, brow), s); },
                    {x0, x1, bias}) < 1e-8);
        CHECK(check([&] { return probe(edge_linear<double>({x0}, {rr[0]}, off, width, nullptr, {}), s); }, {x0}) <
              1e-8);
        CHECK(check([&] { return probe(edge_bilinear(x0, h, ra, rb, off), s); }, {x0, h}) < 1e-8);

        const Td z = param(rng, e, blocks * width);
        const Td heads = param(rng, blocks, width);
        const Td alpha = param(rng, e, blocks);
        const Td hd = head_dot(z, heads);
        const Td hs = head_scale(z, alpha);
        for (Eigen::Index i = 0; i < e; ++i) {
            for (Eigen::Index k = 0; k < blocks; ++k) {
                const double want = z.value().row(i).segment(k * width, width).dot(heads.value().row(k));
                CHECK(std::abs(hd.value()(i, k) - want) < 1e-14);
                CHECK((hs.value().row(i).segment(k * width, width) -
                       alpha.value()(i, k) * z.value().row(i).segment(k * width, width))
                          .norm() < 1e-14);
            }
        }
        CHECK(check([&] { return probe(head_dot(z, heads), s); }, {z, heads}) < 1e-8);
        CHECK(check([&] { return probe(head_scale(z, alpha), s); }, {z, alpha}) < 1e-8);
    }
}

TEST_CASE("fused edge ops match their composed definitions") {
    Rng rng(47);
    for (int trial = 0; trial < 8; ++trial) {
        CAPTURE(trial);
        const Eigen::Index width = dim(rng, 1, 4);
        const Eigen::Index blocks = dim(rng, 1, 3);
        const Eigen::Index rows = dim(rng, 2, 6);
        const Eigen::Index e = dim(rng, 1, 12);
        const Eigen::Index nrecv = dim(rng, 1, 5);
        const std::uint64_t s = rng.next_u64();
        const bool use_scale = trial % 4 != 0;
        const bool use_post = trial % 2 == 1;
        const bool use_tanh = trial % 4 == 3 || trial % 4 == 1;

        const Td g = param(rng, rows, blocks * width + 2);
        const Td h = param(rng, rows, width);
        const Td bias = param(rng, blocks, width);
        const Td bvec = param(rng, blocks, 1, 1);
        const Td sc = param(rng, e + 1, 1, 1);
        const Td post = param(rng, 1, width);

        std::vector<int> r(static_cast<std::size_t>(e)), rb(r.size()), off(r.size()), typ(r.size()), si(r.size()),
            rcv(r.size()), ca(r.size()), cb(r.size());
        for (std::size_t k = 0; k < r.size(); ++k) {
            r[k] = static_cast<int>(rng.below(rows));
            rb[k] = static_cast<int>(rng.below(rows));
            typ[k] = static_cast<int>(rng.below(blocks));
            off[k] = typ[k] * static_cast<int>(width);
            si[k] = static_cast<int>(rng.below(e + 2)) - 1;
            rcv[k] = static_cast<int>(rng.below(nrecv));
            ca[k] = static_cast<int>(blocks * width);
            cb[k] = ca[k] + 1;
        }

        auto fused = [&] {
            return edge_message(g, r, off, bias, typ, use_scale ? &sc : nullptr, si, use_post ? &post : nullptr,
                                use_tanh, rcv, nrecv);
        };
        auto composed = [&] {
            Td m = edge_linear<double>({g}, {r}, off, width, &bias, typ);
            if (use_scale) m = mul_col(m, gather_rows(sc, si));
            if (use_post) m = add_row(m, post);
            if (use_tanh) m = tanh(m);
            return segment_sum(m, rcv, nrecv);
        };
        CHECK((fused().value() - composed().value()).norm() < 1e-12);

        std::vector<Td> ps{g, bias, sc, post};
        auto grads = [&](const std::function<Td()>& f) {
            for (const Td& p : ps) p.zero_grad();
            backward(probe(f(), s));
            std::vector<Md> out;
            for (const Td& p : ps) out.push_back(p.grad());
            return out;
        };
        const auto gf = grads(fused);
        const auto gc = grads(composed);
        for (std::size_t i = 0; i < ps.size(); ++i) CHECK((gf[i] - gc[i]).norm() < 1e-12);
        CHECK(check([&] { return probe(fused(), s); }, ps) < 1e-8);

        auto score = [&] { return edge_score(g, h, r, rb, off, ca, cb, bvec, typ); };
        auto score_composed = [&] {
            const Td bil = edge_bilinear(g, h, r, rb, off);
            return add(add(add(bil, pick(g, r, ca)), pick(g, rb, cb)),
                       reshape(gather_rows(bvec, typ), static_cast<Eigen::Index>(typ.size()), 1, 1));
        };
        CHECK((score().value() - score_composed().value()).norm() < 1e-12);
        CHECK(check([&] { return probe(score(), s); }, {g, h, bvec}) < 1e-8);
    }
    const Td g = Td::parameter(Md::Ones(2, 2));
    const Td b = Td::parameter(Md::Ones(1, 2));
    CHECK_THROWS_AS(edge_message<double>(g, std::vector<int>{0}, std::vector<int>{1}, b, std::vector<int>{0}, nullptr,
                                         {}, nullptr, false, std::vector<int>{0}, 1),
                    std::invalid_argument);
}

TEST_CASE("fused GRU cell matches the composed definition") {
    Rng rng(41);
    for (int trial = 0; trial < 5; ++trial) {
        const Eigen::Index d = dim(rng, 1, 5);
        const Eigen::Index r = dim(rng, 1, 6);
        const Td px = param(rng, r, 3 * d, 2, -2.0, 2.0);
        const Td h = param(rng, r, d);
        const Td wrz = param(rng, d, 2 * d);
        const Td wh = param(rng, d, d);

        auto composed = [&] {
            const Td gates = sigmoid(add(slice_cols(px, 0, 2 * d), matmul(h, wrz)));
            const Td rg = slice_cols(gates, 0, d);
            const Td zg = slice_cols(gates, d, d);
            const Td cand = tanh(add(slice_cols(px, 2 * d, d), matmul(mul(rg, h), wh)));
            const Td one = Td::constant(Md::Ones(r, d));
            return add(mul(sub(one, zg), h), mul(zg, cand));
        };
        const Td fused = gru_cell(px, h, wrz, wh);
        CHECK((fused.value() - composed().value()).cwiseAbs().maxCoeff() < 1e-14);
        const std::uint64_t s = rng.next_u64();
        CHECK(check([&] { return probe(gru_cell(px, h, wrz, wh), s); }, {px, h, wrz, wh}) < 1e-8);
    }

    // A strongly negative update-gate bias carries the state through.
    const Eigen::Index d = 3;
    Md pre = Md::Zero(2, 3 * d);
    pre.middleCols(d, d).setConstant(-40.0);
    const Td h = Td::constant(random_matrix(rng, 2, d));
    const Td out = gru_cell(Td::constant(pre), h, Td::constant(random_matrix(rng, d, 2 * d)),
                            Td::constant(random_matrix(rng, d, d)));
    CHECK((out.value() - h.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("grad_check examples") {
    Rng rng(51);
    const Td x = param(rng, 7, 9);
    CHECK(check([&] { return inner_product(x, x); }, {x}) < 1e-9);
    const Td y = param(rng, 3, 3);
    GradCheckOptions opt;
    std::vector<Td> ps{y};
    const auto res = grad_check<double>([] { return Td::scalar(2.5); }, ps, opt);
    CHECK(res.max_error == 0.0);
    CHECK(res.checked == 9);

    // A deliberately wrong rule is caught.
    const Td w = param(rng, 4, 1, 1);
    auto wrong = [&] {
        return make_result<double>(Md::Constant(1, 1, w.value().squaredNorm()), 0, {w}, [](Node<double>& self) {
            self.parents[0]->grad_buffer() += 3.0 * self.parents[0]->value;
        });
    };
    std::vector<Td> wp{w};
    CHECK(grad_check<double>(wrong, wp, opt).max_error > 1e-2);
}

TEST_CASE("adam examples") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        Td p = Td::parameter(Md::Constant(2, 2, 0.7));
        p.zero_grad();
        std::vector<Td> ps{p};
        AdamState<double> st;
        for (int i = 0; i < 3; ++i) adam_step(ps, st, 0.001, 1e-5, {false});
        CHECK(p.value() == Md::Constant(2, 2, 0.7));
    }
    SUBCASE("first step moves by lr against the gradient sign") {
        Td p = Td::parameter(Md::Constant(1, 1, 1.0));
        p.mutable_grad()(0, 0) = 1.0;
        std::vector<Td> ps{p};
        AdamState<double> st;
        adam_step(ps, st, 0.001, 0.0, {false});
        CHECK(p.value()(0, 0) == doctest::Approx(1.0 - 0.001).epsilon(1e-9));
        CHECK(st.step == 1);
    }
    SUBCASE("decay only") {
        Td p = Td::parameter(Md::Constant(1, 1, 2.0));
        p.zero_grad();
        std::vector<Td> ps{p};
        AdamState<double> st;
        adam_step(ps, st, 0.0005, 1e-5, {true});
        CHECK(p.value()(0, 0) == doctest::Approx(2.0 * (1.0 - 5e-9)).epsilon(1e-15));
    }
    SUBCASE("zero betas give sign descent") {
        Td p = Td::parameter(Md::Zero(3, 1), 1);
        std::vector<Td> ps{p};
        AdamState<double> st;
        st.beta1 = 0.0;
        st.beta2 = 0.0;
        st.eps = 1e-300;
        const std::vector<double> grads{2.0, -0.03, 50.0};
        for (int step = 0; step < 3; ++step) {
            for (int i = 0; i < 3; ++i) p.mutable_grad()(i, 0) = grads[static_cast<std::size_t>(i)];
            const Md before = p.value();
            adam_step(ps, st, 0.01, 0.0, {false});
            for (int i = 0; i < 3; ++i) {
                const double sign = grads[static_cast<std::size_t>(i)] > 0 ? 1.0 : -1.0;
                CHECK(p.value()(i, 0) == doctest::Approx(before(i, 0) - 0.01 * sign).epsilon(1e-12));
            }
        }
    }
    SUBCASE("mismatches throw") {
        Td p = Td::parameter(Md::Zero(2, 2));
        std::vector<Td> ps{p};
        AdamState<double> st;
        CHECK_THROWS_AS(adam_step(ps, st, 0.001, 0.0, {}), std::invalid_argument);
        CHECK_THROWS_AS(adam_step(ps, st, 0.0, 0.0, {false}), std::invalid_argument);
        st.m.push_back(Md::Zero(3, 3));
        st.v.push_back(Md::Zero(3, 3));
        CHECK_THROWS_AS(adam_step(ps, st, 0.001, 0.0, {false}), std::invalid_argument);
    }
}
