// Reverse-mode tape: forward values against hand-computed results, analytic
// gradients against central finite differences, and shape/error contracts.

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "sparqlgen/autodiff.hpp"
#include "sparqlgen/rng.hpp"

using namespace sparqlgen;
using ad::Param;
using ad::Tape;
using ad::Tensor;

namespace {

/// Rebuilds the graph from scratch on every call; returns the scalar loss and,
/// when asked, runs backward so gradients accumulate into the params.
using BuildFn = std::function<double(bool with_grad)>;

/// Central-difference check of every element of every listed parameter.
void expect_gradients_match(const std::vector<Param*>& params, const BuildFn& f,
                            double tol = 1e-4, double h = 1e-5) {
    for (Param* p : params) p->zero_grad();
    f(true);
    for (Param* p : params) {
        for (size_t i = 0; i < p->value.size(); ++i) {
            double orig = p->value.data[i];
            p->value.data[i] = orig + h;
            double up = f(false);
            p->value.data[i] = orig - h;
            double down = f(false);
            p->value.data[i] = orig;
            double numeric = (up - down) / (2.0 * h);
            double analytic = p->grad.data[i];
            double denom = std::max({std::abs(analytic), std::abs(numeric), 1.0});
            EXPECT_LE(std::abs(analytic - numeric), tol * denom)
                << p->name << "[" << i << "]: analytic=" << analytic << " numeric=" << numeric;
        }
    }
}

Tensor make(size_t r, size_t c, std::vector<double> vals) {
    Tensor t(r, c);
    t.data = std::move(vals);
    return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// forward values

TEST(Forward, MatmulAllTransposeCombinations) {
    Tensor a = make(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor at = make(3, 2, {1, 4, 2, 5, 3, 6});
    Tensor b = make(3, 2, {7, 8, 9, 10, 11, 12});
    Tensor bt = make(2, 3, {7, 9, 11, 8, 10, 12});
    const std::vector<double> expected = {58, 64, 139, 154};

    Tape tape;
    auto check = [&](Tape::Var v) {
        const Tensor& c = tape.value(v);
        ASSERT_EQ(c.rows, 2u);
        ASSERT_EQ(c.cols, 2u);
        for (size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(c.data[i], expected[i]);
    };
    check(tape.matmul(tape.input(a), tape.input(b)));
    check(tape.matmul(tape.input(at), tape.input(b), true, false));
    check(tape.matmul(tape.input(a), tape.input(bt), false, true));
    check(tape.matmul(tape.input(at), tape.input(bt), true, true));
}

TEST(Forward, AddBroadcastsBiasRow) {
    Tape tape;
    auto x = tape.input(make(2, 3, {1, 2, 3, 4, 5, 6}));
    auto bias = tape.input(make(1, 3, {10, 20, 30}));
    auto y = tape.add(x, bias);
    const Tensor& v = tape.value(y);
    EXPECT_DOUBLE_EQ(v.at(0, 0), 11);
    EXPECT_DOUBLE_EQ(v.at(0, 2), 33);
    EXPECT_DOUBLE_EQ(v.at(1, 1), 25);
}

TEST(Forward, ElementwiseOps) {
    Tape tape;
    auto x = tape.input(make(1, 3, {0.0, 1.0, -1.0}));
    const Tensor& sig = tape.value(tape.sigmoid(x));
    EXPECT_DOUBLE_EQ(sig.at(0, 0), 0.5);
    EXPECT_NEAR(sig.at(0, 1), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);

    const Tensor& th = tape.value(tape.tanh_op(x));
    EXPECT_NEAR(th.at(0, 1), std::tanh(1.0), 1e-15);

    auto e = tape.input(make(1, 1, {std::exp(1.0)}));
    EXPECT_NEAR(tape.value(tape.log_op(e)).at(0, 0), 1.0, 1e-15);

    const Tensor& sc = tape.value(tape.scale(x, -2.0));
    EXPECT_DOUBLE_EQ(sc.at(0, 1), -2.0);
    const Tensor& ac = tape.value(tape.add_const(x, 5.0));
    EXPECT_DOUBLE_EQ(ac.at(0, 2), 4.0);

    auto h = tape.hadamard(x, tape.input(make(1, 3, {2, 3, 4})));
    EXPECT_DOUBLE_EQ(tape.value(h).at(0, 2), -4.0);

    auto s = tape.input(make(1, 1, {3.0}));
    const Tensor& ms = tape.value(tape.mul_scalar(x, s));
    EXPECT_DOUBLE_EQ(ms.at(0, 1), 3.0);
}

TEST(Forward, SoftmaxRowsKnownCaseAndStability) {
    Tape tape;
    auto x = tape.input(make(1, 2, {0.0, std::log(3.0)}));
    const Tensor& p = tape.value(tape.softmax_rows(x));
    EXPECT_NEAR(p.at(0, 0), 0.25, 1e-12);
    EXPECT_NEAR(p.at(0, 1), 0.75, 1e-12);

    // enormous logits must not overflow
    auto big = tape.input(make(2, 3, {1000, 1000, 999, -1000, 0, 1000}));
    const Tensor& q = tape.value(tape.softmax_rows(big));
    for (size_t r = 0; r < 2; ++r) {
        double sum = 0.0;
        for (size_t j = 0; j < 3; ++j) {
            EXPECT_TRUE(std::isfinite(q.at(r, j)));
            sum += q.at(r, j);
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Forward, StructuralOps) {
    Tape tape;
    auto a = tape.input(make(1, 3, {1, 2, 3}));
    auto b = tape.input(make(1, 2, {4, 5}));
    const Tensor& cat = tape.value(tape.concat_cols(a, b));
    ASSERT_EQ(cat.cols, 5u);
    EXPECT_DOUBLE_EQ(cat.at(0, 3), 4);

    const Tensor& g = tape.value(tape.gather_cols(a, {2, 0, 2}));
    ASSERT_EQ(g.cols, 3u);
    EXPECT_DOUBLE_EQ(g.at(0, 0), 3);
    EXPECT_DOUBLE_EQ(g.at(0, 1), 1);
    EXPECT_DOUBLE_EQ(g.at(0, 2), 3);

    auto stacked = tape.stack_rows({a, a});
    const Tensor& st = tape.value(stacked);
    ASSERT_EQ(st.rows, 2u);
    EXPECT_DOUBLE_EQ(st.at(1, 2), 3);

    EXPECT_DOUBLE_EQ(tape.value(tape.pick(stacked, 1, 1)).at(0, 0), 2);
    EXPECT_DOUBLE_EQ(tape.value(tape.sum_all(stacked)).at(0, 0), 12);
}

// ---------------------------------------------------------------------------
// gradients: exact closed forms

TEST(Backward, SquaredNormHasGradientTwoX) {
    Param p("p", 1, 3);
    p.value = make(1, 3, {0.5, -1.25, 2.0});
    Tape tape;
    auto x = tape.leaf(p);
    auto loss = tape.sum_all(tape.hadamard(x, x));
    tape.backward(loss);
    for (size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(p.grad.data[i], 2.0 * p.value.data[i]);
}

TEST(Backward, ParamUsedTwiceAccumulatesBothPaths) {
    Param p("p", 1, 3);
    p.value = make(1, 3, {1.0, 2.0, 3.0});
    Tape tape;
    // two separate leaves of the same parameter: d/dp (p . p) = 2p as well
    auto loss = tape.sum_all(tape.matmul(tape.leaf(p), tape.leaf(p), false, true));
    EXPECT_DOUBLE_EQ(tape.value(loss).at(0, 0), 14.0);
    tape.backward(loss);
    for (size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(p.grad.data[i], 2.0 * p.value.data[i]);
}

TEST(Backward, EmbeddingRowsAccumulateDuplicates) {
    Param emb("emb", 3, 2);
    emb.value = make(3, 2, {1, 2, 3, 4, 5, 6});
    Tape tape;
    auto r1a = tape.row(emb, 1);
    auto r1b = tape.row(emb, 1);
    auto r2 = tape.row(emb, 2);
    auto loss = tape.sum_all(tape.stack_rows({r1a, r1b, r2}));
    EXPECT_DOUBLE_EQ(tape.value(loss).at(0, 0), 3 + 4 + 3 + 4 + 5 + 6);
    tape.backward(loss);
    EXPECT_DOUBLE_EQ(emb.grad.at(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(emb.grad.at(1, 0), 2.0);  // row 1 appears twice
    EXPECT_DOUBLE_EQ(emb.grad.at(1, 1), 2.0);
    EXPECT_DOUBLE_EQ(emb.grad.at(2, 0), 1.0);
}

TEST(Backward, RepeatedBackwardAccumulatesParamGradsButNotInternals) {
    Param p("p", 1, 2);
    p.value = make(1, 2, {3.0, 4.0});
    Tape tape;
    auto x = tape.leaf(p);
    auto loss = tape.sum_all(tape.hadamard(x, x));
    tape.backward(loss);
    tape.backward(loss);  // internal adjoints reset; param grads accumulate
    EXPECT_DOUBLE_EQ(p.grad.data[0], 4.0 * 3.0);
    EXPECT_DOUBLE_EQ(p.grad.data[1], 4.0 * 4.0);
    p.zero_grad();
    EXPECT_DOUBLE_EQ(p.grad.data[0], 0.0);
}

// ---------------------------------------------------------------------------
// gradients: finite differences, one op at a time
//
// Each loss multiplies the op output elementwise by fixed distinct weights
// before summing, so misrouted indices change the answer.

namespace {

BuildFn weighted_sum_loss(Param& p, const std::function<Tape::Var(Tape&, Tape::Var)>& op,
                          std::vector<double> weights_for_output) {
    auto weights = std::make_shared<std::vector<double>>(std::move(weights_for_output));
    return [&p, op, weights](bool with_grad) {
        Tape tape;
        auto out = op(tape, tape.leaf(p));
        Tensor w(tape.value(out).rows, tape.value(out).cols);
        w.data = *weights;
        auto loss = tape.sum_all(tape.hadamard(out, tape.input(std::move(w))));
        double v = tape.value(loss).at(0, 0);
        if (with_grad) tape.backward(loss);
        return v;
    };
}

}  // namespace

TEST(Gradcheck, SigmoidTanhLogSoftmax) {
    Param p("p", 1, 4);
    p.value = make(1, 4, {0.3, -0.7, 1.2, 0.05});
    std::vector<double> w = {1.0, -2.0, 0.5, 3.0};

    expect_gradients_match({&p}, weighted_sum_loss(p, [](Tape& t, Tape::Var x) { return t.sigmoid(x); }, w));
    expect_gradients_match({&p}, weighted_sum_loss(p, [](Tape& t, Tape::Var x) { return t.tanh_op(x); }, w));
    expect_gradients_match({&p}, weighted_sum_loss(p, [](Tape& t, Tape::Var x) { return t.softmax_rows(x); }, w));
    expect_gradients_match(
        {&p}, weighted_sum_loss(
                  p, [](Tape& t, Tape::Var x) { return t.log_op(t.add_const(t.sigmoid(x), 0.5)); }, w));
}

TEST(Gradcheck, ScaleAddConstHadamardAdd) {
    Param p("p", 2, 2);
    p.value = make(2, 2, {0.1, -0.4, 0.9, 0.2});
    std::vector<double> w = {2.0, -1.0, 0.25, 4.0};

    expect_gradients_match({&p}, weighted_sum_loss(p, [](Tape& t, Tape::Var x) { return t.scale(x, -1.7); }, w));
    expect_gradients_match(
        {&p}, weighted_sum_loss(p, [](Tape& t, Tape::Var x) { return t.add_const(x, 2.5); }, w));
    expect_gradients_match(
        {&p}, weighted_sum_loss(p, [](Tape& t, Tape::Var x) { return t.hadamard(x, t.scale(x, 0.5)); }, w));
    expect_gradients_match(
        {&p}, weighted_sum_loss(p, [](Tape& t, Tape::Var x) { return t.add(x, t.hadamard(x, x)); }, w));
}

TEST(Gradcheck, MatmulAllTransposeModes) {
    Param a("a", 2, 3), b("b", 3, 2);
    a.value = make(2, 3, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6});
    b.value = make(3, 2, {0.7, -0.8, 0.9, 1.0, -1.1, 1.2});
    std::vector<double> w = {1.0, -2.0, 3.0, 0.5};

    for (int mode = 0; mode < 4; ++mode) {
        bool ta = mode & 1, tb = mode & 2;
        BuildFn f = [&, ta, tb](bool with_grad) {
            Tape tape;
            // orient each operand so the product is always 2x2
            auto va = tape.leaf(a);
            auto vb = tape.leaf(b);
            Tape::Var prod = ta ? (tb ? tape.matmul(vb, va, true, true)
                                      : tape.matmul(vb, vb, true, false))
                                : (tb ? tape.matmul(va, va, false, true)
                                      : tape.matmul(va, vb, false, false));
            Tensor wt(tape.value(prod).rows, tape.value(prod).cols);
            for (size_t i = 0; i < wt.size(); ++i) wt.data[i] = w[i % w.size()];
            auto loss = tape.sum_all(tape.hadamard(prod, tape.input(std::move(wt))));
            double v = tape.value(loss).at(0, 0);
            if (with_grad) tape.backward(loss);
            return v;
        };
        expect_gradients_match({&a, &b}, f);
    }
}

TEST(Gradcheck, BiasBroadcastAndMulScalar) {
    Param x("x", 3, 2), bias("bias", 1, 2), s("s", 1, 1);
    x.value = make(3, 2, {0.2, -0.1, 0.5, 0.3, -0.7, 0.9});
    bias.value = make(1, 2, {0.4, -0.6});
    s.value = make(1, 1, {1.3});
    BuildFn f = [&](bool with_grad) {
        Tape tape;
        auto y = tape.mul_scalar(tape.add(tape.leaf(x), tape.leaf(bias)), tape.leaf(s));
        Tensor w(3, 2);
        w.data = {1, 2, 3, -1, -2, -3};
        auto loss = tape.sum_all(tape.hadamard(y, tape.input(std::move(w))));
        double v = tape.value(loss).at(0, 0);
        if (with_grad) tape.backward(loss);
        return v;
    };
    expect_gradients_match({&x, &bias, &s}, f);
}

TEST(Gradcheck, GatherConcatStackPickWithDuplicates) {
    Param p("p", 1, 5);
    p.value = make(1, 5, {0.1, 0.2, 0.3, 0.4, 0.5});
    BuildFn f = [&](bool with_grad) {
        Tape tape;
        auto x = tape.leaf(p);
        auto gathered = tape.gather_cols(x, {4, 1, 4, 0});   // duplicate column 4
        auto cat = tape.concat_cols(gathered, x);            // 1x9
        auto stacked = tape.stack_rows({cat, cat});          // duplicate row var
        auto corner = tape.pick(stacked, 1, 0);
        auto loss = tape.add(tape.sum_all(tape.hadamard(stacked, stacked)),
                             tape.scale(corner, 3.0));
        double v = tape.value(loss).at(0, 0);
        if (with_grad) tape.backward(loss);
        return v;
    };
    expect_gradients_match({&p}, f);
}

TEST(Gradcheck, EmbeddingRowsThroughModel) {
    Param emb("emb", 4, 3);
    rng::Rng gen(11);
    ad::init_uniform(emb, gen, 0.5);
    BuildFn f = [&](bool with_grad) {
        Tape tape;
        auto seq = tape.stack_rows({tape.row(emb, 2), tape.row(emb, 0), tape.row(emb, 2)});
        auto probs = tape.softmax_rows(seq);
        auto loss = tape.scale(tape.log_op(tape.add_const(tape.pick(probs, 1, 1), 1e-9)), -1.0);
        double v = tape.value(loss).at(0, 0);
        if (with_grad) tape.backward(loss);
        return v;
    };
    expect_gradients_match({&emb}, f);
}

// ---------------------------------------------------------------------------
// gradients: composed graphs

TEST(Gradcheck, TwoLayerSoftmaxClassifier) {
    Param w1("w1", 3, 4), b1("b1", 1, 4), w2("w2", 4, 3), b2("b2", 1, 3);
    rng::Rng gen(99);
    for (Param* p : {&w1, &b1, &w2, &b2}) ad::init_uniform(*p, gen, 0.6);
    Tensor x = make(2, 3, {0.5, -0.2, 0.8, -0.4, 0.9, 0.1});
    const size_t targets[2] = {2, 0};

    BuildFn f = [&](bool with_grad) {
        Tape tape;
        auto h = tape.tanh_op(tape.add(tape.matmul(tape.input(x), tape.leaf(w1)), tape.leaf(b1)));
        auto probs = tape.softmax_rows(tape.add(tape.matmul(h, tape.leaf(w2)), tape.leaf(b2)));
        Tape::Var total = tape.input(Tensor(1, 1));
        for (size_t r = 0; r < 2; ++r) {
            auto nll = tape.log_op(tape.add_const(tape.pick(probs, r, targets[r]), 1e-12));
            total = tape.add(total, nll);
        }
        auto loss = tape.scale(total, -0.5);
        double v = tape.value(loss).at(0, 0);
        if (with_grad) tape.backward(loss);
        return v;
    };
    expect_gradients_match({&w1, &b1, &w2, &b2}, f);
}

TEST(Gradcheck, GatedMixtureOfTwoDistributions) {
    // the same shape of computation the generation/copy blend uses:
    // gate = sigmoid(dec . B); p = gate * softmax(dec W)[t1] + (1-gate) * softmax(att at candidates)[t2]
    Param dec("dec", 1, 4), gate_w("gate_w", 4, 1), gen_w("gen_w", 4, 6), att("att", 1, 5);
    rng::Rng gen(123);
    for (Param* p : {&dec, &gate_w, &gen_w, &att}) ad::init_uniform(*p, gen, 0.7);

    BuildFn f = [&](bool with_grad) {
        Tape tape;
        auto d = tape.leaf(dec);
        auto gate = tape.sigmoid(tape.matmul(d, tape.leaf(gate_w)));  // 1x1
        auto p_gen = tape.softmax_rows(tape.matmul(d, tape.leaf(gen_w)));
        auto p_att = tape.softmax_rows(tape.gather_cols(tape.leaf(att), {0, 3, 3, 2}));
        auto inv_gate = tape.add_const(tape.scale(gate, -1.0), 1.0);
        auto mixed = tape.add(tape.mul_scalar(tape.pick(p_gen, 0, 2), gate),
                              tape.mul_scalar(tape.pick(p_att, 0, 1), inv_gate));
        auto loss = tape.scale(tape.log_op(tape.add_const(mixed, 1e-12)), -1.0);
        double v = tape.value(loss).at(0, 0);
        if (with_grad) tape.backward(loss);
        return v;
    };
    expect_gradients_match({&dec, &gate_w, &gen_w, &att}, f);
}

TEST(Gradcheck, LongChainSurvivesNodeVectorReallocation) {
    Param p("p", 1, 4);
    p.value = make(1, 4, {0.3, -0.2, 0.1, 0.4});
    BuildFn f = [&](bool with_grad) {
        Tape tape;
        auto v = tape.leaf(p);
        for (int i = 0; i < 200; ++i) v = tape.tanh_op(tape.scale(v, 1.01));
        auto loss = tape.sum_all(v);
        double out = tape.value(loss).at(0, 0);
        if (with_grad) {
            EXPECT_EQ(tape.node_count(), 1u + 400u + 1u);
            tape.backward(loss);
        }
        return out;
    };
    expect_gradients_match({&p}, f);
}

// ---------------------------------------------------------------------------
// contracts

TEST(Contracts, ShapeMismatchesThrow) {
    Tape tape;
    auto a23 = tape.input(Tensor(2, 3, 1.0));
    auto a22 = tape.input(Tensor(2, 2, 1.0));
    EXPECT_THROW(tape.matmul(a23, a23), std::invalid_argument);
    EXPECT_THROW(tape.add(a23, a22), std::invalid_argument);
    EXPECT_THROW(tape.hadamard(a23, a22), std::invalid_argument);
    EXPECT_THROW(tape.mul_scalar(a23, a22), std::invalid_argument);
    EXPECT_THROW(tape.concat_cols(a23, tape.input(Tensor(3, 1, 0.0))), std::invalid_argument);
    EXPECT_THROW(tape.gather_cols(a23, {0}), std::invalid_argument);  // not a row vector
    auto row = tape.input(Tensor(1, 3, 1.0));
    EXPECT_THROW(tape.gather_cols(row, {3}), std::out_of_range);
    EXPECT_THROW(tape.stack_rows({}), std::invalid_argument);
    EXPECT_THROW(tape.stack_rows({row, a23}), std::invalid_argument);
    EXPECT_THROW(tape.pick(a23, 2, 0), std::out_of_range);
    EXPECT_THROW(tape.backward(a23), std::invalid_argument);  // loss must be 1x1
    Param p("p", 2, 2);
    EXPECT_THROW(tape.row(p, 2), std::out_of_range);
}

TEST(Contracts, ClearResetsTape) {
    Tape tape;
    auto x = tape.input(Tensor(1, 2, 1.0));
    tape.sigmoid(x);
    EXPECT_GT(tape.node_count(), 0u);
    tape.clear();
    EXPECT_EQ(tape.node_count(), 0u);
}

TEST(Contracts, InitUniformBoundedAndDeterministic) {
    Param a("a", 10, 10), b("b", 10, 10);
    rng::Rng g1(42), g2(42);
    ad::init_uniform(a, g1, 0.08);
    ad::init_uniform(b, g2, 0.08);
    bool any_nonzero = false;
    for (size_t i = 0; i < a.value.size(); ++i) {
        EXPECT_LE(std::abs(a.value.data[i]), 0.08);
        EXPECT_DOUBLE_EQ(a.value.data[i], b.value.data[i]);
        if (a.value.data[i] != 0.0) any_nonzero = true;
    }
    EXPECT_TRUE(any_nonzero);
}
