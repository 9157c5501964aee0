#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparqlgen/rng.hpp"

/// Reverse-mode automatic differentiation over small dense row-major matrices.
/// A Tape records operations as they execute; backward() replays them in
/// reverse, accumulating adjoints into Param gradients. Sized for the toy
/// models in this project (vectors and matrices up to a few hundred columns).
namespace sparqlgen::ad {

struct Tensor {
    size_t rows = 0, cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(size_t r, size_t c) { return data[r * cols + c]; }
    double at(size_t r, size_t c) const { return data[r * cols + c]; }
    size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

inline Tensor matmul_raw(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false) {
    size_t am = ta ? a.cols : a.rows, ak = ta ? a.rows : a.cols;
    size_t bk = tb ? b.cols : b.rows, bn = tb ? b.rows : b.cols;
    if (ak != bk)
        throw std::invalid_argument("matmul shape mismatch: inner " + std::to_string(ak) + " vs " +
                                    std::to_string(bk));
    Tensor c(am, bn);
    for (size_t i = 0; i < am; ++i)
        for (size_t k = 0; k < ak; ++k) {
            double av = ta ? a.at(k, i) : a.at(i, k);
            if (av == 0.0) continue;
            for (size_t j = 0; j < bn; ++j) {
                double bv = tb ? b.at(j, k) : b.at(k, j);
                c.at(i, j) += av * bv;
            }
        }
    return c;
}

inline void add_into(Tensor& dst, const Tensor& src) {
    if (!dst.same_shape(src)) throw std::invalid_argument("add_into shape mismatch");
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

/// Trainable parameter: value plus persistent gradient accumulator.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, size_t r, size_t c) : name(std::move(n)), value(r, c), grad(r, c) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

inline void init_uniform(Param& p, rng::Rng& gen, double scale) {
    for (double& v : p.value.data) v = gen.uniform(-scale, scale);
}

class Tape {
public:
    struct Var {
        int id = -1;
        size_t rows = 0, cols = 0;
    };

    void clear() {
        values_.clear();
        grads_.clear();
        nodes_.clear();
    }

    size_t node_count() const { return nodes_.size(); }

    const Tensor& value(Var v) const { return values_[size_t(v.id)]; }
    Tensor& grad(Var v) { return grads_[size_t(v.id)]; }

    /// Constant input; no gradient flows out of it.
    Var input(Tensor t) { return alloc(std::move(t)); }

    /// Parameter leaf; backward adds the adjoint into p.grad.
    Var leaf(Param& p) {
        Var v = alloc(p.value);
        Param* pp = &p;
        nodes_.push_back([this, pp, v] { add_into(pp->grad, grads_[size_t(v.id)]); });
        return v;
    }

    /// One row of an embedding-style parameter as a 1×cols vector.
    Var row(Param& p, size_t r) {
        if (r >= p.value.rows) throw std::out_of_range("embedding row out of range");
        Tensor t(1, p.value.cols);
        for (size_t c = 0; c < p.value.cols; ++c) t.at(0, c) = p.value.at(r, c);
        Var v = alloc(std::move(t));
        Param* pp = &p;
        nodes_.push_back([this, pp, v, r] {
            const Tensor& g = grads_[size_t(v.id)];
            for (size_t c = 0; c < pp->value.cols; ++c) pp->grad.at(r, c) += g.at(0, c);
        });
        return v;
    }

    Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
        Tensor c = matmul_raw(value(a), value(b), ta, tb);
        Var out = alloc(std::move(c));
        capture3(out, a, b, [this, a, b, out, ta, tb] {
            const Tensor& dc = grads_[size_t(out.id)];
            const Tensor& av = values_[size_t(a.id)];
            const Tensor& bv = values_[size_t(b.id)];
            Tensor da, db;
            if (!ta && !tb) {
                da = matmul_raw(dc, bv, false, true);
                db = matmul_raw(av, dc, true, false);
            } else if (ta && !tb) {
                da = matmul_raw(bv, dc, false, true);
                db = matmul_raw(av, dc, false, false);
            } else if (!ta && tb) {
                da = matmul_raw(dc, bv, false, false);
                db = matmul_raw(dc, av, true, false);
            } else {
                da = matmul_raw(bv, dc, true, true);
                db = matmul_raw(dc, av, true, true);
            }
            add_into(grads_[size_t(a.id)], da);
            add_into(grads_[size_t(b.id)], db);
        });
        return out;
    }

    /// Elementwise sum; b may also be a 1×cols bias broadcast over a's rows.
    Var add(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        bool broadcast = !av.same_shape(bv);
        if (broadcast && !(bv.rows == 1 && bv.cols == av.cols))
            throw std::invalid_argument("add: incompatible shapes");
        Tensor c = av;
        for (size_t r = 0; r < c.rows; ++r)
            for (size_t j = 0; j < c.cols; ++j) c.at(r, j) += broadcast ? bv.at(0, j) : bv.at(r, j);
        Var out = alloc(std::move(c));
        capture3(out, a, b, [this, a, b, out, broadcast] {
            const Tensor& dc = grads_[size_t(out.id)];
            add_into(grads_[size_t(a.id)], dc);
            Tensor& db = grads_[size_t(b.id)];
            if (!broadcast) {
                add_into(db, dc);
            } else {
                for (size_t r = 0; r < dc.rows; ++r)
                    for (size_t j = 0; j < dc.cols; ++j) db.at(0, j) += dc.at(r, j);
            }
        });
        return out;
    }

    Var hadamard(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (!av.same_shape(bv)) throw std::invalid_argument("hadamard shape mismatch");
        Tensor c = av;
        for (size_t i = 0; i < c.size(); ++i) c.data[i] *= bv.data[i];
        Var out = alloc(std::move(c));
        capture3(out, a, b, [this, a, b, out] {
            const Tensor& dc = grads_[size_t(out.id)];
            const Tensor& av2 = values_[size_t(a.id)];
            const Tensor& bv2 = values_[size_t(b.id)];
            Tensor& da = grads_[size_t(a.id)];
            Tensor& db = grads_[size_t(b.id)];
            for (size_t i = 0; i < dc.size(); ++i) {
                da.data[i] += dc.data[i] * bv2.data[i];
                db.data[i] += dc.data[i] * av2.data[i];
            }
        });
        return out;
    }

    Var scale(Var a, double s) {
        Tensor c = value(a);
        for (double& v : c.data) v *= s;
        Var out = alloc(std::move(c));
        capture1(out, a, [this, a, out, s] {
            const Tensor& dc = grads_[size_t(out.id)];
            Tensor& da = grads_[size_t(a.id)];
            for (size_t i = 0; i < dc.size(); ++i) da.data[i] += dc.data[i] * s;
        });
        return out;
    }

    Var add_const(Var a, double c0) {
        Tensor c = value(a);
        for (double& v : c.data) v += c0;
        Var out = alloc(std::move(c));
        capture1(out, a, [this, a, out] {
            add_into(grads_[size_t(a.id)], grads_[size_t(out.id)]);
        });
        return out;
    }

    /// Multiply every element of a by a 1×1 scalar variable.
    Var mul_scalar(Var a, Var s) {
        const Tensor& sv = value(s);
        if (sv.rows != 1 || sv.cols != 1) throw std::invalid_argument("mul_scalar: s must be 1x1");
        double sval = sv.at(0, 0);
        Tensor c = value(a);
        for (double& v : c.data) v *= sval;
        Var out = alloc(std::move(c));
        capture3(out, a, s, [this, a, s, out, sval] {
            const Tensor& dc = grads_[size_t(out.id)];
            const Tensor& av = values_[size_t(a.id)];
            Tensor& da = grads_[size_t(a.id)];
            double acc = 0.0;
            for (size_t i = 0; i < dc.size(); ++i) {
                da.data[i] += dc.data[i] * sval;
                acc += dc.data[i] * av.data[i];
            }
            grads_[size_t(s.id)].at(0, 0) += acc;
        });
        return out;
    }

    Var sigmoid(Var a) {
        Tensor c = value(a);
        for (double& v : c.data) v = 1.0 / (1.0 + std::exp(-v));
        Var out = alloc(std::move(c));
        capture1(out, a, [this, a, out] {
            const Tensor& dc = grads_[size_t(out.id)];
            const Tensor& y = values_[size_t(out.id)];
            Tensor& da = grads_[size_t(a.id)];
            for (size_t i = 0; i < dc.size(); ++i)
                da.data[i] += dc.data[i] * y.data[i] * (1.0 - y.data[i]);
        });
        return out;
    }

    Var tanh_op(Var a) {
        Tensor c = value(a);
        for (double& v : c.data) v = std::tanh(v);
        Var out = alloc(std::move(c));
        capture1(out, a, [this, a, out] {
            const Tensor& dc = grads_[size_t(out.id)];
            const Tensor& y = values_[size_t(out.id)];
            Tensor& da = grads_[size_t(a.id)];
            for (size_t i = 0; i < dc.size(); ++i)
                da.data[i] += dc.data[i] * (1.0 - y.data[i] * y.data[i]);
        });
        return out;
    }

    /// Row-wise numerically stable softmax.
    Var softmax_rows(Var a) {
        Tensor c = value(a);
        for (size_t r = 0; r < c.rows; ++r) {
            double mx = c.at(r, 0);
            for (size_t j = 1; j < c.cols; ++j) mx = std::max(mx, c.at(r, j));
            double sum = 0.0;
            for (size_t j = 0; j < c.cols; ++j) {
                double e = std::exp(c.at(r, j) - mx);
                c.at(r, j) = e;
                sum += e;
            }
            for (size_t j = 0; j < c.cols; ++j) c.at(r, j) /= sum;
        }
        Var out = alloc(std::move(c));
        capture1(out, a, [this, a, out] {
            const Tensor& dc = grads_[size_t(out.id)];
            const Tensor& y = values_[size_t(out.id)];
            Tensor& da = grads_[size_t(a.id)];
            for (size_t r = 0; r < y.rows; ++r) {
                double dot = 0.0;
                for (size_t j = 0; j < y.cols; ++j) dot += dc.at(r, j) * y.at(r, j);
                for (size_t j = 0; j < y.cols; ++j)
                    da.at(r, j) += y.at(r, j) * (dc.at(r, j) - dot);
            }
        });
        return out;
    }

    /// Elementwise natural log; caller guarantees positive inputs (use a floor).
    Var log_op(Var a) {
        Tensor c = value(a);
        for (double& v : c.data) v = std::log(v);
        Var out = alloc(std::move(c));
        capture1(out, a, [this, a, out] {
            const Tensor& dc = grads_[size_t(out.id)];
            const Tensor& x = values_[size_t(a.id)];
            Tensor& da = grads_[size_t(a.id)];
            for (size_t i = 0; i < dc.size(); ++i) da.data[i] += dc.data[i] / x.data[i];
        });
        return out;
    }

    /// Single element as a 1×1 variable.
    Var pick(Var a, size_t r, size_t c) {
        const Tensor& av = value(a);
        if (r >= av.rows || c >= av.cols) throw std::out_of_range("pick index out of range");
        Tensor t(1, 1);
        t.at(0, 0) = av.at(r, c);
        Var out = alloc(std::move(t));
        capture1(out, a, [this, a, out, r, c] {
            grads_[size_t(a.id)].at(r, c) += grads_[size_t(out.id)].at(0, 0);
        });
        return out;
    }

    /// Horizontal concatenation [a | b]; rows must match.
    Var concat_cols(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (av.rows != bv.rows) throw std::invalid_argument("concat_cols row mismatch");
        Tensor c(av.rows, av.cols + bv.cols);
        for (size_t r = 0; r < c.rows; ++r) {
            for (size_t j = 0; j < av.cols; ++j) c.at(r, j) = av.at(r, j);
            for (size_t j = 0; j < bv.cols; ++j) c.at(r, av.cols + j) = bv.at(r, j);
        }
        Var out = alloc(std::move(c));
        size_t ac = av.cols;
        capture3(out, a, b, [this, a, b, out, ac] {
            const Tensor& dc = grads_[size_t(out.id)];
            Tensor& da = grads_[size_t(a.id)];
            Tensor& db = grads_[size_t(b.id)];
            for (size_t r = 0; r < dc.rows; ++r) {
                for (size_t j = 0; j < da.cols; ++j) da.at(r, j) += dc.at(r, j);
                for (size_t j = 0; j < db.cols; ++j) db.at(r, j) += dc.at(r, ac + j);
            }
        });
        return out;
    }

    /// Select columns of a 1×n vector into a 1×|idx| vector.
    Var gather_cols(Var a, const std::vector<size_t>& idx) {
        const Tensor& av = value(a);
        if (av.rows != 1) throw std::invalid_argument("gather_cols expects a row vector");
        Tensor c(1, idx.size());
        for (size_t j = 0; j < idx.size(); ++j) {
            if (idx[j] >= av.cols) throw std::out_of_range("gather_cols index out of range");
            c.at(0, j) = av.at(0, idx[j]);
        }
        Var out = alloc(std::move(c));
        auto indices = idx;
        capture1(out, a, [this, a, out, indices] {
            const Tensor& dc = grads_[size_t(out.id)];
            Tensor& da = grads_[size_t(a.id)];
            for (size_t j = 0; j < indices.size(); ++j) da.at(0, indices[j]) += dc.at(0, j);
        });
        return out;
    }

    /// Stack row vectors (all 1×c) into an n×c matrix.
    Var stack_rows(const std::vector<Var>& rows) {
        if (rows.empty()) throw std::invalid_argument("stack_rows of nothing");
        size_t c = rows.front().cols;
        for (const auto& r : rows)
            if (r.rows != 1 || r.cols != c) throw std::invalid_argument("stack_rows shape mismatch");
        Tensor t(rows.size(), c);
        for (size_t r = 0; r < rows.size(); ++r)
            for (size_t j = 0; j < c; ++j) t.at(r, j) = value(rows[r]).at(0, j);
        Var out = alloc(std::move(t));
        auto ids = rows;
        nodes_.push_back([this, out, ids] {
            const Tensor& dc = grads_[size_t(out.id)];
            for (size_t r = 0; r < ids.size(); ++r) {
                Tensor& dr = grads_[size_t(ids[r].id)];
                for (size_t j = 0; j < dc.cols; ++j) dr.at(0, j) += dc.at(r, j);
            }
        });
        return out;
    }

    Var sum_all(Var a) {
        const Tensor& av = value(a);
        Tensor c(1, 1);
        for (double v : av.data) c.at(0, 0) += v;
        Var out = alloc(std::move(c));
        capture1(out, a, [this, a, out] {
            double d = grads_[size_t(out.id)].at(0, 0);
            Tensor& da = grads_[size_t(a.id)];
            for (double& v : da.data) v += d;
        });
        return out;
    }

    /// Seed d(loss)/d(loss) = 1 and sweep the tape in reverse.
    void backward(Var loss) {
        const Tensor& lv = value(loss);
        if (lv.rows != 1 || lv.cols != 1)
            throw std::invalid_argument("backward expects a scalar (1x1) loss");
        for (auto& g : grads_) std::fill(g.data.begin(), g.data.end(), 0.0);
        grads_[size_t(loss.id)].at(0, 0) = 1.0;
        for (size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
    }

private:
    Var alloc(Tensor t) {
        Var v{int(values_.size()), t.rows, t.cols};
        grads_.emplace_back(t.rows, t.cols);
        values_.push_back(std::move(t));
        return v;
    }

    template <typename F>
    void capture1(Var, Var, F f) {
        nodes_.push_back(std::function<void()>(std::move(f)));
    }
    template <typename F>
    void capture3(Var, Var, Var, F f) {
        nodes_.push_back(std::function<void()>(std::move(f)));
    }

    // Closures capture variable ids (never element addresses), so the vectors
    // below may reallocate freely as the tape grows.
    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
    std::vector<std::function<void()>> nodes_;
};

}  // namespace sparqlgen::ad
