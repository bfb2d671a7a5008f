#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adiag/errors.hpp"
#include "adiag/rng.hpp"

// Reverse-mode autodiff over dense 64-bit matrices.
//
// Every operation computes its result eagerly. When an active Tape is
// installed (see TapeScope) and at least one input wants gradients, the op
// also records a closure that propagates the output's adjoint back into the
// inputs' adjoints. backward() zeroes all adjoints reachable from the tape,
// seeds the loss with 1 and replays the closures in reverse order, so two
// consecutive backward calls from the same tape agree bit for bit.
//
// Tensors recorded on a tape are treated as frozen: mutating one afterwards
// invalidates the stored backward rules.

namespace adiag {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad; // empty until backward() touches this tensor
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() : data_(std::make_shared<TensorData>()) {}

    static Tensor zeros(Shape shape) {
        Tensor t;
        const std::size_t n = shape_numel(shape);
        t.data_->shape = std::move(shape);
        t.data_->values.assign(n, 0.0);
        return t;
    }

    static Tensor full(Shape shape, double value) {
        Tensor t = zeros(std::move(shape));
        for (double& v : t.data_->values) v = value;
        return t;
    }

    static Tensor from_values(Shape shape, std::vector<double> values) {
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("from_values: shape " + shape_str(shape) + " wants " +
                                 std::to_string(shape_numel(shape)) + " values, got " +
                                 std::to_string(values.size()));
        }
        Tensor t;
        t.data_->shape = std::move(shape);
        t.data_->values = std::move(values);
        return t;
    }

    static Tensor scalar(double v) { return from_values({1, 1}, {v}); }

    static Tensor identity(int n) {
        Tensor t = zeros({n, n});
        for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
        Tensor t = zeros(std::move(shape));
        for (double& v : t.data_->values) v = rng.uniform(lo, hi);
        return t;
    }

    const Shape& shape() const { return data_->shape; }
    std::size_t size() const { return data_->values.size(); }

    int rank() const { return static_cast<int>(data_->shape.size()); }

    int rows() const {
        require_rank2("rows()");
        return data_->shape[0];
    }

    int cols() const {
        require_rank2("cols()");
        return data_->shape[1];
    }

    double* data() { return data_->values.data(); }
    const double* data() const { return data_->values.data(); }
    const std::vector<double>& values() const { return data_->values; }

    double& at(int r, int c) {
        require_rank2("at()");
        return data_->values[static_cast<std::size_t>(r) * data_->shape[1] + c];
    }

    double at(int r, int c) const {
        require_rank2("at()");
        return data_->values[static_cast<std::size_t>(r) * data_->shape[1] + c];
    }

    double item() const {
        if (size() != 1) {
            throw ContractError("item(): tensor " + shape_str(shape()) + " is not a scalar");
        }
        return data_->values[0];
    }

    bool requires_grad() const { return data_->requires_grad; }

    Tensor& set_requires_grad(bool flag) {
        data_->requires_grad = flag;
        return *this;
    }

    // Adjoint storage. Empty means "never touched by backward"; callers
    // treat that as all zeros.
    const std::vector<double>& grad() const { return data_->grad; }

    double grad_at(int r, int c) const {
        require_rank2("grad_at()");
        if (data_->grad.empty()) return 0.0;
        return data_->grad[static_cast<std::size_t>(r) * data_->shape[1] + c];
    }

    void clear_grad() { data_->grad.clear(); }

    Tensor clone() const {
        Tensor t;
        t.data_->shape = data_->shape;
        t.data_->values = data_->values;
        t.data_->requires_grad = data_->requires_grad;
        return t;
    }

    std::shared_ptr<TensorData> node() const { return data_; }

private:
    void require_rank2(const char* who) const {
        if (data_->shape.size() != 2) {
            throw DimensionError(std::string(who) + " expects a rank-2 tensor, got " +
                                 shape_str(data_->shape));
        }
    }

    std::shared_ptr<TensorData> data_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

class Tape {
public:
    void record(std::initializer_list<std::shared_ptr<TensorData>> touched,
                std::function<void()> rule) {
        for (const auto& t : touched) tracked_.push_back(t);
        entries_.push_back(std::move(rule));
    }

    std::size_t size() const { return entries_.size(); }

    void backward_from(const Tensor& loss) {
        const auto ln = loss.node();
        if (ln->values.size() != 1) {
            throw ContractError("backward: loss must be scalar, got " +
                                shape_str(ln->shape));
        }
        for (const auto& n : tracked_) {
            if (n->requires_grad) n->grad.assign(n->values.size(), 0.0);
        }
        if (ln->requires_grad) {
            ln->grad.assign(1, 1.0);
        }
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> entries_;
    std::vector<std::shared_ptr<TensorData>> tracked_;
};

inline Tape*& active_tape_slot() {
    thread_local Tape* tape = nullptr;
    return tape;
}

inline Tape* active_tape() { return active_tape_slot(); }

// RAII installer. Ops record onto the innermost active tape; with no scope
// installed they run forward-only, which is how evaluation passes work.
class TapeScope {
public:
    explicit TapeScope(Tape& tape) : prev_(active_tape_slot()) {
        active_tape_slot() = &tape;
    }
    ~TapeScope() { active_tape_slot() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

inline void backward(const Tensor& loss, Tape& tape) { tape.backward_from(loss); }

// Test harness hook: when enabled, matmul's backward rule is deliberately
// corrupted so gradient-check failure paths can be exercised end to end.
inline bool& fault_inject_matmul_backward() {
    thread_local bool flag = false;
    return flag;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace detail {

// c[m,n] += a[m,k] * b[k,n]
inline void mm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T   (b stored row-major as [n,k])
inline void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c[m,n] += a[k,m]^T * b[k,n]   (a stored row-major as [k,m])
inline void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const double* arow = a + static_cast<std::size_t>(p) * m;
        const double* brow = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline bool wants_grad(std::initializer_list<const Tensor*> inputs) {
    if (!active_tape()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                             shape_str(t.shape()));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::zeros({m, n});
    detail::mm_nn_acc(a.data(), b.data(), c.data(), m, k, n);

    if (detail::wants_grad({&a, &b})) {
        c.set_requires_grad(true);
        auto pa = a.node(), pb = b.node(), pc = c.node();
        active_tape()->record({pa, pb, pc}, [pa, pb, pc, m, k, n] {
            const double* dc = pc->grad.data();
            const double scale = fault_inject_matmul_backward() ? 1.001 : 1.0;
            if (pa->requires_grad) {
                if (scale == 1.0) {
                    detail::mm_nt_acc(dc, pb->values.data(), pa->grad.data(), m, n, k);
                } else {
                    std::vector<double> tmp(pa->grad.size(), 0.0);
                    detail::mm_nt_acc(dc, pb->values.data(), tmp.data(), m, n, k);
                    for (std::size_t i = 0; i < tmp.size(); ++i) pa->grad[i] += scale * tmp[i];
                }
            }
            if (pb->requires_grad) {
                detail::mm_tn_acc(pa->values.data(), dc, pb->grad.data(), k, m, n);
            }
        });
    }
    return c;
}

inline Tensor transpose(const Tensor& a) {
    detail::require_rank2(a, "transpose");
    const int m = a.rows(), n = a.cols();
    Tensor t = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
    }
    if (detail::wants_grad({&a})) {
        t.set_requires_grad(true);
        auto pa = a.node(), pt = t.node();
        active_tape()->record({pa, pt}, [pa, pt, m, n] {
            if (!pa->requires_grad) return;
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    pa->grad[static_cast<std::size_t>(i) * n + j] +=
                        pt->grad[static_cast<std::size_t>(j) * m + i];
                }
            }
        });
    }
    return t;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shape mismatch, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    Tensor c = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
    if (detail::wants_grad({&a, &b})) {
        c.set_requires_grad(true);
        auto pa = a.node(), pb = b.node(), pc = c.node();
        active_tape()->record({pa, pb, pc}, [pa, pb, pc] {
            const std::size_t n = pc->grad.size();
            if (pa->requires_grad) {
                for (std::size_t i = 0; i < n; ++i) pa->grad[i] += pc->grad[i];
            }
            if (pb->requires_grad) {
                for (std::size_t i = 0; i < n; ++i) pb->grad[i] += pc->grad[i];
            }
        });
    }
    return c;
}

inline Tensor scale(const Tensor& a, double factor) {
    Tensor c = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = factor * a.data()[i];
    if (detail::wants_grad({&a})) {
        c.set_requires_grad(true);
        auto pa = a.node(), pc = c.node();
        active_tape()->record({pa, pc}, [pa, pc, factor] {
            if (!pa->requires_grad) return;
            for (std::size_t i = 0; i < pc->grad.size(); ++i) pa->grad[i] += factor * pc->grad[i];
        });
    }
    return c;
}

// Broadcast-add a [1,f] row onto every row of a [n,f] matrix.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
    detail::require_rank2(a, "add_bias");
    detail::require_rank2(bias, "add_bias");
    if (bias.rows() != 1 || bias.cols() != a.cols()) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                             " does not broadcast over " + shape_str(a.shape()));
    }
    const int n = a.rows(), f = a.cols();
    Tensor c = Tensor::zeros({n, f});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < f; ++j) c.at(i, j) = a.at(i, j) + bias.at(0, j);
    }
    if (detail::wants_grad({&a, &bias})) {
        c.set_requires_grad(true);
        auto pa = a.node(), pb = bias.node(), pc = c.node();
        active_tape()->record({pa, pb, pc}, [pa, pb, pc, n, f] {
            if (pa->requires_grad) {
                for (std::size_t i = 0; i < pc->grad.size(); ++i) pa->grad[i] += pc->grad[i];
            }
            if (pb->requires_grad) {
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < f; ++j) {
                        pb->grad[j] += pc->grad[static_cast<std::size_t>(i) * f + j];
                    }
                }
            }
        });
    }
    return c;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "concat_cols");
    detail::require_rank2(b, "concat_cols");
    if (a.rows() != b.rows()) {
        throw DimensionError("concat_cols: row counts disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    const int n = a.rows(), p = a.cols(), q = b.cols();
    Tensor c = Tensor::zeros({n, p + q});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) c.at(i, j) = a.at(i, j);
        for (int j = 0; j < q; ++j) c.at(i, p + j) = b.at(i, j);
    }
    if (detail::wants_grad({&a, &b})) {
        c.set_requires_grad(true);
        auto pa = a.node(), pb = b.node(), pc = c.node();
        active_tape()->record({pa, pb, pc}, [pa, pb, pc, n, p, q] {
            for (int i = 0; i < n; ++i) {
                const double* drow = pc->grad.data() + static_cast<std::size_t>(i) * (p + q);
                if (pa->requires_grad) {
                    for (int j = 0; j < p; ++j) pa->grad[static_cast<std::size_t>(i) * p + j] += drow[j];
                }
                if (pb->requires_grad) {
                    for (int j = 0; j < q; ++j) pb->grad[static_cast<std::size_t>(i) * q + j] += drow[p + j];
                }
            }
        });
    }
    return c;
}

// Row-wise softmax, stabilized by subtracting each row's max before exp.
inline Tensor softmax_rows(const Tensor& a) {
    detail::require_rank2(a, "softmax_rows");
    const int n = a.rows(), f = a.cols();
    if (f == 0) throw DimensionError("softmax_rows: rows must be non-empty, got " + shape_str(a.shape()));
    Tensor s = Tensor::zeros({n, f});
    for (int i = 0; i < n; ++i) {
        double mx = a.at(i, 0);
        for (int j = 1; j < f; ++j) mx = std::max(mx, a.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < f; ++j) {
            const double e = std::exp(a.at(i, j) - mx);
            s.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < f; ++j) s.at(i, j) /= sum;
    }
    if (detail::wants_grad({&a})) {
        s.set_requires_grad(true);
        auto pa = a.node(), ps = s.node();
        active_tape()->record({pa, ps}, [pa, ps, n, f] {
            if (!pa->requires_grad) return;
            for (int i = 0; i < n; ++i) {
                const double* srow = ps->values.data() + static_cast<std::size_t>(i) * f;
                const double* drow = ps->grad.data() + static_cast<std::size_t>(i) * f;
                double dot = 0.0;
                for (int j = 0; j < f; ++j) dot += srow[j] * drow[j];
                double* grow = pa->grad.data() + static_cast<std::size_t>(i) * f;
                for (int j = 0; j < f; ++j) grow[j] += srow[j] * (drow[j] - dot);
            }
        });
    }
    return s;
}

enum class Activation { sigmoid, relu, identity };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::sigmoid: return "sigmoid";
        case Activation::relu: return "relu";
        case Activation::identity: return "identity";
    }
    return "?";
}

inline Tensor activation(const Tensor& a, Activation kind) {
    if (kind == Activation::identity) return a;
    Tensor c = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    if (kind == Activation::sigmoid) {
        for (std::size_t i = 0; i < n; ++i) {
            const double x = a.data()[i];
            // Branch on sign so exp never overflows.
            c.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                   : std::exp(x) / (1.0 + std::exp(x));
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) c.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    }
    if (detail::wants_grad({&a})) {
        c.set_requires_grad(true);
        auto pa = a.node(), pc = c.node();
        active_tape()->record({pa, pc}, [pa, pc, kind] {
            if (!pa->requires_grad) return;
            const std::size_t n = pc->grad.size();
            if (kind == Activation::sigmoid) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double y = pc->values[i];
                    pa->grad[i] += pc->grad[i] * y * (1.0 - y);
                }
            } else {
                for (std::size_t i = 0; i < n; ++i) {
                    if (pa->values[i] > 0.0) pa->grad[i] += pc->grad[i];
                }
            }
        });
    }
    return c;
}

// Scale each row to sum to 1. Rows summing to zero are left all-zero; that
// convention makes the neighbourhood mean of an isolated node a zero vector.
inline Tensor row_normalize(const Tensor& a) {
    detail::require_rank2(a, "row_normalize");
    const int n = a.rows(), f = a.cols();
    Tensor c = Tensor::zeros({n, f});
    std::vector<double> sums(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < f; ++j) s += a.at(i, j);
        sums[static_cast<std::size_t>(i)] = s;
        if (s != 0.0) {
            for (int j = 0; j < f; ++j) c.at(i, j) = a.at(i, j) / s;
        }
    }
    if (detail::wants_grad({&a})) {
        c.set_requires_grad(true);
        auto pa = a.node(), pc = c.node();
        active_tape()->record({pa, pc, }, [pa, pc, n, f, sums = std::move(sums)] {
            if (!pa->requires_grad) return;
            for (int i = 0; i < n; ++i) {
                const double s = sums[static_cast<std::size_t>(i)];
                if (s == 0.0) continue;
                const double* orow = pc->values.data() + static_cast<std::size_t>(i) * f;
                const double* drow = pc->grad.data() + static_cast<std::size_t>(i) * f;
                double dot = 0.0;
                for (int j = 0; j < f; ++j) dot += drow[j] * orow[j];
                double* grow = pa->grad.data() + static_cast<std::size_t>(i) * f;
                for (int j = 0; j < f; ++j) grow[j] += (drow[j] - dot) / s;
            }
        });
    }
    return c;
}

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
    Tensor c = Tensor::scalar(s);
    if (detail::wants_grad({&a})) {
        c.set_requires_grad(true);
        auto pa = a.node(), pc = c.node();
        active_tape()->record({pa, pc}, [pa, pc] {
            if (!pa->requires_grad) return;
            const double d = pc->grad[0];
            for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += d;
        });
    }
    return c;
}

// Copying reshape (the tape needs distinct nodes, so no aliasing views).
inline Tensor reshape_copy(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size()) {
        throw DimensionError("reshape_copy: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(shape));
    }
    Tensor c = Tensor::from_values(std::move(shape), a.values());
    if (detail::wants_grad({&a})) {
        c.set_requires_grad(true);
        auto pa = a.node(), pc = c.node();
        active_tape()->record({pa, pc}, [pa, pc] {
            if (!pa->requires_grad) return;
            for (std::size_t i = 0; i < pc->grad.size(); ++i) pa->grad[i] += pc->grad[i];
        });
    }
    return c;
}

// Binary cross-entropy evaluated directly on the logit:
//   loss = max(z, 0) - z*y + log(1 + exp(-|z|))
// which equals -[y log p + (1-y) log(1-p)] for p = sigmoid(z) but stays
// finite for any finite z. The exact adjoint is sigmoid(z) - y.
inline Tensor bce_with_logits(const Tensor& logit, double y) {
    if (logit.size() != 1) {
        throw DimensionError("bce_with_logits: expected scalar logit, got " +
                             shape_str(logit.shape()));
    }
    if (y != 0.0 && y != 1.0) {
        throw ConfigError("bce_with_logits: label must be 0 or 1, got " + std::to_string(y));
    }
    const double z = logit.data()[0];
    const double loss = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
    Tensor c = Tensor::scalar(loss);
    if (detail::wants_grad({&logit})) {
        c.set_requires_grad(true);
        auto pl = logit.node(), pc = c.node();
        active_tape()->record({pl, pc}, [pl, pc, y] {
            if (!pl->requires_grad) return;
            const double z = pl->values[0];
            const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                      : std::exp(z) / (1.0 + std::exp(z));
            pl->grad[0] += pc->grad[0] * (p - y);
        });
    }
    return c;
}

// ---------------------------------------------------------------------------
// Pooling regularizers (off by default in training; weights live in config)
// ---------------------------------------------------------------------------

// || A - S S^T ||_F / n^2 for an [n,c] assignment and [n,n] adjacency.
inline Tensor link_prediction_loss(const Tensor& s, const Tensor& a) {
    detail::require_rank2(s, "link_prediction_loss");
    detail::require_rank2(a, "link_prediction_loss");
    const int n = s.rows(), c = s.cols();
    if (a.rows() != n || a.cols() != n) {
        throw DimensionError("link_prediction_loss: adjacency " + shape_str(a.shape()) +
                             " does not match assignment " + shape_str(s.shape()));
    }
    // E = A - S S^T
    std::vector<double> e(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double dot = 0.0;
            for (int k = 0; k < c; ++k) dot += s.at(i, k) * s.at(j, k);
            e[static_cast<std::size_t>(i) * n + j] = a.at(i, j) - dot;
        }
    }
    double sq = 0.0;
    for (double v : e) sq += v * v;
    const double fro = std::sqrt(sq);
    const double nn = static_cast<double>(n) * n;
    Tensor out = Tensor::scalar(fro / nn);

    if (detail::wants_grad({&s, &a})) {
        out.set_requires_grad(true);
        auto ps = s.node(), pa = a.node(), po = out.node();
        active_tape()->record({ps, pa, po}, [ps, pa, po, e = std::move(e), fro, nn, n, c] {
            if (fro == 0.0) return; // loss is at its minimum; subgradient 0
            const double d = po->grad[0] / (fro * nn);
            if (pa->requires_grad) {
                for (std::size_t i = 0; i < e.size(); ++i) pa->grad[i] += d * e[i];
            }
            if (ps->requires_grad) {
                // dS = -2 d * E S  (E is symmetric by construction when A is)
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < n; ++j) {
                        const double ev = e[static_cast<std::size_t>(i) * n + j];
                        if (ev == 0.0) continue;
                        const double* srow = ps->values.data() + static_cast<std::size_t>(j) * c;
                        double* grow = ps->grad.data() + static_cast<std::size_t>(i) * c;
                        const double w = -2.0 * d * ev;
                        for (int k = 0; k < c; ++k) grow[k] += w * srow[k];
                    }
                }
            }
        });
    }
    return out;
}

// Mean over rows of the Shannon entropy of each assignment row.
inline Tensor entropy_loss(const Tensor& s) {
    detail::require_rank2(s, "entropy_loss");
    const int n = s.rows(), c = s.cols();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
            const double v = s.at(i, j);
            if (v > 0.0) total -= v * std::log(v);
        }
    }
    Tensor out = Tensor::scalar(total / n);
    if (detail::wants_grad({&s})) {
        out.set_requires_grad(true);
        auto ps = s.node(), po = out.node();
        active_tape()->record({ps, po}, [ps, po, n, c] {
            if (!ps->requires_grad) return;
            const double d = po->grad[0] / n;
            for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i) {
                const double v = ps->values[i];
                if (v > 0.0) ps->grad[i] += d * (-(std::log(v) + 1.0));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over nodes
// ---------------------------------------------------------------------------

// Normalizes each feature column over the rows (nodes) of one graph.
struct BatchNormState {
    Tensor gamma, beta;               // learned affine, shape [1,f]
    Tensor running_mean, running_var; // eval-mode statistics, shape [1,f]
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNormState init(int features) {
        BatchNormState s;
        s.gamma = Tensor::full({1, features}, 1.0);
        s.beta = Tensor::zeros({1, features});
        s.running_mean = Tensor::zeros({1, features});
        s.running_var = Tensor::full({1, features}, 1.0);
        return s;
    }
};

// train=true normalizes with the batch statistics of x (biased variance) and
// folds them into the running estimates; train=false is a pure affine map
// using the stored running statistics.
inline Tensor batchnorm_nodes(const Tensor& x, BatchNormState& state, bool train) {
    detail::require_rank2(x, "batchnorm_nodes");
    const int n = x.rows(), f = x.cols();
    if (n < 1) throw DimensionError("batchnorm_nodes: need at least one row, got " + shape_str(x.shape()));
    if (state.gamma.cols() != f) {
        throw DimensionError("batchnorm_nodes: state is for " + shape_str(state.gamma.shape()) +
                             " features, input is " + shape_str(x.shape()));
    }
    Tensor out = Tensor::zeros({n, f});

    if (train) {
        std::vector<double> invstd(static_cast<std::size_t>(f));
        std::vector<double> xhat(static_cast<std::size_t>(n) * f);
        for (int j = 0; j < f; ++j) {
            double mean = 0.0;
            for (int i = 0; i < n; ++i) mean += x.at(i, j);
            mean /= n;
            double var = 0.0;
            for (int i = 0; i < n; ++i) {
                const double d = x.at(i, j) - mean;
                var += d * d;
            }
            var /= n;
            const double is = 1.0 / std::sqrt(var + state.eps);
            invstd[static_cast<std::size_t>(j)] = is;
            const double g = state.gamma.at(0, j), b = state.beta.at(0, j);
            for (int i = 0; i < n; ++i) {
                const double xh = (x.at(i, j) - mean) * is;
                xhat[static_cast<std::size_t>(i) * f + j] = xh;
                out.at(i, j) = g * xh + b;
            }
            // Running estimates follow the usual convention: the variance
            // stored for eval is the unbiased one.
            const double m = state.momentum;
            const double unbiased = n > 1 ? var * n / (n - 1) : var;
            state.running_mean.at(0, j) = (1.0 - m) * state.running_mean.at(0, j) + m * mean;
            state.running_var.at(0, j) = (1.0 - m) * state.running_var.at(0, j) + m * unbiased;
        }
        if (detail::wants_grad({&x, &state.gamma, &state.beta})) {
            out.set_requires_grad(true);
            auto px = x.node(), pg = state.gamma.node(), pb = state.beta.node(), po = out.node();
            active_tape()->record(
                {px, pg, pb, po},
                [px, pg, pb, po, n, f, invstd = std::move(invstd), xhat = std::move(xhat)] {
                    for (int j = 0; j < f; ++j) {
                        double sum_dy = 0.0, sum_dy_xhat = 0.0;
                        for (int i = 0; i < n; ++i) {
                            const std::size_t idx = static_cast<std::size_t>(i) * f + j;
                            sum_dy += po->grad[idx];
                            sum_dy_xhat += po->grad[idx] * xhat[idx];
                        }
                        if (pg->requires_grad) pg->grad[j] += sum_dy_xhat;
                        if (pb->requires_grad) pb->grad[j] += sum_dy;
                        if (px->requires_grad) {
                            const double g = pg->values[j];
                            const double is = invstd[static_cast<std::size_t>(j)];
                            for (int i = 0; i < n; ++i) {
                                const std::size_t idx = static_cast<std::size_t>(i) * f + j;
                                px->grad[idx] += g * is *
                                    (po->grad[idx] - sum_dy / n - xhat[idx] * sum_dy_xhat / n);
                            }
                        }
                    }
                });
        }
        return out;
    }

    // Eval path. Statistics are captured by value so later training forwards
    // cannot disturb an already recorded rule.
    std::vector<double> rm(state.running_mean.values());
    std::vector<double> inv(static_cast<std::size_t>(f));
    for (int j = 0; j < f; ++j) {
        inv[static_cast<std::size_t>(j)] = 1.0 / std::sqrt(state.running_var.at(0, j) + state.eps);
    }
    for (int j = 0; j < f; ++j) {
        const double g = state.gamma.at(0, j), b = state.beta.at(0, j);
        const double mu = rm[static_cast<std::size_t>(j)], is = inv[static_cast<std::size_t>(j)];
        for (int i = 0; i < n; ++i) out.at(i, j) = g * (x.at(i, j) - mu) * is + b;
    }
    if (detail::wants_grad({&x, &state.gamma, &state.beta})) {
        out.set_requires_grad(true);
        auto px = x.node(), pg = state.gamma.node(), pb = state.beta.node(), po = out.node();
        active_tape()->record({px, pg, pb, po},
                              [px, pg, pb, po, n, f, rm = std::move(rm), inv = std::move(inv)] {
            for (int j = 0; j < f; ++j) {
                const double g = pg->values[j];
                const double mu = rm[static_cast<std::size_t>(j)];
                const double is = inv[static_cast<std::size_t>(j)];
                for (int i = 0; i < n; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(i) * f + j;
                    const double xh = (px->values[idx] - mu) * is;
                    if (pg->requires_grad) pg->grad[j] += po->grad[idx] * xh;
                    if (pb->requires_grad) pb->grad[j] += po->grad[idx];
                    if (px->requires_grad) px->grad[idx] += po->grad[idx] * g * is;
                }
            }
        });
    }
    return out;
}

} // namespace adiag
