#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "mantis/errors.hpp"
#include "mantis/rng.hpp"

namespace mantis {

// Rank-2 dense double tensor participating in reverse-mode gradient
// accumulation. Scalars are 1x1, row vectors 1xN; that covers everything the
// encoder needs. Copies share the underlying node (graph aliasing).
class Tensor {
public:
    struct Node {
        int64_t rows = 0;
        int64_t cols = 0;
        std::vector<double> value;
        std::vector<double> grad;  // empty until touched by backward
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;

        int64_t size() const { return rows * cols; }
        void ensure_grad() {
            if (grad.empty()) grad.assign(value.size(), 0.0);
        }
    };

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(int64_t rows, int64_t cols, bool requires_grad = false) {
        check_dims(rows, cols);
        auto n = std::make_shared<Node>();
        n->rows = rows;
        n->cols = cols;
        n->value.assign(static_cast<size_t>(rows * cols), 0.0);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor full(int64_t rows, int64_t cols, double fill,
                       bool requires_grad = false) {
        Tensor t = zeros(rows, cols, requires_grad);
        for (auto& v : t.node_->value) v = fill;
        return t;
    }

    static Tensor from(std::vector<double> values, int64_t rows, int64_t cols,
                       bool requires_grad = false) {
        check_dims(rows, cols);
        if (static_cast<int64_t>(values.size()) != rows * cols) {
            throw ShapeMismatch("value count does not match shape");
        }
        auto n = std::make_shared<Node>();
        n->rows = rows;
        n->cols = cols;
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return from({v}, 1, 1); }

    static Tensor randn(int64_t rows, int64_t cols, Rng& rng, double stddev,
                        bool requires_grad = true) {
        Tensor t = zeros(rows, cols, requires_grad);
        for (auto& v : t.node_->value) v = rng.normal(0.0, stddev);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    int64_t rows() const { return node_->rows; }
    int64_t cols() const { return node_->cols; }
    int64_t size() const { return node_->size(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    std::vector<double>& grad() { return node_->grad; }

    double at(int64_t r, int64_t c) const {
        return node_->value[static_cast<size_t>(r * cols() + c)];
    }
    double& at(int64_t r, int64_t c) {
        return node_->value[static_cast<size_t>(r * cols() + c)];
    }
    double item() const {
        if (size() != 1) throw ShapeMismatch("item() on non-scalar");
        return node_->value[0];
    }

    void zero_grad() { node_->grad.clear(); }

    std::shared_ptr<Node> node() const { return node_; }

private:
    static void check_dims(int64_t rows, int64_t cols) {
        if (rows <= 0 || cols <= 0) {
            throw ShapeMismatch("tensor dimensions must be positive");
        }
    }

    std::shared_ptr<Node> node_;
};

namespace tensor_detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

inline Map map(Tensor::Node& n) { return Map(n.value.data(), n.rows, n.cols); }
inline CMap cmap(const Tensor::Node& n) {
    return CMap(n.value.data(), n.rows, n.cols);
}
inline Map grad_map(Tensor::Node& n) {
    n.ensure_grad();
    return Map(n.grad.data(), n.rows, n.cols);
}

inline Tensor make_op(int64_t rows, int64_t cols,
                      std::vector<std::shared_ptr<Tensor::Node>> parents,
                      std::function<void(Tensor::Node&)> backward_fn) {
    Tensor out = Tensor::zeros(rows, cols);
    out.node()->parents = std::move(parents);
    out.node()->backward_fn = std::move(backward_fn);
    return out;
}

}  // namespace tensor_detail

// ---------------------------------------------------------------------------
// arithmetic ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    using namespace tensor_detail;
    if (a.cols() != b.rows()) {
        throw ShapeMismatch("matmul " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " * " +
                            std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
    }
    auto an = a.node(), bn = b.node();
    Tensor out = make_op(a.rows(), b.cols(), {an, bn}, [an, bn](Tensor::Node& o) {
        CMap go(o.grad.data(), o.rows, o.cols);
        grad_map(*an).noalias() += go * cmap(*bn).transpose();
        grad_map(*bn).noalias() += cmap(*an).transpose() * go;
    });
    map(*out.node()).noalias() = cmap(*an) * cmap(*bn);
    return out;
}

// Same-shape addition, or row-broadcast when b is 1 x cols.
inline Tensor add(const Tensor& a, const Tensor& b) {
    using namespace tensor_detail;
    bool same = a.rows() == b.rows() && a.cols() == b.cols();
    bool row_bcast = b.rows() == 1 && b.cols() == a.cols();
    if (!same && !row_bcast) throw ShapeMismatch("add shapes incompatible");
    auto an = a.node(), bn = b.node();
    Tensor out = make_op(a.rows(), a.cols(), {an, bn},
                         [an, bn, same](Tensor::Node& o) {
        CMap go(o.grad.data(), o.rows, o.cols);
        grad_map(*an) += go;
        if (same) {
            grad_map(*bn) += go;
        } else {
            grad_map(*bn) += go.colwise().sum();
        }
    });
    if (same) {
        map(*out.node()) = cmap(*an) + cmap(*bn);
    } else {
        map(*out.node()) = cmap(*an).rowwise() + cmap(*bn).row(0);
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    using namespace tensor_detail;
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeMismatch("elementwise mul shapes differ");
    }
    auto an = a.node(), bn = b.node();
    Tensor out = make_op(a.rows(), a.cols(), {an, bn}, [an, bn](Tensor::Node& o) {
        CMap go(o.grad.data(), o.rows, o.cols);
        grad_map(*an).array() += go.array() * cmap(*bn).array();
        grad_map(*bn).array() += go.array() * cmap(*an).array();
    });
    map(*out.node()).array() = cmap(*an).array() * cmap(*bn).array();
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    using namespace tensor_detail;
    auto an = a.node();
    Tensor out = make_op(a.rows(), a.cols(), {an}, [an, s](Tensor::Node& o) {
        CMap go(o.grad.data(), o.rows, o.cols);
        grad_map(*an) += go * s;
    });
    map(*out.node()) = cmap(*an) * s;
    return out;
}

inline Tensor transpose(const Tensor& a) {
    using namespace tensor_detail;
    auto an = a.node();
    Tensor out = make_op(a.cols(), a.rows(), {an}, [an](Tensor::Node& o) {
        CMap go(o.grad.data(), o.rows, o.cols);
        grad_map(*an) += go.transpose();
    });
    map(*out.node()) = cmap(*an).transpose();
    return out;
}

inline Tensor reshape(const Tensor& a, int64_t rows, int64_t cols) {
    using namespace tensor_detail;
    if (rows * cols != a.size()) {
        throw ShapeMismatch("reshape must preserve element count");
    }
    auto an = a.node();
    Tensor out = make_op(rows, cols, {an}, [an](Tensor::Node& o) {
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    });
    out.node()->value = an->value;
    return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    using namespace tensor_detail;
    if (parts.empty()) throw ShapeMismatch("concat of nothing");
    if (axis != 0 && axis != 1) throw ShapeMismatch("concat axis must be 0 or 1");
    int64_t rows = parts[0].rows(), cols = parts[0].cols();
    for (size_t i = 1; i < parts.size(); ++i) {
        if (axis == 0) {
            if (parts[i].cols() != cols) throw ShapeMismatch("concat cols differ");
            rows += parts[i].rows();
        } else {
            if (parts[i].rows() != rows) throw ShapeMismatch("concat rows differ");
            cols += parts[i].cols();
        }
    }
    std::vector<std::shared_ptr<Tensor::Node>> ps;
    ps.reserve(parts.size());
    for (const auto& p : parts) ps.push_back(p.node());

    Tensor out = make_op(rows, cols, ps, [ps, axis](Tensor::Node& o) {
        CMap go(o.grad.data(), o.rows, o.cols);
        int64_t at = 0;
        for (auto& p : ps) {
            if (axis == 0) {
                grad_map(*p) += go.middleRows(at, p->rows);
                at += p->rows;
            } else {
                grad_map(*p) += go.middleCols(at, p->cols);
                at += p->cols;
            }
        }
    });
    auto om = map(*out.node());
    int64_t at = 0;
    for (const auto& p : parts) {
        if (axis == 0) {
            om.middleRows(at, p.rows()) = cmap(*p.node());
            at += p.rows();
        } else {
            om.middleCols(at, p.cols()) = cmap(*p.node());
            at += p.cols();
        }
    }
    return out;
}

// Half-open [row0, row1) x [col0, col1) block.
inline Tensor slice(const Tensor& a, int64_t row0, int64_t row1, int64_t col0,
                    int64_t col1) {
    using namespace tensor_detail;
    if (row0 < 0 || col0 < 0 || row1 > a.rows() || col1 > a.cols() ||
        row0 >= row1 || col0 >= col1) {
        throw ShapeMismatch("slice bounds invalid");
    }
    auto an = a.node();
    int64_t r = row1 - row0, c = col1 - col0;
    Tensor out = make_op(r, c, {an}, [an, row0, col0](Tensor::Node& o) {
        CMap go(o.grad.data(), o.rows, o.cols);
        grad_map(*an).block(row0, col0, o.rows, o.cols) += go;
    });
    map(*out.node()) = cmap(*an).block(row0, col0, r, c);
    return out;
}

// ---------------------------------------------------------------------------
// nonlinearities and normalization
// ---------------------------------------------------------------------------

// Row softmax for axis=1, column softmax for axis=0; max-subtracted.
inline Tensor softmax(const Tensor& a, int axis = 1) {
    using namespace tensor_detail;
    if (axis != 0 && axis != 1) throw ShapeMismatch("softmax axis must be 0 or 1");
    auto an = a.node();
    Tensor out = make_op(a.rows(), a.cols(), {an}, [an, axis](Tensor::Node& o) {
        CMap go(o.grad.data(), o.rows, o.cols);
        CMap y(o.value.data(), o.rows, o.cols);
        auto ga = grad_map(*an);
        if (axis == 1) {
            for (int64_t r = 0; r < o.rows; ++r) {
                double dot = go.row(r).cwiseProduct(y.row(r)).sum();
                ga.row(r).array() +=
                        (go.row(r).array() - dot) * y.row(r).array();
            }
        } else {
            for (int64_t c = 0; c < o.cols; ++c) {
                double dot = go.col(c).cwiseProduct(y.col(c)).sum();
                ga.col(c).array() +=
                        (go.col(c).array() - dot) * y.col(c).array();
            }
        }
    });
    auto om = map(*out.node());
    auto am = cmap(*an);
    if (axis == 1) {
        for (int64_t r = 0; r < a.rows(); ++r) {
            double m = am.row(r).maxCoeff();
            om.row(r) = (am.row(r).array() - m).exp();
            om.row(r) /= om.row(r).sum();
        }
    } else {
        for (int64_t c = 0; c < a.cols(); ++c) {
            double m = am.col(c).maxCoeff();
            om.col(c) = (am.col(c).array() - m).exp();
            om.col(c) /= om.col(c).sum();
        }
    }
    return out;
}

// Per-row standardization followed by the gamma/beta affine map. gamma and
// beta are 1 x cols. The epsilon clamp makes constant rows map to zero.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-12) {
    using namespace tensor_detail;
    if (gamma.rows() != 1 || beta.rows() != 1 || gamma.cols() != x.cols() ||
        beta.cols() != x.cols()) {
        throw ShapeMismatch("layer_norm parameter shapes must be 1 x cols");
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    int64_t rows = x.rows(), cols = x.cols();

    // cache normalized rows and inverse stddevs for the backward pass
    auto xhat = std::make_shared<std::vector<double>>(
            static_cast<size_t>(rows * cols));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));

    Tensor out = make_op(rows, cols, {xn, gn, bn},
                         [xn, gn, bn, xhat, inv_std](Tensor::Node& o) {
        CMap go(o.grad.data(), o.rows, o.cols);
        CMap xh(xhat->data(), o.rows, o.cols);
        auto gx = grad_map(*xn);
        auto gg = grad_map(*gn);
        auto gb = grad_map(*bn);
        double n = static_cast<double>(o.cols);
        for (int64_t r = 0; r < o.rows; ++r) {
            gb.row(0) += go.row(r);
            gg.row(0).array() += go.row(r).array() * xh.row(r).array();
            Eigen::ArrayXd dxhat =
                    go.row(r).array() * cmap(*gn).row(0).array();
            double mean_dxhat = dxhat.sum() / n;
            double mean_dxhat_xhat =
                    (dxhat * xh.row(r).transpose().array()).sum() / n;
            gx.row(r).array() += (*inv_std)[static_cast<size_t>(r)] *
                                 (dxhat - mean_dxhat -
                                  xh.row(r).transpose().array() * mean_dxhat_xhat);
        }
    });
    auto om = map(*out.node());
    auto xm = cmap(*xn);
    Map xhm(xhat->data(), rows, cols);
    double n = static_cast<double>(cols);
    for (int64_t r = 0; r < rows; ++r) {
        double mean = xm.row(r).sum() / n;
        double var = (xm.row(r).array() - mean).square().sum() / n;
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        xhm.row(r) = (xm.row(r).array() - mean) * is;
        om.row(r).array() =
                xhm.row(r).array() * cmap(*gn).row(0).array() +
                cmap(*bn).row(0).array();
    }
    return out;
}

// tanh-approximated gaussian error linear unit.
inline Tensor gelu(const Tensor& x) {
    using namespace tensor_detail;
    auto xn = x.node();
    Tensor out = make_op(x.rows(), x.cols(), {xn}, [xn](Tensor::Node& o) {
        xn->ensure_grad();
        constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
        constexpr double a = 0.044715;
        for (size_t i = 0; i < o.value.size(); ++i) {
            double v = xn->value[i];
            double u = c * (v + a * v * v * v);
            double t = std::tanh(u);
            double du = c * (1.0 + 3.0 * a * v * v);
            double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
            xn->grad[i] += o.grad[i] * d;
        }
    });
    constexpr double c = 0.7978845608028654;
    constexpr double a = 0.044715;
    for (size_t i = 0; i < out.node()->value.size(); ++i) {
        double v = xn->value[i];
        out.node()->value[i] = 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v)));
    }
    return out;
}

inline Tensor tanh_op(const Tensor& x) {
    using namespace tensor_detail;
    auto xn = x.node();
    Tensor out = make_op(x.rows(), x.cols(), {xn}, [xn](Tensor::Node& o) {
        xn->ensure_grad();
        for (size_t i = 0; i < o.value.size(); ++i) {
            double y = o.value[i];
            xn->grad[i] += o.grad[i] * (1.0 - y * y);
        }
    });
    for (size_t i = 0; i < out.node()->value.size(); ++i) {
        out.node()->value[i] = std::tanh(xn->value[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// lookup, dropout, reductions, loss
// ---------------------------------------------------------------------------

// Gathers table rows by id; the backward pass scatter-adds into the table.
inline Tensor embedding_lookup(const Tensor& table,
                               const std::vector<int32_t>& ids) {
    using namespace tensor_detail;
    if (ids.empty()) throw ShapeMismatch("embedding_lookup with no ids");
    for (int32_t id : ids) {
        if (id < 0 || id >= table.rows()) {
            throw IdOutOfRange("embedding id " + std::to_string(id) +
                               " outside table of " + std::to_string(table.rows()));
        }
    }
    auto tn = table.node();
    int64_t cols = table.cols();
    Tensor out = make_op(static_cast<int64_t>(ids.size()), cols, {tn},
                         [tn, ids](Tensor::Node& o) {
        CMap go(o.grad.data(), o.rows, o.cols);
        auto gt = grad_map(*tn);
        for (size_t i = 0; i < ids.size(); ++i) {
            gt.row(ids[i]) += go.row(static_cast<int64_t>(i));
        }
    });
    auto om = map(*out.node());
    auto tm = cmap(*tn);
    for (size_t i = 0; i < ids.size(); ++i) {
        om.row(static_cast<int64_t>(i)) = tm.row(ids[i]);
    }
    return out;
}

// Rows gathered from a 2D activation (used to pick masked positions).
inline Tensor gather_rows(const Tensor& x, const std::vector<int32_t>& rows) {
    using namespace tensor_detail;
    if (rows.empty()) throw ShapeMismatch("gather_rows with no rows");
    for (int32_t r : rows) {
        if (r < 0 || r >= x.rows()) throw IdOutOfRange("row " + std::to_string(r));
    }
    auto xn = x.node();
    Tensor out = make_op(static_cast<int64_t>(rows.size()), x.cols(), {xn},
                         [xn, rows](Tensor::Node& o) {
        CMap go(o.grad.data(), o.rows, o.cols);
        auto gx = grad_map(*xn);
        for (size_t i = 0; i < rows.size(); ++i) {
            gx.row(rows[i]) += go.row(static_cast<int64_t>(i));
        }
    });
    auto om = map(*out.node());
    auto xm = cmap(*xn);
    for (size_t i = 0; i < rows.size(); ++i) {
        om.row(static_cast<int64_t>(i)) = xm.row(rows[i]);
    }
    return out;
}

// Inverted dropout: survivors scaled by 1/(1-rate); identity when not
// training or rate is 0. Deterministic given the rng state.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
    using namespace tensor_detail;
    if (rate < 0.0 || rate >= 1.0) throw BadConfig("dropout rate must be in [0, 1)");
    if (!training || rate == 0.0) return x;
    auto xn = x.node();
    auto mask = std::make_shared<std::vector<double>>(xn->value.size());
    double keep_scale = 1.0 / (1.0 - rate);
    for (auto& m : *mask) m = rng.uniform() >= rate ? keep_scale : 0.0;

    Tensor out = make_op(x.rows(), x.cols(), {xn}, [xn, mask](Tensor::Node& o) {
        xn->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            xn->grad[i] += o.grad[i] * (*mask)[i];
        }
    });
    for (size_t i = 0; i < out.node()->value.size(); ++i) {
        out.node()->value[i] = xn->value[i] * (*mask)[i];
    }
    return out;
}

inline Tensor sum(const Tensor& x) {
    using namespace tensor_detail;
    auto xn = x.node();
    Tensor out = make_op(1, 1, {xn}, [xn](Tensor::Node& o) {
        xn->ensure_grad();
        for (auto& g : xn->grad) g += o.grad[0];
    });
    double total = 0.0;
    for (double v : xn->value) total += v;
    out.node()->value[0] = total;
    return out;
}

// Mean over the batch of -sum_c target * log softmax(logits). The gradient
// with respect to the logits is (softmax - target) / batch.
inline Tensor cross_entropy(const Tensor& logits, const Tensor& target) {
    using namespace tensor_detail;
    if (logits.rows() != target.rows() || logits.cols() != target.cols()) {
        throw ShapeMismatch("cross_entropy shapes differ");
    }
    auto ln = logits.node(), tn = target.node();
    int64_t batch = logits.rows(), classes = logits.cols();

    auto probs = std::make_shared<std::vector<double>>(
            static_cast<size_t>(batch * classes));

    Tensor out = make_op(1, 1, {ln, tn}, [ln, tn, probs](Tensor::Node& o) {
        double g = o.grad[0] / static_cast<double>(ln->rows);
        ln->ensure_grad();
        for (size_t i = 0; i < ln->grad.size(); ++i) {
            ln->grad[i] += g * ((*probs)[i] - tn->value[i]);
        }
    });

    Map pm(probs->data(), batch, classes);
    auto lm = cmap(*ln);
    auto tm = cmap(*tn);
    double loss = 0.0;
    for (int64_t r = 0; r < batch; ++r) {
        double m = lm.row(r).maxCoeff();
        double lse = m + std::log((lm.row(r).array() - m).exp().sum());
        pm.row(r) = (lm.row(r).array() - lse).exp();
        loss += lse - tm.row(r).cwiseProduct(lm.row(r)).sum();
    }
    out.node()->value[0] = loss / static_cast<double>(batch);
    return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-topological traversal from a scalar root. Gradients accumulate;
// zeroing between optimization steps is the caller's job.
inline void backward(const Tensor& root) {
    if (root.size() != 1) {
        throw NonScalarRoot("backward root must be a scalar");
    }
    std::vector<Tensor::Node*> order;
    std::unordered_set<Tensor::Node*> visited;
    // iterative DFS; graphs can be deep at long sequence lengths
    struct Frame {
        Tensor::Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Tensor::Node* p = f.node->parents[f.next_parent++].get();
            if (visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    // Interior grads are scratch for this traversal; only leaves (parameters
    // and constants) accumulate across calls.
    for (Tensor::Node* n : order) {
        if (!n->parents.empty()) {
            n->grad.assign(n->value.size(), 0.0);
        }
    }
    root.node()->ensure_grad();
    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor::Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
        }
    }
}

}  // namespace mantis
