#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "matrix.hpp"

namespace dualenc {

// Eager-forward reverse-mode tape over Matrix<T> values. Nodes are created
// in topological order by construction, so backward() is a single reverse
// scan; fan-out gradients accumulate additively.
template <class T>
class Tape {
  public:
    using NodeId = std::size_t;

    enum class Op : std::uint8_t {
        leaf,
        constant,
        matmul,
        add,
        sub,
        mul_elem,
        scale_const,
        add_rowvec,
        row_softmax,
        layer_norm,
        row_l2_normalize,
        gather_rows,
        slice_rows,
        slice_cols,
        concat_cols,
        vstack,
        gelu,
        mean_rows,
        transpose_op,
        temp_scale,
        scale_by_scalar,
        cross_entropy_diag,
        smooth_l1_mean,
        sum_all,
    };

    NodeId leaf(Matrix<T> value) { return push(Op::leaf, std::move(value), {}, true); }

    NodeId constant(Matrix<T> value) { return push(Op::constant, std::move(value), {}, false); }

    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false) {
        Matrix<T> v = dualenc::matmul(val(a), val(b), trans_a, trans_b);
        NodeId id = push(Op::matmul, std::move(v), {a, b});
        nodes_[id].flag_a = trans_a;
        nodes_[id].flag_b = trans_b;
        return id;
    }

    NodeId add(NodeId a, NodeId b) { return push(Op::add, dualenc::add(val(a), val(b)), {a, b}); }

    NodeId sub(NodeId a, NodeId b) { return push(Op::sub, dualenc::sub(val(a), val(b)), {a, b}); }

    NodeId mul_elem(NodeId a, NodeId b) {
        const Matrix<T>& x = val(a);
        const Matrix<T>& y = val(b);
        require(x.rows() == y.rows() && x.cols() == y.cols(), "mul_elem: shape mismatch");
        Matrix<T> v = x;
        for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] *= y.data()[i];
        return push(Op::mul_elem, std::move(v), {a, b});
    }

    NodeId scale_const(NodeId a, double s) {
        Matrix<T> v = dualenc::scale(val(a), static_cast<T>(s));
        NodeId id = push(Op::scale_const, std::move(v), {a});
        nodes_[id].scalar = s;
        return id;
    }

    // a: m x n, v: 1 x n broadcast-added to every row.
    NodeId add_rowvec(NodeId a, NodeId v) {
        const Matrix<T>& x = val(a);
        const Matrix<T>& r = val(v);
        require(r.rows() == 1 && r.cols() == x.cols(), "add_rowvec: need 1 x cols vector");
        Matrix<T> out = x;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            T* oi = out.row_ptr(i);
            const T* rv = r.row_ptr(0);
            for (std::size_t j = 0; j < out.cols(); ++j) oi[j] += rv[j];
        }
        return push(Op::add_rowvec, std::move(out), {a, v});
    }

    NodeId row_softmax(NodeId a) {
        const Matrix<T>& x = val(a);
        Matrix<T> y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const T* xi = x.row_ptr(i);
            T* yi = y.row_ptr(i);
            T mx = xi[0];
            for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, xi[j]);
            T sum = T(0);
            for (std::size_t j = 0; j < x.cols(); ++j) {
                yi[j] = std::exp(xi[j] - mx);
                sum += yi[j];
            }
            const T inv = T(1) / sum;
            for (std::size_t j = 0; j < x.cols(); ++j) yi[j] *= inv;
        }
        return push(Op::row_softmax, std::move(y), {a});
    }

    // Per-row normalization with learned gain/bias (each 1 x n).
    NodeId layer_norm(NodeId a, NodeId gain, NodeId bias) {
        const Matrix<T>& x = val(a);
        const Matrix<T>& g = val(gain);
        const Matrix<T>& b = val(bias);
        require(g.rows() == 1 && g.cols() == x.cols(), "layer_norm: gain must be 1 x cols");
        require(b.rows() == 1 && b.cols() == x.cols(), "layer_norm: bias must be 1 x cols");
        Matrix<T> y(x.rows(), x.cols());
        const std::size_t n = x.cols();
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const T* xi = x.row_ptr(i);
            T* yi = y.row_ptr(i);
            T mu = T(0);
            for (std::size_t j = 0; j < n; ++j) mu += xi[j];
            mu /= static_cast<T>(n);
            T var = T(0);
            for (std::size_t j = 0; j < n; ++j) {
                const T d = xi[j] - mu;
                var += d * d;
            }
            var /= static_cast<T>(n);
            const T inv = T(1) / std::sqrt(var + static_cast<T>(ln_eps));
            for (std::size_t j = 0; j < n; ++j)
                yi[j] = (xi[j] - mu) * inv * g.row_ptr(0)[j] + b.row_ptr(0)[j];
        }
        return push(Op::layer_norm, std::move(y), {a, gain, bias});
    }

    NodeId row_l2_normalize(NodeId a) {
        const Matrix<T>& x = val(a);
        Matrix<T> y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const T* xi = x.row_ptr(i);
            T* yi = y.row_ptr(i);
            T sq = T(0);
            for (std::size_t j = 0; j < x.cols(); ++j) sq += xi[j] * xi[j];
            const T norm = std::sqrt(sq) + static_cast<T>(l2_eps);
            const T inv = T(1) / norm;
            for (std::size_t j = 0; j < x.cols(); ++j) yi[j] = xi[j] * inv;
        }
        return push(Op::row_l2_normalize, std::move(y), {a});
    }

    NodeId gather_rows(NodeId a, std::vector<std::size_t> indices) {
        const Matrix<T>& x = val(a);
        require(!indices.empty(), "gather_rows: empty index list");
        Matrix<T> y(indices.size(), x.cols());
        for (std::size_t i = 0; i < indices.size(); ++i) {
            require(indices[i] < x.rows(), "gather_rows: index " + std::to_string(indices[i]) +
                                               " out of range " + std::to_string(x.rows()));
            const T* src = x.row_ptr(indices[i]);
            T* dst = y.row_ptr(i);
            for (std::size_t j = 0; j < x.cols(); ++j) dst[j] = src[j];
        }
        NodeId id = push(Op::gather_rows, std::move(y), {a});
        nodes_[id].indices = std::move(indices);
        return id;
    }

    NodeId slice_rows(NodeId a, std::size_t start, std::size_t count) {
        const Matrix<T>& x = val(a);
        require(start + count <= x.rows(), "slice_rows: window out of range");
        Matrix<T> y(count, x.cols());
        for (std::size_t i = 0; i < count; ++i) {
            const T* src = x.row_ptr(start + i);
            T* dst = y.row_ptr(i);
            for (std::size_t j = 0; j < x.cols(); ++j) dst[j] = src[j];
        }
        NodeId id = push(Op::slice_rows, std::move(y), {a});
        nodes_[id].start = start;
        nodes_[id].count = count;
        return id;
    }

    NodeId slice_cols(NodeId a, std::size_t start, std::size_t count) {
        const Matrix<T>& x = val(a);
        require(start + count <= x.cols(), "slice_cols: window out of range");
        Matrix<T> y(x.rows(), count);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const T* src = x.row_ptr(i) + start;
            T* dst = y.row_ptr(i);
            for (std::size_t j = 0; j < count; ++j) dst[j] = src[j];
        }
        NodeId id = push(Op::slice_cols, std::move(y), {a});
        nodes_[id].start = start;
        nodes_[id].count = count;
        return id;
    }

    NodeId concat_cols(const std::vector<NodeId>& parts) {
        require(!parts.empty(), "concat_cols: no inputs");
        const std::size_t rows = val(parts[0]).rows();
        std::size_t cols = 0;
        for (NodeId p : parts) {
            require(val(p).rows() == rows, "concat_cols: row mismatch");
            cols += val(p).cols();
        }
        Matrix<T> y(rows, cols);
        std::size_t off = 0;
        for (NodeId p : parts) {
            const Matrix<T>& x = val(p);
            for (std::size_t i = 0; i < rows; ++i) {
                const T* src = x.row_ptr(i);
                T* dst = y.row_ptr(i) + off;
                for (std::size_t j = 0; j < x.cols(); ++j) dst[j] = src[j];
            }
            off += x.cols();
        }
        return push(Op::concat_cols, std::move(y), parts);
    }

    NodeId vstack(const std::vector<NodeId>& parts) {
        require(!parts.empty(), "vstack: no inputs");
        const std::size_t cols = val(parts[0]).cols();
        std::size_t rows = 0;
        for (NodeId p : parts) {
            require(val(p).cols() == cols, "vstack: column mismatch");
            rows += val(p).rows();
        }
        Matrix<T> y(rows, cols);
        std::size_t off = 0;
        for (NodeId p : parts) {
            const Matrix<T>& x = val(p);
            for (std::size_t i = 0; i < x.rows(); ++i) {
                const T* src = x.row_ptr(i);
                T* dst = y.row_ptr(off + i);
                for (std::size_t j = 0; j < cols; ++j) dst[j] = src[j];
            }
            off += x.rows();
        }
        return push(Op::vstack, std::move(y), parts);
    }

    // tanh-approximation gelu.
    NodeId gelu(NodeId a) {
        const Matrix<T>& x = val(a);
        Matrix<T> y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T xi = x.data()[i];
            const T u = gelu_c * (xi + gelu_a * xi * xi * xi);
            y.data()[i] = T(0.5) * xi * (T(1) + std::tanh(u));
        }
        return push(Op::gelu, std::move(y), {a});
    }

    NodeId mean_rows(NodeId a) {
        const Matrix<T>& x = val(a);
        require(x.rows() > 0, "mean_rows: empty input");
        Matrix<T> y(1, x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const T* xi = x.row_ptr(i);
            for (std::size_t j = 0; j < x.cols(); ++j) y.row_ptr(0)[j] += xi[j];
        }
        const T inv = T(1) / static_cast<T>(x.rows());
        for (std::size_t j = 0; j < x.cols(); ++j) y.row_ptr(0)[j] *= inv;
        return push(Op::mean_rows, std::move(y), {a});
    }

    NodeId transpose_op(NodeId a) {
        return push(Op::transpose_op, dualenc::transpose(val(a)), {a});
    }

    // y = clamp(exp(t), lo, hi) for a 1x1 log-temperature; gradient is zero
    // while the clamp is active.
    NodeId temp_scale(NodeId t, double lo = 1.0, double hi = 100.0) {
        const Matrix<T>& x = val(t);
        require(x.rows() == 1 && x.cols() == 1, "temp_scale: input must be 1x1");
        const double e = std::exp(static_cast<double>(x(0, 0)));
        Matrix<T> y(1, 1);
        y(0, 0) = static_cast<T>(std::min(hi, std::max(lo, e)));
        NodeId id = push(Op::temp_scale, std::move(y), {t});
        nodes_[id].scalar = e;
        nodes_[id].aux = lo;
        nodes_[id].aux2 = hi;
        return id;
    }

    // y = s * a where s is a 1x1 node.
    NodeId scale_by_scalar(NodeId a, NodeId s) {
        const Matrix<T>& x = val(a);
        const Matrix<T>& sv = val(s);
        require(sv.rows() == 1 && sv.cols() == 1, "scale_by_scalar: scale must be 1x1");
        Matrix<T> y = dualenc::scale(x, sv(0, 0));
        return push(Op::scale_by_scalar, std::move(y), {a, s});
    }

    // Mean over rows of cross-entropy where row i's target class is column i.
    NodeId cross_entropy_diag(NodeId logits) {
        const Matrix<T>& x = val(logits);
        require(x.cols() >= x.rows(), "cross_entropy_diag: need at least as many columns as rows");
        Matrix<T> y(1, 1);
        T total = T(0);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const T* xi = x.row_ptr(i);
            T mx = xi[0];
            for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, xi[j]);
            T sum = T(0);
            for (std::size_t j = 0; j < x.cols(); ++j) sum += std::exp(xi[j] - mx);
            total += mx + std::log(sum) - xi[i];
        }
        y(0, 0) = total / static_cast<T>(x.rows());
        return push(Op::cross_entropy_diag, std::move(y), {logits});
    }

    // Mean elementwise smooth-L1 of (a - b) with transition point delta = 1.
    NodeId smooth_l1_mean(NodeId a, NodeId b) {
        const Matrix<T>& x = val(a);
        const Matrix<T>& z = val(b);
        require(x.rows() == z.rows() && x.cols() == z.cols(), "smooth_l1_mean: shape mismatch");
        T total = T(0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T d = x.data()[i] - z.data()[i];
            const T ad = std::abs(d);
            total += (ad < T(1)) ? T(0.5) * d * d : ad - T(0.5);
        }
        Matrix<T> y(1, 1);
        y(0, 0) = total / static_cast<T>(x.size());
        return push(Op::smooth_l1_mean, std::move(y), {a, b});
    }

    NodeId sum_all(NodeId a) {
        const Matrix<T>& x = val(a);
        Matrix<T> y(1, 1);
        T total = T(0);
        for (std::size_t i = 0; i < x.size(); ++i) total += x.data()[i];
        y(0, 0) = total;
        return push(Op::sum_all, std::move(y), {a});
    }

    const Matrix<T>& value(NodeId id) const { return nodes_[id].value; }

    const Matrix<T>& grad(NodeId id) const {
        require(!nodes_[id].grad.empty(), "grad: not computed for this node");
        return nodes_[id].grad;
    }

    bool has_grad(NodeId id) const { return !nodes_[id].grad.empty(); }

    std::size_t size() const { return nodes_.size(); }

    void backward(NodeId loss) {
        require(loss < nodes_.size(), "backward: bad node id");
        const Matrix<T>& lv = nodes_[loss].value;
        require(lv.rows() == 1 && lv.cols() == 1, "backward: loss must be scalar (1x1)");
        touch_grad(loss)(0, 0) = T(1);
        for (std::size_t idx = loss + 1; idx-- > 0;) {
            Node& node = nodes_[idx];
            if (node.grad.empty() || !node.needs_grad) continue;
            dispatch_backward(idx, node);
        }
    }

  private:
    struct Node {
        Op op;
        Matrix<T> value;
        Matrix<T> grad;
        std::vector<NodeId> inputs;
        std::vector<std::size_t> indices;
        double scalar = 0.0;
        double aux = 0.0;
        double aux2 = 0.0;
        std::size_t start = 0;
        std::size_t count = 0;
        bool flag_a = false;
        bool flag_b = false;
        bool needs_grad = false;
    };

    static constexpr double ln_eps = 1e-5;
    static constexpr double l2_eps = 1e-12;
    static constexpr T gelu_c = T(0.7978845608028653558798921198687);  // sqrt(2/pi)
    static constexpr T gelu_a = T(0.044715);

    std::vector<Node> nodes_;

    const Matrix<T>& val(NodeId id) const {
        require(id < nodes_.size(), "tape: bad node id");
        return nodes_[id].value;
    }

    NodeId push(Op op, Matrix<T> value, std::vector<NodeId> inputs, bool force_grad = false) {
        Node node;
        node.op = op;
        node.value = std::move(value);
        node.inputs = std::move(inputs);
        node.needs_grad = force_grad;
        for (NodeId in : node.inputs)
            if (nodes_[in].needs_grad) node.needs_grad = true;
        nodes_.push_back(std::move(node));
        return nodes_.size() - 1;
    }

    Matrix<T>& touch_grad(NodeId id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
        return n.grad;
    }

    bool wants(NodeId id) const { return nodes_[id].needs_grad; }

    void accumulate(NodeId id, const Matrix<T>& delta) {
        if (!wants(id)) return;
        Matrix<T>& g = touch_grad(id);
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += delta.data()[i];
    }

    void dispatch_backward(NodeId id, Node& node) {
        const Matrix<T>& g = node.grad;
        switch (node.op) {
            case Op::leaf:
            case Op::constant:
                break;
            case Op::matmul:
                backward_matmul(node, g);
                break;
            case Op::add:
                accumulate(node.inputs[0], g);
                accumulate(node.inputs[1], g);
                break;
            case Op::sub: {
                accumulate(node.inputs[0], g);
                if (wants(node.inputs[1])) {
                    Matrix<T>& gb = touch_grad(node.inputs[1]);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb.data()[i] -= g.data()[i];
                }
                break;
            }
            case Op::mul_elem: {
                const Matrix<T>& xa = val(node.inputs[0]);
                const Matrix<T>& xb = val(node.inputs[1]);
                if (wants(node.inputs[0])) {
                    Matrix<T>& ga = touch_grad(node.inputs[0]);
                    for (std::size_t i = 0; i < ga.size(); ++i)
                        ga.data()[i] += g.data()[i] * xb.data()[i];
                }
                if (wants(node.inputs[1])) {
                    Matrix<T>& gb = touch_grad(node.inputs[1]);
                    for (std::size_t i = 0; i < gb.size(); ++i)
                        gb.data()[i] += g.data()[i] * xa.data()[i];
                }
                break;
            }
            case Op::scale_const: {
                if (wants(node.inputs[0])) {
                    Matrix<T>& ga = touch_grad(node.inputs[0]);
                    const T s = static_cast<T>(node.scalar);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += s * g.data()[i];
                }
                break;
            }
            case Op::add_rowvec: {
                accumulate(node.inputs[0], g);
                if (wants(node.inputs[1])) {
                    Matrix<T>& gv = touch_grad(node.inputs[1]);
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                        const T* gi = g.row_ptr(i);
                        for (std::size_t j = 0; j < g.cols(); ++j) gv.row_ptr(0)[j] += gi[j];
                    }
                }
                break;
            }
            case Op::row_softmax:
                backward_row_softmax(node, g);
                break;
            case Op::layer_norm:
                backward_layer_norm(node, g);
                break;
            case Op::row_l2_normalize:
                backward_row_l2_normalize(node, g);
                break;
            case Op::gather_rows: {
                if (wants(node.inputs[0])) {
                    Matrix<T>& ga = touch_grad(node.inputs[0]);
                    for (std::size_t i = 0; i < node.indices.size(); ++i) {
                        const T* gi = g.row_ptr(i);
                        T* dst = ga.row_ptr(node.indices[i]);
                        for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += gi[j];
                    }
                }
                break;
            }
            case Op::slice_rows: {
                if (wants(node.inputs[0])) {
                    Matrix<T>& ga = touch_grad(node.inputs[0]);
                    for (std::size_t i = 0; i < node.count; ++i) {
                        const T* gi = g.row_ptr(i);
                        T* dst = ga.row_ptr(node.start + i);
                        for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += gi[j];
                    }
                }
                break;
            }
            case Op::slice_cols: {
                if (wants(node.inputs[0])) {
                    Matrix<T>& ga = touch_grad(node.inputs[0]);
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                        const T* gi = g.row_ptr(i);
                        T* dst = ga.row_ptr(i) + node.start;
                        for (std::size_t j = 0; j < node.count; ++j) dst[j] += gi[j];
                    }
                }
                break;
            }
            case Op::concat_cols: {
                std::size_t off = 0;
                for (NodeId in : node.inputs) {
                    const std::size_t w = val(in).cols();
                    if (wants(in)) {
                        Matrix<T>& gi = touch_grad(in);
                        for (std::size_t i = 0; i < g.rows(); ++i) {
                            const T* src = g.row_ptr(i) + off;
                            T* dst = gi.row_ptr(i);
                            for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
                        }
                    }
                    off += w;
                }
                break;
            }
            case Op::vstack: {
                std::size_t off = 0;
                for (NodeId in : node.inputs) {
                    const std::size_t h = val(in).rows();
                    if (wants(in)) {
                        Matrix<T>& gi = touch_grad(in);
                        for (std::size_t i = 0; i < h; ++i) {
                            const T* src = g.row_ptr(off + i);
                            T* dst = gi.row_ptr(i);
                            for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
                        }
                    }
                    off += h;
                }
                break;
            }
            case Op::gelu:
                backward_gelu(node, g);
                break;
            case Op::mean_rows: {
                if (wants(node.inputs[0])) {
                    Matrix<T>& ga = touch_grad(node.inputs[0]);
                    const T inv = T(1) / static_cast<T>(ga.rows());
                    for (std::size_t i = 0; i < ga.rows(); ++i) {
                        T* dst = ga.row_ptr(i);
                        const T* src = g.row_ptr(0);
                        for (std::size_t j = 0; j < ga.cols(); ++j) dst[j] += inv * src[j];
                    }
                }
                break;
            }
            case Op::transpose_op: {
                if (wants(node.inputs[0])) {
                    Matrix<T>& ga = touch_grad(node.inputs[0]);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
                }
                break;
            }
            case Op::temp_scale: {
                if (wants(node.inputs[0])) {
                    const double e = node.scalar;
                    if (e >= node.aux && e <= node.aux2) {
                        Matrix<T>& gt = touch_grad(node.inputs[0]);
                        gt(0, 0) += static_cast<T>(e) * g(0, 0);
                    } else {
                        touch_grad(node.inputs[0]);
                    }
                }
                break;
            }
            case Op::scale_by_scalar: {
                const Matrix<T>& xa = val(node.inputs[0]);
                const T s = val(node.inputs[1])(0, 0);
                if (wants(node.inputs[0])) {
                    Matrix<T>& ga = touch_grad(node.inputs[0]);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += s * g.data()[i];
                }
                if (wants(node.inputs[1])) {
                    Matrix<T>& gs = touch_grad(node.inputs[1]);
                    T acc = T(0);
                    for (std::size_t i = 0; i < xa.size(); ++i) acc += g.data()[i] * xa.data()[i];
                    gs(0, 0) += acc;
                }
                break;
            }
            case Op::cross_entropy_diag:
                backward_cross_entropy_diag(node, g);
                break;
            case Op::smooth_l1_mean:
                backward_smooth_l1(node, g);
                break;
            case Op::sum_all: {
                if (wants(node.inputs[0])) {
                    Matrix<T>& ga = touch_grad(node.inputs[0]);
                    const T gv = g(0, 0);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += gv;
                }
                break;
            }
        }
    }

    void backward_matmul(Node& node, const Matrix<T>& g) {
        const NodeId a = node.inputs[0];
        const NodeId b = node.inputs[1];
        const Matrix<T>& av = val(a);
        const Matrix<T>& bv = val(b);
        const bool ta = node.flag_a;
        const bool tb = node.flag_b;
        // C = op(A) op(B); each case is the chain rule written so the result
        // lands in the untransposed shape of the operand.
        if (wants(a)) {
            Matrix<T> da;
            if (!ta && !tb) da = dualenc::matmul(g, bv, false, true);
            else if (!ta && tb) da = dualenc::matmul(g, bv, false, false);
            else if (ta && !tb) da = dualenc::matmul(bv, g, false, true);
            else da = dualenc::matmul(bv, g, true, true);
            accumulate(a, da);
        }
        if (wants(b)) {
            Matrix<T> db;
            if (!ta && !tb) db = dualenc::matmul(av, g, true, false);
            else if (!ta && tb) db = dualenc::matmul(g, av, true, false);
            else if (ta && !tb) db = dualenc::matmul(av, g, false, false);
            else db = dualenc::matmul(g, av, true, true);
            accumulate(b, db);
        }
    }

    void backward_row_softmax(Node& node, const Matrix<T>& g) {
        if (!wants(node.inputs[0])) return;
        const Matrix<T>& y = node.value;
        Matrix<T>& ga = touch_grad(node.inputs[0]);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            const T* yi = y.row_ptr(i);
            const T* gi = g.row_ptr(i);
            T dot = T(0);
            for (std::size_t j = 0; j < y.cols(); ++j) dot += gi[j] * yi[j];
            T* dst = ga.row_ptr(i);
            for (std::size_t j = 0; j < y.cols(); ++j) dst[j] += yi[j] * (gi[j] - dot);
        }
    }

    void backward_layer_norm(Node& node, const Matrix<T>& g) {
        const Matrix<T>& x = val(node.inputs[0]);
        const Matrix<T>& gain = val(node.inputs[1]);
        const std::size_t n = x.cols();
        const bool wx = wants(node.inputs[0]);
        const bool wg = wants(node.inputs[1]);
        const bool wb = wants(node.inputs[2]);
        Matrix<T>* gx = wx ? &touch_grad(node.inputs[0]) : nullptr;
        Matrix<T>* gg = wg ? &touch_grad(node.inputs[1]) : nullptr;
        Matrix<T>* gb = wb ? &touch_grad(node.inputs[2]) : nullptr;
        std::vector<T> xhat(n), dxhat(n);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const T* xi = x.row_ptr(i);
            const T* gi = g.row_ptr(i);
            T mu = T(0);
            for (std::size_t j = 0; j < n; ++j) mu += xi[j];
            mu /= static_cast<T>(n);
            T var = T(0);
            for (std::size_t j = 0; j < n; ++j) {
                const T d = xi[j] - mu;
                var += d * d;
            }
            var /= static_cast<T>(n);
            const T inv = T(1) / std::sqrt(var + static_cast<T>(ln_eps));
            for (std::size_t j = 0; j < n; ++j) xhat[j] = (xi[j] - mu) * inv;
            if (gg)
                for (std::size_t j = 0; j < n; ++j) gg->row_ptr(0)[j] += gi[j] * xhat[j];
            if (gb)
                for (std::size_t j = 0; j < n; ++j) gb->row_ptr(0)[j] += gi[j];
            if (gx) {
                T mean_d = T(0), mean_dx = T(0);
                for (std::size_t j = 0; j < n; ++j) {
                    dxhat[j] = gi[j] * gain.row_ptr(0)[j];
                    mean_d += dxhat[j];
                    mean_dx += dxhat[j] * xhat[j];
                }
                mean_d /= static_cast<T>(n);
                mean_dx /= static_cast<T>(n);
                T* dst = gx->row_ptr(i);
                for (std::size_t j = 0; j < n; ++j)
                    dst[j] += inv * (dxhat[j] - mean_d - xhat[j] * mean_dx);
            }
        }
    }

    void backward_row_l2_normalize(Node& node, const Matrix<T>& g) {
        if (!wants(node.inputs[0])) return;
        const Matrix<T>& x = val(node.inputs[0]);
        const Matrix<T>& y = node.value;
        Matrix<T>& ga = touch_grad(node.inputs[0]);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const T* xi = x.row_ptr(i);
            const T* yi = y.row_ptr(i);
            const T* gi = g.row_ptr(i);
            T sq = T(0);
            for (std::size_t j = 0; j < x.cols(); ++j) sq += xi[j] * xi[j];
            const T norm = std::sqrt(sq) + static_cast<T>(l2_eps);
            const T inv = T(1) / norm;
            T dot = T(0);
            for (std::size_t j = 0; j < x.cols(); ++j) dot += gi[j] * yi[j];
            T* dst = ga.row_ptr(i);
            for (std::size_t j = 0; j < x.cols(); ++j) dst[j] += inv * (gi[j] - yi[j] * dot);
        }
    }

    void backward_gelu(Node& node, const Matrix<T>& g) {
        if (!wants(node.inputs[0])) return;
        const Matrix<T>& x = val(node.inputs[0]);
        Matrix<T>& ga = touch_grad(node.inputs[0]);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T xi = x.data()[i];
            const T u = gelu_c * (xi + gelu_a * xi * xi * xi);
            const T th = std::tanh(u);
            const T sech2 = T(1) - th * th;
            const T du = gelu_c * (T(1) + T(3) * gelu_a * xi * xi);
            const T dy = T(0.5) * (T(1) + th) + T(0.5) * xi * sech2 * du;
            ga.data()[i] += g.data()[i] * dy;
        }
    }

    void backward_cross_entropy_diag(Node& node, const Matrix<T>& g) {
        if (!wants(node.inputs[0])) return;
        const Matrix<T>& x = val(node.inputs[0]);
        Matrix<T>& ga = touch_grad(node.inputs[0]);
        const T gv = g(0, 0) / static_cast<T>(x.rows());
        std::vector<T> probs(x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const T* xi = x.row_ptr(i);
            T mx = xi[0];
            for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, xi[j]);
            T sum = T(0);
            for (std::size_t j = 0; j < x.cols(); ++j) {
                probs[j] = std::exp(xi[j] - mx);
                sum += probs[j];
            }
            const T inv = T(1) / sum;
            T* dst = ga.row_ptr(i);
            for (std::size_t j = 0; j < x.cols(); ++j) dst[j] += gv * probs[j] * inv;
            dst[i] -= gv;
        }
    }

    void backward_smooth_l1(Node& node, const Matrix<T>& g) {
        const Matrix<T>& x = val(node.inputs[0]);
        const Matrix<T>& z = val(node.inputs[1]);
        const T gv = g(0, 0) / static_cast<T>(x.size());
        const bool wa = wants(node.inputs[0]);
        const bool wb = wants(node.inputs[1]);
        Matrix<T>* ga = wa ? &touch_grad(node.inputs[0]) : nullptr;
        Matrix<T>* gb = wb ? &touch_grad(node.inputs[1]) : nullptr;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T d = x.data()[i] - z.data()[i];
            const T slope = std::max(T(-1), std::min(T(1), d));
            if (ga) ga->data()[i] += gv * slope;
            if (gb) gb->data()[i] -= gv * slope;
        }
    }
};

}  // namespace dualenc
