#include "hsicl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include <Eigen/Core>

#include "hsicl/error.hpp"

namespace hsicl::ad {

std::size_t numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape))
        throw ShapeError("tensor of shape " + shape_str(shape) + " given " + std::to_string(data.size()) + " values");
}

Tensor& Node::grad_slot() {
    if (grad.data.empty()) grad = Tensor(value.shape);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (node_->grad.data.empty()) return Tensor(node_->value.shape);
    return node_->grad;
}

double Var::item() const {
    if (node_->value.size() != 1) throw UsageError("item() on a tensor of shape " + shape_str(shape()));
    return node_->value.data[0];
}

namespace {
thread_local bool grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward) {
    for (double v : value.data)
        if (!std::isfinite(v)) throw NumericalError("non-finite value produced by a tensor op");
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    const bool needs = grad_enabled && std::ranges::any_of(parents, [](const Var& p) { return p.requires_grad(); });
    if (needs) {
        node->requires_grad = true;
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

void backward(const Var& loss) {
    if (!loss.valid() || loss.value().size() != 1)
        throw UsageError("backward() needs a scalar loss, got shape " + (loss.valid() ? shape_str(loss.shape()) : "[]"));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order)
        if (!n->is_leaf()) n->grad = Tensor(n->value.shape);
    Node* root = loss.node().get();
    root->grad_slot().data[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if (!(*it)->is_leaf()) (*it)->backward(**it);
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
    if (a.shape().size() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            Node& n = parent(self, p);
            if (!n.requires_grad) continue;
            auto& g = n.grad_slot().data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
        }
    });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        Node& na = parent(self, 0);
        Node& nb = parent(self, 1);
        const auto& g = self.grad.data;
        if (na.requires_grad) {
            auto& ga = na.grad_slot().data;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * nb.value.data[i];
        }
        if (nb.requires_grad) {
            auto& gb = nb.grad_slot().data;
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * na.value.data[i];
        }
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.data) v *= factor;
    return make_op(std::move(out), {a}, [factor](Node& self) {
        auto& g = parent(self, 0).grad_slot().data;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad.data[i];
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data) s += v;
    return make_op(Tensor({1}, {s}), {a}, [](Node& self) {
        const double g0 = self.grad.data[0];
        for (auto& g : parent(self, 0).grad_slot().data) g += g0;
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var relu(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return make_op(std::move(out), {a}, [](Node& self) {
        Node& n = parent(self, 0);
        auto& g = n.grad_slot().data;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (n.value.data[i] > 0.0) g[i] += self.grad.data[i];
    });
}

Var reshape(const Var& a, Shape shape) {
    if (numel(shape) != a.value().size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor out(std::move(shape), a.value().data);
    return make_op(std::move(out), {a}, [](Node& self) {
        auto& g = parent(self, 0).grad_slot().data;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    require_rank(b, 1, "linear");
    const std::size_t batch = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
    if (w.shape()[1] != in || b.shape()[0] != out_dim)
        throw ShapeError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()) + ", bias " +
                         shape_str(b.shape()));
    Tensor out({batch, out_dim});
    const double* xv = x.value().data.data();
    const double* wv = w.value().data.data();
    const double* bv = b.value().data.data();
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = bv[o];
            const double* xr = xv + n * in;
            const double* wr = wv + o * in;
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            out.data[n * out_dim + o] = acc;
        }
    return make_op(std::move(out), {x, w, b}, [batch, in, out_dim](Node& self) {
        Node& nx = parent(self, 0);
        Node& nw = parent(self, 1);
        Node& nb = parent(self, 2);
        const double* g = self.grad.data.data();
        if (nx.requires_grad) {
            auto& gx = nx.grad_slot().data;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double go = g[n * out_dim + o];
                    const double* wr = nw.value.data.data() + o * in;
                    double* gxr = gx.data() + n * in;
                    for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
                }
        }
        if (nw.requires_grad) {
            auto& gw = nw.grad_slot().data;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double go = g[n * out_dim + o];
                    const double* xr = nx.value.data.data() + n * in;
                    double* gwr = gw.data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
                }
        }
        if (nb.requires_grad) {
            auto& gb = nb.grad_slot().data;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[n * out_dim + o];
        }
    });
}

namespace {

// c[M x N] += a[M x K] * b[K x N] with optional transposes described by strides.
using RowMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                          Eigen::OuterStride<>>;
using ColMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>, 0,
                          Eigen::OuterStride<>>;

inline Eigen::Index ei(std::size_t v) { return static_cast<Eigen::Index>(v); }

template <typename Fn>
void with_operand(const double* p, std::size_t rows, std::size_t cols, std::size_t rs, std::size_t cs, Fn&& fn) {
    // Every caller passes either a row-major (cs == 1) or a transposed
    // row-major (rs == 1) operand.
    if (cs == 1)
        fn(RowMap(p, ei(rows), ei(cols), Eigen::OuterStride<>(ei(rs))));
    else
        fn(ColMap(p, ei(rows), ei(cols), Eigen::OuterStride<>(ei(cs))));
}

/// C[m x n] += A[m x k] * B[k x n], with A and B addressed through
/// (row stride, column stride) pairs so transposes need no copy.
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_rs, std::size_t a_cs,
              const double* b, std::size_t b_rs, std::size_t b_cs, double* c, bool accumulate = true) {
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> C(c, ei(m), ei(n));
    with_operand(a, m, k, a_rs, a_cs, [&](const auto& A) {
        with_operand(b, k, n, b_rs, b_cs, [&](const auto& B) {
            if (accumulate)
                C.noalias() += A * B;
            else
                C.noalias() = A * B;
        });
    });
}

Var batched_matmul(const Var& a, const Var& b, std::size_t batch, std::size_t m, std::size_t k, std::size_t n,
                   Shape out_shape) {
    Tensor out(std::move(out_shape));
    for (std::size_t t = 0; t < batch; ++t)
        gemm_acc(m, n, k, a.value().data.data() + t * m * k, k, 1, b.value().data.data() + t * k * n, n, 1,
                 out.data.data() + t * m * n);
    return make_op(std::move(out), {a, b}, [batch, m, k, n](Node& self) {
        Node& na = parent(self, 0);
        Node& nb = parent(self, 1);
        const double* g = self.grad.data.data();
        for (std::size_t t = 0; t < batch; ++t) {
            const double* gt = g + t * m * n;
            if (na.requires_grad)  // dA = G * B^T
                gemm_acc(m, k, n, gt, n, 1, nb.value.data.data() + t * k * n, 1, n,
                         na.grad_slot().data.data() + t * m * k);
            if (nb.requires_grad)  // dB = A^T * G
                gemm_acc(k, n, m, na.value.data.data() + t * m * k, 1, k, gt, n, 1,
                         nb.grad_slot().data.data() + t * k * n);
        }
    });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    return batched_matmul(a, b, 1, m, k, n, {m, n});
}

Var bmm(const Var& a, const Var& b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    if (a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1])
        throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
    return batched_matmul(a, b, batch, m, k, n, {batch, m, n});
}

Var transpose_last(const Var& a) {
    const auto rank = a.shape().size();
    if (rank != 2 && rank != 3) throw ShapeError("transpose_last: rank must be 2 or 3, got " + shape_str(a.shape()));
    const std::size_t batch = rank == 3 ? a.shape()[0] : 1;
    const std::size_t m = a.shape()[rank - 2], n = a.shape()[rank - 1];
    Shape s = a.shape();
    std::swap(s[rank - 2], s[rank - 1]);
    Tensor out(s);
    for (std::size_t t = 0; t < batch; ++t)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.data[t * m * n + j * m + i] = a.value().data[t * m * n + i * n + j];
    return make_op(std::move(out), {a}, [batch, m, n](Node& self) {
        auto& g = parent(self, 0).grad_slot().data;
        for (std::size_t t = 0; t < batch; ++t)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[t * m * n + i * n + j] += self.grad.data[t * m * n + j * m + i];
    });
}

Var softmax_last(const Var& a) {
    if (a.shape().empty()) throw ShapeError("softmax_last: scalar input");
    const std::size_t n = a.shape().back();
    const std::size_t rows = n ? a.value().size() / n : 0;
    Tensor out(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.value().data.data() + r * n;
        double* y = out.data.data() + r * n;
        const double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    return make_op(std::move(out), {a}, [rows, n](Node& self) {
        auto& gx = parent(self, 0).grad_slot().data;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data.data() + r * n;
            const double* g = self.grad.data.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
        }
    });
}

Var normalize_rows(const Var& a) {
    require_rank(a, 2, "normalize_rows");
    const std::size_t rows = a.shape()[0], d = a.shape()[1];
    Tensor out(a.shape());
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.value().data.data() + r * d;
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += x[j] * x[j];
        norms[r] = std::sqrt(ss);
        if (!(norms[r] > 0.0)) throw NumericalError("normalize_rows: row " + std::to_string(r) + " has zero norm");
        for (std::size_t j = 0; j < d; ++j) out.data[r * d + j] = x[j] / norms[r];
    }
    return make_op(std::move(out), {a}, [rows, d, norms = std::move(norms)](Node& self) {
        auto& gx = parent(self, 0).grad_slot().data;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data.data() + r * d;
            const double* g = self.grad.data.data() + r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += (g[j] - y[j] * dot) / norms[r];
        }
    });
}

namespace {

struct ConvGeom {
    std::size_t batch, in_ch, d, h, w;
    std::size_t out_ch, kd, kh, kw;
    std::size_t pd, ph, pw;
    std::size_t od, oh, ow;
};

// Output index range [lo, hi) whose input coordinate o + k - p falls inside [0, n).
inline void valid_range(std::size_t k, std::size_t p, std::size_t n, std::size_t out, std::size_t& lo,
                        std::size_t& hi) {
    lo = p > k ? p - k : 0;
    const std::size_t lim = n + p;  // o + k - p < n  <=>  o < n + p - k
    hi = lim > k ? std::min(out, lim - k) : 0;
    if (hi < lo) hi = lo;
}

// Visits every (output row, input row, tap weight) triple of one (b, o, c) slice.
template <typename RowFn>
void for_each_tap(const ConvGeom& g, RowFn&& fn) {
    for (std::size_t a = 0; a < g.kd; ++a) {
        std::size_t d_lo, d_hi;
        valid_range(a, g.pd, g.d, g.od, d_lo, d_hi);
        for (std::size_t bb = 0; bb < g.kh; ++bb) {
            std::size_t h_lo, h_hi;
            valid_range(bb, g.ph, g.h, g.oh, h_lo, h_hi);
            for (std::size_t cc = 0; cc < g.kw; ++cc) {
                std::size_t w_lo, w_hi;
                valid_range(cc, g.pw, g.w, g.ow, w_lo, w_hi);
                if (w_lo >= w_hi) continue;
                const std::size_t tap = (a * g.kh + bb) * g.kw + cc;
                for (std::size_t od = d_lo; od < d_hi; ++od)
                    for (std::size_t oh = h_lo; oh < h_hi; ++oh) {
                        const std::size_t out_off = (od * g.oh + oh) * g.ow + w_lo;
                        const std::size_t in_off = ((od + a - g.pd) * g.h + (oh + bb - g.ph)) * g.w + (w_lo + cc - g.pw);
                        fn(tap, out_off, in_off, w_hi - w_lo);
                    }
            }
        }
    }
}

/// Unfolds one sample [C, D, H, W] into a [C * taps, out_vol] matrix.
/// Every entry is written exactly once; taps over the padding get zero.
void im2col(const ConvGeom& g, const double* x, double* col) {
    const std::size_t in_vol = g.d * g.h * g.w;
    double* dst = col;
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        const double* xin = x + c * in_vol;
        for (std::size_t a = 0; a < g.kd; ++a)
            for (std::size_t bb = 0; bb < g.kh; ++bb)
                for (std::size_t cc = 0; cc < g.kw; ++cc) {
                    std::size_t w_lo, w_hi;
                    valid_range(cc, g.pw, g.w, g.ow, w_lo, w_hi);
                    const bool full_row = w_lo == 0 && w_hi == g.ow;  // implies cc >= pw
                    for (std::size_t od = 0; od < g.od; ++od) {
                        const std::size_t id = od + a;  // index into the padded input
                        if (id < g.pd || id >= g.pd + g.d) {
                            std::fill(dst, dst + g.oh * g.ow, 0.0);
                            dst += g.oh * g.ow;
                            continue;
                        }
                        for (std::size_t oh = 0; oh < g.oh; ++oh, dst += g.ow) {
                            const std::size_t ih = oh + bb;
                            if (ih < g.ph || ih >= g.ph + g.h || w_lo >= w_hi) {
                                std::fill(dst, dst + g.ow, 0.0);
                                continue;
                            }
                            const double* src = xin + ((id - g.pd) * g.h + (ih - g.ph)) * g.w;
                            if (full_row) {
                                const double* s = src + (cc - g.pw);
                                for (std::size_t ow = 0; ow < g.ow; ++ow) dst[ow] = s[ow];
                                continue;
                            }
                            for (std::size_t ow = 0; ow < w_lo; ++ow) dst[ow] = 0.0;
                            for (std::size_t ow = w_lo; ow < w_hi; ++ow) dst[ow] = src[ow + cc - g.pw];
                            for (std::size_t ow = w_hi; ow < g.ow; ++ow) dst[ow] = 0.0;
                        }
                    }
                }
    }
}

void col2im_acc(const ConvGeom& g, const double* col, double* gx) {
    const std::size_t in_vol = g.d * g.h * g.w, out_vol = g.od * g.oh * g.ow, taps = g.kd * g.kh * g.kw;
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        double* gin = gx + c * in_vol;
        const double* base = col + c * taps * out_vol;
        for_each_tap(g, [&](std::size_t tap, std::size_t oo, std::size_t io, std::size_t len) {
            const double* src = base + tap * out_vol + oo;
            for (std::size_t i = 0; i < len; ++i) gin[io + i] += src[i];
        });
    }
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& b, Dims3 pad) {
    require_rank(x, 5, "conv3d");
    require_rank(w, 5, "conv3d");
    require_rank(b, 1, "conv3d");
    ConvGeom g{};
    g.batch = x.shape()[0];
    g.in_ch = x.shape()[1];
    g.d = x.shape()[2];
    g.h = x.shape()[3];
    g.w = x.shape()[4];
    g.out_ch = w.shape()[0];
    g.kd = w.shape()[2];
    g.kh = w.shape()[3];
    g.kw = w.shape()[4];
    g.pd = pad[0];
    g.ph = pad[1];
    g.pw = pad[2];
    if (w.shape()[1] != g.in_ch || b.shape()[0] != g.out_ch)
        throw ShapeError("conv3d: input " + shape_str(x.shape()) + ", kernel " + shape_str(w.shape()) + ", bias " +
                         shape_str(b.shape()));
    if (g.d + 2 * g.pd < g.kd || g.h + 2 * g.ph < g.kh || g.w + 2 * g.pw < g.kw)
        throw ShapeError("conv3d: kernel " + shape_str(w.shape()) + " larger than padded input " + shape_str(x.shape()));
    g.od = g.d + 2 * g.pd - g.kd + 1;
    g.oh = g.h + 2 * g.ph - g.kh + 1;
    g.ow = g.w + 2 * g.pw - g.kw + 1;

    const std::size_t in_vol = g.d * g.h * g.w;
    const std::size_t out_vol = g.od * g.oh * g.ow;
    const std::size_t taps = g.kd * g.kh * g.kw;
    const std::size_t rows = g.in_ch * taps;
    Tensor out({g.batch, g.out_ch, g.od, g.oh, g.ow});
    const double* xv = x.value().data.data();
    const double* wv = w.value().data.data();
    std::vector<double> col(rows * out_vol);
    for (std::size_t n = 0; n < g.batch; ++n) {
        im2col(g, xv + n * g.in_ch * in_vol, col.data());
        double* y = out.data.data() + n * g.out_ch * out_vol;
        for (std::size_t o = 0; o < g.out_ch; ++o) std::fill(y + o * out_vol, y + (o + 1) * out_vol, b.value().data[o]);
        gemm_acc(g.out_ch, out_vol, rows, wv, rows, 1, col.data(), out_vol, 1, y);
    }

    return make_op(std::move(out), {x, w, b}, [g, in_vol, out_vol, rows](Node& self) {
        Node& nx = parent(self, 0);
        Node& nw = parent(self, 1);
        Node& nb = parent(self, 2);
        const double* gy = self.grad.data.data();
        double* gx = nx.requires_grad ? nx.grad_slot().data.data() : nullptr;
        double* gw = nw.requires_grad ? nw.grad_slot().data.data() : nullptr;
        const double* xv = nx.value.data.data();
        const double* wv = nw.value.data.data();
        std::vector<double> col(rows * out_vol);
        for (std::size_t n = 0; n < g.batch; ++n) {
            const double* gyn = gy + n * g.out_ch * out_vol;
            if (nb.requires_grad)
                for (std::size_t o = 0; o < g.out_ch; ++o) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < out_vol; ++i) acc += gyn[o * out_vol + i];
                    nb.grad_slot().data[o] += acc;
                }
            if (gw) {  // dW += dY * col^T
                im2col(g, xv + n * g.in_ch * in_vol, col.data());
                gemm_acc(g.out_ch, rows, out_vol, gyn, out_vol, 1, col.data(), 1, out_vol, gw);
            }
            if (gx) {  // dcol = W^T * dY, scattered back onto the input
                gemm_acc(rows, out_vol, g.out_ch, wv, 1, rows, gyn, out_vol, 1, col.data(), false);
                col2im_acc(g, col.data(), gx + n * g.in_ch * in_vol);
            }
        }
    });
}

Var maxpool3d(const Var& x, Dims3 window) {
    require_rank(x, 5, "maxpool3d");
    const auto& s = x.shape();
    const std::size_t batch = s[0], ch = s[1], d = s[2], h = s[3], w = s[4];
    const auto [pd, ph, pw] = window;
    if (pd == 0 || ph == 0 || pw == 0) throw ShapeError("maxpool3d: window dimensions must be positive");
    if (pd > d || ph > h || pw > w)
        throw ShapeError("maxpool3d: window larger than input " + shape_str(s));
    const std::size_t od = d / pd, oh = h / ph, ow = w / pw;
    Tensor out({batch, ch, od, oh, ow});
    std::vector<std::size_t> argmax(out.size());
    const double* xv = x.value().data.data();
    std::size_t idx = 0;
    for (std::size_t nc = 0; nc < batch * ch; ++nc) {
        const std::size_t base = nc * d * h * w;
        for (std::size_t a = 0; a < od; ++a)
            for (std::size_t bb = 0; bb < oh; ++bb)
                for (std::size_t cc = 0; cc < ow; ++cc, ++idx) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t arg = 0;
                    for (std::size_t i = 0; i < pd; ++i)
                        for (std::size_t j = 0; j < ph; ++j)
                            for (std::size_t k = 0; k < pw; ++k) {
                                const std::size_t off = base + ((a * pd + i) * h + (bb * ph + j)) * w + (cc * pw + k);
                                if (xv[off] > best) best = xv[off], arg = off;
                            }
                    out.data[idx] = best;
                    argmax[idx] = arg;
                }
    }
    return make_op(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
        auto& g = parent(self, 0).grad_slot().data;
        for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad.data[i];
    });
}

Var spatial_tokens(const Var& x) {
    require_rank(x, 5, "spatial_tokens");
    const auto& s = x.shape();
    const std::size_t batch = s[0], ch = s[1], d = s[2], hw = s[3] * s[4];
    const std::size_t emb = ch * d;
    Tensor out({batch, hw, emb});
    // Source (n, c, z, p) with p the flattened spatial index -> (n, p, c*d + z).
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t e = 0; e < emb; ++e)
            for (std::size_t p = 0; p < hw; ++p)
                out.data[(n * hw + p) * emb + e] = x.value().data[(n * emb + e) * hw + p];
    return make_op(std::move(out), {x}, [batch, hw, emb](Node& self) {
        auto& g = parent(self, 0).grad_slot().data;
        for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t e = 0; e < emb; ++e)
                for (std::size_t p = 0; p < hw; ++p) g[(n * emb + e) * hw + p] += self.grad.data[(n * hw + p) * emb + e];
    });
}

}  // namespace hsicl::ad
