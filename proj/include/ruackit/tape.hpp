#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ruackit/grid.hpp"
#include "ruackit/grid_ops.hpp"
#include "ruackit/special.hpp"

namespace ruackit {

enum class Op : std::uint8_t {
    kInput,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kNeg,
    kExp,
    kLog,
    kPowConst,
    kSigmoid,
    kTanh,
    kSoftplus,
    kSteRelu,
    kLogGamma,
    kSum,
    kMean,
    kMaskedMean,
    kMatMul,
    kConv3x3,
    kGridSample,
    kWeibullSample,
    kStopGrad,
    kGradReverse,
    kReshape,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::kInput: return "input";
        case Op::kAdd: return "add";
        case Op::kSub: return "sub";
        case Op::kMul: return "mul";
        case Op::kDiv: return "div";
        case Op::kNeg: return "neg";
        case Op::kExp: return "exp";
        case Op::kLog: return "log";
        case Op::kPowConst: return "pow-const";
        case Op::kSigmoid: return "sigmoid";
        case Op::kTanh: return "tanh";
        case Op::kSoftplus: return "softplus";
        case Op::kSteRelu: return "ste-relu";
        case Op::kLogGamma: return "log-gamma";
        case Op::kSum: return "sum";
        case Op::kMean: return "mean";
        case Op::kMaskedMean: return "masked-mean";
        case Op::kMatMul: return "matmul";
        case Op::kConv3x3: return "conv3x3";
        case Op::kGridSample: return "grid-sample";
        case Op::kWeibullSample: return "weibull-sample";
        case Op::kStopGrad: return "stop-gradient";
        case Op::kGradReverse: return "gradient-reversal";
        case Op::kReshape: return "reshape";
    }
    return "?";
}

using BorderMode = GridBorder;

/// Errors raised by tape construction or evaluation; carries the node id.
class TapeError : public std::runtime_error {
public:
    TapeError(int node, const std::string& msg)
        : std::runtime_error("tape node " + std::to_string(node) + ": " + msg), node_id(node) {}
    int node_id;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; the tape owns all storage.
struct Value {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Grid& value() const;

    Value exp() const;
    Value log() const;
    Value pow(double c) const;
    Value sigmoid() const;
    Value tanh() const;
    Value softplus() const;
    Value ste_relu() const;
    Value lgamma() const;
    Value sum() const;
    Value mean() const;
};

/// Reverse-mode tape over a closed primitive-op set. Ops are recorded
/// eagerly: recording a node also computes its forward value, so a fully
/// constructed tape is already evaluated. backward() then walks the nodes
/// in reverse, which visits each exactly once (construction order is a
/// topological order by construction).
class Tape {
public:
    struct Node {
        Op op = Op::kInput;
        int a = -1, b = -1, c = -1;
        Grid value;
        Grid grad;
        bool has_grad = false;
        bool requires_grad = false;
        bool is_param = false;
        double scalar = 0.0;  // pow exponent or GRL scale
        BorderMode border = BorderMode::kClamp;
        std::string name;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int size() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }

    Value input(Grid g, std::string name = {}) {
        return make_leaf(std::move(g), false, std::move(name));
    }
    Value param(Grid g, std::string name = {}) {
        return make_leaf(std::move(g), true, std::move(name));
    }
    Value constant(double v) { return input(Grid::scalar(v)); }

    // ---- element-wise binaries (identical shapes, or one side scalar) ----

    Value add(Value a, Value b) { return binary(Op::kAdd, a, b); }
    Value sub(Value a, Value b) { return binary(Op::kSub, a, b); }
    Value mul(Value a, Value b) { return binary(Op::kMul, a, b); }
    Value div(Value a, Value b) { return binary(Op::kDiv, a, b); }

    Value neg(Value a) { return unary(Op::kNeg, a); }
    Value exp(Value a) { return unary(Op::kExp, a); }
    Value log(Value a) { return unary(Op::kLog, a); }
    Value sigmoid(Value a) { return unary(Op::kSigmoid, a); }
    Value tanh(Value a) { return unary(Op::kTanh, a); }
    Value softplus(Value a) { return unary(Op::kSoftplus, a); }
    Value ste_relu(Value a) { return unary(Op::kSteRelu, a); }
    Value lgamma(Value a) { return unary(Op::kLogGamma, a); }

    Value pow_const(Value a, double c) {
        Value v = unary(Op::kPowConst, a, c);
        return v;
    }

    Value sum(Value a) { return reduce(Op::kSum, a); }
    Value mean(Value a) { return reduce(Op::kMean, a); }

    /// sum(x * m) / sum(m); differentiable in both arguments.
    Value masked_mean(Value x, Value m) {
        const Grid& gx = val(x);
        const Grid& gm = val(m);
        if (!gx.same_shape(gm))
            throw TapeError(size(), std::string("masked-mean: shape mismatch ") +
                                        Grid::shape_str(gx.shape()) + " vs " +
                                        Grid::shape_str(gm.shape()));
        double s = 0.0, w = 0.0;
        for (std::int64_t i = 0; i < gx.size(); ++i) {
            s += gx[i] * gm[i];
            w += gm[i];
        }
        if (w == 0.0) throw TapeError(size(), "masked-mean: mask sums to zero");
        return push(Op::kMaskedMean, x.id, m.id, -1, Grid::scalar(s / w));
    }

    Value matmul(Value a, Value b) {
        const Grid& ga = val(a);
        const Grid& gb = val(b);
        if (ga.rank() != 2 || gb.rank() != 2 || ga.extent(1) != gb.extent(0))
            throw TapeError(size(), std::string("matmul: incompatible shapes ") +
                                        Grid::shape_str(ga.shape()) + " x " +
                                        Grid::shape_str(gb.shape()));
        int m = ga.extent(0), k = ga.extent(1), n = gb.extent(1);
        Grid out({m, n});
        for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
                double av = ga[i * k + kk];
                if (av == 0.0) continue;
                for (int j = 0; j < n; ++j) out[i * n + j] += av * gb[kk * n + j];
            }
        return push(Op::kMatMul, a.id, b.id, -1, std::move(out));
    }

    /// 3x3 convolution, stride 1, reflect padding. x:[C,H,W] w:[F,C,3,3] b:[F].
    Value conv3x3(Value x, Value w, Value b) {
        const Grid& gx = val(x);
        const Grid& gw = val(w);
        const Grid& gb = val(b);
        if (gx.rank() != 3 || gw.rank() != 4 || gw.extent(2) != 3 || gw.extent(3) != 3 ||
            gw.extent(1) != gx.extent(0) || gb.rank() != 1 || gb.extent(0) != gw.extent(0))
            throw TapeError(size(), std::string("conv3x3: incompatible shapes x=") +
                                        Grid::shape_str(gx.shape()) + " w=" +
                                        Grid::shape_str(gw.shape()) + " b=" +
                                        Grid::shape_str(gb.shape()));
        Grid out = conv3x3_forward(gx, gw, gb);
        return push(Op::kConv3x3, x.id, w.id, b.id, std::move(out));
    }

    /// Bilinear warp of img:[C,H,W] by per-pixel offsets:[2,H,W] (dy, dx in
    /// pixel units). Differentiable w.r.t. both image and offsets.
    Value grid_sample(Value img, Value off, BorderMode mode = BorderMode::kClamp) {
        const Grid& gi = val(img);
        const Grid& go = val(off);
        if (gi.rank() != 3 || go.rank() != 3 || go.extent(0) != 2 ||
            go.extent(1) != gi.extent(1) || go.extent(2) != gi.extent(2))
            throw TapeError(size(), std::string("grid-sample: incompatible shapes img=") +
                                        Grid::shape_str(gi.shape()) + " off=" +
                                        Grid::shape_str(go.shape()));
        Grid out = grid_sample_forward(gi, go, mode);
        Value v = push(Op::kGridSample, img.id, off.id, -1, std::move(out));
        nodes_.back().border = mode;
        return v;
    }

    /// w = lam * (-ln(1-u))^(1/kap); u must lie in the open interval (0,1).
    /// Differentiable w.r.t. lam and kap; u is treated as an exogenous draw.
    Value weibull_sample(Value lam, Value kap, Value u) {
        const Grid& gl = val(lam);
        const Grid& gk = val(kap);
        const Grid& gu = val(u);
        if (!gl.same_shape(gk) || !gl.same_shape(gu))
            throw TapeError(size(), "weibull-sample: lam/kap/u shapes must match");
        Grid out(gl.shape());
        for (std::int64_t i = 0; i < gl.size(); ++i) {
            if (!(gu[i] > 0.0 && gu[i] < 1.0))
                throw TapeError(size(), "weibull-sample: u outside (0,1)");
            double t = -std::log1p(-gu[i]);
            out[i] = gl[i] * std::pow(t, 1.0 / gk[i]);
        }
        return push(Op::kWeibullSample, lam.id, kap.id, u.id, std::move(out));
    }

    /// Identity on the data, new shape metadata; gradient passes through.
    Value reshape(Value a, std::vector<int> new_shape) {
        const Grid& ga = val(a);
        Grid out(std::move(new_shape), ga.vec());
        if (out.size() != ga.size())
            throw TapeError(size(), "reshape: element count mismatch");
        return push(Op::kReshape, a.id, -1, -1, std::move(out));
    }

    /// Identity forward; blocks gradient flow upstream.
    Value stop_grad(Value a) {
        Value v = push(Op::kStopGrad, a.id, -1, -1, val(a));
        nodes_.back().requires_grad = false;
        return v;
    }

    /// Identity forward; backward propagates -scale * incoming gradient.
    Value grad_reverse(Value a, double scale = 1.0) {
        Value v = push(Op::kGradReverse, a.id, -1, -1, val(a));
        nodes_.back().scalar = scale;
        return v;
    }

    // ---- backward ----

    void backward(Value root) { backward(root, Grid(val(root).shape(), 1.0)); }

    void backward(Value root, const Grid& seed) {
        if (!root.valid() || root.tape != this || root.id >= size())
            throw TapeError(root.id, "backward: root does not belong to this tape");
        if (!seed.same_shape(val(root)))
            throw TapeError(root.id, "backward: seed shape mismatch");
        for (auto& n : nodes_) n.has_grad = false;
        accumulate(root.id, seed);
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.has_grad || n.op == Op::kInput) continue;
            propagate(i);
        }
        ran_backward_ = true;
    }

    bool ran_backward() const { return ran_backward_; }

    /// Gradient accumulated at a node by the last backward pass.
    const Grid& grad(Value v) const {
        const Node& n = node(v.id);
        if (!ran_backward_) throw TapeError(v.id, "grad: backward has not run");
        if (!n.has_grad) {
            static thread_local Grid zero;
            zero = Grid(n.value.shape(), 0.0);
            return zero;
        }
        return n.grad;
    }

    const Grid& val(Value v) const { return node(v.id).value; }

private:
    Value make_leaf(Grid g, bool is_param, std::string name) {
        check_finite_input(g);
        Node n;
        n.op = Op::kInput;
        n.value = std::move(g);
        n.requires_grad = is_param;
        n.is_param = is_param;
        n.name = std::move(name);
        nodes_.push_back(std::move(n));
        return {this, size() - 1};
    }

    void check_finite_input(const Grid& g) {
        if (!g.all_finite()) throw TapeError(size(), "input: non-finite values");
    }

    Value push(Op op, int a, int b, int c, Grid out) {
        if (!out.all_finite())
            throw TapeError(size(), std::string(op_name(op)) + ": non-finite result");
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.c = c;
        n.value = std::move(out);
        n.requires_grad = (a >= 0 && nodes_[static_cast<size_t>(a)].requires_grad) ||
                          (b >= 0 && nodes_[static_cast<size_t>(b)].requires_grad) ||
                          (c >= 0 && nodes_[static_cast<size_t>(c)].requires_grad);
        nodes_.push_back(std::move(n));
        return {this, size() - 1};
    }

    Value binary(Op op, Value a, Value b) {
        require_same_tape(a);
        require_same_tape(b);
        const Grid& ga = val(a);
        const Grid& gb = val(b);
        bool a_scalar = ga.is_scalar(), b_scalar = gb.is_scalar();
        if (!ga.same_shape(gb) && !a_scalar && !b_scalar)
            throw TapeError(size(), std::string(op_name(op)) + ": shape mismatch " +
                                        Grid::shape_str(ga.shape()) + " vs " +
                                        Grid::shape_str(gb.shape()));
        const Grid& big = a_scalar && !b_scalar ? gb : ga;
        Grid out(big.shape());
        const std::int64_t n = big.size();
        for (std::int64_t i = 0; i < n; ++i) {
            double x = ga[a_scalar ? 0 : i];
            double y = gb[b_scalar ? 0 : i];
            switch (op) {
                case Op::kAdd: out[i] = x + y; break;
                case Op::kSub: out[i] = x - y; break;
                case Op::kMul: out[i] = x * y; break;
                case Op::kDiv: out[i] = x / y; break;
                default: throw TapeError(size(), "binary: bad op");
            }
        }
        return push(op, a.id, b.id, -1, std::move(out));
    }

    Value unary(Op op, Value a, double c = 0.0) {
        require_same_tape(a);
        const Grid& ga = val(a);
        Grid out(ga.shape());
        for (std::int64_t i = 0; i < ga.size(); ++i) {
            double x = ga[i];
            switch (op) {
                case Op::kNeg: out[i] = -x; break;
                case Op::kExp: out[i] = std::exp(x); break;
                case Op::kLog: out[i] = std::log(x); break;
                case Op::kPowConst: out[i] = std::pow(x, c); break;
                case Op::kSigmoid: out[i] = 1.0 / (1.0 + std::exp(-x)); break;
                case Op::kTanh: out[i] = std::tanh(x); break;
                case Op::kSoftplus:
                    out[i] = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
                    break;
                case Op::kSteRelu: out[i] = x > 0.0 ? x : 0.0; break;
                case Op::kLogGamma: out[i] = log_gamma(x); break;
                default: throw TapeError(size(), "unary: bad op");
            }
        }
        Value v = push(op, a.id, -1, -1, std::move(out));
        nodes_.back().scalar = c;
        return v;
    }

    Value reduce(Op op, Value a) {
        require_same_tape(a);
        const Grid& ga = val(a);
        double s = 0.0;
        for (std::int64_t i = 0; i < ga.size(); ++i) s += ga[i];
        if (op == Op::kMean) s /= static_cast<double>(ga.size());
        return push(op, a.id, -1, -1, Grid::scalar(s));
    }

    void require_same_tape(Value v) {
        if (v.tape != this) throw TapeError(v.id, "value belongs to another tape");
    }

    void accumulate(int id, const Grid& g) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad && !n.is_param && n.op == Op::kInput) return;
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
        } else {
            for (std::int64_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
        }
    }

    // Accumulate into input `id`, reducing to scalar if the input was
    // broadcast in a binary op.
    void accumulate_maybe_scalar(int id, Grid g) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (n.value.is_scalar() && g.size() > 1) {
            double s = 0.0;
            for (std::int64_t i = 0; i < g.size(); ++i) s += g[i];
            accumulate(id, Grid::scalar(s));
        } else {
            accumulate(id, g);
        }
    }

    bool wants_grad(int id) const {
        return id >= 0 && nodes_[static_cast<size_t>(id)].requires_grad;
    }

    void propagate(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        const Grid& g = n.grad;
        switch (n.op) {
            case Op::kInput: return;
            case Op::kStopGrad: return;
            case Op::kReshape: {
                if (!wants_grad(n.a)) return;
                const Grid& x = nodes_[static_cast<size_t>(n.a)].value;
                accumulate(n.a, Grid(x.shape(), g.vec()));
                return;
            }
            case Op::kGradReverse: {
                int src = n.a;
                if (!wants_grad(src)) return;
                Grid out(g.shape());
                for (std::int64_t i = 0; i < g.size(); ++i) out[i] = -n.scalar * g[i];
                accumulate(src, std::move(out));
                return;
            }
            case Op::kAdd: {
                if (wants_grad(n.a)) accumulate_maybe_scalar(n.a, g);
                if (wants_grad(n.b)) accumulate_maybe_scalar(n.b, g);
                return;
            }
            case Op::kSub: {
                if (wants_grad(n.a)) accumulate_maybe_scalar(n.a, g);
                if (wants_grad(n.b)) {
                    Grid out(g.shape());
                    for (std::int64_t i = 0; i < g.size(); ++i) out[i] = -g[i];
                    accumulate_maybe_scalar(n.b, std::move(out));
                }
                return;
            }
            case Op::kMul:
            case Op::kDiv: {
                const Grid& ga = nodes_[static_cast<size_t>(n.a)].value;
                const Grid& gb = nodes_[static_cast<size_t>(n.b)].value;
                bool as = ga.is_scalar() && g.size() > 1;
                bool bs = gb.is_scalar() && g.size() > 1;
                if (wants_grad(n.a)) {
                    Grid out(g.shape());
                    for (std::int64_t i = 0; i < g.size(); ++i) {
                        double b = gb[bs ? 0 : i];
                        out[i] = n.op == Op::kMul ? g[i] * b : g[i] / b;
                    }
                    accumulate_maybe_scalar(n.a, std::move(out));
                }
                if (wants_grad(n.b)) {
                    Grid out(g.shape());
                    for (std::int64_t i = 0; i < g.size(); ++i) {
                        double a = ga[as ? 0 : i];
                        double b = gb[bs ? 0 : i];
                        out[i] = n.op == Op::kMul ? g[i] * a : -g[i] * a / (b * b);
                    }
                    accumulate_maybe_scalar(n.b, std::move(out));
                }
                return;
            }
            case Op::kNeg:
            case Op::kExp:
            case Op::kLog:
            case Op::kPowConst:
            case Op::kSigmoid:
            case Op::kTanh:
            case Op::kSoftplus:
            case Op::kSteRelu:
            case Op::kLogGamma: {
                if (!wants_grad(n.a)) return;
                const Grid& x = nodes_[static_cast<size_t>(n.a)].value;
                Grid out(g.shape());
                for (std::int64_t i = 0; i < g.size(); ++i) {
                    double d = 0.0;
                    switch (n.op) {
                        case Op::kNeg: d = -1.0; break;
                        case Op::kExp: d = n.value[i]; break;
                        case Op::kLog: d = 1.0 / x[i]; break;
                        case Op::kPowConst:
                            d = n.scalar * std::pow(x[i], n.scalar - 1.0);
                            break;
                        case Op::kSigmoid: d = n.value[i] * (1.0 - n.value[i]); break;
                        case Op::kTanh: d = 1.0 - n.value[i] * n.value[i]; break;
                        case Op::kSoftplus: d = 1.0 / (1.0 + std::exp(-x[i])); break;
                        case Op::kSteRelu: d = 1.0; break;  // straight-through
                        case Op::kLogGamma: d = digamma(x[i]); break;
                        default: break;
                    }
                    out[i] = g[i] * d;
                }
                accumulate(n.a, std::move(out));
                return;
            }
            case Op::kSum:
            case Op::kMean: {
                if (!wants_grad(n.a)) return;
                const Grid& x = nodes_[static_cast<size_t>(n.a)].value;
                double gs = g[0];
                if (n.op == Op::kMean) gs /= static_cast<double>(x.size());
                accumulate(n.a, Grid(x.shape(), gs));
                return;
            }
            case Op::kMaskedMean: {
                const Grid& x = nodes_[static_cast<size_t>(n.a)].value;
                const Grid& m = nodes_[static_cast<size_t>(n.b)].value;
                double w = 0.0;
                for (std::int64_t i = 0; i < m.size(); ++i) w += m[i];
                double gs = g[0];
                double f = n.value[0];
                if (wants_grad(n.a)) {
                    Grid out(x.shape());
                    for (std::int64_t i = 0; i < x.size(); ++i) out[i] = gs * m[i] / w;
                    accumulate(n.a, std::move(out));
                }
                if (wants_grad(n.b)) {
                    Grid out(m.shape());
                    for (std::int64_t i = 0; i < m.size(); ++i) out[i] = gs * (x[i] - f) / w;
                    accumulate(n.b, std::move(out));
                }
                return;
            }
            case Op::kMatMul: {
                const Grid& a = nodes_[static_cast<size_t>(n.a)].value;
                const Grid& b = nodes_[static_cast<size_t>(n.b)].value;
                int m = a.extent(0), k = a.extent(1), nn = b.extent(1);
                if (wants_grad(n.a)) {  // dA = G B^T
                    Grid out({m, k});
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < nn; ++j) {
                            double gv = g[i * nn + j];
                            if (gv == 0.0) continue;
                            for (int kk = 0; kk < k; ++kk)
                                out[i * k + kk] += gv * b[kk * nn + j];
                        }
                    accumulate(n.a, std::move(out));
                }
                if (wants_grad(n.b)) {  // dB = A^T G
                    Grid out({k, nn});
                    for (int i = 0; i < m; ++i)
                        for (int kk = 0; kk < k; ++kk) {
                            double av = a[i * k + kk];
                            if (av == 0.0) continue;
                            for (int j = 0; j < nn; ++j)
                                out[kk * nn + j] += av * g[i * nn + j];
                        }
                    accumulate(n.b, std::move(out));
                }
                return;
            }
            case Op::kConv3x3: {
                conv3x3_backward(n, g);
                return;
            }
            case Op::kGridSample: {
                grid_sample_backward(n, g);
                return;
            }
            case Op::kWeibullSample: {
                const Grid& lam = nodes_[static_cast<size_t>(n.a)].value;
                const Grid& kap = nodes_[static_cast<size_t>(n.b)].value;
                const Grid& u = nodes_[static_cast<size_t>(n.c)].value;
                if (wants_grad(n.a)) {
                    Grid out(lam.shape());
                    for (std::int64_t i = 0; i < lam.size(); ++i) {
                        double t = -std::log1p(-u[i]);
                        out[i] = g[i] * std::pow(t, 1.0 / kap[i]);
                    }
                    accumulate(n.a, std::move(out));
                }
                if (wants_grad(n.b)) {
                    Grid out(kap.shape());
                    for (std::int64_t i = 0; i < kap.size(); ++i) {
                        double t = -std::log1p(-u[i]);
                        out[i] = -g[i] * n.value[i] * std::log(t) / (kap[i] * kap[i]);
                    }
                    accumulate(n.b, std::move(out));
                }
                return;
            }
        }
    }

    // reflect-101 index (PyTorch-style reflect padding)
    static int reflect(int i, int n) {
        if (n == 1) return 0;
        if (i < 0) return -i;
        if (i >= n) return 2 * n - 2 - i;
        return i;
    }

    static Grid conv3x3_forward(const Grid& x, const Grid& w, const Grid& b) {
        return gridops::conv3x3(x, w, b);
    }

    void conv3x3_backward(Node& n, const Grid& g) {
        const Grid& x = nodes_[static_cast<size_t>(n.a)].value;
        const Grid& w = nodes_[static_cast<size_t>(n.b)].value;
        int C = x.extent(0), H = x.extent(1), W = x.extent(2), F = w.extent(0);
        bool dx = wants_grad(n.a), dw = wants_grad(n.b), db = wants_grad(n.c);
        Grid gx = dx ? Grid(x.shape()) : Grid();
        Grid gw = dw ? Grid(w.shape()) : Grid();
        Grid gb = db ? Grid({F}) : Grid();
        for (int f = 0; f < F; ++f)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    double gv = g.at(f, y, xx);
                    if (gv == 0.0) continue;
                    if (db) gb[f] += gv;
                    for (int c = 0; c < C; ++c)
                        for (int ky = 0; ky < 3; ++ky) {
                            int sy = reflect(y + ky - 1, H);
                            for (int kx = 0; kx < 3; ++kx) {
                                int sx = reflect(xx + kx - 1, W);
                                std::int64_t wi =
                                    ((static_cast<std::int64_t>(f) * C + c) * 3 + ky) * 3 + kx;
                                if (dx) gx.at(c, sy, sx) += gv * w[wi];
                                if (dw) gw[wi] += gv * x.at(c, sy, sx);
                            }
                        }
                }
        if (dx) accumulate(n.a, std::move(gx));
        if (dw) accumulate(n.b, std::move(gw));
        if (db) accumulate(n.c, std::move(gb));
    }

    static Grid grid_sample_forward(const Grid& img, const Grid& off, BorderMode mode) {
        return gridops::grid_sample(img, off, mode);
    }

    static double tap(const Grid& img, int c, int y, int x, BorderMode mode) {
        return gridops::tap(img, c, y, x, mode);
    }

    void grid_sample_backward(Node& n, const Grid& g) {
        const Grid& img = nodes_[static_cast<size_t>(n.a)].value;
        const Grid& off = nodes_[static_cast<size_t>(n.b)].value;
        BorderMode mode = n.border;
        int C = img.extent(0), H = img.extent(1), W = img.extent(2);
        bool di = wants_grad(n.a), doff_g = wants_grad(n.b);
        Grid gi = di ? Grid(img.shape()) : Grid();
        Grid go = doff_g ? Grid(off.shape()) : Grid();
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double sy = y + off.at(0, y, x);
                double sx = x + off.at(1, y, x);
                int y0 = static_cast<int>(std::floor(sy));
                int x0 = static_cast<int>(std::floor(sx));
                double fy = sy - y0, fx = sx - x0;
                double gsy = 0.0, gsx = 0.0;
                for (int c = 0; c < C; ++c) {
                    double gv = g.at(c, y, x);
                    if (gv == 0.0 && !doff_g) continue;
                    double v00 = tap(img, c, y0, x0, mode);
                    double v01 = tap(img, c, y0, x0 + 1, mode);
                    double v10 = tap(img, c, y0 + 1, x0, mode);
                    double v11 = tap(img, c, y0 + 1, x0 + 1, mode);
                    if (di) {
                        add_tap(gi, c, y0, x0, mode, gv * (1 - fy) * (1 - fx));
                        add_tap(gi, c, y0, x0 + 1, mode, gv * (1 - fy) * fx);
                        add_tap(gi, c, y0 + 1, x0, mode, gv * fy * (1 - fx));
                        add_tap(gi, c, y0 + 1, x0 + 1, mode, gv * fy * fx);
                    }
                    gsy += gv * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                    gsx += gv * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                }
                if (doff_g) {
                    go.at(0, y, x) = gsy;
                    go.at(1, y, x) = gsx;
                }
            }
        if (di) accumulate(n.a, std::move(gi));
        if (doff_g) accumulate(n.b, std::move(go));
    }

    static void add_tap(Grid& gi, int c, int y, int x, BorderMode mode, double v) {
        int H = gi.extent(1), W = gi.extent(2);
        if (mode == BorderMode::kClamp) {
            y = std::min(std::max(y, 0), H - 1);
            x = std::min(std::max(x, 0), W - 1);
        } else if (y < 0 || y >= H || x < 0 || x >= W) {
            return;
        }
        gi.at(c, y, x) += v;
    }

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

inline const Grid& Value::value() const { return tape->val(*this); }
inline Value Value::exp() const { return tape->exp(*this); }
inline Value Value::log() const { return tape->log(*this); }
inline Value Value::pow(double c) const { return tape->pow_const(*this, c); }
inline Value Value::sigmoid() const { return tape->sigmoid(*this); }
inline Value Value::tanh() const { return tape->tanh(*this); }
inline Value Value::softplus() const { return tape->softplus(*this); }
inline Value Value::ste_relu() const { return tape->ste_relu(*this); }
inline Value Value::lgamma() const { return tape->lgamma(*this); }
inline Value Value::sum() const { return tape->sum(*this); }
inline Value Value::mean() const { return tape->mean(*this); }

inline Value operator+(Value a, Value b) { return a.tape->add(a, b); }
inline Value operator-(Value a, Value b) { return a.tape->sub(a, b); }
inline Value operator*(Value a, Value b) { return a.tape->mul(a, b); }
inline Value operator/(Value a, Value b) { return a.tape->div(a, b); }
inline Value operator-(Value a) { return a.tape->neg(a); }
inline Value operator+(Value a, double b) { return a + a.tape->constant(b); }
inline Value operator+(double a, Value b) { return b.tape->constant(a) + b; }
inline Value operator-(Value a, double b) { return a - a.tape->constant(b); }
inline Value operator-(double a, Value b) { return b.tape->constant(a) - b; }
inline Value operator*(Value a, double b) { return a * a.tape->constant(b); }
inline Value operator*(double a, Value b) { return b.tape->constant(a) * b; }
inline Value operator/(Value a, double b) { return a / a.tape->constant(b); }
inline Value operator/(double a, Value b) { return b.tape->constant(a) / b; }

inline Value masked_mean(Value x, Value m) { return x.tape->masked_mean(x, m); }
inline Value matmul(Value a, Value b) { return a.tape->matmul(a, b); }
inline Value conv3x3(Value x, Value w, Value b) { return x.tape->conv3x3(x, w, b); }
inline Value grid_sample(Value img, Value off, BorderMode mode = BorderMode::kClamp) {
    return img.tape->grid_sample(img, off, mode);
}
inline Value weibull_sample(Value lam, Value kap, Value u) {
    return lam.tape->weibull_sample(lam, kap, u);
}
inline Value stop_grad(Value a) { return a.tape->stop_grad(a); }
inline Value grad_reverse(Value a, double scale = 1.0) { return a.tape->grad_reverse(a, scale); }
inline Value reshape(Value a, std::vector<int> shape) { return a.tape->reshape(a, std::move(shape)); }

/// Exact clamp in the forward pass, identity (straight-through) gradient.
inline Value clip(Value x, double lo, double hi) {
    Value m = x.tape->constant(lo) + (x - lo).ste_relu();  // max(x, lo)
    return x.tape->constant(hi) - (hi - m).ste_relu();     // min(max(x, lo), hi)
}

inline Value clip01(Value x) { return clip(x, 0.0, 1.0); }

/// Embeds a [c,H,W] value into channels [offset, offset+c) of a zero
/// [total,H,W] value. Realized as a conv3x3 whose center taps select the
/// source channels, so it stays inside the primitive op set.
inline Value embed_channels(Value x, int total, int offset) {
    Tape& t = *x.tape;
    const Grid& gx = x.value();
    int c = gx.extent(0);
    Grid w({total, c, 3, 3});
    for (int i = 0; i < c; ++i)
        w[((static_cast<std::int64_t>(offset + i) * c + i) * 3 + 1) * 3 + 1] = 1.0;
    return conv3x3(x, t.input(std::move(w)), t.input(Grid({total}, 0.0)));
}

/// max relative error between analytic gradients and central differences,
/// over every element of every parameter. fn must build a scalar on the
/// given tape from freshly created parameter values.
inline double grad_check(
    const std::function<Value(Tape&, const std::vector<Value>&)>& fn,
    const std::vector<Grid>& point, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be > 0");
    Tape t;
    std::vector<Value> params;
    params.reserve(point.size());
    for (const Grid& g : point) params.push_back(t.param(g));
    Value y = fn(t, params);
    if (!y.value().is_scalar()) throw std::invalid_argument("grad_check: fn must return a scalar");
    t.backward(y);
    std::vector<Grid> analytic;
    for (Value p : params) analytic.push_back(t.grad(p));

    auto eval_at = [&](const std::vector<Grid>& pt) {
        Tape tt;
        std::vector<Value> ps;
        ps.reserve(pt.size());
        for (const Grid& g : pt) ps.push_back(tt.param(g));
        return fn(tt, ps).value()[0];
    };

    double worst = 0.0;
    for (size_t pi = 0; pi < point.size(); ++pi) {
        for (std::int64_t i = 0; i < point[pi].size(); ++i) {
            std::vector<Grid> lo = point, hi = point;
            lo[pi][i] -= eps;
            hi[pi][i] += eps;
            double fd = (eval_at(hi) - eval_at(lo)) / (2.0 * eps);
            double err = std::abs(analytic[pi][i] - fd) / (std::abs(fd) + 1e-8);
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace ruackit
