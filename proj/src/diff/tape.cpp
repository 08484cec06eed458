#include "mvgs/diff/tape.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace mvgs::diff {

namespace k = kernels;

const NDArray& Value::grad() const {
    if (!node_->has_grad) throw std::runtime_error("Value::grad: no gradient recorded");
    return node_->grad;
}

Value Tape::leaf(NDArray v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->id = static_cast<int>(nodes_.size());
    n->op = Op::Leaf;
    n->value = std::move(v);
    n->value.round_to_precision();
    n->requires_grad = requires_grad;
    nodes_.push_back(n);
    return Value(this, n);
}

namespace {

NDArray compute_forward(const Node& n) {
    auto in = [&](size_t i) -> const NDArray& { return n.inputs[i]->value; };
    switch (n.op) {
        case Op::Leaf: return n.value;
        case Op::Add: return k::binary(k::Binary::Add, in(0), in(1));
        case Op::Sub: return k::binary(k::Binary::Sub, in(0), in(1));
        case Op::Mul: return k::binary(k::Binary::Mul, in(0), in(1));
        case Op::Div: return k::binary(k::Binary::Div, in(0), in(1));
        case Op::Neg: return k::neg(in(0));
        case Op::Sin: return k::sin(in(0));
        case Op::Cos: return k::cos(in(0));
        case Op::Exp: return k::exp(in(0));
        case Op::Log: return k::log(in(0));
        case Op::Sqrt: return k::sqrt(in(0));
        case Op::Tanh: return k::tanh(in(0));
        case Op::Sigmoid: return k::sigmoid(in(0));
        case Op::Softplus: return k::softplus(in(0));
        case Op::LeakyRelu: return k::leaky_relu(in(0), n.c1);
        case Op::Clamp: return k::clamp(in(0), n.c0, n.c1);
        case Op::MatMul: return k::matmul(in(0), in(1));
        case Op::Transpose2D: return k::transpose2d(in(0));
        case Op::Reshape: {
            NDArray out = in(0);
            out.shape = n.shape_attr;
            return out;
        }
        case Op::SumAll: return k::sum_all(in(0));
        case Op::MeanAll: return k::mean_all(in(0));
        case Op::SumLast: return k::sum_last(in(0));
        case Op::RepeatLast: return k::repeat_last(in(0), n.i0);
        case Op::SoftmaxRows: return k::softmax_rows(in(0));
        case Op::GatherRows: return k::gather_rows(in(0), *n.index_attr);
        case Op::ScatterRows: return k::scatter_rows(in(0), *n.index_attr, n.i0);
        case Op::ConcatRows: {
            std::vector<const NDArray*> parts;
            parts.reserve(n.inputs.size());
            for (const auto& p : n.inputs) parts.push_back(&p->value);
            return k::concat_rows(parts);
        }
        case Op::SliceLast: return k::slice_last(in(0), n.i0, n.i1);
        case Op::Detach: return in(0);
        case Op::Custom: {
            std::vector<NDArray> vals;
            vals.reserve(n.inputs.size());
            for (const auto& p : n.inputs) vals.push_back(p->value);
            return n.custom->forward(vals);
        }
    }
    throw std::logic_error("compute_forward: unhandled op");
}

}  // namespace

Value Tape::record(Op op, std::vector<Value> ins, NDArray value) {
    auto n = std::make_shared<Node>();
    n->id = static_cast<int>(nodes_.size());
    n->op = op;
    for (auto& v : ins) {
        if (v.tape() != this) throw std::invalid_argument("Tape::record: value from another tape");
        n->inputs.push_back(v.node());
        n->requires_grad = n->requires_grad || v.node()->requires_grad;
    }
    n->value = std::move(value);
    n->value.round_to_precision();
    nodes_.push_back(n);
    return Value(this, n);
}

Value Tape::record_custom(std::shared_ptr<CustomOp> op, std::vector<Value> ins) {
    std::vector<NDArray> vals;
    vals.reserve(ins.size());
    for (const auto& v : ins) vals.push_back(v.val());
    NDArray out = op->forward(vals);
    Value v = record(Op::Custom, std::move(ins), std::move(out));
    v.node()->custom = std::move(op);
    return v;
}

bool Tape::replay_matches() {
    for (const auto& n : nodes_) {
        if (n->op == Op::Leaf) continue;
        NDArray again = compute_forward(*n);
        again.round_to_precision();
        if (again.shape != n->value.shape || again.data != n->value.data) return false;
    }
    return true;
}

// ---- ops --------------------------------------------------------------------

namespace {
Tape* tape_of(const Value& a, const Value& b) {
    if (a.tape() != b.tape()) throw std::invalid_argument("op: values from different tapes");
    return a.tape();
}
}  // namespace

Value add(const Value& a, const Value& b) {
    return tape_of(a, b)->record(Op::Add, {a, b}, k::binary(k::Binary::Add, a.val(), b.val()));
}
Value sub(const Value& a, const Value& b) {
    return tape_of(a, b)->record(Op::Sub, {a, b}, k::binary(k::Binary::Sub, a.val(), b.val()));
}
Value mul(const Value& a, const Value& b) {
    return tape_of(a, b)->record(Op::Mul, {a, b}, k::binary(k::Binary::Mul, a.val(), b.val()));
}
Value div(const Value& a, const Value& b) {
    return tape_of(a, b)->record(Op::Div, {a, b}, k::binary(k::Binary::Div, a.val(), b.val()));
}

#define MVGS_UNARY_OP(fname, opname)                                               \
    Value fname(const Value& a) {                                                  \
        return a.tape()->record(Op::opname, {a}, k::fname(a.val()));               \
    }
MVGS_UNARY_OP(neg, Neg)
MVGS_UNARY_OP(sin, Sin)
MVGS_UNARY_OP(cos, Cos)
MVGS_UNARY_OP(exp, Exp)
MVGS_UNARY_OP(log, Log)
MVGS_UNARY_OP(sqrt, Sqrt)
MVGS_UNARY_OP(tanh, Tanh)
MVGS_UNARY_OP(sigmoid, Sigmoid)
MVGS_UNARY_OP(softplus, Softplus)
#undef MVGS_UNARY_OP

Value leaky_relu(const Value& a, double slope) {
    Value v = a.tape()->record(Op::LeakyRelu, {a}, k::leaky_relu(a.val(), slope));
    v.node()->c1 = slope;
    return v;
}

Value clamp(const Value& a, double lo, double hi) {
    Value v = a.tape()->record(Op::Clamp, {a}, k::clamp(a.val(), lo, hi));
    v.node()->c0 = lo;
    v.node()->c1 = hi;
    return v;
}

Value matmul(const Value& a, const Value& b) {
    return tape_of(a, b)->record(Op::MatMul, {a, b}, k::matmul(a.val(), b.val()));
}

Value transpose2d(const Value& a) { return a.tape()->record(Op::Transpose2D, {a}, k::transpose2d(a.val())); }

Value reshape(const Value& a, Shape s) {
    if (numel(s) != a.val().size())
        throw std::invalid_argument("reshape: cannot reshape " + shape_str(a.shape()) + " to " + shape_str(s));
    NDArray out = a.val();
    out.shape = s;
    Value v = a.tape()->record(Op::Reshape, {a}, std::move(out));
    v.node()->shape_attr = std::move(s);
    return v;
}

Value sum_all(const Value& a) { return a.tape()->record(Op::SumAll, {a}, k::sum_all(a.val())); }
Value mean_all(const Value& a) { return a.tape()->record(Op::MeanAll, {a}, k::mean_all(a.val())); }
Value sum_last(const Value& a) { return a.tape()->record(Op::SumLast, {a}, k::sum_last(a.val())); }

Value repeat_last(const Value& a, int kcount) {
    Value v = a.tape()->record(Op::RepeatLast, {a}, k::repeat_last(a.val(), kcount));
    v.node()->i0 = kcount;
    return v;
}

Value softmax_rows(const Value& a) { return a.tape()->record(Op::SoftmaxRows, {a}, k::softmax_rows(a.val())); }

Value gather_rows(const Value& a, std::shared_ptr<const std::vector<int>> idx) {
    Value v = a.tape()->record(Op::GatherRows, {a}, k::gather_rows(a.val(), *idx));
    v.node()->index_attr = std::move(idx);
    return v;
}

Value gather_rows(const Value& a, const std::vector<int>& idx) {
    return gather_rows(a, std::make_shared<const std::vector<int>>(idx));
}

Value scatter_rows(const Value& a, std::shared_ptr<const std::vector<int>> idx, int n_rows) {
    Value v = a.tape()->record(Op::ScatterRows, {a}, k::scatter_rows(a.val(), *idx, n_rows));
    v.node()->index_attr = std::move(idx);
    v.node()->i0 = n_rows;
    return v;
}

Value concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty part list");
    std::vector<const NDArray*> arrs;
    arrs.reserve(parts.size());
    for (const auto& p : parts) arrs.push_back(&p.val());
    return parts[0].tape()->record(Op::ConcatRows, parts, k::concat_rows(arrs));
}

Value slice_last(const Value& a, int from, int to) {
    Value v = a.tape()->record(Op::SliceLast, {a}, k::slice_last(a.val(), from, to));
    v.node()->i0 = from;
    v.node()->i1 = to;
    return v;
}

Value detach(const Value& a) {
    NDArray out = a.val();
    Value v = a.tape()->record(Op::Detach, {}, std::move(out));
    return v;
}

Value add_scalar(const Value& a, double c) { return add(a, a.tape()->scalar(c)); }
Value mul_scalar(const Value& a, double c) { return mul(a, a.tape()->scalar(c)); }

// ---- backward ----------------------------------------------------------------

namespace {

// Sums suffix-broadcast repeats of g down to `target` using tape primitives,
// so the reduction itself stays differentiable.
Value reduce_to_graph(Tape& t, const Value& g, const Shape& target) {
    if (g.shape() == target) return g;
    const int64_t m = numel(target);
    const int64_t total = numel(g.shape());
    const int64_t groups = total / m;
    Value flat = reshape(g, Shape{static_cast<int>(groups), static_cast<int>(m)});
    Value ones = g.tape()->constant(NDArray(Shape{1, static_cast<int>(groups)}, 1.0));
    Value summed = matmul(ones, flat);
    return reshape(summed, target);
    (void)t;
}

Value ones_like_shape(Tape& t, const Shape& s) { return t.constant(NDArray(s, 1.0)); }

std::vector<int> iota_idx(int from, int to) {
    std::vector<int> v(static_cast<size_t>(to - from));
    for (int i = from; i < to; ++i) v[static_cast<size_t>(i - from)] = i;
    return v;
}

}  // namespace

std::unordered_map<int, Value> Tape::backward_graph(const Value& root) {
    if (root.val().size() != 1)
        throw std::invalid_argument("backward: root must be scalar, got " + shape_str(root.shape()));
    if (root.tape() != this) throw std::invalid_argument("backward: root from another tape");

    const int root_id = root.id();
    // Contributions per node id; consumer id kept for sorted accumulation.
    std::unordered_map<int, std::vector<std::pair<int, Value>>> contrib;
    contrib[root_id].push_back({root_id, constant(NDArray(root.shape(), 1.0))});

    std::unordered_map<int, Value> grads;

    auto finalize = [&](int id) -> Value {
        auto it = contrib.find(id);
        auto& list = it->second;
        if (sorted_accumulation)
            std::sort(list.begin(), list.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
        Value g = list[0].second;
        for (size_t i = 1; i < list.size(); ++i) g = add(g, list[i].second);
        return g;
    };

    auto push = [&](const std::shared_ptr<Node>& input, int consumer, Value g) {
        if (!input->requires_grad) return;
        contrib[input->id].push_back({consumer, std::move(g)});
    };

    for (int id = root_id; id >= 0; --id) {
        auto it = contrib.find(id);
        if (it == contrib.end()) continue;
        Node& n = *nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad) continue;
        Value g = finalize(id);
        grads.emplace(id, g);
        n.grad = g.val();
        n.has_grad = true;

        Value self(this, nodes_[static_cast<size_t>(id)]);
        switch (n.op) {
            case Op::Leaf:
            case Op::Detach:
                break;
            case Op::Add:
                push(n.inputs[0], id, reduce_to_graph(*this, g, n.inputs[0]->value.shape));
                push(n.inputs[1], id, reduce_to_graph(*this, g, n.inputs[1]->value.shape));
                break;
            case Op::Sub:
                push(n.inputs[0], id, reduce_to_graph(*this, g, n.inputs[0]->value.shape));
                push(n.inputs[1], id, reduce_to_graph(*this, neg(g), n.inputs[1]->value.shape));
                break;
            case Op::Mul: {
                Value a(this, n.inputs[0]), b(this, n.inputs[1]);
                push(n.inputs[0], id, reduce_to_graph(*this, mul(g, b), n.inputs[0]->value.shape));
                push(n.inputs[1], id, reduce_to_graph(*this, mul(g, a), n.inputs[1]->value.shape));
                break;
            }
            case Op::Div: {
                Value a(this, n.inputs[0]), b(this, n.inputs[1]);
                push(n.inputs[0], id, reduce_to_graph(*this, div(g, b), n.inputs[0]->value.shape));
                push(n.inputs[1], id,
                     reduce_to_graph(*this, neg(div(mul(g, self), b)), n.inputs[1]->value.shape));
                break;
            }
            case Op::Neg:
                push(n.inputs[0], id, neg(g));
                break;
            case Op::Sin:
                push(n.inputs[0], id, mul(g, cos(Value(this, n.inputs[0]))));
                break;
            case Op::Cos:
                push(n.inputs[0], id, neg(mul(g, sin(Value(this, n.inputs[0])))));
                break;
            case Op::Exp:
                push(n.inputs[0], id, mul(g, self));
                break;
            case Op::Log:
                push(n.inputs[0], id, div(g, Value(this, n.inputs[0])));
                break;
            case Op::Sqrt:
                push(n.inputs[0], id, mul_scalar(div(g, self), 0.5));
                break;
            case Op::Tanh: {
                Value one = ones_like_shape(*this, n.value.shape);
                push(n.inputs[0], id, mul(g, sub(one, mul(self, self))));
                break;
            }
            case Op::Sigmoid: {
                Value one = ones_like_shape(*this, n.value.shape);
                push(n.inputs[0], id, mul(g, mul(self, sub(one, self))));
                break;
            }
            case Op::Softplus:
                push(n.inputs[0], id, mul(g, sigmoid(Value(this, n.inputs[0]))));
                break;
            case Op::LeakyRelu: {
                NDArray mask(n.value.shape);
                const NDArray& x = n.inputs[0]->value;
                for (int64_t i = 0; i < x.size(); ++i) mask[i] = x[i] > 0 ? 1.0 : n.c1;
                push(n.inputs[0], id, mul(g, constant(std::move(mask))));
                break;
            }
            case Op::Clamp: {
                NDArray mask(n.value.shape);
                const NDArray& x = n.inputs[0]->value;
                for (int64_t i = 0; i < x.size(); ++i) mask[i] = (x[i] > n.c0 && x[i] < n.c1) ? 1.0 : 0.0;
                push(n.inputs[0], id, mul(g, constant(std::move(mask))));
                break;
            }
            case Op::MatMul: {
                Value a(this, n.inputs[0]), b(this, n.inputs[1]);
                push(n.inputs[0], id, matmul(g, transpose2d(b)));
                push(n.inputs[1], id, matmul(transpose2d(a), g));
                break;
            }
            case Op::Transpose2D:
                push(n.inputs[0], id, transpose2d(g));
                break;
            case Op::Reshape:
                push(n.inputs[0], id, reshape(g, n.inputs[0]->value.shape));
                break;
            case Op::SumAll:
                push(n.inputs[0], id, mul(ones_like_shape(*this, n.inputs[0]->value.shape), g));
                break;
            case Op::MeanAll:
                push(n.inputs[0], id,
                     mul_scalar(mul(ones_like_shape(*this, n.inputs[0]->value.shape), g),
                                1.0 / static_cast<double>(n.inputs[0]->value.size())));
                break;
            case Op::SumLast:
                push(n.inputs[0], id, repeat_last(g, n.inputs[0]->value.shape.back()));
                break;
            case Op::RepeatLast:
                push(n.inputs[0], id, sum_last(g));
                break;
            case Op::SoftmaxRows: {
                Value t = mul(g, self);
                Value s = sum_last(t);
                Value rep = repeat_last(s, n.value.shape.back());
                push(n.inputs[0], id, mul(self, sub(g, rep)));
                break;
            }
            case Op::GatherRows:
                push(n.inputs[0], id, scatter_rows(g, n.index_attr, n.inputs[0]->value.rows()));
                break;
            case Op::ScatterRows:
                push(n.inputs[0], id, gather_rows(g, n.index_attr));
                break;
            case Op::ConcatRows: {
                int off = 0;
                for (auto& input : n.inputs) {
                    const int r = input->value.rows();
                    if (input->requires_grad)
                        push(input, id, gather_rows(g, iota_idx(off, off + r)));
                    off += r;
                }
                break;
            }
            case Op::SliceLast: {
                // Zero-pad g back to the input width via a transposed scatter.
                const Shape& xs = n.inputs[0]->value.shape;
                const int d_in = xs.back();
                const int w = n.i1 - n.i0;
                const int64_t groups = numel(xs) / d_in;
                Value g2 = reshape(g, Shape{static_cast<int>(groups), w});
                Value gt = transpose2d(g2);
                auto idx = std::make_shared<const std::vector<int>>(iota_idx(n.i0, n.i1));
                Value padded = scatter_rows(gt, idx, d_in);
                push(n.inputs[0], id, reshape(transpose2d(padded), xs));
                break;
            }
            case Op::Custom: {
                std::vector<NDArray> gs = n.custom->backward(g.val());
                if (gs.size() != n.inputs.size())
                    throw std::logic_error("custom backward: wrong gradient count for " + n.custom->name);
                for (size_t i = 0; i < gs.size(); ++i) {
                    if (!n.inputs[i]->requires_grad || gs[i].size() == 0) continue;
                    gs[i].round_to_precision();
                    push(n.inputs[i], id, constant(std::move(gs[i])));
                }
                break;
            }
        }
    }
    return grads;
}

void Tape::backward(const Value& root) { backward_graph(root); }

}  // namespace mvgs::diff
