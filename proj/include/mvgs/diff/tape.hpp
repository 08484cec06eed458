#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "mvgs/diff/ndarray.hpp"

namespace mvgs::diff {

class Tape;
struct Node;

enum class Op {
    Leaf, Add, Sub, Mul, Div, Neg, Sin, Cos, Exp, Log, Sqrt, Tanh, Sigmoid,
    Softplus, LeakyRelu, Clamp, MatMul, Transpose2D, Reshape, SumAll, MeanAll,
    SumLast, RepeatLast, SoftmaxRows, GatherRows, ScatterRows, ConcatRows,
    SliceLast, Detach, Custom
};

// A fused operation with a hand-written backward. `backward` receives the
// upstream gradient and the saved inputs and returns one gradient per input
// (empty arrays for inputs that need none). Not differentiable twice.
struct CustomOp {
    std::string name;
    std::function<NDArray(const std::vector<NDArray>&)> forward;
    std::function<std::vector<NDArray>(const NDArray& upstream)> backward;
};

struct Node {
    int id = -1;
    Op op = Op::Leaf;
    NDArray value;
    std::vector<std::shared_ptr<Node>> inputs;
    bool requires_grad = false;

    // op attributes
    double c0 = 0.0, c1 = 0.0;   // clamp lo/hi, leaky slope
    Shape shape_attr;            // reshape target
    std::shared_ptr<const std::vector<int>> index_attr;  // gather/scatter indices
    int i0 = 0, i1 = 0;          // repeat count / scatter rows / slice range
    std::shared_ptr<CustomOp> custom;

    NDArray grad;                // filled for leaves by Tape::backward
    bool has_grad = false;
};

// Handle to a recorded value.
class Value {
public:
    Value() = default;
    const NDArray& val() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    int id() const { return node_ ? node_->id : -1; }
    bool defined() const { return node_ != nullptr; }
    bool requires_grad() const { return node_->requires_grad; }
    const NDArray& grad() const;
    Tape* tape() const { return tape_; }
    std::shared_ptr<Node> node() const { return node_; }

private:
    friend class Tape;
    Value(Tape* t, std::shared_ptr<Node> n) : tape_(t), node_(std::move(n)) {}
    Tape* tape_ = nullptr;
    std::shared_ptr<Node> node_;
};

// The computation record: an append-only, topologically ordered list of
// primitive nodes. Forward values are computed eagerly at record time.
class Tape {
public:
    Value leaf(NDArray v, bool requires_grad = true);
    Value constant(NDArray v) { return leaf(std::move(v), false); }
    Value scalar(double v) { return constant(NDArray::scalar(v)); }

    // Fills `grad` on every reachable node that requires grad. The backward
    // pass itself is recorded as tape nodes, so gradients are Values and a
    // second backward (R1-style) differentiates through them.
    void backward(const Value& root);

    // Same, but also returns the gradient Values keyed by node id.
    std::unordered_map<int, Value> backward_graph(const Value& root);

    // Recomputes every node's value from its inputs; returns true when all
    // match bit-for-bit (determinism check).
    bool replay_matches();

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // When set, multiple gradient contributions to one node are summed in
    // ascending consumer order instead of visit order.
    bool sorted_accumulation = false;

    Value record(Op op, std::vector<Value> ins, NDArray value);
    Value record_custom(std::shared_ptr<CustomOp> op, std::vector<Value> ins);

private:
    friend Value reshape(const Value&, Shape);
    friend Value clamp(const Value&, double, double);
    friend Value leaky_relu(const Value&, double);
    friend Value repeat_last(const Value&, int);
    friend Value gather_rows(const Value&, std::shared_ptr<const std::vector<int>>);
    friend Value scatter_rows(const Value&, std::shared_ptr<const std::vector<int>>, int);
    friend Value slice_last(const Value&, int, int);

    std::vector<std::shared_ptr<Node>> nodes_;
};

// ---- primitive surface -----------------------------------------------------

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value neg(const Value& a);
Value sin(const Value& a);
Value cos(const Value& a);
Value exp(const Value& a);
Value log(const Value& a);
Value sqrt(const Value& a);
Value tanh(const Value& a);
Value sigmoid(const Value& a);
Value softplus(const Value& a);
Value leaky_relu(const Value& a, double slope);
Value clamp(const Value& a, double lo, double hi);
Value matmul(const Value& a, const Value& b);
Value transpose2d(const Value& a);
Value reshape(const Value& a, Shape s);
Value sum_all(const Value& a);
Value mean_all(const Value& a);
Value sum_last(const Value& a);
Value repeat_last(const Value& a, int k);
Value softmax_rows(const Value& a);
Value gather_rows(const Value& a, std::shared_ptr<const std::vector<int>> idx);
Value gather_rows(const Value& a, const std::vector<int>& idx);
Value scatter_rows(const Value& a, std::shared_ptr<const std::vector<int>> idx, int n_rows);
Value concat_rows(const std::vector<Value>& parts);
Value slice_last(const Value& a, int from, int to);
Value detach(const Value& a);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator/(const Value& a, const Value& b) { return div(a, b); }
inline Value operator-(const Value& a) { return neg(a); }

Value add_scalar(const Value& a, double c);
Value mul_scalar(const Value& a, double c);

// square = x*x, norm helpers built from primitives
inline Value square(const Value& a) { return mul(a, a); }

}  // namespace mvgs::diff
