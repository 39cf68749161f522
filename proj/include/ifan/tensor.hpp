#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ifan {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("tensor extents must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

template <class S> class GraphT;

// Dense n-dimensional array with value semantics over a shared buffer.
// A tensor is either detached (plain data) or attached to one graph node;
// detached tensors never receive gradients.
template <class S>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<S>>(numel_of(shape_), S(0))) {}

    TensorT(Shape shape, std::vector<S> vals) : shape_(std::move(shape)) {
        if (static_cast<int64_t>(vals.size()) != numel_of(shape_))
            throw std::invalid_argument("tensor data length does not match shape");
        data_ = std::make_shared<std::vector<S>>(std::move(vals));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, S v) {
        TensorT t(std::move(shape));
        for (auto& x : *t.data_) x = v;
        return t;
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

    S* data() { return data_->data(); }
    const S* data() const { return data_->data(); }
    const std::shared_ptr<std::vector<S>>& buf() const { return data_; }

    S item() const {
        if (numel() != 1) throw std::runtime_error("item() requires a scalar tensor");
        return (*data_)[0];
    }

    bool attached() const { return graph_ != nullptr; }
    GraphT<S>* graph() const { return graph_; }
    int node() const { return node_; }

    TensorT detached() const {
        TensorT t;
        t.shape_ = shape_;
        t.data_ = data_;
        return t;
    }

    // Same buffer and graph node under a new shape; element count must match.
    TensorT reshaped(Shape s) const {
        if (numel_of(s) != numel()) throw std::invalid_argument("reshaped: element count mismatch");
        TensorT t = *this;
        t.shape_ = std::move(s);
        return t;
    }

    // Deep copy of the buffer, detached.
    TensorT clone() const {
        TensorT t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<S>>(*data_);
        return t;
    }

    void attach_(GraphT<S>* g, int node) {
        graph_ = g;
        node_ = node;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<S>> data_;
    GraphT<S>* graph_ = nullptr;
    int node_ = -1;
};

template <class S>
struct ParameterT {
    std::string name;
    TensorT<S> value;
    bool trainable = true;
};

// Reverse-mode tape. Nodes are appended in execution order, so parents
// always precede children; backward walks the record once in reverse.
// Gradient slots are allocated lazily: a node untouched by the sweep has
// no gradient at all (as opposed to a zero one).
template <class S>
class GraphT {
public:
    using BackwardFn = std::function<void(GraphT&)>;

    int new_node(int64_t grad_len) {
        nodes_.push_back(Node{grad_len, nullptr});
        grads_.emplace_back(nullptr);
        return static_cast<int>(nodes_.size()) - 1;
    }

    void set_backward(int node, BackwardFn fn) { nodes_[static_cast<size_t>(node)].fn = std::move(fn); }

    bool recording() const { return recording_; }
    void set_recording(bool r) { recording_ = r; }

    // Attach a parameter as a leaf. Repeated attachment of the same
    // parameter returns the same node, so gradients from every use site
    // accumulate in one slot.
    TensorT<S> leaf(const ParameterT<S>& p) {
        if (!recording_) return p.value.detached();
        auto it = param_nodes_.find(&p);
        int id;
        if (it == param_nodes_.end()) {
            id = new_node(p.value.numel());
            param_nodes_.emplace(&p, id);
        } else {
            id = it->second;
        }
        TensorT<S> t = p.value.detached();
        t.attach_(this, id);
        return t;
    }

    // Gradient slot accumulator; allocates zero-filled on first touch.
    std::vector<S>& acc(int node) {
        auto& slot = grads_[static_cast<size_t>(node)];
        if (!slot) slot = std::make_unique<std::vector<S>>(static_cast<size_t>(nodes_[static_cast<size_t>(node)].size), S(0));
        return *slot;
    }

    const std::vector<S>* grad_of_node(int node) const {
        return grads_[static_cast<size_t>(node)] ? grads_[static_cast<size_t>(node)].get() : nullptr;
    }

    // Only valid while the node's slot is populated (inside backward).
    const std::vector<S>& grad_ref(int node) const { return *grads_[static_cast<size_t>(node)]; }

    const std::vector<S>* grad(const ParameterT<S>& p) const {
        auto it = param_nodes_.find(&p);
        if (it == param_nodes_.end()) return nullptr;
        return grad_of_node(it->second);
    }

    const std::vector<S>* grad(const TensorT<S>& t) const {
        if (!t.attached() || t.graph() != this) return nullptr;
        return grad_of_node(t.node());
    }

    void backward(const TensorT<S>& loss) {
        if (!loss.attached() || loss.graph() != this)
            throw std::runtime_error("backward: loss is not attached to this graph");
        if (loss.numel() != 1)
            throw std::runtime_error("backward: loss must be scalar");
        if (done_)
            throw std::runtime_error("backward: already run on this graph");
        done_ = true;
        acc(loss.node())[0] = S(1);
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            if (grads_[static_cast<size_t>(id)] && nodes_[static_cast<size_t>(id)].fn)
                nodes_[static_cast<size_t>(id)].fn(*this);
        }
    }

    bool backward_done() const { return done_; }
    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        int64_t size;
        BackwardFn fn;
    };
    std::vector<Node> nodes_;
    std::vector<std::unique_ptr<std::vector<S>>> grads_;
    std::unordered_map<const void*, int> param_nodes_;
    bool done_ = false;
    bool recording_ = true;
};

// Named parameter collection; owns storage, names are unique, iteration
// order is creation order (checkpoints rely on this being stable).
template <class S>
class ParamStoreT {
public:
    ParameterT<S>& create(const std::string& name, Shape shape, bool trainable = true) {
        if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        items_.push_back(std::make_unique<ParameterT<S>>(ParameterT<S>{name, TensorT<S>(std::move(shape)), trainable}));
        by_name_.emplace(name, items_.back().get());
        return *items_.back();
    }

    ParameterT<S>* find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    ParameterT<S>& at(const std::string& name) const {
        auto* p = find(name);
        if (!p) throw std::out_of_range("no parameter named " + name);
        return *p;
    }

    size_t size() const { return items_.size(); }
    ParameterT<S>& operator[](size_t i) const { return *items_[i]; }

    template <class F>
    void for_each(F&& f) const {
        for (auto& p : items_) f(*p);
    }

    std::vector<ParameterT<S>*> with_prefix(const std::string& prefix) const {
        std::vector<ParameterT<S>*> out;
        for (auto& p : items_)
            if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
        return out;
    }

    // Value snapshot (trainable and state alike), for restore around
    // finite-difference evaluations and for scope-discipline checks.
    std::vector<std::vector<S>> snapshot() const {
        std::vector<std::vector<S>> snap;
        snap.reserve(items_.size());
        for (auto& p : items_) snap.push_back(*p->value.buf());
        return snap;
    }

    void restore(const std::vector<std::vector<S>>& snap) {
        if (snap.size() != items_.size()) throw std::runtime_error("snapshot size mismatch");
        for (size_t i = 0; i < items_.size(); ++i) *items_[i]->value.buf() = snap[i];
    }

private:
    std::vector<std::unique_ptr<ParameterT<S>>> items_;
    std::unordered_map<std::string, ParameterT<S>*> by_name_;
};

using Tensor = TensorT<float>;
using Graph = GraphT<float>;
using Parameter = ParameterT<float>;
using ParamStore = ParamStoreT<float>;

} // namespace ifan
