#pragma once

// Dense row-major tensors plus a tape for reverse-mode differentiation.
//
// TensorT<T> is a value-semantic handle over shared storage: copies are cheap
// and alias the same buffer. A tape (GraphT<T>) records operations when asked:
// every op takes a GraphT<T>* and records a node only when the graph is
// non-null and some input is already on the tape or requires a gradient.
// Passing nullptr runs the same forward math with no recording.
//
// backward(loss) walks the tape in reverse construction order (which is a
// topological order by construction) and accumulates gradients of leaf
// tensors that requested them into their persistent .grad buffers. Repeated
// backward calls keep accumulating until zero_grad().
//
// Tapes and the tensors recorded on them are confined to one thread; distinct
// tapes over distinct tensors may run concurrently.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rfsc/error.hpp"

namespace rfsc {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        if (d < 0) fail_data("tensor: negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

template <typename T>
class GraphT;

template <typename T>
class TensorT {
public:
    using value_type = T;

    TensorT() : TensorT(Shape{0}) {}

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape_numel(shape_)), T(0))) {}

    static TensorT full(Shape shape, T v) {
        TensorT t(std::move(shape));
        for (auto& x : *t.data_) x = v;
        return t;
    }

    static TensorT from(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
            fail_data("tensor: " + std::to_string(values.size()) + " values do not fill shape " + shape_str(shape));
        TensorT t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<T>>(std::move(values));
        return t;
    }

    static TensorT scalar(T v) { return from(Shape{}, {v}); }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_->size()); }

    [[nodiscard]] std::span<T> data() noexcept { return {data_->data(), data_->size()}; }
    [[nodiscard]] std::span<const T> data() const noexcept { return {data_->data(), data_->size()}; }
    [[nodiscard]] T* raw() noexcept { return data_->data(); }
    [[nodiscard]] const T* raw() const noexcept { return data_->data(); }

    [[nodiscard]] T item() const {
        if (size() != 1) fail_data("tensor: item() on non-scalar shape " + shape_str(shape_));
        return (*data_)[0];
    }

    // Deep copy of the values; the copy does not require a gradient.
    [[nodiscard]] TensorT clone() const {
        TensorT t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<T>>(*data_);
        return t;
    }

    // Same storage, no gradient request: lets a parameter participate in a
    // tape as a constant. Do not mix a tensor and its detached view on one
    // tape -- tape identity is keyed by storage.
    [[nodiscard]] TensorT detached() const {
        TensorT t;
        t.shape_ = shape_;
        t.data_ = data_;
        return t;
    }

    void set_requires_grad(bool on) {
        requires_grad_ = on;
        if (on && !grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
        if (!on) grad_.reset();
    }

    [[nodiscard]] bool requires_grad() const noexcept { return requires_grad_; }

    [[nodiscard]] std::span<const T> grad() const {
        if (!grad_) fail_data("tensor: grad() on a tensor that does not require gradients");
        return {grad_->data(), grad_->size()};
    }

    void zero_grad() {
        if (grad_)
            for (auto& x : *grad_) x = T(0);
    }

    [[nodiscard]] const void* storage_key() const noexcept { return data_.get(); }

private:
    friend class GraphT<T>;

    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    std::shared_ptr<std::vector<T>> grad_; // allocated iff requires_grad
    bool requires_grad_ = false;
};

template <typename T>
class GraphT {
public:
    using Tensor = TensorT<T>;
    // A backward closure receives the gradient of its node's output and the
    // graph, through which it accumulates into input gradient buffers.
    using BackFn = std::function<void(GraphT&, std::span<const T> dout)>;

    struct Node {
        const char* op;
        std::vector<int> inputs; // tape ids of tracked inputs; each < own id
        Tensor out;
        BackFn back; // null for leaves
    };

    // True when an op that sees this input should record a node.
    [[nodiscard]] bool wants(const Tensor& t) const {
        return t.requires_grad() || index_.count(t.storage_key()) != 0;
    }

    // Tape id for a tensor, registering it as a leaf on first sight.
    int track(const Tensor& t) {
        if (auto it = index_.find(t.storage_key()); it != index_.end()) return it->second;
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{"leaf", {}, t, nullptr});
        index_.emplace(t.storage_key(), id);
        return id;
    }

    int add_node(const char* op, std::vector<int> inputs, const Tensor& out, BackFn back) {
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{op, std::move(inputs), out, std::move(back)});
        index_.emplace(out.storage_key(), id);
        return id;
    }

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] const Node& node(std::size_t i) const { return nodes_.at(i); }

    // Gradient buffer of a tape id, valid during backward. id -1 (an
    // untracked constant input) yields an empty span.
    [[nodiscard]] std::span<T> grad_buf(int id) {
        if (id < 0) return {};
        return {bufs_[static_cast<std::size_t>(id)].data(), bufs_[static_cast<std::size_t>(id)].size()};
    }

    void backward(const Tensor& loss) {
        if (loss.size() != 1) fail_data("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        auto it = index_.find(loss.storage_key());
        if (it == index_.end()) fail_data("backward: loss tensor is not on this tape");
        const std::size_t root = static_cast<std::size_t>(it->second);

        bufs_.assign(nodes_.size(), {});
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            bufs_[i].assign(static_cast<std::size_t>(nodes_[i].out.size()), T(0));
        bufs_[root][0] = T(1);

        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].back) nodes_[i].back(*this, grad_buf(static_cast<int>(i)));
        }

        // Fold leaf buffers into persistent grads.
        for (auto& n : nodes_) {
            if (n.back) continue;
            if (!n.out.requires_grad()) continue;
            auto& dst = *n.out.grad_;
            auto& src = bufs_[static_cast<std::size_t>(index_.at(n.out.storage_key()))];
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
        bufs_.clear();
    }

private:
    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> index_;
    std::vector<std::vector<T>> bufs_;
};

using Tensor = TensorT<float>;
using Graph = GraphT<float>;

template <typename To, typename From>
[[nodiscard]] TensorT<To> tensor_cast(const TensorT<From>& t) {
    std::vector<To> v(t.data().begin(), t.data().end());
    return TensorT<To>::from(t.shape(), std::move(v));
}

template <typename T>
[[nodiscard]] bool has_nan(const TensorT<T>& t) {
    for (T x : t.data())
        if (x != x) return true;
    return false;
}

} // namespace rfsc
