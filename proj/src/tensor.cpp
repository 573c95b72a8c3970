#include "svae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "svae/errors.hpp"

namespace svae {

namespace detail {

struct TapeNode {
  std::size_t size = 0;
  std::vector<std::size_t> inputs;  // npos for untracked inputs
  Tape::BackwardFn backward;
  Shape leaf_shape;
};

struct TapeState {
  std::vector<TapeNode> nodes;
  std::vector<std::size_t> leaves;
  std::uint64_t generation = 1;
};

}  // namespace detail

namespace {

constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

}  // namespace

std::size_t num_elements(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(num_elements(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (num_elements(shape_) != data_.size()) {
    throw ContractViolation("tensor shape " + to_string(shape_) + " does not match " +
                            std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ContractViolation("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[axis];
}

std::span<double> Tensor::mutable_data() {
  tape_.reset();
  return data_;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractViolation("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::detach() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = data_;
  return out;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tape::Tape() : state_(std::make_shared<detail::TapeState>()) {}

Tape::~Tape() {
  state_->nodes.clear();
  state_->leaves.clear();
  ++state_->generation;
}

Tensor Tape::leaf(Tensor value) {
  value.tape_ = state_;
  value.node_ = state_->nodes.size();
  value.generation_ = state_->generation;
  state_->nodes.push_back({value.size(), {}, {}, value.shape()});
  state_->leaves.push_back(value.node_);
  return value;
}

std::size_t Tape::num_records() const { return state_->nodes.size(); }
std::size_t Tape::num_leaves() const { return state_->leaves.size(); }

Tensor Tape::record(Tensor value, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Tensor* const>(inputs.begin(), inputs.size()), std::move(fn));
}

Tensor Tape::record(Tensor value, std::span<const Tensor* const> inputs, BackwardFn fn) {
  std::shared_ptr<detail::TapeState> state;
  for (const Tensor* in : inputs) {
    if (!in->tape_) continue;
    if (in->generation_ != in->tape_->generation) {
      throw ContractViolation("tensor refers to a tape that has already been consumed");
    }
    if (state && state != in->tape_) throw ContractViolation("operation mixes tensors from different tapes");
    state = in->tape_;
  }
  value.tape_.reset();
  if (!state) return value;

  detail::TapeNode node;
  node.size = value.size();
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) node.inputs.push_back(in->tape_ ? in->node_ : kNoNode);
  node.backward = std::move(fn);

  value.tape_ = state;
  value.node_ = state->nodes.size();
  value.generation_ = state->generation;
  state->nodes.push_back(std::move(node));
  return value;
}

std::vector<Tensor> Tape::backward(const Tensor& loss) {
  auto& st = *state_;
  if (loss.tape_ != state_ || loss.generation_ != st.generation) {
    throw ContractViolation("backward() on a loss that was not produced on this tape");
  }
  if (loss.size() != 1) throw ContractViolation("backward() needs a scalar loss, got shape " + to_string(loss.shape()));

  std::vector<std::vector<double>> grads(loss.node_ + 1);
  grads[loss.node_].assign(1, 1.0);
  std::vector<std::vector<double>*> slots;

  for (std::size_t id = loss.node_ + 1; id-- > 0;) {
    auto& node = st.nodes[id];
    if (!node.backward || grads[id].empty()) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (in == kNoNode) continue;
      if (grads[in].empty()) grads[in].assign(st.nodes[in].size, 0.0);
      slots[k] = &grads[in];
    }
    node.backward(grads[id], slots);
    if (id != loss.node_) std::vector<double>().swap(grads[id]);
  }

  std::vector<Tensor> out;
  out.reserve(st.leaves.size());
  for (std::size_t leaf : st.leaves) {
    const std::size_t n = st.nodes[leaf].size;
    std::vector<double> g = leaf < grads.size() && !grads[leaf].empty() ? std::move(grads[leaf]) : std::vector<double>(n, 0.0);
    out.emplace_back(st.nodes[leaf].leaf_shape, std::move(g));
  }

  st.nodes.clear();
  st.leaves.clear();
  ++st.generation;
  return out;
}

}  // namespace svae
