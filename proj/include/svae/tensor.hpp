#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace svae {

using Shape = std::vector<std::size_t>;

std::size_t num_elements(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct TapeState;
}

/// Dense row-major array of doubles.
///
/// A Tensor is a value: copies own their data. When produced on a Tape it
/// additionally carries a reference to the record that produced it, and
/// operations taking it as input append their own records to that tape.
class Tensor {
 public:
  /// Rank-0 zero.
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const;

  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  /// Writable view of the values. Detaches the tensor from its tape, since
  /// the recorded graph no longer describes the modified data.
  std::span<double> mutable_data();

  double operator[](std::size_t i) const { return data_[i]; }
  /// The single value of a one-element tensor.
  double item() const;

  bool on_tape() const noexcept { return tape_ != nullptr; }
  Tensor detach() const;

  bool all_finite() const noexcept;

 private:
  friend class Tape;

  Shape shape_;
  std::vector<double> data_;
  std::shared_ptr<detail::TapeState> tape_;
  std::size_t node_ = 0;
  std::uint64_t generation_ = 0;
};

/// Define-by-run gradient tape.
///
/// Leaves are registered with leaf(); every operation on tape tensors appends
/// one record. backward() walks the records in reverse once and then resets
/// the tape, after which tensors from the old graph can no longer be used as
/// tape inputs.
class Tape {
 public:
  /// Gradient slots of an operation's inputs; null where the input is not
  /// tracked and no gradient is wanted.
  using InputGrads = std::span<std::vector<double>* const>;
  using BackwardFn = std::function<void(std::span<const double> out_grad, InputGrads in_grads)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Tensor value);

  /// Gradients of a one-element loss with respect to every leaf, in the order
  /// the leaves were registered. Consumes the tape.
  std::vector<Tensor> backward(const Tensor& loss);

  std::size_t num_records() const;
  std::size_t num_leaves() const;

  /// Wraps `value` as the output of an operation on `inputs`. If no input is
  /// on a tape the value is returned untracked and `fn` is dropped.
  static Tensor record(Tensor value, std::span<const Tensor* const> inputs, BackwardFn fn);
  static Tensor record(Tensor value, std::initializer_list<const Tensor*> inputs, BackwardFn fn);

 private:
  std::shared_ptr<detail::TapeState> state_;
};

}  // namespace svae
