#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "adod/tensor.hpp"

namespace adod {

// Trainable (or frozen) tensor addressed by a dotted name.
struct Parameter {
  std::string name;
  Tensor value;
  bool requires_grad = true;
  std::optional<Tensor> grad;

  void zero_grad() {
    if (grad) grad->fill(0.0);
  }
};

// Owns every Parameter and buffer of a model; addresses stay stable for the
// lifetime of the store.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor value, bool requires_grad = true);
  Tensor& add_buffer(std::string name, Tensor value);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Tensor* find_buffer(const std::string& name);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // Buffers in registration order.
  std::vector<std::pair<std::string, Tensor*>> buffers();
  std::vector<std::pair<std::string, const Tensor*>> buffers() const;

  std::size_t parameter_count() const;  // total trainable scalars
  void zero_grad();

 private:
  void claim(const std::string& name);

  std::vector<std::unique_ptr<Parameter>> params_;
  std::vector<std::pair<std::string, std::unique_ptr<Tensor>>> buffers_;
  std::unordered_map<std::string, int> names_;
};

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Gradient after Tape::backward; zeros if nothing flowed here.
  Tensor grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Each recorded node owns its forward value, a lazily
// allocated gradient and a closure that pushes its gradient to its inputs.
// Gradients of Parameter leaves are accumulated into Parameter::grad when
// backward finishes; nothing is zeroed implicitly.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Parameter& p);
  // Records a derived value. `fn` runs during backward only when the node
  // requires grad, i.e. when any input does.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  // Seeds d(root)/d(root) with ones (or with `seed` when given).
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer for accumulation, or nullptr when the node needs none.
  Tensor* grad_sink(Var v);
  const Tensor* grad_of(std::size_t id) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

}  // namespace adod
