#include "adod/autograd.hpp"

#include "adod/error.hpp"

namespace adod {

void ParameterStore::claim(const std::string& name) {
  if (name.empty()) throw ValidationError("parameter name must be nonempty");
  if (!names_.emplace(name, 0).second)
    throw ValidationError("parameter name collision: " + name);
}

Parameter& ParameterStore::add(std::string name, Tensor value,
                               bool requires_grad) {
  claim(name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = std::move(value);
  p->requires_grad = requires_grad;
  params_.push_back(std::move(p));
  return *params_.back();
}

Tensor& ParameterStore::add_buffer(std::string name, Tensor value) {
  claim(name);
  buffers_.emplace_back(std::move(name),
                        std::make_unique<Tensor>(std::move(value)));
  return *buffers_.back().second;
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

Tensor* ParameterStore::find_buffer(const std::string& name) {
  for (auto& [n, t] : buffers_)
    if (n == name) return t.get();
  return nullptr;
}

std::vector<Parameter*> ParameterStore::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::parameters() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ParameterStore::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [n, t] : buffers_) out.emplace_back(n, t.get());
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ParameterStore::buffers()
    const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& [n, t] : buffers_) out.emplace_back(n, t.get());
  return out;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Tensor Var::grad() const {
  if (const Tensor* g = tape_->grad_of(id_)) return *g;
  return Tensor::zeros(value().shape());
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.requires_grad = p.requires_grad;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (const Var& v : inputs) {
    if (&v.tape() != this)
      throw ValidationError("tape mismatch: input recorded on another tape");
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.owned;
}

Tensor* Tape::grad_sink(Var v) {
  Node& n = nodes_.at(v.id());
  if (!n.requires_grad) return nullptr;
  if (!n.grad) n.grad = Tensor::zeros(value(v.id()).shape());
  return &*n.grad;
}

const Tensor* Tape::grad_of(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.grad ? &*n.grad : nullptr;
}

void Tape::backward(Var root) {
  backward(root, Tensor::full(root.value().shape(), 1.0));
}

void Tape::backward(Var root, const Tensor& seed) {
  if (seed.shape() != root.value().shape())
    throw ValidationError("backward seed shape " + shape_str(seed.shape()) +
                          " does not match root " +
                          shape_str(root.value().shape()));
  if (Tensor* g = grad_sink(root)) g->add_inplace(seed);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad || !n.backward) continue;
    n.backward(*this, *n.grad);
  }
  for (Node& n : nodes_) {
    if (!n.param || !n.param->requires_grad) continue;
    if (!n.param->grad) n.param->grad = Tensor::zeros(n.param->value.shape());
    if (n.grad) n.param->grad->add_inplace(*n.grad);
  }
}

}  // namespace adod
