#include "rppg/graph.hpp"

#include <algorithm>
#include <cmath>

#include "rppg/error.hpp"

namespace rppg::graph {

const Tensor& Gradients::param(std::string_view name) const {
  for (const auto& p : params)
    if (p.name == name) return p.value;
  throw Error("no gradient for parameter '" + std::string(name) + "'");
}

Graph::Graph(Shape input_shape, const std::vector<LayerSpec>& layers)
    : input_shape_(std::move(input_shape)) {
  if (input_shape_.size() != 4)
    throw Error("graph input must be C x T x H x W, got " + shape_string(input_shape_));
  if (layers.empty()) throw Error("graph needs at least one layer");
  layers_.reserve(layers.size());
  for (const auto& spec : layers) layers_.push_back(make_layer(spec));

  // Validate the chain on a representative shape; wildcard extents become 32.
  Shape probe = input_shape_;
  for (auto& e : probe)
    if (e == 0) e = 32;
  output_shape(probe);
}

Graph::Graph(const Graph& other) : input_shape_(other.input_shape_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Graph& Graph::operator=(const Graph& other) {
  if (this != &other) {
    Graph tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

void Graph::check_input(const Shape& input) const {
  if (input.size() != input_shape_.size())
    throw ShapeError(0, "graph input rank mismatch: expected " + shape_string(input_shape_) +
                            ", got " + shape_string(input));
  for (std::size_t i = 0; i < input.size(); ++i)
    if (input_shape_[i] != 0 && input_shape_[i] != input[i])
      throw ShapeError(0, "graph input shape mismatch: expected " + shape_string(input_shape_) +
                              ", got " + shape_string(input));
}

Shape Graph::output_shape(const Shape& input) const {
  check_input(input);
  Shape s = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      s = layers_[i]->output_shape(s);
    } catch (const ShapeError&) {
      throw;
    } catch (const Error& e) {
      throw ShapeError(i, e.what());
    }
  }
  return s;
}

void Graph::init(Rng& rng) {
  for (auto& l : layers_) l->init(rng);
}

std::vector<std::string> Graph::param_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto local = layers_[i]->param_names();
    for (const auto& n : local)
      names.push_back(std::to_string(i) + "." + std::string(kind_name(layers_[i]->kind())) + "." +
                      n);
  }
  return names;
}

std::size_t Graph::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    for (const auto& p : l->params()) n += p.size();
  return n;
}

std::vector<Tensor*> Graph::param_ptrs() {
  std::vector<Tensor*> out;
  for (auto& l : layers_)
    for (auto& p : l->params()) out.push_back(&p);
  return out;
}

Tensor& Graph::param(std::string_view name) {
  const auto names = param_names();
  const auto ptrs = param_ptrs();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return *ptrs[i];
  throw Error("no parameter named '" + std::string(name) + "'");
}

const Tensor& Graph::param(std::string_view name) const {
  return const_cast<Graph*>(this)->param(name);
}

std::vector<Tensor> Graph::param_values() const {
  std::vector<Tensor> out;
  for (const auto& l : layers_)
    for (const auto& p : l->params()) out.push_back(p);
  return out;
}

void Graph::set_param_values(const std::vector<Tensor>& values) {
  auto ptrs = param_ptrs();
  if (values.size() != ptrs.size()) throw Error("parameter count mismatch");
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    if (values[i].shape() != ptrs[i]->shape())
      throw Error("parameter shape mismatch at index " + std::to_string(i));
    *ptrs[i] = values[i];
  }
}

std::vector<NamedTensor> Graph::named_params() const {
  const auto names = param_names();
  const auto values = param_values();
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < names.size(); ++i) out.push_back({names[i], values[i]});
  return out;
}

void Graph::load_params(const std::vector<NamedTensor>& params) {
  const auto names = param_names();
  auto ptrs = param_ptrs();
  if (params.size() != names.size())
    throw Error("checkpoint holds " + std::to_string(params.size()) + " parameters, graph has " +
                std::to_string(names.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = std::find_if(params.begin(), params.end(),
                           [&](const NamedTensor& p) { return p.name == names[i]; });
    if (it == params.end()) throw Error("checkpoint lacks parameter '" + names[i] + "'");
    if (it->value.shape() != ptrs[i]->shape())
      throw Error("checkpoint parameter '" + names[i] + "' has shape " +
                  shape_string(it->value.shape()) + ", expected " +
                  shape_string(ptrs[i]->shape()));
    *ptrs[i] = it->value;
  }
}

std::vector<Tensor> Graph::zero_grads() const {
  std::vector<Tensor> out;
  for (const auto& l : layers_)
    for (const auto& p : l->params()) out.emplace_back(p.shape());
  return out;
}

Tensor Graph::forward(const Tensor& input, Tape& tape) const {
  output_shape(input.shape());  // reports the offending layer before any work
  tape.caches.assign(layers_.size(), LayerCache{});
  tape.input_shape = input.shape();
  Tensor x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) x = layers_[i]->forward(x, tape.caches[i]);
  tape.output_shape = x.shape();
  return x;
}

Tensor Graph::evaluate(const Tensor& input) const {
  output_shape(input.shape());
  Tensor x = input;
  LayerCache scratch;
  for (const auto& l : layers_) {
    x = l->forward(x, scratch);
    scratch = LayerCache{};
  }
  return x;
}

Tensor Graph::backward(const Tape& tape, const Tensor& output_grad,
                       std::vector<Tensor>& param_grads) const {
  if (!tape.ready()) throw Error("backward called before forward");
  if (output_grad.shape() != tape.output_shape)
    throw Error("output gradient shape " + shape_string(output_grad.shape()) +
                " does not match forward output " + shape_string(tape.output_shape));
  if (param_grads.empty()) param_grads = zero_grads();
  // Offsets of each layer's parameters inside the flat gradient list.
  std::vector<std::size_t> offset(layers_.size() + 1, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i)
    offset[i + 1] = offset[i] + layers_[i]->params().size();
  if (param_grads.size() != offset.back()) throw Error("gradient accumulator size mismatch");

  Tensor g = output_grad;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    std::span<Tensor> slot(param_grads.data() + offset[i], offset[i + 1] - offset[i]);
    g = layers_[i]->backward(g, tape.caches[i], slot);
  }
  return g;
}

Tensor Graph::forward(const Tensor& input) { return forward(input, tape_); }

Gradients Graph::backward(const Tensor& output_grad) {
  std::vector<Tensor> grads = zero_grads();
  Gradients out;
  out.input = backward(tape_, output_grad, grads);
  const auto names = param_names();
  for (std::size_t i = 0; i < names.size(); ++i) out.params.push_back({names[i], grads[i]});
  return out;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(Graph& graph, const Tensor& input, double tol, std::uint64_t seed,
                           double step, std::size_t max_input_checks) {
  if (graph.param_count() > 10000)
    throw Error("grad_check: too many parameters to perturb exhaustively");
  Tape tape;
  const Tensor out = graph.forward(input, tape);
  if (!out.all_finite()) throw Error("grad_check: non-finite forward value");

  Rng rng(seed);
  Tensor probe(out.shape());
  for (double& v : probe.data()) v = rng.uniform(-1.0, 1.0);
  auto loss = [&](const Tensor& x) { return dot(graph.evaluate(x), probe); };

  std::vector<Tensor> grads;
  const Tensor dinput = graph.backward(tape, probe, grads);

  GradCheckReport report;
  report.tol = tol;
  const auto names = graph.param_names();
  auto ptrs = graph.param_ptrs();
  for (std::size_t p = 0; p < ptrs.size(); ++p) {
    ParamCheck pc{names[p], 0.0};
    Tensor& param = *ptrs[p];
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double orig = param[i];
      param[i] = orig + step;
      const double up = loss(input);
      param[i] = orig - step;
      const double down = loss(input);
      param[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw Error("grad_check: non-finite forward value");
      pc.max_rel_error =
          std::max(pc.max_rel_error, relative_error(grads[p][i], (up - down) / (2 * step)));
    }
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.params.push_back(pc);
  }

  Tensor x = input;
  const std::size_t stride = std::max<std::size_t>(1, x.size() / std::max<std::size_t>(1, max_input_checks));
  for (std::size_t i = 0; i < x.size(); i += stride) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = loss(x);
    x[i] = orig - step;
    const double down = loss(x);
    x[i] = orig;
    report.input_max_rel_error = std::max(
        report.input_max_rel_error, relative_error(dinput[i], (up - down) / (2 * step)));
  }
  report.max_rel_error = std::max(report.max_rel_error, report.input_max_rel_error);
  report.pass = report.max_rel_error < tol;
  return report;
}

}  // namespace rppg::graph
