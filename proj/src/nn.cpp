#include "protolog/nn.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace protolog {

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

void ParamStore::set(const std::string& name, Tensor t) {
  params_[name] = std::move(t);
}

DiffTensor ParamBinding::node(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return {tape_, it->second};
  DiffTensor n = tape_->leaf(store_->get(name), true);
  bound_[name] = n.id;
  return n;
}

std::map<std::string, Tensor> ParamBinding::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : bound_) {
    const Tensor& g = tape_->grad(id);
    out[name] = g.data.empty() ? Tensor::zeros(store_->get(name).shape) : g;
  }
  return out;
}

void init_mlp_params(ParamStore& store, const std::string& prefix,
                     const MlpSpec& spec, RngStream& rng) {
  for (size_t i = 0; i < spec.size(); ++i) {
    const LayerSpec& l = spec[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    Tensor W({l.out, l.in});
    for (double& w : W.data) w = rng.next_uniform(-bound, bound);
    store.set(prefix + ".W" + std::to_string(i), std::move(W));
    store.set(prefix + ".b" + std::to_string(i), Tensor::zeros({l.out}));
  }
}

DiffTensor mlp_forward(Tape& tape, ParamBinding& binding, const std::string& prefix,
                       const MlpSpec& spec, DiffTensor input) {
  DiffTensor h = input;
  for (size_t i = 0; i < spec.size(); ++i) {
    DiffTensor W = binding.node(prefix + ".W" + std::to_string(i));
    DiffTensor b = binding.node(prefix + ".b" + std::to_string(i));
    h = tape.affine(W, h, b);
    switch (spec[i].act) {
      case Activation::None: break;
      case Activation::Tanh: h = tape.tanh(h); break;
      case Activation::Sigmoid: h = tape.sigmoid(h); break;
    }
  }
  return h;
}

void adam_step(ParamStore& store, const std::map<std::string, Tensor>& grads,
               const AdamConfig& cfg) {
  store.adam_step() += 1;
  const double t = static_cast<double>(store.adam_step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, g] : grads) {
    if (!g.all_finite())
      throw std::runtime_error("adam: non-finite gradient for " + name);
    Tensor& p = store.get(name);
    if (!p.same_shape(g)) throw std::runtime_error("adam: gradient shape mismatch for " + name);
    AdamState& st = store.adam_state()[name];
    if (st.m.data.empty()) {
      st.m = Tensor::zeros(p.shape);
      st.v = Tensor::zeros(p.shape);
    }
    for (size_t i = 0; i < p.size(); ++i) {
      st.m.data[i] = cfg.beta1 * st.m.data[i] + (1.0 - cfg.beta1) * g.data[i];
      st.v.data[i] = cfg.beta2 * st.v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
      const double mh = st.m.data[i] / c1;
      const double vh = st.v.data[i] / c2;
      p.data[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

std::string format_double_17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

void write_tensor_line(std::ostream& os, const std::string& kind,
                       const std::string& name, const Tensor& t) {
  os << kind << " " << name << " " << t.rank();
  for (size_t d : t.shape) os << " " << d;
  for (double v : t.data) os << " " << format_double_17(v);
  os << "\n";
}

Tensor read_tensor_body(std::istringstream& is, const std::string& name) {
  size_t rank = 0;
  if (!(is >> rank)) throw std::runtime_error("checkpoint: bad tensor header for " + name);
  std::vector<size_t> shape(rank);
  for (size_t& d : shape)
    if (!(is >> d)) throw std::runtime_error("checkpoint: bad shape for " + name);
  const size_t n = shape_size(shape);
  std::vector<double> data(n);
  for (double& v : data)
    if (!(is >> v)) throw std::runtime_error("checkpoint: truncated data for " + name);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

std::string checkpoint_to_string(const ParamStore& store) {
  std::ostringstream os;
  os << "protolog-checkpoint v1\n";
  for (const auto& [k, v] : store.meta()) os << "meta " << k << " " << v << "\n";
  for (const auto& [name, t] : store.all()) write_tensor_line(os, "param", name, t);
  os << "adam_step " << store.adam_step() << "\n";
  for (const auto& [name, st] : store.adam_state()) {
    if (st.m.data.empty()) continue;
    write_tensor_line(os, "adam_m", name, st.m);
    write_tensor_line(os, "adam_v", name, st.v);
  }
  os << "end\n";
  return os.str();
}

ParamStore checkpoint_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "protolog-checkpoint v1")
    throw std::runtime_error("checkpoint: bad or missing version header");
  ParamStore store;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "end") break;
    if (tag == "meta") {
      std::string k, v;
      is >> k;
      std::getline(is, v);
      if (!v.empty() && v.front() == ' ') v.erase(0, 1);
      store.meta()[k] = v;
    } else if (tag == "param" || tag == "adam_m" || tag == "adam_v") {
      std::string name;
      is >> name;
      Tensor t = read_tensor_body(is, name);
      if (tag == "param") store.set(name, std::move(t));
      else if (tag == "adam_m") store.adam_state()[name].m = std::move(t);
      else store.adam_state()[name].v = std::move(t);
    } else if (tag == "adam_step") {
      is >> store.adam_step();
    } else {
      throw std::runtime_error("checkpoint: unknown record '" + tag + "'");
    }
  }
  return store;
}

void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f << checkpoint_to_string(store);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace protolog
