#include "protolog/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace protolog {

double DiffVal::value() const {
  const Tensor& t = tape->value(id);
  if (t.size() != 1) throw std::runtime_error("DiffVal::value on non-scalar node");
  return t.data[0];
}

const Tensor& DiffVal::tensor() const { return tape->value(id); }

int32_t Tape::push(Tensor value, bool needs_grad,
                   std::function<void(Tape&, int32_t)> back, const char* op) {
  check_finite(value, op);
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backward = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int32_t>(nodes_.size() - 1);
}

Tensor& Tape::grad_ref(int32_t id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

const Tensor& Tape::grad(int32_t id) const {
  static const Tensor empty;
  return nodes_[id].grad.data.empty() ? empty : nodes_[id].grad;
}

void Tape::check_tape(DiffVal v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int32_t>(nodes_.size()))
    throw std::runtime_error("DiffVal does not belong to this tape");
}

void Tape::clear() { nodes_.clear(); }

DiffVal Tape::leaf(Tensor value, bool needs_grad) {
  const int32_t id = push(std::move(value), needs_grad, nullptr, "leaf");
  return {this, id};
}

namespace {
// Small helper: accumulate g into dst.
void axpy(Tensor& dst, const Tensor& g) {
  for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += g.data[i];
}
}  // namespace

DiffVal Tape::tanh(DiffVal x) {
  check_tape(x);
  Tensor out = value(x.id);
  for (double& v : out.data) v = std::tanh(v);
  const int32_t xi = x.id;
  const int32_t id = push(
      std::move(out), needs_grad(xi),
      [xi](Tape& t, int32_t self) {
        if (!t.needs_grad(xi)) return;
        Tensor& gx = t.grad_ref(xi);
        const Tensor& y = t.value(self);
        const Tensor& g = t.grad(self);
        for (size_t i = 0; i < gx.size(); ++i)
          gx.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
      },
      "tanh");
  return {this, id};
}

DiffVal Tape::sigmoid(DiffVal x) {
  check_tape(x);
  Tensor out = value(x.id);
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  const int32_t xi = x.id;
  const int32_t id = push(
      std::move(out), needs_grad(xi),
      [xi](Tape& t, int32_t self) {
        if (!t.needs_grad(xi)) return;
        Tensor& gx = t.grad_ref(xi);
        const Tensor& y = t.value(self);
        const Tensor& g = t.grad(self);
        for (size_t i = 0; i < gx.size(); ++i)
          gx.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
      },
      "sigmoid");
  return {this, id};
}

DiffVal Tape::exp(DiffVal x) {
  check_tape(x);
  Tensor out = value(x.id);
  for (double& v : out.data) v = std::exp(v);
  const int32_t xi = x.id;
  const int32_t id = push(
      std::move(out), needs_grad(xi),
      [xi](Tape& t, int32_t self) {
        if (!t.needs_grad(xi)) return;
        Tensor& gx = t.grad_ref(xi);
        const Tensor& y = t.value(self);
        const Tensor& g = t.grad(self);
        for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += g.data[i] * y.data[i];
      },
      "exp");
  return {this, id};
}

DiffVal Tape::log(DiffVal x) {
  check_tape(x);
  Tensor out = value(x.id);
  for (double& v : out.data) v = std::log(v);
  const int32_t xi = x.id;
  const int32_t id = push(
      std::move(out), needs_grad(xi),
      [xi](Tape& t, int32_t self) {
        if (!t.needs_grad(xi)) return;
        Tensor& gx = t.grad_ref(xi);
        const Tensor& xv = t.value(xi);
        const Tensor& g = t.grad(self);
        for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += g.data[i] / xv.data[i];
      },
      "log");
  return {this, id};
}

DiffVal Tape::neg(DiffVal x) { return scale(x, -1.0); }

DiffVal Tape::clamp(DiffVal x, double lo, double hi) {
  check_tape(x);
  Tensor out = value(x.id);
  for (double& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
  const int32_t xi = x.id;
  const int32_t id = push(
      std::move(out), needs_grad(xi),
      [xi, lo, hi](Tape& t, int32_t self) {
        if (!t.needs_grad(xi)) return;
        Tensor& gx = t.grad_ref(xi);
        const Tensor& xv = t.value(xi);
        const Tensor& g = t.grad(self);
        for (size_t i = 0; i < gx.size(); ++i)
          if (xv.data[i] > lo && xv.data[i] < hi) gx.data[i] += g.data[i];
      },
      "clamp");
  return {this, id};
}

DiffVal Tape::scale(DiffVal x, double c) {
  check_tape(x);
  Tensor out = value(x.id);
  for (double& v : out.data) v *= c;
  const int32_t xi = x.id;
  const int32_t id = push(
      std::move(out), needs_grad(xi),
      [xi, c](Tape& t, int32_t self) {
        if (!t.needs_grad(xi)) return;
        Tensor& gx = t.grad_ref(xi);
        const Tensor& g = t.grad(self);
        for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += g.data[i] * c;
      },
      "scale");
  return {this, id};
}

DiffVal Tape::add_const(DiffVal x, double c) {
  check_tape(x);
  Tensor out = value(x.id);
  for (double& v : out.data) v += c;
  const int32_t xi = x.id;
  const int32_t id = push(
      std::move(out), needs_grad(xi),
      [xi](Tape& t, int32_t self) {
        if (!t.needs_grad(xi)) return;
        axpy(t.grad_ref(xi), t.grad(self));
      },
      "add_const");
  return {this, id};
}

DiffVal Tape::add(DiffVal a, DiffVal b) {
  check_tape(a);
  check_tape(b);
  const Tensor& av = value(a.id);
  const Tensor& bv = value(b.id);
  if (!av.same_shape(bv)) throw std::runtime_error("add: shape mismatch");
  Tensor out = av;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  const int32_t ai = a.id, bi = b.id;
  const int32_t id = push(
      std::move(out), needs_grad(ai) || needs_grad(bi),
      [ai, bi](Tape& t, int32_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(ai)) axpy(t.grad_ref(ai), g);
        if (t.needs_grad(bi)) axpy(t.grad_ref(bi), g);
      },
      "add");
  return {this, id};
}

DiffVal Tape::sub(DiffVal a, DiffVal b) {
  check_tape(a);
  check_tape(b);
  const Tensor& av = value(a.id);
  const Tensor& bv = value(b.id);
  if (!av.same_shape(bv)) throw std::runtime_error("sub: shape mismatch");
  Tensor out = av;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
  const int32_t ai = a.id, bi = b.id;
  const int32_t id = push(
      std::move(out), needs_grad(ai) || needs_grad(bi),
      [ai, bi](Tape& t, int32_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(ai)) axpy(t.grad_ref(ai), g);
        if (t.needs_grad(bi)) {
          Tensor& gb = t.grad_ref(bi);
          for (size_t i = 0; i < gb.size(); ++i) gb.data[i] -= g.data[i];
        }
      },
      "sub");
  return {this, id};
}

DiffVal Tape::mul(DiffVal a, DiffVal b) {
  check_tape(a);
  check_tape(b);
  const Tensor& av = value(a.id);
  const Tensor& bv = value(b.id);
  if (!av.same_shape(bv)) throw std::runtime_error("mul: shape mismatch");
  Tensor out = av;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  const int32_t ai = a.id, bi = b.id;
  const int32_t id = push(
      std::move(out), needs_grad(ai) || needs_grad(bi),
      [ai, bi](Tape& t, int32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& av2 = t.value(ai);
        const Tensor& bv2 = t.value(bi);
        if (t.needs_grad(ai)) {
          Tensor& ga = t.grad_ref(ai);
          for (size_t i = 0; i < ga.size(); ++i) ga.data[i] += g.data[i] * bv2.data[i];
        }
        if (t.needs_grad(bi)) {
          Tensor& gb = t.grad_ref(bi);
          for (size_t i = 0; i < gb.size(); ++i) gb.data[i] += g.data[i] * av2.data[i];
        }
      },
      "mul");
  return {this, id};
}

DiffVal Tape::affine(DiffVal W, DiffVal x, DiffVal b) {
  check_tape(W);
  check_tape(x);
  check_tape(b);
  const Tensor& Wv = value(W.id);
  const Tensor& xv = value(x.id);
  const Tensor& bv = value(b.id);
  if (Wv.rank() != 2 || xv.size() != Wv.shape[1] || bv.size() != Wv.shape[0])
    throw std::runtime_error("affine: shape mismatch W" + Wv.shape_str() + " x" +
                             xv.shape_str() + " b" + bv.shape_str());
  const size_t m = Wv.shape[0], n = Wv.shape[1];
  Tensor out({m});
  for (size_t r = 0; r < m; ++r) {
    double acc = bv.data[r];
    const double* wr = &Wv.data[r * n];
    for (size_t c = 0; c < n; ++c) acc += wr[c] * xv.data[c];
    out.data[r] = acc;
  }
  const int32_t Wi = W.id, xi = x.id, bi = b.id;
  const int32_t id = push(
      std::move(out), needs_grad(Wi) || needs_grad(xi) || needs_grad(bi),
      [Wi, xi, bi, m, n](Tape& t, int32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& Wv2 = t.value(Wi);
        const Tensor& xv2 = t.value(xi);
        if (t.needs_grad(Wi)) {
          Tensor& gW = t.grad_ref(Wi);
          for (size_t r = 0; r < m; ++r) {
            double* gr = &gW.data[r * n];
            const double gv = g.data[r];
            for (size_t c = 0; c < n; ++c) gr[c] += gv * xv2.data[c];
          }
        }
        if (t.needs_grad(xi)) {
          Tensor& gx = t.grad_ref(xi);
          for (size_t r = 0; r < m; ++r) {
            const double gv = g.data[r];
            const double* wr = &Wv2.data[r * n];
            for (size_t c = 0; c < n; ++c) gx.data[c] += gv * wr[c];
          }
        }
        if (t.needs_grad(bi)) axpy(t.grad_ref(bi), g);
      },
      "affine");
  return {this, id};
}

DiffScalar Tape::sum(DiffVal x) {
  check_tape(x);
  const Tensor& xv = value(x.id);
  double acc = 0.0;
  for (double v : xv.data) acc += v;
  const int32_t xi = x.id;
  const int32_t id = push(
      Tensor::scalar(acc), needs_grad(xi),
      [xi](Tape& t, int32_t self) {
        if (!t.needs_grad(xi)) return;
        Tensor& gx = t.grad_ref(xi);
        const double g = t.grad(self).data[0];
        for (double& v : gx.data) v += g;
      },
      "sum");
  return {this, id};
}

DiffScalar Tape::mean(DiffVal x) {
  check_tape(x);
  const size_t n = value(x.id).size();
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

DiffVal Tape::slice(DiffVal x, size_t offset, size_t len) {
  check_tape(x);
  const Tensor& xv = value(x.id);
  if (offset + len > xv.size()) throw std::runtime_error("slice: out of range");
  Tensor out({len});
  for (size_t i = 0; i < len; ++i) out.data[i] = xv.data[offset + i];
  const int32_t xi = x.id;
  const int32_t id = push(
      std::move(out), needs_grad(xi),
      [xi, offset, len](Tape& t, int32_t self) {
        if (!t.needs_grad(xi)) return;
        Tensor& gx = t.grad_ref(xi);
        const Tensor& g = t.grad(self);
        for (size_t i = 0; i < len; ++i) gx.data[offset + i] += g.data[i];
      },
      "slice");
  return {this, id};
}

DiffVal Tape::stack(const std::vector<DiffScalar>& xs) {
  if (xs.empty()) throw std::runtime_error("stack: empty input");
  Tensor out({xs.size()});
  bool needs = false;
  std::vector<int32_t> ids(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    check_tape(xs[i]);
    const Tensor& v = value(xs[i].id);
    if (v.size() != 1) throw std::runtime_error("stack: non-scalar input");
    out.data[i] = v.data[0];
    ids[i] = xs[i].id;
    needs = needs || needs_grad(ids[i]);
  }
  const int32_t id = push(
      std::move(out), needs,
      [ids](Tape& t, int32_t self) {
        const Tensor& g = t.grad(self);
        for (size_t i = 0; i < ids.size(); ++i)
          if (t.needs_grad(ids[i])) t.grad_ref(ids[i]).data[0] += g.data[i];
      },
      "stack");
  return {this, id};
}

DiffScalar Tape::pick(DiffVal x, size_t i) {
  check_tape(x);
  const Tensor& xv = value(x.id);
  if (i >= xv.size()) throw std::runtime_error("pick: index out of range");
  const int32_t xi = x.id;
  const int32_t id = push(
      Tensor::scalar(xv.data[i]), needs_grad(xi),
      [xi, i](Tape& t, int32_t self) {
        if (!t.needs_grad(xi)) return;
        t.grad_ref(xi).data[i] += t.grad(self).data[0];
      },
      "pick");
  return {this, id};
}

DiffVal Tape::softmax(DiffVal x) {
  check_tape(x);
  const Tensor& xv = value(x.id);
  Tensor out = xv;
  double mx = out.data[0];
  for (double v : out.data) mx = std::max(mx, v);
  double z = 0.0;
  for (double& v : out.data) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : out.data) v /= z;
  const int32_t xi = x.id;
  const int32_t id = push(
      std::move(out), needs_grad(xi),
      [xi](Tape& t, int32_t self) {
        if (!t.needs_grad(xi)) return;
        const Tensor& s = t.value(self);
        const Tensor& g = t.grad(self);
        double dot = 0.0;
        for (size_t i = 0; i < s.size(); ++i) dot += g.data[i] * s.data[i];
        Tensor& gx = t.grad_ref(xi);
        for (size_t i = 0; i < s.size(); ++i)
          gx.data[i] += s.data[i] * (g.data[i] - dot);
      },
      "softmax");
  return {this, id};
}

DiffScalar Tape::mse(DiffVal a, DiffVal b) {
  check_tape(a);
  check_tape(b);
  const Tensor& av = value(a.id);
  const Tensor& bv = value(b.id);
  if (!av.same_shape(bv)) throw std::runtime_error("mse: shape mismatch");
  const size_t n = av.size();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = av.data[i] - bv.data[i];
    acc += d * d;
  }
  const int32_t ai = a.id, bi = b.id;
  const int32_t id = push(
      Tensor::scalar(acc / static_cast<double>(n)),
      needs_grad(ai) || needs_grad(bi),
      [ai, bi, n](Tape& t, int32_t self) {
        const double g = t.grad(self).data[0] * 2.0 / static_cast<double>(n);
        const Tensor& av2 = t.value(ai);
        const Tensor& bv2 = t.value(bi);
        if (t.needs_grad(ai)) {
          Tensor& ga = t.grad_ref(ai);
          for (size_t i = 0; i < n; ++i) ga.data[i] += g * (av2.data[i] - bv2.data[i]);
        }
        if (t.needs_grad(bi)) {
          Tensor& gb = t.grad_ref(bi);
          for (size_t i = 0; i < n; ++i) gb.data[i] -= g * (av2.data[i] - bv2.data[i]);
        }
      },
      "mse");
  return {this, id};
}

DiffScalar Tape::bce(DiffScalar p, double target, double eps) {
  check_tape(p);
  const double pv = value(p.id).data[0];
  const double pc = pv < eps ? eps : (pv > 1.0 - eps ? 1.0 - eps : pv);
  const double loss = -(target * std::log(pc) + (1.0 - target) * std::log(1.0 - pc));
  const int32_t pi = p.id;
  const int32_t id = push(
      Tensor::scalar(loss), needs_grad(pi),
      [pi, target, eps](Tape& t, int32_t self) {
        if (!t.needs_grad(pi)) return;
        const double pv2 = t.value(pi).data[0];
        if (pv2 <= eps || pv2 >= 1.0 - eps) return;  // clamped, zero grad
        const double g = t.grad(self).data[0];
        t.grad_ref(pi).data[0] +=
            g * (-(target / pv2) + (1.0 - target) / (1.0 - pv2));
      },
      "bce");
  return {this, id};
}

DiffScalar Tape::gaussian_log_density(DiffVal z, DiffVal mean, DiffVal log_std,
                                      double std_floor) {
  check_tape(z);
  check_tape(mean);
  check_tape(log_std);
  const Tensor& zv = value(z.id);
  const Tensor& mv = value(mean.id);
  const Tensor& lv = value(log_std.id);
  if (!zv.same_shape(mv) || !zv.same_shape(lv))
    throw std::runtime_error("gaussian_log_density: shape mismatch");
  const double log_floor = std::log(std_floor);
  const size_t n = zv.size();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double ls = std::max(lv.data[i], log_floor);
    const double s = std::exp(ls);
    const double d = zv.data[i] - mv.data[i];
    acc += -0.5 * std::log(2.0 * M_PI) - ls - 0.5 * d * d / (s * s);
  }
  const int32_t zi = z.id, mi = mean.id, li = log_std.id;
  const int32_t id = push(
      Tensor::scalar(acc), needs_grad(zi) || needs_grad(mi) || needs_grad(li),
      [zi, mi, li, log_floor, n](Tape& t, int32_t self) {
        const double g = t.grad(self).data[0];
        const Tensor& zv2 = t.value(zi);
        const Tensor& mv2 = t.value(mi);
        const Tensor& lv2 = t.value(li);
        for (size_t i = 0; i < n; ++i) {
          const double ls = std::max(lv2.data[i], log_floor);
          const double s = std::exp(ls);
          const double d = zv2.data[i] - mv2.data[i];
          const double inv_var = 1.0 / (s * s);
          if (t.needs_grad(zi)) t.grad_ref(zi).data[i] += g * (-d * inv_var);
          if (t.needs_grad(mi)) t.grad_ref(mi).data[i] += g * (d * inv_var);
          if (t.needs_grad(li) && lv2.data[i] > log_floor)
            t.grad_ref(li).data[i] += g * (-1.0 + d * d * inv_var);
        }
      },
      "gaussian_log_density");
  return {this, id};
}

DiffVal Tape::gaussian_sample(DiffVal mean, DiffVal log_std, const Tensor& eps,
                              double std_floor) {
  check_tape(mean);
  check_tape(log_std);
  const Tensor& mv = value(mean.id);
  const Tensor& lv = value(log_std.id);
  if (!mv.same_shape(lv) || !mv.same_shape(eps))
    throw std::runtime_error("gaussian_sample: shape mismatch");
  const double log_floor = std::log(std_floor);
  Tensor out = mv;
  const size_t n = out.size();
  for (size_t i = 0; i < n; ++i)
    out.data[i] += std::exp(std::max(lv.data[i], log_floor)) * eps.data[i];
  const int32_t mi = mean.id, li = log_std.id;
  const Tensor eps_copy = eps;
  const int32_t id = push(
      std::move(out), needs_grad(mi) || needs_grad(li),
      [mi, li, eps_copy, log_floor, n](Tape& t, int32_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(mi)) axpy(t.grad_ref(mi), g);
        if (t.needs_grad(li)) {
          const Tensor& lv2 = t.value(li);
          Tensor& gl = t.grad_ref(li);
          for (size_t i = 0; i < n; ++i)
            if (lv2.data[i] > log_floor)
              gl.data[i] += g.data[i] * eps_copy.data[i] * std::exp(lv2.data[i]);
        }
      },
      "gaussian_sample");
  return {this, id};
}

DiffScalar Tape::kl_diag_gaussian(DiffVal mean_a, DiffVal log_std_a,
                                  DiffVal mean_b, DiffVal log_std_b,
                                  double std_floor) {
  check_tape(mean_a);
  check_tape(log_std_a);
  check_tape(mean_b);
  check_tape(log_std_b);
  const Tensor& ma = value(mean_a.id);
  const Tensor& la = value(log_std_a.id);
  const Tensor& mb = value(mean_b.id);
  const Tensor& lb = value(log_std_b.id);
  if (!ma.same_shape(la) || !ma.same_shape(mb) || !ma.same_shape(lb))
    throw std::runtime_error("kl_diag_gaussian: shape mismatch");
  const double log_floor = std::log(std_floor);
  const size_t n = ma.size();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double lsa = std::max(la.data[i], log_floor);
    const double lsb = std::max(lb.data[i], log_floor);
    const double va = std::exp(2.0 * lsa);
    const double vb = std::exp(2.0 * lsb);
    const double d = ma.data[i] - mb.data[i];
    acc += lsb - lsa + (va + d * d) / (2.0 * vb) - 0.5;
  }
  const int32_t mai = mean_a.id, lai = log_std_a.id, mbi = mean_b.id,
                lbi = log_std_b.id;
  const int32_t id = push(
      Tensor::scalar(acc),
      needs_grad(mai) || needs_grad(lai) || needs_grad(mbi) || needs_grad(lbi),
      [mai, lai, mbi, lbi, log_floor, n](Tape& t, int32_t self) {
        const double g = t.grad(self).data[0];
        const Tensor& ma2 = t.value(mai);
        const Tensor& la2 = t.value(lai);
        const Tensor& mb2 = t.value(mbi);
        const Tensor& lb2 = t.value(lbi);
        for (size_t i = 0; i < n; ++i) {
          const double lsa = std::max(la2.data[i], log_floor);
          const double lsb = std::max(lb2.data[i], log_floor);
          const double va = std::exp(2.0 * lsa);
          const double vb = std::exp(2.0 * lsb);
          const double d = ma2.data[i] - mb2.data[i];
          if (t.needs_grad(mai)) t.grad_ref(mai).data[i] += g * d / vb;
          if (t.needs_grad(mbi)) t.grad_ref(mbi).data[i] -= g * d / vb;
          if (t.needs_grad(lai) && la2.data[i] > log_floor)
            t.grad_ref(lai).data[i] += g * (va / vb - 1.0);
          if (t.needs_grad(lbi) && lb2.data[i] > log_floor)
            t.grad_ref(lbi).data[i] += g * (1.0 - (va + d * d) / vb);
        }
      },
      "kl_diag_gaussian");
  return {this, id};
}

void Tape::backward(DiffScalar loss) {
  check_tape(loss);
  if (value(loss.id).size() != 1)
    throw std::runtime_error("backward: loss must be scalar");
  grad_ref(loss.id).data[0] += 1.0;
  for (int32_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.data.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

}  // namespace protolog
