#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "protolog/nn.hpp"
#include "protolog/tape.hpp"

using namespace protolog;
using namespace protolog::testing;

namespace {

// Checks d(output)/d(x[i]) for every coordinate of a leaf against central
// differences, 50 random instances per op unless stated otherwise.
void check_unary_op(const std::function<DiffVal(Tape&, DiffVal)>& op,
                    const std::function<double(const Tensor&)>& scalar_of_input,
                    size_t dim, uint64_t seed, double lo = -2.0, double hi = 2.0) {
  RngStream rng(seed);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x({dim});
    for (double& v : x.data) v = rng.next_uniform(lo, hi);
    Tape tape;
    DiffVal xv = tape.leaf(x, true);
    DiffVal y = op(tape, xv);
    DiffScalar out = tape.sum(y);
    tape.backward(out);
    const Tensor& g = tape.grad(xv.id);
    for (size_t i = 0; i < dim; ++i) {
      const double fd = central_diff(scalar_of_input, x, i);
      REQUIRE_MESSAGE(grad_close(g.data[i], fd, 1e-4, 1e-7),
                      "unary op grad mismatch: ad=" << g.data[i] << " fd=" << fd);
    }
  }
}

}  // namespace

TEST_CASE("tensor basics and finiteness guard") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.shape_str() == "[2,3]");
  t.at(1, 2) = 5.0;
  CHECK(t.data[5] == 5.0);
  Tape tape;
  DiffVal x = tape.leaf(Tensor({1}, {-1.0}), true);
  CHECK_THROWS(tape.log(x));  // log(-1) = nan must be rejected
}

TEST_CASE("elementwise op gradients match central differences") {
  check_unary_op([](Tape& t, DiffVal x) { return t.tanh(x); },
                 [](const Tensor& x) {
                   double s = 0;
                   for (double v : x.data) s += std::tanh(v);
                   return s;
                 },
                 5, 11);
  check_unary_op([](Tape& t, DiffVal x) { return t.sigmoid(x); },
                 [](const Tensor& x) {
                   double s = 0;
                   for (double v : x.data) s += 1.0 / (1.0 + std::exp(-v));
                   return s;
                 },
                 5, 12);
  check_unary_op([](Tape& t, DiffVal x) { return t.exp(x); },
                 [](const Tensor& x) {
                   double s = 0;
                   for (double v : x.data) s += std::exp(v);
                   return s;
                 },
                 5, 13);
  check_unary_op([](Tape& t, DiffVal x) { return t.log(x); },
                 [](const Tensor& x) {
                   double s = 0;
                   for (double v : x.data) s += std::log(v);
                   return s;
                 },
                 5, 14, 0.1, 3.0);
  check_unary_op([](Tape& t, DiffVal x) { return t.softmax(x); },
                 [](const Tensor&) { return 1.0; },  // softmax sums to 1
                 6, 15);
}

TEST_CASE("softmax gradient against a weighted readout") {
  RngStream rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x = random_tensor({7}, rng);
    Tensor w = random_tensor({7}, rng);
    auto f = [&](const Tensor& xin) {
      double mx = xin.data[0];
      for (double v : xin.data) mx = std::max(mx, v);
      double z = 0;
      for (double v : xin.data) z += std::exp(v - mx);
      double s = 0;
      for (size_t i = 0; i < xin.size(); ++i)
        s += w.data[i] * std::exp(xin.data[i] - mx) / z;
      return s;
    };
    Tape tape;
    DiffVal xv = tape.leaf(x, true);
    DiffVal y = tape.softmax(xv);
    DiffScalar out = tape.sum(tape.mul(y, tape.constant(w)));
    tape.backward(out);
    for (size_t i = 0; i < x.size(); ++i) {
      const double fd = central_diff(f, x, i);
      CHECK_MESSAGE(grad_close(tape.grad(xv.id).data[i], fd, 1e-4, 1e-7),
                    "softmax grad vs fd");
    }
  }
}

TEST_CASE("affine gradients for W, x and b") {
  RngStream rng(21);
  for (int rep = 0; rep < 50; ++rep) {
    const size_t m = 4, n = 3;
    Tensor W = random_tensor({m, n}, rng);
    Tensor x = random_tensor({n}, rng);
    Tensor b = random_tensor({m}, rng);
    auto run = [&](const Tensor& Wv, const Tensor& xv, const Tensor& bv) {
      double s = 0;
      for (size_t r = 0; r < m; ++r) {
        double acc = bv.data[r];
        for (size_t c = 0; c < n; ++c) acc += Wv.data[r * n + c] * xv.data[c];
        s += std::tanh(acc);
      }
      return s;
    };
    Tape tape;
    DiffVal Wv = tape.leaf(W, true);
    DiffVal xv = tape.leaf(x, true);
    DiffVal bv = tape.leaf(b, true);
    DiffScalar out = tape.sum(tape.tanh(tape.affine(Wv, xv, bv)));
    tape.backward(out);
    for (size_t i = 0; i < W.size(); ++i) {
      const double fd = central_diff([&](const Tensor& t) { return run(t, x, b); }, W, i);
      CHECK(grad_close(tape.grad(Wv.id).data[i], fd, 1e-4, 1e-7));
    }
    for (size_t i = 0; i < x.size(); ++i) {
      const double fd = central_diff([&](const Tensor& t) { return run(W, t, b); }, x, i);
      CHECK(grad_close(tape.grad(xv.id).data[i], fd, 1e-4, 1e-7));
    }
    for (size_t i = 0; i < b.size(); ++i) {
      const double fd = central_diff([&](const Tensor& t) { return run(W, x, t); }, b, i);
      CHECK(grad_close(tape.grad(bv.id).data[i], fd, 1e-4, 1e-7));
    }
  }
}

TEST_CASE("mse and bce gradients") {
  RngStream rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor a = random_tensor({6}, rng);
    Tensor b = random_tensor({6}, rng);
    Tape tape;
    DiffVal av = tape.leaf(a, true);
    DiffVal bv = tape.leaf(b, true);
    DiffScalar m = tape.mse(av, bv);
    tape.backward(m);
    auto f = [&](const Tensor& t) { return mean_squared_error(t, b); };
    for (size_t i = 0; i < a.size(); ++i)
      CHECK(grad_close(tape.grad(av.id).data[i], central_diff(f, a, i), 1e-4, 1e-7));
  }
  for (int rep = 0; rep < 50; ++rep) {
    const double p = rng.next_uniform(0.05, 0.95);
    const double target = rep % 2 ? 1.0 : 0.0;
    Tape tape;
    DiffScalar pv = tape.scalar_leaf(p);
    DiffScalar l = tape.bce(pv, target, 1e-7);
    tape.backward(l);
    auto f = [&](const Tensor& t) {
      const double q = t.data[0];
      return -(target * std::log(q) + (1 - target) * std::log(1 - q));
    };
    CHECK(grad_close(tape.grad(pv.id).data[0],
                     central_diff(f, Tensor::scalar(p), 0), 1e-4, 1e-7));
  }
}

TEST_CASE("gaussian log density, sample and KL gradients") {
  RngStream rng(41);
  const double floor = 1e-6;
  for (int rep = 0; rep < 50; ++rep) {
    const size_t L = 4;
    Tensor z = random_tensor({L}, rng);
    Tensor mu = random_tensor({L}, rng);
    Tensor ls = random_tensor({L}, rng, 0.5);
    auto dens = [&](const Tensor& zv, const Tensor& mv, const Tensor& lv) {
      double s = 0;
      for (size_t i = 0; i < L; ++i) {
        const double sd = std::max(std::exp(std::max(lv.data[i], std::log(floor))),
                                   floor);
        const double d = zv.data[i] - mv.data[i];
        s += -0.5 * std::log(2 * M_PI) - std::log(sd) - 0.5 * d * d / (sd * sd);
      }
      return s;
    };
    Tape tape;
    DiffVal zv = tape.leaf(z, true);
    DiffVal mv = tape.leaf(mu, true);
    DiffVal lv = tape.leaf(ls, true);
    tape.backward(tape.gaussian_log_density(zv, mv, lv, floor));
    for (size_t i = 0; i < L; ++i) {
      CHECK(grad_close(tape.grad(zv.id).data[i],
                       central_diff([&](const Tensor& t) { return dens(t, mu, ls); }, z, i),
                       1e-4, 1e-7));
      CHECK(grad_close(tape.grad(mv.id).data[i],
                       central_diff([&](const Tensor& t) { return dens(z, t, ls); }, mu, i),
                       1e-4, 1e-7));
      CHECK(grad_close(tape.grad(lv.id).data[i],
                       central_diff([&](const Tensor& t) { return dens(z, mu, t); }, ls, i),
                       1e-4, 1e-7));
    }
  }
  for (int rep = 0; rep < 50; ++rep) {
    const size_t L = 3;
    Tensor ma = random_tensor({L}, rng), la = random_tensor({L}, rng, 0.4);
    Tensor mb = random_tensor({L}, rng), lb = random_tensor({L}, rng, 0.4);
    auto kl = [&](const Tensor& a1, const Tensor& a2, const Tensor& b1, const Tensor& b2) {
      double s = 0;
      for (size_t i = 0; i < L; ++i) {
        const double sa = std::exp(a2.data[i]), sb = std::exp(b2.data[i]);
        const double d = a1.data[i] - b1.data[i];
        s += std::log(sb / sa) + (sa * sa + d * d) / (2 * sb * sb) - 0.5;
      }
      return s;
    };
    Tape tape;
    DiffVal mav = tape.leaf(ma, true), lav = tape.leaf(la, true);
    DiffVal mbv = tape.leaf(mb, true), lbv = tape.leaf(lb, true);
    tape.backward(tape.kl_diag_gaussian(mav, lav, mbv, lbv, floor));
    for (size_t i = 0; i < L; ++i) {
      CHECK(grad_close(tape.grad(mav.id).data[i],
                       central_diff([&](const Tensor& t) { return kl(t, la, mb, lb); }, ma, i),
                       1e-4, 1e-7));
      CHECK(grad_close(tape.grad(lav.id).data[i],
                       central_diff([&](const Tensor& t) { return kl(ma, t, mb, lb); }, la, i),
                       1e-4, 1e-7));
      CHECK(grad_close(tape.grad(mbv.id).data[i],
                       central_diff([&](const Tensor& t) { return kl(ma, la, t, lb); }, mb, i),
                       1e-4, 1e-7));
      CHECK(grad_close(tape.grad(lbv.id).data[i],
                       central_diff([&](const Tensor& t) { return kl(ma, la, mb, t); }, lb, i),
                       1e-4, 1e-7));
    }
  }
  // Reparameterised sample: gradients flow through mean and log-std.
  for (int rep = 0; rep < 20; ++rep) {
    const size_t L = 3;
    Tensor mu = random_tensor({L}, rng), ls = random_tensor({L}, rng, 0.4);
    Tensor eps = random_tensor({L}, rng);
    auto f = [&](const Tensor& mv, const Tensor& lv) {
      double s = 0;
      for (size_t i = 0; i < L; ++i)
        s += std::pow(mv.data[i] + std::exp(lv.data[i]) * eps.data[i], 2);
      return s;
    };
    Tape tape;
    DiffVal mv = tape.leaf(mu, true), lv = tape.leaf(ls, true);
    DiffVal zv = tape.gaussian_sample(mv, lv, eps, floor);
    tape.backward(tape.sum(tape.mul(zv, zv)));
    for (size_t i = 0; i < L; ++i) {
      CHECK(grad_close(tape.grad(mv.id).data[i],
                       central_diff([&](const Tensor& t) { return f(t, ls); }, mu, i),
                       1e-4, 1e-7));
      CHECK(grad_close(tape.grad(lv.id).data[i],
                       central_diff([&](const Tensor& t) { return f(mu, t); }, ls, i),
                       1e-4, 1e-7));
    }
  }
}

TEST_CASE("mlp forward matches a straight-line re-implementation") {
  RngStream rng(55);
  MlpSpec spec = {{6, 5, Activation::Tanh}, {5, 4, Activation::Sigmoid}};
  ParamStore store;
  init_mlp_params(store, "net", spec, rng);
  Tensor x = random_tensor({6}, rng);

  Tape tape;
  ParamBinding binding(tape, store);
  DiffTensor out = mlp_forward(tape, binding, "net", spec, tape.constant(x));

  // Independent straight-line evaluation of the same affine chain.
  std::vector<double> h(x.data.begin(), x.data.end());
  for (size_t l = 0; l < spec.size(); ++l) {
    const Tensor& W = store.get("net.W" + std::to_string(l));
    const Tensor& b = store.get("net.b" + std::to_string(l));
    std::vector<double> nh(spec[l].out);
    for (size_t r = 0; r < spec[l].out; ++r) {
      double acc = b.data[r];
      for (size_t c = 0; c < spec[l].in; ++c) acc += W.at(r, c) * h[c];
      nh[r] = spec[l].act == Activation::Tanh ? std::tanh(acc)
              : spec[l].act == Activation::Sigmoid ? 1.0 / (1.0 + std::exp(-acc))
                                                   : acc;
    }
    h = std::move(nh);
  }
  for (size_t i = 0; i < h.size(); ++i)
    CHECK(std::abs(out.tensor().data[i] - h[i]) < 1e-12);
}

TEST_CASE("identity and zero network sanity") {
  // 1-layer linear net with identity weights reproduces its input.
  ParamStore store;
  Tensor W({3, 3});
  for (size_t i = 0; i < 3; ++i) W.at(i, i) = 1.0;
  store.set("id.W0", W);
  store.set("id.b0", Tensor::zeros({3}));
  Tape tape;
  ParamBinding binding(tape, store);
  MlpSpec spec = {{3, 3, Activation::None}};
  Tensor x({3}, {0.5, -1.0, 2.0});
  DiffTensor y = mlp_forward(tape, binding, "id", spec, tape.constant(x));
  for (size_t i = 0; i < 3; ++i) CHECK(y.tensor().data[i] == doctest::Approx(x.data[i]));

  // Zero-weight net with sigmoid output gives all 0.5.
  ParamStore z;
  z.set("z.W0", Tensor::zeros({4, 3}));
  z.set("z.b0", Tensor::zeros({4}));
  Tape tape2;
  ParamBinding b2(tape2, z);
  MlpSpec spec2 = {{3, 4, Activation::Sigmoid}};
  DiffTensor y2 = mlp_forward(tape2, b2, "z", spec2, tape2.constant(x));
  for (double v : y2.tensor().data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("backward fundamentals") {
  // d(w*x)/dw = x
  Tape tape;
  DiffScalar w = tape.scalar_leaf(2.0);
  DiffScalar x = tape.constant_scalar(3.0);
  tape.backward(tape.mul(w, x));
  CHECK(tape.grad(w.id).data[0] == doctest::Approx(3.0));

  // loss = sigmoid(w)^2 at w=0: d = 2*sigma(0)*sigma'(0) = 0.25
  Tape t2;
  DiffScalar w2 = t2.scalar_leaf(0.0);
  DiffScalar s = t2.sigmoid(w2);
  t2.backward(t2.mul(s, s));
  CHECK(t2.grad(w2.id).data[0] == doctest::Approx(0.25));

  // Unreached parameters keep a zero gradient.
  Tape t3;
  DiffScalar used = t3.scalar_leaf(1.0);
  DiffScalar unused = t3.scalar_leaf(5.0);
  t3.backward(t3.mul(used, used));
  CHECK(t3.grad(unused.id).data.empty());

  // Non-scalar loss is rejected.
  Tape t4;
  DiffVal vec = t4.leaf(Tensor({2}, {1.0, 2.0}), true);
  CHECK_THROWS(t4.backward(vec));
}

TEST_CASE("adam optimizer behavior") {
  // Zero gradient: parameters unchanged.
  ParamStore store;
  store.set("p", Tensor({2}, {1.0, -2.0}));
  adam_step(store, {{"p", Tensor::zeros({2})}}, AdamConfig{});
  CHECK(store.get("p").data[0] == doctest::Approx(1.0));
  CHECK(store.get("p").data[1] == doctest::Approx(-2.0));

  // One step with constant gradient moves against the sign, bounded by lr.
  ParamStore s2;
  s2.set("p", Tensor({1}, {0.7}));
  AdamConfig cfg;
  cfg.lr = 0.05;
  adam_step(s2, {{"p", Tensor({1}, {4.2})}}, cfg);
  const double delta = s2.get("p").data[0] - 0.7;
  CHECK(delta < 0.0);
  CHECK(std::abs(delta) <= cfg.lr + 1e-12);

  // Quadratic bowl f(w) = w^2: 200 steps with lr 0.05 converge to |w| < 1e-2.
  ParamStore s3;
  s3.set("w", Tensor({1}, {1.5}));
  AdamConfig c3;
  c3.lr = 0.05;
  for (int i = 0; i < 200; ++i) {
    const double w = s3.get("w").data[0];
    adam_step(s3, {{"w", Tensor({1}, {2.0 * w})}}, c3);
  }
  CHECK(std::abs(s3.get("w").data[0]) < 1e-2);

  // NaN gradient aborts with a diagnostic.
  ParamStore s4;
  s4.set("p", Tensor({1}, {0.0}));
  CHECK_THROWS_WITH_AS(adam_step(s4, {{"p", Tensor({1}, {NAN})}}, AdamConfig{}),
                       doctest::Contains("non-finite gradient"), std::runtime_error);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  RngStream rng(99);
  ParamStore store;
  store.set("a.W0", random_tensor({3, 2}, rng));
  store.set("a.b0", random_tensor({3}, rng));
  store.set("prototype.mean", random_tensor({2, 4}, rng));
  store.meta()["cfg.latent_dim"] = "4";
  store.adam_step() = 17;
  store.adam_state()["a.W0"].m = random_tensor({3, 2}, rng);
  store.adam_state()["a.W0"].v = random_tensor({3, 2}, rng);

  const std::string once = checkpoint_to_string(store);
  ParamStore loaded = checkpoint_from_string(once);
  const std::string twice = checkpoint_to_string(loaded);
  CHECK(once == twice);
  CHECK(loaded.adam_step() == 17);
  CHECK(loaded.get("prototype.mean").data == store.get("prototype.mean").data);
  CHECK(loaded.meta().at("cfg.latent_dim") == "4");
}

TEST_CASE("determinism: same seed, same trajectory bits") {
  auto run = [](uint64_t seed) {
    RngStream rng(seed);
    MlpSpec spec = {{4, 3, Activation::Tanh}, {3, 1, Activation::Sigmoid}};
    ParamStore store;
    init_mlp_params(store, "n", spec, rng);
    std::vector<double> losses;
    for (int step = 0; step < 10; ++step) {
      Tape tape;
      ParamBinding binding(tape, store);
      Tensor x = random_tensor({4}, rng);
      DiffTensor out = mlp_forward(tape, binding, "n", spec, tape.constant(x));
      DiffScalar loss = tape.bce(tape.pick(out, 0), 1.0, 1e-7);
      losses.push_back(loss.value());
      tape.backward(loss);
      adam_step(store, binding.gradients(), AdamConfig{});
    }
    return losses;
  };
  const auto a = run(123);
  const auto b = run(123);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
