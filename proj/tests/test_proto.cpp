#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "protolog/prototypes.hpp"

using namespace protolog;
using namespace protolog::testing;

namespace {

ParamStore proto_table(const std::vector<std::vector<double>>& means,
                       const std::vector<std::vector<double>>& log_stds) {
  const size_t K = means.size(), L = means[0].size();
  ParamStore store;
  Tensor mean({K, L}), ls({K, L}), labels({K});
  for (size_t i = 0; i < K; ++i) {
    labels.data[i] = static_cast<double>(i);
    for (size_t j = 0; j < L; ++j) {
      mean.data[i * L + j] = means[i][j];
      ls.data[i * L + j] = log_stds[i][j];
    }
  }
  store.set("prototype.mean", mean);
  store.set("prototype.log_std", ls);
  store.set("prototype.labels", labels);
  return store;
}

ModelConfig tiny_cfg(size_t K, size_t L) {
  ModelConfig cfg;
  cfg.num_prototypes = K;
  cfg.latent_dim = L;
  return cfg;
}

double gauss_logpdf(double z, double mu, double sd) {
  const double d = z - mu;
  return -0.5 * std::log(2 * M_PI) - std::log(sd) - 0.5 * d * d / (sd * sd);
}

}  // namespace

TEST_CASE("latent log density: closed-form anchors") {
  ParamStore store = proto_table({{0.0}}, {{0.0}});
  ModelConfig cfg = tiny_cfg(1, 1);
  Tape tape;
  ParamBinding b(tape, store);
  // standard normal mode
  DiffScalar d0 = latent_log_density(tape, b, cfg, 0, tape.constant(Tensor({1}, {0.0})));
  CHECK(d0.value() == doctest::Approx(-0.9189385332046727).epsilon(1e-12));
  // z = mu +- k sigma differs from the mode by exactly -k^2/2
  for (double k : {0.5, 1.0, 2.0, 3.0}) {
    DiffScalar dk =
        latent_log_density(tape, b, cfg, 0, tape.constant(Tensor({1}, {k})));
    CHECK(dk.value() - d0.value() == doctest::Approx(-k * k / 2).epsilon(1e-12));
    DiffScalar dmk =
        latent_log_density(tape, b, cfg, 0, tape.constant(Tensor({1}, {-k})));
    CHECK(dmk.value() == doctest::Approx(dk.value()).epsilon(1e-12));
  }
}

TEST_CASE("latent log density integrates to one (quadrature oracle)") {
  RngStream rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    const double mu = rng.next_uniform(-2, 2);
    const double ls = rng.next_uniform(-1, 0.7);
    ParamStore store = proto_table({{mu}}, {{ls}});
    ModelConfig cfg = tiny_cfg(1, 1);
    Tape tape;
    ParamBinding b(tape, store);
    const double sd = std::exp(ls);
    const double lo = mu - 8 * sd, hi = mu + 8 * sd;
    const int n = 4001;
    const double dz = (hi - lo) / (n - 1);
    double integral = 0.0;
    for (int i = 0; i < n; ++i) {
      const double z = lo + i * dz;
      DiffScalar ld =
          latent_log_density(tape, b, cfg, 0, tape.constant(Tensor({1}, {z})));
      const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
      integral += w * std::exp(ld.value()) * dz;
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("membership distribution properties") {
  // identical prototypes: exactly uniform
  ParamStore same = proto_table({{0, 0}, {0, 0}, {0, 0}}, {{0, 0}, {0, 0}, {0, 0}});
  ModelConfig cfg = tiny_cfg(3, 2);
  {
    Tape tape;
    ParamBinding b(tape, same);
    DiffTensor m = membership_distribution(tape, b, cfg,
                                           tape.constant(Tensor({2}, {0.3, -0.7})));
    for (double v : m.tensor().data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }

  // z at prototype 1's mean, all other means 10 sigma away: component > 0.999
  ParamStore spread = proto_table({{0, 0}, {10, 10}, {-10, 10}},
                                  {{0, 0}, {0, 0}, {0, 0}});
  {
    Tape tape;
    ParamBinding b(tape, spread);
    DiffTensor m =
        membership_distribution(tape, b, cfg, tape.constant(Tensor({2}, {0.0, 0.0})));
    CHECK(m.tensor().data[0] > 0.999);
  }

  // sums to one, shift invariance, temperature limit, argmax invariance
  RngStream rng(17);
  for (int rep = 0; rep < 30; ++rep) {
    Tape tape;
    std::vector<DiffScalar> ld, ld_shifted;
    const double c = rng.next_uniform(-5, 5);
    size_t argmax_ld = 0;
    double best = -1e300;
    for (int i = 0; i < 6; ++i) {
      const double v = rng.next_uniform(-30, 5);
      if (v > best) {
        best = v;
        argmax_ld = static_cast<size_t>(i);
      }
      ld.push_back(tape.constant_scalar(v));
      ld_shifted.push_back(tape.constant_scalar(v + c));
    }
    const double T = rng.next_uniform(0.2, 4.0);
    DiffTensor m = membership_from_log_densities(tape, ld, T);
    DiffTensor ms = membership_from_log_densities(tape, ld_shifted, T);
    double sum = 0.0;
    size_t argmax_m = 0;
    for (size_t i = 0; i < 6; ++i) {
      sum += m.tensor().data[i];
      if (m.tensor().data[i] > m.tensor().data[argmax_m]) argmax_m = i;
      CHECK(m.tensor().data[i] == doctest::Approx(ms.tensor().data[i]).epsilon(1e-9));
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(argmax_m == argmax_ld);

    DiffTensor hot = membership_from_log_densities(tape, ld, 1e9);
    for (double v : hot.tensor().data)
      CHECK(std::abs(v - 1.0 / 6) < 1e-6);
  }
}

TEST_CASE("prototype sampling") {
  ParamStore store = proto_table({{1.5, -2.0}}, {{-30.0, -30.0}});
  ModelConfig cfg = tiny_cfg(1, 2);
  // degenerate: std clamps at the floor, sample collapses to the mean
  {
    Tape tape;
    ParamBinding b(tape, store);
    Tensor eps({2}, {3.0, -3.0});
    DiffTensor z = sample_prototype(tape, b, cfg, 0, eps);
    CHECK(std::abs(z.tensor().data[0] - 1.5) < 1e-4);
    CHECK(std::abs(z.tensor().data[1] + 2.0) < 1e-4);
  }

  // determinism: same eps, same sample
  ParamStore st2 = proto_table({{0.5, 0.25}}, {{0.1, -0.3}});
  {
    Tape tape;
    ParamBinding b(tape, st2);
    RngStream r1(999), r2(999);
    Tensor e1({2}, {r1.next_gaussian(), r1.next_gaussian()});
    Tensor e2({2}, {r2.next_gaussian(), r2.next_gaussian()});
    DiffTensor z1 = sample_prototype(tape, b, cfg, 0, e1);
    DiffTensor z2 = sample_prototype(tape, b, cfg, 0, e2);
    CHECK(z1.tensor().data == z2.tensor().data);
  }

  // Monte-Carlo: sample mean within 4 sigma / sqrt(n) of the prototype mean
  {
    const double mu = 0.5, sd = std::exp(0.1);
    RngStream rng(31337);
    double acc = 0.0;
    const int n = 10000;
    Tape tape;
    ParamBinding b(tape, st2);
    for (int i = 0; i < n; ++i) {
      Tensor eps({2}, {rng.next_gaussian(), rng.next_gaussian()});
      DiffTensor z = sample_prototype(tape, b, cfg, 0, eps);
      acc += z.tensor().data[0];
    }
    CHECK(std::abs(acc / n - mu) < 4 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("KL divergence: anchors, positivity, Monte-Carlo oracle") {
  ModelConfig cfg = tiny_cfg(1, 1);
  // identical Gaussians: 0
  {
    ParamStore store = proto_table({{0.3}}, {{-0.2}});
    Tape tape;
    ParamBinding b(tape, store);
    DiffScalar kl = kl_prototype_posterior(tape, b, cfg, 0,
                                           tape.constant(Tensor({1}, {0.3})),
                                           tape.constant(Tensor({1}, {-0.2})));
    CHECK(kl.value() == doctest::Approx(0.0).epsilon(1e-12));
  }
  // N(0,1) vs N(1,1): 0.5
  {
    ParamStore store = proto_table({{0.0}}, {{0.0}});
    Tape tape;
    ParamBinding b(tape, store);
    DiffScalar kl = kl_prototype_posterior(tape, b, cfg, 0,
                                           tape.constant(Tensor({1}, {1.0})),
                                           tape.constant(Tensor({1}, {0.0})));
    CHECK(kl.value() == doctest::Approx(0.5).epsilon(1e-12));
  }
  // random pairs: KL >= 0, zero only for equal parameters, matches MC
  RngStream rng(93);
  for (int rep = 0; rep < 10; ++rep) {
    const double mp = rng.next_uniform(-2, 2), lp = rng.next_uniform(-0.8, 0.8);
    const double mq = rng.next_uniform(-2, 2), lq = rng.next_uniform(-0.8, 0.8);
    ParamStore store = proto_table({{mp}}, {{lp}});
    Tape tape;
    ParamBinding b(tape, store);
    DiffScalar kl = kl_prototype_posterior(tape, b, cfg, 0,
                                           tape.constant(Tensor({1}, {mq})),
                                           tape.constant(Tensor({1}, {lq})));
    CHECK(kl.value() >= 0.0);

    // MC estimate of E_p[log p - log q] over 1e5 samples, 3 standard errors
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    const double sp = std::exp(lp), sq = std::exp(lq);
    for (int i = 0; i < n; ++i) {
      const double z = mp + sp * rng.next_gaussian();
      const double d = gauss_logpdf(z, mp, sp) - gauss_logpdf(z, mq, sq);
      sum += d;
      sumsq += d * d;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sumsq / n - mean * mean) / n);
    CHECK_MESSAGE(std::abs(kl.value() - mean) < 3 * se + 1e-6,
                  "kl " << kl.value() << " mc " << mean << " se " << se);
  }
}

// Linear-Gaussian toy family (1-D latent): all quantities in closed form.
namespace toy {

struct Instance {
  std::vector<double> a, b, x;  // decoder X = a z + b + eps, observed x
  double mu_p, ls_p;            // prototype prior
  size_t K = 3;                 // digit prior 1/K
};

Instance random_instance(RngStream& rng, size_t n) {
  Instance t;
  t.a.resize(n);
  t.b.resize(n);
  t.x.resize(n);
  for (auto v : {0}) (void)v;
  for (size_t i = 0; i < n; ++i) {
    t.a[i] = rng.next_uniform(-1.5, 1.5);
    t.b[i] = rng.next_uniform(-1, 1);
    t.x[i] = rng.next_uniform(-2, 2);
  }
  t.mu_p = rng.next_uniform(-1, 1);
  t.ls_p = rng.next_uniform(-0.7, 0.7);
  return t;
}

// Exact log p(X, d) via the Gaussian marginal (Sherman-Morrison for the
// rank-one covariance I + sigma_p^2 a a^T).
double exact_log_joint(const Instance& t) {
  const size_t n = t.a.size();
  const double vp = std::exp(2 * t.ls_p);
  double a2 = 0.0;
  for (double v : t.a) a2 += v * v;
  std::vector<double> r(n);
  for (size_t i = 0; i < n; ++i) r[i] = t.x[i] - (t.a[i] * t.mu_p + t.b[i]);
  double r2 = 0.0, ar = 0.0;
  for (size_t i = 0; i < n; ++i) {
    r2 += r[i] * r[i];
    ar += t.a[i] * r[i];
  }
  const double denom = 1.0 + vp * a2;
  const double quad = r2 - vp * ar * ar / denom;
  const double logdet = std::log(denom);
  return -std::log(static_cast<double>(t.K)) -
         0.5 * (n * std::log(2 * M_PI) + logdet + quad);
}

// Exact ELBO for a diagonal q(z|X) = N(mu_q, exp(2 ls_q)):
//   log p(d) + E_q[log p(X|z)] - KL(q || p(z|d)).
double exact_elbo(const Instance& t, double mu_q, double ls_q) {
  const size_t n = t.a.size();
  const double vq = std::exp(2 * ls_q);
  double a2 = 0.0, res2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double r = t.x[i] - (t.a[i] * mu_q + t.b[i]);
    res2 += r * r;
    a2 += t.a[i] * t.a[i];
  }
  const double rec = -0.5 * (n * std::log(2 * M_PI) + res2 + vq * a2);
  const double vp = std::exp(2 * t.ls_p);
  const double kl =
      t.ls_p - ls_q + (vq + (mu_q - t.mu_p) * (mu_q - t.mu_p)) / (2 * vp) - 0.5;
  return -std::log(static_cast<double>(t.K)) + rec - kl;
}

// Exact posterior of z given X (precision form); diagonal because L = 1.
void posterior(const Instance& t, double& mu, double& ls) {
  const double vp = std::exp(2 * t.ls_p);
  double a2 = 0.0, ar = 0.0;
  for (size_t i = 0; i < t.a.size(); ++i) {
    a2 += t.a[i] * t.a[i];
    ar += t.a[i] * (t.x[i] - t.b[i]);
  }
  const double lambda = 1.0 / vp + a2;
  mu = (ar + t.mu_p / vp) / lambda;
  ls = 0.5 * std::log(1.0 / lambda);
}

}  // namespace toy

TEST_CASE("ELBO bound on the linear-Gaussian toy family") {
  RngStream rng(555);
  int tight_checked = 0;
  for (int rep = 0; rep < 100; ++rep) {
    toy::Instance t = toy::random_instance(rng, 1 + rep % 4);
    const double logp = toy::exact_log_joint(t);

    // arbitrary q never exceeds the exact log joint
    const double mu_q = rng.next_uniform(-2, 2);
    const double ls_q = rng.next_uniform(-1, 1);
    const double elbo_q = toy::exact_elbo(t, mu_q, ls_q);
    CHECK(elbo_q <= logp + 1e-9);

    // the KL term used by exact_elbo matches the production op
    {
      ParamStore store = proto_table({{t.mu_p}}, {{t.ls_p}});
      ModelConfig cfg = tiny_cfg(1, 1);
      Tape tape;
      ParamBinding b(tape, store);
      DiffScalar kl = tape.kl_diag_gaussian(
          tape.constant(Tensor({1}, {mu_q})), tape.constant(Tensor({1}, {ls_q})),
          tape.constant(Tensor({1}, {t.mu_p})), tape.constant(Tensor({1}, {t.ls_p})),
          cfg.std_floor);
      const double vq = std::exp(2 * ls_q), vp = std::exp(2 * t.ls_p);
      const double kl_closed =
          t.ls_p - ls_q + (vq + (mu_q - t.mu_p) * (mu_q - t.mu_p)) / (2 * vp) - 0.5;
      CHECK(kl.value() == doctest::Approx(kl_closed).epsilon(1e-10));
    }

    // q = true posterior: the bound is tight
    double mu_star = 0, ls_star = 0;
    toy::posterior(t, mu_star, ls_star);
    const double elbo_star = toy::exact_elbo(t, mu_star, ls_star);
    CHECK(elbo_star <= logp + 1e-9);
    CHECK(logp - elbo_star < 1e-6);
    ++tight_checked;
  }
  CHECK(tight_checked == 100);
}

TEST_CASE("sampled elbo: perfect autoencoder anchor and MC consistency") {
  // K = 1, decoder constant 0.5 image, encoder posterior equals the prior:
  // ELBO = log 1 + log N(X | X, I) = -(n/2) log 2pi exactly, KL = 0.
  ModelConfig cfg;
  cfg.num_prototypes = 1;
  cfg.latent_dim = 2;
  cfg.hidden = 4;
  cfg.img_h = 2;
  cfg.img_w = 2;
  ParamStore store;
  RngStream rng(1);
  init_mlp_params(store, "encoder", cfg.encoder_spec(), rng);
  init_mlp_params(store, "decoder", cfg.decoder_spec(), rng);
  for (const char* name : {"encoder.W0", "encoder.W1", "encoder.b0", "encoder.b1",
                           "decoder.W0", "decoder.W1", "decoder.b0", "decoder.b1"}) {
    Tensor& t = store.get(name);
    for (double& v : t.data) v = 0.0;
  }
  store.set("prototype.mean", Tensor::zeros({1, 2}));
  store.set("prototype.log_std", Tensor::zeros({1, 2}));
  Tensor labels({1});
  labels.data[0] = 0;
  store.set("prototype.labels", labels);

  Tensor X = Tensor::full({4}, 0.5);
  Tape tape;
  ParamBinding b(tape, store);
  Tensor eps({2}, {0.7, -0.3});
  DiffScalar e = elbo(tape, b, cfg, store, X, 0, eps);
  CHECK(e.value() == doctest::Approx(-2.0 * std::log(2 * M_PI)).epsilon(1e-12));

  // With a non-trivial decoder, averaged one-sample elbos converge to the
  // analytic expectation for a linear readout; here just check finiteness
  // and that gradients flow to every parameter group.
  RngStream r2(2);
  ParamStore store2;
  init_mlp_params(store2, "encoder", cfg.encoder_spec(), r2);
  init_mlp_params(store2, "decoder", cfg.decoder_spec(), r2);
  Tensor m({1, 2}, {0.3, -0.2});
  store2.set("prototype.mean", m);
  store2.set("prototype.log_std", Tensor::zeros({1, 2}));
  store2.set("prototype.labels", labels);
  Tape t2;
  ParamBinding b2(t2, store2);
  Tensor eps2({2}, {0.1, 0.4});
  DiffScalar e2 = elbo(t2, b2, cfg, store2, X, 0, eps2);
  t2.backward(e2);
  auto grads = b2.gradients();
  CHECK(grads.count("encoder.W0") == 1);
  CHECK(grads.count("decoder.W1") == 1);
  CHECK(grads.count("prototype.mean") == 1);
  bool any_nonzero = false;
  for (double v : grads["prototype.mean"].data) any_nonzero |= v != 0.0;
  CHECK(any_nonzero);

  CHECK_THROWS(elbo(t2, b2, cfg, store2, X, 7, eps2));  // unknown digit label
}

TEST_CASE("elbo gradient matches finite differences through the whole graph") {
  ModelConfig cfg;
  cfg.num_prototypes = 2;
  cfg.latent_dim = 2;
  cfg.hidden = 3;
  cfg.img_h = 2;
  cfg.img_w = 2;
  ParamStore store;
  init_model_params(store, cfg, 77);
  RngStream rng(5);
  Tensor X({4});
  for (double& v : X.data) v = rng.next_uniform(0.1, 0.9);
  Tensor eps({2}, {0.33, -1.1});

  auto eval = [&](const ParamStore& s) {
    Tape tape;
    ParamBinding b(tape, const_cast<ParamStore&>(s));
    return elbo(tape, b, cfg, s, X, 1, eps).value();
  };

  Tape tape;
  ParamBinding b(tape, store);
  DiffScalar e = elbo(tape, b, cfg, store, X, 1, eps);
  tape.backward(e);
  auto grads = b.gradients();

  RngStream pick(99);
  for (const auto& [name, g] : grads) {
    for (int probe = 0; probe < 3; ++probe) {
      const size_t i =
          static_cast<size_t>(pick.next_int(0, static_cast<int64_t>(g.size()) - 1));
      const double h = 1e-5;
      ParamStore up = store, down = store;
      up.get(name).data[i] += h;
      down.get(name).data[i] -= h;
      const double fd = (eval(up) - eval(down)) / (2 * h);
      CHECK_MESSAGE(grad_close(g.data[i], fd, 1e-4, 1e-7),
                    name << "[" << i << "]: ad " << g.data[i] << " fd " << fd);
    }
  }
}
