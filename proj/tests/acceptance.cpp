// Acceptance battery: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "lebm/checkpoint.hpp"
#include "lebm/diagnostics.hpp"
#include "lebm/error.hpp"
#include "lebm/eval.hpp"
#include "lebm/rng.hpp"
#include "lebm/sampler.hpp"
#include "lebm/session.hpp"
#include "lebm/tape.hpp"
#include "lebm/trainer.hpp"

namespace fs = std::filesystem;
using namespace lebm;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail, double seconds) {
  if (!pass) ++failures;
  fmt::print("{} {:>2} {:<28} {} [{:.1f}s]\n", pass ? "PASS" : "FAIL", id, name, detail, seconds);
  std::fflush(stdout);
}

template <typename Fn>
void timed(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn([t0] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); });
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<int> random_widths(Rng& rng, int in, int out) {
  std::vector<int> w{in};
  const std::size_t depth = 1 + rng.index(2);
  for (std::size_t i = 0; i < depth; ++i) w.push_back(3 + static_cast<int>(rng.index(10)));
  w.push_back(out);
  return w;
}

ModelSpec random_spec(std::uint64_t seed) {
  Rng rng(seed, Stream::Diagnostics, {0xacce});
  ModelSpec s;
  s.data_dim = 2 + static_cast<int>(rng.index(5));
  s.latent_dim = 1 + static_cast<int>(rng.index(4));
  s.num_classes = 2 + static_cast<int>(rng.index(4));
  const auto hidden = [&] {
    std::vector<int> w = random_widths(rng, 0, 0);
    return std::vector<int>(w.begin() + 1, w.end() - 1);
  };
  s.prior_hidden = hidden();
  s.encoder_hidden = hidden();
  s.decoder_hidden = hidden();
  s.net_activation = seed % 2 ? Activation::Relu : Activation::Tanh;
  s.decoder = seed % 3 == 2 ? DecoderKind::Multinomial : DecoderKind::Gaussian;
  s.sigma2 = 0.1 + 0.1 * static_cast<double>(rng.index(5));
  return s;
}

// Random biases so no unit sits at a symmetric point.
Model random_model(std::uint64_t seed) {
  Model m = Model::create(random_spec(seed), seed);
  Rng rng(seed, Stream::Diagnostics, {0xb1a5});
  for (Mlp* net : {&m.prior.f, &m.posterior.encoder, &m.decoder.generator})
    for (Layer& l : net->layers()) l.bias = 0.1 * rng.normal_matrix(l.bias.rows(), 1);
  return m;
}

double posterior_score_error(const Model& m, std::uint64_t seed) {
  Rng rng(seed, Stream::Diagnostics, {5});
  Matrix z = rng.normal_matrix(4, m.spec.latent_dim);
  Matrix x = rng.normal_matrix(4, m.spec.data_dim);
  if (m.spec.decoder == DecoderKind::Multinomial) x = x.array().abs().round();
  const LossAndGrad fn = [&] {
    const double value =
        marginal_energy(m.prior, z).sum() - 0.5 * z.squaredNorm() + decode_log_likelihood(m.decoder, z, x).sum();
    return std::make_pair(value, ParamGrads{posterior_score(m.prior, m.decoder, z, x)});
  };
  return finite_diff_check(fn, {&z}, 1e-5, 200, seed);
}

void criterion_gradients() {
  timed([](auto elapsed) {
    double psi = 0, sup = 0, energy = 0, score = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Model m = random_model(seed);
      psi = std::max(psi, check_psi_gradient(m, seed).value);
      sup = std::max(sup, check_supervised_gradient(m, seed).value);
      energy = std::max(energy, check_prior_energy_gradient(m, seed).value);
      score = std::max({score, check_score(m, seed).value, posterior_score_error(m, seed)});
    }
    const double worst = std::max({psi, sup, energy, score});
    report(1, "gradient-correctness", worst <= 1e-5,
           fmt::format("psi {:.2e} supervised {:.2e} energy {:.2e} scores {:.2e} (tol 1e-5, 20 configs)", psi, sup,
                       energy, score),
           elapsed());
  });
}

void criterion_energy_identity() {
  timed([](auto elapsed) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed, Stream::Diagnostics, {0x1d});
      const int d = 1 + static_cast<int>(rng.index(4));
      const int k = 2 + static_cast<int>(rng.index(6));
      EbmPrior p{Mlp(random_widths(rng, d, k), seed % 2 ? Activation::Relu : Activation::Tanh)};
      p.f.xavier_init(rng);
      for (Layer& l : p.f.layers()) l.bias = 0.5 * rng.normal_matrix(l.bias.rows(), 1);
      const Matrix z = 2.0 * rng.normal_matrix(1, d);

      Tape tape;
      const Tensor zt = tape.variable(z);
      tape.backward(ad::sum(marginal_energy(p.f.bind(tape, false), zt)));
      const Matrix autodiff = zt.grad();

      const Matrix logits = ebm_logits(p, z);
      const Eigen::RowVectorXd w = (logits.array() - logits.maxCoeff()).exp().matrix();
      Matrix expected = Matrix::Zero(1, d);
      for (int c = 0; c < k; ++c) {
        Tape t;
        const Tensor zc = t.variable(z);
        t.backward(ad::slice_cols(ebm_logits(p.f.bind(t, false), zc), c, 1));
        expected += (w(c) / w.sum()) * zc.grad();
      }
      worst = std::max(worst, (autodiff - expected).cwiseAbs().maxCoeff());
    }
    report(2, "energy-gradient-identity", worst <= 1e-10, fmt::format("max |diff| {:.2e} (tol 1e-10, 100 cases)", worst),
           elapsed());
  });
}

void criterion_ula() {
  timed([](auto elapsed) {
    std::string detail;
    bool pass = true;
    for (const auto& [s, tol] : {std::pair{0.6, 0.05}, std::pair{0.1, 0.03}}) {
      const double target = s * s / (1.0 - std::pow(1.0 - s * s / 2.0, 2));
      LongRunConfig lr;
      lr.chains = 500;
      lr.burn_in = static_cast<int>(10.0 / (s * s));
      lr.samples_per_chain = 200;
      lr.thin = static_cast<int>(std::ceil(2.0 / (s * s)));
      lr.step_size = s;
      lr.seed = 2024;
      const Matrix z = sample_prior_long_run(EbmPrior{Mlp({2, 8, 3}, Activation::Tanh)}, lr);
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double mean = z.col(j).mean();
        const double var = (z.col(j).array() - mean).square().sum() / static_cast<double>(z.rows() - 1);
        pass = pass && std::abs(var - target) <= tol;
        detail += fmt::format("s={} var[{}]={:.4f} ", s, j, var);
      }
      detail += fmt::format("(target {:.4f} ± {}) ", target, tol);
    }
    report(3, "ula-stationarity", pass, detail + "1e5 samples per coordinate", elapsed());
  });
}

void criterion_quadrature() {
  timed([](auto elapsed) {
    const EbmPrior prior = toy_prior_2d(7);
    LongRunConfig lr;
    lr.chains = 10000;
    lr.burn_in = 4000;
    lr.samples_per_chain = 100;
    lr.thin = 100;
    lr.step_size = 0.05;
    lr.seed = 7;
    const double tv = histogram_tv_distance(sample_prior_long_run(prior, lr), prior, 50, -4.0, 4.0);
    double log_z_err = 0.0;
    for (int k : {1, 2, 3, 10}) log_z_err = std::max(log_z_err, check_log_z_constant(k).value);
    report(4, "quadrature-consistency", tv <= 0.05 && log_z_err <= 1e-6,
           fmt::format("TV {:.4f} (tol 0.05, 1e6 samples, 50x50 bins) |log Z - log K| {:.1e} (tol 1e-6)", tv,
                       log_z_err),
           elapsed());
  });
}

void criterion_divergence() {
  timed([](auto elapsed) {
    double kl = 0.0, grad = 0.0;
    bool pass = true;
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      const auto r = check_divergence_perturbation(seed);
      kl = std::max(kl, r[0].value);
      grad = std::max(grad, r[1].value);
      pass = pass && r[0].pass && r[1].pass;
    }
    report(5, "divergence-perturbation", pass,
           fmt::format("max perturbation KL {:.1e} (tol 1e-6) gradient gap {:.1e} (tol 1e-3)", kl, grad), elapsed());
  });
}

// Plain VAE: encoder, reparameterized sample, Gaussian decoder, KL to N(0, I).
struct ReferenceVae {
  std::vector<Matrix> enc, dec;
  Activation act;
  double sigma2;
  std::vector<Matrix> m, v;
  int step = 0;

  static Tensor forward(const std::vector<Tensor>& params, Tensor h, Activation act) {
    const std::size_t layers = params.size() / 2;
    for (std::size_t i = 0; i < layers; ++i) {
      h = ad::affine(h, params[2 * i], params[2 * i + 1]);
      if (i + 1 < layers) h = act == Activation::Tanh ? ad::tanh(h) : ad::relu(h);
    }
    return h;
  }

  std::vector<Matrix> gradient(const Matrix& x, const Matrix& eps) const {
    Tape t;
    std::vector<Tensor> pe, pd;
    for (const Matrix& p : enc) pe.push_back(t.variable(p));
    for (const Matrix& p : dec) pd.push_back(t.variable(p));
    const Tensor out = forward(pe, t.constant(x), act);
    const Eigen::Index d = out.cols() / 2;
    const Tensor mu = ad::slice_cols(out, 0, d);
    const Tensor logvar = ad::clamp(ad::slice_cols(out, d, d), -10.0, 10.0);
    const Tensor z = ad::reparam(mu, logvar, eps);
    const Tensor recon = ad::gaussian_log_density(forward(pd, z, act), x, sigma2);
    t.backward(ad::mean(recon - ad::kl_diag_gaussian(mu, logvar)));
    std::vector<Matrix> g;
    for (const Tensor& p : pe) g.push_back(p.grad());
    for (const Tensor& p : pd) g.push_back(p.grad());
    return g;
  }

  void ascend(const std::vector<Matrix>& g, double lr) {
    if (m.empty())
      for (const Matrix& x : g) m.push_back(Matrix::Zero(x.rows(), x.cols())), v.push_back(Matrix::Zero(x.rows(), x.cols()));
    ++step;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i].cwiseAbs2();
      const Matrix upd = ((m[i] / (1.0 - std::pow(0.9, step))).array() /
                          ((v[i] / (1.0 - std::pow(0.999, step))).array().sqrt() + 1e-8))
                             .matrix();
      Matrix& p = i < enc.size() ? enc[i] : dec[i - enc.size()];
      p += lr * upd;
    }
  }
};

void criterion_vae_reduction() {
  timed([](auto elapsed) {
    ModelSpec spec;
    spec.data_dim = 2;
    spec.latent_dim = 2;
    spec.num_classes = 2;
    spec.prior_hidden = spec.encoder_hidden = spec.decoder_hidden = {32, 32};
    TrainConfig c;
    c.eta0 = 0.0;
    c.eta2 = 0.0;
    c.eta1 = 1e-3;
    c.batch_unlabeled = 50;
    c.batch_labeled = 10;
    c.chains = 100;
    c.seed = 5;
    Model model = Model::create(spec, 5);
    for (Matrix* p : model.prior.f.parameters()) p->setZero();
    TrainState state = TrainState::create(model, c);

    ReferenceVae ref;
    for (Matrix* p : model.posterior.encoder.parameters()) ref.enc.push_back(*p);
    for (Matrix* p : model.decoder.generator.parameters()) ref.dec.push_back(*p);
    ref.act = spec.net_activation;
    ref.sigma2 = spec.sigma2;

    const SSLDataset ds = ssl_split(make_synthetic(SyntheticKind::TwoMoons, 500, 0.1, 5), 10, 5);
    const auto lab = ds.labeled_indices(Split::Train);
    std::vector<int> y;
    for (std::size_t i : lab) y.push_back(ds.class_of(i));
    const Matrix xl = ds.rows(lab);
    BatchStream stream(ds, c.batch_unlabeled, c.batch_labeled, c.seed);

    double worst = 0.0;
    for (std::int64_t t = 0; t < 50; ++t) {
      const Matrix xu = ds.rows(stream.at(t).unlabeled);
      TrainState probe = state;
      const StepGradients g = compute_step_gradients(probe, c, xu, xl, y);
      Rng noise(c.seed, Stream::PosteriorNoise, {static_cast<std::uint64_t>(t), 0});
      const std::vector<Matrix> r = ref.gradient(xu, noise.normal_matrix(xu.rows(), spec.latent_dim));
      std::vector<Matrix> mine = g.psi.encoder;
      mine.insert(mine.end(), g.psi.decoder.begin(), g.psi.decoder.end());
      for (std::size_t i = 0; i < r.size(); ++i) worst = std::max(worst, (r[i] - mine[i]).cwiseAbs().maxCoeff());
      train_step(state, c, xu, xl, y);
      ref.ascend(r, c.eta1);
    }
    double drift = 0.0;
    const auto enc = state.model.posterior.encoder.parameters();
    for (std::size_t i = 0; i < enc.size(); ++i) drift = std::max(drift, (*enc[i] - ref.enc[i]).cwiseAbs().maxCoeff());
    report(6, "vae-reduction", worst <= 1e-10,
           fmt::format("max psi-gradient diff {:.1e} over 50 steps (tol 1e-10), parameter drift {:.1e}", worst, drift),
           elapsed());
  });
}

RunConfig ssl_config(const std::string& kind, std::uint64_t seed) {
  RunConfig c;
  c.data.kind = kind;
  c.data.n_unlabeled = 1000;
  c.data.n_test = 1000;
  c.data.validation_fraction = 0.0;
  if (kind == "two_moons") {
    c.data.n_labeled = 10;
    c.data.noise = 0.1;
  } else {
    c.data.n_labeled = 8;
    c.data.noise = 0.5;
    c.data.components = 8;
  }
  c.model.latent_dim = 2;
  c.model.sigma2 = 0.01;
  c.model.prior_hidden = c.model.encoder_hidden = c.model.decoder_hidden = {64, 64};
  c.trainer.chains = 100;
  c.trainer.iterations = 4000;
  c.trainer.seed = seed;
  c.eval.interval = 500;
  c.output.dir = "acceptance";
  c.output.checkpoint_interval = 0;
  c.output.record_wallclock = false;
  return c;
}

// Criteria 9 and 10 reuse the seed-0 run of criterion 7 as their reference.
void criterion_ssl(const fs::path& scratch, const fs::path& base) {
  timed([&](auto elapsed) {
    std::vector<double> moons;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const fs::path dir = seed == 0 ? base : scratch / fmt::format("moons_seed{}", seed);
      moons.push_back(*run_training(ssl_config("two_moons", seed), dir.string()).test_accuracy);
    }
    std::vector<double> sorted = moons;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[2];
    const double mixture = *run_training(ssl_config("gauss_mixture", 0), "").test_accuracy;
    report(7, "ssl-synthetic", median >= 0.90 && mixture >= 0.95,
           fmt::format("two_moons accuracies {:.3f} median {:.3f} (>= 0.90); gauss_mixture {:.3f} (>= 0.95)",
                       fmt::join(moons, " "), median, mixture),
           elapsed());
  });

}

void criterion_determinism(const fs::path& scratch, const fs::path& base) {
  timed([&](auto elapsed) {
    const fs::path again = scratch / "moons_seed0_again";
    run_training(ssl_config("two_moons", 0), again.string());
    const bool same_metrics = read_bytes(base / "metrics.csv") == read_bytes(again / "metrics.csv") &&
                              !read_bytes(base / "metrics.csv").empty();
    RunConfig threaded = ssl_config("two_moons", 0);
    threaded.trainer.threads = 4;
    const Snapshot a = load_snapshot((base / "checkpoint.bin").string());
    const Snapshot b = run_training(threaded, "").snapshot;
    double diff = 0.0;
    Model ma = a.state.model;
    Model pb = b.state.model;
    std::vector<Matrix*> xa = ma.prior.f.parameters(), xb = pb.prior.f.parameters();
    for (Matrix* p : psi_parameters(ma)) xa.push_back(p);
    for (Matrix* p : psi_parameters(pb)) xb.push_back(p);
    for (std::size_t i = 0; i < xa.size(); ++i) diff = std::max(diff, (*xa[i] - *xb[i]).cwiseAbs().maxCoeff());
    diff = std::max(diff, (a.state.chains.states() - b.state.chains.states()).cwiseAbs().maxCoeff());
    report(9, "determinism", same_metrics && diff == 0.0,
           fmt::format("metrics CSV {} across reruns; 1 vs 4 threads max parameter diff {:.1e} (tol 0)",
                       same_metrics ? "bit-identical" : "DIFFERS", diff),
           elapsed());
  });

}

void criterion_resume(const fs::path& scratch, const fs::path& base) {
  timed([&](auto elapsed) {
    const fs::path split = scratch / "moons_split";
    RunConfig half = ssl_config("two_moons", 0);
    half.trainer.iterations = 2000;
    run_training(half, split.string());
    const Snapshot mid = load_snapshot((split / "checkpoint.bin").string());
    run_training(ssl_config("two_moons", 0), split.string(), mid);
    const bool same = read_bytes(base / "checkpoint.bin") == read_bytes(split / "checkpoint.bin");
    const bool same_metrics = read_bytes(base / "metrics.csv") == read_bytes(split / "metrics.csv");
    report(10, "checkpoint-resume", same && same_metrics,
           fmt::format("final checkpoint {}; metrics CSV {} (2000 + 2000 vs 4000 iterations)",
                       same ? "bit-identical" : "DIFFERS", same_metrics ? "bit-identical" : "DIFFERS"),
           elapsed());
  });
}

void criterion_hepmass() {
  timed([](auto elapsed) {
    const char* env = std::getenv("LEBM_HEPMASS_DIR");
    const fs::path dir = env ? env : "data/hepmass";
    const fs::path train = dir / "1000_train.csv", test = dir / "1000_test.csv";
    if (!fs::exists(train) || !fs::exists(test)) {
      fmt::print("SKIP  8 {:<28} Hepmass CSVs not found under '{}' (set LEBM_HEPMASS_DIR) [{:.1f}s]\n",
                 "hepmass-reproduction", dir.string(), elapsed());
      return;
    }
    std::vector<double> acc;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      RunConfig c;
      c.data.source = "csv";
      c.data.train_path = train.string();
      c.data.test_path = test.string();
      c.data.label_column = "# label";
      c.data.class_names = {"0.0", "1.0"};
      c.data.n_labeled = 20;
      c.data.validation_fraction = 0.0;
      c.trainer.iterations = 4000;
      c.trainer.seed = seed;
      c.eval.interval = 0;
      c.output.record_wallclock = false;
      acc.push_back(100.0 * *run_training(c, "").test_accuracy);
    }
    std::sort(acc.begin(), acc.end());
    report(8, "hepmass-reproduction", std::abs(acc[1] - 89.1) <= 4.0,
           fmt::format("median accuracy {:.1f} (target 89.1 ± 4.0; stretch)", acc[1]), elapsed());
  });
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const fs::path scratch = fs::temp_directory_path() / "lebm_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  try {
    criterion_gradients();
    criterion_energy_identity();
    criterion_ula();
    criterion_quadrature();
    criterion_divergence();
    criterion_vae_reduction();
    const fs::path base = scratch / "moons_seed0";
    criterion_ssl(scratch, base);
    criterion_hepmass();
    criterion_determinism(scratch, base);
    criterion_resume(scratch, base);
  } catch (const Error& e) {
    fmt::print("FAIL    aborted: [{}] {}\n", to_string(e.code()), e.what());
    return 1;
  }
  fmt::print("{} criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
