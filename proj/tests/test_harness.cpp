#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "diva/error.hpp"
#include "diva/harness/checkpoint.hpp"
#include "diva/harness/config.hpp"
#include "diva/harness/experiment.hpp"
#include "diva/harness/metrics.hpp"
#include "diva/harness/stats.hpp"
#include "support.hpp"

using namespace diva;
using namespace diva::harness;
using diva::testing::random_tensor;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<int>& pos) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

double t_density(double x, double v) {
  return std::exp(std::lgamma((v + 1) / 2) - std::lgamma(v / 2)) / std::sqrt(v * std::numbers::pi) *
         std::pow(1 + x * x / v, -(v + 1) / 2);
}

// Upper tail by composite Simpson on [0, |t|].
double upper_tail_oracle(double t, double v) {
  const int n = 20000;
  const double a = std::abs(t), h = a / n;
  double s = t_density(0, v) + t_density(a, v);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * t_density(i * h, v);
  const double mass = s * h / 3;
  return t >= 0 ? 0.5 - mass : 0.5 + mass;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.scenario.pairs_per_class = 8;
  c.scenario.adapt_per_class = 20;
  c.pretrain.epochs = 1;
  c.pretrain.batch_size = 16;
  c.model.embed_dim = 16;
  c.model.n_layers = 1;
  c.model.n_heads = 2;
  c.model.mlp_dim = 32;
  c.train.epochs = 2;
  c.train.batch_size = 16;
  c.train.fraction = 0.5;
  c.train.seeds = {0, 1};
  c.sweep_fractions = {0.5, 1.0};
  return c;
}

struct Fixture {
  ExperimentConfig config = tiny_config();
  synth::Scenario scenario = synth::generate_scenario(config.scenario);
  PretrainedModel pretrained = run_pretraining(config, scenario).model;
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("rank AUC equals brute-force pair counting") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 30;
    std::vector<double> s(n);
    std::vector<int> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 7) / 7.0;  // many ties
      pos[i] = static_cast<int>(rng() % 2);
    }
    pos[0] = 1;
    pos[1] = 0;
    REQUIRE(auc_rank(s, pos) == brute_auc(s, pos));
  }
  CHECK(auc_rank(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == 0.75);
  const std::vector<double> s{0.3, 0.1};
  CHECK(std::isnan(auc_rank(s, std::vector<int>{1, 1})));
}

TEST_CASE("weighted F1 matches a direct recomputation") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 40, K = 3;
    const ad::Tensor scores = random_tensor(rng, n, K, 0.0, 1.0);
    std::vector<std::size_t> labels(n), pred = argmax_rows(scores);
    for (auto& y : labels) y = rng() % K;
    const MetricSet m = compute_metrics(scores, pred, labels);
    double wf1 = 0.0, correct = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double tp = 0, fp = 0, fn = 0, support = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += pred[i] == k && labels[i] == k;
        fp += pred[i] == k && labels[i] != k;
        fn += pred[i] != k && labels[i] == k;
        support += labels[i] == k;
      }
      const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0, r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
      wf1 += f1 * support / n;
      CHECK(m.per_class[k].f1 == doctest::Approx(f1).epsilon(1e-12));
    }
    for (std::size_t i = 0; i < n; ++i) correct += pred[i] == labels[i];
    CHECK(m.weighted_f1 == doctest::Approx(wf1).epsilon(1e-12));
    CHECK(m.accuracy == doctest::Approx(correct / n).epsilon(1e-12));
  }
}

TEST_CASE("t distribution tail matches numerical integration") {
  for (double v : {5.0, 9.0, 30.0})
    for (double t = -10.0; t <= 10.0; t += 0.25) {
      INFO("dof " << v << " t " << t);
      REQUIRE(std::abs((1.0 - student_t_cdf(t, v)) - upper_tail_oracle(t, v)) <= 1e-6);
    }
  CHECK(incomplete_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(incomplete_beta(2.0, 3.0, 1.0) == 1.0);
}

TEST_CASE("paired one-tailed t-test") {
  const std::vector<double> d{0.02, -0.01, 0.03, 0.01, 0.02, 0.00, 0.04, 0.01, -0.02, 0.02};
  std::vector<double> base(d.size(), 0.5), ours(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) ours[i] = base[i] + d[i];
  const TTestResult r = paired_ttest(ours, base);
  double mean = 0, ss = 0;
  for (double x : d) mean += x / d.size();
  for (double x : d) ss += (x - mean) * (x - mean);
  const double t = mean / std::sqrt(ss / (d.size() - 1) / d.size());
  CHECK(r.t == doctest::Approx(t).epsilon(1e-6));
  // Hand computation: mean 0.012, sd 0.018135, t = 2.0925, p = 0.03296.
  CHECK(std::abs(r.t - 2.0925) < 1e-4);
  CHECK(std::abs(r.p - upper_tail_oracle(t, 9.0)) <= 1e-6);
  CHECK(std::abs(r.p - 0.03296) < 1e-5);
  CHECK(r.significant);
  CHECK(r.n == 10);

  const std::vector<double> zeros(10, 0.0), tenth(10, 0.1);
  const TTestResult up = paired_ttest(tenth, zeros);
  CHECK(up.degenerate);
  CHECK(up.p == 0.0);
  CHECK(paired_ttest(zeros, tenth).p == 1.0);
  CHECK(paired_ttest(zeros, zeros).p == 0.5);
  CHECK_THROWS_AS(paired_ttest(std::vector<double>{1.0}, std::vector<double>{0.0}), InputError);
  CHECK_THROWS_AS(paired_ttest(tenth, std::vector<double>{0.0}), InputError);
}

TEST_CASE("config files") {
  SUBCASE("unknown keys are rejected by name") {
    try {
      (void)parse_experiment_config(IniFile::parse("[train]\nepochs = 3\nlearning_rate = 1\n"));
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
    }
  }
  SUBCASE("values are parsed") {
    const ExperimentConfig c = parse_experiment_config(
        IniFile::parse("[train]\nepochs = 3\nseeds = 4, 5\nclassifier_scale = 2.5\n[sweep]\nfractions = 0.1,0.2\n"));
    CHECK(c.train.epochs == 3);
    CHECK(c.train.seeds == std::vector<std::uint64_t>{4, 5});
    CHECK(c.train.classifier_scale == 2.5);
    CHECK(c.sweep_fractions == std::vector<double>{0.1, 0.2});
  }
  SUBCASE("bad values") {
    CHECK_THROWS_AS(parse_experiment_config(IniFile::parse("[train]\nepochs = many\n")), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config(IniFile::parse("[train]\nlr = -1\n")), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config(IniFile::parse("[sweep]\nfractions = 0.2, 0.1\n")), ConfigError);
  }
}

TEST_CASE("checkpoints") {
  std::mt19937_64 rng(4);
  Checkpoint c;
  c.add("a.weight", random_tensor(rng, 3, 4));
  c.add("b", random_tensor(rng, 1, 5));
  c.set_fingerprint(0x0123456789abcdefULL);
  const std::string bytes = encode_checkpoint(c);
  const Checkpoint d = decode_checkpoint(bytes);
  CHECK(d.names() == c.names());
  CHECK(d.fingerprint() == 0x0123456789abcdefULL);
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(d.find("a.weight")->values()[i] == static_cast<double>(static_cast<float>(c.find("a.weight")->values()[i])));
  CHECK(encode_checkpoint(d) == bytes);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint("XXXX" + bytes.substr(4)), FormatError);
  CHECK_THROWS_AS(d.expect_names({"a.weight", "c"}), FormatError);

  const std::string path = temp_path("diva_ckpt_test.bin");
  save_checkpoint(c, path);
  const Checkpoint e = load_checkpoint(path);
  save_checkpoint(e, path);
  CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), InputError);
}

TEST_CASE("PCA recovers an embedded plane") {
  std::mt19937_64 rng(6);
  const std::size_t n = 50, h = 8;
  const ad::Tensor coords = random_tensor(rng, n, 2);
  ad::Tensor basis = random_tensor(rng, 2, h);
  // Orthonormalize the two basis rows so the plane has known axes.
  auto row_dot = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t j = 0; j < h; ++j) s += basis.at(a, j) * basis.at(b, j);
    return s;
  };
  for (std::size_t j = 0; j < h; ++j) basis.at(0, j) /= std::sqrt(row_dot(0, 0));
  const double p = row_dot(0, 1);
  for (std::size_t j = 0; j < h; ++j) basis.at(1, j) -= p * basis.at(0, j);
  const double n1 = std::sqrt(row_dot(1, 1));
  for (std::size_t j = 0; j < h; ++j) basis.at(1, j) /= n1;
  ad::Tensor x = ad::Tensor::matrix(n, h);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j)
      x.at(i, j) = 0.3 + 2.0 * coords.at(i, 0) * basis.at(0, j) + 0.7 * coords.at(i, 1) * basis.at(1, j);

  const Projection2D pr = pca_2d(x);
  double dot00 = 0, dot11 = 0, dot01 = 0;
  for (std::size_t j = 0; j < h; ++j) {
    dot00 += pr.c0[j] * pr.c0[j];
    dot11 += pr.c1[j] * pr.c1[j];
    dot01 += pr.c0[j] * pr.c1[j];
  }
  CHECK(std::abs(dot00 - 1) < 1e-9);
  CHECK(std::abs(dot11 - 1) < 1e-9);
  CHECK(std::abs(dot01) < 1e-9);
  double err = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      const double r = pr.mean[j] + pr.points.at(i, 0) * pr.c0[j] + pr.points.at(i, 1) * pr.c1[j];
      err = std::max(err, std::abs(r - x.at(i, j)));
    }
  CHECK(err < 1e-9);
}

TEST_CASE("pretrained model round-trips through a checkpoint") {
  Fixture& f = fixture();
  const std::string path = temp_path("diva_pretrained_test.ckpt");
  save_checkpoint(pretrained_checkpoint(f.pretrained), path);
  const PretrainedModel back = load_pretrained(f.config, path);
  CHECK(encode_checkpoint(pretrained_checkpoint(back)) == encode_checkpoint(pretrained_checkpoint(f.pretrained)));
  ExperimentConfig other = f.config;
  other.pretrain.seed += 1;
  CHECK_THROWS_AS(load_pretrained(other, path), FormatError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_pretrained(f.config, path), InputError);
}

TEST_CASE("adaptation contracts") {
  Fixture& f = fixture();
  const Experiment ex(f.config, f.pretrained, f.scenario);

  SUBCASE("zero epochs evaluates the initialized model") {
    ExperimentConfig c = f.config;
    c.train.epochs = 0;
    const Experiment zero(c, f.pretrained, f.scenario);
    SeedResult r;
    const AdaptedModel m = zero.adapt({}, r);
    CHECK(r.best_epoch == 0);
    const Evaluation init = zero.evaluate(zero.initial_model({}), f.scenario.adapt.test);
    CHECK(r.test.weighted_f1 == init.metrics.weighted_f1);
    for (double p : init.probs.values()) CHECK(p == doctest::Approx(0.5));
    (void)m;
  }

  SUBCASE("text encoder and anchors stay bit-identical; inference uses E_v and the head only") {
    const enc::ParamStore before = f.pretrained.text.params();
    SeedResult r;
    const AdaptedModel m = ex.adapt({}, r);
    for (std::size_t i = 0; i < before.size(); ++i) REQUIRE(f.pretrained.text.params()[i].var.value() == before[i].var.value());
    const AdaptedModel init = ex.initial_model({});
    CHECK(m.prototypes.anchors() == init.prototypes.anchors());
    CHECK(m.prototypes.m().value() != init.prototypes.m().value());

    m.projector.calls().reset();
    m.prototypes.calls().reset();
    m.classifier.calls().reset();
    f.pretrained.text.calls().reset();
    m.vision.calls().reset();
    (void)ex.evaluate(m, f.scenario.adapt.test);
    CHECK(m.projector.calls().get() == 0);
    CHECK(m.prototypes.calls().get() == 0);
    CHECK(f.pretrained.text.calls().get() == 0);
    CHECK(m.vision.calls().get() > 0);
    CHECK(m.classifier.calls().get() > 0);
  }

  SUBCASE("adapted checkpoints save, load and save identically") {
    SeedResult r;
    const AdaptedModel m = ex.adapt({}, r);
    const std::string path = temp_path("diva_adapted_test.ckpt");
    const std::string bytes = encode_checkpoint(adapted_checkpoint(m, f.pretrained));
    save_checkpoint(adapted_checkpoint(m, f.pretrained), path);
    const AdaptedModel back = load_adapted(ex, path);
    CHECK(encode_checkpoint(adapted_checkpoint(back, f.pretrained)) == bytes);
    std::filesystem::remove(path);
  }

  SUBCASE("baselines reject ablation variants") {
    CHECK_THROWS_AS(ex.run({Method::coop, Variant::no_ita, 0.5, 0}), ConfigError);
  }
}

TEST_CASE("reports are deterministic and parse back") {
  Fixture& f = fixture();
  const Experiment ex(f.config, f.pretrained, f.scenario);
  std::vector<RunSpec> specs = compare_specs(f.config);
  CHECK(specs.size() == 10);
  const std::size_t K = ex.data().n_classes;
  const std::string a = format_report(ex.run_all(specs, 1), K);
  const std::string b = format_report(ex.run_all(specs, 2), K);
  CHECK(a == b);
  const auto rows = parse_report(a);
  REQUIRE(rows.size() == 10);
  CHECK(rows[0].method == "dicop_dpl");
  CHECK(rows[2].variant == "-");
  CHECK(rows[0].values.count("weighted_f1") == 1);
  CHECK(sweep_specs(f.config).size() == 2 * 2 * 2);
  CHECK(ablation_specs(f.config).size() == 6 * 2);
  CHECK_THROWS_AS(parse_report("bogus header\n"), InputError);
}

TEST_CASE("embedding export lists images, prompts and prototypes") {
  Fixture& f = fixture();
  const Experiment ex(f.config, f.pretrained, f.scenario);
  const AdaptedModel m = ex.initial_model({});
  const std::string csv = export_embeddings(ex, m);
  std::size_t lines = 0, protos = 0;
  for (std::size_t pos = 0; (pos = csv.find('\n', pos)) != std::string::npos; ++pos) ++lines;
  for (std::size_t pos = 0; (pos = csv.find(",prototype,", pos)) != std::string::npos; ++pos) ++protos;
  CHECK(csv.rfind("id,kind,class_id,prototype_id,e0,", 0) == 0);
  CHECK(protos == ex.data().prototypes.size());
  CHECK(lines - 1 == f.scenario.adapt.test.size() + 2 * protos);
}
