#include <doctest.h>

#include <cmath>
#include <random>

#include "diva/autodiff/grad_check.hpp"
#include "diva/encoders/optim.hpp"
#include "diva/encoders/transformer.hpp"
#include "diva/error.hpp"
#include "support.hpp"

using namespace diva;
using namespace diva::enc;

namespace {

enc::Image random_image(std::mt19937_64& rng, std::size_t size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  enc::Image img{size, std::vector<double>(size * size)};
  for (double& p : img.pixels) p = u(rng);
  return img;
}

double row_norm(const ad::Tensor& t, std::size_t r) {
  double s = 0;
  for (std::size_t j = 0; j < t.cols(); ++j) s += t.at(r, j) * t.at(r, j);
  return std::sqrt(s);
}

TextEncoderConfig tiny_text() {
  TextEncoderConfig c;
  c.vocab_size = 12;
  c.max_seq_len = 6;
  c.embed_dim = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.mlp_dim = 8;
  return c;
}

VisionEncoderConfig tiny_vision() {
  VisionEncoderConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.mlp_dim = 8;
  return c;
}

}  // namespace

TEST_CASE("text encoding is deterministic and unit norm") {
  TextEncoder enc({}, 11);
  const TokenSequence tokens{0, 4, 9, 12, 3};
  const ad::Var a = enc.encode(tokens);
  const ad::Var b = enc.encode(tokens);
  CHECK(a.value() == b.value());
  CHECK(std::abs(row_norm(a.value(), 0) - 1.0) <= 1e-12);
}

TEST_CASE("prompts differing in one word encode differently") {
  TextEncoder enc({}, 11);
  const ad::Var a = enc.encode(TokenSequence{0, 4, 9, 12});
  const ad::Var b = enc.encode(TokenSequence{0, 5, 9, 12});
  CHECK(ad::cosine_sim_matrix(a, b).item() < 1.0);
}

TEST_CASE("out-of-vocabulary token names the id") {
  TextEncoder enc({}, 11);
  try {
    enc.encode(TokenSequence{0, 64});
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("64") != std::string::npos);
  }
}

TEST_CASE("padded batches match one-at-a-time encoding") {
  TextEncoder enc({}, 3);
  const std::vector<TokenSequence> batch{{0, 4, 5}, {0, 7, 8, 9, 10}, {0}};
  const ad::Var together = enc.encode(batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ad::Var alone = enc.encode(batch[i]);
    for (std::size_t j = 0; j < alone.cols(); ++j) {
      CHECK(together.value().at(i, j) == doctest::Approx(alone.value()[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("image encoding is deterministic, unit norm and checks dimensions") {
  VisionEncoder enc({}, 5);
  const std::vector<enc::Image> zeros(1, enc::Image{32, std::vector<double>(1024, 0.0)});
  const ad::Var a = enc.encode(zeros);
  CHECK(a.value() == enc.encode(zeros).value());
  CHECK(std::abs(row_norm(a.value(), 0) - 1.0) <= 1e-12);
  const std::vector<enc::Image> wrong(1, enc::Image{16, std::vector<double>(256, 0.0)});
  CHECK_THROWS_AS(enc.encode(wrong), InputError);
}

TEST_CASE("LoRA is an exact identity at creation") {
  std::mt19937_64 rng(1);
  std::vector<enc::Image> imgs;
  for (int i = 0; i < 3; ++i) imgs.push_back(random_image(rng, 32));
  VisionEncoder plain({}, 9);
  VisionEncoder adapted = plain;
  adapted.attach_lora({}, 10);
  CHECK(adapted.encode(imgs).value() == plain.encode(imgs).value());
  for (const LoRAAdapter& a : adapted.adapters()) {
    for (double v : adapted.params()[a.b_id].var.value().values()) CHECK(v == 0.0);
    CHECK(a.scaling() == 1.0);
    CHECK_FALSE(adapted.params().find(a.target)->trainable);
  }
  CHECK(adapted.adapters().size() == 2 * adapted.config().n_layers);
}

TEST_CASE("LoRA keeps trainable vision parameters under 10 percent") {
  VisionEncoder enc({}, 9);
  enc.attach_lora({}, 10);
  const double share =
      static_cast<double>(enc.params().trainable_elements()) / static_cast<double>(enc.params().total_elements());
  CHECK(share < 0.10);
  CHECK(share > 0.0);
}

TEST_CASE("copies of an encoder never share storage") {
  VisionEncoder a({}, 9);
  VisionEncoder b = a;
  b.params()[0].var.mutable_value()[0] += 1.0;
  CHECK(a.params()[0].var.value()[0] != b.params()[0].var.value()[0]);
}

TEST_CASE("encoder gradients match finite differences") {
  std::mt19937_64 rng(4);
  SUBCASE("vision with LoRA") {
    VisionEncoder enc(tiny_vision(), 2);
    enc.attach_lora({2, 2.0}, 3);
    // Perturb B so the adapter path is active.
    for (const LoRAAdapter& a : enc.adapters()) {
      enc.params()[a.b_id].var.mutable_value() = diva::testing::random_tensor(rng, 8, 2, -0.3, 0.3);
    }
    enc.set_frozen(false);
    enc.params().set_all_trainable(true);
    std::vector<enc::Image> imgs{random_image(rng, 8), random_image(rng, 8)};
    const ad::Tensor w = diva::testing::random_tensor(rng, 2, 8);
    std::vector<ad::Var> leaves;
    for (Parameter& p : enc.params().all()) leaves.push_back(p.var);
    const auto report = ad::grad_check_leaves(
        [&] { return ad::sum(ad::mul(enc.encode(imgs), ad::Var::constant(w))); }, leaves, 1e-4, 1e-3, 6);
    INFO("max rel err " << report.max_rel_err);
    CHECK(report.passed);
  }
  SUBCASE("text") {
    TextEncoder enc(tiny_text(), 2);
    const std::vector<TokenSequence> seqs{{0, 3, 4, 5}, {0, 6, 7}};
    const ad::Tensor w = diva::testing::random_tensor(rng, 2, 8);
    std::vector<ad::Var> leaves;
    for (Parameter& p : enc.params().all()) leaves.push_back(p.var);
    const auto report = ad::grad_check_leaves(
        [&] { return ad::sum(ad::mul(enc.encode(seqs), ad::Var::constant(w))); }, leaves, 1e-4, 1e-3, 6);
    INFO("max rel err " << report.max_rel_err);
    CHECK(report.passed);
  }
}

TEST_CASE("frozen text encoder still passes gradients to its inputs") {
  TextEncoder enc(tiny_text(), 2);
  enc.set_frozen(true);
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  const std::vector<TokenSequence> seqs{{0, 3, 4}};
  TokenEmbeddings emb = enc.embed(seqs);
  ad::Var shift = ad::Var::leaf(ad::Tensor::matrix(3, 8, 0.1));
  emb.x = ad::add(emb.x, shift);
  tape.backward(ad::sum(ad::mul(enc.encode_embeddings(emb), ad::Var::constant(ad::Tensor::matrix(1, 8, 1.0)))));
  double mag = 0;
  for (double g : shift.grad().values()) mag += std::abs(g);
  CHECK(mag > 0.0);
  for (const Parameter& p : enc.params().all()) CHECK_FALSE(p.var.has_grad());
}

TEST_CASE("layer-wise learning rate") {
  CHECK(layerwise_lr(3, 4, 0.0005, 0.9) == 0.0005);
  CHECK(layerwise_lr(2, 4, 0.0005, 0.9) == doctest::Approx(0.00045).epsilon(1e-14));
  for (std::size_t i = 0; i < 4; ++i) CHECK(layerwise_lr(i, 4, 0.0005, 1.0) == 0.0005);
  CHECK_THROWS_AS(layerwise_lr(0, 4, 0.0005, 0.0), ConfigError);
  CHECK_THROWS_AS(layerwise_lr(0, 4, 0.0005, -0.5), ConfigError);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> beta(0.01, 1.0);
  for (int t = 0; t < 100; ++t) {
    const double b = beta(rng);
    for (std::size_t i = 1; i < 6; ++i) CHECK(layerwise_lr(i, 6, 1e-3, b) >= layerwise_lr(i - 1, 6, 1e-3, b));
  }
}

TEST_CASE("AdamW") {
  ParamStore store;
  const std::size_t a = store.add("a", ad::Tensor::row({0.5}));
  const std::size_t frozen = store.add("frozen", ad::Tensor::row({2.0}), false);
  std::vector<Parameter*> ps{&store[a], &store[frozen]};
  const std::vector<double> lrs{0.1, 0.1};

  SUBCASE("zero gradient without decay is a fixed point") {
    AdamW opt({0.9, 0.999, 1e-8, 0.0});
    store[a].var.grad_buffer()[0] = 0.0;
    opt.step(ps, lrs);
    CHECK(store[a].var.value()[0] == 0.5);
  }
  SUBCASE("frozen parameters are untouched") {
    AdamW opt;
    store[frozen].var.grad_buffer()[0] = 3.0;
    opt.step(ps, lrs);
    CHECK(store[frozen].var.value()[0] == 2.0);
    CHECK_FALSE(store[frozen].var.has_grad());
  }
  SUBCASE("first step matches the closed form") {
    const double g = 0.3, lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01, w0 = 0.5;
    AdamW opt({b1, b2, eps, wd});
    store[a].var.grad_buffer()[0] = g;
    opt.step(ps, lrs);
    const double m = (1 - b1) * g, v = (1 - b2) * g * g;
    const double mhat = m / (1 - b1), vhat = v / (1 - b2);
    const double expected = w0 - lr * (mhat / (std::sqrt(vhat) + eps) + wd * w0);
    CHECK(store[a].var.value()[0] == doctest::Approx(expected).epsilon(1e-15));
    CHECK_FALSE(store[a].var.has_grad());
    CHECK(opt.steps() == 1);
  }
  SUBCASE("non-finite gradient names the parameter") {
    AdamW opt;
    store[a].var.grad_buffer()[0] = std::nan("");
    try {
      opt.step(ps, lrs);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("'a'") != std::string::npos);
    }
  }
}
