#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <random>

#include "ganimc/error.hpp"
#include "ganimc/network.hpp"
#include "ganimc/ops.hpp"
#include "ganimc/tensor.hpp"

using namespace ganimc;

namespace {

TensorPtr random_batch(int n, int c, int h, int w, uint64_t seed) {
  auto t = make_tensor({n, c, h, w});
  auto rng = make_rng(seed);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  for (auto& v : t->data) v = uni(rng);
  return t;
}

bool all_params_have_nonzero_grads(const std::vector<TensorPtr>& params,
                                   std::string* who = nullptr) {
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!p->has_grad()) {
      if (who) *who = "param " + std::to_string(i) + " has no gradient";
      return false;
    }
    bool nonzero = false;
    for (float g : p->grad)
      if (g != 0.0f) {
        nonzero = true;
        break;
      }
    if (!nonzero) {
      if (who) *who = "param " + std::to_string(i) + " gradient is all zero";
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("generator upscales by the configured factor") {
  Generator g({4, 2, 16}, 1);
  auto out = g.forward(random_batch(1, 3, 16, 16, 2), false);
  CHECK(out->shape == std::vector<int>{1, 3, 64, 64});

  Generator g2({2, 2, 16}, 1);
  auto out2 = g2.forward(random_batch(2, 3, 8, 8, 3), false);
  CHECK(out2->shape == std::vector<int>{2, 3, 16, 16});
}

TEST_CASE("generator is fully convolutional across extents") {
  Generator g({4, 1, 8}, 5);
  auto a = g.forward(random_batch(1, 3, 8, 8, 6), false);
  auto b = g.forward(random_batch(1, 3, 16, 16, 7), false);
  CHECK(a->shape == std::vector<int>{1, 3, 32, 32});
  CHECK(b->shape == std::vector<int>{1, 3, 64, 64});
}

TEST_CASE("generator seeding is deterministic") {
  Generator a({4, 2, 16}, 42);
  Generator b({4, 2, 16}, 42);
  Generator c({4, 2, 16}, 43);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool equal = true, differs = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (std::memcmp(pa[i]->data.data(), pb[i]->data.data(),
                    pa[i]->data.size() * sizeof(float)) != 0)
      equal = false;
    if (std::memcmp(pa[i]->data.data(), pc[i]->data.data(),
                    pa[i]->data.size() * sizeof(float)) != 0)
      differs = true;
  }
  CHECK(equal);
  CHECK(differs);
}

TEST_CASE("generator handles zero input and clamps at inference") {
  Generator g({4, 2, 16}, 9);
  auto zero = make_tensor({1, 3, 8, 8});
  auto out = g.forward(zero, false);
  assert_finite(*out, "generator output");

  auto inf = g.generate(random_batch(1, 3, 8, 8, 10));
  for (float v : inf->data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("generator inference treats batch items independently") {
  Generator g({4, 2, 16}, 11);
  auto one = random_batch(1, 3, 8, 8, 12);
  auto two = make_tensor({2, 3, 8, 8});
  std::copy(one->data.begin(), one->data.end(), two->data.begin());
  std::copy(one->data.begin(), one->data.end(),
            two->data.begin() + std::ptrdiff_t(one->data.size()));
  auto out = g.forward(two, false);
  size_t half = out->data.size() / 2;
  CHECK(std::memcmp(out->data.data(), out->data.data() + half,
                    half * sizeof(float)) == 0);
}

TEST_CASE("generator spec validation") {
  CHECK_THROWS_AS(Generator({3, 8, 64}, 1), ContractError);
  CHECK_THROWS_AS(Generator({4, 0, 64}, 1), ContractError);
  CHECK_THROWS_AS(Generator({4, 8, 0}, 1), ContractError);
}

TEST_CASE("generator parameters all receive gradients from a pixel objective") {
  Generator g({4, 2, 12}, 21);
  auto lr = random_batch(2, 3, 8, 8, 22);
  auto target = random_batch(2, 3, 32, 32, 23);
  auto sr = g.forward(lr, true);
  auto diff = ops::sub(sr, target);
  backward(ops::mean_all(ops::square(diff)));
  std::string who;
  CHECK_MESSAGE(all_params_have_nonzero_grads(g.parameters(), &who), who);
}

TEST_CASE("deep discriminator channel sequence and flatten size") {
  Discriminator d(DiscKind::img, 64, 31);
  std::vector<int> seq;
  for (const auto& [name, t] : d.named_tensors())
    if (name.find("conv.") == 0 && name.find(".weight") != std::string::npos)
      seq.push_back(t->shape[0]);
  CHECK(seq == std::vector<int>{64, 64, 128, 128, 256, 256, 512, 512});
  CHECK(d.flatten_size() == 8 * 8 * 512);

  auto fc0 = [&] {
    for (const auto& [name, t] : d.named_tensors())
      if (name == "fc.0.weight") return t;
    return TensorPtr{};
  }();
  REQUIRE(fc0 != nullptr);
  CHECK(fc0->shape == std::vector<int>{1024, 8 * 8 * 512});
}

TEST_CASE("color discriminator flattens to 256 at 64 input") {
  Discriminator d(DiscKind::color, 64, 32);
  CHECK(d.flatten_size() == 2 * 2 * 64);
  auto fc0 = [&] {
    for (const auto& [name, t] : d.named_tensors())
      if (name == "fc.0.weight") return t;
    return TensorPtr{};
  }();
  REQUIRE(fc0 != nullptr);
  CHECK(fc0->shape == std::vector<int>{1024, 256});
}

TEST_CASE("gray-input discriminator accepts one channel and rejects three") {
  Discriminator d(DiscKind::mc, 64, 33);
  CHECK(d.input_channels() == 1);
  auto probs = d.forward(random_batch(2, 1, 64, 64, 34), false);
  CHECK(probs->shape == std::vector<int>{2, 1});
  CHECK_THROWS_AS(d.forward(random_batch(2, 3, 64, 64, 35), false), ShapeError);
}

TEST_CASE("discriminator extent must fit the stride plan") {
  try {
    Discriminator d(DiscKind::img, 63, 36);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    std::string msg = e.what();
    CHECK(msg.find("flatten") != std::string::npos);
  }
  CHECK_THROWS_AS(Discriminator(DiscKind::color, 48, 37), ContractError);

  Discriminator small(DiscKind::img, 32, 38);
  CHECK(small.flatten_size() == 4 * 4 * 512);
}

TEST_CASE("discriminator outputs are probabilities") {
  Discriminator d(DiscKind::color, 64, 41);
  auto probs = d.forward(random_batch(3, 3, 64, 64, 42), false);
  REQUIRE(probs->shape == std::vector<int>{3, 1});
  for (float p : probs->data) {
    CHECK(p > 0.0f);
    CHECK(p < 1.0f);
  }
}

TEST_CASE("discriminator inference scores duplicated items equally") {
  Discriminator d(DiscKind::color, 64, 51);
  auto one = random_batch(1, 3, 64, 64, 52);
  auto two = make_tensor({2, 3, 64, 64});
  std::copy(one->data.begin(), one->data.end(), two->data.begin());
  std::copy(one->data.begin(), one->data.end(),
            two->data.begin() + std::ptrdiff_t(one->data.size()));
  auto probs = d.forward(two, false);
  CHECK(probs->data[0] == probs->data[1]);
}

TEST_CASE("spec dump lists the fixed layer plans token for token") {
  const char* deep =
      "Conv (k3, s1, n64), LeakyRelu\n"
      "Conv (k3, s2, n64), LeakyRelu, BN\n"
      "Conv (k3, s1, n128), LeakyRelu, BN\n"
      "Conv (k3, s2, n128), LeakyRelu, BN\n"
      "Conv (k3, s1, n256), LeakyRelu, BN\n"
      "Conv (k3, s2, n256), LeakyRelu, BN\n"
      "Conv (k3, s1, n512), LeakyRelu, BN\n"
      "Conv (k3, s1, n512), LeakyRelu, BN\n"
      "FC 1024\n"
      "FC 1\n";
  const char* color =
      "Conv (k11, s4, n48), LeakyRelu\n"
      "Conv (k5, s2, n64), LeakyRelu, BN\n"
      "Conv (k3, s1, n128), LeakyRelu, BN\n"
      "Conv (k3, s2, n128), LeakyRelu, BN\n"
      "Conv (k3, s1, n128), LeakyRelu, BN\n"
      "Conv (k3, s2, n64), LeakyRelu, BN\n"
      "FC 1024\n"
      "FC 1\n";
  CHECK(Discriminator(DiscKind::img, 64, 1).spec_dump() == deep);
  CHECK(Discriminator(DiscKind::mc, 64, 2).spec_dump() == deep);
  CHECK(Discriminator(DiscKind::color, 64, 3).spec_dump() == color);
}

TEST_CASE("discriminator parameters all receive gradients") {
  for (DiscKind kind : {DiscKind::img, DiscKind::mc, DiscKind::color}) {
    CAPTURE(disc_kind_name(kind));
    Discriminator d(kind, kind == DiscKind::color ? 64 : 32, 61);
    int c = d.input_channels();
    int e = d.input_extent();
    auto x = random_batch(2, c, e, e, 62);
    auto probs = d.forward(x, true);
    // Push through a log-style objective so both real and saturated branches
    // contribute.
    auto clamped = ops::clamp(probs, 1e-6f, 1.0f - 1e-6f);
    backward(ops::mean_all(ops::ln(clamped)));
    std::string who;
    CHECK_MESSAGE(all_params_have_nonzero_grads(d.parameters(), &who), who);
  }
}
