#include <doctest.h>

#include <cmath>
#include <span>
#include <vector>

#include "gaitspeed/layers.hpp"
#include "gaitspeed/optimizer.hpp"
#include "gaitspeed/rng.hpp"
#include "reference_ops.hpp"

using namespace gaitspeed;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.v) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("conv2d forward") {
  SUBCASE("all-ones input and kernel counts the padded neighborhood") {
    Conv2d l = Conv2d::zeros(1, 1);
    l.w.fill(1.0);
    Tensor x = Tensor::zeros({1, 3, 3});
    x.fill(1.0);
    const Tensor y = conv2d_forward(l, x);
    CHECK(y.v[4] == 9.0);  // center
    CHECK(y.v[0] == 4.0);  // corners
    CHECK(y.v[2] == 4.0);
    CHECK(y.v[6] == 4.0);
    CHECK(y.v[8] == 4.0);
    CHECK(y.v[1] == 6.0);  // edges
  }
  SUBCASE("delta kernel is the identity") {
    Conv2d l = Conv2d::zeros(1, 1);
    l.w.v[4] = 1.0;  // center tap
    Rng rng(3);
    const Tensor x = random_tensor({1, 7, 3}, rng);
    const Tensor y = conv2d_forward(l, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.v[i] == x.v[i]);
  }
  SUBCASE("random case matches the six-loop oracle") {
    Rng rng(17);
    Conv2d l = Conv2d::init(1, 4, rng);
    for (double& b : l.b.v) b = rng.uniform(-0.5, 0.5);
    const Tensor x = random_tensor({1, 5, 3}, rng);
    const Tensor y = conv2d_forward(l, x);
    const Tensor ref = testref::conv2d_reference(x, l.w, l.b);
    REQUIRE(y.size() == ref.size());
    for (std::size_t i = 0; i < y.size(); ++i)
      CHECK(y.v[i] == doctest::Approx(ref.v[i]).epsilon(1e-12));
  }
  SUBCASE("multichannel random case matches the oracle") {
    Rng rng(23);
    Conv2d l = Conv2d::init(5, 7, rng);
    for (double& b : l.b.v) b = rng.uniform(-0.5, 0.5);
    const Tensor x = random_tensor({5, 11, 3}, rng);
    const Tensor y = conv2d_forward(l, x);
    const Tensor ref = testref::conv2d_reference(x, l.w, l.b);
    for (std::size_t i = 0; i < y.size(); ++i)
      CHECK(y.v[i] == doctest::Approx(ref.v[i]).epsilon(1e-10));
  }
  SUBCASE("zero input broadcasts the bias") {
    Rng rng(5);
    Conv2d l = Conv2d::init(2, 3, rng);
    l.b.v = {0.1, -0.2, 0.3};
    const Tensor x = Tensor::zeros({2, 4, 3});
    const Tensor y = conv2d_forward(l, x);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < 12; ++i) CHECK(y.v[k * 12 + i] == l.b[k]);
  }
  SUBCASE("channel mismatch is rejected") {
    Conv2d l = Conv2d::zeros(2, 3);
    const Tensor x = Tensor::zeros({1, 4, 3});
    CHECK_THROWS_AS(conv2d_forward(l, x), Error);
  }
}

TEST_CASE("relu") {
  Tensor x = Tensor::zeros({3});
  x.v = {-1.0, 0.0, 2.5};
  const Tensor y = relu(x);
  CHECK(y.v[0] == 0.0);
  CHECK(y.v[1] == 0.0);
  CHECK(y.v[2] == 2.5);
  Tensor g = Tensor::zeros({3});
  g.fill(1.0);
  const Tensor gx = relu_backward(x, g);
  CHECK(gx.v[0] == 0.0);
  CHECK(gx.v[1] == 0.0);  // subgradient at 0 is 0
  CHECK(gx.v[2] == 1.0);
}

TEST_CASE("global max pool") {
  SUBCASE("2x2 map") {
    Tensor x = Tensor::zeros({1, 2, 2});
    x.v = {1, 2, 3, 4};
    const PoolResult r = global_max_pool(x);
    CHECK(r.out[0] == 4.0);
    CHECK(r.argmax[0] == 3);
  }
  SUBCASE("ties route to the first occurrence") {
    Tensor x = Tensor::zeros({1, 2, 3});
    x.fill(0.5);
    const PoolResult r = global_max_pool(x);
    CHECK(r.out[0] == 0.5);
    CHECK(r.argmax[0] == 0);
    Tensor g = Tensor::zeros({1});
    g.v[0] = 2.0;
    const Tensor gx = global_max_pool_backward(r.argmax, g, 2, 3);
    CHECK(gx.v[0] == 2.0);
    for (std::size_t i = 1; i < 6; ++i) CHECK(gx.v[i] == 0.0);
  }
  SUBCASE("large random map matches the exhaustive max") {
    Rng rng(31);
    const Tensor x = random_tensor({45, 153, 3}, rng);
    const PoolResult r = global_max_pool(x);
    for (std::size_t k = 0; k < 45; ++k) {
      double best = -1e300;
      for (std::size_t i = 0; i < 153 * 3; ++i) best = std::max(best, x.v[k * 153 * 3 + i]);
      CHECK(r.out[k] == best);
    }
  }
  SUBCASE("backward sends exactly one unit of gradient per filter") {
    Rng rng(37);
    const Tensor x = random_tensor({6, 9, 3}, rng);
    const PoolResult r = global_max_pool(x);
    Tensor g = Tensor::zeros({6});
    g.fill(1.0);
    const Tensor gx = global_max_pool_backward(r.argmax, g, 9, 3);
    for (std::size_t k = 0; k < 6; ++k) {
      double sum = 0;
      for (std::size_t i = 0; i < 27; ++i) sum += std::abs(gx.v[k * 27 + i]);
      CHECK(sum == 1.0);
    }
  }
}

TEST_CASE("dense layer") {
  SUBCASE("identity weights pass the input through") {
    Dense l = Dense::zeros(3, 3);
    for (std::size_t i = 0; i < 3; ++i) l.w.v[i * 3 + i] = 1.0;
    Tensor x = Tensor::zeros({3});
    x.v = {1.5, -2.0, 0.25};
    const Tensor y = dense_forward(l, x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(y.v[i] == x.v[i]);
  }
  SUBCASE("zero weights return the bias") {
    Dense l = Dense::zeros(4, 2);
    l.b.v = {0.7, -0.3};
    Tensor x = Tensor::zeros({4});
    x.fill(9.0);
    const Tensor y = dense_forward(l, x);
    CHECK(y.v[0] == 0.7);
    CHECK(y.v[1] == -0.3);
  }
  SUBCASE("3x2 case against hand arithmetic") {
    Dense l = Dense::zeros(3, 2);
    l.w.v = {1.0, -2.0, 0.5, 0.25, 4.0, -1.0};
    l.b.v = {0.1, -0.2};
    Tensor x = Tensor::zeros({3});
    x.v = {2.0, 0.5, -4.0};
    const Tensor y = dense_forward(l, x);
    CHECK(y.v[0] == doctest::Approx(1.0 * 2.0 - 2.0 * 0.5 + 0.5 * -4.0 + 0.1).epsilon(1e-15));
    CHECK(y.v[1] == doctest::Approx(0.25 * 2.0 + 4.0 * 0.5 - 1.0 * -4.0 - 0.2).epsilon(1e-15));
  }
}

TEST_CASE("dropout") {
  Rng rng(41);
  Tensor x = Tensor::zeros({64});
  x.fill(1.0);
  SUBCASE("rate 0 is the identity in both modes") {
    for (bool training : {false, true}) {
      const Tensor y = dropout(x, 0.0, rng, training);
      for (double v : y.v) CHECK(v == 1.0);
    }
  }
  SUBCASE("inference mode is the identity at any rate") {
    const Tensor y = dropout(x, 0.5, rng, false);
    for (double v : y.v) CHECK(v == 1.0);
  }
  SUBCASE("surviving elements are rescaled, mean is preserved") {
    Tensor big = Tensor::zeros({100000});
    big.fill(1.0);
    DropoutMask mask;
    const Tensor y = dropout(big, 0.5, rng, true, &mask);
    double mean = 0;
    for (double v : y.v) mean += v;
    mean /= static_cast<double>(y.size());
    CHECK(mean > 0.98);
    CHECK(mean < 1.02);
    for (std::size_t i = 0; i < y.size(); ++i)
      CHECK(y.v[i] == (mask.keep[i] ? 2.0 : 0.0));
  }
  SUBCASE("backward matches the forward mask") {
    DropoutMask mask;
    (void)dropout(x, 0.3, rng, true, &mask);
    Tensor g = Tensor::zeros({64});
    g.fill(1.0);
    const Tensor gx = dropout_backward(mask, g);
    for (std::size_t i = 0; i < 64; ++i)
      CHECK(gx.v[i] == (mask.keep[i] ? mask.scale : 0.0));
  }
  SUBCASE("rate outside [0,1) is rejected") {
    CHECK_THROWS_AS(dropout(x, 1.0, rng, true), Error);
    CHECK_THROWS_AS(dropout(x, -0.1, rng, true), Error);
  }
}

TEST_CASE("mae loss") {
  SUBCASE("equal vectors give zero loss and zero gradient") {
    const std::vector<double> v{1.0, 2.0, 3.0};
    const MaeResult r = mae_loss(v, v);
    CHECK(r.loss == 0.0);
    for (double g : r.grad) CHECK(g == 0.0);
  }
  SUBCASE("single-element case") {
    const std::vector<double> pred{4.0}, truth{5.0};
    const MaeResult r = mae_loss(pred, truth);
    CHECK(r.loss == 1.0);
    CHECK(r.grad[0] == -1.0);
  }
  SUBCASE("random 100-vector matches an independent accumulation") {
    Rng rng(47);
    std::vector<double> pred(100), truth(100);
    for (std::size_t i = 0; i < 100; ++i) {
      pred[i] = rng.uniform(-10, 10);
      truth[i] = rng.uniform(-10, 10);
    }
    const MaeResult r = mae_loss(pred, truth);
    double ref = 0;
    for (std::size_t i = 0; i < 100; ++i) ref += std::abs(pred[i] - truth[i]);
    ref /= 100.0;
    CHECK(r.loss == doctest::Approx(ref).epsilon(1e-13));
  }
  SUBCASE("length mismatch is rejected") {
    const std::vector<double> a{1.0}, b{1.0, 2.0};
    CHECK_THROWS_AS(mae_loss(a, b), Error);
  }
}

TEST_CASE("rmsprop step") {
  SUBCASE("zero gradient leaves the parameter, decays the accumulator") {
    double p = 2.0, v = 0.8, g = 0.0;
    rmsprop_step({&p, 1}, {&g, 1}, {&v, 1}, RmsPropConfig{});
    CHECK(p == 2.0);
    CHECK(v == doctest::Approx(0.72).epsilon(1e-15));
  }
  SUBCASE("hand-evaluated single step") {
    double p = 0.0, v = 0.0, g = 1.0;
    const RmsPropConfig cfg{0.001, 0.9, 1e-8};
    rmsprop_step({&p, 1}, {&g, 1}, {&v, 1}, cfg);
    CHECK(v == doctest::Approx(0.1).epsilon(1e-15));
    const double expected = -0.001 / (std::sqrt(0.1) + 1e-8);
    CHECK(p == doctest::Approx(expected).epsilon(1e-12));
    CHECK(p == doctest::Approx(-0.0031623).epsilon(1e-4));
  }
  SUBCASE("minimizing p^2 converges") {
    double p = 1.0, v = 0.0;
    RmsPropConfig cfg;
    cfg.learning_rate = 0.005;
    for (int i = 0; i < 500; ++i) {
      const double g = 2.0 * p;
      rmsprop_step({&p, 1}, {&g, 1}, {&v, 1}, cfg);
    }
    CHECK(std::abs(p) < 0.01);
  }
  SUBCASE("zero learning rate changes nothing") {
    Rng rng(53);
    std::vector<double> p(32), g(32), v(32, 0.0);
    for (std::size_t i = 0; i < 32; ++i) {
      p[i] = rng.uniform(-1, 1);
      g[i] = rng.uniform(-1, 1);
    }
    const std::vector<double> before = p;
    RmsPropConfig cfg;
    cfg.learning_rate = 0.0;
    rmsprop_step(p, g, v, cfg);
    CHECK(p == before);
  }
  SUBCASE("shape mismatch is rejected") {
    double p = 0, v = 0;
    std::vector<double> g(2, 1.0);
    CHECK_THROWS_AS(rmsprop_step({&p, 1}, g, {&v, 1}, RmsPropConfig{}), Error);
  }
}

TEST_CASE("early stopping") {
  SUBCASE("strictly decreasing losses never stop before the epoch cap") {
    EarlyStopMonitor m;
    double loss = 100.0;
    for (int epoch = 1; epoch < 1000; ++epoch) {
      loss *= 0.999;
      CHECK(m.update(epoch, loss) == EarlyStopMonitor::Decision::keep_going);
    }
    CHECK(m.update(1000, loss * 0.999) == EarlyStopMonitor::Decision::stop);
  }
  SUBCASE("five improving epochs then a plateau stops at epoch 15") {
    EarlyStopMonitor m;
    int stopped_at = 0;
    const double losses[] = {5, 4, 3, 2, 1};
    for (int epoch = 1; epoch <= 1000; ++epoch) {
      const double loss = epoch <= 5 ? losses[epoch - 1] : 1.0;
      if (m.update(epoch, loss) == EarlyStopMonitor::Decision::stop) {
        stopped_at = epoch;
        break;
      }
    }
    CHECK(stopped_at == 15);
  }
  SUBCASE("constant losses from the start stop at epoch 11") {
    EarlyStopMonitor m;
    int stopped_at = 0;
    for (int epoch = 1; epoch <= 1000; ++epoch) {
      if (m.update(epoch, 2.0) == EarlyStopMonitor::Decision::stop) {
        stopped_at = epoch;
        break;
      }
    }
    CHECK(stopped_at == 11);
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks, layer by layer. Inputs are resampled if
// any value sits within 1e-6 of a ReLU/max/|.| kink.
// ---------------------------------------------------------------------------

TEST_CASE("conv2d gradients match central finite differences") {
  Rng rng(61);
  Conv2d layer = Conv2d::init(2, 3, rng);
  for (double& b : layer.b.v) b = rng.uniform(-0.2, 0.2);
  Tensor x = random_tensor({2, 6, 3}, rng);
  Tensor weight = random_tensor({3, 6, 3}, rng);  // fixed projection to a scalar

  auto loss = [&] {
    const Tensor y = conv2d_forward(layer, x);
    double acc = 0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += weight.v[i] * y.v[i];
    return acc;
  };

  Conv2d grads = Conv2d::zeros(2, 3);
  const Tensor gx = conv2d_backward(layer, x, weight, grads);

  double worst = 0;
  for (std::size_t i = 0; i < layer.w.size(); ++i)
    worst = std::max(worst, testref::rel_err(grads.w.v[i], testref::central_diff(loss, &layer.w.v[i])));
  for (std::size_t i = 0; i < layer.b.size(); ++i)
    worst = std::max(worst, testref::rel_err(grads.b.v[i], testref::central_diff(loss, &layer.b.v[i])));
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, testref::rel_err(gx.v[i], testref::central_diff(loss, &x.v[i])));
  CHECK(worst < 1e-6);
}

TEST_CASE("dense gradients match central finite differences") {
  Rng rng(67);
  Dense layer = Dense::init(5, 4, rng);
  for (double& b : layer.b.v) b = rng.uniform(-0.2, 0.2);
  Tensor x = random_tensor({5}, rng);
  Tensor weight = random_tensor({4}, rng);

  auto loss = [&] {
    const Tensor y = dense_forward(layer, x);
    double acc = 0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += weight.v[i] * y.v[i];
    return acc;
  };

  Dense grads = Dense::zeros(5, 4);
  const Tensor gx = dense_backward(layer, x, weight, grads);
  double worst = 0;
  for (std::size_t i = 0; i < layer.w.size(); ++i)
    worst = std::max(worst, testref::rel_err(grads.w.v[i], testref::central_diff(loss, &layer.w.v[i])));
  for (std::size_t i = 0; i < layer.b.size(); ++i)
    worst = std::max(worst, testref::rel_err(grads.b.v[i], testref::central_diff(loss, &layer.b.v[i])));
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, testref::rel_err(gx.v[i], testref::central_diff(loss, &x.v[i])));
  CHECK(worst < 1e-6);
}

TEST_CASE("relu and pooling gradients match finite differences away from kinks") {
  Rng rng(71);
  Tensor x = random_tensor({2, 4, 3}, rng);
  // keep all values clear of the ReLU kink and max ties
  for (double& v : x.v)
    if (std::abs(v) < 1e-3) v = v < 0 ? v - 1e-3 : v + 1e-3;
  Tensor weight = random_tensor({2}, rng);

  auto loss = [&] {
    const PoolResult r = global_max_pool(relu(x));
    return weight.v[0] * r.out[0] + weight.v[1] * r.out[1];
  };

  const PoolResult pool = global_max_pool(relu(x));
  Tensor g = Tensor::zeros({2});
  g.v = weight.v;
  const Tensor gx = relu_backward(x, global_max_pool_backward(pool.argmax, g, 4, 3));

  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, testref::rel_err(gx.v[i], testref::central_diff(loss, &x.v[i])));
  CHECK(worst < 1e-6);
}
