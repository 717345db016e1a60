#include <catch2/catch_amalgamated.hpp>

#include "qacts/adam.hpp"
#include "qacts/tape.hpp"
#include "support/grad_suite.hpp"
#include "support/oracles.hpp"

using namespace qacts;

TEST_CASE("matmul basics") {
  Tape tape;
  auto a = tensor_of({2, 2}, {1, 2, 3, 4});
  auto eye = tensor_of({2, 2}, {1, 0, 0, 1});
  auto c = tape.matmul(a, eye);
  REQUIRE(c->data == a->data);

  auto ones = tensor_of({2, 1}, {1, 1});
  auto prod = tape.matmul(a, ones);
  REQUIRE(prod->shape == Shape{2, 1});
  REQUIRE(prod->data[0] == 3.0);
  REQUIRE(prod->data[1] == 7.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  auto a = tensor({2, 3});
  auto b = tensor({2, 3});
  try {
    tape.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("(2,3)") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum matches finite differences") {
  Rng rng(4);
  auto a = oracle::rand_tensor({3, 2}, rng);
  auto b = oracle::rand_tensor({2, 3}, rng);
  oracle::GraphFn fn = [](Tape& t, const std::vector<TensorPtr>& in) {
    return t.sum(t.matmul(in[0], in[1]));
  };
  auto res = oracle::check_gradients(fn, {a, b});
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("softmax values") {
  Tape tape;
  auto x = tensor_of({2}, {0, 0});
  auto y = tape.softmax(x, 0);
  REQUIRE(y->data[0] == Catch::Approx(0.5));
  REQUIRE(y->data[1] == Catch::Approx(0.5));

  auto big = tensor_of({2}, {1000, 0});
  auto yb = tape.softmax(big, 0);
  REQUIRE(std::isfinite(yb->data[0]));
  REQUIRE(yb->data[0] == Catch::Approx(1.0));
  REQUIRE(yb->data[1] < 1e-300);

  REQUIRE_THROWS_AS(tape.softmax(x, 1), ShapeError);
}

TEST_CASE("softmax outputs lie on the probability simplex") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    auto x = oracle::rand_tensor({2 + rng.below(3), 2 + rng.below(3)}, rng, -30, 30, false);
    size_t axis = rng.below(2);
    auto y = tape.softmax(x, axis);
    for (double v : y->data) REQUIRE(v >= 0.0);
    size_t n = y->shape[axis];
    size_t inner = axis == 1 ? 1 : y->shape[1];
    size_t outer = y->size() / (n * inner);
    for (size_t o = 0; o < outer; ++o) {
      for (size_t in = 0; in < inner; ++in) {
        double s = 0.0;
        for (size_t t = 0; t < n; ++t) s += y->data[o * n * inner + t * inner + in];
        REQUIRE(std::fabs(s - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("permute shapes and involution") {
  Tape tape;
  Rng rng(11);
  auto x = oracle::rand_tensor({5, 2}, rng);
  auto t = tape.permute(x, {1, 0});
  REQUIRE(t->shape == Shape{2, 5});
  for (size_t i = 0; i < 5; ++i) {
    for (size_t j = 0; j < 2; ++j) {
      REQUIRE(t->data[j * 5 + i] == x->data[i * 2 + j]);
    }
  }
  auto ident = tape.permute(x, {0, 1});
  REQUIRE(ident->data == x->data);
  auto back = tape.permute(t, {1, 0});
  REQUIRE(back->data == x->data);

  REQUIRE_THROWS_AS(tape.permute(x, {0, 0}), ShapeError);
  REQUIRE_THROWS_AS(tape.permute(x, {0}), ShapeError);
}

TEST_CASE("permute then inverse is identity on gradients too") {
  Rng rng(13);
  auto x = oracle::rand_tensor({3, 4, 2}, rng);
  auto w = oracle::rand_tensor({3, 4, 2}, rng, -1, 1, false);
  Tape tape;
  auto roundtrip = tape.permute(tape.permute(x, {2, 0, 1}), {1, 2, 0});
  REQUIRE(roundtrip->data == x->data);
  auto loss = oracle::weighted_sum(tape, roundtrip, w);
  tape.backward(loss);
  for (size_t i = 0; i < x->size(); ++i) {
    REQUIRE(x->grad[i] == Catch::Approx(w->data[i]));
  }
}

TEST_CASE("concat values and errors") {
  Tape tape;
  auto a = tensor_of({2, 2}, {1, 2, 3, 4});
  auto b = tensor_of({2, 1}, {9, 8});
  auto c = tape.concat({a, b}, 1);
  REQUIRE(c->shape == Shape{2, 3});
  REQUIRE(c->data == std::vector<double>{1, 2, 9, 3, 4, 8});

  auto single = tape.concat({a}, 0);
  REQUIRE(single->data == a->data);

  auto bad = tensor({3, 2});
  REQUIRE_THROWS_AS(tape.concat({a, bad}, 1), ShapeError);
}

TEST_CASE("layer_norm of a constant row is zero before the affine") {
  Tape tape;
  auto x = tensor_of({1, 4}, {3.5, 3.5, 3.5, 3.5});
  auto gain = tensor_of({4}, {1, 1, 1, 1});
  auto bias = tensor_of({4}, {0, 0, 0, 0});
  auto y = tape.layer_norm(x, gain, bias, 1e-12);
  for (double v : y->data) REQUIRE(std::fabs(v) < 1e-6);
}

TEST_CASE("embedding lookup repeats rows and validates ids") {
  Tape tape;
  auto table = tensor_of({3, 2}, {1, 2, 3, 4, 5, 6});
  auto out = tape.embedding_lookup(table, {0, 0});
  REQUIRE(out->data == std::vector<double>{1, 2, 1, 2});
  REQUIRE_THROWS_AS(tape.embedding_lookup(table, {3}), ValidationError);
  REQUIRE_THROWS_AS(tape.embedding_lookup(table, {-1}), ValidationError);
}

TEST_CASE("dropout eval mode and zero rate are identity") {
  Tape tape;
  Rng rng(3);
  auto x = oracle::rand_tensor({4, 4}, rng);
  REQUIRE(tape.dropout(x, 0.5, rng, false) == x);
  REQUIRE(tape.dropout(x, 0.0, rng, true) == x);
  auto dropped = tape.dropout(x, 0.5, rng, true);
  size_t zeros = 0;
  for (size_t i = 0; i < x->size(); ++i) {
    if (dropped->data[i] == 0.0) {
      ++zeros;
    } else {
      REQUIRE(dropped->data[i] == Catch::Approx(x->data[i] * 2.0));
    }
  }
  REQUIRE(zeros > 0);
  REQUIRE(zeros < x->size());
}

TEST_CASE("backward basics") {
  {
    Tape tape;
    auto x = tensor_of({3}, {1, 2, 3}, true);
    auto loss = tape.sum(x);
    tape.backward(loss);
    REQUIRE(x->grad == std::vector<double>{1, 1, 1});
  }
  {
    Tape tape;
    auto x = scalar(1.5, true);
    auto loss = tape.sum(tape.mul(x, x));
    tape.backward(loss);
    REQUIRE(x->grad[0] == Catch::Approx(3.0));
  }
  {
    Tape tape;
    auto x = tensor_of({2, 2}, {1, 2, 3, 4}, true);
    auto y = tape.scale(x, 2.0);
    REQUIRE_THROWS_AS(tape.backward(y), ShapeError);
  }
  {
    Tape tape;
    auto x = scalar(1.0, true);
    REQUIRE_THROWS_AS(tape.backward(x), Error);
  }
}

TEST_CASE("gradients accumulate additively on fan-out") {
  Tape tape;
  auto x = tensor_of({3}, {1, 2, 3}, true);
  auto y = tape.add(x, x);
  Rng rng(5);
  auto w = oracle::rand_tensor({3}, rng, -1, 1, false);
  auto loss = oracle::weighted_sum(tape, y, w);
  tape.backward(loss);
  for (size_t i = 0; i < 3; ++i) {
    REQUIRE(x->grad[i] == Catch::Approx(2.0 * w->data[i]));
  }
}

TEST_CASE("finite-difference suite over all ops, several seeds") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto errs = oracle::gradient_suite(seed);
    for (const auto& [op, err] : errs) {
      INFO("op " << op << " seed " << seed);
      if (op == "matmul" || op == "softmax") {
        REQUIRE(err < 1e-6);
      } else {
        REQUIRE(err < 1e-4);
      }
    }
  }
}

TEST_CASE("non-finite outputs raise in debug-checked mode") {
  debug_checks() = true;
  Tape tape;
  auto x = tensor_of({2}, {-1.0, 0.5});
  REQUIRE_THROWS_AS(tape.neg_log(x), Error);  // log of a negative
  debug_checks() = false;
  auto y = tape.neg_log(x);
  REQUIRE(std::isnan(y->data[0]));
}

TEST_CASE("adam: fresh state with zero gradient leaves parameters unchanged") {
  auto w = tensor_of({3}, {1, 2, 3}, true);
  w->ensure_grad();  // all zeros
  ParamList params = {{"w", w}};
  Adam adam(0.1);
  adam.step(params);
  REQUIRE(w->data == std::vector<double>{1, 2, 3});
}

TEST_CASE("adam descends on w^2") {
  auto w = scalar(1.0, true);
  ParamList params = {{"w", w}};
  Adam adam(0.1);
  Tape tape;
  auto loss = tape.sum(tape.mul(w, w));
  tape.backward(loss);
  adam.step(params);
  REQUIRE(w->data[0] < 1.0);
  REQUIRE(w->data[0] > 0.0);
}

TEST_CASE("adam converges on a convex quadratic within 200 steps") {
  // f(w) = 0.5 * sum c_i (w_i - a_i)^2, minimizer a
  std::vector<double> target = {0.7, -0.4, 1.1};
  std::vector<double> curv = {1.0, 2.0, 0.5};
  auto w = tensor_of({3}, {0, 0, 0}, true);
  ParamList params = {{"w", w}};
  Adam adam(0.05);
  for (int step = 0; step < 200; ++step) {
    w->ensure_grad();
    for (size_t i = 0; i < 3; ++i) w->grad[i] = curv[i] * (w->data[i] - target[i]);
    adam.step(params);
    w->clear_grad();
  }
  for (size_t i = 0; i < 3; ++i) {
    REQUIRE(std::fabs(w->data[i] - target[i]) < 1e-3);
  }
}

TEST_CASE("freeze and unfreeze control adam updates") {
  auto a = tensor_of({2}, {1, 1}, true);
  auto b = tensor_of({2}, {1, 1}, true);
  ParamList params = {{"a", a}, {"b", b}};
  std::set<std::string> frozen;
  freeze(params, {"a", "b"}, frozen);
  a->ensure_grad();
  b->ensure_grad();
  a->grad = {1, 1};
  b->grad = {1, 1};
  Adam adam(0.1);
  adam.step(params, frozen);
  REQUIRE(a->data == std::vector<double>{1, 1});
  REQUIRE(b->data == std::vector<double>{1, 1});

  unfreeze(params, {"b"}, frozen);
  adam.step(params, frozen);
  REQUIRE(a->data == std::vector<double>{1, 1});
  REQUIRE(b->data[0] < 1.0);

  REQUIRE_THROWS_AS(freeze(params, {"nope"}, frozen), ValidationError);
  REQUIRE_THROWS_AS(unfreeze(params, {"nope"}, frozen), ValidationError);
}
