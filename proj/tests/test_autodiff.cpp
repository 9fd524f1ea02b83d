#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "vmt/errors.hpp"
#include "vmt/grad_check.hpp"
#include "vmt/rng.hpp"
#include "vmt/tape.hpp"

using namespace vmt;

namespace {

Tensor random_tensor(RngStream& rng, std::vector<int64_t> shape, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Runs finite_diff_check for a scalar-valued graph builder against the
// tape's own backward pass.
void check_gradient(const std::function<Tensor(Tape&, const Tensor&)>& build, const Tensor& point,
                    double step = 1e-6, double tol = 1e-5) {
  Tape tape;
  Tensor x = tape.leaf(point);
  Tensor y = build(tape, x);
  Gradients g = tape.backward(y);
  auto fn = [&](const Tensor& p) {
    Tape t2;
    Tensor x2 = t2.leaf(p);
    return build(t2, x2).item();
  };
  FdReport rep = finite_diff_check(fn, point, g.at(x), step, tol);
  INFO("max_rel_err=", rep.max_rel_err, " worst=", rep.worst_coord);
  CHECK(rep.pass);
}

}  // namespace

TEST_CASE("matmul forward matches hand value") {
  Tape t;
  Tensor c = t.matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 2}, {5, 6, 7, 8}));
  CHECK(c[0] == 19.0);
  CHECK(c[1] == 22.0);
  CHECK(c[2] == 43.0);
  CHECK(c[3] == 50.0);
}

TEST_CASE("relu forward and backward at a hand-checked point") {
  Tape t;
  Tensor x = t.leaf(Tensor({2}, {-1.0, 2.0}));
  Tensor y = t.mean(t.relu(x));
  CHECK(y.item() == 1.0);
  Gradients g = t.backward(y);
  CHECK(g.at(x)[0] == 0.0);
  CHECK(g.at(x)[1] == 0.5);
}

TEST_CASE("log gradient at 2 is one half") {
  Tape t;
  Tensor x = t.leaf(Tensor::scalar(2.0));
  Tensor y = t.sum(t.log(x));
  Gradients g = t.backward(y);
  CHECK(g.at(x)[0] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("softmax hand value, row sums, shift invariance") {
  Tape t;
  Tensor p = t.softmax(Tensor({1, 2}, {std::log(1.0), std::log(3.0)}));
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-12));

  RngStream rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = 1 + rng.uniform_int(8), k = 1 + rng.uniform_int(9);
    Tensor z = random_tensor(rng, {n, k}, 3.0);
    Tape tt;
    Tensor probs = tt.softmax(z);
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < k; ++j) {
        s += probs.at(i, j);
        CHECK(probs.at(i, j) >= 0.0);
      }
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
    const double c = rng.uniform(-50.0, 50.0);
    Tensor shifted = z.detached();
    for (int64_t i = 0; i < shifted.size(); ++i) shifted[i] += c;
    Tensor probs2 = tt.softmax(shifted);
    for (int64_t i = 0; i < probs.size(); ++i) {
      CHECK(std::fabs(probs[i] - probs2[i]) <= 1e-12);
    }
  }

  // Far outside naive exp range.
  Tape tt;
  Tensor big = tt.softmax(Tensor({1, 2}, {1000.0, 1000.0}));
  CHECK(big[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sum and mean backward broadcast the adjoint") {
  Tape t;
  Tensor x = t.leaf(Tensor({4}, {1, 2, 3, 4}));
  Gradients gs = t.backward(t.sum(x));
  for (int64_t i = 0; i < 4; ++i) CHECK(gs.at(x)[i] == 1.0);
  Gradients gm = t.backward(t.mean(x));
  for (int64_t i = 0; i < 4; ++i) CHECK(gm.at(x)[i] == 0.25);
}

TEST_CASE("fan-out accumulates: d(x+x)/dx = 2") {
  Tape t;
  Tensor x = t.leaf(Tensor::scalar(1.5));
  Tensor y = t.sum(t.add(x, x));
  Gradients g = t.backward(y);
  CHECK(g.at(x)[0] == 2.0);
}

TEST_CASE("mul routes each adjoint to the other operand") {
  Tape t;
  Tensor x = t.leaf(Tensor({3}, {1, 2, 3}));
  Tensor y = t.leaf(Tensor({3}, {4, 5, 6}));
  Gradients g = t.backward(t.sum(t.mul(x, y)));
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(g.at(x)[i] == y[i]);
    CHECK(g.at(y)[i] == x[i]);
  }
}

TEST_CASE("add_bias backward sums the bias adjoint over rows") {
  Tape t;
  Tensor x = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  Tensor b = t.leaf(Tensor({2}, {10, 20}));
  Gradients g = t.backward(t.sum(t.add_bias(x, b)));
  CHECK(g.at(b)[0] == 2.0);
  CHECK(g.at(b)[1] == 2.0);
  CHECK(g.at(x)[3] == 1.0);
}

TEST_CASE("concat, slice and gather scatter adjoints to the right rows") {
  Tape t;
  Tensor a = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  Tensor b = t.leaf(Tensor({1, 2}, {5, 6}));
  Tensor cat = t.concat_rows({a, b});
  CHECK(cat.rows() == 3);
  CHECK(cat[4] == 5.0);

  Tensor sl = t.slice_rows(cat, 1, 3);
  Gradients g = t.backward(t.sum(sl));
  CHECK(g.at(a)[0] == 0.0);
  CHECK(g.at(a)[2] == 1.0);
  CHECK(g.at(b)[0] == 1.0);

  Tape t2;
  Tensor m = t2.leaf(Tensor({3, 1}, {7, 8, 9}));
  Tensor picked = t2.gather_rows(m, {2, 0, 2});
  CHECK(picked[0] == 9.0);
  Gradients g2 = t2.backward(t2.sum(picked));
  CHECK(g2.at(m)[0] == 1.0);
  CHECK(g2.at(m)[1] == 0.0);
  CHECK(g2.at(m)[2] == 2.0);
}

TEST_CASE("generic apply entry point matches the named wrapper") {
  Tape t;
  Tensor a = t.leaf(Tensor({2}, {1, 2}));
  Tensor b = t.leaf(Tensor({2}, {3, 4}));
  Tensor via_apply = t.apply(Prim::add, {a, b});
  Tensor via_named = t.add(a, b);
  CHECK(via_apply[0] == via_named[0]);
  CHECK(via_apply[1] == via_named[1]);
}

TEST_CASE("every primitive passes a finite-difference sweep") {
  RngStream rng(31);
  const int trials_per_prim = 12;

  for (int trial = 0; trial < trials_per_prim; ++trial) {
    const int64_t n = 2 + rng.uniform_int(4), k = 2 + rng.uniform_int(4);
    const Tensor w = random_tensor(rng, {k, 3});
    const Tensor y = random_tensor(rng, {n, k});
    const Tensor b = random_tensor(rng, {k});
    const std::vector<int64_t> perm = rng.permutation(n);

    check_gradient([&](Tape& t, const Tensor& x) { return t.mean(t.matmul(x, t.leaf(w))); },
                   random_tensor(rng, {n, k}));

    check_gradient([&](Tape& t, const Tensor& x) { return t.sum(t.relu(x)); },
                   random_tensor(rng, {n, k}));

    check_gradient([&](Tape& t, const Tensor& x) { return t.mean(t.exp(x)); },
                   random_tensor(rng, {n, k}, 0.5));

    check_gradient(
        [&](Tape& t, const Tensor& x) { return t.sum(t.log(t.clamp_min(t.exp(x), 1e-30))); },
        random_tensor(rng, {n}, 0.5));

    check_gradient(
        [&](Tape& t, const Tensor& x) { return t.mean(t.mul(t.add(x, t.leaf(y)), t.neg(x))); },
        random_tensor(rng, {n, k}));

    check_gradient(
        [&](Tape& t, const Tensor& x) {
          return t.mean(t.sigmoid(t.scale(t.add_bias(x, t.leaf(b)), 1.7)));
        },
        random_tensor(rng, {n, k}));

    check_gradient([&](Tape& t, const Tensor& x) { return t.mean(t.mul(t.softmax(x), x)); },
                   random_tensor(rng, {n, k}, 2.0));

    check_gradient(
        [&](Tape& t, const Tensor& x) {
          Tensor top = t.slice_rows(x, 0, n / 2);
          Tensor rest = t.slice_rows(x, n / 2, n);
          Tensor again = t.concat_rows({rest, top});
          return t.mean(t.mul(again, t.gather_rows(x, perm)));
        },
        random_tensor(rng, {n, k}));

    check_gradient([&](Tape& t, const Tensor& x) { return t.sum(t.clamp(x, -0.8, 0.8)); },
                   random_tensor(rng, {n, k}));
  }
}

TEST_CASE("finite_diff_check hand examples") {
  auto square = [](const Tensor& p) { return p[0] * p[0]; };
  FdReport rep =
      finite_diff_check(square, Tensor::scalar(3.0), Tensor::scalar(6.0), 1e-5, 1e-6);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-6);

  auto constant = [](const Tensor&) { return 5.0; };
  FdReport repc =
      finite_diff_check(constant, Tensor::scalar(1.0), Tensor::scalar(0.0), 1e-5, 1e-9);
  CHECK(repc.pass);
  CHECK(repc.max_rel_err == 0.0);

  FdReport bad = finite_diff_check(square, Tensor::scalar(3.0), Tensor::scalar(5.9), 1e-5, 1e-6);
  CHECK_FALSE(bad.pass);
  CHECK(bad.worst_coord == 0);
}

TEST_CASE("replaying a composite gives bit-identical values") {
  auto run = [] {
    RngStream rng(77);
    Tape t;
    Tensor x = t.leaf(random_tensor(rng, {5, 3}));
    Tensor w = t.leaf(random_tensor(rng, {3, 4}));
    Tensor y = t.mean(t.softmax(t.matmul(t.relu(x), w)));
    return y.item();
  };
  CHECK(run() == run());
}

TEST_CASE("error contracts") {
  Tape t;

  CHECK_THROWS_WITH_AS(t.matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5})),
                       doctest::Contains("matmul"), ShapeError);
  try {
    t.matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }

  CHECK_THROWS_WITH_AS(t.add(Tensor::zeros({2}), Tensor::zeros({3})), doctest::Contains("add"),
                       ShapeError);
  CHECK_THROWS_WITH_AS(t.exp(Tensor({1}, {1000.0})), doctest::Contains("exp"), NumericError);
  CHECK_THROWS_AS(t.log(Tensor({1}, {0.0})), NumericError);
  CHECK_THROWS_AS(t.leaf(Tensor({1}, {std::nan("")})), NumericError);
  CHECK_THROWS_AS(t.mean(Tensor::zeros({0})), ValueError);
  CHECK_THROWS_WITH_AS(t.softmax(Tensor::zeros({2, 0})), doctest::Contains("class axis"),
                       ShapeError);

  Tensor v = t.leaf(Tensor({2}, {1, 2}));
  CHECK_THROWS_WITH_AS(t.backward(v), doctest::Contains("scalar"), ValueError);
  CHECK_THROWS_AS(t.backward(Tensor::scalar(1.0)), ValueError);

  Tape other;
  Tensor foreign = other.leaf(Tensor({2}, {1, 2}));
  CHECK_THROWS_WITH_AS(t.add(foreign, foreign), doctest::Contains("different tape"), ValueError);

  Tensor s = t.sum(v);
  Gradients g = t.backward(s);
  Tensor unrelated = t.leaf(Tensor({1}, {1.0}));
  CHECK_FALSE(g.has(unrelated));
  CHECK_THROWS_AS(g.at(unrelated), ValueError);
}
