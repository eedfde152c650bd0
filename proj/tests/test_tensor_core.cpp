#include <cmath>
#include <numbers>

#include "test_util.hpp"

using namespace mvt;
using mvt::testing::check_gradient;
using mvt::testing::matrix_tensor;
using mvt::testing::random_tensor;
using mvt::testing::weighted_sum;

namespace {

// Maclaurin series for erf, independent of std::erf.
double erf_series(double x) {
  double term = x, total = x;
  for (int n = 1; n < 60; ++n) {
    term *= -x * x / n;
    total += term / (2 * n + 1);
  }
  return 2.0 / std::sqrt(std::numbers::pi) * total;
}

Var<double> constant(Tensor<double> t) { return Var<double>::constant(std::move(t)); }

}  // namespace

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, Vector<double>::Zero(3)), DimensionError);
  Tensor<double> t(Shape{2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 12);
  CHECK_THROWS_AS(t.reshaped(Shape{5, 5}), DimensionError);
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    const auto y = matmul(constant(matrix_tensor({{1, 0}, {0, 1}})), constant(matrix_tensor({{1, 2}, {3, 4}})));
    CHECK(y.value() == matrix_tensor({{1, 2}, {3, 4}}));
  }
  SUBCASE("projector selects a row") {
    const auto y = matmul(constant(matrix_tensor({{1, 0}, {0, 0}})), constant(matrix_tensor({{5}, {7}})));
    CHECK(y.value() == matrix_tensor({{5}, {0}}));
  }
  SUBCASE("matches a triple loop") {
    std::mt19937_64 rng(11);
    const auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    const auto y = matmul(constant(a), constant(b)).value();
    for (Index i = 0; i < 3; ++i) {
      for (Index j = 0; j < 2; ++j) {
        double acc = 0;
        for (Index k = 0; k < 4; ++k) acc += a.at(i, k) * b.at(k, j);
        CHECK(std::abs(y.at(i, j) - acc) < 1e-12);
      }
    }
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      matmul(constant(Tensor<double>(Shape{2, 3})), constant(Tensor<double>(Shape{2, 3})));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3] x [2x3]") != std::string::npos);
    }
  }
}

TEST_CASE("softmax_rows") {
  CHECK(softmax_rows(constant(matrix_tensor({{0, 0}}))).value() == matrix_tensor({{0.5, 0.5}}));
  const auto y = softmax_rows(constant(matrix_tensor({{std::log(2.0), 0}}))).value();
  CHECK(std::abs(y[0] - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(y[1] - 1.0 / 3.0) < 1e-15);

  // 1/(1+e^-1000) and e^-1000/(1+e^-1000); the latter underflows to 0.
  const auto big = softmax_rows(constant(matrix_tensor({{1000, 0}}))).value();
  CHECK(std::abs(big[0] - 1.0) < 1e-12);
  CHECK(std::abs(big[1]) < 1e-12);
  CHECK(big.all_finite());

  CHECK_THROWS_AS(softmax_rows(constant(matrix_tensor({{std::nan(""), 0}}))), NumericError);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = softmax_rows(constant(random_tensor({5, 7}, rng, -50, 50))).value();
    for (Index r = 0; r < 5; ++r) {
      double s = 0;
      for (Index c = 0; c < 7; ++c) {
        CHECK(p.at(r, c) >= 0);
        s += p.at(r, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("gelu") {
  const auto y = gelu(constant(matrix_tensor({{0, 1, 40, -40}}))).value();
  CHECK(y[0] == 0.0);
  CHECK(std::abs(y[1] - 0.5 * (1 + erf_series(1 / std::sqrt(2.0)))) < 1e-14);
  CHECK(std::abs(y[2] - 40.0) < 1e-12);
  CHECK(std::abs(y[3]) < 1e-12);
}

TEST_CASE("backward basics") {
  SUBCASE("sum of W·x gives outer structure of x") {
    Tape<double> tape;
    const auto w = tape.leaf(matrix_tensor({{1, 2, 3}, {4, 5, 6}}), true);
    const auto x = tape.leaf(matrix_tensor({{7}, {8}, {9}}));
    tape.backward(sum(matmul(w, x)));
    REQUIRE(w.grad());
    CHECK(*w.grad() == matrix_tensor({{7, 8, 9}, {7, 8, 9}}));
    CHECK(x.grad() == nullptr);
  }
  SUBCASE("unused parameter gets an exact zero") {
    Tape<double> tape;
    ParamStore<double> params{{"a", matrix_tensor({{2}})}, {"unused", matrix_tensor({{3}})}};
    const auto vars = bind_params(tape, params, true);
    tape.backward(sum(mul(vars.at("a"), vars.at("a"))));
    const auto grads = collect_grads(vars);
    CHECK(grads.at("a")[0] == 4.0);
    CHECK(grads.at("unused")[0] == 0.0);
  }
  SUBCASE("non-scalar loss is a contract error") {
    Tape<double> tape;
    const auto w = tape.leaf(matrix_tensor({{1, 2}}), true);
    CHECK_THROWS_AS(tape.backward(scale(w, 2.0)), ContractError);
  }
  SUBCASE("each node is visited once along shared paths") {
    Tape<double> tape;
    const auto x = tape.leaf(matrix_tensor({{3}}), true);
    const auto y = add(x, x);                 // 2x
    tape.backward(sum(mul(y, y)));            // 4x² → 8x = 24
    CHECK(x.grad()->data()[0] == 24.0);
  }
}

TEST_CASE("finite_diff_check") {
  SUBCASE("square") {
    ParamStore<double> p{{"t", matrix_tensor({{3}})}};
    LossFn<double> f = [](Tape<double>&, const VarStore<double>& v) { return sum(mul(v.at("t"), v.at("t"))); };
    const auto [value, grads] = loss_and_grad(f, p);
    CHECK(value == 9.0);
    CHECK(std::abs(grads.at("t")[0] - 6.0) < 1e-8);
    const auto report = finite_diff_check(f, p, 1e-5, 1e-8);
    CHECK(report.passed);
    CHECK(report.max_abs_error < 1e-8);
  }
  SUBCASE("softmax cross-entropy on three logits") {
    ParamStore<double> p{{"z", matrix_tensor({{0.3, -1.2, 2.0}})}};
    const int label = 1;
    LossFn<double> f = [&](Tape<double>&, const VarStore<double>& v) {
      return cross_entropy(v.at("z"), std::span<const int>(&label, 1));
    };
    const auto report = finite_diff_check(f, p, 1e-5, 1e-6);
    CHECK(report.passed);
  }
  SUBCASE("constant objective") {
    ParamStore<double> p{{"t", matrix_tensor({{1, 2}})}};
    LossFn<double> f = [](Tape<double>&, const VarStore<double>&) {
      return Var<double>::constant(Tensor<double>::scalar(5.0));
    };
    const auto report = finite_diff_check(f, p, 1e-5, 1e-8);
    CHECK(report.grad_norm == 0.0);
    CHECK(report.passed);
  }
  SUBCASE("non-finite objective") {
    ParamStore<double> p{{"t", matrix_tensor({{1}})}};
    LossFn<double> f = [](Tape<double>&, const VarStore<double>& v) {
      return scale(v.at("t"), std::numeric_limits<double>::infinity());
    };
    CHECK_THROWS_AS(finite_diff_check(f, p, 1e-5, 1e-4), NumericError);
  }
}

TEST_CASE("structural ops") {
  const auto a = matrix_tensor({{1, 2, 3}, {4, 5, 6}});
  SUBCASE("add / sub / mul / scale") {
    const auto b = matrix_tensor({{1, 1, 1}, {2, 2, 2}});
    CHECK(add(constant(a), constant(b)).value() == matrix_tensor({{2, 3, 4}, {6, 7, 8}}));
    CHECK(sub(constant(a), constant(b)).value() == matrix_tensor({{0, 1, 2}, {2, 3, 4}}));
    CHECK(mul(constant(a), constant(b)).value() == matrix_tensor({{1, 2, 3}, {8, 10, 12}}));
    CHECK(scale(constant(a), 2.0).value() == matrix_tensor({{2, 4, 6}, {8, 10, 12}}));
    CHECK_THROWS_AS(add(constant(a), constant(matrix_tensor({{1, 2}}))), DimensionError);
  }
  SUBCASE("bias is the only broadcast") {
    const auto y = add_bias(constant(a), constant(Tensor<double>(Shape{3}, Vector<double>::LinSpaced(3, 10, 30))));
    CHECK(y.value() == matrix_tensor({{11, 22, 33}, {14, 25, 36}}));
    CHECK_THROWS_AS(add_bias(constant(a), constant(Tensor<double>(Shape{2}))), DimensionError);
  }
  SUBCASE("transpose / reshape round trips are exact") {
    std::mt19937_64 rng(5);
    const auto r = random_tensor({4, 6}, rng);
    CHECK(transpose(transpose(constant(r))).value() == r);
    CHECK(reshape(reshape(constant(r), {3, 8}), {4, 6}).value() == r);
    CHECK(transpose(constant(a)).value() == matrix_tensor({{1, 4}, {2, 5}, {3, 6}}));
  }
  SUBCASE("concat and slice") {
    const std::vector<Var<double>> parts{constant(a), constant(matrix_tensor({{7, 8, 9}}))};
    const auto rows = concat(std::span<const Var<double>>(parts), 0);
    CHECK(rows.value() == matrix_tensor({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}));
    CHECK(slice(rows, 0, 1, 2).value() == matrix_tensor({{4, 5, 6}, {7, 8, 9}}));
    CHECK(slice(rows, 1, 2, 1).value() == matrix_tensor({{3}, {6}, {9}}));
    const std::vector<Var<double>> cols{constant(a), constant(matrix_tensor({{0}, {1}}))};
    CHECK(concat(std::span<const Var<double>>(cols), 1).value() == matrix_tensor({{1, 2, 3, 0}, {4, 5, 6, 1}}));
    CHECK_THROWS_AS(concat(std::span<const Var<double>>(cols), 0), DimensionError);
    CHECK_THROWS_AS(slice(rows, 0, 2, 2), DimensionError);
  }
  SUBCASE("reductions") {
    CHECK(mean(constant(a), 0).value() == Tensor<double>(Shape{3}, Vector<double>::LinSpaced(3, 2.5, 4.5)));
    CHECK(mean(constant(a), 1).value() == Tensor<double>(Shape{2}, (Vector<double>(2) << 2, 5).finished()));
    CHECK(sum(constant(a)).value()[0] == 21.0);
    CHECK(segment_mean(constant(a), 2).value() == matrix_tensor({{2.5, 3.5, 4.5}}));
  }
  SUBCASE("row plumbing") {
    CHECK(tile_rows(constant(matrix_tensor({{1, 2}})), 3).value() == matrix_tensor({{1, 2}, {1, 2}, {1, 2}}));
    const auto mixed = interleave_rows(constant(matrix_tensor({{0, 0}, {9, 9}})), 1,
                                       constant(matrix_tensor({{1, 1}, {2, 2}, {3, 3}, {4, 4}})), 2);
    CHECK(mixed.value() == matrix_tensor({{0, 0}, {1, 1}, {2, 2}, {9, 9}, {3, 3}, {4, 4}}));
    const std::vector<Index> idx{1, 1, 0};
    CHECK(gather_rows(constant(a), std::span<const Index>(idx)).value() ==
          matrix_tensor({{4, 5, 6}, {4, 5, 6}, {1, 2, 3}}));
  }
  SUBCASE("cross entropy") {
    const std::vector<int> labels{0, 3};
    const auto uniform = cross_entropy(constant(Tensor<double>(Shape{2, 4})), labels);
    CHECK(std::abs(uniform.value()[0] - std::log(4.0)) < 1e-15);
    const std::vector<int> one{0};
    CHECK(cross_entropy(constant(matrix_tensor({{200, 0, 0}})), one).value()[0] < 1e-12);
    const std::vector<int> bad{4};
    CHECK_THROWS_AS(cross_entropy(constant(Tensor<double>(Shape{1, 4})), bad), ContractError);

    std::mt19937_64 rng(9);
    const auto z = random_tensor({5, 6}, rng, -4, 4);
    const std::vector<int> lab{0, 5, 2, 2, 1};
    double expected = 0;
    for (Index r = 0; r < 5; ++r) {
      double lse = 0;
      for (Index c = 0; c < 6; ++c) lse += std::exp(z.at(r, c));
      expected += std::log(lse) - z.at(r, lab[static_cast<std::size_t>(r)]);
    }
    CHECK(std::abs(cross_entropy(constant(z), lab).value()[0] - expected / 5) < 1e-10);
  }
}

TEST_CASE("every differentiable op agrees with central differences") {
  std::mt19937_64 shape_rng(2024);
  std::uniform_int_distribution<Index> extent(1, 8);
  for (int trial = 0; trial < 6; ++trial) {
    const Index m = extent(shape_rng), k = extent(shape_rng), n = extent(shape_rng);
    CAPTURE(m);
    CAPTURE(k);
    CAPTURE(n);
    std::mt19937_64 rng(static_cast<std::uint64_t>(trial));
    ParamStore<double> p{{"a", random_tensor({m, k}, rng)},
                         {"b", random_tensor({k, n}, rng)},
                         {"c", random_tensor({m, k}, rng)},
                         {"g", random_tensor({k}, rng, 0.5, 1.5)},
                         {"bias", random_tensor({k}, rng)}};
    auto probe = [&](auto op) {
      LossFn<double> f = [op](Tape<double>&, const VarStore<double>& v) { return weighted_sum(op(v), 77); };
      check_gradient(f, p);
    };
    probe([](const VarStore<double>& v) { return matmul(v.at("a"), v.at("b")); });
    probe([](const VarStore<double>& v) { return add(v.at("a"), v.at("c")); });
    probe([](const VarStore<double>& v) { return sub(v.at("a"), v.at("c")); });
    probe([](const VarStore<double>& v) { return mul(v.at("a"), v.at("c")); });
    probe([](const VarStore<double>& v) { return scale(v.at("a"), -1.7); });
    probe([](const VarStore<double>& v) { return add_bias(v.at("a"), v.at("bias")); });
    probe([](const VarStore<double>& v) { return transpose(v.at("a")); });
    probe([m, k](const VarStore<double>& v) { return reshape(v.at("a"), {k, m}); });
    probe([](const VarStore<double>& v) {
      const std::vector<Var<double>> parts{v.at("a"), v.at("c")};
      return concat(std::span<const Var<double>>(parts), 0);
    });
    probe([](const VarStore<double>& v) {
      const std::vector<Var<double>> parts{v.at("a"), v.at("c")};
      return concat(std::span<const Var<double>>(parts), 1);
    });
    probe([k](const VarStore<double>& v) { return slice(v.at("a"), 1, k / 2, k - k / 2); });
    probe([](const VarStore<double>& v) { return mean(v.at("a"), 0); });
    probe([](const VarStore<double>& v) { return mean(v.at("a"), 1); });
    probe([](const VarStore<double>& v) { return sum(v.at("a")); });
    probe([](const VarStore<double>& v) { return softmax_rows(scale(v.at("a"), 3.0)); });
    probe([](const VarStore<double>& v) { return gelu(scale(v.at("a"), 2.0)); });
    probe([](const VarStore<double>& v) { return layer_norm(v.at("a"), v.at("g"), v.at("bias"), 1e-12); });
    probe([](const VarStore<double>& v) { return tile_rows(v.at("a"), 3); });
    probe([](const VarStore<double>& v) { return interleave_rows(v.at("a"), 1, v.at("c"), 1); });
    probe([m](const VarStore<double>& v) {
      const std::vector<Index> rows{m - 1, 0, m - 1};
      return gather_rows(v.at("a"), std::span<const Index>(rows));
    });
    probe([m](const VarStore<double>& v) { return segment_mean(v.at("a"), m); });
    probe([m, k](const VarStore<double>& v) {
      std::vector<int> labels;
      for (Index r = 0; r < m; ++r) labels.push_back(static_cast<int>(r % k));
      return cross_entropy(v.at("a"), labels);
    });
  }
}

TEST_CASE("attention op gradient, with and without segments and masks") {
  std::mt19937_64 rng(31);
  ParamStore<double> p{{"q", random_tensor({6, 4}, rng)}, {"k", random_tensor({6, 4}, rng)},
                       {"v", random_tensor({6, 4}, rng)}};
  Mask causal = Mask::Constant(3, 3, false);
  for (Index r = 0; r < 3; ++r) causal.row(r).head(r + 1).setConstant(true);
  for (const Mask* mask : {static_cast<const Mask*>(nullptr), static_cast<const Mask*>(&causal)}) {
    for (Index heads : {1, 2}) {
      LossFn<double> f = [=](Tape<double>&, const VarStore<double>& v) {
        return weighted_sum(attention(v.at("q"), v.at("k"), v.at("v"), heads, 3, mask, 0.7), 5);
      };
      check_gradient(f, p);
    }
  }
  Mask dead = Mask::Constant(3, 3, true);
  dead.row(1).setConstant(false);
  const auto q = Var<double>::constant(p.at("q"));
  CHECK_THROWS_AS(attention(q, q, q, 1, 3, &dead, 1.0), ContractError);
  CHECK_THROWS_AS(attention(q, q, q, 3, 3, nullptr, 1.0), DimensionError);
  CHECK_THROWS_AS(attention(q, q, q, 1, 4, nullptr, 1.0), DimensionError);
}

TEST_CASE("backward is bit-reproducible") {
  std::mt19937_64 rng(8);
  ParamStore<double> p{{"a", random_tensor({5, 4}, rng)}, {"b", random_tensor({4, 4}, rng)},
                       {"g", random_tensor({4}, rng)}, {"z", random_tensor({4}, rng)}};
  LossFn<double> f = [](Tape<double>&, const VarStore<double>& v) {
    const auto h = layer_norm(matmul(v.at("a"), v.at("b")), v.at("g"), v.at("z"), 1e-12);
    const auto y = attention(h, h, h, 2, 5, nullptr, 0.5);
    return weighted_sum(gelu(y), 3);
  };
  const auto first = loss_and_grad(f, p).second;
  const auto second = loss_and_grad(f, p).second;
  for (const auto& [name, g] : first) CHECK(g == second.at(name));
}

TEST_CASE("tape accounting") {
  Tape<double> tape;
  const auto w = tape.leaf(Tensor<double>(Shape{4, 4}), true);
  const auto y = matmul(w, w);
  CHECK(tape.size() == 1);
  CHECK(tape.live_bytes() == 2 * 16 * sizeof(double));
  tape.backward(sum(y));
  CHECK(tape.live_bytes() > 2 * 16 * sizeof(double));
  // Untracked inputs record nothing.
  Tape<double> frozen;
  const auto c = frozen.leaf(Tensor<double>(Shape{2, 2}), false);
  matmul(c, c);
  CHECK(frozen.size() == 0);
}
