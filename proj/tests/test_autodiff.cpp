#include <doctest.h>

#include <cmath>
#include <random>

#include "xconst/autodiff.hpp"
#include "xconst/error.hpp"

using namespace xconst;
using namespace xconst::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(shape);
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.storage()) v = n(rng);
  return t;
}

// Checks d/dx sum(op(x...) * w) against central differences for every input.
void check_op(const std::function<Var(Graph&, std::vector<Var>&)>& op, std::vector<Tensor> inputs,
              std::uint64_t seed = 1, double tol = 1e-6) {
  std::mt19937_64 rng(seed);
  Tensor weights;
  auto loss = [&](bool keep, std::vector<Tensor>* grads) {
    Graph g;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(g.param(t, true));
    Var out = op(g, vars);
    if (weights.empty()) weights = random_tensor(out.shape(), rng);
    Var l = sum(mul(out, g.input(weights)));
    if (keep) {
      g.backward(l);
      for (auto& v : vars) grads->push_back(g.grad(v));
    }
    return l.value().item();
  };
  std::vector<Tensor> grads;
  loss(true, &grads);
  std::vector<GradCheckTarget> targets;
  for (std::size_t i = 0; i < inputs.size(); ++i) targets.push_back({&inputs[i], &grads[i]});
  const auto r = grad_check([&] { return loss(false, nullptr); }, targets, 1e-5, 60, seed);
  CHECK(r.checked == 60);
  CHECK(r.max_rel_error < tol);
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.dim(-1) == 3);
  CHECK(t.at(1, 2) == 1.5);
  CHECK(t.all_finite());
  t[4] = std::nan("");
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS(Tensor({2, 2}, std::vector<double>{1, 2, 3}));
  CHECK(shape_str({2, 3}) == "[2,3]");
}

TEST_CASE("elementwise and matrix ops: gradients") {
  std::mt19937_64 rng(7);
  check_op([](Graph&, auto& v) { return matmul(v[0], v[1]); }, {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)});
  check_op([](Graph&, auto& v) { return matmul_nt(v[0], v[1]); }, {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)});
  check_op([](Graph&, auto& v) { return transpose(v[0]); }, {random_tensor({3, 4}, rng)});
  check_op([](Graph&, auto& v) { return add(v[0], v[1]); }, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  check_op([](Graph&, auto& v) { return sub(v[0], v[1]); }, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  check_op([](Graph&, auto& v) { return mul(v[0], v[1]); }, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  check_op([](Graph&, auto& v) { return scale(v[0], -2.5); }, {random_tensor({4}, rng)});
  check_op([](Graph&, auto& v) { return exp(v[0]); }, {random_tensor({2, 3}, rng)});
  check_op([](Graph&, auto& v) { return sum(v[0]); }, {random_tensor({2, 3}, rng)});
  check_op([](Graph&, auto& v) { return mean(v[0]); }, {random_tensor({2, 3}, rng)});
  check_op([](Graph&, auto& v) { return expand_rows(v[0], 4); }, {random_tensor({3}, rng)});
  check_op([](Graph&, auto& v) { return mul(v[0], v[0]); }, {random_tensor({5}, rng)});  // fan-out
}

TEST_CASE("indexing ops: gradients") {
  std::mt19937_64 rng(8);
  const std::vector<int> rows = {2, 0, 2, 1};
  check_op([&](Graph&, auto& v) { return gather_rows(v[0], rows); }, {random_tensor({3, 4}, rng)});
  const std::vector<int> cols = {1, 3, 0};
  check_op([&](Graph&, auto& v) { return select_cols(v[0], cols); }, {random_tensor({3, 4}, rng)});
  check_op([](Graph&, auto& v) {
    const Var parts[] = {v[0], v[1]};
    return concat(parts, 0);
  }, {random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)});
  check_op([](Graph&, auto& v) {
    const Var parts[] = {v[0], v[1]};
    return concat(parts, 1);
  }, {random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)});
  check_op([](Graph&, auto& v) { return slice(v[0], 0, 1, 3); }, {random_tensor({4, 3}, rng)});
  check_op([](Graph&, auto& v) { return slice(v[0], 1, 1, 2); }, {random_tensor({4, 3}, rng)});
  check_op([](Graph&, auto& v) { return reshape(v[0], {3, 4}); }, {random_tensor({2, 6}, rng)});
}

TEST_CASE("nonlinear ops: gradients") {
  std::mt19937_64 rng(9);
  check_op([](Graph&, auto& v) { return layer_norm(v[0]); }, {random_tensor({3, 5}, rng)});
  check_op([](Graph&, auto& v) { return gelu(v[0]); }, {random_tensor({3, 5}, rng)});
  check_op([](Graph&, auto& v) { return softmax(v[0], -1); }, {random_tensor({3, 5}, rng)});
  check_op([](Graph&, auto& v) { return softmax(v[0], 0); }, {random_tensor({3, 5}, rng)});
  check_op([](Graph&, auto& v) { return log_softmax(v[0], -1); }, {random_tensor({3, 5}, rng)});
  check_op([](Graph&, auto& v) { return log_softmax(v[0], 0); }, {random_tensor({3, 5}, rng)});
}

TEST_CASE("causal attention: gradients and masking") {
  std::mt19937_64 rng(10);
  const int batch = 2, seq = 4, heads = 2, d = 6;
  std::vector<std::uint8_t> valid = {1, 1, 1, 1, 1, 1, 0, 0};
  check_op([&](Graph&, auto& v) { return causal_attention(v[0], v[1], v[2], batch, seq, heads, valid); },
           {random_tensor({batch * seq, d}, rng), random_tensor({batch * seq, d}, rng),
            random_tensor({batch * seq, d}, rng)});

  // Changing a later position never changes earlier outputs; padded keys are ignored.
  Tensor q = random_tensor({batch * seq, d}, rng), k = random_tensor({batch * seq, d}, rng),
         v = random_tensor({batch * seq, d}, rng);
  auto run = [&](const Tensor& kk, const Tensor& vv) {
    Graph g(false);
    return causal_attention(g.input(q), g.input(kk), g.input(vv), batch, seq, heads, valid).value();
  };
  const Tensor base = run(k, v);
  Tensor k2 = k, v2 = v;
  for (int j = 0; j < d; ++j) {
    k2.at(2, j) += 1.0;  // item 0, position 2
    v2.at(2, j) -= 3.0;
    k2.at(7, j) += 5.0;  // item 1, padded position 3
    v2.at(7, j) += 5.0;
  }
  const Tensor moved = run(k2, v2);
  for (int j = 0; j < d; ++j) {
    CHECK(moved.at(0, j) == base.at(0, j));
    CHECK(moved.at(1, j) == base.at(1, j));
    CHECK(moved.at(4, j) == base.at(4, j));
    CHECK(moved.at(5, j) == base.at(5, j));
  }
}

TEST_CASE("graph contracts") {
  Graph g;
  Var a = g.leaf(Tensor({2}, 1.0));
  Var b = g.input(Tensor({2}, 2.0));
  Var c = mul(a, b);
  CHECK_THROWS_AS(g.backward(c), ContractError);
  g.backward(sum(c));
  CHECK(g.grad(a).storage() == std::vector<double>{2.0, 2.0});
  CHECK_FALSE(b.requires_grad());

  Graph h;
  CHECK_THROWS_AS(add(a, h.leaf(Tensor({2}, 0.0))), ContractError);
  CHECK_THROWS_AS(matmul(g.input(Tensor({2, 3})), g.input(Tensor({2, 3}))), ShapeError);
}

TEST_CASE("frozen parameters get no gradient") {
  Graph g;
  Tensor w({2, 2}, 0.5), x({1, 2}, 1.0);
  Var frozen = g.param(w, false);
  Var live = g.param(x, true);
  g.backward(sum(matmul(live, frozen)));
  for (double v : g.grad(frozen).storage()) CHECK(v == 0.0);
  CHECK(g.grad(live).storage() == std::vector<double>{1.0, 1.0});
}

TEST_CASE("non-finite values raise") {
  Graph g;
  Var x = g.input(Tensor({1}, 1000.0));
  CHECK_THROWS_AS(exp(x), NumericError);
}

TEST_CASE("grad_check detects a wrong gradient") {
  Tensor x({3}, std::vector<double>{1.0, 2.0, 3.0});
  Tensor wrong({3}, std::vector<double>{2.0, 4.0, 7.0});  // true gradient of sum(x^2) is 2x
  const GradCheckTarget t[] = {{&x, &wrong}};
  const auto r = grad_check([&] { return x[0] * x[0] + x[1] * x[1] + x[2] * x[2]; }, t, 1e-5, 30, 2);
  CHECK(r.max_rel_error > 0.1);
  CHECK(x.storage() == std::vector<double>{1.0, 2.0, 3.0});
}
