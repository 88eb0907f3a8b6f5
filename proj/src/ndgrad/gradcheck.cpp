// SPDX-License-Identifier: Apache-2.0
#include "stemfit/ndgrad/gradcheck.hpp"

namespace stemfit::ndgrad {

namespace {

enum class Draw { kNormal, kPositive, kOffZero };

double draw(Rng& rng, Draw kind) {
  switch (kind) {
    case Draw::kPositive:
      return rng.uniform(0.2, 2.0);
    case Draw::kOffZero: {
      const double mag = rng.uniform(0.1, 1.5);
      return rng.bernoulli(0.5) ? mag : -mag;
    }
    case Draw::kNormal:
    default:
      return rng.normal();
  }
}

// loss = sum(w * op(inputs)) for a fixed random projection w.
template <class Op>
GradcheckResult check_op(const std::string& name, const std::vector<Shape>& shapes, Op op,
                         std::uint64_t seed, const GradcheckOptions& opt,
                         Draw kind = Draw::kNormal) {
  Rng rng(seed);
  std::vector<Tensor64> in64;
  std::vector<Tensor> in32;
  for (const Shape& s : shapes) {
    std::vector<float> v(numel_of(s));
    for (auto& x : v) x = static_cast<float>(draw(rng, kind));
    in32.emplace_back(s, v, true);
    in64.emplace_back(s, std::vector<double>(v.begin(), v.end()), true);
  }
  Shape out_shape;
  {
    NoGradGuard guard;
    out_shape = op(in64).shape();
  }
  std::vector<double> w(numel_of(out_shape));
  for (auto& x : w) x = static_cast<float>(rng.normal());
  const Tensor64 w64(out_shape, w);
  const Tensor w32(out_shape, std::vector<float>(w.begin(), w.end()));
  auto loss64 = [&] { return sum(mul(op(in64), w64)); };
  auto loss32 = [&] { return sum(mul(op(in32), w32)); };
  GradcheckOptions o = opt;
  o.seed = seed;
  return gradcheck(name, loss64, in64, loss32, in32, o);
}

}  // namespace

std::vector<GradcheckResult> run_op_suite(std::size_t seeds, const GradcheckOptions& opt) {
  std::vector<GradcheckResult> out;
  const Shape m34{3, 4};
  auto worst = [](std::vector<GradcheckResult>& runs) {
    GradcheckResult agg = runs.front();
    agg.passed = true;
    agg.entries = 0;
    for (const auto& r : runs) {
      agg.max_rel_error_f64 = std::max(agg.max_rel_error_f64, r.max_rel_error_f64);
      agg.max_rel_error_f32 = std::max(agg.max_rel_error_f32, r.max_rel_error_f32);
      agg.entries += r.entries;
      agg.passed = agg.passed && r.passed;
    }
    return agg;
  };
  auto run = [&](const std::string& name, const std::vector<Shape>& shapes, auto op,
                 Draw kind = Draw::kNormal) {
    std::vector<GradcheckResult> runs;
    for (std::size_t s = 0; s < seeds; ++s) {
      runs.push_back(check_op(name, shapes, op, 1000 + s * 7919 + out.size(), opt, kind));
    }
    out.push_back(worst(runs));
  };

  run("add", {m34, m34}, [](auto& x) { return add(x[0], x[1]); });
  run("add_broadcast", {m34, {4}}, [](auto& x) { return add(x[0], x[1]); });
  run("sub", {m34, m34}, [](auto& x) { return sub(x[0], x[1]); });
  run("mul", {m34, m34}, [](auto& x) { return mul(x[0], x[1]); });
  run("mul_broadcast", {m34, {4}}, [](auto& x) { return mul(x[0], x[1]); });
  run("mul_scalar", {m34, {}}, [](auto& x) { return mul(x[0], x[1]); });
  run("div", {m34, m34}, [](auto& x) { return div(x[0], x[1]); }, Draw::kPositive);
  run("shared_input", {m34}, [](auto& x) { return add(mul(x[0], x[0]), exp(x[0])); });
  run("relu", {m34}, [](auto& x) { return relu(x[0]); }, Draw::kOffZero);
  run("gelu", {m34}, [](auto& x) { return gelu(x[0]); });
  run("exp", {m34}, [](auto& x) { return exp(x[0]); });
  run("log", {m34}, [](auto& x) { return log(x[0]); }, Draw::kPositive);
  run("matmul", {{3, 4}, {4, 5}}, [](auto& x) { return matmul(x[0], x[1]); });
  run("matmul_bt", {{3, 4}, {5, 4}}, [](auto& x) { return matmul_bt(x[0], x[1]); });
  run("softmax", {m34}, [](auto& x) { return softmax(x[0]); });
  run("log_softmax", {m34}, [](auto& x) { return log_softmax(x[0]); });
  run("layer_norm", {m34, {4}, {4}}, [](auto& x) { return layer_norm(x[0], x[1], x[2]); });
  run("l2_normalize", {m34}, [](auto& x) { return l2_normalize(x[0]); });
  run("sum", {m34}, [](auto& x) { return sum(x[0]); });
  run("mean", {m34}, [](auto& x) { return mean(x[0]); });
  run("sum_axis0", {m34}, [](auto& x) { return sum(x[0], 0); });
  run("mean_axis0", {m34}, [](auto& x) { return mean(x[0], 0); });
  run("mean_axis1", {{2, 3, 4}}, [](auto& x) { return mean(x[0], 1); });
  run("squared_error", {m34, m34}, [](auto& x) { return squared_error(x[0], x[1]); });
  run("concat_axis0", {m34, {2, 4}}, [](auto& x) {
    return concat(std::vector{x[0], x[1]}, 0);
  });
  run("concat_axis1", {m34, {3, 2}}, [](auto& x) {
    return concat(std::vector{x[0], x[1]}, 1);
  });
  run("narrow", {m34}, [](auto& x) { return narrow(x[0], 1, 1, 2); });
  run("reshape", {m34}, [](auto& x) { return reshape(x[0], Shape{2, 6}); });
  run("transpose", {m34}, [](auto& x) { return transpose(x[0]); });
  run("scale", {m34}, [](auto& x) { using T = typename std::decay_t<decltype(x[0])>::value_type;
    return scale(x[0], T(2.5)); });
  run("repeat_rows", {{2, 3}}, [](auto& x) { return repeat_rows(x[0], 3); });
  run("attention", {{6, 4}, {6, 4}, {6, 4}}, [](auto& x) { return attention(x[0], x[1], x[2], 2, 2); });
  run("attention_shared_qkv", {{6, 4}}, [](auto& x) { return attention(x[0], x[0], x[0], 2, 2); });
  return out;
}

}  // namespace stemfit::ndgrad
