#include <doctest.h>

#include "neurocap/autograd.hpp"
#include "neurocap/checkpoint.hpp"
#include "neurocap/nn.hpp"
#include "neurocap/optim.hpp"

#include <cmath>
#include <functional>
#include <random>

using namespace neurocap;

namespace {

ag::Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  return nn::random_normal(r, c, scale, rng);
}

// Compares autograd gradients of f with central differences for every input entry.
double max_grad_error(std::vector<ag::Parameter>& inputs, const std::function<ag::Var()>& f) {
  for (auto& p : inputs) p.zero_grad();
  ag::backward(f());
  double worst = 0.0;
  const double h = 1e-6;
  for (auto& p : inputs) {
    const ag::Matrix g = p.has_grad() ? p.grad() : ag::Matrix::Zero(p.value().rows(), p.value().cols());
    for (Eigen::Index i = 0; i < p.value().size(); ++i) {
      const double orig = p.value().data()[i];
      p.value().data()[i] = orig + h;
      const double up = f().scalar();
      p.value().data()[i] = orig - h;
      const double down = f().scalar();
      p.value().data()[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(g.data()[i]), 1e-3});
      worst = std::max(worst, std::abs(fd - g.data()[i]) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("elementwise and linear ops have correct gradients") {
  std::mt19937_64 rng(1);
  std::vector<ag::Parameter> ps = {ag::Parameter(random_matrix(3, 4, rng)), ag::Parameter(random_matrix(4, 2, rng)),
                                   ag::Parameter(random_matrix(3, 4, rng)), ag::Parameter(random_matrix(1, 4, rng))};
  auto f = [&] {
    const ag::Var a = ps[0].var(), b = ps[1].var(), c = ps[2].var(), row = ps[3].var();
    const ag::Var x = ag::add_row(ag::mul(ag::sub(a, c), ag::add(a, c)), row);
    const ag::Var y = ag::matmul(ag::gelu(x), b);
    return ag::mean(ag::mul(y, ag::scale(transpose(transpose(y)), 0.5)));
  };
  CHECK(max_grad_error(ps, f) < 1e-5);
}

TEST_CASE("shape ops route gradients to the right entries") {
  std::mt19937_64 rng(2);
  std::vector<ag::Parameter> ps = {ag::Parameter(random_matrix(2, 6, rng)), ag::Parameter(random_matrix(3, 3, rng))};
  auto f = [&] {
    const ag::Var r = ag::reshape(ps[0].var(), 4, 3);
    const ag::Var parts[] = {r, ps[1].var()};
    const ag::Var rows = ag::concat_rows(parts);
    const ag::Var cols_parts[] = {ag::slice_rows(rows, 1, 3), ps[1].var()};
    const ag::Var cols = ag::concat_cols(cols_parts);
    const int ids[] = {0, 2, 2, 5};
    const ag::Var g = ag::gather_rows(rows, ids);
    return ag::add(ag::sum(ag::mul(cols, cols)), ag::sum(ag::slice_cols(ag::mul(g, g), 1, 2)));
  };
  CHECK(max_grad_error(ps, f) < 1e-5);
}

TEST_CASE("normalisation and probability ops have correct gradients") {
  std::mt19937_64 rng(3);
  std::vector<ag::Parameter> ps = {ag::Parameter(random_matrix(4, 5, rng)), ag::Parameter(random_matrix(1, 5, rng)),
                                   ag::Parameter(random_matrix(1, 5, rng)), ag::Parameter(random_matrix(5, 5, rng))};
  auto f = [&] {
    const ag::Var ln = ag::layer_norm(ps[0].var(), ps[1].var(), ps[2].var());
    const ag::Var att = ag::softmax_rows(ag::matmul(ln, ps[3].var()), false);
    const ag::Var causal = ag::softmax_rows(ag::matmul(ps[0].var(), transpose(ps[0].var())), true);
    const int idx[] = {0, 3, 1, 4};
    const ag::Var picked = ag::pick(ag::log_softmax_rows(att), idx);
    return ag::add(ag::sum(picked), ag::sum(ag::mul(causal, causal)));
  };
  CHECK(max_grad_error(ps, f) < 1e-5);
}

TEST_CASE("causal softmax masks future positions") {
  const ag::Var x = ag::constant(ag::Matrix::Ones(3, 3));
  const ag::Matrix p = ag::softmax_rows(x, true).value();
  CHECK(p(0, 1) == 0.0);
  CHECK(p(0, 2) == 0.0);
  CHECK(p(1, 2) == 0.0);
  CHECK(p(0, 0) == doctest::Approx(1.0));
  CHECK(p(2, 0) == doctest::Approx(1.0 / 3));
}

TEST_CASE("transformer block gradient matches finite differences") {
  std::mt19937_64 rng(4);
  nn::TransformerBlock block(8, 2, 2, rng);
  nn::ParameterList params;
  block.collect("b", params);
  ag::Parameter x(random_matrix(5, 8, rng));
  std::vector<ag::Parameter> inputs = {x};
  auto f = [&] { return ag::sum(ag::mul(block(x.var(), true), block(x.var(), false))); };
  CHECK(max_grad_error(inputs, f) < 1e-4);
  for (auto& p : params) p.param->zero_grad();
  ag::backward(f());
  for (auto& p : params) CHECK_MESSAGE(p.param->has_grad(), p.name);
}

TEST_CASE("AdamW follows the decoupled update rule") {
  nn::ParameterList list;
  ag::Parameter w(ag::Matrix::Constant(1, 2, 1.0));
  list.push_back({"w", &w});
  AdamWConfig cfg;
  cfg.learning_rate = 0.1;
  AdamW opt(list, cfg);
  w.grad() = ag::Matrix::Constant(1, 2, 0.5);
  opt.step();
  // First step: m_hat = g, v_hat = g^2, so the Adam update is lr * g / (|g| + eps).
  const double expected = 1.0 - 0.1 * 0.01 * 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
  CHECK(w.value()(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(opt.steps() == 1);
}

TEST_CASE("optimizer state round-trips through a checkpoint") {
  ag::Parameter a(ag::Matrix::Constant(2, 2, 1.0)), b(ag::Matrix::Constant(2, 2, 1.0));
  nn::ParameterList la = {{"w", &a}}, lb = {{"w", &b}};
  AdamW oa(la, {}), ob(lb, {});
  a.grad() = ag::Matrix::Constant(2, 2, 0.3);
  oa.step();
  Checkpoint ck;
  oa.save_state(ck);
  b.value() = a.value();
  ob.load_state(ck);
  a.grad() = ag::Matrix::Constant(2, 2, -0.2);
  b.grad() = ag::Matrix::Constant(2, 2, -0.2);
  oa.step();
  ob.step();
  CHECK((a.value().array() == b.value().array()).all());
}

TEST_CASE("global-norm clipping rescales gradients") {
  ag::Parameter a(ag::Matrix::Zero(1, 2)), b(ag::Matrix::Zero(1, 1));
  a.grad() = (ag::Matrix(1, 2) << 3.0, 0.0).finished();
  b.grad() = (ag::Matrix(1, 1) << 4.0).finished();
  nn::ParameterList list = {{"a", &a}, {"b", &b}};
  CHECK(clip_grad_norm(list, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()(0, 0) == doctest::Approx(0.6));
  CHECK(b.grad()(0, 0) == doctest::Approx(0.8));
  CHECK(clip_grad_norm(list, 0.0) == doctest::Approx(1.0));
}

TEST_CASE("checkpoint detects corruption and truncation") {
  Checkpoint ck;
  ck.put_tensor("t", ag::Matrix::Identity(3, 3));
  ck.put_bytes("b", "hello");
  std::string data = ck.serialize();
  const Checkpoint back = Checkpoint::deserialize(data);
  CHECK(back.bytes("b") == "hello");
  CHECK((back.tensor("t").array() == ag::Matrix::Identity(3, 3).array()).all());
  std::string flipped = data;
  flipped[20] ^= 0x1;
  CHECK_THROWS(Checkpoint::deserialize(flipped));
  CHECK_THROWS(Checkpoint::deserialize(data.substr(0, data.size() - 7)));
}
