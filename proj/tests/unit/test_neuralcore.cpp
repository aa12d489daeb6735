#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "organ/checkpoint.hpp"
#include "organ/errors.hpp"
#include "organ/kernels.hpp"
#include "organ/optim.hpp"
#include "organ/tape.hpp"

using namespace organ;
using namespace organ::nn;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform() * 2.0 - 1.0;
  return v;
}

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  }
  return worst;
}

}  // namespace

TEST_CASE("simd kernels agree with scalar reference") {
  const kernels::KernelTable* simd = kernels::avx2_kernels();
  if (!simd) {
    MESSAGE("AVX2 kernels unavailable on this machine; skipping");
    return;
  }
  const auto& ref = kernels::scalar_kernels();
  Rng rng(3);
  for (std::size_t trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(13);
    const std::size_t n = 1 + rng.uniform_index(37);
    const std::size_t k = 1 + rng.uniform_index(41);
    auto a = random_vec(rng, m * k);
    auto b = random_vec(rng, n * k);
    auto bt = random_vec(rng, k * n);
    auto at = random_vec(rng, k * m);
    CHECK(std::abs(ref.dot(a.data(), b.data(), k) - simd->dot(a.data(), b.data(), k)) < 1e-12);

    auto c1 = random_vec(rng, m * n);
    auto c2 = c1;
    ref.gemm_nt(m, n, k, a.data(), k, b.data(), k, c1.data(), n);
    simd->gemm_nt(m, n, k, a.data(), k, b.data(), k, c2.data(), n);
    CHECK(rel_diff(c1, c2) < 1e-12);

    c2 = c1;
    auto c3 = c1;
    ref.gemm_nn(m, n, k, a.data(), k, bt.data(), n, c2.data(), n);
    simd->gemm_nn(m, n, k, a.data(), k, bt.data(), n, c3.data(), n);
    CHECK(rel_diff(c2, c3) < 1e-12);

    c2 = c1;
    c3 = c1;
    ref.gemm_tn(m, n, k, at.data(), m, bt.data(), n, c2.data(), n);
    simd->gemm_tn(m, n, k, at.data(), m, bt.data(), n, c3.data(), n);
    CHECK(rel_diff(c2, c3) < 1e-12);

    auto x = random_vec(rng, k);
    auto y1 = random_vec(rng, m);
    auto y2 = y1;
    ref.gemv(a.data(), m, k, x.data(), y1.data());
    simd->gemv(a.data(), m, k, x.data(), y2.data());
    CHECK(rel_diff(y1, y2) < 1e-12);

    auto g = random_vec(rng, m);
    auto x1 = random_vec(rng, k);
    auto x2 = x1;
    ref.gemv_t(a.data(), m, k, g.data(), x1.data());
    simd->gemv_t(a.data(), m, k, g.data(), x2.data());
    CHECK(rel_diff(x1, x2) < 1e-12);

    auto w1 = a;
    auto w2 = a;
    ref.ger(m, k, g.data(), x.data(), w1.data());
    simd->ger(m, k, g.data(), x.data(), w2.data());
    CHECK(rel_diff(w1, w2) < 1e-12);

    auto z1 = x;
    auto z2 = x;
    ref.axpy(0.37, x1.data(), z1.data(), k);
    simd->axpy(0.37, x1.data(), z2.data(), k);
    CHECK(rel_diff(z1, z2) < 1e-12);
  }
}

TEST_CASE("kernel selection") {
  CHECK(kernels::select("scalar"));
  CHECK(std::string(kernels::active().name) == "scalar");
  CHECK(kernels::select("auto"));
  CHECK_FALSE(kernels::select("sse9"));
}

namespace {

struct Lstm {
  ParameterSet params;
  Parameter* wx;
  Parameter* wh;
  Parameter* b;
  Lstm(std::size_t in, std::size_t hid) {
    wx = &params.add("wx", {4 * hid, in}, true);
    wh = &params.add("wh", {4 * hid, hid}, true);
    b = &params.add("b", {4 * hid}, false);
  }
  LstmWeights weights() { return {*wx, *wh, *b}; }
};

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("lstm step with zero weights from a zero cell yields zero hidden state") {
  Lstm net(3, 4);
  Tape tape;
  Var x = tape.constant(Tensor({2, 3}, {1, 2, 3, -1, 0.5, 4}));
  Var h = tape.constant(Tensor({2, 4}, 0.3));
  Var c = tape.constant(Tensor({2, 4}));
  auto out = tape.lstm_step(x, {h, c}, net.weights());
  for (double v : tape.value(out.hidden).data()) CHECK(v == 0.0);
}

TEST_CASE("saturated forget gate preserves the cell") {
  const std::size_t hid = 3;
  Lstm net(2, hid);
  for (std::size_t j = 0; j < hid; ++j) net.b->value[hid + j] = 60.0;
  Tape tape;
  Tensor cell({1, hid}, {0.25, -1.5, 3.0});
  auto out = tape.lstm_step(tape.constant(Tensor({1, 2}, {5, -5})),
                            {tape.constant(Tensor({1, hid})), tape.constant(cell)}, net.weights());
  CHECK(tape.value(out.cell) == cell);
}

TEST_CASE("lstm step matches a direct reimplementation") {
  Rng rng(11);
  const std::size_t in = 5, hid = 4, rows = 3;
  Lstm net(in, hid);
  net.params.init_uniform(rng, 0.8);
  auto x = random_vec(rng, rows * in);
  auto h = random_vec(rng, rows * hid);
  auto c = random_vec(rng, rows * hid);
  Tape tape;
  auto out = tape.lstm_step(tape.constant(Tensor({rows, in}, x)),
                            {tape.constant(Tensor({rows, hid}, h)), tape.constant(Tensor({rows, hid}, c))},
                            net.weights());
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> z(4 * hid);
    for (std::size_t g = 0; g < 4 * hid; ++g) {
      double s = net.b->value[g];
      for (std::size_t i = 0; i < in; ++i) s += net.wx->value.at(g, i) * x[r * in + i];
      for (std::size_t i = 0; i < hid; ++i) s += net.wh->value.at(g, i) * h[r * hid + i];
      z[g] = s;
    }
    for (std::size_t j = 0; j < hid; ++j) {
      const double ig = sig(z[j]), fg = sig(z[hid + j]), og = sig(z[2 * hid + j]), cand = std::tanh(z[3 * hid + j]);
      const double cn = fg * c[r * hid + j] + ig * cand;
      const double hn = og * std::tanh(cn);
      CHECK(std::abs(tape.value(out.cell).at(r, j) - cn) < 1e-12);
      CHECK(std::abs(tape.value(out.hidden).at(r, j) - hn) < 1e-12);
    }
  }
}

TEST_CASE("conv_maxpool examples") {
  ParameterSet ps;
  auto& w = ps.add("w", {1, 1}, true);
  auto& b = ps.add("b", {1}, false);
  w.value[0] = 1.0;
  Tape tape;
  Var y = tape.conv_maxpool(tape.constant(Tensor({1, 3}, {1, 5, 3})), 3, w, b, 1, Activation::Identity);
  CHECK(tape.value(y)[0] == 5.0);

  w.value[0] = 0.0;
  Var z = tape.conv_maxpool(tape.constant(Tensor({1, 3}, {1, 5, 3})), 3, w, b, 1, Activation::Tanh);
  CHECK(tape.value(z)[0] == 0.0);

  CHECK_THROWS_AS(tape.conv_maxpool(tape.constant(Tensor({1, 2}, {1, 2})), 2, w, b, 3, Activation::Identity),
                  DimensionError);
}

TEST_CASE("conv_maxpool matches brute-force sliding windows") {
  Rng rng(5);
  const std::size_t seq = 7, emb = 3, width = 3, nf = 4, rows = 2;
  ParameterSet ps;
  auto& w = ps.add("w", {nf, width * emb}, true);
  auto& b = ps.add("b", {nf}, false);
  ps.init_uniform(rng, 1.0);
  auto x = random_vec(rng, rows * seq * emb);
  Tape tape;
  Var y = tape.conv_maxpool(tape.constant(Tensor({rows, seq * emb}, x)), seq, w, b, width, Activation::Relu);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t f = 0; f < nf; ++f) {
      double best = -1e300;
      for (std::size_t t = 0; t + width <= seq; ++t) {
        double s = b.value[f];
        for (std::size_t k = 0; k < width; ++k) {
          for (std::size_t e = 0; e < emb; ++e) s += w.value.at(f, k * emb + e) * x[r * seq * emb + (t + k) * emb + e];
        }
        best = std::max(best, std::max(s, 0.0));
      }
      CHECK(std::abs(tape.value(y).at(r, f) - best) < 1e-12);
    }
  }
}

TEST_CASE("softmax") {
  auto p = softmax(std::vector<double>{0.0, 0.0});
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  auto q = softmax(std::vector<double>{1000.0, 0.0});
  CHECK(std::isfinite(q[0]));
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(q[1] < 1e-300);
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto z = random_vec(rng, 9);
    auto a = softmax(z);
    for (double& v : z) v += 17.25;
    auto b = softmax(z);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i] > 0.0);
      CHECK(std::abs(a[i] - b[i]) < 1e-12);
      total += a[i];
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("adam") {
  ParameterSet ps;
  auto& w = ps.add("w", {3}, false);
  w.value = Tensor::vector({1.0, -2.0, 0.5});
  const Tensor start = w.value;
  Adam opt(ps, {});
  ps.zero_grad();
  opt.step(ps);
  CHECK(w.value == start);
  CHECK(opt.step_count() == 1);

  ParameterSet single;
  auto& s = single.add("s", {1}, false);
  Adam one(single, {0.1});
  s.grad[0] = 1.0;
  one.step(single);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
  CHECK(std::abs(s.value[0] - (-0.1 / (1.0 + 1e-8))) < 1e-15);

  Adam steady(single, {0.01});
  double prev = s.value[0];
  double last_step = 0.0;
  for (int i = 0; i < 2000; ++i) {
    s.grad[0] = 3.0;
    steady.step(single);
    last_step = s.value[0] - prev;
    prev = s.value[0];
  }
  CHECK(last_step == doctest::Approx(-0.01).epsilon(1e-6));

  ParameterSet other;
  other.add("a", {2}, false);
  other.add("b", {2}, false);
  CHECK_THROWS_AS(one.step(other), DimensionError);
}

TEST_CASE("backward basics") {
  Tape empty;
  CHECK_THROWS_AS(empty.backward(Var{0}), UsageError);

  ParameterSet ps;
  auto& w = ps.add("w", {2, 3}, true);
  Rng rng(1);
  ps.init_uniform(rng, 1.0);
  Tape tape;
  tape.backward(tape.sum(tape.param(w)));
  for (double g : w.grad.data()) CHECK(g == 1.0);

  ps.zero_grad();
  Tape constant_tape;
  Var c = constant_tape.sum(constant_tape.constant(Tensor({2}, 4.0)));
  constant_tape.backward(c);
  for (double g : w.grad.data()) CHECK(g == 0.0);
}

TEST_CASE("dropout mask") {
  Rng rng(2024);
  Tensor ones = dropout_mask({4, 5}, 1.0, rng);
  for (double v : ones.data()) CHECK(v == 1.0);
  CHECK_THROWS_AS(dropout_mask({2}, 0.0, rng), ParameterError);
  CHECK_THROWS_AS(dropout_mask({2}, 1.5, rng), ParameterError);
  Tensor m = dropout_mask({1000000}, 0.25, rng);
  std::size_t kept = 0;
  for (double v : m.data()) {
    if (v != 0.0) {
      CHECK(v == 4.0);
      ++kept;
    }
  }
  CHECK(std::abs(static_cast<double>(kept) / 1e6 - 0.25) < 0.002);
}

TEST_CASE("l2 penalty") {
  ParameterSet ps;
  auto& w = ps.add("w", {1}, true);
  Parameter* list[] = {&w};
  Tape t0;
  CHECK(t0.value(t0.l2_penalty(list, 0.5))[0] == 0.0);
  w.value[0] = 2.0;
  Tape t1;
  Var loss = t1.l2_penalty(list, 0.5);
  CHECK(t1.value(loss)[0] == 2.0);
  ps.zero_grad();
  t1.backward(loss);
  CHECK(w.grad[0] == 2.0);  // 2 * 0.5 * 2
}

TEST_CASE("finite-difference gradients on a mixed network") {
  Rng rng(77);
  ParameterSet ps;
  auto& emb = ps.add("emb", {5, 3}, false);
  Lstm cell(3, 4);
  auto& wx = ps.add("wx", {16, 3}, true);
  auto& wh = ps.add("wh", {16, 4}, true);
  auto& b = ps.add("b", {16}, false);
  auto& out = ps.add("out", {5, 4}, true);
  auto& ob = ps.add("ob", {5}, false);
  ps.init_uniform(rng, 0.6);
  const std::vector<int> ids = {1, 4, 2, 0, 3, 3};
  auto build = [&](Tape& t) {
    Var e = t.embedding(emb, ids);
    LstmState s{t.constant(Tensor({2, 4})), t.constant(Tensor({2, 4}))};
    std::vector<Var> hs;
    for (std::size_t step = 0; step < 3; ++step) {
      s = t.lstm_step(t.slice_rows(e, step * 2, 2), s, {wx, wh, b});
      hs.push_back(s.hidden);
    }
    Var logits = t.affine(t.stack_rows(hs), out, &ob);
    std::vector<int> targets = {0, 1, 2, 3, 4, 0};
    std::vector<double> weights = {0.2, -0.4, 1.0, 0.3, 0.5, 0.1};
    return t.softmax_xent(logits, targets, weights);
  };
  auto r = testing::check_gradients(ps, build);
  CHECK(r.max_rel_error < 1e-6);
  (void)cell;
}

TEST_CASE("checkpoint round trip is byte exact") {
  Rng rng(4);
  ParameterSet ps;
  ps.add("a", {3, 2}, true);
  ps.add("b", {4}, false);
  ps.init_uniform(rng, 1.0);
  Adam opt(ps, {});
  for (auto& p : ps) p.grad.fill(0.3);
  opt.step(ps);
  Checkpoint ck;
  ck.set_meta("kind", "test");
  ck.put_params("g", ps);
  ck.put_adam("g", ps, opt);
  const std::string bytes = ck.serialize();
  Checkpoint back = Checkpoint::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  ParameterSet ps2;
  ps2.add("a", {3, 2}, true);
  ps2.add("b", {4}, false);
  back.get_params("g", ps2);
  Adam opt2(ps2, {});
  back.get_adam("g", ps2, opt2);
  CHECK(opt2.step_count() == 1);
  CHECK(ps2.at("a").value == ps.at("a").value);
  CHECK(opt2.first_moments()[1] == opt.first_moments()[1]);
  CHECK_THROWS_AS(Checkpoint::deserialize(bytes.substr(0, bytes.size() - 3)), FileError);
  CHECK_THROWS_AS(Checkpoint::deserialize("NOTACKPT"), FileError);
}
