#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_helpers.hpp"
#include "uxmil/adam.hpp"
#include "uxmil/gradcheck.hpp"
#include "uxmil/nn.hpp"
#include "uxmil/ops.hpp"

using namespace uxmil;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

struct CheckedModeGuard {
    CheckedModeGuard() { set_checked_mode(true); }
    ~CheckedModeGuard() { set_checked_mode(false); }
} g_checked;

// Triple-loop reference product, independent of the BLAS path.
std::vector<double> matmul_oracle(const Tensor<double>& a, const Tensor<double>& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t l = 0; l < k; ++l) c[i * n + j] += a.at(i * k + l) * b.at(l * n + j);
    return c;
}

// Direct sliding-window cross-correlation.
std::vector<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& k,
                                  std::size_t stride, std::size_t pad) {
    const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out(cout * oh * ow, 0.0);
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t oi = 0; oi < oh; ++oi)
            for (std::size_t oj = 0; oj < ow; ++oj) {
                double acc = 0;
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t ki = 0; ki < kh; ++ki)
                        for (std::size_t kj = 0; kj < kw; ++kj) {
                            const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + ki) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + kj) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) ||
                                jj >= static_cast<std::ptrdiff_t>(w))
                                continue;
                            acc += x.at((ci * h + ii) * w + jj) *
                                   k.at(((co * k.dim(1) + ci) * kh + ki) * kw + kj);
                        }
                out[(co * oh + oi) * ow + oj] = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("matmul identity and zero cases") {
    Rng rng(1);
    Tensor<double> a = random_tensor<double>({2, 2}, rng);
    Tensor<double> eye({2, 2});
    eye.data()[0] = eye.data()[3] = 1.0;
    auto out = matmul<double>(nullptr, a, eye);
    CHECK(max_abs_diff(out, a) == 0.0);

    Tensor<double> b = random_tensor<double>({3, 4}, rng);
    Tensor<double> zeros({4, 2});
    auto z = matmul<double>(nullptr, b, zeros);
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z.at(i) == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle over 20 seeds") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Tensor<double> a = random_tensor<double>({5, 7}, rng);
        Tensor<double> b = random_tensor<double>({7, 3}, rng);
        auto out = matmul<double>(nullptr, a, b);
        CHECK(max_abs_diff(out, matmul_oracle(a, b)) < 1e-12);
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor<double> a({2, 3}), b({4, 2});
    CHECK_THROWS_WITH_AS(matmul<double>(nullptr, a, b),
                         doctest::Contains("[2,3]"), ShapeError);
    try {
        matmul<double>(nullptr, a, b);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("conv2d identity kernel reproduces input") {
    Rng rng(7);
    Tensor<double> x = random_tensor<double>({1, 5, 6}, rng);
    Tensor<double> k({1, 1, 1, 1});
    k.data()[0] = 1.0;
    auto out = conv2d<double>(nullptr, x, k, 1, 0);
    CHECK(out.shape() == Shape{1, 5, 6});
    CHECK(max_abs_diff(out, x) == 0.0);
}

TEST_CASE("conv2d all-ones 3x3 kernel on constant input gives 9c everywhere") {
    const double c = 0.37;
    Tensor<double> x({1, 6, 6}, c);
    Tensor<double> k({1, 1, 3, 3}, 1.0);
    auto out = conv2d<double>(nullptr, x, k, 1, 0);
    CHECK(out.shape() == Shape{1, 4, 4});
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == doctest::Approx(9 * c).epsilon(1e-12));
}

TEST_CASE("conv2d matches sliding-window oracle over 20 seeds") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(100 + seed);
        const std::size_t stride = 1 + seed % 2, pad = seed % 3;
        Tensor<double> x = random_tensor<double>({2, 7, 8}, rng);
        Tensor<double> k = random_tensor<double>({3, 2, 3, 3}, rng);
        auto out = conv2d<double>(nullptr, x, k, stride, pad);
        CHECK(max_abs_diff(out, conv2d_oracle(x, k, stride, pad)) < 1e-10);
    }
}

TEST_CASE("conv2d rejects kernel larger than padded input") {
    Tensor<double> x({1, 3, 3});
    Tensor<double> k({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d<double>(nullptr, x, k, 1, 0), ShapeError);
}

TEST_CASE("softmax uniform input gives 1/n") {
    Tensor<double> x({1, 8}, 3.25);
    auto out = softmax<double>(nullptr, x, -1);
    for (std::size_t i = 0; i < 8; ++i) CHECK(out.at(i) == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and oracle equivalence over 20 seeds") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(200 + seed);
        Tensor<double> x = random_tensor<double>({4, 9}, rng, -50, 50);
        auto p = softmax<double>(nullptr, x, -1);
        Tensor<double> shifted = x.clone_values();
        for (std::size_t i = 0; i < x.numel(); ++i) shifted.data()[i] += 17.5;
        auto p2 = softmax<double>(nullptr, shifted, -1);
        CHECK(max_abs_diff(p, p2) < 1e-12);

        // direct exp/normalize oracle, rows sum to one, positivity
        for (std::size_t r = 0; r < 4; ++r) {
            double denom = 0;
            for (std::size_t i = 0; i < 9; ++i) denom += std::exp(x.at(r * 9 + i));
            double row_sum = 0;
            for (std::size_t i = 0; i < 9; ++i) {
                const double expect = std::exp(x.at(r * 9 + i)) / denom;
                CHECK(std::abs(p.at(r * 9 + i) - expect) < 1e-12);
                CHECK(p.at(r * 9 + i) > 0.0);
                row_sum += p.at(r * 9 + i);
            }
            CHECK(std::abs(row_sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("softmax works on non-final axis") {
    Rng rng(3);
    Tensor<double> x = random_tensor<double>({3, 4}, rng);
    auto p = softmax<double>(nullptr, x, 0);
    for (std::size_t col = 0; col < 4; ++col) {
        double s = 0;
        for (std::size_t r = 0; r < 3; ++r) s += p.at(r * 4 + col);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm degenerate and affine cases") {
    Tensor<double> x({2, 5}, 4.2);
    Tensor<double> gamma({5}, 1.0), beta({5});
    auto out = layer_norm<double>(nullptr, x, gamma, beta);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out.at(i)) < 1e-12);

    Rng rng(4);
    Tensor<double> y = random_tensor<double>({2, 5}, rng);
    Tensor<double> gamma0({5});
    Tensor<double> beta7({5}, 7.5);
    auto out2 = layer_norm<double>(nullptr, y, gamma0, beta7);
    for (std::size_t i = 0; i < out2.numel(); ++i) CHECK(out2.at(i) == 7.5);
}

TEST_CASE("layer_norm matches mean/variance oracle over 20 seeds") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(300 + seed);
        const std::size_t d = 11;
        Tensor<double> x = random_tensor<double>({3, d}, rng, -2, 2);
        Tensor<double> gamma = random_tensor<double>({d}, rng);
        Tensor<double> beta = random_tensor<double>({d}, rng);
        const double eps = 1e-5;
        auto out = layer_norm<double>(nullptr, x, gamma, beta, eps);
        for (std::size_t r = 0; r < 3; ++r) {
            double mean = 0;
            for (std::size_t i = 0; i < d; ++i) mean += x.at(r * d + i);
            mean /= d;
            double var = 0;
            for (std::size_t i = 0; i < d; ++i)
                var += (x.at(r * d + i) - mean) * (x.at(r * d + i) - mean);
            var /= d;
            for (std::size_t i = 0; i < d; ++i) {
                const double expect =
                    gamma.at(i) * (x.at(r * d + i) - mean) / std::sqrt(var + eps) + beta.at(i);
                CHECK(std::abs(out.at(r * d + i) - expect) < 1e-10);
            }
        }
    }
}

TEST_CASE("cross entropy analytic cases and oracle") {
    Tensor<double> uniform({2, 7}, 0.3);
    auto loss = cross_entropy_logits<double>(nullptr, uniform, {0, 5});
    CHECK(std::abs(loss.at(0) - std::log(7.0)) < 1e-9);

    // saturated target: loss = ln(1 + 6 e^-x), essentially zero
    Tensor<double> hot({1, 7});
    hot.data()[3] = 20.0;
    auto l2 = cross_entropy_logits<double>(nullptr, hot, {3});
    CHECK(l2.at(0) == doctest::Approx(std::log1p(6.0 * std::exp(-20.0))).epsilon(1e-9));
    hot.data()[3] = 25.0;
    auto l3 = cross_entropy_logits<double>(nullptr, hot, {3});
    CHECK(l3.at(0) < 1e-8);

    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(400 + seed);
        Tensor<double> logits = random_tensor<double>({5, 7}, rng, -3, 3);
        std::vector<int> targets;
        for (int i = 0; i < 5; ++i) targets.push_back(static_cast<int>(rng.uniform_int(7)));
        auto l = cross_entropy_logits<double>(nullptr, logits, targets);
        double expect = 0;
        for (std::size_t b = 0; b < 5; ++b) {
            double lse = 0;
            for (std::size_t j = 0; j < 7; ++j) lse += std::exp(logits.at(b * 7 + j));
            expect += std::log(lse) - logits.at(b * 7 + targets[b]);
        }
        expect /= 5.0;
        CHECK(std::abs(l.at(0) - expect) < 1e-10);
    }

    CHECK_THROWS_AS(cross_entropy_logits<double>(nullptr, hot, {7}), ValidationError);
}

TEST_CASE("backward: sum gives ones, unreachable parameter stays zero") {
    Rng rng(5);
    Tensor<double> x = random_tensor<double>({3, 4}, rng);
    Tensor<double> unused = random_tensor<double>({2}, rng);
    x.set_requires_grad(true);
    unused.set_requires_grad(true);
    Tape<double> tape;
    auto loss = sum_all(&tape, x);
    backward(loss, tape);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);
    for (std::size_t i = 0; i < unused.numel(); ++i) CHECK(unused.grad()[i] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss and accumulates across calls") {
    Rng rng(6);
    Tensor<double> x = random_tensor<double>({2, 2}, rng);
    x.set_requires_grad(true);
    Tape<double> tape;
    auto y = scale(&tape, x, 3.0);
    CHECK_THROWS_AS(backward(y, tape), ShapeError);

    Tape<double> tape2;
    auto loss = sum_all(&tape2, scale(&tape2, x, 2.0));
    backward(loss, tape2);
    backward(loss, tape2);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(4.0));
}

TEST_CASE("backward through matmul chain matches finite differences") {
    Rng rng(8);
    Tensor<double> b = random_tensor<double>({4, 3}, rng);
    Tensor<double> c = random_tensor<double>({3, 2}, rng);
    Tensor<double> x = random_tensor<double>({2, 4}, rng);
    auto f = [&](Tape<double>* tape, Tensor<double>& in) {
        auto h = matmul(tape, in, b);
        auto o = matmul(tape, h, c);
        return sum_all(tape, o);
    };
    auto report = grad_check<double>(f, x, 1e-4, 1e-4);
    CHECK(report.pass);
}

TEST_CASE("multi head attention: single token, row stochasticity, naive oracle") {
    TransformerEncoderConfig cfg;
    cfg.model_dim = 16;
    cfg.num_heads = 4;
    cfg.feedforward_dim = 32;
    cfg.dropout_rate = 0.0;
    Rng rng(9);
    TransformerLayerWeights<double> w;
    w.init(cfg, rng);
    ForwardCtx<double> ctx;

    // one token: attention is exactly [[1]] per head
    Tensor<double> one = random_tensor<double>({1, 16}, rng);
    auto [out1, attn1] = multi_head_attention(ctx, one, w, cfg);
    CHECK(attn1.shape() == Shape{4, 1, 1});
    for (std::size_t h = 0; h < 4; ++h) CHECK(attn1.at(h) == doctest::Approx(1.0).epsilon(1e-12));

    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng r2(500 + seed);
        const std::size_t n = 5;
        Tensor<double> x = random_tensor<double>({n, 16}, r2);
        auto [out, attn] = multi_head_attention(ctx, x, w, cfg);
        CHECK(out.shape() == Shape{n, 16});
        // every attention row sums to 1
        for (std::size_t h = 0; h < 4; ++h)
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < n; ++j) s += attn.at((h * n + i) * n + j);
                CHECK(std::abs(s - 1.0) < 1e-9);
            }

        // naive per-head QKV oracle
        const std::size_t d = 16, heads = 4, dh = d / heads;
        auto lin = [&](const Tensor<double>& m, const LinearWeights<double>& lw,
                       std::size_t row, std::size_t col) {
            double acc = lw.b.at(col);
            for (std::size_t k = 0; k < d; ++k) acc += m.at(row * d + k) * lw.w.at(k * d + col);
            return acc;
        };
        std::vector<double> q(n * d), k(n * d), v(n * d), merged(n * d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                q[i * d + j] = lin(x, w.q, i, j);
                k[i * d + j] = lin(x, w.k, i, j);
                v[i * d + j] = lin(x, w.v, i, j);
            }
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> sc(n);
                double mx = -1e300;
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0;
                    for (std::size_t t = 0; t < dh; ++t)
                        acc += q[i * d + h * dh + t] * k[j * d + h * dh + t];
                    sc[j] = acc / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, sc[j]);
                }
                double denom = 0;
                for (std::size_t j = 0; j < n; ++j) denom += std::exp(sc[j] - mx);
                for (std::size_t j = 0; j < n; ++j) {
                    const double p = std::exp(sc[j] - mx) / denom;
                    CHECK(std::abs(p - attn.at((h * n + i) * n + j)) < 1e-8);
                    for (std::size_t t = 0; t < dh; ++t)
                        merged[i * d + h * dh + t] += p * v[j * d + h * dh + t];
                }
            }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double acc = w.o.b.at(j);
                for (std::size_t t = 0; t < d; ++t) acc += merged[i * d + t] * w.o.w.at(t * d + j);
                CHECK(std::abs(acc - out.at(i * d + j)) < 1e-8);
            }
    }
}

TEST_CASE("multi head attention rejects empty sequence") {
    TransformerEncoderConfig cfg;
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    Rng rng(10);
    TransformerLayerWeights<double> w;
    w.init(cfg, rng);
    ForwardCtx<double> ctx;
    Tensor<double> empty({0, 8});
    CHECK_THROWS_AS(multi_head_attention(ctx, empty, w, cfg), ValidationError);
}

TEST_CASE("transformer encoder: zero layers, attention map shapes") {
    TransformerEncoderConfig cfg;
    cfg.model_dim = 12;
    cfg.num_heads = 3;
    cfg.num_layers = 0;
    cfg.feedforward_dim = 24;
    cfg.positional_encoding = Positional::none;
    Rng rng(11);
    TransformerEncoderWeights<double> w;
    w.init(cfg, 6, rng);
    ForwardCtx<double> ctx;
    Tensor<double> x = random_tensor<double>({5, 12}, rng);
    auto [out, attn] = transformer_encoder(ctx, x, w);
    CHECK(max_abs_diff(out, x) == 0.0);
    CHECK(attn.empty());

    cfg.num_layers = 2;
    TransformerEncoderWeights<double> w2;
    w2.init(cfg, 6, rng);
    auto [out2, attn2] = transformer_encoder(ctx, x, w2);
    CHECK(attn2.size() == 2);
    for (const auto& a : attn2) CHECK(a.shape() == Shape{5, 5});
}

TEST_CASE("transformer encoder with zero layers adds positional embedding") {
    TransformerEncoderConfig cfg;
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    cfg.num_layers = 0;
    cfg.positional_encoding = Positional::learned;
    Rng rng(12);
    TransformerEncoderWeights<double> w;
    w.init(cfg, 4, rng);
    ForwardCtx<double> ctx;
    Tensor<double> x = random_tensor<double>({4, 8}, rng);
    auto [out, attn] = transformer_encoder(ctx, x, w);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(out.at(i) == doctest::Approx(x.at(i) + w.pos.at(i)).epsilon(1e-12));
}

TEST_CASE("transformer encoder permutation equivariance without positions") {
    TransformerEncoderConfig cfg;
    cfg.model_dim = 16;
    cfg.num_heads = 4;
    cfg.num_layers = 2;
    cfg.feedforward_dim = 32;
    cfg.dropout_rate = 0.0;
    cfg.positional_encoding = Positional::none;
    Rng rng(13);
    TransformerEncoderWeights<double> w;
    w.init(cfg, 8, rng);
    ForwardCtx<double> ctx;
    const std::size_t n = 7;
    Tensor<double> x = random_tensor<double>({n, 16}, rng);
    auto [out, attn] = transformer_encoder(ctx, x, w);

    std::vector<std::size_t> perm{3, 0, 6, 2, 5, 1, 4};
    Tensor<double> xp({n, 16});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 16; ++j) xp.data()[i * 16 + j] = x.at(perm[i] * 16 + j);
    auto [outp, attnp] = transformer_encoder(ctx, xp, w);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 16; ++j)
            CHECK(std::abs(outp.at(i * 16 + j) - out.at(perm[i] * 16 + j)) < 1e-8);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Rng rng(14);
    ParamList<double> params;
    Tensor<double> p = random_tensor<double>({3, 3}, rng);
    Tensor<double> keep = p.clone_values();
    params.push_back({"p", p});
    mark_trainable(params);
    AdamState<double> st;
    st.attach(params);
    adam_step(params, st);
    CHECK(max_abs_diff(p, keep) == 0.0);
    CHECK(st.step == 1);
}

TEST_CASE("adam first step matches closed-form single-step oracle") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(600 + seed);
        ParamList<double> params;
        Tensor<double> p = random_tensor<double>({4}, rng);
        Tensor<double> expect = p.clone_values();
        params.push_back({"p", p});
        mark_trainable(params);
        Tensor<double> g = random_tensor<double>({4}, rng);
        for (std::size_t i = 0; i < 4; ++i) p.grad()[i] = g.at(i);
        AdamState<double> st;
        st.learning_rate = 1e-3;
        st.attach(params);
        adam_step(params, st);
        // with fresh state, mhat = g, vhat = g^2
        for (std::size_t i = 0; i < 4; ++i) {
            const double d =
                1e-3 * g.at(i) / (std::sqrt(g.at(i) * g.at(i)) + st.epsilon);
            CHECK(std::abs(p.at(i) - (expect.at(i) - d)) < 1e-12);
        }
    }
}

TEST_CASE("adam: identical grads and state evolve identically") {
    Rng rng(15);
    Tensor<double> a = random_tensor<double>({5}, rng);
    Tensor<double> b = a.clone_values();
    ParamList<double> params;
    params.push_back({"a", a});
    params.push_back({"b", b});
    mark_trainable(params);
    AdamState<double> st;
    st.attach(params);
    for (int step = 0; step < 5; ++step) {
        for (std::size_t i = 0; i < 5; ++i) {
            const double g = 0.1 * (step + 1) + 0.01 * static_cast<double>(i);
            a.grad()[i] = g;
            b.grad()[i] = g;
        }
        adam_step(params, st);
        zero_grads(params);
        CHECK(max_abs_diff(a, b) == 0.0);
    }
}

TEST_CASE("adam rejects mismatched state") {
    Rng rng(16);
    ParamList<double> params;
    Tensor<double> p = random_tensor<double>({2}, rng);
    params.push_back({"p", p});
    mark_trainable(params);
    AdamState<double> st;
    st.attach(params);
    params.push_back({"q", random_tensor<double>({2}, rng)});
    CHECK_THROWS_AS(adam_step(params, st), ShapeError);
}

TEST_CASE("grad_check: quadratic passes, constant is zero, broken gradient fails") {
    Rng rng(17);
    Tensor<double> x = random_tensor<double>({6}, rng);
    auto quad = [](Tape<double>* tape, Tensor<double>& in) {
        // sum of squares as <x, x>
        return sum_all(tape, bmm(tape, in.reshaped({1, 1, in.numel()}),
                                 in.reshaped({1, in.numel(), 1})));
    };
    auto rep = grad_check<double>(quad, x, 1e-4, 1e-4);
    CHECK(rep.pass);

    Tensor<double> c = random_tensor<double>({3}, rng);
    auto constant = [](Tape<double>* tape, Tensor<double>& in) {
        auto zero = scale(tape, sum_all(tape, in), 0.0);
        return zero;
    };
    auto rep2 = grad_check<double>(constant, c, 1e-4, 1e-4);
    CHECK(rep2.pass);
    CHECK(rep2.max_rel_err < 1e-10);

    // negative control: the recorded gradient belongs to a different function
    Tensor<double> n = random_tensor<double>({4}, rng);
    auto broken = [](Tape<double>* tape, Tensor<double>& in) {
        const double factor = tape ? 1.0 : 2.0;
        return sum_all(tape, scale(tape, in, factor));
    };
    auto rep3 = grad_check<double>(broken, n, 1e-4, 1e-4);
    CHECK_FALSE(rep3.pass);
}

TEST_CASE("every differentiable op passes grad_check across 20 seeds") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(700 + seed);
        // relu: keep inputs away from the kink
        Tensor<double> xr = random_tensor<double>({10}, rng);
        for (std::size_t i = 0; i < xr.numel(); ++i)
            xr.data()[i] += (xr.at(i) >= 0 ? 0.05 : -0.05);
        auto frelu = [](Tape<double>* t, Tensor<double>& in) { return sum_all(t, relu(t, in)); };
        CHECK(grad_check<double>(frelu, xr, 1e-4, 1e-4).pass);

        Tensor<double> xg = random_tensor<double>({10}, rng, -2, 2);
        auto fgelu = [](Tape<double>* t, Tensor<double>& in) { return sum_all(t, gelu(t, in)); };
        CHECK(grad_check<double>(fgelu, xg, 1e-4, 1e-4).pass);

        Tensor<double> xs = random_tensor<double>({3, 5}, rng, -2, 2);
        auto fsm = [](Tape<double>* t, Tensor<double>& in) {
            auto p = softmax(t, in, -1);
            // weighted sum so the gradient is nontrivial
            Tensor<double> w({3, 5});
            for (std::size_t i = 0; i < w.numel(); ++i)
                w.data()[i] = 0.1 * static_cast<double>(i % 7) - 0.3;
            return sum_all(t, bmm(t, p.reshaped({1, 1, 15}), w.reshaped({1, 15, 1})));
        };
        CHECK(grad_check<double>(fsm, xs, 1e-4, 1e-4).pass);

        Tensor<double> xl = random_tensor<double>({2, 6}, rng, -2, 2);
        Tensor<double> gamma = random_tensor<double>({6}, rng, 0.5, 1.5);
        Tensor<double> beta = random_tensor<double>({6}, rng);
        auto fln = [&](Tape<double>* t, Tensor<double>& in) {
            auto y = layer_norm(t, in, gamma, beta);
            Tensor<double> w({2, 6});
            for (std::size_t i = 0; i < w.numel(); ++i) w.data()[i] = 0.05 * (i % 5) - 0.1;
            return sum_all(t, bmm(t, y.reshaped({1, 1, 12}), w.reshaped({1, 12, 1})));
        };
        CHECK(grad_check<double>(fln, xl, 1e-4, 1e-4).pass);

        Tensor<double> xc = random_tensor<double>({1, 4, 5}, rng);
        Tensor<double> kc = random_tensor<double>({2, 1, 3, 3}, rng);
        auto fconv = [&](Tape<double>* t, Tensor<double>& in) {
            return sum_all(t, conv2d(t, in, kc, 1, 1));
        };
        CHECK(grad_check<double>(fconv, xc, 1e-4, 1e-4).pass);
        auto fconv_k = [&](Tape<double>* t, Tensor<double>& in) {
            return sum_all(t, conv2d(t, xc, in, 1, 1));
        };
        CHECK(grad_check<double>(fconv_k, kc, 1e-4, 1e-4).pass);

        Tensor<double> xp = random_tensor<double>({1, 2, 4, 4}, rng);
        auto fpool = [](Tape<double>* t, Tensor<double>& in) {
            return sum_all(t, global_avg_pool(t, avg_pool2(t, in)));
        };
        CHECK(grad_check<double>(fpool, xp, 1e-4, 1e-4).pass);

        Tensor<double> xce = random_tensor<double>({3, 7}, rng, -2, 2);
        auto fce = [](Tape<double>* t, Tensor<double>& in) {
            return cross_entropy_logits(t, in, {1, 4, 6});
        };
        CHECK(grad_check<double>(fce, xce, 1e-4, 1e-4).pass);
    }
}

TEST_CASE("grad_check through a full encoder layer at tol 1e-3") {
    TransformerEncoderConfig cfg;
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    cfg.num_layers = 2;
    cfg.feedforward_dim = 16;
    cfg.dropout_rate = 0.0;
    cfg.positional_encoding = Positional::learned;
    Rng rng(18);
    TransformerEncoderWeights<double> w;
    w.init(cfg, 5, rng);
    Tensor<double> x = random_tensor<double>({4, 8}, rng);
    auto f = [&](Tape<double>* t, Tensor<double>& in) {
        ForwardCtx<double> ctx{t, false, nullptr};
        auto [out, attn] = transformer_encoder(ctx, in, w);
        return cross_entropy_logits(t, select(t, out, 0, 0).reshaped({1, 8}), {2});
    };
    // deeper-than-10-op composition: tolerance 1e-3
    CHECK(grad_check<double>(f, x, 1e-4, 1e-3).pass);

    ParamList<double> params;
    w.collect("enc", params);
    for (auto& p : params) {
        auto fp = [&](Tape<double>* t, Tensor<double>& in) {
            (void)in;
            ForwardCtx<double> ctx{t, false, nullptr};
            auto [out, attn] = transformer_encoder(ctx, x, w);
            return cross_entropy_logits(t, select(t, out, 0, 0).reshaped({1, 8}), {2});
        };
        CHECK(grad_check<double>(fp, p.value, 1e-4, 1e-3, 16, 99).pass);
    }
}
