#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "avflow/dual.hpp"
#include "avflow/rng.hpp"
#include "avflow/tape.hpp"
#include "avflow/tensor.hpp"

#include "testutil.hpp"

using namespace avflow;

namespace {

// Small two-layer smooth network built straight from kernel primitives,
// expressible in all three algebras.
struct TinyNet {
    Tensor w1, b1, w2, b2;

    static TinyNet random(std::uint64_t seed, std::size_t in = 3, std::size_t hidden = 5, std::size_t out = 2) {
        Rng rng(seed);
        return TinyNet{rng.uniform_tensor({hidden, in}, -0.8, 0.8), rng.uniform_tensor({hidden}, -0.3, 0.3),
                       rng.uniform_tensor({out, hidden}, -0.8, 0.8), rng.uniform_tensor({out}, -0.3, 0.3)};
    }

    template <class V, class Lift>
    V apply(const V& x, Lift lift) const {
        V h = silu(add(matvec(lift(w1), x), lift(b1)));
        return add(matvec(lift(w2), h), lift(b2));
    }

    Tensor value(const Tensor& x) const {
        return apply<Tensor>(x, [](const Tensor& t) { return t; });
    }
};

}  // namespace

TEST_CASE("tensor kernels: shape contracts") {
    Tensor a = Tensor::vec({1.0, 2.0});
    Tensor b = Tensor::vec({1.0, 2.0, 3.0});
    CHECK_THROWS_AS(add(a, b), ContractViolation);
    CHECK_THROWS_AS(mul(a, b), ContractViolation);
    CHECK_THROWS_AS(matvec(a, b), ContractViolation);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), ContractViolation);
    CHECK_THROWS_AS(a.value(), ContractViolation);
    CHECK_THROWS_AS(slice(a, 1, 2), ContractViolation);
    CHECK_THROWS_AS(broadcast(a, 4), ContractViolation);
}

TEST_CASE("tensor kernels: basic arithmetic") {
    Tensor a = Tensor::vec({1.0, -2.0, 3.0});
    Tensor b = Tensor::vec({4.0, 5.0, -6.0});
    CHECK(add(a, b).storage() == std::vector<double>{5.0, 3.0, -3.0});
    CHECK(sub(a, b).storage() == std::vector<double>{-3.0, -7.0, 9.0});
    CHECK(mul(a, b).storage() == std::vector<double>{4.0, -10.0, -18.0});
    CHECK(smul(2.0, a).storage() == std::vector<double>{2.0, -4.0, 6.0});
    CHECK(reduce_sum(a).value() == 2.0);
    CHECK(reduce_mean(b).value() == 1.0);
    CHECK(concat({a, b}).numel() == 6);
    CHECK(slice(concat({a, b}), 3, 3).storage() == b.storage());
    CHECK(broadcast(Tensor::scalar(7.0), 3).storage() == std::vector<double>{7.0, 7.0, 7.0});

    Tensor w({2, 3}, {1, 0, 2, 0, 3, -1});
    CHECK(matvec(w, a).storage() == std::vector<double>{7.0, -9.0});
    Tensor m = matmul(w, Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
    CHECK(m.shape() == Shape{2, 2});
    CHECK(m.storage() == std::vector<double>{11.0, 14.0, 4.0, 6.0});
}

TEST_CASE("kernel primitives are deterministic (bit-identical reruns)") {
    Rng rng(123);
    Tensor x = rng.normal_tensor({64});
    TinyNet net = TinyNet::random(9, 64, 32, 8);
    Tensor out1 = net.value(x);
    Tensor out2 = net.value(x);
    CHECK(out1.identical(out2));

    Rng rng_a(55), rng_b(55);
    CHECK(rng_a.normal_tensor({32}).identical(rng_b.normal_tensor({32})));
}

TEST_CASE("jvp: identity and elementwise square") {
    Tensor x = Tensor::vec({3.0});
    Tensor v = Tensor::vec({1.0});

    auto [p_id, t_id] = jvp([](const std::vector<DualTensor>& in) { return in[0]; }, {x}, {v});
    CHECK(p_id.identical(x));
    CHECK(t_id.identical(v));

    auto [p_sq, t_sq] = jvp([](const std::vector<DualTensor>& in) { return mul(in[0], in[0]); }, {x}, {v});
    CHECK(p_sq[0] == 9.0);
    CHECK(t_sq[0] == 6.0);
}

TEST_CASE("jvp: matches central finite differences on a smooth network") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        TinyNet net = TinyNet::random(seed);
        Rng rng(seed + 1000);
        Tensor x = rng.normal_tensor({3});
        Tensor v = rng.normal_tensor({3});

        auto [primal, tangent] = jvp(
            [&](const std::vector<DualTensor>& in) {
                return net.apply<DualTensor>(in[0], [](const Tensor& t) { return DualTensor::constant(t); });
            },
            {x}, {v});
        CHECK(primal.identical(net.value(x)));

        Tensor fd = testutil::fd_directional([&](const Tensor& q) { return net.value(q); }, x, v, 1e-5);
        CHECK(testutil::max_rel_err(tangent, fd) < 1e-6);
    }
}

TEST_CASE("jvp: contract and overflow errors") {
    Tensor x = Tensor::vec({1.0, 2.0});
    Tensor bad_tangent = Tensor::vec({1.0});
    auto ident = [](const std::vector<DualTensor>& in) { return in[0]; };
    CHECK_THROWS_AS(jvp(ident, {x}, {bad_tangent}), ContractViolation);

    auto blows_up = [](const std::vector<DualTensor>& in) {
        DualTensor h = in[0];
        for (int i = 0; i < 40; ++i) h = mul(h, h);  // 1e300^2 -> inf
        return h;
    };
    CHECK_THROWS_AS(jvp(blows_up, {Tensor::vec({1e300, 1.0})}, {Tensor::vec({1.0, 0.0})}), NumericError);
}

TEST_CASE("jvp linearity in the tangent") {
    TinyNet net = TinyNet::random(7);
    Rng rng(77);
    Tensor x = rng.normal_tensor({3});
    Tensor v1 = rng.normal_tensor({3});
    Tensor v2 = rng.normal_tensor({3});
    const double a = 0.37, b = -1.25;

    auto run = [&](const Tensor& v) {
        return jvp(
                   [&](const std::vector<DualTensor>& in) {
                       return net.apply<DualTensor>(in[0], [](const Tensor& t) { return DualTensor::constant(t); });
                   },
                   {x}, {v})
            .second;
    };
    Tensor combo = run(add(smul(a, v1), smul(b, v2)));
    Tensor split = add(smul(a, run(v1)), smul(b, run(v2)));
    CHECK(max_abs_diff(combo, split) < 1e-12);
}

TEST_CASE("zero tangents stay zero through every primitive") {
    Rng rng(31);
    Tensor x = rng.uniform_tensor({6}, 0.1, 2.0);
    DualTensor d = DualTensor::constant(x);
    DualTensor h = silu(mul(d, d));
    h = add(h, sqrt(d));
    h = sub(h, cos(sin(d)));
    h = pow(reciprocal(h), 1.5);
    h = concat({slice(h, 0, 3), slice(square(h), 3, 3)});
    DualTensor out = reduce_mean(h);
    CHECK(out.tangent[0] == 0.0);

    // sqrt at zero: infinite local derivative, zero tangent must survive
    DualTensor at_zero = sqrt(DualTensor::constant(Tensor::vec({0.0})));
    CHECK(at_zero.tangent[0] == 0.0);
}

TEST_CASE("grad: constant and quadratic losses") {
    Rng rng(5);
    std::vector<Tensor> params = {rng.normal_tensor({4}), rng.normal_tensor({3})};

    auto zero_grads = grad(
        [](GradTape& tape, const std::vector<Var>&) { return tape.leaf(Tensor::scalar(0.0)); }, params);
    for (const auto& g : zero_grads)
        for (std::size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);

    auto quad_grads = grad(
        [](GradTape&, const std::vector<Var>& p) {
            Var acc = smul(0.5, reduce_sum(square(p[0])));
            return add(acc, smul(0.5, reduce_sum(square(p[1]))));
        },
        params);
    CHECK(quad_grads[0].identical(params[0]));
    CHECK(quad_grads[1].identical(params[1]));
}

TEST_CASE("grad: rejects non-scalar losses") {
    std::vector<Tensor> params = {Tensor::vec({1.0, 2.0})};
    CHECK_THROWS_AS(grad([](GradTape&, const std::vector<Var>& p) { return p[0]; }, params), ContractViolation);
}

TEST_CASE("grad: matches finite differences on a random MLP loss") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        TinyNet net = TinyNet::random(seed);
        Rng rng(seed + 2000);
        Tensor x = rng.normal_tensor({3});
        Tensor target = rng.normal_tensor({2});

        std::vector<Tensor> params = {net.w1, net.b1, net.w2, net.b2};
        auto loss_fn = [&](GradTape& tape, const std::vector<Var>& p) {
            Var h = silu(add(matvec(p[0], tape.leaf(x)), p[1]));
            Var out = add(matvec(p[2], h), p[3]);
            return reduce_sum(square(sub(out, tape.leaf(target))));
        };
        auto grads = grad(loss_fn, params);

        auto scalar_loss = [&](const TinyNet& n) {
            Tensor d = sub(n.value(x), target);
            return reduce_sum(square(d)).value();
        };
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor fd = testutil::fd_gradient(
                [&](const Tensor& q) {
                    TinyNet n = net;
                    (k == 0 ? n.w1 : k == 1 ? n.b1 : k == 2 ? n.w2 : n.b2) = q;
                    return scalar_loss(n);
                },
                params[k], 1e-6);
            CHECK(testutil::max_rel_err_scaled(grads[k], fd) < 1e-5);
        }
    }
}

TEST_CASE("grad covers every primitive (finite-difference sweep)") {
    Rng rng(404);
    Tensor x = rng.uniform_tensor({4}, 0.3, 1.7);
    Tensor w = rng.uniform_tensor({3, 4}, -0.7, 0.7);
    Tensor m = rng.uniform_tensor({2, 3}, -0.7, 0.7);

    auto build = [&](GradTape& tape, Var vx, Var vw, Var vm) {
        Var h = matvec(vw, vx);                            // matvec
        h = add(h, broadcast(reduce_mean(sin(vx)), 3));    // reduce_mean, sin, broadcast, add
        h = mul(h, cos(h));                                // mul, cos
        h = sub(h, smul(0.25, square(h)))                  // smul, square, sub
            ;
        Var mm = matvec(matmul(vm, vw), vx);               // matmul
        Var joined = concat({h, mm, sqrt(add(square(vx), broadcast(tape.leaf(Tensor::scalar(0.3)), 4)))});
        Var s = slice(joined, 2, 5);                       // slice
        s = pow(add(square(s), broadcast(tape.leaf(Tensor::scalar(0.2)), 5)), 0.7);  // pow
        s = reciprocal(add(square(s), broadcast(tape.leaf(Tensor::scalar(0.5)), 5)));  // reciprocal
        return reduce_sum(silu(s));                        // silu, reduce_sum
    };

    GradTape tape;
    Var vx = tape.leaf(x), vw = tape.leaf(w), vm = tape.leaf(m);
    Var loss = build(tape, vx, vw, vm);
    tape.backward(loss);

    auto eval = [&](const Tensor& qx, const Tensor& qw, const Tensor& qm) {
        GradTape t2;
        return build(t2, t2.leaf(qx), t2.leaf(qw), t2.leaf(qm)).value()[0];
    };
    Tensor fdx = testutil::fd_gradient([&](const Tensor& q) { return eval(q, w, m); }, x);
    Tensor fdw = testutil::fd_gradient([&](const Tensor& q) { return eval(x, q, m); }, w);
    Tensor fdm = testutil::fd_gradient([&](const Tensor& q) { return eval(x, w, q); }, m);
    CHECK(testutil::max_rel_err(tape.grad(vx), fdx) < 1e-6);
    CHECK(testutil::max_rel_err(tape.grad(vw), fdw) < 1e-6);
    CHECK(testutil::max_rel_err(tape.grad(vm), fdm) < 1e-6);
}

TEST_CASE("forward and reverse mode agree on scalar functions") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        TinyNet net = TinyNet::random(seed, 4, 6, 3);
        Rng rng(seed + 3000);
        Tensor x = rng.normal_tensor({4});

        // reverse: gradient of sum(f(x)) w.r.t. x
        GradTape tape;
        Var vx = tape.leaf(x);
        Var out = net.apply<Var>(vx, [&](const Tensor& t) { return tape.leaf(t); });
        Var loss = reduce_sum(out);
        tape.backward(loss);
        Tensor g = tape.grad(vx);

        // forward: directional derivative along each basis vector
        for (std::size_t i = 0; i < x.numel(); ++i) {
            std::vector<double> e(x.numel(), 0.0);
            e[i] = 1.0;
            auto [p, t] = jvp(
                [&](const std::vector<DualTensor>& in) {
                    return reduce_sum(
                        net.apply<DualTensor>(in[0], [](const Tensor& q) { return DualTensor::constant(q); }));
                },
                {x}, {Tensor(x.shape(), e)});
            CHECK(testutil::rel_err(t[0], g[i]) < 1e-10);
        }
    }
}

TEST_CASE("stop_gradient blocks every path") {
    Rng rng(8);
    std::vector<Tensor> params = {rng.normal_tensor({5})};

    auto g1 = grad([](GradTape&, const std::vector<Var>& p) { return reduce_sum(stop_gradient(p[0])); }, params);
    for (std::size_t i = 0; i < g1[0].numel(); ++i) CHECK(g1[0][i] == 0.0);

    auto g2 = grad([](GradTape&, const std::vector<Var>& p) { return reduce_sum(mul(p[0], stop_gradient(p[0]))); },
                   params);
    CHECK(g2[0].identical(params[0]));  // d/dp sum(p * const) = const = sg(p)
}

TEST_CASE("tape replay visits each recorded operation exactly once") {
    Rng rng(21);
    Tensor x = rng.normal_tensor({6});
    GradTape tape;
    Var vx = tape.leaf(x);
    Var a = square(vx);          // reused twice below
    Var b = add(a, sin(a));      // diamond: a feeds two consumers
    Var loss = reduce_sum(mul(b, b));
    const std::size_t ops_recorded = tape.size() - 1;  // minus the leaf
    tape.backward(loss);
    CHECK(tape.backward_visits() == ops_recorded);
}

TEST_CASE("gradients of untouched parameters are exactly zero") {
    Rng rng(13);
    std::vector<Tensor> params = {rng.normal_tensor({3}), rng.normal_tensor({4})};
    auto grads = grad([](GradTape&, const std::vector<Var>& p) { return reduce_sum(square(p[0])); }, params);
    for (std::size_t i = 0; i < grads[1].numel(); ++i) CHECK(grads[1][i] == 0.0);
    CHECK(grads[1].shape() == params[1].shape());
}

TEST_CASE("backward rejects non-finite losses") {
    GradTape tape;
    Var v = tape.leaf(Tensor::scalar(1e308));
    Var loss = mul(v, v);  // inf
    CHECK_THROWS_AS(tape.backward(loss), NumericError);
}
