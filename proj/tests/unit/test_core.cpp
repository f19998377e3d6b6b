#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "biofact/core/adamw.hpp"
#include "biofact/core/errors.hpp"
#include "biofact/core/gradcheck.hpp"
#include "biofact/core/layers.hpp"
#include "biofact/core/matrix.hpp"
#include "biofact/core/rng.hpp"
#include "biofact/core/text.hpp"
#include "support/gradient_suite.hpp"

using namespace biofact;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows)
{
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index r = 0;
    for (const auto& row : rows) {
        Eigen::Index c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

Matrix triple_loop(const Matrix& a, const Matrix& b)
{
    Matrix out = Matrix::Zero(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.cols(); ++j) {
            long double s = 0;
            for (Eigen::Index k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
            out(i, j) = static_cast<double>(s);
        }
    return out;
}

} // namespace

TEST_SUITE("core")
{
    TEST_CASE("matmul hand cases")
    {
        CHECK(matmul(mat({{1, 0}, {0, 1}}), mat({{3, 4}, {5, 6}})) == mat({{3, 4}, {5, 6}}));
        CHECK(matmul(mat({{1, 2}}), mat({{3}, {4}}))(0, 0) == 11.0);
        CHECK_THROWS_AS(matmul(mat({{1, 2}}), mat({{1, 2}})), DimensionError);
    }

    TEST_CASE("matmul agrees with a triple loop")
    {
        Rng rng(7);
        for (int t = 0; t < 10; ++t) {
            const auto n = static_cast<Eigen::Index>(1 + rng.below(16));
            const auto k = static_cast<Eigen::Index>(1 + rng.below(16));
            const auto m = static_cast<Eigen::Index>(1 + rng.below(16));
            const Matrix a = rng.normal_matrix(n, k, 1.0), b = rng.normal_matrix(k, m, 1.0);
            CHECK((matmul(a, b) - triple_loop(a, b)).cwiseAbs().maxCoeff() < 1e-12);
        }
        Rng r2(3);
        const Matrix a = r2.normal_matrix(5, 4, 1.0), b = r2.normal_matrix(4, 3, 1.0);
        CHECK((matmul(a, b) - triple_loop(a, b)).cwiseAbs().maxCoeff() < 1e-12);
    }

    TEST_CASE("softmax examples")
    {
        Vector v(2);
        v << 0, 0;
        CHECK(softmax_row(v)[0] == doctest::Approx(0.5));
        v << 1000, 0;
        const Vector p = softmax_row(v);
        CHECK(p[0] == doctest::Approx(1.0));
        CHECK(p[1] >= 0.0);
        CHECK(p[1] < 1e-300);

        Vector w(3);
        w << 1, 2, 3;
        const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
        const Vector q = softmax_row(w);
        for (int i = 0; i < 3; ++i) CHECK(std::abs(q[i] - static_cast<double>(std::exp(1.0L + i) / z)) < 1e-15);
    }

    TEST_CASE("softmax sums to one and is permutation equivariant")
    {
        Rng rng(11);
        for (int t = 0; t < 20; ++t) {
            Vector v(7);
            for (auto& x : v) x = 5.0 * rng.normal();
            const Vector p = softmax_row(v);
            CHECK(std::abs(p.sum() - 1.0) < 1e-12);
            CHECK((p.array() > 0).all());
            std::vector<int> perm{0, 1, 2, 3, 4, 5, 6};
            rng.shuffle(perm);
            Vector pv(7), pp(7);
            for (int i = 0; i < 7; ++i) {
                pv[i] = v[perm[static_cast<std::size_t>(i)]];
                pp[i] = p[perm[static_cast<std::size_t>(i)]];
            }
            CHECK((softmax_row(pv) - pp).cwiseAbs().maxCoeff() < 1e-15);
        }
    }

    TEST_CASE("softmax rejects empty and non-finite input")
    {
        CHECK_THROWS(softmax_row(Vector(0)));
        Vector v(2);
        v << std::numeric_limits<double>::quiet_NaN(), 0;
        CHECK_THROWS(softmax_row(v));
    }

    TEST_CASE("linear identity and bias gradient")
    {
        Linear lin(Matrix::Identity(3, 3), Matrix::Zero(1, 3));
        Rng rng(1);
        const Matrix x = rng.normal_matrix(4, 3, 1.0);
        CHECK(linear_forward(x, lin) == x);
        const Matrix x1 = rng.normal_matrix(1, 3, 1.0);
        linear_backward(x1, Matrix::Ones(1, 3), lin);
        CHECK(lin.bias.grad == Matrix::Ones(1, 3));
        CHECK_THROWS_AS(linear_forward(rng.normal_matrix(2, 4, 1.0), lin), DimensionError);
    }

    TEST_CASE("lora zero-init and scale")
    {
        Rng rng(2);
        const Matrix frozen = rng.normal_matrix(5, 4, 1.0);
        LoraAdapter lora = LoraAdapter::init(4, 5, 4, 8.0, rng);
        const Matrix x = rng.normal_matrix(3, 4, 1.0);
        const Matrix plain = x * frozen.transpose();
        CHECK(lora_linear_forward(x, frozen, lora) == plain);
        lora.alpha = 4.0;
        CHECK(lora.scale() == 1.0);
        const Matrix frozen_copy = frozen;
        lora_linear_backward(x, Matrix::Ones(3, 5), frozen, lora);
        CHECK(frozen == frozen_copy);
        CHECK(lora.b.grad.cwiseAbs().sum() > 0.0);
    }

    TEST_CASE("mlp passthrough and dead relu")
    {
        Rng rng(3);
        Mlp one;
        one.layers.push_back(Linear(Matrix::Identity(3, 3), Matrix::Zero(1, 3)));
        const Matrix x = rng.normal_matrix(2, 3, 1.0);
        CHECK(mlp_forward(x, one) == x);

        Mlp two;
        two.layers.push_back(Linear(Matrix::Identity(3, 3), Matrix::Constant(1, 3, -100.0)));
        two.layers.push_back(Linear(rng.normal_matrix(2, 3, 1.0), mat({{0.25, -0.5}})));
        const Matrix out = mlp_forward(x, two);
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            CHECK(out(r, 0) == 0.25);
            CHECK(out(r, 1) == -0.5);
        }
    }

    TEST_CASE("attention single token and uniform attention")
    {
        Rng rng(4);
        SelfAttention attn = SelfAttention::init(5, 4, rng);
        attn.pos.value = rng.normal_matrix(4, 5, 0.5);
        const Matrix x = rng.normal_matrix(1, 5, 1.0);
        const Matrix h = x + attn.pos.value.topRows(1);
        const Matrix expected = h * attn.wv.value.transpose() * attn.wo.value.transpose() + h;
        CHECK((self_attention_forward(x, attn) - expected).cwiseAbs().maxCoeff() < 1e-12);

        attn.wq.value.setZero();
        attn.wk.value.setZero();
        const Matrix seq = rng.normal_matrix(3, 5, 1.0);
        const Matrix hs = seq + attn.pos.value.topRows(3);
        const Matrix v = hs * attn.wv.value.transpose();
        const Matrix mean_v = v.colwise().mean();
        const Matrix out = self_attention_forward(seq, attn);
        for (Eigen::Index r = 0; r < 3; ++r) {
            const Matrix want = mean_v * attn.wo.value.transpose() + hs.row(r);
            CHECK((out.row(r) - want).cwiseAbs().maxCoeff() < 1e-12);
        }
        CHECK_THROWS(self_attention_forward(rng.normal_matrix(5, 5, 1.0), attn));
    }

    TEST_CASE("adamw examples")
    {
        AdamWConfig cfg;
        cfg.weight_decay = 0.0;
        Parameter p(mat({{1.0, -2.0}}));
        adamw_step({&p}, cfg);
        CHECK(p.value == mat({{1.0, -2.0}}));

        Parameter q(mat({{1.0, -2.0, 0.5}}));
        q.grad = mat({{0.3, -7.0, 1e-3}});
        AdamWConfig c2;
        c2.weight_decay = 0.0;
        c2.learning_rate = 1e-3;
        adamw_step({&q}, c2);
        CHECK(q.value(0, 0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
        CHECK(q.value(0, 1) == doctest::Approx(-2.0 + 1e-3).epsilon(1e-6));
        CHECK(q.value(0, 2) < 0.5);
        CHECK(q.step_count == 1);
    }

    TEST_CASE("adamw on w^2 follows a reference trajectory")
    {
        AdamWConfig cfg;
        cfg.learning_rate = 0.05;
        cfg.weight_decay = 0.01;
        Parameter w(mat({{1.0}}));
        long double rw = 1.0L, m = 0.0L, v = 0.0L;
        bool crossed = false;
        double prev = 1.0;
        for (int t = 1; t <= 100; ++t) {
            const long double g = 2.0L * rw;
            w.grad(0, 0) = 2.0 * w.value(0, 0);
            adamw_step({&w}, cfg);
            rw -= 0.05L * 0.01L * rw;
            m = 0.9L * m + 0.1L * g;
            v = 0.999L * v + 0.001L * g * g;
            const long double mh = m / (1.0L - std::pow(0.9L, t)), vh = v / (1.0L - std::pow(0.999L, t));
            rw -= 0.05L * mh / (std::sqrt(vh) + 1e-8L);
            CHECK(std::abs(w.value(0, 0) - static_cast<double>(rw)) < 1e-12);
            // Momentum carries w past 0 eventually; until then |w| falls every step.
            crossed = crossed || w.value(0, 0) <= 0.0;
            if (!crossed) CHECK(std::abs(w.value(0, 0)) < prev);
            prev = std::abs(w.value(0, 0));
        }
        CHECK(crossed);
        CHECK(prev < 1.0);
    }

    TEST_CASE("adamw weight decay shrinks weights with zero gradient")
    {
        AdamWConfig cfg;
        cfg.weight_decay = 0.1;
        cfg.learning_rate = 0.01;
        Parameter p(mat({{2.0, -3.0}}));
        adamw_step({&p}, cfg);
        CHECK(std::abs(p.value(0, 0)) < 2.0);
        CHECK(std::abs(p.value(0, 1)) < 3.0);
        CHECK(p.value(0, 0) > 0.0);
    }

    TEST_CASE("adamw rejects bad configuration")
    {
        AdamWConfig cfg;
        cfg.beta1 = 1.0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = AdamWConfig{};
        cfg.learning_rate = 0.0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }

    TEST_CASE("finite difference check on a quadratic and a corrupted gradient")
    {
        Parameter p(mat({{0.3, -1.2, 2.0}}));
        auto loss = [&] { return p.value.squaredNorm(); };
        p.grad = 2.0 * p.value;
        const auto ok = finite_difference_check(loss, {{"p", &p}}, 1e-5, 1e-4);
        CHECK(ok.max_rel_error() < 1e-6);
        CHECK(ok.passed());
        p.grad = 4.0 * p.value;
        const auto bad = finite_difference_check(loss, {{"p", &p}}, 1e-5, 1e-4);
        CHECK_FALSE(bad.passed());
    }

    TEST_CASE("linear layer under squared loss passes the gradient check")
    {
        Rng rng(5);
        Linear lin = Linear::init(4, 2, rng);
        const Matrix x = rng.normal_matrix(3, 4, 1.0), y = rng.normal_matrix(3, 2, 1.0);
        auto loss = [&] { return 0.5 * (linear_forward(x, lin) - y).squaredNorm(); };
        linear_backward(x, linear_forward(x, lin) - y, lin);
        CHECK(finite_difference_check(loss, {{"w", &lin.weight}, {"b", &lin.bias}}).passed());
    }

    TEST_CASE("every backward pass matches finite differences over 10 seeds")
    {
        for (const auto& c : testing::run_gradient_suite(10)) {
            INFO(c.op << " seed " << c.seed << ": " << c.detail);
            CHECK(c.max_rel_error < 1e-4);
        }
    }

    TEST_CASE("l2 normalize and its backward")
    {
        Rng rng(6);
        Vector x(5);
        for (auto& v : x) v = rng.normal();
        CHECK(std::abs(l2_normalize(x).norm() - 1.0) < 1e-12);
        CHECK(l2_normalize(Vector::Zero(3)) == Vector::Zero(3));
        Vector r(5);
        for (auto& v : r) v = rng.normal();
        const Matrix g = l2_normalize_backward(x, r);
        const auto e = finite_difference_check_input(
            [&](const Matrix& m) { return l2_normalize(Vector(m)).dot(r); }, Matrix(x), g);
        CHECK(e.max_rel_error < 1e-6);
    }

    TEST_CASE("rng streams are reproducible and derived seeds differ")
    {
        Rng a(42), b(42);
        for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
        CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
        CHECK(derive_seed(1, std::uint64_t{0}) != derive_seed(2, std::uint64_t{0}));
        Rng c(9);
        double mean = 0.0;
        for (int i = 0; i < 20000; ++i) mean += c.exponential(2.0);
        CHECK(mean / 20000.0 == doctest::Approx(0.5).epsilon(0.05));
        for (int i = 0; i < 1000; ++i) CHECK(c.below(7) < 7);
    }

    TEST_CASE("format_double round trips and parse_double is strict")
    {
        for (double v : {0.1, -2.5e-300, 1.0 / 3.0, 12345678.9, 0.0}) CHECK(parse_double(format_double(v), "t") == v);
        CHECK_THROWS_AS(parse_double("1.5x", "t"), ParseError);
        CHECK_THROWS_AS(parse_double("", "t"), ParseError);
        CHECK(parse_int("42", "t") == 42);
        CHECK_THROWS_AS(parse_int("4.2", "t"), ParseError);
    }

    TEST_CASE("non-finite results are reported")
    {
        Matrix m = Matrix::Ones(2, 2);
        m(1, 1) = std::numeric_limits<double>::infinity();
        CHECK_FALSE(all_finite(m));
        CHECK_THROWS_AS(ensure_finite(m, "test"), NumericError);
    }
}
