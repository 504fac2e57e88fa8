#include <doctest.h>
#include <functional>
#include <limits>

#include "tokcode/gradcheck.hpp"
#include "tokcode/tensor.hpp"

using namespace tokcode;
using namespace tokcode::ad;

namespace {

std::vector<double> random_values(size_t n, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<double> out(n);
    for (auto& v : out) v = scale * (2.0 * rng.next_double() - 1.0);
    return out;
}

GcParam<double> random_param(int r, int c, uint64_t seed, double scale = 1.0) {
    return GcParam<double>{r, c, random_values(static_cast<size_t>(r) * c, seed, scale)};
}

}  // namespace

TEST_CASE("softmax of a zero row is uniform") {
    Graph<double> g;
    const std::vector<double> zeros(4, 0.0);
    auto t = g.constant(1, 4, zeros);
    auto y = softmax_rows(t);
    for (int j = 0; j < 4; ++j) CHECK(y.value()[j] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and stay positive") {
    Rng rng(31);
    Graph<double> g;
    std::vector<double> vals(6 * 9);
    for (auto& v : vals) v = 30.0 * (rng.next_double() - 0.5);
    auto t = g.constant(6, 9, vals);
    auto y = softmax_rows(t);
    for (int i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 9; ++j) {
            const double p = y.value()[i * 9 + j];
            CHECK(p > 0.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("cosine similarity of a vector with itself is one") {
    Graph<double> g;
    const auto vals = random_values(8, 5);
    auto a = g.constant(1, 8, vals);
    auto b = g.constant(1, 8, vals);
    CHECK(cosine_similarity(a, b).scalar() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("matmul gradients match central finite differences") {
    // Downstream weighting makes the gradient non-uniform across elements.
    const auto wvals = random_values(6, 99);
    auto build = [&](Graph<double>& g, const std::vector<Tensor<double>>& p) {
        auto w = g.constant(3, 2, wvals);
        return mean_all(mul(matmul(p[0], p[1]), w));
    };
    const auto report = grad_check<double>(
        build, {random_param(3, 4, 1), random_param(4, 2, 2)}, 1e-6, 1e-6);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("stop_gradient passes values and blocks gradients") {
    Graph<double> g;
    const auto vals = random_values(12, 8);
    auto t = g.leaf(3, 4, std::span<const double>(vals.data(), vals.size()), true);
    auto s = stop_gradient(t);
    for (size_t i = 0; i < vals.size(); ++i) CHECK(s.value()[i] == t.value()[i]);

    auto loss = scale(mean_all(s), 12.0);  // sum
    g.backward(loss);
    for (double gv : t.grad()) CHECK(gv == 0.0);
}

TEST_CASE("straight-through composite routes gradient around the stopped branch") {
    // d(sum(sg(a-b) + b))/db = ones, /da = zeros.
    Graph<double> g;
    const auto av = random_values(6, 21);
    const auto bv = random_values(6, 22);
    auto a = g.leaf(2, 3, std::span<const double>(av.data(), av.size()), true);
    auto b = g.leaf(2, 3, std::span<const double>(bv.data(), bv.size()), true);
    auto composite = add(stop_gradient(sub(a, b)), b);
    auto loss = scale(mean_all(composite), 6.0);
    g.backward(loss);
    for (double gv : a.grad()) CHECK(gv == 0.0);
    for (double gv : b.grad()) CHECK(gv == doctest::Approx(1.0).epsilon(1e-12));

    // The forward function itself is constant in b, so central differences on
    // it see zero along the stopped branch; reverse mode agrees with the
    // hand-derived straight-through gradient instead.
    auto build = [&](Graph<double>& gg, const std::vector<Tensor<double>>& p) {
        auto ac = gg.constant(2, 3, av);
        return scale(mean_all(add(stop_gradient(sub(ac, p[0])), p[0])), 6.0);
    };
    // f = sum(a - b + b) = sum(a): flat in b.
    GcParam<double> bp{2, 3, bv};
    auto probe = bp;
    probe.values[0] += 1e-6;
    Graph<double> g1, g2;
    auto t1 = build(g1, {g1.leaf(2, 3, std::span<const double>(bp.values.data(), 6), true)});
    auto t2 = build(g2, {g2.leaf(2, 3, std::span<const double>(probe.values.data(), 6), true)});
    CHECK(t1.scalar() == doctest::Approx(t2.scalar()).epsilon(1e-12));
}

TEST_CASE("grad_check accepts the textbook quadratic") {
    auto build = [](Graph<double>& g, const std::vector<Tensor<double>>& p) {
        return scale(squared_error(p[0], scale(p[0], 0.0)), 0.5);  // 0.5*||x||^2
    };
    const auto report = grad_check<double>(build, {random_param(1, 10, 3)}, 1e-6, 1e-7);
    CHECK(report.pass);
}

TEST_CASE("grad_check accepts the cosine loss") {
    auto build = [](Graph<double>& g, const std::vector<Tensor<double>>& p) {
        return affine(cosine_similarity(p[0], p[1]), -1.0, 1.0);  // 1 - cos
    };
    const auto report =
        grad_check<double>(build, {random_param(1, 16, 4), random_param(1, 16, 5)}, 1e-6, 1e-5);
    CHECK(report.pass);
}

TEST_CASE("grad_check flags non-finite forward values") {
    auto build = [](Graph<double>& g, const std::vector<Tensor<double>>& p) {
        std::vector<double> inf_val{std::numeric_limits<double>::infinity()};
        auto c = g.constant(1, 1, inf_val);
        return mean_all(add_bias(p[0], c));
    };
    CHECK_THROWS_AS(grad_check<double>(build, {random_param(2, 1, 6)}, 1e-6, 1e-5),
                    NumericError);
}

TEST_CASE("every differentiable op passes the finite-difference oracle") {
    using Params = std::vector<Tensor<double>>;
    using BuildFn = std::function<Tensor<double>(Graph<double>&, const Params&)>;
    struct Case {
        const char* name;
        BuildFn build;
        std::vector<GcParam<double>> params;
    };

    static const std::vector<int32_t> ids{0, 2, 1, 3, 2};
    static const std::vector<int> rows_sel{0, 2, 3};
    static const std::vector<int32_t> targets{1, 0, 2};
    static const std::vector<double> pool_w{0.7, 1.1, 0.9, 1.3};

    const std::vector<Case> cases = {
        {"add",
         [](Graph<double>&, const Params& p) { return mean_all(add(p[0], p[1])); },
         {random_param(3, 4, 11), random_param(3, 4, 12)}},
        {"sub",
         [](Graph<double>&, const Params& p) { return mean_all(sub(p[0], p[1])); },
         {random_param(3, 4, 13), random_param(3, 4, 14)}},
        {"mul",
         [](Graph<double>&, const Params& p) { return mean_all(mul(p[0], p[1])); },
         {random_param(3, 4, 15), random_param(3, 4, 16)}},
        {"affine",
         [](Graph<double>&, const Params& p) { return mean_all(affine(p[0], 2.5, -0.75)); },
         {random_param(2, 5, 17)}},
        {"add_bias",
         [](Graph<double>&, const Params& p) {
             return mean_all(mul(add_bias(p[0], p[1]), p[0]));
         },
         {random_param(4, 3, 18), random_param(1, 3, 19)}},
        {"softmax_rows",
         [](Graph<double>&, const Params& p) {
             return mean_all(mul(softmax_rows(p[0]), p[1]));
         },
         {random_param(3, 6, 20, 3.0), random_param(3, 6, 21)}},
        {"layer_norm",
         [](Graph<double>&, const Params& p) {
             return mean_all(mul(layer_norm(p[0], p[1], p[2]), p[3]));
         },
         {random_param(3, 8, 22), random_param(1, 8, 23), random_param(1, 8, 24),
          random_param(3, 8, 25)}},
        {"gelu",
         [](Graph<double>&, const Params& p) { return mean_all(gelu(p[0])); },
         {random_param(3, 5, 26, 2.0)}},
        {"embedding_lookup",
         [](Graph<double>&, const Params& p) {
             return mean_all(mul(embedding_lookup(p[0], ids), p[1]));
         },
         {random_param(4, 6, 27), random_param(5, 6, 28)}},
        {"gather_rows",
         [](Graph<double>&, const Params& p) {
             return mean_all(mul(gather_rows(p[0], rows_sel), p[1]));
         },
         {random_param(5, 4, 29), random_param(3, 4, 30)}},
        {"concat_rows",
         [](Graph<double>&, const Params& p) {
             return mean_all(mul(concat_rows({p[0], p[1]}), p[2]));
         },
         {random_param(2, 4, 31), random_param(3, 4, 32), random_param(5, 4, 33)}},
        {"transpose",
         [](Graph<double>&, const Params& p) { return mean_all(mul(transpose(p[0]), p[1])); },
         {random_param(3, 5, 34), random_param(5, 3, 35)}},
        {"slice_cols",
         [](Graph<double>&, const Params& p) {
             return mean_all(mul(slice_cols(p[0], 1, 4), p[1]));
         },
         {random_param(3, 6, 36), random_param(3, 3, 37)}},
        {"causal_mask",
         [](Graph<double>&, const Params& p) {
             return mean_all(mul(softmax_rows(causal_mask(p[0])), p[1]));
         },
         {random_param(4, 4, 38, 2.0), random_param(4, 4, 39)}},
        {"mean_pool",
         [](Graph<double>&, const Params& p) {
             return mean_all(
                 mul(mean_pool(p[0], std::span<const double>(pool_w.data(), 4)), p[1]));
         },
         {random_param(4, 5, 40), random_param(1, 5, 41)}},
        {"mean",
         [](Graph<double>&, const Params& p) { return mean_all(p[0]); },
         {random_param(4, 4, 42)}},
        {"l2_norm",
         [](Graph<double>&, const Params& p) { return l2_norm(p[0]); },
         {random_param(1, 9, 43)}},
        {"squared_error",
         [](Graph<double>&, const Params& p) { return squared_error(p[0], p[1]); },
         {random_param(2, 6, 44), random_param(2, 6, 45)}},
        {"cosine_similarity",
         [](Graph<double>&, const Params& p) { return cosine_similarity(p[0], p[1]); },
         {random_param(1, 12, 46), random_param(1, 12, 47)}},
        {"cross_entropy",
         [](Graph<double>&, const Params& p) { return cross_entropy_rows(p[0], targets, 0.1); },
         {random_param(3, 5, 48, 2.0)}},
        {"embedding_mix",
         [](Graph<double>&, const Params& p) {
             return mean_all(embedding_mix(softmax_rows(p[0]), p[1]));
         },
         {random_param(3, 4, 49, 2.0), random_param(4, 6, 50)}},
    };

    for (const auto& c : cases) {
        CAPTURE(c.name);
        const auto report = grad_check<double>(c.build, c.params, 1e-6, 1e-5);
        CHECK_MESSAGE(report.pass, c.name, " max_rel_err=", report.max_rel_err);
    }
}

TEST_CASE("backward pass is deterministic") {
    const auto av = random_values(12, 61);
    const auto bv = random_values(12, 62);
    auto run = [&]() {
        Graph<double> g;
        auto a = g.leaf(3, 4, std::span<const double>(av.data(), av.size()), true);
        auto b = g.leaf(3, 4, std::span<const double>(bv.data(), bv.size()), true);
        auto loss = mean_all(gelu(matmul(softmax_rows(a), transpose(b))));
        g.backward(loss);
        std::vector<double> out = a.grad();
        out.insert(out.end(), b.grad().begin(), b.grad().end());
        out.push_back(loss.scalar());
        return out;
    };
    const auto first = run();
    const auto second = run();
    REQUIRE(first.size() == second.size());
    for (size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("shape mismatches raise errors naming both shapes") {
    Graph<double> g;
    auto a = g.constant(2, 3, std::vector<double>(6, 0.0));
    auto b = g.constant(2, 4, std::vector<double>(8, 0.0));
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2x3]"), InputError);
    try {
        matmul(a, b);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x4]") != std::string::npos);
    }
}
