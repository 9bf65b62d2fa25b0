#pragma once

#include <functional>
#include <random>

#include "voxa/losses.hpp"
#include "voxa/ops_spatial.hpp"

// Central-difference verification of every registered op kind, run in double
// precision. Each entry builds a small graph, probes the output against a
// fixed random cotangent, and compares tape gradients with (f(x+e)-f(x-e))/2e.

namespace voxa {

using GradBuildFn =
    std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>;

struct GradCheckReport {
    std::string op;
    double max_rel_err = 0.0;
};

inline double finite_diff_check(std::vector<NdArray<double>> inputs, const GradBuildFn& build,
                                double eps = 1e-5) {
    auto eval = [&](const std::vector<NdArray<double>>& ins) {
        Tape<double> tape;
        std::vector<Tensor<double>> leaves;
        leaves.reserve(ins.size());
        for (const auto& a : ins) leaves.push_back(tape.leaf(a, false));
        return build(tape, leaves).val().v[0];
    };

    // analytic gradients
    Tape<double> tape;
    std::vector<Tensor<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& a : inputs) leaves.push_back(tape.leaf(a, true));
    Tensor<double> root = build(tape, leaves);
    if (root.numel() != 1) throw ShapeError("finite_diff_check: probe must be scalar");
    tape.backward(root);

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const NdArray<double> analytic = tape.grad_of(leaves[k]);
        for (std::size_t i = 0; i < inputs[k].v.size(); ++i) {
            auto plus = inputs;
            auto minus = inputs;
            plus[k].v[i] += eps;
            minus[k].v[i] -= eps;
            const double numeric = (eval(plus) - eval(minus)) / (2.0 * eps);
            const double a = analytic.v[i];
            const double err = std::abs(a - numeric) /
                               std::max({std::abs(a), std::abs(numeric), 1e-6});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

namespace detail {

// Inputs drawn from a shuffled value lattice keep pooling argmaxes away from
// ties that would break the central-difference estimate.
inline NdArray<double> lattice(std::vector<int> shape, std::uint64_t seed) {
    NdArray<double> a(std::move(shape));
    std::vector<double> vals(a.v.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = -1.0 + 0.013 * double(i);
    std::mt19937_64 rng(seed);
    std::shuffle(vals.begin(), vals.end(), rng);
    a.v = vals;
    return a;
}

inline NdArray<double> gaussian(std::vector<int> shape, std::uint64_t seed, double sd = 0.5) {
    NdArray<double> a(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, sd);
    for (auto& x : a.v) x = dist(rng);
    return a;
}

// Fixed random cotangent turns any output into a scalar probe.
template <class Fwd>
GradBuildFn probe(Fwd fwd, std::uint64_t seed) {
    return [fwd, seed](Tape<double>& tape, const std::vector<Tensor<double>>& ins) {
        Tensor<double> out = fwd(tape, ins);
        NdArray<double> r = gaussian(out.shape(), seed ^ 0x9e3779b97f4a7c15ull, 1.0);
        Tensor<double> rc(std::move(r));
        return sum_all(mul(out, rc));
    };
}

}  // namespace detail

struct GradCheckEntry {
    std::string name;
    std::function<double()> run;
};

// One entry per registered differentiable op kind.
inline const std::vector<GradCheckEntry>& gradcheck_registry() {
    using detail::gaussian;
    using detail::lattice;
    using detail::probe;
    using Ts = std::vector<Tensor<double>>;

    static const std::vector<GradCheckEntry> entries = {
        {"add", [] {
             return finite_diff_check({gaussian({3, 4}, 1), gaussian({3, 4}, 2)},
                                      probe([](Tape<double>&, const Ts& t) { return add(t[0], t[1]); }, 1));
         }},
        {"sub", [] {
             return finite_diff_check({gaussian({3, 4}, 3), gaussian({3, 4}, 4)},
                                      probe([](Tape<double>&, const Ts& t) { return sub(t[0], t[1]); }, 2));
         }},
        {"mul", [] {
             return finite_diff_check({gaussian({3, 4}, 5), gaussian({3, 4}, 6)},
                                      probe([](Tape<double>&, const Ts& t) { return mul(t[0], t[1]); }, 3));
         }},
        {"scale", [] {
             return finite_diff_check({gaussian({5}, 7)},
                                      probe([](Tape<double>&, const Ts& t) { return scale(t[0], 1.7); }, 4));
         }},
        {"silu", [] {
             return finite_diff_check({gaussian({4, 3}, 8)},
                                      probe([](Tape<double>&, const Ts& t) { return silu(t[0]); }, 5));
         }},
        {"sigmoid", [] {
             return finite_diff_check({gaussian({4, 3}, 9)},
                                      probe([](Tape<double>&, const Ts& t) { return sigmoid(t[0]); }, 6));
         }},
        {"reshape", [] {
             return finite_diff_check({gaussian({2, 6}, 10)},
                                      probe([](Tape<double>&, const Ts& t) { return reshape(t[0], {3, 4}); }, 7));
         }},
        {"permute", [] {
             return finite_diff_check({gaussian({2, 3, 4}, 11)},
                                      probe([](Tape<double>&, const Ts& t) { return permute(t[0], {2, 0, 1}); }, 8));
         }},
        {"concat", [] {
             return finite_diff_check({gaussian({2, 3}, 12), gaussian({2, 2}, 13)},
                                      probe([](Tape<double>&, const Ts& t) {
                                          return concat(1, std::vector<Tensor<double>>{t[0], t[1]});
                                      }, 9));
         }},
        {"take_rows", [] {
             return finite_diff_check({gaussian({5, 3}, 14)},
                                      probe([](Tape<double>&, const Ts& t) {
                                          return take_rows(t[0], {4, 0, 2, 0});
                                      }, 10));
         }},
        {"embedding_lookup", [] {
             return finite_diff_check({gaussian({6, 4}, 15)},
                                      probe([](Tape<double>&, const Ts& t) {
                                          return embedding_lookup(t[0], {1, 5, 1});
                                      }, 11));
         }},
        {"sum_all", [] {
             return finite_diff_check({gaussian({3, 3}, 16)},
                                      probe([](Tape<double>&, const Ts& t) { return sum_all(t[0]); }, 12));
         }},
        {"linear", [] {
             return finite_diff_check(
                 {gaussian({4, 3}, 17), gaussian({5, 3}, 18), gaussian({5}, 19)},
                 probe([](Tape<double>&, const Ts& t) { return linear(t[0], t[1], &t[2]); }, 13));
         }},
        {"matmul", [] {
             return finite_diff_check({gaussian({3, 4}, 20), gaussian({4, 2}, 21)},
                                      probe([](Tape<double>&, const Ts& t) { return matmul(t[0], t[1]); }, 14));
         }},
        {"bmm", [] {
             return finite_diff_check({gaussian({2, 3, 4}, 22), gaussian({2, 4, 2}, 23)},
                                      probe([](Tape<double>&, const Ts& t) { return bmm(t[0], t[1]); }, 15));
         }},
        {"softmax", [] {
             return finite_diff_check({gaussian({3, 5}, 24)},
                                      probe([](Tape<double>&, const Ts& t) { return softmax(t[0], 1); }, 16));
         }},
        {"rms_norm", [] {
             return finite_diff_check({gaussian({3, 6}, 25), gaussian({6}, 26, 0.2)},
                                      probe([](Tape<double>&, const Ts& t) {
                                          return rms_norm(t[0], t[1]);
                                      }, 17));
         }},
        {"group_norm", [] {
             return finite_diff_check({gaussian({2, 8, 3}, 27)},
                                      probe([](Tape<double>&, const Ts& t) { return group_norm(t[0], 4); }, 18));
         }},
        {"add_mask", [] {
             return finite_diff_check({gaussian({2, 3, 4}, 28), gaussian({3, 4}, 29)},
                                      probe([](Tape<double>&, const Ts& t) { return add_mask(t[0], t[1]); }, 19));
         }},
        {"conv3d", [] {
             return finite_diff_check(
                 {gaussian({1, 2, 4, 4, 3}, 30), gaussian({2, 2, 3, 3, 3}, 31), gaussian({2}, 32)},
                 probe([](Tape<double>&, const Ts& t) { return conv3d(t[0], t[1], t[2]); }, 20));
         }},
        {"conv2d_slicewise", [] {
             return finite_diff_check(
                 {gaussian({1, 2, 4, 4, 3}, 33), gaussian({2, 2, 3, 3, 3}, 34), gaussian({2}, 35)},
                 probe([](Tape<double>&, const Ts& t) { return conv2d_slicewise(t[0], t[1], t[2]); }, 21));
         }},
        {"channel_linear", [] {
             return finite_diff_check(
                 {gaussian({2, 3, 2, 2, 2}, 36), gaussian({4, 3}, 37), gaussian({4}, 38)},
                 probe([](Tape<double>&, const Ts& t) { return channel_linear(t[0], t[1], &t[2]); }, 22));
         }},
        {"broadcast_channels", [] {
             return finite_diff_check({gaussian({2, 3}, 39)},
                                      probe([](Tape<double>&, const Ts& t) {
                                          return broadcast_channels(t[0], {2, 2, 3});
                                      }, 23));
         }},
        {"max_pool3d", [] {
             return finite_diff_check({lattice({1, 2, 4, 4, 5}, 40)},
                                      probe([](Tape<double>&, const Ts& t) {
                                          return max_pool3d(t[0], {2, 2, 2});
                                      }, 24));
         }},
        {"trilinear_resize", [] {
             return finite_diff_check({gaussian({1, 2, 3, 4, 3}, 41)},
                                      probe([](Tape<double>&, const Ts& t) {
                                          return trilinear_resize(t[0], {5, 6, 2}, {3.0 / 5, 4.0 / 6, 1.5});
                                      }, 25));
         }},
        {"global_max3d", [] {
             return finite_diff_check({lattice({2, 3, 3, 3, 2}, 42)},
                                      probe([](Tape<double>&, const Ts& t) {
                                          return global_max3d(t[0]);
                                      }, 26));
         }},
        {"cross_entropy", [] {
             return finite_diff_check({gaussian({4, 6}, 43)},
                                      [](Tape<double>&, const std::vector<Tensor<double>>& t) {
                                          return cross_entropy(t[0], {1, 4, 0, 2}, {1, 1, 0, 1});
                                      });
         }},
        {"softmax_cross_entropy_chain", [] {
             // softmax composed with the CE head, as the agent loss uses it
             return finite_diff_check({gaussian({3, 5}, 44), gaussian({5, 5}, 45)},
                                      [](Tape<double>&, const std::vector<Tensor<double>>& t) {
                                          auto h = linear(t[0], t[1]);
                                          return cross_entropy(h, {2, 0, 3}, {1, 1, 1});
                                      });
         }},
        {"soft_dice_loss", [] {
             NdArray<double> target({2, 3, 3});
             for (std::size_t i = 0; i < target.v.size(); ++i) target.v[i] = (i % 3 == 0) ? 1.0 : 0.0;
             return finite_diff_check({gaussian({2, 3, 3}, 46, 0.1)},
                                      [target](Tape<double>&, const std::vector<Tensor<double>>& t) {
                                          auto p = sigmoid(t[0]);
                                          return soft_dice_loss(p, target);
                                      });
         }},
    };
    return entries;
}

// Runs one registered kind; unknown names are an error.
inline double run_gradcheck(const std::string& op) {
    for (const auto& e : gradcheck_registry())
        if (e.name == op) return e.run();
    throw std::invalid_argument("unknown op kind: " + op);
}

inline std::vector<GradCheckReport> run_all_gradchecks() {
    std::vector<GradCheckReport> out;
    for (const auto& e : gradcheck_registry()) out.push_back({e.name, e.run()});
    return out;
}

}  // namespace voxa
