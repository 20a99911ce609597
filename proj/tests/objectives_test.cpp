#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ora/gradcheck.hpp"
#include "ora/objectives.hpp"
#include "test_support.hpp"

using namespace ora;
using ora::testing::make_grids;
using ora::testing::make_vocab;

namespace {

using V = ad::Var<double>;

struct Logits {
    ad::Tensor<double> numeric, nonnumeric;
};

/// Builds raw stage-2 logits laid out for `layout` with P positions.
Logits random_logits(const HeadLayout& layout, size_t P, ad::Rng& rng, double spread = 1.5) {
    Logits l;
    l.numeric = ad::Tensor<double>({P * layout.T, std::max<size_t>(layout.n_numeric * layout.V, 1)});
    l.nonnumeric = ad::Tensor<double>({P * layout.T, std::max<size_t>(layout.n_nonnumeric, 1)});
    for (auto& x : l.numeric.data) x = spread * rng.normal();
    for (auto& x : l.nonnumeric.data) x = spread * rng.normal();
    return l;
}

HeadLogits<double> on_tape(ad::Tape<double>& tape, const HeadLayout& layout, const Logits& l, size_t P,
                           bool grad = false) {
    HeadLogits<double> h;
    h.positions = P;
    if (layout.n_numeric) h.numeric = tape.leaf(l.numeric, grad);
    if (layout.n_nonnumeric) h.nonnumeric = tape.leaf(l.nonnumeric, grad);
    return h;
}

/// Cell logits of code c at position p, read straight from the layout.
std::vector<double> cell_logits(const HeadLayout& layout, const Logits& l, size_t p, size_t c) {
    const bool num = layout.numeric[c];
    const size_t vb = num ? layout.V : 1;
    const auto& src = num ? l.numeric : l.nonnumeric;
    const size_t width = src.shape[1];
    std::vector<double> z;
    for (size_t k = 0; k < layout.T; ++k)
        for (size_t v = 0; v < vb; ++v) z.push_back(src[(p * layout.T + k) * width + layout.slot[c] * vb + v]);
    return z;
}

/// Independent term-by-term reference: naive softmax, explicit "one minus the
/// mass strictly before k_c" for censored terms.
double reference_loss(const HeadLayout& layout, const Logits& l, const CellTargets& t) {
    double total = 0;
    for (size_t p = 0; p < t.positions; ++p)
        for (size_t c = 0; c < t.codes; ++c) {
            auto z = cell_logits(layout, l, p, c);
            double s = 0;
            for (double x : z) s += std::exp(x);
            const auto& ct = t.at(p, c);
            const size_t vb = layout.value_bins(c);
            if (ct.observed) {
                total += -std::log(std::exp(z[ct.index]) / s);
            } else {
                double before = 0;
                for (size_t i = 0; i < static_cast<size_t>(ct.index) * vb; ++i) before += std::exp(z[i]) / s;
                total += -std::log(std::max(1.0 - before, kCensorClamp));
            }
        }
    return total / static_cast<double>(t.positions * t.codes);
}

CellTargets random_targets(const HeadLayout& layout, size_t P, ad::Rng& rng) {
    CellTargets t{P, layout.codes(), {}};
    for (size_t i = 0; i < P * layout.codes(); ++i) {
        const size_t c = i % layout.codes();
        CellTarget ct;
        ct.observed = rng.uniform() < 0.5;
        ct.index = static_cast<std::uint32_t>(rng.below(ct.observed ? layout.cells(c) : layout.T));
        t.cells.push_back(ct);
    }
    return t;
}

CellTargets single(std::uint32_t index, bool observed) { return {1, 1, {{index, observed}}}; }

double uniform_term(size_t T, size_t Vb, const CellTarget& ct) {
    auto vocab = make_vocab(1, Vb > 1 ? 1 : 0);
    auto layout = HeadLayout::from(vocab, T, Vb, Vb > 1);
    ad::Tape<double> tape;
    Logits l{ad::Tensor<double>({T, std::max<size_t>(layout.n_numeric * Vb, 1)}),
             ad::Tensor<double>({T, std::max<size_t>(layout.n_nonnumeric, 1)})};
    return ora_loss(on_tape(tape, layout, l, 1), layout, CellTargets{1, 1, {ct}}).loss.item();
}

}  // namespace

TEST(NtpLoss, UniformLogits) {
    ad::Tape<double> tape;
    auto logits = tape.constant(ad::Tensor<double>({2, 4}));
    auto out = ntp_loss(logits, {0, 3});
    EXPECT_NEAR(out.loss.item(), std::log(4.0), 1e-15);
    EXPECT_EQ(out.diagnostics.terms, 2u);
}

TEST(NtpLoss, LargeMarginApproachesZero) {
    double prev = 1e9;
    for (double margin : {1.0, 5.0, 20.0, 40.0}) {
        ad::Tape<double> tape;
        auto logits = tape.constant(ad::Tensor<double>({1, 3}, std::vector<double>{margin, 0, 0}));
        const double loss = ntp_loss(logits, {0}).loss.item();
        EXPECT_LT(loss, prev);
        prev = loss;
    }
    EXPECT_LT(prev, 1e-16);
}

TEST(NtpLoss, HandBatch) {
    const std::vector<double> z = {0.5, -1.0, 2.0, 0.0, 0.0, 1.0, 3.0, -2.0, 0.25};
    const std::vector<size_t> labels = {2, 0, 1};
    double expect = 0;
    for (size_t p = 0; p < 3; ++p) {
        const double lse = std::log(std::exp(z[3 * p]) + std::exp(z[3 * p + 1]) + std::exp(z[3 * p + 2]));
        expect += lse - z[3 * p + labels[p]];
    }
    expect /= 3;
    ad::Tape<double> tape;
    auto out = ntp_loss(tape.constant(ad::Tensor<double>({3, 3}, z)), {2, 0, 1});
    EXPECT_NEAR(out.loss.item(), expect, 1e-12);
}

TEST(NtpLoss, Errors) {
    ad::Tape<double> tape;
    auto logits = tape.constant(ad::Tensor<double>({2, 3}));
    EXPECT_THROW(ntp_loss(logits, {0, 3}), DomainError);
    EXPECT_THROW(ntp_loss(logits, {std::nullopt, std::nullopt}), DomainError);
    EXPECT_THROW(ntp_loss(logits, {0}), ShapeError);
}

TEST(NextCodeLabels, SkipsLastAndUnknown) {
    auto vocab = make_vocab(2);
    PatientRecord r{"p", {{0, "c0", {}}, {1, "c7", {}}, {2, "c1", {}}, {3, "c0", {}}}};
    auto labels = next_code_labels(r, vocab, 0, 4);
    EXPECT_FALSE(labels[0]);
    EXPECT_EQ(labels[1], 1u);
    EXPECT_EQ(labels[2], 0u);
    EXPECT_FALSE(labels[3]);
}

TEST(TppLoss, UniformExamples) {
    EXPECT_NEAR(uniform_term(4, 1, {2, true}), std::log(4.0), 1e-15);
    EXPECT_NEAR(uniform_term(4, 1, {0, false}), 0.0, 1e-15);
    EXPECT_NEAR(uniform_term(4, 1, {2, false}), std::log(2.0), 1e-15);
}

TEST(OraLoss, UniformExamples) {
    EXPECT_NEAR(uniform_term(4, 4, {5, true}), std::log(16.0), 1e-15);
    EXPECT_NEAR(uniform_term(4, 4, {3, false}), std::log(4.0), 1e-15);
}

TEST(OraLoss, MatchesBruteForceOnMicroInstances) {
    ad::Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        auto vocab = make_vocab(2, rng.below(3));  // 0, 1 or 2 numeric codes
        auto layout = HeadLayout::from(vocab, 2, 2, true);
        const size_t P = 1 + rng.below(3);
        auto l = random_logits(layout, P, rng);
        auto t = random_targets(layout, P, rng);
        ad::Tape<double> tape;
        auto out = ora_loss(on_tape(tape, layout, l, P), layout, t);
        ASSERT_NEAR(out.loss.item(), reference_loss(layout, l, t), 1e-12);
        EXPECT_EQ(out.diagnostics.terms, P * 2);
        EXPECT_EQ(out.diagnostics.observed + out.diagnostics.censored, out.diagnostics.terms);
    }
}

TEST(OraLoss, MatchesBruteForceOnLargerLayouts) {
    ad::Rng rng(32);
    for (int trial = 0; trial < 50; ++trial) {
        auto vocab = make_vocab(2 + rng.below(6), rng.below(4));
        const size_t T = 2 + rng.below(5), Vb = 1 + rng.below(5);
        auto layout = HeadLayout::from(vocab, T, Vb, true);
        const size_t P = 1 + rng.below(4);
        auto l = random_logits(layout, P, rng, 3.0);
        auto t = random_targets(layout, P, rng);
        ad::Tape<double> tape;
        // The reference forms 1 - (mass before k_c), which loses digits when the residual is small.
        const double ref = reference_loss(layout, l, t);
        ASSERT_NEAR(ora_loss(on_tape(tape, layout, l, P), layout, t).loss.item(), ref, 1e-11 * std::max(1.0, ref));
    }
}

TEST(OraLoss, SingleValueBinReducesToTimeOnly) {
    ad::Rng rng(33);
    for (int trial = 0; trial < 50; ++trial) {
        auto vocab = make_vocab(5, 3);
        const size_t T = 2 + rng.below(5), P = 1 + rng.below(4);
        auto ora_layout = HeadLayout::from(vocab, T, 1, true);
        auto tpp_layout = HeadLayout::from(vocab, T, 1, false);
        auto lo = random_logits(ora_layout, P, rng);
        // Same per-code cell logits rearranged into the time-only layout.
        Logits lt = random_logits(tpp_layout, P, rng);
        for (size_t p = 0; p < P; ++p)
            for (size_t c = 0; c < 5; ++c) {
                auto z = cell_logits(ora_layout, lo, p, c);
                for (size_t k = 0; k < T; ++k) lt.nonnumeric[(p * T + k) * 5 + tpp_layout.slot[c]] = z[k];
            }
        auto t = random_targets(ora_layout, P, rng);
        ad::Tape<double> a, b;
        const double ora = ora_loss(on_tape(a, ora_layout, lo, P), ora_layout, t).loss.item();
        const double tpp = tpp_loss(on_tape(b, tpp_layout, lt, P), tpp_layout, t).loss.item();
        EXPECT_NEAR(ora, tpp, 1e-12);
    }
    auto vocab = make_vocab(2, 1);
    auto layout = HeadLayout::from(vocab, 3, 2, true);
    ad::Tape<double> tape;
    ad::Rng r(1);
    EXPECT_THROW(tpp_loss(on_tape(tape, layout, random_logits(layout, 1, r), 1), layout, random_targets(layout, 1, r)),
                 DomainError);
}

TEST(OraLoss, NextCodeMaskingEquivalence) {
    ad::Rng rng(34);
    for (int trial = 0; trial < 100; ++trial) {
        const size_t K = 2 + rng.below(6), T = 1 + rng.below(6), Vb = 1 + rng.below(6);
        std::vector<double> z(K);
        for (auto& x : z) x = 2.0 * rng.normal();
        const size_t next = rng.below(K);
        ad::Tape<double> tape;
        const double ntp = ntp_loss(tape.constant(ad::Tensor<double>({1, K}, z)), {next}).loss.item();
        double s = 0;
        for (double x : z) s += std::exp(x);
        const double p_next = std::exp(z[next]) / s;
        std::vector<double> cells(T * Vb, p_next / static_cast<double>(T * Vb));
        const CellTarget ct{static_cast<std::uint32_t>(rng.below(T * Vb)), true};
        EXPECT_NEAR(cell_nll(cells.data(), cells.size(), Vb, ct), ntp + std::log(static_cast<double>(T * Vb)), 1e-12);
    }
}

TEST(OraLoss, CensoredTermsAreMonotoneInCensoringBin) {
    ad::Rng rng(35);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t T = 2 + rng.below(8), Vb = 1 + rng.below(4);
        std::vector<double> p(T * Vb);
        double s = 0;
        for (auto& x : p) s += (x = std::exp(3.0 * rng.normal()));
        for (auto& x : p) x /= s;
        double prev = -1;
        for (std::uint32_t k = 0; k < T; ++k) {
            const double term = cell_nll(p.data(), p.size(), Vb, {k, false});
            EXPECT_GE(term, prev);
            prev = term;
        }
    }
}

TEST(OraLoss, ClampIsCounted) {
    auto vocab = make_vocab(1);
    auto layout = HeadLayout::from(vocab, 3, 1, true);
    ad::Tape<double> tape;
    Logits l{ad::Tensor<double>({3, 1}), ad::Tensor<double>({3, 1}, std::vector<double>{0.0, 0.0, -40.0})};
    auto h = on_tape(tape, layout, l, 1, true);
    auto out = ora_loss(h, layout, single(2, false));
    EXPECT_EQ(out.diagnostics.clamped, 1u);
    EXPECT_NEAR(out.loss.item(), -std::log(kCensorClamp), 1e-9);
    tape.backward(out.loss);
    for (double g : tape.grad(*h.nonnumeric)) EXPECT_EQ(g, 0.0);
}

TEST(OraLoss, ObservedNumericTargetWithoutValueIsError) {
    auto vocab = make_vocab(1, 1);
    auto grids = make_grids(vocab, 3, 2);
    auto layout = HeadLayout::from(vocab, 3, 2, true);
    TargetSet set;
    set.censor_duration = 5;
    set.observed = {{0, 1.5, std::nullopt, true}};
    EXPECT_THROW(make_cell_targets({set}, grids, layout), DomainError);
    set.observed[0].value = 0.5;  // value edges -1 and 0: bin 2 is clamped to V-1
    auto t = make_cell_targets({set}, grids, layout);
    EXPECT_TRUE(t.at(0, 0).observed);
    EXPECT_EQ(t.at(0, 0).index, 1u * 2 + 1);
}

TEST(OraLoss, CellTargetsFromTargetSets) {
    auto vocab = make_vocab(3, 1);
    auto grids = make_grids(vocab, 4, 3);  // time edges 1,2,3; value edges -1,0
    auto layout = HeadLayout::from(vocab, 4, 3, true);
    TargetSet set;
    set.censor_duration = 2.5;
    set.observed = {{0, 1.0, -0.5, true}, {2, 0.5, std::nullopt, true}};
    auto t = make_cell_targets({set}, grids, layout);
    EXPECT_EQ(t.at(0, 0).index, 1u * 3 + 1);
    EXPECT_EQ(t.at(0, 2).index, 0u);
    EXPECT_FALSE(t.at(0, 1).observed);
    EXPECT_EQ(t.at(0, 1).index, 2u);
    auto time_only = make_cell_targets({set}, grids, HeadLayout::from(vocab, 4, 1, false));
    EXPECT_EQ(time_only.at(0, 0).index, 1u);
}

TEST(OraLoss, ProperScoringRecoversCellFrequencies) {
    // One numeric code, T=3, V=2; targets drawn with fixed counts.
    auto vocab = make_vocab(1, 1);
    auto layout = HeadLayout::from(vocab, 3, 2, true);
    const std::vector<size_t> counts = {30, 10, 20, 25, 5, 10};
    CellTargets t{0, 1, {}};
    for (size_t cell = 0; cell < counts.size(); ++cell)
        for (size_t i = 0; i < counts[cell]; ++i) t.cells.push_back({static_cast<std::uint32_t>(cell), true});
    t.positions = t.cells.size();
    std::vector<size_t> rows;
    for (size_t p = 0; p < t.positions; ++p)
        for (size_t k = 0; k < 3; ++k) rows.push_back(k);
    std::vector<ad::Tensor<double>> params = {ad::Tensor<double>({3, 2})};
    ad::AdamState<double> state;
    ad::AdamConfig cfg;
    cfg.lr = 0.05;
    for (int step = 0; step < 3000; ++step) {
        ad::Tape<double> tape;
        auto table = tape.leaf(params[0]);
        HeadLogits<double> h;
        h.positions = t.positions;
        h.numeric = ad::gather_rows(table, rows);
        auto out = ora_loss(h, layout, t);
        tape.backward(out.loss);
        ad::adam_step(params, {tape.grad(table)}, state, cfg);
    }
    double s = 0;
    for (double z : params[0].data) s += std::exp(z);
    double tv = 0;
    for (size_t cell = 0; cell < 6; ++cell) tv += std::abs(std::exp(params[0][cell]) / s - counts[cell] / 100.0);
    EXPECT_LT(0.5 * tv, 1e-3);
}

TEST(OraLoss, FiniteDifferenceGradients) {
    ad::Rng rng(36);
    for (int trial = 0; trial < 20; ++trial) {
        auto vocab = make_vocab(1 + rng.below(4), rng.below(3));
        const size_t T = 2 + rng.below(3), Vb = 1 + rng.below(3), P = 1 + rng.below(3);
        auto layout = HeadLayout::from(vocab, T, Vb, true);
        auto l = random_logits(layout, P, rng);
        auto t = random_targets(layout, P, rng);
        auto res = ad::gradient_check({l.numeric, l.nonnumeric}, [&](ad::Tape<double>&, const std::vector<V>& x) {
            HeadLogits<double> h;
            h.positions = P;
            if (layout.n_numeric) h.numeric = x[0];
            if (layout.n_nonnumeric) h.nonnumeric = x[1];
            return ora_loss(h, layout, t).loss;
        });
        EXPECT_TRUE(res.ok()) << res.worst_where;
    }
}

TEST(NtpLoss, FiniteDifferenceGradients) {
    ad::Rng rng(37);
    ad::Tensor<double> z({4, 5});
    for (auto& x : z.data) x = rng.normal();
    auto res = ad::gradient_check({z}, [](ad::Tape<double>&, const std::vector<V>& x) {
        return ntp_loss(x[0], {1, std::nullopt, 4, 0}).loss;
    });
    EXPECT_TRUE(res.ok()) << res.worst_where;
}

TEST(TrainingLog, FieldOrder) {
    LossDiagnostics d{10, 4, 6, 1};
    EXPECT_EQ(training_log_line(3, ObjectiveKind::ORA, 0.5, d),
              "step=3\tobjective=ora\tloss=0.5\tobserved=4\tcensored=6\tclamped=1");
}
