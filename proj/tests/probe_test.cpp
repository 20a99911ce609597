#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "ora/checkpoint.hpp"
#include "ora/probe.hpp"
#include "test_support.hpp"

using namespace ora;
using ora::testing::make_grids;
using ora::testing::make_vocab;

namespace {

Eigen::MatrixXd column(const std::vector<double>& xs) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(xs.size()), 1);
    for (size_t i = 0; i < xs.size(); ++i) X(static_cast<Eigen::Index>(i), 0) = xs[i];
    return X;
}

BackboneConfig tiny() {
    BackboneConfig c;
    c.D = 8;
    c.layers = 1;
    c.heads = 2;
    c.context_length = 64;
    c.D2 = 4;
    c.T = 3;
    c.V = 2;
    return c;
}

}  // namespace

TEST(Logistic, SeparableTwoPoints) {
    auto p = fit_logistic(column({-1.0, 1.0}), {0, 1});
    auto s = predict_scores(p, column({-1.0, 1.0}));
    EXPECT_LT(s[0], 0.5);
    EXPECT_GT(s[1], 0.5);
    EXPECT_LE(p.gradient_norm, 1e-6);
}

TEST(Logistic, MatchesGradientStationarity) {
    ad::Rng rng(3);
    const size_t n = 300;
    Eigen::MatrixXd X(n, 3);
    std::vector<double> y(n);
    for (size_t i = 0; i < n; ++i) {
        for (Eigen::Index d = 0; d < 3; ++d) X(static_cast<Eigen::Index>(i), d) = rng.normal() * (d + 1) + d;
        const double eta = 0.8 * X(static_cast<Eigen::Index>(i), 0) - 0.3 * X(static_cast<Eigen::Index>(i), 2);
        y[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-eta)) ? 1 : 0;
    }
    ProbeOptions opt;
    opt.l2 = 0.01;
    auto p = fit_logistic(X, y, opt);
    // Independent check of the optimality condition in standardized space.
    auto Z = p.transform(X);
    auto s = predict_scores(p, X);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(4);
    for (size_t i = 0; i < n; ++i) {
        const double r = s[i] - y[i];
        for (Eigen::Index d = 0; d < 3; ++d) g(d) += r * Z(static_cast<Eigen::Index>(i), d) / n;
        g(3) += r / n;
    }
    g.head(3) += opt.l2 * p.weights.col(0);
    EXPECT_LT(g.norm(), 1e-6);
    EXPECT_GT(p.weights(0, 0), 0);
    EXPECT_LT(p.weights(2, 0), 0);
}

TEST(Logistic, SingleClassIsError) {
    EXPECT_THROW(fit_logistic(column({1, 2, 3}), {1, 1, 1}), DomainError);
    EXPECT_THROW(fit_logistic(Eigen::MatrixXd(0, 1), {}), DomainError);
}

TEST(Linear, ExactRecovery) {
    std::vector<double> xs = {-2, -1, 0, 0.5, 3}, ys;
    for (double x : xs) ys.push_back(2 * x + 1);
    auto p = fit_linear(column(xs), ys, 0.0);
    EXPECT_NEAR(p.weights(0, 0), 2.0, 1e-8);
    EXPECT_NEAR(p.bias(0), 1.0, 1e-8);
    auto pred = predict_scores(p, column({10}));
    EXPECT_NEAR(pred[0], 21.0, 1e-7);
}

TEST(Linear, LargeRidgeShrinksToZero) {
    std::vector<double> xs = {-2, -1, 0, 0.5, 3}, ys;
    for (double x : xs) ys.push_back(2 * x + 1);
    double prev = 2.0;
    for (double l2 : {1.0, 100.0, 1e6}) {
        const double w = fit_linear(column(xs), ys, l2).weights(0, 0);
        EXPECT_LT(std::abs(w), prev);
        prev = std::abs(w);
    }
    EXPECT_LT(prev, 1e-5);
}

TEST(Linear, SingularWithoutRidgeIsError) {
    Eigen::MatrixXd X(4, 2);
    X << 1, 2, 2, 4, 3, 6, 4, 8;  // collinear
    try {
        fit_linear(X, {1, 2, 3, 4}, 0.0);
        FAIL() << "expected an error";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("l2 > 0"), std::string::npos);
    }
    EXPECT_NO_THROW(fit_linear(X, {1, 2, 3, 4}, 1e-3));
}

TEST(Survival, ConstantFeaturesGiveEmpiricalFrequencies) {
    ad::Rng rng(4);
    const size_t n = 400;
    std::vector<double> d(n);
    std::vector<int> e(n, 1);
    for (auto& x : d) x = std::floor(rng.exponential(0.3) * 4) / 4;
    Eigen::MatrixXd X = Eigen::MatrixXd::Constant(n, 2, 3.0);
    auto p = fit_discrete_survival(X, d, e, 4);
    // Empirical bin frequencies, binned independently of the library.
    const size_t B = p.edges.size() + 1;
    std::vector<double> freq(B, 0.0);
    for (double x : d) {
        size_t k = 0;
        while (k < p.edges.size() && p.edges[k] <= x) ++k;
        freq[k] += 1.0 / n;
    }
    auto masses = predict_masses(p, X.topRows(1));
    for (size_t k = 0; k < B; ++k) EXPECT_NEAR(masses[0][k], freq[k], 1e-3) << "bin " << k;
}

TEST(Survival, SingleObservedDurationPutsMassInItsBin) {
    // Quantile edges of a single observed duration collapse to one bin.
    auto p = fit_discrete_survival(column({0, 1, 2}), {2.0, 5.0, 5.0}, {1, 0, 0}, 2);
    EXPECT_TRUE(p.edges.empty());
    auto m = predict_masses(p, column({0, 1, 2}));
    for (const auto& row : m) EXPECT_EQ(row, (std::vector<double>{1.0}));
}

TEST(Survival, CurvesNonIncreasingAndBounded) {
    ad::Rng rng(5);
    LinearProbe p;
    p.kind = TaskKind::Survival;
    p.edges = {1, 2, 3, 4};
    p.mean = Eigen::VectorXd::Zero(3);
    p.scale = Eigen::VectorXd::Ones(3);
    p.weights.resize(3, 5);
    p.bias.resize(5);
    for (int trial = 0; trial < 100; ++trial) {
        for (Eigen::Index i = 0; i < p.weights.size(); ++i) p.weights.data()[i] = 4 * rng.normal();
        for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias(i) = 4 * rng.normal();
        Eigen::MatrixXd X(1, 3);
        X << rng.normal(), rng.normal(), rng.normal();
        auto s = predict_curves(p, X)[0];
        EXPECT_LE(s[0], 1.0);
        for (size_t k = 0; k < s.size(); ++k) {
            EXPECT_GE(s[k], 0.0);
            if (k) {
                EXPECT_LE(s[k], s[k - 1]);
            }
        }
    }
}

TEST(Survival, Errors) {
    EXPECT_THROW(fit_discrete_survival(column({1, 2}), {1, 2}, {0, 0}, 3), DomainError);
    EXPECT_THROW(fit_discrete_survival(column({1, 2}), {1, 2}, {1, 1}, 1), DomainError);
    EXPECT_THROW(fit_discrete_survival(column({1, 2}), {1}, {1}, 3), DomainError);
}

TEST(Survival, InformativeFeatureSeparatesCurves) {
    ad::Rng rng(6);
    const size_t n = 400;
    std::vector<double> x(n), d(n);
    std::vector<int> e(n);
    for (size_t i = 0; i < n; ++i) {
        x[i] = i % 2;
        d[i] = rng.exponential(x[i] ? 1.0 : 0.1);
        e[i] = rng.uniform() < 0.8;
    }
    auto p = fit_discrete_survival(column(x), d, e, 4);
    auto c = predict_curves(p, column({0, 1}));
    EXPECT_GT(c[0][0], c[1][0]);  // low hazard survives longer
}

TEST(Files, DatasetRoundTripAndErrors) {
    ProbeDataset d{"mortality", TaskKind::Survival, {{"a", 1.5, 0, 3.25, 1}, {"b", 2, 0, 7, 0}}};
    const auto text = serialize_dataset(d);
    EXPECT_EQ(text, "# task=mortality\tkind=survival\na\t1.5\t3.25\t1\nb\t2\t7\t0\n");
    EXPECT_EQ(parse_dataset(text), d);
    ProbeDataset b{"flag", TaskKind::Binary, {{"a", 1, 1, 0, 0}}};
    EXPECT_EQ(parse_dataset(serialize_dataset(b)), b);
    EXPECT_THROW(parse_dataset("a\t1\t1\n"), ParseError);
    EXPECT_THROW(parse_dataset("# task=x\tkind=binary\na\t1\t2\n"), ParseError);
    EXPECT_THROW(parse_dataset("# task=x\tkind=binary\na\t1\t1\na\t2\t0\n"), ValidationError);
    EXPECT_THROW(parse_dataset("# task=x\tkind=survival\na\t1\t-1\t1\n"), ValidationError);
    EXPECT_THROW(parse_dataset("# task=x\tkind=ordinal\n"), ParseError);
}

TEST(Files, ProbeAndPredictionRoundTrip) {
    auto p = fit_linear(column({0, 1, 2}), {1, 3, 5}, 1e-4);
    auto q = parse_probe(serialize_probe(p));
    EXPECT_EQ(serialize_probe(q), serialize_probe(p));
    EXPECT_EQ(predict_scores(q, column({4}))[0], predict_scores(p, column({4}))[0]);
    EXPECT_THROW(parse_probe("kind\treal\nfoo\t1\n"), ParseError);

    Predictions pr{"t", TaskKind::Survival, {1, 2}, {"a", "b"}, {}, {{0.9, 0.5, 0.1}, {1, 1, 0.5}}};
    EXPECT_EQ(parse_predictions(serialize_predictions(pr)), pr);
    Predictions sc{"t", TaskKind::Binary, {}, {"a"}, {0.25}, {}};
    EXPECT_EQ(serialize_predictions(sc), "# task=t\tkind=binary\na\t0.25\n");
    EXPECT_EQ(parse_predictions(serialize_predictions(sc)), sc);
}

TEST(Files, FeatureRoundTrip) {
    FeatureMatrix f;
    f.patient_ids = {"a", "b"};
    f.prediction_times = {1, 2.5};
    f.values.resize(2, 2);
    f.values << 0.1, -2, 3, 4.75;
    auto g = parse_features(serialize_features(f));
    EXPECT_EQ(g.patient_ids, f.patient_ids);
    EXPECT_EQ(g.values, f.values);
    ProbeDataset d{"t", TaskKind::Binary, {{"b", 0, 1, 0, 0}, {"a", 0, 0, 0, 0}}};
    auto X = align_features(g, d);
    EXPECT_EQ(X(0, 1), 4.75);
    d.examples.push_back({"z", 0, 0, 0, 0});
    EXPECT_THROW(align_features(g, d), ValidationError);
}

TEST(Embeddings, TieConventionAndNoLeakage) {
    auto vocab = make_vocab(4, 2);
    auto grids = make_grids(vocab, 3, 2);
    Model<double> model(tiny(), ObjectiveKind::ORA, vocab, 2);
    PatientRecord r{"p", {{0, "c0", 0.5}, {1, "c1", {}}, {3, "c2", {}}, {3, "c3", {}}, {6, "c0", 2.0}}};
    auto ex = [&](std::vector<PatientRecord> recs, double t) {
        return extract_embeddings(model, recs, vocab, grids, ProbeDataset{"x", TaskKind::Binary, {{"p", t, 0, 0, 0}}})
            .values;
    };
    // Embedding at t=3 includes both events at 3 and equals the one at t=5.
    EXPECT_EQ(ex({r}, 3.0), ex({r}, 5.0));
    EXPECT_NE(ex({r}, 2.9), ex({r}, 3.0));
    EXPECT_EQ(ex({r}, 100.0), ex({r}, 6.0));
    EXPECT_THROW(ex({r}, -0.5), DomainError);
    // Changing everything after t=3 leaves the embedding untouched.
    auto changed = r;
    changed.events[4] = {3.5, "c1", {}};
    changed.events.push_back({9, "c2", {}});
    EXPECT_EQ(ex({r}, 3.0), ex({changed}, 3.0));
    EXPECT_THROW(ex({PatientRecord{"q", r.events}}, 3.0), ValidationError);
}

TEST(Embeddings, ProbingLeavesBackboneUntouched) {
    auto vocab = make_vocab(4, 2);
    auto grids = make_grids(vocab, 3, 2);
    Model<double> model(tiny(), ObjectiveKind::ORA, vocab, 7);
    const auto before = serialize_checkpoint(model.named_params());
    ad::Rng rng(1);
    std::vector<PatientRecord> recs;
    ProbeDataset d{"x", TaskKind::Binary, {}};
    for (size_t i = 0; i < 40; ++i) {
        auto r = ora::testing::random_record(rng, 5 + rng.below(10), 4, 0.5, false);
        r.patient_id = "p" + std::to_string(i);
        d.examples.push_back({r.patient_id, r.events.back().time, static_cast<double>(i % 2), 0, 0});
        recs.push_back(std::move(r));
    }
    auto f = extract_embeddings(model, recs, vocab, grids, d);
    std::vector<double> y;
    for (const auto& e : d.examples) y.push_back(e.label);
    auto p1 = fit_logistic(f.values, y);
    EXPECT_EQ(serialize_checkpoint(model.named_params()), before);
    auto f2 = extract_embeddings(model, recs, vocab, grids, d);
    EXPECT_EQ(f.values, f2.values);
    EXPECT_EQ(serialize_probe(fit_logistic(f2.values, y)), serialize_probe(p1));
}

TEST(Split, DeterministicAndRoughlyBalanced) {
    size_t train = 0;
    for (size_t i = 0; i < 2000; ++i) {
        const auto id = "p" + std::to_string(i);
        EXPECT_EQ(in_train_split(id, 3, 0.5), in_train_split(id, 3, 0.5));
        train += in_train_split(id, 3, 0.5);
    }
    EXPECT_NEAR(static_cast<double>(train) / 2000, 0.5, 0.05);
    EXPECT_FALSE(in_train_split("p1", 3, 0.0));
    EXPECT_TRUE(in_train_split("p1", 3, 1.0));
}
