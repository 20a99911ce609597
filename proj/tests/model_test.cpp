#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ora/checkpoint.hpp"
#include "ora/model.hpp"
#include "test_support.hpp"

using namespace ora;
using ora::testing::make_grids;
using ora::testing::make_vocab;
using ora::testing::random_record;

namespace {

BackboneConfig tiny() {
    BackboneConfig c;
    c.D = 8;
    c.layers = 2;
    c.heads = 2;
    c.context_length = 32;
    c.D2 = 4;
    c.T = 3;
    c.V = 2;
    return c;
}

std::vector<double> encode_rows(const Model<double>& m, const InputSequence& in) {
    ad::Tape<double> tape;
    auto b = m.bind(tape, false);
    return m.encode(tape, b, in).value();
}

}  // namespace

TEST(GapBucket, Edges) {
    EXPECT_EQ(gap_bucket(std::nullopt), 0u);
    EXPECT_EQ(gap_bucket(0.0), 1u);
    EXPECT_EQ(gap_bucket(1.0 / 48.0), 1u);
    EXPECT_EQ(gap_bucket(1.0 / 24.0), 2u);
    EXPECT_EQ(gap_bucket(1.0), 6u);  // 1/24, 2/24, 4/24, 8/24, 16/24 <= 1
    EXPECT_EQ(gap_bucket(1e6), kGapBuckets - 1);
}

TEST(EmbedEvents, BucketsAndTruncation) {
    auto vocab = make_vocab(2, 1);
    auto grids = make_grids(vocab, 3, 4);  // value edges -1, 0, 1
    PatientRecord r{"p", {{0, "c0", 0.0}, {2, "c1", {}}, {3, "c9", {}}, {3.5, "c0", {}}}};
    auto seq = embed_events(r, vocab, grids, 4, 0, 4, 32);
    EXPECT_EQ(seq.codes, (std::vector<size_t>{0, 1, 2, 0}));
    EXPECT_EQ(seq.value_buckets, (std::vector<size_t>{2, 4, 4, 4}));  // value at an edge goes right
    EXPECT_EQ(seq.gap_buckets[0], 0u);
    EmbedCounters counters;
    auto cut = embed_events(r, vocab, grids, 4, 0, 4, 2, &counters);
    EXPECT_EQ(cut.positions, (std::vector<size_t>{2, 3}));
    EXPECT_EQ(counters.truncated, 1u);
}

TEST(Encoder, CausalityIsBitExact) {
    auto vocab = make_vocab(6, 3);
    auto grids = make_grids(vocab, 3, 2);
    Model<double> model(tiny(), ObjectiveKind::ORA, vocab, 5);
    ad::Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        auto r = random_record(rng, 4 + rng.below(20), 6, 0.5, false);
        const size_t j = rng.below(r.size() - 1);
        auto base = encode_rows(model, embed_events(r, vocab, grids, 2, 0, r.size(), 32));
        auto changed = r;
        for (size_t i = j + 1; i < r.size(); ++i) {
            changed.events[i].code = ora::testing::code_name(rng.below(6));
            changed.events[i].value = rng.normal();
            changed.events[i].time += 1.0;
        }
        auto after = encode_rows(model, embed_events(changed, vocab, grids, 2, 0, r.size(), 32));
        const size_t D = model.config().D;
        for (size_t i = 0; i < (j + 1) * D; ++i) ASSERT_EQ(base[i], after[i]) << "row " << i / D;
    }
}

TEST(Encoder, SingleEventIsFinite) {
    auto vocab = make_vocab(3);
    Model<double> model(tiny(), ObjectiveKind::ORA, vocab, 1);
    PatientRecord r{"p", {{0, "c1", {}}}};
    auto rows = encode_rows(model, embed_events(r, vocab, make_grids(vocab, 3, 2), 2, 0, 1, 32));
    ASSERT_EQ(rows.size(), 8u);
    for (double x : rows) EXPECT_TRUE(std::isfinite(x));
}

TEST(Encoder, EventOrderMatters) {
    auto vocab = make_vocab(3);
    auto grids = make_grids(vocab, 3, 2);
    Model<double> model(tiny(), ObjectiveKind::ORA, vocab, 2);
    PatientRecord a{"p", {{0, "c0", {}}, {1, "c1", {}}, {5, "c2", {}}}};
    PatientRecord b{"p", {{0, "c1", {}}, {1, "c0", {}}, {5, "c2", {}}}};
    auto ea = encode_rows(model, embed_events(a, vocab, grids, 2, 0, 3, 32));
    auto eb = encode_rows(model, embed_events(b, vocab, grids, 2, 0, 3, 32));
    double diff = 0;
    for (size_t d = 16; d < 24; ++d) diff += std::abs(ea[d] - eb[d]);
    EXPECT_GT(diff, 1e-6);
}

TEST(Head, ZeroStageTwoWeightsGiveUniformCells) {
    auto vocab = make_vocab(4, 2);
    Model<double> model(tiny(), ObjectiveKind::ORA, vocab, 3);
    for (const char* name : {"head.numeric.weight", "head.nonnumeric.weight"})
        for (auto& x : model.param(name).data) x = 0.0;
    ad::Rng rng(1);
    std::vector<double> e(8);
    for (auto& x : e) x = rng.normal();
    auto out = model.head_forward(e, {0, 1, 2, 3});
    for (size_t c = 0; c < 4; ++c) {
        const double expect = c < 2 ? 1.0 / 6.0 : 1.0 / 3.0;
        ASSERT_EQ(out.probs[c].size(), c < 2 ? 6u : 3u);
        for (double p : out.probs[c]) EXPECT_NEAR(p, expect, 1e-15);
    }
}

TEST(Head, DistributionsNormalize) {
    auto vocab = make_vocab(7, 3);
    ad::Rng rng(2);
    for (auto kind : {ObjectiveKind::ORA, ObjectiveKind::TPP}) {
        Model<double> model(tiny(), kind, vocab, 4);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> e(8);
            for (auto& x : e) x = 3.0 * rng.normal();
            auto out = model.head_forward(e, {0, 1, 2, 3, 4, 5, 6});
            for (const auto& [c, p] : out.probs) {
                EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-6);
                EXPECT_EQ(p.size(), kind == ObjectiveKind::ORA && c < 3 ? 6u : 3u);
            }
        }
    }
    Model<double> model(tiny(), ObjectiveKind::ORA, vocab, 4);
    EXPECT_THROW(model.head_forward(std::vector<double>(8), {7}), DomainError);
}

TEST(ParameterCount, DeskPreset) {
    BackboneConfig c;  // D=64, D2=32, T=4, V=4
    auto n = count_parameters(c, 10, 10);
    const double stage1 = 64 * 4 * 32, numeric = 10 * 32 * 4, other = 10 * 32;
    EXPECT_EQ(stage1 + numeric + other, 9792);
    EXPECT_EQ(n.factorized, 9792);
    EXPECT_EQ(n.direct, 64 * (4 * 4 * 10 + 4 * 10));
    EXPECT_EQ(n.direct, 12800);
    EXPECT_NEAR(n.reduction, 1.0 - 9792.0 / 12800.0, 1e-15);
    EXPECT_NEAR(n.reduction, 0.235, 1e-12);
}

TEST(ParameterCount, FactorizationCanBeLarger) {
    BackboneConfig c;
    c.D = 4;
    c.T = 2;
    c.V = 1;
    c.D2 = c.D * c.T;
    auto n = count_parameters(c, 0, 1);
    EXPECT_EQ(n.factorized, 4 * 2 * 8 + 8);
    EXPECT_EQ(n.direct, 4 * 2);
    EXPECT_LT(n.reduction, 0.0);
}

TEST(ParameterCount, MatchesModelTensors) {
    auto vocab = make_vocab(5, 2);
    auto cfg = tiny();
    Model<float> model(cfg, ObjectiveKind::ORA, vocab, 0);
    double weights = 0;
    for (const char* name : {"head.shared.weight", "head.numeric.weight", "head.nonnumeric.weight"})
        weights += static_cast<double>(model.param(name).size());
    EXPECT_EQ(weights, count_parameters(cfg, vocab).factorized);
}

TEST(Model, DeterministicInitAndCheckpointRoundTrip) {
    auto vocab = make_vocab(5, 2);
    Model<float> a(tiny(), ObjectiveKind::ORA, vocab, 9), b(tiny(), ObjectiveKind::ORA, vocab, 9);
    const auto blob = serialize_checkpoint(a.named_params());
    EXPECT_EQ(blob, serialize_checkpoint(b.named_params()));
    Model<float> c(tiny(), ObjectiveKind::ORA, vocab, 10);
    EXPECT_NE(blob, serialize_checkpoint(c.named_params()));
    c.load(parse_checkpoint<float>(blob));
    EXPECT_EQ(serialize_checkpoint(c.named_params()), blob);

    EXPECT_THROW(parse_checkpoint<float>(blob.substr(0, blob.size() - 1)), ParseError);
    EXPECT_THROW(parse_checkpoint<float>(blob + "x"), ParseError);
    auto bad = blob;
    bad[0] = 'X';
    EXPECT_THROW(parse_checkpoint<float>(bad), ParseError);
    Model<float> ntp(tiny(), ObjectiveKind::NTP, vocab, 9);
    EXPECT_THROW(ntp.load(parse_checkpoint<float>(blob)), ValidationError);
}

TEST(Model, ObjectiveNames) {
    for (auto k : {ObjectiveKind::NTP, ObjectiveKind::TPP, ObjectiveKind::ORA}) EXPECT_EQ(parse_objective(to_string(k)), k);
    EXPECT_THROW(parse_objective("mlm"), ConfigError);
}
