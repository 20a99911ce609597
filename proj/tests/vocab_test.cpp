#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ora/vocab.hpp"
#include "test_support.hpp"

using namespace ora;

namespace {

PatientRecord patient(const std::string& id, std::vector<Event> events) { return {id, std::move(events)}; }

CodeStats stat(const std::string& code, double p) { return {code, p, false, std::nullopt}; }

}  // namespace

TEST(Entropy, Values) {
    EXPECT_EQ(entropy(0.0), 0.0);
    EXPECT_EQ(entropy(1.0), 0.0);
    EXPECT_NEAR(entropy(0.5), 0.5 * std::log(2.0), 1e-15);
    EXPECT_NEAR(entropy(0.5), 0.34657359027997264, 1e-15);
    EXPECT_THROW(entropy(-0.1), DomainError);
    EXPECT_THROW(entropy(1.5), DomainError);
}

TEST(Entropy, ConcaveWithMaximumAtInverseE) {
    const int n = 2000;
    double best_p = 0, best = -1;
    for (int i = 0; i <= n; ++i) {
        const double p = static_cast<double>(i) / n;
        const double h = entropy(p);
        if (h > best) best = h, best_p = p;
        if (i > 0 && i < n) {
            const double lo = entropy(static_cast<double>(i - 1) / n), hi = entropy(static_cast<double>(i + 1) / n);
            EXPECT_GE(h + 1e-15, 0.5 * (lo + hi)) << "concavity fails at p=" << p;
        }
    }
    EXPECT_NEAR(best_p, std::exp(-1.0), 1.0 / n);
}

TEST(ConditionalEntropy, Values) {
    EXPECT_EQ(conditional_entropy(0.3, 0.0), 0.0);
    EXPECT_NEAR(conditional_entropy(0.25, 0.25), 0.5 * std::log(2.0), 1e-15);
    EXPECT_EQ(conditional_entropy(0.0, 0.0), 0.0);
    EXPECT_THROW(conditional_entropy(-0.1, 0.2), DomainError);
}

// The split term is at most p ln 2, which stays below -p ln p only while p <= 1/2.
TEST(ConditionalEntropy, NeverExceedsEntropyForMinorityCodes) {
    ad::Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double p = 0.5 * rng.uniform();
        const double split = rng.uniform();
        const double plus = p * split, minus = p - plus;
        EXPECT_LE(conditional_entropy(plus, minus), entropy(plus + minus) + 1e-12);
    }
}

TEST(ConditionalEntropy, CanExceedEntropyForMajorityCodes) {
    EXPECT_GT(conditional_entropy(0.45, 0.45), entropy(0.9));
}

TEST(CodeStats, FrequencyAndNumericFlag) {
    std::vector<PatientRecord> records = {
        patient("1", {{0, "A", {}}, {1, "B", 1.0}}),
        patient("2", {{0, "A", {}}, {1, "B", 2.0}, {2, "A", {}}}),
        patient("3", {{0, "B", 3.0}}),
        patient("4", {{0, "B", {}}}),
    };
    auto stats = compute_code_stats(records);
    ASSERT_EQ(stats.size(), 2u);
    EXPECT_EQ(stats[0].code, "A");
    EXPECT_DOUBLE_EQ(stats[0].patient_frequency, 0.5);
    EXPECT_FALSE(stats[0].is_numeric);
    EXPECT_EQ(stats[1].code, "B");
    EXPECT_DOUBLE_EQ(stats[1].patient_frequency, 1.0);
    EXPECT_TRUE(stats[1].is_numeric);  // 3 of 4 events carry values
    EXPECT_THROW(compute_code_stats({}), DomainError);
}

TEST(CodeStats, NumericThresholdIsStrict) {
    std::vector<PatientRecord> records = {patient("1", {{0, "B", 1.0}, {1, "B", {}}})};
    EXPECT_FALSE(compute_code_stats(records)[0].is_numeric);
}

TEST(CodeStats, OntologyJointSplitsFrequency) {
    Ontology onto = {{"A", {"P"}}};
    std::vector<PatientRecord> records = {
        patient("1", {{0, "A", {}}, {1, "P", {}}}),
        patient("2", {{0, "A", {}}}),
        patient("3", {{0, "P", {}}}),
        patient("4", {{0, "A", {}}, {0, "P", {}}}),
    };
    auto stats = compute_code_stats(records, &onto);
    const auto& a = stats[0];
    ASSERT_TRUE(a.joint_with_parent);
    EXPECT_DOUBLE_EQ(a.joint_with_parent->first, 0.5);
    EXPECT_DOUBLE_EQ(a.joint_with_parent->second, 0.25);
    EXPECT_NEAR(a.joint_with_parent->first + a.joint_with_parent->second, a.patient_frequency, 1e-12);
    EXPECT_FALSE(stats[1].joint_with_parent);
}

TEST(BuildVocabulary, TopKByEntropy) {
    auto v = build_vocabulary({stat("A", 0.5), stat("B", 0.01), stat("C", 1.0)}, 2, false);
    ASSERT_EQ(v.size(), 2u);
    EXPECT_EQ(v[0].code, "A");
    EXPECT_EQ(v[1].code, "B");
    EXPECT_EQ(v[1].index, 1u);
    EXPECT_FALSE(v.find("C"));
}

TEST(BuildVocabulary, OversizedRequestWarns) {
    std::vector<std::string> warnings;
    auto v = build_vocabulary({stat("A", 0.5), stat("B", 0.2)}, 10, false, &warnings);
    EXPECT_EQ(v.size(), 2u);
    EXPECT_EQ(warnings.size(), 1u);
    EXPECT_THROW(build_vocabulary({stat("A", 0.5)}, 0, false), DomainError);
}

TEST(BuildVocabulary, TiesBrokenLexicographically) {
    auto v = build_vocabulary({stat("Z", 0.3), stat("M", 0.3)}, 1, false);
    EXPECT_EQ(v[0].code, "M");
}

TEST(BuildVocabulary, OntologyUsesConditionalEntropy) {
    CodeStats a{"A", 0.5, false, std::make_pair(0.5, 0.0)};  // fully determined by parent
    CodeStats b{"B", 0.1, false, std::nullopt};
    auto with = build_vocabulary({a, b}, 1, true);
    auto without = build_vocabulary({a, b}, 1, false);
    EXPECT_EQ(with[0].code, "B");
    EXPECT_EQ(without[0].code, "A");
}

TEST(BuildVocabulary, InvariantToRecordOrder) {
    ad::Rng rng(21);
    std::vector<PatientRecord> records;
    for (int i = 0; i < 60; ++i) records.push_back(ora::testing::random_record(rng, 1 + rng.below(20), 12));
    auto v1 = build_vocabulary(compute_code_stats(records), 8, false);
    std::reverse(records.begin(), records.end());
    std::swap(records[3], records[40]);
    auto v2 = build_vocabulary(compute_code_stats(records), 8, false);
    EXPECT_EQ(v1, v2);
    EXPECT_EQ(serialize_vocabulary(v1), serialize_vocabulary(v2));
}

TEST(VocabularyFile, RoundTrip) {
    auto v = build_vocabulary({stat("A", 0.5), stat("B", 0.01), {"L", 0.3, true, std::nullopt}}, 3, false);
    const auto text = serialize_vocabulary(v);
    EXPECT_EQ(parse_vocabulary(text), v);
    EXPECT_EQ(serialize_vocabulary(parse_vocabulary(text)), text);
    EXPECT_THROW(parse_vocabulary("0\tA\t2\t0.1\n"), ParseError);
    EXPECT_THROW(parse_vocabulary("1\tA\t0\t0.1\n"), ValidationError);
}
