#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include <proalign/metrics.hpp>

using namespace proalign;

namespace {

// Naive reference implementations, kept independent of metrics.hpp.
double ref_balanced_accuracy(const std::vector<int>& truth, const std::vector<int>& preds, int n_classes) {
    double sum = 0.0;
    int supported = 0;
    for (int c = 0; c < n_classes; ++c) {
        int support = 0, correct = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth[i] == c) {
                ++support;
                if (preds[i] == c) ++correct;
            }
        }
        if (support == 0) continue;
        sum += static_cast<double>(correct) / support;
        ++supported;
    }
    return sum / supported;
}

double ref_weighted_f1(const std::vector<int>& truth, const std::vector<int>& preds, int n_classes) {
    double sum = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        int support = 0, predicted = 0, tp = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth[i] == c) ++support;
            if (preds[i] == c) ++predicted;
            if (truth[i] == c && preds[i] == c) ++tp;
        }
        if (support == 0) continue;
        const double precision = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
        const double recall = static_cast<double>(tp) / support;
        const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
        sum += f1 * support / static_cast<double>(truth.size());
    }
    return sum;
}

}  // namespace

TEST_CASE("confusion matrix counts perfect predictions on the diagonal") {
    const ConfusionMatrix cm = confusion_matrix({0, 1}, {0, 1}, 2);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(1, 1) == 1);
    CHECK(cm.at(0, 1) == 0);
    CHECK(cm.total() == 2);
}

TEST_CASE("confusion matrix matches the hand-counted example") {
    const ConfusionMatrix cm = confusion_matrix({0, 0, 1, 1, 1}, {0, 1, 1, 1, 0}, 2);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 0) == 1);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.support(0) == 2);
    CHECK(cm.support(1) == 3);
}

TEST_CASE("confusion matrix rejects empty or mismatched inputs") {
    try {
        confusion_matrix({}, {}, 2);
        FAIL("expected LengthMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::length_mismatch);
    }
    CHECK_THROWS_AS(confusion_matrix({0, 1}, {0}, 2), Error);
    try {
        confusion_matrix({0, 2}, {0, 1}, 2);
        FAIL("expected BadLabel");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::bad_label);
    }
}

TEST_CASE("balanced accuracy of perfect predictions is one") {
    const ConfusionMatrix cm = confusion_matrix({0, 1, 2}, {0, 1, 2}, 3);
    CHECK(balanced_accuracy(cm) == Catch::Approx(1.0));
}

TEST_CASE("balanced accuracy of the worked confusion matrix is 7/12") {
    ConfusionMatrix cm;
    cm.n_classes = 2;
    cm.counts = {1, 1, 1, 2};
    CHECK(balanced_accuracy(cm) == Catch::Approx(7.0 / 12.0).margin(1e-12));
}

TEST_CASE("a constant predictor on two balanced classes scores one half") {
    const ConfusionMatrix cm = confusion_matrix({0, 0, 1, 1}, {0, 0, 0, 0}, 2);
    CHECK(balanced_accuracy(cm) == Catch::Approx(0.5));
}

TEST_CASE("balanced accuracy without any supported class raises") {
    ConfusionMatrix cm;
    cm.n_classes = 2;
    cm.counts = {0, 0, 0, 0};
    try {
        balanced_accuracy(cm);
        FAIL("expected NoSupportedClasses");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::no_supported_classes);
    }
}

TEST_CASE("weighted F1 of perfect predictions is one") {
    const ConfusionMatrix cm = confusion_matrix({0, 1, 1}, {0, 1, 1}, 2);
    CHECK(weighted_f1(cm) == Catch::Approx(1.0));
}

TEST_CASE("weighted F1 of the worked confusion matrix is 0.6") {
    ConfusionMatrix cm;
    cm.n_classes = 2;
    cm.counts = {1, 1, 1, 2};
    CHECK(weighted_f1(cm) == Catch::Approx(0.6).margin(1e-12));
}

TEST_CASE("classes with zero support contribute zero weight") {
    // class 2 never occurs in truth; metric equals the two-class value
    const ConfusionMatrix cm = confusion_matrix({0, 0, 1, 1, 1}, {0, 1, 1, 1, 0}, 3);
    CHECK(weighted_f1(cm) == Catch::Approx(0.6).margin(1e-12));
}

TEST_CASE("both metrics match the naive reference on random predictions") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 300; ++trial) {
        const int n_classes = 2 + static_cast<int>(rng() % 5);
        const std::size_t n = 1 + rng() % 200;
        std::vector<int> truth(n), preds(n);
        for (std::size_t i = 0; i < n; ++i) {
            truth[i] = static_cast<int>(rng() % n_classes);
            preds[i] = static_cast<int>(rng() % n_classes);
        }
        const ConfusionMatrix cm = confusion_matrix(truth, preds, n_classes);
        REQUIRE(std::abs(balanced_accuracy(cm) - ref_balanced_accuracy(truth, preds, n_classes)) <= 1e-12);
        REQUIRE(std::abs(weighted_f1(cm) - ref_weighted_f1(truth, preds, n_classes)) <= 1e-12);
    }
}

TEST_CASE("metrics are invariant under simultaneous class relabeling") {
    std::mt19937_64 rng(103);
    for (int trial = 0; trial < 50; ++trial) {
        const int n_classes = 2 + static_cast<int>(rng() % 4);
        std::vector<int> perm(n_classes);
        for (int c = 0; c < n_classes; ++c) perm[c] = c;
        std::shuffle(perm.begin(), perm.end(), rng);

        const std::size_t n = 5 + rng() % 100;
        std::vector<int> truth(n), preds(n), truth_p(n), preds_p(n);
        for (std::size_t i = 0; i < n; ++i) {
            truth[i] = static_cast<int>(rng() % n_classes);
            preds[i] = static_cast<int>(rng() % n_classes);
            truth_p[i] = perm[truth[i]];
            preds_p[i] = perm[preds[i]];
        }
        const ConfusionMatrix a = confusion_matrix(truth, preds, n_classes);
        const ConfusionMatrix b = confusion_matrix(truth_p, preds_p, n_classes);
        REQUIRE(std::abs(balanced_accuracy(a) - balanced_accuracy(b)) <= 1e-12);
        REQUIRE(std::abs(weighted_f1(a) - weighted_f1(b)) <= 1e-12);
    }
}

TEST_CASE("for balanced binary data balanced accuracy equals plain accuracy") {
    std::mt19937_64 rng(107);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t per_class = 1 + rng() % 50;
        std::vector<int> truth, preds;
        for (std::size_t i = 0; i < per_class; ++i) {
            truth.push_back(0);
            truth.push_back(1);
        }
        std::size_t correct = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            preds.push_back(static_cast<int>(rng() % 2));
            if (preds[i] == truth[i]) ++correct;
        }
        const double plain = static_cast<double>(correct) / truth.size();
        const ConfusionMatrix cm = confusion_matrix(truth, preds, 2);
        REQUIRE(std::abs(balanced_accuracy(cm) - plain) <= 1e-12);
    }
}

TEST_CASE("aggregate of a single run has zero std") {
    const RunAggregate agg = aggregate_runs({0.5});
    CHECK(agg.mean == Catch::Approx(0.5));
    CHECK(agg.std_dev == Catch::Approx(0.0));
}

TEST_CASE("population std of two runs is half the range") {
    const RunAggregate agg = aggregate_runs({0.4, 0.6});
    CHECK(agg.mean == Catch::Approx(0.5).margin(1e-12));
    CHECK(agg.std_dev == Catch::Approx(0.1).margin(1e-12));
}

TEST_CASE("identical runs have zero variance") {
    const RunAggregate agg = aggregate_runs({0.7, 0.7, 0.7, 0.7});
    CHECK(agg.std_dev == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("aggregating zero runs raises EmptyRuns") {
    try {
        aggregate_runs({});
        FAIL("expected EmptyRuns");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::empty_runs);
    }
}

TEST_CASE("percent formatting uses two decimals") {
    CHECK(format_percent(0.5631) == "56.31");
    CHECK(format_percent(1.0) == "100.00");
    CHECK(format_percent(0.0) == "0.00");
}
