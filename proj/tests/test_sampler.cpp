#include <doctest.h>

#include <map>
#include <set>

#include "scalp/sampler.hpp"
#include "support.hpp"

using namespace scalp;

namespace {

Study make_study(const std::string& patient, const std::string& id, std::vector<int> diseases) {
    Study s;
    s.patient_id = patient;
    s.study_id = id;
    s.image = Tensor(Shape{2, 2});
    for (int d : diseases) s.labels[static_cast<std::size_t>(d - 1)] = 1;
    return s;
}

}  // namespace

TEST_CASE("eligibility and repeatable diseases") {
    const Dataset ds({make_study("a", "a0", {1, 2}), make_study("a", "a1", {1}), make_study("b", "b0", {2}),
                      make_study("b", "b1", {3}), make_study("c", "c0", {2}), make_study("c", "c1", {2, 1})});
    CHECK(repeatable_diseases(ds, "a") == std::vector<int>{1});
    CHECK(repeatable_diseases(ds, "b").empty());
    CHECK(repeatable_diseases(ds, "c") == std::vector<int>{2});
    CHECK(eligible_patients(ds) == std::vector<std::string>{"a", "c"});
}

TEST_CASE("sample_batch examples") {
    const Dataset ds({make_study("a", "a0", {1}), make_study("a", "a1", {1}), make_study("b", "b0", {1}),
                      make_study("b", "b1", {1}), make_study("c", "c0", {2})});
    const ContrastiveBatch batch = sample_batch(ds, 2, 1, 5);
    std::set<std::string> patients;
    for (const auto& e : batch.entries) patients.insert(ds.study(e.query).patient_id);
    CHECK(patients.size() == 2);
    CHECK_FALSE(find_batch_violation(ds, batch));
    CHECK_THROWS_WITH_AS(sample_batch(ds, 3, 1, 5), doctest::Contains("2 eligible"), SamplerError);
    CHECK(sample_batch(ds, 2, 1, 77) == sample_batch(ds, 2, 1, 77));
}

TEST_CASE("positive_pair") {
    SUBCASE("two D-studies are forced") {
        const Dataset ds({make_study("a", "a0", {4}), make_study("a", "a1", {4})});
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto [q, p] = positive_pair(ds, "a", 4, seed);
            CHECK(std::set<std::size_t>{q, p} == std::set<std::size_t>{0, 1});
        }
    }
    SUBCASE("one D-study is an error") {
        const Dataset ds({make_study("a", "a0", {4}), make_study("a", "a1", {5})});
        CHECK_THROWS_AS(positive_pair(ds, "a", 4, 1), SamplerError);
    }
    SUBCASE("three D-studies give each unordered pair about a third of the time") {
        const Dataset ds({make_study("a", "a0", {4}), make_study("a", "a1", {4}), make_study("a", "a2", {4})});
        std::map<std::pair<std::size_t, std::size_t>, int> counts;
        Rng rng(9);
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) {
            auto [q, p] = positive_pair(ds, "a", 4, rng);
            REQUIRE(q != p);
            counts[{std::min(q, p), std::max(q, p)}]++;
        }
        REQUIRE(counts.size() == 3);
        double chi2 = 0.0;
        const double expected = draws / 3.0;
        for (const auto& [pair, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
        CHECK(chi2 < 13.8);  // 0.999 quantile of chi-square with 2 degrees of freedom
    }
}

TEST_CASE("negative_keys") {
    const Dataset ds({make_study("a", "a0", {1}), make_study("a", "a1", {1}), make_study("b", "b0", {1}),
                      make_study("c", "c0", {1}), make_study("d", "d0", {2})});
    CHECK(negative_pool(ds, 0, 1) == std::vector<std::size_t>{2, 3});
    auto whole = negative_keys(ds, 0, 1, 2, 3);
    std::sort(whole.begin(), whole.end());
    CHECK(whole == std::vector<std::size_t>{2, 3});
    CHECK_THROWS_WITH_AS(negative_keys(ds, 0, 1, 3, 3), doctest::Contains("pool"), SamplerError);

    const Dataset big = scalp::testing::labelled_dataset(40, 2, 2, 4);
    Rng rng(1);
    bool ok = true;
    for (int draw = 0; draw < 10000; ++draw) {
        const std::size_t q = rng.uniform_index(big.size());
        const Study& query = big.study(q);
        const int d = static_cast<int>(q / 2 % kNumDiseases) + 1;  // always carried by the query
        const auto keys = negative_keys(big, q, d, 3, rng);
        std::set<std::size_t> distinct(keys.begin(), keys.end());
        ok &= distinct.size() == keys.size();
        for (std::size_t k : keys) ok &= big.study(k).patient_id != query.patient_id && big.study(k).has(d);
    }
    CHECK(ok);
}

TEST_CASE("epoch batches cover eligible patients without repeats") {
    const Dataset ds = scalp::testing::labelled_dataset(37, 2, 2, 6);
    const auto batches = epoch_batches(ds, 8, 7, 11, 0);
    CHECK(batches.size() == eligible_patients(ds).size() / 8);
    std::set<std::string> seen;
    for (const auto& b : batches) {
        CHECK_FALSE(find_batch_violation(ds, b));
        for (const auto& e : b.entries) CHECK(seen.insert(ds.study(e.query).patient_id).second);
    }
    CHECK(epoch_batches(ds, 8, 7, 11, 3) == epoch_batches(ds, 8, 7, 11, 3));
    CHECK_FALSE(epoch_batches(ds, 8, 7, 11, 3) == epoch_batches(ds, 8, 7, 11, 4));
}

TEST_CASE("violations are detected") {
    const Dataset ds({make_study("a", "a0", {1}), make_study("a", "a1", {1}), make_study("b", "b0", {1}),
                      make_study("b", "b1", {1})});
    ContrastiveBatch good{{BatchEntry{0, 1, {2}, 1}}};
    CHECK_FALSE(find_batch_violation(ds, good));
    CHECK(find_batch_violation(ds, ContrastiveBatch{{BatchEntry{0, 2, {3}, 1}}}));   // positive from another patient
    CHECK(find_batch_violation(ds, ContrastiveBatch{{BatchEntry{0, 1, {1}, 1}}}));   // negative from the same patient
    CHECK(find_batch_violation(ds, ContrastiveBatch{{BatchEntry{0, 0, {2}, 1}}}));   // positive is the query
    CHECK(find_batch_violation(ds, ContrastiveBatch{{BatchEntry{0, 1, {2}, 1}, BatchEntry{1, 0, {3}, 1}}}));
}
