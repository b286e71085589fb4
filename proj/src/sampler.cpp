#include "scalp/sampler.hpp"

#include <set>

namespace scalp {

std::vector<int> repeatable_diseases(const Dataset& dataset, const std::string& patient) {
    std::vector<int> out;
    for (int k = 1; k <= static_cast<int>(kNumDiseases); ++k) {
        if (dataset.index().studies_with(patient, k).size() >= 2) out.push_back(k);
    }
    return out;
}

std::vector<std::string> eligible_patients(const Dataset& dataset) {
    std::vector<std::string> out;
    for (const std::string& p : dataset.index().patients()) {
        if (!repeatable_diseases(dataset, p).empty()) out.push_back(p);
    }
    return out;
}

std::pair<std::size_t, std::size_t> positive_pair(const Dataset& dataset, const std::string& patient, int disease,
                                                  Rng& rng) {
    const auto candidates = dataset.index().studies_with(patient, disease);
    if (candidates.size() < 2) {
        throw SamplerError("positive_pair: patient '" + patient + "' has " + std::to_string(candidates.size()) +
                           " studies with disease " + std::to_string(disease) + ", need 2");
    }
    const std::size_t first = rng.uniform_index(candidates.size());
    std::size_t second = rng.uniform_index(candidates.size() - 1);
    if (second >= first) ++second;
    return {candidates[first], candidates[second]};
}

std::pair<std::size_t, std::size_t> positive_pair(const Dataset& dataset, const std::string& patient, int disease,
                                                  std::uint64_t seed) {
    Rng rng(seed);
    return positive_pair(dataset, patient, disease, rng);
}

std::vector<std::size_t> negative_pool(const Dataset& dataset, std::size_t query, int disease) {
    const std::string& patient = dataset.study(query).patient_id;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Study& s = dataset.study(i);
        if (s.patient_id != patient && s.has(disease)) pool.push_back(i);
    }
    return pool;
}

std::vector<std::size_t> negative_keys(const Dataset& dataset, std::size_t query, int disease, std::size_t k,
                                       Rng& rng) {
    std::vector<std::size_t> pool = negative_pool(dataset, query, disease);
    if (pool.size() < k) {
        throw SamplerError("negative_keys: pool for study '" + dataset.study(query).study_id + "' and disease " +
                           std::to_string(disease) + " has " + std::to_string(pool.size()) + " studies, need " +
                           std::to_string(k));
    }
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.uniform_index(pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

std::vector<std::size_t> negative_keys(const Dataset& dataset, std::size_t query, int disease, std::size_t k,
                                       std::uint64_t seed) {
    Rng rng(seed);
    return negative_keys(dataset, query, disease, k, rng);
}

namespace {

BatchEntry make_entry(const Dataset& dataset, const std::string& patient, std::size_t negatives, Rng& rng) {
    const std::vector<int> diseases = repeatable_diseases(dataset, patient);
    BatchEntry entry;
    entry.disease = diseases[rng.uniform_index(diseases.size())];
    std::tie(entry.query, entry.positive) = positive_pair(dataset, patient, entry.disease, rng);
    entry.negatives = negative_keys(dataset, entry.query, entry.disease, negatives, rng);
    return entry;
}

}  // namespace

ContrastiveBatch sample_batch(const Dataset& dataset, std::size_t batch_size, std::size_t negatives,
                              std::uint64_t seed) {
    std::vector<std::string> eligible = eligible_patients(dataset);
    if (batch_size == 0) throw SamplerError("sample_batch: batch size must be positive");
    if (eligible.size() < batch_size) {
        throw SamplerError("sample_batch: only " + std::to_string(eligible.size()) +
                           " eligible patients for a batch of " + std::to_string(batch_size));
    }
    Rng rng(seed);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::size_t j = i + rng.uniform_index(eligible.size() - i);
        std::swap(eligible[i], eligible[j]);
    }
    ContrastiveBatch batch;
    for (std::size_t i = 0; i < batch_size; ++i) batch.entries.push_back(make_entry(dataset, eligible[i], negatives, rng));
    return batch;
}

std::vector<ContrastiveBatch> epoch_batches(const Dataset& dataset, std::size_t batch_size, std::size_t negatives,
                                            std::uint64_t seed, std::size_t epoch) {
    std::vector<std::string> eligible = eligible_patients(dataset);
    if (batch_size == 0) throw SamplerError("epoch_batches: batch size must be positive");
    if (eligible.size() < batch_size) {
        throw SamplerError("epoch_batches: only " + std::to_string(eligible.size()) +
                           " eligible patients for a batch of " + std::to_string(batch_size));
    }
    Rng order(derive_seed(seed, epoch));
    order.shuffle(std::span<std::string>(eligible));
    std::vector<ContrastiveBatch> batches;
    for (std::size_t b = 0; (b + 1) * batch_size <= eligible.size(); ++b) {
        Rng rng(derive_seed(seed, epoch, b + 1));
        ContrastiveBatch batch;
        for (std::size_t i = 0; i < batch_size; ++i) {
            batch.entries.push_back(make_entry(dataset, eligible[b * batch_size + i], negatives, rng));
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

std::optional<std::string> find_batch_violation(const Dataset& dataset, const ContrastiveBatch& batch) {
    std::set<std::string> patients;
    for (std::size_t e = 0; e < batch.entries.size(); ++e) {
        const BatchEntry& entry = batch.entries[e];
        const std::string where = "entry " + std::to_string(e) + ": ";
        if (entry.query >= dataset.size() || entry.positive >= dataset.size()) return where + "study out of range";
        const Study& q = dataset.study(entry.query);
        const Study& pos = dataset.study(entry.positive);
        if (!patients.insert(q.patient_id).second) return where + "duplicate patient " + q.patient_id;
        if (entry.query == entry.positive) return where + "positive key equals query";
        if (pos.patient_id != q.patient_id) return where + "positive key from another patient";
        if (!q.has(entry.disease) || !pos.has(entry.disease)) return where + "anchor disease missing on query/positive";
        std::set<std::size_t> seen;
        for (std::size_t n : entry.negatives) {
            if (n >= dataset.size()) return where + "negative out of range";
            const Study& neg = dataset.study(n);
            if (neg.patient_id == q.patient_id) return where + "negative shares the query's patient";
            if (!neg.has(entry.disease)) return where + "negative lacks the anchor disease";
            if (!seen.insert(n).second) return where + "negative drawn twice";
        }
    }
    return std::nullopt;
}

}  // namespace scalp
