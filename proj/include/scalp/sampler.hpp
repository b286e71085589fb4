#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "scalp/data.hpp"
#include "scalp/rng.hpp"

namespace scalp {

class SamplerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One query with its keys; all study references are dataset indices.
struct BatchEntry {
    std::size_t query = 0;
    std::size_t positive = 0;
    std::vector<std::size_t> negatives;
    int disease = 1;  ///< anchor disease D, 1-based

    friend bool operator==(const BatchEntry&, const BatchEntry&) = default;
};

struct ContrastiveBatch {
    std::vector<BatchEntry> entries;

    std::size_t size() const { return entries.size(); }
    friend bool operator==(const ContrastiveBatch&, const ContrastiveBatch&) = default;
};

/// Diseases carried by at least two studies of the patient (ascending).
std::vector<int> repeatable_diseases(const Dataset& dataset, const std::string& patient);

/// Patients with a repeatable disease, sorted by id.
std::vector<std::string> eligible_patients(const Dataset& dataset);

/// Two distinct studies of `patient` labelled with `disease`: (query, positive key).
std::pair<std::size_t, std::size_t> positive_pair(const Dataset& dataset, const std::string& patient, int disease,
                                                  Rng& rng);
std::pair<std::size_t, std::size_t> positive_pair(const Dataset& dataset, const std::string& patient, int disease,
                                                  std::uint64_t seed);

/// Studies of other patients labelled with `disease`, in dataset order.
std::vector<std::size_t> negative_pool(const Dataset& dataset, std::size_t query, int disease);

/// `k` draws without replacement from the negative pool of `query`.
std::vector<std::size_t> negative_keys(const Dataset& dataset, std::size_t query, int disease, std::size_t k,
                                       Rng& rng);
std::vector<std::size_t> negative_keys(const Dataset& dataset, std::size_t query, int disease, std::size_t k,
                                       std::uint64_t seed);

/// N entries from N distinct eligible patients drawn without replacement.
ContrastiveBatch sample_batch(const Dataset& dataset, std::size_t batch_size, std::size_t negatives,
                              std::uint64_t seed);

/// Full batches covering a seeded permutation of the eligible patients once;
/// the trailing partial batch is dropped.
std::vector<ContrastiveBatch> epoch_batches(const Dataset& dataset, std::size_t batch_size, std::size_t negatives,
                                            std::uint64_t seed, std::size_t epoch);

/// First violated batch invariant, if any.
std::optional<std::string> find_batch_violation(const Dataset& dataset, const ContrastiveBatch& batch);

}  // namespace scalp
