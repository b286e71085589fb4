#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scalp/box.hpp"
#include "scalp/tensor.hpp"

namespace scalp {

inline constexpr std::size_t kNumDiseases = 8;
extern const std::array<std::string_view, kNumDiseases> kDiseaseNames;

/// y_k for k = 1..8, stored at index k - 1.
using Labels = std::array<std::uint8_t, kNumDiseases>;

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Study {
    std::string patient_id;
    std::string study_id;
    Tensor image;  ///< side x side, values in [0, 1]
    Labels labels{};

    std::size_t side() const { return image.rank() == 2 ? image.dim(0) : 0; }
    /// `disease` is 1-based.
    bool has(int disease) const { return labels[static_cast<std::size_t>(disease - 1)] == 1; }
};

struct GroundTruthBox {
    std::string study_id;
    int disease = 1;  ///< 1-based
    BoundingBox box;

    friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

/// Patient -> studies and (patient, disease) -> studies, over study indices.
class PatientIndex {
public:
    static PatientIndex build(std::span<const Study> studies);

    /// Patient ids in sorted order.
    const std::vector<std::string>& patients() const { return patients_; }
    std::span<const std::size_t> studies_of(const std::string& patient) const;
    std::span<const std::size_t> studies_with(const std::string& patient, int disease) const;
    std::size_t patient_count() const { return patients_.size(); }

    friend bool operator==(const PatientIndex&, const PatientIndex&) = default;

private:
    std::vector<std::string> patients_;
    std::map<std::string, std::vector<std::size_t>> by_patient_;
    std::map<std::pair<std::string, int>, std::vector<std::size_t>> by_patient_disease_;
};

class Dataset {
public:
    Dataset() = default;
    /// Validates labels, pixel range, square images, unique study ids, and box bounds.
    explicit Dataset(std::vector<Study> studies, std::vector<GroundTruthBox> boxes = {});

    const std::vector<Study>& studies() const { return studies_; }
    const Study& study(std::size_t i) const { return studies_.at(i); }
    std::size_t size() const { return studies_.size(); }
    bool empty() const { return studies_.empty(); }
    const PatientIndex& index() const { return index_; }
    const std::vector<GroundTruthBox>& boxes() const { return boxes_; }
    std::optional<std::size_t> find(const std::string& study_id) const;

    /// Studies at `indices` (in that order) with the boxes that refer to them.
    Dataset subset(std::span<const std::size_t> indices) const;

private:
    std::vector<Study> studies_;
    std::vector<GroundTruthBox> boxes_;
    PatientIndex index_;
    std::map<std::string, std::size_t> by_id_;
};

struct SplitFractions {
    double train = 0.70;
    double val = 0.10;
    double test = 0.20;
};

/// Study indices per split.
struct SplitSet {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Shuffles patients with `seed`, then hands each patient (all of its studies)
/// to the split whose study-count target is furthest from being met.
SplitSet split_by_patient(const Dataset& dataset, SplitFractions fractions, std::uint64_t seed);

/// Partitions patients into `folds` groups of near-equal study count; returns
/// study indices per fold.
std::vector<std::vector<std::size_t>> patient_folds(const Dataset& dataset, std::size_t folds, std::uint64_t seed);

// ---- manifest I/O ----

inline constexpr std::string_view kManifestHeader = "patient_id,study_id,image_path,y1,y2,y3,y4,y5,y6,y7,y8";
inline constexpr std::string_view kBoxHeader = "study_id,disease,x1,y1,x2,y2";

/// Reads the manifest CSV; image paths resolve relative to the manifest's
/// directory and may be PGM (P5) or tensor blobs. When `boxes_path` is given
/// the box sidecar is attached.
Dataset load_manifest(const std::string& path, const std::optional<std::string>& boxes_path = std::nullopt);
std::vector<GroundTruthBox> load_boxes(const std::string& path);

/// Writes `<dir>/manifest.csv`, `<dir>/boxes.csv` and `<dir>/images/<study_id>.pgm`.
void write_dataset(const std::string& dir, const Dataset& dataset);

// ---- PGM ----

Tensor read_pgm(const std::string& path);
ScaledMap read_pgm_raw(const std::string& path);
void write_pgm(const std::string& path, const ScaledMap& map);
/// Quantizes [0, 1] values to 0..255 (round half away from zero).
ScaledMap quantize(const Tensor& image);

// ---- synthetic data ----

struct SyntheticConfig {
    std::size_t patients = 256;
    std::size_t studies_per_patient = 2;
    std::size_t image_side = 64;
    std::uint64_t seed = 7;
    std::size_t downsample_factor = 16;
    double healthy_fraction = 0.15;      ///< patients without a recurring disease
    double incidental_probability = 0.04;  ///< per study and non-recurring disease
};

/// Renders studies whose diseases are distinct parametric shapes over a
/// patient-specific anatomy, with tight ground-truth boxes per present disease.
Dataset generate_synthetic(const SyntheticConfig& config);

}  // namespace scalp
