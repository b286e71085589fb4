#include "scalp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "scalp/rng.hpp"

namespace scalp {

const std::array<std::string_view, kNumDiseases> kDiseaseNames = {
    "Atelectasis", "Cardiomegaly", "Effusion", "Infiltration", "Mass", "Nodule", "Pneumonia", "Pneumothorax"};

std::string to_string(const BoundingBox& box) {
    return "(" + std::to_string(box.x1) + "," + std::to_string(box.y1) + "," + std::to_string(box.x2) + "," +
           std::to_string(box.y2) + ")";
}

// ---------------------------------------------------------------- index

PatientIndex PatientIndex::build(std::span<const Study> studies) {
    PatientIndex index;
    for (std::size_t i = 0; i < studies.size(); ++i) {
        const Study& s = studies[i];
        index.by_patient_[s.patient_id].push_back(i);
        for (int k = 1; k <= static_cast<int>(kNumDiseases); ++k) {
            if (s.has(k)) index.by_patient_disease_[{s.patient_id, k}].push_back(i);
        }
    }
    for (const auto& [patient, _] : index.by_patient_) index.patients_.push_back(patient);
    return index;
}

std::span<const std::size_t> PatientIndex::studies_of(const std::string& patient) const {
    const auto it = by_patient_.find(patient);
    if (it == by_patient_.end()) return {};
    return it->second;
}

std::span<const std::size_t> PatientIndex::studies_with(const std::string& patient, int disease) const {
    const auto it = by_patient_disease_.find({patient, disease});
    if (it == by_patient_disease_.end()) return {};
    return it->second;
}

// ---------------------------------------------------------------- dataset

Dataset::Dataset(std::vector<Study> studies, std::vector<GroundTruthBox> boxes)
    : studies_(std::move(studies)), boxes_(std::move(boxes)) {
    for (std::size_t i = 0; i < studies_.size(); ++i) {
        const Study& s = studies_[i];
        if (s.study_id.empty() || s.patient_id.empty()) {
            throw DataError("dataset: study " + std::to_string(i) + " has an empty identifier");
        }
        if (!by_id_.emplace(s.study_id, i).second) {
            throw DataError("dataset: duplicate study_id '" + s.study_id + "'");
        }
        for (std::uint8_t y : s.labels) {
            if (y > 1) throw DataError("dataset: label out of range in study '" + s.study_id + "'");
        }
        if (s.image.rank() != 2 || s.image.dim(0) != s.image.dim(1) || s.image.size() == 0) {
            throw DataError("dataset: study '" + s.study_id + "' image must be square, got " +
                            shape_string(s.image.shape()));
        }
        for (double v : s.image.data()) {
            if (!(v >= 0.0 && v <= 1.0)) {
                throw DataError("dataset: study '" + s.study_id + "' has a pixel outside [0, 1]");
            }
        }
    }
    for (const GroundTruthBox& gt : boxes_) {
        const auto it = by_id_.find(gt.study_id);
        if (it == by_id_.end()) throw DataError("dataset: box refers to unknown study '" + gt.study_id + "'");
        if (gt.disease < 1 || gt.disease > static_cast<int>(kNumDiseases)) {
            throw DataError("dataset: box disease out of range for study '" + gt.study_id + "'");
        }
        const std::size_t side = studies_[it->second].side();
        if (!gt.box.valid_in(side, side)) {
            throw DataError("dataset: box " + to_string(gt.box) + " outside image of study '" + gt.study_id + "'");
        }
    }
    index_ = PatientIndex::build(studies_);
}

std::optional<std::size_t> Dataset::find(const std::string& study_id) const {
    const auto it = by_id_.find(study_id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    std::vector<Study> picked;
    std::set<std::string> ids;
    picked.reserve(indices.size());
    for (std::size_t i : indices) {
        picked.push_back(studies_.at(i));
        ids.insert(studies_[i].study_id);
    }
    std::vector<GroundTruthBox> kept;
    for (const GroundTruthBox& gt : boxes_) {
        if (ids.contains(gt.study_id)) kept.push_back(gt);
    }
    return Dataset(std::move(picked), std::move(kept));
}

// ---------------------------------------------------------------- splits

SplitSet split_by_patient(const Dataset& dataset, SplitFractions fractions, std::uint64_t seed) {
    const double total_fraction = fractions.train + fractions.val + fractions.test;
    if (std::abs(total_fraction - 1.0) > 1e-9 || fractions.train < 0 || fractions.val < 0 || fractions.test < 0) {
        throw std::invalid_argument("split_by_patient: fractions must be non-negative and sum to 1, got " +
                                    std::to_string(total_fraction));
    }
    const auto& index = dataset.index();
    if (index.patient_count() < 3) {
        throw std::invalid_argument("split_by_patient: need at least 3 patients, got " +
                                    std::to_string(index.patient_count()));
    }
    std::vector<std::string> patients = index.patients();
    Rng rng(seed);
    rng.shuffle(std::span<std::string>(patients));

    const double n = static_cast<double>(dataset.size());
    const std::array<double, 3> targets{fractions.train * n, fractions.val * n, fractions.test * n};
    std::array<double, 3> counts{0.0, 0.0, 0.0};
    SplitSet split;
    std::array<std::vector<std::size_t>*, 3> lists{&split.train, &split.val, &split.test};
    for (const std::string& p : patients) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < 3; ++s) {
            if (targets[s] - counts[s] > targets[best] - counts[best]) best = s;
        }
        const auto studies = index.studies_of(p);
        counts[best] += static_cast<double>(studies.size());
        lists[best]->insert(lists[best]->end(), studies.begin(), studies.end());
    }
    for (auto* list : lists) std::sort(list->begin(), list->end());
    return split;
}

std::vector<std::vector<std::size_t>> patient_folds(const Dataset& dataset, std::size_t folds, std::uint64_t seed) {
    const auto& index = dataset.index();
    if (folds < 2 || folds > index.patient_count()) {
        throw std::invalid_argument("patient_folds: need 2 <= folds <= patients, got " + std::to_string(folds));
    }
    std::vector<std::string> patients = index.patients();
    Rng rng(seed);
    rng.shuffle(std::span<std::string>(patients));
    std::vector<std::vector<std::size_t>> out(folds);
    for (const std::string& p : patients) {
        std::size_t best = 0;
        for (std::size_t f = 1; f < folds; ++f) {
            if (out[f].size() < out[best].size()) best = f;
        }
        const auto studies = index.studies_of(p);
        out[best].insert(out[best].end(), studies.begin(), studies.end());
    }
    for (auto& f : out) std::sort(f.begin(), f.end());
    return out;
}

// ---------------------------------------------------------------- PGM

namespace {

std::string read_token(std::istream& in) {
    std::string token;
    char ch = 0;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string discard;
            std::getline(in, discard);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!token.empty()) break;
            continue;
        }
        token.push_back(ch);
    }
    return token;
}

}  // namespace

ScaledMap read_pgm_raw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("pgm: cannot open '" + path + "'");
    if (read_token(in) != "P5") throw DataError("pgm: '" + path + "' is not a binary (P5) PGM");
    ScaledMap map;
    int maxval = 0;
    try {
        map.cols = std::stoul(read_token(in));
        map.rows = std::stoul(read_token(in));
        maxval = std::stoi(read_token(in));
    } catch (const std::exception&) {
        throw DataError("pgm: malformed header in '" + path + "'");
    }
    if (maxval <= 0 || maxval > 255) throw DataError("pgm: only 8-bit maxval is supported in '" + path + "'");
    map.values.resize(map.rows * map.cols);
    in.read(reinterpret_cast<char*>(map.values.data()), static_cast<std::streamsize>(map.values.size()));
    if (!in) throw DataError("pgm: truncated pixel data in '" + path + "'");
    if (maxval != 255) {
        for (auto& v : map.values) v = static_cast<std::uint8_t>(std::lround(255.0 * v / maxval));
    }
    return map;
}

Tensor read_pgm(const std::string& path) {
    const ScaledMap map = read_pgm_raw(path);
    Tensor image(Shape{map.rows, map.cols});
    for (std::size_t i = 0; i < map.values.size(); ++i) image[i] = map.values[i] / 255.0;
    return image;
}

void write_pgm(const std::string& path, const ScaledMap& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("pgm: cannot open '" + path + "' for writing");
    out << "P5\n" << map.cols << ' ' << map.rows << "\n255\n";
    out.write(reinterpret_cast<const char*>(map.values.data()), static_cast<std::streamsize>(map.values.size()));
}

ScaledMap quantize(const Tensor& image) {
    if (image.rank() != 2) throw ShapeError("quantize: expected a 2-D image, got " + shape_string(image.shape()));
    ScaledMap map{image.dim(0), image.dim(1), {}};
    map.values.reserve(image.size());
    for (double v : image.data()) {
        map.values.push_back(static_cast<std::uint8_t>(std::round(255.0 * std::clamp(v, 0.0, 1.0))));
    }
    return map;
}

// ---------------------------------------------------------------- manifest

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

int parse_int(const std::string& text, const std::string& what, std::size_t row) {
    std::size_t used = 0;
    int value = 0;
    try {
        value = std::stoi(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) {
        throw DataError(what + " '" + text + "' is not an integer at row " + std::to_string(row));
    }
    return value;
}

}  // namespace

Dataset load_manifest(const std::string& path, const std::optional<std::string>& boxes_path) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest: cannot open '" + path + "'");
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    std::string line;
    if (!std::getline(in, line)) throw DataError("manifest: empty file '" + path + "'");
    strip_cr(line);
    if (line != kManifestHeader) {
        throw DataError("manifest: header must be exactly '" + std::string(kManifestHeader) + "'");
    }
    std::vector<Study> studies;
    std::set<std::string> seen;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        strip_cr(line);
        if (line.empty()) continue;
        ++row;
        const auto fields = split_csv(line);
        if (fields.size() != 3 + kNumDiseases) {
            throw DataError("manifest: expected " + std::to_string(3 + kNumDiseases) + " fields at row " +
                            std::to_string(row) + ", got " + std::to_string(fields.size()));
        }
        Study s;
        s.patient_id = fields[0];
        s.study_id = fields[1];
        if (!seen.insert(s.study_id).second) {
            throw DataError("manifest: duplicate study_id '" + s.study_id + "' at row " + std::to_string(row));
        }
        for (std::size_t k = 0; k < kNumDiseases; ++k) {
            const std::string& y = fields[3 + k];
            if (y != "0" && y != "1") {
                throw DataError("manifest: label out of range at row " + std::to_string(row) + " (y" +
                                std::to_string(k + 1) + "=" + y + ")");
            }
            s.labels[k] = y == "1" ? 1 : 0;
        }
        const std::filesystem::path image_path = base / fields[2];
        try {
            if (image_path.extension() == ".pgm") {
                s.image = read_pgm(image_path.string());
            } else {
                Tensor t = load_tensor(image_path.string());
                if (t.rank() == 3 && t.dim(0) == 1) t = t.reshaped(Shape{t.dim(1), t.dim(2)});
                s.image = std::move(t);
            }
        } catch (const std::exception& e) {
            throw DataError("manifest: unreadable image '" + fields[2] + "' at row " + std::to_string(row) + ": " +
                            e.what());
        }
        studies.push_back(std::move(s));
    }
    std::vector<GroundTruthBox> boxes;
    if (boxes_path) boxes = load_boxes(*boxes_path);
    return Dataset(std::move(studies), std::move(boxes));
}

std::vector<GroundTruthBox> load_boxes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("boxes: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("boxes: empty file '" + path + "'");
    strip_cr(line);
    if (line != kBoxHeader) throw DataError("boxes: header must be exactly '" + std::string(kBoxHeader) + "'");
    std::vector<GroundTruthBox> boxes;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        strip_cr(line);
        if (line.empty()) continue;
        ++row;
        const auto f = split_csv(line);
        if (f.size() != 6) throw DataError("boxes: expected 6 fields at row " + std::to_string(row));
        GroundTruthBox gt;
        gt.study_id = f[0];
        gt.disease = parse_int(f[1], "boxes: disease", row);
        if (gt.disease < 1 || gt.disease > static_cast<int>(kNumDiseases)) {
            throw DataError("boxes: disease out of range at row " + std::to_string(row));
        }
        gt.box = {parse_int(f[2], "boxes: x1", row), parse_int(f[3], "boxes: y1", row),
                  parse_int(f[4], "boxes: x2", row), parse_int(f[5], "boxes: y2", row)};
        boxes.push_back(std::move(gt));
    }
    return boxes;
}

void write_dataset(const std::string& dir, const Dataset& dataset) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    std::ofstream manifest(fs::path(dir) / "manifest.csv");
    if (!manifest) throw DataError("cannot write manifest into '" + dir + "'");
    manifest << kManifestHeader << '\n';
    for (const Study& s : dataset.studies()) {
        const std::string rel = "images/" + s.study_id + ".pgm";
        write_pgm((fs::path(dir) / rel).string(), quantize(s.image));
        manifest << s.patient_id << ',' << s.study_id << ',' << rel;
        for (std::uint8_t y : s.labels) manifest << ',' << static_cast<int>(y);
        manifest << '\n';
    }
    std::ofstream boxes(fs::path(dir) / "boxes.csv");
    boxes << kBoxHeader << '\n';
    for (const GroundTruthBox& gt : dataset.boxes()) {
        boxes << gt.study_id << ',' << gt.disease << ',' << gt.box.x1 << ',' << gt.box.y1 << ',' << gt.box.x2 << ','
              << gt.box.y2 << '\n';
    }
}

// ---------------------------------------------------------------- synthetic

namespace {

// Lesions stand out against a flattened background; at full contrast the anatomy
// swamps them and a 30-epoch schedule cannot separate the classes.
constexpr double kBackgroundContrast = 0.25;

double smoothstep(double edge0, double edge1, double x) {
    const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

struct Anatomy {
    double dx = 0.0, dy = 0.0, scale = 1.0, brightness = 0.0;
    std::array<double, 3> fx{}, fy{}, phase{};
};

struct Lesion {
    double cx = 0.5, cy = 0.5;  // normalized centre
    double angle = 0.0;
    int side = 0;               // 0 left lung, 1 right lung
};

double lung_cx(const Anatomy& a, int side) { return (side == 0 ? 0.31 : 0.69) + a.dx; }
double lung_cy(const Anatomy& a) { return 0.5 + a.dy; }

Lesion draw_lesion(int disease, const Anatomy& a, Rng& rng) {
    Lesion l;
    l.side = static_cast<int>(rng.uniform_index(2));
    const double lx = lung_cx(a, l.side);
    const double ly = lung_cy(a);
    switch (disease) {
        case 1: l.cx = lx + rng.uniform(-0.04, 0.04); l.cy = ly + rng.uniform(0.05, 0.18); l.angle = rng.uniform(-0.6, 0.6); break;
        case 2: l.cx = 0.5 + a.dx; l.cy = 0.6 + a.dy; break;
        case 3: l.cx = lx; l.cy = 0.0; l.angle = rng.uniform(-0.5, 0.5); break;
        case 4: l.cx = lx + rng.uniform(-0.04, 0.04); l.cy = ly + rng.uniform(-0.15, 0.1); break;
        case 5: l.cx = lx + rng.uniform(-0.05, 0.05); l.cy = ly + rng.uniform(-0.16, 0.12); break;
        case 6: l.cx = lx + rng.uniform(-0.04, 0.04); l.cy = ly + rng.uniform(-0.12, 0.1); break;
        case 7: l.cx = lx + rng.uniform(-0.04, 0.04); l.cy = ly + rng.uniform(-0.16, 0.0); break;
        case 8: l.cx = lx; l.cy = ly - 0.12; break;
        default: break;
    }
    return l;
}

// Amplitude layer of one disease at normalized pixel centre (u, v).
double lesion_amplitude(int disease, const Lesion& l, const Anatomy& a, double u, double v) {
    const double sc = a.scale;
    switch (disease) {
        case 1: {  // elongated ellipse
            const double cu = u - l.cx, cv = v - l.cy;
            const double ru = (std::cos(l.angle) * cu + std::sin(l.angle) * cv) / (0.14 * sc);
            const double rv = (-std::sin(l.angle) * cu + std::cos(l.angle) * cv) / (0.055 * sc);
            return 0.5 * (1.0 - smoothstep(0.75, 1.0, std::sqrt(ru * ru + rv * rv)));
        }
        case 2: {  // enlarged central blob
            const double gu = (u - l.cx) / (0.13 * sc), gv = (v - l.cy) / (0.11 * sc);
            return 0.45 * std::exp(-0.5 * (gu * gu + gv * gv));
        }
        case 3: {  // bottom gradient wedge
            const double half = 0.17 * sc;
            if (std::abs(u - l.cx) > half) return 0.0;
            const double top = 0.7 + 0.12 * l.angle * (u - l.cx) / half;
            return 0.5 * std::clamp((v - top) / (1.0 - top), 0.0, 1.0);
        }
        case 4: {  // striped texture patch
            const double half = 0.14 * sc;
            const double window = (1.0 - smoothstep(0.8 * half, half, std::abs(u - l.cx))) *
                                  (1.0 - smoothstep(0.8 * half, half, std::abs(v - l.cy)));
            const double pattern = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (u - l.cx) / 0.06) *
                                             std::sin(2.0 * std::numbers::pi * (v - l.cy) / 0.06);
            return 0.6 * window * pattern;
        }
        case 5: {  // dense disc
            const double r = std::hypot(u - l.cx, v - l.cy) / sc;
            return 0.55 * (1.0 - smoothstep(0.09, 0.11, r));
        }
        case 6: {  // small bright disc
            const double r = std::hypot(u - l.cx, v - l.cy) / sc;
            return 0.7 * (1.0 - smoothstep(0.035, 0.05, r));
        }
        case 7: {  // diffuse patch
            const double gu = (u - l.cx) / (0.11 * sc), gv = (v - l.cy) / (0.13 * sc);
            return 0.4 * std::exp(-0.5 * (gu * gu + gv * gv));
        }
        case 8: {  // crescent along the lateral lung edge
            const double outward = l.side == 0 ? -1.0 : 1.0;
            const double ox = l.cx + outward * 0.06 * sc;
            const double inner = std::hypot(u - (l.cx - outward * 0.02 * sc), v - (l.cy + 0.02));
            const double outer = std::hypot(u - ox, v - l.cy);
            const double in_outer = 1.0 - smoothstep(0.17 * sc, 0.19 * sc, outer);
            const double out_inner = smoothstep(0.15 * sc, 0.17 * sc, inner);
            return 0.45 * in_outer * out_inner;
        }
        default: return 0.0;
    }
}

double anatomy_background(const Anatomy& a, double u, double v) {
    double value = 0.55 + a.brightness;
    for (int side = 0; side < 2; ++side) {
        const double ru = (u - lung_cx(a, side)) / (0.15 * a.scale);
        const double rv = (v - lung_cy(a)) / (0.3 * a.scale);
        value -= 0.28 * (1.0 - smoothstep(0.8, 1.05, std::sqrt(ru * ru + rv * rv)));
    }
    for (std::size_t i = 0; i < a.fx.size(); ++i) {
        value += 0.03 * std::cos(2.0 * std::numbers::pi * (a.fx[i] * u + a.fy[i] * v) + a.phase[i]);
    }
    return value;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
    if (config.patients == 0 || config.studies_per_patient == 0) {
        throw std::invalid_argument("generate_synthetic: need at least one patient and one study per patient");
    }
    if (config.downsample_factor == 0 || config.image_side == 0 || config.image_side % config.downsample_factor != 0) {
        throw std::invalid_argument("generate_synthetic: image side " + std::to_string(config.image_side) +
                                    " is not divisible by the downsample factor " +
                                    std::to_string(config.downsample_factor));
    }
    if (config.healthy_fraction < 0.0 || config.healthy_fraction > 1.0 || config.incidental_probability < 0.0 ||
        config.incidental_probability > 1.0) {
        throw std::invalid_argument("generate_synthetic: probabilities must lie in [0, 1]");
    }
    const std::size_t side = config.image_side;
    const int width = config.patients >= 10000 ? 6 : 4;
    std::vector<Study> studies;
    std::vector<GroundTruthBox> boxes;
    studies.reserve(config.patients * config.studies_per_patient);

    for (std::size_t p = 0; p < config.patients; ++p) {
        Rng rng(derive_seed(config.seed, p));
        Anatomy anatomy;
        anatomy.dx = rng.uniform(-0.05, 0.05);
        anatomy.dy = rng.uniform(-0.05, 0.05);
        anatomy.scale = rng.uniform(0.93, 1.07);
        anatomy.brightness = rng.uniform(-0.06, 0.06);
        for (std::size_t i = 0; i < 3; ++i) {
            anatomy.fx[i] = rng.uniform(0.3, 2.0);
            anatomy.fy[i] = rng.uniform(0.3, 2.0);
            anatomy.phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
        std::array<bool, kNumDiseases> recurring{};
        if (!rng.bernoulli(config.healthy_fraction)) {
            const std::size_t count = rng.bernoulli(0.6) ? 1 : 2;
            for (std::size_t c = 0; c < count;) {
                const std::size_t k = rng.uniform_index(kNumDiseases);
                if (!recurring[k]) {
                    recurring[k] = true;
                    ++c;
                }
            }
        }
        std::array<Lesion, kNumDiseases> lesions;
        for (int k = 1; k <= static_cast<int>(kNumDiseases); ++k) lesions[k - 1] = draw_lesion(k, anatomy, rng);

        char pid[32];
        std::snprintf(pid, sizeof pid, "p%0*zu", width, p);
        for (std::size_t s = 0; s < config.studies_per_patient; ++s) {
            Study study;
            study.patient_id = pid;
            study.study_id = std::string(pid) + "_s" + std::to_string(s);
            for (std::size_t k = 0; k < kNumDiseases; ++k) {
                study.labels[k] = recurring[k] || rng.bernoulli(config.incidental_probability) ? 1 : 0;
            }
            std::array<double, 3> phase{};
            for (double& ph : phase) ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double jitter_u = rng.uniform(-0.015, 0.015);
            const double jitter_v = rng.uniform(-0.015, 0.015);

            Tensor image(Shape{side, side});
            for (std::size_t y = 0; y < side; ++y) {
                for (std::size_t x = 0; x < side; ++x) {
                    const double u = (x + 0.5) / side, v = (y + 0.5) / side;
                    double value = kBackgroundContrast * anatomy_background(anatomy, u, v);
                    value += 0.015 * std::cos(2.0 * std::numbers::pi * (1.3 * u + 0.7 * v) + phase[0]) +
                             0.015 * std::cos(2.0 * std::numbers::pi * (0.6 * u - 1.1 * v) + phase[1]);
                    image.at(y, x) = value;
                }
            }
            for (int k = 1; k <= static_cast<int>(kNumDiseases); ++k) {
                if (!study.has(k)) continue;
                Lesion lesion = lesions[k - 1];
                lesion.cx += jitter_u;
                lesion.cy += jitter_v;
                std::vector<double> layer(side * side);
                double peak = 0.0;
                for (std::size_t y = 0; y < side; ++y) {
                    for (std::size_t x = 0; x < side; ++x) {
                        const double a = lesion_amplitude(k, lesion, anatomy, (x + 0.5) / side, (y + 0.5) / side);
                        layer[y * side + x] = a;
                        peak = std::max(peak, a);
                    }
                }
                BoundingBox box{static_cast<int>(side), static_cast<int>(side), 0, 0};
                for (std::size_t y = 0; y < side; ++y) {
                    for (std::size_t x = 0; x < side; ++x) {
                        const double a = layer[y * side + x];
                        image.at(y, x) += a;
                        if (peak > 0.0 && a > 0.5 * peak) {
                            box.x1 = std::min(box.x1, static_cast<int>(x));
                            box.y1 = std::min(box.y1, static_cast<int>(y));
                            box.x2 = std::max(box.x2, static_cast<int>(x) + 1);
                            box.y2 = std::max(box.y2, static_cast<int>(y) + 1);
                        }
                    }
                }
                if (box.x1 < box.x2) boxes.push_back({study.study_id, k, box});
            }
            for (double& v : image.data()) v = std::clamp(v, 0.0, 1.0);
            study.image = std::move(image);
            studies.push_back(std::move(study));
        }
    }
    return Dataset(std::move(studies), std::move(boxes));
}

}  // namespace scalp
