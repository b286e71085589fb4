#pragma once

#include <cstdint>
#include <vector>

#include "scalp/data.hpp"
#include "scalp/model.hpp"
#include "scalp/rng.hpp"
#include "scalp/tensor.hpp"

namespace scalp::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

/// Values bounded away from zero so kinks (relu, max, clamp) sit far from the FD stencil.
inline Tensor away_from_zero(Rng& rng, Shape shape, double margin = 0.05) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = rng.uniform(margin, 1.0);
        t[i] = rng.bernoulli(0.5) ? v : -v;
    }
    return t;
}

/// Small encoder used by gradient and CAM tests.
inline EncoderConfig toy_encoder() {
    EncoderConfig c;
    c.channels = {3, 4};
    c.attention_kernel = 3;
    c.classifier_hidden = 5;
    c.projector_hidden = 5;
    c.projection_dim = 4;
    return c;
}

/// Patients with `studies` studies each; patient p carries disease (p % 8) + 1
/// on all of its studies plus random extra labels.
inline Dataset labelled_dataset(std::size_t patients, std::size_t studies, std::size_t side, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Study> out;
    for (std::size_t p = 0; p < patients; ++p) {
        const std::string pid = "p" + std::to_string(p);
        for (std::size_t s = 0; s < studies; ++s) {
            Study st;
            st.patient_id = pid;
            st.study_id = pid + "_s" + std::to_string(s);
            st.image = random_tensor(rng, Shape{side, side}, 0.0, 1.0);
            st.labels[p % kNumDiseases] = 1;
            for (std::size_t k = 0; k < kNumDiseases; ++k) {
                if (rng.bernoulli(0.2)) st.labels[k] = 1;
            }
            out.push_back(std::move(st));
        }
    }
    return Dataset(std::move(out));
}

}  // namespace scalp::testing
