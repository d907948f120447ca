#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "s4sleep/dataset.hpp"
#include "s4sleep/edf.hpp"
#include "s4sleep/network.hpp"
#include "s4sleep/random.hpp"

namespace s4sleep::fixtures {

// Random printable ASCII without trailing spaces.
std::string random_text(Rng& rng, std::size_t max_len, bool allow_empty = true);

// A random, encodable EDF or EDF+C file description: 1-5 ordinary signals,
// 0-6 data records, and on EDF+ an annotation signal with 0-10 annotations.
edf::EdfContents random_edf(Rng& rng);

// Labeled record with Gaussian samples and random scoreable labels.
LabeledRecord random_record(Rng& rng, std::string id, std::size_t epochs, double sampling_rate = 20.0);

// Small model for structural tests.
ModelConfig tiny_model(std::size_t dim = 4, std::size_t states = 2, std::size_t layers = 1, std::uint64_t seed = 1);

}  // namespace s4sleep::fixtures
