#pragma once

#include "featvis/tensor.hpp"

#include <cstdint>
#include <vector>

namespace featvis {

struct SyntheticSet {
    std::vector<ImageTensor> images;
    std::vector<std::size_t> labels;
};

/// Images made of Gaussian blobs on a dark noisy background. Three classes
/// cycle through the set: one large red blob, two medium green blobs, four
/// small blue blobs. Image i has class i % 3.
SyntheticSet make_blob_images(std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed);

} // namespace featvis
