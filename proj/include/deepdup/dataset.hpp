#pragma once

#include "deepdup/qnn.hpp"

#include <cstdint>
#include <filesystem>

namespace deepdup::data {

/// Four-class 8x8 synthetic image set: a horizontal bar at a random row, a
/// vertical bar at a random column, the main diagonal, and the anti-diagonal,
/// each pixel perturbed by N(0, noise^2). Features are [n, 64] in row-major
/// pixel order.
qnn::Dataset make_bars(std::size_t n, double noise, std::uint64_t seed);

/// CSV: one sample per line, `label,f0,f1,...`. No header.
qnn::Dataset read_csv(const std::filesystem::path& path);
void write_csv(const qnn::Dataset& ds, const std::filesystem::path& path);

/// IDX pair: features as an IDX tensor of float32 (type 0x0D) or unsigned
/// bytes (type 0x08, scaled by 1/255) whose first dimension is the sample
/// count; labels as an IDX1 unsigned-byte vector. Big-endian, as in MNIST.
qnn::Dataset read_idx(const std::filesystem::path& features, const std::filesystem::path& labels);
void write_idx(const qnn::Dataset& ds, const std::filesystem::path& features,
               const std::filesystem::path& labels);

/// Dispatches on extension: `.csv`, or `<stem>.idx` meaning the pair
/// `<stem>.idx` (features) and `<stem>.labels.idx`.
qnn::Dataset load(const std::filesystem::path& path);

} // namespace deepdup::data
