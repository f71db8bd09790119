#pragma once

#include "deepdup/qnn.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace deepdup::qnn {

/// Model file layout (all integers little-endian):
///
///   "DDQM" | u32 version (=1) | u32 header_len | header JSON | weight blob
///
/// The header lists layers with kind, geometry, scale and float bias, plus
/// num_classes and optional metadata. The blob is every weight layer's int8
/// array in declaration order, input-major within a layer.
std::vector<std::uint8_t> encode_model(const QuantModel& model);
QuantModel decode_model(std::span<const std::uint8_t> bytes);

void save_model(const QuantModel& model, const std::filesystem::path& path);
QuantModel load_model(const std::filesystem::path& path);

} // namespace deepdup::qnn
