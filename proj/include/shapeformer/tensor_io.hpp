#pragma once

// Tensor bundle on disk: a directory holding `manifest.json` (names, shapes,
// dtype, byte offsets, buffer digest, free-form metadata) and `tensors.bin`
// (all tensors back to back, little-endian).

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "shapeformer/autodiff.hpp"

namespace shapeformer::ad {

inline constexpr int kBundleFormatVersion = 1;

template <typename Real>
struct TensorBundle {
  nlohmann::json metadata;
  std::vector<NamedTensor<Real>> tensors;
};

/// Writes into a temporary directory and renames it into place, replacing any
/// existing bundle at `dir`.
template <typename Real>
void save_bundle(const std::filesystem::path& dir, const std::vector<NamedTensor<Real>>& tensors,
                 const nlohmann::json& metadata);

/// Reads and validates the entire bundle before returning; a corrupt or
/// truncated bundle throws ParseError/ArtifactMismatch and yields nothing.
template <typename Real>
TensorBundle<Real> load_bundle(const std::filesystem::path& dir);

/// SHA-256 over manifest and buffer, identifying the bundle's exact contents.
std::string bundle_digest(const std::filesystem::path& dir);

}  // namespace shapeformer::ad
