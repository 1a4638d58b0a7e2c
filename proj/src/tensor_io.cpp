#include "shapeformer/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <type_traits>

#include "shapeformer/digest.hpp"
#include "shapeformer/error.hpp"

namespace shapeformer::ad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename Real>
constexpr const char* dtype_name() {
  return std::is_same_v<Real, float> ? "float32" : "float64";
}

template <typename Real>
void append_le(std::string& out, std::span<const Real> values) {
  using Bits = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;
  for (Real v : values) {
    auto bits = std::bit_cast<Bits>(v);
    for (std::size_t b = 0; b < sizeof(Bits); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
}

template <typename Real>
std::vector<Real> read_le(const std::string& buf, std::size_t offset, std::size_t count) {
  using Bits = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;
  std::vector<Real> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    Bits bits = 0;
    for (std::size_t b = 0; b < sizeof(Bits); ++b)
      bits |= static_cast<Bits>(static_cast<unsigned char>(buf[offset + i * sizeof(Bits) + b])) << (8 * b);
    out[i] = std::bit_cast<Real>(bits);
  }
  return out;
}

}  // namespace

template <typename Real>
void save_bundle(const fs::path& dir, const std::vector<NamedTensor<Real>>& tensors, const json& metadata) {
  std::string buffer;
  json entries = json::array();
  for (const auto& t : tensors) {
    const std::size_t offset = buffer.size();
    append_le<Real>(buffer, t.tensor.data());
    entries.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset},
                       {"nbytes", buffer.size() - offset}});
  }
  json manifest = {{"format", "shapeformer-tensors"},
                   {"version", kBundleFormatVersion},
                   {"dtype", dtype_name<Real>()},
                   {"byte_order", "little"},
                   {"buffer", "tensors.bin"},
                   {"buffer_bytes", buffer.size()},
                   {"buffer_sha256", sha256_hex(buffer)},
                   {"tensors", std::move(entries)},
                   {"metadata", metadata}};

  const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
  fs::create_directories(parent);
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  write_file_atomic(tmp / "tensors.bin", buffer);
  write_file_atomic(tmp / "manifest.json", manifest.dump(1) + "\n");
  fs::path old = dir;
  old += ".old";
  fs::remove_all(old);
  if (fs::exists(dir)) fs::rename(dir, old);
  fs::rename(tmp, dir);
  fs::remove_all(old);
}

template <typename Real>
TensorBundle<Real> load_bundle(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw InputError("no tensor bundle at " + dir.string());
  json manifest;
  try {
    manifest = json::parse(read_text_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw ParseError("corrupt bundle manifest in " + dir.string() + ": " + e.what());
  }
  try {
    if (manifest.at("format").get<std::string>() != "shapeformer-tensors")
      throw ParseError("not a tensor bundle: " + dir.string());
    const int version = manifest.at("version").get<int>();
    if (version != kBundleFormatVersion)
      throw ArtifactMismatch("bundle version mismatch: expected " + std::to_string(kBundleFormatVersion) + ", found " +
                             std::to_string(version));
    const auto dtype = manifest.at("dtype").get<std::string>();
    if (dtype != dtype_name<Real>())
      throw ArtifactMismatch(std::string("bundle dtype mismatch: expected ") + dtype_name<Real>() + ", found " + dtype);
    if (manifest.at("byte_order").get<std::string>() != "little") throw ParseError("unsupported byte order");
    const std::string buffer = read_text_file(dir / manifest.at("buffer").get<std::string>());
    if (buffer.size() != manifest.at("buffer_bytes").get<std::size_t>())
      throw ParseError("tensor buffer is truncated in " + dir.string());
    if (sha256_hex(buffer) != manifest.at("buffer_sha256").get<std::string>())
      throw ArtifactMismatch("tensor buffer digest does not match manifest in " + dir.string());

    TensorBundle<Real> bundle;
    bundle.metadata = manifest.at("metadata");
    for (const auto& e : manifest.at("tensors")) {
      Shape shape = e.at("shape").get<Shape>();
      const std::size_t offset = e.at("offset").get<std::size_t>();
      const std::size_t nbytes = e.at("nbytes").get<std::size_t>();
      if (nbytes != numel(shape) * sizeof(Real) || offset + nbytes > buffer.size())
        throw ParseError("tensor '" + e.at("name").get<std::string>() + "' has inconsistent extent");
      bundle.tensors.push_back({e.at("name").get<std::string>(),
                                Tensor<Real>(std::move(shape), read_le<Real>(buffer, offset, nbytes / sizeof(Real)))});
    }
    return bundle;
  } catch (const json::exception& e) {
    throw ParseError("malformed bundle manifest in " + dir.string() + ": " + e.what());
  }
}

std::string bundle_digest(const fs::path& dir) {
  return sha256_hex(read_text_file(dir / "manifest.json") + read_text_file(dir / "tensors.bin"));
}

template void save_bundle<float>(const fs::path&, const std::vector<NamedTensor<float>>&, const json&);
template void save_bundle<double>(const fs::path&, const std::vector<NamedTensor<double>>&, const json&);
template TensorBundle<float> load_bundle<float>(const fs::path&);
template TensorBundle<double> load_bundle<double>(const fs::path&);

}  // namespace shapeformer::ad
