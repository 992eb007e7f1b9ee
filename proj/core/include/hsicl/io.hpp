#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hsicl/autodiff.hpp"
#include "hsicl/cube.hpp"
#include "hsicl/model.hpp"
#include "hsicl/train.hpp"

namespace hsicl {

enum class DType { F32, F64 };
std::string_view dtype_name(DType d) noexcept;

/// A cube with optional clean reference and per-pixel labels, as stored on
/// disk. Wavelengths and the scene name travel with the cube.
struct HsiBundle {
    HyperCube cube;
    std::optional<Volume> clean;
    std::optional<LabelField> labels;
    DType dtype = DType::F32;
    std::uint64_t seed = 0;
    std::uint64_t config_digest = 0;

    void validate() const;
};

/// Serialized bytes: "HSB1", u32 LE header length, header text, payloads.
std::string encode_bundle(const HsiBundle& bundle);
HsiBundle decode_bundle(const std::string& bytes, const std::string& source = "bundle");
void write_bundle(const HsiBundle& bundle, const std::string& path);
HsiBundle read_bundle(const std::string& path);

/// Header fields alone, without decoding the payloads.
struct BundleHeader {
    std::size_t bands = 0, rows = 0, cols = 0, label_dim = 0;
    double wavelength_min = 0.0, wavelength_max = 0.0;
    DType dtype = DType::F32;
    std::vector<std::string> payloads;
    std::string name;
    std::uint64_t seed = 0, config_digest = 0;
};
BundleHeader read_bundle_header(const std::string& path);

/// Named tensors plus the digest of the config that produced them.
struct Checkpoint {
    std::uint64_t config_digest = 0;
    std::vector<std::pair<std::string, ad::Tensor>> tensors;
};

Checkpoint make_checkpoint(const ModelParams& params, std::uint64_t config_digest);
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");
void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);
/// Copies checkpoint values into freshly initialised parameters; names and
/// shapes must match exactly.
ModelParams params_from_checkpoint(const Checkpoint& ckpt, const BackboneConfig& model);

/// Writes to a temporary sibling, then renames over `path`.
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

/// `band,original,transformed` with 9 significant digits.
std::string preview_csv(std::span<const double> original, std::span<const double> transformed);

/// One line per epoch: epoch,total,regression,contrastive,batches,skipped.
std::string format_training_log(const std::vector<EpochLog>& log);

}  // namespace hsicl
