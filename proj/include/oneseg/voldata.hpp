#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oneseg/tensor.hpp"

namespace oneseg {

struct Spacing {
    double z = 1.0;
    double y = 1.0;
    double x = 1.0;
};

struct VolumeMeta {
    std::size_t depth = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    Spacing spacing;
    std::string id;

    std::size_t slice_pixels() const { return height * width; }
    std::size_t voxels() const { return depth * height * width; }

    // Throws ValidationError unless D >= 1, H, W >= 8 and spacing is positive.
    void validate() const;

    bool same_dims(const VolumeMeta& o) const {
        return depth == o.depth && height == o.height && width == o.width;
    }
};

// Stack of D slices, intensities normalized to [0,1], stored slice-major.
class Volume {
public:
    Volume() = default;
    Volume(VolumeMeta meta, std::vector<float> voxels);

    const VolumeMeta& meta() const { return meta_; }
    std::size_t depth() const { return meta_.depth; }
    std::span<const float> voxels() const { return voxels_; }
    std::span<const float> slice(std::size_t d) const;

    // Slice as an [H,W,1] tensor.
    Tensor<float> slice_tensor(std::size_t d) const;

private:
    VolumeMeta meta_;
    std::vector<float> voxels_;
};

// Min-max normalization to [0,1]; a constant volume maps to all zeros.
std::vector<float> normalize_intensities(std::span<const float> raw);

enum class SliceOrigin : std::uint8_t { ground_truth, reconstructed, absent };

// Per-slice label maps with L class channels (channels innermost).
class Mask {
public:
    Mask() = default;
    Mask(VolumeMeta meta, std::size_t channels);

    const VolumeMeta& meta() const { return meta_; }
    std::size_t channels() const { return channels_; }
    std::size_t slice_values() const { return meta_.slice_pixels() * channels_; }

    std::span<const float> labels() const { return labels_; }
    std::span<const float> slice(std::size_t d) const;
    SliceOrigin origin(std::size_t d) const { return origins_.at(d); }

    void set_slice(std::size_t d, std::span<const float> values, SliceOrigin origin);

    // Binary foreground of one channel, volume-wide, 0/1 per voxel.
    std::vector<std::uint8_t> binary_channel(std::size_t channel, float threshold = 0.5f) const;
    std::size_t foreground_count(std::size_t channel = 0) const;

    // Values in [0,1], ground-truth slices binary, channel sums <= 1.
    void validate() const;

private:
    VolumeMeta meta_;
    std::size_t channels_ = 1;
    std::vector<float> labels_;
    std::vector<SliceOrigin> origins_;
};

// Per-slice feature grid, [H',W',C] row-major.
struct FeatureMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::size_t stride = 1;
    std::vector<float> data;

    float at(std::size_t y, std::size_t x, std::size_t c) const {
        return data[(y * width + x) * channels + c];
    }
    Tensor<float> tensor() const { return Tensor<float>({height, width, channels}, data); }
    void validate() const;
};

FeatureMap feature_map_from(const Tensor<float>& t, std::size_t stride);

enum class DatasetRole { train, test };

struct ManifestEntry {
    std::filesystem::path volume;
    std::optional<std::filesystem::path> mask;
};

struct DatasetManifest {
    DatasetRole role = DatasetRole::train;
    std::vector<ManifestEntry> entries;
};

// Relative paths resolve against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path, DatasetRole role);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// OSEG tensor files
//
//   "OSEG" | u32 version=1 | u32 dtype (0=f32, 1=u8) | u32 ndim | ndim x u32 dims | payload
//
// All integers little-endian, payload C-order.
// ---------------------------------------------------------------------------

enum class DType : std::uint32_t { f32 = 0, u8 = 1 };

inline constexpr std::uint32_t kOsegVersion = 1;

std::size_t oseg_header_size(std::size_t ndim);

struct RawTensor {
    DType dtype = DType::f32;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;

    std::size_t elements() const;
    std::vector<float> as_float() const;

    static RawTensor from_f32(std::vector<std::uint32_t> dims, std::span<const float> values);
    static RawTensor from_u8(std::vector<std::uint32_t> dims, std::span<const std::uint8_t> values);
};

std::vector<std::uint8_t> encode_oseg(const RawTensor& t);
RawTensor decode_oseg(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");

RawTensor read_oseg(const std::filesystem::path& path);
void write_oseg(const RawTensor& t, const std::filesystem::path& path);

// ndim=3 volumes (D,H,W); f32 or u8 accepted on load, f32 written.
Volume load_volume(const std::filesystem::path& path);
Volume volume_from_raw(const RawTensor& raw, std::string id);
void save_volume(const Volume& v, const std::filesystem::path& path);

// ndim=3 (L=1) or ndim=4 (D,H,W,L). Loaded slices are ground truth and must be binary.
Mask load_mask(const std::filesystem::path& path, const VolumeMeta& meta);
// Written as u8 when every value is 0 or 1, f32 otherwise.
void save_mask(const Mask& m, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Resampling of [H,W,C] grids
// ---------------------------------------------------------------------------

enum class Interp { bilinear, nearest };

std::vector<float> resize_slice(std::span<const float> src, std::size_t height, std::size_t width,
                                std::size_t channels, std::size_t target_h, std::size_t target_w,
                                Interp interp);

Volume resize_volume(const Volume& v, std::size_t target_h, std::size_t target_w);
Mask resize_mask(const Mask& m, std::size_t target_h, std::size_t target_w);

// Half-pixel source coordinate mapping shared with the differentiable resize.
struct ResampleTap {
    std::size_t lo = 0;
    std::size_t hi = 0;
    double frac = 0.0;  // weight of hi
};

std::vector<ResampleTap> bilinear_taps(std::size_t src, std::size_t dst);
std::size_t nearest_source(std::size_t i, std::size_t src, std::size_t dst);

}  // namespace oneseg
