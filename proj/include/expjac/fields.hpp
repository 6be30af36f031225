#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "expjac/errors.hpp"

namespace expjac {

using Coord = std::array<std::size_t, 3>;

enum class Precision : std::uint8_t { f32 = 0, f64 = 1 };

// Regular grid geometry. Axis 0 is H (index i), axis 1 is D (j),
// axis 2 is W (k). Storage is row-major: the last axis varies fastest.
//
// Extents of 1 are accepted so that interior sub-volumes of the smallest
// displacement fields can be represented; displacement fields themselves
// need at least 3 samples per axis (see validate()).
class GridShape {
public:
    GridShape() = default;
    explicit GridShape(std::vector<std::size_t> dims, std::vector<double> spacing = {});

    std::size_t rank() const { return dims_.size(); }
    std::size_t extent(std::size_t axis) const { return dims_[axis]; }
    const std::vector<std::size_t>& dims() const { return dims_; }
    const std::vector<double>& spacing() const { return spacing_; }
    std::size_t voxel_count() const { return count_; }
    std::size_t stride(std::size_t axis) const { return strides_[axis]; }

    std::size_t linear(const Coord& c) const;
    Coord coords(std::size_t linear) const;
    bool on_boundary(const Coord& c) const;
    // Chebyshev distance from the nearest face (0 on the boundary ring).
    std::size_t depth(const Coord& c) const;

    // Shape with every extent reduced by two: the interior after removing
    // the boundary ring. Spacing is preserved.
    GridShape interior() const;
    GridShape with_spacing(std::vector<double> spacing) const;

    bool same_extents(const GridShape& other) const { return dims_ == other.dims_; }
    bool operator==(const GridShape& other) const = default;

private:
    std::vector<std::size_t> dims_;
    std::vector<double> spacing_;
    std::vector<std::size_t> strides_;
    std::size_t count_ = 0;
};

std::string describe(const GridShape& shape);

// Calls fn(offset, stride, length) once for every 1-D line of the grid that
// runs along `axis`.
template <typename Fn>
void for_each_line(const GridShape& shape, std::size_t axis, Fn&& fn)
{
    const std::size_t n = shape.extent(axis);
    const std::size_t stride = shape.stride(axis);
    const std::size_t total = shape.voxel_count();
    const std::size_t block = n * stride;
    for (std::size_t outer = 0; outer < total; outer += block) {
        for (std::size_t inner = 0; inner < stride; ++inner) {
            fn(outer + inner, stride, n);
        }
    }
}

class ScalarVolume {
public:
    ScalarVolume() = default;
    explicit ScalarVolume(GridShape shape, double fill = 0.0);
    ScalarVolume(GridShape shape, std::vector<double> values);

    const GridShape& shape() const { return shape_; }
    std::size_t size() const { return values_.size(); }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& at(const Coord& c) { return values_[shape_.linear(c)]; }
    double at(const Coord& c) const { return values_[shape_.linear(c)]; }

private:
    GridShape shape_;
    std::vector<double> values_;
};

class LabelVolume {
public:
    LabelVolume() = default;
    LabelVolume(GridShape shape, std::vector<std::int32_t> labels, std::vector<std::int32_t> structures);

    const GridShape& shape() const { return shape_; }
    std::span<const std::int32_t> labels() const { return labels_; }
    std::span<std::int32_t> labels() { return labels_; }
    const std::vector<std::int32_t>& structures() const { return structures_; }
    std::int32_t operator[](std::size_t i) const { return labels_[i]; }
    bool has_structure(std::int32_t id) const;

private:
    GridShape shape_;
    std::vector<std::int32_t> labels_;
    std::vector<std::int32_t> structures_;
};

// Dense displacement field: one component volume per grid axis.
//
// Values are held in double precision. A field tagged f32 keeps every value
// rounded to the nearest float so that writing it out loses nothing.
class DisplacementField {
public:
    DisplacementField() = default;
    explicit DisplacementField(GridShape shape, Precision precision = Precision::f64, bool zero_boundary = false);
    DisplacementField(GridShape shape, std::vector<std::vector<double>> components,
                      Precision precision = Precision::f64, bool zero_boundary = false);

    const GridShape& shape() const { return shape_; }
    std::size_t rank() const { return components_.size(); }
    Precision precision() const { return precision_; }
    bool zero_boundary() const { return zero_boundary_; }
    void set_zero_boundary(bool flag) { zero_boundary_ = flag; }

    std::span<double> component(std::size_t axis) { return components_[axis]; }
    std::span<const double> component(std::size_t axis) const { return components_[axis]; }
    ScalarVolume component_volume(std::size_t axis) const;
    void set_component(std::size_t axis, const ScalarVolume& volume);

    // Re-rounds every value to float when the field is tagged f32.
    void apply_precision();
    DisplacementField with_precision(Precision precision) const;

    bool operator==(const DisplacementField& other) const = default;

private:
    GridShape shape_;
    std::vector<std::vector<double>> components_;
    Precision precision_ = Precision::f64;
    bool zero_boundary_ = false;
};

// Per-voxel d x d matrix field. Row r of the matrix at a voxel holds the
// gradient of component r, so entry (r, c) is d(phi_r)/d(x_c).
class JacobianField {
public:
    JacobianField() = default;
    JacobianField(GridShape shape, std::size_t dim);

    const GridShape& shape() const { return shape_; }
    std::size_t dim() const { return dim_; }
    std::size_t voxel_count() const { return shape_.voxel_count(); }

    double& at(std::size_t voxel, std::size_t r, std::size_t c) { return data_[(voxel * dim_ + r) * dim_ + c]; }
    double at(std::size_t voxel, std::size_t r, std::size_t c) const { return data_[(voxel * dim_ + r) * dim_ + c]; }
    std::span<double> matrix(std::size_t voxel) { return {data_.data() + voxel * dim_ * dim_, dim_ * dim_}; }
    std::span<const double> matrix(std::size_t voxel) const { return {data_.data() + voxel * dim_ * dim_, dim_ * dim_}; }
    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    // Entry (r, c) across every voxel as a scalar volume.
    ScalarVolume entry_volume(std::size_t r, std::size_t c) const;
    void set_entry_volume(std::size_t r, std::size_t c, const ScalarVolume& volume);

private:
    GridShape shape_;
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

struct Violation {
    std::string what;
    std::optional<Coord> voxel;
    std::optional<std::size_t> component;
};

std::vector<Violation> validate(const DisplacementField& field);
std::vector<Violation> validate(const JacobianField& field);

// DFLD binary format (little-endian):
//   "DFLD" | u8 rank | u8 components | u8 precision (0=f32, 1=f64) | u8 flags
//   | u32 extent[rank] | f64 spacing[rank] | component volumes, row-major.
// Flags bit 0 records the zero-on-boundary contract.
constexpr std::size_t dfld_header_size(std::size_t rank) { return 8 + 4 * rank + 8 * rank; }

DisplacementField read_field(const std::filesystem::path& path);
void write_field(const DisplacementField& field, const std::filesystem::path& path);

// Single-component DFLD files carry images and label maps.
ScalarVolume read_volume(const std::filesystem::path& path);
void write_volume(const ScalarVolume& volume, const std::filesystem::path& path, Precision precision = Precision::f64);
LabelVolume read_labels(const std::filesystem::path& path);
void write_labels(const LabelVolume& labels, const std::filesystem::path& path);

// Optional JSON provenance sidecar written next to a DFLD file ("<path>.json").
void write_sidecar(const std::filesystem::path& field_path, const nlohmann::json& provenance);
std::optional<nlohmann::json> read_sidecar(const std::filesystem::path& field_path);

} // namespace expjac
