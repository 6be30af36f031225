#include "expjac/fields.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace expjac {

static_assert(std::endian::native == std::endian::little, "DFLD I/O assumes a little-endian host");

GridShape::GridShape(std::vector<std::size_t> dims, std::vector<double> spacing)
    : dims_(std::move(dims)), spacing_(std::move(spacing))
{
    if (dims_.size() != 2 && dims_.size() != 3) {
        throw Error(ErrorCode::InvalidArgument, "grid rank must be 2 or 3, got " + std::to_string(dims_.size()));
    }
    if (spacing_.empty()) {
        spacing_.assign(dims_.size(), 1.0);
    }
    if (spacing_.size() != dims_.size()) {
        throw Error(ErrorCode::InvalidArgument, "spacing length does not match grid rank");
    }
    for (std::size_t a = 0; a < dims_.size(); ++a) {
        if (dims_[a] == 0) {
            throw Error(ErrorCode::InvalidArgument, "grid extent must be positive on axis " + std::to_string(a));
        }
        if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a])) {
            throw Error(ErrorCode::InvalidArgument, "grid spacing must be positive on axis " + std::to_string(a));
        }
    }
    strides_.assign(dims_.size(), 1);
    for (std::size_t a = dims_.size() - 1; a > 0; --a) {
        strides_[a - 1] = strides_[a] * dims_[a];
    }
    count_ = strides_[0] * dims_[0];
}

std::size_t GridShape::linear(const Coord& c) const
{
    std::size_t idx = 0;
    for (std::size_t a = 0; a < rank(); ++a) {
        idx += c[a] * strides_[a];
    }
    return idx;
}

Coord GridShape::coords(std::size_t linear) const
{
    Coord c{0, 0, 0};
    for (std::size_t a = 0; a < rank(); ++a) {
        c[a] = linear / strides_[a];
        linear -= c[a] * strides_[a];
    }
    return c;
}

bool GridShape::on_boundary(const Coord& c) const
{
    return depth(c) == 0;
}

std::size_t GridShape::depth(const Coord& c) const
{
    std::size_t d = static_cast<std::size_t>(-1);
    for (std::size_t a = 0; a < rank(); ++a) {
        d = std::min({d, c[a], dims_[a] - 1 - c[a]});
    }
    return d;
}

GridShape GridShape::interior() const
{
    std::vector<std::size_t> inner(dims_);
    for (auto& n : inner) {
        if (n < 3) {
            throw Error(ErrorCode::ShapeTooSmall, "grid " + describe(*this) + " has no interior");
        }
        n -= 2;
    }
    return GridShape(std::move(inner), spacing_);
}

GridShape GridShape::with_spacing(std::vector<double> spacing) const
{
    return GridShape(dims_, std::move(spacing));
}

std::string describe(const GridShape& shape)
{
    std::ostringstream os;
    for (std::size_t a = 0; a < shape.rank(); ++a) {
        os << (a ? "x" : "") << shape.extent(a);
    }
    return os.str();
}

ScalarVolume::ScalarVolume(GridShape shape, double fill)
    : shape_(std::move(shape)), values_(shape_.voxel_count(), fill)
{
}

ScalarVolume::ScalarVolume(GridShape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values))
{
    if (values_.size() != shape_.voxel_count()) {
        throw Error(ErrorCode::ShapeMismatch, "value buffer length does not match grid " + describe(shape_));
    }
}

LabelVolume::LabelVolume(GridShape shape, std::vector<std::int32_t> labels, std::vector<std::int32_t> structures)
    : shape_(std::move(shape)), labels_(std::move(labels)), structures_(std::move(structures))
{
    if (labels_.size() != shape_.voxel_count()) {
        throw Error(ErrorCode::ShapeMismatch, "label buffer length does not match grid " + describe(shape_));
    }
    std::sort(structures_.begin(), structures_.end());
    structures_.erase(std::unique(structures_.begin(), structures_.end()), structures_.end());
    for (const auto label : labels_) {
        if (label != 0 && !has_structure(label)) {
            throw Error(ErrorCode::UnknownStructure, "label " + std::to_string(label) + " is not a listed structure");
        }
    }
}

bool LabelVolume::has_structure(std::int32_t id) const
{
    return std::binary_search(structures_.begin(), structures_.end(), id);
}

DisplacementField::DisplacementField(GridShape shape, Precision precision, bool zero_boundary)
    : shape_(std::move(shape)), precision_(precision), zero_boundary_(zero_boundary)
{
    components_.assign(shape_.rank(), std::vector<double>(shape_.voxel_count(), 0.0));
}

DisplacementField::DisplacementField(GridShape shape, std::vector<std::vector<double>> components,
                                     Precision precision, bool zero_boundary)
    : shape_(std::move(shape)), components_(std::move(components)), precision_(precision),
      zero_boundary_(zero_boundary)
{
    if (components_.size() != shape_.rank()) {
        throw Error(ErrorCode::ShapeMismatch, "component count " + std::to_string(components_.size()) +
                                                  " does not match grid rank " + std::to_string(shape_.rank()));
    }
    for (const auto& comp : components_) {
        if (comp.size() != shape_.voxel_count()) {
            throw Error(ErrorCode::ShapeMismatch, "component length does not match grid " + describe(shape_));
        }
    }
    apply_precision();
}

ScalarVolume DisplacementField::component_volume(std::size_t axis) const
{
    return ScalarVolume(shape_, components_[axis]);
}

void DisplacementField::set_component(std::size_t axis, const ScalarVolume& volume)
{
    if (!volume.shape().same_extents(shape_)) {
        throw Error(ErrorCode::ShapeMismatch, "component volume shape differs from field shape");
    }
    std::copy(volume.values().begin(), volume.values().end(), components_[axis].begin());
    if (precision_ == Precision::f32) {
        for (auto& v : components_[axis]) {
            v = static_cast<double>(static_cast<float>(v));
        }
    }
}

void DisplacementField::apply_precision()
{
    if (precision_ != Precision::f32) {
        return;
    }
    for (auto& comp : components_) {
        for (auto& v : comp) {
            v = static_cast<double>(static_cast<float>(v));
        }
    }
}

DisplacementField DisplacementField::with_precision(Precision precision) const
{
    DisplacementField out(*this);
    out.precision_ = precision;
    out.apply_precision();
    return out;
}

JacobianField::JacobianField(GridShape shape, std::size_t dim)
    : shape_(std::move(shape)), dim_(dim), data_(shape_.voxel_count() * dim * dim, 0.0)
{
    if (dim != shape_.rank()) {
        throw Error(ErrorCode::ShapeMismatch, "matrix size must match grid rank");
    }
}

ScalarVolume JacobianField::entry_volume(std::size_t r, std::size_t c) const
{
    ScalarVolume out(shape_);
    for (std::size_t q = 0; q < voxel_count(); ++q) {
        out[q] = at(q, r, c);
    }
    return out;
}

void JacobianField::set_entry_volume(std::size_t r, std::size_t c, const ScalarVolume& volume)
{
    if (!volume.shape().same_extents(shape_)) {
        throw Error(ErrorCode::ShapeMismatch, "entry volume shape differs from field shape");
    }
    for (std::size_t q = 0; q < voxel_count(); ++q) {
        at(q, r, c) = volume[q];
    }
}

std::vector<Violation> validate(const DisplacementField& field)
{
    std::vector<Violation> out;
    const auto& shape = field.shape();
    if (field.rank() != shape.rank()) {
        out.push_back({"component count does not equal grid rank", std::nullopt, std::nullopt});
        return out;
    }
    for (std::size_t a = 0; a < shape.rank(); ++a) {
        if (shape.extent(a) < 3) {
            out.push_back({"extent below 3 on axis " + std::to_string(a), std::nullopt, a});
        }
    }
    for (std::size_t t = 0; t < field.rank(); ++t) {
        const auto comp = field.component(t);
        for (std::size_t q = 0; q < comp.size(); ++q) {
            const Coord c = shape.coords(q);
            if (!std::isfinite(comp[q])) {
                out.push_back({"non-finite value", c, t});
            } else if (field.zero_boundary() && shape.on_boundary(c) && comp[q] != 0.0) {
                out.push_back({"nonzero value on boundary of a zero-boundary field", c, t});
            }
        }
    }
    return out;
}

std::vector<Violation> validate(const JacobianField& field)
{
    std::vector<Violation> out;
    if (field.dim() != field.shape().rank()) {
        out.push_back({"matrix size does not equal grid rank", std::nullopt, std::nullopt});
    }
    const std::size_t per = field.dim() * field.dim();
    for (std::size_t q = 0; q < field.voxel_count(); ++q) {
        const auto m = field.matrix(q);
        for (std::size_t e = 0; e < per; ++e) {
            if (!std::isfinite(m[e])) {
                out.push_back({"non-finite matrix entry", field.shape().coords(q), e});
                break;
            }
        }
    }
    return out;
}

namespace {

struct Header {
    std::uint8_t rank = 0;
    std::uint8_t components = 0;
    std::uint8_t precision = 0;
    std::uint8_t flags = 0;
    std::vector<std::size_t> dims;
    std::vector<double> spacing;
};

template <typename T>
void put(std::string& buf, T value)
{
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    buf.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& pos)
{
    T value;
    std::memcpy(&value, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

std::string slurp(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spill(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
        throw Error(ErrorCode::IoFailure, "short write to " + path.string());
    }
}

std::string encode_header(const GridShape& shape, std::size_t components, Precision precision, std::uint8_t flags)
{
    std::string buf;
    buf.reserve(dfld_header_size(shape.rank()));
    buf.append("DFLD", 4);
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(shape.rank()));
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(components));
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(precision));
    put<std::uint8_t>(buf, flags);
    for (std::size_t a = 0; a < shape.rank(); ++a) {
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(shape.extent(a)));
    }
    for (std::size_t a = 0; a < shape.rank(); ++a) {
        put<double>(buf, shape.spacing()[a]);
    }
    return buf;
}

void encode_values(std::string& buf, std::span<const double> values, Precision precision)
{
    for (const double v : values) {
        if (precision == Precision::f32) {
            put<float>(buf, static_cast<float>(v));
        } else {
            put<double>(buf, v);
        }
    }
}

Header decode_header(const std::string& bytes, std::size_t& pos)
{
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "DFLD", 4) != 0) {
        throw Error(ErrorCode::BadMagic, "missing DFLD magic");
    }
    if (bytes.size() < 8) {
        throw Error(ErrorCode::TruncatedPayload, "header ends after magic");
    }
    Header h;
    pos = 4;
    h.rank = take<std::uint8_t>(bytes, pos);
    h.components = take<std::uint8_t>(bytes, pos);
    h.precision = take<std::uint8_t>(bytes, pos);
    h.flags = take<std::uint8_t>(bytes, pos);
    if (h.rank != 2 && h.rank != 3) {
        throw Error(ErrorCode::ShapeMismatch, "unsupported rank " + std::to_string(h.rank));
    }
    if (h.precision > 1) {
        throw Error(ErrorCode::UnsupportedPrecision, "precision code " + std::to_string(h.precision));
    }
    if (bytes.size() < dfld_header_size(h.rank)) {
        throw Error(ErrorCode::TruncatedPayload, "header shorter than declared rank requires");
    }
    for (std::size_t a = 0; a < h.rank; ++a) {
        h.dims.push_back(take<std::uint32_t>(bytes, pos));
    }
    for (std::size_t a = 0; a < h.rank; ++a) {
        h.spacing.push_back(take<double>(bytes, pos));
    }
    return h;
}

std::vector<std::vector<double>> decode_payload(const std::string& bytes, std::size_t pos, const Header& h,
                                                std::size_t voxels)
{
    const std::size_t width = h.precision == 0 ? 4 : 8;
    const std::size_t need = static_cast<std::size_t>(h.components) * voxels * width;
    if (bytes.size() - pos < need) {
        throw Error(ErrorCode::TruncatedPayload, "payload holds " + std::to_string(bytes.size() - pos) +
                                                     " bytes, header requires " + std::to_string(need));
    }
    if (bytes.size() - pos > need) {
        throw Error(ErrorCode::ShapeMismatch, "payload longer than header dims imply");
    }
    std::vector<std::vector<double>> comps(h.components, std::vector<double>(voxels));
    for (auto& comp : comps) {
        for (auto& v : comp) {
            v = h.precision == 0 ? static_cast<double>(take<float>(bytes, pos)) : take<double>(bytes, pos);
        }
    }
    return comps;
}

GridShape header_shape(const Header& h)
{
    try {
        return GridShape(h.dims, h.spacing);
    } catch (const Error& e) {
        throw Error(ErrorCode::ShapeMismatch, e.what());
    }
}

} // namespace

DisplacementField read_field(const std::filesystem::path& path)
{
    const std::string bytes = slurp(path);
    std::size_t pos = 0;
    const Header h = decode_header(bytes, pos);
    if (h.components != h.rank) {
        throw Error(ErrorCode::ShapeMismatch, "component count " + std::to_string(h.components) +
                                                  " does not match rank " + std::to_string(h.rank));
    }
    GridShape shape = header_shape(h);
    auto comps = decode_payload(bytes, pos, h, shape.voxel_count());
    return DisplacementField(std::move(shape), std::move(comps), static_cast<Precision>(h.precision),
                             (h.flags & 1u) != 0);
}

void write_field(const DisplacementField& field, const std::filesystem::path& path)
{
    std::string buf = encode_header(field.shape(), field.rank(), field.precision(), field.zero_boundary() ? 1 : 0);
    const std::size_t width = field.precision() == Precision::f32 ? 4 : 8;
    buf.reserve(buf.size() + field.rank() * field.shape().voxel_count() * width);
    for (std::size_t t = 0; t < field.rank(); ++t) {
        encode_values(buf, field.component(t), field.precision());
    }
    spill(path, buf);
}

ScalarVolume read_volume(const std::filesystem::path& path)
{
    const std::string bytes = slurp(path);
    std::size_t pos = 0;
    const Header h = decode_header(bytes, pos);
    if (h.components != 1) {
        throw Error(ErrorCode::ShapeMismatch, "expected a single-component volume");
    }
    GridShape shape = header_shape(h);
    auto comps = decode_payload(bytes, pos, h, shape.voxel_count());
    return ScalarVolume(std::move(shape), std::move(comps[0]));
}

void write_volume(const ScalarVolume& volume, const std::filesystem::path& path, Precision precision)
{
    std::string buf = encode_header(volume.shape(), 1, precision, 0);
    encode_values(buf, volume.values(), precision);
    spill(path, buf);
}

LabelVolume read_labels(const std::filesystem::path& path)
{
    const ScalarVolume raw = read_volume(path);
    std::vector<std::int32_t> labels(raw.size());
    std::vector<std::int32_t> ids;
    for (std::size_t q = 0; q < raw.size(); ++q) {
        const double v = raw[q];
        if (v != std::round(v) || !std::isfinite(v)) {
            throw Error(ErrorCode::InvalidArgument, "label file holds a non-integer value");
        }
        labels[q] = static_cast<std::int32_t>(v);
        if (labels[q] != 0) {
            ids.push_back(labels[q]);
        }
    }
    return LabelVolume(raw.shape(), std::move(labels), std::move(ids));
}

void write_labels(const LabelVolume& labels, const std::filesystem::path& path)
{
    std::vector<double> values(labels.labels().begin(), labels.labels().end());
    write_volume(ScalarVolume(labels.shape(), std::move(values)), path, Precision::f64);
}

void write_sidecar(const std::filesystem::path& field_path, const nlohmann::json& provenance)
{
    spill(field_path.string() + ".json", provenance.dump(2) + "\n");
}

std::optional<nlohmann::json> read_sidecar(const std::filesystem::path& field_path)
{
    const std::filesystem::path side = field_path.string() + ".json";
    if (!std::filesystem::exists(side)) {
        return std::nullopt;
    }
    return nlohmann::json::parse(slurp(side));
}

} // namespace expjac
