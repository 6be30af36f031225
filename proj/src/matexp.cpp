#include "expjac/matexp.hpp"

#include <cassert>
#include <cmath>

namespace expjac {

namespace {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what)
{
    if (!m.allFinite()) {
        throw Error(ErrorCode::NonFiniteInput, std::string(what) + " has non-finite entries");
    }
}

template <int N>
Mat<N> load(std::span<const double> entries)
{
    Mat<N> m;
    for (int r = 0; r < N; ++r) {
        for (int c = 0; c < N; ++c) {
            m(r, c) = entries[static_cast<std::size_t>(r * N + c)];
        }
    }
    return m;
}

template <int N>
void store(const Mat<N>& m, std::span<double> entries)
{
    for (int r = 0; r < N; ++r) {
        for (int c = 0; c < N; ++c) {
            entries[static_cast<std::size_t>(r * N + c)] = m(r, c);
        }
    }
}

template <int N>
Mat<N> taylor(const Mat<N>& b, const MatExpConfig& cfg)
{
    const double nb = norm1(b);
    Mat<N> sum = Mat<N>::Identity();
    Mat<N> term = Mat<N>::Identity();
    for (int k = 1; k < cfg.max_terms; ++k) {
        term = (term * b) / static_cast<double>(k);
        sum += term;
        // Remaining terms are bounded by a geometric series with ratio
        // ||B|| / (k + 2) once ||B|| < k + 2.
        const double ratio = nb / static_cast<double>(k + 2);
        if (ratio < 1.0) {
            const double tail = norm1(term) * (nb / static_cast<double>(k + 1)) / (1.0 - ratio);
            if (tail <= cfg.tol * norm1(sum)) {
                break;
            }
        }
    }
    return sum;
}

template <int N>
void run_field(const JacobianField& field, JacobianField& out, auto&& per_voxel)
{
    for (std::size_t q = 0; q < field.voxel_count(); ++q) {
        const Mat<N> a = load<N>(field.matrix(q));
        if (!a.allFinite()) {
            const Coord c = field.shape().coords(q);
            throw Error(ErrorCode::NonFiniteInput, "non-finite Jacobian at voxel (" + std::to_string(c[0]) + "," +
                                                       std::to_string(c[1]) + "," + std::to_string(c[2]) + ")");
        }
        store<N>(per_voxel(a, q), out.matrix(q));
    }
}

} // namespace

MatExpConfig MatExpConfig::for_precision(Precision precision)
{
    MatExpConfig cfg;
    cfg.tol = precision == Precision::f32 ? 1e-7 : 1e-14;
    return cfg;
}

void MatExpConfig::check() const
{
    if (max_terms < 2) {
        throw Error(ErrorCode::InvalidArgument, "max_terms must be at least 2");
    }
    if (!(tol > 0.0 && tol < 1e-3)) {
        throw Error(ErrorCode::InvalidArgument, "tol must lie in (0, 1e-3)");
    }
}

int squarings_for(double norm)
{
    if (!(norm > 1.0)) {
        return 0;
    }
    return static_cast<int>(std::ceil(std::log2(norm)));
}

template <int N>
Mat<N> expm(const Mat<N>& a, const MatExpConfig& cfg)
{
    cfg.check();
    require_finite(a, "expm input");
    if (cfg.method == MatExpConfig::Method::taylor_series) {
        return taylor<N>(a, cfg);
    }
    const int s = squarings_for(norm1(a));
    Mat<N> result = taylor<N>(a / std::ldexp(1.0, s), cfg);
    for (int i = 0; i < s; ++i) {
        result = result * result;
    }
    return result;
}

template <int N>
Mat<N> expm_frechet(const Mat<N>& a, const Mat<N>& direction, const MatExpConfig& cfg)
{
    require_finite(a, "expm_frechet input");
    require_finite(direction, "expm_frechet direction");
    const double scale = norm1(direction);
    if (scale == 0.0) {
        return Mat<N>::Zero();
    }
    // The derivative is linear in the direction, so normalise it to keep the
    // augmented matrix from picking up extra squarings.
    Mat<2 * N> block = Mat<2 * N>::Zero();
    block.template topLeftCorner<N, N>() = a;
    block.template bottomRightCorner<N, N>() = a;
    block.template topRightCorner<N, N>() = direction / scale;
    const Mat<2 * N> e = expm<2 * N>(block, cfg);
    return scale * e.template topRightCorner<N, N>();
}

template <int N>
Mat<N> expm_vjp(const Mat<N>& a, const Mat<N>& upstream, const MatExpConfig& cfg)
{
    return expm_frechet<N>(a.transpose(), upstream, cfg);
}

template Mat<2> expm<2>(const Mat<2>&, const MatExpConfig&);
template Mat<3> expm<3>(const Mat<3>&, const MatExpConfig&);
template Mat<4> expm<4>(const Mat<4>&, const MatExpConfig&);
template Mat<6> expm<6>(const Mat<6>&, const MatExpConfig&);
template Mat<2> expm_frechet<2>(const Mat<2>&, const Mat<2>&, const MatExpConfig&);
template Mat<3> expm_frechet<3>(const Mat<3>&, const Mat<3>&, const MatExpConfig&);
template Mat<2> expm_vjp<2>(const Mat<2>&, const Mat<2>&, const MatExpConfig&);
template Mat<3> expm_vjp<3>(const Mat<3>&, const Mat<3>&, const MatExpConfig&);

Eigen::MatrixXd expm(const Eigen::MatrixXd& a, const MatExpConfig& cfg)
{
    if (a.rows() != a.cols()) {
        throw Error(ErrorCode::InvalidArgument, "expm needs a square matrix");
    }
    switch (a.rows()) {
    case 2: return expm<2>(Mat<2>(a), cfg);
    case 3: return expm<3>(Mat<3>(a), cfg);
    default: throw Error(ErrorCode::InvalidArgument, "expm supports 2x2 and 3x3 matrices");
    }
}

Eigen::MatrixXd expm_vjp(const Eigen::MatrixXd& a, const Eigen::MatrixXd& upstream, const MatExpConfig& cfg)
{
    if (a.rows() != a.cols() || upstream.rows() != a.rows() || upstream.cols() != a.cols()) {
        throw Error(ErrorCode::InvalidArgument, "expm_vjp needs square matrices of equal size");
    }
    switch (a.rows()) {
    case 2: return expm_vjp<2>(Mat<2>(a), Mat<2>(upstream), cfg);
    case 3: return expm_vjp<3>(Mat<3>(a), Mat<3>(upstream), cfg);
    default: throw Error(ErrorCode::InvalidArgument, "expm_vjp supports 2x2 and 3x3 matrices");
    }
}

JacobianField expm_field(const JacobianField& field, const MatExpConfig& cfg)
{
    cfg.check();
    JacobianField out(field.shape(), field.dim());
    auto body = [&]<int N>() {
        run_field<N>(field, out, [&](const Mat<N>& a, std::size_t) {
            Mat<N> e = expm<N>(a, cfg);
            assert(e.determinant() > 0.0);
            return e;
        });
    };
    if (field.dim() == 2) {
        body.template operator()<2>();
    } else if (field.dim() == 3) {
        body.template operator()<3>();
    } else {
        throw Error(ErrorCode::InvalidArgument, "expm_field supports 2x2 and 3x3 matrix fields");
    }
    return out;
}

JacobianField expm_field_vjp(const JacobianField& field, const JacobianField& upstream, const MatExpConfig& cfg)
{
    cfg.check();
    if (!field.shape().same_extents(upstream.shape()) || field.dim() != upstream.dim()) {
        throw Error(ErrorCode::ShapeMismatch, "expm_field_vjp cotangent shape differs from input");
    }
    JacobianField out(field.shape(), field.dim());
    auto body = [&]<int N>() {
        run_field<N>(field, out, [&](const Mat<N>& a, std::size_t q) {
            return expm_vjp<N>(a, load<N>(upstream.matrix(q)), cfg);
        });
    };
    if (field.dim() == 2) {
        body.template operator()<2>();
    } else if (field.dim() == 3) {
        body.template operator()<3>();
    } else {
        throw Error(ErrorCode::InvalidArgument, "expm_field_vjp supports 2x2 and 3x3 matrix fields");
    }
    return out;
}

} // namespace expjac
