#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "error.hpp"
#include "expression.hpp"

namespace brokenray {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

//---------------------------------------------------------------------------//
// Faces
//---------------------------------------------------------------------------//
/*!
 * Set of boundary hypersurfaces a point lies on.
 *
 * Bit j of `lower` means x_j = 0; bit j of `upper` means x_j = x_max_j, which
 * is only a face when the chart declares a reflecting upper wall there. The
 * empty set is the interior.
 */
struct FaceId
{
    std::uint32_t lower = 0;
    std::uint32_t upper = 0;

    bool empty() const noexcept { return (lower | upper) == 0; }
    int codim() const noexcept { return std::popcount(lower | upper); }
    bool contains(int j) const noexcept { return ((lower | upper) >> j) & 1u; }

    //! +1 if the inward direction is increasing x_j, -1 for an upper wall
    int side(int j) const noexcept { return ((upper >> j) & 1u) ? -1 : 1; }

    void add_lower(int j) noexcept { lower |= (1u << j); }
    void add_upper(int j) noexcept { upper |= (1u << j); }

    std::vector<int> indices() const
    {
        std::vector<int> out;
        for (int j = 0; j < 32; ++j)
            if (contains(j))
                out.push_back(j);
        return out;
    }

    bool operator==(FaceId const&) const = default;

    //! Text form used in output records: "-" for interior, else "1,2u"
    std::string to_string() const
    {
        if (empty())
            return "-";
        std::string s;
        for (int j : indices())
        {
            if (!s.empty())
                s += ',';
            s += std::to_string(j + 1);
            if (side(j) < 0)
                s += 'u';
        }
        return s;
    }

    static FaceId from_string(std::string const& s)
    {
        FaceId f;
        if (s == "-")
            return f;
        std::size_t pos = 0;
        while (pos < s.size())
        {
            std::size_t end = s.find(',', pos);
            if (end == std::string::npos)
                end = s.size();
            std::string tok = s.substr(pos, end - pos);
            bool up = !tok.empty() && tok.back() == 'u';
            if (up)
                tok.pop_back();
            int j = std::stoi(tok) - 1;
            if (j < 0 || j >= 32)
                throw Error(ErrorCode::ParseError, "bad face index in '" + s + "'");
            if (up)
                f.add_upper(j);
            else
                f.add_lower(j);
            pos = end + 1;
        }
        return f;
    }
};

//---------------------------------------------------------------------------//
// Phase-space points
//---------------------------------------------------------------------------//
//! Point of T*X in chart coordinates (x, y, t, ξ, ζ, τ).
struct CotangentPoint
{
    Vec x;
    Vec y;
    double t = 0.0;
    Vec xi;
    Vec zeta;
    double tau = 1.0;
};

//! Point of the b-cotangent bundle: (x, y, t, σ, ζ, τ).
struct BCotangentPoint
{
    Vec x;
    Vec y;
    double t = 0.0;
    Vec sigma;
    Vec zeta;
    double tau = 1.0;
};

/*!
 * Image of a cotangent point under the compression map.
 *
 * Over a face the conormal components of ξ are forgotten; `x_free` and
 * `xi_free` hold the components whose index is not in `face`, in increasing
 * index order.
 */
struct CompressedPoint
{
    FaceId face;
    Vec x_free;
    Vec y;
    double t = 0.0;
    Vec xi_free;
    Vec zeta;
    double tau = 1.0;

    int k() const noexcept { return face.codim() + static_cast<int>(x_free.size()); }
    int l() const noexcept { return static_cast<int>(y.size()); }
};

/*!
 * Packing of a cotangent point into one flat state vector
 * [x(k), y(l), t, ξ(k), ζ(l), τ] as used by the integrators.
 */
struct PhaseLayout
{
    int k = 0;
    int l = 0;

    int size() const noexcept { return 2 * (k + l + 1); }
    int half() const noexcept { return k + l + 1; }
    int x(int j) const noexcept { return j; }
    int y(int i) const noexcept { return k + i; }
    int t() const noexcept { return k + l; }
    int xi(int j) const noexcept { return half() + j; }
    int zeta(int i) const noexcept { return half() + k + i; }
    int tau() const noexcept { return 2 * (k + l) + 1; }

    Vec pack(CotangentPoint const& q) const
    {
        Vec z(size());
        z.segment(0, k) = q.x;
        z.segment(k, l) = q.y;
        z[t()] = q.t;
        z.segment(half(), k) = q.xi;
        z.segment(half() + k, l) = q.zeta;
        z[tau()] = q.tau;
        return z;
    }

    CotangentPoint unpack(Vec const& z) const
    {
        CotangentPoint q;
        q.x = z.segment(0, k);
        q.y = z.segment(k, l);
        q.t = z[t()];
        q.xi = z.segment(half(), k);
        q.zeta = z.segment(half() + k, l);
        q.tau = z[tau()];
        return q;
    }
};

//---------------------------------------------------------------------------//
// Chart
//---------------------------------------------------------------------------//
struct Domain
{
    Vec x_max;  // k
    Vec y_min;  // l
    Vec y_max;  // l
    double t_min = -1.0;
    double t_max = 1.0;
};

//! Coefficient fields of the dual metric, row-major, as expressions in (x, y).
struct MetricCoeffs
{
    std::vector<Expression> A;  // k*k
    std::vector<Expression> B;  // l*l
    std::vector<Expression> C;  // k*l
};

struct MetricAt
{
    Mat A;
    Mat B;
    Mat C;
};

/*!
 * Single coordinate chart x ∈ [0, x_max]^k, y ∈ [y_min, y_max]^l, t ∈ [t_min, t_max]
 * carrying the dual metric g = ξ·Aξ + 2ξ·Cζ + ζ·Bζ.
 *
 * Construction validates the chart by sampling: A and B symmetric positive
 * definite, and C(0, y) = 0.
 */
class Chart
{
  public:
    struct Validation
    {
        int samples = 10000;
        std::uint64_t seed = 0x5eed;
    };

    Chart() = default;

    Chart(std::string name, int k, int l, Domain domain, MetricCoeffs coeffs,
          std::vector<bool> upper_walls = {})
        : Chart(std::move(name), k, l, std::move(domain), std::move(coeffs), std::move(upper_walls),
                Validation{})
    {
    }

    Chart(std::string name, int k, int l, Domain domain, MetricCoeffs coeffs,
          std::vector<bool> upper_walls, Validation validation)
        : name_(std::move(name)), k_(k), l_(l), domain_(std::move(domain)), coeffs_(std::move(coeffs)),
          upper_walls_(std::move(upper_walls))
    {
        if (upper_walls_.empty())
            upper_walls_.assign(static_cast<std::size_t>(k_), false);
        check_shape();
        validate(validation);
    }

    //! Flat chart: A = I, B = I, C = 0.
    static Chart flat(std::string name, int k, int l, Domain domain, std::vector<bool> upper_walls = {})
    {
        MetricCoeffs c;
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                c.A.emplace_back(i == j ? 1.0 : 0.0);
        for (int i = 0; i < l; ++i)
            for (int j = 0; j < l; ++j)
                c.B.emplace_back(i == j ? 1.0 : 0.0);
        for (int i = 0; i < k * l; ++i)
            c.C.emplace_back(0.0);
        return Chart(std::move(name), k, l, std::move(domain), std::move(c), std::move(upper_walls));
    }

    static std::vector<std::string> variable_names(int k, int l)
    {
        std::vector<std::string> v;
        for (int j = 0; j < k; ++j)
            v.push_back("x" + std::to_string(j + 1));
        for (int i = 0; i < l; ++i)
            v.push_back("y" + std::to_string(i + 1));
        return v;
    }

    std::string const& name() const noexcept { return name_; }
    int k() const noexcept { return k_; }
    int l() const noexcept { return l_; }
    PhaseLayout layout() const noexcept { return {k_, l_}; }
    Domain const& domain() const noexcept { return domain_; }
    MetricCoeffs const& coeffs() const noexcept { return coeffs_; }
    bool upper_wall(int j) const { return upper_walls_[static_cast<std::size_t>(j)]; }
    std::vector<bool> const& upper_walls() const noexcept { return upper_walls_; }

    //! Largest x extent; 1 when k = 0
    double x_extent() const
    {
        return k_ == 0 ? 1.0 : domain_.x_max.maxCoeff();
    }

    //! Face-membership tolerance for compression
    double tol_face() const { return 1e-9 * x_extent(); }

    //! Smallest eigenvalue of A and B seen during validation
    double lambda_min() const noexcept { return lambda_min_; }

    /*!
     * Evaluate coefficient matrices at `xy` = (x, y) without domain checks.
     * Outputs are row-major arrays of sizes k*k, l*l, k*l.
     */
    template <class T>
    void metric(std::span<T const> xy, T* A, T* B, T* C) const
    {
        for (std::size_t i = 0; i < coeffs_.A.size(); ++i)
            A[i] = coeffs_.A[i].eval(xy);
        for (std::size_t i = 0; i < coeffs_.B.size(); ++i)
            B[i] = coeffs_.B[i].eval(xy);
        for (std::size_t i = 0; i < coeffs_.C.size(); ++i)
            C[i] = coeffs_.C[i].eval(xy);
    }

    MetricAt metric_at(Vec const& x, Vec const& y) const
    {
        std::vector<double> xy(static_cast<std::size_t>(k_ + l_));
        for (int j = 0; j < k_; ++j)
            xy[static_cast<std::size_t>(j)] = x[j];
        for (int i = 0; i < l_; ++i)
            xy[static_cast<std::size_t>(k_ + i)] = y[i];
        MetricAt m{Mat(k_, k_), Mat(l_, l_), Mat(k_, l_)};
        std::vector<double> a(static_cast<std::size_t>(k_ * k_)), b(static_cast<std::size_t>(l_ * l_)),
            c(static_cast<std::size_t>(k_ * l_));
        metric<double>(std::span<double const>(xy), a.data(), b.data(), c.data());
        for (int i = 0; i < k_; ++i)
            for (int j = 0; j < k_; ++j)
                m.A(i, j) = a[static_cast<std::size_t>(i * k_ + j)];
        for (int i = 0; i < l_; ++i)
            for (int j = 0; j < l_; ++j)
                m.B(i, j) = b[static_cast<std::size_t>(i * l_ + j)];
        for (int i = 0; i < k_; ++i)
            for (int j = 0; j < l_; ++j)
                m.C(i, j) = c[static_cast<std::size_t>(i * l_ + j)];
        return m;
    }

    //! Base point (x, y) inside the box, widened by tol_face
    bool contains_base(Vec const& x, Vec const& y) const
    {
        double tol = tol_face();
        for (int j = 0; j < k_; ++j)
            if (!(x[j] >= -tol && x[j] <= domain_.x_max[j] + tol))
                return false;
        for (int i = 0; i < l_; ++i)
            if (!(y[i] >= domain_.y_min[i] - tol && y[i] <= domain_.y_max[i] + tol))
                return false;
        return true;
    }

    bool same_chart(Chart const& other) const noexcept
    {
        return name_ == other.name_ && k_ == other.k_ && l_ == other.l_;
    }

  private:
    std::string name_;
    int k_ = 0;
    int l_ = 0;
    Domain domain_;
    MetricCoeffs coeffs_;
    std::vector<bool> upper_walls_;
    double lambda_min_ = 0.0;

    void check_shape() const
    {
        if (k_ < 0 || l_ < 0 || k_ + l_ < 1)
            throw Error(ErrorCode::InvalidChart, "need k + l >= 1");
        if (k_ > 32)
            throw Error(ErrorCode::InvalidChart, "at most 32 boundary coordinates");
        if (domain_.x_max.size() != k_ || domain_.y_min.size() != l_ || domain_.y_max.size() != l_)
            throw Error(ErrorCode::InvalidChart, "domain box dimensions do not match (k, l)");
        if (static_cast<int>(upper_walls_.size()) != k_)
            throw Error(ErrorCode::InvalidChart, "upper_walls must have k entries");
        for (int j = 0; j < k_; ++j)
            if (!std::isfinite(domain_.x_max[j]) || !(domain_.x_max[j] > 0))
                throw Error(ErrorCode::InvalidChart, "x_max must be finite and positive");
        for (int i = 0; i < l_; ++i)
            if (!std::isfinite(domain_.y_min[i]) || !std::isfinite(domain_.y_max[i])
                || !(domain_.y_max[i] > domain_.y_min[i]))
                throw Error(ErrorCode::InvalidChart, "y range must be finite with positive extent");
        if (!std::isfinite(domain_.t_min) || !std::isfinite(domain_.t_max) || !(domain_.t_max > domain_.t_min))
            throw Error(ErrorCode::InvalidChart, "t range must be finite with positive extent");
        if (coeffs_.A.size() != static_cast<std::size_t>(k_ * k_)
            || coeffs_.B.size() != static_cast<std::size_t>(l_ * l_)
            || coeffs_.C.size() != static_cast<std::size_t>(k_ * l_))
            throw Error(ErrorCode::InvalidChart, "coefficient matrices have wrong sizes");
        auto check_vars = [&](std::vector<Expression> const& es) {
            for (auto const& e : es)
                if (e.max_variable() >= k_ + l_)
                    throw Error(ErrorCode::InvalidChart, "coefficient '" + e.source() + "' uses unknown variable");
        };
        check_vars(coeffs_.A);
        check_vars(coeffs_.B);
        check_vars(coeffs_.C);
    }

    void validate(Validation const& v)
    {
        std::mt19937_64 rng(v.seed);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        Vec x(k_), y(l_);
        double lam = std::numeric_limits<double>::infinity();

        auto check_point = [&](Vec const& xp, Vec const& yp) {
            MetricAt m = metric_at(xp, yp);
            auto bad_sym = [](Mat const& M) {
                for (int i = 0; i < M.rows(); ++i)
                    for (int j = i + 1; j < M.cols(); ++j)
                        if (std::abs(M(i, j) - M(j, i)) > 1e-13 * (1.0 + std::abs(M(i, j))))
                            return true;
                return false;
            };
            if (bad_sym(m.A) || bad_sym(m.B))
                throw Error(ErrorCode::InvalidChart, "A and B must be symmetric");
            for (Mat const* M : {&m.A, &m.B})
            {
                if (M->size() == 0)
                    continue;
                if (!M->allFinite())
                    throw Error(ErrorCode::InvalidChart, "metric coefficient not finite in the domain");
                Eigen::LLT<Mat> llt(*M);
                if (llt.info() != Eigen::Success)
                    throw Error(ErrorCode::NotPositiveDefinite, "metric block not positive definite in the domain");
                Eigen::SelfAdjointEigenSolver<Mat> es(*M, Eigen::EigenvaluesOnly);
                lam = std::min(lam, es.eigenvalues().minCoeff());
            }
            if (lam <= 0)
                throw Error(ErrorCode::NotPositiveDefinite, "metric block not positive definite in the domain");
        };

        for (int n = 0; n < v.samples; ++n)
        {
            for (int j = 0; j < k_; ++j)
                x[j] = u01(rng) * domain_.x_max[j];
            for (int i = 0; i < l_; ++i)
                y[i] = domain_.y_min[i] + u01(rng) * (domain_.y_max[i] - domain_.y_min[i]);
            // every fourth sample on the corner x = 0, where C must vanish
            if (n % 4 == 0)
            {
                x.setZero();
                MetricAt m = metric_at(x, y);
                if (m.C.size() > 0 && m.C.cwiseAbs().maxCoeff() > 1e-12)
                    throw Error(ErrorCode::InvalidChart, "C(0, y) must vanish on the boundary");
            }
            check_point(x, y);
        }
        lambda_min_ = lam;
    }
};

//---------------------------------------------------------------------------//
// Operations
//---------------------------------------------------------------------------//
//! Coefficient matrices at (x, y); throws OutOfDomain / NotPositiveDefinite.
inline MetricAt eval_metric(Chart const& chart, Vec const& x, Vec const& y)
{
    if (x.size() != chart.k() || y.size() != chart.l() || !chart.contains_base(x, y))
        throw Error(ErrorCode::OutOfDomain, "base point outside the chart box");
    MetricAt m = chart.metric_at(x, y);
    for (Mat const* M : {&m.A, &m.B})
    {
        if (M->size() == 0)
            continue;
        Eigen::LLT<Mat> llt(*M);
        if (llt.info() != Eigen::Success)
            throw Error(ErrorCode::NotPositiveDefinite, "metric block not positive definite");
    }
    return m;
}

//! σ_j = x_j ξ_j; other coordinates copied.
inline BCotangentPoint to_b_coords(CotangentPoint const& q)
{
    return {q.x, q.y, q.t, q.x.cwiseProduct(q.xi), q.zeta, q.tau};
}

//! Boundary faces containing the base point of q, within tol_face.
inline FaceId face_of(Chart const& chart, Vec const& x)
{
    FaceId f;
    double tol = chart.tol_face();
    for (int j = 0; j < chart.k(); ++j)
    {
        if (x[j] <= tol)
            f.add_lower(j);
        else if (chart.upper_wall(j) && chart.domain().x_max[j] - x[j] <= tol)
            f.add_upper(j);
    }
    return f;
}

inline CompressedPoint compress(Chart const& chart, CotangentPoint const& q)
{
    CompressedPoint c;
    c.face = face_of(chart, q.x);
    int nfree = chart.k() - c.face.codim();
    c.x_free.resize(nfree);
    c.xi_free.resize(nfree);
    int m = 0;
    for (int j = 0; j < chart.k(); ++j)
    {
        if (c.face.contains(j))
            continue;
        c.x_free[m] = q.x[j];
        c.xi_free[m] = q.xi[j];
        ++m;
    }
    c.y = q.y;
    c.t = q.t;
    c.zeta = q.zeta;
    c.tau = q.tau;
    return c;
}

//! Full x of a compressed point: face components sit on their walls.
inline Vec base_x(Chart const& chart, CompressedPoint const& c)
{
    Vec x(chart.k());
    int m = 0;
    for (int j = 0; j < chart.k(); ++j)
    {
        if (c.face.contains(j))
            x[j] = c.face.side(j) > 0 ? 0.0 : chart.domain().x_max[j];
        else
            x[j] = c.x_free[m++];
    }
    return x;
}

/*!
 * Lift a compressed point back to T*X with the given face-normal components
 * (ordered like `face.indices()`).
 */
inline CotangentPoint lift(Chart const& chart, CompressedPoint const& c, Vec const& xi_face)
{
    CotangentPoint q;
    q.x = base_x(chart, c);
    q.xi.resize(chart.k());
    int m = 0, f = 0;
    for (int j = 0; j < chart.k(); ++j)
    {
        if (c.face.contains(j))
            q.xi[j] = xi_face[f++];
        else
            q.xi[j] = c.xi_free[m++];
    }
    q.y = c.y;
    q.t = c.t;
    q.zeta = c.zeta;
    q.tau = c.tau;
    return q;
}

/*!
 * Membership in the basis set B_δ(center) of the compressed topology.
 *
 * Both points are first moved to the slice |τ| = 1. Then |x − x0|, |y − y0|,
 * |t − t0|, |τ − τ0| and |ζ − ζ0| must each be below δ.
 */
inline bool compressed_ball_contains(Chart const& chart, CompressedPoint const& center, double delta,
                                     CompressedPoint const& q)
{
    if (center.k() != q.k() || center.l() != q.l() || center.k() != chart.k() || center.l() != chart.l())
        throw Error(ErrorCode::ChartMismatch, "points belong to different charts");
    if (!(delta > 0))
        throw Error(ErrorCode::InvalidArgument, "delta must be positive");
    Vec dx = base_x(chart, q) - base_x(chart, center);
    double s0 = 1.0 / std::abs(center.tau);
    double s1 = 1.0 / std::abs(q.tau);
    return dx.norm() < delta && (q.y - center.y).norm() < delta && std::abs(q.t - center.t) < delta
           && std::abs(q.tau * s1 - center.tau * s0) < delta
           && (q.zeta * s1 - center.zeta * s0).norm() < delta;
}

}  // namespace brokenray
