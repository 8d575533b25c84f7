//! The unit tangent bundle `T₁S²` of the round sphere, its canonical coframe
//! `(ω₁, ω₂, ψ)`, Liouville's linear system for metrics with great-circle
//! geodesics and its closed-form solutions `H = Ξ⁻¹ C Ξ⁻ᵗ`, the metrics
//! `ĝ_A` they generate, and the Beltrami coefficient `μ`.
//!
//! A point of `T₁S²` is a pair `(x, v)` of orthonormal vectors in `ℝ³`, and
//! `w = x × v`. Tangent vectors are represented in `ℝ⁶` as `(ẋ, v̇)`. With this
//! embedding the coframe is `ω₁ = v·ẋ`, `ω₂ = w·ẋ`, `ψ = w·v̇`.

use std::fmt;

use nalgebra::{Matrix2, Matrix3, Rotation3, Vector3, Vector6};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geodesic::{self, GeodesicSample};
use crate::grid::{self, nan_max};
use crate::tensor::{levi_civita, Chart, CompiledCubic, MetricField};
use crate::{Error, Expr, Result, Var};

const UNIT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitTangent {
    x: Vector3<f64>,
    v: Vector3<f64>,
}

impl UnitTangent {
    /// Accepts `(x, v)` only if it is orthonormal to `1e-12`.
    pub fn new(x: Vector3<f64>, v: Vector3<f64>) -> Result<UnitTangent> {
        let bad = [
            (x.norm() - 1.0).abs(),
            (v.norm() - 1.0).abs(),
            x.dot(&v).abs(),
        ];
        if bad.iter().all(|e| *e <= UNIT_TOL) {
            Ok(UnitTangent { x, v })
        } else {
            Err(Error::InvalidUnitTangent(format!(
                "|x| - 1 = {:e}, |v| - 1 = {:e}, x.v = {:e}",
                bad[0], bad[1], bad[2]
            )))
        }
    }

    /// Gram–Schmidt: normalizes `x`, then projects `v` off `x` and normalizes.
    pub fn normalized(x: Vector3<f64>, v: Vector3<f64>) -> Result<UnitTangent> {
        let xn = x.norm();
        if !(xn > 1e-300 && xn.is_finite()) {
            return Err(Error::InvalidUnitTangent("x is zero".into()));
        }
        let x = x / xn;
        let v = v - x * x.dot(&v);
        let vn = v.norm();
        if !(vn > 1e-12 * (1.0 + xn) && vn.is_finite()) {
            return Err(Error::InvalidUnitTangent("v is parallel to x".into()));
        }
        let v = v / vn;
        // one refinement pass keeps x.v at roundoff level
        let v = (v - x * x.dot(&v)).normalize();
        Ok(UnitTangent { x, v })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> UnitTangent {
        loop {
            let x = random_in_ball(rng);
            let v = random_in_ball(rng);
            if let Ok(t) = UnitTangent::normalized(x, v) {
                if x.norm() > 0.1 && x.cross(&v).norm() > 0.1 {
                    return t;
                }
            }
        }
    }

    pub fn x(&self) -> Vector3<f64> {
        self.x
    }

    pub fn v(&self) -> Vector3<f64> {
        self.v
    }

    pub fn w(&self) -> Vector3<f64> {
        self.x.cross(&self.v)
    }

    /// The rotation with columns `(x, v, x × v)`.
    pub fn frame(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.x, self.v, self.w()])
    }

    fn from_frame(m: &Matrix3<f64>) -> UnitTangent {
        UnitTangent::normalized(m.column(0).into(), m.column(1).into())
            .expect("columns of a rotation are orthonormal")
    }
}

fn random_in_ball<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let p = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if p.norm_squared() <= 1.0 {
            return p;
        }
    }
}

/// `[[0, −ω₁, −ω₂], [ω₁, 0, −ψ], [ω₂, ψ, 0]]`.
pub fn theta_matrix(omega1: f64, omega2: f64, psi: f64) -> Matrix3<f64> {
    Matrix3::new(0.0, -omega1, -omega2, omega1, 0.0, -psi, omega2, psi, 0.0)
}

/// `(ω₁, ω₂, ψ)` evaluated on the ambient tangent `(ẋ, v̇)` at `t`.
pub fn coframe(t: &UnitTangent, xi: &Vector6<f64>) -> [f64; 3] {
    let xdot = xi.fixed_rows::<3>(0);
    let vdot = xi.fixed_rows::<3>(3);
    let w = t.w();
    [t.v.dot(&xdot), w.dot(&xdot), w.dot(&vdot)]
}

/// A vector field with constant components in the frame `(E₁, E₂, E_ψ)` dual
/// to `(ω₁, ω₂, ψ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentField(pub [f64; 3]);

impl TangentField {
    /// Geodesic flow.
    pub const E1: TangentField = TangentField([1.0, 0.0, 0.0]);
    /// Transverse flow.
    pub const E2: TangentField = TangentField([0.0, 1.0, 0.0]);
    /// Fiber rotation.
    pub const E_PSI: TangentField = TangentField([0.0, 0.0, 1.0]);

    pub fn theta(&self) -> Matrix3<f64> {
        theta_matrix(self.0[0], self.0[1], self.0[2])
    }

    /// The Lie bracket, `[θ(a), θ(b)]` read back as a field.
    pub fn bracket(&self, other: &TangentField) -> TangentField {
        let (a, b) = (self.theta(), other.theta());
        let m = a * b - b * a;
        TangentField([m[(1, 0)], m[(2, 0)], m[(2, 1)]])
    }

    /// Time-`s` flow: the frame `(x, v, w)` is right-multiplied by `exp(s θ)`.
    pub fn flow(&self, t: &UnitTangent, s: f64) -> UnitTangent {
        let [a1, a2, a3] = self.0;
        let rot = Rotation3::new(Vector3::new(a3, -a2, a1) * s);
        UnitTangent::from_frame(&(t.frame() * rot.matrix()))
    }

    /// The field at `t` as an ambient vector `(ẋ, v̇)`.
    pub fn ambient(&self, t: &UnitTangent) -> Vector6<f64> {
        let m = t.frame() * self.theta();
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&m.column(0));
        out.fixed_rows_mut::<3>(3).copy_from(&m.column(1));
        out
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> TangentField {
        TangentField(std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonicalFlows {
    pub geodesic: UnitTangent,
    pub transverse: UnitTangent,
    pub fiber: UnitTangent,
}

/// Closed-form flows dual to `(ω₁, ω₂, ψ)`:
/// geodesic `(x cos s + v sin s, −x sin s + v cos s)`,
/// transverse `(x cos s + w sin s, v)`,
/// fiber `(x, v cos s + w sin s)`.
pub fn canonical_flows(t: &UnitTangent, s: f64) -> CanonicalFlows {
    let (sn, cs) = s.sin_cos();
    let (x, v, w) = (t.x, t.v, t.w());
    let mk = |a: Vector3<f64>, b: Vector3<f64>| {
        UnitTangent::normalized(a, b).expect("rotated orthonormal pair")
    };
    CanonicalFlows {
        geodesic: mk(x * cs + v * sn, -x * sn + v * cs),
        transverse: mk(x * cs + w * sn, v),
        // x is left untouched so the base point is preserved exactly
        fiber: {
            let v = v * cs + w * sn;
            UnitTangent {
                x,
                v: (v - x * x.dot(&v)).normalize(),
            }
        },
    }
}

/// Central-difference Lie bracket `[X, Y] = D_X Y − D_Y X` of two fields,
/// each derivative taken along the other field's exact flow.
pub fn lie_bracket_fd(x: &TangentField, y: &TangentField, t: &UnitTangent, h: f64) -> Vector6<f64> {
    let along = |a: &TangentField, b: &TangentField| {
        (b.ambient(&a.flow(t, h)) - b.ambient(&a.flow(t, -h))) / (2.0 * h)
    };
    along(x, y) - along(y, x)
}

/// Max over the samples `(t, X, Y)` of `|dα(X, Y) − rhs(X, Y)|` for the three
/// structure equations `dω₁ = −ω₂∧ψ`, `dω₂ = −ψ∧ω₁`, `dψ = −ω₁∧ω₂`, with
/// `dα(X,Y) = X(α(Y)) − Y(α(X)) − α([X,Y])` evaluated by central differences.
pub fn structure_equation_residual(
    h: f64,
    samples: &[(UnitTangent, TangentField, TangentField)],
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "FD step must be positive, got {h}"
        )));
    }
    let per_sample = |(t, x, y): &(UnitTangent, TangentField, TangentField)| -> Result<f64> {
        let form_on = |p: &UnitTangent, f: &TangentField| coframe(p, &f.ambient(p));
        let deriv = |a: &TangentField, b: &TangentField| -> [f64; 3] {
            let plus = form_on(&a.flow(t, h), b);
            let minus = form_on(&a.flow(t, -h), b);
            std::array::from_fn(|k| (plus[k] - minus[k]) / (2.0 * h))
        };
        let x_of_y = deriv(x, y);
        let y_of_x = deriv(y, x);
        let br = coframe(t, &lie_bracket_fd(x, y, t, h));
        let ax = form_on(t, x);
        let ay = form_on(t, y);
        let wedge = |i: usize, j: usize| ax[i] * ay[j] - ay[i] * ax[j];
        let rhs = [-wedge(1, 2), -wedge(2, 0), -wedge(0, 1)];
        Ok((0..3)
            .map(|k| (x_of_y[k] - y_of_x[k] - br[k] - rhs[k]).abs())
            .fold(0.0, nan_max))
    };
    Ok(grid::try_map(samples, per_sample)?
        .into_iter()
        .fold(0.0, nan_max))
}

/// Random `(point, field, field)` triples; the first three pair up the
/// canonical fields themselves.
pub fn structure_samples<R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
) -> Vec<(UnitTangent, TangentField, TangentField)> {
    use TangentField as F;
    let canon = [(F::E1, F::E2), (F::E2, F::E_PSI), (F::E_PSI, F::E1)];
    (0..n)
        .map(|k| {
            let t = UnitTangent::random(rng);
            let (x, y) = match canon.get(k) {
                Some(&p) => p,
                None => (F::random(rng), F::random(rng)),
            };
            (t, x, y)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderCheck {
    pub steps: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `residuals[k] / residuals[k + 1]`; about 4 for a second-order scheme.
    pub ratios: Vec<f64>,
}

impl OrderCheck {
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        !self.ratios.is_empty() && self.ratios.iter().all(|r| (lo..=hi).contains(r))
    }
}

/// Residuals at `h0, h0/2, …` (`halvings + 1` steps) and their ratios.
pub fn structure_equation_order(
    h0: f64,
    halvings: usize,
    samples: &[(UnitTangent, TangentField, TangentField)],
) -> Result<OrderCheck> {
    let steps: Vec<f64> = (0..=halvings)
        .map(|k| h0 / f64::powi(2.0, k as i32))
        .collect();
    let residuals = steps
        .iter()
        .map(|&h| structure_equation_residual(h, samples))
        .collect::<Result<Vec<_>>>()?;
    let ratios = residuals.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(OrderCheck {
        steps,
        residuals,
        ratios,
    })
}

/// How the orthonormal triple `(x, v, x × v)` is assembled into `Ξ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct XiConvention {
    /// Vectors as columns (otherwise rows).
    pub columns: bool,
    /// Cyclic shift of the order `(x, v, x × v)`.
    pub shift: u8,
    /// Third vector is `−x × v`.
    pub flip_third: bool,
}

/// The arrangement that reproduces the printed `ϑ` pattern: columns
/// `(x, v, x × v)`. [`search_xi_convention`] re-derives it.
pub const XI_CONVENTION: XiConvention = XiConvention {
    columns: true,
    shift: 0,
    flip_third: false,
};

impl XiConvention {
    pub fn candidates() -> Vec<XiConvention> {
        let mut out = Vec::new();
        for columns in [true, false] {
            for shift in 0..3 {
                for flip_third in [false, true] {
                    out.push(XiConvention {
                        columns,
                        shift,
                        flip_third,
                    });
                }
            }
        }
        out
    }

    pub fn frame(&self, t: &UnitTangent) -> Matrix3<f64> {
        let third = if self.flip_third { -t.w() } else { t.w() };
        let mut vs = [t.x, t.v, third];
        vs.rotate_left(self.shift as usize);
        let m = Matrix3::from_columns(&vs);
        if self.columns {
            m
        } else {
            m.transpose()
        }
    }
}

impl fmt::Display for XiConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = ["x", "v", if self.flip_third { "-x*v" } else { "x*v" }];
        names.rotate_left(self.shift as usize);
        let kind = if self.columns { "columns" } else { "rows" };
        write!(f, "{kind} ({}, {}, {})", names[0], names[1], names[2])
    }
}

/// `Ξ(t)` in the fixed convention: the rotation with columns `(x, v, x × v)`.
pub fn xi_frame(t: &UnitTangent) -> Matrix3<f64> {
    XI_CONVENTION.frame(t)
}

/// Max deviation of the central-difference `Ξ⁻¹dΞ` along the three closed-form
/// canonical flows from `ϑ(E₁) = θ(1,0,0)`, `ϑ(E₂) = θ(0,1,0)`, `ϑ(E_ψ) = θ(0,0,1)`.
pub fn theta_pattern_residual(conv: &XiConvention, samples: &[UnitTangent], h: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for t in samples {
        let xi_inv = conv.frame(t).try_inverse().expect("orthogonal matrix");
        let plus = canonical_flows(t, h);
        let minus = canonical_flows(t, -h);
        let pairs = [
            (plus.geodesic, minus.geodesic, theta_matrix(1.0, 0.0, 0.0)),
            (
                plus.transverse,
                minus.transverse,
                theta_matrix(0.0, 1.0, 0.0),
            ),
            (plus.fiber, minus.fiber, theta_matrix(0.0, 0.0, 1.0)),
        ];
        for (p, m, expect) in pairs {
            let d = (conv.frame(&p) - conv.frame(&m)) / (2.0 * h);
            worst = nan_max(worst, (xi_inv * d - expect).abs().max());
        }
    }
    worst
}

/// The first candidate (in [`XiConvention::candidates`] order) with
/// `Ξ ∈ SO(3)` whose `Ξ⁻¹dΞ` matches `ϑ` to `tol`, with its residual.
pub fn search_xi_convention(
    samples: &[UnitTangent],
    h: f64,
    tol: f64,
) -> Option<(XiConvention, f64)> {
    XiConvention::candidates().into_iter().find_map(|c| {
        let proper = samples.iter().all(|t| c.frame(t).determinant() > 0.0);
        let r = theta_pattern_residual(&c, samples, h);
        (proper && r < tol).then_some((c, r))
    })
}

/// `A` with entries uniform in `[−1, 1]`, redrawn while `|det A| < 0.1`,
/// then scaled to `det A = 1`.
pub fn random_sl3<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let a: Matrix3<f64> = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let det = a.determinant();
        if det.abs() >= 0.1 {
            return a / det.cbrt();
        }
    }
}

/// Entries of `H` in the layout `[[h, h₂, −h₁], [h₂, −h₂₂, h₁₂], [−h₁, h₁₂, −h₁₁]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleComponents {
    pub h: f64,
    pub h1: f64,
    pub h2: f64,
    pub h11: f64,
    pub h12: f64,
    pub h22: f64,
}

impl LiouvilleComponents {
    pub fn from_matrix(m: &Matrix3<f64>) -> LiouvilleComponents {
        LiouvilleComponents {
            h: m[(0, 0)],
            h1: -m[(0, 2)],
            h2: m[(0, 1)],
            h11: -m[(2, 2)],
            h12: m[(1, 2)],
            h22: -m[(1, 1)],
        }
    }

    pub fn det(&self) -> f64 {
        self.h11 * self.h22 - self.h12 * self.h12
    }
}

/// The solution `H = Ξ⁻¹ C Ξ⁻ᵗ` of `dH + ϑH + Hϑᵗ = 0` with `C = A Aᵗ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiouvilleSolution {
    a: Matrix3<f64>,
    c: Matrix3<f64>,
    c_inv: Matrix3<f64>,
    det_c: f64,
}

impl LiouvilleSolution {
    /// Any invertible `A` is accepted; `det A = 1` gives the normalized family.
    pub fn new(a: Matrix3<f64>) -> Result<LiouvilleSolution> {
        let det = a.determinant();
        if !(det.abs() > 1e-12 && det.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "A must be invertible, det A = {det}"
            )));
        }
        let c = a * a.transpose();
        let c_inv = c.try_inverse().expect("AAᵗ invertible when A is");
        Ok(LiouvilleSolution {
            a,
            c,
            c_inv,
            det_c: det * det,
        })
    }

    pub fn identity() -> LiouvilleSolution {
        LiouvilleSolution::new(Matrix3::identity()).expect("identity is invertible")
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> LiouvilleSolution {
        LiouvilleSolution::new(random_sl3(rng)).expect("SL(3) sample")
    }

    pub fn a(&self) -> &Matrix3<f64> {
        &self.a
    }

    pub fn c(&self) -> &Matrix3<f64> {
        &self.c
    }

    pub fn h_matrix(&self, t: &UnitTangent) -> Matrix3<f64> {
        let xi = xi_frame(t);
        // Ξ ∈ SO(3), so Ξ⁻¹ = Ξᵗ
        xi.transpose() * self.c * xi
    }

    pub fn components(&self, t: &UnitTangent) -> LiouvilleComponents {
        LiouvilleComponents::from_matrix(&self.h_matrix(t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereMetricSample {
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl SphereMetricSample {
    pub fn new(p: f64, q: f64, r: f64) -> Result<SphereMetricSample> {
        let s = SphereMetricSample { p, q, r };
        s.validate()?;
        Ok(s)
    }

    pub fn round() -> SphereMetricSample {
        SphereMetricSample {
            p: 1.0,
            q: 1.0,
            r: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p > 0.0 && self.q > 0.0 && self.det() > 0.0 {
            Ok(())
        } else {
            Err(Error::IndefiniteSample {
                p: self.p,
                q: self.q,
                r: self.r,
            })
        }
    }

    pub fn det(&self) -> f64 {
        self.p * self.q - self.r * self.r
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.p, self.r, self.r, self.q)
    }

    /// Components after rotating the frame `(v, w)` by `phi` in the fiber.
    pub fn rotated(&self, phi: f64) -> SphereMetricSample {
        let (s, c) = phi.sin_cos();
        let rot = Matrix2::new(c, -s, s, c);
        let m = rot.transpose() * self.matrix() * rot;
        SphereMetricSample {
            p: m[(0, 0)],
            q: m[(1, 1)],
            r: m[(0, 1)],
        }
    }

    /// `ĝ(a, b)` for ambient tangent vectors at `t.x`.
    pub fn eval(&self, t: &UnitTangent, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        let w = t.w();
        let (a1, a2) = (t.v.dot(a), w.dot(a));
        let (b1, b2) = (t.v.dot(b), w.dot(b));
        self.p * a1 * b1 + self.r * (a1 * b2 + a2 * b1) + self.q * a2 * b2
    }
}

/// `(p, q, r)` and the sign `ε` that makes `ε h` positive definite, with
/// `p = ε h₁₁ / (det h)²`, `r = ε h₁₂ / (det h)²`, `q = ε h₂₂ / (det h)²`.
pub fn metric_with_sign(
    sol: &LiouvilleSolution,
    t: &UnitTangent,
) -> Result<(SphereMetricSample, f64)> {
    let c = sol.components(t);
    let det = c.det();
    let scale = c.h11.abs().max(c.h22.abs()).max(c.h12.abs());
    if !(det.abs() > 1e-14 * scale * scale) {
        return Err(Error::DegenerateSolution { det });
    }
    if det < 0.0 {
        return Err(Error::IndefiniteSolution { h11: c.h11, det });
    }
    let eps = c.h11.signum();
    let k = eps / (det * det);
    Ok((
        SphereMetricSample {
            p: k * c.h11,
            q: k * c.h22,
            r: k * c.h12,
        },
        eps,
    ))
}

pub fn metric_from_solution(
    sol: &LiouvilleSolution,
    t: &UnitTangent,
) -> Result<SphereMetricSample> {
    Ok(metric_with_sign(sol, t)?.0)
}

/// `μ = (p − q + 2ir) / (p + q + 2√(pq − r²))`.
pub fn beltrami(s: &SphereMetricSample) -> Result<Complex64> {
    s.validate()?;
    Ok(Complex64::new(s.p - s.q, 2.0 * s.r) / (s.p + s.q + 2.0 * s.det().sqrt()))
}

/// A metric on `S²` known through its frame components on `T₁S²` and
/// through closed-form chart expressions.
#[derive(Clone, Debug, PartialEq)]
pub enum SphereMetric {
    /// `ĝ_A` from a Liouville solution.
    Liouville(LiouvilleSolution),
    /// The round metric scaled by `1 + c·x`, `|c| < 1`.
    Conformal { c: Vector3<f64> },
}

impl SphereMetric {
    pub fn round() -> SphereMetric {
        SphereMetric::Liouville(LiouvilleSolution::identity())
    }

    pub fn conformal(c: Vector3<f64>) -> Result<SphereMetric> {
        if c.norm() < 1.0 {
            Ok(SphereMetric::Conformal { c })
        } else {
            Err(Error::InvalidArgument(format!(
                "conformal factor 1 + c.x needs |c| < 1, got {}",
                c.norm()
            )))
        }
    }

    pub fn sample(&self, t: &UnitTangent) -> Result<SphereMetricSample> {
        match self {
            SphereMetric::Liouville(sol) => metric_from_solution(sol, t),
            SphereMetric::Conformal { c } => {
                let f = 1.0 + c.dot(&t.x);
                SphereMetricSample::new(f, f, 0.0)
            }
        }
    }

    /// `ĝ` in the coordinates of `chart`, as closed-form expressions.
    ///
    /// For a homogeneous parametrization `x̃(X, Y)` of the sphere,
    /// `ĝ_A(∂_a, ∂_b) = (x̃ × ∂_a x̃)ᵗ C (x̃ × ∂_b x̃) / (det C · x̃ᵗ C⁻¹ x̃)²`,
    /// which is invariant under rescaling `x̃` and so needs no normalization.
    pub fn chart_metric(&self, chart: &SphereChart) -> MetricField {
        let xt = chart.homogeneous();
        let d = [Var::X, Var::Y].map(|v| xt.clone().map(|e| e.diff(v)));
        let n = [cross(&xt, &d[0]), cross(&xt, &d[1])];
        let (num, den) = match self {
            SphereMetric::Liouville(sol) => {
                let num = |a: usize, b: usize| quadratic(&n[a], &sol.c, &n[b]);
                let den = (quadratic(&xt, &sol.c_inv, &xt) * sol.det_c).powi(2);
                ([num(0, 0), num(0, 1), num(1, 1)], den)
            }
            SphereMetric::Conformal { c } => {
                let id = Matrix3::identity();
                let r2 = quadratic(&xt, &id, &xt);
                let lin = &xt[0] * c[0] + &xt[1] * c[1] + &xt[2] * c[2];
                let f = 1.0 + lin / r2.sqrt();
                let num = |a: usize, b: usize| &f * quadratic(&n[a], &id, &n[b]);
                ([num(0, 0), num(0, 1), num(1, 1)], r2.powi(2))
            }
        };
        let [g11, g12, g22] = num.map(|e| e / &den);
        MetricField::new(g11, g12, g22)
    }

    /// `ĝ` in chart coordinates at one point, computed from frame samples and
    /// the parametrization's Jacobian (independent of [`Self::chart_metric`]).
    pub fn chart_metric_at(&self, chart: &SphereChart, px: f64, py: f64) -> Result<Matrix2<f64>> {
        let x = chart.to_sphere(px, py)?;
        let jac = chart.jacobian(px, py)?;
        let helper = if x[0].abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let t = UnitTangent::normalized(x, helper)?;
        let s = self.sample(&t)?;
        Ok(Matrix2::from_fn(|a, b| s.eval(&t, &jac[a], &jac[b])))
    }
}

fn cross(a: &[Expr; 3], b: &[Expr; 3]) -> [Expr; 3] {
    [
        &a[1] * &b[2] - &a[2] * &b[1],
        &a[2] * &b[0] - &a[0] * &b[2],
        &a[0] * &b[1] - &a[1] * &b[0],
    ]
}

fn quadratic(a: &[Expr; 3], m: &Matrix3<f64>, b: &[Expr; 3]) -> Expr {
    let mut terms = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            if m[(i, j)] != 0.0 {
                terms.push(&a[i] * &b[j] * m[(i, j)]);
            }
        }
    }
    terms.into_iter().sum()
}

/// Pulls `ĝ_A` back to `chart` as expressions.
pub fn pullback_to_chart(sol: &LiouvilleSolution, chart: &SphereChart) -> MetricField {
    SphereMetric::Liouville(sol.clone()).chart_metric(chart)
}

#[derive(Clone, Debug, PartialEq)]
pub enum SphereChart {
    /// Central projection onto the plane tangent at `rotation · e₃`:
    /// `x̃ = rotation · (X, Y, 1)`.
    Gnomonic { rotation: Matrix3<f64> },
    /// Inverse stereographic projection from the north pole:
    /// `x̃ = (2X, 2Y, X² + Y² − 1)`.
    Stereographic,
}

impl SphereChart {
    pub fn gnomonic() -> SphereChart {
        SphereChart::Gnomonic {
            rotation: Matrix3::identity(),
        }
    }

    pub fn rotated_gnomonic(rotation: Matrix3<f64>) -> Result<SphereChart> {
        let err = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        if err > 1e-12 || rotation.determinant() < 0.0 {
            return Err(Error::InvalidArgument(
                "gnomonic chart rotation must lie in SO(3)".into(),
            ));
        }
        Ok(SphereChart::Gnomonic { rotation })
    }

    /// Gnomonic chart centred on the unit vector `n`.
    pub fn gnomonic_at(n: &Vector3<f64>) -> SphereChart {
        let n = n.normalize();
        let helper = if n[0].abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let a = (helper - n * n.dot(&helper)).normalize();
        let b = n.cross(&a);
        SphereChart::Gnomonic {
            rotation: Matrix3::from_columns(&[a, b, n]),
        }
    }

    pub fn homogeneous(&self) -> [Expr; 3] {
        match self {
            SphereChart::Gnomonic { rotation } => std::array::from_fn(|i| {
                Expr::x() * rotation[(i, 0)] + Expr::y() * rotation[(i, 1)] + rotation[(i, 2)]
            }),
            SphereChart::Stereographic => [
                Expr::x() * 2.0,
                Expr::y() * 2.0,
                Expr::x().powi(2) + Expr::y().powi(2) - 1.0,
            ],
        }
    }

    fn homogeneous_at(&self, px: f64, py: f64) -> (Vector3<f64>, [Vector3<f64>; 2]) {
        match self {
            SphereChart::Gnomonic { rotation } => (
                rotation * Vector3::new(px, py, 1.0),
                [rotation.column(0).into(), rotation.column(1).into()],
            ),
            SphereChart::Stereographic => (
                Vector3::new(2.0 * px, 2.0 * py, px * px + py * py - 1.0),
                [
                    Vector3::new(2.0, 0.0, 2.0 * px),
                    Vector3::new(0.0, 2.0, 2.0 * py),
                ],
            ),
        }
    }

    pub fn to_sphere(&self, px: f64, py: f64) -> Result<Vector3<f64>> {
        let (xt, _) = self.homogeneous_at(px, py);
        let n = xt.norm();
        if n.is_finite() && n > 0.0 {
            Ok(xt / n)
        } else {
            Err(Error::OutsideDomain(format!("({px}, {py})")))
        }
    }

    /// Derivatives of the unit-sphere parametrization `x̃ / |x̃|`.
    pub fn jacobian(&self, px: f64, py: f64) -> Result<[Vector3<f64>; 2]> {
        let (xt, d) = self.homogeneous_at(px, py);
        let n = xt.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::OutsideDomain(format!("({px}, {py})")));
        }
        let x = xt / n;
        Ok(d.map(|da| (da - x * x.dot(&da)) / n))
    }

    pub fn from_sphere(&self, x: &Vector3<f64>) -> Result<[f64; 2]> {
        match self {
            SphereChart::Gnomonic { rotation } => {
                let p = rotation.transpose() * x;
                if p[2] > 1e-12 {
                    Ok([p[0] / p[2], p[1] / p[2]])
                } else {
                    Err(Error::OutsideDomain(
                        "point is not in the chart's hemisphere".into(),
                    ))
                }
            }
            SphereChart::Stereographic => {
                let d = 1.0 - x[2];
                if d > 1e-12 {
                    Ok([x[0] / d, x[1] / d])
                } else {
                    Err(Error::OutsideDomain(
                        "north pole has no stereographic image".into(),
                    ))
                }
            }
        }
    }

    /// Chart components of the tangent vector `xdot` at `x`.
    pub fn velocity_to_chart(&self, x: &Vector3<f64>, xdot: &Vector3<f64>) -> Result<[f64; 2]> {
        match self {
            SphereChart::Gnomonic { rotation } => {
                let p = rotation.transpose() * x;
                let pd = rotation.transpose() * xdot;
                if p[2] <= 1e-12 {
                    return Err(Error::OutsideDomain(
                        "point is not in the chart's hemisphere".into(),
                    ));
                }
                let z2 = p[2] * p[2];
                Ok([
                    (pd[0] * p[2] - p[0] * pd[2]) / z2,
                    (pd[1] * p[2] - p[1] * pd[2]) / z2,
                ])
            }
            SphereChart::Stereographic => {
                let d = 1.0 - x[2];
                if d <= 1e-12 {
                    return Err(Error::OutsideDomain(
                        "north pole has no stereographic image".into(),
                    ));
                }
                Ok([
                    xdot[0] / d + x[0] * xdot[2] / (d * d),
                    xdot[1] / d + x[1] * xdot[2] / (d * d),
                ])
            }
        }
    }
}

/// Max over `samples` of the Liouville system residual of the metric given by
/// `sampler`, using central differences with step `h` along the canonical flows.
///
/// With `hᵢⱼ = ĝᵢⱼ (pq − r²)^{−2/3}`, `h₁ = −E₂(h₁₁)/2`, `h₂ = E₁(h₂₂)/2` and
/// `h = E₂(h₁) − h₁₁`, the equations checked are
///
/// ```text
/// E₁(h₁₁)   E_ψ(h₁₁) − 2h₁₂   E₂(h₂₂)   E_ψ(h₂₂) + 2h₁₂
/// E₁(h₁₂) − h₁   E₂(h₁₂) + h₂   E_ψ(h₁₂) + h₁₁ − h₂₂
/// E₁(h₁) + h₁₂   E_ψ(h₁) − h₂
/// E₁(h₂) + h₂₂ + h   E₂(h₂) − h₁₂   E_ψ(h₂) + h₁
/// ```
pub fn liouville_residual<F>(sampler: F, samples: &[UnitTangent], h: f64) -> Result<f64>
where
    F: Fn(&UnitTangent) -> Result<SphereMetricSample> + Sync,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "FD step must be positive, got {h}"
        )));
    }
    use TangentField as F;
    let hij = |t: &UnitTangent| -> Result<[f64; 3]> {
        let s = sampler(t)?;
        s.validate()?;
        let k = s.det().powf(-2.0 / 3.0);
        Ok([s.p * k, s.r * k, s.q * k])
    };
    let d = |f: &dyn Fn(&UnitTangent) -> Result<f64>, e: F, t: &UnitTangent| -> Result<f64> {
        Ok((f(&e.flow(t, h))? - f(&e.flow(t, -h))?) / (2.0 * h))
    };
    let h11 = |t: &UnitTangent| Ok(hij(t)?[0]);
    let h12 = |t: &UnitTangent| Ok(hij(t)?[1]);
    let h22 = |t: &UnitTangent| Ok(hij(t)?[2]);
    let h1 = |t: &UnitTangent| Ok(-0.5 * d(&h11, F::E2, t)?);
    let h2 = |t: &UnitTangent| Ok(0.5 * d(&h22, F::E1, t)?);

    let per_point = |t: &UnitTangent| -> Result<f64> {
        let [a11, a12, a22] = hij(t)?;
        let (b1, b2) = (h1(t)?, h2(t)?);
        let hh = d(&h1, F::E2, t)? - a11;
        let eqs = [
            d(&h11, F::E1, t)?,
            d(&h11, F::E_PSI, t)? - 2.0 * a12,
            d(&h22, F::E2, t)?,
            d(&h22, F::E_PSI, t)? + 2.0 * a12,
            d(&h12, F::E1, t)? - b1,
            d(&h12, F::E2, t)? + b2,
            d(&h12, F::E_PSI, t)? + a11 - a22,
            d(&h1, F::E1, t)? + a12,
            d(&h1, F::E_PSI, t)? - b2,
            d(&h2, F::E1, t)? + a22 + hh,
            d(&h2, F::E2, t)? - a12,
            d(&h2, F::E_PSI, t)? + b1,
        ];
        Ok(eqs.iter().map(|e| e.abs()).fold(0.0, nan_max))
    };
    Ok(grid::try_map(samples, per_point)?
        .into_iter()
        .fold(0.0, nan_max))
}

/// Half-width of each face chart of [`CubeAtlas`]; faces overlap since the
/// cube faces themselves have half-width 1.
pub const FACE_HALF_WIDTH: f64 = 1.2;

struct Face {
    chart: SphereChart,
    normal: Vector3<f64>,
    gamma: CompiledCubic,
}

/// Six gnomonic charts centred on `±e₁, ±e₂, ±e₃`, each carrying the
/// compiled Levi-Civita connection of the metric.
pub struct CubeAtlas {
    faces: Vec<Face>,
    domain: Chart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpherePath {
    /// `(t, x(t))` with `x` on the unit sphere.
    pub samples: Vec<(f64, [f64; 3])>,
    pub chart_switches: usize,
}

impl SpherePath {
    /// `max |n · x(t)|` with `n` the unit normal of the plane through `0`
    /// spanned by the initial position and velocity.
    pub fn planarity(&self, normal: &Vector3<f64>) -> f64 {
        self.samples
            .iter()
            .map(|(_, x)| normal.dot(&Vector3::from(*x)).abs())
            .fold(0.0, nan_max)
    }
}

impl CubeAtlas {
    pub fn new(metric: &SphereMetric) -> CubeAtlas {
        let normals = [
            Vector3::x(),
            -Vector3::x(),
            Vector3::y(),
            -Vector3::y(),
            Vector3::z(),
            -Vector3::z(),
        ];
        let faces = normals
            .into_iter()
            .map(|n| {
                let chart = SphereChart::gnomonic_at(&n);
                let gamma = levi_civita(&metric.chart_metric(&chart)).compile();
                Face {
                    chart,
                    normal: n,
                    gamma,
                }
            })
            .collect();
        CubeAtlas {
            faces,
            domain: Chart::square(FACE_HALF_WIDTH, 2).expect("valid square"),
        }
    }

    fn best_face(&self, x: &Vector3<f64>) -> usize {
        (0..self.faces.len())
            .max_by(|&a, &b| {
                self.faces[a]
                    .normal
                    .dot(x)
                    .total_cmp(&self.faces[b].normal.dot(x))
            })
            .expect("six faces")
    }

    /// Integrates the geodesic of the metric from `(t0.x, t0.v)` over `[0, t_end]`,
    /// moving to the best face chart whenever the path leaves the current one.
    pub fn integrate(&self, t0: &UnitTangent, t_end: f64, step: f64) -> Result<SpherePath> {
        let mut x = t0.x;
        let mut xdot = t0.v;
        let mut t = 0.0;
        let mut samples = vec![(0.0, [x[0], x[1], x[2]])];
        let mut switches = 0;
        let mut current = usize::MAX;
        while t_end - t > 1e-12 * t_end.max(1.0) {
            let f = self.best_face(&x);
            if f == current {
                return Err(Error::OutsideDomain(format!(
                    "geodesic stalled at a chart boundary, covered t = {t} of {t_end}"
                )));
            }
            if current != usize::MAX {
                switches += 1;
            }
            current = f;
            let face = &self.faces[f];
            let x0 = face.chart.from_sphere(&x)?;
            let v0 = face.chart.velocity_to_chart(&x, &xdot)?;
            let path =
                geodesic::integrate_compiled(&face.gamma, &self.domain, x0, v0, t_end - t, step)?;
            for s in &path.samples[1..] {
                let p = face.chart.to_sphere(s.x[0], s.x[1])?;
                samples.push((t + s.t, [p[0], p[1], p[2]]));
            }
            let GeodesicSample {
                t: dt,
                x: xe,
                v: ve,
            } = *path.last();
            let jac = face.chart.jacobian(xe[0], xe[1])?;
            x = face.chart.to_sphere(xe[0], xe[1])?;
            xdot = jac[0] * ve[0] + jac[1] * ve[1];
            t += dt;
            if !path.truncated {
                break;
            }
        }
        Ok(SpherePath {
            samples,
            chart_switches: switches,
        })
    }

    /// Planarity residual of the geodesic from `t0` over `[0, t_end]`.
    pub fn great_circle_residual(&self, t0: &UnitTangent, t_end: f64, step: f64) -> Result<f64> {
        let path = self.integrate(t0, t_end, step)?;
        Ok(path.planarity(&t0.w()))
    }
}

/// `max_t |n · x(t)|` along the geodesic of `metric` through `t0`, where `n`
/// is the unit normal of the plane spanned by `t0.x` and `t0.v`.
pub fn great_circle_residual(
    metric: &SphereMetric,
    t0: &UnitTangent,
    t_end: f64,
    step: f64,
) -> Result<f64> {
    CubeAtlas::new(metric).great_circle_residual(t0, t_end, step)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatLongSample {
    pub lat: f64,
    pub lon: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub mu: [f64; 2],
}

/// `(p, q, r, μ)` at cell centres of an `nlat × nlon` latitude/longitude grid,
/// in the frame with `v` pointing east.
pub fn lat_long_grid(
    metric: &SphereMetric,
    nlat: usize,
    nlon: usize,
) -> Result<Vec<LatLongSample>> {
    if nlat == 0 || nlon == 0 {
        return Err(Error::InvalidArgument(
            "grid needs at least one cell".into(),
        ));
    }
    let pts: Vec<(f64, f64)> = (0..nlat)
        .flat_map(|i| {
            let lat = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * (i as f64 + 0.5) / nlat as f64;
            (0..nlon).map(move |j| {
                (
                    lat,
                    -std::f64::consts::PI + std::f64::consts::TAU * (j as f64 + 0.5) / nlon as f64,
                )
            })
        })
        .collect();
    grid::try_map(&pts, |&(lat, lon)| {
        let x = Vector3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin());
        let east = Vector3::new(-lon.sin(), lon.cos(), 0.0);
        let t = UnitTangent::normalized(x, east)?;
        let s = metric.sample(&t)?;
        let mu = beltrami(&s)?;
        Ok(LatLongSample {
            lat,
            lon,
            p: s.p,
            q: s.q,
            r: s.r,
            mu: [mu.re, mu.im],
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(2024)
    }

    fn samples(n: usize) -> Vec<UnitTangent> {
        let mut r = rng();
        (0..n).map(|_| UnitTangent::random(&mut r)).collect()
    }

    #[test]
    fn unit_tangent_validation() {
        assert!(UnitTangent::new(Vector3::x(), Vector3::y()).is_ok());
        assert!(UnitTangent::new(Vector3::x() * 1.1, Vector3::y()).is_err());
        assert!(UnitTangent::new(Vector3::x(), Vector3::new(0.1, 1.0, 0.0).normalize()).is_err());
        assert!(UnitTangent::normalized(Vector3::x(), Vector3::x() * 2.0).is_err());
        for t in samples(50) {
            assert!(UnitTangent::new(t.x(), t.v()).is_ok());
        }
    }

    #[test]
    fn xi_at_standard_point_is_a_permutation() {
        let t = UnitTangent::new(Vector3::x(), Vector3::y()).unwrap();
        let xi = xi_frame(&t);
        assert_eq!(xi, Matrix3::identity());
        assert_eq!(xi * xi.transpose(), Matrix3::identity());
        for t in samples(20) {
            let xi = xi_frame(&t);
            assert!((xi * xi.transpose() - Matrix3::identity()).abs().max() < 1e-12);
            assert!((xi.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn convention_search_selects_the_fixed_convention() {
        let (conv, r) = search_xi_convention(&samples(20), 1e-4, 1e-6).unwrap();
        assert_eq!(conv, XI_CONVENTION);
        assert!(r < 1e-6);
        assert_eq!(conv.to_string(), "columns (x, v, x*v)");
        // every other candidate fails
        let others = XiConvention::candidates()
            .into_iter()
            .filter(|c| *c != XI_CONVENTION);
        for c in others {
            assert!(theta_pattern_residual(&c, &samples(5), 1e-4) > 1e-2, "{c}");
        }
    }

    #[test]
    fn flows_periodicity_and_agreement() {
        for t in samples(10) {
            let g = canonical_flows(&t, std::f64::consts::TAU).geodesic;
            assert!((g.x() - t.x()).norm() < 1e-12 && (g.v() - t.v()).norm() < 1e-12);
            let f = canonical_flows(&t, 0.7).fiber;
            assert_eq!(f.x(), t.x());
            let full = canonical_flows(&t, std::f64::consts::TAU).fiber;
            assert!((xi_frame(&full) - xi_frame(&t)).abs().max() < 1e-12);
            let s = 0.37;
            let cf = canonical_flows(&t, s);
            for (closed, field) in [
                (cf.geodesic, TangentField::E1),
                (cf.transverse, TangentField::E2),
                (cf.fiber, TangentField::E_PSI),
            ] {
                let ex = field.flow(&t, s);
                assert!((closed.x() - ex.x()).norm() < 1e-12);
                assert!((closed.v() - ex.v()).norm() < 1e-12);
                let dual = coframe(&t, &field.ambient(&t));
                assert!((0..3).all(|k| (dual[k] - field.0[k]).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn bracket_table() {
        use TangentField as F;
        assert_eq!(F::E1.bracket(&F::E2), F::E_PSI);
        assert_eq!(F::E2.bracket(&F::E_PSI), F::E1);
        assert_eq!(F::E_PSI.bracket(&F::E1), F::E2);
        for t in samples(10) {
            for (a, b) in [(F::E1, F::E2), (F::E2, F::E_PSI), (F::E_PSI, F::E1)] {
                let fd = lie_bracket_fd(&a, &b, &t, 1e-4);
                let exact = a.bracket(&b).ambient(&t);
                assert!((fd - exact).abs().max() < 1e-7);
            }
            // dψ(E₁, E₂) = −ψ([E₁, E₂]) = −1
            let psi = coframe(&t, &lie_bracket_fd(&F::E1, &F::E2, &t, 1e-4))[2];
            assert!((-psi + 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn structure_equations_converge_at_second_order() {
        let mut r = rng();
        let s = structure_samples(30, &mut r);
        assert!(structure_equation_residual(1e-3, &s).unwrap() < 1e-5);
        let order = structure_equation_order(1e-3, 3, &s).unwrap();
        assert!(order.within(3.5, 4.5), "{order:?}");
        assert!(structure_equation_residual(0.0, &s).is_err());
    }

    #[test]
    fn identity_solution_is_round() {
        let sol = LiouvilleSolution::identity();
        for t in samples(100) {
            let (s, eps) = metric_with_sign(&sol, &t).unwrap();
            assert!((s.p - 1.0).abs() < 1e-10 && (s.q - 1.0).abs() < 1e-10 && s.r.abs() < 1e-10);
            assert_eq!(eps, -1.0);
            assert!(beltrami(&s).unwrap().norm() < 1e-10);
        }
    }

    #[test]
    fn h_is_parallel_and_preserves_det() {
        let mut r = rng();
        let sol = LiouvilleSolution::random(&mut r);
        let h = 1e-4;
        for t in samples(10) {
            let hm = sol.h_matrix(&t);
            assert!((hm.determinant() - 1.0).abs() < 1e-10);
            assert!((hm - hm.transpose()).abs().max() < 1e-12);
            for field in [TangentField::E1, TangentField::E2, TangentField::E_PSI] {
                let dh = (sol.h_matrix(&field.flow(&t, h)) - sol.h_matrix(&field.flow(&t, -h)))
                    / (2.0 * h);
                let th = field.theta();
                let res = dh + th * hm + hm * th.transpose();
                assert!(res.abs().max() < 1e-6, "{}", res.abs().max());
            }
        }
    }

    #[test]
    fn sample_transforms_tensorially_under_fiber_rotation() {
        let mut r = rng();
        let sol = LiouvilleSolution::random(&mut r);
        for t in samples(20) {
            let phi = 0.83;
            let s = metric_from_solution(&sol, &t).unwrap();
            let s_rot = metric_from_solution(&sol, &canonical_flows(&t, phi).fiber).unwrap();
            let expect = s.rotated(phi);
            assert!((s_rot.p - expect.p).abs() < 1e-10 * s.p.abs().max(1.0));
            assert!((s_rot.q - expect.q).abs() < 1e-10 * s.q.abs().max(1.0));
            assert!((s_rot.r - expect.r).abs() < 1e-10 * s.p.abs().max(1.0));
        }
    }

    #[test]
    fn beltrami_examples() {
        assert_eq!(
            beltrami(&SphereMetricSample::round()).unwrap(),
            Complex64::new(0.0, 0.0)
        );
        let mu = beltrami(&SphereMetricSample::new(2.0, 1.0, 0.0).unwrap()).unwrap();
        assert!((mu.re - (3.0 - 8f64.sqrt())).abs() < 1e-12 && mu.im == 0.0);
        let mu = beltrami(&SphereMetricSample::new(1.0, 1.0, 0.5).unwrap()).unwrap();
        assert!(mu.re.abs() < 1e-15 && (mu.im - 1.0 / (2.0 + 3f64.sqrt())).abs() < 1e-12);
        assert!(beltrami(&SphereMetricSample {
            p: 1.0,
            q: 1.0,
            r: 2.0
        })
        .is_err());
    }

    #[test]
    fn chart_routes_agree() {
        let mut r = rng();
        let sol = LiouvilleSolution::random(&mut r);
        let metric = SphereMetric::Liouville(sol.clone());
        let rot = *Rotation3::new(Vector3::new(0.3, -0.5, 0.2)).matrix();
        for chart in [
            SphereChart::gnomonic(),
            SphereChart::rotated_gnomonic(rot).unwrap(),
            SphereChart::Stereographic,
        ] {
            let g = metric.chart_metric(&chart);
            for &(px, py) in &[(0.1, 0.2), (-0.7, 0.4), (0.9, -0.8)] {
                let closed = g.at(px, py).unwrap();
                let numeric = metric.chart_metric_at(&chart, px, py).unwrap();
                assert!(
                    (closed - numeric).abs().max() < 1e-10 * closed.abs().max(),
                    "{closed} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn round_gnomonic_and_stereographic_forms() {
        let round = SphereMetric::round();
        let g = round.chart_metric(&SphereChart::gnomonic());
        let (x, y) = (0.3, -0.4);
        let rho = 1.0 + x * x + y * y;
        let m = g.at(x, y).unwrap();
        assert!((m[(0, 0)] - (1.0 + y * y) / rho.powi(2)).abs() < 1e-14);
        assert!((m[(0, 1)] + x * y / rho.powi(2)).abs() < 1e-14);
        let s = round
            .chart_metric(&SphereChart::Stereographic)
            .at(x, y)
            .unwrap();
        let conf = 4.0 / (1.0 + x * x + y * y).powi(2);
        assert!((s - Matrix2::identity() * conf).abs().max() < 1e-14);
    }

    #[test]
    fn chart_round_trips() {
        let rot = *Rotation3::new(Vector3::new(-0.2, 0.6, 0.1)).matrix();
        for chart in [
            SphereChart::rotated_gnomonic(rot).unwrap(),
            SphereChart::Stereographic,
        ] {
            let x = chart.to_sphere(0.3, -0.6).unwrap();
            let back = chart.from_sphere(&x).unwrap();
            assert!((back[0] - 0.3).abs() < 1e-12 && (back[1] + 0.6).abs() < 1e-12);
            let jac = chart.jacobian(0.3, -0.6).unwrap();
            let v = chart
                .velocity_to_chart(&x, &(jac[0] * 0.5 - jac[1] * 0.25))
                .unwrap();
            assert!((v[0] - 0.5).abs() < 1e-12 && (v[1] + 0.25).abs() < 1e-12);
        }
        assert!(SphereChart::gnomonic().from_sphere(&-Vector3::z()).is_err());
        assert!(SphereChart::rotated_gnomonic(Matrix3::identity() * 2.0).is_err());
    }

    #[test]
    fn round_geodesics_are_great_circles() {
        let atlas = CubeAtlas::new(&SphereMetric::round());
        for t in samples(3) {
            let path = atlas.integrate(&t, std::f64::consts::TAU, 1e-3).unwrap();
            assert!(path.planarity(&t.w()) < 1e-8);
            assert!(path.chart_switches >= 3);
            // unit speed: back to the start after 2π
            let last = Vector3::from(path.samples.last().unwrap().1);
            assert!((last - t.x()).norm() < 1e-8);
        }
    }

    #[test]
    fn lat_long_grid_shape() {
        let g = lat_long_grid(&SphereMetric::round(), 4, 8).unwrap();
        assert_eq!(g.len(), 32);
        assert!(g
            .iter()
            .all(|s| s.mu[0].abs() < 1e-12 && s.mu[1].abs() < 1e-12));
        assert!(lat_long_grid(&SphereMetric::round(), 0, 8).is_err());
    }
}
