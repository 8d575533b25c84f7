//! Pointwise evaluation of the tautological form `ω`, the connection form
//! `θ` and `ζ = (θ¹₁ − θ²₂) + i(θ¹₂ + θ²₁)` on the oriented frame bundle,
//! and sweeps that check their equivariance and their behaviour under a
//! projective change of connection.
//!
//! A frame at `x` is an invertible `u` (columns are the frame vectors in chart
//! coordinates). A tangent vector to the frame bundle is a pair `(ẋ, u̇)`.
//! Right translation by `a ∈ GL⁺(2)` maps `(u; ẋ, u̇)` to `(ua; ẋ, u̇a)`.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::nan_max;
use crate::tensor::{sym, Chart, ConnectionField, Cubic, OneForm};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePoint {
    pub x: [f64; 2],
    pub u: Matrix2<f64>,
}

impl FramePoint {
    pub fn new(x: [f64; 2], u: Matrix2<f64>) -> Result<FramePoint> {
        let det = u.determinant();
        if det > 0.0 && det.is_finite() {
            Ok(FramePoint { x, u })
        } else {
            Err(Error::SingularFrame { det })
        }
    }

    fn u_inv(&self) -> Matrix2<f64> {
        self.u
            .try_inverse()
            .expect("frame invertible by construction")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameTangent {
    pub base: FramePoint,
    pub x_dot: Vector2<f64>,
    pub u_dot: Matrix2<f64>,
}

impl FrameTangent {
    /// The fundamental vector field of `y ∈ gl(2)` at `base`: `ẋ = 0`, `u̇ = u y`.
    pub fn vertical(base: FramePoint, y: &Matrix2<f64>) -> FrameTangent {
        FrameTangent {
            base,
            x_dot: Vector2::zeros(),
            u_dot: base.u * y,
        }
    }

    /// Push-forward under right translation by `a`.
    pub fn right_translate(&self, a: &Matrix2<f64>) -> Result<FrameTangent> {
        Ok(FrameTangent {
            base: FramePoint::new(self.base.x, self.base.u * a)?,
            x_dot: self.x_dot,
            u_dot: self.u_dot * a,
        })
    }
}

/// `ω(w) = u⁻¹ ẋ`.
pub fn taut_form(w: &FrameTangent) -> Vector2<f64> {
    w.base.u_inv() * w.x_dot
}

/// `θ(w) = u⁻¹ (u̇ + Γ(ẋ) u)` with `Γ(ẋ)^k_m = Γ^k_{lm} ẋ^l`, where `gamma`
/// holds the Christoffel symbols at `w.base.x`.
pub fn connection_form(gamma: &Cubic, w: &FrameTangent) -> Matrix2<f64> {
    let mut gx = Matrix2::zeros();
    for k in 0..2 {
        for m in 0..2 {
            gx[(k, m)] = gamma[k][0][m] * w.x_dot[0] + gamma[k][1][m] * w.x_dot[1];
        }
    }
    w.base.u_inv() * (w.u_dot + gx * w.base.u)
}

/// `ζ = (θ¹₁ − θ²₂) + i (θ¹₂ + θ²₁)`.
pub fn zeta(theta: &Matrix2<f64>) -> Complex64 {
    Complex64::new(theta[(0, 0)] - theta[(1, 1)], theta[(0, 1)] + theta[(1, 0)])
}

/// `ω¹ + i ω²`.
pub fn omega_complex(omega: &Vector2<f64>) -> Complex64 {
    Complex64::new(omega[0], omega[1])
}

/// `r e^{iφ}` as the real matrix `[[r cos φ, −r sin φ], [r sin φ, r cos φ]]`.
pub fn glc_element(r: f64, phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(r * c, -r * s, r * s, r * c)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    /// `R_a^* ω = a⁻¹ ω` over random `a ∈ GL⁺(2)`.
    pub omega: f64,
    /// `R_a^* θ = a⁻¹ θ a`.
    pub theta: f64,
    /// `(R_{re^{iφ}})^* ω = r⁻¹ e^{−iφ} ω` (complex form of the first identity).
    pub omega_glc: f64,
    /// `(R_{re^{iφ}})^* ζ = e^{−2iφ} ζ`.
    pub zeta_glc: f64,
    /// `θ(Y_y) = y` on vertical tangents.
    pub vertical: f64,
}

impl EquivarianceReport {
    pub fn max(&self) -> f64 {
        [
            self.omega,
            self.theta,
            self.omega_glc,
            self.zeta_glc,
            self.vertical,
        ]
        .into_iter()
        .fold(0.0, nan_max)
    }
}

/// A random element of `GL⁺(2)` with singular values in `[0.5, 2]`.
pub fn random_gl_plus<R: Rng + ?Sized>(rng: &mut R) -> Matrix2<f64> {
    let rot = |t: f64| Matrix2::new(t.cos(), -t.sin(), t.sin(), t.cos());
    let s = Matrix2::new(
        rng.random_range(0.5..2.0),
        0.0,
        0.0,
        rng.random_range(0.5..2.0),
    );
    let t1 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let t2 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    rot(t1) * s * rot(t2)
}

fn random_matrix<R: Rng + ?Sized>(rng: &mut R) -> Matrix2<f64> {
    Matrix2::from_fn(|_, _| rng.random_range(-1.0..1.0))
}

fn random_tangent<R: Rng + ?Sized>(chart: &Chart, rng: &mut R) -> FrameTangent {
    let x = [
        rng.random_range(chart.x_range[0]..=chart.x_range[1]),
        rng.random_range(chart.y_range[0]..=chart.y_range[1]),
    ];
    FrameTangent {
        base: FramePoint::new(x, random_gl_plus(rng)).expect("GL+ sample"),
        x_dot: Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        u_dot: random_matrix(rng),
    }
}

/// Checks the right-equivariance identities of `ω`, `θ` and `ζ` at `trials`
/// random (frame, tangent, group element) samples. Pure linear algebra.
pub fn equivariance_sweep<R: Rng + ?Sized>(
    gamma: &ConnectionField,
    chart: &Chart,
    trials: usize,
    rng: &mut R,
) -> Result<EquivarianceReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let compiled = gamma.compile();
    let mut rep = EquivarianceReport::default();
    for _ in 0..trials {
        let w = random_tangent(chart, rng);
        let g = compiled.at(w.base.x[0], w.base.x[1])?;
        let omega = taut_form(&w);
        let theta = connection_form(&g, &w);

        let a = random_gl_plus(rng);
        let a_inv = a.try_inverse().expect("GL+ sample");
        let wa = w.right_translate(&a)?;
        rep.omega = nan_max(rep.omega, (taut_form(&wa) - a_inv * omega).abs().max());
        rep.theta = nan_max(
            rep.theta,
            (connection_form(&g, &wa) - a_inv * theta * a).abs().max(),
        );

        let r = rng.random_range(0.25..4.0);
        let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let wc = w.right_translate(&glc_element(r, phi))?;
        let omega_c = omega_complex(&taut_form(&wc));
        let expect_omega = omega_complex(&omega) * Complex64::from_polar(1.0 / r, -phi);
        rep.omega_glc = nan_max(rep.omega_glc, (omega_c - expect_omega).norm());
        let zeta_c = zeta(&connection_form(&g, &wc));
        let expect_zeta = zeta(&theta) * Complex64::from_polar(1.0, -2.0 * phi);
        rep.zeta_glc = nan_max(rep.zeta_glc, (zeta_c - expect_zeta).norm());

        let y = random_matrix(rng);
        let v = FrameTangent::vertical(w.base, &y);
        rep.vertical = nan_max(rep.vertical, (connection_form(&g, &v) - y).abs().max());
    }
    Ok(rep)
}

/// Max over random frame tangents of `|ζ' − ζ − (x₁ + i x₂) ω|`, where `ζ'`
/// comes from `∇ + Sym(ξ)` and `(x₁, x₂) = uᵗ ξ` are the frame components of `ξ`.
pub fn projective_change_check<R: Rng + ?Sized>(
    gamma: &ConnectionField,
    xi: &OneForm,
    chart: &Chart,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let base = gamma.compile();
    let shifted = gamma.shifted(&sym(xi)).compile();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let w = random_tangent(chart, rng);
        let [x, y] = w.base.x;
        let r = projective_change_residual(&base.at(x, y)?, &shifted.at(x, y)?, &xi.at(x, y)?, &w);
        worst = nan_max(worst, r);
    }
    Ok(worst)
}

/// The residual of the projective-change identity at one tangent.
pub fn projective_change_residual(
    gamma: &Cubic,
    gamma_shifted: &Cubic,
    xi: &[f64; 2],
    w: &FrameTangent,
) -> f64 {
    let z = zeta(&connection_form(gamma, w));
    let z_shifted = zeta(&connection_form(gamma_shifted, w));
    let u = w.base.u;
    let xs = Complex64::new(
        u[(0, 0)] * xi[0] + u[(1, 0)] * xi[1],
        u[(0, 1)] * xi[0] + u[(1, 1)] * xi[1],
    );
    (z_shifted - z - xs * omega_complex(&taut_form(w))).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::CubicTensor;
    use crate::Expr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_gamma() -> ConnectionField {
        ConnectionField::from_components(
            ["x*y", "sin(x)", "0.5 - y", "cos(y)", "x^2", "0.3*x*y"]
                .map(|s| Expr::parse(s).unwrap()),
        )
    }

    #[test]
    fn taut_form_examples() {
        let base = FramePoint::new([0.0, 0.0], Matrix2::identity()).unwrap();
        let w = FrameTangent {
            base,
            x_dot: Vector2::new(1.0, 0.0),
            u_dot: Matrix2::zeros(),
        };
        assert_eq!(taut_form(&w), Vector2::new(1.0, 0.0));
        let w2 = FrameTangent {
            base: FramePoint::new([0.0, 0.0], Matrix2::identity() * 2.0).unwrap(),
            ..w
        };
        assert_eq!(taut_form(&w2), Vector2::new(0.5, 0.0));
        assert!(FramePoint::new([0.0, 0.0], Matrix2::new(0.0, 1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn connection_form_examples() {
        let flat = [[[0.0; 2]; 2]; 2];
        let base = FramePoint::new([0.3, 0.1], Matrix2::identity()).unwrap();
        let w = FrameTangent {
            base,
            x_dot: Vector2::new(0.7, -2.0),
            u_dot: Matrix2::zeros(),
        };
        assert_eq!(connection_form(&flat, &w), Matrix2::zeros());

        let y = Matrix2::new(0.0, -1.0, 1.0, 0.0);
        let g = sample_gamma().at(0.3, 0.1).unwrap();
        let u = Matrix2::new(1.2, 0.3, -0.4, 0.9);
        let v = FrameTangent::vertical(FramePoint::new([0.3, 0.1], u).unwrap(), &y);
        assert!((connection_form(&g, &v) - y).abs().max() < 1e-15);
    }

    #[test]
    fn zeta_examples() {
        assert_eq!(zeta(&Matrix2::identity()), Complex64::new(0.0, 0.0));
        assert_eq!(
            zeta(&Matrix2::new(1.0, 0.0, 0.0, -1.0)),
            Complex64::new(2.0, 0.0)
        );
        assert_eq!(
            zeta(&Matrix2::new(0.0, 1.0, 1.0, 0.0)),
            Complex64::new(0.0, 2.0)
        );
    }

    #[test]
    fn glc_special_elements() {
        let g = sample_gamma().at(0.2, 0.4).unwrap();
        let w = FrameTangent {
            base: FramePoint::new([0.2, 0.4], Matrix2::new(1.0, 0.2, -0.3, 0.8)).unwrap(),
            x_dot: Vector2::new(0.4, 1.1),
            u_dot: Matrix2::new(0.1, -0.2, 0.5, 0.3),
        };
        let omega = omega_complex(&taut_form(&w));
        let z = zeta(&connection_form(&g, &w));

        // quarter turn: ω ↦ −i ω, ζ ↦ −ζ
        let wq = w
            .right_translate(&glc_element(1.0, std::f64::consts::FRAC_PI_2))
            .unwrap();
        assert!(
            (omega_complex(&taut_form(&wq)) - omega * Complex64::new(0.0, -1.0)).norm() < 1e-14
        );
        assert!((zeta(&connection_form(&g, &wq)) + z).norm() < 1e-14);

        // dilation by 2: ω ↦ ω/2, ζ unchanged
        let wd = w.right_translate(&glc_element(2.0, 0.0)).unwrap();
        assert!((omega_complex(&taut_form(&wd)) - omega * 0.5).norm() < 1e-15);
        assert!((zeta(&connection_form(&g, &wd)) - z).norm() < 1e-15);

        let wi = w.right_translate(&Matrix2::identity()).unwrap();
        assert_eq!(taut_form(&wi), taut_form(&w));
        assert_eq!(connection_form(&g, &wi), connection_form(&g, &w));
    }

    #[test]
    fn equivariance_holds_to_roundoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let chart = Chart::square(1.0, 4).unwrap();
        let rep = equivariance_sweep(&sample_gamma(), &chart, 100, &mut rng).unwrap();
        assert!(rep.max() < 1e-12, "{rep:?}");
        assert!(equivariance_sweep(&sample_gamma(), &chart, 0, &mut rng).is_err());
    }

    #[test]
    fn projective_change_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let chart = Chart::square(1.0, 4).unwrap();
        let xi = OneForm([
            Expr::parse("x - y^2").unwrap(),
            Expr::parse("exp(0.5*x)").unwrap(),
        ]);
        let r = projective_change_check(&sample_gamma(), &xi, &chart, 100, &mut rng).unwrap();
        assert!(r < 1e-10, "{r}");
        assert!(
            projective_change_check(&sample_gamma(), &OneForm::zero(), &chart, 10, &mut rng)
                .unwrap()
                == 0.0
        );
    }

    #[test]
    fn projective_change_hand_expansion() {
        // u = I, ẋ = (1, 0): Sym(ξ)(ẋ) = [[2ξ₁, ξ₂], [0, ξ₁]], so ζ' − ζ = ξ₁ + i ξ₂.
        let xi = [0.6, -0.35];
        let flat = [[[0.0; 2]; 2]; 2];
        let shifted = CubicTensor::constant([0.0; 6])
            .add(&sym(&OneForm::constant(xi)))
            .at(0.0, 0.0)
            .unwrap();
        let w = FrameTangent {
            base: FramePoint::new([0.0, 0.0], Matrix2::identity()).unwrap(),
            x_dot: Vector2::new(1.0, 0.0),
            u_dot: Matrix2::zeros(),
        };
        let theta = connection_form(&shifted, &w);
        assert_eq!(theta, Matrix2::new(2.0 * xi[0], xi[1], 0.0, xi[0]));
        assert_eq!(zeta(&theta), Complex64::new(xi[0], xi[1]));
        assert!(projective_change_residual(&flat, &shifted, &xi, &w) < 1e-12);

        // vertical tangents see no change at all
        let v = FrameTangent::vertical(w.base, &Matrix2::new(0.3, -0.1, 0.7, 0.2));
        assert_eq!(
            zeta(&connection_form(&shifted, &v)),
            zeta(&connection_form(&flat, &v))
        );
    }
}
