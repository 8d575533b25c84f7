//! Projective structures and the metrisability test.
//!
//! For a representative `∇` of `p` and a metric `g` the connection splits as
//!
//! ```text
//! ∇ = ᵍ∇ + g⊗B − Sym(β) + φ + Sym(ξ)
//! ```
//!
//! with `B = (3/4) tr(g♯ ⊗ (∇ − ᵍ∇)₀)`, `β` its `g`-dual, and
//! `φ = (∇ − ᵍ∇ − g⊗B)₀` trace free and `g`-symmetric. In a `g`-orthonormal
//! frame `φ` is determined by one complex number `a`; `b = (b₁ − i b₂)/2`
//! packages `β`. `p` is metrised by `g` iff `a ≡ 0` and `b ≡ 0`, and `a ≡ 0`
//! alone means `p` contains a Weyl connection for the conformal class `[g]`.

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::expr::{Expr, Tape};
use crate::grid;
use crate::tensor::{
    cubic_from_slots, levi_civita, sym, trace, trace_free, volume_derivative, Chart,
    ConnectionField, Cubic, CubicTensor, MetricField, OneForm, VectorField, VolumeForm,
};
use crate::Result;

/// Default verdict tolerance for the sup-norm residuals.
pub const DEFAULT_TOL: f64 = 1e-6;

/// A projective class, given by one representative connection on a chart.
#[derive(Clone, Debug)]
pub struct ProjectiveStructure {
    representative: ConnectionField,
    chart: Chart,
}

impl ProjectiveStructure {
    pub fn new(representative: ConnectionField, chart: Chart) -> Result<ProjectiveStructure> {
        chart.validate()?;
        Ok(ProjectiveStructure {
            representative,
            chart,
        })
    }

    /// The structure whose geodesics are the straight lines of the chart.
    pub fn flat(chart: Chart) -> Result<ProjectiveStructure> {
        ProjectiveStructure::new(ConnectionField::flat(), chart)
    }

    pub fn representative(&self) -> &ConnectionField {
        &self.representative
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    /// Same class, represented by `∇ + Sym(ξ)`.
    pub fn change_representative(&self, xi: &OneForm) -> ProjectiveStructure {
        ProjectiveStructure {
            representative: self.representative.shifted(&sym(xi)),
            chart: self.chart.clone(),
        }
    }

    pub fn with_chart(&self, chart: Chart) -> ProjectiveStructure {
        ProjectiveStructure {
            representative: self.representative.clone(),
            chart,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Equivalence {
    pub equivalent: bool,
    /// `ξ = (1/3) tr(∇ − ∇')`; realises `∇ − ∇' = Sym(ξ)` when `equivalent`.
    pub xi: OneForm,
    /// Grid sup of `|(∇ − ∇') − Sym(ξ)|`.
    pub residual: f64,
}

/// Two connections are projectively equivalent iff their difference is `Sym(ξ)`.
pub fn projectively_equivalent(
    p: &ProjectiveStructure,
    q: &ProjectiveStructure,
    tol: f64,
) -> Result<Equivalence> {
    p.chart.ensure_same(&q.chart)?;
    let d = p.representative.difference(&q.representative);
    let xi = trace(&d).scale(1.0 / 3.0);
    let residual = d.sub(&sym(&xi)).max_abs(&p.chart)?;
    Ok(Equivalence {
        equivalent: residual < tol,
        xi,
        residual,
    })
}

/// The unique representative of `p` preserving `σ`: `∇ + (1/3) Sym(α)` where `∇σ = α ⊗ σ`.
pub fn volume_normalize(p: &ProjectiveStructure, sigma: &VolumeForm) -> Result<ConnectionField> {
    sigma.validate(&p.chart)?;
    let alpha = volume_derivative(&p.representative, sigma);
    Ok(p.representative.shifted(&sym(&alpha.scale(1.0 / 3.0))))
}

/// Complex residual fields sampled on a chart grid.
#[derive(Clone, Debug)]
pub struct ResidualGrid {
    pub chart: Chart,
    pub points: Vec<(f64, f64)>,
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
}

impl ResidualGrid {
    pub fn sup_a(&self) -> f64 {
        self.a.iter().map(|z| z.norm()).fold(0.0, grid::nan_max)
    }

    pub fn sup_b(&self) -> f64 {
        self.b.iter().map(|z| z.norm()).fold(0.0, grid::nan_max)
    }
}

#[derive(Clone, Debug)]
pub struct WeylDecomposition {
    pub levi_civita: ConnectionField,
    pub b: VectorField,
    pub beta: OneForm,
    pub phi: CubicTensor,
    /// `ᵍ∇ + g⊗B − Sym(β)`.
    pub weyl: ConnectionField,
    pub residuals: ResidualGrid,
    metric: MetricField,
}

impl WeylDecomposition {
    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    /// `(a, b)` at an arbitrary chart point.
    pub fn residuals_at(&self, x: f64, y: f64) -> Result<(Complex64, Complex64)> {
        let tape = residual_tape(&self.metric, &self.phi, &self.beta);
        let v = tape.eval(x, y)?;
        Ok(residuals_from_values(&v))
    }
}

pub fn weyl_decompose(p: &ProjectiveStructure, g: &MetricField) -> Result<WeylDecomposition> {
    g.validate(&p.chart)?;
    let lc = levi_civita(g);
    let d = p.representative.difference(&lc);
    let d0 = trace_free(&d);
    let inv = g.inverse();
    let b = VectorField([0, 1].map(|i| {
        let mut s = Expr::zero();
        for j in 0..2 {
            for k in 0..2 {
                s = s + &inv[j][k] * d0.get(i, j, k);
            }
        }
        s * 0.75
    }));
    let beta = g.lower(&b);
    let g_b = g.tensor_vector(&b);
    let phi = trace_free(&d.sub(&g_b));
    let weyl = lc.shifted(&g_b.sub(&sym(&beta)));

    let tape = residual_tape(g, &phi, &beta);
    let points = p.chart.points();
    let ab = grid::map_points(&points, &tape, |_, _, v| Ok(residuals_from_values(v)))?;
    let (a, bb) = ab.into_iter().unzip();
    Ok(WeylDecomposition {
        levi_civita: lc,
        b,
        beta,
        phi,
        weyl,
        residuals: ResidualGrid {
            chart: p.chart.clone(),
            points,
            a,
            b: bb,
        },
        metric: g.clone(),
    })
}

pub fn residuals_ab(p: &ProjectiveStructure, g: &MetricField) -> Result<ResidualGrid> {
    Ok(weyl_decompose(p, g)?.residuals)
}

// g11, g12, g22, six φ slots, β1, β2
fn residual_tape(g: &MetricField, phi: &CubicTensor, beta: &OneForm) -> Tape {
    let mut exprs = g.components().to_vec();
    exprs.extend(phi.components());
    exprs.extend(beta.0.iter().cloned());
    Tape::compile(&exprs)
}

fn residuals_from_values(v: &[f64]) -> (Complex64, Complex64) {
    let g = Matrix2::new(v[0], v[1], v[1], v[2]);
    let phi = cubic_from_slots(&v[3..9]);
    let u = orthonormal_frame(&g);
    residuals_in_frame(&u, &phi, &[v[9], v[10]])
}

/// Oriented `g`-orthonormal frame (columns are the frame vectors in chart
/// coordinates), dual to the coframe obtained by Gram–Schmidt from `dx`, `dy`
/// in the inverse metric.
pub fn orthonormal_frame(g: &Matrix2<f64>) -> Matrix2<f64> {
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    let inv = Matrix2::new(g[(1, 1)], -g[(0, 1)], -g[(1, 0)], g[(0, 0)]) / det;
    let dual = |a: [f64; 2], b: [f64; 2]| {
        a[0] * (inv[(0, 0)] * b[0] + inv[(0, 1)] * b[1])
            + a[1] * (inv[(1, 0)] * b[0] + inv[(1, 1)] * b[1])
    };
    let n1 = dual([1.0, 0.0], [1.0, 0.0]).sqrt();
    let w1 = [1.0 / n1, 0.0];
    let proj = dual([0.0, 1.0], w1);
    let raw = [-proj * w1[0], 1.0];
    let n2 = dual(raw, raw).sqrt();
    let w2 = [raw[0] / n2, raw[1] / n2];
    // Rows of the coframe are w1, w2 (w2 has positive dy part, so w1∧w2 > 0).
    let coframe = Matrix2::new(w1[0], w1[1], w2[0], w2[1]);
    coframe
        .try_inverse()
        .expect("coframe of a positive-definite metric is invertible")
}

/// `A^a_{bc} = (u⁻¹)^a_i φ^i_{jk} u^j_b u^k_c`.
pub fn frame_components(u: &Matrix2<f64>, phi: &Cubic) -> Cubic {
    let uinv = u.try_inverse().expect("frame must be invertible");
    let mut out = [[[0.0; 2]; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                let mut s = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        for k in 0..2 {
                            s += uinv[(a, i)] * phi[i][j][k] * u[(j, b)] * u[(k, c)];
                        }
                    }
                }
                out[a][b][c] = s;
            }
        }
    }
    out
}

/// `a = A¹₁₁ + i A²₂₂` and `b = (b₁ − i b₂)/2` in the frame `u`.
pub fn residuals_in_frame(
    u: &Matrix2<f64>,
    phi: &Cubic,
    beta: &[f64; 2],
) -> (Complex64, Complex64) {
    let comps = frame_components(u, phi);
    let b1 = beta[0] * u[(0, 0)] + beta[1] * u[(1, 0)];
    let b2 = beta[0] * u[(0, 1)] + beta[1] * u[(1, 1)];
    (
        Complex64::new(comps[0][0][0], comps[1][1][1]),
        Complex64::new(0.5 * b1, -0.5 * b2),
    )
}

/// The orthonormal-frame components of a trace-free, `g`-symmetric tensor
/// with residual `a = a₁ + i a₂`:
///
/// ```text
/// A¹₁₁ =  a₁   A¹₁₂ = −a₂   A¹₂₂ = −a₁
/// A²₁₁ = −a₂   A²₁₂ = −a₁   A²₂₂ =  a₂
/// ```
///
/// Trace-freeness gives `A¹₁₁ + A²₁₂ = 0` and `A¹₂₁ + A²₂₂ = 0`; symmetry
/// with respect to the identity metric gives `A¹₂ₖ = A²₁ₖ`.
pub fn phi_from_a(a: Complex64) -> Cubic {
    let (a1, a2) = (a.re, a.im);
    cubic_from_slots(&[a1, -a2, -a1, -a2, -a1, a2])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetrisabilityReport {
    /// Both residuals below `tol`: `g` metrises `p`.
    pub verdict: bool,
    pub sup_a: f64,
    pub sup_b: f64,
    /// `sup|a| < tol`: `p` contains a Weyl connection for `[g]`.
    pub weyl_only_verdict: bool,
    pub grid: [usize; 2],
    pub tol: f64,
}

pub fn check_metrisable_by(
    p: &ProjectiveStructure,
    g: &MetricField,
    tol: f64,
) -> Result<MetrisabilityReport> {
    let residuals = residuals_ab(p, g)?;
    Ok(report_from_residuals(&residuals, tol))
}

pub fn report_from_residuals(residuals: &ResidualGrid, tol: f64) -> MetrisabilityReport {
    let (sup_a, sup_b) = (residuals.sup_a(), residuals.sup_b());
    MetrisabilityReport {
        verdict: sup_a < tol && sup_b < tol,
        sup_a,
        sup_b,
        weyl_only_verdict: sup_a < tol,
        grid: [residuals.chart.nx, residuals.chart.ny],
        tol,
    }
}

/// Grid sup of the difference between the `dA_g`-preserving representative
/// of `p` and its assembly `ᵍ∇ + g⊗B − (1/3) Sym(β) + φ` from the decomposition.
pub fn normalized_representative_check(p: &ProjectiveStructure, g: &MetricField) -> Result<f64> {
    let lhs = volume_normalize(p, &g.area_form())?;
    let d = weyl_decompose(p, g)?;
    let rhs = d
        .levi_civita
        .shifted(&g.tensor_vector(&d.b))
        .shifted(&sym(&d.beta).scale(-1.0 / 3.0))
        .shifted(&d.phi);
    lhs.difference(&rhs).max_abs(&p.chart)
}
