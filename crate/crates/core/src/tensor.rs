//! Charts and tensor fields on them, with the algebra of connection
//! differences: `Sym`, trace, trace-free projection, Levi-Civita
//! connections, curvature and the action of a connection on area forms.
//!
//! Index conventions: `CubicTensor` and `ConnectionField` components are
//! stored as `c[i][j][k]` for `A^i_{jk}` (upper index first), symmetric in
//! `(j, k)`. Indices run over `0 => x`, `1 => y`.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::expr::{Expr, Tape, Var};
use crate::grid;
use crate::{Error, Result};

/// Numeric value of a cubic tensor (or Christoffel symbols) at a point.
pub type Cubic = [[[f64; 2]; 2]; 2];

/// `R^i_{jkl}` at a point, stored as `r[i][j][k][l]`.
pub type Riemann = [[[[f64; 2]; 2]; 2]; 2];

/// The six independent `(i, j, k)` slots with `j <= k`, in storage order.
pub const CUBIC_SLOTS: [(usize, usize, usize); 6] = [
    (0, 0, 0),
    (0, 0, 1),
    (0, 1, 1),
    (1, 0, 0),
    (1, 0, 1),
    (1, 1, 1),
];

/// A closed coordinate rectangle with the grid used for residual sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

impl Chart {
    pub const DEFAULT_GRID: usize = 64;

    pub fn new(x_range: [f64; 2], y_range: [f64; 2], nx: usize, ny: usize) -> Result<Chart> {
        let finite = x_range.iter().chain(&y_range).all(|v| v.is_finite());
        if !finite || x_range[0] >= x_range[1] || y_range[0] >= y_range[1] {
            return Err(Error::InvalidChart(format!(
                "need x0 < x1 and y0 < y1, got {x_range:?} x {y_range:?}"
            )));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidChart(format!(
                "grid needs at least 2 x 2 points, got {nx} x {ny}"
            )));
        }
        Ok(Chart {
            x_range,
            y_range,
            nx,
            ny,
        })
    }

    /// `[-half, half]^2` with an `n x n` grid.
    pub fn square(half: f64, n: usize) -> Result<Chart> {
        Chart::new([-half, half], [-half, half], n, n)
    }

    pub fn with_grid(&self, nx: usize, ny: usize) -> Result<Chart> {
        Chart::new(self.x_range, self.y_range, nx, ny)
    }

    pub fn validate(&self) -> Result<()> {
        Chart::new(self.x_range, self.y_range, self.nx, self.ny).map(|_| ())
    }

    /// Grid points, `x` varying fastest.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let lerp = |r: [f64; 2], i: usize, n: usize| {
            if i + 1 == n {
                r[1]
            } else {
                r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64
            }
        };
        let mut pts = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            let y = lerp(self.y_range, j, self.ny);
            for i in 0..self.nx {
                pts.push((lerp(self.x_range, i, self.nx), y));
            }
        }
        pts
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_range[0] && x <= self.x_range[1] && y >= self.y_range[0] && y <= self.y_range[1]
    }

    pub fn ensure_same(&self, other: &Chart) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::ChartMismatch)
        }
    }
}

/// A 1-form `ξ = ξ_1 dx + ξ_2 dy`.
#[derive(Clone, Debug)]
pub struct OneForm(pub [Expr; 2]);

/// A vector field `B = B^1 ∂_x + B^2 ∂_y`.
#[derive(Clone, Debug)]
pub struct VectorField(pub [Expr; 2]);

impl OneForm {
    pub fn zero() -> OneForm {
        OneForm([Expr::zero(), Expr::zero()])
    }

    pub fn constant(c: [f64; 2]) -> OneForm {
        OneForm([Expr::num(c[0]), Expr::num(c[1])])
    }

    pub fn scale(&self, s: f64) -> OneForm {
        OneForm([&self.0[0] * s, &self.0[1] * s])
    }

    pub fn at(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        Ok([self.0[0].eval(x, y)?, self.0[1].eval(x, y)?])
    }

    /// The exterior derivative of a function, `df`.
    pub fn differential(f: &Expr) -> OneForm {
        OneForm([f.diff(Var::X), f.diff(Var::Y)])
    }
}

impl VectorField {
    pub fn zero() -> VectorField {
        VectorField([Expr::zero(), Expr::zero()])
    }

    pub fn at(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        Ok([self.0[0].eval(x, y)?, self.0[1].eval(x, y)?])
    }
}

/// An area form `σ = s dx∧dy`; `s` must be positive on the chart.
#[derive(Clone, Debug)]
pub struct VolumeForm {
    pub density: Expr,
}

impl VolumeForm {
    pub fn new(density: Expr) -> VolumeForm {
        VolumeForm { density }
    }

    /// `dx∧dy`.
    pub fn standard() -> VolumeForm {
        VolumeForm::new(Expr::one())
    }

    pub fn validate(&self, chart: &Chart) -> Result<()> {
        grid::sweep(chart, std::slice::from_ref(&self.density), |x, y, v| {
            if v[0] > 0.0 {
                Ok(())
            } else {
                Err(Error::NonPositiveVolume { x, y, value: v[0] })
            }
        })
        .map(|_| ())
    }
}

/// A section of `S²(T*M) ⊗ TM`: the difference of two torsion-free connections.
#[derive(Clone, Debug)]
pub struct CubicTensor {
    c: [[[Expr; 2]; 2]; 2],
}

impl CubicTensor {
    /// Builds the tensor from `f(i, j, k)` evaluated for `j <= k`; the
    /// remaining slots are mirrored, so the result is symmetric by construction.
    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> Expr) -> CubicTensor {
        let mut c: [[[Expr; 2]; 2]; 2] = Default::default();
        for &(i, j, k) in &CUBIC_SLOTS {
            let e = f(i, j, k);
            c[i][j][k] = e.clone();
            c[i][k][j] = e;
        }
        CubicTensor { c }
    }

    /// Components in [`CUBIC_SLOTS`] order.
    pub fn from_components(components: [Expr; 6]) -> CubicTensor {
        let mut it = components.into_iter();
        CubicTensor::from_fn(|_, _, _| it.next().unwrap())
    }

    pub fn constant(values: [f64; 6]) -> CubicTensor {
        CubicTensor::from_components(values.map(Expr::num))
    }

    pub fn zero() -> CubicTensor {
        CubicTensor::from_fn(|_, _, _| Expr::zero())
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> &Expr {
        &self.c[i][j][k]
    }

    pub fn components(&self) -> [Expr; 6] {
        CUBIC_SLOTS.map(|(i, j, k)| self.c[i][j][k].clone())
    }

    pub fn add(&self, other: &CubicTensor) -> CubicTensor {
        CubicTensor::from_fn(|i, j, k| &self.c[i][j][k] + &other.c[i][j][k])
    }

    pub fn sub(&self, other: &CubicTensor) -> CubicTensor {
        CubicTensor::from_fn(|i, j, k| &self.c[i][j][k] - &other.c[i][j][k])
    }

    pub fn scale(&self, s: f64) -> CubicTensor {
        CubicTensor::from_fn(|i, j, k| &self.c[i][j][k] * s)
    }

    pub fn compile(&self) -> CompiledCubic {
        CompiledCubic {
            tape: Tape::compile(&self.components()),
        }
    }

    pub fn at(&self, x: f64, y: f64) -> Result<Cubic> {
        self.compile().at(x, y)
    }

    /// Grid sup-norm of the components.
    pub fn max_abs(&self, chart: &Chart) -> Result<f64> {
        grid::sup(chart, &self.components(), |_, _, v| {
            Ok(v.iter().map(|c| c.abs()).fold(0.0, grid::nan_max))
        })
    }
}

/// A [`CubicTensor`] flattened for repeated pointwise evaluation.
#[derive(Clone, Debug)]
pub struct CompiledCubic {
    tape: Tape,
}

impl CompiledCubic {
    pub fn at(&self, x: f64, y: f64) -> Result<Cubic> {
        let mut scratch = Vec::new();
        let mut out = [0.0; 6];
        self.tape.eval_into(x, y, &mut scratch, &mut out)?;
        Ok(cubic_from_slots(&out))
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }
}

pub fn cubic_from_slots(v: &[f64]) -> Cubic {
    let mut c = [[[0.0; 2]; 2]; 2];
    for (n, &(i, j, k)) in CUBIC_SLOTS.iter().enumerate() {
        c[i][j][k] = v[n];
        c[i][k][j] = v[n];
    }
    c
}

/// Christoffel symbols `Γ^i_{jk}` of a torsion-free connection.
#[derive(Clone, Debug)]
pub struct ConnectionField {
    coeffs: CubicTensor,
}

impl ConnectionField {
    pub fn new(coeffs: CubicTensor) -> ConnectionField {
        ConnectionField { coeffs }
    }

    /// The flat connection of the chart coordinates.
    pub fn flat() -> ConnectionField {
        ConnectionField::new(CubicTensor::zero())
    }

    pub fn from_components(components: [Expr; 6]) -> ConnectionField {
        ConnectionField::new(CubicTensor::from_components(components))
    }

    pub fn coeffs(&self) -> &CubicTensor {
        &self.coeffs
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> &Expr {
        self.coeffs.get(i, j, k)
    }

    /// `∇ + A`.
    pub fn shifted(&self, a: &CubicTensor) -> ConnectionField {
        ConnectionField::new(self.coeffs.add(a))
    }

    /// `∇ - ∇'`.
    pub fn difference(&self, other: &ConnectionField) -> CubicTensor {
        self.coeffs.sub(&other.coeffs)
    }

    pub fn compile(&self) -> CompiledCubic {
        self.coeffs.compile()
    }

    pub fn at(&self, x: f64, y: f64) -> Result<Cubic> {
        self.coeffs.at(x, y)
    }
}

/// A Riemannian metric `g_ij dx^i dx^j`, symmetric by construction.
#[derive(Clone, Debug)]
pub struct MetricField {
    g: [[Expr; 2]; 2],
}

impl MetricField {
    pub fn new(g11: Expr, g12: Expr, g22: Expr) -> MetricField {
        MetricField {
            g: [[g11, g12.clone()], [g12, g22]],
        }
    }

    pub fn euclidean() -> MetricField {
        MetricField::new(Expr::one(), Expr::zero(), Expr::one())
    }

    /// `e^{2f}`-style conformal rescaling by an arbitrary positive factor.
    pub fn conformal(&self, factor: &Expr) -> MetricField {
        MetricField::new(
            factor * &self.g[0][0],
            factor * &self.g[0][1],
            factor * &self.g[1][1],
        )
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.g[i][j]
    }

    pub fn components(&self) -> [Expr; 3] {
        [
            self.g[0][0].clone(),
            self.g[0][1].clone(),
            self.g[1][1].clone(),
        ]
    }

    pub fn det(&self) -> Expr {
        &self.g[0][0] * &self.g[1][1] - self.g[0][1].square()
    }

    /// `g^{ij}`.
    pub fn inverse(&self) -> [[Expr; 2]; 2] {
        let inv_det = 1.0 / self.det();
        let g12 = -(&inv_det * &self.g[0][1]);
        [
            [&inv_det * &self.g[1][1], g12.clone()],
            [g12, &inv_det * &self.g[0][0]],
        ]
    }

    /// `dA_g = sqrt(det g) dx∧dy`.
    pub fn area_form(&self) -> VolumeForm {
        VolumeForm::new(self.det().sqrt())
    }

    pub fn at(&self, x: f64, y: f64) -> Result<Matrix2<f64>> {
        let g11 = self.g[0][0].eval(x, y)?;
        let g12 = self.g[0][1].eval(x, y)?;
        let g22 = self.g[1][1].eval(x, y)?;
        Ok(Matrix2::new(g11, g12, g12, g22))
    }

    /// Rejects metrics that fail to be positive definite at some grid point.
    pub fn validate(&self, chart: &Chart) -> Result<()> {
        grid::sweep(chart, &self.components(), |x, y, v| {
            let det = v[0] * v[2] - v[1] * v[1];
            if v[0] > 0.0 && det > 0.0 {
                Ok(())
            } else {
                Err(Error::NotPositiveDefinite {
                    x,
                    y,
                    g11: v[0],
                    det,
                })
            }
        })
        .map(|_| ())
    }

    /// `β_i = g_ij B^j`.
    pub fn lower(&self, b: &VectorField) -> OneForm {
        OneForm([0, 1].map(|i| &self.g[i][0] * &b.0[0] + &self.g[i][1] * &b.0[1]))
    }

    /// `B^i = g^{ij} β_j`.
    pub fn raise(&self, beta: &OneForm) -> VectorField {
        let inv = self.inverse();
        VectorField([0, 1].map(|i| &inv[i][0] * &beta.0[0] + &inv[i][1] * &beta.0[1]))
    }

    /// `(g ⊗ B)^i_{jk} = g_{jk} B^i`.
    pub fn tensor_vector(&self, b: &VectorField) -> CubicTensor {
        CubicTensor::from_fn(|i, j, k| &self.g[j][k] * &b.0[i])
    }
}

/// `Sym(ξ)^i_{jk} = δ^i_j ξ_k + δ^i_k ξ_j`.
pub fn sym(xi: &OneForm) -> CubicTensor {
    CubicTensor::from_fn(|i, j, k| {
        let mut e = Expr::zero();
        if i == j {
            e = e + &xi.0[k];
        }
        if i == k {
            e = e + &xi.0[j];
        }
        e
    })
}

/// `(tr A)_j = A^k_{jk}`.
pub fn trace(a: &CubicTensor) -> OneForm {
    OneForm([0, 1].map(|j| a.get(0, j, 0) + a.get(1, j, 1)))
}

/// `A_0 = A - (1/3) Sym(tr A)`.
pub fn trace_free(a: &CubicTensor) -> CubicTensor {
    a.sub(&sym(&trace(a)).scale(1.0 / 3.0))
}

/// Christoffel symbols of the Levi-Civita connection of `g`.
pub fn levi_civita(g: &MetricField) -> ConnectionField {
    // dg[l][m][n] = ∂_l g_mn
    let dg: [[[Expr; 2]; 2]; 2] =
        [Var::X, Var::Y].map(|v| [0, 1].map(|m| [0, 1].map(|n| g.get(m, n).diff(v))));
    let inv = g.inverse();
    ConnectionField::new(CubicTensor::from_fn(|i, j, k| {
        let first_kind = |l: usize| (&dg[j][l][k] + &dg[k][l][j] - &dg[l][j][k]) * 0.5;
        &inv[i][0] * first_kind(0) + &inv[i][1] * first_kind(1)
    }))
}

/// Sup over the grid of `|∂_k g_ij - Γ^l_{ki} g_lj - Γ^l_{kj} g_il|`.
pub fn metric_compatibility_residual(
    g: &MetricField,
    gamma: &ConnectionField,
    chart: &Chart,
) -> Result<f64> {
    let mut exprs = Vec::new();
    for k in 0..2 {
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let v = Var::from_index(k);
            let mut e = g.get(i, j).diff(v);
            for l in 0..2 {
                e = e - gamma.get(l, k, i) * g.get(l, j) - gamma.get(l, k, j) * g.get(i, l);
            }
            exprs.push(e);
        }
    }
    grid::sup(chart, &exprs, |_, _, v| {
        Ok(v.iter().map(|c| c.abs()).fold(0.0, grid::nan_max))
    })
}

/// Christoffel symbols together with their first derivatives, compiled once
/// for pointwise curvature evaluation.
#[derive(Clone, Debug)]
pub struct CurvatureField {
    // 6 components, then 6 x-derivatives, then 6 y-derivatives.
    tape: Tape,
}

impl CurvatureField {
    pub fn new(gamma: &ConnectionField) -> CurvatureField {
        let comps = gamma.coeffs().components();
        let mut exprs = comps.to_vec();
        for v in [Var::X, Var::Y] {
            exprs.extend(comps.iter().map(|e| e.diff(v)));
        }
        CurvatureField {
            tape: Tape::compile(&exprs),
        }
    }

    /// `R^i_{jkl} = ∂_k Γ^i_{lj} - ∂_l Γ^i_{kj} + Γ^i_{km} Γ^m_{lj} - Γ^i_{lm} Γ^m_{kj}`.
    pub fn at(&self, x: f64, y: f64) -> Result<Riemann> {
        let v = self.tape.eval(x, y)?;
        let gamma = cubic_from_slots(&v[0..6]);
        let dgamma = [cubic_from_slots(&v[6..12]), cubic_from_slots(&v[12..18])];
        let mut r = [[[[0.0; 2]; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        let mut s = dgamma[k][i][l][j] - dgamma[l][i][k][j];
                        for m in 0..2 {
                            s += gamma[i][k][m] * gamma[m][l][j] - gamma[i][l][m] * gamma[m][k][j];
                        }
                        r[i][j][k][l] = s;
                    }
                }
            }
        }
        Ok(r)
    }
}

pub fn curvature(gamma: &ConnectionField, x: f64, y: f64) -> Result<Riemann> {
    CurvatureField::new(gamma).at(x, y)
}

/// Gauss curvature `K = g^{jl} R^i_{jil} / 2` of `g` at a point.
pub fn gauss_curvature(g: &MetricField, x: f64, y: f64) -> Result<f64> {
    let r = curvature(&levi_civita(g), x, y)?;
    let inv = g
        .at(x, y)?
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite {
            x,
            y,
            g11: f64::NAN,
            det: 0.0,
        })?;
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for l in 0..2 {
                s += inv[(j, l)] * r[i][j][i][l];
            }
        }
    }
    Ok(0.5 * s)
}

/// The 1-form `α` with `∇σ = α ⊗ σ`: `α_k = ∂_k log s - Γ^m_{km}`.
pub fn volume_derivative(gamma: &ConnectionField, sigma: &VolumeForm) -> OneForm {
    let s = &sigma.density;
    let tr = trace(gamma.coeffs());
    OneForm([Var::X, Var::Y].map(|v| s.diff(v) / s - &tr.0[v as usize]))
}
