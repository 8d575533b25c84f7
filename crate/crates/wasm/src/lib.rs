//! Browser bindings: Beltrami heatmaps of great-circle metrics, geodesic
//! traces on the sphere, and metrisability checks of user-supplied surfaces.
//!
//! Every export has a plain Rust twin returning `Result<_, String>` so the
//! logic is testable off the browser.

use metrise::projective::{residuals_ab, ProjectiveStructure, DEFAULT_TOL};
use metrise::sphere::{lat_long_grid, CubeAtlas, LiouvilleSolution, SphereMetric, UnitTangent};
use metrise::tensor::{levi_civita, Chart, ConnectionField, MetricField};
use metrise::Expr;
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn matrix(a: &[f64]) -> Result<Matrix3<f64>, String> {
    if a.len() != 9 {
        return Err(format!("A needs 9 entries, got {}", a.len()));
    }
    Ok(Matrix3::from_row_slice(a))
}

/// `[μ_re, μ_im]` per cell of an `nlat × nlon` latitude/longitude grid,
/// south to north, each row west to east.
pub fn beltrami_grid(a: &[f64], nlat: usize, nlon: usize) -> Result<Vec<f64>, String> {
    let sol = LiouvilleSolution::new(matrix(a)?).map_err(|e| e.to_string())?;
    let grid =
        lat_long_grid(&SphereMetric::Liouville(sol), nlat, nlon).map_err(|e| e.to_string())?;
    Ok(grid.iter().flat_map(|s| s.mu).collect())
}

#[wasm_bindgen]
pub fn beltrami_map(a: &[f64], nlat: usize, nlon: usize) -> Result<Vec<f64>, JsError> {
    beltrami_grid(a, nlat, nlon).map_err(|e| JsError::new(&e))
}

#[derive(Debug, Serialize)]
pub struct Trace {
    pub points: Vec<[f64; 3]>,
    /// `max |n·x|` against the plane of the initial great circle.
    pub planarity: f64,
}

/// Geodesics of `ĝ_A` (or, with `stretch ≠ 0`, of the round metric scaled by
/// `1 + stretch·x₁`) from `count` seeded random unit tangents, over one
/// round-metric period.
pub fn geodesic_traces(
    a: &[f64],
    stretch: f64,
    count: usize,
    seed: u32,
) -> Result<Vec<Trace>, String> {
    let metric = if stretch == 0.0 {
        SphereMetric::Liouville(LiouvilleSolution::new(matrix(a)?).map_err(|e| e.to_string())?)
    } else {
        SphereMetric::conformal(Vector3::new(stretch, 0.0, 0.0)).map_err(|e| e.to_string())?
    };
    let atlas = CubeAtlas::new(&metric);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.into());
    (0..count)
        .map(|_| {
            let t0 = UnitTangent::random(&mut rng);
            let path = atlas
                .integrate(&t0, std::f64::consts::TAU, 5e-3)
                .map_err(|e| e.to_string())?;
            Ok(Trace {
                planarity: path.planarity(&t0.w()),
                points: path.samples.iter().map(|(_, x)| *x).collect(),
            })
        })
        .collect()
}

/// JSON array of `{points, planarity}`.
#[wasm_bindgen]
pub fn geodesics(a: &[f64], stretch: f64, count: usize, seed: u32) -> Result<String, JsError> {
    let traces = geodesic_traces(a, stretch, count, seed).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string(&traces)?)
}

#[derive(Debug, Serialize)]
pub struct Metrisability {
    pub verdict: bool,
    pub sup_a: f64,
    pub sup_b: f64,
    pub nx: usize,
    pub ny: usize,
    /// Grid values with `x` varying fastest, `y` increasing.
    pub abs_a: Vec<f64>,
    pub abs_b: Vec<f64>,
}

fn parse(field: &str, src: &str) -> Result<Expr, String> {
    Expr::parse(src).map_err(|e| format!("{field}: {e}"))
}

/// `connection` is `"flat"`, `"levi-civita"`, or six comma-separated
/// expressions `Γ¹₁₁, Γ¹₁₂, Γ¹₂₂, Γ²₁₁, Γ²₁₂, Γ²₂₂`.
pub fn metrisability(
    g: [&str; 3],
    connection: &str,
    half: f64,
    n: usize,
) -> Result<Metrisability, String> {
    let chart = Chart::square(half, n).map_err(|e| e.to_string())?;
    let g = MetricField::new(
        parse("g11", g[0])?,
        parse("g12", g[1])?,
        parse("g22", g[2])?,
    );
    let gamma = match connection.trim() {
        "flat" => ConnectionField::flat(),
        "levi-civita" => levi_civita(&g),
        list => {
            let parts: Vec<&str> = list.split(',').collect();
            if parts.len() != 6 {
                return Err(format!(
                    "expected 6 Christoffel symbols, got {}",
                    parts.len()
                ));
            }
            let comps = parts
                .iter()
                .enumerate()
                .map(|(k, s)| parse(&format!("Christoffel symbol {}", k + 1), s))
                .collect::<Result<Vec<_>, _>>()?;
            ConnectionField::from_components(comps.try_into().expect("six parts"))
        }
    };
    let p = ProjectiveStructure::new(gamma, chart.clone()).map_err(|e| e.to_string())?;
    let res = residuals_ab(&p, &g).map_err(|e| e.to_string())?;
    let (sup_a, sup_b) = (res.sup_a(), res.sup_b());
    Ok(Metrisability {
        verdict: sup_a < DEFAULT_TOL && sup_b < DEFAULT_TOL,
        sup_a,
        sup_b,
        nx: chart.nx,
        ny: chart.ny,
        abs_a: res.a.iter().map(|z| z.norm()).collect(),
        abs_b: res.b.iter().map(|z| z.norm()).collect(),
    })
}

#[wasm_bindgen]
pub fn check_metrisability(
    g11: &str,
    g12: &str,
    g22: &str,
    connection: &str,
    half: f64,
    n: usize,
) -> Result<String, JsError> {
    let m = metrisability([g11, g12, g22], connection, half, n).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string(&m)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ID: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

    #[test]
    fn round_sphere_is_conformal_everywhere() {
        let mu = beltrami_grid(&ID, 6, 12).unwrap();
        assert_eq!(mu.len(), 2 * 6 * 12);
        assert!(mu.iter().all(|v| v.abs() < 1e-12));
        let skew = [1.5, 0.2, 0.0, 0.0, 1.0, 0.3, 0.1, 0.0, 0.8];
        let mu = beltrami_grid(&skew, 6, 12).unwrap();
        assert!(mu.chunks(2).any(|z| z[0].hypot(z[1]) > 1e-2));
        assert!(mu.chunks(2).all(|z| z[0].hypot(z[1]) < 1.0));
        assert!(beltrami_grid(&ID[..8], 6, 12).is_err());
    }

    #[test]
    fn traces_are_planar_only_for_liouville_metrics() {
        let a = [1.2, 0.1, 0.0, -0.2, 0.9, 0.3, 0.0, 0.1, 1.0];
        for t in geodesic_traces(&a, 0.0, 3, 7).unwrap() {
            assert!(t.planarity < 1e-6, "{}", t.planarity);
        }
        let stretched = geodesic_traces(&a, 0.3, 3, 7).unwrap();
        assert!(stretched.iter().any(|t| t.planarity > 1e-2));
    }

    #[test]
    fn metrisability_of_round_and_flat() {
        let round = [
            "(1 + y^2)/(1 + x^2 + y^2)^2",
            "-x*y/(1 + x^2 + y^2)^2",
            "(1 + x^2)/(1 + x^2 + y^2)^2",
        ];
        let m = metrisability(round, "flat", 1.0, 8).unwrap();
        assert!(m.verdict);
        assert_eq!(m.abs_a.len(), 64);
        let m = metrisability(["1", "0", "1"], "x, 0, 0, 0, 0, y", 1.0, 8).unwrap();
        assert!(!m.verdict);
        assert!(metrisability(["1", "0", "1"], "x, 0", 1.0, 8).is_err());
        assert!(metrisability(["1 +", "0", "1"], "flat", 1.0, 8).is_err());
    }
}
