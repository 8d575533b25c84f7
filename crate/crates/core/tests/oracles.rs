//! Independent re-derivations checked against the library.

mod common;

use metrise::frame::{
    connection_form, glc_element, omega_complex, taut_form, zeta, FramePoint, FrameTangent,
};
use metrise::projective::{
    check_metrisable_by, orthonormal_frame, volume_normalize, weyl_decompose, ProjectiveStructure,
};
use metrise::sphere::{
    metric_from_solution, random_sl3, LiouvilleSolution, SphereChart, SphereMetric,
    SphereMetricSample, UnitTangent,
};
use metrise::tensor::{levi_civita, Chart, Cubic, MetricField, CUBIC_SLOTS};
use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn points(r: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| (r.random_range(-half..half), r.random_range(-half..half)))
        .collect()
}

/// A metric with non-constant, non-diagonal components.
fn test_metric() -> MetricField {
    let p = |s| metrise::Expr::parse(s).unwrap();
    MetricField::new(
        p("1 + 0.3*x^2 + 0.1*y"),
        p("0.2*sin(x*y)"),
        p("exp(0.2*x) + 0.1*y^2"),
    )
}

/// Solves `D = g⊗B + Sym(η) + φ` with `φ` trace-free and `g`-traceless as a
/// dense 10×10 linear system, with no reference to the closed form.
fn weyl_by_linear_solve(d: &Cubic, g: &Matrix2<f64>) -> ([f64; 2], Cubic) {
    let ginv = g.try_inverse().unwrap();
    // unknowns: B¹, B², η₁, η₂, then the six symmetric slots of φ
    let slot = |i: usize, j: usize, k: usize| {
        let (j, k) = if j <= k { (j, k) } else { (k, j) };
        4 + CUBIC_SLOTS.iter().position(|&s| s == (i, j, k)).unwrap()
    };
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut m = SMatrix::<f64, 10, 10>::zeros();
    let mut rhs = SVector::<f64, 10>::zeros();
    for (row, &(i, j, k)) in CUBIC_SLOTS.iter().enumerate() {
        m[(row, i)] += g[(j, k)];
        m[(row, 2 + k)] += delta(i, j);
        m[(row, 2 + j)] += delta(i, k);
        m[(row, slot(i, j, k))] += 1.0;
        rhs[row] = d[i][j][k];
    }
    for k in 0..2 {
        for i in 0..2 {
            m[(6 + k, slot(i, i, k))] += 1.0;
        }
    }
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                m[(8 + i, slot(i, j, k))] += ginv[(j, k)];
            }
        }
    }
    let sol = m.lu().solve(&rhs).expect("decomposition system is regular");
    let mut phi = [[[0.0; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                phi[i][j][k] = sol[slot(i, j, k)];
            }
        }
    }
    ([sol[0], sol[1]], phi)
}

#[test]
fn weyl_decomposition_matches_linear_solve() {
    let mut r = rng(11);
    let g = test_metric();
    let lc = levi_civita(&g);
    for _ in 0..3 {
        let gamma = common::random_connection(&mut r, 0.7);
        let p = ProjectiveStructure::new(gamma.clone(), Chart::square(1.0, 4).unwrap()).unwrap();
        let dec = weyl_decompose(&p, &g).unwrap();
        for (x, y) in points(&mut r, 20, 1.0) {
            let (gam, l) = (gamma.at(x, y).unwrap(), lc.at(x, y).unwrap());
            let d: Cubic = std::array::from_fn(|i| {
                std::array::from_fn(|j| std::array::from_fn(|k| gam[i][j][k] - l[i][j][k]))
            });
            let (b, phi) = weyl_by_linear_solve(&d, &g.at(x, y).unwrap());
            let b_lib = dec.b.at(x, y).unwrap();
            let phi_lib = dec.phi.at(x, y).unwrap();
            for i in 0..2 {
                assert!((b[i] - b_lib[i]).abs() < 1e-11, "B at ({x}, {y})");
                for j in 0..2 {
                    for k in 0..2 {
                        assert!(
                            (phi[i][j][k] - phi_lib[i][j][k]).abs() < 1e-11,
                            "phi at ({x}, {y})"
                        );
                    }
                }
            }
        }
    }
}

/// On `g`-orthonormal frames the area-preserving representative has
/// `ζ = (4/3) b̄ ω + 2 ā ω̄`.
#[test]
fn zeta_on_orthonormal_frames() {
    let mut r = rng(12);
    let g = test_metric();
    let h = 1e-5;
    for _ in 0..3 {
        let gamma = common::random_connection(&mut r, 0.7);
        let p = ProjectiveStructure::new(gamma, Chart::square(1.0, 4).unwrap()).unwrap();
        let normal = volume_normalize(&p, &g.area_form()).unwrap();
        let dec = weyl_decompose(&p, &g).unwrap();
        let frame = |x: f64, y: f64| orthonormal_frame(&g.at(x, y).unwrap());
        for (x, y) in points(&mut r, 20, 0.9) {
            let xd = Vector2::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            // u̇ along ẋ by central differences, plus a gl(1, C) vertical part
            let du = (frame(x + h * xd[0], y + h * xd[1]) - frame(x - h * xd[0], y - h * xd[1]))
                / (2.0 * h);
            let y_c = glc_element(r.random_range(0.1..1.0), r.random_range(-3.0..3.0));
            let u = frame(x, y);
            let w = FrameTangent {
                base: FramePoint::new([x, y], u).unwrap(),
                x_dot: xd,
                u_dot: du + u * y_c,
            };
            let z = zeta(&connection_form(&normal.at(x, y).unwrap(), &w));
            let om = omega_complex(&taut_form(&w));
            let (a, b) = dec.residuals_at(x, y).unwrap();
            let expect = 4.0 / 3.0 * b.conj() * om + 2.0 * a.conj() * om.conj();
            assert!((z - expect).norm() < 1e-8, "ζ = {z}, expected {expect}");
        }
    }
}

/// Quarter turn of the frame: `ω ↦ −iω`. The sign is fixed by the embedding
/// `re^{iφ} ↦ [[r cos φ, −r sin φ], [r sin φ, r cos φ]]`.
#[test]
fn quarter_turn_rotates_omega_clockwise() {
    let w = FrameTangent {
        base: FramePoint::new([0.1, 0.2], Matrix2::new(1.0, 0.3, -0.2, 0.9)).unwrap(),
        x_dot: Vector2::new(0.7, -0.4),
        u_dot: Matrix2::zeros(),
    };
    let om = omega_complex(&taut_form(&w));
    let turned = omega_complex(&taut_form(
        &w.right_translate(&glc_element(1.0, std::f64::consts::FRAC_PI_2))
            .unwrap(),
    ));
    assert!((turned - Complex64::new(0.0, -1.0) * om).norm() < 1e-14);
    assert!((turned - Complex64::i() * om).norm() > 0.1);
}

/// `ĝ_A = f^* g_round` with `f(x) = A⁻¹x / |A⁻¹x|`, by direct differentiation.
fn pullback_round(a: &Matrix3<f64>, x: &Vector3<f64>, u: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    let ainv = a.try_inverse().unwrap();
    let y = ainv * x;
    let n = y.norm();
    let f = y / n;
    let df = |t: &Vector3<f64>| {
        let z = ainv * t / n;
        z - f * f.dot(&z)
    };
    df(u).dot(&df(v))
}

#[test]
fn liouville_metric_is_pulled_back_round_metric() {
    let mut r = rng(13);
    for _ in 0..20 {
        let a = random_sl3(&mut r);
        let sol = LiouvilleSolution::new(a).unwrap();
        for _ in 0..10 {
            let t = UnitTangent::random(&mut r);
            let s = metric_from_solution(&sol, &t).unwrap();
            let (v, w) = (t.v(), t.w());
            for (p, q) in [(v, v), (v, w), (w, w)] {
                let lib = s.eval(&t, &p, &q);
                let oracle = pullback_round(&a, &t.x(), &p, &q);
                assert!(
                    (lib - oracle).abs() < 1e-10 * (1.0 + oracle.abs()),
                    "{lib} vs {oracle}"
                );
            }
        }
    }
}

#[test]
fn rotation_equivariance() {
    let mut r = rng(14);
    for _ in 0..20 {
        let a = random_sl3(&mut r);
        let rot = *nalgebra::Rotation3::new(Vector3::new(
            r.random_range(-2.0..2.0),
            r.random_range(-2.0..2.0),
            r.random_range(-2.0..2.0),
        ))
        .matrix();
        let t = UnitTangent::random(&mut r);
        let rt = UnitTangent::new(rot * t.x(), rot * t.v()).unwrap();
        let s = metric_from_solution(&LiouvilleSolution::new(a).unwrap(), &t).unwrap();
        let rs = metric_from_solution(&LiouvilleSolution::new(rot * a).unwrap(), &rt).unwrap();
        let err = (s.p - rs.p)
            .abs()
            .max((s.q - rs.q).abs())
            .max((s.r - rs.r).abs());
        assert!(err < 1e-10, "{err}");
    }
}

#[test]
fn scaled_generator_gives_homothetic_metric() {
    let mut r = rng(15);
    let sol = LiouvilleSolution::new(Matrix3::identity() * 2.0).unwrap();
    for _ in 0..10 {
        let t = UnitTangent::random(&mut r);
        let s = metric_from_solution(&sol, &t).unwrap();
        let round = SphereMetricSample::round();
        assert!(
            (s.p - round.p / 64.0).abs() < 1e-14
                && (s.q - round.q / 64.0).abs() < 1e-14
                && s.r.abs() < 1e-14
        );
    }
    let chart = Chart::square(1.0, 16).unwrap();
    let g = SphereMetric::Liouville(sol).chart_metric(&SphereChart::gnomonic());
    let rep = check_metrisable_by(&ProjectiveStructure::flat(chart).unwrap(), &g, 1e-8).unwrap();
    assert!(rep.verdict, "{rep:?}");
}

#[test]
fn chart_pullback_matches_frame_route() {
    let mut r = rng(16);
    for chart in [SphereChart::gnomonic(), SphereChart::Stereographic] {
        let sol = LiouvilleSolution::random(&mut r);
        let metric = SphereMetric::Liouville(sol);
        let closed = metric.chart_metric(&chart);
        for (x, y) in points(&mut r, 20, 0.9) {
            let a = closed.at(x, y).unwrap();
            let b = metric.chart_metric_at(&chart, x, y).unwrap();
            assert!(
                (a - b).abs().max() < 1e-9 * (1.0 + b.abs().max()),
                "{a} vs {b}"
            );
        }
    }
}
