//! Shared generators for integration tests.
#![allow(dead_code)]

use metrise::tensor::{ConnectionField, MetricField, OneForm};
use metrise::Expr;
use rand::Rng;

const BASIS: [&str; 10] = [
    "1",
    "x",
    "y",
    "x*y",
    "x^2",
    "y^2",
    "sin(x)",
    "cos(y)",
    "exp(0.3*x)",
    "atan(x + y)",
];

/// A random smooth expression: three basis terms with coefficients in
/// `[-scale, scale]`.
pub fn random_expr<R: Rng>(rng: &mut R, scale: f64) -> Expr {
    let terms: Vec<String> = (0..3)
        .map(|_| {
            let c: f64 = rng.random_range(-scale..scale);
            format!("({c:.6})*{}", BASIS[rng.random_range(0..BASIS.len())])
        })
        .collect();
    Expr::parse(&terms.join(" + ")).unwrap()
}

pub fn random_one_form<R: Rng>(rng: &mut R, scale: f64) -> OneForm {
    OneForm([random_expr(rng, scale), random_expr(rng, scale)])
}

pub fn random_connection<R: Rng>(rng: &mut R, scale: f64) -> ConnectionField {
    ConnectionField::from_components(std::array::from_fn(|_| random_expr(rng, scale)))
}

/// The round metric in the standard gnomonic chart, written out by hand.
pub fn round_gnomonic() -> MetricField {
    MetricField::new(
        Expr::parse("(1 + y^2)/(1 + x^2 + y^2)^2").unwrap(),
        Expr::parse("-x*y/(1 + x^2 + y^2)^2").unwrap(),
        Expr::parse("(1 + x^2)/(1 + x^2 + y^2)^2").unwrap(),
    )
}

/// `(1 + 0.3x) g + 0.2x dx⊗dx` for the round gnomonic `g`.
pub fn perturbed_round_gnomonic() -> MetricField {
    let g = round_gnomonic();
    let f = Expr::parse("1 + 0.3*x").unwrap();
    let [g11, g12, g22] = g.components();
    MetricField::new(
        &f * &g11 + Expr::parse("0.2*x").unwrap(),
        &f * &g12,
        &f * &g22,
    )
}
