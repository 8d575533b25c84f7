//! Fixed-step RK4 integration of `ẍⁱ + Γⁱⱼₖ ẋʲ ẋᵏ = 0` on a chart, and a
//! parametrization-independent distance between traces.

use serde::{Deserialize, Serialize};

use crate::tensor::{Chart, CompiledCubic, ConnectionField, Cubic};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSample {
    pub t: f64,
    pub x: [f64; 2],
    pub v: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPath {
    pub samples: Vec<GeodesicSample>,
    /// Step actually used: the requested step shrunk so that it divides `T`.
    pub step: f64,
    pub method: String,
    /// The path left the chart before reaching `T`; `samples` stop at the
    /// last in-chart point.
    pub truncated: bool,
}

impl GeodesicPath {
    pub fn last(&self) -> &GeodesicSample {
        self.samples.last().expect("paths are never empty")
    }

    /// Chart-Euclidean length of the sample polyline.
    pub fn length(&self) -> f64 {
        self.samples.windows(2).map(|w| dist(w[0].x, w[1].x)).sum()
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.samples.iter().map(|s| s.x).collect()
    }
}

/// Integrates the geodesic equation of `gamma` from `(x0, v0)` over `[0, t_end]`.
pub fn integrate(
    gamma: &ConnectionField,
    chart: &Chart,
    x0: [f64; 2],
    v0: [f64; 2],
    t_end: f64,
    step: f64,
) -> Result<GeodesicPath> {
    integrate_compiled(&gamma.compile(), chart, x0, v0, t_end, step)
}

/// As [`integrate`], reusing an already compiled connection.
pub fn integrate_compiled(
    gamma: &CompiledCubic,
    chart: &Chart,
    x0: [f64; 2],
    v0: [f64; 2],
    t_end: f64,
    step: f64,
) -> Result<GeodesicPath> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "T must be positive, got {t_end}"
        )));
    }
    if !chart.contains(x0[0], x0[1]) {
        return Err(Error::OutsideDomain(format!(
            "initial point ({}, {}) is not in the chart",
            x0[0], x0[1]
        )));
    }
    // fails loudly if the connection cannot be evaluated at the start
    gamma.at(x0[0], x0[1])?;

    let n = (t_end / step - 1e-9).ceil().max(1.0) as usize;
    let h = t_end / n as f64;
    let mut samples = Vec::with_capacity(n + 1);
    let mut state = [x0[0], x0[1], v0[0], v0[1]];
    samples.push(GeodesicSample {
        t: 0.0,
        x: x0,
        v: v0,
    });
    let mut truncated = false;
    for k in 1..=n {
        let t = k as f64 * h;
        let next = match rk4_step(gamma, &state, h) {
            Ok(s) => s,
            // an intermediate stage left the connection's domain
            Err(Error::Eval(_)) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if next.iter().any(|c| !c.is_finite()) {
            return Err(Error::Blowup { t_last: t - h });
        }
        if !chart.contains(next[0], next[1]) {
            truncated = true;
            break;
        }
        state = next;
        samples.push(GeodesicSample {
            t,
            x: [state[0], state[1]],
            v: [state[2], state[3]],
        });
    }
    Ok(GeodesicPath {
        samples,
        step: h,
        method: "rk4".into(),
        truncated,
    })
}

fn rhs(gamma: &CompiledCubic, s: &[f64; 4]) -> Result<[f64; 4]> {
    let g: Cubic = gamma.at(s[0], s[1])?;
    let v = [s[2], s[3]];
    let mut a = [0.0; 2];
    for (i, ai) in a.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..2 {
            for k in 0..2 {
                acc += g[i][j][k] * v[j] * v[k];
            }
        }
        *ai = -acc;
    }
    Ok([v[0], v[1], a[0], a[1]])
}

fn rk4_step(gamma: &CompiledCubic, s: &[f64; 4], h: f64) -> Result<[f64; 4]> {
    let add = |a: &[f64; 4], b: &[f64; 4], c: f64| std::array::from_fn(|i| a[i] + c * b[i]);
    let k1 = rhs(gamma, s)?;
    let k2 = rhs(gamma, &add(s, &k1, h / 2.0))?;
    let k3 = rhs(gamma, &add(s, &k2, h / 2.0))?;
    let k4 = rhs(gamma, &add(s, &k3, h))?;
    Ok(std::array::from_fn(|i| {
        s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    }))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let s = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + s * d[0], a[1] + s * d[1]])
}

fn point_polyline(p: [f64; 2], line: &[[f64; 2]]) -> f64 {
    if line.len() == 1 {
        return dist(p, line[0]);
    }
    line.windows(2)
        .map(|w| point_segment(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Resamples a polyline at `n` points equally spaced in arc length over
/// `[0, len]`.
fn resample(points: &[[f64; 2]], len: f64, n: usize) -> Vec<[f64; 2]> {
    if points.len() == 1 || n == 1 {
        return vec![points[0]];
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..n {
        let target = len * k as f64 / (n - 1) as f64;
        loop {
            let l = dist(points[seg], points[seg + 1]);
            if seg_start + l >= target || seg + 2 == points.len() {
                let s = if l > 0.0 {
                    ((target - seg_start) / l).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (a, b) = (points[seg], points[seg + 1]);
                out.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
                break;
            }
            seg_start += l;
            seg += 1;
        }
    }
    out
}

/// Symmetric Hausdorff distance between the traces of `p` and `q`.
///
/// Both traces are first cut to their common arc-length prefix, since two
/// parametrizations of the same curve run over `[0, T]` cover different
/// lengths. Each trimmed trace is resampled uniformly in arc length and every
/// resampled point is measured against the other polyline.
pub fn unparametrized_distance(p: &GeodesicPath, q: &GeodesicPath) -> f64 {
    polyline_distance(&p.points(), &q.points())
}

/// [`unparametrized_distance`] on bare point lists.
pub fn polyline_distance(p: &[[f64; 2]], q: &[[f64; 2]]) -> f64 {
    assert!(!p.is_empty() && !q.is_empty(), "traces must be nonempty");
    let length = |pts: &[[f64; 2]]| pts.windows(2).map(|w| dist(w[0], w[1])).sum::<f64>();
    let len = length(p).min(length(q));
    let n = p.len().max(q.len()).max(2);
    let rp = resample(p, len, n);
    let rq = resample(q, len, n);
    let one_way = |a: &[[f64; 2]], b: &[[f64; 2]]| {
        a.iter().map(|&x| point_polyline(x, b)).fold(0.0, f64::max)
    };
    one_way(&rp, &rq).max(one_way(&rq, &rp))
}
