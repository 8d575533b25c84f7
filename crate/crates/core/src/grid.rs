//! Evaluation of expression batches over chart grids.

use crate::expr::{Expr, Tape};
use crate::tensor::Chart;
use crate::Result;

/// Evaluates `exprs` at every grid point of `chart` and hands the values to
/// `f`. Results come back in [`Chart::points`] order regardless of how the
/// work is scheduled.
pub fn sweep<T, F>(chart: &Chart, exprs: &[Expr], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(f64, f64, &[f64]) -> Result<T> + Sync,
{
    let tape = Tape::compile(exprs);
    map_points(&chart.points(), &tape, f)
}

pub fn map_points<T, F>(points: &[(f64, f64)], tape: &Tape, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(f64, f64, &[f64]) -> Result<T> + Sync,
{
    let n = tape.num_outputs();
    let eval = |(scratch, out): &mut (Vec<f64>, Vec<f64>), &(x, y): &(f64, f64)| -> Result<T> {
        tape.eval_into(x, y, scratch, out)?;
        f(x, y, out)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        points
            .par_iter()
            .map_init(|| (Vec::new(), vec![0.0; n]), eval)
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut state = (Vec::new(), vec![0.0; n]);
        points.iter().map(|p| eval(&mut state, p)).collect()
    }
}

/// `f` applied to every item, in order, in parallel when enabled.
pub fn try_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Largest value of `f` over the grid (0 for an empty grid).
pub fn sup<F>(chart: &Chart, exprs: &[Expr], f: F) -> Result<f64>
where
    F: Fn(f64, f64, &[f64]) -> Result<f64> + Sync,
{
    Ok(sweep(chart, exprs, f)?.into_iter().fold(0.0, nan_max))
}

/// `max` that propagates NaN, so a poisoned residual can never pass a
/// threshold test.
pub fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}
