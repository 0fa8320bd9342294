use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-sided.
    pub p: f64,
}

/// Paired t-test on `a − b`: `t = mean(d) / (sd(d)/√n)` with the sample
/// standard deviation, two-sided p from Student's t with `n − 1` degrees of
/// freedom. All-zero differences give `t = 0, p = 1`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Precondition(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Precondition(format!(
            "paired t-test needs n ≥ 2, got {n}"
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = n - 1;
    if d.iter().all(|&v| v == 0.0) {
        return Ok(TTest { t: 0.0, df, p: 1.0 });
    }
    if d.iter().all(|&v| v == d[0]) {
        return Err(Error::DegenerateVariance(d[0]));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / df as f64;
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist =
        StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Precondition(e.to_string()))?;
    let p = 2.0 * dist.cdf(-t.abs());
    Ok(TTest { t, df, p })
}
