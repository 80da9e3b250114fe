//! Kernel maximum mean discrepancy between two one-dimensional samples.

use std::cmp::Ordering;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("each sample needs at least 2 values, got {x} and {y}")]
    TooFewSamples { x: usize, y: usize },
    #[error("bandwidth must be positive and finite, got {0}")]
    Bandwidth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of the pooled sample.
    MedianHeuristic,
}

/// Radial-basis kernel `exp(-(a - b)^2 / (2 h^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

impl KernelSpec {
    pub fn fixed(h: f64) -> Result<Self, MetricsError> {
        check_bandwidth(h)?;
        Ok(KernelSpec {
            bandwidth: Bandwidth::Fixed(h),
        })
    }

    pub fn median_heuristic() -> Self {
        Self::default()
    }

    /// The bandwidth this spec resolves to for the pair `(x, y)`.
    pub fn resolve(&self, x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
        match self.bandwidth {
            Bandwidth::Fixed(h) => check_bandwidth(h).map(|_| h),
            Bandwidth::MedianHeuristic => Ok(median_heuristic(x, y)),
        }
    }
}

fn check_bandwidth(h: f64) -> Result<(), MetricsError> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(MetricsError::Bandwidth(h))
    }
}

/// Median of all pairwise distances in `x ∪ y` (mean of the middle two for
/// an even count); 1 when the median is 0 or there are fewer than 2 values.
pub fn median_heuristic(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    if n < 2 {
        return 1.0;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push((pooled[i] - pooled[j]).abs());
        }
    }
    let m = dists.len();
    let (_, &mut upper, _) = dists.select_nth_unstable_by(m / 2, f64::total_cmp);
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    };
    if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    }
}

fn mean_kernel(a: &[f64], b: &[f64], h: f64) -> f64 {
    let scale = -1.0 / (2.0 * h * h);
    let mut total = 0.0;
    for &u in a {
        let mut row = 0.0;
        for &v in b {
            let d = u - v;
            row += (scale * d * d).exp();
        }
        total += row;
    }
    total / (a.len() * b.len()) as f64
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(u, v)| u.total_cmp(v))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Biased (V-statistic) estimate of the squared MMD:
/// `mean k(x, x') + mean k(y, y') - 2 mean k(x, y)`, clamped at 0.
///
/// The result is exactly symmetric in its arguments and exactly 0 for
/// identical inputs.
pub fn mmd(x: &[f64], y: &[f64], kernel: &KernelSpec) -> Result<f64, MetricsError> {
    if x.len() < 2 || y.len() < 2 {
        return Err(MetricsError::TooFewSamples { x: x.len(), y: y.len() });
    }
    let (x, y) = if lexicographic(x, y).is_gt() { (y, x) } else { (x, y) };
    let h = kernel.resolve(x, y)?;
    let kxx = mean_kernel(x, x, h);
    let kyy = mean_kernel(y, y, h);
    let kxy = mean_kernel(x, y, h);
    Ok((kxx + kyy - 2.0 * kxy).max(0.0))
}
