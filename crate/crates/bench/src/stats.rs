use serde::Serialize;

/// Descriptive statistics of a sample; `stddev` is the population deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(samples: &[f64]) -> Option<Self> {
        let first = *samples.first()?;
        let n = samples.len();
        // offsetting by the first sample keeps constant data exact
        let mean = first + samples.iter().map(|x| x - first).sum::<f64>() / n as f64;
        let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Some(Self {
            mean,
            median,
            stddev: variance.sqrt(),
            min: sorted[0],
            max: sorted[n - 1],
            n,
        })
    }
}
