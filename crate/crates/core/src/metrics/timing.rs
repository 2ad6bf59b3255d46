use serde::{Deserialize, Serialize};

/// Mean and population standard deviation of latency samples in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean: f64,
    pub stddev: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { n, mean: 0.0, stddev: 0.0 };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Self { n, mean, stddev: var.sqrt() }
    }

    /// Whole milliseconds, e.g. `6110 ± 149`.
    pub fn display(&self) -> String {
        format!("{:.0} ± {:.0}", self.mean, self.stddev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_latency() {
        let s = LatencyStats::from_samples(&[60.0, 60.0, 60.0]);
        assert_eq!((s.mean, s.stddev), (60.0, 0.0));
        assert_eq!(s.display(), "60 ± 0");
    }

    #[test]
    fn population_stddev() {
        let s = LatencyStats::from_samples(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!((s.mean, s.stddev), (5.0, 2.0));
        assert_eq!(LatencyStats { n: 2, mean: 6110.4, stddev: 149.2 }.display(), "6110 ± 149");
        assert_eq!(LatencyStats::from_samples(&[]).n, 0);
    }
}
