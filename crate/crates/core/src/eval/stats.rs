//! Learning curves and the paired t-test behind Win/Tie/Loss counts.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub method: String,
    pub seed: u64,
    /// `(queries_spent, micro_f1)`, strictly increasing in queries.
    pub checkpoints: Vec<(usize, f64)>,
}

impl LearningCurve {
    pub fn new(method: impl Into<String>, seed: u64, checkpoints: Vec<(usize, f64)>) -> Result<Self> {
        if checkpoints.windows(2).any(|p| p[1].0 <= p[0].0) {
            return Err(Error::Domain("checkpoints must be strictly increasing".into()));
        }
        if let Some(&(_, v)) = checkpoints.iter().find(|c| !(0.0..=1.0).contains(&c.1)) {
            return Err(Error::Domain(format!("micro-F1 {v} outside [0, 1]")));
        }
        Ok(Self {
            method: method.into(),
            seed,
            checkpoints,
        })
    }

    pub fn grid(&self) -> Vec<usize> {
        self.checkpoints.iter().map(|c| c.0).collect()
    }

    pub fn final_value(&self) -> Option<f64> {
        self.checkpoints.last().map(|c| c.1)
    }
}

/// Query counts at which curves are recorded: `every, 2 every, ..` up to `budget`.
pub fn checkpoint_grid(budget: usize, every: usize) -> Vec<usize> {
    if every == 0 {
        return Vec::new();
    }
    (1..=budget / every).map(|i| i * every).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WtlSummary {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl WtlSummary {
    pub fn total(&self) -> usize {
        self.wins + self.ties + self.losses
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Win,
    Tie,
    Loss,
}

/// Paired differences summary; `t` is `None` when the differences have zero
/// variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedT {
    pub mean: f64,
    pub std_dev: f64,
    pub t: Option<f64>,
    pub df: u32,
}

pub fn paired_t(a: &[f64], b: &[f64]) -> Result<PairedT> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Domain("paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std_dev = var.sqrt();
    // Differences equal to rounding noise count as zero variance.
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let t = if std_dev <= 1e-12 * scale.max(1e-300) || std_dev == 0.0 {
        None
    } else {
        Some(mean / (std_dev / (n as f64).sqrt()))
    };
    Ok(PairedT {
        mean,
        std_dev,
        t,
        df: (n - 1) as u32,
    })
}

/// Student t CDF for integer degrees of freedom via the closed finite series
/// in `theta = atan(t / sqrt(df))`.
pub fn student_t_cdf(t: f64, df: u32) -> f64 {
    assert!(df >= 1, "degrees of freedom must be positive");
    let nu = df as f64;
    let theta = (t / nu.sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let c2 = c * c;
    let a = if df.is_multiple_of(2) {
        // sin(theta) [1 + 1/2 cos^2 + (1 3)/(2 4) cos^4 + ...], up to cos^(df-2)
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 2;
        while k <= df - 2 {
            term *= c2 * (k - 1) as f64 / k as f64;
            sum += term;
            k += 2;
        }
        s * sum
    } else {
        // (2/pi) [theta + sin cos (1 + 2/3 cos^2 + (2 4)/(3 5) cos^4 + ...)], up to cos^(df-3)
        let mut inner = 0.0;
        if df > 1 {
            let mut term = 1.0;
            inner = 1.0;
            let mut k = 3;
            while k <= df - 2 {
                term *= c2 * (k - 1) as f64 / k as f64;
                inner += term;
                k += 2;
            }
        }
        2.0 / PI * (theta + s * c * inner)
    };
    0.5 * (1.0 + a)
}

/// Two-sided 0.05 critical values for 1..=10 degrees of freedom.
const T_TABLE_05: [f64; 10] = [
    12.706_204_736,
    4.302_652_730,
    3.182_446_305,
    2.776_445_105,
    2.570_581_836,
    2.446_911_851,
    2.364_624_252,
    2.306_004_135,
    2.262_157_163,
    2.228_138_852,
];

/// Two-sided critical value: table lookup at the 0.05 level, otherwise the
/// root of the series CDF by bisection.
pub fn t_critical(significance: f64, df: u32) -> f64 {
    if significance == 0.05 && (1..=10).contains(&df) {
        return T_TABLE_05[df as usize - 1];
    }
    t_critical_bisect(significance, df)
}

pub(crate) fn t_critical_bisect(significance: f64, df: u32) -> f64 {
    let target = 1.0 - significance / 2.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    while student_t_cdf(hi, df) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, df) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Outcome of A versus B over paired runs.
pub fn compare_paired(a: &[f64], b: &[f64], significance: f64) -> Result<Comparison> {
    let p = paired_t(a, b)?;
    Ok(match p.t {
        None if p.mean > 0.0 => Comparison::Win,
        None if p.mean < 0.0 => Comparison::Loss,
        None => Comparison::Tie,
        Some(t) => {
            let crit = t_critical(significance, p.df);
            if t > crit {
                Comparison::Win
            } else if t < -crit {
                Comparison::Loss
            } else {
                Comparison::Tie
            }
        }
    })
}

fn sorted_by_seed(curves: &[LearningCurve]) -> Vec<&LearningCurve> {
    let mut v: Vec<&LearningCurve> = curves.iter().collect();
    v.sort_by_key(|c| c.seed);
    v
}

/// Win/Tie/Loss counts of `a` against `b` over the shared checkpoint grid,
/// pairing runs by seed.
pub fn paired_ttest_wtl(a: &[LearningCurve], b: &[LearningCurve], significance: f64) -> Result<WtlSummary> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Domain(format!(
            "run counts differ or are empty ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let (a, b) = (sorted_by_seed(a), sorted_by_seed(b));
    let grid = a[0].grid();
    for (x, y) in a.iter().zip(&b) {
        if x.seed != y.seed {
            return Err(Error::Domain(format!("unpaired seeds {} and {}", x.seed, y.seed)));
        }
        if x.grid() != grid || y.grid() != grid {
            return Err(Error::Domain("checkpoint grids differ".into()));
        }
    }
    let mut summary = WtlSummary::default();
    for p in 0..grid.len() {
        let va: Vec<f64> = a.iter().map(|c| c.checkpoints[p].1).collect();
        let vb: Vec<f64> = b.iter().map(|c| c.checkpoints[p].1).collect();
        match compare_paired(&va, &vb, significance)? {
            Comparison::Win => summary.wins += 1,
            Comparison::Tie => summary.ties += 1,
            Comparison::Loss => summary.losses += 1,
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn cdf_matches_reference() {
        for df in 1..=12u32 {
            let reference = StudentsT::new(0.0, 1.0, df as f64).unwrap();
            for &t in &[-6.0, -2.5, -1.0, -0.1, 0.0, 0.3, 1.7, 2.776445, 9.0] {
                let ours = student_t_cdf(t, df);
                assert!((ours - reference.cdf(t)).abs() < 1e-10, "df {df} t {t}");
            }
        }
    }

    #[test]
    fn table_agrees_with_series() {
        for df in 1..=10u32 {
            let bisect = t_critical_bisect(0.05, df);
            assert!((bisect - t_critical(0.05, df)).abs() < 1e-8, "df {df}: {bisect}");
        }
        assert!((t_critical(0.05, 4) - 2.776445).abs() < 1e-6);
        let reference = StudentsT::new(0.0, 1.0, 15.0).unwrap();
        assert!((t_critical(0.05, 15) - reference.inverse_cdf(0.975)).abs() < 1e-8);
    }

    #[test]
    fn grid_default() {
        let g = checkpoint_grid(100, 4);
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], 4);
        assert_eq!(g[24], 100);
        assert_eq!(checkpoint_grid(4, 4), vec![4]);
    }

    fn curves(method: &str, values: &[Vec<f64>]) -> Vec<LearningCurve> {
        values
            .iter()
            .enumerate()
            .map(|(s, v)| {
                LearningCurve::new(
                    method,
                    s as u64,
                    v.iter().enumerate().map(|(i, &x)| ((i + 1) * 4, x)).collect(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn identical_sets_tie_everywhere() {
        let v: Vec<Vec<f64>> = (0..5)
            .map(|s| (0..25).map(|i| 0.3 + 0.01 * (i + s) as f64).collect())
            .collect();
        let a = curves("a", &v);
        let w = paired_ttest_wtl(&a, &a, 0.05).unwrap();
        assert_eq!((w.wins, w.ties, w.losses), (0, 25, 0));
    }

    #[test]
    fn constant_offset_wins_everywhere() {
        let v: Vec<Vec<f64>> = (0..5)
            .map(|s| (0..25).map(|i| 0.3 + 0.01 * (i * s) as f64 / 25.0).collect())
            .collect();
        let up: Vec<Vec<f64>> = v.iter().map(|r| r.iter().map(|x| x + 0.1).collect()).collect();
        let w = paired_ttest_wtl(&curves("a", &up), &curves("b", &v), 0.05).unwrap();
        assert_eq!((w.wins, w.ties, w.losses), (25, 0, 0));
        let w = paired_ttest_wtl(&curves("b", &v), &curves("a", &up), 0.05).unwrap();
        assert_eq!((w.wins, w.ties, w.losses), (0, 0, 25));
    }

    #[test]
    fn mismatched_grids_error() {
        let a = curves("a", &[vec![0.1, 0.2], vec![0.1, 0.2]]);
        let b = curves("b", &[vec![0.1, 0.2, 0.3], vec![0.1, 0.2, 0.3]]);
        assert!(paired_ttest_wtl(&a, &b, 0.05).is_err());
        assert!(paired_ttest_wtl(&a, &a[..1], 0.05).is_err());
    }

    #[test]
    fn curve_validation() {
        assert!(LearningCurve::new("m", 0, vec![(4, 0.5), (4, 0.6)]).is_err());
        assert!(LearningCurve::new("m", 0, vec![(4, 1.5)]).is_err());
    }
}
