//! Forecast-quality metrics over a batch of prediction windows, and
//! aggregation across repeated trials.
//!
//! Metrics take two matrices of shape windows x outputs: row n holds the
//! flattened targets (or predictions) of window n. Both are expected in the
//! original data scale; callers denormalize before scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Every metric for one evaluation batch. `mape` is the standard percentage
/// error; `mape_paper_literal` is its square root, an oddball variant some
/// published tables use (see [`mape_paper_literal`]). Reports carry both so
/// the choice is a display concern, not a rerun.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub rmse: f64,
    pub mape: f64,
    pub mape_paper_literal: f64,
    pub n_points: usize,
}

fn check_pair(op: &'static str, actual: &Matrix, predicted: &Matrix) -> Result<()> {
    if actual.rows() != predicted.rows() || actual.cols() != predicted.cols() {
        return Err(Error::shape(
            op,
            format!("{}x{}", actual.rows(), actual.cols()),
            format!("{}x{}", predicted.rows(), predicted.cols()),
        ));
    }
    if actual.len() == 0 {
        return Err(Error::InvalidParameter(format!(
            "{op} needs at least one value"
        )));
    }
    Ok(())
}

/// Root mean squared error over every cell: sqrt(sum (y - yhat)^2 / (N*T)).
pub fn rmse(actual: &Matrix, predicted: &Matrix) -> Result<f64> {
    check_pair("rmse", actual, predicted)?;
    let sum: f64 = actual
        .data()
        .iter()
        .zip(predicted.data())
        .map(|(y, yh)| (y - yh).powi(2))
        .sum();
    Ok((sum / actual.len() as f64).sqrt())
}

/// Mean absolute percentage error, in percent. A zero target makes the ratio
/// undefined, so it is rejected naming the offending cell; silently skipping
/// zeros would change the denominator and corrupt comparisons.
pub fn mape(actual: &Matrix, predicted: &Matrix) -> Result<f64> {
    check_pair("mape", actual, predicted)?;
    let mut sum = 0.0;
    for n in 0..actual.rows() {
        for t in 0..actual.cols() {
            let y = actual.get(n, t);
            if y == 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "mape is undefined: target is zero at window {n}, output {t}"
                )));
            }
            sum += ((y - predicted.get(n, t)) / y).abs();
        }
    }
    Ok(100.0 * sum / actual.len() as f64)
}

/// Square root of the standard percentage error. Not a standard quantity;
/// kept so tables that wrap MAPE in a radical can be reproduced digit for
/// digit.
pub fn mape_paper_literal(actual: &Matrix, predicted: &Matrix) -> Result<f64> {
    Ok(mape(actual, predicted)?.sqrt())
}

/// All metrics at once for one batch.
pub fn compute_metrics(actual: &Matrix, predicted: &Matrix) -> Result<MetricResult> {
    let rmse = rmse(actual, predicted)?;
    let mape = mape(actual, predicted)?;
    Ok(MetricResult {
        rmse,
        mape,
        mape_paper_literal: mape.sqrt(),
        n_points: actual.len(),
    })
}

/// Aggregate of one metric across trials. `std` is the population standard
/// deviation (divide by n); `best` is the minimum, since lower is better for
/// every metric here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub mean: f64,
    pub std: f64,
    pub best: f64,
}

pub fn summarize_trials(values: &[f64]) -> Result<TrialSummary> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot summarize zero trials".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(TrialSummary {
        mean,
        std: var.sqrt(),
        best,
    })
}

/// Per-metric aggregates over a list of trial results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub rmse: TrialSummary,
    pub mape: TrialSummary,
    pub mape_paper_literal: TrialSummary,
}

pub fn summarize_metric_results(results: &[MetricResult]) -> Result<MetricsSummary> {
    let pick = |f: fn(&MetricResult) -> f64| -> Result<TrialSummary> {
        summarize_trials(&results.iter().map(f).collect::<Vec<_>>())
    };
    Ok(MetricsSummary {
        rmse: pick(|r| r.rmse)?,
        mape: pick(|r| r.mape)?,
        mape_paper_literal: pick(|r| r.mape_paper_literal)?,
    })
}

/// Render as "mean (std)" with three decimals, the layout used in results
/// tables.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3} ({std:.3})")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn rmse_hand_cases() {
        let actual = m(&[vec![1.0, 2.0]]);
        let predicted = m(&[vec![2.0, 4.0]]);
        // squared errors 1 and 4 -> mean 2.5
        assert!((rmse(&actual, &predicted).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
        assert!((rmse(&actual, &predicted).unwrap() - 1.5811388).abs() < 1e-7);
        assert_eq!(rmse(&actual, &actual).unwrap(), 0.0);
    }

    #[test]
    fn mape_hand_case_and_literal_variant() {
        let actual = m(&[vec![100.0]]);
        let predicted = m(&[vec![110.0]]);
        assert!((mape(&actual, &predicted).unwrap() - 10.0).abs() < 1e-12);
        let literal = mape_paper_literal(&actual, &predicted).unwrap();
        assert!((literal - 10.0f64.sqrt()).abs() < 1e-12);
        assert!((literal - 3.1623).abs() < 1e-4);
        assert_eq!(mape(&actual, &actual).unwrap(), 0.0);
        assert_eq!(mape_paper_literal(&actual, &actual).unwrap(), 0.0);

        let both = compute_metrics(&actual, &predicted).unwrap();
        assert_eq!(both.mape, 10.0);
        assert_eq!(both.mape_paper_literal, both.mape.sqrt());
        assert_eq!(both.n_points, 1);
    }

    #[test]
    fn mape_is_scale_invariant() {
        let actual = m(&[vec![10.0, 20.0], vec![30.0, 40.0]]);
        let predicted = m(&[vec![11.0, 19.0], vec![33.0, 36.0]]);
        let base = mape(&actual, &predicted).unwrap();
        let base_lit = mape_paper_literal(&actual, &predicted).unwrap();
        for c in [0.5, 2.0, 100.0] {
            let scale = |x: &Matrix| {
                let rows: Vec<Vec<f64>> = (0..x.rows())
                    .map(|i| (0..x.cols()).map(|j| c * x.get(i, j)).collect())
                    .collect();
                m(&rows)
            };
            let (sa, sp) = (scale(&actual), scale(&predicted));
            assert!((mape(&sa, &sp).unwrap() - base).abs() < 1e-10);
            assert!((mape_paper_literal(&sa, &sp).unwrap() - base_lit).abs() < 1e-10);
        }
    }

    #[test]
    fn mape_rejects_zero_targets_naming_the_cell() {
        let actual = m(&[vec![1.0, 1.0], vec![1.0, 0.0]]);
        let predicted = m(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let err = mape(&actual, &predicted).unwrap_err().to_string();
        assert!(err.contains("window 1"), "{err}");
        assert!(err.contains("output 1"), "{err}");
    }

    #[test]
    fn metrics_match_brute_force_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let rows = rng.gen_range(1..10);
            let cols = rng.gen_range(1..10);
            let gen = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..rows)
                    .map(|_| (0..cols).map(|_| rng.gen_range(0.5..9.5)).collect())
                    .collect()
            };
            let a_rows = gen(&mut rng);
            let p_rows = gen(&mut rng);
            let (a, p) = (m(&a_rows), m(&p_rows));

            let mut sq = 0.0;
            let mut pct = 0.0;
            for i in 0..rows {
                for j in 0..cols {
                    sq += (a_rows[i][j] - p_rows[i][j]).powi(2);
                    pct += ((a_rows[i][j] - p_rows[i][j]) / a_rows[i][j]).abs();
                }
            }
            let count = (rows * cols) as f64;
            assert!((rmse(&a, &p).unwrap() - (sq / count).sqrt()).abs() < 1e-12);
            assert!((mape(&a, &p).unwrap() - 100.0 * pct / count).abs() < 1e-12);
            let r = compute_metrics(&a, &p).unwrap();
            assert_eq!(r.mape_paper_literal, r.mape.sqrt());
            assert_eq!(r.n_points, rows * cols);
        }
    }

    #[test]
    fn rmse_is_symmetric_and_scales_linearly() {
        let a = m(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let p = m(&[vec![1.5, 1.0], vec![3.25, 7.0]]);
        assert_eq!(rmse(&a, &p).unwrap(), rmse(&p, &a).unwrap());

        for c in [0.5, -3.0, 10.0] {
            let scale = |x: &Matrix| {
                let rows: Vec<Vec<f64>> = (0..x.rows())
                    .map(|i| (0..x.cols()).map(|j| c * x.get(i, j)).collect())
                    .collect();
                m(&rows)
            };
            let got = rmse(&scale(&a), &scale(&p)).unwrap();
            assert!((got - c.abs() * rmse(&a, &p).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_or_empty_batches_are_rejected() {
        let a = m(&[vec![1.0, 2.0]]);
        let p = m(&[vec![1.0], vec![2.0]]);
        assert!(rmse(&a, &p).is_err());
        assert!(mape(&a, &p).is_err());
        let empty = Matrix::zeros(0, 0);
        assert!(rmse(&empty, &empty).is_err());
    }

    #[test]
    fn trial_summaries_use_population_std_and_min_best() {
        let s = summarize_trials(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.best, 1.0);
        assert!(s.best <= s.mean);

        let one = summarize_trials(&[5.0]).unwrap();
        assert_eq!((one.mean, one.std, one.best), (5.0, 0.0, 5.0));

        assert!(summarize_trials(&[]).is_err());
    }

    #[test]
    fn summaries_are_permutation_invariant() {
        let base = vec![3.5, 1.25, 9.0, 2.0, 4.75];
        let expect = summarize_trials(&base).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut shuffled = base.clone();
        for _ in 0..10 {
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            let got = summarize_trials(&shuffled).unwrap();
            assert_eq!(got.mean, expect.mean);
            assert!((got.std - expect.std).abs() < 1e-15);
            assert_eq!(got.best, expect.best);
        }
    }

    #[test]
    fn metric_result_lists_summarize_per_metric() {
        let results = vec![
            MetricResult {
                rmse: 1.0,
                mape: 4.0,
                mape_paper_literal: 2.0,
                n_points: 10,
            },
            MetricResult {
                rmse: 3.0,
                mape: 16.0,
                mape_paper_literal: 4.0,
                n_points: 10,
            },
        ];
        let s = summarize_metric_results(&results).unwrap();
        assert_eq!(s.rmse.mean, 2.0);
        assert_eq!(s.rmse.best, 1.0);
        assert_eq!(s.mape.mean, 10.0);
        assert_eq!(s.mape_paper_literal.best, 2.0);
        assert!(summarize_metric_results(&[]).is_err());
    }

    #[test]
    fn mean_std_formatting() {
        assert_eq!(format_mean_std(2.0, (2.0f64 / 3.0).sqrt()), "2.000 (0.816)");
        assert_eq!(format_mean_std(104.766, 0.0), "104.766 (0.000)");
        assert_eq!(format_mean_std(-1.23456, 10.0), "-1.235 (10.000)");
    }
}
