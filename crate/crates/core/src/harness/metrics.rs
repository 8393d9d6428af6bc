use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::agents::Variant;
use crate::env::{optimal_return_oracle, EnvConfig};
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 9] = ["variant", "ng", "seed", "episode", "reward", "moving_avg", "partial_window", "env_steps", "ms"];
pub const SUMMARY_HEADER: [&str; 6] = ["variant", "ng", "mean_final", "stderr", "oracle_ratio", "failed_runs"];
pub const FAILURE_HEADER: [&str; 5] = ["variant", "ng", "seed", "episode", "error"];

/// Element `i` is the mean of the last `min(i + 1, window)` values.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "moving-average window must be >= 1");
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &x) in series.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub variant: Variant,
    pub ng: usize,
    /// Seed index within the sweep.
    pub seed: usize,
    pub episode: usize,
    pub reward: f64,
    pub moving_avg: f64,
    /// Fewer than `window` episodes back the average.
    pub partial_window: bool,
    /// Environment steps taken in this run, including this episode.
    pub env_steps: u64,
    pub ms: Option<f64>,
}

/// A run aborted by an error.
#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub variant: Variant,
    pub ng: usize,
    pub seed: usize,
    /// Episode during which the run stopped.
    pub episode: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub ng: usize,
    /// Runs that completed.
    pub runs: usize,
    /// `None` when no run of the cell completed.
    pub mean_final: Option<f64>,
    pub stderr: Option<f64>,
    pub oracle_ratio: Option<f64>,
    pub failed_runs: usize,
}

/// Mean and standard error (sample deviation over `√n`; zero for one value).
pub fn mean_stderr(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

/// Final window average of every completed run, keyed by `(variant, ng, seed)`.
pub fn final_values(rows: &[MetricRow], failures: &[Failure]) -> BTreeMap<(Variant, usize, usize), f64> {
    let mut last: BTreeMap<(Variant, usize, usize), &MetricRow> = BTreeMap::new();
    for r in rows {
        let key = (r.variant, r.ng, r.seed);
        match last.get(&key) {
            Some(prev) if prev.episode >= r.episode => {}
            _ => {
                last.insert(key, r);
            }
        }
    }
    for f in failures {
        last.remove(&(f.variant, f.ng, f.seed));
    }
    last.into_iter().map(|(k, r)| (k, r.moving_avg)).collect()
}

/// Per-cell summary over every `(variant, ng)` seen in `rows` or `failures`.
pub fn summarize(rows: &[MetricRow], failures: &[Failure]) -> Vec<SummaryRow> {
    let finals = final_values(rows, failures);
    let mut cells: BTreeMap<(Variant, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        cells.entry((r.variant, r.ng)).or_default();
    }
    for f in failures {
        cells.entry((f.variant, f.ng)).or_default().1 += 1;
    }
    for ((v, ng, _), value) in finals {
        cells.entry((v, ng)).or_default().0.push(value);
    }
    let mut oracle_cache: BTreeMap<usize, f64> = BTreeMap::new();
    cells
        .into_iter()
        .map(|((variant, ng), (values, failed_runs))| {
            let stats = mean_stderr(&values);
            let oracle = *oracle_cache
                .entry(ng)
                .or_insert_with(|| EnvConfig::new(ng).map(|c| optimal_return_oracle(&c, None)).unwrap_or(f64::NAN));
            SummaryRow {
                variant,
                ng,
                runs: values.len(),
                mean_final: stats.map(|s| s.0),
                stderr: stats.map(|s| s.1),
                oracle_ratio: stats.map(|s| s.0 / oracle),
                failed_runs,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for r in rows {
        out.write_record([
            r.variant.name().to_string(),
            r.ng.to_string(),
            r.seed.to_string(),
            r.episode.to_string(),
            r.reward.to_string(),
            r.moving_avg.to_string(),
            r.partial_window.to_string(),
            r.env_steps.to_string(),
            opt(r.ms),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for r in rows {
        out.write_record([
            r.variant.name().to_string(),
            r.ng.to_string(),
            opt(r.mean_final),
            opt(r.stderr),
            opt(r.oracle_ratio),
            r.failed_runs.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_failures<W: Write>(w: W, failures: &[Failure]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(FAILURE_HEADER)?;
    for f in failures {
        out.write_record([f.variant.name().to_string(), f.ng.to_string(), f.seed.to_string(), f.episode.to_string(), f.error.clone()])?;
    }
    out.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::Config(format!("missing column {name}")))?;
    raw.parse().map_err(|_| Error::Config(format!("column {name}: cannot parse {raw:?}")))
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Config(format!("unexpected CSV header {header:?}")));
    }
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_reader(r);
    check_header(&mut reader, &METRICS_HEADER)?;
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            let ms = rec.get(8).filter(|s| !s.is_empty()).map(|s| s.parse()).transpose().map_err(|_| Error::Config("column ms".into()))?;
            Ok(MetricRow {
                variant: field(&rec, 0, "variant")?,
                ng: field(&rec, 1, "ng")?,
                seed: field(&rec, 2, "seed")?,
                episode: field(&rec, 3, "episode")?,
                reward: field(&rec, 4, "reward")?,
                moving_avg: field(&rec, 5, "moving_avg")?,
                partial_window: field(&rec, 6, "partial_window")?,
                env_steps: field(&rec, 7, "env_steps")?,
                ms,
            })
        })
        .collect()
}

pub fn read_failures<R: Read>(r: R) -> Result<Vec<Failure>> {
    let mut reader = csv::Reader::from_reader(r);
    check_header(&mut reader, &FAILURE_HEADER)?;
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(Failure {
                variant: field(&rec, 0, "variant")?,
                ng: field(&rec, 1, "ng")?,
                seed: field(&rec, 2, "seed")?,
                episode: field(&rec, 3, "episode")?,
                error: rec.get(4).unwrap_or_default().to_string(),
            })
        })
        .collect()
}

/// Mann-Kendall trend statistic with the tie-corrected normal approximation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MannKendall {
    pub s: i64,
    pub z: f64,
}

pub fn mann_kendall(series: &[f64]) -> MannKendall {
    let n = series.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match series[j].partial_cmp(&series[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        ties += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j;
    }
    let nf = n as f64;
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - ties) / 18.0;
    let z = if var <= 0.0 {
        0.0
    } else if s > 0 {
        (s as f64 - 1.0) / var.sqrt()
    } else if s < 0 {
        (s as f64 + 1.0) / var.sqrt()
    } else {
        0.0
    };
    MannKendall { s, z }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moving_average_examples() {
        assert!(moving_average(&[], 3).is_empty());
        assert_eq!(moving_average(&[2.5; 7], 3), vec![2.5; 7]);
        let alt: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let ma = moving_average(&alt, 2);
        assert_eq!(ma[0], 0.0);
        assert!(ma[1..].iter().all(|&v| v == 0.5));
    }

    proptest! {
        #[test]
        fn moving_average_matches_resummation(series in prop::collection::vec(-10.0f64..10.0, 0..300), window in 1usize..120) {
            let ma = moving_average(&series, window);
            prop_assert_eq!(ma.len(), series.len());
            for i in 0..series.len() {
                let lo = (i + 1).saturating_sub(window);
                let naive = series[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
                prop_assert!((ma[i] - naive).abs() < 1e-12);
            }
        }
    }

    fn row(v: Variant, ng: usize, seed: usize, episode: usize, ma: f64) -> MetricRow {
        MetricRow { variant: v, ng, seed, episode, reward: ma, moving_avg: ma, partial_window: false, env_steps: 1, ms: None }
    }

    #[test]
    fn single_seed_summary_has_zero_stderr() {
        let s = summarize(&[row(Variant::MiSac, 6, 0, 0, 0.3), row(Variant::MiSac, 6, 0, 1, 0.4)], &[]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean_final, Some(0.4));
        assert_eq!(s[0].stderr, Some(0.0));
    }

    #[test]
    fn identical_seeds_have_zero_stderr_and_known_ratio() {
        let rows: Vec<_> = (0..5).map(|k| row(Variant::Hdqn, 8, k, 0, 0.01)).collect();
        let s = summarize(&rows, &[]);
        assert_eq!(s[0].stderr, Some(0.0));
        let oracle = optimal_return_oracle(&EnvConfig::new(8).unwrap(), None);
        assert!((s[0].oracle_ratio.unwrap() - 0.01 / oracle).abs() < 1e-15);
    }

    #[test]
    fn failed_runs_are_counted_not_averaged() {
        let rows = vec![row(Variant::Hdqn, 6, 0, 0, 1.0), row(Variant::Hdqn, 6, 1, 0, 0.0), row(Variant::MiSac, 6, 0, 0, 0.5)];
        let failures = vec![
            Failure { variant: Variant::Hdqn, ng: 6, seed: 1, episode: 0, error: "x".into() },
            Failure { variant: Variant::MiSac, ng: 6, seed: 0, episode: 0, error: "y".into() },
        ];
        let s = summarize(&rows, &failures);
        assert_eq!(s[0].mean_final, Some(1.0));
        assert_eq!(s[0].failed_runs, 1);
        assert_eq!(s[1].mean_final, None, "a cell with no completed run is reported empty");
        assert_eq!(s[1].failed_runs, 1);
    }

    #[test]
    fn stderr_by_hand() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(mean_stderr(&[]).is_none());
    }

    #[test]
    fn csv_round_trip() {
        let mut rows = vec![row(Variant::AdversarialMiSac, 12, 3, 7, 0.1 + 0.2)];
        rows[0].ms = Some(1.25);
        rows.push(row(Variant::EntropySac, 18, 0, 0, 1.0 / 3.0));
        let mut buf = Vec::new();
        write_metrics(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"variant,ng,seed,episode,reward,moving_avg,partial_window,env_steps,ms\n"));
        assert_eq!(read_metrics(buf.as_slice()).unwrap(), rows);
        let f = vec![Failure { variant: Variant::MiSac, ng: 6, seed: 2, episode: 9, error: "non-finite value in loss, really".into() }];
        let mut buf = Vec::new();
        write_failures(&mut buf, &f).unwrap();
        assert_eq!(read_failures(buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn mann_kendall_detects_trends() {
        let up: Vec<f64> = (0..30).map(|i| i as f64).collect();
        assert!(mann_kendall(&up).z > 3.0);
        let down: Vec<f64> = up.iter().rev().copied().collect();
        assert!(mann_kendall(&down).z < -3.0);
        assert_eq!(mann_kendall(&[1.0; 20]).z, 0.0);
        assert_eq!(mann_kendall(&up).s, 30 * 29 / 2);
    }
}
