use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::metrics::{moving_average, summarize, write_failures, write_metrics, write_summary, Failure, MetricRow, SummaryRow};
use crate::agents::{run_episode, Agent, Hyperparams, TraceStep, Variant};
use crate::env::{ChainEnv, EnvConfig};
use crate::error::{Error, Result};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable per-run seed: depends only on the base seed and the run's own
/// `(variant, n_g, seed index)`, never on the rest of the grid.
pub fn run_seed(base: u64, variant: Variant, ng: usize, seed: usize) -> u64 {
    let mut h = splitmix64(base);
    for part in [variant as u64, ng as u64, seed as u64] {
        h = splitmix64(h ^ part);
    }
    h
}

/// One cell of the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct RunSpec {
    pub variant: Variant,
    pub ng: usize,
    pub seed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub spec: RunSpec,
    pub rows: Vec<MetricRow>,
    pub failure: Option<Failure>,
    /// `(episode, step)` pairs when traces were requested.
    pub traces: Vec<(usize, TraceStep)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    /// Ordered by `(variant, ng, seed)`.
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    pub fn rows(&self) -> Vec<MetricRow> {
        self.runs.iter().flat_map(|r| r.rows.iter().cloned()).collect()
    }

    pub fn failures(&self) -> Vec<Failure> {
        self.runs.iter().filter_map(|r| r.failure.clone()).collect()
    }
}

/// Every run of the grid, in output order.
pub fn schedule(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut variants = cfg.variants.clone();
    variants.sort();
    variants.dedup();
    let mut ngs = cfg.ng_values.clone();
    ngs.sort();
    ngs.dedup();
    let mut specs = Vec::new();
    for &variant in &variants {
        for &ng in &ngs {
            specs.extend((0..cfg.seeds).map(|seed| RunSpec { variant, ng, seed }));
        }
    }
    specs
}

/// Trains one fresh agent for `episodes` episodes.
pub fn run_single(spec: RunSpec, episodes: usize, window: usize, base_seed: u64, hp: &Hyperparams, wall_clock: bool, traces: bool) -> RunRecord {
    let seed = run_seed(base_seed, spec.variant, spec.ng, spec.seed);
    let mut record = RunRecord { spec, rows: Vec::with_capacity(episodes), failure: None, traces: Vec::new() };
    let fail = |episode: usize, e: Error| Failure { variant: spec.variant, ng: spec.ng, seed: spec.seed, episode, error: e.to_string() };
    let setup = EnvConfig::new(spec.ng).and_then(|c| Ok((ChainEnv::new(c), Agent::new(spec.variant, spec.ng, hp.clone(), seed)?)));
    let (env, mut agent) = match setup {
        Ok(x) => x,
        Err(e) => {
            record.failure = Some(fail(0, e));
            return record;
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let mut rewards = Vec::with_capacity(episodes);
    let mut env_steps = 0u64;
    let mut buf = Vec::new();
    for episode in 0..episodes {
        let start = Instant::now();
        buf.clear();
        let result = match run_episode(&mut agent, &env, &mut rng, traces.then_some(&mut buf)) {
            Ok(r) => r,
            Err(e) => {
                record.failure = Some(fail(episode, e));
                break;
            }
        };
        let ms = wall_clock.then(|| start.elapsed().as_secs_f64() * 1e3);
        record.traces.extend(buf.iter().map(|&t| (episode, t)));
        rewards.push(result.reward);
        env_steps += result.steps as u64;
        let ma = *moving_average(&rewards[rewards.len().saturating_sub(window)..], window).last().expect("non-empty");
        record.rows.push(MetricRow {
            variant: spec.variant,
            ng: spec.ng,
            seed: spec.seed,
            episode,
            reward: result.reward,
            moving_avg: ma,
            partial_window: rewards.len() < window,
            env_steps,
            ms,
        });
    }
    record
}

/// Runs the whole grid on `cfg.workers` threads. Output order and content do
/// not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let specs = schedule(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        specs
            .par_iter()
            .map(|&spec| run_single(spec, cfg.episodes, cfg.window, cfg.base_seed, &cfg.hyperparams, cfg.wall_clock, cfg.dump_traces))
            .collect()
    });
    let rows: Vec<MetricRow> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    let failures: Vec<Failure> = runs.iter().filter_map(|r| r.failure.clone()).collect();
    let summary = summarize(&rows, &failures);
    Ok(ExperimentResult { runs, summary })
}

/// Creates `dir` and confirms it is writable.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write_probe");
    File::create(&probe)?;
    fs::remove_file(&probe)?;
    Ok(())
}

pub fn write_traces(dir: &Path, record: &RunRecord) -> Result<()> {
    let s = record.spec;
    let path = dir.join(format!("{}_ng{}_seed{}.tsv", s.variant, s.ng, s.seed));
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "episode\tstep\tposition\taction\tnext_position\tdone\treward")?;
    for (episode, t) in &record.traces {
        writeln!(w, "{episode}\t{}\t{}\t{}\t{}\t{}\t{}", t.step, t.position, t.action.index(), t.next_position, t.done, t.reward)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `config.txt`, `metrics.csv`, `summary.csv`, `failures.csv` and,
/// when requested, one trace file per run under `traces/`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<()> {
    prepare_output_dir(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_config_string())?;
    write_metrics(BufWriter::new(File::create(dir.join("metrics.csv"))?), &result.rows())?;
    write_summary(BufWriter::new(File::create(dir.join("summary.csv"))?), &result.summary)?;
    write_failures(BufWriter::new(File::create(dir.join("failures.csv"))?), &result.failures())?;
    if cfg.dump_traces {
        let traces = dir.join("traces");
        fs::create_dir_all(&traces)?;
        for run in &result.runs {
            write_traces(&traces, run)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::{mann_kendall, read_failures, read_metrics};

    fn tiny(variants: &[Variant]) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            variants: variants.to_vec(),
            ng_values: vec![4],
            seeds: 2,
            episodes: 12,
            window: 5,
            ..ExperimentConfig::default()
        };
        cfg.hyperparams.hidden = vec![8];
        cfg.hyperparams.batch_size = 4;
        cfg.hyperparams.buffer_capacity = 100;
        cfg
    }

    #[test]
    fn run_seeds_are_distinct_and_stable() {
        let a = run_seed(7, Variant::MiSac, 6, 0);
        assert_eq!(a, run_seed(7, Variant::MiSac, 6, 0));
        assert_ne!(a, run_seed(7, Variant::MiSac, 6, 1));
        assert_ne!(a, run_seed(7, Variant::MiSac, 8, 0));
        assert_ne!(a, run_seed(7, Variant::Hdqn, 6, 0));
        assert_ne!(a, run_seed(8, Variant::MiSac, 6, 0));
    }

    #[test]
    fn grid_size_matches_config() {
        let cfg = ExperimentConfig::default();
        assert_eq!(schedule(&cfg).len(), 4 * 4 * 20);
    }

    #[test]
    fn rows_are_ordered_and_complete() {
        let cfg = tiny(&[Variant::MiSac, Variant::Hdqn]);
        let res = run_experiment(&cfg).unwrap();
        let rows = res.rows();
        assert_eq!(rows.len(), 2 * 2 * 12);
        let keys: Vec<_> = rows.iter().map(|r| (r.variant, r.ng, r.seed, r.episode)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(rows.iter().all(|r| r.ms.is_none()));
        assert!(rows.iter().all(|r| r.partial_window == (r.episode + 1 < 5)));
        assert_eq!(res.summary.len(), 2);
        for run in &res.runs {
            let steps: Vec<u64> = run.rows.iter().map(|r| r.env_steps).collect();
            assert!(steps.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let mut cfg = tiny(&[Variant::EntropySac, Variant::AdversarialMiSac]);
        let one = run_experiment(&cfg).unwrap();
        cfg.workers = 3;
        assert_eq!(run_experiment(&cfg).unwrap(), one);
    }

    #[test]
    fn dropping_a_run_leaves_others_identical() {
        let cfg = tiny(&[Variant::Hdqn, Variant::MiSac]);
        let full = run_experiment(&cfg).unwrap();
        let mut fewer = cfg.clone();
        fewer.variants = vec![Variant::MiSac];
        let part = run_experiment(&fewer).unwrap();
        let from_full: Vec<_> = full.runs.iter().filter(|r| r.spec.variant == Variant::MiSac).cloned().collect();
        assert_eq!(part.runs, from_full);
    }

    #[test]
    fn summary_recomputes_from_written_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(&[Variant::Hdqn, Variant::AdversarialMiSac]);
        cfg.dump_traces = true;
        let res = run_experiment(&cfg).unwrap();
        write_outputs(dir.path(), &cfg, &res).unwrap();
        let rows = read_metrics(File::open(dir.path().join("metrics.csv")).unwrap()).unwrap();
        let failures = read_failures(File::open(dir.path().join("failures.csv")).unwrap()).unwrap();
        let mut again = Vec::new();
        write_summary(&mut again, &summarize(&rows, &failures)).unwrap();
        assert_eq!(again, fs::read(dir.path().join("summary.csv")).unwrap());
        let trace = fs::read_to_string(dir.path().join("traces/hdqn_ng4_seed0.tsv")).unwrap();
        assert!(trace.starts_with("episode\tstep\tposition\taction\tnext_position\tdone\treward\n"));
        assert_eq!(ExperimentConfig::from_file(&dir.path().join("config.txt")).unwrap(), cfg);
    }

    #[test]
    fn unwritable_output_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain_file");
        fs::write(&file, "x").unwrap();
        assert!(prepare_output_dir(&file.join("sub")).is_err());
    }

    #[test]
    fn diverging_run_is_recorded_and_others_proceed() {
        let mut cfg = tiny(&[Variant::MiSac]);
        // A huge step size drives the critics to overflow.
        cfg.hyperparams.learning_rate = 1e300;
        cfg.episodes = 60;
        let res = run_experiment(&cfg).unwrap();
        let failures = res.failures();
        assert!(!failures.is_empty());
        for run in &res.runs {
            match &run.failure {
                Some(f) => assert_eq!(run.rows.len(), f.episode),
                None => assert_eq!(run.rows.len(), cfg.episodes),
            }
        }
        assert_eq!(res.summary[0].failed_runs, failures.len());
    }

    #[test]
    fn untrained_agent_has_flat_curve() {
        let mut cfg = tiny(&[Variant::EntropySac]);
        cfg.hyperparams.learning_rate = 0.0;
        cfg.seeds = 1;
        cfg.ng_values = vec![6];
        cfg.episodes = 2000;
        cfg.window = 20;
        let res = run_experiment(&cfg).unwrap();
        let rows = &res.runs[0].rows;
        let blocks: Vec<f64> = rows.iter().filter(|r| (r.episode + 1) % cfg.window == 0).map(|r| r.moving_avg).collect();
        assert_eq!(blocks.len(), 100);
        let mk = mann_kendall(&blocks);
        assert!(mk.z.abs() < 2.576, "trend z = {}", mk.z);
    }
}
