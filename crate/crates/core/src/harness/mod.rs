//! Scenario runner: builds a simulated link from a [`ScenarioConfig`], runs
//! the tracking loop, and writes results to disk.
//!
//! A run directory holds `series.csv`, `summary.txt` and `config.resolved`;
//! a sample-size-table run holds `table.csv` and `config.resolved`.

mod config;

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{
    preset, ChannelSection, ScenarioConfig, ScenarioKind, ScenarioSection, TableSection,
    PRESET_NAMES,
};

use crate::error::{Error, Result};
use crate::feedback::{track, ControllerState, MonteCarloProbe, Sampling, TrackSettings, World};
use crate::optics::EpcState;
use crate::series::{format_sig, summarize, Summary, TimeSeries};
use crate::stats::{delta_table, DeltaTable};

// Independent random streams derived from one seed. Channel, axis drift and
// initial jitter do not depend on control actions, so runs with and without
// control see the same disturbance.
const STREAM_CHANNEL: u64 = 1;
const STREAM_DRIFT: u64 = 2;
const STREAM_JITTER: u64 = 3;
const STREAM_MEASURE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Runs a time-series scenario and summarizes it.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(TimeSeries, Summary)> {
    cfg.validate()?;
    if cfg.scenario.kind == ScenarioKind::SampleSizeTable {
        return Err(Error::config(
            "scenario.kind",
            "sample-size-table produces a table, not a time series",
        ));
    }
    let seed = cfg.scenario.seed;
    let mut jitter = stream(seed, STREAM_JITTER);
    let mut z = ControllerState::new(EpcState::with_jitter(&cfg.epc, &mut jitter)?);
    let mut x = ControllerState::new(EpcState::with_jitter(&cfg.epc, &mut jitter)?);
    let mut world = World {
        channel: cfg.channel_model(),
        epc_params: cfg.epc,
        channel_rng: stream(seed, STREAM_CHANNEL),
        drift_rng: stream(seed, STREAM_DRIFT),
    };
    let sampling = [
        Sampling::from(&cfg.controller_z),
        Sampling::from(&cfg.controller_x),
    ];
    let mut probe = MonteCarloProbe::new(
        cfg.source,
        cfg.link.transmittance(),
        sampling,
        stream(seed, STREAM_MEASURE),
    )
    .with_sampler(cfg.scenario.sampler);
    let settings = TrackSettings {
        controllers: [cfg.controller_z, cfg.controller_x],
        fc_seconds: cfg.scenario.fc_seconds,
        control_enabled: cfg.scenario.control_enabled,
    };
    let series = track(
        &mut z,
        &mut x,
        &mut world,
        &mut probe,
        &settings,
        cfg.scenario.duration,
    );
    let summary = summarize(&series)?;
    Ok((series, summary))
}

/// Estimator table for the `[table]` section of `cfg`.
pub fn sample_size_table(cfg: &ScenarioConfig) -> Result<DeltaTable> {
    let t = &cfg.table;
    delta_table(&t.qber, &t.b, t.mu, t.eta)
}

/// CSV form of a [`DeltaTable`]: header `B,<qber>...`, one row per sample
/// size. Numbers use the shortest exact representation so parsing the text
/// recovers the table bit for bit.
pub fn table_to_csv(table: &DeltaTable) -> String {
    let mut out = String::from("B");
    for q in &table.qber_values {
        let _ = write!(out, ",{q}");
    }
    out.push('\n');
    for (b, row) in table.b_values.iter().zip(&table.rows) {
        let _ = write!(out, "{b}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn table_from_csv(text: &str) -> Result<DeltaTable> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty table".into()))?;
    let mut cols = header.split(',');
    if cols.next() != Some("B") {
        return Err(Error::Parse(format!("unexpected table header `{header}`")));
    }
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad number `{s}`")))
    };
    let qber_values = cols.map(num).collect::<Result<Vec<_>>>()?;
    let mut b_values = Vec::new();
    let mut rows = Vec::new();
    for line in lines {
        let mut f = line.split(',');
        let b = f.next().unwrap_or_default();
        b_values.push(
            b.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad sample size `{b}`")))?,
        );
        let row = f.map(num).collect::<Result<Vec<_>>>()?;
        if row.len() != qber_values.len() {
            return Err(Error::Parse(format!(
                "row for B = {b} has {} values, expected {}",
                row.len(),
                qber_values.len()
            )));
        }
        rows.push(row);
    }
    Ok(DeltaTable {
        qber_values,
        b_values,
        rows,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

/// What a call to [`run_to_dir`] produced.
#[derive(Debug, Clone)]
pub enum RunOutput {
    Series(TimeSeries, Summary),
    Table(DeltaTable),
}

/// Runs `cfg` and writes its artifacts into `dir`, creating it if needed.
pub fn run_to_dir(cfg: &ScenarioConfig, dir: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    create_dir(dir)?;
    write_file(&dir.join("config.resolved"), &cfg.to_toml())?;
    if cfg.scenario.kind == ScenarioKind::SampleSizeTable {
        let table = sample_size_table(cfg)?;
        write_file(&dir.join("table.csv"), &table_to_csv(&table))?;
        return Ok(RunOutput::Table(table));
    }
    let (series, summary) = run_scenario(cfg)?;
    series.write_csv(&dir.join("series.csv"))?;
    write_file(&dir.join("summary.txt"), &summary.to_text())?;
    Ok(RunOutput::Series(series, summary))
}

/// Runs `n` replicas of a time-series scenario with seeds `seed, seed+1, ...`
/// in parallel. Replica `k` goes to `dir/replica-k`; `dir/summary.txt`
/// aggregates them. Returns the per-replica summaries in seed order.
pub fn run_replicas(cfg: &ScenarioConfig, n: u32, dir: &Path) -> Result<Vec<Summary>> {
    if n == 0 {
        return Err(Error::config("replicas", "must be >= 1"));
    }
    if cfg.scenario.kind == ScenarioKind::SampleSizeTable {
        return Err(Error::config(
            "scenario.kind",
            "replicas apply to time-series scenarios only",
        ));
    }
    cfg.validate()?;
    let base = cfg.scenario.seed;
    if base
        .checked_add(u64::from(n) - 1)
        .is_none_or(|s| s > i64::MAX as u64)
    {
        return Err(Error::config("scenario.seed", "seed range overflows"));
    }
    create_dir(dir)?;
    let results: Vec<Result<Summary>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .map(|k| {
                let mut c = cfg.clone();
                c.scenario.seed = base + u64::from(k);
                let sub = dir.join(format!("replica-{k}"));
                s.spawn(move || match run_to_dir(&c, &sub)? {
                    RunOutput::Series(_, summary) => Ok(summary),
                    RunOutput::Table(_) => unreachable!("checked above"),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replica thread panicked"))
            .collect()
    });
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_file(&dir.join("summary.txt"), &aggregate_text(&summaries))?;
    Ok(summaries)
}

/// Across-replica aggregate in `key = value` form.
pub fn aggregate_text(summaries: &[Summary]) -> String {
    let n = summaries.len() as f64;
    let mean = |f: fn(&Summary) -> f64| summaries.iter().map(f).sum::<f64>() / n;
    let spread = |f: fn(&Summary) -> f64| {
        let m = mean(f);
        (summaries.iter().map(|s| (f(s) - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    format!(
        "replicas = {}\nmean_qber = {}\nmean_qber_spread = {}\nstd_qber = {}\nmax_qber = {}\nrecenter_count = {}\nnon_converged_count = {}\n",
        summaries.len(),
        format_sig(mean(|s| s.mean_qber)),
        format_sig(spread(|s| s.mean_qber)),
        format_sig(mean(|s| s.std_qber)),
        format_sig(summaries.iter().map(|s| s.max_qber).fold(f64::NEG_INFINITY, f64::max)),
        summaries.iter().map(|s| s.recenter_count).sum::<u64>(),
        summaries.iter().map(|s| s.non_converged_count).sum::<u64>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(kind: &str, cycles: u64) -> ScenarioConfig {
        let mut cfg = preset(kind).unwrap();
        cfg.scenario.duration = cycles;
        cfg
    }

    #[test]
    fn table_csv_round_trip_is_exact() {
        let cfg = ScenarioConfig::default();
        let t = sample_size_table(&cfg).unwrap();
        let text = table_to_csv(&t);
        assert!(text.starts_with("B,0.01,0.02,0.03\n"));
        assert_eq!(table_from_csv(&text).unwrap(), t);
    }

    #[test]
    fn table_kind_has_no_series() {
        assert!(matches!(
            run_scenario(&preset("table").unwrap()),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn same_seed_same_series() {
        let cfg = short("drift24h", 20);
        let (a, _) = run_scenario(&cfg).unwrap();
        let (b, _) = run_scenario(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let mut other = cfg.clone();
        other.scenario.seed += 1;
        let (c, _) = run_scenario(&other).unwrap();
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn disturbance_independent_of_control() {
        // cycle 0 is measured before any correction, so both runs agree there
        let cfg = short("scramble-0.6", 3);
        let mut off = cfg.clone();
        off.scenario.control_enabled = false;
        let (a, _) = run_scenario(&cfg).unwrap();
        let (b, _) = run_scenario(&off).unwrap();
        assert_eq!(a.rows[0].qber_est, b.rows[0].qber_est);
        assert!(b.rows.iter().all(|r| r.voltages == [75.0; 8]));
    }

    #[test]
    fn replicas_write_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = short("static-converge", 5);
        let s = run_replicas(&cfg, 3, dir.path()).unwrap();
        assert_eq!(s.len(), 3);
        for k in 0..3 {
            let sub = dir.path().join(format!("replica-{k}"));
            assert!(sub.join("series.csv").exists());
            assert!(sub.join("summary.txt").exists());
            let resolved = ScenarioConfig::load(&sub.join("config.resolved")).unwrap();
            assert_eq!(resolved.scenario.seed, cfg.scenario.seed + k);
        }
        let agg = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(agg.starts_with("replicas = 3\n"));
    }
}
