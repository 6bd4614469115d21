//! Plot-ready data from finished run directories.
//!
//! | file                  | columns                                                      |
//! |-----------------------|--------------------------------------------------------------|
//! | `reward_series.csv`   | `variant,seed,iteration,reward,smoothed`                     |
//! | `reward_bands.csv`    | `variant,iteration,median,min,max` of the smoothed series    |
//! | `throughput_cdf.csv`  | `variant,slice,rate_bps,cdf`                                 |
//! | `summary.csv`         | per variant: reward and convergence medians with min/max, per-slice final QoS and its change over marl-noprompt in percent |
//! | `export_meta.txt`     | window and definitions                                       |
//!
//! Everything is recomputed from `metrics.csv`, `ue_rates.csv` and
//! `config.snapshot`; exporting the same directories twice gives identical
//! files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{CliError, RunConfig, Variant, SNAPSHOT_FILE};
use crate::marl::{check_convergence, moving_average, EVENTS_FILE, METRICS_FILE, UE_RATES_FILE};

pub const REWARD_SERIES_FILE: &str = "reward_series.csv";
pub const REWARD_BANDS_FILE: &str = "reward_bands.csv";
pub const CDF_FILE: &str = "throughput_cdf.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const META_FILE: &str = "export_meta.txt";

/// Default moving-average window for reward curves.
pub const SMOOTHING_WINDOW: usize = 50;

/// The raw series of one finished run.
#[derive(Clone, Debug)]
pub struct RunData {
    pub dir: PathBuf,
    pub variant: Variant,
    pub seed: u64,
    /// `reward_mean` per iteration.
    pub reward: Vec<f64>,
    /// `q_slice<l>` per iteration, `[slice][iteration]`.
    pub qos: Vec<Vec<f64>>,
    /// `(iteration, value)` of the series the plateau test ran on.
    pub convergence: Vec<(usize, f64)>,
    /// `(iteration, slice (0-based), rate_bps)` from the UE rate dump.
    pub rates: Vec<(usize, usize, f64)>,
    pub convergence_window: usize,
    pub convergence_tol: f64,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self, String> {
        let cfg = RunConfig::load(&dir.join(SNAPSHOT_FILE)).map_err(|e| e.to_string())?;
        let events = fs::read_to_string(dir.join(EVENTS_FILE)).map_err(|e| format!("{EVENTS_FILE}: {e}"))?;
        if !events.lines().any(|l| l.split('\t').nth(1) == Some("finish")) {
            return Err("run did not finish".into());
        }
        let mut r = csv::Reader::from_path(dir.join(METRICS_FILE)).map_err(|e| e.to_string())?;
        let headers = r.headers().map_err(|e| e.to_string())?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let reward_col = col("reward_mean").ok_or("metrics.csv has no reward_mean column")?;
        let eval_col = col("eval_mean").ok_or("metrics.csv has no eval_mean column")?;
        let evaluating = cfg.train.eval_interval > 0 && cfg.train.eval_episodes > 0;
        let mut convergence = Vec::new();
        let q_cols: Vec<usize> = (1..)
            .map_while(|l| col(&format!("q_slice{l}")))
            .collect();
        let mut reward = Vec::new();
        let mut qos = vec![Vec::new(); q_cols.len()];
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let num = |c: usize| -> Result<f64, String> {
                rec[c].parse::<f64>().map_err(|e| format!("metrics.csv: {e}"))
            };
            reward.push(num(reward_col)?);
            if !evaluating {
                convergence.push((reward.len() - 1, *reward.last().unwrap()));
            } else if !rec[eval_col].is_empty() {
                convergence.push((reward.len() - 1, num(eval_col)?));
            }
            for (q, &c) in qos.iter_mut().zip(&q_cols) {
                q.push(num(c)?);
            }
        }
        if reward.is_empty() {
            return Err("metrics.csv has no rows".into());
        }
        let mut rates = Vec::new();
        let mut r = csv::Reader::from_path(dir.join(UE_RATES_FILE)).map_err(|e| e.to_string())?;
        for rec in r.deserialize::<(usize, usize, usize, usize, usize, f64)>() {
            let (it, _actor, _step, _ue, slice, rate) = rec.map_err(|e| e.to_string())?;
            rates.push((it, slice - 1, rate));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            variant: cfg.variant,
            seed: cfg.seeds[0],
            reward,
            qos,
            convergence,
            rates,
            convergence_window: cfg.train.convergence_window,
            convergence_tol: cfg.train.convergence_tol,
        })
    }

    /// First converged iteration counted from 1, or the number of iterations run.
    pub fn iterations_to_converge(&self) -> usize {
        let values: Vec<f64> = self.convergence.iter().map(|c| c.1).collect();
        let n = iterations_to_converge(&values, self.convergence_window, self.convergence_tol);
        if n < values.len() || check_convergence(&values, self.convergence_window, self.convergence_tol) {
            self.convergence[n - 1].0 + 1
        } else {
            self.reward.len()
        }
    }

    /// Mean of each slice's QoS over the last `window` iterations.
    pub fn final_qos(&self, window: usize) -> Vec<f64> {
        self.qos.iter().map(|q| tail_mean(q, window)).collect()
    }

    /// UE rates per slice from the last `window` iterations.
    pub fn final_rates(&self, window: usize) -> BTreeMap<usize, Vec<f64>> {
        let last = self.reward.len() - 1;
        let from = (last + 1).saturating_sub(window);
        let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for &(it, s, r) in &self.rates {
            if it >= from {
                out.entry(s).or_default().push(r);
            }
        }
        out
    }
}

fn tail_mean(xs: &[f64], window: usize) -> f64 {
    let tail = &xs[xs.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// Length of the shortest prefix on which the plateau test holds, or the
/// history length.
pub fn iterations_to_converge(history: &[f64], window: usize, tol: f64) -> usize {
    (1..=history.len())
        .find(|&n| check_convergence(&history[..n], window, tol))
        .unwrap_or(history.len())
}

/// `(x, fraction of values ≤ x)` at every distinct value, ascending.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = p,
            _ => out.push((x, p)),
        }
    }
    out
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub runs: usize,
    /// Median, min, max over seeds of the last smoothed reward.
    pub final_reward: [f64; 3],
    /// Median, min, max over seeds of iterations-to-converge.
    pub iterations: [f64; 3],
    /// Per-slice QoS, final-window mean averaged over seeds.
    pub final_qos: Vec<f64>,
    /// `(variant − baseline)/baseline` in percent; `None` without a usable baseline.
    pub improvement_pct: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct ExportReport {
    pub exported: Vec<PathBuf>,
    pub skipped: Vec<(PathBuf, String)>,
    pub summary: Vec<SummaryRow>,
}

fn summarize(runs: &BTreeMap<Variant, Vec<RunData>>, window: usize) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = runs
        .iter()
        .map(|(&variant, rs)| {
            let finals: Vec<f64> = rs
                .iter()
                .map(|r| *moving_average(&r.reward, window).last().unwrap())
                .collect();
            let iters: Vec<f64> = rs.iter().map(|r| r.iterations_to_converge() as f64).collect();
            let slices = rs.iter().map(|r| r.qos.len()).min().unwrap_or(0);
            let final_qos = (0..slices)
                .map(|l| rs.iter().map(|r| r.final_qos(window)[l]).sum::<f64>() / rs.len() as f64)
                .collect();
            let band = |xs: &[f64]| {
                let (lo, hi) = min_max(xs);
                [median(xs), lo, hi]
            };
            SummaryRow {
                variant,
                runs: rs.len(),
                final_reward: band(&finals),
                iterations: band(&iters),
                final_qos,
                improvement_pct: Vec::new(),
            }
        })
        .collect();
    let base = rows
        .iter()
        .find(|r| r.variant == Variant::MarlNoPrompt)
        .map(|r| r.final_qos.clone());
    for r in &mut rows {
        r.improvement_pct = r
            .final_qos
            .iter()
            .enumerate()
            .map(|(l, &q)| {
                let b = *base.as_ref()?.get(l)?;
                (b != 0.0).then(|| (q - b) / b * 100.0)
            })
            .collect();
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Export `dirs` into `out`. Unreadable or unfinished runs are skipped with a
/// warning; an error if none is left.
pub fn export(dirs: &[PathBuf], out: &Path, window: usize) -> Result<ExportReport, CliError> {
    if window == 0 {
        return Err(CliError::Config("export window must be at least 1".into()));
    }
    let mut report = ExportReport::default();
    let mut runs: BTreeMap<Variant, Vec<RunData>> = BTreeMap::new();
    for d in dirs {
        match RunData::load(d) {
            Ok(r) => {
                report.exported.push(d.clone());
                runs.entry(r.variant).or_default().push(r);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", d.display());
                report.skipped.push((d.clone(), e));
            }
        }
    }
    if runs.is_empty() {
        return Err(CliError::Export(format!(
            "none of the {} run directories is a finished run",
            dirs.len()
        )));
    }
    for rs in runs.values_mut() {
        rs.sort_by_key(|r| r.seed);
    }
    fs::create_dir_all(out)?;

    let mut series = csv::Writer::from_path(out.join(REWARD_SERIES_FILE))?;
    series.write_record(["variant", "seed", "iteration", "reward", "smoothed"])?;
    let mut bands = csv::Writer::from_path(out.join(REWARD_BANDS_FILE))?;
    bands.write_record(["variant", "iteration", "median", "min", "max"])?;
    let mut cdf = csv::Writer::from_path(out.join(CDF_FILE))?;
    cdf.write_record(["variant", "slice", "rate_bps", "cdf"])?;
    for (v, rs) in &runs {
        let smoothed: Vec<Vec<f64>> = rs.iter().map(|r| moving_average(&r.reward, window)).collect();
        for (r, s) in rs.iter().zip(&smoothed) {
            for (i, (raw, sm)) in r.reward.iter().zip(s).enumerate() {
                series.write_record([v.as_str().to_string(), r.seed.to_string(), i.to_string(), raw.to_string(), sm.to_string()])?;
            }
        }
        let len = smoothed.iter().map(Vec::len).min().unwrap_or(0);
        for i in 0..len {
            let xs: Vec<f64> = smoothed.iter().map(|s| s[i]).collect();
            let (lo, hi) = min_max(&xs);
            bands.write_record([v.as_str().to_string(), i.to_string(), median(&xs).to_string(), lo.to_string(), hi.to_string()])?;
        }
        let mut pooled: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in rs {
            for (s, xs) in r.final_rates(window) {
                pooled.entry(s).or_default().extend(xs);
            }
        }
        for (s, xs) in pooled {
            for (x, p) in empirical_cdf(&xs) {
                cdf.write_record([v.as_str().to_string(), (s + 1).to_string(), x.to_string(), p.to_string()])?;
            }
        }
    }
    series.flush()?;
    bands.flush()?;
    cdf.flush()?;

    report.summary = summarize(&runs, window);
    let slices = report.summary.iter().map(|r| r.final_qos.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(out.join(SUMMARY_FILE))?;
    let mut header: Vec<String> = [
        "variant",
        "runs",
        "final_reward_median",
        "final_reward_min",
        "final_reward_max",
        "iterations_median",
        "iterations_min",
        "iterations_max",
    ]
    .map(String::from)
    .to_vec();
    for l in 1..=slices {
        header.push(format!("q_slice{l}"));
        header.push(format!("q_slice{l}_change_pct"));
    }
    w.write_record(&header)?;
    for r in &report.summary {
        let mut row = vec![r.variant.as_str().to_string(), r.runs.to_string()];
        row.extend(r.final_reward.iter().chain(&r.iterations).map(f64::to_string));
        for l in 0..slices {
            row.push(opt(r.final_qos.get(l).copied()));
            row.push(opt(r.improvement_pct.get(l).copied().flatten()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let meta = format!(
        "smoothing_window = {window}\n\
         reward = mean step reward over actors per iteration (metrics.csv reward_mean)\n\
         smoothed = trailing moving average; the first window-1 points average what is available\n\
         final window = last {window} iterations of each run\n\
         throughput_cdf = UE rates from the final window, pooled over seeds, per slice\n\
         q_slice<l> = final-window mean of metrics.csv q_slice<l>, averaged over seeds\n\
         q_slice<l>_change_pct = (variant - marl-noprompt) / marl-noprompt * 100; for latency slices lower is better\n\
         iterations = first iteration at which the plateau test on eval_mean (reward_mean when evaluation is off) holds, else iterations run\n\
         runs = {}\n\
         skipped = {}\n",
        report.exported.len(),
        report.skipped.len()
    );
    fs::write(out.join(META_FILE), meta)?;
    Ok(report)
}
