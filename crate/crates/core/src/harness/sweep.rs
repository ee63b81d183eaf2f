//! Cross product of controllers, distances and seeds, with aggregation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{ControllerKind, ScenarioConfig};
use super::run::{run_scenario, RunSummary};
use super::HarnessError;

/// Free-hover averages used as the power reference of one controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeHover {
    pub controller: ControllerKind,
    pub p_ave: f64,
    pub i_ave: f64,
}

/// Aggregate over the seeds of one controller and distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub controller: ControllerKind,
    pub distance_m: f64,
    pub dz_over_r: f64,
    pub runs: usize,
    pub failed: usize,
    /// Pooled over the hold samples of all successful runs [m].
    pub error_mean_m: f64,
    pub error_std_m: f64,
    pub z_error_mean_m: f64,
    pub stuck_fraction: f64,
    /// Majority vote of the runs.
    pub stuck: bool,
    pub p_ave_w: f64,
    pub i_ave_a: f64,
    pub relative_power: Option<f64>,
    pub relative_current: Option<f64>,
    pub estimator_mean_ms: f64,
    pub controller_mean_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub controller: ControllerKind,
    pub distance_m: f64,
    pub seed: u64,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub free_hover: Vec<FreeHover>,
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
}

impl SweepResult {
    pub fn cell(&self, controller: ControllerKind, distance: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.controller == controller && c.distance_m == distance)
    }
}

/// Column names of the aggregate table, with units.
#[rustfmt::skip]
pub const SWEEP_COLUMNS: &[&str] = &[
    "controller", "distance_m", "dz_over_r", "runs", "failed",
    "error_mean_m", "error_std_m", "z_error_mean_m", "stuck_fraction", "stuck",
    "p_ave_w", "i_ave_a", "relative_power", "relative_current",
    "estimator_mean_ms", "controller_mean_ms",
];

/// Column names of the per-run table, with units.
#[rustfmt::skip]
pub const RUN_COLUMNS: &[&str] = &[
    "controller", "distance_m", "seed", "status",
    "error_mean_m", "error_std_m", "z_error_mean_m", "contact_fraction", "stuck",
    "p_ave_w", "i_ave_a", "relative_power", "relative_current",
    "f_hat_z_min_n", "f_hat_z_max_n", "f_z_min_n", "f_z_max_n", "degraded_ticks",
    "estimator_mean_ms", "controller_mean_ms",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

struct Job {
    cfg: ScenarioConfig,
    seed: u64,
    dir: Option<PathBuf>,
}

/// Runs jobs on up to `available_parallelism` threads; results keep job order.
fn run_all(jobs: &[Job]) -> Vec<Result<RunSummary, HarnessError>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len())
        .max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary, HarnessError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let res = run_scenario(&job.cfg, job.seed).and_then(|out| {
                    if let Some(dir) = &job.dir {
                        out.write(dir)?;
                    }
                    Ok(out.summary)
                });
                results.lock().expect("no worker panics while holding the lock")[i] = Some(res);
            });
        }
    });
    results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn run_dir(out: Option<&Path>, cfg: &ScenarioConfig, seed: u64) -> Option<PathBuf> {
    let tag = if cfg.free_flight {
        "free".to_string()
    } else {
        format!("d{}", cfg.distance)
    };
    out.map(|o| o.join("runs").join(format!("{}_{tag}_s{seed}", cfg.controller)))
}

fn aggregate(cfg: &ScenarioConfig, controller: ControllerKind, distance: f64, runs: &[&RunRecord]) -> CellSummary {
    let ok: Vec<&RunSummary> = runs.iter().filter_map(|r| r.summary.as_ref()).collect();
    let n_ok = ok.len().max(1) as f64;
    let samples: usize = ok.iter().map(|s| s.hold.samples).sum();
    let ns = samples.max(1) as f64;
    let weighted = |f: &dyn Fn(&RunSummary) -> f64| ok.iter().map(|s| s.hold.samples as f64 * f(s)).sum::<f64>() / ns;
    let error_mean = weighted(&|s| s.hold.error_mean);
    let second = weighted(&|s| s.hold.error_std.powi(2) + s.hold.error_mean.powi(2));
    let mean = |f: &dyn Fn(&RunSummary) -> f64| ok.iter().map(|s| f(s)).sum::<f64>() / n_ok;
    let mean_opt = |f: &dyn Fn(&RunSummary) -> Option<f64>| {
        let v: Option<Vec<f64>> = ok.iter().map(|s| f(s)).collect();
        v.filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let stuck_fraction = mean(&|s| f64::from(u8::from(s.stuck)));
    CellSummary {
        controller,
        distance_m: distance,
        dz_over_r: cfg.dz_over_r(distance),
        runs: runs.len(),
        failed: runs.len() - ok.len(),
        error_mean_m: error_mean,
        error_std_m: (second - error_mean * error_mean).max(0.0).sqrt(),
        z_error_mean_m: weighted(&|s| s.hold.z_error_mean),
        stuck_fraction,
        stuck: stuck_fraction > 0.5,
        p_ave_w: mean(&|s| s.hold.p_ave),
        i_ave_a: mean(&|s| s.hold.i_ave),
        relative_power: mean_opt(&|s| s.relative_power),
        relative_current: mean_opt(&|s| s.relative_current),
        estimator_mean_ms: mean(&|s| s.timing_ms.estimator.mean),
        controller_mean_ms: mean(&|s| s.timing_ms.controller.mean),
    }
}

/// Runs `cfg.sweep.controllers × cfg.sweep.distances × cfg.seeds`, plus one
/// free-hover reference run per controller (first seed). Failed runs are
/// recorded and excluded from the aggregates. With `out`, per-run traces and
/// the tables `runs.csv`, `sweep.csv` and `sweep.json` are written there.
pub fn sweep(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<SweepResult, HarnessError> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &controller in &cfg.sweep.controllers {
        let c = ScenarioConfig {
            controller,
            free_flight: true,
            ..cfg.clone()
        };
        jobs.push(Job {
            dir: run_dir(out, &c, cfg.seeds[0]),
            seed: cfg.seeds[0],
            cfg: c,
        });
    }
    let n_free = jobs.len();
    for &controller in &cfg.sweep.controllers {
        for &distance in &cfg.sweep.distances {
            for &seed in &cfg.seeds {
                let c = ScenarioConfig {
                    controller,
                    distance,
                    free_flight: false,
                    ..cfg.clone()
                };
                jobs.push(Job {
                    dir: run_dir(out, &c, seed),
                    seed,
                    cfg: c,
                });
            }
        }
    }
    let results = run_all(&jobs);

    let mut free_hover = Vec::new();
    for (job, res) in jobs[..n_free].iter().zip(&results[..n_free]) {
        if let Ok(s) = res {
            free_hover.push(FreeHover {
                controller: job.cfg.controller,
                p_ave: s.hold.p_ave,
                i_ave: s.hold.i_ave,
            });
        }
    }
    let runs: Vec<RunRecord> = jobs[n_free..]
        .iter()
        .zip(results.into_iter().skip(n_free))
        .map(|(job, res)| {
            let (summary, error) = match res {
                Ok(mut s) => {
                    if let Some(f) = free_hover.iter().find(|f| f.controller == job.cfg.controller) {
                        s.set_free_hover(f.p_ave, f.i_ave);
                    }
                    (Some(s), None)
                }
                Err(e) => (None, Some(e.to_string())),
            };
            RunRecord {
                controller: job.cfg.controller,
                distance_m: job.cfg.distance,
                seed: job.seed,
                summary,
                error,
            }
        })
        .collect();

    let mut cells = Vec::new();
    for &controller in &cfg.sweep.controllers {
        for &distance in &cfg.sweep.distances {
            let group: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.controller == controller && r.distance_m == distance)
                .collect();
            cells.push(aggregate(cfg, controller, distance, &group));
        }
    }
    let result = SweepResult {
        free_hover,
        runs,
        cells,
    };
    if let Some(dir) = out {
        write_tables(&result, dir)?;
    }
    Ok(result)
}

pub fn write_tables(result: &SweepResult, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("sweep.csv"))?);
    writeln!(f, "{}", SWEEP_COLUMNS.join(","))?;
    for c in &result.cells {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.controller,
            c.distance_m,
            c.dz_over_r,
            c.runs,
            c.failed,
            c.error_mean_m,
            c.error_std_m,
            c.z_error_mean_m,
            c.stuck_fraction,
            u8::from(c.stuck),
            c.p_ave_w,
            c.i_ave_a,
            opt(c.relative_power),
            opt(c.relative_current),
            c.estimator_mean_ms,
            c.controller_mean_ms,
        )?;
    }
    f.flush()?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("runs.csv"))?);
    writeln!(f, "{}", RUN_COLUMNS.join(","))?;
    for r in &result.runs {
        match &r.summary {
            Some(s) => writeln!(
                f,
                "{},{},{},ok,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.controller,
                r.distance_m,
                r.seed,
                s.hold.error_mean,
                s.hold.error_std,
                s.hold.z_error_mean,
                s.hold.contact_fraction,
                u8::from(s.stuck),
                s.hold.p_ave,
                s.hold.i_ave,
                opt(s.relative_power),
                opt(s.relative_current),
                s.f_hat_z_min,
                s.f_hat_z_max,
                s.f_z_min,
                s.f_z_max,
                s.degraded_ticks,
                s.timing_ms.estimator.mean,
                s.timing_ms.controller.mean,
            )?,
            None => writeln!(
                f,
                "{},{},{},failed{}",
                r.controller,
                r.distance_m,
                r.seed,
                ",".repeat(RUN_COLUMNS.len() - 4)
            )?,
        }
    }
    f.flush()?;
    std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(result)?)?;
    Ok(())
}
