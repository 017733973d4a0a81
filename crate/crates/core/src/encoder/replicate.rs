use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, Prediction, RunMetrics};

/// Per-seed artifacts together with the aggregated report.
#[derive(Debug, Clone)]
pub struct Replicates<T> {
    pub report: MetricsReport,
    /// Successful runs, in seed order.
    pub outputs: Vec<(u64, T)>,
}

/// Runs `run` once per seed and reports per-metric medians over the runs.
///
/// A run failing with [`Error::Divergence`] is logged, recorded in the
/// report and left out of the medians; any other error aborts.
pub fn run_replicates<T, F>(seeds: &[u64], mut run: F) -> Result<Replicates<T>>
where
    F: FnMut(u64) -> Result<(T, Vec<Prediction>)>,
{
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut per_run = Vec::new();
    let mut outputs = Vec::new();
    let mut diverged = Vec::new();
    for &seed in seeds {
        match run(seed) {
            Ok((artifact, predictions)) => {
                per_run.push(RunMetrics::evaluate(seed, &predictions)?);
                outputs.push((seed, artifact));
            }
            Err(Error::Divergence(msg)) => {
                log::warn!("run with seed {seed} diverged ({msg}); excluded from medians");
                diverged.push(seed);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Replicates {
        report: MetricsReport::from_runs(per_run, diverged)?,
        outputs,
    })
}
