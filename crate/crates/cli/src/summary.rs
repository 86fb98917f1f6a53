//! Seed-sweep summary statistics, recomputable from the emitted metrics
//! CSVs alone.

use remix_core::error::Result;
use remix_core::metrics::MetricsRow;

/// One (config, seed) run's summary entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub config: String,
    pub seed: u64,
    pub final_pass1: f64,
    /// Fresh rollouts when pass@1 first reached each threshold; infinity
    /// when never reached.
    pub rollouts_to_threshold: Vec<f64>,
}

/// Extract a run summary from its metrics rows.
pub fn summarize_rows(
    config: &str,
    seed: u64,
    rows: &[MetricsRow],
    thresholds: &[f64],
) -> RunSummary {
    let final_pass1 = rows.last().map(|r| r.pass1).unwrap_or(f64::NAN);
    let rollouts_to_threshold = thresholds
        .iter()
        .map(|&thr| {
            rows.iter()
                .find(|r| r.pass1 >= thr)
                .map(|r| r.fresh_rollouts_cum as f64)
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    RunSummary {
        config: config.to_string(),
        seed,
        final_pass1,
        rollouts_to_threshold,
    }
}

/// Median that tolerates infinities (never-reached thresholds).
pub fn median(values: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        let (a, b) = (sorted[n / 2 - 1], sorted[n / 2]);
        if a.is_infinite() || b.is_infinite() {
            f64::INFINITY
        } else {
            0.5 * (a + b)
        }
    }
}

fn render(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        v.to_string()
    }
}

/// Write the summary CSV: one row per (config, seed) plus one median row
/// per config (`seed` column reads `median`).
pub fn write_summary_csv(
    path: &std::path::Path,
    thresholds: &[f64],
    runs: &[RunSummary],
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![
        "config".to_string(),
        "seed".to_string(),
        "final_pass1".into(),
    ];
    for thr in thresholds {
        header.push(format!("rollouts_to_{thr}"));
    }
    writer.write_record(&header)?;
    let mut configs: Vec<String> = Vec::new();
    for run in runs {
        if !configs.contains(&run.config) {
            configs.push(run.config.clone());
        }
        let mut record = vec![
            run.config.clone(),
            run.seed.to_string(),
            render(run.final_pass1),
        ];
        for v in &run.rollouts_to_threshold {
            record.push(render(*v));
        }
        writer.write_record(&record)?;
    }
    for config in &configs {
        let of_config: Vec<&RunSummary> = runs.iter().filter(|r| &r.config == config).collect();
        let final_median = median(
            &of_config
                .iter()
                .map(|r| r.final_pass1)
                .collect::<Vec<f64>>(),
        );
        let mut record = vec![config.clone(), "median".to_string(), render(final_median)];
        for (i, _) in thresholds.iter().enumerate() {
            let vals: Vec<f64> = of_config
                .iter()
                .map(|r| r.rollouts_to_threshold[i])
                .collect();
            record.push(render(median(&vals)));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
