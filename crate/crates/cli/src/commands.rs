//! The four subcommands: train, eval, compare, plot.

use crate::plot::{render_efficiency_plot, Curve};
use crate::summary::{median, summarize_rows, write_summary_csv, RunSummary};
use rayon::prelude::*;
use remix_core::checkpoint::{load_checkpoint, run_training};
use remix_core::config::{parse_config, RunConfig};
use remix_core::error::{Error, Result};
use remix_core::metrics::{evaluate_pass1, read_metrics, MetricsRow};
use std::path::{Path, PathBuf};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create output dir {}: {e}", dir.display())))
}

fn config_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "config".into())
}

/// Train one run and write its metrics CSV and checkpoint.
pub fn train(config_path: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<()> {
    let cfg = parse_config(config_path)?;
    let seed = seed_override.unwrap_or(cfg.seeds[0]);
    ensure_dir(out_dir)?;
    let stem = config_stem(config_path);
    let metrics_path = out_dir.join(format!("metrics_{stem}_seed{seed}.csv"));
    let checkpoint_path = out_dir.join(format!("checkpoint_{stem}_seed{seed}.json"));
    log::info!(
        "training {} (algo {}, seed {seed}, {} steps)",
        stem,
        cfg.algo,
        cfg.total_steps
    );
    let out = run_training(&cfg, seed, Some(&metrics_path), Some(&checkpoint_path))?;
    let rollouts = out.rows.last().map(|r| r.fresh_rollouts_cum).unwrap_or(0);
    println!(
        "run complete: {} steps, final pass@1 {:.4}, {} fresh rollouts",
        out.rows.len(),
        out.final_pass1,
        rollouts
    );
    println!("metrics: {}", metrics_path.display());
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}

/// Evaluate a checkpoint's live policy with greedy decoding on the held-out
/// problem stream. The task comes from the checkpoint unless a config file
/// overrides it.
pub fn eval(checkpoint_path: &Path, config_path: Option<&Path>, k: usize) -> Result<()> {
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let task = match config_path {
        Some(p) => parse_config(p)?.task,
        None => checkpoint.config.task,
    };
    let pass1 = evaluate_pass1(&checkpoint.live, &task, k)?;
    println!(
        "pass@1 {:.4} over {k} problems (checkpoint step {}, task {})",
        pass1, checkpoint.step, task.kind
    );
    Ok(())
}

/// One comparison cell: a parsed config run at one seed.
struct Cell {
    stem: String,
    cfg: RunConfig,
    seed: u64,
}

/// Run every config over the seed list, write per-run CSVs, a summary CSV
/// with per-seed and median statistics, and the efficiency plot.
pub fn compare(
    config_paths: &[PathBuf],
    out_dir: &Path,
    seeds_override: Option<Vec<u64>>,
    thresholds: &[f64],
) -> Result<()> {
    if config_paths.len() < 2 {
        return Err(Error::Config(
            "compare needs at least two --config files".into(),
        ));
    }
    let mut parsed = Vec::new();
    for path in config_paths {
        parsed.push((config_stem(path), parse_config(path)?));
    }
    let task = parsed[0].1.task;
    for (stem, cfg) in &parsed {
        if cfg.task != task {
            return Err(Error::Config(format!(
                "config {stem} uses a different task; comparisons must share one task"
            )));
        }
    }
    let seeds = seeds_override.unwrap_or_else(|| parsed[0].1.seeds.clone());
    ensure_dir(out_dir)?;

    let cells: Vec<Cell> = parsed
        .iter()
        .flat_map(|(stem, cfg)| {
            seeds.iter().map(move |&seed| Cell {
                stem: stem.clone(),
                cfg: cfg.clone(),
                seed,
            })
        })
        .collect();
    let results: Vec<Result<(String, u64, Vec<MetricsRow>)>> = cells
        .par_iter()
        .map(|cell| {
            let metrics_path = out_dir.join(format!("metrics_{}_seed{}.csv", cell.stem, cell.seed));
            let out = run_training(&cell.cfg, cell.seed, Some(&metrics_path), None)?;
            Ok((cell.stem.clone(), cell.seed, out.rows))
        })
        .collect();

    let mut summaries: Vec<RunSummary> = Vec::new();
    let mut by_config: Vec<(String, Vec<Vec<MetricsRow>>)> = Vec::new();
    for result in results {
        let (stem, seed, rows) = result?;
        summaries.push(summarize_rows(&stem, seed, &rows, thresholds));
        match by_config.iter_mut().find(|(s, _)| s == &stem) {
            Some((_, runs)) => runs.push(rows),
            None => by_config.push((stem, vec![rows])),
        }
    }

    let summary_path = out_dir.join("summary.csv");
    write_summary_csv(&summary_path, thresholds, &summaries)?;

    // median pass@1 at matched step, against median cumulative rollouts
    let curves: Vec<Curve> = by_config
        .iter()
        .map(|(stem, runs)| {
            let steps = runs.iter().map(|r| r.len()).min().unwrap_or(0);
            let points = (0..steps)
                .map(|i| {
                    let xs: Vec<f64> = runs
                        .iter()
                        .map(|r| r[i].fresh_rollouts_cum as f64)
                        .collect();
                    let ys: Vec<f64> = runs.iter().map(|r| r[i].pass1).collect();
                    (median(&xs), median(&ys))
                })
                .filter(|(_, y)| y.is_finite())
                .collect();
            Curve {
                label: stem.clone(),
                points,
            }
        })
        .collect();
    let plot_path = out_dir.join("compare.svg");
    render_efficiency_plot(
        &plot_path,
        "pass@1 vs fresh rollouts (median over seeds)",
        &curves,
    )?;

    print_summary_table(&summaries, thresholds);
    println!("summary: {}", summary_path.display());
    println!("plot: {}", plot_path.display());
    Ok(())
}

fn print_summary_table(summaries: &[RunSummary], thresholds: &[f64]) {
    let mut configs: Vec<String> = Vec::new();
    for s in summaries {
        if !configs.contains(&s.config) {
            configs.push(s.config.clone());
        }
    }
    print!("{:<24} {:>12}", "config", "final pass@1");
    for thr in thresholds {
        print!(" {:>18}", format!("rollouts@{thr}"));
    }
    println!();
    for config in &configs {
        let of: Vec<&RunSummary> = summaries.iter().filter(|s| &s.config == config).collect();
        let fin = median(&of.iter().map(|s| s.final_pass1).collect::<Vec<f64>>());
        print!("{config:<24} {fin:>12.4}");
        for (i, _) in thresholds.iter().enumerate() {
            let v = median(
                &of.iter()
                    .map(|s| s.rollouts_to_threshold[i])
                    .collect::<Vec<f64>>(),
            );
            let cell = if v.is_infinite() {
                "inf".to_string()
            } else {
                format!("{v:.0}")
            };
            print!(" {cell:>18}");
        }
        println!();
    }
}

/// Re-plot curves from existing metrics CSVs.
pub fn plot(csv_paths: &[PathBuf], out_dir: &Path) -> Result<()> {
    if csv_paths.is_empty() {
        return Err(Error::Config("plot needs at least one --csv file".into()));
    }
    ensure_dir(out_dir)?;
    let mut curves = Vec::new();
    for path in csv_paths {
        let rows = read_metrics(path)?;
        curves.push(Curve::from_rows(&config_stem(path), &rows));
    }
    let out = out_dir.join("curves.svg");
    render_efficiency_plot(&out, "pass@1 vs fresh rollouts", &curves)?;
    println!("plot: {}", out.display());
    Ok(())
}
