use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::cifar::load_cifar10;
use super::config::{DatasetConfig, ExperimentConfig, ImageSelection};
use super::imageio::save_image_grid_with_columns;
use super::synthetic::make_synthetic;
use crate::attack::{run_attack, AttackConfig};
use crate::error::{Error, Result};
use crate::fedsim::compute_update;
use crate::netzoo::{build_model, train_steps, Dataset, Sample};

/// Column order of `report.csv`. List-valued columns are `;`-separated.
pub const CSV_HEADER: &str = "experiment,seed,group,images,labels,psnr,mean_psnr,final_objective,runtime_secs";

/// Result of attacking one image group under one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub seed: u64,
    pub group: usize,
    /// Dataset indices of the attacked images.
    pub images: Vec<usize>,
    pub labels: Vec<usize>,
    /// Label-matched PSNR per attacked image.
    pub psnr: Vec<f64>,
    pub mean_psnr: f64,
    pub final_objective: f64,
    pub runtime_secs: f64,
}

impl ReportRow {
    pub fn best_psnr(&self) -> f64 {
        self.psnr.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn csv_line(&self) -> String {
        let join = |v: Vec<String>| v.join(";");
        format!(
            "{},{},{},{},{},{},{:.6},{:.9e},{:.3}",
            self.experiment,
            self.seed,
            self.group,
            join(self.images.iter().map(|i| i.to_string()).collect()),
            join(self.labels.iter().map(|i| i.to_string()).collect()),
            join(self.psnr.iter().map(|p| format!("{p:.6}")).collect()),
            self.mean_psnr,
            self.final_objective,
            self.runtime_secs
        )
    }
}

/// Mean and sample standard deviation of the per-row mean PSNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(rows: &[ReportRow]) -> Aggregate {
    let count = rows.len();
    if count == 0 {
        return Aggregate { count, mean: f64::NAN, std: f64::NAN };
    }
    let mean = rows.iter().map(|r| r.mean_psnr).sum::<f64>() / count as f64;
    let std = if count > 1 {
        (rows.iter().map(|r| (r.mean_psnr - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    Aggregate { count, mean, std }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<ReportRow>,
    pub aggregate: Aggregate,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentOutcome {
    /// The full CSV report, aggregates last.
    pub fn csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv_line());
            out.push('\n');
        }
        let name = self.rows.first().map_or("experiment", |r| r.experiment.as_str());
        let a = self.aggregate;
        let _ = writeln!(out, "{name},mean,,,,,{:.6},,", a.mean);
        let _ = writeln!(out, "{name},std,,,,,{:.6},,", a.std);
        out
    }
}

pub fn load_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    match cfg {
        DatasetConfig::Cifar10 { .. } => {
            let path = cfg
                .resolved_path()
                .ok_or_else(|| Error::Config(vec!["dataset.path: not set".into()]))?;
            load_cifar10(path)
        }
        DatasetConfig::Synthetic { seed, count, shape, classes, distinct_labels } => {
            make_synthetic(*seed, *count, shape, *classes, *distinct_labels)
        }
    }
}

/// Consecutive groups of `n` dataset indices. With `distinct_labels`, an
/// image whose label already occurs in the group being filled is skipped.
pub fn select_groups(data: &Dataset, sel: &ImageSelection, n: usize) -> Result<Vec<Vec<usize>>> {
    let mut cursor = sel.start;
    let mut groups = Vec::with_capacity(sel.count);
    for _ in 0..sel.count {
        let mut group: Vec<usize> = Vec::with_capacity(n);
        while group.len() < n {
            let sample = data.get(cursor).ok_or_else(|| {
                Error::Config(vec![format!("images: dataset has too few usable images ({} available)", data.len())])
            })?;
            if !(sel.distinct_labels && group.iter().any(|&g| data.samples()[g].label == sample.label)) {
                group.push(cursor);
            }
            cursor += 1;
        }
        groups.push(group);
    }
    Ok(groups)
}

/// Runs every (seed, group) job of `cfg` on up to `jobs` threads. Rows are
/// ordered by seed, then group, independent of completion order. When the
/// configuration names an output directory, `config.json`, `report.csv` and
/// one image grid per job (ground truth above reconstruction) are written.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset)?;
    let image_shape = data.image_shape().ok_or(Error::EmptyDataset)?.to_vec();
    let spec = cfg.model.build_spec(&image_shape, data.num_classes());
    spec.validate().map_err(|e| Error::Config(vec![format!("model: {e}")]))?;
    let groups = select_groups(&data, &cfg.images, cfg.protocol.n)?;
    let image_dir = cfg.output_dir.as_ref().map(|d| d.join("images"));
    if let Some(dir) = &image_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tasks: Vec<(u64, usize)> =
        cfg.seeds.iter().flat_map(|&s| (0..groups.len()).map(move |g| (s, g))).collect();

    let run_one = |seed: u64, group: usize| -> Result<ReportRow> {
        let mut model = build_model(spec.clone(), seed)?;
        if cfg.training.trained && cfg.training.steps > 0 {
            let t = &cfg.training;
            model = train_steps(&model, &data, t.steps, t.lr, t.batch_size, seed)?;
        }
        let samples: Vec<Sample> = groups[group].iter().map(|&i| data.samples()[i].clone()).collect();
        let obs = compute_update(&model, &samples, &cfg.protocol.fed_config(seed), cfg.protocol.raw_gradient)?;
        let attack = AttackConfig { seed: cfg.attack.seed.wrapping_add(seed), ..cfg.attack.clone() };
        let report = run_attack(&obs, &model, &attack, Some(&samples))?;
        let psnr: Vec<f64> = report.psnr.iter().flatten().map(|p| p.unwrap_or(f64::NAN)).collect();
        if let Some(dir) = &image_dir {
            if matches!(image_shape[0], 1 | 3) {
                let mut tiles: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
                for i in 0..samples.len() {
                    tiles.push(report.image(i)?);
                }
                let ext = if image_shape[0] == 1 { "pgm" } else { "ppm" };
                let path = dir.join(format!("{}_seed{seed}_group{group}.{ext}", cfg.name));
                save_image_grid_with_columns(&tiles, samples.len(), path)?;
            }
        }
        Ok(ReportRow {
            experiment: cfg.name.clone(),
            seed,
            group,
            images: groups[group].clone(),
            labels: obs.labels.clone(),
            mean_psnr: psnr.iter().sum::<f64>() / psnr.len() as f64,
            psnr,
            final_objective: report.final_objective(),
            runtime_secs: report.wall_clock_secs,
        })
    };

    let results: Mutex<Vec<Option<Result<ReportRow>>>> = Mutex::new(tasks.iter().map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, tasks.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(seed, group)) = tasks.get(k) else { break };
                let row = run_one(seed, group);
                results.lock().unwrap_or_else(|e| e.into_inner())[k] = Some(row);
            });
        }
    });
    let rows = results
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(Error::InvalidArgument("job did not run".into()))))
        .collect::<Result<Vec<_>>>()?;
    let outcome = ExperimentOutcome { aggregate: aggregate(&rows), rows, output_dir: cfg.output_dir.clone() };
    if let Some(dir) = &cfg.output_dir {
        write_file(&dir.join("config.json"), &cfg.to_json()?)?;
        write_file(&dir.join("report.csv"), &outcome.csv())?;
    }
    Ok(outcome)
}

/// One experiment per protocol in `cfg.sweep` (or the base protocol when the
/// sweep is empty), each in its own output subdirectory `protocol{i}`.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<ExperimentOutcome>> {
    if cfg.sweep.is_empty() {
        return Ok(vec![run_experiment(cfg, jobs)?]);
    }
    cfg.validate()?;
    cfg.sweep
        .iter()
        .enumerate()
        .map(|(i, protocol)| {
            let sub = ExperimentConfig {
                name: format!("{}_protocol{i}", cfg.name),
                protocol: protocol.clone(),
                sweep: Vec::new(),
                output_dir: cfg.output_dir.as_ref().map(|d| d.join(format!("protocol{i}"))),
                ..cfg.clone()
            };
            run_experiment(&sub, jobs)
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, mean_psnr: f64) -> ReportRow {
        ReportRow {
            experiment: "t".into(),
            seed,
            group: 0,
            images: vec![0],
            labels: vec![1],
            psnr: vec![mean_psnr],
            mean_psnr,
            final_objective: 0.5,
            runtime_secs: 1.0,
        }
    }

    #[test]
    fn aggregate_matches_manual_statistics() {
        let rows = [row(0, 10.0), row(1, 14.0), row(2, 15.0)];
        let a = aggregate(&rows);
        assert_eq!(a.count, 3);
        assert!((a.mean - 13.0).abs() < 1e-12);
        assert!((a.std - ((9.0f64 + 1.0 + 4.0) / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distinct_label_groups_skip_repeats() {
        let data = make_synthetic(3, 12, &[1, 2, 2], 3, false).unwrap();
        let sel = ImageSelection { start: 0, count: 2, distinct_labels: true };
        let groups = select_groups(&data, &sel, 3).unwrap();
        for g in &groups {
            let mut labels: Vec<usize> = g.iter().map(|&i| data.samples()[i].label).collect();
            labels.sort();
            labels.dedup();
            assert_eq!(labels.len(), 3);
        }
        assert!(groups[1][0] > groups[0][2]);
    }
}
