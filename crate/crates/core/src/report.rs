//! CSV and log files for runs, sweeps and validation.
//!
//! Missing values (a link nobody crossed, a metric with no samples) are
//! written as empty fields.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use crate::batch::{metric_values, seed_average, Averaged, PointResult, RunOutput, METRICS};
use crate::stats::{CellReport, TravelTimeSample};

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}

pub fn write_link_metrics(path: &Path, run: &RunOutput) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["link_id", "avg_speed_kmh", "avg_wait_s", "flow_vph", "n_crossings"])?;
    for r in &run.report.links {
        w.write_record([
            r.link_id.to_string(),
            num(r.avg_speed_kmh),
            num(r.avg_wait_s),
            r.flow_vph.to_string(),
            r.n_crossings.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vehicle_metrics(path: &Path, run: &RunOutput) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "vehicle",
        "class",
        "distance_m",
        "travel_time_s",
        "waiting_s",
        "avg_speed_kmh",
        "completed",
    ])?;
    for v in &run.report.vehicles {
        let speed = (v.travel_time > 0.0).then(|| v.distance / v.travel_time * 3.6);
        w.write_record([
            v.vehicle.to_string(),
            run.class_names[v.class].clone(),
            v.distance.to_string(),
            v.travel_time.to_string(),
            v.waiting.to_string(),
            num(speed),
            v.completed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per seed, then `mean`, `std_err` and `n` rows.
pub fn write_summary(path: &Path, runs: &[RunOutput]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["row", "seed"];
    header.extend(METRICS);
    w.write_record(&header)?;
    for r in runs {
        let mut row = vec!["seed".to_string(), r.seed.to_string()];
        row.extend(metric_values(r).into_iter().map(num));
        w.write_record(&row)?;
    }
    let avg = seed_average(runs);
    type Cell = fn(&Averaged) -> String;
    let rows: [(&str, Cell); 3] = [
        ("mean", |a| num(a.mean)),
        ("std_err", |a| num(a.std_err)),
        ("n", |a| a.n.to_string()),
    ];
    for (name, f) in rows {
        let mut row = vec![name.to_string(), String::new()];
        row.extend(avg.iter().map(f));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// The four per-run files into `dir`.
pub fn write_run(dir: &Path, run: &RunOutput) -> Result<()> {
    create_dir(dir)?;
    write_link_metrics(&dir.join("link_metrics.csv"), run)?;
    write_vehicle_metrics(&dir.join("vehicle_metrics.csv"), run)?;
    write_summary(&dir.join("summary.csv"), std::slice::from_ref(run))?;
    fs::write(dir.join("events.log"), &run.events).context("writing events.log")?;
    Ok(())
}

/// Sweep-level table: one row per point and metric, in point order then
/// metric name.
pub fn write_comparison(path: &Path, results: &[PointResult]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "strip_width",
        "demand",
        "mix",
        "pedestrian_mode",
        "metric",
        "mean",
        "std_err",
        "n",
        "n_seeds",
        "error",
    ])?;
    for p in results {
        let k = &p.key;
        for (i, metric) in METRICS.iter().enumerate() {
            let a = p.average.map(|a| a[i]);
            w.write_record([
                k.strip_width.to_string(),
                k.demand.code().to_string(),
                k.mix.clone(),
                if k.pedestrians { "on" } else { "off" }.to_string(),
                metric.to_string(),
                num(a.and_then(|a| a.mean)),
                num(a.and_then(|a| a.std_err)),
                a.map(|a| a.n.to_string()).unwrap_or_default(),
                p.runs.len().to_string(),
                p.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `out/comparison.csv`, and per point `out/<slug>/summary.csv` plus the
/// run files under `out/<slug>/seed_<n>/`.
pub fn write_batch(out: &Path, results: &[PointResult]) -> Result<()> {
    create_dir(out)?;
    for p in results {
        let dir = out.join(p.key.slug());
        create_dir(&dir)?;
        if let Some(e) = &p.error {
            fs::write(dir.join("error.txt"), format!("{e}\n"))?;
            continue;
        }
        for r in &p.runs {
            write_run(&dir.join(format!("seed_{}", r.seed)), r)?;
        }
        write_summary(&dir.join("summary.csv"), &p.runs)?;
    }
    write_comparison(&out.join("comparison.csv"), results)
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    route: String,
    direction: String,
    vehicle_type: String,
    regime: String,
    value_min: f64,
}

/// `route,direction,vehicle_type,regime,value_min` with a header line.
pub fn read_travel_times(path: &Path) -> Result<Vec<TravelTimeSample>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<SampleRow>().enumerate() {
        let row = row.with_context(|| format!("{}: record {}", path.display(), i + 1))?;
        out.push(TravelTimeSample {
            route: row.route,
            direction: row.direction,
            vehicle_type: row.vehicle_type,
            regime: row.regime,
            value_min: row.value_min,
        });
    }
    Ok(out)
}

pub fn write_validation(path: &Path, cells: &[CellReport]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "route",
        "direction",
        "vehicle_type",
        "regime",
        "n_observed",
        "n_simulated",
        "p_t",
        "p_ks",
        "ME",
        "MAE",
        "RMSE",
        "MAPE",
        "RMSPE",
    ])?;
    for c in cells {
        let g = c.gof;
        w.write_record([
            c.key.route.clone(),
            c.key.direction.clone(),
            c.key.vehicle_type.clone(),
            c.key.regime.clone(),
            c.n_observed.to_string(),
            c.n_simulated.to_string(),
            num(c.p_t),
            num(c.p_ks),
            num(g.map(|g| g.me)),
            num(g.map(|g| g.mae)),
            num(g.map(|g| g.rmse)),
            num(g.map(|g| g.mape)),
            num(g.map(|g| g.rmspe)),
        ])?;
    }
    w.flush()?;
    Ok(())
}
