//! One-axis hyperparameter sweeps.

use anyhow::{bail, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::runner::{self, MeanStderr};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Kappa0,
    Gamma,
    Alpha,
    Period,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<SweepAxis> {
        match s {
            "kappa0" => Ok(SweepAxis::Kappa0),
            "gamma" => Ok(SweepAxis::Gamma),
            "alpha" => Ok(SweepAxis::Alpha),
            "period" => Ok(SweepAxis::Period),
            other => bail!("unknown sweep axis '{other}' (expected kappa0|gamma|alpha|period)"),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::Kappa0 => "kappa0",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Period => "period",
        }
    }

    fn apply(self, config: &mut ExperimentConfig, value: f64) {
        match self {
            SweepAxis::Kappa0 => config.shift.kappa0 = value,
            SweepAxis::Gamma => {
                config.shift.gamma = value;
                // the initial intensity may not exceed the total ratio
                config.shift.kappa0 = config.shift.kappa0.min(value);
            }
            SweepAxis::Alpha => config.shift.alpha = value,
            SweepAxis::Period => config.shift.period = value.round().max(1.0) as usize,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub a_avg_biased: MeanStderr,
    pub a_avg_unbiased: MeanStderr,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub axis: String,
    pub points: Vec<SweepPoint>,
}

/// Runs the base config once per axis value; each point aggregates the
/// configured seeds. Results land under `<out_dir>/<axis>_<value>/`.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepReport> {
    if values.is_empty() {
        bail!("no sweep values given");
    }
    let mut points = Vec::new();
    for &value in values {
        let mut config = base.clone();
        axis.apply(&mut config, value);
        config.out_dir = base.out_dir.join(format!("{}_{value}", axis.label()));
        let artifacts = runner::run(&config)?;
        points.push(SweepPoint {
            value,
            a_avg_biased: artifacts.aggregate.a_avg_biased,
            a_avg_unbiased: artifacts.aggregate.a_avg_unbiased,
        });
    }
    let report = SweepReport { axis: axis.label().to_string(), points };
    std::fs::create_dir_all(&base.out_dir)?;
    std::fs::write(base.out_dir.join("sweep.csv"), sweep_csv(&report))?;
    std::fs::write(
        base.out_dir.join("sweep.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}

fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from("value,mean_a_avg,stderr\n");
    for p in &report.points {
        out.push_str(&format!("{},{},{}\n", p.value, p.a_avg_biased.mean, p.a_avg_biased.stderr));
    }
    out
}
