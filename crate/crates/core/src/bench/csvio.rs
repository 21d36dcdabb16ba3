use std::path::Path;

use super::{CurvePoint, DepthPoint, TimingStats};
use crate::error::{Error, Result};

/// `theta,method,accuracy,error_m,mean_macs,mean_ns,exit1_rate,...`
pub fn write_sweep_csv(points: &[CurvePoint], n_exits: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = [
        "theta",
        "method",
        "accuracy",
        "error_m",
        "mean_macs",
        "mean_ns",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=n_exits).map(|i| format!("exit{i}_rate")));
    w.write_record(&header)?;
    for p in points {
        if p.exit_rates.len() != n_exits {
            return Err(Error::InvalidArgument(format!(
                "point at {} has {} exit rates",
                p.theta,
                p.exit_rates.len()
            )));
        }
        let mut row = vec![
            p.theta.to_string(),
            p.method.to_string(),
            p.accuracy.to_string(),
            p.error_m.map(|e| e.to_string()).unwrap_or_default(),
            p.mean_macs.to_string(),
            p.mean_ns.to_string(),
        ];
        row.extend(p.exit_rates.iter().map(|r| r.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let n_exits = r.headers()?.len().saturating_sub(6);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |col: usize| Error::Parse {
            path: path.to_path_buf(),
            row: line,
            msg: format!("bad value in column {col}"),
        };
        let num = |col: usize| -> Result<f64> {
            rec.get(col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(col))
        };
        out.push(CurvePoint {
            theta: num(0)?,
            method: rec.get(1).ok_or_else(|| bad(1))?.parse()?,
            accuracy: num(2)?,
            error_m: match rec.get(3) {
                Some("") | None => None,
                Some(_) => Some(num(3)?),
            },
            mean_macs: num(4)?,
            mean_ns: num(5)?,
            exit_rates: (0..n_exits).map(|i| num(6 + i)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// `depth,accuracy,macs,mean_ns`
pub fn write_depth_csv(points: &[DepthPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["depth", "accuracy", "macs", "mean_ns"])?;
    for p in points {
        w.write_record([
            p.depth.to_string(),
            p.accuracy.to_string(),
            p.macs.to_string(),
            p.mean_ns.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `policy,mean_ns,ci95_ns,n`
pub fn write_timing_csv(stats: &[TimingStats], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["policy", "mean_ns", "ci95_ns", "n"])?;
    for s in stats {
        w.write_record([
            s.policy.clone(),
            s.mean_ns.to_string(),
            s.ci95_ns.to_string(),
            s.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
