//! Files written by the subcommands. Floats in CSV use `{:.16e}` (17
//! significant digits); the wall time is the only non-deterministic value and
//! sits under `metadata` in JSON.

use std::fs;
use std::path::PathBuf;

use cavshape_core::optimizer::RunResult;
use cavshape_core::scenario::{DerivativeReport, FieldReport, OptimizeOutcome, ScenarioConfig, SolveReport, SweepTable};
use cavshape_core::Error;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// SHA-256 of the effective config (after command-line overrides).
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub struct Outputs {
    dir: PathBuf,
    hash: Option<String>,
}

impl Outputs {
    pub fn new(dir: PathBuf, hash: Option<String>) -> Self {
        Self { dir, hash }
    }

    fn path(&self, name: &str) -> Result<PathBuf, Error> {
        fs::create_dir_all(&self.dir)?;
        Ok(self.dir.join(name))
    }

    fn header(&self) -> Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.hash,
        })
    }

    fn write_json(&self, name: &str, mut body: Value) -> Result<PathBuf, Error> {
        let mut doc = self.header();
        doc.as_object_mut()
            .expect("header is an object")
            .append(body.as_object_mut().expect("body is an object"));
        let path = self.path(name)?;
        fs::write(&path, serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
        Ok(path)
    }

    fn csv_writer(&self, name: &str) -> Result<(csv::Writer<fs::File>, PathBuf), Error> {
        let path = self.path(name)?;
        Ok((csv::Writer::from_path(&path).map_err(csv_err)?, path))
    }

    /// Write `error.json`; nothing else is produced for a failed run.
    pub fn fail(&self, e: &Error, code: u8, partial: Option<&RunResult>) -> u8 {
        eprintln!("error: {e}");
        let pointer = match e {
            Error::Config { pointer, .. } => Some(pointer.clone()),
            _ => None,
        };
        let body = json!({
            "exit_code": code,
            "kind": if e.is_config() { "config" } else { "numerical" },
            "pointer": pointer,
            "message": e.to_string(),
            "partial": partial.map(|r| json!({
                "p": r.p_opt,
                "g": r.g_opt,
                "iterations": r.iterations,
                "function_calls": r.function_calls,
                "warnings": r.warnings,
            })),
        });
        if let Err(w) = self.write_json("error.json", body) {
            eprintln!("could not write the error report: {w}");
        }
        code
    }

    pub fn sweep_csv(&self, t: &SweepTable) -> Result<PathBuf, Error> {
        let (mut w, path) = self.csv_writer("sweep.csv")?;
        let n_freq = t.rows.first().map_or(0, |r| r.freqs.len());
        let mut header = vec!["p".to_string(), "p_physical".to_string()];
        header.extend((1..=n_freq).map(|k| format!("f_{k}")));
        header.extend(["f_tracked".to_string(), "k_tracked".to_string()]);
        w.write_record(&header).map_err(csv_err)?;
        for r in &t.rows {
            let mut rec = vec![num(r.p), num(r.p_physical)];
            rec.extend(r.freqs.iter().map(|&f| num(f)));
            rec.push(num(r.f_tracked));
            rec.push(r.k_tracked.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(path)
    }

    /// `result.json` and `iterations.csv` (row 0 is the start point).
    pub fn optimize(&self, cfg: &ScenarioConfig, o: &OptimizeOutcome) -> Result<PathBuf, Error> {
        let n = o.start.p.len();
        let (mut w, _) = self.csv_writer("iterations.csv")?;
        let mut header = vec!["iter".to_string()];
        header.extend((1..=n).map(|i| format!("p_{i}")));
        header.extend(["g", "f", "k", "phi", "warning"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        let mut start = vec!["0".to_string()];
        start.extend(o.start.p.iter().map(|&x| num(x)));
        start.extend([num(o.start.g), num(o.start.f), o.start.k.to_string(), opt_num(o.start.phi), String::new()]);
        w.write_record(&start).map_err(csv_err)?;
        for r in &o.run.log {
            let mut rec = vec![r.iter.to_string()];
            rec.extend(r.p.iter().map(|&x| num(x)));
            rec.extend([
                num(r.g),
                opt_num(r.f),
                r.k.map(|k| k.to_string()).unwrap_or_default(),
                opt_num(r.phi),
                r.warning.clone().unwrap_or_default(),
            ]);
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;

        let body = json!({
            "scenario": cfg.name,
            "gradient": cfg.optimizer.gradient,
            "tracking": cfg.tracking,
            "p0": cfg.start.p,
            "p_opt": o.run.p_opt,
            "p_opt_physical": o.end.p_physical,
            "g_opt": o.run.g_opt,
            "f_opt": o.end.f,
            "f_ref": o.f_ref,
            "relative_error": o.relative_error,
            "iterations": o.run.iterations,
            "function_calls": o.run.function_calls,
            "gradient_calls": o.run.gradient_calls,
            "stop": o.run.stop,
            "crossing_warnings": o.run.warnings,
            "start": o.start,
            "final": o.end,
            "metadata": { "wall_time_s": o.run.wall_time_s, "version": env!("CARGO_PKG_VERSION") },
        });
        self.write_json("result.json", body)
    }

    pub fn derivatives(&self, r: &DerivativeReport) -> Result<PathBuf, Error> {
        self.write_json("derivatives.json", json!({ "report": r }))
    }

    /// `axis.csv` plus the peak summary in `field.json`.
    pub fn field(&self, r: &FieldReport) -> Result<PathBuf, Error> {
        let (mut w, path) = self.csv_writer("axis.csv")?;
        w.write_record(["xi", "x", "e_axis", "cell", "is_peak"]).map_err(csv_err)?;
        let peaks = r.flatness.as_ref().map(|f| f.peak_samples.clone()).unwrap_or_default();
        for (i, s) in r.samples.iter().enumerate() {
            w.write_record([
                num(s.xi),
                num(s.x),
                num(s.value),
                r.cell_of_sample[i].map(|c| (c + 1).to_string()).unwrap_or_default(),
                u8::from(peaks.contains(&i)).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        self.write_json(
            "field.json",
            json!({
                "p": r.p,
                "k": r.k,
                "f": r.f,
                "cells": r.cells,
                "flatness": r.flatness,
            }),
        )?;
        Ok(path)
    }

    pub fn solve(&self, r: &SolveReport) -> Result<PathBuf, Error> {
        self.write_json("solve.json", json!({ "solve": r }))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
