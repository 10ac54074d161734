//! Run metrics and their CSV / JSON renderings.
//!
//! Wall-clock time is kept on the struct but never serialized, so metric files
//! of two identical runs are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::eval::OccupancyMetrics;
use crate::probe::{ProbeMetrics, SeparabilityMetrics};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    /// Means over the epoch's optimizer steps.
    pub loss: f64,
    pub occupancy_loss: f64,
    pub intensity_loss: f64,
    /// Fraction of prediction rows whose logit sign matches the occupancy target.
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub epochs: Vec<EpochMetrics>,
    pub occupancy: Option<OccupancyMetrics>,
    pub probe: Option<ProbeMetrics>,
    pub separability: Option<SeparabilityMetrics>,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl MetricsReport {
    pub fn new(run: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        Self {
            run: run.into(),
            seed,
            config,
            ..Default::default()
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    /// One `key,value` row per scalar, keys as dotted JSON paths.
    pub fn to_csv(&self) -> String {
        let value = serde_json::to_value(self).expect("metrics serialize");
        let mut rows = Vec::new();
        flatten("", &value, &mut rows);
        let mut out = String::from("key,value\n");
        for (k, v) in rows {
            writeln!(out, "{},{}", csv_field(&k), csv_field(&v)).unwrap();
        }
        out
    }

    /// Per-epoch loss curves, one row per epoch.
    pub fn curves_csv(&self) -> String {
        let mut out =
            String::from("epoch,steps,lr,loss,occupancy_loss,intensity_loss,train_accuracy\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.epoch,
                e.steps,
                e.lr,
                e.loss,
                e.occupancy_loss,
                e.intensity_loss,
                e.train_accuracy
            )
            .unwrap();
        }
        out
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        serde_json::Value::Object(map) => map.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        serde_json::Value::Array(items) => items
            .iter()
            .enumerate()
            .for_each(|(i, v)| flatten(&key(&i.to_string()), v, out)),
        serde_json::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
