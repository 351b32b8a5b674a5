use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::DensityMatrix;

/// Sampled observables on an increasing time grid.
///
/// Serializes as `{"times": [...], "observables": {"name": [...]}}`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSeries {
    times: Vec<f64>,
    observables: IndexMap<String, Vec<f64>>,
    #[serde(skip)]
    states: Option<Vec<DensityMatrix>>,
}

impl TimeSeries {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self {
            times: Vec::new(),
            observables: names.into_iter().map(|n| (n.into(), Vec::new())).collect(),
            states: None,
        }
    }

    /// Keep a copy of the state at every sample.
    pub fn store_states(mut self) -> Self {
        self.states = Some(Vec::new());
        self
    }

    /// Append one sample; `values` follow the column order.
    pub fn push(&mut self, t: f64, values: &[f64]) -> Result<()> {
        if values.len() != self.observables.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} observables",
                values.len(),
                self.observables.len()
            )));
        }
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::InvalidArgument(format!(
                    "time {t} does not follow {last}"
                )));
            }
        }
        self.times.push(t);
        for (col, v) in self.observables.values_mut().zip(values) {
            col.push(*v);
        }
        Ok(())
    }

    pub(crate) fn push_state(&mut self, rho: &DensityMatrix) {
        if let Some(states) = &mut self.states {
            states.push(rho.clone());
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.observables.keys().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.observables.get(name).map(|v| v.as_slice())
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|v| v.last().copied())
    }

    /// Stored states, if requested.
    pub fn states(&self) -> Option<&[DensityMatrix]> {
        self.states.as_deref()
    }

    /// Value of `name` at the sample closest to `t`.
    pub fn at(&self, name: &str, t: f64) -> Option<f64> {
        let col = self.get(name)?;
        let idx = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))?
            .0;
        col.get(idx).copied()
    }

    /// True when the last `fraction` of the samples of `name` stay within `tol`.
    pub fn plateaued(&self, name: &str, fraction: f64, tol: f64) -> bool {
        let Some(col) = self.get(name) else {
            return false;
        };
        if col.is_empty() {
            return false;
        }
        let count = ((col.len() as f64 * fraction).ceil() as usize).clamp(1, col.len());
        let tail = &col[col.len() - count..];
        let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo < tol
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.observables.keys().cloned());
        w.write_record(&header)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.observables.values().map(|col| col[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ts: TimeSeries = serde_json::from_str(s)?;
        if ts.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "times are not strictly increasing".into(),
            ));
        }
        if ts.observables.values().any(|c| c.len() != ts.times.len()) {
            return Err(Error::InvalidArgument(
                "observable length differs from times".into(),
            ));
        }
        Ok(ts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TimeSeries {
        let mut ts = TimeSeries::new(["fidelity", "parity"]);
        ts.push(0.0, &[0.25, 1.0]).unwrap();
        ts.push(0.5, &[0.5, 0.75]).unwrap();
        ts
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "time,fidelity,parity\n0,0.25,1\n0.5,0.5,0.75\n"
        );
    }

    #[test]
    fn json_round_trip() {
        let ts = sample();
        let json = ts.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["observables"]["parity"][1], 0.75);
        let back = TimeSeries::from_json(&json).unwrap();
        assert_eq!(back.times(), ts.times());
        assert_eq!(back.get("fidelity"), ts.get("fidelity"));
    }

    #[test]
    fn rejects_non_increasing_times() {
        let mut ts = sample();
        assert!(ts.push(0.5, &[0.0, 0.0]).is_err());
        assert!(ts.push(1.0, &[0.0]).is_err());
    }

    #[test]
    fn plateau_detection() {
        let mut ts = TimeSeries::new(["f"]);
        for i in 0..20 {
            ts.push(i as f64, &[if i < 15 { i as f64 } else { 15.0 }])
                .unwrap();
        }
        assert!(ts.plateaued("f", 0.1, 1e-3));
        assert!(!ts.plateaued("f", 0.5, 1e-3));
    }
}
