//! Observed data: one record per individual with covariates and a
//! q-vector of log concentrations, plus optional study metadata.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::ParametricFamily;
use crate::model::Covariates;
use crate::pkmodel::{PkModel, ScenarioSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: usize,
    pub covariates: Covariates,
    pub y: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scenario: ScenarioSpec,
    pub seed: Option<u64>,
    pub truth: Option<ParametricFamily>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub meta: Option<DatasetMeta>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    id: usize,
    age: f64,
    weight: f64,
    time: f64,
    y: f64,
}

impl Dataset {
    pub fn from_records(records: Vec<Record>) -> Self {
        Self { records, meta: None }
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn q(&self) -> usize {
        self.records.first().map_or(0, |r| r.y.len())
    }

    pub fn covariates(&self) -> Vec<Covariates> {
        self.records.iter().map(|r| r.covariates).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Input("dataset has no individuals".into()));
        }
        let q = self.q();
        for r in &self.records {
            if r.y.len() != q || r.y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("record {} has invalid observations", r.id)));
            }
            if !(r.covariates.weight > 0.0) || !r.covariates.age.is_finite() {
                return Err(Error::Input(format!("record {} has invalid covariates", r.id)));
            }
        }
        Ok(())
    }

    /// Same covariates, new observation vectors.
    pub fn with_observations(&self, ys: Vec<DVector<f64>>) -> Self {
        let records = self
            .records
            .iter()
            .zip(ys)
            .map(|(r, y)| Record { id: r.id, covariates: r.covariates, y })
            .collect();
        Self { records, meta: self.meta.clone() }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self { records: idx.iter().map(|&i| self.records[i].clone()).collect(), meta: self.meta.clone() }
    }

    pub fn scenario(&self) -> Result<&ScenarioSpec> {
        self.meta
            .as_ref()
            .map(|m| &m.scenario)
            .ok_or_else(|| Error::Input("dataset carries no scenario metadata".into()))
    }

    pub fn pk_model(&self) -> Result<PkModel> {
        self.scenario()?.model()
    }

    /// Long-format CSV: one row per individual and time point.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let times = &self.scenario()?.times;
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            for (t, y) in times.iter().zip(r.y.iter()) {
                w.serialize(CsvRow { id: r.id, age: r.covariates.age, weight: r.covariates.weight, time: *t, y: *y })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R, meta: Option<DatasetMeta>) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let mut grouped: BTreeMap<usize, (Covariates, Vec<(f64, f64)>)> = BTreeMap::new();
        for row in rd.deserialize() {
            let row: CsvRow = row?;
            let entry = grouped.entry(row.id).or_insert((Covariates::new(row.age, row.weight), Vec::new()));
            entry.1.push((row.time, row.y));
        }
        let mut records = Vec::with_capacity(grouped.len());
        let mut times: Option<Vec<f64>> = None;
        for (id, (covariates, obs)) in grouped {
            let t: Vec<f64> = obs.iter().map(|o| o.0).collect();
            match &times {
                None => times = Some(t),
                Some(prev) if *prev != t => {
                    return Err(Error::Input(format!("individual {id} has a different sampling schedule")))
                }
                _ => {}
            }
            records.push(Record { id, covariates, y: DVector::from_iterator(obs.len(), obs.iter().map(|o| o.1)) });
        }
        if let (Some(m), Some(t)) = (&meta, &times) {
            if m.scenario.times != *t {
                return Err(Error::Input("CSV time points disagree with metadata".into()));
            }
        }
        let ds = Self { records, meta };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes `<stem>.csv` and the `<stem>.json` metadata sidecar.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let meta = self.meta.as_ref().ok_or_else(|| Error::Input("dataset carries no metadata".into()))?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(meta)? + "\n")?;
        Ok(())
    }

    /// Loads a CSV and its sibling `.json` sidecar.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let meta_path = csv_path.with_extension("json");
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path).map_err(|e| with_path(&meta_path, e))?)?;
        Self::read_csv(std::fs::File::open(csv_path).map_err(|e| with_path(csv_path, e))?, Some(meta))
    }
}

fn with_path(p: &Path, e: std::io::Error) -> std::io::Error {
    std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pkmodel::simulate_dataset;

    #[test]
    fn csv_round_trip() {
        let sc = ScenarioSpec::sparse();
        let ds = simulate_dataset(&sc, &ParametricFamily::table1(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path(), "data").unwrap();
        let back = Dataset::load(&dir.path().join("data.csv")).unwrap();
        assert_eq!(back.meta, ds.meta);
        assert_eq!(back.n(), 20);
        for (a, b) in back.records.iter().zip(&ds.records) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.covariates, b.covariates);
            assert_eq!(a.y, b.y);
        }
    }

    #[test]
    fn empty_dataset_invalid() {
        assert!(Dataset::from_records(vec![]).validate().is_err());
    }
}
