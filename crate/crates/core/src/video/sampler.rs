//! Specialty- and dataset-balanced sampling.
//!
//! Each record of dataset `d` under specialty `s` gets weight
//! `w ∝ 1/(N_d·|D_s|)`, where `N_d` is the clip count of `d` and `|D_s|`
//! the number of datasets under `s`. After normalization every specialty
//! carries equal total mass, and within a specialty every dataset carries
//! equal mass regardless of its size.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::video::manifest::{validate_manifest, ManifestRecord};

#[derive(Clone, Debug)]
pub struct SampleWeightTable {
    records: Vec<ManifestRecord>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SampleWeightTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &ManifestRecord {
        &self.records[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total normalized mass per specialty.
    pub fn specialty_masses(&self) -> BTreeMap<String, f64> {
        let mut masses = BTreeMap::new();
        for (r, &w) in self.records.iter().zip(&self.weights) {
            *masses.entry(r.specialty_id.clone()).or_insert(0.0) += w;
        }
        masses
    }
}

pub fn build_weight_table(records: &[ManifestRecord]) -> Result<SampleWeightTable> {
    if records.is_empty() {
        return Err(Error::contract("manifest is empty"));
    }
    if records.iter().any(|r| r.num_frames == 0) {
        return Err(Error::contract("manifest record with zero frames"));
    }
    validate_manifest(records)?;

    let mut dataset_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut specialty_datasets: BTreeMap<&str, std::collections::BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        *dataset_counts.entry(r.dataset_id.as_str()).or_insert(0) += 1;
        specialty_datasets
            .entry(r.specialty_id.as_str())
            .or_default()
            .insert(r.dataset_id.as_str());
    }

    let raw: Vec<f64> = records
        .iter()
        .map(|r| {
            let n_d = dataset_counts[r.dataset_id.as_str()] as f64;
            let d_s = specialty_datasets[r.specialty_id.as_str()].len() as f64;
            1.0 / (n_d * d_s)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }

    Ok(SampleWeightTable {
        records: records.to_vec(),
        weights,
        cumulative,
    })
}

/// Draws `batch_size` record indices i.i.d. with replacement, proportional
/// to the table weights.
pub fn sample_batch<R: Rng>(
    table: &SampleWeightTable,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be >= 1"));
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let u: f64 = rng.random();
        let idx = table.cumulative.partition_point(|&c| c <= u);
        out.push(idx.min(table.records.len() - 1));
    }
    Ok(out)
}
