//! Multi-omics dataset model: named per-modality feature matrices sharing
//! one sample order, labels, and stratified split masks.

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

/// One modality's N x d feature matrix plus identity metadata.
#[derive(Debug, Clone)]
pub struct ModalityMatrix {
    pub name: String,
    pub features: Matrix,
    pub feature_names: Vec<String>,
}

impl ModalityMatrix {
    pub fn new(name: impl Into<String>, features: Matrix) -> Self {
        let feature_names = (0..features.cols()).map(|j| format!("f{j}")).collect();
        Self {
            name: name.into(),
            features,
            feature_names,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Dataset with M modalities over N shared samples and C classes.
#[derive(Debug, Clone)]
pub struct MultiOmicsDataset {
    pub modalities: Vec<ModalityMatrix>,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<String>,
    pub class_names: Vec<String>,
}

impl MultiOmicsDataset {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn modality(&self, name: &str) -> Option<&ModalityMatrix> {
        self.modalities.iter().find(|m| m.name == name)
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.name.clone()).collect()
    }

    /// Checks the structural invariants: aligned sample counts, labels in
    /// range, every class populated.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_samples();
        if n == 0 {
            return Err(Error::contract("dataset has no samples"));
        }
        if self.sample_ids.len() != n {
            return Err(Error::contract("sample_ids length differs from labels"));
        }
        for m in &self.modalities {
            if m.n_samples() != n {
                return Err(Error::SampleCount {
                    left_name: "labels".into(),
                    left_n: n,
                    right_name: m.name.clone(),
                    right_n: m.n_samples(),
                });
            }
        }
        let c = self.n_classes();
        let mut counts = vec![0usize; c];
        for &y in &self.labels {
            if y >= c {
                return Err(Error::contract(format!(
                    "label {y} out of range for {c} classes"
                )));
            }
            counts[y] += 1;
        }
        if let Some(empty) = counts.iter().position(|&k| k == 0) {
            return Err(Error::contract(format!(
                "class '{}' has no samples",
                self.class_names[empty]
            )));
        }
        Ok(())
    }
}

/// Disjoint, covering boolean masks over the N samples.
#[derive(Debug, Clone)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn n_samples(&self) -> usize {
        self.train.len()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |m: &[bool]| m.iter().filter(|&&b| b).count();
        (c(&self.train), c(&self.val), c(&self.test))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.train.len();
        if self.val.len() != n || self.test.len() != n {
            return Err(Error::contract("split masks have mismatched lengths"));
        }
        for i in 0..n {
            let hits = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if hits != 1 {
                return Err(Error::contract(format!(
                    "sample {i} belongs to {hits} splits; masks must be disjoint and covering"
                )));
            }
        }
        Ok(())
    }
}

/// Per-class proportional split; leftover samples go to train. Errors if any
/// class has fewer than 3 samples, since it could not reach all three splits.
pub fn stratified_split(
    labels: &[usize],
    fractions: (f64, f64, f64),
    rng: &mut Rng,
) -> Result<SplitMasks> {
    let (ft, fv, fe) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fe <= 0.0 {
        return Err(Error::contract("split fractions must be positive"));
    }
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split fractions must sum to 1, got {}",
            ft + fv + fe
        )));
    }
    let n = labels.len();
    let c = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for (class, mut idxs) in by_class.into_iter().enumerate() {
        let nc = idxs.len();
        if nc < 3 {
            return Err(Error::contract(format!(
                "class {class} has only {nc} samples; at least 3 are needed to cover all splits"
            )));
        }
        rng.shuffle(&mut idxs);
        let mut n_val = ((fv * nc as f64).floor() as usize).max(1);
        let mut n_test = ((fe * nc as f64).floor() as usize).max(1);
        while nc - n_val - n_test < 1 {
            if n_val >= n_test {
                n_val -= 1;
            } else {
                n_test -= 1;
            }
        }
        for (pos, &i) in idxs.iter().enumerate() {
            if pos < n_test {
                test[i] = true;
            } else if pos < n_test + n_val {
                val[i] = true;
            } else {
                train[i] = true;
            }
        }
    }
    let masks = SplitMasks { train, val, test };
    masks.validate()?;
    Ok(masks)
}

/// Indices selected by a mask.
pub fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

/// Subset of a label vector under a mask.
pub fn select_labels(labels: &[usize], mask: &[bool]) -> Vec<usize> {
    labels
        .iter()
        .zip(mask)
        .filter_map(|(&y, &b)| b.then_some(y))
        .collect()
}
