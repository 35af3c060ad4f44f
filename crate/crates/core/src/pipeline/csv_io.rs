//! CSV dataset ingestion and emission.
//!
//! Layout: one file per modality, first column sample ID, header row of
//! feature names; a labels file with `sample_id,label` columns. Modalities
//! are aligned on the sorted intersection of sample IDs; samples missing
//! from any file are dropped with a count warning (complete-case analysis).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::dataset::{ModalityMatrix, MultiOmicsDataset};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

type FeatureTable = (Vec<String>, BTreeMap<String, Vec<f64>>);

fn read_table(path: &Path) -> Result<FeatureTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::config(format!("bad header in {}: {e}", path.display())))?
        .iter()
        .skip(1)
        .map(str::to_owned)
        .collect::<Vec<_>>();

    let mut rows = BTreeMap::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::config(format!("bad record in {}: {e}", path.display())))?;
        let mut iter = record.iter();
        let id = iter
            .next()
            .ok_or_else(|| Error::config(format!("empty row in {}", path.display())))?
            .to_owned();
        let mut values = Vec::with_capacity(headers.len());
        for (col_idx, cell) in iter.enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::BadCell {
                file: path.display().to_string(),
                row: row_idx + 2, // 1-based, header is row 1
                col: col_idx + 2, // 1-based, ID is column 1
                value: cell.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(Error::BadCell {
                    file: path.display().to_string(),
                    row: row_idx + 2,
                    col: col_idx + 2,
                    value: cell.to_owned(),
                });
            }
            values.push(v);
        }
        if values.len() != headers.len() {
            return Err(Error::config(format!(
                "{}: row {} has {} values, header has {}",
                path.display(),
                row_idx + 2,
                values.len(),
                headers.len()
            )));
        }
        rows.insert(id, values);
    }
    Ok((headers, rows))
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::config(format!("bad record in {}: {e}", path.display())))?;
        if record.len() < 2 {
            return Err(Error::config(format!(
                "{}: labels need `sample_id,label` columns",
                path.display()
            )));
        }
        out.insert(record[0].to_owned(), record[1].to_owned());
    }
    Ok(out)
}

/// Loads per-modality CSVs plus a labels file, aligned on the sorted
/// intersection of sample IDs. Returns the dataset and any drop warnings.
pub fn load_csv_dataset(
    modality_paths: &[(String, PathBuf)],
    labels_path: &Path,
) -> Result<(MultiOmicsDataset, Vec<String>)> {
    if modality_paths.is_empty() {
        return Err(Error::config("at least one modality file is required"));
    }
    let label_map = read_labels(labels_path)?;
    let mut tables = Vec::with_capacity(modality_paths.len());
    for (name, path) in modality_paths {
        let (features, rows) = read_table(path)?;
        tables.push((name.clone(), features, rows));
    }

    let mut union: BTreeSet<String> = label_map.keys().cloned().collect();
    for (_, _, rows) in &tables {
        union.extend(rows.keys().cloned());
    }
    let shared: Vec<String> = union
        .iter()
        .filter(|id| {
            label_map.contains_key(*id) && tables.iter().all(|(_, _, rows)| rows.contains_key(*id))
        })
        .cloned()
        .collect();
    if shared.is_empty() {
        return Err(Error::config(
            "no sample ID is present in every modality and the labels file",
        ));
    }

    let mut warnings = Vec::new();
    let dropped = union.len() - shared.len();
    if dropped > 0 {
        warnings.push(format!(
            "dropped {dropped} sample(s) missing from at least one modality or the labels file; \
             {} complete cases kept",
            shared.len()
        ));
    }

    let mut class_names: Vec<String> = shared
        .iter()
        .map(|id| label_map[id].clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    class_names.sort();
    let labels: Vec<usize> = shared
        .iter()
        .map(|id| {
            class_names
                .iter()
                .position(|c| c == &label_map[id])
                .expect("class collected above")
        })
        .collect();

    let mut modalities = Vec::with_capacity(tables.len());
    for (name, feature_names, rows) in tables {
        let dim = feature_names.len();
        let mut data = Vec::with_capacity(shared.len() * dim);
        for id in &shared {
            data.extend_from_slice(&rows[id]);
        }
        modalities.push(ModalityMatrix {
            name,
            features: Matrix::new(shared.len(), dim, data)?,
            feature_names,
        });
    }

    let ds = MultiOmicsDataset {
        modalities,
        labels,
        sample_ids: shared,
        class_names,
    };
    ds.validate()?;
    Ok((ds, warnings))
}

/// Writes one modality per CSV plus a labels file into `dir`. Returns the
/// written paths as `(modality name, path)` pairs and the labels path.
pub fn write_dataset_csv(
    ds: &MultiOmicsDataset,
    dir: &Path,
) -> Result<(Vec<(String, PathBuf)>, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for m in &ds.modalities {
        let path = dir.join(format!("{}.csv", m.name));
        let mut out = String::from("sample_id");
        for f in &m.feature_names {
            out.push(',');
            out.push_str(f);
        }
        out.push('\n');
        for (i, id) in ds.sample_ids.iter().enumerate() {
            out.push_str(id);
            for &v in m.features.row(i) {
                out.push_str(&format!(",{v:.17e}"));
            }
            out.push('\n');
        }
        let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        paths.push((m.name.clone(), path));
    }
    let labels_path = dir.join("labels.csv");
    let mut out = String::from("sample_id,label\n");
    for (id, &y) in ds.sample_ids.iter().zip(&ds.labels) {
        out.push_str(&format!("{id},{}\n", ds.class_names[y]));
    }
    let mut file = std::fs::File::create(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(&labels_path, e))?;
    Ok((paths, labels_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(path: &Path, content: &str) {
        std::fs::write(path, content).unwrap();
    }

    #[test]
    fn identical_ids_preserve_n() {
        let dir = tempfile::tempdir().unwrap();
        let m1 = dir.path().join("m1.csv");
        let m2 = dir.path().join("m2.csv");
        let labels = dir.path().join("labels.csv");
        write(&m1, "id,f0,f1\na,1,2\nb,3,4\nc,5,6\n");
        write(&m2, "id,g0\na,0.5\nb,0.25\nc,0.125\n");
        write(&labels, "id,label\na,x\nb,y\nc,x\n");
        let (ds, warnings) =
            load_csv_dataset(&[("m1".into(), m1), ("m2".into(), m2)], &labels).unwrap();
        assert_eq!(ds.n_samples(), 3);
        assert!(warnings.is_empty());
        assert_eq!(ds.class_names, vec!["x".to_string(), "y".to_string()]);
        assert_eq!(ds.modality("m1").unwrap().dim(), 2);
        // Sorted-ID order.
        assert_eq!(ds.sample_ids, vec!["a", "b", "c"]);
        assert_eq!(ds.modality("m2").unwrap().features.get(1, 0), 0.25);
    }

    #[test]
    fn missing_ids_are_dropped_with_count_warning() {
        let dir = tempfile::tempdir().unwrap();
        let m1 = dir.path().join("m1.csv");
        let m2 = dir.path().join("m2.csv");
        let labels = dir.path().join("labels.csv");
        // m2 misses c and d.
        write(&m1, "id,f0\na,1\nb,2\nc,3\nd,4\ne,5\nf,6\n");
        write(&m2, "id,g0\na,1\nb,2\ne,5\nf,6\n");
        write(&labels, "id,label\na,x\nb,y\nc,x\nd,y\ne,x\nf,y\n");
        let (ds, warnings) =
            load_csv_dataset(&[("m1".into(), m1), ("m2".into(), m2)], &labels).unwrap();
        assert_eq!(ds.n_samples(), 4);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("dropped 2"), "{}", warnings[0]);
    }

    #[test]
    fn non_numeric_cell_names_file_row_col() {
        let dir = tempfile::tempdir().unwrap();
        let m1 = dir.path().join("m1.csv");
        let labels = dir.path().join("labels.csv");
        write(&m1, "id,f0,f1\na,1,2\nb,oops,4\nc,5,6\n");
        write(&labels, "id,label\na,x\nb,y\nc,x\n");
        let err = load_csv_dataset(&[("m1".into(), m1)], &labels).unwrap_err();
        match err {
            Error::BadCell {
                row, col, value, ..
            } => {
                assert_eq!(row, 3);
                assert_eq!(col, 2);
                assert_eq!(value, "oops");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_intersection_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m1 = dir.path().join("m1.csv");
        let labels = dir.path().join("labels.csv");
        write(&m1, "id,f0\na,1\n");
        write(&labels, "id,label\nz,x\n");
        assert!(load_csv_dataset(&[("m1".into(), m1)], &labels).is_err());
    }

    #[test]
    fn roundtrip_through_disk_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let ds = crate::pipeline::generate_synthetic(&crate::pipeline::SyntheticSpec {
            class_counts: vec![5, 4, 6],
            class_names: vec!["a".into(), "b".into(), "c".into()],
            modalities: vec![crate::pipeline::SyntheticModalitySpec {
                name: "m".into(),
                feature_dim: 4,
                snr: 1.0,
                class_margin: 1.0,
                shared_coeff: 0.5,
            }],
            latent_dim: 3,
            seed: 5,
        })
        .unwrap();
        let (paths, labels) = write_dataset_csv(&ds, dir.path()).unwrap();
        let (back, warnings) = load_csv_dataset(&paths, &labels).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back.n_samples(), ds.n_samples());
        assert_eq!(back.class_names, ds.class_names);
        // Sorted-ID order must match the generator's emitted order.
        assert_eq!(back.sample_ids, ds.sample_ids);
        assert_eq!(back.labels, ds.labels);
        let a = &ds.modalities[0].features;
        let b = &back.modalities[0].features;
        assert!(a.max_abs_diff(b) < 1e-15);
    }
}
