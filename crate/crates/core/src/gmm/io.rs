//! JSON model files.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ClusterModel, TrajectoryModel};
use crate::error::GmmError;
use crate::ingest::Mode;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    /// `[rows, cols]`.
    shape: [usize; 2],
    /// Column-major.
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClusterFile {
    pi: f64,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    #[serde(rename = "U")]
    u: MatrixFile,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    mode: Mode,
    #[serde(rename = "T_com")]
    t_com: usize,
    r: usize,
    up_factor: f64,
    clusters: Vec<ClusterFile>,
}

pub fn model_to_json(model: &TrajectoryModel) -> Result<String, GmmError> {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        mode: model.mode,
        t_com: model.t_com,
        r: model.rank,
        up_factor: model.up_factor,
        clusters: model
            .clusters
            .iter()
            .map(|c| ClusterFile {
                pi: c.weight,
                mu: c.mean.iter().copied().collect(),
                sigma: c.singular_values.iter().copied().collect(),
                u: MatrixFile {
                    shape: [c.deviations.nrows(), c.deviations.ncols()],
                    data: c.deviations.as_slice().to_vec(),
                },
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json(text: &str) -> Result<TrajectoryModel, GmmError> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(GmmError::ModelFile(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    let clusters = file
        .clusters
        .into_iter()
        .enumerate()
        .map(|(j, c)| {
            let [rows, cols] = c.u.shape;
            if rows * cols != c.u.data.len() {
                return Err(GmmError::ModelFile(format!(
                    "cluster {j}: U has {} entries, shape says {rows}x{cols}",
                    c.u.data.len()
                )));
            }
            Ok(ClusterModel {
                weight: c.pi,
                mean: DVector::from_vec(c.mu),
                deviations: DMatrix::from_vec(rows, cols, c.u.data),
                singular_values: DVector::from_vec(c.sigma),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let model = TrajectoryModel {
        mode: file.mode,
        t_com: file.t_com,
        rank: file.r,
        up_factor: file.up_factor,
        clusters,
    };
    model.validate()?;
    Ok(model)
}

pub fn write_model(path: &Path, model: &TrajectoryModel) -> Result<(), GmmError> {
    fs::write(path, model_to_json(model)?).map_err(|e| GmmError::ModelFile(format!("{}: {e}", path.display())))
}

pub fn read_model(path: &Path) -> Result<TrajectoryModel, GmmError> {
    let text = fs::read_to_string(path).map_err(|e| GmmError::ModelFile(format!("{}: {e}", path.display())))?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> TrajectoryModel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clusters = [0.25, 0.75]
            .iter()
            .map(|&w| ClusterModel {
                weight: w,
                mean: DVector::from_fn(6, |_, _| rng.random_range(-1e4..1e4)),
                deviations: DMatrix::from_fn(6, 2, |_, _| rng.random::<f64>() / 3.0),
                singular_values: DVector::from_vec(vec![rng.random::<f64>() * 1e5, 1e-300]),
            })
            .collect();
        TrajectoryModel {
            mode: Mode::Landing,
            t_com: 2,
            rank: 2,
            up_factor: 10.0,
            clusters,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = model();
        let text = model_to_json(&m).unwrap();
        assert!(text.contains("\"T_com\": 2"));
        assert!(text.contains("\"mode\": \"landing\""));
        assert_eq!(model_from_json(&text).unwrap(), m);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        write_model(&path, &model()).unwrap();
        assert_eq!(read_model(&path).unwrap(), model());
    }

    #[test]
    fn rejects_inconsistent_files() {
        let text = model_to_json(&model()).unwrap();
        assert!(model_from_json(&text.replace("\"format_version\": 1", "\"format_version\": 9")).is_err());
        assert!(model_from_json(&text.replace("\"T_com\": 2", "\"T_com\": 3")).is_err());
        assert!(model_from_json(&text.replace("\"pi\": 0.25", "\"pi\": 0.5")).is_err());
        assert!(model_from_json("{").is_err());
    }
}
