//! Container encodings of every trained model type.
//!
//! Matrices are stored row-major with shape `[rows, cols]`. All tensors are
//! written as `f64` so that a load returns bit-identical models; `f32`
//! tensors written by other tools are accepted on read.

use std::path::Path;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use super::container::{config_hash, Container};
use crate::error::{Error, Result};
use crate::gaussian::{ImageBasis, StationaryModel};
use crate::hog::{HogConfig, HogDescriptor};
use crate::paireddict::{PairNormalization, PairedDictionary};
use crate::sparse::Dictionary;

/// A model that round-trips through a [`Container`].
pub trait Persist: Sized {
    /// Value of the `model_type` metadata field.
    const KIND: &'static str;

    /// Tensors plus a `config` metadata object describing the model.
    fn encode(&self) -> Result<Container>;

    fn decode(c: &Container) -> Result<Self>;
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn matrix(c: &Container, name: &str) -> Result<DMatrix<f64>> {
    let t = c.tensor(name)?;
    if t.shape.len() != 2 {
        return Err(Error::Corrupt(format!(
            "tensor {name} is not a matrix: {:?}",
            t.shape
        )));
    }
    Ok(DMatrix::from_row_slice(t.shape[0], t.shape[1], &t.data))
}

fn put_matrix(c: &mut Container, name: &str, m: &DMatrix<f64>) -> Result<()> {
    c.insert_f64(name, &[m.nrows(), m.ncols()], matrix_to_rows(m))
}

fn put_vector(c: &mut Container, name: &str, v: &[f64]) -> Result<()> {
    c.insert_f64(name, &[v.len()], v.to_vec())
}

fn vector(c: &Container, name: &str) -> Result<Vec<f64>> {
    let t = c.tensor(name)?;
    if t.shape.len() != 1 {
        return Err(Error::Corrupt(format!(
            "tensor {name} is not a vector: {:?}",
            t.shape
        )));
    }
    Ok(t.data.clone())
}

fn put_hog(c: &mut Container, hog: &HogConfig) -> Value {
    c.insert_scalar("hog.truncation", hog.truncation);
    json!({"cell_size": hog.cell_size, "orientations": hog.orientations})
}

fn hog_from(c: &Container) -> Result<HogConfig> {
    let cfg = c
        .metadata
        .get("config")
        .and_then(|v| v.get("hog"))
        .ok_or_else(|| Error::Corrupt("metadata lacks the HOG configuration".into()))?;
    let field = |k: &str| {
        cfg.get(k)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Corrupt(format!("HOG configuration lacks {k}")))
    };
    let hog = HogConfig {
        cell_size: field("cell_size")?,
        orientations: field("orientations")?,
        truncation: c.scalar("hog.truncation")?,
    };
    hog.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(hog)
}

fn config_usize(c: &Container, key: &str) -> Result<usize> {
    c.metadata
        .get("config")
        .and_then(|v| v.get(key))
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| Error::Corrupt(format!("configuration lacks {key}")))
}

/// Shape and consistency errors while rebuilding a model mean the file is bad.
fn corrupt<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Dimension(m) | Error::Config(m) | Error::Numerical(m) | Error::EmptyCorpus(m) => {
            Error::Corrupt(m)
        }
        other => other,
    })
}

impl Persist for StationaryModel {
    const KIND: &'static str = "stationary-gaussian";

    fn encode(&self) -> Result<Container> {
        let mut c = Container::new();
        let hog = put_hog(&mut c, &self.hog);
        c.insert_scalar("mu_pixel", self.mu_pixel);
        put_vector(&mut c, "mu_hog", &self.mu_hog)?;
        let side = |r: usize| 2 * r + 1;
        let d = self.depth();
        let (rp, rph, rc) = (self.pixel_radius, self.anchor_radius, self.cell_radius);
        c.insert_f64(
            "autocov_pp",
            &[side(rp), side(rp)],
            self.pp_table().to_vec(),
        )?;
        c.insert_f64(
            "autocov_ph",
            &[side(rph), side(rph), d],
            self.ph_table().to_vec(),
        )?;
        c.insert_f64(
            "autocov_hh",
            &[side(rc), side(rc), d, d],
            self.hh_table().to_vec(),
        )?;
        c.metadata.insert(
            "config".into(),
            json!({"hog": hog, "canonical_cells": self.canonical_cells, "sample_count": self.sample_count}),
        );
        Ok(c)
    }

    fn decode(c: &Container) -> Result<Self> {
        let hog = hog_from(c)?;
        let sample_count = c
            .metadata
            .get("config")
            .and_then(|v| v.get("sample_count"))
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Corrupt("configuration lacks sample_count".into()))?;
        corrupt(StationaryModel::from_parts(
            hog,
            config_usize(c, "canonical_cells")?,
            c.scalar("mu_pixel")?,
            vector(c, "mu_hog")?,
            c.tensor("autocov_pp")?.data.clone(),
            c.tensor("autocov_ph")?.data.clone(),
            c.tensor("autocov_hh")?.data.clone(),
            sample_count,
        ))
    }
}

impl Persist for PairedDictionary {
    const KIND: &'static str = "paired-dictionary";

    fn encode(&self) -> Result<Container> {
        let mut c = Container::new();
        let hog = put_hog(&mut c, self.hog_config());
        put_matrix(&mut c, "u", self.u().matrix())?;
        put_matrix(&mut c, "v", self.v().matrix())?;
        c.insert_scalar("lambda", self.lambda());
        let n = self.normalization();
        c.insert_scalar("norm.pixel_offset", n.pixel_offset);
        c.insert_scalar("norm.pixel_scale", n.pixel_scale);
        c.insert_scalar("norm.hog_scale", n.hog_scale);
        put_vector(&mut c, "norm.hog_mean", &n.hog_mean)?;
        put_vector(&mut c, "history", self.history())?;
        c.metadata.insert(
            "config".into(),
            json!({
                "hog": hog,
                "patch_cells": self.patch_cells(),
                "channels": self.channels(),
                "atoms": self.u().atoms(),
                "normalization": "per-patch zero mean; parts balanced to equal energy",
            }),
        );
        Ok(c)
    }

    fn decode(c: &Container) -> Result<Self> {
        let hog = hog_from(c)?;
        let u = corrupt(Dictionary::new(matrix(c, "u")?))?;
        let v = corrupt(Dictionary::new(matrix(c, "v")?))?;
        let normalization = PairNormalization {
            pixel_offset: c.scalar("norm.pixel_offset")?,
            pixel_scale: c.scalar("norm.pixel_scale")?,
            hog_mean: vector(c, "norm.hog_mean")?,
            hog_scale: c.scalar("norm.hog_scale")?,
        };
        corrupt(PairedDictionary::from_parts(
            u,
            v,
            config_usize(c, "patch_cells")?,
            config_usize(c, "channels")?,
            c.scalar("lambda")?,
            hog,
            normalization,
            vector(c, "history")?,
        ))
    }
}

impl Persist for ImageBasis {
    const KIND: &'static str = "image-basis";

    fn encode(&self) -> Result<Container> {
        let mut c = Container::new();
        put_matrix(&mut c, "patches", &self.patches)?;
        put_vector(&mut c, "scales", &self.scales)?;
        let flat: Vec<f64> = self
            .placements
            .iter()
            .flat_map(|&(x, y)| [x as f64, y as f64])
            .collect();
        c.insert_f64("placements", &[self.placements.len(), 2], flat)?;
        c.insert_scalar("mean", self.mean);
        c.metadata.insert(
            "config".into(),
            json!({"width": self.width, "height": self.height, "patch": self.patch}),
        );
        Ok(c)
    }

    fn decode(c: &Container) -> Result<Self> {
        let (width, height, patch) = (
            config_usize(c, "width")?,
            config_usize(c, "height")?,
            config_usize(c, "patch")?,
        );
        let patches = matrix(c, "patches")?;
        let scales = vector(c, "scales")?;
        let t = c.tensor("placements")?;
        if t.shape.len() != 2 || t.shape[1] != 2 {
            return Err(Error::Corrupt("placements must be an n x 2 table".into()));
        }
        let placements: Vec<(usize, usize)> = t
            .data
            .chunks_exact(2)
            .map(|p| (p[0] as usize, p[1] as usize))
            .collect();
        if patches.nrows() != patch * patch
            || scales.len() != patches.ncols()
            || placements
                .iter()
                .any(|&(x, y)| x + patch > width || y + patch > height)
        {
            return Err(Error::Corrupt(
                "image basis tensors are inconsistent".into(),
            ));
        }
        Ok(ImageBasis {
            width,
            height,
            patch,
            patches,
            scales,
            placements,
            mean: c.scalar("mean")?,
        })
    }
}

impl Persist for HogDescriptor {
    const KIND: &'static str = "descriptor";

    fn encode(&self) -> Result<Container> {
        let mut c = Container::new();
        c.insert_f64(
            "hog",
            &[self.cells_y, self.cells_x, self.depth],
            self.data().to_vec(),
        )?;
        c.metadata
            .insert("config".into(), json!({"cell_size": self.cell_size}));
        Ok(c)
    }

    fn decode(c: &Container) -> Result<Self> {
        let t = c.tensor("hog")?;
        if t.shape.len() != 3 {
            return Err(Error::Corrupt(format!(
                "descriptor tensor has shape {:?}",
                t.shape
            )));
        }
        let cell_size = c
            .metadata
            .get("config")
            .and_then(|v| v.get("cell_size"))
            .and_then(Value::as_u64)
            .unwrap_or(8) as usize;
        corrupt(HogDescriptor::new(
            t.shape[1],
            t.shape[0],
            t.shape[2],
            cell_size,
            t.data.clone(),
        ))
    }
}

/// Encode with the type tag, a hash of the configuration and any extra
/// training metadata.
pub fn to_container<T: Persist>(model: &T, training: Option<Value>) -> Result<Container> {
    let mut c = model.encode()?;
    c.metadata.insert("model_type".into(), T::KIND.into());
    if let Some(t) = training {
        c.metadata.insert("training".into(), t);
    }
    let hashed = json!({
        "config": c.metadata.get("config").cloned().unwrap_or(Value::Null),
        "training": c.metadata.get("training").cloned().unwrap_or(Value::Null),
    });
    c.metadata
        .insert("config_hash".into(), config_hash(&hashed).into());
    Ok(c)
}

pub fn save_model<T: Persist>(
    model: &T,
    path: impl AsRef<Path>,
    training: Option<Value>,
) -> Result<()> {
    to_container(model, training)?.save(path)
}

/// Decode a container, checking its type tag.
pub fn from_container<T: Persist>(c: &Container) -> Result<T> {
    let kind = c.meta_str("model_type")?;
    if kind != T::KIND {
        return Err(Error::Corrupt(format!(
            "container holds a {kind}, expected a {}",
            T::KIND
        )));
    }
    T::decode(c)
}

pub fn load_model<T: Persist>(path: impl AsRef<Path>) -> Result<T> {
    from_container(&Container::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{basis_from_covariance, fit_stationary, StationaryConfig};
    use crate::paireddict::{train_paired, PairConfig};
    use crate::source::MemorySource;
    use crate::testutil::smooth_noise;
    use proptest::prelude::*;

    fn round_trip<T: Persist + PartialEq + std::fmt::Debug>(m: &T) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fvtb");
        save_model(m, &path, Some(json!({"seed": 3}))).unwrap();
        let back: T = load_model(&path).unwrap();
        assert_eq!(&back, m);
        // Saving again gives identical bytes.
        let again = dir.path().join("n.fvtb");
        save_model(&back, &again, Some(json!({"seed": 3}))).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&again).unwrap()
        );
    }

    #[test]
    fn stationary_model_round_trips() {
        let corpus =
            MemorySource::new(vec![smooth_noise(64, 64, 1, 2), smooth_noise(72, 64, 1, 3)]);
        let cfg = StationaryConfig {
            canonical_cells: 2,
            ..Default::default()
        };
        round_trip(&fit_stationary(&corpus, &HogConfig::default(), &cfg, 1).unwrap());
    }

    #[test]
    fn paired_dictionary_round_trips_and_rejects_truncation() {
        let corpus = MemorySource::new(vec![smooth_noise(64, 64, 1, 4)]);
        let cfg = PairConfig {
            patch_cells: 2,
            atoms: 6,
            samples: 40,
            epochs: 2,
            ..Default::default()
        };
        let pd = train_paired(&corpus, &HogConfig::default(), &cfg).unwrap();
        round_trip(&pd);
        let bytes = to_container(&pd, None).unwrap().to_bytes().unwrap();
        let cut = Container::from_bytes(&bytes[..bytes.len() / 2]);
        assert!(matches!(cut, Err(Error::Corrupt(_))));
        // The wrong type is reported, not misread.
        let c = Container::from_bytes(&bytes).unwrap();
        assert!(matches!(
            from_container::<StationaryModel>(&c),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn f32_tensors_are_accepted() {
        let d = HogDescriptor::new(2, 1, 3, 8, vec![0.5, 0.25, 0.125, 1.0, 2.0, 4.0]).unwrap();
        let mut c = to_container(&d, None).unwrap();
        let data = c.tensor("hog").unwrap().data.clone();
        c.insert("hog", super::super::container::Dtype::F32, &[1, 2, 3], data)
            .unwrap();
        let back: HogDescriptor =
            from_container(&Container::from_bytes(&c.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_models_round_trip(seed in 0u64..1000, w in 1usize..4, h in 1usize..4, k in 1usize..4) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut vals = |n: usize| (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect::<Vec<f64>>();
            let d = HogDescriptor::new(w, h, 31, 8, vals(w * h * 31)).unwrap();
            let back: HogDescriptor = from_container(&Container::from_bytes(&to_container(&d, None).unwrap().to_bytes().unwrap()).unwrap()).unwrap();
            prop_assert_eq!(back, d);

            let m = DMatrix::from_fn(9, 9, |i, j| if i == j { 1.0 + i as f64 } else { 0.0 });
            let basis = basis_from_covariance(&m, 3, k, (3 + w, 3 + h), 1, vals(1)[0]).unwrap();
            let back: ImageBasis = from_container(&Container::from_bytes(&to_container(&basis, None).unwrap().to_bytes().unwrap()).unwrap()).unwrap();
            prop_assert_eq!(back, basis);

            let hog = HogConfig::default();
            // 2x2 cells of 8 pixels give 16x16 = 256-value patches.
            let pd = PairedDictionary::from_parts(
                Dictionary::new(DMatrix::from_vec(256, k, vals(256 * k)).map(|v| v / 16.0)).unwrap(),
                Dictionary::new(DMatrix::from_vec(124, k, vals(124 * k)).map(|v| v / 12.0)).unwrap(),
                2, 1, 1.5, hog,
                PairNormalization { pixel_offset: vals(1)[0], pixel_scale: 2.0, hog_mean: vals(124), hog_scale: 3.0 },
                vals(w),
            ).unwrap();
            let back: PairedDictionary = from_container(&Container::from_bytes(&to_container(&pd, None).unwrap().to_bytes().unwrap()).unwrap()).unwrap();
            prop_assert_eq!(back, pd);
        }
    }
}
