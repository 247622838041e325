//! Correlated Gaussian feature source for Alice, Bob and Eve.
//!
//! The three features form a zero-mean jointly Gaussian vector with unit
//! variances. Samples are drawn by applying the symmetric square root of the
//! covariance to independent standard normals, which keeps singular
//! configurations (perfect Alice/Bob correlation) usable.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the pseudo-random generator, recorded in every output file.
pub const GENERATOR_NAME: &str = "ChaCha20Rng(seed_from_u64)+StandardNormal(ziggurat)";

const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationConfig {
    pub rho_ab: f64,
    pub rho_ae: f64,
    pub rho_be: f64,
}

impl CorrelationConfig {
    pub fn new(rho_ab: f64, rho_ae: f64, rho_be: f64) -> Self {
        Self { rho_ab, rho_ae, rho_be }
    }

    /// The experimental setting: Eve correlated at 0.8 with both parties.
    pub fn with_eve_at(rho_ab: f64, rho_eve: f64) -> Self {
        Self::new(rho_ab, rho_eve, rho_eve)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0,
            self.rho_ab,
            self.rho_ae,
            self.rho_ab,
            1.0,
            self.rho_be,
            self.rho_ae,
            self.rho_be,
            1.0,
        )
    }
}

/// One joint draw of the three features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriSample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TriSample>,
    pub seed: u64,
    pub config: CorrelationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub config: CorrelationConfig,
    pub n: usize,
    pub seed: u64,
    pub generator: String,
}

pub fn validate_config(cfg: &CorrelationConfig) -> Result<()> {
    for (name, value) in [
        ("rho_ab", cfg.rho_ab),
        ("rho_ae", cfg.rho_ae),
        ("rho_be", cfg.rho_be),
    ] {
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::CorrelationOutOfRange { name, value });
        }
    }
    let eigenvalues = cfg.covariance().symmetric_eigenvalues();
    let smallest = eigenvalues.min();
    if smallest < -PSD_TOLERANCE {
        return Err(Error::NotPositiveSemidefinite { eigenvalue: smallest });
    }
    Ok(())
}

/// Symmetric square root `V diag(sqrt(max(l, 0))) V^T` of the covariance.
fn covariance_root(cfg: &CorrelationConfig) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(cfg.covariance());
    let roots = eig.eigenvalues.map(|l| if l > 0.0 { l.sqrt() } else { 0.0 });
    eig.eigenvectors * Matrix3::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

pub fn sample_dataset(cfg: &CorrelationConfig, n: usize, seed: u64) -> Result<Dataset> {
    validate_config(cfg)?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let root = covariance_root(cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let perfect_ab = cfg.rho_ab == 1.0;
    let samples = (0..n)
        .map(|_| {
            let w = Vector3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let v = root * w;
            // rows 0 and 1 of the root coincide when rho_ab = 1; share the value
            let y = if perfect_ab { v[0] } else { v[1] };
            TriSample { x: v[0], y, z: v[2] }
        })
        .collect();
    Ok(Dataset { samples, seed, config: *cfg })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn metadata(&self) -> DatasetMetadata {
        DatasetMetadata {
            config: self.config,
            n: self.samples.len(),
            seed: self.seed,
            generator: GENERATOR_NAME.to_string(),
        }
    }

    /// Writes `x,y,z` rows to `path` and the metadata to `<path>.meta.json`.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "x,y,z")?;
        for s in &self.samples {
            writeln!(out, "{:e},{:e},{:e}", s.x, s.y, s.z)?;
        }
        out.flush()?;
        let meta = serde_json::to_string_pretty(&self.metadata())?;
        fs::write(metadata_path(path), meta)?;
        Ok(())
    }

    pub fn import_csv(path: &Path) -> Result<Self> {
        let meta: DatasetMetadata =
            serde_json::from_str(&fs::read_to_string(metadata_path(path))?)?;
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(header)) if header.trim() == "x,y,z" => {}
            _ => return Err(Error::Parse("expected header `x,y,z`".into())),
        }
        let mut samples = Vec::with_capacity(meta.n);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
            if fields.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 fields", lineno + 2)));
            }
            samples.push(TriSample { x: fields[0], y: fields[1], z: fields[2] });
        }
        if samples.len() != meta.n {
            return Err(Error::Parse(format!(
                "metadata says {} samples, file has {}",
                meta.n,
                samples.len()
            )));
        }
        Ok(Dataset { samples, seed: meta.seed, config: meta.config })
    }
}

fn metadata_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}
