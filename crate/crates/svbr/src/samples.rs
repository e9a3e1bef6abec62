//! Posterior draw storage and the columnar binary artifact format.
//!
//! Draws are stored column-per-quantity. The on-disk container is a small
//! versioned header (magic, version, one JSON metadata block) followed by
//! named f64 columns in little-endian order. Identical draws serialize to
//! identical bytes, which is what the determinism contract of the CLI is
//! checked against. The pointwise log-likelihood matrix uses the same
//! container in a separate file so model comparison can be recomputed
//! without refitting.

use crate::data::{ExposureKind, Likelihood};
use crate::error::{Result, SvbrError};
use crate::manifest::RunManifest;
use crate::sampler::{AcceptanceReport, ChainState};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SVBRCOL1";
const FORMAT_VERSION: u32 = 1;

/// Chain-level metadata carried with every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesMeta {
    pub variant: String,
    pub fixed_delta: Option<f64>,
    pub likelihood: Likelihood,
    pub exposure_kind: ExposureKind,
    pub poly_degree: usize,
    pub radius_bounds: (f64, f64),
    pub n_obs: usize,
    pub n_locations: usize,
    pub n_covariates: usize,
    pub n_gamma: usize,
    pub n_knots: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub stream: u64,
    pub location_ids: Vec<u64>,
    pub acceptance: AcceptanceReport,
}

/// Thinned post-burn-in draws of all parameters and derived per-location
/// quantities, plus the pointwise log-likelihood rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub meta: SamplesMeta,
    /// draws x covariates
    pub beta: DMatrix<f64>,
    /// draws x (poly_degree + 1)
    pub eta: DMatrix<f64>,
    /// draws x radius coefficients (no columns for the fixed variant)
    pub gamma: DMatrix<f64>,
    /// draws x knots (columns only for the spatially-varying variant)
    pub phi_star: DMatrix<f64>,
    /// correlation decay per draw (empty unless spatially varying)
    pub rho: Vec<f64>,
    /// noise variance per draw (Gaussian likelihood only)
    pub sigma2: Vec<f64>,
    /// dispersion per draw (negative binomial only)
    pub r: Vec<f64>,
    /// draws x locations
    pub delta: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub exposure: DMatrix<f64>,
    /// total exposure impact z * theta, draws x locations
    pub impact: DMatrix<f64>,
    /// draws x outcome rows
    pub loglik: DMatrix<f64>,
    filled: usize,
}

impl PosteriorSamples {
    pub fn with_capacity(meta: SamplesMeta, n_draws: usize) -> Self {
        let m = meta.n_locations;
        let track_rho = meta.variant == "svbr";
        let track_sigma2 = meta.likelihood == Likelihood::Gaussian;
        let track_r = meta.likelihood == Likelihood::NegBinomial;
        PosteriorSamples {
            beta: DMatrix::zeros(n_draws, meta.n_covariates),
            eta: DMatrix::zeros(n_draws, meta.poly_degree + 1),
            gamma: DMatrix::zeros(n_draws, meta.n_gamma),
            phi_star: DMatrix::zeros(n_draws, meta.n_knots),
            rho: if track_rho {
                vec![0.0; n_draws]
            } else {
                Vec::new()
            },
            sigma2: if track_sigma2 {
                vec![0.0; n_draws]
            } else {
                Vec::new()
            },
            r: if track_r { vec![0.0; n_draws] } else { Vec::new() },
            delta: DMatrix::zeros(n_draws, m),
            theta: DMatrix::zeros(n_draws, m),
            exposure: DMatrix::zeros(n_draws, m),
            impact: DMatrix::zeros(n_draws, m),
            loglik: DMatrix::zeros(n_draws, meta.n_obs),
            meta,
            filled: 0,
        }
    }

    pub fn n_draws(&self) -> usize {
        self.filled
    }

    pub fn push_draw(&mut self, state: &ChainState, loglik: &[f64]) {
        let s = self.filled;
        for c in 0..self.beta.ncols() {
            self.beta[(s, c)] = state.beta[c];
        }
        for c in 0..self.eta.ncols() {
            self.eta[(s, c)] = state.eta[c];
        }
        for c in 0..self.gamma.ncols() {
            self.gamma[(s, c)] = state.gamma[c];
        }
        for c in 0..self.phi_star.ncols() {
            self.phi_star[(s, c)] = state.phi_star[c];
        }
        if !self.rho.is_empty() {
            self.rho[s] = state.rho;
        }
        if !self.sigma2.is_empty() {
            self.sigma2[s] = state.sigma2;
        }
        if !self.r.is_empty() {
            self.r[s] = state.r as f64;
        }
        for j in 0..self.delta.ncols() {
            self.delta[(s, j)] = state.radius.delta[j];
            self.theta[(s, j)] = state.radius.theta[j];
            self.exposure[(s, j)] = state.radius.exposure[j];
            self.impact[(s, j)] = state.radius.impact[j];
        }
        for i in 0..loglik.len() {
            self.loglik[(s, i)] = loglik[i];
        }
        self.filled += 1;
    }

    /// Concatenate draws of several chains (same model) for pooled
    /// summarization.
    pub fn pool(chains: &[PosteriorSamples]) -> Result<PosteriorSamples> {
        let first = chains
            .first()
            .ok_or_else(|| SvbrError::validation("no chains to pool"))?;
        let total: usize = chains.iter().map(PosteriorSamples::n_draws).sum();
        let mut pooled = PosteriorSamples::with_capacity(first.meta.clone(), total);
        let stack = |out: &mut DMatrix<f64>, parts: Vec<&DMatrix<f64>>| {
            let mut row = 0;
            for part in parts {
                for s in 0..part.nrows() {
                    for c in 0..part.ncols() {
                        out[(row, c)] = part[(s, c)];
                    }
                    row += 1;
                }
            }
        };
        stack(&mut pooled.beta, chains.iter().map(|c| &c.beta).collect());
        stack(&mut pooled.eta, chains.iter().map(|c| &c.eta).collect());
        stack(&mut pooled.gamma, chains.iter().map(|c| &c.gamma).collect());
        stack(
            &mut pooled.phi_star,
            chains.iter().map(|c| &c.phi_star).collect(),
        );
        stack(&mut pooled.delta, chains.iter().map(|c| &c.delta).collect());
        stack(&mut pooled.theta, chains.iter().map(|c| &c.theta).collect());
        stack(
            &mut pooled.exposure,
            chains.iter().map(|c| &c.exposure).collect(),
        );
        stack(
            &mut pooled.impact,
            chains.iter().map(|c| &c.impact).collect(),
        );
        stack(
            &mut pooled.loglik,
            chains.iter().map(|c| &c.loglik).collect(),
        );
        pooled.rho = chains.iter().flat_map(|c| c.rho.iter().copied()).collect();
        pooled.sigma2 = chains
            .iter()
            .flat_map(|c| c.sigma2.iter().copied())
            .collect();
        pooled.r = chains.iter().flat_map(|c| c.r.iter().copied()).collect();
        pooled.filled = total;
        Ok(pooled)
    }

    /// Scalar parameter columns in a stable order: coefficient blocks, then
    /// likelihood-specific parameters, then the correlation decay.
    pub fn parameter_columns(&self) -> Vec<(String, Vec<f64>)> {
        let mut cols = Vec::new();
        for c in 0..self.beta.ncols() {
            cols.push((format!("beta_{c}"), self.beta.column(c).iter().copied().collect()));
        }
        for c in 0..self.eta.ncols() {
            cols.push((format!("eta_{c}"), self.eta.column(c).iter().copied().collect()));
        }
        for c in 0..self.gamma.ncols() {
            cols.push((
                format!("gamma_{c}"),
                self.gamma.column(c).iter().copied().collect(),
            ));
        }
        for c in 0..self.phi_star.ncols() {
            cols.push((
                format!("phi_{c}"),
                self.phi_star.column(c).iter().copied().collect(),
            ));
        }
        if !self.sigma2.is_empty() {
            cols.push(("sigma2".to_string(), self.sigma2.clone()));
        }
        if !self.r.is_empty() {
            cols.push(("r".to_string(), self.r.clone()));
        }
        if !self.rho.is_empty() {
            cols.push(("rho".to_string(), self.rho.clone()));
        }
        cols
    }

    fn location_columns(&self) -> Vec<(String, Vec<f64>)> {
        let mut cols = Vec::new();
        for (j, id) in self.meta.location_ids.iter().enumerate() {
            cols.push((
                format!("delta_loc{id}"),
                self.delta.column(j).iter().copied().collect(),
            ));
            cols.push((
                format!("theta_loc{id}"),
                self.theta.column(j).iter().copied().collect(),
            ));
            cols.push((
                format!("z_loc{id}"),
                self.exposure.column(j).iter().copied().collect(),
            ));
            cols.push((
                format!("impact_loc{id}"),
                self.impact.column(j).iter().copied().collect(),
            ));
        }
        cols
    }

    fn all_sample_columns(&self) -> Vec<(String, Vec<f64>)> {
        let mut cols = self.parameter_columns();
        cols.extend(self.location_columns());
        cols
    }

    fn loglik_columns(&self) -> Vec<(String, Vec<f64>)> {
        (0..self.loglik.ncols())
            .map(|i| {
                (
                    format!("loglik_{i}"),
                    self.loglik.column(i).iter().copied().collect(),
                )
            })
            .collect()
    }

    /// Write the parameter/derived-draw artifact.
    pub fn write_samples(&self, path: &Path, manifest: &RunManifest) -> Result<()> {
        write_columns(path, manifest, &self.meta, &self.all_sample_columns())
    }

    /// Write the pointwise log-likelihood artifact.
    pub fn write_loglik(&self, path: &Path, manifest: &RunManifest) -> Result<()> {
        write_columns(path, manifest, &self.meta, &self.loglik_columns())
    }

    /// Rebuild from the pair of artifacts written by `write_samples` and
    /// `write_loglik`.
    pub fn read(samples_path: &Path, loglik_path: Option<&Path>) -> Result<PosteriorSamples> {
        let (_, meta, columns) = read_columns(samples_path)?;
        let n_draws = columns.first().map_or(0, |(_, v)| v.len());
        let mut out = PosteriorSamples::with_capacity(meta.clone(), n_draws);
        out.filled = n_draws;
        let lookup: std::collections::HashMap<&str, &Vec<f64>> = columns
            .iter()
            .map(|(name, values)| (name.as_str(), values))
            .collect();
        let fill_matrix = |target: &mut DMatrix<f64>, names: Vec<String>| -> Result<()> {
            for (c, name) in names.iter().enumerate() {
                let col = lookup.get(name.as_str()).ok_or_else(|| {
                    SvbrError::validation(format!("samples file missing column '{name}'"))
                })?;
                if col.len() != n_draws {
                    return Err(SvbrError::validation("ragged sample columns"));
                }
                for s in 0..n_draws {
                    target[(s, c)] = col[s];
                }
            }
            Ok(())
        };
        fill_matrix(
            &mut out.beta,
            (0..meta.n_covariates).map(|c| format!("beta_{c}")).collect(),
        )?;
        fill_matrix(
            &mut out.eta,
            (0..=meta.poly_degree).map(|c| format!("eta_{c}")).collect(),
        )?;
        fill_matrix(
            &mut out.gamma,
            (0..meta.n_gamma).map(|c| format!("gamma_{c}")).collect(),
        )?;
        fill_matrix(
            &mut out.phi_star,
            (0..meta.n_knots).map(|c| format!("phi_{c}")).collect(),
        )?;
        let ids = meta.location_ids.clone();
        fill_matrix(
            &mut out.delta,
            ids.iter().map(|id| format!("delta_loc{id}")).collect(),
        )?;
        fill_matrix(
            &mut out.theta,
            ids.iter().map(|id| format!("theta_loc{id}")).collect(),
        )?;
        fill_matrix(
            &mut out.exposure,
            ids.iter().map(|id| format!("z_loc{id}")).collect(),
        )?;
        fill_matrix(
            &mut out.impact,
            ids.iter().map(|id| format!("impact_loc{id}")).collect(),
        )?;
        let grab = |name: &str| -> Vec<f64> {
            lookup.get(name).map(|v| (*v).clone()).unwrap_or_default()
        };
        out.rho = grab("rho");
        out.sigma2 = grab("sigma2");
        out.r = grab("r");
        if let Some(ll_path) = loglik_path {
            let (_, ll_meta, ll_columns) = read_columns(ll_path)?;
            if ll_meta.n_obs != meta.n_obs {
                return Err(SvbrError::validation(
                    "log-likelihood artifact does not match samples artifact",
                ));
            }
            for (i, (name, col)) in ll_columns.iter().enumerate() {
                if name != &format!("loglik_{i}") || col.len() != n_draws {
                    return Err(SvbrError::validation("malformed log-likelihood artifact"));
                }
                for s in 0..n_draws {
                    out.loglik[(s, i)] = col[s];
                }
            }
        }
        Ok(out)
    }

    /// CSV export of the sample columns (one row per stored draw).
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let columns = self.all_sample_columns();
        let mut writer = csv::Writer::from_path(path)?;
        let header: Vec<&str> = std::iter::once("draw")
            .chain(columns.iter().map(|(name, _)| name.as_str()))
            .collect();
        writer.write_record(&header)?;
        for s in 0..self.n_draws() {
            let mut row = vec![s.to_string()];
            for (_, values) in &columns {
                row.push(format!("{:?}", values[s]));
            }
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    manifest: RunManifest,
    meta: SamplesMeta,
}

/// Write a named-column artifact with the deterministic manifest embedded.
pub fn write_columns(
    path: &Path,
    manifest: &RunManifest,
    meta: &SamplesMeta,
    columns: &[(String, Vec<f64>)],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(&Header {
        manifest: manifest.deterministic(),
        meta: meta.clone(),
    })?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(columns.len() as u32).to_le_bytes())?;
    for (name, values) in columns {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(values.len() as u64).to_le_bytes())?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a named-column artifact.
pub fn read_columns(path: &Path) -> Result<(RunManifest, SamplesMeta, Vec<(String, Vec<f64>)>)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SvbrError::validation(format!(
            "{} is not a sample artifact (bad magic)",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(SvbrError::validation(format!(
            "unsupported artifact version {version}"
        )));
    }
    r.read_exact(&mut u32buf)?;
    let header_len = u32::from_le_bytes(u32buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    r.read_exact(&mut u32buf)?;
    let n_cols = u32::from_le_bytes(u32buf) as usize;
    let mut columns = Vec::with_capacity(n_cols);
    for _ in 0..n_cols {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| SvbrError::validation("non-utf8 column name"))?;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let rows = u64::from_le_bytes(u64buf) as usize;
        let mut values = Vec::with_capacity(rows);
        let mut vbuf = [0u8; 8];
        for _ in 0..rows {
            r.read_exact(&mut vbuf)?;
            values.push(f64::from_le_bytes(vbuf));
        }
        columns.push((name, values));
    }
    Ok((header.manifest, header.meta, columns))
}
