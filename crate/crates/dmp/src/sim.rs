//! Seeded Monte Carlo harness: Gram-matrix ensembles under the null and
//! under cluster/spiked alternatives, plus the ECDF, power and ROC
//! experiments built on the standardized statistics.
//!
//! Determinism contract: every replicate draws from an independent
//! counter-based substream of the master seed (stream = replicate index), and
//! entries are generated in a fixed row-major order, so results are bitwise
//! reproducible regardless of blocking or thread count.

use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::{Accum, Mat, MatRef, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{DmpError, Result};
use crate::law::PopulationSpectrum;
use crate::stats::{self, NullCalibration, TestKind, TestParams};

/// Guard against absurd problem sizes: p * n entries processed per replicate.
pub const DIM_CAP: u128 = 1 << 30;

const BLOCK: usize = 256;

/// Standardized entry law of the raw matrix entries (before the (pn)^{-1/4}
/// scaling): mean 0, variance 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntryLaw {
    Gaussian,
    /// Takes value `v_plus` with probability `p_plus`, else `v_minus`.
    TwoPoint {
        p_plus: f64,
        v_plus: f64,
        v_minus: f64,
    },
}

impl EntryLaw {
    /// Two-point law with one free parameter v > 0: values v and -1/v with
    /// the unique probabilities giving mean 0 and variance 1.
    pub fn two_point(v: f64) -> Result<Self> {
        if !(v > 0.0) || !v.is_finite() {
            return Err(DmpError::InvalidArgument(format!("two-point v = {v}")));
        }
        Ok(EntryLaw::TwoPoint {
            p_plus: 1.0 / (1.0 + v * v),
            v_plus: v,
            v_minus: -1.0 / v,
        })
    }

    /// Two-point law with kappa4 = -3/2: (1/3) delta_{sqrt 2} + (2/3) delta_{-1/sqrt 2}.
    pub fn two_point_neg() -> Self {
        Self::two_point(2f64.sqrt()).unwrap()
    }

    /// Two-point law with kappa4 = 2: v = sqrt(2) - 1.
    pub fn two_point_pos() -> Self {
        Self::two_point(2f64.sqrt() - 1.0).unwrap()
    }

    /// Fully explicit two-point law; must already be standardized.
    pub fn two_point_custom(p_plus: f64, v_plus: f64, v_minus: f64) -> Result<Self> {
        if !(p_plus > 0.0 && p_plus < 1.0) {
            return Err(DmpError::InvalidArgument(format!("p_plus = {p_plus}")));
        }
        let mean = p_plus * v_plus + (1.0 - p_plus) * v_minus;
        let var = p_plus * v_plus * v_plus + (1.0 - p_plus) * v_minus * v_minus;
        if mean.abs() > 1e-12 || (var - 1.0).abs() > 1e-12 {
            return Err(DmpError::InvalidArgument(format!(
                "two-point law not standardized: mean {mean:.3e}, variance {var}"
            )));
        }
        Ok(EntryLaw::TwoPoint {
            p_plus,
            v_plus,
            v_minus,
        })
    }

    /// Exact fourth cumulant of the standardized law.
    pub fn kappa4(&self) -> f64 {
        match *self {
            EntryLaw::Gaussian => 0.0,
            EntryLaw::TwoPoint {
                p_plus,
                v_plus,
                v_minus,
            } => p_plus * v_plus.powi(4) + (1.0 - p_plus) * v_minus.powi(4) - 3.0,
        }
    }

    /// Parses "gaussian", "twopoint_neg", "twopoint_pos" or "twopoint:v".
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(EntryLaw::Gaussian),
            "twopoint_neg" => Ok(EntryLaw::two_point_neg()),
            "twopoint_pos" => Ok(EntryLaw::two_point_pos()),
            other => {
                if let Some(v) = other.strip_prefix("twopoint:") {
                    let v: f64 = v.parse().map_err(|_| {
                        DmpError::InvalidArgument(format!("bad two-point parameter '{v}'"))
                    })?;
                    Self::two_point(v)
                } else {
                    Err(DmpError::InvalidArgument(format!(
                        "unknown entry law '{other}'"
                    )))
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            EntryLaw::Gaussian => "gaussian".into(),
            EntryLaw::TwoPoint { v_plus, .. } => {
                if (v_plus - 2f64.sqrt()).abs() < 1e-12 {
                    "twopoint_neg".into()
                } else if (v_plus - (2f64.sqrt() - 1.0)).abs() < 1e-12 {
                    "twopoint_pos".into()
                } else {
                    format!("twopoint:{v_plus}")
                }
            }
        }
    }

    fn fill(&self, rng: &mut ChaCha8Rng, buf: &mut [f64]) {
        match *self {
            EntryLaw::Gaussian => {
                for v in buf.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            EntryLaw::TwoPoint {
                p_plus,
                v_plus,
                v_minus,
            } => {
                for v in buf.iter_mut() {
                    *v = if rng.random::<f64>() < p_plus {
                        v_plus
                    } else {
                        v_minus
                    };
                }
            }
        }
    }
}

/// Departure from Sigma = I used by the power and ROC experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlternativeSpec {
    /// Spectrum a delta_{1+eps} + (1-a) delta_1.
    Cluster { a: f64, epsilon: f64 },
    /// Sigma = I plus eps on r coordinates (finite-rank spike).
    Spiked { r: usize, epsilon: f64 },
}

impl AlternativeSpec {
    pub fn epsilon(&self) -> f64 {
        match *self {
            AlternativeSpec::Cluster { epsilon, .. } => epsilon,
            AlternativeSpec::Spiked { epsilon, .. } => epsilon,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            AlternativeSpec::Cluster { a, epsilon } => {
                if !(a > 0.0 && a < 1.0) || !(epsilon >= 0.0) || !epsilon.is_finite() {
                    return Err(DmpError::InvalidArgument(format!(
                        "cluster alternative a = {a}, epsilon = {epsilon}"
                    )));
                }
            }
            AlternativeSpec::Spiked { epsilon, .. } => {
                if !(epsilon >= 0.0) || !epsilon.is_finite() {
                    return Err(DmpError::InvalidArgument(format!(
                        "spiked alternative epsilon = {epsilon}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sigma_diagonal(&self, p: usize) -> Result<Vec<f64>> {
        self.validate()?;
        match *self {
            AlternativeSpec::Cluster { a, epsilon } => {
                let top = ((a * p as f64).round() as usize).min(p);
                let mut d = vec![1.0 + epsilon; top];
                d.resize(p, 1.0);
                Ok(d)
            }
            AlternativeSpec::Spiked { r, epsilon } => {
                if r > p {
                    return Err(DmpError::InvalidArgument(format!(
                        "spike count {r} exceeds dimension {p}"
                    )));
                }
                let mut d = vec![1.0 + epsilon; r];
                d.resize(p, 1.0);
                Ok(d)
            }
        }
    }
}

/// Population covariance used when sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaSpec {
    Identity,
    /// Atomic spectrum realized as a block-diagonal matrix with block sizes
    /// chosen by largest remainder, so the empirical weights match exactly.
    Spectrum(PopulationSpectrum),
    /// Explicit diagonal of length p.
    Diagonal(Vec<f64>),
    Alternative(AlternativeSpec),
}

/// One Monte Carlo ensemble: n x n Gram matrices Q = X^T Sigma X with X of
/// size p x n, p = round(phi n), entries scaled by (pn)^{-1/4}.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub n: usize,
    pub phi: f64,
    pub sigma: SigmaSpec,
    pub dist: EntryLaw,
    pub seed: u64,
    pub reps: usize,
}

impl EnsembleConfig {
    pub fn p(&self) -> Result<usize> {
        if self.n == 0 || !self.phi.is_finite() || self.phi <= 0.0 {
            return Err(DmpError::InvalidArgument(format!(
                "n = {}, phi = {}",
                self.n, self.phi
            )));
        }
        let p = (self.phi * self.n as f64).round() as usize;
        if p < self.n {
            return Err(DmpError::UnsupportedRegime {
                phi: p as f64 / self.n as f64,
            });
        }
        if (p as u128) * (self.n as u128) > DIM_CAP {
            return Err(DmpError::InvalidArgument(format!(
                "p * n = {} exceeds the dimension cap {DIM_CAP}",
                (p as u128) * (self.n as u128)
            )));
        }
        Ok(p)
    }

    pub fn sigma_diagonal(&self) -> Result<Vec<f64>> {
        let p = self.p()?;
        match &self.sigma {
            SigmaSpec::Identity => Ok(vec![1.0; p]),
            SigmaSpec::Diagonal(d) => {
                if d.len() != p {
                    return Err(DmpError::InvalidArgument(format!(
                        "diagonal length {} != p = {p}",
                        d.len()
                    )));
                }
                if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(DmpError::InvalidSpectrum(
                        "diagonal entries must be positive".into(),
                    ));
                }
                Ok(d.clone())
            }
            SigmaSpec::Spectrum(sp) => {
                if (sp.phi() - self.phi).abs() > 1e-9 * self.phi {
                    return Err(DmpError::InvalidArgument(format!(
                        "spectrum phi = {} disagrees with config phi = {}",
                        sp.phi(),
                        self.phi
                    )));
                }
                Ok(spectrum_diagonal(sp, p))
            }
            SigmaSpec::Alternative(alt) => alt.sigma_diagonal(p),
        }
    }
}

/// Block sizes for an atomic spectrum by largest remainder: floors first,
/// then the leftover slots go to the largest fractional parts.
fn spectrum_diagonal(sp: &PopulationSpectrum, p: usize) -> Vec<f64> {
    let atoms = sp.atoms();
    let mut counts: Vec<usize> = Vec::with_capacity(atoms.len());
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(atoms.len());
    let mut used = 0usize;
    for (k, &(_, w)) in atoms.iter().enumerate() {
        let target = w * p as f64;
        let base = target.floor() as usize;
        counts.push(base);
        used += base;
        fracs.push((target - base as f64, k));
    }
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    for i in 0..p.saturating_sub(used) {
        counts[fracs[i % fracs.len()].1] += 1;
    }
    let mut d = Vec::with_capacity(p);
    for (k, &(sig, _)) in atoms.iter().enumerate() {
        d.extend(std::iter::repeat(sig).take(counts[k]));
    }
    d
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Raw p x n matrix of one replicate (row-major): i.i.d. standardized entries
/// scaled by (pn)^{-1/4}, before any Sigma weighting. Deterministic in
/// (seed, replicate).
pub fn sample_matrix(cfg: &EnsembleConfig, replicate: usize) -> Result<Vec<f64>> {
    let p = cfg.p()?;
    let n = cfg.n;
    let scale = (p as f64 * n as f64).powf(-0.25);
    let mut rng = replicate_rng(cfg.seed, replicate);
    let mut out = vec![0.0; p * n];
    cfg.dist.fill(&mut rng, &mut out);
    for v in &mut out {
        *v *= scale;
    }
    Ok(out)
}

fn sample_gram(cfg: &EnsembleConfig, replicate: usize, sigma: &[f64]) -> Result<Mat<f64>> {
    let p = cfg.p()?;
    let n = cfg.n;
    let scale = (p as f64 * n as f64).powf(-0.25);
    let mut rng = replicate_rng(cfg.seed, replicate);
    let mut q = Mat::<f64>::zeros(n, n);
    let mut buf = vec![0.0; BLOCK.min(p) * n];
    let mut i0 = 0;
    while i0 < p {
        let rows = BLOCK.min(p - i0);
        let b = &mut buf[..rows * n];
        cfg.dist.fill(&mut rng, b);
        for r in 0..rows {
            let f = scale * sigma[i0 + r].sqrt();
            for v in &mut b[r * n..(r + 1) * n] {
                *v *= f;
            }
        }
        // the row-major (rows x n) block, read column-major, is its transpose
        let v = MatRef::from_column_major_slice(&b[..], n, rows);
        triangular::matmul(
            q.as_mut(),
            BlockStructure::TriangularLower,
            Accum::Add,
            v,
            BlockStructure::Rectangular,
            v.transpose(),
            BlockStructure::Rectangular,
            1.0,
            Par::Seq,
        );
        i0 += rows;
    }
    Ok(q)
}

/// Ascending eigenvalues of the scaled Gram matrix of one replicate. Only the
/// n x n Gram matrix is formed; the p x n data matrix is generated and folded
/// in blockwise.
pub fn sample_eigenvalues(cfg: &EnsembleConfig, replicate: usize) -> Result<Vec<f64>> {
    let sigma = cfg.sigma_diagonal()?;
    lower_eigenvalues(sample_gram(cfg, replicate, &sigma)?)
}

/// scale * D^T D (n x n, lower triangle filled) for a user-supplied matrix.
/// `rows_are_variables` says whether the row-major `data` is the p x n model
/// matrix D itself or its transpose.
pub(crate) fn accumulate_gram(
    data: &[f64],
    nrows: usize,
    ncols: usize,
    rows_are_variables: bool,
    scale: f64,
) -> Mat<f64> {
    if rows_are_variables {
        let (p, n) = (nrows, ncols);
        let mut q = Mat::<f64>::zeros(n, n);
        let mut i0 = 0;
        while i0 < p {
            let rows = BLOCK.min(p - i0);
            let v = MatRef::from_column_major_slice(&data[i0 * n..(i0 + rows) * n], n, rows);
            triangular::matmul(
                q.as_mut(),
                BlockStructure::TriangularLower,
                Accum::Add,
                v,
                BlockStructure::Rectangular,
                v.transpose(),
                BlockStructure::Rectangular,
                scale,
                Par::Seq,
            );
            i0 += rows;
        }
        q
    } else {
        // row-major n x p read column-major is exactly the p x n model matrix
        let (n, p) = (nrows, ncols);
        let d = MatRef::from_column_major_slice(data, p, n);
        let mut q = Mat::<f64>::zeros(n, n);
        let mut i0 = 0;
        while i0 < p {
            let rows = BLOCK.min(p - i0);
            let sub = d.submatrix(i0, 0, rows, n);
            triangular::matmul(
                q.as_mut(),
                BlockStructure::TriangularLower,
                Accum::Add,
                sub.transpose(),
                BlockStructure::Rectangular,
                sub,
                BlockStructure::Rectangular,
                scale,
                Par::Seq,
            );
            i0 += rows;
        }
        q
    }
}

pub(crate) fn lower_eigenvalues(q: Mat<f64>) -> Result<Vec<f64>> {
    let mut ev = q
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| DmpError::NonConvergence(format!("eigenvalue solve failed: {e:?}")))?;
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ev)
}

// ---------------------------------------------------------------------------
// Distribution distances and ROC
// ---------------------------------------------------------------------------

/// Two-sided Kolmogorov-Smirnov distance between a sample and the standard
/// normal.
pub fn ks_to_normal(z: &[f64]) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut s = z.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = s.len() as f64;
    let mut ks = 0.0f64;
    for (i, &v) in s.iter().enumerate() {
        let f = normal.cdf(v);
        ks = ks.max(((i + 1) as f64 / n - f).abs());
        ks = ks.max((i as f64 / n - f).abs());
    }
    ks
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let mut ks = 0.0f64;
    let count_le = |s: &[f64], v: f64| s.partition_point(|&x| x <= v) as f64;
    for &v in sa.iter().chain(sb.iter()) {
        let fa = count_le(&sa, v) / sa.len() as f64;
        let fb = count_le(&sb, v) / sb.len() as f64;
        ks = ks.max((fa - fb).abs());
    }
    ks
}

/// ROC curve and AUC from score samples (higher score = more alternative).
/// Thresholds sweep the pooled scores; ties are handled as one group, which
/// makes the trapezoid AUC equal to the tie-corrected rank statistic.
pub fn roc_curve(null_scores: &[f64], alt_scores: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if null_scores.is_empty() || alt_scores.is_empty() {
        return Err(DmpError::InvalidArgument("empty score vector".into()));
    }
    let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
    if !finite(null_scores) || !finite(alt_scores) {
        return Err(DmpError::InvalidArgument("non-finite score".into()));
    }
    let lo = null_scores
        .iter()
        .chain(alt_scores)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = null_scores
        .iter()
        .chain(alt_scores)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(DmpError::InvalidArgument(
            "all scores identical; ROC curve undefined".into(),
        ));
    }
    let mut pooled: Vec<(f64, bool)> = null_scores
        .iter()
        .map(|&s| (s, false))
        .chain(alt_scores.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let nn = null_scores.len() as f64;
    let na = alt_scores.len() as f64;
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < pooled.len() {
        let s = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == s {
            if pooled[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        fpr.push(fp as f64 / nn);
        tpr.push(tp as f64 / na);
    }
    let mut auc = 0.0;
    for k in 1..fpr.len() {
        auc += (fpr[k] - fpr[k - 1]) * (tpr[k] + tpr[k - 1]) / 2.0;
    }
    Ok((fpr, tpr, auc))
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Null-calibration experiment: replicate z-scores for each statistic plus
/// the Kolmogorov-Smirnov distance to the standard normal. KS is meaningful
/// from a few hundred replicates up.
#[derive(Debug, Clone)]
pub struct EcdfResult {
    pub kind: TestKind,
    /// Standardized values in replicate order.
    pub z: Vec<f64>,
    pub ks: f64,
}

fn z_table(
    cfg: &EnsembleConfig,
    kinds: &[TestKind],
    params: &TestParams,
    stream_base: usize,
    sigma: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if kinds.is_empty() {
        return Err(DmpError::InvalidArgument("no statistics requested".into()));
    }
    let kappa4 = cfg.dist.kappa4();
    let cals: Vec<NullCalibration> = kinds
        .iter()
        .map(|&k| NullCalibration::new(k, cfg.n, cfg.phi, kappa4, params))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let ev = lower_eigenvalues(sample_gram(cfg, stream_base + r, sigma)?)?;
            kinds
                .iter()
                .zip(&cals)
                .map(|(&k, cal)| Ok(cal.standardize(stats::stat_raw(&ev, k, cfg.phi, params)?)))
                .collect()
        })
        .collect::<Result<_>>()?;
    // transpose to per-kind vectors
    Ok((0..kinds.len())
        .map(|j| rows.iter().map(|row| row[j]).collect())
        .collect())
}

pub fn ecdf_experiment(
    cfg: &EnsembleConfig,
    kinds: &[TestKind],
    params: &TestParams,
) -> Result<Vec<EcdfResult>> {
    let sigma = cfg.sigma_diagonal()?;
    let table = z_table(cfg, kinds, params, 0, &sigma)?;
    Ok(kinds
        .iter()
        .zip(table)
        .map(|(&kind, z)| {
            let ks = ks_to_normal(&z);
            EcdfResult { kind, z, ks }
        })
        .collect())
}

/// Two-sample KS between the z-scores of two configurations (same statistics,
/// typically different entry laws): the local statistics should agree, the
/// raw global ones should not when kappa4 differs.
pub fn ecdf_cross(
    cfg_a: &EnsembleConfig,
    cfg_b: &EnsembleConfig,
    kinds: &[TestKind],
    params: &TestParams,
) -> Result<Vec<(TestKind, f64)>> {
    let ra = ecdf_experiment(cfg_a, kinds, params)?;
    let rb = ecdf_experiment(cfg_b, kinds, params)?;
    Ok(ra
        .into_iter()
        .zip(rb)
        .map(|(a, b)| (a.kind, ks_two_sample(&a.z, &b.z)))
        .collect())
}

/// One row of the power table.
#[derive(Debug, Clone)]
pub struct PowerRow {
    pub kind: TestKind,
    pub epsilon: f64,
    pub rejections: usize,
    pub reps: usize,
    pub rate: f64,
}

/// Empirical rejection rate of the level-alpha two-sided tests across a sweep
/// of alternatives. Standardization always uses the exact null calibration
/// (Sigma = I with the configured entry law); `cfg.sigma` is ignored.
pub fn power_experiment(
    cfg: &EnsembleConfig,
    alternatives: &[AlternativeSpec],
    kinds: &[TestKind],
    alpha: f64,
    params: &TestParams,
) -> Result<Vec<PowerRow>> {
    use statrs::distribution::{ContinuousCDF, Normal};
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DmpError::InvalidArgument(format!("alpha = {alpha}")));
    }
    if alternatives.is_empty() {
        return Err(DmpError::InvalidArgument("no alternatives".into()));
    }
    let p = cfg.p()?;
    let threshold = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - alpha / 2.0);
    let mut rows = Vec::with_capacity(alternatives.len() * kinds.len());
    for (ai, alt) in alternatives.iter().enumerate() {
        let sigma = alt.sigma_diagonal(p)?;
        let table = z_table(cfg, kinds, params, ai * cfg.reps, &sigma)?;
        for (j, &kind) in kinds.iter().enumerate() {
            let rejections = table[j].iter().filter(|z| z.abs() > threshold).count();
            rows.push(PowerRow {
                kind,
                epsilon: alt.epsilon(),
                rejections,
                reps: cfg.reps,
                rate: rejections as f64 / cfg.reps as f64,
            });
        }
    }
    Ok(rows)
}

/// ROC of |z| as a detector of the alternative.
#[derive(Debug, Clone)]
pub struct RocResult {
    pub kind: TestKind,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// ROC/AUC experiment: scores are |z| standardized by the null calibration of
/// the null configuration. The two configurations must share n, phi and
/// replicate count.
pub fn roc_experiment(
    null_cfg: &EnsembleConfig,
    alt_cfg: &EnsembleConfig,
    kinds: &[TestKind],
    params: &TestParams,
) -> Result<Vec<RocResult>> {
    if null_cfg.n != alt_cfg.n || (null_cfg.phi - alt_cfg.phi).abs() > 1e-12 {
        return Err(DmpError::InvalidArgument(
            "null and alternative configurations must share n and phi".into(),
        ));
    }
    if null_cfg.reps != alt_cfg.reps {
        return Err(DmpError::InvalidArgument(
            "null and alternative configurations must share the replicate count".into(),
        ));
    }
    let sig_null = null_cfg.sigma_diagonal()?;
    let sig_alt = alt_cfg.sigma_diagonal()?;
    let znull = z_table(null_cfg, kinds, params, 0, &sig_null)?;
    let zalt = z_table(alt_cfg, kinds, params, 0, &sig_alt)?;
    let mut out = Vec::with_capacity(kinds.len());
    for (j, &kind) in kinds.iter().enumerate() {
        let s0: Vec<f64> = znull[j].iter().map(|z| z.abs()).collect();
        let s1: Vec<f64> = zalt[j].iter().map(|z| z.abs()).collect();
        let (fpr, tpr, auc) = roc_curve(&s0, &s1)?;
        out.push(RocResult {
            kind,
            fpr,
            tpr,
            auc,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entry_law_cumulants_exact() {
        assert_eq!(EntryLaw::Gaussian.kappa4(), 0.0);
        assert_abs_diff_eq!(EntryLaw::two_point_neg().kappa4(), -1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(EntryLaw::two_point_pos().kappa4(), 2.0, epsilon = 1e-13);
        // law structure of the kappa4 = -3/2 case
        if let EntryLaw::TwoPoint {
            p_plus,
            v_plus,
            v_minus,
        } = EntryLaw::two_point_neg()
        {
            assert_abs_diff_eq!(p_plus, 1.0 / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(v_plus, 2f64.sqrt(), epsilon = 1e-15);
            assert_abs_diff_eq!(v_minus, -1.0 / 2f64.sqrt(), epsilon = 1e-15);
        } else {
            panic!("wrong variant");
        }
    }

    #[test]
    fn custom_two_point_must_be_standardized() {
        assert!(EntryLaw::two_point_custom(0.5, 1.0, -1.0).is_ok());
        assert!(EntryLaw::two_point_custom(0.5, 1.0, -0.9).is_err());
        assert!(EntryLaw::two_point_custom(0.3, 1.0, -1.0).is_err());
        assert!(EntryLaw::parse("twopoint:1.0").is_ok());
        assert!(EntryLaw::parse("cauchy").is_err());
        assert_eq!(EntryLaw::parse("gaussian").unwrap(), EntryLaw::Gaussian);
    }

    #[test]
    fn sample_matrix_is_deterministic_and_standardized() {
        let cfg = EnsembleConfig {
            n: 40,
            phi: 50.0,
            sigma: SigmaSpec::Identity,
            dist: EntryLaw::Gaussian,
            seed: 9,
            reps: 1,
        };
        let a = sample_matrix(&cfg, 3).unwrap();
        let b = sample_matrix(&cfg, 3).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = sample_matrix(&cfg, 4).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x != y));
        // moments: p = 2000, n = 40, pn = 80000 entries
        let pn = a.len() as f64;
        let scale = pn.powf(-0.25);
        let mean = a.iter().sum::<f64>() / pn;
        assert!(mean.abs() <= 4.0 * scale / pn.sqrt(), "mean {mean}");
        let var = a.iter().map(|v| v * v).sum::<f64>() / pn;
        assert!((var / (scale * scale) - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn gram_eigenvalues_match_naive_product() {
        let cfg = EnsembleConfig {
            n: 4,
            phi: 150.0, // p = 600 spans multiple accumulation blocks
            sigma: SigmaSpec::Alternative(AlternativeSpec::Cluster {
                a: 0.5,
                epsilon: 0.5,
            }),
            dist: EntryLaw::two_point_neg(),
            seed: 5,
            reps: 1,
        };
        let p = cfg.p().unwrap();
        let x = sample_matrix(&cfg, 0).unwrap();
        let sigma = cfg.sigma_diagonal().unwrap();
        let n = cfg.n;
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += sigma[k] * x[k * n + i] * x[k * n + j];
                }
                q[i * n + j] = acc;
            }
        }
        // naive symmetric 4x4 eigenvalues via faer for comparison
        let qm = faer::Mat::<f64>::from_fn(n, n, |i, j| q[i * n + j]);
        let mut naive = qm.self_adjoint_eigenvalues(Side::Lower).unwrap();
        naive.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let fast = sample_eigenvalues(&cfg, 0).unwrap();
        for (a, b) in naive.iter().zip(&fast) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn user_data_orientations_agree() {
        // row-major p x n versus its transpose given as samples-in-rows
        let (p, n) = (9, 4);
        let data: Vec<f64> = (0..p * n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut t = vec![0.0; p * n];
        for i in 0..p {
            for j in 0..n {
                t[j * p + i] = data[i * n + j];
            }
        }
        let e1 = stats::gram_eigenvalues(&data, p, n, true).unwrap();
        let e2 = stats::gram_eigenvalues(&t, n, p, false).unwrap();
        for (a, b) in e1.iter().zip(&e2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        // wide data in the samples orientation violates p >= n
        assert!(stats::gram_eigenvalues(&data, n, p, false).is_ok());
        assert!(matches!(
            stats::gram_eigenvalues(&data, p, n, false),
            Err(DmpError::UnsupportedRegime { .. })
        ));
    }

    #[test]
    fn spectrum_diagonal_largest_remainder() {
        let sp = PopulationSpectrum::new(&[(15.0, 0.5), (1.0, 0.5)], 100.0).unwrap();
        let d = spectrum_diagonal(&sp, 7);
        // atoms sorted descending: 15 gets the extra slot (equal remainders,
        // first atom wins deterministically)
        assert_eq!(d.iter().filter(|&&v| v == 15.0).count(), 4);
        assert_eq!(d.iter().filter(|&&v| v == 1.0).count(), 3);
        let sp2 = PopulationSpectrum::new(&[(8.0, 0.4), (1.0, 0.6)], 30.0).unwrap();
        let d2 = spectrum_diagonal(&sp2, 10);
        assert_eq!(d2.iter().filter(|&&v| v == 8.0).count(), 4);
        assert_eq!(d2.len(), 10);
    }

    #[test]
    fn alternative_diagonals() {
        let c = AlternativeSpec::Cluster {
            a: 0.5,
            epsilon: 0.3,
        };
        let d = c.sigma_diagonal(10).unwrap();
        assert_eq!(d.iter().filter(|&&v| v == 1.3).count(), 5);
        let s = AlternativeSpec::Spiked { r: 2, epsilon: 4.0 };
        let d = s.sigma_diagonal(6).unwrap();
        assert_eq!(d, vec![5.0, 5.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(AlternativeSpec::Spiked { r: 9, epsilon: 1.0 }
            .sigma_diagonal(6)
            .is_err());
        assert!(AlternativeSpec::Cluster {
            a: 1.5,
            epsilon: 0.1
        }
        .sigma_diagonal(6)
        .is_err());
    }

    #[test]
    fn ks_helpers_hand_values() {
        // single point at 0: F ranges over [0,1], Phi(0)=0.5
        assert_abs_diff_eq!(ks_to_normal(&[0.0]), 0.5, epsilon = 1e-12);
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        let b = [10.0, 20.0, 30.0];
        assert_abs_diff_eq!(ks_two_sample(&a, &b), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn roc_curve_pins() {
        // perfect separation
        let (_, _, auc) = roc_curve(&[0.1, 0.2], &[0.9, 1.1]).unwrap();
        assert_eq!(auc, 1.0);
        // identical samples: exact 0.5 through tie handling
        let s = [0.3, 0.7, 1.5];
        let (_, _, auc) = roc_curve(&s, &s).unwrap();
        assert_abs_diff_eq!(auc, 0.5, epsilon = 1e-15);
        // degenerate scores error
        assert!(roc_curve(&[1.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn ecdf_experiment_is_deterministic() {
        let cfg = EnsembleConfig {
            n: 32,
            phi: 4.0,
            sigma: SigmaSpec::Identity,
            dist: EntryLaw::Gaussian,
            seed: 42,
            reps: 6,
        };
        let params = TestParams::defaults(cfg.n);
        let kinds = [TestKind::T1g, TestKind::T2g];
        let a = ecdf_experiment(&cfg, &kinds, &params).unwrap();
        let b = ecdf_experiment(&cfg, &kinds, &params).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.kind, y.kind);
            assert!(x
                .z
                .iter()
                .zip(&y.z)
                .all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn power_rows_cover_sweep() {
        let cfg = EnsembleConfig {
            n: 24,
            phi: 4.0,
            sigma: SigmaSpec::Identity,
            dist: EntryLaw::Gaussian,
            seed: 1,
            reps: 4,
        };
        let params = TestParams::defaults(cfg.n);
        let alts = [
            AlternativeSpec::Cluster {
                a: 0.5,
                epsilon: 0.0,
            },
            AlternativeSpec::Cluster {
                a: 0.5,
                epsilon: 0.4,
            },
        ];
        let rows =
            power_experiment(&cfg, &alts, &[TestKind::T1g], 0.05, &params).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].epsilon, 0.0);
        assert_eq!(rows[1].epsilon, 0.4);
        assert!(rows.iter().all(|r| r.reps == 4 && r.rate <= 1.0));
    }
}
