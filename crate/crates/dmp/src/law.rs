//! Deformed Marchenko-Pastur law for Gram matrices of strongly rectangular data.
//!
//! For a p x n data matrix with independent entries of variance (pn)^{-1/2} and
//! population covariance with atomic spectral distribution pi = sum_k w_k
//! delta_{sigma_k}, the n x n Gram matrix eigenvalue distribution converges (as
//! n -> inf with phi = p/n >= 1 fixed or diverging) to a deterministic law. Its
//! Stieltjes transform m(z) is the unique solution with Im m > 0 of z = f(m),
//! where the master function is
//!
//!   f(x) = -1/x + sum_k r_k / (x + 1/s_k),   s_k = sigma_k / sqrt(phi),
//!                                             r_k = phi w_k.
//!
//! The support edges are the critical values of f on the real line: x1, the
//! unique zero of f' between the largest pole -1/s_max and 0, gives the upper
//! edge gamma_plus = f(x1); x2, the unique zero on (0, inf), gives the lower
//! edge gamma_minus = f(x2). The density follows by boundary inversion,
//! rho(x) = Im m(x + i0) / pi.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{DmpError, Result};
use crate::quad;
use crate::stats::TestFunctionSpec;

/// Relative residual demanded of every accepted Stieltjes solve.
pub const RESIDUAL_TOL: f64 = 1e-12;

/// Atomic population spectral distribution together with the aspect ratio phi.
///
/// Atoms are (sigma, weight) pairs with distinct positive sigmas and weights
/// summing to one; they are kept sorted by descending sigma.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpectrum {
    atoms: Vec<(f64, f64)>,
    phi: f64,
    s: Vec<f64>,
    r: Vec<f64>,
}

impl PopulationSpectrum {
    pub fn new(atoms: &[(f64, f64)], phi: f64) -> Result<Self> {
        if !phi.is_finite() || phi < 1.0 {
            return Err(DmpError::UnsupportedRegime { phi });
        }
        if atoms.is_empty() {
            return Err(DmpError::InvalidSpectrum("no atoms given".into()));
        }
        let mut sorted = atoms.to_vec();
        sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut wsum = 0.0;
        for &(sigma, w) in &sorted {
            if !sigma.is_finite() || sigma <= 0.0 {
                return Err(DmpError::InvalidSpectrum(format!(
                    "atom value {sigma} must be positive and finite"
                )));
            }
            if !w.is_finite() || w <= 0.0 {
                return Err(DmpError::InvalidSpectrum(format!(
                    "atom weight {w} must be positive and finite"
                )));
            }
            wsum += w;
        }
        if (wsum - 1.0).abs() > 1e-12 {
            return Err(DmpError::InvalidSpectrum(format!(
                "weights sum to {wsum}, expected 1"
            )));
        }
        for pair in sorted.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(DmpError::InvalidSpectrum(format!(
                    "duplicate atom value {}",
                    pair[0].0
                )));
            }
        }
        let sq = phi.sqrt();
        let s = sorted.iter().map(|&(sig, _)| sig / sq).collect();
        let r = sorted.iter().map(|&(_, w)| phi * w).collect();
        Ok(Self { atoms: sorted, phi, s, r })
    }

    pub fn identity(phi: f64) -> Result<Self> {
        Self::new(&[(1.0, 1.0)], phi)
    }

    /// Parses "w1:v1,w2:v2,..." (weight:value pairs).
    pub fn parse(text: &str, phi: f64) -> Result<Self> {
        let mut atoms = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (w, v) = part.split_once(':').ok_or_else(|| {
                DmpError::InvalidSpectrum(format!("expected weight:value, got '{part}'"))
            })?;
            let w: f64 = w.trim().parse().map_err(|_| {
                DmpError::InvalidSpectrum(format!("bad weight '{w}'"))
            })?;
            let v: f64 = v.trim().parse().map_err(|_| {
                DmpError::InvalidSpectrum(format!("bad value '{v}'"))
            })?;
            atoms.push((v, w));
        }
        Self::new(&atoms, phi)
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Atoms as (sigma, weight), sorted by descending sigma.
    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn is_identity(&self) -> bool {
        self.atoms.len() == 1 && self.atoms[0].0 == 1.0
    }

    /// phi^{1/2} + phi^{-1/2}, the center of the identity-case support.
    pub fn gamma_tilde(&self) -> f64 {
        self.phi.sqrt() + 1.0 / self.phi.sqrt()
    }

    /// k-th moment of pi.
    pub fn pi_moment(&self, k: u32) -> f64 {
        self.atoms.iter().map(|&(s, w)| w * s.powi(k as i32)).sum()
    }

    fn pole_nearest(&self, x: f64) -> f64 {
        let mut best = x.abs();
        for &s in &self.s {
            best = best.min((x + 1.0 / s).abs());
        }
        best
    }

    fn fc(&self, m: Complex64) -> Complex64 {
        let mut acc = -m.inv();
        for (s, r) in self.s.iter().zip(&self.r) {
            acc += r / (m + 1.0 / s);
        }
        acc
    }

    fn fpc(&self, m: Complex64) -> Complex64 {
        let m2 = m * m;
        let mut acc = m2.inv();
        for (s, r) in self.s.iter().zip(&self.r) {
            let d = m + 1.0 / s;
            acc -= r / (d * d);
        }
        acc
    }

    fn fppc(&self, m: Complex64) -> Complex64 {
        let mut acc = -2.0 * (m * m * m).inv();
        for (s, r) in self.s.iter().zip(&self.r) {
            let d = m + 1.0 / s;
            acc += 2.0 * r / (d * d * d);
        }
        acc
    }

    fn fr(&self, x: f64) -> f64 {
        let mut acc = -1.0 / x;
        for (s, r) in self.s.iter().zip(&self.r) {
            acc += r / (x + 1.0 / s);
        }
        acc
    }

    fn fpr(&self, x: f64) -> f64 {
        let mut acc = 1.0 / (x * x);
        for (s, r) in self.s.iter().zip(&self.r) {
            let d = x + 1.0 / s;
            acc -= r / (d * d);
        }
        acc
    }

    fn fppr(&self, x: f64) -> f64 {
        let mut acc = -2.0 / (x * x * x);
        for (s, r) in self.s.iter().zip(&self.r) {
            let d = x + 1.0 / s;
            acc += 2.0 * r / (d * d * d);
        }
        acc
    }

    fn fpppr(&self, x: f64) -> f64 {
        let mut acc = 6.0 / (x * x * x * x);
        for (s, r) in self.s.iter().zip(&self.r) {
            let d = x + 1.0 / s;
            acc -= 6.0 * r / (d * d * d * d);
        }
        acc
    }
}

/// Master function f(x) = -1/x + sum_k r_k/(x + 1/s_k) on the real line.
///
/// Errors if x is at (or within 1e-13 relative distance of) one of the poles
/// {0} u {-1/s_k}.
pub fn master_f(sp: &PopulationSpectrum, x: f64) -> Result<f64> {
    guard_pole(sp, x)?;
    Ok(sp.fr(x))
}

/// f together with its first three derivatives at a real x away from poles.
pub fn master_f_derivs(sp: &PopulationSpectrum, x: f64) -> Result<[f64; 4]> {
    guard_pole(sp, x)?;
    Ok([sp.fr(x), sp.fpr(x), sp.fppr(x), sp.fpppr(x)])
}

fn guard_pole(sp: &PopulationSpectrum, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(DmpError::InvalidArgument(format!("x = {x} not finite")));
    }
    let scale = sp.s.iter().fold(1.0f64, |a, &s| a.max(1.0 / s));
    if sp.pole_nearest(x) < 1e-13 * scale {
        return Err(DmpError::PoleProximity { x });
    }
    Ok(())
}

/// Support of the limiting law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportInfo {
    /// Critical point of f in (-1/s_max, 0); gamma_plus = f(x1).
    pub x1: f64,
    /// Critical point of f in (0, inf); gamma_minus = f(x2).
    pub x2: f64,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
}

impl SupportInfo {
    pub fn width(&self) -> f64 {
        self.gamma_plus - self.gamma_minus
    }
}

/// Locates the support edges by bisecting f' on its two bracketing intervals,
/// then polishing with Newton on f'.
pub fn support(sp: &PopulationSpectrum) -> Result<SupportInfo> {
    let smax = sp.s[0]; // atoms sorted by descending sigma
    let pole = -1.0 / smax;

    // x1 in (pole, 0): f' -> -inf at the pole, +inf at 0^-.
    let mut lo = pole * (1.0 - 1e-12);
    let mut hi = pole * 1e-12;
    if !(sp.fpr(lo) < 0.0 && sp.fpr(hi) > 0.0) {
        return Err(DmpError::Bracketing(format!(
            "no sign change of f' in ({lo}, {hi})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sp.fpr(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut x1 = 0.5 * (lo + hi);
    for _ in 0..8 {
        let step = sp.fpr(x1) / sp.fppr(x1);
        let cand = x1 - step;
        if cand > pole && cand < 0.0 {
            x1 = cand;
        }
    }

    // x2 in (0, inf): f' -> +inf at 0^+ and behaves like (1-phi)/x^2 at infinity.
    let xscale = -pole;
    let mut lo = 1e-12 * xscale;
    let mut hi = xscale;
    let mut found = false;
    for _ in 0..600 {
        if sp.fpr(hi) <= 0.0 {
            found = true;
            break;
        }
        hi *= 2.0;
    }
    if !found {
        // phi = 1: f' > 0 on all of (0, inf); the lower edge degenerates to 0.
        return Ok(SupportInfo {
            x1,
            x2: f64::INFINITY,
            gamma_minus: 0.0,
            gamma_plus: sp.fr(x1),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sp.fpr(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x2 = 0.5 * (lo + hi);
    for _ in 0..8 {
        let step = sp.fpr(x2) / sp.fppr(x2);
        let cand = x2 - step;
        if cand > 0.0 {
            x2 = cand;
        }
    }

    Ok(SupportInfo {
        x1,
        x2,
        gamma_minus: sp.fr(x2),
        gamma_plus: sp.fr(x1),
    })
}

/// Stieltjes transform value with first two derivatives and the solve residual.
#[derive(Debug, Clone, Copy)]
pub struct StieltjesValue {
    pub z: Complex64,
    pub m: Complex64,
    pub m_prime: Complex64,
    pub m_second: Complex64,
    /// |f(m) - z| / max(1, |z|)
    pub residual: f64,
}

pub(crate) fn derivs_from_m(sp: &PopulationSpectrum, m: Complex64) -> (Complex64, Complex64) {
    let fp = sp.fpc(m);
    let fpp = sp.fppc(m);
    let m1 = fp.inv();
    let m2 = -fpp * m1 * m1 * m1;
    (m1, m2)
}

/// |f(m) - z| / max(1, |z|): how well m solves the master equation at z.
pub(crate) fn master_residual(sp: &PopulationSpectrum, m: Complex64, z: Complex64) -> f64 {
    (sp.fc(m) - z).norm() / z.norm().max(1.0)
}

/// Damped fixed point m <- 1/(-z + sum r_k/(m + 1/s_k)), optionally seeded,
/// followed by a Newton polish on f(m) = z. The upper-half-plane guard keeps
/// the iteration on the Herglotz branch when Im z > 0; callers doing analytic
/// continuation (contours through the lower half plane) pass guard = false.
fn solve_m_inner(
    sp: &PopulationSpectrum,
    z: Complex64,
    seed: Option<Complex64>,
    guard: bool,
) -> Complex64 {
    let iters = if seed.is_some() { 40 } else { 400 };
    let mut m = seed.unwrap_or(-z.inv());
    for _ in 0..iters {
        let mut acc = -z;
        for (s, r) in sp.s.iter().zip(&sp.r) {
            acc += r / (m + 1.0 / s);
        }
        let mut t = acc.inv();
        if guard && z.im > 0.0 && t.im < 0.0 {
            t = t.conj();
        }
        m = 0.5 * m + 0.5 * t;
    }
    for _ in 0..60 {
        let g = sp.fc(m) - z;
        let gp = sp.fpc(m);
        if gp.norm() == 0.0 || !gp.is_finite() {
            break;
        }
        let step = g / gp;
        let cand = m - step;
        if guard && z.im > 0.0 && cand.im <= 0.0 {
            break;
        }
        m = cand;
        if step.norm() < 1e-13 * m.norm().max(1.0) {
            break;
        }
    }
    m
}

pub(crate) fn solve_m_continued(
    sp: &PopulationSpectrum,
    z: Complex64,
    seed: Option<Complex64>,
) -> Complex64 {
    solve_m_inner(sp, z, seed, false)
}

/// Solves the self-consistent equation for m(z).
///
/// Im z > 0 resolves on the Herglotz branch; Im z < 0 returns the conjugate
/// value; real z resolves the upper boundary value m(z + i0).
pub fn solve_m(sp: &PopulationSpectrum, z: Complex64) -> Result<StieltjesValue> {
    if !z.is_finite() {
        return Err(DmpError::InvalidArgument(format!("z = {z} not finite")));
    }
    if z.im < 0.0 {
        let v = solve_m(sp, z.conj())?;
        return Ok(StieltjesValue {
            z,
            m: v.m.conj(),
            m_prime: v.m_prime.conj(),
            m_second: v.m_second.conj(),
            residual: v.residual,
        });
    }
    if z.im == 0.0 {
        let b = boundary_value(sp, z.re)?;
        return Ok(StieltjesValue {
            z,
            m: b.m,
            m_prime: b.m_prime,
            m_second: b.m_second,
            residual: b.residual,
        });
    }
    let m = solve_m_inner(sp, z, None, true);
    let residual = (sp.fc(m) - z).norm() / z.norm().max(1.0);
    if !residual.is_finite() || residual > RESIDUAL_TOL {
        return Err(DmpError::SolverDiverged {
            re: z.re,
            im: z.im,
            residual,
        });
    }
    let (m1, m2) = derivs_from_m(sp, m);
    Ok(StieltjesValue {
        z,
        m,
        m_prime: m1,
        m_second: m2,
        residual,
    })
}

/// Upper boundary value of the Stieltjes transform and the density at x.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryPoint {
    pub x: f64,
    pub m: Complex64,
    pub m_prime: Complex64,
    pub m_second: Complex64,
    pub density: f64,
    pub residual: f64,
}

/// m(x + i0) via a descending imaginary-offset ladder, finished by a Newton
/// polish directly at eta = 0. Off the support the polish lands on the real
/// root and the density is zero.
pub fn boundary_value(sp: &PopulationSpectrum, x: f64) -> Result<BoundaryPoint> {
    boundary_value_seeded(sp, x, None)
}

pub(crate) fn boundary_value_seeded(
    sp: &PopulationSpectrum,
    x: f64,
    seed: Option<Complex64>,
) -> Result<BoundaryPoint> {
    const FULL: [f64; 7] = [1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001];
    const SHORT: [f64; 2] = [0.01, 0.001];

    let attempt = |seed: Option<Complex64>| -> (Complex64, f64) {
        let ladder: &[f64] = if seed.is_some() { &SHORT } else { &FULL };
        let mut m = seed;
        for &eta in ladder {
            m = Some(solve_m_inner(sp, Complex64::new(x, eta), m, true));
        }
        let mut m = m.unwrap();
        for _ in 0..80 {
            let g = sp.fc(m) - x;
            let gp = sp.fpc(m);
            if gp.norm() == 0.0 || !gp.is_finite() {
                break;
            }
            m -= g / gp;
        }
        let residual = (sp.fc(m) - x).norm() / x.abs().max(1.0);
        (m, residual)
    };

    let (mut m, mut residual) = attempt(seed);
    if seed.is_some() && (!residual.is_finite() || residual > 1e-10 || m.im < -1e-12) {
        (m, residual) = attempt(None);
    }
    if !residual.is_finite() || residual > 1e-10 {
        return Err(DmpError::SolverDiverged {
            re: x,
            im: 0.0,
            residual,
        });
    }
    let (m1, m2) = derivs_from_m(sp, m);
    Ok(BoundaryPoint {
        x,
        m,
        m_prime: m1,
        m_second: m2,
        density: (m.im / PI).max(0.0),
        residual,
    })
}

/// Options for [`density`].
#[derive(Debug, Clone)]
pub struct DensityOptions {
    /// Number of grid points when no explicit grid is given.
    pub npts: usize,
    /// Margin beyond each edge, relative to the support width.
    pub pad_rel: f64,
    /// Explicit evaluation grid (overrides npts/pad_rel).
    pub grid: Option<Vec<f64>>,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            npts: 2000,
            pad_rel: 0.02,
            grid: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub xs: Vec<f64>,
    pub rho: Vec<f64>,
    pub total_mass: f64,
}

/// Density of the limiting law on a grid covering the support.
pub fn density(sp: &PopulationSpectrum, opts: &DensityOptions) -> Result<DensityGrid> {
    let sup = support(sp)?;
    let xs: Vec<f64> = match &opts.grid {
        Some(g) => {
            if g.len() < 2 {
                return Err(DmpError::InvalidArgument(
                    "density grid needs at least 2 points".into(),
                ));
            }
            g.clone()
        }
        None => {
            if opts.npts < 2 {
                return Err(DmpError::InvalidArgument("npts must be >= 2".into()));
            }
            let pad = opts.pad_rel * sup.width();
            let a = sup.gamma_minus - pad;
            let b = sup.gamma_plus + pad;
            (0..opts.npts)
                .map(|i| a + (b - a) * i as f64 / (opts.npts - 1) as f64)
                .collect()
        }
    };
    let mut rho = Vec::with_capacity(xs.len());
    let mut seed: Option<Complex64> = None;
    for &x in &xs {
        let b = boundary_value_seeded(sp, x, seed)?;
        seed = Some(b.m);
        rho.push(b.density);
    }
    let total_mass = quad::trapezoid(&xs, &rho);
    Ok(DensityGrid { xs, rho, total_mass })
}

impl DensityGrid {
    /// Piecewise-linear CDF from the grid, renormalized to end at 1.
    pub fn cdf(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = quad::cumtrapz(&self.xs, &self.rho);
        let total = *f.last().unwrap();
        if !(total > 0.0) {
            return Err(DmpError::InvalidArgument(
                "density grid carries no mass".into(),
            ));
        }
        Ok((self.xs.clone(), f.iter().map(|v| v / total).collect()))
    }
}

/// Boundary tables on a Gauss-Legendre theta grid over the support,
/// x(theta) = mid - R cos(theta). `weight` already contains the GL weight
/// times the Jacobian R sin(theta).
pub(crate) struct BoundaryTables {
    pub xs: Vec<f64>,
    pub weight: Vec<f64>,
    pub m: Vec<Complex64>,
    pub m_prime: Vec<Complex64>,
    pub m_second: Vec<Complex64>,
    pub support: SupportInfo,
}

pub(crate) fn boundary_tables(sp: &PopulationSpectrum, nq: usize) -> Result<BoundaryTables> {
    let sup = support(sp)?;
    if !sup.x2.is_finite() {
        return Err(DmpError::UnsupportedRegime { phi: sp.phi() });
    }
    let mid = 0.5 * (sup.gamma_minus + sup.gamma_plus);
    let rad = 0.5 * sup.width();
    let (th, wth) = quad::gauss_legendre_on(nq, 0.0, PI);
    let mut xs = Vec::with_capacity(nq);
    let mut weight = Vec::with_capacity(nq);
    let mut m = Vec::with_capacity(nq);
    let mut m1v = Vec::with_capacity(nq);
    let mut m2v = Vec::with_capacity(nq);
    let mut seed: Option<Complex64> = None;
    for j in 0..nq {
        let x = mid - rad * th[j].cos();
        let b = boundary_value_seeded(sp, x, seed)?;
        seed = Some(b.m);
        xs.push(x);
        weight.push(wth[j] * rad * th[j].sin());
        m.push(b.m);
        m1v.push(b.m_prime);
        m2v.push(b.m_second);
    }
    Ok(BoundaryTables {
        xs,
        weight,
        m,
        m_prime: m1v,
        m_second: m2v,
        support: sup,
    })
}

/// Deterministic centering integral n^{-1} E sum f(lambda_j) -> int f drho:
/// integrates the test function (including its cutoff, when present) against
/// the limiting density.
pub fn lss_centering(sp: &PopulationSpectrum, f: &TestFunctionSpec) -> Result<f64> {
    let t = boundary_tables(sp, 800)?;
    let mut acc = 0.0;
    for j in 0..t.xs.len() {
        let rho = (t.m[j].im / PI).max(0.0);
        if rho == 0.0 {
            continue;
        }
        acc += t.weight[j] * f.eval(t.xs[j])? * rho;
    }
    Ok(acc)
}

/// Stieltjes transform of the companion (p x p) spectral law:
/// m_p(z) = (m(z) + (1 - phi)/z) / phi.
pub fn companion_transform(m: Complex64, z: Complex64, phi: f64) -> Complex64 {
    (m + (1.0 - phi) / z) / phi
}

/// Two-sided Kolmogorov-Smirnov distance between sorted eigenvalues and the
/// CDF interpolated from a density grid.
pub fn esd_distance(sorted_eigs: &[f64], grid: &DensityGrid) -> Result<f64> {
    if sorted_eigs.is_empty() {
        return Err(DmpError::InvalidArgument("no eigenvalues".into()));
    }
    if sorted_eigs.windows(2).any(|w| w[0] > w[1]) {
        return Err(DmpError::InvalidArgument(
            "eigenvalues must be sorted ascending".into(),
        ));
    }
    let (xs, cdf) = grid.cdf()?;
    let n = sorted_eigs.len() as f64;
    let mut ks = 0.0f64;
    for (i, &ev) in sorted_eigs.iter().enumerate() {
        let f = interp(&xs, &cdf, ev);
        ks = ks.max(((i + 1) as f64 / n - f).abs());
        ks = ks.max((i as f64 / n - f).abs());
    }
    Ok(ks)
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= *xs.last().unwrap() {
        return *ys.last().unwrap();
    }
    let idx = xs.partition_point(|&v| v < x);
    let (x0, x1) = (xs[idx - 1], xs[idx]);
    let (y0, y1) = (ys[idx - 1], ys[idx]);
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

// ---------------------------------------------------------------------------
// Identity-spectrum closed forms (used for fast exact null calibration and as
// cross-checks of the generic solver).
// ---------------------------------------------------------------------------

/// Closed-form support edges for pi = delta_1: gamma_tilde -+ 2.
pub fn identity_edges(phi: f64) -> Result<(f64, f64)> {
    if !phi.is_finite() || phi < 1.0 {
        return Err(DmpError::UnsupportedRegime { phi });
    }
    let gt = phi.sqrt() + 1.0 / phi.sqrt();
    Ok((gt - 2.0, gt + 2.0))
}

/// Closed-form Stieltjes transform for pi = delta_1. Im z > 0 resolves the
/// Herglotz branch, Im z < 0 its conjugate, and real z the upper boundary
/// value (which is the decaying real branch off the support).
pub fn identity_stieltjes(phi: f64, z: Complex64) -> Result<Complex64> {
    let (gm, gp) = identity_edges(phi)?;
    let sq = phi.sqrt();
    let top = Complex64::new(sq - 1.0 / sq, 0.0) - z;
    let rt = Complex64::i() * ((z - gm) * (gp - z)).sqrt();
    let den = 2.0 * z / sq;
    let plus = (top + rt) / den;
    let minus = (top - rt) / den;
    if z.im > 0.0 {
        Ok(if plus.im >= 0.0 { plus } else { minus })
    } else if z.im < 0.0 {
        Ok(if plus.im <= 0.0 { plus } else { minus })
    } else if plus.im.abs().max(minus.im.abs()) > 0.0 {
        // real z inside the support: upper boundary value
        Ok(if plus.im > 0.0 { plus } else { minus })
    } else {
        // real z off the support: both roots are real preimages of f; the
        // physical one continues the z*m -> -1 tail
        let one = Complex64::new(1.0, 0.0);
        Ok(if (z * plus + one).norm() <= (z * minus + one).norm() {
            plus
        } else {
            minus
        })
    }
}

/// Closed-form density for pi = delta_1.
pub fn identity_density(phi: f64, x: f64) -> Result<f64> {
    let (gm, gp) = identity_edges(phi)?;
    if x <= gm || x >= gp {
        return Ok(0.0);
    }
    Ok(phi.sqrt() / (2.0 * PI) * ((x - gm) * (gp - x)).sqrt() / x)
}

/// Integral of g against the identity-spectrum law, by the exact
/// trigonometric substitution x = gamma_tilde - 2 cos(theta).
pub fn identity_law_integral<F: FnMut(f64) -> Result<f64>>(
    phi: f64,
    mut g: F,
    nq: usize,
) -> Result<f64> {
    if !phi.is_finite() || phi < 1.0 {
        return Err(DmpError::UnsupportedRegime { phi });
    }
    let gt = phi.sqrt() + 1.0 / phi.sqrt();
    let (th, wth) = quad::gauss_legendre_on(nq, 0.0, PI);
    let mut acc = 0.0;
    for j in 0..nq {
        let x = gt - 2.0 * th[j].cos();
        let sin = th[j].sin();
        // rho(x) dx = (sqrt(phi)/2pi) * (2 sin)^2 / x dtheta
        acc += wth[j] * g(x)? * phi.sqrt() / (2.0 * PI) * (2.0 * sin) * (2.0 * sin) / x;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn phi_below_one_rejected_everywhere() {
        assert!(matches!(
            PopulationSpectrum::identity(0.6),
            Err(DmpError::UnsupportedRegime { .. })
        ));
        assert!(identity_edges(0.99).is_err());
        assert!(PopulationSpectrum::parse("0.5:1,0.5:2", 0.5).is_err());
    }

    #[test]
    fn spectrum_validation() {
        assert!(PopulationSpectrum::new(&[(1.0, 0.6), (2.0, 0.5)], 2.0).is_err()); // weights
        assert!(PopulationSpectrum::new(&[(1.0, 0.5), (1.0, 0.5)], 2.0).is_err()); // duplicate
        assert!(PopulationSpectrum::new(&[(-1.0, 1.0)], 2.0).is_err());
        let sp = PopulationSpectrum::parse("0.5:1, 0.5:15", 100.0).unwrap();
        assert_eq!(sp.atoms(), &[(15.0, 0.5), (1.0, 0.5)]);
    }

    #[test]
    fn master_f_pole_guard() {
        let sp = PopulationSpectrum::identity(4.0).unwrap();
        // poles at 0 and -1/s = -2
        assert!(matches!(master_f(&sp, 0.0), Err(DmpError::PoleProximity { .. })));
        assert!(matches!(master_f(&sp, -2.0), Err(DmpError::PoleProximity { .. })));
        assert!(master_f(&sp, 1.0).is_ok());
    }

    #[test]
    fn master_f_matches_hand_value() {
        // identity, phi = 4: f(x) = -1/x + 4/(x + 2)
        let sp = PopulationSpectrum::identity(4.0).unwrap();
        let x = 1.0;
        assert_abs_diff_eq!(master_f(&sp, x).unwrap(), -1.0 + 4.0 / 3.0, epsilon = 1e-15);
        let d = master_f_derivs(&sp, x).unwrap();
        assert_abs_diff_eq!(d[1], 1.0 - 4.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[2], -2.0 + 8.0 / 27.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[3], 6.0 - 24.0 / 81.0, epsilon = 1e-15);
    }

    #[test]
    fn identity_edges_match_generic_support() {
        for phi in [2.0, 10.0, 100.0] {
            let sp = PopulationSpectrum::identity(phi).unwrap();
            let sup = support(&sp).unwrap();
            let (gm, gp) = identity_edges(phi).unwrap();
            assert_abs_diff_eq!(sup.gamma_minus, gm, epsilon = 1e-10);
            assert_abs_diff_eq!(sup.gamma_plus, gp, epsilon = 1e-10);
            // critical-point contract
            assert!(sp.fpr(sup.x1).abs() < 1e-10);
            assert!(sp.fpr(sup.x2).abs() < 1e-10);
        }
    }

    #[test]
    fn two_atom_support_pins() {
        // oracle-frozen exact critical points and edges
        let sp = PopulationSpectrum::parse("0.5:1,0.5:15", 100.0).unwrap();
        let sup = support(&sp).unwrap();
        assert_abs_diff_eq!(sup.x1, -0.082474313850144, epsilon = 1e-9);
        assert_abs_diff_eq!(sup.x2, 0.109435393017431, epsilon = 1e-9);
        assert_abs_diff_eq!(sup.gamma_minus, 60.232579625727, epsilon = 1e-8);
        assert_abs_diff_eq!(sup.gamma_plus, 102.754815335682, epsilon = 1e-8);
        assert!(sp.fpr(sup.x1).abs() < 1e-10);
    }

    #[test]
    fn solver_matches_identity_closed_form() {
        let sp = PopulationSpectrum::identity(100.0).unwrap();
        let z = Complex64::new(10.1, 0.5);
        let v = solve_m(&sp, z).unwrap();
        let cf = identity_stieltjes(100.0, z).unwrap();
        assert!((v.m - cf).norm() < 1e-10, "{} vs {}", v.m, cf);
        assert!(v.residual <= RESIDUAL_TOL);
        // oracle pin
        assert_abs_diff_eq!(v.m.re, -0.060591804889, epsilon = 1e-9);
        assert_abs_diff_eq!(v.m.im, 0.776045541237, epsilon = 1e-9);
        // conjugate symmetry
        let vc = solve_m(&sp, z.conj()).unwrap();
        assert!((vc.m - v.m.conj()).norm() < 1e-12);
    }

    #[test]
    fn companion_transform_pin() {
        let sp = PopulationSpectrum::identity(100.0).unwrap();
        let z = Complex64::new(10.1, 0.5);
        let v = solve_m(&sp, z).unwrap();
        let mp = companion_transform(v.m, z, 100.0);
        assert_abs_diff_eq!(mp.re, -0.098386086248, epsilon = 1e-9);
        assert_abs_diff_eq!(mp.im, 0.012601057798, epsilon = 1e-9);
    }

    #[test]
    fn two_atom_interior_solve_pin() {
        let sp = PopulationSpectrum::parse("0.5:1,0.5:15", 100.0).unwrap();
        let v = solve_m(&sp, Complex64::new(80.0, 0.05)).unwrap();
        assert_abs_diff_eq!(v.m.re, -0.006563920210, epsilon = 1e-9);
        assert_abs_diff_eq!(v.m.im, 0.093626493164, epsilon = 1e-9);
        let b = boundary_value(&sp, 80.0).unwrap();
        assert_abs_diff_eq!(b.m.re, -0.006610227793, epsilon = 1e-9);
        assert_abs_diff_eq!(b.m.im, 0.093843164532, epsilon = 1e-9);
        assert_abs_diff_eq!(b.density, 0.029871207021, epsilon = 1e-9);
    }

    #[test]
    fn boundary_density_matches_closed_form() {
        let sp = PopulationSpectrum::identity(100.0).unwrap();
        let b = boundary_value(&sp, 10.1).unwrap();
        assert_abs_diff_eq!(b.density, 0.315158303152268, epsilon = 1e-10);
        assert_abs_diff_eq!(b.m.re, -0.099009900990, epsilon = 1e-10);
        assert_abs_diff_eq!(b.m.im, 0.990099009901, epsilon = 1e-10);
        // outside the support the density vanishes
        let out = boundary_value(&sp, 12.5).unwrap();
        assert_eq!(out.density, 0.0);
    }

    #[test]
    fn density_grid_mass_and_identity_match() {
        let sp = PopulationSpectrum::identity(100.0).unwrap();
        let g = density(&sp, &DensityOptions::default()).unwrap();
        assert!((g.total_mass - 1.0).abs() < 1e-3, "mass {}", g.total_mass);
        let (gm, gp) = identity_edges(100.0).unwrap();
        for (x, r) in g.xs.iter().zip(&g.rho) {
            if *x > gm + 0.01 && *x < gp - 0.01 {
                let cf = identity_density(100.0, *x).unwrap();
                assert!((r - cf).abs() < 1e-6, "x={x}: {r} vs {cf}");
            }
        }
    }

    #[test]
    fn identity_law_integral_mass_and_moment() {
        let mass = identity_law_integral(50.0, |_| Ok(1.0), 400).unwrap();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
        // first moment = sqrt(phi) * m1(pi) = sqrt(50)
        let mom = identity_law_integral(50.0, |x| Ok(x), 400).unwrap();
        assert_abs_diff_eq!(mom, 50f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn esd_distance_of_exact_quantiles_is_small() {
        let sp = PopulationSpectrum::identity(100.0).unwrap();
        let g = density(&sp, &DensityOptions::default()).unwrap();
        let (xs, cdf) = g.cdf().unwrap();
        // invert the CDF at uniform quantiles
        let n = 500;
        let mut eigs = Vec::with_capacity(n);
        for i in 0..n {
            let q = (i as f64 + 0.5) / n as f64;
            let idx = cdf.partition_point(|&v| v < q).min(xs.len() - 1);
            eigs.push(xs[idx]);
        }
        let ks = esd_distance(&eigs, &g).unwrap();
        assert!(ks < 5e-3, "ks = {ks}");
    }
}
