//! Test statistics for the covariance-structure hypothesis Sigma = I.
//!
//! Eight statistics are provided: four global ones built from linear,
//! quadratic and log-shifted functions of all eigenvalues of the scaled Gram
//! matrix (t1g, t2g, t3g and the scale-free ratio t4g), and four local ones
//! that look only at an O(eta0) window around the upper support edge (t1l,
//! t2l, t3l, t4l). Each statistic has an exact null calibration mapping the
//! raw value to an asymptotically standard normal z-score. The local
//! calibrations do not involve the fourth cumulant of the entry law at all.

use num_complex::Complex64;

use crate::clt;
use crate::error::{DmpError, Result};
use crate::law;
use crate::quad;

/// Smooth symmetric cutoff: 1 on |y| <= b, exp(1/a^2 - 1/(a^2 - (|y|-b)^2))
/// on b < |y| < b+a, and 0 outside.
pub fn mollifier(y: f64, a: f64, b: f64) -> f64 {
    let y = y.abs();
    if y <= b {
        1.0
    } else if y >= b + a {
        0.0
    } else {
        let u = y - b;
        (1.0 / (a * a) - 1.0 / (a * a - u * u)).exp()
    }
}

/// Derivative of [`mollifier`] with respect to y.
pub fn mollifier_deriv(y: f64, a: f64, b: f64) -> f64 {
    let ay = y.abs();
    if ay <= b || ay >= b + a {
        return 0.0;
    }
    let u = ay - b;
    let d = a * a - u * u;
    let k = (1.0 / (a * a) - 1.0 / d).exp();
    y.signum() * k * (-2.0 * u / (d * d))
}

/// Base shape h of a test function.
#[derive(Debug, Clone, PartialEq)]
pub enum FnBase {
    /// h(y) = y
    Linear,
    /// h(y) = y^2
    Quadratic,
    /// h(y) = (y + c) - log(y + c), defined for y > -c
    LogShift { c: f64 },
    /// h(y) = log(y + c), defined for y > -c
    Log { c: f64 },
    /// h(y) = sum_k a_k y^k
    Poly(Vec<f64>),
}

impl FnBase {
    fn h(&self, y: f64) -> Result<f64> {
        match self {
            FnBase::Linear => Ok(y),
            FnBase::Quadratic => Ok(y * y),
            FnBase::LogShift { c } => {
                let arg = y + c;
                if arg <= 0.0 {
                    return Err(DmpError::LogDomain { arg });
                }
                Ok(arg - arg.ln())
            }
            FnBase::Log { c } => {
                let arg = y + c;
                if arg <= 0.0 {
                    return Err(DmpError::LogDomain { arg });
                }
                Ok(arg.ln())
            }
            FnBase::Poly(a) => Ok(a.iter().rev().fold(0.0, |acc, &ak| acc * y + ak)),
        }
    }

    fn h_prime(&self, y: f64) -> Result<f64> {
        match self {
            FnBase::Linear => Ok(1.0),
            FnBase::Quadratic => Ok(2.0 * y),
            FnBase::LogShift { c } => {
                let arg = y + c;
                if arg <= 0.0 {
                    return Err(DmpError::LogDomain { arg });
                }
                Ok(1.0 - 1.0 / arg)
            }
            FnBase::Log { c } => {
                let arg = y + c;
                if arg <= 0.0 {
                    return Err(DmpError::LogDomain { arg });
                }
                Ok(1.0 / arg)
            }
            FnBase::Poly(a) => {
                let mut acc = 0.0;
                for (k, &ak) in a.iter().enumerate().skip(1).rev() {
                    acc = acc * y + k as f64 * ak;
                }
                Ok(acc)
            }
        }
    }

    fn h_complex(&self, y: Complex64) -> Result<Complex64> {
        match self {
            FnBase::Linear => Ok(y),
            FnBase::Quadratic => Ok(y * y),
            FnBase::LogShift { c } => {
                let arg = y + c;
                if arg.re <= 0.0 && arg.im.abs() < 1e-14 {
                    return Err(DmpError::LogDomain { arg: arg.re });
                }
                Ok(arg - arg.ln())
            }
            FnBase::Log { c } => {
                let arg = y + c;
                if arg.re <= 0.0 && arg.im.abs() < 1e-14 {
                    return Err(DmpError::LogDomain { arg: arg.re });
                }
                Ok(arg.ln())
            }
            FnBase::Poly(a) => Ok(a
                .iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &ak| acc * y + ak)),
        }
    }
}

/// A test function f(x) = h((x - center)/eta0) * K((x - center)/eta0), where
/// K is the optional smooth cutoff. Global statistics use eta0 = 1 and no
/// cutoff; local statistics center at a support edge with eta0 = n^{-1/4}.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctionSpec {
    pub base: FnBase,
    pub center: f64,
    pub eta0: f64,
    pub mollifier: Option<(f64, f64)>,
}

impl TestFunctionSpec {
    pub fn new(
        base: FnBase,
        center: f64,
        eta0: f64,
        mollifier: Option<(f64, f64)>,
    ) -> Result<Self> {
        if !(eta0 > 0.0) || !eta0.is_finite() {
            return Err(DmpError::InvalidArgument(format!("eta0 = {eta0}")));
        }
        if let Some((a, b)) = mollifier {
            if !(a > 0.0) || b < 0.0 || !a.is_finite() || !b.is_finite() {
                return Err(DmpError::InvalidArgument(format!(
                    "mollifier (a, b) = ({a}, {b})"
                )));
            }
        }
        if let FnBase::LogShift { c } | FnBase::Log { c } = base {
            if !(c > 0.0) {
                return Err(DmpError::InvalidArgument(format!("log shift c = {c} <= 0")));
            }
        }
        Ok(Self {
            base,
            center,
            eta0,
            mollifier,
        })
    }

    /// Global linear base: f(x) = x - gamma_tilde + c.
    pub fn global_linear(phi: f64, c: f64) -> Result<Self> {
        let sp = law::PopulationSpectrum::identity(phi)?;
        Self::new(FnBase::Linear, sp.gamma_tilde() - c, 1.0, None)
    }

    /// Global quadratic base: f(x) = (x - gamma_tilde + c)^2.
    pub fn global_quadratic(phi: f64, c: f64) -> Result<Self> {
        let sp = law::PopulationSpectrum::identity(phi)?;
        Self::new(FnBase::Quadratic, sp.gamma_tilde() - c, 1.0, None)
    }

    /// Global log base with parameter t > 1: f(x) = h3(x - gamma_tilde),
    /// h3(y) = (y + c3) - log(y + c3), c3 = t + 1/t.
    pub fn global_log(phi: f64, t: f64) -> Result<Self> {
        if !(t > 1.0) {
            return Err(DmpError::InvalidArgument(format!("t = {t} must exceed 1")));
        }
        let sp = law::PopulationSpectrum::identity(phi)?;
        Self::new(
            FnBase::LogShift { c: t + 1.0 / t },
            sp.gamma_tilde(),
            1.0,
            None,
        )
    }

    /// Pure logarithm f(x) = log(x - gamma_tilde + t + 1/t), t > 1.
    pub fn global_pure_log(phi: f64, t: f64) -> Result<Self> {
        if !(t > 1.0) {
            return Err(DmpError::InvalidArgument(format!("t = {t} must exceed 1")));
        }
        let sp = law::PopulationSpectrum::identity(phi)?;
        Self::new(FnBase::Log { c: t + 1.0 / t }, sp.gamma_tilde(), 1.0, None)
    }

    /// Local (edge) test function at `edge` with window scale eta0 and cutoff.
    pub fn local_edge(base: FnBase, edge: f64, eta0: f64, ab: (f64, f64)) -> Result<Self> {
        Self::new(base, edge, eta0, Some(ab))
    }

    fn cutoff(&self, y: f64) -> f64 {
        match self.mollifier {
            Some((a, b)) => mollifier(y, a, b),
            None => 1.0,
        }
    }

    /// g(y) = h(y) K(y) in the normalized variable.
    pub fn eval_g(&self, y: f64) -> Result<f64> {
        let k = self.cutoff(y);
        if k == 0.0 {
            return Ok(0.0);
        }
        Ok(self.base.h(y)? * k)
    }

    /// g'(y).
    pub fn eval_g_deriv(&self, y: f64) -> Result<f64> {
        match self.mollifier {
            None => self.base.h_prime(y),
            Some((a, b)) => {
                let k = mollifier(y, a, b);
                if k == 0.0 {
                    return Ok(0.0);
                }
                Ok(self.base.h_prime(y)? * k + self.base.h(y)? * mollifier_deriv(y, a, b))
            }
        }
    }

    /// f(x) = g((x - center)/eta0).
    pub fn eval(&self, x: f64) -> Result<f64> {
        self.eval_g((x - self.center) / self.eta0)
    }

    /// h((x - center)/eta0) without the cutoff.
    pub fn eval_bare(&self, x: f64) -> Result<f64> {
        self.base.h((x - self.center) / self.eta0)
    }

    /// d/dx of the bare function.
    pub fn deriv_bare(&self, x: f64) -> Result<f64> {
        Ok(self.base.h_prime((x - self.center) / self.eta0)? / self.eta0)
    }

    /// Analytic continuation of the bare function (for contour quadrature).
    pub fn eval_complex(&self, z: Complex64) -> Result<Complex64> {
        self.base.h_complex((z - self.center) / self.eta0)
    }

    /// g(0) = h(0) (the cutoff is 1 at the origin).
    pub fn g0(&self) -> Result<f64> {
        self.base.h(0.0)
    }
}

/// The eight statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestKind {
    T1g,
    T2g,
    T3g,
    T4g,
    T1l,
    T2l,
    T3l,
    T4l,
}

impl TestKind {
    pub const ALL: [TestKind; 8] = [
        TestKind::T1g,
        TestKind::T2g,
        TestKind::T3g,
        TestKind::T4g,
        TestKind::T1l,
        TestKind::T2l,
        TestKind::T3l,
        TestKind::T4l,
    ];

    pub fn is_local(&self) -> bool {
        matches!(
            self,
            TestKind::T1l | TestKind::T2l | TestKind::T3l | TestKind::T4l
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestKind::T1g => "t1g",
            TestKind::T2g => "t2g",
            TestKind::T3g => "t3g",
            TestKind::T4g => "t4g",
            TestKind::T1l => "t1l",
            TestKind::T2l => "t2l",
            TestKind::T3l => "t3l",
            TestKind::T4l => "t4l",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "t1g" => Ok(TestKind::T1g),
            "t2g" => Ok(TestKind::T2g),
            "t3g" => Ok(TestKind::T3g),
            "t4g" => Ok(TestKind::T4g),
            "t1l" => Ok(TestKind::T1l),
            "t2l" => Ok(TestKind::T2l),
            "t3l" => Ok(TestKind::T3l),
            "t4l" => Ok(TestKind::T4l),
            other => Err(DmpError::InvalidArgument(format!(
                "unknown statistic '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Tunable parameters shared by the statistics.
#[derive(Debug, Clone)]
pub struct TestParams {
    /// Global shift (t1g, t2g, t4g).
    pub c: f64,
    /// Global log parameter (t3g), c3 = t + 1/t.
    pub t: f64,
    /// Local window scale; default n^{-1/4}.
    pub eta0: f64,
    /// Local cutoff for the linear/quadratic windows.
    pub mollifier: (f64, f64),
    /// Local cutoff for the log window. Must satisfy a + b < c_log so the
    /// logarithm stays defined wherever the cutoff is positive.
    pub mollifier_log: (f64, f64),
    /// Local log shift.
    pub c_log: f64,
    /// Standardize t4g by the printed constants instead of the delta method.
    pub t4g_literal: bool,
}

impl TestParams {
    pub fn defaults(n: usize) -> Self {
        Self {
            c: 3.0,
            t: 3.0,
            eta0: (n as f64).powf(-0.25),
            mollifier: (1.0, 4.0),
            mollifier_log: (0.2, 0.25),
            c_log: 0.5,
            t4g_literal: false,
        }
    }

    fn spec(&self, kind: TestKind, phi: f64) -> Result<TestFunctionSpec> {
        let (gm, gp) = law::identity_edges(phi)?;
        let _ = gm;
        match kind {
            TestKind::T1g => TestFunctionSpec::global_linear(phi, self.c),
            TestKind::T2g | TestKind::T4g => TestFunctionSpec::global_quadratic(phi, self.c),
            TestKind::T3g => TestFunctionSpec::global_log(phi, self.t),
            TestKind::T1l | TestKind::T4l => {
                TestFunctionSpec::local_edge(FnBase::Linear, gp, self.eta0, self.mollifier)
            }
            TestKind::T2l => {
                TestFunctionSpec::local_edge(FnBase::Quadratic, gp, self.eta0, self.mollifier)
            }
            TestKind::T3l => {
                let (a, b) = self.mollifier_log;
                if a + b >= self.c_log {
                    return Err(DmpError::InvalidArgument(format!(
                        "log cutoff reaches a+b = {} >= c_log = {}; the window would \
                         leave the log domain",
                        a + b,
                        self.c_log
                    )));
                }
                TestFunctionSpec::local_edge(
                    FnBase::LogShift { c: self.c_log },
                    gp,
                    self.eta0,
                    self.mollifier_log,
                )
            }
        }
    }
}

/// Raw statistic from the eigenvalues of the scaled Gram matrix.
///
/// The ratio statistics (t4g, t4l) are n^2 T2 / T1^2 and error out when the
/// linear statistic vanishes.
pub fn stat_raw(eigs: &[f64], kind: TestKind, phi: f64, params: &TestParams) -> Result<f64> {
    if eigs.is_empty() {
        return Err(DmpError::InvalidArgument("no eigenvalues".into()));
    }
    if eigs.iter().any(|v| !v.is_finite()) {
        return Err(DmpError::InvalidArgument("non-finite eigenvalue".into()));
    }
    let n = eigs.len() as f64;
    let sum_of = |f: &TestFunctionSpec| -> Result<f64> {
        let mut acc = 0.0;
        for &ev in eigs {
            acc += f.eval(ev)?;
        }
        Ok(acc)
    };
    match kind {
        TestKind::T4g => {
            let t1 = sum_of(&params.spec(TestKind::T1g, phi)?)?;
            let t2 = sum_of(&params.spec(TestKind::T2g, phi)?)?;
            if t1 == 0.0 {
                return Err(DmpError::DegenerateRatio);
            }
            Ok(n * n * t2 / (t1 * t1))
        }
        TestKind::T4l => {
            let t1 = sum_of(&params.spec(TestKind::T1l, phi)?)?;
            let t2 = sum_of(&params.spec(TestKind::T2l, phi)?)?;
            if t1 == 0.0 {
                return Err(DmpError::DegenerateRatio);
            }
            Ok(n * n * t2 / (t1 * t1))
        }
        k => sum_of(&params.spec(k, phi)?),
    }
}

/// Precomputed null calibration z = (T - n * coeff_n - shift) / sd for one
/// statistic at fixed (n, phi, parameters, entry-law kappa4).
#[derive(Debug, Clone)]
pub struct NullCalibration {
    pub kind: TestKind,
    pub n: usize,
    pub phi: f64,
    /// None for the local statistics, whose calibration is kappa4-free.
    pub kappa4: Option<f64>,
    pub coeff_n: f64,
    pub shift: f64,
    pub sd: f64,
}

fn check_kappa4(kappa4: f64) -> Result<f64> {
    if !kappa4.is_finite() || kappa4 <= -2.0 {
        return Err(DmpError::KappaRange { kappa4 });
    }
    Ok(kappa4)
}

/// Local window moments m_k = int h((x-gp)/eta0) K(.) drho0 under the null
/// law, via the square-root edge substitution x = gp - eta0 s^2.
fn local_centering(f: &TestFunctionSpec, phi: f64) -> Result<f64> {
    let (a, b) = f
        .mollifier
        .ok_or_else(|| DmpError::InvalidArgument("local statistic needs a cutoff".into()))?;
    let smax = (a + b).sqrt();
    let (s, w) = quad::gauss_legendre_on(400, 0.0, smax);
    let mut acc = 0.0;
    for j in 0..s.len() {
        let u = s[j] * s[j];
        let x = f.center - f.eta0 * u;
        let rho = law::identity_density(phi, x)?;
        if rho == 0.0 {
            continue;
        }
        acc += w[j] * f.eval_g(-u)? * rho * f.eta0 * 2.0 * s[j];
    }
    Ok(acc)
}

impl NullCalibration {
    pub fn new(
        kind: TestKind,
        n: usize,
        phi: f64,
        kappa4: f64,
        params: &TestParams,
    ) -> Result<Self> {
        if n == 0 {
            return Err(DmpError::InvalidArgument("n must be positive".into()));
        }
        let sp = law::PopulationSpectrum::identity(phi)?;
        let gt = sp.gamma_tilde();
        let isq = 1.0 / phi.sqrt();
        let make = |coeff_n: f64, shift: f64, var: f64, k4: Option<f64>| -> Result<Self> {
            if !(var > 0.0) || !var.is_finite() {
                return Err(DmpError::KappaRange { kappa4 });
            }
            Ok(Self {
                kind,
                n,
                phi,
                kappa4: k4,
                coeff_n,
                shift,
                sd: var.sqrt(),
            })
        };
        match kind {
            TestKind::T1g => {
                let k4 = check_kappa4(kappa4)?;
                make(params.c - isq, 0.0, 2.0 + k4, Some(k4))
            }
            TestKind::T2g => {
                let k4 = check_kappa4(kappa4)?;
                let c = params.c;
                let a2 = 1.0 + c * c - 2.0 * c * isq + 1.0 / phi;
                make(a2, 1.0 + k4, 4.0 + 4.0 * c * c * (k4 + 2.0), Some(k4))
            }
            TestKind::T3g => {
                let k4 = check_kappa4(kappa4)?;
                let t = params.t;
                if !(t > 1.0) {
                    return Err(DmpError::InvalidArgument(format!("t = {t} must exceed 1")));
                }
                let c3 = t + 1.0 / t;
                let int_log =
                    law::identity_law_integral(phi, |x| Ok((x - gt + c3).ln()), 600)?;
                let coeff = (c3 - isq) - int_log;
                let shift = -0.5 * (1.0 - 1.0 / (t * t)).ln() + k4 / (2.0 * t * t);
                let var = (2.0 + k4) * (1.0 - 2.0 / t)
                    + 2.0 * (t.ln() - (t - 1.0 / t).ln())
                    + k4 / (t * t);
                make(coeff, shift, var, Some(k4))
            }
            TestKind::T4g => {
                let k4 = check_kappa4(kappa4)?;
                let c = params.c;
                if params.t4g_literal {
                    let d = c - 2.0 * isq;
                    if d == 0.0 || c == 0.0 {
                        return Err(DmpError::DegenerateRatio);
                    }
                    let coeff = 1.0 + 1.0 / (d * d);
                    let shift = (k4 + 1.0) * d * d;
                    let sd = (4.0 + 4.0 * (k4 + 2.0) / (c * c)) / (c * c);
                    make(coeff, shift, sd * sd, Some(k4))
                } else {
                    let a1 = c - isq;
                    if a1 == 0.0 {
                        return Err(DmpError::DegenerateRatio);
                    }
                    let a2 = 1.0 + c * c - 2.0 * c * isq + 1.0 / phi;
                    let g = [-2.0 * a2 / (a1 * a1 * a1), 1.0 / (a1 * a1)];
                    let s11 = 2.0 + k4;
                    let s12 = 2.0 * c * (k4 + 2.0);
                    let s22 = 4.0 + 4.0 * c * c * (k4 + 2.0);
                    let var = g[0] * g[0] * s11 + 2.0 * g[0] * g[1] * s12 + g[1] * g[1] * s22;
                    make(a2 / (a1 * a1), (1.0 + k4) / (a1 * a1), var, Some(k4))
                }
            }
            TestKind::T1l | TestKind::T2l | TestKind::T3l => {
                let f = params.spec(kind, phi)?;
                let m = local_centering(&f, phi)?;
                let lim = clt::local_limit_edge(std::slice::from_ref(&f), true)?;
                make(m, f.g0()? / 4.0, lim.covariance[0][0], None)
            }
            TestKind::T4l => {
                let f1 = params.spec(TestKind::T1l, phi)?;
                let f2 = params.spec(TestKind::T2l, phi)?;
                let m1 = local_centering(&f1, phi)?;
                let m2 = local_centering(&f2, phi)?;
                if m1 == 0.0 {
                    return Err(DmpError::DegenerateRatio);
                }
                let lim = clt::local_limit_edge(&[f1, f2], true)?;
                let g = [-2.0 * m2 / (m1 * m1 * m1), 1.0 / (m1 * m1)];
                let var = g[0] * g[0] * lim.covariance[0][0]
                    + 2.0 * g[0] * g[1] * lim.covariance[0][1]
                    + g[1] * g[1] * lim.covariance[1][1];
                make(m2 / (m1 * m1), 0.0, var, None)
            }
        }
    }

    pub fn standardize(&self, raw: f64) -> f64 {
        (raw - self.n as f64 * self.coeff_n - self.shift) / self.sd
    }
}

/// One-call standardization: raw statistic plus its null z-score.
pub fn standardize(
    eigs: &[f64],
    kind: TestKind,
    phi: f64,
    kappa4: f64,
    params: &TestParams,
) -> Result<(f64, f64)> {
    let raw = stat_raw(eigs, kind, phi, params)?;
    let cal = NullCalibration::new(kind, eigs.len(), phi, kappa4, params)?;
    Ok((raw, cal.standardize(raw)))
}

/// Two-sided p-value of a z-score under the standard normal.
pub fn p_value(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::new(0.0, 1.0).unwrap();
    2.0 * (1.0 - n.cdf(z.abs()))
}

/// Two-sided level-alpha decision: reject when |z| exceeds the exact
/// (1 - alpha/2) normal quantile.
pub fn decide(z: f64, alpha: f64) -> Result<bool> {
    use statrs::distribution::{ContinuousCDF, Normal};
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DmpError::InvalidArgument(format!("alpha = {alpha}")));
    }
    let n = Normal::new(0.0, 1.0).unwrap();
    Ok(z.abs() > n.inverse_cdf(1.0 - alpha / 2.0))
}

/// Full report for one statistic on one sample.
#[derive(Debug, Clone)]
pub struct TestReport {
    pub kind: TestKind,
    pub n: usize,
    pub phi: f64,
    pub raw: f64,
    pub z: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    /// None for local statistics (their calibration never uses kappa4).
    pub kappa4_used: Option<f64>,
}

pub fn run_test(
    eigs: &[f64],
    kind: TestKind,
    phi: f64,
    kappa4: f64,
    alpha: f64,
    params: &TestParams,
) -> Result<TestReport> {
    let raw = stat_raw(eigs, kind, phi, params)?;
    let cal = NullCalibration::new(kind, eigs.len(), phi, kappa4, params)?;
    let z = cal.standardize(raw);
    Ok(TestReport {
        kind,
        n: eigs.len(),
        phi,
        raw,
        z,
        p_value: p_value(z),
        alpha,
        reject: decide(z, alpha)?,
        kappa4_used: cal.kappa4,
    })
}

/// Eigenvalues (ascending) of the scaled Gram matrix Q = (pn)^{-1/2} D^T D,
/// where D is the p x n model matrix with variables along rows. `data` is
/// row-major with `nrows` rows; set `rows_are_variables = false` when rows
/// are samples (the matrix is transposed logically, never materialized).
/// Only the tall regime p >= n is accepted, and the n x n Gram matrix is the
/// one that gets factorized, never the p x p one.
pub fn gram_eigenvalues(
    data: &[f64],
    nrows: usize,
    ncols: usize,
    rows_are_variables: bool,
) -> Result<Vec<f64>> {
    if nrows == 0 || ncols == 0 || data.len() != nrows * ncols {
        return Err(DmpError::InvalidArgument(format!(
            "data length {} does not match {nrows} x {ncols}",
            data.len()
        )));
    }
    let (p, n) = if rows_are_variables {
        (nrows, ncols)
    } else {
        (ncols, nrows)
    };
    if p < n {
        return Err(DmpError::UnsupportedRegime {
            phi: p as f64 / n as f64,
        });
    }
    let scale = 1.0 / ((p as f64) * (n as f64)).sqrt();
    let q = crate::sim::accumulate_gram(data, nrows, ncols, rows_are_variables, scale);
    crate::sim::lower_eigenvalues(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mollifier_pins() {
        assert_eq!(mollifier(0.0, 1.0, 4.0), 1.0);
        assert_eq!(mollifier(-3.9, 1.0, 4.0), 1.0);
        assert_eq!(mollifier(5.0, 1.0, 4.0), 0.0);
        assert_eq!(mollifier(-5.1, 1.0, 4.0), 0.0);
        // oracle: K(4.5; 1, 4) = exp(1 - 4/3)
        assert_abs_diff_eq!(
            mollifier(4.5, 1.0, 4.0),
            0.716531310573789,
            epsilon = 1e-14
        );
        assert_eq!(mollifier(4.5, 1.0, 4.0), mollifier(-4.5, 1.0, 4.0));
    }

    #[test]
    fn mollifier_deriv_matches_finite_difference() {
        let (a, b) = (1.0, 4.0);
        for &y in &[4.1, 4.5, 4.9, -4.3, -4.7] {
            let h = 1e-6;
            let fd = (mollifier(y + h, a, b) - mollifier(y - h, a, b)) / (2.0 * h);
            assert_abs_diff_eq!(mollifier_deriv(y, a, b), fd, epsilon = 1e-6);
        }
        assert_eq!(mollifier_deriv(1.0, 1.0, 4.0), 0.0);
        assert_eq!(mollifier_deriv(6.0, 1.0, 4.0), 0.0);
    }

    #[test]
    fn test_function_evaluation() {
        // global linear at phi = 100: f(x) = x - 10.1 + 3
        let f = TestFunctionSpec::global_linear(100.0, 3.0).unwrap();
        assert_abs_diff_eq!(f.eval(10.1).unwrap(), 3.0, epsilon = 1e-12);
        let f3 = TestFunctionSpec::global_log(100.0, 3.0).unwrap();
        let c3: f64 = 3.0 + 1.0 / 3.0;
        assert_abs_diff_eq!(
            f3.eval(10.1).unwrap(),
            c3 - c3.ln(),
            epsilon = 1e-12
        );
        // log domain error fires
        assert!(matches!(
            f3.eval(10.1 - 2.0 * c3),
            Err(DmpError::LogDomain { .. })
        ));
        // poly base via Horner
        let p = TestFunctionSpec::new(FnBase::Poly(vec![1.0, 0.0, 2.0]), 0.0, 1.0, None).unwrap();
        assert_abs_diff_eq!(p.eval(3.0).unwrap(), 19.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.deriv_bare(3.0).unwrap(), 12.0, epsilon = 1e-12);
    }

    #[test]
    fn local_cutoff_zero_region_short_circuits_log() {
        // h3 with c = 0.5 is undefined at y = -5, but the cutoff vanishes
        // there, so the product evaluates to 0 rather than erroring.
        let f = TestFunctionSpec::local_edge(
            FnBase::LogShift { c: 0.5 },
            12.1,
            1.0,
            (0.2, 0.25),
        )
        .unwrap();
        assert_eq!(f.eval(12.1 - 5.0).unwrap(), 0.0);
        // inside the cutoff the domain is respected by construction
        assert!(f.eval(12.1 - 0.3).unwrap() > 0.0);
    }

    #[test]
    fn default_log_cutoff_is_domain_safe_and_wide_cutoff_rejected() {
        let params = TestParams::defaults(200);
        assert!(params.spec(TestKind::T3l, 50.0).is_ok());
        let mut bad = TestParams::defaults(200);
        bad.mollifier_log = (1.0, 4.0);
        assert!(bad.spec(TestKind::T3l, 50.0).is_err());
    }

    #[test]
    fn stat_raw_hand_values() {
        // phi = 100, gt = 10.1; eigenvalues chosen for exact arithmetic
        let params = TestParams::defaults(16);
        let eigs = [9.1, 10.1, 11.1, 12.1];
        let t1 = stat_raw(&eigs, TestKind::T1g, 100.0, &params).unwrap();
        // sum (ev - 10.1 + 3) = (2 + 3 + 4 + 5)
        assert_abs_diff_eq!(t1, 14.0, epsilon = 1e-10);
        let t2 = stat_raw(&eigs, TestKind::T2g, 100.0, &params).unwrap();
        assert_abs_diff_eq!(t2, 4.0 + 9.0 + 16.0 + 25.0, epsilon = 1e-10);
        let t4 = stat_raw(&eigs, TestKind::T4g, 100.0, &params).unwrap();
        assert_abs_diff_eq!(t4, 16.0 * 54.0 / 196.0, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_ratio_detected() {
        let params = TestParams::defaults(4);
        // symmetric spectrum around gt - c makes T1 = 0
        let eigs = [10.1 - 4.0, 10.1 - 2.0]; // (ev - 10.1 + 3) = -1, +1
        assert!(matches!(
            stat_raw(&eigs, TestKind::T4g, 100.0, &params),
            Err(DmpError::DegenerateRatio)
        ));
    }

    #[test]
    fn kappa4_range_enforced() {
        let params = TestParams::defaults(200);
        assert!(matches!(
            NullCalibration::new(TestKind::T1g, 200, 50.0, -2.0, &params),
            Err(DmpError::KappaRange { .. })
        ));
        assert!(NullCalibration::new(TestKind::T1g, 200, 50.0, -1.5, &params).is_ok());
    }

    #[test]
    fn global_calibrations_closed_form() {
        let params = TestParams::defaults(200);
        let k4 = -1.5;
        let c1 = NullCalibration::new(TestKind::T1g, 200, 50.0, k4, &params).unwrap();
        assert_abs_diff_eq!(c1.coeff_n, 3.0 - 1.0 / 50f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(c1.sd, (0.5f64).sqrt(), epsilon = 1e-14);
        let c2 = NullCalibration::new(TestKind::T2g, 200, 50.0, k4, &params).unwrap();
        assert_abs_diff_eq!(
            c2.coeff_n,
            1.0 + 9.0 - 6.0 / 50f64.sqrt() + 1.0 / 50.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(c2.shift, -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(c2.sd * c2.sd, 4.0 + 36.0 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn t3g_centering_integral_pin() {
        // oracle: int log(x - gt + 10/3) drho0 at phi = 50 and the C3 constant
        let params = TestParams::defaults(200);
        let cal = NullCalibration::new(TestKind::T3g, 200, 50.0, 0.0, &params).unwrap();
        assert_abs_diff_eq!(cal.coeff_n, 2.08422180365651, epsilon = 1e-9);
        assert_abs_diff_eq!(
            cal.shift,
            -0.5 * (1.0 - 1.0f64 / 9.0).ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn local_centering_pins() {
        // oracle values at n = 200, phi = 50
        let params = TestParams::defaults(200);
        let c1 = NullCalibration::new(TestKind::T1l, 200, 50.0, 0.0, &params).unwrap();
        assert_abs_diff_eq!(c1.coeff_n, -0.596359150554, epsilon = 1e-7);
        assert_eq!(c1.shift, 0.0);
        let c2 = NullCalibration::new(TestKind::T2l, 200, 50.0, 0.0, &params).unwrap();
        assert_abs_diff_eq!(c2.coeff_n, 1.963926990395, epsilon = 1e-7);
        let c3 = NullCalibration::new(TestKind::T3l, 200, 50.0, 0.0, &params).unwrap();
        assert_abs_diff_eq!(c3.coeff_n, 0.004980116597, epsilon = 1e-7);
        assert_abs_diff_eq!(c3.shift, (0.5 - 0.5f64.ln()) / 4.0, epsilon = 1e-12);
        let c4 = NullCalibration::new(TestKind::T4l, 200, 50.0, 0.0, &params).unwrap();
        assert_abs_diff_eq!(
            200.0 * c4.coeff_n,
            1104.43,
            epsilon = 0.05
        );
    }

    #[test]
    fn local_calibration_ignores_kappa4_bitwise() {
        let params = TestParams::defaults(200);
        for kind in [TestKind::T1l, TestKind::T2l, TestKind::T3l, TestKind::T4l] {
            let a = NullCalibration::new(kind, 200, 50.0, 0.0, &params).unwrap();
            let b = NullCalibration::new(kind, 200, 50.0, 2.0, &params).unwrap();
            assert_eq!(a.coeff_n.to_bits(), b.coeff_n.to_bits());
            assert_eq!(a.shift.to_bits(), b.shift.to_bits());
            assert_eq!(a.sd.to_bits(), b.sd.to_bits());
            assert!(a.kappa4.is_none());
        }
    }

    #[test]
    fn t4g_literal_flag_changes_constants() {
        let mut params = TestParams::defaults(200);
        let delta = NullCalibration::new(TestKind::T4g, 200, 50.0, 0.0, &params).unwrap();
        params.t4g_literal = true;
        let lit = NullCalibration::new(TestKind::T4g, 200, 50.0, 0.0, &params).unwrap();
        assert!(delta.coeff_n != lit.coeff_n || delta.sd != lit.sd);
        // literal constants as printed
        let d: f64 = 3.0 - 2.0 / 50f64.sqrt();
        assert_abs_diff_eq!(lit.coeff_n, 1.0 + 1.0 / (d * d), epsilon = 1e-14);
        assert_abs_diff_eq!(lit.shift, d * d, epsilon = 1e-14);
        assert_abs_diff_eq!(lit.sd, (4.0 + 8.0 / 9.0) / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn decide_uses_exact_quantile() {
        // z_{0.975} = 1.9599639845400545: anything above rejects, below not
        assert!(!decide(1.9599, 0.05).unwrap());
        assert!(decide(1.96, 0.05).unwrap());
        assert!(decide(-1.96, 0.05).unwrap());
        assert!(decide(1.9599639845400545 + 1e-9, 0.05).unwrap());
        assert!(!decide(1.9599639845400545 - 1e-9, 0.05).unwrap());
        assert!(decide(3.0, 0.05).unwrap());
        // two-sided p-value pin: Phi(3) = 0.998650101968369897
        assert_abs_diff_eq!(
            p_value(3.0),
            2.0 * (1.0 - 0.998650101968369897),
            epsilon = 1e-12
        );
    }

    #[test]
    fn standardize_centers_synthetic_sample() {
        // Draw "eigenvalues" directly from the null law quantiles; T1g then
        // sits near its deterministic centering.
        let phi = 50.0;
        let n = 400;
        let sp = law::PopulationSpectrum::identity(phi).unwrap();
        let g = law::density(&sp, &law::DensityOptions::default()).unwrap();
        let (xs, cdf) = g.cdf().unwrap();
        let mut eigs: Vec<f64> = (0..n)
            .map(|i| {
                let q = (i as f64 + 0.5) / n as f64;
                let idx = cdf.partition_point(|&v| v < q).min(xs.len() - 1);
                xs[idx]
            })
            .collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let params = TestParams::defaults(n);
        let (_, z) = standardize(&eigs, TestKind::T1g, phi, 0.0, &params).unwrap();
        assert!(z.abs() < 3.0, "z = {z}");
    }
}
