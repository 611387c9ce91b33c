//! Block-fading channels, training-based MMSE estimation and the
//! estimate/error variance split used by every protocol formula.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::{self, Accumulator, CGaussian, McPlan, MomentEstimate, Welford};

/// Relative residual above which the MMSE linear solve is rejected.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Variance of a channel split into the variance of its estimate and of
/// the estimation error. `total == est + err` holds exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceSplit {
    total: f64,
    est: f64,
    err: f64,
}

impl VarianceSplit {
    /// Splits `total` so that the estimate carries `est`.
    pub fn from_estimate(total: f64, est: f64) -> Result<Self> {
        check_variance("total", total)?;
        check_variance("est", est)?;
        if est > total {
            return Err(Error::invalid(format!(
                "estimate variance {est} exceeds channel variance {total}"
            )));
        }
        Self::from_parts(est, total - est)
    }

    /// Builds the split from its two components; `total` is their sum.
    pub fn from_parts(est: f64, err: f64) -> Result<Self> {
        check_variance("est", est)?;
        check_variance("err", err)?;
        Ok(Self {
            total: est + err,
            est,
            err,
        })
    }

    /// Validates a fully specified triple to machine precision.
    pub fn new(total: f64, est: f64, err: f64) -> Result<Self> {
        let split = Self::from_parts(est, err)?;
        check_variance("total", total)?;
        if (split.total - total).abs() > 4.0 * f64::EPSILON * total.max(1.0) {
            return Err(Error::invalid(format!(
                "variance split violates total = est + err: {total} != {est} + {err}"
            )));
        }
        Ok(split)
    }

    /// Split with unit total and the given estimate variance.
    pub fn unit(est: f64) -> Result<Self> {
        Self::from_estimate(1.0, est)
    }

    /// Error-free split: the estimate is the channel.
    pub fn perfect(total: f64) -> Result<Self> {
        Self::from_parts(total, 0.0)
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn est(&self) -> f64 {
        self.est
    }

    pub fn err(&self) -> f64 {
        self.err
    }

    /// Same channel variance with the estimate made exact.
    pub fn to_perfect(self) -> Self {
        Self {
            total: self.total,
            est: self.total,
            err: 0.0,
        }
    }
}

fn check_variance(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "variance {name} must be finite and >= 0, got {v}"
        )))
    }
}

/// Block and training dimensions of a point-to-point link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainingConfig {
    /// Coherence block length in symbols.
    pub t: usize,
    pub t_tau: usize,
    pub t_d: usize,
    /// Training SNR.
    pub rho_tau: f64,
    /// Transmit antennas.
    pub m: usize,
    /// Receive antennas.
    pub n: usize,
}

impl TrainingConfig {
    pub fn new(t_tau: usize, t_d: usize, rho_tau: f64, m: usize, n: usize) -> Result<Self> {
        let cfg = Self {
            t: t_tau + t_d,
            t_tau,
            t_d,
            rho_tau,
            m,
            n,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_tau == 0 || self.t_d == 0 || self.m == 0 || self.n == 0 {
            return Err(Error::invalid("T_tau, T_d, M and N must all be positive"));
        }
        if self.t != self.t_tau + self.t_d {
            return Err(Error::invalid(format!(
                "block length {} != T_tau {} + T_d {}",
                self.t, self.t_tau, self.t_d
            )));
        }
        if self.t_tau < self.m {
            return Err(Error::invalid(format!(
                "T_tau = {} < M = {}: channel is not identifiable",
                self.t_tau, self.m
            )));
        }
        if !(self.rho_tau >= 0.0) || !self.rho_tau.is_finite() {
            return Err(Error::invalid(format!(
                "training SNR must be >= 0, got {}",
                self.rho_tau
            )));
        }
        Ok(())
    }

    /// Orthogonal DFT training block, `T_tau x M`, with `s* s = T_tau I`.
    pub fn dft_training(&self) -> DMatrix<Complex64> {
        let t_tau = self.t_tau as f64;
        DMatrix::from_fn(self.t_tau, self.m, |t, m| {
            Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (t * m) as f64 / t_tau)
        })
    }
}

/// A channel realization together with its estimate and estimation error.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub h_hat: DMatrix<Complex64>,
    pub h_tilde: DMatrix<Complex64>,
    pub h: DMatrix<Complex64>,
}

/// Draws `(h_hat, h_tilde)` independently from `CN(0, est)` and `CN(0, err)`
/// and forms `h = h_hat + h_tilde`.
pub fn draw_split_channel<R: Rng + ?Sized>(
    split: &VarianceSplit,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> ChannelDraw {
    let est = CGaussian::new(split.est()).expect("validated split");
    let err = CGaussian::new(split.err()).expect("validated split");
    let mut h_hat = DMatrix::zeros(rows, cols);
    let mut h_tilde = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            h_hat[(i, j)] = est.sample(rng);
            h_tilde[(i, j)] = err.sample(rng);
        }
    }
    let h = &h_hat + &h_tilde;
    ChannelDraw { h_hat, h_tilde, h }
}

/// MMSE channel estimate from a training block, assuming a unit-variance
/// channel prior:
///
/// `H_hat = sqrt(M/rho) (M/rho I + s* s)^-1 s* y`
///
/// The `M x M` system is solved by LU, never inverted explicitly.
pub fn mmse_estimate(
    y_tau: &DMatrix<Complex64>,
    s_tau: &DMatrix<Complex64>,
    cfg: &TrainingConfig,
) -> Result<DMatrix<Complex64>> {
    cfg.validate()?;
    if cfg.rho_tau <= 0.0 {
        return Err(Error::invalid("MMSE estimation needs a positive training SNR"));
    }
    if s_tau.shape() != (cfg.t_tau, cfg.m) {
        return Err(Error::invalid(format!(
            "training block is {:?}, expected ({}, {})",
            s_tau.shape(),
            cfg.t_tau,
            cfg.m
        )));
    }
    if y_tau.shape() != (cfg.t_tau, cfg.n) {
        return Err(Error::invalid(format!(
            "received block is {:?}, expected ({}, {})",
            y_tau.shape(),
            cfg.t_tau,
            cfg.n
        )));
    }

    let m = cfg.m as f64;
    let s_adj = s_tau.adjoint();
    let mut system = &s_adj * s_tau;
    for i in 0..cfg.m {
        system[(i, i)] += Complex64::new(m / cfg.rho_tau, 0.0);
    }
    let rhs = &s_adj * y_tau;
    let x = system
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular MMSE system".into()))?;

    let residual = (&system * &x - &rhs).norm();
    let scale = rhs.norm().max(f64::MIN_POSITIVE);
    if rhs.norm() > 0.0 && residual / scale > SOLVE_TOLERANCE {
        return Err(Error::Numerical(format!(
            "MMSE solve residual {:.3e} exceeds {SOLVE_TOLERANCE:e}",
            residual / scale
        )));
    }
    Ok(x * Complex64::new((m / cfg.rho_tau).sqrt(), 0.0))
}

/// Received training block `y = sqrt(rho/M) s H + v` for a unit-variance
/// channel and unit-variance noise.
pub fn receive_training<R: Rng + ?Sized>(
    h: &DMatrix<Complex64>,
    s_tau: &DMatrix<Complex64>,
    cfg: &TrainingConfig,
    rng: &mut R,
) -> DMatrix<Complex64> {
    let noise = CGaussian::standard();
    let gain = Complex64::new((cfg.rho_tau / cfg.m as f64).sqrt(), 0.0);
    let mut y = s_tau * h * gain;
    for v in y.iter_mut() {
        *v += noise.sample(rng);
    }
    y
}

/// Empirical moments of end-to-end MMSE training, averaged per entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrthogonalityReport {
    /// Real part of `E{H_hat (H - H_hat)*}`.
    pub cross_re: MomentEstimate,
    /// Imaginary part of `E{H_hat (H - H_hat)*}`.
    pub cross_im: MomentEstimate,
    /// `E{|H_hat|^2}`.
    pub est_power: MomentEstimate,
    /// `E{|H - H_hat|^2}`.
    pub err_power: MomentEstimate,
}

impl OrthogonalityReport {
    /// The cross-moment is within `k` confidence half-widths of zero.
    pub fn orthogonal_within(&self, k: f64) -> bool {
        self.cross_re.mean.abs() <= k * self.cross_re.ci95_half_width
            && self.cross_im.mean.abs() <= k * self.cross_im.ci95_half_width
    }
}

/// Runs channel draw, training transmission and MMSE estimation per trial
/// using the DFT training block, and measures the estimate/error moments.
pub fn verify_orthogonality(cfg: &TrainingConfig, plan: &McPlan) -> Result<OrthogonalityReport> {
    cfg.validate()?;
    let s_tau = cfg.dft_training();
    let channel = CGaussian::standard();
    let entries = (cfg.m * cfg.n) as f64;

    // Surface configuration errors before the parallel run.
    {
        let mut rng = stats::derive_stream(plan.master_seed(), u64::MAX);
        let h = DMatrix::from_fn(cfg.m, cfg.n, |_, _| channel.sample(&mut rng));
        let y = receive_training(&h, &s_tau, cfg, &mut rng);
        mmse_estimate(&y, &s_tau, cfg)?;
    }

    let acc = stats::run::<([Welford; 4], Option<Error>), _>(plan, |_, rng, acc| {
        if acc.1.is_some() {
            return;
        }
        let h = DMatrix::from_fn(cfg.m, cfg.n, |_, _| channel.sample(rng));
        let y = receive_training(&h, &s_tau, cfg, rng);
        match mmse_estimate(&y, &s_tau, cfg) {
            Ok(h_hat) => {
                let mut cross = Complex64::new(0.0, 0.0);
                let mut est = 0.0;
                let mut err = 0.0;
                for (a, b) in h_hat.iter().zip(h.iter()) {
                    let e = b - a;
                    cross += a * e.conj();
                    est += a.norm_sqr();
                    err += e.norm_sqr();
                }
                acc.0[0].push(cross.re / entries);
                acc.0[1].push(cross.im / entries);
                acc.0[2].push(est / entries);
                acc.0[3].push(err / entries);
            }
            Err(e) => acc.1 = Some(e),
        }
    });
    if let Some(e) = acc.1 {
        return Err(e);
    }
    Ok(OrthogonalityReport {
        cross_re: acc.0[0].estimate(),
        cross_im: acc.0[1].estimate(),
        est_power: acc.0[2].estimate(),
        err_power: acc.0[3].estimate(),
    })
}

impl<A: Accumulator + Clone> Accumulator for (A, Option<Error>) {
    fn merge(&mut self, other: &Self) {
        self.0.merge(&other.0);
        if self.1.is_none() {
            self.1.clone_from(&other.1);
        }
    }
}
