//! Single-antenna relay network: `K` relays, one antenna everywhere, and the
//! three training protocols that decide what channel knowledge reaches the
//! destination.
//!
//! - `P1`: relays forward their backward estimates; the destination also
//!   estimates each forward channel, so it knows `h_hat_k` and `g_hat_k`.
//! - `P2`: relays forward the raw training signal; the destination estimates
//!   each compound channel `a_k = h_k g_k`.
//! - `P3`: each relay feeds forward `A_k = h_hat_k h_hat_k^* g_hat_k^*` over
//!   the air, so the destination sees a noisy version of the summed
//!   effective CSI `sum A_k g_k` directly.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::Serialize;

use crate::channel::VarianceSplit;
use crate::error::{Error, Result};
use crate::stats::{self, Bivariate, CGaussian, McPlan, Welford};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ProtocolKind {
    P1,
    P2,
    P3,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [ProtocolKind::P1, ProtocolKind::P2, ProtocolKind::P3];
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolKind::P1 => "P1",
            ProtocolKind::P2 => "P2",
            ProtocolKind::P3 => "P3",
        })
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "P1" => Ok(ProtocolKind::P1),
            "P2" => Ok(ProtocolKind::P2),
            "P3" => Ok(ProtocolKind::P3),
            other => Err(Error::invalid(format!(
                "unknown protocol {other:?}, expected P1, P2 or P3"
            ))),
        }
    }
}

/// How an estimate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Analytic => "analytic",
            Method::MonteCarlo => "monte_carlo",
        })
    }
}

/// Effective SNR: received signal power over overall noise power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EsnrEstimate {
    /// `+inf` when the measured noise power is exactly zero.
    pub value: f64,
    pub method: Method,
    pub ci95_half_width: f64,
    pub trials: u64,
}

impl EsnrEstimate {
    pub fn analytic(value: f64) -> Self {
        Self {
            value,
            method: Method::Analytic,
            ci95_half_width: 0.0,
            trials: 0,
        }
    }

    pub(crate) fn from_ratio(r: stats::RatioEstimate) -> Self {
        Self {
            value: r.value,
            method: Method::MonteCarlo,
            ci95_half_width: r.ci95_half_width,
            trials: r.trials,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        (self.value - value).abs() <= self.ci95_half_width
    }

    pub fn lower(&self) -> f64 {
        self.value - self.ci95_half_width
    }

    pub fn upper(&self) -> f64 {
        self.value + self.ci95_half_width
    }

    /// Strictly above `other` with non-overlapping 95% intervals.
    pub fn separated_above(&self, other: &EsnrEstimate) -> bool {
        self.lower() > other.upper()
    }
}

/// Worst-case-noise capacity lower bound in bits per channel use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityEstimate {
    pub bits_per_channel_use: f64,
    pub ci95_half_width: f64,
    pub trials: u64,
    /// Fraction of the block spent on data, `(T - T_tau) / T`.
    pub prefactor: f64,
}

impl CapacityEstimate {
    pub fn lower(&self) -> f64 {
        self.bits_per_channel_use - self.ci95_half_width
    }

    pub fn upper(&self) -> f64 {
        self.bits_per_channel_use + self.ci95_half_width
    }

    pub fn separated_above(&self, other: &CapacityEstimate) -> bool {
        self.lower() > other.upper()
    }
}

/// Data-phase fraction for one training and one data symbol per block.
pub const CAPACITY_PREFACTOR: f64 = 0.5;

/// All scalars of the single-antenna network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingleAntennaConfig {
    pub k: usize,
    pub rho_s: f64,
    pub rho_r: f64,
    /// Relay power during the feedforward phase (P3).
    pub rho_rf: f64,
    pub sigma_s_sq: f64,
    /// Relay noise variance, common to all relays.
    pub sigma_n_sq: f64,
    /// Destination noise variance.
    pub sigma_z_sq: f64,
    /// Feedforward-phase noise variance (P3).
    pub sigma_zf_sq: f64,
    /// Source-to-relay channel `h`.
    pub backward: VarianceSplit,
    /// Relay-to-destination channel `g`.
    pub forward: VarianceSplit,
    /// Add relay and destination noise to the simulated overall noise.
    /// Off by default: the protocols are compared on their CSI residue only.
    pub include_overall_noise: bool,
}

impl SingleAntennaConfig {
    /// Unit powers and noises, feedforward noise at a tenth of the
    /// destination noise.
    pub fn new(k: usize, backward: VarianceSplit, forward: VarianceSplit) -> Result<Self> {
        let cfg = Self {
            k,
            rho_s: 1.0,
            rho_r: 1.0,
            rho_rf: 1.0,
            sigma_s_sq: 1.0,
            sigma_n_sq: 1.0,
            sigma_z_sq: 1.0,
            sigma_zf_sq: 0.1,
            backward,
            forward,
            include_overall_noise: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Unit-variance channels with the given estimate variances.
    pub fn unit(k: usize, h_est: f64, g_est: f64) -> Result<Self> {
        Self::new(k, VarianceSplit::unit(h_est)?, VarianceSplit::unit(g_est)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("relay count K must be >= 1"));
        }
        for (name, v) in [
            ("rho_s", self.rho_s),
            ("rho_r", self.rho_r),
            ("rho_rf", self.rho_rf),
            ("sigma_s_sq", self.sigma_s_sq),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("sigma_n_sq", self.sigma_n_sq),
            ("sigma_z_sq", self.sigma_z_sq),
            ("sigma_zf_sq", self.sigma_zf_sq),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Relay amplification `rho_k` implied by the unit average transmit
    /// power constraint.
    pub fn relay_gain(&self) -> Result<f64> {
        let (h, g) = (&self.backward, &self.forward);
        let u_power = (self.rho_s * (h.est() + h.total()) * self.sigma_s_sq + self.sigma_n_sq) * h.est();
        let norm = u_power * g.est();
        if norm == 0.0 {
            return Err(Error::degenerate(
                "relay power normalization",
                vanished(self, &[Var::HEst, Var::GEst]),
            ));
        }
        Ok(self.rho_r * self.rho_s / norm)
    }

    /// Power of the P3 feedforward product `A_k g_k`, `E{|h_hat|^4} E{|g_hat|^2 |g|^2} = 2 sigma_hhat^4 sigma_ghat^2 (sigma_ghat^2 + sigma_g^2)`.
    pub fn feedforward_power(&self) -> f64 {
        let (h, g) = (&self.backward, &self.forward);
        2.0 * h.est() * h.est() * g.est() * (g.est() + g.total())
    }
}

#[derive(Clone, Copy)]
enum Var {
    HEst,
    HErr,
    GEst,
    GErr,
    NoiseN,
}

fn vanished(cfg: &SingleAntennaConfig, vars: &[Var]) -> Vec<&'static str> {
    vars.iter()
        .filter_map(|v| {
            let (name, value) = match v {
                Var::HEst => ("backward.est", cfg.backward.est()),
                Var::HErr => ("backward.err", cfg.backward.err()),
                Var::GEst => ("forward.est", cfg.forward.est()),
                Var::GErr => ("forward.err", cfg.forward.err()),
                Var::NoiseN => ("sigma_n_sq", cfg.sigma_n_sq),
            };
            (value == 0.0).then_some(name)
        })
        .collect()
}

/// Numerator, denominator and `K`-slope of a protocol's closed form.
fn esnr_parts(kind: ProtocolKind, cfg: &SingleAntennaConfig) -> (f64, f64, f64) {
    let (h, g) = (&cfg.backward, &cfg.forward);
    let k = cfg.k as f64;
    let est = h.est() * g.est();
    match kind {
        ProtocolKind::P1 => {
            let den = 2.0 * h.est() * g.err() + h.err() * (g.total() + g.est());
            ((k + 3.0) * est, den, est)
        }
        ProtocolKind::P2 => {
            let den = h.est() * g.err() + h.err() * g.total();
            ((k + 1.0) * est, den, est)
        }
        ProtocolKind::P3 => {
            let g_sum = g.est() + g.total();
            let num = 2.0 * h.est() * g_sum + (k - 1.0) * est;
            (num, h.err() * g_sum, est)
        }
    }
}

fn degenerate_esnr(kind: ProtocolKind, cfg: &SingleAntennaConfig) -> Error {
    let vars: &[Var] = match kind {
        ProtocolKind::P1 | ProtocolKind::P2 => &[Var::HEst, Var::HErr, Var::GErr],
        ProtocolKind::P3 => &[Var::HErr],
    };
    Error::degenerate(format!("{kind} effective SNR"), vanished(cfg, vars))
}

/// Closed-form effective SNR of a protocol (overall noise neglected, P3
/// feedforward noise neglected).
pub fn esnr_analytic(kind: ProtocolKind, cfg: &SingleAntennaConfig) -> Result<EsnrEstimate> {
    cfg.validate()?;
    let (num, den, _) = esnr_parts(kind, cfg);
    if den == 0.0 {
        return Err(degenerate_esnr(kind, cfg));
    }
    Ok(EsnrEstimate::analytic(num / den))
}

/// Coefficient of `K` in the closed form; `esnr_analytic / K` tends to it.
pub fn esnr_slope(kind: ProtocolKind, cfg: &SingleAntennaConfig) -> Result<f64> {
    cfg.validate()?;
    let (_, den, slope) = esnr_parts(kind, cfg);
    if den == 0.0 {
        return Err(degenerate_esnr(kind, cfg));
    }
    Ok(slope / den)
}

/// Estimate-variance grid `0.1, 0.2, ..., 0.9`.
pub fn estimate_grid() -> [f64; 9] {
    std::array::from_fn(|i| (i + 1) as f64 / 10.0)
}

/// Mean closed-form eSNR over the 9x9 grid of backward/forward estimate
/// variances with unit channel variances.
pub fn esnr_grid_average(kind: ProtocolKind, k: usize) -> Result<f64> {
    let grid = estimate_grid();
    let mut sum = 0.0;
    for &h in &grid {
        for &g in &grid {
            sum += esnr_analytic(kind, &SingleAntennaConfig::unit(k, h, g)?)?.value;
        }
    }
    Ok(sum / (grid.len() * grid.len()) as f64)
}

/// Symbols spent on training and CSI transfer before data can flow.
pub fn training_duration(kind: ProtocolKind, k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::invalid("relay count K must be >= 1"));
    }
    Ok(match kind {
        ProtocolKind::P1 => 2 * k + 1,
        ProtocolKind::P2 => k + 1,
        ProtocolKind::P3 => 3,
    })
}

/// Variance split of the compound channel `a = h g`, treating the product of
/// two zero-mean Gaussians as having the product of their variances.
pub fn compound_split(backward: &VarianceSplit, forward: &VarianceSplit) -> Result<VarianceSplit> {
    VarianceSplit::from_estimate(backward.total() * forward.total(), backward.est() * forward.est())
}

/// Signal-level simulation of the destination signal under the protocol's
/// split between known effective CSI and residue.
///
/// Per trial every relay draws `h_hat, h_tilde, g_hat, g_tilde` and its noise,
/// amplifies with the analytic power normalization and the destination
/// splits the result into the part it can coherently combine and the part
/// it must treat as noise. The data symbol multiplies both parts and is
/// averaged out analytically.
///
/// P2 draws the compound estimate and error as independent
/// `CN(0, sigma_hhat^2 sigma_ghat^2)` and `CN(0, sigma_h^2 sigma_g^2 - sigma_hhat^2 sigma_ghat^2)`
/// terms. With the literal product `a_hat = h_hat g_hat` the received signal is
/// identical to P1's and so is the resulting eSNR.
pub fn simulate_destination(kind: ProtocolKind, cfg: &SingleAntennaConfig, plan: &McPlan) -> Result<EsnrEstimate> {
    cfg.validate()?;
    let gain = cfg.relay_gain()?;
    let noise_amp = (gain / cfg.rho_s).sqrt();
    let (h, g) = (&cfg.backward, &cfg.forward);
    let h_hat = CGaussian::new(h.est())?;
    let h_tilde = CGaussian::new(h.err())?;
    let g_hat = CGaussian::new(g.est())?;
    let g_tilde = CGaussian::new(g.err())?;
    let relay_noise = CGaussian::new(cfg.sigma_n_sq)?;
    let dest_noise = CGaussian::new(cfg.sigma_z_sq)?;
    let ff_noise = CGaussian::new(cfg.sigma_zf_sq)?;
    let compound = compound_split(h, g)?;
    let a_hat = CGaussian::new(compound.est())?;
    let a_tilde = CGaussian::new(compound.err())?;
    // z^f / sqrt(rho'_Rf) with rho'_Rf = rho_Rf / var{A_k g_k}.
    let ff_scale = (cfg.feedforward_power() / cfg.rho_rf).sqrt();
    let overall = cfg.include_overall_noise;

    let acc = stats::run::<Bivariate, _>(plan, |_, rng, acc| {
        let zero = Complex64::new(0.0, 0.0);
        let (mut sig, mut res, mut v) = (zero, zero, zero);
        for _ in 0..cfg.k {
            let hh = h_hat.sample(rng);
            let ht = h_tilde.sample(rng);
            let gh = g_hat.sample(rng);
            let gt = g_tilde.sample(rng);
            let n = relay_noise.sample(rng);
            let hg = gh + gt;
            let mf = hh.conj() * gh.conj();
            match kind {
                ProtocolKind::P1 => {
                    sig += hh.norm_sqr() * gh.norm_sqr();
                    res += hh.norm_sqr() * gh.conj() * gt + ht * mf * hg;
                }
                ProtocolKind::P2 => {
                    let ah = a_hat.sample(rng);
                    let at = a_tilde.sample(rng);
                    sig += ah.norm_sqr();
                    res += at * ah.conj();
                }
                ProtocolKind::P3 => {
                    sig += hh.norm_sqr() * gh.conj() * hg;
                    res += ht * mf * hg;
                }
            }
            if overall {
                v += n * mf * hg;
            }
        }
        if kind == ProtocolKind::P3 {
            let zf = ff_noise.sample(rng) * ff_scale;
            sig += zf;
            res -= zf;
        }
        let signal_power = cfg.sigma_s_sq * gain * sig.norm_sqr();
        let mut noise_power = cfg.sigma_s_sq * gain * res.norm_sqr();
        if overall {
            let v = noise_amp * v + dest_noise.sample(rng);
            noise_power += v.norm_sqr();
        }
        acc.push(signal_power, noise_power);
    });
    Ok(EsnrEstimate::from_ratio(acc.ratio()))
}

/// Worst-case-noise capacity bound at the configured relay noise.
pub fn capacity_worst(kind: ProtocolKind, cfg: &SingleAntennaConfig, plan: &McPlan) -> Result<CapacityEstimate> {
    Ok(capacity_worst_sweep(kind, cfg, &[cfg.sigma_n_sq], plan)?[0])
}

/// Capacity bound for each relay noise variance in `sigma_n_sq`, evaluated
/// on one shared set of channel draws.
///
/// Per trial, with `A = sum |h_hat|^2 |g_hat|^2` and `B = K sigma_hhat^2 sigma_ghat^2`:
///
/// - P1: `log2(1 + A^2 / (B (C + 2 sigma_hhat^2 sigma_gtilde^2)))`
/// - P2: `log2(1 + A^2 / (B C'))`
/// - P3: `log2(1 + (A^2 + |sum |h_hat|^2 g_hat^* g_tilde|^2) / (B C))`
///
/// where `C = (sigma_htilde^2 + sigma_n^2)(sigma_ghat^2 + sigma_g^2)` and
/// `C' = sigma_hhat^2 sigma_gtilde^2 + sigma_htilde^2 sigma_g^2 + (sigma_ghat^2 + sigma_g^2) sigma_n^2`.
pub fn capacity_worst_sweep(
    kind: ProtocolKind,
    cfg: &SingleAntennaConfig,
    sigma_n_sq: &[f64],
    plan: &McPlan,
) -> Result<Vec<CapacityEstimate>> {
    cfg.validate()?;
    if sigma_n_sq.is_empty() {
        return Err(Error::invalid("relay noise sweep needs at least one value"));
    }
    let (h, g) = (&cfg.backward, &cfg.forward);
    let b = cfg.k as f64 * h.est() * g.est();
    if b == 0.0 {
        // No estimate energy: A = 0 surely and the bound is exactly zero.
        return Ok(vec![
            CapacityEstimate {
                bits_per_channel_use: 0.0,
                ci95_half_width: 0.0,
                trials: plan.trials(),
                prefactor: CAPACITY_PREFACTOR,
            };
            sigma_n_sq.len()
        ]);
    }
    let mut denominators = Vec::with_capacity(sigma_n_sq.len());
    for &n in sigma_n_sq {
        if !(n >= 0.0) || !n.is_finite() {
            return Err(Error::invalid(format!("sigma_n_sq must be finite and >= 0, got {n}")));
        }
        let c = (h.err() + n) * (g.est() + g.total());
        let den = match kind {
            ProtocolKind::P1 => b * (c + 2.0 * h.est() * g.err()),
            ProtocolKind::P2 => b * (h.est() * g.err() + h.err() * g.total() + (g.est() + g.total()) * n),
            ProtocolKind::P3 => b * c,
        };
        if den == 0.0 {
            let probe = SingleAntennaConfig { sigma_n_sq: n, ..*cfg };
            return Err(Error::degenerate(
                format!("{kind} capacity bound"),
                vanished(&probe, &[Var::HErr, Var::GErr, Var::NoiseN]),
            ));
        }
        denominators.push(den);
    }

    let h_hat = CGaussian::new(h.est())?;
    let g_hat = CGaussian::new(g.est())?;
    let g_tilde = CGaussian::new(g.err())?;
    let acc = stats::run::<Vec<Welford>, _>(plan, |_, rng, acc| {
        if acc.is_empty() {
            acc.resize(denominators.len(), Welford::default());
        }
        let mut a = 0.0;
        let mut cross = Complex64::new(0.0, 0.0);
        for _ in 0..cfg.k {
            let hp = h_hat.sample(rng).norm_sqr();
            let gh = g_hat.sample(rng);
            let gt = g_tilde.sample(rng);
            a += hp * gh.norm_sqr();
            cross += hp * gh.conj() * gt;
        }
        let num = match kind {
            ProtocolKind::P1 | ProtocolKind::P2 => a * a,
            ProtocolKind::P3 => a * a + cross.norm_sqr(),
        };
        for (w, den) in acc.iter_mut().zip(&denominators) {
            w.push((num / den).ln_1p() / std::f64::consts::LN_2);
        }
    });
    Ok(acc
        .iter()
        .map(|w| {
            let e = w.estimate();
            CapacityEstimate {
                bits_per_channel_use: CAPACITY_PREFACTOR * e.mean,
                ci95_half_width: CAPACITY_PREFACTOR * e.ci95_half_width,
                trials: e.trials,
                prefactor: CAPACITY_PREFACTOR,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(k: usize, h: f64, g: f64) -> SingleAntennaConfig {
        SingleAntennaConfig::unit(k, h, g).unwrap()
    }

    #[test]
    fn closed_forms_at_point_nine() {
        let c = cfg(7, 0.9, 0.9);
        // Hand evaluation: 8 * 0.81 / (2 * 0.09 + 0.1 * 1.9), etc.
        let p1 = esnr_analytic(ProtocolKind::P1, &c).unwrap().value;
        let p2 = esnr_analytic(ProtocolKind::P2, &c).unwrap().value;
        let p3 = esnr_analytic(ProtocolKind::P3, &c).unwrap().value;
        assert!((p1 - 8.1 / 0.37).abs() < 1e-12, "{p1}");
        assert!((p2 - 6.48 / 0.19).abs() < 1e-12, "{p2}");
        assert!((p3 - 8.28 / 0.19).abs() < 1e-12, "{p3}");
        assert!((p1 - 21.892).abs() < 1e-3);
        assert!((p3 - 43.579).abs() < 1e-3);
        assert_eq!(esnr_analytic(ProtocolKind::P1, &c).unwrap().ci95_half_width, 0.0);
    }

    #[test]
    fn perfect_backward_estimate_degenerates_p3() {
        let c = SingleAntennaConfig::new(
            7,
            VarianceSplit::perfect(1.0).unwrap(),
            VarianceSplit::unit(0.9).unwrap(),
        )
        .unwrap();
        match esnr_analytic(ProtocolKind::P3, &c) {
            Err(Error::DegenerateEstimation { vanished, .. }) => assert_eq!(vanished, vec!["backward.err"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_averages() {
        let p3 = esnr_grid_average(ProtocolKind::P3, 7).unwrap();
        let p2 = esnr_grid_average(ProtocolKind::P2, 7).unwrap();
        let p1 = esnr_grid_average(ProtocolKind::P1, 7).unwrap();
        assert!((p3 - 8.3).abs() <= 0.05, "{p3}");
        assert!((p2 - 3.92).abs() <= 0.05, "{p2}");
        assert!((p1 - 2.67).abs() <= 0.05, "{p1}");
    }

    #[test]
    fn slope_is_large_k_limit() {
        for kind in ProtocolKind::ALL {
            let c = cfg(10_000, 0.3, 0.7);
            let ratio = esnr_analytic(kind, &c).unwrap().value / 10_000.0;
            let slope = esnr_slope(kind, &c).unwrap();
            assert!(((ratio - slope) / slope).abs() < 0.01, "{kind}: {ratio} vs {slope}");
        }
    }

    #[test]
    fn durations() {
        assert_eq!(training_duration(ProtocolKind::P1, 7).unwrap(), 15);
        assert_eq!(training_duration(ProtocolKind::P2, 7).unwrap(), 8);
        assert_eq!(training_duration(ProtocolKind::P3, 7).unwrap(), 3);
        assert_eq!(training_duration(ProtocolKind::P2, 1).unwrap(), 2);
        assert_eq!(training_duration(ProtocolKind::P3, 1).unwrap(), 3);
        assert!(training_duration(ProtocolKind::P1, 0).is_err());
    }

    #[test]
    fn compound_examples() {
        let p = VarianceSplit::perfect(1.0).unwrap();
        assert_eq!(compound_split(&p, &p).unwrap(), p);
        let s = VarianceSplit::unit(0.9).unwrap();
        let c = compound_split(&s, &s).unwrap();
        assert!((c.est() - 0.81).abs() < 1e-15 && (c.err() - 0.19).abs() < 1e-15 && c.total() == 1.0);
        let none = VarianceSplit::from_parts(0.0, 1.0).unwrap();
        let c = compound_split(&none, &VarianceSplit::unit(0.5).unwrap()).unwrap();
        assert_eq!((c.total(), c.est(), c.err()), (1.0, 0.0, 1.0));
    }

    #[test]
    fn simulator_matches_closed_forms_at_point_nine() {
        let mut c = cfg(7, 0.9, 0.9);
        c.sigma_zf_sq = 0.0;
        let plan = McPlan::new(100_000, 42).unwrap();
        for (kind, want) in [
            (ProtocolKind::P2, 6.48 / 0.19),
            (ProtocolKind::P3, 8.28 / 0.19),
            (ProtocolKind::P1, 8.1 / 0.37),
        ] {
            let est = simulate_destination(kind, &c, &plan).unwrap();
            assert_eq!(est.method, Method::MonteCarlo);
            // Three half-widths: a plain 95% check would fail one run in twenty.
            assert!(
                (est.value - want).abs() <= 3.0 * est.ci95_half_width,
                "{kind}: {est:?} vs {want}"
            );
        }
    }

    #[test]
    fn perfect_csi_noise_is_infinite_sentinel() {
        let p = VarianceSplit::perfect(1.0).unwrap();
        let c = SingleAntennaConfig::new(7, p, p).unwrap();
        let est = simulate_destination(ProtocolKind::P1, &c, &McPlan::new(1000, 1).unwrap()).unwrap();
        assert!(est.value.is_infinite() && est.value > 0.0);
    }

    #[test]
    fn overall_noise_lowers_esnr() {
        let mut c = cfg(7, 0.9, 0.9);
        let plan = McPlan::new(20_000, 5).unwrap();
        let without = simulate_destination(ProtocolKind::P1, &c, &plan).unwrap();
        c.include_overall_noise = true;
        let with = simulate_destination(ProtocolKind::P1, &c, &plan).unwrap();
        assert!(with.value < without.value);
    }

    #[test]
    fn zero_estimate_has_zero_capacity() {
        let c = SingleAntennaConfig::new(
            7,
            VarianceSplit::from_parts(0.0, 1.0).unwrap(),
            VarianceSplit::unit(0.9).unwrap(),
        )
        .unwrap();
        let cap = capacity_worst(ProtocolKind::P1, &c, &McPlan::new(1000, 1).unwrap()).unwrap();
        assert_eq!(cap.bits_per_channel_use, 0.0);
        assert!(simulate_destination(ProtocolKind::P1, &c, &McPlan::new(10, 1).unwrap()).is_err());
    }

    #[test]
    fn p1_and_p2_capacity_coincide_at_perfect_csi() {
        let p = VarianceSplit::perfect(1.0).unwrap();
        let plan = McPlan::new(5_000, 9).unwrap();
        for n in [0.3, 1.0, 2.0] {
            let c = SingleAntennaConfig {
                sigma_n_sq: n,
                ..SingleAntennaConfig::new(7, p, p).unwrap()
            };
            let a = capacity_worst(ProtocolKind::P1, &c, &plan).unwrap();
            let b = capacity_worst(ProtocolKind::P2, &c, &plan).unwrap();
            assert!((a.bits_per_channel_use - b.bits_per_channel_use).abs() <= 1e-12 * a.bits_per_channel_use);
        }
    }

    #[test]
    fn sweep_matches_single_evaluations() {
        let c = cfg(7, 0.5, 0.9);
        let plan = McPlan::new(3_000, 2).unwrap();
        let sweep = capacity_worst_sweep(ProtocolKind::P3, &c, &[0.5, 1.0], &plan).unwrap();
        let one = capacity_worst(ProtocolKind::P3, &SingleAntennaConfig { sigma_n_sq: 0.5, ..c }, &plan).unwrap();
        assert_eq!(sweep[0], one);
        assert!(sweep[0].bits_per_channel_use > sweep[1].bits_per_channel_use);
    }

    #[test]
    fn capacity_degenerate_without_noise_or_error() {
        let p = VarianceSplit::perfect(1.0).unwrap();
        let c = SingleAntennaConfig {
            sigma_n_sq: 0.0,
            ..SingleAntennaConfig::new(3, p, p).unwrap()
        };
        assert!(matches!(
            capacity_worst(ProtocolKind::P3, &c, &McPlan::new(10, 1).unwrap()),
            Err(Error::DegenerateEstimation { .. })
        ));
    }

    #[test]
    fn protocol_names_round_trip() {
        for kind in ProtocolKind::ALL {
            assert_eq!(kind.to_string().parse::<ProtocolKind>().unwrap(), kind);
        }
        assert!("P4".parse::<ProtocolKind>().is_err());
    }

    proptest! {
        #[test]
        fn analytic_esnr_is_positive_and_grows_with_k(h in 0.05f64..0.95, g in 0.05f64..0.95, k in 1usize..60) {
            for kind in ProtocolKind::ALL {
                let a = esnr_analytic(kind, &cfg(k, h, g)).unwrap().value;
                let b = esnr_analytic(kind, &cfg(k + 1, h, g)).unwrap().value;
                prop_assert!(a > 0.0 && b > a);
            }
        }

        #[test]
        fn p2_never_below_p1_pathwise_capacity(h in 0.05f64..0.95, g in 0.05f64..0.95, n in 0.0f64..2.0) {
            // Same draws; the P2 denominator is smaller by
            // sigma_htilde^2 sigma_ghat^2 + sigma_hhat^2 sigma_gtilde^2 >= 0.
            let c = SingleAntennaConfig { sigma_n_sq: n, ..cfg(4, h, g) };
            let plan = McPlan::new(200, 3).unwrap();
            let p1 = capacity_worst(ProtocolKind::P1, &c, &plan).unwrap();
            let p2 = capacity_worst(ProtocolKind::P2, &c, &plan).unwrap();
            prop_assert!(p2.bits_per_channel_use >= p1.bits_per_channel_use);
        }
    }
}
