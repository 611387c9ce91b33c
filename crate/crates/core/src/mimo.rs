//! Multi-antenna relay network with relay partitioning.
//!
//! `M` source and destination antennas, `M K` relays with `N` antennas each.
//! Relays are split into `M` disjoint subgroups of `K`; subgroup `x` serves
//! source antenna `x` and destination antenna `x` with backward-then-forward
//! matched filtering. Everything else a destination antenna hears is
//! interference.
//!
//! Three schemes differ in the channel knowledge available:
//!
//! - `S1a`: relays filter with the true channels; the destination is handed
//!   the resulting effective CSI.
//! - `S1b`: relays filter with estimates; the destination is handed the
//!   resulting effective CSI.
//! - `S2`: relays filter with estimates and feed forward their CSI products;
//!   the destination only learns a noisy estimate of the effective CSI.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::Serialize;

use crate::channel::VarianceSplit;
use crate::error::{Error, Result};
use crate::single::EsnrEstimate;
use crate::stats::{self, Accumulator, Bivariate, CGaussian, McPlan, MomentEstimate, Stream, Welford};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SchemeKind {
    S1a,
    S1b,
    S2,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::S1a, SchemeKind::S1b, SchemeKind::S2];
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::S1a => "S1a",
            SchemeKind::S1b => "S1b",
            SchemeKind::S2 => "S2",
        })
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1a" => Ok(SchemeKind::S1a),
            "s1b" => Ok(SchemeKind::S1b),
            "s2" => Ok(SchemeKind::S2),
            other => Err(Error::invalid(format!(
                "unknown scheme {other:?}, expected S1a, S1b or S2"
            ))),
        }
    }
}

/// All scalars of the multi-antenna network.
///
/// Channel statistics are indexed `[subgroup][antenna]`: `backward[x][y]`
/// describes the channel from source antenna `y` into the relays of
/// subgroup `x`, `forward[x][y]` the channel from subgroup `x` to
/// destination antenna `y`. Only the diagonal entries are ever estimated;
/// off-diagonal splits contribute their totals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MimoConfig {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub rho_s: f64,
    pub rho_r: f64,
    pub rho_rf: f64,
    /// Per source stream.
    pub sigma_s_sq: Vec<f64>,
    pub backward: Vec<Vec<VarianceSplit>>,
    pub forward: Vec<Vec<VarianceSplit>>,
    /// Relay noise per subgroup.
    pub sigma_n_sq: Vec<f64>,
    /// Noise per destination antenna.
    pub sigma_z_sq: Vec<f64>,
    pub sigma_zf_sq: f64,
    /// Destination antenna whose received signal is evaluated.
    pub destination: usize,
}

impl MimoConfig {
    /// Every link shares one backward and one forward split; unit powers and
    /// noises, feedforward noise at a tenth of the destination noise.
    pub fn homogeneous(m: usize, n: usize, k: usize, backward: VarianceSplit, forward: VarianceSplit) -> Result<Self> {
        let cfg = Self {
            m,
            n,
            k,
            rho_s: 1.0,
            rho_r: 1.0,
            rho_rf: 1.0,
            sigma_s_sq: vec![1.0; m],
            backward: vec![vec![backward; m]; m],
            forward: vec![vec![forward; m]; m],
            sigma_n_sq: vec![1.0; m],
            sigma_z_sq: vec![1.0; m],
            sigma_zf_sq: 0.1,
            destination: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Homogeneous network with unit-variance channels.
    pub fn unit(m: usize, n: usize, k: usize, h_est: f64, g_est: f64) -> Result<Self> {
        Self::homogeneous(m, n, k, VarianceSplit::unit(h_est)?, VarianceSplit::unit(g_est)?)
    }

    /// Sets the noise of every destination antenna and keeps the
    /// feedforward noise untouched.
    pub fn with_destination_noise(mut self, sigma_z_sq: f64) -> Self {
        self.sigma_z_sq = vec![sigma_z_sq; self.m];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(Error::invalid("M, N and K must all be >= 1"));
        }
        if self.destination >= self.m {
            return Err(Error::invalid(format!(
                "destination antenna {} out of range for M = {}",
                self.destination, self.m
            )));
        }
        for (name, v) in [("rho_s", self.rho_s), ("rho_r", self.rho_r), ("rho_rf", self.rho_rf)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        for (name, vs) in [
            ("sigma_s_sq", &self.sigma_s_sq),
            ("sigma_n_sq", &self.sigma_n_sq),
            ("sigma_z_sq", &self.sigma_z_sq),
        ] {
            if vs.len() != self.m {
                return Err(Error::invalid(format!(
                    "{name} has {} entries, expected M = {}",
                    vs.len(),
                    self.m
                )));
            }
            if let Some(v) = vs.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} entries must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.sigma_zf_sq >= 0.0) || !self.sigma_zf_sq.is_finite() {
            return Err(Error::invalid(format!(
                "sigma_zf_sq must be finite and >= 0, got {}",
                self.sigma_zf_sq
            )));
        }
        for (name, table) in [("backward", &self.backward), ("forward", &self.forward)] {
            if table.len() != self.m || table.iter().any(|row| row.len() != self.m) {
                return Err(Error::invalid(format!(
                    "{name} channel statistics must be M x M = {0} x {0}",
                    self.m
                )));
            }
        }
        Ok(())
    }

    /// Received power at a subgroup-`x` relay after backward matched
    /// filtering, divided by `N sigma_hhat^2`.
    fn relay_input_power(&self, x: usize, perfect: bool) -> f64 {
        let own = &self.backward[x][x];
        let own_est = if perfect { own.total() } else { own.est() };
        let mut p = (self.n as f64 * own_est + own.total()) * self.sigma_s_sq[x];
        for y in (0..self.m).filter(|&y| y != x) {
            p += self.backward[x][y].total() * self.sigma_s_sq[y];
        }
        self.rho_s * p + self.sigma_n_sq[x]
    }

    /// Amplitude applied by subgroup-`x` relays to the matched-filtered
    /// signal, from the average power constraint `N` per relay, including
    /// the `1/sqrt(N)` of the destination combining.
    fn relay_amplitude(&self, x: usize, perfect: bool) -> Result<f64> {
        let n = self.n as f64;
        let (h, g) = (&self.backward[x][x], &self.forward[x][x]);
        let (h_est, g_est) = if perfect {
            (h.total(), g.total())
        } else {
            (h.est(), g.est())
        };
        let norm = self.relay_input_power(x, perfect) * n * h_est * g_est;
        if norm == 0.0 {
            let mut vanished = Vec::new();
            if h_est == 0.0 {
                vanished.push("backward.est");
            }
            if g_est == 0.0 {
                vanished.push("forward.est");
            }
            if vanished.is_empty() {
                vanished.push("relay input power");
            }
            return Err(Error::degenerate(format!("subgroup {x} relay normalization"), vanished));
        }
        Ok((self.rho_r * self.rho_s / (n * norm)).sqrt())
    }

    /// Power of one relay's feedforward product `A g` with
    /// `A = h_hat h_hat^* g_hat^*`, factorized as
    /// `var{h_hat h_hat^*} var{g_hat^* g} = N (N + 1) sigma_hhat^4 N sigma_ghat^2 (N sigma_ghat^2 + sigma_g^2)`.
    pub fn feedforward_power(&self) -> f64 {
        let i = self.destination;
        let (h, g) = (&self.backward[i][i], &self.forward[i][i]);
        lemma_pair(Bar::Own, self.n, h.est(), h.est(), 0.0) * lemma_pair(Bar::Estimate, self.n, g.total(), g.est(), 0.0)
    }
}

/// Assigns relays `0..M K` to `M` disjoint subgroups of `K`; subgroup `x`
/// serves antenna pair `x`.
pub fn partition_relays(m: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if m == 0 || k == 0 {
        return Err(Error::invalid("M and K must be >= 1"));
    }
    Ok((0..m).map(|x| (x * k..(x + 1) * k).collect()).collect())
}

/// Second-moment identities for products of complex Gaussian vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaIdentity {
    /// `var{s h hbar^* g^* gbar} = var{s} var{h hbar^*} var{g^* gbar}`.
    ProductFactorization,
    /// `var{n h^* g^* gbar} = var{n h^*} var{g^* gbar}`.
    NoiseFactorization,
    /// `var{h h^*} = N (N + 1) sigma_h^4`.
    SelfProduct,
    /// `var{h h_hat^*} = N sigma_hhat^2 (N sigma_hhat^2 + sigma_h^2)`.
    EstimateProduct,
    /// `var{h h'^*} = N sigma_h^2 sigma_h'^2`.
    IndependentProduct,
}

impl LemmaIdentity {
    pub const ALL: [LemmaIdentity; 5] = [
        LemmaIdentity::ProductFactorization,
        LemmaIdentity::NoiseFactorization,
        LemmaIdentity::SelfProduct,
        LemmaIdentity::EstimateProduct,
        LemmaIdentity::IndependentProduct,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LemmaIdentity::ProductFactorization => "product_factorization",
            LemmaIdentity::NoiseFactorization => "noise_factorization",
            LemmaIdentity::SelfProduct => "self_product",
            LemmaIdentity::EstimateProduct => "estimate_product",
            LemmaIdentity::IndependentProduct => "independent_product",
        }
    }
}

impl fmt::Display for LemmaIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LemmaIdentity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LemmaIdentity::ALL
            .into_iter()
            .find(|id| id.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::invalid(format!("unknown identity {s:?}")))
    }
}

/// Partner of a vector in a product `x xbar^*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bar {
    /// The vector itself.
    Own,
    /// Its estimate; the vector is estimate plus independent error.
    Estimate,
    /// An independent vector of the same shape.
    Independent,
}

impl FromStr for Bar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "own" | "self" => Ok(Bar::Own),
            "estimate" => Ok(Bar::Estimate),
            "independent" => Ok(Bar::Independent),
            other => Err(Error::invalid(format!(
                "unknown partner {other:?}, expected own, estimate or independent"
            ))),
        }
    }
}

/// Dimensions and variances entering the moment identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaInputs {
    pub n: usize,
    /// Data block length.
    pub t_d: usize,
    pub sigma_s_sq: f64,
    pub sigma_n_sq: f64,
    /// Backward vector `h` and its estimate.
    pub h: VarianceSplit,
    /// Variance of the independent partner `h'`.
    pub h_other: f64,
    pub g: VarianceSplit,
    pub g_other: f64,
    /// Partner of `h` in the factorized identities.
    pub h_bar: Bar,
    /// Partner of `g` in the factorized identities.
    pub g_bar: Bar,
}

impl LemmaInputs {
    pub fn new(n: usize, h: VarianceSplit, g: VarianceSplit) -> Result<Self> {
        let inputs = Self {
            n,
            t_d: 1,
            sigma_s_sq: 1.0,
            sigma_n_sq: 1.0,
            h,
            h_other: h.total(),
            g,
            g_other: g.total(),
            h_bar: Bar::Own,
            g_bar: Bar::Own,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t_d == 0 {
            return Err(Error::invalid("N and T_d must be >= 1"));
        }
        for (name, v) in [
            ("sigma_s_sq", self.sigma_s_sq),
            ("sigma_n_sq", self.sigma_n_sq),
            ("h_other", self.h_other),
            ("g_other", self.g_other),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `var{x xbar^*}` for `N`-vectors.
fn lemma_pair(bar: Bar, n: usize, total: f64, est: f64, other: f64) -> f64 {
    let n = n as f64;
    match bar {
        Bar::Own => n * (n + 1.0) * total * total,
        Bar::Estimate => n * est * (n * est + total),
        Bar::Independent => n * total * other,
    }
}

/// Closed form of a moment identity.
pub fn lemma1_analytic(identity: LemmaIdentity, inputs: &LemmaInputs) -> Result<f64> {
    inputs.validate()?;
    let (h, g) = (&inputs.h, &inputs.g);
    let n = inputs.n;
    let t_d = inputs.t_d as f64;
    Ok(match identity {
        LemmaIdentity::SelfProduct => lemma_pair(Bar::Own, n, h.total(), h.est(), inputs.h_other),
        LemmaIdentity::EstimateProduct => lemma_pair(Bar::Estimate, n, h.total(), h.est(), inputs.h_other),
        LemmaIdentity::IndependentProduct => lemma_pair(Bar::Independent, n, h.total(), h.est(), inputs.h_other),
        LemmaIdentity::ProductFactorization => {
            t_d * inputs.sigma_s_sq
                * lemma_pair(inputs.h_bar, n, h.total(), h.est(), inputs.h_other)
                * lemma_pair(inputs.g_bar, n, g.total(), g.est(), inputs.g_other)
        }
        LemmaIdentity::NoiseFactorization => {
            t_d * n as f64
                * inputs.sigma_n_sq
                * h.total()
                * lemma_pair(inputs.g_bar, n, g.total(), g.est(), inputs.g_other)
        }
    })
}

/// Draws `x` and its partner, returning `x . xbar^*`.
fn draw_pair(bar: Bar, split: &VarianceSplit, other: &CGaussian, n: usize, rng: &mut Stream) -> Complex64 {
    let est = CGaussian::new(split.est()).expect("validated split");
    let err = CGaussian::new(split.err()).expect("validated split");
    let mut acc = Complex64::new(0.0, 0.0);
    for _ in 0..n {
        let e = est.sample(rng);
        let x = e + err.sample(rng);
        let partner = match bar {
            Bar::Own => x,
            Bar::Estimate => e,
            Bar::Independent => other.sample(rng),
        };
        acc += x * partner.conj();
    }
    acc
}

/// Monte Carlo power of the product named by `identity`.
pub fn lemma1_mc(identity: LemmaIdentity, inputs: &LemmaInputs, plan: &McPlan) -> Result<MomentEstimate> {
    inputs.validate()?;
    let n = inputs.n;
    let h_other = CGaussian::new(inputs.h_other)?;
    let g_other = CGaussian::new(inputs.g_other)?;
    let data = CGaussian::new(inputs.sigma_s_sq)?;
    let noise = CGaussian::new(inputs.sigma_n_sq)?;
    let h_total = CGaussian::new(inputs.h.total())?;
    let inputs = *inputs;
    Ok(stats::estimate_moment(plan, |rng| match identity {
        LemmaIdentity::SelfProduct => draw_pair(Bar::Own, &inputs.h, &h_other, n, rng).norm_sqr(),
        LemmaIdentity::EstimateProduct => draw_pair(Bar::Estimate, &inputs.h, &h_other, n, rng).norm_sqr(),
        LemmaIdentity::IndependentProduct => draw_pair(Bar::Independent, &inputs.h, &h_other, n, rng).norm_sqr(),
        LemmaIdentity::ProductFactorization => {
            let hh = draw_pair(inputs.h_bar, &inputs.h, &h_other, n, rng);
            let gg = draw_pair(inputs.g_bar, &inputs.g, &g_other, n, rng).conj();
            let s: f64 = (0..inputs.t_d).map(|_| data.sample(rng).norm_sqr()).sum();
            s * (hh * gg).norm_sqr()
        }
        LemmaIdentity::NoiseFactorization => {
            // Row t of n (T_d x N) times h^* (N x 1).
            let h: Vec<Complex64> = (0..n).map(|_| h_total.sample(rng)).collect();
            let gg = draw_pair(inputs.g_bar, &inputs.g, &g_other, n, rng).conj();
            let mut power = 0.0;
            for _ in 0..inputs.t_d {
                let nh: Complex64 = h.iter().map(|hj| noise.sample(rng) * hj.conj()).sum();
                power += nh.norm_sqr();
            }
            power * gg.norm_sqr()
        }
    }))
}

/// Individual terms of the closed-form S2 effective SNR,
/// `value = n1 / (d1 + d2 + d3 + d4)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct S2Terms {
    pub n1: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    /// Relay input power of the serving subgroup.
    pub a: f64,
    /// Relay input power of a representative interfering subgroup.
    pub b: f64,
    pub value: f64,
}

/// Closed-form S2 effective SNR, evaluated term by term as published.
///
/// Cross terms use one representative interfering subgroup
/// `j = (i + 1) mod M` and one representative third stream
/// `m = (i + 2) mod M`; the `(M - 1)` and `(M - 2)` multiplicities account
/// for the rest. Terms are kept as published, and the simulator is the
/// reference when the two disagree. `d3` and `d4` carry the interfering
/// stream's data variance; the simulator instead matches the same
/// expression with the relay-noise variances `sigma_n,i^2` (in `d3`) and
/// `sigma_n,j^2` (in `d4`), so the two agree only when those variances
/// coincide. Destination and feedforward noise do not appear.
pub fn esnr_s2_terms(cfg: &MimoConfig) -> Result<S2Terms> {
    cfg.validate()?;
    let m_count = cfg.m as f64;
    let n = cfg.n as f64;
    let k = cfg.k as f64;
    let i = cfg.destination;
    let j = (i + 1) % cfg.m;
    let m = (i + 2) % cfg.m;
    let (hii, gii) = (&cfg.backward[i][i], &cfg.forward[i][i]);
    let hjj = &cfg.backward[j][j];
    let (si, sj, sm) = (cfg.sigma_s_sq[i], cfg.sigma_s_sq[j], cfg.sigma_s_sq[m]);
    let h_ij = cfg.backward[i][j].total();
    let h_ji = cfg.backward[j][i].total();
    let h_jm = cfg.backward[j][m].total();
    let g_ji = cfg.forward[j][i].total();
    let fwd = n * gii.est() + gii.total();

    let a = cfg.rho_s * ((n * hii.est() + hii.total()) * si + (m_count - 1.0) * h_ij * sj) + cfg.sigma_n_sq[i];
    let b =
        cfg.rho_s * (h_ji * si + (n * hjj.est() + hjj.total()) * sj + (m_count - 2.0) * h_jm * sm) + cfg.sigma_n_sq[j];
    if a == 0.0 {
        return Err(Error::degenerate(
            "S2 effective SNR",
            vec!["serving subgroup input power"],
        ));
    }
    let n1 = cfg.rho_s * ((n + 1.0) * hii.est() * fwd + (k - 1.0) * n * n * hii.est() * gii.est()) * si / a;
    let d1 = cfg.rho_s * (hii.err() * fwd * si + (m_count - 1.0) * h_ij * fwd * sj) / a;
    let d3 = fwd * sj / a;
    let (d2, d4) = if cfg.m > 1 {
        if b == 0.0 {
            return Err(Error::degenerate(
                "S2 effective SNR",
                vec!["interfering subgroup input power"],
            ));
        }
        let d2 = cfg.rho_s
            * (m_count - 1.0)
            * ((n * hjj.est() + hjj.total()) * sj + (m_count - 2.0) * h_jm * sm + h_ji * si)
            * g_ji
            / b;
        (d2, (m_count - 1.0) * g_ji * sj / b)
    } else {
        (0.0, 0.0)
    };
    let den = d1 + d2 + d3 + d4;
    if den == 0.0 {
        let mut vanished = Vec::new();
        if hii.err() == 0.0 {
            vanished.push("backward.err");
        }
        if sj == 0.0 {
            vanished.push("sigma_s_sq");
        }
        return Err(Error::degenerate("S2 effective SNR", vanished));
    }
    Ok(S2Terms {
        n1,
        d1,
        d2,
        d3,
        d4,
        a,
        b,
        value: n1 / den,
    })
}

pub fn esnr_s2_analytic(cfg: &MimoConfig) -> Result<EsnrEstimate> {
    Ok(EsnrEstimate::analytic(esnr_s2_terms(cfg)?.value))
}

/// Everything one simulation pass measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MimoReport {
    pub s1a: EsnrEstimate,
    pub s1b: EsnrEstimate,
    pub s2: EsnrEstimate,
    /// Real part of `E{s^i* V^i}`, data symbol against S2 overall noise.
    pub noise_correlation_re: MomentEstimate,
    pub noise_correlation_im: MomentEstimate,
    /// Largest per-trial relative gap between the effective CSI and the sum
    /// of its S2 known and unknown parts.
    pub max_decomposition_error: f64,
}

impl MimoReport {
    pub fn scheme(&self, kind: SchemeKind) -> EsnrEstimate {
        match kind {
            SchemeKind::S1a => self.s1a,
            SchemeKind::S1b => self.s1b,
            SchemeKind::S2 => self.s2,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct MimoAcc {
    schemes: [Bivariate; 3],
    corr: [Welford; 2],
    max_decomposition_error: f64,
}

impl Accumulator for MimoAcc {
    fn merge(&mut self, other: &Self) {
        self.schemes.merge(&other.schemes);
        self.corr.merge(&other.corr);
        self.max_decomposition_error = self.max_decomposition_error.max(other.max_decomposition_error);
    }
}

struct Samplers {
    h_est: Vec<CGaussian>,
    h_err: Vec<CGaussian>,
    /// `[x][y]`, unused on the diagonal.
    h_cross: Vec<Vec<CGaussian>>,
    g_est: Vec<CGaussian>,
    g_err: Vec<CGaussian>,
    /// `[x]`: forward channel from subgroup `x` to the evaluated antenna.
    g_dest: Vec<CGaussian>,
    relay_noise: Vec<CGaussian>,
    data: Vec<CGaussian>,
    dest_noise: CGaussian,
    ff_noise: CGaussian,
}

impl Samplers {
    fn new(cfg: &MimoConfig) -> Result<Self> {
        let i = cfg.destination;
        let diag = |t: &Vec<Vec<VarianceSplit>>, f: fn(&VarianceSplit) -> f64| -> Result<Vec<CGaussian>> {
            (0..cfg.m).map(|x| CGaussian::new(f(&t[x][x]))).collect()
        };
        Ok(Self {
            h_est: diag(&cfg.backward, VarianceSplit::est)?,
            h_err: diag(&cfg.backward, VarianceSplit::err)?,
            h_cross: cfg
                .backward
                .iter()
                .map(|row| row.iter().map(|s| CGaussian::new(s.total())).collect())
                .collect::<Result<_>>()?,
            g_est: diag(&cfg.forward, VarianceSplit::est)?,
            g_err: diag(&cfg.forward, VarianceSplit::err)?,
            g_dest: (0..cfg.m)
                .map(|x| CGaussian::new(cfg.forward[x][i].total()))
                .collect::<Result<_>>()?,
            relay_noise: cfg
                .sigma_n_sq
                .iter()
                .map(|&v| CGaussian::new(v))
                .collect::<Result<_>>()?,
            data: cfg
                .sigma_s_sq
                .iter()
                .map(|&v| CGaussian::new(v))
                .collect::<Result<_>>()?,
            dest_noise: CGaussian::new(cfg.sigma_z_sq[i])?,
            ff_noise: CGaussian::new(cfg.sigma_zf_sq)?,
        })
    }
}

/// Simulates the received signal at one destination antenna and evaluates
/// all three schemes on shared draws.
///
/// Per trial and per relay `k` of subgroup `x`: the `N`-vector channel from
/// every source antenna (estimate and error on the serving one), the forward
/// estimate and error towards antenna `x`, the forward channel towards the
/// evaluated antenna, and relay noise. Then the data symbols, destination
/// noise and feedforward noise. Imperfect-CSI relays filter with
/// `h_hat^* g_hat^*`; the `S1a` pass filters the same draws with the true
/// channels. Power normalizations are the analytic ensemble averages.
///
/// Reported powers average the data symbols out analytically, which is
/// exact because they are independent of every other draw; the drawn
/// symbols are still used to measure `E{s^i* V^i}`.
pub fn simulate_mimo_schemes(cfg: &MimoConfig, plan: &McPlan) -> Result<MimoReport> {
    cfg.validate()?;
    let (m, n, i) = (cfg.m, cfg.n, cfg.destination);
    let amp: Vec<f64> = (0..m).map(|x| cfg.relay_amplitude(x, false)).collect::<Result<_>>()?;
    let amp_perfect: Vec<f64> = (0..m).map(|x| cfg.relay_amplitude(x, true)).collect::<Result<_>>()?;
    let noise_scale = 1.0 / cfg.rho_s.sqrt();
    // sqrt(rho / rho'_Rf) z^f with rho = N amp_i^2 and rho'_Rf = rho_Rf / var{A g}.
    let ff_scale = amp[i] * (n as f64 * cfg.feedforward_power() / cfg.rho_rf).sqrt();
    let draw = Samplers::new(cfg)?;

    let acc = stats::run::<MimoAcc, _>(plan, |_, rng, acc| {
        let zero = Complex64::new(0.0, 0.0);
        // Coefficient of each source stream at the evaluated antenna, for
        // estimate-filtering relays and for true-channel relays.
        let mut coef = vec![zero; m];
        let mut coef_p = vec![zero; m];
        let mut h_hat = vec![zero; n];
        let mut h_own = vec![zero; n];
        let mut g_hat = vec![zero; n];
        let mut g_own = vec![zero; n];
        let mut proj = vec![zero; m];
        let mut proj_p = vec![zero; m];
        let (mut v, mut v_p) = (zero, zero);
        let (mut known, mut own_residue, mut other_subgroups) = (zero, zero, zero);

        for x in 0..m {
            for _ in 0..cfg.k {
                let mut hh = 0.0;
                let mut residue = zero;
                let mut h_sq = 0.0;
                for t in 0..n {
                    let e = draw.h_est[x].sample(rng);
                    let r = draw.h_err[x].sample(rng);
                    h_hat[t] = e;
                    h_own[t] = e + r;
                    hh += e.norm_sqr();
                    residue += r * e.conj();
                    h_sq += h_own[t].norm_sqr();
                }
                // h^y . h_hat^* and h^y . h^* for every source antenna y.
                for y in 0..m {
                    if y == x {
                        proj[y] = hh + residue;
                        proj_p[y] = Complex64::new(h_sq, 0.0);
                        continue;
                    }
                    let (mut c, mut c_p) = (zero, zero);
                    for t in 0..n {
                        let hy = draw.h_cross[x][y].sample(rng);
                        c += hy * h_hat[t].conj();
                        c_p += hy * h_own[t].conj();
                    }
                    proj[y] = c;
                    proj_p[y] = c_p;
                }
                for t in 0..n {
                    let e = draw.g_est[x].sample(rng);
                    let r = draw.g_err[x].sample(rng);
                    g_hat[t] = e;
                    g_own[t] = e + r;
                }
                // g_hat^* . g_dest and g^* . g_dest.
                let (mut gg, mut gg_p) = (zero, zero);
                if x == i {
                    for t in 0..n {
                        gg += g_hat[t].conj() * g_own[t];
                        gg_p += g_own[t].norm_sqr();
                    }
                } else {
                    for t in 0..n {
                        let gd = draw.g_dest[x].sample(rng);
                        gg += g_hat[t].conj() * gd;
                        gg_p += g_own[t].conj() * gd;
                    }
                }
                let (mut nn, mut nn_p) = (zero, zero);
                for t in 0..n {
                    let z = draw.relay_noise[x].sample(rng);
                    nn += z * h_hat[t].conj();
                    nn_p += z * h_own[t].conj();
                }

                let (a, a_p) = (amp[x], amp_perfect[x]);
                for y in 0..m {
                    coef[y] += a * proj[y] * gg;
                    coef_p[y] += a_p * proj_p[y] * gg_p;
                }
                v += a * noise_scale * nn * gg;
                v_p += a_p * noise_scale * nn_p * gg_p;
                if x == i {
                    known += a * hh * gg;
                    own_residue += a * residue * gg;
                } else {
                    other_subgroups += a * proj[i] * gg;
                }
            }
        }

        let s: Vec<Complex64> = draw.data.iter().map(|d| d.sample(rng)).collect();
        let z = draw.dest_noise.sample(rng);
        let zf = draw.ff_noise.sample(rng) * ff_scale;
        v += z;
        v_p += z;

        // Effective CSI known under S2, and the part of coef[i] it misses.
        let sig_known = known + zf;
        let sig_missing = own_residue - zf + other_subgroups;
        let scale = sig_known.norm() + sig_missing.norm();
        if scale > 0.0 {
            let gap = (coef[i] - (sig_known + sig_missing)).norm() / scale;
            acc.max_decomposition_error = acc.max_decomposition_error.max(gap);
        }

        let si = cfg.sigma_s_sq[i];
        let (mut interference, mut interference_p) = (0.0, 0.0);
        let mut overall = s[i] * sig_missing + v;
        for y in (0..m).filter(|&y| y != i) {
            interference += cfg.sigma_s_sq[y] * coef[y].norm_sqr();
            interference_p += cfg.sigma_s_sq[y] * coef_p[y].norm_sqr();
            overall += s[y] * coef[y];
        }
        acc.schemes[0].push(si * coef_p[i].norm_sqr(), interference_p + v_p.norm_sqr());
        acc.schemes[1].push(si * coef[i].norm_sqr(), interference + v.norm_sqr());
        acc.schemes[2].push(
            si * sig_known.norm_sqr(),
            si * sig_missing.norm_sqr() + interference + v.norm_sqr(),
        );
        let corr = s[i].conj() * overall;
        acc.corr[0].push(corr.re);
        acc.corr[1].push(corr.im);
    });

    let esnr = |b: &Bivariate, kind: SchemeKind| -> Result<EsnrEstimate> {
        if b.mean_y() == 0.0 {
            return Err(Error::degenerate(
                format!("{kind} measured noise power"),
                vec!["overall noise"],
            ));
        }
        Ok(EsnrEstimate::from_ratio(b.ratio()))
    };
    Ok(MimoReport {
        s1a: esnr(&acc.schemes[0], SchemeKind::S1a)?,
        s1b: esnr(&acc.schemes[1], SchemeKind::S1b)?,
        s2: esnr(&acc.schemes[2], SchemeKind::S2)?,
        noise_correlation_re: acc.corr[0].estimate(),
        noise_correlation_im: acc.corr[1].estimate(),
        max_decomposition_error: acc.max_decomposition_error,
    })
}

/// Monte Carlo effective SNR of one scheme.
pub fn simulate_mimo(scheme: SchemeKind, cfg: &MimoConfig, plan: &McPlan) -> Result<EsnrEstimate> {
    Ok(simulate_mimo_schemes(cfg, plan)?.scheme(scheme))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inputs(n: usize, total: f64, est: f64) -> LemmaInputs {
        let split = VarianceSplit::from_estimate(total, est).unwrap();
        LemmaInputs::new(n, split, split).unwrap()
    }

    #[test]
    fn partitions() {
        assert_eq!(partition_relays(1, 5).unwrap(), vec![vec![0, 1, 2, 3, 4]]);
        let p = partition_relays(2, 7).unwrap();
        let mut all: Vec<usize> = p.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!((p.len(), all.len()), (2, 14));
        let p = partition_relays(3, 2).unwrap();
        assert_eq!(p[2], vec![4, 5]);
        assert!(partition_relays(0, 2).is_err());
    }

    #[test]
    fn lemma_closed_forms() {
        let one = inputs(2, 1.0, 1.0);
        assert_eq!(lemma1_analytic(LemmaIdentity::SelfProduct, &one).unwrap(), 6.0);
        assert_eq!(
            lemma1_analytic(LemmaIdentity::SelfProduct, &inputs(1, 1.0, 1.0)).unwrap(),
            2.0
        );
        let mut ind = inputs(3, 0.5, 0.5);
        ind.h_other = 2.0;
        assert_eq!(lemma1_analytic(LemmaIdentity::IndependentProduct, &ind).unwrap(), 3.0);
        let est = inputs(2, 1.0, 0.9);
        assert!((lemma1_analytic(LemmaIdentity::EstimateProduct, &est).unwrap() - 5.04).abs() < 1e-12);
        assert_eq!(
            lemma1_analytic(LemmaIdentity::ProductFactorization, &inputs(1, 1.0, 1.0)).unwrap(),
            4.0
        );
    }

    #[test]
    fn lemma_monte_carlo_examples() {
        let plan = McPlan::new(1_000_000, 21).unwrap();
        let est = lemma1_mc(LemmaIdentity::EstimateProduct, &inputs(2, 1.0, 0.9), &plan).unwrap();
        assert!(est.relative_error(5.04) <= 0.02, "{est:?}");
        let mut ind = inputs(3, 0.5, 0.5);
        ind.h_other = 2.0;
        let mc = lemma1_mc(LemmaIdentity::IndependentProduct, &ind, &plan).unwrap();
        assert!(mc.relative_error(3.0) <= 0.02, "{mc:?}");
        let pf = lemma1_mc(LemmaIdentity::ProductFactorization, &inputs(1, 1.0, 1.0), &plan).unwrap();
        assert!(pf.relative_error(4.0) <= 0.05, "{pf:?}");
    }

    #[test]
    fn lemma_zero_variances_give_zero() {
        let zero = VarianceSplit::from_parts(0.0, 0.0).unwrap();
        let mut z = LemmaInputs::new(2, zero, zero).unwrap();
        z.sigma_s_sq = 0.0;
        z.sigma_n_sq = 0.0;
        z.h_other = 0.0;
        z.g_other = 0.0;
        let plan = McPlan::new(100, 1).unwrap();
        for id in LemmaIdentity::ALL {
            assert_eq!(lemma1_analytic(id, &z).unwrap(), 0.0);
            let mc = lemma1_mc(id, &z, &plan).unwrap();
            assert_eq!((mc.mean, mc.ci95_half_width), (0.0, 0.0));
        }
    }

    #[test]
    fn identity_names_round_trip() {
        for id in LemmaIdentity::ALL {
            assert_eq!(id.name().parse::<LemmaIdentity>().unwrap(), id);
        }
        assert_eq!("s1b".parse::<SchemeKind>().unwrap(), SchemeKind::S1b);
    }

    #[test]
    fn single_antenna_pair_drops_cross_terms() {
        let t = esnr_s2_terms(&MimoConfig::unit(1, 3, 7, 0.9, 0.9).unwrap()).unwrap();
        assert_eq!((t.d2, t.d4), (0.0, 0.0));
        assert!(t.d3 > 0.0);
    }

    #[test]
    fn feedforward_power_matches_samples() {
        let cfg = MimoConfig::unit(2, 3, 1, 0.7, 0.6).unwrap();
        let (h, g) = (cfg.backward[0][0], cfg.forward[0][0]);
        let (he, ge, gt) = (
            CGaussian::new(h.est()).unwrap(),
            CGaussian::new(g.est()).unwrap(),
            CGaussian::new(g.err()).unwrap(),
        );
        let mc = stats::estimate_moment(&McPlan::new(400_000, 2).unwrap(), |rng| {
            let mut hh = 0.0;
            let mut gg = Complex64::new(0.0, 0.0);
            for _ in 0..3 {
                hh += he.sample(rng).norm_sqr();
                let e = ge.sample(rng);
                gg += e.conj() * (e + gt.sample(rng));
            }
            (hh * gg).norm_sqr()
        });
        assert!(
            mc.relative_error(cfg.feedforward_power()) < 0.03,
            "{mc:?} vs {}",
            cfg.feedforward_power()
        );
    }

    #[test]
    fn perfect_estimates_collapse_s1b_onto_s1a() {
        let p = VarianceSplit::perfect(1.0).unwrap();
        let cfg = MimoConfig::homogeneous(2, 2, 3, p, p).unwrap();
        let r = simulate_mimo_schemes(&cfg, &McPlan::new(5_000, 4).unwrap()).unwrap();
        assert_eq!(r.s1a, r.s1b);
        assert!(r.s2.value < r.s1b.value);
        // With one antenna pair nothing else leaks into the known effective
        // CSI, so feedforward noise is the only difference left.
        let single = MimoConfig {
            sigma_zf_sq: 0.0,
            ..MimoConfig::homogeneous(1, 2, 3, p, p).unwrap()
        };
        let r = simulate_mimo_schemes(&single, &McPlan::new(5_000, 4).unwrap()).unwrap();
        assert!((r.s2.value - r.s1b.value).abs() <= 1e-9 * r.s1b.value);
    }

    #[test]
    fn schemes_are_ordered_and_noise_is_uncorrelated() {
        let cfg = MimoConfig::unit(2, 2, 7, 0.9, 0.9).unwrap();
        let r = simulate_mimo_schemes(&cfg, &McPlan::new(40_000, 8).unwrap()).unwrap();
        assert!(r.s1a.separated_above(&r.s1b) && r.s1b.separated_above(&r.s2), "{r:?}");
        assert!(r.max_decomposition_error <= 1e-12);
        for c in [r.noise_correlation_re, r.noise_correlation_im] {
            assert!(c.mean.abs() <= 3.0 * c.ci95_half_width, "{c:?}");
        }
    }

    #[test]
    fn worker_count_is_invisible() {
        let cfg = MimoConfig::unit(3, 2, 2, 0.5, 0.9).unwrap();
        let plan = McPlan::new(3_000, 6).unwrap().with_chunk_size(100).unwrap();
        let a = simulate_mimo_schemes(&cfg, &plan.with_workers(1)).unwrap();
        let b = simulate_mimo_schemes(&cfg, &plan.with_workers(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_estimates_are_degenerate() {
        let none = VarianceSplit::from_parts(0.0, 1.0).unwrap();
        let cfg = MimoConfig::homogeneous(2, 1, 2, none, VarianceSplit::unit(0.5).unwrap()).unwrap();
        assert!(matches!(
            simulate_mimo_schemes(&cfg, &McPlan::new(10, 1).unwrap()),
            Err(Error::DegenerateEstimation { .. })
        ));
    }

    #[test]
    fn config_shape_is_checked() {
        let mut cfg = MimoConfig::unit(2, 1, 1, 0.5, 0.5).unwrap();
        cfg.sigma_n_sq.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = MimoConfig::unit(2, 1, 1, 0.5, 0.5).unwrap();
        cfg.destination = 2;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn decomposition_is_exact(m in 1usize..4, n in 1usize..4, k in 1usize..4, h in 0.1f64..0.9, g in 0.1f64..0.9, dest in 0usize..3) {
            let mut cfg = MimoConfig::unit(m, n, k, h, g).unwrap();
            cfg.destination = dest % m;
            let r = simulate_mimo_schemes(&cfg, &McPlan::new(200, 3).unwrap()).unwrap();
            prop_assert!(r.max_decomposition_error <= 1e-12);
        }
    }
}
