//! Seeded complex Gaussian sampling and a deterministic Monte Carlo engine.
//!
//! Every trial owns a counter-based ChaCha stream keyed by
//! `(master_seed, trial_index)`, so the draws seen by a trial never depend on
//! how the trials are chunked or how many workers execute them. Chunk
//! accumulators are merged single-threaded in ascending chunk order, which
//! makes results bitwise reproducible for any worker count.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Complex baseband sample.
pub type ComplexScalar = Complex64;

/// Random stream handed to each Monte Carlo trial.
pub type Stream = ChaCha8Rng;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Circularly-symmetric complex Gaussian `CN(0, variance)`.
///
/// `E{|x|^2} = variance`; real and imaginary parts each carry half of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CGaussian {
    variance: f64,
    scale: f64,
}

impl CGaussian {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::invalid(format!(
                "complex Gaussian variance must be finite and >= 0, got {variance}"
            )));
        }
        Ok(Self {
            variance,
            scale: (variance / 2.0).sqrt(),
        })
    }

    pub fn standard() -> Self {
        Self {
            variance: 1.0,
            scale: std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Always consumes two normals, even at zero variance, so that streams
    /// stay aligned across configurations that share a seed.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        if self.scale == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::new(re * self.scale, im * self.scale)
    }
}

/// Draws one `CN(0, variance)` sample.
pub fn sample_cgaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Result<Complex64> {
    Ok(CGaussian::new(variance)?.sample(rng))
}

/// Trial count, master seed and chunking of a Monte Carlo run.
///
/// `workers` only changes wall-clock time; `0` means the global rayon pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct McPlan {
    trials: u64,
    master_seed: u64,
    chunk_size: u64,
    #[serde(skip)]
    workers: usize,
}

impl McPlan {
    pub const DEFAULT_CHUNK_SIZE: u64 = 4096;

    pub fn new(trials: u64, master_seed: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::invalid("Monte Carlo plan needs at least one trial"));
        }
        Ok(Self {
            trials,
            master_seed,
            chunk_size: Self::DEFAULT_CHUNK_SIZE,
            workers: 0,
        })
    }

    pub fn with_chunk_size(mut self, chunk_size: u64) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::invalid("chunk size must be >= 1"));
        }
        self.chunk_size = chunk_size;
        Ok(self)
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn chunk_size(&self) -> u64 {
        self.chunk_size
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn chunks(&self) -> u64 {
        self.trials.div_ceil(self.chunk_size)
    }
}

/// Returns the reproducible stream for `(master_seed, index)`.
///
/// The engine uses one stream per trial index; distinct indices map to
/// distinct ChaCha stream ids under the same key.
pub fn derive_stream(master_seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng.set_word_pos(0);
    rng
}

/// Mixes a label and index into a master seed, giving each experiment and
/// cell its own seed subspace.
pub fn mix_seed(master_seed: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then two SplitMix64 finalizer rounds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(splitmix(master_seed ^ h).wrapping_add(index))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Streaming statistic that can absorb another partial result.
pub trait Accumulator: Default + Send {
    fn merge(&mut self, other: &Self);
}

/// Welford mean/variance accumulator with Chan's pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n > 1 {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        } else {
            0.0
        }
    }

    pub fn estimate(&self) -> MomentEstimate {
        MomentEstimate::new(self.mean, self.variance() / self.n.max(1) as f64, self.n)
    }
}

impl Accumulator for Welford {
    fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.n = n;
    }
}

/// Paired accumulator for `(x, y)` samples, tracking the co-moment needed for
/// delta-method intervals on `E{x}/E{y}`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bivariate {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    m2x: f64,
    m2y: f64,
    cxy: f64,
}

impl Bivariate {
    #[inline]
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / n;
        self.mean_y += dy / n;
        self.m2x += dx * (x - self.mean_x);
        self.m2y += dy * (y - self.mean_y);
        self.cxy += dx * (y - self.mean_y);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean_x(&self) -> f64 {
        self.mean_x
    }

    pub fn mean_y(&self) -> f64 {
        self.mean_y
    }

    fn sample(&self, m: f64) -> f64 {
        if self.n > 1 {
            m / (self.n - 1) as f64
        } else {
            0.0
        }
    }

    pub fn x(&self) -> MomentEstimate {
        let n = self.n.max(1) as f64;
        MomentEstimate::new(self.mean_x, self.sample(self.m2x).max(0.0) / n, self.n)
    }

    pub fn y(&self) -> MomentEstimate {
        let n = self.n.max(1) as f64;
        MomentEstimate::new(self.mean_y, self.sample(self.m2y).max(0.0) / n, self.n)
    }

    /// `E{x}/E{y}` with a first-order delta-method interval.
    ///
    /// A zero denominator yields `+inf` (or NaN when the numerator is zero
    /// too) with a zero-width interval.
    pub fn ratio(&self) -> RatioEstimate {
        if self.mean_y == 0.0 {
            let value = if self.mean_x > 0.0 { f64::INFINITY } else { f64::NAN };
            return RatioEstimate {
                value,
                variance: 0.0,
                ci95_half_width: 0.0,
                trials: self.n,
            };
        }
        let r = self.mean_x / self.mean_y;
        let vx = self.sample(self.m2x);
        let vy = self.sample(self.m2y);
        let cxy = self.sample(self.cxy);
        let n = self.n.max(1) as f64;
        let variance = ((vx - 2.0 * r * cxy + r * r * vy) / (n * self.mean_y * self.mean_y)).max(0.0);
        RatioEstimate {
            value: r,
            variance,
            ci95_half_width: Z95 * variance.sqrt(),
            trials: self.n,
        }
    }
}

impl Accumulator for Bivariate {
    fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let (na, nb) = (self.n as f64, other.n as f64);
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        let w = na * nb / n;
        self.mean_x += dx * nb / n;
        self.mean_y += dy * nb / n;
        self.m2x += other.m2x + dx * dx * w;
        self.m2y += other.m2y + dy * dy * w;
        self.cxy += other.cxy + dx * dy * w;
        self.n += other.n;
    }
}

impl<A: Accumulator + Clone, const D: usize> Accumulator for [A; D]
where
    [A; D]: Default,
{
    fn merge(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

/// Variable-length accumulator; an empty vector is the merge identity.
impl<A: Accumulator + Clone> Accumulator for Vec<A> {
    fn merge(&mut self, other: &Self) {
        if self.is_empty() {
            self.clone_from(other);
            return;
        }
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

/// Monte Carlo estimate of a mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub variance_of_mean: f64,
    pub trials: u64,
    pub ci95_half_width: f64,
}

impl MomentEstimate {
    pub fn new(mean: f64, variance_of_mean: f64, trials: u64) -> Self {
        let variance_of_mean = variance_of_mean.max(0.0);
        Self {
            mean,
            variance_of_mean,
            trials,
            ci95_half_width: Z95 * variance_of_mean.sqrt(),
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        (self.mean - value).abs() <= self.ci95_half_width
    }

    pub fn relative_error(&self, target: f64) -> f64 {
        ((self.mean - target) / target).abs()
    }
}

/// Monte Carlo estimate of a ratio of means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub value: f64,
    pub variance: f64,
    pub ci95_half_width: f64,
    pub trials: u64,
}

impl RatioEstimate {
    pub fn contains(&self, value: f64) -> bool {
        (self.value - value).abs() <= self.ci95_half_width
    }
}

/// Runs `plan.trials()` trials and returns the merged accumulator.
///
/// `trial` receives the global trial index, that trial's private stream and
/// the chunk accumulator it should update.
pub fn run<A, F>(plan: &McPlan, trial: F) -> A
where
    A: Accumulator,
    F: Fn(u64, &mut Stream, &mut A) + Sync,
{
    let base = ChaCha8Rng::seed_from_u64(plan.master_seed);
    let chunk = |c: u64| {
        let mut acc = A::default();
        let start = c * plan.chunk_size;
        let end = (start + plan.chunk_size).min(plan.trials);
        for t in start..end {
            let mut rng = base.clone();
            rng.set_stream(t);
            rng.set_word_pos(0);
            trial(t, &mut rng, &mut acc);
        }
        acc
    };

    let parts: Vec<A> = match plan.workers {
        1 => (0..plan.chunks()).map(chunk).collect(),
        0 => (0..plan.chunks()).into_par_iter().map(chunk).collect(),
        w => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            Ok(pool) => pool.install(|| (0..plan.chunks()).into_par_iter().map(chunk).collect()),
            Err(_) => (0..plan.chunks()).into_par_iter().map(chunk).collect(),
        },
    };

    let mut total = A::default();
    for part in &parts {
        total.merge(part);
    }
    total
}

/// Mean of `generator` over the plan's trials.
pub fn estimate_moment<F>(plan: &McPlan, generator: F) -> MomentEstimate
where
    F: Fn(&mut Stream) -> f64 + Sync,
{
    run::<Welford, _>(plan, |_, rng, acc| acc.push(generator(rng))).estimate()
}

/// `E{x}/E{y}` over the plan's trials for a generator returning `(x, y)`.
pub fn estimate_ratio<F>(plan: &McPlan, generator: F) -> RatioEstimate
where
    F: Fn(&mut Stream) -> (f64, f64) + Sync,
{
    run::<Bivariate, _>(plan, |_, rng, acc| {
        let (x, y) = generator(rng);
        acc.push(x, y);
    })
    .ratio()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::HashSet;

    #[test]
    fn zero_variance_is_exactly_zero() {
        let mut rng = derive_stream(3, 0);
        for _ in 0..10 {
            let x = sample_cgaussian(0.0, &mut rng).unwrap();
            assert_eq!(x, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn negative_variance_rejected() {
        let mut rng = derive_stream(3, 0);
        assert!(matches!(
            sample_cgaussian(-1e-9, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
        assert!(CGaussian::new(f64::NAN).is_err());
    }

    #[test]
    fn second_and_fourth_moments() {
        let plan = McPlan::new(1_000_000, 11).unwrap();
        let g = CGaussian::standard();
        let acc = run::<[Welford; 3], _>(&plan, |_, rng, acc| {
            let x = g.sample(rng);
            let p = x.norm_sqr();
            acc[0].push(p);
            acc[1].push(p * p);
            acc[2].push(x.re * x.im);
        });
        let m2 = acc[0].estimate();
        let m4 = acc[1].estimate();
        let cross = acc[2].estimate();
        assert!((0.99..=1.01).contains(&m2.mean), "{m2:?}");
        assert!(m4.relative_error(2.0) <= 0.03, "{m4:?}");
        assert!(cross.mean.abs() <= 3.0 * cross.ci95_half_width, "{cross:?}");
    }

    #[test]
    fn constant_generator_has_zero_width() {
        let plan = McPlan::new(100, 1).unwrap();
        let est = estimate_moment(&plan, |_| 1.0);
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.ci95_half_width, 0.0);
        assert_eq!(est.trials, 100);
    }

    #[test]
    fn channel_power_seed_seven() {
        let plan = McPlan::new(1_000_000, 7).unwrap();
        let g = CGaussian::standard();
        let est = estimate_moment(&plan, |rng| g.sample(rng).norm_sqr());
        assert!(est.relative_error(1.0) <= 0.01, "{est:?}");
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let plan = McPlan::new(50_000, 99).unwrap();
        let g = CGaussian::new(2.5).unwrap();
        let a = estimate_moment(&plan, |rng| g.sample(rng).norm_sqr());
        let b = estimate_moment(&plan, |rng| g.sample(rng).norm_sqr());
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.variance_of_mean.to_bits(), b.variance_of_mean.to_bits());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let g = CGaussian::standard();
        let f = |rng: &mut Stream| g.sample(rng).norm_sqr().powi(2);
        let base = McPlan::new(40_000, 5).unwrap().with_chunk_size(1000).unwrap();
        let one = estimate_moment(&base.with_workers(1), f);
        let three = estimate_moment(&base.with_workers(3), f);
        let pool = estimate_moment(&base.with_workers(0), f);
        assert_eq!(one, three);
        assert_eq!(one, pool);
    }

    #[test]
    fn chunk_size_only_perturbs_rounding() {
        let g = CGaussian::standard();
        let f = |rng: &mut Stream| g.sample(rng).norm_sqr();
        let a = estimate_moment(&McPlan::new(30_000, 5).unwrap().with_chunk_size(7).unwrap(), f);
        let b = estimate_moment(&McPlan::new(30_000, 5).unwrap().with_chunk_size(30_000).unwrap(), f);
        assert!(((a.mean - b.mean) / a.mean).abs() < 1e-12);
        assert!(((a.variance_of_mean - b.variance_of_mean) / a.variance_of_mean).abs() < 1e-9);
    }

    #[test]
    fn plan_validation_and_chunk_count() {
        assert!(McPlan::new(0, 1).is_err());
        assert!(McPlan::new(10, 1).unwrap().with_chunk_size(0).is_err());
        let p = McPlan::new(10, 1).unwrap().with_chunk_size(3).unwrap();
        assert_eq!(p.chunks(), 4);
        assert_eq!(McPlan::new(9, 1).unwrap().with_chunk_size(3).unwrap().chunks(), 3);
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = derive_stream(1, 0);
        let mut b = derive_stream(1, 0);
        for _ in 0..100 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn streams_do_not_collide() {
        let mut firsts = HashSet::new();
        for chunk in 0..10_000u64 {
            assert!(firsts.insert(derive_stream(1, chunk).random::<u64>()));
        }
        assert!(!firsts.contains(&derive_stream(2, 0).random::<u64>()));
        assert_ne!(derive_stream(1, 0).random::<u64>(), derive_stream(2, 0).random::<u64>());
    }

    #[test]
    fn mixed_seeds_are_distinct() {
        let mut seen = HashSet::new();
        for label in ["table2", "figures", "esnr"] {
            for i in 0..100 {
                assert!(seen.insert(mix_seed(42, label, i)));
            }
        }
    }

    #[test]
    fn ratio_of_constants() {
        let plan = McPlan::new(10, 1).unwrap();
        let r = estimate_ratio(&plan, |_| (6.0, 2.0));
        assert_eq!(r.value, 3.0);
        assert_eq!(r.ci95_half_width, 0.0);
        let inf = estimate_ratio(&plan, |_| (1.0, 0.0));
        assert!(inf.value.is_infinite());
    }

    proptest! {
        #[test]
        fn merge_matches_sequential(xs in prop::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let mut whole = Welford::default();
            let mut left = Welford::default();
            let mut right = Welford::default();
            let mut bw = Bivariate::default();
            let mut bl = Bivariate::default();
            let mut br = Bivariate::default();
            for (i, &x) in xs.iter().enumerate() {
                whole.push(x);
                bw.push(x, 0.5 * x + 1.0);
                if i < split { left.push(x); bl.push(x, 0.5 * x + 1.0); } else { right.push(x); br.push(x, 0.5 * x + 1.0); }
            }
            left.merge(&right);
            bl.merge(&br);
            let tol = 1e-9 * (1.0 + whole.variance());
            prop_assert_eq!(left.count(), whole.count());
            prop_assert!((left.mean() - whole.mean()).abs() < 1e-9);
            prop_assert!((left.variance() - whole.variance()).abs() < tol);
            prop_assert!((bl.x().variance_of_mean - bw.x().variance_of_mean).abs() < tol);
            prop_assert!((bl.y().mean - bw.y().mean).abs() < 1e-9);
        }
    }
}
