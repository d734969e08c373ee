//! Poisson and truncated Poisson kernels.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

/// Rates above this are sampled with `rand_distr` instead of inversion.
const INVERSION_MAX_RATE: f64 = 30.0;

/// `ln Σ exp(xᵢ)` without overflow; `-∞` for an empty or all-`-∞` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln(eᵃ + eᵇ)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonSpec {
    pub rate: f64,
}

/// Poisson conditioned on `Y <= bound`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncPoissonSpec {
    pub rate: f64,
    pub bound: u32,
}

/// Either flavour, chosen at runtime by the truncation mode of the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RateSpec {
    Poisson(PoissonSpec),
    Truncated(TruncPoissonSpec),
}

impl PoissonSpec {
    pub fn new(rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self { rate })
    }

    pub fn log_pmf(&self, y: u32) -> Result<f64> {
        check_rate(self.rate)?;
        Ok(PmfKernel::new(self.rate, None).ln_pmf(y))
    }

    pub fn moments(&self) -> (f64, f64) {
        (self.rate, self.rate)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        sample_poisson(self.rate, rng)
    }
}

impl TruncPoissonSpec {
    pub fn new(rate: f64, bound: u32) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self { rate, bound })
    }

    pub fn log_pmf(&self, y: u32) -> Result<f64> {
        check_rate(self.rate)?;
        if y > self.bound {
            return Err(Error::OutsideSupport {
                value: y,
                bound: self.bound,
            });
        }
        Ok(PmfKernel::new(self.rate, Some(self.bound)).ln_pmf(y))
    }

    /// Mean and variance by summation over `0..=bound`.
    pub fn moments(&self) -> (f64, f64) {
        let kernel = PmfKernel::new(self.rate, Some(self.bound));
        let (mut m1, mut m2) = (0.0, 0.0);
        for y in 0..=self.bound {
            let p = kernel.ln_pmf(y).exp();
            m1 += p * y as f64;
            m2 += p * (y as f64) * (y as f64);
        }
        (m1, (m2 - m1 * m1).max(0.0))
    }

    /// Exact inversion over the finite pmf.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if self.rate == 0.0 || self.bound == 0 {
            return 0;
        }
        let kernel = PmfKernel::new(self.rate, Some(self.bound));
        let u: f64 = rng.random();
        let mut cdf = 0.0;
        for y in 0..self.bound {
            cdf += kernel.ln_pmf(y).exp();
            if u < cdf {
                return y;
            }
        }
        self.bound
    }
}

impl RateSpec {
    pub fn new(rate: f64, bound: Option<u32>) -> Result<Self> {
        Ok(match bound {
            None => RateSpec::Poisson(PoissonSpec::new(rate)?),
            Some(bound) => RateSpec::Truncated(TruncPoissonSpec::new(rate, bound)?),
        })
    }

    pub fn log_pmf(&self, y: u32) -> Result<f64> {
        match self {
            RateSpec::Poisson(s) => s.log_pmf(y),
            RateSpec::Truncated(s) => s.log_pmf(y),
        }
    }

    pub fn moments(&self) -> (f64, f64) {
        match self {
            RateSpec::Poisson(s) => s.moments(),
            RateSpec::Truncated(s) => s.moments(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            RateSpec::Poisson(s) => s.sample(rng),
            RateSpec::Truncated(s) => s.sample(rng),
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate.is_finite() && rate >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "rate must be finite and non-negative, got {rate}"
        )))
    }
}

fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u32 {
    if rate <= 0.0 {
        return 0;
    }
    if rate > INVERSION_MAX_RATE {
        use rand_distr::{Distribution, Poisson};
        let dist = Poisson::new(rate).expect("finite positive rate");
        return dist.sample(rng) as u32;
    }
    let u: f64 = rng.random();
    let mut p = (-rate).exp();
    let mut cdf = p;
    let mut y = 0u32;
    while u >= cdf {
        y += 1;
        p *= rate / y as f64;
        cdf += p;
        // Guard the tail against rounding: cdf can stall just below 1.
        if p < f64::MIN_POSITIVE {
            break;
        }
    }
    y
}

/// Precomputed `ln pmf` for one rate, reused across all observations in a
/// likelihood pass. Not validated; callers check rates first.
///
/// Truncated kernels also carry upper tails `ln P(X ≥ t)` and the
/// conditional means `E[X | X ≥ t]` for `t = 0..=A`, which the clipped
/// observation model needs at `y = A`.
#[derive(Clone, Debug)]
pub struct PmfKernel {
    rate: f64,
    ln_rate: f64,
    ln_norm: f64,
    bound: Option<u32>,
    mean: f64,
    ln_tail: Vec<f64>,
    tail_mean: Vec<f64>,
}

impl PmfKernel {
    pub fn new(rate: f64, bound: Option<u32>) -> Self {
        let ln_rate = rate.ln();
        let mut kernel = Self {
            rate,
            ln_rate,
            ln_norm: rate,
            bound,
            mean: rate,
            ln_tail: Vec::new(),
            tail_mean: Vec::new(),
        };
        let Some(a) = bound else {
            return kernel;
        };
        if rate == 0.0 {
            kernel.ln_norm = 0.0;
            kernel.mean = 0.0;
            kernel.ln_tail = (0..=a).map(|t| if t == 0 { 0.0 } else { f64::NEG_INFINITY }).collect();
            kernel.tail_mean = vec![0.0; a as usize + 1];
            return kernel;
        }
        let terms: Vec<f64> = (0..=a)
            .map(|j| j as f64 * ln_rate - ln_factorial(j as u64))
            .collect();
        kernel.ln_norm = log_sum_exp(&terms);
        kernel.ln_tail = vec![0.0; a as usize + 1];
        kernel.tail_mean = vec![0.0; a as usize + 1];
        let (mut mass, mut first_moment) = (0.0, 0.0);
        for t in (0..=a as usize).rev() {
            let p = (terms[t] - kernel.ln_norm).exp();
            mass += p;
            first_moment += t as f64 * p;
            kernel.ln_tail[t] = mass.ln();
            kernel.tail_mean[t] = first_moment / mass;
        }
        kernel.ln_tail[0] = 0.0;
        kernel.mean = kernel.tail_mean[0];
        kernel
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Mean of the (possibly truncated) law; the derivative of the log
    /// normalizer with respect to `ln rate`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    #[inline]
    pub fn ln_pmf(&self, y: u32) -> f64 {
        if let Some(a) = self.bound {
            if y > a {
                return f64::NEG_INFINITY;
            }
        }
        if self.rate == 0.0 {
            return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        y as f64 * self.ln_rate - self.ln_norm - ln_factorial(y as u64)
    }

    /// `ln P(X ≥ t)` for a truncated kernel (`−∞` beyond the bound).
    ///
    /// # Panics
    /// On an untruncated kernel.
    #[inline]
    pub fn ln_tail(&self, t: u32) -> f64 {
        let a = self.bound.expect("tails are only tabulated for truncated kernels");
        if t > a {
            f64::NEG_INFINITY
        } else {
            self.ln_tail[t as usize]
        }
    }

    /// `E[X | X ≥ t]`, the derivative of `ln P(X ≥ t)` with respect to
    /// `ln rate` plus the mean.
    #[inline]
    pub fn tail_mean(&self, t: u32) -> f64 {
        self.tail_mean[t as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Linear-space truncated pmf, evaluated straight from the definition.
    fn trunc_pmf_direct(rate: f64, bound: u32, y: u32) -> f64 {
        let mut fact = 1.0;
        let mut denom = 0.0;
        let mut num = 0.0;
        for j in 0..=bound {
            if j > 0 {
                fact *= j as f64;
            }
            let term = rate.powi(j as i32) / fact;
            denom += term;
            if j == y {
                num = term;
            }
        }
        num / denom
    }

    #[test]
    fn poisson_log_pmf_values() {
        let s = PoissonSpec::new(1.0).unwrap();
        assert!((s.log_pmf(0).unwrap() + 1.0).abs() < 1e-15);
        let zero = PoissonSpec::new(0.0).unwrap();
        assert_eq!(zero.log_pmf(0).unwrap(), 0.0);
        assert_eq!(zero.log_pmf(3).unwrap(), f64::NEG_INFINITY);
        assert!(PoissonSpec::new(-1.0).is_err());
        assert!(PoissonSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn truncated_log_pmf_values() {
        let point = TruncPoissonSpec::new(2.5, 0).unwrap();
        assert_eq!(point.log_pmf(0).unwrap(), 0.0);

        let s = TruncPoissonSpec::new(1.08, 3).unwrap();
        let expected = trunc_pmf_direct(1.08, 3, 2).ln();
        assert!((s.log_pmf(2).unwrap() - expected).abs() < 1e-13);
        assert!(matches!(
            s.log_pmf(4),
            Err(Error::OutsideSupport { value: 4, bound: 3 })
        ));
        let zero = TruncPoissonSpec::new(0.0, 4).unwrap();
        assert_eq!(zero.log_pmf(0).unwrap(), 0.0);
        assert_eq!(zero.log_pmf(1).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn truncated_moments_match_reported_values() {
        let (m, v) = TruncPoissonSpec::new(1.08, 3).unwrap().moments();
        assert!((m - 1.00).abs() < 0.005, "mean {m}");
        assert!((v - 0.84).abs() < 0.005, "var {v}");
        // Variance by direct summation is 0.722, not the often quoted 0.56.
        let (m, v) = TruncPoissonSpec::new(0.836, 3).unwrap().moments();
        assert!((m - 0.80).abs() < 0.005, "mean {m}");
        assert!((v - 0.722).abs() < 0.001, "var {v}");
        assert_eq!(TruncPoissonSpec::new(0.0, 3).unwrap().moments(), (0.0, 0.0));
    }

    #[test]
    fn truncated_pmf_sums_to_one() {
        for &rate in &[0.0, 0.1, 0.7, 1.0, 2.0, 5.0, 30.0] {
            for bound in 0..8 {
                let s = TruncPoissonSpec::new(rate, bound).unwrap();
                let total: f64 = (0..=bound).map(|y| s.log_pmf(y).unwrap().exp()).sum();
                assert!((total - 1.0).abs() < 1e-12, "rate {rate} bound {bound}");
            }
        }
    }

    #[test]
    fn poisson_pmf_tail_mass() {
        for &rate in &[0.0, 0.3, 1.0, 4.0, 25.0, 100.0] {
            let s = PoissonSpec::new(rate).unwrap();
            let y_max = (rate + 40.0 * (rate + 1.0).sqrt()).ceil() as u32;
            let total: f64 = (0..=y_max).map(|y| s.log_pmf(y).unwrap().exp()).sum();
            assert!(total >= 1.0 - 1e-10, "rate {rate}: {total}");
        }
    }

    #[test]
    fn log_pmf_rate_derivative() {
        let h = 1e-6;
        for &rate in &[0.5, 1.0, 2.0] {
            for y in 0..6 {
                let f = |r: f64| PoissonSpec::new(r).unwrap().log_pmf(y).unwrap();
                let fd = (f(rate + h) - f(rate - h)) / (2.0 * h);
                let analytic = y as f64 / rate - 1.0;
                assert!((fd - analytic).abs() < 1e-5, "rate {rate} y {y}");
            }
        }
    }

    #[test]
    fn kernel_tails_match_direct_sums() {
        for &rate in &[0.0, 0.3, 1.08, 4.0] {
            let k = PmfKernel::new(rate, Some(3));
            for t in 0..=3u32 {
                let direct: f64 = (t..=3).map(|y| trunc_pmf_direct(rate, 3, y)).sum();
                if direct == 0.0 {
                    assert_eq!(k.ln_tail(t), f64::NEG_INFINITY);
                    continue;
                }
                assert!((k.ln_tail(t) - direct.ln()).abs() < 1e-12, "rate {rate} t {t}");
                if rate > 0.0 {
                    let h = 1e-6;
                    let at = |lr: f64| PmfKernel::new(lr.exp(), Some(3)).ln_tail(t);
                    let slope = (at(rate.ln() + h) - at(rate.ln() - h)) / (2.0 * h);
                    assert!((slope - (k.tail_mean(t) - k.mean())).abs() < 1e-7);
                }
            }
            assert_eq!(k.ln_tail(4), f64::NEG_INFINITY);
        }
    }

    #[test]
    fn kernel_mean_is_log_normalizer_slope() {
        // d ln Z / d ln rate = truncated mean
        for &rate in &[0.3, 1.08, 3.0] {
            let h: f64 = 1e-6;
            let ln_z = |r: f64| PmfKernel::new(r, Some(3)).ln_norm;
            let slope = (ln_z(rate * h.exp()) - ln_z(rate * (-h).exp())) / (2.0 * h);
            let (mean, _) = TruncPoissonSpec::new(rate, 3).unwrap().moments();
            assert!((slope - mean).abs() < 1e-6);
            assert!((PmfKernel::new(rate, Some(3)).mean() - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn samplers() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zero = PoissonSpec::new(0.0).unwrap();
        assert!((0..100).all(|_| zero.sample(&mut rng) == 0));

        let n = 100_000;
        let one = PoissonSpec::new(1.0).unwrap();
        let mean = (0..n).map(|_| one.sample(&mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.026, "{mean}");

        let t = TruncPoissonSpec::new(1.08, 3).unwrap();
        let mean = (0..n).map(|_| t.sample(&mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - t.moments().0).abs() < 0.01, "{mean}");

        let big = PoissonSpec::new(80.0).unwrap();
        let mean = (0..20_000).map(|_| big.sample(&mut rng) as f64).sum::<f64>() / 20_000.0;
        assert!((mean - 80.0).abs() < 0.5, "{mean}");
    }

    /// Pearson chi-square over cells with expected count >= 5, lumping the tail.
    fn chi_square_p(counts: &[u64], probs: &[f64], n: u64) -> f64 {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut stat = 0.0;
        let mut cells = 0;
        let (mut tail_obs, mut tail_exp) = (0.0, 0.0);
        for (c, p) in counts.iter().zip(probs) {
            let e = p * n as f64;
            if e >= 5.0 {
                stat += (*c as f64 - e).powi(2) / e;
                cells += 1;
            } else {
                tail_obs += *c as f64;
                tail_exp += e;
            }
        }
        if tail_exp > 0.0 {
            stat += (tail_obs - tail_exp).powi(2) / tail_exp.max(1e-300);
            cells += 1;
        }
        let df = (cells - 1) as f64;
        1.0 - ChiSquared::new(df).unwrap().cdf(stat)
    }

    #[test]
    fn sampler_chi_square_smoke() {
        let n = 1_000_000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(20240601);

        let s = PoissonSpec::new(1.3).unwrap();
        let mut counts = vec![0u64; 40];
        for _ in 0..n {
            counts[(s.sample(&mut rng) as usize).min(39)] += 1;
        }
        let mut probs: Vec<f64> = (0..39).map(|y| s.log_pmf(y).unwrap().exp()).collect();
        probs.push(1.0 - probs.iter().sum::<f64>());
        assert!(chi_square_p(&counts, &probs, n) > 0.001);

        let t = TruncPoissonSpec::new(1.414, 2).unwrap();
        let mut counts = vec![0u64; 3];
        for _ in 0..n {
            counts[t.sample(&mut rng) as usize] += 1;
        }
        let probs: Vec<f64> = (0..3).map(|y| t.log_pmf(y).unwrap().exp()).collect();
        assert!(chi_square_p(&counts, &probs, n) > 0.001);
    }

    #[test]
    fn log_sum_exp_edges() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_add_exp(-1.0, -2.0) - ((-1f64).exp() + (-2f64).exp()).ln()).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
    }
}
