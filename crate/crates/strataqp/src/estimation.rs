//! Estimators and confidence intervals.
//!
//! Samples drawn with probability p contribute the Horvitz-Thompson value
//! e(t)/p when they pass the filter and 0 otherwise. Per-stratum running
//! moments use the Youngs-Cramer update, which stays stable under the large
//! magnitudes that 1/p scaling produces. Confidence intervals are the usual
//! CLT half-widths, and independent strata / phases combine as documented on
//! each function.

use crate::error::{Error, Result};
use crate::sampling_index::{Predicate, Record, Sample};

/// Two-sided normal critical value: z such that P(|N(0,1)| <= z) = 1 - delta.
pub fn z_delta(delta: f64) -> f64 {
    assert!(delta > 0.0 && delta < 1.0, "delta must be in (0, 1)");
    inv_norm_cdf(1.0 - delta / 2.0)
}

/// Inverse standard normal CDF, Wichura's AS 241 rational approximation
/// (|relative error| < 1e-15 over the full open interval).
fn inv_norm_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        const A: [f64; 8] = [
            3.387_132_872_796_366_5e0,
            1.331_416_678_917_843_8e2,
            1.971_590_950_306_551_3e3,
            1.373_716_979_671_443_4e4,
            4.592_195_393_154_987e4,
            6.726_577_092_700_87e4,
            3.343_057_558_358_813e4,
            2.509_080_928_730_122_7e3,
        ];
        const B: [f64; 8] = [
            1.0,
            4.231_333_070_160_091e1,
            6.871_870_074_920_579e2,
            5.394_196_021_424_751e3,
            2.121_379_430_415_659_7e4,
            3.930_789_580_009_271e4,
            2.872_908_573_572_194_3e4,
            5.226_495_278_852_545_6e3,
        ];
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        const C: [f64; 8] = [
            1.423_437_110_749_683_5e0,
            4.630_337_846_156_546e0,
            5.769_497_221_460_691e0,
            3.647_848_324_763_204_5e0,
            1.270_458_252_452_368_4e0,
            2.417_807_251_774_506e-1,
            2.272_384_498_926_918_4e-2,
            7.745_450_142_783_414e-4,
        ];
        const D: [f64; 8] = [
            1.0,
            2.053_191_626_637_759e0,
            1.676_384_830_183_803_8e0,
            6.897_673_349_851e-1,
            1.481_039_764_274_800_8e-1,
            1.519_866_656_361_645_7e-2,
            5.475_938_084_995_345e-4,
            1.050_750_071_644_416_9e-9,
        ];
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        const E: [f64; 8] = [
            6.657_904_643_501_103e0,
            5.463_784_911_164_114e0,
            1.784_826_539_917_291_3e0,
            2.965_605_718_285_048_7e-1,
            2.653_218_952_657_612_4e-2,
            1.242_660_947_388_078_4e-3,
            2.711_555_568_743_487_6e-5,
            2.010_334_399_292_288_1e-7,
        ];
        const F: [f64; 8] = [
            1.0,
            5.998_322_065_558_88e-1,
            1.369_298_809_227_358e-1,
            1.487_536_129_085_061_5e-2,
            7.868_691_311_456_133e-4,
            1.846_318_317_510_054_8e-5,
            1.421_511_758_316_446e-7,
            2.044_263_103_389_939_7e-15,
        ];
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Horvitz-Thompson per-sample value for the given expression and filter.
pub fn ht_value<F: Fn(&Record) -> f64>(
    sample: &Sample<'_>,
    filter: &Predicate,
    expr: F,
) -> Result<f64> {
    if !(sample.p > 0.0 && sample.p <= 1.0) {
        return Err(Error::InvalidProbability);
    }
    if !filter.pass(sample.record) {
        return Ok(0.0);
    }
    Ok(expr(sample.record) / sample.p)
}

/// Running first/second moments of the per-sample values of one stratum.
/// `exact_offset` carries deterministically aggregated mass (boundary leaf
/// runs) that adds to the point estimate with zero variance.
#[derive(Debug, Clone, Default)]
pub struct EstimatorState {
    pub n: u64,
    sx: f64,
    s2: f64,
    pub exact_offset: f64,
}

impl EstimatorState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Youngs-Cramer update.
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sx += x;
        if self.n > 1 {
            let n = self.n as f64;
            let d = n * x - self.sx;
            self.s2 += d * d / (n * (n - 1.0));
        }
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sx / self.n as f64
        }
    }

    /// Sample variance with Bessel's correction.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.s2 / (self.n as f64 - 1.0)).max(0.0)
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.sx
    }

    pub fn sum_sq_dev(&self) -> f64 {
        self.s2
    }

    /// Point estimate and CLT half-width at the given critical value.
    pub fn estimate(&self, z: f64) -> Estimate {
        let eps = if self.n < 2 {
            f64::INFINITY
        } else {
            z * self.std_dev() / (self.n as f64).sqrt()
        };
        Estimate {
            a_hat: self.mean() + self.exact_offset,
            eps,
            n: self.n,
            low_support: self.n < 30,
        }
    }
}

/// A point estimate with its confidence-interval half-width. `low_support`
/// flags intervals built from fewer than 30 samples, where the CLT width is
/// not trustworthy.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub a_hat: f64,
    pub eps: f64,
    pub n: u64,
    pub low_support: bool,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { a_hat: value, eps: 0.0, n: 0, low_support: false }
    }
}

/// Combine estimates of disjoint strata: sums add, half-widths add in
/// quadrature (independence).
pub fn combine_strata(parts: &[Estimate]) -> Estimate {
    let a_hat = parts.iter().map(|e| e.a_hat).sum();
    let eps = parts.iter().map(|e| e.eps * e.eps).sum::<f64>().sqrt();
    Estimate {
        a_hat,
        eps,
        n: parts.iter().map(|e| e.n).sum(),
        low_support: parts.iter().any(|e| e.low_support),
    }
}

/// Merge the pilot-phase estimate with the refined-phase estimate of the
/// same range, weighting both the means and the half-widths by sample count.
pub fn combine_phases(p0: &Estimate, p1: &Estimate) -> Estimate {
    if p1.n == 0 {
        return *p0;
    }
    if p0.n == 0 {
        return *p1;
    }
    let n0 = p0.n as f64;
    let n1 = p1.n as f64;
    let total = n0 + n1;
    Estimate {
        a_hat: (n0 * p0.a_hat + n1 * p1.a_hat) / total,
        eps: (n0 * n0 * p0.eps + n1 * n1 * p1.eps) / (total * total),
        n: p0.n + p1.n,
        low_support: p0.low_support && p1.low_support,
    }
}

/// Reconcile a parent stratum's estimate with estimates from the child strata
/// it was split into. The children must tile the parent's key range exactly.
/// Means average; the combined half-width shrinks with the number of extra
/// strata the split introduced.
pub fn overlap_adjust(
    parent: &Estimate,
    parent_range: (i64, i64),
    children: &[((i64, i64), Estimate)],
) -> Result<Estimate> {
    if children.is_empty() {
        return Err(Error::RangeMismatch);
    }
    if children[0].0 .0 != parent_range.0 || children.last().unwrap().0 .1 != parent_range.1 {
        return Err(Error::RangeMismatch);
    }
    for w in children.windows(2) {
        if w[0].0 .1 != w[1].0 .0 {
            return Err(Error::RangeMismatch);
        }
    }
    let child = combine_strata(&children.iter().map(|(_, e)| *e).collect::<Vec<_>>());
    let delta_k = (children.len() - 1) as f64;
    Ok(Estimate {
        a_hat: (parent.a_hat + child.a_hat) / 2.0,
        eps: ((parent.eps * parent.eps + child.eps * child.eps).sqrt()) / (delta_k + 1.0),
        n: parent.n + child.n,
        low_support: parent.low_support || child.low_support,
    })
}
