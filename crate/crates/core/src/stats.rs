//! Pearson correlation with its two-sided p-value, and the one-sided
//! Mann-Whitney U test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest pooled sample size for which the exact null distribution is enumerated.
pub const EXACT_MAX_TOTAL: usize = 12;

/// Hard ceiling for explicit exact requests; C(24, 12) is about 2.7 million subsets.
const ENUMERATION_LIMIT: usize = 24;

const BETA_CF_TOLERANCE: f64 = 1e-12;
const BETA_CF_MAX_ITER: usize = 500;

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Product-moment correlation (two-pass), clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!(
            "series length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Invalid("pearson needs at least two points".into()));
    }
    if is_constant(x) || is_constant(y) {
        return Err(Error::Invalid("zero variance".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson `r` over `n` samples and its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrResult {
    pub r: f64,
    pub n: usize,
    pub p: f64,
}

pub fn correlate(x: &[f64], y: &[f64]) -> Result<CorrResult> {
    let r = pearson(x, y)?;
    let p = pearson_pvalue(r, x.len())?;
    Ok(CorrResult { r, n: x.len(), p })
}

/// Two-sided p-value of `r` under the t distribution with `n - 2` degrees of freedom.
pub fn pearson_pvalue(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::Invalid(format!("p-value needs n >= 3, got {n}")));
    }
    if !(r.abs() <= 1.0) {
        return Err(Error::Invalid(format!("correlation out of range: {r}")));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t2 = r * r * df / (1.0 - r * r);
    Ok(regularized_incomplete_beta(df / (df + t2), 0.5 * df, 0.5).clamp(0.0, 1.0))
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (k, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b), continued fraction with modified Lentz.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < BETA_CF_TOLERANCE {
            break;
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MwMethod {
    Exact,
    NormalApprox,
}

impl MwMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            MwMethod::Exact => "exact",
            MwMethod::NormalApprox => "normal-approx",
        }
    }
}

/// Mann-Whitney outcome for the alternative "second sample stochastically greater".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MWResult {
    /// U statistic of the second sample.
    pub u: f64,
    /// One-sided p-value.
    pub p: f64,
    pub method: MwMethod,
    pub n1: usize,
    pub n2: usize,
}

struct Ranked {
    /// Twice the midrank of every pooled value; `a` first, then `b`.
    doubled_ranks: Vec<u64>,
    /// Sizes of tie groups with more than one member.
    ties: Vec<usize>,
}

fn rank_pooled(a: &[f64], b: &[f64]) -> Result<Ranked> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("Mann-Whitney needs two non-empty samples".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    if pooled.iter().any(|v| v.is_nan()) {
        return Err(Error::Invalid("Mann-Whitney sample contains NaN".into()));
    }
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut doubled_ranks = vec![0u64; pooled.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based start+1..=end); midrank doubled = start + 1 + end.
        let doubled = (start + 1 + end) as u64;
        for &k in &order[start..end] {
            doubled_ranks[k] = doubled;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    Ok(Ranked { doubled_ranks, ties })
}

fn u_from_doubled_rank_sum(doubled_sum: u64, n2: usize) -> f64 {
    doubled_sum as f64 / 2.0 - (n2 * (n2 + 1)) as f64 / 2.0
}

/// Mann-Whitney U test of "`b` stochastically greater than `a`".
///
/// Uses exact enumeration when the pooled size is at most [`EXACT_MAX_TOTAL`]
/// and there are no ties, otherwise the tie-corrected normal approximation
/// with continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MWResult> {
    let ranked = rank_pooled(a, b)?;
    if a.len() + b.len() <= EXACT_MAX_TOTAL && ranked.ties.is_empty() {
        Ok(exact_from_ranks(&ranked, a.len(), b.len()))
    } else {
        Ok(normal_from_ranks(&ranked, a.len(), b.len()))
    }
}

/// Exact one-sided p-value by enumerating every assignment of pooled ranks to `b`.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> Result<MWResult> {
    let ranked = rank_pooled(a, b)?;
    if a.len() + b.len() > ENUMERATION_LIMIT {
        return Err(Error::Invalid(format!(
            "exact enumeration limited to {ENUMERATION_LIMIT} pooled values"
        )));
    }
    Ok(exact_from_ranks(&ranked, a.len(), b.len()))
}

/// Normal approximation regardless of sample size.
pub fn mann_whitney_normal(a: &[f64], b: &[f64]) -> Result<MWResult> {
    let ranked = rank_pooled(a, b)?;
    Ok(normal_from_ranks(&ranked, a.len(), b.len()))
}

fn exact_from_ranks(ranked: &Ranked, n1: usize, n2: usize) -> MWResult {
    let n = n1 + n2;
    let ranks = &ranked.doubled_ranks;
    let observed: u64 = ranks[n1..].iter().sum();

    // Lexicographic walk over all n2-subsets of 0..n.
    let mut idx: Vec<usize> = (0..n2).collect();
    let (mut total, mut hits) = (0u64, 0u64);
    loop {
        total += 1;
        if idx.iter().map(|&k| ranks[k]).sum::<u64>() >= observed {
            hits += 1;
        }
        let mut pos = n2;
        while pos > 0 && idx[pos - 1] == n - n2 + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        idx[pos - 1] += 1;
        for k in pos..n2 {
            idx[k] = idx[k - 1] + 1;
        }
    }
    MWResult {
        u: u_from_doubled_rank_sum(observed, n2),
        p: hits as f64 / total as f64,
        method: MwMethod::Exact,
        n1,
        n2,
    }
}

fn normal_from_ranks(ranked: &Ranked, n1: usize, n2: usize) -> MWResult {
    let observed: u64 = ranked.doubled_ranks[n1..].iter().sum();
    let u = u_from_doubled_rank_sum(observed, n2);
    let (f1, f2) = (n1 as f64, n2 as f64);
    let n = f1 + f2;
    let tie_term: f64 = ranked
        .ties
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / (n * (n - 1.0)).max(1.0);
    let variance = f1 * f2 / 12.0 * ((n + 1.0) - tie_term);
    let p = if variance <= 0.0 {
        1.0
    } else {
        let z = (u - f1 * f2 / 2.0 - 0.5) / variance.sqrt();
        normal_sf(z)
    };
    MWResult {
        u,
        p: p.clamp(0.0, 1.0),
        method: MwMethod::NormalApprox,
        n1,
        n2,
    }
}

/// Upper tail of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_and_negated_series() {
        let x = [1.0, 2.0, 4.0, 7.0, 11.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    // Oracle with compensated (Neumaier) sums of exact products.
    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        fn ksum(v: impl Iterator<Item = f64>) -> f64 {
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for x in v {
                let t = s + x;
                c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
                s = t;
            }
            s + c
        }
        let n = x.len() as f64;
        let mx = ksum(x.iter().copied()) / n;
        let my = ksum(y.iter().copied()) / n;
        let sxy = ksum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
        let sxx = ksum(x.iter().map(|a| (a - mx) * (a - mx)));
        let syy = ksum(y.iter().map(|b| (b - my) * (b - my)));
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn pearson_matches_compensated_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let n = rng.random_range(3..200);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.random_range(-40.0..40.0)).collect();
            assert!((pearson(&x, &y).unwrap() - pearson_oracle(&x, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn pvalue_reference_points() {
        assert_eq!(pearson_pvalue(0.0, 12).unwrap(), 1.0);
        assert_eq!(pearson_pvalue(1.0, 12).unwrap(), 0.0);
        assert_eq!(pearson_pvalue(-1.0, 12).unwrap(), 0.0);
        // Values frozen from an independent t-distribution survival function.
        for (r, n, want) in [
            (0.5, 10, 0.141_113_281_249_999_97),
            (0.3, 20, 0.198_757_717_344_553_6),
            (0.8, 5, 0.104_088_038_661_827_78),
            (0.1, 100, 0.322_217_363_030_619_9),
            (0.45, 30, 0.012_591_071_275_196_758),
            (0.9, 4, 0.1),
        ] {
            let p = pearson_pvalue(r, n).unwrap();
            assert!((p - want).abs() < 1e-10, "r={r} n={n}: {p} vs {want}");
        }
        assert!(pearson_pvalue(0.5, 2).is_err());
        assert!(pearson_pvalue(1.5, 10).is_err());
    }

    #[test]
    fn incomplete_beta_matches_statrs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2000 {
            let a = rng.random_range(0.2..60.0);
            let b = rng.random_range(0.2..60.0);
            let x = rng.random_range(0.0..1.0);
            let want = statrs::function::beta::beta_reg(a, b, x);
            let got = regularized_incomplete_beta(x, a, b);
            assert!((got - want).abs() < 1e-10, "I_{x}({a},{b}) = {got} vs {want}");
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!(ln_gamma(1.0).abs() < 1e-14);
    }

    #[test]
    fn pvalue_monotone() {
        for n in [5usize, 10, 40] {
            let mut last = 1.0;
            for k in 1..100 {
                let p = pearson_pvalue(k as f64 / 100.0, n).unwrap();
                assert!(p <= last);
                last = p;
            }
        }
        for r in [0.2, 0.5, 0.8] {
            let mut last = 1.0;
            for n in 3..60 {
                let p = pearson_pvalue(r, n).unwrap();
                assert!(p <= last);
                last = p;
            }
        }
    }

    #[test]
    fn two_by_two_exact() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.method, MwMethod::Exact);
        assert_eq!(r.u, 4.0);
        assert!((r.p - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_do_not_reject() {
        let a = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0];
        assert!(mann_whitney_u(&a, &a).unwrap().p >= 0.5);
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.method, MwMethod::NormalApprox);
        assert!(r.p >= 0.5);
        let r = mann_whitney_u(&[2.0; 7], &[2.0; 9]).unwrap();
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn empty_samples_rejected() {
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
        assert!(mann_whitney_u(&[1.0], &[]).is_err());
    }

    #[test]
    fn complete_separation_five_five() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0, 4.0, 5.0], &[6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        assert!((r.p - 1.0 / 252.0).abs() < 1e-15);
    }

    #[test]
    fn ties_use_normal_approximation() {
        let r = mann_whitney_u(&[1.0, 2.0, 2.0], &[2.0, 3.0, 4.0]).unwrap();
        assert_eq!(r.method, MwMethod::NormalApprox);
    }

    #[test]
    fn normal_tracks_exact_at_eight_by_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        for _ in 0..100 {
            let a: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.random::<f64>() + 0.3).collect();
            let e = mann_whitney_exact(&a, &b).unwrap();
            let n = mann_whitney_normal(&a, &b).unwrap();
            assert!((e.p - n.p).abs() <= 0.02);
        }
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(seed in any::<u64>(), scale in 0.01f64..100.0, shift in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..30).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..30).map(|_| rng.random_range(-5.0..5.0)).collect();
            let r = pearson(&x, &y).unwrap();
            let pos: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
            let neg: Vec<f64> = x.iter().map(|v| -scale * v + shift).collect();
            prop_assert!((pearson(&pos, &y).unwrap() - r).abs() < 1e-9);
            prop_assert!((pearson(&neg, &y).unwrap() + r).abs() < 1e-9);
            prop_assert!((pearson(&y, &x).unwrap() - r).abs() < 1e-15);
        }

        #[test]
        fn u_statistics_sum_to_product(seed in any::<u64>(), n1 in 1usize..15, n2 in 1usize..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..n1).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..n2).map(|_| rng.random::<f64>()).collect();
            let ub = mann_whitney_u(&a, &b).unwrap();
            let ua = mann_whitney_u(&b, &a).unwrap();
            prop_assert_eq!(ua.u + ub.u, (n1 * n2) as f64);
            prop_assert!(ub.u >= 0.0 && ub.u <= (n1 * n2) as f64);
            prop_assert!((0.0..=1.0).contains(&ub.p));
        }
    }
}
