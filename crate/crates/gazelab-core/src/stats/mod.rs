//! Nonparametric analysis toolkit: Wilcoxon signed-rank, Mann-Whitney
//! U and Kruskal-Wallis H with exact small-sample paths, plus the
//! survey scoring and coding procedures ([`survey`]).

pub mod survey;

pub use survey::{
    analyze_survey, read_survey_csv, Attribute, SurveyAnalysis, SurveyCondition, SurveyResponse,
};

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("inputs must have equal length, got {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("survey csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("kruskal-wallis needs at least 2 groups with data")]
    TooFewGroups,
}

/// How a p-value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    NormalApprox,
    /// No nonzero differences: the test is vacuous and p is reported
    /// as 1.
    Degenerate,
}

/// Average ranks (ties shared), doubled so they stay integers.
/// Returns doubled ranks aligned with the input order.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN ranks"));
    let mut out = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // positions i..=j share the rank (i+1 + j+1)/2; doubled: i+j+2
        let doubled = (i + j + 2) as u64;
        for &k in &idx[i..=j] {
            out[k] = doubled;
        }
        i = j + 1;
    }
    out
}

/// Tie-group sizes of a value multiset.
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        groups.push(j - i + 1);
        i = j + 1;
    }
    groups
}

fn normal_sf(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    1.0 - n.cdf(z)
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct WilcoxonResult {
    /// min(W+, W-) over the nonzero differences.
    pub w: f64,
    pub p_two_sided: f64,
    /// Number of nonzero differences actually ranked.
    pub n_used: usize,
    pub method: PMethod,
}

/// Paired two-sided Wilcoxon signed-rank test. Zero differences are
/// dropped; tied |differences| share average ranks. Exact p by
/// enumeration over sign assignments for n <= 25 (dynamic program over
/// rank sums), normal approximation with continuity correction above.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::Empty("wilcoxon"));
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            w: 0.0,
            p_two_sided: 1.0,
            n_used: 0,
            method: PMethod::Degenerate,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks2 = doubled_ranks(&abs);
    let w_plus2: u64 = diffs
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &r)| r)
        .sum();
    let total2: u64 = ranks2.iter().sum(); // n(n+1)
    let w_minus2 = total2 - w_plus2;
    let w_min2 = w_plus2.min(w_minus2);

    let (p, method) = if n <= 25 {
        (exact_signed_rank_p(&ranks2, w_min2), PMethod::Exact)
    } else {
        let groups = tie_groups(&abs);
        let nf = n as f64;
        let tie_term: f64 = groups
            .iter()
            .map(|&t| (t * t * t - t) as f64)
            .sum::<f64>()
            / 48.0;
        let sigma = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term).sqrt();
        let mean = nf * (nf + 1.0) / 4.0;
        let w = w_min2 as f64 / 2.0;
        let z = (w - mean + 0.5) / sigma;
        ((2.0 * (1.0 - normal_sf(z))).min(1.0), PMethod::NormalApprox)
    };
    Ok(WilcoxonResult {
        w: w_min2 as f64 / 2.0,
        p_two_sided: p,
        n_used: n,
        method,
    })
}

/// Exact two-sided p over all 2^n sign assignments via a rank-sum
/// dynamic program: p = P(W+ <= w) + P(W+ >= total - w).
fn exact_signed_rank_p(ranks2: &[u64], w_min2: u64) -> f64 {
    let total2: u64 = ranks2.iter().sum();
    let mut counts = vec![0.0f64; total2 as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        reach += r;
        for s in (0..=reach.saturating_sub(r)).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
    }
    let all: f64 = 2f64.powi(ranks2.len() as i32);
    let lo_tail: f64 = counts[..=w_min2 as usize].iter().sum();
    let hi_tail: f64 = counts[(total2 - w_min2) as usize..].iter().sum();
    ((lo_tail + hi_tail) / all).min(1.0)
}

// ---------------------------------------------------------------------------
// Mann-Whitney U
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct MannWhitneyResult {
    /// min(U1, U2), with average ranks for ties.
    pub u: f64,
    pub p_two_sided: f64,
    pub method: PMethod,
}

/// Two-sided Mann-Whitney U. Exact p by enumeration of all
/// C(n1+n2, n1) group assignments when n1+n2 <= 16, tie-corrected
/// normal approximation with continuity correction otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitneyResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty("mann-whitney"));
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let ranks2 = doubled_ranks(&pooled);
    let r1_2: u64 = ranks2[..n1].iter().sum();
    // doubled U1 = doubled R1 - n1(n1+1)
    let u1_2 = r1_2 - (n1 * (n1 + 1)) as u64;
    let max_u2 = 2 * (n1 * n2) as u64;
    let u2_2 = max_u2 - u1_2;
    let u_min2 = u1_2.min(u2_2);

    let n = n1 + n2;
    let (p, method) = if n <= 16 {
        (
            exact_mann_whitney_p(&ranks2, n1, u_min2, max_u2),
            PMethod::Exact,
        )
    } else {
        let groups = tie_groups(&pooled);
        let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
        let tie_term: f64 = groups
            .iter()
            .map(|&t| (t * t * t - t) as f64)
            .sum::<f64>();
        let sigma = ((n1f * n2f / 12.0) * (nf + 1.0 - tie_term / (nf * (nf - 1.0)))).sqrt();
        let u = u_min2 as f64 / 2.0;
        let z = (u - n1f * n2f / 2.0 + 0.5) / sigma;
        ((2.0 * (1.0 - normal_sf(z))).min(1.0), PMethod::NormalApprox)
    };
    Ok(MannWhitneyResult {
        u: u_min2 as f64 / 2.0,
        p_two_sided: p,
        method,
    })
}

/// Exact two-sided p: enumerate every choice of n1 pooled ranks,
/// p = P(U1 <= u) + P(U1 >= n1 n2 - u).
fn exact_mann_whitney_p(ranks2: &[u64], n1: usize, u_min2: u64, max_u2: u64) -> f64 {
    let n = ranks2.len();
    let offset = (n1 * (n1 + 1)) as u64;
    let mut lo = 0u64;
    let mut hi = 0u64;
    let mut total = 0u64;
    // iterate subsets of size n1 via lexicographic index vector
    let mut pick: Vec<usize> = (0..n1).collect();
    loop {
        let sum2: u64 = pick.iter().map(|&i| ranks2[i]).sum();
        let u1_2 = sum2 - offset;
        total += 1;
        if u1_2 <= u_min2 {
            lo += 1;
        }
        if u1_2 >= max_u2 - u_min2 {
            hi += 1;
        }
        // next combination
        let mut i = n1;
        loop {
            if i == 0 {
                return (((lo + hi) as f64) / (total as f64)).min(1.0);
            }
            i -= 1;
            if pick[i] != i + n - n1 {
                break;
            }
        }
        pick[i] += 1;
        for j in i + 1..n1 {
            pick[j] = pick[j - 1] + 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Kruskal-Wallis H
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct KruskalWallisResult {
    pub h: f64,
    pub p: f64,
    pub df: usize,
}

/// Kruskal-Wallis H with tie correction; p from the chi-square with
/// k-1 degrees of freedom. An all-tied input (tie-correction
/// denominator zero) is defined as H = 0.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallisResult, StatsError> {
    let filled: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    if filled.len() < 2 {
        return Err(StatsError::TooFewGroups);
    }
    let pooled: Vec<f64> = filled.iter().flat_map(|g| g.iter().copied()).collect();
    let n = pooled.len() as f64;
    let ranks2 = doubled_ranks(&pooled);
    let mut h = 0.0;
    let mut start = 0;
    for g in &filled {
        let r_sum: f64 = ranks2[start..start + g.len()]
            .iter()
            .map(|&r| r as f64 / 2.0)
            .sum();
        h += r_sum * r_sum / g.len() as f64;
        start += g.len();
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    let tie_term: f64 = tie_groups(&pooled)
        .iter()
        .map(|&t| (t * t * t - t) as f64)
        .sum();
    let denom = 1.0 - tie_term / (n * n * n - n);
    let h = if denom <= 0.0 { 0.0 } else { h / denom };
    // numerical guard: H is nonnegative by construction
    let h = h.max(0.0);
    let df = filled.len() - 1;
    let chi = ChiSquared::new(df as f64).expect("df >= 1");
    let p = 1.0 - chi.cdf(h);
    Ok(KruskalWallisResult { h, p, df })
}

// ---------------------------------------------------------------------------
// Survey scoring primitives
// ---------------------------------------------------------------------------

/// Mean of the five bipolar adjective scores; range [1, 7].
pub fn uncanniness_score(likert: &[u8; 5]) -> f64 {
    likert.iter().map(|&v| v as f64).sum::<f64>() / 5.0
}

/// Binary coding of detection confidences: below 50 codes as 0 (seen
/// as real), above 50 as 1 (seen as fake), exactly 50 is excluded from
/// coding and counted separately.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionCoding {
    pub codes: Vec<u8>,
    pub excluded: usize,
    /// Mean coded value as a percentage; `None` when nothing codable.
    pub mean_likelihood_percent: Option<f64>,
}

pub fn code_detection(confidences: &[f64]) -> DetectionCoding {
    let mut codes = Vec::with_capacity(confidences.len());
    let mut excluded = 0;
    for &c in confidences {
        if c < 50.0 {
            codes.push(0);
        } else if c > 50.0 {
            codes.push(1);
        } else {
            excluded += 1;
        }
    }
    let mean = if codes.is_empty() {
        None
    } else {
        Some(codes.iter().map(|&c| c as f64).sum::<f64>() / codes.len() as f64 * 100.0)
    };
    DetectionCoding {
        codes,
        excluded,
        mean_likelihood_percent: mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilcoxon_identical_inputs_is_degenerate() {
        let x = [1.0, 2.0, 3.0];
        let r = wilcoxon_signed_rank(&x, &x).unwrap();
        assert_eq!(r.p_two_sided, 1.0);
        assert_eq!(r.method, PMethod::Degenerate);
        assert_eq!(r.n_used, 0);
    }

    #[test]
    fn wilcoxon_all_positive_n5() {
        let x = [2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [1.0, 1.5, 2.0, 2.5, 3.0];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.method, PMethod::Exact);
        assert!((r.p_two_sided - 2.0 / 32.0).abs() < 1e-12, "{}", r.p_two_sided);
        assert_eq!(r.w, 0.0);
    }

    #[test]
    fn wilcoxon_all_same_sign_n8() {
        let x: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5).collect();
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert!((r.p_two_sided - 2.0 / 256.0).abs() < 1e-12);
    }

    #[test]
    fn mann_whitney_separated_groups() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!((r.p_two_sided - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mann_whitney_tied_singletons() {
        let r = mann_whitney_u(&[1.0], &[1.0]).unwrap();
        assert_eq!(r.u, 0.5);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn kruskal_all_tied_is_zero() {
        let groups = vec![vec![2.0, 2.0], vec![2.0, 2.0, 2.0]];
        let r = kruskal_wallis(&groups).unwrap();
        assert_eq!(r.h, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kruskal_detects_separation() {
        let groups = vec![
            vec![1.0, 2.0, 3.0, 4.0],
            vec![10.0, 11.0, 12.0, 13.0],
            vec![20.0, 21.0, 22.0, 23.0],
        ];
        let r = kruskal_wallis(&groups).unwrap();
        assert!(r.h > 9.0, "H = {}", r.h);
        assert!(r.p < 0.01);
        assert_eq!(r.df, 2);
    }

    #[test]
    fn uncanniness_extremes() {
        assert_eq!(uncanniness_score(&[1, 1, 1, 1, 1]), 1.0);
        assert_eq!(uncanniness_score(&[7, 7, 7, 7, 7]), 7.0);
    }

    #[test]
    fn coding_example_and_boundary() {
        let r = code_detection(&[20.0, 80.0, 60.0]);
        assert_eq!(r.codes, vec![0, 1, 1]);
        assert_eq!(r.excluded, 0);
        let lik = r.mean_likelihood_percent.unwrap();
        assert!((lik - 200.0 / 3.0).abs() < 1e-9);

        let r = code_detection(&[50.0]);
        assert!(r.codes.is_empty());
        assert_eq!(r.excluded, 1);
        assert_eq!(r.mean_likelihood_percent, None);
    }

    #[test]
    fn coding_is_order_invariant() {
        let a = code_detection(&[20.0, 80.0, 60.0]);
        let b = code_detection(&[80.0, 60.0, 20.0]);
        assert_eq!(a.mean_likelihood_percent, b.mean_likelihood_percent);
        assert_eq!(a.excluded, b.excluded);
    }

    // brute-force oracles

    fn brute_wilcoxon_p(x: &[f64], y: &[f64]) -> f64 {
        let diffs: Vec<f64> = x
            .iter()
            .zip(y)
            .map(|(a, b)| a - b)
            .filter(|d| *d != 0.0)
            .collect();
        let n = diffs.len();
        if n == 0 {
            return 1.0;
        }
        let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        let ranks2 = doubled_ranks(&abs);
        let total2: u64 = ranks2.iter().sum();
        let obs2: u64 = diffs
            .iter()
            .zip(&ranks2)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, &r)| r)
            .sum();
        let w_min2 = obs2.min(total2 - obs2);
        let mut extreme = 0u64;
        for mask in 0u64..(1 << n) {
            let wp2: u64 = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| ranks2[i])
                .sum();
            if wp2 <= w_min2 || wp2 >= total2 - w_min2 {
                extreme += 1;
            }
        }
        (extreme as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn wilcoxon_exact_matches_brute_force() {
        let mut rng = crate::rng::Rng64::new(17);
        for trial in 0..200 {
            let n = 2 + (trial % 7);
            let x: Vec<f64> = (0..n).map(|_| (rng.below(12) as f64) / 2.0).collect();
            let y: Vec<f64> = (0..n).map(|_| (rng.below(12) as f64) / 2.0).collect();
            let got = wilcoxon_signed_rank(&x, &y).unwrap();
            let want = brute_wilcoxon_p(&x, &y);
            assert!(
                (got.p_two_sided - want).abs() < 1e-12,
                "n={n} x={x:?} y={y:?}: {} vs {want}",
                got.p_two_sided
            );
        }
    }

    fn brute_mann_whitney_p(a: &[f64], b: &[f64]) -> f64 {
        let (n1, n2) = (a.len(), b.len());
        let pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        let ranks2 = doubled_ranks(&pooled);
        let offset = (n1 * (n1 + 1)) as u64;
        let max_u2 = 2 * (n1 * n2) as u64;
        let r1_2: u64 = ranks2[..n1].iter().sum();
        let u1_2 = r1_2 - offset;
        let u_min2 = u1_2.min(max_u2 - u1_2);
        let n = n1 + n2;
        let mut lo = 0u64;
        let mut hi = 0u64;
        let mut total = 0u64;
        for mask in 0u64..(1 << n) {
            if mask.count_ones() as usize != n1 {
                continue;
            }
            total += 1;
            let sum2: u64 = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| ranks2[i])
                .sum();
            let u2 = sum2 - offset;
            if u2 <= u_min2 {
                lo += 1;
            }
            if u2 >= max_u2 - u_min2 {
                hi += 1;
            }
        }
        ((lo + hi) as f64 / total as f64).min(1.0)
    }

    #[test]
    fn mann_whitney_exact_matches_brute_force() {
        let mut rng = crate::rng::Rng64::new(23);
        for trial in 0..200 {
            let n1 = 1 + (trial % 4);
            let n2 = 1 + ((trial / 4) % 4);
            let a: Vec<f64> = (0..n1).map(|_| (rng.below(10) as f64) / 2.0).collect();
            let b: Vec<f64> = (0..n2).map(|_| (rng.below(10) as f64) / 2.0).collect();
            let got = mann_whitney_u(&a, &b).unwrap();
            let want = brute_mann_whitney_p(&a, &b);
            assert!(
                (got.p_two_sided - want).abs() < 1e-12,
                "a={a:?} b={b:?}: {} vs {want}",
                got.p_two_sided
            );
        }
    }

    #[test]
    fn kruskal_matches_independent_rank_recomputation() {
        let mut rng = crate::rng::Rng64::new(29);
        for _ in 0..50 {
            let groups: Vec<Vec<f64>> = (0..3)
                .map(|_| {
                    (0..3 + rng.below(4))
                        .map(|_| rng.below(12) as f64)
                        .collect()
                })
                .collect();
            let got = kruskal_wallis(&groups).unwrap();
            // independent recomputation with a different ranking scheme
            let mut pooled: Vec<(f64, usize, usize)> = Vec::new();
            for (gi, g) in groups.iter().enumerate() {
                for (vi, &v) in g.iter().enumerate() {
                    pooled.push((v, gi, vi));
                }
            }
            pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let n = pooled.len();
            let mut rank_of = vec![0.0; n];
            let mut i = 0;
            while i < n {
                let mut j = i;
                while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
                    j += 1;
                }
                let avg = (i + j + 2) as f64 / 2.0;
                for item in rank_of.iter_mut().take(j + 1).skip(i) {
                    *item = avg;
                }
                i = j + 1;
            }
            let mut r_sums = vec![0.0; groups.len()];
            for (pos, &(_, gi, _)) in pooled.iter().enumerate() {
                r_sums[gi] += rank_of[pos];
            }
            let nf = n as f64;
            let mut h = 0.0;
            for (gi, g) in groups.iter().enumerate() {
                h += r_sums[gi] * r_sums[gi] / g.len() as f64;
            }
            h = 12.0 / (nf * (nf + 1.0)) * h - 3.0 * (nf + 1.0);
            let mut sorted: Vec<f64> = pooled.iter().map(|p| p.0).collect();
            sorted.dedup();
            let tie: f64 = sorted
                .iter()
                .map(|v| {
                    let t = pooled.iter().filter(|p| p.0 == *v).count() as f64;
                    t * t * t - t
                })
                .sum();
            let denom = 1.0 - tie / (nf * nf * nf - nf);
            let want = if denom <= 0.0 { 0.0 } else { (h / denom).max(0.0) };
            assert!((got.h - want).abs() < 1e-10, "{} vs {want}", got.h);
        }
    }

    #[test]
    fn monotone_transform_leaves_statistics_unchanged() {
        let mut rng = crate::rng::Rng64::new(31);
        for _ in 0..40 {
            let x: Vec<f64> = (0..6).map(|_| rng.below(10) as f64).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.below(10) as f64).collect();
            let f = |v: f64| (v * 0.7 + 1.0).exp(); // strictly increasing
            let xt: Vec<f64> = x.iter().map(|&v| f(v)).collect();
            let yt: Vec<f64> = y.iter().map(|&v| f(v)).collect();
            let (r1, r2) = (
                mann_whitney_u(&x, &y).unwrap(),
                mann_whitney_u(&xt, &yt).unwrap(),
            );
            assert_eq!(r1.u, r2.u);
            assert_eq!(r1.p_two_sided, r2.p_two_sided);
            let (k1, k2) = (
                kruskal_wallis(&[x.clone(), y.clone()]).unwrap(),
                kruskal_wallis(&[xt.clone(), yt.clone()]).unwrap(),
            );
            assert_eq!(k1.h, k2.h);
        }
    }

    #[test]
    fn exact_and_approx_agree_at_crossover() {
        // same data evaluated through both paths near the size cutoffs
        let mut rng = crate::rng::Rng64::new(37);
        for _ in 0..10 {
            let x: Vec<f64> = (0..25).map(|_| rng.next_f64() * 10.0).collect();
            let y: Vec<f64> = (0..25).map(|_| rng.next_f64() * 10.0).collect();
            let exact = wilcoxon_signed_rank(&x, &y).unwrap();
            assert_eq!(exact.method, PMethod::Exact);
            // recompute through the approximation formula
            let diffs: Vec<f64> = x
                .iter()
                .zip(&y)
                .map(|(a, b)| a - b)
                .filter(|d| *d != 0.0)
                .collect();
            let n = diffs.len() as f64;
            let sigma = (n * (n + 1.0) * (2.0 * n + 1.0) / 24.0).sqrt();
            let mean = n * (n + 1.0) / 4.0;
            let z = (exact.w - mean + 0.5) / sigma;
            let approx = (2.0 * (1.0 - normal_sf(z))).min(1.0);
            assert!(
                (exact.p_two_sided - approx).abs() < 0.02,
                "exact {} vs approx {approx}",
                exact.p_two_sided
            );
        }
        for _ in 0..10 {
            let a: Vec<f64> = (0..8).map(|_| rng.next_f64() * 10.0).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.next_f64() * 10.0).collect();
            let exact = mann_whitney_u(&a, &b).unwrap();
            assert_eq!(exact.method, PMethod::Exact);
            let (n1, n2) = (8.0f64, 8.0f64);
            let sigma = ((n1 * n2 / 12.0) * (n1 + n2 + 1.0)).sqrt();
            let z = (exact.u - n1 * n2 / 2.0 + 0.5) / sigma;
            let approx = (2.0 * (1.0 - normal_sf(z))).min(1.0);
            assert!(
                (exact.p_two_sided - approx).abs() < 0.02,
                "exact {} vs approx {approx}",
                exact.p_two_sided
            );
        }
    }
}
