//! (epsilon, delta) accounting for subsampled frequency-k anonymization.
//!
//! `amplify` is the amplification-by-subsampling map; `base_delta_for_k`
//! turns the (k, beta, epsilon) knobs into the smallest delta for which the
//! release mechanism is (epsilon, delta)-differentially private, as the
//! worst-case binomial tail probability that one individual's record
//! survives frequency-k suppression after Bernoulli(beta) sampling.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Report delta as exactly 0 below this floor.
const DELTA_FLOOR_LN: f64 = -690.775527898; // ln(1e-300)
/// Hard cap on scan length when the Chernoff cutoff cannot engage
/// (epsilon = 0 makes the tail non-decaying).
const MAX_SCAN: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub beta: f64,
    pub k: u32,
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(beta: f64, k: u32, epsilon: f64, delta: f64) -> Result<Self> {
        let p = Self {
            beta,
            k,
            epsilon,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.delta >= 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must be in [0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeCell {
    pub params: PrivacyParams,
    pub satisfied: bool,
    pub accuracy: Option<f64>,
}

/// Log-ratio of output likelihoods under adjacent datasets.
pub fn privacy_loss(p_d: f64, p_dprime: f64) -> Result<f64> {
    if !(p_d > 0.0) || !(p_dprime > 0.0) {
        return Err(Error::Domain(format!(
            "privacy_loss needs positive probabilities, got ({p_d}, {p_dprime})"
        )));
    }
    Ok((p_d / p_dprime).ln())
}

/// Amplification by subsampling: a (beta1, eps1, delta1) guarantee becomes
/// (beta2, eps2, delta2) for any beta2 <= beta1 with
/// eps2 = ln(1 + (beta2/beta1)(e^eps1 - 1)) and delta2 = (beta2/beta1) delta1.
pub fn amplify(epsilon1: f64, delta1: f64, beta1: f64, beta2: f64) -> Result<(f64, f64)> {
    if !(beta2 > 0.0 && beta2 <= beta1 && beta1 <= 1.0) {
        return Err(Error::Domain(format!(
            "amplify requires 0 < beta2 <= beta1 <= 1, got beta1={beta1} beta2={beta2}"
        )));
    }
    if !(epsilon1 >= 0.0) || !(delta1 >= 0.0 && delta1 < 1.0) {
        return Err(Error::Domain("amplify requires epsilon1 >= 0 and delta1 in [0, 1)".into()));
    }
    let ratio = beta2 / beta1;
    if ratio == 1.0 {
        return Ok((epsilon1, delta1)); // identity case, bit-exact
    }
    Ok(((ratio * epsilon1.exp_m1()).ln_1p(), ratio * delta1))
}

fn ln_binomial_tail(n: u64, j0: u64, beta: f64) -> f64 {
    // ln sum_{j = j0}^{n} C(n, j) beta^j (1 - beta)^(n - j)
    if j0 > n {
        return f64::NEG_INFINITY;
    }
    let nf = n as f64;
    let jf = j0 as f64;
    let ln_first = ln_gamma(nf + 1.0) - ln_gamma(jf + 1.0) - ln_gamma(nf - jf + 1.0)
        + jf * beta.ln()
        + (nf - jf) * (1.0 - beta).ln();
    // Compensated accumulation of the term ratios relative to the first.
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut comp = 0.0f64;
    let mut j = j0;
    while j < n {
        term *= ((nf - j as f64) * beta) / ((j as f64 + 1.0) * (1.0 - beta));
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        if term < sum * 1e-18 && j as f64 > nf * beta {
            break;
        }
        j += 1;
    }
    ln_first + sum.ln()
}

fn kl_divergence(a: f64, b: f64) -> f64 {
    let mut d = 0.0;
    if a > 0.0 {
        d += a * (a / b).ln();
    }
    if a < 1.0 {
        d += (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln();
    }
    d
}

/// Smallest delta for which frequency-k suppression after Bernoulli(beta)
/// sampling is (epsilon, delta)-DP: the maximal binomial tail
/// max_{n in [ceil(k/gamma)-1, n_max]} P[Binom(n, beta) > ceil(gamma n)]
/// with gamma = (e^eps - 1 + beta) / e^eps.
pub fn base_delta_for_k(k: u32, beta: f64, epsilon: f64, n_max: u64) -> Result<f64> {
    if k < 1 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!("beta must be in (0, 1], got {beta}")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Config("epsilon must be >= 0".into()));
    }
    if n_max < u64::from(k) {
        return Err(Error::Config("n_max must be >= k".into()));
    }
    if beta >= 1.0 {
        // no sampling, no amplification guarantee
        return Ok(1.0);
    }
    let gamma = 1.0 - (1.0 - beta) * (-epsilon).exp();
    let n_start = ((f64::from(k) / gamma).ceil() as u64).max(2) - 1;
    if n_start > n_max {
        return Ok(0.0); // empty summation range
    }
    let decaying = gamma > beta;
    let kl = if decaying { kl_divergence(gamma, beta) } else { 0.0 };
    let mut max_ln = f64::NEG_INFINITY;
    let mut n = n_start;
    while n <= n_max {
        if decaying {
            let bound = -(n as f64) * kl;
            if bound < max_ln || bound < DELTA_FLOOR_LN {
                break;
            }
        } else if n - n_start > MAX_SCAN {
            break;
        }
        let threshold = (gamma * n as f64).ceil() as u64;
        let ln_tail = ln_binomial_tail(n, threshold + 1, beta);
        if ln_tail > max_ln {
            max_ln = ln_tail;
        }
        n += 1;
    }
    if max_ln < DELTA_FLOOR_LN {
        Ok(0.0)
    } else {
        Ok(max_ln.exp().min(1.0))
    }
}

/// True iff the mechanism at (beta, k) meets the requested (epsilon, delta).
pub fn satisfies(params: &PrivacyParams, n_max: u64) -> Result<bool> {
    params.validate()?;
    Ok(base_delta_for_k(params.k, params.beta, params.epsilon, n_max)? <= params.delta)
}

/// Cartesian guarantee grid; ordering is epsilon outer, then delta, then
/// beta, then k, a fixed table layout.
pub fn grid(
    betas: &[f64],
    ks: &[u32],
    epsilons: &[f64],
    deltas: &[f64],
    n_max: u64,
) -> Result<Vec<GuaranteeCell>> {
    if betas.is_empty() || ks.is_empty() || epsilons.is_empty() || deltas.is_empty() {
        return Err(Error::Config("grid requires non-empty parameter lists".into()));
    }
    let mut cells = Vec::with_capacity(betas.len() * ks.len() * epsilons.len() * deltas.len());
    for &epsilon in epsilons {
        for &delta in deltas {
            for &beta in betas {
                for &k in ks {
                    let params = PrivacyParams::new(beta, k, epsilon, delta)?;
                    let satisfied = satisfies(&params, n_max)?;
                    cells.push(GuaranteeCell {
                        params,
                        satisfied,
                        accuracy: None,
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// CSV rendering of a guarantee grid; accuracy column is blank until the
/// harness fills it.
pub fn grid_csv(cells: &[GuaranteeCell]) -> String {
    let mut out = String::from("epsilon,delta,beta,k,satisfied,accuracy\n");
    for c in cells {
        let acc = c
            .accuracy
            .map(|a| format!("{a:.2}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{:e},{},{},{},{}\n",
            c.params.epsilon, c.params.delta, c.params.beta, c.params.k, c.satisfied, acc
        ));
    }
    out
}

/// Canonical reporting-grid parameter lists.
pub const REPORT_EPSILONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const REPORT_DELTAS: [f64; 4] = [1e-6, 1e-9, 1e-12, 1e-15];
pub const REPORT_BETAS: [f64; 4] = [0.1, 0.3, 0.6, 0.9];
pub const REPORT_KS: [u32; 4] = [20, 100, 200, 500];

#[cfg(test)]
mod tests {
    use super::*;

    const NMAX: u64 = 1_000_000;

    #[test]
    fn privacy_loss_values() {
        assert_eq!(privacy_loss(0.5, 0.5).unwrap(), 0.0);
        assert!((privacy_loss(0.6, 0.3).unwrap() - 2.0f64.ln()).abs() < 1e-12);
        assert!(matches!(privacy_loss(0.0, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn privacy_loss_antisymmetry() {
        for (p, q) in [(0.2, 0.7), (0.9, 0.05), (0.33, 0.33)] {
            let a = privacy_loss(p, q).unwrap();
            let b = privacy_loss(q, p).unwrap();
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn amplify_identity_and_example() {
        let (e, d) = amplify(2.0f64.ln(), 1e-6, 1.0, 1.0).unwrap();
        assert_eq!(e, 2.0f64.ln());
        assert_eq!(d, 1e-6);
        let (e, d) = amplify(2.0f64.ln(), 1e-6, 1.0, 0.5).unwrap();
        assert!((e - 1.5f64.ln()).abs() < 1e-14);
        assert!((d - 5e-7).abs() < 1e-22);
    }

    #[test]
    fn amplify_vanishes_with_beta() {
        let (e, d) = amplify(1.0, 1e-6, 1.0, 1e-12).unwrap();
        assert!(e < 1e-11 && d < 1e-17);
    }

    #[test]
    fn amplify_rejects_beta2_above_beta1() {
        assert!(matches!(amplify(1.0, 0.0, 0.5, 0.6), Err(Error::Domain(_))));
    }

    #[test]
    fn amplify_strictly_increasing_in_beta2() {
        let mut prev = (0.0, 0.0);
        for i in 1..=10 {
            let b2 = i as f64 / 10.0;
            let cur = amplify(0.8, 1e-6, 1.0, b2).unwrap();
            if i > 1 {
                assert!(cur.0 > prev.0 && cur.1 > prev.1);
            }
            prev = cur;
        }
    }

    #[test]
    fn amplify_composition_consistency() {
        for (ba, bb) in [(0.5, 0.4), (0.9, 0.2), (0.3, 0.9)] {
            let (e1, d1) = amplify(1.3, 1e-6, 1.0, ba).unwrap();
            let chained = amplify(e1, d1, ba, ba * bb).unwrap();
            let direct = amplify(1.3, 1e-6, 1.0, ba * bb).unwrap();
            assert!((chained.0 - direct.0).abs() < 1e-12);
            assert!((chained.1 - direct.1).abs() < 1e-12);
        }
    }

    #[test]
    fn base_delta_empty_range_is_zero() {
        // k far above anything n_max * gamma can reach
        assert_eq!(base_delta_for_k(500, 0.1, 1.0, 600).unwrap(), 0.0);
    }

    #[test]
    fn base_delta_beta_one_is_vacuous() {
        assert_eq!(base_delta_for_k(20, 1.0, 1.0, NMAX).unwrap(), 1.0);
    }

    #[test]
    fn base_delta_monotone_on_grid() {
        for &eps in &REPORT_EPSILONS {
            for &beta in &REPORT_BETAS {
                let mut prev = f64::INFINITY;
                for &k in &REPORT_KS {
                    let d = base_delta_for_k(k, beta, eps, NMAX).unwrap();
                    assert!(d <= prev, "delta increased in k at eps={eps} beta={beta}");
                    prev = d;
                }
            }
        }
        for &eps in &REPORT_EPSILONS {
            for &k in &REPORT_KS {
                let mut prev = 0.0;
                for &beta in &REPORT_BETAS {
                    let d = base_delta_for_k(k, beta, eps, NMAX).unwrap();
                    assert!(d >= prev, "delta decreased in beta at eps={eps} k={k}");
                    prev = d;
                }
            }
        }
        for &beta in &REPORT_BETAS {
            for &k in &REPORT_KS {
                let mut prev = f64::INFINITY;
                for &eps in &REPORT_EPSILONS {
                    let d = base_delta_for_k(k, beta, eps, NMAX).unwrap();
                    assert!(d <= prev, "delta increased in eps at beta={beta} k={k}");
                    prev = d;
                }
            }
        }
    }

    #[test]
    fn satisfies_reference_spot_checks() {
        let yes = PrivacyParams::new(0.1, 500, 0.25, 1e-6).unwrap();
        assert!(satisfies(&yes, NMAX).unwrap());
        let no = PrivacyParams::new(0.9, 20, 0.25, 1e-6).unwrap();
        assert!(!satisfies(&no, NMAX).unwrap());
        // lowering k only passes at the top epsilon
        let low_k_high_eps = PrivacyParams::new(0.3, 20, 1.0, 1e-6).unwrap();
        assert!(satisfies(&low_k_high_eps, NMAX).unwrap());
        let low_k_low_eps = PrivacyParams::new(0.3, 20, 0.25, 1e-6).unwrap();
        assert!(!satisfies(&low_k_low_eps, NMAX).unwrap());
    }

    #[test]
    fn satisfies_near_vacuous_delta() {
        for &beta in &REPORT_BETAS {
            for &k in &REPORT_KS {
                let p = PrivacyParams::new(beta, k, 0.25, 1.0 - 1e-9).unwrap();
                assert!(satisfies(&p, NMAX).unwrap());
            }
        }
    }

    #[test]
    fn grid_size_and_monotone_shading() {
        let cells = grid(&REPORT_BETAS, &REPORT_KS, &REPORT_EPSILONS, &REPORT_DELTAS, NMAX).unwrap();
        assert_eq!(cells.len(), 256);
        // shaded set closed under beta down / k up
        for c in &cells {
            if !c.satisfied {
                continue;
            }
            for d in &cells {
                if d.params.epsilon == c.params.epsilon
                    && d.params.delta == c.params.delta
                    && d.params.beta <= c.params.beta
                    && d.params.k >= c.params.k
                {
                    assert!(d.satisfied, "monotone shading violated at {:?} vs {:?}", d.params, c.params);
                }
            }
        }
    }

    #[test]
    fn grid_rejects_empty_lists() {
        assert!(matches!(grid(&[], &[1], &[0.5], &[1e-6], NMAX), Err(Error::Config(_))));
    }

    #[test]
    fn grid_csv_layout() {
        let cells = grid(&[0.1], &[20], &[0.5], &[1e-6], 10_000).unwrap();
        let csv = grid_csv(&cells);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epsilon,delta,beta,k,satisfied,accuracy");
        let row = lines.next().unwrap();
        assert!(row.starts_with("0.5,1e-6,0.1,20,"));
        assert!(row.ends_with(','));
    }

    // Arbitrary-precision oracle: per-n tails as exact big-integer sums
    // over the dyadic rational beta taken from the f64 bits, maximized by
    // full scan over the same n range.
    mod oracle {
        use num_bigint::BigUint;

        fn f64_to_dyadic(x: f64) -> (BigUint, u32) {
            // x = mant / 2^shift with mant integral
            let bits = x.to_bits();
            let exp = ((bits >> 52) & 0x7ff) as i64 - 1075;
            let mant = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
            assert!(exp < 0 && x > 0.0 && x < 1.0);
            (BigUint::from(mant), (-exp) as u32)
        }

        fn big_to_f64_ratio(num: &BigUint, den: &BigUint) -> f64 {
            // num/den via 64-bit prefixes and bit lengths
            let shift = |v: &BigUint| -> (f64, i64) {
                let bits = v.bits() as i64;
                let keep = 53.min(bits);
                let top: BigUint = v >> (bits - keep) as u64;
                let digs = top.to_u64_digits();
                (digs.first().copied().unwrap_or(0) as f64, bits - keep)
            };
            let (na, ns) = shift(num);
            let (da, ds) = shift(den);
            (na / da) * 2f64.powi((ns - ds) as i32)
        }

        pub fn tail(n: u64, j0: u64, beta: f64) -> f64 {
            if j0 > n {
                return 0.0;
            }
            let (p, s) = f64_to_dyadic(beta);
            let q = BigUint::from(1u8) << s; // beta = p / q exactly
            let qp = &q - &p;
            // numerator of the tail over denominator q^n
            let mut coeff = BigUint::from(1u8); // C(n, j)
            for j in 0..j0 {
                coeff = coeff * BigUint::from(n - j) / BigUint::from(j + 1);
            }
            let mut pw_p = p.pow(j0 as u32);
            let mut pw_qp = qp.pow((n - j0) as u32);
            let mut num = BigUint::from(0u8);
            let mut j = j0;
            loop {
                num += &coeff * &pw_p * &pw_qp;
                if j == n {
                    break;
                }
                coeff = coeff * BigUint::from(n - j) / BigUint::from(j + 1);
                pw_p *= &p;
                pw_qp /= &qp;
                j += 1;
            }
            big_to_f64_ratio(&num, &q.pow(n as u32))
        }

        pub fn max_delta(k: u32, beta: f64, epsilon: f64, n_max: u64) -> f64 {
            let gamma = 1.0 - (1.0 - beta) * (-epsilon).exp();
            let n_start = ((f64::from(k) / gamma).ceil() as u64).max(2) - 1;
            let mut best = 0.0f64;
            for n in n_start..=n_max {
                let t = (gamma * n as f64).ceil() as u64;
                best = best.max(tail(n, t + 1, beta));
            }
            best
        }
    }

    #[test]
    fn base_delta_matches_arbitrary_precision_oracle() {
        // Combos chosen with fast tail decay so the full oracle scan over
        // [n_start, n_max] is exact and cheap.
        for (k, beta, eps, n_max) in [
            (20u32, 0.1, 0.5, 300u64),
            (20, 0.3, 1.0, 300),
            (100, 0.3, 0.5, 600),
        ] {
            let ours = base_delta_for_k(k, beta, eps, n_max).unwrap();
            let truth = oracle::max_delta(k, beta, eps, n_max);
            let rel = (ours - truth).abs() / truth;
            assert!(rel < 1e-10, "k={k} beta={beta} eps={eps}: {ours} vs {truth} (rel {rel})");
        }
    }

    #[test]
    fn base_delta_k20_vs_k500() {
        let d20 = base_delta_for_k(20, 0.1, 1.0, NMAX).unwrap();
        let d500 = base_delta_for_k(500, 0.1, 1.0, NMAX).unwrap();
        assert!(d500 <= d20);
    }
}
