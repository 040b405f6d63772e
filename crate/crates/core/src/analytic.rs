//! Closed-form models: detection error rates with and without ambient
//! failures, the security and overhead metrics built from them, strategy
//! endpoint probabilities, and parameter tuning helpers.
//!
//! Everything is computed in exact big-rational arithmetic internally
//! and converted to f64 at the boundary. The mixtures involved subtract
//! nearby hypergeometric tails; naive floating factorials lose digits
//! exactly where the crossover search needs them.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

#[derive(Debug, thiserror::Error)]
pub enum AnalyticError {
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("degenerate denominator: {0}")]
    Degenerate(String),
    #[error("value not representable as a rational: {0}")]
    Unrepresentable(f64),
}

/// Environmental and tunable quantities the closed forms take.
/// `d` is carried for completeness; the error-rate formulas describe the
/// full-drop regime and reject d != 1 rather than silently ignoring it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub t: f64,
    pub g: f64,
    pub f: f64,
    pub d: f64,
    pub n: u32,
    pub k: u32,
    pub th: u32,
}

/// Exact rationals cap N here; beyond it the triple mixture gets slow
/// and no supported configuration needs it.
pub const MAX_N: u32 = 64;

impl ModelParams {
    pub fn validate(&self) -> Result<(), AnalyticError> {
        for (v, name) in [(self.t, "t"), (self.g, "g"), (self.d, "d")] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(AnalyticError::BadParam(format!("{name} out of [0, 1]: {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.f) || !self.f.is_finite() {
            return Err(AnalyticError::BadParam(format!("f out of [0, 1): {}", self.f)));
        }
        if self.n < 2 || self.n > MAX_N {
            return Err(AnalyticError::BadParam(format!(
                "N must lie in 2..={MAX_N}, got {}",
                self.n
            )));
        }
        if self.k < 1 || self.k >= self.n {
            return Err(AnalyticError::BadParam(format!(
                "K must satisfy 1 <= K < N, got K={}, N={}",
                self.k, self.n
            )));
        }
        if self.th < 1 || self.th > self.k {
            return Err(AnalyticError::BadParam(format!(
                "Th must satisfy 1 <= Th <= K, got Th={}, K={}",
                self.th, self.k
            )));
        }
        Ok(())
    }

    fn validate_for_rates(&self) -> Result<(), AnalyticError> {
        self.validate()?;
        if self.d != 1.0 {
            return Err(AnalyticError::BadParam(format!(
                "closed-form error rates model the full-drop regime; pass d = 1, got d = {}",
                self.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRates {
    pub false_negative: f64,
    pub false_positive: f64,
}

fn rat(x: f64) -> Result<BigRational, AnalyticError> {
    BigRational::from_float(x).ok_or(AnalyticError::Unrepresentable(x))
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// C(n, k), zero outside the triangle. Signed arguments keep call sites
/// free of underflow dances like C(c-1, i) at c = 0.
fn binom(n: i64, k: i64) -> BigInt {
    if k < 0 || n < 0 || k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for i in 0..k {
        num *= n - i;
        den *= i + 1;
    }
    num / den
}

fn pow(base: &BigRational, exp: u32) -> BigRational {
    // 0^0 = 1 by the usual pmf convention
    let mut acc = BigRational::one();
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

/// Row of binomial pmf values: pmf[k] = C(n,k) p^k (1-p)^(n-k).
fn pmf_row(n: u32, p: &BigRational) -> Vec<BigRational> {
    let one_minus = BigRational::one() - p;
    (0..=n)
        .map(|k| {
            let c = BigRational::from_integer(binom(n as i64, k as i64));
            c * pow(p, k) * pow(&one_minus, n - k)
        })
        .collect()
}

/// tail[i][m] = sum over j in m..=i of C(i,j) q^j (1-q)^(i-j);
/// tail[i][m] = 0 for m > i.
fn pmf_tail_table(i_max: u32, q: &BigRational) -> Vec<Vec<BigRational>> {
    (0..=i_max)
        .map(|i| {
            let row = pmf_row(i, q);
            let mut tails = vec![BigRational::zero(); i as usize + 2];
            for m in (0..=i as usize).rev() {
                tails[m] = &tails[m + 1] + &row[m];
            }
            tails
        })
        .collect()
}

fn p_cxc_exact(t: &BigRational, g: &BigRational) -> Result<BigRational, AnalyticError> {
    let one = BigRational::one();
    let num = g * t;
    let honest = (&one - g) * pow(&(&one - t), 2);
    let denom = &num + &honest;
    if denom.is_zero() {
        return Err(AnalyticError::Degenerate(
            "gt + (1-g)(1-t)^2 = 0: no circuit can survive full dropping".into(),
        ));
    }
    Ok(num / denom)
}

/// Probability a phase-1 survivor has both endpoints compromised, under
/// full selective dropping with no ambient failures.
pub fn p_cxc_phase1(t: f64, g: f64) -> Result<f64, AnalyticError> {
    for (v, name) in [(t, "t"), (g, "g")] {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(AnalyticError::BadParam(format!("{name} out of [0, 1]: {v}")));
        }
    }
    Ok(to_f64(&p_cxc_exact(&rat(t)?, &rat(g)?)?))
}

/// Probability a used working circuit is not correlated, with no vetting
/// at all: 1 - p_cxc_phase1.
pub fn baseline_security(t: f64, g: f64) -> Result<f64, AnalyticError> {
    Ok(1.0 - p_cxc_phase1(t, g)?)
}

// Conditional acceptance probability of one compromised circuit among a
// pool with c compromised and n - c honest members, probing k' of the
// other n - 1 with threshold th', no failures: a probe succeeds exactly
// when it lands on another compromised member.
fn fn_cond_nofail(c: i64, n: i64, k: u32, th: u32) -> BigRational {
    let kp = (k as i64).min(n - 1).max(0);
    if kp == 0 {
        // nothing to probe against: trivially accepted
        return BigRational::one();
    }
    let thp = (th as i64).min(kp);
    let denom = binom(n - 1, kp);
    let mut acc = BigInt::zero();
    for i in thp..=kp {
        acc += binom(c - 1, i) * binom(n - c, kp - i);
    }
    BigRational::new(acc, denom)
}

// Conditional rejection probability of one honest circuit: rejected when
// fewer than th' probes land on honest members.
fn fp_cond_nofail(c: i64, n: i64, k: u32, th: u32) -> BigRational {
    let kp = (k as i64).min(n - 1).max(0);
    if kp == 0 {
        return BigRational::zero();
    }
    let thp = (th as i64).min(kp);
    let denom = binom(n - 1, kp);
    let mut acc = BigInt::zero();
    for i in 0..thp {
        acc += binom(n - c - 1, i) * binom(c, kp - i);
    }
    BigRational::new(acc, denom)
}

/// Acceptance probability of a compromised circuit given exact pool
/// counts, no ambient failures. `c` of the `n` pool members are
/// compromised, the evaluated circuit among them.
pub fn fn_given_counts(c: u32, n: u32, k: u32, th: u32) -> Result<f64, AnalyticError> {
    check_counts(c, n, k, th)?;
    if c == 0 {
        // no compromised member exists to evaluate
        return Ok(0.0);
    }
    Ok(to_f64(&fn_cond_nofail(c as i64, n as i64, k, th)))
}

/// Rejection probability of an honest circuit given exact pool counts,
/// no ambient failures.
pub fn fp_given_counts(c: u32, n: u32, k: u32, th: u32) -> Result<f64, AnalyticError> {
    check_counts(c, n, k, th)?;
    if c == n {
        return Ok(0.0);
    }
    Ok(to_f64(&fp_cond_nofail(c as i64, n as i64, k, th)))
}

fn check_counts(c: u32, n: u32, k: u32, th: u32) -> Result<(), AnalyticError> {
    if n < 2 || n > MAX_N {
        return Err(AnalyticError::BadParam(format!("N must lie in 2..={MAX_N}, got {n}")));
    }
    if c > n {
        return Err(AnalyticError::BadParam(format!("c must satisfy 0 <= c <= N, got c={c}, N={n}")));
    }
    if k < 1 {
        return Err(AnalyticError::BadParam("K must be >= 1".into()));
    }
    if th < 1 || th > k {
        return Err(AnalyticError::BadParam(format!(
            "Th must satisfy 1 <= Th <= K, got Th={th}, K={k}"
        )));
    }
    Ok(())
}

fn rate_nofail_exact(
    p: &BigRational,
    n: u32,
    k: u32,
    th: u32,
    is_fn: bool,
) -> BigRational {
    let weights = pmf_row(n, p);
    let mut total = BigRational::zero();
    for c in 0..=n {
        if weights[c as usize].is_zero() {
            continue;
        }
        let cond = if is_fn {
            if c == 0 {
                continue;
            }
            fn_cond_nofail(c as i64, n as i64, k, th)
        } else {
            if c == n {
                continue;
            }
            fp_cond_nofail(c as i64, n as i64, k, th)
        };
        total += &weights[c as usize] * cond;
    }
    total
}

// Acceptance probability of one alive compromised circuit when the alive
// pool holds cp compromised and hp honest members: i of the k' probes
// land on compromised candidates (hypergeometric), then at least th' of
// those i survive the per-probe failure gate (binomial tail).
fn fn_cond_failures(
    cp: i64,
    hp: i64,
    k: u32,
    th: u32,
    q_tail: &[Vec<BigRational>],
) -> BigRational {
    if cp == 0 {
        return BigRational::zero();
    }
    let total = cp + hp;
    let kp = (k as i64).min(total - 1).max(0);
    if kp == 0 {
        return BigRational::one();
    }
    let thp = (th as i64).min(kp);
    let denom = binom(total - 1, kp);
    let mut acc = BigRational::zero();
    for i in thp..=kp {
        let ways = binom(cp - 1, i) * binom(hp, kp - i);
        if ways.is_zero() {
            continue;
        }
        acc += BigRational::new(ways, denom.clone()) * &q_tail[i as usize][thp as usize];
    }
    acc
}

// Rejection probability of one alive honest circuit under the same
// regime; complement of reaching th' surviving honest-candidate probes.
// hp = 0 is defined as 0: with no honest member there is no honest
// evaluatee, and the f = 0 reduction to the no-failure model requires
// the zero convention here.
fn fp_cond_failures(
    cp: i64,
    hp: i64,
    k: u32,
    th: u32,
    q_tail: &[Vec<BigRational>],
) -> BigRational {
    if hp == 0 {
        return BigRational::zero();
    }
    let total = cp + hp;
    let kp = (k as i64).min(total - 1).max(0);
    if kp == 0 {
        return BigRational::zero();
    }
    let thp = (th as i64).min(kp);
    let denom = binom(total - 1, kp);
    let mut pass = BigRational::zero();
    for i in thp..=kp {
        let ways = binom(hp - 1, i) * binom(cp, kp - i);
        if ways.is_zero() {
            continue;
        }
        pass += BigRational::new(ways, denom.clone()) * &q_tail[i as usize][thp as usize];
    }
    BigRational::one() - pass
}

fn rate_failures_exact(
    p: &BigRational,
    f: &BigRational,
    n: u32,
    k: u32,
    th: u32,
    is_fn: bool,
) -> BigRational {
    let q = BigRational::one() - f;
    let weights = pmf_row(n, p);
    let thin: Vec<Vec<BigRational>> = (0..=n).map(|m| pmf_row(m, &q)).collect();
    let q_tail = pmf_tail_table(k, &q);

    let mut cond_cache: Vec<Vec<Option<BigRational>>> =
        vec![vec![None; n as usize + 1]; n as usize + 1];
    let mut cond = |cp: u32, hp: u32| -> BigRational {
        if let Some(v) = &cond_cache[cp as usize][hp as usize] {
            return v.clone();
        }
        let v = if is_fn {
            fn_cond_failures(cp as i64, hp as i64, k, th, &q_tail)
        } else {
            fp_cond_failures(cp as i64, hp as i64, k, th, &q_tail)
        };
        cond_cache[cp as usize][hp as usize] = Some(v.clone());
        v
    };

    let mut total = BigRational::zero();
    for c in 0..=n {
        let w_c = &weights[c as usize];
        if w_c.is_zero() {
            continue;
        }
        let h = n - c;
        for cp in 0..=c {
            let w_cp = &thin[c as usize][cp as usize];
            if w_cp.is_zero() {
                continue;
            }
            for hp in 0..=h {
                let w_hp = &thin[h as usize][hp as usize];
                if w_hp.is_zero() {
                    continue;
                }
                let v = cond(cp, hp);
                if v.is_zero() {
                    continue;
                }
                total += w_c * w_cp * w_hp * v;
            }
        }
    }
    total
}

/// False-negative rate of the detector, no ambient failures: binomial
/// mixture over pool compositions of the conditional acceptance
/// probability of a compromised circuit.
pub fn fn_rate(p: &ModelParams) -> Result<f64, AnalyticError> {
    p.validate_for_rates()?;
    let pc = p_cxc_exact(&rat(p.t)?, &rat(p.g)?)?;
    Ok(to_f64(&rate_nofail_exact(&pc, p.n, p.k, p.th, true)))
}

/// False-positive rate, no ambient failures.
pub fn fp_rate(p: &ModelParams) -> Result<f64, AnalyticError> {
    p.validate_for_rates()?;
    let pc = p_cxc_exact(&rat(p.t)?, &rat(p.g)?)?;
    Ok(to_f64(&rate_nofail_exact(&pc, p.n, p.k, p.th, false)))
}

/// False-negative rate with ambient failures: circuits die once with
/// probability f between the phases (population thinning) and every
/// probe independently passes a Bernoulli(1-f) gate.
pub fn fn_rate_failures(p: &ModelParams) -> Result<f64, AnalyticError> {
    p.validate_for_rates()?;
    let pc = p_cxc_exact(&rat(p.t)?, &rat(p.g)?)?;
    Ok(to_f64(&rate_failures_exact(&pc, &rat(p.f)?, p.n, p.k, p.th, true)))
}

/// False-positive rate with ambient failures.
pub fn fp_rate_failures(p: &ModelParams) -> Result<f64, AnalyticError> {
    p.validate_for_rates()?;
    let pc = p_cxc_exact(&rat(p.t)?, &rat(p.g)?)?;
    Ok(to_f64(&rate_failures_exact(&pc, &rat(p.f)?, p.n, p.k, p.th, false)))
}

/// FN and FP under the failure-aware model; coincides with the
/// no-failure model when f = 0.
pub fn error_rates(p: &ModelParams) -> Result<ErrorRates, AnalyticError> {
    Ok(ErrorRates {
        false_negative: fn_rate_failures(p)?,
        false_positive: fp_rate_failures(p)?,
    })
}

fn psi_eta_exact(p: &ModelParams) -> Result<(BigRational, BigRational), AnalyticError> {
    p.validate_for_rates()?;
    let t = rat(p.t)?;
    let g = rat(p.g)?;
    let pc = p_cxc_exact(&t, &g)?;
    let f = rat(p.f)?;
    let fnr = rate_failures_exact(&pc, &f, p.n, p.k, p.th, true);
    let fpr = rate_failures_exact(&pc, &f, p.n, p.k, p.th, false);

    let one = BigRational::one();
    let gt = &g * &t;
    let hh = (&one - &g) * pow(&(&one - &t), 2);
    let accepted_mass = &gt * &fnr + &hh * (&one - &fpr);
    if accepted_mass.is_zero() {
        return Err(AnalyticError::Degenerate(
            "no circuits are accepted in expectation (gt*FN + (1-g)(1-t)^2*(1-FP) = 0)".into(),
        ));
    }
    let psi = &one - (&gt * &fnr) / &accepted_mass;
    let survival = &gt + &hh;
    let k = BigRational::from_integer(BigInt::from(p.k));
    let eta = (&one + survival * k) / &accepted_mass;
    Ok((psi, eta))
}

/// Security metric: probability an accepted-and-used circuit is not
/// correlated. Uses the failure-aware error rates.
pub fn psi(p: &ModelParams) -> Result<f64, AnalyticError> {
    Ok(to_f64(&psi_eta_exact(p)?.0))
}

/// Overhead metric: expected circuit-build attempts plus probes per
/// usable circuit. The attempt term follows the source accounting, which
/// ignores ambient failures; see [`eta_with_failures`] for the variant
/// that includes them.
pub fn eta(p: &ModelParams) -> Result<f64, AnalyticError> {
    Ok(to_f64(&psi_eta_exact(p)?.1))
}

/// Diagnostic overhead variant, not part of the source model: phase-1
/// attempts are inflated by the failure gate (each success also needs a
/// Bernoulli(1-f) pass) and the probe term is thinned by interphase
/// deaths. Reduces to [`eta`] at f = 0.
pub fn eta_with_failures(p: &ModelParams) -> Result<f64, AnalyticError> {
    p.validate_for_rates()?;
    let t = rat(p.t)?;
    let g = rat(p.g)?;
    let pc = p_cxc_exact(&t, &g)?;
    let f = rat(p.f)?;
    let fnr = rate_failures_exact(&pc, &f, p.n, p.k, p.th, true);
    let fpr = rate_failures_exact(&pc, &f, p.n, p.k, p.th, false);

    let one = BigRational::one();
    let q = &one - &f;
    if q.is_zero() {
        return Err(AnalyticError::BadParam("f must be < 1".into()));
    }
    let gt = &g * &t;
    let hh = (&one - &g) * pow(&(&one - &t), 2);
    let accepted_mass = &gt * &fnr + &hh * (&one - &fpr);
    if accepted_mass.is_zero() {
        return Err(AnalyticError::Degenerate(
            "no circuits are accepted in expectation".into(),
        ));
    }
    let survival = &gt + &hh;
    let k = BigRational::from_integer(BigInt::from(p.k));
    let eta = (&one / &q + survival * &q * k) / &accepted_mass;
    Ok(to_f64(&eta))
}

fn check_fraction(v: f64, name: &str) -> Result<(), AnalyticError> {
    if !(0.0..=1.0).contains(&v) || !v.is_finite() {
        return Err(AnalyticError::BadParam(format!("{name} out of [0, 1]: {v}")));
    }
    Ok(())
}

/// Probability that a candidate exit drawn from the working-circuit pool
/// is compromised, under the simple strategy at drop rate d.
pub fn candidate_comp_exit_prob(t: f64, g: f64, d: f64) -> Result<f64, AnalyticError> {
    check_fraction(t, "t")?;
    check_fraction(g, "g")?;
    check_fraction(d, "d")?;
    let one = BigRational::one();
    let (t, g, d) = (rat(t)?, rat(g)?, rat(d)?);
    let keep = &one - &d;
    let gt = &g * &t;
    let hh = (&one - &g) * pow(&(&one - &t), 2);
    // honest-entry, compromised-exit circuits survive only the drop gate
    let mixed_comp_exit = (&one - &g) * (&one - &t) * &t + (&one - &g) * pow(&t, 2);
    let num = &gt + &mixed_comp_exit * &keep;
    let den = &hh + &gt + (&one - &hh - &gt) * &keep;
    if den.is_zero() {
        return Err(AnalyticError::Degenerate("no circuits survive".into()));
    }
    Ok(to_f64(&(num / den)))
}

/// Same probability under the shrewd strategy, which never drops
/// compromised-exit circuits.
pub fn shrewd_comp_exit_prob(t: f64, g: f64, d: f64) -> Result<f64, AnalyticError> {
    check_fraction(t, "t")?;
    check_fraction(g, "g")?;
    check_fraction(d, "d")?;
    let one = BigRational::one();
    let (t, g, d) = (rat(t)?, rat(g)?, rat(d)?);
    let keep = &one - &d;
    let hh = (&one - &g) * pow(&(&one - &t), 2);
    let den = &hh + &t + (&one - &hh - &t) * &keep;
    if den.is_zero() {
        return Err(AnalyticError::Degenerate("no circuits survive".into()));
    }
    Ok(to_f64(&(t / den)))
}

/// Fraction of surviving traffic the shrewd adversary forwards through
/// mixed-class circuits (compromised somewhere, but not correlatable).
pub fn noncomp_forward_fraction(t: f64, g: f64, d: f64) -> Result<f64, AnalyticError> {
    check_fraction(t, "t")?;
    check_fraction(g, "g")?;
    check_fraction(d, "d")?;
    let one = BigRational::one();
    let (t, g, d) = (rat(t)?, rat(g)?, rat(d)?);
    let keep = &one - &d;
    let hh = (&one - &g) * pow(&(&one - &t), 2);
    // honest-exit mixed classes face the drop gate; compromised-exit
    // mixed classes ((1-g)t) always pass under shrewd
    let dropped_mass = (&one - &t - &hh) * &keep;
    let num = &dropped_mass + (&one - &g) * &t;
    let den = &dropped_mass + &t + &hh;
    if den.is_zero() {
        return Err(AnalyticError::Degenerate("no circuits survive".into()));
    }
    Ok(to_f64(&(num / den)))
}

/// Simple-strategy analogue of [`noncomp_forward_fraction`], derived for
/// comparison: under simple dropping every mixed-class circuit faces the
/// drop gate.
pub fn noncomp_forward_fraction_simple(t: f64, g: f64, d: f64) -> Result<f64, AnalyticError> {
    check_fraction(t, "t")?;
    check_fraction(g, "g")?;
    check_fraction(d, "d")?;
    let one = BigRational::one();
    let (t, g, d) = (rat(t)?, rat(g)?, rat(d)?);
    let keep = &one - &d;
    let gt = &g * &t;
    let hh = (&one - &g) * pow(&(&one - &t), 2);
    let mixed = (&one - &gt - &hh) * &keep;
    let den = &gt + &hh + &mixed;
    if den.is_zero() {
        return Err(AnalyticError::Degenerate("no circuits survive".into()));
    }
    Ok(to_f64(&(mixed / den)))
}

/// Usage distribution over accepted circuits: mixed-class ("other")
/// circuits keep only their survival weight 1-d, since the adversary
/// keeps killing them during actual use.
pub fn usage_probabilities(
    cxc: f64,
    hhh: f64,
    others: f64,
    d: f64,
) -> Result<(f64, f64, f64), AnalyticError> {
    for (v, name) in [(cxc, "cxc"), (hhh, "hhh"), (others, "others")] {
        if v < 0.0 || !v.is_finite() {
            return Err(AnalyticError::BadParam(format!("{name} count negative: {v}")));
        }
    }
    check_fraction(d, "d")?;
    let weighted_others = (1.0 - d) * others;
    let denom = cxc + hhh + weighted_others;
    if denom <= 0.0 {
        return Err(AnalyticError::Degenerate("no usable circuits in counts".into()));
    }
    Ok((cxc / denom, hhh / denom, weighted_others / denom))
}

/// Security recomputed from observed usage probabilities.
pub fn redefined_psi(
    pr_cxc: f64,
    pr_hhh: f64,
    pr_others: f64,
    d: f64,
) -> Result<f64, AnalyticError> {
    for (v, name) in [(pr_cxc, "PrCXC"), (pr_hhh, "PrHHH"), (pr_others, "PrOthers")] {
        check_fraction(v, name)?;
    }
    check_fraction(d, "d")?;
    let denom = pr_cxc + pr_hhh + (1.0 - d) * pr_others;
    if denom <= 0.0 {
        return Err(AnalyticError::Degenerate("usage probabilities sum to zero".into()));
    }
    Ok(1.0 - pr_cxc / denom)
}

/// Phase-1 pool size needed to hand the user `circuits_per_hour` honest
/// circuits per hour in expectation, rounded up.
pub fn compute_n(t: f64, g: f64, circuits_per_hour: u32) -> Result<u32, AnalyticError> {
    check_fraction(t, "t")?;
    check_fraction(g, "g")?;
    if circuits_per_hour == 0 {
        return Err(AnalyticError::BadParam("circuits_per_hour must be positive".into()));
    }
    if g == 1.0 {
        return Err(AnalyticError::Degenerate(
            "g = 1: no honest-entry circuit exists, the required pool size grows without bound"
                .into(),
        ));
    }
    let one = BigRational::one();
    let (t, g) = (rat(t)?, rat(g)?);
    let gt = &g * &t;
    let hh = (&one - &g) * pow(&(&one - &t), 2);
    if hh.is_zero() {
        return Err(AnalyticError::Degenerate(
            "(1-g)(1-t)^2 = 0: honest circuits never survive".into(),
        ));
    }
    let ratio = (&gt + &hh) / &hh;
    let n = (ratio * BigRational::from_integer(BigInt::from(circuits_per_hour))).ceil();
    n.to_integer()
        .to_u32()
        .ok_or_else(|| AnalyticError::BadParam("computed N overflows u32".into()))
}

/// Numeric tuning ranges for K and Th given the pool size N.
/// The K interval is open on both ends; `th_lo_for` gives the inclusive
/// lower threshold bound for a chosen K (upper bound is K, exclusive).
/// `empty` flags parameter points where the multiplier interval
/// collapses (compromised mass at least the honest mass).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRanges {
    pub n_cxc: f64,
    pub m_lo: f64,
    pub m_hi: f64,
    pub k_lo: f64,
    pub k_hi: f64,
    pub empty: bool,
}

impl ParamRanges {
    pub fn th_lo_for(&self, k: f64) -> f64 {
        k - self.n_cxc
    }
}

pub fn param_ranges(t: f64, g: f64, n: u32) -> Result<ParamRanges, AnalyticError> {
    check_fraction(t, "t")?;
    check_fraction(g, "g")?;
    if g <= 0.0 || g >= 1.0 {
        return Err(AnalyticError::BadParam(format!(
            "tuning ranges need g strictly inside (0, 1), got {g}"
        )));
    }
    if t <= 0.0 {
        return Err(AnalyticError::BadParam(
            "tuning ranges need t > 0 (otherwise no circuit is ever compromised)".into(),
        ));
    }
    if n < 2 {
        return Err(AnalyticError::BadParam(format!("N must be >= 2, got {n}")));
    }
    let gt = g * t;
    let hh = (1.0 - g) * (1.0 - t) * (1.0 - t);
    let n_cxc = n as f64 * gt / (gt + hh);
    let m_lo = 2.0;
    let m_hi = 1.0 + hh / gt;
    // m_hi * n_cxc simplifies to exactly N, so the K < N constraint and
    // the multiplier upper bound coincide
    Ok(ParamRanges {
        n_cxc,
        m_lo,
        m_hi,
        k_lo: m_lo * n_cxc,
        k_hi: n as f64,
        empty: m_hi <= m_lo,
    })
}

/// Where the threshold lands relative to the scanned range 1..=K.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThBracket {
    /// FN >= FP at `lo`, FN < FP at `hi` = `lo` + 1
    Pair { lo: u32, hi: u32 },
    /// FN < FP already at Th = 1
    BelowRange,
    /// FN >= FP still at Th = K: no crossing inside the scanned range
    AboveRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossoverPoint {
    pub k: u32,
    /// bracket of the no-failure curves (fn_rate / fp_rate)
    pub no_failure: ThBracket,
    /// bracket of the failure-aware curves at the given f
    pub with_failures: ThBracket,
}

/// For each K up to `k_max`, locates where the FN curve (falling in Th)
/// crosses the FP curve (rising in Th), reported as the bracketing
/// integer pair. Both the no-failure and the failure-aware curve pairs
/// are scanned; they coincide at f = 0 and the failure-aware bracket
/// sits lower otherwise, because probe-level failures depress success
/// counts and push FN down at fixed Th. Comparisons are exact, so ties
/// mean true equality of the two rates.
pub fn crossover_tuning(
    t: f64,
    g: f64,
    f: f64,
    d: f64,
    n: u32,
    k_max: u32,
) -> Result<Vec<CrossoverPoint>, AnalyticError> {
    if k_max < 1 || k_max >= n {
        return Err(AnalyticError::BadParam(format!(
            "Kmax must satisfy 1 <= Kmax < N, got Kmax={k_max}, N={n}"
        )));
    }
    // validate the full parameter set once via the strictest member
    ModelParams { t, g, f, d, n, k: k_max, th: 1 }.validate()?;
    if d != 1.0 {
        return Err(AnalyticError::BadParam(format!(
            "crossover curves model the full-drop regime; pass d = 1, got d = {d}"
        )));
    }
    let pc = p_cxc_exact(&rat(t)?, &rat(g)?)?;
    let f = rat(f)?;

    let mut out = Vec::with_capacity(k_max as usize);
    for k in 1..=k_max {
        let scan = |with_f: bool| -> ThBracket {
            let rate = |th: u32, is_fn: bool| -> BigRational {
                if with_f {
                    rate_failures_exact(&pc, &f, n, k, th, is_fn)
                } else {
                    rate_nofail_exact(&pc, n, k, th, is_fn)
                }
            };
            // FN - FP falls monotonically in Th; find the sign change
            let mut last_ge: Option<u32> = None;
            for th in 1..=k {
                if rate(th, true) >= rate(th, false) {
                    last_ge = Some(th);
                } else {
                    break;
                }
            }
            match last_ge {
                None => ThBracket::BelowRange,
                Some(th) if th == k => ThBracket::AboveRange,
                Some(th) => ThBracket::Pair { lo: th, hi: th + 1 },
            }
        };
        out.push(CrossoverPoint {
            k,
            no_failure: scan(false),
            with_failures: scan(true),
        });
    }
    Ok(out)
}

/// Probe bandwidth cost per user: `guards_g` guard sets each vetting
/// `probes_per_usable` probes of `probe_size_kb` per usable circuit,
/// amortized over `interval_sec`, scaled to `circuits_per_hour` usable
/// circuits.
pub fn bandwidth_overhead(
    probes_per_usable: f64,
    probe_size_kb: f64,
    guards_g: f64,
    interval_sec: f64,
    circuits_per_hour: f64,
) -> f64 {
    (guards_g * probe_size_kb * probes_per_usable) / interval_sec * circuits_per_hour
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(t: f64, g: f64, f: f64) -> ModelParams {
        ModelParams { t, g, f, d: 1.0, n: 10, k: 3, th: 2 }
    }

    #[test]
    fn p_cxc_endpoints_and_reference_point() {
        assert_eq!(p_cxc_phase1(0.2, 0.0).unwrap(), 0.0);
        assert_eq!(p_cxc_phase1(0.2, 1.0).unwrap(), 1.0);
        let p = p_cxc_phase1(0.2, 1.0 / 3.0).unwrap();
        assert!((p - 0.13513513513513514).abs() < 1e-12, "{p}");
        assert!(p_cxc_phase1(0.0, 1.0).is_err());
    }

    #[test]
    fn given_counts_boundaries() {
        assert_eq!(fn_given_counts(1, 10, 3, 2).unwrap(), 0.0);
        assert_eq!(fn_given_counts(10, 10, 3, 2).unwrap(), 1.0);
        assert_eq!(fn_given_counts(0, 10, 3, 2).unwrap(), 0.0);
        assert_eq!(fp_given_counts(0, 10, 3, 2).unwrap(), 0.0);
        assert_eq!(fp_given_counts(9, 10, 3, 2).unwrap(), 1.0);
        assert_eq!(fp_given_counts(10, 10, 3, 2).unwrap(), 0.0);
    }

    #[test]
    fn given_counts_reference_value() {
        // c=5, N=10, K=3, Th=2: exact value 17/42
        let v = fn_given_counts(5, 10, 3, 2).unwrap();
        assert!((v - 17.0 / 42.0).abs() < 1e-15, "{v}");
    }

    #[test]
    fn rates_reference_values() {
        let p0 = params(0.2, 1.0 / 3.0, 0.0);
        let fnr = fn_rate(&p0).unwrap();
        let fpr = fp_rate(&p0).unwrap();
        assert!((fnr - 0.018264150279883585).abs() < 1e-12, "{fnr}");
        assert!((fpr - 0.06142986695771406).abs() < 1e-12, "{fpr}");

        let pf = params(0.2, 1.0 / 3.0, 0.23);
        let fnf = fn_rate_failures(&pf).unwrap();
        let fpf = fp_rate_failures(&pf).unwrap();
        assert!((fnf - 0.009059919663378711).abs() < 1e-12, "{fnf}");
        assert!((fpf - 0.28307350019596444).abs() < 1e-12, "{fpf}");
    }

    #[test]
    fn failure_model_reduces_exactly_at_f_zero() {
        for (n, k, th) in [(10, 3, 2), (12, 7, 4), (5, 2, 1), (8, 7, 7)] {
            let p = ModelParams { t: 0.2, g: 1.0 / 3.0, f: 0.0, d: 1.0, n, k, th };
            assert!(
                (fn_rate_failures(&p).unwrap() - fn_rate(&p).unwrap()).abs() < 1e-12,
                "fn mismatch at {n},{k},{th}"
            );
            assert!(
                (fp_rate_failures(&p).unwrap() - fp_rate(&p).unwrap()).abs() < 1e-12,
                "fp mismatch at {n},{k},{th}"
            );
        }
    }

    #[test]
    fn extreme_g_rates() {
        let p = params(0.2, 1.0, 0.0);
        assert_eq!(fn_rate(&p).unwrap(), 1.0);
        let p = params(0.2, 0.0, 0.0);
        assert_eq!(fp_rate(&p).unwrap(), 0.0);
    }

    #[test]
    fn psi_eta_reference_values() {
        let p = params(0.2, 1.0 / 3.0, 0.0);
        let psi_v = psi(&p).unwrap();
        let eta_v = eta(&p).unwrap();
        assert!((psi_v - 0.9969686626168542).abs() < 1e-12, "{psi_v}");
        assert!((eta_v - 6.174158059640052).abs() < 1e-12, "{eta_v}");
    }

    #[test]
    fn eta_at_g_zero_matches_direct_substitution() {
        let p = ModelParams { t: 0.2, g: 0.0, f: 0.0, d: 1.0, n: 10, k: 3, th: 2 };
        let v = eta(&p).unwrap();
        assert!((v - 4.5625).abs() < 1e-12, "{v}");
        assert_eq!(psi(&p).unwrap(), 1.0);
    }

    #[test]
    fn psi_of_hopeless_guard_set_is_zero() {
        let p = params(0.2, 1.0, 0.0);
        let v = psi(&p).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn eta_with_failures_reduces_at_f_zero() {
        let p = params(0.2, 1.0 / 3.0, 0.0);
        assert!((eta_with_failures(&p).unwrap() - eta(&p).unwrap()).abs() < 1e-12);
        let pf = params(0.2, 1.0 / 3.0, 0.23);
        assert!(eta_with_failures(&pf).unwrap() > 0.0);
    }

    #[test]
    fn baseline_security_reference_values() {
        let a = baseline_security(0.2, 1.0 / 3.0).unwrap();
        let b = baseline_security(0.2, 2.0 / 3.0).unwrap();
        assert!((a - 0.8648648648648649).abs() < 1e-12, "{a}");
        assert!((b - 0.6153846153846154).abs() < 1e-12, "{b}");
    }

    #[test]
    fn candidate_prob_endpoints() {
        let t = 0.2;
        let g = 1.0 / 3.0;
        let at0 = candidate_comp_exit_prob(t, g, 0.0).unwrap();
        assert!((at0 - t).abs() < 1e-15, "{at0}");
        let at1 = candidate_comp_exit_prob(t, g, 1.0).unwrap();
        let p = p_cxc_phase1(t, g).unwrap();
        assert!((at1 - p).abs() < 1e-15, "{at1} vs {p}");
        let mid = candidate_comp_exit_prob(t, g, 0.5).unwrap();
        assert!(mid > t.min(p) && mid < t.max(p));
    }

    #[test]
    fn shrewd_prob_endpoints_and_dominance() {
        let t = 0.2;
        let g = 1.0 / 3.0;
        let at0 = shrewd_comp_exit_prob(t, g, 0.0).unwrap();
        assert!((at0 - t).abs() < 1e-15);
        let at1 = shrewd_comp_exit_prob(t, g, 1.0).unwrap();
        let hh = (1.0 - g) * 0.8 * 0.8;
        assert!((at1 - t / (t + hh)).abs() < 1e-15);
        for d in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let s = shrewd_comp_exit_prob(t, g, d).unwrap();
            let c = candidate_comp_exit_prob(t, g, d).unwrap();
            assert!(s >= c - 1e-15, "d={d}: shrewd {s} < simple {c}");
        }
    }

    #[test]
    fn forward_fraction_endpoints() {
        let t = 0.2;
        let g = 1.0 / 3.0;
        let at1 = noncomp_forward_fraction(t, g, 1.0).unwrap();
        let hh = (1.0 - g) * 0.64;
        assert!((at1 - (1.0 - g) * t / (t + hh)).abs() < 1e-15, "{at1}");
        assert_eq!(noncomp_forward_fraction(0.2, 1.0, 1.0).unwrap(), 0.0);
        let at0 = noncomp_forward_fraction(t, g, 0.0).unwrap();
        assert!(at0 > at1);
        // shrewd forwards more mixed-class traffic than simple at every d
        for d in [0.25, 0.5, 0.75, 1.0] {
            let sh = noncomp_forward_fraction(t, g, d).unwrap();
            let si = noncomp_forward_fraction_simple(t, g, d).unwrap();
            assert!(sh >= si, "d={d}: {sh} < {si}");
        }
    }

    #[test]
    fn usage_probability_examples() {
        assert_eq!(usage_probabilities(0.0, 10.0, 0.0, 0.3).unwrap(), (0.0, 1.0, 0.0));
        let (c, h, o) = usage_probabilities(2.0, 6.0, 4.0, 0.5).unwrap();
        assert!((c - 0.2).abs() < 1e-15 && (h - 0.6).abs() < 1e-15 && (o - 0.2).abs() < 1e-15);
        let (_, _, o) = usage_probabilities(1.0, 1.0, 5.0, 1.0).unwrap();
        assert_eq!(o, 0.0);
        assert!(usage_probabilities(0.0, 0.0, 5.0, 1.0).is_err());
    }

    #[test]
    fn redefined_psi_examples() {
        assert_eq!(redefined_psi(0.0, 0.7, 0.3, 0.5).unwrap(), 1.0);
        assert_eq!(redefined_psi(1.0, 0.0, 0.0, 0.5).unwrap(), 0.0);
        assert!(redefined_psi(0.0, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn compute_n_reference_values() {
        assert_eq!(compute_n(0.2, 0.0, 6).unwrap(), 6);
        assert_eq!(compute_n(0.2, 1.0 / 3.0, 6).unwrap(), 7);
        assert_eq!(compute_n(0.2, 2.0 / 3.0, 6).unwrap(), 10);
        assert!(compute_n(0.2, 1.0, 6).is_err());
    }

    #[test]
    fn param_ranges_reference_point() {
        let r = param_ranges(0.2, 1.0 / 3.0, 10).unwrap();
        assert!((r.n_cxc - 1.3513513513513513).abs() < 1e-12);
        assert!((r.m_hi - 7.4).abs() < 1e-12);
        assert!((r.k_lo - 2.7027027027027026).abs() < 1e-12);
        assert!((r.k_hi - 10.0).abs() < 1e-12);
        assert!(!r.empty);
        assert!((r.th_lo_for(10.0) - 8.648648648648649).abs() < 1e-12);
    }

    #[test]
    fn param_ranges_empty_when_compromise_dominates() {
        // g t >= (1-g)(1-t)^2 collapses the multiplier interval
        let r = param_ranges(0.9, 0.9, 10).unwrap();
        assert!(r.empty);
    }

    #[test]
    fn crossover_brackets_at_reference_point() {
        let pts = crossover_tuning(0.2, 1.0 / 3.0, 0.23, 1.0, 11, 10).unwrap();
        assert_eq!(pts.len(), 10);
        let k10 = pts.iter().find(|p| p.k == 10).unwrap();
        assert_eq!(k10.no_failure, ThBracket::Pair { lo: 5, hi: 6 });
        // failure-aware curves cross lower; see the probe-thinning note
        assert!(matches!(k10.with_failures, ThBracket::Pair { lo, hi } if lo >= 1 && hi <= 6));
    }

    #[test]
    fn crossover_brackets_coincide_at_f_zero() {
        let pts = crossover_tuning(0.2, 1.0 / 3.0, 0.0, 1.0, 11, 10).unwrap();
        for p in pts {
            assert_eq!(p.no_failure, p.with_failures, "K={}", p.k);
        }
    }

    #[test]
    fn crossover_boundary_cases() {
        // tiny compromise: FN is already below FP at Th=1 for small K
        let pts = crossover_tuning(0.01, 1.0 / 3.0, 0.0, 1.0, 11, 10).unwrap();
        assert!(pts.iter().any(|p| p.no_failure == ThBracket::BelowRange));
        // K=1 must degrade to a boundary report, never panic
        let pts = crossover_tuning(0.2, 1.0 / 3.0, 0.23, 1.0, 11, 1).unwrap();
        assert!(matches!(
            pts[0].no_failure,
            ThBracket::BelowRange | ThBracket::AboveRange
        ));
    }

    #[test]
    fn bandwidth_overhead_examples() {
        assert_eq!(bandwidth_overhead(4.0, 300.0, 3.0, 3600.0, 1.0), 1.0);
        assert_eq!(bandwidth_overhead(4.0, 300.0, 3.0, 3600.0, 6.0), 6.0);
        assert_eq!(bandwidth_overhead(4.0, 0.0, 3.0, 3600.0, 6.0), 0.0);
    }

    #[test]
    fn rates_reject_partial_drop() {
        let p = ModelParams { d: 0.5, ..params(0.2, 1.0 / 3.0, 0.0) };
        assert!(fn_rate(&p).is_err());
        assert!(psi(&p).is_err());
    }
}
