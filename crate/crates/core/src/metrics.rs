//! Plug-in mutual information and the secret-key figures of merit.
//!
//! All logarithms are base 2. The secret-key lower bound is reported signed;
//! callers that plot it clamp at zero themselves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{ProtocolOutcome, SchemeKind, SchemeSpec, Symbols};

/// Empirical joint distribution of two symbol streams over an `M`-ary alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointPmf {
    size: usize,
    counts: Vec<u64>,
    total: u64,
}

impl JointPmf {
    pub fn zeros(size: usize) -> Self {
        Self { size, counts: vec![0; size * size], total: 0 }
    }

    pub fn from_counts(size: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != size * size {
            return Err(Error::Parse(format!("expected {} counts, got {}", size * size, counts.len())));
        }
        let total = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self { size, counts, total })
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize) {
        self.counts[i * self.size + j] += 1;
        self.total += 1;
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.size + j]
    }

    pub fn probability(&self, i: usize, j: usize) -> f64 {
        self.count(i, j) as f64 / self.total as f64
    }

    /// Adds another histogram's counts. Integer addition, so the merge is
    /// associative and order-independent.
    pub fn merge(&mut self, other: &JointPmf) {
        assert_eq!(self.size, other.size, "merging histograms of different alphabets");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    fn marginals(&self) -> (Vec<u64>, Vec<u64>) {
        let mut rows = vec![0u64; self.size];
        let mut cols = vec![0u64; self.size];
        for i in 0..self.size {
            for j in 0..self.size {
                let c = self.count(i, j);
                rows[i] += c;
                cols[j] += c;
            }
        }
        (rows, cols)
    }

    /// Entropies of the row and column marginals, in bits.
    pub fn marginal_entropies(&self) -> (f64, f64) {
        let (rows, cols) = self.marginals();
        let n = self.total as f64;
        let h = |v: &[u64]| -> f64 {
            v.iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.log2()
                })
                .sum()
        };
        (h(&rows), h(&cols))
    }
}

pub fn joint_pmf<I>(pairs: I, size: usize) -> Result<JointPmf>
where
    I: IntoIterator<Item = (usize, usize)>,
{
    let mut pmf = JointPmf::zeros(size);
    for (i, j) in pairs {
        for s in [i, j] {
            if s >= size {
                return Err(Error::SymbolOutOfRange { symbol: s, size });
            }
        }
        pmf.add(i, j);
    }
    if pmf.total == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(pmf)
}

/// Plug-in estimate `sum p_ij log2(p_ij / (p_i p_j))`, clamped at zero.
pub fn mutual_information(p: &JointPmf) -> f64 {
    if p.total == 0 {
        return 0.0;
    }
    let (rows, cols) = p.marginals();
    let n = p.total as f64;
    let mut acc = 0.0;
    for i in 0..p.size {
        if rows[i] == 0 {
            continue;
        }
        for j in 0..p.size {
            let c = p.count(i, j);
            if c == 0 {
                continue;
            }
            let c = c as f64;
            acc += c * (c * n / (rows[i] as f64 * cols[j] as f64)).log2();
        }
    }
    (acc / n).max(0.0)
}

/// Symbol-pair histograms accumulated while running a scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    pub ab: JointPmf,
    pub ae: JointPmf,
    pub be: JointPmf,
    /// Alice/Eve and Bob/Eve when Eve ignores the public correction.
    pub blind: Option<(JointPmf, JointPmf)>,
    pub total: u64,
}

impl Tally {
    pub fn new(size: usize, blind: bool) -> Self {
        Self {
            ab: JointPmf::zeros(size),
            ae: JointPmf::zeros(size),
            be: JointPmf::zeros(size),
            blind: blind.then(|| (JointPmf::zeros(size), JointPmf::zeros(size))),
            total: 0,
        }
    }

    #[inline]
    pub fn record(&mut self, s: &Symbols) {
        let (a, b, e) = (s.a as usize, s.b as usize, s.e as usize);
        self.ab.add(a, b);
        self.ae.add(a, e);
        self.be.add(b, e);
        if let (Some((ae, be)), Some(eb)) = (self.blind.as_mut(), s.e_blind) {
            ae.add(a, eb as usize);
            be.add(b, eb as usize);
        }
        self.total += 1;
    }

    #[inline]
    pub fn record_discard(&mut self) {
        self.total += 1;
    }

    pub fn retained(&self) -> u64 {
        self.ab.total
    }

    pub fn merge(&mut self, other: &Tally) {
        self.ab.merge(&other.ab);
        self.ae.merge(&other.ae);
        self.be.merge(&other.be);
        if let (Some((a1, b1)), Some((a2, b2))) = (self.blind.as_mut(), other.blind.as_ref()) {
            a1.merge(a2);
            b1.merge(b2);
        }
        self.total += other.total;
    }

    pub fn from_outcomes(outcomes: &[ProtocolOutcome], size: usize) -> Result<Self> {
        let blind = outcomes.iter().any(|o| o.symbols.is_some_and(|s| s.e_blind.is_some()));
        let mut t = Tally::new(size, blind);
        for o in outcomes {
            match (o.retained, o.symbols) {
                (true, Some(s)) => {
                    for sym in [s.a, s.b, s.e].into_iter().chain(s.e_blind) {
                        if sym as usize >= size {
                            return Err(Error::SymbolOutOfRange { symbol: sym as usize, size });
                        }
                    }
                    t.record(&s);
                }
                _ => t.record_discard(),
            }
        }
        Ok(t)
    }
}

/// Which of Eve's decoding strategies the reported leakage comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveMode {
    /// Raw quantization of `z` (the only mode for NEC and GB).
    Raw,
    /// Eve applies the published correction like Bob.
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub i_ab: f64,
    pub i_ae: f64,
    pub i_be: f64,
    pub c_sk_low: f64,
    pub c_ab: f64,
    pub beta: f64,
    pub gamma: Option<f64>,
    pub retention: f64,
    /// `c_sk_low * retention`: per-observation rate for discarding schemes.
    pub c_sk_rate: f64,
    pub eve_mode: EveMode,
    pub n: u64,
}

/// Builds the report from accumulated histograms. For ADQC the leakage is
/// taken from whichever Eve strategy leaves the legitimate parties worse off.
pub fn report_from_tally(tally: &Tally, scheme: &SchemeSpec) -> Result<MetricsReport> {
    if tally.retained() == 0 {
        return Err(Error::NoRetainedSamples);
    }
    let i_ab = mutual_information(&tally.ab);
    let corrected = (mutual_information(&tally.ae), mutual_information(&tally.be));
    let mut eve = (corrected, if scheme.kind == SchemeKind::Adqc { EveMode::Corrected } else { EveMode::Raw });
    if let Some((ae, be)) = &tally.blind {
        let raw = (mutual_information(ae), mutual_information(be));
        if raw.0.min(raw.1) > corrected.0.min(corrected.1) {
            eve = (raw, EveMode::Raw);
        }
    }
    let ((i_ae, i_be), eve_mode) = eve;
    let c_sk_low = i_ab - i_ae.min(i_be);
    let retention = tally.retained() as f64 / tally.total as f64;
    Ok(MetricsReport {
        i_ab,
        i_ae,
        i_be,
        c_sk_low,
        c_ab: i_ab / scheme.bits as f64,
        beta: scheme.beta(),
        gamma: None,
        retention,
        c_sk_rate: c_sk_low * retention,
        eve_mode,
        n: tally.total,
    })
}

pub fn csk_lower(outcomes: &[ProtocolOutcome], scheme: &SchemeSpec) -> Result<MetricsReport> {
    let tally = Tally::from_outcomes(outcomes, 1usize << scheme.bits)?;
    report_from_tally(&tally, scheme)
}

/// Side-channel cost of ADQC relative to NEC:
/// `(1 + beta - C_AB^ADQC) / (1 - C_AB^NEC)`.
pub fn gamma_cost(c_ab_adqc: f64, c_ab_nec: f64, beta: f64) -> Result<f64> {
    if c_ab_nec >= 1.0 - 1e-9 {
        return Err(Error::DegenerateDenominator(c_ab_nec));
    }
    Ok((1.0 + beta - c_ab_adqc) / (1.0 - c_ab_nec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pmf(size: usize, counts: &[u64]) -> JointPmf {
        JointPmf::from_counts(size, counts.to_vec()).unwrap()
    }

    #[test]
    fn diagonal_pairs() {
        let p = joint_pmf([(0, 0), (1, 1)], 2).unwrap();
        assert_eq!(p.count(0, 0), 1);
        assert_eq!(p.count(1, 1), 1);
        assert_eq!(p.count(0, 1), 0);
        assert_eq!(p.total(), 2);
    }

    #[test]
    fn empty_and_out_of_range() {
        assert!(matches!(joint_pmf(std::iter::empty(), 2), Err(Error::EmptyInput)));
        assert!(matches!(
            joint_pmf([(0, 2)], 2),
            Err(Error::SymbolOutOfRange { symbol: 2, size: 2 })
        ));
    }

    #[test]
    fn uniform_diagonal_is_two_bits() {
        let p = pmf(4, &[1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1]);
        assert!((mutual_information(&p) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn product_is_zero() {
        // outer product of (1,2,3) and (2,1)
        let p = pmf(3, &[2, 1, 0, 4, 2, 0, 6, 3, 0]);
        assert!(mutual_information(&p).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_reference() {
        // 0.8 + 0.2 log2(0.2/0.25)*... evaluated by hand: 1 - H(0.2) = 0.278072
        let p = pmf(2, &[4, 1, 1, 4]);
        let expected = 1.0 - (-(0.2f64) * 0.2f64.log2() - 0.8 * 0.8f64.log2());
        assert!((mutual_information(&p) - expected).abs() < 1e-12);
        assert!((mutual_information(&p) - 0.278).abs() < 5e-4);
    }

    #[test]
    fn signed_bound_when_eve_clones_alice() {
        let scheme = SchemeSpec::nec(1);
        let outcomes: Vec<ProtocolOutcome> = [(0u16, 0u16), (1, 0), (1, 1), (0, 1), (0, 0), (1, 1)]
            .iter()
            .map(|&(a, b)| ProtocolOutcome {
                symbols: Some(Symbols { a, b, e: a, e_blind: None }),
                xi: None,
                retained: true,
            })
            .collect();
        let r = csk_lower(&outcomes, &scheme).unwrap();
        assert!((r.i_ae - 1.0).abs() < 1e-12);
        assert!(r.c_sk_low <= 1e-12);
        assert_eq!(r.c_sk_low, r.i_ab - r.i_ae.min(r.i_be));
    }

    #[test]
    fn negative_bound_is_reported() {
        // Eve sees both parties' symbols: e = 2a + b
        let outcomes: Vec<ProtocolOutcome> = [(0u16, 0u16), (1, 0), (1, 1), (0, 1), (0, 0), (1, 1)]
            .iter()
            .map(|&(a, b)| ProtocolOutcome {
                symbols: Some(Symbols { a, b, e: 2 * a + b, e_blind: None }),
                xi: None,
                retained: true,
            })
            .collect();
        let r = csk_lower(&outcomes, &SchemeSpec::nec(2)).unwrap();
        assert!(r.c_sk_low < -0.5);
    }

    #[test]
    fn no_retained_samples() {
        let outcomes = vec![ProtocolOutcome { symbols: None, xi: None, retained: false }; 3];
        assert!(matches!(csk_lower(&outcomes, &SchemeSpec::gb(2, 0.5)), Err(Error::NoRetainedSamples)));
    }

    #[test]
    fn gamma_examples() {
        assert!((gamma_cost(0.6, 0.6, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(gamma_cost(0.9, 1.0, 0.5), Err(Error::DegenerateDenominator(_))));
    }

    #[test]
    fn gamma_matches_bit_count_form() {
        // (n - k_adqc + beta n) / (n - k_nec) with k = n C_AB, for several n
        let (c_adqc, c_nec, beta) = (0.83, 0.61, 2.0 / 3.0);
        let g = gamma_cost(c_adqc, c_nec, beta).unwrap();
        for n in [3.0, 30.0, 3e6] {
            let bits_form = (n - n * c_adqc + beta * n) / (n - n * c_nec);
            assert!((bits_form - g).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_is_order_independent() {
        let a = pmf(2, &[1, 2, 3, 4]);
        let b = pmf(2, &[5, 0, 1, 0]);
        let c = pmf(2, &[0, 7, 0, 1]);
        let mut x = a.clone();
        x.merge(&b);
        x.merge(&c);
        let mut y = c.clone();
        y.merge(&a);
        y.merge(&b);
        assert_eq!(x, y);
    }
}
