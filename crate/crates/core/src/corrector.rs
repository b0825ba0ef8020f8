//! The corrector: an auxiliary bit built from fresh fair randomness whose
//! XOR with the almost-extractor's output is exactly fair and exactly
//! independent of the merged process. The corrector fires (is 1) exactly
//! when U * P(f = observed value | merged) > 1/2 for a uniform U, an event
//! of probability |P(f=0|merged) - 1/2| — the conditional total variation
//! distance — hence rarer than the extractor tolerance.

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::bits::{Bit, BitStream};
use crate::error::{Error, Result};
use crate::extractor::{
    choose_params, eps_extract_from, CondLawF, ExtractorParams, MergedPair, MergedSource,
    StreamMerged,
};
use crate::rational::{half, one, rat_i64, zero, Interval, Rational};
use crate::streams::{pair_index, DEFAULT_REFINE_BUDGET};

/// Outcome of one corrector decision, with the comparison certificate.
///
/// When `fired`, the product of the two stored enclosures lies strictly
/// above 1/2; when not, strictly below. `re_verify` rechecks this from the
/// stored endpoints alone.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionRecord {
    pub fired: bool,
    pub u_bits_consumed: u32,
    pub prob_used: Interval,
    pub u_used: Interval,
}

impl CorrectionRecord {
    pub fn re_verify(&self) -> bool {
        let product = self.u_used.product_nonneg(&self.prob_used);
        if self.fired {
            product.lo > half()
        } else {
            product.hi < half()
        }
    }

    pub const CSV_HEADER: &'static str = "fired,u_bits_consumed,prob_lo,prob_hi";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.fired as u8,
            self.u_bits_consumed,
            crate::rational::to_fraction_string(&self.prob_used.lo),
            crate::rational::to_fraction_string(&self.prob_used.hi),
        )
    }
}

/// A refinable enclosure of the conditional probability driving the
/// corrector. Refinement may be exhausted (fixed enclosures used in tests
/// and synthetic setups return false).
pub trait RefinableProb {
    fn interval(&self) -> Interval;
    fn refine(&mut self) -> Result<bool>;
}

/// A fixed, unrefinable enclosure.
pub struct FixedProb(pub Interval);

impl RefinableProb for FixedProb {
    fn interval(&self) -> Interval {
        self.0.clone()
    }

    fn refine(&mut self) -> Result<bool> {
        Ok(false)
    }
}

/// P(f = observed | merged) as a refinable enclosure: the f-law itself for
/// an observed 1, its exact complement for an observed 0.
pub struct ObservedLaw<'m, M: MergedSource> {
    law: CondLawF<'m, M>,
    observed: Bit,
}

impl<'m, M: MergedSource> ObservedLaw<'m, M> {
    pub fn new(params: &ExtractorParams, source: &'m mut M, observed: Bit) -> Self {
        ObservedLaw {
            law: CondLawF::new(params, source),
            observed,
        }
    }
}

impl<M: MergedSource> RefinableProb for ObservedLaw<'_, M> {
    fn interval(&self) -> Interval {
        let iv = self.law.interval();
        if self.observed.0 {
            iv
        } else {
            iv.complement()
        }
    }

    fn refine(&mut self) -> Result<bool> {
        self.law.refine()?;
        Ok(true)
    }
}

struct UniformState {
    numer: BigInt,
    bits: u32,
}

impl UniformState {
    fn new() -> UniformState {
        UniformState {
            numer: BigInt::zero(),
            bits: 0,
        }
    }

    fn observe(&mut self, b: Bit) {
        self.numer = (&self.numer << 1) + BigInt::from(b.as_u8());
        self.bits += 1;
    }

    fn interval(&self) -> Interval {
        let den = BigInt::one() << self.bits;
        Interval::new(
            Rational::new(self.numer.clone(), den.clone()),
            Rational::new(&self.numer + 1, den),
        )
    }
}

/// Decides U * p_c > 1/2 by refining whichever enclosure currently
/// contributes more width to the product, consuming fresh fair bits for U
/// and merged observations for p_c. Terminates almost surely; the budget
/// converts the null tie event into an error.
pub fn corrector_decision(
    next_u_bit: &mut impl FnMut() -> Result<Bit>,
    prob: &mut impl RefinableProb,
    budget: u64,
) -> Result<CorrectionRecord> {
    let mut u = UniformState::new();
    let threshold = half();
    for _ in 0..=budget {
        let ui = u.interval();
        let pi = prob.interval();
        let product = ui.product_nonneg(&pi);
        if product.hi < threshold {
            return Ok(CorrectionRecord {
                fired: false,
                u_bits_consumed: u.bits,
                prob_used: pi,
                u_used: ui,
            });
        }
        if product.lo > threshold {
            return Ok(CorrectionRecord {
                fired: true,
                u_bits_consumed: u.bits,
                prob_used: pi,
                u_used: ui,
            });
        }
        let u_contrib = ui.width() * &pi.hi;
        let p_contrib = pi.width() * &ui.hi;
        if u_contrib >= p_contrib {
            u.observe(next_u_bit()?);
        } else if !prob.refine()? {
            // enclosure exhausted; only U can still move
            u.observe(next_u_bit()?);
        }
    }
    Err(Error::BudgetExceeded {
        budget,
        context: "corrector_decision",
    })
}

/// The corrector bit for observed extractor output `f_obs` on live streams.
fn correct_bit_inner(
    x: &mut BitStream,
    y: &mut BitStream,
    z: &mut BitStream,
    params: &ExtractorParams,
    f_obs: Bit,
) -> Result<CorrectionRecord> {
    let mut merged = StreamMerged { x, y, k: params.k };
    let mut prob = ObservedLaw::new(params, &mut merged, f_obs);
    let mut next_u = || z.next_bit();
    corrector_decision(&mut next_u, &mut prob, DEFAULT_REFINE_BUDGET)
}

/// Computes the extractor bit on x and the corrector bit from (x, y, z).
/// Returns the corrector bit and its record.
pub fn correct_bit(
    x: &mut BitStream,
    y: &mut BitStream,
    z: &mut BitStream,
    params: &ExtractorParams,
) -> Result<(Bit, CorrectionRecord)> {
    let f = eps_extract_from(&mut |i| x.bit_at(i as u128), params)?;
    let record = correct_bit_inner(x, y, z, params, f.bit)?;
    Ok((Bit(record.fired), record))
}

/// The corrected extractor: extractor bit XOR corrector bit. Exactly fair
/// and exactly independent of the merged process max(x, y).
pub fn corrected_extract(
    x: &mut BitStream,
    y: &mut BitStream,
    z: &mut BitStream,
    params: &ExtractorParams,
) -> Result<(Bit, CorrectionRecord)> {
    let f = eps_extract_from(&mut |i| x.bit_at(i as u128), params)?;
    let record = correct_bit_inner(x, y, z, params, f.bit)?;
    Ok((f.bit.xor(Bit(record.fired)), record))
}

/// Vector corrected extractor: coordinate i applies the corrected extractor
/// with tolerance base_epsilon * 2^-i to row i of the grid views of x, y,
/// and z, so distinct coordinates consume disjoint positions of all three
/// streams. The probability that any coordinate fires is below base_epsilon.
pub struct VectorCorrector {
    x: BitStream,
    y: BitStream,
    z: BitStream,
    base_epsilon: Rational,
    p: Rational,
    p_prime: Rational,
}

struct GridRowMerged<'a> {
    x: &'a mut BitStream,
    y: &'a mut BitStream,
    row: u128,
    k: u32,
}

impl MergedSource for GridRowMerged<'_> {
    fn window_bit(&mut self, u: u32) -> Result<Bit> {
        let pos = pair_index(self.row, u as u128)?;
        Ok(Bit(self.x.bit_at(pos)?.0 | self.y.bit_at(pos)?.0))
    }

    fn scan_pair(&mut self, m: u64) -> Result<MergedPair> {
        let i = self.k as u128 + 2 * m as u128;
        let p1 = pair_index(self.row, i)?;
        let p2 = pair_index(self.row, i + 1)?;
        let a = Bit(self.x.bit_at(p1)?.0 | self.y.bit_at(p1)?.0);
        let b = Bit(self.x.bit_at(p2)?.0 | self.y.bit_at(p2)?.0);
        Ok(MergedPair(a, b))
    }
}

impl VectorCorrector {
    pub fn new(
        x: BitStream,
        y: BitStream,
        z: BitStream,
        base_epsilon: Rational,
        p: Rational,
        p_prime: Rational,
    ) -> Result<VectorCorrector> {
        crate::extractor::density_q(&p, &p_prime)?;
        if !(base_epsilon > zero() && base_epsilon < one()) {
            return Err(Error::DegenerateParams("epsilon outside (0,1)".into()));
        }
        Ok(VectorCorrector {
            x,
            y,
            z,
            base_epsilon,
            p,
            p_prime,
        })
    }

    pub fn coordinate_params(&self, i: u32) -> Result<std::sync::Arc<ExtractorParams>> {
        let eps = &self.base_epsilon * crate::rational::pow2_neg(i);
        choose_params(&self.p, &self.p_prime, &eps)
    }

    /// Corrected bit for coordinate i with its record.
    pub fn bit(&mut self, i: u32) -> Result<(Bit, CorrectionRecord)> {
        let params = self.coordinate_params(i)?;
        let row = i as u128;
        let x = &mut self.x;
        let f = {
            let mut read = |u: u64| x.bit_at(pair_index(row, u as u128)?);
            eps_extract_from(&mut read, &params)?
        };
        let mut merged = GridRowMerged {
            x,
            y: &mut self.y,
            row,
            k: params.k,
        };
        let mut prob = ObservedLaw::new(&params, &mut merged, f.bit);
        let z = &mut self.z;
        let mut t: u128 = 0;
        let mut next_u = || {
            t += 1;
            z.bit_at(pair_index(row, t)?)
        };
        let record = corrector_decision(&mut next_u, &mut prob, DEFAULT_REFINE_BUDGET)?;
        Ok((f.bit.xor(Bit(record.fired)), record))
    }
}

pub fn vector_correct(
    x: BitStream,
    y: BitStream,
    z: BitStream,
    base_epsilon: Rational,
    p: Rational,
    p_prime: Rational,
) -> Result<VectorCorrector> {
    VectorCorrector::new(x, y, z, base_epsilon, p, p_prime)
}

/// Exact P(U * c > 1/2) for a known rational c in [0,1] and uniform U:
/// zero when c <= 1/2, else 1 - 1/(2c).
pub fn fire_probability(c: &Rational) -> Rational {
    if *c <= half() {
        zero()
    } else {
        one() - one() / (rat_i64(2, 1) * c)
    }
}

/// Exact conditional law of the corrected bit given a merged realization in
/// the truncated model (finite window, finite scan conditioned on the von
/// Neumann bit stopping inside it). The corrector turns any conditional law
/// into exactly one half.
pub fn corrected_law_truncated(
    window: &[Bit],
    scan: &[MergedPair],
    params: &ExtractorParams,
) -> Result<Rational> {
    let p1 = crate::extractor::cond_law_f_truncated(window, scan, params)?;
    let p0 = one() - &p1;
    // corrected = 1 iff (f=0, corrector fired) or (f=1, corrector quiet)
    Ok(&p0 * fire_probability(&p0) + &p1 * (one() - fire_probability(&p1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::{Bias, BitStream};
    use crate::extractor::choose_params;
    use crate::rational::rat_i64;

    fn test_params() -> std::sync::Arc<ExtractorParams> {
        choose_params(&rat_i64(1, 2), &rat_i64(3, 4), &rat_i64(1, 8)).unwrap()
    }

    #[test]
    fn uniform_prob_half_never_fires() {
        // p_c exactly 1/2: U * 1/2 <= 1/2 always, so the corrector is quiet.
        for seed in 0..50u64 {
            let mut z = BitStream::seeded_fair(seed);
            let mut pc = FixedProb(Interval::point(half()));
            let mut next = || z.next_bit();
            let rec = corrector_decision(&mut next, &mut pc, 4096).unwrap();
            assert!(!rec.fired);
            assert!(rec.re_verify());
        }
    }

    #[test]
    fn prob_one_fires_iff_u_above_half() {
        // p_c = 1: fires exactly when U > 1/2, i.e. first z bit is 1.
        for seed in 0..100u64 {
            let mut z = BitStream::seeded_fair(seed);
            let first = z.bit_at(1).unwrap();
            let mut z = BitStream::seeded_fair(seed);
            let mut pc = FixedProb(Interval::point(one()));
            let mut next = || z.next_bit();
            let rec = corrector_decision(&mut next, &mut pc, 4096).unwrap();
            assert_eq!(rec.fired, first.0);
            assert!(rec.re_verify());
        }
    }

    #[test]
    fn fire_probability_examples() {
        assert_eq!(fire_probability(&half()), zero());
        assert_eq!(fire_probability(&rat_i64(3, 4)), rat_i64(1, 3));
        assert_eq!(fire_probability(&one()), half());
        assert_eq!(fire_probability(&rat_i64(1, 4)), zero());
    }

    #[test]
    fn fired_rate_matches_exact_probability_at_pc_three_quarters() {
        // P(f' = 1) should be 1/3 when p_c = 3/4.
        let mut fired = 0u32;
        let n = 20_000u32;
        for seed in 0..n {
            let mut z = BitStream::seeded_fair(seed as u64 + 1000);
            let mut pc = FixedProb(Interval::point(rat_i64(3, 4)));
            let mut next = || z.next_bit();
            if corrector_decision(&mut next, &mut pc, 4096).unwrap().fired {
                fired += 1;
            }
        }
        let freq = fired as f64 / n as f64;
        assert!((freq - 1.0 / 3.0).abs() < 0.012, "freq {freq}");
    }

    #[test]
    fn corrected_equals_extract_when_quiet() {
        let params = test_params();
        for seed in 0..200u64 {
            let mut x = BitStream::seeded(3 * seed + 1, Bias::new(1, 2).unwrap());
            let mut y = BitStream::seeded(3 * seed + 2, Bias::new(1, 2).unwrap());
            let mut z = BitStream::seeded_fair(3 * seed + 3);
            let (out, rec) = corrected_extract(&mut x, &mut y, &mut z, &params).unwrap();
            let mut x2 = BitStream::seeded(3 * seed + 1, Bias::new(1, 2).unwrap());
            let f = crate::extractor::eps_extract(&mut x2, &params).unwrap();
            if !rec.fired {
                assert_eq!(out, f);
            } else {
                assert_eq!(out, f.not());
            }
            assert!(rec.re_verify());
        }
    }

    #[test]
    fn decision_deterministic_in_budget() {
        // A larger budget never changes a decision that was returned.
        let params = test_params();
        for seed in 0..100u64 {
            let run = |budget: u64| {
                let mut x = BitStream::seeded(7 * seed + 1, Bias::new(1, 2).unwrap());
                let mut y = BitStream::seeded(7 * seed + 2, Bias::new(1, 2).unwrap());
                let mut z = BitStream::seeded_fair(7 * seed + 3);
                let f = eps_extract_from(&mut |i| x.bit_at(i as u128), &params).unwrap();
                let mut merged = StreamMerged {
                    x: &mut x,
                    y: &mut y,
                    k: params.k,
                };
                let mut prob = ObservedLaw::new(&params, &mut merged, f.bit);
                let mut next = || z.next_bit();
                corrector_decision(&mut next, &mut prob, budget)
            };
            let small = run(DEFAULT_REFINE_BUDGET);
            let large = run(DEFAULT_REFINE_BUDGET * 4);
            if let (Ok(a), Ok(b)) = (&small, &large) {
                assert_eq!(a.fired, b.fired);
            }
        }
    }

    #[test]
    fn truncated_corrected_law_is_exactly_half() {
        // Every merged realization in a small truncated model: k = 2 window
        // patterns x 2-pair scans with at least one stoppable pair.
        let base = choose_params(&rat_i64(1, 2), &rat_i64(3, 4), &rat_i64(1, 8)).unwrap();
        let mut prm = (*base).clone();
        prm.k = 2;
        let mut checked = 0;
        for w in 0..4u8 {
            let window = vec![Bit(w & 1 != 0), Bit(w & 2 != 0)];
            for s1 in 0..4u8 {
                for s2 in 0..4u8 {
                    let scan = vec![
                        MergedPair(Bit(s1 & 1 != 0), Bit(s1 & 2 != 0)),
                        MergedPair(Bit(s2 & 1 != 0), Bit(s2 & 2 != 0)),
                    ];
                    match corrected_law_truncated(&window, &scan, &prm) {
                        Ok(law) => {
                            assert_eq!(law, half(), "window {w:?} scan {s1},{s2}");
                            checked += 1;
                        }
                        Err(Error::EmptyConditioning) => {
                            // a scan with no stoppable pair cannot condition
                        }
                        Err(e) => panic!("unexpected error {e}"),
                    }
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn csv_record_shape() {
        let rec = CorrectionRecord {
            fired: true,
            u_bits_consumed: 5,
            prob_used: Interval::new(rat_i64(3, 5), rat_i64(2, 3)),
            u_used: Interval::new(rat_i64(7, 8), one()),
        };
        assert_eq!(rec.to_csv_row(), "1,5,3/5,2/3");
        assert!(rec.re_verify());
    }
}
