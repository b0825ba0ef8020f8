//! Exact enumeration oracles: total variation distance and conditional law
//! tables over finite independent-bit models, computed with rationals and
//! zero tolerance. These back every derived expected value in the test
//! suites, independently of the implementation paths they check.

use std::collections::BTreeMap;

use thickening_core::bits::Bit;
use thickening_core::error::{Error, Result};
use thickening_core::rational::{rat_i64, zero, Rational};

/// A finite distribution over an ordered support.
pub type FiniteLaw<K> = BTreeMap<K, Rational>;

/// Total variation distance (1/2) sum |a - b| over a common support.
pub fn tv_exact<K: Ord + Clone>(a: &FiniteLaw<K>, b: &FiniteLaw<K>) -> Result<Rational> {
    if a.len() != b.len() || !a.keys().all(|k| b.contains_key(k)) {
        return Err(Error::SupportMismatch);
    }
    let mut total = zero();
    for (k, pa) in a {
        let pb = &b[k];
        let diff = pa - pb;
        total += if diff < zero() { -diff } else { diff };
    }
    Ok(total / rat_i64(2, 1))
}

pub fn bernoulli_law(p: &Rational) -> FiniteLaw<u8> {
    let mut law = BTreeMap::new();
    law.insert(0u8, rat_i64(1, 1) - p);
    law.insert(1u8, p.clone());
    law
}

/// Independent bits with given per-position probabilities of one.
#[derive(Debug, Clone)]
pub struct FiniteBitModel {
    pub probs: Vec<Rational>,
}

pub const STATE_SPACE_LIMIT: u32 = 24;

impl FiniteBitModel {
    pub fn new(probs: Vec<Rational>) -> Result<FiniteBitModel> {
        if probs.len() > STATE_SPACE_LIMIT as usize {
            return Err(Error::StateSpaceGuard(format!(
                "{} bits exceeds 2^{STATE_SPACE_LIMIT} states",
                probs.len()
            )));
        }
        Ok(FiniteBitModel { probs })
    }

    pub fn iid(p: &Rational, n: usize) -> Result<FiniteBitModel> {
        FiniteBitModel::new(vec![p.clone(); n])
    }

    fn weight(&self, assignment: usize) -> Rational {
        let mut w = rat_i64(1, 1);
        for (i, p) in self.probs.iter().enumerate() {
            if assignment >> i & 1 == 1 {
                w *= p;
            } else {
                w *= rat_i64(1, 1) - p;
            }
        }
        w
    }

    fn bits(&self, assignment: usize) -> Vec<Bit> {
        (0..self.probs.len())
            .map(|i| Bit(assignment >> i & 1 == 1))
            .collect()
    }
}

/// Exact joint distribution of (conditioning, statistic) by full
/// enumeration, returned as conditional law tables per conditioning value.
pub fn enumerate_conditional<S, C>(
    model: &FiniteBitModel,
    statistic: impl Fn(&[Bit]) -> S,
    conditioning: impl Fn(&[Bit]) -> C,
) -> BTreeMap<C, FiniteLaw<S>>
where
    S: Ord + Clone,
    C: Ord + Clone,
{
    let n = model.probs.len();
    let mut joint: BTreeMap<C, BTreeMap<S, Rational>> = BTreeMap::new();
    let mut mass: BTreeMap<C, Rational> = BTreeMap::new();
    for assignment in 0usize..(1 << n) {
        let w = model.weight(assignment);
        if w == zero() {
            continue;
        }
        let bits = model.bits(assignment);
        let c = conditioning(&bits);
        let s = statistic(&bits);
        *joint
            .entry(c.clone())
            .or_default()
            .entry(s)
            .or_insert_with(zero) += &w;
        *mass.entry(c).or_insert_with(zero) += w;
    }
    let mut out = BTreeMap::new();
    for (c, table) in joint {
        let total = &mass[&c];
        let mut law = BTreeMap::new();
        for (s, w) in table {
            law.insert(s, w / total);
        }
        out.insert(c, law);
    }
    out
}

/// Looks up a conditional table, surfacing null conditioning explicitly.
pub fn conditional_law<'t, S: Ord + Clone, C: Ord>(
    tables: &'t BTreeMap<C, FiniteLaw<S>>,
    condition: &C,
) -> Result<&'t FiniteLaw<S>> {
    tables.get(condition).ok_or(Error::EmptyConditioning)
}

/// Expected |1 - 2 P(vn bit = 1 | merged scan)| over random merged scans,
/// as a certified enclosure: the tree over non-skip merged pair patterns is
/// enumerated to the given depth, with the unresolved no-stop mass bounding
/// each leaf's contribution. Used by the extractor tolerance audit.
pub fn expected_scan_bias_enclosure(
    r: &Rational,
    p_prime: &Rational,
    depth: u32,
) -> thickening_core::rational::Interval {
    use thickening_core::rational::Interval;
    let one = rat_i64(1, 1);
    let q00 = (&one - p_prime) * (&one - p_prime);
    let norm = &one - &q00;
    // effective pattern probabilities given not-(0,0)
    let p11 = p_prime * p_prime / &norm;
    let p_uneq = p_prime * (&one - p_prime) / &norm; // each of (1,0), (0,1)
    let ns11 = &one - rat_i64(2, 1) * r * (&one - r);
    let ns_uneq = &one - r;

    struct Frame {
        prob: Rational,
        bias: Rational, // running signed D
        width: Rational,
    }
    let mut lo = zero();
    let mut hi = zero();
    let mut stack = vec![(
        Frame {
            prob: one.clone(),
            bias: zero(),
            width: one.clone(),
        },
        0u32,
    )];
    while let Some((f, d)) = stack.pop() {
        if d == depth {
            let abs_bias = if f.bias < zero() { -f.bias.clone() } else { f.bias.clone() };
            let leaf_lo = {
                let v = &abs_bias - &f.width;
                if v < zero() {
                    zero()
                } else {
                    v
                }
            };
            let leaf_hi = {
                let v = &abs_bias + &f.width;
                if v > one {
                    one.clone()
                } else {
                    v
                }
            };
            lo += &f.prob * leaf_lo;
            hi += &f.prob * leaf_hi;
            continue;
        }
        // (1,1): no bias change, width shrinks by the fair-stop mass
        stack.push((
            Frame {
                prob: &f.prob * &p11,
                bias: f.bias.clone(),
                width: &f.width * &ns11,
            },
            d + 1,
        ));
        // (1,0): stop with bit one
        stack.push((
            Frame {
                prob: &f.prob * &p_uneq,
                bias: &f.bias + &f.width * r,
                width: &f.width * &ns_uneq,
            },
            d + 1,
        ));
        // (0,1): stop with bit zero
        stack.push((
            Frame {
                prob: &f.prob * &p_uneq,
                bias: &f.bias - &f.width * r,
                width: &f.width * &ns_uneq,
            },
            d + 1,
        ));
    }
    Interval::new(lo, hi)
}

/// Exact E |1 - 2 P(parity = 1 | merged window)| for a length-k window:
/// sum over merged-one counts of the binomial weight times |1-2r|^count.
pub fn expected_window_bias(r: &Rational, p_prime: &Rational, k: u32) -> Rational {
    let one = rat_i64(1, 1);
    let beta = {
        let b = &one - rat_i64(2, 1) * r;
        if b < zero() {
            -b
        } else {
            b
        }
    };
    // sum_l C(k,l) p'^l (1-p')^(k-l) beta^l = ((1-p') + p' beta)^k
    let base = (&one - p_prime) + p_prime * beta;
    let mut acc = one;
    for _ in 0..k {
        acc *= &base;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_examples() {
        let a = bernoulli_law(&rat_i64(1, 2));
        let b = bernoulli_law(&rat_i64(3, 4));
        assert_eq!(tv_exact(&a, &b).unwrap(), rat_i64(1, 4));
        assert_eq!(tv_exact(&a, &a).unwrap(), zero());
        // bias formula at r = 2/3, l = 2: law P_{4/9} vs fair is 1/18
        let c = bernoulli_law(&rat_i64(4, 9));
        assert_eq!(tv_exact(&c, &a).unwrap(), rat_i64(1, 18));
    }

    #[test]
    fn tv_support_mismatch() {
        let a = bernoulli_law(&rat_i64(1, 2));
        let mut b = a.clone();
        b.insert(2u8, zero());
        assert!(matches!(tv_exact(&a, &b), Err(Error::SupportMismatch)));
    }

    #[test]
    fn enumerate_two_bernoulli_parity() {
        // two Bernoulli(2/3) bits, parity conditioned on both merged bits
        // being one: with merged all ones, x-bits are the bits themselves
        let model = FiniteBitModel::iid(&rat_i64(2, 3), 2).unwrap();
        let tables = enumerate_conditional(
            &model,
            |bits| (bits[0].as_u8() + bits[1].as_u8()) % 2,
            |_| 0u8,
        );
        let law = conditional_law(&tables, &0).unwrap();
        assert_eq!(law[&1], rat_i64(4, 9));
    }

    #[test]
    fn null_conditioning_is_explicit() {
        let model = FiniteBitModel::iid(&rat_i64(1, 2), 1).unwrap();
        let tables = enumerate_conditional(&model, |b| b[0].as_u8(), |b| b[0].as_u8());
        assert!(matches!(
            conditional_law(&tables, &7),
            Err(Error::EmptyConditioning)
        ));
    }

    #[test]
    fn unconditioned_single_bit_is_bernoulli() {
        let p = rat_i64(1, 3);
        let model = FiniteBitModel::iid(&p, 1).unwrap();
        let tables = enumerate_conditional(&model, |b| b[0].as_u8(), |_| 0u8);
        let law = conditional_law(&tables, &0).unwrap();
        assert_eq!(law[&1], p);
    }

    #[test]
    fn state_space_guard() {
        assert!(FiniteBitModel::iid(&rat_i64(1, 2), 30).is_err());
    }

    #[test]
    fn window_bias_closed_form_matches_enumeration() {
        // direct sum for k = 4 equals the closed form
        let r = rat_i64(2, 3);
        let pp = rat_i64(3, 4);
        let closed = expected_window_bias(&r, &pp, 4);
        let model = FiniteBitModel::iid(&pp, 4).unwrap();
        let mut acc = zero();
        for assign in 0usize..16 {
            let w = model.weight(assign);
            let ones = (assign as u32).count_ones() as u64;
            let beta = rat_i64(1, 3);
            let mut pw = rat_i64(1, 1);
            for _ in 0..ones {
                pw *= &beta;
            }
            acc += w * pw;
        }
        assert_eq!(closed, acc);
    }

    #[test]
    fn scan_bias_enclosure_narrows() {
        let shallow = expected_scan_bias_enclosure(&rat_i64(2, 3), &rat_i64(3, 4), 4);
        let deep = expected_scan_bias_enclosure(&rat_i64(2, 3), &rat_i64(3, 4), 9);
        assert!(deep.width() < shallow.width());
        assert!(deep.lo >= shallow.lo && deep.hi <= shallow.hi);
    }
}
