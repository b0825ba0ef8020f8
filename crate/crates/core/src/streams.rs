//! Lazy-evaluation substrate: pairing bijections, grid views of a single
//! stream, dyadic reals known through shrinking rational enclosures, and the
//! fair-bits -> Bernoulli(q) density transformer.

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::bits::{Bit, BitStream};
use crate::error::{Error, Result};
use crate::rational::{one, zero, Interval, Rational};

/// Cantor-diagonal pairing, 1-based: (1,1)->1, (1,2)->2, (2,1)->3,
/// (1,3)->4, (2,2)->5, (3,1)->6, ...
pub fn pair_index(i: u128, j: u128) -> Result<u128> {
    if i == 0 || j == 0 {
        return Err(Error::InvalidConfig("pair_index arguments are 1-based".into()));
    }
    let s = i.checked_add(j).ok_or(Error::IndexOverflow)?;
    let d = s - 2; // completed anti-diagonals before ours
    let tri = d
        .checked_mul(d + 1)
        .map(|t| t / 2)
        .ok_or(Error::IndexOverflow)?;
    tri.checked_add(i).ok_or(Error::IndexOverflow)
}

/// Inverse of [`pair_index`].
pub fn unpair(n: u128) -> Result<(u128, u128)> {
    if n == 0 {
        return Err(Error::InvalidConfig("unpair argument is 1-based".into()));
    }
    let m = n - 1;
    // Largest d with d(d+1)/2 <= m, via integer sqrt of 8m+1.
    let mut d = (isqrt_u128(m.checked_mul(8).ok_or(Error::IndexOverflow)? + 1) - 1) / 2;
    while d * (d + 1) / 2 > m {
        d -= 1;
    }
    while (d + 1) * (d + 2) / 2 <= m {
        d += 1;
    }
    let offset = m - d * (d + 1) / 2;
    Ok((offset + 1, d + 1 - offset))
}

fn isqrt_u128(v: u128) -> u128 {
    if v < 2 {
        return v;
    }
    let mut x = (v as f64).sqrt() as u128;
    while x.checked_mul(x).map(|s| s > v).unwrap_or(true) {
        x -= 1;
    }
    while (x + 1).checked_mul(x + 1).map(|s| s <= v).unwrap_or(false) {
        x += 1;
    }
    x
}

/// Stripe allocation: a bijection N x N -> N whose value grows linearly in
/// the row index for any fixed column. Column v in [2^a, 2^{a+1}) of row c
/// lands in the stripe of positions 2^a * odd. Used for the thickener's
/// internal sub-stream dealing, where row indices compound across levels and
/// quadratic pairings would overflow any fixed-width index.
pub fn stripe_alloc(row: u128, col: u128) -> Result<u128> {
    if row == 0 || col == 0 {
        return Err(Error::InvalidConfig("stripe_alloc arguments are 1-based".into()));
    }
    let a = col.ilog2();
    let block = 1u128 << a;
    let w = (row - 1)
        .checked_mul(block)
        .and_then(|x| x.checked_add(col - block))
        .and_then(|x| x.checked_add(1))
        .ok_or(Error::IndexOverflow)?;
    // position = 2^a * (2w - 1)
    w.checked_mul(2)
        .and_then(|x| x.checked_sub(1))
        .and_then(|x| x.checked_mul(block))
        .ok_or(Error::IndexOverflow)
}

/// Inverse of [`stripe_alloc`].
pub fn stripe_unalloc(pos: u128) -> Result<(u128, u128)> {
    if pos == 0 {
        return Err(Error::InvalidConfig("stripe positions are 1-based".into()));
    }
    let a = pos.trailing_zeros() as u128;
    let block = 1u128 << a;
    let odd = pos >> a;
    let w = (odd + 1) / 2;
    let row = (w - 1) / block + 1;
    let col = block + (w - 1) % block;
    Ok((row, col))
}

/// N x N-indexed view of one stream through the pairing bijection:
/// cell (i, j) is the base bit at `pair_index(i, j)`.
#[derive(Debug, Clone)]
pub struct GridStream {
    base: BitStream,
}

impl GridStream {
    pub fn new(base: BitStream) -> GridStream {
        GridStream { base }
    }

    pub fn bit(&mut self, i: u128, j: u128) -> Result<Bit> {
        let n = pair_index(i, j)?;
        self.base.bit_at(n)
    }

    pub fn base_consumed(&self) -> u64 {
        self.base.consumed()
    }

    pub fn into_base(self) -> BitStream {
        self.base
    }
}

/// Splits a stream into the grid view. If the base is i.i.d. Bernoulli(p),
/// every row is i.i.d. Bernoulli(p) and rows are jointly independent.
pub fn split_grid(base: BitStream) -> GridStream {
    GridStream::new(base)
}

/// Outcome of an exact lazy comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOutcome {
    Less,
    Greater,
}

/// A real number known only through a shrinkable enclosing interval with
/// exact rational endpoints. Refinement strictly shrinks the enclosure
/// (except for constants, which are already exact).
#[derive(Debug, Clone)]
pub enum DyadicReal {
    Constant(Rational),
    Uniform(UniformBits),
}

impl DyadicReal {
    pub fn constant(v: Rational) -> DyadicReal {
        DyadicReal::Constant(v)
    }

    pub fn enclosure(&self) -> Interval {
        match self {
            DyadicReal::Constant(v) => Interval::point(v.clone()),
            DyadicReal::Uniform(u) => u.enclosure(),
        }
    }

    /// Consumes more input to shrink the enclosure. No-op on constants.
    pub fn refine(&mut self) -> Result<()> {
        match self {
            DyadicReal::Constant(_) => Ok(()),
            DyadicReal::Uniform(u) => u.refine(),
        }
    }
}

/// U(z) = sum z_i 2^-i read lazily from a bit stream. After k bits the
/// enclosure is [s, s + 2^-k] with s the partial sum.
#[derive(Debug, Clone)]
pub struct UniformBits {
    stream: BitStream,
    numer: BigInt,
    bits: u32,
}

impl UniformBits {
    pub fn new(stream: BitStream) -> UniformBits {
        UniformBits {
            stream,
            numer: BigInt::zero(),
            bits: 0,
        }
    }

    pub fn bits_consumed(&self) -> u32 {
        self.bits
    }

    pub fn enclosure(&self) -> Interval {
        let den = BigInt::one() << self.bits;
        let lo = Rational::new(self.numer.clone(), den.clone());
        let hi = Rational::new(&self.numer + 1, den);
        Interval::new(lo, hi)
    }

    /// Consumes one more bit, halving the enclosure width.
    pub fn refine(&mut self) -> Result<()> {
        let b = self.stream.next_bit()?;
        self.numer = (&self.numer << 1) + BigInt::from(b.as_u8());
        self.bits += 1;
        Ok(())
    }
}

/// Interprets a stream as a uniform [0,1] variable via binary expansion.
pub fn uniform_from_bits(stream: BitStream) -> DyadicReal {
    DyadicReal::Uniform(UniformBits::new(stream))
}

pub const DEFAULT_REFINE_BUDGET: u64 = 4096;

/// Compares two lazy reals by refining both alternately until their
/// enclosures are disjoint. Ties are a null event under the intended random
/// models and surface as a budget error.
pub fn compare(a: &mut DyadicReal, b: &mut DyadicReal, budget: u64) -> Result<CompareOutcome> {
    for _ in 0..=budget {
        let ea = a.enclosure();
        let eb = b.enclosure();
        if ea.strictly_below(&eb) {
            return Ok(CompareOutcome::Less);
        }
        if eb.strictly_below(&ea) {
            return Ok(CompareOutcome::Greater);
        }
        let before_a = a.enclosure().width();
        let before_b = b.enclosure().width();
        a.refine()?;
        b.refine()?;
        if a.enclosure().width() == before_a && b.enclosure().width() == before_b {
            // Two constants (or otherwise unrefinable operands) that overlap
            // can never separate.
            return Err(Error::BudgetExceeded {
                budget,
                context: "compare: unrefinable overlapping enclosures",
            });
        }
    }
    Err(Error::BudgetExceeded {
        budget,
        context: "compare",
    })
}

/// Produces one Bernoulli(q) bit from fair bits by digit-wise comparison of
/// U against q's binary expansion: output 1 iff U < q. Consumes a geometric
/// number of fair bits (mean 2). The residual of q is doubled each step; a
/// tie (expansions agreeing forever) exhausts the budget.
pub fn density_bit(fair: &mut impl FnMut() -> Result<Bit>, q: &Rational, budget: u64) -> Result<Bit> {
    debug_assert!(q > &zero() && q < &one());
    let mut residual = q.clone();
    for _ in 0..budget {
        residual = &residual + &residual;
        let digit = residual >= one();
        if digit {
            residual = residual - one();
        }
        let z = fair()?;
        if z.0 != digit {
            // z < digit resolves U < q; z > digit resolves U > q.
            return Ok(Bit(digit));
        }
    }
    Err(Error::BudgetExceeded {
        budget,
        context: "density_bit",
    })
}

/// Stream of i.i.d. Bernoulli(q) bits produced from a fair stream. Output
/// bit m consumes the disjoint fair sub-stream `stripe_alloc(m, ·)`, so
/// distinct output bits never share input bits and the output is
/// position-addressable whenever the fair source is.
#[derive(Debug, Clone)]
pub struct DensityTransform {
    fair: BitStream,
    q: Rational,
    budget: u64,
}

impl DensityTransform {
    pub fn new(fair: BitStream, q: Rational) -> Result<DensityTransform> {
        if !(q > zero() && q < one()) {
            return Err(Error::DegenerateParams(format!(
                "density q = {} outside (0,1)",
                q
            )));
        }
        Ok(DensityTransform {
            fair,
            q,
            budget: DEFAULT_REFINE_BUDGET,
        })
    }

    pub fn with_budget(mut self, budget: u64) -> DensityTransform {
        self.budget = budget;
        self
    }

    /// The m-th output bit (1-based).
    pub fn bit_at(&mut self, m: u128) -> Result<Bit> {
        let fair = &mut self.fair;
        let mut t: u128 = 0;
        let mut next = || {
            t += 1;
            let pos = stripe_alloc(m, t)?;
            fair.bit_at(pos)
        };
        density_bit(&mut next, &self.q, self.budget)
    }

    pub fn fair_bits_consumed(&self) -> u64 {
        self.fair.consumed()
    }
}

/// Transforms a fair stream into a Bernoulli(q) stream.
pub fn density_transform(fair: BitStream, q: Rational) -> Result<DensityTransform> {
    DensityTransform::new(fair, q)
}

/// Sequential single-output variant used where a caller owns the fair stream
/// and wants one output bit consuming bits in stream order. Returns the bit
/// and the number of fair bits consumed.
pub fn density_bit_sequential(fair: &mut BitStream, q: &Rational, budget: u64) -> Result<(Bit, u64)> {
    let before = fair.consumed();
    let mut next = || fair.next_bit();
    let b = density_bit(&mut next, q, budget)?;
    Ok((b, fair.consumed() - before))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat_i64;

    #[test]
    fn pairing_convention() {
        assert_eq!(pair_index(1, 1).unwrap(), 1);
        assert_eq!(pair_index(1, 2).unwrap(), 2);
        assert_eq!(pair_index(2, 1).unwrap(), 3);
        assert_eq!(pair_index(1, 3).unwrap(), 4);
        assert_eq!(pair_index(2, 2).unwrap(), 5);
        assert_eq!(pair_index(3, 1).unwrap(), 6);
        assert_eq!(unpair(pair_index(7, 13).unwrap()).unwrap(), (7, 13));
    }

    #[test]
    fn pairing_rejects_zero() {
        assert!(pair_index(0, 1).is_err());
        assert!(unpair(0).is_err());
    }

    #[test]
    fn pairing_round_trip_dense() {
        for n in 1..=100_000u128 {
            let (i, j) = unpair(n).unwrap();
            assert_eq!(pair_index(i, j).unwrap(), n);
        }
    }

    #[test]
    fn stripe_round_trip() {
        assert_eq!(stripe_alloc(1, 1).unwrap(), 1);
        assert_eq!(stripe_alloc(2, 1).unwrap(), 3);
        for pos in 1..=4096u128 {
            let (r, c) = stripe_unalloc(pos).unwrap();
            assert_eq!(stripe_alloc(r, c).unwrap(), pos);
        }
        // linear in the row index for column 1
        assert_eq!(stripe_alloc(500, 1).unwrap(), 999);
    }

    #[test]
    fn grid_matches_pairing() {
        let base = BitStream::from_ascii("011").unwrap();
        let mut g = split_grid(base);
        assert_eq!(g.bit(1, 1).unwrap(), Bit::ZERO);
        assert_eq!(g.bit(1, 2).unwrap(), Bit::ONE);
        assert_eq!(g.bit(2, 1).unwrap(), Bit::ONE);
        assert!(g.bit(2, 2).is_err()); // exhaustion propagates
    }

    #[test]
    fn uniform_enclosures() {
        // z = 1,0,0 -> [1/2, 5/8]
        let mut u = UniformBits::new(BitStream::from_ascii("100").unwrap());
        for _ in 0..3 {
            u.refine().unwrap();
        }
        let e = u.enclosure();
        assert_eq!(e.lo, rat_i64(1, 2));
        assert_eq!(e.hi, rat_i64(5, 8));

        // all-zero prefix of length k -> [0, 2^-k]
        let mut u = UniformBits::new(BitStream::from_ascii("0000").unwrap());
        for k in 1..=4u32 {
            u.refine().unwrap();
            let e = u.enclosure();
            assert_eq!(e.lo, rat_i64(0, 1));
            assert_eq!(e.hi, crate::rational::pow2_neg(k));
        }

        // z = 0,1,1 -> [3/8, 1/2]
        let mut u = UniformBits::new(BitStream::from_ascii("011").unwrap());
        for _ in 0..3 {
            u.refine().unwrap();
        }
        let e = u.enclosure();
        assert_eq!(e.lo, rat_i64(3, 8));
        assert_eq!(e.hi, rat_i64(1, 2));
    }

    #[test]
    fn enclosure_width_is_exact_power_of_two() {
        let mut u = UniformBits::new(BitStream::seeded_fair(9));
        for k in 1..=24u32 {
            u.refine().unwrap();
            assert_eq!(u.enclosure().width(), crate::rational::pow2_neg(k));
        }
    }

    #[test]
    fn compare_disjoint_and_refining() {
        // already disjoint enclosures
        let mut a = DyadicReal::constant(rat_i64(1, 3));
        let mut b = DyadicReal::constant(rat_i64(1, 2));
        assert_eq!(compare(&mut a, &mut b, 16).unwrap(), CompareOutcome::Less);

        // uniform from bits 1,0,... against constant 1/4 -> Greater
        let mut a = uniform_from_bits(BitStream::from_ascii("10").unwrap());
        let mut b = DyadicReal::constant(rat_i64(1, 4));
        assert_eq!(compare(&mut a, &mut b, 16).unwrap(), CompareOutcome::Greater);

        // tie: identical constants exhaust the budget
        let mut a = DyadicReal::constant(rat_i64(1, 3));
        let mut b = DyadicReal::constant(rat_i64(1, 3));
        assert!(matches!(
            compare(&mut a, &mut b, 8),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn density_bit_examples() {
        // q = 1/2: output = NOT(first fair bit), one bit consumed
        let mut s = BitStream::from_ascii("011").unwrap();
        let (b, used) = density_bit_sequential(&mut s, &rat_i64(1, 2), 64).unwrap();
        assert_eq!(b, Bit::ONE);
        assert_eq!(used, 1);

        // q = 1/4, fair bits 0,0 -> 1 with 2 bits consumed
        let mut s = BitStream::from_ascii("00").unwrap();
        let (b, used) = density_bit_sequential(&mut s, &rat_i64(1, 4), 64).unwrap();
        assert_eq!(b, Bit::ONE);
        assert_eq!(used, 2);

        // q = 1/4, fair bits 0,1,1 -> 0 with 3 bits consumed
        let mut s = BitStream::from_ascii("011").unwrap();
        let (b, used) = density_bit_sequential(&mut s, &rat_i64(1, 4), 64).unwrap();
        assert_eq!(b, Bit::ZERO);
        assert_eq!(used, 3);
    }

    #[test]
    fn density_transform_disjoint_substreams() {
        let mut t = density_transform(BitStream::seeded_fair(11), rat_i64(1, 3)).unwrap();
        // determinism and replay across output positions
        let first: Vec<Bit> = (1..=32u128).map(|m| t.bit_at(m).unwrap()).collect();
        let again: Vec<Bit> = (1..=32u128).map(|m| t.bit_at(m).unwrap()).collect();
        assert_eq!(first, again);
    }
}
