//! Poisson point processes over exact rationals, the parity/sign extractor
//! for point processes, and the continuous thickening built by dealing unit
//! intervals of the line out to countably many copies and running the
//! corrected-extractor cascade across copies.
//!
//! No floating point: point locations are dyadic rationals (refinable where
//! the construction needs almost-sure comparisons), and exponential /
//! Poisson tail quantities are handled through certified rational
//! enclosures.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::bits::{Bit, BitStream};
use crate::corrector::{corrector_decision, RefinableProb};
use crate::error::{Error, Result};
use crate::rational::{
    half, one, pow2_neg, rat_i64, to_fraction_string, zero, Interval, Rational,
};
use crate::streams::{pair_index, stripe_alloc};
use crate::thickener::{zton, ChangeEvent, StabilizationCertificate, MAX_LEVEL_CAP};

/// Finite realization of a point process on a window.
#[derive(Debug, Clone, PartialEq)]
pub struct PointWindow {
    pub lo: Rational,
    pub hi: Rational,
    pub points: Vec<Rational>,
    pub intensity: Rational,
}

impl PointWindow {
    pub fn new(lo: Rational, hi: Rational, points: Vec<Rational>, intensity: Rational) -> Result<PointWindow> {
        if lo >= hi {
            return Err(Error::InvalidConfig("window needs lo < hi".into()));
        }
        for w in points.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidConfig("points must be strictly increasing".into()));
            }
        }
        if let (Some(first), Some(last)) = (points.first(), points.last()) {
            if *first < lo || *last > hi {
                return Err(Error::InvalidConfig("points outside window".into()));
            }
        }
        Ok(PointWindow {
            lo,
            hi,
            points,
            intensity,
        })
    }

    pub fn count(&self) -> u64 {
        self.points.len() as u64
    }

    /// Serializes as {"lo", "hi", "intensity", "points"} with exact
    /// fraction strings.
    pub fn to_json(&self) -> String {
        let ser = PointWindowSerde {
            lo: to_fraction_string(&self.lo),
            hi: to_fraction_string(&self.hi),
            intensity: to_fraction_string(&self.intensity),
            points: self.points.iter().map(to_fraction_string).collect(),
        };
        serde_json::to_string(&ser).expect("serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<PointWindow> {
        let ser: PointWindowSerde = serde_json::from_str(s)
            .map_err(|e| Error::InvalidConfig(format!("bad point window JSON: {e}")))?;
        let parse = crate::rational::parse_fraction;
        PointWindow::new(
            parse(&ser.lo)?,
            parse(&ser.hi)?,
            ser.points.iter().map(|p| parse(p)).collect::<Result<Vec<_>>>()?,
            parse(&ser.intensity)?,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct PointWindowSerde {
    lo: String,
    hi: String,
    intensity: String,
    points: Vec<String>,
}

// ---------------------------------------------------------------------------
// Certified enclosures of e^-t and Poisson tails
// ---------------------------------------------------------------------------

/// Rounds an interval outward onto the dyadic grid 2^-bits, bounding the
/// bit-length of enclosure endpoints through long chains of interval
/// arithmetic.
pub fn round_outward(iv: &Interval, bits: u32) -> Interval {
    let scale = BigInt::one() << bits;
    let lo = (&iv.lo * Rational::from(scale.clone())).floor();
    let hi = (&iv.hi * Rational::from(scale.clone())).ceil();
    Interval::new(
        Rational::new(lo.to_integer(), scale.clone()).max(zero()),
        Rational::new(hi.to_integer(), scale),
    )
}

/// Rational enclosure of e^-t for t >= 0, width below 2^-precision.
/// Argument reduction to t <= 1/2 followed by the alternating series and
/// interval squaring, rounding outward after each squaring so endpoint
/// sizes stay bounded.
pub fn exp_neg_enclosure(t: &Rational, precision: u32) -> Interval {
    debug_assert!(!t.is_negative());
    if t.is_zero() {
        return Interval::point(one());
    }
    let mut halvings = 0u32;
    let mut s = t.clone();
    while s > rat_i64(1, 2) {
        s /= rat_i64(2, 1);
        halvings += 1;
    }
    // squaring roughly doubles relative width; demand extra bits up front
    let target = precision + 2 * halvings + 8;
    let bound = pow2_neg(target);
    let mut term = one();
    let mut sum = one();
    let mut k = 0u64;
    let (lo, hi);
    loop {
        k += 1;
        term = term * &s / Rational::from(BigInt::from(k));
        if k % 2 == 1 {
            sum -= &term;
        } else {
            sum += &term;
        }
        // alternating with decreasing terms: the limit lies between
        // consecutive partial sums
        if term < bound {
            if k % 2 == 1 {
                lo = sum.clone();
                hi = &sum + &term;
            } else {
                lo = &sum - &term;
                hi = sum.clone();
            }
            break;
        }
    }
    let round_bits = target + 16;
    let mut iv = round_outward(&Interval::new(lo.max(zero()), hi.min(one())), round_bits);
    for _ in 0..halvings {
        iv = round_outward(&iv.product_nonneg(&iv), round_bits);
    }
    Interval::new(iv.lo, iv.hi.min(one()))
}

/// Enclosure of P(Poisson(mu) < ell) = e^-mu * sum_{j<ell} mu^j / j!.
pub fn poisson_tail_lt_enclosure(mu: &Rational, ell: u32, precision: u32) -> Interval {
    if ell == 0 {
        return Interval::point(zero());
    }
    let e = exp_neg_cached(mu, precision);
    let mut term = one();
    let mut sum = one();
    for j in 1..ell as u64 {
        term = term * mu / Rational::from(BigInt::from(j));
        sum += &term;
    }
    Interval::new((&e.lo * &sum).max(zero()), (&e.hi * &sum).min(one()))
}

/// Certified comparison of the Poisson tail against a rational bound,
/// retrying at higher precision until the enclosure separates.
pub fn poisson_tail_lt_certified(mu: &Rational, ell: u32, bound: &Rational) -> bool {
    let mut precision = 64;
    loop {
        let iv = poisson_tail_lt_enclosure(mu, ell, precision);
        if iv.hi < *bound {
            return true;
        }
        if iv.lo >= *bound {
            return false;
        }
        precision *= 2;
        assert!(precision <= 1 << 20, "tail comparison cannot separate");
    }
}

/// Radius grid for choose_r: eighths of a unit.
pub const RADIUS_GRID_DEN: i64 = 8;

/// Parameters of the continuous extractor at tolerance epsilon: the parity
/// exponent ell' and the minimal window radius r on the 1/8 grid with
/// P(Poisson(2 r lambda') < ell') < epsilon / 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ContExtractorParams {
    pub lambda: Rational,
    pub lambda_prime: Rational,
    pub rho: Rational,
    pub r: Rational,
    pub ell_prime: u32,
    pub epsilon: Rational,
}

fn cont_params_cache() -> &'static Mutex<HashMap<String, Arc<ContExtractorParams>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<ContExtractorParams>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

pub fn choose_r(
    lambda: &Rational,
    lambda_prime: &Rational,
    epsilon: &Rational,
) -> Result<Arc<ContExtractorParams>> {
    if !(lambda > &zero() && lambda < lambda_prime) {
        return Err(Error::DegenerateParams(format!(
            "need 0 < lambda < lambda', got {lambda}, {lambda_prime}"
        )));
    }
    if !(epsilon > &zero() && epsilon < &one()) {
        return Err(Error::DegenerateParams(format!("epsilon {epsilon} outside (0,1)")));
    }
    let key = format!(
        "{}|{}|{}",
        to_fraction_string(lambda),
        to_fraction_string(lambda_prime),
        to_fraction_string(epsilon)
    );
    if let Some(hit) = cont_params_cache().lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }

    let rho = lambda / lambda_prime;
    let target = epsilon / rat_i64(2, 1);
    let beta = {
        let b = one() - rat_i64(2, 1) * &rho;
        if b.is_negative() {
            -b
        } else {
            b
        }
    };
    let mut ell_prime = 1u32;
    let mut pow = beta.clone();
    while pow >= target {
        ell_prime += 1;
        pow *= &beta;
        if ell_prime > 1_000_000 {
            return Err(Error::FeasibilityGuard("ell_prime search diverged".into()));
        }
    }

    // minimal grid radius by doubling and bisection: the tail is
    // non-increasing in r
    let step = rat_i64(1, RADIUS_GRID_DEN);
    let tail_ok = |grid: u64| -> bool {
        let r = &step * Rational::from(BigInt::from(grid));
        let mu = rat_i64(2, 1) * &r * lambda_prime;
        poisson_tail_lt_certified(&mu, ell_prime, &target)
    };
    let mut hi_grid = 1u64;
    while !tail_ok(hi_grid) {
        hi_grid *= 2;
        if hi_grid > 1 << 24 {
            return Err(Error::FeasibilityGuard("radius search diverged".into()));
        }
    }
    let mut lo_grid = hi_grid / 2; // tail_ok fails here (or lo_grid = 0)
    while lo_grid + 1 < hi_grid {
        let mid = lo_grid + (hi_grid - lo_grid) / 2;
        if tail_ok(mid) {
            hi_grid = mid;
        } else {
            lo_grid = mid;
        }
    }
    let r = &step * Rational::from(BigInt::from(hi_grid));
    let params = Arc::new(ContExtractorParams {
        lambda: lambda.clone(),
        lambda_prime: lambda_prime.clone(),
        rho,
        r,
        ell_prime,
        epsilon: epsilon.clone(),
    });
    cont_params_cache().lock().unwrap().insert(key, params.clone());
    Ok(params)
}

// ---------------------------------------------------------------------------
// Exponential gap sampling on a dyadic grid
// ---------------------------------------------------------------------------

/// Gap resolution: cells of width 2^-GAP_RESOLUTION_LOG2, midpoint placement.
pub const GAP_RESOLUTION_LOG2: u32 = 12;

const GAP_FACTOR_PRECISION: u32 = 96;
const GAP_MAX_INTEGER_LOG2: u32 = 8;

/// Fixed-point probability enclosure: [lo, hi] / 2^DYAD_SHIFT. Keeps the
/// hot sampling loops free of rational normalization.
const DYAD_SHIFT: u32 = 192;

#[derive(Debug, Clone)]
struct Dyad {
    lo: BigInt,
    hi: BigInt,
}

impl Dyad {
    fn from_interval(iv: &Interval) -> Dyad {
        let scale = BigInt::one() << DYAD_SHIFT;
        let lo = (&iv.lo * Rational::from(scale.clone())).floor().to_integer();
        let hi = (&iv.hi * Rational::from(scale)).ceil().to_integer();
        Dyad {
            lo: lo.max(BigInt::zero()),
            hi,
        }
    }

    fn one() -> Dyad {
        let unit = BigInt::one() << DYAD_SHIFT;
        Dyad {
            lo: unit.clone(),
            hi: unit,
        }
    }

    fn zero() -> Dyad {
        Dyad {
            lo: BigInt::zero(),
            hi: BigInt::zero(),
        }
    }

    /// Outward-rounded product of enclosures of values in [0, 1].
    fn mul(&self, other: &Dyad) -> Dyad {
        Dyad {
            lo: (&self.lo * &other.lo) >> DYAD_SHIFT,
            hi: ((&self.hi * &other.hi) >> DYAD_SHIFT) + 1,
        }
    }

    /// Position of U = u_num / 2^u_bits (enclosed by one more cell) relative
    /// to this enclosure, when decidable.
    fn compare_uniform(&self, u_num: &BigInt, u_bits: u32) -> Option<std::cmp::Ordering> {
        if u_bits <= DYAD_SHIFT {
            let sh = DYAD_SHIFT - u_bits;
            let u_lo = u_num << sh;
            let u_hi = &u_lo + (BigInt::one() << sh);
            if u_hi <= self.lo {
                Some(std::cmp::Ordering::Less)
            } else if u_lo > self.hi {
                Some(std::cmp::Ordering::Greater)
            } else {
                None
            }
        } else {
            let sh = u_bits - DYAD_SHIFT;
            let lo = &self.lo << sh;
            let hi = &self.hi << sh;
            let u_hi = u_num + 1u8;
            if u_hi <= lo {
                Some(std::cmp::Ordering::Less)
            } else if *u_num > hi {
                Some(std::cmp::Ordering::Greater)
            } else {
                None
            }
        }
    }
}

/// Cached enclosures of e^(-rate * 2^j) for the binary search over gap
/// cells: j runs from -resolution up to the integer-part ceiling.
pub struct GapSampler {
    rate: Rational,
    resolution: u32,
    factors: Vec<Dyad>, // index i: exponent 2^(i - resolution)
}

fn exp_cache() -> &'static Mutex<HashMap<String, Interval>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Interval>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cached enclosure of e^-t.
pub fn exp_neg_cached(t: &Rational, precision: u32) -> Interval {
    let key = format!("{}|{precision}", to_fraction_string(t));
    if let Some(hit) = exp_cache().lock().unwrap().get(&key) {
        return hit.clone();
    }
    let iv = exp_neg_enclosure(t, precision);
    exp_cache().lock().unwrap().insert(key, iv.clone());
    iv
}

fn gap_sampler_cache() -> &'static Mutex<HashMap<String, Arc<GapSampler>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<GapSampler>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared sampler for a given rate and resolution; the factor table is
/// immutable after construction.
pub fn gap_sampler(rate: &Rational, resolution: u32) -> Result<Arc<GapSampler>> {
    let key = format!("{}|{resolution}", to_fraction_string(rate));
    if let Some(hit) = gap_sampler_cache().lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let sampler = Arc::new(GapSampler::new(rate.clone(), resolution)?);
    gap_sampler_cache()
        .lock()
        .unwrap()
        .insert(key, sampler.clone());
    Ok(sampler)
}

impl GapSampler {
    pub fn new(rate: Rational, resolution: u32) -> Result<GapSampler> {
        if !rate.is_positive() {
            return Err(Error::DegenerateParams("rate must be positive".into()));
        }
        let mut factors = Vec::new();
        for i in 0..=(resolution + GAP_MAX_INTEGER_LOG2) {
            let exp_shift = i as i64 - resolution as i64;
            let scale = if exp_shift >= 0 {
                Rational::from(BigInt::from(1u64) << exp_shift as u32)
            } else {
                pow2_neg((-exp_shift) as u32)
            };
            factors.push(Dyad::from_interval(&exp_neg_enclosure(
                &(&rate * scale),
                GAP_FACTOR_PRECISION,
            )));
        }
        Ok(GapSampler {
            rate,
            resolution,
            factors,
        })
    }

    pub fn rate(&self) -> &Rational {
        &self.rate
    }

    /// Enclosure of e^(-rate * cells * 2^-resolution) as a product of the
    /// cached per-bit factors.
    fn boundary(&self, cells: u128) -> Dyad {
        let mut iv = Dyad::one();
        let mut c = cells;
        let mut i = 0usize;
        while c > 0 {
            if c & 1 == 1 {
                iv = iv.mul(&self.factors[i]);
            }
            c >>= 1;
            i += 1;
        }
        iv
    }

    /// Draws one exponential gap from `fair` bits, truncated at `ceiling`:
    /// returns the gap cell index c (gap in [c, c+1) * 2^-resolution) or
    /// None when the gap certifiably exceeds the ceiling. The comparison
    /// U <=> e^(-rate t) is resolved lazily in U.
    pub fn sample_cells(
        &self,
        fair: &mut impl FnMut() -> Result<Bit>,
        ceiling: &Rational,
        budget: u64,
    ) -> Result<Option<u128>> {
        if !ceiling.is_positive() {
            return Ok(None);
        }
        // number of whole cells below the ceiling
        let cells_r = ceiling * Rational::from(BigInt::one() << self.resolution);
        let ceil_cells_big = cells_r.ceil().to_integer();
        let max_cells: u128 = num_traits::ToPrimitive::to_u128(&ceil_cells_big)
            .ok_or(Error::IndexOverflow)?;
        if max_cells == 0 {
            return Ok(None);
        }
        if max_cells >= 1u128 << (self.resolution + GAP_MAX_INTEGER_LOG2) {
            return Err(Error::FeasibilityGuard("gap ceiling too large".into()));
        }

        let mut u_num = BigInt::zero();
        let mut u_bits = 0u32;
        let mut spent = 0u64;
        // G >= t  iff  U <= e^(-rate t); strict versions differ on null sets
        let mut ge = |b: &Dyad, u_num: &mut BigInt, u_bits: &mut u32| -> Result<bool> {
            loop {
                match b.compare_uniform(u_num, *u_bits) {
                    Some(std::cmp::Ordering::Less) => return Ok(true),
                    Some(_) => return Ok(false),
                    None => {}
                }
                spent += 1;
                if spent > budget {
                    return Err(Error::BudgetExceeded {
                        budget,
                        context: "gap cell comparison",
                    });
                }
                let bit = fair()?;
                *u_num = (&*u_num << 1) + BigInt::from(bit.as_u8());
                *u_bits += 1;
            }
        };

        if ge(&self.boundary(max_cells), &mut u_num, &mut u_bits)? {
            return Ok(None); // beyond the ceiling
        }
        // binary digits of the cell index, most significant first, with the
        // boundary enclosure built up incrementally along accepted bits
        let mut high_bit = 0u32;
        while (1u128 << (high_bit + 1)) <= max_cells {
            high_bit += 1;
        }
        let mut cell: u128 = 0;
        let mut prod = Dyad::one();
        for b in (0..=high_bit).rev() {
            let candidate = cell + (1u128 << b);
            if candidate >= max_cells {
                continue;
            }
            let cand_boundary = prod.mul(&self.factors[b as usize]);
            if ge(&cand_boundary, &mut u_num, &mut u_bits)? {
                cell = candidate;
                prod = cand_boundary;
            }
        }
        Ok(Some(cell))
    }

    /// Gap value at the midpoint of the sampled cell.
    pub fn cell_to_gap(&self, cell: u128) -> Rational {
        Rational::new(
            BigInt::from(2 * cell + 1),
            BigInt::one() << (self.resolution + 1),
        )
    }
}

/// Fills (lo, hi) with a gap-chain Poisson realization read from `fair`.
pub fn fill_window_with_gaps(
    sampler: &GapSampler,
    fair: &mut impl FnMut() -> Result<Bit>,
    lo: &Rational,
    hi: &Rational,
    budget: u64,
) -> Result<Vec<Rational>> {
    let mut points = Vec::new();
    let mut t = lo.clone();
    loop {
        let ceiling = hi - &t;
        match sampler.sample_cells(fair, &ceiling, budget)? {
            None => break,
            Some(cell) => {
                t = &t + sampler.cell_to_gap(cell);
                if t >= *hi {
                    break;
                }
                points.push(t.clone());
            }
        }
    }
    Ok(points)
}

/// Samples a Poisson(lambda) realization on [lo, hi] by seeded exponential
/// gaps (inverse CDF on dyadic uniforms).
pub fn sample_poisson(
    lo: &Rational,
    hi: &Rational,
    lambda: &Rational,
    seed: u64,
) -> Result<PointWindow> {
    if lo >= hi {
        return Err(Error::InvalidConfig("window needs lo < hi".into()));
    }
    let sampler = gap_sampler(lambda, GAP_RESOLUTION_LOG2)?;
    let mut stream = BitStream::seeded_fair(seed);
    let mut fair = || stream.next_bit();
    let points = fill_window_with_gaps(&sampler, &mut fair, lo, hi, 1 << 20)?;
    PointWindow::new(lo.clone(), hi.clone(), points, lambda.clone())
}

/// Push-forward of fair bits to a Poisson(lambda) realization on a window:
/// the same gap chain, reading the supplied stream.
pub fn bits_to_poisson(
    fair: &mut BitStream,
    lambda: &Rational,
    lo: &Rational,
    hi: &Rational,
) -> Result<PointWindow> {
    if lo >= hi {
        return Err(Error::InvalidConfig("window needs lo < hi".into()));
    }
    let sampler = gap_sampler(lambda, GAP_RESOLUTION_LOG2)?;
    let mut next = || fair.next_bit();
    let points = fill_window_with_gaps(&sampler, &mut next, lo, hi, 1 << 20)?;
    PointWindow::new(lo.clone(), hi.clone(), points, lambda.clone())
}

// ---------------------------------------------------------------------------
// Refinable seeded Poisson process (two-sided, slot by slot)
// ---------------------------------------------------------------------------

const SLOT_POINT_LIMIT: u32 = 4096;
const POINT_DEPTH_LIMIT: u32 = 120;
const INITIAL_POINT_DEPTH: u32 = 16;

/// One point with a refinable dyadic position within its unit slot:
/// the true position lies in [cell, cell+1] * 2^-depth (slot-local).
#[derive(Debug, Clone)]
pub struct RefinablePoint {
    slot: i64,
    cell: u128,
    depth: u32,
    bits: BitStream,
    bits_used: u32,
}

impl RefinablePoint {
    fn enclosure(&self) -> Interval {
        let base = Rational::from(BigInt::from(self.slot));
        let den = BigInt::one() << self.depth;
        Interval::new(
            &base + Rational::new(BigInt::from(self.cell), den.clone()),
            &base + Rational::new(BigInt::from(self.cell) + 1, den),
        )
    }

    fn refine(&mut self) -> Result<()> {
        if self.depth >= POINT_DEPTH_LIMIT {
            return Err(Error::BudgetExceeded {
                budget: POINT_DEPTH_LIMIT as u64,
                context: "point refinement depth",
            });
        }
        self.bits_used += 1;
        let b = self.bits.bit_at(self.bits_used as u128)?;
        self.cell = (self.cell << 1) | b.as_u8() as u128;
        self.depth += 1;
        Ok(())
    }

    /// Snapshot position: the lower endpoint of the current enclosure.
    pub fn position(&self) -> Rational {
        self.enclosure().lo
    }

    /// Resolves position <=> bound for a rational bound; ties are null.
    /// Integer comparison: (slot 2^d + cell) den <=> num 2^d.
    fn compare_to(&mut self, bound: &Rational, budget: u64) -> Result<std::cmp::Ordering> {
        for _ in 0..budget {
            let lhs_lo = ((BigInt::from(self.slot) << self.depth) + BigInt::from(self.cell))
                * bound.denom();
            let rhs = bound.numer() << self.depth;
            if &lhs_lo + bound.denom() < rhs {
                return Ok(std::cmp::Ordering::Less);
            }
            if lhs_lo > rhs {
                return Ok(std::cmp::Ordering::Greater);
            }
            self.refine()?;
        }
        Err(Error::BudgetExceeded {
            budget,
            context: "point comparison",
        })
    }
}

/// A seeded Poisson process on the whole line, sampled slot by slot
/// (independent unit intervals: exact Poisson counts, refinable uniform
/// positions), with an optional recorded override window aligned to
/// integer slots.
struct SlotSample {
    count: u32,
    points: Option<Vec<RefinablePoint>>,
}

pub struct SeededPointProcess {
    pub rate: Rational,
    seed: u64,
    slots: HashMap<i64, SlotSample>,
    recorded: Option<PointWindow>,
}

// PRF position packing: slot-flat(64) | role(4) | point-idx(20) | counter(32)
fn pack_position(slot_flat: u128, role: u8, idx: u32, counter: u32) -> Result<u128> {
    if slot_flat >= 1u128 << 64 {
        return Err(Error::IndexOverflow);
    }
    Ok((slot_flat << 56)
        | ((role as u128) << 52)
        | ((idx as u128) << 32)
        | counter as u128)
}

impl SeededPointProcess {
    pub fn new(rate: Rational, seed: u64) -> Result<SeededPointProcess> {
        if !rate.is_positive() {
            return Err(Error::DegenerateParams("rate must be positive".into()));
        }
        Ok(SeededPointProcess {
            rate,
            seed,
            slots: HashMap::new(),
            recorded: None,
        })
    }

    /// Overrides the seeded sampling with recorded points on an
    /// integer-aligned window.
    pub fn with_recorded(mut self, window: PointWindow) -> Result<SeededPointProcess> {
        if !window.lo.denom().is_one() || !window.hi.denom().is_one() {
            return Err(Error::InvalidConfig(
                "recorded window must be aligned to integer slot boundaries".into(),
            ));
        }
        self.recorded = Some(window);
        Ok(self)
    }

    fn slot_covered_by_recorded(&self, slot: i64) -> bool {
        match &self.recorded {
            None => false,
            Some(w) => {
                let lo = Rational::from(BigInt::from(slot));
                let hi = Rational::from(BigInt::from(slot + 1));
                w.lo <= lo && hi <= w.hi
            }
        }
    }

    fn sample_count(&self, slot: i64) -> Result<u32> {
        let flat = zton(slot);
        // Poisson count by inverse CDF on a dedicated uniform
        let mut count_bits =
            BitStream::seeded(self.seed, crate::bits::Bias::FAIR);
        let mut consumed = 0u32;
        let mut u_num = BigInt::zero();
        let mut u_bits = 0u32;
        let mut term = Dyad::from_interval(&exp_neg_cached(&self.rate, 80));
        let mut cdf = Dyad::zero();
        let rate_num = self.rate.numer().clone();
        let rate_den = self.rate.denom().clone();
        let mut count: u32 = 0;
        loop {
            // CDF(count) enclosure accumulated term by term
            cdf.lo += &term.lo;
            cdf.hi += &term.hi;
            // decide U < CDF(count)?
            let decided = loop {
                match cdf.compare_uniform(&u_num, u_bits) {
                    Some(std::cmp::Ordering::Less) => break true,
                    Some(_) => break false,
                    None => {}
                }
                consumed += 1;
                if consumed > 4096 {
                    return Err(Error::BudgetExceeded {
                        budget: 4096,
                        context: "slot count sampling",
                    });
                }
                let pos = pack_position(flat, 0, 0, consumed)?;
                let b = count_bits.bit_at(pos)?;
                u_num = (&u_num << 1) + BigInt::from(b.as_u8());
                u_bits += 1;
            };
            if decided {
                break;
            }
            count += 1;
            if count > SLOT_POINT_LIMIT {
                return Err(Error::BudgetExceeded {
                    budget: SLOT_POINT_LIMIT as u64,
                    context: "slot point count",
                });
            }
            // next pmf term: previous * rate / count, rounded outward
            let denom = &rate_den * BigInt::from(count);
            term.lo = (&term.lo * &rate_num) / &denom;
            term.hi = (&term.hi * &rate_num) / &denom + 1u8;
        }
        Ok(count)
    }

    fn materialize(&self, slot: i64, count: u32) -> Result<Vec<RefinablePoint>> {
        let flat = zton(slot);
        let mut pts = Vec::with_capacity(count as usize);
        for idx in 1..=count {
            let pos_seed_pos = pack_position(flat, 1, idx, 0)?;
            let derived = crate::bits::prf_u64(self.seed, pos_seed_pos, 0);
            let mut p = RefinablePoint {
                slot,
                cell: 0,
                depth: 0,
                bits: BitStream::seeded_fair(derived),
                bits_used: 0,
            };
            for _ in 0..INITIAL_POINT_DEPTH {
                p.refine()?;
            }
            pts.push(p);
        }
        // order within the slot, refining through collisions
        sort_refinable(&mut pts)?;
        Ok(pts)
    }

    fn ensure_slot(&mut self, slot: i64) -> Result<()> {
        if self.slots.contains_key(&slot) {
            return Ok(());
        }
        let sample = if self.slot_covered_by_recorded(slot) {
            let w = self.recorded.as_ref().unwrap();
            let lo = Rational::from(BigInt::from(slot));
            let hi = Rational::from(BigInt::from(slot + 1));
            let pts = w
                .points
                .iter()
                .filter(|p| **p >= lo && **p < hi)
                .map(|p| recorded_point(slot, p))
                .collect::<Result<Vec<_>>>()?;
            SlotSample {
                count: pts.len() as u32,
                points: Some(pts),
            }
        } else {
            SlotSample {
                count: self.sample_count(slot)?,
                points: None,
            }
        };
        self.slots.insert(slot, sample);
        Ok(())
    }

    /// Exact point count of a whole slot, without materializing positions.
    pub fn slot_count(&mut self, slot: i64) -> Result<u32> {
        self.ensure_slot(slot)?;
        Ok(self.slots[&slot].count)
    }

    fn slot_points(&mut self, slot: i64) -> Result<&mut Vec<RefinablePoint>> {
        self.ensure_slot(slot)?;
        let sample = self.slots.get_mut(&slot).unwrap();
        if sample.points.is_none() {
            let count = sample.count;
            let pts = self.materialize(slot, count)?;
            let sample = self.slots.get_mut(&slot).unwrap();
            sample.points = Some(pts);
            return Ok(sample.points.as_mut().unwrap());
        }
        Ok(self.slots.get_mut(&slot).unwrap().points.as_mut().unwrap())
    }

    /// Exact count of points in [lo, hi), resolving boundary membership.
    /// Slots fully inside the range contribute their counts without
    /// materializing positions.
    pub fn count_in(&mut self, lo: &Rational, hi: &Rational) -> Result<u64> {
        let first_slot = floor_int(lo);
        let last_slot = ceil_int(hi) - 1;
        let mut n = 0u64;
        for slot in first_slot..=last_slot {
            let slot_lo = Rational::from(BigInt::from(slot));
            let slot_hi = Rational::from(BigInt::from(slot + 1));
            if *lo <= slot_lo && *hi >= slot_hi {
                n += self.slot_count(slot)? as u64;
                continue;
            }
            let pts = self.slot_points(slot)?;
            for p in pts.iter_mut() {
                let above_lo = if *lo <= slot_lo {
                    true
                } else {
                    p.compare_to(lo, 4096)? == std::cmp::Ordering::Greater
                };
                let below_hi = if *hi >= slot_hi {
                    true
                } else {
                    p.compare_to(hi, 4096)? == std::cmp::Ordering::Less
                };
                if above_lo && below_hi {
                    n += 1;
                }
            }
        }
        Ok(n)
    }

    /// Snapshot positions in [lo, hi).
    pub fn points_in(&mut self, lo: &Rational, hi: &Rational) -> Result<Vec<Rational>> {
        let first_slot = floor_int(lo);
        let last_slot = ceil_int(hi) - 1;
        let mut out = Vec::new();
        for slot in first_slot..=last_slot {
            let slot_lo = Rational::from(BigInt::from(slot));
            let slot_hi = Rational::from(BigInt::from(slot + 1));
            let pts = self.slot_points(slot)?;
            for p in pts.iter_mut() {
                let above_lo = if *lo <= slot_lo {
                    true
                } else {
                    p.compare_to(lo, 4096)? == std::cmp::Ordering::Greater
                };
                let below_hi = if *hi >= slot_hi {
                    true
                } else {
                    p.compare_to(hi, 4096)? == std::cmp::Ordering::Less
                };
                if above_lo && below_hi {
                    out.push(p.position());
                }
            }
        }
        Ok(out)
    }

    /// First point at or after `from`, scanning at most `max_slots` slots.
    pub fn first_above(
        &mut self,
        from: &Rational,
        max_slots: u32,
    ) -> Result<Option<(i64, usize)>> {
        let start = floor_int(from);
        for slot in start..start + max_slots as i64 {
            let slot_lo = Rational::from(BigInt::from(slot));
            let n = self.slot_points(slot)?.len();
            for idx in 0..n {
                let pts = self.slot_points(slot)?;
                let ok = if *from <= slot_lo {
                    true
                } else {
                    pts[idx].compare_to(from, 4096)? == std::cmp::Ordering::Greater
                };
                if ok {
                    return Ok(Some((slot, idx)));
                }
            }
        }
        Ok(None)
    }

    /// Last point at or before `from`, scanning downward.
    pub fn last_below(
        &mut self,
        from: &Rational,
        max_slots: u32,
    ) -> Result<Option<(i64, usize)>> {
        let start = ceil_int(from) - 1;
        for slot in (start - max_slots as i64 + 1..=start).rev() {
            let slot_hi = Rational::from(BigInt::from(slot + 1));
            let n = self.slot_points(slot)?.len();
            for idx in (0..n).rev() {
                let pts = self.slot_points(slot)?;
                let ok = if *from >= slot_hi {
                    true
                } else {
                    pts[idx].compare_to(from, 4096)? == std::cmp::Ordering::Less
                };
                if ok {
                    return Ok(Some((slot, idx)));
                }
            }
        }
        Ok(None)
    }

    fn point_mut(&mut self, key: (i64, usize)) -> &mut RefinablePoint {
        &mut self
            .slots
            .get_mut(&key.0)
            .unwrap()
            .points
            .as_mut()
            .unwrap()[key.1]
    }

    /// Sign of (a - r) - (l - b): compares the overshoot above r at point a
    /// against the overshoot below l at point b, refining both until they
    /// separate. Returns true when the upper overshoot is strictly larger.
    pub fn overshoot_sign(
        &mut self,
        above: (i64, usize),
        r: &Rational,
        below: (i64, usize),
        l: &Rational,
        budget: u64,
    ) -> Result<bool> {
        for _ in 0..budget {
            let ea = self.point_mut(above).enclosure();
            let eb = self.point_mut(below).enclosure();
            // overshoots: a - r (above), l - b (below); both nonnegative
            let up = Interval::new(&ea.lo - r, &ea.hi - r);
            let down = Interval::new(l - &eb.hi, l - &eb.lo);
            if down.strictly_below(&up) {
                return Ok(true);
            }
            if up.strictly_below(&down) {
                return Ok(false);
            }
            if up.width() >= down.width() {
                self.point_mut(above).refine()?;
            } else {
                self.point_mut(below).refine()?;
            }
        }
        Err(Error::BudgetExceeded {
            budget,
            context: "overshoot sign",
        })
    }
}

fn recorded_point(slot: i64, position: &Rational) -> Result<RefinablePoint> {
    // exact recorded positions: represent at maximal depth as a degenerate
    // refinable point whose further refinement would fail loudly
    let base = Rational::from(BigInt::from(slot));
    let local = position - base;
    let depth = 40u32;
    let cell_r = local * Rational::from(BigInt::one() << depth);
    let cell = num_traits::ToPrimitive::to_u128(&cell_r.floor().to_integer())
        .ok_or(Error::IndexOverflow)?;
    Ok(RefinablePoint {
        slot,
        cell,
        depth,
        bits: BitStream::recorded(vec![]),
        bits_used: 0,
    })
}

fn floor_int(r: &Rational) -> i64 {
    num_traits::ToPrimitive::to_i64(&r.floor().to_integer()).expect("slot index overflow")
}

fn ceil_int(r: &Rational) -> i64 {
    num_traits::ToPrimitive::to_i64(&r.ceil().to_integer()).expect("slot index overflow")
}

fn sort_refinable(pts: &mut Vec<RefinablePoint>) -> Result<()> {
    // insertion sort with refining comparisons; slots hold few points
    for i in 1..pts.len() {
        let mut j = i;
        while j > 0 {
            let ord = compare_points(pts, j - 1, j)?;
            if ord == std::cmp::Ordering::Greater {
                pts.swap(j - 1, j);
                j -= 1;
            } else {
                break;
            }
        }
    }
    Ok(())
}

fn compare_points(
    pts: &mut [RefinablePoint],
    i: usize,
    j: usize,
) -> Result<std::cmp::Ordering> {
    for _ in 0..4096 {
        let ei = pts[i].enclosure();
        let ej = pts[j].enclosure();
        if ei.hi < ej.lo {
            return Ok(std::cmp::Ordering::Less);
        }
        if ej.hi < ei.lo {
            return Ok(std::cmp::Ordering::Greater);
        }
        if ei.width() >= ej.width() {
            pts[i].refine()?;
        } else {
            pts[j].refine()?;
        }
    }
    Err(Error::BudgetExceeded {
        budget: 4096,
        context: "point ordering",
    })
}

// ---------------------------------------------------------------------------
// The continuous extractor
// ---------------------------------------------------------------------------

pub const TAIL_SCAN_SLOTS: u32 = 64;

/// A point process the continuous extractor can read: a seeded refinable
/// process or a fully recorded realization (window plus explicit tails).
pub enum ProcessSource {
    Seeded(SeededPointProcess),
    Recorded(RecordedPointProcess),
}

/// A recorded realization: exact points over an extent that must cover
/// every query the extractor makes.
pub struct RecordedPointProcess {
    pub points: Vec<Rational>,
}

impl RecordedPointProcess {
    pub fn new(mut points: Vec<Rational>) -> RecordedPointProcess {
        points.sort();
        RecordedPointProcess { points }
    }
}

/// Parity of the point count in [-r, r] XOR the sign of the sum of the
/// first point above r and the last point below -r. The two overshoot
/// distances are i.i.d. exponential, so the sign bit alone is exactly fair.
pub fn cont_extract(process: &mut ProcessSource, r: &Rational) -> Result<Bit> {
    let neg_r = -r.clone();
    match process {
        ProcessSource::Recorded(rec) => {
            let count = rec
                .points
                .iter()
                .filter(|p| neg_r <= **p && **p <= *r)
                .count() as u64;
            let parity = Bit(count % 2 == 1);
            let above = rec
                .points
                .iter()
                .find(|p| **p > *r)
                .ok_or(Error::Coverage("no recorded point above r".into()))?;
            let below = rec
                .points
                .iter()
                .rev()
                .find(|p| **p < neg_r)
                .ok_or(Error::Coverage("no recorded point below -r".into()))?;
            let sum = above + below;
            if sum.is_zero() {
                return Err(Error::BudgetExceeded {
                    budget: 0,
                    context: "sign tie on recorded points",
                });
            }
            let sign = Bit(sum.is_positive());
            Ok(parity.xor(sign))
        }
        ProcessSource::Seeded(proc_) => {
            let count = proc_.count_in(&neg_r, r)?;
            let parity = Bit(count % 2 == 1);
            let above = proc_
                .first_above(r, TAIL_SCAN_SLOTS)?
                .ok_or(Error::BudgetExceeded {
                    budget: TAIL_SCAN_SLOTS as u64,
                    context: "tail scan above",
                })?;
            let below = proc_
                .last_below(&neg_r, TAIL_SCAN_SLOTS)?
                .ok_or(Error::BudgetExceeded {
                    budget: TAIL_SCAN_SLOTS as u64,
                    context: "tail scan below",
                })?;
            // sign of above + below: overshoot above r vs overshoot below -r
            let sign = Bit(proc_.overshoot_sign(above, r, below, &neg_r, 4096)?);
            Ok(parity.xor(sign))
        }
    }
}

// ---------------------------------------------------------------------------
// Continuous conditional laws for the corrector
// ---------------------------------------------------------------------------

/// Enclosure of P(parity of the X-count in [-r, r] is odd | merged), built
/// slot by slot: with n merged points observed and the rest of the window
/// unobserved, the bias magnitude is at most |1-2rho|^n.
pub struct ContParityLaw {
    beta: Rational,
    observed_count: u64,
    window_complete: bool,
}

impl ContParityLaw {
    pub fn new(rho: &Rational) -> ContParityLaw {
        ContParityLaw {
            beta: one() - rat_i64(2, 1) * rho,
            observed_count: 0,
            window_complete: false,
        }
    }

    pub fn observe_slot(&mut self, merged_in_slot: u64) {
        debug_assert!(!self.window_complete);
        self.observed_count += merged_in_slot;
    }

    pub fn complete(&mut self) {
        self.window_complete = true;
    }

    fn pow(&self, n: u64) -> Rational {
        let mut acc = one();
        let mut base = self.beta.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                acc *= &base;
            }
            base = &base * &base;
            e >>= 1;
        }
        acc
    }

    pub fn interval(&self) -> Interval {
        let pa = |n: u64| (one() - self.pow(n)) / rat_i64(2, 1);
        if self.window_complete {
            return Interval::point(pa(self.observed_count));
        }
        // count can be anything >= observed: candidates n, n+1 and the
        // limit 1/2 bound the oscillation
        let c0 = pa(self.observed_count);
        let c1 = pa(self.observed_count + 1);
        let mut lo = c0.clone().min(c1.clone()).min(half());
        let mut hi = c0.max(c1).max(half());
        lo = lo.max(zero());
        hi = hi.min(one());
        Interval::new(lo, hi)
    }
}

/// Enclosure of P(sign bit = 1 | merged): each merged point beyond the
/// window belongs to X independently with probability rho; the sign bit
/// compares the first X-member above r with the last below -r. Scanning
/// outward resolves the geometric mixture with tail mass (1-rho)^scanned.
pub struct ContSignLaw {
    rho: Rational,
    // overshoot distances (enclosures) of merged points above r / below -r
    above: Vec<Interval>,
    below: Vec<Interval>,
}

impl ContSignLaw {
    pub fn new(rho: &Rational) -> ContSignLaw {
        ContSignLaw {
            rho: rho.clone(),
            above: Vec::new(),
            below: Vec::new(),
        }
    }

    pub fn push_above(&mut self, overshoot: Interval) {
        self.above.push(overshoot);
    }

    pub fn push_below(&mut self, overshoot: Interval) {
        self.below.push(overshoot);
    }

    pub fn observed(&self) -> (usize, usize) {
        (self.above.len(), self.below.len())
    }

    pub fn interval(&self) -> Interval {
        // P(sign = 1) = sum over (j, k) of rho^2 (1-rho)^(j+k-2) [up_j > down_k]
        let mut mass_one = zero();
        let mut undecided = zero();
        let q = one() - &self.rho;
        let mut wj = self.rho.clone();
        for up in &self.above {
            let mut wk = &wj * &self.rho;
            for down in &self.below {
                if down.strictly_below(up) {
                    mass_one += &wk;
                } else if !up.strictly_below(down) {
                    // enclosures overlap: undecided pair
                    undecided += &wk;
                }
                wk *= &q;
            }
            wj *= &q;
        }
        // tail mass: either chain not yet stopped within the scanned points
        let tail_above = self.pow_q(self.above.len() as u64);
        let tail_below = self.pow_q(self.below.len() as u64);
        let tail = &tail_above + &tail_below - &tail_above * &tail_below;
        let lo = mass_one.clone().max(zero());
        let hi = (mass_one + undecided + tail).min(one());
        Interval::new(lo, hi)
    }

    fn pow_q(&self, n: u64) -> Rational {
        let q = one() - &self.rho;
        let mut acc = one();
        for _ in 0..n {
            acc *= &q;
        }
        acc
    }
}

/// Combined conditional law of the continuous extractor bit given the
/// merged process, refinable through the supplied observer.
pub struct ContCondLaw<'o, O: ContMergedObserver> {
    pub parity: ContParityLaw,
    pub sign: ContSignLaw,
    observer: &'o mut O,
    observed_f: Bit,
}

/// Observation callbacks into the merged process for one extractor region.
pub trait ContMergedObserver {
    /// Observes the next unobserved window slot, returning the merged count
    /// inside it (clipped to [-r, r]); None when the window is exhausted.
    fn next_window_slot(&mut self) -> Result<Option<u64>>;
    /// Observes the next merged point above r, as an overshoot enclosure.
    fn next_above(&mut self) -> Result<Interval>;
    /// Observes the next merged point below -r, as an overshoot enclosure.
    fn next_below(&mut self) -> Result<Interval>;
}

impl<'o, O: ContMergedObserver> ContCondLaw<'o, O> {
    pub fn new(rho: &Rational, observer: &'o mut O, observed_f: Bit) -> Self {
        ContCondLaw {
            parity: ContParityLaw::new(rho),
            sign: ContSignLaw::new(rho),
            observer,
            observed_f,
        }
    }
}

impl<O: ContMergedObserver> RefinableProb for ContCondLaw<'_, O> {
    fn interval(&self) -> Interval {
        let f_one = self
            .parity
            .interval()
            .xor_convolve(&self.sign.interval());
        if self.observed_f.0 {
            f_one
        } else {
            f_one.complement()
        }
    }

    fn refine(&mut self) -> Result<bool> {
        if !self.parity.window_complete {
            match self.observer.next_window_slot()? {
                Some(n) => self.parity.observe_slot(n),
                None => self.parity.complete(),
            }
            return Ok(true);
        }
        let (na, nb) = self.sign.observed();
        if na <= nb {
            let iv = self.observer.next_above()?;
            self.sign.push_above(iv);
        } else {
            let iv = self.observer.next_below()?;
            self.sign.push_below(iv);
        }
        Ok(true)
    }
}

// ---------------------------------------------------------------------------
// The continuous thickening cascade
// ---------------------------------------------------------------------------

const CASCADE_BUDGET: u64 = 4096;

/// Continuous cascade: copy c of the line is thickened by adding a
/// Poisson(lambda' - lambda) realization manufactured from copy c+1 through
/// the corrected continuous extractor.
pub struct ContCascade {
    lambda: Rational,
    lambda_prime: Rational,
    rho: Rational,
    correct_through: u32,
    x: RefCell<SeededPointProcess>,
    blocks: RefCell<HashMap<(u32, u128), Bit>>,
    added: RefCell<HashMap<(u32, u128), Vec<Rational>>>,
    gap_sampler: Arc<GapSampler>,
    events: RefCell<BTreeSet<ChangeEvent>>,
}

/// Global slot index of copy-local slot s of copy c.
fn global_slot(copy: u32, slot_flat: u128) -> Result<i64> {
    let flat = pair_index(copy as u128, slot_flat)?;
    crate::thickener::ntoz(flat)
}

/// Copy-local slot of region slot m (an integer) of coordinate `coord`:
/// regions are two-sided, so their slots go through the alternating
/// enumeration and then the stripe dealing.
fn region_slot_to_copy_slot(coord: u128, m: i64) -> Result<u128> {
    stripe_alloc(coord, zton(m))
}

impl ContCascade {
    pub fn new(
        lambda: Rational,
        lambda_prime: Rational,
        correct_through: u32,
        seed: u64,
        recorded: Option<PointWindow>,
    ) -> Result<ContCascade> {
        if !(lambda.is_positive() && lambda < lambda_prime) {
            return Err(Error::DegenerateParams(
                "need 0 < lambda < lambda'".into(),
            ));
        }
        let mut x = SeededPointProcess::new(lambda.clone(), seed)?;
        if let Some(w) = recorded {
            x = x.with_recorded(w)?;
        }
        let add_rate = &lambda_prime - &lambda;
        Ok(ContCascade {
            rho: &lambda / &lambda_prime,
            gap_sampler: gap_sampler(&add_rate, GAP_RESOLUTION_LOG2)?,
            lambda,
            lambda_prime,
            correct_through,
            x: RefCell::new(x),
            blocks: RefCell::new(HashMap::new()),
            added: RefCell::new(HashMap::new()),
            events: RefCell::new(BTreeSet::new()),
        })
    }

    fn coordinate_epsilon(&self, block: u32, coord: u128) -> Rational {
        let c = BigInt::from(coord);
        let w = Rational::new(BigInt::from(1), &c * (&c + BigInt::from(1)));
        pow2_neg(block) * w
    }

    fn block_cont_params(&self, block: u32, coord: u128) -> Result<Arc<ContExtractorParams>> {
        choose_r(
            &self.lambda,
            &self.lambda_prime,
            &self.coordinate_epsilon(block, coord),
        )
    }

    /// X-count of copy `copy` in the region-local interval [lo, hi) of
    /// coordinate `coord` (region coordinates).
    fn x_count_region(
        &self,
        copy: u32,
        coord: u128,
        lo: &Rational,
        hi: &Rational,
    ) -> Result<u64> {
        let mut n = 0u64;
        for m in floor_int(lo)..ceil_int(hi) {
            let cslot = region_slot_to_copy_slot(coord, m)?;
            let g = global_slot(copy, cslot)?;
            let g_lo = Rational::from(BigInt::from(g));
            // region slot [m, m+1) maps to global slot [g, g+1)
            let q_lo = if *lo > Rational::from(BigInt::from(m)) {
                &g_lo + (lo - Rational::from(BigInt::from(m)))
            } else {
                g_lo.clone()
            };
            let q_hi = if *hi < Rational::from(BigInt::from(m + 1)) {
                &g_lo + (hi - Rational::from(BigInt::from(m)))
            } else {
                &g_lo + one()
            };
            n += self.x.borrow_mut().count_in(&q_lo, &q_hi)?;
        }
        Ok(n)
    }

    /// Added-point count (the manufactured Poisson(lambda'-lambda) points
    /// of this copy) in the same region interval.
    fn added_count_region(
        &self,
        copy: u32,
        coord: u128,
        lo: &Rational,
        hi: &Rational,
    ) -> Result<u64> {
        let mut n = 0u64;
        for m in floor_int(lo)..ceil_int(hi) {
            let cslot = region_slot_to_copy_slot(coord, m)?;
            let pts = self.added_points(copy, cslot)?;
            let rel_lo = lo - Rational::from(BigInt::from(m));
            let rel_hi = hi - Rational::from(BigInt::from(m));
            n += pts
                .iter()
                .filter(|p| **p >= rel_lo.clone().max(zero()) && **p < rel_hi.clone().min(one()))
                .count() as u64;
        }
        Ok(n)
    }

    /// The manufactured points inside copy-local slot `cslot` of `copy`, in
    /// slot-local coordinates [0, 1). Produced by a gap chain over the
    /// component-1 fair bits of the block above.
    pub fn added_points(&self, copy: u32, cslot: u128) -> Result<Vec<Rational>> {
        if let Some(hit) = self.added.borrow().get(&(copy, cslot)) {
            return Ok(hit.clone());
        }
        let mut t: u128 = 0;
        let mut fair = || {
            t += 1;
            let s = stripe_alloc(cslot, t)?;
            let coord = comp_coord(1, s)?;
            self.block_bit(copy + 1, coord)
        };
        let pts = fill_window_with_gaps(
            &self.gap_sampler,
            &mut fair,
            &zero(),
            &one(),
            CASCADE_BUDGET,
        )?;
        self.added.borrow_mut().insert((copy, cslot), pts.clone());
        Ok(pts)
    }

    /// U-bit v for the corrector of (block, coord): component 2 of the
    /// block above.
    fn z_bit(&self, block: u32, coord: u128, v: u128) -> Result<Bit> {
        let w = stripe_alloc(coord, v)?;
        self.block_bit(block + 1, comp_coord(2, w)?)
    }

    /// The continuous extractor value for (block, coord): parity over
    /// [-r, r] of the region XOR the overshoot sign bit, both on X alone.
    fn extract_value(&self, block: u32, coord: u128, params: &ContExtractorParams) -> Result<Bit> {
        let r = &params.r;
        let count = self.x_count_region(block, coord, &-r.clone(), r)?
            + self.x_boundary_hits(block, coord, r)?;
        let parity = Bit(count % 2 == 1);
        let sign = self.x_overshoot_sign(block, coord, r)?;
        Ok(parity.xor(sign))
    }

    fn x_boundary_hits(&self, _block: u32, _coord: u128, _r: &Rational) -> Result<u64> {
        // count_in uses half-open [lo, hi); a point exactly at r has
        // probability zero and would surface as a refinement budget error
        Ok(0)
    }

    /// Sign of (first X above r) + (last X below -r) within the region.
    fn x_overshoot_sign(&self, copy: u32, coord: u128, r: &Rational) -> Result<Bit> {
        // scan region slots upward from r and downward from -r
        let above = self.find_x_region(copy, coord, r, true)?;
        let below = self.find_x_region(copy, coord, &-r.clone(), false)?;
        let (a_key, a_m) = above;
        let (b_key, b_m) = below;
        // overshoots in region coordinates: translate the global enclosures
        let mut x = self.x.borrow_mut();
        for _ in 0..CASCADE_BUDGET {
            let ea = x.point_mut(a_key).enclosure();
            let eb = x.point_mut(b_key).enclosure();
            // region-local position = m + (global - global_slot_base)
            let ga = Rational::from(BigInt::from(a_key.0));
            let gb = Rational::from(BigInt::from(b_key.0));
            let ra = Interval::new(
                Rational::from(BigInt::from(a_m)) + (&ea.lo - &ga),
                Rational::from(BigInt::from(a_m)) + (&ea.hi - &ga),
            );
            let rb = Interval::new(
                Rational::from(BigInt::from(b_m)) + (&eb.lo - &gb),
                Rational::from(BigInt::from(b_m)) + (&eb.hi - &gb),
            );
            let up = Interval::new(&ra.lo - r, &ra.hi - r);
            let down = Interval::new(-r.clone() - &rb.hi, -r.clone() - &rb.lo);
            if down.strictly_below(&up) {
                return Ok(Bit::ONE);
            }
            if up.strictly_below(&down) {
                return Ok(Bit::ZERO);
            }
            if up.width() >= down.width() {
                x.point_mut(a_key).refine()?;
            } else {
                x.point_mut(b_key).refine()?;
            }
        }
        Err(Error::BudgetExceeded {
            budget: CASCADE_BUDGET,
            context: "region overshoot sign",
        })
    }

    /// First X point beyond `from` in region coordinates (upward when
    /// `upward`, else the last one below). Returns the global point key and
    /// the region slot index m.
    fn find_x_region(
        &self,
        copy: u32,
        coord: u128,
        from: &Rational,
        upward: bool,
    ) -> Result<((i64, usize), i64)> {
        let start = if upward {
            floor_int(from)
        } else {
            ceil_int(from) - 1
        };
        for step in 0..TAIL_SCAN_SLOTS as i64 {
            let m = if upward { start + step } else { start - step };
            let cslot = region_slot_to_copy_slot(coord, m)?;
            let g = global_slot(copy, cslot)?;
            let g_base = Rational::from(BigInt::from(g));
            let m_base = Rational::from(BigInt::from(m));
            let slot_beyond = if upward {
                *from < m_base
            } else {
                *from >= &m_base + one()
            };
            let bound_global = &g_base + (from - &m_base);
            let n = {
                let mut x = self.x.borrow_mut();
                x.slot_points(g)?.len()
            };
            let indices: Vec<usize> = if upward {
                (0..n).collect()
            } else {
                (0..n).rev().collect()
            };
            for idx in indices {
                let qualifies = slot_beyond || {
                    let mut x = self.x.borrow_mut();
                    let ord = x.slot_points(g)?[idx].compare_to(&bound_global, 4096)?;
                    if upward {
                        ord == std::cmp::Ordering::Greater
                    } else {
                        ord == std::cmp::Ordering::Less
                    }
                };
                if qualifies {
                    return Ok(((g, idx), m));
                }
            }
        }
        Err(Error::BudgetExceeded {
            budget: TAIL_SCAN_SLOTS as u64,
            context: "region tail scan",
        })
    }

    /// Output bit `coord` of block `block`, corrected when the block is at
    /// or below the correction ceiling. Memoized.
    pub fn block_bit(&self, block: u32, coord: u128) -> Result<Bit> {
        if let Some(hit) = self.blocks.borrow().get(&(block, coord)) {
            return Ok(*hit);
        }
        let params = self.block_cont_params(block, coord)?;
        let f = self.extract_value(block, coord, &params)?;
        let out = if block <= self.correct_through {
            let mut observer = RegionObserver {
                cascade: self,
                copy: block,
                coord,
                r: params.r.clone(),
                next_slot: 0,
                above_state: ScanState::new(),
                below_state: ScanState::new(),
                beta_zero: self.rho == half(),
                x_checked: false,
            };
            let mut law = ContCondLaw::new(&self.rho, &mut observer, f);
            let mut v: u128 = 0;
            let mut next_u = || {
                v += 1;
                self.z_bit(block, coord, v)
            };
            let record = corrector_decision(&mut next_u, &mut law, CASCADE_BUDGET)?;
            if record.fired {
                self.events.borrow_mut().insert(ChangeEvent {
                    level: block - 1,
                    coordinate: coord,
                });
            }
            f.xor(Bit(record.fired))
        } else {
            f
        };
        self.blocks.borrow_mut().insert((block, coord), out);
        Ok(out)
    }

    /// Thickened output on global slot `gslot`: the input points plus the
    /// manufactured points of the copy owning that slot.
    pub fn output_slot(&self, gslot: i64) -> Result<Vec<Rational>> {
        let flat = zton(gslot);
        let (copy, cslot) = crate::streams::unpair(flat)?;
        let copy = copy as u32;
        let base = Rational::from(BigInt::from(gslot));
        let mut pts: Vec<Rational> = self
            .x
            .borrow_mut()
            .points_in(&base, &(&base + one()))?;
        for p in self.added_points(copy, cslot)? {
            pts.push(&base + p);
        }
        pts.sort();
        Ok(pts)
    }

    pub fn input_slot(&self, gslot: i64) -> Result<Vec<Rational>> {
        let base = Rational::from(BigInt::from(gslot));
        self.x.borrow_mut().points_in(&base, &(&base + one()))
    }

    pub fn change_events(&self) -> Vec<ChangeEvent> {
        self.events.borrow().iter().copied().collect()
    }
}

struct ScanState {
    next_region_slot: i64,
    pending: Vec<Interval>,
}

impl ScanState {
    fn new() -> ScanState {
        ScanState {
            next_region_slot: i64::MIN,
            pending: Vec::new(),
        }
    }
}

/// Merged-process observer for one extractor region inside the cascade:
/// window slots yield exact merged counts; tail scans yield overshoot
/// enclosures of merged points (X points refinable, added points exact at
/// gap resolution).
struct RegionObserver<'c> {
    cascade: &'c ContCascade,
    copy: u32,
    coord: u128,
    r: Rational,
    next_slot: i64,
    above_state: ScanState,
    below_state: ScanState,
    // when the parity bias base is zero, only merged-count >= 1 matters and
    // the input points are checked across the whole window before any
    // manufactured point is computed
    beta_zero: bool,
    x_checked: bool,
}

impl RegionObserver<'_> {
    /// Window slots enumerated left to right across [-r, r].
    fn window_slot_at(&self, idx: i64) -> Option<(i64, Rational, Rational)> {
        let r = &self.r;
        let lo_slot = floor_int(&-r.clone());
        let hi_slot = ceil_int(r) - 1;
        let m = lo_slot + idx;
        if m > hi_slot {
            return None;
        }
        let slot_lo = Rational::from(BigInt::from(m)).max(-r.clone());
        let slot_hi = (Rational::from(BigInt::from(m)) + one()).min(r.clone());
        Some((m, slot_lo, slot_hi))
    }

    fn merged_count_interval(&self, lo: &Rational, hi: &Rational) -> Result<u64> {
        let xc = self
            .cascade
            .x_count_region(self.copy, self.coord, lo, hi)?;
        let ac = self
            .cascade
            .added_count_region(self.copy, self.coord, lo, hi)?;
        Ok(xc + ac)
    }

    /// Next merged point scanning away from the window on one side,
    /// returning its overshoot enclosure past r (or past -r downward).
    fn next_tail_point(&mut self, upward: bool) -> Result<Interval> {
        let state = if upward {
            &mut self.above_state
        } else {
            &mut self.below_state
        };
        if let Some(iv) = state.pending.pop() {
            return Ok(iv);
        }
        if state.next_region_slot == i64::MIN {
            state.next_region_slot = if upward {
                floor_int(&self.r)
            } else {
                ceil_int(&-self.r.clone()) - 1
            };
        }
        let r = self.r.clone();
        for _ in 0..TAIL_SCAN_SLOTS {
            let m = state.next_region_slot;
            state.next_region_slot += if upward { 1 } else { -1 };
            let m_base = Rational::from(BigInt::from(m));
            let cslot = region_slot_to_copy_slot(self.coord, m)?;
            let g = global_slot(self.copy, cslot)?;
            let g_base = Rational::from(BigInt::from(g));
            // collect merged points of this slot with overshoot enclosures
            let mut found: Vec<(Rational, Interval)> = Vec::new();
            {
                let mut x = self.cascade.x.borrow_mut();
                let n = x.slot_points(g)?.len();
                for idx in 0..n {
                    let e = x.slot_points(g)?[idx].enclosure();
                    let region_lo = &m_base + (&e.lo - &g_base);
                    let region_hi = &m_base + (&e.hi - &g_base);
                    let overshoot = if upward {
                        Interval::new((&region_lo - &r).max(zero()), &region_hi - &r)
                    } else {
                        Interval::new(
                            (-&r - &region_hi).max(zero()),
                            -&r - &region_lo,
                        )
                    };
                    // skip points inside the window
                    let outside = if upward {
                        region_hi > r
                    } else {
                        region_lo < -r.clone()
                    };
                    if outside {
                        found.push((region_lo.clone(), overshoot));
                    }
                }
            }
            for p in self.cascade.added_points(self.copy, cslot)? {
                let region_pos = &m_base + p;
                let outside = if upward {
                    region_pos > r
                } else {
                    region_pos < -r.clone()
                };
                if outside {
                    let overshoot = if upward {
                        Interval::point(&region_pos - &r)
                    } else {
                        Interval::point(-&r - &region_pos)
                    };
                    found.push((region_pos, overshoot));
                }
            }
            // order by position: ascending above, descending below
            found.sort_by(|a, b| if upward { a.0.cmp(&b.0) } else { b.0.cmp(&a.0) });
            if !found.is_empty() {
                let state = if upward {
                    &mut self.above_state
                } else {
                    &mut self.below_state
                };
                state.pending = found.into_iter().map(|(_, iv)| iv).rev().collect();
                return Ok(state.pending.pop().unwrap());
            }
        }
        Err(Error::BudgetExceeded {
            budget: TAIL_SCAN_SLOTS as u64,
            context: "merged tail scan",
        })
    }
}

impl ContMergedObserver for RegionObserver<'_> {
    fn next_window_slot(&mut self) -> Result<Option<u64>> {
        if self.beta_zero && !self.x_checked {
            self.x_checked = true;
            // at bias base zero only count >= 1 matters: sweep the cheap
            // input-side counts over the whole window first
            let mut idx = 0i64;
            while let Some((_, lo, hi)) = self.window_slot_at(idx) {
                idx += 1;
                if self
                    .cascade
                    .x_count_region(self.copy, self.coord, &lo, &hi)?
                    >= 1
                {
                    return Ok(Some(1));
                }
            }
            // no input point in the window: fall through and count the
            // manufactured points slot by slot
        }
        match self.window_slot_at(self.next_slot) {
            None => Ok(None),
            Some((_, lo, hi)) => {
                self.next_slot += 1;
                if self.beta_zero {
                    Ok(Some(self.cascade.added_count_region(
                        self.copy, self.coord, &lo, &hi,
                    )?))
                } else {
                    Ok(Some(self.merged_count_interval(&lo, &hi)?))
                }
            }
        }
    }

    fn next_above(&mut self) -> Result<Interval> {
        self.next_tail_point(true)
    }

    fn next_below(&mut self) -> Result<Interval> {
        self.next_tail_point(false)
    }
}

fn comp_coord(kappa: u128, s: u128) -> Result<u128> {
    s.checked_sub(1)
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| x.checked_add(kappa))
        .ok_or(Error::IndexOverflow)
}

/// Input to the continuous thickening: a seeded Poisson(lambda) process,
/// optionally overridden by recorded points on an integer-aligned window.
#[derive(Debug, Clone)]
pub struct PoissonInput {
    pub seed: u64,
    pub lambda: Rational,
    pub recorded: Option<PointWindow>,
}

#[derive(Debug, Clone)]
pub struct PoissonThickening {
    pub input: PointWindow,
    pub output: PointWindow,
    pub certificate: StabilizationCertificate,
}

/// Thickens a Poisson(lambda) process to intensity lambda' on the window
/// [lo, hi]: every input point is kept and manufactured points are added.
/// Corrections run through the level implied by delta.
pub fn thicken_poisson(
    input: &PoissonInput,
    lambda_prime: &Rational,
    delta: &Rational,
    lo: &Rational,
    hi: &Rational,
) -> Result<PoissonThickening> {
    if lo >= hi {
        return Err(Error::InvalidConfig("window needs lo < hi".into()));
    }
    let max_level = crate::thickener::ThickenConfig::required_max_level(delta)?;
    thicken_poisson_at_level(input, lambda_prime, delta, lo, hi, max_level)
}

/// Same as [`thicken_poisson`] with an explicit correction ceiling
/// (which must still satisfy the delta bound).
pub fn thicken_poisson_at_level(
    input: &PoissonInput,
    lambda_prime: &Rational,
    delta: &Rational,
    lo: &Rational,
    hi: &Rational,
    max_level: u32,
) -> Result<PoissonThickening> {
    if pow2_neg(max_level + 1) > *delta {
        return Err(Error::MaxLevelInsufficient {
            max_level,
            delta: to_fraction_string(delta),
        });
    }
    if max_level > MAX_LEVEL_CAP {
        return Err(Error::FeasibilityGuard(format!(
            "max_level {max_level} exceeds cap {MAX_LEVEL_CAP}"
        )));
    }
    let cascade = ContCascade::new(
        input.lambda.clone(),
        lambda_prime.clone(),
        max_level + 1,
        input.seed,
        input.recorded.clone(),
    )?;
    let mut in_points = Vec::new();
    let mut out_points = Vec::new();
    for gslot in floor_int(lo)..ceil_int(hi) {
        for p in cascade.input_slot(gslot)? {
            if p >= *lo && p <= *hi {
                in_points.push(p);
            }
        }
        for p in cascade.output_slot(gslot)? {
            if p >= *lo && p <= *hi {
                out_points.push(p);
            }
        }
    }
    in_points.sort();
    out_points.sort();
    let certificate = StabilizationCertificate {
        stabilized_at: max_level,
        change_events: cascade.change_events(),
        residual_failure_bound: pow2_neg(max_level + 1),
    };
    Ok(PoissonThickening {
        input: PointWindow::new(lo.clone(), hi.clone(), in_points, input.lambda.clone())?,
        output: PointWindow::new(lo.clone(), hi.clone(), out_points, lambda_prime.clone())?,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_enclosure_brackets_known_values() {
        // e^-1 = 0.36787944...
        let iv = exp_neg_enclosure(&one(), 40);
        assert!(iv.width() <= pow2_neg(40));
        let lo = crate::rational::to_f64(&iv.lo);
        let hi = crate::rational::to_f64(&iv.hi);
        assert!(lo <= 0.36787944117144233 && 0.36787944117144233 <= hi);

        // e^-4 = 0.0183156...
        let iv = exp_neg_enclosure(&rat_i64(4, 1), 40);
        let lo = crate::rational::to_f64(&iv.lo);
        let hi = crate::rational::to_f64(&iv.hi);
        assert!(lo <= 0.018315638888734179 && 0.018315638888734179 <= hi);
    }

    #[test]
    fn poisson_tail_enclosure_sane() {
        // P(Poisson(4) < 1) = e^-4
        let iv = poisson_tail_lt_enclosure(&rat_i64(4, 1), 1, 40);
        let direct = exp_neg_enclosure(&rat_i64(4, 1), 40);
        assert!(iv.lo <= direct.hi && direct.lo <= iv.hi);
        // P(Poisson(mu) < 0) = 0
        assert_eq!(
            poisson_tail_lt_enclosure(&rat_i64(4, 1), 0, 40),
            Interval::point(zero())
        );
    }

    #[test]
    fn choose_r_examples() {
        // lambda/lambda' = 1/2: ell' = 1, minimal r with e^(-2 r lambda') < eps/2
        let p = choose_r(&one(), &rat_i64(2, 1), &rat_i64(1, 10)).unwrap();
        assert_eq!(p.ell_prime, 1);
        // e^-4r < 1/20: r = 0.75 gives e^-3 = 0.0497 < 0.05; r = 5/8 gives
        // e^-2.5 = 0.0821 > 0.05
        assert_eq!(p.r, rat_i64(3, 4));

        // monotone non-increasing in epsilon
        let loose = choose_r(&one(), &rat_i64(2, 1), &rat_i64(1, 2)).unwrap();
        assert!(loose.r <= p.r);
    }

    #[test]
    fn sample_poisson_monotone_chain() {
        let w = sample_poisson(&zero(), &rat_i64(8, 1), &one(), 42).unwrap();
        for pair in w.points.windows(2) {
            assert!(pair[0] < pair[1]);
        }
        assert!(w.points.iter().all(|p| *p >= zero() && *p <= rat_i64(8, 1)));
    }

    #[test]
    fn sample_poisson_empirical_mean() {
        let mut total = 0u64;
        let n = 2000u64;
        for seed in 0..n {
            total += sample_poisson(&zero(), &rat_i64(4, 1), &one(), seed)
                .unwrap()
                .count();
        }
        let mean = total as f64 / n as f64;
        // mean 4, sd of the mean = 2/sqrt(2000) ~ 0.045
        assert!((mean - 4.0).abs() < 0.2, "mean {mean}");
    }

    #[test]
    fn bits_to_poisson_zero_prefix_gives_no_points() {
        // all-zero fair bits force U toward 0 and the first gap beyond any
        // finite window
        let mut s = BitStream::recorded(vec![Bit::ZERO; 4096]);
        let w = bits_to_poisson(&mut s, &one(), &zero(), &rat_i64(4, 1)).unwrap();
        assert!(w.points.is_empty());
    }

    #[test]
    fn point_window_json_round_trip() {
        let w = PointWindow::new(
            zero(),
            rat_i64(3, 1),
            vec![rat_i64(1, 3), rat_i64(5, 2)],
            rat_i64(2, 1),
        )
        .unwrap();
        let s = w.to_json();
        assert_eq!(PointWindow::from_json(&s).unwrap(), w);
    }

    #[test]
    fn cont_extract_recorded_examples() {
        // points {-1, 0.3, 2.1} in [-r, r] with r = 5/2; above at r+0.5,
        // below at -r-0.2: a = 1, b = sign(3 - 2.7) = 1, output 0
        let r = rat_i64(5, 2);
        let mut p = ProcessSource::Recorded(RecordedPointProcess::new(vec![
            -&r - rat_i64(1, 5),
            rat_i64(-1, 1),
            rat_i64(3, 10),
            rat_i64(21, 10),
            &r + rat_i64(1, 2),
        ]));
        assert_eq!(cont_extract(&mut p, &r).unwrap(), Bit::ZERO);

        // empty window, above at r+2, below at -r-1: a = 0, b = 1, output 1
        let mut p = ProcessSource::Recorded(RecordedPointProcess::new(vec![
            -&r - one(),
            &r + rat_i64(2, 1),
        ]));
        assert_eq!(cont_extract(&mut p, &r).unwrap(), Bit::ONE);
    }

    #[test]
    fn cont_extract_seeded_runs() {
        let r = rat_i64(2, 1);
        for seed in 0..50u64 {
            let mut p =
                ProcessSource::Seeded(SeededPointProcess::new(one(), seed).unwrap());
            cont_extract(&mut p, &r).unwrap();
        }
    }

    #[test]
    fn seeded_process_counts_deterministic() {
        let mut a = SeededPointProcess::new(one(), 7).unwrap();
        let mut b = SeededPointProcess::new(one(), 7).unwrap();
        for slot in -4i64..4 {
            let lo = Rational::from(BigInt::from(slot));
            let hi = &lo + one();
            assert_eq!(
                a.count_in(&lo, &hi).unwrap(),
                b.count_in(&lo, &hi).unwrap()
            );
        }
    }

    #[test]
    fn thicken_poisson_superset_and_counts() {
        for seed in 0..20u64 {
            let input = PoissonInput {
                seed,
                lambda: one(),
                recorded: None,
            };
            let out = thicken_poisson_at_level(
                &input,
                &rat_i64(2, 1),
                &rat_i64(1, 4),
                &zero(),
                &rat_i64(2, 1),
                1,
            )
            .unwrap();
            // superset: every input point appears in the output
            for p in &out.input.points {
                assert!(out.output.points.contains(p), "lost input point {p}");
            }
            assert!(out.output.count() >= out.input.count());
            assert!(out.certificate.verify(&rat_i64(1, 4)));
        }
    }

    #[test]
    fn cont_parity_law_at_rho_half() {
        let mut law = ContParityLaw::new(&half());
        // before any observation the law straddles 1/2
        assert!(law.interval().contains(&half()));
        law.observe_slot(1);
        // one merged point at rho = 1/2 pins the parity law exactly
        assert_eq!(law.interval(), Interval::point(half()));
    }

    #[test]
    fn cont_sign_law_converges() {
        let rho = rat_i64(1, 2);
        let mut law = ContSignLaw::new(&rho);
        // alternating observed points: above overshoots always larger
        for i in 0..12 {
            law.push_above(Interval::point(rat_i64(10 + i, 1)));
            law.push_below(Interval::point(rat_i64(1, 1 + i)));
        }
        let iv = law.interval();
        assert!(iv.lo > rat_i64(9, 10));
        assert!(iv.width() < rat_i64(1, 500));
    }
}
