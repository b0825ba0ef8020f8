//! The discrete thickening cascade. Level i of the grid is thickened by
//! max-ing it with a Bernoulli(q) sequence manufactured from level i+1:
//! each level's corrected extractor turns the next level up into exactly
//! fair bits that are exactly independent of that level's merged output,
//! and a density transform converts them to density q. The infinite
//! downward recursion is truncated at a configurable ceiling: levels above
//! it use the uncorrected extractor, and the probability that the emitted
//! values differ from the untruncated limit is bounded by the geometric
//! tail of the per-level corrector firing rates.
//!
//! Internal sub-stream dealing uses the stripe allocation and a mod-4
//! component split rather than the diagonal pairing: the diagonal's
//! quadratic growth compounds across levels and would overflow any fixed
//! index width, while stripes grow linearly in the row index.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_bigint::BigInt;

use crate::bits::{Bias, Bit, BitStream};
use crate::corrector::{corrector_decision, ObservedLaw};
use crate::error::{Error, Result};
use crate::extractor::{
    choose_params, density_q, eps_extract_from, ExtractorParams, MergedPair, MergedSource,
};
use crate::rational::{half, one, pow2_neg, zero, Rational};
use crate::streams::{density_bit, pair_index, stripe_alloc, unpair, GridStream};

/// Hard ceiling on the correction depth: index compositions stay inside
/// u128 with ample margin below it.
pub const MAX_LEVEL_CAP: u32 = 12;

const CASCADE_BUDGET: u64 = 4096;

/// One requested output cell of the thickened grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct GridCoord {
    pub level: u32,
    pub index: u64,
}

impl GridCoord {
    pub fn new(level: u32, index: u64) -> GridCoord {
        GridCoord { level, index }
    }

    /// The grid cell holding position t of the flattened sequence.
    pub fn from_flat(t: u128) -> Result<GridCoord> {
        let (i, j) = unpair(t)?;
        Ok(GridCoord {
            level: i as u32,
            index: j as u64,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ThickenConfig {
    pub p: Rational,
    pub p_prime: Rational,
    /// Acceptable probability that the emitted prefix differs from the
    /// almost-sure limit of the truncated sequences.
    pub delta: Rational,
    pub max_level: u32,
    pub coords: Vec<GridCoord>,
}

impl ThickenConfig {
    /// Per-level extractor tolerance: level i uses a 2^-(i+1)-tolerance
    /// corrected extractor (the block feeding level i is indexed i+1).
    pub fn level_epsilon(level: u32) -> Rational {
        pow2_neg(level + 1)
    }

    /// Minimal max_level whose residual tail is within delta.
    pub fn required_max_level(delta: &Rational) -> Result<u32> {
        if !(delta > &zero() && delta < &one()) {
            return Err(Error::InvalidConfig(format!("delta {delta} outside (0,1)")));
        }
        for m in 0..=MAX_LEVEL_CAP {
            if pow2_neg(m + 1) <= *delta {
                return Ok(m);
            }
        }
        Err(Error::MaxLevelInsufficient {
            max_level: MAX_LEVEL_CAP,
            delta: crate::rational::to_fraction_string(delta),
        })
    }

    pub fn validate(&self) -> Result<()> {
        density_q(&self.p, &self.p_prime)?;
        if self.max_level > MAX_LEVEL_CAP {
            return Err(Error::FeasibilityGuard(format!(
                "max_level {} exceeds cap {MAX_LEVEL_CAP}",
                self.max_level
            )));
        }
        if pow2_neg(self.max_level + 1) > self.delta {
            return Err(Error::MaxLevelInsufficient {
                max_level: self.max_level,
                delta: crate::rational::to_fraction_string(&self.delta),
            });
        }
        if self.coords.is_empty() {
            return Err(Error::InvalidConfig("no output coordinates requested".into()));
        }
        for c in &self.coords {
            if c.level == 0 || c.index == 0 {
                return Err(Error::InvalidConfig("grid coordinates are 1-based".into()));
            }
            if c.level > self.max_level {
                return Err(Error::InvalidConfig(format!(
                    "requested level {} above max_level {}",
                    c.level, self.max_level
                )));
            }
        }
        Ok(())
    }

    pub fn min_level(&self) -> u32 {
        self.coords.iter().map(|c| c.level).min().unwrap_or(1)
    }
}

/// A corrector firing observed at (level, extractor coordinate): the level's
/// output would differ between the truncation using the plain extractor
/// there and the truncation using the corrected one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChangeEvent {
    pub level: u32,
    pub coordinate: u128,
}

/// Evidence that the emitted values are the almost-sure limit up to the
/// residual bound: corrections were applied (and firings recorded) at every
/// level through `stabilized_at`, and the unverified tail above it has
/// total firing probability sum_{m > stabilized_at} 2^-(m+1).
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizationCertificate {
    pub stabilized_at: u32,
    pub change_events: Vec<ChangeEvent>,
    pub residual_failure_bound: Rational,
}

impl StabilizationCertificate {
    pub fn verify(&self, delta: &Rational) -> bool {
        self.residual_failure_bound == pow2_neg(self.stabilized_at + 1)
            && self.residual_failure_bound <= *delta
    }
}

/// Values at one requested cell: the input bit, the manufactured density-q
/// bit, the fair bit of the auxiliary stream, and the thickened output
/// max(x, y).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellValues {
    pub coord: GridCoord,
    pub x: Bit,
    pub y: Bit,
    pub z: Bit,
    pub f: Bit,
}

#[derive(Debug, Clone, Copy)]
struct BlockOutcome {
    bit: Bit,
}

enum BaseSource {
    Stream(BitStream),
    ZHybrid {
        recorded: BTreeMap<i64, Bit>,
        seed: u64,
        bias: Bias,
    },
}

impl BaseSource {
    fn bit(&mut self, pos: u128) -> Result<Bit> {
        match self {
            BaseSource::Stream(s) => s.bit_at(pos),
            BaseSource::ZHybrid { recorded, seed, bias } => {
                let z_index = ntoz(pos)?;
                if let Some(b) = recorded.get(&z_index) {
                    return Ok(*b);
                }
                let mut s = BitStream::seeded(*seed, *bias);
                s.bit_at(pos)
            }
        }
    }
}

/// Component split of a block's output coordinates: component kappa in 1..=4
/// owns coordinates kappa, kappa+4, kappa+8, ...
fn comp_coord(kappa: u128, s: u128) -> Result<u128> {
    s.checked_sub(1)
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| x.checked_add(kappa))
        .ok_or(Error::IndexOverflow)
}

/// The lazily evaluated, memoized cascade. `correct_through` is the highest
/// corrected block index: blocks 2..=correct_through apply the corrector,
/// everything above is the plain extractor (which depends on its own level
/// alone and so terminates the recursion).
struct Cascade {
    p: Rational,
    p_prime: Rational,
    q: Rational,
    q_is_half: bool,
    correct_through: u32,
    base: RefCell<BaseSource>,
    blocks: RefCell<HashMap<(u32, u128), BlockOutcome>>,
    events: RefCell<BTreeSet<ChangeEvent>>,
    consumed: RefCell<BTreeSet<(u32, u128)>>,
}

impl Cascade {
    fn new(
        p: Rational,
        p_prime: Rational,
        correct_through: u32,
        base: BaseSource,
    ) -> Result<Cascade> {
        let q = density_q(&p, &p_prime)?;
        let q_is_half = q == half();
        Ok(Cascade {
            p,
            p_prime,
            q,
            q_is_half,
            correct_through,
            base: RefCell::new(base),
            blocks: RefCell::new(HashMap::new()),
            events: RefCell::new(BTreeSet::new()),
            consumed: RefCell::new(BTreeSet::new()),
        })
    }

    /// Bit of the level stream X^level at stream position pos.
    fn x_bit(&self, level: u32, pos: u128) -> Result<Bit> {
        let base_pos = pair_index(level as u128, pos)?;
        self.base.borrow_mut().bit(base_pos)
    }

    /// Bit of the manufactured density-q stream Y^level at position pos,
    /// produced from component 1 of block level+1.
    fn y_bit(&self, level: u32, pos: u128) -> Result<Bit> {
        if self.q_is_half {
            // one-bit comparison against 1/2: output is the negation of the
            // first fair sub-stream bit
            let s = stripe_alloc(pos, 1)?;
            let b = self.block_bit(level + 1, comp_coord(1, s)?)?;
            return Ok(b.bit.not());
        }
        let mut t: u128 = 0;
        let mut next = || {
            t += 1;
            let s = stripe_alloc(pos, t)?;
            Ok(self.block_bit(level + 1, comp_coord(1, s)?)?.bit)
        };
        density_bit(&mut next, &self.q, CASCADE_BUDGET)
    }

    /// Bit of the auxiliary fair stream Z^level at position pos, taken from
    /// component 2 of block level+1.
    fn z_bit(&self, level: u32, pos: u128) -> Result<Bit> {
        Ok(self.block_bit(level + 1, comp_coord(2, pos)?)?.bit)
    }

    /// Extra fair bits: components 3 and 4 of the block feeding `level`,
    /// interleaved.
    fn extra_bit(&self, level: u32, w: u128) -> Result<Bit> {
        let coord = if w % 2 == 1 {
            comp_coord(3, w / 2 + 1)?
        } else {
            comp_coord(4, w / 2)?
        };
        Ok(self.block_bit(level + 1, coord)?.bit)
    }

    fn coordinate_epsilon(&self, block: u32, coord: u128) -> Rational {
        // block tolerance 2^-block split over coordinates as 1/(c(c+1)):
        // the weights sum to one, which is all the union bounds use
        let c = BigInt::from(coord);
        let w = Rational::new(BigInt::from(1), &c * (&c + BigInt::from(1)));
        pow2_neg(block) * w
    }

    fn block_params(&self, block: u32, coord: u128) -> Result<std::sync::Arc<ExtractorParams>> {
        choose_params(&self.p, &self.p_prime, &self.coordinate_epsilon(block, coord))
    }

    /// Output bit `coord` of block `block` (the corrected extractor block
    /// whose outputs feed level block-1). Memoized.
    fn block_bit(&self, block: u32, coord: u128) -> Result<BlockOutcome> {
        if let Some(hit) = self.blocks.borrow().get(&(block, coord)) {
            return Ok(*hit);
        }
        let params = self.block_params(block, coord)?;
        let f = eps_extract_from(
            &mut |u| {
                let pos = stripe_alloc(coord, u as u128)?;
                self.x_bit(block, pos)
            },
            &params,
        )?;
        let outcome = if block <= self.correct_through {
            let mut merged = CascadeMerged {
                cascade: self,
                block,
                coord,
                k: params.k,
            };
            let mut prob = ObservedLaw::new(&params, &mut merged, f.bit);
            let mut v: u128 = 0;
            let mut next_u = || {
                v += 1;
                let zpos = stripe_alloc(coord, v)?;
                self.z_bit(block, zpos)
            };
            let record = corrector_decision(&mut next_u, &mut prob, CASCADE_BUDGET)?;
            if record.fired {
                self.events.borrow_mut().insert(ChangeEvent {
                    level: block - 1,
                    coordinate: coord,
                });
            }
            BlockOutcome {
                bit: f.bit.xor(Bit(record.fired)),
            }
        } else {
            BlockOutcome { bit: f.bit }
        };
        self.consumed.borrow_mut().insert((block, coord));
        self.blocks.borrow_mut().insert((block, coord), outcome);
        Ok(outcome)
    }

    fn cell(&self, coord: GridCoord) -> Result<CellValues> {
        let x = self.x_bit(coord.level, coord.index as u128)?;
        let y = self.y_bit(coord.level, coord.index as u128)?;
        let z = self.z_bit(coord.level, coord.index as u128)?;
        Ok(CellValues {
            coord,
            x,
            y,
            z,
            f: Bit(x.0 | y.0),
        })
    }

    fn change_events(&self) -> Vec<ChangeEvent> {
        self.events.borrow().iter().copied().collect()
    }
}

struct CascadeMerged<'c> {
    cascade: &'c Cascade,
    block: u32,
    coord: u128,
    k: u32,
}

impl CascadeMerged<'_> {
    fn merged_at(&self, u: u128) -> Result<Bit> {
        let pos = stripe_alloc(self.coord, u)?;
        let x = self.cascade.x_bit(self.block, pos)?;
        if x.0 {
            return Ok(Bit::ONE);
        }
        let y = self.cascade.y_bit(self.block, pos)?;
        Ok(Bit(x.0 | y.0))
    }
}

impl MergedSource for CascadeMerged<'_> {
    fn window_bit(&mut self, u: u32) -> Result<Bit> {
        self.merged_at(u as u128)
    }

    fn scan_pair(&mut self, m: u64) -> Result<MergedPair> {
        let i = self.k as u128 + 2 * m as u128;
        Ok(MergedPair(self.merged_at(i)?, self.merged_at(i + 1)?))
    }
}

/// Result of a truncated thickening pass.
#[derive(Debug, Clone)]
pub struct TruncatedThickening {
    pub cells: Vec<CellValues>,
    pub change_events: Vec<ChangeEvent>,
}

/// Computes the truncation-at-n values on the requested coordinates:
/// levels below n use the corrected extractor, levels at or above n the
/// plain one. n = 1 is the fully uncorrected pipeline.
pub fn thicken_grid_truncated(
    grid: GridStream,
    n: u32,
    config: &ThickenConfig,
) -> Result<TruncatedThickening> {
    config.validate()?;
    if n > config.max_level + 1 {
        return Err(Error::InvalidConfig(format!(
            "truncation level {n} exceeds max_level {}",
            config.max_level
        )));
    }
    let cascade = Cascade::new(
        config.p.clone(),
        config.p_prime.clone(),
        n,
        BaseSource::Stream(grid.into_base()),
    )?;
    let cells = config
        .coords
        .iter()
        .map(|&c| cascade.cell(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(TruncatedThickening {
        cells,
        change_events: cascade.change_events(),
    })
}

/// Thickens the requested coordinates with corrections applied at every
/// level up to max_level, recording each observed corrector firing as a
/// change event. The emitted values differ from the almost-sure limit only
/// if some corrector above max_level would fire, which has probability at
/// most 2^-(max_level+1) <= delta.
pub fn stabilized_thicken(
    grid: GridStream,
    config: &ThickenConfig,
) -> Result<(Vec<CellValues>, StabilizationCertificate)> {
    config.validate()?;
    let cascade = Cascade::new(
        config.p.clone(),
        config.p_prime.clone(),
        config.max_level + 1,
        BaseSource::Stream(grid.into_base()),
    )?;
    let cells = config
        .coords
        .iter()
        .map(|&c| cascade.cell(c))
        .collect::<Result<Vec<_>>>()?;
    let certificate = StabilizationCertificate {
        stabilized_at: config.max_level,
        change_events: cascade.change_events(),
        residual_failure_bound: pow2_neg(config.max_level + 1),
    };
    Ok((cells, certificate))
}

/// Extra fair output bits, read from components 3 and 4 of the block
/// feeding the lowest requested level. They are exactly fair and exactly
/// independent of the thickened output, up to the same residual bound.
pub fn extra_bits(
    grid: GridStream,
    config: &ThickenConfig,
    count: u32,
) -> Result<(BitStream, StabilizationCertificate)> {
    config.validate()?;
    let cascade = Cascade::new(
        config.p.clone(),
        config.p_prime.clone(),
        config.max_level + 1,
        BaseSource::Stream(grid.into_base()),
    )?;
    let level = config.min_level();
    let mut bits = Vec::with_capacity(count as usize);
    for w in 1..=count as u128 {
        bits.push(cascade.extra_bit(level, w)?);
    }
    let certificate = StabilizationCertificate {
        stabilized_at: config.max_level,
        change_events: cascade.change_events(),
        residual_failure_bound: pow2_neg(config.max_level + 1),
    };
    Ok((BitStream::recorded(bits), certificate))
}

/// Combined pass returning both the thickened cells and extra bits from one
/// cascade evaluation (so the independence of the two can be tested on a
/// single realization).
pub fn thicken_with_extras(
    grid: GridStream,
    config: &ThickenConfig,
    extra_count: u32,
) -> Result<(Vec<CellValues>, Vec<Bit>, StabilizationCertificate)> {
    config.validate()?;
    let cascade = Cascade::new(
        config.p.clone(),
        config.p_prime.clone(),
        config.max_level + 1,
        BaseSource::Stream(grid.into_base()),
    )?;
    let cells = config
        .coords
        .iter()
        .map(|&c| cascade.cell(c))
        .collect::<Result<Vec<_>>>()?;
    let level = config.min_level();
    let mut extras = Vec::with_capacity(extra_count as usize);
    for w in 1..=extra_count as u128 {
        extras.push(cascade.extra_bit(level, w)?);
    }
    let certificate = StabilizationCertificate {
        stabilized_at: config.max_level,
        change_events: cascade.change_events(),
        residual_failure_bound: pow2_neg(config.max_level + 1),
    };
    Ok((cells, extras, certificate))
}

/// The alternating enumeration of the integers: 0, 1, -1, 2, -2, ... at
/// positions 1, 2, 3, 4, 5, ...
pub fn zton(m: i64) -> u128 {
    if m == 0 {
        1
    } else if m > 0 {
        2 * m as u128
    } else {
        2 * (-(m as i128)) as u128 + 1
    }
}

pub fn ntoz(t: u128) -> Result<i64> {
    if t == 0 {
        return Err(Error::InvalidConfig("sequence positions are 1-based".into()));
    }
    if t == 1 {
        return Ok(0);
    }
    let half_t = (t / 2) as i64;
    if t % 2 == 0 {
        Ok(half_t)
    } else {
        Ok(-half_t)
    }
}

/// Integer-indexed input: a finite recorded window plus a seeded Bernoulli
/// continuation for every position outside it.
#[derive(Debug, Clone)]
pub struct ZSequenceInput {
    pub recorded: BTreeMap<i64, Bit>,
    pub continuation_seed: u64,
    pub p: Rational,
}

impl ZSequenceInput {
    pub fn from_window(
        window_start: i64,
        bits: &str,
        continuation_seed: u64,
        p: Rational,
    ) -> Result<ZSequenceInput> {
        let mut recorded = BTreeMap::new();
        for (offset, c) in bits.chars().enumerate() {
            let b = match c {
                '0' => Bit::ZERO,
                '1' => Bit::ONE,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "invalid character {c:?} in window"
                    )))
                }
            };
            recorded.insert(window_start + offset as i64, b);
        }
        Ok(ZSequenceInput {
            recorded,
            continuation_seed,
            p,
        })
    }
}

/// Thickened values on integer indices out_lo..=out_hi with the input
/// transported through the alternating enumeration, thickened on the grid,
/// and transported back. Every output dominates its input coordinatewise.
pub fn thicken_sequence(
    input: &ZSequenceInput,
    p_prime: &Rational,
    delta: &Rational,
    out_lo: i64,
    out_hi: i64,
) -> Result<(BTreeMap<i64, Bit>, StabilizationCertificate)> {
    if out_lo > out_hi {
        return Err(Error::InvalidConfig("empty output range".into()));
    }
    let mut coords = Vec::new();
    let mut max_coord_level = 1;
    for i in out_lo..=out_hi {
        let c = GridCoord::from_flat(zton(i))?;
        max_coord_level = max_coord_level.max(c.level);
        coords.push((i, c));
    }
    let max_level = ThickenConfig::required_max_level(delta)?.max(max_coord_level);
    if max_level > MAX_LEVEL_CAP {
        return Err(Error::FeasibilityGuard(format!(
            "output range needs level {max_level} above cap {MAX_LEVEL_CAP}"
        )));
    }
    let config = ThickenConfig {
        p: input.p.clone(),
        p_prime: p_prime.clone(),
        delta: delta.clone(),
        max_level,
        coords: coords.iter().map(|(_, c)| *c).collect(),
    };
    config.validate()?;
    let bias = Bias::from_rational(&input.p)?;
    let cascade = Cascade::new(
        config.p.clone(),
        config.p_prime.clone(),
        config.max_level + 1,
        BaseSource::ZHybrid {
            recorded: input.recorded.clone(),
            seed: input.continuation_seed,
            bias,
        },
    )?;
    let mut out = BTreeMap::new();
    for (i, c) in coords {
        out.insert(i, cascade.cell(c)?.f);
    }
    let certificate = StabilizationCertificate {
        stabilized_at: config.max_level,
        change_events: cascade.change_events(),
        residual_failure_bound: pow2_neg(config.max_level + 1),
    };
    Ok((out, certificate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat_i64;
    use crate::streams::split_grid;

    fn config(coords: Vec<GridCoord>, max_level: u32) -> ThickenConfig {
        ThickenConfig {
            p: rat_i64(1, 2),
            p_prime: rat_i64(3, 4),
            delta: pow2_neg(max_level + 1),
            max_level,
            coords,
        }
    }

    fn prefix_coords(n: u128) -> Vec<GridCoord> {
        (1..=n).map(|t| GridCoord::from_flat(t).unwrap()).collect()
    }

    #[test]
    fn required_max_level_matches_geometric_tail() {
        // delta = 2^-11 forces max_level >= 10
        assert_eq!(
            ThickenConfig::required_max_level(&pow2_neg(11)).unwrap(),
            10
        );
        assert_eq!(ThickenConfig::required_max_level(&rat_i64(1, 3)).unwrap(), 1);
    }

    #[test]
    fn config_validation() {
        let mut cfg = config(prefix_coords(4), 3);
        cfg.delta = pow2_neg(6);
        assert!(matches!(
            cfg.validate(),
            Err(Error::MaxLevelInsufficient { .. })
        ));
        let cfg = config(vec![GridCoord::new(5, 1)], 3);
        assert!(cfg.validate().is_err());
        let cfg = config(prefix_coords(4), 3);
        cfg.validate().unwrap();
    }

    #[test]
    fn monotonicity_every_cell() {
        let cfg = config(prefix_coords(8), 3);
        for seed in 0..40u64 {
            let grid = split_grid(BitStream::seeded(seed, Bias::new(1, 2).unwrap()));
            let (cells, cert) = stabilized_thicken(grid, &cfg).unwrap();
            for c in &cells {
                assert!(c.f.as_u8() >= c.x.as_u8(), "monotonicity at {:?}", c.coord);
                assert_eq!(c.f, Bit(c.x.0 | c.y.0));
            }
            assert!(cert.verify(&cfg.delta));
        }
    }

    #[test]
    fn pure_pipeline_has_no_events() {
        let cfg = config(prefix_coords(4), 3);
        for seed in 0..20u64 {
            let grid = split_grid(BitStream::seeded(seed, Bias::new(1, 2).unwrap()));
            let out = thicken_grid_truncated(grid, 1, &cfg).unwrap();
            assert!(out.change_events.is_empty());
        }
    }

    #[test]
    fn truncation_consistency_without_events() {
        // same seed, deeper correction: identical outputs when nothing fires
        let cfg3 = config(prefix_coords(4), 3);
        let cfg5 = config(prefix_coords(4), 5);
        let mut compared = 0;
        for seed in 0..30u64 {
            let g1 = split_grid(BitStream::seeded(seed, Bias::new(1, 2).unwrap()));
            let (a, cert_a) = stabilized_thicken(g1, &cfg3).unwrap();
            let g2 = split_grid(BitStream::seeded(seed, Bias::new(1, 2).unwrap()));
            let (b, cert_b) = stabilized_thicken(g2, &cfg5).unwrap();
            let no_events =
                cert_a.change_events.is_empty() && cert_b.change_events.is_empty();
            if no_events {
                let av: Vec<Bit> = a.iter().map(|c| c.f).collect();
                let bv: Vec<Bit> = b.iter().map(|c| c.f).collect();
                assert_eq!(av, bv);
                compared += 1;
            }
        }
        assert!(compared > 0, "no event-free seed found");
    }

    #[test]
    fn determinism_same_seed() {
        let cfg = config(prefix_coords(8), 4);
        let run = || {
            let grid = split_grid(BitStream::seeded(99, Bias::new(1, 2).unwrap()));
            stabilized_thicken(grid, &cfg).unwrap()
        };
        let (a, ca) = run();
        let (b, cb) = run();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
    }

    #[test]
    fn z_transport_round_trip() {
        for i in -10_000i64..=10_000 {
            assert_eq!(ntoz(zton(i)).unwrap(), i);
        }
        assert_eq!(zton(0), 1);
        assert_eq!(zton(1), 2);
        assert_eq!(zton(-1), 3);
    }

    #[test]
    fn sequence_all_ones_window() {
        let input = ZSequenceInput::from_window(-2, "11111", 7, rat_i64(1, 2)).unwrap();
        let (out, _) = thicken_sequence(&input, &rat_i64(3, 4), &rat_i64(1, 8), -2, 2).unwrap();
        for (_, b) in out {
            assert_eq!(b, Bit::ONE);
        }
    }

    #[test]
    fn sequence_dominates_input() {
        let input = ZSequenceInput::from_window(-3, "0101010", 11, rat_i64(1, 2)).unwrap();
        let (out, cert) =
            thicken_sequence(&input, &rat_i64(3, 4), &rat_i64(1, 8), -3, 3).unwrap();
        for (i, b) in &out {
            let x = input.recorded[i];
            assert!(b.as_u8() >= x.as_u8());
        }
        assert!(cert.residual_failure_bound <= rat_i64(1, 8));
    }

    #[test]
    fn extras_are_produced_and_deterministic() {
        let cfg = config(prefix_coords(4), 3);
        let run = || {
            let grid = split_grid(BitStream::seeded(5, Bias::new(1, 2).unwrap()));
            let (_, ex, _) = thicken_with_extras(grid, &cfg, 16).unwrap();
            ex
        };
        let a = run();
        assert_eq!(a.len(), 16);
        assert_eq!(a, run());
    }
}
