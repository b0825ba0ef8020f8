//! The parity-XOR-von-Neumann almost-extractor, exact conditional laws of
//! its two halves given the merged process, minimal parameter selection with
//! exact binomial tails, the vector version, and the exhaustive refutation
//! of exact extractors on small windows.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::bits::{Bit, BitStream};
use crate::error::{Error, Result};
use crate::rational::{
    half, one, parse_fraction, rat_i64, to_fraction_string, zero, Interval, Rational,
};
use crate::streams::{pair_index, GridStream};

pub const DEFAULT_VN_PAIR_BUDGET: u64 = 128;

/// Parameters of a single-bit extractor with tolerance `epsilon`.
///
/// `ell_prime` is the smallest exponent driving the parity bias
/// |1-2r|^ell below epsilon/2, and `k` the smallest window length whose
/// merged-ones count falls short of `ell_prime` with probability below
/// epsilon/2.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    pub p: Rational,
    pub p_prime: Rational,
    pub q: Rational,
    pub r: Rational,
    pub k: u32,
    pub epsilon: Rational,
    pub ell_prime: u32,
    pub vn_pair_budget: u64,
}

impl ExtractorParams {
    /// |1 - 2r|, the parity bias base.
    pub fn bias_base(&self) -> Rational {
        let b = one() - rat_i64(2, 1) * &self.r;
        if b.is_negative() {
            -b
        } else {
            b
        }
    }

    /// 1 - 2r with sign, for exact conditional laws.
    pub fn beta(&self) -> Rational {
        one() - rat_i64(2, 1) * &self.r
    }

    /// Upper bound on the probability that the von Neumann scan finds no
    /// unequal pair within the budget: (1 - 2p(1-p))^budget.
    pub fn vn_nontermination_bound(&self) -> Rational {
        let step = one() - rat_i64(2, 1) * &self.p * (one() - &self.p);
        let mut acc = one();
        let mut base = step;
        let mut e = self.vn_pair_budget;
        while e > 0 {
            if e & 1 == 1 {
                acc *= &base;
            }
            base = &base * &base;
            e >>= 1;
        }
        acc
    }

    /// Flat key-value record with exact fraction strings.
    pub fn to_record(&self) -> String {
        format!(
            "p={} pprime={} q={} r={} k={} epsilon={} ellprime={}",
            to_fraction_string(&self.p),
            to_fraction_string(&self.p_prime),
            to_fraction_string(&self.q),
            to_fraction_string(&self.r),
            self.k,
            to_fraction_string(&self.epsilon),
            self.ell_prime,
        )
    }

    pub fn from_record(s: &str) -> Result<ExtractorParams> {
        let mut map = HashMap::new();
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("bad token {tok:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |key: &str| -> Result<String> {
            map.get(key)
                .cloned()
                .ok_or_else(|| Error::InvalidConfig(format!("missing key {key:?}")))
        };
        Ok(ExtractorParams {
            p: parse_fraction(&get("p")?)?,
            p_prime: parse_fraction(&get("pprime")?)?,
            q: parse_fraction(&get("q")?)?,
            r: parse_fraction(&get("r")?)?,
            k: get("k")?
                .parse()
                .map_err(|_| Error::InvalidConfig("bad k".into()))?,
            epsilon: parse_fraction(&get("epsilon")?)?,
            ell_prime: get("ellprime")?
                .parse()
                .map_err(|_| Error::InvalidConfig("bad ellprime".into()))?,
            vn_pair_budget: DEFAULT_VN_PAIR_BUDGET,
        })
    }
}

/// q with max(Bernoulli(p), Bernoulli(q)) ~ Bernoulli(p').
pub fn density_q(p: &Rational, p_prime: &Rational) -> Result<Rational> {
    if !(p > &zero() && p < p_prime && p_prime < &one()) {
        return Err(Error::DegenerateParams(format!(
            "need 0 < p < p' < 1, got p={p}, p'={p_prime}"
        )));
    }
    Ok((p_prime - p) / (one() - p))
}

/// Exact P(Binomial(k, p) < ell).
pub fn binomial_tail_lt(k: u32, ell: u32, p: &Rational) -> Rational {
    if ell == 0 {
        return zero();
    }
    if ell > k {
        return one();
    }
    let a = p.numer().clone();
    let c = p.denom() - p.numer(); // failure numerator
    let den_k = num_traits::pow::pow(p.denom().clone(), k as usize);
    let mut coeff = BigInt::one(); // C(k, j)
    let mut pow_a = BigInt::one(); // a^j
    let mut pow_c = num_traits::pow::pow(c.clone(), k as usize); // c^(k-j)
    let mut num_sum = BigInt::zero();
    for j in 0..ell {
        if j > 0 {
            coeff = coeff * BigInt::from(k - j + 1) / BigInt::from(j);
            pow_a *= &a;
            pow_c = pow_c / &c;
        }
        num_sum += &coeff * &pow_a * &pow_c;
    }
    Rational::new(num_sum, den_k)
}

fn float_binomial_tail_lt(k: u32, ell: u32, p: f64) -> f64 {
    if ell == 0 {
        return 0.0;
    }
    if ell > k {
        return 1.0;
    }
    // log-space accumulation; fine as a search accelerator only
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let mut ln_fact = vec![0.0f64; k as usize + 1];
    for i in 1..=k as usize {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let mut total = 0.0f64;
    for j in 0..ell {
        let ln_term = ln_fact[k as usize] - ln_fact[j as usize] - ln_fact[(k - j) as usize]
            + j as f64 * ln_p
            + (k - j) as f64 * ln_q;
        total += ln_term.exp();
    }
    total
}

fn params_cache() -> &'static Mutex<HashMap<String, Arc<ExtractorParams>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<ExtractorParams>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Minimal (ell', k) for the given tolerance: the smallest ell' with
/// |1-2p/p'|^ell' < epsilon/2, then the smallest k with
/// P(Binomial(k, p') < ell') < epsilon/2. The binomial search is
/// float-accelerated but both boundary inequalities are certified with
/// exact rationals.
pub fn choose_params(p: &Rational, p_prime: &Rational, epsilon: &Rational) -> Result<Arc<ExtractorParams>> {
    let key = format!(
        "{}|{}|{}",
        to_fraction_string(p),
        to_fraction_string(p_prime),
        to_fraction_string(epsilon)
    );
    if let Some(hit) = params_cache().lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }

    let q = density_q(p, p_prime)?;
    if !(epsilon > &zero() && epsilon < &one()) {
        return Err(Error::DegenerateParams(format!("epsilon {epsilon} outside (0,1)")));
    }
    let r = p / p_prime;
    let target = epsilon / rat_i64(2, 1);
    let beta = {
        let b = one() - rat_i64(2, 1) * &r;
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

    // Float bisection for the minimal k, then exact certification.
    let pf = crate::rational::to_f64(p_prime);
    let mut hi = ell_prime.max(1);
    while float_binomial_tail_lt(hi, ell_prime, pf) >= crate::rational::to_f64(&target) * 0.999 {
        hi = hi.checked_mul(2).ok_or_else(|| {
            Error::FeasibilityGuard("binomial k search diverged".into())
        })?;
    }
    let mut lo = ell_prime;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if float_binomial_tail_lt(mid, ell_prime, pf) < crate::rational::to_f64(&target) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut k = lo;
    while binomial_tail_lt(k, ell_prime, p_prime) >= target {
        k += 1;
    }
    while k > 1 && binomial_tail_lt(k - 1, ell_prime, p_prime) < target {
        k -= 1;
    }

    let params = Arc::new(ExtractorParams {
        p: p.clone(),
        p_prime: p_prime.clone(),
        q,
        r,
        k,
        epsilon: epsilon.clone(),
        ell_prime,
        vn_pair_budget: DEFAULT_VN_PAIR_BUDGET,
    });
    params_cache()
        .lock()
        .unwrap()
        .insert(key, params.clone());
    Ok(params)
}

/// XOR of window positions 1..=k read through `read`.
pub fn parity_window(read: &mut impl FnMut(u64) -> Result<Bit>, k: u32) -> Result<Bit> {
    let mut acc = Bit::ZERO;
    for i in 1..=k as u64 {
        acc = acc.xor(read(i)?);
    }
    Ok(acc)
}

/// Von Neumann scan over the disjoint pairs (k+2m, k+2m+1), m = 1, 2, ...
/// Returns the first member of the first unequal pair and the stop index m.
pub fn von_neumann_scan(
    read: &mut impl FnMut(u64) -> Result<Bit>,
    k: u32,
    pair_budget: u64,
) -> Result<(Bit, u64)> {
    for m in 1..=pair_budget {
        let first = read(k as u64 + 2 * m)?;
        let second = read(k as u64 + 2 * m + 1)?;
        if first != second {
            return Ok((first, m));
        }
    }
    Err(Error::BudgetExceeded {
        budget: pair_budget,
        context: "von_neumann_scan",
    })
}

/// Parity of the first k bits of `x`.
pub fn parity_a(x: &mut BitStream, k: u32) -> Result<Bit> {
    parity_window(&mut |i| x.bit_at(i as u128), k)
}

/// Von Neumann bit of `x` past position k.
pub fn vn_bit_b(x: &mut BitStream, k: u32, pair_budget: u64) -> Result<(Bit, u64)> {
    von_neumann_scan(&mut |i| x.bit_at(i as u128), k, pair_budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractOutcome {
    pub bit: Bit,
    pub parity: Bit,
    pub vn_bit: Bit,
    pub stop_pair: u64,
}

/// The almost-extractor: parity of the window XOR the von Neumann bit.
/// Unconditionally an exactly fair coin.
pub fn eps_extract_from(
    read: &mut impl FnMut(u64) -> Result<Bit>,
    params: &ExtractorParams,
) -> Result<ExtractOutcome> {
    let parity = parity_window(read, params.k)?;
    let (vn, stop_pair) = von_neumann_scan(read, params.k, params.vn_pair_budget)?;
    Ok(ExtractOutcome {
        bit: parity.xor(vn),
        parity,
        vn_bit: vn,
        stop_pair,
    })
}

pub fn eps_extract(x: &mut BitStream, params: &ExtractorParams) -> Result<Bit> {
    Ok(eps_extract_from(&mut |i| x.bit_at(i as u128), params)?.bit)
}

/// An interval-valued conditional probability P(bit = 1 | side information).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLaw {
    pub prob_one: Interval,
}

impl ConditionalLaw {
    pub fn exact(v: Rational) -> ConditionalLaw {
        ConditionalLaw {
            prob_one: Interval::point(v),
        }
    }
}

/// beta^ell with the 0^0 = 1 convention.
fn signed_pow(beta: &Rational, ell: u64) -> Rational {
    if ell == 0 {
        return one();
    }
    let mut acc = one();
    let mut base = beta.clone();
    let mut e = ell;
    while e > 0 {
        if e & 1 == 1 {
            acc *= &base;
        }
        base = &base * &base;
        e >>= 1;
    }
    acc
}

/// Exact conditional law of the parity bit given the merged window:
/// with ell ones merged in, P(parity = 1) = (1 - (1-2r)^ell) / 2.
pub fn cond_law_a(merged_window: &[Bit], params: &ExtractorParams) -> Result<ConditionalLaw> {
    if merged_window.len() != params.k as usize {
        return Err(Error::WindowMismatch {
            expected: params.k as usize,
            got: merged_window.len(),
        });
    }
    let ell = merged_window.iter().filter(|b| b.0).count() as u64;
    Ok(ConditionalLaw::exact(cond_law_a_value(ell, &params.r)))
}

pub fn cond_law_a_value(ell: u64, r: &Rational) -> Rational {
    let beta = one() - rat_i64(2, 1) * r;
    (one() - signed_pow(&beta, ell)) / rat_i64(2, 1)
}

/// Incrementally observed parity-law enclosure: bounds over all completions
/// of the unobserved window positions.
#[derive(Debug, Clone)]
pub struct ParityLawState {
    k: u32,
    observed: u32,
    ones: u64,
    beta: Rational,
}

impl ParityLawState {
    pub fn new(params: &ExtractorParams) -> ParityLawState {
        ParityLawState {
            k: params.k,
            observed: 0,
            ones: 0,
            beta: params.beta(),
        }
    }

    pub fn fully_observed(&self) -> bool {
        self.observed == self.k
    }

    pub fn next_position(&self) -> u32 {
        self.observed + 1
    }

    pub fn observe(&mut self, bit: Bit) {
        debug_assert!(self.observed < self.k);
        self.observed += 1;
        if bit.0 {
            self.ones += 1;
        }
    }

    pub fn interval(&self) -> Interval {
        let ell_min = self.ones;
        let ell_max = self.ones + (self.k - self.observed) as u64;
        let mut candidates = vec![ell_min, ell_max];
        if ell_min + 1 <= ell_max {
            candidates.push(ell_min + 1);
        }
        let mut lo: Option<Rational> = None;
        let mut hi: Option<Rational> = None;
        for ell in candidates {
            let v = signed_pow(&self.beta, ell);
            if lo.as_ref().map_or(true, |x| v < *x) {
                lo = Some(v.clone());
            }
            if hi.as_ref().map_or(true, |x| v > *x) {
                hi = Some(v);
            }
        }
        let (bmin, bmax) = (lo.unwrap(), hi.unwrap());
        // pa = (1 - beta^ell) / 2 is decreasing in beta^ell
        Interval::new(
            (one() - bmax) / rat_i64(2, 1),
            (one() - bmin) / rat_i64(2, 1),
        )
    }
}

/// Scan-pair patterns of the merged process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergedPair(pub Bit, pub Bit);

/// Enclosure of P(von Neumann bit = 1 | merged scan) built pair by pair.
/// Given a merged pair, the hidden x-pair stops with the pattern-specific
/// probability; the unresolved mass is the running no-stop product.
#[derive(Debug, Clone)]
pub struct VnLawState {
    mass_one: Rational,
    no_stop: Rational,
    pairs: u64,
    r: Rational,
}

impl VnLawState {
    pub fn new(params: &ExtractorParams) -> VnLawState {
        VnLawState {
            mass_one: zero(),
            no_stop: one(),
            pairs: 0,
            r: params.r.clone(),
        }
    }

    pub fn pairs_scanned(&self) -> u64 {
        self.pairs
    }

    pub fn next_pair(&self) -> u64 {
        self.pairs + 1
    }

    pub fn observe(&mut self, pair: MergedPair) {
        let r = &self.r;
        match (pair.0 .0, pair.1 .0) {
            (false, false) => {}
            (true, true) => {
                let stop_one = r * (one() - r); // stop with bit 1
                self.mass_one += &self.no_stop * stop_one;
                self.no_stop *= one() - rat_i64(2, 1) * r * (one() - r);
            }
            (true, false) => {
                self.mass_one += &self.no_stop * r;
                self.no_stop *= one() - r;
            }
            (false, true) => {
                self.no_stop *= one() - r;
            }
        }
        self.pairs += 1;
    }

    /// Remaining unresolved probability mass.
    pub fn width(&self) -> Rational {
        self.no_stop.clone()
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.mass_one.clone(), &self.mass_one + &self.no_stop)
    }

    /// Zero-width law in the truncated model conditioned on stopping within
    /// the scanned pairs. Errors if stopping has probability zero.
    pub fn truncated_conditioned(&self) -> Result<Rational> {
        let stop_mass = one() - &self.no_stop;
        if stop_mass.is_zero() {
            return Err(Error::EmptyConditioning);
        }
        Ok(&self.mass_one / stop_mass)
    }
}

/// Lazily observable merged process: the refinement machinery behind the
/// conditional law of the full extractor bit.
pub trait MergedSource {
    /// Merged value at window position u (1-based, u <= k).
    fn window_bit(&mut self, u: u32) -> Result<Bit>;
    /// Merged values of scan pair m (positions k+2m, k+2m+1).
    fn scan_pair(&mut self, m: u64) -> Result<MergedPair>;
}

/// Merged view of two bit streams, max coordinatewise.
pub struct StreamMerged<'a> {
    pub x: &'a mut BitStream,
    pub y: &'a mut BitStream,
    pub k: u32,
}

impl MergedSource for StreamMerged<'_> {
    fn window_bit(&mut self, u: u32) -> Result<Bit> {
        let xb = self.x.bit_at(u as u128)?;
        let yb = self.y.bit_at(u as u128)?;
        Ok(Bit(xb.0 | yb.0))
    }

    fn scan_pair(&mut self, m: u64) -> Result<MergedPair> {
        let i = self.k as u128 + 2 * m as u128;
        let a = Bit(self.x.bit_at(i)?.0 | self.y.bit_at(i)?.0);
        let b = Bit(self.x.bit_at(i + 1)?.0 | self.y.bit_at(i + 1)?.0);
        Ok(MergedPair(a, b))
    }
}

/// Refinable enclosure of P(f = 1 | merged) for f = parity XOR von Neumann.
/// Parity and scan halves live on disjoint coordinates, so given the merged
/// process they are independent and the law is their XOR convolution.
pub struct CondLawF<'m, M: MergedSource> {
    pub a: ParityLawState,
    pub b: VnLawState,
    source: &'m mut M,
}

impl<'m, M: MergedSource> CondLawF<'m, M> {
    pub fn new(params: &ExtractorParams, source: &'m mut M) -> CondLawF<'m, M> {
        CondLawF {
            a: ParityLawState::new(params),
            b: VnLawState::new(params),
            source,
        }
    }

    pub fn interval(&self) -> Interval {
        self.a.interval().xor_convolve(&self.b.interval())
    }

    /// Observes one more merged value: window positions first, then scan
    /// pairs. Each observation strictly tightens what can be tightened.
    pub fn refine(&mut self) -> Result<()> {
        if !self.a.fully_observed() {
            let u = self.a.next_position();
            let bit = self.source.window_bit(u)?;
            self.a.observe(bit);
        } else {
            let m = self.b.next_pair();
            let pair = self.source.scan_pair(m)?;
            self.b.observe(pair);
        }
        Ok(())
    }
}

/// Fully resolved conditional law of f in the truncated model: the merged
/// window and a finite scan are given, and the scan is conditioned on the
/// von Neumann bit stopping within it.
pub fn cond_law_f_truncated(
    window: &[Bit],
    scan: &[MergedPair],
    params: &ExtractorParams,
) -> Result<Rational> {
    let a_law = cond_law_a(window, params)?.prob_one.lo;
    let mut b = VnLawState::new(params);
    for pair in scan {
        b.observe(*pair);
    }
    let b_law = b.truncated_conditioned()?;
    Ok(crate::rational::xor_prob(&a_law, &b_law))
}

/// One coordinate of the vector extractor: tolerance epsilon * 2^-i applied
/// to row i of the grid view.
pub struct VectorExtractor {
    grid: GridStream,
    base_epsilon: Rational,
    p: Rational,
    p_prime: Rational,
}

impl VectorExtractor {
    pub fn new(
        x: BitStream,
        base_epsilon: Rational,
        p: Rational,
        p_prime: Rational,
    ) -> Result<VectorExtractor> {
        density_q(&p, &p_prime)?;
        if !(base_epsilon > zero() && base_epsilon < one()) {
            return Err(Error::DegenerateParams("epsilon outside (0,1)".into()));
        }
        Ok(VectorExtractor {
            grid: GridStream::new(x),
            base_epsilon,
            p,
            p_prime,
        })
    }

    pub fn coordinate_epsilon(&self, i: u32) -> Rational {
        &self.base_epsilon * crate::rational::pow2_neg(i)
    }

    pub fn coordinate_params(&self, i: u32) -> Result<Arc<ExtractorParams>> {
        choose_params(&self.p, &self.p_prime, &self.coordinate_epsilon(i))
    }

    /// Output bit i, consuming only row i of the grid.
    pub fn bit(&mut self, i: u32) -> Result<Bit> {
        let params = self.coordinate_params(i)?;
        let grid = &mut self.grid;
        let row = i as u128;
        let mut read = |u: u64| grid.bit(row, u as u128);
        Ok(eps_extract_from(&mut read, &params)?.bit)
    }

    /// Base-stream positions consumed by coordinate i's window (for
    /// disjointness checks): positions pair(i, 1..=k).
    pub fn window_positions(&self, i: u32) -> Result<Vec<u128>> {
        let params = self.coordinate_params(i)?;
        (1..=params.k as u128)
            .map(|u| pair_index(i as u128, u))
            .collect()
    }
}

pub fn vector_extract(
    x: BitStream,
    base_epsilon: Rational,
    p: Rational,
    p_prime: Rational,
) -> Result<VectorExtractor> {
    VectorExtractor::new(x, base_epsilon, p, p_prime)
}

/// A boolean function on {0,1}^window given by its truth table.
/// Input index: bit i of the index is window position i+1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowFn {
    pub window: u32,
    table: Vec<bool>,
}

impl WindowFn {
    pub fn from_table(window: u32, table: Vec<bool>) -> Result<WindowFn> {
        if table.len() != 1usize << window {
            return Err(Error::WindowMismatch {
                expected: 1usize << window,
                got: table.len(),
            });
        }
        Ok(WindowFn { window, table })
    }

    pub fn eval(&self, input: usize) -> bool {
        self.table[input]
    }

    fn from_index(window: u32, idx: u64) -> WindowFn {
        let n = 1usize << window;
        WindowFn {
            window,
            table: (0..n).map(|i| idx >> i & 1 == 1).collect(),
        }
    }
}

pub const NO_EXTRACTOR_FULL_ENUM_LIMIT: u32 = 4;
pub const NO_EXTRACTOR_WINDOW_LIMIT: u32 = 20;

/// Exhaustively searches window functions satisfying both exact extractor
/// conditions: P(f(X)=1) = 1/2 and f(X) independent of the merged window.
/// Expected empty for all 0 < p, q < 1; each returned function would be a
/// counterexample.
pub fn no_extractor_search(
    window_x: u32,
    p: &Rational,
    q: &Rational,
    candidates: Option<Vec<WindowFn>>,
) -> Result<Vec<WindowFn>> {
    if window_x > NO_EXTRACTOR_WINDOW_LIMIT {
        return Err(Error::FeasibilityGuard(format!(
            "window_x {window_x} exceeds limit {NO_EXTRACTOR_WINDOW_LIMIT}"
        )));
    }
    if candidates.is_none() && window_x > NO_EXTRACTOR_FULL_ENUM_LIMIT {
        return Err(Error::FeasibilityGuard(format!(
            "full enumeration needs window_x <= {NO_EXTRACTOR_FULL_ENUM_LIMIT}; supply candidates"
        )));
    }
    if !(p > &zero() && p < &one() && q > &zero() && q < &one()) {
        return Err(Error::DegenerateParams("p, q must lie in (0,1)".into()));
    }
    let p_prime = p + q * (one() - p);
    let r = p / &p_prime;

    let n = 1usize << window_x;
    // weight of x under Bernoulli(p)^window
    let x_weight = |x: usize| -> Rational {
        let ones = (x as u64).count_ones();
        signed_pow(p, ones as u64) * signed_pow(&(one() - p), (window_x - ones) as u64)
    };
    // weight of x given merged pattern m (x must be a submask of m)
    let cond_weight = |x: usize, m: usize| -> Rational {
        let ones = (x as u64).count_ones() as u64;
        let merged_ones = (m as u64).count_ones() as u64;
        signed_pow(&r, ones) * signed_pow(&(one() - &r), merged_ones - ones)
    };

    let check = |f: &WindowFn| -> bool {
        let mut mass = zero();
        for x in 0..n {
            if f.eval(x) {
                mass += x_weight(x);
            }
        }
        if mass != half() {
            return false;
        }
        // independence from every merged pattern
        for m in 0..n {
            let mut cond = zero();
            let mut sub = m;
            // enumerate submasks of m, including 0
            loop {
                if f.eval(sub) {
                    cond += cond_weight(sub, m);
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & m;
            }
            if cond != half() {
                return false;
            }
        }
        true
    };

    let mut found = Vec::new();
    match candidates {
        Some(cands) => {
            for f in cands {
                if f.window != window_x {
                    return Err(Error::WindowMismatch {
                        expected: 1usize << window_x,
                        got: 1usize << f.window,
                    });
                }
                if check(&f) {
                    found.push(f);
                }
            }
        }
        None => {
            let count: u64 = 1u64 << (1u64 << window_x);
            for idx in 0..count {
                let f = WindowFn::from_index(window_x, idx);
                if check(&f) {
                    found.push(f);
                }
            }
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitStream;

    fn params_1_2_3_4_eps(eps_num: i64, eps_den: i64) -> Arc<ExtractorParams> {
        choose_params(&rat_i64(1, 2), &rat_i64(3, 4), &rat_i64(eps_num, eps_den)).unwrap()
    }

    #[test]
    fn parity_examples() {
        let mut x = BitStream::from_ascii("101").unwrap();
        assert_eq!(parity_a(&mut x, 3).unwrap(), Bit::ZERO);
        let mut x = BitStream::from_ascii("00000").unwrap();
        assert_eq!(parity_a(&mut x, 5).unwrap(), Bit::ZERO);
        let mut x = BitStream::from_ascii("11111").unwrap();
        assert_eq!(parity_a(&mut x, 5).unwrap(), Bit::ONE);
    }

    #[test]
    fn vn_examples() {
        // k = 0: pairs at (2,3), (4,5), ... position 1 is skipped.
        let mut x = BitStream::from_ascii("_0010__".replace('_', "0").as_str()).unwrap();
        // pairs: (0,0) then (1,0) -> bit 1 at stop index 2
        let mut x2 = BitStream::from_ascii("0001000").unwrap();
        let (bit, m) = vn_bit_b(&mut x2, 0, 16).unwrap();
        assert_eq!((bit, m), (Bit::ONE, 2));
        let _ = x.next_bit();

        // first pair already unequal
        let mut x = BitStream::from_ascii("001".to_string().as_str()).unwrap();
        let (bit, m) = vn_bit_b(&mut x, 0, 16).unwrap();
        assert_eq!((bit, m), (Bit::ZERO, 1));

        // all-equal pairs exhaust the budget
        let mut x = BitStream::from_ascii("0000000000").unwrap();
        assert!(matches!(
            vn_bit_b(&mut x, 0, 4),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn choose_params_examples() {
        let p = params_1_2_3_4_eps(1, 10);
        assert_eq!(p.ell_prime, 3);
        assert_eq!(p.k, 6);
        assert_eq!(p.q, rat_i64(1, 2));
        assert_eq!(p.r, rat_i64(2, 3));
        // minimality: k = 5 fails
        assert!(binomial_tail_lt(5, 3, &rat_i64(3, 4)) >= rat_i64(1, 20));
        assert!(binomial_tail_lt(6, 3, &rat_i64(3, 4)) < rat_i64(1, 20));
        assert_eq!(
            binomial_tail_lt(6, 3, &rat_i64(3, 4)),
            rat_i64(154, 4096)
        );

        // r = 1/2 (p = p'/2) gives ell' = 1 for every epsilon
        for eps in [rat_i64(1, 2), rat_i64(1, 100)] {
            let prm = choose_params(&rat_i64(3, 8), &rat_i64(3, 4), &eps).unwrap();
            assert_eq!(prm.ell_prime, 1);
        }

        // monotone in epsilon
        let loose = params_1_2_3_4_eps(1, 2);
        assert!(loose.k < p.k);
    }

    #[test]
    fn choose_params_degenerate() {
        assert!(choose_params(&rat_i64(1, 2), &rat_i64(1, 2), &rat_i64(1, 10)).is_err());
        assert!(choose_params(&rat_i64(1, 2), &one(), &rat_i64(1, 10)).is_err());
    }

    #[test]
    fn params_record_round_trip() {
        let p = params_1_2_3_4_eps(1, 10);
        let rec = p.to_record();
        let back = ExtractorParams::from_record(&rec).unwrap();
        assert_eq!(back.k, p.k);
        assert_eq!(back.q, p.q);
        assert_eq!(back.ell_prime, p.ell_prime);
    }

    #[test]
    fn extract_composition_examples() {
        let p = params_1_2_3_4_eps(1, 10); // k = 6
        // k zeros then pair (0,1): a = 0, b = 0 -> 0
        let mut x = BitStream::from_ascii("000000001").unwrap();
        assert_eq!(eps_extract(&mut x, &p).unwrap(), Bit::ZERO);
        // one 1 in window then pair (1,0): a = 1, b = 1 -> 0
        let mut x = BitStream::from_ascii("100000010").unwrap();
        assert_eq!(eps_extract(&mut x, &p).unwrap(), Bit::ZERO);
    }

    #[test]
    fn extract_skips_position_after_window() {
        // k = 6: position 7 must not be consumed; pairs start at 8.
        let p = params_1_2_3_4_eps(1, 10);
        let mut a = BitStream::from_ascii("000000_01".replace('_', "0").as_str()).unwrap();
        let mut b = BitStream::from_ascii("000000_01".replace('_', "1").as_str()).unwrap();
        assert_eq!(
            eps_extract(&mut a, &p).unwrap(),
            eps_extract(&mut b, &p).unwrap()
        );
    }

    #[test]
    fn cond_law_a_examples() {
        let p = params_1_2_3_4_eps(1, 10); // r = 2/3, k = 6
        let window = |ones: usize| -> Vec<Bit> {
            (0..6).map(|i| Bit(i < ones)).collect()
        };
        assert_eq!(
            cond_law_a(&window(0), &p).unwrap().prob_one,
            Interval::point(zero())
        );
        assert_eq!(
            cond_law_a(&window(1), &p).unwrap().prob_one,
            Interval::point(rat_i64(2, 3))
        );
        assert_eq!(
            cond_law_a(&window(2), &p).unwrap().prob_one,
            Interval::point(rat_i64(4, 9))
        );
        assert!(cond_law_a(&window(2)[..3].to_vec(), &p).is_err());
    }

    #[test]
    fn vn_law_scan_patterns() {
        let p = params_1_2_3_4_eps(1, 10); // r = 2/3
        // all pairs (1,0): law converges to 1
        let mut s = VnLawState::new(&p);
        for _ in 0..20 {
            s.observe(MergedPair(Bit::ONE, Bit::ZERO));
        }
        let iv = s.interval();
        assert!(iv.lo > rat_i64(99, 100));
        assert!(iv.hi <= one());
        // width equals product of no-stop probabilities: (1-r)^20
        assert_eq!(s.width(), signed_pow(&rat_i64(1, 3), 20));

        // (0,0) pairs give no information
        let mut s = VnLawState::new(&p);
        s.observe(MergedPair(Bit::ZERO, Bit::ZERO));
        assert_eq!(s.interval(), Interval::new(zero(), one()));
    }

    #[test]
    fn vn_law_fair_at_r_half() {
        // all pairs (1,1) at r = 1/2: law converges to 1/2
        let prm = choose_params(&rat_i64(3, 8), &rat_i64(3, 4), &rat_i64(1, 4)).unwrap();
        assert_eq!(prm.r, rat_i64(1, 2));
        let mut s = VnLawState::new(&prm);
        for _ in 0..30 {
            s.observe(MergedPair(Bit::ONE, Bit::ONE));
        }
        let iv = s.interval();
        assert!(iv.contains(&half()));
        assert!(iv.width() < rat_i64(1, 1_000_000));
    }

    #[test]
    fn cond_law_f_stream_refinement() {
        let p = params_1_2_3_4_eps(1, 10);
        let mut x = BitStream::seeded(5, crate::bits::Bias::new(1, 2).unwrap());
        let mut y = BitStream::seeded(6, crate::bits::Bias::new(1, 2).unwrap());
        let mut merged = StreamMerged {
            x: &mut x,
            y: &mut y,
            k: p.k,
        };
        let mut law = CondLawF::new(&p, &mut merged);
        let mut prev = law.interval();
        for _ in 0..30 {
            law.refine().unwrap();
            let cur = law.interval();
            assert!(cur.lo >= prev.lo && cur.hi <= prev.hi, "nested enclosures");
            prev = cur;
        }
        assert!(prev.width() < rat_i64(1, 1000));
    }

    #[test]
    fn no_extractor_small_windows() {
        // constants alone: never an extractor
        let out = no_extractor_search(0, &rat_i64(1, 2), &rat_i64(1, 3), None).unwrap();
        assert!(out.is_empty());
        let out = no_extractor_search(2, &rat_i64(1, 2), &rat_i64(1, 3), None).unwrap();
        assert!(out.is_empty());
        // feasibility guard
        assert!(no_extractor_search(5, &rat_i64(1, 2), &rat_i64(1, 3), None).is_err());
        // candidate list route
        let cand = WindowFn::from_table(5, (0..32).map(|i| i % 2 == 0).collect()).unwrap();
        let out = no_extractor_search(5, &rat_i64(1, 2), &rat_i64(1, 3), Some(vec![cand])).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn truncated_law_matches_enumeration_shape() {
        let p = params_1_2_3_4_eps(1, 10);
        // window of two ones (k = 6: pad with zeros), scan (1,1) then (1,0)
        let mut window = vec![Bit::ONE, Bit::ONE];
        window.resize(6, Bit::ZERO);
        let scan = vec![
            MergedPair(Bit::ONE, Bit::ONE),
            MergedPair(Bit::ONE, Bit::ZERO),
        ];
        let law = cond_law_f_truncated(&window, &scan, &p).unwrap();
        assert!(law > zero() && law < one());
        // empty scan conditioned on stopping is an empty conditioning
        assert!(matches!(
            cond_law_f_truncated(&window, &[], &p),
            Err(Error::EmptyConditioning)
        ));
    }
}
