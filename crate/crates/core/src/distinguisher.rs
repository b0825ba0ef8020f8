//! Statistical machinery that distinguishes any finite-window candidate
//! thickening from a genuine higher-intensity Poisson process. A candidate
//! presented as a window-determined rule is probed through learned window
//! events: occupancy cells whose presence predicts the candidate placing a
//! point in a target interval. Counting joint occurrences over many shifted
//! intervals separates (Y1, Y2) — a fair split of X with the candidate's
//! points — from (Z1, Z2) — a fair split of a real Poisson process.

use num_traits::{Signed, ToPrimitive};
use serde::Serialize;

use crate::bits::prf_u64;
use crate::error::{Error, Result};
use crate::poisson::{sample_poisson, PointWindow};
use crate::rational::{one, rat_i64, to_fraction_string, zero, Rational};

/// A deterministic candidate thickening rule that reads the input only
/// within a bounded window of each output location, and adds points
/// disjoint from the input.
pub struct CandidateThickening {
    pub window_radius: Rational,
    rule: CandidateRule,
}

enum CandidateRule {
    /// Adds a point one unit to the right of every input point.
    UnitOffset,
    /// Adds nothing (a degenerate candidate; the harness still runs).
    NoAdd,
}

impl CandidateThickening {
    pub fn unit_offset() -> CandidateThickening {
        CandidateThickening {
            window_radius: one(),
            rule: CandidateRule::UnitOffset,
        }
    }

    pub fn no_add() -> CandidateThickening {
        CandidateThickening {
            window_radius: zero(),
            rule: CandidateRule::NoAdd,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.rule {
            CandidateRule::UnitOffset => "unit-offset",
            CandidateRule::NoAdd => "no-add",
        }
    }

    /// Added points (sorted, deduplicated against the input).
    pub fn apply(&self, input: &[Rational]) -> Vec<Rational> {
        match self.rule {
            CandidateRule::NoAdd => Vec::new(),
            CandidateRule::UnitOffset => {
                let mut added: Vec<Rational> =
                    input.iter().map(|p| p + one()).collect();
                added.retain(|p| !input.contains(p));
                added.dedup();
                added
            }
        }
    }
}

/// Event-counting configuration: interval width epsilon = 1/m, window
/// approximation radius r, and L shifted intervals. The thresholds are the
/// construction's constants: b < 5 L epsilon and d > L epsilon / 8.
#[derive(Debug, Clone)]
pub struct EventConfig {
    pub lambda: Rational,
    pub lambda_prime: Rational,
    /// epsilon = 1 / epsilon_inv
    pub epsilon_inv: u32,
    pub r: Rational,
    pub cells: u32,
}

/// Discretization: 4 grid cells per epsilon-interval.
const GRID_PER_EPS: i64 = 4;

impl EventConfig {
    pub fn epsilon(&self) -> Rational {
        rat_i64(1, self.epsilon_inv as i64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon_inv == 0 || self.cells == 0 {
            return Err(Error::InvalidConfig("need epsilon_inv, cells > 0".into()));
        }
        if !(self.lambda > zero() && self.lambda_prime > self.lambda) {
            return Err(Error::DegenerateParams(
                "need 0 < lambda < lambda'".into(),
            ));
        }
        if !self.r.is_positive() {
            return Err(Error::InvalidConfig("approximation radius must be positive".into()));
        }
        Ok(())
    }

    /// b(U) < 5 L epsilon, as an exact integer comparison.
    pub fn b_within_threshold(&self, b: u64) -> bool {
        (b * self.epsilon_inv as u64) < 5 * self.cells as u64
    }

    /// d(U, V) > L epsilon / 8.
    pub fn d_above_threshold(&self, d: u64) -> bool {
        (d * 8 * self.epsilon_inv as u64) > self.cells as u64
    }

    /// Window radius in grid cells (rounded up).
    fn r_cells(&self) -> i64 {
        let cells = &self.r * rat_i64(GRID_PER_EPS * self.epsilon_inv as i64, 1);
        cells.ceil().to_integer().to_i64().expect("radius overflow")
    }

    /// Analytic ceiling 2^(5 L eps) * eps^(L eps / 8) on P(E(Z1, Z2)),
    /// in log2 (the raw value may overflow a float).
    pub fn z_ceiling_log2(&self) -> f64 {
        let l_eps = self.cells as f64 / self.epsilon_inv as f64;
        5.0 * l_eps + (l_eps / 8.0) * (1.0 / self.epsilon_inv as f64).log2()
    }
}

/// A realization reduced to its occupied grid cells (cells of width
/// epsilon/4; cell k covers [k, k+1) / (4m)).
#[derive(Debug, Clone)]
pub struct GridOccupancy {
    cells: std::collections::BTreeSet<i64>,
}

impl GridOccupancy {
    pub fn from_points(points: &[Rational], epsilon_inv: u32) -> GridOccupancy {
        let scale = rat_i64(GRID_PER_EPS * epsilon_inv as i64, 1);
        let cells = points
            .iter()
            .map(|p| {
                (p * &scale)
                    .floor()
                    .to_integer()
                    .to_i64()
                    .expect("grid overflow")
            })
            .collect();
        GridOccupancy { cells }
    }

    pub fn occupied(&self, cell: i64) -> bool {
        self.cells.contains(&cell)
    }

    /// Any point in [t, t + eps) for t = index * eps: four grid cells.
    pub fn interval_hit(&self, index: i64) -> bool {
        (0..GRID_PER_EPS).any(|j| self.occupied(index * GRID_PER_EPS + j))
    }
}

/// "U has at least one point in [t, t + eps)" on an explicit window.
pub fn event_a(u: &PointWindow, t: &Rational, epsilon: &Rational) -> Result<bool> {
    let hi = t + epsilon;
    if *t < u.lo || hi > u.hi {
        return Err(Error::Coverage(format!(
            "[{}, {}] outside window [{}, {}]",
            to_fraction_string(t),
            to_fraction_string(&hi),
            to_fraction_string(&u.lo),
            to_fraction_string(&u.hi)
        )));
    }
    Ok(u.points.iter().any(|p| p >= t && *p < hi))
}

/// The learned window-event family: for each residue class t = i eps,
/// i = 0..m-1, the set of evidence cells (offsets relative to t's grid
/// position) whose occupancy in the input predicts the candidate placing a
/// point in [t, t + eps). Classes extend to all i by integer shifts.
#[derive(Debug, Clone, Serialize)]
pub struct BFamily {
    pub epsilon_inv: u32,
    /// evidence cell offsets per residue class
    pub evidence: Vec<Vec<i64>>,
    /// measured approximation error per class (validation frequency)
    pub measured_error: Vec<f64>,
    /// exact check: every class error is below epsilon / 4
    pub within_quarter_epsilon: bool,
}

impl BFamily {
    /// B_{i eps}(u): some evidence cell of the residue class, shifted to i,
    /// is occupied.
    pub fn holds(&self, u: &GridOccupancy, index: i64) -> bool {
        let class = (index.rem_euclid(self.epsilon_inv as i64)) as usize;
        let base = index * GRID_PER_EPS;
        self.evidence[class].iter().any(|off| u.occupied(base + off))
    }

    pub fn max_error(&self) -> f64 {
        self.measured_error.iter().cloned().fold(0.0, f64::max)
    }
}

/// Learns the window event family from seeded samples of (X, candidate(X)):
/// a cell is evidence when the empirical majority of its occupancies
/// coincide with the target event. The achieved approximation error is
/// measured on held-out samples and reported, not assumed.
pub fn learn_b(
    candidate: &CandidateThickening,
    config: &EventConfig,
    training_samples: u64,
    seed: u64,
) -> Result<BFamily> {
    config.validate()?;
    if training_samples < 10_000 {
        return Err(Error::InsufficientSamples {
            need: 10_000,
            got: training_samples,
        });
    }
    let m = config.epsilon_inv as usize;
    let r_cells = config.r_cells();
    let width = (2 * r_cells) as usize;
    let eps = config.epsilon();

    // generation window covers every class window and the candidate's reach
    let pad = &config.r + &candidate.window_radius + one();
    let gen_lo = -&pad;
    let gen_hi = &eps * rat_i64(m as i64, 1) + &pad;

    let mut occ_count = vec![vec![0u64; width]; m];
    let mut occ_and_a = vec![vec![0u64; width]; m];
    let mut a_count = vec![0u64; m];
    let train_n = training_samples / 2;
    let eval_n = training_samples - train_n;

    let sample = |s: u64| -> Result<(GridOccupancy, GridOccupancy)> {
        let x = sample_poisson(&gen_lo, &gen_hi, &config.lambda, s)?;
        let added = candidate.apply(&x.points);
        Ok((
            GridOccupancy::from_points(&x.points, config.epsilon_inv),
            GridOccupancy::from_points(&added, config.epsilon_inv),
        ))
    };

    for s in 0..train_n {
        let (x_occ, added_occ) = sample(seed.wrapping_add(s))?;
        for (class, (oc, oa)) in occ_count.iter_mut().zip(occ_and_a.iter_mut()).enumerate() {
            let a = added_occ.interval_hit(class as i64);
            if a {
                a_count[class] += 1;
            }
            let base = class as i64 * GRID_PER_EPS;
            for (slot, off) in (-r_cells..r_cells).enumerate() {
                if x_occ.occupied(base + off) {
                    oc[slot] += 1;
                    if a {
                        oa[slot] += 1;
                    }
                }
            }
        }
    }

    const MIN_EVIDENCE_COUNT: u64 = 10;
    let evidence: Vec<Vec<i64>> = (0..m)
        .map(|class| {
            (-r_cells..r_cells)
                .enumerate()
                .filter(|(slot, _)| {
                    let n = occ_count[class][*slot];
                    n >= MIN_EVIDENCE_COUNT && 2 * occ_and_a[class][*slot] > n
                })
                .map(|(_, off)| off)
                .collect()
        })
        .collect();

    // measured error on held-out samples
    let mut err_count = vec![0u64; m];
    let family_probe = BFamily {
        epsilon_inv: config.epsilon_inv,
        evidence: evidence.clone(),
        measured_error: vec![],
        within_quarter_epsilon: false,
    };
    for s in 0..eval_n {
        let (x_occ, added_occ) = sample(seed.wrapping_add(train_n + s))?;
        for (class, err) in err_count.iter_mut().enumerate() {
            let a = added_occ.interval_hit(class as i64);
            let b = family_probe.holds(&x_occ, class as i64);
            if a != b {
                *err += 1;
            }
        }
    }
    // error < eps/4 exactly: err * 4 * m < eval_n
    let within = err_count
        .iter()
        .all(|e| (e * 4 * config.epsilon_inv as u64) < eval_n);
    Ok(BFamily {
        epsilon_inv: config.epsilon_inv,
        evidence,
        measured_error: err_count
            .iter()
            .map(|e| *e as f64 / eval_n as f64)
            .collect(),
        within_quarter_epsilon: within,
    })
}

/// Event counts over the L shifted intervals: b = #{i: B_i(u)},
/// d = #{i: B_i(u) and A_i(v)}, and c = #{i: B_i(u) and A_i(candidate(u))}
/// when the candidate is supplied.
pub fn count_events(
    u: &GridOccupancy,
    v: &GridOccupancy,
    c_of_u: Option<&GridOccupancy>,
    family: &BFamily,
    config: &EventConfig,
) -> (u64, Option<u64>, u64) {
    let mut b = 0u64;
    let mut d = 0u64;
    let mut c = c_of_u.map(|_| 0u64);
    for i in 0..config.cells as i64 {
        if family.holds(u, i) {
            b += 1;
            if v.interval_hit(i) {
                d += 1;
            }
            if let (Some(cnt), Some(cu)) = (c.as_mut(), c_of_u) {
                if cu.interval_hit(i) {
                    *cnt += 1;
                }
            }
        }
    }
    (b, c, d)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let p = successes as f64 / n as f64;
    let nf = n as f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = (z / denom) * ((p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt());
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct DistinguishReport {
    pub candidate: String,
    pub epsilon: String,
    pub r: String,
    pub cells: u32,
    pub lambda: String,
    pub lambda_prime: String,
    pub seed: u64,
    pub n_samples: u64,
    pub learned_error: Vec<f64>,
    pub approximation_found: bool,
    pub p_hat_y: f64,
    pub ci_y: (f64, f64),
    pub p_hat_z: f64,
    pub ci_z: (f64, f64),
    pub mean_b_y: f64,
    pub mean_d_y: f64,
    pub mean_b_z: f64,
    pub mean_d_z: f64,
    pub z_ceiling_log2: f64,
    pub z_upper_within_ceiling: bool,
    pub verdict: String,
}

/// Fair split by a seeded coin per point: Poisson(lam) splits into two
/// independent Poisson(lam/2) components.
fn fair_split(points: &[Rational], seed: u64) -> (Vec<Rational>, Vec<Rational>) {
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if prf_u64(seed, i as u128 + 1, 0) & 1 == 0 {
            first.push(p.clone());
        } else {
            second.push(p.clone());
        }
    }
    (first, second)
}

/// Estimates P(E(Y1, Y2)) against P(E(Z1, Z2)) where E is the joint event
/// "b(U) < 5 L eps and d(U, V) > L eps / 8", Y = X plus the candidate's
/// points split fairly, and Z a genuine Poisson(lambda') split fairly.
/// The verdict is DISTINGUISHED when the Wilson intervals are disjoint.
pub fn test_e(
    candidate: &CandidateThickening,
    config: &EventConfig,
    family: &BFamily,
    n_samples: u64,
    seed: u64,
) -> Result<DistinguishReport> {
    config.validate()?;
    if n_samples < 100 {
        return Err(Error::InsufficientSamples {
            need: 100,
            got: n_samples,
        });
    }
    let eps = config.epsilon();
    let span = &eps * rat_i64(config.cells as i64, 1);
    let pad = &config.r + &candidate.window_radius + one();
    let gen_lo = -&pad;
    let gen_hi = &span + &pad;

    let mut e_y = 0u64;
    let mut e_z = 0u64;
    let mut sum_b_y = 0u64;
    let mut sum_d_y = 0u64;
    let mut sum_b_z = 0u64;
    let mut sum_d_z = 0u64;

    for i in 0..n_samples {
        let s = seed.wrapping_add(1).wrapping_add(3 * i);
        // Y side
        let x = sample_poisson(&gen_lo, &gen_hi, &config.lambda, s)?;
        let added = candidate.apply(&x.points);
        let mut y_points = x.points.clone();
        y_points.extend(added);
        y_points.sort();
        let (y1, y2) = fair_split(&y_points, s ^ 0x5eed_0001);
        let y1o = GridOccupancy::from_points(&y1, config.epsilon_inv);
        let y2o = GridOccupancy::from_points(&y2, config.epsilon_inv);
        let (b, _, d) = count_events(&y1o, &y2o, None, family, config);
        sum_b_y += b;
        sum_d_y += d;
        if config.b_within_threshold(b) && config.d_above_threshold(d) {
            e_y += 1;
        }
        // Z side
        let z = sample_poisson(&gen_lo, &gen_hi, &config.lambda_prime, s ^ 0x5eed_0002)?;
        let (z1, z2) = fair_split(&z.points, s ^ 0x5eed_0003);
        let z1o = GridOccupancy::from_points(&z1, config.epsilon_inv);
        let z2o = GridOccupancy::from_points(&z2, config.epsilon_inv);
        let (b, _, d) = count_events(&z1o, &z2o, None, family, config);
        sum_b_z += b;
        sum_d_z += d;
        if config.b_within_threshold(b) && config.d_above_threshold(d) {
            e_z += 1;
        }
    }

    let zcrit = 2.5758; // 99% Wilson intervals
    let ci_y = wilson_interval(e_y, n_samples, zcrit);
    let ci_z = wilson_interval(e_z, n_samples, zcrit);
    let disjoint = ci_y.0 > ci_z.1 || ci_z.0 > ci_y.1;
    let ceiling_log2 = config.z_ceiling_log2();
    let z_upper_within = if ci_z.1 <= 0.0 {
        true
    } else {
        ci_z.1.log2() <= ceiling_log2
    };
    Ok(DistinguishReport {
        candidate: candidate.name().to_string(),
        epsilon: to_fraction_string(&eps),
        r: to_fraction_string(&config.r),
        cells: config.cells,
        lambda: to_fraction_string(&config.lambda),
        lambda_prime: to_fraction_string(&config.lambda_prime),
        seed,
        n_samples,
        learned_error: family.measured_error.clone(),
        approximation_found: family.within_quarter_epsilon,
        p_hat_y: e_y as f64 / n_samples as f64,
        ci_y,
        p_hat_z: e_z as f64 / n_samples as f64,
        ci_z,
        mean_b_y: sum_b_y as f64 / n_samples as f64,
        mean_d_y: sum_d_y as f64 / n_samples as f64,
        mean_b_z: sum_b_z as f64 / n_samples as f64,
        mean_d_z: sum_d_z as f64 / n_samples as f64,
        z_ceiling_log2: ceiling_log2,
        z_upper_within_ceiling: z_upper_within,
        verdict: if disjoint { "DISTINGUISHED" } else { "INCONCLUSIVE" }.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat_i64;

    fn small_config() -> EventConfig {
        EventConfig {
            lambda: one(),
            lambda_prime: rat_i64(2, 1),
            epsilon_inv: 8,
            r: rat_i64(2, 1),
            cells: 64,
        }
    }

    #[test]
    fn event_a_examples() {
        let w = PointWindow::new(
            zero(),
            one(),
            vec![rat_i64(1, 20)],
            one(),
        )
        .unwrap();
        assert!(event_a(&w, &zero(), &rat_i64(1, 10)).unwrap());
        let empty = PointWindow::new(zero(), one(), vec![], one()).unwrap();
        assert!(!event_a(&empty, &zero(), &rat_i64(1, 10)).unwrap());
        // out-of-window error
        assert!(event_a(&w, &rat_i64(19, 20), &rat_i64(1, 10)).is_err());
    }

    #[test]
    fn unit_offset_candidate_applies() {
        let c = CandidateThickening::unit_offset();
        let added = c.apply(&[zero(), rat_i64(1, 2)]);
        assert_eq!(added, vec![one(), rat_i64(3, 2)]);
        // output disjoint from input
        let added = c.apply(&[zero(), one()]);
        assert_eq!(added, vec![rat_i64(2, 1)]);
    }

    #[test]
    fn thresholds_exact() {
        let cfg = small_config(); // L eps = 8
        assert!(cfg.b_within_threshold(39)); // 39 < 40
        assert!(!cfg.b_within_threshold(40));
        assert!(cfg.d_above_threshold(2)); // 2 > 1
        assert!(!cfg.d_above_threshold(1));
    }

    #[test]
    fn grid_occupancy_and_intervals() {
        let occ = GridOccupancy::from_points(&[rat_i64(1, 20)], 8);
        // 1/20 * 32 = 1.6 -> cell 1
        assert!(occ.occupied(1));
        assert!(occ.interval_hit(0));
        assert!(!occ.interval_hit(1));
    }

    #[test]
    fn no_add_candidate_has_empty_evidence() {
        let cfg = small_config();
        let fam = learn_b(&CandidateThickening::no_add(), &cfg, 10_000, 5).unwrap();
        assert!(fam.evidence.iter().all(|e| e.is_empty()));
        assert!(fam.max_error() == 0.0);
        assert!(fam.within_quarter_epsilon);
    }

    #[test]
    fn wilson_sane() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(lo < 0.5 && 0.5 < hi);
        assert!(hi - lo < 0.25);
        let (lo, _) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo, 0.0);
    }
}
