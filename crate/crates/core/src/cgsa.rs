//! Per-parameter bit allocation under a total bit budget.
//!
//! The allocation minimizes `sum_j (d / 4^b_j) |h_j|^2` subject to
//! `sum_j b_j <= B` with every `b_j` on the ladder `{0, 2, 4, 8}`. The main
//! entry point is [`cgsa_optimize`], a constraint-guided simulated annealing
//! search:
//!
//! * the initial solution gives 2 bits to the largest-magnitude elements
//!   until the budget runs out (promoting further, largest first, when every
//!   element already holds 2 bits);
//! * a move picks two ranks `i < j` in the magnitude order, promotes the
//!   larger element one rung and demotes the smaller one one rung. If the
//!   promotion costs more than the demotion frees, the cheapest further
//!   demotions below the promoted element pay for it. Budget left unused
//!   after a move goes to the promotions that lower the objective most;
//! * states are kept sorted: a larger element never holds fewer bits than a
//!   smaller one. Swapping two bit-widths into that order never increases the
//!   objective, so every search state is a block of 8-bit elements, then
//!   4-bit, then 2-bit, then dropped ones;
//! * with a small probability the move runs the other way (bits flow from the
//!   larger element to the smaller one). Without it the search can only ever
//!   sharpen the allocation and gets stuck behind early over-promotions.
//!
//! Deltas are measured on the objective divided by `||h||^2`, so one
//! temperature schedule works for updates of any magnitude.
//!
//! [`exhaustive_oracle`] and [`dp_oracle`] compute exact minimizers for
//! validation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::quantizer::{check_len, BitAllocation, DenseVector, BIT_LADDER};

/// Largest vector length accepted by [`exhaustive_oracle`].
pub const MAX_EXHAUSTIVE_LEN: usize = 12;

/// `4^-b` for each rung of the ladder.
const RUNG_FACTOR: [f64; 4] = [1.0, 1.0 / 16.0, 1.0 / 256.0, 1.0 / 65536.0];

/// Budget units (2 bits each) per rung.
const RUNG_UNITS: [usize; 4] = [0, 1, 2, 4];

/// Annealing schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgsaParams {
    pub initial_temperature: f64,
    /// Geometric factor applied to the temperature after every iteration.
    pub cooling_rate: f64,
    pub min_temperature: f64,
    pub max_iterations: usize,
    /// Probability that a move transfers bits from the larger element to the
    /// smaller one instead.
    pub reverse_probability: f64,
}

impl Default for CgsaParams {
    fn default() -> Self {
        Self {
            initial_temperature: 1000.0,
            cooling_rate: 0.995,
            min_temperature: 1e-6,
            max_iterations: 5000,
            reverse_probability: 0.3,
        }
    }
}

impl CgsaParams {
    /// Default temperatures with `max_iterations` steps and a cooling rate
    /// that reaches `min_temperature` exactly at the last step.
    pub fn with_iterations(max_iterations: usize) -> Self {
        let base = Self::default();
        let steps = max_iterations.max(1) as f64;
        Self {
            max_iterations,
            cooling_rate: (base.min_temperature / base.initial_temperature).powf(1.0 / steps),
            ..base
        }
    }

    /// Iteration count scaled to the vector length: `iterations_per_element * d`.
    pub fn scaled(len: usize, iterations_per_element: usize) -> Self {
        Self::with_iterations((len * iterations_per_element).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_string()));
        if !(self.initial_temperature > 0.0 && self.initial_temperature.is_finite()) {
            return bad("initial temperature must be positive");
        }
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return bad("cooling rate must lie in (0, 1)");
        }
        if !(self.min_temperature > 0.0 && self.min_temperature < self.initial_temperature) {
            return bad("min temperature must be positive and below the initial temperature");
        }
        if self.max_iterations == 0 {
            return bad("max iterations must be positive");
        }
        if !(0.0..=1.0).contains(&self.reverse_probability) {
            return bad("reverse probability must lie in [0, 1]");
        }
        Ok(())
    }
}

fn weight(len: f64, v: f32) -> f64 {
    let v = v as f64;
    len * (v * v)
}

/// `sum_j (d / 4^b_j) |h_j|^2`, the bound of mixed quantization scaled by
/// `||h||^2`.
pub fn objective(h: &DenseVector, alloc: &BitAllocation) -> Result<f64> {
    check_len(h.len(), alloc.len())?;
    let d = h.len() as f64;
    Ok(h
        .iter()
        .zip(alloc.bits())
        .map(|(&v, &b)| weight(d, v) / 4f64.powi(b as i32))
        .sum())
}

/// Indices of `h` by descending magnitude; ties keep the lower index first.
pub fn magnitude_order(h: &DenseVector) -> Vec<usize> {
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by(|&a, &b| h[b].abs().total_cmp(&h[a].abs()).then(a.cmp(&b)));
    order
}

fn check_budget(len: usize, budget: u64) -> Result<()> {
    if !budget.is_multiple_of(2) {
        return Err(Error::OddBudget(budget));
    }
    if budget > 8 * len as u64 {
        return Err(Error::BudgetTooLarge { budget, len });
    }
    Ok(())
}

/// Greedy starting point: 2 bits each for the `B/2` largest elements. When
/// the budget covers more than 2 bits per element, the leftover promotes
/// elements in magnitude order, each as far up the ladder as it can go.
pub fn initial_allocation(h: &DenseVector, budget: u64) -> Result<BitAllocation> {
    check_budget(h.len(), budget)?;
    let order = magnitude_order(h);
    let mut bits = vec![0u8; h.len()];
    let mut remaining = budget;
    for &j in &order {
        if remaining < 2 {
            break;
        }
        bits[j] = 2;
        remaining -= 2;
    }
    for &j in &order {
        for next in [4u8, 8] {
            let cost = (next - bits[j]) as u64;
            if bits[j] == next / 2 && cost <= remaining {
                bits[j] = next;
                remaining -= cost;
            }
        }
    }
    BitAllocation::new(bits, budget)
}

/// Block boundaries of a sorted allocation: ranks `[0, ends[0])` hold 8 bits,
/// `[ends[0], ends[1])` 4 bits, `[ends[1], ends[2])` 2 bits, the rest 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Blocks {
    ends: [usize; 3],
}

impl Blocks {
    /// Rung index (into [`BIT_LADDER`]) held by `rank`.
    fn rung(&self, rank: usize) -> usize {
        match self.ends.iter().position(|&end| rank < end) {
            Some(p) => 3 - p,
            None => 0,
        }
    }

    /// Move the top element of rung `rung` one rung up.
    fn promote(&mut self, rung: usize) {
        self.ends[2 - rung] += 1;
    }

    /// Move the bottom element of rung `rung` one rung down.
    fn demote(&mut self, rung: usize) {
        self.ends[3 - rung] -= 1;
    }

    fn is_ordered(&self, len: usize) -> bool {
        self.ends[0] <= self.ends[1] && self.ends[1] <= self.ends[2] && self.ends[2] <= len
    }

    fn used_bits(&self) -> u64 {
        let [c8, c4, c2] = self.ends.map(|e| e as u64);
        8 * c8 + 4 * (c4 - c8) + 2 * (c2 - c4)
    }

    /// `(start, end, rung)` for each non-dropped block.
    fn spans(&self) -> [(usize, usize, usize); 4] {
        let [c8, c4, c2] = self.ends;
        [(0, c8, 3), (c8, c4, 2), (c4, c2, 1), (c2, usize::MAX, 0)]
    }
}

/// A proposed neighbour of the current search state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    blocks: Blocks,
    used_bits: u64,
    value: f64,
}

impl Candidate {
    /// Normalized objective of the candidate.
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn used_bits(&self) -> u64 {
        self.used_bits
    }
}

/// State of one annealing run. Allocations are stored in magnitude order as
/// block boundaries; values are the objective divided by `||h||^2`.
#[derive(Debug, Clone)]
pub struct AllocationSearchState {
    order: Vec<usize>,
    /// Normalized weights `d |h_j|^2 / ||h||^2` in rank order, prefix-summed.
    prefix: Vec<f64>,
    budget: u64,
    current: Blocks,
    current_value: f64,
    best: Blocks,
    best_value: f64,
}

impl AllocationSearchState {
    /// Starts from [`initial_allocation`].
    pub fn new(h: &DenseVector, budget: u64) -> Result<Self> {
        let initial = initial_allocation(h, budget)?;
        let order = magnitude_order(h);
        let d = h.len() as f64;
        let norm_squared = h.norm_squared();
        let mut prefix = Vec::with_capacity(h.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &j in &order {
            if norm_squared > 0.0 {
                acc += weight(d, h[j]) / norm_squared;
            }
            prefix.push(acc);
        }

        let counts = initial.rung_counts();
        let c8 = counts[3];
        let blocks = Blocks {
            ends: [c8, c8 + counts[2], c8 + counts[2] + counts[1]],
        };
        debug_assert!(order
            .iter()
            .enumerate()
            .all(|(rank, &j)| BIT_LADDER[blocks.rung(rank)] == initial.bits()[j]));

        let mut state = Self {
            order,
            prefix,
            budget,
            current: blocks,
            current_value: 0.0,
            best: blocks,
            best_value: 0.0,
        };
        state.current_value = state.value_of(&blocks);
        state.best_value = state.current_value;
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Element indices by descending magnitude.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn used_bits(&self) -> u64 {
        self.current.used_bits()
    }

    pub fn current_value(&self) -> f64 {
        self.current_value
    }

    pub fn best_value(&self) -> f64 {
        self.best_value
    }

    pub fn current(&self) -> BitAllocation {
        self.materialize(&self.current)
    }

    pub fn best(&self) -> BitAllocation {
        self.materialize(&self.best)
    }

    /// Bit-width currently held by the element at `rank`.
    pub fn bits_at_rank(&self, rank: usize) -> u8 {
        BIT_LADDER[self.current.rung(rank)]
    }

    pub fn candidate_allocation(&self, candidate: &Candidate) -> BitAllocation {
        self.materialize(&candidate.blocks)
    }

    fn materialize(&self, blocks: &Blocks) -> BitAllocation {
        let mut bits = vec![0u8; self.order.len()];
        for (rank, &j) in self.order.iter().enumerate() {
            bits[j] = BIT_LADDER[blocks.rung(rank)];
        }
        BitAllocation::new(bits, self.budget).expect("search states stay within budget")
    }

    fn weight_at(&self, rank: usize) -> f64 {
        self.prefix[rank + 1] - self.prefix[rank]
    }

    fn value_of(&self, blocks: &Blocks) -> f64 {
        let len = self.order.len();
        blocks
            .spans()
            .iter()
            .map(|&(start, end, rung)| {
                let end = end.min(len);
                (self.prefix[end] - self.prefix[start]) * RUNG_FACTOR[rung]
            })
            .sum()
    }

    /// Promote the element at rank `promote` one rung and demote the one at
    /// rank `demote` one rung, then restore sorted order.
    ///
    /// When `promote < demote` and the budget is exceeded, the cheapest
    /// demotions of elements ranked below the promoted one are added until
    /// it fits. Any slack left afterwards is filled greedily. Returns `None`
    /// if a rung limit is hit or the budget cannot be met.
    pub fn transfer(&self, promote: usize, demote: usize) -> Option<Candidate> {
        let len = self.order.len();
        if promote == demote || promote >= len || demote >= len {
            return None;
        }
        let up = self.current.rung(promote);
        let down = self.current.rung(demote);
        if up == 3 || down == 0 {
            return None;
        }
        let mut blocks = self.current;
        blocks.promote(up);
        blocks.demote(down);
        if !blocks.is_ordered(len) {
            return None;
        }
        if promote < demote {
            // the promoted element now sits at the bottom of rung `up + 1`
            while blocks.used_bits() > self.budget {
                let cheapest = (1..=up)
                    .filter_map(|rung| {
                        let (start, end, _) = blocks.spans()[3 - rung];
                        (end > start).then(|| {
                            let rank = end - 1;
                            let cost =
                                self.weight_at(rank) * (RUNG_FACTOR[rung - 1] - RUNG_FACTOR[rung]);
                            (cost, rung)
                        })
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                match cheapest {
                    Some((_, rung)) => blocks.demote(rung),
                    None => return None,
                }
            }
        }
        if blocks.used_bits() > self.budget {
            return None;
        }
        self.fill(&mut blocks);
        Some(Candidate {
            blocks,
            used_bits: blocks.used_bits(),
            value: self.value_of(&blocks),
        })
    }

    /// Spend leftover budget: promote block tops while one fits, taking the
    /// largest decrease first.
    fn fill(&self, blocks: &mut Blocks) {
        let len = self.order.len();
        loop {
            let slack = self.budget - blocks.used_bits();
            let best = (0..3)
                .filter_map(|rung| {
                    let (start, end, _) = blocks.spans()[3 - rung];
                    let cost = 2 * (RUNG_UNITS[rung + 1] - RUNG_UNITS[rung]) as u64;
                    (start < end.min(len) && cost <= slack).then(|| {
                        let gain = self.weight_at(start) * (RUNG_FACTOR[rung] - RUNG_FACTOR[rung + 1]);
                        (gain, rung)
                    })
                })
                .filter(|&(gain, _)| gain > 0.0)
                .max_by(|a, b| a.0.total_cmp(&b.0));
            match best {
                Some((_, rung)) => blocks.promote(rung),
                None => return,
            }
        }
    }

    /// Make `candidate` the current state, updating the best one seen.
    pub fn apply(&mut self, candidate: Candidate) {
        self.current = candidate.blocks;
        self.current_value = candidate.value;
        if candidate.value < self.best_value {
            self.best = candidate.blocks;
            self.best_value = candidate.value;
        }
    }
}

/// Draw ranks `i < j` uniformly and build the move from them: bits flow from
/// `j` to `i`, or from `i` to `j` with probability `reverse_probability`.
pub fn propose_move<R: Rng + ?Sized>(
    state: &AllocationSearchState,
    reverse_probability: f64,
    rng: &mut R,
) -> Option<Candidate> {
    let len = state.len();
    if len < 2 {
        return None;
    }
    let a = rng.random_range(0..len);
    let mut b = rng.random_range(0..len - 1);
    if b >= a {
        b += 1;
    }
    let (i, j) = (a.min(b), a.max(b));
    let reverse = reverse_probability > 0.0 && rng.random::<f64>() < reverse_probability;
    if reverse {
        state.transfer(j, i)
    } else {
        state.transfer(i, j)
    }
}

/// Metropolis rule: always take improvements, otherwise accept with
/// probability `exp(-delta / temperature)`.
pub fn accept<R: Rng + ?Sized>(delta: f64, temperature: f64, rng: &mut R) -> bool {
    if delta < 0.0 {
        return true;
    }
    rng.random::<f64>() < (-delta / temperature).exp()
}

/// Anneal from [`initial_allocation`] and return the best allocation seen.
pub fn cgsa_optimize<R: Rng + ?Sized>(
    h: &DenseVector,
    budget: u64,
    params: &CgsaParams,
    rng: &mut R,
) -> Result<BitAllocation> {
    params.validate()?;
    let mut state = AllocationSearchState::new(h, budget)?;
    let mut temperature = params.initial_temperature;
    let mut remaining = params.max_iterations;
    while temperature > params.min_temperature && remaining > 0 {
        if let Some(candidate) = propose_move(&state, params.reverse_probability, rng) {
            if accept(candidate.value - state.current_value, temperature, rng) {
                state.apply(candidate);
            }
        }
        temperature *= params.cooling_rate;
        remaining -= 1;
    }
    Ok(state.best())
}

/// Exact minimizer by enumeration of `{0,2,4,8}^d` within budget. Ties go
/// to the lexicographically smallest bit vector.
pub fn exhaustive_oracle(h: &DenseVector, budget: u64) -> Result<BitAllocation> {
    if h.len() > MAX_EXHAUSTIVE_LEN {
        return Err(Error::SearchTooLarge {
            len: h.len(),
            max: MAX_EXHAUSTIVE_LEN,
        });
    }
    let d = h.len() as f64;
    let weights: Vec<f64> = h.iter().map(|&v| weight(d, v)).collect();

    struct Search<'a> {
        weights: &'a [f64],
        budget: u64,
        bits: Vec<u8>,
        best: Option<(f64, Vec<u8>)>,
    }

    fn visit(s: &mut Search<'_>, j: usize, used: u64, partial: f64) {
        if j == s.weights.len() {
            if s.best.as_ref().is_none_or(|(v, _)| partial < *v) {
                s.best = Some((partial, s.bits.clone()));
            }
            return;
        }
        for (rung, &b) in BIT_LADDER.iter().enumerate() {
            if used + b as u64 > s.budget {
                break;
            }
            s.bits[j] = b;
            visit(s, j + 1, used + b as u64, partial + s.weights[j] * RUNG_FACTOR[rung]);
        }
    }

    let mut search = Search {
        weights: &weights,
        budget,
        bits: vec![0; h.len()],
        best: None,
    };
    visit(&mut search, 0, 0, 0.0);
    let (_, bits) = search.best.expect("all-zero allocation is always feasible");
    BitAllocation::new(bits, budget)
}

/// Exact minimizer by dynamic programming over the remaining budget (a
/// multiple-choice knapsack; the objective is separable across elements).
/// Memory is `d * (B/2 + 1)` bytes.
pub fn dp_oracle(h: &DenseVector, budget: u64) -> Result<BitAllocation> {
    let len = h.len();
    let units = ((budget / 2) as usize).min(4 * len);
    let d = len as f64;
    let width = units + 1;
    let mut choice = vec![0u8; len * width];
    let mut prev = vec![0.0f64; width];
    let mut next = vec![0.0f64; width];
    for (j, &v) in h.iter().enumerate() {
        let w = weight(d, v);
        for u in 0..width {
            let mut best = f64::INFINITY;
            let mut pick = 0u8;
            for rung in 0..4 {
                if RUNG_UNITS[rung] > u {
                    break;
                }
                let value = prev[u - RUNG_UNITS[rung]] + w * RUNG_FACTOR[rung];
                if value < best {
                    best = value;
                    pick = rung as u8;
                }
            }
            next[u] = best;
            choice[j * width + u] = pick;
        }
        std::mem::swap(&mut prev, &mut next);
    }
    let mut bits = vec![0u8; len];
    let mut u = units;
    for j in (0..len).rev() {
        let rung = choice[j * width + u] as usize;
        bits[j] = BIT_LADDER[rung];
        u -= RUNG_UNITS[rung];
    }
    BitAllocation::new(bits, budget)
}
