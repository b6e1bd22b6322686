//! Slice definitions, SLA deficit accounting, deficit-based slice
//! classification, the proportional-fair metric, and fairness metrics.
//!
//! Deficits follow a running throughput target: at TTI `t'` a slice's
//! deficit is `max(0, t' * gamma - delivered_so_far)`. Within a TTI the
//! scheduler decrements the deficit per granted RB; the cross-TTI refresh
//! recomputes it from cumulative history, so the two views always agree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slice identifier; doubles as the index into per-slice vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceId(pub usize);

impl std::fmt::Display for SliceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Intra-slice user selection policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    MaxRate,
    ProportionalFair,
}

/// Whether an RB may carry users of multiple slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingMode {
    Orthogonal,
    Sharing,
}

/// One tenant: its users and throughput SLA (bits per TTI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub id: SliceId,
    pub users: Vec<usize>,
    pub sla_bits_per_tti: f64,
    pub policy: Policy,
}

/// Validated set of slices with a user-to-slice reverse map.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicingPlan {
    slices: Vec<SliceConfig>,
    slice_of: Vec<Option<SliceId>>,
    num_users: usize,
}

impl SlicingPlan {
    pub fn new(slices: Vec<SliceConfig>, num_users: usize) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::InvalidConfig("plan needs at least one slice".into()));
        }
        let mut slice_of = vec![None; num_users];
        for (idx, s) in slices.iter().enumerate() {
            if s.id.0 != idx {
                return Err(Error::InvalidConfig(format!(
                    "slice ids must be contiguous from 0; found {} at position {idx}",
                    s.id
                )));
            }
            if s.users.is_empty() {
                return Err(Error::InvalidConfig(format!("slice {} has no users", s.id)));
            }
            if !(s.sla_bits_per_tti.is_finite() && s.sla_bits_per_tti >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "slice {} SLA must be >= 0, got {}",
                    s.id, s.sla_bits_per_tti
                )));
            }
            for &k in &s.users {
                if k >= num_users {
                    return Err(Error::InvalidConfig(format!(
                        "slice {} references user {k}, but the plan covers {num_users} users",
                        s.id
                    )));
                }
                if let Some(other) = slice_of[k] {
                    return Err(Error::InvalidConfig(format!(
                        "user {k} belongs to both slice {other} and slice {}",
                        s.id
                    )));
                }
                slice_of[k] = Some(s.id);
            }
        }
        Ok(Self {
            slices,
            slice_of,
            num_users,
        })
    }

    /// Contiguous user ranges with per-slice sizes, SLAs in bits/TTI.
    pub fn contiguous(sizes: &[usize], slas_bits_per_tti: &[f64], policy: Policy) -> Result<Self> {
        if sizes.len() != slas_bits_per_tti.len() {
            return Err(Error::InvalidConfig(format!(
                "{} slice sizes but {} SLA values",
                sizes.len(),
                slas_bits_per_tti.len()
            )));
        }
        let mut slices = Vec::with_capacity(sizes.len());
        let mut next = 0;
        for (idx, (&n, &sla)) in sizes.iter().zip(slas_bits_per_tti).enumerate() {
            slices.push(SliceConfig {
                id: SliceId(idx),
                users: (next..next + n).collect(),
                sla_bits_per_tti: sla,
                policy,
            });
            next += n;
        }
        Self::new(slices, next)
    }

    pub fn slices(&self) -> &[SliceConfig] {
        &self.slices
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    #[inline]
    pub fn slice_of(&self, user: usize) -> Option<SliceId> {
        self.slice_of.get(user).copied().flatten()
    }

    pub fn members(&self, s: SliceId) -> &[usize] {
        &self.slices[s.0].users
    }

    pub fn sla(&self, s: SliceId) -> f64 {
        self.slices[s.0].sla_bits_per_tti
    }

    pub fn slice_ids(&self) -> impl Iterator<Item = SliceId> + '_ {
        (0..self.slices.len()).map(SliceId)
    }
}

/// Per-slice running deficits plus cumulative delivered bits.
#[derive(Debug, Clone, PartialEq)]
pub struct DeficitState {
    deficits: Vec<f64>,
    delivered: Vec<f64>,
    current_tti: usize,
}

impl DeficitState {
    pub fn new(plan: &SlicingPlan) -> Self {
        Self {
            deficits: vec![0.0; plan.num_slices()],
            delivered: vec![0.0; plan.num_slices()],
            current_tti: 0,
        }
    }

    /// Recomputes each deficit from the running target at TTI `t_prime`
    /// and the cumulative delivered history: `max(0, t' * gamma - sum)`.
    pub fn refresh(&mut self, plan: &SlicingPlan, t_prime: usize) {
        self.current_tti = t_prime;
        for (idx, d) in self.deficits.iter_mut().enumerate() {
            *d = deficit_from_history(
                plan.slices()[idx].sla_bits_per_tti,
                t_prime,
                self.delivered[idx],
            );
        }
    }

    /// Credits `bits` to slice `s` and decrements its within-TTI deficit,
    /// clamped at zero.
    pub fn consume(&mut self, s: SliceId, bits: f64) -> Result<()> {
        if s.0 >= self.deficits.len() {
            return Err(Error::UnknownSlice(s.0));
        }
        debug_assert!(bits >= 0.0);
        self.deficits[s.0] = (self.deficits[s.0] - bits).max(0.0);
        self.delivered[s.0] += bits;
        Ok(())
    }

    pub fn deficit(&self, s: SliceId) -> f64 {
        self.deficits[s.0]
    }

    pub fn deficits(&self) -> &[f64] {
        &self.deficits
    }

    pub fn delivered(&self, s: SliceId) -> f64 {
        self.delivered[s.0]
    }

    pub fn delivered_all(&self) -> &[f64] {
        &self.delivered
    }

    pub fn current_tti(&self) -> usize {
        self.current_tti
    }

    pub fn total_deficit(&self) -> f64 {
        self.deficits.iter().sum()
    }

    pub fn any_active(&self) -> bool {
        self.deficits.iter().any(|&d| d > 0.0)
    }
}

/// Eq-style deficit: `max(0, t' * gamma - delivered)`.
pub fn deficit_from_history(gamma_bits_per_tti: f64, t_prime: usize, delivered: f64) -> f64 {
    (t_prime as f64 * gamma_bits_per_tti - delivered).max(0.0)
}

/// Slices with at-or-above-average deficit (`large`) vs below-average
/// (`small`), among active slices only.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaGroups {
    pub large: Vec<SliceId>,
    pub small: Vec<SliceId>,
    pub delta_avg: f64,
}

/// Splits active slices (deficit > 0) around their mean deficit; slices at
/// exactly the mean land in `large`. Returns `None` when nothing is active,
/// which terminates the scheduling loop.
pub fn classify_slices(state: &DeficitState) -> Option<DeltaGroups> {
    let active: Vec<usize> = state
        .deficits()
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0)
        .map(|(i, _)| i)
        .collect();
    if active.is_empty() {
        return None;
    }
    let delta_avg =
        active.iter().map(|&i| state.deficits()[i]).sum::<f64>() / active.len() as f64;
    let mut large = Vec::new();
    let mut small = Vec::new();
    for &i in &active {
        if state.deficits()[i] >= delta_avg {
            large.push(SliceId(i));
        } else {
            small.push(SliceId(i));
        }
    }
    Some(DeltaGroups {
        large,
        small,
        delta_avg,
    })
}

/// Proportional-fair bookkeeping: cumulative per-user delivered bits with
/// intra-slice normalization.
#[derive(Debug, Clone)]
pub struct PfState {
    cumulative: Vec<f64>,
    epsilon: f64,
}

impl PfState {
    pub fn new(num_users: usize) -> Self {
        Self {
            cumulative: vec![0.0; num_users],
            epsilon: 1e-6,
        }
    }

    pub fn with_epsilon(num_users: usize, epsilon: f64) -> Self {
        Self {
            cumulative: vec![0.0; num_users],
            epsilon,
        }
    }

    pub fn record(&mut self, user: usize, bits: f64) {
        self.cumulative[user] += bits;
    }

    pub fn cumulative(&self, user: usize) -> f64 {
        self.cumulative[user]
    }

    /// Normalized accumulated rate of `user` within its slice. Before any
    /// history exists the whole slice reads 1; users with no history in a
    /// slice that has some are floored at `epsilon`.
    pub fn normalized_rate(&self, plan: &SlicingPlan, user: usize) -> f64 {
        let Some(s) = plan.slice_of(user) else {
            return 1.0;
        };
        let max = plan
            .members(s)
            .iter()
            .map(|&k| self.cumulative[k])
            .fold(0.0, f64::max);
        if max <= 0.0 {
            1.0
        } else {
            (self.cumulative[user] / max).max(self.epsilon)
        }
    }

    /// PF metric `g_hat / r_hat`: the user's gain normalized by its slice's
    /// maximum on this RB, over its normalized accumulated rate. `gain_of`
    /// must yield the same-TTI gain of any user in the slice.
    pub fn metric<F: FnMut(usize) -> f64>(
        &self,
        plan: &SlicingPlan,
        user: usize,
        mut gain_of: F,
    ) -> f64 {
        let Some(s) = plan.slice_of(user) else {
            return 0.0;
        };
        let own = gain_of(user);
        let max = plan
            .members(s)
            .iter()
            .map(|&k| gain_of(k))
            .fold(0.0, f64::max);
        if max <= 0.0 {
            return 0.0;
        }
        (own / max) / self.normalized_rate(plan, user)
    }
}

/// Jain's fairness index `(sum x)^2 / (n * sum x^2)`: 1 iff all rates are
/// equal, decreasing with dispersion.
pub fn jains_index(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::InvalidConfig("fairness of an empty set".into()));
    }
    if rates.iter().any(|&r| !(r.is_finite() && r >= 0.0)) {
        return Err(Error::InvalidConfig("rates must be non-negative".into()));
    }
    let sum: f64 = rates.iter().sum();
    if sum == 0.0 {
        return Err(Error::AllZeroRates);
    }
    let sum_sq: f64 = rates.iter().map(|r| r * r).sum();
    Ok(sum * sum / (rates.len() as f64 * sum_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn plan(slas: &[f64]) -> SlicingPlan {
        SlicingPlan::contiguous(&vec![2; slas.len()], slas, Policy::MaxRate).unwrap()
    }

    #[test]
    fn refresh_matches_running_target() {
        let p = plan(&[10.0]);
        let mut state = DeficitState::new(&p);
        state.consume(SliceId(0), 4.0).unwrap();
        state.refresh(&p, 1);
        assert_eq!(state.deficit(SliceId(0)), 6.0);

        let mut over = DeficitState::new(&p);
        over.consume(SliceId(0), 15.0).unwrap();
        over.refresh(&p, 1);
        assert_eq!(over.deficit(SliceId(0)), 0.0);

        let mut multi = DeficitState::new(&p);
        multi.consume(SliceId(0), 25.0).unwrap();
        multi.refresh(&p, 3);
        assert_eq!(multi.deficit(SliceId(0)), 5.0);
    }

    #[test]
    fn consume_clamps_and_accumulates() {
        let p = plan(&[10.0]);
        let mut state = DeficitState::new(&p);
        state.refresh(&p, 1);
        assert_eq!(state.deficit(SliceId(0)), 10.0);
        state.consume(SliceId(0), 4.0).unwrap();
        assert_eq!(state.deficit(SliceId(0)), 6.0);
        state.consume(SliceId(0), 0.0).unwrap();
        assert_eq!(state.deficit(SliceId(0)), 6.0);
        state.consume(SliceId(0), 11.0).unwrap();
        assert_eq!(state.deficit(SliceId(0)), 0.0);
        assert_eq!(state.delivered(SliceId(0)), 15.0);
        assert!(state.consume(SliceId(9), 1.0).is_err());
    }

    #[test]
    fn consume_order_independent_per_tti() {
        let p = plan(&[100.0]);
        let chunks = [12.5, 30.0, 7.25, 40.0];
        let mut forward = DeficitState::new(&p);
        forward.refresh(&p, 1);
        let mut backward = forward.clone();
        for &c in &chunks {
            forward.consume(SliceId(0), c).unwrap();
        }
        for &c in chunks.iter().rev() {
            backward.consume(SliceId(0), c).unwrap();
        }
        assert_eq!(forward.deficit(SliceId(0)), backward.deficit(SliceId(0)));

        // Totals above the deficit clamp to zero from any order.
        let mut a = DeficitState::new(&p);
        a.refresh(&p, 1);
        let mut b = a.clone();
        for &c in &[60.0, 70.0] {
            a.consume(SliceId(0), c).unwrap();
        }
        for &c in &[70.0, 60.0] {
            b.consume(SliceId(0), c).unwrap();
        }
        assert_eq!(a.deficit(SliceId(0)), 0.0);
        assert_eq!(b.deficit(SliceId(0)), 0.0);
    }

    #[test]
    fn classification_follows_mean_with_inclusive_large() {
        let p = plan(&[4.0, 2.0, 0.0]);
        let mut state = DeficitState::new(&p);
        state.refresh(&p, 1);
        let groups = classify_slices(&state).unwrap();
        assert_eq!(groups.delta_avg, 3.0);
        assert_eq!(groups.large, vec![SliceId(0)]);
        assert_eq!(groups.small, vec![SliceId(1)]);

        let p = plan(&[5.0, 5.0]);
        let mut state = DeficitState::new(&p);
        state.refresh(&p, 1);
        let groups = classify_slices(&state).unwrap();
        assert_eq!(groups.large.len(), 2);
        assert!(groups.small.is_empty());

        let p = plan(&[0.0, 7.0]);
        let mut state = DeficitState::new(&p);
        state.refresh(&p, 1);
        let groups = classify_slices(&state).unwrap();
        assert_eq!(groups.large, vec![SliceId(1)]);

        let p = plan(&[0.0]);
        let mut state = DeficitState::new(&p);
        state.refresh(&p, 1);
        assert!(classify_slices(&state).is_none());
    }

    #[test]
    fn classification_scale_invariant() {
        let p = plan(&[8.0, 2.0, 6.0]);
        let mut state = DeficitState::new(&p);
        state.refresh(&p, 1);
        let base = classify_slices(&state).unwrap();

        let scaled_plan = plan(&[80.0, 20.0, 60.0]);
        let mut scaled = DeficitState::new(&scaled_plan);
        scaled.refresh(&scaled_plan, 1);
        let scaled_groups = classify_slices(&scaled).unwrap();
        assert_eq!(base.large, scaled_groups.large);
        assert_eq!(base.small, scaled_groups.small);
    }

    #[test]
    fn pf_metric_examples() {
        let p = plan(&[10.0]);

        // Equal history, equal gains: equal metrics.
        let mut pf = PfState::new(2);
        pf.record(0, 5.0);
        pf.record(1, 5.0);
        let m0 = pf.metric(&p, 0, |_| 2.0);
        let m1 = pf.metric(&p, 1, |_| 2.0);
        assert_eq!(m0, m1);

        // r_hat = (1, 0.5) under equal gains: metrics 1 and 2.
        let mut pf = PfState::new(2);
        pf.record(0, 10.0);
        pf.record(1, 5.0);
        assert_relative_eq!(pf.metric(&p, 0, |_| 3.0), 1.0);
        assert_relative_eq!(pf.metric(&p, 1, |_| 3.0), 2.0);

        // Single-user slice: g_hat = 1, metric = 1 / r_hat.
        let solo = SlicingPlan::contiguous(&[1], &[1.0], Policy::ProportionalFair).unwrap();
        let mut pf = PfState::new(1);
        pf.record(0, 4.0);
        assert_relative_eq!(pf.metric(&solo, 0, |_| 9.0), 1.0);
    }

    #[test]
    fn pf_ranking_invariant_under_gain_scaling() {
        let p = plan(&[10.0]);
        let mut pf = PfState::new(2);
        pf.record(0, 8.0);
        pf.record(1, 2.0);
        let gains = [1.0, 1.8];
        let base: Vec<f64> = (0..2).map(|k| pf.metric(&p, k, |u| gains[u])).collect();
        let scaled: Vec<f64> = (0..2).map(|k| pf.metric(&p, k, |u| 37.5 * gains[u])).collect();
        assert_eq!(
            base[0] > base[1],
            scaled[0] > scaled[1],
            "scaling must not change the intra-slice ranking"
        );
        assert_relative_eq!(base[0], scaled[0], max_relative = 1e-12);
    }

    #[test]
    fn pf_warm_start_prevents_division_by_zero() {
        let p = plan(&[10.0]);
        let pf = PfState::new(2);
        let m = pf.metric(&p, 0, |_| 1.0);
        assert!(m.is_finite() && m > 0.0);
    }

    #[test]
    fn jains_index_values() {
        assert_relative_eq!(jains_index(&[3.0, 3.0, 3.0]).unwrap(), 1.0);
        assert_relative_eq!(jains_index(&[1.0, 0.0]).unwrap(), 0.5);
        assert_relative_eq!(
            jains_index(&[1.0, 2.0, 3.0]).unwrap(),
            36.0 / 42.0,
            epsilon = 1e-12
        );
        assert!(matches!(jains_index(&[0.0, 0.0]), Err(Error::AllZeroRates)));
    }

    #[test]
    fn plan_rejects_overlapping_slices() {
        let bad = SlicingPlan::new(
            vec![
                SliceConfig {
                    id: SliceId(0),
                    users: vec![0, 1],
                    sla_bits_per_tti: 1.0,
                    policy: Policy::MaxRate,
                },
                SliceConfig {
                    id: SliceId(1),
                    users: vec![1, 2],
                    sla_bits_per_tti: 1.0,
                    policy: Policy::MaxRate,
                },
            ],
            3,
        );
        assert!(bad.is_err());
    }
}
