//! Zero-forcing beamforming and Shannon-rate estimation for a candidate
//! user set on a single RB.
//!
//! The precoder is `W = H (H^H H + eps I)^-1`. Transmit power is split
//! equally across streams, and each stream's SNR carries the effective gain
//! `|h_k^H w_k|^2 / ||w_k||^2` (`1 / ||w_k||^2` under exact zero forcing),
//! so the power cost of inverting correlated channels shows up directly as
//! rate loss.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::ChannelTensor;
use crate::error::{Error, Result};

/// Condition-number cap for the unregularized precoder path.
pub const CONDITION_CAP: f64 = 1e12;

/// Default Tikhonov regularization for the precoder.
pub const DEFAULT_REG_EPS: f64 = 1e-6;

/// Ordered set of distinct user indices to co-schedule on one RB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSet(Vec<usize>);

impl UserSet {
    pub fn new(users: Vec<usize>) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::InvalidConfig("user set is empty".into()));
        }
        let mut seen = users.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("duplicate user in user set".into()));
        }
        Ok(Self(users))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Transmit power, noise power, and the RB time-frequency extent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinkBudget {
    /// Total transmit power shared by all streams on the RB, watts.
    pub power_watts: f64,
    /// Noise power per stream, watts.
    pub noise_watts: f64,
    pub rb_bandwidth_hz: f64,
    pub tti_seconds: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        // 20 MHz over 52 RBs, 1 ms slots, 30 dB transmit SNR.
        Self {
            power_watts: 1.0,
            noise_watts: 1e-3,
            rb_bandwidth_hz: 20e6 / 52.0,
            tti_seconds: 1e-3,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("power_watts", self.power_watts),
            ("noise_watts", self.noise_watts),
            ("rb_bandwidth_hz", self.rb_bandwidth_hz),
            ("tti_seconds", self.tti_seconds),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "link budget field {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Bits carried by one RB-TTI at spectral efficiency `log2(1 + snr)`.
    pub fn bits(&self, snr: f64) -> f64 {
        self.rb_bandwidth_hz * self.tti_seconds * (1.0 + snr).log2()
    }

    pub fn mbps_to_bits_per_tti(&self, mbps: f64) -> f64 {
        mbps * 1e6 * self.tti_seconds
    }

    pub fn bits_per_tti_to_mbps(&self, bits: f64) -> f64 {
        bits / (1e6 * self.tti_seconds)
    }
}

/// Zero-forcing precoder for one RB along with per-column effective gains.
#[derive(Debug, Clone)]
pub struct PrecodingMatrix {
    w: DMatrix<Complex64>,
    effective_gains: Vec<f64>,
}

impl PrecodingMatrix {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.w
    }

    /// Per-stream effective gain `|h_k^H w_k|^2 / ||w_k||^2`. Equals
    /// `1 / ||w_k||^2` under exact zero forcing; when regularization masks a
    /// rank-deficient Gram matrix the numerator keeps the post-precoding
    /// signal gain honest.
    pub fn effective_gains(&self) -> &[f64] {
        &self.effective_gains
    }
}

/// Computes `W = H (H^H H + eps I)^-1` for an M x |U| channel submatrix.
///
/// With `reg_eps = 0` the Gram condition number is checked against
/// [`CONDITION_CAP`] and rank-deficient inputs are rejected.
pub fn zf_precoder(h_sub: &DMatrix<Complex64>, reg_eps: f64) -> Result<PrecodingMatrix> {
    let (m, u) = h_sub.shape();
    if u == 0 {
        return Err(Error::InvalidConfig("precoder needs at least one user".into()));
    }
    if u > m {
        return Err(Error::OverSubscribed { users: u, antennas: m });
    }
    if !(reg_eps.is_finite() && reg_eps >= 0.0) {
        return Err(Error::InvalidConfig(format!("reg_eps must be >= 0, got {reg_eps}")));
    }

    let mut gram = h_sub.adjoint() * h_sub;
    if reg_eps == 0.0 {
        let svd = h_sub
            .clone()
            .try_svd(false, false, f64::EPSILON, 1000)
            .ok_or(Error::SingularChannel { condition: f64::INFINITY })?;
        let max_sv = svd.singular_values.max();
        let min_sv = svd.singular_values.min();
        let condition = if min_sv > 0.0 {
            (max_sv / min_sv).powi(2)
        } else {
            f64::INFINITY
        };
        if !condition.is_finite() || condition > CONDITION_CAP {
            return Err(Error::SingularChannel { condition });
        }
    } else {
        for i in 0..u {
            gram[(i, i)] += Complex64::new(reg_eps, 0.0);
        }
    }

    let inverse = gram
        .try_inverse()
        .ok_or(Error::SingularChannel { condition: f64::INFINITY })?;
    let w = h_sub * inverse;
    let effective_gains = (0..u)
        .map(|k| {
            let norm_sq = w.column(k).norm_squared();
            if norm_sq > 0.0 {
                let signal: Complex64 = h_sub.column(k).dotc(&w.column(k));
                signal.norm_sqr() / norm_sq
            } else {
                0.0
            }
        })
        .collect();
    Ok(PrecodingMatrix { w, effective_gains })
}

/// Per-user rates (bits per TTI) for co-scheduling `h_sub`'s columns on one
/// RB under an equal power split.
pub fn zf_rates(h_sub: &DMatrix<Complex64>, budget: &LinkBudget, reg_eps: f64) -> Result<Vec<f64>> {
    let precoder = zf_precoder(h_sub, reg_eps)?;
    let share = budget.power_watts / h_sub.ncols() as f64;
    Ok(precoder
        .effective_gains()
        .iter()
        .map(|&g| budget.bits(share * g / budget.noise_watts))
        .collect())
}

/// Rates achieved by `users` on `(b, t)`, aligned with the set's order.
pub fn achieved_rates(
    tensor: &ChannelTensor,
    b: usize,
    t: usize,
    users: &UserSet,
    budget: &LinkBudget,
    reg_eps: f64,
) -> Result<Vec<f64>> {
    if b >= tensor.num_rbs() || t >= tensor.num_ttis() {
        return Err(Error::IndexOutOfRange(format!(
            "(b={b}, t={t}) outside ({}, {})",
            tensor.num_rbs(),
            tensor.num_ttis()
        )));
    }
    if let Some(&bad) = users.as_slice().iter().find(|&&k| k >= tensor.num_users()) {
        return Err(Error::IndexOutOfRange(format!(
            "user {bad} outside 0..{}",
            tensor.num_users()
        )));
    }
    let h_sub = tensor.submatrix(b, t, users.as_slice());
    zf_rates(&h_sub, budget, reg_eps)
}

/// Sum of the scheduled users' rates that belong to one slice.
pub fn slice_rate<F: FnMut(usize) -> bool>(users: &[usize], rates: &[f64], mut in_slice: F) -> f64 {
    users
        .iter()
        .zip(rates)
        .filter(|(&k, _)| in_slice(k))
        .map(|(_, &r)| r)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit_budget() -> LinkBudget {
        LinkBudget {
            power_watts: 1.0,
            noise_watts: 1.0,
            rb_bandwidth_hz: 1.0,
            tti_seconds: 1.0,
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(m, n, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    #[test]
    fn identity_channel_gives_identity_precoder() {
        let h = DMatrix::<Complex64>::identity(2, 2);
        let p = zf_precoder(&h, 0.0).unwrap();
        assert!((p.matrix() - DMatrix::<Complex64>::identity(2, 2)).norm() < 1e-12);
        assert_relative_eq!(p.effective_gains()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_column_is_scaled_conjugate_inverse() {
        let h = DMatrix::from_column_slice(2, 1, &[Complex64::new(1.0, 1.0), Complex64::new(0.0, 2.0)]);
        let p = zf_precoder(&h, 0.0).unwrap();
        let norm_sq = 6.0;
        for m in 0..2 {
            assert_relative_eq!(p.matrix()[(m, 0)].re, h[(m, 0)].re / norm_sq, epsilon = 1e-12);
            assert_relative_eq!(p.matrix()[(m, 0)].im, h[(m, 0)].im / norm_sq, epsilon = 1e-12);
        }
    }

    #[test]
    fn residual_oracle_on_random_well_conditioned_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_matrix(&mut rng, 8, 3);
        let p = zf_precoder(&h, 0.0).unwrap();
        let residual = h.adjoint() * p.matrix() - DMatrix::<Complex64>::identity(3, 3);
        let max = residual.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(max < 1e-9, "residual {max}");
    }

    #[test]
    fn oversubscription_and_singularity_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_matrix(&mut rng, 2, 3);
        assert!(matches!(zf_precoder(&h, 0.0), Err(Error::OverSubscribed { .. })));

        let col = random_matrix(&mut rng, 4, 1);
        let mut twins = DMatrix::zeros(4, 2);
        twins.set_column(0, &col.column(0));
        twins.set_column(1, &col.column(0));
        assert!(matches!(zf_precoder(&twins, 0.0), Err(Error::SingularChannel { .. })));
        // Regularized fallback stays finite.
        let rates = zf_rates(&twins, &unit_budget(), 1e-6).unwrap();
        assert!(rates.iter().all(|r| r.is_finite()));
    }

    #[test]
    fn single_user_rate_matches_shannon_formula() {
        let h = DMatrix::from_column_slice(1, 1, &[Complex64::new(2.0, 0.0)]);
        let rates = zf_rates(&h, &unit_budget(), 0.0).unwrap();
        assert_relative_eq!(rates[0], 5.0f64.log2(), epsilon = 1e-12);
    }

    #[test]
    fn orthonormal_pair_at_unit_snr() {
        let h = DMatrix::<Complex64>::identity(2, 2);
        let budget = LinkBudget {
            power_watts: 2.0,
            ..unit_budget()
        };
        let rates = zf_rates(&h, &budget, 0.0).unwrap();
        assert_relative_eq!(rates[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(rates[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn appending_correlated_twin_never_helps_incumbents() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let h = random_matrix(&mut rng, 8, 3);
            let before = zf_rates(&h, &unit_budget(), 1e-6).unwrap();
            let mut wider = DMatrix::zeros(8, 4);
            for c in 0..3 {
                wider.set_column(c, &h.column(c));
            }
            wider.set_column(3, &h.column(2));
            let after = zf_rates(&wider, &unit_budget(), 1e-6).unwrap();
            for c in 0..3 {
                assert!(
                    after[c] <= before[c] + 1e-9,
                    "rate grew from {} to {}",
                    before[c],
                    after[c]
                );
            }
        }
    }

    #[test]
    fn orthogonal_users_interact_only_through_power_split() {
        let mut h = DMatrix::<Complex64>::zeros(4, 2);
        h[(0, 0)] = Complex64::new(1.5, 0.0);
        h[(2, 1)] = Complex64::new(0.5, 0.5);
        let both = zf_rates(&h, &unit_budget(), 0.0).unwrap();
        let solo = zf_rates(&DMatrix::from_column_slice(4, 1, h.column(0).as_slice()), &unit_budget(), 0.0)
            .unwrap();
        // Same effective gain, half the power.
        let gain = 2.25;
        assert_relative_eq!(both[0], (1.0f64 + 0.5 * gain).log2(), epsilon = 1e-12);
        assert_relative_eq!(solo[0], (1.0f64 + gain).log2(), epsilon = 1e-12);
    }

    #[test]
    fn unitary_invariance_and_scale_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_matrix(&mut rng, 6, 3);
        let base = zf_rates(&h, &unit_budget(), 0.0).unwrap();

        let q = random_matrix(&mut rng, 6, 6).qr().q();
        let rotated = zf_rates(&(&q * &h), &unit_budget(), 0.0).unwrap();
        for (a, b) in base.iter().zip(&rotated) {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }

        let alpha = 1.7;
        let scaled_rates = zf_rates(&(&h * Complex64::new(alpha, 0.0)), &unit_budget(), 0.0).unwrap();
        // SNR scales by alpha^2 exactly: recompute expected rates from base SNRs.
        let p = zf_precoder(&h, 0.0).unwrap();
        for (k, r) in scaled_rates.iter().enumerate() {
            let snr = p.effective_gains()[k] / 3.0;
            assert_relative_eq!(*r, (1.0 + alpha * alpha * snr).log2(), max_relative = 1e-9);
        }
        let _ = base;
    }

    #[test]
    fn slice_rate_sums_members_only() {
        let users = [3usize, 5, 9];
        let rates = [1.5, 2.5, 7.0];
        assert_eq!(slice_rate(&users, &rates, |_| false), 0.0);
        assert_eq!(slice_rate(&users, &rates, |k| k == 9), 7.0);
        assert_eq!(slice_rate(&users, &rates, |k| k == 3 || k == 5), 4.0);
    }

    #[test]
    fn user_set_rejects_duplicates() {
        assert!(UserSet::new(vec![1, 2, 1]).is_err());
        assert!(UserSet::new(vec![]).is_err());
        assert_eq!(UserSet::new(vec![2, 1]).unwrap().as_slice(), &[2, 1]);
    }
}
