//! Preference and fiscal primitives.
//!
//! Houses CRRA consumption utility, the estate utility with intensity
//! `theta` and curvature `k`, the reparameterization between `(theta, k)`
//! and `(MPC at death, asset floor)`, and the piecewise-linear income and
//! estate tax transforms. All monetary quantities are in dollars; report
//! layers convert to thousands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance the derived transform must satisfy after construction.
const TRANSFORM_TOL: f64 = 1e-10;

/// Preference block: estimated `(nu, mpc, k_curv)`, the derived bequest
/// transform `(theta_intensity, asset_floor)`, and the fixed `(beta, r)`.
///
/// `mpc = 1` encodes the no-bequest-motive sentinel: `theta_intensity` is
/// zero and `asset_floor` is `f64::INFINITY`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceParams {
    /// Relative risk aversion; positive and not equal to one.
    pub nu: f64,
    /// Marginal propensity to consume at the moment of death, in (0, 1].
    pub mpc: f64,
    /// Bequest curvature `k` in dollars; strictly positive.
    pub k_curv: f64,
    /// Bequest intensity `theta`; derived, zero when `mpc = 1`.
    pub theta_intensity: f64,
    /// Asset floor above which bequeathing has marginal value; derived.
    pub asset_floor: f64,
    /// Discount factor.
    pub beta: f64,
    /// Risk-free pretax net return per period.
    pub r: f64,
}

impl PreferenceParams {
    /// Builds the block from the estimated coordinates, deriving
    /// `(theta_intensity, asset_floor)` and verifying the round trip.
    pub fn new(nu: f64, mpc: f64, k_curv: f64, beta: f64, r: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Domain(format!("nu must be positive, got {nu}")));
        }
        if (nu - 1.0).abs() < 1e-9 {
            return Err(Error::UnsupportedParameter(
                "nu = 1 (log utility) is not supported".into(),
            ));
        }
        if !(k_curv > 0.0) {
            return Err(Error::Domain(format!("k_curv must be positive, got {k_curv}")));
        }
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        if !(r > -1.0) {
            return Err(Error::Domain(format!("r must exceed -1, got {r}")));
        }
        let (theta_intensity, asset_floor) = derive_bequest_transform(nu, mpc, k_curv, beta, r)?;
        let p = Self { nu, mpc, k_curv, theta_intensity, asset_floor, beta, r };
        // Round-trip consistency: theta back to mpc.
        if p.has_bequest_motive() {
            let z = (beta * theta_intensity * (1.0 + r)).powf(1.0 / nu);
            let mpc_back = (1.0 + r) / (1.0 + r + z);
            if (mpc_back - mpc).abs() > TRANSFORM_TOL * mpc.abs().max(1.0) {
                return Err(Error::Domain(format!(
                    "bequest transform failed to round-trip: {mpc} vs {mpc_back}"
                )));
            }
        }
        Ok(p)
    }

    /// No-bequest parameterization (`mpc = 1`, `theta = 0`).
    pub fn no_bequest(nu: f64, beta: f64, r: f64) -> Result<Self> {
        Self::new(nu, 1.0, 1.0, beta, r)
    }

    pub fn has_bequest_motive(&self) -> bool {
        self.theta_intensity > 0.0
    }

    /// The estimated coordinate vector `(nu, mpc, k_curv)`.
    pub fn theta_vec(&self) -> [f64; 3] {
        [self.nu, self.mpc, self.k_curv]
    }
}

/// Maps `(nu, mpc, k)` into the bequest intensity and the asset floor.
///
/// With `Z = (1+r)(1-mpc)/mpc`: `theta = Z^nu / (beta (1+r))` and
/// `floor = k / Z`. `mpc = 1` yields `(0, +inf)`, the no-bequest sentinel.
pub fn derive_bequest_transform(
    nu: f64,
    mpc: f64,
    k_curv: f64,
    beta: f64,
    r: f64,
) -> Result<(f64, f64)> {
    if !(mpc > 0.0 && mpc <= 1.0) {
        return Err(Error::Domain(format!("mpc must lie in (0, 1], got {mpc}")));
    }
    if mpc == 1.0 {
        return Ok((0.0, f64::INFINITY));
    }
    let z = (1.0 + r) * (1.0 - mpc) / mpc;
    let theta = z.powf(nu) / (beta * (1.0 + r));
    let floor = k_curv / z;
    Ok((theta, floor))
}

/// CRRA utility `c^(1-nu) / (1-nu)`.
pub fn crra_utility(c: f64, nu: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!("consumption must be positive, got {c}")));
    }
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("nu must be positive, got {nu}")));
    }
    if (nu - 1.0).abs() < 1e-9 {
        return Err(Error::UnsupportedParameter(
            "nu = 1 (log utility) is not supported".into(),
        ));
    }
    Ok(crra_utility_unchecked(c, nu))
}

/// Hot-path CRRA evaluation; caller guarantees `c > 0`, `nu > 0`, `nu != 1`.
#[inline]
pub fn crra_utility_unchecked(c: f64, nu: f64) -> f64 {
    c.powf(1.0 - nu) / (1.0 - nu)
}

/// Estate utility `theta (e + k)^(1-nu) / (1-nu)`; identically zero when the
/// bequest motive is off.
pub fn bequest_utility(e: f64, params: &PreferenceParams) -> Result<f64> {
    if e < 0.0 {
        return Err(Error::Domain(format!("estate must be nonnegative, got {e}")));
    }
    Ok(bequest_utility_unchecked(e, params))
}

/// Hot-path estate utility; caller guarantees `e >= 0`.
#[inline]
pub fn bequest_utility_unchecked(e: f64, params: &PreferenceParams) -> f64 {
    if params.theta_intensity == 0.0 {
        return 0.0;
    }
    params.theta_intensity * (e + params.k_curv).powf(1.0 - params.nu) / (1.0 - params.nu)
}

/// One bracket of a piecewise-linear income tax schedule: the marginal
/// `rate` applies to income above `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxBracket {
    pub threshold: f64,
    pub rate: f64,
}

/// What the income tax schedule applies to each period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxBase {
    /// Tax asset returns plus nonasset income (the default convention).
    #[default]
    InterestAndIncome,
    /// Tax asset returns only; nonasset income passes through untaxed.
    InterestOnly,
}

/// Fiscal block: income tax schedule, estate tax, and the consumption floor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiscalParams {
    /// Brackets with strictly increasing thresholds; rates in [0, 1).
    pub income_tax: Vec<TaxBracket>,
    /// Estate tax rate in [0, 1).
    pub estate_tax_rate: f64,
    /// Estate tax deduction in dollars.
    pub estate_tax_deduction: f64,
    /// Government-guaranteed minimum consumption in dollars.
    pub consumption_floor: f64,
    /// Taxable base convention.
    #[serde(default)]
    pub tax_base: TaxBase,
}

impl Default for FiscalParams {
    /// Neutral schedule: a single zero-rate bracket, no estate tax, and the
    /// $4,500 consumption floor.
    fn default() -> Self {
        Self {
            income_tax: vec![TaxBracket { threshold: 0.0, rate: 0.0 }],
            estate_tax_rate: 0.0,
            estate_tax_deduction: 0.0,
            consumption_floor: 4_500.0,
            tax_base: TaxBase::default(),
        }
    }
}

impl FiscalParams {
    pub fn validate(&self) -> Result<()> {
        if self.income_tax.is_empty() {
            return Err(Error::Config("income_tax: schedule must not be empty".into()));
        }
        for (i, b) in self.income_tax.iter().enumerate() {
            if !(b.rate >= 0.0 && b.rate < 1.0) {
                return Err(Error::Config(format!(
                    "income_tax[{i}].rate: must lie in [0, 1), got {}",
                    b.rate
                )));
            }
            if i > 0 && b.threshold <= self.income_tax[i - 1].threshold {
                return Err(Error::Config(format!(
                    "income_tax[{i}].threshold: thresholds must be strictly increasing"
                )));
            }
        }
        if !(self.estate_tax_rate >= 0.0 && self.estate_tax_rate < 1.0) {
            return Err(Error::Config(format!(
                "estate_tax_rate: must lie in [0, 1), got {}",
                self.estate_tax_rate
            )));
        }
        if self.estate_tax_deduction < 0.0 {
            return Err(Error::Config("estate_tax_deduction: must be nonnegative".into()));
        }
        if !(self.consumption_floor > 0.0) {
            return Err(Error::Config("consumption_floor: must be positive".into()));
        }
        Ok(())
    }

    /// Posttax income for a gross taxable amount.
    #[inline]
    pub fn after_tax_income(&self, gross: f64) -> f64 {
        after_tax_income(gross, &self.income_tax)
    }

    /// Estate net of the estate tax.
    #[inline]
    pub fn estate_after_tax(&self, e_gross: f64) -> f64 {
        estate_after_tax(e_gross, self.estate_tax_rate, self.estate_tax_deduction)
    }
}

/// Gross income minus bracket-wise tax; continuous, nondecreasing, and
/// piecewise linear in `gross`.
pub fn after_tax_income(gross: f64, schedule: &[TaxBracket]) -> f64 {
    if gross <= 0.0 {
        return gross.max(0.0);
    }
    let mut tax = 0.0;
    for (i, b) in schedule.iter().enumerate() {
        if gross <= b.threshold {
            break;
        }
        let upper = schedule.get(i + 1).map_or(f64::INFINITY, |n| n.threshold);
        tax += b.rate * (gross.min(upper) - b.threshold);
    }
    gross - tax
}

/// Estate after tax: `e - max(0, rate * (e - deduction))`.
#[inline]
pub fn estate_after_tax(e_gross: f64, rate: f64, deduction: f64) -> f64 {
    e_gross - (rate * (e_gross - deduction)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn crra_analytic_values() {
        // u(1) = 1/(1-nu)
        assert_relative_eq!(crra_utility(1.0, 3.8).unwrap(), 1.0 / (1.0 - 3.8), max_relative = 1e-15);
        // 2^{-1}/(-1) = -0.5
        assert_relative_eq!(crra_utility(2.0, 2.0).unwrap(), -0.5, max_relative = 1e-15);
        // direct evaluation cross-checked against 10^(-11.2)/(-2.8)
        let expected = -(10f64.powf(-11.2)) / 2.8;
        assert_relative_eq!(crra_utility(10_000.0, 3.8).unwrap(), expected, max_relative = 1e-12);
        assert!(expected > -2.254e-12 && expected < -2.253e-12);
    }

    #[test]
    fn crra_rejects_bad_domain() {
        assert!(matches!(crra_utility(0.0, 2.0), Err(Error::Domain(_))));
        assert!(matches!(crra_utility(-1.0, 2.0), Err(Error::Domain(_))));
        assert!(matches!(crra_utility(1.0, 1.0), Err(Error::UnsupportedParameter(_))));
    }

    #[test]
    fn crra_increasing_and_concave() {
        let nu = 3.8;
        let us: Vec<f64> = [1_000.0, 2_000.0, 4_000.0, 8_000.0]
            .iter()
            .map(|&c| crra_utility(c, nu).unwrap())
            .collect();
        for w in us.windows(2) {
            assert!(w[1] > w[0]);
        }
        // diminishing increments
        assert!(us[1] - us[0] > us[2] - us[1]);
        assert!(us[2] - us[1] > us[3] - us[2]);
    }

    #[test]
    fn bequest_utility_values() {
        let p = PreferenceParams::new(3.8, 0.25, 10_000.0, 0.971, 0.02).unwrap();
        // theta = 0 kills the motive regardless of e
        let p0 = PreferenceParams::no_bequest(3.8, 0.971, 0.02).unwrap();
        assert_eq!(bequest_utility(0.0, &p0).unwrap(), 0.0);
        assert_eq!(bequest_utility(50_000.0, &p0).unwrap(), 0.0);
        // phi(0) = theta * k^{1-nu}/(1-nu) with derived theta
        let expected = p.theta_intensity * 10_000f64.powf(-2.8) / (-2.8);
        assert_relative_eq!(bequest_utility(0.0, &p).unwrap(), expected, max_relative = 1e-12);
        // increasing in e
        assert!(bequest_utility(20_000.0, &p).unwrap() > bequest_utility(10_000.0, &p).unwrap());
        assert!(matches!(bequest_utility(-1.0, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn transform_matches_reported_floor() {
        // nu=3.8, mpc=0.25, k=10k, beta=0.971, r=0.02 -> floor ~ 3,268,
        // within 0.2% of the published 3,266.
        let (theta, floor) = derive_bequest_transform(3.8, 0.25, 10_000.0, 0.971, 0.02).unwrap();
        assert_relative_eq!(floor, 10_000.0 / 3.06, max_relative = 1e-12);
        assert!((floor - 3_266.0).abs() / 3_266.0 < 0.002);
        // theta = 3.06^3.8 / (0.971 * 1.02), evaluated independently
        let z: f64 = 3.06;
        assert_relative_eq!(theta, z.powf(3.8) / (0.971 * 1.02), max_relative = 1e-12);
        assert!((theta - 70.8).abs() < 0.1);
    }

    #[test]
    fn transform_sentinel_and_domain() {
        let (theta, floor) = derive_bequest_transform(3.8, 1.0, 10_000.0, 0.971, 0.02).unwrap();
        assert_eq!(theta, 0.0);
        assert!(floor.is_infinite());
        assert!(matches!(
            derive_bequest_transform(3.8, 0.0, 10_000.0, 0.971, 0.02),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            derive_bequest_transform(3.8, 1.5, 10_000.0, 0.971, 0.02),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn transform_round_trip_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(901);
        for _ in 0..1_000 {
            let nu = rng.random_range(1.5..8.0);
            let mpc = rng.random_range(0.01..0.99);
            let k = rng.random_range(1_000.0..100_000.0);
            let (theta, floor) = derive_bequest_transform(nu, mpc, k, 0.971, 0.02).unwrap();
            // invert: z from theta, then mpc and k back
            let z = (0.971 * theta * 1.02).powf(1.0 / nu);
            let mpc_back = 1.02 / (1.02 + z);
            let k_back = floor * z;
            assert_relative_eq!(mpc_back, mpc, max_relative = 1e-8);
            assert_relative_eq!(k_back, k, max_relative = 1e-8);
        }
    }

    #[test]
    fn floor_monotone_in_theta_and_k() {
        // Lower mpc -> higher theta -> lower floor at fixed k.
        let mut last_theta = 0.0;
        let mut last_floor = f64::INFINITY;
        for mpc in [0.8, 0.6, 0.4, 0.2, 0.1] {
            let (theta, floor) = derive_bequest_transform(3.8, mpc, 10_000.0, 0.971, 0.02).unwrap();
            assert!(theta > last_theta);
            assert!(floor < last_floor);
            last_theta = theta;
            last_floor = floor;
        }
        // Higher k -> higher floor at fixed mpc.
        let mut last = 0.0;
        for k in [1_000.0, 5_000.0, 20_000.0, 80_000.0] {
            let (_, floor) = derive_bequest_transform(3.8, 0.25, k, 0.971, 0.02).unwrap();
            assert!(floor > last);
            last = floor;
        }
    }

    #[test]
    fn preference_params_invariants_hold() {
        let p = PreferenceParams::new(3.8, 0.25, 10_000.0, 0.971, 0.02).unwrap();
        let z = (p.beta * p.theta_intensity * (1.0 + p.r)).powf(1.0 / p.nu);
        assert_relative_eq!(p.mpc, (1.0 + p.r) / (1.0 + p.r + z), max_relative = 1e-10);
        assert_relative_eq!(p.asset_floor, p.k_curv / z, max_relative = 1e-10);
        assert!(PreferenceParams::new(1.0, 0.25, 10_000.0, 0.971, 0.02).is_err());
        assert!(PreferenceParams::new(3.8, 0.25, 0.0, 0.971, 0.02).is_err());
    }

    #[test]
    fn income_tax_examples() {
        assert_eq!(after_tax_income(0.0, &[TaxBracket { threshold: 0.0, rate: 0.2 }]), 0.0);
        assert_relative_eq!(
            after_tax_income(10_000.0, &[TaxBracket { threshold: 0.0, rate: 0.2 }]),
            8_000.0
        );
        // brackets {(0, 0.1), (5000, 0.3)}: tax = 500 + 1500
        let sched = [
            TaxBracket { threshold: 0.0, rate: 0.1 },
            TaxBracket { threshold: 5_000.0, rate: 0.3 },
        ];
        assert_relative_eq!(after_tax_income(10_000.0, &sched), 8_000.0);
    }

    #[test]
    fn estate_tax_examples() {
        // deduction binds exactly
        assert_relative_eq!(estate_after_tax(60_000.0, 0.1, 60_000.0), 60_000.0);
        assert_eq!(estate_after_tax(0.0, 0.1, 60_000.0), 0.0);
        assert_relative_eq!(estate_after_tax(100_000.0, 0.1, 60_000.0), 96_000.0);
    }

    #[test]
    fn fiscal_validation() {
        assert!(FiscalParams::default().validate().is_ok());
        let mut bad = FiscalParams::default();
        bad.income_tax = vec![
            TaxBracket { threshold: 0.0, rate: 0.1 },
            TaxBracket { threshold: 0.0, rate: 0.2 },
        ];
        assert!(bad.validate().is_err());
        let mut bad = FiscalParams::default();
        bad.consumption_floor = 0.0;
        assert!(bad.validate().is_err());
    }

    proptest! {
        // Both tax transforms are monotone and bounded above by the identity.
        #[test]
        fn taxes_monotone_and_below_identity(
            a in 0.0f64..500_000.0,
            b in 0.0f64..500_000.0,
            rate in 0.0f64..0.99,
            ded in 0.0f64..100_000.0,
        ) {
            let sched = [
                TaxBracket { threshold: 0.0, rate: rate * 0.5 },
                TaxBracket { threshold: 20_000.0, rate },
            ];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(after_tax_income(lo, &sched) <= after_tax_income(hi, &sched) + 1e-9);
            prop_assert!(after_tax_income(hi, &sched) <= hi + 1e-9);
            prop_assert!(estate_after_tax(lo, rate, ded) <= estate_after_tax(hi, rate, ded) + 1e-9);
            prop_assert!(estate_after_tax(hi, rate, ded) <= hi + 1e-9);
            // 1-Lipschitz in the gross amount
            prop_assert!(after_tax_income(hi, &sched) - after_tax_income(lo, &sched) <= (hi - lo) + 1e-9);
            prop_assert!(estate_after_tax(hi, rate, ded) - estate_after_tax(lo, rate, ded) <= (hi - lo) + 1e-9);
        }
    }
}
