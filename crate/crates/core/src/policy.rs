//! Transmit policies: energy budgets under the average power constraint and
//! the per-slot precoder.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{codebook_angle, norm_sqr, steering_vector, SystemParams, UserGeometry};
use crate::traffic::SlotKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// All energy towards the user; sensing rides on data opportunistically.
    PureComm,
    /// N dedicated sweep pilots per window with pilot-to-data energy ratio `beta`.
    TimeSharing { beta: f64 },
    /// Data precoder mixing a sweeping sensing beam (power share `rho`) with
    /// the user beam.
    Concurrent { rho: f64 },
}

impl Policy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Policy::PureComm => Ok(()),
            Policy::TimeSharing { beta } if beta >= 0.0 && beta.is_finite() => Ok(()),
            Policy::TimeSharing { beta } => Err(Error::Invalid(format!("beta must be >= 0, got {beta}"))),
            Policy::Concurrent { rho } if (0.0..=1.0).contains(&rho) => Ok(()),
            Policy::Concurrent { rho } => Err(Error::Invalid(format!("rho must lie in [0, 1], got {rho}"))),
        }
    }

    /// Short machine name used in CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            Policy::PureComm => "pure_comm",
            Policy::TimeSharing { .. } => "time_sharing",
            Policy::Concurrent { .. } => "concurrent",
        }
    }

    pub fn param(&self) -> Option<f64> {
        match *self {
            Policy::PureComm => None,
            Policy::TimeSharing { beta } => Some(beta),
            Policy::Concurrent { rho } => Some(rho),
        }
    }

    /// Whether sensing integrates data slots (as opposed to pilots only).
    pub fn senses_on_data(&self) -> bool {
        !matches!(self, Policy::TimeSharing { .. })
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::PureComm => write!(f, "pure-comm"),
            Policy::TimeSharing { beta } => write!(f, "time-sharing-beta-{beta}"),
            Policy::Concurrent { rho } => write!(f, "concurrent-rho-{rho}"),
        }
    }
}

/// How the concurrent precoder is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecoderNorm {
    /// Scale every slot's precoder to unit norm.
    #[default]
    Renormalized,
    /// Use the raw combination; slot energy then varies with `||f||^2`.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBudget {
    /// Energy per data symbol [J].
    pub data: f64,
    /// Energy per pilot [J]; zero unless time sharing.
    pub pilot: f64,
}

/// Minimum sensing window that fits the N pilots plus one packet.
pub fn time_sharing_min_window(params: &SystemParams) -> f64 {
    (f64::from(params.packet_bits) / params.bits_per_symbol() + params.antennas as f64) / params.bandwidth_hz
}

pub fn energy_budget(policy: Policy, params: &SystemParams) -> Result<EnergyBudget> {
    policy.validate()?;
    let bits_rate = f64::from(params.packet_bits) * params.arrival_rate / params.bits_per_symbol();
    match policy {
        Policy::PureComm | Policy::Concurrent { .. } => {
            if bits_rate <= 0.0 {
                return Err(Error::Invalid("data energy is unbounded without traffic".into()));
            }
            Ok(EnergyBudget { data: params.tx_power_w / bits_rate, pilot: 0.0 })
        }
        Policy::TimeSharing { beta } => {
            let bound = time_sharing_min_window(params);
            if params.sensing_window_s <= bound {
                return Err(Error::TimeSharingInfeasible { window_s: params.sensing_window_s, bound_s: bound });
            }
            let denom = bits_rate + beta * params.antennas as f64 / params.sensing_window_s;
            if denom <= 0.0 {
                return Err(Error::Invalid("data energy is unbounded without traffic or pilots".into()));
            }
            let data = params.tx_power_w / denom;
            Ok(EnergyBudget { data, pilot: beta * data })
        }
    }
}

/// Position of the concurrent sweep in the codebook. Advances on data slots
/// only and persists across windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepState {
    next: usize,
}

impl Default for SweepState {
    fn default() -> Self {
        Self { next: 1 }
    }
}

impl SweepState {
    /// Sector (1-based) the next data slot will use.
    pub fn sector(&self) -> usize {
        self.next
    }

    pub fn advance(&mut self, sectors: usize) {
        self.next = self.next % sectors + 1;
    }

    pub fn advance_by(&mut self, steps: u64, sectors: usize) {
        self.next = ((self.next as u64 - 1 + steps) % sectors as u64) as usize + 1;
    }
}

/// Identifies which cached precoder a slot used, so coherent integration can
/// group observations that share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Beam {
    User,
    Sweep(usize),
    Mixed(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct Transmission<'a> {
    pub beam: Beam,
    pub precoder: &'a [Complex64],
    /// Scale applied to the unit-energy symbol: `s = sqrt(symbol_energy) f x`.
    pub symbol_energy: f64,
    /// Radiated energy of the slot, `symbol_energy ||f||^2`.
    pub energy: f64,
}

/// Precomputed precoders and energies for one policy and geometry.
#[derive(Debug, Clone)]
pub struct PolicyPlan {
    policy: Policy,
    budget: EnergyBudget,
    antennas: usize,
    user: Vec<Complex64>,
    sweep: Vec<Vec<Complex64>>,
    mixed: Vec<Vec<Complex64>>,
    mixed_norm_sqr: Vec<f64>,
}

fn beam_towards(theta: f64, antennas: usize) -> Vec<Complex64> {
    let scale = 1.0 / (antennas as f64).sqrt();
    steering_vector(theta, antennas).into_iter().map(|a| a.conj() * scale).collect()
}

impl PolicyPlan {
    pub fn new(policy: Policy, params: &SystemParams, user: &UserGeometry, norm: PrecoderNorm) -> Result<Self> {
        let budget = energy_budget(policy, params)?;
        let n = params.antennas;
        let user_beam = beam_towards(user.theta, n);
        let sweep = (1..=n)
            .map(|k| Ok(beam_towards(codebook_angle(k, n, params.theta_max)?, n)))
            .collect::<Result<Vec<_>>>()?;
        let (mixed, mixed_norm_sqr) = match policy {
            Policy::Concurrent { rho } => {
                let a = rho.sqrt();
                let b = (1.0 - rho).sqrt();
                let mut out = Vec::with_capacity(n);
                let mut norms = Vec::with_capacity(n);
                for fs in &sweep {
                    // sqrt((1-rho)/N) a* = sqrt(1-rho) * (a*/sqrt(N))
                    let mut f: Vec<Complex64> = fs.iter().zip(&user_beam).map(|(s, u)| s * a + u * b).collect();
                    let ns = norm_sqr(&f);
                    if norm == PrecoderNorm::Renormalized && ns > 0.0 {
                        let inv = 1.0 / ns.sqrt();
                        f.iter_mut().for_each(|x| *x *= inv);
                        norms.push(1.0);
                    } else {
                        norms.push(ns);
                    }
                    out.push(f);
                }
                (out, norms)
            }
            _ => (Vec::new(), Vec::new()),
        };
        Ok(Self { policy, budget, antennas: n, user: user_beam, sweep, mixed, mixed_norm_sqr })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn budget(&self) -> EnergyBudget {
        self.budget
    }

    /// Pilot positions inside a window: the first N slots for time sharing.
    pub fn pilot_slots(&self) -> Vec<usize> {
        match self.policy {
            Policy::TimeSharing { .. } => (0..self.antennas).collect(),
            _ => Vec::new(),
        }
    }

    pub fn sectors(&self) -> usize {
        self.antennas
    }

    /// Precoder and energy for one non-idle slot, advancing the sweep on
    /// concurrent data slots.
    pub fn transmit(&self, kind: SlotKind, sweep: &mut SweepState) -> Result<Transmission<'_>> {
        let es = self.budget.data;
        match (kind, self.policy) {
            (SlotKind::Idle, _) => Err(Error::IdleSlot),
            (SlotKind::Pilot(n), Policy::TimeSharing { .. }) => {
                let f =
                    self.sweep.get(n.wrapping_sub(1)).ok_or(Error::CodebookIndex { index: n, count: self.antennas })?;
                Ok(Transmission {
                    beam: Beam::Sweep(n),
                    precoder: f,
                    symbol_energy: self.budget.pilot,
                    energy: self.budget.pilot,
                })
            }
            (SlotKind::Pilot(_), _) => Err(Error::Invalid(format!("{} sends no pilots", self.policy.name()))),
            (SlotKind::Data, Policy::PureComm | Policy::TimeSharing { .. }) => {
                Ok(Transmission { beam: Beam::User, precoder: &self.user, symbol_energy: es, energy: es })
            }
            (SlotKind::Data, Policy::Concurrent { .. }) => {
                let n = sweep.sector();
                sweep.advance(self.antennas);
                Ok(Transmission {
                    beam: Beam::Mixed(n),
                    precoder: &self.mixed[n - 1],
                    symbol_energy: es,
                    energy: es * self.mixed_norm_sqr[n - 1],
                })
            }
        }
    }
}

/// One-shot form of [`PolicyPlan::transmit`]: returns the precoder, the slot
/// energy and the updated sweep state.
pub fn precoder_for_slot(
    policy: Policy,
    kind: SlotKind,
    user: &UserGeometry,
    sweep: SweepState,
    params: &SystemParams,
) -> Result<(Vec<Complex64>, f64, SweepState)> {
    let plan = PolicyPlan::new(policy, params, user, PrecoderNorm::Renormalized)?;
    let mut sweep = sweep;
    let tx = plan.transmit(kind, &mut sweep)?;
    Ok((tx.precoder.to_vec(), tx.energy, sweep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::geometry::dot_t;

    fn params() -> SystemParams {
        RunConfig::default().system_params()
    }

    fn user(p: &SystemParams) -> UserGeometry {
        UserGeometry::new(40f64.to_radians(), 500.0, p.wavelength()).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn budget_examples() {
        let p = params();
        let pure = energy_budget(Policy::PureComm, &p).unwrap();
        assert!(rel(pure.data, 1.0e-7) < 1e-12);
        assert_eq!(pure.pilot, 0.0);

        let ts = energy_budget(Policy::TimeSharing { beta: 1.0 }, &p).unwrap();
        assert!(rel(ts.data, 9.494e-8) < 1e-4, "{}", ts.data);
        assert_eq!(ts.pilot, ts.data);

        let ts0 = energy_budget(Policy::TimeSharing { beta: 0.0 }, &p).unwrap();
        assert!(rel(ts0.data, pure.data) < 1e-12);

        let conc = energy_budget(Policy::Concurrent { rho: 0.3 }, &p).unwrap();
        assert_eq!(conc, pure);
    }

    #[test]
    fn time_sharing_feasibility() {
        let mut p = params();
        p.sensing_window_s = 0.05e-3;
        match energy_budget(Policy::TimeSharing { beta: 1.0 }, &p) {
            Err(Error::TimeSharingInfeasible { bound_s, .. }) => assert!(rel(bound_s, 0.1016e-3) < 1e-9),
            other => panic!("unexpected {other:?}"),
        }
        assert!(energy_budget(Policy::PureComm, &p).is_ok());
    }

    #[test]
    fn huge_beta_starves_data() {
        let p = params();
        let b = energy_budget(Policy::TimeSharing { beta: 1e6 }, &p).unwrap();
        let limit = p.tx_power_w * p.sensing_window_s / p.antennas as f64;
        assert!(rel(b.pilot, limit) < 0.01);
        assert!(rel(b.data * 1e6, b.pilot) < 1e-12);
        assert!(b.data < 1e-4 * energy_budget(Policy::PureComm, &p).unwrap().data);
    }

    #[test]
    fn invalid_parameters() {
        assert!(Policy::TimeSharing { beta: -1.0 }.validate().is_err());
        assert!(Policy::Concurrent { rho: 1.5 }.validate().is_err());
        assert!(Policy::Concurrent { rho: 1.0 }.validate().is_ok());
    }

    #[test]
    fn idle_slot_rejected() {
        let p = params();
        let u = user(&p);
        assert_eq!(
            precoder_for_slot(Policy::PureComm, SlotKind::Idle, &u, SweepState::default(), &p).unwrap_err(),
            Error::IdleSlot
        );
    }

    #[test]
    fn concurrent_extremes() {
        let p = params();
        let u = user(&p);
        let pure = beam_towards(u.theta, p.antennas);

        let (f, e, s) =
            precoder_for_slot(Policy::Concurrent { rho: 0.0 }, SlotKind::Data, &u, SweepState::default(), &p).unwrap();
        assert!(f.iter().zip(&pure).all(|(a, b)| (a - b).norm() < 1e-15));
        assert!(rel(e, 1e-7) < 1e-12);
        assert_eq!(s.sector(), 2);

        let start = SweepState::default();
        let (f, _, _) = precoder_for_slot(Policy::Concurrent { rho: 1.0 }, SlotKind::Data, &u, start, &p).unwrap();
        let sector = beam_towards(codebook_angle(1, 16, p.theta_max).unwrap(), 16);
        assert!(f.iter().zip(&sector).all(|(a, b)| (a - b).norm() < 1e-15));
    }

    #[test]
    fn collinear_mix_renormalises() {
        // Put the user exactly on sector 5 so both beams coincide.
        let mut p = params();
        p.theta_max = 70f64.to_radians();
        let theta = codebook_angle(5, 16, p.theta_max).unwrap();
        let u = UserGeometry::new(theta, 500.0, p.wavelength()).unwrap();
        let mut sweep = SweepState::default();
        sweep.advance_by(4, 16);
        let (f, _, _) = precoder_for_slot(Policy::Concurrent { rho: 0.5 }, SlotKind::Data, &u, sweep, &p).unwrap();
        let target = beam_towards(theta, 16);
        assert!((norm_sqr(&f) - 1.0).abs() < 1e-12);
        assert!(f.iter().zip(&target).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn precoders_have_unit_norm() {
        let p = params();
        let u = user(&p);
        for policy in [
            Policy::PureComm,
            Policy::TimeSharing { beta: 2.0 },
            Policy::Concurrent { rho: 0.0 },
            Policy::Concurrent { rho: 0.37 },
            Policy::Concurrent { rho: 1.0 },
        ] {
            let plan = PolicyPlan::new(policy, &p, &u, PrecoderNorm::Renormalized).unwrap();
            let mut sweep = SweepState::default();
            let kinds: Vec<SlotKind> = match policy {
                Policy::TimeSharing { .. } => (1..=16).map(SlotKind::Pilot).chain([SlotKind::Data]).collect(),
                _ => vec![SlotKind::Data; 40],
            };
            for k in kinds {
                let tx = plan.transmit(k, &mut sweep).unwrap();
                assert!((norm_sqr(tx.precoder) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn raw_mode_keeps_the_unnormalised_mix() {
        let p = params();
        let u = user(&p);
        let plan = PolicyPlan::new(Policy::Concurrent { rho: 0.5 }, &p, &u, PrecoderNorm::Raw).unwrap();
        let mut sweep = SweepState::default();
        let mut seen_non_unit = false;
        for _ in 0..16 {
            let tx = plan.transmit(SlotKind::Data, &mut sweep).unwrap();
            let ns = norm_sqr(tx.precoder);
            assert!((tx.energy - tx.symbol_energy * ns).abs() < 1e-20);
            seen_non_unit |= (ns - 1.0).abs() > 1e-3;
        }
        assert!(seen_non_unit);
    }

    #[test]
    fn sweep_visits_every_sector() {
        let p = params();
        let u = user(&p);
        let plan = PolicyPlan::new(Policy::Concurrent { rho: 0.5 }, &p, &u, PrecoderNorm::Renormalized).unwrap();
        let mut sweep = SweepState::default();
        for _ in 0..3 {
            let mut seen = [false; 16];
            for _ in 0..16 {
                match plan.transmit(SlotKind::Data, &mut sweep).unwrap().beam {
                    Beam::Mixed(n) => seen[n - 1] = true,
                    b => panic!("{b:?}"),
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
        let mut s = SweepState::default();
        s.advance_by(37, 16);
        assert_eq!(s.sector(), 37 % 16 + 1);
    }

    #[test]
    fn user_gain_drops_with_rho() {
        let p = params();
        let u = user(&p);
        let a = steering_vector(u.theta, 16);
        let mut last = f64::INFINITY;
        for k in 0..=10 {
            let rho = k as f64 / 10.0;
            let plan = PolicyPlan::new(Policy::Concurrent { rho }, &p, &u, PrecoderNorm::Renormalized).unwrap();
            let mut sweep = SweepState::default();
            let mean: f64 = (0..16)
                .map(|_| dot_t(&a, plan.transmit(SlotKind::Data, &mut sweep).unwrap().precoder).norm())
                .sum::<f64>()
                / 16.0;
            assert!(mean <= last + 1e-12, "rho {rho}: {mean} > {last}");
            last = mean;
        }
    }
}
