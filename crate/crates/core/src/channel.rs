//! Matched-filter observations at the sensing array and the user's
//! communication SNR.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{dot_t, steering_vector, TargetGeometry, UserGeometry};

/// One backscatter snapshot and the transmit vector that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingObservation {
    pub y: Vec<Complex64>,
    pub s: Vec<Complex64>,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGeometry {
    pub user: UserGeometry,
    pub targets: Vec<TargetGeometry>,
}

/// A target with its complex round-trip gain fixed for one trial.
#[derive(Debug, Clone)]
pub struct Echo {
    pub gain: Complex64,
    pub steering: Vec<Complex64>,
}

impl Echo {
    pub fn new(target: &TargetGeometry, phase: f64, antennas: usize) -> Self {
        Self {
            gain: Complex64::from_polar(target.gain_sq.sqrt(), phase),
            steering: steering_vector(target.theta, antennas),
        }
    }
}

/// Noise-free part of the sensing observation, `sum_k alpha_k a_k (a_k^T s)`.
pub fn echo_response(s: &[Complex64], echoes: &[Echo]) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(0.0, 0.0); s.len()];
    for e in echoes {
        let c = e.gain * dot_t(&e.steering, s);
        for (yi, ai) in y.iter_mut().zip(&e.steering) {
            *yi += c * ai;
        }
    }
    y
}

/// Circularly-symmetric complex Gaussian sample with variance `variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * sd, im * sd)
}

/// Adds `CN(0, N0 I)` noise in place, one draw per antenna.
pub fn add_noise<R: Rng + ?Sized>(y: &mut [Complex64], noise_psd: f64, rng: &mut R) {
    for v in y {
        *v += complex_gaussian(noise_psd, rng);
    }
}

/// Backscatter observation for transmit vector `s`.
pub fn sense<R: Rng + ?Sized>(
    s: &[Complex64],
    echoes: &[Echo],
    noise_psd: f64,
    slot: usize,
    rng: &mut R,
) -> SensingObservation {
    let mut y = echo_response(s, echoes);
    if noise_psd > 0.0 {
        add_noise(&mut y, noise_psd, rng);
    }
    SensingObservation { y, s: s.to_vec(), slot }
}

/// Instantaneous communication SNR `E_s |alpha_u|^2 |a^T(theta_u) f|^2 / N0`.
pub fn comm_snr(precoder: &[Complex64], symbol_energy: f64, user: &UserGeometry, noise_psd: f64) -> f64 {
    let a = steering_vector(user.theta, precoder.len());
    symbol_energy * user.gain_sq * dot_t(&a, precoder).norm_sqr() / noise_psd
}

/// Same as [`comm_snr`] with the user's steering vector precomputed.
pub fn comm_snr_with(
    steering: &[Complex64],
    precoder: &[Complex64],
    symbol_energy: f64,
    gain_sq: f64,
    noise_psd: f64,
) -> f64 {
    symbol_energy * gain_sq * dot_t(steering, precoder).norm_sqr() / noise_psd
}
