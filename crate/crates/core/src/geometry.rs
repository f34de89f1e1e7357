//! Array response, link budgets and the system constants shared by every
//! other module.
//!
//! Everything here is in linear SI units and radians. Conversions from the
//! dB/dBm/dBsm and degree values used in configuration files live in
//! [`units`](crate::units).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum [m/s].
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Physical, traffic and detector constants of one simulated base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Carrier frequency [Hz].
    pub carrier_hz: f64,
    /// Average transmit power [W].
    pub tx_power_w: f64,
    /// Antennas per array. Transmit and sensing arrays have the same size.
    pub antennas: usize,
    /// Bandwidth [Hz]; also the symbol rate.
    pub bandwidth_hz: f64,
    /// Noise power spectral density [W/Hz].
    pub noise_psd: f64,
    /// Packet length [bits].
    pub packet_bits: u32,
    /// Poisson packet arrival rate [packets/s].
    pub arrival_rate: f64,
    /// Modulation order Q of the PSK alphabet.
    pub modulation_order: u32,
    /// Half-width of the sensing codebook [rad].
    pub theta_max: f64,
    /// Sensing window [s].
    pub sensing_window_s: f64,
    /// Desired false-alarm probability per detector cell.
    pub p_fa: f64,
}

impl SystemParams {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn bits_per_symbol(&self) -> f64 {
        f64::from(self.modulation_order).log2()
    }

    /// Symbols needed to send one packet, `ceil(B / log2 Q)`.
    pub fn symbols_per_packet(&self) -> u32 {
        (f64::from(self.packet_bits) / self.bits_per_symbol()).ceil() as u32
    }

    /// Symbol slots in one sensing window, `floor(T_s W)`.
    pub fn slots_per_window(&self) -> usize {
        // Guard against 0.3e-3 * 1e7 evaluating to 2999.9999999999995.
        (self.sensing_window_s * self.bandwidth_hz * (1.0 + 1e-12)).floor() as usize
    }

    pub fn slot_duration(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    /// Checks the ranges every module relies on, including the bursty-traffic
    /// condition `B lambda_u < W log2 Q`.
    pub fn validate(&self) -> Result<()> {
        positive("carrier_hz", self.carrier_hz)?;
        positive("tx_power_w", self.tx_power_w)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("noise_psd", self.noise_psd)?;
        positive("sensing_window_s", self.sensing_window_s)?;
        if self.antennas < 2 {
            return Err(Error::Invalid(format!("antennas must be at least 2, got {}", self.antennas)));
        }
        if self.packet_bits == 0 {
            return Err(Error::Invalid("packet_bits must be at least 1".into()));
        }
        if self.modulation_order < 2 {
            return Err(Error::Invalid(format!("modulation order must be at least 2, got {}", self.modulation_order)));
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return Err(Error::Invalid(format!("arrival rate must be non-negative, got {}", self.arrival_rate)));
        }
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return Err(Error::Invalid(format!("p_fa must lie in (0, 1), got {}", self.p_fa)));
        }
        if !(self.theta_max > 0.0 && self.theta_max <= PI / 2.0) {
            return Err(Error::Invalid(format!("theta_max must lie in (0, pi/2], got {} rad", self.theta_max)));
        }
        if self.slots_per_window() == 0 {
            return Err(Error::Invalid("sensing window is shorter than one symbol".into()));
        }
        let load = f64::from(self.packet_bits) * self.arrival_rate;
        let capacity = self.bandwidth_hz * self.bits_per_symbol();
        if load >= capacity {
            return Err(Error::NotBursty { load, capacity });
        }
        Ok(())
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositive { name, value })
    }
}

/// A single-antenna user and its line-of-sight channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserGeometry {
    pub theta: f64,
    pub distance: f64,
    /// `|alpha_u|^2` from the Friis equation.
    pub gain_sq: f64,
}

impl UserGeometry {
    pub fn new(theta: f64, distance: f64, wavelength: f64) -> Result<Self> {
        Ok(Self { theta, distance, gain_sq: comm_gain(distance, wavelength)? })
    }
}

/// A point target seen by the monostatic sensing array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetGeometry {
    pub theta: f64,
    pub distance: f64,
    /// Radar cross section [m^2].
    pub rcs: f64,
    /// Round-trip `|alpha_k|^2` from the radar range equation.
    pub gain_sq: f64,
}

impl TargetGeometry {
    pub fn new(theta: f64, distance: f64, rcs: f64, wavelength: f64) -> Result<Self> {
        Ok(Self { theta, distance, rcs, gain_sq: radar_gain(distance, rcs, wavelength)? })
    }
}

/// Response of a half-wavelength ULA, `[1, e^{j pi sin t}, ..., e^{j pi (N-1) sin t}]`.
pub fn steering_vector(theta: f64, antennas: usize) -> Vec<Complex64> {
    let phase = PI * theta.sin();
    (0..antennas).map(|n| Complex64::from_polar(1.0, phase * n as f64)).collect()
}

/// Friis power gain `lambda^2 / (4 pi d)^2`.
pub fn comm_gain(distance: f64, wavelength: f64) -> Result<f64> {
    positive("distance", distance)?;
    positive("wavelength", wavelength)?;
    Ok((wavelength / (4.0 * PI * distance)).powi(2))
}

/// Round-trip radar range equation gain `sigma lambda^2 / ((4 pi)^3 d^4)`.
pub fn radar_gain(distance: f64, rcs: f64, wavelength: f64) -> Result<f64> {
    positive("distance", distance)?;
    positive("rcs", rcs)?;
    positive("wavelength", wavelength)?;
    Ok(rcs * wavelength * wavelength / ((4.0 * PI).powi(3) * distance.powi(4)))
}

/// Direction of sector `index` (1-based) of the uniform sweep codebook over
/// `[-theta_max, theta_max]`.
pub fn codebook_angle(index: usize, count: usize, theta_max: f64) -> Result<f64> {
    if count < 2 || index == 0 || index > count {
        return Err(Error::CodebookIndex { index, count });
    }
    Ok(-theta_max + 2.0 * (index - 1) as f64 * theta_max / (count - 1) as f64)
}

/// Unconjugated inner product `a^T b`.
pub fn dot_t(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hermitian inner product `a^H b`.
pub fn dot_h(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(Complex64::norm_sqr).sum()
}
