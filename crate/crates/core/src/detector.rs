//! Coherent-integration GLRT over an angle grid with CA-CFAR thresholding.
//!
//! For a candidate angle `t` with steering vector `a`, the statistic is
//!
//! ```text
//! chi(t) = |sum_m y_m^H a a^T s_m|^2 / sum_m ||a a^T s_m||^2
//! ```
//!
//! and the matching gain estimate is `sum_m (a a^T s_m)^H y_m / sum_m ||a a^T s_m||^2`.
//! Observations are folded into per-precoder sufficient statistics by
//! [`CoherentIntegrator`]: when `s_m = c_m f` for a shared precoder `f`, both
//! sums only depend on `f`, `sum_m conj(c_m) y_m` and `sum_m |c_m|^2`, so a
//! window of thousands of data slots costs O(N) per slot plus
//! O(grid * beams * N) for the map.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::SensingObservation;
use crate::error::{Error, Result};
use crate::geometry::{dot_h, dot_t, norm_sqr, steering_vector};
use crate::policy::Beam;

/// Uniformly spaced candidate angles with cached steering vectors.
#[derive(Debug, Clone)]
pub struct AngleGrid {
    angles: Vec<f64>,
    steering: Vec<Vec<Complex64>>,
}

impl AngleGrid {
    /// Grid from `-half_width` to `+half_width` inclusive with the given step.
    pub fn symmetric(half_width: f64, step: f64, antennas: usize) -> Result<Self> {
        if step.is_nan() || step <= 0.0 || half_width.is_nan() || half_width <= 0.0 || half_width > FRAC_PI_2 {
            return Err(Error::Invalid(format!("bad angle grid: half width {half_width} rad, step {step} rad")));
        }
        let cells = (2.0 * half_width / step + 1e-9).floor() as usize + 1;
        let angles = (0..cells).map(|i| -half_width + i as f64 * step).collect();
        Ok(Self::from_angles(angles, antennas))
    }

    /// Arbitrary strictly increasing angles (used by tests and oracles).
    pub fn from_angles(angles: Vec<f64>, antennas: usize) -> Self {
        debug_assert!(angles.windows(2).all(|w| w[0] < w[1]));
        let steering = angles.iter().map(|&t| steering_vector(t, antennas)).collect();
        Self { angles, steering }
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn antennas(&self) -> usize {
        self.steering.first().map_or(0, Vec::len)
    }

    pub fn steering(&self, cell: usize) -> &[Complex64] {
        &self.steering[cell]
    }
}

#[derive(Debug, Clone)]
struct BeamGroup {
    key: Option<Beam>,
    precoder: Vec<Complex64>,
    precoder_norm_sqr: f64,
    /// `sum_m conj(c_m) y_m`
    matched: Vec<Complex64>,
    /// `sum_m |c_m|^2`
    energy: f64,
}

const NULL_TOLERANCE: f64 = 1e-24;

/// Running coherent sums for one sensing window.
#[derive(Debug, Clone)]
pub struct CoherentIntegrator {
    antennas: usize,
    groups: Vec<BeamGroup>,
    observations: usize,
}

impl CoherentIntegrator {
    pub fn new(antennas: usize) -> Self {
        Self { antennas, groups: Vec::new(), observations: 0 }
    }

    pub fn observations(&self) -> usize {
        self.observations
    }

    /// Adds an observation whose transmit vector was `coeff * precoder`,
    /// where `precoder` is identified by `beam`.
    pub fn add_beam(&mut self, beam: Beam, precoder: &[Complex64], coeff: Complex64, y: &[Complex64]) {
        debug_assert_eq!(y.len(), self.antennas);
        let idx = match self.groups.iter().position(|g| g.key == Some(beam)) {
            Some(i) => i,
            None => {
                self.groups.push(BeamGroup {
                    key: Some(beam),
                    precoder: precoder.to_vec(),
                    precoder_norm_sqr: norm_sqr(precoder),
                    matched: vec![Complex64::new(0.0, 0.0); self.antennas],
                    energy: 0.0,
                });
                self.groups.len() - 1
            }
        };
        let g = &mut self.groups[idx];
        let c = coeff.conj();
        for (m, v) in g.matched.iter_mut().zip(y) {
            *m += c * v;
        }
        g.energy += coeff.norm_sqr();
        self.observations += 1;
    }

    /// Adds a raw observation as its own group.
    pub fn add_observation(&mut self, obs: &SensingObservation) -> Result<()> {
        for len in [obs.y.len(), obs.s.len()] {
            if len != self.antennas {
                return Err(Error::DimensionMismatch { expected: self.antennas, got: len });
            }
        }
        self.groups.push(BeamGroup {
            key: None,
            precoder: obs.s.clone(),
            precoder_norm_sqr: norm_sqr(&obs.s),
            matched: obs.y.clone(),
            energy: 1.0,
        });
        self.observations += 1;
        Ok(())
    }

    /// Returns `(nu, denom)` at steering vector `a`, where
    /// `nu = sum_m (a a^T s_m)^H y_m` and `denom = sum_m ||a a^T s_m||^2`.
    /// `denom` is zero when every transmit vector is orthogonal to `a` up to
    /// rounding.
    fn project(&self, a: &[Complex64]) -> (Complex64, f64) {
        let n = a.len() as f64;
        let mut nu = Complex64::new(0.0, 0.0);
        let mut denom = 0.0;
        // Cauchy-Schwarz bound on denom, used to recognise exact nulls.
        let mut bound = 0.0;
        for g in &self.groups {
            let p = dot_t(a, &g.precoder);
            nu += p.conj() * dot_h(a, &g.matched);
            denom += n * p.norm_sqr() * g.energy;
            bound += n * n * g.precoder_norm_sqr * g.energy;
        }
        if denom <= NULL_TOLERANCE * bound {
            return (nu, 0.0);
        }
        (nu, denom)
    }

    pub fn glrt_map(&self, grid: &AngleGrid) -> Result<GlrtMap> {
        if self.observations == 0 {
            return Err(Error::NoObservations);
        }
        if grid.antennas() != self.antennas {
            return Err(Error::DimensionMismatch { expected: self.antennas, got: grid.antennas() });
        }
        let mut chi = Vec::with_capacity(grid.len());
        let mut gain = Vec::with_capacity(grid.len());
        let mut usable = Vec::with_capacity(grid.len());
        for cell in 0..grid.len() {
            let (nu, denom) = self.project(grid.steering(cell));
            if denom > 0.0 {
                chi.push(nu.norm_sqr() / denom);
                gain.push(Some(nu / denom));
                usable.push(true);
            } else {
                chi.push(0.0);
                gain.push(None);
                usable.push(false);
            }
        }
        Ok(GlrtMap {
            angles: grid.angles().to_vec(),
            chi,
            gain,
            usable,
            threshold: None,
            observations: self.observations,
        })
    }

    pub fn estimate_gain(&self, theta: f64) -> Result<Complex64> {
        let a = steering_vector(theta, self.antennas);
        let (nu, denom) = self.project(&a);
        if denom > 0.0 {
            Ok(nu / denom)
        } else {
            Err(Error::UndefinedGain)
        }
    }
}

fn integrate(obs: &[SensingObservation]) -> Result<CoherentIntegrator> {
    let first = obs.first().ok_or(Error::NoObservations)?;
    let mut acc = CoherentIntegrator::new(first.y.len());
    for o in obs {
        acc.add_observation(o)?;
    }
    Ok(acc)
}

/// GLRT statistic over `grid` for a list of observations.
pub fn glrt_map(obs: &[SensingObservation], grid: &AngleGrid) -> Result<GlrtMap> {
    integrate(obs)?.glrt_map(grid)
}

/// Least-squares target gain at `theta`.
pub fn estimate_gain(obs: &[SensingObservation], theta: f64) -> Result<Complex64> {
    integrate(obs)?.estimate_gain(theta)
}

/// Fixed GLRT threshold `N0 ln(1 / p_fa)`; under H0 `chi / N0` is unit-mean
/// exponential so this gives exactly `p_fa` per cell.
pub fn fixed_threshold(noise_psd: f64, p_fa: f64) -> f64 {
    noise_psd * (1.0 / p_fa).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlrtMap {
    pub angles: Vec<f64>,
    pub chi: Vec<f64>,
    gain: Vec<Option<Complex64>>,
    /// False where every transmit vector is orthogonal to the steering vector.
    pub usable: Vec<bool>,
    pub threshold: Option<Vec<f64>>,
    pub observations: usize,
}

impl GlrtMap {
    pub fn gain(&self, cell: usize) -> Option<Complex64> {
        self.gain[cell]
    }

    pub fn with_thresholds(mut self, threshold: Vec<f64>) -> Self {
        debug_assert_eq!(threshold.len(), self.chi.len());
        self.threshold = Some(threshold);
        self
    }
}

/// CA-CFAR multiplier `p_fa^(-1/n) - 1` for `n` training cells.
pub fn cfar_multiplier(p_fa: f64, training: usize) -> f64 {
    p_fa.powf(-1.0 / training as f64) - 1.0
}

/// Where the training cells of each cell under test come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainingLayout {
    /// `guard` cells on each side, then the nearest cells.
    Contiguous { guard: usize },
    /// Guard region and training spacing measured in `sin(theta)`, in units
    /// of `1/N`. A guard of 2 covers the array main lobe out to its first
    /// nulls; a spacing of 1 keeps training cells roughly uncorrelated on an
    /// oversampled grid.
    Beamspace { guard: f64, spacing: f64 },
}

/// Training-cell candidates for every cell of a grid, nearest first.
#[derive(Debug, Clone)]
pub struct Cfar {
    training: usize,
    candidates: Candidates,
}

#[derive(Debug, Clone)]
enum Candidates {
    /// Computed on demand so long lines stay linear in memory.
    Contiguous {
        cells: usize,
        guard: usize,
    },
    Listed {
        left: Vec<Vec<usize>>,
        right: Vec<Vec<usize>>,
    },
}

impl Cfar {
    pub fn contiguous(cells: usize, training: usize, guard: usize) -> Result<Self> {
        if cells <= training + 2 * guard + 1 {
            return Err(Error::CfarGridTooShort { cell: 0, needed: training + 2 * guard + 1, available: cells });
        }
        Self::checked(training, Candidates::Contiguous { cells, guard })
    }

    pub fn beamspace(grid: &AngleGrid, training: usize, guard: f64, spacing: f64) -> Result<Self> {
        let n = grid.antennas() as f64;
        let sines: Vec<f64> = grid.angles().iter().map(|t| t.sin()).collect();
        let (guard, spacing) = (guard / n, spacing / n);
        let pick = |i: usize, order: &mut dyn Iterator<Item = usize>| {
            let mut out: Vec<usize> = Vec::new();
            for j in order {
                let d = (sines[j] - sines[i]).abs();
                if d < guard {
                    continue;
                }
                if out.last().is_none_or(|&k| (sines[j] - sines[k]).abs() >= spacing) {
                    out.push(j);
                }
            }
            out
        };
        let cells = grid.len();
        let left = (0..cells).map(|i| pick(i, &mut (0..i).rev())).collect();
        let right = (0..cells).map(|i| pick(i, &mut (i + 1..cells))).collect();
        Self::checked(training, Candidates::Listed { left, right })
    }

    fn checked(training: usize, candidates: Candidates) -> Result<Self> {
        if training == 0 {
            return Err(Error::Invalid("CFAR needs at least one training cell".into()));
        }
        let cfar = Self { training, candidates };
        for cell in 0..cfar.cells() {
            let available = match &cfar.candidates {
                Candidates::Contiguous { cells, guard } => {
                    cell.saturating_sub(*guard) + cells.saturating_sub(cell + guard + 1)
                }
                Candidates::Listed { left, right } => left[cell].len() + right[cell].len(),
            };
            if available < training {
                return Err(Error::CfarGridTooShort { cell, needed: training, available });
            }
        }
        Ok(cfar)
    }

    fn cells(&self) -> usize {
        match &self.candidates {
            Candidates::Contiguous { cells, .. } => *cells,
            Candidates::Listed { left, .. } => left.len(),
        }
    }

    /// Candidates on one side of `cell`, nearest first.
    fn side(&self, cell: usize, left: bool) -> Box<dyn Iterator<Item = usize> + '_> {
        match &self.candidates {
            Candidates::Contiguous { cells, guard } if left => Box::new((0..cell.saturating_sub(*guard)).rev()),
            Candidates::Contiguous { cells, guard } => Box::new((cell + guard + 1).min(*cells)..*cells),
            Candidates::Listed { left: l, .. } if left => Box::new(l[cell].iter().copied()),
            Candidates::Listed { right: r, .. } => Box::new(r[cell].iter().copied()),
        }
    }

    pub fn training_cells(&self) -> usize {
        self.training
    }

    /// Training cells for `cell`: half from each side, topped up from the
    /// other side near the edges. Cells marked unusable are skipped.
    pub fn training_set(&self, cell: usize, usable: &[bool]) -> Vec<usize> {
        let ok = |j: &usize| usable.get(*j).copied().unwrap_or(true);
        let l: Vec<usize> = self.side(cell, true).filter(ok).take(self.training).collect();
        let r: Vec<usize> = self.side(cell, false).filter(ok).take(self.training).collect();
        let half = self.training / 2;
        let mut nl = half.min(l.len());
        let nr = (self.training - nl).min(r.len());
        nl = (self.training - nr).min(l.len());
        l[..nl].iter().chain(&r[..nr]).copied().collect()
    }

    /// Per-cell thresholds `(p_fa^(-1/n) - 1) * sum(training chi)`.
    pub fn thresholds(&self, chi: &[f64], usable: &[bool], p_fa: f64) -> Vec<f64> {
        (0..chi.len())
            .map(|i| {
                let set = self.training_set(i, usable);
                if set.is_empty() {
                    return f64::INFINITY;
                }
                let sum: f64 = set.iter().map(|&j| chi[j]).sum();
                cfar_multiplier(p_fa, set.len()) * sum
            })
            .collect()
    }
}

/// CA-CFAR with `training` contiguous cells beyond `guard` guard cells on
/// each side.
pub fn cfar_thresholds(chi: &[f64], p_fa: f64, training: usize, guard: usize) -> Result<Vec<f64>> {
    let cfar = Cfar::contiguous(chi.len(), training, guard)?;
    Ok(cfar.thresholds(chi, &vec![true; chi.len()], p_fa))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub theta: f64,
    pub gain: Complex64,
    pub chi: f64,
    pub cell: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionReport {
    pub detections: Vec<Detection>,
    pub observations: usize,
}

/// Cells that are local maxima of `values`: strictly above the left
/// neighbour and not below the right one, with plateaus credited to their
/// leftmost cell only when the plateau itself is a peak.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j + 1 < values.len() && values[j + 1] == values[i] {
            j += 1;
        }
        let left_ok = i == 0 || values[i - 1] < values[i];
        let right_ok = j + 1 == values.len() || values[j + 1] < values[j];
        if left_ok && right_ok {
            peaks.push(i);
        }
        i = j + 1;
    }
    peaks
}

/// Declares a detection at every peak above its threshold.
pub fn detect(map: &GlrtMap) -> Result<DetectionReport> {
    let threshold =
        map.threshold.as_ref().ok_or_else(|| Error::Invalid("thresholds must be computed before detection".into()))?;
    let detections = local_maxima(&map.chi)
        .into_iter()
        .filter(|&i| map.usable[i] && map.chi[i] > threshold[i])
        .map(|i| Detection { theta: map.angles[i], gain: map.gain[i].unwrap_or_default(), chi: map.chi[i], cell: i })
        .collect();
    Ok(DetectionReport { detections, observations: map.observations })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchOutcome {
    pub hits: Vec<bool>,
    pub false_detections: usize,
}

/// Greedy nearest-first association of detections to true target angles.
pub fn match_detections(report: &DetectionReport, targets: &[f64], tol: f64) -> MatchOutcome {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (d, det) in report.detections.iter().enumerate() {
        for (t, &theta) in targets.iter().enumerate() {
            let dist = (det.theta - theta).abs();
            if dist <= tol {
                pairs.push((dist, d, t));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut hits = vec![false; targets.len()];
    let mut used = vec![false; report.detections.len()];
    for (_, d, t) in pairs {
        if !used[d] && !hits[t] {
            used[d] = true;
            hits[t] = true;
        }
    }
    MatchOutcome { hits, false_detections: used.iter().filter(|u| !**u).count() }
}

/// Grid, CFAR geometry and decision settings bundled for the engine.
#[derive(Debug, Clone)]
pub struct Detector {
    pub grid: AngleGrid,
    pub cfar: Cfar,
    pub p_fa: f64,
    pub tolerance: f64,
}

impl Detector {
    /// Full chain on one window's integrated observations. `None` when the
    /// window collected nothing.
    pub fn run(&self, acc: &CoherentIntegrator) -> Result<Option<DetectionReport>> {
        if acc.observations() == 0 {
            return Ok(None);
        }
        let map = acc.glrt_map(&self.grid)?;
        let thr = self.cfar.thresholds(&map.chi, &map.usable, self.p_fa);
        detect(&map.with_thresholds(thr)).map(Some)
    }
}
