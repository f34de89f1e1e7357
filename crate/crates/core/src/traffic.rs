//! Poisson packet arrivals and the FIFO buffer that turns them into a
//! slot-by-slot transmit schedule.
//!
//! Time is slotted at the symbol rate. A packet that arrives at `t` may
//! start in the first slot whose start time is at or after `t`, occupies
//! `ceil(B / log2 Q)` data slots, and is preempted (not dropped) by pilot
//! slots. Unsent symbols carry over to the next window.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketArrival {
    /// Arrival time [s].
    pub time: f64,
    /// Data slots needed to send the packet.
    pub symbols: u32,
}

/// What the base station does in one symbol slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotKind {
    Data,
    /// Sensing pilot towards codebook sector `n` (1-based).
    Pilot(usize),
    Idle,
}

/// Infinite FIFO buffer plus the partially sent head-of-line packet.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BufferState {
    queue: VecDeque<PacketArrival>,
    in_service: u32,
    completed: u64,
}

impl BufferState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Symbols left of the packet currently being sent.
    pub fn in_service(&self) -> u32 {
        self.in_service
    }

    /// Packets waiting behind the one in service.
    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Packets whose last symbol has been sent since this buffer was created.
    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn backlog_symbols(&self) -> u64 {
        u64::from(self.in_service) + self.queue.iter().map(|p| u64::from(p.symbols)).sum::<u64>()
    }

    pub fn push(&mut self, packet: PacketArrival) {
        self.queue.push_back(packet);
    }

    /// Takes one data slot if any data is eligible.
    fn take_symbol(&mut self) -> bool {
        if self.in_service == 0 {
            match self.queue.pop_front() {
                Some(p) if p.symbols > 0 => self.in_service = p.symbols,
                Some(_) => {
                    self.completed += 1;
                    return self.take_symbol();
                }
                None => return false,
            }
        }
        self.in_service -= 1;
        if self.in_service == 0 {
            self.completed += 1;
        }
        true
    }
}

/// Placement of a sensing window on the absolute slot axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub first_slot: u64,
    pub slots: usize,
    /// Symbol rate [slots/s].
    pub symbol_rate: f64,
}

impl Window {
    pub fn start_time(&self) -> f64 {
        self.first_slot as f64 / self.symbol_rate
    }

    pub fn end_time(&self) -> f64 {
        (self.first_slot + self.slots as u64) as f64 / self.symbol_rate
    }
}

/// Poisson arrivals on `[0, horizon)`, sorted ascending.
pub fn generate_arrivals<R: Rng + ?Sized>(rate: f64, horizon: f64, symbols: u32, rng: &mut R) -> Vec<PacketArrival> {
    let mut out = Vec::new();
    if rate <= 0.0 || horizon <= 0.0 {
        return out;
    }
    let gap = Exp::new(rate).expect("rate is positive");
    let mut t = gap.sample(rng);
    while t < horizon {
        out.push(PacketArrival { time: t, symbols });
        t += gap.sample(rng);
    }
    out
}

/// First slot a packet arriving at `time` may use.
fn eligible_slot(time: f64, symbol_rate: f64) -> u64 {
    (time * symbol_rate).ceil().max(0.0) as u64
}

/// Lays out one sensing window.
///
/// `arrivals` is the full sorted arrival list; only those inside the window
/// are admitted (earlier ones are assumed to already sit in `buffer`).
/// `pilots` are slot offsets inside the window; the i-th listed pilot
/// sweeps codebook sector `i mod N + 1` where `N = sectors`.
pub fn build_schedule(
    arrivals: &[PacketArrival],
    mut buffer: BufferState,
    window: Window,
    pilots: &[usize],
    sectors: usize,
) -> Result<(Vec<SlotKind>, BufferState)> {
    let mut pilot_at = vec![0usize; window.slots];
    for (i, &slot) in pilots.iter().enumerate() {
        if slot >= window.slots {
            return Err(Error::PilotOutsideWindow { slot, slots: window.slots });
        }
        if pilot_at[slot] != 0 {
            return Err(Error::OverlappingPilots(slot));
        }
        pilot_at[slot] = i % sectors.max(1) + 1;
    }

    let t0 = window.start_time();
    let t1 = window.end_time();
    let lo = arrivals.partition_point(|p| p.time < t0);
    let hi = arrivals.partition_point(|p| p.time < t1);
    let incoming = &arrivals[lo..hi];
    let mut next = 0;

    let mut slots = Vec::with_capacity(window.slots);
    for (k, &sector) in pilot_at.iter().enumerate() {
        let abs = window.first_slot + k as u64;
        while next < incoming.len() && eligible_slot(incoming[next].time, window.symbol_rate) <= abs {
            buffer.push(incoming[next]);
            next += 1;
        }
        let kind = if sector != 0 {
            SlotKind::Pilot(sector)
        } else if buffer.take_symbol() {
            SlotKind::Data
        } else {
            SlotKind::Idle
        };
        slots.push(kind);
    }
    for &p in &incoming[next..] {
        buffer.push(p);
    }
    Ok((slots, buffer))
}

/// Draws a unit-energy Q-PSK symbol.
pub fn psk_symbol<R: Rng + ?Sized>(order: u32, rng: &mut R) -> num_complex::Complex64 {
    let k = rng.random_range(0..order.max(1));
    if order == 2 {
        return num_complex::Complex64::new(if k == 0 { 1.0 } else { -1.0 }, 0.0);
    }
    num_complex::Complex64::from_polar(1.0, std::f64::consts::TAU * f64::from(k) / f64::from(order))
}
