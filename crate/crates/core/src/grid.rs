//! Static network description and bus admittance matrix assembly.
//!
//! Everything here is per-unit. Branches use the standard π model with an
//! optional off-nominal tap on the from side:
//!
//! ```text
//! Y_ff += (y + j·b/2) / τ²     Y_ft += -y / τ
//! Y_tt += (y + j·b/2)          Y_tf += -y / τ
//! ```
//!
//! where `y = 1 / (r + j·x)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BusSpec {
    /// Identifier as written in the case file.
    pub id: u32,
    pub bus_type: BusType,
    pub pd: f64,
    pub qd: f64,
    pub vmin: f64,
    pub vmax: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
    /// No load and no generator. Filled in by [`GridCase::new`].
    pub is_zero_injection: bool,
}

impl BusSpec {
    pub fn new(id: u32, bus_type: BusType, pd: f64, qd: f64, vmin: f64, vmax: f64) -> Self {
        Self {
            id,
            bus_type,
            pd,
            qd,
            vmin,
            vmax,
            shunt_g: 0.0,
            shunt_b: 0.0,
            is_zero_injection: false,
        }
    }

    pub fn with_shunt(mut self, g: f64, b: f64) -> Self {
        self.shunt_g = g;
        self.shunt_b = b;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GenSpec {
    /// Contiguous bus index (not the case-file id).
    pub bus: usize,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    pub vset: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BranchSpec {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, split evenly between both ends.
    pub b_charging: f64,
    pub tap: f64,
    /// Apparent power limit; 0 means unlimited.
    pub smax: f64,
}

impl BranchSpec {
    pub fn line(from: usize, to: usize, r: f64, x: f64, b_charging: f64) -> Self {
        Self {
            from,
            to,
            r,
            x,
            b_charging,
            tap: 1.0,
            smax: 0.0,
        }
    }

    /// Series admittance `1 / (r + jx)` as `(g, b)`.
    pub fn series_admittance(&self) -> (f64, f64) {
        let d = self.r * self.r + self.x * self.x;
        (self.r / d, -self.x / d)
    }
}

/// Dense `Y_bus = G + jB`, row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdmittanceMatrix {
    pub n: usize,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
}

impl AdmittanceMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            g: vec![0.0; n * n],
            b: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.n + j]
    }

    #[inline]
    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.b[i * self.n + j]
    }

    fn add(&mut self, i: usize, j: usize, g: f64, b: f64) {
        self.g[i * self.n + j] += g;
        self.b[i * self.n + j] += b;
    }
}

/// Assemble the bus admittance matrix from shunts and π-model branches.
pub fn build_ybus(buses: &[BusSpec], branches: &[BranchSpec]) -> AdmittanceMatrix {
    let mut y = AdmittanceMatrix::zeros(buses.len());
    for (i, bus) in buses.iter().enumerate() {
        y.add(i, i, bus.shunt_g, bus.shunt_b);
    }
    for br in branches {
        let (gs, bs) = br.series_admittance();
        let bc = br.b_charging / 2.0;
        let tau = br.tap;
        let tau2 = tau * tau;
        y.add(br.from, br.from, gs / tau2, (bs + bc) / tau2);
        y.add(br.to, br.to, gs, bs + bc);
        y.add(br.from, br.to, -gs / tau, -bs / tau);
        y.add(br.to, br.from, -gs / tau, -bs / tau);
    }
    y
}

/// A validated network with its admittance matrix.
///
/// Generators are aggregated to one entry per bus; `gen_at_bus[i]` indexes
/// into `gens`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<BusSpec>,
    pub gens: Vec<GenSpec>,
    pub branches: Vec<BranchSpec>,
    pub ybus: AdmittanceMatrix,
    pub slack: usize,
    pub gen_at_bus: Vec<Option<usize>>,
}

impl GridCase {
    /// Validate the tables, aggregate generators per bus, mark zero-injection
    /// buses and assemble `Y_bus`.
    pub fn new(
        base_mva: f64,
        mut buses: Vec<BusSpec>,
        gens: Vec<GenSpec>,
        branches: Vec<BranchSpec>,
    ) -> Result<Self> {
        let n = buses.len();
        if n == 0 {
            return Err(invalid("case has no buses"));
        }
        if !(base_mva > 0.0) {
            return Err(invalid("base_mva must be positive"));
        }

        let slacks: Vec<usize> = (0..n)
            .filter(|&i| buses[i].bus_type == BusType::Slack)
            .collect();
        if slacks.len() != 1 {
            return Err(invalid(format!(
                "expected exactly one slack bus, found {}",
                slacks.len()
            )));
        }
        for (k, bus) in buses.iter().enumerate() {
            if !(bus.vmin > 0.0 && bus.vmin < bus.vmax) {
                return Err(invalid(format!(
                    "bus {}: need 0 < Vmin < Vmax, got [{}, {}]",
                    bus.id, bus.vmin, bus.vmax
                )));
            }
            if buses[..k].iter().any(|b| b.id == bus.id) {
                return Err(invalid(format!("duplicate bus id {}", bus.id)));
            }
        }

        let mut aggregated: Vec<GenSpec> = Vec::new();
        let mut gen_at_bus: Vec<Option<usize>> = vec![None; n];
        for gen in gens {
            if gen.bus >= n {
                return Err(invalid(format!("generator references missing bus {}", gen.bus)));
            }
            if gen.pmin > gen.pmax || gen.qmin > gen.qmax {
                return Err(invalid(format!(
                    "generator at bus {}: inverted capability limits",
                    buses[gen.bus].id
                )));
            }
            match gen_at_bus[gen.bus] {
                Some(k) => {
                    let agg = &mut aggregated[k];
                    agg.pmin += gen.pmin;
                    agg.pmax += gen.pmax;
                    agg.qmin += gen.qmin;
                    agg.qmax += gen.qmax;
                }
                None => {
                    gen_at_bus[gen.bus] = Some(aggregated.len());
                    aggregated.push(gen);
                }
            }
        }
        for (i, bus) in buses.iter().enumerate() {
            if bus.bus_type != BusType::Pq && gen_at_bus[i].is_none() {
                return Err(invalid(format!(
                    "voltage-controlled bus {} has no generator",
                    bus.id
                )));
            }
        }

        for br in &branches {
            if br.from >= n || br.to >= n {
                return Err(invalid("branch references missing bus"));
            }
            if br.from == br.to {
                return Err(invalid(format!("branch loops on bus {}", buses[br.from].id)));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(invalid("branch with zero impedance"));
            }
            if !(br.tap > 0.0) {
                return Err(invalid("branch tap must be positive"));
            }
            if br.smax < 0.0 {
                return Err(invalid("branch Smax must be non-negative"));
            }
        }

        for (i, bus) in buses.iter_mut().enumerate() {
            bus.is_zero_injection = bus.pd == 0.0 && bus.qd == 0.0 && gen_at_bus[i].is_none();
        }

        let ybus = build_ybus(&buses, &branches);
        Ok(Self {
            base_mva,
            buses,
            gens: aggregated,
            branches,
            ybus,
            slack: slacks[0],
            gen_at_bus,
        })
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    /// Length of a state vector for this grid.
    pub fn state_dim(&self) -> usize {
        4 * self.n()
    }

    pub fn bus_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.buses.iter().map(|b| b.id)
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn gen_at(&self, bus: usize) -> Option<&GenSpec> {
        self.gen_at_bus[bus].map(|k| &self.gens[k])
    }

    pub fn zero_injection_buses(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(|&i| self.buses[i].is_zero_injection)
    }

    /// State-vector indices of the P and Q entries of zero-injection buses.
    pub fn zero_injection_features(&self) -> Vec<usize> {
        let n = self.n();
        let mut idx: Vec<usize> = self.zero_injection_buses().collect();
        let q: Vec<usize> = idx.iter().map(|i| n + i).collect();
        idx.extend(q);
        idx
    }

    /// Feature names `P_<id>`, `Q_<id>`, `V_<id>`, `theta_<id>` in state order.
    pub fn feature_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.state_dim());
        for prefix in ["P", "Q", "V", "theta"] {
            for id in self.bus_ids() {
                labels.push(format!("{prefix}_{id}"));
            }
        }
        labels
    }

    /// SHA-256 over a canonical little-endian encoding of every table.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"pfdiff-grid-v1");
        h.update(self.base_mva.to_le_bytes());
        h.update((self.n() as u64).to_le_bytes());
        for bus in &self.buses {
            h.update(bus.id.to_le_bytes());
            h.update([match bus.bus_type {
                BusType::Slack => 3u8,
                BusType::Pv => 2,
                BusType::Pq => 1,
            }]);
            for v in [bus.pd, bus.qd, bus.vmin, bus.vmax, bus.shunt_g, bus.shunt_b] {
                h.update(v.to_le_bytes());
            }
        }
        h.update((self.gens.len() as u64).to_le_bytes());
        for gen in &self.gens {
            h.update((gen.bus as u64).to_le_bytes());
            for v in [gen.pmin, gen.pmax, gen.qmin, gen.qmax, gen.vset] {
                h.update(v.to_le_bytes());
            }
        }
        h.update((self.branches.len() as u64).to_le_bytes());
        for br in &self.branches {
            h.update((br.from as u64).to_le_bytes());
            h.update((br.to as u64).to_le_bytes());
            for v in [br.r, br.x, br.b_charging, br.tap, br.smax] {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        hex_string(&self.digest())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    use core::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
