use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::GridError;

const DEFAULT_NETWORK: &str = include_str!("../../../../configs/network68.toml");

/// On-disk network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfigFile {
    #[serde(default)]
    pub name: String,
    pub n_bus: usize,
    #[serde(default = "default_base_frequency")]
    pub base_frequency: f64,
    pub agc_gain: f64,
    #[serde(default)]
    pub vm_droop: f64,
    #[serde(default = "default_max_speed")]
    pub max_speed: f64,
    #[serde(rename = "generator")]
    pub generators: Vec<GeneratorEntry>,
    #[serde(rename = "load", default)]
    pub loads: Vec<LoadEntry>,
    #[serde(rename = "line")]
    pub lines: Vec<LineEntry>,
}

fn default_base_frequency() -> f64 {
    60.0
}

fn default_max_speed() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEntry {
    pub bus: usize,
    pub inertia: f64,
    pub damping: f64,
    pub participation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEntry {
    pub bus: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub from: usize,
    pub to: usize,
    pub b: f64,
}

impl NetworkConfigFile {
    pub fn parse(text: &str) -> Result<Self, GridError> {
        toml::from_str(text).map_err(|e| GridError::Parse(e.to_string()))
    }

    /// The shipped 16-generator, 68-bus surrogate.
    pub fn default_68bus() -> Self {
        Self::parse(DEFAULT_NETWORK).expect("shipped network config parses")
    }
}

/// Validated network with its Kron-reduced generator equivalent.
///
/// Buses are numbered `1..=n` in config files and indexed `0..n` here. Generator
/// parameters are stored in the order generators appear in the config.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub name: String,
    pub n_gen: usize,
    pub n_load: usize,
    /// Symmetric bus susceptance matrix with zero diagonal.
    pub susceptance: DMatrix<f64>,
    /// Bus index hosting each generator.
    pub gen_buses: Vec<usize>,
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
    pub agc_gain: f64,
    pub agc_participation: Vec<f64>,
    /// Real power demand per bus.
    pub base_load: Vec<f64>,
    pub base_frequency: f64,
    pub vm_droop: f64,
    pub max_speed: f64,
    pub(crate) reduction: KronReduction,
}

/// Generator-only equivalent of the bus network.
///
/// With bus angles split into generator (`g`) and non-generator (`l`) blocks of the
/// Laplacian, the non-generator buses satisfy
/// `θ_l = H θ_g − L_ll⁻¹ P_l` with `H = −L_ll⁻¹ L_lg`.
#[derive(Debug, Clone)]
pub(crate) struct KronReduction {
    /// Positive couplings between generators, zero diagonal.
    pub coupling: DMatrix<f64>,
    /// `H`, non-generator bus angles as a function of generator angles.
    pub angle_map: DMatrix<f64>,
    /// `L_ll⁻¹`.
    pub load_inverse: DMatrix<f64>,
    /// Non-generator bus indices, in bus order.
    pub load_buses: Vec<usize>,
    /// Position of each bus in `gen_buses` or `load_buses`.
    pub slot: Vec<Slot>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Slot {
    Gen(usize),
    Load(usize),
}

impl NetworkModel {
    pub fn n_bus(&self) -> usize {
        self.susceptance.nrows()
    }

    /// Sensor ids, one per bus: `bus1`, `bus2`, ...
    pub fn sensor_ids(&self) -> Vec<String> {
        (1..=self.n_bus()).map(|b| format!("bus{b}")).collect()
    }

    /// Demand seen by each generator once bus loads are folded onto the reduced
    /// network: local demand plus `Hᵀ P_l`.
    pub fn effective_load(&self, bus_load: &[f64]) -> DVector<f64> {
        let r = &self.reduction;
        let p_l = DVector::from_iterator(
            r.load_buses.len(),
            r.load_buses.iter().map(|&b| bus_load[b]),
        );
        let mut eff = r.angle_map.transpose() * p_l;
        for (g, &b) in self.gen_buses.iter().enumerate() {
            eff[g] += bus_load[b];
        }
        eff
    }

    /// Bus angles from generator angles under the given bus loads.
    pub fn bus_angles(&self, theta_gen: &[f64], bus_load: &[f64]) -> Vec<f64> {
        let r = &self.reduction;
        let g = DVector::from_column_slice(theta_gen);
        let p_l = DVector::from_iterator(
            r.load_buses.len(),
            r.load_buses.iter().map(|&b| bus_load[b]),
        );
        let th_l = &r.angle_map * g - &r.load_inverse * p_l;
        self.scatter(theta_gen, th_l.as_slice())
    }

    /// Bus angle rates from generator speeds.
    pub fn bus_speeds(&self, omega_gen: &[f64]) -> Vec<f64> {
        let w_l = &self.reduction.angle_map * DVector::from_column_slice(omega_gen);
        self.scatter(omega_gen, w_l.as_slice())
    }

    fn scatter(&self, gen_part: &[f64], load_part: &[f64]) -> Vec<f64> {
        self.reduction
            .slot
            .iter()
            .map(|s| match *s {
                Slot::Gen(g) => gen_part[g],
                Slot::Load(l) => load_part[l],
            })
            .collect()
    }

    /// Weights `w` with `wᵀ ω_gen` equal to the mean over all buses of the bus angle rate.
    pub fn mean_speed_weights(&self) -> Vec<f64> {
        let n = self.n_bus() as f64;
        let h = &self.reduction.angle_map;
        (0..self.n_gen)
            .map(|g| (1.0 + h.column(g).sum()) / n)
            .collect()
    }

    pub fn is_generator_bus(&self, bus: usize) -> bool {
        matches!(self.reduction.slot.get(bus), Some(Slot::Gen(_)))
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> GridError {
    GridError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Validate a parsed config and precompute the Kron reduction.
pub fn build_network(cfg: &NetworkConfigFile) -> Result<NetworkModel, GridError> {
    let n = cfg.n_bus;
    if n < 2 {
        return Err(invalid("n_bus", "need at least two buses"));
    }
    if cfg.generators.is_empty() {
        return Err(invalid("generator", "need at least one generator"));
    }
    let bus_index = |field: &str, bus: usize| -> Result<usize, GridError> {
        if bus == 0 || bus > n {
            Err(invalid(field, format!("bus {bus} outside 1..={n}")))
        } else {
            Ok(bus - 1)
        }
    };

    let mut slot_gen = vec![None; n];
    let mut gen_buses = Vec::new();
    let mut inertia = Vec::new();
    let mut damping = Vec::new();
    let mut participation = Vec::new();
    for (g, gen) in cfg.generators.iter().enumerate() {
        let b = bus_index("generator.bus", gen.bus)?;
        if slot_gen[b].is_some() {
            return Err(invalid(
                "generator.bus",
                format!("bus {} has two generators", gen.bus),
            ));
        }
        if !(gen.inertia > 0.0) {
            return Err(invalid(
                "generator.inertia",
                format!("bus {}: must be > 0", gen.bus),
            ));
        }
        if !(gen.damping >= 0.0) {
            return Err(invalid(
                "generator.damping",
                format!("bus {}: must be >= 0", gen.bus),
            ));
        }
        if !(gen.participation >= 0.0) {
            return Err(invalid(
                "agc_participation",
                format!("bus {}: must be >= 0", gen.bus),
            ));
        }
        slot_gen[b] = Some(g);
        gen_buses.push(b);
        inertia.push(gen.inertia);
        damping.push(gen.damping);
        participation.push(gen.participation);
    }
    let total: f64 = participation.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(
            "agc_participation",
            format!("weights sum to {total}, expected 1"),
        ));
    }
    if !(cfg.agc_gain >= 0.0) {
        return Err(invalid("agc_gain", "must be >= 0"));
    }
    if !(cfg.base_frequency > 0.0) {
        return Err(invalid("base_frequency", "must be > 0"));
    }
    if !(cfg.max_speed > 0.0) {
        return Err(invalid("max_speed", "must be > 0"));
    }

    let mut base_load = vec![0.0; n];
    for l in &cfg.loads {
        let b = bus_index("load.bus", l.bus)?;
        if !l.p.is_finite() {
            return Err(invalid("load.p", format!("bus {}: non-finite", l.bus)));
        }
        base_load[b] += l.p;
    }

    let mut b_mat = DMatrix::zeros(n, n);
    for line in &cfg.lines {
        let i = bus_index("line.from", line.from)?;
        let j = bus_index("line.to", line.to)?;
        if i == j {
            return Err(invalid("line", format!("self loop at bus {}", line.from)));
        }
        if !(line.b > 0.0) || !line.b.is_finite() {
            return Err(invalid(
                "line.b",
                format!("{}-{}: must be > 0", line.from, line.to),
            ));
        }
        b_mat[(i, j)] += line.b;
        b_mat[(j, i)] += line.b;
    }
    if !is_connected(&b_mat) {
        return Err(invalid("line", "network is not connected"));
    }

    let reduction = kron_reduce(&b_mat, &slot_gen, gen_buses.len())?;
    let n_gen = gen_buses.len();
    Ok(NetworkModel {
        name: cfg.name.clone(),
        n_gen,
        n_load: n - n_gen,
        susceptance: b_mat,
        gen_buses,
        inertia,
        damping,
        agc_gain: cfg.agc_gain,
        agc_participation: participation,
        base_load,
        base_frequency: cfg.base_frequency,
        vm_droop: cfg.vm_droop,
        max_speed: cfg.max_speed,
        reduction,
    })
}

fn is_connected(b: &DMatrix<f64>) -> bool {
    let n = b.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if b[(i, j)] > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn kron_reduce(
    b: &DMatrix<f64>,
    slot_gen: &[Option<usize>],
    n_gen: usize,
) -> Result<KronReduction, GridError> {
    let n = b.nrows();
    let mut slot = Vec::with_capacity(n);
    let mut load_buses = Vec::new();
    let mut gen_order = vec![0; n_gen];
    for (bus, s) in slot_gen.iter().enumerate() {
        match s {
            Some(g) => {
                gen_order[*g] = bus;
                slot.push(Slot::Gen(*g));
            }
            None => {
                slot.push(Slot::Load(load_buses.len()));
                load_buses.push(bus);
            }
        }
    }
    let lap = |i: usize, j: usize| {
        if i == j {
            b.row(i).sum()
        } else {
            -b[(i, j)]
        }
    };
    let nl = load_buses.len();
    let l_gg = DMatrix::from_fn(n_gen, n_gen, |a, c| lap(gen_order[a], gen_order[c]));
    let (angle_map, load_inverse, y) = if nl == 0 {
        (DMatrix::zeros(0, n_gen), DMatrix::zeros(0, 0), l_gg)
    } else {
        let l_ll = DMatrix::from_fn(nl, nl, |a, c| lap(load_buses[a], load_buses[c]));
        let l_lg = DMatrix::from_fn(nl, n_gen, |a, c| lap(load_buses[a], gen_order[c]));
        let chol = l_ll
            .cholesky()
            .ok_or_else(|| invalid("line", "load-bus Laplacian block is singular"))?;
        let load_inverse = chol.inverse();
        let h = -(&load_inverse * &l_lg);
        let y = &l_gg + l_lg.transpose() * &h;
        (h, load_inverse, y)
    };
    let coupling = DMatrix::from_fn(n_gen, n_gen, |a, c| if a == c { 0.0 } else { -y[(a, c)] });
    Ok(KronReduction {
        coupling,
        angle_map,
        load_inverse,
        load_buses,
        slot,
    })
}
