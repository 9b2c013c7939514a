//! Bilinear room thermal dynamics.
//!
//! Each room exchanges heat with the outside, with its neighbours and with
//! the supply air of its zone's VAV box. Rooms with a personal device carry an
//! extra state `Δx`: the temperature lift of the small air region around the
//! desk that the device heats.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of one zone's rooms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    /// Room heat capacity (kJ/K).
    pub c: f64,
    /// Heat capacity of the region around the desk device (kJ/K).
    pub c_tilde: f64,
    /// Room to outside conductance (kW/K).
    pub alpha_o: f64,
    /// Symmetric room to room conductances (kW/K); empty means insulated rooms.
    pub alpha_inter: Vec<Vec<f64>>,
    /// Conductance between the device region and the rest of the room (kW/K).
    pub alpha_r: f64,
    /// Air density (kg/m³).
    pub rho: f64,
    /// Air specific heat (kJ/(kg·K)).
    pub sigma: f64,
    /// Device heater power (kW).
    pub q_h: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        ThermalParams {
            c: 2000.0,
            c_tilde: 200.0,
            alpha_o: 0.048,
            alpha_inter: Vec::new(),
            alpha_r: 0.1425,
            rho: 1.2041,
            sigma: 1.0,
            q_h: 0.7,
        }
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c", self.c),
            ("c_tilde", self.c_tilde),
            ("alpha_o", self.alpha_o),
            ("alpha_r", self.alpha_r),
            ("rho", self.rho),
            ("sigma", self.sigma),
            ("q_h", self.q_h),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("thermal parameter {name} must be positive, got {v}")));
            }
        }
        if self.c_tilde >= self.c {
            return Err(Error::invalid("device region capacity must be smaller than the room capacity"));
        }
        let n = self.alpha_inter.len();
        for (i, row) in self.alpha_inter.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid("room coupling matrix must be square"));
            }
            for (j, &a) in row.iter().enumerate() {
                if a < 0.0 || (i == j && a != 0.0) || a != self.alpha_inter[j][i] {
                    return Err(Error::invalid(
                        "room coupling must be symmetric, nonnegative, with zero diagonal",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Coupling between rooms `i` and `j` of a zone.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.alpha_inter.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoomKind {
    /// Room equipped with a personal comfort device.
    TypeS,
    /// Room without a device.
    TypeSBar,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoomState {
    /// Room temperature (°C).
    pub x: f64,
    /// Temperature lift of the device region (K).
    pub delta_x: f64,
    /// Lift one step earlier, used by the region-1 temperature.
    pub delta_x_prev: f64,
}

impl RoomState {
    pub fn at(x: f64) -> Self {
        RoomState {
            x,
            delta_x: 0.0,
            delta_x_prev: 0.0,
        }
    }

    /// Temperature of the device region.
    pub fn x2(&self) -> f64 {
        self.x + self.delta_x
    }

    /// Temperature of the rest of the room given the coupling coefficient `d3`.
    pub fn x1(&self, d3: f64) -> f64 {
        self.x + d3 * self.delta_x_prev
    }
}

/// AHU and VAV commands for one control interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvacCommand {
    /// Supply air temperature (°C).
    pub u: f64,
    /// Flow per zone (m³/s).
    pub v: Vec<f64>,
    /// Exhaust reuse ratio.
    pub r: f64,
    /// Mixer outlet temperature (°C).
    pub t_m: f64,
    /// Cooling coil outlet temperature (°C).
    pub t_c: f64,
}

/// Disturbances acting on one room.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exogenous {
    /// Outside temperature (°C).
    pub t_o: f64,
    pub occupied: bool,
    /// Internal load while occupied (kW).
    pub d: f64,
}

impl Exogenous {
    pub fn load(&self) -> f64 {
        if self.occupied {
            self.d
        } else {
            0.0
        }
    }
}

/// Euler-discretized dynamics of one zone for step `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMatrices {
    pub tau: f64,
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub b: DVector<f64>,
    pub d1: DVector<f64>,
    pub d2: DMatrix<f64>,
    pub a0_tilde: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    pub d3: DMatrix<f64>,
}

impl DiscreteMatrices {
    pub fn zone_size(&self) -> usize {
        self.b.len()
    }

    /// Scalar coefficients of the device-region update.
    pub fn spot_coefficients(&self) -> (f64, f64, f64) {
        if self.zone_size() == 0 {
            return (1.0, 0.0, 0.0);
        }
        (self.a0_tilde[(0, 0)], self.b_tilde[(0, 0)], self.d3[(0, 0)])
    }
}

/// Right-hand side of the room energy balance (K/s).
///
/// `neighbors` holds `(α_lj, x_l)` pairs; `v` is the supply flow entering the
/// room.
pub fn continuous_rhs(x: f64, neighbors: &[(f64, f64)], u: f64, v: f64, exo: &Exogenous, p: &ThermalParams) -> f64 {
    let mut q = -p.alpha_o * (x - exo.t_o);
    for &(a, xl) in neighbors {
        q -= a * (x - xl);
    }
    q += p.rho * p.sigma * v * (u - x);
    q += exo.load();
    q / p.c
}

/// Time derivative of the device-region lift (K/s) for heater duty `w`.
pub fn spot_rhs(delta_x: f64, w: f64, p: &ThermalParams) -> f64 {
    (-p.alpha_r * delta_x + w * p.q_h) / p.c_tilde
}

pub fn build_discrete_matrices(p: &ThermalParams, tau: f64, zone_size: usize) -> Result<DiscreteMatrices> {
    p.validate()?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("step must be nonnegative, got {tau}")));
    }
    let spot_diag = 1.0 - p.alpha_r * tau / p.c_tilde;
    if spot_diag < 0.0 {
        return Err(Error::invalid(format!(
            "step {tau} s makes the device-region update unstable (coefficient {spot_diag})"
        )));
    }
    if !p.alpha_inter.is_empty() && p.alpha_inter.len() != zone_size {
        return Err(Error::invalid("room coupling matrix does not match zone size"));
    }
    let n = zone_size;
    let k = tau / p.c;
    let a0 = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            let sum: f64 = (0..n).map(|l| p.coupling(i, l)).sum();
            1.0 - k * (p.alpha_o + sum)
        } else {
            k * p.coupling(i, j)
        }
    });
    let flow = k * p.rho * p.sigma;
    Ok(DiscreteMatrices {
        tau,
        a0,
        a1: DMatrix::from_diagonal_element(n, n, -flow),
        b: DVector::from_element(n, flow),
        d1: DVector::from_element(n, k * p.alpha_o),
        d2: DMatrix::from_diagonal_element(n, n, k),
        a0_tilde: DMatrix::from_diagonal_element(n, n, spot_diag),
        b_tilde: DMatrix::from_diagonal_element(n, n, tau * p.q_h / p.c_tilde),
        d3: DMatrix::from_diagonal_element(n, n, p.alpha_r * tau / (p.c - p.c_tilde)),
    })
}

/// Inputs seen by one room during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomInput {
    pub u: f64,
    /// Flow entering this room (m³/s).
    pub v: f64,
    pub exo: Exogenous,
}

/// Advances room `j` of a zone by one step. `zone_x` holds the current
/// temperatures of every room in the zone (needed for coupling terms).
pub fn step_room(
    mats: &DiscreteMatrices,
    j: usize,
    zone_x: &[f64],
    state: &RoomState,
    input: &RoomInput,
    heater_w: f64,
    kind: RoomKind,
) -> RoomState {
    let n = mats.zone_size();
    let mut x = 0.0;
    for l in 0..n {
        x += mats.a0[(j, l)] * zone_x[l];
    }
    x += mats.a1[(j, j)] * (state.x * input.v);
    x += mats.b[j] * (input.u * input.v);
    x += mats.d1[j] * input.exo.t_o;
    x += mats.d2[(j, j)] * input.exo.load();
    match kind {
        RoomKind::TypeS => {
            let w = heater_w.clamp(0.0, 1.0);
            RoomState {
                x,
                delta_x: mats.a0_tilde[(j, j)] * state.delta_x + mats.b_tilde[(j, j)] * w,
                delta_x_prev: state.delta_x,
            }
        }
        RoomKind::TypeSBar => RoomState {
            x,
            delta_x: 0.0,
            delta_x_prev: 0.0,
        },
    }
}

/// Advances every room of a zone using the matrix form of the update.
pub fn step_zone(
    mats: &DiscreteMatrices,
    states: &[RoomState],
    inputs: &[RoomInput],
    heater_w: &[f64],
    kinds: &[RoomKind],
) -> Vec<RoomState> {
    let n = mats.zone_size();
    let x = DVector::from_iterator(n, states.iter().map(|s| s.x));
    let v = DVector::from_iterator(n, inputs.iter().map(|i| i.v));
    let uv = DVector::from_iterator(n, inputs.iter().map(|i| i.u * i.v));
    let t_o = DVector::from_iterator(n, inputs.iter().map(|i| i.exo.t_o));
    let load = DVector::from_iterator(n, inputs.iter().map(|i| i.exo.load()));
    let dx = DVector::from_iterator(n, states.iter().map(|s| s.delta_x));
    let w = DVector::from_iterator(n, heater_w.iter().map(|w| w.clamp(0.0, 1.0)));

    // Row-wise accumulation in the same order as `step_room` keeps the two
    // paths bit-identical.
    let mut next = Vec::with_capacity(n);
    let a1x = &mats.a1 * x.component_mul(&v);
    let dload = &mats.d2 * &load;
    let dx_next = &mats.a0_tilde * &dx + &mats.b_tilde * &w;
    for j in 0..n {
        let mut xj = 0.0;
        for l in 0..n {
            xj += mats.a0[(j, l)] * x[l];
        }
        xj += a1x[j];
        xj += mats.b[j] * uv[j];
        xj += mats.d1[j] * t_o[j];
        xj += dload[j];
        next.push(match kinds[j] {
            RoomKind::TypeS => RoomState {
                x: xj,
                delta_x: dx_next[j],
                delta_x_prev: dx[j],
            },
            RoomKind::TypeSBar => RoomState::at(xj),
        });
    }
    next
}

/// Mixer outlet temperature for reuse ratio `r` (at most `r_max`).
pub fn mixer_temp(r: f64, t_e: f64, t_o: f64, r_max: f64) -> Result<f64> {
    if !(0.0..=r_max).contains(&r) {
        return Err(Error::invalid(format!("reuse ratio {r} outside [0, {r_max}]")));
    }
    Ok(r * t_e + (1.0 - r) * t_o)
}

/// Exhaust air temperature: mean of the room temperatures.
pub fn exhaust_temp(states: &[RoomState]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::invalid("exhaust temperature of an empty building"));
    }
    Ok(states.iter().map(|s| s.x).sum::<f64>() / states.len() as f64)
}
