//! Thermal comfort models.
//!
//! [`pmv_full`] is the Fanger heat-balance model with mean radiant temperature
//! equal to air temperature. [`SimplifiedPmvModel`] is the two-variable
//! polynomial surrogate used inside the controller; [`fit_simplified`] fits
//! its three candidate forms by least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Summer,
}

impl Season {
    pub fn as_str(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Summer => "summer",
        }
    }
}

impl std::str::FromStr for Season {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "winter" => Ok(Season::Winter),
            "summer" => Ok(Season::Summer),
            _ => Err(Error::invalid(format!("unknown season '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmvContext {
    /// Relative humidity (%).
    pub humidity: f64,
    /// Metabolic rate (met).
    pub met: f64,
    /// Clothing insulation (clo).
    pub clo: f64,
}

impl PmvContext {
    pub fn for_season(season: Season) -> Self {
        PmvContext {
            humidity: 50.0,
            met: 1.1,
            clo: match season {
                Season::Winter => 1.0,
                Season::Summer => 0.5,
            },
        }
    }
}

const PMV_MAX_ITER: usize = 150;
const PMV_TOL: f64 = 1e-5;

/// Fanger predicted mean vote for air temperature `t` (°C) and air speed
/// `v_a` (m/s). Saturated to ±4.
pub fn pmv_full(t: f64, v_a: f64, ctx: &PmvContext) -> Result<f64> {
    if !(10.0..=40.0).contains(&t) || !(0.0..=2.0).contains(&v_a) {
        return Err(Error::PmvDomain { t, v: v_a });
    }
    let tr = t;
    let pa = ctx.humidity * 10.0 * (16.6536 - 4030.183 / (t + 235.0)).exp();
    let icl = 0.155 * ctx.clo;
    let m = ctx.met * 58.15;
    let mw = m;
    let fcl = if icl <= 0.078 { 1.0 + 1.29 * icl } else { 1.05 + 0.645 * icl };
    let hcf = 12.1 * v_a.sqrt();
    let taa = t + 273.0;
    let tra = tr + 273.0;
    let tcla = taa + (35.5 - t) / (3.5 * icl + 0.1);
    let p1 = icl * fcl;
    let p2 = p1 * 3.96;
    let p3 = p1 * 100.0;
    let p4 = p1 * taa;
    let p5 = 308.7 - 0.028 * mw + p2 * (tra / 100.0).powi(4);

    let mut xn = tcla / 100.0;
    let mut xf = tcla / 50.0;
    let mut hc = hcf;
    let mut n = 0;
    while (xn - xf).abs() > PMV_TOL {
        xf = (xf + xn) / 2.0;
        let hcn = 2.38 * (100.0 * xf - taa).abs().powf(0.25);
        hc = hcf.max(hcn);
        xn = (p5 + p4 * hc - p2 * xf.powi(4)) / (100.0 + p3 * hc);
        n += 1;
        if n > PMV_MAX_ITER {
            return Err(Error::PmvNonConvergence(n));
        }
    }
    let tcl = 100.0 * xn - 273.0;

    let hl1 = 3.05e-3 * (5733.0 - 6.99 * mw - pa);
    let hl2 = if mw > 58.15 { 0.42 * (mw - 58.15) } else { 0.0 };
    let hl3 = 1.7e-5 * m * (5867.0 - pa);
    let hl4 = 0.0014 * m * (34.0 - t);
    let hl5 = 3.96 * fcl * (xn.powi(4) - (tra / 100.0).powi(4));
    let hl6 = fcl * hc * (tcl - t);
    let ts = 0.303 * (-0.036 * m).exp() + 0.028;
    let pmv = ts * (mw - hl1 - hl2 - hl3 - hl4 - hl5 - hl6);
    Ok(pmv.clamp(-4.0, 4.0))
}

/// `PMV = c_t·T + c_v2·v_a² + c_v1·v_a + c_0`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedPmvModel {
    pub c_t: f64,
    pub c_v2: f64,
    pub c_v1: f64,
    pub c_0: f64,
    pub season: Option<Season>,
}

impl SimplifiedPmvModel {
    pub fn winter() -> Self {
        SimplifiedPmvModel {
            c_t: 0.25,
            c_v2: 0.58,
            c_v1: -1.41,
            c_0: -5.47,
            season: Some(Season::Winter),
        }
    }

    pub fn summer() -> Self {
        SimplifiedPmvModel {
            c_t: 0.37,
            c_v2: 0.76,
            c_v1: -2.14,
            c_0: -9.22,
            season: Some(Season::Summer),
        }
    }

    pub fn for_season(season: Season) -> Self {
        match season {
            Season::Winter => Self::winter(),
            Season::Summer => Self::summer(),
        }
    }

    pub fn eval(&self, t: f64, v_a: f64) -> f64 {
        self.c_t * t + self.c_v2 * v_a * v_a + self.c_v1 * v_a + self.c_0
    }

    /// Contribution of the fan alone.
    pub fn fan_term(&self, v_a: f64) -> f64 {
        self.c_v2 * v_a * v_a + self.c_v1 * v_a
    }

    /// Temperature at which the model returns `pmv` for air speed `v_a`.
    pub fn temperature_for(&self, pmv: f64, v_a: f64) -> f64 {
        (pmv - self.fan_term(v_a) - self.c_0) / self.c_t
    }
}

pub fn pmv_simplified(model: &SimplifiedPmvModel, t: f64, v_a: f64) -> f64 {
    model.eval(t, v_a)
}

/// Signed PMV limits preferred by one occupant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortBand {
    pub lo: f64,
    pub hi: f64,
}

impl ComfortBand {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::invalid(format!("comfort band needs lo < hi, got ({lo}, {hi})")));
        }
        Ok(ComfortBand { lo, hi })
    }

    pub fn contains(&self, pmv: f64) -> bool {
        pmv >= self.lo && pmv <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Candidate surrogate forms: 1 `f1 + f2 T + f3 v`, 2 `f1 + f2 T + f3 v²`,
/// 3 `f1 + f2 T + f3 v² + f4 v`.
pub const FORMS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormFit {
    pub form: usize,
    /// Coefficients in the order of the form definition (`f1`, `f2`, ...).
    pub coefficients: Vec<f64>,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fits: Vec<FormFit>,
    /// Index into `fits` of the minimal-RMSE form.
    pub selected: usize,
}

impl FitReport {
    pub fn selected_fit(&self) -> &FormFit {
        &self.fits[self.selected]
    }

    /// The selected fit as a surrogate model, when it is form 3.
    pub fn model(&self, season: Option<Season>) -> Option<SimplifiedPmvModel> {
        let f = self.selected_fit();
        (f.form == 3).then(|| SimplifiedPmvModel {
            c_0: f.coefficients[0],
            c_t: f.coefficients[1],
            c_v2: f.coefficients[2],
            c_v1: f.coefficients[3],
            season,
        })
    }
}

fn design_row(form: usize, t: f64, v: f64) -> Vec<f64> {
    match form {
        1 => vec![1.0, t, v],
        2 => vec![1.0, t, v * v],
        3 => vec![1.0, t, v * v, v],
        _ => unreachable!("unknown form {form}"),
    }
}

/// The fitting grid: T from 18 to 30 °C in 0.5 steps, v_a from 0 to 1 m/s in
/// 0.05 steps.
pub fn default_grid() -> Vec<(f64, f64)> {
    let mut g = Vec::new();
    for i in 0..=24 {
        for j in 0..=20 {
            g.push((18.0 + 0.5 * i as f64, 0.05 * j as f64));
        }
    }
    g
}

pub fn fit_simplified<F>(grid: &[(f64, f64)], oracle: F, forms: &[usize]) -> Result<FitReport>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    if forms.is_empty() || forms.iter().any(|f| !FORMS.contains(f)) {
        return Err(Error::invalid("forms must be a nonempty subset of {1, 2, 3}"));
    }
    let y: Vec<f64> = grid.iter().map(|&(t, v)| oracle(t, v)).collect::<Result<_>>()?;
    let y = DVector::from_vec(y);
    let mut fits = Vec::new();
    for &form in forms {
        let cols = design_row(form, 0.0, 0.0).len();
        if grid.len() < cols {
            return Err(Error::RankDeficient);
        }
        let a = DMatrix::from_fn(grid.len(), cols, |i, j| design_row(form, grid[i].0, grid[i].1)[j]);
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > smax * 1e-10) {
            return Err(Error::RankDeficient);
        }
        let coef = svd.solve(&y, 0.0).map_err(|_| Error::RankDeficient)?;
        let resid = &a * &coef - &y;
        let rmse = (resid.norm_squared() / grid.len() as f64).sqrt();
        fits.push(FormFit {
            form,
            coefficients: coef.iter().copied().collect(),
            rmse,
        });
    }
    let selected = fits
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.rmse.total_cmp(&b.1.rmse))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(FitReport { fits, selected })
}

/// RMSE of `model` against `oracle` on `grid`.
pub fn model_rmse<F>(model: &SimplifiedPmvModel, grid: &[(f64, f64)], oracle: F) -> Result<f64>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    let mut s = 0.0;
    for &(t, v) in grid {
        let e = model.eval(t, v) - oracle(t, v)?;
        s += e * e;
    }
    Ok((s / grid.len() as f64).sqrt())
}
