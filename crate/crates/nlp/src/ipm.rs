use std::fmt::Write as _;
use std::sync::Arc;

use crate::ldl::{cached_symbolic, Factor, Symbolic};
use crate::{NlpError, NlpProblem, Solution, SolverSettings, Status};

const KAPPA_SIGMA: f64 = 1e10;
const KAPPA_EPS: f64 = 10.0;
const ARMIJO: f64 = 1e-4;
const DELTA_C: f64 = 1e-9;
const MAX_SOC: usize = 4;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const MAX_BACKTRACKS: usize = 40;
const NONMONOTONE_MEMORY: usize = 4;
const SADDLE_ESCAPES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    Equality,
    Inequality,
    Free,
}

/// Problem data that does not change between starts.
pub(crate) struct Prepared {
    n: usize,
    m: usize,
    xl: Vec<f64>,
    xu: Vec<f64>,
    gl: Vec<f64>,
    gu: Vec<f64>,
    fixed: Vec<bool>,
    rows: Vec<Row>,
    jac: Vec<(usize, usize)>,
    hess: Vec<(usize, usize)>,
    sym: Arc<Symbolic>,
    trivially_infeasible: bool,
}

impl Prepared {
    pub(crate) fn new<P: NlpProblem + ?Sized>(p: &P) -> Result<Prepared, NlpError> {
        let n = p.num_variables();
        let m = p.num_constraints();
        let (mut xl, mut xu) = (vec![0.0; n], vec![0.0; n]);
        p.variable_bounds(&mut xl, &mut xu);
        let (mut gl, mut gu) = (vec![0.0; m], vec![0.0; m]);
        p.constraint_bounds(&mut gl, &mut gu);
        let trivially_infeasible = xl.iter().zip(&xu).any(|(l, u)| l > u || l.is_nan() || u.is_nan())
            || gl.iter().zip(&gu).any(|(l, u)| l > u || l.is_nan() || u.is_nan());
        let fixed: Vec<bool> = xl.iter().zip(&xu).map(|(l, u)| l == u).collect();
        let rows = gl
            .iter()
            .zip(&gu)
            .map(|(&l, &u)| {
                if l == u {
                    Row::Equality
                } else if l.is_finite() || u.is_finite() {
                    Row::Inequality
                } else {
                    Row::Free
                }
            })
            .collect();
        let jac = p.jacobian_structure();
        let hess = p.hessian_structure();
        for &(r, c) in &jac {
            if r >= m || c >= n {
                return Err(NlpError::Dimension(format!("jacobian entry ({r}, {c}) outside {m}x{n}")));
            }
        }
        for &(r, c) in &hess {
            if r >= n || c > r {
                return Err(NlpError::Dimension(format!("hessian entry ({r}, {c}) not in lower triangle of {n}")));
            }
        }
        let mut entries: Vec<(usize, usize)> = hess.clone();
        entries.extend(jac.iter().map(|&(r, c)| (n + r, c)));
        let deferred: Vec<bool> = (0..n + m).map(|i| i >= n).collect();
        let sym = cached_symbolic(n + m, &entries, &deferred);
        Ok(Prepared {
            n,
            m,
            xl,
            xu,
            gl,
            gu,
            fixed,
            rows,
            jac,
            hess,
            sym,
            trivially_infeasible,
        })
    }
}

/// Runs the interior-point method from `x0`.
pub fn solve_single<P: NlpProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    settings: &SolverSettings,
) -> Result<Solution, NlpError> {
    let prep = Prepared::new(problem)?;
    let (sol, log) = run(problem, &prep, x0, settings)?;
    if let Some(path) = &settings.log_path {
        std::fs::write(path, log)?;
    }
    Ok(sol)
}

pub(crate) fn run<P: NlpProblem + ?Sized>(
    p: &P,
    prep: &Prepared,
    x0: &[f64],
    settings: &SolverSettings,
) -> Result<(Solution, String), NlpError> {
    if x0.len() != prep.n {
        return Err(NlpError::Dimension(format!("start has {} entries, expected {}", x0.len(), prep.n)));
    }
    let mut log = String::from("iteration,objective,violation,step_norm,barrier,alpha\n");
    if prep.trivially_infeasible {
        let x: Vec<f64> = x0.to_vec();
        return Ok((
            Solution {
                objective: f64::NAN,
                violation: f64::INFINITY,
                x,
                status: Status::Infeasible,
                iterations: 0,
                multipliers: vec![0.0; prep.m],
            },
            log,
        ));
    }
    let mut start = x0.to_vec();
    let mut best: Option<Solution> = None;
    let mut iterations = 0;
    for escape in 0..=SADDLE_ESCAPES {
        let mut s = Ipm::new(p, prep, &start, settings)?;
        let status = s.iterate(&mut log)?;
        let saddle = status.is_feasible() && escape < SADDLE_ESCAPES && s.negative_curvature();
        let sol = s.finish(status);
        iterations += sol.iterations;
        let improved = best.as_ref().map_or(true, |b| sol.better_than(b));
        if !saddle || !improved {
            if improved {
                best = Some(sol);
            }
            break;
        }
        // Stationary but not a local minimizer: restart from a perturbed point.
        start = perturb(&sol.x, prep, escape as u64);
        best = Some(sol);
    }
    let mut sol = best.expect("at least one pass");
    sol.iterations = iterations;
    Ok((sol, log))
}

fn perturb(x: &[f64], prep: &Prepared, salt: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5add_1e00 ^ salt);
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let (l, u) = (prep.xl[i], prep.xu[i]);
            let width = if l.is_finite() && u.is_finite() { u - l } else { v.abs().max(1.0) };
            let t = v + 0.05 * width * rng.gen_range(-1.0..=1.0);
            if l.is_finite() && u.is_finite() {
                t.clamp(l, u)
            } else {
                t
            }
        })
        .collect()
}

fn push_into(v: f64, l: f64, u: f64) -> f64 {
    let k = 1e-2;
    let pl = if l.is_finite() { k * l.abs().max(1.0) } else { 0.0 };
    let pu = if u.is_finite() { k * u.abs().max(1.0) } else { 0.0 };
    let (pl, pu) = if l.is_finite() && u.is_finite() {
        (pl.min(k * (u - l)), pu.min(k * (u - l)))
    } else {
        (pl, pu)
    };
    let mut v = if v.is_finite() { v } else { 0.0 };
    if l.is_finite() {
        v = v.max(l + pl);
    }
    if u.is_finite() {
        v = v.min(u - pu);
    }
    if l.is_finite() && u.is_finite() && !(v > l && v < u) {
        v = 0.5 * (l + u);
    }
    v
}

fn inf_norm(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |a, b| a.max(b.abs()))
}

struct Ipm<'a, P: NlpProblem + ?Sized> {
    p: &'a P,
    prep: &'a Prepared,
    settings: &'a SolverSettings,
    n: usize,
    m: usize,
    obj_scale: f64,
    row_scale: Vec<f64>,
    /// Scaled slack bounds.
    sl: Vec<f64>,
    su: Vec<f64>,
    x: Vec<f64>,
    s: Vec<f64>,
    lam: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    vl: Vec<f64>,
    vu: Vec<f64>,
    mu: f64,
    nu: f64,
    f: f64,
    grad: Vec<f64>,
    g: Vec<f64>,
    jv: Vec<f64>,
    hv: Vec<f64>,
    factor: Factor,
    last_delta_w: f64,
    iterations: usize,
    scratch: Vec<f64>,
}

impl<'a, P: NlpProblem + ?Sized> Ipm<'a, P> {
    fn new(p: &'a P, prep: &'a Prepared, x0: &[f64], settings: &'a SolverSettings) -> Result<Self, NlpError> {
        let (n, m) = (prep.n, prep.m);
        let x: Vec<f64> = (0..n)
            .map(|i| {
                if prep.fixed[i] {
                    prep.xl[i]
                } else {
                    push_into(x0[i], prep.xl[i], prep.xu[i])
                }
            })
            .collect();
        let mut grad = vec![0.0; n];
        let mut g = vec![0.0; m];
        let mut jv = vec![0.0; prep.jac.len()];
        let f = p.objective(&x);
        p.gradient(&x, &mut grad);
        p.constraints(&x, &mut g);
        p.jacobian_values(&x, &mut jv);
        if !f.is_finite() {
            return Err(NlpError::NonFinite("objective"));
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite("gradient"));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite("constraint value"));
        }
        if jv.iter().any(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite("jacobian value"));
        }
        let gmax = inf_norm((0..n).filter(|&i| !prep.fixed[i]).map(|i| grad[i]));
        let obj_scale = if gmax > 100.0 { 100.0 / gmax } else { 1.0 };
        let mut row_max = vec![0.0f64; m];
        for (k, &(r, c)) in prep.jac.iter().enumerate() {
            if !prep.fixed[c] {
                row_max[r] = row_max[r].max(jv[k].abs());
            }
        }
        let row_scale: Vec<f64> = row_max.iter().map(|&v| if v > 100.0 { 100.0 / v } else { 1.0 }).collect();
        let sl: Vec<f64> = (0..m).map(|r| prep.gl[r] * row_scale[r]).collect();
        let su: Vec<f64> = (0..m).map(|r| prep.gu[r] * row_scale[r]).collect();
        let s: Vec<f64> = (0..m)
            .map(|r| match prep.rows[r] {
                Row::Inequality => push_into(g[r] * row_scale[r], sl[r], su[r]),
                _ => 0.0,
            })
            .collect();
        let zl = (0..n).map(|i| if !prep.fixed[i] && prep.xl[i].is_finite() { 1.0 } else { 0.0 }).collect();
        let zu = (0..n).map(|i| if !prep.fixed[i] && prep.xu[i].is_finite() { 1.0 } else { 0.0 }).collect();
        let vl = (0..m)
            .map(|r| if prep.rows[r] == Row::Inequality && sl[r].is_finite() { 1.0 } else { 0.0 })
            .collect();
        let vu = (0..m)
            .map(|r| if prep.rows[r] == Row::Inequality && su[r].is_finite() { 1.0 } else { 0.0 })
            .collect();
        let hv = vec![0.0; prep.hess.len()];
        Ok(Ipm {
            p,
            prep,
            settings,
            n,
            m,
            obj_scale,
            row_scale,
            sl,
            su,
            x,
            s,
            lam: vec![0.0; m],
            zl,
            zu,
            vl,
            vu,
            mu: settings.initial_barrier,
            nu: 1.0,
            f,
            grad,
            g,
            jv,
            hv,
            factor: Factor::new(Arc::clone(&prep.sym)),
            last_delta_w: 0.0,
            iterations: 0,
            scratch: Vec::new(),
        })
    }

    fn active_x(&self, i: usize) -> bool {
        !self.prep.fixed[i]
    }

    fn has_xl(&self, i: usize) -> bool {
        self.active_x(i) && self.prep.xl[i].is_finite()
    }

    fn has_xu(&self, i: usize) -> bool {
        self.active_x(i) && self.prep.xu[i].is_finite()
    }

    fn ineq(&self, r: usize) -> bool {
        self.prep.rows[r] == Row::Inequality
    }

    /// Scaled constraint residual `c(x, s)`.
    fn residual(&self, g: &[f64], s: &[f64], out: &mut [f64]) {
        for r in 0..self.m {
            out[r] = match self.prep.rows[r] {
                Row::Equality => self.row_scale[r] * (g[r] - self.prep.gl[r]),
                Row::Inequality => self.row_scale[r] * g[r] - s[r],
                Row::Free => 0.0,
            };
        }
    }

    fn violation(&self, g: &[f64]) -> f64 {
        let mut v = 0.0f64;
        for r in 0..self.m {
            v = v.max(self.prep.gl[r] - g[r]).max(g[r] - self.prep.gu[r]);
        }
        v
    }

    /// `(∇f·s_f + Jᵀλ − z_L + z_U)` restricted to active variables.
    fn dual_residual(&self) -> (Vec<f64>, Vec<f64>) {
        let mut dx: Vec<f64> = (0..self.n)
            .map(|i| if self.active_x(i) { self.obj_scale * self.grad[i] - self.zl[i] + self.zu[i] } else { 0.0 })
            .collect();
        for (k, &(r, c)) in self.prep.jac.iter().enumerate() {
            if self.active_x(c) && self.prep.rows[r] != Row::Free {
                dx[c] += self.row_scale[r] * self.jv[k] * self.lam[r];
            }
        }
        let ds = (0..self.m)
            .map(|r| if self.ineq(r) { -self.lam[r] - self.vl[r] + self.vu[r] } else { 0.0 })
            .collect();
        (dx, ds)
    }

    fn kkt_error(&self, mu: f64) -> (f64, f64, f64) {
        let (dx, ds) = self.dual_residual();
        let mut c = vec![0.0; self.m];
        self.residual(&self.g, &self.s, &mut c);
        let mut compl = 0.0f64;
        let mut zsum = 0.0;
        let mut zcount = 0usize;
        for i in 0..self.n {
            if self.has_xl(i) {
                compl = compl.max(((self.x[i] - self.prep.xl[i]) * self.zl[i] - mu).abs());
                zsum += self.zl[i];
                zcount += 1;
            }
            if self.has_xu(i) {
                compl = compl.max(((self.prep.xu[i] - self.x[i]) * self.zu[i] - mu).abs());
                zsum += self.zu[i];
                zcount += 1;
            }
        }
        for r in 0..self.m {
            if self.ineq(r) {
                if self.sl[r].is_finite() {
                    compl = compl.max(((self.s[r] - self.sl[r]) * self.vl[r] - mu).abs());
                    zsum += self.vl[r];
                    zcount += 1;
                }
                if self.su[r].is_finite() {
                    compl = compl.max(((self.su[r] - self.s[r]) * self.vu[r] - mu).abs());
                    zsum += self.vu[r];
                    zcount += 1;
                }
            }
        }
        let lsum: f64 = self.lam.iter().map(|v| v.abs()).sum();
        let smax = 100.0;
        let sd = ((lsum + zsum) / ((self.m + zcount).max(1) as f64)).max(smax) / smax;
        let sc = (zsum / (zcount.max(1) as f64)).max(smax) / smax;
        let dual = inf_norm(dx.into_iter().chain(ds)) / sd;
        let primal = inf_norm(c.into_iter());
        (dual, primal, compl / sc)
    }

    fn barrier_terms(&self, x: &[f64], s: &[f64]) -> f64 {
        let mut b = 0.0;
        for i in 0..self.n {
            if self.has_xl(i) {
                b -= (x[i] - self.prep.xl[i]).ln();
            }
            if self.has_xu(i) {
                b -= (self.prep.xu[i] - x[i]).ln();
            }
        }
        for r in 0..self.m {
            if self.ineq(r) {
                if self.sl[r].is_finite() {
                    b -= (s[r] - self.sl[r]).ln();
                }
                if self.su[r].is_finite() {
                    b -= (self.su[r] - s[r]).ln();
                }
            }
        }
        self.mu * b
    }

    /// Largest step in `[0, 1]` keeping `x` and `s` a fraction `tau` inside their bounds.
    fn max_step(&self, dx: &[f64], ds: &[f64], tau: f64) -> f64 {
        let mut a = 1.0f64;
        for i in 0..self.n {
            if self.has_xl(i) && dx[i] < 0.0 {
                a = a.min(-tau * (self.x[i] - self.prep.xl[i]) / dx[i]);
            }
            if self.has_xu(i) && dx[i] > 0.0 {
                a = a.min(tau * (self.prep.xu[i] - self.x[i]) / dx[i]);
            }
        }
        for r in 0..self.m {
            if self.ineq(r) {
                if self.sl[r].is_finite() && ds[r] < 0.0 {
                    a = a.min(-tau * (self.s[r] - self.sl[r]) / ds[r]);
                }
                if self.su[r].is_finite() && ds[r] > 0.0 {
                    a = a.min(tau * (self.su[r] - self.s[r]) / ds[r]);
                }
            }
        }
        a
    }

    fn evaluate_derivatives(&mut self) -> Result<(), NlpError> {
        self.p.gradient(&self.x, &mut self.grad);
        self.p.jacobian_values(&self.x, &mut self.jv);
        if self.grad.iter().any(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite("gradient"));
        }
        if self.jv.iter().any(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite("jacobian value"));
        }
        Ok(())
    }

    fn sigma_x(&self, i: usize) -> f64 {
        let mut s = 0.0;
        if self.has_xl(i) {
            s += self.zl[i] / (self.x[i] - self.prep.xl[i]);
        }
        if self.has_xu(i) {
            s += self.zu[i] / (self.prep.xu[i] - self.x[i]);
        }
        s
    }

    fn sigma_s(&self, r: usize) -> f64 {
        let mut s = 0.0;
        if self.sl[r].is_finite() {
            s += self.vl[r] / (self.s[r] - self.sl[r]);
        }
        if self.su[r].is_finite() {
            s += self.vu[r] / (self.su[r] - self.s[r]);
        }
        s
    }

    /// Writes the reduced KKT matrix for regularization `delta_w` into the
    /// factor storage and returns the constraint-block diagonal used.
    fn assemble(&mut self, delta_w: f64, delta_c: f64) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let sym = Arc::clone(&self.prep.sym);
        let mut ax = std::mem::take(&mut self.factor.ax);
        ax.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let v = if self.prep.fixed[i] { 1.0 } else { self.sigma_x(i) + delta_w };
            ax[sym.diag_slot(i)] += v;
        }
        let mut cdiag = vec![0.0; m];
        for r in 0..m {
            cdiag[r] = match self.prep.rows[r] {
                Row::Equality => -delta_c,
                Row::Inequality => -(1.0 / (self.sigma_s(r) + delta_w) + delta_c),
                Row::Free => -1.0,
            };
            ax[sym.diag_slot(n + r)] += cdiag[r];
        }
        for (k, &(r, c)) in self.prep.hess.iter().enumerate() {
            if !self.prep.fixed[r] && !self.prep.fixed[c] {
                ax[sym.entry_slot(k)] += self.hv[k];
            }
        }
        let off = self.prep.hess.len();
        for (k, &(r, c)) in self.prep.jac.iter().enumerate() {
            if !self.prep.fixed[c] && self.prep.rows[r] != Row::Free {
                ax[sym.entry_slot(off + k)] += self.row_scale[r] * self.jv[k];
            }
        }
        self.factor.ax = ax;
        cdiag
    }

    fn kkt_multiply(&self, delta_w: f64, cdiag: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let d = if self.prep.fixed[i] { 1.0 } else { self.sigma_x(i) + delta_w };
            out[i] = d * v[i];
        }
        for r in 0..self.m {
            out[n + r] = cdiag[r] * v[n + r];
        }
        for (k, &(r, c)) in self.prep.hess.iter().enumerate() {
            if self.prep.fixed[r] || self.prep.fixed[c] {
                continue;
            }
            let h = self.hv[k];
            out[r] += h * v[c];
            if r != c {
                out[c] += h * v[r];
            }
        }
        for (k, &(r, c)) in self.prep.jac.iter().enumerate() {
            if self.prep.fixed[c] || self.prep.rows[r] == Row::Free {
                continue;
            }
            let j = self.row_scale[r] * self.jv[k];
            out[n + r] += j * v[c];
            out[c] += j * v[n + r];
        }
    }

    /// Factorizes with the smallest regularization giving the expected
    /// inertia. Returns `(delta_w, constraint diagonal)` or `None` if no
    /// acceptable regularization was found.
    fn factorize(&mut self) -> Option<(f64, Vec<f64>)> {
        let expect_pos = self.n;
        let mut delta_c = DELTA_C;
        let mut delta_w = 0.0;
        let mut attempts = 0;
        loop {
            let cdiag = self.assemble(delta_w, delta_c);
            let inertia = self.factor.factor(1e-30);
            attempts += 1;
            if inertia.zero == 0 && inertia.positive == expect_pos {
                if delta_w > 0.0 {
                    self.last_delta_w = delta_w;
                }
                return Some((delta_w, cdiag));
            }
            if inertia.zero > 0 && delta_c < 1e-6 {
                delta_c = 1e-8 * self.mu.powf(0.25).max(1e-2);
            }
            delta_w = if delta_w == 0.0 {
                if self.last_delta_w == 0.0 {
                    1e-4
                } else {
                    (self.last_delta_w / 3.0).max(1e-20)
                }
            } else if self.last_delta_w == 0.0 {
                delta_w * 100.0
            } else {
                delta_w * 8.0
            };
            if delta_w > 1e40 || attempts > 60 {
                return None;
            }
        }
    }

    fn solve_kkt(&mut self, delta_w: f64, cdiag: &[f64], rhs: &[f64]) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        let mut scratch = std::mem::take(&mut self.scratch);
        self.factor.solve(&mut sol, &mut scratch);
        let scale = inf_norm(rhs.iter().copied()).max(1e-300);
        let mut res = vec![0.0; rhs.len()];
        for _ in 0..3 {
            self.kkt_multiply(delta_w, cdiag, &sol, &mut res);
            for (r, b) in res.iter_mut().zip(rhs) {
                *r = b - *r;
            }
            if inf_norm(res.iter().copied()) <= 1e-12 * scale {
                break;
            }
            self.factor.solve(&mut res, &mut scratch);
            for (x, d) in sol.iter_mut().zip(&res) {
                *x += d;
            }
        }
        self.scratch = scratch;
        sol
    }

    fn iterate(&mut self, log: &mut String) -> Result<Status, NlpError> {
        let (n, m) = (self.n, self.m);
        let mu_min = self.settings.tolerance / 10.0;
        let mut acceptable = 0usize;
        let mut tiny_steps = 0usize;
        let mut history: Vec<(f64, f64)> = Vec::new();
        let mut filter: Vec<(f64, f64)> = Vec::new();
        let mut filter_bounds: Option<(f64, f64)> = None;
        let mut c = vec![0.0; m];
        loop {
            let (dual, primal, compl) = self.kkt_error(0.0);
            let viol = self.violation(&self.g);
            let e0 = dual.max(primal).max(compl);
            if e0 <= self.settings.tolerance && viol <= self.settings.feasibility_tolerance {
                return Ok(Status::OptimalLocal);
            }
            if e0 <= self.settings.acceptable_tolerance && viol <= self.settings.feasibility_tolerance {
                acceptable += 1;
                if acceptable >= self.settings.acceptable_iterations {
                    return Ok(Status::FeasibleSuboptimal);
                }
            } else {
                acceptable = 0;
            }
            if self.iterations >= self.settings.max_iterations {
                return Ok(if viol <= self.settings.feasibility_tolerance {
                    Status::IterationLimit
                } else {
                    Status::Infeasible
                });
            }
            if tiny_steps >= 15 || self.nu > 1e12 {
                return Ok(if viol <= self.settings.feasibility_tolerance {
                    Status::FeasibleSuboptimal
                } else {
                    Status::Infeasible
                });
            }

            loop {
                let (d, p, cm) = self.kkt_error(self.mu);
                if self.mu <= mu_min || d.max(p).max(cm) > KAPPA_EPS * self.mu {
                    break;
                }
                self.mu = mu_min.max((0.2 * self.mu).min(self.mu.powf(1.5)));
                history.clear();
                filter.clear();
            }

            let lam_orig: Vec<f64> = (0..m)
                .map(|r| if self.prep.rows[r] == Row::Free { 0.0 } else { self.row_scale[r] * self.lam[r] })
                .collect();
            let mut hv = std::mem::take(&mut self.hv);
            self.p.hessian_values(&self.x, self.obj_scale, &lam_orig, &mut hv);
            if hv.iter().any(|v| !v.is_finite()) {
                return Err(NlpError::NonFinite("hessian value"));
            }
            self.hv = hv;

            let Some((delta_w, cdiag)) = self.factorize() else {
                tiny_steps = usize::MAX / 2;
                continue;
            };

            // Right-hand side of the reduced system.
            let mu = self.mu;
            let mut rhs = vec![0.0; n + m];
            for i in 0..n {
                if self.prep.fixed[i] {
                    continue;
                }
                let mut gphi = self.obj_scale * self.grad[i];
                if self.has_xl(i) {
                    gphi -= mu / (self.x[i] - self.prep.xl[i]);
                }
                if self.has_xu(i) {
                    gphi += mu / (self.prep.xu[i] - self.x[i]);
                }
                rhs[i] = -gphi;
            }
            for (k, &(r, col)) in self.prep.jac.iter().enumerate() {
                if !self.prep.fixed[col] && self.prep.rows[r] != Row::Free {
                    rhs[col] -= self.row_scale[r] * self.jv[k] * self.lam[r];
                }
            }
            self.residual(&self.g, &self.s, &mut c);
            let mut rs = vec![0.0; m];
            let mut ds_den = vec![0.0; m];
            for r in 0..m {
                match self.prep.rows[r] {
                    Row::Equality => rhs[n + r] = -c[r],
                    Row::Inequality => {
                        let mut v = self.lam[r];
                        if self.sl[r].is_finite() {
                            v += mu / (self.s[r] - self.sl[r]);
                        }
                        if self.su[r].is_finite() {
                            v -= mu / (self.su[r] - self.s[r]);
                        }
                        rs[r] = v;
                        ds_den[r] = self.sigma_s(r) + delta_w;
                        rhs[n + r] = -c[r] + v / ds_den[r];
                    }
                    Row::Free => rhs[n + r] = 0.0,
                }
            }
            let sol = self.solve_kkt(delta_w, &cdiag, &rhs);
            let dx = &sol[..n];
            let dlam = &sol[n..];
            let ds: Vec<f64> = (0..m)
                .map(|r| if self.ineq(r) { (rs[r] + dlam[r]) / ds_den[r] } else { 0.0 })
                .collect();

            // Bound multiplier steps.
            let mut dzl = vec![0.0; n];
            let mut dzu = vec![0.0; n];
            for i in 0..n {
                if self.has_xl(i) {
                    let gap = self.x[i] - self.prep.xl[i];
                    dzl[i] = (mu - self.zl[i] * gap - self.zl[i] * dx[i]) / gap;
                }
                if self.has_xu(i) {
                    let gap = self.prep.xu[i] - self.x[i];
                    dzu[i] = (mu - self.zu[i] * gap + self.zu[i] * dx[i]) / gap;
                }
            }
            let mut dvl = vec![0.0; m];
            let mut dvu = vec![0.0; m];
            for r in 0..m {
                if !self.ineq(r) {
                    continue;
                }
                if self.sl[r].is_finite() {
                    let gap = self.s[r] - self.sl[r];
                    dvl[r] = (mu - self.vl[r] * gap - self.vl[r] * ds[r]) / gap;
                }
                if self.su[r].is_finite() {
                    let gap = self.su[r] - self.s[r];
                    dvu[r] = (mu - self.vu[r] * gap + self.vu[r] * ds[r]) / gap;
                }
            }

            // Fraction to the boundary.
            let tau = (1.0 - mu).max(0.99);
            let mut alpha_p = 1.0f64;
            let mut alpha_d = 1.0f64;
            for i in 0..n {
                if self.has_xl(i) && dx[i] < 0.0 {
                    alpha_p = alpha_p.min(-tau * (self.x[i] - self.prep.xl[i]) / dx[i]);
                }
                if self.has_xu(i) && dx[i] > 0.0 {
                    alpha_p = alpha_p.min(tau * (self.prep.xu[i] - self.x[i]) / dx[i]);
                }
                if self.has_xl(i) && dzl[i] < 0.0 {
                    alpha_d = alpha_d.min(-tau * self.zl[i] / dzl[i]);
                }
                if self.has_xu(i) && dzu[i] < 0.0 {
                    alpha_d = alpha_d.min(-tau * self.zu[i] / dzu[i]);
                }
            }
            for r in 0..m {
                if !self.ineq(r) {
                    continue;
                }
                if self.sl[r].is_finite() {
                    if ds[r] < 0.0 {
                        alpha_p = alpha_p.min(-tau * (self.s[r] - self.sl[r]) / ds[r]);
                    }
                    if dvl[r] < 0.0 {
                        alpha_d = alpha_d.min(-tau * self.vl[r] / dvl[r]);
                    }
                }
                if self.su[r].is_finite() {
                    if ds[r] > 0.0 {
                        alpha_p = alpha_p.min(tau * (self.su[r] - self.s[r]) / ds[r]);
                    }
                    if dvu[r] < 0.0 {
                        alpha_d = alpha_d.min(-tau * self.vu[r] / dvu[r]);
                    }
                }
            }

            // Merit function and penalty update.
            let c_norm: f64 = c.iter().map(|v| v.abs()).sum();
            let mut slope = 0.0;
            for i in 0..n {
                if self.prep.fixed[i] {
                    continue;
                }
                let mut gphi = self.obj_scale * self.grad[i];
                if self.has_xl(i) {
                    gphi -= mu / (self.x[i] - self.prep.xl[i]);
                }
                if self.has_xu(i) {
                    gphi += mu / (self.prep.xu[i] - self.x[i]);
                }
                slope += gphi * dx[i];
            }
            for r in 0..m {
                if self.ineq(r) {
                    let mut gphi = 0.0;
                    if self.sl[r].is_finite() {
                        gphi -= mu / (self.s[r] - self.sl[r]);
                    }
                    if self.su[r].is_finite() {
                        gphi += mu / (self.su[r] - self.s[r]);
                    }
                    slope += gphi * ds[r];
                }
            }
            let lam_trial = inf_norm((0..m).map(|r| self.lam[r] + dlam[r]));
            if self.nu < 1.1 * lam_trial {
                self.nu = (2.0 * lam_trial).max(self.nu);
                history.clear();
            }
            if slope - self.nu * c_norm >= 0.0 && c_norm > 1e-14 {
                self.nu = self.nu.max(2.0 * slope / c_norm + 1.0);
                history.clear();
            }
            let dmerit = slope - self.nu * c_norm;
            let phi0 = self.obj_scale * self.f + self.barrier_terms(&self.x, &self.s);
            history.push((phi0, c_norm));
            if history.len() > NONMONOTONE_MEMORY {
                history.remove(0);
            }
            let reference = history
                .iter()
                .map(|&(b, cn)| b + self.nu * cn)
                .fold(f64::NEG_INFINITY, f64::max);

            let theta0 = c_norm;
            let (theta_max, theta_min) = *filter_bounds.get_or_insert((1e4 * theta0.max(1.0), 1e-4 * theta0.max(1.0)));
            let switching = |a: f64| slope < 0.0 && a * (-slope).powf(S_PHI) > theta0.powf(S_THETA);
            // Some(true) for a step accepted on the barrier objective alone,
            // Some(false) for one accepted by the filter.
            let filter_accepts = |a: f64, th: f64, ph: f64| -> Option<bool> {
                if !ph.is_finite() || th > theta_max || filter.iter().any(|&(ft, fp)| th >= ft && ph >= fp) {
                    return None;
                }
                if theta0 <= theta_min && switching(a) {
                    (ph <= phi0 + ARMIJO * a * slope).then_some(true)
                } else {
                    (th <= (1.0 - GAMMA_THETA) * theta0 || ph <= phi0 - GAMMA_PHI * theta0).then_some(false)
                }
            };
            let alpha_min = if slope < 0.0 {
                GAMMA_ALPHA
                    * GAMMA_THETA
                        .min(GAMMA_PHI * theta0 / -slope)
                        .min(theta0.powf(S_THETA) / (-slope).powf(S_PHI))
            } else {
                GAMMA_ALPHA * GAMMA_THETA
            };

            let mut alpha = alpha_p;
            let mut xt = vec![0.0; n];
            let mut st = self.s.clone();
            let mut gt = vec![0.0; m];
            let mut ct = vec![0.0; m];
            let mut accepted = false;
            let mut objective_step = false;
            let mut ft = f64::NAN;
            let mut soc_step: Option<(f64, Vec<f64>)> = None;
            for bt in 0..MAX_BACKTRACKS {
                if alpha < alpha_min {
                    break;
                }
                for i in 0..n {
                    xt[i] = self.x[i] + alpha * dx[i];
                }
                for r in 0..m {
                    st[r] = self.s[r] + alpha * ds[r];
                }
                ft = self.p.objective(&xt);
                self.p.constraints(&xt, &mut gt);
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) {
                    self.residual(&gt, &st, &mut ct);
                    let ct_norm: f64 = ct.iter().map(|v| v.abs()).sum();
                    let phi = self.obj_scale * ft + self.barrier_terms(&xt, &st);
                    if let Some(kind) = filter_accepts(alpha, ct_norm, phi) {
                        accepted = true;
                        objective_step = kind;
                        break;
                    }
                    // Second-order corrections against curvature of the
                    // constraints rejecting the first trial step.
                    if bt == 0 && ct_norm >= theta0 {
                        let mut c_soc: Vec<f64> = (0..m).map(|r| alpha * c[r] + ct[r]).collect();
                        let mut prev_norm = ct_norm;
                        for _ in 0..MAX_SOC {
                            let mut rhs_soc = rhs.clone();
                            for r in 0..m {
                                match self.prep.rows[r] {
                                    Row::Equality => rhs_soc[n + r] = -c_soc[r],
                                    Row::Inequality => rhs_soc[n + r] = -c_soc[r] + rs[r] / ds_den[r],
                                    Row::Free => {}
                                }
                            }
                            let sol_soc = self.solve_kkt(delta_w, &cdiag, &rhs_soc);
                            let dx_soc = &sol_soc[..n];
                            let ds_soc: Vec<f64> = (0..m)
                                .map(|r| if self.ineq(r) { (rs[r] + sol_soc[n + r]) / ds_den[r] } else { 0.0 })
                                .collect();
                            let a_soc = self.max_step(dx_soc, &ds_soc, tau);
                            let xs: Vec<f64> = (0..n).map(|i| self.x[i] + a_soc * dx_soc[i]).collect();
                            let ss: Vec<f64> = (0..m).map(|r| self.s[r] + a_soc * ds_soc[r]).collect();
                            let fs = self.p.objective(&xs);
                            let mut gs = vec![0.0; m];
                            self.p.constraints(&xs, &mut gs);
                            if !fs.is_finite() || gs.iter().any(|v| !v.is_finite()) {
                                break;
                            }
                            let mut cs = vec![0.0; m];
                            self.residual(&gs, &ss, &mut cs);
                            let cs_norm: f64 = cs.iter().map(|v| v.abs()).sum();
                            let phi = self.obj_scale * fs + self.barrier_terms(&xs, &ss);
                            if let Some(kind) = filter_accepts(alpha, cs_norm, phi) {
                                xt = xs;
                                st = ss;
                                gt = gs;
                                ft = fs;
                                soc_step = Some((a_soc, sol_soc[n..].to_vec()));
                                accepted = true;
                                objective_step = kind;
                                break;
                            }
                            if a_soc < 1.0 || cs_norm > 0.99 * prev_norm {
                                break;
                            }
                            prev_norm = cs_norm;
                            for r in 0..m {
                                c_soc[r] = a_soc * c_soc[r] + cs[r];
                            }
                        }
                        if accepted {
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if accepted {
                if !objective_step {
                    filter.push(((1.0 - GAMMA_THETA) * theta0, phi0 - GAMMA_PHI * theta0));
                }
            } else {
                // The filter rejected every step down to the minimum length.
                // Fall back to the exact penalty merit function.
                filter.push((theta0, phi0));
                alpha = alpha_p;
                for _ in 0..MAX_BACKTRACKS {
                    for i in 0..n {
                        xt[i] = self.x[i] + alpha * dx[i];
                    }
                    for r in 0..m {
                        st[r] = self.s[r] + alpha * ds[r];
                    }
                    ft = self.p.objective(&xt);
                    self.p.constraints(&xt, &mut gt);
                    if ft.is_finite() && gt.iter().all(|v| v.is_finite()) {
                        self.residual(&gt, &st, &mut ct);
                        let ct_norm: f64 = ct.iter().map(|v| v.abs()).sum();
                        let phi = self.obj_scale * ft + self.barrier_terms(&xt, &st) + self.nu * ct_norm;
                        if phi.is_finite() && (dmerit >= 0.0 || phi <= reference + ARMIJO * alpha * dmerit) {
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
            }
            if !accepted {
                // Take a tiny step anyway; repeated failures end the solve.
                alpha = alpha_p * 0.5f64.powi(MAX_BACKTRACKS as i32);
                for i in 0..n {
                    xt[i] = self.x[i] + alpha * dx[i];
                }
                for r in 0..m {
                    st[r] = self.s[r] + alpha * ds[r];
                }
                ft = self.p.objective(&xt);
                self.p.constraints(&xt, &mut gt);
                if !ft.is_finite() || gt.iter().any(|v| !v.is_finite()) {
                    return Err(NlpError::NonFinite("objective or constraint value"));
                }
            }
            if alpha * inf_norm(dx.iter().copied()) < 1e-12 * (1.0 + inf_norm(self.x.iter().copied())) {
                tiny_steps += 1;
            } else {
                tiny_steps = 0;
            }
            let step_norm = alpha * inf_norm(dx.iter().copied());

            self.x.copy_from_slice(&xt);
            self.s.copy_from_slice(&st);
            self.f = ft;
            self.g.copy_from_slice(&gt);
            for r in 0..m {
                if self.prep.rows[r] != Row::Free {
                    self.lam[r] += match &soc_step {
                        Some((a, dl)) => a * dl[r],
                        None => alpha * dlam[r],
                    };
                }
            }
            for i in 0..n {
                if self.has_xl(i) {
                    self.zl[i] += alpha_d * dzl[i];
                    let gap = self.x[i] - self.prep.xl[i];
                    self.zl[i] = self.zl[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
                }
                if self.has_xu(i) {
                    self.zu[i] += alpha_d * dzu[i];
                    let gap = self.prep.xu[i] - self.x[i];
                    self.zu[i] = self.zu[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
                }
            }
            for r in 0..m {
                if !self.ineq(r) {
                    continue;
                }
                if self.sl[r].is_finite() {
                    self.vl[r] += alpha_d * dvl[r];
                    let gap = self.s[r] - self.sl[r];
                    self.vl[r] = self.vl[r].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
                }
                if self.su[r].is_finite() {
                    self.vu[r] += alpha_d * dvu[r];
                    let gap = self.su[r] - self.s[r];
                    self.vu[r] = self.vu[r].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
                }
            }
            self.evaluate_derivatives()?;
            self.iterations += 1;
            let _ = writeln!(
                log,
                "{},{:.10e},{:.6e},{:.6e},{:.3e},{:.3e}",
                self.iterations,
                self.f,
                self.violation(&self.g),
                step_norm,
                self.mu,
                alpha
            );
        }
    }

    /// True when the reduced Hessian at the current point is not positive
    /// definite, i.e. the stationary point found is not a local minimizer.
    fn negative_curvature(&mut self) -> bool {
        let lam_orig: Vec<f64> = (0..self.m)
            .map(|r| if self.prep.rows[r] == Row::Free { 0.0 } else { self.row_scale[r] * self.lam[r] })
            .collect();
        let mut hv = std::mem::take(&mut self.hv);
        self.p.hessian_values(&self.x, self.obj_scale, &lam_orig, &mut hv);
        self.hv = hv;
        self.assemble(0.0, DELTA_C);
        let inertia = self.factor.factor(1e-30);
        inertia.zero == 0 && inertia.positive < self.n
    }

    fn finish(self, status: Status) -> Solution {
        let multipliers = (0..self.m)
            .map(|r| self.row_scale[r] * self.lam[r] / self.obj_scale)
            .collect();
        Solution {
            objective: self.f,
            violation: self.violation(&self.g),
            x: self.x,
            status,
            iterations: self.iterations,
            multipliers,
        }
    }
}
