//! Quadratically constrained models with an optional product penalty.
//!
//! Every constraint row is `c + Σ a_j x_j + Σ q_k x_{i_k} x_{j_k}`; the
//! objective has the same form plus `w · Π_g (1 + Σ_{j∈g} x_j)`. First and
//! second derivatives are exact.

use crate::problem::NlpProblem;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadExpr {
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    /// `(i, j, q)` contributes `q · x_i · x_j`; `i == j` gives a square.
    pub quadratic: Vec<(usize, usize, f64)>,
}

impl QuadExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn lin(mut self, i: usize, a: f64) -> Self {
        self.linear.push((i, a));
        self
    }

    pub fn quad(mut self, i: usize, j: usize, q: f64) -> Self {
        self.quadratic.push((i, j, q));
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for &(i, a) in &self.linear {
            v += a * x[i];
        }
        for &(i, j, q) in &self.quadratic {
            v += q * x[i] * x[j];
        }
        v
    }

    fn add_gradient(&self, x: &[f64], scale: f64, grad: &mut [f64]) {
        for &(i, a) in &self.linear {
            grad[i] += scale * a;
        }
        for &(i, j, q) in &self.quadratic {
            grad[i] += scale * q * x[j];
            grad[j] += scale * q * x[i];
        }
    }
}

/// `weight · Π_g (1 + Σ_{j∈g} x_j)`
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProductPenalty {
    pub weight: f64,
    pub groups: Vec<Vec<usize>>,
}

impl ProductPenalty {
    fn factors(&self, x: &[f64]) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| 1.0 + g.iter().map(|&j| x[j]).sum::<f64>())
            .collect()
    }

    fn product_except(f: &[f64], skip: &[usize]) -> f64 {
        f.iter()
            .enumerate()
            .filter(|(i, _)| !skip.contains(i))
            .map(|(_, v)| v)
            .product()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.groups.is_empty() {
            return 0.0;
        }
        self.weight * self.factors(x).iter().product::<f64>()
    }
}

#[derive(Debug, Clone, Default)]
pub struct QuadraticModel {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: QuadExpr,
    pub penalty: ProductPenalty,
    pub rows: Vec<QuadExpr>,
    pub row_lower: Vec<f64>,
    pub row_upper: Vec<f64>,
    jac: Vec<(usize, usize)>,
    jac_slots: Vec<RowSlots>,
    hess: Vec<(usize, usize)>,
    obj_hess_slots: Vec<usize>,
    row_hess_slots: Vec<Vec<usize>>,
    penalty_hess: Vec<(usize, usize, usize)>,
}

#[derive(Debug, Clone, Default)]
struct RowSlots {
    linear: Vec<usize>,
    quad: Vec<(usize, usize)>,
}

impl QuadraticModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, lower: f64, upper: f64) -> usize {
        self.lower.push(lower);
        self.upper.push(upper);
        self.lower.len() - 1
    }

    pub fn add_row(&mut self, expr: QuadExpr, lower: f64, upper: f64) -> usize {
        self.rows.push(expr);
        self.row_lower.push(lower);
        self.row_upper.push(upper);
        self.rows.len() - 1
    }

    /// Builds derivative sparsity and slot maps. Must be called after the last
    /// structural change and before handing the model to a solver.
    pub fn finalize(&mut self) {
        use std::collections::HashMap;
        let mut jac_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut jac = Vec::new();
        let mut slot = |r: usize, c: usize, jac: &mut Vec<(usize, usize)>| -> usize {
            *jac_index.entry((r, c)).or_insert_with(|| {
                jac.push((r, c));
                jac.len() - 1
            })
        };
        let mut jac_slots = Vec::with_capacity(self.rows.len());
        for (r, row) in self.rows.iter().enumerate() {
            let mut s = RowSlots::default();
            for &(i, _) in &row.linear {
                s.linear.push(slot(r, i, &mut jac));
            }
            for &(i, j, _) in &row.quadratic {
                let a = slot(r, i, &mut jac);
                let b = slot(r, j, &mut jac);
                s.quad.push((a, b));
            }
            jac_slots.push(s);
        }

        let mut hess_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut hess = Vec::new();
        let mut hslot = |i: usize, j: usize, hess: &mut Vec<(usize, usize)>| -> usize {
            let key = (i.max(j), i.min(j));
            *hess_index.entry(key).or_insert_with(|| {
                hess.push(key);
                hess.len() - 1
            })
        };
        let obj_hess_slots = self
            .objective
            .quadratic
            .iter()
            .map(|&(i, j, _)| hslot(i, j, &mut hess))
            .collect();
        let row_hess_slots = self
            .rows
            .iter()
            .map(|row| row.quadratic.iter().map(|&(i, j, _)| hslot(i, j, &mut hess)).collect())
            .collect();
        let mut penalty_hess = Vec::new();
        let groups = &self.penalty.groups;
        for a in 0..groups.len() {
            for b in (a + 1)..groups.len() {
                for &i in &groups[a] {
                    for &j in &groups[b] {
                        penalty_hess.push((a, b, hslot(i, j, &mut hess)));
                    }
                }
            }
        }
        self.jac = jac;
        self.jac_slots = jac_slots;
        self.hess = hess;
        self.obj_hess_slots = obj_hess_slots;
        self.row_hess_slots = row_hess_slots;
        self.penalty_hess = penalty_hess;
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }
}

impl NlpProblem for QuadraticModel {
    fn num_variables(&self) -> usize {
        self.lower.len()
    }

    fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    fn variable_bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        lower.copy_from_slice(&self.lower);
        upper.copy_from_slice(&self.upper);
    }

    fn constraint_bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        lower.copy_from_slice(&self.row_lower);
        upper.copy_from_slice(&self.row_upper);
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.objective.eval(x) + self.penalty.eval(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.objective.add_gradient(x, 1.0, grad);
        if !self.penalty.groups.is_empty() {
            let f = self.penalty.factors(x);
            for (a, g) in self.penalty.groups.iter().enumerate() {
                let d = self.penalty.weight * ProductPenalty::product_except(&f, &[a]);
                for &j in g {
                    grad[j] += d;
                }
            }
        }
    }

    fn constraints(&self, x: &[f64], g: &mut [f64]) {
        for (gi, row) in g.iter_mut().zip(&self.rows) {
            *gi = row.eval(x);
        }
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        assert!(
            self.jac_slots.len() == self.rows.len(),
            "QuadraticModel::finalize must be called before solving"
        );
        self.jac.clone()
    }

    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) {
        values.iter_mut().for_each(|v| *v = 0.0);
        for (row, slots) in self.rows.iter().zip(&self.jac_slots) {
            for (&(_, a), &s) in row.linear.iter().zip(&slots.linear) {
                values[s] += a;
            }
            for (&(i, j, q), &(si, sj)) in row.quadratic.iter().zip(&slots.quad) {
                values[si] += q * x[j];
                values[sj] += q * x[i];
            }
        }
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.hess.clone()
    }

    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]) {
        values.iter_mut().for_each(|v| *v = 0.0);
        let diag = |i: usize, j: usize| if i == j { 2.0 } else { 1.0 };
        for (&(i, j, q), &s) in self.objective.quadratic.iter().zip(&self.obj_hess_slots) {
            values[s] += obj_factor * q * diag(i, j);
        }
        for ((row, slots), &l) in self.rows.iter().zip(&self.row_hess_slots).zip(lambda) {
            if l == 0.0 {
                continue;
            }
            for (&(i, j, q), &s) in row.quadratic.iter().zip(slots) {
                values[s] += l * q * diag(i, j);
            }
        }
        if !self.penalty.groups.is_empty() && obj_factor != 0.0 {
            let f = self.penalty.factors(x);
            for &(a, b, s) in &self.penalty_hess {
                values[s] += obj_factor * self.penalty.weight * ProductPenalty::product_except(&f, &[a, b]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_expr_evaluates() {
        let e = QuadExpr::new().constant(1.0).lin(0, 2.0).quad(0, 1, 3.0).quad(1, 1, -1.0);
        assert_eq!(e.eval(&[2.0, 3.0]), 1.0 + 4.0 + 18.0 - 9.0);
    }

    #[test]
    fn penalty_gradient_matches_product_rule() {
        let mut m = QuadraticModel::new();
        for _ in 0..3 {
            m.add_variable(0.0, 1.0);
        }
        m.penalty = ProductPenalty {
            weight: 2.0,
            groups: vec![vec![0, 1], vec![2]],
        };
        m.finalize();
        let x = [0.1, 0.2, 0.5];
        let mut g = vec![0.0; 3];
        m.gradient(&x, &mut g);
        assert!((m.objective(&x) - 2.0 * 1.3 * 1.5).abs() < 1e-12);
        assert!((g[0] - 3.0).abs() < 1e-12);
        assert!((g[2] - 2.6).abs() < 1e-12);
    }
}
