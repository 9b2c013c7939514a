/// A smooth nonlinear program
///
/// ```text
/// minimize f(x)  subject to  g_l <= g(x) <= g_u,  x_l <= x <= x_u
/// ```
///
/// Rows with `g_l == g_u` are equalities. Infinite bounds are expressed with
/// `f64::INFINITY` / `f64::NEG_INFINITY`. Derivatives are supplied in sparse
/// coordinate form; the Hessian structure lists the lower triangle only
/// (`row >= col`) and its values are those of
/// `obj_factor * ∇²f + Σ λ_i ∇²g_i`.
pub trait NlpProblem: Sync {
    fn num_variables(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn variable_bounds(&self, lower: &mut [f64], upper: &mut [f64]);
    fn constraint_bounds(&self, lower: &mut [f64], upper: &mut [f64]);

    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn constraints(&self, x: &[f64], g: &mut [f64]);

    /// `(row, col)` coordinates of the constraint Jacobian.
    fn jacobian_structure(&self) -> Vec<(usize, usize)>;
    fn jacobian_values(&self, x: &[f64], values: &mut [f64]);

    /// `(row, col)` coordinates of the Lagrangian Hessian, lower triangle.
    fn hessian_structure(&self) -> Vec<(usize, usize)>;
    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]);

    /// Hook applied to every sampled multistart point before solving, e.g. to
    /// make state variables consistent with sampled inputs.
    fn complete_start(&self, _x: &mut [f64]) {}
}
