use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ipm::{run, Prepared};
use crate::{NlpError, NlpProblem, Solution, SolverSettings};

/// Half-width used when sampling a variable with an infinite bound.
const UNBOUNDED_SPAN: f64 = 10.0;

/// Draws start `index` of the sequence determined by `seed`: each variable
/// uniform over its bounds, then passed through [`NlpProblem::complete_start`].
pub fn sample_start<P: NlpProblem + ?Sized>(problem: &P, seed: u64, index: u64) -> Vec<f64> {
    let n = problem.num_variables();
    let (mut lo, mut hi) = (vec![0.0; n], vec![0.0; n]);
    problem.variable_bounds(&mut lo, &mut hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut x: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &u)| {
            let (a, b) = match (l.is_finite(), u.is_finite()) {
                (true, true) => (l, u),
                (true, false) => (l, l + 2.0 * UNBOUNDED_SPAN),
                (false, true) => (u - 2.0 * UNBOUNDED_SPAN, u),
                (false, false) => (-UNBOUNDED_SPAN, UNBOUNDED_SPAN),
            };
            if b > a {
                rng.gen_range(a..=b)
            } else {
                a
            }
        })
        .collect();
    problem.complete_start(&mut x);
    x
}

/// Solves from `settings.starts` random points and returns the best result.
pub fn solve_multistart<P: NlpProblem + ?Sized>(problem: &P, settings: &SolverSettings) -> Result<Solution, NlpError> {
    solve_multistart_with(problem, settings, &[])
}

/// Like [`solve_multistart`] with additional caller-supplied starts (e.g. a
/// shifted previous solution) tried before the random ones. Ties are broken
/// by start order, so the result is independent of thread scheduling.
pub fn solve_multistart_with<P: NlpProblem + ?Sized>(
    problem: &P,
    settings: &SolverSettings,
    extra: &[Vec<f64>],
) -> Result<Solution, NlpError> {
    if settings.starts == 0 && extra.is_empty() {
        return Err(NlpError::NoStarts);
    }
    let prep = Prepared::new(problem)?;
    let mut local = settings.clone();
    local.log_path = None;
    let total = extra.len() + settings.starts;
    let results: Vec<Result<Solution, NlpError>> = (0..total)
        .into_par_iter()
        .map(|k| {
            let x0 = if k < extra.len() {
                extra[k].clone()
            } else {
                sample_start(problem, settings.seed, (k - extra.len()) as u64)
            };
            run(problem, &prep, &x0, &local).map(|(s, _)| s)
        })
        .collect();
    let mut best: Option<Solution> = None;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(s) => {
                if best.as_ref().map_or(true, |b| s.better_than(b)) {
                    best = Some(s);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap_or(NlpError::NoStarts))
}
