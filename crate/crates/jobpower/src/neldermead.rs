//! Nelder-Mead simplex minimization.
//!
//! Bog-standard reflect/expand/contract/shrink with the usual coefficients
//! (1, 2, 1/2, 1/2). No derivatives, no constraints - callers encode
//! constraints in the objective (reparameterization or penalties). Good
//! enough for the low-dimensional polish steps and cap searches here; not a
//! general-purpose optimizer.

/// Stopping rules. The search ends when the simplex collapses below `x_tol`
/// in every coordinate *and* the function spread falls below `f_tol`, or
/// after `max_evals` objective calls (reported as non-converged).
#[derive(Clone, Debug)]
pub struct NelderMeadConfig {
    pub max_evals: usize,
    pub x_tol: f64,
    pub f_tol: f64,
    /// Initial simplex: each vertex i perturbs coordinate i of the start by
    /// this step (absolute).
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig { max_evals: 4000, x_tol: 1e-8, f_tol: 1e-10, initial_step: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` starting from `x0`. Zero-dimensional inputs return
/// immediately (nothing to optimize).
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    cfg: &NelderMeadConfig,
) -> NelderMeadResult {
    let n = x0.len();
    if n == 0 {
        let fx = f(x0);
        return NelderMeadResult { x: Vec::new(), f: fx, evals: 1, converged: true };
    }
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // vertices kept sorted by objective value, best first
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if cfg.initial_step != 0.0 { cfg.initial_step } else { 0.1 };
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }
    let sort = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("objective values comparable"));
    };
    sort(&mut simplex);

    while evals < cfg.max_evals {
        // convergence: coordinate spread and value spread both small
        let spread_f = simplex[n].1 - simplex[0].1;
        let mut spread_x = 0.0f64;
        for i in 0..n {
            let lo = simplex.iter().map(|(v, _)| v[i]).fold(f64::INFINITY, f64::min);
            let hi = simplex.iter().map(|(v, _)| v[i]).fold(f64::NEG_INFINITY, f64::max);
            spread_x = spread_x.max(hi - lo);
        }
        if spread_x < cfg.x_tol && spread_f.abs() < cfg.f_tol {
            let (x, fx) = simplex.swap_remove(0);
            return NelderMeadResult { x, f: fx, evals, converged: true };
        }

        let centroid: Vec<f64> = (0..n)
            .map(|i| simplex[..n].iter().map(|(v, _)| v[i]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflected: Vec<f64> =
            (0..n).map(|i| centroid[i] + (centroid[i] - worst.0[i])).collect();
        let fr = eval(&reflected, &mut evals);

        if fr < simplex[0].1 {
            let expanded: Vec<f64> =
                (0..n).map(|i| centroid[i] + 2.0 * (centroid[i] - worst.0[i])).collect();
            let fe = eval(&expanded, &mut evals);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            // contract toward the better of worst/reflected
            let (base, fb) = if fr < worst.1 { (&reflected, fr) } else { (&worst.0, worst.1) };
            let contracted: Vec<f64> =
                (0..n).map(|i| centroid[i] + 0.5 * (base[i] - centroid[i])).collect();
            let fc = eval(&contracted, &mut evals);
            if fc < fb {
                simplex[n] = (contracted, fc);
            } else {
                // shrink everything toward the best vertex
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    for i in 0..n {
                        v.0[i] = best[i] + 0.5 * (v.0[i] - best[i]);
                    }
                    v.1 = eval(&v.0, &mut evals);
                }
            }
        }
        sort(&mut simplex);
    }
    let (x, fx) = simplex.swap_remove(0);
    NelderMeadResult { x, f: fx, evals, converged: false }
}
