//! Derivative-free local descent used for polishing.

#[derive(Debug, Clone, Copy)]
pub(crate) struct NmOptions {
    pub max_evals: usize,
    /// Stop once the simplex's value spread is below this fraction of the
    /// best value (plus `abs_tol`).
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Stop once every simplex edge from the best vertex is shorter than this
    /// fraction of the initial step.
    pub x_tol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            rel_tol: 1e-12,
            abs_tol: 1e-300,
            x_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NmOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Minimizes `f` from `x0` with an axis-aligned initial simplex of size
/// `step`. Restarts once from the result to escape collapsed simplices.
pub(crate) fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    opts: NmOptions,
) -> NmOutcome {
    let first = run(&mut f, x0, step, opts);
    if first.evals >= opts.max_evals {
        return first;
    }
    let small: Vec<f64> = step.iter().map(|s| s * 0.05).collect();
    let rest = NmOptions {
        max_evals: opts.max_evals - first.evals,
        ..opts
    };
    let second = run(&mut f, &first.x, &small, rest);
    let evals = first.evals + second.evals;
    if second.value < first.value {
        NmOutcome { evals, ..second }
    } else {
        NmOutcome { evals, ..first }
    }
}

fn run<F: FnMut(&[f64]) -> f64>(f: &mut F, x0: &[f64], step: &[f64], opts: NmOptions) -> NmOutcome {
    let d = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += if step[i] != 0.0 { step[i] } else { 1e-3 };
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let scale: f64 = step.iter().map(|s| s.abs()).fold(0.0, f64::max).max(1e-300);
    let by_value = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| a.1.total_cmp(&b.1);

    while evals < opts.max_evals {
        simplex.sort_by(by_value);
        let best = simplex[0].1;
        let worst = simplex[d].1;
        let spread_ok = (worst - best).abs() <= opts.rel_tol * best.abs() + opts.abs_tol;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread_ok || size <= opts.x_tol * scale {
            break;
        }
        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / d as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[d].1 {
                let x = along(-0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            };
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best_x = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best_x
                        .iter()
                        .zip(&vertex.0)
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    let v = eval(&x, &mut evals);
                    *vertex = (x, v);
                }
            }
        }
    }
    simplex.sort_by(by_value);
    let (x, value) = simplex.swap_remove(0);
    NmOutcome { x, value, evals }
}
