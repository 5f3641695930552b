/// Outcome of one simplex run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexResult {
    pub x: [f64; 2],
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Stop when every vertex lies within this fraction of the box width of the best one.
    pub x_tol: f64,
    /// Initial edge length as a fraction of the box width.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_evals: 200,
            f_tol: 1e-7,
            x_tol: 1e-4,
            initial_step: 0.1,
        }
    }
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Nelder–Mead on a box; trial points are projected onto the box.
pub fn minimize<F>(mut f: F, start: [f64; 2], lower: [f64; 2], upper: [f64; 2], opts: SimplexOptions) -> SimplexResult
where
    F: FnMut([f64; 2]) -> f64,
{
    let clamp = |x: [f64; 2]| [x[0].clamp(lower[0], upper[0]), x[1].clamp(lower[1], upper[1])];
    let width = [upper[0] - lower[0], upper[1] - lower[1]];
    let mut evals = 0usize;
    let mut eval = |x: [f64; 2], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let x0 = clamp(start);
    if width[0] == 0.0 && width[1] == 0.0 {
        let v = eval(x0, &mut evals);
        return SimplexResult {
            x: x0,
            f: v,
            evaluations: evals,
            converged: true,
        };
    }
    let mut simplex: Vec<([f64; 2], f64)> = Vec::with_capacity(3);
    simplex.push((x0, eval(x0, &mut evals)));
    for d in 0..2 {
        let mut x = x0;
        let step = opts.initial_step * width[d];
        // Step away from the nearer wall so the vertex stays distinct after projection.
        x[d] = if x0[d] + step <= upper[d] { x0[d] + step } else { x0[d] - step };
        let x = clamp(x);
        simplex.push((x, eval(x, &mut evals)));
    }

    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0], simplex[2]);
        let spread = (worst.1 - best.1).abs();
        let size = simplex.iter().fold(0.0f64, |acc, (x, _)| {
            let mut m = acc;
            for d in 0..2 {
                if width[d] > 0.0 {
                    m = m.max((x[d] - best.0[d]).abs() / width[d]);
                }
            }
            m
        });
        if (spread <= opts.f_tol && size <= opts.x_tol * 10.0) || size <= opts.x_tol {
            converged = true;
            break;
        }
        let centroid = [
            0.5 * (simplex[0].0[0] + simplex[1].0[0]),
            0.5 * (simplex[0].0[1] + simplex[1].0[1]),
        ];
        let along = |t: f64| clamp([
            centroid[0] + t * (worst.0[0] - centroid[0]),
            centroid[1] + t * (worst.0[1] - centroid[1]),
        ]);
        let xr = along(-REFLECT);
        let fr = eval(xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-EXPAND);
            let fe = eval(xe, &mut evals);
            simplex[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[1].1 {
            simplex[2] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = along(-CONTRACT);
            (x, eval(x, &mut evals))
        } else {
            let x = along(CONTRACT);
            (x, eval(x, &mut evals))
        };
        if fc < worst.1.min(fr) {
            simplex[2] = (xc, fc);
            continue;
        }
        let b = simplex[0].0;
        for v in simplex.iter_mut().skip(1) {
            let x = clamp([b[0] + SHRINK * (v.0[0] - b[0]), b[1] + SHRINK * (v.0[1] - b[1])]);
            *v = (x, eval(x, &mut evals));
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    SimplexResult {
        x: simplex[0].0,
        f: simplex[0].1,
        evaluations: evals,
        converged,
    }
}
