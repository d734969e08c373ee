//! Small optimizers used by the likelihood fits: bounded golden-section
//! search, Nelder-Mead, and BFGS with a backtracking line search.

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes `f` over `[lo, hi]` to an interval width of `tol`. Both
/// endpoints are evaluated as well, so boundary maxima are returned exactly.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let f_lo = f(lo);
    if hi <= lo {
        return (lo, f_lo);
    }
    let f_hi = f(hi);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for cand in [(lo, f_lo), (hi, f_hi)] {
        if cand.1 > best.1 || best.1.is_nan() {
            best = cand;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    pub max_iters: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            ftol: 1e-10,
            xtol: 1e-8,
            initial_step: 0.2,
        }
    }
}

/// Nelder-Mead minimization. Non-finite objective values are treated as
/// `+∞`, so infeasible regions simply repel the simplex.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1.0 {
            opts.initial_step * v[i].abs()
        } else {
            opts.initial_step
        };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.abs() <= opts.ftol && size <= opts.xtol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + t * (c - w)).collect()
        };

        let reflected = along(1.0, &simplex[n]);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(2.0, &simplex[n]);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(0.5, &simplex[n]);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = along(-0.5, &simplex[n]);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[i]
                .iter()
                .zip(&simplex[0])
                .map(|(v, b)| b + 0.5 * (v - b))
                .collect();
            values[i] = eval(&shrunk);
            simplex[i] = shrunk;
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("non-empty simplex");
    Minimum {
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        converged,
    }
}

/// Restarts Nelder-Mead from its own optimum until a restart no longer
/// improves the objective by more than `ftol`; this undoes premature
/// simplex collapse.
pub fn nelder_mead_restarted<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
    max_restarts: usize,
) -> Minimum {
    let mut best = nelder_mead(&mut f, x0, opts);
    let mut iterations = best.iterations;
    for _ in 0..max_restarts {
        let next = nelder_mead(&mut f, &best.x, opts);
        iterations += next.iterations;
        let improved = best.f - next.f > opts.ftol;
        if next.f <= best.f {
            best = Minimum { converged: next.converged, ..next };
        }
        if !improved {
            break;
        }
    }
    best.iterations = iterations;
    best
}

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iters: usize,
    /// Stop when an accepted step lowers `f` by less than this…
    pub ftol: f64,
    /// …and moves no coordinate by more than this.
    pub xtol: f64,
    /// Alternatively stop when the gradient's max-norm falls below this.
    pub gtol: f64,
    /// Largest coordinate change per step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            ftol: 1e-8,
            xtol: 1e-8,
            gtol: 1e-6,
            max_step: 2.0,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// BFGS minimization of `f` given `f_grad(x) = (f(x), ∇f(x))`.
pub fn bfgs<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(mut f_grad: F, x0: &[f64], opts: &BfgsOptions) -> Minimum {
    let n = x0.len();
    let identity = |scale: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect())
            .collect()
    };
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f_grad(&x);
    let mut h = identity(1.0);
    let mut first_update = true;
    let mut iterations = 0;
    let mut converged = false;

    if max_abs(&g) < opts.gtol {
        return Minimum {
            x,
            f: fx,
            iterations,
            converged: true,
        };
    }

    while iterations < opts.max_iters {
        iterations += 1;
        let mut d: Vec<f64> = h.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&g, &d);
        if slope.is_nan() || slope >= 0.0 {
            h = identity(1.0);
            first_update = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let len = max_abs(&d);
        if len > opts.max_step {
            let s = opts.max_step / len;
            d.iter_mut().for_each(|v| *v *= s);
            slope *= s;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let (fn_, gn) = f_grad(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // No descent possible along d: stationary to working precision.
            converged = max_abs(&g) < opts.gtol.sqrt();
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let df = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;

        if max_abs(&g) < opts.gtol || (df < opts.ftol && max_abs(&s) < opts.xtol) {
            converged = true;
            break;
        }

        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if first_update {
                h = identity(sy / dot(&y, &y));
                first_update = false;
            }
            let hy: Vec<f64> = h.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
    }

    Minimum {
        x,
        f: fx,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn rosenbrock_grad(x: &[f64]) -> (f64, Vec<f64>) {
        let g0 = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
        let g1 = 200.0 * (x[1] - x[0] * x[0]);
        (rosenbrock(x), vec![g0, g1])
    }

    #[test]
    fn golden_section_interior_and_boundary() {
        let (x, fx) = golden_section_max(|x| -(x - 0.3).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        assert!(fx.abs() < 1e-15);
        let (x, _) = golden_section_max(|x| -x, 0.0, 2.0, 1e-10);
        assert_eq!(x, 0.0);
        let (x, _) = golden_section_max(|x| x, 0.0, 2.0, 1e-10);
        assert_eq!(x, 2.0);
        let (x, _) = golden_section_max(|x| -x, 1.0, 1.0, 1e-10);
        assert_eq!(x, 1.0);
    }

    #[test]
    fn nelder_mead_quadratic_and_rosenbrock() {
        let m = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2),
            &[0.0, 0.0],
            &NelderMeadOptions::default(),
        );
        assert!(m.converged);
        assert!((m.x[0] - 3.0).abs() < 1e-6 && (m.x[1] + 1.0).abs() < 1e-6);

        let m = nelder_mead_restarted(rosenbrock, &[-1.2, 1.0], &NelderMeadOptions::default(), 5);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn nelder_mead_avoids_infeasible_region() {
        let m = nelder_mead(
            |x| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) },
            &[2.0],
            &NelderMeadOptions::default(),
        );
        assert!((m.x[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bfgs_rosenbrock() {
        let opts = BfgsOptions {
            max_iters: 2000,
            ..Default::default()
        };
        let m = bfgs(rosenbrock_grad, &[-1.2, 1.0], &opts);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn bfgs_already_optimal() {
        let m = bfgs(|x| (x[0] * x[0], vec![2.0 * x[0]]), &[0.0], &BfgsOptions::default());
        assert!(m.converged);
        assert_eq!(m.iterations, 0);
    }
}
