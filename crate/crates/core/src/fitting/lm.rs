//! Levenberg–Marquardt with a forward-difference Jacobian.
//!
//! Damping is Marquardt-scaled (`JᵀJ + λ·diag(JᵀJ)`), which makes the step
//! invariant to the very different units of the ringdown parameters. The
//! gradient test is the scale-free cosine between the residual and each
//! Jacobian column.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when every Jacobian column is this close to orthogonal to the residual.
    pub gradient_tol: f64,
    /// Stop when no parameter moves by more than this fraction of its scale.
    pub step_tol: f64,
    pub damping_init: f64,
    /// Typical magnitude of each parameter; sets difference steps and the step
    /// test when the parameter itself is near zero. Defaults to 1.
    pub scales: Option<Vec<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            damping_init: 1e-3,
            scales: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Residual vanished.
    ZeroResidual,
    GradientTol,
    StepTol,
    /// Damping grew without finding a lower cost; the minimum is resolved to
    /// machine precision.
    NoFurtherReduction,
    MaxIterations,
}

impl Termination {
    pub fn is_converged(self) -> bool {
        !matches!(self, Termination::MaxIterations)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::ZeroResidual => "zero_residual",
            Termination::GradientTol => "gradient_tol",
            Termination::StepTol => "step_tol",
            Termination::NoFurtherReduction => "no_further_reduction",
            Termination::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// `σ²·(JᵀJ)⁻¹` with `σ²` the residual variance per degree of freedom.
    pub covariance: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        self.termination.is_converged()
    }
}

/// Failure of the covariance step, naming the worst-determined parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularDirection {
    pub parameter: usize,
}

/// Minimizes `½‖r(p)‖²`.
///
/// `residual` writes the residual vector for a parameter vector; its length
/// must not change between calls.
pub fn lm_minimize<F>(residual: F, initial: &[f64], options: &LmOptions) -> Result<LmReport>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    lm_minimize_named(residual, initial, options, &[])
}

/// As [`lm_minimize`], with parameter names used in error messages.
pub fn lm_minimize_named<F>(residual: F, initial: &[f64], options: &LmOptions, names: &[&str]) -> Result<LmReport>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n_par = initial.len();
    let scales: Vec<f64> = match &options.scales {
        Some(s) if s.len() == n_par => s.iter().map(|v| v.abs()).collect(),
        Some(_) => return Err(Error::invalid("scales", "length must match the parameter vector")),
        None => vec![1.0; n_par],
    };
    let mut evals = 0usize;
    let eval = |p: &[f64], evals: &mut usize| {
        *evals += 1;
        DVector::from_vec(residual(p))
    };

    let mut p = DVector::from_column_slice(initial);
    let mut r = eval(p.as_slice(), &mut evals);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain {
            op: "lm_minimize",
            reason: "residual is not finite at the initial point".into(),
        });
    }
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = options.damping_init;
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < options.max_iter {
        if r.norm() == 0.0 {
            termination = Termination::ZeroResidual;
            break;
        }
        let jac = forward_jacobian(&eval, &p, &r, &scales, &mut evals);
        let g = jac.tr_mul(&r);
        let a = jac.tr_mul(&jac);

        let rn = r.norm();
        let mut worst_cos: f64 = 0.0;
        for j in 0..n_par {
            let cn = jac.column(j).norm();
            if cn > 0.0 {
                worst_cos = worst_cos.max(g[j].abs() / (cn * rn));
            }
        }
        if worst_cos <= options.gradient_tol {
            termination = Termination::GradientTol;
            break;
        }
        iterations += 1;

        let diag_floor = a.diagonal().max() * 1e-15;
        let mut accepted = false;
        let mut small_step = false;
        while lambda < 1e16 {
            let mut m = a.clone();
            for j in 0..n_par {
                m[(j, j)] += lambda * a[(j, j)].max(diag_floor).max(f64::MIN_POSITIVE);
            }
            let Some(chol) = m.cholesky() else {
                lambda *= nu;
                nu *= 2.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let candidate = &p + &step;
            let r_new = eval(candidate.as_slice(), &mut evals);
            let cost_new = if r_new.iter().all(|v| v.is_finite()) {
                0.5 * r_new.norm_squared()
            } else {
                f64::INFINITY
            };
            small_step = (0..n_par).all(|j| step[j].abs() <= options.step_tol * p[j].abs().max(scales[j]));
            if cost_new < cost {
                let predicted = -(g.dot(&step) + 0.5 * step.dot(&(&a * &step)));
                let rho = if predicted > 0.0 { (cost - cost_new) / predicted } else { 1.0 };
                lambda *= 0.1f64.max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                p = candidate;
                r = r_new;
                cost = cost_new;
                accepted = true;
                break;
            }
            if small_step {
                break;
            }
            lambda *= nu;
            nu *= 2.0;
        }
        if small_step {
            termination = Termination::StepTol;
            break;
        }
        if !accepted {
            termination = Termination::NoFurtherReduction;
            break;
        }
    }

    let jac = forward_jacobian(&eval, &p, &r, &scales, &mut evals);
    let covariance = covariance(&jac, &r).map_err(|dir| Error::SingularJacobian {
        suggestion: names
            .get(dir.parameter)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("parameter #{}", dir.parameter)),
    })?;
    Ok(LmReport {
        params: p.as_slice().to_vec(),
        covariance,
        residual_norm: r.norm(),
        residuals: r.as_slice().to_vec(),
        iterations,
        evaluations: evals,
        termination,
    })
}

/// Forward-difference Jacobian of `residual` at `p`, with the step rule the
/// solver uses: `√ε·max(|p_j|, scale_j)`.
pub fn numeric_jacobian<F>(residual: F, p: &[f64], scales: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let eval = |q: &[f64], _: &mut usize| DVector::from_vec(residual(q));
    let p = DVector::from_column_slice(p);
    let r = eval(p.as_slice(), &mut 0);
    forward_jacobian(&eval, &p, &r, scales, &mut 0)
}

fn forward_jacobian<E>(eval: &E, p: &DVector<f64>, r: &DVector<f64>, scales: &[f64], evals: &mut usize) -> DMatrix<f64>
where
    E: Fn(&[f64], &mut usize) -> DVector<f64>,
{
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut jac = DMatrix::zeros(r.len(), p.len());
    let mut probe = p.clone();
    for j in 0..p.len() {
        let h = sqrt_eps * p[j].abs().max(scales[j]);
        probe[j] = p[j] + h;
        // the actually representable step
        let h = probe[j] - p[j];
        let rj = eval(probe.as_slice(), evals);
        jac.set_column(j, &((rj - r) / h));
        probe[j] = p[j];
    }
    jac
}

/// `σ²·(JᵀJ)⁻¹`, computed on the column-equilibrated normal matrix.
pub fn covariance(jac: &DMatrix<f64>, r: &DVector<f64>) -> std::result::Result<DMatrix<f64>, SingularDirection> {
    let n = jac.ncols();
    let a = jac.tr_mul(jac);
    let mut d = DVector::zeros(n);
    for j in 0..n {
        if !(a[(j, j)] > 0.0) {
            return Err(SingularDirection { parameter: j });
        }
        d[j] = 1.0 / a[(j, j)].sqrt();
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * d[i] * d[j]);
    let svd = scaled.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let (imin, smin) = svd.singular_values.argmin();
    if smin <= 1e-13 * smax {
        let v = svd.v_t.as_ref().expect("requested V").row(imin).transpose();
        let (worst, _) = v.abs().argmax();
        return Err(SingularDirection { parameter: worst });
    }
    let inv = scaled.try_inverse().ok_or(SingularDirection { parameter: imin })?;
    let dof = r.len().saturating_sub(n).max(1) as f64;
    let sigma2 = r.norm_squared() / dof;
    let mut cov = DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * d[i] * d[j] * sigma2);
    // enforce exact symmetry
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = m;
            cov[(j, i)] = m;
        }
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_is_exact() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 0.25 * x).collect();
        let line = |p: &[f64]| xs.iter().zip(&ys).map(|(x, y)| y - (p[0] + p[1] * x)).collect();
        let opts = LmOptions {
            max_iter: 3,
            ..Default::default()
        };
        let rep = lm_minimize(line, &[0.0, 0.0], &opts).unwrap();
        assert!(rep.iterations <= 3, "{}", rep.iterations);
        assert!((rep.params[0] - 1.5).abs() < 1e-9, "{:?}", rep.params);
        assert!((rep.params[1] + 0.25).abs() < 1e-9, "{:?}", rep.params);
        assert!(lm_minimize(line, &[0.0, 0.0], &LmOptions::default()).unwrap().converged());
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let rep = lm_minimize(
            |p| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]],
            &[-1.2, 1.0],
            &LmOptions::default(),
        )
        .unwrap();
        assert!((rep.params[0] - 1.0).abs() < 1e-8, "{:?}", rep.params);
        assert!((rep.params[1] - 1.0).abs() < 1e-8, "{:?}", rep.params);
        assert!(rep.converged());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let opts = LmOptions {
            max_iter: 2,
            ..Default::default()
        };
        let rep = lm_minimize(|p| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]], &[-1.2, 1.0], &opts).unwrap();
        assert_eq!(rep.termination, Termination::MaxIterations);
        assert!(!rep.converged());
    }

    #[test]
    fn redundant_parameters_are_singular() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let err = lm_minimize_named(
            |p| xs.iter().map(|x| 2.0 * x - (p[0] + p[1]) * x).collect(),
            &[0.3, 0.2],
            &LmOptions::default(),
            &["a", "b"],
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularJacobian { .. }), "{err}");
    }

    #[test]
    fn covariance_of_noisy_line() {
        // residual variance 1 per point in a known design
        let xs: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let noise = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let rep = lm_minimize(
            |p| xs.iter().zip(&noise).map(|(x, e)| (3.0 * x + e) - p[0] * x).collect(),
            &[0.0],
            &LmOptions::default(),
        )
        .unwrap();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let slope = 3.0 + xs.iter().zip(&noise).map(|(x, e)| x * e).sum::<f64>() / sxx;
        assert!((rep.params[0] - slope).abs() < 1e-10);
        let ss: f64 = rep.residuals.iter().map(|r| r * r).sum();
        let expect = ss / 5.0 / sxx;
        assert!((rep.covariance[(0, 0)] - expect).abs() < 1e-6 * expect, "{} vs {expect}", rep.covariance[(0, 0)]);
    }
}
