//! Memory-kernel dynamics for dissipative level systems.
//!
//! A bath is specified by a spectral density `J(omega)`; its memory kernel is
//! the half-axis Fourier transform `v(s) = (1/2pi) ∫ J(omega) e^{-i omega s}
//! d omega`. The retarded Green's function of each level solves the Volterra
//! integro-differential equation
//!
//! ```text
//! dG/dt + i e G(t) + ∫_0^t v(t - t') G(t') dt' = 0,    G(0) = 1,
//! ```
//!
//! and the instantaneous dissipation matrix is `c(t) = -(1/2)(Gdot G^{-1} +
//! h.c.)`.
//!
//! Three kernel shapes are supported:
//! * flat band `J = J0` gives `v(s) = J0 delta(s)`; the delta sits at the
//!   integration boundary and carries its full weight (the wide-band limit of
//!   a Lorentzian), so the memory term collapses to `J0 G(t)` and the
//!   equation is solved in closed form;
//! * a Lorentzian `J(omega) = 2 Gamma lambda^2 / ((omega - omega0)^2 +
//!   lambda^2)` gives the exponential kernel `v(s) = Gamma lambda
//!   e^{-(lambda + i omega0) s}`, handled with an O(1) convolution recursion;
//! * a tabulated density is Fourier-transformed numerically and convolved
//!   directly.
//!
//! The marcher is a predictor–corrector trapezoidal scheme (second order in
//! the step size).

use crate::constants::{GREENS_CONDITION_LIMIT, VOLTERRA_STEP_GUARD};
use crate::linalg::OperatorMatrix;
use crate::C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bath spectral density shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum SpectralDensity {
    /// Constant density `J(omega) = j0`.
    Flat { j0: f64 },
    /// `J(omega) = 2 * strength * width^2 / ((omega - center)^2 + width^2)`.
    Lorentzian {
        center: f64,
        width: f64,
        strength: f64,
    },
    /// Piecewise-linear table of `(omega, J(omega))` samples.
    Tabulated { omegas: Vec<f64>, values: Vec<f64> },
}

impl SpectralDensity {
    pub fn validate(&self) -> Result<(), GreensError> {
        match self {
            SpectralDensity::Flat { j0 } => {
                if !j0.is_finite() || *j0 < 0.0 {
                    return Err(GreensError::InvalidSpectral(format!(
                        "flat density needs finite j0 >= 0, got {j0}"
                    )));
                }
            }
            SpectralDensity::Lorentzian {
                center,
                width,
                strength,
            } => {
                if !center.is_finite() || !width.is_finite() || !strength.is_finite() {
                    return Err(GreensError::InvalidSpectral(
                        "Lorentzian parameters must be finite".into(),
                    ));
                }
                if *width <= 0.0 || *strength < 0.0 {
                    return Err(GreensError::InvalidSpectral(format!(
                        "Lorentzian needs width > 0 and strength >= 0, got width {width}, strength {strength}"
                    )));
                }
            }
            SpectralDensity::Tabulated { omegas, values } => {
                if omegas.len() != values.len() || omegas.len() < 2 {
                    return Err(GreensError::InvalidSpectral(
                        "table needs >= 2 equal-length omega/value lists".into(),
                    ));
                }
                if omegas.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(GreensError::InvalidSpectral(
                        "table frequencies must be strictly increasing".into(),
                    ));
                }
                if omegas.iter().chain(values.iter()).any(|v| !v.is_finite())
                    || values.iter().any(|&v| v < 0.0)
                {
                    return Err(GreensError::InvalidSpectral(
                        "table entries must be finite with non-negative densities".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `J(omega)`, interpolating linearly for tables (zero outside range).
    pub fn evaluate(&self, omega: f64) -> f64 {
        match self {
            SpectralDensity::Flat { j0 } => *j0,
            SpectralDensity::Lorentzian {
                center,
                width,
                strength,
            } => {
                let d = omega - center;
                2.0 * strength * width * width / (d * d + width * width)
            }
            SpectralDensity::Tabulated { omegas, values } => {
                if omega < omegas[0] || omega > *omegas.last().unwrap() {
                    return 0.0;
                }
                let idx = omegas.partition_point(|&w| w <= omega).min(omegas.len() - 1);
                let (i0, i1) = if idx == 0 { (0, 1) } else { (idx - 1, idx) };
                let frac = (omega - omegas[i0]) / (omegas[i1] - omegas[i0]);
                values[i0] + frac * (values[i1] - values[i0])
            }
        }
    }
}

/// Memory kernel of one bath component.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `v(s) = weight * delta(s)`, full weight at the boundary.
    Delta { weight: f64 },
    /// `v(s) = amplitude * e^{-decay * s}` with `Re(decay) > 0`.
    Exponential { amplitude: C64, decay: C64 },
    /// Numerical half-axis Fourier transform of a tabulated density.
    Table { omegas: Vec<f64>, values: Vec<f64> },
}

impl Kernel {
    /// Kernel value at `s >= 0` for the continuous shapes (`None` for the
    /// delta component, which has no pointwise value).
    pub fn eval(&self, s: f64) -> Option<C64> {
        match self {
            Kernel::Delta { .. } => None,
            Kernel::Exponential { amplitude, decay } => Some(amplitude * (-decay * s).exp()),
            Kernel::Table { omegas, values } => Some(table_kernel_at(omegas, values, s)),
        }
    }

    /// Upper bound on `∫_0^{t_end} |v(s)| ds` (the delta contributes its
    /// weight), used by the step-size guard.
    fn l1_norm(&self, t_end: f64, probe_steps: usize) -> f64 {
        match self {
            Kernel::Delta { weight } => *weight,
            Kernel::Exponential { amplitude, decay } => amplitude.norm() / decay.re,
            Kernel::Table { omegas, values } => {
                let n = probe_steps.max(64);
                let h = t_end / n as f64;
                let mut total = 0.0;
                for j in 0..=n {
                    let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                    total += w * table_kernel_at(omegas, values, j as f64 * h).norm();
                }
                total * h
            }
        }
    }
}

/// Trapezoidal `(1/2pi) ∫ J(omega) e^{-i omega s} d omega` over the table.
fn table_kernel_at(omegas: &[f64], values: &[f64], s: f64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..omegas.len() - 1 {
        let dw = omegas[i + 1] - omegas[i];
        let f0 = C64::from_polar(values[i], -omegas[i] * s);
        let f1 = C64::from_polar(values[i + 1], -omegas[i + 1] * s);
        acc += (f0 + f1) * (0.5 * dw);
    }
    acc / C64::new(2.0 * std::f64::consts::PI, 0.0)
}

/// Memory kernel of one spectral component.
pub fn kernel(spectral: &SpectralDensity) -> Result<Kernel, GreensError> {
    spectral.validate()?;
    Ok(match spectral {
        SpectralDensity::Flat { j0 } => Kernel::Delta { weight: *j0 },
        SpectralDensity::Lorentzian {
            center,
            width,
            strength,
        } => Kernel::Exponential {
            amplitude: C64::new(strength * width, 0.0),
            decay: C64::new(*width, *center),
        },
        SpectralDensity::Tabulated { omegas, values } => Kernel::Table {
            omegas: omegas.clone(),
            values: values.clone(),
        },
    })
}

/// Solved Green's functions of a level system. `G` stays diagonal because
/// the level energies are diagonal and every level sees the same bath, so
/// only the diagonals are stored: `g[time_index][level]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreensSolution {
    pub e_s: Vec<f64>,
    pub times: Vec<f64>,
    pub g: Vec<Vec<C64>>,
    pub gdot: Vec<Vec<C64>>,
}

impl GreensSolution {
    pub fn levels(&self) -> usize {
        self.e_s.len()
    }

    /// `G(t_index)` as a diagonal matrix.
    pub fn g_matrix(&self, time_index: usize) -> OperatorMatrix {
        let d = self.levels();
        OperatorMatrix::from_fn(d, d, |i, j| {
            if i == j {
                self.g[time_index][i]
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// Instantaneous dissipation of one level: `-Re(Gdot / G)`.
    pub fn dissipation_scalar(&self, time_index: usize, level: usize) -> f64 {
        let g = self.g[time_index][level];
        -(self.gdot[time_index][level] / g).re
    }
}

#[derive(Debug, Error)]
pub enum GreensError {
    #[error("invalid spectral density: {0}")]
    InvalidSpectral(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(
        "step too large: h * (max|e| + ∫|v|) = {product:.3e} exceeds {limit}; refine the grid"
    )]
    StepTooLarge { product: f64, limit: f64 },
    #[error("Green's function numerically singular (condition {cond:.3e})")]
    SingularGreens { cond: f64 },
}

/// Solve the Volterra equation for every level on a uniform grid of
/// `n_steps` steps covering `[0, t_end]`.
///
/// Multiple baths add their kernels. When only flat components are present
/// the closed-form solution `G_k(t) = e^{-(i e_k + J0) t}` is used; otherwise
/// a predictor–corrector trapezoidal marcher runs, with exponential kernels
/// convolved by an O(1) recursion and tabulated kernels by direct summation.
pub fn solve_greens(
    e_s: &[f64],
    spectra: &[SpectralDensity],
    t_end: f64,
    n_steps: usize,
) -> Result<GreensSolution, GreensError> {
    if e_s.is_empty() || e_s.iter().any(|v| !v.is_finite()) {
        return Err(GreensError::InvalidGrid(
            "need at least one finite level energy".into(),
        ));
    }
    if !(t_end > 0.0) || !t_end.is_finite() || n_steps == 0 {
        return Err(GreensError::InvalidGrid(format!(
            "need t_end > 0 and n_steps > 0, got t_end {t_end}, n_steps {n_steps}"
        )));
    }
    let kernels = spectra.iter().map(kernel).collect::<Result<Vec<_>, _>>()?;
    let h = t_end / n_steps as f64;

    let e_norm = e_s.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let kernel_l1: f64 = kernels.iter().map(|k| k.l1_norm(t_end, n_steps)).sum();
    let product = h * (e_norm + kernel_l1);
    if product > VOLTERRA_STEP_GUARD {
        return Err(GreensError::StepTooLarge {
            product,
            limit: VOLTERRA_STEP_GUARD,
        });
    }

    let delta_weight: f64 = kernels
        .iter()
        .map(|k| match k {
            Kernel::Delta { weight } => *weight,
            _ => 0.0,
        })
        .sum();
    let exponentials: Vec<(C64, C64)> = kernels
        .iter()
        .filter_map(|k| match k {
            Kernel::Exponential { amplitude, decay } => Some((*amplitude, *decay)),
            _ => None,
        })
        .collect();
    let tables: Vec<(&Vec<f64>, &Vec<f64>)> = kernels
        .iter()
        .filter_map(|k| match k {
            Kernel::Table { omegas, values } => Some((omegas, values)),
            _ => None,
        })
        .collect();

    let times: Vec<f64> = (0..=n_steps).map(|n| n as f64 * h).collect();

    if exponentials.is_empty() && tables.is_empty() {
        // Pure flat band: closed form.
        let mut g = Vec::with_capacity(n_steps + 1);
        let mut gdot = Vec::with_capacity(n_steps + 1);
        for &t in &times {
            let mut row = Vec::with_capacity(e_s.len());
            let mut drow = Vec::with_capacity(e_s.len());
            for &e in e_s {
                let z = C64::new(-delta_weight, -e);
                let gv = (z * t).exp();
                row.push(gv);
                drow.push(z * gv);
            }
            g.push(row);
            gdot.push(drow);
        }
        return Ok(GreensSolution {
            e_s: e_s.to_vec(),
            times,
            g,
            gdot,
        });
    }

    // Precompute the tabulated kernels on the step grid once.
    let table_values: Vec<Vec<C64>> = tables
        .iter()
        .map(|(om, va)| {
            (0..=n_steps)
                .map(|j| table_kernel_at(om, va, j as f64 * h))
                .collect()
        })
        .collect();

    let n_levels = e_s.len();
    let mut g: Vec<Vec<C64>> = Vec::with_capacity(n_steps + 1);
    let mut gdot: Vec<Vec<C64>> = Vec::with_capacity(n_steps + 1);
    g.push(vec![C64::new(1.0, 0.0); n_levels]);
    gdot.push(
        e_s.iter()
            .map(|&e| C64::new(-delta_weight, -e))
            .collect(),
    );

    // Per-level marcher state: the running trapezoidal convolution of each
    // exponential component, and the level's G history (for table kernels).
    let mut exp_state: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); exponentials.len()]; n_levels];
    let mut i_prev: Vec<C64> = vec![C64::new(0.0, 0.0); n_levels];

    for n in 1..=n_steps {
        let mut g_row = Vec::with_capacity(n_levels);
        let mut gdot_row = Vec::with_capacity(n_levels);
        for k in 0..n_levels {
            let z_local = C64::new(-delta_weight, -e_s[k]);
            let g_prev = g[n - 1][k];
            let f_prev = z_local * g_prev - i_prev[k];

            // History part of the memory integral (independent of G_n).
            let mut history = C64::new(0.0, 0.0);
            let mut endpoint = C64::new(0.0, 0.0); // coefficient of G_n
            for (c, &(amp, decay)) in exponentials.iter().enumerate() {
                let shift = (-decay * h).exp();
                exp_state[k][c] = shift * (exp_state[k][c] + amp * g_prev * (0.5 * h));
                history += exp_state[k][c];
                endpoint += amp * (0.5 * h);
            }
            for tv in &table_values {
                let mut conv = tv[n] * g[0][k] * 0.5;
                for m in 1..n {
                    conv += tv[n - m] * g[m][k];
                }
                history += conv * h;
                endpoint += tv[0] * (0.5 * h);
            }

            // Heun predictor/corrector on G_n.
            let mut g_n = g_prev + f_prev * h;
            for _ in 0..2 {
                let i_n = history + endpoint * g_n;
                let f_corr = z_local * g_n - i_n;
                g_n = g_prev + (f_prev + f_corr) * (0.5 * h);
            }
            let i_n = history + endpoint * g_n;
            let f_n = z_local * g_n - i_n;

            // Fold G_n into the running exponential convolutions so the next
            // step's shift sees a complete trapezoid.
            for (c, &(amp, _)) in exponentials.iter().enumerate() {
                exp_state[k][c] += amp * g_n * (0.5 * h);
            }
            i_prev[k] = i_n;
            g_row.push(g_n);
            gdot_row.push(f_n);
        }
        g.push(g_row);
        gdot.push(gdot_row);
    }

    Ok(GreensSolution {
        e_s: e_s.to_vec(),
        times,
        g,
        gdot,
    })
}

/// Dissipation matrix `c(t) = -(1/2)(Gdot G^{-1} + h.c.)` at one stored time.
///
/// `G` is diagonal here, so `c` is the real diagonal `-Re(Gdot_k / G_k)`.
/// Fails when `G` is numerically singular (condition number beyond
/// [`GREENS_CONDITION_LIMIT`], or a vanishing diagonal entry).
pub fn dissipation_matrix(
    solution: &GreensSolution,
    time_index: usize,
) -> Result<OperatorMatrix, GreensError> {
    let d = solution.levels();
    let row = &solution.g[time_index];
    let max_g = row.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let min_g = row.iter().fold(f64::INFINITY, |m, z| m.min(z.norm()));
    let cond = if min_g == 0.0 { f64::INFINITY } else { max_g / min_g };
    if !cond.is_finite() || cond > GREENS_CONDITION_LIMIT {
        return Err(GreensError::SingularGreens { cond });
    }
    Ok(OperatorMatrix::from_fn(d, d, |i, j| {
        if i == j {
            C64::new(solution.dissipation_scalar(time_index, i), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    }))
}
