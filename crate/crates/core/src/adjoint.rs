//! Forward-only adjoint-state gradient of the data misfit
//!
//! ```text
//! T(c) = Σ_m Σ_n |Y_n(r_m) − y_mn|²
//! ```
//!
//! Because the Helmholtz operator is symmetric and sources are the adjoint
//! of receiver sampling, the adjoint field for source `n` is a linear
//! combination of forward fields,
//!
//! ```text
//! Λ_n = −Σ_m conj(Y_n(r_m) − y_mn) · Y_m,
//! ```
//!
//! i.e. minus the wavefield radiated by conjugate residuals placed at the
//! receivers. The sound-speed gradient density is then
//!
//! ```text
//! ∂T/∂c(r) = (4ω² / c(r)³) · Re Σ_n Λ_n(r) Y_n(r)
//! ```
//!
//! with the factor 2 from differentiating `|·|²` and the real part because
//! T and c are real. Its discrete pairing is `δT ≈ Σ_j g_j δc_j h²`.

use num_complex::Complex64;

use crate::cbs::{bcbs_solve, BatchPolicy, BatchSolution, SolverConfig, Wavefield};
use crate::error::{Error, Result};
use crate::geometry::{make_sources, measurements_from, MeasurementMatrix, TransducerArray};
use crate::grid::{ComplexField, RealField, SoundSpeedField};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Sound-speed gradient density on the speed grid.
pub type GradientField = RealField;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// `Y_n(r_m) − y_mn`, same layout as [`MeasurementMatrix`].
    pub residual: MeasurementMatrix,
}

pub fn objective(predicted: &MeasurementMatrix, observed: &MeasurementMatrix) -> Result<ObjectiveValue> {
    if predicted.receivers != observed.receivers || predicted.sources != observed.sources {
        return Err(Error::DimensionMismatch(format!(
            "predicted {}x{} vs observed {}x{}",
            predicted.receivers, predicted.sources, observed.receivers, observed.sources
        )));
    }
    if (predicted.omega - observed.omega).abs() > 1e-9 * observed.omega.abs() {
        return Err(Error::DimensionMismatch(format!(
            "omega {} does not match observed {}",
            predicted.omega, observed.omega
        )));
    }
    let values: Vec<Complex64> = predicted.values.iter().zip(&observed.values).map(|(p, o)| p - o).collect();
    let value = values.iter().map(|r| r.norm_sqr()).sum();
    let residual = MeasurementMatrix::new(predicted.receivers, predicted.sources, values, predicted.omega)?;
    Ok(ObjectiveValue { value, residual })
}

/// `Λ_n = −Σ_m conj(resid_mn) Y_m` for every source n.
///
/// `conjugate = false` drops the conjugation; it exists only as a negative
/// control for gradient checks.
pub fn adjoint_fields_with(wavefields: &[ComplexField], residual: &MeasurementMatrix, conjugate: bool) -> Result<Vec<ComplexField>> {
    if wavefields.len() < residual.receivers {
        return Err(Error::MissingWavefield(wavefields.len()));
    }
    if residual.sources > wavefields.len() {
        return Err(Error::MissingWavefield(residual.sources - 1));
    }
    let grid = *wavefields[0].grid();
    let mut out = Vec::with_capacity(residual.sources);
    for n in 0..residual.sources {
        let mut acc = vec![ZERO; grid.len()];
        for (m, ym) in wavefields.iter().enumerate().take(residual.receivers) {
            let r = residual.get(m, n);
            let w = -(if conjugate { r.conj() } else { r });
            if w == ZERO {
                continue;
            }
            acc.iter_mut().zip(ym.values()).for_each(|(a, y)| *a += w * y);
        }
        out.push(ComplexField::from_values(grid, acc)?);
    }
    Ok(out)
}

pub fn adjoint_fields(wavefields: &[ComplexField], residual: &MeasurementMatrix) -> Result<Vec<ComplexField>> {
    adjoint_fields_with(wavefields, residual, true)
}

#[derive(Debug, Clone, Default)]
pub struct GradientOptions {
    /// Nodes outside the mask get zero gradient.
    pub mask: Option<Vec<bool>>,
    /// Debug negative control: skip the residual conjugation.
    pub flip_conjugation: bool,
}

/// Gradient density `(4ω²/c³) Re Σ_n Λ_n Y_n`.
pub fn gradient_from_adjoint(speed: &SoundSpeedField, wavefields: &[ComplexField], adjoint: &[ComplexField], omega: f64, mask: Option<&[bool]>) -> Result<GradientField> {
    let grid = *speed.grid();
    if adjoint.len() > wavefields.len() {
        return Err(Error::MissingWavefield(wavefields.len()));
    }
    let mut acc = vec![ZERO; grid.len()];
    for (lam, y) in adjoint.iter().zip(wavefields) {
        if lam.grid() != &grid || y.grid() != &grid {
            return Err(Error::DimensionMismatch("wavefields must live on the speed grid".into()));
        }
        acc.iter_mut().zip(lam.values().iter().zip(y.values())).for_each(|(a, (l, y))| *a += l * y);
    }
    let w2 = omega * omega;
    let values = acc
        .iter()
        .zip(speed.values())
        .enumerate()
        .map(|(k, (s, c))| {
            if mask.is_some_and(|m| !m[k]) {
                0.0
            } else {
                4.0 * w2 / (c * c * c) * s.re
            }
        })
        .collect();
    RealField::from_values(grid, values)
}

pub fn gradient(
    speed: &SoundSpeedField,
    wavefields: &[ComplexField],
    residual: &MeasurementMatrix,
    omega: f64,
    options: &GradientOptions,
) -> Result<GradientField> {
    if let Some(mask) = &options.mask {
        if mask.len() != speed.grid().len() {
            return Err(Error::DimensionMismatch("mask must cover the speed grid".into()));
        }
    }
    let adjoint = adjoint_fields_with(wavefields, residual, !options.flip_conjugation)?;
    gradient_from_adjoint(speed, wavefields, &adjoint, omega, options.mask.as_deref())
}

/// One batched solve over all sources, optionally warm-started.
pub fn simulate(
    speed: &SoundSpeedField,
    array: &TransducerArray,
    cfg: &SolverConfig,
    warm_start: Option<&[Wavefield]>,
) -> Result<(MeasurementMatrix, BatchSolution)> {
    let sources: Vec<ComplexField> = make_sources(array, speed.grid())?.into_iter().map(|s| s.field).collect();
    let init = warm_start.map(|w| vec![w.to_vec()]);
    let batch = bcbs_solve(std::slice::from_ref(speed), &sources, cfg, BatchPolicy::PerSpeed, init.as_deref())?;
    let data = measurements_from(&batch.fields[0], array, cfg.omega)?;
    Ok((data, batch))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: ObjectiveValue,
    pub gradient: GradientField,
    pub predicted: MeasurementMatrix,
    pub batch: BatchSolution,
}

impl Evaluation {
    /// PDE evaluations spent: always one batched forward solve.
    pub fn npe(&self) -> u64 {
        self.batch.npe
    }

    pub fn converged(&self) -> bool {
        self.batch.all_converged()
    }

    pub fn wavefields(&self) -> &[Wavefield] {
        &self.batch.fields[0]
    }
}

/// Fused driver: forward solve, misfit, adjoint combination and gradient.
pub fn objective_and_gradient(
    speed: &SoundSpeedField,
    observed: &MeasurementMatrix,
    array: &TransducerArray,
    cfg: &SolverConfig,
    options: &GradientOptions,
    warm_start: Option<&[Wavefield]>,
) -> Result<Evaluation> {
    if observed.receivers != array.len() || observed.sources != array.len() {
        return Err(Error::DimensionMismatch(format!(
            "observed {}x{} does not match {} transducers",
            observed.receivers,
            observed.sources,
            array.len()
        )));
    }
    let (predicted, batch) = simulate(speed, array, cfg, warm_start)?;
    let obj = objective(&predicted, observed)?;
    let fields: Vec<ComplexField> = batch.fields[0].iter().map(|w| w.interior.clone()).collect();
    let grad = gradient(speed, &fields, &obj.residual, cfg.omega, options)?;
    Ok(Evaluation { objective: obj, gradient: grad, predicted, batch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;

    fn mat(vals: Vec<Complex64>, n: usize) -> MeasurementMatrix {
        MeasurementMatrix::new(n, n, vals, 1.0).unwrap()
    }

    #[test]
    fn objective_cases() {
        let a = mat(vec![Complex64::new(3.0, 4.0)], 1);
        let z = mat(vec![Complex64::new(0.0, 0.0)], 1);
        assert_eq!(objective(&a, &z).unwrap().value, 25.0);
        let same = objective(&a, &a).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(same.residual.values.iter().all(|r| r.norm() == 0.0));

        let vals = |s: f64| (0..64).map(|k| Complex64::new((k as f64 * s).sin(), (k as f64 * 0.7 * s).cos())).collect();
        let p = mat(vals(0.3), 8);
        let o = mat(vals(0.5), 8);
        let mut brute = 0.0;
        for m in 0..8 {
            for n in 0..8 {
                let d = p.get(m, n) - o.get(m, n);
                brute += d.re * d.re + d.im * d.im;
            }
        }
        assert!((objective(&p, &o).unwrap().value - brute).abs() <= 1e-12 * brute);
        assert!(matches!(objective(&p, &a), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn adjoint_single_term_and_zero() {
        let g = Grid2D::new(4, 4, 1.0, (0.0, 0.0)).unwrap();
        let y = ComplexField::from_fn(g, |(x, y)| Complex64::new(x, y + 1.0));
        let r = Complex64::new(0.5, -2.0);
        let lam = adjoint_fields(std::slice::from_ref(&y), &mat(vec![r], 1)).unwrap();
        for (l, v) in lam[0].values().iter().zip(y.values()) {
            assert_eq!(*l, -r.conj() * v);
        }
        let zero = adjoint_fields(&[y.clone(), y.clone()], &mat(vec![Complex64::new(0.0, 0.0); 4], 2)).unwrap();
        assert!(zero.iter().all(|f| f.values().iter().all(|v| *v == ZERO)));
        assert!(matches!(adjoint_fields(&[y], &mat(vec![r; 4], 2)), Err(Error::MissingWavefield(_))));
    }

    #[test]
    fn zero_residual_gives_exactly_zero_gradient() {
        let g = Grid2D::new(5, 5, 1.0, (0.0, 0.0)).unwrap();
        let s = SoundSpeedField::homogeneous(g, 1500.0).unwrap();
        let y: Vec<ComplexField> = (0..3).map(|k| ComplexField::constant(g, Complex64::new(k as f64, 1.0))).collect();
        let grad = gradient(&s, &y, &mat(vec![Complex64::new(0.0, 0.0); 9], 3), 1e6, &GradientOptions::default()).unwrap();
        assert!(grad.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn residual_scaling_is_linear_in_gradient() {
        let g = Grid2D::new(5, 5, 1.0, (0.0, 0.0)).unwrap();
        let s = SoundSpeedField::new(RealField::from_fn(g, |(x, y)| 1500.0 + x - y)).unwrap();
        let y: Vec<ComplexField> =
            (0..2).map(|k| ComplexField::from_fn(g, |(x, y)| Complex64::new(x * k as f64 + 1.0, y - k as f64))).collect();
        let r = mat(vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.1), Complex64::new(0.3, 0.3), Complex64::new(2.0, -1.0)], 2);
        let mut r3 = r.clone();
        r3.values.iter_mut().for_each(|v| *v *= 3.0);
        let opts = GradientOptions::default();
        let g1 = gradient(&s, &y, &r, 1e6, &opts).unwrap();
        let g3 = gradient(&s, &y, &r3, 1e6, &opts).unwrap();
        let scale = g3.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in g1.values().iter().zip(g3.values()) {
            assert!((3.0 * a - b).abs() <= 1e-12 * scale);
        }
    }
}
