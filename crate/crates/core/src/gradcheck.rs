//! Central-difference verification of the analytic gradients.
//!
//! The relative error at a coordinate is
//! `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`; checks report
//! the maximum over the coordinates examined.
//!
//! Numeric derivatives use the fourth-order central stencil
//! `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`, whose truncation error
//! stays negligible at steps large enough to keep rounding error far below
//! the tolerance even for tiny gradients.
//!
//! ReLU makes the network piecewise smooth, and the smoothed L1 loss is
//! nearly kinked at zero residual. A stencil straddling a kink measures a
//! blend of two slopes, so every stencil point must reproduce the kink
//! pattern ([`Graph::kink_pattern`]) of the unperturbed point. Otherwise the
//! step is shrunk tenfold, up to [`MAX_SHRINKS`] times, and a coordinate
//! that still straddles a kink is reported as skipped.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-3;
pub const RELATIVE_FLOOR: f64 = 1e-8;
pub const MAX_SHRINKS: usize = 3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// A coordinate of one of the checked inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coord {
    pub input: usize,
    pub index: usize,
}

/// Outcome of a gradient check.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate with the largest error, with its analytic and numeric
    /// derivatives.
    pub worst: Option<(Coord, f64, f64)>,
    pub checked: usize,
    /// Coordinates whose every stencil crossed a kink.
    pub skipped: Vec<Coord>,
}

fn evaluate<F>(build: &F, inputs: &[Tensor]) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let root = build(&mut g, &ids)?;
    let v = g.value(root);
    if v.len() != 1 {
        return Err(Error::Graph(format!(
            "gradient check needs a scalar loss, got shape {}",
            v.shape()
        )));
    }
    Ok((v.data()[0], g.kink_pattern()))
}

/// Compare analytic and central-difference gradients of the scalar built by
/// `build` at the given coordinates (all coordinates when `coords` is
/// `None`). Returns the maximum relative error.
pub fn grad_check_inputs<F>(
    build: F,
    inputs: &[Tensor],
    eps: f64,
    coords: Option<&[Coord]>,
) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    grad_check_report(build, inputs, eps, coords).map(|r| r.max_relative_error)
}

/// [`grad_check_inputs`] with details about the worst and skipped
/// coordinates.
pub fn grad_check_report<F>(
    build: F,
    inputs: &[Tensor],
    eps: f64,
    coords: Option<&[Coord]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &ids)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| g.grad(id).map(<[f64]>::to_vec))
        .collect::<Result<_>>()?;
    let base_pattern = g.kink_pattern();
    drop(g);

    let all: Vec<Coord>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(input, t)| (0..t.len()).map(move |index| Coord { input, index }))
                .collect();
            &all
        }
    };

    let mut perturbed = inputs.to_vec();
    let mut report = GradCheckReport::default();
    for &coord in coords {
        let Coord { input, index } = coord;
        let orig = inputs[input].data()[index];
        let mut at = |offset: f64| -> Result<(f64, Vec<bool>)> {
            perturbed[input].data_mut()[index] = orig + offset;
            let out = evaluate(&build, &perturbed);
            perturbed[input].data_mut()[index] = orig;
            out
        };
        let mut numeric = None;
        let mut h = eps;
        for _ in 0..=MAX_SHRINKS {
            let mut values = [0.0; 4];
            let mut smooth = true;
            for (v, k) in values.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
                let (f, pattern) = at(k * h)?;
                *v = f;
                smooth &= pattern == base_pattern;
            }
            if smooth {
                let [p2, p1, m1, m2] = values;
                numeric = Some((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h));
                break;
            }
            h /= 10.0;
        }
        let Some(numeric) = numeric else {
            report.skipped.push(coord);
            continue;
        };
        let analytic = analytic[input][index];
        let err = relative_error(analytic, numeric);
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((coord, analytic, numeric));
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Single-input form: maximum relative error over every coordinate of
/// `input`.
pub fn grad_check<F>(build: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    grad_check_inputs(|g, ids| build(g, ids[0]), std::slice::from_ref(input), eps, None)
}
