//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward function under test, so it is
//! independent of every backward implementation it validates. Objectives are
//! accumulated in `f64`; the forward pass itself stays in `f32`.
//!
//! Whole graphs are checked with their ReLU regions and pooling winners
//! frozen at the unperturbed point (see [`Graph::forward_with_pattern`]), and
//! with a least-squares derivative that averages many symmetric differences
//! to get under the rounding noise of a 32-bit forward pass.
//!
//! Relative error of an entry is `|a - n| / max(|a|, |n|, SCALE_FLOOR * s)`
//! where `s` is the largest gradient magnitude in the checked set. The floor
//! keeps entries that are analytically zero (or nearly so) from dividing
//! `f32` rounding noise by zero.

use crate::nn::{block_graph, BlockFamily, BlockSpec, ForwardCtx, Graph, Layer};
use crate::tensor::{
    BatchNormState, ConvParams, DepthwiseParams, Padding, ReluCap, RngStream, Shape4, Tensor4,
    UpConvParams,
};

pub const TOLERANCE: f64 = 1e-3;

/// Step for piecewise-linear maps, where the central difference is exact
/// away from kinks and a large step suppresses rounding noise.
pub const LINEAR_STEP: f32 = 1e-1;

/// Step for a plain central difference of a smooth nonlinear map.
pub const SMOOTH_STEP: f32 = 1e-2;

/// Largest step of the least-squares derivative on smooth single layers.
/// The odd fit absorbs the truncation error, so a large step mainly buys
/// distance from rounding noise.
pub const FIT_STEP: f32 = 2e-1;

/// Largest step of the least-squares derivative used on whole blocks.
pub const BLOCK_STEP: f32 = 2e-1;

pub const SCALE_FLOOR: f64 = 1e-2;

/// Disagreement between the numeric estimates at two step sizes beyond
/// which a point counts as ill-conditioned rather than checked.
pub const ILL_CONDITIONED: f64 = 1e-2;

/// Largest fraction of entries that may be skipped because the perturbation
/// crossed a non-differentiable point or the point is ill-conditioned.
pub const MAX_SKIP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// `(index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        let total = self.checked + self.skipped;
        self.checked > 0
            && self.max_rel_error < tolerance
            && (self.skipped as f64) <= MAX_SKIP_FRACTION * total as f64
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Random `[-1, 1)` weights turning a tensor-valued map into a scalar.
pub fn projection(shape: Shape4, seed: u64) -> Tensor4 {
    Tensor4::random_uniform(shape, &mut RngStream::new(seed))
}

/// Central differences of `objective` at the listed entries of `values`.
/// `None` from the objective marks a non-differentiable crossing.
pub fn numeric_gradient(
    values: &[f32],
    indices: &[usize],
    step: f32,
    mut objective: impl FnMut(&[f32]) -> Option<f64>,
) -> Vec<Option<f64>> {
    let mut buf = values.to_vec();
    indices
        .iter()
        .map(|&i| {
            let x = values[i];
            let (hi, lo) = (x + step, x - step);
            buf[i] = hi;
            let f_hi = objective(&buf);
            buf[i] = lo;
            let f_lo = objective(&buf);
            buf[i] = x;
            Some((f_hi? - f_lo?) / (hi as f64 - lo as f64))
        })
        .collect()
}

/// Least-squares numeric derivative with an adaptive step.
///
/// For one step `h`, symmetric differences `(f(x + t) - f(x - t)) / 2` at
/// `SAMPLES` offsets evenly spaced over `(0, h]` are fitted by an odd
/// quintic `g t + c3 t^3 + c5 t^5` and `g` is the estimate. Fitting many
/// offsets averages out the rounding noise of a 32-bit forward pass; the
/// higher terms absorb truncation error.
///
/// The fit is repeated at `step / 2`, the two are combined by Richardson
/// extrapolation, and their difference doubles as a conditioning probe. If the two
/// estimates differ by more than [`ILL_CONDITIONED`] (relative, floored at
/// `SCALE_FLOOR * scale`) the function is not locally smooth on the scale
/// of the step, typically a batch norm over a nearly constant channel, and
/// the entry is reported as `None` like a kink crossing.
pub fn numeric_gradient_fit(
    values: &[f32],
    indices: &[usize],
    step: f32,
    scale: f64,
    mut objective: impl FnMut(&[f32]) -> Option<f64>,
) -> Vec<Option<f64>> {
    let mut buf = values.to_vec();
    indices
        .iter()
        .map(|&i| {
            let coarse = odd_fit(&mut buf, i, step, &mut objective)?;
            let fine = odd_fit(&mut buf, i, step / 2.0, &mut objective)?;
            let denom = coarse.abs().max(fine.abs()).max(SCALE_FLOOR * scale);
            let rel = if denom == 0.0 { 0.0 } else { (coarse - fine).abs() / denom };
            // The fit leaves an O(h^6) error; extrapolate it away.
            (rel <= ILL_CONDITIONED).then_some((64.0 * fine - coarse) / 63.0)
        })
        .collect()
}

fn odd_fit(
    buf: &mut [f32],
    i: usize,
    step: f32,
    objective: &mut impl FnMut(&[f32]) -> Option<f64>,
) -> Option<f64> {
    const SAMPLES: usize = 8;
    let x = buf[i];
    // Normal equations of the 3-term odd fit, in units of `step`.
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for k in 1..=SAMPLES {
        let t = step * k as f32 / SAMPLES as f32;
        let (hi, lo) = (x + t, x - t);
        buf[i] = hi;
        let f_hi = objective(buf);
        buf[i] = lo;
        let f_lo = objective(buf);
        buf[i] = x;
        let d = (f_hi? - f_lo?) / 2.0;
        let t = (hi as f64 - lo as f64) / 2.0 / step as f64;
        let row = [t, t.powi(3), t.powi(5)];
        for r in 0..3 {
            atb[r] += row[r] * d;
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
        }
    }
    Some(solve3(ata, atb)[0] / step as f64)
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap_or(col);
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (dst, src) in a[row].iter_mut().zip(pivot_row).skip(col) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub fn compare(analytic: &[f32], indices: &[usize], numeric: &[Option<f64>]) -> GradCheckReport {
    compare_with_scale(analytic, indices, numeric, 0.0)
}

/// Like [`compare`], with the floor scale raised to at least `scale`, the
/// largest gradient magnitude of the surrounding computation.
pub fn compare_with_scale(
    analytic: &[f32],
    indices: &[usize],
    numeric: &[Option<f64>],
    scale: f64,
) -> GradCheckReport {
    let scale = indices
        .iter()
        .zip(numeric)
        .filter_map(|(&i, n)| n.map(|n| n.abs().max(analytic[i].abs() as f64)))
        .fold(scale, f64::max);
    let floor = SCALE_FLOOR * scale;

    let mut report = GradCheckReport::default();
    for (&i, n) in indices.iter().zip(numeric) {
        let Some(n) = *n else {
            report.skipped += 1;
            continue;
        };
        let a = analytic[i] as f64;
        let denom = a.abs().max(n.abs()).max(floor);
        let err = if denom == 0.0 { 0.0 } else { (a - n).abs() / denom };
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((i, a, n));
        }
    }
    report
}

pub fn check_entries(
    values: &[f32],
    analytic: &[f32],
    indices: &[usize],
    step: f32,
    objective: impl FnMut(&[f32]) -> Option<f64>,
) -> GradCheckReport {
    assert_eq!(values.len(), analytic.len(), "gradient length");
    let numeric = numeric_gradient(values, indices, step, objective);
    compare(analytic, indices, &numeric)
}

pub fn check_slice_gradient(
    values: &[f32],
    analytic: &[f32],
    step: f32,
    objective: impl FnMut(&[f32]) -> Option<f64>,
) -> GradCheckReport {
    let all: Vec<usize> = (0..values.len()).collect();
    check_entries(values, analytic, &all, step, objective)
}

pub fn check_input_gradient(
    input: &Tensor4,
    analytic: &[f32],
    step: f32,
    mut objective: impl FnMut(&Tensor4) -> Option<f64>,
) -> GradCheckReport {
    let shape = input.shape();
    check_slice_gradient(input.data(), analytic, step, |v| {
        let t = Tensor4::from_vec(shape, v.to_vec()).expect("same shape");
        objective(&t)
    })
}

/// Up to `max` entry indices spread evenly over `0..len`.
pub fn spread_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max).map(|i| i * len / max).collect()
}

/// Checks a whole graph: the gradient of `<output, projection>` with
/// respect to the input and to up to `per_array` entries of every parameter
/// array, with the forward pass run in train mode under `ctx`.
///
/// Perturbed passes replay the ReLU regions and pooling winners of the
/// unperturbed pass, so the numeric side differentiates the same linear
/// piece the analytic gradient describes even when a step would cross a
/// kink. Derivatives come from a least-squares fit over several steps.
pub fn check_graph(
    graph: &mut Graph,
    input: &Tensor4,
    ctx: &ForwardCtx,
    step: f32,
    per_array: usize,
) -> crate::Result<GradCheckReport> {
    let out = graph.last();
    let acts = graph.forward(input, ctx)?;
    let proj = projection(acts.output(out).shape(), ctx.seed ^ 0x5eed);
    let pattern = graph.activation_pattern(&acts);
    let grads = graph.backward(&acts, vec![(out, proj.clone())])?;
    drop(acts);

    let objective = |g: &Graph, x: &Tensor4| -> Option<f64> {
        let acts = g.forward_with_pattern(x, ctx, &pattern).ok()?;
        acts.output(out).dot(&proj).ok()
    };

    let input_grad = grads.input.clone().unwrap_or_else(|| Tensor4::zeros(input.shape()));
    let scale = grads
        .params
        .iter()
        .flatten()
        .chain(input_grad.data())
        .fold(0.0f64, |m, &v| m.max(v.abs() as f64));
    let shape = input.shape();
    let idx = spread_indices(shape.len(), per_array.max(1) * 4);
    let numeric = numeric_gradient_fit(input.data(), &idx, step, scale, |v| {
        objective(graph, &Tensor4::from_vec(shape, v.to_vec()).expect("same shape"))
    });
    let mut report = compare_with_scale(input_grad.data(), &idx, &numeric, scale);

    for (slot, analytic) in grads.params.iter().enumerate() {
        let values = graph.params()[slot].to_vec();
        let idx = spread_indices(values.len(), per_array);
        let numeric = numeric_gradient_fit(&values, &idx, step, scale, |v| {
            graph.params_mut()[slot].copy_from_slice(v);
            objective(graph, input)
        });
        graph.params_mut()[slot].copy_from_slice(&values);
        report.merge(&compare_with_scale(analytic, &idx, &numeric, scale));
    }
    Ok(report)
}

/// One named gradient check.
#[derive(Debug, Clone)]
pub struct NamedReport {
    pub name: String,
    pub report: GradCheckReport,
}

fn single_layer(channels: usize, layer: Layer, with_reference: bool) -> Graph {
    let mut g = Graph::new(channels);
    let inputs: &[usize] = if with_reference { &[0, 0] } else { &[0] };
    g.push("op", layer, inputs).expect("valid single-layer graph");
    g.initialize(7);
    g
}

fn run_case(
    name: &str,
    mut g: Graph,
    shape: Shape4,
    ctx: ForwardCtx,
    step: f32,
    seed: u64,
) -> crate::Result<NamedReport> {
    let x = Tensor4::random_uniform(shape, &mut RngStream::new(seed));
    let report = check_graph(&mut g, &x, &ctx, step, 24)?;
    Ok(NamedReport { name: name.to_string(), report })
}

/// Finite-difference checks of every primitive layer, run through
/// single-node graphs on random tensors with extents of at most 6.
pub fn op_suite(seed: u64) -> crate::Result<Vec<NamedReport>> {
    let train = ForwardCtx::train(seed, 1.0);
    let infer = ForwardCtx { mode: crate::tensor::Mode::Infer, ..train };
    let s = |n, c, h, w| Shape4::new(n, c, h, w);
    let mut bn_shifted = BatchNormState::new(3);
    bn_shifted.running_mean = vec![0.1, -0.2, 0.3];
    bn_shifted.running_var = vec![0.5, 1.5, 2.0];
    let mut out = Vec::new();
    let cases: Vec<(&str, Layer, Shape4, ForwardCtx, f32)> = vec![
        ("conv3x3", Layer::Conv(ConvParams::zeros(2, 3, 3, 1, 1)), s(1, 2, 5, 5), train, LINEAR_STEP),
        ("conv3x3_stride2", Layer::Conv(ConvParams::zeros(2, 2, 3, 2, 1)), s(2, 2, 5, 5), train, LINEAR_STEP),
        ("conv1x1", Layer::Conv(ConvParams::zeros(3, 2, 1, 1, 0)), s(2, 3, 4, 4), train, LINEAR_STEP),
        ("depthwise3x3", Layer::Depthwise(DepthwiseParams::zeros(3, 3, 1, 1)), s(2, 3, 5, 5), train, LINEAR_STEP),
        ("depthwise5x5_stride2", Layer::Depthwise(DepthwiseParams::zeros(2, 5, 2, 2)), s(1, 2, 5, 5), train, LINEAR_STEP),
        ("upconv2x", Layer::UpConv(UpConvParams::zeros(3, 2)), s(2, 3, 3, 3), train, LINEAR_STEP),
        ("batchnorm_train", Layer::BatchNorm(BatchNormState::new(3)), s(2, 3, 4, 4), train, FIT_STEP),
        ("batchnorm_infer", Layer::BatchNorm(bn_shifted), s(2, 3, 4, 4), infer, LINEAR_STEP),
        ("relu", Layer::Relu(ReluCap::None), s(2, 2, 4, 4), train, FIT_STEP),
        ("relu6", Layer::Relu(ReluCap::Six), s(2, 2, 4, 4), train, FIT_STEP),
        ("maxpool2x2", Layer::MaxPool, s(2, 2, 6, 6), train, FIT_STEP),
        ("softmax", Layer::Softmax, s(2, 3, 4, 4), train, FIT_STEP),
        ("spatial_dropout", Layer::SpatialDropout { rate: 0.5 }, s(2, 6, 3, 3), train, LINEAR_STEP),
        ("drop_path", Layer::DropPath { rate_final: 0.5 }, s(6, 2, 3, 3), train, LINEAR_STEP),
        ("pad", Layer::Pad(Padding { top: 1, bottom: 2, left: 0, right: 1 }), s(1, 2, 4, 3), train, LINEAR_STEP),
        ("pad_to_even", Layer::PadToEven, s(1, 2, 5, 3), train, LINEAR_STEP),
        ("concat", Layer::Concat, s(2, 2, 3, 3), train, LINEAR_STEP),
        ("add", Layer::Add, s(2, 2, 3, 3), train, LINEAR_STEP),
    ];
    for (i, (name, layer, shape, ctx, step)) in cases.into_iter().enumerate() {
        let two = matches!(layer, Layer::Concat | Layer::Add);
        let g = single_layer(shape.c, layer, two);
        out.push(run_case(name, g, shape, ctx, step, seed.wrapping_add(i as u64))?);
    }

    // Crop needs a smaller reference tensor.
    let mut g = Graph::new(2);
    let small = g.push("ref", Layer::Pad(Padding::default()), &[0])?;
    let pool = g.push("down", Layer::Conv(ConvParams::zeros(2, 2, 3, 1, 0)), &[small])?;
    g.push("crop", Layer::CropTo, &[0, pool])?;
    g.initialize(7);
    out.push(run_case("crop", g, s(1, 2, 6, 5), train, LINEAR_STEP, seed ^ 0xc0)?);
    Ok(out)
}

/// Specs exercised by [`block_suite`], at both strides where allowed.
pub fn suite_blocks() -> Vec<(String, BlockSpec)> {
    let mut out = Vec::new();
    for family in BlockFamily::ALL {
        for stride in [1, 2] {
            let mut spec = match family {
                BlockFamily::Dense => BlockSpec::dense(3, 2, 3, stride),
                BlockFamily::NasnetNormal if stride == 2 => continue,
                BlockFamily::NasnetReduction if stride == 1 => continue,
                _ => BlockSpec::new(family, 3, 4, stride).with_projection(true),
            };
            spec.expansion = 2;
            spec.drop_path_rate = 0.3;
            out.push((format!("{family:?}_stride{stride}"), spec));
        }
    }
    out.push(("Residual_identity".into(), BlockSpec::new(BlockFamily::Residual, 3, 3, 1)));
    out.push(("InvertedResidual_shortcut".into(), {
        let mut s = BlockSpec::new(BlockFamily::InvertedResidual, 3, 3, 1);
        s.expansion = 2;
        s
    }));
    out
}

/// Finite-difference checks of every block family on `(2, 3, 6, 6)`
/// inputs.
pub fn block_suite(seed: u64) -> crate::Result<Vec<NamedReport>> {
    let ctx = ForwardCtx::train(seed, 0.5);
    suite_blocks()
        .into_iter()
        .enumerate()
        .map(|(i, (name, spec))| {
            let g = block_graph(&spec, seed.wrapping_add(i as u64))?;
            run_case(&name, g, Shape4::new(2, 3, 6, 6), ctx, BLOCK_STEP, seed.wrapping_add(100 + i as u64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_quadratic() {
        let x = [1.0f32, -2.0, 0.5];
        let analytic: Vec<f32> = x.iter().map(|v| 2.0 * v).collect();
        let r = check_slice_gradient(&x, &analytic, SMOOTH_STEP, |v| {
            Some(v.iter().map(|&a| (a as f64).powi(2)).sum())
        });
        assert!(r.passes(TOLERANCE), "{r:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = [1.0f32, 2.0];
        let r = check_slice_gradient(&x, &[2.0, 3.0], SMOOTH_STEP, |v| {
            Some(v.iter().map(|&a| (a as f64).powi(2)).sum())
        });
        assert!(!r.passes(TOLERANCE));
        assert_eq!(r.worst.unwrap().0, 1);
    }

    #[test]
    fn skips_count_against_pass() {
        let x = [1.0f32; 4];
        let r = check_slice_gradient(&x, &[1.0; 4], SMOOTH_STEP, |v| {
            (v[0] == 1.0).then(|| v.iter().map(|&a| a as f64).sum())
        });
        assert_eq!(r.skipped, 1);
        assert!(!r.passes(TOLERANCE));
    }
}
