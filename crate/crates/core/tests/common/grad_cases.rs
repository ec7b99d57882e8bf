// Finite-difference gradient cases shared by the core gradient tests and the
// acceptance suite. Every case draws `instances` random small problems in
// binary64 and returns the worst normwise relative error.

use depthcl_core::continual::{stc_loss, CropConfig};
use depthcl_core::geometry::CameraIntrinsics;
use depthcl_core::losses::{self, DepthLossInputs, LossConfig};
use depthcl_core::tensor::gradcheck;
use depthcl_core::tensor::{BinaryKind, Tape, Tensor, UnaryKind, Var};
use depthcl_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

pub struct Case {
    pub name: &'static str,
    pub run: fn(&mut ChaCha8Rng) -> Result<f64>,
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Reduces `out` to a scalar with fixed random weights.
fn weighted(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(tape.shape(out), |_| rng.random_range(-1.0..1.0));
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn check(inputs: &[Tensor<f64>], wrt: &[bool], f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Result<f64> {
    Ok(gradcheck::check(inputs, wrt, FD_STEP, f)?.max_rel_err())
}

/// Uniform draw in `[lo, hi)` at least `margin` away from every kink.
fn away_from(rng: &mut ChaCha8Rng, lo: f64, hi: f64, kinks: &[f64], margin: f64) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > margin) {
            return v;
        }
    }
}

/// Coordinate in `[lo, hi)` keeping clear of the integer lattice.
fn off_lattice(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let v: f64 = rng.random_range(lo..hi);
        if (v - v.round()).abs() > 1e-3 {
            return v;
        }
    }
}

fn binary(rng: &mut ChaCha8Rng, kind: BinaryKind) -> Result<f64> {
    let broadcast = rng.random_bool(0.5);
    // distinct value bands keep min/max away from ties
    let a = rand_t(rng, &[2, 3, 4], 0.5, 2.0);
    let b = if broadcast {
        Tensor::from_fn(&[3, 1], |_| away_from(rng, 0.5, 2.0, a.data(), 1e-3))
    } else {
        Tensor::from_fn(&[2, 3, 4], |_| rng.random_range(0.5..2.0))
    };
    if !broadcast && a.data().iter().zip(b.data()).any(|(x, y)| (x - y).abs() < 1e-3) {
        return binary(rng, kind);
    }
    let seed = rng.random();
    check(&[a, b], &[true, true], |t, v| {
        let o = t.binary(v[0], v[1], kind)?;
        weighted(t, o, seed)
    })
}

fn unary(rng: &mut ChaCha8Rng, kind: UnaryKind, lo: f64, hi: f64) -> Result<f64> {
    let kinks: &[f64] = match kind {
        UnaryKind::Relu | UnaryKind::Abs | UnaryKind::Elu => &[0.0],
        UnaryKind::Clamp { .. } => &[0.1, 1.0],
        _ => &[],
    };
    let a = Tensor::from_fn(&[3, 5], |_| away_from(rng, lo, hi, kinks, 1e-3));
    let seed = rng.random();
    check(&[a], &[true], |t, v| {
        let o = t.unary(v[0], kind)?;
        weighted(t, o, seed)
    })
}

fn k_rows(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor<f64> {
    let mut d = Vec::new();
    for _ in 0..n {
        d.extend_from_slice(&[
            rng.random_range(0.8..1.2) * w as f64,
            rng.random_range(0.8..1.2) * h as f64,
            rng.random_range(0.4..0.6) * w as f64,
            rng.random_range(0.4..0.6) * h as f64,
        ]);
    }
    Tensor::new(&[n, 4], d).unwrap()
}

fn smooth_image(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
    let f: Vec<(f64, f64, f64)> = (0..n * c)
        .map(|_| (rng.random_range(0.3..1.2), rng.random_range(0.3..1.2), rng.random_range(0.0..6.0)))
        .collect();
    Tensor::from_fn(&[n, c, h, w], |i| {
        let plane = i / (h * w);
        let (y, x) = ((i % (h * w)) / w, i % w);
        let (fx, fy, ph) = f[plane];
        0.5 + 0.4 * (fx * x as f64 + ph).sin() * (fy * y as f64 + 0.5 * ph).cos()
    })
}

pub fn cases() -> Vec<Case> {
    vec![
        Case { name: "add", run: |r| binary(r, BinaryKind::Add) },
        Case { name: "sub", run: |r| binary(r, BinaryKind::Sub) },
        Case { name: "mul", run: |r| binary(r, BinaryKind::Mul) },
        Case { name: "div", run: |r| binary(r, BinaryKind::Div) },
        Case { name: "min", run: |r| binary(r, BinaryKind::Min) },
        Case { name: "max", run: |r| binary(r, BinaryKind::Max) },
        Case { name: "sigmoid", run: |r| unary(r, UnaryKind::Sigmoid, -3.0, 3.0) },
        Case { name: "relu", run: |r| unary(r, UnaryKind::Relu, -2.0, 2.0) },
        Case { name: "elu", run: |r| unary(r, UnaryKind::Elu, -2.0, 2.0) },
        Case { name: "exp", run: |r| unary(r, UnaryKind::Exp, -2.0, 2.0) },
        Case { name: "abs", run: |r| unary(r, UnaryKind::Abs, -2.0, 2.0) },
        Case { name: "clamp", run: |r| unary(r, UnaryKind::Clamp { lo: 0.1, hi: 1.0 }, -0.5, 1.5) },
        Case { name: "softplus", run: |r| unary(r, UnaryKind::Softplus, -3.0, 3.0) },
        Case { name: "recip", run: |r| unary(r, UnaryKind::Recip, 0.5, 2.0) },
        Case { name: "sqrt", run: |r| unary(r, UnaryKind::Sqrt, 0.5, 2.0) },
        Case {
            name: "conv2d",
            run: |rng| {
                let stride = rng.random_range(1..=2);
                let pad = rng.random_range(0..=1);
                let x = rand_t(rng, &[2, 2, 5, 6], -1.0, 1.0);
                let k = rand_t(rng, &[3, 2, 3, 3], -1.0, 1.0);
                let b = rand_t(rng, &[3], -1.0, 1.0);
                let seed = rng.random();
                check(&[x, k, b], &[true, true, true], |t, v| {
                    let o = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                    weighted(t, o, seed)
                })
            },
        },
        Case {
            name: "bilinear_resize",
            run: |rng| {
                let (oh, ow) = (rng.random_range(2..9), rng.random_range(2..9));
                let x = rand_t(rng, &[2, 2, 3, 4], -1.0, 1.0);
                let seed = rng.random();
                check(&[x], &[true], |t, v| {
                    let o = t.bilinear_resize(v[0], oh, ow)?;
                    weighted(t, o, seed)
                })
            },
        },
        Case {
            name: "grid_sample",
            run: |rng| {
                let x = rand_t(rng, &[2, 3, 4, 5], -1.0, 1.0);
                // includes out-of-range coordinates exercising the border clamp
                let g = Tensor::from_fn(&[2, 3, 3, 2], |i| {
                    if i % 2 == 0 {
                        off_lattice(rng, -1.0, 5.0)
                    } else {
                        off_lattice(rng, -1.0, 4.0)
                    }
                });
                let seed = rng.random();
                check(&[x, g], &[true, true], |t, v| {
                    let o = t.grid_sample(v[0], v[1])?;
                    weighted(t, o, seed)
                })
            },
        },
        Case {
            name: "grid_sample_mean",
            run: |rng| {
                let x = rand_t(rng, &[1, 1, 4, 4], 0.0, 1.0);
                let g = Tensor::from_fn(&[1, 4, 4, 2], |_| off_lattice(rng, 0.2, 2.8));
                check(&[x, g], &[true, true], |t, v| {
                    let o = t.grid_sample(v[0], v[1])?;
                    Ok(t.mean(o))
                })
            },
        },
        Case {
            name: "reduce",
            run: |rng| {
                let x = Tensor::from_fn(&[3, 4, 2], |i| i as f64 * 0.1 + rng.random_range(0.0..0.05));
                let seed = rng.random();
                check(&[x], &[true], |t, v| {
                    let a = t.min_axis(v[0], 1)?;
                    let b = t.mean_axis(v[0], 2)?;
                    let c = t.sum_axis(v[0], 0)?;
                    let (a, b, c) = (weighted(t, a, seed)?, weighted(t, b, seed + 1)?, weighted(t, c, seed + 2)?);
                    let m = t.mean(v[0]);
                    let s = t.add(a, b)?;
                    let s = t.add(s, c)?;
                    t.add(s, m)
                })
            },
        },
        Case {
            name: "layout",
            run: |rng| {
                let x = rand_t(rng, &[2, 3, 4], -1.0, 1.0);
                let y = rand_t(rng, &[2, 2, 4], -1.0, 1.0);
                let seed = rng.random();
                check(&[x, y], &[true, true], |t, v| {
                    let c = t.concat(&[v[0], v[1]], 1)?;
                    let n = t.narrow(c, 1, 1, 3)?;
                    let r = t.reshape(n, &[6, 4])?;
                    weighted(t, r, seed)
                })
            },
        },
        Case {
            name: "axis_angle_to_rotation",
            run: |rng| {
                // mix of small and large angles
                let scale = if rng.random_bool(0.3) { 1e-3 } else { 1.0 };
                let v = rand_t(rng, &[3, 3], -scale, scale);
                let seed = rng.random();
                check(&[v], &[true], |t, v| {
                    let o = t.axis_angle_to_rotation(v[0])?;
                    weighted(t, o, seed)
                })
            },
        },
        Case {
            name: "project_pixels",
            run: |rng| {
                let (h, w) = (4, 5);
                let d = rand_t(rng, &[2, 1, h, w], 1.0, 4.0);
                let aa = rand_t(rng, &[2, 3], -0.1, 0.1);
                let tr = rand_t(rng, &[2, 3], -0.3, 0.3);
                let k = k_rows(rng, 2, h, w);
                let seed = rng.random();
                check(&[d, aa, tr, k], &[true; 4], |t, v| {
                    let r = t.axis_angle_to_rotation(v[1])?;
                    let g = t.project_pixels(v[0], r, v[2], v[3])?;
                    weighted(t, g, seed)
                })
            },
        },
        Case {
            name: "view_synthesis",
            run: |rng| {
                let (h, w) = (6, 7);
                let src = smooth_image(rng, 2, 3, h, w);
                let d = rand_t(rng, &[2, 1, h, w], 2.0, 4.0);
                let aa = rand_t(rng, &[2, 3], -0.02, 0.02);
                let tr = rand_t(rng, &[2, 3], -0.2, 0.2);
                let k = k_rows(rng, 2, h, w);
                let seed = rng.random();
                check(&[src, d, aa, tr, k], &[true; 5], |t, v| {
                    let o = t.view_synthesis(v[0], v[1], v[2], v[3], v[4])?;
                    weighted(t, o, seed)
                })
            },
        },
        Case {
            name: "disp_to_depth",
            run: |rng| {
                let s = rand_t(rng, &[2, 1, 3, 3], 0.05, 0.95);
                let seed = rng.random();
                check(&[s], &[true], |t, v| {
                    let d = losses::disp_to_depth_batch(t, v[0], &[(0.1, 20.0), (0.1, 80.0)])?;
                    weighted(t, d, seed)
                })
            },
        },
        Case {
            name: "photometric_map",
            run: |rng| {
                let a = rand_t(rng, &[2, 3, 5, 6], 0.0, 1.0);
                let b = rand_t(rng, &[2, 3, 5, 6], 0.0, 1.0);
                let seed = rng.random();
                let cfg = LossConfig::default();
                check(&[a, b], &[true, true], move |t, v| {
                    let o = t.photometric_map(v[0], v[1], &cfg)?;
                    weighted(t, o, seed)
                })
            },
        },
        Case {
            name: "smoothness_map",
            run: |rng| {
                let d = rand_t(rng, &[2, 1, 4, 5], 0.1, 1.0);
                let i = rand_t(rng, &[2, 3, 4, 5], 0.0, 1.0);
                let seed = rng.random();
                check(&[d, i], &[true, false], |t, v| {
                    let o = t.smoothness_map(v[0], v[1])?;
                    weighted(t, o, seed)
                })
            },
        },
        Case { name: "depth_task_loss", run: depth_loss_case },
        Case { name: "stc_loss", run: stc_case },
    ]
}

/// Two scales × two sources of context and working syntheses; gradients flow
/// into the working side only. The crop stream is re-seeded on every
/// evaluation so all perturbations see the same crops.
fn stc_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = [2, 3, 6, 8];
    let ctx: Vec<Tensor<f64>> = (0..4).map(|_| rand_t(rng, &shape, 0.0, 1.0)).collect();
    let wm: Vec<Tensor<f64>> = (0..4)
        .map(|k| Tensor::from_fn(&shape, |i| away_from(rng, 0.0, 1.0, &[ctx[k].data()[i]], 1e-4)))
        .collect();
    let crop_seed = rng.random();
    let inputs: Vec<Tensor<f64>> = ctx.into_iter().chain(wm).collect();
    let wrt: Vec<bool> = (0..8).map(|i| i >= 4).collect();
    let cfg = LossConfig::default();
    check(&inputs, &wrt, move |t, v| {
        let c = vec![vec![v[0], v[1]], vec![v[2], v[3]]];
        let w = vec![vec![v[4], v[5]], vec![v[6], v[7]]];
        let mut crops = ChaCha8Rng::seed_from_u64(crop_seed);
        stc_loss(t, &c, &w, &cfg, &CropConfig::default(), &mut crops)
    })
}

/// Step for composite losses whose automask and source-minimum are only
/// piecewise smooth; instances are drawn at least `SELECTION_MARGIN` away
/// from every selection boundary so no perturbation can flip one.
const COMPOSITE_STEP: f64 = 1e-7;
const SELECTION_MARGIN: f64 = 1e-5;

fn depth_loss_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let (n, h, w) = (4, 8, 8);
    let target = smooth_image(rng, n, 3, h, w);
    let s0 = smooth_image(rng, n, 3, h, w);
    let s1 = smooth_image(rng, n, 3, h, w);
    let mut v = vec![target, s0, s1];
    for _ in 0..4 {
        v.push(rand_t(rng, &[n, 1, h, w], 0.2, 0.8));
    }
    for _ in 0..2 {
        v.push(rand_t(rng, &[n, 3], -0.02, 0.02));
        v.push(rand_t(rng, &[n, 3], -0.1, 0.1));
    }
    v.push(k_rows(rng, n, h, w));
    v
}

fn depth_loss(t: &mut Tape<f64>, v: &[Var]) -> Result<losses::DepthLoss> {
    let bounds = vec![(0.5, 10.0); t.shape(v[0])[0]];
    let inp = DepthLossInputs {
        target: v[0],
        sources: &[v[1], v[2]],
        disps: &v[3..7],
        axis_angles: &[v[7], v[9]],
        translations: &[v[8], v[10]],
        intrinsics: v[11],
        depth_bounds: &bounds,
    };
    losses::depth_task_loss(t, &inp, &LossConfig { smoothness: 0.1, ..Default::default() })
}

/// Smallest gap between competing candidates of the source minimum and the
/// automask comparison over all pixels and scales.
fn selection_margin(inputs: &[Tensor<f64>]) -> Result<f64> {
    let cfg = LossConfig::default();
    let mut t = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
    let out = depth_loss(&mut t, &v)?;
    let ident = losses::identity_error(&t, v[0], &[v[1], v[2]], &cfg)?;
    let mut margin = f64::INFINITY;
    for w in &out.warped {
        let p0 = losses::photometric_values(t.value(v[0]), t.value(w[0]), &cfg)?;
        let p1 = losses::photometric_values(t.value(v[0]), t.value(w[1]), &cfg)?;
        for ((a, b), id) in p0.data().iter().zip(p1.data()).zip(ident.data()) {
            margin = margin.min((a - b).abs()).min((a.min(*b) - id).abs());
        }
    }
    Ok(margin)
}

/// L_depth on a 4×8×8 toy batch, w.r.t. disparities, poses and intrinsics.
fn depth_loss_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = loop {
        let cand = depth_loss_inputs(rng);
        if selection_margin(&cand)? > SELECTION_MARGIN {
            break cand;
        }
    };
    let mut wrt = vec![false; 3];
    wrt.extend([true; 9]);
    Ok(gradcheck::check(&inputs, &wrt, COMPOSITE_STEP, |t, v| Ok(depth_loss(t, v)?.loss))?.max_rel_err())
}

pub fn run_case(case: &Case, instances: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        worst = worst.max((case.run)(&mut rng)?);
    }
    Ok(worst)
}

#[allow(dead_code)]
pub fn intrinsics_unused(_: CameraIntrinsics) {}
