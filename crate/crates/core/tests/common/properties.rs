// Statistical and algebraic checks of the continual-learning components,
// shared by the core tests and the acceptance suite.

use depthcl_core::continual::ema::{consolidate, decay};
use depthcl_core::continual::{sample_crop, stc_loss, CropConfig, DualModel, ReplayBuffer};
use depthcl_core::geometry::CameraIntrinsics;
use depthcl_core::losses::{disp_to_depth_batch, LossConfig};
use depthcl_core::networks::{depth_forward, ModelParams, NetworkConfig};
use depthcl_core::rng::{stream, Stream};
use depthcl_core::tensor::ParamSet;
use depthcl_core::{Result, Tape, Tensor, Var};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

#[derive(Debug, Clone, Copy)]
#[allow(dead_code)]
pub struct ReservoirStats {
    pub items: usize,
    pub trials: usize,
    pub expected: f64,
    pub sigma: f64,
    /// Largest per-item deviation of the inclusion count, in σ.
    pub max_z: f64,
    /// Items whose inclusion count falls outside ±3σ.
    pub outside: usize,
    /// How many items chance alone puts outside ±3σ: mean and mean + 3 sd.
    pub outside_expected: f64,
    pub outside_limit: f64,
    pub chi2: f64,
    pub chi2_p: f64,
}

impl ReservoirStats {
    pub fn passes(&self) -> bool {
        (self.outside as f64) <= self.outside_limit && self.chi2_p > 0.01
    }
}

/// Streams items `0..n` through a fresh reservoir in each trial and tests
/// the per-item inclusion counts against Binomial(trials, capacity/n).
pub fn reservoir_inclusion(n: usize, capacity: usize, trials: usize, seed: u64) -> ReservoirStats {
    let mut counts = vec![0u64; n];
    for t in 0..trials {
        let mut b = ReplayBuffer::new(capacity, seed.wrapping_add(t as u64));
        for i in 0..n {
            b.insert(i);
        }
        for &i in b.items() {
            counts[i] += 1;
        }
    }
    let p = capacity as f64 / n as f64;
    let expected = trials as f64 * p;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    let band = 3.0 * sigma;
    let z: Vec<f64> = counts.iter().map(|&c| (c as f64 - expected) / sigma).collect();
    let max_z = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let outside = z.iter().filter(|v| v.abs() > 3.0).count();

    // Exact binomial tail mass beyond the ±3σ band.
    let bin = Binomial::new(p, trials as u64).expect("valid binomial");
    let lo = (expected - band).ceil() as u64;
    let hi = (expected + band).floor() as u64;
    let below = if lo == 0 { 0.0 } else { bin.cdf(lo - 1) };
    let tail = below + bin.sf(hi);
    let outside_expected = n as f64 * tail;
    let outside_limit = outside_expected + 3.0 * (n as f64 * tail * (1.0 - tail)).sqrt();

    // Each count has variance T·p(1−p), so scale Pearson's statistic by 1/(1−p).
    let chi2 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2))
        .sum::<f64>()
        / (expected * (1.0 - p));
    let chi2_p = ChiSquared::new((n - 1) as f64).expect("valid dof").sf(chi2);
    ReservoirStats {
        items: n,
        trials,
        expected,
        sigma,
        max_z,
        outside,
        outside_expected,
        outside_limit,
        chi2,
        chi2_p,
    }
}

fn distance(a: &ModelParams<f64>, b: &ModelParams<f64>) -> f64 {
    let sets = |m: &ModelParams<f64>| -> Vec<f64> {
        m.depth
            .tensors()
            .iter()
            .chain(m.pose.tensors())
            .flat_map(|t| t.data().to_vec())
            .collect()
    };
    sets(a)
        .iter()
        .zip(sets(b))
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn scalar_set(v: f64) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    p.push("x", Tensor::scalar(v));
    p
}

pub fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        height: 16,
        width: 24,
        base_width: 4,
        learn_intrinsics: false,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EmaReport {
    pub copy_exact: bool,
    /// Largest `‖θ_k − w‖ / (α^k ‖θ_0 − w‖ + r_k)` seen, with `r_k` the
    /// accumulated rounding of `k` updates; the bound holds when ≤ 1.
    pub scalar_worst: f64,
    pub model_worst: f64,
}

impl EmaReport {
    pub fn passes(&self) -> bool {
        // The norms and α^k are themselves evaluated in binary64.
        let tol = 1.0 + 1e-12;
        self.copy_exact && self.scalar_worst <= tol && self.model_worst <= tol
    }
}

/// Rounding budget of `k` updates on values of magnitude `m`.
fn rounding(k: usize, m: f64) -> f64 {
    4.0 * k as f64 * f64::EPSILON * m
}

fn zeros(p: &ParamSet<f64>) -> ParamSet<f64> {
    let mut z = ParamSet::new();
    for (n, t) in p.iter() {
        z.push(n, Tensor::zeros(t.shape()));
    }
    z
}

/// Copy at n = 0 and geometric contraction toward a fixed working model.
pub fn ema_contract(alpha: f64, steps: usize) -> Result<EmaReport> {
    let cfg = tiny_network();
    let a = ModelParams::<f64>::init(&cfg, &mut stream(1, Stream::Init))?;
    let w = ModelParams::<f64>::init(&cfg, &mut stream(2, Stream::Init))?;

    let mut copy = a.clone();
    consolidate(&mut copy.depth, &w.depth, decay(0, alpha))?;
    consolidate(&mut copy.pose, &w.pose, decay(0, alpha))?;
    let bits = |m: &ModelParams<f64>| -> Vec<u64> {
        m.depth
            .tensors()
            .iter()
            .chain(m.pose.tensors())
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    let mut copy_exact = bits(&copy) == bits(&w);

    // The dual model itself, firing every iteration: its first update copies.
    let mut dual = DualModel::new(w.clone(), alpha, 1.0, 3)?;
    dual.context = a.clone();
    dual.step()?;
    copy_exact &= bits(&dual.context) == bits(&w);

    // Contraction starting late in training, where the decay equals α.
    let mut scalar_worst = 0.0f64;
    for (c0, w0) in [(1.0, 0.0), (-3.5, 2.25), (1e-3, 7.0)] {
        let mut c = scalar_set(c0);
        let d0 = (c0 - w0).abs();
        for k in 1..=steps {
            consolidate(&mut c, &scalar_set(w0), decay(10_000 + k as u64, alpha))?;
            let dk = (c.get(0).item() - w0).abs();
            let r = rounding(k, c0.abs().max(w0.abs()));
            scalar_worst = scalar_worst.max(dk / (alpha.powi(k as i32) * d0 + r));
        }
    }

    let mut model_worst = 0.0f64;
    let mut ctx = a.clone();
    let d0 = distance(&ctx, &w);
    let scale = distance(&a, &ModelParams { depth: zeros(&a.depth), pose: zeros(&a.pose) })
        .max(distance(&w, &ModelParams { depth: zeros(&w.depth), pose: zeros(&w.pose) }));
    for k in 1..=steps {
        let r = decay(10_000 + k as u64, alpha);
        consolidate(&mut ctx.depth, &w.depth, r)?;
        consolidate(&mut ctx.pose, &w.pose, r)?;
        let bound = alpha.powi(k as i32) * d0 + rounding(k, scale);
        model_worst = model_worst.max(distance(&ctx, &w) / bound);
    }
    Ok(EmaReport {
        copy_exact,
        scalar_worst,
        model_worst,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct StcReport {
    pub identical_loss: f64,
    pub ratio_range: (f64, f64),
    pub constant_invariant: bool,
    /// Largest |gradient| reaching the context parameters.
    pub context_grad: f64,
    /// Largest |gradient| reaching the working parameters, for contrast.
    pub working_grad: f64,
}

impl StcReport {
    pub fn passes(&self) -> bool {
        self.identical_loss.abs() <= 1e-6
            && self.ratio_range.0 >= 0.1
            && self.ratio_range.1 <= 1.0
            && self.constant_invariant
            && self.context_grad == 0.0
            && self.working_grad > 0.0
    }
}

/// Per-scale syntheses of a two-image batch from one depth network, warped
/// with a fixed small motion and the true intrinsics.
fn syntheses(tape: &mut Tape<f64>, depth_params: &[Var], cfg: &NetworkConfig, target: Var, sources: [Var; 2]) -> Result<Vec<Vec<Var>>> {
    let bound = depthcl_core::networks::Bound {
        depth: depth_params.to_vec(),
        pose: Vec::new(),
    };
    let disps = depth_forward(tape, cfg, &bound, target)?;
    let k = CameraIntrinsics {
        fx: 0.6 * cfg.width as f64,
        fy: 0.6 * cfg.width as f64,
        cx: 0.5 * cfg.width as f64,
        cy: 0.5 * cfg.height as f64,
    };
    let kk = tape.constant(CameraIntrinsics::batch_tensor(&[k, k])?);
    let motion = [([0.0, 0.01, 0.0], [0.3, 0.0, 0.05]), ([0.0, -0.01, 0.005], [-0.25, 0.05, -0.05])];
    let mut out = Vec::new();
    for d in disps {
        let depth = disp_to_depth_batch(tape, d, &[(0.1, 20.0), (0.1, 20.0)])?;
        let mut per_source = Vec::new();
        for (s, (aa, tr)) in sources.into_iter().zip(motion) {
            let aa = tape.constant(Tensor::from_slice(&[2, 3], &[aa, aa].concat())?);
            let tr = tape.constant(Tensor::from_slice(&[2, 3], &[tr, tr].concat())?);
            per_source.push(tape.view_synthesis(s, depth, aa, tr, kk)?);
        }
        out.push(per_source);
    }
    Ok(out)
}

/// Runs the consistency loss through real depth networks and checks its
/// identities.
pub fn stc_identities(seed: u64) -> Result<StcReport> {
    let cfg = tiny_network();
    let loss_cfg = LossConfig::default();
    let crop_cfg = CropConfig::default();
    let (h, w) = (cfg.height, cfg.width);
    let img = |k: u64| Tensor::from_fn(&[2, 3, h, w], |i| (((i as u64 * 2654435761 + k * 97) % 1000) as f64) / 1000.0);
    let working = ModelParams::<f64>::init(&cfg, &mut stream(seed, Stream::Init))?;
    let context = ModelParams::<f64>::init(&cfg, &mut stream(seed + 1, Stream::Init))?;

    let run = |ctx_params: &ModelParams<f64>, crop_seed: u64| -> Result<(f64, f64, f64)> {
        let mut tape = Tape::<f64>::new();
        let wv: Vec<Var> = working.depth.tensors().iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let cv: Vec<Var> = ctx_params.depth.tensors().iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let target = tape.constant(img(0));
        let sources = [tape.constant(img(1)), tape.constant(img(2))];
        let c = syntheses(&mut tape, &cv, &cfg, target, sources)?;
        let wm = syntheses(&mut tape, &wv, &cfg, target, sources)?;
        let l = stc_loss(&mut tape, &c, &wm, &loss_cfg, &crop_cfg, &mut stream(crop_seed, Stream::Crop))?;
        let value = tape.value(l).item();
        tape.backward(l)?;
        let max_grad = |tape: &mut Tape<f64>, vars: &[Var]| {
            vars.iter()
                .filter_map(|&v| tape.take_grad(v))
                .flat_map(|g| g.into_iter())
                .fold(0.0f64, |m, x| m.max(x.abs()))
        };
        let gc = max_grad(&mut tape, &cv);
        let gw = max_grad(&mut tape, &wv);
        Ok((value, gc, gw))
    };
    let (identical_loss, _, _) = run(&working, 5)?;
    let (_, context_grad, working_grad) = run(&context, 5)?;

    let mut rng = stream(seed, Stream::Crop);
    let mut ratio_range = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100_000 {
        let c = sample_crop(&crop_cfg, 64, 96, &mut rng)?;
        ratio_range = (ratio_range.0.min(c.ratio), ratio_range.1.max(c.ratio));
    }
    // Wider spread pushes many draws past both clip points.
    let wide = CropConfig { std: 1.0, ..crop_cfg };
    for _ in 0..100_000 {
        let c = sample_crop(&wide, 64, 96, &mut rng)?;
        ratio_range = (ratio_range.0.min(c.ratio), ratio_range.1.max(c.ratio));
    }

    Ok(StcReport {
        identical_loss,
        ratio_range,
        constant_invariant: constant_map_invariance()?,
        context_grad,
        working_grad,
    })
}

/// With a constant discrepancy map every crop has the same mean, so the loss
/// is identical for any crop draw and equals the uncropped loss. Pure L1 on
/// images differing by 0.5 keeps every partial sum exact.
fn constant_map_invariance() -> Result<bool> {
    let cfg = LossConfig {
        rho: 0.0,
        ..LossConfig::default()
    };
    let eval = |crop: CropConfig, seed: u64| -> Result<u64> {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3, 16, 24]));
        let b = tape.constant(Tensor::full(&[2, 3, 16, 24], 0.5));
        let c = vec![vec![a, a]; 4];
        let w = vec![vec![b, b]; 4];
        let l = stc_loss(&mut tape, &c, &w, &cfg, &crop, &mut stream(seed, Stream::Crop))?;
        Ok(tape.value(l).item().to_bits())
    };
    let full = eval(CropConfig { random_crop: false, ..CropConfig::default() }, 0)?;
    let mut ok = full == 0.5f64.to_bits();
    for seed in 0..50 {
        ok &= eval(CropConfig::default(), seed)? == full;
        ok &= eval(CropConfig { std: 1.0, ..CropConfig::default() }, seed)? == full;
    }
    Ok(ok)
}
