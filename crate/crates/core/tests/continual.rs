mod common {
    pub mod properties;
}

use common::properties::{ema_contract, reservoir_inclusion, stc_identities, tiny_network};
use depthcl_core::continual::{Method, TrainSample, Trainer, TrainerConfig};
use depthcl_core::experiment::{run, Schedule, TaskData};
use depthcl_core::networks::ModelParams;
use depthcl_core::synth::{default_suite, generate_task, TEST_OFFSET};
use proptest::prelude::*;

#[test]
fn reservoir_inclusion_is_uniform() {
    let s = reservoir_inclusion(10_000, 200, 1_000, 11);
    println!("{s:?}");
    assert!(s.passes(), "{s:?}");
}

#[test]
fn ema_copies_then_contracts() {
    for alpha in [0.999, 0.9] {
        let r = ema_contract(alpha, 200).unwrap();
        assert!(r.passes(), "alpha {alpha}: {r:?}");
    }
}

#[test]
fn stc_identities_hold() {
    let r = stc_identities(4).unwrap();
    println!("{r:?}");
    assert!(r.passes(), "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reservoir_never_exceeds_capacity(cap in 0usize..20, n in 0usize..200, seed in any::<u64>()) {
        let mut b = depthcl_core::continual::ReplayBuffer::new(cap, seed);
        for i in 0..n {
            b.insert(i);
            prop_assert!(b.len() <= cap);
        }
        prop_assert_eq!(b.len(), cap.min(n));
        prop_assert_eq!(b.seen(), n as u64);
        let mut items = b.items().to_vec();
        items.sort();
        items.dedup();
        prop_assert_eq!(items.len(), b.len());
    }

    #[test]
    fn crop_window_in_bounds(ratio in -3.0f64..3.0, h in 1usize..80, w in 1usize..120, seed in any::<u64>()) {
        let mut rng = depthcl_core::rng::stream(seed, depthcl_core::rng::Stream::Crop);
        let c = depthcl_core::continual::stc::place_crop(ratio, h, w, &mut rng);
        prop_assert!((0.1..=1.0).contains(&c.ratio));
        prop_assert!(c.height >= 1 && c.width >= 1);
        prop_assert!(c.top + c.height <= h && c.left + c.width <= w);
    }
}

fn tiny_tasks(n_tasks: usize, n_train: usize) -> Vec<TaskData> {
    default_suite(16, 24, 9)
        .into_iter()
        .take(n_tasks)
        .enumerate()
        .map(|(i, s)| {
            TaskData::new(
                s.name.clone(),
                i,
                s.d_max,
                generate_task(&s, 0, n_train).unwrap(),
                generate_task(&s, TEST_OFFSET, 4).unwrap(),
            )
        })
        .collect()
}

fn config(method: Method) -> TrainerConfig {
    let mut c = TrainerConfig::default();
    c.network = tiny_network();
    c.continual.method = method;
    c.continual.buffer_capacity = 8;
    c.continual.rehearsal_batch = 4;
    c.continual.nu = 0.5;
    c.adam.lr = 1e-3;
    c
}

fn batch(task: &TaskData, k: usize) -> Vec<TrainSample> {
    task.train[4 * k..4 * k + 4].to_vec()
}

#[test]
fn nct_ignores_memory_and_context() {
    let tasks = tiny_tasks(1, 8);
    let mut t = Trainer::new(config(Method::Nct), 1).unwrap();
    let init = t.working().clone();
    for k in 0..2 {
        let l = t.step(&batch(&tasks[0], k), 0).unwrap();
        assert_eq!(l.rehearsed, 0);
        assert!(l.stc.is_none());
    }
    assert_eq!(t.buffer().seen(), 0);
    assert_eq!(t.context(), &init);
    assert_ne!(t.working(), &init);
    assert!(std::ptr::eq(t.eval_params(), t.working()));
}

#[test]
fn experience_replay_starts_with_empty_memory() {
    let tasks = tiny_tasks(1, 12);
    let mut t = Trainer::new(config(Method::Er), 1).unwrap();
    assert_eq!(t.step(&batch(&tasks[0], 0), 0).unwrap().rehearsed, 0);
    assert_eq!(t.buffer().len(), 4);
    assert_eq!(t.step(&batch(&tasks[0], 1), 0).unwrap().rehearsed, 4);
    assert_eq!(t.buffer().seen(), 8);
}

#[test]
fn consistency_term_after_warmup() {
    let tasks = tiny_tasks(2, 8);
    let mut t = Trainer::new(config(Method::MonoDepthCl), 1).unwrap();
    for k in 0..2 {
        assert!(t.step(&batch(&tasks[0], k), 0).unwrap().stc.is_none());
    }
    let l = t.step(&batch(&tasks[1], 0), 1).unwrap();
    let stc = l.stc.expect("consistency computed on the second task");
    assert!(stc > 0.0 && stc.is_finite());
    assert!((l.total - (l.depth + 0.1 * stc)).abs() < 1e-5 * l.total.abs().max(1.0));

    let mut cold = config(Method::MonoDepthCl);
    cold.continual.warmup = false;
    let mut t = Trainer::new(cold, 1).unwrap();
    t.step(&batch(&tasks[0], 0), 0).unwrap();
    assert!(t.step(&batch(&tasks[0], 1), 0).unwrap().stc.is_some());
}

#[test]
fn warmup_first_task_matches_replay() {
    let tasks = tiny_tasks(1, 12);
    let mut a = Trainer::new(config(Method::MonoDepthCl), 3).unwrap();
    let mut b = Trainer::new(config(Method::Er), 3).unwrap();
    for k in 0..3 {
        let la = a.step(&batch(&tasks[0], k), 0).unwrap();
        let lb = b.step(&batch(&tasks[0], k), 0).unwrap();
        assert_eq!(la.depth.to_bits(), lb.depth.to_bits());
    }
    assert_eq!(a.working(), b.working());
    assert_ne!(a.context(), a.working());
}

fn moved(before: &ModelParams<f32>, after: &ModelParams<f32>) -> Vec<String> {
    let mut frozen = Vec::new();
    for (x, y) in [(&before.depth, &after.depth), (&before.pose, &after.pose)] {
        for ((name, a), (_, b)) in x.iter().zip(y.iter()) {
            if a == b {
                frozen.push(name.to_string());
            }
        }
    }
    frozen
}

#[test]
fn every_parameter_receives_gradient() {
    let tasks = tiny_tasks(1, 4);
    for learn_k in [false, true] {
        let mut c = config(Method::Nct);
        c.network.learn_intrinsics = learn_k;
        let mut t = Trainer::new(c, 2).unwrap();
        let before = t.working().clone();
        t.step(&batch(&tasks[0], 0), 0).unwrap();
        let frozen = moved(&before, t.working());
        assert!(frozen.is_empty(), "learn_intrinsics={learn_k}: untouched {frozen:?}");
    }
}

#[test]
fn context_method_evaluates_context() {
    let t = Trainer::new(config(Method::ContextDepth), 1).unwrap();
    assert!(std::ptr::eq(t.eval_params(), t.context()));
    let t = Trainer::new(config(Method::MonoDepthCl), 1).unwrap();
    assert!(std::ptr::eq(t.eval_params(), t.working()));
}

fn schedule() -> Schedule {
    Schedule {
        epochs: 1,
        batch_size: 4,
        lr: 1e-3,
        eval_batch: 4,
        ..Schedule::default()
    }
}

#[test]
fn sequential_run_fills_lower_triangle() {
    let tasks = tiny_tasks(3, 4);
    let out = run(config(Method::Er), &schedule(), &tasks, 5, &mut ()).unwrap();
    let cells: Vec<(usize, usize)> = out.matrix.entries().map(|(i, j, _)| (i, j)).collect();
    assert_eq!(cells, vec![(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]);
    assert_eq!(out.epochs.len(), 3);

    let diag = Schedule { eval_all: true, ..schedule() };
    let out = run(config(Method::Er), &diag, &tasks, 5, &mut ()).unwrap();
    assert_eq!(out.matrix.entries().count(), 9);
}

#[test]
fn joint_trains_one_merged_task() {
    let tasks = tiny_tasks(2, 4);
    let out = run(config(Method::Joint), &schedule(), &tasks, 5, &mut ()).unwrap();
    assert_eq!(out.matrix.n_tasks(), 1);
    assert_eq!(out.epochs.len(), 1);
    assert_eq!(out.trainer.steps(), 2);
}

#[test]
fn runs_are_deterministic() {
    let tasks = tiny_tasks(2, 4);
    let a = run(config(Method::MonoDepthCl), &schedule(), &tasks, 8, &mut ()).unwrap();
    let b = run(config(Method::MonoDepthCl), &schedule(), &tasks, 8, &mut ()).unwrap();
    assert_eq!(a.matrix, b.matrix);
    assert_eq!(a.trainer.working(), b.trainer.working());
    let c = run(config(Method::MonoDepthCl), &schedule(), &tasks, 9, &mut ()).unwrap();
    assert_ne!(a.trainer.working(), c.trainer.working());
}
