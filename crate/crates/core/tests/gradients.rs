use pmkg::diagnostics::{parameter_groups, run_gradcheck, GradcheckOptions};
use pmkg::neighbor::{enhance_entity, NeighborBatch, NeighborParams};
use pmkg::numerics::{finite_difference_check, Tape, Tensor};
use pmkg::semantics::{pool_tuning_loss, pool_tuning_node};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(n: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

#[test]
fn neighbor_encoder_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = 3;
    let params = NeighborParams::random(d, 2, &mut rng);
    let batch = NeighborBatch {
        relations: (0..4).map(|_| random_vec(d, &mut rng)).collect(),
        entities: (0..4).map(|_| random_vec(d, &mut rng)).collect(),
    };
    let e = random_vec(d, &mut rng);
    let c = random_vec(d, &mut rng);
    let objective = |p: &NeighborParams| -> f64 {
        let out = enhance_entity(&e, &batch, p).unwrap();
        out.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
    };

    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let target = tape.leaf(e.clone());
    let pairs: Vec<_> = (0..4)
        .map(|i| (tape.leaf(batch.relations[i].clone()), tape.leaf(batch.entities[i].clone())))
        .collect();
    let out = nodes.encode(&mut tape, target, &pairs).unwrap();
    let ci = tape.leaf(c.clone());
    let loss = tape.dot(out, ci).unwrap();
    let grads = tape.gradients(loss, &nodes.ids()).unwrap();

    for (k, analytic) in grads.iter().enumerate() {
        let point = params.tensors()[k].1.clone();
        let f = |x: &Tensor| {
            let mut p = params.clone();
            *p.tensors_mut()[k] = x.clone();
            objective(&p)
        };
        let r = finite_difference_check(f, &point, analytic, 1e-6);
        assert!(r.max_rel_error < 1e-7, "{}: {r:?}", params.tensors()[k].0);
    }
}

#[test]
fn pool_tuning_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 4;
    let prompt = random_vec(dim, &mut rng);
    let pairs: Vec<Tensor> = (0..3).map(|_| random_vec(dim, &mut rng)).collect();
    let negs: Vec<Tensor> = (0..5).map(|_| random_vec(dim, &mut rng)).collect();

    let mut tape = Tape::new();
    let p = tape.leaf(prompt.clone());
    let xs: Vec<_> = pairs.iter().map(|x| tape.leaf(x.clone())).collect();
    let ns: Vec<_> = negs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = pool_tuning_node(&mut tape, p, &xs, &ns, 0.1).unwrap();
    let mut wrt = vec![p, ns[0]];
    wrt.push(xs[1]);
    let grads = tape.gradients(loss, &wrt).unwrap();

    let r = finite_difference_check(|x: &Tensor| pool_tuning_loss(x, &pairs, &negs, 0.1).unwrap(), &prompt, &grads[0], 1e-6);
    assert!(r.max_rel_error < 1e-7, "{r:?}");
    let r = finite_difference_check(
        |x: &Tensor| {
            let mut n = negs.clone();
            n[0] = x.clone();
            pool_tuning_loss(&prompt, &pairs, &n, 0.1).unwrap()
        },
        &negs[0],
        &grads[1],
        1e-6,
    );
    assert!(r.max_rel_error < 1e-7, "{r:?}");
    let r = finite_difference_check(
        |x: &Tensor| {
            let mut s = pairs.clone();
            s[1] = x.clone();
            pool_tuning_loss(&prompt, &s, &negs, 0.1).unwrap()
        },
        &pairs[1],
        &grads[2],
        1e-6,
    );
    assert!(r.max_rel_error < 1e-7, "{r:?}");
}

#[test]
fn full_episode_gradcheck_passes_for_every_group() {
    let report = run_gradcheck(&GradcheckOptions::default()).unwrap();
    assert_eq!(report.groups.len(), parameter_groups().len());
    for g in &report.groups {
        assert!(g.checked > 0, "{} checked nothing", g.group);
        assert!(g.max_rel_error <= 1e-4, "{}: {}", g.group, g.max_rel_error);
    }
    assert!(report.passed);
}

#[test]
fn verdict_is_stable_across_seeds() {
    for seed in [1, 2, 3] {
        let report = run_gradcheck(&GradcheckOptions { seed, ..Default::default() }).unwrap();
        assert!(report.passed, "seed {seed}: {report:?}");
    }
}

/// A coarse step inflates the error through truncation but keeps it bounded.
#[test]
fn coarse_step_error_is_larger_but_bounded() {
    let fine = run_gradcheck(&GradcheckOptions::default()).unwrap();
    let coarse = run_gradcheck(&GradcheckOptions { eps: 1e-2, ..Default::default() }).unwrap();
    let worst = |r: &pmkg::diagnostics::GradcheckReport| r.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    assert!(worst(&coarse) > worst(&fine));
    assert!(worst(&coarse) < 1.0, "{coarse:?}");
}
