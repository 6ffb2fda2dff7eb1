//! Finite-difference verification of the recorded gradients, from single
//! primitives up to the full model loss on one clip at the reduced
//! configuration. Run with `cargo run --release --example gradient_check`.

use skelclass::autodiff::{adaptive_fd_rel_err, grad_check, Graph, Mode, Tensor, DEFAULT_FD_EPS};
use skelclass::model::{build_batch, init_params, ModelConfig, ParameterStore, PartGraph};
use skelclass::pose::{quantize01, ClipSource, Label, SkeletonClip};
use skelclass::train::loss::{build_focal_loss, build_total_loss};
use skelclass::train::TrainConfig;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_clip(seed: u64, label: Label) -> SkeletonClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrix = Tensor::zeros(50, 75);
    for i in 0..matrix.len() {
        matrix.data_mut()[i] = quantize01(rng.gen_range(0.1..0.9));
    }
    SkeletonClip {
        matrix,
        label,
        source: ClipSource { video_id: "fd".into(), start_frame: 0, fps_used: 25 },
    }
}

fn main() {
    // A primitive first: softmax composed with a quadratic.
    let x = Tensor::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
    let err = grad_check(
        |g, xn| {
            let sm = g.row_softmax(xn)?;
            let sq = g.elementwise_mul(sm, sm)?;
            g.sum_all(sq)
        },
        &x,
        DEFAULT_FD_EPS,
    )
    .expect("softmax check builds");
    println!("row_softmax gradient max rel err: {err:.3e}");

    // Full model: total loss on one clip, eval mode, tiny configuration.
    let mcfg = ModelConfig::tiny();
    let tcfg = TrainConfig::default();
    let store = init_params(&mcfg, 3407).expect("valid tiny config");
    let clip = random_clip(42, Label::Dystonia);
    let graph = PartGraph::parts(mcfg.gcn_self_loops);
    let labels = vec![clip.label];

    let loss_of = |store: &ParameterStore| -> f64 {
        let mut g = Graph::new();
        let fwd = build_batch(&mut g, store, &mcfg, &graph, &[&clip], Mode::Eval, 0).unwrap();
        let focal =
            build_focal_loss(&mut g, fwd.probs, &labels, tcfg.alpha, tcfg.gamma, tcfg.alpha_applies_to)
                .unwrap();
        let total = build_total_loss(&mut g, focal, &fwd.param_nodes, tcfg.weight_decay).unwrap();
        g.value(total).get(0, 0)
    };

    let mut g = Graph::new();
    let fwd = build_batch(&mut g, &store, &mcfg, &graph, &[&clip], Mode::Eval, 0).unwrap();
    let focal =
        build_focal_loss(&mut g, fwd.probs, &labels, tcfg.alpha, tcfg.gamma, tcfg.alpha_applies_to)
            .unwrap();
    let total = build_total_loss(&mut g, focal, &fwd.param_nodes, tcfg.weight_decay).unwrap();
    g.backward(total).unwrap();

    // A representative slice of every block of the network; the full
    // every-entry sweep lives in the acceptance suite.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for (name, &node) in &fwd.param_nodes {
        let analytic = g.grad(node).expect("gradient flows to every parameter");
        let len = store.get(name).len();
        for _ in 0..2 {
            let i = rng.gen_range(0..len);
            let err = adaptive_fd_rel_err(
                analytic.data()[i],
                |delta| {
                    let mut probe = store.clone();
                    probe.get_mut(name).data_mut()[i] += delta;
                    loss_of(&probe)
                },
                DEFAULT_FD_EPS,
            );
            if err > worst {
                worst = err;
                println!("  {name}[{i}]: rel err {err:.3e}");
            }
        }
    }
    println!("full-model sampled gradient max rel err: {worst:.3e}");
    assert!(worst < 1e-4);
    println!("PASS");
}
