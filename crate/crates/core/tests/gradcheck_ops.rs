mod common;

use common::{op_options, OPS, OP_SEEDS};

#[test]
fn every_op_matches_central_differences_over_many_seeds() {
    let opts = op_options();
    let mut failures = Vec::new();
    for (name, check) in OPS {
        let mut worst = 0f64;
        for seed in 0..OP_SEEDS {
            let r = check(seed, &opts).unwrap();
            assert!(r.coords_checked > 0, "{name}: nothing checked");
            worst = worst.max(r.max_rel_err);
            if !r.passed() {
                failures.push(format!("{name} seed {seed}: {r:?}"));
            }
        }
        println!("{name:<20} max_rel_err {worst:.3e}");
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn detach_blocks_the_gradient() {
    use ldpnet::autodiff::{Graph, Tensor};
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
    let d = g.detach(x);
    let y = g.mul(x, d).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0, -2.0, 0.5]);
}
