use fedlora::data::{dirichlet_partition, entropy, js_divergence, label_distribution, make_synthetic};

fn heterogeneity(beta: f64, seed: u64) -> (f64, f64) {
    let d = make_synthetic(8, 8, 2400, 3.0, seed).unwrap();
    let plan = dirichlet_partition(&d.y, 12, beta, seed, 4).unwrap();
    let global = label_distribution(d.y.iter().copied(), 8);
    let (mut h, mut js) = (0.0, 0.0);
    for s in &plan.shards {
        let p = label_distribution(s.iter().map(|&i| d.y[i]), 8);
        h += entropy(&p);
        js += js_divergence(&p, &global);
    }
    (h / 12.0, js / 12.0)
}

fn averaged(beta: f64) -> (f64, f64) {
    let (mut h, mut js) = (0.0, 0.0);
    for seed in 0..10 {
        let (a, b) = heterogeneity(beta, seed);
        h += a;
        js += b;
    }
    (h / 10.0, js / 10.0)
}

#[test]
fn skew_grows_as_beta_shrinks() {
    let stats: Vec<(f64, f64)> = [0.1, 0.5, 1.0, 10.0].iter().map(|&b| averaged(b)).collect();
    assert!(stats[0].0 < stats[3].0, "entropy at beta=0.1 should be below beta=10: {stats:?}");
    for w in stats.windows(2) {
        assert!(w[0].1 >= w[1].1, "js divergence not monotone: {stats:?}");
    }
}
