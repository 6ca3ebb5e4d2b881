#[test]
fn profile_step() {
    use cesst_core::data::{Dataset, ResponseMatrix};
    use cesst_core::model::{Cesst, CesstConfig};
    use cesst_core::losses::{loss_total, LossConfig};
    use cesst_core::train::{input_tensor, supervision_tensors};
    use cesst_core::params::detach_all;
    use std::time::Instant;

    let resp = ResponseMatrix::default_gaussian();
    let ds = Dataset::synthetic(100, 4, 32, &resp).unwrap();
    let pair = ds.training_sample(0, 0, 32).unwrap();
    let rgb = input_tensor(&pair).unwrap();
    let gt = supervision_tensors(&pair).unwrap();
    let lcfg = LossConfig::default();

    // pure forward, no graph
    let mut frozen = Cesst::<f32>::new(&CesstConfig::default()).unwrap();
    detach_all(&mut frozen);
    let t0 = Instant::now();
    for _ in 0..5 { let _ = frozen.forward(&rgb).unwrap(); }
    println!("forward no-graph: {:.0} ms", t0.elapsed().as_secs_f64() * 200.0);

    // forward with graph
    let model = Cesst::<f32>::new(&CesstConfig::default()).unwrap();
    let t0 = Instant::now();
    for _ in 0..5 { let _ = model.forward(&rgb).unwrap(); }
    println!("forward graph: {:.0} ms", t0.elapsed().as_secs_f64() * 200.0);

    // forward + loss + backward
    let t0 = Instant::now();
    for _ in 0..5 {
        let pred = model.forward(&rgb).unwrap();
        let loss = loss_total(&pred, &gt, &lcfg).unwrap();
        let _ = loss.backward().unwrap();
    }
    println!("fwd+loss+bwd: {:.0} ms", t0.elapsed().as_secs_f64() * 200.0);

    // finite checks off
    cesst_core::tensor::set_finite_checks(false);
    let t0 = Instant::now();
    for _ in 0..5 {
        let pred = model.forward(&rgb).unwrap();
        let loss = loss_total(&pred, &gt, &lcfg).unwrap();
        let _ = loss.backward().unwrap();
    }
    println!("fwd+loss+bwd (no finite checks): {:.0} ms", t0.elapsed().as_secs_f64() * 200.0);
    cesst_core::tensor::set_finite_checks(true);
}
