//! Benchmarks live in `benches/`; run with `cargo bench -p s2ut-bench`.

use s2ut_core::{RngStream, Tensor};

/// Standard-normal tensor of the given shape.
pub fn randn(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("shape matches data")
}

/// Row-wise log-softmax of a random `[t, v]` matrix.
pub fn random_log_probs(rng: &mut RngStream, t: usize, v: usize) -> Tensor {
    let mut data = Vec::with_capacity(t * v);
    for _ in 0..t {
        let row: Vec<f64> = (0..v).map(|_| rng.normal()).collect();
        let z = row.iter().map(|x| x.exp()).sum::<f64>().ln();
        data.extend(row.iter().map(|x| x - z));
    }
    Tensor::new(vec![t, v], data).expect("shape matches data")
}
