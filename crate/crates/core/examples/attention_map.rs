// Runs the self-attention layer on a random feature map and inspects its
// attention matrix.

use std::error::Error;

use evyawn::model::{attention_map, self_attention, SelfAttentionParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let (c, k, side) = (8, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut fill = |n: usize| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect::<Vec<f64>>();
    let mut params = SelfAttentionParams::zeros(c, k);
    params.wf = fill(k * c);
    params.wg = fill(k * c);
    params.wh = fill(c * c);
    let x = Tensor::new(vec![1, c, side, side], fill(c * side * side))?;

    // gamma = 0 passes the input through unchanged
    let y = self_attention(&x, &params)?;
    let identity_err = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    params.gamma[0] = 0.5;
    let map = attention_map(&x, &params)?;
    let n = side * side;
    let row_err = map.data().chunks(n).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    println!("identity error {identity_err:e}, worst row-sum error {row_err:e} over {n} rows");
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
