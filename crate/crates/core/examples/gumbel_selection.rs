//! Scores the positions of a random sequence with both discriminators and
//! compares Gumbel-softmax selection frequencies with the joint scores at a
//! few temperatures. The hard sample does not depend on the temperature;
//! the relaxed weights that carry the gradient do.
//!
//! cargo run --example gumbel_selection -- [length] [draws]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssdrec::augment::{score_sequence, select_position, SelectorParams};
use ssdrec::tensor::ParamStore;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(6), |a| a.parse())?;
    let draws: usize = args.next().map_or(Ok(20_000), |a| a.parse())?;
    let d = 16;

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut store = ParamStore::<f64>::new();
    let sel = SelectorParams::init(&mut store, "selector", d, &mut rng);
    let mut h = Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0));
    // A planted outlier far from the rest.
    h.row_mut(n / 2).mapv_inplace(|x| -3.0 * x);

    let s = score_sequence(&h, &store, &sel)?;
    let total: f64 = s.r_joint.iter().sum();
    println!("{:>4} {:>9} {:>9} {:>9}", "pos", "r_seq", "r_sim", "r_joint");
    for t in 0..n {
        println!("{t:>4} {:>9.4} {:>9.4} {:>9.4}", s.r_seq[t], s.r_sim[t], s.r_joint[t] / total);
    }

    for tau in [0.1, 1.0, 10.0] {
        let mut hits = vec![0usize; n];
        let mut peak = 0.0;
        for _ in 0..draws {
            let pick = select_position(&s.r_joint, tau, Some(&mut rng))?;
            peak += pick.soft[pick.hard_index];
            hits[pick.hard_index] += 1;
        }
        let tv: f64 = hits.iter().zip(&s.r_joint).map(|(&c, &r)| (c as f64 / draws as f64 - r / total).abs()).sum::<f64>() / 2.0;
        let freq: Vec<String> = hits.iter().map(|&c| format!("{:.3}", c as f64 / draws as f64)).collect();
        println!(
            "tau {tau:>5}: frequencies [{}], TV to r_joint {tv:.4}, mean soft weight of the pick {:.3}",
            freq.join(", "),
            peak / draws as f64
        );
    }
    let argmax = select_position::<ChaCha8Rng>(&s.r_joint, 1.0, None)?.hard_index;
    println!("noise-free selection: position {argmax}");
    Ok(())
}
