//! Full-ranking metrics on a hand-made score matrix, with and without
//! filtering of items the user has already seen.
//!
//! cargo run --example evaluate_metrics

use ssdrec::trainer::{rank_of, EvalReport};

fn main() {
    // Columns are items 1..=8; each row is one user's scores.
    let scores = [
        [0.9, 0.1, 0.4, 0.4, 0.2, 0.0, 0.3, 0.8],
        [0.2, 0.2, 0.2, 0.7, 0.1, 0.9, 0.5, 0.6],
        [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 0.1],
    ];
    let targets = [3usize, 4, 8];
    let seen: [&[usize]; 3] = [&[1, 8], &[6], &[7, 6, 5]];

    for filter in [false, true] {
        let ranks: Vec<usize> = scores
            .iter()
            .zip(targets)
            .zip(seen)
            .map(|((row, t), s)| {
                let excluded: Vec<usize> = if filter { s.iter().filter(|&&v| v != t).map(|v| v - 1).collect() } else { vec![] };
                rank_of(row, t - 1, &excluded)
            })
            .collect();
        let report = EvalReport::from_ranks(&ranks);
        println!("filter_seen={filter}: ranks {ranks:?}");
        println!("  {}", serde_json::to_string(&report).unwrap());
    }
    // Ties rank the lower item index first: item 3 and 4 share 0.4 for the
    // first user, so item 3 is ahead of item 4.
}
