//! Fit a random forest on synthetic blobs, score it and rank features.

use faultlab::ml::{forest_importance, macro_f_score, ForestParams, RandomForest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let c = i % 3;
        // Two informative columns and three noise columns.
        let mut row = vec![
            centers[c][0] + rng.random_range(-1.0..1.0),
            centers[c][1] + rng.random_range(-1.0..1.0),
        ];
        row.extend((0..3).map(|_| rng.random_range(0.0..10.0)));
        x.push(row);
        y.push(c);
    }
    (x, y)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (x, y) = blobs(600, 1);
    let (tx, ty) = blobs(300, 2);
    let forest = RandomForest::fit(&x, &y, 3, &ForestParams::default())?;
    let pred = forest.predict_many(&tx)?;
    let classes: Vec<String> = ["left", "right", "top"].iter().map(|s| s.to_string()).collect();
    let report = macro_f_score(&ty, &pred, &classes)?;
    print!("{}", report.render());
    println!("votes for {:?}: {:?}", tx[0], forest.votes(&tx[0])?);
    for (i, v) in forest_importance(&forest, 5)? {
        println!("feature {i}: {v:.3}");
    }
    Ok(())
}
