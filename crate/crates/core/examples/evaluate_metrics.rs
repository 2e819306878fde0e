//! The ranking metrics on a hand-made list.

use expomf::eval::{map_at_k, ndcg_at_k, mpr, recall_at_k, MapMode, RankedList};

fn main() {
    // items 0..10 scored so the order is 9, 8, ..., 0; item 4 was seen in training
    let scores: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let mut seen = vec![false; 10];
    seen[4] = true;
    let ranked = RankedList::from_scores(0, &scores, &seen);
    println!("ranking: {:?}", ranked.items);

    let test = [8, 5, 0];
    for k in [1, 3, 5] {
        println!(
            "k={k}  recall {:.3}  ndcg {:.3}  map {:.3}  map(literal) {:.3}",
            recall_at_k(&ranked, &test, k).unwrap(),
            ndcg_at_k(&ranked, &test, k).unwrap(),
            map_at_k(&ranked, &test, k, MapMode::Standard).unwrap(),
            map_at_k(&ranked, &test, k, MapMode::Literal).unwrap(),
        );
    }
    println!("MPR {:.2}%", mpr([(&ranked, &test[..])]).unwrap());
}
