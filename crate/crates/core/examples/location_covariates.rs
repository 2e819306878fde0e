//! Venue coordinates to soft cluster memberships, the covariates used for
//! check-in data.

use expomf::data::seeded_rng;
use expomf::ingest::{soft_assign, KMeans};
use rand::Rng;

fn main() -> expomf::error::Result<()> {
    // three neighbourhoods of venues
    let centers = [(40.71, -74.00), (40.76, -73.98), (40.68, -73.94)];
    let mut rng = seeded_rng(4);
    let mut venues: Vec<(f64, f64)> = (0..90)
        .map(|v| {
            let (lat, lon) = centers[v % 3];
            (lat + rng.random_range(-0.01..0.01), lon + rng.random_range(-0.01..0.01))
        })
        .collect();
    // one venue halfway between the first two neighbourhoods
    venues.push((40.735, -73.99));

    let km = KMeans::fit(&venues, 3, 0)?;
    println!("converged after {} iterations", km.iterations);
    for (c, (lat, lon)) in km.centroids.iter().enumerate() {
        println!("cluster {c}: ({lat:.4}, {lon:.4})");
    }

    let bandwidth = km.mean_within_distance(&venues);
    let x = soft_assign(&venues, &km.centroids, bandwidth)?;
    for v in [0, 1, 2, 90] {
        let row: Vec<String> = x.row(v).iter().map(|p| format!("{p:.3}")).collect();
        println!("venue {v} -> [{}]", row.join(", "));
    }
    Ok(())
}
