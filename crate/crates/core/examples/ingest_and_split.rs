//! Raw click log to a dataset directory the CLI can train on.

use std::fs;

use expomf::ingest::layout::{read_dataset, write_dataset};
use expomf::ingest::{filter_and_binarize, load_interactions, split, RecordFormat, SplitProportions};

fn main() -> expomf::error::Result<()> {
    let dir = std::env::temp_dir().join("expomf-ingest-example");
    fs::create_dir_all(&dir).expect("temp dir");
    let log = dir.join("plays.csv");

    let mut text = String::from("user,song,plays\n");
    for u in 0..30 {
        for s in 0..25 {
            if (u * 7 + s * 3) % 5 < 2 {
                text.push_str(&format!("user{u},song{s},{}\n", 1 + (u + s) % 6));
            }
        }
    }
    // a zero count is not a click
    text.push_str("user0,song99,0\n");
    fs::write(&log, text).expect("write log");

    let raw = load_interactions(&log, RecordFormat::from_path(&log))?;
    let clicks = filter_and_binarize(&raw, 5, 5)?;
    println!("{} records -> {} users x {} items, {} clicks", raw.triples.len(), clicks.n_users(), clicks.n_items(), clicks.nnz());

    let data = split(&clicks, SplitProportions { train: 0.7, test: 0.2, validation: 0.1 }, 42)?;
    println!("train {} / validation {} / test {}", data.train.nnz(), data.validation.nnz(), data.test.nnz());

    let out = dir.join("dataset");
    write_dataset(&out, &data, None, None)?;
    assert_eq!(read_dataset(&out)?.data, data);
    println!("wrote {}", out.display());
    Ok(())
}
