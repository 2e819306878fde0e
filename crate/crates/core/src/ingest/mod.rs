//! Raw interaction logs to filtered, binarized, split matrices.

mod covariates;
pub mod layout;
mod location;

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use rand::Rng;

use crate::data::{seeded_rng, IdMap, InteractionMatrix};
use crate::error::{Error, Result};

pub use covariates::load_covariates;
pub use location::{cluster_locations, load_locations, soft_assign, KMeans};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Tsv,
    Csv,
}

impl RecordFormat {
    /// `.csv` means comma-separated, anything else tab-separated.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => RecordFormat::Csv,
            _ => RecordFormat::Tsv,
        }
    }

    fn delimiter(self) -> u8 {
        match self {
            RecordFormat::Tsv => b'\t',
            RecordFormat::Csv => b',',
        }
    }
}

/// Unaggregated `(user, item, count)` records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawInteractions {
    pub triples: Vec<(String, String, f64)>,
}

/// Read `user_id, item_id[, count]` records.
///
/// The count defaults to 1. A first record whose third column is not a
/// number is taken as a header, but only when more records follow it; a
/// lone record with a bad count is an error.
pub fn load_interactions(path: impl AsRef<Path>, format: RecordFormat) -> Result<RawInteractions> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);

    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push((line, rec));
    }

    let header = records.len() > 1
        && records[0]
            .1
            .get(2)
            .is_some_and(|c| c.parse::<f64>().is_err());

    let mut triples = Vec::with_capacity(records.len());
    for (line, rec) in records.iter().skip(usize::from(header)) {
        if rec.len() < 2 {
            return Err(parse_err(*line, "expected user_id and item_id".into()));
        }
        let count = match rec.get(2) {
            None | Some("") => 1.0,
            Some(raw) => raw
                .parse::<f64>()
                .map_err(|_| parse_err(*line, format!("count `{raw}` is not a number")))?,
        };
        if !(count.is_finite() && count >= 0.0) {
            return Err(parse_err(*line, format!("count {count} must be nonnegative")));
        }
        triples.push((rec[0].to_owned(), rec[1].to_owned(), count));
    }
    Ok(RawInteractions { triples })
}

/// Aggregate, binarize and filter to a fixed point.
///
/// Pairs with a positive total count become clicks. Users with fewer than
/// `min_user_items` clicks and items with fewer than `min_item_users` are
/// removed alternately until both constraints hold at once. Dense indices
/// follow first appearance in `raw`.
pub fn filter_and_binarize(
    raw: &RawInteractions,
    min_user_items: usize,
    min_item_users: usize,
) -> Result<InteractionMatrix> {
    if min_user_items == 0 {
        return Err(Error::config("min_user_items", "must be at least 1"));
    }
    if min_item_users == 0 {
        return Err(Error::config("min_item_users", "must be at least 1"));
    }

    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut totals: HashMap<(usize, usize), f64> = HashMap::new();
    let mut order = Vec::new();
    for (u, i, c) in &raw.triples {
        let key = (users.get_or_insert(u), items.get_or_insert(i));
        let entry = totals.entry(key).or_insert_with(|| {
            order.push(key);
            0.0
        });
        *entry += c;
    }
    let mut pairs: Vec<(usize, usize)> = order
        .into_iter()
        .filter(|k| totals[k] > 0.0)
        .collect();

    loop {
        let before = pairs.len();
        let mut user_deg = vec![0usize; users.len()];
        for &(u, _) in &pairs {
            user_deg[u] += 1;
        }
        pairs.retain(|&(u, _)| user_deg[u] >= min_user_items);
        let mut item_deg = vec![0usize; items.len()];
        for &(_, i) in &pairs {
            item_deg[i] += 1;
        }
        pairs.retain(|&(_, i)| item_deg[i] >= min_item_users);
        if pairs.len() == before {
            break;
        }
    }

    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no interactions survive min_user_items={min_user_items}, min_item_users={min_item_users}"
        )));
    }

    // pairs are still in first-seen order, so survivors are re-indexed in it too
    let mut user_map = vec![usize::MAX; users.len()];
    let mut item_map = vec![usize::MAX; items.len()];
    let mut kept_users = IdMap::new();
    let mut kept_items = IdMap::new();
    let mut entries = Vec::with_capacity(pairs.len());
    for &(u, i) in &pairs {
        if user_map[u] == usize::MAX {
            user_map[u] = kept_users.get_or_insert(users.id(u).expect("known user"));
        }
        if item_map[i] == usize::MAX {
            item_map[i] = kept_items.get_or_insert(items.id(i).expect("known item"));
        }
        entries.push((user_map[u], item_map[i], 1.0));
    }
    InteractionMatrix::from_entries(kept_users, kept_items, entries)
}

/// Three disjoint matrices over one shared index space.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: InteractionMatrix,
    pub validation: InteractionMatrix,
    pub test: InteractionMatrix,
    pub split_seed: u64,
}

impl SplitDataset {
    pub fn n_users(&self) -> usize {
        self.train.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items()
    }
}

/// Fractions of entries sent to train, test and validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitProportions {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
}

impl Default for SplitProportions {
    fn default() -> Self {
        Self {
            train: 0.7,
            test: 0.2,
            validation: 0.1,
        }
    }
}

/// Assign every entry independently to train / test / validation.
///
/// Entries are visited in row-major order and each consumes one uniform
/// draw from a generator seeded with `seed`.
pub fn split(matrix: &InteractionMatrix, proportions: SplitProportions, seed: u64) -> Result<SplitDataset> {
    let SplitProportions {
        train,
        test,
        validation,
    } = proportions;
    for (name, p) in [("train", train), ("test", test), ("validation", validation)] {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::config(
                "proportions",
                format!("{name} proportion must be positive, got {p}"),
            ));
        }
    }
    if ((train + test + validation) - 1.0).abs() > 1e-9 {
        return Err(Error::config("proportions", "proportions must sum to 1"));
    }

    let mut rng = seeded_rng(seed);
    let mut parts: [Vec<(usize, usize, f64)>; 3] = Default::default();
    for (u, i, v) in matrix.iter() {
        let draw: f64 = rng.random();
        let slot = if draw < train {
            0
        } else if draw < train + test {
            1
        } else {
            2
        };
        parts[slot].push((u, i, v));
    }
    let [tr, te, va] = parts;
    let build = |entries| {
        InteractionMatrix::from_entries(matrix.user_ids().clone(), matrix.item_ids().clone(), entries)
    };
    Ok(SplitDataset {
        train: build(tr)?,
        test: build(te)?,
        validation: build(va)?,
        split_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn raw(rows: &[(&str, &str, f64)]) -> RawInteractions {
        RawInteractions {
            triples: rows
                .iter()
                .map(|(u, i, c)| (u.to_string(), i.to_string(), *c))
                .collect(),
        }
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_keeps_duplicates() {
        let f = write_tmp("u1\ti1\t3\nu1\ti1\t2\n");
        let raw = load_interactions(f.path(), RecordFormat::Tsv).unwrap();
        assert_eq!(raw.triples.len(), 2);
        assert_eq!(raw.triples[1], ("u1".into(), "i1".into(), 2.0));
    }

    #[test]
    fn load_reports_bad_count_line() {
        let f = write_tmp("u1\ti1\tabc\n");
        match load_interactions(f.path(), RecordFormat::Tsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_empty_and_header() {
        let f = write_tmp("");
        assert!(load_interactions(f.path(), RecordFormat::Tsv).unwrap().triples.is_empty());
        let f = write_tmp("user,item,count\na,x,2\nb,y\n");
        let raw = load_interactions(f.path(), RecordFormat::Csv).unwrap();
        assert_eq!(raw.triples, vec![("a".into(), "x".into(), 2.0), ("b".into(), "y".into(), 1.0)]);
    }

    #[test]
    fn load_rejects_negative_count() {
        let f = write_tmp("a\tx\t1\nb\ty\t-2\n");
        assert!(matches!(
            load_interactions(f.path(), RecordFormat::Tsv),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn single_user_all_ones() {
        let m = filter_and_binarize(&raw(&[("u", "a", 3.0), ("u", "b", 1.0), ("u", "c", 7.0)]), 1, 1).unwrap();
        assert_eq!((m.n_users(), m.n_items(), m.nnz()), (1, 3, 3));
        assert!(m.is_binary());
    }

    #[test]
    fn zero_counts_are_dropped_and_duplicates_merge() {
        let m = filter_and_binarize(
            &raw(&[("u", "a", 0.0), ("u", "b", 1.0), ("u", "b", 4.0), ("v", "a", 1.0)]),
            1,
            1,
        )
        .unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.item_ids().iter().collect::<Vec<_>>(), vec!["b", "a"]);
    }

    #[test]
    fn iterative_filter_removes_user_on_second_pass() {
        // user A clicks items 1..5, but only item 1 is shared; B and C share 1 and 6
        let rows = [
            ("A", "1", 1.0),
            ("A", "2", 1.0),
            ("A", "3", 1.0),
            ("A", "4", 1.0),
            ("A", "5", 1.0),
            ("B", "1", 1.0),
            ("B", "6", 1.0),
            ("C", "1", 1.0),
            ("C", "6", 1.0),
        ];
        let m = filter_and_binarize(&raw(&rows), 2, 2).unwrap();
        assert_eq!(m.user_ids().iter().collect::<Vec<_>>(), vec!["B", "C"]);
        assert_eq!(m.item_ids().iter().collect::<Vec<_>>(), vec!["1", "6"]);
        assert_eq!(m.nnz(), 4);
    }

    #[test]
    fn empty_after_filter_is_error() {
        let err = filter_and_binarize(&raw(&[("u", "a", 1.0)]), 2, 1).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }

    fn grid_matrix() -> InteractionMatrix {
        let pairs: Vec<_> = (0..50).flat_map(|u| (0..20).map(move |i| (u, i))).collect();
        InteractionMatrix::from_pairs(50, 20, &pairs).unwrap()
    }

    #[test]
    fn split_sizes_within_binomial_bounds() {
        let m = grid_matrix();
        let s = split(&m, SplitProportions::default(), 42).unwrap();
        let n = 1000.0;
        for (part, p) in [(&s.train, 0.7), (&s.test, 0.2), (&s.validation, 0.1)] {
            let sd = (n * p * (1.0 - p) as f64).sqrt();
            assert!((part.nnz() as f64 - n * p).abs() <= 3.0 * sd, "{} vs {}", part.nnz(), n * p);
        }
        assert_eq!(s.train.nnz() + s.test.nnz() + s.validation.nnz(), 1000);
    }

    #[test]
    fn split_is_deterministic_and_rejects_degenerate() {
        let m = grid_matrix();
        assert_eq!(
            split(&m, SplitProportions::default(), 3).unwrap(),
            split(&m, SplitProportions::default(), 3).unwrap()
        );
        let bad = SplitProportions {
            train: 1.0,
            test: 0.0,
            validation: 0.0,
        };
        assert!(matches!(split(&m, bad, 3), Err(Error::Config { .. })));
    }
}
