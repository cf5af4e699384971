//! Rating-matrix ingestion: delimited-text loading, binarization, and the
//! seeded train/test split over users.
//!
//! Raw ratings live in [-10.00, +10.00] with 99 marking a missing rating.
//! Binarization maps ratings of +7.00 and above to 1 (like), everything
//! below to 0 (dislike), and the 99 sentinel to -1 (missing). The split is
//! over whole user rows: the downstream model consumes complete user
//! vectors, so users (not individual ratings) are held out.

use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Missing-rating sentinel in raw data.
pub const MISSING_RAW: f64 = 99.0;
/// Missing-rating marker in binarized data.
pub const MISSING: i8 = -1;
/// Like band lower bound, inclusive.
pub const LIKE_THRESHOLD: f64 = 7.0;

/// Dense user x joke matrix of raw ratings.
///
/// Every entry is either in [-10.00, +10.00] or the sentinel 99.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRatingMatrix {
    n_users: usize,
    n_jokes: usize,
    values: Vec<f64>,
}

impl RawRatingMatrix {
    /// Build from row-major values, validating the rating range.
    pub fn from_values(n_users: usize, n_jokes: usize, values: Vec<f64>) -> Result<Self> {
        if n_users == 0 || n_jokes == 0 {
            return Err(Error::Shape(format!(
                "matrix must be non-empty, got {n_users} x {n_jokes}"
            )));
        }
        if values.len() != n_users * n_jokes {
            return Err(Error::Shape(format!(
                "expected {} values for a {n_users} x {n_jokes} matrix, got {}",
                n_users * n_jokes,
                values.len()
            )));
        }
        for (idx, &v) in values.iter().enumerate() {
            if !rating_in_range(v) {
                return Err(Error::Range {
                    row: idx / n_jokes,
                    col: idx % n_jokes,
                    value: v,
                });
            }
        }
        Ok(Self {
            n_users,
            n_jokes,
            values,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_jokes(&self) -> usize {
        self.n_jokes
    }

    pub fn row(&self, user: usize) -> &[f64] {
        &self.values[user * self.n_jokes..(user + 1) * self.n_jokes]
    }

    pub fn get(&self, user: usize, joke: usize) -> f64 {
        self.values[user * self.n_jokes + joke]
    }
}

fn rating_in_range(v: f64) -> bool {
    (-10.0..=10.0).contains(&v) || v == MISSING_RAW
}

/// Dense user x joke matrix over {1 like, 0 dislike, -1 missing}.
///
/// This is the lingua franca of the pipeline: the imputation model trains on
/// it, the imputed datasets are instances of it with no -1 left, and the
/// clustering stages consume those.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryRatingMatrix {
    n_users: usize,
    n_jokes: usize,
    values: Vec<i8>,
}

impl BinaryRatingMatrix {
    /// Build from row-major entries, validating the {1, 0, -1} domain.
    pub fn from_values(n_users: usize, n_jokes: usize, values: Vec<i8>) -> Result<Self> {
        if n_users == 0 || n_jokes == 0 {
            return Err(Error::Shape(format!(
                "matrix must be non-empty, got {n_users} x {n_jokes}"
            )));
        }
        if values.len() != n_users * n_jokes {
            return Err(Error::Shape(format!(
                "expected {} values for a {n_users} x {n_jokes} matrix, got {}",
                n_users * n_jokes,
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !matches!(v, 1 | 0 | -1)) {
            return Err(Error::Parse {
                row: idx / n_jokes,
                col: idx % n_jokes,
                detail: format!("entry {} is not one of 1, 0, -1", values[idx]),
            });
        }
        Ok(Self {
            n_users,
            n_jokes,
            values,
        })
    }

    /// Build from per-user rows (mostly used by tests).
    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("matrix must have at least one row".into()));
        }
        let n_jokes = rows[0].len();
        if let Some(bad) = rows.iter().position(|r| r.len() != n_jokes) {
            return Err(Error::Shape(format!(
                "ragged rows: row 0 has {n_jokes} entries, row {bad} has {}",
                rows[bad].len()
            )));
        }
        let values: Vec<i8> = rows.iter().flatten().copied().collect();
        Self::from_values(rows.len(), n_jokes, values)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_jokes(&self) -> usize {
        self.n_jokes
    }

    pub fn row(&self, user: usize) -> &[i8] {
        &self.values[user * self.n_jokes..(user + 1) * self.n_jokes]
    }

    pub fn get(&self, user: usize, joke: usize) -> i8 {
        self.values[user * self.n_jokes + joke]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.values.chunks_exact(self.n_jokes)
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|&v| v == MISSING)
    }

    pub fn count_missing(&self) -> usize {
        self.values.iter().filter(|&&v| v == MISSING).count()
    }

    /// Matrix restricted to the given user rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * self.n_jokes);
        for &r in rows {
            if r >= self.n_users {
                return Err(Error::Shape(format!(
                    "row index {r} out of bounds for {} users",
                    self.n_users
                )));
            }
            values.extend_from_slice(self.row(r));
        }
        Self::from_values(rows.len(), self.n_jokes, values)
    }

    /// Rows as real-valued vectors (missing stays -1.0); feeds the
    /// Euclidean-space stages.
    pub fn to_real_rows(&self) -> Vec<Vec<f64>> {
        self.rows()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect()
    }
}

/// Disjoint train/test partition of user rows, reproducible from its seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub seed: u64,
}

/// Load a raw rating matrix from delimited text (comma or tab separated,
/// autodetected). One user per row, sentinel 99 literal.
///
/// When `has_count_column` is set, the leading field of every row is the
/// number of rated jokes; it is validated against the row's non-99 count and
/// dropped.
pub fn load_ratings(source: impl io::Read, has_count_column: bool) -> Result<RawRatingMatrix> {
    let reader = io::BufReader::new(source);
    let mut values: Vec<f64> = Vec::new();
    let mut n_jokes: Option<usize> = None;
    let mut n_users = 0usize;

    for (row, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sep = if line.contains('\t') { '\t' } else { ',' };
        let fields: Vec<&str> = line.split(sep).map(str::trim).collect();

        let mut parsed = Vec::with_capacity(fields.len());
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                col,
                detail: format!("{field:?} is not a number"),
            })?;
            parsed.push(v);
        }

        let ratings = if has_count_column {
            if parsed.is_empty() {
                return Err(Error::Parse {
                    row,
                    col: 0,
                    detail: "row has no fields".into(),
                });
            }
            let count = parsed[0];
            if count < 0.0 || count.fract() != 0.0 {
                return Err(Error::Parse {
                    row,
                    col: 0,
                    detail: format!("count column must be a non-negative integer, got {count}"),
                });
            }
            let rated = parsed[1..].iter().filter(|&&v| v != MISSING_RAW).count();
            if count as usize != rated {
                return Err(Error::Parse {
                    row,
                    col: 0,
                    detail: format!("count column says {count} but row has {rated} ratings"),
                });
            }
            &parsed[1..]
        } else {
            &parsed[..]
        };

        match n_jokes {
            None => n_jokes = Some(ratings.len()),
            Some(w) if w != ratings.len() => {
                return Err(Error::Shape(format!(
                    "ragged rows: row 0 has {w} ratings, row {row} has {}",
                    ratings.len()
                )));
            }
            _ => {}
        }

        let offset = usize::from(has_count_column);
        for (j, &v) in ratings.iter().enumerate() {
            if !rating_in_range(v) {
                return Err(Error::Range {
                    row,
                    col: j + offset,
                    value: v,
                });
            }
            values.push(v);
        }
        n_users += 1;
    }

    let n_jokes = n_jokes.ok_or_else(|| Error::Shape("input contains no data rows".into()))?;
    RawRatingMatrix::from_values(n_users, n_jokes, values)
}

/// Map raw ratings onto {1, 0, -1}.
///
/// Ratings in [+7.00, +10.00] become 1, ratings below +7.00 become 0, and
/// the 99 sentinel becomes -1. The +7.00 boundary is inclusive in the like
/// band.
pub fn binarize(raw: &RawRatingMatrix) -> BinaryRatingMatrix {
    let values = raw
        .values
        .iter()
        .map(|&v| {
            if v == MISSING_RAW {
                MISSING
            } else if v >= LIKE_THRESHOLD {
                1
            } else {
                0
            }
        })
        .collect();
    BinaryRatingMatrix {
        n_users: raw.n_users,
        n_jokes: raw.n_jokes,
        values,
    }
}

/// Seeded split of user rows into train and test sets.
///
/// The test set holds round(test_fraction * n_users) rows; both sides are
/// returned sorted. Deterministic for a fixed seed.
pub fn split_users(data: &BinaryRatingMatrix, test_fraction: f64, seed: u64) -> Result<UserSplit> {
    let n = data.n_users();
    if n < 2 {
        return Err(Error::Config(format!(
            "need at least 2 users to split, got {n}"
        )));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Config(format!(
            "test_fraction {test_fraction} leaves an empty train or test set on {n} users"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);

    let mut test_rows: Vec<usize> = indices[..n_test].to_vec();
    let mut train_rows: Vec<usize> = indices[n_test..].to_vec();
    test_rows.sort_unstable();
    train_rows.sort_unstable();

    Ok(UserSplit {
        train_rows,
        test_rows,
        seed,
    })
}

/// Write a raw rating matrix as comma-delimited text, ratings with two
/// decimals and the 99 sentinel as a bare `99`. With `include_count_column`
/// each row gains a leading rated-count field, matching the original
/// distribution's layout.
pub fn write_raw_matrix(
    matrix: &RawRatingMatrix,
    mut out: impl Write,
    include_count_column: bool,
) -> Result<()> {
    for user in 0..matrix.n_users() {
        let row = matrix.row(user);
        let mut line = String::with_capacity(row.len() * 7);
        if include_count_column {
            let count = row.iter().filter(|&&v| v != MISSING_RAW).count();
            line.push_str(&count.to_string());
        }
        for (j, &v) in row.iter().enumerate() {
            if j > 0 || include_count_column {
                line.push(',');
            }
            if v == MISSING_RAW {
                line.push_str("99");
            } else {
                line.push_str(&format!("{v:.2}"));
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Write a binary matrix as delimited text, one user per row, entries in
/// {1, 0, -1}.
pub fn write_binary_matrix(matrix: &BinaryRatingMatrix, mut out: impl Write) -> Result<()> {
    let mut line = String::with_capacity(matrix.n_jokes() * 3);
    for row in matrix.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(match v {
                1 => "1",
                0 => "0",
                _ => "-1",
            });
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Read a binary matrix from delimited text with entries in {1, 0, -1}.
pub fn read_binary_matrix(source: impl io::Read) -> Result<BinaryRatingMatrix> {
    let reader = io::BufReader::new(source);
    let mut rows: Vec<Vec<i8>> = Vec::new();
    for (row, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sep = if line.contains('\t') { '\t' } else { ',' };
        let mut entries = Vec::new();
        for (col, field) in line.split(sep).map(str::trim).enumerate() {
            let v: i8 = field.parse().map_err(|_| Error::Parse {
                row,
                col,
                detail: format!("{field:?} is not one of 1, 0, -1"),
            })?;
            if !matches!(v, 1 | 0 | -1) {
                return Err(Error::Parse {
                    row,
                    col,
                    detail: format!("entry {v} is not one of 1, 0, -1"),
                });
            }
            entries.push(v);
        }
        rows.push(entries);
    }
    BinaryRatingMatrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn load_with_count_column_drops_and_verifies_it() {
        let input = "2, 99, -7.82, 8.79\n";
        let m = load_ratings(input.as_bytes(), true).unwrap();
        assert_eq!(m.n_users(), 1);
        assert_eq!(m.n_jokes(), 3);
        assert_eq!(m.row(0), &[99.0, -7.82, 8.79]);
    }

    #[test]
    fn load_count_mismatch_is_an_error() {
        let input = "3, 99, -7.82, 8.79\n";
        let err = load_ratings(input.as_bytes(), true).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 0, col: 0, .. }), "{err}");
    }

    #[test]
    fn load_all_missing_row_passes_sentinels_through() {
        let m = load_ratings("99, 99, 99\n".as_bytes(), false).unwrap();
        assert_eq!(m.row(0), &[99.0, 99.0, 99.0]);
    }

    #[test]
    fn load_rejects_out_of_range_value() {
        let err = load_ratings("12.5, 1.0\n".as_bytes(), false).unwrap_err();
        match err {
            Error::Range { row, col, value } => {
                assert_eq!((row, col), (0, 0));
                assert_eq!(value, 12.5);
            }
            other => panic!("expected range error, got {other}"),
        }
    }

    #[test]
    fn load_rejects_ragged_rows() {
        let err = load_ratings("1.0, 2.0\n3.0\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn load_rejects_garbage_field_with_coordinates() {
        let err = load_ratings("1.0, abc\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 0, col: 1, .. }), "{err}");
    }

    #[test]
    fn load_autodetects_tabs() {
        let m = load_ratings("1.0\t-2.0\t99\n".as_bytes(), false).unwrap();
        assert_eq!(m.row(0), &[1.0, -2.0, 99.0]);
    }

    #[test]
    fn binarize_band_boundaries() {
        let raw = RawRatingMatrix::from_values(
            1,
            6,
            vec![7.0, 6.99, 99.0, -10.0, 10.0, 0.0],
        )
        .unwrap();
        let b = binarize(&raw);
        assert_eq!(b.row(0), &[1, 0, -1, 0, 1, 0]);
    }

    #[test]
    fn binarize_conformant_values_map_exactly() {
        let raw = RawRatingMatrix::from_values(1, 3, vec![0.0, 10.0, 99.0]).unwrap();
        assert_eq!(binarize(&raw).row(0), &[0, 1, -1]);
    }

    #[test]
    fn binarize_is_total_over_the_grid() {
        // Every representable 0.01-grid rating plus the sentinel.
        let mut values: Vec<f64> = (-1000..=1000).map(|i| i as f64 / 100.0).collect();
        values.push(99.0);
        let n = values.len();
        let raw = RawRatingMatrix::from_values(1, n, values.clone()).unwrap();
        let b = binarize(&raw);
        for (j, &v) in values.iter().enumerate() {
            let got = b.get(0, j);
            assert!(matches!(got, 1 | 0 | -1));
            let expect_like = v != 99.0 && (7.0..=10.0).contains(&v);
            assert_eq!(got == 1, expect_like, "rating {v}");
        }
    }

    #[test]
    fn split_sizes_match_fraction() {
        let m = BinaryRatingMatrix::from_values(100, 1, vec![0; 100]).unwrap();
        let s = split_users(&m, 0.2, 7).unwrap();
        assert_eq!(s.test_rows.len(), 20);
        assert_eq!(s.train_rows.len(), 80);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let m = BinaryRatingMatrix::from_values(50, 2, vec![0; 100]).unwrap();
        assert_eq!(split_users(&m, 0.2, 3).unwrap(), split_users(&m, 0.2, 3).unwrap());
        assert_ne!(split_users(&m, 0.2, 3).unwrap(), split_users(&m, 0.2, 4).unwrap());
    }

    #[test]
    fn split_rejects_empty_train_side() {
        let m = BinaryRatingMatrix::from_values(5, 1, vec![1; 5]).unwrap();
        // round(0.9 * 5) = 5 test rows -> no train rows left
        let err = split_users(&m, 0.9, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn split_partitions_rows_over_many_seeds() {
        let m = BinaryRatingMatrix::from_values(37, 1, vec![0; 37]).unwrap();
        for seed in 0..1000u64 {
            let s = split_users(&m, 0.2, seed).unwrap();
            let mut seen: HashSet<usize> = HashSet::new();
            for &r in s.train_rows.iter().chain(&s.test_rows) {
                assert!(seen.insert(r), "row {r} duplicated for seed {seed}");
            }
            assert_eq!(seen.len(), 37);
        }
    }

    #[test]
    fn binary_matrix_round_trips_through_text() {
        let m = BinaryRatingMatrix::from_rows(&[vec![1, 0, -1], vec![-1, -1, 1]]).unwrap();
        let mut buf = Vec::new();
        write_binary_matrix(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf), "1,0,-1\n-1,-1,1\n");
        let back = read_binary_matrix(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn raw_matrix_round_trips_through_text() {
        let m = RawRatingMatrix::from_values(2, 3, vec![7.0, 99.0, -9.66, 0.25, 10.0, 99.0])
            .unwrap();
        for count_column in [false, true] {
            let mut buf = Vec::new();
            write_raw_matrix(&m, &mut buf, count_column).unwrap();
            let back = load_ratings(&buf[..], count_column).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn read_binary_matrix_rejects_stray_values() {
        let err = read_binary_matrix("1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }
}
