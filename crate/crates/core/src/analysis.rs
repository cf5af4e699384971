//! Cluster interpretation: per-cluster preference patterns, line-chart
//! emission, and the tie-based cluster-overlap test.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings_io::BinaryRatingMatrix;

/// Per-cluster like-fractions: values[c][j] is the share of cluster c's
/// members that like item j. Every value is an exact count ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePattern {
    pub k: usize,
    pub n_items: usize,
    pub values: Vec<Vec<f64>>,
    pub cluster_sizes: Vec<usize>,
}

/// Distance used by the overlap test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMetric {
    Matching,
    SquaredEuclidean,
}

impl fmt::Display for OverlapMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapMetric::Matching => "matching",
            OverlapMetric::SquaredEuclidean => "squared_euclidean",
        })
    }
}

impl FromStr for OverlapMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matching" => Ok(OverlapMetric::Matching),
            "squared_euclidean" => Ok(OverlapMetric::SquaredEuclidean),
            other => Err(Error::Config(format!(
                "unknown overlap metric {other:?} (expected matching or squared_euclidean)"
            ))),
        }
    }
}

/// Numeric rule for "equidistant".
///
/// Matching distances are integers, so exact ties (absolute 0) are safe.
/// Squared Euclidean distances against fractional centroids need a relative
/// band: threshold = rel * dmin, with an absolute floor once dmin is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "tolerance_mode", content = "tolerance")]
pub enum TieTolerance {
    Absolute(f64),
    Relative { rel: f64, floor: f64 },
}

impl TieTolerance {
    pub fn default_for(metric: OverlapMetric) -> Self {
        match metric {
            OverlapMetric::Matching => TieTolerance::Absolute(0.0),
            OverlapMetric::SquaredEuclidean => TieTolerance::Relative {
                rel: 1e-9,
                floor: 1e-12,
            },
        }
    }

    fn threshold(&self, dmin: f64) -> f64 {
        match *self {
            TieTolerance::Absolute(t) => t,
            TieTolerance::Relative { rel, floor } => {
                if dmin == 0.0 {
                    floor
                } else {
                    rel * dmin
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TieTolerance::Absolute(t) => t >= 0.0 && t.is_finite(),
            TieTolerance::Relative { rel, floor } => {
                rel >= 0.0 && rel.is_finite() && floor >= 0.0 && floor.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("tolerance must be finite and >= 0: {self:?}")))
        }
    }
}

/// Cluster pairs tied for nearest centroid, with tied-point counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub metric: OverlapMetric,
    #[serde(flatten)]
    pub tolerance: TieTolerance,
    /// Unordered pairs (a, b) with a < b, sorted.
    pub pairs: Vec<(usize, usize)>,
    /// Tied-point count per pair, parallel to `pairs`.
    pub counts: Vec<usize>,
}

impl OverlapReport {
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }
}

/// Like-fraction per (cluster, item): the share of readers in cluster c
/// whose d2 value for item j is 1.
pub fn preference_patterns(
    labels: &[usize],
    d2: &BinaryRatingMatrix,
    k: usize,
) -> Result<PreferencePattern> {
    if labels.len() != d2.n_users() {
        return Err(Error::Shape(format!(
            "{} labels for {} users",
            labels.len(),
            d2.n_users()
        )));
    }
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if d2.has_missing() {
        return Err(Error::Analysis(
            "preference patterns require data with no missing entries".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Analysis(format!("label {bad} out of range for k = {k}")));
    }

    let n_items = d2.n_jokes();
    let mut like_counts = vec![vec![0usize; n_items]; k];
    let mut cluster_sizes = vec![0usize; k];
    for (row, &label) in d2.rows().zip(labels) {
        cluster_sizes[label] += 1;
        for (j, &v) in row.iter().enumerate() {
            like_counts[label][j] += usize::from(v == 1);
        }
    }
    if let Some(empty) = cluster_sizes.iter().position(|&s| s == 0) {
        return Err(Error::Analysis(format!(
            "cluster {empty} is empty; preference values would divide by zero"
        )));
    }

    let values = like_counts
        .iter()
        .zip(&cluster_sizes)
        .map(|(counts, &size)| counts.iter().map(|&c| c as f64 / size as f64).collect())
        .collect();

    Ok(PreferencePattern {
        k,
        n_items,
        values,
        cluster_sizes,
    })
}

/// Find cluster pairs that share (near-)equidistant points.
///
/// For every row the distances to all centroids are computed; each centroid
/// within the tolerance of the minimum is tied, and every pair among >= 2
/// tied centroids is reported with a count of how many points tie it.
pub fn overlap_test(
    centroids: &[Vec<f64>],
    data: &[Vec<f64>],
    metric: OverlapMetric,
    tolerance: TieTolerance,
) -> Result<OverlapReport> {
    tolerance.validate()?;
    if centroids.is_empty() {
        return Err(Error::Config("overlap test needs at least one centroid".into()));
    }
    let d = centroids[0].len();
    for c in centroids {
        if c.len() != d {
            return Err(Error::Shape("centroids have inconsistent widths".into()));
        }
    }
    for row in data {
        if row.len() != d {
            return Err(Error::Shape(format!(
                "data width {} does not match centroid width {d}",
                row.len()
            )));
        }
    }
    if metric == OverlapMetric::Matching {
        let binary = |v: f64| v == 0.0 || v == 1.0;
        if !centroids.iter().flatten().all(|&v| binary(v))
            || !data.iter().flatten().all(|&v| binary(v))
        {
            return Err(Error::Analysis(
                "matching metric requires 0/1 entries with no missing markers".into(),
            ));
        }
    }

    let distance = |x: &[f64], y: &[f64]| -> f64 {
        match metric {
            OverlapMetric::Matching => x.iter().zip(y).filter(|(a, b)| a != b).count() as f64,
            OverlapMetric::SquaredEuclidean => {
                x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
            }
        }
    };

    let mut tally: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut dists = vec![0.0f64; centroids.len()];
    let mut tied = Vec::new();
    for row in data {
        for (c, centroid) in centroids.iter().enumerate() {
            dists[c] = distance(row, centroid);
        }
        let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let threshold = tolerance.threshold(dmin);
        tied.clear();
        tied.extend(
            dists
                .iter()
                .enumerate()
                .filter(|(_, &d)| d - dmin <= threshold)
                .map(|(c, _)| c),
        );
        if tied.len() >= 2 {
            for (i, &a) in tied.iter().enumerate() {
                for &b in &tied[i + 1..] {
                    *tally.entry((a, b)).or_insert(0) += 1;
                }
            }
        }
    }

    let (pairs, counts) = tally.into_iter().unzip();
    Ok(OverlapReport {
        metric,
        tolerance,
        pairs,
        counts,
    })
}

/// Serialize an overlap report as JSON.
pub fn save_overlap(report: &OverlapReport, out: impl io::Write) -> Result<()> {
    serde_json::to_writer_pretty(out, report)?;
    Ok(())
}

/// Write the pattern as delimited text: one row per cluster, n_items
/// columns, 6-decimal fixed-point.
pub fn write_pattern_csv(pattern: &PreferencePattern, mut out: impl Write) -> Result<()> {
    for row in &pattern.values {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Re-parse a pattern CSV written by [`write_pattern_csv`].
pub fn read_pattern_csv(source: impl io::Read) -> Result<Vec<Vec<f64>>> {
    use std::io::BufRead;
    let reader = io::BufReader::new(source);
    let mut rows = Vec::new();
    for (row, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut values = Vec::new();
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                col,
                detail: format!("{field:?} is not a number"),
            })?;
            values.push(v);
        }
        rows.push(values);
    }
    Ok(rows)
}

const SVG_WIDTH: f64 = 1000.0;
const SVG_HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Render the pattern as a static SVG 1.1 line chart (1000x400): one
/// polyline per cluster, x = item index 1..n_items, y in [0, 1], with axes
/// and a legend naming the clusters.
pub fn write_pattern_svg(pattern: &PreferencePattern, mut out: impl Write) -> Result<()> {
    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let n = pattern.n_items;
    let x_of = |j: usize| {
        if n <= 1 {
            MARGIN_LEFT + plot_w / 2.0
        } else {
            MARGIN_LEFT + plot_w * j as f64 / (n - 1) as f64
        }
    };
    let y_of = |v: f64| MARGIN_TOP + plot_h * (1.0 - v);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" \
         viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    ));
    s.push_str(&format!(
        "  <rect width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" fill=\"white\"/>\n"
    ));

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = MARGIN_LEFT + plot_w;
    let y0 = MARGIN_TOP + plot_h;
    let y1 = MARGIN_TOP;
    s.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    s.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        let y = y_of(v);
        s.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        s.push_str(&format!(
            "  <text x=\"{}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{v:.2}</text>\n",
            x0 - 8.0,
            y + 4.0
        ));
    }
    let x_tick_step = (n / 10).max(1);
    let mut j = 0;
    while j < n {
        let x = x_of(j);
        s.push_str(&format!(
            "  <line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        s.push_str(&format!(
            "  <text x=\"{x:.2}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            y0 + 18.0,
            j + 1
        ));
        j += x_tick_step;
    }
    s.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">item</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        SVG_HEIGHT - 10.0
    ));
    s.push_str(&format!(
        "  <text x=\"15\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" \
         transform=\"rotate(-90 15 {:.2})\">preference</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    ));

    // One polyline per cluster plus its legend entry.
    for (c, row) in pattern.values.iter().enumerate() {
        let color = PALETTE[c % PALETTE.len()];
        let points: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, &v)| format!("{:.2},{:.2}", x_of(j), y_of(v)))
            .collect();
        s.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = MARGIN_TOP + 12.0 + 18.0 * c as f64;
        let lx = x1 + 15.0;
        s.push_str(&format!(
            "  <line x1=\"{lx}\" y1=\"{ly:.2}\" x2=\"{}\" y2=\"{ly:.2}\" \
             stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            lx + 25.0
        ));
        s.push_str(&format!(
            "  <text x=\"{}\" y=\"{:.2}\" font-size=\"12\">cluster {c}</text>\n",
            lx + 30.0,
            ly + 4.0
        ));
    }

    s.push_str("</svg>\n");
    out.write_all(s.as_bytes())?;
    Ok(())
}

/// Write both pattern artifacts: the delimited values and the SVG chart.
pub fn emit_pattern_chart(
    pattern: &PreferencePattern,
    csv_out: impl Write,
    svg_out: impl Write,
) -> Result<()> {
    write_pattern_csv(pattern, csv_out)?;
    write_pattern_svg(pattern, svg_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(rows: &[Vec<i8>]) -> BinaryRatingMatrix {
        BinaryRatingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn preference_is_the_like_fraction() {
        // Cluster 0: 3 readers, 2 like item 1. Cluster 1: 1 reader.
        let d2 = binary(&[
            vec![0, 1, 1],
            vec![0, 1, 0],
            vec![0, 0, 0],
            vec![1, 1, 1],
        ]);
        let p = preference_patterns(&[0, 0, 0, 1], &d2, 2).unwrap();
        assert_eq!(p.cluster_sizes, vec![3, 1]);
        assert_eq!(p.values[0][0], 0.0);
        assert_eq!(p.values[0][1], 2.0 / 3.0);
        assert_eq!(p.values[1], vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn preference_bounds() {
        let d2 = binary(&[vec![1, 0], vec![1, 0]]);
        let p = preference_patterns(&[0, 0], &d2, 1).unwrap();
        assert_eq!(p.values[0], vec![1.0, 0.0]);
    }

    #[test]
    fn preference_rejects_empty_cluster_and_missing() {
        let d2 = binary(&[vec![1, 0]]);
        assert!(matches!(
            preference_patterns(&[0], &d2, 2),
            Err(Error::Analysis(_))
        ));
        let with_missing = binary(&[vec![1, -1]]);
        assert!(matches!(
            preference_patterns(&[0], &with_missing, 1),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn preference_values_are_exact_ratios() {
        let d2 = binary(&[
            vec![1, 0, 1],
            vec![0, 0, 1],
            vec![1, 1, 1],
            vec![0, 1, 0],
            vec![1, 1, 0],
        ]);
        let labels = [0, 1, 0, 1, 0];
        let p = preference_patterns(&labels, &d2, 2).unwrap();
        assert_eq!(p.cluster_sizes.iter().sum::<usize>(), 5);
        for (c, row) in p.values.iter().enumerate() {
            for &v in row {
                assert!((0.0..=1.0).contains(&v));
                let scaled = v * p.cluster_sizes[c] as f64;
                assert_eq!(scaled, scaled.round(), "value {v} is not a count ratio");
            }
        }
    }

    #[test]
    fn overlap_reports_constructed_tie() {
        let centroids = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let data = vec![vec![0.0, 1.0]];
        let r = overlap_test(
            &centroids,
            &data,
            OverlapMetric::Matching,
            TieTolerance::Absolute(0.0),
        )
        .unwrap();
        assert_eq!(r.pairs, vec![(0, 1)]);
        assert_eq!(r.counts, vec![1]);
    }

    #[test]
    fn overlap_ignores_clear_winners() {
        let centroids = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let data = vec![vec![0.0, 0.0]];
        let r = overlap_test(
            &centroids,
            &data,
            OverlapMetric::Matching,
            TieTolerance::Absolute(0.0),
        )
        .unwrap();
        assert!(r.pairs.is_empty());
    }

    #[test]
    fn overlap_with_identical_centroids_reports_all_pairs() {
        let centroids = vec![vec![0.0, 1.0]; 3];
        let data = vec![vec![1.0, 1.0]];
        let r = overlap_test(
            &centroids,
            &data,
            OverlapMetric::SquaredEuclidean,
            TieTolerance::default_for(OverlapMetric::SquaredEuclidean),
        )
        .unwrap();
        assert_eq!(r.pairs, vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(r.counts, vec![1, 1, 1]);
    }

    #[test]
    fn overlap_matching_rejects_fractional_entries() {
        let centroids = vec![vec![0.5]];
        let data = vec![vec![1.0]];
        assert!(matches!(
            overlap_test(
                &centroids,
                &data,
                OverlapMetric::Matching,
                TieTolerance::Absolute(0.0)
            ),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn overlap_tolerance_is_monotone() {
        let centroids = vec![vec![0.0], vec![1.0], vec![3.0]];
        let data = vec![vec![0.4], vec![0.5], vec![2.0]];
        let mut previous = 0;
        for tol in [0.0, 0.2, 1.0, 5.0, 10.0] {
            let r = overlap_test(
                &centroids,
                &data,
                OverlapMetric::SquaredEuclidean,
                TieTolerance::Absolute(tol),
            )
            .unwrap();
            assert!(r.pair_count() >= previous, "pairs shrank at tol {tol}");
            previous = r.pair_count();
        }
    }

    #[test]
    fn overlap_is_invariant_under_relabeling() {
        let centroids = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        let data = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let base = overlap_test(
            &centroids,
            &data,
            OverlapMetric::Matching,
            TieTolerance::Absolute(0.0),
        )
        .unwrap();

        // Swap clusters 0 and 2; the report must permute accordingly.
        let swapped: Vec<Vec<f64>> = vec![
            centroids[2].clone(),
            centroids[1].clone(),
            centroids[0].clone(),
        ];
        let permuted = overlap_test(
            &swapped,
            &data,
            OverlapMetric::Matching,
            TieTolerance::Absolute(0.0),
        )
        .unwrap();
        let relabel = |c: usize| match c {
            0 => 2,
            2 => 0,
            other => other,
        };
        let mut expected: Vec<((usize, usize), usize)> = base
            .pairs
            .iter()
            .zip(&base.counts)
            .map(|(&(a, b), &n)| {
                let (x, y) = (relabel(a), relabel(b));
                ((x.min(y), x.max(y)), n)
            })
            .collect();
        expected.sort();
        let got: Vec<((usize, usize), usize)> = permuted
            .pairs
            .iter()
            .zip(&permuted.counts)
            .map(|(&p, &n)| (p, n))
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn svg_has_one_polyline_per_cluster_with_all_vertices() {
        let pattern = PreferencePattern {
            k: 3,
            n_items: 100,
            values: vec![vec![0.25; 100], vec![0.5; 100], vec![0.75; 100]],
            cluster_sizes: vec![4, 4, 4],
        };
        let mut buf = Vec::new();
        write_pattern_svg(&pattern, &mut buf).unwrap();
        let svg = String::from_utf8(buf).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        for part in svg.split("points=\"").skip(1) {
            let points = part.split('"').next().unwrap();
            assert_eq!(points.split_whitespace().count(), 100);
        }
        assert!(svg.contains("cluster 0") && svg.contains("cluster 2"));
        assert!(svg.contains("version=\"1.1\""));
    }

    #[test]
    fn constant_pattern_draws_a_horizontal_line() {
        let pattern = PreferencePattern {
            k: 1,
            n_items: 10,
            values: vec![vec![0.5; 10]],
            cluster_sizes: vec![2],
        };
        let mut buf = Vec::new();
        write_pattern_svg(&pattern, &mut buf).unwrap();
        let svg = String::from_utf8(buf).unwrap();
        let points_attr = svg.split("points=\"").nth(1).unwrap();
        let points = points_attr.split('"').next().unwrap();
        let ys: Vec<&str> = points
            .split_whitespace()
            .map(|p| p.split(',').nth(1).unwrap())
            .collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]), "not horizontal: {ys:?}");
    }

    #[test]
    fn pattern_csv_round_trips_representable_values() {
        let pattern = PreferencePattern {
            k: 2,
            n_items: 4,
            values: vec![vec![0.25, 0.5, 0.75, 1.0], vec![0.0, 0.125, 0.625, 0.875]],
            cluster_sizes: vec![8, 8],
        };
        let mut buf = Vec::new();
        write_pattern_csv(&pattern, &mut buf).unwrap();
        let back = read_pattern_csv(&buf[..]).unwrap();
        assert_eq!(back, pattern.values);
    }

    #[test]
    fn overlap_report_serializes_to_documented_shape() {
        let r = OverlapReport {
            metric: OverlapMetric::Matching,
            tolerance: TieTolerance::Absolute(0.0),
            pairs: vec![(0, 2), (1, 2)],
            counts: vec![3, 1],
        };
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["metric"], "matching");
        assert_eq!(json["tolerance"], 0.0);
        assert_eq!(json["pairs"][0][0], 0);
        assert_eq!(json["pairs"][0][1], 2);
        assert_eq!(json["counts"][1], 1);
    }
}
