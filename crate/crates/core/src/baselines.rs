//! Reference aggregation rules: FedAvg, coordinate-wise median, trimmed mean
//! and the Weiszfeld geometric median. Each acts on the generator and the
//! classifier exactly as the verified aggregation does.

use serde::{Deserialize, Serialize};

use crate::client::Upload;
use crate::error::{FedFgError, Result};
use crate::model::PublicModel;
use crate::server::weighted_sum;
use crate::stats::{canonical_sum, median};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregatorKind {
    #[default]
    Fedfg,
    Fedavg,
    CoordMedian,
    TrimmedMean {
        /// Fraction trimmed from each end; `None` trims the attack fraction.
        #[serde(default)]
        trim_fraction: Option<f64>,
    },
    GeometricMedian {
        #[serde(default = "default_gm_tol")]
        tol: f64,
        #[serde(default = "default_gm_iters")]
        max_iters: usize,
    },
}

fn default_gm_tol() -> f64 {
    1e-6
}

fn default_gm_iters() -> usize {
    200
}

impl AggregatorKind {
    pub fn geometric_median() -> Self {
        AggregatorKind::GeometricMedian {
            tol: default_gm_tol(),
            max_iters: default_gm_iters(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorKind::Fedfg => "fedfg",
            AggregatorKind::Fedavg => "fedavg",
            AggregatorKind::CoordMedian => "coord_median",
            AggregatorKind::TrimmedMean { .. } => "trimmed_mean",
            AggregatorKind::GeometricMedian { .. } => "geometric_median",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AggregatorKind::TrimmedMean {
                trim_fraction: Some(b),
            } if !(0.0..0.5).contains(&b) => Err(FedFgError::config(
                "aggregator.trim_fraction",
                "must lie in [0, 0.5)",
            )),
            AggregatorKind::GeometricMedian { tol, max_iters } if !(tol > 0.0) || max_iters == 0 => Err(
                FedFgError::config("aggregator", "geometric median needs tol > 0 and max_iters >= 1"),
            ),
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = FedFgError;

    /// Parses a bare rule name (`coord_median` or `coord-median`) with default settings.
    fn from_str(name: &str) -> Result<Self> {
        match name.replace('-', "_").as_str() {
            "fedfg" => Ok(AggregatorKind::Fedfg),
            "fedavg" => Ok(AggregatorKind::Fedavg),
            "coord_median" => Ok(AggregatorKind::CoordMedian),
            "trimmed_mean" => Ok(AggregatorKind::TrimmedMean { trim_fraction: None }),
            "geometric_median" => Ok(AggregatorKind::geometric_median()),
            _ => Err(FedFgError::config("aggregator", format!("unknown aggregator `{name}`"))),
        }
    }
}

fn stack(uploads: &[Upload]) -> Result<(PublicModel, Vec<Vec<f64>>)> {
    let first = uploads
        .first()
        .ok_or_else(|| FedFgError::invalid("aggregation needs at least one upload"))?
        .public();
    let mut points = Vec::with_capacity(uploads.len());
    for up in uploads {
        let p = up.public();
        first.ensure_same_layout(&p, "baseline aggregation")?;
        points.push(p.stacked());
    }
    Ok((first, points))
}

/// Data-size weighted mean.
pub fn fedavg(uploads: &[Upload], data_sizes: &[usize]) -> Result<PublicModel> {
    if data_sizes.len() != uploads.len() || data_sizes.iter().any(|&n| n == 0) {
        return Err(FedFgError::invalid("FedAvg needs one positive data size per upload"));
    }
    let total: usize = data_sizes.iter().sum();
    let weights: Vec<f64> = data_sizes.iter().map(|&n| n as f64 / total as f64).collect();
    weighted_sum(uploads, &weights)
}

/// Per-coordinate median of equally long points.
pub fn coordinate_median(points: &[Vec<f64>]) -> Vec<f64> {
    let dim = points.first().map_or(0, Vec::len);
    let mut column = Vec::with_capacity(points.len());
    (0..dim)
        .map(|c| {
            column.clear();
            column.extend(points.iter().map(|p| p[c]));
            median(&column).expect("non-empty")
        })
        .collect()
}

pub fn coord_median(uploads: &[Upload]) -> Result<PublicModel> {
    let (template, points) = stack(uploads)?;
    template.from_stacked(coordinate_median(&points))
}

/// Number of values dropped from each end for trim fraction `b` over `n` inputs.
pub fn trim_count(n: usize, b: f64) -> Result<usize> {
    if !(0.0..0.5).contains(&b) {
        return Err(FedFgError::config("trim_fraction", "must lie in [0, 0.5)"));
    }
    let k = (b * n as f64).floor() as usize;
    if n < 2 * k + 1 {
        return Err(FedFgError::config(
            "trim_fraction",
            format!("trimming {k} from each side of {n} values leaves nothing"),
        ));
    }
    Ok(k)
}

/// Per-coordinate mean after dropping the `floor(b n)` smallest and largest values.
pub fn coordinate_trimmed_mean(points: &[Vec<f64>], b: f64) -> Result<Vec<f64>> {
    let n = points.len();
    let k = trim_count(n, b)?;
    let dim = points.first().map_or(0, Vec::len);
    let mut column = Vec::with_capacity(n);
    Ok((0..dim)
        .map(|c| {
            column.clear();
            column.extend(points.iter().map(|p| p[c]));
            column.sort_by(f64::total_cmp);
            let kept = &column[k..n - k];
            kept.iter().sum::<f64>() / kept.len() as f64
        })
        .collect())
}

pub fn trimmed_mean(uploads: &[Upload], b: f64) -> Result<PublicModel> {
    let (template, points) = stack(uploads)?;
    template.from_stacked(coordinate_trimmed_mean(&points, b)?)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sum of Euclidean distances from `y` to every point.
pub fn geometric_objective(points: &[Vec<f64>], y: &[f64]) -> f64 {
    let mut d: Vec<f64> = points.iter().map(|p| distance(p, y)).collect();
    canonical_sum(&mut d)
}

/// Weiszfeld iteration with the Vardi–Zhang modification for iterates that
/// land on an input point. Starts from the coordinate-wise mean.
pub fn weiszfeld(points: &[Vec<f64>], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    const COINCIDE: f64 = 1e-12;
    let n = points.len();
    if n == 0 {
        return Err(FedFgError::invalid("geometric median of no points"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(FedFgError::invalid("geometric median points differ in length"));
    }
    let mut y: Vec<f64> = (0..dim)
        .map(|c| {
            let mut col: Vec<f64> = points.iter().map(|p| p[c]).collect();
            canonical_sum(&mut col) / n as f64
        })
        .collect();
    let mut weights = Vec::with_capacity(n);
    let mut term = Vec::with_capacity(n);
    for _ in 0..max_iters {
        weights.clear();
        let mut coincident = 0usize;
        for p in points {
            let d = distance(p, &y);
            if d < COINCIDE {
                coincident += 1;
                weights.push(0.0);
            } else {
                weights.push(1.0 / d);
            }
        }
        let wsum = canonical_sum(&mut weights.clone());
        if wsum == 0.0 {
            // Every point coincides with y.
            return Ok(y);
        }
        let mut t = vec![0.0; dim];
        for (c, slot) in t.iter_mut().enumerate() {
            term.clear();
            term.extend(points.iter().zip(&weights).map(|(p, w)| w * p[c]));
            *slot = canonical_sum(&mut term) / wsum;
        }
        let next = if coincident > 0 {
            // Vardi–Zhang: R(y) = sum_{i not at y} (x_i - y) / d_i.
            let r: f64 = t
                .iter()
                .zip(&y)
                .map(|(tc, yc)| (tc - yc) * wsum)
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            let eta = coincident as f64;
            if r <= eta {
                return Ok(y);
            }
            let beta = 1.0 - eta / r;
            t.iter().zip(&y).map(|(tc, yc)| beta * tc + (1.0 - beta) * yc).collect()
        } else {
            t
        };
        let step = distance(&next, &y);
        y = next;
        if step < tol {
            break;
        }
    }
    Ok(y)
}

pub fn geometric_median(uploads: &[Upload], tol: f64, max_iters: usize) -> Result<PublicModel> {
    let (template, points) = stack(uploads)?;
    template.from_stacked(weiszfeld(&points, tol, max_iters)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layout, ParamVector, Segment};

    #[test]
    fn names_parse_in_both_spellings() {
        for kind in [
            AggregatorKind::Fedfg,
            AggregatorKind::Fedavg,
            AggregatorKind::CoordMedian,
            AggregatorKind::TrimmedMean { trim_fraction: None },
            AggregatorKind::geometric_median(),
        ] {
            assert_eq!(kind.name().parse::<AggregatorKind>().unwrap(), kind);
            assert_eq!(kind.name().replace('_', "-").parse::<AggregatorKind>().unwrap(), kind);
        }
        assert!("krum".parse::<AggregatorKind>().is_err());
    }

    fn up(id: usize, c: &[f64]) -> Upload {
        let gl = Layout::new(vec![Segment::new("generator.x", vec![1])]);
        let cl = Layout::new(vec![Segment::new("classifier.x", vec![c.len()])]);
        Upload::new(
            id,
            PublicModel {
                generator: ParamVector::new(gl, vec![0.0]).unwrap(),
                classifier: ParamVector::new(cl, c.to_vec()).unwrap(),
            },
        )
    }

    #[test]
    fn fedavg_cases() {
        let ups = [up(0, &[0.0]), up(1, &[2.0])];
        assert_eq!(fedavg(&ups, &[5, 5]).unwrap().classifier.values(), &[1.0]);
        let ups = [up(0, &[0.0]), up(1, &[4.0])];
        assert_eq!(fedavg(&ups, &[3, 1]).unwrap().classifier.values(), &[1.0]);
        assert_eq!(fedavg(&ups[..1], &[7]).unwrap(), ups[0].public());
        assert!(fedavg(&ups, &[0, 1]).is_err());
    }

    #[test]
    fn median_cases() {
        let ups = [up(0, &[1.0]), up(1, &[2.0]), up(2, &[100.0])];
        assert_eq!(coord_median(&ups).unwrap().classifier.values(), &[2.0]);
        let ups = [up(0, &[1.0]), up(1, &[3.0])];
        assert_eq!(coord_median(&ups).unwrap().classifier.values(), &[2.0]);
        let mut ups: Vec<Upload> = (0..5).map(|i| up(i, &[0.5, -1.0])).collect();
        ups[3] = up(3, &[1e9, 1e9]);
        assert_eq!(coord_median(&ups).unwrap().classifier.values(), &[0.5, -1.0]);
    }

    #[test]
    fn trimmed_mean_cases() {
        let ups: Vec<Upload> = [1.0, 2.0, 3.0, 100.0].iter().enumerate().map(|(i, &v)| up(i, &[v])).collect();
        assert_eq!(trimmed_mean(&ups, 0.25).unwrap().classifier.values(), &[2.5]);
        assert_eq!(trimmed_mean(&ups, 0.0).unwrap().classifier.values(), &[26.5]);
        let same: Vec<Upload> = (0..6).map(|i| up(i, &[0.75])).collect();
        for b in [0.0, 0.2, 0.4, 0.49] {
            assert_eq!(trimmed_mean(&same, b).unwrap().classifier.values(), &[0.75]);
        }
        assert!(trimmed_mean(&ups, 0.5).is_err());
        assert!(trim_count(2, 0.49).is_ok());
    }

    #[test]
    fn geometric_median_cases() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![10.0, 0.0]];
        let y = weiszfeld(&pts, 1e-10, 1000).unwrap();
        assert!(y[0].abs() < 1e-8 && y[1].abs() < 1e-8, "{y:?}");

        let square = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]];
        let y = weiszfeld(&square, 1e-9, 1000).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9);

        // Starting exactly on a data point that is the median.
        let star = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let y = weiszfeld(&star, 1e-9, 100).unwrap();
        assert!(y[0].abs() < 1e-12 && y[1].abs() < 1e-12);
        assert!(weiszfeld(&[], 1e-6, 10).is_err());
    }

    #[test]
    fn kind_validation() {
        assert!(AggregatorKind::TrimmedMean { trim_fraction: Some(0.5) }.validate().is_err());
        assert!(AggregatorKind::geometric_median().validate().is_ok());
    }
}
