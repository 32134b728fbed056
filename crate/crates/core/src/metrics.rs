//! Streaming confusion counting and the metrics derived from it.
//!
//! Evaluation is split into [`ConfusionAccumulator::accumulate`] (one pass per
//! mask pair) and [`finalize`]. Accumulators from independent shards merge by
//! element-wise addition, so per-worker accumulation followed by a merge gives
//! the same result as a single sequential pass.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::schema::{ClassSchema, IGNORE_INDEX};
use crate::tensor_io::LabelMap;

/// Number of confused pairs attached to a report by default.
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: gt {gt:?} vs pred {pred:?}")]
    DimensionMismatch {
        gt: (usize, usize),
        pred: (usize, usize),
    },
    #[error("{which} label {value} at (row {row}, col {col}) is out of range for {classes} classes")]
    IndexOutOfRange {
        which: &'static str,
        value: u8,
        row: usize,
        col: usize,
        classes: usize,
    },
    #[error("cannot merge accumulators with {0} and {1} classes")]
    ClassCountMismatch(usize, usize),
    #[error("accumulator has seen no pixels")]
    EmptyAccumulator,
    #[error("schema defines {schema} classes but accumulator has {acc}")]
    SchemaMismatch { schema: usize, acc: usize },
    #[error("{0}")]
    Exclusion(String),
}

/// C×C pixel counts, rows indexed by ground truth and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionAccumulator {
    classes: usize,
    counts: Vec<u64>,
    pixels_seen: u64,
}

impl ConfusionAccumulator {
    pub fn new(classes: usize) -> Self {
        ConfusionAccumulator {
            classes,
            counts: vec![0; classes * classes],
            pixels_seen: 0,
        }
    }

    /// Builds an accumulator from a row-major C×C count grid.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), classes * classes, "count grid must be C x C");
        let pixels_seen = counts.iter().sum();
        ConfusionAccumulator {
            classes,
            counts,
            pixels_seen,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixels_seen(&self) -> u64 {
        self.pixels_seen
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn row_total(&self, gt: usize) -> u64 {
        self.counts[gt * self.classes..(gt + 1) * self.classes].iter().sum()
    }

    pub fn col_total(&self, pred: usize) -> u64 {
        (0..self.classes).map(|g| self.count(g, pred)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }

    /// Adds one gt/pred pair. Pixels whose ground truth is the ignore index
    /// are skipped. On error the accumulator is left untouched.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<(), MetricsError> {
        if !gt.same_shape(pred) {
            return Err(MetricsError::DimensionMismatch {
                gt: (gt.height(), gt.width()),
                pred: (pred.height(), pred.width()),
            });
        }
        let c = self.classes;
        let out_of_range = |which, at: usize, value| MetricsError::IndexOutOfRange {
            which,
            value,
            row: at / gt.width(),
            col: at % gt.width(),
            classes: c,
        };
        // Validate before touching the counts.
        let bad = gt
            .data()
            .iter()
            .zip(pred.data())
            .position(|(&g, &p)| (g as usize >= c && g != IGNORE_INDEX) || (g != IGNORE_INDEX && p as usize >= c));
        if let Some(at) = bad {
            let (g, p) = (gt.data()[at], pred.data()[at]);
            return Err(if g as usize >= c && g != IGNORE_INDEX {
                out_of_range("gt", at, g)
            } else {
                out_of_range("pred", at, p)
            });
        }
        let mut seen = 0u64;
        for (&g, &p) in gt.data().iter().zip(pred.data()) {
            if g == IGNORE_INDEX {
                continue;
            }
            self.counts[g as usize * c + p as usize] += 1;
            seen += 1;
        }
        self.pixels_seen += seen;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) -> Result<(), MetricsError> {
        if self.classes != other.classes {
            return Err(MetricsError::ClassCountMismatch(self.classes, other.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.pixels_seen += other.pixels_seen;
        Ok(())
    }

    /// Swaps the roles of ground truth and prediction.
    pub fn transposed(&self) -> ConfusionAccumulator {
        let c = self.classes;
        let mut counts = vec![0; c * c];
        for g in 0..c {
            for p in 0..c {
                counts[p * c + g] = self.count(g, p);
            }
        }
        ConfusionAccumulator {
            classes: c,
            counts,
            pixels_seen: self.pixels_seen,
        }
    }

    /// Per-class IoU; `None` for classes with an empty union.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.count(c, c);
                let union = self.row_total(c) + self.col_total(c) - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }
}

/// Mean of the present IoUs, skipping `excluded` classes.
pub fn mean_iou(per_class: &[Option<f64>], excluded: &[usize]) -> Option<f64> {
    let kept: Vec<f64> = per_class
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded.contains(i))
        .filter_map(|(_, v)| *v)
        .collect();
    (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64)
}

/// A named set of classes left out of a secondary mIoU.
#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionSet {
    pub name: String,
    pub classes: Vec<usize>,
}

impl ExclusionSet {
    /// Resolves class names; the set is named by joining them with `+`.
    pub fn from_names<S: AsRef<str>>(schema: &ClassSchema, names: &[S]) -> Result<Self, MetricsError> {
        let classes = schema.resolve_names(names).map_err(MetricsError::Exclusion)?;
        let name = classes
            .iter()
            .map(|&i| schema.classes()[i].name.as_str())
            .collect::<Vec<_>>()
            .join("+");
        Ok(ExclusionSet { name, classes })
    }

    /// The dominant-class exclusion used for headline reporting: Sky and
    /// Landscape, when the schema has both.
    pub fn defaults(schema: &ClassSchema) -> Vec<ExclusionSet> {
        ExclusionSet::from_names(schema, &["Sky", "Landscape"])
            .map(|s| vec![s])
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusedPair {
    pub class_a: usize,
    pub class_b: usize,
    /// `counts[a][b] + counts[b][a]`.
    pub pixels: u64,
}

/// Unordered class pairs ranked by symmetric confusion, largest first; ties
/// fall back to `(a, b)` ascending.
pub fn top_confusions(acc: &ConfusionAccumulator, k: usize) -> Vec<ConfusedPair> {
    let c = acc.classes();
    let mut pairs = Vec::with_capacity(c * c.saturating_sub(1) / 2);
    for a in 0..c {
        for b in a + 1..c {
            pairs.push(ConfusedPair {
                class_a: a,
                class_b: b,
                pixels: acc.count(a, b) + acc.count(b, a),
            });
        }
    }
    pairs.sort_by(|x, y| {
        y.pixels
            .cmp(&x.pixels)
            .then(x.class_a.cmp(&y.class_a))
            .then(x.class_b.cmp(&y.class_b))
    });
    pairs.truncate(k);
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionEntry {
    pub class_a: String,
    pub class_b: String,
    pub index_a: usize,
    pub index_b: usize,
    pub pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub pixels_seen: u64,
    /// `None` marks a class absent from both ground truth and prediction.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou_all: f64,
    pub miou_excluding: BTreeMap<String, Option<f64>>,
    pub pixel_accuracy: f64,
    pub class_frequency: Vec<f64>,
    /// Rows for classes without ground-truth pixels are `None`.
    pub confusion_row_normalised: Vec<Option<Vec<f64>>>,
    pub top_confusions: Vec<ConfusionEntry>,
}

pub fn finalize(
    acc: &ConfusionAccumulator,
    schema: &ClassSchema,
    exclusions: &[ExclusionSet],
) -> Result<MetricsReport, MetricsError> {
    if acc.pixels_seen() == 0 {
        return Err(MetricsError::EmptyAccumulator);
    }
    if schema.len() != acc.classes() {
        return Err(MetricsError::SchemaMismatch {
            schema: schema.len(),
            acc: acc.classes(),
        });
    }
    let c = acc.classes();
    let total = acc.pixels_seen() as f64;
    let per_class_iou = acc.per_class_iou();
    let miou_all = mean_iou(&per_class_iou, &[]).ok_or(MetricsError::EmptyAccumulator)?;
    let miou_excluding = exclusions
        .iter()
        .map(|set| (set.name.clone(), mean_iou(&per_class_iou, &set.classes)))
        .collect();
    let rows: Vec<u64> = (0..c).map(|g| acc.row_total(g)).collect();
    let class_frequency = rows.iter().map(|&r| r as f64 / total).collect();
    let confusion_row_normalised = rows
        .iter()
        .enumerate()
        .map(|(g, &r)| (r > 0).then(|| (0..c).map(|p| acc.count(g, p) as f64 / r as f64).collect()))
        .collect();
    let mut report = MetricsReport {
        classes: schema.names(),
        pixels_seen: acc.pixels_seen(),
        per_class_iou,
        miou_all,
        miou_excluding,
        pixel_accuracy: acc.trace() as f64 / total,
        class_frequency,
        confusion_row_normalised,
        top_confusions: Vec::new(),
    };
    report.set_top_confusions(acc, schema, DEFAULT_TOP_K);
    Ok(report)
}

impl MetricsReport {
    pub fn set_top_confusions(&mut self, acc: &ConfusionAccumulator, schema: &ClassSchema, k: usize) {
        self.top_confusions = top_confusions(acc, k)
            .into_iter()
            .map(|p| ConfusionEntry {
                class_a: schema.classes()[p.class_a].name.clone(),
                class_b: schema.classes()[p.class_b].name.clone(),
                index_a: p.class_a,
                index_b: p.class_b,
                pixels: p.pixels,
            })
            .collect();
    }

    /// One row per class: index, name, IoU, frequency, recall.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["index", "class", "iou", "frequency", "recall"])
            .expect("in-memory write");
        let fmt = |v: Option<f64>| v.map(crate::canonical::format_real).unwrap_or_default();
        for (i, name) in self.classes.iter().enumerate() {
            let recall = self.confusion_row_normalised[i].as_ref().map(|row| row[i]);
            w.write_record([
                i.to_string(),
                name.clone(),
                fmt(self.per_class_iou[i]),
                fmt(Some(self.class_frequency[i])),
                fmt(recall),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Accumulates mask pairs across `workers` threads, one accumulator per
/// shard, merged at the end.
pub fn accumulate_sharded(
    classes: usize,
    pairs: &[(LabelMap, LabelMap)],
    workers: usize,
) -> Result<ConfusionAccumulator, MetricsError> {
    let workers = workers.max(1);
    let chunk = pairs.len().div_ceil(workers).max(1);
    let shards: Vec<Result<ConfusionAccumulator, MetricsError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = pairs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    let mut acc = ConfusionAccumulator::new(classes);
                    for (gt, pred) in part {
                        acc.accumulate(gt, pred)?;
                    }
                    Ok(acc)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("shard worker panicked"))
            .collect()
    });
    let mut total = ConfusionAccumulator::new(classes);
    for shard in shards {
        total.merge(&shard?)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, data: &[u8]) -> LabelMap {
        LabelMap::new(w, h, data.to_vec()).unwrap()
    }

    fn two_by_two() -> ConfusionAccumulator {
        let mut acc = ConfusionAccumulator::new(2);
        acc.accumulate(&map(2, 2, &[0, 0, 1, 1]), &map(2, 2, &[0, 1, 1, 1]))
            .unwrap();
        acc
    }

    fn two_class_schema() -> ClassSchema {
        ClassSchema::from_json(
            r#"{"classes": [
            {"index": 0, "name": "A", "raw_value": 0, "color": [0,0,0], "weight": 1.0, "tier": "Safe"},
            {"index": 1, "name": "B", "raw_value": 1, "color": [9,9,9], "weight": 1.0, "tier": "Safe"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn hand_counted_fixture() {
        let acc = two_by_two();
        assert_eq!(acc.counts(), &[1, 1, 0, 2]);
        assert_eq!(acc.pixels_seen(), 4);
        let r = finalize(&acc, &two_class_schema(), &[]).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.miou_all - 0.583_333_333_333).abs() < 1e-9);
        assert_eq!(r.pixel_accuracy, 0.75);
        assert_eq!(r.class_frequency, vec![0.5, 0.5]);
        assert_eq!(
            r.confusion_row_normalised,
            vec![Some(vec![0.5, 0.5]), Some(vec![0.0, 1.0])]
        );
    }

    #[test]
    fn identity_prediction_is_diagonal() {
        let gt = map(3, 1, &[0, 1, 1]);
        let mut acc = ConfusionAccumulator::new(3);
        acc.accumulate(&gt, &gt).unwrap();
        assert_eq!(acc.trace(), 3);
        let r = finalize(&acc, &ClassSchema::default().clone_first(3), &[]).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(1.0), Some(1.0), None]);
        assert_eq!(r.pixel_accuracy, 1.0);
        assert_eq!(r.confusion_row_normalised[2], None);
    }

    #[test]
    fn ignore_pixels_are_skipped_and_errors_leave_state() {
        let mut acc = ConfusionAccumulator::new(2);
        acc.accumulate(&map(2, 1, &[IGNORE_INDEX, 1]), &map(2, 1, &[0, 1]))
            .unwrap();
        assert_eq!(acc.pixels_seen(), 1);
        let before = acc.clone();
        let err = acc.accumulate(&map(2, 1, &[0, 1]), &map(2, 1, &[0, 7])).unwrap_err();
        assert!(matches!(err, MetricsError::IndexOutOfRange { which: "pred", value: 7, col: 1, .. }));
        assert_eq!(acc, before);
        assert!(matches!(
            acc.accumulate(&map(2, 1, &[0, 1]), &map(1, 2, &[0, 1])),
            Err(MetricsError::DimensionMismatch { .. })
        ));
        assert_eq!(
            finalize(&ConfusionAccumulator::new(2), &two_class_schema(), &[]),
            Err(MetricsError::EmptyAccumulator)
        );
    }

    #[test]
    fn top_confusions_orders_by_symmetric_count() {
        let mut counts = vec![0u64; 16];
        counts[4 + 3] = 6;
        counts[3 * 4 + 1] = 2;
        counts[2] = 8;
        let acc = ConfusionAccumulator::from_counts(4, counts);
        let top = top_confusions(&acc, 10);
        assert_eq!(top.len(), 6);
        // {0,2} and {1,3} both score 8; lexicographic tie-break.
        assert_eq!((top[0].class_a, top[0].class_b, top[0].pixels), (0, 2, 8));
        assert_eq!((top[1].class_a, top[1].class_b, top[1].pixels), (1, 3, 8));
        assert_eq!((top[2].class_a, top[2].class_b), (0, 1));

        let diag = ConfusionAccumulator::from_counts(3, vec![5, 0, 0, 0, 5, 0, 0, 0, 5]);
        let order: Vec<_> = top_confusions(&diag, 5)
            .iter()
            .map(|p| (p.class_a, p.class_b, p.pixels))
            .collect();
        assert_eq!(order, vec![(0, 1, 0), (0, 2, 0), (1, 2, 0)]);
    }

    #[test]
    fn dominant_pathways_render_with_class_names() {
        let s = ClassSchema::default();
        let idx = |n: &str| s.index_of(n).unwrap();
        let mut counts = vec![0u64; 100];
        for c in 0..10 {
            counts[c * 10 + c] = 1_000_000;
        }
        let mut put = |a: &str, b: &str, n: u64| {
            counts[idx(a) * 10 + idx(b)] += n / 2;
            counts[idx(b) * 10 + idx(a)] += n - n / 2;
        };
        put("Ground Clutter", "Landscape", 15_670_000);
        put("Dry Grass", "Landscape", 12_170_000);
        put("Dry Grass", "Ground Clutter", 7_180_000);
        let acc = ConfusionAccumulator::from_counts(10, counts);
        let r = finalize(&acc, &s, &ExclusionSet::defaults(&s)).unwrap();
        let named: Vec<_> = r
            .top_confusions
            .iter()
            .map(|e| (e.class_a.as_str(), e.class_b.as_str(), e.pixels))
            .collect();
        assert_eq!(
            named,
            vec![
                ("Ground Clutter", "Landscape", 15_670_000),
                ("Dry Grass", "Landscape", 12_170_000),
                ("Dry Grass", "Ground Clutter", 7_180_000),
            ]
        );
    }

    #[test]
    fn csv_has_one_row_per_class() {
        let r = finalize(&two_by_two(), &two_class_schema(), &[]).unwrap();
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "0,A,0.5,0.5,0.5");
    }

    fn arb_pair() -> impl Strategy<Value = (LabelMap, LabelMap)> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            (
                proptest::collection::vec(0u8..4, w * h),
                proptest::collection::vec(0u8..4, w * h),
            )
                .prop_map(move |(g, p)| (map(w, h, &g), map(w, h, &p)))
        })
    }

    proptest! {
        #[test]
        fn merge_is_commutative_and_associative(a in arb_pair(), b in arb_pair(), c in arb_pair()) {
            let acc_of = |(g, p): &(LabelMap, LabelMap)| {
                let mut acc = ConfusionAccumulator::new(4);
                acc.accumulate(g, p).unwrap();
                acc
            };
            let (x, y, z) = (acc_of(&a), acc_of(&b), acc_of(&c));
            let mut xy = x.clone(); xy.merge(&y).unwrap();
            let mut yx = y.clone(); yx.merge(&x).unwrap();
            prop_assert_eq!(&xy, &yx);
            let mut xy_z = xy.clone(); xy_z.merge(&z).unwrap();
            let mut yz = y.clone(); yz.merge(&z).unwrap();
            let mut x_yz = x.clone(); x_yz.merge(&yz).unwrap();
            prop_assert_eq!(&xy_z, &x_yz);
            // Sequential accumulation equals the merge.
            let mut seq = ConfusionAccumulator::new(4);
            seq.accumulate(&a.0, &a.1).unwrap();
            seq.accumulate(&b.0, &b.1).unwrap();
            prop_assert_eq!(&seq, &xy);
            prop_assert_eq!(seq.counts().iter().sum::<u64>(), seq.pixels_seen());
        }

        #[test]
        fn transpose_preserves_iou(a in arb_pair()) {
            let mut acc = ConfusionAccumulator::new(4);
            acc.accumulate(&a.0, &a.1).unwrap();
            prop_assert_eq!(acc.per_class_iou(), acc.transposed().per_class_iou());
        }
    }

    impl ClassSchema {
        fn clone_first(&self, n: usize) -> ClassSchema {
            ClassSchema::new(self.classes()[..n].to_vec(), None).unwrap()
        }
    }
}
