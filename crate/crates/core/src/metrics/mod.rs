//! Evaluation protocol: Hungarian-matched segmentation mIoU, primitive type
//! accuracy, point-normal and primitive-axis angular errors, surface-sample
//! residuals and coverages, whole-cloud coverage, and per-scale mIoU
//! breakdowns, plus CSV/JSON emission.

mod hungarian;

pub use hungarian::solve_max_assignment;

use crate::cloud::Scene;
use crate::math::axis_angle_between;
use crate::merge::FinalLabeling;
use crate::primitive::PrimitiveKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("evaluation requires ground-truth labels")]
    MissingGtLabels,
    #[error("labeling covers {got} points, cloud has {want}")]
    LengthMismatch { got: usize, want: usize },
}

/// Scale buckets over a primitive's share of the cloud's points.
/// Left-closed / right-open; boundaries at 1%, 2%, 4%, and 12%.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScaleBucket {
    Under1,
    From1To2,
    From2To4,
    From4To12,
    Over12,
}

impl ScaleBucket {
    pub const ALL: [ScaleBucket; 5] = [
        ScaleBucket::Under1,
        ScaleBucket::From1To2,
        ScaleBucket::From2To4,
        ScaleBucket::From4To12,
        ScaleBucket::Over12,
    ];

    pub fn of_fraction(fraction: f64) -> ScaleBucket {
        if fraction < 0.01 {
            ScaleBucket::Under1
        } else if fraction < 0.02 {
            ScaleBucket::From1To2
        } else if fraction < 0.04 {
            ScaleBucket::From2To4
        } else if fraction < 0.12 {
            ScaleBucket::From4To12
        } else {
            ScaleBucket::Over12
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ScaleBucket::Under1 => "~1%",
            ScaleBucket::From1To2 => "1%~2%",
            ScaleBucket::From2To4 => "2%~4%",
            ScaleBucket::From4To12 => "4%~12%",
            ScaleBucket::Over12 => "12%~",
        }
    }
}

/// One-to-one matching between predicted and ground-truth segments,
/// maximizing the total IoU.
#[derive(Debug, Clone)]
pub struct Matching {
    /// Distinct predicted labels, ascending.
    pub pred_ids: Vec<i32>,
    /// Distinct ground-truth labels, ascending.
    pub gt_ids: Vec<i32>,
    /// `iou[p][g]` over the id lists above.
    pub iou: Vec<Vec<f64>>,
    /// Matched `(pred index, gt index)` pairs with positive IoU.
    pub pairs: Vec<(usize, usize)>,
    /// Predicted segments not matched to any ground-truth segment.
    pub unmatched_predictions: usize,
}

impl Matching {
    /// IoU of the matched prediction for each ground-truth segment (0 when
    /// unmatched).
    pub fn per_gt_iou(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.gt_ids.len()];
        for &(p, g) in &self.pairs {
            out[g] = self.iou[p][g];
        }
        out
    }

    /// Matched prediction index per ground-truth segment.
    pub fn pred_of_gt(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.gt_ids.len()];
        for &(p, g) in &self.pairs {
            out[g] = Some(p);
        }
        out
    }
}

/// Build the IoU matrix between predicted and ground-truth segments (labels
/// below zero are ignored) and solve the assignment maximizing total IoU.
pub fn match_primitives(pred_labels: &[i32], gt_labels: &[i32]) -> Matching {
    assert_eq!(pred_labels.len(), gt_labels.len());
    let mut pred_ids: Vec<i32> = pred_labels.iter().copied().filter(|&l| l >= 0).collect();
    pred_ids.sort_unstable();
    pred_ids.dedup();
    let mut gt_ids: Vec<i32> = gt_labels.iter().copied().filter(|&l| l >= 0).collect();
    gt_ids.sort_unstable();
    gt_ids.dedup();

    let pred_index = |l: i32| pred_ids.binary_search(&l).expect("known label");
    let gt_index = |l: i32| gt_ids.binary_search(&l).expect("known label");

    let mut inter = vec![vec![0usize; gt_ids.len()]; pred_ids.len()];
    let mut pred_count = vec![0usize; pred_ids.len()];
    let mut gt_count = vec![0usize; gt_ids.len()];
    for (&p, &g) in pred_labels.iter().zip(gt_labels) {
        let pi = (p >= 0).then(|| pred_index(p));
        let gi = (g >= 0).then(|| gt_index(g));
        if let Some(pi) = pi {
            pred_count[pi] += 1;
        }
        if let Some(gi) = gi {
            gt_count[gi] += 1;
        }
        if let (Some(pi), Some(gi)) = (pi, gi) {
            inter[pi][gi] += 1;
        }
    }
    let iou: Vec<Vec<f64>> = (0..pred_ids.len())
        .map(|pi| {
            (0..gt_ids.len())
                .map(|gi| {
                    let i = inter[pi][gi];
                    let u = pred_count[pi] + gt_count[gi] - i;
                    if u == 0 {
                        0.0
                    } else {
                        i as f64 / u as f64
                    }
                })
                .collect()
        })
        .collect();

    let pairs: Vec<(usize, usize)> = if pred_ids.is_empty() || gt_ids.is_empty() {
        Vec::new()
    } else {
        solve_max_assignment(&iou)
            .into_iter()
            .filter(|&(p, g)| iou[p][g] > 0.0)
            .collect()
    };
    let matched_preds: std::collections::HashSet<usize> = pairs.iter().map(|&(p, _)| p).collect();
    let unmatched_predictions = pred_ids.len() - matched_preds.len();
    Matching { pred_ids, gt_ids, iou, pairs, unmatched_predictions }
}

/// Per-ground-truth-primitive record, the raw material for the per-scale
/// breakdown and the per-primitive CSV.
#[derive(Debug, Clone)]
pub struct PerPrimitiveRecord {
    pub gt_index: usize,
    pub gt_kind: PrimitiveKind,
    pub point_fraction: f64,
    pub bucket: ScaleBucket,
    pub matched_pred: Option<usize>,
    pub iou: f64,
    pub type_correct: Option<bool>,
    pub axis_diff_deg: Option<f64>,
    pub residual: Option<f64>,
    /// Coverage of the 512 surface samples per epsilon, when measurable.
    pub sk_coverage: Vec<Option<f64>>,
}

/// The evaluation metrics for one cloud. Metrics whose required ground-truth
/// channel is missing are reported absent, never zero-filled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub seg_miou_pct: f64,
    pub type_accuracy_pct: Option<f64>,
    pub normal_diff_deg: Option<f64>,
    pub axis_diff_deg: Option<f64>,
    pub sk_residual_mean: Option<f64>,
    pub sk_residual_std: Option<f64>,
    /// `(epsilon, percent)` pairs.
    pub sk_coverage_pct: Vec<(f64, Option<f64>)>,
    pub p_coverage_pct: Vec<(f64, f64)>,
    pub per_scale_miou_pct: Vec<(ScaleBucket, Option<f64>)>,
    pub unmatched_predictions: usize,
}

/// Evaluate a final labeling against a scene's ground truth.
pub fn evaluate(
    scene: &Scene,
    labeling: &FinalLabeling,
    epsilons: &[f64],
) -> Result<(EvalReport, Vec<PerPrimitiveRecord>), MetricsError> {
    let cloud = &scene.cloud;
    let n = cloud.len();
    if labeling.labels.len() != n {
        return Err(MetricsError::LengthMismatch { got: labeling.labels.len(), want: n });
    }
    let gt_labels = cloud.gt_label.as_ref().ok_or(MetricsError::MissingGtLabels)?;
    let matching = match_primitives(&labeling.labels, gt_labels);
    let per_gt_iou = matching.per_gt_iou();
    let pred_of_gt = matching.pred_of_gt();

    let mut gt_counts = vec![0usize; matching.gt_ids.len()];
    for &g in gt_labels {
        if g >= 0 {
            gt_counts[matching.gt_ids.binary_search(&g).expect("known label")] += 1;
        }
    }

    // Per-primitive records.
    let mut records = Vec::with_capacity(matching.gt_ids.len());
    for (gi, &gt_id) in matching.gt_ids.iter().enumerate() {
        let gt_prim = &scene.primitives[gt_id as usize];
        let fraction = gt_counts[gi] as f64 / n as f64;
        let matched_pred = pred_of_gt[gi];
        let pred_prim = matched_pred.and_then(|p| {
            let group = matching.pred_ids[p] as usize;
            labeling.primitives.get(group).and_then(|prim| prim.as_ref())
        });
        let type_correct = matched_pred.map(|p| {
            let group = matching.pred_ids[p] as usize;
            labeling.group_types[group] == gt_prim.analytic.kind()
        });
        let axis_diff_deg = match (pred_prim, gt_prim.analytic.metric_axis()) {
            (Some(pp), Some(gt_axis)) => pp
                .metric_axis()
                .map(|pred_axis| axis_angle_between(&pred_axis, &gt_axis).to_degrees()),
            _ => None,
        };
        let (residual, sk_coverage) = match pred_prim {
            Some(pp) => {
                let dists: Vec<f64> =
                    gt_prim.samples.iter().map(|s| pp.distance_to(s)).collect();
                let mean = dists.iter().sum::<f64>() / dists.len().max(1) as f64;
                let coverage = epsilons
                    .iter()
                    .map(|&eps| {
                        Some(dists.iter().filter(|&&d| d <= eps).count() as f64
                            / dists.len().max(1) as f64)
                    })
                    .collect();
                (Some(mean), coverage)
            }
            None => (None, epsilons.iter().map(|_| None).collect()),
        };
        records.push(PerPrimitiveRecord {
            gt_index: gt_id as usize,
            gt_kind: gt_prim.analytic.kind(),
            point_fraction: fraction,
            bucket: ScaleBucket::of_fraction(fraction),
            matched_pred,
            iou: per_gt_iou[gi],
            type_correct,
            axis_diff_deg,
            residual,
            sk_coverage,
        });
    }

    // (i) Segmentation mIoU: every ground-truth primitive weighs the same,
    // unmatched ones count zero.
    let seg_miou_pct = if records.is_empty() {
        0.0
    } else {
        100.0 * records.iter().map(|r| r.iou).sum::<f64>() / records.len() as f64
    };

    // (ii) Type accuracy over ground-truth primitives (unmatched count 0).
    let type_accuracy_pct = if records.is_empty() {
        None
    } else {
        let correct = records.iter().filter(|r| r.type_correct == Some(true)).count();
        Some(100.0 * correct as f64 / records.len() as f64)
    };

    // (iii) Point-normal difference, orientation-agnostic, averaged over
    // points; needs ground-truth normals.
    let normal_diff_deg = cloud.normals.as_ref().map(|gt_normals| {
        let total: f64 = gt_normals
            .iter()
            .zip(&labeling.normals)
            .map(|(gt, est)| axis_angle_between(gt, est).to_degrees())
            .sum();
        total / n as f64
    });

    // (iv) Primitive-axis difference over matched pairs (spheres excluded).
    let axis_pairs: Vec<f64> = records.iter().filter_map(|r| r.axis_diff_deg).collect();
    let axis_diff_deg = if axis_pairs.is_empty() {
        None
    } else {
        Some(axis_pairs.iter().sum::<f64>() / axis_pairs.len() as f64)
    };

    // (v) Surface-sample residual over measurable matched pairs.
    let residuals: Vec<f64> = records.iter().filter_map(|r| r.residual).collect();
    let (sk_residual_mean, sk_residual_std) = if residuals.is_empty() {
        (None, None)
    } else {
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
            / residuals.len() as f64;
        (Some(mean), Some(var.sqrt()))
    };

    // (vi) Surface-sample coverage per epsilon.
    let sk_coverage_pct: Vec<(f64, Option<f64>)> = epsilons
        .iter()
        .enumerate()
        .map(|(ei, &eps)| {
            let vals: Vec<f64> =
                records.iter().filter_map(|r| r.sk_coverage[ei]).collect();
            let pct = if vals.is_empty() {
                None
            } else {
                Some(100.0 * vals.iter().sum::<f64>() / vals.len() as f64)
            };
            (eps, pct)
        })
        .collect();

    // (vii) Whole-cloud coverage: fraction of points within eps of any
    // predicted surface.
    let fitted: Vec<&crate::primitive::Primitive> =
        labeling.primitives.iter().flatten().collect();
    let p_coverage_pct: Vec<(f64, f64)> = if fitted.is_empty() {
        epsilons.iter().map(|&e| (e, 0.0)).collect()
    } else {
        let mut within = vec![0usize; epsilons.len()];
        for p in &cloud.points {
            let d = fitted
                .iter()
                .map(|prim| prim.distance_to(p))
                .fold(f64::INFINITY, f64::min);
            for (ei, &eps) in epsilons.iter().enumerate() {
                if d <= eps {
                    within[ei] += 1;
                }
            }
        }
        epsilons
            .iter()
            .zip(within)
            .map(|(&e, w)| (e, 100.0 * w as f64 / n as f64))
            .collect()
    };

    let per_scale_miou_pct = per_scale_from_records(&records);

    let report = EvalReport {
        seg_miou_pct,
        type_accuracy_pct,
        normal_diff_deg,
        axis_diff_deg,
        sk_residual_mean,
        sk_residual_std,
        sk_coverage_pct,
        p_coverage_pct,
        per_scale_miou_pct,
        unmatched_predictions: matching.unmatched_predictions,
    };
    Ok((report, records))
}

/// Average the matched IoUs within each scale bucket.
pub fn per_scale_from_records(records: &[PerPrimitiveRecord]) -> Vec<(ScaleBucket, Option<f64>)> {
    ScaleBucket::ALL
        .iter()
        .map(|&bucket| {
            let ious: Vec<f64> =
                records.iter().filter(|r| r.bucket == bucket).map(|r| r.iou).collect();
            let val = if ious.is_empty() {
                None
            } else {
                Some(100.0 * ious.iter().sum::<f64>() / ious.len() as f64)
            };
            (bucket, val)
        })
        .collect()
}

/// Suite-level aggregation: per-cloud averages of each metric plus the
/// per-primitive per-scale breakdown across every cloud.
#[derive(Debug, Default)]
pub struct SuiteAggregator {
    pub reports: Vec<(String, EvalReport)>,
    pub records: Vec<(String, PerPrimitiveRecord)>,
}

/// Suite summary with per-cloud metric means; mirrors the headline metric
/// table layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub clouds: usize,
    pub seg_miou_pct: f64,
    pub type_accuracy_pct: Option<f64>,
    pub normal_diff_deg: Option<f64>,
    pub axis_diff_deg: Option<f64>,
    pub sk_residual_mean: Option<f64>,
    pub sk_residual_std: Option<f64>,
    pub sk_coverage_pct: Vec<(f64, Option<f64>)>,
    pub p_coverage_pct: Vec<(f64, f64)>,
    pub per_scale_miou_pct: Vec<(ScaleBucket, Option<f64>)>,
    pub unmatched_predictions: usize,
}

impl SuiteAggregator {
    pub fn add(&mut self, cloud_id: &str, report: EvalReport, records: Vec<PerPrimitiveRecord>) {
        self.reports.push((cloud_id.to_string(), report));
        self.records
            .extend(records.into_iter().map(|r| (cloud_id.to_string(), r)));
    }

    pub fn summary(&self) -> SuiteSummary {
        fn mean_of(vals: Vec<f64>) -> Option<f64> {
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        }
        let reports: Vec<&EvalReport> = self.reports.iter().map(|(_, r)| r).collect();
        let seg =
            mean_of(reports.iter().map(|r| r.seg_miou_pct).collect()).unwrap_or(0.0);
        let epsilons: Vec<f64> = reports
            .first()
            .map(|r| r.p_coverage_pct.iter().map(|&(e, _)| e).collect())
            .unwrap_or_default();
        let sk_coverage_pct = epsilons
            .iter()
            .enumerate()
            .map(|(ei, &e)| {
                (e, mean_of(reports.iter().filter_map(|r| r.sk_coverage_pct[ei].1).collect()))
            })
            .collect();
        let p_coverage_pct = epsilons
            .iter()
            .enumerate()
            .map(|(ei, &e)| {
                (
                    e,
                    mean_of(reports.iter().map(|r| r.p_coverage_pct[ei].1).collect())
                        .unwrap_or(0.0),
                )
            })
            .collect();
        let records: Vec<PerPrimitiveRecord> =
            self.records.iter().map(|(_, r)| r.clone()).collect();
        SuiteSummary {
            clouds: reports.len(),
            seg_miou_pct: seg,
            type_accuracy_pct: mean_of(
                reports.iter().filter_map(|r| r.type_accuracy_pct).collect(),
            ),
            normal_diff_deg: mean_of(reports.iter().filter_map(|r| r.normal_diff_deg).collect()),
            axis_diff_deg: mean_of(reports.iter().filter_map(|r| r.axis_diff_deg).collect()),
            sk_residual_mean: mean_of(
                reports.iter().filter_map(|r| r.sk_residual_mean).collect(),
            ),
            sk_residual_std: mean_of(reports.iter().filter_map(|r| r.sk_residual_std).collect()),
            sk_coverage_pct,
            p_coverage_pct,
            per_scale_miou_pct: per_scale_from_records(&records),
            unmatched_predictions: reports.iter().map(|r| r.unmatched_predictions).sum(),
        }
    }

    /// One row per metric per cloud.
    pub fn per_cloud_csv(&self) -> String {
        let mut out = String::from("cloud,metric,value\n");
        for (id, r) in &self.reports {
            let mut push = |metric: &str, value: String| {
                out.push_str(&format!("{id},{metric},{value}\n"));
            };
            let opt = |v: Option<f64>| v.map_or("absent".to_string(), |x| x.to_string());
            push("seg_miou_pct", r.seg_miou_pct.to_string());
            push("type_accuracy_pct", opt(r.type_accuracy_pct));
            push("normal_diff_deg", opt(r.normal_diff_deg));
            push("axis_diff_deg", opt(r.axis_diff_deg));
            push("sk_residual_mean", opt(r.sk_residual_mean));
            push("sk_residual_std", opt(r.sk_residual_std));
            for &(e, v) in &r.sk_coverage_pct {
                push(&format!("sk_coverage_pct_eps_{e}"), opt(v));
            }
            for &(e, v) in &r.p_coverage_pct {
                push(&format!("p_coverage_pct_eps_{e}"), v.to_string());
            }
            for &(b, v) in &r.per_scale_miou_pct {
                push(&format!("per_scale_miou_pct_{}", b.label()), opt(v));
            }
            push("unmatched_predictions", r.unmatched_predictions.to_string());
        }
        out
    }

    /// One row per ground-truth primitive across the suite, sufficient to
    /// recompute the per-scale buckets.
    pub fn per_primitive_csv(&self) -> String {
        let mut out =
            String::from("cloud,gt_index,kind,point_fraction,bucket,matched,iou,residual\n");
        for (id, r) in &self.records {
            out.push_str(&format!(
                "{id},{},{},{},{},{},{},{}\n",
                r.gt_index,
                r.gt_kind.name(),
                r.point_fraction,
                r.bucket.label(),
                r.matched_pred.map_or("none".into(), |p| p.to_string()),
                r.iou,
                r.residual.map_or("absent".into(), |x| x.to_string()),
            ));
        }
        out
    }
}
