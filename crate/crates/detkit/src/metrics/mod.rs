//! COCO-protocol detection metrics: greedy confidence-ordered matching,
//! precision/recall, 101-point interpolated average precision, mAP across
//! classes and IoU thresholds, and size-bucketed AP.
//!
//! Matching is greedy in score order — each detection claims the unmatched
//! ground truth with the highest IoU at or above the threshold. Ground truths
//! outside a size bucket are "ignored": detections matched to them count
//! neither as hits nor as false alarms, and unmatched detections whose own
//! area falls outside the bucket are ignored too. Greedy matching can differ
//! from an exhaustive optimal assignment in adversarial configurations (one
//! detection overlapping several mutually overlapping ground truths); for
//! scenes whose ground truths are pairwise disjoint it coincides, which the
//! property tests exercise.

mod records;

pub use records::{
    parse_gt_jsonl, parse_pred_jsonl, parse_records_jsonl, write_gt_jsonl, write_pred_jsonl,
    BoxRecord,
};

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{contract, Result};
use crate::loss::{iou, BoxCwh};

/// Area (px²) below which a ground truth counts as small.
pub const SMALL_MAX_AREA: f64 = 32.0 * 32.0;
/// Area (px²) below which a ground truth counts as medium (and at or above
/// [`SMALL_MAX_AREA`]).
pub const MEDIUM_MAX_AREA: f64 = 96.0 * 96.0;

/// Size regime of an object by pixel area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub fn of_area(area: f64) -> Self {
        if area < SMALL_MAX_AREA {
            SizeBucket::Small
        } else if area < MEDIUM_MAX_AREA {
            SizeBucket::Medium
        } else {
            SizeBucket::Large
        }
    }
}

/// A scored, class-labelled predicted box.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub class_id: u32,
    pub bbox: BoxCwh,
    pub score: f64,
}

impl Detection {
    pub fn new(image_id: u64, class_id: u32, bbox: BoxCwh, score: f64) -> Result<Self> {
        if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
            return Err(contract("detection score must lie in [0, 1]"));
        }
        Ok(Self {
            image_id,
            class_id,
            bbox,
            score,
        })
    }
}

/// An annotated ground-truth box. The area drives size bucketing and defaults
/// to the box area.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: u64,
    pub class_id: u32,
    pub bbox: BoxCwh,
    pub area: f64,
}

impl GroundTruth {
    pub fn new(image_id: u64, class_id: u32, bbox: BoxCwh) -> Self {
        let area = bbox.area();
        Self {
            image_id,
            class_id,
            bbox,
            area,
        }
    }

    pub fn with_area(image_id: u64, class_id: u32, bbox: BoxCwh, area: f64) -> Result<Self> {
        if !(area > 0.0 && area.is_finite()) {
            return Err(contract("ground-truth area must be positive"));
        }
        Ok(Self {
            image_id,
            class_id,
            bbox,
            area,
        })
    }
}

/// Evaluation protocol settings.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalConfig {
    /// IoU thresholds, strictly increasing, each in (0, 1].
    pub iou_thresholds: Vec<f64>,
    /// Per-image cap on detections, applied in score order.
    pub max_detections: usize,
    /// Score cut for the headline precision/recall numbers (taken at IoU 0.5).
    pub score_cut: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            max_detections: 300,
            score_cut: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(contract("at least one IoU threshold is required"));
        }
        for pair in self.iou_thresholds.windows(2) {
            if pair[1] <= pair[0] {
                return Err(contract("IoU thresholds must be strictly increasing"));
            }
        }
        if !self
            .iou_thresholds
            .iter()
            .all(|t| *t > 0.0 && *t <= 1.0 && t.is_finite())
        {
            return Err(contract("IoU thresholds must lie in (0, 1]"));
        }
        if self.max_detections == 0 {
            return Err(contract("max detections must be >= 1"));
        }
        if !(self.score_cut.is_finite() && (0.0..=1.0).contains(&self.score_cut)) {
            return Err(contract("score cut must lie in [0, 1]"));
        }
        Ok(())
    }

    fn threshold_index(&self, t: f64) -> Option<usize> {
        self.iou_thresholds
            .iter()
            .position(|x| (x - t).abs() < 1e-9)
    }
}

/// What became of one detection under matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchState {
    /// Claimed an in-scope ground truth.
    Tp,
    /// Matched nothing (or nothing in scope) and is itself in scope.
    Fp,
    /// Matched an out-of-scope ground truth, or is unmatched and itself out
    /// of scope. Neither hit nor false alarm.
    Ignored,
}

/// Outcome of matching one (image, class) group.
#[derive(Debug, Clone)]
pub struct MatchOutcome {
    /// Per kept detection, in descending score order: (score, state).
    pub flags: Vec<(f64, MatchState)>,
    /// Ground truths (non-ignored) left unmatched — the false negatives.
    pub unmatched_gt: usize,
}

/// Greedy matching with ignore masks. `dets` need not be sorted; they are
/// sorted by descending score and truncated to `max_det` here. Non-ignored
/// ground truths are preferred over ignored ones regardless of IoU.
fn match_group(
    dets: &[&Detection],
    gts: &[&GroundTruth],
    gt_ignore: &[bool],
    det_ignore_unmatched: &[bool],
    iou_thr: f64,
    max_det: usize,
) -> MatchOutcome {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(max_det);

    let mut gt_taken = vec![false; gts.len()];
    let mut flags = Vec::with_capacity(order.len());
    for &di in &order {
        let det = dets[di];
        let mut best: Option<(usize, f64)> = None;
        let mut best_is_ignored = true;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox);
            if v < iou_thr {
                continue;
            }
            let candidate_ignored = gt_ignore[gi];
            // A non-ignored ground truth always beats an ignored one; within
            // the same class of candidates the higher IoU wins.
            let better = match best {
                None => true,
                Some((_, best_iou)) => {
                    (!candidate_ignored && best_is_ignored)
                        || (candidate_ignored == best_is_ignored && v > best_iou)
                }
            };
            if better {
                best = Some((gi, v));
                best_is_ignored = candidate_ignored;
            }
        }
        let state = match best {
            Some((gi, _)) => {
                gt_taken[gi] = true;
                if gt_ignore[gi] {
                    MatchState::Ignored
                } else {
                    MatchState::Tp
                }
            }
            None => {
                if det_ignore_unmatched[di] {
                    MatchState::Ignored
                } else {
                    MatchState::Fp
                }
            }
        };
        flags.push((det.score, state));
    }
    let matched_tp = flags.iter().filter(|(_, s)| *s == MatchState::Tp).count();
    let live_gt = gt_ignore.iter().filter(|&&ig| !ig).count();
    MatchOutcome {
        flags,
        unmatched_gt: live_gt - matched_tp,
    }
}

/// Greedy matching of one (image, class) group with no ignore regions:
/// detections are sorted by descending score, truncated to `max_det`, and
/// each greedily claims the highest-IoU unmatched ground truth at or above
/// `iou_thr`.
pub fn match_detections(
    dets: &[&Detection],
    gts: &[&GroundTruth],
    iou_thr: f64,
    max_det: usize,
) -> MatchOutcome {
    match_group(
        dets,
        gts,
        &vec![false; gts.len()],
        &vec![false; dets.len()],
        iou_thr,
        max_det,
    )
}

/// A cumulative precision/recall curve: one point per detection rank.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PRCurve {
    pub recalls: Vec<f64>,
    pub precisions: Vec<f64>,
}

/// Cumulative precision and recall over TP/FP flags ordered by descending
/// score across the whole split. `total_gt` = 0 with detections present
/// yields an all-zero recall curve (AP 0), which callers flag.
pub fn pr_curve(flags: &[bool], total_gt: usize) -> PRCurve {
    let mut recalls = Vec::with_capacity(flags.len());
    let mut precisions = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (rank, &is_tp) in flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        recalls.push(if total_gt == 0 {
            0.0
        } else {
            tp as f64 / total_gt as f64
        });
        precisions.push(tp as f64 / (rank + 1) as f64);
    }
    PRCurve {
        recalls,
        precisions,
    }
}

/// 101-point interpolated average precision: the precision envelope is made
/// nonincreasing from right to left, sampled at recalls {0, 0.01, …, 1.00},
/// and averaged.
pub fn average_precision(curve: &PRCurve) -> f64 {
    let n = curve.recalls.len();
    if n == 0 {
        return 0.0;
    }
    let mut envelope = curve.precisions.clone();
    for i in (0..n - 1).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    let mut idx = 0usize;
    for level in 0..=100 {
        let r = level as f64 / 100.0;
        while idx < n && curve.recalls[idx] + 1e-12 < r {
            idx += 1;
        }
        if idx < n {
            sum += envelope[idx];
        }
    }
    sum / 101.0
}

/// Per-class evaluation results.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ClassEval {
    pub class_id: u32,
    pub gt_count: usize,
    /// (threshold, AP) in threshold order.
    pub ap_per_threshold: Vec<(f64, f64)>,
}

/// Full evaluation report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassEval>,
    /// (threshold, mAP over classes with ground truth).
    pub map_per_threshold: Vec<(f64, f64)>,
    /// mAP at IoU 0.5, when 0.5 is among the configured thresholds.
    pub map50: Option<f64>,
    /// Mean mAP over the 0.5:0.05:0.95 grid, when fully configured.
    pub map50_95: Option<f64>,
    /// Size-bucketed AP (mean over classes and thresholds, ground truths
    /// restricted to the bucket). `None` when the bucket holds no ground truth.
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    /// Headline precision/recall at IoU 0.5 and score ≥ `score_cut`.
    pub precision: f64,
    pub recall: f64,
    pub score_cut: f64,
    /// Classes that had detections but no ground truth (excluded from means).
    pub zero_gt_classes: Vec<u32>,
    pub total_detections: usize,
    pub total_ground_truths: usize,
}

type GroupKey = (u64, u32);

fn group_by_image_class<'a, T>(
    items: impl Iterator<Item = &'a T>,
    key: impl Fn(&T) -> GroupKey,
) -> BTreeMap<GroupKey, Vec<&'a T>> {
    let mut map: BTreeMap<GroupKey, Vec<&T>> = BTreeMap::new();
    for item in items {
        map.entry(key(item)).or_default().push(item);
    }
    map
}

/// Entries merged across images for one class: (score, image, seq, is_tp).
/// Sorting is by score descending with (image, seq) as a deterministic
/// tie-break; order-preserving score perturbations cannot change the result.
fn merged_flags(entries: &mut Vec<(f64, u64, usize, bool)>) -> Vec<bool> {
    entries.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    entries.iter().map(|e| e.3).collect()
}

/// Evaluate detections against ground truths under the COCO-style protocol.
///
/// Per-image truncation to `max_detections` (score order, across classes)
/// happens first. mAP averages per-class AP over classes with at least one
/// ground truth; size buckets follow the ignore rules described at module
/// level.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;

    // Per-image cap in score order, across classes.
    let mut per_image: BTreeMap<u64, Vec<&Detection>> = BTreeMap::new();
    for d in dets {
        per_image.entry(d.image_id).or_default().push(d);
    }
    let mut kept: Vec<&Detection> = Vec::with_capacity(dets.len());
    for (_, mut image_dets) in per_image {
        image_dets.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        image_dets.truncate(cfg.max_detections);
        kept.extend(image_dets);
    }

    let gt_classes: BTreeSet<u32> = gts.iter().map(|g| g.class_id).collect();
    let det_classes: BTreeSet<u32> = kept.iter().map(|d| d.class_id).collect();
    let zero_gt_classes: Vec<u32> = det_classes.difference(&gt_classes).copied().collect();

    let det_groups = group_by_image_class(kept.iter().copied(), |d| (d.image_id, d.class_id));
    let gt_groups = group_by_image_class(gts.iter(), |g| (g.image_id, g.class_id));
    let images: BTreeSet<u64> = kept
        .iter()
        .map(|d| d.image_id)
        .chain(gts.iter().map(|g| g.image_id))
        .collect();

    let empty_dets: Vec<&Detection> = Vec::new();
    let empty_gts: Vec<&GroundTruth> = Vec::new();

    let buckets = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large];
    let mut per_class = Vec::new();
    let mut bucket_ap_sums: BTreeMap<SizeBucket, (f64, usize)> = BTreeMap::new();
    // Headline precision/recall tallies at IoU 0.5, score >= cut.
    let (mut pr_tp, mut pr_fp, mut pr_fn) = (0usize, 0usize, 0usize);

    for &class_id in &gt_classes {
        let gt_count: usize = gts.iter().filter(|g| g.class_id == class_id).count();
        let mut ap_per_threshold = Vec::with_capacity(cfg.iou_thresholds.len());

        for &thr in &cfg.iou_thresholds {
            // Unrestricted ("all" areas) evaluation.
            let mut entries: Vec<(f64, u64, usize, bool)> = Vec::new();
            for &img in &images {
                let dets_ic = det_groups.get(&(img, class_id)).unwrap_or(&empty_dets);
                let gts_ic = gt_groups.get(&(img, class_id)).unwrap_or(&empty_gts);
                let outcome = match_detections(dets_ic, gts_ic, thr, cfg.max_detections);
                for (seq, (score, state)) in outcome.flags.iter().enumerate() {
                    match state {
                        MatchState::Tp => entries.push((*score, img, seq, true)),
                        MatchState::Fp => entries.push((*score, img, seq, false)),
                        MatchState::Ignored => {}
                    }
                }
            }
            let flags = merged_flags(&mut entries);
            let ap = average_precision(&pr_curve(&flags, gt_count));
            ap_per_threshold.push((thr, ap));

            // Size-bucketed evaluation with COCO ignore semantics.
            for bucket in buckets {
                let mut bucket_gt = 0usize;
                let mut entries: Vec<(f64, u64, usize, bool)> = Vec::new();
                for &img in &images {
                    let dets_ic = det_groups.get(&(img, class_id)).unwrap_or(&empty_dets);
                    let gts_ic = gt_groups.get(&(img, class_id)).unwrap_or(&empty_gts);
                    let gt_ignore: Vec<bool> = gts_ic
                        .iter()
                        .map(|g| SizeBucket::of_area(g.area) != bucket)
                        .collect();
                    bucket_gt += gt_ignore.iter().filter(|&&ig| !ig).count();
                    let det_ignore: Vec<bool> = dets_ic
                        .iter()
                        .map(|d| SizeBucket::of_area(d.bbox.area()) != bucket)
                        .collect();
                    let outcome = match_group(
                        dets_ic,
                        gts_ic,
                        &gt_ignore,
                        &det_ignore,
                        thr,
                        cfg.max_detections,
                    );
                    for (seq, (score, state)) in outcome.flags.iter().enumerate() {
                        match state {
                            MatchState::Tp => entries.push((*score, img, seq, true)),
                            MatchState::Fp => entries.push((*score, img, seq, false)),
                            MatchState::Ignored => {}
                        }
                    }
                }
                if bucket_gt > 0 {
                    let flags = merged_flags(&mut entries);
                    let ap = average_precision(&pr_curve(&flags, bucket_gt));
                    let slot = bucket_ap_sums.entry(bucket).or_insert((0.0, 0));
                    slot.0 += ap;
                    slot.1 += 1;
                }
            }
        }

        // Headline precision/recall at IoU 0.5 with the score cut.
        for &img in &images {
            let dets_ic: Vec<&Detection> = det_groups
                .get(&(img, class_id))
                .unwrap_or(&empty_dets)
                .iter()
                .copied()
                .filter(|d| d.score >= cfg.score_cut)
                .collect();
            let gts_ic = gt_groups.get(&(img, class_id)).unwrap_or(&empty_gts);
            let outcome = match_detections(&dets_ic, gts_ic, 0.5, cfg.max_detections);
            pr_tp += outcome
                .flags
                .iter()
                .filter(|(_, s)| *s == MatchState::Tp)
                .count();
            pr_fp += outcome
                .flags
                .iter()
                .filter(|(_, s)| *s == MatchState::Fp)
                .count();
            pr_fn += outcome.unmatched_gt;
        }

        per_class.push(ClassEval {
            class_id,
            gt_count,
            ap_per_threshold,
        });
    }

    // Detections for classes with no ground truth are false alarms for the
    // headline precision.
    for &class_id in &zero_gt_classes {
        pr_fp += kept
            .iter()
            .filter(|d| d.class_id == class_id && d.score >= cfg.score_cut)
            .count();
    }

    let map_per_threshold: Vec<(f64, f64)> = cfg
        .iou_thresholds
        .iter()
        .enumerate()
        .map(|(ti, &thr)| {
            let mean = if per_class.is_empty() {
                0.0
            } else {
                per_class
                    .iter()
                    .map(|c| c.ap_per_threshold[ti].1)
                    .sum::<f64>()
                    / per_class.len() as f64
            };
            (thr, mean)
        })
        .collect();

    let map50 = cfg
        .threshold_index(0.5)
        .map(|i| map_per_threshold[i].1);
    let standard_grid: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    let map50_95 = if standard_grid
        .iter()
        .all(|t| cfg.threshold_index(*t).is_some())
    {
        let sum: f64 = standard_grid
            .iter()
            .map(|t| map_per_threshold[cfg.threshold_index(*t).unwrap()].1)
            .sum();
        Some(sum / standard_grid.len() as f64)
    } else {
        None
    };

    let bucket_mean = |bucket: SizeBucket| -> Option<f64> {
        bucket_ap_sums
            .get(&bucket)
            .map(|(sum, count)| sum / *count as f64)
    };

    let precision = if pr_tp + pr_fp > 0 {
        pr_tp as f64 / (pr_tp + pr_fp) as f64
    } else {
        0.0
    };
    let recall = if pr_tp + pr_fn > 0 {
        pr_tp as f64 / (pr_tp + pr_fn) as f64
    } else {
        0.0
    };

    Ok(EvalReport {
        per_class,
        map_per_threshold,
        map50,
        map50_95,
        ap_small: bucket_mean(SizeBucket::Small),
        ap_medium: bucket_mean(SizeBucket::Medium),
        ap_large: bucket_mean(SizeBucket::Large),
        precision,
        recall,
        score_cut: cfg.score_cut,
        zero_gt_classes,
        total_detections: kept.len(),
        total_ground_truths: gts.len(),
    })
}

/// Render a report as a plain text table.
pub fn report_table(report: &EvalReport) -> String {
    let fmt_opt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => "n/a".to_string(),
    };
    let mut out = String::new();
    out.push_str("metric            value\n");
    out.push_str("----------------  ------\n");
    out.push_str(&format!("mAP50             {}\n", fmt_opt(report.map50)));
    out.push_str(&format!("mAP50:95          {}\n", fmt_opt(report.map50_95)));
    out.push_str(&format!("AP_s              {}\n", fmt_opt(report.ap_small)));
    out.push_str(&format!("AP_m              {}\n", fmt_opt(report.ap_medium)));
    out.push_str(&format!("AP_l              {}\n", fmt_opt(report.ap_large)));
    out.push_str(&format!(
        "P@{:.2}            {:.4}\n",
        report.score_cut, report.precision
    ));
    out.push_str(&format!(
        "R@{:.2}            {:.4}\n",
        report.score_cut, report.recall
    ));
    for (thr, map) in &report.map_per_threshold {
        out.push_str(&format!("mAP@{thr:.2}          {map:.4}\n"));
    }
    for class in &report.per_class {
        let ap50 = class
            .ap_per_threshold
            .iter()
            .find(|(t, _)| (t - 0.5).abs() < 1e-9)
            .map(|(_, ap)| *ap);
        out.push_str(&format!(
            "class {:<3} ({} gt)  AP50 {}\n",
            class.class_id,
            class.gt_count,
            fmt_opt(ap50)
        ));
    }
    if !report.zero_gt_classes.is_empty() {
        out.push_str(&format!(
            "classes without ground truth: {:?}\n",
            report.zero_gt_classes
        ));
    }
    out
}
