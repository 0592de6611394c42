//! Reconstruction quality metrics and the colored point export.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::projection::{rp_forward, MaskImage, SamplingProjector};
use crate::voxel::VoxelGrid;
use crate::exec::Execution;

/// Binarization threshold for IOU.
pub const IOU_THRESHOLD: f64 = 0.4;
/// Occupancy above which a voxel is drawn fully red.
pub const VIS_HIGH: f64 = 0.6;
/// Occupancy below which a voxel is not drawn.
pub const VIS_LOW: f64 = 0.1;

fn check_pair(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<()> {
    pred.same_shape(gt)?;
    if !gt.is_binary() {
        return Err(Error::precondition("ground-truth grid must be binary"));
    }
    Ok(())
}

/// Intersection over union of two boolean sets; two empty sets score 1.
pub fn iou_sets(a: impl IntoIterator<Item = bool>, b: impl IntoIterator<Item = bool>) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.into_iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// IOU of `pred` binarized at `tau` against a binary ground truth.
pub fn iou(pred: &VoxelGrid, gt: &VoxelGrid, tau: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let bin = pred.binarize(tau)?;
    Ok(iou_sets(
        bin.values().iter().map(|&v| v == 1.0),
        gt.values().iter().map(|&v| v == 1.0),
    ))
}

/// Non-interpolated average precision of `scores` ranked descending, ties
/// broken by position. With no positives the result is 1.
pub fn average_precision_scores(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return 1.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / positives as f64
}

/// Average precision of voxel occupancy confidences against a binary grid.
pub fn average_precision(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<f64> {
    check_pair(pred, gt)?;
    let labels: Vec<bool> = gt.values().iter().map(|&v| v == 1.0).collect();
    Ok(average_precision_scores(pred.values(), &labels))
}

/// Fraction of foreground pixels of `truth` that `pred` marks nonzero.
pub fn nonzero_recall(pred: &MaskImage, truth: &MaskImage) -> f64 {
    let fg = truth.foreground_count();
    if fg == 0 {
        return 1.0;
    }
    let hit = pred
        .values()
        .iter()
        .zip(truth.values())
        .filter(|(&p, &t)| t >= 0.5 && p > 0.0)
        .count();
    hit as f64 / fg as f64
}

/// Grid-sampling rendering at one sample count, scored against the
/// ray-traced silhouette.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectorScore {
    pub samples: usize,
    pub ap: f64,
    pub recall: f64,
    pub nonzero: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorComparison {
    pub reference_nonzero: usize,
    pub reference_recall: f64,
    pub sampled: Vec<ProjectorScore>,
}

impl ProjectorComparison {
    pub fn render(&self) -> String {
        let mut out = format!(
            "method=rp nonzero={} recall={:.6}\n",
            self.reference_nonzero, self.reference_recall
        );
        for s in &self.sampled {
            out += &format!(
                "method=gs samples={} nonzero={} recall={:.6} ap={:.6}\n",
                s.samples, s.nonzero, s.recall, s.ap
            );
        }
        out
    }
}

/// Renders `grid` with the ray tracer and with grid sampling at each count
/// in `samples`; the ray-traced silhouette serves as ground truth.
pub fn compare_projectors(grid: &VoxelGrid, cam: &Camera, samples: &[usize]) -> Result<ProjectorComparison> {
    let truth = rp_forward(grid, cam).threshold(0.5);
    let labels: Vec<bool> = truth.values().iter().map(|&v| v == 1.0).collect();
    let nonzero = |m: &MaskImage| m.values().iter().filter(|&&v| v > 0.0).count();
    let sampled = samples
        .iter()
        .map(|&d| {
            let proj = SamplingProjector::with_default_range(d, grid.geometry(), cam)?;
            let m = proj.forward(grid, cam, Execution::default());
            Ok(ProjectorScore {
                samples: d,
                ap: average_precision_scores(m.values(), &labels),
                recall: nonzero_recall(&m, &truth),
                nonzero: nonzero(&m),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ProjectorComparison {
        reference_nonzero: nonzero(&truth),
        reference_recall: 1.0,
        sampled,
    })
}

/// Visualization class of a voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorClass {
    High,
    /// Interpolation parameter in `[0, 1]` from green (0) to red (1).
    Graded(f64),
}

impl ColorClass {
    pub fn rgb(&self) -> [u8; 3] {
        match *self {
            ColorClass::High => [255, 0, 0],
            ColorClass::Graded(s) => {
                let r = (255.0 * s).round() as u8;
                [r, 255 - r, 0]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredVoxel {
    pub voxel: [usize; 3],
    pub class: ColorClass,
}

/// Voxels worth drawing, with their color classes, in storage order.
pub fn export_colored(grid: &VoxelGrid) -> Vec<ColoredVoxel> {
    grid.values()
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let class = if p > VIS_HIGH {
                ColorClass::High
            } else if p >= VIS_LOW {
                ColorClass::Graded((p - VIS_LOW) / (VIS_HIGH - VIS_LOW))
            } else {
                return None;
            };
            Some(ColoredVoxel {
                voxel: grid.geometry().coords(i),
                class,
            })
        })
        .collect()
}

/// Writes `x y z r g b` lines.
pub fn write_point_cloud<W: Write>(points: &[ColoredVoxel], mut out: W) -> std::io::Result<()> {
    for p in points {
        let [r, g, b] = p.class.rgb();
        writeln!(out, "{} {} {} {r} {g} {b}", p.voxel[0], p.voxel[1], p.voxel[2])?;
    }
    Ok(())
}
