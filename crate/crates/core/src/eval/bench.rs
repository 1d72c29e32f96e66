//! Wall-clock timing of the inference stages in both pipeline modes.

use std::time::{Duration, Instant};

use image::RgbImage;
use serde::Serialize;

use crate::network::{detect_image, image_tensor, NetworkParams, PipelineMode, StageTimings};
use crate::pipeline::PipelineError;
use crate::postprocess::{postprocess_image, PostprocessParams};
use crate::proposals::{selective_search, ProposalParams};
use crate::report::to_csv;
use crate::geometry::{BoundingBox, ImageSize};

/// Mean, population standard deviation and median, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub median_ms: f64,
}

impl StageStats {
    pub fn from_durations(d: &[Duration]) -> StageStats {
        if d.is_empty() {
            return StageStats::default();
        }
        let mut ms: Vec<f64> = d.iter().map(|x| x.as_secs_f64() * 1e3).collect();
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        ms.sort_by(f64::total_cmp);
        let mid = ms.len() / 2;
        let median = if ms.len() % 2 == 1 { ms[mid] } else { 0.5 * (ms[mid - 1] + ms[mid]) };
        StageStats { mean_ms: mean, std_ms: var.sqrt(), median_ms: median }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub cpu_model: String,
    pub logical_cpus: usize,
    pub worker_threads: usize,
}

impl MachineInfo {
    pub fn current() -> MachineInfo {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|m| m.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        MachineInfo {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpu_model,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            worker_threads: rayon::current_num_threads(),
        }
    }
}

/// Per-image stage statistics of one pipeline mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeTiming {
    pub mode: PipelineMode,
    pub images: usize,
    pub mean_rois: f64,
    pub proposal: StageStats,
    pub backbone: StageStats,
    pub pooling: StageStats,
    pub fc: StageStats,
    pub heads: StageStats,
    pub postprocess: StageStats,
    /// Network stages plus post-processing: the mode-dependent part.
    pub inference: StageStats,
    /// Everything, proposals included.
    pub total: StageStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub machine: MachineInfo,
    pub train_seconds: Option<f64>,
    pub modes: Vec<ModeTiming>,
}

impl BenchmarkReport {
    /// Mean per-image inference time of per-region over shared-map mode.
    pub fn speed_ratio(&self) -> Option<f64> {
        let get = |m| self.modes.iter().find(|t| t.mode == m).map(|t| t.inference.mean_ms);
        match (get(PipelineMode::PerRegion), get(PipelineMode::SharedMap)) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        }
    }
}

/// What the benchmark measures.
#[derive(Debug, Clone)]
pub struct BenchmarkPlan {
    pub modes: Vec<PipelineMode>,
    /// Proposals per image fed to the network.
    pub roi_count: usize,
    /// Untimed passes over the first image before measuring each mode.
    pub warmup: usize,
}

/// Times proposal generation once per image, then the network and
/// post-processing of every image in each mode, sequentially so stage
/// timings are not shared with other work.
pub fn benchmark(
    params: &NetworkParams<f32>,
    images: &[RgbImage],
    proposals: &ProposalParams,
    post: &PostprocessParams,
    plan: &BenchmarkPlan,
) -> Result<BenchmarkReport, PipelineError> {
    if images.is_empty() {
        return Err(PipelineError::InvalidSweep("benchmark needs at least one image".into()));
    }
    proposals.validate()?;
    if images.len() < 10 {
        log::warn!("benchmarking {} images; means over fewer than 10 are unstable", images.len());
    }
    let mut boxes: Vec<Vec<BoundingBox>> = Vec::with_capacity(images.len());
    let mut proposal_times = Vec::with_capacity(images.len());
    for img in images {
        let t = Instant::now();
        let p: Vec<BoundingBox> = selective_search(img, proposals).into_iter().map(|r| r.bbox).collect();
        proposal_times.push(t.elapsed());
        boxes.push(p.into_iter().take(plan.roi_count).collect());
    }
    let tensors: Vec<_> = images.iter().map(image_tensor).collect();

    let mut modes = Vec::new();
    for &mode in &plan.modes {
        let mut p = params.clone();
        p.arch.mode = mode;
        for _ in 0..plan.warmup {
            detect_image(&p, &tensors[0], &boxes[0])?;
        }
        let mut stages: Vec<StageTimings> = Vec::new();
        let mut post_times = Vec::new();
        for ((img, x), rois) in images.iter().zip(&tensors).zip(&boxes) {
            let raw = detect_image(&p, x, rois)?;
            let t = Instant::now();
            postprocess_image(rois, &raw.class_probs, &raw.offsets, ImageSize::new(img.width(), img.height()), post)?;
            post_times.push(t.elapsed());
            stages.push(raw.timings);
        }
        let pick = |f: fn(&StageTimings) -> Duration| StageStats::from_durations(&stages.iter().map(f).collect::<Vec<_>>());
        let inference: Vec<Duration> = stages.iter().zip(&post_times).map(|(s, p)| s.total() + *p).collect();
        let total: Vec<Duration> = inference.iter().zip(&proposal_times).map(|(a, b)| *a + *b).collect();
        modes.push(ModeTiming {
            mode,
            images: images.len(),
            mean_rois: boxes.iter().map(|b| b.len() as f64).sum::<f64>() / images.len() as f64,
            proposal: StageStats::from_durations(&proposal_times),
            backbone: pick(|s| s.backbone),
            pooling: pick(|s| s.pooling),
            fc: pick(|s| s.fc),
            heads: pick(|s| s.heads),
            postprocess: StageStats::from_durations(&post_times),
            inference: StageStats::from_durations(&inference),
            total: StageStats::from_durations(&total),
        });
    }
    Ok(BenchmarkReport { machine: MachineInfo::current(), train_seconds: None, modes })
}

fn mode_name(m: PipelineMode) -> &'static str {
    match m {
        PipelineMode::PerRegion => "per_region",
        PipelineMode::SharedMap => "shared_map",
    }
}

/// Long format: one row per mode and stage.
pub fn render_timing_csv(report: &BenchmarkReport) -> String {
    let header: Vec<String> =
        ["mode", "stage", "images", "mean_ms", "std_ms", "median_ms"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for m in &report.modes {
        for (stage, s) in [
            ("proposal", m.proposal),
            ("backbone", m.backbone),
            ("pooling", m.pooling),
            ("fc", m.fc),
            ("heads", m.heads),
            ("postprocess", m.postprocess),
            ("inference", m.inference),
            ("total", m.total),
        ] {
            rows.push(vec![
                mode_name(m.mode).to_string(),
                stage.to_string(),
                m.images.to_string(),
                format!("{:.3}", s.mean_ms),
                format!("{:.3}", s.std_ms),
                format!("{:.3}", s.median_ms),
            ]);
        }
    }
    if let Some(t) = report.train_seconds {
        rows.push(vec!["".into(), "train_total".into(), "".into(), format!("{:.3}", t * 1e3), "".into(), "".into()]);
    }
    to_csv(&header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_samples() {
        let d: Vec<Duration> = [1u64, 2, 3, 4].iter().map(|&x| Duration::from_millis(x)).collect();
        let s = StageStats::from_durations(&d);
        assert!((s.mean_ms - 2.5).abs() < 1e-9);
        assert!((s.median_ms - 2.5).abs() < 1e-9);
        assert!((s.std_ms - 1.25f64.sqrt()).abs() < 1e-9);
        assert_eq!(StageStats::from_durations(&[]), StageStats::default());
    }
}
