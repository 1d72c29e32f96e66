//! One function per subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde_json::json;

use logodet::brand::render_brand_csv;
use logodet::dataset::{dataset_stats, load_dataset, save_annotation_file, split_dataset, CLASSES_FILE, ANNOTATIONS_FILE};
use logodet::eval::{
    benchmark, compare_compressed, draw_overlay, render_brand_accuracy_csv, render_class_ap_csv, render_sweep_csv,
    render_timing_csv, run_sweep, BenchmarkPlan,
};
use logodet::network::{load_checkpoint, render_loss_trace, save_checkpoint, NetworkParams, PipelineMode};
use logodet::pipeline::{
    brand_predictions, compute_proposals, detect_dataset, evaluate_run, proposal_sets, synthesize, train_on, SplitData,
};
use logodet::postprocess::{parse_detections, render_detections};
use logodet::proposals::{recall_counts, render_proposals};
use logodet::report::to_csv;
use logodet::svd::compress_network;

use crate::context::{invalid, load_pixels, load_proposals, load_split, Failure, Run};
use crate::{Cli, Command};

pub fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Synth => synth(Run::new(cli, "synth")?),
        Command::Split => split(Run::new(cli, "split")?),
        Command::Stats { data, split } => stats(Run::new(cli, "stats")?, data.as_deref(), split),
        Command::Propose { split } => propose(Run::new(cli, "propose")?, split),
        Command::Train { split } => train(Run::new(cli, "train")?, split),
        Command::Detect { split, checkpoint, output } => {
            detect(Run::new(cli, "detect")?, split, checkpoint.as_deref(), output)
        }
        Command::Compress { checkpoint, compare, split } => {
            compress(Run::new(cli, "compress")?, checkpoint.as_deref(), *compare, split)
        }
        Command::Evaluate { data, split, detections, iou, overlays } => {
            evaluate(Run::new(cli, "evaluate")?, data.as_deref(), split, detections.as_deref(), *iou, *overlays)
        }
        Command::Sweep { axis, values, checkpoint } => sweep(Run::new(cli, "sweep")?, *axis, values, checkpoint.as_deref()),
        Command::Benchmark { checkpoint, split } => benchmark_cmd(Run::new(cli, "benchmark")?, checkpoint.as_deref(), split),
    }
}

fn model(run: &Run, checkpoint: Option<&Path>) -> Result<NetworkParams<f32>, Failure> {
    let path = checkpoint.map_or_else(|| run.path("model.ckpt"), Path::to_path_buf);
    Ok(load_checkpoint(&path).with_context(|| format!("loading {} (run `train` first)", path.display()))?)
}

fn synth(mut run: Run) -> Result<(), Failure> {
    let root = run.data_root(None);
    let out = synthesize(&run.cfg)?;
    out.write(&root).with_context(|| format!("writing dataset to {}", root.display()))?;
    run.produced(root.join(CLASSES_FILE));
    run.produced(root.join(ANNOTATIONS_FILE));
    println!("{} images, {} objects -> {}", out.dataset.len(), out.dataset.num_objects(), root.display());
    run.finish()
}

fn split(mut run: Run) -> Result<(), Failure> {
    let root = run.data_root(None);
    let ds = load_dataset(&root).with_context(|| format!("loading {}", root.display()))?;
    let (train, val, test) = split_dataset(&ds, run.cfg.split, run.cfg.split_seed())?;
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        let file = format!("{name}.jsonl");
        save_annotation_file(part, &root, &file)?;
        run.produced(root.join(file));
    }
    println!("train {} / val {} / test {}", train.len(), val.len(), test.len());
    run.finish()
}

fn stats(mut run: Run, data: Option<&Path>, split: &str) -> Result<(), Failure> {
    let ds = load_split(&run.data_root(data), split)?;
    let s = dataset_stats(&ds);
    let header: Vec<String> = ["group", "name", "count"].iter().map(|x| x.to_string()).collect();
    let mut rows = vec![
        vec!["total".into(), "images".into(), s.num_images.to_string()],
        vec!["total".into(), "objects".into(), s.num_objects.to_string()],
        vec!["total".into(), "classes".into(), s.num_classes.to_string()],
        vec!["total".into(), "brands".into(), s.num_brands.to_string()],
    ];
    for (group, list) in
        [("class_objects", &s.objects_per_class), ("brand_objects", &s.objects_per_brand), ("brand_images", &s.images_per_brand)]
    {
        rows.extend(list.iter().map(|c| vec![group.to_string(), c.name.clone(), c.count.to_string()]));
    }
    run.write("stats.csv", to_csv(&header, rows))?;
    println!("{}", serde_json::to_string_pretty(&s)?);
    run.finish()
}

fn propose(mut run: Run, split: &str) -> Result<(), Failure> {
    let root = run.data_root(None);
    let ds = load_split(&root, split)?;
    let images = load_pixels(&ds, &root)?;
    let props = compute_proposals(&images, &run.cfg.proposal_params())?;
    run.write("proposals.jsonl", render_proposals(&proposal_sets(&ds, &props)))?;
    let header: Vec<String> = ["top_k", "recall"].iter().map(|x| x.to_string()).collect();
    let mut rows = Vec::new();
    for k in [250usize, 500, 1000, 2000] {
        let (mut hit, mut total) = (0, 0);
        for (a, p) in ds.annotations.iter().zip(&props) {
            let (h, n) = recall_counts(&p[..k.min(p.len())], &a.boxes(), 0.5);
            hit += h;
            total += n;
        }
        let r = if total == 0 { 1.0 } else { hit as f64 / total as f64 };
        rows.push(vec![k.to_string(), r.to_string()]);
    }
    run.write("proposal_recall.csv", to_csv(&header, rows))?;
    let mean = props.iter().map(Vec::len).sum::<usize>() as f64 / props.len().max(1) as f64;
    println!("{} images, {mean:.1} proposals per image", props.len());
    run.finish()
}

fn train(mut run: Run, split: &str) -> Result<(), Failure> {
    let root = run.data_root(None);
    let ds = load_split(&root, split)?;
    let images = load_pixels(&ds, &root)?;
    let proposals = load_proposals(&run, &ds)?;
    let out = train_on(&run.cfg, SplitData::new(&ds, &images, &proposals)?)?;
    let path = run.path("model.ckpt");
    save_checkpoint(&out.params, &path)?;
    run.produced(path);
    run.write("loss.csv", render_loss_trace(&out.loss_trace))?;
    let last = out.loss_trace.last().map_or(f64::NAN, |r| r.loss);
    println!("{} iterations, final loss {last:.4}, {} skipped minibatches", out.loss_trace.len(), out.skipped_batches);
    run.finish()
}

fn detect(mut run: Run, split: &str, checkpoint: Option<&Path>, output: &str) -> Result<(), Failure> {
    let params = model(&run, checkpoint)?;
    let root = run.data_root(None);
    let ds = load_split(&root, split)?;
    let images = load_pixels(&ds, &root)?;
    let proposals = load_proposals(&run, &ds)?;
    let det = detect_dataset(&params, SplitData::new(&ds, &images, &proposals)?, run.cfg.eval.roi_count, &run.cfg.postprocess)?;
    run.write(output, render_detections(&det.detections))?;
    let n: usize = det.detections.iter().map(|d| d.detections.len()).sum();
    println!("{} images, {n} detections", det.detections.len());
    run.finish()
}

fn compress(mut run: Run, checkpoint: Option<&Path>, compare: bool, split: &str) -> Result<(), Failure> {
    let dense = model(&run, checkpoint)?;
    let (small, layers) = compress_network(&dense, run.cfg.svd.rank)?;
    let path = run.path("model_svd.ckpt");
    save_checkpoint(&small, &path)?;
    run.produced(path);
    let header: Vec<String> = ["layer", "out_dim", "in_dim", "rank", "dense_flops", "compressed_flops", "relative_error"]
        .iter()
        .map(|x| x.to_string())
        .collect();
    let rows = layers.iter().map(|l| {
        vec![
            l.layer.to_string(),
            l.out_dim.to_string(),
            l.in_dim.to_string(),
            l.rank.to_string(),
            l.dense_flops.to_string(),
            l.compressed_flops.to_string(),
            l.relative_error.to_string(),
        ]
    });
    run.write("svd_layers.csv", to_csv(&header, rows))?;
    if compare {
        let root = run.data_root(None);
        let ds = load_split(&root, split)?;
        let images = load_pixels(&ds, &root)?;
        let proposals = load_proposals(&run, &ds)?;
        let c = compare_compressed(
            &dense,
            &small,
            &layers,
            SplitData::new(&ds, &images, &proposals)?,
            run.cfg.eval.roi_count,
            &run.cfg.postprocess,
            &run.cfg.eval,
        )?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let h: Vec<String> = ["model", "map", "accuracy_micro", "auc_macro", "argmax_agreement", "flop_reduction"]
            .iter()
            .map(|x| x.to_string())
            .collect();
        let rows = [("dense", &c.dense, 1.0, 0.0), ("compressed", &c.compressed, c.argmax_agreement, c.flop_reduction)]
            .map(|(name, s, agree, flops)| {
                vec![
                    name.to_string(),
                    opt(s.detection.map),
                    s.accuracy.micro.to_string(),
                    opt(s.auc.as_ref().map(|a| a.macro_auc)),
                    agree.to_string(),
                    flops.to_string(),
                ]
            });
        run.write("compression.csv", to_csv(&h, rows))?;
        let h: Vec<String> = ["model", "fc_mean_ms", "fc_std_ms", "fc_median_ms", "image_time_ratio"]
            .iter()
            .map(|x| x.to_string())
            .collect();
        let rows = [("dense", c.fc_dense, 1.0), ("compressed", c.fc_compressed, c.image_time_ratio)].map(|(name, s, r)| {
            vec![
                name.to_string(),
                format!("{:.4}", s.mean_ms),
                format!("{:.4}", s.std_ms),
                format!("{:.4}", s.median_ms),
                format!("{r:.4}"),
            ]
        });
        // Timing varies between runs; kept apart from the deterministic tables.
        fs::write(run.path("compression_timing.csv"), to_csv(&h, rows))?;
        println!(
            "agreement {:.4}, mAP {} -> {}, fc latency -{:.1}%",
            c.argmax_agreement,
            opt(c.dense.detection.map),
            opt(c.compressed.detection.map),
            100.0 * c.fc_latency_reduction
        );
    }
    run.finish()
}

fn overlay_name(image: &str) -> String {
    let stem = Path::new(image).file_stem().map_or_else(|| image.to_string(), |s| s.to_string_lossy().into_owned());
    format!("overlays/{stem}.png")
}

fn evaluate(
    mut run: Run,
    data: Option<&Path>,
    split: &str,
    detections: Option<&Path>,
    iou: Option<f64>,
    overlays: usize,
) -> Result<(), Failure> {
    if let Some(t) = iou {
        if !(t > 0.0 && t <= 1.0) {
            return Err(invalid(format!("--iou {t} must lie in (0, 1]")));
        }
    }
    let root = run.data_root(data);
    let ds = load_split(&root, split)?;
    let det_path = detections.map_or_else(|| run.path("detections.jsonl"), Path::to_path_buf);
    let text = fs::read_to_string(&det_path).with_context(|| format!("reading {}", det_path.display()))?;
    let dets = parse_detections(&text).with_context(|| format!("parsing {}", det_path.display()))?;
    let mut eval = run.cfg.eval.clone();
    if let Some(t) = iou {
        eval.iou_threshold = t;
    }
    let summary = evaluate_run(&ds, &dets, &eval)?;
    run.write("class_ap.csv", render_class_ap_csv(&summary.detection, &ds.brand_map))?;
    run.write("brand_accuracy.csv", render_brand_accuracy_csv(&summary.accuracy, summary.auc.as_ref(), &ds.brand_map))?;
    let preds = brand_predictions(&dets, &ds, eval.aggregation, eval.min_brand_score)?;
    run.write("brand_predictions.csv", render_brand_csv(&preds, &ds.brand_map))?;

    let by_image: std::collections::HashMap<&str, &[logodet::Detection]> =
        dets.iter().map(|d| (d.image.as_str(), &d.detections[..])).collect();
    for ann in ds.annotations.iter().take(overlays) {
        let path = root.join(&ann.image);
        let Ok(img) = image::open(&path) else {
            log::warn!("no image at {}; overlay skipped", path.display());
            continue;
        };
        let d = by_image.get(ann.image.as_str()).copied().unwrap_or(&[]);
        let out: PathBuf = run.path(&overlay_name(&ann.image));
        fs::create_dir_all(out.parent().expect("overlay dir"))?;
        draw_overlay(&img.to_rgb8(), ann, d, run.cfg.postprocess.score_threshold.max(0.3))
            .save(&out)
            .with_context(|| format!("writing {}", out.display()))?;
        run.produced(out);
    }
    let report = json!({
        "iou_threshold": eval.iou_threshold,
        "map": summary.detection.map,
        "accuracy_micro": summary.accuracy.micro,
        "accuracy_macro": summary.accuracy.macro_mean,
        "auc_macro": summary.auc.as_ref().map(|a| a.macro_auc),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    run.finish()
}

fn sweep(mut run: Run, axis: logodet::eval::SweepAxis, values: &[f64], checkpoint: Option<&Path>) -> Result<(), Failure> {
    if values.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(invalid("--values must be sorted ascending"));
    }
    for &v in values {
        axis.check(v).map_err(|e| invalid(format!("--values: {e}")))?;
    }
    let root = run.data_root(None);
    let train = load_split(&root, "train")?;
    let test = load_split(&root, "test")?;
    let train_px = load_pixels(&train, &root)?;
    let test_px = load_pixels(&test, &root)?;
    let train_props = load_proposals(&run, &train)?;
    let test_props = load_proposals(&run, &test)?;
    let default_ckpt = run.path("model.ckpt");
    let params = match checkpoint {
        Some(p) => Some(model(&run, Some(p))?),
        None if default_ckpt.exists() => Some(model(&run, None)?),
        None => None,
    };
    let result = run_sweep(
        axis,
        values,
        &run.cfg,
        SplitData::new(&train, &train_px, &train_props)?,
        SplitData::new(&test, &test_px, &test_props)?,
        params.as_ref(),
    )?;
    run.write(&format!("sweep_{}.csv", axis.name()), render_sweep_csv(&result))?;
    for r in &result.rows {
        println!("{} = {}: mAP {:?}, accuracy {:.4}", axis, r.value, r.summary.detection.map, r.summary.accuracy.micro);
    }
    run.finish()
}

fn benchmark_cmd(run: Run, checkpoint: Option<&Path>, split: &str) -> Result<(), Failure> {
    let params = model(&run, checkpoint)?;
    let root = run.data_root(None);
    let mut ds = load_split(&root, split)?;
    ds.annotations.truncate(run.cfg.benchmark.images);
    let images = load_pixels(&ds, &root)?;
    let plan = BenchmarkPlan {
        modes: vec![PipelineMode::SharedMap, PipelineMode::PerRegion],
        roi_count: run.cfg.benchmark.roi_count,
        warmup: run.cfg.benchmark.warmup,
    };
    let mut report = benchmark(&params, &images, &run.cfg.proposal_params(), &run.cfg.postprocess, &plan)?;
    report.train_seconds = fs::read_to_string(run.path("manifests/train.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v["elapsed_seconds"].as_f64());
    // Both files hold measurements and are expected to differ between runs.
    fs::write(run.path("timing.csv"), render_timing_csv(&report))?;
    let ratio = report.speed_ratio();
    fs::write(
        run.path("benchmark.json"),
        serde_json::to_string_pretty(&json!({ "report": report, "per_region_over_shared": ratio }))? + "\n",
    )?;
    for m in &report.modes {
        println!("{:?}: {:.1} ms/image inference, {:.1} ms proposals", m.mode, m.inference.mean_ms, m.proposal.mean_ms);
    }
    if let Some(r) = ratio {
        println!("per-region / shared-map: {r:.1}x");
    }
    run.finish()
}
