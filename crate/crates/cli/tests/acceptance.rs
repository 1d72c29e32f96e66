//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 4 to 8 and 10 share one run of the `logodet` binary on the
//! shipped desk configuration; its artifacts stay under the cargo target
//! temp directory for inspection. Runs with a custom harness so the
//! per-criterion lines are always printed.

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;
#[path = "../../core/tests/support/tiny_net.rs"]
mod tiny_net;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use logodet::config::Config;
use logodet::dataset::load_annotation_file;
use logodet::dataset::synth::procedural_templates;
use logodet::eval::{brand_auc, evaluate_detections, mean_ap, ApMode};
use logodet::network::{gradient_check, GradCheckOptions, GradientFault, PipelineMode};
use logodet::pipeline::align_proposals;
use logodet::proposals::{parse_proposals, recall_counts};
use logodet::rng::stream_rng;
use logodet::BrandId;
use rand::Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config() -> PathBuf {
    workspace().join("configs/desk.json")
}

/// Runs the binary; returns stdout and wall seconds.
fn logodet(out: &Path, args: &[&str]) -> Result<(String, f64), String> {
    let t = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_logodet"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("LOGODET_OUTPUT_ROOT")
        .output()
        .map_err(|e| format!("spawning logodet: {e}"))?;
    if !o.status.success() {
        return Err(format!("logodet {args:?} failed ({:?}): {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    Ok((String::from_utf8_lossy(&o.stdout).into_owned(), t.elapsed().as_secs_f64()))
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Rows of a simple CSV (no quoted commas) keyed by header name.
fn csv_rows(text: &str) -> Vec<BTreeMap<String, String>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> Result<f64, String> {
    row.get(key).and_then(|v| v.parse().ok()).ok_or_else(|| format!("column {key} missing or not a number in {row:?}"))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Outcome {
    let t = Instant::now();
    let mut rng = stream_rng(2024, 0);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let inst = oracle::tiny_instance(&mut rng);
        let got = evaluate_detections(&inst.ds, &inst.dets, 0.5, ApMode::AllPoints).map_err(|e| e.to_string())?.map;
        mismatches += (got != oracle::map_ref(&inst.ds, &inst.dets, 0.5)) as usize;
    }
    let mut auc_checked = 0;
    let mut auc_bad = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=20);
        let brands = rng.random_range(2..=4);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..brands)).collect();
        let scores: Vec<Vec<f64>> =
            (0..n).map(|_| (0..brands).map(|_| rng.random_range(0..6) as f64 / 5.0).collect()).collect();
        let ids: Vec<BrandId> = labels.iter().map(|&l| BrandId(l as u32)).collect();
        if let Ok(r) = brand_auc(&scores, &ids, brands) {
            auc_checked += 1;
            let want = oracle::macro_auc_ref(&scores, &labels, brands).unwrap_or(f64::NAN);
            auc_bad += ((r.macro_auc - want).abs() >= 1e-12) as usize;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        mismatches == 0 && auc_bad == 0 && secs < 60.0,
        format!("mAP mismatches {mismatches}/1000, AUC mismatches {auc_bad}/{auc_checked}, {secs:.2} s"),
    )
}

fn published_row() -> Outcome {
    let row = [
        75.2, 50.8, 57.0, 56.2, 69.4, 67.2, 99.5, 42.5, 47.0, 46.1, 28.2, 89.1, 44.6, 58.6, 77.2, 82.2, 48.7, 64.9,
    ];
    let map = 100.0 * mean_ap(&row.iter().map(|v| Some(v / 100.0)).collect::<Vec<_>>()).ok_or("no classes")?;
    check((map - 61.4).abs() <= 0.05, format!("mean of 18 per-class APs {map:.4} vs reported 61.4"))
}

fn gradient_checks() -> Outcome {
    let mut worst: f64 = 0.0;
    for mode in [PipelineMode::SharedMap, PipelineMode::PerRegion] {
        let r = gradient_check(&tiny_net::params(false, mode, 3), &tiny_net::batch(4), &GradCheckOptions::default())
            .map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_error);
    }
    let opts = GradCheckOptions { fault: Some(GradientFault { tensor: 2, factor: 2.0 }), ..Default::default() };
    let fault = gradient_check(&tiny_net::params(false, PipelineMode::SharedMap, 5), &tiny_net::batch(6), &opts)
        .map_err(|e| e.to_string())?
        .max_rel_error;
    check(worst <= 1e-4 && fault > 0.5, format!("max relative error {worst:.2e}, planted fault {fault:.3}"))
}

/// Everything the desk run leaves behind.
struct Desk {
    out: PathBuf,
    cfg: Config,
    pipeline_seconds: f64,
    evaluate: Value,
    compression_quarter: (String, String),
    compression_full: String,
}

fn desk_run() -> Result<Desk, String> {
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk");
    let _ = fs::remove_dir_all(&out);
    fs::create_dir_all(&out).map_err(|e| e.to_string())?;
    let cfg_path = desk_config();
    let cfg_arg = cfg_path.to_str().ok_or("config path is not UTF-8")?;
    let cfg = Config::from_json(&read(&cfg_path)?, cfg_arg).map_err(|e| e.to_string())?;
    let pipeline_seconds = std::cell::Cell::new(0.0);
    let step = |args: &[&str]| -> Result<String, String> {
        let mut full = vec!["--config", cfg_arg];
        full.extend_from_slice(args);
        let (stdout, secs) = logodet(&out, &full)?;
        eprintln!("  desk {:<40} {secs:>8.1} s", args.join(" "));
        pipeline_seconds.set(pipeline_seconds.get() + secs);
        Ok(stdout)
    };
    step(&["synth"])?;
    step(&["split"])?;
    step(&["propose"])?;
    step(&["train"])?;
    step(&["detect"])?;
    let evaluate: Value = serde_json::from_str(&step(&["evaluate"])?).map_err(|e| e.to_string())?;
    let total = pipeline_seconds.get();
    step(&["compress", "--compare"])?;
    let compression_quarter = (read(&out.join("compression.csv"))?, read(&out.join("compression_timing.csv"))?);
    step(&["--set", "svd.rank={\"rank_fraction\":1.0}", "compress", "--compare"])?;
    let compression_full = read(&out.join("compression.csv"))?;
    step(&["sweep", "--axis", "eval_iou", "--values", "0.5,0.6,0.7,0.8,0.9"])?;
    step(&["benchmark"])?;
    step(&["sweep", "--axis", "train_fraction", "--values", "0.25,0.5,1.0"])?;
    Ok(Desk { out, cfg, pipeline_seconds: total, evaluate, compression_quarter, compression_full })
}

fn end_to_end(d: &Desk) -> Outcome {
    let s = &d.cfg.synth;
    let (_, templates) = procedural_templates(s.num_brands, s.logos_per_brand);
    let sides: Vec<f64> = templates.iter().flatten().map(|t| t.width().max(t.height()) as f64).collect();
    let lo = sides.iter().copied().fold(f64::MAX, f64::min) * s.params.scale[0];
    let hi = sides.iter().copied().fold(0.0, f64::max) * s.params.scale[1];
    let root = d.out.join("dataset");
    let sizes: Vec<usize> = ["train.jsonl", "val.jsonl", "test.jsonl"]
        .iter()
        .map(|f| load_annotation_file(&root, f).map(|x| x.len()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let classes = s.num_brands * s.logos_per_brand;
    let map = d.evaluate["map"].as_f64().unwrap_or(f64::NAN);
    let acc = d.evaluate["accuracy_micro"].as_f64().unwrap_or(f64::NAN);
    let minutes = d.pipeline_seconds / 60.0;
    check(
        classes == 10
            && s.num_brands == 5
            && sizes == [500, 100, 200]
            && lo >= 64.0
            && hi <= 128.0
            && d.cfg.train.iterations == 2000
            && map >= 0.50
            && acc >= 0.70
            && minutes <= 60.0,
        format!(
            "{classes} classes / {} brands, splits {sizes:?}, logo long side {lo:.1}-{hi:.1} px, {} iterations; \
             mAP@0.5 {map:.4}, brand accuracy {acc:.4}, wall {minutes:.1} min on {} threads",
            s.num_brands,
            d.cfg.train.iterations,
            rayon::current_num_threads()
        ),
    )
}

fn proposal_quality(d: &Desk) -> Outcome {
    let root = d.out.join("dataset");
    let test = load_annotation_file(&root, "test.jsonl").map_err(|e| e.to_string())?;
    let sets = parse_proposals(&read(&d.out.join("proposals.jsonl"))?).map_err(|e| e.to_string())?;
    let props = align_proposals(&test, &sets).map_err(|e| e.to_string())?;
    let recalls: Vec<f64> = [250usize, 500, 1000, 2000]
        .iter()
        .map(|&k| {
            let (mut hit, mut total) = (0, 0);
            for (a, p) in test.annotations.iter().zip(&props) {
                let (h, n) = recall_counts(&p[..k.min(p.len())], &a.boxes(), 0.5);
                hit += h;
                total += n;
            }
            hit as f64 / total.max(1) as f64
        })
        .collect();
    let monotone = recalls.windows(2).all(|w| w[1] >= w[0]);
    check(recalls[3] >= 0.90 && monotone, format!("test recall@IoU0.5 at K 250/500/1000/2000: {recalls:.4?}"))
}

fn iou_trend(d: &Desk) -> Outcome {
    let rows = csv_rows(&read(&d.out.join("sweep_eval_iou.csv"))?);
    let maps: Vec<f64> = rows.iter().map(|r| num(r, "map")).collect::<Result<_, _>>()?;
    if maps.len() != 5 {
        return Err(format!("expected 5 sweep rows, got {}", maps.len()));
    }
    let monotone = maps.windows(2).all(|w| w[1] <= w[0]);
    check(monotone && maps[4] <= 0.5 * maps[0], format!("mAP at IoU 0.5..0.9: {maps:.4?}"))
}

fn speed_ratio(d: &Desk) -> Outcome {
    let b: Value = serde_json::from_str(&read(&d.out.join("benchmark.json"))?).map_err(|e| e.to_string())?;
    let modes = b["report"]["modes"].as_array().ok_or("no modes in benchmark.json")?;
    let mean = |name: &str| {
        modes
            .iter()
            .find(|m| m["mode"] == name)
            .and_then(|m| m["inference"]["mean_ms"].as_f64())
            .ok_or(format!("mode {name} missing"))
    };
    let (shared, per_region) = (mean("shared_map")?, mean("per_region")?);
    let ratio = per_region / shared;
    check(
        ratio >= 5.0,
        format!("inference ms/image at {} RoIs: per-region {per_region:.1}, shared-map {shared:.1}, ratio {ratio:.2}", d.cfg.benchmark.roi_count),
    )
}

fn svd_acceleration(d: &Desk) -> Outcome {
    let quality = |text: &str| -> Result<(BTreeMap<String, String>, BTreeMap<String, String>), String> {
        let rows = csv_rows(text);
        let find = |m: &str| rows.iter().find(|r| r.get("model").map(String::as_str) == Some(m)).cloned();
        Ok((find("dense").ok_or("no dense row")?, find("compressed").ok_or("no compressed row")?))
    };
    let (dense, quarter) = quality(&d.compression_quarter.0)?;
    let timing = csv_rows(&d.compression_quarter.1);
    let fc = |m: &str| {
        timing
            .iter()
            .find(|r| r.get("model").map(String::as_str) == Some(m))
            .ok_or(format!("no {m} timing"))
            .and_then(|r| num(r, "fc_mean_ms"))
    };
    let reduction = 1.0 - fc("compressed")? / fc("dense")?;
    let agreement = num(&quarter, "argmax_agreement")?;
    let flops = num(&quarter, "flop_reduction")?;
    let drop = num(&dense, "map")? - num(&quarter, "map")?;

    let (fdense, full) = quality(&d.compression_full)?;
    let mut full_deltas = Vec::new();
    for key in ["map", "accuracy_micro", "auc_macro"] {
        full_deltas.push((num(&full, key)? - num(&fdense, key)?).abs());
    }
    let full_ok = full_deltas.iter().all(|x| *x < 0.001);
    check(
        agreement >= 0.95 && drop <= 0.03 && reduction >= 0.30 && flops >= 0.30 && full_ok,
        format!(
            "25% rank: argmax agreement {agreement:.4}, mAP drop {:.2} pt, FC latency -{:.1}% (FLOPs -{:.1}%); \
             full rank |delta| mAP/acc/AUC {:.3}/{:.3}/{:.3} pt",
            100.0 * drop,
            100.0 * reduction,
            100.0 * flops,
            100.0 * full_deltas[0],
            100.0 * full_deltas[1],
            100.0 * full_deltas[2]
        ),
    )
}

fn training_size_trend(d: &Desk) -> Outcome {
    let rows = csv_rows(&read(&d.out.join("sweep_train_fraction.csv"))?);
    let maps: Vec<f64> = rows.iter().map(|r| num(r, "map")).collect::<Result<_, _>>()?;
    if maps.len() != 3 {
        return Err(format!("expected 3 sweep rows, got {}", maps.len()));
    }
    let ok = maps.windows(2).all(|w| w[1] >= w[0] - 0.01);
    check(ok, format!("mAP at 25/50/100% of train: {maps:.4?}"))
}

/// Relative paths of every file under `root` except run-to-run measurements.
fn result_files(root: &Path) -> Vec<PathBuf> {
    const MEASUREMENTS: [&str; 3] = ["timing.csv", "compression_timing.csv", "benchmark.json"];
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                if p.file_name().is_some_and(|n| n != "manifests") {
                    stack.push(p);
                }
            } else if !MEASUREMENTS.iter().any(|m| p.file_name().is_some_and(|n| n == *m)) {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let base = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let _ = fs::remove_dir_all(&base);
    let cfg_path = desk_config();
    let small: &[&str] = &[
        "--config", cfg_path.to_str().ok_or("config path is not UTF-8")?,
        "--set", "synth.num_images=24",
        "--set", "synth.image_width=128",
        "--set", "synth.image_height=128",
        "--set", "synth.params.scale=[0.55,0.7]",
        "--set", "proposals.top_k=300",
        "--set", "train.iterations=30",
        "--set", "train.max_proposals=300",
        "--set", "eval.roi_count=300",
        "--set", "benchmark.images=2",
        "--set", "benchmark.roi_count=100",
    ];
    let commands: &[&[&str]] = &[
        &["synth"],
        &["split"],
        &["stats"],
        &["propose"],
        &["train"],
        &["detect"],
        &["evaluate"],
        &["compress", "--compare"],
        &["sweep", "--axis", "eval_iou", "--values", "0.5,0.7"],
        &["sweep", "--axis", "roi_count", "--values", "50,300"],
        &["sweep", "--axis", "train_fraction", "--values", "0.5,1"],
        &["benchmark"],
    ];
    let mut dirs = Vec::new();
    for threads in ["1", "4"] {
        let out = base.join(format!("threads{threads}"));
        for cmd in commands {
            let mut args = small.to_vec();
            args.extend_from_slice(&["--threads", threads]);
            args.extend_from_slice(cmd);
            logodet(&out, &args)?;
        }
        dirs.push(out);
    }
    let (a, b) = (result_files(&dirs[0]), result_files(&dirs[1]));
    if a != b {
        return Err(format!("different file sets: {a:?} vs {b:?}"));
    }
    let differing: Vec<String> = a
        .iter()
        .filter(|f| fs::read(dirs[0].join(f)).ok() != fs::read(dirs[1].join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let csvs = a.iter().filter(|f| f.extension().is_some_and(|e| e == "csv")).count();
    check(
        differing.is_empty() && csvs >= 10,
        format!(
            "{} commands at 1 vs 4 threads: {} files compared ({csvs} CSV), {} differ {differing:?}",
            commands.len(),
            a.len(),
            differing.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut run = |id: u8, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let tag = if r.is_ok() { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag} {name}: {} ({:.1} s)", r.as_ref().unwrap_or_else(|e| e), t.elapsed().as_secs_f64());
        results.push((id, name, r));
    };
    run(1, "oracle equivalence", &mut oracle_equivalence);
    run(2, "per-class AP row consistency", &mut published_row);
    run(3, "gradient check", &mut gradient_checks);

    let desk = desk_run();
    let on_desk = |f: fn(&Desk) -> Outcome| -> Outcome {
        match &desk {
            Ok(d) => f(d),
            Err(e) => Err(format!("desk run failed: {e}")),
        }
    };
    run(4, "end-to-end desk benchmark", &mut || on_desk(end_to_end));
    run(5, "proposal quality", &mut || on_desk(proposal_quality));
    run(6, "IoU sweep trend", &mut || on_desk(iou_trend));
    run(7, "mode speed ratio", &mut || on_desk(speed_ratio));
    run(8, "SVD acceleration", &mut || on_desk(svd_acceleration));
    run(9, "determinism", &mut determinism);
    run(10, "training-size trend", &mut || on_desk(training_size_trend));

    let failed: Vec<u8> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
