//! Configuration loading, output layout and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context as _};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use logodet::config::Config;
use logodet::dataset::{load_annotation_file, load_images, Dataset, ANNOTATIONS_FILE};
use logodet::geometry::BoundingBox;
use logodet::pipeline::{align_proposals, PipelineError};
use logodet::proposals::parse_proposals;

use crate::{Cli, OUTPUT_ROOT_ENV};

/// Exit-status class of a failed command.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or arguments (exit 1).
    Validation(anyhow::Error),
    /// Anything going wrong while running (exit 2).
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        let validation = e.chain().any(|c| {
            c.downcast_ref::<logodet::config::ConfigError>().is_some()
                || c.downcast_ref::<PipelineError>().is_some_and(PipelineError::is_validation)
        });
        if validation {
            Failure::Validation(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

pub fn invalid(msg: impl std::fmt::Display) -> Failure {
    Failure::Validation(anyhow!("{msg}"))
}

/// Sets `a.b.c` in a JSON object tree, creating intermediate objects.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), Failure> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("malformed config key {key:?}")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| invalid(format!("config key {key}: {part} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("key has at least one part")
}

/// Config file (or defaults), then `--set` overrides, then `--seed`.
pub fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let (text, origin) = match &cli.config {
        Some(p) => (
            fs::read_to_string(p).with_context(|| format!("reading config {}", p.display())).map_err(Failure::Validation)?,
            p.display().to_string(),
        ),
        None => ("{}".to_string(), "<defaults>".to_string()),
    };
    let mut tree: Value = serde_json::from_str(&text).map_err(|e| invalid(format!("config {origin}: {e}")))?;
    if !tree.is_object() {
        return Err(invalid(format!("config {origin}: top level must be an object")));
    }
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| invalid(format!("--set {o:?}: expected KEY=VALUE")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        set_path(&mut tree, k.trim(), value)?;
    }
    if let Some(s) = cli.seed {
        tree["seed"] = Value::from(s);
    }
    Ok(Config::from_json(&tree.to_string(), &origin)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct OutputRecord {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    arguments: Vec<String>,
    config_sha256: String,
    seed: u64,
    versions: Versions,
    threads: usize,
    /// Wall time of the command; the only field expected to differ between reruns.
    elapsed_seconds: f64,
    outputs: Vec<OutputRecord>,
    config: &'a Config,
}

#[derive(Serialize)]
struct Versions {
    logodet: &'static str,
    checkpoint_format: u32,
}

/// One command invocation: resolved config, output directory, written files.
pub struct Run {
    pub cfg: Config,
    pub out: PathBuf,
    command: &'static str,
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(cli: &Cli, command: &'static str) -> Result<Run, Failure> {
        let cfg = load_config(cli)?;
        let out = cli
            .out
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("logodet-out"));
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run { cfg, out, command, started: Instant::now(), outputs: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn data_root(&self, data: Option<&Path>) -> PathBuf {
        data.map_or_else(|| self.path("dataset"), Path::to_path_buf)
    }

    /// Records a file written by the command for the manifest.
    pub fn produced(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn write(&mut self, name: &str, body: impl AsRef<[u8]>) -> Result<PathBuf, Failure> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.produced(path.clone());
        Ok(path)
    }

    pub fn finish(self) -> Result<(), Failure> {
        let mut outputs = Vec::new();
        for p in &self.outputs {
            let bytes = fs::read(p).with_context(|| format!("reading back {}", p.display()))?;
            let rel = p.strip_prefix(&self.out).unwrap_or(p);
            outputs.push(OutputRecord {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = Manifest {
            command: self.command,
            arguments: std::env::args().skip(1).collect(),
            config_sha256: sha256_hex(self.cfg.to_json().as_bytes()),
            seed: self.cfg.seed,
            versions: Versions { logodet: env!("CARGO_PKG_VERSION"), checkpoint_format: logodet::network::CHECKPOINT_VERSION },
            threads: rayon::current_num_threads(),
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            outputs,
            config: &self.cfg,
        };
        let path = self.out.join("manifests").join(format!("{}.json", self.command));
        fs::create_dir_all(path.parent().expect("manifest dir"))?;
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Annotation file holding a split; `all` is the full dataset.
pub fn split_file(split: &str) -> Result<String, Failure> {
    match split {
        "all" => Ok(ANNOTATIONS_FILE.to_string()),
        "train" | "val" | "test" => Ok(format!("{split}.jsonl")),
        other => Err(invalid(format!("unknown split {other:?}; expected all, train, val or test"))),
    }
}

pub fn load_split(root: &Path, split: &str) -> Result<Dataset, Failure> {
    let file = split_file(split)?;
    load_annotation_file(root, &file)
        .with_context(|| format!("loading split {split} from {}", root.display()))
        .map_err(Failure::Runtime)
}

pub fn load_pixels(ds: &Dataset, root: &Path) -> Result<Vec<image::RgbImage>, Failure> {
    Ok(load_images(ds, root).with_context(|| format!("loading images under {}", root.display()))?)
}

/// Proposals of `ds`'s images from `<out>/proposals.jsonl`.
pub fn load_proposals(run: &Run, ds: &Dataset) -> Result<Vec<Vec<BoundingBox>>, Failure> {
    let path = run.path("proposals.jsonl");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {} (run `propose` first)", path.display()))?;
    let sets = parse_proposals(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(align_proposals(ds, &sets)?)
}
