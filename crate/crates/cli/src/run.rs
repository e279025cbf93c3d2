//! Configuration resolution, staged output directories and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use hrdepth::arch::{ArchConfig, FusionKind};
use hrdepth::kv::KvMap;
use hrdepth::train::TrainConfig;

use crate::Common;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration; nothing was run.
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

pub fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

pub fn runtime(e: impl ToString) -> Failure {
    Failure::Runtime(e.to_string())
}

/// The config file merged with `--set` overrides.
pub fn config_kv(common: &Common) -> Result<KvMap, Failure> {
    let mut kv = match &common.config {
        Some(p) => KvMap::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => KvMap::new(),
    };
    for o in &common.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| usage(format!("override {o:?} is not key=value")))?;
        kv.insert(k.trim(), v.trim());
    }
    Ok(kv)
}

/// Keys under `prefix`, with the prefix removed.
pub fn sub_kv(kv: &KvMap, prefix: &str) -> KvMap {
    let mut out = KvMap::new();
    for (k, v) in kv.iter() {
        if let Some(rest) = k.strip_prefix(prefix) {
            out.insert(rest, v);
        }
    }
    out
}

pub fn fusion(common: &Common) -> Result<Option<FusionKind>, Failure> {
    common.fusion.as_deref().map(|f| f.parse().map_err(usage)).transpose()
}

/// Architecture from `--arch`/`--fusion`/`--scales`, falling back to `base`.
pub fn arch(common: &Common, base: &ArchConfig) -> Result<ArchConfig, Failure> {
    let fusion = fusion(common)?;
    let mut a = match &common.arch {
        Some(name) => ArchConfig::named(name, fusion).map_err(usage)?,
        None => ArchConfig { fusion_kind: fusion.unwrap_or(base.fusion_kind), ..base.clone() },
    };
    if let Some(s) = common.scales {
        a = a.with_scales(s);
    }
    a.validate().map_err(usage)?;
    Ok(a)
}

pub fn resolution(common: &Common) -> Result<Option<(usize, usize)>, Failure> {
    common.resolution.as_deref().map(|r| hrdepth::eval::parse_resolution(r).map_err(usage)).transpose()
}

/// Defaults, then the config file and overrides, then individual flags.
pub fn train_config(common: &Common, kv: &KvMap, base: TrainConfig) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::from_kv_over(kv, &base).map_err(usage)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some((w, h)) = resolution(common)? {
        cfg.width = w;
        cfg.height = h;
    }
    cfg.arch = arch(common, &cfg.arch)?;
    cfg.loss.num_scales = cfg.arch.num_output_scales;
    if common.automask {
        cfg.loss.automask = true;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

/// An output directory assembled under a hidden sibling and renamed into
/// place when the command finishes, so it never appears half-written.
pub struct Staged {
    pub dir: PathBuf,
    target: PathBuf,
}

impl Staged {
    pub fn create(target: &Path) -> Result<Self, Failure> {
        if target.exists() {
            return Err(usage(format!("output directory {} already exists", target.display())));
        }
        let name = target
            .file_name()
            .ok_or_else(|| usage(format!("output path {} has no final component", target.display())))?;
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(runtime)?;
        let dir = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
        fs::create_dir(&dir).map_err(runtime)?;
        Ok(Staged { dir, target: target.to_path_buf() })
    }

    /// Writes the manifest with the outcome and moves the directory into place.
    pub fn finish(self, mut manifest: KvMap, outcome: &Result<(), Failure>) -> Result<(), Failure> {
        manifest.insert("status", if outcome.is_ok() { "ok" } else { "failed" });
        if let Err(f) = outcome {
            manifest.insert("error", f.message().replace('\n', " "));
        }
        fs::write(self.dir.join("manifest.txt"), manifest.emit()).map_err(runtime)?;
        fs::rename(&self.dir, &self.target).map_err(runtime)?;
        log::info!("wrote {}", self.target.display());
        Ok(())
    }
}

/// Manifest header shared by every verb.
pub fn manifest(verb: &str) -> KvMap {
    let mut kv = KvMap::new();
    kv.insert("verb", verb);
    kv.insert("version", env!("CARGO_PKG_VERSION"));
    kv
}

/// Runs `body` inside a staged output directory when `--out` is given.
pub fn with_output(
    out: Option<&Path>,
    mut manifest: KvMap,
    body: impl FnOnce(Option<&Path>, &mut KvMap) -> Result<(), Failure>,
) -> Result<(), Failure> {
    match out {
        None => body(None, &mut manifest),
        Some(target) => {
            let staged = Staged::create(target)?;
            let outcome = body(Some(&staged.dir), &mut manifest);
            staged.finish(manifest, &outcome)?;
            outcome
        }
    }
}
