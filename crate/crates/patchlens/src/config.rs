//! Experiment configuration: a flat dotted-key text format.
//!
//! One `key = value` assignment per line; `#` starts a comment; unknown keys
//! are rejected with their full path. The canonical serialization
//! ([`ExperimentConfig::to_text`]) parses back to an equal config.
//!
//! Minimal example:
//!
//! ```text
//! scene.kind = natural-mix
//! scene.count = 8
//! scene.rows = 96
//! scene.cols = 128
//! layout.bx = 5
//! layout.by = 4
//! out.dir = runs/demo
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::deconv::{FitMethod, L1Options, LambdaSpec};
use crate::enhance::Enhancer;
use crate::forward::{NoiseKind, NoiseSpec};
use crate::psf::{BasePsfKind, VariationMode};
use crate::scenes::SceneKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    Synthetic {
        kind: SceneKind,
        count: usize,
        rows: usize,
        cols: usize,
        channels: usize,
    },
    /// Directory of `meas_*` / `gt_*` pairs.
    Pairs { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PsfSource {
    Synthetic {
        kind: BasePsfKind,
        rows: usize,
        cols: usize,
    },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    /// None means a spatially uniform field (every local equals the base).
    pub mode: Option<VariationMode>,
    pub strength: f64,
    /// Grid the simulated field varies on; defaults to the reconstruction
    /// layout when unset.
    pub grid_bx: Option<usize>,
    pub grid_by: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutConfig {
    pub bx: usize,
    pub by: usize,
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TruncationConfig {
    Fractions(Vec<f64>),
    /// Explicit centered window extent on the support grid.
    Window { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub method: FitMethod,
    pub lambda: LambdaSpec,
    pub l1: L1Options,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceConfig {
    pub enabled: bool,
    pub fuse_weight: f64,
    /// One enhancer per schedule scale (patches, vertical, horizontal, full).
    pub enhancers: Vec<Enhancer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scene: SceneSource,
    /// Fraction of samples used for fitting; the rest are held out.
    pub train_frac: f64,
    pub psf: PsfSource,
    pub field: FieldConfig,
    pub layout: LayoutConfig,
    pub truncation: TruncationConfig,
    pub noise: NoiseSpec,
    pub fit: FitConfig,
    pub enhance: EnhanceConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneSource::Synthetic {
                kind: SceneKind::NaturalMix,
                count: 16,
                rows: 96,
                cols: 128,
                channels: 1,
            },
            train_frac: 0.75,
            psf: PsfSource::Synthetic {
                kind: BasePsfKind::GaussianSpeckle,
                rows: 17,
                cols: 17,
            },
            field: FieldConfig {
                mode: None,
                strength: 0.0,
                grid_bx: None,
                grid_by: None,
            },
            layout: LayoutConfig {
                bx: 5,
                by: 4,
                overlap: 16,
            },
            truncation: TruncationConfig::Fractions(vec![1.0]),
            noise: NoiseSpec::none(),
            fit: FitConfig {
                method: FitMethod::LeastSquares,
                lambda: LambdaSpec::default(),
                l1: L1Options::default(),
            },
            enhance: EnhanceConfig {
                enabled: false,
                fuse_weight: 0.5,
                enhancers: vec![Enhancer::Identity; 4],
            },
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

// ---------------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------------

struct KeyMap {
    entries: BTreeMap<String, String>,
    used: std::collections::BTreeSet<String>,
}

impl KeyMap {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(Self {
            entries,
            used: Default::default(),
        })
    }

    fn get(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.entries.get(key).cloned()
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn parse_as<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`"))),
        }
    }

    fn finish(self) -> Result<()> {
        let unknown: Vec<&String> = self
            .entries
            .keys()
            .filter(|k| !self.used.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {unknown:?}")))
        }
    }
}

fn parse_scene_kind(map: &mut KeyMap) -> Result<SceneKind> {
    let name = map.get("scene.kind").unwrap_or_else(|| "natural-mix".into());
    match name.as_str() {
        "stripes" => Ok(SceneKind::Stripes {
            period: map.parse_as("scene.stripes.period", 8usize)?,
        }),
        "checker" => Ok(SceneKind::Checker {
            cell: map.parse_as("scene.checker.cell", 8usize)?,
        }),
        "glyphs" => Ok(SceneKind::Glyphs),
        "natural-mix" => Ok(SceneKind::NaturalMix),
        other => Err(Error::Config(format!("scene.kind: unknown kind `{other}`"))),
    }
}

fn parse_f64_list(map: &mut KeyMap, key: &str) -> Result<Option<Vec<f64>>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: cannot parse `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some),
    }
}

fn parse_usize_list(map: &mut KeyMap, key: &str, default: Vec<usize>) -> Result<Vec<usize>> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => {
            if v.trim().is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("{key}: cannot parse `{s}`")))
                })
                .collect()
        }
    }
}

fn parse_enhancers(map: &mut KeyMap) -> Result<Vec<Enhancer>> {
    let names = map
        .get("enhance.kinds")
        .unwrap_or_else(|| "identity,identity,identity,identity".into());
    let tv_weight = map.parse_as("enhance.tv.weight", 0.1f64)?;
    let tv_iters = map.parse_as("enhance.tv.iters", 30usize)?;
    let us_sigma = map.parse_as("enhance.unsharp.sigma", 1.5f64)?;
    let us_amount = map.parse_as("enhance.unsharp.amount", 0.5f64)?;
    names
        .split(',')
        .map(|s| match s.trim() {
            "identity" => Ok(Enhancer::Identity),
            "tv-denoise" => Ok(Enhancer::TvDenoise {
                weight: tv_weight,
                iters: tv_iters,
            }),
            "unsharp" => Ok(Enhancer::Unsharp {
                sigma: us_sigma,
                amount: us_amount,
            }),
            other => Err(Error::Config(format!(
                "enhance.kinds: unknown enhancer `{other}`"
            ))),
        })
        .collect()
}

/// Parses and validates a configuration from text. Paths referenced by the
/// config must exist relative to `base_dir` (usually the config file's
/// directory).
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut map = KeyMap::parse(text)?;
    let d = ExperimentConfig::default();

    let seed = map.parse_as("seed", d.seed)?;

    let scene = match map.get("scene.source").as_deref().unwrap_or("synthetic") {
        "synthetic" => SceneSource::Synthetic {
            kind: parse_scene_kind(&mut map)?,
            count: map.parse_as("scene.count", 16usize)?,
            rows: map.parse_as("scene.rows", 96usize)?,
            cols: map.parse_as("scene.cols", 128usize)?,
            channels: map.parse_as("scene.channels", 1usize)?,
        },
        "pairs" => {
            let dir = map
                .get("scene.pairs_dir")
                .ok_or_else(|| Error::Config("scene.pairs_dir required for pairs source".into()))?;
            let dir = base_dir.join(dir);
            if !dir.is_dir() {
                return Err(Error::Config(format!(
                    "scene.pairs_dir: {} does not exist",
                    dir.display()
                )));
            }
            SceneSource::Pairs { dir }
        }
        other => {
            return Err(Error::Config(format!(
                "scene.source: unknown source `{other}`"
            )))
        }
    };
    if let SceneSource::Synthetic {
        count, channels, ..
    } = &scene
    {
        if *count == 0 {
            return Err(Error::Config("scene.count must be at least 1".into()));
        }
        if *channels != 1 && *channels != 3 {
            return Err(Error::Config("scene.channels must be 1 or 3".into()));
        }
    }

    let train_frac = map.parse_as("scene.train_frac", d.train_frac)?;
    if !(0.0..1.0).contains(&train_frac) {
        return Err(Error::Config(format!(
            "scene.train_frac must lie in [0, 1), got {train_frac}"
        )));
    }

    let psf = if map.has("psf.path") {
        let path = base_dir.join(map.get("psf.path").unwrap());
        if !path.is_file() {
            return Err(Error::Config(format!(
                "psf.path: {} does not exist",
                path.display()
            )));
        }
        PsfSource::File { path }
    } else {
        let kind = match map.get("psf.kind").as_deref().unwrap_or("gaussian-speckle") {
            "gaussian-speckle" => BasePsfKind::GaussianSpeckle,
            "contour-rim" => BasePsfKind::ContourRim,
            "delta" => BasePsfKind::Delta,
            other => return Err(Error::Config(format!("psf.kind: unknown kind `{other}`"))),
        };
        PsfSource::Synthetic {
            kind,
            rows: map.parse_as("psf.rows", 17usize)?,
            cols: map.parse_as("psf.cols", 17usize)?,
        }
    };

    let field = FieldConfig {
        mode: match map.get("field.mode").as_deref().unwrap_or("none") {
            "none" => None,
            "shift" => Some(VariationMode::Shift),
            "rotate-warp" => Some(VariationMode::RotateWarp),
            "blur-gradient" => Some(VariationMode::BlurGradient),
            other => return Err(Error::Config(format!("field.mode: unknown mode `{other}`"))),
        },
        strength: map.parse_as("field.strength", 0.0f64)?,
        grid_bx: match map.get("field.bx") {
            None => None,
            Some(v) => Some(
                v.parse()
                    .map_err(|_| Error::Config(format!("field.bx: cannot parse `{v}`")))?,
            ),
        },
        grid_by: match map.get("field.by") {
            None => None,
            Some(v) => Some(
                v.parse()
                    .map_err(|_| Error::Config(format!("field.by: cannot parse `{v}`")))?,
            ),
        },
    };
    if field.strength < 0.0 {
        return Err(Error::Config("field.strength must be nonnegative".into()));
    }
    if field.grid_bx == Some(0) || field.grid_by == Some(0) {
        return Err(Error::Config("field grid counts must be at least 1".into()));
    }

    let layout = LayoutConfig {
        bx: map.parse_as("layout.bx", d.layout.bx)?,
        by: map.parse_as("layout.by", d.layout.by)?,
        overlap: map.parse_as("layout.overlap", d.layout.overlap)?,
    };
    if layout.bx == 0 || layout.by == 0 {
        return Err(Error::Config("layout.bx and layout.by must be >= 1".into()));
    }

    let truncation = if map.has("truncation.window") {
        let v = map.get("truncation.window").unwrap();
        let parts: Vec<&str> = v.split(',').map(|s| s.trim()).collect();
        if parts.len() != 2 {
            return Err(Error::Config(
                "truncation.window: expected `rows, cols`".into(),
            ));
        }
        TruncationConfig::Window {
            rows: parts[0]
                .parse()
                .map_err(|_| Error::Config("truncation.window: bad rows".into()))?,
            cols: parts[1]
                .parse()
                .map_err(|_| Error::Config("truncation.window: bad cols".into()))?,
        }
    } else {
        let fractions = parse_f64_list(&mut map, "truncation.fractions")?.unwrap_or(vec![1.0]);
        for f in &fractions {
            if *f <= 0.0 || *f > 1.0 {
                return Err(Error::Config(format!(
                    "truncation.fractions: {f} outside (0, 1]"
                )));
            }
        }
        TruncationConfig::Fractions(fractions)
    };

    let noise = NoiseSpec {
        kind: match map.get("noise.kind").as_deref().unwrap_or("none") {
            "none" => NoiseKind::None,
            "gaussian" => NoiseKind::Gaussian,
            other => return Err(Error::Config(format!("noise.kind: unknown kind `{other}`"))),
        },
        sigma: map.parse_as("noise.sigma", 0.0f64)?,
        seed: map.parse_as("noise.seed", seed ^ 0x6e6f_6973)?,
    };
    noise.validate()?;

    let fit = FitConfig {
        method: match map.get("fit.method").as_deref().unwrap_or("l2") {
            "wiener" => FitMethod::Wiener,
            "l2" => FitMethod::LeastSquares,
            "l1" => FitMethod::SmoothedL1,
            other => return Err(Error::Config(format!("fit.method: unknown `{other}`"))),
        },
        lambda: {
            let value = map.parse_as("fit.lambda", 1e-4f64)?;
            let spec = match map.get("fit.lambda_mode").as_deref().unwrap_or("relative") {
                "relative" => LambdaSpec::relative(value),
                "absolute" => LambdaSpec::absolute(value),
                other => {
                    return Err(Error::Config(format!(
                        "fit.lambda_mode: unknown mode `{other}`"
                    )))
                }
            };
            spec.validate()?;
            spec
        },
        l1: {
            let defaults = L1Options::default();
            let opts = L1Options {
                lr: map.parse_as("fit.l1.lr", defaults.lr)?,
                epochs: map.parse_as("fit.l1.epochs", defaults.epochs)?,
                huber_delta: map.parse_as("fit.l1.huber_delta", defaults.huber_delta)?,
                milestones: parse_usize_list(&mut map, "fit.l1.milestones", defaults.milestones)?,
                pure_l1: map.parse_as("fit.l1.pure_l1", defaults.pure_l1)?,
                tie_alpha: map.parse_as("fit.l1.tie_alpha", defaults.tie_alpha)?,
            };
            opts.validate()?;
            opts
        },
    };

    let enhance = EnhanceConfig {
        enabled: map.parse_as("enhance.enabled", false)?,
        fuse_weight: map.parse_as("enhance.fuse_weight", 0.5f64)?,
        enhancers: parse_enhancers(&mut map)?,
    };
    if !(0.0..=1.0).contains(&enhance.fuse_weight) {
        return Err(Error::Config("enhance.fuse_weight must lie in [0, 1]".into()));
    }
    if enhance.enabled && enhance.enhancers.len() != 4 {
        return Err(Error::Config(
            "enhance.kinds must list 4 enhancers (patches, vertical, horizontal, full)".into(),
        ));
    }
    for e in &enhance.enhancers {
        e.validate()?;
    }

    let out_dir = PathBuf::from(
        map.get("out.dir")
            .unwrap_or_else(|| d.out_dir.to_string_lossy().into_owned()),
    );

    map.finish()?;
    Ok(ExperimentConfig {
        seed,
        scene,
        train_frac,
        psf,
        field,
        layout,
        truncation,
        noise,
        fit,
        enhance,
        out_dir,
    })
}

/// Parses a configuration file; relative paths resolve against its directory.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

impl ExperimentConfig {
    /// Grid the simulated PSF field varies on (falls back to the
    /// reconstruction layout).
    pub fn field_grid(&self) -> (usize, usize) {
        (
            self.field.grid_bx.unwrap_or(self.layout.bx),
            self.field.grid_by.unwrap_or(self.layout.by),
        )
    }

    /// Canonical serialization; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        match &self.scene {
            SceneSource::Synthetic {
                kind,
                count,
                rows,
                cols,
                channels,
            } => {
                kv("scene.source", "synthetic".into());
                kv("scene.kind", kind.name().into());
                match kind {
                    SceneKind::Stripes { period } => {
                        kv("scene.stripes.period", period.to_string())
                    }
                    SceneKind::Checker { cell } => kv("scene.checker.cell", cell.to_string()),
                    _ => {}
                }
                kv("scene.count", count.to_string());
                kv("scene.rows", rows.to_string());
                kv("scene.cols", cols.to_string());
                kv("scene.channels", channels.to_string());
            }
            SceneSource::Pairs { dir } => {
                kv("scene.source", "pairs".into());
                kv("scene.pairs_dir", dir.to_string_lossy().into_owned());
            }
        }
        kv("scene.train_frac", self.train_frac.to_string());
        match &self.psf {
            PsfSource::Synthetic { kind, rows, cols } => {
                let name = match kind {
                    BasePsfKind::GaussianSpeckle => "gaussian-speckle",
                    BasePsfKind::ContourRim => "contour-rim",
                    BasePsfKind::Delta => "delta",
                };
                kv("psf.kind", name.into());
                kv("psf.rows", rows.to_string());
                kv("psf.cols", cols.to_string());
            }
            PsfSource::File { path } => kv("psf.path", path.to_string_lossy().into_owned()),
        }
        kv(
            "field.mode",
            self.field
                .mode
                .map(|m| m.name().to_string())
                .unwrap_or_else(|| "none".into()),
        );
        kv("field.strength", self.field.strength.to_string());
        if let Some(bx) = self.field.grid_bx {
            kv("field.bx", bx.to_string());
        }
        if let Some(by) = self.field.grid_by {
            kv("field.by", by.to_string());
        }
        kv("layout.bx", self.layout.bx.to_string());
        kv("layout.by", self.layout.by.to_string());
        kv("layout.overlap", self.layout.overlap.to_string());
        match &self.truncation {
            TruncationConfig::Fractions(f) => kv(
                "truncation.fractions",
                f.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
            ),
            TruncationConfig::Window { rows, cols } => {
                kv("truncation.window", format!("{rows}, {cols}"))
            }
        }
        kv(
            "noise.kind",
            match self.noise.kind {
                NoiseKind::None => "none".into(),
                NoiseKind::Gaussian => "gaussian".into(),
            },
        );
        kv("noise.sigma", self.noise.sigma.to_string());
        kv("noise.seed", self.noise.seed.to_string());
        kv("fit.method", self.fit.method.name().into());
        kv("fit.lambda", self.fit.lambda.value.to_string());
        kv(
            "fit.lambda_mode",
            if self.fit.lambda.relative {
                "relative".into()
            } else {
                "absolute".into()
            },
        );
        kv("fit.l1.lr", self.fit.l1.lr.to_string());
        kv("fit.l1.epochs", self.fit.l1.epochs.to_string());
        kv("fit.l1.huber_delta", self.fit.l1.huber_delta.to_string());
        kv(
            "fit.l1.milestones",
            self.fit
                .l1
                .milestones
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(", "),
        );
        kv("fit.l1.pure_l1", self.fit.l1.pure_l1.to_string());
        kv("fit.l1.tie_alpha", self.fit.l1.tie_alpha.to_string());
        kv("enhance.enabled", self.enhance.enabled.to_string());
        kv("enhance.fuse_weight", self.enhance.fuse_weight.to_string());
        kv(
            "enhance.kinds",
            self.enhance
                .enhancers
                .iter()
                .map(|e| match e {
                    Enhancer::Identity => "identity",
                    Enhancer::TvDenoise { .. } => "tv-denoise",
                    Enhancer::Unsharp { .. } => "unsharp",
                })
                .collect::<Vec<_>>()
                .join(","),
        );
        for e in &self.enhance.enhancers {
            match e {
                Enhancer::TvDenoise { weight, iters } => {
                    kv("enhance.tv.weight", weight.to_string());
                    kv("enhance.tv.iters", iters.to_string());
                    break;
                }
                _ => {}
            }
        }
        for e in &self.enhance.enhancers {
            match e {
                Enhancer::Unsharp { sigma, amount } => {
                    kv("enhance.unsharp.sigma", sigma.to_string());
                    kv("enhance.unsharp.amount", amount.to_string());
                    break;
                }
                _ => {}
            }
        }
        kv("out.dir", self.out_dir.to_string_lossy().into_owned());
        s
    }
}
