//! One-factor ablation sweeps.
//!
//! A matrix file names a base config and, per axis, the values to try.
//! Every value becomes one variant that differs from the base in that
//! field only. Each variant is trained and evaluated once per seed; a
//! variant whose config does not validate is reported and skipped while
//! the rest proceed.
//!
//! ```toml
//! base_config = "base.toml"   # relative to the matrix file; defaults when absent
//! seeds = [0, 1, 2]
//! horizons_ms = [80, 160, 320, 400]
//! include_base = true
//!
//! [sweep]
//! scales = [[1], [1, 2], [1, 2, 3]]
//! beta_max = [0, 1, 2]
//! lambda = [0.0, 0.6]
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use dmgnn_core::eval::{bench::median, AVERAGE, DEFAULT_HORIZONS_MS, MODEL_ROW};
use dmgnn_core::{Dataset, Error, ModelConfig, Result};

use crate::{evaluate_on, exit_code, load_checked, resolve_config, train_on, EXIT_OK, MAE_CSV_FILE};

pub const SUMMARY_FILE: &str = "ablation.csv";

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub scales: Vec<Vec<u8>>,
    pub n_mgcu: Vec<usize>,
    pub csfb_positions: Vec<Vec<usize>>,
    pub lambda: Vec<f64>,
    pub beta_max: Vec<usize>,
    pub freeze_adjacency: Vec<bool>,
    pub plain_gru: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationMatrix {
    pub base_config: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub horizons_ms: Vec<f64>,
    /// Also run the unmodified base config.
    pub include_base: bool,
    pub sweep: Sweep,
}

impl Default for AblationMatrix {
    fn default() -> Self {
        AblationMatrix {
            base_config: None,
            seeds: vec![0],
            horizons_ms: DEFAULT_HORIZONS_MS.to_vec(),
            include_base: true,
            sweep: Sweep::default(),
        }
    }
}

impl AblationMatrix {
    pub fn from_toml(text: &str) -> Result<AblationMatrix> {
        toml::from_str(text).map_err(|e| Error::config("matrix", e.to_string()))
    }

    /// Reads a matrix file and resolves `base_config` against its directory.
    pub fn load(path: &Path) -> Result<AblationMatrix> {
        if !path.is_file() {
            return Err(Error::config("matrix", format!("{} does not exist", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = AblationMatrix::from_toml(&text)?;
        if let (Some(base), Some(dir)) = (&m.base_config, path.parent()) {
            m.base_config = Some(dir.join(base));
        }
        Ok(m)
    }

    pub fn variants(&self) -> Vec<Variant> {
        let s = &self.sweep;
        let mut out = Vec::new();
        if self.include_base {
            out.push(Variant::Base);
        }
        out.extend(s.scales.iter().cloned().map(Variant::Scales));
        out.extend(s.n_mgcu.iter().copied().map(Variant::NMgcu));
        out.extend(s.csfb_positions.iter().cloned().map(Variant::CsfbPositions));
        out.extend(s.lambda.iter().copied().map(Variant::Lambda));
        out.extend(s.beta_max.iter().copied().map(Variant::BetaMax));
        out.extend(s.freeze_adjacency.iter().copied().map(Variant::FreezeAdjacency));
        out.extend(s.plain_gru.iter().copied().map(Variant::PlainGru));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Variant {
    Base,
    Scales(Vec<u8>),
    NMgcu(usize),
    CsfbPositions(Vec<usize>),
    Lambda(f64),
    BetaMax(usize),
    FreezeAdjacency(bool),
    PlainGru(bool),
}

fn join<T: ToString>(values: &[T]) -> String {
    if values.is_empty() {
        return "none".into();
    }
    values.iter().map(T::to_string).collect::<Vec<_>>().join("+")
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Base => "base".into(),
            Variant::Scales(v) => format!("scales={}", join(v)),
            Variant::NMgcu(n) => format!("n_mgcu={n}"),
            Variant::CsfbPositions(v) => format!("csfb_positions={}", join(v)),
            Variant::Lambda(l) => format!("lambda={l}"),
            Variant::BetaMax(b) => format!("beta_max={b}"),
            Variant::FreezeAdjacency(f) => format!("freeze_adjacency={f}"),
            Variant::PlainGru(p) => format!("plain_gru={p}"),
        }
    }

    /// Applies the change to an unresolved copy of the base config.
    ///
    /// Changing the MGCU count keeps the last channel width, so the
    /// decoder width is unaffected: fewer units drop middle stages, more
    /// units repeat the last width with stride 1.
    pub fn apply(&self, cfg: &mut ModelConfig) {
        let e = &mut cfg.encoder;
        match self {
            Variant::Base => {}
            Variant::Scales(v) => e.scales = v.clone(),
            Variant::NMgcu(n) => {
                let n = *n;
                let last = e.channels.last().copied().unwrap_or(0);
                if n < e.channels.len() {
                    e.channels.truncate(n.saturating_sub(1));
                    if n > 0 {
                        e.channels.push(last);
                    }
                    e.strides.truncate(n);
                } else {
                    e.channels.resize(n, last);
                    e.strides.resize(n, 1);
                }
                e.n_mgcu = n;
            }
            Variant::CsfbPositions(v) => e.csfb_positions = v.clone(),
            Variant::Lambda(l) => e.lambda = *l,
            Variant::BetaMax(b) => e.beta_max = *b,
            Variant::FreezeAdjacency(f) => e.freeze_adjacency = *f,
            Variant::PlainGru(p) => cfg.decoder.plain_gru = *p,
        }
    }

    /// Directory-safe form of the name.
    pub fn dir_name(&self) -> String {
        self.name().replace(['=', '+'], "_")
    }
}

/// One variant at one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    /// Average model MAE per horizon; empty when the run failed.
    pub mae: Vec<f64>,
    /// `None` on success, otherwise the error text.
    pub error: Option<String>,
    pub exit_code: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub horizons_ms: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Per-horizon median over the successful seeds of a variant.
    pub fn median(&self, variant: &str) -> Option<Vec<f64>> {
        let ok: Vec<&AblationRow> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant && r.error.is_none())
            .collect();
        if ok.is_empty() {
            return None;
        }
        Some(
            (0..self.horizons_ms.len())
                .map(|h| median(&ok.iter().map(|r| r.mae[h]).collect::<Vec<_>>()))
                .collect(),
        )
    }

    /// Exit code of the first failed run, or success.
    pub fn exit_code(&self) -> i32 {
        self.rows.iter().map(|r| r.exit_code).find(|&c| c != EXIT_OK).unwrap_or(EXIT_OK)
    }

    /// One line per run and one `median` line per variant.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,status");
        for h in &self.horizons_ms {
            let _ = write!(s, ",mae_{h}ms");
        }
        s.push('\n');
        let mut variants: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !variants.contains(&r.variant.as_str()) {
                variants.push(&r.variant);
            }
            let status = r.error.as_deref().map_or("ok".to_string(), |e| e.replace([',', '\n'], ";"));
            let _ = write!(s, "{},{},{status}", r.variant, r.seed);
            for v in &r.mae {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        for v in variants {
            if let Some(m) = self.median(v) {
                let _ = write!(s, "{v},median,ok");
                for x in m {
                    let _ = write!(s, ",{x}");
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Runs every variant of `matrix` on `data`, writing per-run outputs below
/// `out` and a summary CSV into it.
pub fn run_matrix(matrix: &AblationMatrix, data: &Dataset, out: &Path, steps: Option<usize>) -> Result<AblationReport> {
    if matrix.seeds.is_empty() {
        return Err(Error::config("matrix.seeds", "no seeds given"));
    }
    if let Some(p) = matrix.base_config.as_deref().filter(|p| !p.is_file()) {
        return Err(Error::config("matrix.base_config", format!("{} does not exist", p.display())));
    }
    let base = match &matrix.base_config {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut report = AblationReport {
        horizons_ms: matrix.horizons_ms.clone(),
        rows: Vec::new(),
    };
    for variant in matrix.variants() {
        for &seed in &matrix.seeds {
            let mut cfg = base.clone();
            variant.apply(&mut cfg);
            cfg.seed = seed;
            if let Some(steps) = steps {
                cfg.train.steps = steps;
            }
            let dir = out.join(variant.dir_name()).join(format!("seed_{seed}"));
            let result = cfg.resolve().and_then(|cfg| {
                let run = train_on(&cfg, data, &dir)?;
                let table = evaluate_on(&run.model, data, &matrix.horizons_ms)?;
                let path = dir.join(MAE_CSV_FILE);
                std::fs::write(&path, table.to_csv()).map_err(|e| Error::io(&path, e))?;
                table
                    .get(MODEL_ROW, AVERAGE)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::Contract("evaluation produced no average row".into()))
            });
            let row = match result {
                Ok(mae) => AblationRow {
                    variant: variant.name(),
                    seed,
                    mae,
                    error: None,
                    exit_code: EXIT_OK,
                },
                Err(e) => {
                    log::warn!("{} seed {seed}: {e}", variant.name());
                    AblationRow {
                        variant: variant.name(),
                        seed,
                        mae: Vec::new(),
                        error: Some(e.to_string()),
                        exit_code: exit_code(&e),
                    }
                }
            };
            report.rows.push(row);
        }
    }
    let path = out.join(SUMMARY_FILE);
    std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[derive(Clone, Debug, Default)]
pub struct AblateArgs {
    pub matrix: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub steps: Option<usize>,
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<AblationReport> {
    let matrix = AblationMatrix::load(&args.matrix)?;
    // The joint count check needs a resolved skeleton; resolve the base once.
    let base = resolve_config(matrix.base_config.as_deref(), None, None)?;
    let data = load_checked(&args.manifest, &base)?;
    run_matrix(&matrix, &data, &args.out, args.steps)
}
