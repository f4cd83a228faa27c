//! Snapshots, CSV tables, configuration documents and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::MeanMode;
use crate::lattice::{Boundary, LatticeGrid, PolarField};
use crate::model::{LambdaKind, ModelParams};
use crate::norms::NormOrder;
use crate::steady::{Family, SteadyState};

pub const SNAPSHOT_VERSION: u32 = 1;
pub const SNAPSHOT_HEADER: &str = "i,j,r,theta";
pub const NORM_TABLE_HEADER: &str = "t,tau,p,lp,qp";

/// Shortest lossless-enough form: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Amplitude-phase field together with the metadata needed to rebuild it.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub family: Family,
    pub alpha: f64,
    pub field: PolarField,
}

impl Snapshot {
    pub fn of(state: &SteadyState) -> Self {
        Snapshot { family: state.family, alpha: state.alpha, field: state.field.clone() }
    }

    /// Re-evaluates the residual under `params`.
    pub fn into_steady(self, params: &ModelParams) -> Result<SteadyState> {
        SteadyState::from_field(self.field, params, self.family)
    }
}

pub fn write_snapshot<W: Write>(mut out: W, snap: &Snapshot) -> Result<()> {
    let grid = snap.field.grid;
    let mut text = String::with_capacity(64 * grid.len() + 128);
    let _ = writeln!(text, "# version={SNAPSHOT_VERSION}");
    let _ = writeln!(text, "# family={}", snap.family);
    let _ = writeln!(text, "# alpha={}", fmt_f64(snap.alpha));
    let _ = writeln!(text, "# K={}", grid.half_width());
    let _ = writeln!(text, "# boundary={}", grid.boundary());
    let _ = writeln!(text, "{SNAPSHOT_HEADER}");
    for (k, site) in grid.sites().enumerate() {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            site.i,
            site.j,
            fmt_f64(snap.field.r[k]),
            fmt_f64(snap.field.theta[k])
        );
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

pub fn save_snapshot(path: &Path, snap: &Snapshot) -> Result<()> {
    let mut buf = Vec::new();
    write_snapshot(&mut buf, snap)?;
    fs::write(path, buf)?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| parse_err(line, format!("bad {what} {s:?}: {e}")))
}

pub fn read_snapshot<R: BufRead>(input: R) -> Result<Snapshot> {
    let mut version = None;
    let mut family = None;
    let mut alpha = None;
    let mut half_width = None;
    let mut boundary = None;
    let mut lines = input.lines().enumerate().map(|(q, l)| (q + 1, l));
    let mut header_line = 0;

    for (no, line) in lines.by_ref() {
        let line = line?;
        let Some(meta) = line.strip_prefix('#') else {
            if line.trim() != SNAPSHOT_HEADER {
                return Err(parse_err(no, format!("expected column header {SNAPSHOT_HEADER:?}")));
            }
            header_line = no;
            break;
        };
        let (key, value) = meta
            .trim()
            .split_once('=')
            .ok_or_else(|| parse_err(no, "metadata lines look like '# key=value'"))?;
        match key.trim() {
            "version" => {
                let v: u32 = parse_field(value, no, "version")?;
                if v != SNAPSHOT_VERSION {
                    return Err(Error::Version { found: v.to_string(), expected: SNAPSHOT_VERSION });
                }
                version = Some(v);
            }
            "family" => family = Some(parse_field::<Family>(value, no, "family")?),
            "alpha" => alpha = Some(parse_field::<f64>(value, no, "alpha")?),
            "K" => half_width = Some(parse_field::<usize>(value, no, "K")?),
            "boundary" => boundary = Some(parse_field::<Boundary>(value, no, "boundary")?),
            other => return Err(parse_err(no, format!("unknown metadata key {other:?}"))),
        }
    }
    if header_line == 0 {
        return Err(parse_err(0, "missing column header"));
    }
    if version.is_none() {
        return Err(Error::Version { found: "missing".into(), expected: SNAPSHOT_VERSION });
    }
    let missing = |what: &str| parse_err(header_line, format!("missing '# {what}=' line"));
    let family = family.ok_or_else(|| missing("family"))?;
    let alpha = alpha.ok_or_else(|| missing("alpha"))?;
    let grid = LatticeGrid::new(
        half_width.ok_or_else(|| missing("K"))?,
        boundary.ok_or_else(|| missing("boundary"))?,
    )?;

    let n = grid.len();
    let mut r = vec![f64::NAN; n];
    let mut theta = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    let mut count = 0;
    let mut last = header_line;
    for (no, line) in lines {
        let line = line?;
        last = no;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(parse_err(no, format!("expected 4 columns, found {}", cols.len())));
        }
        let i: i64 = parse_field(cols[0], no, "i")?;
        let j: i64 = parse_field(cols[1], no, "j")?;
        let k = grid
            .index(crate::lattice::Site::new(i, j))
            .map_err(|_| parse_err(no, format!("cell ({i}, {j}) lies outside K = {}", grid.half_width())))?;
        if seen[k] {
            return Err(parse_err(no, format!("cell ({i}, {j}) appears twice")));
        }
        seen[k] = true;
        r[k] = parse_field(cols[2], no, "r")?;
        theta[k] = parse_field(cols[3], no, "theta")?;
        count += 1;
    }
    if count != n {
        return Err(parse_err(last + 1, format!("expected {n} cells, found {count}")));
    }
    let field = PolarField::new(grid, r, theta)?;
    Ok(Snapshot { family, alpha, field })
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    let file = fs::File::open(path)?;
    read_snapshot(BufReader::new(file))
}

/// Row of a norm table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRow {
    pub t: f64,
    pub tau: f64,
    pub p: NormOrder,
    pub lp: f64,
    pub qp: f64,
}

/// Renders a CSV document from a header and preformatted rows.
pub fn csv_text<I, R>(header: &str, rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut text = String::new();
    text.push_str(header);
    text.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    text
}

pub fn norm_table_text(rows: &[NormRow]) -> String {
    csv_text(
        NORM_TABLE_HEADER,
        rows.iter().map(|r| [fmt_f64(r.t), fmt_f64(r.tau), r.p.to_string(), fmt_f64(r.lp), fmt_f64(r.qp)]),
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// One number or a list, so `"alpha": 0.1` and `"alpha": [0.1, 0.5]` both parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Parameters shared by every subcommand. Absent keys take command defaults;
/// the resolved document is what lands in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<OneOrMany<f64>>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub half_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<OneOrMany<NormOrder>>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n_list: Option<OneOrMany<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<MeanMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<f64>,
}

impl ExperimentConfig {
    /// Keys set in `other` win.
    pub fn overridden_by(self, other: ExperimentConfig) -> ExperimentConfig {
        macro_rules! pick {
            ($($f:ident),*) => {
                ExperimentConfig { $($f: other.$f.or(self.$f)),* }
            };
        }
        pick!(
            family, alpha, half_width, boundary, lambda, omega0, delta, eps, t_max, tau_max, p, n_list, operator,
            d1, d2, init, window, samples, mean, mode, noise, snapshot, out, seed, tol, alpha_max
        )
    }
}

/// Record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, config: ExperimentConfig) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
        }
    }
}

/// Reads either a bare config or a manifest (whose config is extracted).
/// Returns the manifest's command when there is one.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Option<String>)> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("config").is_some() && value.get("command").is_some() {
        let manifest: Manifest = serde_json::from_value(value)?;
        Ok((manifest.config, Some(manifest.command)))
    } else {
        Ok((serde_json::from_value(value)?, None))
    }
}

/// Sibling path with a new suffix: `out/run.csv` → `out/run.manifest.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Boundary;

    fn sample_field() -> PolarField {
        let g = LatticeGrid::new(3, Boundary::Neumann).unwrap();
        let r = (0..g.len()).map(|k| 1.0 + (k as f64).sqrt() * 1e-3 + 1e-17 * k as f64).collect();
        let th = (0..g.len()).map(|k| (k as f64 * 0.7).sin() * std::f64::consts::PI / 3.0).collect();
        PolarField::new(g, r, th).unwrap()
    }

    #[test]
    fn snapshot_round_trip_is_bitwise() {
        let snap = Snapshot { family: Family::DoublyPeriodic { n: 6, m: 7 }, alpha: 0.1, field: sample_field() };
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &snap).unwrap();
        let back = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back.family, snap.family);
        assert_eq!(back.alpha.to_bits(), snap.alpha.to_bits());
        for k in 0..snap.field.r.len() {
            assert_eq!(back.field.r[k].to_bits(), snap.field.r[k].to_bits());
            assert_eq!(back.field.theta[k].to_bits(), snap.field.theta[k].to_bits());
        }
    }

    #[test]
    fn truncated_snapshot_reports_line() {
        let snap = Snapshot { family: Family::Trivial, alpha: 0.0, field: sample_field() };
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &snap).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        match read_snapshot(cut.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 21),
            other => panic!("{other:?}"),
        }
        let garbled = text.replacen("1.0", "1.x", 1);
        match read_snapshot(garbled.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert!(line > 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = "# version=2\n# family=trivial\n";
        assert!(matches!(read_snapshot(text.as_bytes()), Err(Error::Version { .. })));
        let text = "# family=trivial\n# alpha=0\n# K=1\n# boundary=neumann\ni,j,r,theta\n";
        assert!(matches!(read_snapshot(text.as_bytes()), Err(Error::Version { .. })));
    }

    #[test]
    fn norm_table_uses_inf() {
        let rows = [NormRow { t: 1.0, tau: 0.1, p: NormOrder::Infinity, lp: 0.5, qp: 0.25 }];
        let text = norm_table_text(&rows);
        assert!(text.starts_with("t,tau,p,lp,qp\n"));
        assert!(text.contains(",inf,"));
    }

    #[test]
    fn config_rejects_unknown_keys_and_accepts_scalars() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"alpha": 0.1, "K": 8, "p": [1, "inf"]}"#).unwrap();
        assert_eq!(cfg.alpha.unwrap().to_vec(), vec![0.1]);
        assert_eq!(cfg.p.unwrap().to_vec(), vec![NormOrder::Finite(1.0), NormOrder::Infinity]);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"alpah": 0.1}"#).is_err());
    }

    #[test]
    fn overrides_prefer_the_second_config() {
        let a = ExperimentConfig { eps: Some(0.1), delta: Some(0.2), ..Default::default() };
        let b = ExperimentConfig { eps: Some(0.3), ..Default::default() };
        let c = a.overridden_by(b);
        assert_eq!((c.eps, c.delta), (Some(0.3), Some(0.2)));
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("out/run.csv"), "manifest.json"), PathBuf::from("out/run.manifest.json"));
    }
}
