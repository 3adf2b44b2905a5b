//! Whitespace-delimited column files for external plotting tools.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context};

use crate::run::{num, Bundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// `x u(x, t)` pairs at `t = 0, T/2, T`; 2D runs use the middle row.
    Profile,
    /// `step residual` pairs, one per continuation stage.
    ResidualHistory,
    /// The sweep table with spaces for commas.
    Sweep,
}

impl FromStr for PlotKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Ok(match s {
            "profile" => PlotKind::Profile,
            "residual-history" => PlotKind::ResidualHistory,
            "sweep" => PlotKind::Sweep,
            other => bail!("unknown plot kind `{other}` (expected profile, residual-history or sweep)"),
        })
    }
}

/// Columns padded with `nan` to the longest curve.
fn columns(header: Vec<String>, curves: Vec<(Vec<f64>, Vec<f64>)>) -> String {
    let mut out = format!("# {}\n", header.join(" "));
    let rows = curves.iter().map(|c| c.0.len()).max().unwrap_or(0);
    for r in 0..rows {
        let line: Vec<String> = curves
            .iter()
            .flat_map(|(x, y)| match (x.get(r), y.get(r)) {
                (Some(a), Some(b)) => [num(*a), num(*b)],
                _ => [String::from("nan"), String::from("nan")],
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn profile(bundle: &Bundle) -> String {
    let nx = bundle.nodes[0];
    let hx = bundle.extent[0] / (nx - 1) as f64;
    let row = if bundle.nodes.len() == 2 { bundle.nodes[1] / 2 } else { 0 };
    let x: Vec<f64> = (0..nx).map(|i| i as f64 * hx).collect();
    let mut header = Vec::new();
    let mut curves = Vec::new();
    for p in &bundle.profiles {
        header.push(format!("x u(t={})", num(p.t)));
        curves.push((x.clone(), p.values[row * nx..(row + 1) * nx].to_vec()));
    }
    columns(header, curves)
}

pub fn residual_history(bundle: &Bundle) -> String {
    let mut header = Vec::new();
    let mut curves = Vec::new();
    for s in &bundle.stages {
        header.push(format!("step residual(eps={},delta={})", num(s.eps), num(s.delta)));
        let x = (1..=s.step_residuals.len()).map(|k| k as f64).collect();
        curves.push((x, s.step_residuals.clone()));
    }
    columns(header, curves)
}

pub fn sweep(csv: &str) -> String {
    let mut out = String::new();
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            out.push_str("# ");
        }
        let _ = writeln!(out, "{}", line.replace(',', " "));
    }
    out
}

/// Reads `input` (a run directory or `bundle.json` for the first two kinds,
/// a sweep directory or `sweep.csv` for the last) and returns the file text.
pub fn emit_plot_data(input: &Path, kind: PlotKind) -> anyhow::Result<String> {
    let resolve = |file: &str| {
        if input.is_dir() {
            input.join(file)
        } else {
            input.to_path_buf()
        }
    };
    match kind {
        PlotKind::Sweep => {
            let path = resolve("sweep.csv");
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(sweep(&text))
        }
        PlotKind::Profile | PlotKind::ResidualHistory => {
            let path = resolve("bundle.json");
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let bundle: Bundle =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if bundle.profiles.is_empty() || bundle.nodes.is_empty() {
                bail!("{} is incomplete", path.display());
            }
            Ok(if kind == PlotKind::Profile {
                profile(&bundle)
            } else {
                residual_history(&bundle)
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::{Profile, StageHistory};

    fn sample() -> Bundle {
        Bundle {
            name: "b".into(),
            extent: vec![1.0],
            nodes: vec![3],
            profiles: vec![
                Profile {
                    t: 0.0,
                    values: vec![0.0; 3],
                },
                Profile {
                    t: 0.5,
                    values: vec![0.0, 0.2, 0.0],
                },
                Profile {
                    t: 1.0,
                    values: vec![0.0, 0.4, 0.0],
                },
            ],
            stages: vec![
                StageHistory {
                    eps: 0.4,
                    delta: 1e-4,
                    step_residuals: vec![1e-12, 2e-12],
                    outer_residuals: vec![0.0],
                },
                StageHistory {
                    eps: 0.2,
                    delta: 1e-4,
                    step_residuals: vec![3e-12],
                    outer_residuals: vec![0.0],
                },
            ],
        }
    }

    fn data_columns(text: &str) -> Vec<usize> {
        text.lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split_whitespace().count())
            .collect()
    }

    #[test]
    fn profile_has_three_pairs() {
        let text = profile(&sample());
        assert_eq!(data_columns(&text), vec![6, 6, 6]);
        assert!(text.lines().nth(2).unwrap().contains(" 5.0000000000000000e-1 2.0000000000000001e-1 "));
    }

    #[test]
    fn residual_history_has_one_pair_per_stage() {
        let text = residual_history(&sample());
        assert_eq!(data_columns(&text), vec![4, 4]);
        assert!(text.lines().nth(2).unwrap().ends_with("nan nan"));
    }

    #[test]
    fn sweep_passes_columns_through() {
        let csv = "value,status,violation\n1.0e0,ok,2.5e-1\n";
        assert_eq!(sweep(csv), "# value status violation\n1.0e0 ok 2.5e-1\n");
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!("histogram".parse::<PlotKind>().is_err());
        assert_eq!("residual-history".parse::<PlotKind>().unwrap(), PlotKind::ResidualHistory);
    }
}
