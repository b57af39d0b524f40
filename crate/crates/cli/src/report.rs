//! Static plots and a markdown summary rendered from a run directory's tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};

use crate::plot::{Plot, Series};

/// Result tables summarized in `report.md`, in display order.
const TABLES: [&str; 6] = [
    "train_eval.tsv",
    "eval.tsv",
    "baseline.tsv",
    "frontier.tsv",
    "tsweep.tsv",
    "woc_grid.tsv",
];

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .context("table has no header")?
            .split('\t')
            .map(String::from)
            .collect();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split('\t').map(String::from).collect()).collect();
        if let Some(bad) = rows.iter().position(|r| r.len() != header.len()) {
            bail!("row {} has {} fields, header has {}", bad + 1, rows[bad].len(), header.len());
        }
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> anyhow::Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column `{name}`"))
    }

    /// Numeric column values; `-` and other non-numbers become NaN.
    fn numbers(&self, name: &str) -> anyhow::Result<Vec<f64>> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[c].parse().unwrap_or(f64::NAN)).collect())
    }

    fn markdown(&self) -> String {
        let mut s = format!("| {} |\n", self.header.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(self.header.len()));
        for r in &self.rows {
            let _ = writeln!(s, "| {} |", r.join(" | "));
        }
        s
    }
}

/// Top-1 against cost, frontier points joined in cost order.
pub fn frontier_plot(tsv: &str) -> anyhow::Result<String> {
    let t = Table::parse(tsv)?;
    let (cost, top1, dominated) = (t.numbers("cost")?, t.numbers("top1")?, t.numbers("dominated")?);
    let mut all = Vec::new();
    let mut front = Vec::new();
    for i in 0..t.rows.len() {
        all.push((cost[i], top1[i]));
        if dominated[i] == 0.0 {
            front.push((cost[i], top1[i]));
        }
    }
    front.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Plot {
        title: "Accuracy vs cost".into(),
        x_label: "average cost (models run)".into(),
        y_label: "top-1 (%)".into(),
        series: vec![
            Series {
                name: "all points".into(),
                points: all,
                line: false,
            },
            Series {
                name: "frontier".into(),
                points: front,
                line: true,
            },
        ],
    }
    .to_svg())
}

/// Utility against cascade length, one line per method. Uses raw utility when
/// the reported value overflows.
pub fn tsweep_plot(tsv: &str) -> anyhow::Result<String> {
    let t = Table::parse(tsv)?;
    let (stages, reported, raw) = (t.numbers("stages")?, t.numbers("utility")?, t.numbers("raw_utility")?);
    let use_raw = reported.iter().any(|v| !v.is_finite()) && raw.iter().all(|v| v.is_finite());
    let method = t.column("method")?;
    let mut by_method: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, r) in t.rows.iter().enumerate() {
        let y = if use_raw { raw[i] } else { reported[i] };
        by_method.entry(r[method].as_str()).or_default().push((stages[i], y));
    }
    Ok(Plot {
        title: "Utility vs number of models".into(),
        x_label: "models (T)".into(),
        y_label: if use_raw { "raw utility" } else { "utility" }.into(),
        series: by_method
            .into_iter()
            .map(|(name, points)| Series {
                name: name.into(),
                points,
                line: true,
            })
            .collect(),
    }
    .to_svg())
}

/// Training loss per global epoch, one line per stage.
pub fn curve_plot(tsv: &str) -> anyhow::Result<String> {
    let t = Table::parse(tsv)?;
    let (stage, total) = (t.numbers("stage")?, t.numbers("total")?);
    let mut by_stage: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, (&s, &y)) in stage.iter().zip(&total).enumerate() {
        by_stage.entry(s as u64).or_default().push((i as f64 + 1.0, y));
    }
    Ok(Plot {
        title: "Training objective".into(),
        x_label: "epoch (all stages)".into(),
        y_label: "total loss".into(),
        series: by_stage
            .into_iter()
            .map(|(s, points)| Series {
                name: format!("stage {s}"),
                points,
                line: true,
            })
            .collect(),
    }
    .to_svg())
}

type Renderer = fn(&str) -> anyhow::Result<String>;

pub fn report(dir: &Path) -> anyhow::Result<()> {
    let read = |name: &str| -> anyhow::Result<Option<String>> {
        let path = dir.join(name);
        if !path.is_file() {
            return Ok(None);
        }
        std::fs::read_to_string(&path)
            .map(Some)
            .with_context(|| format!("reading {}", path.display()))
    };
    let write = |name: &str, body: String| -> anyhow::Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    };

    let mut md = format!("# Run report: {}\n", dir.display());
    let mut found = false;
    for name in TABLES {
        if let Some(text) = read(name)? {
            let table = Table::parse(&text).with_context(|| format!("parsing {name}"))?;
            let _ = write!(md, "\n## {name}\n\n{}", table.markdown());
            found = true;
        }
    }
    let plots: [(&str, &str, Renderer); 3] = [
        ("curve.tsv", "curve.svg", curve_plot),
        ("frontier.tsv", "frontier.svg", frontier_plot),
        ("tsweep.tsv", "utility_vs_t.svg", tsweep_plot),
    ];
    for (table, svg, render) in plots {
        if let Some(text) = read(table)? {
            write(svg, render(&text).with_context(|| format!("plotting {table}"))?)?;
            let _ = write!(md, "\n![{svg}]({svg})\n");
            found = true;
        }
    }
    if !found {
        bail!("no result tables found in {}", dir.display());
    }
    write("report.md", md)?;
    println!("wrote {}", dir.join("report.md").display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(Table::parse("a\tb\n1\t2\n").is_ok());
        assert!(Table::parse("a\tb\n1\n").is_err());
    }

    #[test]
    fn frontier_plot_draws_every_point() {
        let tsv = "label\ttop1\tcost\traw_utility\tutility\tdominated\nx\t80\t1\t-\t-\t0\ny\t79\t2\t-\t-\t1\n";
        let svg = frontier_plot(tsv).unwrap();
        // two scatter points plus one frontier point
        assert_eq!(svg.matches("<circle").count(), 3);
    }
}
