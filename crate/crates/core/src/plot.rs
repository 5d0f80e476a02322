//! Vector-graphic plots rendered straight to SVG text.
//!
//! Two figures: per-run reward curves with the short/long moving averages
//! and dotted lines at map changes, and a grouped bar chart of the A metric
//! per strategy and scenario with the multienv upper bound as a dashed
//! line. Rendering uses fixed layout parameters and sorted iteration only,
//! so re-running on the same inputs produces byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config;
use crate::error::{Error, Result};
use crate::eval::SummaryRow;
use crate::runner;
use crate::scenario::ScenarioKind;
use crate::strategies::{LogRow, StrategyKind};

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        let span = (self.x1 - self.x0).max(1e-12);
        MARGIN_LEFT + (t - self.x0) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y1 - self.y0).max(1e-12);
        HEIGHT - MARGIN_BOTTOM - (v - self.y0) / span * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn polyline(out: &mut String, points: &[(f64, f64)], class: &str, style: &str) {
    if points.is_empty() {
        return;
    }
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{},{}", fmt(*x), fmt(*y)))
        .collect();
    writeln!(
        out,
        "<polyline class=\"{class}\" fill=\"none\" {style} points=\"{}\"/>",
        coords.join(" ")
    )
    .unwrap();
}

/// Training reward with both moving averages; dotted vertical lines mark
/// the map changes of an `episodes_per_map` schedule.
pub fn render_reward_curve(rows: &[LogRow], episodes_per_map: Option<usize>) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Contract("no log rows to plot".into()));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.episode as f64).collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in rows {
        for v in [r.reward, r.reward_short, r.reward_long] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo == hi {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let frame = Frame {
        x0: xs[0],
        x1: xs[xs.len() - 1].max(xs[0] + 1.0),
        y0: lo - pad,
        y1: hi + pad,
    };

    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )
    .unwrap();
    writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").unwrap();
    // axes
    writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        fmt(MARGIN_LEFT),
        fmt(HEIGHT - MARGIN_BOTTOM),
        fmt(WIDTH - MARGIN_RIGHT),
        fmt(HEIGHT - MARGIN_BOTTOM)
    )
    .unwrap();
    writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        fmt(MARGIN_LEFT),
        fmt(MARGIN_TOP),
        fmt(MARGIN_LEFT),
        fmt(HEIGHT - MARGIN_BOTTOM)
    )
    .unwrap();
    for (v, anchor) in [(frame.y0 + pad, "min"), (frame.y1 - pad, "max")] {
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\" class=\"tick-{anchor}\">{}</text>",
            fmt(MARGIN_LEFT - 6.0),
            fmt(frame.y(v) + 4.0),
            fmt(v)
        )
        .unwrap();
    }
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">episode</text>",
        fmt((MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0),
        fmt(HEIGHT - 12.0)
    )
    .unwrap();

    // map-change markers, one at each internal boundary of the schedule
    if let Some(epm) = episodes_per_map {
        let last = rows[rows.len() - 1].episode;
        for k in 1..3 {
            let boundary = (k * epm) as f64;
            if boundary <= last as f64 {
                writeln!(
                    out,
                    "<line class=\"map-change\" x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\" stroke-dasharray=\"4 4\"/>",
                    fmt(MARGIN_TOP),
                    fmt(HEIGHT - MARGIN_BOTTOM),
                    x = fmt(frame.x(boundary))
                )
                .unwrap();
            }
        }
    }

    let series = |f: fn(&LogRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter()
            .map(|r| (frame.x(r.episode as f64), frame.y(f(r))))
            .collect()
    };
    polyline(
        &mut out,
        &series(|r| r.reward),
        "reward",
        "stroke=\"#bbbbbb\" stroke-width=\"1\"",
    );
    polyline(
        &mut out,
        &series(|r| r.reward_short),
        "short-avg",
        "stroke=\"#d62728\" stroke-width=\"1.5\"",
    );
    polyline(
        &mut out,
        &series(|r| r.reward_long),
        "long-avg",
        "stroke=\"#1f77b4\" stroke-width=\"1.5\"",
    );
    writeln!(
        out,
        "<text x=\"{}\" y=\"18\" font-size=\"12\"><tspan fill=\"#d62728\">short avg</tspan>  <tspan fill=\"#1f77b4\">long avg</tspan>  <tspan fill=\"#bbbbbb\">episode reward</tspan></text>",
        fmt(MARGIN_LEFT)
    )
    .unwrap();
    writeln!(out, "</svg>").unwrap();
    Ok(out)
}

const BAR_PALETTE: [(&str, &str); 4] = [
    ("naive", "#1f77b4"),
    ("sup", "#2ca02c"),
    ("static", "#ff7f0e"),
    ("unsup", "#d62728"),
];

/// Grouped A-metric bars: one group per scenario plus an `average` group,
/// one bar per CRL strategy, with the multienv upper bound dashed per group.
pub fn render_a_metric_chart(rows: &[SummaryRow]) -> Result<String> {
    let mut scenarios: Vec<ScenarioKind> = rows.iter().map(|r| r.scenario).collect();
    scenarios.sort();
    scenarios.dedup();
    let mut strategies: Vec<StrategyKind> = rows
        .iter()
        .filter(|r| r.strategy != StrategyKind::Multienv)
        .map(|r| r.strategy)
        .collect();
    strategies.sort();
    strategies.dedup();
    if scenarios.is_empty() || strategies.is_empty() {
        return Err(Error::Contract(
            "summary has no CRL strategy rows to plot".into(),
        ));
    }

    let a_of = |scenario: ScenarioKind, strategy: StrategyKind| -> Option<f64> {
        rows.iter()
            .find(|r| r.scenario == scenario && r.strategy == strategy)
            .and_then(|r| r.a_mean)
    };
    let bound_of = |scenario: ScenarioKind| -> Option<f64> {
        rows.iter()
            .find(|r| r.scenario == scenario)
            .and_then(|r| r.multienv_mean)
    };

    // groups: each scenario, then the cross-scenario average
    struct Group {
        label: String,
        values: Vec<(StrategyKind, Option<f64>)>,
        bound: Option<f64>,
    }
    let mut groups: Vec<Group> = scenarios
        .iter()
        .map(|&s| Group {
            label: s.name().to_string(),
            values: strategies.iter().map(|&t| (t, a_of(s, t))).collect(),
            bound: bound_of(s),
        })
        .collect();
    let avg_values: Vec<(StrategyKind, Option<f64>)> = strategies
        .iter()
        .map(|&t| {
            let vals: Vec<f64> = scenarios.iter().filter_map(|&s| a_of(s, t)).collect();
            let avg = if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            };
            (t, avg)
        })
        .collect();
    let bounds: Vec<f64> = scenarios.iter().filter_map(|&s| bound_of(s)).collect();
    groups.push(Group {
        label: "average".to_string(),
        values: avg_values,
        bound: if bounds.is_empty() {
            None
        } else {
            Some(bounds.iter().sum::<f64>() / bounds.len() as f64)
        },
    });

    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for g in &groups {
        for (_, v) in &g.values {
            if let Some(v) = v {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        if let Some(b) = g.bound {
            lo = lo.min(b);
            hi = hi.max(b);
        }
    }
    if lo == hi {
        hi = lo + 1.0;
    }
    let pad = (hi - lo) * 0.08;
    let frame = Frame {
        x0: 0.0,
        x1: groups.len() as f64,
        y0: lo - pad,
        y1: hi + pad,
    };

    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )
    .unwrap();
    writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").unwrap();
    let zero_y = frame.y(0.0);
    writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        fmt(MARGIN_LEFT),
        fmt(zero_y),
        fmt(WIDTH - MARGIN_RIGHT),
        fmt(zero_y)
    )
    .unwrap();

    let group_width = 0.8;
    let bar_width = group_width / strategies.len() as f64;
    for (gi, group) in groups.iter().enumerate() {
        writeln!(
            out,
            "<g class=\"group\" data-label=\"{}\">",
            group.label
        )
        .unwrap();
        for (bi, (strategy, value)) in group.values.iter().enumerate() {
            let Some(value) = value else { continue };
            let x_left = gi as f64 + 0.1 + bi as f64 * bar_width;
            let x0 = frame.x(x_left);
            let x1 = frame.x(x_left + bar_width * 0.9);
            let y_val = frame.y(*value);
            let (top, height) = if *value >= 0.0 {
                (y_val, zero_y - y_val)
            } else {
                (zero_y, y_val - zero_y)
            };
            let color = BAR_PALETTE
                .iter()
                .find(|(name, _)| *name == strategy.name())
                .map(|(_, c)| *c)
                .unwrap_or("#888888");
            writeln!(
                out,
                "<rect class=\"bar\" data-scenario=\"{}\" data-strategy=\"{}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\"/>",
                group.label,
                strategy.name(),
                fmt(x0),
                fmt(top),
                fmt(x1 - x0),
                fmt(height.max(0.5))
            )
            .unwrap();
        }
        if let Some(bound) = group.bound {
            let x0 = frame.x(gi as f64 + 0.05);
            let x1 = frame.x(gi as f64 + 0.95);
            let y = frame.y(bound);
            writeln!(
                out,
                "<line class=\"upper-bound\" x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"black\" stroke-dasharray=\"6 3\"/>",
                fmt(x0),
                fmt(x1),
                y = fmt(y)
            )
            .unwrap();
        }
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            fmt(frame.x(gi as f64 + 0.5)),
            fmt(HEIGHT - 18.0),
            group.label
        )
        .unwrap();
        writeln!(out, "</g>").unwrap();
    }
    // legend
    let mut lx = MARGIN_LEFT;
    for strategy in &strategies {
        let color = BAR_PALETTE
            .iter()
            .find(|(name, _)| *name == strategy.name())
            .map(|(_, c)| *c)
            .unwrap_or("#888888");
        writeln!(
            out,
            "<rect x=\"{}\" y=\"8\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{}\" y=\"17\" font-size=\"12\">{}</text>",
            fmt(lx),
            fmt(lx + 14.0),
            strategy.name()
        )
        .unwrap();
        lx += 90.0;
    }
    writeln!(
        out,
        "<text x=\"{}\" y=\"17\" font-size=\"12\">(dashed: multienv bound)</text>",
        fmt(lx)
    )
    .unwrap();
    writeln!(out, "</svg>").unwrap();
    Ok(out)
}

/// Render every completed run's reward curve plus the top-level A-metric
/// chart. Returns the files written. Re-running produces identical bytes.
pub fn emit_plots(results_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for run_dir in runner::completed_run_dirs(results_dir)? {
        let rows = runner::read_log_csv(&run_dir.join("log.csv"))?;
        let cell = config::parse_cell_config(&std::fs::read_to_string(run_dir.join("cell.cfg"))?)?;
        let epm = if cell.strategy.is_sequential() {
            Some(cell.hyper.train_episodes)
        } else {
            None
        };
        let svg = render_reward_curve(&rows, epm)?;
        let path = run_dir.join("reward_curve.svg");
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    let summary_path = results_dir.join("summary.csv");
    if summary_path.exists() {
        let rows = runner::read_summary_csv(&summary_path)?;
        if rows.iter().any(|r| r.strategy != StrategyKind::Multienv) {
            let svg = render_a_metric_chart(&rows)?;
            let path = results_dir.join("a_metric.svg");
            std::fs::write(&path, svg)?;
            written.push(path);
        }
    }
    if written.is_empty() {
        return Err(Error::Config(format!(
            "no completed runs or summary.csv under {}",
            results_dir.display()
        )));
    }
    Ok(written)
}
