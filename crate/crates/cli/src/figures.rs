//! SVG figures drawn from result rows.
//!
//! Every point is the mean over the seeds of one cell. A point whose cell
//! starved a loop in any seed is drawn as a hollow triangle, and it is
//! clipped to the top edge when it lies far above the rest of its figure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ncsched::estimation::ErrorGrowth;
use ncsched::{LoopClass, ResultRow, SchedulerKind, SubSystemParams};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FigureError {
    #[error("no result rows to plot")]
    Empty,
    #[error("result grid is incomplete, missing {}", .0.join("; "))]
    MissingCells(Vec<String>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("class {0} cannot be turned into plant parameters: {1}")]
    Class(usize, String),
}

// ============================================================================
// Grouping
// ============================================================================

type CellKey = (SchedulerKind, usize, usize, usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMean {
    pub avg_aoi: f64,
    pub iae: f64,
    pub seeds: usize,
    pub starved: bool,
}

/// Means over seeds, keyed by `(scheduler, n, r_ul, r_dl)`.
pub fn cell_means(rows: &[ResultRow]) -> BTreeMap<CellKey, CellMean> {
    let mut acc: BTreeMap<CellKey, CellMean> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.scheduler, r.n, r.r_ul, r.r_dl)).or_insert(CellMean {
            avg_aoi: 0.0,
            iae: 0.0,
            seeds: 0,
            starved: false,
        });
        e.avg_aoi += r.avg_aoi;
        e.iae += r.iae;
        e.seeds += 1;
        e.starved |= r.starved_loops > 0;
    }
    for e in acc.values_mut() {
        e.avg_aoi /= e.seeds as f64;
        e.iae /= e.seeds as f64;
    }
    acc
}

/// Checks that the rows form a full product of the schedulers, loop counts,
/// resource pairs and seeds that appear in them.
pub fn check_complete(rows: &[ResultRow]) -> Result<(), FigureError> {
    if rows.is_empty() {
        return Err(FigureError::Empty);
    }
    let schedulers: BTreeSet<_> = rows.iter().map(|r| r.scheduler).collect();
    let ns: BTreeSet<_> = rows.iter().map(|r| r.n).collect();
    let pairs: BTreeSet<_> = rows.iter().map(|r| (r.r_ul, r.r_dl)).collect();
    let seeds: BTreeSet<_> = rows.iter().map(|r| r.seed).collect();
    let present: BTreeSet<_> = rows.iter().map(|r| (r.scheduler, r.n, r.r_ul, r.r_dl, r.seed)).collect();
    let mut missing = Vec::new();
    for &s in &schedulers {
        for &n in &ns {
            for &(u, d) in &pairs {
                for &seed in &seeds {
                    if !present.contains(&(s, n, u, d, seed)) {
                        missing.push(format!("{s} n={n} r_ul={u} r_dl={d} seed={seed}"));
                    }
                }
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(FigureError::MissingCells(missing))
    }
}

// ============================================================================
// Plot model and SVG rendering
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<Point>,
    pub dashed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
/// Flagged points further above the unflagged maximum than this factor are clipped.
const CLIP_FACTOR: f64 = 1.5;

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn widen((lo, hi): (f64, f64)) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

impl Plot {
    /// Renders the plot as a standalone SVG document.
    pub fn to_svg(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let (x_lo, x_hi) = widen(range(all().map(|p| p.x)).unwrap_or((0.0, 1.0)));
        let full = range(all().map(|p| p.y)).unwrap_or((0.0, 1.0));
        let y_cap = range(all().filter(|p| !p.flagged).map(|p| p.y))
            .map(|(_, hi)| hi * CLIP_FACTOR)
            .filter(|&cap| cap > 0.0 && cap < full.1)
            .unwrap_or(full.1);
        let (y_lo, y_hi) = widen((full.0.min(0.0), y_cap));

        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * pw;
        let sy = |y: f64| TOP + ph - (y.min(y_hi) - y_lo) / (y_hi - y_lo) * ph;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );

        // axes and grid
        for t in ticks(x_lo, x_hi) {
            let x = sx(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                TOP + ph,
                TOP + ph + 16.0,
                fmt_tick(t)
            );
        }
        for t in ticks(y_lo, y_hi) {
            let y = sy(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            svg,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text transform="translate(20 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        // series
        for (idx, s) in self.series.iter().enumerate() {
            let color = PALETTE[idx % PALETTE.len()];
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let path: Vec<String> = s
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>"#,
                path.join(" ")
            );
            for p in &s.points {
                let (x, y) = (sx(p.x), sy(p.y));
                if p.flagged {
                    let _ = writeln!(
                        svg,
                        r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="white" stroke="{color}" stroke-width="1.5"/>"#,
                        x,
                        y - 5.0,
                        x - 5.0,
                        y + 4.0,
                        x + 5.0,
                        y + 4.0
                    );
                } else {
                    let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
                }
            }
            let ly = TOP + 10.0 + idx as f64 * 18.0;
            let lx = LEFT + pw + 14.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.8"{dash}/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 22.0,
                lx + 28.0,
                ly + 4.0,
                escape(&s.name)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

// ============================================================================
// Figures
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Aoi,
    Iae,
}

impl Metric {
    fn of(self, m: &CellMean) -> f64 {
        match self {
            Metric::Aoi => m.avg_aoi,
            Metric::Iae => m.iae,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Aoi => "average AoI [steps]",
            Metric::Iae => "integrated absolute error",
        }
    }
}

fn vs_n(means: &BTreeMap<CellKey, CellMean>, metric: Metric) -> Plot {
    let mut series: BTreeMap<(SchedulerKind, usize, usize), Vec<Point>> = BTreeMap::new();
    for (&(s, n, u, d), m) in means {
        series.entry((s, u, d)).or_default().push(Point {
            x: n as f64,
            y: metric.of(m),
            flagged: m.starved,
        });
    }
    Plot {
        title: format!("{} against number of loops", metric.label()),
        x_label: "number of loops N".into(),
        y_label: metric.label().into(),
        series: series
            .into_iter()
            .map(|((s, u, d), points)| Series {
                name: format!("{s} {u}:{d}"),
                dashed: s != SchedulerKind::Voi,
                points,
            })
            .collect(),
    }
}

/// `None` when no downlink budget has more than one uplink budget.
fn vs_ratio(means: &BTreeMap<CellKey, CellMean>, metric: Metric) -> Option<Plot> {
    let mut series: BTreeMap<(SchedulerKind, usize, usize), Vec<Point>> = BTreeMap::new();
    for (&(s, n, u, d), m) in means {
        series.entry((s, n, d)).or_default().push(Point {
            x: u as f64 / d as f64,
            y: metric.of(m),
            flagged: m.starved,
        });
    }
    series.retain(|_, pts| pts.len() > 1);
    if series.is_empty() {
        return None;
    }
    Some(Plot {
        title: format!("{} against resource ratio", metric.label()),
        x_label: "R_UL / R_DL".into(),
        y_label: metric.label().into(),
        series: series
            .into_iter()
            .map(|((s, n, d), points)| Series {
                name: format!("{s} N={n} R_DL={d}"),
                dashed: s != SchedulerKind::Voi,
                points,
            })
            .collect(),
    })
}

/// Expected squared error against AoI for each class, with the identity
/// line that the AoI scheduler implicitly uses as its value.
pub fn g_curve(classes: &[LoopClass], max_aoi: u64) -> Result<Plot, FigureError> {
    let mut series = Vec::new();
    for (j, c) in classes.iter().enumerate() {
        let p = SubSystemParams::new(j, c.a.clone(), c.b.clone(), c.w.clone(), c.l.clone(), 1, 0)
            .map_err(|e| FigureError::Class(j, e.to_string()))?;
        let mut growth = ErrorGrowth::new(&p);
        series.push(Series {
            name: format!("g, A = {}", c.label()),
            dashed: false,
            points: (0..=max_aoi)
                .map(|d| Point {
                    x: d as f64,
                    y: growth.value(d),
                    flagged: false,
                })
                .collect(),
        });
    }
    series.push(Series {
        name: "AoI (identity)".into(),
        dashed: true,
        points: (0..=max_aoi)
            .map(|d| Point {
                x: d as f64,
                y: d as f64,
                flagged: false,
            })
            .collect(),
    });
    Ok(Plot {
        title: "expected estimation error against AoI".into(),
        x_label: "AoI [steps]".into(),
        y_label: "expected squared error".into(),
        series,
    })
}

fn write(dir: &Path, name: &str, plot: &Plot) -> Result<PathBuf, FigureError> {
    let path = dir.join(name);
    fs::write(&path, plot.to_svg()).map_err(|source| FigureError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes the sweep figures into `dir` and returns the written paths. When
/// `classes` is given the error growth curve is drawn too.
pub fn write_figures(
    rows: &[ResultRow],
    classes: Option<&[LoopClass]>,
    dir: &Path,
) -> Result<Vec<PathBuf>, FigureError> {
    check_complete(rows)?;
    let means = cell_means(rows);
    fs::create_dir_all(dir).map_err(|source| FigureError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    if let Some(classes) = classes {
        written.push(write(dir, "g_curve.svg", &g_curve(classes, 8)?)?);
    }
    written.push(write(dir, "aoi_vs_n.svg", &vs_n(&means, Metric::Aoi))?);
    written.push(write(dir, "iae_vs_n.svg", &vs_n(&means, Metric::Iae))?);
    if let Some(plot) = vs_ratio(&means, Metric::Aoi) {
        written.push(write(dir, "aoi_vs_ratio.svg", &plot)?);
    }
    if let Some(plot) = vs_ratio(&means, Metric::Iae) {
        written.push(write(dir, "iae_vs_ratio.svg", &plot)?);
    }
    Ok(written)
}
