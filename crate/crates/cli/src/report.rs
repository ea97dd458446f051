use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rayon::prelude::*;
use wfi_core::field::{GridSpec, ScalarField};
use wfi_core::inversion::RunHistory;

use crate::args::ReportArgs;
use crate::commands::{RunMeta, HISTORY, RUN_META, SNAPSHOTS};
use crate::guard::Writer;
use crate::{CliError, CliResult};

/// Reference line drawn on AP plots.
pub const AP_REFERENCE: f64 = 1.0 - 1e-4;

pub struct Run {
    pub dir: PathBuf,
    pub label: String,
    pub meta: Option<RunMeta>,
    pub history: RunHistory,
}

pub fn load_run(dir: &Path) -> CliResult<Run> {
    let path = dir.join(HISTORY);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let history = RunHistory::from_csv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let meta: Option<RunMeta> = std::fs::read_to_string(dir.join(RUN_META))
        .ok()
        .map(|s| serde_json::from_str(&s).map_err(|e| CliError::Usage(format!("{}: {e}", dir.join(RUN_META).display()))))
        .transpose()?;
    let label = meta.as_ref().map_or_else(|| "run".to_string(), |m| m.label.clone());
    Ok(Run { dir: dir.to_path_buf(), label, meta, history })
}

/// Per-epoch means of one group of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub label: String,
    pub runs: usize,
    pub epochs: Vec<usize>,
    pub loss_m: Vec<Option<f64>>,
    pub avg_precision: Vec<Option<f64>>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Groups runs by label and averages them epoch by epoch. All runs of a group
/// must share the same epochs.
pub fn aggregate(runs: &[Run]) -> CliResult<Vec<Aggregate>> {
    let mut groups: BTreeMap<&str, Vec<&Run>> = BTreeMap::new();
    for r in runs {
        groups.entry(&r.label).or_default().push(r);
    }
    let mut out = Vec::new();
    let mut offenders = Vec::new();
    for (label, group) in groups {
        let epochs: Vec<usize> = group[0].history.rows.iter().map(|r| r.epoch).collect();
        let before = offenders.len();
        for r in &group[1..] {
            let e: Vec<usize> = r.history.rows.iter().map(|r| r.epoch).collect();
            if e != epochs {
                offenders.push(format!(
                    "{} ({} epochs, group '{label}' expects {} from {})",
                    r.dir.display(),
                    e.len(),
                    epochs.len(),
                    group[0].dir.display()
                ));
            }
        }
        if offenders.len() > before {
            continue;
        }
        let col = |k: usize, f: fn(&wfi_core::inversion::HistoryRow) -> Option<f64>| {
            mean(group.iter().map(|r| f(&r.history.rows[k])))
        };
        out.push(Aggregate {
            label: label.to_string(),
            runs: group.len(),
            loss_m: (0..epochs.len()).map(|k| col(k, |r| r.loss_m)).collect(),
            avg_precision: (0..epochs.len()).map(|k| col(k, |r| r.avg_precision)).collect(),
            epochs,
        });
    }
    if !offenders.is_empty() {
        return Err(CliError::Usage(format!("inconsistent epoch grids:\n  {}", offenders.join("\n  "))));
    }
    Ok(out)
}

pub fn aggregate_csv(aggs: &[Aggregate]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let mut s = String::from("label,epoch,runs,loss_m,avg_precision\n");
    for a in aggs {
        for (k, e) in a.epochs.iter().enumerate() {
            let _ = writeln!(s, "{},{e},{},{},{}", a.label, a.runs, cell(a.loss_m[k]), cell(a.avg_precision[k]));
        }
    }
    s
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Static line chart. `log_y` plots base-10 logarithms of positive values.
pub fn line_chart(
    title: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    log_y: bool,
    reference: Option<f64>,
) -> String {
    let (w, h) = (720.0, 440.0);
    let (l, r, t, b) = (70.0, 150.0, 40.0, 50.0);
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.1.iter().copied()).filter(|p| p.1.is_finite() && (!log_y || p.1 > 0.0)).collect();
    let x_max = pts.iter().map(|p| p.0).fold(1.0f64, f64::max);
    let (y0, mut y1) = if log_y {
        let ys = pts.iter().map(|p| tf(p.1));
        let (a, b) = ys.fold((f64::MAX, f64::MIN), |(a, b), y| (a.min(y), b.max(y)));
        if a > b { (0.0, 1.0) } else { (a.floor(), b.ceil()) }
    } else {
        (0.0, 1.0)
    };
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| l + (w - l - r) * x / x_max;
    let py = |y: f64| h - b - (h - t - b) * (tf(y) - y0) / (y1 - y0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, (w - r + l) / 2.0);
    let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, w - l - r, h - t - b);
    for k in 0..=5 {
        let x = x_max * k as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.0}</text>"#, px(x), h - b + 18.0, x);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, (w - r + l) / 2.0, h - 10.0);
    let ticks: Vec<f64> = if log_y {
        (y0 as i32..=y1 as i32).map(|e| 10f64.powi(e)).collect()
    } else {
        (0..=4).map(|k| k as f64 / 4.0).collect()
    };
    for v in ticks {
        let y = py(v);
        let txt = if log_y { format!("1e{}", v.log10().round()) } else { format!("{v:.2}") };
        let _ = writeln!(s, r##"<line x1="{l}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/>"##, w - r);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{txt}</text>"#, l - 6.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{y_label}</text>"#,
        (h - b + t) / 2.0
    );
    if let Some(v) = reference {
        let y = py(v);
        let _ = writeln!(s, r#"<line x1="{l}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="black" stroke-dasharray="6,4"/>"#, w - r);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}">1 - 1e-4</text>"#, w - r + 6.0, y + 4.0);
    }
    for (k, (name, data)) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        let path: Vec<String> = data
            .iter()
            .filter(|p| p.1.is_finite() && (!log_y || p.1 > 0.0))
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = t + 16.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, w - r + 10.0, w - r + 30.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, w - r + 36.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Tiles snapshot fields left to right, top to bottom; dark is void.
pub fn mosaic(fields: &[ScalarField], per_row: usize, scale: u32) -> GrayImage {
    let g = fields[0].grid();
    let (tw, th) = (g.nx() as u32 * scale, g.ny() as u32 * scale);
    let gap = 2;
    let cols = per_row.min(fields.len()) as u32;
    let rows = fields.len().div_ceil(per_row) as u32;
    let mut img = GrayImage::from_pixel(cols * (tw + gap) + gap, rows * (th + gap) + gap, Luma([128]));
    for (k, f) in fields.iter().enumerate() {
        let (ox, oy) = (gap + (k as u32 % cols) * (tw + gap), gap + (k as u32 / cols) * (th + gap));
        for py in 0..th {
            // top of the specimen at the top of the tile
            let j = g.ny() - 1 - (py / scale) as usize;
            for px in 0..tw {
                let v = f.at((px / scale) as usize, j).clamp(0.0, 1.0);
                img.put_pixel(ox + px, oy + py, Luma([(v * 255.0).round() as u8]));
            }
        }
    }
    img
}

fn load_snapshots(run: &Run) -> CliResult<Option<Vec<ScalarField>>> {
    let (Some(meta), Ok(entries)) = (&run.meta, std::fs::read_dir(run.dir.join(SNAPSHOTS))) else {
        return Ok(None);
    };
    let grid = GridSpec::new(meta.nx, meta.ny, meta.lx, meta.ly)?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    let fields = paths.iter().map(|p| ScalarField::load(p, grid)).collect::<Result<Vec<_>, _>>()?;
    Ok((!fields.is_empty()).then_some(fields))
}

pub fn report(a: &ReportArgs) -> CliResult {
    if a.runs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let runs = a.runs.iter().map(|d| load_run(d)).collect::<CliResult<Vec<_>>>()?;
    let aggs = aggregate(&runs)?;
    let w = Writer { force: a.force };
    w.write(&a.out.join("aggregate.csv"), aggregate_csv(&aggs).as_bytes())?;

    let series = |f: fn(&Aggregate) -> &Vec<Option<f64>>| -> Vec<(String, Vec<(f64, f64)>)> {
        aggs.iter()
            .map(|g| {
                let pts = g.epochs.iter().zip(f(g)).filter_map(|(&e, v)| v.map(|v| (e as f64, v))).collect();
                (format!("{} (n={})", g.label, g.runs), pts)
            })
            .collect()
    };
    let loss = line_chart("Measurement loss", "mean L_M", &series(|g| &g.loss_m), true, None);
    w.write(&a.out.join("loss.svg"), loss.as_bytes())?;
    let ap = line_chart("Average precision", "mean AP", &series(|g| &g.avg_precision), false, Some(AP_REFERENCE));
    w.write(&a.out.join("ap.svg"), ap.as_bytes())?;

    let mosaics: Vec<CliResult<Option<(String, Vec<u8>)>>> = runs
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            let Some(fields) = load_snapshots(r)? else { return Ok(None) };
            let img = mosaic(&fields, 6, 4);
            let mut png = Vec::new();
            img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
                .map_err(|e| CliError::Runtime(format!("png encoding: {e}")))?;
            let name = format!("mosaic_{k:03}_{}.png", r.label.replace(|c: char| !c.is_ascii_alphanumeric(), "_"));
            Ok(Some((name, png)))
        })
        .collect();
    let mut n_mosaics = 0;
    for m in mosaics {
        if let Some((name, png)) = m? {
            w.write(&a.out.join("mosaics").join(name), &png)?;
            n_mosaics += 1;
        }
    }
    for g in &aggs {
        let last = g.epochs.len() - 1;
        println!(
            "{}: {} runs, {} epochs, final mean L_M {:.4e}, AP {:.6}",
            g.label,
            g.runs,
            g.epochs.len(),
            g.loss_m.get(last).copied().flatten().unwrap_or(f64::NAN),
            g.avg_precision.get(last).copied().flatten().unwrap_or(f64::NAN)
        );
    }
    println!("wrote aggregate.csv, loss.svg, ap.svg and {n_mosaics} mosaics to {}", a.out.display());
    Ok(())
}
