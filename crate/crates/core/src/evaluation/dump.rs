//! Field panels: initial state, reference, prediction and bias, each as an
//! SVG heatmap plus the raw grid as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{EvalError, ForecastTrajectory};
use crate::dataset::{StateTensor, VariableCatalog};

pub const PANELS: [&str; 4] = ["initial", "reference", "prediction", "bias"];
const CELL_PX: usize = 8;

fn grid_csv(field: &[f64], w: usize) -> String {
    let mut s = String::new();
    for row in field.chunks(w) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Blue-white-red for diverging data, dark-to-light for the rest.
fn colour(t: f64, diverging: bool) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64, x: f64| (a + (b - a) * x).round() as u8;
    if diverging {
        if t < 0.5 {
            let x = t / 0.5;
            (lerp(33.0, 247.0, x), lerp(102.0, 247.0, x), lerp(172.0, 247.0, x))
        } else {
            let x = (t - 0.5) / 0.5;
            (lerp(247.0, 178.0, x), lerp(247.0, 24.0, x), lerp(247.0, 43.0, x))
        }
    } else {
        (lerp(68.0, 253.0, t), lerp(1.0, 231.0, t), lerp(84.0, 37.0, t))
    }
}

fn heatmap_svg(field: &[f64], w: usize, range: (f64, f64), diverging: bool, title: &str) -> String {
    let h = field.len() / w;
    let (lo, hi) = range;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (pw, ph) = (w * CELL_PX, h * CELL_PX + 20);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{pw}\" height=\"{ph}\" viewBox=\"0 0 {pw} {ph}\">\n"
    );
    let _ = writeln!(s, "<text x=\"2\" y=\"14\" font-family=\"sans-serif\" font-size=\"12\">{title}</text>");
    for (k, &v) in field.iter().enumerate() {
        let (r, g, b) = colour((v - lo) / span, diverging);
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"{CELL_PX}\" height=\"{CELL_PX}\" fill=\"#{r:02x}{g:02x}{b:02x}\"/>",
            (k % w) * CELL_PX,
            20 + (k / w) * CELL_PX
        );
    }
    s.push_str("</svg>\n");
    s
}

fn min_max(fields: &[&[f64]]) -> (f64, f64) {
    fields
        .iter()
        .flat_map(|f| f.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Writes `<var>_<lead>h_<panel>.svg` and `.csv` for every requested
/// variable and lead. `truth[k]` verifies `traj.states[k]`; the initial
/// panel is lead 0 of the trajectory. Returns the written paths.
pub fn dump_fields(
    traj: &ForecastTrajectory,
    truth: &[StateTensor],
    catalog: &VariableCatalog,
    variables: &[String],
    leads: &[u32],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EvalError> {
    fs::create_dir_all(out_dir)?;
    let initial = traj.states.first().ok_or_else(|| EvalError::InvalidInput("empty trajectory".into()))?;
    let w = initial.shape()[2];
    let mut written = Vec::new();
    for var in variables {
        let c = catalog
            .channel_by_label(var)
            .ok_or_else(|| EvalError::InvalidInput(format!("unknown variable '{var}'")))?;
        for &lead in leads {
            let k = traj
                .lead_hours
                .iter()
                .position(|&h| h == lead)
                .ok_or_else(|| EvalError::InvalidInput(format!("trajectory has no {lead}h lead")))?;
            let reference = truth
                .get(k)
                .ok_or_else(|| EvalError::Shape(format!("no truth state for lead {lead}h")))?;
            let to64 = |s: &StateTensor| s.channel(c).iter().map(|&v| v as f64).collect::<Vec<_>>();
            let init = to64(initial);
            let refr = to64(reference);
            let pred = to64(&traj.states[k]);
            let bias: Vec<f64> = pred.iter().zip(&refr).map(|(p, r)| p - r).collect();
            let shared = min_max(&[&init, &refr, &pred]);
            let m = bias.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let panels: [(&str, &[f64], (f64, f64), bool); 4] = [
                (PANELS[0], &init, shared, false),
                (PANELS[1], &refr, shared, false),
                (PANELS[2], &pred, shared, false),
                (PANELS[3], &bias, (-m, m), true),
            ];
            for (name, field, range, diverging) in panels {
                let stem = format!("{var}_{lead:03}h_{name}");
                let svg = out_dir.join(format!("{stem}.svg"));
                let csv = out_dir.join(format!("{stem}.csv"));
                fs::write(&svg, heatmap_svg(field, w, range, diverging, &format!("{var} +{lead}h {name}")))?;
                fs::write(&csv, grid_csv(field, w))?;
                written.push(svg);
                written.push(csv);
            }
        }
    }
    Ok(written)
}
