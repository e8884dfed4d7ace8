//! Minimum-pressure cyclone tracking.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{EvalError, ForecastTrajectory};
use crate::dataset::VariableCatalog;
use crate::grids::{great_circle_deg, great_circle_km, LatLonGrid};

pub const DEFAULT_SEARCH_RADIUS_DEG: f64 = 10.0;
const PA_PER_HPA: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub lead_hours: u32,
    pub i: usize,
    pub j: usize,
    pub lat: f64,
    pub lon: f64,
    pub pressure_hpa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycloneTrack {
    pub points: Vec<TrackPoint>,
    /// Lead at which no interior minimum was found, if the track ended early.
    pub terminated_at: Option<u32>,
}

fn in_disc(grid: &LatLonGrid, centre: (f64, f64), i: usize, j: usize, radius: f64) -> bool {
    great_circle_deg(centre, (grid.latitudes()[i], grid.longitudes()[j])) <= radius
}

/// All eight neighbours exist and lie inside the disc.
fn interior(grid: &LatLonGrid, centre: (f64, f64), i: usize, j: usize, radius: f64) -> bool {
    let (h, w) = (grid.n_lat() as isize, grid.n_lon() as isize);
    for di in -1..=1 {
        for dj in -1..=1 {
            let ni = i as isize + di;
            if ni < 0 || ni >= h {
                return false;
            }
            let nj = (j as isize + dj).rem_euclid(w);
            if !in_disc(grid, centre, ni as usize, nj as usize, radius) {
                return false;
            }
        }
    }
    true
}

/// Tracks the pressure minimum through `fields` (sea-level pressure in Pa,
/// `[H, W]` each). At every lead the centre is the lowest cell within
/// `radius_deg` of the previous centre (the first guess for the first
/// lead); ties go to the cell nearest the previous centre, then the lower
/// latitude index, then the lower longitude index. The track ends when
/// the minimum touches the edge of the search disc.
pub fn track_fields(
    grid: &LatLonGrid,
    leads: &[u32],
    fields: &[&[f32]],
    first_guess: (f64, f64),
    radius_deg: f64,
) -> Result<CycloneTrack, EvalError> {
    if leads.len() != fields.len() {
        return Err(EvalError::Shape("one pressure field per lead is required".into()));
    }
    if !(radius_deg > 0.0) {
        return Err(EvalError::InvalidInput("search radius must be positive".into()));
    }
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let mut centre = first_guess;
    let mut track = CycloneTrack {
        points: Vec::new(),
        terminated_at: None,
    };
    for (&lead, field) in leads.iter().zip(fields) {
        if field.len() != h * w {
            return Err(EvalError::Shape(format!("pressure field of {} cells on a {h}x{w} grid", field.len())));
        }
        let mut best: Option<(f32, f64, usize, usize)> = None;
        for i in 0..h {
            for j in 0..w {
                let d = great_circle_deg(centre, (grid.latitudes()[i], grid.longitudes()[j]));
                if d > radius_deg {
                    continue;
                }
                let cand = (field[i * w + j], d, i, j);
                let better = match best {
                    None => true,
                    Some(b) => {
                        let ord = cand
                            .0
                            .partial_cmp(&b.0)
                            .unwrap_or(Ordering::Equal)
                            .then(cand.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
                            .then(cand.2.cmp(&b.2))
                            .then(cand.3.cmp(&b.3));
                        ord == Ordering::Less
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let Some((p, _, i, j)) = best else {
            track.terminated_at = Some(lead);
            break;
        };
        if !interior(grid, centre, i, j, radius_deg) {
            track.terminated_at = Some(lead);
            break;
        }
        let point = TrackPoint {
            lead_hours: lead,
            i,
            j,
            lat: grid.latitudes()[i],
            lon: grid.longitudes()[j],
            pressure_hpa: p as f64 / PA_PER_HPA,
        };
        centre = (point.lat, point.lon);
        track.points.push(point);
    }
    Ok(track)
}

/// Tracks the `MSLP` channel of a trajectory.
pub fn track_cyclone(
    traj: &ForecastTrajectory,
    catalog: &VariableCatalog,
    grid: &LatLonGrid,
    first_guess: (f64, f64),
    radius_deg: f64,
) -> Result<CycloneTrack, EvalError> {
    let c = catalog
        .channel_by_label("MSLP")
        .ok_or_else(|| EvalError::InvalidInput("the catalog has no MSLP channel".into()))?;
    let fields: Vec<&[f32]> = traj.states.iter().map(|s| s.channel(c)).collect();
    track_fields(grid, &traj.lead_hours, &fields, first_guess, radius_deg)
}

fn paired<'a>(
    forecast: &'a CycloneTrack,
    reference: &'a CycloneTrack,
) -> Result<impl Iterator<Item = (&'a TrackPoint, &'a TrackPoint)>, EvalError> {
    if forecast.points.len() != reference.points.len()
        || forecast.points.iter().zip(&reference.points).any(|(a, b)| a.lead_hours != b.lead_hours)
    {
        return Err(EvalError::LeadMismatch);
    }
    Ok(forecast.points.iter().zip(&reference.points))
}

/// Great-circle distance between paired centres, per lead.
pub fn track_error_km(forecast: &CycloneTrack, reference: &CycloneTrack) -> Result<Vec<f64>, EvalError> {
    Ok(paired(forecast, reference)?
        .map(|(a, b)| great_circle_km((a.lat, a.lon), (b.lat, b.lon)))
        .collect())
}

/// Central pressure of the forecast minus the reference, per lead.
pub fn intensity_error_hpa(forecast: &CycloneTrack, reference: &CycloneTrack) -> Result<Vec<f64>, EvalError> {
    Ok(paired(forecast, reference)?
        .map(|(a, b)| intensity_difference(a.pressure_hpa, b.pressure_hpa))
        .collect())
}

/// Signed difference rounded to 1e-9 hPa, so that decimal inputs such as
/// 976.7 − 971.8 give 4.9 rather than 4.900000000000091.
pub fn intensity_difference(forecast_hpa: f64, reference_hpa: f64) -> f64 {
    ((forecast_hpa - reference_hpa) * 1e9).round() / 1e9
}
