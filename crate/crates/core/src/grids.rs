//! Latitude/longitude grid geometry shared by the loss and the verification
//! code: latitude weights, verification regions and great-circle distance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used for all distances, in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Poleward edge of the tropical band, in degrees.
pub const TROPICS_EDGE_DEG: f64 = 20.0;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 2 points along each axis (got {n_lat}x{n_lon})")]
    TooSmall { n_lat: usize, n_lon: usize },
    #[error("latitude {0} is outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("latitudes must be strictly monotonic")]
    NonMonotonicLatitudes,
    #[error("longitudes must be strictly increasing with uniform spacing inside [0, 360)")]
    BadLongitudes,
}

/// A regular latitude/longitude grid. Row `i` is latitude `latitudes[i]`,
/// column `j` is longitude `longitudes[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatLonGrid {
    latitudes: Vec<f64>,
    longitudes: Vec<f64>,
}

impl LatLonGrid {
    pub fn new(latitudes: Vec<f64>, longitudes: Vec<f64>) -> Result<Self, GridError> {
        let (n_lat, n_lon) = (latitudes.len(), longitudes.len());
        if n_lat < 2 || n_lon < 2 {
            return Err(GridError::TooSmall { n_lat, n_lon });
        }
        if let Some(&bad) = latitudes.iter().find(|p| !(-90.0..=90.0).contains(*p)) {
            return Err(GridError::LatitudeOutOfRange(bad));
        }
        let ascending = latitudes[1] > latitudes[0];
        let monotonic = latitudes
            .windows(2)
            .all(|w| if ascending { w[1] > w[0] } else { w[1] < w[0] });
        if !monotonic {
            return Err(GridError::NonMonotonicLatitudes);
        }
        let spacing = longitudes[1] - longitudes[0];
        let uniform = spacing > 0.0
            && longitudes
                .windows(2)
                .all(|w| ((w[1] - w[0]) - spacing).abs() <= 1e-9 * spacing.max(1.0));
        if !uniform || longitudes[0] < 0.0 || longitudes[n_lon - 1] >= 360.0 {
            return Err(GridError::BadLongitudes);
        }
        Ok(Self {
            latitudes,
            longitudes,
        })
    }

    /// Equiangular grid including both poles, descending from 90°N, with
    /// longitudes starting at 0°. `equiangular(121, 240)` is the 1.5° grid.
    pub fn equiangular(n_lat: usize, n_lon: usize) -> Result<Self, GridError> {
        if n_lat < 2 || n_lon < 2 {
            return Err(GridError::TooSmall { n_lat, n_lon });
        }
        let dlat = 180.0 / (n_lat - 1) as f64;
        let lats = (0..n_lat).map(|i| 90.0 - i as f64 * dlat).collect();
        Self::new(lats, uniform_longitudes(n_lon))
    }

    /// Cell-centred grid without pole rows, descending from the north.
    pub fn cell_centred(n_lat: usize, n_lon: usize) -> Result<Self, GridError> {
        if n_lat < 2 || n_lon < 2 {
            return Err(GridError::TooSmall { n_lat, n_lon });
        }
        let dlat = 180.0 / n_lat as f64;
        let lats = (0..n_lat)
            .map(|i| 90.0 - (i as f64 + 0.5) * dlat)
            .collect();
        Self::new(lats, uniform_longitudes(n_lon))
    }

    pub fn n_lat(&self) -> usize {
        self.latitudes.len()
    }

    pub fn n_lon(&self) -> usize {
        self.longitudes.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat() * self.n_lon()
    }

    pub fn latitudes(&self) -> &[f64] {
        &self.latitudes
    }

    pub fn longitudes(&self) -> &[f64] {
        &self.longitudes
    }

    pub fn lon_spacing(&self) -> f64 {
        self.longitudes[1] - self.longitudes[0]
    }

    pub fn lat_ascending(&self) -> bool {
        self.latitudes[1] > self.latitudes[0]
    }

    /// Grid cell closest (great-circle) to `(lat, lon)`.
    pub fn nearest_cell(&self, lat: f64, lon: f64) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_d = f64::INFINITY;
        for (i, &la) in self.latitudes.iter().enumerate() {
            for (j, &lo) in self.longitudes.iter().enumerate() {
                let d = great_circle_km((lat, lon), (la, lo));
                if d < best_d {
                    best_d = d;
                    best = (i, j);
                }
            }
        }
        best
    }
}

fn uniform_longitudes(n_lon: usize) -> Vec<f64> {
    let dlon = 360.0 / n_lon as f64;
    (0..n_lon).map(|j| j as f64 * dlon).collect()
}

/// Normalized cosine-latitude weights, `cos(lat_i) / mean(cos(lat))`.
///
/// The returned vector has mean 1, so the weighted and unweighted losses
/// coincide when every row sits at the same latitude.
pub fn latitude_weights(grid: &LatLonGrid) -> Result<Vec<f64>, GridError> {
    latitude_weights_from(grid.latitudes())
}

/// Same as [`latitude_weights`] for a bare list of latitudes.
pub fn latitude_weights_from(latitudes: &[f64]) -> Result<Vec<f64>, GridError> {
    if let Some(&bad) = latitudes.iter().find(|p| !(-90.0..=90.0).contains(*p)) {
        return Err(GridError::LatitudeOutOfRange(bad));
    }
    let cos: Vec<f64> = latitudes.iter().map(|p| p.to_radians().cos()).collect();
    let mean = cos.iter().sum::<f64>() / cos.len() as f64;
    Ok(cos.into_iter().map(|c| c / mean).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Global,
    /// Northern extratropics, latitude >= 20°.
    Nhet,
    /// Southern extratropics, latitude <= -20°.
    Shet,
    /// Open band (-20°, 20°).
    Tropics,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Global, Region::Nhet, Region::Shet, Region::Tropics];

    pub fn name(self) -> &'static str {
        match self {
            Region::Global => "global",
            Region::Nhet => "nhet",
            Region::Shet => "shet",
            Region::Tropics => "tropics",
        }
    }

    pub fn contains_latitude(self, lat: f64) -> bool {
        match self {
            Region::Global => true,
            Region::Nhet => lat >= TROPICS_EDGE_DEG,
            Region::Shet => lat <= -TROPICS_EDGE_DEG,
            Region::Tropics => lat > -TROPICS_EDGE_DEG && lat < TROPICS_EDGE_DEG,
        }
    }
}

impl std::str::FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Region::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown region '{s}'"))
    }
}

/// Cell mask for one verification region, row-major `[H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub region: Region,
    pub n_lat: usize,
    pub n_lon: usize,
    pub mask: Vec<bool>,
}

impl RegionMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.n_lon + j]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn region_mask(grid: &LatLonGrid, region: Region) -> RegionMask {
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let mut mask = Vec::with_capacity(h * w);
    for &lat in grid.latitudes() {
        let inside = region.contains_latitude(lat);
        mask.extend(std::iter::repeat(inside).take(w));
    }
    RegionMask {
        region,
        n_lat: h,
        n_lon: w,
        mask,
    }
}

/// Haversine distance on a spherical Earth, in kilometres. Points are
/// `(lat, lon)` in degrees.
pub fn great_circle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    EARTH_RADIUS_KM * central_angle(a, b)
}

/// Great-circle separation in degrees of arc.
pub fn great_circle_deg(a: (f64, f64), b: (f64, f64)) -> f64 {
    central_angle(a, b).to_degrees()
}

fn central_angle(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (phi1, phi2) = (a.0.to_radians(), b.0.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.1 - a.1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * h.clamp(0.0, 1.0).sqrt().asin()
}
