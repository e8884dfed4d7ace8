use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::{GroupSplit, VariableCatalog};
use crate::grids::LatLonGrid;

/// Hyperparameters of the two-stage network.
///
/// Step 1 runs `n1` blocks of width `d1` over the dynamics tokens; step 2
/// runs `n2` blocks of width `d1 + d2` over the step-1 output concatenated
/// with the thermodynamic embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub d1: usize,
    pub d2: usize,
    pub n1: usize,
    pub n2: usize,
    pub heads1: usize,
    pub heads2: usize,
    pub mlp_ratio: usize,
    pub t_embed_dim: usize,
    pub catalog: VariableCatalog,
    pub group_split: GroupSplit,
    pub grid: LatLonGrid,
}

impl ModelConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        catalog: VariableCatalog,
        grid: LatLonGrid,
        patch_size: usize,
        d1: usize,
        d2: usize,
        n1: usize,
        n2: usize,
        heads1: usize,
        heads2: usize,
        t_embed_dim: usize,
    ) -> Result<Self, ModelError> {
        let cfg = Self {
            patch_size,
            d1,
            d2,
            n1,
            n2,
            heads1,
            heads2,
            mlp_ratio: 4,
            t_embed_dim,
            group_split: catalog.group_split(),
            catalog,
            grid,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk-scale preset: 8 channels on a 16×32 grid, patch 2.
    pub fn toy() -> Self {
        Self::new(
            VariableCatalog::toy(),
            LatLonGrid::cell_centred(16, 32).expect("valid grid"),
            2,
            32,
            16,
            2,
            2,
            2,
            3,
            48,
        )
        .expect("valid preset")
    }

    /// Full-size preset on the 1.5° grid: d1 = 256, d2 = 128 (total width
    /// 384), eight slow blocks and four fast blocks, 64-wide heads, patch 4.
    pub fn sonny_s() -> Self {
        Self::new(
            VariableCatalog::full(),
            LatLonGrid::equiangular(121, 240).expect("valid grid"),
            4,
            256,
            128,
            8,
            4,
            4,
            6,
            384,
        )
        .expect("valid preset")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy()),
            "sonny-s" => Some(Self::sonny_s()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.patch_size == 0 {
            return bad("patch size must be positive".into());
        }
        if self.d1 == 0 || self.d2 == 0 {
            return bad("both stage widths must be positive".into());
        }
        if self.heads1 == 0 || self.d1 % self.heads1 != 0 {
            return bad(format!("d1 = {} is not divisible by {} heads", self.d1, self.heads1));
        }
        if self.heads2 == 0 || self.width() % self.heads2 != 0 {
            return bad(format!(
                "d1 + d2 = {} is not divisible by {} heads",
                self.width(),
                self.heads2
            ));
        }
        if self.mlp_ratio == 0 {
            return bad("mlp ratio must be positive".into());
        }
        if self.t_embed_dim == 0 || self.t_embed_dim % 2 != 0 {
            return bad("timestep embedding width must be even and positive".into());
        }
        if self.grid.n_lon() % self.patch_size != 0 {
            return bad(format!(
                "{} longitudes are not divisible by patch size {}",
                self.grid.n_lon(),
                self.patch_size
            ));
        }
        if self.padded_lat() - self.grid.n_lat() >= self.grid.n_lat() {
            return bad("latitude padding would exceed the grid".into());
        }
        if self.group_split != self.catalog.group_split() {
            return bad("group split does not match the catalog".into());
        }
        if self.group_split.dynamics.is_empty() || self.group_split.thermo.is_empty() {
            return bad("both channel groups must be non-empty".into());
        }
        Ok(())
    }

    /// Full width of the step-2 stage.
    pub fn width(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn n_channels(&self) -> usize {
        self.catalog.n_channels()
    }

    pub fn n_dynamics(&self) -> usize {
        self.group_split.dynamics.len()
    }

    pub fn n_thermo(&self) -> usize {
        self.group_split.thermo.len()
    }

    /// Latitude count after reflect-padding to a multiple of the patch size.
    pub fn padded_lat(&self) -> usize {
        self.grid.n_lat().div_ceil(self.patch_size) * self.patch_size
    }

    pub fn token_rows(&self) -> usize {
        self.padded_lat() / self.patch_size
    }

    pub fn token_cols(&self) -> usize {
        self.grid.n_lon() / self.patch_size
    }

    pub fn n_tokens(&self) -> usize {
        self.token_rows() * self.token_cols()
    }

    pub fn patch_area(&self) -> usize {
        self.patch_size * self.patch_size
    }
}
