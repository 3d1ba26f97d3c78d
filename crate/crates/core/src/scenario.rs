//! Scenario files: region, devices, carriers and the ground-truth target.
//!
//! Lengths are in meters, frequencies in Hz and conductivity in S/m.

use crate::error::{Error, Result};
use crate::scene::{
    facing, place_ues, ArrayGeometry, BsConfig, GridRegion, MaterialDb, Point2, Scene, SubcarrierGrid, TargetMap, UeConfig,
};
use crate::SPEED_OF_LIGHT;
use faer::Col;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

const THU: &str = include_str!("../assets/phantoms/thu.txt");
const SEU: &str = include_str!("../assets/phantoms/seu.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub center: [f64; 2],
    pub half_extent: f64,
    pub n_side: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarrierConfig {
    pub f_c: f64,
    pub delta_f: f64,
    pub count: usize,
}

/// UE arrays. Either explicit `positions` or seeded placement in a disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSetup {
    pub n_t: usize,
    /// Element spacing; half the carrier wavelength when absent.
    #[serde(default)]
    pub spacing: Option<f64>,
    pub power_budget: f64,
    #[serde(default)]
    pub min_region_power: f64,
    #[serde(default)]
    pub positions: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub placement_radius: f64,
    #[serde(default)]
    pub guard: f64,
}

/// BS arrays, each facing the region center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsSetup {
    pub n_r: usize,
    #[serde(default)]
    pub spacing: Option<f64>,
    pub positions: Vec<[f64; 2]>,
}

/// `phantom` is `thu`, `seu`, `air` or a path to a grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub phantom: String,
    /// Material table; the built-in one when absent.
    #[serde(default)]
    pub materials: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub region: RegionConfig,
    pub carriers: CarrierConfig,
    pub ues: UeSetup,
    pub bss: BsSetup,
    pub target: TargetConfig,
}

/// A scene with its ground truth.
#[derive(Debug, Clone)]
pub struct Built {
    pub scene: Scene,
    pub target: TargetMap,
    pub s_true: Col<f64>,
}

impl ScenarioConfig {
    /// Laptop-scale setup: 32x32 grid over a 1 m square, 4 UEs, 32-element
    /// BSs, 16 subcarriers around 250 MHz. The region is under a wavelength
    /// across so the THU phantom stays in the weak-scattering range where the
    /// Born iterations converge.
    pub fn desk() -> Self {
        Self {
            region: RegionConfig { center: [0.0, 0.0], half_extent: 0.5, n_side: 32 },
            carriers: CarrierConfig { f_c: 0.25e9, delta_f: 10e6, count: 16 },
            ues: UeSetup {
                n_t: 8,
                spacing: None,
                power_budget: 1.0,
                min_region_power: 0.0,
                positions: None,
                count: 4,
                placement_radius: 3.0,
                guard: 0.5,
            },
            bss: BsSetup {
                n_r: 32,
                spacing: None,
                positions: vec![[3.0, 0.0], [-3.0, 0.0], [0.0, 3.0], [0.0, -3.0]],
            },
            target: TargetConfig { phantom: "thu".into(), materials: None },
        }
    }

    /// Full-size layout: 64x64 grid over `[-1, 1]^2` at 28 GHz, ten UEs,
    /// four 64-element BSs 100 m away.
    pub fn faithful() -> Self {
        Self {
            region: RegionConfig { center: [0.0, 0.0], half_extent: 1.0, n_side: 64 },
            carriers: CarrierConfig { f_c: 28e9, delta_f: 240e3, count: 32 },
            ues: UeSetup {
                n_t: 8,
                spacing: Some(0.0054),
                power_budget: 1.0,
                min_region_power: 0.0,
                positions: None,
                count: 10,
                placement_radius: 10.0,
                guard: 1.0,
            },
            bss: BsSetup {
                n_r: 64,
                spacing: Some(0.0054),
                positions: vec![[100.0, 0.0], [-100.0, 0.0], [0.0, 100.0], [0.0, -100.0]],
            },
            target: TargetConfig { phantom: "thu".into(), materials: None },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "faithful" => Ok(Self::faithful()),
            other => Err(Error::Config(format!("unknown scenario preset '{other}'"))),
        }
    }

    pub fn carrier_wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carriers.f_c
    }

    /// Builds the scene; relative paths resolve against `base`.
    pub fn build(&self, base: &Path, placement_seed: u64) -> Result<Built> {
        let r = &self.region;
        let region = GridRegion::new(Point2::new(r.center[0], r.center[1]), r.half_extent, r.n_side)?;
        let subcarriers = SubcarrierGrid::new(self.carriers.f_c, self.carriers.delta_f, self.carriers.count)?;
        let half_wave = 0.5 * self.carrier_wavelength();

        let ue_pos: Vec<Point2> = match &self.ues.positions {
            Some(p) if !p.is_empty() => p.iter().map(|&q| q.into()).collect(),
            _ => {
                if self.ues.count == 0 {
                    return Err(Error::Config("ues: give positions or a positive count".into()));
                }
                place_ues(self.ues.count, region.center(), self.ues.placement_radius, &region, self.ues.guard, placement_seed)?
            }
        };
        let ue_spacing = self.ues.spacing.unwrap_or(half_wave);
        let ues = ue_pos
            .iter()
            .map(|&p| {
                let array = ArrayGeometry {
                    position: p,
                    elements: self.ues.n_t,
                    spacing: ue_spacing,
                    orientation: facing(p, region.center()),
                };
                UeConfig::new(array, self.ues.power_budget, self.ues.min_region_power)
            })
            .collect::<Result<Vec<_>>>()?;

        let bs_spacing = self.bss.spacing.unwrap_or(half_wave);
        let bss = self
            .bss
            .positions
            .iter()
            .map(|&p| BsConfig::facing(p.into(), self.bss.n_r, bs_spacing, region.center()))
            .collect::<Result<Vec<_>>>()?;

        let scene = Scene::new(region, ues, bss, subcarriers)?;
        let target = self.load_target(base)?;
        let s_true = target.property_vector(scene.subcarriers.omega_c());
        Ok(Built { scene, target, s_true })
    }

    /// Material table evaluated at the carrier frequency.
    pub fn load_materials(&self, base: &Path) -> Result<MaterialDb> {
        match &self.target.materials {
            Some(p) => MaterialDb::load_at(&resolve(base, p), self.carriers.f_c),
            None => Ok(MaterialDb::builtin_at(self.carriers.f_c)),
        }
    }

    /// Ground-truth map resampled to the grid.
    pub fn load_target(&self, base: &Path) -> Result<TargetMap> {
        let db = self.load_materials(base)?;
        let n = self.region.n_side;
        let text = match self.target.phantom.as_str() {
            "air" => return Ok(TargetMap::air(n * n, db)),
            "thu" => THU.to_string(),
            "seu" => SEU.to_string(),
            path => std::fs::read_to_string(resolve(base, Path::new(path)))
                .map_err(|e| Error::Config(format!("phantom '{path}': {e}")))?,
        };
        let (n_from, map) = TargetMap::parse_grid(&text, db)?;
        if n_from == n {
            Ok(map)
        } else {
            map.resample(n_from, n)
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
