//! Test sets named by short specs such as `cantor:1/3:10`.
//!
//! | spec | cloud |
//! |------|-------|
//! | `point` | `{0}` in `R^1` |
//! | `cantor:<ratio>:<level>` | left endpoints of the level-`level` middle-interval Cantor set |
//! | `interval:<level>` | the `2^level` dyadic points `j/2^level` |
//! | `segment:<level>` | the same points placed on the x-axis of `R^2` |
//! | `dust:<ratio>:<level>` | four-corner Cantor dust in `R^2` |
//! | `cantor-product:<ratio>:<level>` | Cantor × Cantor in `R^2` |

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Context};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use dimprof_core::pointset::{gen_cantor, gen_ifs, product, IfsSpec};
use dimprof_core::profiles::ScaleSchedule;
use dimprof_core::PointCloud;

#[derive(Clone, Debug, PartialEq)]
pub enum SetSpec {
    Point,
    Cantor { ratio: f64, level: u32 },
    Interval { level: u32 },
    Segment { level: u32 },
    Dust { ratio: f64, level: u32 },
    CantorProduct { ratio: f64, level: u32 },
}

fn parse_ratio(text: &str) -> anyhow::Result<f64> {
    let value = match text.split_once('/') {
        Some((num, den)) => num.trim().parse::<f64>()? / den.trim().parse::<f64>()?,
        None => text.trim().parse::<f64>()?,
    };
    if !(value > 0.0 && value < 1.0) {
        bail!("ratio {text} outside (0, 1)");
    }
    Ok(value)
}

fn parse_level(text: &str) -> anyhow::Result<u32> {
    text.trim().parse().with_context(|| format!("bad level '{text}'"))
}

impl FromStr for SetSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let spec = match parts.as_slice() {
            ["point"] => SetSpec::Point,
            ["cantor", r, l] => SetSpec::Cantor {
                ratio: parse_ratio(r)?,
                level: parse_level(l)?,
            },
            ["interval", l] => SetSpec::Interval { level: parse_level(l)? },
            ["segment", l] => SetSpec::Segment { level: parse_level(l)? },
            ["dust", r, l] => SetSpec::Dust {
                ratio: parse_ratio(r)?,
                level: parse_level(l)?,
            },
            ["cantor-product", r, l] => SetSpec::CantorProduct {
                ratio: parse_ratio(r)?,
                level: parse_level(l)?,
            },
            _ => bail!("unrecognised set spec '{s}'"),
        };
        Ok(spec)
    }
}

fn ratio_text(r: f64) -> String {
    let inv = 1.0 / r;
    if (inv - inv.round()).abs() < 1e-9 && inv.round() > 1.0 {
        format!("1/{}", inv.round())
    } else {
        format!("{r}")
    }
}

impl fmt::Display for SetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetSpec::Point => write!(f, "point"),
            SetSpec::Cantor { ratio, level } => write!(f, "cantor:{}:{level}", ratio_text(*ratio)),
            SetSpec::Interval { level } => write!(f, "interval:{level}"),
            SetSpec::Segment { level } => write!(f, "segment:{level}"),
            SetSpec::Dust { ratio, level } => write!(f, "dust:{}:{level}", ratio_text(*ratio)),
            SetSpec::CantorProduct { ratio, level } => write!(f, "cantor-product:{}:{level}", ratio_text(*ratio)),
        }
    }
}

impl Serialize for SetSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SetSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl SetSpec {
    pub fn build(&self) -> anyhow::Result<PointCloud> {
        let label = self.to_string();
        let cloud = match *self {
            SetSpec::Point => PointCloud::new(1, vec![0.0], 1e-6, "point")?,
            SetSpec::Cantor { ratio, level } => gen_cantor(ratio, level)?,
            SetSpec::Interval { level } => gen_cantor(0.5, level)?,
            SetSpec::Segment { level } => {
                let line = gen_cantor(0.5, level)?;
                let coords = line.coords().iter().flat_map(|&x| [x, 0.0]).collect();
                PointCloud::new(2, coords, line.resolution(), "segment")?
            }
            SetSpec::Dust { ratio, level } => gen_ifs(&IfsSpec::corner_dust(ratio)?, level)?,
            SetSpec::CantorProduct { ratio, level } => {
                let c = gen_cantor(ratio, level)?;
                product(&c, &c)?
            }
        };
        Ok(cloud.with_label(label))
    }

    /// Base of the geometric scale schedule matching the construction.
    pub fn natural_base(&self) -> f64 {
        match *self {
            SetSpec::Cantor { ratio, .. } | SetSpec::Dust { ratio, .. } | SetSpec::CantorProduct { ratio, .. } => {
                1.0 / ratio
            }
            SetSpec::Point | SetSpec::Interval { .. } | SetSpec::Segment { .. } => 2.0,
        }
    }

    /// Box dimension of the limit set.
    pub fn limit_dimension(&self) -> f64 {
        match *self {
            SetSpec::Point => 0.0,
            SetSpec::Cantor { ratio, .. } => 2f64.ln() / (1.0 / ratio).ln(),
            SetSpec::Interval { .. } | SetSpec::Segment { .. } => 1.0,
            SetSpec::Dust { ratio, .. } | SetSpec::CantorProduct { ratio, .. } => {
                (4f64.ln() / (1.0 / ratio).ln()).min(2.0)
            }
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            SetSpec::Point | SetSpec::Cantor { .. } | SetSpec::Interval { .. } => 1,
            _ => 2,
        }
    }
}

/// Scales `b^{-j}` from the first power at or below `coarsest` down to
/// `finest_offset` powers above the cloud resolution.
pub fn schedule_for(cloud: &PointCloud, base: f64, coarsest: f64, finest_offset: u32) -> anyhow::Result<ScaleSchedule> {
    let lb = base.ln();
    let first = ((1.0 / coarsest).ln() / lb - 1e-9).ceil() as i32;
    let last = ((1.0 / cloud.resolution()).ln() / lb + 1e-9).floor() as i32 - finest_offset as i32;
    ScaleSchedule::geometric(base, first, last)
        .with_context(|| format!("schedule for {} (base {base}, powers {first}..={last})", cloud.label()))
}
