//! Raster files and the on-disk layout of quad products.

pub mod geotiff;
pub mod tgrd;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use urbanmap_core::{QuadId, QuadRaster};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    GeoTiff,
    Tgrd,
}

impl RasterFormat {
    /// `.tif`/`.tiff` are GeoTIFF, `.tgrd` is the flat grid format.
    pub fn from_path(p: &Path) -> Result<Self> {
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("tif" | "tiff") => Ok(RasterFormat::GeoTiff),
            Some("tgrd") => Ok(RasterFormat::Tgrd),
            _ => Err(Error::Config(format!(
                "cannot tell raster format of {} (use .tif or .tgrd)",
                p.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            RasterFormat::GeoTiff => "tif",
            RasterFormat::Tgrd => "tgrd",
        }
    }
}

pub fn encode(r: &QuadRaster, f: RasterFormat) -> Result<Vec<u8>> {
    match f {
        RasterFormat::GeoTiff => geotiff::encode(r),
        RasterFormat::Tgrd => Ok(tgrd::encode(r)),
    }
}

pub fn decode(bytes: &[u8], f: RasterFormat) -> Result<QuadRaster> {
    match f {
        RasterFormat::GeoTiff => geotiff::decode(bytes),
        RasterFormat::Tgrd => tgrd::decode(bytes),
    }
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<QuadRaster> {
    let path = path.as_ref();
    let f = RasterFormat::from_path(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, f).map_err(|e| e.at(path))
}

/// Writes through a temporary sibling and a rename, so readers and crash
/// recovery only ever see complete files.
pub fn write_raster(r: &QuadRaster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(r, RasterFormat::from_path(path)?)?;
    write_atomic(path, &bytes)
}

static TMP_SEQ: AtomicU64 = AtomicU64::new(0);

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(
        ".tmp-{}-{}",
        std::process::id(),
        TMP_SEQ.fetch_add(1, Ordering::Relaxed)
    ));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// A calendar quarter such as `2023q4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Quarter {
    year: u16,
    /// 1..=4
    q: u8,
}

impl Quarter {
    pub fn new(year: u16, q: u8) -> Result<Self> {
        if !(1..=4).contains(&q) {
            return Err(Error::Config(format!("quarter {q} not in 1..=4")));
        }
        Ok(Self { year, q })
    }

    pub fn year(self) -> u16 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.q
    }

    fn index(self) -> i64 {
        self.year as i64 * 4 + (self.q as i64 - 1)
    }

    /// The quarter `n` steps away (negative goes back in time).
    pub fn offset(self, n: i64) -> Option<Self> {
        let i = self.index() + n;
        let year = u16::try_from(i.div_euclid(4)).ok()?;
        Some(Self {
            year,
            q: i.rem_euclid(4) as u8 + 1,
        })
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}q{}", self.year, self.q)
    }
}

impl TryFrom<String> for Quarter {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Quarter> for String {
    fn from(q: Quarter) -> String {
        q.to_string()
    }
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad quarter token {s:?} (expected e.g. 2023q4)"));
        let (y, q) = s.split_once(['q', 'Q']).ok_or_else(bad)?;
        if y.len() != 4 || q.len() != 1 {
            return Err(bad());
        }
        Quarter::new(y.parse().map_err(|_| bad())?, q.parse().map_err(|_| bad())?)
    }
}

/// Where products live under a root directory.
///
/// Time series follow `{product}/{quarter}/{quad}.{ext}`; static layers
/// (water transitions, elevation) follow `{product}/{quad}.{ext}`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    pub format: RasterFormat,
}

pub const PREDICTIONS: &str = "pred";
pub const UDM: &str = "udm";
pub const GSW: &str = "gsw";
pub const DEM: &str = "dem";
pub const PRODUCT: &str = "product";
pub const LABELS: &str = "labels";

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            format: RasterFormat::GeoTiff,
        }
    }

    pub fn quarterly(&self, product: &str, quarter: Quarter, quad: QuadId) -> PathBuf {
        self.root
            .join(product)
            .join(quarter.to_string())
            .join(format!("{}.{}", quad.name(), self.format.extension()))
    }

    pub fn fixed(&self, product: &str, quad: QuadId) -> PathBuf {
        self.root
            .join(product)
            .join(format!("{}.{}", quad.name(), self.format.extension()))
    }
}
