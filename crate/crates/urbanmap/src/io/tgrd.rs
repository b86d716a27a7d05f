//! Flat binary grid format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "TGRD"
//!      4     4  width (u32)
//!      8     4  height (u32)
//!     12     4  bands (u32)
//!     16     8  pixel_size (f64)
//!     24     8  origin_x (f64), west edge
//!     32     8  origin_y (f64), north edge
//!     40     4  crs_code (u32, EPSG)
//!     44     4  nodata (f32)
//!     48     -  width*height*bands f32, band-sequential, row-major
//! ```

use urbanmap_core::{Crs, GridSpec, QuadRaster};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TGRD";
pub const HEADER_LEN: usize = 48;

const FORMAT: &str = "TGRD";

pub fn encode(r: &QuadRaster) -> Vec<u8> {
    let s = r.spec();
    let mut out = Vec::with_capacity(HEADER_LEN + r.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(s.width as u32).to_le_bytes());
    out.extend_from_slice(&(s.height as u32).to_le_bytes());
    out.extend_from_slice(&(r.bands() as u32).to_le_bytes());
    out.extend_from_slice(&s.pixel_size.to_le_bytes());
    out.extend_from_slice(&s.origin_x.to_le_bytes());
    out.extend_from_slice(&s.origin_y.to_le_bytes());
    out.extend_from_slice(&r.crs().epsg().to_le_bytes());
    out.extend_from_slice(&r.nodata().to_le_bytes());
    for v in r.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f64_at(b: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

pub fn decode(b: &[u8]) -> Result<QuadRaster> {
    if b.len() < HEADER_LEN {
        return Err(Error::format(
            FORMAT,
            b.len() as u64,
            format!("header needs {HEADER_LEN} bytes, file has {}", b.len()),
        ));
    }
    if &b[..4] != MAGIC {
        return Err(Error::format(FORMAT, 0, "bad magic"));
    }
    let (width, height, bands) = (u32_at(b, 4), u32_at(b, 8), u32_at(b, 12));
    for (off, name, v) in [(4, "width", width), (8, "height", height), (12, "bands", bands)] {
        if v == 0 {
            return Err(Error::format(FORMAT, off, format!("{name} is zero")));
        }
    }
    let pixel_size = f64_at(b, 16);
    let (origin_x, origin_y) = (f64_at(b, 24), f64_at(b, 32));
    let code = u32_at(b, 40);
    let nodata = f32::from_le_bytes(b[44..48].try_into().unwrap());

    let crs = Crs::from_epsg(code).ok_or(Error::UnsupportedCrs {
        path: Default::default(),
        code,
    })?;
    let spec = GridSpec::new(origin_x, origin_y, pixel_size, width as usize, height as usize)
        .map_err(|e| Error::format(FORMAT, 16, e.to_string()))?;

    let count = (width as u64) * (height as u64) * (bands as u64);
    let need = HEADER_LEN as u64 + count * 4;
    if (b.len() as u64) < need {
        // offset of the first sample that is not fully present
        let whole = (b.len() - HEADER_LEN) / 4 * 4;
        return Err(Error::format(
            FORMAT,
            (HEADER_LEN + whole) as u64,
            format!("truncated payload: expected {need} bytes, found {}", b.len()),
        ));
    }
    if (b.len() as u64) > need {
        return Err(Error::format(FORMAT, need, "trailing bytes after payload"));
    }
    let data = b[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(QuadRaster::new(spec, bands as usize, data, nodata, crs)?)
}
